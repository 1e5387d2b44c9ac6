//! Scatter-plot rasterization of 2-D samples to binary PGM (P5).

use mmld::tensor::Tensor;

/// Render the first two dims of each row as white dots on black, clamped to
/// `[-extent, extent]` in both axes.
pub fn scatter_pgm(samples: &Tensor, size: usize, extent: f64) -> Vec<u8> {
    let mut pixels = vec![0u8; size * size];
    for i in 0..samples.batch_rows() {
        let row = samples.row(i);
        let (x, y) = (row[0], row[1]);
        let px = ((x + extent) / (2.0 * extent) * (size as f64 - 1.0)).round();
        let py = ((extent - y) / (2.0 * extent) * (size as f64 - 1.0)).round();
        if px < 0.0 || py < 0.0 || px >= size as f64 || py >= size as f64 {
            continue;
        }
        let (px, py) = (px as usize, py as usize);
        pixels[py * size + px] = 255;
        // 3x3 dot so points stay visible at small sizes
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (nx, ny) = (px as i64 + dx, py as i64 + dy);
                if nx >= 0 && ny >= 0 && (nx as usize) < size && (ny as usize) < size {
                    let p = &mut pixels[ny as usize * size + nx as usize];
                    *p = p.saturating_add(120);
                }
            }
        }
    }
    let mut out = format!("P5\n{size} {size}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_size() {
        let t = Tensor::from_rows(&[vec![0.0, 0.0], vec![10.0, 10.0]]).unwrap();
        let pgm = scatter_pgm(&t, 32, 4.0);
        assert!(pgm.starts_with(b"P5\n32 32\n255\n"));
        assert_eq!(pgm.len(), 13 + 32 * 32);
        // center pixel is lit, out-of-range point dropped
        let body = &pgm[13..];
        assert!(body.iter().any(|&p| p > 0));
    }
}
