//! Property tests over the latent layout algebra and the persistence layer.

use mmld::checkpoint::Container;
use mmld::latent::{
    build_mask, build_multitime, compose, split, ModalityLayout, ModalitySpec, SubsetPartition,
};
use mmld::tensor::Tensor;
use proptest::prelude::*;

fn layout_strategy() -> impl Strategy<Value = ModalityLayout> {
    prop::collection::vec(1usize..=16, 1..=6).prop_map(|dims| {
        ModalityLayout::new(
            dims.iter()
                .enumerate()
                .map(|(i, &d)| ModalitySpec::new(format!("m{i}"), 2, d).unwrap())
                .collect(),
        )
        .unwrap()
    })
}

fn layout_and_values() -> impl Strategy<Value = (ModalityLayout, Vec<f64>)> {
    layout_strategy().prop_flat_map(|lay| {
        let n = lay.total_dim();
        (Just(lay), prop::collection::vec(-1e6f64..1e6, n..=n))
    })
}

proptest! {
    #[test]
    fn split_then_compose_is_identity((lay, joint) in layout_and_values()) {
        let blocks = split(&lay, &joint).unwrap();
        let with_idx: Vec<(usize, &[f64])> =
            blocks.iter().enumerate().map(|(i, b)| (i, b.as_slice())).collect();
        let back = compose(&lay, &with_idx, &[]).unwrap();
        prop_assert_eq!(back, joint);
    }

    #[test]
    fn compose_then_split_is_identity((lay, joint) in layout_and_values()) {
        // scatter blocks across the generated/conditioning arguments
        let blocks = split(&lay, &joint).unwrap();
        let (gen, cond): (Vec<_>, Vec<_>) = blocks
            .iter()
            .enumerate()
            .map(|(i, b)| (i, b.as_slice()))
            .partition(|(i, _)| i % 2 == 0);
        let joint2 = compose(&lay, &gen, &cond).unwrap();
        let blocks2 = split(&lay, &joint2).unwrap();
        prop_assert_eq!(blocks2, blocks);
    }

    #[test]
    fn mask_and_complement_cover_every_coordinate(
        (lay, _) in layout_and_values(),
        picks in prop::collection::vec(any::<bool>(), 6)
    ) {
        let m = lay.n_modalities();
        let cond: Vec<usize> = (0..m).filter(|&i| picks[i]).collect();
        // both sets must stay nonempty to form the two partitions
        prop_assume!(!cond.is_empty() && cond.len() < m);
        let gen: Vec<usize> = (0..m).filter(|&i| !picks[i]).collect();
        let p = SubsetPartition::from_conditioning(m, &cond).unwrap();
        let q = SubsetPartition::from_conditioning(m, &gen).unwrap();
        let a = build_mask(&lay, &p).unwrap();
        let b = build_mask(&lay, &q).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert_eq!(x + y, 1.0);
        }
    }

    #[test]
    fn multitime_zero_exactly_on_frozen_blocks(
        (lay, _) in layout_and_values(),
        picks in prop::collection::vec(any::<bool>(), 6),
        t in 1e-6f64..1.0
    ) {
        let m = lay.n_modalities();
        let cond: Vec<usize> = (0..m).filter(|&i| picks[i]).collect();
        prop_assume!(cond.len() < m);
        let p = SubsetPartition::from_conditioning(m, &cond).unwrap();
        let mask = build_mask(&lay, &p).unwrap();
        let tau = build_multitime(&p, t).unwrap();
        for i in 0..m {
            let block_frozen = mask.values()[lay.block_range(i)].iter().all(|&v| v == 0.0);
            prop_assert_eq!(tau.times()[i] == 0.0, block_frozen);
        }
    }

    #[test]
    fn container_round_trip_any_tensors(
        tensors in prop::collection::vec(
            (prop::collection::vec(0usize..5, 1..3), prop::collection::vec(-1e9f64..1e9, 0..40)),
            0..6
        )
    ) {
        let mut c = Container::new();
        for (i, (shape, data)) in tensors.into_iter().enumerate() {
            let n: usize = shape.iter().product();
            let mut d = data;
            d.resize(n, 0.0);
            c.insert(format!("t{i}"), Tensor::new(shape, d).unwrap()).unwrap();
        }
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let c2 = Container::read_from(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(&c, &c2);
        let mut buf2 = Vec::new();
        c2.write_to(&mut buf2).unwrap();
        prop_assert_eq!(buf, buf2);
    }
}
