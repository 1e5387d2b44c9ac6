//! Dense MLPs with optional skip connections and exact reverse-mode gradients.
//!
//! The network is a plain sequence of dense layers. The activation is applied
//! after every layer except the last. A skip connection is a half-open layer
//! range `(start, end)`: the input of layer `start` is added to the output of
//! layer `end - 1`, which is how residual blocks are expressed.
//!
//! Inputs are rank-1 `[in]` or batched rank-2 `[n, in]` tensors; gradients are
//! exact reverse-mode and are validated against central finite differences in
//! the test suite.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;

/// Pointwise activation used on all layers except the last.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// x * sigmoid(x). Smooth, so finite-difference checks stay clean.
    SiLU,
    /// No-op; turns the network into a product of affine maps.
    Identity,
    /// x^2. Lets tests realize exact low-degree polynomials as networks.
    Square,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::SiLU => x * sigmoid(x),
            Activation::Identity => x,
            Activation::Square => x * x,
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::SiLU => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Identity => 1.0,
            Activation::Square => 2.0 * x,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One dense layer: row-major weight `[out, in]` plus bias `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Layer {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.rank() != 2 {
            return Err(Error::shape("Layer::new", "rank-2 weight", weight.rank()));
        }
        if bias.rank() != 1 || bias.len() != weight.shape()[0] {
            return Err(Error::shape(
                "Layer::new",
                format!("bias [{}]", weight.shape()[0]),
                format!("{:?}", bias.shape()),
            ));
        }
        Ok(Layer { weight, bias })
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Parameter bundle of a dense MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
    activation: Activation,
    /// Half-open layer ranges wrapped by a residual skip, sorted, disjoint.
    skips: Vec<(usize, usize)>,
}

/// Per-layer gradients, shapes mirroring [`MlpParams`].
#[derive(Debug, Clone)]
pub struct MlpGrads {
    /// `(d_weight, d_bias)` per layer, same order as the params.
    pub layers: Vec<(Tensor, Tensor)>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        let layers = params
            .layers
            .iter()
            .map(|l| {
                (
                    Tensor::zeros(l.weight.shape().to_vec()),
                    Tensor::zeros(l.bias.shape().to_vec()),
                )
            })
            .collect();
        MlpGrads { layers }
    }

    /// Flat views in parameter order (w0, b0, w1, b1, ...).
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|(w, b)| [w, b]).collect()
    }

    /// Scale all gradients in place.
    pub fn scale(&mut self, c: f64) {
        for (w, b) in &mut self.layers {
            for v in w.data_mut() {
                *v *= c;
            }
            for v in b.data_mut() {
                *v *= c;
            }
        }
    }

    /// Accumulate `other` into `self`.
    pub fn add_assign(&mut self, other: &MlpGrads) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            for (v, o) in w.data_mut().iter_mut().zip(ow.data()) {
                *v += o;
            }
            for (v, o) in b.data_mut().iter_mut().zip(ob.data()) {
                *v += o;
            }
        }
    }

    /// Euclidean norm over every gradient entry.
    pub fn norm(&self) -> f64 {
        let mut s = 0.0;
        for (w, b) in &self.layers {
            s += w.iter().map(|v| v * v).sum::<f64>();
            s += b.iter().map(|v| v * v).sum::<f64>();
        }
        s.sqrt()
    }
}

impl MlpParams {
    /// Validate and assemble a network.
    pub fn new(
        layers: Vec<Layer>,
        activation: Activation,
        skips: Vec<(usize, usize)>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("MLP needs at least one layer".into()));
        }
        for i in 1..layers.len() {
            if layers[i].in_dim() != layers[i - 1].out_dim() {
                return Err(Error::shape(
                    "MlpParams::new",
                    format!("layer {i} in-dim {}", layers[i - 1].out_dim()),
                    layers[i].in_dim(),
                ));
            }
        }
        let mut sorted = skips.clone();
        sorted.sort_unstable();
        let mut prev_end = 0usize;
        for &(s, e) in &sorted {
            if s >= e || e > layers.len() {
                return Err(Error::Config(format!("bad skip range ({s}, {e})")));
            }
            if s < prev_end {
                return Err(Error::Config(format!("overlapping skip range ({s}, {e})")));
            }
            let skip_in = layers[s].in_dim();
            let skip_out = layers[e - 1].out_dim();
            if skip_in != skip_out {
                return Err(Error::shape(
                    "MlpParams::new (skip)",
                    format!("skip in-dim {skip_in}"),
                    skip_out,
                ));
            }
            prev_end = e;
        }
        for (i, l) in layers.iter().enumerate() {
            l.weight.ensure_finite("MLP weight")?;
            l.bias.ensure_finite("MLP bias")?;
            let _ = i;
        }
        Ok(MlpParams {
            layers,
            activation,
            skips: sorted,
        })
    }

    /// Xavier-uniform init (±sqrt(6 / (fan_in + fan_out))), zero biases.
    pub fn xavier<R: Rng>(
        dims: &[usize],
        activation: Activation,
        skips: Vec<(usize, usize)>,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config("need at least in/out dims".into()));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            layers.push(Layer {
                weight: Tensor::new(vec![fan_out, fan_in], data)?,
                bias: Tensor::zeros(vec![fan_out]),
            });
        }
        MlpParams::new(layers, activation, skips)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn skips(&self) -> &[(usize, usize)] {
        &self.skips
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Flat views in parameter order (w0, b0, w1, b1, ...).
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Forward pass; `input` is `[in]` or `[n, in]`.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward_trace(input)?.output)
    }

    /// Forward pass returning the input of the last layer as well, which is
    /// the embedding eval metrics use.
    pub fn forward_with_penultimate(&self, input: &Tensor) -> Result<(Tensor, Tensor)> {
        let trace = self.forward_trace(input)?;
        let pen = trace.inputs.last().unwrap().clone();
        Ok((trace.output, pen))
    }

    fn check_input(&self, input: &Tensor) -> Result<(usize, usize)> {
        let (n, d) = match input.rank() {
            1 => (1, input.shape()[0]),
            2 => (input.shape()[0], input.shape()[1]),
            r => return Err(Error::shape("mlp forward", "rank 1 or 2 input", r)),
        };
        if d != self.in_dim() {
            return Err(Error::shape("mlp forward", self.in_dim(), d));
        }
        Ok((n, d))
    }

    fn forward_trace(&self, input: &Tensor) -> Result<Trace> {
        let (n, _) = self.check_input(input)?;
        let last = self.layers.len() - 1;
        // inputs[i] is the input of layer i (after any skip addition landing there).
        let mut inputs: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        let mut pre_acts: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        let mut x = if input.rank() == 1 {
            Tensor::new(vec![1, input.len()], input.data().to_vec())?
        } else {
            input.clone()
        };
        for (i, layer) in self.layers.iter().enumerate() {
            inputs.push(x.clone());
            let pre = affine_forward(layer, &x, n);
            let mut out = if i == last {
                pre.clone()
            } else {
                let mut t = pre.clone();
                for v in t.data_mut() {
                    *v = self.activation.apply(*v);
                }
                t
            };
            if let Some(&(s, _)) = self.skips.iter().find(|&&(_, e)| e == i + 1) {
                let src = &inputs[s];
                for (o, a) in out.data_mut().iter_mut().zip(src.data()) {
                    *o += a;
                }
            }
            pre_acts.push(pre);
            x = out;
        }
        let output = if input.rank() == 1 {
            Tensor::from_vec(x.into_data())
        } else {
            x
        };
        Ok(Trace {
            inputs,
            pre_acts,
            output,
        })
    }

    /// Exact reverse-mode gradients of `sum(output * upstream)` with respect
    /// to every weight and bias, plus the gradient with respect to the input.
    ///
    /// `upstream` must match the output shape (or `[n, out]` for batched
    /// input); for batched runs the parameter gradients are summed over the
    /// batch.
    pub fn backward(&self, input: &Tensor, upstream: &Tensor) -> Result<(MlpGrads, Tensor)> {
        let (n, _) = self.check_input(input)?;
        let out_dim = self.out_dim();
        if upstream.row_dim() != out_dim || upstream.batch_rows() != n {
            return Err(Error::shape(
                "mlp backward",
                format!("[{n}, {out_dim}] upstream"),
                format!("{:?}", upstream.shape()),
            ));
        }
        let trace = self.forward_trace(input)?;
        let last = self.layers.len() - 1;
        let mut grads = MlpGrads::zeros_like(self);
        // Gradient w.r.t. the data flowing out of layer i, filled as we walk back.
        let mut g = Tensor::new(vec![n, out_dim], upstream.data().to_vec())?;
        // Deferred skip gradients keyed by the layer whose *input* they feed.
        let mut pending: Vec<Option<Tensor>> = vec![None; self.layers.len()];
        for i in (0..self.layers.len()).rev() {
            if let Some(&(s, _)) = self.skips.iter().find(|&&(_, e)| e == i + 1) {
                pending[s] = Some(g.clone());
            }
            let layer = &self.layers[i];
            let gpre = if i == last {
                g
            } else {
                let mut t = g;
                for (v, p) in t.data_mut().iter_mut().zip(trace.pre_acts[i].data()) {
                    *v *= self.activation.derivative(*p);
                }
                t
            };
            let (dw, db) = &mut grads.layers[i];
            accumulate_affine_grads(layer, &trace.inputs[i], &gpre, n, dw, db);
            g = affine_backward_input(layer, &gpre, n);
            if let Some(extra) = pending[i].take() {
                for (v, e) in g.data_mut().iter_mut().zip(extra.data()) {
                    *v += e;
                }
            }
        }
        let input_grad = if input.rank() == 1 {
            Tensor::from_vec(g.into_data())
        } else {
            g
        };
        Ok((grads, input_grad))
    }
}

struct Trace {
    inputs: Vec<Tensor>,
    pre_acts: Vec<Tensor>,
    output: Tensor,
}

fn affine_forward(layer: &Layer, x: &Tensor, n: usize) -> Tensor {
    let (out, inp) = (layer.out_dim(), layer.in_dim());
    let w = layer.weight.data();
    let b = layer.bias.data();
    let mut y = vec![0.0; n * out];
    for r in 0..n {
        let xr = x.row(r);
        let yr = &mut y[r * out..(r + 1) * out];
        for o in 0..out {
            let wr = &w[o * inp..(o + 1) * inp];
            let mut acc = b[o];
            for (wv, xv) in wr.iter().zip(xr) {
                acc += wv * xv;
            }
            yr[o] = acc;
        }
    }
    Tensor::new(vec![n, out], y).unwrap()
}

fn accumulate_affine_grads(
    layer: &Layer,
    x: &Tensor,
    gpre: &Tensor,
    n: usize,
    dw: &mut Tensor,
    db: &mut Tensor,
) {
    let (out, inp) = (layer.out_dim(), layer.in_dim());
    let dwd = dw.data_mut();
    let dbd = db.data_mut();
    for r in 0..n {
        let xr = x.row(r);
        let gr = gpre.row(r);
        for o in 0..out {
            let g = gr[o];
            dbd[o] += g;
            let row = &mut dwd[o * inp..(o + 1) * inp];
            for (d, xv) in row.iter_mut().zip(xr) {
                *d += g * xv;
            }
        }
    }
}

fn affine_backward_input(layer: &Layer, gpre: &Tensor, n: usize) -> Tensor {
    let (out, inp) = (layer.out_dim(), layer.in_dim());
    let w = layer.weight.data();
    let mut gx = vec![0.0; n * inp];
    for r in 0..n {
        let gr = gpre.row(r);
        let gxr = &mut gx[r * inp..(r + 1) * inp];
        for o in 0..out {
            let g = gr[o];
            let wr = &w[o * inp..(o + 1) * inp];
            for (d, wv) in gxr.iter_mut().zip(wr) {
                *d += g * wv;
            }
        }
    }
    Tensor::new(vec![n, inp], gx).unwrap()
}

/// Max relative error between analytic gradients and central finite
/// differences of `f(params) = sum(forward(params, input))`, i.e. an all-ones
/// upstream. Relative error uses `|analytic| + 1e-12` in the denominator.
pub fn finite_diff_check(params: &MlpParams, input: &Tensor, h: f64) -> Result<f64> {
    let ones = match input.rank() {
        1 => Tensor::from_vec(vec![1.0; params.out_dim()]),
        _ => Tensor::new(
            vec![input.batch_rows(), params.out_dim()],
            vec![1.0; input.batch_rows() * params.out_dim()],
        )?,
    };
    finite_diff_check_with(params, input, &ones, h)
}

/// Same as [`finite_diff_check`] with an explicit upstream vector.
pub fn finite_diff_check_with(
    params: &MlpParams,
    input: &Tensor,
    upstream: &Tensor,
    h: f64,
) -> Result<f64> {
    if h <= 0.0 {
        return Err(Error::Config(
            "finite-difference step must be positive".into(),
        ));
    }
    let (grads, _) = params.backward(input, upstream)?;
    let scalar = |p: &MlpParams| -> Result<f64> {
        let out = p.forward(input)?;
        Ok(out
            .data()
            .iter()
            .zip(upstream.data())
            .map(|(o, u)| o * u)
            .sum())
    };
    fn slot(p: &mut MlpParams, li: usize, wb: usize, k: usize) -> &mut f64 {
        let l = &mut p.layers[li];
        if wb == 0 {
            &mut l.weight.data_mut()[k]
        } else {
            &mut l.bias.data_mut()[k]
        }
    }
    let mut max_rel = 0.0f64;
    let mut scratch = params.clone();
    for li in 0..params.layers().len() {
        for wb in 0..2 {
            let n = if wb == 0 {
                params.layers()[li].weight.len()
            } else {
                params.layers()[li].bias.len()
            };
            for k in 0..n {
                let orig = *slot(&mut scratch, li, wb, k);
                *slot(&mut scratch, li, wb, k) = orig + h;
                let fp = scalar(&scratch)?;
                *slot(&mut scratch, li, wb, k) = orig - h;
                let fm = scalar(&scratch)?;
                *slot(&mut scratch, li, wb, k) = orig;
                let fd = (fp - fm) / (2.0 * h);
                let analytic = if wb == 0 {
                    grads.layers[li].0.data()[k]
                } else {
                    grads.layers[li].1.data()[k]
                };
                let rel = (analytic - fd).abs() / (analytic.abs() + 1e-12);
                max_rel = max_rel.max(rel);
            }
        }
    }
    Ok(max_rel)
}
