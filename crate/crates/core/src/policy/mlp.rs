//! Fully connected softmax classifier over the four actions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::gridworld::Action;

/// How raw observation vectors are turned into network inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum InputTransform {
    Identity,
    /// Mean-pools a `side × side` image by `factor × factor` blocks; any
    /// values after the image pass through unchanged.
    Pool { side: usize, factor: usize },
}

impl InputTransform {
    pub fn output_dim(self, input_dim: usize) -> usize {
        match self {
            InputTransform::Identity => input_dim,
            InputTransform::Pool { side, factor } => {
                let out = side / factor;
                out * out + input_dim.saturating_sub(side * side)
            }
        }
    }

    pub fn apply(self, x: &[f64]) -> Vec<f64> {
        match self {
            InputTransform::Identity => x.to_vec(),
            InputTransform::Pool { side, factor } => {
                let out_side = side / factor;
                let norm = (factor * factor) as f64;
                let mut out = Vec::with_capacity(self.output_dim(x.len()));
                for br in 0..out_side {
                    for bc in 0..out_side {
                        let mut acc = 0.0;
                        for r in br * factor..(br + 1) * factor {
                            acc += x[r * side + bc * factor..r * side + (bc + 1) * factor].iter().sum::<f64>();
                        }
                        out.push(acc / norm);
                    }
                }
                out.extend_from_slice(&x[side * side..]);
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden: Vec<usize>,
    /// Dropout rate on hidden activations.
    pub dropout: f64,
    pub transform: InputTransform,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture { hidden: vec![64, 64], dropout: 0.0, transform: InputTransform::Identity }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out × n_in`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn init<R: Rng + ?Sized>(n_in: usize, n_out: usize, relu: bool, rng: &mut R) -> Layer {
        let limit = if relu { (6.0 / n_in as f64).sqrt() } else { (6.0 / (n_in + n_out) as f64).sqrt() };
        let w = (0..n_in * n_out).map(|_| rng.gen_range(-limit..limit)).collect();
        Layer { n_in, n_out, w, b: vec![0.0; n_out] }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.n_out {
            let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
            out.push(self.b[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>());
        }
    }

    pub fn num_params(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Network weights plus the input standardisation fitted on its training
/// data.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub(crate) arch: Architecture,
    pub(crate) input_dim: usize,
    pub(crate) scale_mean: Vec<f64>,
    pub(crate) scale_std: Vec<f64>,
    pub(crate) layers: Vec<Layer>,
}

/// Per-sample activations kept for backpropagation.
struct Trace {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each hidden layer (for the ReLU derivative).
    pre: Vec<Vec<f64>>,
    /// Dropout multipliers of each hidden layer (empty when inactive).
    masks: Vec<Vec<f64>>,
    probs: [f64; 4],
}

pub(crate) fn softmax(logits: &[f64]) -> [f64; 4] {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p = [0.0; 4];
    let mut sum = 0.0;
    for (pi, l) in p.iter_mut().zip(logits) {
        *pi = (l - max).exp();
        sum += *pi;
    }
    p.iter_mut().for_each(|x| *x /= sum);
    p
}

impl Network {
    pub fn new<R: Rng + ?Sized>(arch: Architecture, input_dim: usize, rng: &mut R) -> Network {
        let features = arch.transform.output_dim(input_dim);
        let mut layers = Vec::new();
        let mut n_in = features;
        for &h in &arch.hidden {
            layers.push(Layer::init(n_in, h, true, rng));
            n_in = h;
        }
        layers.push(Layer::init(n_in, 4, false, rng));
        Network { arch, input_dim, scale_mean: vec![0.0; features], scale_std: vec![1.0; features], layers }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Rebuilds a network from its serialised parts; `None` if the lengths
    /// do not match the architecture.
    pub(crate) fn from_parts(
        arch: Architecture,
        input_dim: usize,
        scale_mean: Vec<f64>,
        scale_std: Vec<f64>,
        params: &[f64],
    ) -> Option<Network> {
        let features = arch.transform.output_dim(input_dim);
        if scale_mean.len() != features || scale_std.len() != features {
            return None;
        }
        let mut layers = Vec::new();
        let mut n_in = features;
        for &n_out in arch.hidden.iter().chain(&[4]) {
            layers.push(Layer { n_in, n_out, w: vec![0.0; n_in * n_out], b: vec![0.0; n_out] });
            n_in = n_out;
        }
        let mut net = Network { arch, input_dim, scale_mean, scale_std, layers };
        if params.len() != net.num_params() {
            return None;
        }
        net.set_params(params);
        Some(net)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    /// Fits the per-feature standardisation to `inputs`.
    pub fn fit_scaler<'a>(&mut self, inputs: impl Iterator<Item = &'a [f64]>) {
        let feats: Vec<Vec<f64>> = inputs.map(|x| self.arch.transform.apply(x)).collect();
        let d = self.scale_mean.len();
        if feats.is_empty() {
            return;
        }
        let n = feats.len() as f64;
        let mut mean = vec![0.0; d];
        for f in &feats {
            for (m, x) in mean.iter_mut().zip(f) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; d];
        for f in &feats {
            for ((v, x), m) in var.iter_mut().zip(f).zip(&mean) {
                *v += (x - m).powi(2) / n;
            }
        }
        self.scale_mean = mean;
        self.scale_std = var.into_iter().map(|v| if v.sqrt() > 1e-8 { v.sqrt() } else { 1.0 }).collect();
    }

    fn features(&self, x: &[f64]) -> Vec<f64> {
        let mut f = self.arch.transform.apply(x);
        for ((v, m), s) in f.iter_mut().zip(&self.scale_mean).zip(&self.scale_std) {
            *v = (*v - m) / s;
        }
        f
    }

    fn run<R: Rng + ?Sized>(&self, x: &[f64], mut dropout_rng: Option<&mut R>) -> Trace {
        let p = self.arch.dropout;
        let mut cur = self.features(x);
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let mut masks = Vec::with_capacity(self.layers.len() - 1);
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.forward(&cur, &mut out);
            inputs.push(std::mem::take(&mut cur));
            if i + 1 == self.layers.len() {
                break;
            }
            pre.push(out.clone());
            let mut act: Vec<f64> = out.iter().map(|v| v.max(0.0)).collect();
            let mask = match dropout_rng.as_deref_mut() {
                Some(rng) if p > 0.0 => {
                    let keep = 1.0 - p;
                    let m: Vec<f64> =
                        (0..act.len()).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
                    act.iter_mut().zip(&m).for_each(|(a, k)| *a *= k);
                    m
                }
                _ => Vec::new(),
            };
            masks.push(mask);
            cur = act;
        }
        Trace { inputs, pre, masks, probs: softmax(&out) }
    }

    /// Deterministic forward pass (dropout off).
    pub fn predict(&self, x: &[f64]) -> [f64; 4] {
        self.run::<rand::rngs::ThreadRng>(x, None).probs
    }

    /// Forward pass with dropout active, drawing masks from `rng`.
    pub fn predict_stochastic<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> [f64; 4] {
        self.run(x, Some(rng)).probs
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    /// All weights and biases, layer by layer (`w` then `b`).
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
    }

    /// Mean negative log-likelihood over `batch` and its gradient with
    /// respect to [`Network::params`]. Dropout masks are drawn from `rng`
    /// when given and the architecture has a non-zero rate.
    pub fn nll_and_grad<R: Rng + ?Sized>(
        &self,
        batch: &[(&[f64], Action)],
        mut rng: Option<&mut R>,
    ) -> (f64, Vec<f64>) {
        let mut grads: Vec<(Vec<f64>, Vec<f64>)> =
            self.layers.iter().map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()])).collect();
        let mut loss = 0.0;
        let scale = 1.0 / batch.len().max(1) as f64;
        for (x, a) in batch {
            let trace = self.run(x, rng.as_deref_mut());
            let target = a.code() as usize;
            loss -= trace.probs[target].max(1e-300).ln() * scale;
            let mut delta: Vec<f64> = trace.probs.iter().map(|p| p * scale).collect();
            delta[target] -= scale;
            for li in (0..self.layers.len()).rev() {
                let layer = &self.layers[li];
                let input = &trace.inputs[li];
                let (gw, gb) = &mut grads[li];
                for o in 0..layer.n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    let row = &mut gw[o * layer.n_in..(o + 1) * layer.n_in];
                    row.iter_mut().zip(input).for_each(|(g, v)| *g += d * v);
                }
                if li == 0 {
                    break;
                }
                let mut back = vec![0.0; layer.n_in];
                for o in 0..layer.n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &layer.w[o * layer.n_in..(o + 1) * layer.n_in];
                    back.iter_mut().zip(row).for_each(|(b, w)| *b += d * w);
                }
                let pre = &trace.pre[li - 1];
                let mask = &trace.masks[li - 1];
                for (j, b) in back.iter_mut().enumerate() {
                    if pre[j] <= 0.0 {
                        *b = 0.0;
                    } else if !mask.is_empty() {
                        *b *= mask[j];
                    }
                }
                delta = back;
            }
        }
        let mut flat = Vec::with_capacity(self.num_params());
        for (gw, gb) in grads {
            flat.extend(gw);
            flat.extend(gb);
        }
        (loss, flat)
    }

    /// One plain SGD step.
    pub fn apply_gradient(&mut self, grad: &[f64], lr: f64) {
        let mut off = 0;
        for l in &mut self.layers {
            for w in l.w.iter_mut().chain(l.b.iter_mut()) {
                *w -= lr * grad[off];
                off += 1;
            }
        }
    }

    pub fn mean_nll(&self, samples: &[(&[f64], Action)]) -> f64 {
        let n = samples.len().max(1) as f64;
        samples.iter().map(|(x, a)| -self.predict(x)[a.code() as usize].max(1e-300).ln()).sum::<f64>() / n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pooling_averages_blocks() {
        let t = InputTransform::Pool { side: 4, factor: 2 };
        let x: Vec<f64> = (0..16).map(f64::from).chain([99.0]).collect();
        assert_eq!(t.output_dim(17), 5);
        assert_eq!(t.apply(&x), vec![2.5, 4.5, 10.5, 12.5, 99.0]);
    }

    #[test]
    fn outputs_are_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Network::new(Architecture::default(), 7, &mut rng);
        for _ in 0..50 {
            let x: Vec<f64> = (0..7).map(|_| rng.gen_range(-30.0..30.0)).collect();
            let p = net.predict(&x);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Network::new(Architecture::default(), 5, &mut rng);
        let p = net.params();
        assert_eq!(p.len(), 5 * 64 + 64 + 64 * 64 + 64 + 64 * 4 + 4);
        let shifted: Vec<f64> = p.iter().map(|x| x + 1.0).collect();
        net.set_params(&shifted);
        assert_eq!(net.params(), shifted);
    }
}
