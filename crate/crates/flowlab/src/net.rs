//! A small feed-forward vector-field/score network with analytic forward and
//! reverse passes.
//!
//! The network maps `[x || time-features(t) || embed(y)]` through a stack of
//! hidden layers to an output in `R^d`. Time enters through sinusoidal
//! features `(sin(2^j pi t), cos(2^j pi t))`; class conditioning enters
//! through a learned per-class embedding table with one extra row reserved
//! for the null label (no conditioning).
//!
//! Gradients are exact reverse-mode derivatives written by hand, checked
//! against central finite differences by [`grad_check`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{FlowError, Result};
use crate::field::VectorField;
use crate::rng::{seeded, standard_normal};

/// Hidden-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `x * sigmoid(x)`: smooth everywhere, so finite-difference gradient
    /// checks are clean.
    Silu,
    Tanh,
}

impl Activation {
    fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Silu => x * sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    fn derivative(&self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Architecture of the network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpSpec {
    /// Data dimension d (input tail and output width).
    pub dim: usize,
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
    /// Number of sinusoidal time features (even).
    pub n_time_features: usize,
    /// Number of classes; 0 builds an unconditional net without an
    /// embedding table.
    pub n_classes: usize,
    /// Width of each label embedding row.
    pub embed_dim: usize,
    pub activation: Activation,
}

impl Default for MlpSpec {
    fn default() -> Self {
        Self {
            dim: 2,
            hidden: vec![64, 64, 64],
            n_time_features: 8,
            n_classes: 0,
            embed_dim: 8,
            activation: Activation::Silu,
        }
    }
}

impl MlpSpec {
    pub fn new(dim: usize) -> Self {
        Self { dim, ..Self::default() }
    }

    pub fn with_classes(dim: usize, n_classes: usize) -> Self {
        Self { dim, n_classes, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(FlowError::Domain("dim must be positive".into()));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(FlowError::Domain("hidden widths must be positive".into()));
        }
        if self.n_time_features % 2 != 0 {
            return Err(FlowError::Domain(format!(
                "n_time_features must be even, got {}",
                self.n_time_features
            )));
        }
        if self.n_classes > 0 && self.embed_dim == 0 {
            return Err(FlowError::Domain("embed_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn conditional(&self) -> bool {
        self.n_classes > 0
    }

    /// Width of the concatenated input `[x || time features || embedding]`.
    pub fn input_width(&self) -> usize {
        self.dim
            + self.n_time_features
            + if self.conditional() { self.embed_dim } else { 0 }
    }

    /// `(rows, cols)` of every weight matrix, hidden layers then output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden.len() + 1);
        let mut width = self.input_width();
        for &h in &self.hidden {
            shapes.push((h, width));
            width = h;
        }
        shapes.push((self.dim, width));
        shapes
    }

    /// Rows of the embedding table: one per class plus the null row.
    pub fn embed_rows(&self) -> usize {
        if self.conditional() { self.n_classes + 1 } else { 0 }
    }

    pub fn param_count(&self) -> usize {
        let layers: usize = self
            .layer_shapes()
            .iter()
            .map(|&(o, i)| o * i + o)
            .sum();
        layers + self.embed_rows() * self.embed_dim
    }
}

/// One dense layer, weight stored row-major `(out x in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl Layer {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            weight: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
            rows,
            cols,
        }
    }

    fn affine(&self, input: &[f64]) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.cols);
        self.weight
            .chunks_exact(self.cols)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }

    /// `W^T g` into `out`.
    fn backprop_input(&self, g: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (row, &gi) in self.weight.chunks_exact(self.cols).zip(g) {
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * gi;
            }
        }
    }
}

/// The network: spec, dense layers, and the optional embedding table
/// (`(n_classes + 1) x embed_dim`, last row = null label).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Layer>,
    pub embedding: Option<Vec<f64>>,
}

/// Gradients shaped exactly like [`Mlp`] parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSet {
    pub layers: Vec<Layer>,
    pub embedding: Option<Vec<f64>>,
}

impl GradSet {
    pub fn zeros(spec: &MlpSpec) -> Self {
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(o, i)| Layer::zeros(o, i))
            .collect();
        let embedding = if spec.conditional() {
            Some(vec![0.0; spec.embed_rows() * spec.embed_dim])
        } else {
            None
        };
        Self { layers, embedding }
    }

    pub fn add_assign(&mut self, other: &GradSet) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.iter_mut().zip(&b.weight) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
        if let (Some(a), Some(b)) = (self.embedding.as_mut(), other.embedding.as_ref()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weight.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite())
        }) && self
            .embedding
            .as_ref()
            .map_or(true, |e| e.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for l in &self.layers {
            for v in l.weight.iter().chain(&l.bias) {
                m = m.max(v.abs());
            }
        }
        if let Some(e) = &self.embedding {
            for v in e {
                m = m.max(v.abs());
            }
        }
        m
    }
}

/// One training example: input `(x, t, y)` and regression target.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub x: Vec<f64>,
    pub t: f64,
    pub y: Option<usize>,
    pub target: Vec<f64>,
}

impl Mlp {
    /// Initialize with zero biases and weights drawn from
    /// `N(0, 1/fan_in)`; embedding entries from `N(0, 1/embed_dim)`.
    /// Deterministic given the seed.
    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = seeded(seed);
        let layers = spec
            .layer_shapes()
            .into_iter()
            .enumerate()
            .map(|(li, (rows, cols))| {
                let gain = if li < spec.hidden.len() { 2.0f64.sqrt() } else { 0.3 };
                let std = gain / (cols as f64).sqrt();
                Layer {
                    weight: (0..rows * cols)
                        .map(|_| std * standard_normal(&mut rng))
                        .collect(),
                    bias: vec![0.0; rows],
                    rows,
                    cols,
                }
            })
            .collect();
        let embedding = if spec.conditional() {
            let std = 1.0 / (spec.embed_dim as f64).sqrt();
            Some(
                (0..spec.embed_rows() * spec.embed_dim)
                    .map(|_| std * standard_normal(&mut rng))
                    .collect(),
            )
        } else {
            None
        };
        Ok(Self { spec, layers, embedding })
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    fn embed_row(&self, y: Option<usize>) -> Result<usize> {
        match y {
            Some(c) if c >= self.spec.n_classes => Err(FlowError::Domain(format!(
                "label {c} out of range (n_classes = {})",
                self.spec.n_classes
            ))),
            Some(c) => Ok(c),
            None => Ok(self.spec.n_classes),
        }
    }

    fn features(&self, x: &[f64], t: f64, y: Option<usize>) -> Result<Vec<f64>> {
        if x.len() != self.spec.dim {
            return Err(FlowError::Domain(format!(
                "input has dimension {} but net expects {}",
                x.len(),
                self.spec.dim
            )));
        }
        let mut f = Vec::with_capacity(self.spec.input_width());
        f.extend_from_slice(x);
        for j in 0..self.spec.n_time_features / 2 {
            let freq = (1u64 << j) as f64 * PI;
            f.push((freq * t).sin());
            f.push((freq * t).cos());
        }
        if let Some(embedding) = &self.embedding {
            let row = self.embed_row(y)?;
            let ed = self.spec.embed_dim;
            f.extend_from_slice(&embedding[row * ed..(row + 1) * ed]);
        } else if y.is_some() {
            return Err(FlowError::Domain(
                "label given to an unconditional network".into(),
            ));
        }
        Ok(f)
    }

    /// Evaluate the network at `(x, t)` with label `y` (`None` = null label).
    pub fn forward(&self, x: &[f64], t: f64, y: Option<usize>) -> Result<Vec<f64>> {
        let mut h = self.features(x, t, y)?;
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut pre = layer.affine(&h);
            if l < last {
                for v in pre.iter_mut() {
                    *v = self.spec.activation.apply(*v);
                }
            }
            h = pre;
        }
        Ok(h)
    }

    /// Forward pass keeping pre-activations for the backward pass.
    fn forward_cached(&self, features: Vec<f64>) -> ForwardCache {
        let last = self.layers.len() - 1;
        let mut pres = Vec::with_capacity(last);
        let mut acts = Vec::with_capacity(last);
        let mut h = features.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let pre = layer.affine(&h);
            if l < last {
                let act: Vec<f64> = pre.iter().map(|&v| self.spec.activation.apply(v)).collect();
                h = act.clone();
                pres.push(pre);
                acts.push(act);
            } else {
                h = pre;
            }
        }
        ForwardCache { features, pres, acts, output: h }
    }

    /// Backpropagate an output cotangent through one cached forward pass,
    /// accumulating parameter gradients and returning the feature cotangent.
    fn backward_into(
        &self,
        cache: &ForwardCache,
        out_cotangent: &[f64],
        grads: &mut GradSet,
    ) -> Vec<f64> {
        let mut g = out_cotangent.to_vec();
        for l in (0..self.layers.len()).rev() {
            let input = if l == 0 { &cache.features } else { &cache.acts[l - 1] };
            let layer = &self.layers[l];
            let gl = &mut grads.layers[l];
            for (i, &gi) in g.iter().enumerate() {
                let row = &mut gl.weight[i * layer.cols..(i + 1) * layer.cols];
                for (w, &inp) in row.iter_mut().zip(input.iter()) {
                    *w += gi * inp;
                }
                gl.bias[i] += gi;
            }
            let mut g_prev = vec![0.0; layer.cols];
            layer.backprop_input(&g, &mut g_prev);
            if l > 0 {
                for (gp, &pre) in g_prev.iter_mut().zip(&cache.pres[l - 1]) {
                    *gp *= self.spec.activation.derivative(pre);
                }
            }
            g = g_prev;
        }
        g
    }

    /// Mean over the batch of `||forward(x, t, y) - target||^2`, with exact
    /// gradients for every parameter. Gradients for the null-label embedding
    /// row accumulate only from null-labeled items.
    pub fn mse_loss_and_grads(&self, batch: &[TrainItem]) -> Result<(f64, GradSet)> {
        self.check_batch(batch)?;
        // Fixed chunking keeps the reduction order independent of the
        // thread count, so results are bit-reproducible.
        const CHUNK: usize = 32;
        let parts: Vec<Result<(f64, GradSet)>> = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut grads = GradSet::zeros(&self.spec);
                let mut loss = 0.0;
                let inv_batch = 1.0 / batch.len() as f64;
                for item in chunk {
                    let features = self.features(&item.x, item.t, item.y)?;
                    let cache = self.forward_cached(features);
                    let mut cot = Vec::with_capacity(self.spec.dim);
                    for (o, tgt) in cache.output.iter().zip(&item.target) {
                        let r = o - tgt;
                        loss += r * r * inv_batch;
                        cot.push(2.0 * r * inv_batch);
                    }
                    let g_feat = self.backward_into(&cache, &cot, &mut grads);
                    if let Some(ge) = grads.embedding.as_mut() {
                        let row = self.embed_row(item.y)?;
                        let ed = self.spec.embed_dim;
                        let offset = self.spec.dim + self.spec.n_time_features;
                        for k in 0..ed {
                            ge[row * ed + k] += g_feat[offset + k];
                        }
                    }
                }
                Ok((loss, grads))
            })
            .collect();
        let mut total = GradSet::zeros(&self.spec);
        let mut loss = 0.0;
        for part in parts {
            let (l, g) = part?;
            loss += l;
            total.add_assign(&g);
        }
        Ok((loss, total))
    }

    /// The loss of [`Mlp::mse_loss_and_grads`] without the backward pass.
    pub fn mse_loss(&self, batch: &[TrainItem]) -> Result<f64> {
        self.check_batch(batch)?;
        let mut loss = 0.0;
        for item in batch {
            let out = self.forward(&item.x, item.t, item.y)?;
            for (o, tgt) in out.iter().zip(&item.target) {
                let r = o - tgt;
                loss += r * r;
            }
        }
        Ok(loss / batch.len() as f64)
    }

    fn check_batch(&self, batch: &[TrainItem]) -> Result<()> {
        if batch.is_empty() {
            return Err(FlowError::Domain("empty batch".into()));
        }
        for item in batch {
            if item.target.len() != self.spec.dim {
                return Err(FlowError::Domain(format!(
                    "target has dimension {} but net outputs {}",
                    item.target.len(),
                    self.spec.dim
                )));
            }
            if item.target.iter().any(|v| !v.is_finite()) || !item.t.is_finite() {
                return Err(FlowError::Domain("non-finite training target".into()));
            }
        }
        Ok(())
    }

    /// Gradient of `cotangent . forward(x, t, y)` with respect to `x`, from
    /// the same backward machinery used for parameter gradients.
    pub fn input_gradient(
        &self,
        x: &[f64],
        t: f64,
        y: Option<usize>,
        cotangent: &[f64],
    ) -> Result<Vec<f64>> {
        let features = self.features(x, t, y)?;
        let cache = self.forward_cached(features);
        let mut scratch = GradSet::zeros(&self.spec);
        let g_feat = self.backward_into(&cache, cotangent, &mut scratch);
        Ok(g_feat[..self.spec.dim].to_vec())
    }

    /// Flatten all parameters (layers in order, then embedding).
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            flat.extend_from_slice(&l.weight);
            flat.extend_from_slice(&l.bias);
        }
        if let Some(e) = &self.embedding {
            flat.extend_from_slice(e);
        }
        flat
    }

    /// Inverse of [`Mlp::flatten`].
    pub fn set_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(FlowError::Domain(format!(
                "flat vector has {} entries, net has {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            l.weight.copy_from_slice(&flat[k..k + nw]);
            k += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[k..k + nb]);
            k += nb;
        }
        if let Some(e) = &mut self.embedding {
            let ne = e.len();
            e.copy_from_slice(&flat[k..k + ne]);
        }
        Ok(())
    }

    /// Flatten a gradient set in the same order as [`Mlp::flatten`].
    pub fn flatten_grads(grads: &GradSet) -> Vec<f64> {
        let mut flat = Vec::new();
        for l in &grads.layers {
            flat.extend_from_slice(&l.weight);
            flat.extend_from_slice(&l.bias);
        }
        if let Some(e) = &grads.embedding {
            flat.extend_from_slice(e);
        }
        flat
    }
}

struct ForwardCache {
    features: Vec<f64>,
    pres: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
    output: Vec<f64>,
}

/// [`VectorField`] view of a network with a fixed label.
pub struct MlpField<'a> {
    pub mlp: &'a Mlp,
    pub label: Option<usize>,
}

impl VectorField for MlpField<'_> {
    fn dim(&self) -> usize {
        self.mlp.spec.dim
    }

    fn eval(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.mlp.forward(x, t, self.label)
    }
}

/// Compare analytic gradients against central finite differences over every
/// parameter; returns the maximum of `|analytic - fd| / (|fd| + 1e-8)`.
///
/// O(P) forward passes per parameter, so keep the batch small (<= 8 items).
pub fn grad_check(mlp: &Mlp, batch: &[TrainItem]) -> Result<f64> {
    let (_, grads) = mlp.mse_loss_and_grads(batch)?;
    let analytic = Mlp::flatten_grads(&grads);
    let base = mlp.flatten();
    let mut probe = mlp.clone();
    let mut max_rel: f64 = 0.0;
    for i in 0..base.len() {
        let h = 1e-6 * (1.0 + base[i].abs());
        let mut flat = base.clone();
        flat[i] = base[i] + h;
        probe.set_from_flat(&flat)?;
        let plus = probe.mse_loss(batch)?;
        flat[i] = base[i] - h;
        probe.set_from_flat(&flat)?;
        let minus = probe.mse_loss(batch)?;
        let fd = (plus - minus) / (2.0 * h);
        let rel = (analytic[i] - fd).abs() / (fd.abs() + 1e-8);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::standard_normal_vec;

    fn small_spec(n_classes: usize, activation: Activation) -> MlpSpec {
        MlpSpec {
            dim: 2,
            hidden: vec![16, 12],
            n_time_features: 4,
            n_classes,
            embed_dim: 6,
            activation,
        }
    }

    fn random_batch(mlp: &Mlp, n: usize, seed: u64, with_labels: bool) -> Vec<TrainItem> {
        let mut rng = seeded(seed);
        (0..n)
            .map(|i| TrainItem {
                x: standard_normal_vec(&mut rng, mlp.spec.dim),
                t: rand::Rng::gen::<f64>(&mut rng),
                y: if with_labels && mlp.spec.conditional() {
                    if i % 3 == 0 {
                        None
                    } else {
                        Some(i % mlp.spec.n_classes)
                    }
                } else {
                    None
                },
                target: standard_normal_vec(&mut rng, mlp.spec.dim),
            })
            .collect()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let spec = small_spec(3, Activation::Silu);
        let a = Mlp::init(spec.clone(), 5).unwrap();
        let b = Mlp::init(spec, 5).unwrap();
        assert_eq!(a, b);
        for l in &a.layers {
            assert!(l.bias.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn param_count_matches_hand_count() {
        // hidden [64, 64, 64], d = 2, 8 time features, unconditional:
        // input 10 -> (64*10+64) + (64*64+64)*2 + (2*64+2) = 9154.
        let spec = MlpSpec::new(2);
        assert_eq!(spec.param_count(), 9154);
        let mlp = Mlp::init(spec, 0).unwrap();
        assert_eq!(mlp.flatten().len(), 9154);
        // Conditional adds (K+1) * embed_dim embedding entries and widens
        // the first layer by embed_dim columns.
        let spec = MlpSpec::with_classes(2, 2);
        assert_eq!(spec.param_count(), 9154 + 64 * 8 + 3 * 8);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut mlp = Mlp::init(small_spec(0, Activation::Silu), 1).unwrap();
        let zeros = vec![0.0; mlp.param_count()];
        mlp.set_from_flat(&zeros).unwrap();
        let out = mlp.forward(&[1.0, -2.0], 0.3, None).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn forward_is_pure() {
        let mlp = Mlp::init(small_spec(2, Activation::Tanh), 2).unwrap();
        let a = mlp.forward(&[0.5, 0.1], 0.7, Some(1)).unwrap();
        let b = mlp.forward(&[0.5, 0.1], 0.7, Some(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn label_out_of_range_is_domain_error() {
        let mlp = Mlp::init(small_spec(2, Activation::Silu), 3).unwrap();
        assert!(mlp.forward(&[0.0, 0.0], 0.5, Some(2)).is_err());
        let uncond = Mlp::init(small_spec(0, Activation::Silu), 3).unwrap();
        assert!(uncond.forward(&[0.0, 0.0], 0.5, Some(0)).is_err());
    }

    #[test]
    fn input_jacobian_matches_directional_finite_differences() {
        let mlp = Mlp::init(small_spec(0, Activation::Silu), 7).unwrap();
        let x = [0.4, -0.9];
        let t = 0.6;
        let cot = [0.7, -1.3];
        let g = mlp.input_gradient(&x, t, None, &cot).unwrap();
        let dir = [0.6, 0.8];
        let delta = 1e-6;
        let xp: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + delta * d).collect();
        let xm: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a - delta * d).collect();
        let fp: f64 = mlp
            .forward(&xp, t, None)
            .unwrap()
            .iter()
            .zip(&cot)
            .map(|(o, c)| o * c)
            .sum();
        let fm: f64 = mlp
            .forward(&xm, t, None)
            .unwrap()
            .iter()
            .zip(&cot)
            .map(|(o, c)| o * c)
            .sum();
        let fd = (fp - fm) / (2.0 * delta);
        let jvp: f64 = g.iter().zip(&dir).map(|(a, d)| a * d).sum();
        assert!(
            (jvp - fd).abs() / (fd.abs() + 1e-8) < 1e-6,
            "jvp {jvp} vs fd {fd}"
        );
    }

    #[test]
    fn loss_zero_at_exact_targets() {
        let mlp = Mlp::init(small_spec(0, Activation::Silu), 9).unwrap();
        let batch: Vec<TrainItem> = (0..4)
            .map(|i| {
                let x = vec![0.1 * i as f64, -0.2];
                let t = 0.25 * i as f64;
                let target = mlp.forward(&x, t, None).unwrap();
                TrainItem { x, t, y: None, target }
            })
            .collect();
        let (loss, grads) = mlp.mse_loss_and_grads(&batch).unwrap();
        assert!(loss < 1e-30);
        assert!(grads.max_abs() < 1e-14);
    }

    #[test]
    fn loss_hand_value_single_item() {
        // Zero net, target -1 in d = 1: loss = ||0 - (-1)||^2 = 1.
        let spec = MlpSpec {
            dim: 1,
            hidden: vec![8],
            n_time_features: 2,
            n_classes: 0,
            embed_dim: 8,
            activation: Activation::Silu,
        };
        let mut mlp = Mlp::init(spec, 0).unwrap();
        let zeros = vec![0.0; mlp.param_count()];
        mlp.set_from_flat(&zeros).unwrap();
        let batch = [TrainItem { x: vec![0.3], t: 0.5, y: None, target: vec![-1.0] }];
        let (loss, _) = mlp.mse_loss_and_grads(&batch).unwrap();
        assert_eq!(loss, 1.0);
    }

    #[test]
    fn grad_check_all_variants() {
        for activation in [Activation::Silu, Activation::Tanh] {
            for n_classes in [0, 3] {
                let mlp = Mlp::init(small_spec(n_classes, activation), 13).unwrap();
                let batch = random_batch(&mlp, 6, 17, true);
                let max_rel = grad_check(&mlp, &batch).unwrap();
                assert!(
                    max_rel < 1e-5,
                    "{activation:?} K={n_classes}: max rel err {max_rel}"
                );
            }
        }
    }

    #[test]
    fn grad_check_detects_corrupted_gradients() {
        let mlp = Mlp::init(small_spec(0, Activation::Silu), 23).unwrap();
        let batch = random_batch(&mlp, 4, 29, false);
        let (_, grads) = mlp.mse_loss_and_grads(&batch).unwrap();
        let analytic = Mlp::flatten_grads(&grads);
        // Zeroed analytic grads against true finite differences: relative
        // error |0 - fd| / (|fd| + 1e-8) ~ 1 wherever fd is materially nonzero.
        let base = mlp.flatten();
        let mut probe = mlp.clone();
        let mut worst: f64 = 0.0;
        for i in 0..base.len() {
            let h = 1e-6 * (1.0 + base[i].abs());
            let mut flat = base.clone();
            flat[i] = base[i] + h;
            probe.set_from_flat(&flat).unwrap();
            let plus = probe.mse_loss(&batch).unwrap();
            flat[i] = base[i] - h;
            probe.set_from_flat(&flat).unwrap();
            let minus = probe.mse_loss(&batch).unwrap();
            let fd = (plus - minus) / (2.0 * h);
            worst = worst.max((0.0f64 - fd).abs() / (fd.abs() + 1e-8));
        }
        assert!(worst > 0.9, "zeroed grads not flagged: {worst}");
        assert!(analytic.iter().any(|&g| g.abs() > 1e-6));
    }

    #[test]
    fn grad_check_degenerate_zero_case() {
        let mut mlp = Mlp::init(small_spec(0, Activation::Silu), 31).unwrap();
        let zeros = vec![0.0; mlp.param_count()];
        mlp.set_from_flat(&zeros).unwrap();
        let batch = [TrainItem { x: vec![0.0, 0.0], t: 0.0, y: None, target: vec![0.0, 0.0] }];
        let max_rel = grad_check(&mlp, &batch).unwrap();
        assert_eq!(max_rel, 0.0);
    }

    #[test]
    fn null_row_gradients_accumulate_only_from_null_items() {
        let mlp = Mlp::init(small_spec(2, Activation::Silu), 37).unwrap();
        let ed = mlp.spec.embed_dim;
        // All items labeled with class 0: null row (row 2) and class-1 row
        // must receive zero gradient.
        let mut batch = random_batch(&mlp, 4, 41, false);
        for item in batch.iter_mut() {
            item.y = Some(0);
        }
        let (_, grads) = mlp.mse_loss_and_grads(&batch).unwrap();
        let e = grads.embedding.as_ref().unwrap();
        assert!(e[0..ed].iter().any(|&v| v != 0.0), "class-0 row got no grad");
        assert!(e[ed..2 * ed].iter().all(|&v| v == 0.0), "class-1 row touched");
        assert!(e[2 * ed..3 * ed].iter().all(|&v| v == 0.0), "null row touched");

        // All items with the null label: only the last row accumulates.
        for item in batch.iter_mut() {
            item.y = None;
        }
        let (_, grads) = mlp.mse_loss_and_grads(&batch).unwrap();
        let e = grads.embedding.as_ref().unwrap();
        assert!(e[0..2 * ed].iter().all(|&v| v == 0.0));
        assert!(e[2 * ed..3 * ed].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn non_finite_target_rejected() {
        let mlp = Mlp::init(small_spec(0, Activation::Silu), 43).unwrap();
        let batch = [TrainItem {
            x: vec![0.0, 0.0],
            t: 0.5,
            y: None,
            target: vec![f64::NAN, 0.0],
        }];
        assert!(mlp.mse_loss_and_grads(&batch).is_err());
    }
}
