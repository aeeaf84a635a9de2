//! Triplet autoencoder that maps CSI features to 2-D chart coordinates.
//!
//! The encoder and decoder are plain MLPs with a bounded activation between
//! layers and linear outputs. Inputs are z-scored with statistics stored in
//! the model; both loss terms live in the standardized space. Gradients are
//! derived by hand and checked against finite differences in the tests.

use std::io::{BufRead, Write};

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type ChartPoint = [f64; 2];

pub const LATENT_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn slope(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "sigmoid" => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

/// Affine layer `z = W a + b` with `W` stored as `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            w: Array2::zeros((n_out, n_in)),
            b: Array1::zeros(n_out),
        }
    }

    /// Uniform in `+-sqrt(6/(fan_in+fan_out))`, zero bias.
    pub fn xavier<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let lim = (6.0 / (n_in + n_out) as f64).sqrt();
        let w = Array2::from_shape_fn((n_out, n_in), |_| rng.random_range(-lim..=lim));
        Self {
            w,
            b: Array1::zeros(n_out),
        }
    }

    pub fn n_in(&self) -> usize {
        self.w.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.w.nrows()
    }

    fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartModel {
    pub encoder: Vec<Dense>,
    pub decoder: Vec<Dense>,
    pub activation: Activation,
    /// Per-dimension input mean used for z-scoring.
    pub mean: Array1<f64>,
    /// Per-dimension input scale; never zero.
    pub scale: Array1<f64>,
}

struct Trace {
    /// Input of every layer; `inputs[l+1]` is the activated output of layer `l`.
    inputs: Vec<Array2<f64>>,
    output: Array2<f64>,
}

fn forward(layers: &[Dense], act: Activation, x: Array2<f64>) -> Trace {
    let mut inputs = Vec::with_capacity(layers.len());
    let mut a = x;
    for (l, layer) in layers.iter().enumerate() {
        let mut z = a.dot(&layer.w.t());
        z += &layer.b;
        if l + 1 < layers.len() {
            z.mapv_inplace(|v| act.apply(v));
        }
        inputs.push(a);
        a = z;
    }
    Trace { inputs, output: a }
}

fn forward_output(layers: &[Dense], act: Activation, x: ArrayView2<f64>) -> Array2<f64> {
    let mut a = x.to_owned();
    for (l, layer) in layers.iter().enumerate() {
        let mut z = a.dot(&layer.w.t());
        z += &layer.b;
        if l + 1 < layers.len() {
            z.mapv_inplace(|v| act.apply(v));
        }
        a = z;
    }
    a
}

/// Returns per-layer gradients and the gradient w.r.t. the stack input.
fn backward(
    layers: &[Dense],
    act: Activation,
    trace: &Trace,
    d_out: Array2<f64>,
) -> (Vec<Dense>, Array2<f64>) {
    let n = layers.len();
    let mut grads: Vec<Dense> = Vec::with_capacity(n);
    let mut d = d_out;
    for l in (0..n).rev() {
        if l + 1 < n {
            let out = &trace.inputs[l + 1];
            d.zip_mut_with(out, |g, &a| *g *= act.slope(a));
        }
        let gw = d.t().dot(&trace.inputs[l]);
        let gb = d.sum_axis(Axis(0));
        d = d.dot(&layers[l].w);
        grads.push(Dense { w: gw, b: gb });
    }
    grads.reverse();
    (grads, d)
}

impl ChartModel {
    /// Random model with encoder widths `input -> hidden... -> latent` and a
    /// mirrored decoder. Identity standardization.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        latent_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let dims = Self::check_dims(input_dim, hidden, latent_dim)?;
        let encoder = dims
            .windows(2)
            .map(|w| Dense::xavier(w[0], w[1], rng))
            .collect();
        let decoder = dims
            .iter()
            .rev()
            .collect::<Vec<_>>()
            .windows(2)
            .map(|w| Dense::xavier(*w[0], *w[1], rng))
            .collect();
        Ok(Self {
            encoder,
            decoder,
            activation,
            mean: Array1::zeros(input_dim),
            scale: Array1::ones(input_dim),
        })
    }

    /// All-zero weights and biases.
    pub fn zeros(input_dim: usize, hidden: &[usize], latent_dim: usize) -> Result<Self> {
        let dims = Self::check_dims(input_dim, hidden, latent_dim)?;
        let rev: Vec<usize> = dims.iter().rev().copied().collect();
        Ok(Self {
            encoder: dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            decoder: rev.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            activation: Activation::Tanh,
            mean: Array1::zeros(input_dim),
            scale: Array1::ones(input_dim),
        })
    }

    /// Builds a model from explicit layers, checking the mirror structure.
    pub fn from_layers(
        encoder: Vec<Dense>,
        decoder: Vec<Dense>,
        activation: Activation,
    ) -> Result<Self> {
        let first = encoder.first().ok_or(Error::EmptyInput("encoder layers"))?;
        let input_dim = first.n_in();
        let model = Self {
            encoder,
            decoder,
            activation,
            mean: Array1::zeros(input_dim),
            scale: Array1::ones(input_dim),
        };
        model.validate()?;
        Ok(model)
    }

    fn check_dims(input_dim: usize, hidden: &[usize], latent_dim: usize) -> Result<Vec<usize>> {
        if latent_dim == 0 || input_dim <= latent_dim {
            return Err(Error::config(format!(
                "latent dimension {latent_dim} must be positive and below input dimension {input_dim}"
            )));
        }
        if hidden.contains(&0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(latent_dim);
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder.len() != self.decoder.len() || self.encoder.is_empty() {
            return Err(Error::config("decoder must mirror encoder depth"));
        }
        for pair in self.encoder.windows(2).chain(self.decoder.windows(2)) {
            if pair[0].n_out() != pair[1].n_in() {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].n_out(),
                    got: pair[1].n_in(),
                });
            }
        }
        for (e, d) in self.encoder.iter().zip(self.decoder.iter().rev()) {
            if e.n_in() != d.n_out() || e.n_out() != d.n_in() {
                return Err(Error::config("decoder widths must mirror the encoder"));
            }
            if e.b.len() != e.n_out() || d.b.len() != d.n_out() {
                return Err(Error::config("bias length does not match layer width"));
            }
        }
        let n = self.input_dim();
        if self.mean.len() != n || self.scale.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.mean.len(),
            });
        }
        if self.latent_dim() >= n {
            return Err(Error::config(
                "latent dimension must be below input dimension",
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0].n_in()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.last().map_or(0, Dense::n_out)
    }

    pub fn depth(&self) -> usize {
        self.encoder.len() + self.decoder.len()
    }

    /// Encoder widths from input to latent.
    pub fn widths(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.encoder.iter().map(Dense::n_out));
        dims
    }

    /// Sets the z-score statistics from a dataset; constant columns get scale 1.
    pub fn fit_standardizer(&mut self, data: ArrayView2<f64>) -> Result<()> {
        if data.nrows() == 0 {
            return Err(Error::EmptyInput("training features"));
        }
        self.check_width(data.ncols())?;
        let mean = data.mean_axis(Axis(0)).expect("nonempty");
        let var = data.var_axis(Axis(0), 0.0);
        self.scale = var.mapv(|v| if v > 1e-24 { v.sqrt() } else { 1.0 });
        self.mean = mean;
        Ok(())
    }

    fn check_width(&self, got: usize) -> Result<()> {
        if got != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got,
            });
        }
        Ok(())
    }

    pub fn standardize(&self, data: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_width(data.ncols())?;
        let mut z = data.to_owned();
        z -= &self.mean;
        z /= &self.scale;
        Ok(z)
    }

    pub fn encode_batch(&self, data: ArrayView2<f64>) -> Result<Array2<f64>> {
        let z = self.standardize(data)?;
        Ok(forward_output(&self.encoder, self.activation, z.view()))
    }

    /// Decoder output mapped back to input units.
    pub fn decode_batch(&self, points: ArrayView2<f64>) -> Result<Array2<f64>> {
        if points.ncols() != self.latent_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.latent_dim(),
                got: points.ncols(),
            });
        }
        let mut x = forward_output(&self.decoder, self.activation, points);
        x *= &self.scale;
        x += &self.mean;
        Ok(x)
    }

    pub fn encode(&self, x: &[f64]) -> Result<ChartPoint> {
        if self.latent_dim() != LATENT_DIM {
            return Err(Error::DimensionMismatch {
                expected: LATENT_DIM,
                got: self.latent_dim(),
            });
        }
        let row = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|_| Error::EmptyInput("feature vector"))?;
        let y = self.encode_batch(row)?;
        Ok([y[(0, 0)], y[(0, 1)]])
    }

    pub fn decode(&self, y: ChartPoint) -> Result<Vec<f64>> {
        let row = ArrayView2::from_shape((1, 2), &y[..]).expect("1x2");
        Ok(self.decode_batch(row)?.row(0).to_vec())
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.encoder.iter().chain(self.decoder.iter())
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.encoder.iter_mut().chain(self.decoder.iter_mut())
    }

    pub fn n_params(&self) -> usize {
        self.layers().map(Dense::n_params).sum()
    }

    /// Encoder then decoder, each layer as row-major `W` followed by `b`.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in self.layers() {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                expected: self.n_params(),
                got: p.len(),
            });
        }
        let mut it = p.iter();
        for l in self.layers_mut() {
            l.w.iter_mut().for_each(|v| *v = *it.next().unwrap());
            l.b.iter_mut().for_each(|v| *v = *it.next().unwrap());
        }
        Ok(())
    }

    /// Text dump; floats use shortest round-trip formatting so reload is bit-exact.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "chartbeam-chart v1")?;
        writeln!(out, "activation {}", self.activation.name())?;
        writeln!(out, "widths {}", join(self.widths().iter()))?;
        writeln!(out, "mean {}", join(self.mean.iter()))?;
        writeln!(out, "scale {}", join(self.scale.iter()))?;
        for (tag, layers) in [("enc", &self.encoder), ("dec", &self.decoder)] {
            for (i, l) in layers.iter().enumerate() {
                writeln!(out, "layer {tag} {i} {} {}", l.n_out(), l.n_in())?;
                writeln!(out, "w {}", join(l.w.iter()))?;
                writeln!(out, "b {}", join(l.b.iter()))?;
            }
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let lines: Vec<String> = input.lines().collect::<std::io::Result<_>>()?;
        let mut it = lines.iter().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |want: &str| -> Result<(usize, Vec<String>)> {
            let (no, line) = it
                .next()
                .ok_or_else(|| Error::parse(0, "unexpected end of model"))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(want) {
                return Err(Error::parse(no, format!("expected '{want}'")));
            }
            Ok((no, parts.map(str::to_string).collect()))
        };
        let (no, v) = next("chartbeam-chart")?;
        if v != ["v1"] {
            return Err(Error::parse(no, "unsupported model version"));
        }
        let (no, v) = next("activation")?;
        let activation = v
            .first()
            .and_then(|s| Activation::parse(s))
            .ok_or_else(|| Error::parse(no, "unknown activation"))?;
        let (no, v) = next("widths")?;
        let widths: Vec<usize> = parse_all(no, &v)?;
        if widths.len() < 2 {
            return Err(Error::parse(no, "need at least two widths"));
        }
        let (no, v) = next("mean")?;
        let mean = Array1::from(parse_all::<f64>(no, &v)?);
        let (no, v) = next("scale")?;
        let scale = Array1::from(parse_all::<f64>(no, &v)?);
        let n_layers = widths.len() - 1;
        let mut read_stack = |tag: &str| -> Result<Vec<Dense>> {
            let mut layers = Vec::with_capacity(n_layers);
            for i in 0..n_layers {
                let (no, head) = next("layer")?;
                let h: Vec<usize> = parse_all(no, &head[1..])?;
                if head.first().map(String::as_str) != Some(tag) || h.len() != 3 || h[0] != i {
                    return Err(Error::parse(no, "bad layer header"));
                }
                let (n_out, n_in) = (h[1], h[2]);
                let (no, w) = next("w")?;
                let w = Array2::from_shape_vec((n_out, n_in), parse_all(no, &w)?)
                    .map_err(|_| Error::parse(no, "weight count mismatch"))?;
                let (no, b) = next("b")?;
                let b = Array1::from(parse_all::<f64>(no, &b)?);
                if b.len() != n_out {
                    return Err(Error::parse(no, "bias count mismatch"));
                }
                layers.push(Dense { w, b });
            }
            Ok(layers)
        };
        let encoder = read_stack("enc")?;
        let decoder = read_stack("dec")?;
        let model = Self {
            encoder,
            decoder,
            activation,
            mean,
            scale,
        };
        model.validate()?;
        if model.widths() != widths {
            return Err(Error::parse(3, "layer shapes disagree with widths"));
        }
        Ok(model)
    }
}

fn join<T: std::fmt::Display>(it: impl Iterator<Item = T>) -> String {
    it.map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn parse_all<T: std::str::FromStr>(line: usize, parts: &[String]) -> Result<Vec<T>> {
    parts
        .iter()
        .map(|s| {
            s.parse()
                .map_err(|_| Error::parse(line, format!("bad number '{s}'")))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Triplet margin.
    pub delta: f64,
    /// Weight of the reconstruction term.
    pub loss_weight: f64,
    pub pos_window: usize,
    pub neg_window: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 256,
            epochs: 200,
            delta: 1.0,
            loss_weight: 1.0,
            pos_window: 2,
            neg_window: 10,
            hidden: vec![256, 64],
            activation: Activation::Tanh,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::config(format!(
                "triplet margin must be > 0, got {}",
                self.delta
            )));
        }
        if self.pos_window < 1 || self.neg_window <= self.pos_window {
            return Err(Error::config(format!(
                "need neg_window > pos_window >= 1, got {} and {}",
                self.neg_window, self.pos_window
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(self.loss_weight >= 0.0 && self.loss_weight.is_finite()) {
            return Err(Error::config("loss weight must be nonnegative"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        Ok(())
    }
}

/// Samples one triplet per anchor.
///
/// `groups[i]` labels the trajectory row `i` came from; rows of one group must
/// be contiguous and in time order. Positives come from the same group within
/// `pos_window` steps; negatives are farther than `neg_window` steps or belong
/// to another group. A negative closer than the positive in feature space is
/// redrawn up to 10 times before the anchor is skipped.
pub fn mine_triplets<R: Rng + ?Sized>(
    data: ArrayView2<f64>,
    groups: &[usize],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<Triplet>> {
    let n = data.nrows();
    if groups.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: groups.len(),
        });
    }
    if n <= cfg.neg_window + 1 {
        return Err(Error::DatasetTooShort {
            len: n,
            needed: cfg.neg_window + 2,
        });
    }
    let spans = group_spans(groups)?;
    let dist = |a: usize, b: usize| -> f64 {
        data.row(a)
            .iter()
            .zip(data.row(b).iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
    };
    let mut out = Vec::with_capacity(n);
    for &(start, end) in &spans {
        for i in start..end {
            let plo = i.saturating_sub(cfg.pos_window).max(start);
            let phi = (i + cfg.pos_window).min(end - 1);
            if phi == plo {
                continue;
            }
            // positives: [plo, phi] without i
            let mut j = plo + rng.random_range(0..phi - plo);
            if j >= i {
                j += 1;
            }
            let nlo = i.saturating_sub(cfg.neg_window).max(start);
            let nhi = (i + cfg.neg_window).min(end - 1);
            let excluded = nhi - nlo + 1;
            if excluded >= n {
                continue;
            }
            let d_pos = dist(i, j);
            for _ in 0..10 {
                let mut k = rng.random_range(0..n - excluded);
                if k >= nlo {
                    k += excluded;
                }
                if d_pos <= dist(i, k) {
                    out.push(Triplet {
                        anchor: i,
                        positive: j,
                        negative: k,
                    });
                    break;
                }
            }
        }
    }
    Ok(out)
}

fn group_spans(groups: &[usize]) -> Result<Vec<(usize, usize)>> {
    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut start = 0;
    for i in 1..=groups.len() {
        if i == groups.len() || groups[i] != groups[start] {
            if !seen.insert(groups[start]) {
                return Err(Error::config(
                    "rows of a trajectory group must be contiguous",
                ));
            }
            spans.push((start, i));
            start = i;
        }
    }
    Ok(spans)
}

/// Mean hinge `max(0, |y_i-y_j| - |y_i-y_k| + delta)` over chart points.
pub fn triplet_hinge(points: ArrayView2<f64>, triplets: &[Triplet], delta: f64) -> f64 {
    if triplets.is_empty() {
        return 0.0;
    }
    let d = |a: usize, b: usize| -> f64 {
        points
            .row(a)
            .iter()
            .zip(points.row(b).iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let total: f64 = triplets
        .iter()
        .map(|t| (d(t.anchor, t.positive) - d(t.anchor, t.negative) + delta).max(0.0))
        .sum();
    total / triplets.len() as f64
}

/// Triplet loss of the model on raw features.
pub fn triplet_loss(
    model: &ChartModel,
    data: ArrayView2<f64>,
    triplets: &[Triplet],
    delta: f64,
) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::EmptyInput("triplet batch"));
    }
    let y = model.encode_batch(data)?;
    Ok(triplet_hinge(y.view(), triplets, delta))
}

/// Mean squared round-trip error in standardized units.
pub fn reconstruction_loss(model: &ChartModel, data: ArrayView2<f64>) -> Result<f64> {
    if data.nrows() == 0 {
        return Err(Error::EmptyInput("feature batch"));
    }
    let z = model.standardize(data)?;
    let y = forward_output(&model.encoder, model.activation, z.view());
    let r = forward_output(&model.decoder, model.activation, y.view());
    Ok((&r - &z).mapv(|v| v * v).sum() / data.nrows() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub triplet: f64,
    pub reconstruction: f64,
    pub total: f64,
}

/// Loss and gradient (same layout as [`ChartModel::params_flat`]).
///
/// `z` is already standardized. The reconstruction term is taken over the
/// batch anchors.
fn loss_and_grad_std(
    model: &ChartModel,
    z: ArrayView2<f64>,
    triplets: &[Triplet],
    delta: f64,
    loss_weight: f64,
) -> (LossParts, Vec<Dense>) {
    let b = triplets.len();
    let dim = z.ncols();
    let mut x = Array2::<f64>::zeros((3 * b, dim));
    for (r, t) in triplets.iter().enumerate() {
        x.row_mut(r).assign(&z.row(t.anchor));
        x.row_mut(b + r).assign(&z.row(t.positive));
        x.row_mut(2 * b + r).assign(&z.row(t.negative));
    }
    let act = model.activation;
    let enc = forward(&model.encoder, act, x);
    let y = &enc.output;
    let latent = y.ncols();
    let inv_b = 1.0 / b as f64;

    let mut dy = Array2::<f64>::zeros(y.raw_dim());
    let mut c_n = 0.0;
    for r in 0..b {
        let (ya, yp, yn) = (y.row(r), y.row(b + r), y.row(2 * b + r));
        let dp: Vec<f64> = ya.iter().zip(yp.iter()).map(|(a, p)| a - p).collect();
        let dn: Vec<f64> = ya.iter().zip(yn.iter()).map(|(a, q)| a - q).collect();
        let np = dp.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nn = dn.iter().map(|v| v * v).sum::<f64>().sqrt();
        let h = np - nn + delta;
        if h > 0.0 {
            c_n += h;
            for c in 0..latent {
                let gp = if np > 0.0 { dp[c] / np * inv_b } else { 0.0 };
                let gn = if nn > 0.0 { dn[c] / nn * inv_b } else { 0.0 };
                dy[(r, c)] += gp - gn;
                dy[(b + r, c)] -= gp;
                dy[(2 * b + r, c)] += gn;
            }
        }
    }
    c_n *= inv_b;

    let anchors_y = y.slice(s![0..b, ..]).to_owned();
    let dec = forward(&model.decoder, act, anchors_y);
    let target = enc.inputs[0].slice(s![0..b, ..]);
    let diff = &dec.output - &target;
    let c_r = diff.mapv(|v| v * v).sum() * inv_b;
    let d_rec = diff.mapv(|v| 2.0 * loss_weight * inv_b * v);
    let (dec_grads, dy_dec) = backward(&model.decoder, act, &dec, d_rec);
    {
        let mut top = dy.slice_mut(s![0..b, ..]);
        top += &dy_dec;
    }
    let (mut grads, _) = backward(&model.encoder, act, &enc, dy);
    grads.extend(dec_grads);
    let parts = LossParts {
        triplet: c_n,
        reconstruction: c_r,
        total: c_n + loss_weight * c_r,
    };
    (parts, grads)
}

/// Joint loss `C_n + w C_r` on raw features and its flattened gradient.
pub fn loss_and_grad(
    model: &ChartModel,
    data: ArrayView2<f64>,
    triplets: &[Triplet],
    delta: f64,
    loss_weight: f64,
) -> Result<(LossParts, Vec<f64>)> {
    if triplets.is_empty() {
        return Err(Error::EmptyInput("triplet batch"));
    }
    let z = model.standardize(data)?;
    let (parts, grads) = loss_and_grad_std(model, z.view(), triplets, delta, loss_weight);
    let mut flat = Vec::with_capacity(model.n_params());
    for g in &grads {
        flat.extend(g.w.iter());
        flat.extend(g.b.iter());
    }
    Ok((parts, flat))
}

struct Adam {
    m: Vec<Dense>,
    v: Vec<Dense>,
    step: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(model: &ChartModel, lr: f64) -> Self {
        let zeros: Vec<Dense> = model
            .layers()
            .map(|l| Dense::zeros(l.n_in(), l.n_out()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            lr,
        }
    }

    fn update(&mut self, model: &mut ChartModel, grads: &[Dense]) {
        self.step += 1;
        let c1 = 1.0 - Self::B1.powi(self.step);
        let c2 = 1.0 - Self::B2.powi(self.step);
        let lr = self.lr;
        let apply = |p: f64, g: f64, m: &mut f64, v: &mut f64| -> f64 {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            p - lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS)
        };
        for (((layer, g), m), v) in model
            .layers_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            ndarray::Zip::from(&mut layer.w)
                .and(&g.w)
                .and(&mut m.w)
                .and(&mut v.w)
                .for_each(|p, &g, m, v| *p = apply(*p, g, m, v));
            ndarray::Zip::from(&mut layer.b)
                .and(&g.b)
                .and(&mut m.b)
                .and(&mut v.b)
                .for_each(|p, &g, m, v| *p = apply(*p, g, m, v));
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ChartModel,
    /// Triplet-weighted mean losses of each epoch.
    pub history: Vec<LossParts>,
}

/// Initializes a model from `cfg.seed` and fits the standardizer.
pub fn init_model(data: ArrayView2<f64>, cfg: &TrainConfig) -> Result<ChartModel> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = ChartModel::new(
        data.ncols(),
        &cfg.hidden,
        LATENT_DIM,
        cfg.activation,
        &mut rng,
    )?;
    model.fit_standardizer(data)?;
    Ok(model)
}

/// Adam on `C_n + w C_r` with triplets mined afresh each epoch.
pub fn train(data: ArrayView2<f64>, groups: &[usize], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let model = init_model(data, cfg)?;
    train_from(model, data, groups, cfg)
}

/// Continues training an existing model; the standardizer is kept.
pub fn train_from(
    mut model: ChartModel,
    data: ArrayView2<f64>,
    groups: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let z = model.standardize(data)?;
    // separate stream so initialization and mining never share draws
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_7a11_u64);
    let mut adam = Adam::new(&model, cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut triplets = mine_triplets(z.view(), groups, cfg, &mut rng)?;
        if triplets.is_empty() {
            return Err(Error::EmptyInput("mined triplets"));
        }
        triplets.shuffle(&mut rng);
        let mut acc = LossParts::default();
        for batch in triplets.chunks(cfg.batch_size) {
            let (parts, grads) =
                loss_and_grad_std(&model, z.view(), batch, cfg.delta, cfg.loss_weight);
            if !parts.total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    loss: parts.total,
                });
            }
            let w = batch.len() as f64;
            acc.triplet += parts.triplet * w;
            acc.reconstruction += parts.reconstruction * w;
            acc.total += parts.total * w;
            adam.update(&mut model, &grads);
        }
        let n = triplets.len() as f64;
        history.push(LossParts {
            triplet: acc.triplet / n,
            reconstruction: acc.reconstruction / n,
            total: acc.total / n,
        });
    }
    Ok(TrainOutcome { model, history })
}

/// Encodes every row, preserving order.
pub fn chart_dataset(model: &ChartModel, data: ArrayView2<f64>) -> Result<Vec<ChartPoint>> {
    let y = model.encode_batch(data)?;
    if y.ncols() != LATENT_DIM {
        return Err(Error::DimensionMismatch {
            expected: LATENT_DIM,
            got: y.ncols(),
        });
    }
    Ok(y.rows().into_iter().map(|r| [r[0], r[1]]).collect())
}

fn knn_sets(points: ArrayView2<f64>, k: usize) -> Vec<Vec<usize>> {
    let n = points.nrows();
    (0..n)
        .map(|i| {
            let mut d: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let dist = points
                        .row(i)
                        .iter()
                        .zip(points.row(j).iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>();
                    (dist, j)
                })
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut set: Vec<usize> = d[..k].iter().map(|p| p.1).collect();
            set.sort_unstable();
            set
        })
        .collect()
}

/// Mean fraction of each point's `k` nearest feature-space neighbors that are
/// also among its `k` nearest chart neighbors.
pub fn neighborhood_preservation(
    chart: ArrayView2<f64>,
    features: ArrayView2<f64>,
    k: usize,
) -> Result<f64> {
    let n = chart.nrows();
    if features.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: features.nrows(),
        });
    }
    if k == 0 || k >= n {
        return Err(Error::config(format!("need 0 < k < {n}, got {k}")));
    }
    let a = knn_sets(chart, k);
    let b = knn_sets(features, k);
    let shared: usize = a
        .iter()
        .zip(&b)
        .map(|(x, y)| x.iter().filter(|v| y.binary_search(v).is_ok()).count())
        .sum();
    Ok(shared as f64 / (n * k) as f64)
}

/// Chart points as an `n x 2` array.
pub fn points_array(points: &[ChartPoint]) -> Array2<f64> {
    Array2::from_shape_fn((points.len(), 2), |(i, c)| points[i][c])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_data(n: usize, dim: usize, seed: u64) -> Array2<f64> {
        let mut r = rng(seed);
        Array2::from_shape_fn((n, dim), |_| r.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_model_maps_to_origin_and_back() {
        let m = ChartModel::zeros(5, &[4], 2).unwrap();
        assert_eq!(m.encode(&[1.0, -2.0, 3.0, 0.5, 0.1]).unwrap(), [0.0, 0.0]);
        assert_eq!(m.decode([0.3, -0.7]).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn single_linear_layer_selects_coordinates() {
        let mut enc = Dense::zeros(5, 2);
        enc.w[(0, 0)] = 1.0;
        enc.w[(1, 1)] = 1.0;
        let dec = Dense::zeros(2, 5);
        let m = ChartModel::from_layers(vec![enc], vec![dec], Activation::Tanh).unwrap();
        assert_eq!(m.encode(&[0.4, -0.3, 9.0, 9.0, 9.0]).unwrap(), [0.4, -0.3]);
        assert_eq!(m.depth(), 2);
    }

    #[test]
    fn default_architecture_is_six_layers() {
        let cfg = TrainConfig::default();
        let m = ChartModel::new(5, &cfg.hidden, 2, Activation::Tanh, &mut rng(0)).unwrap();
        assert_eq!(m.depth(), 6);
        assert_eq!(m.widths(), vec![5, 256, 64, 2]);
        let dec: Vec<usize> = m.decoder.iter().map(Dense::n_out).collect();
        assert_eq!(dec, vec![64, 256, 5]);
        assert!(ChartModel::new(2, &[4], 2, Activation::Tanh, &mut rng(0)).is_err());
    }

    #[test]
    fn encode_rejects_wrong_width() {
        let m = ChartModel::zeros(5, &[4], 2).unwrap();
        assert!(matches!(
            m.encode(&[1.0, 2.0]),
            Err(Error::DimensionMismatch {
                expected: 5,
                got: 2
            })
        ));
    }

    #[test]
    fn xavier_bounds() {
        let d = Dense::xavier(10, 6, &mut rng(3));
        let lim = (6.0f64 / 16.0).sqrt();
        assert!(d.w.iter().all(|v| v.abs() <= lim));
        assert!(d.b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn immediate_neighbors_only_with_unit_window() {
        let data = array![[0.0], [1.0], [2.0], [10.0], [11.0]];
        let cfg = TrainConfig {
            pos_window: 1,
            neg_window: 2,
            ..TrainConfig::default()
        };
        let groups = [0; 5];
        for seed in 0..20 {
            for t in mine_triplets(data.view(), &groups, &cfg, &mut rng(seed)).unwrap() {
                assert_eq!(t.anchor.abs_diff(t.positive), 1);
                assert!(t.anchor.abs_diff(t.negative) > 2);
            }
        }
    }

    #[test]
    fn short_dataset_rejected() {
        let data = random_data(5, 3, 1);
        let cfg = TrainConfig {
            pos_window: 1,
            neg_window: 4,
            ..TrainConfig::default()
        };
        assert!(matches!(
            mine_triplets(data.view(), &[0; 5], &cfg, &mut rng(0)),
            Err(Error::DatasetTooShort { .. })
        ));
    }

    #[test]
    fn other_groups_supply_negatives() {
        let data = random_data(12, 3, 2);
        let groups: Vec<usize> = (0..12).map(|i| i / 4).collect();
        let cfg = TrainConfig {
            pos_window: 1,
            neg_window: 5,
            ..TrainConfig::default()
        };
        let ts = mine_triplets(data.view(), &groups, &cfg, &mut rng(4)).unwrap();
        assert!(!ts.is_empty());
        for t in ts {
            assert_eq!(groups[t.anchor], groups[t.positive]);
            assert_ne!(groups[t.anchor], groups[t.negative]);
        }
        assert!(mine_triplets(
            data.view(),
            &[0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0],
            &cfg,
            &mut rng(0)
        )
        .is_err());
    }

    #[test]
    fn collapsed_embedding_costs_margin() {
        let m = ChartModel::zeros(3, &[4], 2).unwrap();
        let data = random_data(6, 3, 5);
        let ts = [
            Triplet {
                anchor: 0,
                positive: 1,
                negative: 4,
            },
            Triplet {
                anchor: 2,
                positive: 3,
                negative: 5,
            },
        ];
        assert_eq!(triplet_loss(&m, data.view(), &ts, 1.0).unwrap(), 1.0);
        assert_eq!(triplet_loss(&m, data.view(), &ts, 0.25).unwrap(), 0.25);
    }

    #[test]
    fn well_separated_embedding_has_zero_hinge() {
        let y = array![[0.0, 0.0], [0.1, 0.0], [5.0, 0.0]];
        let ts = [Triplet {
            anchor: 0,
            positive: 1,
            negative: 2,
        }];
        assert_eq!(triplet_hinge(y.view(), &ts, 1.0), 0.0);
    }

    #[test]
    fn zero_model_reconstruction_is_mean_square_norm() {
        let m = ChartModel::zeros(3, &[4], 2).unwrap();
        let data = random_data(7, 3, 6);
        let want = data.mapv(|v| v * v).sum() / 7.0;
        assert!((reconstruction_loss(&m, data.view()).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn standardizer_handles_constant_columns() {
        let data = array![[1.0, 3.0], [1.0, 5.0]];
        let mut m = ChartModel::zeros(2, &[3], 1).unwrap();
        m.fit_standardizer(data.view()).unwrap();
        assert_eq!(m.scale[0], 1.0);
        let z = m.standardize(data.view()).unwrap();
        assert_eq!(z, array![[0.0, -1.0], [0.0, 1.0]]);
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let data = random_data(30, 5, 7);
        let groups = vec![0; 30];
        let cfg = TrainConfig {
            epochs: 0,
            hidden: vec![8, 4],
            ..TrainConfig::default()
        };
        let out = train(data.view(), &groups, &cfg).unwrap();
        assert_eq!(out.model, init_model(data.view(), &cfg).unwrap());
        assert!(out.history.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let data = random_data(40, 5, 8);
        let groups = vec![0; 40];
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 16,
            hidden: vec![8, 4],
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let a = train(data.view(), &groups, &cfg).unwrap();
        let b = train(data.view(), &groups, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn identity_embedding_preserves_neighborhoods() {
        let data = random_data(50, 2, 9);
        assert_eq!(
            neighborhood_preservation(data.view(), data.view(), 5).unwrap(),
            1.0
        );
        assert!(neighborhood_preservation(data.view(), data.view(), 50).is_err());
    }

    #[test]
    fn model_text_round_trip_is_exact() {
        let data = random_data(20, 5, 10);
        let m = init_model(
            data.view(),
            &TrainConfig {
                hidden: vec![7, 3],
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        m.write_text(&mut buf).unwrap();
        let back = ChartModel::read_text(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.params_flat(), m.params_flat());
    }

    #[test]
    fn flat_params_round_trip() {
        let mut m = ChartModel::new(4, &[3], 2, Activation::Sigmoid, &mut rng(11)).unwrap();
        let p = m.params_flat();
        assert_eq!(p.len(), m.n_params());
        let q: Vec<f64> = p.iter().map(|v| v * 2.0).collect();
        m.set_params_flat(&q).unwrap();
        assert_eq!(m.params_flat(), q);
    }
}
