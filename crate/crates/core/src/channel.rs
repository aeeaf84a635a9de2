//! Narrowband mmWave channel model.
//!
//! Spatial angles are stored in sine space (`theta = sin(phi)`, in `[-1, 1]`).
//! ULA steering vectors and DFT codebook columns are unit-norm; the planar
//! element response is left unnormalized (every element has unit magnitude).

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Default inter-element spacing in wavelengths.
pub const HALF_WAVELENGTH: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArrayKind {
    Ula { n: usize },
    Planar { rows: usize, cols: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayGeometry {
    pub kind: ArrayKind,
    /// Element spacing in wavelengths (d / lambda).
    pub spacing: f64,
}

impl ArrayGeometry {
    pub fn ula(n: usize) -> Self {
        Self {
            kind: ArrayKind::Ula { n },
            spacing: HALF_WAVELENGTH,
        }
    }

    pub fn planar(rows: usize, cols: usize) -> Self {
        Self {
            kind: ArrayKind::Planar { rows, cols },
            spacing: HALF_WAVELENGTH,
        }
    }

    pub fn with_spacing(mut self, spacing: f64) -> Self {
        self.spacing = spacing;
        self
    }

    pub fn n_elements(&self) -> usize {
        match self.kind {
            ArrayKind::Ula { n } => n,
            ArrayKind::Planar { rows, cols } => rows * cols,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_elements() == 0 {
            return Err(Error::config("array needs at least one element"));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::config(format!(
                "element spacing must be positive, got {}",
                self.spacing
            )));
        }
        Ok(())
    }
}

/// One propagation path of the sparse angular-domain model.
///
/// `theta_t` / `theta_r` drive the ULA steering vectors. The elevation
/// components are carried along in sine space for feature extraction only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub gain: C64,
    pub theta_t: f64,
    pub theta_r: f64,
    pub elev_t: f64,
    pub elev_r: f64,
}

impl Path {
    pub fn new(gain: C64, theta_t: f64, theta_r: f64) -> Self {
        Self {
            gain,
            theta_t,
            theta_r,
            elev_t: 0.0,
            elev_r: 0.0,
        }
    }

    pub fn with_elevations(mut self, elev_t: f64, elev_r: f64) -> Self {
        self.elev_t = elev_t;
        self.elev_r = elev_r;
        self
    }
}

/// Path description for planar arrays; angles in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarPath {
    pub gain: C64,
    pub azimuth_t: f64,
    pub elevation_t: f64,
    pub azimuth_r: f64,
    pub elevation_r: f64,
}

/// A (receiver combiner `rx` = m, transmitter precoder `tx` = n) index pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct BeamPair {
    pub rx: usize,
    pub tx: usize,
}

impl BeamPair {
    pub fn new(rx: usize, tx: usize) -> Self {
        Self { rx, tx }
    }
}

#[derive(Debug, Clone)]
pub struct ChannelSnapshot {
    pub t: usize,
    pub paths: Vec<Path>,
    /// N_r x N_t channel matrix.
    pub h: Array2<C64>,
}

impl ChannelSnapshot {
    pub fn n_r(&self) -> usize {
        self.h.nrows()
    }

    pub fn n_t(&self) -> usize {
        self.h.ncols()
    }

    /// Index of the strongest path (max |gain|, lowest index on ties).
    pub fn dominant_path(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in self.paths.iter().enumerate() {
            let g = p.gain.norm();
            if best.is_none_or(|(_, bg)| g > bg) {
                best = Some((i, g));
            }
        }
        best.map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Tx,
    Rx,
}

/// DFT beamforming codebook; column k is `c_k`.
#[derive(Debug, Clone)]
pub struct Codebook {
    pub vectors: Array2<C64>,
    pub side: Side,
    spacing: f64,
}

impl Codebook {
    pub fn size(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn column(&self, k: usize) -> Array1<C64> {
        self.vectors.column(k).to_owned()
    }

    pub fn with_side(mut self, side: Side) -> Self {
        self.side = side;
        self
    }

    /// Sine-space angle of beam `k`'s main lobe, wrapped into one grating period.
    pub fn beam_center(&self, k: usize) -> f64 {
        beam_center_angle(k, self.size(), self.spacing)
    }

    /// Nearest codebook index for a spatial angle.
    pub fn quantize(&self, theta: f64) -> usize {
        quantize_angle(theta, self.size(), self.spacing)
    }

    /// `c_k^H a(theta)` for every k, using the closed-form geometric sum.
    pub fn project_steering(&self, theta: f64) -> Vec<C64> {
        let n = self.size();
        (0..n)
            .map(|k| dft_steering_inner(k, theta, n, self.spacing))
            .collect()
    }
}

/// Unit-norm ULA response `exp(j 2 pi i d theta) / sqrt(N)`.
pub fn array_response(theta: f64, geometry: &ArrayGeometry) -> Result<Array1<C64>> {
    geometry.validate()?;
    let n = match geometry.kind {
        ArrayKind::Ula { n } => n,
        ArrayKind::Planar { .. } => {
            return Err(Error::config("array_response needs a ULA geometry"));
        }
    };
    if !(theta.abs() <= 1.0) {
        return Err(Error::InvalidAngle(theta));
    }
    Ok(ula_response_unchecked(theta, n, geometry.spacing))
}

pub(crate) fn ula_response_unchecked(theta: f64, n: usize, spacing: f64) -> Array1<C64> {
    let norm = 1.0 / (n as f64).sqrt();
    Array1::from_iter((0..n).map(|i| C64::from_polar(norm, 2.0 * PI * i as f64 * spacing * theta)))
}

/// Planar element responses `exp(jk(x_m sin(phi) cos(alpha) + y_n sin(phi) sin(alpha)))`,
/// flattened row-major over (m, n). Not normalized.
pub fn planar_response(alpha: f64, phi: f64, geometry: &ArrayGeometry) -> Result<Array1<C64>> {
    geometry.validate()?;
    let (rows, cols) = match geometry.kind {
        ArrayKind::Planar { rows, cols } => (rows, cols),
        ArrayKind::Ula { .. } => {
            return Err(Error::config("planar_response needs a planar geometry"));
        }
    };
    let ux = phi.sin() * alpha.cos();
    let uy = phi.sin() * alpha.sin();
    // k * x_m = 2 pi * m * d / lambda
    let kd = 2.0 * PI * geometry.spacing;
    let mut out = Array1::zeros(rows * cols);
    for m in 0..rows {
        for n in 0..cols {
            out[m * cols + n] = C64::from_polar(1.0, kd * (m as f64 * ux + n as f64 * uy));
        }
    }
    Ok(out)
}

/// DFT codebook with columns `exp(j 2 pi i k / N) / sqrt(N)`.
pub fn dft_codebook(n: usize) -> Result<Codebook> {
    if n == 0 {
        return Err(Error::config("codebook size must be at least 1"));
    }
    let norm = 1.0 / (n as f64).sqrt();
    let vectors = Array2::from_shape_fn((n, n), |(i, k)| {
        let phase = 2.0 * PI * ((i * k) % n) as f64 / n as f64;
        C64::from_polar(norm, phase)
    });
    Ok(Codebook {
        vectors,
        side: Side::Tx,
        spacing: HALF_WAVELENGTH,
    })
}

/// Kronecker DFT codebook for a `rows x cols` planar array, flattened row-major.
pub fn planar_dft_codebook(rows: usize, cols: usize) -> Result<Codebook> {
    let a = dft_codebook(rows)?;
    let b = dft_codebook(cols)?;
    let n = rows * cols;
    let mut vectors = Array2::zeros((n, n));
    for ka in 0..rows {
        for kb in 0..cols {
            let col = ka * cols + kb;
            for ia in 0..rows {
                for ib in 0..cols {
                    vectors[(ia * cols + ib, col)] = a.vectors[(ia, ka)] * b.vectors[(ib, kb)];
                }
            }
        }
    }
    Ok(Codebook {
        vectors,
        side: Side::Tx,
        spacing: HALF_WAVELENGTH,
    })
}

/// Beam-center angle of DFT column `k`: solves `d * theta = k / N (mod 1)`
/// on the period `[-1/(2d), 1/(2d))`. For `d = 1/2` this is `2k/N` for
/// `k < N/2` and `2(k - N)/N` otherwise.
pub fn beam_center_angle(k: usize, n: usize, spacing: f64) -> f64 {
    let k = k % n;
    let signed = if 2 * k < n {
        k as f64
    } else {
        k as f64 - n as f64
    };
    signed / (n as f64 * spacing)
}

/// Nearest DFT index for a spatial angle (inverse of [`beam_center_angle`]).
pub fn quantize_angle(theta: f64, n: usize, spacing: f64) -> usize {
    let idx = (theta * spacing * n as f64).round() as i64;
    idx.rem_euclid(n as i64) as usize
}

/// `c_k^H a(theta)` for an N-element DFT column and ULA steering vector.
fn dft_steering_inner(k: usize, theta: f64, n: usize, spacing: f64) -> C64 {
    // (1/N) sum_i exp(j 2 pi i x), x = d theta - k/N
    let x = spacing * theta - k as f64 / n as f64;
    let frac = x - x.round();
    if frac.abs() < 1e-12 {
        return C64::new(1.0, 0.0);
    }
    let num = C64::from_polar(1.0, 2.0 * PI * n as f64 * x) - 1.0;
    let den = C64::from_polar(1.0, 2.0 * PI * x) - 1.0;
    num / den / n as f64
}

/// `H = sum_l beta_l a_r(theta_r) a_t(theta_t)^H` for ULAs at both ends.
pub fn channel_matrix(
    paths: &[Path],
    tx: &ArrayGeometry,
    rx: &ArrayGeometry,
    t: usize,
) -> Result<ChannelSnapshot> {
    if paths.is_empty() {
        return Err(Error::EmptyInput("path list"));
    }
    tx.validate()?;
    rx.validate()?;
    let (n_t, n_r) = match (tx.kind, rx.kind) {
        (ArrayKind::Ula { n: nt }, ArrayKind::Ula { n: nr }) => (nt, nr),
        _ => return Err(Error::config("channel_matrix needs ULA geometries")),
    };
    let mut h = Array2::<C64>::zeros((n_r, n_t));
    for p in paths {
        if !(p.theta_t.abs() <= 1.0) {
            return Err(Error::InvalidAngle(p.theta_t));
        }
        if !(p.theta_r.abs() <= 1.0) {
            return Err(Error::InvalidAngle(p.theta_r));
        }
        let ar = ula_response_unchecked(p.theta_r, n_r, rx.spacing);
        let at = ula_response_unchecked(p.theta_t, n_t, tx.spacing);
        for i in 0..n_r {
            let gi = p.gain * ar[i];
            for k in 0..n_t {
                h[(i, k)] += gi * at[k].conj();
            }
        }
    }
    Ok(ChannelSnapshot {
        t,
        paths: paths.to_vec(),
        h,
    })
}

/// Planar-array variant: `H = sum_l beta_l a_p,r a_p,t^H` (element responses unnormalized).
pub fn planar_channel_matrix(
    paths: &[PlanarPath],
    tx: &ArrayGeometry,
    rx: &ArrayGeometry,
) -> Result<Array2<C64>> {
    if paths.is_empty() {
        return Err(Error::EmptyInput("path list"));
    }
    let mut h = Array2::<C64>::zeros((rx.n_elements(), tx.n_elements()));
    for p in paths {
        let ar = planar_response(p.azimuth_r, p.elevation_r, rx)?;
        let at = planar_response(p.azimuth_t, p.elevation_t, tx)?;
        for i in 0..ar.len() {
            for k in 0..at.len() {
                h[(i, k)] += p.gain * ar[i] * at[k].conj();
            }
        }
    }
    Ok(h)
}

/// `w^H H f`.
pub fn effective_gain(h: &Array2<C64>, f: &Array1<C64>, w: &Array1<C64>) -> Result<C64> {
    if h.ncols() != f.len() {
        return Err(Error::DimensionMismatch {
            expected: h.ncols(),
            got: f.len(),
        });
    }
    if h.nrows() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: h.nrows(),
            got: w.len(),
        });
    }
    let hf = h.dot(f);
    Ok(w.iter().zip(hf.iter()).map(|(wi, v)| wi.conj() * v).sum())
}

/// `y = w^H H f x + w^H n` with circular complex Gaussian `n` of per-element
/// variance `noise_var`. Deterministic (no RNG draws) when `noise_var == 0`.
pub fn received_signal<R: Rng + ?Sized>(
    h: &Array2<C64>,
    f: &Array1<C64>,
    w: &Array1<C64>,
    x: C64,
    noise_var: f64,
    rng: &mut R,
) -> Result<C64> {
    if !(noise_var >= 0.0) {
        return Err(Error::config(format!("noise variance {noise_var} < 0")));
    }
    let signal = effective_gain(h, f, w)? * x;
    if noise_var == 0.0 {
        return Ok(signal);
    }
    let scale = (noise_var / 2.0).sqrt();
    let noise: C64 = w
        .iter()
        .map(|wi| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            wi.conj() * C64::new(re * scale, im * scale)
        })
        .sum();
    Ok(signal + noise)
}

/// Full-codebook argmax of `|w_m^H H f_n|^2`; ties go to the lowest (m, n).
pub fn best_beam_oracle(
    h: &Array2<C64>,
    cb_tx: &Codebook,
    cb_rx: &Codebook,
) -> Result<(BeamPair, f64)> {
    if cb_tx.vectors.nrows() != h.ncols() {
        return Err(Error::DimensionMismatch {
            expected: h.ncols(),
            got: cb_tx.vectors.nrows(),
        });
    }
    if cb_rx.vectors.nrows() != h.nrows() {
        return Err(Error::DimensionMismatch {
            expected: h.nrows(),
            got: cb_rx.vectors.nrows(),
        });
    }
    // G = W^H (H F)
    let hf = h.dot(&cb_tx.vectors);
    let wh = cb_rx.vectors.t().mapv(|v| v.conj());
    let g = wh.dot(&hf);
    let mut best = (BeamPair::new(0, 0), f64::NEG_INFINITY);
    for m in 0..g.nrows() {
        for n in 0..g.ncols() {
            let p = g[(m, n)].norm_sqr();
            if p > best.1 {
                best = (BeamPair::new(m, n), p);
            }
        }
    }
    Ok(best)
}

/// `10 log10(tx_power |w_m^H H f_n|^2 / noise_var)`; `+inf` when noise_var is 0.
pub fn snr_of_pair(
    h: &Array2<C64>,
    cb_tx: &Codebook,
    cb_rx: &Codebook,
    pair: BeamPair,
    noise_var: f64,
    tx_power: f64,
) -> Result<f64> {
    if pair.tx >= cb_tx.size() || pair.rx >= cb_rx.size() {
        return Err(Error::config(format!(
            "beam pair {pair:?} outside codebooks {}x{}",
            cb_rx.size(),
            cb_tx.size()
        )));
    }
    let g = effective_gain(h, &cb_tx.column(pair.tx), &cb_rx.column(pair.rx))?;
    Ok(snr_db(g.norm_sqr(), noise_var, tx_power))
}

pub fn snr_db(power: f64, noise_var: f64, tx_power: f64) -> f64 {
    if noise_var == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (tx_power * power / noise_var).log10()
}

/// Beamspace response of one snapshot, factorized per path:
/// `w_m^H H f_n = sum_l beta_l (w_m^H a_r,l) (a_t,l^H f_n)`.
///
/// Valid for DFT codebooks and ULA steering at the codebook's spacing.
#[derive(Debug, Clone)]
pub struct BeamResponse {
    terms: Vec<(C64, Vec<C64>, Vec<C64>)>,
    n_t: usize,
    n_r: usize,
}

impl BeamResponse {
    pub fn new(paths: &[Path], cb_tx: &Codebook, cb_rx: &Codebook) -> Self {
        let terms = paths
            .iter()
            .map(|p| {
                let rx = cb_rx.project_steering(p.theta_r);
                // a_t^H f_n = conj(f_n^H a_t)
                let tx = cb_tx
                    .project_steering(p.theta_t)
                    .into_iter()
                    .map(|v| v.conj())
                    .collect();
                (p.gain, rx, tx)
            })
            .collect();
        Self {
            terms,
            n_t: cb_tx.size(),
            n_r: cb_rx.size(),
        }
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn gain(&self, pair: BeamPair) -> C64 {
        self.terms
            .iter()
            .map(|(b, rx, tx)| b * rx[pair.rx] * tx[pair.tx])
            .sum()
    }

    pub fn power(&self, pair: BeamPair) -> f64 {
        self.gain(pair).norm_sqr()
    }

    /// Argmax of power over `rx_set x tx_set` in the given iteration order;
    /// strict improvement keeps the earliest maximizer.
    pub fn best_in(&self, rx_set: &[usize], tx_set: &[usize]) -> Option<(BeamPair, f64)> {
        let mut best: Option<(BeamPair, f64)> = None;
        for &m in rx_set {
            for &n in tx_set {
                let pair = BeamPair::new(m, n);
                let p = self.power(pair);
                if best.is_none_or(|(_, bp)| p > bp) {
                    best = Some((pair, p));
                }
            }
        }
        best
    }

    /// Exhaustive search with the oracle's lexicographic tie-break.
    pub fn best(&self) -> (BeamPair, f64) {
        let mut best = (BeamPair::new(0, 0), f64::NEG_INFINITY);
        for m in 0..self.n_r {
            for n in 0..self.n_t {
                let pair = BeamPair::new(m, n);
                let p = self.power(pair);
                if p > best.1 {
                    best = (pair, p);
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: C64, b: C64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn zero_angle_response_is_flat() {
        let a = array_response(0.0, &ArrayGeometry::ula(4)).unwrap();
        for v in a.iter() {
            assert!(close(*v, C64::new(0.5, 0.0), 1e-15));
        }
    }

    #[test]
    fn endfire_response_alternates() {
        let a = array_response(1.0, &ArrayGeometry::ula(2)).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert!(close(a[0], C64::new(s, 0.0), 1e-15));
        assert!(close(a[1], C64::new(-s, 0.0), 1e-15));
    }

    #[test]
    fn rejects_out_of_range_angle() {
        assert!(matches!(
            array_response(1.2, &ArrayGeometry::ula(4)),
            Err(Error::InvalidAngle(_))
        ));
        assert!(array_response(f64::NAN, &ArrayGeometry::ula(4)).is_err());
        assert!(array_response(0.0, &ArrayGeometry::planar(2, 2)).is_err());
    }

    #[test]
    fn planar_broadside_is_all_ones() {
        let a = planar_response(0.7, 0.0, &ArrayGeometry::planar(2, 2)).unwrap();
        assert_eq!(a.len(), 4);
        for v in a.iter() {
            assert!(close(*v, C64::new(1.0, 0.0), 1e-15));
        }
        let single = planar_response(0.3, 1.1, &ArrayGeometry::planar(1, 1)).unwrap();
        assert!(close(single[0], C64::new(1.0, 0.0), 1e-15));
    }

    #[test]
    fn small_codebooks() {
        let c1 = dft_codebook(1).unwrap();
        assert!(close(c1.vectors[(0, 0)], C64::new(1.0, 0.0), 1e-15));
        let c2 = dft_codebook(2).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert!(close(c2.vectors[(0, 0)], C64::new(s, 0.0), 1e-15));
        assert!(close(c2.vectors[(1, 0)], C64::new(s, 0.0), 1e-15));
        assert!(close(c2.vectors[(0, 1)], C64::new(s, 0.0), 1e-15));
        assert!(close(c2.vectors[(1, 1)], C64::new(-s, 0.0), 1e-15));
        assert!(dft_codebook(0).is_err());
    }

    #[test]
    fn beam_centers_round_trip_through_quantizer() {
        for &n in &[1usize, 2, 4, 16, 64, 128] {
            for k in 0..n {
                let theta = beam_center_angle(k, n, HALF_WAVELENGTH);
                assert!((-1.0..1.0).contains(&theta));
                assert_eq!(quantize_angle(theta, n, HALF_WAVELENGTH), k);
            }
        }
        assert_eq!(beam_center_angle(63, 64, 0.5), 2.0 * (63.0 - 64.0) / 64.0);
        assert_eq!(beam_center_angle(5, 64, 0.5), 10.0 / 64.0);
    }

    #[test]
    fn closed_form_projection_matches_direct_sum() {
        let cb = dft_codebook(16).unwrap();
        for &theta in &[-0.93, -0.5, 0.0, 0.125, 0.31, 0.999] {
            let a = ula_response_unchecked(theta, 16, 0.5);
            let fast = cb.project_steering(theta);
            for (k, f) in fast.iter().enumerate() {
                let direct: C64 = (0..16).map(|i| cb.vectors[(i, k)].conj() * a[i]).sum();
                assert!(close(*f, direct, 1e-12), "k={k} theta={theta}");
            }
        }
    }

    #[test]
    fn single_path_channel_entries() {
        let p = Path::new(C64::new(1.0, 0.0), 0.0, 0.0);
        let snap = channel_matrix(&[p], &ArrayGeometry::ula(2), &ArrayGeometry::ula(2), 0).unwrap();
        for v in snap.h.iter() {
            assert!(close(*v, C64::new(0.5, 0.0), 1e-15));
        }
        assert!(channel_matrix(&[], &ArrayGeometry::ula(2), &ArrayGeometry::ula(2), 0).is_err());
    }

    #[test]
    fn aligned_beams_give_unit_signal() {
        let geo = ArrayGeometry::ula(8);
        let p = Path::new(C64::new(1.0, 0.0), 0.25, -0.5);
        let snap = channel_matrix(&[p], &geo, &geo, 0).unwrap();
        let f = array_response(0.25, &geo).unwrap();
        let w = array_response(-0.5, &geo).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = received_signal(&snap.h, &f, &w, C64::new(1.0, 0.0), 0.0, &mut rng).unwrap();
        assert!(close(y, C64::new(1.0, 0.0), 1e-12));
        let zero = Array2::<C64>::zeros((8, 8));
        let y0 = received_signal(&zero, &f, &w, C64::new(1.0, 0.0), 0.0, &mut rng).unwrap();
        assert_eq!(y0, C64::new(0.0, 0.0));
        assert!(received_signal(&zero, &f, &w, C64::new(1.0, 0.0), -1.0, &mut rng).is_err());
    }

    #[test]
    fn noisy_signal_has_expected_noise_power() {
        let geo = ArrayGeometry::ula(4);
        let zero = Array2::<C64>::zeros((4, 4));
        let f = array_response(0.0, &geo).unwrap();
        let w = array_response(0.0, &geo).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let trials = 20_000;
        let mean_pow: f64 = (0..trials)
            .map(|_| {
                received_signal(&zero, &f, &w, C64::new(1.0, 0.0), 2.0, &mut rng)
                    .unwrap()
                    .norm_sqr()
            })
            .sum::<f64>()
            / trials as f64;
        // unit-norm combiner keeps per-element variance
        assert!((mean_pow - 2.0).abs() < 0.1, "{mean_pow}");
    }

    #[test]
    fn snr_examples() {
        assert_eq!(snr_db(1.0, 1.0, 1.0), 0.0);
        let shift = snr_db(1.0, 0.5, 1.0) - snr_db(1.0, 1.0, 1.0);
        assert!((shift - 3.010299956639812).abs() < 1e-12);
        assert_eq!(snr_db(1.0, 0.0, 1.0), f64::INFINITY);
    }

    #[test]
    fn trivial_oracle() {
        let geo = ArrayGeometry::ula(1);
        let snap =
            channel_matrix(&[Path::new(C64::new(0.3, 0.1), 0.0, 0.0)], &geo, &geo, 0).unwrap();
        let cb = dft_codebook(1).unwrap();
        let (pair, _) = best_beam_oracle(&snap.h, &cb, &cb).unwrap();
        assert_eq!(pair, BeamPair::new(0, 0));
    }

    #[test]
    fn dominant_path_prefers_first_on_ties() {
        let p = Path::new(C64::new(1.0, 0.0), 0.0, 0.0);
        let q = Path::new(C64::new(0.0, 1.0), 0.5, 0.5);
        let geo = ArrayGeometry::ula(4);
        let snap = channel_matrix(&[p, q], &geo, &geo, 0).unwrap();
        assert_eq!(snap.dominant_path(), Some(0));
    }
}
