//! CSI feature vectors, raw second moments, path-loss scaling and the chart
//! dissimilarity measure.

use std::io::{BufRead, Write};

use ndarray::Array2;

use crate::channel::{BeamPair, ChannelSnapshot, C64};
use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

/// Dominant-path angles (sine space) plus a normalized timestamp.
///
/// Layout order is fixed: `[aoa_az, aod_el, aod_az, aoa_el, timestamp]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeatureVector {
    pub aoa_az: f64,
    pub aod_el: f64,
    pub aod_az: f64,
    pub aoa_el: f64,
    pub timestamp: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; 5] {
        [
            self.aoa_az,
            self.aod_el,
            self.aod_az,
            self.aoa_el,
            self.timestamp,
        ]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            aoa_az: a[0],
            aod_el: a[1],
            aod_az: a[2],
            aoa_el: a[3],
            timestamp: a[4],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Which components of a [`FeatureVector`] feed the chart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureMode {
    /// All five fields.
    Full,
    /// `[aoa_az, aod_az, timestamp]`.
    Azimuth,
    /// `[aod_el, aoa_el, timestamp]`.
    Elevation,
}

impl FeatureMode {
    pub fn dim(&self) -> usize {
        match self {
            FeatureMode::Full => 5,
            FeatureMode::Azimuth | FeatureMode::Elevation => 3,
        }
    }

    /// Positions of the selected fields inside the 5-field layout.
    pub fn fields(&self) -> &'static [usize] {
        match self {
            FeatureMode::Full => &[0, 1, 2, 3, 4],
            FeatureMode::Azimuth => &[0, 2, 4],
            FeatureMode::Elevation => &[1, 3, 4],
        }
    }

    pub fn select(&self, f: &FeatureVector) -> Vec<f64> {
        let a = f.to_array();
        self.fields().iter().map(|&i| a[i]).collect()
    }

    /// Writes selected values back into `base`, leaving other fields untouched.
    pub fn merge(&self, base: &FeatureVector, values: &[f64]) -> FeatureVector {
        let mut a = base.to_array();
        for (&i, &v) in self.fields().iter().zip(values) {
            a[i] = v;
        }
        FeatureVector::from_array(a)
    }

    pub fn name(&self) -> &'static str {
        match self {
            FeatureMode::Full => "full",
            FeatureMode::Azimuth => "azimuth",
            FeatureMode::Elevation => "elevation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(FeatureMode::Full),
            "azimuth" => Some(FeatureMode::Azimuth),
            "elevation" => Some(FeatureMode::Elevation),
            _ => None,
        }
    }
}

/// Feature of the dominant (max |gain|) path of a snapshot.
pub fn build_feature(snapshot: &ChannelSnapshot, timestamp: f64) -> Result<FeatureVector> {
    let i = snapshot
        .dominant_path()
        .ok_or(Error::EmptyInput("snapshot paths"))?;
    let p = &snapshot.paths[i];
    Ok(FeatureVector {
        aoa_az: p.theta_r,
        aod_el: p.elev_t,
        aod_az: p.theta_t,
        aoa_el: p.elev_r,
        timestamp,
    })
}

pub fn trajectory_features(traj: &Trajectory) -> Result<Vec<FeatureVector>> {
    traj.snapshots
        .iter()
        .enumerate()
        .map(|(t, s)| build_feature(s, traj.timestamp(t)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingParams {
    pub omega: f64,
    pub sigma: f64,
    pub beta: f64,
}

impl ScalingParams {
    /// `beta = 1 + 1/(2 sigma)`; `sigma = inf` gives `beta = 1`.
    pub fn new(omega: f64, sigma: f64) -> Result<Self> {
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(Error::config(format!(
                "path loss factor must be > 0, got {omega}"
            )));
        }
        if !(sigma > 0.0) {
            return Err(Error::config(format!(
                "path loss parameter must be > 0, got {sigma}"
            )));
        }
        let beta = if sigma.is_infinite() {
            1.0
        } else {
            1.0 + 1.0 / (2.0 * sigma)
        };
        Ok(Self { omega, sigma, beta })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecondMoment {
    pub mat: Array2<C64>,
    pub t_count: usize,
}

impl SecondMoment {
    pub fn frobenius(&self) -> f64 {
        self.mat.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Upper triangle (including the diagonal) as interleaved re/im values.
    pub fn flatten_upper(&self) -> Vec<f64> {
        let n = self.mat.nrows();
        let mut out = Vec::with_capacity(n * (n + 1));
        for i in 0..n {
            for j in i..n {
                out.push(self.mat[(i, j)].re);
                out.push(self.mat[(i, j)].im);
            }
        }
        out
    }
}

/// `(1/T) sum_t x_t x_t^H`.
pub fn raw_second_moment(samples: &[Vec<C64>]) -> Result<SecondMoment> {
    let first = samples.first().ok_or(Error::EmptyInput("sample list"))?;
    let n = first.len();
    let mut mat = Array2::<C64>::zeros((n, n));
    for x in samples {
        if x.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: x.len(),
            });
        }
        for i in 0..n {
            for j in 0..n {
                mat[(i, j)] += x[i] * x[j].conj();
            }
        }
    }
    let t = samples.len();
    mat.mapv_inplace(|v| v / t as f64);
    Ok(SecondMoment { mat, t_count: t })
}

/// `X~ = Omega^(beta-1) / ||X||_F^beta * X`.
pub fn scale_r2m(x_bar: &SecondMoment, params: &ScalingParams) -> Result<SecondMoment> {
    let norm = x_bar.frobenius();
    if !(norm > 0.0) {
        return Err(Error::DegenerateCsi);
    }
    let factor = params.omega.powf(params.beta - 1.0) / norm.powf(params.beta);
    Ok(SecondMoment {
        mat: x_bar.mat.mapv(|v| v * factor),
        t_count: x_bar.t_count,
    })
}

/// Scaled R2M features over a sliding window of `window` real feature
/// vectors, flattened to the upper triangle. One row per step; the window is
/// truncated at the start of the series.
pub fn r2m_features(
    features: &[Vec<f64>],
    window: usize,
    params: &ScalingParams,
) -> Result<Vec<Vec<f64>>> {
    if window == 0 {
        return Err(Error::config("R2M window must be >= 1"));
    }
    let mut rows = Vec::with_capacity(features.len());
    for t in 0..features.len() {
        let lo = (t + 1).saturating_sub(window);
        let samples: Vec<Vec<C64>> = features[lo..=t]
            .iter()
            .map(|f| f.iter().map(|&v| C64::new(v, 0.0)).collect())
            .collect();
        let m = scale_r2m(&raw_second_moment(&samples)?, params)?;
        // real inputs give a real symmetric moment; keep the real parts
        rows.push(m.flatten_upper().into_iter().step_by(2).collect());
    }
    Ok(rows)
}

/// Euclidean distance between two points.
pub fn dissimilarity(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// One row of the feature CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureRow {
    pub t: usize,
    pub feature: FeatureVector,
    pub truth: BeamPair,
}

pub const FEATURE_CSV_HEADER: &str = "t,aoa_az,aod_el,aod_az,aoa_el,tau,truth_m,truth_n";

pub fn feature_rows(traj: &Trajectory) -> Result<Vec<FeatureRow>> {
    Ok(trajectory_features(traj)?
        .into_iter()
        .zip(&traj.truth)
        .enumerate()
        .map(|(t, (feature, truth))| FeatureRow {
            t,
            feature,
            truth: *truth,
        })
        .collect())
}

pub fn write_feature_csv<W: Write>(rows: &[FeatureRow], mut out: W) -> Result<()> {
    writeln!(out, "{FEATURE_CSV_HEADER}")?;
    for r in rows {
        let f = &r.feature;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.t, f.aoa_az, f.aod_el, f.aod_az, f.aoa_el, f.timestamp, r.truth.rx, r.truth.tx
        )?;
    }
    Ok(())
}

pub fn read_feature_csv<R: BufRead>(input: R) -> Result<Vec<FeatureRow>> {
    let mut rows = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if idx == 0 {
            if line.trim() != FEATURE_CSV_HEADER {
                return Err(Error::parse(1, "unexpected feature CSV header"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(Error::parse(
                idx + 1,
                format!("expected 8 columns, got {}", f.len()),
            ));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse()
                .map_err(|_| Error::parse(idx + 1, format!("bad number '{}'", f[i])))
        };
        let int = |i: usize| -> Result<usize> {
            f[i].parse()
                .map_err(|_| Error::parse(idx + 1, format!("bad integer '{}'", f[i])))
        };
        rows.push(FeatureRow {
            t: int(0)?,
            feature: FeatureVector {
                aoa_az: num(1)?,
                aod_el: num(2)?,
                aod_az: num(3)?,
                aoa_el: num(4)?,
                timestamp: num(5)?,
            },
            truth: BeamPair::new(int(6)?, int(7)?),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{channel_matrix, ArrayGeometry, Path};

    fn snap(paths: &[Path]) -> ChannelSnapshot {
        let g = ArrayGeometry::ula(4);
        channel_matrix(paths, &g, &g, 0).unwrap()
    }

    #[test]
    fn feature_copies_dominant_path_fields() {
        let p = Path::new(C64::new(1.0, 0.0), -0.2, 0.3).with_elevations(0.1, 0.0);
        let f = build_feature(&snap(&[p]), 0.5).unwrap();
        assert_eq!(f.to_array(), [0.3, 0.1, -0.2, 0.0, 0.5]);
    }

    #[test]
    fn stronger_second_path_wins() {
        let a = Path::new(C64::new(0.2, 0.0), 0.1, 0.1).with_elevations(0.0, 0.0);
        let b = Path::new(C64::new(0.0, -0.9), -0.4, 0.6).with_elevations(0.2, -0.3);
        let f = build_feature(&snap(&[a, b]), 0.0).unwrap();
        assert_eq!(f.aoa_az, 0.6);
        assert_eq!(f.aod_az, -0.4);
    }

    #[test]
    fn mode_selection_and_merge() {
        let f = FeatureVector::from_array([1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(FeatureMode::Azimuth.select(&f), vec![1.0, 3.0, 5.0]);
        assert_eq!(FeatureMode::Elevation.select(&f), vec![2.0, 4.0, 5.0]);
        let m = FeatureMode::Elevation.merge(&f, &[9.0, 8.0, 7.0]);
        assert_eq!(m.to_array(), [1.0, 9.0, 3.0, 8.0, 7.0]);
    }

    #[test]
    fn single_outer_product() {
        let x = vec![C64::new(1.0, 0.0), C64::new(0.0, 1.0)];
        let m = raw_second_moment(&[x]).unwrap();
        assert_eq!(m.mat[(0, 0)], C64::new(1.0, 0.0));
        assert_eq!(m.mat[(0, 1)], C64::new(0.0, -1.0));
        assert_eq!(m.mat[(1, 0)], C64::new(0.0, 1.0));
        assert_eq!(m.mat[(1, 1)], C64::new(1.0, 0.0));
        assert!(raw_second_moment(&[]).is_err());
    }

    #[test]
    fn orthonormal_pair_gives_half_identity() {
        let e1 = vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
        let e2 = vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)];
        let m = raw_second_moment(&[e1, e2]).unwrap();
        assert_eq!(m.mat[(0, 0)], C64::new(0.5, 0.0));
        assert_eq!(m.mat[(1, 1)], C64::new(0.5, 0.0));
        assert_eq!(m.mat[(0, 1)], C64::new(0.0, 0.0));
        assert_eq!(m.t_count, 2);
    }

    #[test]
    fn scaling_exponent() {
        assert_eq!(ScalingParams::new(2.0, f64::INFINITY).unwrap().beta, 1.0);
        assert_eq!(ScalingParams::new(1.0, 0.5).unwrap().beta, 2.0);
        assert!(ScalingParams::new(0.0, 1.0).is_err());
        assert!(ScalingParams::new(1.0, 0.0).is_err());
    }

    #[test]
    fn unit_beta_normalizes() {
        let x = vec![C64::new(3.0, 0.0), C64::new(0.0, 4.0)];
        let m = raw_second_moment(&[x]).unwrap();
        let s = scale_r2m(&m, &ScalingParams::new(2.0, f64::INFINITY).unwrap()).unwrap();
        let norm = m.frobenius();
        for (a, b) in s.mat.iter().zip(m.mat.iter()) {
            assert!((a - b / norm).norm() < 1e-15);
        }
        let zero = SecondMoment {
            mat: Array2::zeros((2, 2)),
            t_count: 1,
        };
        assert!(matches!(
            scale_r2m(&zero, &ScalingParams::new(1.0, 1.0).unwrap()),
            Err(Error::DegenerateCsi)
        ));
    }

    #[test]
    fn distance_examples() {
        assert_eq!(dissimilarity(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(dissimilarity(&[0.0, 0.0], &[3.0, 4.0]), 5.0);
    }

    #[test]
    fn r2m_feature_rows_have_triangle_size() {
        let feats: Vec<Vec<f64>> = (0..6).map(|i| vec![1.0 + i as f64, 0.5, -0.25]).collect();
        let rows = r2m_features(&feats, 3, &ScalingParams::new(1.0, 1.0).unwrap()).unwrap();
        assert_eq!(rows.len(), 6);
        assert!(rows.iter().all(|r| r.len() == 6));
    }

    #[test]
    fn feature_csv_round_trip() {
        let rows = vec![FeatureRow {
            t: 3,
            feature: FeatureVector::from_array([0.1, -0.2, 0.3, 1.0 / 3.0, 0.5]),
            truth: BeamPair::new(7, 60),
        }];
        let mut buf = Vec::new();
        write_feature_csv(&rows, &mut buf).unwrap();
        assert_eq!(read_feature_csv(buf.as_slice()).unwrap(), rows);
    }
}
