//! Seeded, piecewise-stationary UE trajectories.
//!
//! A trajectory is a sequence of segments. Inside a segment every path angle
//! performs a bounded uniform walk (reflected at +-1) and gains are constant.
//! At a segment boundary the line-of-sight path may toggle between clear and
//! blocked; blocking attenuates it so the next strongest path takes over,
//! which moves the best beam pair abruptly.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{
    channel_matrix, dft_codebook, ArrayGeometry, BeamPair, BeamResponse, ChannelSnapshot, Codebook,
    Path, Side, C64,
};
use crate::error::{Error, Result};

/// Nominal path magnitudes; index 0 is the line-of-sight path. Successive
/// ratios stay below the worst-case straddle loss of a DFT beam pair
/// ((2/pi)^2 in magnitude) so the best beam follows the strongest path.
const PATH_PROFILE: [f64; 5] = [1.0, 0.35, 0.12, 0.045, 0.016];
/// Minimum sine-space separation between initial path angles.
const MIN_PATH_SEPARATION: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub n_steps: usize,
    pub step_seconds: f64,
    /// Segment length (steps) while the line-of-sight path is clear.
    pub segment_length_los: usize,
    /// Segment length (steps) while it is blocked.
    pub segment_length_nlos: usize,
    pub max_clusters: usize,
    /// Max per-step change of any sine-space angle.
    pub angular_drift_rate: f64,
    /// Probability that a segment boundary toggles blockage.
    pub jump_probability: f64,
    /// Magnitude factor applied to a blocked line-of-sight path.
    pub blockage_attenuation: f64,
    /// Steps at which blockage toggles unconditionally.
    pub forced_jumps: Vec<usize>,
    pub noise_var: f64,
    pub tx_power: f64,
    pub n_t: usize,
    pub n_r: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_steps: 200,
            step_seconds: 1.0,
            segment_length_los: 20,
            segment_length_nlos: 45,
            max_clusters: 5,
            angular_drift_rate: 0.01,
            jump_probability: 0.1,
            blockage_attenuation: 0.1,
            forced_jumps: Vec::new(),
            noise_var: 1e-3,
            tx_power: 1.0,
            n_t: 64,
            n_r: 64,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps < 2 {
            return Err(Error::config(format!(
                "n_steps must be >= 2, got {}",
                self.n_steps
            )));
        }
        if self.max_clusters < 1 {
            return Err(Error::config("max_clusters must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.jump_probability) {
            return Err(Error::config(format!(
                "jump_probability {} outside [0, 1]",
                self.jump_probability
            )));
        }
        if !(self.angular_drift_rate >= 0.0 && self.angular_drift_rate <= 1.0) {
            return Err(Error::config("angular_drift_rate must lie in [0, 1]"));
        }
        if self.segment_length_los == 0 || self.segment_length_nlos == 0 {
            return Err(Error::config("segment lengths must be positive"));
        }
        if self.n_t == 0 || self.n_r == 0 {
            return Err(Error::config("codebook sizes must be positive"));
        }
        if !(self.noise_var >= 0.0) || !(self.tx_power > 0.0) {
            return Err(Error::config("noise_var must be >= 0 and tx_power > 0"));
        }
        if !(self.blockage_attenuation >= 0.0 && self.blockage_attenuation <= 1.0) {
            return Err(Error::config("blockage_attenuation must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn tx_geometry(&self) -> ArrayGeometry {
        ArrayGeometry::ula(self.n_t)
    }

    pub fn rx_geometry(&self) -> ArrayGeometry {
        ArrayGeometry::ula(self.n_r)
    }

    pub fn codebooks(&self) -> Result<(Codebook, Codebook)> {
        Ok((
            dft_codebook(self.n_t)?.with_side(Side::Tx),
            dft_codebook(self.n_r)?.with_side(Side::Rx),
        ))
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub config: ScenarioConfig,
    pub snapshots: Vec<ChannelSnapshot>,
    pub truth: Vec<BeamPair>,
    pub segment_ids: Vec<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Normalized timestamp `t / (n - 1)` of step `t`.
    pub fn timestamp(&self, t: usize) -> f64 {
        normalized_time(t, self.len())
    }

    /// Steps whose best beam moved by more than `min_jump` indices on either side.
    pub fn jump_steps(&self, min_jump: usize) -> Vec<usize> {
        let n_t = self.config.n_t;
        let n_r = self.config.n_r;
        (1..self.truth.len())
            .filter(|&t| {
                let a = self.truth[t - 1];
                let b = self.truth[t];
                ring_distance(a.tx, b.tx, n_t) > min_jump
                    || ring_distance(a.rx, b.rx, n_r) > min_jump
            })
            .collect()
    }

    /// Writes the line-oriented replay format: a header, then one step per line
    /// (`t segment L` followed by `re im theta_t theta_r elev_t elev_r` per path).
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        let c = &self.config;
        writeln!(
            out,
            "chartbeam-trajectory v1 n_t={} n_r={} n_steps={} noise_var={} tx_power={} seed={}",
            c.n_t,
            c.n_r,
            self.len(),
            c.noise_var,
            c.tx_power,
            c.seed
        )?;
        for (snap, seg) in self.snapshots.iter().zip(&self.segment_ids) {
            let mut line = format!("{} {} {}", snap.t, seg, snap.paths.len());
            for p in &snap.paths {
                write!(
                    line,
                    " {} {} {} {} {} {}",
                    p.gain.re, p.gain.im, p.theta_t, p.theta_r, p.elev_t, p.elev_r
                )
                .expect("string write");
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// Reads the replay format and recomputes channel matrices and oracle truth.
    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::EmptyInput("trajectory file"))?;
        let header = header?;
        let mut tokens = header.split_whitespace();
        if tokens.next() != Some("chartbeam-trajectory") || tokens.next() != Some("v1") {
            return Err(Error::parse(1, "missing 'chartbeam-trajectory v1' header"));
        }
        let mut config = ScenarioConfig::default();
        for tok in tokens {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::parse(1, format!("bad header token '{tok}'")))?;
            let bad = || Error::parse(1, format!("bad value for {k}: '{v}'"));
            match k {
                "n_t" => config.n_t = v.parse().map_err(|_| bad())?,
                "n_r" => config.n_r = v.parse().map_err(|_| bad())?,
                "n_steps" => config.n_steps = v.parse().map_err(|_| bad())?,
                "noise_var" => config.noise_var = v.parse().map_err(|_| bad())?,
                "tx_power" => config.tx_power = v.parse().map_err(|_| bad())?,
                "seed" => config.seed = v.parse().map_err(|_| bad())?,
                _ => return Err(Error::parse(1, format!("unknown header key '{k}'"))),
            }
        }
        let (cb_tx, cb_rx) = config.codebooks()?;
        let tx = config.tx_geometry();
        let rx = config.rx_geometry();
        let mut snapshots = Vec::new();
        let mut truth = Vec::new();
        let mut segment_ids = Vec::new();
        for (idx, line) in lines {
            let line = line?;
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<&str> = line.split_whitespace().collect();
            if vals.len() < 3 {
                return Err(Error::parse(lineno, "expected 't segment L ...'"));
            }
            let t: usize = vals[0].parse().map_err(|_| Error::parse(lineno, "bad t"))?;
            let seg: usize = vals[1]
                .parse()
                .map_err(|_| Error::parse(lineno, "bad segment id"))?;
            let l: usize = vals[2].parse().map_err(|_| Error::parse(lineno, "bad L"))?;
            if vals.len() != 3 + 6 * l {
                return Err(Error::parse(
                    lineno,
                    format!("expected {} fields, found {}", 3 + 6 * l, vals.len()),
                ));
            }
            let num = |i: usize| -> Result<f64> {
                vals[i]
                    .parse()
                    .map_err(|_| Error::parse(lineno, format!("bad number '{}'", vals[i])))
            };
            let mut paths = Vec::with_capacity(l);
            for p in 0..l {
                let b = 3 + 6 * p;
                paths.push(
                    Path::new(C64::new(num(b)?, num(b + 1)?), num(b + 2)?, num(b + 3)?)
                        .with_elevations(num(b + 4)?, num(b + 5)?),
                );
            }
            let snap = channel_matrix(&paths, &tx, &rx, t)?;
            truth.push(BeamResponse::new(&snap.paths, &cb_tx, &cb_rx).best().0);
            snapshots.push(snap);
            segment_ids.push(seg);
        }
        if snapshots.len() != config.n_steps {
            return Err(Error::parse(
                0,
                format!(
                    "header says {} steps, found {}",
                    config.n_steps,
                    snapshots.len()
                ),
            ));
        }
        Ok(Self {
            config,
            snapshots,
            truth,
            segment_ids,
        })
    }
}

pub fn normalized_time(t: usize, n_steps: usize) -> f64 {
    if n_steps <= 1 {
        0.0
    } else {
        t as f64 / (n_steps - 1) as f64
    }
}

/// Distance between two indices on a ring of size `n`.
pub fn ring_distance(a: usize, b: usize, n: usize) -> usize {
    let d = a.abs_diff(b) % n;
    d.min(n - d)
}

fn reflect(mut x: f64) -> f64 {
    // one reflection suffices for steps <= 1
    if x > 1.0 {
        x = 2.0 - x;
    } else if x < -1.0 {
        x = -2.0 - x;
    }
    x
}

/// Stateful walk behind [`generate_trajectory`]; keeps going across
/// trajectory boundaries for drifting streams.
#[derive(Debug, Clone)]
pub struct TrajectoryWalker {
    config: ScenarioConfig,
    rng: ChaCha8Rng,
    base: Vec<Path>,
    blocked: bool,
    segment_id: usize,
    left_in_segment: usize,
    global_step: usize,
}

impl TrajectoryWalker {
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let l = if config.max_clusters >= 2 {
            rng.random_range(2..=config.max_clusters)
        } else {
            1
        };
        let mut base: Vec<Path> = Vec::with_capacity(l);
        for i in 0..l {
            let mag = PATH_PROFILE[i.min(PATH_PROFILE.len() - 1)] * rng.random_range(0.95..=1.0);
            let phase = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let (mut tt, mut tr) = (0.0, 0.0);
            for _ in 0..100 {
                tt = rng.random_range(-0.9..0.9);
                tr = rng.random_range(-0.9..0.9);
                let clear = base.iter().all(|p| {
                    spatial_gap(p.theta_t, tt) >= MIN_PATH_SEPARATION
                        && spatial_gap(p.theta_r, tr) >= MIN_PATH_SEPARATION
                });
                if clear {
                    break;
                }
            }
            let et = rng.random_range(-0.6..0.6);
            let er = rng.random_range(-0.6..0.6);
            base.push(Path::new(C64::from_polar(mag, phase), tt, tr).with_elevations(et, er));
        }
        let left_in_segment = config.segment_length_los;
        Ok(Self {
            config: config.clone(),
            rng,
            base,
            blocked: false,
            segment_id: 0,
            left_in_segment,
            global_step: 0,
        })
    }

    pub fn blocked(&self) -> bool {
        self.blocked
    }

    /// Advances one step and returns the current paths and segment id.
    pub fn next_paths(&mut self) -> (Vec<Path>, usize) {
        if self.global_step > 0 {
            let forced = self.config.forced_jumps.contains(&self.global_step);
            if self.left_in_segment == 0 || forced {
                self.segment_id += 1;
                let toggle = self.rng.random::<f64>() < self.config.jump_probability;
                if toggle || forced {
                    self.blocked = !self.blocked;
                }
                self.left_in_segment = if self.blocked {
                    self.config.segment_length_nlos
                } else {
                    self.config.segment_length_los
                };
            }
            let rate = self.config.angular_drift_rate;
            for p in &mut self.base {
                for a in [&mut p.theta_t, &mut p.theta_r, &mut p.elev_t, &mut p.elev_r] {
                    let step = if rate > 0.0 {
                        self.rng.random_range(-rate..=rate)
                    } else {
                        0.0
                    };
                    *a = reflect(*a + step);
                }
            }
        }
        self.left_in_segment = self.left_in_segment.saturating_sub(1);
        self.global_step += 1;
        let mut paths = self.base.clone();
        if self.blocked {
            paths[0].gain *= self.config.blockage_attenuation;
        }
        // unit total path power, so blockage swaps the dominant path
        // without a large drop in link budget
        let power: f64 = paths.iter().map(|p| p.gain.norm_sqr()).sum();
        if power > 0.0 {
            let s = power.sqrt().recip();
            for p in &mut paths {
                p.gain *= s;
            }
        }
        (paths, self.segment_id)
    }

    /// Produces the next `config.n_steps` steps as one trajectory.
    pub fn next_trajectory(&mut self) -> Result<Trajectory> {
        let cfg = self.config.clone();
        let (cb_tx, cb_rx) = cfg.codebooks()?;
        let tx = cfg.tx_geometry();
        let rx = cfg.rx_geometry();
        let mut snapshots = Vec::with_capacity(cfg.n_steps);
        let mut truth = Vec::with_capacity(cfg.n_steps);
        let mut segment_ids = Vec::with_capacity(cfg.n_steps);
        for t in 0..cfg.n_steps {
            let (paths, seg) = self.next_paths();
            let snap = channel_matrix(&paths, &tx, &rx, t)?;
            truth.push(BeamResponse::new(&snap.paths, &cb_tx, &cb_rx).best().0);
            snapshots.push(snap);
            segment_ids.push(seg);
        }
        Ok(Trajectory {
            config: cfg,
            snapshots,
            truth,
            segment_ids,
        })
    }
}

fn spatial_gap(a: f64, b: f64) -> f64 {
    // sine-space angles live on a period-2 circle for half-wavelength ULAs
    let d = (a - b).rem_euclid(2.0);
    d.min(2.0 - d)
}

pub fn generate_trajectory(config: &ScenarioConfig) -> Result<Trajectory> {
    TrajectoryWalker::new(config)?.next_trajectory()
}

/// `k` consecutive trajectories cut from one continuous walk.
pub fn generate_stream(config: &ScenarioConfig, k: usize) -> Result<Vec<Trajectory>> {
    let mut walker = TrajectoryWalker::new(config)?;
    (0..k).map(|_| walker.next_trajectory()).collect()
}

pub fn truth_beam_series(traj: &Trajectory) -> Vec<BeamPair> {
    traj.truth.clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            n_steps: 60,
            n_t: 16,
            n_r: 16,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn static_channel_has_constant_truth() {
        let cfg = ScenarioConfig {
            angular_drift_rate: 0.0,
            jump_probability: 0.0,
            ..small(3)
        };
        let traj = generate_trajectory(&cfg).unwrap();
        let series = truth_beam_series(&traj);
        assert_eq!(series.len(), cfg.n_steps);
        assert!(series.iter().all(|p| *p == series[0]));
    }

    #[test]
    fn rejects_short_or_bad_configs() {
        assert!(generate_trajectory(&ScenarioConfig {
            n_steps: 1,
            ..small(1)
        })
        .is_err());
        assert!(generate_trajectory(&ScenarioConfig {
            jump_probability: 1.5,
            ..small(1)
        })
        .is_err());
        assert!(generate_trajectory(&ScenarioConfig {
            max_clusters: 0,
            ..small(1)
        })
        .is_err());
    }

    #[test]
    fn forced_jump_toggles_blockage() {
        let cfg = ScenarioConfig {
            jump_probability: 0.0,
            forced_jumps: vec![30],
            ..small(5)
        };
        let mut w = TrajectoryWalker::new(&cfg).unwrap();
        for t in 0..40 {
            w.next_paths();
            assert_eq!(w.blocked(), t >= 30, "t={t}");
        }
    }

    #[test]
    fn text_round_trip_preserves_everything() {
        let traj = generate_trajectory(&small(11)).unwrap();
        let mut buf = Vec::new();
        traj.write_text(&mut buf).unwrap();
        let back = Trajectory::read_text(buf.as_slice()).unwrap();
        assert_eq!(back.truth, traj.truth);
        assert_eq!(back.segment_ids, traj.segment_ids);
        for (a, b) in back.snapshots.iter().zip(&traj.snapshots) {
            assert_eq!(a.paths, b.paths);
            assert_eq!(a.h, b.h);
        }
        let mut again = Vec::new();
        back.write_text(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn ring_distance_wraps() {
        assert_eq!(ring_distance(63, 0, 64), 1);
        assert_eq!(ring_distance(10, 12, 64), 2);
        assert_eq!(ring_distance(0, 32, 64), 32);
    }
}
