//! Experiment pipelines shared by the CLI and the acceptance tests: run
//! configuration, offline fitting of chart and tables, multi-trajectory
//! evaluation against baselines, the architecture sweep and the drift study.

use std::fmt::Write as _;
use std::path::PathBuf;

use ndarray::Array2;

use crate::beam_map::{calibrate_delta, BeamMapTable, KeyGenConfig};
use crate::channel::{snr_db, BeamPair, BeamResponse};
use crate::chart::{chart_dataset, init_model, train, Activation, LossParts, TrainConfig};
use crate::error::{Error, Result};
use crate::features::{trajectory_features, FeatureMode, FeatureVector};
use crate::tracker::{
    exhaustive_baseline, run_tracker, sliding_window_sweep, timeliness_eval, Metrics, TrackRun,
    TrackerAssets, TrackerConfig,
};
use crate::trajectory::{generate_stream, generate_trajectory, ScenarioConfig, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub train: TrainConfig,
    pub mode: FeatureMode,
    pub keygen: KeyGenConfig,
    pub hash_seed: u64,
    /// Mean filtered table-set size the δ calibration aims for.
    pub target_set_size: f64,
    pub tracker: TrackerConfig,
    /// Fixed misalignment threshold; `None` calibrates it as the median
    /// aligned SNR minus `snr_margin_db`.
    pub snr_threshold_db: Option<f64>,
    pub snr_margin_db: f64,
    /// Training labels are the best pair this many steps ahead.
    pub label_horizon: usize,
    pub n_paths: usize,
    /// Trajectories per drift stream.
    pub stream_len: usize,
    /// Largest sliding-window half width evaluated.
    pub sliding_max_w: usize,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            train: TrainConfig::default(),
            mode: FeatureMode::Full,
            keygen: KeyGenConfig::default(),
            hash_seed: 7,
            target_set_size: 2.0,
            tracker: TrackerConfig::default(),
            snr_threshold_db: None,
            snr_margin_db: 10.0,
            label_horizon: 1,
            n_paths: 100,
            stream_len: 12,
            sliding_max_w: 8,
            out_dir: PathBuf::from("out"),
        }
    }
}

fn parse_list<T: std::str::FromStr>(v: &str) -> Option<Vec<T>> {
    if v.trim().is_empty() {
        return Some(Vec::new());
    }
    v.split(',').map(|s| s.trim().parse().ok()).collect()
}

fn list<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    /// The desk-scale scenario used by the acceptance suite. Training runs
    /// a faster schedule for 200-step trajectories, and the key grid is
    /// coarsened to the chart's per-step displacement. Sliding windows
    /// extend to N/2, where the baseline becomes exhaustive.
    pub fn standard() -> Self {
        Self {
            train: TrainConfig {
                learning_rate: 1e-3,
                batch_size: 32,
                epochs: 120,
                ..TrainConfig::default()
            },
            keygen: KeyGenConfig {
                k_res: 5,
                ..KeyGenConfig::default()
            },
            target_set_size: 1.0,
            sliding_max_w: 32,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.train.validate()?;
        self.keygen.validate()?;
        self.tracker.validate()?;
        for n in [self.scenario.n_t, self.scenario.n_r] {
            if ![16, 64, 128].contains(&n) {
                return Err(Error::config(format!(
                    "codebook size {n} not in {{16, 64, 128}}"
                )));
            }
        }
        if !(self.target_set_size >= 0.0) {
            return Err(Error::config("target_set_size must be >= 0"));
        }
        if self.label_horizon > 1 {
            return Err(Error::config("label_horizon must be 0 or 1"));
        }
        if self.n_paths == 0 || self.stream_len == 0 {
            return Err(Error::config("n_paths and stream_len must be positive"));
        }
        if self.scenario.n_steps <= self.train.neg_window + 1 {
            return Err(Error::DatasetTooShort {
                len: self.scenario.n_steps,
                needed: self.train.neg_window + 2,
            });
        }
        Ok(())
    }

    /// Every setting as `section.key=value`, one per line.
    pub fn to_kv(&self) -> String {
        let s = &self.scenario;
        let t = &self.train;
        let k = &self.tracker;
        let mut out = String::new();
        let mut put = |key: &str, v: String| {
            let _ = writeln!(out, "{key}={v}");
        };
        put("scenario.n_steps", s.n_steps.to_string());
        put("scenario.step_seconds", s.step_seconds.to_string());
        put(
            "scenario.segment_length_los",
            s.segment_length_los.to_string(),
        );
        put(
            "scenario.segment_length_nlos",
            s.segment_length_nlos.to_string(),
        );
        put("scenario.max_clusters", s.max_clusters.to_string());
        put(
            "scenario.angular_drift_rate",
            s.angular_drift_rate.to_string(),
        );
        put("scenario.jump_probability", s.jump_probability.to_string());
        put(
            "scenario.blockage_attenuation",
            s.blockage_attenuation.to_string(),
        );
        put("scenario.forced_jumps", list(&s.forced_jumps));
        put("scenario.noise_var", s.noise_var.to_string());
        put("scenario.tx_power", s.tx_power.to_string());
        put("scenario.n_t", s.n_t.to_string());
        put("scenario.n_r", s.n_r.to_string());
        put("scenario.seed", s.seed.to_string());
        put("train.learning_rate", t.learning_rate.to_string());
        put("train.batch_size", t.batch_size.to_string());
        put("train.epochs", t.epochs.to_string());
        put("train.delta", t.delta.to_string());
        put("train.loss_weight", t.loss_weight.to_string());
        put("train.pos_window", t.pos_window.to_string());
        put("train.neg_window", t.neg_window.to_string());
        put("train.hidden", list(&t.hidden));
        put("train.activation", t.activation.name().to_string());
        put("train.seed", t.seed.to_string());
        put("features.mode", self.mode.name().to_string());
        put("keygen.c", self.keygen.c.to_string());
        put("keygen.k_res", self.keygen.k_res.to_string());
        put("hash.seed", self.hash_seed.to_string());
        put(
            "selection.target_set_size",
            self.target_set_size.to_string(),
        );
        put(
            "tracker.snr_threshold_db",
            self.snr_threshold_db
                .map_or("auto".to_string(), |v| v.to_string()),
        );
        put("tracker.snr_margin_db", self.snr_margin_db.to_string());
        put("tracker.neighbor_radius", k.neighbor_radius.to_string());
        put("tracker.t_e", k.t_e.to_string());
        put("tracker.t_d", k.t_d.to_string());
        put("tracker.max_candidates", k.max_candidates.to_string());
        put("tracker.retrain_interval", k.retrain_interval.to_string());
        put("run.label_horizon", self.label_horizon.to_string());
        put("run.n_paths", self.n_paths.to_string());
        put("run.stream_len", self.stream_len.to_string());
        put("run.sliding_max_w", self.sliding_max_w.to_string());
        put("run.out_dir", self.out_dir.display().to_string());
        out
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let bad = || Error::config(format!("bad value for {key}: '{v}'"));
        macro_rules! p {
            ($field:expr) => {
                $field = v.parse().map_err(|_| bad())?
            };
        }
        let s = &mut self.scenario;
        let t = &mut self.train;
        let k = &mut self.tracker;
        match key {
            "scenario.n_steps" => p!(s.n_steps),
            "scenario.step_seconds" => p!(s.step_seconds),
            "scenario.segment_length_los" => p!(s.segment_length_los),
            "scenario.segment_length_nlos" => p!(s.segment_length_nlos),
            "scenario.max_clusters" => p!(s.max_clusters),
            "scenario.angular_drift_rate" => p!(s.angular_drift_rate),
            "scenario.jump_probability" => p!(s.jump_probability),
            "scenario.blockage_attenuation" => p!(s.blockage_attenuation),
            "scenario.forced_jumps" => s.forced_jumps = parse_list(v).ok_or_else(bad)?,
            "scenario.noise_var" => p!(s.noise_var),
            "scenario.tx_power" => p!(s.tx_power),
            "scenario.n_t" => p!(s.n_t),
            "scenario.n_r" => p!(s.n_r),
            "scenario.seed" => p!(s.seed),
            "train.learning_rate" => p!(t.learning_rate),
            "train.batch_size" => p!(t.batch_size),
            "train.epochs" => p!(t.epochs),
            "train.delta" => p!(t.delta),
            "train.loss_weight" => p!(t.loss_weight),
            "train.pos_window" => p!(t.pos_window),
            "train.neg_window" => p!(t.neg_window),
            "train.hidden" => t.hidden = parse_list(v).ok_or_else(bad)?,
            "train.activation" => t.activation = Activation::parse(v).ok_or_else(bad)?,
            "train.seed" => p!(t.seed),
            "features.mode" => self.mode = FeatureMode::parse(v).ok_or_else(bad)?,
            "keygen.c" => p!(self.keygen.c),
            "keygen.k_res" => p!(self.keygen.k_res),
            "hash.seed" => p!(self.hash_seed),
            "selection.target_set_size" => p!(self.target_set_size),
            "tracker.snr_threshold_db" => {
                self.snr_threshold_db = match v {
                    "auto" => None,
                    _ => Some(v.parse().map_err(|_| bad())?),
                }
            }
            "tracker.snr_margin_db" => p!(self.snr_margin_db),
            "tracker.neighbor_radius" => p!(k.neighbor_radius),
            "tracker.t_e" => p!(k.t_e),
            "tracker.t_d" => p!(k.t_d),
            "tracker.max_candidates" => p!(k.max_candidates),
            "tracker.retrain_interval" => p!(k.retrain_interval),
            "run.label_horizon" => p!(self.label_horizon),
            "run.n_paths" => p!(self.n_paths),
            "run.stream_len" => p!(self.stream_len),
            "run.sliding_max_w" => p!(self.sliding_max_w),
            "run.out_dir" => self.out_dir = PathBuf::from(v),
            _ => return Err(Error::config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`. `#` starts a comment.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(i + 1, format!("expected key=value, got '{line}'")))?;
            self.set(k.trim(), v).map_err(|e| match e {
                Error::InvalidConfig(msg) => Error::parse(i + 1, msg),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv(text)?;
        Ok(cfg)
    }

    /// Scenario of the `i`-th trajectory in a multi-path run.
    pub fn scenario_for(&self, i: usize) -> ScenarioConfig {
        ScenarioConfig {
            seed: self.scenario.seed.wrapping_add(i as u64),
            ..self.scenario.clone()
        }
    }
}

/// Feature matrix in the chosen mode plus per-row group ids.
pub fn feature_matrix(
    trajs: &[Trajectory],
    mode: FeatureMode,
) -> Result<(Array2<f64>, Vec<usize>, Vec<FeatureVector>)> {
    let mut feats = Vec::new();
    let mut groups = Vec::new();
    for (g, traj) in trajs.iter().enumerate() {
        let f = trajectory_features(traj)?;
        groups.extend(std::iter::repeat_n(g, f.len()));
        feats.extend(f);
    }
    if feats.is_empty() {
        return Err(Error::EmptyInput("training trajectories"));
    }
    let dim = mode.dim();
    let sel: Vec<Vec<f64>> = feats.iter().map(|f| mode.select(f)).collect();
    let data = Array2::from_shape_fn((feats.len(), dim), |(i, c)| sel[i][c]);
    Ok((data, groups, feats))
}

/// Labels for every training row: the best pair `horizon` steps ahead,
/// clamped at the end of each trajectory.
pub fn training_labels(trajs: &[Trajectory], horizon: usize) -> Vec<BeamPair> {
    trajs
        .iter()
        .flat_map(|traj| {
            let n = traj.truth.len();
            (0..n).map(move |i| traj.truth[(i + horizon).min(n - 1)])
        })
        .collect()
}

/// Median SNR of the true best pair minus `margin_db`.
pub fn calibrate_snr_threshold(trajs: &[Trajectory], margin_db: f64) -> Result<f64> {
    let mut snrs = Vec::new();
    for traj in trajs {
        let sc = &traj.config;
        let (cb_tx, cb_rx) = sc.codebooks()?;
        for (snap, &pair) in traj.snapshots.iter().zip(&traj.truth) {
            let p = BeamResponse::new(&snap.paths, &cb_tx, &cb_rx).power(pair);
            snrs.push(snr_db(p, sc.noise_var, sc.tx_power));
        }
    }
    if snrs.is_empty() {
        return Err(Error::EmptyInput("calibration trajectories"));
    }
    snrs.sort_by(f64::total_cmp);
    let n = snrs.len();
    let median = if n % 2 == 1 {
        snrs[n / 2]
    } else {
        0.5 * (snrs[n / 2 - 1] + snrs[n / 2])
    };
    Ok(median - margin_db)
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub assets: TrackerAssets,
    pub tracker: TrackerConfig,
    pub history: Vec<LossParts>,
}

/// Offline phase: train the chart, build both tables with next-step labels,
/// calibrate δ on beam-quantized queries, and set the SNR threshold.
pub fn fit_assets(trajs: &[Trajectory], cfg: &RunConfig) -> Result<FitOutcome> {
    let first = trajs
        .first()
        .ok_or(Error::EmptyInput("training trajectories"))?;
    let (cb_tx, cb_rx) = first.config.codebooks()?;
    let (data, groups, feats) = feature_matrix(trajs, cfg.mode)?;
    let out = train(data.view(), &groups, &cfg.train)?;
    let model = out.model;
    let points = chart_dataset(&model, data.view())?;
    let labels = training_labels(trajs, cfg.label_horizon);
    let keygen = cfg.keygen.fitted(&points);
    let tx: Vec<usize> = labels.iter().map(|b| b.tx).collect();
    let rx: Vec<usize> = labels.iter().map(|b| b.rx).collect();
    let table_tx = BeamMapTable::build(&points, &tx, keygen, cfg.hash_seed)?;
    let table_rx = BeamMapTable::build(&points, &rx, keygen, cfg.hash_seed.wrapping_add(1))?;

    // queries seen online carry beam-center azimuths instead of true angles
    let quantized: Vec<Vec<f64>> = feats
        .iter()
        .map(|f| {
            let mut q = *f;
            q.aoa_az = cb_rx.beam_center(cb_rx.quantize(f.aoa_az));
            q.aod_az = cb_tx.beam_center(cb_tx.quantize(f.aod_az));
            cfg.mode.select(&q)
        })
        .collect();
    let qdata = Array2::from_shape_fn((quantized.len(), cfg.mode.dim()), |(i, c)| quantized[i][c]);
    let validation = chart_dataset(&model, qdata.view())?;
    let sel_tx = calibrate_delta(&table_tx, &validation, cfg.target_set_size)?;
    let sel_rx = calibrate_delta(&table_rx, &validation, cfg.target_set_size)?;
    let selection = if sel_tx.delta >= sel_rx.delta {
        sel_tx
    } else {
        sel_rx
    };

    let mut tracker = cfg.tracker;
    tracker.snr_threshold_db = match cfg.snr_threshold_db {
        Some(v) => v,
        None => calibrate_snr_threshold(trajs, cfg.snr_margin_db)?,
    };
    Ok(FitOutcome {
        assets: TrackerAssets {
            model,
            mode: cfg.mode,
            table_tx,
            table_rx,
            selection,
            cb_tx,
            cb_rx,
        },
        tracker,
        history: out.history,
    })
}

/// Widest window of the fallback-augmented sliding comparator. Once the
/// fallback is in place, widening the window only adds scans.
pub const FALLBACK_MAX_W: usize = 8;

/// Results for one trajectory: the tracker run and both baselines.
#[derive(Debug, Clone)]
pub struct PathEval {
    pub seed: u64,
    pub run: TrackRun,
    pub threshold_db: f64,
    pub exhaustive: Metrics,
    /// Sliding-window metrics with the tracker's misalignment fallback, for
    /// `w = 0..=min(sliding_max_w, FALLBACK_MAX_W)`.
    pub sliding: Vec<Metrics>,
    /// Plain sliding-window metrics for `w = 0..=sliding_max_w`.
    pub sliding_plain: Vec<Metrics>,
    pub jumps: usize,
}

/// Fits on the trajectory, tracks it, and runs the baselines.
pub fn evaluate_path(traj: &Trajectory, cfg: &RunConfig) -> Result<PathEval> {
    let fit = fit_assets(std::slice::from_ref(traj), cfg)?;
    let mut assets = fit.assets;
    let run = run_tracker(traj, &mut assets, &fit.tracker)?;
    let th = fit.tracker.snr_threshold_db;
    let exhaustive = exhaustive_baseline(traj)?.1;
    let sliding = sliding_window_sweep(traj, cfg.sliding_max_w.min(FALLBACK_MAX_W), Some(th))?;
    let sliding_plain = sliding_window_sweep(traj, cfg.sliding_max_w, None)?;
    Ok(PathEval {
        seed: traj.config.seed,
        run,
        threshold_db: th,
        exhaustive,
        sliding,
        sliding_plain,
        jumps: traj.jump_steps(2).len(),
    })
}

#[derive(Debug, Clone)]
pub struct StandardReport {
    pub paths: Vec<PathEval>,
    pub tracker: Metrics,
    pub exhaustive: Metrics,
    pub sliding: Vec<Metrics>,
    pub sliding_plain: Vec<Metrics>,
}

impl StandardReport {
    /// Smallest window whose accuracy is at least the tracker's.
    pub fn matching_window(&self, with_fallback: bool) -> Option<usize> {
        let set = if with_fallback {
            &self.sliding
        } else {
            &self.sliding_plain
        };
        set.iter()
            .position(|m| m.accuracy() >= self.tracker.accuracy())
    }
}

/// Per-trajectory fit and evaluation over `n_paths` seeded trajectories.
pub fn standard_evaluation(cfg: &RunConfig) -> Result<StandardReport> {
    cfg.validate()?;
    let mut paths = Vec::with_capacity(cfg.n_paths);
    for i in 0..cfg.n_paths {
        let traj = generate_trajectory(&cfg.scenario_for(i))?;
        paths.push(evaluate_path(&traj, cfg)?);
    }
    let mut tracker = Metrics::default();
    let mut exhaustive = Metrics::default();
    let mut sliding = vec![Metrics::default(); cfg.sliding_max_w.min(FALLBACK_MAX_W) + 1];
    let mut sliding_plain = vec![Metrics::default(); cfg.sliding_max_w + 1];
    for p in &paths {
        tracker.merge(&p.run.metrics);
        exhaustive.merge(&p.exhaustive);
        for (acc, m) in sliding.iter_mut().zip(&p.sliding) {
            acc.merge(m);
        }
        for (acc, m) in sliding_plain.iter_mut().zip(&p.sliding_plain) {
            acc.merge(m);
        }
    }
    Ok(StandardReport {
        paths,
        tracker,
        exhaustive,
        sliding,
        sliding_plain,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub mode: FeatureMode,
    pub input_dim: usize,
    pub hidden_width: usize,
    pub e_ps_rate: f64,
    pub e_pd_rate: f64,
}

pub const SWEEP_WIDTHS: [usize; 8] = [4, 8, 16, 32, 64, 128, 256, 512];

/// Error rates over `cfg.n_paths` trajectories for every (mode, first hidden
/// width) pair. The second hidden layer is kept at `min(64, width)`.
pub fn sweep(cfg: &RunConfig, modes: &[FeatureMode], widths: &[usize]) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let trajs: Vec<Trajectory> = (0..cfg.n_paths)
        .map(|i| generate_trajectory(&cfg.scenario_for(i)))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for &mode in modes {
        for &w in widths {
            let mut c = cfg.clone();
            c.mode = mode;
            c.train.hidden = vec![w, w.min(64)];
            let mut total = Metrics::default();
            for traj in &trajs {
                let fit = fit_assets(std::slice::from_ref(traj), &c)?;
                let mut assets = fit.assets;
                total.merge(&run_tracker(traj, &mut assets, &fit.tracker)?.metrics);
            }
            rows.push(SweepRow {
                mode,
                input_dim: mode.dim(),
                hidden_width: w,
                e_ps_rate: total.e_ps_rate(),
                e_pd_rate: total.e_pd_rate(),
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftRow {
    pub path_idx: usize,
    pub codebook: usize,
    pub metrics: Metrics,
}

/// Fits on the first trajectory of a continuous stream and tracks all
/// `stream_len` trajectories without retraining (unless
/// `tracker.retrain_interval` is set, in which case assets are refit on the
/// latest trajectory each time that many steps have passed).
pub fn drift_series(cfg: &RunConfig) -> Result<Vec<DriftRow>> {
    cfg.validate()?;
    let stream = generate_stream(&cfg.scenario, cfg.stream_len)?;
    let fit = fit_assets(&stream[..1], cfg)?;
    let interval = fit.tracker.retrain_interval;
    let metrics = if interval == 0 {
        timeliness_eval(&fit.assets, &stream, &fit.tracker)?
    } else {
        let mut assets = fit.assets.clone();
        let mut out = Vec::with_capacity(stream.len());
        let mut since = 0;
        for (i, traj) in stream.iter().enumerate() {
            out.push(run_tracker(traj, &mut assets, &fit.tracker)?.metrics);
            since += traj.len();
            if since >= interval && i + 1 < stream.len() {
                assets = fit_assets(std::slice::from_ref(traj), cfg)?.assets;
                since = 0;
            }
        }
        out
    };
    Ok(metrics
        .into_iter()
        .enumerate()
        .map(|(path_idx, metrics)| DriftRow {
            path_idx,
            codebook: cfg.scenario.n_t,
            metrics,
        })
        .collect())
}

/// Untrained model with the same seed and standardizer as `train` would use.
pub fn untrained_assets_model(
    trajs: &[Trajectory],
    cfg: &RunConfig,
) -> Result<crate::chart::ChartModel> {
    let (data, _, _) = feature_matrix(trajs, cfg.mode)?;
    init_model(data.view(), &cfg.train)
}
