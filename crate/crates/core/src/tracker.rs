//! Online beam tracking on a channel chart, plus the comparison baselines.
//!
//! Each step encodes a query feature, looks up the per-side beam tables,
//! scans the small candidate product, and falls back to an exhaustive sweep
//! (with a table update) when no candidate pair clears the SNR threshold.
//! The next query is rebuilt from the confirmed beams, so the loop never
//! reads the true angles after step 0.

use std::io::{BufRead, Write};

use crate::beam_map::{select_beams, BeamMapTable, SelectionConfig};
use crate::channel::{snr_db, BeamPair, BeamResponse, ChannelSnapshot, Codebook};
use crate::chart::{ChartModel, ChartPoint};
use crate::error::{Error, Result};
use crate::features::{build_feature, FeatureMode, FeatureVector};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    /// Best candidate SNR below this triggers the exhaustive fallback.
    pub snr_threshold_db: f64,
    /// Beams within `+-r` (modular) of the located beam are always scanned.
    pub neighbor_radius: usize,
    /// Number of past features averaged into one query.
    pub t_e: usize,
    /// Steps of delay before a feature becomes usable.
    pub t_d: usize,
    pub max_candidates: usize,
    /// Steps between chart refreshes; 0 disables retraining.
    pub retrain_interval: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            snr_threshold_db: f64::NEG_INFINITY,
            neighbor_radius: 1,
            t_e: 1,
            t_d: 0,
            max_candidates: 4,
            retrain_interval: 0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_candidates < 1 {
            return Err(Error::config("max_candidates must be >= 1"));
        }
        if self.t_e < 1 {
            return Err(Error::config("t_e must be >= 1"));
        }
        if self.snr_threshold_db.is_nan() {
            return Err(Error::config("SNR threshold is NaN"));
        }
        Ok(())
    }
}

/// Everything the online loop needs besides the channel.
#[derive(Debug, Clone)]
pub struct TrackerAssets {
    pub model: ChartModel,
    pub mode: FeatureMode,
    pub table_tx: BeamMapTable,
    pub table_rx: BeamMapTable,
    pub selection: SelectionConfig,
    pub cb_tx: Codebook,
    pub cb_rx: Codebook,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SideLocation {
    pub beam: usize,
    /// δ-filtered table beams in priority order.
    pub hits: Vec<usize>,
    /// True when the lookup came back empty and the nearest anchor was used.
    pub fallback: bool,
}

/// Highest-priority filtered table beam at `y`, else the nearest anchor.
pub fn locate_side(table: &BeamMapTable, y: ChartPoint, delta: f64) -> Result<SideLocation> {
    let found = table.lookup(y)?;
    let hits: Vec<usize> = select_beams(found.entries, y, delta)
        .into_iter()
        .map(|e| e.beam)
        .collect();
    if let Some(&beam) = hits.first() {
        return Ok(SideLocation {
            beam,
            hits,
            fallback: false,
        });
    }
    let (beam, _) = table
        .nearest_anchor(y)
        .ok_or(Error::EmptyInput("beam table anchors"))?;
    Ok(SideLocation {
        beam,
        hits,
        fallback: true,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Located {
    pub y: ChartPoint,
    pub tx: SideLocation,
    pub rx: SideLocation,
}

impl Located {
    pub fn pair(&self) -> BeamPair {
        BeamPair::new(self.rx.beam, self.tx.beam)
    }
}

/// Encodes the query and locates a beam on each side.
pub fn locate(assets: &TrackerAssets, query: &FeatureVector) -> Result<Located> {
    let y = assets.model.encode(&assets.mode.select(query))?;
    if !(y[0].is_finite() && y[1].is_finite()) {
        return Err(Error::NonFinite("chart coordinate"));
    }
    let delta = assets.selection.delta;
    Ok(Located {
        y,
        tx: locate_side(&assets.table_tx, y, delta)?,
        rx: locate_side(&assets.table_rx, y, delta)?,
    })
}

/// Located beam first, then filtered table beams in priority order, then the
/// `+-r` ring neighbors nearest first; duplicates dropped, capped at `max`.
pub fn side_candidates(
    located: usize,
    hits: &[usize],
    n: usize,
    radius: usize,
    max: usize,
) -> Vec<usize> {
    let mut out = Vec::with_capacity(max);
    let push = |b: usize, out: &mut Vec<usize>| {
        if out.len() < max && !out.contains(&b) {
            out.push(b);
        }
    };
    push(located % n, &mut out);
    for &b in hits {
        push(b % n, &mut out);
    }
    for d in 1..=radius.min(n) {
        push((located + n - d % n) % n, &mut out);
        push((located + d) % n, &mut out);
    }
    out
}

/// `(B_tx, B_rx)` for a located pair.
pub fn candidate_set(
    located: &Located,
    n_t: usize,
    n_r: usize,
    cfg: &TrackerConfig,
) -> (Vec<usize>, Vec<usize>) {
    let r = cfg.neighbor_radius;
    let m = cfg.max_candidates;
    (
        side_candidates(located.tx.beam, &located.tx.hits, n_t, r, m),
        side_candidates(located.rx.beam, &located.rx.hits, n_r, r, m),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scan {
    pub pair: BeamPair,
    pub power: f64,
    pub snr_db: f64,
    /// Beams swept per side.
    pub scans_t: usize,
    pub scans_r: usize,
    /// Pairs evaluated, `|B_tx| * |B_rx|`.
    pub pair_sweeps: usize,
}

/// Best pair of `B_rx x B_tx`; ties go to the lowest `(rx, tx)`.
pub fn scan_response(
    resp: &BeamResponse,
    b_tx: &[usize],
    b_rx: &[usize],
    noise_var: f64,
    tx_power: f64,
) -> Result<Scan> {
    scan_with(|pair| resp.power(pair), b_tx, b_rx, noise_var, tx_power)
}

fn scan_with(
    power: impl Fn(BeamPair) -> f64,
    b_tx: &[usize],
    b_rx: &[usize],
    noise_var: f64,
    tx_power: f64,
) -> Result<Scan> {
    if b_tx.is_empty() || b_rx.is_empty() {
        return Err(Error::EmptyInput("candidate set"));
    }
    let mut best: Option<(BeamPair, f64)> = None;
    for &m in b_rx {
        for &n in b_tx {
            let pair = BeamPair::new(m, n);
            let p = power(pair);
            let better = match best {
                None => true,
                Some((bp, bv)) => p > bv || (p == bv && pair < bp),
            };
            if better {
                best = Some((pair, p));
            }
        }
    }
    let (pair, power) = best.expect("nonempty sets");
    Ok(Scan {
        pair,
        power,
        snr_db: snr_db(power, noise_var, tx_power),
        scans_t: b_tx.len(),
        scans_r: b_rx.len(),
        pair_sweeps: b_tx.len() * b_rx.len(),
    })
}

pub fn scan_confirm(
    snapshot: &ChannelSnapshot,
    cb_tx: &Codebook,
    cb_rx: &Codebook,
    b_tx: &[usize],
    b_rx: &[usize],
    noise_var: f64,
    tx_power: f64,
) -> Result<Scan> {
    let resp = BeamResponse::new(&snapshot.paths, cb_tx, cb_rx);
    scan_response(&resp, b_tx, b_rx, noise_var, tx_power)
}

/// Decodes `y`, overwrites the azimuths with the confirmed beams' centers and
/// stamps `timestamp`. The flag reports whether the decoded azimuths already
/// quantize to the confirmed pair (always true in elevation mode).
pub fn reconstruct_next_feature(
    model: &ChartModel,
    mode: FeatureMode,
    y: ChartPoint,
    confirmed: BeamPair,
    cb_tx: &Codebook,
    cb_rx: &Codebook,
    timestamp: f64,
) -> Result<(FeatureVector, bool)> {
    let decoded = model.decode(y)?;
    let mut f = mode.merge(&FeatureVector::default(), &decoded);
    let agrees = match mode {
        FeatureMode::Elevation => true,
        _ => {
            cb_rx.quantize(f.aoa_az.clamp(-1.0, 1.0)) == confirmed.rx
                && cb_tx.quantize(f.aod_az.clamp(-1.0, 1.0)) == confirmed.tx
        }
    };
    f.aoa_az = cb_rx.beam_center(confirmed.rx);
    f.aod_az = cb_tx.beam_center(confirmed.tx);
    f.timestamp = timestamp;
    Ok((f, agrees))
}

/// Mean of the `t_e` features ending `t_d` steps before the newest one.
fn windowed_query(history: &[FeatureVector], t_e: usize, t_d: usize) -> FeatureVector {
    let end = history.len().saturating_sub(t_d).max(1);
    let start = end.saturating_sub(t_e);
    let window = &history[start..end];
    let mut acc = [0.0; 5];
    for f in window {
        for (a, v) in acc.iter_mut().zip(f.to_array()) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= window.len() as f64);
    FeatureVector::from_array(acc)
}

/// One tracking step. Candidate sets are kept for invariant checks.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub y: ChartPoint,
    pub located: BeamPair,
    pub truth: BeamPair,
    pub pred: BeamPair,
    pub cand_t: Vec<usize>,
    pub cand_r: Vec<usize>,
    pub scans: usize,
    pub pair_sweeps: usize,
    pub e_t: bool,
    pub e_r: bool,
    pub misaligned: bool,
    pub snr_db: f64,
    pub fallback_t: bool,
    pub fallback_r: bool,
}

/// Flat CSV row of a [`StepRecord`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordRow {
    pub t: usize,
    pub located: BeamPair,
    pub truth: BeamPair,
    pub pred: BeamPair,
    pub n_cand_t: usize,
    pub n_cand_r: usize,
    pub scans: usize,
    pub e_t: bool,
    pub e_r: bool,
    pub misaligned: bool,
    pub snr_db: f64,
    pub fallback_t: bool,
    pub fallback_r: bool,
}

impl From<&StepRecord> for RecordRow {
    fn from(r: &StepRecord) -> Self {
        Self {
            t: r.t,
            located: r.located,
            truth: r.truth,
            pred: r.pred,
            n_cand_t: r.cand_t.len(),
            n_cand_r: r.cand_r.len(),
            scans: r.scans,
            e_t: r.e_t,
            e_r: r.e_r,
            misaligned: r.misaligned,
            snr_db: r.snr_db,
            fallback_t: r.fallback_t,
            fallback_r: r.fallback_r,
        }
    }
}

pub const RECORD_CSV_HEADER: &str = "t,located_t,located_r,truth_t,truth_r,pred_t,pred_r,n_cand_t,n_cand_r,scans,e_t,e_r,misaligned,snr_db,fallback_t,fallback_r";

pub fn write_records_csv<W: Write>(rows: &[RecordRow], mut out: W) -> Result<()> {
    writeln!(out, "{RECORD_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.located.tx,
            r.located.rx,
            r.truth.tx,
            r.truth.rx,
            r.pred.tx,
            r.pred.rx,
            r.n_cand_t,
            r.n_cand_r,
            r.scans,
            r.e_t as u8,
            r.e_r as u8,
            r.misaligned as u8,
            r.snr_db,
            r.fallback_t as u8,
            r.fallback_r as u8
        )?;
    }
    Ok(())
}

pub fn read_records_csv<R: BufRead>(input: R) -> Result<Vec<RecordRow>> {
    let mut rows = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let no = idx + 1;
        if idx == 0 {
            if line.trim() != RECORD_CSV_HEADER {
                return Err(Error::parse(no, "unexpected record CSV header"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 16 {
            return Err(Error::parse(
                no,
                format!("expected 16 columns, got {}", f.len()),
            ));
        }
        let u = |i: usize| -> Result<usize> {
            f[i].parse()
                .map_err(|_| Error::parse(no, format!("bad integer '{}'", f[i])))
        };
        let flag = |i: usize| -> Result<bool> {
            match f[i] {
                "0" => Ok(false),
                "1" => Ok(true),
                s => Err(Error::parse(no, format!("bad flag '{s}'"))),
            }
        };
        rows.push(RecordRow {
            t: u(0)?,
            located: BeamPair::new(u(2)?, u(1)?),
            truth: BeamPair::new(u(4)?, u(3)?),
            pred: BeamPair::new(u(6)?, u(5)?),
            n_cand_t: u(7)?,
            n_cand_r: u(8)?,
            scans: u(9)?,
            e_t: flag(10)?,
            e_r: flag(11)?,
            misaligned: flag(12)?,
            snr_db: f[13]
                .parse()
                .map_err(|_| Error::parse(no, format!("bad SNR '{}'", f[13])))?,
            fallback_t: flag(14)?,
            fallback_r: flag(15)?,
        });
    }
    Ok(rows)
}

/// Error and scan counters. Rates are derived on demand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Metrics {
    pub steps: usize,
    pub e_ps_t: usize,
    pub e_ps_r: usize,
    pub e_pd_t: usize,
    pub e_pd_r: usize,
    /// Beams actually swept, per-side accounting, exhaustive sweeps included.
    pub n_s: usize,
    /// Same count with every fallback side-step charged 2 beams.
    pub n_s_formula: usize,
    pub zeta_t: usize,
    pub zeta_r: usize,
    pub misaligned: usize,
}

impl Metrics {
    pub fn from_rows(rows: &[RecordRow]) -> Self {
        let mut m = Metrics::default();
        for r in rows {
            m.add_row(r);
        }
        m
    }

    fn add_row(&mut self, r: &RecordRow) {
        self.steps += 1;
        self.e_ps_t += (r.located.tx != r.truth.tx) as usize;
        self.e_ps_r += (r.located.rx != r.truth.rx) as usize;
        self.e_pd_t += r.e_t as usize;
        self.e_pd_r += r.e_r as usize;
        self.n_s += r.scans;
        let mut formula = r.scans;
        if r.fallback_t {
            formula = formula - r.n_cand_t + 2;
        }
        if r.fallback_r {
            formula = formula - r.n_cand_r + 2;
        }
        self.n_s_formula += formula;
        self.zeta_t += r.fallback_t as usize;
        self.zeta_r += r.fallback_r as usize;
        self.misaligned += r.misaligned as usize;
    }

    pub fn merge(&mut self, o: &Metrics) {
        self.steps += o.steps;
        self.e_ps_t += o.e_ps_t;
        self.e_ps_r += o.e_ps_r;
        self.e_pd_t += o.e_pd_t;
        self.e_pd_r += o.e_pd_r;
        self.n_s += o.n_s;
        self.n_s_formula += o.n_s_formula;
        self.zeta_t += o.zeta_t;
        self.zeta_r += o.zeta_r;
        self.misaligned += o.misaligned;
    }

    pub fn e_ps(&self) -> usize {
        self.e_ps_t + self.e_ps_r
    }

    pub fn e_pd(&self) -> usize {
        self.e_pd_t + self.e_pd_r
    }

    /// `1 - E_pd / (2N)`.
    pub fn accuracy(&self) -> f64 {
        if self.steps == 0 {
            return 1.0;
        }
        1.0 - self.e_pd() as f64 / (2 * self.steps) as f64
    }

    pub fn e_ps_rate(&self) -> f64 {
        self.e_ps() as f64 / (2 * self.steps.max(1)) as f64
    }

    pub fn e_pd_rate(&self) -> f64 {
        self.e_pd() as f64 / (2 * self.steps.max(1)) as f64
    }

    pub fn mean_scans_per_step(&self) -> f64 {
        self.n_s as f64 / self.steps.max(1) as f64
    }

    pub fn mean_scans_per_side(&self) -> f64 {
        self.n_s as f64 / (2 * self.steps.max(1)) as f64
    }
}

#[derive(Debug, Clone)]
pub struct TrackRun {
    pub records: Vec<StepRecord>,
    /// Counters accumulated inside the loop.
    pub metrics: Metrics,
    /// `(query feature, exhaustive best pair)` from misaligned steps.
    pub retrain: Vec<(FeatureVector, BeamPair)>,
    /// Steps where the decoded azimuths already matched the confirmed pair.
    pub decoder_agreement: usize,
}

impl TrackRun {
    pub fn rows(&self) -> Vec<RecordRow> {
        self.records.iter().map(RecordRow::from).collect()
    }
}

/// Runs the tracking loop over a trajectory. Table updates made on
/// misaligned steps stay in `assets`.
pub fn run_tracker(
    traj: &Trajectory,
    assets: &mut TrackerAssets,
    cfg: &TrackerConfig,
) -> Result<TrackRun> {
    cfg.validate()?;
    if traj.is_empty() {
        return Err(Error::EmptyInput("trajectory"));
    }
    let sc = &traj.config;
    let (n_t, n_r) = (assets.cb_tx.size(), assets.cb_rx.size());
    let all_t: Vec<usize> = (0..n_t).collect();
    let all_r: Vec<usize> = (0..n_r).collect();
    let mut history: Vec<FeatureVector> = Vec::with_capacity(traj.len());
    let mut records = Vec::with_capacity(traj.len());
    let mut metrics = Metrics::default();
    let mut retrain = Vec::new();
    let mut decoder_agreement = 0;
    for (t, snap) in traj.snapshots.iter().enumerate() {
        let query = if t == 0 {
            build_feature(snap, traj.timestamp(0))?
        } else {
            windowed_query(&history, cfg.t_e, cfg.t_d)
        };
        let loc = locate(assets, &query)?;
        let (cand_t, cand_r) = candidate_set(&loc, n_t, n_r, cfg);
        let resp = BeamResponse::new(&snap.paths, &assets.cb_tx, &assets.cb_rx);
        let scan = scan_response(&resp, &cand_t, &cand_r, sc.noise_var, sc.tx_power)?;
        let truth = traj.truth[t];
        let mut pred = scan.pair;
        let mut snr = scan.snr_db;
        let mut scans = scan.scans_t + scan.scans_r;
        let mut pair_sweeps = scan.pair_sweeps;
        let misaligned = scan.snr_db < cfg.snr_threshold_db;
        if misaligned {
            let full = scan_response(&resp, &all_t, &all_r, sc.noise_var, sc.tx_power)?;
            pred = full.pair;
            snr = full.snr_db;
            scans += n_t + n_r;
            pair_sweeps += n_t * n_r;
            assets.table_tx.update(loc.y, pred.tx)?;
            assets.table_rx.update(loc.y, pred.rx)?;
            retrain.push((query, pred));
        }
        let e_t = !misaligned && !cand_t.contains(&truth.tx);
        let e_r = !misaligned && !cand_r.contains(&truth.rx);
        let rec = StepRecord {
            t,
            y: loc.y,
            located: loc.pair(),
            truth,
            pred,
            cand_t,
            cand_r,
            scans,
            pair_sweeps,
            e_t,
            e_r,
            misaligned,
            snr_db: snr,
            fallback_t: loc.tx.fallback,
            fallback_r: loc.rx.fallback,
        };
        metrics.add_row(&RecordRow::from(&rec));
        records.push(rec);
        let (next, agrees) = reconstruct_next_feature(
            &assets.model,
            assets.mode,
            loc.y,
            pred,
            &assets.cb_tx,
            &assets.cb_rx,
            traj.timestamp(t),
        )?;
        decoder_agreement += agrees as usize;
        history.push(next);
    }
    Ok(TrackRun {
        records,
        metrics,
        retrain,
        decoder_agreement,
    })
}

/// Full sweep of both codebooks every step.
pub fn exhaustive_baseline(traj: &Trajectory) -> Result<(Vec<RecordRow>, Metrics)> {
    let sc = &traj.config;
    let (cb_tx, cb_rx) = sc.codebooks()?;
    let all_t: Vec<usize> = (0..sc.n_t).collect();
    let all_r: Vec<usize> = (0..sc.n_r).collect();
    let mut rows = Vec::with_capacity(traj.len());
    for (t, snap) in traj.snapshots.iter().enumerate() {
        let resp = BeamResponse::new(&snap.paths, &cb_tx, &cb_rx);
        let scan = scan_response(&resp, &all_t, &all_r, sc.noise_var, sc.tx_power)?;
        let truth = traj.truth[t];
        rows.push(RecordRow {
            t,
            located: scan.pair,
            truth,
            pred: scan.pair,
            n_cand_t: sc.n_t,
            n_cand_r: sc.n_r,
            scans: sc.n_t + sc.n_r,
            e_t: scan.pair.tx != truth.tx,
            e_r: scan.pair.rx != truth.rx,
            misaligned: false,
            snr_db: scan.snr_db,
            fallback_t: false,
            fallback_r: false,
        });
    }
    let m = Metrics::from_rows(&rows);
    Ok((rows, m))
}

/// `+-w` ring window around `center`, center first.
pub fn window(center: usize, w: usize, n: usize) -> Vec<usize> {
    if 2 * w + 1 >= n {
        return (0..n).collect();
    }
    let mut out = vec![center];
    for d in 1..=w {
        out.push((center + n - d) % n);
        out.push((center + d) % n);
    }
    out
}

/// Local search: scan `+-w` around the previous best on each side, starting
/// from the true pair at step 0. With `snr_threshold_db` set, a weak best
/// pair triggers the same exhaustive fallback the tracker uses.
pub fn sliding_window_run(
    traj: &Trajectory,
    w: usize,
    snr_threshold_db: Option<f64>,
) -> Result<(Vec<RecordRow>, Metrics)> {
    let sc = &traj.config;
    let (cb_tx, cb_rx) = sc.codebooks()?;
    let resp: Vec<BeamResponse> = traj
        .snapshots
        .iter()
        .map(|snap| BeamResponse::new(&snap.paths, &cb_tx, &cb_rx))
        .collect();
    sliding_rows(traj, w, snr_threshold_db, |t, pair| resp[t].power(pair))
}

/// Metrics of [`sliding_window_run`] for every `w` in `0..=max_w`, sharing one
/// pair-power table per step.
pub fn sliding_window_sweep(
    traj: &Trajectory,
    max_w: usize,
    snr_threshold_db: Option<f64>,
) -> Result<Vec<Metrics>> {
    let sc = &traj.config;
    let (cb_tx, cb_rx) = sc.codebooks()?;
    let tables: Vec<Vec<f64>> = traj
        .snapshots
        .iter()
        .map(|snap| {
            let resp = BeamResponse::new(&snap.paths, &cb_tx, &cb_rx);
            (0..sc.n_r)
                .flat_map(|m| (0..sc.n_t).map(move |n| (m, n)))
                .map(|(m, n)| resp.power(BeamPair::new(m, n)))
                .collect()
        })
        .collect();
    (0..=max_w)
        .map(|w| {
            sliding_rows(traj, w, snr_threshold_db, |t, pair| {
                tables[t][pair.rx * sc.n_t + pair.tx]
            })
            .map(|r| r.1)
        })
        .collect()
}

fn sliding_rows(
    traj: &Trajectory,
    w: usize,
    snr_threshold_db: Option<f64>,
    power: impl Fn(usize, BeamPair) -> f64,
) -> Result<(Vec<RecordRow>, Metrics)> {
    let sc = &traj.config;
    let all_t: Vec<usize> = (0..sc.n_t).collect();
    let all_r: Vec<usize> = (0..sc.n_r).collect();
    let mut prev = *traj.truth.first().ok_or(Error::EmptyInput("trajectory"))?;
    let mut rows = Vec::with_capacity(traj.len());
    for t in 0..traj.len() {
        let b_t = window(prev.tx, w, sc.n_t);
        let b_r = window(prev.rx, w, sc.n_r);
        let at = |pair| power(t, pair);
        let scan = scan_with(at, &b_t, &b_r, sc.noise_var, sc.tx_power)?;
        let truth = traj.truth[t];
        let misaligned = snr_threshold_db.is_some_and(|th| scan.snr_db < th);
        let (pred, snr, scans) = if misaligned {
            let full = scan_with(at, &all_t, &all_r, sc.noise_var, sc.tx_power)?;
            (
                full.pair,
                full.snr_db,
                b_t.len() + b_r.len() + sc.n_t + sc.n_r,
            )
        } else {
            (scan.pair, scan.snr_db, b_t.len() + b_r.len())
        };
        rows.push(RecordRow {
            t,
            located: prev,
            truth,
            pred,
            n_cand_t: b_t.len(),
            n_cand_r: b_r.len(),
            scans,
            e_t: !misaligned && !b_t.contains(&truth.tx),
            e_r: !misaligned && !b_r.contains(&truth.rx),
            misaligned,
            snr_db: snr,
            fallback_t: false,
            fallback_r: false,
        });
        prev = pred;
    }
    let m = Metrics::from_rows(&rows);
    Ok((rows, m))
}

/// Plain local search without any fallback.
pub fn sliding_window_baseline(traj: &Trajectory, w: usize) -> Result<(Vec<RecordRow>, Metrics)> {
    sliding_window_run(traj, w, None)
}

/// Tracks each trajectory of a stream in order with one set of assets and no
/// retraining; table updates carry over. One entry per trajectory.
pub fn timeliness_eval(
    assets: &TrackerAssets,
    stream: &[Trajectory],
    cfg: &TrackerConfig,
) -> Result<Vec<Metrics>> {
    let mut live = assets.clone();
    stream
        .iter()
        .map(|traj| run_tracker(traj, &mut live, cfg).map(|r| r.metrics))
        .collect()
}
