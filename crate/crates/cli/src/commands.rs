use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chartbeam::beam_map::{BeamMapTable, SelectionConfig};
use chartbeam::chart::ChartModel;
use chartbeam::features::{feature_rows, write_feature_csv, FeatureMode};
use chartbeam::harness::{self, fit_assets, RunConfig};
use chartbeam::tracker::{
    exhaustive_baseline, run_tracker, sliding_window_sweep, write_records_csv, Metrics,
    TrackerAssets,
};
use chartbeam::trajectory::{generate_trajectory, Trajectory};
use chartbeam::Error;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_)
            | Error::Parse { .. }
            | Error::DatasetTooShort { .. }
            | Error::InvalidAngle(_)
            | Error::EmptyInput(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_err(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| io_err(path, e))
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.out_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    Ok(dir)
}

pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = RunConfig::standard();
    if let Some(p) = path {
        let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
        cfg.apply_kv(&text)?;
    }
    Ok(cfg)
}

fn trajectory_files(cfg: &RunConfig, given: &[PathBuf]) -> Result<Vec<PathBuf>> {
    if !given.is_empty() {
        return Ok(given.to_vec());
    }
    let dir = cfg.out_dir.clone();
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| io_err(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("traj_") && n.ends_with(".txt"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Validation(format!(
            "no trajectory files given and none found in {}",
            dir.display()
        )));
    }
    Ok(files)
}

fn load_trajectories(files: &[PathBuf]) -> Result<Vec<Trajectory>> {
    files
        .iter()
        .map(|f| Trajectory::read_text(open(f)?).map_err(CliError::from))
        .collect()
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let dir = out_dir(cfg)?;
    for i in 0..cfg.n_paths {
        let sc = cfg.scenario_for(i);
        let traj = generate_trajectory(&sc)?;
        let name = format!("traj_{i:03}.txt");
        let mut w = create(&dir.join(&name))?;
        traj.write_text(&mut w)?;
        w.flush().map_err(|e| io_err(&dir.join(&name), e))?;
        let fname = format!("features_{i:03}.csv");
        let mut w = create(&dir.join(&fname))?;
        write_feature_csv(&feature_rows(&traj)?, &mut w)?;
        w.flush().map_err(|e| io_err(&dir.join(&fname), e))?;
        println!("{name} seed={} steps={}", sc.seed, traj.len());
    }
    Ok(())
}

const FIT_FILE: &str = "fit.txt";

fn write_fit(path: &Path, mode: FeatureMode, sel: &SelectionConfig, threshold: f64) -> Result<()> {
    let mut w = create(path)?;
    let body = format!(
        "mode={}\ndelta={}\ndelta_min={}\ndelta_max={}\ntarget_set_size={}\nsnr_threshold_db={}\n",
        mode.name(),
        sel.delta,
        sel.delta_min,
        sel.delta_max,
        sel.target_set_size,
        threshold
    );
    w.write_all(body.as_bytes()).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

fn read_fit(path: &Path) -> Result<(FeatureMode, SelectionConfig, f64)> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut mode = None;
    let mut sel = SelectionConfig::default();
    let mut threshold = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = || CliError::Runtime(format!("{}:{}: malformed line", path.display(), i + 1));
        let (k, v) = line.split_once('=').ok_or_else(bad)?;
        let num = || v.parse::<f64>().map_err(|_| bad());
        match k {
            "mode" => mode = Some(FeatureMode::parse(v).ok_or_else(bad)?),
            "delta" => sel.delta = num()?,
            "delta_min" => sel.delta_min = num()?,
            "delta_max" => sel.delta_max = num()?,
            "target_set_size" => sel.target_set_size = num()?,
            "snr_threshold_db" => threshold = Some(num()?),
            _ => return Err(bad()),
        }
    }
    match (mode, threshold) {
        (Some(m), Some(t)) => Ok((m, sel, t)),
        _ => Err(CliError::Runtime(format!(
            "{}: missing mode or threshold",
            path.display()
        ))),
    }
}

pub fn train(cfg: &RunConfig, given: &[PathBuf]) -> Result<()> {
    cfg.train.validate()?;
    cfg.keygen.validate()?;
    let trajs = load_trajectories(&trajectory_files(cfg, given)?)?;
    for t in &trajs {
        if t.len() <= cfg.train.neg_window + 1 {
            return Err(Error::DatasetTooShort {
                len: t.len(),
                needed: cfg.train.neg_window + 2,
            }
            .into());
        }
    }
    let fit = fit_assets(&trajs, cfg)?;
    let dir = out_dir(cfg)?;

    let path = dir.join("model.txt");
    let mut w = create(&path)?;
    fit.assets.model.write_text(&mut w)?;
    w.flush().map_err(|e| io_err(&path, e))?;
    for (name, table) in [
        ("table_tx.txt", &fit.assets.table_tx),
        ("table_rx.txt", &fit.assets.table_rx),
    ] {
        let path = dir.join(name);
        let mut w = create(&path)?;
        table.write_text(&mut w)?;
        w.flush().map_err(|e| io_err(&path, e))?;
    }
    write_fit(
        &dir.join(FIT_FILE),
        fit.assets.mode,
        &fit.assets.selection,
        fit.tracker.snr_threshold_db,
    )?;

    let path = dir.join("loss.csv");
    let mut w = create(&path)?;
    let mut body = String::from("epoch,triplet,reconstruction,total\n");
    for (e, l) in fit.history.iter().enumerate() {
        body.push_str(&format!(
            "{e},{},{},{}\n",
            l.triplet, l.reconstruction, l.total
        ));
    }
    w.write_all(body.as_bytes()).map_err(|e| io_err(&path, e))?;
    w.flush().map_err(|e| io_err(&path, e))?;

    let last = fit.history.last().map_or(f64::NAN, |l| l.total);
    println!(
        "trained on {} trajectories: epochs={} final_loss={last} keys={} delta={} threshold_db={}",
        trajs.len(),
        fit.history.len(),
        fit.assets.table_tx.n_keys(),
        fit.assets.selection.delta,
        fit.tracker.snr_threshold_db
    );
    Ok(())
}

fn load_assets(dir: &Path, traj: &Trajectory) -> Result<(TrackerAssets, f64)> {
    let model = ChartModel::read_text(open(&dir.join("model.txt"))?)?;
    let table_tx = BeamMapTable::read_text(open(&dir.join("table_tx.txt"))?)?;
    let table_rx = BeamMapTable::read_text(open(&dir.join("table_rx.txt"))?)?;
    let (mode, selection, threshold) = read_fit(&dir.join(FIT_FILE))?;
    let (cb_tx, cb_rx) = traj.config.codebooks()?;
    Ok((
        TrackerAssets {
            model,
            mode,
            table_tx,
            table_rx,
            selection,
            cb_tx,
            cb_rx,
        },
        threshold,
    ))
}

/// Smallest window whose accuracy reaches `target`.
fn matching_window(windows: &[Metrics], target: f64) -> Option<usize> {
    windows.iter().position(|m| m.accuracy() >= target)
}

fn summary_row(label: &str, m: &Metrics, exhaustive: &Metrics, windows: &[Metrics]) -> String {
    let sliding = match matching_window(windows, m.accuracy()) {
        Some(w) => {
            let s = &windows[w];
            let reduction = 1.0 - m.n_s as f64 / s.n_s as f64;
            format!("{w},{},{},{reduction}", s.n_s, s.accuracy())
        }
        None => "NA,NA,NA,NA".to_string(),
    };
    format!(
        "{label},{},{},{},{},{},{},{},{},{sliding}\n",
        m.steps,
        m.accuracy(),
        m.e_ps(),
        m.e_pd(),
        m.n_s,
        m.mean_scans_per_side(),
        m.misaligned,
        exhaustive.n_s
    )
}

pub const SUMMARY_HEADER: &str = "path,steps,accuracy,e_ps,e_pd,n_s,mean_scans_per_side,misaligned,exhaustive_n_s,sliding_w,sliding_n_s,sliding_accuracy,scan_reduction";

pub fn track(cfg: &RunConfig, given: &[PathBuf], assets_dir: Option<&Path>) -> Result<()> {
    cfg.tracker.validate()?;
    let files = trajectory_files(cfg, given)?;
    let trajs = load_trajectories(&files)?;
    let asset_dir = assets_dir.map_or_else(|| cfg.out_dir.clone(), Path::to_path_buf);
    let dir = out_dir(cfg)?;

    let mut summary = format!("{SUMMARY_HEADER}\n");
    let mut total = Metrics::default();
    let mut total_ex = Metrics::default();
    let mut total_sw = vec![Metrics::default(); cfg.sliding_max_w + 1];
    for (i, traj) in trajs.iter().enumerate() {
        let (mut assets, fitted) = load_assets(&asset_dir, traj)?;
        let mut tcfg = cfg.tracker;
        tcfg.snr_threshold_db = cfg.snr_threshold_db.unwrap_or(fitted);
        let run = run_tracker(traj, &mut assets, &tcfg)?;
        let path = dir.join(format!("records_{i:03}.csv"));
        let mut w = create(&path)?;
        write_records_csv(&run.rows(), &mut w)?;
        w.flush().map_err(|e| io_err(&path, e))?;

        let ex = exhaustive_baseline(traj)?.1;
        let windows = sliding_window_sweep(traj, cfg.sliding_max_w, None)?;
        summary.push_str(&summary_row(&format!("{i}"), &run.metrics, &ex, &windows));
        total.merge(&run.metrics);
        total_ex.merge(&ex);
        for (acc, m) in total_sw.iter_mut().zip(&windows) {
            acc.merge(m);
        }
    }
    let last = summary_row("total", &total, &total_ex, &total_sw);
    summary.push_str(&last);
    let path = dir.join("summary.csv");
    let mut w = create(&path)?;
    w.write_all(summary.as_bytes())
        .map_err(|e| io_err(&path, e))?;
    w.flush().map_err(|e| io_err(&path, e))?;

    println!(
        "tracked {} trajectories: accuracy={:.4} mean_scans_per_side={:.3} exhaustive_n_s={}",
        trajs.len(),
        total.accuracy(),
        total.mean_scans_per_side(),
        total_ex.n_s
    );
    match matching_window(&total_sw, total.accuracy()) {
        Some(w) => println!(
            "sliding window w={w}: n_s={} accuracy={:.4}; scan reduction {:.1}%",
            total_sw[w].n_s,
            total_sw[w].accuracy(),
            100.0 * (1.0 - total.n_s as f64 / total_sw[w].n_s as f64)
        ),
        None => println!(
            "no sliding window up to w={} reaches the tracker's accuracy",
            cfg.sliding_max_w
        ),
    }
    Ok(())
}

fn parse_modes(s: &str) -> Result<Vec<FeatureMode>> {
    s.split(',')
        .map(|m| {
            FeatureMode::parse(m.trim())
                .ok_or_else(|| CliError::Validation(format!("unknown feature mode '{m}'")))
        })
        .collect()
}

fn parse_widths(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|w| match w.trim().parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(CliError::Validation(format!("bad hidden width '{w}'"))),
        })
        .collect()
}

pub fn sweep(cfg: &RunConfig, modes: &str, widths: &str) -> Result<()> {
    let modes = parse_modes(modes)?;
    let widths = parse_widths(widths)?;
    let rows = harness::sweep(cfg, &modes, &widths)?;
    let dir = out_dir(cfg)?;
    let mut body = String::from("mode,input_dim,hidden_width,E_ps_rate,E_pd_rate\n");
    for r in &rows {
        body.push_str(&format!(
            "{},{},{},{},{}\n",
            r.mode.name(),
            r.input_dim,
            r.hidden_width,
            r.e_ps_rate,
            r.e_pd_rate
        ));
    }
    let path = dir.join("sweep.csv");
    let mut w = create(&path)?;
    w.write_all(body.as_bytes()).map_err(|e| io_err(&path, e))?;
    w.flush().map_err(|e| io_err(&path, e))?;

    for mode in &modes {
        let small: Vec<_> = rows
            .iter()
            .filter(|r| r.mode == *mode && r.hidden_width <= 32)
            .collect();
        if small.len() >= 2 {
            let (a, b) = (small[0], small[small.len() - 1]);
            println!(
                "{}: E_ps rate {:.4} at width {} -> {:.4} at width {}",
                mode.name(),
                a.e_ps_rate,
                a.hidden_width,
                b.e_ps_rate,
                b.hidden_width
            );
        }
    }
    println!("{} sweep rows written", rows.len());
    Ok(())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn timeliness(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let mut body = String::from("path_idx,E_ps_rate,E_pd_rate,codebook\n");
    for n in [64, 128] {
        let mut c = cfg.clone();
        c.scenario.n_t = n;
        c.scenario.n_r = n;
        let rows = harness::drift_series(&c)?;
        for r in &rows {
            body.push_str(&format!(
                "{},{},{},{}\n",
                r.path_idx,
                r.metrics.e_ps_rate(),
                r.metrics.e_pd_rate(),
                r.codebook
            ));
        }
        let ps = median(rows.iter().map(|r| r.metrics.e_ps_rate()).collect());
        let pd = median(rows.iter().map(|r| r.metrics.e_pd_rate()).collect());
        println!("codebook {n}: median E_ps rate {ps:.4}, median E_pd rate {pd:.4}");
    }
    let path = dir.join("drift.csv");
    let mut w = create(&path)?;
    w.write_all(body.as_bytes()).map_err(|e| io_err(&path, e))?;
    w.flush().map_err(|e| io_err(&path, e))
}
