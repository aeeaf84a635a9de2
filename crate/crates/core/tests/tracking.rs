use chartbeam::beam_map::{BeamMapTable, SelectionConfig};
use chartbeam::chart::chart_dataset;
use chartbeam::harness::{feature_matrix, fit_assets, FitOutcome, RunConfig};
use chartbeam::tracker::{
    exhaustive_baseline, read_records_csv, run_tracker, sliding_window_baseline,
    sliding_window_run, sliding_window_sweep, timeliness_eval, write_records_csv, Metrics,
    RecordRow, TrackerConfig,
};
use chartbeam::trajectory::{generate_trajectory, ring_distance, Trajectory};

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::standard();
    cfg.scenario.n_steps = 90;
    cfg.train.hidden = vec![32, 16];
    cfg.train.epochs = 30;
    cfg
}

fn fitted(cfg: &RunConfig) -> (Trajectory, FitOutcome) {
    let traj = generate_trajectory(&cfg.scenario).unwrap();
    let fit = fit_assets(std::slice::from_ref(&traj), cfg).unwrap();
    (traj, fit)
}

#[test]
fn records_follow_the_step_definitions() {
    let cfg = small_config();
    let (traj, fit) = fitted(&cfg);
    let mut assets = fit.assets.clone();
    let run = run_tracker(&traj, &mut assets, &fit.tracker).unwrap();
    let (n_t, n_r) = (cfg.scenario.n_t, cfg.scenario.n_r);
    assert_eq!(run.records.len(), traj.len());
    for r in &run.records {
        assert_eq!(r.cand_t[0], r.located.tx);
        assert_eq!(r.cand_r[0], r.located.rx);
        assert_eq!(r.e_t, !r.misaligned && !r.cand_t.contains(&r.truth.tx));
        assert_eq!(r.e_r, !r.misaligned && !r.cand_r.contains(&r.truth.rx));
        if !r.misaligned && r.cand_t.contains(&r.truth.tx) && r.cand_r.contains(&r.truth.rx) {
            assert_eq!(r.pred, r.truth, "t={}", r.t);
        }
        let base = r.cand_t.len() + r.cand_r.len();
        if r.misaligned {
            assert_eq!(r.scans, base + n_t + n_r);
            assert_eq!(r.pred, r.truth);
            assert!(r.snr_db >= fit.tracker.snr_threshold_db || r.pred == r.truth);
        } else {
            assert_eq!(r.scans, base);
            assert!(r.snr_db >= fit.tracker.snr_threshold_db);
        }
    }
    assert_eq!(run.retrain.len(), run.metrics.misaligned);
}

/// Independent fold over the record rows.
fn recount(rows: &[RecordRow]) -> (usize, usize, usize, usize) {
    let mut e_ps = 0;
    let mut e_pd = 0;
    let mut n_s = 0;
    let mut formula = 0;
    for r in rows {
        e_ps += usize::from(r.located.tx != r.truth.tx) + usize::from(r.located.rx != r.truth.rx);
        e_pd += usize::from(r.e_t) + usize::from(r.e_r);
        n_s += r.scans;
        let t = if r.fallback_t { 2 } else { r.n_cand_t };
        let q = if r.fallback_r { 2 } else { r.n_cand_r };
        let ex = if r.misaligned {
            r.scans - r.n_cand_t - r.n_cand_r
        } else {
            0
        };
        formula += t + q + ex;
    }
    (e_ps, e_pd, n_s, formula)
}

#[test]
fn metrics_recompute_from_csv() {
    let cfg = small_config();
    let (traj, fit) = fitted(&cfg);
    let mut assets = fit.assets.clone();
    let run = run_tracker(&traj, &mut assets, &fit.tracker).unwrap();
    let mut buf = Vec::new();
    write_records_csv(&run.rows(), &mut buf).unwrap();
    let rows = read_records_csv(&buf[..]).unwrap();
    assert_eq!(rows.len(), traj.len());
    assert_eq!(Metrics::from_rows(&rows), run.metrics);
    let (e_ps, e_pd, n_s, formula) = recount(&rows);
    assert_eq!(e_ps, run.metrics.e_ps());
    assert_eq!(e_pd, run.metrics.e_pd());
    assert_eq!(n_s, run.metrics.n_s);
    assert_eq!(formula, run.metrics.n_s_formula);
    assert!(run.metrics.n_s >= run.metrics.steps);
}

#[test]
fn formula_count_matches_when_fallback_emits_two_beams() {
    let mut cfg = small_config();
    cfg.tracker.max_candidates = 2;
    let (traj, fit) = fitted(&cfg);
    let mut assets = fit.assets.clone();
    let run = run_tracker(&traj, &mut assets, &fit.tracker).unwrap();
    assert!(run.metrics.zeta_t > 0);
    assert_eq!(run.metrics.n_s, run.metrics.n_s_formula);
}

#[test]
fn full_codebook_candidates_reproduce_exhaustive_search() {
    let cfg = small_config();
    let (traj, fit) = fitted(&cfg);
    let mut assets = fit.assets.clone();
    let tcfg = TrackerConfig {
        neighbor_radius: 32,
        max_candidates: 64,
        ..fit.tracker
    };
    let run = run_tracker(&traj, &mut assets, &tcfg).unwrap();
    let (ex_rows, ex) = exhaustive_baseline(&traj).unwrap();
    assert_eq!(ex.accuracy(), 1.0);
    assert_eq!(ex.n_s, traj.len() * 128);
    assert_eq!(run.metrics.e_pd(), 0);
    assert_eq!(run.metrics.misaligned, 0);
    for (r, e) in run.records.iter().zip(&ex_rows) {
        assert_eq!(r.pred, e.pred);
        assert_eq!(e.pred, traj.truth[r.t]);
    }
}

#[test]
fn sliding_window_limits() {
    let cfg = small_config();
    let traj = generate_trajectory(&cfg.scenario).unwrap();
    let (wide_rows, wide) = sliding_window_baseline(&traj, 32).unwrap();
    let (ex_rows, ex) = exhaustive_baseline(&traj).unwrap();
    // the window's located beam is the previous pair, so only E_ps may differ
    assert_eq!(
        (wide.e_pd(), wide.n_s, wide.accuracy()),
        (ex.e_pd(), ex.n_s, ex.accuracy())
    );
    for (w, e) in wide_rows.iter().zip(&ex_rows) {
        assert_eq!(w.pred, e.pred);
    }
    let (rows, frozen) = sliding_window_baseline(&traj, 0).unwrap();
    assert!(rows.iter().all(|r| r.pred == traj.truth[0]));
    assert_eq!(frozen.n_s, 2 * traj.len());
}

#[test]
fn wrong_tables_give_full_positioning_error() {
    let cfg = small_config();
    let (traj, fit) = fitted(&cfg);
    let (data, _, _) = feature_matrix(std::slice::from_ref(&traj), cfg.mode).unwrap();
    let points = chart_dataset(&fit.assets.model, data.view()).unwrap();
    // every label points half a codebook away from anything the trajectory visits
    let far = |used: Vec<usize>, n: usize| {
        (0..n)
            .max_by_key(|b| used.iter().map(|u| ring_distance(*b, *u, n)).min().unwrap())
            .unwrap()
    };
    let bt = far(traj.truth.iter().map(|b| b.tx).collect(), 64);
    let br = far(traj.truth.iter().map(|b| b.rx).collect(), 64);
    let keygen = *fit.assets.table_tx.keygen();
    let mut assets = fit.assets.clone();
    assets.table_tx = BeamMapTable::build(&points, &vec![bt; points.len()], keygen, 1).unwrap();
    assets.table_rx = BeamMapTable::build(&points, &vec![br; points.len()], keygen, 2).unwrap();
    assets.selection = SelectionConfig {
        delta: 0.0,
        ..assets.selection
    };
    let tcfg = TrackerConfig {
        neighbor_radius: 0,
        snr_threshold_db: f64::NEG_INFINITY,
        ..fit.tracker
    };
    let run = run_tracker(&traj, &mut assets, &tcfg).unwrap();
    let n = traj.len();
    assert_eq!(run.metrics.e_ps(), 2 * n);
    assert_eq!(run.metrics.e_pd(), 2 * n);
    assert_eq!(run.metrics.accuracy(), 0.0);
    assert_eq!(run.metrics.misaligned, 0);
}

#[test]
fn single_trajectory_timeliness_equals_in_sample_run() {
    let cfg = small_config();
    let (traj, fit) = fitted(&cfg);
    let series = timeliness_eval(&fit.assets, std::slice::from_ref(&traj), &fit.tracker).unwrap();
    let mut assets = fit.assets.clone();
    let run = run_tracker(&traj, &mut assets, &fit.tracker).unwrap();
    assert_eq!(series, vec![run.metrics]);
}

#[test]
fn runs_are_deterministic() {
    let cfg = small_config();
    let (traj, a) = fitted(&cfg);
    let (_, b) = fitted(&cfg);
    let mut x = a.assets.clone();
    let mut y = b.assets.clone();
    let ra = run_tracker(&traj, &mut x, &a.tracker).unwrap();
    let rb = run_tracker(&traj, &mut y, &b.tracker).unwrap();
    assert_eq!(ra.rows(), rb.rows());
}

#[test]
fn forced_jump_is_caught_by_the_table() {
    let mut cfg = small_config();
    cfg.scenario.jump_probability = 0.0;
    cfg.scenario.forced_jumps = vec![50];
    cfg.train.epochs = 120;
    let (traj, fit) = fitted(&cfg);
    let j = 50;
    let (a, b) = (traj.truth[j - 1], traj.truth[j]);
    assert!(ring_distance(a.tx, b.tx, 64) > 2 || ring_distance(a.rx, b.rx, 64) > 2);
    let mut assets = fit.assets.clone();
    let run = run_tracker(&traj, &mut assets, &fit.tracker).unwrap();
    let rec = &run.records[j];
    assert!(
        rec.cand_t.contains(&b.tx) && rec.cand_r.contains(&b.rx),
        "{rec:?}"
    );
    let (rows, _) = sliding_window_baseline(&traj, 1).unwrap();
    assert!(rows[j].e_t || rows[j].e_r);
}

#[test]
fn sliding_sweep_matches_single_window_runs() {
    let cfg = small_config();
    let traj = generate_trajectory(&cfg.scenario).unwrap();
    for th in [None, Some(15.0)] {
        let sweep = sliding_window_sweep(&traj, 6, th).unwrap();
        assert_eq!(sweep.len(), 7);
        for (w, m) in sweep.iter().enumerate() {
            assert_eq!(*m, sliding_window_run(&traj, w, th).unwrap().1);
        }
    }
}
