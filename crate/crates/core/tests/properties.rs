use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use chartbeam::beam_map::{
    make_key, mul_mod, next_prime_above, select_beams, universal_hash, BeamEntry, BeamMapTable,
    HashParams, KeyGenConfig,
};
use chartbeam::channel::{dft_codebook, BeamPair, BeamResponse, Path, C64};
use chartbeam::chart::{triplet_hinge, Activation, ChartModel, Triplet};
use chartbeam::features::{FeatureMode, FeatureVector};
use chartbeam::tracker::{side_candidates, window, Metrics, RecordRow};
use chartbeam::trajectory::ring_distance;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn beam_center_quantizes_back(k in 0usize..128, pow in 2u32..8) {
        let n = 1usize << pow;
        let k = k % n;
        let cb = dft_codebook(n).unwrap();
        prop_assert_eq!(cb.quantize(cb.beam_center(k)), k);
    }

    #[test]
    fn quantized_angle_is_within_half_a_beam(theta in -1.0f64..1.0) {
        let cb = dft_codebook(64).unwrap();
        let k = cb.quantize(theta);
        let c = cb.beam_center(k);
        // the sine-space circle has period 2
        let d = (theta - c).rem_euclid(2.0);
        prop_assert!(d.min(2.0 - d) <= 1.0 / 64.0 + 1e-12);
    }

    #[test]
    fn beam_response_best_dominates_every_pair(
        angles in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, 0.05f64..1.0), 1..4),
        probe in (0usize..16, 0usize..16),
    ) {
        let cb = dft_codebook(16).unwrap();
        let paths: Vec<Path> = angles
            .iter()
            .map(|&(t, r, g)| Path::new(C64::new(g, 0.0), t, r))
            .collect();
        let resp = BeamResponse::new(&paths, &cb, &cb);
        let (best, p) = resp.best();
        prop_assert!(p >= resp.power(BeamPair::new(probe.0, probe.1)));
        prop_assert!((resp.power(best) - p).abs() < 1e-12);
    }

    #[test]
    fn hash_lands_in_table(a in any::<u64>(), m in 1usize..1000, c in 1u128..1_000_000, d in 0u128..1_000_000) {
        let s = next_prime_above(1_000_000).unwrap();
        let p = HashParams::new(s, m, c, d).unwrap();
        prop_assert!(universal_hash(a as u128 % s, &p) < m);
    }

    #[test]
    fn mul_mod_is_commutative_and_bounded(a in any::<u128>(), b in any::<u128>(), m in 1u128..) {
        let x = mul_mod(a, b, m);
        prop_assert!(x < m);
        prop_assert_eq!(x, mul_mod(b, a, m));
    }

    #[test]
    fn keys_are_nonnegative_and_shift_invariant(y0 in 0.0f64..50.0, y1 in 0.0f64..50.0) {
        let cfg = KeyGenConfig { c: 2, k_res: 10, origin_shift: [0.0, 0.0] };
        let k = make_key([y0, y1], &cfg).unwrap();
        let shifted = KeyGenConfig { origin_shift: [-3.0, -4.0], ..cfg };
        prop_assert_eq!(make_key([y0 - 3.0, y1 - 4.0], &shifted).unwrap(), k);
        prop_assert_eq!(k % cfg.multiplier().unwrap(), 0);
    }

    #[test]
    fn inserted_points_are_found(pts in proptest::collection::vec((0.0f64..20.0, 0.0f64..20.0, 0usize..64), 1..60), seed in any::<u64>()) {
        let points: Vec<[f64; 2]> = pts.iter().map(|p| [p.0, p.1]).collect();
        let beams: Vec<usize> = pts.iter().map(|p| p.2).collect();
        let table = BeamMapTable::build(&points, &beams, KeyGenConfig::default(), seed).unwrap();
        table.audit().unwrap();
        for (y, b) in points.iter().zip(&beams) {
            let hit = table.lookup(*y).unwrap();
            prop_assert!(hit.entries.iter().any(|e| e.beam == *b && e.anchors.contains(y)));
        }
        let probes = table.mean_successful_probes();
        prop_assert!(probes >= 1.0);
    }

    #[test]
    fn delta_filter_keeps_only_close_entries(
        entries in proptest::collection::vec((0usize..64, 0.0f64..10.0, 0.0f64..10.0), 0..12),
        delta in 0.0f64..8.0,
    ) {
        let entries: Vec<BeamEntry> = entries
            .iter()
            .map(|&(b, x, y)| BeamEntry { beam: b, anchors: vec![[x, y]], hits: 0, updated: false })
            .collect();
        let y = [5.0, 5.0];
        let kept = select_beams(&entries, y, delta);
        prop_assert!(kept.iter().all(|e| e.anchor_distance(y) <= delta));
        let close = entries.iter().filter(|e| e.anchor_distance(y) <= delta).count();
        prop_assert_eq!(kept.len(), close);
    }

    #[test]
    fn candidates_start_with_located_and_stay_unique(
        located in 0usize..64,
        hits in proptest::collection::vec(0usize..64, 0..5),
        radius in 0usize..5,
        cap in 1usize..10,
    ) {
        let c = side_candidates(located, &hits, 64, radius, cap);
        prop_assert_eq!(c[0], located);
        prop_assert!(c.len() <= cap);
        let mut u = c.clone();
        u.sort_unstable();
        u.dedup();
        prop_assert_eq!(u.len(), c.len());
        prop_assert!(c.iter().all(|&b| b < 64));
        // with room to spare every ring neighbor is present
        if cap >= 1 + hits.len() + 2 * radius {
            for b in 0..64 {
                if ring_distance(b, located, 64) <= radius {
                    prop_assert!(c.contains(&b));
                }
            }
        }
    }

    #[test]
    fn windows_wrap(center in 0usize..64, w in 0usize..40) {
        let win = window(center, w, 64);
        prop_assert_eq!(win.len(), (2 * w + 1).min(64));
        prop_assert!(win.iter().all(|&b| ring_distance(b, center, 64) <= w));
    }

    #[test]
    fn feature_modes_round_trip(a in proptest::array::uniform5(-1.0f64..1.0)) {
        let f = FeatureVector::from_array(a);
        for mode in [FeatureMode::Full, FeatureMode::Azimuth, FeatureMode::Elevation] {
            let v = mode.select(&f);
            prop_assert_eq!(v.len(), mode.dim());
            prop_assert_eq!(mode.merge(&FeatureVector::from_array([0.0; 5]), &v).to_array().iter()
                .zip(a.iter()).enumerate()
                .filter(|(i, _)| mode.fields().contains(i))
                .all(|(_, (x, y))| x == y), true);
            prop_assert_eq!(mode.merge(&f, &v), f);
        }
    }

    #[test]
    fn hinge_is_bounded_below_by_zero(
        pts in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 3..10),
        delta in 0.0f64..3.0,
    ) {
        let n = pts.len();
        let y = ndarray::Array2::from_shape_fn((n, 2), |(i, c)| if c == 0 { pts[i].0 } else { pts[i].1 });
        let t: Vec<Triplet> = (0..n).map(|a| Triplet { anchor: a, positive: (a + 1) % n, negative: (a + 2) % n }).collect();
        let l = triplet_hinge(y.view(), &t, delta);
        prop_assert!(l >= 0.0);
        // collapsing every point makes each term exactly delta
        let z = ndarray::Array2::<f64>::zeros((n, 2));
        prop_assert!((triplet_hinge(z.view(), &t, delta) - delta).abs() <= 1e-12 * delta.max(1.0));
        prop_assert_eq!(triplet_hinge(z.view(), &t, 1.0), 1.0);
    }

    #[test]
    fn model_text_round_trip_is_exact(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = ChartModel::new(3, &[5, 4], 2, Activation::Sigmoid, &mut rng).unwrap();
        let mut buf = Vec::new();
        m.write_text(&mut buf).unwrap();
        let back = ChartModel::read_text(&buf[..]).unwrap();
        prop_assert_eq!(back.params_flat(), m.params_flat());
        let x = [0.3, -0.2, 0.9];
        prop_assert_eq!(back.encode(&x).unwrap(), m.encode(&x).unwrap());
    }

    #[test]
    fn metrics_merge_is_additive(
        rows in proptest::collection::vec((0usize..8, 0usize..8, 0usize..8, 0usize..8, any::<bool>(), any::<bool>(), 2usize..20), 1..30),
        split in 0usize..30,
    ) {
        let rows: Vec<RecordRow> = rows
            .iter()
            .enumerate()
            .map(|(t, &(lt, lr, tt, tr, et, er, scans))| RecordRow {
                t,
                located: BeamPair::new(lr, lt),
                truth: BeamPair::new(tr, tt),
                pred: BeamPair::new(tr, tt),
                n_cand_t: 1,
                n_cand_r: 1,
                scans,
                e_t: et,
                e_r: er,
                misaligned: false,
                snr_db: 0.0,
                fallback_t: false,
                fallback_r: false,
            })
            .collect();
        let k = split.min(rows.len());
        let mut m = Metrics::from_rows(&rows[..k]);
        m.merge(&Metrics::from_rows(&rows[k..]));
        prop_assert_eq!(m, Metrics::from_rows(&rows));
        prop_assert!(m.e_pd() <= 2 * m.steps);
        prop_assert!(m.n_s >= m.steps);
        prop_assert!((0.0..=1.0).contains(&m.accuracy()));
    }
}
