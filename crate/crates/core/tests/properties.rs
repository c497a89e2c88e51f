use std::path::Path;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tgnn_core::config::{parse_config, RunConfig, Selection};
use tgnn_core::data::{aggregate_cross_domain, recentralize, Point, SequenceSample};
use tgnn_core::eval::{ade, best_of, fde};
use tgnn_core::graph::{build_adjacency, AdjacencyKind};
use tgnn_core::numcore::{Tape, Tensor};

fn point() -> impl Strategy<Value = Point> {
    (-100.0..100.0f64, -100.0..100.0f64).prop_map(|(x, y)| [x, y])
}

fn tracks(n: usize, len: usize) -> impl Strategy<Value = Vec<Vec<Point>>> {
    prop::collection::vec(prop::collection::vec(point(), len), n)
}

fn sample() -> impl Strategy<Value = SequenceSample> {
    (1usize..8, 2usize..6, 1usize..6).prop_flat_map(|(n, obs, pred)| {
        tracks(n, obs + pred).prop_map(move |absolute| SequenceSample {
            ped_ids: (0..n as i64).collect(),
            absolute,
            relative: Vec::new(),
            offset: [0.0, 0.0],
            obs_len: obs,
            pred_len: pred,
        })
    })
}

fn kind() -> impl Strategy<Value = AdjacencyKind> {
    prop_oneof![
        Just(AdjacencyKind::L2),
        Just(AdjacencyKind::reciprocal()),
        (0.5..10.0f64).prop_map(|sigma| AdjacencyKind::Gaussian { sigma }),
        Just(AdjacencyKind::rational()),
    ]
}

fn shifted(points: &[Vec<Point>], by: Point) -> Vec<Vec<Point>> {
    points
        .iter()
        .map(|t| t.iter().map(|p| [p[0] + by[0], p[1] + by[1]]).collect())
        .collect()
}

proptest! {
    #[test]
    fn decentralized_mean_is_origin_and_round_trips(s in sample()) {
        let d = s.decentralize();
        let last = d.obs_len - 1;
        let n = d.num_peds() as f64;
        for axis in 0..2 {
            let m: f64 = d.relative.iter().map(|t| t[last][axis]).sum::<f64>() / n;
            prop_assert!(m.abs() < 1e-9);
        }
        let back = recentralize(&d.relative, d.offset);
        for (b, a) in back.iter().flatten().zip(d.absolute.iter().flatten()) {
            prop_assert!((b[0] - a[0]).abs() < 1e-12 && (b[1] - a[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn observed_view_is_translation_invariant(s in sample(), by in point()) {
        let moved = SequenceSample { absolute: shifted(&s.absolute, by), ..s.clone() };
        let (a, b) = (s.observed(), moved.observed());
        for (p, q) in a.relative.iter().flatten().zip(b.relative.iter().flatten()) {
            prop_assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..6, cols in 1usize..6, scale in 0.0..50.0f64, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tensor::zeros(&[rows, cols]);
        for x in t.data_mut() {
            *x = scale * rand::Rng::random_range(&mut rng, -1.0..1.0);
        }
        let mut tape = Tape::new();
        let v = tape.constant(t);
        let s = tape.softmax(v, 1).unwrap();
        let out = tape.value(s);
        for i in 0..rows {
            let sum: f64 = (0..cols).map(|j| out.at(i, j)).sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!((0..cols).all(|j| out.at(i, j) >= 0.0));
        }
    }

    #[test]
    fn adjacency_is_symmetric_with_fixed_diagonal(frame in prop::collection::vec(point(), 1..10), k in kind()) {
        let a = build_adjacency(&frame, k).unwrap();
        for i in 0..frame.len() {
            prop_assert_eq!(a.at(i, i), k.weight(0.0));
            for j in 0..frame.len() {
                prop_assert_eq!(a.at(i, j), a.at(j, i));
            }
        }
    }

    #[test]
    fn metrics_are_translation_invariant((pred, truth) in (1usize..5, 1usize..8).prop_flat_map(|(n, l)| (tracks(n, l), tracks(n, l))), by in point()) {
        let (p2, t2) = (shifted(&pred, by), shifted(&truth, by));
        prop_assert!((ade(&pred, &truth).unwrap() - ade(&p2, &t2).unwrap()).abs() < 1e-9);
        prop_assert!((fde(&pred, &truth).unwrap() - fde(&p2, &t2).unwrap()).abs() < 1e-9);
        prop_assert!(fde(&pred, &truth).unwrap() >= 0.0);
    }

    #[test]
    fn best_of_never_worsens_with_more_draws(
        (draws, truth) in (1usize..4, 1usize..6).prop_flat_map(|(n, l)| (prop::collection::vec(tracks(n, l), 1..12), tracks(n, l)))
    ) {
        let mut previous = (f64::INFINITY, f64::INFINITY);
        for k in 1..=draws.len() {
            let (a, f) = best_of(&draws, &truth, k, Selection::PerMetric).unwrap();
            prop_assert!(a <= previous.0 && f <= previous.1);
            previous = (a, f);
            let (by_ade, _) = best_of(&draws, &truth, k, Selection::ByAde).unwrap();
            prop_assert_eq!(by_ade, a);
        }
    }

    #[test]
    fn cross_domain_spread_ignores_order_and_shift(values in prop::collection::vec(-1e3..1e3f64, 2..8), by in -1e3..1e3f64) {
        let (ed, sd) = aggregate_cross_domain(&values).unwrap();
        let mut reversed = values.clone();
        reversed.reverse();
        let moved: Vec<f64> = values.iter().map(|v| v + by).collect();
        let (ed2, sd2) = aggregate_cross_domain(&reversed).unwrap();
        let (ed3, sd3) = aggregate_cross_domain(&moved).unwrap();
        prop_assert!(ed >= 0.0 && sd >= 0.0);
        prop_assert!((ed - ed2).abs() < 1e-9 && (sd - sd2).abs() < 1e-9);
        prop_assert!((ed - ed3).abs() < 1e-9 && (sd - sd3).abs() < 1e-7);
    }

    #[test]
    fn config_render_parses_back(lambda in 0.0..20.0f64, epochs in 1usize..500, k in 1usize..50, sigma in 0.5..10.0f64) {
        let mut cfg = RunConfig::default();
        cfg.train.lambda = lambda;
        cfg.train.epochs = epochs;
        cfg.train.adjacency = AdjacencyKind::Gaussian { sigma };
        cfg.k = k;
        let back = parse_config(&cfg.render(), Path::new("rendered")).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
