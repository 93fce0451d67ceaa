use fla_core::align::{align_rows, invert};
use fla_core::classify::{parse_segments, write_segments};
use fla_core::em::InitStrategy;
use fla_core::tables::pair_count;
use fla_core::{
    fit, parse_query, query, CooccurrenceAccumulator, FitConfig, PairwiseJointSet, QueryContext, Segment,
    SegmentSet, SymbolSequences, SymbolTrack, WeightRule, WindowSpec,
};
use ndarray::{Array2, Axis};
use proptest::prelude::*;

/// Alphabet sizes plus tracks of symbol tuples drawn from them.
fn sequences() -> impl Strategy<Value = SymbolSequences> {
    prop::collection::vec(2usize..6, 2..4).prop_flat_map(|alphabets| {
        let frame = alphabets.iter().map(|&a| 0..a as u32).collect::<Vec<_>>();
        let track = prop::collection::vec(frame, 1..30);
        prop::collection::vec(track, 1..6).prop_map(move |tracks| SymbolSequences {
            alphabet_sizes: alphabets.clone(),
            tracks: tracks
                .into_iter()
                .enumerate()
                .map(|(n, frames)| {
                    let times = (0..frames.len() as i64).map(|t| 2 * t + n as i64).collect();
                    SymbolTrack::new(format!("t{n}"), times, frames)
                })
                .collect(),
        })
    })
}

fn window(half_width: u32, discount: bool) -> WindowSpec {
    WindowSpec {
        half_width,
        sigma: (half_width as f64 / 2.0).max(0.5),
        stride: 1,
        weight: if discount { WeightRule::RedundancyDiscount { horizon: 5 } } else { WeightRule::Uniform },
    }
}

fn joints(seqs: &SymbolSequences, w: WindowSpec) -> PairwiseJointSet {
    let mut acc = CooccurrenceAccumulator::new(seqs.alphabet_sizes.clone(), w);
    acc.accumulate_all(seqs).unwrap();
    acc.finalize().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sharded_merge_matches_single_pass(seqs in sequences(), hw in 0u32..4, discount: bool, split in 0usize..6) {
        let w = window(hw, discount);
        let batch = joints(&seqs, w);
        let mut a = CooccurrenceAccumulator::new(seqs.alphabet_sizes.clone(), w);
        let mut b = CooccurrenceAccumulator::new(seqs.alphabet_sizes.clone(), w);
        for (n, t) in seqs.tracks.iter().enumerate() {
            if n < split { a.accumulate_track(t).unwrap() } else { b.accumulate_track(t).unwrap() }
        }
        let merged = b.merge(&a).unwrap().finalize().unwrap();
        let k = seqs.alphabet_sizes.len();
        prop_assert_eq!(batch.tables.len(), pair_count(k));
        prop_assert_eq!(pair_count(k), k * (k + 1) / 2);
        for i in 0..k {
            for j in 0..k {
                let forward = batch.joint(i, j);
                prop_assert_eq!(batch.joint(j, i), forward.t());
                for (x, y) in batch.joint(i, j).iter().zip(merged.joint(i, j).iter()) {
                    prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(y.abs()));
                }
                prop_assert!((batch.joint(i, j).sum() - 1.0).abs() <= 1e-12);
                let from_pair = batch.joint(i, j).sum_axis(Axis(1));
                let from_diag = batch.joint(i, i).sum_axis(Axis(1));
                for (x, y) in from_pair.iter().zip(from_diag.iter()) {
                    prop_assert!((x - y).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn em_never_increases_the_objective(
        seqs in sequences(),
        counts in prop::collection::vec(1usize..4, 3),
        seed: u64,
        anchors: bool,
    ) {
        let p = joints(&seqs, window(2, false));
        let k = seqs.alphabet_sizes.len();
        let config = FitConfig {
            seed,
            restarts: 1,
            max_iters: 200,
            init: if anchors { InitStrategy::Anchors { blend: 0.1 } } else { InitStrategy::Jitter { jitter: 0.05 } },
            ..FitConfig::default()
        };
        let counts: Vec<usize> = (0..k).map(|f| counts[f].min(seqs.alphabet_sizes[f])).collect();
        let (model, trace) = fit(&p, &counts, &config).unwrap();
        for w in trace.objectives.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9, "{} -> {}", w[0], w[1]);
        }
        model.validate(1e-9).unwrap();
        for i in 0..k {
            for j in 0..k {
                prop_assert!((model.pairwise_joint(i, j).sum() - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn rank_one_is_the_outer_product_of_marginals(seqs in sequences(), seed: u64) {
        let p = joints(&seqs, window(1, true));
        let k = seqs.alphabet_sizes.len();
        let config = FitConfig { seed, ..FitConfig::default() };
        let (model, trace) = fit(&p, &vec![1; k], &config).unwrap();
        prop_assert!(trace.iterations <= 2);
        for i in 0..k {
            for j in 0..k {
                let mi = p.joint(i, i).sum_axis(Axis(1));
                let mj = p.joint(j, j).sum_axis(Axis(1));
                let outer = Array2::from_shape_fn((mi.len(), mj.len()), |(a, b)| mi[a] * mj[b]);
                let err = (&model.pairwise_joint(i, j) - &outer).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
                prop_assert!(err <= 1e-9, "pair ({i},{j}) error {err}");
            }
        }
    }

    #[test]
    fn alignment_recovers_row_permutations(rows in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 5), 2..6), seed: u64) {
        let k = rows.len();
        let mut reference = Array2::from_shape_fn((k, 5), |(r, c)| rows[r][c]);
        for mut row in reference.rows_mut() {
            let s = row.sum();
            row /= s;
        }
        let mut perm: Vec<usize> = (0..k).collect();
        perm.rotate_left((seed % k as u64) as usize);
        let estimate = Array2::from_shape_fn((k, 5), |(r, c)| reference[[perm[r], c]]);
        let found = align_rows(&reference, &estimate).unwrap();
        for (c, &e) in found.iter().enumerate() {
            prop_assert_eq!(reference.row(c), estimate.row(e));
        }
        let inv = invert(&found);
        for (c, &e) in found.iter().enumerate() {
            prop_assert_eq!(inv[e], c);
        }
    }
}

fn segments() -> impl Strategy<Value = SegmentSet> {
    prop::collection::vec((0usize..4, 1i64..40, prop::collection::vec(0u32..3, 4)), 0..30).prop_map(|raw| {
        let mut next = [0i64; 4];
        SegmentSet {
            segments: raw
                .into_iter()
                .map(|(track, len, labels)| {
                    let start = next[track];
                    next[track] += len;
                    Segment {
                        track_id: format!("track-{track}"),
                        start,
                        end: start + len - 1,
                        labels,
                        confidence: Vec::new(),
                    }
                })
                .collect(),
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn segment_files_round_trip(set in segments()) {
        let mut text = Vec::new();
        write_segments(&set, &mut text).unwrap();
        let back = parse_segments(text.as_slice()).unwrap();
        prop_assert_eq!(&back, &set);
    }

    #[test]
    fn query_connectives_are_set_algebra(set in segments(), a in 0u32..3, b in 0u32..3, secs in 0u32..3) {
        let ctx = QueryContext::new(vec![3, 3, 3, 3]);
        let ids = |q: &str| -> Vec<String> {
            let pred = parse_query(q, &ctx).unwrap();
            query(&set, &pred, 1.0).into_iter().map(|m| m.track_id).collect()
        };
        let mut all: Vec<String> = set.segments.iter().map(|s| s.track_id.clone()).collect();
        all.sort();
        all.dedup();
        prop_assert_eq!(ids("true"), all.clone());
        prop_assert!(ids("false").is_empty());
        let p = format!("[size={a}] for >= {secs}s");
        let q = format!("[speed={b}]");
        let (pp, qq) = (ids(&p), ids(&q));
        let not_p = ids(&format!("not ({p})"));
        prop_assert_eq!(not_p.len() + pp.len(), all.len());
        prop_assert!(not_p.iter().all(|t| !pp.contains(t)));
        let union = ids(&format!("{p} or {q}"));
        prop_assert!(all.iter().all(|t| union.contains(t) == (pp.contains(t) || qq.contains(t))));
        let both = ids(&format!("{p} and {q}"));
        prop_assert!(all.iter().all(|t| both.contains(t) == (pp.contains(t) && qq.contains(t))));
    }
}
