use fla_core::align::align_rows;
use fla_core::oracle::WindowSample;
use fla_core::synth::PlantedClasses;
use fla_core::{
    fit_full_joint, generate_scene, BinConfig, CooccurrenceAccumulator, Feature, FitConfig, PairwiseJointSet,
    QuantizerSet, SceneSpec, WindowSampleSet, WindowSpec,
};
use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn demo_joints() -> (SceneSpec, QuantizerSet, PairwiseJointSet) {
    let spec = SceneSpec::demo_road(42);
    let (tracks, _) = generate_scene(&spec).unwrap();
    let bins: BinConfig = "64,64,64,16x16".parse().unwrap();
    let q = QuantizerSet::fit(&tracks, &bins).unwrap();
    let mut acc = CooccurrenceAccumulator::new(q.alphabet_sizes(), WindowSpec::default());
    acc.accumulate_all(&q.quantize(&tracks).unwrap()).unwrap();
    let joints = acc.finalize().unwrap();
    (spec, q, joints)
}

/// Maximal runs of bins holding at least `fraction` of the tallest bin.
fn modes(hist: &[f64], fraction: f64) -> usize {
    let max = hist.iter().copied().fold(0.0, f64::max);
    let above: Vec<bool> = hist.iter().map(|&v| v >= fraction * max).collect();
    above.iter().enumerate().filter(|&(n, &a)| a && (n == 0 || !above[n - 1])).count()
}

#[test]
fn demo_histograms_show_the_planted_modes() {
    let (spec, _, joints) = demo_joints();
    let size = joints.marginal(Feature::Size.index());
    let speed = joints.marginal(Feature::Speed.index());
    assert_eq!(modes(&size, 0.05), spec.planted_classes(Feature::Size).len());
    assert_eq!(modes(&speed, 0.05), spec.planted_classes(Feature::Speed).len());
    assert_eq!(spec.class_counts(), [2, 3, 6, 8]);
}

#[test]
fn demo_size_speed_joint_has_small_slow_and_large_fast_blobs() {
    let (spec, q, joints) = demo_joints();
    let p = joints.joint(Feature::Size.index(), Feature::Speed.index());
    let bin = |f: Feature, v: f64| q.spec(f).symbol(v) as usize;
    let means = |f: Feature| match spec.planted_classes(f) {
        PlantedClasses::Scalar(g) => {
            let mut m: Vec<f64> = g.iter().map(|g| g.mean).collect();
            m.sort_by(f64::total_cmp);
            m
        }
        PlantedClasses::Regions(_) => unreachable!(),
    };
    let (sizes, speeds) = (means(Feature::Size), means(Feature::Speed));
    // Mass within ±3 bins of a (size, speed) mode.
    let near = |s: f64, v: f64| {
        let (a, b) = (bin(Feature::Size, s), bin(Feature::Speed, v));
        let mut m = 0.0;
        for i in a.saturating_sub(3)..(a + 4).min(p.nrows()) {
            for j in b.saturating_sub(3)..(b + 4).min(p.ncols()) {
                m += p[[i, j]];
            }
        }
        m
    };
    let small_slow = near(sizes[0], speeds[1]);
    let large_fast = near(sizes[1], speeds[2]);
    let small_stopped = near(sizes[0], speeds[0]);
    let large_slow = near(sizes[1], speeds[1]);
    assert!(small_slow > 0.1 && large_fast > 0.1, "{small_slow} {large_fast}");
    assert!(small_stopped > 0.02, "{small_stopped}");
    assert!(large_slow < 0.25 * large_fast.min(small_slow), "{large_slow}");
}

#[test]
fn oracle_recovers_a_planted_tuple_prior() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let prior = [0.45, 0.05, 0.2, 0.3];
    let cond = [
        [
            [0.35, 0.25, 0.2, 0.1, 0.05, 0.03, 0.01, 0.01],
            [0.01, 0.01, 0.03, 0.05, 0.1, 0.2, 0.25, 0.35],
        ],
        [
            [0.02, 0.3, 0.35, 0.2, 0.05, 0.04, 0.02, 0.02],
            [0.25, 0.02, 0.02, 0.03, 0.05, 0.08, 0.25, 0.3],
        ],
    ];
    let tuple = WeightedIndex::new(prior).unwrap();
    let symbol: Vec<Vec<WeightedIndex<f64>>> = cond
        .iter()
        .map(|f| f.iter().map(|r| WeightedIndex::new(r).unwrap()).collect())
        .collect();
    let n = 15;
    let samples = (0..200)
        .map(|_| {
            let t = tuple.sample(&mut rng);
            let classes = [t / 2, t % 2];
            let frequencies = (0..2)
                .map(|f| {
                    let mut counts = [0usize; 8];
                    for _ in 0..n {
                        counts[symbol[f][classes[f]].sample(&mut rng)] += 1;
                    }
                    (0..8u32)
                        .filter(|&s| counts[s as usize] > 0)
                        .map(|s| (s, counts[s as usize] as f64 / n as f64))
                        .collect()
                })
                .collect();
            WindowSample {
                frequencies,
                mass: n as f64,
                weight: 1.0,
            }
        })
        .collect();
    let set = WindowSampleSet {
        alphabets: vec![8, 8],
        window: WindowSpec::default(),
        samples,
    };
    let (model, _) = fit_full_joint(&set, &[2, 2], &FitConfig::default()).unwrap();
    let planted: Vec<ndarray::Array2<f64>> = cond
        .iter()
        .map(|f| ndarray::Array2::from_shape_fn((2, 8), |(r, c)| f[r][c]))
        .collect();
    let perms: Vec<Vec<usize>> = planted
        .iter()
        .zip(&model.conditionals)
        .map(|(p, e)| align_rows(p, e).unwrap())
        .collect();
    let mut tv = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            let fitted = model.prior[perms[0][a] * 2 + perms[1][b]];
            tv += 0.5 * (fitted - prior[a * 2 + b]).abs();
        }
    }
    assert!(tv <= 0.1, "tuple prior TV {tv}");
}
