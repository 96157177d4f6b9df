mod common;

use common::*;
use ldsclust::baselines::{dtw_distance, fft_distance, kmedoids, DistanceMatrix};
use ldsclust::em::{eval_joint, reassign, Assignment};
use ldsclust::fit::{
    fit_cluster, fit_weighted, mean_trajectory, scatter, solve_states, validate_fit, BlockState, ClusterFit, FitOptions,
};
use ldsclust::metrics::{aggregate, f1_labels};
use ldsclust::Dataset;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn quick_opts(n: usize) -> FitOptions {
    FitOptions { hidden_dim: n, max_outer_iters: 40, restarts: 2, ..FitOptions::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn states_match_dense_normal_equations(seed in any::<u64>(), steps in 1usize..=20, n in 1usize..=4, m in 1usize..=3) {
        let mut r = test_rng(seed);
        let g = uniform_matrix(&mut r, n, n, 1.0);
        let f = uniform_matrix(&mut r, n, m, 1.0);
        let outputs = uniform_matrix(&mut r, steps, m, 2.0);
        let got = solve_states(&g, &f, &outputs);
        let (want, cond) = dense_states(&g, &f, &outputs);
        let og = state_objective(&g, &f, &outputs, &got);
        if cond < 1e8 {
            let rel = (&got - &want).norm() / want.norm().max(1e-300);
            prop_assert!(rel <= 1e-8, "relative error {rel:e} (cond {cond:e})");
        } else {
            // Non-unique minimizer: compare attained objective instead.
            let ow = state_objective(&g, &f, &outputs, &want);
            prop_assert!(og <= ow + 1e-8 * ow.max(1.0), "objective {og} vs dense {ow}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn block_updates_never_increase_objective(seed in any::<u64>(), steps in 1usize..=12, n in 1usize..=3, m in 1usize..=3, weight in 1usize..=5) {
        let mut r = test_rng(seed);
        let mean = uniform_matrix(&mut r, steps, m, 2.0);
        let bound: f64 = if r.gen_bool(0.3) { 0.5 } else { 10.0 };
        let mut st = BlockState::new(
            uniform_matrix(&mut r, n, n, bound.min(1.0)),
            uniform_matrix(&mut r, n, m, bound.min(1.0)),
            uniform_matrix(&mut r, steps, n, 1.0),
            uniform_matrix(&mut r, steps, m, 1.0),
        );
        let mut obj = st.reduced_objective(&mean, weight);
        let mut prev = st.clone();
        for _ in 0..12 {
            let before = st.clone();
            match r.gen_range(0..6) {
                0 => st.step_outputs(&mean, weight),
                1 => st.step_observation(bound),
                2 => st.step_transition(bound),
                3 => st.step_scale(bound),
                4 => {
                    let beta = r.gen_range(0.1..10.0);
                    st.step_extrapolate(&prev, beta, &mean, weight, bound, obj);
                }
                _ => st.step_states(),
            }
            prev = before;
            prop_assert!(st.g().iter().chain(st.f_mat().iter()).all(|v| v.abs() <= bound));
            let next = st.reduced_objective(&mean, weight);
            prop_assert!(next <= obj + 1e-10 * obj.max(1.0), "objective rose {obj} -> {next}");
            obj = next;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn mean_reduction_identity(seed in any::<u64>(), members in 1usize..=6, steps in 2usize..=10, n in 1usize..=3) {
        let mut r = test_rng(seed);
        let m = r.gen_range(1..=3);
        let trs: Vec<_> = (0..members).map(|i| random_trajectory(&mut r, i, steps, m)).collect();
        let refs: Vec<_> = trs.iter().collect();
        let opts = quick_opts(n);
        let full = fit_cluster(&refs, &opts, seed).unwrap();
        let mean = mean_trajectory(&refs).unwrap();
        let reduced = fit_weighted(&mean, members, &opts, seed).unwrap();
        prop_assert_eq!(&full.g, &reduced.g);
        prop_assert_eq!(&full.f_mat, &reduced.f_mat);
        prop_assert_eq!(&full.states, &reduced.states);
        prop_assert_eq!(&full.outputs, &reduced.outputs);
        let sc = scatter(&refs, &mean);
        let diff = full.objective - reduced.objective;
        prop_assert!((diff - sc).abs() <= 1e-10 * full.objective.max(1.0), "diff {diff} vs scatter {sc}");
        prop_assert!(validate_fit(&full, &refs).is_ok());
    }
}

fn random_fits(r: &mut impl Rng, data: &Dataset, k: usize, seed: u64) -> Vec<ClusterFit> {
    (0..k)
        .map(|_| {
            let pick: Vec<_> = data.trajectories().choose_multiple(r, 2).collect();
            fit_cluster(&pick, &quick_opts(1), seed).unwrap()
        })
        .collect()
}

fn all_labelings(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0..k.pow(n as u32))
        .map(|mut code| {
            (0..n)
                .map(|_| {
                    let l = code % k;
                    code /= k;
                    l
                })
                .collect()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn reassignment_minimizes_joint_objective_for_fixed_fits(seed in any::<u64>(), k in 2usize..=3) {
        let mut r = test_rng(seed);
        let data = random_dataset(&mut r, 5, 6, 2);
        let fits = random_fits(&mut r, &data, k, seed);
        let best = reassign(&data, &fits).unwrap();
        let best_obj = eval_joint(&data, &best, &fits).unwrap();
        for labels in all_labelings(5, k) {
            let obj = eval_joint(&data, &Assignment::new(labels, k).unwrap(), &fits).unwrap();
            prop_assert!(best_obj <= obj, "{best_obj} > {obj}");
        }
    }

    #[test]
    fn joint_objective_is_relabel_symmetric(seed in any::<u64>(), k in 2usize..=3) {
        let mut r = test_rng(seed);
        let data = random_dataset(&mut r, 6, 5, 2);
        let fits = random_fits(&mut r, &data, k, seed);
        let labels: Vec<usize> = (0..6).map(|_| r.gen_range(0..k)).collect();
        let a = Assignment::new(labels, k).unwrap();
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut r);
        let b = a.permuted(&perm).unwrap();
        let mut moved = fits.clone();
        for c in 0..k {
            moved[perm[c]] = fits[c].clone();
        }
        let (x, y) = (eval_joint(&data, &a, &fits).unwrap(), eval_joint(&data, &b, &moved).unwrap());
        prop_assert!((x - y).abs() <= 1e-12 * x.max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn f1_matches_hand_count_and_is_permutation_invariant(labels in prop::collection::vec((0usize..2, 0usize..2), 1..30)) {
        let pred: Vec<usize> = labels.iter().map(|p| p.0).collect();
        let truth: Vec<usize> = labels.iter().map(|p| p.1).collect();
        let f = f1_labels(&pred, &truth, 2).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert_eq!(f, f1_by_hand(&pred, &truth));
        let flipped: Vec<usize> = pred.iter().map(|p| 1 - p).collect();
        prop_assert_eq!(f, f1_labels(&flipped, &truth, 2).unwrap());
        prop_assert_eq!(f == 1.0, pred == truth || flipped == truth);
    }

    #[test]
    fn multiclass_f1_is_permutation_invariant(seed in any::<u64>(), k in 3usize..=4) {
        let mut r = test_rng(seed);
        let pred: Vec<usize> = (0..12).map(|_| r.gen_range(0..k)).collect();
        let truth: Vec<usize> = (0..12).map(|_| r.gen_range(0..k)).collect();
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut r);
        let moved: Vec<usize> = pred.iter().map(|&p| perm[p]).collect();
        prop_assert_eq!(f1_labels(&pred, &truth, k).unwrap(), f1_labels(&moved, &truth, k).unwrap());
    }

    #[test]
    fn aggregate_is_order_invariant(mut raw in prop::collection::vec(0.0f64..1.0, 2..60), seed in any::<u64>()) {
        let a = aggregate(&raw).unwrap();
        raw.shuffle(&mut test_rng(seed));
        let b = aggregate(&raw).unwrap();
        prop_assert!((a.mean - b.mean).abs() <= 1e-12);
        prop_assert!((a.ci_half_width - b.ci_half_width).abs() <= 1e-12);
        // Independent two-pass recomputation.
        let n = raw.len() as f64;
        let mean = raw.iter().sum::<f64>() / n;
        let sd = (raw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        prop_assert!((b.ci_half_width - 1.96 * sd / n.sqrt()).abs() <= 1e-12);
    }

    #[test]
    fn dtw_is_symmetric_and_bounded_by_lockstep(seed in any::<u64>(), steps in 1usize..=10, m in 1usize..=3) {
        let mut r = test_rng(seed);
        let a = random_trajectory(&mut r, 0, steps, m);
        let b = random_trajectory(&mut r, 1, steps, m);
        let d = dtw_distance(&a, &b, None).unwrap();
        prop_assert_eq!(d, dtw_distance(&b, &a, None).unwrap());
        let lockstep = (a.values() - b.values()).norm();
        prop_assert!(d <= lockstep + 1e-12);
        prop_assert!((dtw_distance(&a, &b, Some(0)).unwrap() - lockstep).abs() <= 1e-12);
        prop_assert!(dtw_distance(&a, &a, None).unwrap() == 0.0);
    }

    #[test]
    fn fourier_distance_is_scaled_frobenius(seed in any::<u64>(), steps in 1usize..=40, m in 1usize..=3) {
        let mut r = test_rng(seed);
        let a = random_trajectory(&mut r, 0, steps, m);
        let b = random_trajectory(&mut r, 1, steps, m);
        let want = (steps as f64).sqrt() * (a.values() - b.values()).norm();
        prop_assert!((fft_distance(&a, &b).unwrap() - want).abs() <= 1e-9);
    }

    #[test]
    fn kmedoids_cost_never_increases(seed in any::<u64>(), n in 2usize..=12, k in 1usize..=4) {
        prop_assume!(k <= n);
        let mut r = test_rng(seed);
        let pts: Vec<(f64, f64)> = (0..n).map(|_| (r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0))).collect();
        let d = DMatrix::from_fn(n, n, |i, j| ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt());
        let d = DistanceMatrix::new(d, (0..n).collect()).unwrap();
        let res = kmedoids(&d, k, seed, 300).unwrap();
        prop_assert!(res.trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        for (c, &med) in res.medoids.iter().enumerate() {
            prop_assert_eq!(res.assignment.labels()[med], c);
        }
    }
}

#[test]
fn kmedoids_matches_brute_force_on_separated_points() {
    // Two well-separated groups: every local optimum is global.
    let mut r = test_rng(11);
    for _ in 0..20 {
        let pts: Vec<f64> =
            (0..6).map(|i| if i % 2 == 0 { r.gen_range(0.0..1.0) } else { r.gen_range(10.0..11.0) }).collect();
        let d = DMatrix::from_fn(6, 6, |i, j| (pts[i] - pts[j]).abs());
        let dm = DistanceMatrix::new(d.clone(), (0..6).collect()).unwrap();
        let res = kmedoids(&dm, 2, r.gen(), 300).unwrap();
        let mut best = f64::INFINITY;
        for a in 0..6 {
            for b in (a + 1)..6 {
                let cost: f64 = (0..6).map(|i| d[(i, a)].min(d[(i, b)])).sum();
                best = best.min(cost);
            }
        }
        assert!((res.cost - best).abs() < 1e-12, "{} vs {best}", res.cost);
    }
}
