use nalgebra::DMatrix;
use proptest::prelude::*;

use mreo::config::{ExtremalMode, SelectionMode, Variant};
use mreo::gain::{
    blended_covariance, build_innovations, corrections, gain, regularized_inverse, scramble,
    GainTerms, InnovationMatrix, NoiseBlock,
};
use mreo::kernel::{full_permutation, is_bijection, partner_indices, PartnerMode, RngState};
use mreo::optimizer::select;
use mreo::problems::testbed;
use mreo::{AlgoConfig, CostVector, Ensemble, Execution, Optimizer};

fn matrix(rows: usize, cols: usize, seed: u64, scale: f64) -> DMatrix<f64> {
    let mut rng = RngState::new(seed);
    DMatrix::from_fn(rows, cols, |_, _| scale * (2.0 * rng.uniform() - 1.0))
}

fn sorted_columns(m: &DMatrix<f64>) -> Vec<Vec<u64>> {
    let mut cols: Vec<Vec<u64>> = m
        .column_iter()
        .map(|c| c.iter().map(|v| v.to_bits()).collect())
        .collect();
    cols.sort();
    cols
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scramble_preserves_column_multiset(n in 1usize..5, size in 2usize..20, seed: u64) {
        let d = matrix(n, size, seed, 10.0);
        let perm = full_permutation(size, &mut RngState::new(seed ^ 1)).unwrap();
        let out = scramble(&d, &perm).unwrap();
        prop_assert_eq!(sorted_columns(&out), sorted_columns(&d));
        for j in 0..size {
            prop_assert_eq!(out.column(j), d.column(perm[j]));
        }
    }

    #[test]
    fn permutations_are_bijections(size in 1usize..60, seed: u64) {
        let p = full_permutation(size, &mut RngState::new(seed)).unwrap();
        prop_assert!(is_bijection(&p));
    }

    #[test]
    fn partners_avoid_self(size in 2usize..60, seed: u64, derange: bool) {
        let mode = if derange { PartnerMode::Derangement } else { PartnerMode::Independent };
        let p = partner_indices(size, mode, &mut RngState::new(seed)).unwrap();
        prop_assert_eq!(p.len(), size);
        for (j, &k) in p.iter().enumerate() {
            prop_assert!(k < size && k != j);
        }
        if derange {
            prop_assert!(is_bijection(&p));
        }
    }

    #[test]
    fn blended_covariance_is_symmetric_positive_definite(
        n in 1usize..5,
        size in 2usize..12,
        seed: u64,
        alpha in 0.01f64..0.99,
        log_rho in -4f64..4.0,
    ) {
        let f = InnovationMatrix::new(matrix(1 + n, size, seed, 1e3));
        let rho_c: Vec<f64> = (0..n).map(|k| 0.1 * (k + 1) as f64).collect();
        let noise = NoiseBlock::new(10f64.powf(log_rho), Some(&rho_c)).unwrap();
        let c = blended_covariance(&f, alpha, &noise).unwrap();
        let asym = (&c - c.transpose()).norm();
        prop_assert!(asym <= 1e-12 * c.norm());
        prop_assert!(c.clone().cholesky().is_some());
        prop_assert!(regularized_inverse(&c).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn gain_shape_contract(n in 1usize..5, size in 2usize..10, seed: u64, coalesce: bool) {
        let x = Ensemble::new(matrix(n, size, seed, 3.0)).unwrap();
        let costs = CostVector::new(matrix(1, size, seed ^ 7, 5.0).iter().map(|v| v.abs()).collect()).unwrap();
        let partners = partner_indices(size, PartnerMode::Independent, &mut RngState::new(seed)).unwrap();
        let inn = build_innovations(&x, &costs, 0.0, coalesce.then_some(partners.as_slice())).unwrap();
        let rho_c = vec![0.5; n];
        let noise = NoiseBlock::new(0.3, coalesce.then_some(rho_c.as_slice())).unwrap();
        let cov = blended_covariance(&inn, 0.8, &noise).unwrap();
        let g = gain(&GainTerms::ensemble(&x, &inn, 0.0, 1.0 + 1e-7, 1.0), &regularized_inverse(&cov)).unwrap();
        let m = if coalesce { 1 + n } else { 1 };
        prop_assert_eq!(g.matrix().shape(), (n, m));
        prop_assert_eq!(corrections(&g, 0.7, &inn).unwrap().shape(), (n, size));
    }

    #[test]
    fn zero_innovations_give_zero_corrections(n in 1usize..4, size in 2usize..10, seed: u64) {
        let g = mreo::gain::GainMatrix::from(matrix(n, 1 + n, seed, 4.0));
        let zero = InnovationMatrix::new(DMatrix::zeros(1 + n, size));
        prop_assert!(corrections(&g, 1.0, &zero).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn greedy_selection_never_raises_a_cost(size in 2usize..20, seed: u64) {
        let old = Ensemble::new(matrix(2, size, seed, 1.0)).unwrap();
        let cand = Ensemble::new(matrix(2, size, seed ^ 3, 1.0)).unwrap();
        let f = |e: &Ensemble| CostVector::new(e.matrix().column_iter().map(|c| c.norm_squared()).collect()).unwrap();
        let (next, next_costs) = select(&old, &f(&old), &cand, &f(&cand), SelectionMode::GreedyMin).unwrap();
        for j in 0..size {
            prop_assert!(next_costs[j] <= f(&old)[j]);
            prop_assert!(next_costs[j] <= f(&cand)[j] || next_costs[j] == f(&old)[j]);
            prop_assert_eq!(next_costs[j], next.matrix().column(j).norm_squared());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn best_cost_never_increases(
        seed: u64,
        selection in prop_oneof![
            Just(SelectionMode::GreedyMin),
            Just(SelectionMode::LiteralPaper),
            Just(SelectionMode::AlwaysAccept),
        ],
        per_iteration: bool,
        predict: bool,
    ) {
        let problem = testbed::rastrigin(2);
        let cfg = AlgoConfig {
            selection,
            extremal_mode: if per_iteration { ExtremalMode::PerIteration } else { ExtremalMode::Running },
            variant: if predict { Variant::WithPrediction } else { Variant::NoPrediction },
            execution: Execution::Sequential,
            ..AlgoConfig::default().with_run(10, 30, seed)
        };
        let (_, trace) = mreo::run(&problem, cfg).unwrap();
        prop_assert_eq!(trace.len(), 31);
        let costs: Vec<f64> = trace.best_costs().collect();
        for w in costs.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
    }
}

#[test]
fn coalesced_ensemble_at_the_minimum_stays_put() {
    let problem = testbed::sphere(2);
    let cfg = AlgoConfig {
        rho: Some(1e-12),
        rho_c: Some(vec![1e-12; 2]),
        execution: Execution::Sequential,
        ..AlgoConfig::default().with_run(6, 5, 3)
    };
    let opt = Optimizer::new(&problem, cfg).unwrap();
    let (mut state, _) = opt
        .initialize_with(Ensemble::new(DMatrix::zeros(2, 6)).unwrap())
        .unwrap();
    for _ in 0..5 {
        let r = opt.step(&mut state).unwrap();
        assert!(r.corrections.iter().all(|v| *v == 0.0));
        assert!(r.record.best_cost.abs() <= 1e-8);
    }
    assert!(state.ensemble.matrix().iter().all(|v| *v == 0.0));
}

fn trace_bytes(cfg: AlgoConfig) -> Vec<u8> {
    let problem = testbed::ackley(3);
    let (_, trace) = mreo::run(&problem, cfg).unwrap();
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    buf
}

#[test]
fn runs_are_byte_identical() {
    for seed in [0, 1, 99] {
        let cfg = AlgoConfig::default().with_run(20, 60, seed);
        let a = trace_bytes(AlgoConfig { execution: Execution::Sequential, ..cfg.clone() });
        let b = trace_bytes(AlgoConfig { execution: Execution::Sequential, ..cfg.clone() });
        let c = trace_bytes(AlgoConfig { execution: Execution::Parallel, ..cfg.clone() });
        assert_eq!(a, b);
        assert_eq!(a, c, "parallel evaluation changed the trace");
    }
    let a = trace_bytes(AlgoConfig::default().with_run(20, 60, 1));
    let b = trace_bytes(AlgoConfig::default().with_run(20, 60, 2));
    assert_ne!(a, b);
}
