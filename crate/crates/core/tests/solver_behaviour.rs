//! End-to-end properties of the two solvers on small synthetic problems.

mod common;

use common::*;
use nalgebra::DMatrix;
use rand::Rng;

use tensor_impute::synth::{generate, random_mask as split_mask, recovery_error_db, SynthSpec};
use tensor_impute::{
    lrpti_solve, lrti_solve, mu_max, solve, FactorModel, Loss, Mask3, PriorSet, SolveConfig, SolveReport, Tensor3,
};

fn assert_descent(report: &SolveReport, slack: f64) {
    for (k, w) in report.cost_trace.windows(2).enumerate() {
        assert!(
            w[1] <= w[0] + slack * (1.0 + w[0].abs()),
            "cost rose at iteration {k}: {} -> {}",
            w[0],
            w[1]
        );
    }
}

fn rank_one(dims: (usize, usize, usize), seed: u64) -> Tensor3 {
    let mut rng = rng(seed);
    let model = random_model(&mut rng, dims, 1);
    model.reconstruct()
}

#[test]
fn rank_one_tensor_is_recovered_exactly() {
    let dims = (8, 6, 5);
    let z = rank_one(dims, 1);
    let (train, test) = split_mask(dims, 0.25, 2, None).unwrap();
    let mu = 1e-4 * mu_max(&z, &train).unwrap();
    let cfg = SolveConfig::new(mu, 2).with_seed(3).with_max_iters(3000).with_tol(1e-14);
    let report = lrti_solve(&z, &train, &PriorSet::identity(8, 6, 5), &cfg).unwrap();
    let err = recovery_error_db(&report.estimate, &z, &test).unwrap();
    assert!(err <= -40.0, "held-out error {err} dB");
    assert_descent(&report, 1e-9);
}

#[test]
fn frozen_tube_factor_reduces_to_matrix_completion() {
    let dims = (10, 8, 1);
    let z = rank_one(dims, 4);
    let (train, test) = split_mask(dims, 0.3, 5, None).unwrap();
    let mu = 1e-4 * mu_max(&z, &train).unwrap();
    let cfg = SolveConfig::new(mu, 2)
        .with_seed(1)
        .with_frozen_c(true)
        .with_max_iters(3000)
        .with_tol(1e-14);
    let report = lrti_solve(&z, &train, &PriorSet::identity(10, 8, 1), &cfg).unwrap();
    assert!(report.final_model.c.iter().all(|&v| v == 1.0));
    let err = recovery_error_db(&report.estimate, &z, &test).unwrap();
    assert!(err <= -40.0, "held-out error {err} dB");
}

#[test]
fn frozen_tube_factor_matches_factored_matrix_objective() {
    // With C = 1 the objective is 1/2|(Z - A B^T)∘Δ|^2 + mu/2 (|A|^2 + |B|^2 + P R).
    let mut rng = rng(9);
    let dims = (5, 4, 1);
    let z = Tensor3::from_fn(dims, |_, _, _| rng.random_range(-1.0..1.0));
    let mask = random_mask(&mut rng, dims, 0.7);
    let cfg = SolveConfig::new(0.2, 3).with_frozen_c(true).with_max_iters(5);
    let report = lrti_solve(&z, &mask, &PriorSet::identity(5, 4, 1), &cfg).unwrap();
    let f = &report.final_model;
    let x = &f.a * f.b.transpose();
    let mut fit = 0.0;
    for m in 0..5 {
        for n in 0..4 {
            if mask.get(m, n, 0) {
                fit += (z.get(m, n, 0) - x[(m, n)]).powi(2);
            }
        }
    }
    let expected = 0.5 * fit + 0.1 * (f.a.norm_squared() + f.b.norm_squared() + 3.0);
    assert!((report.final_cost() - expected).abs() <= 1e-10 * (1.0 + expected));
}

#[test]
fn mu_max_threshold_nulls_the_estimate() {
    for seed in 0..10 {
        let mut rng = rng(50 + seed);
        let dims = (rng.random_range(2..7), rng.random_range(2..5), rng.random_range(2..5));
        let z = Tensor3::from_fn(dims, |_, _, _| rng.random_range(-5.0..5.0));
        let mask = random_mask(&mut rng, dims, 0.8);
        let mm = mu_max(&z, &mask).unwrap();
        for factor in [0.81, 1.0, 2.0] {
            let cfg = SolveConfig::new(factor * mm, 4).with_seed(seed);
            let report = lrti_solve(&z, &mask, &PriorSet::identity(dims.0, dims.1, dims.2), &cfg).unwrap();
            let norm = report.estimate.frobenius_sq(None).unwrap().sqrt();
            assert!(norm <= 1e-8, "seed {seed}, {factor} mu_max: |X| = {norm:e}");
        }
    }
}

#[test]
fn equal_norms_at_convergence() {
    for seed in 0..5 {
        let syn = generate(&SynthSpec::gaussian((8, 5, 4), 3, 20.0, seed)).unwrap();
        let (train, _) = split_mask((8, 5, 4), 0.2, seed + 10, None).unwrap();
        let mu = 1e-2 * mu_max(&syn.z, &train).unwrap();
        let cfg = SolveConfig::new(mu, 5).with_seed(seed).with_max_iters(5000).with_tol(1e-13);
        let report = lrti_solve(&syn.z, &train, &PriorSet::identity(8, 5, 4), &cfg).unwrap();
        let residual = report.final_model.equal_norm_residual();
        assert!(residual <= 0.05, "seed {seed}: equal-norm residual {residual}");
    }
}

#[test]
fn gaussian_descent_with_informative_priors() {
    for seed in 0..10 {
        let mut rng = rng(seed);
        let dims = (5, 4, 3);
        let priors = PriorSet::new(random_spd(&mut rng, 5), random_spd(&mut rng, 4), random_spd(&mut rng, 3)).unwrap();
        let z = Tensor3::from_fn(dims, |_, _, _| rng.random_range(-2.0..2.0));
        let mask = random_mask(&mut rng, dims, 0.6);
        let cfg = SolveConfig::new(rng.random_range(0.01..1.0), 4).with_seed(seed).with_max_iters(200);
        let report = lrti_solve(&z, &mask, &priors, &cfg).unwrap();
        assert_descent(&report, 1e-9);
    }
}

#[test]
fn poisson_descent_and_nonnegativity() {
    for seed in 0..10 {
        let syn = generate(&SynthSpec::poisson((6, 4, 3), 2, 20.0, seed)).unwrap();
        let (train, _) = split_mask((6, 4, 3), 0.3, seed, None).unwrap();
        let cfg = SolveConfig::new(0.5, 4).with_seed(seed).with_loss(Loss::Poisson).with_max_iters(200);
        let report = lrpti_solve(&syn.z, &train, &PriorSet::identity(6, 4, 3), &cfg).unwrap();
        assert_descent(&report, 1e-9);
        let f = &report.final_model;
        assert!(f.a.iter().chain(f.b.iter()).chain(f.c.iter()).all(|&v| v >= 0.0));
    }
}

#[test]
fn poisson_fit_tracks_low_count_means() {
    let syn = generate(&SynthSpec::poisson((10, 6, 5), 1, 5.0, 3)).unwrap();
    let full = Mask3::full((10, 6, 5));
    let cfg = SolveConfig::new(1e-3, 1).with_loss(Loss::Poisson).with_max_iters(2000);
    let report = lrpti_solve(&syn.z, &full, &PriorSet::identity(10, 6, 5), &cfg).unwrap();
    let mut within = 0.0;
    for (xhat, x) in report.estimate.values().iter().zip(syn.x_true.values()) {
        within += ((xhat - x).abs() <= 3.0 * x.sqrt()) as u8 as f64;
    }
    let fraction = within / syn.x_true.len() as f64;
    assert!(fraction >= 0.95, "only {fraction} of fitted means within 3 sd");
}

#[test]
fn poisson_never_returns_zero_on_positive_data() {
    let syn = generate(&SynthSpec::poisson((8, 4, 4), 3, 50.0, 8)).unwrap();
    let (train, _) = split_mask((8, 4, 4), 0.5, 1, None).unwrap();
    let cfg = SolveConfig::new(1000.0, 6).with_loss(Loss::Poisson).with_seed(2);
    let report = lrpti_solve(&syn.z, &train, &PriorSet::identity(8, 4, 4), &cfg).unwrap();
    assert!(report.final_model.effective_rank(tensor_impute::DEFAULT_RANK_TOL) >= 1);
}

#[test]
fn poisson_rejects_negative_data() {
    let z = Tensor3::from_vec((2, 1, 1), vec![1.0, -1.0]).unwrap();
    let cfg = SolveConfig::new(1.0, 1).with_loss(Loss::Poisson);
    let err = solve(&z, &Mask3::full((2, 1, 1)), &PriorSet::identity(2, 1, 1), &cfg).unwrap_err();
    assert!(matches!(err, tensor_impute::ImputeError::Input(_)));
}

#[test]
fn empty_mask_is_rejected() {
    let z = Tensor3::zeros((2, 2, 2));
    let err = lrti_solve(&z, &Mask3::empty((2, 2, 2)), &PriorSet::identity(2, 2, 2), &SolveConfig::new(1.0, 1))
        .unwrap_err();
    assert!(matches!(err, tensor_impute::ImputeError::Input(_)));
}

#[test]
fn runs_are_deterministic_per_seed() {
    let syn = generate(&SynthSpec::gaussian((6, 4, 3), 2, 10.0, 0)).unwrap();
    let (train, _) = split_mask((6, 4, 3), 0.25, 0, None).unwrap();
    let priors = PriorSet::identity(6, 4, 3);
    let cfg = SolveConfig::new(0.1, 4).with_seed(17);
    let a = lrti_solve(&syn.z, &train, &priors, &cfg).unwrap();
    let b = lrti_solve(&syn.z, &train, &priors, &cfg).unwrap();
    assert_eq!(a.cost_trace, b.cost_trace);
    assert_eq!(a.estimate, b.estimate);
    let c = lrti_solve(&syn.z, &train, &priors, &cfg.clone().with_seed(18)).unwrap();
    assert_ne!(a.cost_trace, c.cost_trace);
}

#[test]
fn explicit_identity_priors_match_default_identity() {
    let syn = generate(&SynthSpec::gaussian((5, 4, 3), 2, 10.0, 2)).unwrap();
    let (train, _) = split_mask((5, 4, 3), 0.25, 2, None).unwrap();
    let explicit = PriorSet::new(DMatrix::identity(5, 5), DMatrix::identity(4, 4), DMatrix::identity(3, 3)).unwrap();
    let cfg = SolveConfig::new(0.3, 3).with_seed(5).with_max_iters(100);
    let a = lrti_solve(&syn.z, &train, &PriorSet::identity(5, 4, 3), &cfg).unwrap();
    let b = lrti_solve(&syn.z, &train, &explicit, &cfg).unwrap();
    assert!((&a.final_model.a - &b.final_model.a).amax() <= 1e-12);
    assert!((&a.final_model.c - &b.final_model.c).amax() <= 1e-12);
}

#[test]
fn kernel_estimation_feeds_the_solver() {
    // Priors estimated from clean training tensors recover a held-out slice
    // that identity priors cannot.
    let mut kn = DMatrix::identity(4, 4);
    kn[(0, 1)] = 0.95;
    kn[(1, 0)] = 0.95;
    kn[(2, 3)] = 0.95;
    kn[(3, 2)] = 0.95;
    let truth = PriorSet::new(DMatrix::identity(6, 6), kn, DMatrix::identity(3, 3)).unwrap();
    let samples: Vec<Tensor3> = (0..2000)
        .map(|s| {
            let mut spec = SynthSpec::gaussian((6, 4, 3), 2, f64::INFINITY, 10_000 + s);
            spec.prior = truth.clone();
            generate(&spec).unwrap().x_true
        })
        .collect();
    let est = tensor_impute::estimate_kernels(&samples, 2).unwrap();
    let nb = &est.priors.b;
    assert!((nb[(0, 1)] / nb[(0, 0)] - 0.95).abs() < 0.05);

    let (train, _) = split_mask((6, 4, 3), 0.0, 0, Some((tensor_impute::Mode::Column, 1))).unwrap();
    let slice = Mask3::from_fn((6, 4, 3), |_, n, _| n == 1);
    let (mut e_inf, mut e_id) = (0.0, 0.0);
    let runs = 6;
    for seed in 0..runs {
        let mut spec = SynthSpec::gaussian((6, 4, 3), 2, 30.0, 77 + seed);
        spec.prior = truth.clone();
        let syn = generate(&spec).unwrap();
        let mu = 1e-2 * mu_max(&syn.z, &train).unwrap();
        let cfg = SolveConfig::new(mu, 4).with_seed(seed);
        let informed = lrti_solve(&syn.z, &train, &est.priors, &cfg).unwrap();
        let plain = lrti_solve(&syn.z, &train, &PriorSet::identity(6, 4, 3), &cfg).unwrap();
        e_inf += recovery_error_db(&informed.estimate, &syn.z, &slice).unwrap() / runs as f64;
        e_id += recovery_error_db(&plain.estimate, &syn.z, &slice).unwrap() / runs as f64;
    }
    assert!(e_inf <= -5.0, "informative prior error {e_inf} dB");
    assert!(e_id >= -1.0, "identity prior error {e_id} dB");
}

#[test]
fn normalized_model_reconstructs_estimate() {
    let syn = generate(&SynthSpec::gaussian((6, 4, 3), 2, 20.0, 4)).unwrap();
    let cfg = SolveConfig::new(0.05, 3).with_seed(1);
    let report = lrti_solve(&syn.z, &Mask3::full((6, 4, 3)), &PriorSet::identity(6, 4, 3), &cfg).unwrap();
    let back: FactorModel = report.final_model.normalize().to_factors();
    let diff = back.reconstruct().sub(&report.estimate).unwrap().frobenius_sq(None).unwrap().sqrt();
    assert!(diff <= 1e-10 * (1.0 + report.estimate.frobenius_sq(None).unwrap().sqrt()));
}
