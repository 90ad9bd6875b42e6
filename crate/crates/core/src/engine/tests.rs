use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::likelihoods::logistic;

fn fixed_model(x: &DMatrix<f64>, y: Vec<Option<u64>>, family: FamilySpec) -> Model {
    let n = x.nrows();
    let labels = (0..x.ncols()).map(|j| format!("b{j}")).collect();
    Model::assemble(ModelSpec {
        offset: vec![0.0; n],
        y,
        blocks: vec![LatentBlock::fixed(CscMatrix::from_dense(x), labels)],
        family,
        form: StructuralForm::Baseline,
        dispersion_init: family.dispersion.max(1.0),
    })
    .unwrap()
}

fn design(n: usize, p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.random_range(-1.0..1.0) })
}

#[test]
fn bernoulli_mode_matches_irls() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 60;
    let x = design(n, 2, &mut rng);
    let y: Vec<u64> = (0..n).map(|i| (i % 2) as u64).collect();
    let model = fixed_model(&x, y.iter().map(|&v| Some(v)).collect(), FamilySpec::bernoulli());
    let mode = model.inner_mode(&model.initial_hyper(), None).unwrap();

    let yv = DVector::from_iterator(n, y.iter().map(|&v| v as f64));
    let mut beta = DVector::zeros(2);
    for _ in 0..100 {
        let eta = &x * &beta;
        let mu = eta.map(logistic);
        let w = mu.map(|m| m * (1.0 - m));
        let z = &eta + (&yv - &mu).component_div(&w);
        let xtw = x.transpose() * DMatrix::from_diagonal(&w);
        let lhs = &xtw * &x + DMatrix::identity(2, 2) * FIXED_EFFECT_PRECISION;
        beta = lhs.lu().solve(&(&xtw * z)).unwrap();
    }
    for j in 0..2 {
        assert!((mode.x[j] - beta[j]).abs() < 1e-8, "{} vs {}", mode.x[j], beta[j]);
    }
}

#[test]
fn prior_only_mode_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = design(10, 3, &mut rng);
    let model = fixed_model(&x, vec![None; 10], FamilySpec::poisson());
    let mode = model.inner_mode(&model.initial_hyper(), None).unwrap();
    assert!(mode.x.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn negbinomial_intercept_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let truth = 0.5;
    let family = FamilySpec::negbinomial(1.5).unwrap();
    let y: Vec<Option<u64>> = (0..200).map(|_| Some(family.sample(truth, &mut rng))).collect();
    let model = fixed_model(&DMatrix::from_element(200, 1, 1.0), y, family);
    let h = model.initial_hyper();
    assert!((h.0[0] - 1.5f64.ln()).abs() < 1e-15);
    let mode = model.inner_mode(&h, None).unwrap();
    let sd = mode.factor.inverse_diagonal(&[0])[0].sqrt();
    assert!((mode.x[0] - truth).abs() < 3.0 * sd, "{} ± {sd}", mode.x[0]);
}

#[test]
fn newton_reports_divergence_data() {
    let model = fixed_model(&DMatrix::from_element(3, 1, 1.0), vec![Some(1); 3], FamilySpec::bernoulli());
    let mode = model.inner_mode(&model.initial_hyper(), None).unwrap();
    assert!(mode.x[0] > 5.0 && mode.x[0].is_finite());
}

#[test]
fn baseline_without_hyper_short_circuits() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = design(50, 3, &mut rng);
    let y = (0..50).map(|i| Some((i % 4) as u64)).collect();
    let model = fixed_model(&x, y, FamilySpec::poisson());
    assert_eq!(model.latent_dim(), 3);
    assert_eq!(model.num_hyper(), 0);
    let fit = model.optimize(&model.initial_hyper(), &OptimizeOptions::default()).unwrap();
    assert_eq!(fit.evaluations, 1);
    let mode = model.inner_mode(&model.initial_hyper(), None).unwrap();
    assert_eq!(fit.latent_mode, mode.x);
    assert!(fit.log_marginal.is_finite());
}

fn five_dim_fit() -> FitResult {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = design(40, 5, &mut rng);
    let y = (0..40).map(|_| Some(rng.random_range(0..6u64))).collect();
    let model = fixed_model(&x, y, FamilySpec::poisson());
    model.optimize(&model.initial_hyper(), &OptimizeOptions::default()).unwrap()
}

#[test]
fn posterior_draws_match_gaussian_approximation() {
    let fit = five_dim_fit();
    let n = 100_000;
    let s = sample_posterior(&fit, n, 11).unwrap();
    let q = CscMatrix::from_triplet_record(&fit.latent_precision).unwrap().to_dense();
    let cov = q.try_inverse().unwrap();
    let mean = s.row_mean();
    for j in 0..5 {
        let se = (cov[(j, j)] / n as f64).sqrt();
        assert!((mean[j] - fit.latent_mode[j]).abs() < 3.0 * se);
    }
    let centred = DMatrix::from_fn(n, 5, |i, j| s[(i, j)] - mean[j]);
    let emp = centred.transpose() * &centred / (n as f64 - 1.0);
    for i in 0..5 {
        for j in 0..5 {
            let scale = (cov[(i, i)] * cov[(j, j)]).sqrt();
            assert!((emp[(i, j)] - cov[(i, j)]).abs() < 0.05 * scale, "({i},{j})");
        }
    }
}

#[test]
fn posterior_draws_are_deterministic() {
    let fit = five_dim_fit();
    let a = sample_posterior(&fit, 600, 7).unwrap();
    let b = sample_posterior(&fit, 600, 7).unwrap();
    let c = sample_posterior(&fit, 600, 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn fit_round_trips_through_json() {
    let fit = five_dim_fit();
    let back = FitResult::from_json(&fit.to_json().unwrap()).unwrap();
    assert_eq!(back.latent_mode, fit.latent_mode);
    assert_eq!(sample_posterior(&back, 10, 1).unwrap(), sample_posterior(&fit, 10, 1).unwrap());
}

#[test]
fn dimension_mismatch_names_block() {
    let err = Model::assemble(ModelSpec {
        y: vec![Some(1); 4],
        offset: vec![0.0; 4],
        blocks: vec![LatentBlock::fixed(CscMatrix::zeros(3, 1), vec![])],
        family: FamilySpec::poisson(),
        form: StructuralForm::Baseline,
        dispersion_init: 1.0,
    })
    .unwrap_err();
    assert!(err.to_string().contains("fixed"));
}
