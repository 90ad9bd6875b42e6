use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use zigam_core::engine::{assemble, HyperParams, LatentBlock, ModelSpec, NelderMeadOptions, StructuralForm};
use zigam_core::likelihoods::{Family, FamilySpec};
use zigam_core::model::{ComponentSpec, ModelContext};
use zigam_core::simulate::{dense_laplace, dense_reference_fit, simulate_dataset, SimulationConfig};
use zigam_core::sparse::CscMatrix;

fn problem(seed: u64) -> (ModelContext, ComponentSpec, Vec<Option<u64>>) {
    let forms = [StructuralForm::Baseline, StructuralForm::I, StructuralForm::II];
    let families = [Family::NegBinomial, Family::Poisson, Family::GPoisson, Family::Bernoulli];
    let form = forms[seed as usize % 3];
    let family = families[seed as usize % 4];
    let cfg = SimulationConfig {
        n: 200,
        mesh_nodes: 20,
        periods: 4,
        form,
        seed,
        ..Default::default()
    };
    let sim = simulate_dataset(&cfg).unwrap();
    let ctx = ModelContext::new(Arc::new(sim.dataset.clone()), Arc::new(sim.mesh.clone())).unwrap();
    let (spec, y) = match family {
        Family::Bernoulli => (
            ComponentSpec::binary(form),
            sim.dataset.y.iter().map(|&v| Some((v > 0) as u64)).collect(),
        ),
        f => {
            let dispersion = if f == Family::GPoisson { 0.3 } else { 1.5 };
            let y = sim
                .dataset
                .y
                .iter()
                .zip(&sim.truth.structural_zero)
                .map(|(&v, &s)| (!s).then_some(v))
                .collect();
            (ComponentSpec::count(form, FamilySpec::new(f, dispersion).unwrap()), y)
        }
    };
    (ctx, spec, y)
}

#[test]
fn sparse_engine_matches_dense_reference_on_seeded_problems() {
    for seed in 0..10u64 {
        let (ctx, spec, y) = problem(seed);
        let model = ctx.assemble(&spec, y).unwrap();
        assert!(model.latent_dim() <= 400 + model.spec().blocks[0].design.ncols());
        let mut h = model.initial_hyper();
        for (i, v) in h.0.iter_mut().enumerate() {
            *v += 0.1 * ((seed as f64 + i as f64).sin());
        }
        let sparse = model.laplace(&h, None).unwrap();
        let dense = dense_laplace(&model, &h.0).unwrap();
        for (a, b) in sparse.mode.x.iter().zip(&dense.mode) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0), "seed {seed}: mode {a} vs {b}");
        }
        let ld = (sparse.posterior_log_det - dense.posterior_log_det).abs();
        assert!(ld <= 1e-6 * dense.posterior_log_det.abs().max(1.0), "seed {seed}: logdet gap {ld}");
        let pld = (sparse.prior_log_det - dense.prior_log_det).abs();
        assert!(pld <= 1e-6 * dense.prior_log_det.abs().max(1.0), "seed {seed}: prior logdet gap {pld}");
        let lml = (sparse.log_marginal - dense.log_marginal).abs();
        assert!(lml <= 1e-4, "seed {seed}: log marginal gap {lml}");
    }
}

#[test]
fn optimised_fits_agree() {
    let (ctx, spec, y) = problem(5);
    let model = ctx.assemble(&spec, y).unwrap();
    let init = model.initial_hyper();
    let fit = model.optimize(&init, &Default::default()).unwrap();
    let dense = dense_reference_fit(&model, &init.0, &NelderMeadOptions::default()).unwrap();
    assert!((fit.log_marginal - dense.laplace.log_marginal).abs() < 1e-3);
}

#[test]
fn intercept_only_matches_scalar_posterior_mode() {
    let n = 50;
    let y: Vec<Option<u64>> = (0..n).map(|i| Some((i % 7) as u64)).collect();
    let design = CscMatrix::from_triplets(n, 1, &(0..n).map(|i| (i, 0, 1.0)).collect::<Vec<_>>());
    let model = assemble(ModelSpec {
        y: y.clone(),
        offset: vec![0.0; n],
        blocks: vec![LatentBlock::fixed(design, vec!["intercept".into()])],
        family: FamilySpec::poisson(),
        form: StructuralForm::Baseline,
        dispersion_init: 1.0,
    })
    .unwrap();
    let sum: f64 = y.iter().map(|v| v.unwrap() as f64).sum();
    let prec = 1e-4;
    let mut beta = 0.0f64;
    for _ in 0..100 {
        let g = sum - n as f64 * beta.exp() - prec * beta;
        let h = n as f64 * beta.exp() + prec;
        beta += g / h;
    }
    let dense = dense_laplace(&model, &[]).unwrap();
    let sparse = model.laplace(&HyperParams(vec![]), None).unwrap();
    assert!((dense.mode[0] - beta).abs() < 1e-8);
    assert!((sparse.mode.x[0] - beta).abs() < 1e-8);
    let post = n as f64 * beta.exp() + prec;
    assert!((sparse.posterior_log_det - post.ln()).abs() < 1e-8);
}

#[test]
fn negative_binomial_draws_match_family_mean() {
    let spec = FamilySpec::negbinomial(2.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 100_000;
    let mean = (0..n).map(|_| spec.sample(0.0, &mut rng) as f64).sum::<f64>() / n as f64;
    assert!((mean / spec.mean(0.0) - 1.0).abs() < 0.02, "{mean}");
    assert!((spec.mean(0.0) - 2.0).abs() < 1e-12);
}

#[test]
fn simulation_is_reproducible_through_json() {
    let cfg = SimulationConfig {
        n: 150,
        ..Default::default()
    };
    let a = simulate_dataset(&cfg).unwrap();
    let b = simulate_dataset(&cfg).unwrap();
    assert_eq!(
        serde_json::to_string(&a.truth).unwrap(),
        serde_json::to_string(&b.truth).unwrap()
    );
    assert_eq!(a.records, b.records);
}
