use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zigam_core::diagnostics::predictor_draws;
use zigam_core::engine::{HyperParams, StructuralForm};
use zigam_core::fields::{matern_covariance, spde_precision, SpdeParams};
use zigam_core::geometry::{assemble_fem, build_mesh, MeshOptions, Point, Polygon};
use zigam_core::hurdle::{component_design, select_threshold, HurdleOptions};
use zigam_core::likelihoods::{Family, FamilySpec};
use zigam_core::model::{ComponentSpec, ModelContext};
use zigam_core::sparse::SymbolicCholesky;
use zigam_core::predict::{predict_grid, project_field, GridSpec, PredictOptions};
use zigam_core::simulate::{simulate_dataset, DomainConfig, SimulatedData, SimulationConfig};

fn simulate(n: usize, mesh_nodes: usize, periods: usize, form: StructuralForm, seed: u64) -> (SimulatedData, ModelContext) {
    let cfg = SimulationConfig {
        n,
        mesh_nodes,
        periods,
        form,
        seed,
        ..Default::default()
    };
    let sim = simulate_dataset(&cfg).unwrap();
    let ctx = ModelContext::new(Arc::new(sim.dataset.clone()), Arc::new(sim.mesh.clone())).unwrap();
    (sim, ctx)
}

fn active_counts(sim: &SimulatedData) -> Vec<Option<u64>> {
    sim.dataset
        .y
        .iter()
        .zip(&sim.truth.structural_zero)
        .map(|(&v, &s)| (!s).then_some(v))
        .collect()
}

fn sample_moments(spec: &FamilySpec, eta: f64, draws: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..draws).map(|_| spec.sample(eta, &mut rng) as f64).collect();
    let mean = xs.iter().sum::<f64>() / draws as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
    (mean, var)
}

#[test]
fn count_family_variances_match_simulation() {
    let gp = FamilySpec::gpoisson(0.3).unwrap();
    let (_, var) = sample_moments(&gp, 0.5, 1_000_000, 11);
    let expected = 0.5f64.exp() * 1.3f64.powi(2);
    assert!((var / expected - 1.0).abs() < 0.02, "generalized Poisson variance {var} vs {expected}");

    let nb = FamilySpec::negbinomial(1.5).unwrap();
    for eta in [-0.5, 0.5, 1.5] {
        let (mean, var) = sample_moments(&nb, eta, 1_000_000, 12);
        let expected = 1.5 * eta.exp() * (1.0 + eta.exp());
        assert!((mean / (1.5 * eta.exp()) - 1.0).abs() < 0.01);
        assert!((var / expected - 1.0).abs() < 0.02, "negative binomial variance {var} vs {expected} at {eta}");
    }
}

/// Exact field correlations between pairs of points that are mesh vertices.
fn vertex_correlations(max_edge: f64, params: &SpdeParams, pairs: &[(Point, Point)]) -> Vec<f64> {
    let boundary = Polygon::rectangle(Point::new(0.0, 0.0), Point::new(1.0, 1.0));
    let points: Vec<Point> = pairs.iter().flat_map(|(a, b)| [*a, *b]).collect();
    let opts = MeshOptions {
        cutoff: Some(1e-3),
        ..MeshOptions::with_max_edge(max_edge)
    };
    let mesh = build_mesh(&points, Some(&boundary), &opts).unwrap();
    let vertex = |p: &Point| {
        mesh.vertices()
            .iter()
            .position(|v| v.distance(p) < 1e-12)
            .expect("pair point is a mesh vertex")
    };
    let q = spde_precision(&assemble_fem(&mesh).unwrap(), params).matrix;
    let factor = SymbolicCholesky::analyze(&q).unwrap().factorize(&q).unwrap();
    let column = |i: usize| {
        let mut e = vec![0.0; q.nrows()];
        e[i] = 1.0;
        factor.solve(&e)
    };
    pairs
        .iter()
        .map(|(a, b)| {
            let (i, j) = (vertex(a), vertex(b));
            let (ci, cj) = (column(i), column(j));
            ci[j] / (ci[i] * cj[j]).sqrt()
        })
        .collect()
}

#[test]
fn spde_correlations_are_stable_under_mesh_refinement() {
    let params = SpdeParams::new(0.3, 1.0).unwrap();
    let pairs: Vec<(Point, Point)> = [0.075, 0.15, 0.225, 0.3]
        .iter()
        .enumerate()
        .map(|(row, &d)| {
            let lat = 0.35 + 0.1 * row as f64;
            (Point::new(0.5 - d / 2.0, lat), Point::new(0.5 + d / 2.0, lat))
        })
        .collect();
    let coarse = vertex_correlations(0.06, &params, &pairs);
    let fine = vertex_correlations(0.04, &params, &pairs);
    for ((a, b), (p, q)) in coarse.iter().zip(&fine).zip(&pairs) {
        assert!((a - b).abs() < 0.05, "distance {}: {a} vs {b}", p.distance(q));
    }
}

#[test]
fn simulated_field_variogram_matches_matern() {
    // independent periods give many field replicates per simulation, and a
    // range of about fourteen mesh edges keeps discretisation error small
    let side = 15.0;
    let mut cfg = SimulationConfig {
        n: 50,
        mesh_nodes: 6000,
        periods: 20,
        ..Default::default()
    };
    cfg.domain = DomainConfig {
        bounds: [0.0, 0.0, side, side],
        region_rows: 1,
        region_cols: 1,
        ..Default::default()
    };
    cfg.count_field.range = 5.0;
    cfg.count_field.sd = 1.0;
    cfg.count_field.rho = 0.0;
    let truth = cfg.count_field;
    let params = SpdeParams::new(truth.range, truth.sd).unwrap();

    let reference = simulate_dataset(&cfg).unwrap();
    let verts = reference.mesh.vertices().to_vec();
    let margin = truth.range / 2.0;
    let interior: Vec<usize> = (0..verts.len())
        .filter(|&i| {
            let p = verts[i];
            p.lon > margin && p.lon < side - margin && p.lat > margin && p.lat < side - margin
        })
        .collect();
    let bins = [0.25, 0.5, 0.75, 1.0].map(|f| f * truth.range);
    let half_width = 0.02 * truth.range;
    let mut pairs: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); bins.len()];
    for (a, &i) in interior.iter().enumerate() {
        for &j in &interior[a + 1..] {
            let d = verts[i].distance(&verts[j]);
            if let Some(b) = bins.iter().position(|&c| (d - c).abs() < half_width) {
                pairs[b].push((i, j, d));
            }
        }
    }
    let expected: Vec<f64> = pairs
        .iter()
        .map(|list| list.iter().map(|&(_, _, d)| truth.sd.powi(2) - matern_covariance(d, &params)).sum::<f64>())
        .collect();

    let k = verts.len();
    let mut empirical = vec![0.0; bins.len()];
    let seeds = 10;
    for seed in 0..seeds {
        let sim = simulate_dataset(&SimulationConfig { seed, ..cfg.clone() }).unwrap();
        assert_eq!(sim.mesh.num_vertices(), k);
        for f in sim.truth.count.spatio_temporal.chunks(k) {
            for (b, list) in pairs.iter().enumerate() {
                empirical[b] += list.iter().map(|&(i, j, _)| 0.5 * (f[i] - f[j]).powi(2)).sum::<f64>();
            }
        }
    }
    let fields = (seeds as usize * cfg.periods) as f64;
    for (b, list) in pairs.iter().enumerate() {
        assert!(!list.is_empty(), "no vertex pairs near distance {}", bins[b]);
        let ratio = empirical[b] / fields / expected[b];
        assert!((ratio - 1.0).abs() < 0.1, "distance {}: semivariogram ratio {ratio}", bins[b]);
    }
}

#[test]
fn simulation_is_bit_identical_for_a_seed() {
    let cfg = SimulationConfig {
        n: 300,
        seed: 77,
        ..Default::default()
    };
    let a = serde_json::to_string(&simulate_dataset(&cfg).unwrap().truth).unwrap();
    let b = serde_json::to_string(&simulate_dataset(&cfg).unwrap().truth).unwrap();
    assert_eq!(a, b);
}

fn penalised_objective(model: &zigam_core::engine::Model, hyper: &HyperParams, x: &[f64]) -> f64 {
    let q = model.prior_precision(hyper).unwrap();
    let family = model.family_at(hyper);
    let eta = model.linear_predictor(x);
    let loglik: f64 = model
        .spec()
        .y
        .iter()
        .zip(&eta)
        .filter_map(|(y, e)| y.map(|v| family.log_pmf_at(v, *e)))
        .sum();
    let qx = q.mul_vec(x);
    loglik - 0.5 * x.iter().zip(&qx).map(|(a, b)| a * b).sum::<f64>()
}

#[test]
fn newton_never_decreases_the_objective_and_keeps_log_concave_factors() {
    let (sim, ctx) = simulate(400, 25, 3, StructuralForm::II, 5);
    let counts: Vec<Option<u64>> = active_counts(&sim).into_iter().map(|v| v.map(|c| c.min(40))).collect();
    let binary: Vec<Option<u64>> = sim.dataset.y.iter().map(|&v| Some(u64::from(v > 0))).collect();
    for (spec, y) in [
        (ComponentSpec::count(StructuralForm::II, FamilySpec::poisson()), counts),
        (ComponentSpec::binary(StructuralForm::II), binary),
    ] {
        let model = ctx.assemble(&spec, y).unwrap();
        let hyper = model.initial_hyper();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let start: Vec<f64> = (0..model.latent_dim()).map(|_| rng.random_range(-0.5..0.5)).collect();
            let before = penalised_objective(&model, &hyper, &start);
            let mode = model.inner_mode(&hyper, Some(&start)).unwrap();
            assert!(!mode.clamped);
            assert!(mode.objective >= before, "{} < {before}", mode.objective);
            let recomputed = penalised_objective(&model, &hyper, &mode.x);
            assert!((recomputed - mode.objective).abs() <= 1e-8 * recomputed.abs());
        }
    }
}

fn true_hyper(model: &zigam_core::engine::Model, sim: &SimulatedData) -> HyperParams {
    let f = &sim.truth.count.field;
    let values = model
        .hyper_names()
        .iter()
        .map(|name| match name.rsplit('.').next().unwrap() {
            "log_range" => f.range.ln(),
            "log_sd" => f.sd.ln(),
            "atanh_rho" => f.rho.atanh(),
            "dispersion" | "log_dispersion" => sim.truth.config.dispersion.ln(),
            other => panic!("unexpected hyperparameter {other}"),
        })
        .collect();
    HyperParams(values)
}

#[test]
fn predictive_error_shrinks_with_more_data() {
    let mae = |n: usize| {
        let (sim, ctx) = simulate(n, 30, 5, StructuralForm::II, 21);
        let spec = ComponentSpec::count(StructuralForm::II, FamilySpec::negbinomial(1.5).unwrap());
        let y = active_counts(&sim);
        let model = ctx.assemble(&spec, y.clone()).unwrap();
        let mode = model.inner_mode(&true_hyper(&model, &sim), None).unwrap();
        let truth = &sim.truth.count.eta;
        let (sum, count) = y
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_some())
            .fold((0.0, 0usize), |(s, c), (i, _)| (s + (mode.eta[i] - truth[i]).abs(), c + 1));
        sum / count as f64
    };
    let small = mae(500);
    let large = mae(5000);
    assert!(large < small, "error {large} at n = 5000 is not below {small} at n = 500");
}

#[test]
fn identical_classifications_share_a_score_and_only_occurrence_probabilities_matter() {
    let (sim, ctx) = simulate(300, 20, 3, StructuralForm::II, 9);
    let y = &sim.dataset.y;
    let pi: Vec<f64> = (0..y.len()).map(|i| if i % 2 == 0 { 0.2 } else { 0.8 }).collect();
    let spec = ComponentSpec::count(StructuralForm::II, FamilySpec::negbinomial(1.5).unwrap());
    let opts = HurdleOptions {
        waic_samples: 200,
        ..Default::default()
    };
    let grid = [0.3, 0.5, 0.7, 0.9];
    let (selection, fit) = select_threshold(&ctx, y, &pi, &spec, &grid, &opts).unwrap();
    let w: Vec<f64> = selection.candidates.iter().map(|c| c.waic_nonzero.unwrap()).collect();
    assert_eq!(w[0], w[1]);
    assert_eq!(w[0], w[2]);
    assert_ne!(w[2], w[3]);

    let (again, refit) = select_threshold(&ctx, y, &pi, &spec, &grid, &opts).unwrap();
    assert_eq!(again, selection);
    assert_eq!(refit.to_json().unwrap(), fit.to_json().unwrap());
}

#[test]
fn field_projection_matches_the_fitted_predictor() {
    let (sim, ctx) = simulate(300, 20, 3, StructuralForm::II, 13);
    let spec = ComponentSpec::count(StructuralForm::II, FamilySpec::negbinomial(1.5).unwrap());
    let fit = ctx.fit(&spec, active_counts(&sim), None, &Default::default()).unwrap();
    let (design, offset) = component_design(&ctx, &spec).unwrap();
    let d = &sim.dataset;
    let idx: Vec<usize> = (0..d.len()).collect();
    let fitted = predictor_draws(&fit.fit, &design, &offset, &idx, 50, 4).unwrap();
    let projected = project_field(&fit, &sim.mesh, &d.points, &d.years, &d.fixed, &d.offset, 50, 4).unwrap();
    let gap = (&fitted - &projected).abs().max();
    assert!(gap <= 1e-12, "projection differs from the fitted predictor by {gap}");
}

#[test]
fn grid_prediction_is_deterministic_with_bounded_error() {
    let (sim, ctx) = simulate(400, 20, 3, StructuralForm::II, 17);
    let binary = ctx
        .fit(
            &ComponentSpec::binary(StructuralForm::II),
            sim.dataset.y.iter().map(|&v| Some(u64::from(v > 0))).collect(),
            None,
            &Default::default(),
        )
        .unwrap();
    let spec = ComponentSpec::count(StructuralForm::II, FamilySpec::negbinomial(1.5).unwrap());
    let count = ctx.fit(&spec, active_counts(&sim), None, &Default::default()).unwrap();
    let opts = PredictOptions {
        grid: GridSpec {
            nx: 12,
            ny: 10,
            bounds: None,
        },
        seed: 99,
        ..Default::default()
    };
    let a = predict_grid(Some(&binary), &count, &sim.mesh, &sim.regions, &opts).unwrap();
    let b = predict_grid(Some(&binary), &count, &sim.mesh, &sim.regions, &opts).unwrap();
    assert_eq!(a, b);
    assert!(!a.cells.is_empty());
    let bound = 0.5 / (opts.samples as f64).sqrt();
    for c in &a.cells {
        assert!(c.se_occur <= bound + 1e-15 && c.se_exceed <= bound + 1e-15);
        assert!((0.0..=1.0).contains(&c.p_occur) && (0.0..=1.0).contains(&c.p_exceed));
    }
    let other = predict_grid(Some(&binary), &count, &sim.mesh, &sim.regions, &PredictOptions { seed: 100, ..opts }).unwrap();
    assert_ne!(a.cells, other.cells);
}

#[test]
fn dense_design_matches_sparse_design() {
    let (_, ctx) = simulate(120, 15, 4, StructuralForm::I, 2);
    let spec = ComponentSpec::count(StructuralForm::I, FamilySpec::new(Family::Poisson, 1.0).unwrap());
    let (design, offset) = component_design(&ctx, &spec).unwrap();
    let model = ctx.assemble(&spec, vec![None; ctx.dataset.len()]).unwrap();
    assert_eq!(design.to_dense(), model.design().to_dense());
    assert_eq!(offset, ctx.dataset.offset);
    let x = DMatrix::from_fn(design.ncols(), 1, |i, _| (i as f64).sin());
    let eta = model.linear_predictor(x.as_slice());
    let dense = design.to_dense() * x;
    for (a, b) in eta.iter().zip(offset.iter().zip(dense.iter()).map(|(o, d)| o + d)) {
        assert!((a - b).abs() < 1e-12);
    }
}
