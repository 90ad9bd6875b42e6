use std::collections::BTreeMap;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zigam_core::data::{build_dataset, EncodingConfig, EventRecord};
use zigam_core::diagnostics::{compute_dic, compute_waic};
use zigam_core::fields::{
    ar1_log_det, ar1_precision, spatio_temporal_precision, spde_precision, Ar1Params, PcPrior, QuantileSpec,
    SpdeParams, SplineBasis,
};
use zigam_core::geometry::{assemble_fem, build_mesh, MeshOptions, Point, Polygon, Region, RegionSet};
use zigam_core::hurdle::classify_zeros;
use zigam_core::likelihoods::{Family, FamilySpec};
use zigam_core::predict::{exceedance_probability, ExceedanceSet};
use zigam_core::sparse::SymbolicCholesky;

fn rectangle_mesh(width: f64, height: f64, max_edge: f64) -> (zigam_core::geometry::Mesh, Polygon) {
    let boundary = Polygon::rectangle(Point::new(0.0, 0.0), Point::new(width, height));
    let mesh = build_mesh(&[], Some(&boundary), &MeshOptions::with_max_edge(max_edge)).unwrap();
    (mesh, boundary)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn projector_rows_sum_to_one_and_reproduce_linears(
        width in 1.0f64..4.0,
        height in 1.0f64..4.0,
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        c in -3.0f64..3.0,
        fractions in prop::collection::vec((0.01f64..0.99, 0.01f64..0.99), 1..40),
    ) {
        let (mesh, _) = rectangle_mesh(width, height, 0.6);
        let points: Vec<Point> = fractions.iter().map(|&(u, v)| Point::new(u * width, v * height)).collect();
        let proj = mesh.project(&points);
        prop_assert_eq!(proj.num_outside(), 0);
        for s in proj.matrix.row_sums() {
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }
        let f = |p: &Point| a * p.lon + b * p.lat + c;
        let at_vertices: Vec<f64> = mesh.vertices().iter().map(f).collect();
        let projected = proj.matrix.mul_vec(&at_vertices);
        for (p, v) in points.iter().zip(projected) {
            prop_assert!((v - f(p)).abs() <= 1e-10);
        }
    }

    #[test]
    fn lumped_mass_is_stable_under_refinement(width in 1.0f64..3.0, height in 1.0f64..3.0, h in 0.4f64..0.8) {
        let (coarse, _) = rectangle_mesh(width, height, h);
        let (fine, _) = rectangle_mesh(width, height, h / 2.0);
        let a = assemble_fem(&coarse).unwrap().total_mass();
        let b = assemble_fem(&fine).unwrap().total_mass();
        prop_assert!(fine.num_vertices() > coarse.num_vertices());
        prop_assert!((a - b).abs() <= 1e-8 * a);
        let triangle_area: f64 = (0..fine.triangles().len()).map(|t| fine.triangle_area(t)).sum();
        prop_assert!((b - triangle_area).abs() <= 1e-8 * b);
    }

    #[test]
    fn kronecker_log_det_splits(
        range in 0.3f64..3.0,
        sd in 0.2f64..3.0,
        rho in -0.95f64..0.95,
        tau in 0.1f64..10.0,
        periods in 1usize..6,
    ) {
        let (mesh, _) = rectangle_mesh(2.0, 2.0, 0.8);
        let fem = assemble_fem(&mesh).unwrap();
        let spatial = spde_precision(&fem, &SpdeParams::new(range, sd).unwrap());
        let ar = Ar1Params::new(rho, tau).unwrap();
        let temporal = ar1_precision(periods, &ar).unwrap();
        let joint = spatio_temporal_precision(&spatial, &temporal);
        let spatial_ld = SymbolicCholesky::analyze(&spatial.matrix).unwrap().factorize(&spatial.matrix).unwrap().log_det();
        let joint_ld = SymbolicCholesky::analyze(&joint.matrix).unwrap().factorize(&joint.matrix).unwrap().log_det();
        let expected = spatial.dim() as f64 * ar1_log_det(periods, &ar) + periods as f64 * spatial_ld;
        prop_assert!((joint_ld - expected).abs() <= 1e-6 * expected.abs().max(1.0));
    }
}

proptest! {
    #[test]
    fn spline_rows_are_sparse_and_nonnegative(
        num_basis in 4usize..12,
        xs in prop::collection::vec(0.0f64..1.0, 1..50),
    ) {
        let basis = SplineBasis::new(2000.0, 2010.0, num_basis).unwrap();
        let at: Vec<f64> = xs.iter().map(|u| 2000.0 + 10.0 * u).collect();
        let design = basis.design(&at);
        let mut per_row = vec![0usize; at.len()];
        for (i, _, v) in design.iter() {
            prop_assert!(v >= 0.0);
            if v != 0.0 {
                per_row[i] += 1;
            }
        }
        prop_assert!(per_row.iter().all(|&k| k <= 4));
    }

    #[test]
    fn correlation_prior_tail_mass_matches_calibration(threshold in -0.8f64..0.8, excess in 0.05f64..0.25) {
        let floor = (1.0 - threshold).sqrt() / 2f64.sqrt();
        let probability = (floor + excess).min(0.98);
        let prior = PcPrior::correlation(QuantileSpec::new(threshold, probability)).unwrap();
        // substitute rho = 1 - s^2 to remove the integrable singularity at one
        let s_max = (1.0 - threshold).sqrt();
        let steps = 20_000;
        let h = s_max / steps as f64;
        let mass: f64 = (0..steps)
            .map(|i| {
                let s = (i as f64 + 0.5) * h;
                prior.log_density(1.0 - s * s).exp() * 2.0 * s * h
            })
            .sum();
        prop_assert!((mass - probability).abs() <= 1e-4, "mass {} vs {}", mass, probability);
    }

    #[test]
    fn pmf_normalises_and_stays_finite(
        family in prop::sample::select(vec![Family::Poisson, Family::NegBinomial, Family::GPoisson]),
        eta in -3.0f64..3.0,
        dispersion in 0.05f64..3.0,
        y in 0u64..1_000_000,
    ) {
        let spec = FamilySpec::new(family, dispersion).unwrap();
        // past the mean every family here has a geometrically decaying tail,
        // so once terms drop below 1e-14 the remainder is far below 1e-8
        let past_mean = (spec.mean(eta) + 10.0 * spec.variance(eta).sqrt()).ceil() as u64;
        let mut total = 0.0;
        for k in 0..1_000_000u64 {
            let term = spec.log_pmf_at(k, eta).exp();
            total += term;
            if k > past_mean && term < 1e-14 {
                break;
            }
        }
        prop_assert!(total >= 1.0 - 1e-8 && total <= 1.0 + 1e-8, "{:?}: mass {}", family, total);
        prop_assert!(spec.log_pmf_at(y, eta).is_finite());
    }

    #[test]
    fn zero_classification_partitions_the_zeros(
        rows in prop::collection::vec((0u64..4, 0.0f64..=1.0), 1..200),
        c in 0.0f64..=1.0,
    ) {
        let (y, pi): (Vec<u64>, Vec<f64>) = rows.into_iter().unzip();
        let classified = classify_zeros(&y, &pi, c).unwrap();
        let missing = classified.iter().filter(|v| v.is_none()).count();
        let count_zeros = classified.iter().filter(|v| **v == Some(0)).count();
        prop_assert_eq!(missing + count_zeros, y.iter().filter(|&&v| v == 0).count());
        for (v, k) in classified.iter().zip(&y) {
            if *k > 0 {
                prop_assert_eq!(*v, Some(*k));
            }
        }
        prop_assert!(classify_zeros(&y, &pi, 0.0).unwrap().iter().all(Option::is_some));
    }

    #[test]
    fn information_criteria_ignore_ordering_and_recompute_exactly(
        seed in 0u64..1000,
        obs in 1usize..12,
        sample_perm_seed in 0u64..1000,
    ) {
        let samples = 120;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ll = DMatrix::from_fn(samples, obs, |_, _| -rng.random_range(0.0..5.0));
        let at_mean: Vec<f64> = (0..obs).map(|j| ll.column(j).mean()).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(sample_perm_seed);
        let mut rows: Vec<usize> = (0..samples).collect();
        let mut cols: Vec<usize> = (0..obs).collect();
        rows.shuffle(&mut rng);
        cols.shuffle(&mut rng);
        let shuffled = DMatrix::from_fn(samples, obs, |s, j| ll[(rows[s], cols[j])]);
        let shuffled_mean: Vec<f64> = cols.iter().map(|&j| at_mean[j]).collect();

        let w = compute_waic(&ll, None).unwrap();
        let ws = compute_waic(&shuffled, None).unwrap();
        prop_assert!((w.waic - ws.waic).abs() <= 1e-9 * w.waic.abs().max(1.0));
        prop_assert!((w.p_waic - ws.p_waic).abs() <= 1e-9 * w.p_waic.abs().max(1.0));
        let d = compute_dic(&at_mean, &ll, None).unwrap();
        let ds = compute_dic(&shuffled_mean, &shuffled, None).unwrap();
        prop_assert!((d.dic - ds.dic).abs() <= 1e-9 * d.dic.abs().max(1.0));

        let full = vec![true; obs];
        prop_assert_eq!(compute_waic(&ll, Some(&full)).unwrap(), w);
        prop_assert_eq!(compute_waic(&ll, None).unwrap(), w);
        prop_assert_eq!(compute_dic(&at_mean, &ll, None).unwrap(), d);
    }

    #[test]
    fn exceedance_is_monotone_in_threshold(
        family in prop::sample::select(vec![Family::Poisson, Family::NegBinomial, Family::GPoisson]),
        centre in -1.0f64..3.0,
        spread in 0.0f64..1.0,
        seed in 0u64..1000,
    ) {
        let spec = FamilySpec::new(family, 0.8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eta: Vec<f64> = (0..10_000).map(|_| centre + spread * rng.random_range(-1.0..1.0)).collect();
        let mut last = 1.0;
        for k in [0u64, 1, 2, 5, 10, 20, 40] {
            let mut draws = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let p = exceedance_probability(&eta, &spec, ExceedanceSet::CountAbove(k), &mut draws).unwrap();
            prop_assert!(p <= last, "k = {}: {} > {}", k, p, last);
            last = p;
        }
    }
}

fn square(name: &str, x0: f64, y0: f64) -> Region {
    Region {
        name: name.into(),
        polygon: Polygon::rectangle(Point::new(x0, y0), Point::new(x0 + 1.0, y0 + 1.0)),
        population: BTreeMap::from([(2020, 1000.0), (2021, 2500.0)]),
    }
}

proptest! {
    #[test]
    fn encoding_round_trips_and_drops_reconcile(
        rows in prop::collection::vec(
            (0.0f64..3.0, 0.0f64..1.0, 2020i32..2023, 1u32..=12, 0usize..3, 0u64..30),
            1..80,
        ),
    ) {
        let types = ["Armed clash", "Attack", "Violent demonstration"];
        let regions = RegionSet::new(vec![square("West", 0.0, 0.0), square("East", 1.0, 0.0)]).unwrap();
        let records: Vec<EventRecord> = rows
            .iter()
            .enumerate()
            .map(|(i, &(lon, lat, year, month, t, f))| EventRecord {
                point: Point::new(lon, lat),
                year,
                month,
                event_type: types[t].into(),
                group: None,
                fatalities: f,
                line: i as u64 + 2,
                notes: String::new(),
            })
            .collect();
        let config = EncodingConfig { include_groups: false, ..Default::default() };
        match build_dataset(&records, &regions, &config) {
            Ok((data, report)) => {
                prop_assert_eq!(data.len() + report.dropped.len(), records.len());
                prop_assert!(data.offset.iter().all(|o| o.is_finite()));
                let kept: Vec<&EventRecord> = records
                    .iter()
                    .filter(|r| !report.dropped.iter().any(|d| d.line == r.line))
                    .collect();
                let decoded = data.factor("event_type").unwrap().decode();
                for (r, label) in kept.iter().zip(decoded) {
                    prop_assert_eq!(r.event_type.as_str(), label);
                }
                prop_assert_eq!(data.y, kept.iter().map(|r| r.fatalities).collect::<Vec<_>>());
            }
            Err(e) => {
                // 2022 has no population, and points east of both regions are dropped
                let inside = records.iter().filter(|r| r.point.lon <= 2.0);
                let unpopulated = inside.clone().any(|r| r.year == 2022);
                prop_assert!(unpopulated || inside.count() == 0, "{}", e);
            }
        }
    }
}
