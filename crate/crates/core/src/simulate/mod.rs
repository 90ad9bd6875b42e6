//! Synthetic data with known parameters for every structural form and
//! family, including hurdle data with labelled structural zeros.

mod reference;

pub use reference::{dense_laplace, dense_prior, dense_reference_fit, DenseFit, DenseLaplace, DENSE_LIMIT};

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{build_dataset, EncodedDataset, EncodingConfig, EventRecord, GroupLexicon};
use crate::engine::StructuralForm;
use crate::error::{Error, Result};
use crate::fields::{SplineBasis, SpdeOperator, SpdeParams};
use crate::geometry::{assemble_fem, build_mesh, Mesh, MeshOptions, Point, Polygon, Region, RegionSet};
use crate::likelihoods::{logistic, Family, FamilySpec};
use crate::sparse::{CholeskyFactor, CscMatrix, SymbolicCholesky};

/// Largest latent field size (`K·T`) the simulator accepts.
pub const MAX_FIELD_SIZE: usize = 200_000;

/// Generating parameters of one component's random effects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldTruth {
    pub range: f64,
    pub sd: f64,
    /// Year-to-year correlation of the spatio-temporal field.
    pub rho: f64,
    pub spline_precision: f64,
    pub spline_rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroMechanism {
    /// Occurrence probability is the logistic of the binary predictor.
    #[default]
    Logistic,
    /// Every event is active (`π ≡ 1`).
    None,
}

/// Study domain `[lon_min, lat_min, lon_max, lat_max]` split into a grid of regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub bounds: [f64; 4],
    pub region_rows: usize,
    pub region_cols: usize,
    /// Range of regional populations in the first year.
    pub population: (f64, f64),
    pub growth: f64,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            bounds: [33.0, 3.0, 48.0, 15.0],
            region_rows: 3,
            region_cols: 4,
            population: (5e5, 5e6),
            growth: 1.025,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub n: usize,
    /// Target number of mesh nodes.
    pub mesh_nodes: usize,
    pub first_year: i32,
    pub periods: usize,
    pub form: StructuralForm,
    pub count_family: Family,
    pub dispersion: f64,
    pub domain: DomainConfig,
    pub event_types: Vec<String>,
    /// Probability that an event's notes name an armed group.
    pub group_rate: f64,
    /// Binary-component effects by design column name (missing columns are zero).
    pub binary_effects: BTreeMap<String, f64>,
    /// Count-component effects by design column name.
    pub count_effects: BTreeMap<String, f64>,
    pub binary_field: FieldTruth,
    pub count_field: FieldTruth,
    pub zero_mechanism: ZeroMechanism,
    /// Spline basis size under form I.
    pub num_knots: Option<usize>,
    pub seed: u64,
}

fn effects(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            mesh_nodes: 30,
            first_year: 2018,
            periods: 5,
            form: StructuralForm::II,
            count_family: Family::NegBinomial,
            dispersion: 1.5,
            domain: DomainConfig::default(),
            event_types: ["Armed clash", "Attack", "Remote explosive/landmine/IED", "Violent demonstration"]
                .map(String::from)
                .to_vec(),
            group_rate: 0.0,
            binary_effects: effects(&[
                ("intercept", 1.2),
                ("event_type[Attack]", 0.5),
                ("event_type[Remote explosive/landmine/IED]", -0.5),
                ("event_type[Violent demonstration]", -3.5),
                ("season[Winter]", -0.221),
                ("season[Spring]", -0.218),
                ("season[Summer]", 0.1),
            ]),
            count_effects: effects(&[
                ("intercept", -12.0),
                ("event_type[Attack]", -0.3),
                ("event_type[Remote explosive/landmine/IED]", -0.6),
                ("event_type[Violent demonstration]", -0.8),
                ("season[Winter]", -0.1),
                ("season[Summer]", 0.3),
            ]),
            binary_field: FieldTruth {
                range: 4.0,
                sd: 0.8,
                rho: 0.6,
                spline_precision: 4.0,
                spline_rho: 0.7,
            },
            count_field: FieldTruth {
                range: 5.0,
                sd: 0.6,
                rho: 0.4,
                spline_precision: 4.0,
                spline_rho: 0.7,
            },
            zero_mechanism: ZeroMechanism::Logistic,
            num_knots: None,
            seed: 1,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.periods == 0 || self.mesh_nodes < 3 {
            return Err(Error::invalid("n, periods and mesh_nodes must be positive (mesh_nodes ≥ 3)"));
        }
        let [x0, y0, x1, y1] = self.domain.bounds;
        if !(x1 > x0 && y1 > y0) {
            return Err(Error::invalid("domain bounds must have positive extent"));
        }
        if self.domain.region_rows == 0 || self.domain.region_cols == 0 {
            return Err(Error::invalid("region grid must be non-empty"));
        }
        let (p0, p1) = self.domain.population;
        if !(p0 > 0.0 && p1 >= p0) || !(self.domain.growth > 0.0) {
            return Err(Error::invalid("populations and growth must be positive"));
        }
        if self.event_types.is_empty() {
            return Err(Error::invalid("at least one event type is required"));
        }
        if !(0.0..=1.0).contains(&self.group_rate) {
            return Err(Error::invalid("group_rate must lie in [0, 1]"));
        }
        for f in [&self.binary_field, &self.count_field] {
            SpdeParams::new(f.range, f.sd)?;
            if !(f.rho.abs() < 1.0) || !(f.spline_rho.abs() < 1.0) || !(f.spline_precision > 0.0) {
                return Err(Error::invalid("field correlations must lie in (-1, 1) and precisions be positive"));
            }
        }
        if self.count_family == Family::Bernoulli {
            return Err(Error::invalid("count family cannot be Bernoulli"));
        }
        FamilySpec::new(self.count_family, self.dispersion)?;
        Ok(())
    }

    pub fn years(&self) -> Vec<i32> {
        (0..self.periods as i32).map(|t| self.first_year + t).collect()
    }

    pub fn count_spec(&self) -> FamilySpec {
        FamilySpec::new(self.count_family, self.dispersion).expect("validated family")
    }
}

/// Latent truth of one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentTruth {
    pub effects: BTreeMap<String, f64>,
    /// Coefficients in the dataset's design-column order.
    pub beta: Vec<f64>,
    pub spatial: Vec<f64>,
    /// Time-major spatio-temporal field (`t·K + k`).
    pub spatio_temporal: Vec<f64>,
    pub spline: Vec<f64>,
    pub eta: Vec<f64>,
    pub field: FieldTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTruth {
    pub config: SimulationConfig,
    pub years: Vec<i32>,
    pub mesh_nodes: usize,
    pub binary: ComponentTruth,
    pub count: ComponentTruth,
    pub occurrence_probability: Vec<f64>,
    /// `true` where the zero came from the inactive (structural) state.
    pub structural_zero: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub records: Vec<EventRecord>,
    pub regions: RegionSet,
    pub dataset: EncodedDataset,
    pub mesh: Mesh,
    pub truth: SimulationTruth,
}

/// Mesh over `boundary` whose node count is as close as possible to `target`.
pub fn mesh_with_nodes(boundary: &Polygon, target: usize) -> Result<Mesh> {
    let corners: Vec<Point> = boundary.rings()[0].clone();
    let diam = boundary.bbox().diameter();
    let (mut lo, mut hi) = ((diam / 400.0).ln(), diam.ln());
    let mut best: Option<(usize, Mesh)> = None;
    for _ in 0..24 {
        let mid = 0.5 * (lo + hi);
        let mesh = build_mesh(&corners, Some(boundary), &MeshOptions::with_max_edge(mid.exp()))?;
        let k = mesh.num_vertices();
        let gap = k.abs_diff(target);
        if best.as_ref().is_none_or(|(g, _)| gap < *g) {
            best = Some((gap, mesh));
        }
        if k > target {
            lo = mid;
        } else if k < target {
            hi = mid;
        } else {
            break;
        }
    }
    Ok(best.expect("at least one mesh").1)
}

fn regions(cfg: &DomainConfig, years: &[i32], rng: &mut ChaCha8Rng) -> Result<RegionSet> {
    let [x0, y0, x1, y1] = cfg.bounds;
    let (w, h) = ((x1 - x0) / cfg.region_cols as f64, (y1 - y0) / cfg.region_rows as f64);
    let mut out = Vec::new();
    for r in 0..cfg.region_rows {
        for c in 0..cfg.region_cols {
            let base = rng.random_range(cfg.population.0..=cfg.population.1);
            let population = years
                .iter()
                .enumerate()
                .map(|(t, &y)| (y, (base * cfg.growth.powi(t as i32)).round()))
                .collect();
            out.push(Region {
                name: format!("Zone {:02}", r * cfg.region_cols + c + 1),
                polygon: Polygon::rectangle(
                    Point::new(x0 + c as f64 * w, y0 + r as f64 * h),
                    Point::new(x0 + (c + 1) as f64 * w, y0 + (r + 1) as f64 * h),
                ),
                population,
            });
        }
    }
    RegionSet::new(out)
}

fn standard_normal(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Draw from `N(0, Q⁻¹)` through the sparse Cholesky factor of `Q`.
fn gmrf_draw(factor: &CholeskyFactor, rng: &mut ChaCha8Rng) -> Vec<f64> {
    factor.correlate(&standard_normal(factor.dim(), rng))
}

fn ar1_series(len: usize, rho: f64, precision: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    let sd = precision.powf(-0.5);
    let mut prev = 0.0;
    for t in 0..len {
        let e: f64 = rng.sample(StandardNormal);
        prev = if t == 0 {
            e * sd / (1.0 - rho * rho).sqrt()
        } else {
            rho * prev + e * sd
        };
        out.push(prev);
    }
    out
}

fn component_truth(
    cfg: &SimulationConfig,
    field: FieldTruth,
    effects: &BTreeMap<String, f64>,
    dataset: &EncodedDataset,
    operator: &SpdeOperator,
    projector: &CscMatrix,
    year_index: &[usize],
    offset: bool,
    rng: &mut ChaCha8Rng,
) -> Result<ComponentTruth> {
    for name in effects.keys() {
        if !dataset.fixed_names.contains(name) {
            return Err(Error::invalid(format!("effect {name:?} does not match any design column")));
        }
    }
    let beta: Vec<f64> = dataset
        .fixed_names
        .iter()
        .map(|n| effects.get(n).copied().unwrap_or(0.0))
        .collect();
    let n = dataset.len();
    let k = operator.dim();
    let mut eta = if offset {
        dataset.offset.clone()
    } else {
        vec![0.0; n]
    };
    dataset.fixed.mul_vec_acc(&beta, &mut eta);
    let q_s = operator.precision(&SpdeParams::new(field.range, field.sd)?);
    let factor = SymbolicCholesky::analyze(&q_s)?.factorize(&q_s)?;
    let (mut spatial, mut spatio_temporal, mut spline) = (vec![], vec![], vec![]);
    match cfg.form {
        StructuralForm::Baseline => {}
        StructuralForm::I => {
            spatial = gmrf_draw(&factor, rng);
            projector.mul_vec_acc(&spatial, &mut eta);
            let years = dataset.distinct_years();
            let l = cfg.num_knots.unwrap_or_else(|| SplineBasis::default_num_basis(years.len()));
            let basis = SplineBasis::for_years(&years, l)?;
            spline = ar1_series(l, field.spline_rho, field.spline_precision, rng);
            let xs: Vec<f64> = dataset.years.iter().map(|&y| y as f64).collect();
            basis.design(&xs).mul_vec_acc(&spline, &mut eta);
        }
        StructuralForm::II => {
            let t_len = cfg.periods;
            let scale = 1.0 / (1.0 - field.rho * field.rho).sqrt();
            spatio_temporal.reserve(t_len * k);
            for t in 0..t_len {
                let e = gmrf_draw(&factor, rng);
                if t == 0 {
                    spatio_temporal.extend(e.iter().map(|v| v * scale));
                } else {
                    let prev = spatio_temporal.len() - k;
                    for (j, v) in e.into_iter().enumerate() {
                        spatio_temporal.push(field.rho * spatio_temporal[prev + j] + v);
                    }
                }
            }
            for (i, j, v) in projector.iter() {
                eta[i] += v * spatio_temporal[year_index[i] * k + j];
            }
        }
    }
    Ok(ComponentTruth {
        effects: effects.clone(),
        beta,
        spatial,
        spatio_temporal,
        spline,
        eta,
        field,
    })
}

/// Generates events, regions, mesh and the latent truth for `cfg`.
pub fn simulate_dataset(cfg: &SimulationConfig) -> Result<SimulatedData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let years = cfg.years();
    let [x0, y0, x1, y1] = cfg.domain.bounds;
    let boundary = Polygon::rectangle(Point::new(x0, y0), Point::new(x1, y1));
    let mesh = mesh_with_nodes(&boundary, cfg.mesh_nodes)?;
    let k = mesh.num_vertices();
    let field_size = match cfg.form {
        StructuralForm::II => k * cfg.periods,
        _ => k,
    };
    if field_size > MAX_FIELD_SIZE {
        return Err(Error::invalid(format!(
            "latent field of size {field_size} exceeds the simulator limit {MAX_FIELD_SIZE}"
        )));
    }
    let region_set = regions(&cfg.domain, &years, &mut rng)?;
    let lexicon = GroupLexicon::default();

    let mut records = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let point = Point::new(rng.random_range(x0..x1), rng.random_range(y0..y1));
        let year = years[i % years.len()];
        let month = rng.random_range(1..=12u32);
        let event_type = cfg.event_types[rng.random_range(0..cfg.event_types.len())].clone();
        let notes = if rng.random::<f64>() < cfg.group_rate {
            let g = &lexicon.groups[rng.random_range(0..lexicon.groups.len())];
            format!("Clashes involving {} reported", g.aliases[rng.random_range(0..g.aliases.len())])
        } else {
            "Armed men attacked the area".to_string()
        };
        records.push(EventRecord {
            point,
            year,
            month,
            event_type,
            group: lexicon.extract(&notes).map(String::from),
            fatalities: 0,
            line: i as u64 + 2,
            notes,
        });
    }
    let encoding = EncodingConfig {
        include_groups: cfg.group_rate > 0.0,
        ..EncodingConfig::default()
    };
    let (mut dataset, report) = build_dataset(&records, &region_set, &encoding)?;
    if !report.dropped.is_empty() {
        return Err(Error::invalid("simulated events fell outside every region"));
    }

    let fem = assemble_fem(&mesh)?;
    let operator = SpdeOperator::new(&fem);
    let projector = mesh.project(&dataset.points).matrix;
    let year_index: Vec<usize> = dataset.years.iter().map(|y| (y - cfg.first_year) as usize).collect();
    let binary = component_truth(
        cfg,
        cfg.binary_field,
        &cfg.binary_effects,
        &dataset,
        &operator,
        &projector,
        &year_index,
        false,
        &mut rng,
    )?;
    let count = component_truth(
        cfg,
        cfg.count_field,
        &cfg.count_effects,
        &dataset,
        &operator,
        &projector,
        &year_index,
        true,
        &mut rng,
    )?;
    let family = cfg.count_spec();
    let mut pi = Vec::with_capacity(cfg.n);
    let mut structural = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let p = match cfg.zero_mechanism {
            ZeroMechanism::Logistic => logistic(binary.eta[i]),
            ZeroMechanism::None => 1.0,
        };
        let active = rng.random::<f64>() < p;
        let y = if active { family.sample(count.eta[i], &mut rng) } else { 0 };
        pi.push(p);
        structural.push(!active);
        dataset.y[i] = y;
        records[i].fatalities = y;
    }
    Ok(SimulatedData {
        records,
        regions: region_set,
        dataset,
        truth: SimulationTruth {
            config: cfg.clone(),
            years,
            mesh_nodes: k,
            binary,
            count,
            occurrence_probability: pi,
            structural_zero: structural,
        },
        mesh,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SimulationConfig {
        SimulationConfig {
            n: 300,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let a = simulate_dataset(&small(3)).unwrap();
        let b = simulate_dataset(&small(3)).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.truth, b.truth);
        let c = simulate_dataset(&small(4)).unwrap();
        assert_ne!(a.dataset.y, c.dataset.y);
    }

    #[test]
    fn mesh_size_near_target() {
        let d = simulate_dataset(&small(1)).unwrap();
        assert!(d.truth.mesh_nodes.abs_diff(30) <= 6, "{}", d.truth.mesh_nodes);
        assert_eq!(d.truth.binary.spatio_temporal.len(), d.truth.mesh_nodes * 5);
    }

    #[test]
    fn all_active_without_zero_mechanism() {
        let cfg = SimulationConfig {
            zero_mechanism: ZeroMechanism::None,
            ..small(2)
        };
        let d = simulate_dataset(&cfg).unwrap();
        assert!(d.truth.structural_zero.iter().all(|s| !s));
    }

    #[test]
    fn vanishing_field_reduces_to_fixed_effects() {
        let mut cfg = small(5);
        cfg.count_field.sd = 1e-9;
        let d = simulate_dataset(&cfg).unwrap();
        let mut fixed = d.dataset.offset.clone();
        d.dataset.fixed.mul_vec_acc(&d.truth.count.beta, &mut fixed);
        for (a, b) in fixed.iter().zip(&d.truth.count.eta) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn oversized_field_rejected() {
        let cfg = SimulationConfig {
            mesh_nodes: 400,
            periods: 600,
            ..small(1)
        };
        assert!(simulate_dataset(&cfg).is_err());
    }

    #[test]
    fn unknown_effect_rejected() {
        let mut cfg = small(1);
        cfg.count_effects.insert("bogus".into(), 1.0);
        assert!(simulate_dataset(&cfg).is_err());
    }
}
