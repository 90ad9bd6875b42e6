//! Posterior projection onto a regular space-time grid, exceedance
//! probabilities and region-level summaries.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::engine::{chunk_rng, for_each_posterior_draw, posterior_chunk, SAMPLE_CHUNK};
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, Mesh, Point, Polygon, RegionSet};
use crate::likelihoods::{logistic, FamilySpec};
use crate::model::ComponentFit;
use crate::sparse::CscMatrix;

pub const GRID_SCHEMA_VERSION: u32 = 1;
pub const REGION_SCHEMA_VERSION: u32 = 1;
/// Minimum number of posterior samples for an exceedance estimate.
pub const MIN_EXCEEDANCE_SAMPLES: usize = 10_000;
/// Default count threshold: "more than 20" per event.
pub const DEFAULT_THRESHOLD: u64 = 20;
pub const GRID_CSV_HEADER: [&str; 8] = ["lon", "lat", "year", "p_occur", "p_exceed", "region", "se_occur", "se_exceed"];

const OCCURRENCE_STREAM: u64 = 0x6f63_6375_7272_656e;
const COUNT_STREAM: u64 = 0x636f_756e_7473_5f31;
const OUTCOME_STREAM: u64 = 0x6f75_7463_6f6d_6573;

/// Event whose posterior predictive probability is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExceedanceSet {
    /// `Z₀ = 1`: an event with fatalities occurs.
    Occurrence,
    /// `Z₁ > k`.
    CountAbove(u64),
}

impl ExceedanceSet {
    pub fn count_above(k: i64) -> Result<Self> {
        u64::try_from(k)
            .map(Self::CountAbove)
            .map_err(|_| Error::invalid(format!("count threshold must be non-negative, got {k}")))
    }

    /// Outcome of the inverse-CDF draw with uniform `u`.
    fn hit(&self, family: &FamilySpec, eta: f64, u: f64) -> bool {
        match self {
            Self::Occurrence => u < logistic(eta),
            Self::CountAbove(k) => family.exceeds(u, eta, *k),
        }
    }
}

/// Random stratum order for `len` uniforms: draw `s` falls in
/// `[order[s], order[s] + 1) / len`.
fn strata<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<u32> {
    let mut order: Vec<u32> = (0..len as u32).collect();
    order.shuffle(rng);
    order
}

/// Monte Carlo `P(Z ∈ set | data)`: one outcome drawn per predictor sample,
/// with the outcome uniforms stratified over the samples.
pub fn exceedance_probability<R: Rng + ?Sized>(
    eta: &[f64],
    family: &FamilySpec,
    set: ExceedanceSet,
    rng: &mut R,
) -> Result<f64> {
    if eta.len() < MIN_EXCEEDANCE_SAMPLES {
        return Err(Error::invalid(format!(
            "{} samples given, at least {MIN_EXCEEDANCE_SAMPLES} required",
            eta.len()
        )));
    }
    let order = strata(eta.len(), rng);
    let len = eta.len() as f64;
    let hits = eta
        .iter()
        .zip(order)
        .filter(|&(&e, k)| set.hit(family, e, (f64::from(k) + rng.random::<f64>()) / len))
        .count();
    Ok(hits as f64 / eta.len() as f64)
}

/// Monte Carlo standard error of a proportion estimated from `samples` draws.
pub fn proportion_se(p: f64, samples: usize) -> f64 {
    (p * (1.0 - p) / samples as f64).sqrt()
}

/// Regular grid of cell centres over a bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    /// Defaults to the bounding box of the mesh boundary.
    pub bounds: Option<BoundingBox>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            nx: 150,
            ny: 150,
            bounds: None,
        }
    }
}

/// Cell centres of `spec` that lie inside `domain`, row by row from the south-west.
pub fn grid_points(spec: &GridSpec, domain: &Polygon) -> Result<Vec<Point>> {
    if spec.nx == 0 || spec.ny == 0 {
        return Err(Error::invalid("grid must have at least one cell in each direction"));
    }
    let b = spec.bounds.unwrap_or_else(|| domain.bbox());
    let (dx, dy) = (b.width() / spec.nx as f64, b.height() / spec.ny as f64);
    Ok((0..spec.ny)
        .flat_map(|j| (0..spec.nx).map(move |i| Point::new(b.min.lon + (i as f64 + 0.5) * dx, b.min.lat + (j as f64 + 0.5) * dy)))
        .filter(|p| domain.contains(p))
        .collect())
}

/// Fixed-effect covariate values used for prediction, by design column name.
/// Columns not listed are zero, so the default is the reference profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateProfile(pub BTreeMap<String, f64>);

impl Default for CovariateProfile {
    fn default() -> Self {
        Self(BTreeMap::from([("intercept".to_string(), 1.0)]))
    }
}

impl CovariateProfile {
    /// Sets the indicator of `factor[level]`.
    pub fn with_level(mut self, factor: &str, level: &str) -> Self {
        self.0.insert(format!("{factor}[{level}]"), 1.0);
        self
    }

    /// `n` identical fixed-design rows over `fixed_names`.
    pub fn rows(&self, fixed_names: &[String], n: usize) -> Result<CscMatrix> {
        let mut row = Vec::new();
        for (name, &v) in &self.0 {
            let j = fixed_names
                .iter()
                .position(|f| f == name)
                .ok_or_else(|| Error::invalid(format!("covariate {name:?} is not a design column of the fit")))?;
            row.push((j, v));
        }
        let entries: Vec<_> = (0..n).flat_map(|i| row.iter().map(move |&(j, v)| (i, j, v))).collect();
        Ok(CscMatrix::from_triplets(n, fixed_names.len(), &entries))
    }
}

/// Posterior samples (`samples × points`) of the linear predictor at
/// `points` in `years`, including `offsets`.
#[allow(clippy::too_many_arguments)]
pub fn project_field(
    fit: &ComponentFit,
    mesh: &Mesh,
    points: &[Point],
    years: &[i32],
    fixed_rows: &CscMatrix,
    offsets: &[f64],
    samples: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if offsets.len() != points.len() {
        return Err(Error::Dimension("one offset per point is required".into()));
    }
    let map = fit.predictor_map(mesh, points, years, fixed_rows)?;
    let mut out = DMatrix::zeros(samples, points.len());
    let mut eta = vec![0.0; points.len()];
    for_each_posterior_draw(&fit.fit, samples, seed, |s, x| {
        eta.copy_from_slice(offsets);
        map.mul_vec_acc(x, &mut eta);
        out.row_mut(s).copy_from_slice(&eta);
    })?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictOptions {
    pub grid: GridSpec,
    /// Fitted years to predict; defaults to the last fitted year.
    pub years: Option<Vec<i32>>,
    pub threshold: u64,
    pub samples: usize,
    pub seed: u64,
    pub profile: CovariateProfile,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            years: None,
            threshold: DEFAULT_THRESHOLD,
            samples: MIN_EXCEEDANCE_SAMPLES,
            seed: 0,
            profile: CovariateProfile::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPrediction {
    pub lon: f64,
    pub lat: f64,
    pub year: i32,
    pub region: Option<String>,
    pub p_occur: f64,
    pub p_exceed: f64,
    pub se_occur: f64,
    pub se_exceed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub region: String,
    pub year: i32,
    pub p_occur: f64,
    pub p_exceed: f64,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RegionTable {
    pub summaries: Vec<RegionSummary>,
    /// Cell-years that fell outside every region.
    pub outside_cells: usize,
    /// Regions without any interior cell, omitted from `summaries`.
    pub empty_regions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceGrid {
    pub schema_version: u32,
    pub threshold: u64,
    pub samples: usize,
    pub years: Vec<i32>,
    pub cells: Vec<CellPrediction>,
    pub regions: RegionTable,
    pub warnings: Vec<String>,
}

/// Unweighted mean of cell probabilities per region and year.
pub fn aggregate_regions(cells: &[CellPrediction], regions: &RegionSet) -> RegionTable {
    let mut acc: BTreeMap<(usize, i32), (f64, f64, usize)> = BTreeMap::new();
    let mut outside = 0;
    for c in cells {
        match c.region.as_deref().and_then(|r| regions.index_of(r)) {
            Some(i) => {
                let e = acc.entry((i, c.year)).or_default();
                e.0 += c.p_occur;
                e.1 += c.p_exceed;
                e.2 += 1;
            }
            None => outside += 1,
        }
    }
    let names: Vec<&str> = regions.regions().iter().map(|r| r.name.as_str()).collect();
    let summaries = acc
        .into_iter()
        .map(|((i, year), (po, pe, n))| RegionSummary {
            region: names[i].to_string(),
            year,
            p_occur: po / n as f64,
            p_exceed: pe / n as f64,
            cells: n,
        })
        .collect::<Vec<_>>();
    let empty_regions = names
        .iter()
        .filter(|n| !summaries.iter().any(|s| s.region == **n))
        .map(|n| n.to_string())
        .collect();
    RegionTable {
        summaries,
        outside_cells: outside,
        empty_regions,
    }
}

/// Counts, per cell-year, posterior samples whose outcome falls in `set`.
fn count_hits(
    fit: &ComponentFit,
    map: &CscMatrix,
    offsets: &[f64],
    set: ExceedanceSet,
    samples: usize,
    seed: u64,
) -> Result<Vec<u32>> {
    let family = fit.fit.family;
    let m = map.nrows();
    let chunks = samples.div_ceil(SAMPLE_CHUNK);
    let per_chunk: Vec<Result<Vec<u32>>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut hits = vec![0u32; m];
            let mut eta = vec![0.0; m];
            let mut rng = chunk_rng(seed ^ OUTCOME_STREAM, chunk as u64);
            let len = SAMPLE_CHUNK.min(samples - chunk * SAMPLE_CHUNK);
            let order = strata(len, &mut rng);
            posterior_chunk(&fit.fit, chunk, samples, seed, |s, x| {
                eta.copy_from_slice(offsets);
                map.mul_vec_acc(x, &mut eta);
                let stratum = f64::from(order[s - chunk * SAMPLE_CHUNK]);
                for (h, &e) in hits.iter_mut().zip(&eta) {
                    let u = (stratum + rng.random::<f64>()) / len as f64;
                    *h += u32::from(set.hit(&family, e, u));
                }
            })?;
            Ok(hits)
        })
        .collect();
    let mut total = vec![0u32; m];
    for hits in per_chunk {
        for (t, h) in total.iter_mut().zip(hits?) {
            *t += h;
        }
    }
    Ok(total)
}

/// Occurrence and exceedance probabilities on the prediction grid.
///
/// Without a binary component every cell has `p_occur = 1`. Cells inside
/// the domain but outside every region use the mean regional log
/// population of the year as their offset.
pub fn predict_grid(
    binary: Option<&ComponentFit>,
    count: &ComponentFit,
    mesh: &Mesh,
    regions: &RegionSet,
    opts: &PredictOptions,
) -> Result<ExceedanceGrid> {
    if opts.samples < MIN_EXCEEDANCE_SAMPLES {
        return Err(Error::invalid(format!(
            "{} samples requested, at least {MIN_EXCEEDANCE_SAMPLES} required",
            opts.samples
        )));
    }
    let fitted = &count.layout.years;
    let years = match &opts.years {
        Some(y) if !y.is_empty() => y.clone(),
        _ => vec![*fitted.last().ok_or_else(|| Error::invalid("fit has no years"))?],
    };
    for y in &years {
        if !fitted.contains(y) || binary.is_some_and(|b| !b.layout.years.contains(y)) {
            return Err(Error::invalid(format!("year {y} is outside the fitted years {fitted:?}")));
        }
    }
    let points = grid_points(&opts.grid, mesh.boundary())?;
    if points.is_empty() {
        return Err(Error::invalid("no grid cell lies inside the domain"));
    }
    let n = points.len() * years.len();
    let all_points: Vec<Point> = years.iter().flat_map(|_| points.iter().copied()).collect();
    let all_years: Vec<i32> = years.iter().flat_map(|&y| std::iter::repeat_n(y, points.len())).collect();

    let mut warnings = Vec::new();
    let region_of: Vec<Option<usize>> = points.iter().map(|p| regions.find(p)).collect();
    let outside = region_of.iter().filter(|r| r.is_none()).count();
    if outside > 0 {
        warnings.push(format!("{outside} grid cells lie outside every region"));
    }
    let mut log_pop = Vec::with_capacity(n);
    for &year in &years {
        let mean = regions
            .regions()
            .iter()
            .filter_map(|r| r.population.get(&year).map(|p| p.ln()))
            .collect::<Vec<_>>();
        let fallback = mean.iter().sum::<f64>() / mean.len().max(1) as f64;
        for (p, r) in points.iter().zip(&region_of) {
            log_pop.push(match r {
                Some(_) => regions.locate(p, year)?.map_or(fallback, |(_, pop)| pop.ln()),
                None => fallback,
            });
        }
    }
    let offsets_for = |fit: &ComponentFit| if fit.layout.use_offset { log_pop.clone() } else { vec![0.0; n] };

    let occur_hits = match binary {
        Some(b) => {
            let rows = opts.profile.rows(&b.layout.fixed_names, n)?;
            let map = b.predictor_map(mesh, &all_points, &all_years, &rows)?;
            Some(count_hits(b, &map, &offsets_for(b), ExceedanceSet::Occurrence, opts.samples, opts.seed ^ OCCURRENCE_STREAM)?)
        }
        None => None,
    };
    let rows = opts.profile.rows(&count.layout.fixed_names, n)?;
    let map = count.predictor_map(mesh, &all_points, &all_years, &rows)?;
    let exceed_hits = count_hits(
        count,
        &map,
        &offsets_for(count),
        ExceedanceSet::CountAbove(opts.threshold),
        opts.samples,
        opts.seed ^ COUNT_STREAM,
    )?;

    let s = opts.samples as f64;
    let names: Vec<&str> = regions.regions().iter().map(|r| r.name.as_str()).collect();
    let cells: Vec<CellPrediction> = (0..n)
        .map(|i| {
            let p = all_points[i];
            let p_occur = occur_hits.as_ref().map_or(1.0, |h| h[i] as f64 / s);
            let p_exceed = exceed_hits[i] as f64 / s;
            CellPrediction {
                lon: p.lon,
                lat: p.lat,
                year: all_years[i],
                region: region_of[i % points.len()].map(|r| names[r].to_string()),
                p_occur,
                p_exceed,
                se_occur: proportion_se(p_occur, opts.samples),
                se_exceed: proportion_se(p_exceed, opts.samples),
            }
        })
        .collect();
    let table = aggregate_regions(&cells, regions);
    if !table.empty_regions.is_empty() {
        warnings.push(format!("regions without interior cells: {}", table.empty_regions.join(", ")));
    }
    Ok(ExceedanceGrid {
        schema_version: GRID_SCHEMA_VERSION,
        threshold: opts.threshold,
        samples: opts.samples,
        years,
        cells,
        regions: table,
        warnings,
    })
}

/// Writes the cell table as CSV with [`GRID_CSV_HEADER`].
pub fn write_grid_csv<W: std::io::Write>(grid: &ExceedanceGrid, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(GRID_CSV_HEADER)?;
    for c in &grid.cells {
        w.write_record([
            c.lon.to_string(),
            c.lat.to_string(),
            c.year.to_string(),
            c.p_occur.to_string(),
            c.p_exceed.to_string(),
            c.region.clone().unwrap_or_default(),
            c.se_occur.to_string(),
            c.se_exceed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Region polygons with per-year summaries as a GeoJSON FeatureCollection.
pub fn region_geojson(grid: &ExceedanceGrid, regions: &RegionSet) -> Value {
    let mut fc = regions.to_geojson(|i| {
        let name = &regions.regions()[i].name;
        let rows: Vec<Value> = grid
            .regions
            .summaries
            .iter()
            .filter(|s| &s.region == name)
            .map(|s| json!({ "year": s.year, "p_occur": s.p_occur, "p_exceed": s.p_exceed, "cells": s.cells }))
            .collect();
        let mut props = serde_json::Map::new();
        props.insert("has_cells".into(), Value::Bool(!rows.is_empty()));
        props.insert("summaries".into(), Value::Array(rows));
        props
    });
    if let Value::Object(m) = &mut fc {
        m.insert("schema_version".into(), json!(REGION_SCHEMA_VERSION));
        m.insert("threshold".into(), json!(grid.threshold));
        m.insert("outside_cells".into(), json!(grid.regions.outside_cells));
    }
    fc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Region;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn negative_threshold_rejected() {
        assert!(ExceedanceSet::count_above(-1).is_err());
        assert_eq!(ExceedanceSet::count_above(20).unwrap(), ExceedanceSet::CountAbove(20));
    }

    #[test]
    fn saturated_occurrence_is_certain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = exceedance_probability(&vec![50.0; 10_000], &FamilySpec::bernoulli(), ExceedanceSet::Occurrence, &mut rng)
            .unwrap();
        assert!((p - 1.0).abs() < 1e-6);
    }

    #[test]
    fn poisson_tail_above_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = exceedance_probability(&vec![0.0; 10_000], &FamilySpec::poisson(), ExceedanceSet::CountAbove(0), &mut rng)
            .unwrap();
        assert!((p - (1.0 - (-1f64).exp())).abs() < 1e-3, "{p}");
    }

    #[test]
    fn stratified_draws_stay_unbiased_for_varying_predictors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let eta: Vec<f64> = (0..40_000).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        let p = exceedance_probability(&eta, &FamilySpec::poisson(), ExceedanceSet::CountAbove(0), &mut rng).unwrap();
        // E[1 - exp(-e^Z)] for standard normal Z by midpoint quadrature
        let h = 1e-3;
        let exact: f64 = (-8000..8000)
            .map(|i| {
                let z = (i as f64 + 0.5) * h;
                (1.0 - (-z.exp()).exp()) * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt() * h
            })
            .sum();
        assert!((p - exact).abs() < 4.0 * proportion_se(exact, eta.len()), "{p} vs {exact}");
    }

    #[test]
    fn too_few_samples_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(exceedance_probability(&[0.0; 10], &FamilySpec::poisson(), ExceedanceSet::Occurrence, &mut rng).is_err());
    }

    fn cell(lon: f64, region: Option<&str>, p: f64) -> CellPrediction {
        CellPrediction {
            lon,
            lat: 0.5,
            year: 2020,
            region: region.map(String::from),
            p_occur: p,
            p_exceed: p,
            se_occur: 0.0,
            se_exceed: 0.0,
        }
    }

    fn two_regions() -> RegionSet {
        let mk = |name: &str, x0: f64| Region {
            name: name.into(),
            polygon: Polygon::rectangle(Point::new(x0, 0.0), Point::new(x0 + 1.0, 1.0)),
            population: BTreeMap::from([(2020, 1000.0)]),
        };
        RegionSet::new(vec![mk("West", 0.0), mk("East", 1.0), mk("Far", 5.0)]).unwrap()
    }

    #[test]
    fn disjoint_constant_regions_aggregate_exactly() {
        let cells = vec![
            cell(0.2, Some("West"), 0.2),
            cell(0.7, Some("West"), 0.2),
            cell(1.2, Some("East"), 0.8),
            cell(3.0, None, 0.5),
        ];
        let t = aggregate_regions(&cells, &two_regions());
        assert_eq!(t.summaries.len(), 2);
        let west = t.summaries.iter().find(|s| s.region == "West").unwrap();
        let east = t.summaries.iter().find(|s| s.region == "East").unwrap();
        assert_eq!(west.p_occur, 0.2);
        assert_eq!(east.p_exceed, 0.8);
        assert_eq!(t.outside_cells, 1);
        assert_eq!(t.empty_regions, vec!["Far".to_string()]);
    }

    #[test]
    fn grid_points_respect_domain() {
        let square = Polygon::rectangle(Point::new(0.0, 0.0), Point::new(2.0, 1.0));
        let pts = grid_points(&GridSpec { nx: 4, ny: 2, bounds: None }, &square).unwrap();
        assert_eq!(pts.len(), 8);
        assert_eq!(pts[0], Point::new(0.25, 0.25));
        let tri = Polygon::new(vec![Point::new(0.0, 0.0), Point::new(2.0, 0.0), Point::new(0.0, 1.0)]).unwrap();
        assert!(grid_points(&GridSpec { nx: 4, ny: 2, bounds: None }, &tri).unwrap().len() < 8);
    }

    #[test]
    fn profile_rows_reject_unknown_columns() {
        let names = vec!["intercept".to_string(), "season[Winter]".to_string()];
        let rows = CovariateProfile::default().with_level("season", "Winter").rows(&names, 3).unwrap();
        assert_eq!(rows.to_dense().row(2).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0]);
        assert!(CovariateProfile::default().with_level("season", "Monsoon").rows(&names, 1).is_err());
    }
}
