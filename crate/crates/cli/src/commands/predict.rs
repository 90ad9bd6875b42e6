use serde::{Deserialize, Serialize};
use zigam_core::predict::{
    predict_grid, region_geojson, write_grid_csv, CovariateProfile, ExceedanceSet, GridSpec, PredictOptions,
    RegionTable, GRID_SCHEMA_VERSION,
};

use super::*;
use crate::PredictArgs;

pub const GRID_CSV: &str = "exceedance.csv";
pub const REGION_GEOJSON: &str = "regions_summary.geojson";
pub const REGION_CSV: &str = "regions_summary.csv";
pub const PREDICTION: &str = "prediction.json";

/// Metadata written next to the grid CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionMeta {
    pub schema_version: u32,
    pub threshold: u64,
    pub samples: usize,
    pub years: Vec<i32>,
    pub nx: usize,
    pub ny: usize,
    pub cells: usize,
    pub profile: CovariateProfile,
    pub regions: RegionTable,
    pub warnings: Vec<String>,
}

pub fn run(mut cfg: RunConfig, a: PredictArgs) -> Result<()> {
    let seed = seed_of(&mut cfg, a.run.seed)?;
    let p = &mut cfg.predict;
    p.threshold = a.threshold.unwrap_or(p.threshold);
    p.nx = a.nx.unwrap_or(p.nx);
    p.ny = a.ny.unwrap_or(p.ny);
    p.samples = a.samples.unwrap_or(p.samples);
    if a.years.is_some() {
        p.years.clone_from(&a.years);
    }
    let ExceedanceSet::CountAbove(threshold) = ExceedanceSet::count_above(p.threshold)? else {
        unreachable!("count_above yields a count set")
    };
    let opts = PredictOptions {
        grid: GridSpec {
            nx: p.nx,
            ny: p.ny,
            bounds: None,
        },
        years: p.years.clone(),
        threshold,
        samples: p.samples,
        seed,
        profile: CovariateProfile::default(),
    };
    let fit_dir = FitDir::load(&a.fit_dir)?;

    let mut out = OutputDir::create(&a.run.out)?;
    let grid = out.stage("exceedance", || {
        Ok(predict_grid(
            fit_dir.binary.as_ref(),
            &fit_dir.count,
            &fit_dir.mesh,
            &fit_dir.regions,
            &opts,
        )?)
    })?;
    let mut csv = Vec::new();
    write_grid_csv(&grid, &mut csv)?;
    out.write_bytes(GRID_CSV, &csv)?;
    out.write_json(REGION_GEOJSON, &region_geojson(&grid, &fit_dir.regions))?;
    let mut table = String::from("region,year,p_occur,p_exceed,cells\n");
    for s in &grid.regions.summaries {
        println!(
            "  {:<24} {}  P(occur) {:.3}  P(>{threshold}) {:.3}",
            s.region, s.year, s.p_occur, s.p_exceed
        );
        table.push_str(&format!("{},{},{},{},{}\n", s.region, s.year, s.p_occur, s.p_exceed, s.cells));
    }
    out.write_bytes(REGION_CSV, table.as_bytes())?;
    for w in &grid.warnings {
        println!("  warning: {w}");
    }
    out.write_json(
        PREDICTION,
        &PredictionMeta {
            schema_version: GRID_SCHEMA_VERSION,
            threshold,
            samples: grid.samples,
            years: grid.years.clone(),
            nx: opts.grid.nx,
            ny: opts.grid.ny,
            cells: grid.cells.len(),
            profile: opts.profile.clone(),
            regions: grid.regions.clone(),
            warnings: grid.warnings.clone(),
        },
    )?;
    out.finish("predict", Some(seed))?;
    Ok(())
}
