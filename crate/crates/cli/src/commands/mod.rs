//! Subcommand implementations and the fit-directory layout they share.

pub mod compare;
pub mod diagnose;
pub mod fit;
pub mod predict;
pub mod simulate;
pub mod threshold;

use std::fs::File;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use zigam_core::data::{
    build_dataset, parse_events, DropReport, EncodedDataset, EncodingConfig, GroupLexicon, RowError, SchemaConfig,
};
use zigam_core::geometry::{build_mesh, convex_hull, Mesh, MeshOptions, Polygon, RegionSet};
use zigam_core::hurdle::{component_design, predict_pi_tilde, HurdleOptions, ThresholdSelection};
use zigam_core::likelihoods::FamilySpec;
use zigam_core::model::{ComponentFit, ComponentSpec, ModelContext};

use crate::artifacts::{read_artifact, read_json, OutputDir};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::{DataArgs, ModelArgs};

pub const DATASET: &str = "dataset.json";
pub const DATA_REPORT: &str = "data_report.json";
pub const MESH: &str = "mesh.json";
pub const REGIONS: &str = "regions.geojson";
pub const POPULATION: &str = "population.csv";
pub const SETTINGS: &str = "model.json";
pub const BINARY_FIT: &str = "binary_fit.json";
pub const COUNT_FIT: &str = "count_fit.json";
pub const THRESHOLD: &str = "threshold.json";
pub const ADEQUACY: &str = "adequacy.json";

pub const SETTINGS_SCHEMA_VERSION: u32 = 1;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Starting dispersion of the count family before optimisation.
const DISPERSION_START: f64 = 1.0;

/// Model settings recorded in a fit directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub schema_version: u32,
    pub binary: ComponentSpec,
    pub count: ComponentSpec,
    pub mesh: MeshOptions,
    pub hurdle: HurdleOptions,
}

/// Threshold table plus the occurrence probabilities it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub schema_version: u32,
    pub selection: ThresholdSelection,
    pub pi_tilde: Vec<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataReport {
    pub schema_version: u32,
    pub events: usize,
    pub parse_errors: Vec<RowError>,
    pub dropped: DropReport,
    pub mesh_nodes: usize,
}

pub fn apply_data(cfg: &mut RunConfig, a: &DataArgs) {
    for (slot, v) in [
        (&mut cfg.data.events, &a.events),
        (&mut cfg.data.regions, &a.regions),
        (&mut cfg.data.population, &a.population),
    ] {
        if v.is_some() {
            slot.clone_from(v);
        }
    }
}

pub fn apply_model(cfg: &mut RunConfig, a: &ModelArgs) {
    let m = &mut cfg.model;
    m.form = a.form.unwrap_or(m.form);
    m.family = a.family.unwrap_or(m.family);
    m.max_edge = a.max_edge.unwrap_or(m.max_edge);
    m.cutoff = a.cutoff.unwrap_or(m.cutoff);
    if a.knots.is_some() {
        m.knots = a.knots;
    }
}

pub fn seed_of(cfg: &mut RunConfig, flag: Option<u64>) -> Result<u64> {
    if flag.is_some() {
        cfg.seed = flag;
    }
    cfg.require_seed()
}

pub fn component_specs(cfg: &RunConfig) -> Result<(ComponentSpec, ComponentSpec)> {
    let m = &cfg.model;
    let family = FamilySpec::new(m.family, DISPERSION_START)?;
    let mut binary = ComponentSpec::binary(m.form);
    let mut count = ComponentSpec::count(m.form, family);
    for spec in [&mut binary, &mut count] {
        spec.priors = m.priors;
        spec.num_knots = m.knots;
    }
    Ok((binary, count))
}

pub fn mesh_options(cfg: &RunConfig) -> MeshOptions {
    MeshOptions {
        max_edge: cfg.model.max_edge,
        cutoff: Some(cfg.model.cutoff),
        ..MeshOptions::default()
    }
}

/// Parsed inputs, before meshing.
pub struct Inputs {
    pub regions: RegionSet,
    pub dataset: EncodedDataset,
    pub events: usize,
    pub parse_errors: Vec<RowError>,
    pub dropped: DropReport,
}

pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let regions_path = cfg.data_path("regions")?;
    let text = std::fs::read_to_string(regions_path).map_err(|e| CliError::io(regions_path, e))?;
    let mut regions = RegionSet::from_geojson(&text)?;
    let pop_path = cfg.data_path("population")?;
    regions.attach_population(File::open(pop_path).map_err(|e| CliError::io(pop_path, e))?)?;
    let events_path = cfg.data_path("events")?;
    let file = File::open(events_path).map_err(|e| CliError::io(events_path, e))?;
    let report = parse_events(file, &SchemaConfig::default(), &GroupLexicon::default())?;
    for e in report.errors.iter().take(5) {
        println!("  skipped line {}: {}", e.line, e.message);
    }
    let (dataset, dropped) = build_dataset(&report.records, &regions, &EncodingConfig::default())?;
    if dataset.is_empty() {
        return Err(CliError::Config("no usable events after parsing and region matching".into()));
    }
    println!(
        "  {} events parsed, {} rejected, {} outside regions",
        report.records.len(),
        report.errors.len(),
        dropped.dropped.len()
    );
    Ok(Inputs {
        events: report.records.len(),
        parse_errors: report.errors,
        dropped,
        regions,
        dataset,
    })
}

/// Mesh over the convex hull of the region polygons.
pub fn domain_mesh(dataset: &EncodedDataset, regions: &RegionSet, opts: &MeshOptions) -> Result<Mesh> {
    let corners: Vec<_> = regions
        .regions()
        .iter()
        .flat_map(|r| r.polygon.rings().iter().flatten().copied())
        .collect();
    let domain = Polygon::new(convex_hull(&corners))?;
    Ok(build_mesh(&dataset.points, Some(&domain), opts)?)
}

/// Everything `fit` leaves behind that later subcommands consume.
pub struct FitDir {
    pub settings: FitSettings,
    pub dataset: Arc<EncodedDataset>,
    pub mesh: Arc<Mesh>,
    pub regions: RegionSet,
    pub binary: Option<ComponentFit>,
    pub count: ComponentFit,
    pub threshold: ThresholdReport,
}

impl FitDir {
    pub fn load(dir: &Path) -> Result<Self> {
        let settings: FitSettings = read_json(dir, SETTINGS)?;
        if settings.schema_version != SETTINGS_SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "{SETTINGS} has schema version {}, expected {SETTINGS_SCHEMA_VERSION}",
                settings.schema_version
            )));
        }
        let mut regions = RegionSet::from_geojson(&read_artifact(dir, REGIONS)?)?;
        regions.attach_population(read_artifact(dir, POPULATION)?.as_bytes())?;
        let binary = match dir.join(BINARY_FIT).exists() {
            true => Some(ComponentFit::from_json(&read_artifact(dir, BINARY_FIT)?)?),
            false => None,
        };
        Ok(Self {
            settings,
            dataset: Arc::new(read_json(dir, DATASET)?),
            mesh: Arc::new(read_json(dir, MESH)?),
            regions,
            binary,
            count: ComponentFit::from_json(&read_artifact(dir, COUNT_FIT)?)?,
            threshold: read_json(dir, THRESHOLD)?,
        })
    }

    pub fn context(&self) -> Result<ModelContext> {
        Ok(ModelContext::new(self.dataset.clone(), self.mesh.clone())?)
    }

    /// Count response at the selected threshold.
    pub fn count_response(&self) -> Result<Vec<Option<u64>>> {
        Ok(zigam_core::hurdle::classify_zeros(
            &self.dataset.y,
            &self.threshold.pi_tilde,
            self.threshold.selection.chosen,
        )?)
    }
}

/// `π̃` from a binary fit, or all ones without one.
pub fn occurrence_probabilities(
    ctx: &ModelContext,
    binary: Option<&ComponentFit>,
    spec: &ComponentSpec,
    opts: &HurdleOptions,
) -> Result<Vec<f64>> {
    match binary {
        None => Ok(vec![1.0; ctx.dataset.len()]),
        Some(fit) => {
            let (design, offset) = component_design(ctx, spec)?;
            Ok(predict_pi_tilde(fit, &design, &offset, opts.pi_samples, opts.seed)?)
        }
    }
}

pub fn write_component(out: &mut OutputDir, name: &str, fit: &ComponentFit) -> Result<()> {
    out.write_bytes(name, (fit.to_json()? + "\n").as_bytes())
}
