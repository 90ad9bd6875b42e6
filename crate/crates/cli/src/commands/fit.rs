use std::sync::Arc;

use serde::Serialize;
use zigam_core::diagnostics::{adequacy, AdequacyReport};
use zigam_core::hurdle::{component_design, fit_sequential, make_binary, HurdleOptions};
use zigam_core::model::{ComponentFit, ComponentSpec, ModelContext};

use super::*;
use crate::FitArgs;

#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct AdequacyArtifact {
    pub schema_version: u32,
    pub samples: usize,
    pub binary: Option<AdequacyReport>,
    pub count: AdequacyReport,
}

pub fn hurdle_options(cfg: &RunConfig, seed: u64) -> HurdleOptions {
    HurdleOptions {
        pi_samples: cfg.hurdle.pi_samples,
        waic_samples: cfg.hurdle.waic_samples,
        grid_cap: cfg.hurdle.grid_size,
        seed,
        ..HurdleOptions::default()
    }
}

/// Adequacy of both components; the count response is the classified one.
pub fn adequacy_reports(
    ctx: &ModelContext,
    binary: Option<(&ComponentFit, &ComponentSpec)>,
    count: (&ComponentFit, &ComponentSpec),
    count_y: &[Option<u64>],
    samples: usize,
    seed: u64,
) -> Result<AdequacyArtifact> {
    let binary = match binary {
        Some((fit, spec)) => {
            let (design, offset) = component_design(ctx, spec)?;
            let z0: Vec<Option<u64>> = make_binary(&ctx.dataset.y).into_iter().map(Some).collect();
            Some(adequacy(&fit.fit, &design, &offset, &z0, samples, seed).map_err(|e| e.in_stage("binary adequacy"))?)
        }
        None => None,
    };
    let (fit, spec) = count;
    let (design, offset) = component_design(ctx, spec)?;
    let count = adequacy(&fit.fit, &design, &offset, count_y, samples, seed.wrapping_add(1))
        .map_err(|e| e.in_stage("count adequacy"))?;
    Ok(AdequacyArtifact {
        schema_version: REPORT_SCHEMA_VERSION,
        samples,
        binary,
        count,
    })
}

pub fn run(mut cfg: RunConfig, a: FitArgs) -> Result<()> {
    apply_data(&mut cfg, &a.data);
    apply_model(&mut cfg, &a.model);
    let seed = seed_of(&mut cfg, a.run.seed)?;
    if let Some(v) = a.grid_size {
        cfg.hurdle.grid_size = v;
    }
    if let Some(v) = a.pi_samples {
        cfg.hurdle.pi_samples = v;
    }
    if let Some(v) = a.waic_samples {
        cfg.hurdle.waic_samples = v;
    }
    if let Some(v) = a.diagnose_samples {
        cfg.diagnose.samples = v;
    }
    let (binary_spec, count_spec) = component_specs(&cfg)?;
    let opts = hurdle_options(&cfg, seed);
    let mesh_opts = mesh_options(&cfg);

    let mut out = OutputDir::create(&a.run.out)?;
    let inputs = out.stage("data", || load_inputs(&cfg))?;
    let mesh = out.stage("mesh", || domain_mesh(&inputs.dataset, &inputs.regions, &mesh_opts))?;
    println!("  mesh with {} nodes and {} triangles", mesh.num_vertices(), mesh.triangles().len());
    let dataset = Arc::new(inputs.dataset);
    let ctx = ModelContext::new(dataset.clone(), Arc::new(mesh))?;

    out.write_json(
        SETTINGS,
        &FitSettings {
            schema_version: SETTINGS_SCHEMA_VERSION,
            binary: binary_spec.clone(),
            count: count_spec.clone(),
            mesh: mesh_opts,
            hurdle: opts,
        },
    )?;
    out.write_json(DATASET, dataset.as_ref())?;
    out.write_json(
        DATA_REPORT,
        &DataReport {
            schema_version: REPORT_SCHEMA_VERSION,
            events: inputs.events,
            parse_errors: inputs.parse_errors,
            dropped: inputs.dropped,
            mesh_nodes: ctx.num_nodes(),
        },
    )?;
    out.write_json(MESH, ctx.mesh.as_ref())?;
    out.write_json(REGIONS, &inputs.regions.to_geojson(|_| Default::default()))?;
    out.write_bytes(POPULATION, inputs.regions.population_csv().as_bytes())?;

    let hurdle = out.stage("hurdle", || Ok(fit_sequential(&ctx, &binary_spec, &count_spec, None, &opts)?))?;
    let chosen = hurdle.selection.chosen_candidate();
    println!(
        "  chosen c = {:.5}: {} structural zeros, {} count zeros",
        chosen.c, chosen.structural_zeros, chosen.count_zeros
    );
    for w in &hurdle.warnings {
        println!("  warning: {w}");
    }
    if let Some(b) = &hurdle.binary {
        write_component(&mut out, BINARY_FIT, b)?;
    }
    write_component(&mut out, COUNT_FIT, &hurdle.count)?;
    let report = ThresholdReport {
        schema_version: REPORT_SCHEMA_VERSION,
        selection: hurdle.selection.clone(),
        pi_tilde: hurdle.pi_tilde.clone(),
        warnings: hurdle.warnings.clone(),
    };
    out.write_json(THRESHOLD, &report)?;

    let count_y = zigam_core::hurdle::classify_zeros(&dataset.y, &hurdle.pi_tilde, hurdle.selection.chosen)?;
    let samples = cfg.diagnose.samples;
    let adequacy = out.stage("diagnostics", || {
        adequacy_reports(
            &ctx,
            hurdle.binary.as_ref().map(|b| (b, &binary_spec)),
            (&hurdle.count, &count_spec),
            &count_y,
            samples,
            seed,
        )
    })?;
    out.write_json(ADEQUACY, &adequacy)?;
    out.finish("fit", Some(seed))?;
    Ok(())
}
