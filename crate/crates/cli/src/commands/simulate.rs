use zigam_core::data::write_events;
use zigam_core::simulate::simulate_dataset;

use super::{seed_of, POPULATION, REGIONS};
use crate::artifacts::OutputDir;
use crate::config::{RunConfig, CONFIG_VERSION};
use crate::error::Result;
use crate::SimulateArgs;

pub const EVENTS: &str = "events.csv";
pub const TRUTH: &str = "truth.json";
pub const RUN_CONFIG: &str = "run.toml";

pub fn run(mut cfg: RunConfig, a: SimulateArgs) -> Result<()> {
    let seed = seed_of(&mut cfg, a.run.seed)?;
    let mut sim = cfg.simulate.clone();
    sim.seed = seed;
    sim.n = a.n.unwrap_or(sim.n);
    sim.form = a.form.unwrap_or(sim.form);
    sim.count_family = a.family.unwrap_or(sim.count_family);
    sim.dispersion = a.dispersion.unwrap_or(sim.dispersion);
    sim.mesh_nodes = a.mesh_nodes.unwrap_or(sim.mesh_nodes);
    sim.periods = a.periods.unwrap_or(sim.periods);
    sim.first_year = a.first_year.unwrap_or(sim.first_year);

    let mut out = OutputDir::create(&a.run.out)?;
    let data = out.stage("simulate", || Ok(simulate_dataset(&sim)?))?;
    let mut events = Vec::new();
    write_events(&data.records, &mut events)?;
    out.write_bytes(EVENTS, &events)?;
    out.write_json(REGIONS, &data.regions.to_geojson(|_| Default::default()))?;
    out.write_bytes(POPULATION, data.regions.population_csv().as_bytes())?;
    out.write_json(TRUTH, &data.truth)?;

    let follow_up = format!(
        "version = {CONFIG_VERSION}\nseed = {seed}\n\n[data]\nevents = \"{EVENTS}\"\nregions = \"{REGIONS}\"\npopulation = \"{POPULATION}\"\n\n[model]\nform = \"{}\"\nfamily = \"{}\"\n",
        serde_json::to_value(sim.form)?.as_str().unwrap_or("ii"),
        sim.count_family.name(),
    );
    out.write_bytes(RUN_CONFIG, follow_up.as_bytes())?;
    let zeros = data.dataset.y.iter().filter(|&&v| v == 0).count();
    let structural = data.truth.structural_zero.iter().filter(|&&s| s).count();
    println!(
        "  {} events, {zeros} zeros ({structural} structural), {} mesh nodes",
        data.records.len(),
        data.truth.mesh_nodes
    );
    out.finish("simulate", Some(seed))?;
    Ok(())
}
