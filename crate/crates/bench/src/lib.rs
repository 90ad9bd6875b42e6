//! Simulated fixtures shared by the benchmarks.

use std::sync::Arc;

use zigam_core::engine::{HyperParams, Model, StructuralForm};
use zigam_core::likelihoods::FamilySpec;
use zigam_core::model::{ComponentSpec, ModelContext};
use zigam_core::simulate::{simulate_dataset, SimulatedData, SimulationConfig};

/// A count component assembled on simulated data.
pub struct CountProblem {
    pub data: SimulatedData,
    pub ctx: ModelContext,
    pub spec: ComponentSpec,
    pub model: Model,
    pub hyper: HyperParams,
}

/// Simulates `n` events on a mesh of roughly `mesh_nodes` nodes and assembles
/// the negative binomial count component on the non-structural rows.
pub fn count_problem(n: usize, mesh_nodes: usize, periods: usize, seed: u64) -> CountProblem {
    let cfg = SimulationConfig {
        n,
        mesh_nodes,
        periods,
        seed,
        ..Default::default()
    };
    let data = simulate_dataset(&cfg).expect("simulation succeeds");
    let ctx = ModelContext::new(Arc::new(data.dataset.clone()), Arc::new(data.mesh.clone()))
        .expect("model context builds");
    let spec = ComponentSpec::count(
        StructuralForm::II,
        FamilySpec::negbinomial(1.5).expect("valid dispersion"),
    );
    let y = data
        .dataset
        .y
        .iter()
        .zip(&data.truth.structural_zero)
        .map(|(&v, &s)| (!s).then_some(v))
        .collect();
    let model = ctx.assemble(&spec, y).expect("model assembles");
    let hyper = model.initial_hyper();
    CountProblem {
        data,
        ctx,
        spec,
        model,
        hyper,
    }
}
