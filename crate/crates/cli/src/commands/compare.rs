use std::sync::Arc;

use serde::{Deserialize, Serialize};
use zigam_core::diagnostics::adequacy;
use zigam_core::engine::StructuralForm;
use zigam_core::hurdle::component_design;
use zigam_core::likelihoods::{Family, FamilySpec};
use zigam_core::model::ModelContext;

use super::*;
use crate::{CompareArgs, CompareBy};

pub const COMPARISON_CSV: &str = "comparison.csv";
pub const COMPARISON_JSON: &str = "comparison.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub dic: Option<f64>,
    pub waic: Option<f64>,
    /// Effective number of parameters (`p_D` of the DIC).
    pub effective_params: Option<f64>,
    pub log_marginal: Option<f64>,
    pub error: Option<String>,
}

fn form_label(form: StructuralForm) -> &'static str {
    match form {
        StructuralForm::Baseline => "Baseline",
        StructuralForm::I => "Form I",
        StructuralForm::II => "Form II",
    }
}

pub fn run(mut cfg: RunConfig, a: CompareArgs) -> Result<()> {
    apply_data(&mut cfg, &a.data);
    apply_model(&mut cfg, &a.model);
    let seed = seed_of(&mut cfg, a.run.seed)?;
    let samples = a.samples.unwrap_or(cfg.diagnose.samples);
    let mut out = OutputDir::create(&a.run.out)?;

    let (ctx, y) = match &a.fit_dir {
        Some(dir) => {
            let fd = FitDir::load(dir)?;
            (fd.context()?, fd.count_response()?)
        }
        None => {
            let inputs = out.stage("data", || load_inputs(&cfg))?;
            let mesh = out.stage("mesh", || domain_mesh(&inputs.dataset, &inputs.regions, &mesh_options(&cfg)))?;
            let y = inputs.dataset.y.iter().map(|&v| Some(v)).collect();
            (ModelContext::new(Arc::new(inputs.dataset), Arc::new(mesh))?, y)
        }
    };

    let candidates: Vec<(String, StructuralForm, Family)> = match a.by {
        CompareBy::Family => a
            .families
            .clone()
            .unwrap_or_else(|| vec![Family::Poisson, Family::NegBinomial, Family::GPoisson])
            .into_iter()
            .map(|f| (f.display_name().to_string(), cfg.model.form, f))
            .collect(),
        CompareBy::Form => a
            .forms
            .clone()
            .unwrap_or_else(|| vec![StructuralForm::Baseline, StructuralForm::I, StructuralForm::II])
            .into_iter()
            .map(|f| (form_label(f).to_string(), f, cfg.model.family))
            .collect(),
    };
    if candidates.iter().any(|(_, _, f)| *f == Family::Bernoulli) {
        return Err(CliError::Config("count families cannot include bernoulli".into()));
    }

    let (_, base_spec) = component_specs(&cfg)?;
    let mut rows = Vec::new();
    for (i, (label, form, family)) in candidates.into_iter().enumerate() {
        let mut spec = base_spec.clone();
        spec.form = form;
        spec.family = FamilySpec::new(family, spec.family.dispersion)?;
        let row = out.stage(&format!("fit {label}"), || {
            let fit = ctx.fit(&spec, y.clone(), None, &Default::default())?;
            let (design, offset) = component_design(&ctx, &spec)?;
            let r = adequacy(&fit.fit, &design, &offset, &y, samples, seed.wrapping_add(i as u64))?;
            Ok(ComparisonRow {
                model: label.clone(),
                dic: Some(r.dic),
                waic: Some(r.waic),
                effective_params: Some(r.p_dic),
                log_marginal: Some(fit.fit.log_marginal),
                error: None,
            })
        });
        rows.push(row.unwrap_or_else(|e: CliError| ComparisonRow {
            model: label,
            dic: None,
            waic: None,
            effective_params: None,
            log_marginal: None,
            error: Some(e.to_string()),
        }));
    }

    let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.2}"));
    let mut csv = String::from("Model,DIC,WAIC,EffectiveParams\n");
    for r in &rows {
        println!("  {:<22} DIC {:>12} WAIC {:>12} pD {:>8}", r.model, fmt(r.dic), fmt(r.waic), fmt(r.effective_params));
        csv.push_str(&format!("{},{},{},{}\n", r.model, fmt(r.dic), fmt(r.waic), fmt(r.effective_params)));
    }
    out.write_bytes(COMPARISON_CSV, csv.as_bytes())?;
    out.write_json(COMPARISON_JSON, &rows)?;
    out.finish("compare-families", Some(seed))?;
    Ok(())
}
