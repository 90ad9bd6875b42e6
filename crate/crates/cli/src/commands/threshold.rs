use zigam_core::hurdle::{default_grid, select_threshold};

use super::fit::hurdle_options;
use super::*;
use crate::SelectArgs;

pub fn run(mut cfg: RunConfig, a: SelectArgs) -> Result<()> {
    let seed = seed_of(&mut cfg, a.run.seed)?;
    let fit_dir = FitDir::load(&a.fit_dir)?;
    let mut opts = hurdle_options(&cfg, seed);
    opts.pi_samples = fit_dir.settings.hurdle.pi_samples;
    opts.grid_cap = a.grid_size.unwrap_or(fit_dir.settings.hurdle.grid_cap);
    opts.waic_samples = a.waic_samples.unwrap_or(fit_dir.settings.hurdle.waic_samples);
    let ctx = fit_dir.context()?;

    let mut out = OutputDir::create(&a.run.out)?;
    let hurdle_seed = fit_dir.settings.hurdle.seed;
    let pi_tilde = out.stage("occurrence probabilities", || {
        let pi_opts = HurdleOptions {
            seed: hurdle_seed,
            ..opts
        };
        occurrence_probabilities(&ctx, fit_dir.binary.as_ref(), &fit_dir.settings.binary, &pi_opts)
    })?;
    let y = &fit_dir.dataset.y;
    let grid = default_grid(y, &pi_tilde, opts.grid_cap);
    let (selection, count) = out.stage("threshold selection", || {
        Ok(select_threshold(&ctx, y, &pi_tilde, &fit_dir.settings.count, &grid, &opts)?)
    })?;
    println!("  {:>10} {:>10} {:>10} {:>14}", "c", "structural", "count0", "WAIC(y>0)");
    for c in &selection.candidates {
        let waic = c.waic_nonzero.map_or("failed".to_string(), |w| format!("{w:.2}"));
        println!("  {:>10.5} {:>10} {:>10} {:>14}", c.c, c.structural_zeros, c.count_zeros, waic);
    }
    println!("  chosen c = {:.5}", selection.chosen);
    let warnings = selection.warnings.clone();
    out.write_json(
        THRESHOLD,
        &ThresholdReport {
            schema_version: REPORT_SCHEMA_VERSION,
            selection,
            pi_tilde,
            warnings,
        },
    )?;
    write_component(&mut out, COUNT_FIT, &count)?;
    out.finish("select-threshold", Some(seed))?;
    Ok(())
}
