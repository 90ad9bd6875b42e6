use zigam_core::diagnostics::ks_uniform;

use super::fit::adequacy_reports;
use super::*;
use crate::DiagnoseArgs;

pub const PIT: &str = "pit.csv";

pub fn run(mut cfg: RunConfig, a: DiagnoseArgs) -> Result<()> {
    let seed = seed_of(&mut cfg, a.run.seed)?;
    let samples = a.samples.unwrap_or(cfg.diagnose.samples);
    let fit_dir = FitDir::load(&a.fit_dir)?;
    let ctx = fit_dir.context()?;
    let count_y = fit_dir.count_response()?;

    let mut out = OutputDir::create(&a.run.out)?;
    let report = out.stage("adequacy", || {
        adequacy_reports(
            &ctx,
            fit_dir.binary.as_ref().map(|b| (b, &fit_dir.settings.binary)),
            (&fit_dir.count, &fit_dir.settings.count),
            &count_y,
            samples,
            seed,
        )
    })?;
    let mut pit = String::from("component,index,cpo,pit\n");
    let components = report.binary.iter().map(|r| ("binary", r)).chain([("count", &report.count)]);
    for (name, r) in components {
        println!(
            "  {name:>6}: DIC {:.2} (pD {:.2}), WAIC {:.2} (pW {:.2}), log score {:.4}, PIT KS {:.4}, {} CPO underflows",
            r.dic,
            r.p_dic,
            r.waic,
            r.p_waic,
            r.log_score,
            ks_uniform(&r.pit),
            r.cpo_underflow.len()
        );
        let observed = (0..count_y.len()).filter(|&i| name == "binary" || count_y[i].is_some());
        for (i, (c, p)) in observed.zip(r.cpo.iter().zip(&r.pit)) {
            pit.push_str(&format!("{name},{i},{c},{p}\n"));
        }
    }
    out.write_json(ADEQUACY, &report)?;
    out.write_bytes(PIT, pit.as_bytes())?;
    out.finish("diagnose", Some(seed))?;
    Ok(())
}
