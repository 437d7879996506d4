//! The full four-stage pipeline on the desk-scale toy task, for every seed in the
//! built-in toy config, followed by a resumed rerun of the first seed.

use hce::experiment::report::{render_run_report, render_seed_summary};
use hce::experiment::{ExperimentConfig, TOY_CONFIG};
use hce::pipeline::{run_hce, RunOptions};

fn main() -> hce::Result<()> {
    let mut cfg = ExperimentConfig::from_toml_str(TOY_CONFIG)?;
    cfg.out_dir = std::env::temp_dir().join("hce_toy");
    let mut reports = Vec::new();
    for &seed in &cfg.seeds {
        let out = run_hce(&cfg.run_config(seed), &RunOptions::default())?.complete()?;
        reports.push(out.report);
    }
    println!("{}", render_run_report(&reports[0]));
    println!("{}", render_seed_summary(&reports));

    let resumed = run_hce(&cfg.run_config(cfg.seeds[0]), &RunOptions { resume: true, stop_after: None })?.complete()?;
    println!("resumed stage log: {:?}", resumed.stage_log);
    Ok(())
}
