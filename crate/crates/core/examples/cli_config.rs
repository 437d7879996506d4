//! Driving the subcommand functions from a TOML config: cost report, one seed of
//! run-hce, region maps, then regenerating every report from stored records.

use hce::experiment::cli::{cli_cost_report, cli_report, cli_run_hce, cli_visualize_region};
use hce::experiment::{CliOptions, ExperimentConfig, Registry, TOY_CONFIG};

fn main() -> hce::Result<()> {
    let cfg = ExperimentConfig::from_toml_str(TOY_CONFIG)?;
    let out = std::env::temp_dir().join("hce_cli_config");
    let opts = CliOptions { seed: Some(2), resume: true, out: Some(out.clone()) };
    println!("{}", cli_cost_report(&cfg, &opts)?.lines().last().unwrap_or_default());
    let reports = cli_run_hce(&cfg, &opts)?;
    println!("ensemble accuracy {:.3}", reports[0].accuracy.ensemble);
    for p in cli_visualize_region(&cfg, &opts)? {
        println!("regions: {}", p.display());
    }
    for p in cli_report(&cfg, &opts)? {
        println!("rendered {}", p.display());
    }
    for r in Registry::open(&out).list()? {
        println!("registry: {}", r.run_id);
    }
    Ok(())
}
