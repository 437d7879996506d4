//! Accuracy versus α at two keep ratios, with O and Q shared by every point.

use hce::experiment::cli::cli_sweep_alpha;
use hce::experiment::report::render_sweep;
use hce::experiment::{CliOptions, ExperimentConfig, TOY_CONFIG};

fn main() -> hce::Result<()> {
    let cfg = ExperimentConfig::from_toml_str(TOY_CONFIG)?;
    let opts = CliOptions { seed: Some(0), resume: true, out: Some(std::env::temp_dir().join("hce_sweep")) };
    let rows = cli_sweep_alpha(&cfg, &opts)?;
    print!("{}", render_sweep(&rows));
    Ok(())
}
