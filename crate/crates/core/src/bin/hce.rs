use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hce::experiment::cli::{
    cli_cost_report, cli_diversity_report, cli_evaluate, cli_quantize, cli_report, cli_run_hce, cli_sweep_alpha,
    cli_train_baseline, cli_visualize_region,
};
use hce::experiment::report::{render_run_report, render_seed_summary, render_sweep};
use hce::experiment::{CliOptions, ExperimentConfig};

#[derive(Parser)]
#[command(name = "hce", version, about = "Heterogeneously compressed ensembles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run only this seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Restore completed stages instead of recomputing them.
    #[arg(long, global = true)]
    resume: bool,
    /// Output root, replacing the config's out_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    TrainBaseline,
    Quantize,
    RunHce,
    SweepAlpha,
    Evaluate,
    DiversityReport,
    VisualizeRegion,
    CostReport,
    Report,
}

fn run(cli: Cli) -> hce::Result<String> {
    let path = cli.config.ok_or_else(|| hce::Error::config("--config is required"))?;
    let cfg = ExperimentConfig::load(&path)?;
    let opts = CliOptions { seed: cli.seed, resume: cli.resume, out: cli.out };
    let lines = |items: Vec<String>| items.join("\n");
    Ok(match cli.command {
        Command::TrainBaseline | Command::Quantize => {
            let recs = if matches!(cli.command, Command::TrainBaseline) {
                cli_train_baseline(&cfg, &opts)?
            } else {
                cli_quantize(&cfg, &opts)?
            };
            lines(recs.iter().map(|r| format!("{} {} {:?}", r.run_id, r.dir.display(), r.fingerprints)).collect())
        }
        Command::RunHce => {
            let reports = cli_run_hce(&cfg, &opts)?;
            let mut text: String = reports.iter().map(render_run_report).collect::<Vec<_>>().join("\n");
            text.push('\n');
            text + &render_seed_summary(&reports)
        }
        Command::SweepAlpha => render_sweep(&cli_sweep_alpha(&cfg, &opts)?),
        Command::Evaluate => cli_evaluate(&cfg, &opts)?.iter().map(render_run_report).collect::<Vec<_>>().join("\n"),
        Command::DiversityReport => {
            cli_diversity_report(&cfg, &opts)?.iter().map(|d| d.venn_table()).collect::<Vec<_>>().join("\n")
        }
        Command::VisualizeRegion => lines(cli_visualize_region(&cfg, &opts)?.iter().map(|p| p.display().to_string()).collect()),
        Command::CostReport => cli_cost_report(&cfg, &opts)?,
        Command::Report => lines(cli_report(&cfg, &opts)?.iter().map(|p| p.display().to_string()).collect()),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(text) => {
            println!("{}", text.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
