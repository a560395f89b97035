use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};
use milbench::app::{self, ExperimentKind, RunConfig};
use milbench::eval::ResultRow;
use milbench::Error;

#[derive(Parser)]
#[command(name = "milbench", version, about = "Synthetic multiple-instance benchmark: data, Bayes ceiling, poolings, training, evaluation")]
struct Cli {
    /// TOML run config; missing keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides gen.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Override any config key, e.g. --set gen.shift=1.5 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a dataset and write it with its manifest.
    Generate {
        #[arg(long)]
        n_bags: Option<usize>,
    },
    /// Score a dataset file with its Bayes posterior.
    BayesScore { dataset: Option<PathBuf> },
    /// Evaluate the handcrafted models on the held-out set.
    Handcrafted,
    /// Train one pooling under both orders with grid search.
    Train {
        #[arg(long)]
        pooling: Option<String>,
    },
    /// Paired bootstrap of the AUROC difference between two methods.
    Bootstrap,
    /// Test AUROC against training-set size.
    SweepN,
    /// Test AUROC against the shift magnitude.
    SweepDelta,
    /// Run the experiment named by `kind` in the config.
    Run,
}

fn print_rows(rows: &[ResultRow]) {
    println!("{:<34} {:<10} {:<28} {:>6} {:>5} {:>8}", "method", "order", "pooling", "N", "delta", "auroc");
    for r in rows {
        println!("{:<34} {:<10} {:<28} {:>6} {:>5} {:>8.4}", r.method, r.order, r.pooling, r.n, r.delta, r.auroc);
    }
}

fn dispatch(cmd: &Command, cfg: &RunConfig) -> milbench::Result<()> {
    let kind = match cmd {
        Command::Run => cfg.kind.ok_or_else(|| Error::Config("config has no `kind` to run".into()))?,
        Command::Generate { .. } => ExperimentKind::Generate,
        Command::BayesScore { .. } => ExperimentKind::BayesScore,
        Command::Handcrafted => ExperimentKind::Handcrafted,
        Command::Train { .. } => ExperimentKind::Train,
        Command::Bootstrap => ExperimentKind::Bootstrap,
        Command::SweepN => ExperimentKind::SweepN,
        Command::SweepDelta => ExperimentKind::SweepDelta,
    };
    match kind {
        ExperimentKind::Generate => {
            let r = app::cmd_generate(cfg)?;
            println!("wrote {}", r.path.display());
            println!("N = {}", r.n_bags);
            println!("positive fraction = {:.4}", r.positive_fraction);
            println!("sha256 = {}", r.checksum);
            if r.no_signal {
                println!("note: shift is 0, labels carry no signal");
            }
        }
        ExperimentKind::BayesScore => {
            let path = match cmd {
                Command::BayesScore { dataset: Some(p) } => p.clone(),
                _ => cfg.data.path.clone().unwrap_or_else(|| cfg.out_dir.join("dataset.smb")),
            };
            let r = app::cmd_bayes_score(cfg, &path)?;
            println!("wrote {}", r.scores_path.display());
            match r.auroc {
                Some(a) => println!("Bayes AUROC = {a:.4} over {} bags", r.n_bags),
                None => println!("AUROC undefined: only one class among {} bags", r.n_bags),
            }
        }
        ExperimentKind::Handcrafted => print_rows(&app::cmd_handcrafted(cfg)?),
        ExperimentKind::Train => print_rows(&app::cmd_train(cfg)?),
        ExperimentKind::Bootstrap => {
            let r = app::cmd_bootstrap(cfg)?;
            println!("AUROC {} = {:.4}, {} = {:.4}", r.a, r.auroc_a, r.b, r.auroc_b);
            println!(
                "mean difference {:+.4}, 95% CI [{:+.4}, {:+.4}] over {} resamples",
                r.result.mean_diff, r.result.ci_low, r.result.ci_high, r.result.n_resamples
            );
        }
        ExperimentKind::SweepN => print_rows(&app::cmd_sweep_n(cfg)?),
        ExperimentKind::SweepDelta => print_rows(&app::cmd_sweep_delta(cfg)?),
    }
    Ok(())
}

fn run(cli: Cli) -> milbench::Result<()> {
    let mut overrides = cli.overrides.clone();
    if let Some(s) = cli.seed {
        overrides.push(format!("gen.seed={s}"));
    }
    match &cli.command {
        Command::Generate { n_bags: Some(n) } => overrides.push(format!("data.n_bags={n}")),
        Command::Train { pooling: Some(p) } => overrides.push(format!("train.pooling={p:?}")),
        _ => {}
    }
    let mut cfg = RunConfig::load_with_overrides(cli.config.as_deref(), &overrides)?;
    if let Some(d) = cli.out_dir {
        cfg.out_dir = d;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = Some(j);
    }
    if let Some(j) = cfg.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    dispatch(&cli.command, &cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ (Error::Config(_) | Error::Unsupported(_))) => {
            eprintln!("error: {e}\n");
            eprintln!("{}", Cli::command().render_usage());
            eprintln!("See `milbench --help` and the README for config keys and names.");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
