//! swigan: conditional climate-index scenario generation and drought risk
//! analysis on gridded data.

mod cfg;
mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "swigan",
    version,
    about = "Climate index scenario generator and risk pipeline"
)]
struct Cli {
    /// Worker threads (default: logical cores). Outputs are identical at any
    /// thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Dataset synthesis and inspection.
    Data(DataCmd),
    /// Adversarial training.
    Train(TrainArgs),
    /// Project trajectory ensembles with a trained generator.
    Generate(GenerateArgs),
    /// Per-pixel metrics of an ensemble against observations.
    Evaluate(EvaluateArgs),
    /// Permutation importance of covariates (and optionally pixels).
    Explain(ExplainArgs),
    /// Eligibility, losses and Value-at-Risk over an ensemble.
    Risk(RiskArgs),
    /// Fast self-checks: gradient oracles and architecture shapes.
    Selftest,
}

#[derive(Args)]
struct DataCmd {
    #[command(subcommand)]
    action: DataAction,
}

#[derive(Subcommand)]
enum DataAction {
    /// Generate a synthetic dataset (plus projected covariates) from a spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print shapes, per-variable statistics and split boundaries as CSV.
    Inspect { dir: PathBuf },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Resume from a checkpoint directory written by a previous run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Trained parameters: a training output directory or its params_gen.swg.
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Directory of projected covariate grid-stacks (one .grd per covariate).
    #[arg(long, conflicts_with = "eval_split")]
    scenario: Option<PathBuf>,
    /// Project over the dataset's own test months (observed covariates),
    /// holding out the truth for evaluation.
    #[arg(long)]
    eval_split: bool,
    /// Months to project (default: full scenario/test coverage).
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, default_value_t = 100)]
    num_traj: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "scenario")]
    label: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Dataset directory holding the observed index.
    #[arg(long)]
    obs: PathBuf,
    /// Ensemble directory from `generate`.
    #[arg(long)]
    gen: PathBuf,
    /// Summary CSV path; per-metric rasters land next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also compute spatial importance for this probe pixel ("row,col").
    #[arg(long, value_parser = parse_probe)]
    probe: Option<(usize, usize)>,
    #[arg(long, default_value_t = 4)]
    n_permutations: usize,
    #[arg(long, default_value_t = 3)]
    n_trajectories: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Score the lagged index channels as one extra feature group.
    #[arg(long, default_value_t = true)]
    include_lags: bool,
}

#[derive(Args)]
struct RiskArgs {
    /// Ensemble directory from `generate`.
    #[arg(long)]
    gen: PathBuf,
    #[arg(long)]
    communes: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory supplying the historical yearly reference.
    #[arg(long)]
    history: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_probe(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s.split_once(',').ok_or("probe must be row,col")?;
    Ok((
        r.trim().parse().map_err(|_| "bad probe row")?,
        c.trim().parse().map_err(|_| "bad probe col")?,
    ))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match cli.cmd {
        Cmd::Data(DataCmd {
            action: DataAction::Synth { spec, out, seed },
        }) => commands::data_synth(&spec, &out, seed),
        Cmd::Data(DataCmd {
            action: DataAction::Inspect { dir },
        }) => commands::data_inspect(&dir),
        Cmd::Train(a) => commands::train(&a.config, &a.data, &a.out, a.seed, a.resume.as_deref()),
        Cmd::Generate(a) => commands::generate(commands::GenerateRequest {
            params: &a.params,
            data: &a.data,
            scenario: a.scenario.as_deref(),
            eval_split: a.eval_split,
            horizon: a.horizon,
            num_traj: a.num_traj,
            seed: a.seed,
            label: &a.label,
            out: &a.out,
        }),
        Cmd::Evaluate(a) => commands::evaluate(&a.obs, &a.gen, &a.out),
        Cmd::Explain(a) => commands::explain(commands::ExplainRequest {
            params: &a.params,
            data: &a.data,
            out: &a.out,
            probe: a.probe,
            n_permutations: a.n_permutations,
            n_trajectories: a.n_trajectories,
            seed: a.seed,
            include_lags: a.include_lags,
        }),
        Cmd::Risk(a) => {
            commands::risk(&a.gen, &a.communes, a.config.as_deref(), &a.history, &a.out)
        }
        Cmd::Selftest => commands::selftest(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
