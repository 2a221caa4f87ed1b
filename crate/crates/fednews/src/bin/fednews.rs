//! Experiment runner CLI: a thin wrapper over the library. Exit codes:
//! 0 success, 2 configuration error, 3 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use fednews::error::ExperimentError;
use fednews::experiment::{compare_modes, run_experiment, RunConfig, OUT_DIR_ENV};

#[derive(Parser, Debug)]
#[command(name = "fednews", about = "Federated news recommendation simulator")]
struct Args {
    /// Run configuration file (flat key = value lines).
    #[arg(long)]
    config: PathBuf,

    /// Override the number of training rounds.
    #[arg(long)]
    rounds: Option<u64>,

    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Override the output directory (FEDNEWS_OUT_DIR also applies).
    #[arg(long)]
    out_dir: Option<PathBuf>,

    /// Override secure aggregation on/off.
    #[arg(long)]
    secure: Option<bool>,

    /// Override the learning rate.
    #[arg(long)]
    learning_rate: Option<f64>,

    /// Override the sampled group size per round.
    #[arg(long)]
    group_size: Option<usize>,

    /// Override the negatives-per-positive ratio.
    #[arg(long)]
    neg_ratio: Option<usize>,

    /// Override the history-input dropout rate.
    #[arg(long)]
    dropout: Option<f64>,

    /// Override the evaluation cadence in rounds.
    #[arg(long)]
    eval_every: Option<u64>,

    /// Override the protocol: efficient or whole-model.
    #[arg(long)]
    baseline_mode: Option<String>,

    /// Run the encoder-size cost comparison instead of a training run.
    #[arg(long)]
    compare: bool,

    /// Encoder size multipliers for --compare.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    scales: Vec<usize>,
}

fn run(args: Args) -> Result<(), ExperimentError> {
    let mut cfg = RunConfig::from_file(&args.config)?;
    if let Some(rounds) = args.rounds {
        cfg.rounds = rounds;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(secure) = args.secure {
        cfg.train.secure_aggregation = secure;
    }
    if let Some(lr) = args.learning_rate {
        cfg.train.opt.learning_rate = lr;
    }
    if let Some(gs) = args.group_size {
        cfg.train.opt.group_size = gs;
    }
    if let Some(k) = args.neg_ratio {
        cfg.train.opt.neg_ratio = k;
    }
    if let Some(p) = args.dropout {
        cfg.train.dropout = p;
    }
    if let Some(every) = args.eval_every {
        cfg.eval_every = every;
    }
    if let Some(mode) = &args.baseline_mode {
        cfg.train.baseline = match mode.as_str() {
            "efficient" => fednews::fedcore::BaselineMode::Efficient,
            "whole-model" | "whole_model" => fednews::fedcore::BaselineMode::WholeModel,
            other => {
                eprintln!("configuration error: unknown baseline mode `{other}`");
                std::process::exit(2);
            }
        };
    }
    if let Some(dir) = args.out_dir {
        cfg.out_dir = dir;
    }
    if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
        cfg.out_dir = PathBuf::from(dir);
    }

    if args.compare {
        let report = compare_modes(&cfg, &args.scales)?;
        println!("scale  mode         enc-params  client-bytes/round  server-bytes/round");
        for r in &report.rows {
            println!(
                "{:>5}  {:<11}  {:>10}  {:>18.0}  {:>18.0}",
                r.scale, r.mode, r.encoder_params, r.avg_client_round_bytes, r.server_round_bytes
            );
        }
        println!("wrote compare.csv and compare.json to {}", cfg.out_dir.display());
        return Ok(());
    }

    let out = run_experiment(&cfg)?;
    for row in &out.rows {
        match (&row.eval, row.loss) {
            (Some(e), _) => println!(
                "round {:>4}  loss {:<9} auc {:.4}  mrr {:.4}  ndcg@5 {:.4}  ndcg@10 {:.4}",
                row.round,
                row.loss.map(|l| format!("{l:.4}")).unwrap_or_else(|| "-".into()),
                e.auc,
                e.mrr,
                e.ndcg5,
                e.ndcg10
            ),
            (None, Some(loss)) => println!("round {:>4}  loss {loss:.4}", row.round),
            (None, None) => println!("round {:>4}  (skipped)", row.round),
        }
    }
    println!(
        "final auc {:.4}; outputs in {}",
        out.final_eval.auc,
        out.out_dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(ExperimentError::Config(e)) => {
            eprintln!("configuration error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("run failed: {e}");
            ExitCode::from(3)
        }
    }
}
