//! Experiment runner: run configuration, the training loop, evaluation, and
//! metric and cost exports.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::data::{gen_synthetic, load_mind, Dataset, EvalImpression, LoadOptions, SyntheticSpec};
use crate::error::{ConfigError, ExperimentError};
use crate::fedcore::{
    save_checkpoint, BaselineMode, RoundReport, ServerState, Simulation, TrainConfig,
};
use crate::kv::KvFile;
use crate::metrics::{evaluate_scored, EvalOptions, EvalResult, ScoredImpression};
use crate::model::{encode_user, ModelDims, Pooling};
use crate::netsim::{Bus, Direction, FaultPlan};
use crate::secagg::PrgKind;

/// Environment variable that overrides the output directory.
pub const OUT_DIR_ENV: &str = "FEDNEWS_OUT_DIR";

/// Which dataset a run trains on.
#[derive(Debug, Clone)]
pub enum DatasetSel {
    Synthetic { spec_path: Option<PathBuf> },
    Mind { behaviors: PathBuf, news: PathBuf },
}

/// Full run configuration; every field mirrors a config-file key.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset: DatasetSel,
    pub rounds: u64,
    pub eval_every: u64,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub train: TrainConfig,
    pub token_dim: usize,
    pub repr_dim: usize,
    pub heads: usize,
    pub attn_hidden: usize,
    pub pooling: Pooling,
    pub history_max: usize,
    pub vocab_cap: usize,
    pub eval_opts: EvalOptions,
}

impl RunConfig {
    /// A small synthetic run with every knob at its default.
    pub fn default_synthetic(out_dir: PathBuf) -> Self {
        RunConfig {
            dataset: DatasetSel::Synthetic { spec_path: None },
            rounds: 50,
            eval_every: 10,
            seed: 42,
            out_dir,
            train: TrainConfig::default(),
            token_dim: 16,
            repr_dim: 32,
            heads: 4,
            attn_hidden: 32,
            pooling: Pooling::Mean,
            history_max: 50,
            vocab_cap: 30_000,
            eval_opts: EvalOptions::default(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let kv = KvFile::load(path)?;
        let dataset = match kv.require("dataset")? {
            "synthetic" => DatasetSel::Synthetic {
                spec_path: kv.get("synthetic_spec").map(PathBuf::from),
            },
            "mind" => DatasetSel::Mind {
                behaviors: PathBuf::from(kv.require("mind_behaviors")?),
                news: PathBuf::from(kv.require("mind_news")?),
            },
            other => {
                return Err(ConfigError::BadValue {
                    path: kv.path.clone(),
                    key: "dataset".into(),
                    msg: format!("expected `synthetic` or `mind`, got `{other}`"),
                })
            }
        };
        let mut train = TrainConfig::default();
        train.opt.learning_rate = kv.parse("learning_rate", train.opt.learning_rate)?;
        train.opt.beta1 = kv.parse("beta1", train.opt.beta1)?;
        train.opt.beta2 = kv.parse("beta2", train.opt.beta2)?;
        train.opt.epsilon = kv.parse("epsilon", train.opt.epsilon)?;
        train.opt.group_size = kv.parse("group_size", train.opt.group_size)?;
        train.opt.neg_ratio = kv.parse("neg_ratio", train.opt.neg_ratio)?;
        train.opt.strict_paper_sign =
            kv.parse_bool("strict_paper_sign", train.opt.strict_paper_sign)?;
        train.dropout = kv.parse("dropout", train.dropout)?;
        train.secure_aggregation = kv.parse_bool("secure_aggregation", true)?;
        train.secagg.threshold = kv.parse("secagg_threshold", train.secagg.threshold)?;
        train.secagg.frac_bits = kv.parse("secagg_frac_bits", train.secagg.frac_bits)?;
        if let Some(prg) = kv.get("secagg_prg") {
            train.secagg.prg = PrgKind::parse(prg).ok_or_else(|| ConfigError::BadValue {
                path: kv.path.clone(),
                key: "secagg_prg".into(),
                msg: format!("unknown generator `{prg}`"),
            })?;
        }
        train.baseline = match kv.get("baseline_mode").unwrap_or("efficient") {
            "efficient" => BaselineMode::Efficient,
            "whole-model" | "whole_model" => BaselineMode::WholeModel,
            other => {
                return Err(ConfigError::BadValue {
                    path: kv.path.clone(),
                    key: "baseline_mode".into(),
                    msg: format!("expected `efficient` or `whole-model`, got `{other}`"),
                })
            }
        };
        let pooling = match kv.get("pooling").unwrap_or("mean") {
            "mean" => Pooling::Mean,
            "attention" => Pooling::Attention,
            other => {
                return Err(ConfigError::BadValue {
                    path: kv.path.clone(),
                    key: "pooling".into(),
                    msg: format!("expected `mean` or `attention`, got `{other}`"),
                })
            }
        };
        let cfg = RunConfig {
            dataset,
            rounds: kv.parse("rounds", 100u64)?,
            eval_every: kv.parse("eval_every", 10u64)?,
            seed: kv.parse("seed", 42u64)?,
            out_dir: PathBuf::from(kv.get("out_dir").unwrap_or("runs/out")),
            train,
            token_dim: kv.parse("token_dim", 64usize)?,
            repr_dim: kv.parse("repr_dim", 400usize)?,
            heads: kv.parse("heads", 4usize)?,
            attn_hidden: kv.parse("attn_hidden", 200usize)?,
            pooling,
            history_max: kv.parse("history_max", 50usize)?,
            vocab_cap: kv.parse("vocab_cap", 30_000usize)?,
            eval_opts: EvalOptions {
                count_single_class_ndcg: kv.parse_bool("count_single_class_ndcg", false)?,
            },
        };
        kv.reject_unknown()?;
        Ok(cfg)
    }

    fn dims_for(&self, vocab_size: usize) -> ModelDims {
        ModelDims {
            vocab_size,
            token_dim: self.token_dim,
            repr_dim: self.repr_dim,
            heads: self.heads,
            attn_hidden: self.attn_hidden,
        }
    }
}

/// Load the configured dataset.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset, ExperimentError> {
    match &cfg.dataset {
        DatasetSel::Synthetic { spec_path } => {
            let mut spec = match spec_path {
                Some(p) => SyntheticSpec::from_file(p).map_err(ConfigError::from)?,
                None => SyntheticSpec {
                    seed: cfg.seed,
                    ..SyntheticSpec::default()
                },
            };
            spec.neg_ratio = cfg.train.opt.neg_ratio;
            Ok(gen_synthetic(&spec)?)
        }
        DatasetSel::Mind { behaviors, news } => {
            let opts = LoadOptions {
                history_max: cfg.history_max,
                neg_ratio: cfg.train.opt.neg_ratio,
                vocab_cap: cfg.vocab_cap,
                seed: cfg.seed,
                ..Default::default()
            };
            let (ds, _stats) = load_mind(behaviors, news, &opts)?;
            Ok(ds)
        }
    }
}

/// Score held-out impressions against the current model state.
pub fn evaluate(
    server: &ServerState,
    impressions: &[EvalImpression],
    opts: &EvalOptions,
) -> EvalResult {
    let scored: Vec<ScoredImpression> = impressions
        .iter()
        .map(|imp| {
            let hist: Vec<Vec<f64>> = imp
                .history
                .iter()
                .map(|id| server.news_table[id.index()].clone())
                .collect();
            let u = encode_user(&server.user_model, &hist);
            ScoredImpression {
                items: imp
                    .candidates
                    .iter()
                    .map(|&(id, y)| {
                        let s = crate::linalg::dot(&u, &server.news_table[id.index()]);
                        (id, s, y)
                    })
                    .collect(),
            }
        })
        .collect();
    evaluate_scored(&scored, opts)
}

/// One metrics.csv row.
#[derive(Debug, Clone)]
pub struct MetricRow {
    pub round: u64,
    pub loss: Option<f64>,
    pub eval: Option<EvalResult>,
}

/// Run summary written to summary.json.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub seed: u64,
    pub rounds: u64,
    pub rounds_skipped: u64,
    pub secure_aggregation: bool,
    pub baseline_mode: String,
    pub user_params: usize,
    pub encoder_params: usize,
    pub final_loss: Option<f64>,
    pub final_auc: f64,
    pub final_mrr: f64,
    pub final_ndcg5: f64,
    pub final_ndcg10: f64,
    pub total_uplink_bytes: u64,
    pub total_downlink_bytes: u64,
    pub avg_client_bytes_per_round: f64,
    pub avg_client_train_secs: f64,
    pub avg_server_update_secs: f64,
    pub avg_secagg_secs: f64,
    pub dropped_sends: usize,
}

/// Everything a finished run produced.
pub struct ExperimentOutput {
    pub rows: Vec<MetricRow>,
    pub reports: Vec<RoundReport>,
    pub final_eval: EvalResult,
    pub summary: Summary,
    pub out_dir: PathBuf,
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from("round,loss,auc,mrr,ndcg5,ndcg10\n");
    for r in rows {
        let (auc, mrr, n5, n10) = match &r.eval {
            Some(e) => (
                e.auc.to_string(),
                e.mrr.to_string(),
                e.ndcg5.to_string(),
                e.ndcg10.to_string(),
            ),
            None => Default::default(),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.round,
            fmt_opt(r.loss),
            auc,
            mrr,
            n5,
            n10
        ));
    }
    out
}

/// Run the configured experiment: train for `rounds`, evaluating on the
/// cadence, then write metrics.csv, costs.csv, summary.json, and a final
/// checkpoint into the output directory.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentOutput, ExperimentError> {
    run_experiment_with_faults(cfg, FaultPlan::default())
}

/// [`run_experiment`] with a scripted dropout plan, for fault studies.
pub fn run_experiment_with_faults(
    cfg: &RunConfig,
    faults: FaultPlan,
) -> Result<ExperimentOutput, ExperimentError> {
    let dataset = load_dataset(cfg)?;
    let dims = cfg.dims_for(dataset.corpus.vocab_size());
    let bus = Bus::new(faults);
    let mut sim = Simulation::new(
        dataset.corpus,
        dataset.clients,
        &dims,
        cfg.pooling,
        cfg.train.clone(),
        bus,
        cfg.seed,
    )?;

    std::fs::create_dir_all(&cfg.out_dir)?;
    let ckpt_path = cfg.out_dir.join("checkpoint.bin");

    let mut rows = Vec::new();
    let mut reports = Vec::new();
    let should_eval =
        |round: u64| round == cfg.rounds || (cfg.eval_every > 0 && round % cfg.eval_every == 0);
    let initial = evaluate(&sim.server, &dataset.val, &cfg.eval_opts);
    rows.push(MetricRow {
        round: 0,
        loss: None,
        eval: Some(initial),
    });

    let mut final_eval = initial;
    for round in 1..=cfg.rounds {
        let report = match sim.run_round() {
            Ok(r) => r,
            Err(e) => {
                // Preserve progress before surfacing the failure.
                let _ = save_checkpoint(&ckpt_path, &sim.server);
                return Err(e);
            }
        };
        let eval = if should_eval(round) {
            let e = evaluate(&sim.server, &dataset.val, &cfg.eval_opts);
            final_eval = e;
            Some(e)
        } else {
            None
        };
        rows.push(MetricRow {
            round,
            loss: report.mean_loss,
            eval,
        });
        reports.push(report);
    }

    let rounds_run = reports.len().max(1) as f64;
    let group_sz = cfg.train.opt.group_size.max(1) as f64;
    let total_client_bytes: u64 = reports
        .iter()
        .flat_map(|r| r.client_bytes.values())
        .map(|b| b.total())
        .sum();
    let summary = Summary {
        seed: cfg.seed,
        rounds: cfg.rounds,
        rounds_skipped: reports.iter().filter(|r| r.skipped).count() as u64,
        secure_aggregation: cfg.train.secure_aggregation,
        baseline_mode: match cfg.train.baseline {
            BaselineMode::Efficient => "efficient".into(),
            BaselineMode::WholeModel => "whole-model".into(),
        },
        user_params: dims.user_param_len(),
        encoder_params: dims.encoder_param_len(),
        final_loss: rows.iter().rev().find_map(|r| r.loss),
        final_auc: final_eval.auc,
        final_mrr: final_eval.mrr,
        final_ndcg5: final_eval.ndcg5,
        final_ndcg10: final_eval.ndcg10,
        total_uplink_bytes: sim.bus.ledger.total(Direction::Uplink),
        total_downlink_bytes: sim.bus.ledger.total(Direction::Downlink),
        avg_client_bytes_per_round: total_client_bytes as f64 / rounds_run / group_sz,
        avg_client_train_secs: reports.iter().map(|r| r.client_train_secs).sum::<f64>()
            / rounds_run,
        avg_server_update_secs: reports.iter().map(|r| r.server_update_secs).sum::<f64>()
            / rounds_run,
        avg_secagg_secs: reports.iter().map(|r| r.secagg_secs).sum::<f64>() / rounds_run,
        dropped_sends: sim.bus.ledger.drop_log.len(),
    };

    std::fs::write(cfg.out_dir.join("metrics.csv"), metrics_csv(&rows))?;
    std::fs::write(cfg.out_dir.join("costs.csv"), sim.bus.ledger.to_csv())?;
    let mut f = std::fs::File::create(cfg.out_dir.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut f, &summary).map_err(std::io::Error::from)?;
    f.write_all(b"\n")?;
    save_checkpoint(&ckpt_path, &sim.server)?;

    Ok(ExperimentOutput {
        rows,
        reports,
        final_eval,
        summary,
        out_dir: cfg.out_dir.clone(),
    })
}

/// One row of the mode/size comparison.
#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub scale: usize,
    pub mode: String,
    pub encoder_params: usize,
    pub avg_client_round_bytes: f64,
    pub server_round_bytes: f64,
    /// Exact per-client byte totals over the compared rounds.
    #[serde(skip)]
    pub per_client_bytes: BTreeMap<u32, u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub rounds_per_cell: u64,
    pub rows: Vec<CompareRow>,
}

/// Sweep the item-encoder size and report per-client and server bytes for
/// the representation-exchange protocol against the whole-model baseline.
pub fn compare_modes(cfg: &RunConfig, scales: &[usize]) -> Result<CompareReport, ExperimentError> {
    let dataset = load_dataset(cfg)?;
    let rounds = cfg.rounds.max(1);
    let mut rows = Vec::new();
    for &scale in scales {
        for mode in [BaselineMode::Efficient, BaselineMode::WholeModel] {
            let mut dims = cfg.dims_for(dataset.corpus.vocab_size());
            dims.token_dim = cfg.token_dim * scale;
            let mut train = cfg.train.clone();
            train.baseline = mode;
            let mut sim = Simulation::new(
                dataset.corpus.clone(),
                dataset.clients.clone(),
                &dims,
                cfg.pooling,
                train,
                Bus::new(FaultPlan::default()),
                cfg.seed,
            )?;
            let mut per_client: BTreeMap<u32, u64> = BTreeMap::new();
            let mut server_bytes = 0u64;
            for _ in 0..rounds {
                let report = sim.run_round()?;
                for (user, bytes) in &report.client_bytes {
                    *per_client.entry(user.0).or_insert(0) += bytes.total();
                }
                server_bytes += sim
                    .bus
                    .ledger
                    .party_round_bytes(report.round, crate::netsim::SERVER);
            }
            let avg_client = per_client.values().sum::<u64>() as f64
                / per_client.len().max(1) as f64
                / rounds as f64;
            rows.push(CompareRow {
                scale,
                mode: match mode {
                    BaselineMode::Efficient => "efficient".into(),
                    BaselineMode::WholeModel => "whole-model".into(),
                },
                encoder_params: dims.encoder_param_len(),
                avg_client_round_bytes: avg_client,
                server_round_bytes: server_bytes as f64 / rounds as f64,
                per_client_bytes: per_client,
            });
        }
    }
    let report = CompareReport {
        rounds_per_cell: rounds,
        rows,
    };

    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut csv = String::from("scale,mode,encoder_params,avg_client_round_bytes,server_round_bytes\n");
    for r in &report.rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.scale, r.mode, r.encoder_params, r.avg_client_round_bytes, r.server_round_bytes
        ));
    }
    std::fs::write(cfg.out_dir.join("compare.csv"), csv)?;
    let mut f = std::fs::File::create(cfg.out_dir.join("compare.json"))?;
    serde_json::to_writer_pretty(&mut f, &report).map_err(std::io::Error::from)?;
    f.write_all(b"\n")?;
    Ok(report)
}
