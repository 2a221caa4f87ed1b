//! Federated news recommendation with secure gradient aggregation, as a
//! desk-scale simulator.
//!
//! The recommendation model is split in two: a large item (news) encoder
//! that never leaves the server, and a light-weight attention user model
//! shared with clients. Each round a sampled client group privately computes
//! the union of the items its members interacted with, downloads the user
//! model plus just those item representations, trains locally, and uploads
//! weighted gradients through a dropout-resilient masking protocol, so the
//! server sees only sums. The server applies the aggregated user-model
//! gradient directly and chains the representation gradients through the
//! item encoder, then re-infers the representation table.
//!
//! # Modules
//!
//! - [`model`]: item encoder, attention user encoder, scoring, loss, and
//!   exact analytic gradients.
//! - [`fedcore`]: round orchestration, weighted aggregation, the adaptive
//!   server-side optimizers, checkpoints.
//! - [`secagg`]: pairwise masking, threshold secret sharing, fixed-point
//!   encoding, union-set indicators.
//! - [`netsim`]: in-process transport with exact byte accounting and
//!   scripted client dropout.
//! - [`data`]: behavior-file ingestion, synthetic corpora, per-client
//!   stores.
//! - [`metrics`]: AUC / MRR / nDCG ranking metrics.
//! - [`experiment`]: run configuration, the training loop, and CSV/JSON
//!   exports.
//!
//! # Examples
//!
//! One runnable example per capability:
//!
//! ```text
//! examples/
//! ├── train_synthetic.rs   # federated training end to end, metrics per round
//! ├── secure_sum.rs        # masked summation with dropouts
//! ├── union_set.rs         # private union of client item sets
//! ├── cost_comparison.rs   # encoder-size sweep vs whole-model baseline
//! ├── gradient_check.rs    # analytic gradients vs finite differences
//! └── mind_ingest.rs       # behavior/news TSV ingestion
//! ```
//!
//! ```bash
//! cargo run --release -p fednews --example train_synthetic
//! cargo run -p fednews --example secure_sum
//! ```
//!
//! # Quick start
//!
//! ```no_run
//! use fednews::experiment::{run_experiment, RunConfig};
//!
//! let mut cfg = RunConfig::default_synthetic("runs/demo".into());
//! cfg.rounds = 50;
//! let out = run_experiment(&cfg)?;
//! println!("final AUC {:.3}", out.final_eval.auc);
//! # Ok::<(), fednews::error::ExperimentError>(())
//! ```

pub mod data;
pub mod error;
pub mod experiment;
pub mod fedcore;
pub(crate) mod kv;
pub(crate) mod linalg;
pub mod metrics;
pub mod model;
pub mod netsim;
pub mod rng;
pub mod secagg;
