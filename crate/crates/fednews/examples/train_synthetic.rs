//! Train on the seeded synthetic task and watch the ranking metrics move.
//!
//! ```bash
//! cargo run --release -p fednews --example train_synthetic
//! ```

use fednews::experiment::{run_experiment, RunConfig};
use fednews::model::Pooling;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::temp_dir().join("fednews-train-synthetic");
    let mut cfg = RunConfig::default_synthetic(out);
    cfg.rounds = 200;
    cfg.eval_every = 20;
    cfg.seed = 42;
    cfg.train.opt.group_size = 50;
    cfg.train.opt.learning_rate = 0.01;
    cfg.train.secure_aggregation = false;
    cfg.token_dim = 16;
    cfg.repr_dim = 16;
    cfg.heads = 2;
    cfg.attn_hidden = 8;
    cfg.pooling = Pooling::Mean;

    let t0 = std::time::Instant::now();
    let result = run_experiment(&cfg)?;
    println!("round    loss      auc     mrr   ndcg@5  ndcg@10");
    for row in &result.rows {
        if let Some(e) = &row.eval {
            println!(
                "{:>5}  {:>6}  {:.4}  {:.4}   {:.4}   {:.4}",
                row.round,
                row.loss.map(|l| format!("{l:.4}")).unwrap_or_default(),
                e.auc,
                e.mrr,
                e.ndcg5,
                e.ndcg10
            );
        }
    }
    println!(
        "\nfinished in {:.1}s; outputs in {}",
        t0.elapsed().as_secs_f64(),
        result.out_dir.display()
    );
    Ok(())
}
