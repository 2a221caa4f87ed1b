//! Sweep the item-encoder size and compare per-client communication between
//! the representation-exchange protocol and a whole-model baseline. Client
//! bytes stay flat in one and grow with the encoder in the other.
//!
//! ```bash
//! cargo run --release -p fednews --example cost_comparison
//! ```

use fednews::experiment::{compare_modes, DatasetSel, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("fednews-cost-comparison");
    std::fs::create_dir_all(&dir)?;
    let spec_path = dir.join("spec.cfg");
    std::fs::write(
        &spec_path,
        "users = 100\nitems = 1000\nnoise = 0.05\nseed = 7\n\
         history_len = 8\nclicks_per_user = 4\nimpression_size = 8\n",
    )?;

    let mut cfg = RunConfig::default_synthetic(dir.clone());
    cfg.dataset = DatasetSel::Synthetic {
        spec_path: Some(spec_path),
    };
    cfg.rounds = 1;
    cfg.seed = 42;
    cfg.train.opt.group_size = 10;
    cfg.train.secure_aggregation = false;
    cfg.token_dim = 24;
    cfg.repr_dim = 32;
    cfg.heads = 4;
    cfg.attn_hidden = 32;

    let report = compare_modes(&cfg, &[1, 2, 4, 8])?;
    println!("scale  mode         enc-params  client-KB/round  server-KB/round");
    for r in &report.rows {
        println!(
            "{:>5}  {:<11}  {:>10}  {:>15.1}  {:>15.1}",
            r.scale,
            r.mode,
            r.encoder_params,
            r.avg_client_round_bytes / 1024.0,
            r.server_round_bytes / 1024.0
        );
    }
    let eff: Vec<_> = report.rows.iter().filter(|r| r.mode == "efficient").collect();
    let whole: Vec<_> = report.rows.iter().filter(|r| r.mode == "whole-model").collect();
    println!(
        "\nclient bytes at x8: {:.1}% of the whole-model baseline",
        100.0 * eff[3].avg_client_round_bytes / whole[3].avg_client_round_bytes
    );
    println!("tables written to {}", dir.display());
    Ok(())
}
