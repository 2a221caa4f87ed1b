//! Check every analytic partial derivative of the training loss against
//! central finite differences on a tiny model.
//!
//! ```bash
//! cargo run -p fednews --example gradient_check
//! ```

use std::collections::BTreeMap;

use fednews::model::{
    backward, user_loss, ItemId, ModelDims, TrainingSample, UserModelParams,
};
use rand::{RngExt, SeedableRng};

fn main() {
    let dims = ModelDims {
        vocab_size: 1,
        token_dim: 1,
        repr_dim: 8,
        heads: 2,
        attn_hidden: 4,
    };
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(17);
    let params = UserModelParams::init(&dims, &mut rng);
    let mut reprs = BTreeMap::new();
    for i in 0..8u32 {
        let v: Vec<f64> = (0..8).map(|_| rng.random_range(-0.5..0.5)).collect();
        reprs.insert(ItemId(i), v);
    }
    let samples = vec![
        TrainingSample {
            history: vec![ItemId(0), ItemId(1), ItemId(2)],
            candidates: vec![ItemId(3), ItemId(4), ItemId(5)],
            label_index: 0,
        },
        TrainingSample {
            history: vec![ItemId(5), ItemId(6)],
            candidates: vec![ItemId(7), ItemId(0), ItemId(2)],
            label_index: 1,
        },
    ];

    let grads = backward(&samples, &params, &reprs).unwrap();
    let h = 1e-5;

    // Tolerance: relative 1e-4 with an absolute floor of 1e-7 near zero; a
    // ratio below 1 passes.
    let tolerance = |a: f64, b: f64| (a - b).abs() / (1e-7 + 1e-4 * a.abs().max(b.abs()));

    let mut worst: f64 = 0.0;
    let flat = params.flatten();
    for i in 0..flat.len() {
        let mut plus = flat.clone();
        let mut minus = flat.clone();
        plus[i] += h;
        minus[i] -= h;
        let fp = user_loss(&samples, &UserModelParams::from_flat(&dims, &plus).unwrap(), &reprs).unwrap();
        let fm = user_loss(&samples, &UserModelParams::from_flat(&dims, &minus).unwrap(), &reprs).unwrap();
        let numeric = (fp - fm) / (2.0 * h);
        worst = worst.max(tolerance(numeric, grads.user_grad[i]));
    }
    println!(
        "user-model params checked: {} coordinates, worst error {worst:.2e} of tolerance",
        flat.len()
    );

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (&id, g) in &grads.repr_grads {
        for c in 0..dims.repr_dim {
            let mut plus = reprs.clone();
            let mut minus = reprs.clone();
            plus.get_mut(&id).unwrap()[c] += h;
            minus.get_mut(&id).unwrap()[c] -= h;
            let fp = user_loss(&samples, &params, &plus).unwrap();
            let fm = user_loss(&samples, &params, &minus).unwrap();
            let numeric = (fp - fm) / (2.0 * h);
            worst = worst.max(tolerance(numeric, g[c]));
            checked += 1;
        }
    }
    println!("item representations checked: {checked} coordinates, worst error {worst:.2e} of tolerance");
}
