//! Benchmark metrics on in-sample and held-out rows.
use counterflow::cfm_train::TrainConfig;
use counterflow::cli::fit_model;
use counterflow::metrics::{evaluate_all, EvalConfig};
use counterflow::scm_data::{generate_ihdp_like, split, DgpConfig};
use counterflow::velocity_net::NetConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (train, test) = split(&generate_ihdp_like(&DgpConfig::ihdp_like(800, 5, 0))?, 0.1, 0)?;
    let cfg = TrainConfig { max_iters: 500, lr: 3e-3, ..TrainConfig::default() };
    let (model, _) = fit_model(&train, &NetConfig::new(5), &cfg)?;

    let eval = EvalConfig { max_rows: Some(60), kl_rows: 20, ..EvalConfig::default() };
    let report = evaluate_all(&model, &train, &test, &eval)?;
    print!("{}", report.to_csv());
    Ok(())
}
