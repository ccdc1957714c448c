//! K-fold retraining with mean and spread of every metric.
use counterflow::cfm_train::TrainConfig;
use counterflow::cli::cross_validate;
use counterflow::metrics::EvalConfig;
use counterflow::scm_data::{generate_ihdp_like, DgpConfig};
use counterflow::velocity_net::NetConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pool = generate_ihdp_like(&DgpConfig::ihdp_like(400, 4, 0))?;
    let cfg = TrainConfig { max_iters: 300, lr: 3e-3, ..TrainConfig::default() };
    let eval = EvalConfig { n_mc: 50, max_rows: Some(40), kl_rows: 0, ..EvalConfig::default() };
    let report = cross_validate(&pool, &NetConfig::new(4), &cfg, 3, &eval)?;
    print!("{}", report.to_csv());
    Ok(())
}
