//! Test whether abducted latents are independent of covariates and treatment.
use counterflow::cfm_train::TrainConfig;
use counterflow::cli::fit_model;
use counterflow::metrics::mmd_a3_test;
use counterflow::ode_engine::OdeConfig;
use counterflow::scm_data::{generate_ihdp_like, split, DgpConfig};
use counterflow::velocity_net::NetConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (train, test) = split(&generate_ihdp_like(&DgpConfig::ihdp_like(1000, 5, 0))?, 0.2, 0)?;
    let ode = OdeConfig::default();
    for iters in [1, 500] {
        let cfg = TrainConfig { max_iters: iters, lr: 3e-3, ..TrainConfig::default() };
        let (model, _) = fit_model(&train, &NetConfig::new(5), &cfg)?;
        let r = mmd_a3_test(&model, &test, &ode, 0)?;
        println!(
            "after {iters:>3} iters: mmd model {:+.3e}  mmd fresh normal {:+.3e}",
            r.mmd_model, r.mmd_truth_baseline
        );
    }
    Ok(())
}
