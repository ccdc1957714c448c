//! Conditional average treatment effects with shared latent draws across arms.
use counterflow::causal_api::{estimate_cate, row_seed};
use counterflow::cfm_train::TrainConfig;
use counterflow::cli::fit_model;
use counterflow::metrics::pehe;
use counterflow::ode_engine::OdeConfig;
use counterflow::scm_data::{generate_ihdp_like, split, DgpConfig};
use counterflow::velocity_net::NetConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dgp = DgpConfig::ihdp_like(1000, 5, 0);
    let (train, test) = split(&generate_ihdp_like(&dgp)?, 0.2, 0)?;
    let cfg = TrainConfig { max_iters: 500, lr: 3e-3, ..TrainConfig::default() };
    let (model, _) = fit_model(&train, &NetConfig::new(dgp.d_x), &cfg)?;
    let ode = OdeConfig::default();

    let tau: Vec<f64> = (0..test.n()).map(|i| dgp.cate(test.x_row(i))).collect();
    let est = (0..test.n())
        .map(|i| estimate_cate(&model, test.x_row(i), 100, &ode, row_seed(0, i as u64)))
        .collect::<Result<Vec<f64>, _>>()?;
    for i in 0..5 {
        println!("unit {i}: estimated {:.3}, true {:.3}", est[i], tau[i]);
    }
    let ate = est.iter().sum::<f64>() / est.len() as f64;
    println!("ATE estimate {ate:.3}, sqrt PEHE {:.3}", pehe(&est, &tau)?);
    Ok(())
}
