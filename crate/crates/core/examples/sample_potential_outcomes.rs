//! Draw from the learned potential-outcome distributions of one unit.
use counterflow::causal_api::{map_po, sample_po};
use counterflow::cfm_train::TrainConfig;
use counterflow::cli::fit_model;
use counterflow::ode_engine::OdeConfig;
use counterflow::scm_data::{generate_ihdp_like, DgpConfig};
use counterflow::velocity_net::NetConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dgp = DgpConfig::ihdp_like(1000, 5, 0);
    let ds = generate_ihdp_like(&dgp)?;
    let cfg = TrainConfig { max_iters: 400, lr: 3e-3, ..TrainConfig::default() };
    let (model, _) = fit_model(&ds, &NetConfig::new(ds.d_x()), &cfg)?;
    let ode = OdeConfig::default();

    let x = ds.x_row(0);
    for a in 0..2u8 {
        let set = sample_po(&model, x, a, 200, &ode, 7)?;
        let v: Vec<f64> = set.values().collect();
        let sd = (v.iter().map(|y| (y - set.mean()).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
        println!(
            "a={a}: mean {:.3} sd {sd:.3} map {:.3} (true mean {:.3}, true sd {:.3})",
            set.mean(),
            map_po(&model, x, a, 200, &ode, 7)?,
            dgp.structural_mean(x, a),
            dgp.noise_sd,
        );
    }
    Ok(())
}
