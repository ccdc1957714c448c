//! Fit the conditional flow on simulated data and save the model.
use counterflow::cfm_train::TrainConfig;
use counterflow::cli::fit_model;
use counterflow::scm_data::{generate_ihdp_like, DgpConfig};
use counterflow::velocity_net::NetConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = generate_ihdp_like(&DgpConfig::ihdp_like(1000, 10, 0))?;
    let train_cfg = TrainConfig { max_iters: 500, lr: 3e-3, loss_log_every: 100, ..TrainConfig::default() };
    let (model, report) = fit_model(&ds, &NetConfig::new(ds.d_x()), &train_cfg)?;

    for (iter, loss) in &report.loss_history {
        println!("iter {iter:>4}  loss {loss:.4}");
    }
    println!("{} parameters, {:.2}s", model.params.parameter_count(), report.wall_time);

    let path = std::env::temp_dir().join("counterflow_model.json");
    model.save(&path)?;
    println!("saved {}", path.display());
    Ok(())
}
