//! Exact log-likelihood of outcomes under the flow, checked to integrate to one.
use counterflow::causal_api::log_density;
use counterflow::cfm_train::TrainConfig;
use counterflow::cli::fit_model;
use counterflow::ode_engine::OdeConfig;
use counterflow::scm_data::{generate_ihdp_like, DgpConfig};
use counterflow::velocity_net::NetConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dgp = DgpConfig::ihdp_like(1000, 5, 0);
    let ds = generate_ihdp_like(&dgp)?;
    let cfg = TrainConfig { max_iters: 500, lr: 3e-3, ..TrainConfig::default() };
    let (model, _) = fit_model(&ds, &NetConfig::new(dgp.d_x), &cfg)?;
    let ode = OdeConfig::default();

    let (x, a) = (ds.x_row(3), ds.a[3]);
    let mu = dgp.structural_mean(x, a);
    let (lo, hi, n) = (mu - 6.0, mu + 6.0, 241);
    let h = (hi - lo) / (n - 1) as f64;
    let mut mass = 0.0;
    let mut best = (f64::NEG_INFINITY, lo);
    for k in 0..n {
        let y = lo + h * k as f64;
        let lp = log_density(&model, y, x, a, &ode)?;
        mass += if k == 0 || k == n - 1 { 0.5 } else { 1.0 } * h * lp.exp();
        if lp > best.0 {
            best = (lp, y);
        }
        if k % 40 == 0 {
            println!("y {y:7.3}  log p {lp:8.4}");
        }
    }
    println!("mode {:.3} (true mean {mu:.3}), total mass {mass:.5}", best.1);
    Ok(())
}
