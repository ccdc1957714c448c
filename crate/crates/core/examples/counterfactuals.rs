//! Unit-level counterfactuals by abduction and transport through the latent.
use counterflow::causal_api::{abduct, predict_counterfactual};
use counterflow::cfm_train::TrainConfig;
use counterflow::cli::fit_model;
use counterflow::metrics::rmse;
use counterflow::ode_engine::OdeConfig;
use counterflow::scm_data::{generate_ihdp_like, split, DgpConfig};
use counterflow::velocity_net::NetConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = generate_ihdp_like(&DgpConfig::ihdp_like(1000, 5, 0))?;
    let (train, test) = split(&ds, 0.2, 0)?;
    let cfg = TrainConfig { max_iters: 500, lr: 3e-3, ..TrainConfig::default() };
    let (model, _) = fit_model(&train, &NetConfig::new(ds.d_x()), &cfg)?;
    let ode = OdeConfig::default();
    let ycf = test.ycf.clone().expect("simulated data has counterfactuals");

    for i in 0..5 {
        let (y, a) = (test.y[i], test.a[i]);
        let z = abduct(&model, y, test.x_row(i), a, &ode)?;
        let cf = predict_counterfactual(&model, y, test.x_row(i), a, &ode)?;
        println!("a={a} y={y:7.3}  z={z:6.3}  cf={cf:7.3}  true cf={:7.3}", ycf[i]);
    }
    let cf: Result<Vec<f64>, _> = (0..test.n())
        .map(|i| predict_counterfactual(&model, test.y[i], test.x_row(i), test.a[i], &ode))
        .collect();
    println!("test rmse {:.3}, copying y gives {:.3}", rmse(&cf?, &ycf)?, rmse(&test.y, &ycf)?);
    Ok(())
}
