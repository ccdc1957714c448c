//! Exact and stochastic trace estimates of the velocity field's divergence.
use counterflow::ode_engine::{divergence, DivergenceMode, OdeConfig, encode_with_logdensity};
use counterflow::velocity_net::{init, NetConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = init(&NetConfig { init_seed: 3, ..NetConfig::new(4) })?;
    let x = [0.5, -0.2, 1.1, 0.0];
    for (y, t) in [(-1.0, 0.1), (0.0, 0.5), (2.0, 0.9)] {
        let exact = divergence(&params, y, t, &x, 1, DivergenceMode::ExactFd { sigma: 1e-4 })?;
        let probes = DivergenceMode::Hutchinson { n_probes: 64, sigma: 1e-4, seed: 0 };
        let approx = divergence(&params, y, t, &x, 1, probes)?;
        println!("y {y:5.2} t {t:.1}: exact {exact:.6}  hutchinson {approx:.6}");
    }

    let exact = OdeConfig::default();
    let stochastic = OdeConfig {
        divergence: DivergenceMode::Hutchinson { n_probes: 16, sigma: 1e-4, seed: 1 },
        ..OdeConfig::default()
    };
    let (_, lp_exact) = encode_with_logdensity(&params, 0.3, &x, 1, &exact)?;
    let (_, lp_hutch) = encode_with_logdensity(&params, 0.3, &x, 1, &stochastic)?;
    println!("log p(0.3): exact {lp_exact:.6}, hutchinson {lp_hutch:.6}");
    Ok(())
}
