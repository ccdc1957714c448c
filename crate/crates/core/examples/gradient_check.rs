//! Compare reverse-mode gradients of the training loss with central differences.
use counterflow::cfm_train::{cfm_loss, Batch};
use counterflow::numkit::ParamId;
use counterflow::scm_data::{generate_ihdp_like, standardize, DgpConfig};
use counterflow::velocity_net::{init, NetConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (ds, _) = standardize(&generate_ihdp_like(&DgpConfig::ihdp_like(64, 6, 0))?)?;
    let params = init(&NetConfig::new(6))?;
    let batch = Batch::from_rows(&ds, &(0..ds.n()).collect::<Vec<_>>());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let noise: Vec<f64> = (0..ds.n()).map(|_| rng.sample(StandardNormal)).collect();
    let ts: Vec<f64> = (0..ds.n()).map(|_| rng.random()).collect();

    let grads = cfm_loss(&params, &batch, &noise, &ts, None)?.gradients()?;
    let h = 1e-5;
    for (tensor, (name, m)) in params.named_tensors().into_iter().enumerate() {
        let k = m.len() / 2;
        let shifted = |d: f64| -> Result<f64, Box<dyn std::error::Error>> {
            let mut p = params.clone();
            p.tensors_mut()[tensor].data_mut()[k] += d;
            Ok(cfm_loss(&p, &batch, &noise, &ts, None)?.value)
        };
        let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);
        let g = grads[&ParamId(tensor)].data()[k];
        println!("{name:>16}[{k:>3}]  tape {g:+.8e}  fd {fd:+.8e}");
    }
    Ok(())
}
