//! `key = value` parsers for generator and network configs.

use crate::kvfile::{KvError, KvMap};
use crate::scm_data::{DgpConfig, Propensity};
use crate::velocity_net::{NetConfig, TimeEncoding, N_RES_BLOCKS};

pub const DEFAULT_N: usize = 747;
pub const DEFAULT_D_X: usize = 25;

const DGP_KEYS: [&str; 9] = [
    "n",
    "d_x",
    "beta",
    "omega",
    "w_shift",
    "noise_sd",
    "propensity",
    "propensity_coef",
    "seed",
];

fn bad(key: &str, value: impl Into<String>) -> KvError {
    KvError::Value {
        key: key.into(),
        value: value.into(),
    }
}

/// Starts from [`DgpConfig::ihdp_like`] and applies overrides. When `beta`
/// or `w_shift` change and `omega` is not given, ω is recomputed so the
/// average treatment effect stays at 4.
pub fn dgp_from_kv(text: &str) -> Result<DgpConfig, KvError> {
    let kv = KvMap::parse(text)?;
    kv.restrict(&DGP_KEYS)?;
    let n = kv.get_or("n", DEFAULT_N)?;
    let d_x = kv.get_or("d_x", DEFAULT_D_X)?;
    let mut cfg = DgpConfig::ihdp_like(n, d_x, kv.get_or("seed", 0)?);
    let broadcast = |key: &str, v: Vec<f64>| -> Result<Vec<f64>, KvError> {
        match v.len() {
            1 => Ok(vec![v[0]; d_x]),
            l if l == d_x => Ok(v),
            l => Err(bad(key, format!("{l} values for d_x = {d_x}"))),
        }
    };
    let mut reshaped = false;
    if let Some(beta) = kv.get_list("beta")? {
        cfg.beta = broadcast("beta", beta)?;
        reshaped = true;
    }
    if let Some(w) = kv.get_list("w_shift")? {
        cfg.w_shift = broadcast("w_shift", w)?;
        reshaped = true;
    }
    match kv.get::<f64>("omega")? {
        Some(omega) => cfg.omega = omega,
        None if reshaped => cfg.omega = -4.0 - cfg.mean_control_outcome(),
        None => {}
    }
    cfg.noise_sd = kv.get_or("noise_sd", cfg.noise_sd)?;
    match kv.raw("propensity") {
        None | Some("logistic") => {
            if let Some(c) = kv.get_list("propensity_coef")? {
                cfg.propensity = Propensity::Logistic(broadcast("propensity_coef", c)?);
            }
        }
        Some("balanced") => cfg.propensity = Propensity::Balanced,
        Some(other) => return Err(bad("propensity", other)),
    }
    Ok(cfg)
}

const NET_KEYS: [&str; 6] = [
    "d_x",
    "hidden_dim",
    "n_res_blocks",
    "time_encoding",
    "frequencies",
    "init_seed",
];

/// Network config for data with `d_x` covariates. A `d_x` key in the file
/// must agree with the data.
pub fn net_from_kv(text: &str, d_x: usize) -> Result<NetConfig, KvError> {
    let kv = KvMap::parse(text)?;
    kv.restrict(&NET_KEYS)?;
    if let Some(declared) = kv.get::<usize>("d_x")? {
        if declared != d_x {
            return Err(bad("d_x", format!("{declared} (data has d_x = {d_x})")));
        }
    }
    let time_encoding = match kv.raw("time_encoding") {
        None | Some("scalar") | Some("scalar-append") => TimeEncoding::ScalarAppend,
        Some("sinusoidal") => TimeEncoding::Sinusoidal {
            frequencies: kv.get_or("frequencies", 4)?,
        },
        Some(other) => return Err(bad("time_encoding", other)),
    };
    Ok(NetConfig {
        d_x,
        hidden_dim: kv.get_or("hidden_dim", d_x + 1)?,
        n_res_blocks: kv.get_or("n_res_blocks", N_RES_BLOCKS)?,
        time_encoding,
        init_seed: kv.get_or("init_seed", 0)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_dgp_file_is_the_default_benchmark() {
        let cfg = dgp_from_kv("").unwrap();
        assert_eq!(cfg, DgpConfig::ihdp_like(DEFAULT_N, DEFAULT_D_X, 0));
    }

    #[test]
    fn dgp_overrides() {
        let cfg = dgp_from_kv("n = 10\nd_x = 3\nbeta = 0.1\npropensity = balanced\nnoise_sd = 0.5").unwrap();
        assert_eq!(cfg.beta, vec![0.1; 3]);
        assert_eq!(cfg.propensity, Propensity::Balanced);
        assert!((cfg.omega + 4.0 + cfg.mean_control_outcome()).abs() < 1e-12);
        let fixed = dgp_from_kv("d_x = 2\nbeta = 1, 2\nomega = 7").unwrap();
        assert_eq!((fixed.beta, fixed.omega), (vec![1.0, 2.0], 7.0));
        assert!(dgp_from_kv("d_x = 3\nbeta = 1, 2").is_err());
        assert!(dgp_from_kv("propensity = random").is_err());
        assert!(dgp_from_kv("colour = red").is_err());
    }

    #[test]
    fn net_config_parsing() {
        assert_eq!(net_from_kv("", 4).unwrap(), NetConfig::new(4));
        let cfg = net_from_kv("hidden_dim = 16\ntime_encoding = sinusoidal\nfrequencies = 2", 4).unwrap();
        assert_eq!(cfg.hidden_dim, 16);
        assert_eq!(cfg.time_encoding, TimeEncoding::Sinusoidal { frequencies: 2 });
        assert!(net_from_kv("d_x = 5", 4).is_err());
    }
}
