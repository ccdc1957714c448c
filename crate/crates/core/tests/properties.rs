use counterflow::causal_api::{abduct, predict_counterfactual};
use counterflow::cfm_train::{cfm_loss, interpolant, Batch};
use counterflow::metrics::{mmd2_unbiased, pehe, rmse, wasserstein1, KernelPoint};
use counterflow::ode_engine::{decode, encode, integrate, OdeConfig};
use counterflow::scm_data::{generate_ihdp_like, kfold_indices, split_indices, standardize, DgpConfig, Scaler};
use counterflow::velocity_net::{init, FlowModel, NetConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn sample(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, n)
}

fn brute_w1(u: &[f64], v: &[f64]) -> f64 {
    fn go(k: usize, p: &mut [usize], u: &[f64], v: &[f64], best: &mut f64) {
        if k == p.len() {
            let c: f64 = p.iter().enumerate().map(|(i, &j)| (u[i] - v[j]).abs()).sum();
            *best = best.min(c / u.len() as f64);
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            go(k + 1, p, u, v, best);
            p.swap(k, i);
        }
    }
    let mut best = f64::INFINITY;
    go(0, &mut (0..u.len()).collect::<Vec<_>>(), u, v, &mut best);
    best
}

proptest! {
    #[test]
    fn w1_is_a_metric(u in sample(1..=30), v in sample(1..=30), w in sample(1..=30)) {
        let uv = wasserstein1(&u, &v).unwrap();
        prop_assert!(uv >= 0.0);
        prop_assert!((uv - wasserstein1(&v, &u).unwrap()).abs() < 1e-9);
        prop_assert!(wasserstein1(&u, &u).unwrap() < 1e-12);
        let through = wasserstein1(&u, &w).unwrap() + wasserstein1(&w, &v).unwrap();
        prop_assert!(uv <= through + 1e-9);
    }

    #[test]
    fn w1_matches_optimal_matching(pairs in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 1..=6)) {
        let (u, v): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assert!((wasserstein1(&u, &v).unwrap() - brute_w1(&u, &v)).abs() < 1e-12);
    }

    #[test]
    fn w1_of_shift_is_the_shift(u in sample(1..=40), c in -5.0..5.0f64) {
        let v: Vec<f64> = u.iter().map(|x| x + c).collect();
        prop_assert!((wasserstein1(&u, &v).unwrap() - c.abs()).abs() < 1e-9);
    }

    #[test]
    fn pehe_is_rmse_of_effects(pairs in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 1..50)) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let r = rmse(&a, &b).unwrap();
        prop_assert!(r >= 0.0);
        prop_assert_eq!(r, pehe(&a, &b).unwrap());
    }

    #[test]
    fn split_partitions_rows(n in 2usize..500, frac in 0.05..0.95f64, seed in any::<u64>()) {
        if let Ok((train, test)) = split_indices(n, frac, seed) {
            let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(test.len(), (n as f64 * frac).round() as usize);
        }
    }

    #[test]
    fn folds_partition_rows(n in 2usize..300, k in 2usize..10, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let folds = kfold_indices(n, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn interpolant_hits_endpoints(y0 in -50.0..50.0f64, y1 in -50.0..50.0f64, t in 0.0..=1.0f64) {
        prop_assert_eq!(interpolant(y0, y1, 0.0), y0);
        prop_assert_eq!(interpolant(y0, y1, 1.0), y1);
        let p = interpolant(y0, y1, t);
        prop_assert!(p >= y0.min(y1) - 1e-12 && p <= y0.max(y1) + 1e-12);
    }

    #[test]
    fn rk4_exact_for_constant_field(y0 in -10.0..10.0f64, c in -3.0..3.0f64, steps in 1usize..80) {
        let out = integrate(|_, _| c, y0, 0.0, 1.0, steps, false).unwrap();
        prop_assert!((out.y_end - (y0 + c)).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn loss_is_nonnegative_and_finite(seed in any::<u64>(), d_x in 1usize..6) {
        let ds = generate_ihdp_like(&DgpConfig::ihdp_like(40, d_x, seed)).unwrap();
        let (ds, _) = standardize(&ds).unwrap();
        let params = init(&NetConfig { init_seed: seed, ..NetConfig::new(d_x) }).unwrap();
        let batch = Batch::from_rows(&ds, &(0..ds.n()).collect::<Vec<_>>());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise: Vec<f64> = (0..ds.n()).map(|_| rng.sample(StandardNormal)).collect();
        let ts: Vec<f64> = (0..ds.n()).map(|_| rng.random()).collect();
        let w: Vec<f64> = (0..ds.n()).map(|_| rng.random_range(0.1..5.0)).collect();
        for weights in [None, Some(w.as_slice())] {
            let l = cfm_loss(&params, &batch, &noise, &ts, weights).unwrap().value;
            prop_assert!(l.is_finite() && l >= 0.0);
        }
    }

    #[test]
    fn flow_round_trips(seed in any::<u64>(), y in -4.0..4.0f64, a in 0u8..2) {
        let d_x = 3;
        let params = init(&NetConfig { init_seed: seed, ..NetConfig::new(d_x) }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..d_x).map(|_| rng.sample(StandardNormal)).collect();
        let ode = OdeConfig::default();
        let z = encode(&params, y, &x, a, &ode).unwrap();
        prop_assert!((decode(&params, z, &x, a, &ode).unwrap() - y).abs() < 1e-6);
    }

    #[test]
    fn counterfactual_is_decode_of_abducted_latent(seed in any::<u64>(), y in -4.0..4.0f64, a in 0u8..2) {
        let d_x = 2;
        let model = FlowModel {
            params: init(&NetConfig { init_seed: seed, ..NetConfig::new(d_x) }).unwrap(),
            scaler: Scaler::identity(d_x),
            train_meta: Default::default(),
        };
        let ode = OdeConfig::default();
        let x = [0.3, -1.2];
        let z = abduct(&model, y, &x, a, &ode).unwrap();
        let cf = predict_counterfactual(&model, y, &x, a, &ode).unwrap();
        prop_assert_eq!(cf, decode(&model.params, z, &x, 1 - a, &ode).unwrap());
    }
}

fn point(rng: &mut ChaCha8Rng, d_x: usize) -> KernelPoint {
    KernelPoint {
        z: rng.sample(StandardNormal),
        x: (0..d_x).map(|_| rng.sample(StandardNormal)).collect(),
        a: rng.random_range(0..2),
    }
}

#[test]
fn mmd_unbiased_under_the_null() {
    // Same-distribution samples: the U-statistic averages to zero.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let reps: Vec<f64> = (0..100)
        .map(|_| {
            let u: Vec<KernelPoint> = (0..60).map(|_| point(&mut rng, 2)).collect();
            let v: Vec<KernelPoint> = (0..60).map(|_| point(&mut rng, 2)).collect();
            mmd2_unbiased(&u, &v).unwrap()
        })
        .collect();
    let n = reps.len() as f64;
    let mean = reps.iter().sum::<f64>() / n;
    let se = (reps.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    assert!(mean.abs() <= 3.0 * se, "mean {mean} se {se}");
}

#[test]
fn mmd_detects_a_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let u: Vec<KernelPoint> = (0..80).map(|_| point(&mut rng, 2)).collect();
    let v: Vec<KernelPoint> = (0..80)
        .map(|_| {
            let mut p = point(&mut rng, 2);
            p.z += 2.0;
            p
        })
        .collect();
    let m = mmd2_unbiased(&u, &v).unwrap();
    assert!(m > 0.01, "{m}");
}
