use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use counterflow::causal_api::{estimate_cate, row_seed};
use counterflow::cli::{self, EvalArgs};
use counterflow::metrics::{evaluate_all, EvalConfig, MetricsReport};
use counterflow::ode_engine::OdeConfig;
use counterflow::scm_data::{load_csv, CausalDataset};
use counterflow::velocity_net::{init, FlowModel, NetConfig, VelocityNetParams};
use tempfile::TempDir;

fn counterflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_counterflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = p(dir, name);
    std::fs::write(&path, text).unwrap();
    path
}

fn generate(dir: &TempDir, name: &str, config: &str, seed: u64) -> PathBuf {
    let cfg = write(dir, &format!("{name}.cfg"), config);
    let out = p(dir, name);
    let o = counterflow(&["generate", "--config", s(&cfg), "--out", s(&out), "--seed", &seed.to_string()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn save_model(dir: &TempDir, name: &str, params: VelocityNetParams) -> PathBuf {
    let path = p(dir, name);
    FlowModel::unscaled(params).save(&path).unwrap();
    path
}

fn read_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn generate_default_schema_and_determinism() {
    let dir = TempDir::new().unwrap();
    let a = p(&dir, "a.csv");
    let b = p(&dir, "b.csv");
    assert!(counterflow(&["generate", "--out", s(&a), "--seed", "3"]).status.success());
    assert!(counterflow(&["generate", "--out", s(&b), "--seed", "3"]).status.success());
    let text = std::fs::read_to_string(&a).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let expected: Vec<String> = (0..25)
        .map(|i| format!("x{i}"))
        .chain(["a", "y", "mu0", "mu1", "ycf"].map(String::from))
        .collect();
    assert_eq!(header, expected);
    assert_eq!(text.lines().count(), 748);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(dir.path().join("a.manifest.json").exists());
}

#[test]
fn generate_explicit_size() {
    let dir = TempDir::new().unwrap();
    let out = generate(&dir, "d.csv", "n = 747\nd_x = 25\n", 1);
    assert_eq!(std::fs::read_to_string(out).unwrap().lines().count(), 748);
    let small = generate(&dir, "s.csv", "n = 12\nd_x = 3\n", 1);
    assert_eq!(load_csv(small).unwrap().d_x(), 3);
}

#[test]
fn bad_generator_config_exits_2() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "bad.cfg", "noise_sd = -1\n");
    let o = counterflow(&["generate", "--config", s(&cfg), "--out", s(&p(&dir, "x.csv"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_input_exits_3() {
    let dir = TempDir::new().unwrap();
    let o = counterflow(&["train", "--data", s(&p(&dir, "nope.csv")), "--model-out", s(&p(&dir, "m.json"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn train_one_iteration() {
    let dir = TempDir::new().unwrap();
    let data = generate(&dir, "d.csv", "n = 60\nd_x = 3\n", 0);
    let tc = write(&dir, "train.cfg", "max_iters = 1\nbatch_size = 16\n");
    let model = p(&dir, "m.json");
    let o = counterflow(&["train", "--data", s(&data), "--train-config", s(&tc), "--model-out", s(&model)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = FlowModel::load(&model).unwrap();
    assert_eq!(m.train_meta.iters_run, 1);
    assert_eq!(read_rows(&p(&dir, "m.loss.csv")).len(), 1);
    assert!(p(&dir, "m.manifest.json").exists());
}

#[test]
fn train_without_outcome_column_exits_2() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "d.csv", "x0,a\n0.1,0\n0.2,1\n");
    let o = counterflow(&["train", "--data", s(&data), "--model-out", s(&p(&dir, "m.json"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`y`"));
}

#[test]
fn diverging_training_exits_4() {
    let dir = TempDir::new().unwrap();
    let data = generate(&dir, "d.csv", "n = 40\nd_x = 2\n", 0);
    let tc = write(&dir, "train.cfg", "max_iters = 20\nbatch_size = 8\nlr = 1e300\n");
    let o = counterflow(&["train", "--data", s(&data), "--train-config", s(&tc), "--model-out", s(&p(&dir, "m.json"))]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("iteration"));
}

#[test]
fn counterfactual_of_identity_flow_is_the_outcome() {
    let dir = TempDir::new().unwrap();
    let data = generate(&dir, "d.csv", "n = 15\nd_x = 2\n", 4);
    let model = save_model(&dir, "zero.json", VelocityNetParams::zeroed(&NetConfig::new(2)).unwrap());
    let out = p(&dir, "cf.csv");
    let o = counterflow(&["predict", "--model", s(&model), "--data", s(&data), "--mode", "cf", "--out", s(&out)]);
    assert!(o.status.success());
    let ds = load_csv(&data).unwrap();
    let rows = read_rows(&out);
    assert_eq!(rows.len(), 15);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0], i.to_string());
        assert_eq!(r[1], "cf");
        assert_eq!(r[2].parse::<f64>().unwrap(), ds.y[i]);
    }
}

#[test]
fn po_single_sample_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let data = generate(&dir, "d.csv", "n = 6\nd_x = 2\n", 4);
    let model = save_model(&dir, "m.json", init(&NetConfig::new(2)).unwrap());
    let run = |name: &str| {
        let out = p(&dir, name);
        let args = ["predict", "--model", s(&model), "--data", s(&data), "--mode", "po", "--out", s(&out), "--n-samples", "1", "--seed", "9"];
        assert!(counterflow(&args).status.success());
        std::fs::read_to_string(out).unwrap()
    };
    let first = run("a.csv");
    assert_eq!(first, run("b.csv"));
    assert!(first.starts_with("row,mode,value,logp\n"));
    assert_eq!(first.lines().count(), 7);
}

#[test]
fn cate_mode_matches_library() {
    let dir = TempDir::new().unwrap();
    let data = generate(&dir, "d.csv", "n = 5\nd_x = 2\n", 2);
    let params = init(&NetConfig::new(2)).unwrap();
    let model = save_model(&dir, "m.json", params.clone());
    let out = p(&dir, "cate.csv");
    let args = ["predict", "--model", s(&model), "--data", s(&data), "--mode", "cate", "--out", s(&out), "--n-samples", "8", "--seed", "5"];
    assert!(counterflow(&args).status.success());
    let ds = load_csv(&data).unwrap();
    let fm = FlowModel::unscaled(params);
    for (i, r) in read_rows(&out).iter().enumerate() {
        let direct = estimate_cate(&fm, ds.x_row(i), 8, &OdeConfig::default(), row_seed(5, i as u64)).unwrap();
        assert_eq!(r[2].parse::<f64>().unwrap(), direct);
    }
}

#[test]
fn map_and_density_modes() {
    let dir = TempDir::new().unwrap();
    let data = generate(&dir, "d.csv", "n = 4\nd_x = 2\n", 2);
    let model = save_model(&dir, "m.json", VelocityNetParams::zeroed(&NetConfig::new(2)).unwrap());
    for mode in ["map", "density"] {
        let out = p(&dir, &format!("{mode}.csv"));
        let args = ["predict", "--model", s(&model), "--data", s(&data), "--mode", mode, "--out", s(&out), "--n-samples", "10"];
        assert!(counterflow(&args).status.success());
        let rows = read_rows(&out);
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r[1] == mode && r[2].parse::<f64>().unwrap().is_finite()));
    }
}

#[test]
fn dimension_mismatch_names_both() {
    let dir = TempDir::new().unwrap();
    let data = generate(&dir, "d.csv", "n = 4\nd_x = 3\n", 0);
    let model = save_model(&dir, "m.json", init(&NetConfig::new(2)).unwrap());
    let o = counterflow(&["predict", "--model", s(&model), "--data", s(&data), "--mode", "po", "--out", s(&p(&dir, "o.csv"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("d_x = 2") && err.contains("d_x = 3"), "{err}");
}

fn strip_truth(path: &Path, dir: &TempDir, name: &str) -> PathBuf {
    let mut ds: CausalDataset = load_csv(path).unwrap();
    ds.mu0 = None;
    ds.mu1 = None;
    ds.ycf = None;
    let out = p(dir, name);
    ds.write_csv(&out).unwrap();
    out
}

#[test]
fn eval_without_truth_marks_metrics_absent() {
    let dir = TempDir::new().unwrap();
    let data = generate(&dir, "d.csv", "n = 8\nd_x = 2\n", 1);
    let bare = strip_truth(&data, &dir, "bare.csv");
    let model = save_model(&dir, "m.json", VelocityNetParams::zeroed(&NetConfig::new(2)).unwrap());
    let out = p(&dir, "r.json");
    let o = counterflow(&["eval", "--model", s(&model), "--train", s(&bare), "--test", s(&bare), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = MetricsReport::from_json(&std::fs::read_to_string(&out).unwrap()).unwrap();
    for name in ["kl", "sqrt_pehe", "cf_rmse"] {
        assert_eq!(r.get(name).out_sample, None, "{name}");
    }
    assert!(r.get("factual_rmse").out_sample.is_some());
    assert!(p(&dir, "r.metrics.csv").exists());
}

#[test]
fn eval_is_reproducible_and_matches_library() {
    let dir = TempDir::new().unwrap();
    let train = generate(&dir, "tr.csv", "n = 10\nd_x = 2\n", 1);
    let test = generate(&dir, "te.csv", "n = 10\nd_x = 2\n", 2);
    let params = init(&NetConfig::new(2)).unwrap();
    let model = save_model(&dir, "m.json", params.clone());
    let run = |name: &str| {
        let out = p(&dir, name);
        let args = ["eval", "--model", s(&model), "--train", s(&train), "--test", s(&test), "--out", s(&out), "--seed", "7"];
        assert!(counterflow(&args).status.success());
        std::fs::read_to_string(out).unwrap()
    };
    let first = run("a.json");
    assert_eq!(first, run("b.json"));
    let direct = evaluate_all(
        &FlowModel::unscaled(params),
        &load_csv(&train).unwrap(),
        &load_csv(&test).unwrap(),
        &EvalConfig {
            seed: 7,
            ..EvalConfig::default()
        },
    )
    .unwrap();
    assert_eq!(MetricsReport::from_json(&first).unwrap(), direct);
}

#[test]
fn eval_cross_validation() {
    let dir = TempDir::new().unwrap();
    let train = generate(&dir, "tr.csv", "n = 16\nd_x = 2\n", 1);
    let test = generate(&dir, "te.csv", "n = 8\nd_x = 2\n", 2);
    let mut fm = FlowModel::unscaled(init(&NetConfig::new(2)).unwrap());
    fm.train_meta.train_config = Some("max_iters = 3\nbatch_size = 8\n".into());
    let model = p(&dir, "m.json");
    fm.save(&model).unwrap();
    let out = p(&dir, "cv.json");
    let args = cli::Command::Eval(EvalArgs {
        model,
        train,
        test,
        out: out.clone(),
        seed: 0,
        folds: Some(3),
    });
    cli::execute(&args).unwrap();
    let report: cli::CrossValReport = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report.folds, 3);
    assert_eq!(report.per_fold.len(), 3);
    assert!(report.per_fold.iter().all(|r| r.meta.n_test == 8));
    assert!(report.metrics["po_rmse"].out_sample.is_some());
    let csv = std::fs::read_to_string(p(&dir, "cv.metrics.csv")).unwrap();
    assert!(csv.starts_with("metric,in_mean,in_sd,out_mean,out_sd\n"));
}

#[test]
fn a3test_output() {
    let dir = TempDir::new().unwrap();
    let data = generate(&dir, "d.csv", "n = 30\nd_x = 2\n", 1);
    let model = save_model(&dir, "m.json", init(&NetConfig::new(2)).unwrap());
    let run = |name: &str| {
        let out = p(&dir, name);
        let args = ["a3test", "--model", s(&model), "--data", s(&data), "--out", s(&out), "--seed", "3"];
        assert!(counterflow(&args).status.success());
        std::fs::read_to_string(out).unwrap()
    };
    let text = run("a.json");
    assert_eq!(text, run("b.json"));
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(v["mmd_model"].as_f64().unwrap().is_finite());
    assert!(v["mmd_truth_baseline"].as_f64().unwrap().is_finite());
}

#[test]
fn manifest_lists_digests() {
    let dir = TempDir::new().unwrap();
    let data = generate(&dir, "d.csv", "n = 5\nd_x = 2\n", 1);
    let m: cli::RunManifest =
        serde_json::from_str(&std::fs::read_to_string(p(&dir, "d.manifest.json")).unwrap()).unwrap();
    assert_eq!(m.command, "generate");
    assert_eq!(m.seeds["seed"], 1);
    assert_eq!(m.outputs.len(), 1);
    assert_eq!(m.outputs[0].sha256, cli::sha256_file(&data).unwrap());
}
