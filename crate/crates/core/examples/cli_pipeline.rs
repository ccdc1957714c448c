//! generate → train → predict → eval through the command-line entry point.
use counterflow::cli;

fn run(args: &[&str]) {
    let code = cli::run(std::iter::once("counterflow").chain(args.iter().copied()));
    assert_eq!(code, 0, "counterflow {args:?} exited with {code}");
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("counterflow_pipeline");
    std::fs::create_dir_all(&dir)?;
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    std::fs::write(p("data.cfg"), "n = 300\nd_x = 5\n")?;
    std::fs::write(p("train.cfg"), "max_iters = 300\nlr = 0.003\n")?;

    run(&["generate", "--config", &p("data.cfg"), "--out", &p("train.csv"), "--seed", "1"]);
    run(&["generate", "--config", &p("data.cfg"), "--out", &p("test.csv"), "--seed", "2"]);
    run(&["train", "--data", &p("train.csv"), "--train-config", &p("train.cfg"), "--model-out", &p("model.json")]);
    run(&["predict", "--model", &p("model.json"), "--data", &p("test.csv"), "--mode", "cate", "--out", &p("cate.csv")]);
    run(&["eval", "--model", &p("model.json"), "--train", &p("train.csv"), "--test", &p("test.csv"), "--out", &p("report.json")]);
    run(&["a3test", "--model", &p("model.json"), "--data", &p("test.csv"), "--out", &p("a3.json")]);

    println!("{}", std::fs::read_to_string(p("cate.csv"))?.lines().take(4).collect::<Vec<_>>().join("\n"));
    print!("{}", std::fs::read_to_string(p("report.metrics.csv"))?);
    Ok(())
}
