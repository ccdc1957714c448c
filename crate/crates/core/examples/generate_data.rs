//! Simulate a benchmark dataset and write it as CSV.
use counterflow::scm_data::{generate_ihdp_like, split, DgpConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = DgpConfig::ihdp_like(747, 25, 0);
    let ds = generate_ihdp_like(&cfg)?;
    let treated = ds.a.iter().filter(|&&a| a == 1).count();
    let tau = ds.true_cate().expect("simulated data carries both means");
    let ate = tau.iter().sum::<f64>() / tau.len() as f64;
    println!("{} rows, {} covariates, {treated} treated, ATE {ate:.3}", ds.n(), ds.d_x());

    let (train, test) = split(&ds, 0.1, 0)?;
    println!("split: {} train / {} test", train.n(), test.n());

    let path = std::env::temp_dir().join("counterflow_ihdp_like.csv");
    ds.write_csv(&path)?;
    println!("header: {}", ds.header().join(","));
    println!("wrote {}", path.display());
    Ok(())
}
