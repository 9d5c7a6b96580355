//! Generates the default synthetic dataset and compares LAG, rLAG and KLVec
//! over a small mixture-size sweep.
//!
//!     cargo run --release --example synthetic_benchmark -- [separation] [jitter] [ratio]

use lagkit::evaluate::{sweep_k, Dataset};
use lagkit::synth::generate_synthetic;
use lagkit::{Method, RunConfig, SyntheticSpec};

fn main() -> lagkit::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut spec = SyntheticSpec::default();
    if let Some(&v) = args.first() {
        spec.separation = v;
    }
    if let Some(&v) = args.get(1) {
        spec.item_jitter = v;
    }
    if let Some(&v) = args.get(2) {
        spec.scale_ratio = v;
    }
    println!("{spec:?}");
    let dataset = Dataset::from_synthetic(generate_synthetic(&spec)?);
    let start = std::time::Instant::now();
    let report = sweep_k(&dataset, &RunConfig::desk_scale(8), &[8, 16, 32], &Method::ALL)?;
    print!("{}", report.table());
    println!("chance = {:.1}%, {:.1?}", 100.0 / spec.classes as f64, start.elapsed());
    Ok(())
}
