//! Trains a small UBM by EM, MAP-adapts it to one set of patches and prints
//! the three supervectors of the adapted model.
//!
//!     cargo run --example adapt_and_vectorize

use lagkit::gmm::{accumulate_stats, map_adapt, train_ubm_em};
use lagkit::synth::generate_synthetic;
use lagkit::vectorize::{gmm_product_kernel, vectorize};
use lagkit::{AdaptationConfig, EmConfig, Method, SyntheticSpec};
use ndarray::{concatenate, Axis};

fn main() -> lagkit::Result<()> {
    let data = generate_synthetic(&SyntheticSpec {
        dim: 3,
        components: 2,
        items_per_class: 4,
        ..SyntheticSpec::default()
    })?;
    let pool: Vec<_> = data.items.iter().map(|it| it.patches.features()).collect();
    let pool = concatenate(Axis(0), &pool).expect("equal widths");

    let (ubm, trace) = train_ubm_em(pool.view(), 4, &EmConfig::default())?;
    println!("UBM: K = {}, D = {}, {} EM iterations", ubm.components(), ubm.dim(), trace.len());

    let item = &data.items[0];
    let stats = accumulate_stats(&ubm, item.patches.features())?;
    let (adapted, diag) = map_adapt(&ubm, &stats, &AdaptationConfig::default())?;
    println!("item {}: n_k = {:.1}", item.id, stats.counts);
    println!("alpha_k = {:.3}, gamma = {:.4}", diag.alphas, diag.gamma);

    for m in Method::ALL {
        let v = vectorize(m, &ubm, &adapted)?;
        let norm2: f64 = v.values.iter().map(|x| x * x).sum();
        print!("{:>6}: length {:>3}, |v|^2 = {norm2:.6}", m.name(), v.len());
        if m == Method::Klvec {
            println!();
        } else {
            println!(", kernel = {:.6}", gmm_product_kernel(&ubm, &adapted, &adapted, m)?);
        }
    }
    Ok(())
}
