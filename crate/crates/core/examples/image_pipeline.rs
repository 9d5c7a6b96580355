//! Runs one grayscale image through dense extraction, PCA, coordinate
//! appending, a small UBM and the spatial pyramid.
//!
//!     cargo run --release --example image_pipeline -- [image.png]

use lagkit::gmm::train_ubm_em;
use lagkit::pipeline::{
    append_coords, apply_pca, extract_patches, fit_pca, image_to_supervector, load_image, RawPixel,
};
use lagkit::{AdaptationConfig, EmConfig, Method, PyramidLayout, RunConfig};
use ndarray::Array3;

fn main() -> lagkit::Result<()> {
    let image = match std::env::args().nth(1) {
        Some(path) => load_image(path.as_ref())?,
        None => Array3::from_shape_fn((120, 160, 1), |(y, x, _)| {
            0.5 + 0.4 * ((x as f64 / 5.0).sin() * (y as f64 / 9.0).cos())
        }),
    };
    let cfg = RunConfig::default();
    let raw = extract_patches(image.view(), &cfg.descriptor.extract_config(), &RawPixel::default())?;
    println!("{} raw patches of dimension {}", raw.len(), raw.dim());

    let pca = fit_pca(raw.features(), 20)?;
    let patches = append_coords(&apply_pca(&pca, &raw)?);
    println!("after PCA and coordinates: dimension {}", patches.dim());

    let em = EmConfig { max_iterations: 20, ..EmConfig::default() };
    let (ubm, trace) = train_ubm_em(patches.features(), 8, &em)?;
    println!("UBM K = 8, final log-likelihood {:.2}", trace.last().unwrap());

    let layout = PyramidLayout::default();
    for m in Method::ALL {
        let v = image_to_supervector(&patches, &ubm, &layout, &AdaptationConfig::default(), m)?;
        println!("{:>6}: {} regions, length {}", m.name(), v.regions, v.len());
    }
    Ok(())
}
