//! Writes each binary container to a temporary directory, reads it back and
//! prints the `inspect` summary.
//!
//!     cargo run --example containers

use lagkit::io;
use lagkit::synth::generate_synthetic;
use lagkit::vectorize::vectorize;
use lagkit::{Method, SyntheticSpec};

fn main() -> lagkit::Result<()> {
    let dir = tempfile::tempdir()?;
    let data = generate_synthetic(&SyntheticSpec { items_per_class: 2, ..SyntheticSpec::default() })?;
    let model = &data.class_models[0];
    let patches = &data.items[0].patches;
    let vector = vectorize(Method::Lag, model, &data.class_models[1])?;

    let gmm_path = dir.path().join("model.lagm");
    let patch_path = dir.path().join("item.lagp");
    let vec_path = dir.path().join("item.lagv");
    io::save_gmm(&gmm_path, model, None)?;
    io::save_patches(&patch_path, patches)?;
    io::save_supervector(&vec_path, &vector)?;

    assert_eq!(&io::load_gmm(&gmm_path)?, model);
    assert_eq!(io::load_supervector(&vec_path)?.values.len(), vector.values.len());
    assert_eq!(io::load_patches(&patch_path)?.len(), patches.len());

    for path in [&gmm_path, &patch_path, &vec_path] {
        println!("== {} ({} bytes)", path.file_name().unwrap().to_string_lossy(), std::fs::metadata(path)?.len());
        println!("{}", io::describe_file(path)?);
    }
    Ok(())
}
