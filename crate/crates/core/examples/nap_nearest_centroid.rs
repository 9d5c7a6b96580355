//! Removes a planted nuisance direction with NAP and compares nearest
//! centroid accuracy before and after.
//!
//!     cargo run --example nap_nearest_centroid

use lagkit::classify::{nap_project_all, predict, train_nap, train_nc};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn accuracy(train: &Array2<f64>, test: &Array2<f64>, labels: &[usize], classes: usize) -> lagkit::Result<f64> {
    let model = train_nc(train.view(), labels, classes)?;
    let mut hits = 0;
    for (row, &truth) in test.rows().into_iter().zip(labels) {
        hits += usize::from(predict(&model, row)? == truth);
    }
    Ok(100.0 * hits as f64 / labels.len() as f64)
}

fn main() -> lagkit::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (classes, per_class, dim) = (4, 25, 12);
    let labels: Vec<usize> = (0..classes * per_class).map(|i| i % classes).collect();
    let mut draw = |labels: &[usize]| {
        Array2::from_shape_fn((labels.len(), dim), |(i, j)| {
            let noise: f64 = StandardNormal.sample(&mut rng);
            match j {
                // class signal on the first axes, large session noise on the last
                j if j == labels[i] => 1.0 + 0.3 * noise,
                j if j == dim - 1 => 4.0 * noise,
                _ => 0.3 * noise,
            }
        })
    };
    let (train, test) = (draw(&labels), draw(&labels));
    println!("plain NC:       {:.1}%", accuracy(&train, &test, &labels, classes)?);

    let nap = train_nap(train.view(), &labels, 1)?;
    let axis = nap.nuisance_basis().row(0);
    println!("nuisance axis weight on planted direction: {:.4}", axis[dim - 1].abs());
    let (train, test) = (nap_project_all(&nap, train.view())?, nap_project_all(&nap, test.view())?);
    println!("NAP rank 1 + NC: {:.1}%", accuracy(&train, &test, &labels, classes)?);
    Ok(())
}
