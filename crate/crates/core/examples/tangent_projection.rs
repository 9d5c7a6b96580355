//! Maps Gaussians into the tangent space at an anchor and checks the
//! closed form against the matrix-log series.
//!
//!     cargo run --example tangent_projection

use lagkit::lie::{log_matrix2_oracle, log_utdat_scalar, reduced_tangent, to_utdat, Matrix2};

fn main() -> lagkit::Result<()> {
    let anchor = to_utdat(&[0.0], &[1.0])?;
    println!("{:>8} {:>8} {:>12} {:>12} {:>12} {:>10}", "mu", "sigma", "log_scale", "translation", "reduced", "oracle err");
    for (mu, sigma) in [(0.0, 1.0), (1.0, 1.0), (1.0, 2.0), (-2.0, 0.5), (3.0, 1.0 + 1e-9)] {
        let point = to_utdat(&[mu], &[sigma])?;
        let t = log_utdat_scalar(&anchor, &point)?;
        let r = reduced_tangent(&anchor, &point)?;
        // the anchor is the identity, so the relative transform is the point itself
        let log = log_matrix2_oracle(&Matrix2::utdat(sigma, mu))?;
        let err = (t.log_scale[0] - log.0[0][0]).abs().max((t.translation[0] - log.0[0][1]).abs());
        println!(
            "{mu:>8.3} {sigma:>8.3} {:>12.6} {:>12.6} {:>12.6} {err:>10.1e}",
            t.log_scale[0], t.translation[0], r[0]
        );
    }
    Ok(())
}
