//! Gaussians as upper triangular definite affine transformations (UTDAT) and
//! their projection into the tangent space (Lie algebra) anchored at a UBM
//! component.
//!
//! A diagonal Gaussian `N(mu, diag(sigma^2))` corresponds to the affine map
//! `x -> diag(sigma) x + mu`, written in homogeneous form as
//!
//! ```text
//! M = [ diag(sigma)  mu ]
//!     [ 0            1  ]
//! ```
//!
//! Because the scale part is diagonal every dimension is an independent 2x2
//! block, and `log(Mbar^-1 M)` has a closed form per dimension:
//!
//! ```text
//! a_d = log(sigma_d / sigmabar_d)
//! b_d = (mu_d - mubar_d) * (log sigma_d - log sigmabar_d) / (sigma_d - sigmabar_d)
//! ```
//!
//! with `b_d -> (mu_d - mubar_d) / sigmabar_d` as `sigma_d -> sigmabar_d`.
//! [`log_matrix2_oracle`] evaluates the same logarithm through the power
//! series and is used to certify the closed form.

use crate::error::{check_dim, Error, Result};

/// Relative gap `|sigma - sigmabar| / sigmabar` below which the translation
/// uses the limit form.
pub const SWITCH_EPSILON: f64 = 1e-8;

/// Diagonal UTDAT: `scale` is the diagonal of `A` (the stds), `shift` is `mu`.
#[derive(Debug, Clone, PartialEq)]
pub struct UtdatDiag {
    scale: Vec<f64>,
    shift: Vec<f64>,
}

impl UtdatDiag {
    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }
}

/// Builds the UTDAT of a diagonal Gaussian.
pub fn to_utdat(means: &[f64], stds: &[f64]) -> Result<UtdatDiag> {
    check_dim("UTDAT stds", means.len(), stds.len())?;
    if let Some(s) = stds.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(Error::invalid(format!(
            "UTDAT scale must be strictly positive and finite, got {s}"
        )));
    }
    if means.iter().any(|m| !m.is_finite()) {
        return Err(Error::invalid("UTDAT shift must be finite"));
    }
    Ok(UtdatDiag {
        scale: stds.to_vec(),
        shift: means.to_vec(),
    })
}

/// Inverse of [`to_utdat`]: returns `(means, stds)`.
pub fn from_utdat(m: &UtdatDiag) -> (Vec<f64>, Vec<f64>) {
    (m.shift.clone(), m.scale.clone())
}

/// The two informative entries of each 2x2 block of `log(Mbar^-1 M)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub log_scale: Vec<f64>,
    pub translation: Vec<f64>,
}

impl TangentVector {
    pub fn dim(&self) -> usize {
        self.log_scale.len()
    }

    pub fn is_zero(&self) -> bool {
        self.log_scale.iter().chain(&self.translation).all(|v| *v == 0.0)
    }
}

/// `log(1 + x) / x`, continuous through `x = 0`. Near zero the limit 1 is
/// refined by its Taylor terms so the switch leaves no jump.
fn log1p_ratio(x: f64) -> f64 {
    if x.abs() <= SWITCH_EPSILON {
        1.0 - x / 2.0 + x * x / 3.0
    } else {
        x.ln_1p() / x
    }
}

/// Tangent vector of `point` at `anchor`: the closed-form logarithm of
/// `anchor^-1 * point`, one `(log_scale, translation)` pair per dimension.
pub fn log_utdat_scalar(anchor: &UtdatDiag, point: &UtdatDiag) -> Result<TangentVector> {
    check_dim("tangent projection", anchor.dim(), point.dim())?;
    let d = anchor.dim();
    let mut log_scale = Vec::with_capacity(d);
    let mut translation = Vec::with_capacity(d);
    for i in 0..d {
        let (sb, s) = (anchor.scale[i], point.scale[i]);
        let delta = point.shift[i] - anchor.shift[i];
        log_scale.push(s.ln() - sb.ln());
        // (log s - log sb) / (s - sb) == log(1 + x) / (x sb) with x = (s - sb) / sb
        let x = (s - sb) / sb;
        translation.push(delta / sb * log1p_ratio(x));
    }
    Ok(TangentVector {
        log_scale,
        translation,
    })
}

/// Mean-only tangent: `(mu_d - mubar_d) / sigmabar_d`, ignoring the point's
/// scale.
pub fn reduced_tangent(anchor: &UtdatDiag, point: &UtdatDiag) -> Result<Vec<f64>> {
    check_dim("reduced tangent", anchor.dim(), point.dim())?;
    Ok(anchor
        .shift
        .iter()
        .zip(&anchor.scale)
        .zip(&point.shift)
        .map(|((mb, sb), m)| (m - mb) / sb)
        .collect())
}

/// Plain 2x2 real matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Matrix2(pub [[f64; 2]; 2]);

impl Matrix2 {
    pub const IDENTITY: Matrix2 = Matrix2([[1.0, 0.0], [0.0, 1.0]]);
    pub const ZERO: Matrix2 = Matrix2([[0.0, 0.0], [0.0, 0.0]]);

    /// 1-d UTDAT `[[sigma, mu], [0, 1]]`.
    pub fn utdat(sigma: f64, mu: f64) -> Matrix2 {
        Matrix2([[sigma, mu], [0.0, 1.0]])
    }

    pub fn mul(&self, rhs: &Matrix2) -> Matrix2 {
        let (a, b) = (&self.0, &rhs.0);
        Matrix2([
            [
                a[0][0] * b[0][0] + a[0][1] * b[1][0],
                a[0][0] * b[0][1] + a[0][1] * b[1][1],
            ],
            [
                a[1][0] * b[0][0] + a[1][1] * b[1][0],
                a[1][0] * b[0][1] + a[1][1] * b[1][1],
            ],
        ])
    }

    pub fn add(&self, rhs: &Matrix2) -> Matrix2 {
        let mut out = *self;
        for i in 0..2 {
            for j in 0..2 {
                out.0[i][j] += rhs.0[i][j];
            }
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> Matrix2 {
        let mut out = *self;
        out.0.iter_mut().flatten().for_each(|v| *v *= factor);
        out
    }

    pub fn det(&self) -> f64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn inverse(&self) -> Option<Matrix2> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let m = &self.0;
        Some(Matrix2([[m[1][1], -m[0][1]], [-m[1][0], m[0][0]]]).scaled(1.0 / det))
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

const SERIES_TERM_TOLERANCE: f64 = 1e-15;
const SERIES_MAX_TERMS: usize = 200;
/// Square roots are taken until every diagonal entry of `B` is this small.
const SERIES_RADIUS: f64 = 0.25;
const MAX_SQUARE_ROOTS: usize = 64;

/// Principal square root by the Denman-Beavers iteration.
fn sqrtm(m: &Matrix2) -> Result<Matrix2> {
    let mut y = *m;
    let mut z = Matrix2::IDENTITY;
    let mut step = f64::INFINITY;
    for _ in 0..100 {
        let yi = y.inverse().ok_or_else(|| Error::NoConvergence("singular iterate".into()))?;
        let zi = z.inverse().ok_or_else(|| Error::NoConvergence("singular iterate".into()))?;
        let y_next = y.add(&zi).scaled(0.5);
        let z_next = z.add(&yi).scaled(0.5);
        step = y_next.add(&y.scaled(-1.0)).max_abs();
        y = y_next;
        z = z_next;
        if step <= 2.0 * f64::EPSILON * y.max_abs() {
            return Ok(y);
        }
    }
    // Rounding can keep the last update bouncing at the ulp level.
    if step <= 1e-12 * y.max_abs() {
        return Ok(y);
    }
    Err(Error::NoConvergence("matrix square root".into()))
}

/// Logarithm of a 1-d UTDAT by the series `sum (-1)^(n-1) B^n / n`.
///
/// The matrix is first scaled by `lambda = sqrt(M00 * M11)` so that
/// `log M = log(lambda) I + log(M / lambda)`; if `M / lambda` is still far
/// from the identity, square roots are taken (each doubling the final log)
/// until the series radius is comfortably below one.
/// `M11` may differ from one by a few ulps, as products of inverses do.
pub fn log_matrix2_oracle(m: &Matrix2) -> Result<Matrix2> {
    let e = &m.0;
    if e.iter().flatten().any(|v| !v.is_finite())
        || e[1][0] != 0.0
        || (e[1][1] - 1.0).abs() > 8.0 * f64::EPSILON
        || !(e[0][0] > 0.0)
    {
        return Err(Error::invalid(format!(
            "matrix log oracle needs a 1-d UTDAT [[s, t], [0, 1]] with s > 0, got {e:?}"
        )));
    }
    let lambda = (e[0][0] * e[1][1]).sqrt();
    let mut a = m.scaled(1.0 / lambda);
    let mut doublings = 0;
    while (a.0[0][0] - 1.0).abs().max((a.0[1][1] - 1.0).abs()) > SERIES_RADIUS {
        if doublings == MAX_SQUARE_ROOTS {
            return Err(Error::NoConvergence("square-root reduction".into()));
        }
        a = sqrtm(&a)?;
        doublings += 1;
    }
    let b = a.add(&Matrix2::IDENTITY.scaled(-1.0));
    let mut power = b;
    let mut sum = Matrix2::ZERO;
    let mut converged = false;
    for n in 1..=SERIES_MAX_TERMS {
        let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
        let term = power.scaled(sign / n as f64);
        sum = sum.add(&term);
        if term.max_abs() < SERIES_TERM_TOLERANCE {
            converged = true;
            break;
        }
        power = power.mul(&b);
    }
    if !converged {
        return Err(Error::NoConvergence(format!(
            "log series exceeded {SERIES_MAX_TERMS} terms"
        )));
    }
    let scale = f64::powi(2.0, doublings as i32);
    Ok(sum.scaled(scale).add(&Matrix2::IDENTITY.scaled(lambda.ln())))
}
