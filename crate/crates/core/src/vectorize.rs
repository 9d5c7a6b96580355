//! GMM supervectors: Lie algebrized Gaussians (LAG), the mean-only reduced
//! variant (rLAG), and the uncentered KL-divergence baseline (KLVec).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gmm::DiagonalGmm;
use crate::lie::{log_utdat_scalar, reduced_tangent, to_utdat, TangentVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lag,
    Rlag,
    Klvec,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Lag, Method::Rlag, Method::Klvec];

    /// Values per component per feature dimension.
    pub fn values_per_dim(self) -> usize {
        match self {
            Method::Lag => 2,
            Method::Rlag | Method::Klvec => 1,
        }
    }

    /// Supervector length for one region.
    pub fn block_len(self, components: usize, dim: usize) -> usize {
        components * dim * self.values_per_dim()
    }

    pub fn tag(self) -> u8 {
        match self {
            Method::Lag => 0,
            Method::Rlag => 1,
            Method::Klvec => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Method> {
        match tag {
            0 => Some(Method::Lag),
            1 => Some(Method::Rlag),
            2 => Some(Method::Klvec),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Lag => "lag",
            Method::Rlag => "rlag",
            Method::Klvec => "klvec",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lag" => Ok(Method::Lag),
            "rlag" => Ok(Method::Rlag),
            "klvec" => Ok(Method::Klvec),
            other => Err(Error::invalid(format!(
                "unknown method {other:?} (expected lag, rlag or klvec)"
            ))),
        }
    }
}

/// A fixed-length supervector plus the layout needed to interpret it.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervectorBundle {
    pub method: Method,
    pub components: usize,
    pub dim: usize,
    pub regions: usize,
    pub values: Vec<f64>,
}

impl SupervectorBundle {
    pub fn new(
        method: Method,
        components: usize,
        dim: usize,
        regions: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        let expected = regions * method.block_len(components, dim);
        check_dim("supervector length", expected, values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("supervector entries must be finite"));
        }
        Ok(Self {
            method,
            components,
            dim,
            regions,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Concatenates single-region bundles (all of one method and shape).
    pub fn concat(parts: &[SupervectorBundle]) -> Result<SupervectorBundle> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("cannot concatenate zero supervectors"))?;
        let mut values = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        let mut regions = 0;
        for p in parts {
            if p.method != first.method {
                return Err(Error::invalid("cannot concatenate supervectors of different methods"));
            }
            check_dim("concatenated components", first.components, p.components)?;
            check_dim("concatenated dimension", first.dim, p.dim)?;
            values.extend_from_slice(&p.values);
            regions += p.regions;
        }
        SupervectorBundle::new(first.method, first.components, first.dim, regions, values)
    }
}

fn check_pair(ubm: &DiagonalGmm, adapted: &DiagonalGmm) -> Result<()> {
    check_dim("adapted components", ubm.components(), adapted.components())?;
    check_dim("adapted dimension", ubm.dim(), adapted.dim())
}

fn component_tangent(ubm: &DiagonalGmm, adapted: &DiagonalGmm, k: usize) -> Result<TangentVector> {
    let anchor = to_utdat(
        ubm.means().row(k).as_slice().expect("standard layout"),
        ubm.stds().row(k).as_slice().expect("standard layout"),
    )?;
    let point = to_utdat(
        adapted.means().row(k).as_slice().expect("standard layout"),
        adapted.stds().row(k).as_slice().expect("standard layout"),
    )?;
    log_utdat_scalar(&anchor, &point)
}

fn component_reduced(ubm: &DiagonalGmm, adapted: &DiagonalGmm, k: usize) -> Result<Vec<f64>> {
    let anchor = to_utdat(
        ubm.means().row(k).as_slice().expect("standard layout"),
        ubm.stds().row(k).as_slice().expect("standard layout"),
    )?;
    let point = to_utdat(
        adapted.means().row(k).as_slice().expect("standard layout"),
        adapted.stds().row(k).as_slice().expect("standard layout"),
    )?;
    reduced_tangent(&anchor, &point)
}

/// `[sqrt(w_1) m_1, ..., sqrt(w_K) m_K]` where `m_k` is the tangent of the
/// adapted component k at UBM component k, laid out as all log-scale entries
/// followed by all translation entries.
pub fn lag_vector(ubm: &DiagonalGmm, adapted: &DiagonalGmm) -> Result<SupervectorBundle> {
    check_pair(ubm, adapted)?;
    let (k, d) = (ubm.components(), ubm.dim());
    let mut values = Vec::with_capacity(2 * k * d);
    for c in 0..k {
        let w = adapted.weights()[c].sqrt();
        let t = component_tangent(ubm, adapted, c)?;
        values.extend(t.log_scale.iter().map(|v| w * v));
        values.extend(t.translation.iter().map(|v| w * v));
    }
    SupervectorBundle::new(Method::Lag, k, d, 1, values)
}

/// Reduced LAG: blocks `sqrt(w_k) (mu_k - mubar_k) / sigmabar_k`.
pub fn rlag_vector(ubm: &DiagonalGmm, adapted: &DiagonalGmm) -> Result<SupervectorBundle> {
    check_pair(ubm, adapted)?;
    let (k, d) = (ubm.components(), ubm.dim());
    let mut values = Vec::with_capacity(k * d);
    for c in 0..k {
        let w = adapted.weights()[c].sqrt();
        values.extend(component_reduced(ubm, adapted, c)?.iter().map(|v| w * v));
    }
    SupervectorBundle::new(Method::Rlag, k, d, 1, values)
}

/// KL baseline: blocks `sqrt(w_k) mu_k / sigmabar_k`, not centered at the UBM.
pub fn klvec_vector(ubm: &DiagonalGmm, adapted: &DiagonalGmm) -> Result<SupervectorBundle> {
    check_pair(ubm, adapted)?;
    let (k, d) = (ubm.components(), ubm.dim());
    let (means, base_stds) = (adapted.means(), ubm.stds());
    let mut values = Vec::with_capacity(k * d);
    for c in 0..k {
        let w = adapted.weights()[c].sqrt();
        let mu = means.row(c);
        let sb = base_stds.row(c);
        values.extend((0..d).map(|j| w * mu[j] / sb[j]));
    }
    SupervectorBundle::new(Method::Klvec, k, d, 1, values)
}

pub fn vectorize(method: Method, ubm: &DiagonalGmm, adapted: &DiagonalGmm) -> Result<SupervectorBundle> {
    match method {
        Method::Lag => lag_vector(ubm, adapted),
        Method::Rlag => rlag_vector(ubm, adapted),
        Method::Klvec => klvec_vector(ubm, adapted),
    }
}

/// Product kernel `sum_k sqrt(w_k^a w_k^b) <m_k^a, m_k^b>` evaluated
/// component by component, without forming supervectors.
pub fn gmm_product_kernel(ubm: &DiagonalGmm, a: &DiagonalGmm, b: &DiagonalGmm, method: Method) -> Result<f64> {
    check_pair(ubm, a)?;
    check_pair(ubm, b)?;
    let mut total = 0.0;
    for c in 0..ubm.components() {
        let weight = (a.weights()[c] * b.weights()[c]).sqrt();
        let inner: f64 = match method {
            Method::Lag => {
                let (ta, tb) = (component_tangent(ubm, a, c)?, component_tangent(ubm, b, c)?);
                let ls: f64 = ta.log_scale.iter().zip(&tb.log_scale).map(|(x, y)| x * y).sum();
                let tr: f64 = ta.translation.iter().zip(&tb.translation).map(|(x, y)| x * y).sum();
                ls + tr
            }
            Method::Rlag => {
                let (ra, rb) = (component_reduced(ubm, a, c)?, component_reduced(ubm, b, c)?);
                ra.iter().zip(&rb).map(|(x, y)| x * y).sum()
            }
            Method::Klvec => {
                return Err(Error::invalid("the product kernel is defined for lag and rlag only"))
            }
        };
        total += weight * inner;
    }
    Ok(total)
}
