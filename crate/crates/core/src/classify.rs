//! Nuisance attribute projection (NAP), nearest-centroid classification and
//! the accuracy/confusion report of the evaluation protocol.
//!
//! NAP removes the leading eigen-directions of the within-class scatter
//! `S_w = sum_i (x_i - mean_{class(i)}) (x_i - mean_{class(i)})^T`. Directions
//! are ranked by within-class eigenvalue alone. Supervectors are usually far
//! longer than the number of training items, so the eigenproblem is solved on
//! the `N x N` Gram matrix of the class-centered vectors when `dim > N`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::pipeline::sorted_eigen;
use crate::vectorize::Method;

/// Eigenvalues below this fraction of the largest are treated as zero.
const NULL_EIGENVALUE_RATIO: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct NapModel {
    mean: Array1<f64>,
    /// `c x dim`, orthonormal rows spanning the removed directions.
    nuisance: Array2<f64>,
}

impl NapModel {
    pub fn new(mean: Array1<f64>, nuisance: Array2<f64>) -> Result<Self> {
        check_dim("NAP basis columns", mean.len(), nuisance.ncols())?;
        if nuisance.nrows() >= mean.len() && nuisance.nrows() > 0 {
            return Err(Error::invalid("NAP rank must be smaller than the dimension"));
        }
        let gram = nuisance.dot(&nuisance.t());
        for ((i, j), v) in gram.indexed_iter() {
            let target = if i == j { 1.0 } else { 0.0 };
            if (v - target).abs() > 1e-8 {
                return Err(Error::invalid("NAP basis rows are not orthonormal"));
            }
        }
        Ok(Self { mean, nuisance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Number of removed directions (may be below the requested rank when the
    /// within-class scatter has fewer nonzero eigenvalues).
    pub fn rank(&self) -> usize {
        self.nuisance.nrows()
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn nuisance_basis(&self) -> &Array2<f64> {
        &self.nuisance
    }
}

fn orthonormalize(rows: &mut Array2<f64>) -> usize {
    let mut kept = 0;
    for i in 0..rows.nrows() {
        let mut v = rows.row(i).to_owned();
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for j in 0..kept {
                let u = rows.row(j);
                let proj = u.dot(&v);
                v.scaled_add(-proj, &u);
            }
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-12 {
            rows.row_mut(kept).assign(&(v / norm));
            kept += 1;
        }
    }
    kept
}

/// Learns a rank-`rank` nuisance projection from labelled training vectors.
pub fn train_nap(vectors: ArrayView2<'_, f64>, labels: &[usize], rank: usize) -> Result<NapModel> {
    let (n, dim) = vectors.dim();
    check_dim("NAP labels", n, labels.len())?;
    if n < 2 {
        return Err(Error::invalid("NAP needs at least two training vectors"));
    }
    if rank >= dim {
        return Err(Error::invalid(format!(
            "NAP rank {rank} must be smaller than the dimension {dim}"
        )));
    }
    let mean = vectors.mean_axis(Axis(0)).expect("nonempty");
    if rank == 0 {
        return NapModel::new(mean, Array2::zeros((0, dim)));
    }

    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut sums = Array2::<f64>::zeros((classes, dim));
    let mut counts = vec![0usize; classes];
    for (row, &l) in vectors.rows().into_iter().zip(labels) {
        counts[l] += 1;
        let mut acc = sums.row_mut(l);
        acc += &row;
    }
    if let Some(c) = counts.iter().position(|&c| c == 1) {
        return Err(Error::invalid(format!(
            "class {c} has a single training vector; NAP with rank > 0 needs at least two per class"
        )));
    }
    let mut centered = vectors.to_owned();
    for (mut row, &l) in centered.rows_mut().into_iter().zip(labels) {
        let class_mean = &sums.row(l) / counts[l] as f64;
        row -= &class_mean;
    }

    let (values, mut directions) = if dim <= n {
        let scatter = centered.t().dot(&centered);
        sorted_eigen(&scatter)
    } else {
        let gram = centered.dot(&centered.t());
        let (values, u) = sorted_eigen(&gram);
        // v = Xc^T u / sqrt(lambda)
        let mut dirs = Array2::zeros((values.len(), dim));
        for (i, &lambda) in values.iter().enumerate() {
            if lambda > 0.0 {
                let v = centered.t().dot(&u.row(i)) / lambda.sqrt();
                dirs.row_mut(i).assign(&v);
            }
        }
        (values, dirs)
    };
    let top = values.first().copied().unwrap_or(0.0);
    let usable = values
        .iter()
        .take(rank)
        .take_while(|&&v| top > 0.0 && v > NULL_EIGENVALUE_RATIO * top)
        .count();
    let mut basis = directions.slice_mut(s![..usable, ..]).to_owned();
    let kept = orthonormalize(&mut basis);
    let basis = basis.slice(s![..kept, ..]).to_owned();
    NapModel::new(mean, basis)
}

/// `(I - V^T V)(v - mean)`.
pub fn nap_project(model: &NapModel, v: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    check_dim("NAP input", model.dim(), v.len())?;
    let mut w = &v - &model.mean;
    let coeffs = model.nuisance.dot(&w);
    for (row, c) in model.nuisance.rows().into_iter().zip(coeffs.iter()) {
        w.scaled_add(-c, &row);
    }
    Ok(w)
}

pub fn nap_project_all(model: &NapModel, vectors: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_dim("NAP input", model.dim(), vectors.ncols())?;
    let mut out = Array2::zeros(vectors.dim());
    for (i, row) in vectors.rows().into_iter().enumerate() {
        out.row_mut(i).assign(&nap_project(model, row)?);
    }
    Ok(out)
}

/// Scales to unit Euclidean norm; zero vectors are returned unchanged.
pub fn l2_normalize(v: ArrayView1<'_, f64>) -> Array1<f64> {
    let norm = v.dot(&v).sqrt();
    if norm > 0.0 {
        &v / norm
    } else {
        v.to_owned()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentroidModel {
    /// Row `c` is the centroid of class `c`.
    pub centroids: Array2<f64>,
}

impl CentroidModel {
    pub fn classes(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.ncols()
    }
}

/// Class means of the L2-normalized training vectors.
pub fn train_nc(vectors: ArrayView2<'_, f64>, labels: &[usize], classes: usize) -> Result<CentroidModel> {
    check_dim("centroid labels", vectors.nrows(), labels.len())?;
    let dim = vectors.ncols();
    let mut sums = Array2::<f64>::zeros((classes, dim));
    let mut counts = vec![0usize; classes];
    for (row, &l) in vectors.rows().into_iter().zip(labels) {
        if l >= classes {
            return Err(Error::invalid(format!("label {l} outside 0..{classes}")));
        }
        counts[l] += 1;
        let mut acc = sums.row_mut(l);
        acc += &l2_normalize(row);
    }
    if let Some(c) = counts.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!("class {c} has no training vectors")));
    }
    for (mut row, &c) in sums.rows_mut().into_iter().zip(&counts) {
        row /= c as f64;
    }
    Ok(CentroidModel { centroids: sums })
}

/// Index of the nearest centroid under Euclidean distance; ties go to the
/// lowest index. No normalization is applied.
pub fn nearest_centroid(centroids: ArrayView2<'_, f64>, query: ArrayView1<'_, f64>) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (c, row) in centroids.rows().into_iter().enumerate() {
        let dist: f64 = row.iter().zip(query.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        if dist < best.0 {
            best = (dist, c);
        }
    }
    best.1
}

/// Normalizes the query and returns the label of its nearest centroid.
pub fn predict(model: &CentroidModel, v: ArrayView1<'_, f64>) -> Result<usize> {
    check_dim("query", model.dim(), v.len())?;
    Ok(nearest_centroid(model.centroids.view(), l2_normalize(v).view()))
}

/// Rounds to 10 decimal places so report text is stable.
pub(crate) fn fixed(x: f64) -> f64 {
    (x * 1e10).round() / 1e10
}

/// Outcome of a repeated random-split evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub components: usize,
    pub classes: Vec<String>,
    pub seed: u64,
    pub train_per_class: usize,
    /// Per-trial accuracy in percent.
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation over trials.
    pub std: f64,
    /// Pooled over trials; row = true class, column = predicted, percent.
    pub confusion: Vec<Vec<f64>>,
}

impl EvalReport {
    /// Builds a report from per-trial `(truth, predicted)` label lists.
    pub fn from_trials(
        method: Method,
        components: usize,
        classes: Vec<String>,
        seed: u64,
        train_per_class: usize,
        trials: &[(Vec<usize>, Vec<usize>)],
    ) -> Result<Self> {
        let n = classes.len();
        let mut counts = vec![vec![0usize; n]; n];
        let mut accuracies = Vec::with_capacity(trials.len());
        for (truth, pred) in trials {
            check_dim("trial predictions", truth.len(), pred.len())?;
            let mut correct = 0;
            for (&t, &p) in truth.iter().zip(pred) {
                counts[t][p] += 1;
                correct += usize::from(t == p);
            }
            let acc = if truth.is_empty() {
                0.0
            } else {
                100.0 * correct as f64 / truth.len() as f64
            };
            accuracies.push(acc);
        }
        let (mean, std) = mean_std(&accuracies);
        let confusion = counts
            .iter()
            .map(|row| {
                let total: usize = row.iter().sum();
                row.iter()
                    .map(|&c| if total == 0 { 0.0 } else { fixed(100.0 * c as f64 / total as f64) })
                    .collect()
            })
            .collect();
        Ok(Self {
            method,
            components,
            classes,
            seed,
            train_per_class,
            accuracies: accuracies.into_iter().map(fixed).collect(),
            mean: fixed(mean),
            std: fixed(std),
            confusion,
        })
    }

    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for c in &self.classes {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (name, row) in self.classes.iter().zip(&self.confusion) {
            out.push_str(name);
            for v in row {
                out.push_str(&format!(",{v:.4}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn rank_zero_is_centering_only() {
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 0.0]];
        let nap = train_nap(x.view(), &[0, 0, 1], 0).unwrap();
        assert_eq!(nap.rank(), 0);
        let p = nap_project(&nap, array![3.0, 2.0].view()).unwrap();
        assert_eq!(p, array![0.0, 0.0]);
    }

    #[test]
    fn rank_must_be_below_dimension() {
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 0.0], [1.0, 1.0]];
        assert!(train_nap(x.view(), &[0, 0, 1, 1], 2).is_err());
    }

    #[test]
    fn singleton_class_is_rejected() {
        let x = array![[1.0, 2.0, 0.0], [3.0, 4.0, 1.0], [5.0, 0.0, 2.0]];
        assert!(train_nap(x.view(), &[0, 0, 1], 1).is_err());
        assert!(train_nap(x.view(), &[0, 0, 1], 0).is_ok());
    }

    #[test]
    fn duplicated_points_leave_separation_intact() {
        let x = array![[0.0, 0.0, 1.0], [0.0, 0.0, 1.0], [4.0, 1.0, 0.0], [4.0, 1.0, 0.0]];
        let nap = train_nap(x.view(), &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(nap.rank(), 0);
        let a = nap_project(&nap, x.row(0)).unwrap();
        let b = nap_project(&nap, x.row(2)).unwrap();
        let d = &a - &b;
        assert_abs_diff_eq!(d.dot(&d), 18.0, epsilon = 1e-12);
    }

    #[test]
    fn nearest_centroid_geometry_and_ties() {
        let x = array![[0.0, 0.0], [10.0, 10.0]];
        let model = train_nc(x.view(), &[0, 1], 2).unwrap();
        assert_eq!(predict(&model, array![1.0, 1.0].view()).unwrap(), 1);
        let c = array![[1.0, 0.0], [-1.0, 0.0]];
        assert_eq!(nearest_centroid(c.view(), array![0.0, 3.0].view()), 0);
    }

    #[test]
    fn empty_class_is_an_error() {
        let x = array![[1.0, 0.0], [0.0, 1.0]];
        assert!(train_nc(x.view(), &[0, 0], 2).is_err());
    }

    #[test]
    fn report_statistics() {
        let trials = vec![
            (vec![0, 0, 1, 1], vec![0, 0, 1, 1]),
            (vec![0, 0, 1, 1], vec![0, 1, 1, 1]),
        ];
        let r = EvalReport::from_trials(Method::Lag, 4, vec!["a".into(), "b".into()], 0, 2, &trials).unwrap();
        assert_eq!(r.accuracies, vec![100.0, 75.0]);
        assert_eq!(r.mean, 87.5);
        assert_abs_diff_eq!(r.std, 17.677_669_529_7, epsilon = 1e-9);
        assert_eq!(r.confusion, vec![vec![75.0, 25.0], vec![0.0, 100.0]]);
        assert!(r.confusion_csv().starts_with("true\\predicted,a,b\na,75.0000,25.0000\n"));
    }
}
