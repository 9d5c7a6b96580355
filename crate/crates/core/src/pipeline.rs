//! From images to multi-region supervectors: dense patch sampling, a
//! pluggable patch descriptor, PCA, appended patch-center coordinates, the
//! 1x1 + 2x2 spatial pyramid and per-region MAP adaptation.

use std::path::Path;

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Luma};
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gmm::{accumulate_stats, map_adapt, AdaptationConfig, DiagonalGmm};
use crate::vectorize::{vectorize, Method, SupervectorBundle};

/// Local descriptors and normalized `(row, col)` patch-center coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    features: Array2<f64>,
    coords: Array2<f64>,
}

impl PatchSet {
    pub fn new(features: Array2<f64>, coords: Array2<f64>) -> Result<Self> {
        check_dim("patch coordinates (rows)", features.nrows(), coords.nrows())?;
        check_dim("patch coordinates (cols)", 2, coords.ncols())?;
        if coords.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::invalid("patch coordinates must lie in [0, 1]"));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("patch features must be finite"));
        }
        Ok(Self { features, coords })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            features: Array2::zeros((0, dim)),
            coords: Array2::zeros((0, 2)),
        }
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn coords(&self) -> ArrayView2<'_, f64> {
        self.coords.view()
    }

    pub fn select(&self, rows: &[usize]) -> PatchSet {
        PatchSet {
            features: self.features.select(Axis(0), rows),
            coords: self.coords.select(Axis(0), rows),
        }
    }

    pub fn into_parts(self) -> (Array2<f64>, Array2<f64>) {
        (self.features, self.coords)
    }
}

/// Maps a grayscale window to a fixed-length descriptor.
pub trait DescriptorPlugin: Send + Sync {
    fn name(&self) -> &str;
    fn output_len(&self) -> usize;
    fn describe(&self, window: ArrayView2<'_, f64>, out: &mut [f64]);
}

/// The default descriptor: the window resampled to a fixed `grid x grid`
/// raster, then normalized to zero mean and unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawPixel {
    pub grid: usize,
}

impl Default for RawPixel {
    fn default() -> Self {
        Self { grid: 16 }
    }
}

const CONTRAST_GUARD: f64 = 1e-8;

impl DescriptorPlugin for RawPixel {
    fn name(&self) -> &str {
        "raw-pixel"
    }

    fn output_len(&self) -> usize {
        self.grid * self.grid
    }

    fn describe(&self, window: ArrayView2<'_, f64>, out: &mut [f64]) {
        let (h, w) = window.dim();
        let g = self.grid;
        for i in 0..g {
            // sample at output pixel centers
            let y = ((i as f64 + 0.5) * h as f64 / g as f64 - 0.5).clamp(0.0, (h - 1) as f64);
            let (y0, fy) = (y.floor() as usize, y - y.floor());
            let y1 = (y0 + 1).min(h - 1);
            for j in 0..g {
                let x = ((j as f64 + 0.5) * w as f64 / g as f64 - 0.5).clamp(0.0, (w - 1) as f64);
                let (x0, fx) = (x.floor() as usize, x - x.floor());
                let x1 = (x0 + 1).min(w - 1);
                let top = window[[y0, x0]] * (1.0 - fx) + window[[y0, x1]] * fx;
                let bottom = window[[y1, x0]] * (1.0 - fx) + window[[y1, x1]] * fx;
                out[i * g + j] = top * (1.0 - fy) + bottom * fy;
            }
        }
        let n = out.len() as f64;
        let mean = out.iter().sum::<f64>() / n;
        let var = out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt().max(CONTRAST_GUARD);
        out.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractConfig {
    pub patch_sizes: Vec<usize>,
    pub step: usize,
    /// Images with a longer side are downscaled to this size first.
    pub max_side: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            patch_sizes: vec![16, 24],
            step: 4,
            max_side: 300,
        }
    }
}

impl ExtractConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_sizes.is_empty() || self.patch_sizes.contains(&0) {
            return Err(Error::invalid("patch_sizes must be a nonempty list of positive sizes"));
        }
        if self.step == 0 {
            return Err(Error::invalid("step must be positive"));
        }
        if self.max_side == 0 {
            return Err(Error::invalid("max_side must be positive"));
        }
        Ok(())
    }
}

/// Collapses an `H x W x C` array to grayscale (ITU-R 601 luma for 3 or 4
/// channels, the single channel otherwise; alpha is ignored).
pub fn to_gray(image: ArrayView3<'_, f64>) -> Result<Array2<f64>> {
    let (h, w, c) = image.dim();
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::invalid("image must be nonempty"));
    }
    Ok(match c {
        1 | 2 => image.slice(s![.., .., 0]).to_owned(),
        _ => {
            let (r, g, b) = (
                image.slice(s![.., .., 0]),
                image.slice(s![.., .., 1]),
                image.slice(s![.., .., 2]),
            );
            &r * 0.299 + &g * 0.587 + &b * 0.114
        }
    })
}

/// Downscales (never upscales) so that the longer side is at most `max_side`.
pub fn limit_size(gray: Array2<f64>, max_side: usize) -> Array2<f64> {
    let (h, w) = gray.dim();
    let longest = h.max(w);
    if longest <= max_side {
        return gray;
    }
    let scale = max_side as f64 / longest as f64;
    let nh = ((h as f64 * scale).round() as u32).max(1);
    let nw = ((w as f64 * scale).round() as u32).max(1);
    let buf: ImageBuffer<Luma<f32>, Vec<f32>> =
        ImageBuffer::from_fn(w as u32, h as u32, |x, y| Luma([gray[[y as usize, x as usize]] as f32]));
    let small = imageops::resize(&buf, nw, nh, FilterType::Triangle);
    Array2::from_shape_fn((nh as usize, nw as usize), |(y, x)| {
        small.get_pixel(x as u32, y as u32).0[0] as f64
    })
}

/// Decodes a PNG/PGM file into an `H x W x C` array scaled to `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Array3<f64>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let img = image::open(path)?.to_luma32f();
    let (w, h) = img.dimensions();
    Ok(Array3::from_shape_fn((h as usize, w as usize, 1), |(y, x, _)| {
        img.get_pixel(x as u32, y as u32).0[0] as f64
    }))
}

/// Dense sampling: for each patch size, every window whose top-left corner
/// lies on the `step` lattice and which fits inside the (size-limited)
/// image, in size order then row-major order.
pub fn extract_patches(
    image: ArrayView3<'_, f64>,
    cfg: &ExtractConfig,
    plugin: &dyn DescriptorPlugin,
) -> Result<PatchSet> {
    cfg.validate()?;
    let gray = limit_size(to_gray(image)?, cfg.max_side);
    let (h, w) = gray.dim();
    let smallest = *cfg.patch_sizes.iter().min().expect("validated nonempty");
    if h < smallest || w < smallest {
        return Err(Error::invalid(format!(
            "image {h}x{w} is smaller than the smallest patch size {smallest}"
        )));
    }
    let mut windows = Vec::new();
    for &size in &cfg.patch_sizes {
        if h < size || w < size {
            continue;
        }
        for r in (0..=h - size).step_by(cfg.step) {
            for c in (0..=w - size).step_by(cfg.step) {
                windows.push((r, c, size));
            }
        }
    }
    let dim = plugin.output_len();
    let mut features = Array2::zeros((windows.len(), dim));
    let mut coords = Array2::zeros((windows.len(), 2));
    for (i, &(r, c, size)) in windows.iter().enumerate() {
        let window = gray.slice(s![r..r + size, c..c + size]);
        plugin.describe(window, features.row_mut(i).as_slice_mut().expect("standard layout"));
        coords[[i, 0]] = (r as f64 + size as f64 / 2.0) / h as f64;
        coords[[i, 1]] = (c as f64 + size as f64 / 2.0) / w as f64;
    }
    PatchSet::new(features, coords)
}

/// Linear projection onto the leading principal axes.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: Array1<f64>,
    /// `output_dim x input_dim`, orthonormal rows.
    basis: Array2<f64>,
}

impl PcaModel {
    pub fn new(mean: Array1<f64>, basis: Array2<f64>) -> Result<Self> {
        check_dim("PCA basis columns", mean.len(), basis.ncols())?;
        if basis.nrows() > basis.ncols() {
            return Err(Error::invalid("PCA output_dim exceeds input_dim"));
        }
        let gram = basis.dot(&basis.t());
        for ((i, j), v) in gram.indexed_iter() {
            let target = if i == j { 1.0 } else { 0.0 };
            if (v - target).abs() > 1e-8 {
                return Err(Error::invalid("PCA basis rows are not orthonormal"));
            }
        }
        Ok(Self { mean, basis })
    }

    pub fn input_dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn basis(&self) -> &Array2<f64> {
        &self.basis
    }

    pub fn project(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_dim("PCA input", self.input_dim(), features.ncols())?;
        let centered = &features - &self.mean;
        Ok(centered.dot(&self.basis.t()))
    }
}

/// Symmetric eigendecomposition with eigenpairs sorted by decreasing
/// eigenvalue and each eigenvector's largest-magnitude entry made positive.
pub(crate) fn sorted_eigen(matrix: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = matrix.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| 0.5 * (matrix[[i, j]] + matrix[[j, i]]));
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    // rows are eigenvectors
    let mut vectors = Array2::zeros((n, n));
    for (row, &i) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(i);
        let pivot = col.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            vectors[[row, j]] = sign * col[j];
        }
    }
    (values, vectors)
}

/// Fits PCA on the rows of `features`, keeping `output_dim` axes of the
/// sample covariance (normalized by `N - 1`).
pub fn fit_pca(features: ArrayView2<'_, f64>, output_dim: usize) -> Result<PcaModel> {
    let (n, d) = features.dim();
    if output_dim == 0 || output_dim > d {
        return Err(Error::invalid(format!(
            "PCA output_dim must be in 1..={d}, got {output_dim}"
        )));
    }
    if n <= output_dim {
        return Err(Error::invalid(format!(
            "PCA needs more samples than output dimensions ({n} <= {output_dim})"
        )));
    }
    let mean = features.mean_axis(Axis(0)).expect("nonempty");
    let centered = &features - &mean;
    let cov = centered.t().dot(&centered) / (n - 1) as f64;
    let (_, vectors) = sorted_eigen(&cov);
    let basis = vectors.slice(s![..output_dim, ..]).to_owned();
    PcaModel::new(mean, basis)
}

pub fn apply_pca(model: &PcaModel, patches: &PatchSet) -> Result<PatchSet> {
    Ok(PatchSet {
        features: model.project(patches.features())?,
        coords: patches.coords.clone(),
    })
}

/// Appends the two coordinate columns to the descriptors.
pub fn append_coords(patches: &PatchSet) -> PatchSet {
    let features = ndarray::concatenate(Axis(1), &[patches.features.view(), patches.coords.view()])
        .expect("row counts agree");
    PatchSet {
        features,
        coords: patches.coords.clone(),
    }
}

/// Grid sizes of the spatial pyramid; `[1, 2]` means 1x1 plus 2x2.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PyramidLayout {
    pub levels: Vec<usize>,
}

impl Default for PyramidLayout {
    fn default() -> Self {
        Self { levels: vec![1, 2] }
    }
}

impl PyramidLayout {
    pub fn flat() -> Self {
        Self { levels: vec![1] }
    }

    pub fn regions(&self) -> usize {
        self.levels.iter().map(|g| g * g).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() || self.levels.contains(&0) {
            return Err(Error::invalid("pyramid levels must be a nonempty list of positive grid sizes"));
        }
        Ok(())
    }

    /// Row indices of `coords` falling in each region, levels in order and
    /// cells row-major within a level. A coordinate on a cell boundary goes
    /// to the higher-index cell.
    pub fn partition_indices(&self, coords: ArrayView2<'_, f64>) -> Vec<Vec<usize>> {
        let mut regions = Vec::with_capacity(self.regions());
        for &g in &self.levels {
            let mut cells = vec![Vec::new(); g * g];
            let cell_of = |v: f64| ((v * g as f64).floor() as usize).min(g - 1);
            for (i, c) in coords.rows().into_iter().enumerate() {
                cells[cell_of(c[0]) * g + cell_of(c[1])].push(i);
            }
            regions.extend(cells);
        }
        regions
    }
}

pub fn pyramid_partition(patches: &PatchSet, layout: &PyramidLayout) -> Vec<PatchSet> {
    layout
        .partition_indices(patches.coords())
        .iter()
        .map(|rows| patches.select(rows))
        .collect()
}

/// Adapts `ubm` to each pyramid region separately and concatenates the
/// region supervectors in layout order.
pub fn image_to_supervector(
    patches: &PatchSet,
    ubm: &DiagonalGmm,
    layout: &PyramidLayout,
    cfg: &AdaptationConfig,
    method: Method,
) -> Result<SupervectorBundle> {
    Ok(image_to_supervectors(patches, ubm, layout, cfg, &[method])?
        .pop()
        .expect("one method requested"))
}

/// As [`image_to_supervector`] for several methods, sharing the adaptation.
pub fn image_to_supervectors(
    patches: &PatchSet,
    ubm: &DiagonalGmm,
    layout: &PyramidLayout,
    cfg: &AdaptationConfig,
    methods: &[Method],
) -> Result<Vec<SupervectorBundle>> {
    layout.validate()?;
    if !patches.is_empty() {
        check_dim("patch descriptors vs UBM", ubm.dim(), patches.dim())?;
    }
    let mut parts: Vec<Vec<SupervectorBundle>> = vec![Vec::new(); methods.len()];
    for rows in layout.partition_indices(patches.coords()) {
        let region = patches.features.select(Axis(0), &rows);
        let region = if rows.is_empty() {
            Array2::zeros((0, ubm.dim()))
        } else {
            region
        };
        let stats = accumulate_stats(ubm, region.view())?;
        let (adapted, _) = map_adapt(ubm, &stats, cfg)?;
        for (slot, &m) in parts.iter_mut().zip(methods) {
            slot.push(vectorize(m, ubm, &adapted)?);
        }
    }
    parts.iter().map(|p| SupervectorBundle::concat(p)).collect()
}
