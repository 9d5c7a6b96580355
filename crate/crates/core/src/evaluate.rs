//! Repeated random-split evaluation: per trial, fit PCA (image data), the
//! UBM, NAP and nearest-centroid models on the training split only, then
//! score the held-out items.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{
    fixed, mean_std, nap_project_all, predict, train_nap, train_nc, CentroidModel, EvalReport, NapModel,
};
use crate::config::{DescriptorConfig, RunConfig};
use crate::error::{Error, Result};
use crate::gmm::{train_ubm_em, DiagonalGmm};
use crate::io::load_patches;
use crate::manifest::{DatasetManifest, EntryKind};
use crate::pipeline::{
    append_coords, apply_pca, extract_patches, fit_pca, image_to_supervectors, load_image, PatchSet,
    PcaModel, RawPixel,
};
use crate::synth::SyntheticData;
use crate::vectorize::Method;

#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub id: String,
    pub label: usize,
    pub patches: PatchSet,
}

/// Items held in memory. When `raw` is set the patches are raw image
/// descriptors that still need PCA and coordinate appending.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub items: Vec<DatasetItem>,
    pub raw: bool,
}

impl Dataset {
    pub fn from_synthetic(data: SyntheticData) -> Self {
        Self {
            classes: data.classes,
            items: data
                .items
                .into_iter()
                .map(|i| DatasetItem {
                    id: i.id,
                    label: i.label,
                    patches: i.patches,
                })
                .collect(),
            raw: false,
        }
    }

    /// Loads patch files, or extracts raw descriptors from images, in
    /// manifest order.
    pub fn load(manifest: &DatasetManifest, descriptor: &DescriptorConfig) -> Result<Self> {
        let kinds: Vec<EntryKind> = manifest.entries.iter().map(|e| e.kind()).collect();
        if kinds.contains(&EntryKind::Vector) {
            return Err(Error::invalid("evaluation needs patch or image entries, not supervectors"));
        }
        let raw = kinds.first() == Some(&EntryKind::Image);
        if kinds.iter().any(|k| (*k == EntryKind::Image) != raw) {
            return Err(Error::invalid("a manifest must not mix image and patch entries"));
        }
        let extract = descriptor.extract_config();
        let plugin = RawPixel { grid: descriptor.grid };
        let items = manifest
            .entries
            .par_iter()
            .map(|e| {
                let path = manifest.resolve(e);
                let patches = if raw {
                    extract_patches(load_image(&path)?.view(), &extract, &plugin)?
                } else {
                    load_patches(&path)?
                };
                Ok(DatasetItem {
                    id: e.id.clone(),
                    label: manifest.label_index(e)?,
                    patches,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            classes: manifest.classes.clone(),
            items,
            raw,
        })
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.classes.len()];
        for item in &self.items {
            sizes[item.label] += 1;
        }
        sizes
    }
}

/// Training split size actually used, shrinking it when allowed.
pub fn effective_train_per_class(sizes: &[usize], cfg: &RunConfig) -> Result<usize> {
    let wanted = cfg.split.train_per_class;
    let (smallest, class) = sizes
        .iter()
        .enumerate()
        .map(|(c, &n)| (n, c))
        .min()
        .ok_or_else(|| Error::invalid("dataset has no classes"))?;
    if smallest > wanted {
        return Ok(wanted);
    }
    if !cfg.split.scale_down {
        return Err(Error::invalid(format!(
            "class {class} has {smallest} items but train_per_class is {wanted}; \
             enable split.scale_down or lower train_per_class"
        )));
    }
    if smallest < 2 {
        return Err(Error::invalid(format!("class {class} has {smallest} items; need at least 2")));
    }
    let scaled = smallest / 2;
    log::warn!("scaling train_per_class down from {wanted} to {scaled} (smallest class has {smallest} items)");
    Ok(scaled)
}

/// Per-class random split; both halves are returned in ascending item order.
pub fn split_indices(dataset: &Dataset, train_per_class: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..dataset.classes.len() {
        let mut members: Vec<usize> = (0..dataset.items.len())
            .filter(|&i| dataset.items[i].label == c)
            .collect();
        members.shuffle(rng);
        train.extend_from_slice(&members[..train_per_class.min(members.len())]);
        test.extend_from_slice(&members[train_per_class.min(members.len())..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

fn stack_rows(parts: &[&PatchSet], dim: usize) -> Array2<f64> {
    let views: Vec<_> = parts.iter().map(|p| p.features()).collect();
    if views.is_empty() {
        return Array2::zeros((0, dim));
    }
    ndarray::concatenate(Axis(0), &views).expect("equal widths")
}

/// Rows of `data`, subsampled without replacement to at most `cap`, kept in
/// original order.
fn subsample(data: Array2<f64>, cap: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    if data.nrows() <= cap {
        return data;
    }
    let mut rows = rand::seq::index::sample(rng, data.nrows(), cap).into_vec();
    rows.sort_unstable();
    data.select(Axis(0), &rows)
}

/// Fits the descriptor PCA on the given training items.
pub fn fit_descriptor_pca(items: &[&PatchSet], descriptor: &DescriptorConfig, rng: &mut ChaCha8Rng) -> Result<PcaModel> {
    let dim = items.first().map_or(0, |p| p.dim());
    let data = subsample(stack_rows(items, dim), descriptor.pca_max_patches, rng);
    fit_pca(data.view(), descriptor.pca_dim)
}

/// PCA projection followed by optional coordinate appending.
pub fn finalize_patches(pca: &PcaModel, patches: &PatchSet, descriptor: &DescriptorConfig) -> Result<PatchSet> {
    let projected = apply_pca(pca, patches)?;
    Ok(if descriptor.append_coords {
        append_coords(&projected)
    } else {
        projected
    })
}

/// Trains a UBM on the given (final) training descriptors.
pub fn fit_ubm(items: &[&PatchSet], cfg: &RunConfig, seed: u64, rng: &mut ChaCha8Rng) -> Result<(DiagonalGmm, Vec<f64>)> {
    let dim = items.first().map_or(0, |p| p.dim());
    let data = subsample(stack_rows(items, dim), cfg.em.max_patches, rng);
    train_ubm_em(data.view(), cfg.components, &cfg.em.em_config(seed))
}

/// NAP rank after clamping to what the training set supports.
pub fn usable_nap_rank(requested: usize, dim: usize, labels: &[usize]) -> usize {
    let mut counts = std::collections::HashMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    if labels.len() < 2 || counts.values().any(|&c| c < 2) {
        if requested > 0 {
            log::warn!("NAP disabled: some training class has fewer than two items");
        }
        return 0;
    }
    requested.min(dim.saturating_sub(1))
}

/// Everything fitted on the training split of one trial.
#[derive(Debug, Clone)]
pub struct TrialArtifacts {
    pub pca: Option<PcaModel>,
    pub ubm: DiagonalGmm,
    /// One per evaluated method, in request order.
    pub naps: Vec<NapModel>,
    pub centroids: Vec<CentroidModel>,
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub trial: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub truth: Vec<usize>,
    /// `predictions[m][i]` for method `m` and test item `i`.
    pub predictions: Vec<Vec<usize>>,
    pub artifacts: TrialArtifacts,
}

pub fn run_trial(
    dataset: &Dataset,
    cfg: &RunConfig,
    methods: &[Method],
    trial: usize,
    train_per_class: usize,
) -> Result<TrialOutcome> {
    let seed = cfg.seed.wrapping_add(trial as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train, test) = split_indices(dataset, train_per_class, &mut rng);

    let (pca, finals): (Option<PcaModel>, Vec<PatchSet>) = if dataset.raw {
        let train_raw: Vec<&PatchSet> = train.iter().map(|&i| &dataset.items[i].patches).collect();
        let pca = fit_descriptor_pca(&train_raw, &cfg.descriptor, &mut rng)?;
        let finals = dataset
            .items
            .par_iter()
            .map(|item| finalize_patches(&pca, &item.patches, &cfg.descriptor))
            .collect::<Result<Vec<_>>>()?;
        (Some(pca), finals)
    } else {
        (None, dataset.items.iter().map(|i| i.patches.clone()).collect())
    };

    let train_patches: Vec<&PatchSet> = train.iter().map(|&i| &finals[i]).collect();
    let (ubm, _) = fit_ubm(&train_patches, cfg, seed, &mut rng)?;

    // supervectors[item][method]
    let order: Vec<usize> = train.iter().chain(&test).copied().collect();
    let vectors = order
        .par_iter()
        .map(|&i| image_to_supervectors(&finals[i], &ubm, &cfg.layout, &cfg.adaptation, methods))
        .collect::<Result<Vec<_>>>()?;
    let (train_vecs, test_vecs) = vectors.split_at(train.len());
    let train_labels: Vec<usize> = train.iter().map(|&i| dataset.items[i].label).collect();
    let truth: Vec<usize> = test.iter().map(|&i| dataset.items[i].label).collect();

    let mut naps = Vec::with_capacity(methods.len());
    let mut centroids = Vec::with_capacity(methods.len());
    let mut predictions = Vec::with_capacity(methods.len());
    for m in 0..methods.len() {
        let dim = train_vecs.first().map_or(0, |v| v[m].len());
        let stack = |vs: &[Vec<crate::vectorize::SupervectorBundle>]| {
            Array2::from_shape_fn((vs.len(), dim), |(r, c)| vs[r][m].values[c])
        };
        let xtr = stack(train_vecs);
        let rank = usable_nap_rank(cfg.nap_rank, dim, &train_labels);
        let nap = if train_labels.len() < 2 {
            NapModel::new(xtr.mean_axis(Axis(0)).expect("nonempty"), Array2::zeros((0, dim)))?
        } else {
            train_nap(xtr.view(), &train_labels, rank)?
        };
        let nc = train_nc(nap_project_all(&nap, xtr.view())?.view(), &train_labels, dataset.classes.len())?;
        let xte = nap_project_all(&nap, stack(test_vecs).view())?;
        let preds = xte
            .rows()
            .into_iter()
            .map(|row| predict(&nc, row))
            .collect::<Result<Vec<_>>>()?;
        naps.push(nap);
        centroids.push(nc);
        predictions.push(preds);
    }
    Ok(TrialOutcome {
        trial,
        train,
        test,
        truth,
        predictions,
        artifacts: TrialArtifacts {
            pca,
            ubm,
            naps,
            centroids,
        },
    })
}

/// Runs `f` on a dedicated pool with `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// All trials of the configured split, in trial order.
pub fn run_trials(dataset: &Dataset, cfg: &RunConfig, methods: &[Method]) -> Result<(usize, Vec<TrialOutcome>)> {
    cfg.validate()?;
    if methods.is_empty() {
        return Err(Error::invalid("no methods requested"));
    }
    let tpc = effective_train_per_class(&dataset.class_sizes(), cfg)?;
    let outcomes = with_workers(cfg.worker_count(), || {
        (0..cfg.split.trials)
            .into_par_iter()
            .map(|t| run_trial(dataset, cfg, methods, t, tpc))
            .collect::<Result<Vec<_>>>()
    })??;
    Ok((tpc, outcomes))
}

/// One report per method; all methods share splits and UBMs.
pub fn evaluate_methods(dataset: &Dataset, cfg: &RunConfig, methods: &[Method]) -> Result<Vec<EvalReport>> {
    let (tpc, outcomes) = run_trials(dataset, cfg, methods)?;
    methods
        .iter()
        .enumerate()
        .map(|(m, &method)| {
            let trials: Vec<(Vec<usize>, Vec<usize>)> = outcomes
                .iter()
                .map(|o| (o.truth.clone(), o.predictions[m].clone()))
                .collect();
            EvalReport::from_trials(method, cfg.components, dataset.classes.clone(), cfg.seed, tpc, &trials)
        })
        .collect()
}

pub fn evaluate(dataset: &Dataset, cfg: &RunConfig) -> Result<EvalReport> {
    Ok(evaluate_methods(dataset, cfg, &[cfg.method])?.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub method: Method,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub components: usize,
    pub cells: Vec<SweepCell>,
}

/// Mean accuracy per mixture size and method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub methods: Vec<Method>,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn cell(&self, components: usize, method: Method) -> Option<&SweepCell> {
        self.rows
            .iter()
            .find(|r| r.components == components)?
            .cells
            .iter()
            .find(|c| c.method == method)
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:>6}", "K");
        for m in &self.methods {
            out.push_str(&format!(" {:>16}", m.name()));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!("{:>6}", row.components));
            for c in &row.cells {
                out.push_str(&format!(" {:>16}", format!("{:.2} +/- {:.2}", c.mean, c.std)));
            }
            out.push('\n');
        }
        out
    }
}

pub fn sweep_k(dataset: &Dataset, cfg: &RunConfig, grid: &[usize], methods: &[Method]) -> Result<SweepReport> {
    let mut rows = Vec::with_capacity(grid.len());
    for &k in grid {
        let cfg = RunConfig {
            components: k,
            ..cfg.clone()
        };
        let reports = evaluate_methods(dataset, &cfg, methods)?;
        let cells = reports
            .iter()
            .map(|r| {
                let (mean, std) = mean_std(&r.accuracies);
                SweepCell {
                    method: r.method,
                    mean: fixed(mean),
                    std: fixed(std),
                }
            })
            .collect();
        log::info!("K = {k} done");
        rows.push(SweepRow { components: k, cells });
    }
    Ok(SweepReport {
        methods: methods.to_vec(),
        rows,
    })
}
