use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use lagkit::classify::{nap_project_all, predict, train_nap, train_nc};
use lagkit::evaluate::{
    evaluate_methods, finalize_patches, fit_descriptor_pca, fit_ubm, sweep_k, usable_nap_rank, with_workers,
    Dataset,
};
use lagkit::io::{self, ModelMeta};
use lagkit::manifest::{DatasetManifest, EntryKind, ManifestEntry};
use lagkit::pipeline::{extract_patches, image_to_supervector, load_image, RawPixel};
use lagkit::synth::write_synthetic;
use lagkit::{Error, Method, Result, RunConfig, SupervectorBundle, SyntheticSpec};

const DESK_GRID: [usize; 3] = [8, 16, 32];
const FULL_GRID: [usize; 6] = [32, 64, 128, 256, 512, 1024];

#[derive(Parser)]
#[command(name = "lagkit", version, about = "Lie algebrized Gaussian supervectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker count (still capped by LAGKIT_THREADS).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Mixture size K.
    #[arg(long)]
    components: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic dataset (patch files, manifest, run config).
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// JSON synthetic spec; defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        separation: Option<f64>,
    },
    /// Extract dense patch descriptors from the images of a manifest.
    Extract {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Apply this PCA (and coordinate appending) to the raw descriptors.
        #[arg(long)]
        pca: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the UBM (and, for image manifests, the descriptor PCA).
    TrainUbm {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the PCA model fitted for image manifests.
        #[arg(long)]
        pca_out: Option<PathBuf>,
    },
    /// Compute one supervector per manifest entry.
    Vectorize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        ubm: PathBuf,
        #[arg(long)]
        pca: Option<PathBuf>,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a nuisance attribute projection from labelled supervectors.
    NapTrain {
        #[command(flatten)]
        common: Common,
        /// Manifest of `.lagv` entries.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Nearest-centroid classification of supervectors.
    Classify {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        nap: Option<PathBuf>,
        /// CSV of `id,truth,predicted`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeated random-split evaluation; writes JSON reports and CSV confusion matrices.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated methods; defaults to the configured one.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<Method>,
        /// Shrink the training split when a class is too small.
        #[arg(long)]
        scale_down: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate all three methods over a grid of mixture sizes.
    SweepK {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Use the full grid 32..1024 instead of the desk-scale 8, 16, 32.
        #[arg(long)]
        full_grid: bool,
        #[arg(long, value_delimiter = ',', conflicts_with = "full_grid")]
        grid: Vec<usize>,
        #[arg(long)]
        scale_down: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a summary of any container file.
    Inspect { path: PathBuf },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(t) = common.threads {
        cfg.threads = Some(t);
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(k) = common.components {
        cfg.components = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    io::write_atomic(path, text.as_bytes())
}

fn load_vectors(manifest: &DatasetManifest) -> Result<(Vec<String>, Vec<usize>, Array2<f64>)> {
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut bundles: Vec<SupervectorBundle> = Vec::new();
    for e in &manifest.entries {
        if e.kind() != EntryKind::Vector {
            return Err(Error::InvalidParameter(format!("entry {} is not a supervector", e.id)));
        }
        ids.push(e.id.clone());
        labels.push(manifest.label_index(e)?);
        bundles.push(io::load_supervector(&manifest.resolve(e))?);
    }
    let dim = bundles.first().map_or(0, |b| b.len());
    if bundles.iter().any(|b| b.len() != dim) {
        return Err(Error::InvalidParameter("supervectors differ in length".into()));
    }
    let x = Array2::from_shape_fn((bundles.len(), dim), |(r, c)| bundles[r].values[c]);
    Ok((ids, labels, x))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            out,
            spec,
            seed,
            separation,
        } => {
            let mut spec: SyntheticSpec = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|_| Error::MissingFile(p.clone()))?;
                    let de = &mut serde_json::Deserializer::from_str(&text);
                    serde_path_to_error::deserialize(de)
                        .map_err(|e| Error::Config(vec![format!("{}: {}", e.path(), e.inner())]))?
                }
                None => SyntheticSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            if let Some(s) = separation {
                spec.separation = s;
            }
            let manifest = write_synthetic(&spec, &out)?;
            let mut cfg = RunConfig::desk_scale(16);
            cfg.seed = spec.seed;
            write_text(&out.join("run.json"), &cfg.to_json()?)?;
            println!(
                "wrote {} items in {} classes to {}",
                manifest.entries.len(),
                manifest.classes.len(),
                out.display()
            );
        }
        Command::Extract {
            common,
            manifest,
            pca,
            out,
        } => {
            let cfg = load_config(&common)?;
            let m = DatasetManifest::load(&manifest)?;
            let pca = pca.map(|p| io::load_pca(&p)).transpose()?;
            let extract = cfg.descriptor.extract_config();
            let plugin = RawPixel { grid: cfg.descriptor.grid };
            let entries = with_workers(cfg.worker_count(), || {
                m.entries
                    .par_iter()
                    .map(|e| {
                        if e.kind() != EntryKind::Image {
                            return Err(Error::InvalidParameter(format!("entry {} is not an image", e.id)));
                        }
                        let raw = extract_patches(load_image(&m.resolve(e))?.view(), &extract, &plugin)?;
                        let patches = match &pca {
                            Some(p) => finalize_patches(p, &raw, &cfg.descriptor)?,
                            None => raw,
                        };
                        let rel = PathBuf::from(format!("{}.lagp", e.id));
                        io::save_patches(&out.join(&rel), &patches)?;
                        Ok(ManifestEntry {
                            id: e.id.clone(),
                            label: e.label.clone(),
                            path: rel,
                            kind: Some(EntryKind::Patches),
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })??;
            DatasetManifest {
                root: ".".into(),
                classes: m.classes.clone(),
                entries,
            }
            .save(&out.join("manifest.json"))?;
        }
        Command::TrainUbm {
            common,
            manifest,
            out,
            pca_out,
        } => {
            let cfg = load_config(&common)?;
            let m = DatasetManifest::load(&manifest)?;
            let (ubm, trace, count) = with_workers(cfg.worker_count(), || -> Result<_> {
                let data = Dataset::load(&m, &cfg.descriptor)?;
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                let items: Vec<_> = if data.raw {
                    let raw: Vec<_> = data.items.iter().map(|i| &i.patches).collect();
                    let pca = fit_descriptor_pca(&raw, &cfg.descriptor, &mut rng)?;
                    let path = pca_out.clone().unwrap_or_else(|| out.with_extension("lagc"));
                    io::save_pca(&path, &pca)?;
                    data.items
                        .iter()
                        .map(|i| finalize_patches(&pca, &i.patches, &cfg.descriptor))
                        .collect::<Result<_>>()?
                } else {
                    data.items.into_iter().map(|i| i.patches).collect()
                };
                let refs: Vec<_> = items.iter().collect();
                let (ubm, trace) = fit_ubm(&refs, &cfg, cfg.seed, &mut rng)?;
                let count = items.iter().map(|p| p.len()).sum::<usize>().min(cfg.em.max_patches);
                Ok((ubm, trace, count))
            })??;
            let meta = ModelMeta {
                seed: cfg.seed,
                relevance: cfg.adaptation.relevance,
                variance_floor: cfg.em.variance_floor,
                iterations: trace.len().saturating_sub(1),
                training_patches: count,
                final_log_likelihood: trace.last().copied().unwrap_or(f64::NAN),
            };
            io::save_gmm(&out, &ubm, Some(&meta))?;
            println!("K = {}, D = {}, final log-likelihood {:.6e}", ubm.components(), ubm.dim(), meta.final_log_likelihood);
        }
        Command::Vectorize {
            common,
            manifest,
            ubm,
            pca,
            method,
            out,
        } => {
            let cfg = load_config(&common)?;
            let method = method.unwrap_or(cfg.method);
            let m = DatasetManifest::load(&manifest)?;
            let ubm = io::load_gmm(&ubm)?;
            let pca = pca.map(|p| io::load_pca(&p)).transpose()?;
            let entries = with_workers(cfg.worker_count(), || -> Result<Vec<ManifestEntry>> {
                let data = Dataset::load(&m, &cfg.descriptor)?;
                if data.raw && pca.is_none() {
                    return Err(Error::InvalidParameter("image manifests need --pca".into()));
                }
                data.items
                    .par_iter()
                    .map(|item| {
                        let patches = match (&pca, data.raw) {
                            (Some(p), true) => finalize_patches(p, &item.patches, &cfg.descriptor)?,
                            _ => item.patches.clone(),
                        };
                        let v = image_to_supervector(&patches, &ubm, &cfg.layout, &cfg.adaptation, method)?;
                        let rel = PathBuf::from(format!("{}.lagv", item.id));
                        io::save_supervector(&out.join(&rel), &v)?;
                        Ok(ManifestEntry {
                            id: item.id.clone(),
                            label: data.classes[item.label].clone(),
                            path: rel,
                            kind: Some(EntryKind::Vector),
                        })
                    })
                    .collect()
            })??;
            DatasetManifest {
                root: ".".into(),
                classes: m.classes.clone(),
                entries,
            }
            .save(&out.join("manifest.json"))?;
        }
        Command::NapTrain {
            common,
            manifest,
            rank,
            out,
        } => {
            let cfg = load_config(&common)?;
            let m = DatasetManifest::load(&manifest)?;
            let (_, labels, x) = load_vectors(&m)?;
            let requested = rank.unwrap_or(cfg.nap_rank);
            let usable = usable_nap_rank(requested, x.ncols(), &labels);
            if usable < requested {
                log::warn!("NAP rank reduced from {requested} to {usable}");
            }
            let nap = train_nap(x.view(), &labels, usable)?;
            io::save_nap(&out, &nap)?;
            println!("NAP rank {} in dimension {}", nap.rank(), nap.dim());
        }
        Command::Classify { train, test, nap, out } => {
            let train = DatasetManifest::load(&train)?;
            let test = DatasetManifest::load(&test)?;
            if train.classes != test.classes {
                return Err(Error::InvalidParameter("train and test manifests list different classes".into()));
            }
            let (_, ytr, mut xtr) = load_vectors(&train)?;
            let (ids, yte, mut xte) = load_vectors(&test)?;
            if let Some(p) = nap {
                let nap = io::load_nap(&p)?;
                xtr = nap_project_all(&nap, xtr.view())?;
                xte = nap_project_all(&nap, xte.view())?;
            }
            let nc = train_nc(xtr.view(), &ytr, train.classes.len())?;
            let mut csv = String::from("id,truth,predicted\n");
            let mut correct = 0;
            for ((id, &t), row) in ids.iter().zip(&yte).zip(xte.rows()) {
                let p = predict(&nc, row)?;
                correct += usize::from(p == t);
                csv.push_str(&format!("{id},{},{}\n", test.classes[t], test.classes[p]));
            }
            write_text(&out, &csv)?;
            println!("accuracy {:.4}%", 100.0 * correct as f64 / ids.len().max(1) as f64);
        }
        Command::Evaluate {
            common,
            manifest,
            methods,
            scale_down,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            cfg.split.scale_down |= scale_down;
            let methods = if methods.is_empty() { vec![cfg.method] } else { methods };
            let m = DatasetManifest::load(&manifest)?;
            let data = with_workers(cfg.worker_count(), || Dataset::load(&m, &cfg.descriptor))??;
            for report in evaluate_methods(&data, &cfg, &methods)? {
                let name = report.method.name();
                write_text(&out.join(format!("report_{name}.json")), &serde_json::to_string_pretty(&report)?)?;
                write_text(&out.join(format!("confusion_{name}.csv")), &report.confusion_csv())?;
                println!("{name}: {:.2} +/- {:.2}", report.mean, report.std);
            }
        }
        Command::SweepK {
            common,
            manifest,
            full_grid,
            grid,
            scale_down,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            cfg.split.scale_down |= scale_down;
            let grid = if full_grid {
                FULL_GRID.to_vec()
            } else if grid.is_empty() {
                DESK_GRID.to_vec()
            } else {
                grid
            };
            let m = DatasetManifest::load(&manifest)?;
            let data = with_workers(cfg.worker_count(), || Dataset::load(&m, &cfg.descriptor))??;
            let report = sweep_k(&data, &cfg, &grid, &Method::ALL)?;
            write_text(&out, &serde_json::to_string_pretty(&report)?)?;
            print!("{}", report.table());
        }
        Command::Inspect { path } => print!("{}", io::describe_file(&path)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
