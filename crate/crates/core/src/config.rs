//! JSON run configuration shared by the CLI and the evaluation harness.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{AdaptationConfig, EmConfig, DEFAULT_VARIANCE_FLOOR};
use crate::pipeline::{ExtractConfig, PyramidLayout};
use crate::vectorize::Method;

/// Environment variable capping the worker count of any run.
pub const THREADS_ENV: &str = "LAGKIT_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DescriptorConfig {
    pub patch_sizes: Vec<usize>,
    pub step: usize,
    pub max_side: usize,
    /// Side of the resampled raw-pixel grid.
    pub grid: usize,
    pub pca_dim: usize,
    pub append_coords: bool,
    /// Cap on the training patches used to fit PCA.
    pub pca_max_patches: usize,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        let e = ExtractConfig::default();
        Self {
            patch_sizes: e.patch_sizes,
            step: e.step,
            max_side: e.max_side,
            grid: 16,
            pca_dim: 50,
            append_coords: true,
            pca_max_patches: 100_000,
        }
    }
}

impl DescriptorConfig {
    pub fn extract_config(&self) -> ExtractConfig {
        ExtractConfig {
            patch_sizes: self.patch_sizes.clone(),
            step: self.step,
            max_side: self.max_side,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmSettings {
    pub max_iterations: usize,
    pub ll_tolerance: f64,
    pub variance_floor: f64,
    /// Cap on the training patches used to fit the UBM.
    pub max_patches: usize,
}

impl Default for EmSettings {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            ll_tolerance: 1e-6,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
            max_patches: 100_000,
        }
    }
}

impl EmSettings {
    pub fn em_config(&self, seed: u64) -> EmConfig {
        EmConfig {
            max_iterations: self.max_iterations,
            ll_tolerance: self.ll_tolerance,
            seed,
            variance_floor: self.variance_floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train_per_class: usize,
    pub trials: usize,
    /// Shrink `train_per_class` (with a warning) when a class is too small.
    pub scale_down: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_per_class: 100,
            trials: 10,
            scale_down: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub descriptor: DescriptorConfig,
    /// Mixture size K.
    pub components: usize,
    pub em: EmSettings,
    pub adaptation: AdaptationConfig,
    pub layout: PyramidLayout,
    pub method: Method,
    pub nap_rank: usize,
    pub split: SplitConfig,
    pub seed: u64,
    /// Worker budget; `None` uses every available core.
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            descriptor: DescriptorConfig::default(),
            components: 512,
            em: EmSettings::default(),
            adaptation: AdaptationConfig::default(),
            layout: PyramidLayout::default(),
            method: Method::Lag,
            nap_rank: 32,
            split: SplitConfig::default(),
            seed: 0,
            threads: None,
        }
    }
}

impl RunConfig {
    /// Defaults sized for the synthetic benchmark: a small mixture and a
    /// training split that shrinks to half of each class.
    pub fn desk_scale(components: usize) -> Self {
        let mut cfg = Self {
            components,
            ..Self::default()
        };
        cfg.split.scale_down = true;
        cfg
    }

    /// Parses and validates; every problem is reported with its field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(vec![format!("{path}: {}", e.into_inner())])
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                problems.push(msg.to_string());
            }
        };
        let d = &self.descriptor;
        check(
            !d.patch_sizes.is_empty() && !d.patch_sizes.contains(&0),
            "descriptor.patch_sizes: must be a nonempty list of positive sizes",
        );
        check(d.step > 0, "descriptor.step: must be positive");
        check(d.max_side > 0, "descriptor.max_side: must be positive");
        check(d.grid > 0, "descriptor.grid: must be positive");
        check(
            d.pca_dim > 0 && d.pca_dim <= d.grid * d.grid,
            "descriptor.pca_dim: must lie in 1..=grid*grid",
        );
        check(d.pca_max_patches > 0, "descriptor.pca_max_patches: must be positive");
        check(self.components > 0, "components: must be positive");
        check(self.em.max_iterations > 0, "em.max_iterations: must be at least 1");
        check(self.em.ll_tolerance > 0.0, "em.ll_tolerance: must be positive");
        check(
            self.em.variance_floor > 0.0 && self.em.variance_floor.is_finite(),
            "em.variance_floor: must be positive",
        );
        check(self.em.max_patches > 0, "em.max_patches: must be positive");
        check(
            self.adaptation.relevance > 0.0 && self.adaptation.relevance.is_finite(),
            "adaptation.relevance: must be positive",
        );
        check(
            self.adaptation.variance_floor > 0.0 && self.adaptation.variance_floor.is_finite(),
            "adaptation.variance_floor: must be positive",
        );
        check(
            !self.layout.levels.is_empty() && !self.layout.levels.contains(&0),
            "layout.levels: must be a nonempty list of positive grid sizes",
        );
        check(self.split.train_per_class > 0, "split.train_per_class: must be positive");
        check(self.split.trials > 0, "split.trials: must be positive");
        check(self.threads != Some(0), "threads: must be positive when given");
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Worker count after applying the environment cap.
    pub fn worker_count(&self) -> usize {
        let available = std::thread::available_parallelism().map_or(1, |n| n.get());
        let mut n = self.threads.unwrap_or(available);
        if let Some(cap) = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
            if cap > 0 {
                n = n.min(cap);
            }
        }
        n.max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let c = RunConfig::default();
        assert_eq!(c.components, 512);
        assert_eq!(c.descriptor.patch_sizes, vec![16, 24]);
        assert_eq!(c.descriptor.step, 4);
        assert_eq!(c.descriptor.pca_dim, 50);
        assert_eq!(c.layout.regions(), 5);
        assert_eq!(c.nap_rank, 32);
        assert_eq!((c.split.train_per_class, c.split.trials), (100, 10));
        assert_eq!(c.adaptation.relevance, 16.0);
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let mut c = RunConfig::default();
        c.adaptation.relevance = 0.1 + 0.2;
        c.em.ll_tolerance = 1.0 / 3.0;
        c.method = Method::Klvec;
        c.threads = Some(3);
        let back = RunConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let c = RunConfig::from_json(r#"{"components": 8, "split": {"trials": 2}}"#).unwrap();
        assert_eq!(c.components, 8);
        assert_eq!(c.split.trials, 2);
        assert_eq!(c.split.train_per_class, 100);
    }

    #[test]
    fn bad_field_reports_its_path() {
        let err = RunConfig::from_json(r#"{"adaptation": {"relevance": "high"}}"#).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("adaptation.relevance"), "{err}");
        let err = RunConfig::from_json(r#"{"split": {"trails": 3}}"#).unwrap_err();
        assert!(err.to_string().contains("split"), "{err}");
    }

    #[test]
    fn validation_collects_every_problem() {
        let err = RunConfig::from_json(r#"{"components": 0, "nap_rank": 1, "em": {"max_iterations": 0}}"#)
            .unwrap_err();
        match err {
            Error::Config(p) => assert_eq!(p.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
