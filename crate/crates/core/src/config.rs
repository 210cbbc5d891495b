//! TOML run configuration. A single global seed is fanned out to each stage
//! by hashing the stage name.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterParams;
use crate::error::{Error, Result};
use crate::evalsweep::{PipelineParams, ProxyKind, SweepConfig};
use crate::ingest::DatasetSchema;
use crate::projection::{PreprocessMode, ProjectionMethod, ProjectionParams};
use crate::rng::derive_seed;
use crate::simgen::SimConfig;
use crate::wals::WalsParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub n_annotators: u32,
    pub n_items: u32,
    pub annotator_ratio: [u32; 4],
    pub item_ratio: [u32; 3],
    pub truth_ratio: [u32; 2],
    pub replication: u32,
}

impl Default for SimSection {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            n_annotators: d.n_annotators,
            n_items: d.n_items,
            annotator_ratio: d.annotator_ratio,
            item_ratio: d.item_ratio,
            truth_ratio: d.truth_ratio,
            replication: d.replication,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WalsSection {
    pub dim: usize,
    pub reg: f64,
    pub iterations: usize,
    pub unobserved_weight: f64,
    pub dev_fraction: f64,
    pub grid_dims: Vec<usize>,
    pub grid_regs: Vec<f64>,
    pub grid_iterations: Vec<usize>,
}

impl Default for WalsSection {
    fn default() -> Self {
        let d = WalsParams::default();
        Self {
            dim: d.dim,
            reg: d.reg,
            iterations: d.iterations,
            unobserved_weight: d.unobserved_weight,
            dev_fraction: 0.1,
            grid_dims: vec![2, 3, 5],
            grid_regs: vec![0.01, 0.1, 1.0, 10.0],
            grid_iterations: vec![2, 5, 8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectionSection {
    pub preprocess: PreprocessMode,
    pub method: ProjectionMethod,
    pub n_neighbors: usize,
    pub epochs: usize,
    pub negative_samples: usize,
}

impl Default for ProjectionSection {
    fn default() -> Self {
        let d = ProjectionParams::default();
        Self {
            preprocess: PreprocessMode::None,
            method: d.method,
            n_neighbors: d.n_neighbors,
            epochs: d.epochs,
            negative_samples: d.negative_samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub replication_sizes: Vec<u32>,
    pub proxies: Vec<ProxyKind>,
    pub seeds: Vec<u64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        let d = SweepConfig::default();
        Self {
            replication_sizes: d.replication_sizes,
            proxies: d.proxies,
            seeds: d.seeds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub sim: SimSection,
    pub wals: WalsSection,
    pub projection: ProjectionSection,
    pub cluster: ClusterParams,
    pub sweep: SweepSection,
    pub ingest: BTreeMap<String, DatasetSchema>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::InvalidConfig(m) => Error::InvalidConfig(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.sim_config().validate()?;
        self.wals_params().validate()?;
        if !(self.wals.dev_fraction > 0.0 && self.wals.dev_fraction < 1.0) {
            return Err(Error::InvalidConfig("dev_fraction must lie strictly between 0 and 1".into()));
        }
        self.cluster.validate()?;
        self.sweep_config().validate()
    }

    /// Check that every dataset file named under `[ingest.*]` exists.
    pub fn validate_ingest(&self) -> Result<()> {
        if self.ingest.is_empty() {
            return Err(Error::InvalidConfig("no [ingest.<name>] sections configured".into()));
        }
        for (name, schema) in &self.ingest {
            if !schema.path.is_file() {
                return Err(Error::InvalidConfig(format!(
                    "dataset `{name}`: {} does not exist",
                    schema.path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage)
    }

    pub fn sim_config(&self) -> SimConfig {
        let s = &self.sim;
        SimConfig {
            n_annotators: s.n_annotators,
            n_items: s.n_items,
            annotator_ratio: s.annotator_ratio,
            item_ratio: s.item_ratio,
            truth_ratio: s.truth_ratio,
            replication: s.replication,
            seed: self.stage_seed("simulate"),
        }
    }

    pub fn wals_params(&self) -> WalsParams {
        WalsParams {
            dim: self.wals.dim,
            reg: self.wals.reg,
            iterations: self.wals.iterations,
            unobserved_weight: self.wals.unobserved_weight,
        }
    }

    pub fn projection_params(&self) -> ProjectionParams {
        ProjectionParams {
            method: self.projection.method,
            n_neighbors: self.projection.n_neighbors,
            epochs: self.projection.epochs,
            negative_samples: self.projection.negative_samples,
            seed: self.stage_seed("projection"),
        }
    }

    pub fn pipeline(&self) -> PipelineParams {
        PipelineParams {
            wals: self.wals_params(),
            preprocess: self.projection.preprocess,
            projection: self.projection_params(),
            cluster: self.cluster,
        }
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            replication_sizes: self.sweep.replication_sizes.clone(),
            proxies: self.sweep.proxies.clone(),
            seeds: self.sweep.seeds.clone(),
            base_seed: self.stage_seed("sweep"),
            pipeline: self.pipeline(),
        }
    }
}
