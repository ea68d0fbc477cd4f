use std::path::Path;

use anyhow::{Context, Result};
use gedan_core::assignment::GsPretrainConfig;
use gedan_core::eval::PipelineConfig;
use gedan_core::gedan::ModelConfig;
use gedan_core::ged::CostConfigId;
use gedan_core::graph::SynthSpec;
use gedan_core::training::{CostLearningConfig, SupervisedConfig, UnsupervisedConfig};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub count: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub edge_prob: f64,
    pub labels: usize,
    /// When set, each graph's target is its number of nodes with this label.
    pub count_label: Option<usize>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 200,
            min_nodes: 3,
            max_nodes: 8,
            edge_prob: 0.3,
            labels: 4,
            count_label: None,
        }
    }
}

impl SynthConfig {
    pub fn spec(&self) -> SynthSpec {
        SynthSpec {
            count: self.count,
            min_nodes: self.min_nodes,
            max_nodes: self.max_nodes,
            edge_prob: self.edge_prob,
            labels: self.labels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelsConfig {
    /// Cost configuration 1 to 5.
    pub conf: u8,
    pub max_nodes: usize,
}

impl Default for LabelsConfig {
    fn default() -> Self {
        Self { conf: 1, max_nodes: 10 }
    }
}

/// Everything a run can be configured with. Stage seeds are derived from
/// `seed`, so the seeds inside the sections are ignored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub labels: LabelsConfig,
    pub gs: GsPretrainConfig,
    pub model: ModelConfig,
    pub unsupervised: UnsupervisedConfig,
    pub supervised: SupervisedConfig,
    pub cost_learning: CostLearningConfig,
    pub pipeline: PipelineConfig,
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub frame_size: Option<usize>,
    pub cost_conf: Option<u8>,
    pub lambda: Option<f64>,
    pub epochs: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("invalid config {}", p.display()))
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(f) = o.frame_size {
            self.gs.frame_size = f;
        }
        if let Some(c) = o.cost_conf {
            self.labels.conf = c;
            self.model.costs = CostConfigId::new(c)?.costs();
        }
        if let Some(l) = o.lambda {
            self.model.lambda = l;
        }
        if let Some(e) = o.epochs {
            self.gs.epochs = e;
            self.unsupervised.epochs = e;
            self.supervised.epochs = e;
            self.cost_learning.epochs = e;
        }
        self.derive_seeds();
        self.model.validate()?;
        Ok(())
    }

    /// Draws every stage seed from one generator seeded with `seed`.
    fn derive_seeds(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        self.gs.seed = rng.next_u64();
        self.model.init_seed = rng.next_u64();
        self.unsupervised.seed = rng.next_u64();
        self.supervised.seed = rng.next_u64();
        self.cost_learning.seed = rng.next_u64();
        self.pipeline.seed = rng.next_u64();
    }

    /// Seed for synthetic corpus generation.
    pub fn synth_seed(&self) -> u64 {
        ChaCha8Rng::seed_from_u64(self.seed ^ 0x5717).next_u64()
    }

    pub fn hash(&self) -> Result<String> {
        let canonical = serde_json::to_string(self)?;
        Ok(hex(&Sha256::digest(canonical.as_bytes())))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("seed = 3\n[model]\nlambda = 0.2\n").is_ok());
        assert!(toml::from_str::<RunConfig>("sede = 3\n").is_err());
        assert!(toml::from_str::<RunConfig>("[model.costs]\nnode_del = 1.0\nnode_ins = 1.0\nedge_del = 1.0\nedge_ins = 1.0\nnode_sub = 1.0\nnode_dell = 2.0\n").is_err());
        assert!(toml::from_str::<RunConfig>("[unsupervised]\nepoch = 3\n").is_err());
    }

    #[test]
    fn overrides_and_seeds() {
        let mut a = RunConfig::default();
        a.apply(&Overrides {
            seed: Some(5),
            cost_conf: Some(3),
            epochs: Some(2),
            ..Overrides::default()
        })
        .unwrap();
        assert_eq!(a.model.costs, CostConfigId::new(3).unwrap().costs());
        assert_eq!(a.unsupervised.epochs, 2);
        let mut b = RunConfig::default();
        b.apply(&Overrides {
            seed: Some(5),
            cost_conf: Some(3),
            epochs: Some(2),
            ..Overrides::default()
        })
        .unwrap();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.apply(&Overrides {
            seed: Some(6),
            ..Overrides::default()
        })
        .unwrap();
        assert_ne!(a.gs.seed, b.gs.seed);
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert!(RunConfig::default()
            .apply(&Overrides {
                cost_conf: Some(9),
                ..Overrides::default()
            })
            .is_err());
    }
}
