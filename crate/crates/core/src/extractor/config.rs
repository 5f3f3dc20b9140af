use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::STRIDE;

/// Edge set over which the GNN passes messages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    Complete,
    KnnStatic,
    KnnDynamic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    Bilinear,
    Mlp,
}

impl std::str::FromStr for Support {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complete" => Ok(Support::Complete),
            "knn_static" | "knn" => Ok(Support::KnnStatic),
            "knn_dynamic" | "dynamic" => Ok(Support::KnnDynamic),
            _ => Err(Error::Config(format!("unknown support graph `{s}` (complete, knn_static, knn_dynamic)"))),
        }
    }
}

impl std::str::FromStr for Scorer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bilinear" => Ok(Scorer::Bilinear),
            "mlp" => Ok(Scorer::Mlp),
            _ => Err(Error::Config(format!("unknown scorer `{s}` (bilinear, mlp)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_in: usize,
    pub n_feat: usize,
    pub gnn_layers: usize,
    pub gnn_dim: usize,
    pub support: Support,
    pub k: usize,
    pub scorer: Scorer,
    pub use_raw_features: bool,
    pub embed_coords: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_in: 128,
            n_feat: 64,
            gnn_layers: 3,
            gnn_dim: 64,
            support: Support::Complete,
            k: 4,
            scorer: Scorer::Mlp,
            use_raw_features: false,
            embed_coords: true,
        }
    }
}

/// Output channels of the five stride-2 stem convolutions.
pub const STEM_WIDTHS: [usize; 4] = [16, 32, 64, 128];

impl ModelConfig {
    pub fn stride(&self) -> usize {
        STRIDE
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_in == 0 || self.n_feat == 0 || self.gnn_dim == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.gnn_layers == 0 {
            return Err(Error::Config("gnn_layers must be at least 1".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        Ok(())
    }

    /// Width of the initial node embedding.
    pub fn embed_dim(&self) -> usize {
        let base = if self.use_raw_features { self.n_in } else { self.n_feat };
        base + if self.embed_coords { 2 } else { 0 }
    }

    pub fn check_image(&self, width: usize, height: usize) -> Result<()> {
        if width == 0 || height == 0 || width % STRIDE != 0 || height % STRIDE != 0 {
            return Err(Error::Config(format!("image {width}x{height} is not a positive multiple of {STRIDE}")));
        }
        Ok(())
    }
}
