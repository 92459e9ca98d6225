//! End-to-end network: landmark graph encoder, rasterizers, fusion blocks and
//! the RRDB backbone, with the three ablation variants.

use std::fmt;
use std::str::FromStr;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig, NUM_FUSIONS};
use crate::data::{check_scale, ImageTensor, LandmarkSet, HR_SIZE};
use crate::error::{Error, Result};
use crate::gcn::{GcnEncoder, NodeEmbeddings};
use crate::graph::{canonical_edges, FaceGraph, Rasterizer};
use crate::msaf::{Msaf, MsafConfig};
use crate::nn::Mode;
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Plain RRDB trunk.
    Rrdb,
    /// RRDB with instance normalization after every RDB convolution.
    RrdbIn,
    /// Instance norm plus landmark graph encoder and split-attention fusion.
    #[default]
    Full,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Rrdb, Variant::RrdbIn, Variant::Full];

    pub fn instance_norm(self) -> bool {
        !matches!(self, Variant::Rrdb)
    }

    pub fn graph_fusion(self) -> bool {
        matches!(self, Variant::Full)
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Rrdb => "RRDB",
            Variant::RrdbIn => "RRDB + Instance Norm",
            Variant::Full => "RRDB + Instance Norm + MSAF + GCN",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Rrdb => "rrdb",
            Variant::RrdbIn => "rrdb_in",
            Variant::Full => "full",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "rrdb" => Ok(Variant::Rrdb),
            "rrdb_in" => Ok(Variant::RrdbIn),
            "full" => Ok(Variant::Full),
            other => Err(Error::Config(format!(
                "unknown variant `{other}` (expected rrdb, rrdb_in or full)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub scale: usize,
    pub variant: Variant,
    pub backbone: BackboneConfig,
    /// Widths of the graph encoder, input (3) first.
    pub gcn_dims: Vec<usize>,
    pub msaf: MsafConfig,
    pub seed: u64,
}

impl ModelConfig {
    /// Full-size network: 8 RRDBs of 64 channels, GCN 3-32-64-64-64, 16-channel fusion blocks.
    pub fn standard(scale: usize, variant: Variant) -> Self {
        Self {
            scale,
            variant,
            backbone: BackboneConfig::default(),
            gcn_dims: vec![3, 32, 64, 64, 64],
            msaf: MsafConfig {
                block_channels: 16,
                reduction: 4,
            },
            seed: 0,
        }
    }

    /// Desk-scale network: one RRDB of 8 channels and a 16-dim graph encoder.
    pub fn tiny(scale: usize, variant: Variant) -> Self {
        Self {
            scale,
            variant,
            backbone: BackboneConfig {
                channels: 8,
                growth: 4,
                blocks: 1,
                residual_scale: 0.2,
            },
            gcn_dims: vec![3, 8, 16, 16, 16],
            msaf: MsafConfig {
                block_channels: 4,
                reduction: 2,
            },
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn lr_size(&self) -> usize {
        HR_SIZE / self.scale
    }

    pub fn validate(&self) -> Result<()> {
        check_scale(self.scale)?;
        self.backbone.validate()?;
        self.msaf.validate()?;
        if self.gcn_dims.len() != 5 || self.gcn_dims[0] != 3 || self.gcn_dims.contains(&0) {
            return Err(Error::Config(format!(
                "gcn_dims must be five positive widths starting at 3, got {:?}",
                self.gcn_dims
            )));
        }
        Ok(())
    }
}

pub struct ModelOutput {
    /// Unclamped super-resolved batch `(b, 3, 128, 128)`.
    pub sr: Tensor,
    /// Final-layer node embeddings; `None` for variants without the graph branch.
    pub emb: Option<NodeEmbeddings>,
}

pub struct AffectSrNet {
    cfg: ModelConfig,
    store: ParamStore,
    graph: FaceGraph,
    gcn: Option<GcnEncoder>,
    rasterizers: Vec<Rasterizer>,
    backbone: Backbone,
}

impl AffectSrNet {
    /// Seeded initialization of every parameter.
    pub fn new(cfg: ModelConfig, dtype: DType) -> Result<Self> {
        cfg.validate()?;
        let store = ParamStore::new(dtype, cfg.seed);
        let root = store.root();
        let variant = cfg.variant;
        let (gcn, rasterizers, fusion) = if variant.graph_fusion() {
            let gcn = GcnEncoder::new(&root.pp("gcn"), &cfg.gcn_dims)?;
            let dim = gcn.out_dim();
            let rasterizers = (0..NUM_FUSIONS)
                .map(|k| Rasterizer::new(&root.pp(format!("raster{k}")), dim))
                .collect::<Result<Vec<_>>>()?;
            let fusion = (0..NUM_FUSIONS)
                .map(|k| Msaf::new(&root.pp(format!("fusion{k}")), cfg.msaf, &[cfg.backbone.channels, dim]))
                .collect::<Result<Vec<_>>>()?;
            (Some(gcn), rasterizers, Some(fusion))
        } else {
            (None, Vec::new(), None)
        };
        let backbone = Backbone::new(
            &root.pp("backbone"),
            cfg.backbone,
            cfg.scale,
            variant.instance_norm(),
            fusion,
        )?;
        Ok(Self {
            cfg,
            store,
            graph: canonical_edges(),
            gcn,
            rasterizers,
            backbone,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn graph(&self) -> &FaceGraph {
        &self.graph
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn gcn(&self) -> Option<&GcnEncoder> {
        self.gcn.as_ref()
    }

    pub fn num_params(&self) -> usize {
        self.store.num_trainable()
    }

    /// Graph embeddings for a batch of landmark sets (graph variants only).
    pub fn encode(&self, landmarks: &[&LandmarkSet]) -> Result<Option<NodeEmbeddings>> {
        match &self.gcn {
            Some(gcn) => Ok(Some(gcn.encode(landmarks, &self.graph)?)),
            None => Ok(None),
        }
    }

    /// Forward pass on a raw `(b, 3, h, w)` tensor.
    pub fn forward(&self, lr: &Tensor, landmarks: Option<&[&LandmarkSet]>, mode: Mode) -> Result<ModelOutput> {
        let lr = lr.to_dtype(self.dtype())?;
        let Some(gcn) = &self.gcn else {
            let sr = self.backbone.forward(&lr, &[], mode)?;
            return Ok(ModelOutput { sr, emb: None });
        };
        let landmarks = landmarks.ok_or_else(|| Error::Config("the full variant requires landmarks".into()))?;
        let (b, _, h, w) = lr.dims4()?;
        if landmarks.len() != b {
            return Err(Error::Shape(format!(
                "{} landmark sets for a batch of {b}",
                landmarks.len()
            )));
        }
        let emb = gcn.encode(landmarks, &self.graph)?;
        let maps = self
            .rasterizers
            .iter()
            .map(|r| r.forward(emb.tensor(), landmarks, h, w))
            .collect::<Result<Vec<_>>>()?;
        let sr = self.backbone.forward(&lr, &maps, mode)?;
        Ok(ModelOutput { sr, emb: Some(emb) })
    }

    /// Inference: evaluation mode, output clamped to `[0, 1]`.
    pub fn super_resolve(&self, lr: &ImageTensor, landmarks: Option<&[&LandmarkSet]>) -> Result<ImageTensor> {
        let out = self.forward(lr.tensor(), landmarks, Mode::Eval)?;
        ImageTensor::new(out.sr.to_dtype(DType::F32)?)
    }
}
