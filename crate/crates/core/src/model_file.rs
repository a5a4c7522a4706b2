//! Self-describing binary model files.
//!
//! Layout: the 8-byte magic `CVRANK01`, a little-endian `u32` header length,
//! a JSON header, then every parameter block as row-major little-endian
//! `f64`s in header order. The header records the format version, the model
//! mode, the layer configuration, an echo of the run configuration, and each
//! block's name and shape.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, EncoderModel};
use crate::numerics::{Matrix, ParamStore};
use crate::ranker::{ConvRankNet, RankNetConfig, RankNetModel};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CVRANK01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// RankNet on precomputed feature vectors.
    RanknetFeatures,
    /// Convolutional encoder plus RankNet on raw text.
    Convranknet,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::RanknetFeatures => "ranknet-features",
            Mode::Convranknet => "convranknet",
        })
    }
}

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Model {
    Features(RankNetModel),
    Conv(ConvRankNet),
}

impl Model {
    pub fn mode(&self) -> Mode {
        match self {
            Model::Features(_) => Mode::RanknetFeatures,
            Model::Conv(_) => Mode::Convranknet,
        }
    }

    fn stores(&self) -> Vec<&ParamStore> {
        match self {
            Model::Features(m) => vec![&m.params],
            Model::Conv(m) => vec![&m.encoder.params, &m.ranknet.params],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Block {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    mode: Mode,
    ranknet: RankNetConfig,
    encoder: Option<EncoderConfig>,
    config: serde_json::Value,
    blocks: Vec<Block>,
}

/// A model plus the run configuration it was trained with.
#[derive(Clone, Debug)]
pub struct ModelFile {
    pub model: Model,
    pub config: serde_json::Value,
}

impl ModelFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (ranknet, encoder) = match &self.model {
            Model::Features(m) => (m.config().clone(), None),
            Model::Conv(m) => (m.ranknet.config().clone(), Some(m.encoder.config().clone())),
        };
        let stores = self.model.stores();
        let blocks = stores
            .iter()
            .flat_map(|s| s.iter())
            .map(|(name, p)| Block {
                name: name.to_string(),
                rows: p.value.rows(),
                cols: p.value.cols(),
            })
            .collect();
        let header = Header {
            version: FORMAT_VERSION,
            mode: self.model.mode(),
            ranknet,
            encoder,
            config: self.config.clone(),
            blocks,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::ModelFile(format!("header encoding: {e}")))?;
        let header_len = u32::try_from(json.len()).map_err(|_| Error::ModelFile("header too large".into()))?;
        let mut out = Vec::with_capacity(12 + json.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&header_len.to_le_bytes());
        out.extend_from_slice(&json);
        for (_, p) in stores.iter().flat_map(|s| s.iter()) {
            for v in p.value.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::ModelFile(msg.to_string());
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(bad("not a model file (bad magic)"));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let json = bytes.get(12..12 + header_len).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| Error::ModelFile(format!("header: {e}")))?;
        if header.version != FORMAT_VERSION {
            return Err(Error::ModelFile(format!("unsupported format version {}", header.version)));
        }
        let mut data = &bytes[12 + header_len..];
        let mut encoder_params = ParamStore::new();
        let mut ranknet_params = ParamStore::new();
        for b in &header.blocks {
            let n = b.rows.checked_mul(b.cols).ok_or_else(|| bad("block size overflow"))?;
            let need = n.checked_mul(8).ok_or_else(|| bad("block size overflow"))?;
            if data.len() < need {
                return Err(Error::ModelFile(format!("truncated data in block {}", b.name)));
            }
            let values = data[..need]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            data = &data[need..];
            let m = Matrix::from_vec(b.rows, b.cols, values)?;
            if b.name.starts_with("ranknet.") {
                ranknet_params.insert(b.name.clone(), m);
            } else {
                encoder_params.insert(b.name.clone(), m);
            }
        }
        if !data.is_empty() {
            return Err(bad("trailing bytes after the last block"));
        }
        let ranknet = RankNetModel::from_params(header.ranknet, ranknet_params)?;
        let model = match (header.mode, header.encoder) {
            (Mode::RanknetFeatures, None) if encoder_params.is_empty() => Model::Features(ranknet),
            (Mode::Convranknet, Some(cfg)) => Model::Conv(ConvRankNet::new(EncoderModel::from_params(cfg, encoder_params)?, ranknet)?),
            (mode, _) => return Err(Error::ModelFile(format!("blocks do not match mode {mode}"))),
        };
        Ok(ModelFile {
            model,
            config: header.config,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
