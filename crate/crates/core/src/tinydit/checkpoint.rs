use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::layout::{ParamBlock, ParamLayout};
use super::net::TinyDit;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DYPECKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
/// Upper bound on the JSON header, to reject absurd lengths early.
pub const MAX_HEADER_BYTES: u64 = 1 << 24;

/// What the training run looked like.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingMeta {
    pub steps: usize,
    pub seed: u64,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Mean loss of a zero-output model over the tail steps.
    pub baseline_loss: f64,
    /// Losses of the last steps, oldest first.
    pub loss_tail: Vec<f64>,
}

impl TrainingMeta {
    pub fn tail_mean(&self) -> Option<f64> {
        (!self.loss_tail.is_empty()).then(|| self.loss_tail.iter().sum::<f64>() / self.loss_tail.len() as f64)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    param_count: usize,
    blocks: Vec<ParamBlock>,
    training: TrainingMeta,
}

/// A model with its training record. Parameters are stored as `f32`, so
/// construction rounds them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    model: TinyDit,
    pub training: TrainingMeta,
}

impl Checkpoint {
    pub fn new(model: &TinyDit, training: TrainingMeta) -> Result<Self> {
        let params = model.params().iter().map(|&v| v as f32 as f64).collect();
        Ok(Self {
            model: TinyDit::from_params(model.config().clone(), params)?,
            training,
        })
    }

    pub fn model(&self) -> &TinyDit {
        &self.model
    }

    pub fn into_model(self) -> TinyDit {
        self.model
    }

    /// Magic, version (u32 LE), header length (u64 LE), JSON header, then
    /// the parameters as little-endian `f32`.
    pub fn encode(&self) -> Vec<u8> {
        let header = Header {
            config: self.model.config().clone(),
            param_count: self.model.params().len(),
            blocks: self.model.layout().blocks().to_vec(),
            training: self.training.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + 4 * header.param_count);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for &v in self.model.params() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: String| Error::Format(m);
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(fmt("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(fmt(format!("unsupported checkpoint version {version}")));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        if len > MAX_HEADER_BYTES || len > (bytes.len() - 20) as u64 {
            return Err(fmt(format!("header length {len} exceeds file")));
        }
        let body = 20 + len as usize;
        let header: Header = serde_json::from_slice(&bytes[20..body])?;
        header.config.validate()?;
        let layout = ParamLayout::new(&header.config);
        if header.param_count != layout.total() || header.blocks != layout.blocks() {
            return Err(fmt(format!(
                "header lists {} parameters, config implies {}",
                header.param_count,
                layout.total()
            )));
        }
        let data = &bytes[body..];
        if data.len() != 4 * layout.total() {
            return Err(fmt(format!(
                "{} parameter bytes, expected {}",
                data.len(),
                4 * layout.total()
            )));
        }
        let params = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        Ok(Self {
            model: TinyDit::from_params(header.config, params)?,
            training: header.training,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tinydit::ModelConfig;
    use proptest::prelude::*;

    fn checkpoint() -> Checkpoint {
        let cfg = ModelConfig {
            image_side: 8,
            d_model: 16,
            heads: 2,
            layers: 1,
            class_count: 2,
            time_features: 2,
            ..ModelConfig::default()
        };
        let meta = TrainingMeta {
            steps: 3,
            seed: 9,
            lr: 1e-3,
            momentum: 0.9,
            batch_size: 4,
            baseline_loss: 2.0,
            loss_tail: vec![1.5, 1.25, 0.1],
        };
        Checkpoint::new(&TinyDit::init(cfg, 2).unwrap(), meta).unwrap()
    }

    #[test]
    fn round_trip() {
        let c = checkpoint();
        let bytes = c.encode();
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
        assert_eq!(Checkpoint::decode(&bytes).unwrap(), c);
        assert_eq!(Checkpoint::decode(&bytes).unwrap().encode(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = checkpoint().encode();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::decode(&extra).is_err());
        let mut nan = bytes.clone();
        let n = nan.len();
        nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(Checkpoint::decode(&nan), Err(Error::Numeric { .. })));
        let mut ver = bytes.clone();
        ver[8] = 7;
        assert!(Checkpoint::decode(&ver).is_err());
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(Checkpoint::decode(&magic).is_err());
    }

    #[test]
    fn rejects_mismatched_header() {
        let c = checkpoint();
        let text = String::from_utf8_lossy(&c.encode()[20..]).into_owned();
        let json_end = text.find("}}").unwrap() + 2;
        let header = text[..json_end].replace("\"layers\":1", "\"layers\":2");
        let mut bytes = CHECKPOINT_MAGIC.to_vec();
        bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
        bytes.extend_from_slice(header.as_bytes());
        bytes.extend_from_slice(&c.encode()[20 + json_end..]);
        assert!(Checkpoint::decode(&bytes).is_err());
    }

    proptest! {
        #[test]
        fn decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..128)) {
            let _ = Checkpoint::decode(&bytes);
        }
    }
}
