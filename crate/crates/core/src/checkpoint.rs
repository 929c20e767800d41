//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `ERRMINE1` |
//! | 8     | `u64` length `L` of the JSON header |
//! | L     | UTF-8 JSON [`CheckpointHeader`] |
//! | 8·P   | parameters as `f64` LE: for each layer, the weight matrix row-major (`in × out`), then the bias |
//!
//! Parameters are stored as raw IEEE-754 bits so a save/load cycle is bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, MlpModel};

const MAGIC: &[u8; 8] = b"ERRMINE1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub layer_dims: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub init_seed: u64,
    pub train_seed: Option<u64>,
    /// Whatever configuration produced the model.
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MlpModel,
    pub train_seed: Option<u64>,
    pub config: serde_json::Value,
}

impl Checkpoint {
    pub fn new(model: MlpModel, train_seed: Option<u64>, config: serde_json::Value) -> Self {
        Checkpoint {
            model,
            train_seed,
            config,
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = CheckpointHeader {
            layer_dims: self.model.layer_dims().to_vec(),
            hidden_activation: self.model.hidden_activation(),
            output_activation: self.model.output_activation(),
            init_seed: self.model.init_seed(),
            train_seed: self.train_seed,
            config: self.config.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        let mut buf = Vec::with_capacity(8 * self.model.parameter_count());
        for (wm, b) in self.model.weights().iter().zip(self.model.biases()) {
            for v in wm.iter().chain(b.iter()) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Checkpoint("truncated magic".into()))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)
            .map_err(|_| Error::Checkpoint("truncated header length".into()))?;
        let len = u64::from_le_bytes(len) as usize;
        if len > 1 << 30 {
            return Err(Error::Checkpoint(format!("implausible header length {len}")));
        }
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)
            .map_err(|_| Error::Checkpoint("truncated header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&json)
            .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        if header.hidden_activation != Activation::Relu
            || header.output_activation != Activation::Identity
        {
            return Err(Error::Checkpoint("unsupported activation layout".into()));
        }
        let dims = &header.layer_dims;
        if dims.len() < 2 {
            return Err(Error::Checkpoint(format!("bad layer dims {dims:?}")));
        }
        let mut next = || -> Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)
                .map_err(|_| Error::Checkpoint("truncated parameters".into()))?;
            Ok(f64::from_le_bytes(b))
        };
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in dims.windows(2) {
            let w: Vec<f64> = (0..pair[0] * pair[1]).map(|_| next()).collect::<Result<_>>()?;
            let b: Vec<f64> = (0..pair[1]).map(|_| next()).collect::<Result<_>>()?;
            weights.push(
                Array2::from_shape_vec((pair[0], pair[1]), w)
                    .map_err(|e| Error::Checkpoint(e.to_string()))?,
            );
            biases.push(Array1::from(b));
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
        }
        let model = MlpModel::from_parts(dims.clone(), weights, biases, header.init_seed)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(Checkpoint {
            model,
            train_seed: header.train_seed,
            config: header.config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
