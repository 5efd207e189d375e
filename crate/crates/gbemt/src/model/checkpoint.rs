//! Binary checkpoint format.
//!
//! Little-endian layout: magic `GBE1`; u32 byte length of a UTF-8 JSON
//! header holding the model config, epoch, and validation loss; u32 tensor
//! count; then per tensor (sorted by name): u16 name length, name bytes,
//! u8 rank, one u64 per dim, then the values as f32. Sorting by name makes
//! identical states byte-identical on disk.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Parameters};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"GBE1";

/// Trained model state: config, named parameters, and the epoch/validation
/// loss the state was captured at.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub parameters: Parameters,
    pub epoch: u32,
    pub validation_loss: f64,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: ModelConfig,
    epoch: u32,
    validation_loss: f64,
}

impl Checkpoint {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let wrap = |e: std::io::Error| Error::Data(format!("checkpoint write failed: {e}"));
        let meta = Meta {
            config: self.config.clone(),
            epoch: self.epoch,
            validation_loss: self.validation_loss,
        };
        let header = serde_json::to_vec(&meta).map_err(|e| Error::Data(e.to_string()))?;
        w.write_all(MAGIC).map_err(wrap)?;
        w.write_all(&(header.len() as u32).to_le_bytes()).map_err(wrap)?;
        w.write_all(&header).map_err(wrap)?;
        w.write_all(&(self.parameters.tensor_count() as u32).to_le_bytes())
            .map_err(wrap)?;
        // BTreeMap iteration is already name-sorted.
        for (name, tensor) in self.parameters.iter() {
            let name_bytes = name.as_bytes();
            w.write_all(&(name_bytes.len() as u16).to_le_bytes()).map_err(wrap)?;
            w.write_all(name_bytes).map_err(wrap)?;
            w.write_all(&(tensor.rank() as u8).to_le_bytes()).map_err(wrap)?;
            for &dim in tensor.shape() {
                w.write_all(&(dim as u64).to_le_bytes()).map_err(wrap)?;
            }
            for &v in tensor.data() {
                w.write_all(&(v as f32).to_le_bytes()).map_err(wrap)?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path.as_ref(), buf).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let wrap = |e: std::io::Error| Error::Data(format!("checkpoint read failed: {e}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(wrap)?;
        if &magic != MAGIC {
            return Err(Error::Data(format!(
                "bad checkpoint magic {magic:?}, expected {MAGIC:?}"
            )));
        }
        let header_len = read_u32(r)? as usize;
        let mut header = vec![0u8; header_len];
        r.read_exact(&mut header).map_err(wrap)?;
        let meta: Meta = serde_json::from_slice(&header)
            .map_err(|e| Error::Data(format!("bad checkpoint header: {e}")))?;

        let tensor_count = read_u32(r)? as usize;
        let mut map = BTreeMap::new();
        for _ in 0..tensor_count {
            let name_len = read_u16(r)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes).map_err(wrap)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::Data("tensor name is not UTF-8".into()))?;
            let mut rank_byte = [0u8; 1];
            r.read_exact(&mut rank_byte).map_err(wrap)?;
            let mut shape = Vec::with_capacity(rank_byte[0] as usize);
            for _ in 0..rank_byte[0] {
                shape.push(read_u64(r)? as usize);
            }
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            let mut buf = [0u8; 4];
            for _ in 0..len {
                r.read_exact(&mut buf).map_err(wrap)?;
                data.push(f32::from_le_bytes(buf) as f64);
            }
            map.insert(name, Tensor::new(shape, data)?);
        }
        let checkpoint = Checkpoint {
            config: meta.config,
            parameters: Parameters::from_map(map),
            epoch: meta.epoch,
            validation_loss: meta.validation_loss,
        };
        checkpoint.parameters.matches_config(&checkpoint.config)?;
        Ok(checkpoint)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::read_from(&mut bytes.as_slice())
    }

    /// Round-trip through the serialized form, so in-memory decoding sees
    /// exactly the f32-rounded weights a reloaded checkpoint would.
    pub fn quantized(&self) -> Result<Self> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Self::read_from(&mut buf.as_slice())
    }
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut buf = [0u8; 2];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Data(format!("checkpoint read failed: {e}")))?;
    Ok(u16::from_le_bytes(buf))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Data(format!("checkpoint read failed: {e}")))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Data(format!("checkpoint read failed: {e}")))?;
    Ok(u64::from_le_bytes(buf))
}
