//! Binary checkpoint layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes  "ARCDOGCK"
//! version      u32      1
//! config       u64 × 8  input_channels, timepoints, feature_dim, encoder_layers,
//!                       heads, feedforward_dim, num_classes, conv_kernel
//!              f64      dropout
//! count        u32      number of tensors
//! per tensor:  u32 name length, UTF-8 name bytes, u32 rank, u64 × rank dims,
//!              f64 × product(dims) values
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ARCDOGCK";
const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(params: &ModelParams, mut out: W) -> std::io::Result<()> {
    let c = params.config();
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    for v in [
        c.input_channels,
        c.timepoints,
        c.feature_dim,
        c.encoder_layers,
        c.heads,
        c.feedforward_dim,
        c.num_classes,
        c.conv_kernel,
    ] {
        out.write_all(&(v as u64).to_le_bytes())?;
    }
    out.write_all(&c.dropout.to_le_bytes())?;
    out.write_all(&(params.tensors().len() as u32).to_le_bytes())?;
    for (name, t) in params.names().iter().zip(params.tensors()) {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Data(format!("truncated checkpoint: {e}")))?;
        Ok(buf)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<usize> {
        usize::try_from(u64::from_le_bytes(self.bytes()?)).map_err(|_| Error::Data("dimension overflow".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<ModelParams> {
    let mut r = Reader { inner: input };
    if &r.bytes::<8>()? != CHECKPOINT_MAGIC {
        return Err(Error::Data("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Data(format!("unsupported checkpoint version {version}")));
    }
    let config = ModelConfig {
        input_channels: r.u64()?,
        timepoints: r.u64()?,
        feature_dim: r.u64()?,
        encoder_layers: r.u64()?,
        heads: r.u64()?,
        feedforward_dim: r.u64()?,
        num_classes: r.u64()?,
        conv_kernel: r.u64()?,
        dropout: r.f64()?,
    };
    config.validate()?;
    let count = r.u32()? as usize;
    let mut named = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        if len > 4096 {
            return Err(Error::Data(format!("implausible tensor name length {len}")));
        }
        let mut name = vec![0u8; len];
        r.inner
            .read_exact(&mut name)
            .map_err(|e| Error::Data(format!("truncated checkpoint: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Data("tensor name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        named.push((name, Tensor::new(shape, data)?));
    }
    ModelParams::from_named(&config, named)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(params, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file))
}
