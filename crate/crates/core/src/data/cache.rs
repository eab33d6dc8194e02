//! Binary dataset cache (little-endian):
//!
//! ```text
//! magic "ARCDOGDS", u32 version
//! u64 samples, u64 timepoints, u64 temperature_vars
//! strings: channel names, climate names, class names (u32 count, then u32 len + UTF-8 each)
//! stats: 4 × (u32 len + f64 values)   channel mean/std, climate mean/std
//! f64 median_lat, f64 median_lon, u64 imputed_cells
//! provenance: u8 tag (0 ingested + string, 1 synthetic + u64 seed)
//! per sample: f64 lat, f64 lon, u32 label, u8 region,
//!             f64 × cells timeseries, f64 × climate, ceil(cells / 8) mask bytes
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Dataset, NormStats, Provenance, Sample, Schema, NUM_REGIONS};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"ARCDOGDS";
const VERSION: u32 = 1;

struct Out<W> {
    w: W,
}

impl<W: Write> Out<W> {
    fn raw(&mut self, b: &[u8]) -> std::io::Result<()> {
        self.w.write_all(b)
    }
    fn u32(&mut self, v: usize) -> std::io::Result<()> {
        self.raw(&(v as u32).to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.raw(&v.to_le_bytes())
    }
    fn f64s(&mut self, v: &[f64]) -> std::io::Result<()> {
        v.iter().try_for_each(|x| self.raw(&x.to_le_bytes()))
    }
    fn string(&mut self, s: &str) -> std::io::Result<()> {
        self.u32(s.len())?;
        self.raw(s.as_bytes())
    }
    fn strings(&mut self, v: &[String]) -> std::io::Result<()> {
        self.u32(v.len())?;
        v.iter().try_for_each(|s| self.string(s))
    }
    fn vec(&mut self, v: &[f64]) -> std::io::Result<()> {
        self.u32(v.len())?;
        self.f64s(v)
    }
}

pub fn write_dataset<W: Write>(ds: &Dataset, out: W) -> std::io::Result<()> {
    let mut o = Out { w: out };
    o.raw(DATASET_MAGIC)?;
    o.u32(VERSION as usize)?;
    o.u64(ds.len() as u64)?;
    o.u64(ds.schema.timepoints as u64)?;
    o.u64(ds.schema.temperature_vars as u64)?;
    o.strings(&ds.schema.channel_names)?;
    o.strings(&ds.schema.climate_names)?;
    o.strings(&ds.classes)?;
    for v in [
        &ds.stats.channel_mean,
        &ds.stats.channel_std,
        &ds.stats.climate_mean,
        &ds.stats.climate_std,
    ] {
        o.vec(v)?;
    }
    o.f64s(&[ds.median_lat, ds.median_lon])?;
    o.u64(ds.imputed_cells as u64)?;
    match &ds.provenance {
        Provenance::Ingested { source } => {
            o.raw(&[0])?;
            o.string(source)?;
        }
        Provenance::Synthetic { seed } => {
            o.raw(&[1])?;
            o.u64(*seed)?;
        }
    }
    let mut mask = Vec::new();
    for s in &ds.samples {
        o.f64s(&[s.lat, s.lon])?;
        o.u32(s.label)?;
        o.raw(&[s.region])?;
        o.f64s(&s.timeseries)?;
        o.f64s(&s.climate)?;
        mask.clear();
        mask.resize(s.missing.len().div_ceil(8), 0u8);
        for (i, m) in s.missing.iter().enumerate() {
            if *m {
                mask[i / 8] |= 1 << (i % 8);
            }
        }
        o.raw(&mask)?;
    }
    o.w.flush()
}

struct In<R> {
    r: R,
}

fn truncated(e: std::io::Error) -> Error {
    Error::Data(format!("truncated dataset cache: {e}"))
}

impl<R: Read> In<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.r.read_exact(&mut b).map_err(truncated)?;
        Ok(b)
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Data(format!("implausible count {v}")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut buf = vec![0u8; n * 8];
        self.r.read_exact(&mut buf).map_err(truncated)?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        let mut buf = vec![0u8; n];
        self.r.read_exact(&mut buf).map_err(truncated)?;
        String::from_utf8(buf).map_err(|_| Error::Data("dataset cache string is not UTF-8".into()))
    }
    fn strings(&mut self) -> Result<Vec<String>> {
        let n = self.u32()?;
        (0..n).map(|_| self.string()).collect()
    }
    fn vec(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()?;
        self.f64s(n)
    }
}

pub fn read_dataset<R: Read>(input: R) -> Result<Dataset> {
    let mut r = In { r: input };
    if &r.bytes::<8>()? != DATASET_MAGIC {
        return Err(Error::Data("not a dataset cache (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Data(format!("unsupported dataset cache version {version}")));
    }
    let n = r.len()?;
    let timepoints = r.len()?;
    let temperature_vars = r.len()?;
    let schema = Schema {
        timepoints,
        channel_names: r.strings()?,
        climate_names: r.strings()?,
        temperature_vars,
    };
    if schema.temperature_vars > schema.climate_dim() {
        return Err(Error::Data("temperature_vars exceeds climate dimension".into()));
    }
    let classes = r.strings()?;
    let stats = NormStats {
        channel_mean: r.vec()?,
        channel_std: r.vec()?,
        climate_mean: r.vec()?,
        climate_std: r.vec()?,
    };
    let median_lat = r.f64()?;
    let median_lon = r.f64()?;
    let imputed_cells = r.len()?;
    let provenance = match r.bytes::<1>()?[0] {
        0 => Provenance::Ingested { source: r.string()? },
        1 => Provenance::Synthetic { seed: r.u64()? },
        t => return Err(Error::Data(format!("unknown provenance tag {t}"))),
    };
    let cells = schema.cells();
    let d = schema.climate_dim();
    let mask_len = cells.div_ceil(8);
    let mut samples = Vec::with_capacity(n.min(1 << 24));
    for i in 0..n {
        let lat = r.f64()?;
        let lon = r.f64()?;
        let label = r.u32()?;
        let region = r.bytes::<1>()?[0];
        if label >= classes.len() || region as usize >= NUM_REGIONS {
            return Err(Error::Data(format!("dataset cache sample {i}: label or region out of range")));
        }
        let timeseries = r.f64s(cells)?;
        let climate = r.f64s(d)?;
        let mut mask = vec![0u8; mask_len];
        r.r.read_exact(&mut mask).map_err(truncated)?;
        let missing = (0..cells).map(|c| mask[c / 8] >> (c % 8) & 1 == 1).collect();
        samples.push(Sample {
            lat,
            lon,
            timeseries,
            missing,
            climate,
            label,
            region,
        });
    }
    Ok(Dataset {
        samples,
        classes,
        schema,
        stats,
        median_lat,
        median_lon,
        provenance,
        imputed_cells,
    })
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(ds, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file))
}
