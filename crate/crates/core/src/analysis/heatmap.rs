//! Gridded scalar fields as `lat,lon,value` CSV and binary PPM rasters.
//!
//! Continuous fields use a linear ramp from blue `(0,0,255)` at the minimum
//! to red `(255,0,0)` at the maximum; a constant field is all blue. Region
//! ids use a fixed palette:
//!
//! | id | quadrant | colour |
//! |----|----------|--------|
//! | 0 | SW | `(31,119,180)` |
//! | 1 | NW | `(255,127,14)` |
//! | 2 | SE | `(44,160,44)` |
//! | 3 | NE | `(214,39,40)` |
//!
//! Grid cells without a point are grey `(128,128,128)`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const REGION_PALETTE: [[u8; 3]; 4] = [[31, 119, 180], [255, 127, 14], [44, 160, 44], [214, 39, 40]];
const EMPTY_CELL: [u8; 3] = [128, 128, 128];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Palette {
    Ramp,
    Regions,
}

/// One `(lat, lon, value)` per point.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub points: Vec<(f64, f64, f64)>,
}

impl Field {
    pub fn new(coords: &[(f64, f64)], values: &[f64]) -> Result<Self> {
        if coords.len() != values.len() {
            return Err(Error::Invalid(format!(
                "{} coordinates for {} values",
                coords.len(),
                values.len()
            )));
        }
        Ok(Field {
            points: coords.iter().zip(values).map(|(&(a, b), &v)| (a, b, v)).collect(),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("lat,lon,value\n");
        for (lat, lon, v) in &self.points {
            out.push_str(&format!("{lat},{lon},{v}\n"));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut points = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if i == 0 {
                if line.trim() != "lat,lon,value" {
                    return Err(parse_error(path, 1, "expected header lat,lon,value"));
                }
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(parse_error(path, i + 1, "expected 3 columns"));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| parse_error(path, i + 1, "bad number"));
            points.push((num(cols[0])?, num(cols[1])?, num(cols[2])?));
        }
        Ok(Field { points })
    }

    /// RGB raster with one pixel per distinct (lat, lon); north up, west left.
    pub fn raster(&self, palette: Palette) -> Result<Raster> {
        if self.points.is_empty() {
            return Err(Error::Empty("heatmap field"));
        }
        let mut lats: Vec<f64> = self.points.iter().map(|p| p.0).collect();
        let mut lons: Vec<f64> = self.points.iter().map(|p| p.1).collect();
        lats.sort_by(|a, b| b.total_cmp(a));
        lats.dedup();
        lons.sort_by(f64::total_cmp);
        lons.dedup();
        let (lo, hi) = self
            .points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.2), hi.max(p.2)));
        let (w, h) = (lons.len(), lats.len());
        let mut pixels = vec![EMPTY_CELL; w * h];
        for &(lat, lon, v) in &self.points {
            let row = lats.binary_search_by(|x| lat.total_cmp(x)).expect("lat present");
            let col = lons.binary_search_by(|x| x.total_cmp(&lon)).expect("lon present");
            pixels[row * w + col] = match palette {
                Palette::Ramp => ramp(v, lo, hi),
                Palette::Regions => *REGION_PALETTE
                    .get(v as usize)
                    .filter(|_| v >= 0.0 && v.fract() == 0.0)
                    .ok_or_else(|| Error::Invalid(format!("region id {v} has no palette colour")))?,
            };
        }
        Ok(Raster {
            width: w,
            height: h,
            pixels,
        })
    }
}

fn parse_error(path: &Path, line: usize, message: &str) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn ramp(v: f64, lo: f64, hi: f64) -> [u8; 3] {
    let t = if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
    [(255.0 * t).round() as u8, 0, (255.0 * (1.0 - t)).round() as u8]
}

#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    /// Row-major, top row first.
    pub pixels: Vec<[u8; 3]>,
}

impl Raster {
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        self.pixels[row * self.width + col]
    }

    pub fn write_ppm<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "P6\n{} {}\n255\n", self.width, self.height)?;
        for p in &self.pixels {
            out.write_all(p)?;
        }
        out.flush()
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_ppm(BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }
}

/// Write `<stem>.csv` and `<stem>.ppm` for a field.
pub fn emit_heatmap(field: &Field, stem: &Path, palette: Palette) -> Result<()> {
    field.write_csv(&stem.with_extension("csv"))?;
    field.raster(palette)?.save_ppm(&stem.with_extension("ppm"))
}
