//! Samples, datasets, quadrant regions, splits and model-input assembly.

mod cache;
pub mod classes;
mod csv_io;
mod synthetic;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub use cache::{load_dataset, read_dataset, save_dataset, write_dataset, DATASET_MAGIC};
pub use classes::{CURATED_CLASSES, OTHER_CDL_CLASSES};
pub use csv_io::{csv_header, ingest_csv, parse_csv, write_csv, RawSample};
pub use synthetic::{generate_synthetic, DomainField, Harmonic, SyntheticSpec};

/// Quadrant id: 0 = SW, 1 = NW, 2 = SE, 3 = NE.
pub type Region = u8;
pub const NUM_REGIONS: usize = 4;

/// One grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub lat: f64,
    pub lon: f64,
    /// `timepoints × channels`, row-major by timepoint. Missing cells hold an imputed value.
    pub timeseries: Vec<f64>,
    /// Same layout as `timeseries`; true where the observation was missing.
    pub missing: Vec<bool>,
    pub climate: Vec<f64>,
    pub label: usize,
    pub region: Region,
}

/// Names and sizes of the per-sample fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub timepoints: usize,
    pub channel_names: Vec<String>,
    pub climate_names: Vec<String>,
    /// The first `temperature_vars` climate variables are temperature-related;
    /// the rest are precipitation-related.
    pub temperature_vars: usize,
}

/// Landsat-8 band suffixes used in the CSV header.
pub const LANDSAT_BANDS: [u32; 9] = [1, 2, 3, 4, 5, 6, 7, 10, 11];

impl Schema {
    /// 8 bi-monthly timepoints × 9 Landsat bands, 19 bioclimatic variables.
    pub fn landsat() -> Self {
        Schema {
            timepoints: 8,
            channel_names: LANDSAT_BANDS.iter().map(|b| format!("B{b}")).collect(),
            climate_names: (1..=19).map(|i| format!("bio{i:02}")).collect(),
            temperature_vars: 11,
        }
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn climate_dim(&self) -> usize {
        self.climate_names.len()
    }

    pub fn cells(&self) -> usize {
        self.timepoints * self.channels()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Ingested { source: String },
    Synthetic { seed: u64 },
}

/// Per-channel and per-climate-variable standardization statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub channel_mean: Vec<f64>,
    pub channel_std: Vec<f64>,
    pub climate_mean: Vec<f64>,
    pub climate_std: Vec<f64>,
}

fn population_std(sum_sq_dev: f64, n: usize) -> f64 {
    let std = if n == 0 { 0.0 } else { (sum_sq_dev / n as f64).sqrt() };
    // constant columns standardize to zeros
    if std > 0.0 {
        std
    } else {
        1.0
    }
}

impl NormStats {
    /// Fit on the given sample indices. Missing observation cells are ignored.
    /// Standard deviations are population (divide-by-n); zero spread maps to 1.
    pub fn fit(dataset: &Dataset, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Empty("normalization sample set"));
        }
        let schema = &dataset.schema;
        let c = schema.channels();
        let d = schema.climate_dim();
        let mut ch_sum = vec![0.0; c];
        let mut ch_n = vec![0usize; c];
        let mut cl_sum = vec![0.0; d];
        for &i in indices {
            let s = &dataset.samples[i];
            for (cell, (v, miss)) in s.timeseries.iter().zip(&s.missing).enumerate() {
                if !miss {
                    ch_sum[cell % c] += v;
                    ch_n[cell % c] += 1;
                }
            }
            for (acc, v) in cl_sum.iter_mut().zip(&s.climate) {
                *acc += v;
            }
        }
        let ch_mean: Vec<f64> = ch_sum
            .iter()
            .zip(&ch_n)
            .map(|(s, &n)| if n > 0 { s / n as f64 } else { 0.0 })
            .collect();
        let cl_mean: Vec<f64> = cl_sum.iter().map(|s| s / indices.len() as f64).collect();
        let mut ch_dev = vec![0.0; c];
        let mut cl_dev = vec![0.0; d];
        for &i in indices {
            let s = &dataset.samples[i];
            for (cell, (v, miss)) in s.timeseries.iter().zip(&s.missing).enumerate() {
                if !miss {
                    let dv = v - ch_mean[cell % c];
                    ch_dev[cell % c] += dv * dv;
                }
            }
            for ((acc, v), m) in cl_dev.iter_mut().zip(&s.climate).zip(&cl_mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let channel_std = ch_dev.iter().zip(&ch_n).map(|(dv, &n)| population_std(*dv, n)).collect();
        let climate_std = cl_dev.iter().map(|dv| population_std(*dv, indices.len())).collect();
        Ok(NormStats {
            channel_mean: ch_mean,
            channel_std,
            climate_mean: cl_mean,
            climate_std,
        })
    }

    pub fn standardize_climate(&self, var: usize, value: f64) -> f64 {
        (value - self.climate_mean[var]) / self.climate_std[var]
    }
}

/// Which climate variables are appended to every timepoint of the model input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClimateMode {
    None,
    All,
    Temperature,
    Precipitation,
}

impl ClimateMode {
    pub const ALL_MODES: [ClimateMode; 4] = [
        ClimateMode::None,
        ClimateMode::All,
        ClimateMode::Temperature,
        ClimateMode::Precipitation,
    ];

    /// Indices into the climate vector selected by this mode.
    pub fn variables(self, schema: &Schema) -> std::ops::Range<usize> {
        match self {
            ClimateMode::None => 0..0,
            ClimateMode::All => 0..schema.climate_dim(),
            ClimateMode::Temperature => 0..schema.temperature_vars,
            ClimateMode::Precipitation => schema.temperature_vars..schema.climate_dim(),
        }
    }

    pub fn input_channels(self, schema: &Schema) -> usize {
        schema.channels() + self.variables(schema).len()
    }

    /// Variables used as regression targets: the input subset, or all of
    /// them when no climate is fed to the model.
    pub fn target_variables(self, schema: &Schema) -> std::ops::Range<usize> {
        match self {
            ClimateMode::None => 0..schema.climate_dim(),
            other => other.variables(schema),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClimateMode::None => "none",
            ClimateMode::All => "all",
            ClimateMode::Temperature => "temperature",
            ClimateMode::Precipitation => "precipitation",
        }
    }
}

impl fmt::Display for ClimateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClimateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ClimateMode::None),
            "all" => Ok(ClimateMode::All),
            "temperature" => Ok(ClimateMode::Temperature),
            "precipitation" => Ok(ClimateMode::Precipitation),
            other => Err(Error::Config(format!(
                "unknown climate mode '{other}' (expected none, all, temperature or precipitation)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub classes: Vec<String>,
    pub schema: Schema,
    /// Statistics over every sample; experiments refit on their training split.
    pub stats: NormStats,
    pub median_lat: f64,
    pub median_lon: f64,
    pub provenance: Provenance,
    /// Observation cells filled in during construction.
    pub imputed_cells: usize,
}

impl Dataset {
    /// Assign regions, impute missing cells with the per-channel mean of the
    /// observed cells, and compute statistics.
    pub fn build(
        mut samples: Vec<Sample>,
        classes: Vec<String>,
        schema: Schema,
        provenance: Provenance,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        if classes.is_empty() {
            return Err(Error::Empty("class list"));
        }
        let cells = schema.cells();
        for (i, s) in samples.iter().enumerate() {
            if s.timeseries.len() != cells || s.missing.len() != cells {
                return Err(Error::Data(format!("sample {i}: expected {cells} observation cells")));
            }
            if s.climate.len() != schema.climate_dim() {
                return Err(Error::Data(format!(
                    "sample {i}: expected {} climate variables, found {}",
                    schema.climate_dim(),
                    s.climate.len()
                )));
            }
            if s.label >= classes.len() {
                return Err(Error::Data(format!("sample {i}: label {} out of range", s.label)));
            }
        }
        let points: Vec<(f64, f64)> = samples.iter().map(|s| (s.lat, s.lon)).collect();
        let assignment = assign_regions(&points)?;
        for (s, r) in samples.iter_mut().zip(&assignment.regions) {
            s.region = *r;
        }

        let all: Vec<usize> = (0..samples.len()).collect();
        let mut dataset = Dataset {
            samples,
            classes,
            schema,
            stats: NormStats {
                channel_mean: vec![],
                channel_std: vec![],
                climate_mean: vec![],
                climate_std: vec![],
            },
            median_lat: assignment.median_lat,
            median_lon: assignment.median_lon,
            provenance,
            imputed_cells: 0,
        };
        dataset.stats = NormStats::fit(&dataset, &all)?;
        let c = dataset.schema.channels();
        let mut imputed = 0;
        for s in &mut dataset.samples {
            for (cell, (v, miss)) in s.timeseries.iter_mut().zip(&s.missing).enumerate() {
                if *miss {
                    *v = dataset.stats.channel_mean[cell % c];
                    imputed += 1;
                }
            }
            if s.timeseries.iter().chain(&s.climate).any(|v| !v.is_finite()) {
                return Err(Error::Data("non-finite value after imputation".into()));
            }
        }
        dataset.imputed_cells = imputed;
        Ok(dataset)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.samples[i].label).collect()
    }

    pub fn region_indices(&self, region: Region) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.samples[i].region == region).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionAssignment {
    pub regions: Vec<Region>,
    pub median_lat: f64,
    pub median_lon: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Region for one point given the medians; ties go to the north/east side.
pub fn region_of(lat: f64, lon: f64, median_lat: f64, median_lon: f64) -> Region {
    match (lat >= median_lat, lon >= median_lon) {
        (false, false) => 0,
        (true, false) => 1,
        (false, true) => 2,
        (true, true) => 3,
    }
}

/// Split `(lat, lon)` points into quadrants about their median latitude and longitude.
pub fn assign_regions(points: &[(f64, f64)]) -> Result<RegionAssignment> {
    if points.is_empty() {
        return Err(Error::Empty("points"));
    }
    let lats: Vec<f64> = points.iter().map(|p| p.0).collect();
    let lons: Vec<f64> = points.iter().map(|p| p.1).collect();
    let median_lat = median(&lats);
    let median_lon = median(&lons);
    let regions = points
        .iter()
        .map(|&(lat, lon)| region_of(lat, lon, median_lat, median_lon))
        .collect();
    Ok(RegionAssignment {
        regions,
        median_lat,
        median_lon,
    })
}

/// Keep only samples whose class is in `allowed`, re-indexing labels by
/// allow-list order.
pub fn curate_classes(raw: Vec<RawSample>, allowed: &[&str], schema: Schema, provenance: Provenance) -> Result<Dataset> {
    if allowed.is_empty() {
        return Err(Error::Config("empty class allow-list".into()));
    }
    for (i, name) in allowed.iter().enumerate() {
        let seen_in_data = raw.iter().any(|r| r.label == *name);
        if !classes::is_known_class(name) && !seen_in_data {
            return Err(Error::Config(format!("unknown class name '{name}' in allow-list")));
        }
        if allowed[..i].contains(name) {
            return Err(Error::Config(format!("duplicate class name '{name}' in allow-list")));
        }
    }
    let samples: Vec<Sample> = raw
        .into_iter()
        .filter_map(|r| {
            let label = allowed.iter().position(|a| *a == r.label)?;
            Some(Sample {
                lat: r.lat,
                lon: r.lon,
                timeseries: r.timeseries,
                missing: r.missing,
                climate: r.climate,
                label,
                region: 0,
            })
        })
        .collect();
    if samples.is_empty() {
        return Err(Error::Data("no samples left after class curation".into()));
    }
    Dataset::build(
        samples,
        allowed.iter().map(|s| s.to_string()).collect(),
        schema,
        provenance,
    )
}

/// Leave-one-region-out split with a random validation subset of the rest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitPlan {
    pub test_region: Region,
    pub val_fraction: f64,
    pub seed: u64,
}

impl SplitPlan {
    pub fn new(test_region: Region, seed: u64) -> Self {
        SplitPlan {
            test_region,
            val_fraction: 0.10,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn new(dataset: &Dataset, plan: &SplitPlan) -> Result<Self> {
        if plan.test_region as usize >= NUM_REGIONS {
            return Err(Error::Config(format!("test region {} not in 0..4", plan.test_region)));
        }
        if !(0.0..1.0).contains(&plan.val_fraction) {
            return Err(Error::Config(format!("val_fraction {} not in [0, 1)", plan.val_fraction)));
        }
        let test = dataset.region_indices(plan.test_region);
        let mut rest: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.samples[i].region != plan.test_region)
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
        rest.shuffle(&mut rng);
        let n_val = (rest.len() as f64 * plan.val_fraction).round() as usize;
        let mut val = rest[..n_val].to_vec();
        let mut train = rest[n_val..].to_vec();
        val.sort_unstable();
        train.sort_unstable();
        Ok(Split { train, val, test })
    }
}

/// Standardized model inputs for a set of samples, `[m, T, C]` with `C` =
/// observation channels plus the climate variables selected by `mode`
/// repeated at every timepoint. Missing cells become the training mean (0 after scaling).
pub fn make_model_input(dataset: &Dataset, indices: &[usize], stats: &NormStats, mode: ClimateMode) -> Result<Tensor> {
    let schema = &dataset.schema;
    if stats.channel_mean.len() != schema.channels() || stats.climate_mean.len() != schema.climate_dim() {
        return Err(Error::Data("normalization stats do not match the dataset schema".into()));
    }
    let t = schema.timepoints;
    let c_obs = schema.channels();
    let vars = mode.variables(schema);
    let c = c_obs + vars.len();
    let mut data = Vec::with_capacity(indices.len() * t * c);
    let mut climate = Vec::with_capacity(vars.len());
    for &i in indices {
        let s = dataset
            .samples
            .get(i)
            .ok_or_else(|| Error::Invalid(format!("sample index {i} out of range")))?;
        climate.clear();
        climate.extend(vars.clone().map(|v| stats.standardize_climate(v, s.climate[v])));
        for step in 0..t {
            for ch in 0..c_obs {
                let cell = step * c_obs + ch;
                data.push(if s.missing[cell] {
                    0.0
                } else {
                    (s.timeseries[cell] - stats.channel_mean[ch]) / stats.channel_std[ch]
                });
            }
            data.extend_from_slice(&climate);
        }
    }
    Tensor::new(vec![indices.len(), t, c], data)
}
