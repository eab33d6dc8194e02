//! Continuous-domain synthetic benchmark.
//!
//! A smooth vector field `v(x, y)` of low-frequency sinusoids plays the role of
//! climate. Class prevalence drifts with `v`, and observations are per-class
//! template curves shifted by an affine function of `v`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Provenance, Sample, Schema};
use crate::error::{Error, Result};

pub const LAT_RANGE: (f64, f64) = (25.0, 49.0);
pub const LON_RANGE: (f64, f64) = (-124.0, -67.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    /// Points per side; the dataset has `grid²` samples.
    pub grid: usize,
    pub domain_dim: usize,
    pub classes: usize,
    pub timepoints: usize,
    pub channels: usize,
    /// Sinusoids per domain dimension.
    pub harmonics: usize,
    /// Highest spatial frequency, in cycles across the grid.
    pub max_frequency: f64,
    /// Scale of the `v`-dependent part of the class logits.
    pub drift: f64,
    /// Spread of the per-class template curves.
    pub separation: f64,
    /// Shift of every observation by a class-independent affine map of `v`.
    pub modulation: f64,
    /// Additional class-specific affine response to `v`.
    pub class_modulation: f64,
    pub noise: f64,
    /// Probability that a whole timepoint is missing.
    pub cloud: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            grid: 160,
            domain_dim: 8,
            classes: 5,
            timepoints: 8,
            channels: 9,
            harmonics: 3,
            max_frequency: 1.5,
            drift: 2.0,
            separation: 0.1,
            modulation: 0.5,
            class_modulation: 0.0,
            noise: 0.3,
            cloud: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.grid < 2 {
            return bad("grid must be at least 2");
        }
        if self.domain_dim == 0 || self.timepoints == 0 || self.channels == 0 || self.harmonics == 0 {
            return bad("domain_dim, timepoints, channels and harmonics must be positive");
        }
        if self.classes < 2 {
            return bad("need at least 2 classes");
        }
        for (name, v) in [
            ("max_frequency", self.max_frequency),
            ("drift", self.drift),
            ("separation", self.separation),
            ("modulation", self.modulation),
            ("class_modulation", self.class_modulation),
            ("noise", self.noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(&format!("{name} must be finite and non-negative"));
            }
        }
        if !(0.0..1.0).contains(&self.cloud) {
            return bad("cloud must be in [0, 1)");
        }
        Ok(())
    }

    pub fn schema(&self) -> Schema {
        Schema {
            timepoints: self.timepoints,
            channel_names: (0..self.channels).map(|c| format!("C{c}")).collect(),
            climate_names: (0..self.domain_dim).map(|k| format!("v{:02}", k + 1)).collect(),
            temperature_vars: self.domain_dim.div_ceil(2),
        }
    }
}

/// `amplitude · sin(2π (fx·x + fy·y) + phase)` on unit-square coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Harmonic {
    pub amplitude: f64,
    pub fx: f64,
    pub fy: f64,
    pub phase: f64,
}

impl Harmonic {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let w = std::f64::consts::TAU;
        self.amplitude * (w * (self.fx * x + self.fy * y) + self.phase).sin()
    }
}

/// One harmonic sum per domain dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainField {
    pub dims: Vec<Vec<Harmonic>>,
}

impl DomainField {
    pub fn sample(dim: usize, harmonics: usize, max_frequency: f64, rng: &mut ChaCha8Rng) -> Self {
        // unit variance per dimension on average
        let amp = Normal::new(0.0, (2.0 / harmonics as f64).sqrt()).unwrap();
        let dims = (0..dim)
            .map(|_| {
                (0..harmonics)
                    .map(|_| Harmonic {
                        amplitude: amp.sample(rng),
                        fx: rng.random_range(-max_frequency..=max_frequency),
                        fy: rng.random_range(-max_frequency..=max_frequency),
                        phase: rng.random_range(0.0..std::f64::consts::TAU),
                    })
                    .collect()
            })
            .collect();
        DomainField { dims }
    }

    pub fn eval(&self, x: f64, y: f64) -> Vec<f64> {
        self.dims
            .iter()
            .map(|hs| hs.iter().map(|h| h.eval(x, y)).sum())
            .collect()
    }
}

/// Unit-square coordinates of grid cell `(row, col)`; rows run south to north.
pub fn grid_coords(grid: usize, row: usize, col: usize) -> (f64, f64) {
    let n = grid as f64;
    ((col as f64 + 0.5) / n, (row as f64 + 0.5) / n)
}

pub fn to_lat_lon(x: f64, y: f64) -> (f64, f64) {
    (
        LAT_RANGE.0 + y * (LAT_RANGE.1 - LAT_RANGE.0),
        LON_RANGE.0 + x * (LON_RANGE.1 - LON_RANGE.0),
    )
}

struct Generator {
    field: DomainField,
    /// `[K]` logit offsets and `[K × d]` drift weights.
    bias: Vec<f64>,
    drift_w: Vec<f64>,
    /// `[K × T × C]` templates.
    templates: Vec<f64>,
    /// `[T × C × d]` shared and `[K × T × C × d]` class-specific responses to `v`.
    shared: Vec<f64>,
    per_class: Vec<f64>,
}

fn normals(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

impl Generator {
    fn new(spec: &SyntheticSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (k, t, c, d) = (spec.classes, spec.timepoints, spec.channels, spec.domain_dim);
        let field = DomainField::sample(d, spec.harmonics, spec.max_frequency, &mut rng);
        let bias = normals(&mut rng, k, 0.3);
        let drift_w = normals(&mut rng, k * d, 1.0 / (d as f64).sqrt());

        // smooth seasonal curve per (class, channel): offset + one annual cycle
        let mut templates = vec![0.0; k * t * c];
        for class in 0..k {
            for ch in 0..c {
                let offset: f64 = normals(&mut rng, 1, spec.separation)[0];
                let amp: f64 = normals(&mut rng, 1, spec.separation)[0];
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                for step in 0..t {
                    let angle = std::f64::consts::TAU * step as f64 / t as f64 + phase;
                    templates[(class * t + step) * c + ch] = offset + amp * angle.sin();
                }
            }
        }
        let scale = 1.0 / (d as f64).sqrt();
        let shared = normals(&mut rng, t * c * d, scale);
        let per_class = normals(&mut rng, k * t * c * d, scale);
        Generator {
            field,
            bias,
            drift_w,
            templates,
            shared,
            per_class,
        }
    }
}

/// Build the benchmark. Every grid point draws from its own RNG stream, so
/// the output does not depend on generation order.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let (k, t, c, d) = (spec.classes, spec.timepoints, spec.channels, spec.domain_dim);
    let g = Generator::new(spec);
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut samples = Vec::with_capacity(spec.grid * spec.grid);
    let mut logits = vec![0.0; k];
    for row in 0..spec.grid {
        for col in 0..spec.grid {
            let idx = row * spec.grid + col;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(idx as u64 + 1);
            let (x, y) = grid_coords(spec.grid, row, col);
            let v = g.field.eval(x, y);

            for (class, l) in logits.iter_mut().enumerate() {
                let w = &g.drift_w[class * d..(class + 1) * d];
                *l = g.bias[class] + spec.drift * w.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
            }
            let label = sample_softmax(&logits, rng.random::<f64>());

            let mut timeseries = vec![0.0; t * c];
            let mut missing = vec![false; t * c];
            for step in 0..t {
                let cloudy = spec.cloud > 0.0 && rng.random::<f64>() < spec.cloud;
                for ch in 0..c {
                    let cell = step * c + ch;
                    let sh = &g.shared[cell * d..(cell + 1) * d];
                    let pc = &g.per_class[(label * t * c + cell) * d..(label * t * c + cell + 1) * d];
                    let mut value = g.templates[label * t * c + cell];
                    for j in 0..d {
                        value += (spec.modulation * sh[j] + spec.class_modulation * pc[j]) * v[j];
                    }
                    value += noise.sample(&mut rng);
                    timeseries[cell] = value;
                    missing[cell] = cloudy;
                }
            }
            let (lat, lon) = to_lat_lon(x, y);
            samples.push(Sample {
                lat,
                lon,
                timeseries,
                missing,
                climate: v,
                label,
                region: 0,
            });
        }
    }
    Dataset::build(
        samples,
        (0..k).map(|i| format!("class{i}")).collect(),
        spec.schema(),
        Provenance::Synthetic { seed: spec.seed },
    )
}

/// Inverse-CDF draw from `softmax(logits)` using a uniform `u ∈ [0, 1)`.
fn sample_softmax(logits: &[f64], u: f64) -> usize {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w / total;
        if u < acc {
            return i;
        }
    }
    logits.len() - 1
}
