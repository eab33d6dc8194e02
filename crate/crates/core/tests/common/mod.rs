//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use arcdog::data::{
    csv_header, generate_synthetic, ingest_csv, write_csv, ClimateMode, Dataset, Provenance, Sample, Schema,
    SyntheticSpec, CURATED_CLASSES,
};
use arcdog::loss::{arcdog_loss, LossConfig};
use arcdog::model::{forward, init_params, ModelConfig, ModelParams};
use arcdog::numerics::{grad_check, Ridge, Tape, Tensor, Var};
use arcdog::Result;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

pub fn to_na(t: &Tensor) -> DMatrix<f64> {
    let (r, c) = t.dims2().unwrap();
    DMatrix::from_row_slice(r, c, t.data())
}

pub fn from_na(m: &DMatrix<f64>) -> Tensor {
    let data = (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect();
    Tensor::new(vec![m.nrows(), m.ncols()], data).unwrap()
}

/// Residual norm of the minimum-norm least-squares fit via SVD pseudo-inverse.
pub fn svd_residual(theta: &Tensor, v: &Tensor) -> f64 {
    let a = to_na(theta);
    let b = to_na(v);
    let pinv = a.clone().pseudo_inverse(1e-12).unwrap();
    (&b - &a * (pinv * &b)).norm()
}

pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let s = m.clone().singular_values();
    s.max() / s.min()
}

/// Random `n×n` matrix with condition number below 100.
pub fn well_conditioned_square(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    loop {
        let g = to_na(&gaussian(rng, n, n));
        let m = DMatrix::identity(n, n) + g * (0.5 / (n as f64).sqrt());
        if condition_number(&m) < 100.0 {
            return m;
        }
    }
}

/// `(m, f, d)` with `m ≥ 2f`, so a Gaussian Θ is well conditioned.
pub fn instance_dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    let m = rng.random_range(8..=256);
    let f = rng.random_range(2..=(m / 2).min(64));
    let d = rng.random_range(1..=19);
    (m, f, d)
}

/// A random small classifier, batch and objective at a generic point.
pub struct GradSetup {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub x: Tensor,
    pub v: Tensor,
    pub labels: Vec<usize>,
    pub loss: LossConfig,
}

impl GradSetup {
    pub fn new(seed: u64) -> Result<Self> {
        let mut r = rng(seed);
        // four or more channels keep the post-extractor layer norm away
        // from the all-but-one-dead regime, where its curvature is extreme
        let heads = r.random_range(1..=2);
        let feature_dim = [4, 6, 8][r.random_range(0..3)];
        let config = ModelConfig {
            input_channels: r.random_range(2..=3),
            timepoints: r.random_range(3..=4),
            feature_dim,
            encoder_layers: r.random_range(1..=2),
            heads,
            feedforward_dim: r.random_range(3..=6),
            dropout: 0.0,
            num_classes: r.random_range(2..=3),
            conv_kernel: 3,
        };
        // at least twice as many rows as features, as in training batches
        let batch = 2 * feature_dim + r.random_range(2..=6);
        let domain_dim = r.random_range(1..=3);
        let c = [-1.0, -0.1, 0.5, 1.0][r.random_range(0..4)];
        let mut params = init_params(&config, seed)?;
        // move off the initialization: zero biases put ReLUs exactly on their kink
        for t in params.tensors_mut() {
            for w in t.data_mut() {
                *w += 0.1 * r.sample::<f64, _>(StandardNormal);
            }
        }
        let x = gaussian(&mut r, batch * config.timepoints, config.input_channels).reshape(vec![
            batch,
            config.timepoints,
            config.input_channels,
        ])?;
        let v = gaussian(&mut r, batch, domain_dim);
        let labels = (0..batch).map(|_| r.random_range(0..config.num_classes)).collect();
        let loss = LossConfig {
            c,
            ridge: Ridge::TraceScaled(1e-6),
            ..LossConfig::default()
        };
        Ok(GradSetup {
            config,
            params,
            x,
            v,
            labels,
            loss,
        })
    }

    pub fn objective(&self, tape: &mut Tape, vars: &[Var]) -> Result<Var> {
        let input = tape.constant(self.x.clone());
        let out = forward(tape, &self.config, vars, input, false, &mut rng(0))?;
        Ok(arcdog_loss(tape, out.logits, &self.labels, out.features, &self.v, &self.loss)?.0)
    }

    pub fn value(&self, params: &[Tensor]) -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|t| tape.var(t.clone())).collect();
        let out = self.objective(&mut tape, &vars).unwrap();
        tape.value(out).item()
    }
}

pub struct GradCase {
    pub config: ModelConfig,
    pub batch: usize,
    pub domain_dim: usize,
    pub c: f64,
    pub max_rel_error: f64,
    /// Parameter, flat index, analytic and numeric value at the worst entry.
    pub worst: String,
    pub checked: usize,
    pub kink_crossings: usize,
}

/// Finite-difference check of the full classifier plus objective with
/// respect to every parameter, for a random small configuration.
pub fn model_grad_case(seed: u64) -> Result<GradCase> {
    let setup = GradSetup::new(seed)?;
    let report = grad_check(|tape: &mut Tape, vars| setup.objective(tape, vars), setup.params.tensors(), 1e-5, 1e-4)?;
    let (which, rep) = report
        .inputs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.max_rel_error.total_cmp(&b.1.max_rel_error))
        .expect("model has parameters");
    let worst = format!(
        "{}[{}] analytic {:e} numeric {:e}",
        setup.params.names()[which],
        rep.worst_index,
        rep.analytic,
        rep.numeric
    );
    Ok(GradCase {
        batch: setup.x.shape()[0],
        domain_dim: setup.v.shape()[1],
        c: setup.loss.c,
        config: setup.config,
        max_rel_error: report.max_rel_error,
        worst,
        checked: report.checked,
        kink_crossings: report.kink_crossings,
    })
}

/// Linearly separable toy: each class has its own constant level per
/// channel, well apart relative to the noise.
pub fn separable_toy(n: usize, classes: usize, seed: u64) -> Dataset {
    let (t, c) = (4, 3);
    let schema = Schema {
        timepoints: t,
        channel_names: (0..c).map(|i| format!("C{i}")).collect(),
        climate_names: vec!["v01".into(), "v02".into()],
        temperature_vars: 1,
    };
    let mut r = rng(seed);
    let centers: Vec<Vec<f64>> = (0..classes).map(|k| (0..c).map(|ch| if ch % classes == k { 2.0 } else { -1.0 }).collect()).collect();
    let samples = (0..n)
        .map(|i| {
            let label = i % classes;
            let timeseries = (0..t * c).map(|cell| centers[label][cell % c] + 0.3 * r.sample::<f64, _>(StandardNormal)).collect();
            Sample {
                lat: r.random_range(25.0..49.0),
                lon: r.random_range(-124.0..-67.0),
                timeseries,
                missing: vec![false; t * c],
                climate: vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)],
                label,
                region: 0,
            }
        })
        .collect();
    let names = (0..classes).map(|k| format!("class{k}")).collect();
    Dataset::build(samples, names, schema, Provenance::Synthetic { seed }).unwrap()
}

/// Small dataset with the Landsat schema (9 bands, 19 bioclimatic
/// variables), produced by writing a synthetic field to CSV and ingesting it.
pub fn landsat_dataset(grid: usize, seed: u64, dir: &std::path::Path) -> Dataset {
    let spec = SyntheticSpec {
        grid,
        domain_dim: 19,
        classes: 4,
        cloud: 0.0,
        seed,
        ..SyntheticSpec::default()
    };
    let mut ds = generate_synthetic(&spec).unwrap();
    ds.schema = Schema::landsat();
    ds.classes = CURATED_CLASSES[..4].iter().map(|s| s.to_string()).collect();
    assert_eq!(csv_header(&ds.schema).len(), 3 + 72 + 19);
    let path = dir.join("landsat.csv");
    write_csv(&ds, std::fs::File::create(&path).unwrap()).unwrap();
    ingest_csv(&path).unwrap()
}

/// Exhaustive nearest neighbour with the declared tie-break.
pub fn brute_knn(train: &Tensor, regions: &[u8], test: &Tensor) -> Vec<(u8, usize, f64)> {
    let (n, f) = train.dims2().unwrap();
    let (m, _) = test.dims2().unwrap();
    (0..m)
        .map(|q| {
            let mut all: Vec<(f64, u8, usize)> = (0..n)
                .map(|j| {
                    let d2 = (0..f).map(|k| (train.get2(j, k) - test.get2(q, k)).powi(2)).sum();
                    (d2, regions[j], j)
                })
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            (all[0].1, all[0].2, all[0].0.sqrt())
        })
        .collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

pub fn all_modes() -> [ClimateMode; 4] {
    ClimateMode::ALL_MODES
}
