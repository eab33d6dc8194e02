//! Leave-one-region-out experiment grid over loss weights and climate modes.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::trainer::{evaluate, resolve_model_config, train, EpochRecord, StopReason, TrainConfig};
use crate::analysis::MetricsReport;
use crate::data::{ClimateMode, Dataset, Region, Split, SplitPlan, NUM_REGIONS};
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::model::ModelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub test_regions: Vec<Region>,
    pub c_values: Vec<f64>,
    pub climate_modes: Vec<ClimateMode>,
    /// Add a no-climate, `c = 0` row.
    pub include_baseline: bool,
    pub trials: usize,
    /// Trial `t` uses seed `seed + t` for both the split and the model.
    pub seed: u64,
    pub val_fraction: f64,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            test_regions: (0..NUM_REGIONS as Region).collect(),
            c_values: vec![-1.0, -0.1, 0.0, 0.001, 0.01, 0.1, 1.0],
            climate_modes: vec![ClimateMode::All],
            include_baseline: true,
            trials: 5,
            seed: 0,
            val_fraction: 0.10,
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.test_regions.is_empty() {
            return Err(Error::Config("no test regions".into()));
        }
        if let Some(r) = self.test_regions.iter().find(|&&r| r as usize >= NUM_REGIONS) {
            return Err(Error::Config(format!("test region {r} not in 0..4")));
        }
        if let Some(c) = self.c_values.iter().find(|c| !c.is_finite()) {
            return Err(Error::Config(format!("non-finite c value {c}")));
        }
        if self.settings().is_empty() {
            return Err(Error::Config("grid has no settings".into()));
        }
        self.loss.validate()?;
        self.train.validate()
    }

    /// Rows of the results table, in order.
    pub fn settings(&self) -> Vec<Setting> {
        let mut out = Vec::new();
        if self.include_baseline {
            out.push(Setting {
                label: "Baseline".into(),
                mode: ClimateMode::None,
                c: 0.0,
            });
        }
        for &mode in &self.climate_modes {
            for &c in &self.c_values {
                let label = if self.climate_modes.len() == 1 {
                    format!("c = {c}")
                } else if self.c_values.len() == 1 {
                    mode_label(mode).to_string()
                } else {
                    format!("{} c = {c}", mode_label(mode))
                };
                out.push(Setting { label, mode, c });
            }
        }
        out
    }
}

pub fn mode_label(mode: ClimateMode) -> &'static str {
    match mode {
        ClimateMode::None => "No climate",
        ClimateMode::All => "All",
        ClimateMode::Temperature => "Temperature only",
        ClimateMode::Precipitation => "Precipitation only",
    }
}

/// One row of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub label: String,
    pub mode: ClimateMode,
    pub c: f64,
}

/// Everything persisted for one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub setting: Setting,
    pub test_region: Region,
    pub seed: u64,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub log: Vec<EpochRecord>,
    pub regression_trace: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop: StopReason,
    pub train_metrics: MetricsReport,
    pub val_metrics: MetricsReport,
    pub test_metrics: MetricsReport,
}

impl RunRecord {
    pub fn file_stem(&self) -> String {
        format!(
            "run_{}_c{}_r{}_s{}",
            self.setting.mode, self.setting.c, self.test_region, self.seed
        )
    }
}

/// Train one setting on the three source regions and score every partition.
pub fn run_single(dataset: &Dataset, setting: &Setting, test_region: Region, seed: u64, exp: &ExperimentConfig) -> Result<RunRecord> {
    let plan = SplitPlan {
        test_region,
        val_fraction: exp.val_fraction,
        seed,
    };
    let split = Split::new(dataset, &plan)?;
    if split.test.is_empty() {
        return Err(Error::Empty("test region"));
    }
    let loss = LossConfig { c: setting.c, ..exp.loss };
    let train_cfg = TrainConfig {
        seed,
        ..exp.train.clone()
    };
    let outcome = train(dataset, &split, setting.mode, &exp.model, &loss, &train_cfg)?;
    let batch = train_cfg.effective_batch_size(dataset.len());
    let score = |idx: &[usize]| evaluate(&outcome.params, dataset, idx, &outcome.stats, setting.mode, batch);
    Ok(RunRecord {
        setting: setting.clone(),
        test_region,
        seed,
        model: resolve_model_config(&exp.model, dataset, setting.mode),
        loss,
        train: train_cfg.clone(),
        train_metrics: score(&split.train)?,
        val_metrics: score(&split.val)?,
        test_metrics: score(&split.test)?,
        log: outcome.log,
        regression_trace: outcome.regression_trace,
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
        stop: outcome.stop,
    })
}

/// Aggregate of one (setting, region) cell over trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub setting: String,
    pub test_region: Region,
    /// Held-out macro accuracy per successful trial.
    pub macro_accuracy: Vec<f64>,
    pub overall_accuracy: Vec<f64>,
    pub macro_mean: f64,
    pub macro_std: f64,
    pub overall_mean: f64,
    pub overall_std: f64,
    pub failures: Vec<String>,
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResults {
    pub settings: Vec<Setting>,
    pub test_regions: Vec<Region>,
    /// Row-major over settings, then regions.
    pub cells: Vec<CellSummary>,
    pub runs: Vec<RunRecord>,
}

impl GridResults {
    pub fn cell(&self, setting: usize, region: Region) -> Option<&CellSummary> {
        let col = self.test_regions.iter().position(|&r| r == region)?;
        self.cells.get(setting * self.test_regions.len() + col)
    }

    /// Table layout: one row per setting, one column per test region, cells
    /// are mean held-out macro accuracy over trials.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("setting");
        for r in &self.test_regions {
            out.push_str(&format!(",{r}"));
        }
        out.push('\n');
        for (i, s) in self.settings.iter().enumerate() {
            out.push_str(&csv_field(&s.label));
            for &r in &self.test_regions {
                let v = self.cell(i, r).map_or(f64::NAN, |c| c.macro_mean);
                out.push_str(&format!(",{v:.4}"));
            }
            out.push('\n');
        }
        out
    }

    /// Long layout with both metrics, spreads and failure counts.
    pub fn detail_csv(&self) -> String {
        let mut out = String::from("setting,test_region,trials,macro_mean,macro_std,overall_mean,overall_std,failures\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{}\n",
                csv_field(&c.setting),
                c.test_region,
                c.macro_accuracy.len(),
                c.macro_mean,
                c.macro_std,
                c.overall_mean,
                c.overall_std,
                c.failures.len()
            ));
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Collate finished runs into table cells.
pub fn summarize(settings: &[Setting], test_regions: &[Region], runs: &[RunRecord], failures: &[(usize, Region, String)]) -> Vec<CellSummary> {
    let mut cells = Vec::new();
    for (i, s) in settings.iter().enumerate() {
        for &r in test_regions {
            let mut mine: Vec<&RunRecord> = runs
                .iter()
                .filter(|run| run.test_region == r && run.setting == *s)
                .collect();
            mine.sort_by_key(|run| run.seed);
            let macro_accuracy: Vec<f64> = mine.iter().map(|run| run.test_metrics.macro_accuracy).collect();
            let overall_accuracy: Vec<f64> = mine.iter().map(|run| run.test_metrics.overall).collect();
            let (macro_mean, macro_std) = mean_std(&macro_accuracy);
            let (overall_mean, overall_std) = mean_std(&overall_accuracy);
            cells.push(CellSummary {
                setting: s.label.clone(),
                test_region: r,
                macro_accuracy,
                overall_accuracy,
                macro_mean,
                macro_std,
                overall_mean,
                overall_std,
                failures: failures
                    .iter()
                    .filter(|(si, fr, _)| *si == i && *fr == r)
                    .map(|(_, _, m)| m.clone())
                    .collect(),
            });
        }
    }
    cells
}

/// Run every (setting, region, trial) job on up to `jobs` threads. A failed
/// run is recorded against its cell and the grid continues. `on_run` sees
/// each finished run (from worker threads, in completion order).
pub fn run_experiment_grid(
    dataset: &Dataset,
    exp: &ExperimentConfig,
    jobs: usize,
    on_run: &(dyn Fn(&RunRecord) + Sync),
) -> Result<GridResults> {
    exp.validate()?;
    let settings = exp.settings();
    let mut work = Vec::new();
    for (si, _) in settings.iter().enumerate() {
        for &r in &exp.test_regions {
            for t in 0..exp.trials {
                work.push((si, r, exp.seed + t as u64));
            }
        }
    }
    let slots: Vec<Mutex<Option<Result<RunRecord>>>> = work.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, work.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(si, r, seed)) = work.get(i) else { break };
                let result = run_single(dataset, &settings[si], r, seed, exp);
                if let Ok(run) = &result {
                    on_run(run);
                }
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (slot, &(si, r, seed)) in slots.into_iter().zip(&work) {
        match slot.into_inner().unwrap() {
            Some(Ok(run)) => runs.push(run),
            Some(Err(e)) => failures.push((si, r, format!("seed {seed}: {e}"))),
            None => failures.push((si, r, format!("seed {seed}: not run"))),
        }
    }
    let cells = summarize(&settings, &exp.test_regions, &runs, &failures);
    Ok(GridResults {
        settings,
        test_regions: exp.test_regions.clone(),
        cells,
        runs,
    })
}
