//! Command-line front end: a TOML run config plus flag overrides.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{emit_heatmap, knn_climate, knn_features, Field, KnnResult, MetricsReport, Palette};
use crate::data::{
    generate_synthetic, ingest_csv, load_dataset, save_dataset, ClimateMode, Dataset, NormStats, Region, Split,
    SplitPlan, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, save_checkpoint};
use crate::training::{
    evaluate, infer, run_experiment_grid, summarize, train, ExperimentConfig, GridResults, RunRecord, Setting,
};

/// File-level configuration. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Dataset cache read by train, eval, grid and knn; written by generate and ingest.
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub test_region: Region,
    pub climate_input: ClimateMode,
    pub c: f64,
    pub synthetic: SyntheticSpec,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            out: PathBuf::from("arcdog_out"),
            test_region: 0,
            climate_input: ClimateMode::All,
            c: 0.0,
            synthetic: SyntheticSpec::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().replace('\n', " ")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn data_path(&self) -> PathBuf {
        self.data.clone().unwrap_or_else(|| self.out.join("dataset.bin"))
    }
}

#[derive(Debug, Parser)]
#[command(name = "arcdog", version, about = "Closed-form domain-regression training for crop classification")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub test_region: Option<Region>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub c: Option<f64>,
    #[arg(long, global = true)]
    pub climate_input: Option<ClimateMode>,
    /// Dataset cache path.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Parallel grid workers.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the synthetic benchmark and write a dataset cache.
    Generate,
    /// Read a gridded-sample CSV and write a dataset cache.
    Ingest {
        csv: PathBuf,
    },
    /// Train one model with the held-out region excluded.
    Train,
    /// Score a trained run on a region.
    Eval {
        /// Output directory of a `train` run.
        #[arg(long)]
        run: PathBuf,
    },
    /// Train every (setting, region, trial) cell and write the summary tables.
    Grid,
    /// Nearest-neighbour region maps over climate, or over learned features with `--run`.
    Knn {
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Collate per-run JSON files into the summary tables.
    Report {
        /// Directory of run JSON files.
        runs: PathBuf,
    },
}

impl Common {
    /// Load the config file, then apply flag overrides for `command`.
    pub fn resolve(&self, command: &Command) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.data {
            cfg.data = Some(d.clone());
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(r) = self.test_region {
            cfg.test_region = r;
        }
        if let Some(c) = self.c {
            cfg.c = c;
        }
        if let Some(m) = self.climate_input {
            cfg.climate_input = m;
        }
        if let Some(s) = self.seed {
            cfg.synthetic.seed = s;
            cfg.experiment.seed = s;
        }
        if let Command::Grid = command {
            if let Some(r) = self.test_region {
                cfg.experiment.test_regions = vec![r];
            }
            if let Some(c) = self.c {
                cfg.experiment.c_values = vec![c];
            }
            if let Some(m) = self.climate_input {
                cfg.experiment.climate_modes = vec![m];
            }
        }
        if self.jobs == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        if cfg.test_region as usize >= crate::data::NUM_REGIONS {
            return Err(Error::Config(format!("test region {} not in 0..4", cfg.test_region)));
        }
        Ok(cfg)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

#[derive(Serialize)]
struct RunInfo<'a> {
    command: &'a str,
    arcdog_version: &'a str,
    config: &'a RunConfig,
}

/// Create the output directory and echo the resolved config into it.
fn prepare_out(cfg: &RunConfig, command: &str) -> Result<()> {
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let toml = toml::to_string_pretty(cfg).map_err(|e| Error::Config(e.to_string()))?;
    let path = cfg.out.join("config.resolved.toml");
    fs::write(&path, toml).map_err(|e| Error::io(&path, e))?;
    write_json(
        &cfg.out.join("run_info.json"),
        &RunInfo {
            command,
            arcdog_version: env!("CARGO_PKG_VERSION"),
            config: cfg,
        },
    )
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Generate => "generate",
        Command::Ingest { .. } => "ingest",
        Command::Train => "train",
        Command::Eval { .. } => "eval",
        Command::Grid => "grid",
        Command::Knn { .. } => "knn",
        Command::Report { .. } => "report",
    }
}

fn single_setting(cfg: &RunConfig) -> Setting {
    Setting {
        label: format!("{} c = {}", cfg.climate_input, cfg.c),
        mode: cfg.climate_input,
        c: cfg.c,
    }
}

fn write_grid(out: &Path, grid: &GridResults) -> Result<()> {
    let summary = out.join("summary.csv");
    fs::write(&summary, grid.summary_csv()).map_err(|e| Error::io(&summary, e))?;
    let detail = out.join("summary_detail.csv");
    fs::write(&detail, grid.detail_csv()).map_err(|e| Error::io(&detail, e))?;
    write_json(&out.join("grid.json"), &grid.cells)
}

fn knn_outputs(cfg: &RunConfig, name: &str, result: &KnnResult) -> Result<()> {
    write_json(&cfg.out.join(format!("{name}.json")), result)?;
    let distance = Field::new(&result.coords, &result.distance)?;
    emit_heatmap(&distance, &cfg.out.join(format!("{name}_distance")), Palette::Ramp)?;
    let regions: Vec<f64> = result.region.iter().map(|&r| f64::from(r)).collect();
    emit_heatmap(
        &Field::new(&result.coords, &regions)?,
        &cfg.out.join(format!("{name}_region")),
        Palette::Regions,
    )
}

fn execute(cli: &Cli) -> Result<String> {
    let cfg = cli.common.resolve(&cli.command)?;
    let name = command_name(&cli.command);
    let load = || load_dataset(&cfg.data_path());
    match &cli.command {
        Command::Generate => {
            let ds = generate_synthetic(&cfg.synthetic)?;
            prepare_out(&cfg, name)?;
            save_dataset(&ds, &cfg.data_path())?;
            Ok(format!("wrote {} samples to {}", ds.len(), cfg.data_path().display()))
        }
        Command::Ingest { csv } => {
            let ds = ingest_csv(csv)?;
            prepare_out(&cfg, name)?;
            save_dataset(&ds, &cfg.data_path())?;
            write_json(&cfg.out.join("stats.json"), &ds.stats)?;
            Ok(format!(
                "wrote {} samples ({} imputed cells) to {}",
                ds.len(),
                ds.imputed_cells,
                cfg.data_path().display()
            ))
        }
        Command::Train => {
            let ds = load()?;
            prepare_out(&cfg, name)?;
            let exp = &cfg.experiment;
            let setting = single_setting(&cfg);
            let plan = SplitPlan {
                test_region: cfg.test_region,
                val_fraction: exp.val_fraction,
                seed: exp.seed,
            };
            let split = Split::new(&ds, &plan)?;
            if split.test.is_empty() {
                return Err(Error::Empty("test region"));
            }
            let loss = crate::loss::LossConfig { c: cfg.c, ..exp.loss };
            let train_cfg = crate::training::TrainConfig {
                seed: exp.seed,
                ..exp.train.clone()
            };
            let outcome = train(&ds, &split, cfg.climate_input, &exp.model, &loss, &train_cfg)?;
            save_checkpoint(&outcome.params, &cfg.out.join("model.ckpt"))?;
            write_json(&cfg.out.join("norm_stats.json"), &outcome.stats)?;
            let batch = train_cfg.effective_batch_size(ds.len());
            let score = |idx: &[usize]| evaluate(&outcome.params, &ds, idx, &outcome.stats, cfg.climate_input, batch);
            let record = RunRecord {
                setting,
                test_region: cfg.test_region,
                seed: exp.seed,
                model: outcome.params.config().clone(),
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
            };
            write_json(&cfg.out.join("metrics.json"), &record)?;
            Ok(format!(
                "test macro accuracy {:.4}, overall {:.4} after {} epochs",
                record.test_metrics.macro_accuracy,
                record.test_metrics.overall,
                record.log.len()
            ))
        }
        Command::Eval { run } => {
            let ds = load()?;
            let params = load_checkpoint(&run.join("model.ckpt"))?;
            let stats: NormStats = read_json(&run.join("norm_stats.json"))?;
            let record: RunRecord = read_json(&run.join("metrics.json"))?;
            let region = cli.common.test_region.unwrap_or(record.test_region);
            let idx = ds.region_indices(region);
            if idx.is_empty() {
                return Err(Error::Empty("evaluation region"));
            }
            let batch = record.train.effective_batch_size(ds.len());
            let report: MetricsReport = evaluate(&params, &ds, &idx, &stats, record.setting.mode, batch)?;
            prepare_out(&cfg, name)?;
            write_json(&cfg.out.join(format!("eval_region{region}.json")), &report)?;
            Ok(format!(
                "region {region}: macro accuracy {:.4}, overall {:.4} over {} samples",
                report.macro_accuracy, report.overall, report.count
            ))
        }
        Command::Grid => {
            let ds = load()?;
            prepare_out(&cfg, name)?;
            let runs_dir = cfg.out.join("runs");
            fs::create_dir_all(&runs_dir).map_err(|e| Error::io(&runs_dir, e))?;
            let on_run = |run: &RunRecord| {
                if let Err(e) = write_json(&runs_dir.join(format!("{}.json", run.file_stem())), run) {
                    log::error!("{e}");
                }
            };
            let grid = run_experiment_grid(&ds, &cfg.experiment, cli.common.jobs, &on_run)?;
            write_grid(&cfg.out, &grid)?;
            let failed: usize = grid.cells.iter().map(|c| c.failures.len()).sum();
            Ok(format!(
                "{} runs finished, {failed} failed; summary in {}",
                grid.runs.len(),
                cfg.out.join("summary.csv").display()
            ))
        }
        Command::Knn { run } => {
            let ds = load()?;
            prepare_out(&cfg, name)?;
            let plan = SplitPlan {
                test_region: cfg.test_region,
                val_fraction: 0.0,
                seed: cfg.experiment.seed,
            };
            let split = Split::new(&ds, &plan)?;
            let (name, result) = match run {
                None => {
                    let stats = NormStats::fit(&ds, &split.train)?;
                    let vars = cfg.climate_input.target_variables(&ds.schema);
                    ("knn_climate", knn_climate(&ds, &split.train, &split.test, &stats, vars)?)
                }
                Some(dir) => ("knn_features", feature_knn(&ds, &split, dir)?),
            };
            knn_outputs(&cfg, name, &result)?;
            let mean = result.distance.iter().sum::<f64>() / result.distance.len().max(1) as f64;
            Ok(format!("{} query points, mean nearest distance {mean:.4}", result.distance.len()))
        }
        Command::Report { runs } => {
            let mut records: Vec<RunRecord> = Vec::new();
            let mut entries: Vec<PathBuf> = fs::read_dir(runs)
                .map_err(|e| Error::io(runs, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            entries.sort();
            for p in &entries {
                records.push(read_json(p)?);
            }
            if records.is_empty() {
                return Err(Error::Empty("run directory"));
            }
            let mut settings: Vec<Setting> = Vec::new();
            let mut regions: Vec<Region> = Vec::new();
            for r in &records {
                if !settings.contains(&r.setting) {
                    settings.push(r.setting.clone());
                }
                if !regions.contains(&r.test_region) {
                    regions.push(r.test_region);
                }
            }
            settings.sort_by(|a, b| {
                (a.mode != ClimateMode::None, a.mode as u8, a.c)
                    .partial_cmp(&(b.mode != ClimateMode::None, b.mode as u8, b.c))
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            regions.sort_unstable();
            let cells = summarize(&settings, &regions, &records, &[]);
            let grid = GridResults {
                settings,
                test_regions: regions,
                cells,
                runs: Vec::new(),
            };
            prepare_out(&cfg, name)?;
            write_grid(&cfg.out, &grid)?;
            Ok(format!("collated {} runs into {}", records.len(), cfg.out.join("summary.csv").display()))
        }
    }
}

/// 1-NN of held-out-region features against source-region features.
fn feature_knn(ds: &Dataset, split: &Split, run: &Path) -> Result<KnnResult> {
    let params = load_checkpoint(&run.join("model.ckpt"))?;
    let stats: NormStats = read_json(&run.join("norm_stats.json"))?;
    let record: RunRecord = read_json(&run.join("metrics.json"))?;
    let batch = record.train.effective_batch_size(ds.len());
    let mode = record.setting.mode;
    let (_, train_feat) = infer(&params, ds, &split.train, &stats, mode, batch)?;
    let (_, test_feat) = infer(&params, ds, &split.test, &stats, mode, batch)?;
    let regions: Vec<Region> = split.train.iter().map(|&i| ds.samples[i].region).collect();
    let mut result = knn_features(&train_feat, &regions, &test_feat)?;
    result.coords = split.test.iter().map(|&i| (ds.samples[i].lat, ds.samples[i].lon)).collect();
    Ok(result)
}

/// One-line JSON diagnostic for a failed command.
pub fn diagnostic(kind: &str, exit_code: i32, message: &str) -> String {
    serde_json::json!({
        "status": "error",
        "kind": kind,
        "exit_code": exit_code,
        "message": message,
    })
    .to_string()
}

/// Parse `args`, run the command and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let first = e.to_string();
            let line = first.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", diagnostic("usage", 1, line.trim_start_matches("error: ")));
            return 1;
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            let kind = e.kind();
            eprintln!("{}", diagnostic(kind.as_str(), kind.exit_code(), &e.to_string()));
            kind.exit_code()
        }
    }
}
