use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::plateau::Plateau;
use crate::analysis::{argmax_rows, compute_metrics, MetricsReport};
use crate::data::{make_model_input, ClimateMode, Dataset, NormStats, Split};
use crate::error::{Error, Result};
use crate::loss::{arcdog_loss, domain_matrix, LossConfig};
use crate::model::{forward, init_params, ModelConfig, ModelParams};
use crate::numerics::{Tape, Tensor};

/// Datasets smaller than this train with [`DESK_BATCH_SIZE`] unless a batch size is set.
pub const DESK_SCALE_LIMIT: usize = 50_000;
pub const DESK_BATCH_SIZE: usize = 512;
pub const FULL_BATCH_SIZE: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub plateau_factor: f64,
    pub patience: usize,
    pub max_reductions: usize,
    /// `None` picks 512 below 50k samples and 4096 otherwise.
    pub batch_size: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            plateau_factor: 0.1,
            patience: 5,
            max_reductions: 3,
            batch_size: None,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_epochs: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train config: {m}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad("plateau_factor must be in (0, 1)");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.max_reductions == 0 {
            return bad("max_reductions must be at least 1");
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("adam betas must be in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        Ok(())
    }

    pub fn effective_batch_size(&self, dataset_len: usize) -> usize {
        self.batch_size.unwrap_or(if dataset_len < DESK_SCALE_LIMIT {
            DESK_BATCH_SIZE
        } else {
            FULL_BATCH_SIZE
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Plateau,
    EpochCap,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub params: ModelParams,
    pub log: Vec<EpochRecord>,
    /// Mean training-batch regression term per epoch.
    pub regression_trace: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop: StopReason,
    pub stats: NormStats,
}

/// Copy of `base` with the data-dependent sizes filled in.
pub fn resolve_model_config(base: &ModelConfig, dataset: &Dataset, mode: ClimateMode) -> ModelConfig {
    ModelConfig {
        input_channels: mode.input_channels(&dataset.schema),
        timepoints: dataset.schema.timepoints,
        num_classes: dataset.num_classes(),
        ..base.clone()
    }
}

/// Rows `rows` of a tensor along its first axis.
pub fn gather_rows(t: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let mut shape = t.shape().to_vec();
    let Some(n) = shape.first().copied() else {
        return Err(Error::InvalidShape {
            what: "gather_rows input",
            shape,
        });
    };
    let width = t.len().checked_div(n).unwrap_or(0);
    let mut data = Vec::with_capacity(rows.len() * width);
    for &r in rows {
        if r >= n {
            return Err(Error::Invalid(format!("row {r} out of range 0..{n}")));
        }
        data.extend_from_slice(&t.data()[r * width..(r + 1) * width]);
    }
    shape[0] = rows.len();
    Tensor::new(shape, data)
}

/// `n` items cut into `ceil(n / size)` batches whose sizes differ by at most one.
pub fn balanced_batches(n: usize, size: usize) -> Vec<std::ops::Range<usize>> {
    if n == 0 {
        return Vec::new();
    }
    let count = n.div_ceil(size.max(1));
    let (base, extra) = (n / count, n % count);
    let mut start = 0;
    (0..count)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// Inputs, regression targets and labels for one partition.
struct Partition {
    inputs: Tensor,
    domains: Tensor,
    labels: Vec<usize>,
}

impl Partition {
    fn new(dataset: &Dataset, indices: &[usize], stats: &NormStats, mode: ClimateMode) -> Result<Self> {
        Ok(Partition {
            inputs: make_model_input(dataset, indices, stats, mode)?,
            domains: domain_matrix(dataset, indices, stats, mode.target_variables(&dataset.schema))?,
            labels: dataset.labels(indices),
        })
    }

    fn batch(&self, rows: &[usize]) -> Result<(Tensor, Tensor, Vec<usize>)> {
        Ok((
            gather_rows(&self.inputs, rows)?,
            gather_rows(&self.domains, rows)?,
            rows.iter().map(|&r| self.labels[r]).collect(),
        ))
    }
}

/// Mean total loss over the validation batches, weighted by batch size.
fn validation_loss(params: &ModelParams, val: &Partition, loss: &LossConfig, batch: usize) -> Result<f64> {
    let n = val.labels.len();
    let mut total = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for range in balanced_batches(n, batch) {
        let rows: Vec<usize> = range.collect();
        let (x, v, y) = val.batch(&rows)?;
        let mut tape = Tape::new();
        let vars = params.bind_constant(&mut tape);
        let input = tape.constant(x);
        let out = forward(&mut tape, params.config(), &vars, input, false, &mut rng)?;
        let (_, b) = arcdog_loss(&mut tape, out.logits, &y, out.features, &v, loss)?;
        total += b.total * rows.len() as f64;
    }
    Ok(total / n as f64)
}

/// Batch-weighted mean total loss of `params` on the given samples, computed
/// exactly as the per-epoch validation loss.
pub fn partition_loss(
    params: &ModelParams,
    dataset: &Dataset,
    indices: &[usize],
    stats: &NormStats,
    mode: ClimateMode,
    loss: &LossConfig,
    batch: usize,
) -> Result<f64> {
    let part = Partition::new(dataset, indices, stats, mode)?;
    validation_loss(params, &part, loss, batch)
}

/// Train on `split.train`, select by validation loss on `split.val`.
///
/// Normalization statistics are fit on the training indices. The model
/// config's input width, timepoints and class count are taken from the data.
pub fn train(
    dataset: &Dataset,
    split: &Split,
    mode: ClimateMode,
    model: &ModelConfig,
    loss: &LossConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    loss.validate()?;
    if split.train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if split.val.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let model = resolve_model_config(model, dataset, mode);
    let stats = NormStats::fit(dataset, &split.train)?;
    let train_part = Partition::new(dataset, &split.train, &stats, mode)?;
    let val_part = Partition::new(dataset, &split.val, &stats, mode)?;
    let batch = config.effective_batch_size(dataset.len());

    let mut params = init_params(&model, config.seed)?;
    let mut adam = Adam::new(params.tensors(), config.beta1, config.beta2, config.epsilon);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(2);

    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut regression_trace = Vec::new();
    let run = run_epochs(config, &mut params, |params, epoch, lr| {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut reg_sum = 0.0;
        for range in balanced_batches(order.len(), batch) {
            let rows = &order[range];
            let (x, v, y) = train_part.batch(rows)?;
            let mut tape = Tape::new();
            let vars = params.bind(&mut tape);
            let input = tape.constant(x);
            let out = forward(&mut tape, &model, &vars, input, true, &mut dropout_rng)?;
            let (total, b) = arcdog_loss(&mut tape, out.logits, &y, out.features, &v, loss)?;
            if !b.total.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            let mut grads = tape.backward(total)?;
            let grads: Vec<Tensor> = vars
                .iter()
                .zip(params.tensors())
                .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape().to_vec())))
                .collect();
            adam.step(params.tensors_mut(), &grads, lr)?;
            loss_sum += b.total * rows.len() as f64;
            reg_sum += b.regression_term * rows.len() as f64;
        }
        let n = order.len() as f64;
        regression_trace.push(reg_sum / n);
        let val_loss = validation_loss(params, &val_part, loss, batch)?;
        Ok((loss_sum / n, val_loss))
    })?;

    Ok(TrainOutcome {
        params: run.best,
        log: run.log,
        regression_trace,
        best_epoch: run.best_epoch,
        best_val_loss: run.best_val_loss,
        stop: run.stop,
        stats,
    })
}

/// Result of [`run_epochs`].
#[derive(Clone, Debug)]
pub struct EpochRun<P> {
    pub best: P,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop: StopReason,
}

/// Drive `epoch(params, epoch_number, lr) -> (train_loss, val_loss)` under
/// the plateau rule until it stops or the epoch cap is hit. The snapshot
/// taken after the best validation epoch is returned.
pub fn run_epochs<P: Clone>(
    config: &TrainConfig,
    params: &mut P,
    mut epoch: impl FnMut(&mut P, usize, f64) -> Result<(f64, f64)>,
) -> Result<EpochRun<P>> {
    let mut plateau = Plateau::new(
        config.learning_rate,
        config.plateau_factor,
        config.patience,
        config.max_reductions,
    );
    let mut log = Vec::new();
    let mut best = None;
    let mut stop = StopReason::EpochCap;
    for n in 1..=config.max_epochs {
        let lr = plateau.lr;
        let (train_loss, val_loss) = epoch(params, n, lr)?;
        log.push(EpochRecord {
            epoch: n,
            train_loss,
            val_loss,
            lr,
        });
        let step = plateau.observe(val_loss);
        if step.improved {
            best = Some((params.clone(), n));
        }
        if step.stop {
            stop = StopReason::Plateau;
            break;
        }
    }
    let (best, best_epoch) = best.ok_or_else(|| Error::NonFinite("validation loss never finite".into()))?;
    Ok(EpochRun {
        best,
        log,
        best_epoch,
        best_val_loss: plateau.best,
        stop,
    })
}

/// Eval-mode logits and max-pooled features for the given samples.
pub fn infer(
    params: &ModelParams,
    dataset: &Dataset,
    indices: &[usize],
    stats: &NormStats,
    mode: ClimateMode,
    batch: usize,
) -> Result<(Tensor, Tensor)> {
    let inputs = make_model_input(dataset, indices, stats, mode)?;
    let k = params.config().num_classes;
    let f = params.config().feature_dim;
    let mut logits = Vec::with_capacity(indices.len() * k);
    let mut features = Vec::with_capacity(indices.len() * f);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for range in balanced_batches(indices.len(), batch) {
        let rows: Vec<usize> = range.collect();
        let x = gather_rows(&inputs, &rows)?;
        let (l, feat) = params.forward(&x, false, &mut rng)?;
        logits.extend_from_slice(l.data());
        features.extend_from_slice(feat.data());
    }
    Ok((
        Tensor::new(vec![indices.len(), k], logits)?,
        Tensor::new(vec![indices.len(), f], features)?,
    ))
}

pub fn evaluate(
    params: &ModelParams,
    dataset: &Dataset,
    indices: &[usize],
    stats: &NormStats,
    mode: ClimateMode,
    batch: usize,
) -> Result<MetricsReport> {
    let (logits, _) = infer(params, dataset, indices, stats, mode, batch)?;
    let k = params.config().num_classes;
    compute_metrics(&argmax_rows(logits.data(), k), &dataset.labels(indices), k)
}
