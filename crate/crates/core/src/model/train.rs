//! Mini-batch Adam training with early stopping, and evaluation.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, Model, ModelConfig, ModelError, Real};
use crate::dataset::{derive_seed, Dataset, Sample, Split};
use crate::gesture::GestureClass;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Epochs without a validation-accuracy improvement before stopping.
    pub patience: usize,
    /// A batch mean loss above this aborts training as divergent.
    pub max_loss: f64,
    pub schedule: LrSchedule,
}

/// Learning rate over the run, as a function of the optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from `lr` down to zero over the whole epoch budget.
    Cosine,
}

impl LrSchedule {
    pub fn rate(self, lr: f64, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => lr,
            LrSchedule::Cosine => {
                let progress = step as f64 / total.max(1) as f64;
                0.5 * lr * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos())
            }
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 64,
            epochs: 20,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            patience: 5,
            max_loss: 1e3,
            schedule: LrSchedule::Cosine,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("moment coefficients must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("the {0:?} split is empty")]
    EmptySplit(Split),
    #[error("training diverged at epoch {epoch}, batch {batch}: {reason}")]
    Diverged { epoch: usize, batch: usize, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Adam with bias correction; moments are kept in the parameter precision.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    step: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl<T: Real> Adam<T> {
    pub fn new(n: usize, cfg: &TrainConfig) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step: 0,
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn update(&mut self, params: &mut [T], grad: &[T]) {
        self.step += 1;
        let b1 = T::c(self.beta1);
        let b2 = T::c(self.beta2);
        let one = T::one();
        let step_size = T::c(self.lr / (1.0 - self.beta1.powi(self.step)));
        let v_corr = T::c(1.0 / (1.0 - self.beta2.powi(self.step)));
        let eps = T::c(self.eps);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            *p -= step_size * *m / ((*v * v_corr).sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `confusion[true][predicted]` counts.
    pub confusion: [[usize; GestureClass::COUNT]; GestureClass::COUNT],
    pub mean_loss: f64,
    pub mean_latency_ms: f64,
    pub samples: usize,
}

impl EvalReport {
    pub fn row_sums(&self) -> [usize; GestureClass::COUNT] {
        self.confusion.map(|row| row.iter().sum())
    }

    /// Plain-text confusion matrix, one row per true class.
    pub fn confusion_table(&self) -> String {
        let mut out = format!("{:>16}", "true \\ pred");
        for c in GestureClass::ALL {
            out += &format!(" {:>4}", short_name(c));
        }
        out.push('\n');
        for (c, row) in GestureClass::ALL.iter().zip(&self.confusion) {
            out += &format!("{:>16}", c.name());
            for v in row {
                out += &format!(" {v:>4}");
            }
            out.push('\n');
        }
        out
    }
}

fn short_name(c: GestureClass) -> &'static str {
    use GestureClass::*;
    match c {
        TranslateXPos => "+x",
        TranslateXNeg => "-x",
        TranslateYPos => "+y",
        TranslateYNeg => "-y",
        TranslateZPos => "+z",
        TranslateZNeg => "-z",
        RotateXPos => "+rx",
        RotateXNeg => "-rx",
        RotateYPos => "+ry",
        RotateYNeg => "-ry",
        RotateZPos => "+rz",
        RotateZNeg => "-rz",
        AuxInitPose => "init",
        AuxHome => "home",
        Invalid => "inv",
    }
}

/// Accuracy, confusion and mean single-window latency over `samples`.
pub fn evaluate<'a>(model: &Model<f32>, samples: impl IntoIterator<Item = &'a Sample>) -> Result<EvalReport, ModelError> {
    let mut confusion = [[0usize; GestureClass::COUNT]; GestureClass::COUNT];
    let mut loss = 0.0;
    let mut elapsed = 0.0;
    let mut n = 0usize;
    for s in samples {
        let start = Instant::now();
        let p = model.classify(&s.window)?;
        elapsed += start.elapsed().as_secs_f64();
        let label = s.label.index();
        confusion[label][argmax(&p)] += 1;
        loss -= f64::from(p[label].max(f32::MIN_POSITIVE)).ln();
        n += 1;
    }
    let correct: usize = (0..GestureClass::COUNT).map(|i| confusion[i][i]).sum();
    let denom = n.max(1) as f64;
    Ok(EvalReport {
        accuracy: correct as f64 / denom,
        confusion,
        mean_loss: loss / denom,
        mean_latency_ms: elapsed * 1e3 / denom,
        samples: n,
    })
}

pub fn evaluate_split(model: &Model<f32>, ds: &Dataset, which: Split) -> Result<EvalReport, ModelError> {
    evaluate(model, ds.indices(which).into_iter().map(|i| &ds.samples[i]))
}

/// One line of training metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation accuracy.
    pub model: Model<f32>,
    pub best_epoch: usize,
    pub best_val: EvalReport,
    pub history: Vec<EpochRecord>,
}

/// Trains a freshly initialized model of `config` on the training split.
///
/// Deterministic in `cfg.seed`. Calls `on_epoch` after every epoch.
pub fn train(
    ds: &Dataset,
    config: ModelConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let mut order = ds.indices(Split::Train);
    let val = ds.indices(Split::Val);
    if order.is_empty() {
        return Err(TrainError::EmptySplit(Split::Train));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySplit(Split::Val));
    }
    let mut model = Model::<f32>::init(config, derive_seed(cfg.seed, 0));
    let mut adam = Adam::new(model.params().len(), cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
    let mut grad = vec![0f32; model.params().len()];
    let mut best: Option<(usize, EvalReport, Vec<f32>)> = None;
    let mut stale = 0;
    let mut history = Vec::new();
    let total_steps = cfg.epochs * order.len().div_ceil(cfg.batch_size);
    let mut step = 0;

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            grad.fill(0.0);
            let scale = 1.0 / batch.len() as f32;
            let mut batch_loss = 0.0f64;
            for &i in batch {
                let s = &ds.samples[i];
                let step = model.accumulate_grad(s.window.as_slice(), s.label.index(), scale, &mut grad)?;
                batch_loss += f64::from(step.loss);
                correct += usize::from(step.predicted == s.label.index());
            }
            let diverged = |reason: String| TrainError::Diverged { epoch, batch: b, reason };
            if !batch_loss.is_finite() {
                return Err(diverged(format!("non-finite loss {batch_loss}")));
            }
            if batch_loss > cfg.max_loss {
                return Err(diverged(format!("loss {batch_loss:.3e} exceeds {:.3e}", cfg.max_loss)));
            }
            if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
                return Err(diverged(format!("non-finite gradient for {}", tensor_name(&model, i))));
            }
            adam.set_lr(cfg.schedule.rate(cfg.lr, step, total_steps));
            adam.update(model.params_mut(), &grad);
            step += 1;
            if let Some(i) = model.params().iter().position(|p| !p.is_finite()) {
                return Err(diverged(format!("non-finite parameter in {}", tensor_name(&model, i))));
            }
            loss_sum += batch_loss * batch.len() as f64;
        }
        let report = evaluate(&model, val.iter().map(|&i| &ds.samples[i]))?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            train_accuracy: correct as f64 / order.len() as f64,
            val_loss: report.mean_loss,
            val_accuracy: report.accuracy,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.push(record);

        let improved = best.as_ref().map_or(true, |(_, r, _)| report.accuracy > r.accuracy);
        let perfect = report.accuracy >= 1.0;
        if improved {
            best = Some((epoch, report, model.params().to_vec()));
            stale = 0;
        } else {
            stale += 1;
        }
        // A perfect score cannot be beaten, so later epochs could not change the result.
        if stale >= cfg.patience || perfect {
            break;
        }
    }

    let (best_epoch, best_val, params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model: Model::from_params(config, params)?,
        best_epoch,
        best_val,
        history,
    })
}

fn tensor_name<T: Real>(model: &Model<T>, flat: usize) -> String {
    model
        .layout()
        .tensors
        .iter()
        .find(|t| t.range.contains(&flat))
        .map_or_else(|| format!("#{flat}"), |t| t.name.clone())
}
