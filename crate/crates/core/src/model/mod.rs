//! Gesture classifiers written from scratch: forward, analytic backward,
//! optimizer, training loop, evaluation and `.twt` persistence.
//!
//! Two architectures share one flat parameter vector per model:
//!
//! - [`hybrid`]: a per-frame convolutional stem (64-d embedding per frame),
//!   sinusoidal positions, a pre-norm transformer encoder over time, mean
//!   pooling and an MLP head.
//! - [`lstm`]: a bidirectional LSTM over flattened frames with a linear head.
//!
//! Models are generic over [`Real`]; training and inference run in `f32`,
//! gradient checks in `f64`.

pub mod hybrid;
pub mod io;
pub mod linalg;
pub mod lstm;
pub mod train;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, Range, SubAssign};

use num_traits::{Float, FromPrimitive};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::frame::GestureWindow;
use crate::gesture::GestureClass;

pub use hybrid::HybridConfig;
pub use io::{load_params, save_params, ParamsError};
pub use lstm::LstmConfig;
pub use train::{evaluate, evaluate_split, train, Adam, EpochRecord, EvalReport, LrSchedule, TrainConfig, TrainError, TrainOutcome};

pub trait Real:
    Float + FromPrimitive + AddAssign + SubAssign + MulAssign + DivAssign + Sum + Default + Debug + Send + Sync + 'static
{
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error("expected input of {expected} values, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("label index {0} out of range")]
    Label(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Hybrid,
    Lstm,
}

impl std::str::FromStr for Arch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hybrid" => Ok(Arch::Hybrid),
            "lstm" => Ok(Arch::Lstm),
            _ => Err(format!("unknown architecture `{s}` (expected hybrid or lstm)")),
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arch::Hybrid => "hybrid",
            Arch::Lstm => "lstm",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelConfig {
    Hybrid(HybridConfig),
    Lstm(LstmConfig),
}

impl ModelConfig {
    pub fn arch(&self) -> Arch {
        match self {
            ModelConfig::Hybrid(_) => Arch::Hybrid,
            ModelConfig::Lstm(_) => Arch::Lstm,
        }
    }

    /// The full-size configuration of an architecture.
    pub fn standard(arch: Arch) -> Self {
        match arch {
            Arch::Hybrid => ModelConfig::Hybrid(HybridConfig::default()),
            Arch::Lstm => ModelConfig::Lstm(LstmConfig::default()),
        }
    }

    pub fn seq_len(&self) -> usize {
        match self {
            ModelConfig::Hybrid(c) => c.seq_len,
            ModelConfig::Lstm(c) => c.seq_len,
        }
    }

    /// Values per input sequence.
    pub fn input_len(&self) -> usize {
        match self {
            ModelConfig::Hybrid(c) => c.seq_len * c.grid * c.grid,
            ModelConfig::Lstm(c) => c.seq_len * c.input,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            ModelConfig::Hybrid(c) => c.classes,
            ModelConfig::Lstm(c) => c.classes,
        }
    }
}

/// How a parameter tensor is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `[-a, a]`.
    Uniform(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub range: Range<usize>,
    pub init: Init,
}

/// Named tensors packed into one flat parameter vector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub len: usize,
}

impl Layout {
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> Range<usize> {
        let n: usize = shape.iter().product();
        let range = self.len..self.len + n;
        self.len += n;
        self.tensors.push(TensorSpec {
            name: name.into(),
            shape: shape.to_vec(),
            range: range.clone(),
            init,
        });
        range
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Index {
    Hybrid(hybrid::HybridIndex),
    Lstm(lstm::LstmIndex),
}

/// A classifier: architecture, tensor layout and flat parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    layout: Layout,
    index: Index,
    params: Vec<T>,
}

impl<T: Real> Model<T> {
    /// All parameters zero.
    pub fn zeroed(config: ModelConfig) -> Self {
        let (layout, index) = match &config {
            ModelConfig::Hybrid(c) => {
                let (l, i) = c.layout();
                (l, Index::Hybrid(i))
            }
            ModelConfig::Lstm(c) => {
                let (l, i) = c.layout();
                (l, Index::Lstm(i))
            }
        };
        let params = vec![T::zero(); layout.len];
        Self {
            config,
            layout,
            index,
            params,
        }
    }

    /// Randomly initialized parameters, deterministic in `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let mut m = Self::zeroed(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in &m.layout.tensors {
            for v in &mut m.params[t.range.clone()] {
                *v = match t.init {
                    Init::Zeros => T::zero(),
                    Init::Ones => T::one(),
                    Init::Uniform(a) => T::c(rng.gen_range(-a..=a)),
                };
            }
        }
        m
    }

    pub fn from_params(config: ModelConfig, params: Vec<T>) -> Result<Self, ModelError> {
        let mut m = Self::zeroed(config);
        if params.len() != m.params.len() {
            return Err(ModelError::Shape {
                expected: m.params.len(),
                got: params.len(),
            });
        }
        m.params = params;
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn arch(&self) -> Arch {
        self.config.arch()
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.layout.get(name).map(|t| &self.params[t.range.clone()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let range = self.layout.get(name)?.range.clone();
        Some(&mut self.params[range])
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config,
            layout: self.layout.clone(),
            index: self.index.clone(),
            params: self
                .params
                .iter()
                .map(|v| U::c(v.to_f64().expect("finite parameter")))
                .collect(),
        }
    }

    pub fn hybrid(&self) -> Option<hybrid::Hybrid<'_, T>> {
        match (&self.config, &self.index) {
            (ModelConfig::Hybrid(cfg), Index::Hybrid(idx)) => Some(hybrid::Hybrid {
                cfg,
                idx,
                p: &self.params,
            }),
            _ => None,
        }
    }

    pub fn lstm(&self) -> Option<lstm::Lstm<'_, T>> {
        match (&self.config, &self.index) {
            (ModelConfig::Lstm(cfg), Index::Lstm(idx)) => Some(lstm::Lstm {
                cfg,
                idx,
                p: &self.params,
            }),
            _ => None,
        }
    }

    fn check_input(&self, input: &[T]) -> Result<(), ModelError> {
        let expected = self.config.input_len();
        if input.len() != expected {
            return Err(ModelError::Shape {
                expected,
                got: input.len(),
            });
        }
        Ok(())
    }

    /// Unnormalized class scores for one input sequence.
    pub fn logits(&self, input: &[T]) -> Result<Vec<T>, ModelError> {
        self.check_input(input)?;
        Ok(match self.config {
            ModelConfig::Hybrid(_) => self.hybrid().unwrap().forward(input).logits,
            ModelConfig::Lstm(_) => self.lstm().unwrap().forward(input).logits,
        })
    }

    /// Class probabilities for one input sequence.
    pub fn predict(&self, input: &[T]) -> Result<Vec<T>, ModelError> {
        let mut p = self.logits(input)?;
        linalg::softmax_in_place(&mut p);
        Ok(p)
    }

    /// Cross-entropy loss `-ln p[label]` and its gradient with respect to
    /// every parameter, both multiplied by `scale`.
    pub fn loss_and_grad(&self, input: &[T], label: usize, scale: T) -> Result<(T, Vec<T>), ModelError> {
        let mut grad = vec![T::zero(); self.params.len()];
        let step = self.accumulate_grad(input, label, scale, &mut grad)?;
        Ok((step.loss, grad))
    }

    /// Like [`Model::loss_and_grad`], but adds the scaled gradient into `grad`.
    pub fn accumulate_grad(&self, input: &[T], label: usize, scale: T, grad: &mut [T]) -> Result<GradStep<T>, ModelError> {
        self.check_input(input)?;
        if label >= self.config.classes() {
            return Err(ModelError::Label(label));
        }
        if grad.len() != self.params.len() {
            return Err(ModelError::Shape {
                expected: self.params.len(),
                got: grad.len(),
            });
        }
        let (logits, loss) = match self.config {
            ModelConfig::Hybrid(_) => {
                let h = self.hybrid().unwrap();
                let trace = h.forward(input);
                let (loss, dlogits) = cross_entropy_grad(&trace.logits, label, scale);
                h.backward(&trace, &dlogits, grad);
                (trace.logits, loss)
            }
            ModelConfig::Lstm(_) => {
                let l = self.lstm().unwrap();
                let trace = l.forward(input);
                let (loss, dlogits) = cross_entropy_grad(&trace.logits, label, scale);
                l.backward(&trace, &dlogits, grad);
                (trace.logits, loss)
            }
        };
        Ok(GradStep {
            loss,
            predicted: argmax(&logits),
        })
    }
}

/// Outcome of one forward/backward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradStep<T> {
    /// Scaled loss.
    pub loss: T,
    pub predicted: usize,
}

impl Model<f32> {
    /// Class probabilities for a 30-frame window.
    pub fn classify(&self, window: &GestureWindow) -> Result<Vec<f32>, ModelError> {
        self.predict(window.as_slice())
    }

    pub fn classify_label(&self, window: &GestureWindow) -> Result<(GestureClass, Vec<f32>), ModelError> {
        let p = self.classify(window)?;
        Ok((GestureClass::from_index(argmax(&p)).unwrap_or(GestureClass::Invalid), p))
    }
}

/// `-ln softmax(logits)[label]`.
pub fn loss<T: Real>(probs: &[T], label: usize) -> T {
    -probs[label].ln()
}

/// Scaled cross-entropy from logits and its gradient `scale·(p - onehot)`.
pub fn cross_entropy_grad<T: Real>(logits: &[T], label: usize, scale: T) -> (T, Vec<T>) {
    let lse = linalg::log_sum_exp(logits);
    let loss = (lse - logits[label]) * scale;
    let grad = logits
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            let p = (z - lse).exp();
            scale * if i == label { p - T::one() } else { p }
        })
        .collect();
    (loss, grad)
}

/// Index of the largest value; the first one on ties.
pub fn argmax<T: PartialOrd + Copy>(x: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v > x[best] {
            best = i;
        }
    }
    best
}

/// Sinusoidal position table, `seq_len × d`: even columns `sin`, odd `cos`.
pub fn positional_encoding<T: Real>(seq_len: usize, d: usize) -> Vec<T> {
    let mut pe = vec![T::zero(); seq_len * d];
    for t in 0..seq_len {
        for i in (0..d).step_by(2) {
            let freq = (-(i as f64) * (10_000f64).ln() / d as f64).exp();
            let a = t as f64 * freq;
            pe[t * d + i] = T::c(a.sin());
            if i + 1 < d {
                pe[t * d + i + 1] = T::c(a.cos());
            }
        }
    }
    pe
}
