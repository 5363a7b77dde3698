//! A small deterministic transformer whose KV cache is exposed, appendable
//! and shareable between agents.
//!
//! Blocks are residual attention + ReLU MLP without per-block normalisation.
//! Positions are added (sinusoidal) to the query/key inputs only, at the slot
//! where an entry is written, so a stored key already carries its position
//! and can be read by any other model instance without re-encoding. The
//! hidden state handed back to callers is RMS-normalised.

mod cache;
mod forward;
mod hazard;
mod trace;

use std::cell::{Cell, OnceCell};

use rand_core::SeedableRng;
use rand_pcg::Pcg64;
use thiserror::Error;

pub use cache::{KvCache, Origin, PositionTag};
pub(crate) use forward::forward_position;
pub use forward::{decode_step, prefill, DecodeOutput, Prefill};
pub use hazard::{hazard_config, make_hazard_model, HazardFeature, HAZARD_LAYOUT_DIM};
pub use trace::{AttentionRows, AttentionTrace, LayerRows};

use crate::ild::AlignmentProjection;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("context overflow: slot {slot} does not fit max context {max}")]
    ContextOverflow { slot: usize, max: usize },
    #[error("input has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("input vector contains non-finite values")]
    NonFiniteInput,
    #[error("token id {token} outside vocabulary of {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },
    #[error("empty token sequence")]
    EmptyInput,
    #[error("decode requires a non-empty cache")]
    EmptyCache,
    #[error("cache shape mismatch: {0}")]
    CacheShape(String),
    #[error("config cannot host the hazard construction: {0}")]
    ConstructionTooSmall(String),
}

/// Shape and seed of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub model_dim: usize,
    pub vocab_size: usize,
    pub max_context: usize,
    pub ffn_dim: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// MLP width defaults to twice the model width.
    pub fn new(
        num_layers: usize,
        num_heads: usize,
        model_dim: usize,
        vocab_size: usize,
        max_context: usize,
        seed: u64,
    ) -> Self {
        Self {
            num_layers,
            num_heads,
            model_dim,
            vocab_size,
            max_context,
            ffn_dim: 2 * model_dim,
            seed,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads.max(1)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::InvalidConfig(msg.to_string()));
        if self.num_layers < 2 {
            return bad("num_layers must be at least 2");
        }
        if self.num_heads == 0 || self.model_dim == 0 || self.vocab_size == 0 {
            return bad("num_heads, model_dim and vocab_size must be positive");
        }
        if self.max_context == 0 || self.ffn_dim == 0 {
            return bad("max_context and ffn_dim must be positive");
        }
        if !self.model_dim.is_multiple_of(self.num_heads) {
            return bad("model_dim must be divisible by num_heads");
        }
        Ok(())
    }
}

/// Dense row-major `f32` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Row vector times matrix: `x · self`.
    pub fn left_mul(&self, x: &[f32]) -> Vec<f32> {
        debug_assert_eq!(x.len(), self.rows);
        let mut out = vec![0.0f32; self.cols];
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            let row = self.row(r);
            for (o, &w) in out.iter_mut().zip(row) {
                *o += xr * w;
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Weights of one transformer block. Every matrix acts on row vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub w1: Matrix,
    pub w2: Matrix,
}

impl LayerWeights {
    fn zeros(d: usize, ffn: usize) -> Self {
        Self {
            wq: Matrix::zeros(d, d),
            wk: Matrix::zeros(d, d),
            wv: Matrix::zeros(d, d),
            wo: Matrix::zeros(d, d),
            w1: Matrix::zeros(d, ffn),
            w2: Matrix::zeros(ffn, d),
        }
    }
}

/// Call counters, used to check pass budgets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub prefills: u64,
    pub decode_steps: u64,
    pub logit_projections: u64,
}

impl Counters {
    pub fn forward_passes(&self) -> u64 {
        self.prefills + self.decode_steps
    }

    pub fn since(&self, earlier: &Counters) -> Counters {
        Counters {
            prefills: self.prefills - earlier.prefills,
            decode_steps: self.decode_steps - earlier.decode_steps,
            logit_projections: self.logit_projections - earlier.logit_projections,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    w_in: Matrix,
    w_out: Matrix,
    layers: Vec<LayerWeights>,
    pos_enc: Matrix,
    pub(crate) alignment: OnceCell<AlignmentProjection>,
    counters: Cell<Counters>,
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Input embedding, `|V| x d`.
    pub fn w_in(&self) -> &Matrix {
        &self.w_in
    }

    /// Output head, `d x |V|`.
    pub fn w_out(&self) -> &Matrix {
        &self.w_out
    }

    pub fn layers(&self) -> &[LayerWeights] {
        &self.layers
    }

    pub fn positional_encoding(&self) -> &Matrix {
        &self.pos_enc
    }

    pub fn embed(&self, token: u32) -> Result<Vec<f32>, ModelError> {
        if token as usize >= self.config.vocab_size {
            return Err(ModelError::TokenOutOfRange {
                token,
                vocab: self.config.vocab_size,
            });
        }
        Ok(self.w_in.row(token as usize).to_vec())
    }

    pub fn counters(&self) -> Counters {
        self.counters.get()
    }

    pub fn reset_counters(&self) {
        self.counters.set(Counters::default());
    }

    pub(crate) fn bump(&self, f: impl FnOnce(&mut Counters)) {
        let mut c = self.counters.get();
        f(&mut c);
        self.counters.set(c);
    }

    /// Builds a model from explicit weights. Used by the analytic
    /// constructions and by tests.
    pub fn from_parts(
        config: ModelConfig,
        w_in: Matrix,
        w_out: Matrix,
        layers: Vec<LayerWeights>,
        pos_enc: Matrix,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.model_dim;
        let shape = |m: &Matrix, r: usize, c: usize, name: &str| {
            if m.rows() != r || m.cols() != c {
                Err(ModelError::InvalidConfig(format!(
                    "{name} is {}x{}, expected {r}x{c}",
                    m.rows(),
                    m.cols()
                )))
            } else {
                Ok(())
            }
        };
        shape(&w_in, config.vocab_size, d, "w_in")?;
        shape(&w_out, d, config.vocab_size, "w_out")?;
        shape(&pos_enc, config.max_context, d, "pos_enc")?;
        if layers.len() != config.num_layers {
            return Err(ModelError::InvalidConfig(format!(
                "{} layer weight sets for {} layers",
                layers.len(),
                config.num_layers
            )));
        }
        for (i, l) in layers.iter().enumerate() {
            for (m, name) in [(&l.wq, "wq"), (&l.wk, "wk"), (&l.wv, "wv"), (&l.wo, "wo")] {
                shape(m, d, d, &format!("layer {i} {name}"))?;
            }
            shape(&l.w1, d, config.ffn_dim, &format!("layer {i} w1"))?;
            shape(&l.w2, config.ffn_dim, d, &format!("layer {i} w2"))?;
        }
        let all_finite = w_in.is_finite()
            && w_out.is_finite()
            && pos_enc.is_finite()
            && layers.iter().all(|l| {
                [&l.wq, &l.wk, &l.wv, &l.wo, &l.w1, &l.w2]
                    .iter()
                    .all(|m| m.is_finite())
            });
        if !all_finite {
            return Err(ModelError::InvalidConfig("non-finite weight".into()));
        }
        Ok(Self {
            config,
            w_in,
            w_out,
            layers,
            pos_enc,
            alignment: OnceCell::new(),
            counters: Cell::new(Counters::default()),
        })
    }
}

/// Seeded random model.
///
/// Every weight is drawn from `uniform(-1/sqrt(d), 1/sqrt(d))` using a
/// `Pcg64` seeded with `seed_from_u64(config.seed)`. Each draw takes one
/// `next_u64`, keeps its top 53 bits as `u in [0, 1)` and maps it to
/// `(2u - 1) / sqrt(d)`. Stream order: `w_in`, `w_out`, then for each layer
/// `wq, wk, wv, wo, w1, w2`, each matrix row-major. The positional table is
/// the standard sinusoid over all `d` dims and consumes no randomness.
pub fn init_model(config: ModelConfig) -> Result<Model, ModelError> {
    config.validate()?;
    let d = config.model_dim;
    let bound = 1.0 / (d as f64).sqrt();
    let mut rng = Pcg64::seed_from_u64(config.seed);
    let mut draw = |rows: usize, cols: usize| {
        let data = (0..rows * cols)
            .map(|_| {
                let u =
                    (rand_core::Rng::next_u64(&mut rng) >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
                ((2.0 * u - 1.0) * bound) as f32
            })
            .collect();
        Matrix::from_vec(rows, cols, data)
    };
    let w_in = draw(config.vocab_size, d);
    let w_out = draw(d, config.vocab_size);
    let layers = (0..config.num_layers)
        .map(|_| LayerWeights {
            wq: draw(d, d),
            wk: draw(d, d),
            wv: draw(d, d),
            wo: draw(d, d),
            w1: draw(d, config.ffn_dim),
            w2: draw(config.ffn_dim, d),
        })
        .collect();
    let pos_enc = sinusoidal_table(config.max_context, d, 0..d);
    Model::from_parts(config, w_in, w_out, layers, pos_enc)
}

/// Sinusoidal positions written into the column range `dims` of an
/// `n x d` table (zeros elsewhere).
pub fn sinusoidal_table(n: usize, d: usize, dims: std::ops::Range<usize>) -> Matrix {
    let width = dims.len();
    let mut table = Matrix::zeros(n, d);
    for p in 0..n {
        for i in 0..width {
            let pair = (i / 2) as f64;
            let freq = 10000f64.powf(-2.0 * pair / width as f64);
            let angle = p as f64 * freq;
            let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            table.set(p, dims.start + i, v as f32);
        }
    }
    table
}

/// `logits = hidden · W_out`.
pub fn project_to_logits(model: &Model, hidden: &[f32]) -> Result<Vec<f32>, ModelError> {
    let d = model.config.model_dim;
    if hidden.len() != d {
        return Err(ModelError::DimensionMismatch {
            expected: d,
            got: hidden.len(),
        });
    }
    if !hidden.iter().all(|v| v.is_finite()) {
        return Err(ModelError::NonFiniteInput);
    }
    model.bump(|c| c.logit_projections += 1);
    Ok(model.w_out.left_mul(hidden))
}

/// Index of the largest logit; ties resolve to the lowest index.
pub fn argmax(logits: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}
