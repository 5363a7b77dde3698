//! Latent deliberation: feed the last hidden state back as the next input,
//! through a fixed alignment projection, instead of decoding tokens.

use thiserror::Error;

use crate::linalg::{self, LinalgError, DEFAULT_RTOL};
use crate::model::{
    decode_step, forward_position, AttentionTrace, KvCache, Matrix, Model, ModelError, Origin,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IldError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("alignment projection: {0}")]
    Alignment(#[from] LinalgError),
}

/// `W_a` (`d x d`) mapping a hidden state back into embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentProjection {
    pub w_a: Matrix,
    pub tolerance: f64,
}

impl AlignmentProjection {
    pub fn apply(&self, hidden: &[f32]) -> Vec<f32> {
        self.w_a.left_mul(hidden)
    }
}

/// `W_a = pinv(W_outᵀ) · W_in`, memoized on the model.
///
/// `W_out` is stored `d x |V|` (hidden to logits), so its transpose is the
/// `|V| x d` matrix whose rows line up with the rows of `W_in`. `W_a` is the
/// least-squares solution of `W_outᵀ · W_a ≈ W_in`: a hidden state that
/// would decode to token `v` is sent to the embedding of `v`.
pub fn compute_alignment(model: &Model) -> Result<&AlignmentProjection, IldError> {
    if let Some(a) = model.alignment.get() {
        return Ok(a);
    }
    let w_out_t = linalg::to_dmatrix(model.w_out()).transpose();
    let pinv = linalg::pinv(&w_out_t, DEFAULT_RTOL)?;
    let w_a = pinv * linalg::to_dmatrix(model.w_in());
    let proj = AlignmentProjection {
        w_a: linalg::from_dmatrix(&w_a),
        tolerance: DEFAULT_RTOL,
    };
    if !proj.w_a.is_finite() {
        return Err(LinalgError::NonFinite.into());
    }
    Ok(model.alignment.get_or_init(|| proj))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeliberationResult {
    /// The `m` positions appended by deliberation, tagged `EgoLatent`.
    pub latent: KvCache,
    pub final_hidden: Vec<f32>,
    pub trace: AttentionTrace,
}

/// Runs `m` latent steps `ê_t = h_{t-1} · W_a` on top of `cache`.
pub fn deliberate(
    model: &Model,
    alignment: &AlignmentProjection,
    h0: &[f32],
    cache: &mut KvCache,
    m: usize,
) -> Result<DeliberationResult, ModelError> {
    deliberate_attached(model, alignment, h0, cache, m, &[])
}

/// Deliberation that also reads foreign caches at every step.
pub(crate) fn deliberate_attached(
    model: &Model,
    alignment: &AlignmentProjection,
    h0: &[f32],
    cache: &mut KvCache,
    m: usize,
    foreign: &[&KvCache],
) -> Result<DeliberationResult, ModelError> {
    let start = cache.len();
    if start + m > model.config().max_context {
        return Err(ModelError::ContextOverflow {
            slot: start + m - 1,
            max: model.config().max_context,
        });
    }
    let mut h = h0.to_vec();
    let mut trace = AttentionTrace::new();
    for _ in 0..m {
        let e = alignment.apply(&h);
        let out = if foreign.is_empty() {
            decode_step(model, &e, cache, Origin::EgoLatent)?
        } else {
            let out = forward_position(model, &e, cache, Origin::EgoLatent, foreign)?;
            model.bump(|c| c.decode_steps += 1);
            out
        };
        trace.push(out.rows);
        h = out.hidden;
    }
    let latent = cache.range(start..cache.len())?;
    Ok(DeliberationResult {
        latent,
        final_hidden: h,
        trace,
    })
}
