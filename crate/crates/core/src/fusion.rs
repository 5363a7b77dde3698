//! Asymmetric fusion of received caches into the ego decode.
//!
//! A received payload only has its first `L_comm` layers, so the shared
//! forward path naturally lets layers `1..=L_comm` read `[ego ‖ foreign]`
//! while deeper layers see the ego cache alone. The naive baseline is the
//! same path with a full-depth foreign cache.

use thiserror::Error;

use crate::ild::{deliberate_attached, AlignmentProjection, DeliberationResult};
use crate::model::{
    forward_position, project_to_logits, AttentionRows, KvCache, Model, ModelError, Origin,
};
use crate::sskd::Payload;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("payload from agent {sender} has H={heads} d_h={head_dim}, ego has H={ego_heads} d_h={ego_head_dim}")]
    ShapeMismatch {
        sender: u32,
        heads: usize,
        head_dim: usize,
        ego_heads: usize,
        ego_head_dim: usize,
    },
    #[error("foreign cache has {got} layers, expected {expected}")]
    LayerMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Ego cache plus read-only foreign caches ordered by sender id.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedContext {
    ego: KvCache,
    foreign: Vec<KvCache>,
}

impl FusedContext {
    pub fn new(ego: KvCache) -> Self {
        Self {
            ego,
            foreign: Vec::new(),
        }
    }

    /// Adds a foreign cache (already tagged foreign), keeping sender order.
    pub fn attach_cache(&mut self, cache: KvCache) -> Result<(), FusionError> {
        if cache.num_heads() != self.ego.num_heads() || cache.head_dim() != self.ego.head_dim() {
            return Err(FusionError::ShapeMismatch {
                sender: cache.agent(),
                heads: cache.num_heads(),
                head_dim: cache.head_dim(),
                ego_heads: self.ego.num_heads(),
                ego_head_dim: self.ego.head_dim(),
            });
        }
        if cache.num_layers() > self.ego.num_layers() {
            return Err(FusionError::LayerMismatch {
                expected: self.ego.num_layers(),
                got: cache.num_layers(),
            });
        }
        let at = self.foreign.partition_point(|c| c.agent() <= cache.agent());
        self.foreign.insert(at, cache);
        Ok(())
    }

    pub fn attach(&mut self, p: &Payload) -> Result<(), FusionError> {
        self.attach_cache(p.foreign_cache())
    }

    pub fn ego(&self) -> &KvCache {
        &self.ego
    }

    pub fn into_ego(self) -> KvCache {
        self.ego
    }

    pub fn foreign(&self) -> &[KvCache] {
        &self.foreign
    }

    /// Senders of the attached caches, in attention order.
    pub fn senders(&self) -> Vec<u32> {
        self.foreign.iter().map(|c| c.agent()).collect()
    }

    /// Context length seen at layer `l` (0-based).
    pub fn layer_len(&self, l: usize) -> usize {
        self.ego.len()
            + self
                .foreign
                .iter()
                .filter(|c| c.num_layers() > l)
                .map(|c| c.len())
                .sum::<usize>()
    }
}

pub fn attach_payload(ego: KvCache, p: &Payload) -> Result<FusedContext, FusionError> {
    let mut ctx = FusedContext::new(ego);
    ctx.attach(p)?;
    Ok(ctx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedOutput {
    pub hidden: Vec<f32>,
    pub logits: Vec<f32>,
    pub rows: AttentionRows,
}

/// Decision decode over the fused context. The new entry goes to the ego
/// cache only.
pub fn collaborative_decode(
    model: &Model,
    input: &[f32],
    ctx: &mut FusedContext,
) -> Result<FusedOutput, FusionError> {
    decode_fused(model, input, ctx, Origin::EgoDecode)
}

pub(crate) fn decode_fused(
    model: &Model,
    input: &[f32],
    ctx: &mut FusedContext,
    origin: Origin,
) -> Result<FusedOutput, FusionError> {
    if ctx.ego.is_empty() {
        return Err(ModelError::EmptyCache.into());
    }
    let FusedContext { ego, foreign } = ctx;
    let refs: Vec<&KvCache> = foreign.iter().collect();
    let out = forward_position(model, input, ego, origin, &refs)?;
    model.bump(|c| c.decode_steps += 1);
    let logits = project_to_logits(model, &out.hidden)?;
    Ok(FusedOutput {
        hidden: out.hidden,
        logits,
        rows: out.rows,
    })
}

/// Latent deliberation that already reads the attached caches.
pub fn deliberate_fused(
    model: &Model,
    alignment: &AlignmentProjection,
    h0: &[f32],
    ctx: &mut FusedContext,
    m: usize,
) -> Result<DeliberationResult, FusionError> {
    let FusedContext { ego, foreign } = ctx;
    let refs: Vec<&KvCache> = foreign.iter().collect();
    Ok(deliberate_attached(model, alignment, h0, ego, m, &refs)?)
}

/// Every layer attends over `[ego ‖ foreign]`. `foreign` must carry all
/// layers. The ego cache is not modified.
pub fn naive_full_fusion(
    model: &Model,
    input: &[f32],
    ego: &KvCache,
    foreign: &KvCache,
) -> Result<FusedOutput, FusionError> {
    if foreign.num_layers() != model.config().num_layers {
        return Err(FusionError::LayerMismatch {
            expected: model.config().num_layers,
            got: foreign.num_layers(),
        });
    }
    let mut ctx = FusedContext::new(ego.clone());
    ctx.attach_cache(foreign.clone().into_foreign())?;
    collaborative_decode(model, input, &mut ctx)
}
