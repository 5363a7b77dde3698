//! Saliency scoring of prefill positions from latent-step attention, top-K
//! selection, and assembly of the transmissible cache.

use thiserror::Error;

use crate::model::{AttentionTrace, KvCache, ModelError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChsaError {
    #[error("saliency needs at least one latent step")]
    EmptyTrace,
    #[error("prefill length must be at least 1")]
    EmptyPrefill,
    #[error("retention ratio {0} outside (0, 1]")]
    BadRatio(f64),
    #[error("selected index {index} out of range for prefill of {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("selected indices must be strictly increasing")]
    Unordered,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Per-prefill-position saliency together with the retention ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyVector {
    pub scores: Vec<f64>,
    pub rho: f64,
}

impl SaliencyVector {
    /// `K = ceil(ρ·T)`, clamped to `[1, T]`.
    pub fn k(&self) -> usize {
        retain_count(self.rho, self.scores.len())
    }
}

pub fn retain_count(rho: f64, len: usize) -> usize {
    // The epsilon keeps products such as 0.3 * 100 = 30.000000000000004
    // from rounding up to 31.
    let k = (rho * len as f64 - 1e-9).ceil();
    (k.max(1.0) as usize).min(len)
}

fn check_rho(rho: f64) -> Result<(), ChsaError> {
    if rho > 0.0 && rho <= 1.0 {
        Ok(())
    } else {
        Err(ChsaError::BadRatio(rho))
    }
}

/// `S_j = mean_t max_{l,h} A[t,l,h,j]` for `j < prefill_len`.
pub fn saliency_scores(
    trace: &AttentionTrace,
    prefill_len: usize,
    rho: f64,
) -> Result<SaliencyVector, ChsaError> {
    check_rho(rho)?;
    if trace.is_empty() {
        return Err(ChsaError::EmptyTrace);
    }
    if prefill_len == 0 {
        return Err(ChsaError::EmptyPrefill);
    }
    let mut scores = vec![0.0f64; prefill_len];
    let mut best = vec![0.0f64; prefill_len];
    for step in trace.steps() {
        best.iter_mut().for_each(|b| *b = 0.0);
        for layer in step.layers() {
            for h in 0..layer.num_heads() {
                for (b, &w) in best.iter_mut().zip(layer.row(h)) {
                    *b = b.max(w);
                }
            }
        }
        for (s, b) in scores.iter_mut().zip(&best) {
            *s += b;
        }
    }
    let steps = trace.len() as f64;
    scores.iter_mut().for_each(|s| *s /= steps);
    Ok(SaliencyVector { scores, rho })
}

/// The `K` highest-scoring positions, ties to the lower index, ascending.
pub fn select_topk(s: &SaliencyVector) -> Vec<usize> {
    let mut order: Vec<usize> = (0..s.scores.len()).collect();
    order.sort_by(|&a, &b| s.scores[b].total_cmp(&s.scores[a]).then(a.cmp(&b)));
    order.truncate(s.k());
    order.sort_unstable();
    order
}

/// `[salient ‖ latent]` plus the source positions of the salient part.
#[derive(Debug, Clone, PartialEq)]
pub struct ChsaCache {
    pub salient: KvCache,
    pub latent: KvCache,
    pub indices: Vec<usize>,
}

impl ChsaCache {
    pub fn len(&self) -> usize {
        self.salient.len() + self.latent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn assembled(&self) -> Result<KvCache, ModelError> {
        self.salient.concat(&self.latent)
    }
}

pub fn build_chsa_cache(
    prefill: &KvCache,
    latent: &KvCache,
    indices: &[usize],
) -> Result<ChsaCache, ChsaError> {
    if let Some(&index) = indices.iter().find(|&&i| i >= prefill.len()) {
        return Err(ChsaError::IndexOutOfRange {
            index,
            len: prefill.len(),
        });
    }
    if indices.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ChsaError::Unordered);
    }
    Ok(ChsaCache {
        salient: prefill.select(indices)?,
        latent: latent.clone(),
        indices: indices.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_trace(n: usize, layers: usize, heads: usize, steps: usize) -> AttentionTrace {
        AttentionTrace::from_dense(
            heads,
            vec![vec![vec![1.0 / n as f64; n * heads]; layers]; steps],
        )
    }

    #[test]
    fn uniform_rows_give_flat_scores() {
        let s = saliency_scores(&uniform_trace(8, 2, 2, 1), 5, 0.3).unwrap();
        assert!(s.scores.iter().all(|&v| (v - 0.125).abs() < 1e-15));
    }

    #[test]
    fn one_hot_head_dominates() {
        let n = 6;
        let mut rows = vec![1.0 / n as f64; n * 2];
        rows[n..].iter_mut().for_each(|v| *v = 0.0);
        rows[n + 2] = 1.0;
        let t = AttentionTrace::from_dense(2, vec![vec![rows]; 3]);
        let s = saliency_scores(&t, n, 0.3).unwrap();
        assert_eq!(s.scores[2], 1.0);
    }

    #[test]
    fn k_rule() {
        assert_eq!(retain_count(0.3, 100), 30);
        assert_eq!(retain_count(0.3, 12), 4);
        assert_eq!(retain_count(0.01, 5), 1);
        assert_eq!(retain_count(1.0, 7), 7);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let s = SaliencyVector {
            scores: vec![0.5; 10],
            rho: 0.3,
        };
        assert_eq!(select_topk(&s), vec![0, 1, 2]);
    }

    #[test]
    fn errors() {
        assert_eq!(
            saliency_scores(&AttentionTrace::new(), 3, 0.3),
            Err(ChsaError::EmptyTrace)
        );
        assert_eq!(
            saliency_scores(&uniform_trace(3, 1, 1, 1), 3, 0.0),
            Err(ChsaError::BadRatio(0.0))
        );
        let c = KvCache::new(1, 1, 1);
        assert!(matches!(
            build_chsa_cache(&c, &c, &[0]),
            Err(ChsaError::IndexOutOfRange { .. })
        ));
    }
}
