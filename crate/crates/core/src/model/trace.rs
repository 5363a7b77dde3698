use super::cache::{Origin, PositionTag};

/// Attention weights of one layer for one query position: `[head][ctx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRows {
    num_heads: usize,
    weights: Vec<f64>,
    tags: Vec<PositionTag>,
}

impl LayerRows {
    pub fn new(num_heads: usize, weights: Vec<f64>, tags: Vec<PositionTag>) -> Self {
        assert_eq!(weights.len(), num_heads * tags.len(), "rows shape");
        Self {
            num_heads,
            weights,
            tags,
        }
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    pub fn context_len(&self) -> usize {
        self.tags.len()
    }

    pub fn row(&self, head: usize) -> &[f64] {
        let n = self.context_len();
        &self.weights[head * n..(head + 1) * n]
    }

    pub fn tags(&self) -> &[PositionTag] {
        &self.tags
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// All layers of one forward pass at one position.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttentionRows {
    layers: Vec<LayerRows>,
}

impl AttentionRows {
    pub fn new(layers: Vec<LayerRows>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[LayerRows] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &LayerRows {
        &self.layers[l]
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Largest per-row deviation of the weight sum from one, and whether
    /// every weight lies in `[0, 1]`.
    pub fn check_distributions(&self) -> (f64, bool) {
        let mut worst = 0.0f64;
        let mut in_range = true;
        for l in &self.layers {
            for h in 0..l.num_heads {
                let row = l.row(h);
                worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
                in_range &= row.iter().all(|&w| (0.0..=1.0).contains(&w));
            }
        }
        (worst, in_range)
    }
}

/// `A[t, l, h, j]` over a sequence of forward passes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttentionTrace {
    steps: Vec<AttentionRows>,
}

impl AttentionTrace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a trace from dense weights `[l][h][ctx_t]` per step. All
    /// positions are tagged as ego prefill of agent 0.
    pub fn from_dense(num_heads: usize, steps: Vec<Vec<Vec<f64>>>) -> Self {
        let steps = steps
            .into_iter()
            .map(|layers| {
                AttentionRows::new(
                    layers
                        .into_iter()
                        .map(|w| {
                            let n = w.len() / num_heads;
                            let tags = vec![
                                PositionTag {
                                    origin: Origin::EgoPrefill,
                                    agent: 0,
                                };
                                n
                            ];
                            LayerRows::new(num_heads, w, tags)
                        })
                        .collect(),
                )
            })
            .collect();
        Self { steps }
    }

    pub fn push(&mut self, rows: AttentionRows) {
        self.steps.push(rows);
    }

    pub fn extend(&mut self, other: AttentionTrace) {
        self.steps.extend(other.steps);
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[AttentionRows] {
        &self.steps
    }

    pub fn step(&self, t: usize) -> &AttentionRows {
        &self.steps[t]
    }

    /// Context length of step `t` (the widest layer).
    pub fn context_len(&self, t: usize) -> usize {
        self.steps[t]
            .layers
            .iter()
            .map(|l| l.context_len())
            .max()
            .unwrap_or(0)
    }

    /// Weight at `(t, l, h, j)`; zero past the row's context.
    pub fn weight(&self, t: usize, l: usize, h: usize, j: usize) -> f64 {
        let rows = &self.steps[t].layers[l];
        rows.row(h).get(j).copied().unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_trace_indexing() {
        let t = AttentionTrace::from_dense(2, vec![vec![vec![0.25, 0.75, 1.0, 0.0]]]);
        assert_eq!(t.len(), 1);
        assert_eq!(t.context_len(0), 2);
        assert_eq!(t.weight(0, 0, 1, 0), 1.0);
        assert_eq!(t.weight(0, 0, 0, 5), 0.0);
        let (dev, ok) = t.step(0).check_distributions();
        assert!(dev < 1e-12 && ok);
    }
}
