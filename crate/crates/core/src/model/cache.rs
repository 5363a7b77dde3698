use std::ops::Range;

use super::ModelError;

/// Where a cache position came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Origin {
    EgoPrefill,
    EgoLatent,
    /// Written by a decision decode after deliberation.
    EgoDecode,
    ForeignPrefill,
    ForeignLatent,
}

impl Origin {
    pub fn is_foreign(self) -> bool {
        matches!(self, Origin::ForeignPrefill | Origin::ForeignLatent)
    }

    /// How a receiver labels this position once it crosses the channel.
    pub fn as_foreign(self) -> Origin {
        match self {
            Origin::EgoPrefill | Origin::ForeignPrefill => Origin::ForeignPrefill,
            Origin::EgoLatent | Origin::EgoDecode | Origin::ForeignLatent => Origin::ForeignLatent,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Origin::EgoPrefill => 0,
            Origin::EgoLatent => 1,
            Origin::EgoDecode => 2,
            Origin::ForeignPrefill => 3,
            Origin::ForeignLatent => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Origin> {
        Some(match code {
            0 => Origin::EgoPrefill,
            1 => Origin::EgoLatent,
            2 => Origin::EgoDecode,
            3 => Origin::ForeignPrefill,
            4 => Origin::ForeignLatent,
            _ => return None,
        })
    }
}

/// Origin plus the agent that produced the entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PositionTag {
    pub origin: Origin,
    pub agent: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
struct LayerKv {
    keys: Vec<f32>,
    values: Vec<f32>,
}

/// Per-layer keys and values, stored position-major as `[pos][head][d_h]`.
///
/// Every layer holds the same positions. A cache may carry fewer layers
/// than the model that reads it; such a cache only participates in the
/// layers it has.
#[derive(Debug, Clone, PartialEq)]
pub struct KvCache {
    num_heads: usize,
    head_dim: usize,
    agent: u32,
    layers: Vec<LayerKv>,
    origins: Vec<Origin>,
}

impl KvCache {
    pub fn new(num_layers: usize, num_heads: usize, head_dim: usize) -> Self {
        Self {
            num_heads,
            head_dim,
            agent: 0,
            layers: vec![LayerKv::default(); num_layers],
            origins: Vec::new(),
        }
    }

    pub fn with_agent(mut self, agent: u32) -> Self {
        self.agent = agent;
        self
    }

    /// Rebuilds a cache from raw per-layer `(keys, values)` buffers.
    pub fn from_raw(
        num_heads: usize,
        head_dim: usize,
        agent: u32,
        origins: Vec<Origin>,
        layers: Vec<(Vec<f32>, Vec<f32>)>,
    ) -> Result<Self, ModelError> {
        let want = origins.len() * num_heads * head_dim;
        for (l, (k, v)) in layers.iter().enumerate() {
            if k.len() != want || v.len() != want {
                return Err(ModelError::CacheShape(format!(
                    "layer {l} holds {}/{} values, expected {want}",
                    k.len(),
                    v.len()
                )));
            }
        }
        Ok(Self {
            num_heads,
            head_dim,
            agent,
            layers: layers
                .into_iter()
                .map(|(keys, values)| LayerKv { keys, values })
                .collect(),
            origins,
        })
    }

    pub fn agent(&self) -> u32 {
        self.agent
    }

    pub fn set_agent(&mut self, agent: u32) {
        self.agent = agent;
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    fn row_width(&self) -> usize {
        self.num_heads * self.head_dim
    }

    pub fn origins(&self) -> &[Origin] {
        &self.origins
    }

    pub fn tag(&self, pos: usize) -> PositionTag {
        PositionTag {
            origin: self.origins[pos],
            agent: self.agent,
        }
    }

    pub fn key(&self, layer: usize, pos: usize, head: usize) -> &[f32] {
        let start = pos * self.row_width() + head * self.head_dim;
        &self.layers[layer].keys[start..start + self.head_dim]
    }

    pub fn value(&self, layer: usize, pos: usize, head: usize) -> &[f32] {
        let start = pos * self.row_width() + head * self.head_dim;
        &self.layers[layer].values[start..start + self.head_dim]
    }

    /// Raw key buffer of one layer, position-major.
    pub fn layer_keys(&self, layer: usize) -> &[f32] {
        &self.layers[layer].keys
    }

    pub fn layer_values(&self, layer: usize) -> &[f32] {
        &self.layers[layer].values
    }

    /// Opens a new position. Each layer must then receive exactly one
    /// `push_layer` call before the cache is read again.
    pub(crate) fn push_origin(&mut self, origin: Origin) {
        self.origins.push(origin);
    }

    pub(crate) fn push_layer(&mut self, layer: usize, key: &[f32], value: &[f32]) {
        debug_assert_eq!(key.len(), self.row_width());
        let l = &mut self.layers[layer];
        l.keys.extend_from_slice(key);
        l.values.extend_from_slice(value);
    }

    /// Copies the listed positions, in the order given, at every layer.
    pub fn select(&self, positions: &[usize]) -> Result<KvCache, ModelError> {
        if let Some(&bad) = positions.iter().find(|&&p| p >= self.len()) {
            return Err(ModelError::CacheShape(format!(
                "position {bad} out of range for cache of length {}",
                self.len()
            )));
        }
        let w = self.row_width();
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let mut out = LayerKv {
                    keys: Vec::with_capacity(positions.len() * w),
                    values: Vec::with_capacity(positions.len() * w),
                };
                for &p in positions {
                    out.keys.extend_from_slice(&l.keys[p * w..(p + 1) * w]);
                    out.values.extend_from_slice(&l.values[p * w..(p + 1) * w]);
                }
                out
            })
            .collect();
        Ok(KvCache {
            num_heads: self.num_heads,
            head_dim: self.head_dim,
            agent: self.agent,
            layers,
            origins: positions.iter().map(|&p| self.origins[p]).collect(),
        })
    }

    /// Contiguous slice of positions.
    pub fn range(&self, r: Range<usize>) -> Result<KvCache, ModelError> {
        let idx: Vec<usize> = r.collect();
        self.select(&idx)
    }

    /// `[self ‖ other]` at every layer.
    pub fn concat(&self, other: &KvCache) -> Result<KvCache, ModelError> {
        if self.num_heads != other.num_heads
            || self.head_dim != other.head_dim
            || self.num_layers() != other.num_layers()
        {
            return Err(ModelError::CacheShape(format!(
                "cannot concat {}x{}x{} with {}x{}x{}",
                self.num_layers(),
                self.num_heads,
                self.head_dim,
                other.num_layers(),
                other.num_heads,
                other.head_dim
            )));
        }
        let mut out = self.clone();
        for (a, b) in out.layers.iter_mut().zip(&other.layers) {
            a.keys.extend_from_slice(&b.keys);
            a.values.extend_from_slice(&b.values);
        }
        out.origins.extend_from_slice(&other.origins);
        Ok(out)
    }

    /// Keeps the first `n` layers.
    pub fn truncate_layers(&self, n: usize) -> KvCache {
        let mut out = self.clone();
        out.layers.truncate(n);
        out
    }

    /// Relabels every position as foreign.
    pub fn into_foreign(mut self) -> KvCache {
        for o in &mut self.origins {
            *o = o.as_foreign();
        }
        self
    }

    /// Every layer holds `len` positions of `H * d_h` floats.
    pub fn is_consistent(&self) -> bool {
        let want = self.len() * self.row_width();
        self.layers
            .iter()
            .all(|l| l.keys.len() == want && l.values.len() == want)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn filled(n: usize) -> KvCache {
        let mut c = KvCache::new(2, 2, 3);
        for p in 0..n {
            c.push_origin(Origin::EgoPrefill);
            for l in 0..2 {
                let k: Vec<f32> = (0..6).map(|i| (100 * l + 10 * p + i) as f32).collect();
                let v: Vec<f32> = k.iter().map(|x| -x).collect();
                c.push_layer(l, &k, &v);
            }
        }
        c
    }

    #[test]
    fn select_copies_rows_in_order() {
        let c = filled(5);
        let s = c.select(&[3, 1]).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.key(1, 0, 1), c.key(1, 3, 1));
        assert_eq!(s.value(0, 1, 0), c.value(0, 1, 0));
        assert!(s.is_consistent());
    }

    #[test]
    fn select_rejects_out_of_range() {
        assert!(filled(2).select(&[2]).is_err());
    }

    #[test]
    fn concat_and_truncate() {
        let c = filled(3);
        let cc = c.concat(&c.clone().into_foreign()).unwrap();
        assert_eq!(cc.len(), 6);
        assert_eq!(cc.origins()[4], Origin::ForeignPrefill);
        let t = cc.truncate_layers(1);
        assert_eq!(t.num_layers(), 1);
        assert_eq!(t.layer_keys(0), cc.layer_keys(0));
        assert!(c.concat(&t).is_err());
    }

    #[test]
    fn origin_codes_round_trip() {
        for o in [
            Origin::EgoPrefill,
            Origin::EgoLatent,
            Origin::EgoDecode,
            Origin::ForeignPrefill,
            Origin::ForeignLatent,
        ] {
            assert_eq!(Origin::from_code(o.code()), Some(o));
            assert!(o.as_foreign().is_foreign());
        }
        assert_eq!(Origin::from_code(9), None);
    }

    #[test]
    fn from_raw_validates_lengths() {
        assert!(KvCache::from_raw(
            2,
            2,
            0,
            vec![Origin::EgoPrefill],
            vec![(vec![0.0; 4], vec![0.0; 4])]
        )
        .is_ok());
        assert!(KvCache::from_raw(
            2,
            2,
            0,
            vec![Origin::EgoPrefill],
            vec![(vec![0.0; 3], vec![0.0; 4])]
        )
        .is_err());
    }
}
