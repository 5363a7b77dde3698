use super::cache::{KvCache, Origin, PositionTag};
use super::trace::{AttentionRows, AttentionTrace, LayerRows};
use super::{Model, ModelError};

const RMS_EPS: f64 = 1e-6;

/// Result of a single-position forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    pub hidden: Vec<f32>,
    pub rows: AttentionRows,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prefill {
    pub hidden: Vec<f32>,
    pub cache: KvCache,
    pub trace: AttentionTrace,
}

/// Runs the observation through the model, one causal position at a time.
pub fn prefill(model: &Model, tokens: &[u32]) -> Result<Prefill, ModelError> {
    let cfg = model.config();
    if tokens.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    if tokens.len() > cfg.max_context {
        return Err(ModelError::ContextOverflow {
            slot: tokens.len() - 1,
            max: cfg.max_context,
        });
    }
    let mut cache = KvCache::new(cfg.num_layers, cfg.num_heads, cfg.head_dim());
    let mut trace = AttentionTrace::new();
    let mut hidden = Vec::new();
    for &tok in tokens {
        let x = model.embed(tok)?;
        let out = forward_position(model, &x, &mut cache, Origin::EgoPrefill, &[])?;
        trace.push(out.rows);
        hidden = out.hidden;
    }
    model.bump(|c| c.prefills += 1);
    Ok(Prefill {
        hidden,
        cache,
        trace,
    })
}

/// One forward pass for an arbitrary input vector, appending one position
/// tagged `origin` to `cache`.
pub fn decode_step(
    model: &Model,
    input: &[f32],
    cache: &mut KvCache,
    origin: Origin,
) -> Result<DecodeOutput, ModelError> {
    if cache.is_empty() {
        return Err(ModelError::EmptyCache);
    }
    let out = forward_position(model, input, cache, origin, &[])?;
    model.bump(|c| c.decode_steps += 1);
    Ok(out)
}

fn check_cache(model: &Model, cache: &KvCache, what: &str) -> Result<(), ModelError> {
    let cfg = model.config();
    if cache.num_heads() != cfg.num_heads || cache.head_dim() != cfg.head_dim() {
        return Err(ModelError::CacheShape(format!(
            "{what} cache has H={} d_h={}, model has H={} d_h={}",
            cache.num_heads(),
            cache.head_dim(),
            cfg.num_heads,
            cfg.head_dim()
        )));
    }
    if cache.num_layers() > cfg.num_layers {
        return Err(ModelError::CacheShape(format!(
            "{what} cache has {} layers, model has {}",
            cache.num_layers(),
            cfg.num_layers
        )));
    }
    Ok(())
}

/// Shared forward path for prefill, deliberation, decoding and fusion.
///
/// At layer `l` the new position attends over the ego cache (including
/// itself) followed by every foreign cache that has a layer `l`, in the
/// order given. Only the ego cache is written.
pub(crate) fn forward_position(
    model: &Model,
    input: &[f32],
    ego: &mut KvCache,
    origin: Origin,
    foreign: &[&KvCache],
) -> Result<DecodeOutput, ModelError> {
    let cfg = model.config();
    let d = cfg.model_dim;
    let nh = cfg.num_heads;
    let dh = cfg.head_dim();
    if input.len() != d {
        return Err(ModelError::DimensionMismatch {
            expected: d,
            got: input.len(),
        });
    }
    if !input.iter().all(|v| v.is_finite()) {
        return Err(ModelError::NonFiniteInput);
    }
    check_cache(model, ego, "ego")?;
    if ego.num_layers() != cfg.num_layers {
        return Err(ModelError::CacheShape(format!(
            "ego cache has {} layers, model has {}",
            ego.num_layers(),
            cfg.num_layers
        )));
    }
    for f in foreign {
        check_cache(model, f, "foreign")?;
    }
    let slot = ego.len();
    if slot >= cfg.max_context {
        return Err(ModelError::ContextOverflow {
            slot,
            max: cfg.max_context,
        });
    }

    let pe = model.positional_encoding().row(slot);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut x = input.to_vec();
    let mut layer_rows = Vec::with_capacity(cfg.num_layers);
    ego.push_origin(origin);

    for (l, w) in model.layers().iter().enumerate() {
        let u: Vec<f32> = x.iter().zip(pe).map(|(a, b)| a + b).collect();
        let q = w.wq.left_mul(&u);
        let k = w.wk.left_mul(&u);
        let v = w.wv.left_mul(&x);
        ego.push_layer(l, &k, &v);

        let sources: Vec<&KvCache> = std::iter::once(&*ego)
            .chain(foreign.iter().copied().filter(|f| f.num_layers() > l))
            .collect();
        let ctx: usize = sources.iter().map(|s| s.len()).sum();
        let tags: Vec<PositionTag> = sources
            .iter()
            .flat_map(|s| (0..s.len()).map(move |p| s.tag(p)))
            .collect();

        let mut weights = vec![0.0f64; nh * ctx];
        let mut attn = vec![0.0f32; d];
        for h in 0..nh {
            let qh = &q[h * dh..(h + 1) * dh];
            let row = &mut weights[h * ctx..(h + 1) * ctx];
            let mut j = 0;
            for s in &sources {
                for p in 0..s.len() {
                    let kh = s.key(l, p, h);
                    let dot: f64 = qh.iter().zip(kh).map(|(a, b)| *a as f64 * *b as f64).sum();
                    row[j] = dot * scale;
                    j += 1;
                }
            }
            softmax_in_place(row);
            let mut acc = vec![0.0f64; dh];
            let mut j = 0;
            for s in &sources {
                for p in 0..s.len() {
                    let wj = row[j];
                    for (a, &vv) in acc.iter_mut().zip(s.value(l, p, h)) {
                        *a += wj * vv as f64;
                    }
                    j += 1;
                }
            }
            for (o, a) in attn[h * dh..(h + 1) * dh].iter_mut().zip(&acc) {
                *o = *a as f32;
            }
        }
        let o = w.wo.left_mul(&attn);
        for (xi, oi) in x.iter_mut().zip(&o) {
            *xi += oi;
        }
        let mut hid = w.w1.left_mul(&x);
        for v in &mut hid {
            *v = v.max(0.0);
        }
        let m = w.w2.left_mul(&hid);
        for (xi, mi) in x.iter_mut().zip(&m) {
            *xi += mi;
        }
        layer_rows.push(LayerRows::new(nh, weights, tags));
    }

    Ok(DecodeOutput {
        hidden: rms_norm(&x),
        rows: AttentionRows::new(layer_rows),
    })
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub(crate) fn rms_norm(x: &[f32]) -> Vec<f32> {
    let ms = x.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (ms + RMS_EPS).sqrt();
    x.iter().map(|v| (*v as f64 * inv) as f32).collect()
}
