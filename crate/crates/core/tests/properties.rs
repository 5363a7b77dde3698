mod common;

use std::collections::BTreeMap;

use laco_core::channel::{channel_send, ChannelConfig, Delivery};
use laco_core::chsa::{retain_count, saliency_scores, select_topk, SaliencyVector};
use laco_core::fusion::{collaborative_decode, FusedContext};
use laco_core::model::{init_model, prefill, AttentionTrace, KvCache, ModelConfig, Origin};
use laco_core::scenario::{infraction_score, Infraction};
use laco_core::sskd::{comm_layers, Dtype, Payload};
use laco_core::telemetry::{
    confusion_index, layer_entropy, sparsity_from_mass, token_mass, DEFAULT_EPS,
};
use laco_core::wire::{deserialize, payload_size_bytes, serialize, WireError};
use proptest::prelude::*;

fn simplex(raw: Vec<f64>) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

fn dense_rows(layers: usize, heads: usize, n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(
        prop::collection::vec(prop::collection::vec(0.001f64..1.0, n), heads)
            .prop_map(|hs| hs.into_iter().flat_map(simplex).collect::<Vec<f64>>()),
        layers,
    )
}

fn sized_rows() -> impl Strategy<Value = (usize, Vec<Vec<f64>>)> {
    (1usize..4, 1usize..4, 1usize..24).prop_flat_map(|(l, h, n)| (Just(h), dense_rows(l, h, n)))
}

fn payload_shape() -> impl Strategy<Value = (usize, usize, usize, usize, usize, bool, u64)> {
    (
        1usize..4,
        1usize..4,
        1usize..6,
        0usize..8,
        0usize..6,
        any::<bool>(),
        any::<u64>(),
    )
        .prop_filter("non-empty", |s| s.3 + s.4 > 0)
}

fn build_payload(shape: (usize, usize, usize, usize, usize, bool, u64)) -> Payload {
    let (l, h, dh, salient, latent, half, seed) = shape;
    let mut g = common::Gen::new(seed);
    let n = salient + latent;
    let origins = (0..n)
        .map(|i| {
            if i < salient {
                Origin::EgoPrefill
            } else {
                Origin::EgoLatent
            }
        })
        .collect();
    let layers = (0..l)
        .map(|_| (g.vec_f32(n * h * dh), g.vec_f32(n * h * dh)))
        .collect();
    let cache = KvCache::from_raw(h, dh, (seed % 7) as u32, origins, layers).unwrap();
    let table = (0..salient as u32).collect();
    let dtype = if half { Dtype::F16 } else { Dtype::F32 };
    Payload::new(seed, cache, salient, table)
        .unwrap()
        .with_dtype(dtype)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prefill_rows_are_causal_distributions(seed in any::<u64>(), toks in prop::collection::vec(0u32..8, 1..16)) {
        let model = init_model(ModelConfig::new(2, 2, 8, 8, 32, seed)).unwrap();
        let p = prefill(&model, &toks).unwrap();
        prop_assert_eq!(p.cache.len(), toks.len());
        prop_assert!(p.cache.is_consistent());
        for (i, rows) in p.trace.steps().iter().enumerate() {
            let (dev, in_range) = rows.check_distributions();
            prop_assert!(dev <= 1e-9 && in_range);
            prop_assert!(rows.layers().iter().all(|l| l.context_len() == i + 1));
        }
    }

    #[test]
    fn top_k_keeps_the_heaviest(scores in prop::collection::vec(0.0f64..1.0, 1..64), rho in 0.01f64..=1.0) {
        let s = SaliencyVector { scores: scores.clone(), rho };
        let k = retain_count(rho, scores.len());
        prop_assert!(k >= 1 && k <= scores.len());
        prop_assert!(k as f64 >= rho * scores.len() as f64 - 1e-6);
        let keep = select_topk(&s);
        prop_assert_eq!(keep.len(), k);
        prop_assert!(keep.windows(2).all(|w| w[0] < w[1]));
        let floor = keep.iter().map(|&i| scores[i]).fold(f64::INFINITY, f64::min);
        for (i, &v) in scores.iter().enumerate() {
            if !keep.contains(&i) {
                prop_assert!(v <= floor);
            }
        }
    }

    #[test]
    fn saliency_scores_lie_in_unit_interval((h, rows) in sized_rows(), steps in 1usize..4) {
        let n = rows[0].len() / h;
        let trace = AttentionTrace::from_dense(h, vec![rows; steps]);
        let s = saliency_scores(&trace, n, 0.5).unwrap();
        prop_assert!(s.scores.iter().all(|&x| (0.0..=1.0 + 1e-12).contains(&x)));
    }

    #[test]
    fn comm_layers_bounded_and_monotone(l in 1usize..64, a in 0.001f64..=1.0, b in 0.001f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let x = comm_layers(lo, l).unwrap();
        let y = comm_layers(hi, l).unwrap();
        prop_assert!(1 <= x && x <= y && y <= l);
        prop_assert_eq!(comm_layers(1.0, l).unwrap(), l);
    }

    #[test]
    fn wire_round_trip(shape in payload_shape()) {
        let p = build_payload(shape);
        let bytes = serialize(&p);
        let (l, h, dh, salient, latent, _, _) = shape;
        prop_assert_eq!(bytes.len(), payload_size_bytes(l, h, dh, salient, latent, p.dtype()));
        prop_assert_eq!(deserialize(&bytes).unwrap(), p);
    }

    #[test]
    fn wire_rejects_truncation(shape in payload_shape(), cut in any::<prop::sample::Index>()) {
        let bytes = serialize(&build_payload(shape));
        let at = cut.index(bytes.len());
        let truncated = matches!(deserialize(&bytes[..at]), Err(WireError::Truncated { .. }));
        prop_assert!(truncated);
        let mut longer = bytes.clone();
        longer.push(0);
        prop_assert_eq!(deserialize(&longer), Err(WireError::TrailingBytes(1)));
    }

    #[test]
    fn wire_never_panics_on_noise(bytes in prop::collection::vec(any::<u8>(), 0..128)) {
        let mut b = bytes;
        if b.len() >= 4 {
            b[..4].copy_from_slice(b"LACO");
        }
        let _ = deserialize(&b);
    }

    #[test]
    fn half_payloads_are_exactly_representable(shape in payload_shape()) {
        let p = build_payload((shape.0, shape.1, shape.2, shape.3, shape.4, true, shape.6));
        let again = p.clone().with_dtype(Dtype::F16);
        prop_assert_eq!(again, p);
    }

    #[test]
    fn entropy_within_bounds((h, rows) in sized_rows()) {
        let n = rows[0].len() / h;
        let trace = AttentionTrace::from_dense(h, vec![rows]);
        let e = layer_entropy(trace.step(0), DEFAULT_EPS);
        for v in e.per_layer {
            prop_assert!(v >= -1e-6 && v <= (n as f64).ln() + 1e-6);
        }
    }

    #[test]
    fn sparsity_curve_shape(mass in prop::collection::vec(0.0f64..1.0, 1..64), shift in 0usize..64) {
        prop_assume!(mass.iter().sum::<f64>() > 0.0);
        let c = sparsity_from_mass(mass.clone());
        prop_assert!(c.cumulative.windows(2).all(|w| w[0] <= w[1] + 1e-15));
        prop_assert!((c.cumulative.last().unwrap() - 1.0).abs() <= 1e-6);
        prop_assert!(c.fraction_for_80 > 0.0 && c.fraction_for_80 <= 1.0);
        let mut rotated = mass.clone();
        rotated.rotate_left(shift % mass.len());
        let r = sparsity_from_mass(rotated);
        prop_assert_eq!(r.cumulative, c.cumulative);
        prop_assert_eq!(r.fraction_for_80, c.fraction_for_80);
    }

    #[test]
    fn token_mass_sums_to_one((h, rows) in sized_rows()) {
        let trace = AttentionTrace::from_dense(h, vec![rows]);
        let total: f64 = token_mass(&trace).iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn shallow_fusion_isolates_deep_layers(seed in any::<u64>(), l_comm in 1usize..4, toks in prop::collection::vec(0u32..8, 1..8)) {
        let model = init_model(ModelConfig::new(4, 2, 8, 8, 64, seed)).unwrap();
        let ego = prefill(&model, &toks).unwrap().cache;
        let foreign = ego.truncate_layers(l_comm).with_agent(9).into_foreign();
        let mut ctx = FusedContext::new(ego.clone());
        ctx.attach_cache(foreign.clone()).unwrap();
        let x = model.embed(toks[0]).unwrap();
        let out = collaborative_decode(&model, &x, &mut ctx).unwrap();
        let conf = confusion_index(&out.rows).per_layer;
        prop_assert!(conf.iter().all(|&c| (0.0..=1.0).contains(&c)));
        prop_assert!(conf[l_comm..].iter().all(|&c| c == 0.0));
        prop_assert!(conf[..l_comm].iter().all(|&c| c > 0.0));
        prop_assert_eq!(ctx.ego().len(), ego.len() + 1);
        prop_assert_eq!(&ctx.foreign()[0], &foreign);
    }

    #[test]
    fn channel_range_is_inclusive(x in -500.0f64..500.0, y in -500.0f64..500.0, bytes in 0usize..10_000_000) {
        let cfg = ChannelConfig::default();
        let d = x.hypot(y);
        match channel_send(&cfg, bytes, [0.0, 0.0], [x, y]) {
            Delivery::Delivered { latency_s } => {
                prop_assert!(d <= cfg.range_m);
                prop_assert_eq!(latency_s, cfg.base_latency_s + bytes as f64 / cfg.bandwidth_bytes_per_s);
            }
            Delivery::OutOfRange { distance_m } => {
                prop_assert!(d > cfg.range_m);
                prop_assert_eq!(distance_m, d);
            }
        }
    }

    #[test]
    fn infraction_score_in_unit_interval(counts in prop::collection::vec(0u32..4, 7), rc in 0.0f64..=100.0) {
        let m: BTreeMap<Infraction, u32> = Infraction::ALL.iter().copied().zip(counts.iter().copied()).collect();
        let is = infraction_score(&m);
        prop_assert!(is > 0.0 && is <= 1.0);
        let ds = rc * is;
        prop_assert!((0.0..=100.0).contains(&ds));
        if counts.iter().all(|&c| c == 0) {
            prop_assert_eq!(is, 1.0);
        }
    }
}
