#![allow(dead_code)]

use std::path::PathBuf;

use laco_core::model::{init_model, KvCache, Model, ModelConfig};
use laco_core::scenario::ScenarioSpec;
use rand_core::{Rng, SeedableRng};
use rand_pcg::Pcg64;

pub struct Gen(Pcg64);

impl Gen {
    pub fn new(seed: u64) -> Self {
        Gen(Pcg64::seed_from_u64(seed))
    }

    pub fn u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.0.next_u64() % (hi - lo + 1) as u64) as usize
    }

    pub fn normalish(&mut self) -> f64 {
        2.0 * self.unit() - 1.0
    }

    /// A random probability vector of length `n`.
    pub fn simplex(&mut self, n: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| self.unit() + 1e-3).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / s).collect()
    }

    pub fn tokens(&mut self, n: usize, vocab: usize) -> Vec<u32> {
        (0..n).map(|_| self.int(0, vocab - 1) as u32).collect()
    }

    pub fn vec_f32(&mut self, n: usize) -> Vec<f32> {
        (0..n).map(|_| self.normalish() as f32).collect()
    }
}

/// Small random model with `d_h = model_dim / num_heads`.
pub fn random_model(g: &mut Gen) -> Model {
    let layers = g.int(2, 4);
    let heads = g.int(1, 4);
    let head_dim = g.int(1, 4);
    let vocab = g.int(4, 16);
    init_model(ModelConfig::new(
        layers,
        heads,
        heads * head_dim,
        vocab,
        64,
        g.u64(),
    ))
    .unwrap()
}

pub fn random_prefill(g: &mut Gen, model: &Model) -> KvCache {
    let n = g.int(1, 12);
    let toks = g.tokens(n, model.config().vocab_size);
    laco_core::model::prefill(model, &toks).unwrap().cache
}

pub fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn load(name: &str) -> ScenarioSpec {
    ScenarioSpec::load(&scenario_dir().join(format!("{name}.txt"))).unwrap()
}

/// Every shipped occluded-hazard layout.
pub fn occluded_set() -> Vec<ScenarioSpec> {
    let mut names: Vec<String> = std::fs::read_dir(scenario_dir())
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("occluded_") && n.ends_with(".txt"))
        .collect();
    names.sort();
    names
        .iter()
        .map(|n| load(n.trim_end_matches(".txt")))
        .collect()
}

pub fn all_scenarios() -> Vec<ScenarioSpec> {
    let mut v = occluded_set();
    v.push(load("clear_lane"));
    v
}
