//! Browser demo: runs the shipped scenarios in the page and reports
//! trajectories, payload sizes and attention diagnostics as JSON.
//!
//! Everything here is plain Rust so it can be tested natively; the
//! `wasm` module only wraps it for JavaScript.

use std::collections::BTreeMap;

use laco_core::chsa::retain_count;
use laco_core::model::{hazard_config, make_hazard_model, Model};
use laco_core::scenario::{
    outcome_name, run_episode, run_tick, Cell, EpisodeMetrics, Paradigm, RunConfig, ScenarioError,
    ScenarioSpec,
};
use laco_core::sskd::{comm_layers, Dtype};
use laco_core::telemetry::{self, DEFAULT_EPS};
use laco_core::wire::payload_size_bytes;
use serde::Serialize;
use thiserror::Error;

const SCENARIOS: [(&str, &str); 6] = [
    (
        "occluded_a",
        include_str!("../../../scenarios/occluded_a.txt"),
    ),
    (
        "occluded_b",
        include_str!("../../../scenarios/occluded_b.txt"),
    ),
    (
        "occluded_c",
        include_str!("../../../scenarios/occluded_c.txt"),
    ),
    (
        "occluded_d",
        include_str!("../../../scenarios/occluded_d.txt"),
    ),
    (
        "occluded_e",
        include_str!("../../../scenarios/occluded_e.txt"),
    ),
    (
        "clear_lane",
        include_str!("../../../scenarios/clear_lane.txt"),
    ),
];

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("{0}")]
    BadArgument(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub fn scenario_names() -> Vec<&'static str> {
    SCENARIOS.iter().map(|(n, _)| *n).collect()
}

pub fn scenario(name: &str) -> Result<ScenarioSpec, DemoError> {
    let (_, text) = SCENARIOS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| DemoError::UnknownScenario(name.to_string()))?;
    Ok(ScenarioSpec::parse(text)?)
}

fn model() -> Model {
    make_hazard_model(hazard_config()).expect("hazard model")
}

/// Knobs exposed in the page.
#[derive(Debug, Clone, Copy)]
pub struct Settings {
    pub m: usize,
    pub rho: f64,
    pub l_comm_fraction: f64,
    pub half: bool,
}

impl Settings {
    fn config(&self, spec: &ScenarioSpec, paradigm: &str) -> Result<RunConfig, DemoError> {
        let p: Paradigm = paradigm.parse().map_err(DemoError::BadArgument)?;
        let mut cfg = spec.run_config(p);
        cfg.m = self.m;
        cfg.rho = self.rho;
        cfg.l_comm_fraction = self.l_comm_fraction;
        cfg.dtype = if self.half { Dtype::F16 } else { Dtype::F32 };
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct VehicleFrame {
    id: u32,
    col: usize,
    row: usize,
    status: &'static str,
    action: Option<String>,
    sent_bytes: usize,
}

#[derive(Serialize)]
struct Frame {
    tick: u32,
    vehicles: Vec<VehicleFrame>,
    pedestrians: Vec<(usize, usize)>,
    events: Vec<String>,
}

#[derive(Serialize)]
struct Episode {
    name: String,
    paradigm: String,
    width: usize,
    height: usize,
    /// One string per row, `#` for obstacles.
    rows: Vec<String>,
    frames: Vec<Frame>,
    metrics: EpisodeMetrics,
}

fn frame(
    world: &laco_core::scenario::World,
    actions: &BTreeMap<u32, (String, usize)>,
    events: Vec<String>,
) -> Frame {
    Frame {
        tick: world.tick,
        vehicles: world
            .vehicles
            .iter()
            .map(|v| VehicleFrame {
                id: v.id,
                col: v.col,
                row: v.row,
                status: outcome_name(v.status),
                action: actions.get(&v.id).map(|a| a.0.clone()),
                sent_bytes: actions.get(&v.id).map_or(0, |a| a.1),
            })
            .collect(),
        pedestrians: world.pedestrian_cells(world.tick),
        events,
    }
}

/// Plays one episode and returns every frame plus the final metrics.
pub fn run_json(name: &str, paradigm: &str, s: Settings) -> Result<String, DemoError> {
    let spec = scenario(name)?;
    let cfg = s.config(&spec, paradigm)?;
    let model = model();
    let mut world = spec.world();
    let mut frames = vec![frame(&world, &BTreeMap::new(), Vec::new())];
    while world.tick < cfg.max_ticks && !world.active_ids().is_empty() {
        let r = run_tick(&model, &mut world, &cfg, None)?;
        let actions = r
            .agents
            .iter()
            .map(|a| {
                (
                    a.id,
                    (format!("{:?}", a.action).to_uppercase(), a.message_bytes),
                )
            })
            .collect();
        let events = r
            .events
            .iter()
            .map(|e| format!("agent {}: {:?}", e.agent, e.kind))
            .collect();
        frames.push(frame(&world, &actions, events));
    }
    let metrics = run_episode(&model, &spec, &cfg)?.metrics;
    let grid = &spec.grid;
    let rows = (0..grid.height())
        .map(|r| {
            (0..grid.width())
                .map(|c| {
                    if grid.cell(c, r) == Cell::Obstacle {
                        '#'
                    } else {
                        '.'
                    }
                })
                .collect()
        })
        .collect();
    Ok(serde_json::to_string(&Episode {
        name: spec.name.clone(),
        paradigm: cfg.paradigm.name().to_string(),
        width: grid.width(),
        height: grid.height(),
        rows,
        frames,
        metrics,
    })?)
}

#[derive(Serialize)]
struct Sizes {
    tokens: usize,
    kept_tokens: usize,
    l_comm: usize,
    laco_bytes: usize,
    full_cache_bytes: usize,
    ratio: f64,
}

/// Message sizes for one agent on `name`: the compressed payload against
/// the full prefill cache at every layer.
pub fn sizes_json(name: &str, s: Settings) -> Result<String, DemoError> {
    let spec = scenario(name)?;
    let cfg = hazard_config();
    let t = spec.observation_len();
    if !(s.rho > 0.0 && s.rho <= 1.0) {
        return Err(DemoError::BadArgument(format!(
            "rho must be in (0, 1], got {}",
            s.rho
        )));
    }
    let l_comm = comm_layers(s.l_comm_fraction, cfg.num_layers)
        .map_err(|e| DemoError::BadArgument(e.to_string()))?;
    let dtype = if s.half { Dtype::F16 } else { Dtype::F32 };
    let kept = retain_count(s.rho, t);
    let laco = if s.m == 0 {
        0
    } else {
        payload_size_bytes(l_comm, cfg.num_heads, cfg.head_dim(), kept, s.m, dtype)
    };
    let full = payload_size_bytes(cfg.num_layers, cfg.num_heads, cfg.head_dim(), t, 0, dtype);
    Ok(serde_json::to_string(&Sizes {
        tokens: t,
        kept_tokens: kept,
        l_comm,
        laco_bytes: laco,
        full_cache_bytes: full,
        ratio: laco as f64 / full as f64,
    })?)
}

#[derive(Serialize)]
struct Attention {
    agent: u32,
    latent_entropy: Option<Vec<f64>>,
    decision_entropy: Option<Vec<f64>>,
    fraction_for_80: Option<f64>,
    foreign_mass: Option<Vec<f64>>,
}

/// Per-layer attention diagnostics for every agent on the first tick.
pub fn attention_json(name: &str, paradigm: &str, s: Settings) -> Result<String, DemoError> {
    let spec = scenario(name)?;
    let mut cfg = s.config(&spec, paradigm)?;
    cfg.record_telemetry = true;
    let mut records = Vec::new();
    run_tick(&model(), &mut spec.world(), &cfg, Some(&mut records))?;
    let out: Vec<Attention> = telemetry::analyze(&records, DEFAULT_EPS)
        .into_iter()
        .map(|a| Attention {
            agent: a.agent,
            latent_entropy: a.latent_entropy.map(|e| e.per_layer),
            decision_entropy: a.decision_entropy.map(|e| e.per_layer),
            fraction_for_80: a.sparsity.map(|c| c.fraction_for_80),
            foreign_mass: a.confusion.map(|c| c.per_layer),
        })
        .collect();
    Ok(serde_json::to_string(&out)?)
}

#[cfg(target_arch = "wasm32")]
mod wasm {
    use wasm_bindgen::prelude::*;

    use super::Settings;

    fn js(e: super::DemoError) -> JsValue {
        JsValue::from_str(&e.to_string())
    }

    #[wasm_bindgen]
    pub fn scenarios() -> String {
        super::scenario_names().join(",")
    }

    #[wasm_bindgen]
    pub fn run(
        name: &str,
        paradigm: &str,
        m: usize,
        rho: f64,
        l_comm: f64,
        half: bool,
    ) -> Result<String, JsValue> {
        super::run_json(
            name,
            paradigm,
            Settings {
                m,
                rho,
                l_comm_fraction: l_comm,
                half,
            },
        )
        .map_err(js)
    }

    #[wasm_bindgen]
    pub fn sizes(
        name: &str,
        m: usize,
        rho: f64,
        l_comm: f64,
        half: bool,
    ) -> Result<String, JsValue> {
        super::sizes_json(
            name,
            Settings {
                m,
                rho,
                l_comm_fraction: l_comm,
                half,
            },
        )
        .map_err(js)
    }

    #[wasm_bindgen]
    pub fn attention(
        name: &str,
        paradigm: &str,
        m: usize,
        rho: f64,
        l_comm: f64,
    ) -> Result<String, JsValue> {
        let s = Settings {
            m,
            rho,
            l_comm_fraction: l_comm,
            half: false,
        };
        super::attention_json(name, paradigm, s).map_err(js)
    }
}
