use std::collections::BTreeMap;

use log::warn;
use serde::Serialize;

use super::metrics::{agent_metrics, episode_metrics, AgentTally, EpisodeMetrics, Infraction};
use super::spec::ScenarioSpec;
use super::world::{EventKind, World, WorldEvent};
use super::{Paradigm, RunConfig, ScenarioError};
use crate::channel::{channel_send, Delivery};
use crate::chsa::{build_chsa_cache, saliency_scores, select_topk};
use crate::fusion::{collaborative_decode, FusedContext};
use crate::ild::{compute_alignment, deliberate};
use crate::model::{argmax, decode_step, prefill, project_to_logits, KvCache, Model, Origin};
use crate::sskd::{distill_frame, Payload};
use crate::telemetry::{confusion_index, Phase, TelemetryRecord};
use crate::vocab::Action;
use crate::wire;

/// What one agent did during one tick.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentTick {
    pub id: u32,
    pub action: Action,
    /// Size of the agent's outgoing message, 0 when it sent none.
    pub message_bytes: usize,
    pub messages_sent: u64,
    pub messages_dropped: u64,
    pub latency_s: f64,
    pub received_from: Vec<u32>,
    pub forward_passes: u64,
    pub decoded_tokens: u64,
    /// Foreign attention share per layer in the decision decode.
    pub confusion: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TickReport {
    pub tick: u32,
    pub agents: Vec<AgentTick>,
    pub events: Vec<WorldEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub metrics: EpisodeMetrics,
    pub ticks: Vec<TickReport>,
    pub telemetry: Vec<TelemetryRecord>,
}

enum Message {
    Tokens(Vec<u32>),
    Wire(Vec<u8>),
}

impl Message {
    fn len(&self) -> usize {
        match self {
            // Sender id and token count, then one u32 per token.
            Message::Tokens(t) => 8 + 4 * t.len(),
            Message::Wire(b) => b.len(),
        }
    }
}

/// Phase-one state of one agent.
struct Prepared {
    id: u32,
    obs: Vec<u32>,
    cache: KvCache,
    message: Option<Message>,
    passes: u64,
    decoded: u64,
}

fn passes_since(model: &Model, before: &crate::model::Counters) -> u64 {
    model.counters().since(before).forward_passes()
}

fn to_action(agent: u32, token: usize) -> Result<Action, ScenarioError> {
    let token = token as u32;
    Action::from_token(token).ok_or(ScenarioError::InvalidAction { agent, token })
}

fn prepare(
    model: &Model,
    world: &World,
    id: u32,
    config: &RunConfig,
    telemetry: &mut Option<&mut Vec<TelemetryRecord>>,
) -> Result<Prepared, ScenarioError> {
    let before = model.counters();
    let tick = world.tick;
    let obs = world.observe(id).ok_or(ScenarioError::UnknownAgent(id))?;
    let pre = prefill(model, &obs)?;
    let mut cache = pre.cache;
    cache.set_agent(id);
    if let Some(t) = telemetry.as_deref_mut() {
        if config.record_prefill {
            for (step, rows) in pre.trace.steps().iter().enumerate() {
                t.push(TelemetryRecord {
                    agent: id,
                    tick,
                    phase: Phase::Prefill,
                    step: step as u32,
                    rows: rows.clone(),
                });
            }
        }
    }
    let mut decoded = 0;

    let message = match config.paradigm {
        Paradigm::NonCollab => None,
        Paradigm::Language => {
            if config.m == 0 {
                None
            } else {
                let mut scratch = cache.clone();
                let mut tokens = Vec::with_capacity(config.m);
                let mut tok = argmax(&project_to_logits(model, &pre.hidden)?) as u32;
                tokens.push(tok);
                while tokens.len() < config.m {
                    let x = model.embed(tok)?;
                    let out = decode_step(model, &x, &mut scratch, Origin::EgoDecode)?;
                    tok = argmax(&project_to_logits(model, &out.hidden)?) as u32;
                    tokens.push(tok);
                }
                decoded = tokens.len() as u64;
                Some(Message::Tokens(tokens))
            }
        }
        _ => build_kv_payload(model, id, tick, &pre.hidden, &mut cache, config, telemetry)?
            .map(|p| Message::Wire(wire::serialize(&p))),
    };

    Ok(Prepared {
        id,
        obs,
        cache,
        message,
        passes: passes_since(model, &before),
        decoded,
    })
}

/// The cache message of a KV paradigm, built from a prefilled `cache`.
/// Deliberating paradigms append their latent steps to `cache`.
fn build_kv_payload(
    model: &Model,
    id: u32,
    tick: u32,
    h0: &[f32],
    cache: &mut KvCache,
    config: &RunConfig,
    telemetry: &mut Option<&mut Vec<TelemetryRecord>>,
) -> Result<Option<Payload>, ScenarioError> {
    let prefill_len = cache.len();
    let all = || (0..prefill_len as u32).collect::<Vec<_>>();
    let payload = match config.paradigm {
        Paradigm::NonCollab | Paradigm::Language => return Ok(None),
        Paradigm::Visual => Payload::new(tick as u64, cache.clone(), prefill_len, all())?,
        Paradigm::Laco if config.m == 0 => {
            warn!("agent {id}: m = 0 leaves no latent trace to rank tokens by, sending nothing");
            return Ok(None);
        }
        Paradigm::NaiveLatent | Paradigm::Laco => {
            let align = compute_alignment(model)?;
            let d = deliberate(model, align, h0, cache, config.m)?;
            if let Some(t) = telemetry.as_deref_mut() {
                for (step, rows) in d.trace.steps().iter().enumerate() {
                    t.push(TelemetryRecord {
                        agent: id,
                        tick,
                        phase: Phase::Latent,
                        step: step as u32,
                        rows: rows.clone(),
                    });
                }
            }
            if config.paradigm == Paradigm::Laco {
                let s = saliency_scores(&d.trace, prefill_len, config.rho)?;
                let prefix = cache.range(0..prefill_len)?;
                let chsa = build_chsa_cache(&prefix, &d.latent, &select_topk(&s))?;
                distill_frame(&chsa, config.l_comm_fraction, tick as u64)?
            } else {
                Payload::new(tick as u64, cache.clone(), prefill_len, all())?
            }
        }
    };
    Ok(Some(payload.with_dtype(config.dtype)))
}

/// The cache payload `agent` would send in the current world state, or
/// `None` for paradigms without one.
pub fn agent_payload(
    model: &Model,
    world: &World,
    agent: u32,
    config: &RunConfig,
) -> Result<Option<Payload>, ScenarioError> {
    let obs = world
        .observe(agent)
        .ok_or(ScenarioError::UnknownAgent(agent))?;
    let pre = prefill(model, &obs)?;
    let mut cache = pre.cache;
    cache.set_agent(agent);
    build_kv_payload(
        model,
        agent,
        world.tick,
        &pre.hidden,
        &mut cache,
        config,
        &mut None,
    )
}

/// One closed-loop tick: every active agent observes and builds its
/// message, messages cross the channel, every agent decides, then the
/// world advances.
pub fn run_tick(
    model: &Model,
    world: &mut World,
    config: &RunConfig,
    mut telemetry: Option<&mut Vec<TelemetryRecord>>,
) -> Result<TickReport, ScenarioError> {
    let tick = world.tick;
    let ids = world.active_ids();
    let mut prepared = Vec::with_capacity(ids.len());
    for &id in &ids {
        prepared.push(prepare(model, world, id, config, &mut telemetry)?);
    }

    let pos = |id: u32| -> [f64; 2] {
        let v = world.vehicle(id).expect("active agent");
        [v.col as f64 * config.cell_m, v.row as f64 * config.cell_m]
    };

    let mut reports: Vec<AgentTick> = prepared
        .iter()
        .map(|p| AgentTick {
            id: p.id,
            action: Action::Keep,
            message_bytes: p.message.as_ref().map_or(0, Message::len),
            messages_sent: 0,
            messages_dropped: 0,
            latency_s: 0.0,
            received_from: Vec::new(),
            forward_passes: p.passes,
            decoded_tokens: p.decoded,
            confusion: Vec::new(),
        })
        .collect();

    // Deliveries in ascending sender order for every receiver.
    let mut inbox: Vec<Vec<(u32, &Message)>> = vec![Vec::new(); prepared.len()];
    for (si, sender) in prepared.iter().enumerate() {
        let Some(msg) = &sender.message else { continue };
        for (ri, receiver) in prepared.iter().enumerate() {
            if ri == si {
                continue;
            }
            reports[si].messages_sent += 1;
            match channel_send(&config.channel, msg.len(), pos(sender.id), pos(receiver.id)) {
                Delivery::Delivered { latency_s } => {
                    reports[si].latency_s += latency_s;
                    inbox[ri].push((sender.id, msg));
                }
                Delivery::OutOfRange { .. } => reports[si].messages_dropped += 1,
            }
        }
    }

    let mut actions = BTreeMap::new();
    for ((p, inbox), report) in prepared.iter().zip(&inbox).zip(reports.iter_mut()) {
        let before = model.counters();
        report.received_from = inbox.iter().map(|(s, _)| *s).collect();
        let marker = *p.obs.last().expect("observation ends with the ego marker");
        let x = model.embed(marker)?;

        let mut ctx = if config.paradigm == Paradigm::Language && !inbox.is_empty() {
            let mut prompt = Vec::new();
            for (_, m) in inbox {
                if let Message::Tokens(t) = m {
                    prompt.extend_from_slice(t);
                }
            }
            prompt.extend_from_slice(&p.obs);
            let mut cache = prefill(model, &prompt)?.cache;
            cache.set_agent(p.id);
            FusedContext::new(cache)
        } else {
            FusedContext::new(p.cache.clone())
        };
        for (_, m) in inbox {
            if let Message::Wire(bytes) = m {
                ctx.attach(&wire::deserialize(bytes)?)?;
            }
        }

        let out = collaborative_decode(model, &x, &mut ctx)?;
        let action = to_action(p.id, argmax(&out.logits))?;
        report.action = action;
        report.confusion = confusion_index(&out.rows).per_layer;
        report.forward_passes += passes_since(model, &before);
        if let Some(t) = telemetry.as_deref_mut() {
            t.push(TelemetryRecord {
                agent: p.id,
                tick,
                phase: Phase::Decision,
                step: 0,
                rows: out.rows,
            });
        }
        actions.insert(p.id, action);
    }

    let events = world.step(&actions);
    Ok(TickReport {
        tick,
        agents: reports,
        events,
    })
}

fn count_infractions(events: &[WorldEvent], into: &mut BTreeMap<u32, BTreeMap<Infraction, u32>>) {
    for e in events {
        if let EventKind::Infraction(i) = e.kind {
            *into.entry(e.agent).or_default().entry(i).or_insert(0) += 1;
        }
    }
}

/// Runs ticks until no agent is active or the budget is spent, then
/// scores the episode.
pub fn run_episode(
    model: &Model,
    spec: &ScenarioSpec,
    config: &RunConfig,
) -> Result<EpisodeResult, ScenarioError> {
    let mut world = spec.world();
    let mut ticks = Vec::new();
    let mut telemetry = Vec::new();
    let mut tallies: BTreeMap<u32, AgentTally> = BTreeMap::new();
    let mut infractions: BTreeMap<u32, BTreeMap<Infraction, u32>> = BTreeMap::new();
    while !world.active_ids().is_empty() && world.tick < config.max_ticks {
        let rec = config.record_telemetry.then_some(&mut telemetry);
        let report = run_tick(model, &mut world, config, rec)?;
        for a in &report.agents {
            let t = tallies.entry(a.id).or_default();
            t.comm_bytes += a.message_bytes as u64 * a.messages_sent;
            t.comm_latency_s += a.latency_s;
            t.messages_sent += a.messages_sent;
            t.messages_dropped += a.messages_dropped;
            t.forward_passes += a.forward_passes;
            t.decoded_tokens += a.decoded_tokens;
            t.brake_ticks += u64::from(a.action == Action::Brake);
        }
        count_infractions(&report.events, &mut infractions);
        ticks.push(report);
    }
    let expired = world.expire();
    count_infractions(&expired, &mut infractions);
    if let Some(last) = ticks.last_mut() {
        last.events.extend(expired);
    }

    let agents = world
        .vehicles
        .iter()
        .map(|v| {
            agent_metrics(
                v,
                infractions.remove(&v.id).unwrap_or_default(),
                &tallies.get(&v.id).copied().unwrap_or_default(),
            )
        })
        .collect();
    let metrics = episode_metrics(&spec.name, config.paradigm.name(), world.tick, agents);
    Ok(EpisodeResult {
        metrics,
        ticks,
        telemetry,
    })
}
