//! Attention diagnostics and the telemetry record stream.
//!
//! # `telemetry.bin`
//!
//! Little-endian. The file starts with the magic `LACT` and a `u16`
//! version (1). Then a sequence of records, each prefixed by its byte
//! length as `u32`:
//!
//! ```text
//! u32 agent
//! u32 tick
//! u8  phase (0 prefill, 1 latent, 2 decision)
//! u32 step within the phase
//! u16 L, u16 H
//! per layer:
//!     u32 N (context length)
//!     N x (u8 origin code, u32 source agent)
//!     H x N f64 weights, head-major
//! ```
//!
//! Origin codes: 0 ego prefill, 1 ego latent, 2 ego decode, 3 foreign
//! prefill, 4 foreign latent.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::model::{AttentionRows, AttentionTrace, LayerRows, Origin, PositionTag};

pub const DEFAULT_EPS: f64 = 1e-8;
pub const TELEMETRY_MAGIC: [u8; 4] = *b"LACT";
pub const TELEMETRY_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("not a telemetry stream (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported telemetry version {0}")]
    UnsupportedVersion(u16),
    #[error("record {index} malformed: {reason}")]
    Malformed { index: usize, reason: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Per-layer attention entropy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyProfile {
    pub per_layer: Vec<f64>,
    pub eps: f64,
}

/// `e_l = -(1/H) Σ_h Σ_j α_hj · ln(α_hj + ε)` for one forward pass.
pub fn layer_entropy(rows: &AttentionRows, eps: f64) -> EntropyProfile {
    let per_layer = rows
        .layers()
        .iter()
        .map(|layer| {
            let h = layer.num_heads();
            let mut total = 0.0f64;
            for head in 0..h {
                for &a in layer.row(head) {
                    total -= a * (a + eps).ln();
                }
            }
            total / h as f64
        })
        .collect();
    EntropyProfile { per_layer, eps }
}

/// Layer entropy averaged over the steps of a trace.
pub fn trace_entropy(trace: &AttentionTrace, eps: f64) -> EntropyProfile {
    let mut acc: Vec<f64> = Vec::new();
    for step in trace.steps() {
        let e = layer_entropy(step, eps);
        if acc.is_empty() {
            acc = vec![0.0; e.per_layer.len()];
        }
        for (a, v) in acc.iter_mut().zip(e.per_layer) {
            *a += v;
        }
    }
    let n = trace.len().max(1) as f64;
    EntropyProfile {
        per_layer: acc.into_iter().map(|v| v / n).collect(),
        eps,
    }
}

/// Cumulative attention mass over tokens sorted by mass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparsityCurve {
    /// Per-token mean mass over `(t, l, h)`, in context order.
    pub token_mass: Vec<f64>,
    /// `cumulative[k]` = share of mass held by the `k + 1` heaviest tokens.
    pub cumulative: Vec<f64>,
    /// Smallest token fraction whose mass reaches 80%.
    pub fraction_for_80: f64,
}

/// Mean of `A[t, l, h, j]` over `(t, l, h)` per position `j`, with rows
/// shorter than the widest context padded by zeros.
pub fn token_mass(trace: &AttentionTrace) -> Vec<f64> {
    let n = (0..trace.len())
        .map(|t| trace.context_len(t))
        .max()
        .unwrap_or(0);
    let mut mass = vec![0.0f64; n];
    let mut rows = 0usize;
    for step in trace.steps() {
        for layer in step.layers() {
            for h in 0..layer.num_heads() {
                rows += 1;
                for (m, &w) in mass.iter_mut().zip(layer.row(h)) {
                    *m += w;
                }
            }
        }
    }
    if rows > 0 {
        mass.iter_mut().for_each(|m| *m /= rows as f64);
    }
    mass
}

pub fn sparsity_curve(trace: &AttentionTrace) -> SparsityCurve {
    sparsity_from_mass(token_mass(trace))
}

pub fn sparsity_from_mass(token_mass: Vec<f64>) -> SparsityCurve {
    let mut sorted = token_mass.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = sorted.iter().sum();
    let mut run = 0.0;
    let cumulative: Vec<f64> = sorted
        .iter()
        .map(|m| {
            run += m;
            if total > 0.0 {
                run / total
            } else {
                0.0
            }
        })
        .collect();
    let n = cumulative.len();
    let fraction_for_80 = cumulative
        .iter()
        .position(|&c| c >= 0.8 - 1e-12)
        .map(|k| (k + 1) as f64 / n as f64)
        .unwrap_or(1.0);
    SparsityCurve {
        token_mass,
        cumulative,
        fraction_for_80,
    }
}

/// Share of attention that lands on foreign positions, per layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfusionIndex {
    pub per_layer: Vec<f64>,
}

/// Per layer: foreign mass over total mass, averaged over heads.
pub fn confusion_index(rows: &AttentionRows) -> ConfusionIndex {
    let per_layer = rows
        .layers()
        .iter()
        .map(|layer| {
            let mut acc = 0.0;
            for h in 0..layer.num_heads() {
                let row = layer.row(h);
                let total: f64 = row.iter().sum();
                let foreign: f64 = row
                    .iter()
                    .zip(layer.tags())
                    .filter(|(_, t)| t.origin.is_foreign())
                    .map(|(w, _)| w)
                    .sum();
                if total > 0.0 {
                    acc += foreign / total;
                }
            }
            acc / layer.num_heads().max(1) as f64
        })
        .collect();
    ConfusionIndex { per_layer }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Phase {
    Prefill,
    Latent,
    Decision,
}

impl Phase {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Phase> {
        match c {
            0 => Some(Phase::Prefill),
            1 => Some(Phase::Latent),
            2 => Some(Phase::Decision),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Prefill => "prefill",
            Phase::Latent => "latent",
            Phase::Decision => "decision",
        }
    }
}

/// Attention of one forward pass of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryRecord {
    pub agent: u32,
    pub tick: u32,
    pub phase: Phase,
    pub step: u32,
    pub rows: AttentionRows,
}

impl TelemetryRecord {
    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.agent.to_le_bytes());
        out.extend_from_slice(&self.tick.to_le_bytes());
        out.push(self.phase.code());
        out.extend_from_slice(&self.step.to_le_bytes());
        let heads = self.rows.layers().first().map_or(0, |l| l.num_heads());
        out.extend_from_slice(&(self.rows.num_layers() as u16).to_le_bytes());
        out.extend_from_slice(&(heads as u16).to_le_bytes());
        for layer in self.rows.layers() {
            out.extend_from_slice(&(layer.context_len() as u32).to_le_bytes());
            for t in layer.tags() {
                out.push(t.origin.code());
                out.extend_from_slice(&t.agent.to_le_bytes());
            }
            for w in layer.weights() {
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
        out
    }

    fn decode(buf: &[u8], index: usize) -> Result<Self, TelemetryError> {
        let bad = |reason: &str| TelemetryError::Malformed {
            index,
            reason: reason.to_string(),
        };
        let mut at = 0usize;
        let mut take = |n: usize| -> Result<&[u8], TelemetryError> {
            let s = buf.get(at..at + n).ok_or_else(|| bad("truncated"))?;
            at += n;
            Ok(s)
        };
        let u32_ = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes"));
        let agent = u32_(take(4)?);
        let tick = u32_(take(4)?);
        let phase = Phase::from_code(take(1)?[0]).ok_or_else(|| bad("unknown phase"))?;
        let step = u32_(take(4)?);
        let num_layers = u16::from_le_bytes(take(2)?.try_into().expect("2 bytes")) as usize;
        let heads = u16::from_le_bytes(take(2)?.try_into().expect("2 bytes")) as usize;
        let mut layers = Vec::with_capacity(num_layers);
        for _ in 0..num_layers {
            let n = u32_(take(4)?) as usize;
            let mut tags = Vec::with_capacity(n);
            for _ in 0..n {
                let origin = Origin::from_code(take(1)?[0]).ok_or_else(|| bad("unknown origin"))?;
                tags.push(PositionTag {
                    origin,
                    agent: u32_(take(4)?),
                });
            }
            let raw = take(heads * n * 8)?;
            let weights = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            layers.push(LayerRows::new(heads, weights, tags));
        }
        if at != buf.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            agent,
            tick,
            phase,
            step,
            rows: AttentionRows::new(layers),
        })
    }
}

pub fn write_records<W: Write>(
    mut w: W,
    records: &[TelemetryRecord],
) -> Result<(), TelemetryError> {
    w.write_all(&TELEMETRY_MAGIC)?;
    w.write_all(&TELEMETRY_VERSION.to_le_bytes())?;
    for r in records {
        let bytes = r.encode();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(&bytes)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(mut r: R) -> Result<Vec<TelemetryRecord>, TelemetryError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() < 6 {
        return Err(TelemetryError::Malformed {
            index: 0,
            reason: "missing file header".into(),
        });
    }
    let magic: [u8; 4] = buf[..4].try_into().expect("4 bytes");
    if magic != TELEMETRY_MAGIC {
        return Err(TelemetryError::BadMagic(magic));
    }
    let version = u16::from_le_bytes([buf[4], buf[5]]);
    if version != TELEMETRY_VERSION {
        return Err(TelemetryError::UnsupportedVersion(version));
    }
    let mut at = 6;
    let mut out = Vec::new();
    while at < buf.len() {
        let index = out.len();
        let len_bytes = buf.get(at..at + 4).ok_or(TelemetryError::Malformed {
            index,
            reason: "truncated length prefix".into(),
        })?;
        let len = u32::from_le_bytes(len_bytes.try_into().expect("4 bytes")) as usize;
        at += 4;
        let body = buf.get(at..at + len).ok_or(TelemetryError::Malformed {
            index,
            reason: "truncated record".into(),
        })?;
        out.push(TelemetryRecord::decode(body, index)?);
        at += len;
    }
    Ok(out)
}

/// Diagnostics for one `(tick, agent)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TickAnalysis {
    pub tick: u32,
    pub agent: u32,
    /// Entropy averaged over latent steps, if any.
    pub latent_entropy: Option<EntropyProfile>,
    pub decision_entropy: Option<EntropyProfile>,
    pub sparsity: Option<SparsityCurve>,
    pub confusion: Option<ConfusionIndex>,
}

/// Groups records by `(tick, agent)` and computes every diagnostic.
pub fn analyze(records: &[TelemetryRecord], eps: f64) -> Vec<TickAnalysis> {
    let mut groups: BTreeMap<(u32, u32), (AttentionTrace, Option<&AttentionRows>)> =
        BTreeMap::new();
    for r in records {
        let g = groups.entry((r.tick, r.agent)).or_default();
        match r.phase {
            Phase::Latent => g.0.push(r.rows.clone()),
            Phase::Decision => g.1 = Some(&r.rows),
            Phase::Prefill => {}
        }
    }
    groups
        .into_iter()
        .map(|((tick, agent), (latent, decision))| TickAnalysis {
            tick,
            agent,
            latent_entropy: (!latent.is_empty()).then(|| trace_entropy(&latent, eps)),
            decision_entropy: decision.map(|d| layer_entropy(d, eps)),
            sparsity: (!latent.is_empty()).then(|| sparsity_curve(&latent)),
            confusion: decision.map(confusion_index),
        })
        .collect()
}

/// Fixed float format used by every CSV: 9 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.8e}")
}

pub const ENTROPY_HEADER: &str = "tick,agent,phase,layer,entropy";
pub const SPARSITY_HEADER: &str = "tick,agent,tokens,fraction_for_80";
pub const SPARSITY_CURVE_HEADER: &str = "tick,agent,rank,token_fraction,cumulative_mass";
pub const CONFUSION_HEADER: &str = "tick,agent,layer,foreign_mass";

pub fn entropy_csv(analysis: &[TickAnalysis]) -> String {
    let mut s = format!("{ENTROPY_HEADER}\n");
    for a in analysis {
        for (phase, prof) in [
            ("latent", &a.latent_entropy),
            ("decision", &a.decision_entropy),
        ] {
            if let Some(p) = prof {
                for (l, e) in p.per_layer.iter().enumerate() {
                    writeln!(
                        s,
                        "{},{},{},{},{}",
                        a.tick,
                        a.agent,
                        phase,
                        l + 1,
                        fmt_f64(*e)
                    )
                    .expect("write to string");
                }
            }
        }
    }
    s
}

pub fn sparsity_csv(analysis: &[TickAnalysis]) -> String {
    let mut s = format!("{SPARSITY_HEADER}\n");
    for a in analysis {
        if let Some(c) = &a.sparsity {
            writeln!(
                s,
                "{},{},{},{}",
                a.tick,
                a.agent,
                c.cumulative.len(),
                fmt_f64(c.fraction_for_80)
            )
            .expect("write to string");
        }
    }
    s
}

pub fn sparsity_curve_csv(analysis: &[TickAnalysis]) -> String {
    let mut s = format!("{SPARSITY_CURVE_HEADER}\n");
    for a in analysis {
        if let Some(c) = &a.sparsity {
            let n = c.cumulative.len() as f64;
            for (k, cum) in c.cumulative.iter().enumerate() {
                writeln!(
                    s,
                    "{},{},{},{},{}",
                    a.tick,
                    a.agent,
                    k + 1,
                    fmt_f64((k + 1) as f64 / n),
                    fmt_f64(*cum)
                )
                .expect("write to string");
            }
        }
    }
    s
}

pub fn confusion_csv(analysis: &[TickAnalysis]) -> String {
    let mut s = format!("{CONFUSION_HEADER}\n");
    for a in analysis {
        if let Some(c) = &a.confusion {
            for (l, v) in c.per_layer.iter().enumerate() {
                writeln!(s, "{},{},{},{}", a.tick, a.agent, l + 1, fmt_f64(*v))
                    .expect("write to string");
            }
        }
    }
    s
}

/// Writes `entropy.csv`, `sparsity.csv`, `sparsity_curve.csv`,
/// `confusion.csv` and, when given, `metrics.json` into `dir`.
pub fn emit<M: Serialize>(
    dir: &Path,
    analysis: &[TickAnalysis],
    metrics: Option<&M>,
) -> Result<(), TelemetryError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("entropy.csv"), entropy_csv(analysis))?;
    std::fs::write(dir.join("sparsity.csv"), sparsity_csv(analysis))?;
    std::fs::write(dir.join("sparsity_curve.csv"), sparsity_curve_csv(analysis))?;
    std::fs::write(dir.join("confusion.csv"), confusion_csv(analysis))?;
    if let Some(m) = metrics {
        let mut json = serde_json::to_string_pretty(m)?;
        json.push('\n');
        std::fs::write(dir.join("metrics.json"), json)?;
    }
    Ok(())
}
