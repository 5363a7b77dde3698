use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::world::{Status, Vehicle};
use crate::telemetry::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Infraction {
    CollisionPedestrian,
    CollisionVehicle,
    CollisionStatic,
    RedLight,
    StopSign,
    Timeout,
    FailureToYield,
}

impl Infraction {
    pub const ALL: [Infraction; 7] = [
        Infraction::CollisionPedestrian,
        Infraction::CollisionVehicle,
        Infraction::CollisionStatic,
        Infraction::RedLight,
        Infraction::StopSign,
        Infraction::Timeout,
        Infraction::FailureToYield,
    ];

    /// Multiplicative penalty applied once per occurrence.
    pub fn coefficient(self) -> f64 {
        match self {
            Infraction::CollisionPedestrian => 0.50,
            Infraction::CollisionVehicle => 0.60,
            Infraction::CollisionStatic => 0.65,
            Infraction::RedLight => 0.70,
            Infraction::StopSign => 0.80,
            Infraction::Timeout => 0.70,
            Infraction::FailureToYield => 0.70,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Infraction::CollisionPedestrian => "collision_pedestrian",
            Infraction::CollisionVehicle => "collision_vehicle",
            Infraction::CollisionStatic => "collision_static",
            Infraction::RedLight => "red_light",
            Infraction::StopSign => "stop_sign",
            Infraction::Timeout => "timeout",
            Infraction::FailureToYield => "failure_to_yield",
        }
    }
}

/// `IS = Π p_j^{n_j}` over an infraction multiset.
pub fn infraction_score(infractions: &BTreeMap<Infraction, u32>) -> f64 {
    infractions
        .iter()
        .map(|(i, &n)| i.coefficient().powi(n as i32))
        .product()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentMetrics {
    pub id: u32,
    pub outcome: Status,
    pub rc: f64,
    pub infractions: BTreeMap<Infraction, u32>,
    pub is: f64,
    pub ds: f64,
    pub comm_bytes: u64,
    pub comm_latency_s: f64,
    pub messages_sent: u64,
    pub messages_dropped: u64,
    pub forward_passes: u64,
    pub decoded_tokens: u64,
    pub brake_ticks: u64,
}

/// Scores of one episode. Route completion is the mean over agents and
/// the infraction multiset is the union over agents.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeMetrics {
    pub scenario: String,
    pub paradigm: String,
    pub ticks: u32,
    pub rc: f64,
    pub infractions: BTreeMap<Infraction, u32>,
    pub is: f64,
    pub ds: f64,
    /// `1 - IS`, the additive-penalty view of the same multiset.
    pub infraction_penalty: f64,
    pub comm_bytes: u64,
    pub comm_latency_s: f64,
    pub messages_sent: u64,
    pub messages_dropped: u64,
    pub forward_passes: u64,
    pub decoded_tokens: u64,
    pub agents: Vec<AgentMetrics>,
}

/// Counters accumulated by the tick loop for one agent.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AgentTally {
    pub comm_bytes: u64,
    pub comm_latency_s: f64,
    pub messages_sent: u64,
    pub messages_dropped: u64,
    pub forward_passes: u64,
    pub decoded_tokens: u64,
    pub brake_ticks: u64,
}

pub fn agent_metrics(
    v: &Vehicle,
    infractions: BTreeMap<Infraction, u32>,
    t: &AgentTally,
) -> AgentMetrics {
    let rc = v.route_completion();
    let is = infraction_score(&infractions);
    AgentMetrics {
        id: v.id,
        outcome: v.status,
        rc,
        is,
        ds: rc * is,
        infractions,
        comm_bytes: t.comm_bytes,
        comm_latency_s: t.comm_latency_s,
        messages_sent: t.messages_sent,
        messages_dropped: t.messages_dropped,
        forward_passes: t.forward_passes,
        decoded_tokens: t.decoded_tokens,
        brake_ticks: t.brake_ticks,
    }
}

pub fn episode_metrics(
    scenario: &str,
    paradigm: &str,
    ticks: u32,
    agents: Vec<AgentMetrics>,
) -> EpisodeMetrics {
    let n = agents.len().max(1) as f64;
    let rc = agents.iter().map(|a| a.rc).sum::<f64>() / n;
    let mut infractions = BTreeMap::new();
    for a in &agents {
        for (&i, &c) in &a.infractions {
            *infractions.entry(i).or_insert(0) += c;
        }
    }
    let is = infraction_score(&infractions);
    EpisodeMetrics {
        scenario: scenario.to_string(),
        paradigm: paradigm.to_string(),
        ticks,
        rc,
        ds: rc * is,
        is,
        infraction_penalty: 1.0 - is,
        infractions,
        comm_bytes: agents.iter().map(|a| a.comm_bytes).sum(),
        comm_latency_s: agents.iter().map(|a| a.comm_latency_s).sum(),
        messages_sent: agents.iter().map(|a| a.messages_sent).sum(),
        messages_dropped: agents.iter().map(|a| a.messages_dropped).sum(),
        forward_passes: agents.iter().map(|a| a.forward_passes).sum(),
        decoded_tokens: agents.iter().map(|a| a.decoded_tokens).sum(),
        agents,
    }
}

impl EpisodeMetrics {
    pub fn count(&self, i: Infraction) -> u32 {
        self.infractions.get(&i).copied().unwrap_or(0)
    }
}

/// Columns shared by `metrics.csv` and sweep tables.
pub fn metrics_columns() -> String {
    let mut s = String::from("rc,is,ds,infraction_penalty");
    for i in Infraction::ALL {
        write!(s, ",{}", i.name()).expect("write to string");
    }
    s.push_str(
        ",comm_bytes,comm_latency_s,messages_sent,messages_dropped,forward_passes,decoded_tokens",
    );
    s
}

#[allow(clippy::too_many_arguments)]
fn metric_cells(
    rc: f64,
    is: f64,
    ds: f64,
    infractions: &BTreeMap<Infraction, u32>,
    comm_bytes: u64,
    comm_latency_s: f64,
    sent: u64,
    dropped: u64,
    passes: u64,
    decoded: u64,
) -> String {
    let mut s = format!(
        "{},{},{},{}",
        fmt_f64(rc),
        fmt_f64(is),
        fmt_f64(ds),
        fmt_f64(1.0 - is)
    );
    for i in Infraction::ALL {
        write!(s, ",{}", infractions.get(&i).copied().unwrap_or(0)).expect("write to string");
    }
    write!(
        s,
        ",{comm_bytes},{},{sent},{dropped},{passes},{decoded}",
        fmt_f64(comm_latency_s)
    )
    .expect("write to string");
    s
}

impl EpisodeMetrics {
    /// Metric cells for the episode total.
    pub fn cells(&self) -> String {
        metric_cells(
            self.rc,
            self.is,
            self.ds,
            &self.infractions,
            self.comm_bytes,
            self.comm_latency_s,
            self.messages_sent,
            self.messages_dropped,
            self.forward_passes,
            self.decoded_tokens,
        )
    }

    /// `metrics.csv`: one row for the episode (`agent = all`) and one per
    /// agent.
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "scenario,paradigm,ticks,agent,outcome,{}\n",
            metrics_columns()
        );
        writeln!(
            s,
            "{},{},{},all,-,{}",
            self.scenario,
            self.paradigm,
            self.ticks,
            self.cells()
        )
        .expect("write to string");
        for a in &self.agents {
            writeln!(
                s,
                "{},{},{},{},{},{}",
                self.scenario,
                self.paradigm,
                self.ticks,
                a.id,
                outcome_name(a.outcome),
                metric_cells(
                    a.rc,
                    a.is,
                    a.ds,
                    &a.infractions,
                    a.comm_bytes,
                    a.comm_latency_s,
                    a.messages_sent,
                    a.messages_dropped,
                    a.forward_passes,
                    a.decoded_tokens
                )
            )
            .expect("write to string");
        }
        s
    }
}

pub fn outcome_name(s: Status) -> &'static str {
    match s {
        Status::Active => "active",
        Status::Finished => "finished",
        Status::Collided(i) => i.name(),
        Status::Blocked => "blocked",
        Status::TimedOut => "timeout",
    }
}
