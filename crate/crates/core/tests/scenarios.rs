mod common;

use std::collections::BTreeMap;

use common::{all_scenarios, load, occluded_set};
use laco_core::chsa::retain_count;
use laco_core::model::{hazard_config, make_hazard_model, Model};
use laco_core::scenario::{
    run_episode, run_tick, sweep, EventKind, Infraction, Paradigm, ScenarioSpec, Status, SweepParam,
};
use laco_core::sskd::{comm_layers, Dtype};
use laco_core::vocab::{self, Action};
use laco_core::wire::payload_size_bytes;

fn model() -> Model {
    make_hazard_model(hazard_config()).unwrap()
}

#[test]
fn shipped_scenarios_fit_the_model() {
    let m = model();
    let specs = all_scenarios();
    assert!(specs.len() >= 6);
    for s in &specs {
        assert!(
            s.observation_len() + s.m < m.config().max_context,
            "{}",
            s.name
        );
        assert_eq!(s.agents.len(), 2);
    }
}

#[test]
fn occlusion_hides_the_pedestrian_from_the_ego_only() {
    let spec = load("occluded_a");
    let world = spec.world();
    let w = spec.grid.width();
    let ego = world.observe(0).unwrap();
    assert!(!ego.iter().any(|&t| vocab::is_hazard(t)));
    let collab = world.observe(1).unwrap();
    let (col, row) = spec.pedestrians[0].path[0];
    assert_eq!(collab[row * w + col], vocab::hazard(col));
    assert_eq!(ego.len(), spec.observation_len());
    assert_eq!(ego, world.observe(0).unwrap());
}

#[test]
fn ego_alone_walks_into_the_pedestrian() {
    // Hand trace: speed 2 from row 12 reaches rows 10 and 8 unaware, then
    // sweeps rows 7 and 6 on the tick the pedestrian enters (2, 6).
    let m = model();
    let spec = load("occluded_a");
    let cfg = spec.run_config(Paradigm::NonCollab);
    let mut world = spec.world();
    for want_row in [10, 8] {
        let r = run_tick(&m, &mut world, &cfg, None).unwrap();
        assert_eq!(r.agents[0].action, Action::Keep);
        assert_eq!(world.vehicle(0).unwrap().row, want_row);
    }
    let r = run_tick(&m, &mut world, &cfg, None).unwrap();
    assert_eq!(world.tick, 3);
    assert_eq!(spec.pedestrians[0].position(3), Some((2, 6)));
    assert!(r
        .events
        .iter()
        .any(|e| e.agent == 0 && e.kind == EventKind::Infraction(Infraction::CollisionPedestrian)));
    assert_eq!(
        world.vehicle(0).unwrap().status,
        Status::Collided(Infraction::CollisionPedestrian)
    );
}

#[test]
fn laco_ego_stops_short_of_the_crossing() {
    let m = model();
    for spec in occluded_set() {
        let r = run_episode(&m, &spec, &spec.run_config(Paradigm::Laco)).unwrap();
        assert_eq!(r.ticks[0].agents[0].action, Action::Brake, "{}", spec.name);
        assert!(r.metrics.infractions.is_empty(), "{}", spec.name);
        assert!(r
            .metrics
            .agents
            .iter()
            .all(|a| a.outcome == Status::Finished));
    }
}

#[test]
fn paradigm_accounting() {
    let m = model();
    let spec = load("occluded_b");
    let solo = run_episode(&m, &spec, &spec.run_config(Paradigm::NonCollab))
        .unwrap()
        .metrics;
    assert_eq!(
        (solo.comm_bytes, solo.decoded_tokens, solo.messages_sent),
        (0, 0, 0)
    );

    let lang = run_episode(&m, &spec, &spec.run_config(Paradigm::Language)).unwrap();
    let agent_ticks: u64 = lang.ticks.iter().map(|t| t.agents.len() as u64).sum();
    assert_eq!(lang.metrics.decoded_tokens, spec.m as u64 * agent_ticks);
    assert!(lang
        .ticks
        .iter()
        .flat_map(|t| &t.agents)
        .all(|a| a.message_bytes == 8 + 4 * spec.m));

    let laco = run_episode(&m, &spec, &spec.run_config(Paradigm::Laco)).unwrap();
    let agent_ticks: u64 = laco.ticks.iter().map(|t| t.agents.len() as u64).sum();
    assert_eq!(laco.metrics.decoded_tokens, 0);
    assert_eq!(
        laco.metrics.forward_passes,
        (spec.m as u64 + 2) * agent_ticks
    );
    let sent: u64 = laco
        .ticks
        .iter()
        .flat_map(|t| &t.agents)
        .map(|a| a.messages_sent)
        .sum();
    assert_eq!(laco.metrics.messages_sent, sent);
    assert!(laco.metrics.comm_latency_s > 0.0);
}

#[test]
fn out_of_range_messages_are_dropped() {
    let m = model();
    let mut spec = load("occluded_a");
    spec.channel.range_m = 5.0;
    let r = run_episode(&m, &spec, &spec.run_config(Paradigm::Laco)).unwrap();
    assert_eq!(r.metrics.messages_dropped, r.metrics.messages_sent);
    assert_eq!(r.metrics.count(Infraction::CollisionPedestrian), 1);
    assert_eq!(r.metrics.comm_latency_s, 0.0);
}

fn metric_row(csv: &str, value: &str) -> String {
    csv.lines()
        .find(|l| l.split(',').nth(1) == Some(value))
        .unwrap()
        .split(',')
        .skip(5)
        .collect::<Vec<_>>()
        .join(",")
}

#[test]
fn sweep_m_matches_direct_runs() {
    let m = model();
    let spec = load("occluded_a");
    let table = sweep(
        &m,
        SweepParam::M,
        &[0.0, 10.0],
        std::slice::from_ref(&spec),
        Paradigm::Laco,
    )
    .unwrap();
    assert_eq!(table.lines().count(), 3);
    for (value, steps) in [("0", 0), ("10", 10)] {
        let mut cfg = spec.run_config(Paradigm::Laco);
        cfg.m = steps;
        let direct = run_episode(&m, &spec, &cfg).unwrap().metrics;
        assert_eq!(metric_row(&table, value), direct.cells());
    }
    // Without latent steps nothing is sent and the ego is on its own.
    let mut cfg = spec.run_config(Paradigm::Laco);
    cfg.m = 0;
    let zero = run_episode(&m, &spec, &cfg).unwrap().metrics;
    assert_eq!(zero.comm_bytes, 0);
    assert_eq!(zero.count(Infraction::CollisionPedestrian), 1);
}

#[test]
fn full_retention_bytes_follow_closed_form() {
    let m = model();
    let spec = load("occluded_c");
    let mut cfg = spec.run_config(Paradigm::Laco);
    cfg.rho = 1.0;
    let r = run_episode(&m, &spec, &cfg).unwrap().metrics;
    let c = m.config();
    let t = spec.observation_len();
    assert_eq!(retain_count(1.0, t), t);
    let per = payload_size_bytes(
        comm_layers(spec.l_comm_fraction, c.num_layers).unwrap(),
        c.num_heads,
        c.head_dim(),
        t,
        spec.m,
        Dtype::F32,
    );
    assert_eq!(r.comm_bytes, per as u64 * r.messages_sent);
}

#[test]
fn sweep_is_deterministic() {
    let m = model();
    let specs = vec![load("occluded_a"), load("clear_lane")];
    let a = sweep(
        &m,
        SweepParam::LCommFraction,
        &[0.1, 0.5, 1.0],
        &specs,
        Paradigm::Laco,
    )
    .unwrap();
    let b = sweep(
        &m,
        SweepParam::LCommFraction,
        &[0.1, 0.5, 1.0],
        &specs,
        Paradigm::Laco,
    )
    .unwrap();
    assert_eq!(a, b);
    assert!(sweep(&m, SweepParam::Rho, &[], &specs, Paradigm::Laco).is_err());
}

#[test]
fn half_precision_payloads_halve_the_body() {
    let m = model();
    let spec = load("occluded_a");
    let mut cfg = spec.run_config(Paradigm::Laco);
    let full = run_tick(&m, &mut spec.world(), &cfg, None).unwrap();
    cfg.dtype = Dtype::F16;
    let half = run_tick(&m, &mut spec.world(), &cfg, None).unwrap();
    assert_eq!(full.agents[0].action, half.agents[0].action);
    let k = retain_count(spec.rho, spec.observation_len());
    let header = 37 + 4 * k;
    assert_eq!(
        full.agents[0].message_bytes - header,
        2 * (half.agents[0].message_bytes - header)
    );
}

#[test]
fn empty_road_scores_full_marks() {
    let spec = ScenarioSpec::parse(
        "name = empty\nrow = ...\nrow = ...\nrow = ...\nrow = ...\nagent = id=0 col=1 row=3 heading=N speed=1 goal=0\n",
    )
    .unwrap();
    for p in Paradigm::ALL {
        let r = run_episode(&model(), &spec, &spec.run_config(p))
            .unwrap()
            .metrics;
        assert_eq!((r.rc, r.is, r.ds), (100.0, 1.0, 100.0), "{p}");
    }
}

#[test]
fn budget_expiry_is_a_timeout() {
    let mut spec = load("occluded_a");
    spec.ticks = 1;
    let r = run_episode(&model(), &spec, &spec.run_config(Paradigm::Laco))
        .unwrap()
        .metrics;
    let want = BTreeMap::from([(Infraction::Timeout, 2)]);
    assert_eq!(r.infractions, want);
    assert_eq!(r.is, 0.7 * 0.7);
    assert_eq!(r.ds, r.rc * r.is);
}

#[test]
fn telemetry_groups_by_tick_and_agent() {
    let m = model();
    let spec = load("clear_lane");
    let mut cfg = spec.run_config(Paradigm::Laco);
    cfg.record_telemetry = true;
    let r = run_episode(&m, &spec, &cfg).unwrap();
    let agent_ticks: usize = r.ticks.iter().map(|t| t.agents.len()).sum();
    assert_eq!(r.telemetry.len(), agent_ticks * (spec.m + 1));
    let a = laco_core::telemetry::analyze(&r.telemetry, 1e-8);
    assert_eq!(a.len(), agent_ticks);
    assert!(a
        .iter()
        .all(|x| x.latent_entropy.is_some() && x.confusion.is_some()));
}
