use laco_web::{attention_json, run_json, scenario, scenario_names, sizes_json, Settings};
use serde_json::Value;

const DEFAULT: Settings = Settings {
    m: 10,
    rho: 0.3,
    l_comm_fraction: 0.1,
    half: false,
};

#[test]
fn every_embedded_scenario_parses() {
    for name in scenario_names() {
        assert_eq!(scenario(name).unwrap().name, name);
    }
    assert!(scenario("nowhere").is_err());
}

#[test]
fn episode_frames_follow_the_metrics() {
    let v: Value = serde_json::from_str(&run_json("occluded_a", "laco", DEFAULT).unwrap()).unwrap();
    let frames = v["frames"].as_array().unwrap();
    assert_eq!(
        frames.len() as u64,
        v["metrics"]["ticks"].as_u64().unwrap() + 1
    );
    assert_eq!(frames[1]["vehicles"][0]["action"], "BRAKE");
    assert_eq!(
        v["rows"].as_array().unwrap().len(),
        v["height"].as_u64().unwrap() as usize
    );

    let solo: Value =
        serde_json::from_str(&run_json("occluded_a", "noncollab", DEFAULT).unwrap()).unwrap();
    let hit = solo["frames"].as_array().unwrap().iter().any(|f| {
        f["events"]
            .as_array()
            .unwrap()
            .iter()
            .any(|e| e.as_str().unwrap().contains("CollisionPedestrian"))
    });
    assert!(hit);
    assert!(run_json("occluded_a", "telepathy", DEFAULT).is_err());
}

#[test]
fn sizes_match_an_episode_message() {
    let v: Value = serde_json::from_str(&sizes_json("occluded_a", DEFAULT).unwrap()).unwrap();
    let ep: Value =
        serde_json::from_str(&run_json("occluded_a", "laco", DEFAULT).unwrap()).unwrap();
    assert_eq!(
        v["laco_bytes"],
        ep["frames"][1]["vehicles"][0]["sent_bytes"]
    );
    let full: Value =
        serde_json::from_str(&run_json("occluded_a", "visual", DEFAULT).unwrap()).unwrap();
    assert_eq!(
        v["full_cache_bytes"],
        full["frames"][1]["vehicles"][0]["sent_bytes"]
    );
    assert!(v["ratio"].as_f64().unwrap() < 0.2);
    let half: Value = serde_json::from_str(
        &sizes_json(
            "occluded_a",
            Settings {
                half: true,
                ..DEFAULT
            },
        )
        .unwrap(),
    )
    .unwrap();
    assert!(half["laco_bytes"].as_u64() < v["laco_bytes"].as_u64());
    assert!(sizes_json(
        "occluded_a",
        Settings {
            rho: 0.0,
            ..DEFAULT
        }
    )
    .is_err());
}

#[test]
fn attention_reports_every_agent() {
    let v: Value =
        serde_json::from_str(&attention_json("occluded_a", "laco", DEFAULT).unwrap()).unwrap();
    let agents = v.as_array().unwrap();
    assert_eq!(agents.len(), 2);
    for a in agents {
        let foreign = a["foreign_mass"].as_array().unwrap();
        assert_eq!(foreign.len(), 4);
        assert!(foreign[1..].iter().all(|x| x.as_f64() == Some(0.0)));
        let f80 = a["fraction_for_80"].as_f64().unwrap();
        assert!(f80 > 0.0 && f80 <= 1.0);
    }
}
