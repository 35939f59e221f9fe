use hitl_music::{export_midi, init_track, GenConfig};
use hitl_music_wasm::{edit, generate, midi, state_space_size, train};
use serde_json::Value;

fn config_json(seed: u64, len: usize) -> String {
    serde_json::to_string(&GenConfig { seed, track_length: len, ..GenConfig::default() }).unwrap()
}

#[test]
fn generate_then_edit() {
    let first: Value = serde_json::from_str(&generate(&config_json(1, 4)).unwrap()).unwrap();
    assert_eq!(first["track"]["melody"].as_array().unwrap().len(), 4);
    let r = first["rating"].as_u64().unwrap();
    assert!((1..=10).contains(&r));

    let wire = first["track"].to_string();
    let rested: Value = serde_json::from_str(&edit(&wire, 2, 5).unwrap()).unwrap();
    assert_eq!(rested["track"]["melody"][2]["degree"], "rest");
    assert_eq!(rested["track"]["melody"][2]["duration"], first["track"]["melody"][2]["duration"]);

    assert!(edit(&wire, 9, 0).is_err());
    assert!(edit(&wire, 0, 6).is_err());
}

#[test]
fn bad_input_is_an_error_not_a_panic() {
    assert!(generate("{}").is_err());
    assert!(generate(&config_json(0, 0)).is_err());
    assert!(midi("[1,2]").is_err());
    assert!(train(&config_json(0, 8), 0, 0.1, 0.9, 0.5).is_err());
}

#[test]
fn training_curve_shape() {
    let out: Value = serde_json::from_str(&train(&config_json(3, 8), 20, 0.1, 0.9, 0.5).unwrap()).unwrap();
    assert_eq!(out["episode_means"].as_array().unwrap().len(), 20);
    assert_eq!(out["steps"], 160);
    let f = out["exploration_fraction"].as_f64().unwrap();
    assert_eq!(f, out["explored"].as_f64().unwrap() / 160.0);
    assert!(out["composed"]["rating"].as_u64().is_some());
}

#[test]
fn midi_matches_core_export() {
    let config = GenConfig { seed: 8, ..GenConfig::default() };
    let out: Value = serde_json::from_str(&generate(&serde_json::to_string(&config).unwrap()).unwrap()).unwrap();
    let bytes = midi(&out["track"].to_string()).unwrap();
    let track = init_track(&config, &mut config.track_rng()).unwrap();
    assert_eq!(bytes, export_midi(&track, &config).into_bytes());
}

#[test]
fn space_strings() {
    assert_eq!(state_space_size(7, 8, 4, 2, 16), "1511207993344");
}
