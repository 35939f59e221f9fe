//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Tracks cross the boundary as the JSON wire form. Each export is a thin
//! wrapper over a plain function so the logic can be tested natively.

use hitl_music::agent::TrainingLog;
use hitl_music::{
    compose, run_training, simulated_rater, Action, GenConfig, HyperParams, SimulatedRater, TrackArray, TrackWire,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn parse_config(config_json: &str) -> Result<GenConfig, String> {
    let config: GenConfig = serde_json::from_str(config_json).map_err(|e| format!("config: {e}"))?;
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

fn parse_track(wire_json: &str) -> Result<(TrackArray, TrackWire), String> {
    let wire: TrackWire = serde_json::from_str(wire_json).map_err(|e| format!("track: {e}"))?;
    let track = wire.to_track().map_err(|e| e.to_string())?;
    Ok((track, wire))
}

fn wire_of(track: &TrackArray, tempo_bpm: u32, volume: u8) -> TrackWire {
    TrackWire {
        scale: track.scale().clone(),
        melody: track.melody().to_vec(),
        percussion: track.percussion().to_vec(),
        tempo_bpm,
        volume,
    }
}

#[derive(Serialize)]
struct Rated {
    track: TrackWire,
    rating: u8,
}

fn rated(track: &TrackArray, tempo_bpm: u32, volume: u8) -> String {
    let out = Rated {
        track: wire_of(track, tempo_bpm, volume),
        rating: simulated_rater(track),
    };
    serde_json::to_string(&out).expect("serializes")
}

/// Initial track for a full `GenConfig` JSON object, with its simulated rating.
pub fn generate(config_json: &str) -> Result<String, String> {
    let config = parse_config(config_json)?;
    let track = hitl_music::init_track(&config, &mut config.track_rng()).map_err(|e| e.to_string())?;
    Ok(rated(&track, config.tempo_bpm, config.volume))
}

/// Applies action `action` (0-5) at `cursor` to a wire-form track.
pub fn edit(wire_json: &str, cursor: usize, action: u8) -> Result<String, String> {
    let (track, wire) = parse_track(wire_json)?;
    let action = Action::from_index(action as usize).ok_or_else(|| format!("no action {action}"))?;
    let next = hitl_music::apply_action(&track, cursor, action).map_err(|e| e.to_string())?;
    Ok(rated(&next, wire.tempo_bpm, wire.volume))
}

#[derive(Serialize)]
struct Curve {
    episode_means: Vec<f64>,
    explored: usize,
    steps: usize,
    exploration_fraction: Option<f64>,
    initial: Rated,
    composed: Rated,
}

/// Trains against the simulated rater and returns the per-episode curve
/// together with the greedy composition of the learned table.
pub fn train(config_json: &str, episodes: usize, alpha: f64, gamma: f64, epsilon: f64) -> Result<String, String> {
    let config = parse_config(config_json)?;
    let hp = HyperParams {
        alpha,
        gamma,
        epsilon,
        episodes,
        seed: config.seed,
        ..HyperParams::for_config(&config)
    };
    hp.validate().map_err(|e| e.to_string())?;
    let (q, log): (_, TrainingLog) = run_training(&config, &hp, &mut SimulatedRater).map_err(|e| e.to_string())?;
    let initial = hitl_music::init_track(&config, &mut config.track_rng()).map_err(|e| e.to_string())?;
    let composed = compose(&config, &hp, &q).map_err(|e| e.to_string())?;
    let curve = Curve {
        explored: log.explored_count(),
        steps: log.records.len(),
        exploration_fraction: log.exploration_fraction(),
        episode_means: log.episode_means,
        initial: Rated {
            track: wire_of(&initial, config.tempo_bpm, config.volume),
            rating: simulated_rater(&initial),
        },
        composed: Rated {
            track: wire_of(&composed, config.tempo_bpm, config.volume),
            rating: simulated_rater(&composed),
        },
    };
    Ok(serde_json::to_string(&curve).expect("serializes"))
}

/// Standard MIDI File bytes for a wire-form track.
pub fn midi(wire_json: &str) -> Result<Vec<u8>, String> {
    let (track, wire) = parse_track(wire_json)?;
    let config = GenConfig {
        tempo_bpm: wire.tempo_bpm,
        volume: wire.volume,
        ..GenConfig::default()
    };
    config.validate().map_err(|e| e.to_string())?;
    Ok(hitl_music::export_midi(&track, &config).into_bytes())
}

#[wasm_bindgen(js_name = generateTrack)]
pub fn generate_track(config_json: &str) -> Result<String, JsValue> {
    generate(config_json).map_err(JsValue::from)
}

#[wasm_bindgen(js_name = applyAction)]
pub fn apply_action(wire_json: &str, cursor: usize, action: u8) -> Result<String, JsValue> {
    edit(wire_json, cursor, action).map_err(JsValue::from)
}

#[wasm_bindgen(js_name = trainSimulated)]
pub fn train_simulated(
    config_json: &str,
    episodes: usize,
    alpha: f64,
    gamma: f64,
    epsilon: f64,
) -> Result<String, JsValue> {
    train(config_json, episodes, alpha, gamma, epsilon).map_err(JsValue::from)
}

#[wasm_bindgen(js_name = exportMidi)]
pub fn export_midi(wire_json: &str) -> Result<Vec<u8>, JsValue> {
    midi(wire_json).map_err(JsValue::from)
}

#[wasm_bindgen(js_name = stateSpaceSize)]
pub fn state_space_size(scale_size: u32, melody_len: u32, rhythm: u32, perc_pitches: u32, perc_slots: u32) -> String {
    hitl_music::state_space_size(scale_size, melody_len, rhythm, perc_pitches, perc_slots).to_string()
}
