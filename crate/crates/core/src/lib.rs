//! Music-theory track generation refined by tabular Q-learning, with each
//! step's reward supplied by a listener's 1-10 rating.
//!
//! - [`theory`]: note names, pitch numbers, scales.
//! - [`track`]: the track array, the six edit actions, state keys.
//! - [`agent`]: Q-table, epsilon-greedy policy, episodic training.
//! - [`rater`]: reward providers and evaluation records.
//! - [`persist`]: model files.
//! - [`midi`]: SMF export and the JSON wire form.

pub mod agent;
pub mod midi;
pub mod persist;
pub mod rater;
pub mod theory;
pub mod track;

pub use agent::{
    compose, continue_training, q_update, run_episode, run_training, select_action, HyperParams, Phase, QTable,
    RewardError, RewardProvider, StepRecord, Trainer, TrainingLog,
};
pub use midi::{export_midi, to_wire, MidiRender, TrackWire};
pub use persist::{list_models, load_model, save_model, ModelFile, TrainingSummary};
pub use rater::{simulated_rater, SimulatedRater};
pub use theory::{generate_scale, note_to_pitch, NoteName, Scale, ScaleType};
pub use track::{apply_action, encode_state, init_track, state_space_size, Action, GenConfig, StateKey, TrackArray};
