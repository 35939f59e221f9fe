//! Per-session state and the JSON views returned to clients.

use std::collections::HashMap;

use hitl_music::agent::{AgentError, Phase, QTableStats, Trainer};
use hitl_music::midi::{to_wire, TrackWire};
use hitl_music::persist::{ModelFile, TrainingSummary};
use hitl_music::rater::RatingFeedback;
use hitl_music::{GenConfig, HyperParams};
use serde::Serialize;
use serde_json::Value;

pub struct Session {
    pub id: String,
    pub trainer: Trainer,
    /// Training already contained in the model this session was loaded from.
    pub prior: TrainingSummary,
    /// Responses already sent, keyed by idempotency token.
    pub replies: HashMap<String, Value>,
    pub ratings: Vec<RatingFeedback>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Progress {
    pub phase: Phase,
    pub episode: usize,
    pub step: usize,
    pub total_steps: usize,
    pub explored_steps: usize,
    pub episode_means: Vec<f64>,
    pub exploration_fraction: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionView {
    pub session_id: String,
    pub phase: Phase,
    pub episode: usize,
    pub step: usize,
    pub track: Option<TrackWire>,
    pub midi_url: String,
    pub progress: Progress,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionDetail {
    #[serde(flatten)]
    pub view: SessionView,
    pub config: GenConfig,
    pub hyperparams: HyperParams,
    pub qtable_stats: QTableStats,
    pub summary: TrainingSummary,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EpisodeDone {
    pub episode: usize,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RatingReply {
    pub phase: Phase,
    pub episode: usize,
    pub step: usize,
    /// Next track to rate; absent once training is complete.
    pub track: Option<TrackWire>,
    pub episode_done: Option<EpisodeDone>,
    pub progress: Progress,
}

/// Outcome of a rating, with the events it should publish.
pub struct Rated {
    pub reply: RatingReply,
    pub events: Vec<Value>,
}

impl Session {
    pub fn new(id: String, trainer: Trainer, prior: TrainingSummary) -> Self {
        Session {
            id,
            trainer,
            prior,
            replies: HashMap::new(),
            ratings: Vec::new(),
        }
    }

    pub fn progress(&self) -> Progress {
        let log = self.trainer.log();
        Progress {
            phase: self.trainer.phase(),
            episode: self.trainer.episode(),
            step: self.trainer.step(),
            total_steps: log.records.len(),
            explored_steps: log.explored_count(),
            episode_means: log.episode_means.clone(),
            exploration_fraction: log.exploration_fraction(),
        }
    }

    pub fn pending_wire(&self) -> Option<TrackWire> {
        self.trainer
            .pending()
            .map(|p| to_wire(&p.track, self.trainer.config()))
    }

    pub fn view(&self) -> SessionView {
        SessionView {
            session_id: self.id.clone(),
            phase: self.trainer.phase(),
            episode: self.trainer.episode(),
            step: self.trainer.step(),
            track: self.pending_wire(),
            midi_url: format!("/sessions/{}/track.mid", self.id),
            progress: self.progress(),
        }
    }

    pub fn detail(&self) -> SessionDetail {
        SessionDetail {
            view: self.view(),
            config: self.trainer.config().clone(),
            hyperparams: self.trainer.hyperparams().clone(),
            qtable_stats: self.trainer.qtable().stats(),
            summary: self.summary(),
        }
    }

    /// Cumulative training including any model this session resumed.
    pub fn summary(&self) -> TrainingSummary {
        let log = self.trainer.log();
        TrainingSummary {
            episodes_completed: self.prior.episodes_completed + log.episode_means.len() as u64,
            total_steps: self.prior.total_steps + log.records.len() as u64,
        }
    }

    pub fn model(&self) -> ModelFile {
        ModelFile {
            config: self.trainer.config().clone(),
            hyperparams: self.trainer.hyperparams().clone(),
            summary: self.summary(),
            qtable: self.trainer.qtable().clone(),
        }
    }

    pub fn track_ready_event(&self) -> Option<Value> {
        let p = self.trainer.pending()?;
        Some(event(
            "track_ready",
            serde_json::json!({
                "episode": p.episode,
                "step": p.step,
                "track": to_wire(&p.track, self.trainer.config()),
            }),
        ))
    }

    /// Applies one rating, starting the next episode when one finishes.
    pub fn rate(&mut self, rating: u8, timestamp: u64) -> Result<Rated, AgentError> {
        let outcome = self.trainer.rate(rating)?;
        self.ratings.push(RatingFeedback {
            session_id: self.id.clone(),
            episode: outcome.record.episode,
            step: outcome.record.step,
            rating,
            timestamp,
        });
        let mut events = Vec::new();
        let episode_done = outcome.episode_done.map(|(episode, mean_reward)| EpisodeDone { episode, mean_reward });
        if let Some(done) = episode_done {
            events.push(event("episode_done", serde_json::to_value(done).expect("serializes")));
        }
        match self.trainer.phase() {
            Phase::BetweenEpisodes => {
                self.trainer.next_episode()?;
            }
            Phase::Completed => {
                events.push(event(
                    "training_done",
                    serde_json::json!({ "summary": self.summary(), "episode_means": self.trainer.log().episode_means }),
                ));
            }
            _ => {}
        }
        events.extend(self.track_ready_event());
        let reply = RatingReply {
            phase: self.trainer.phase(),
            episode: self.trainer.episode(),
            step: self.trainer.step(),
            track: self.pending_wire(),
            episode_done,
            progress: self.progress(),
        };
        Ok(Rated { reply, events })
    }
}

pub fn event(kind: &str, payload: Value) -> Value {
    serde_json::json!({ "type": kind, "payload": payload })
}
