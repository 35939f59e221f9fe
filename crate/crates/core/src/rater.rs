//! Reward providers and listener feedback records.
//!
//! [`simulated_rater`] is a deterministic stand-in for a human listener. It
//! prefers smooth stepwise melodies, few rests and a steady rhythm, each of
//! which some action can improve locally.

use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{RewardError, RewardProvider, MAX_RATING, MIN_RATING};
use crate::track::{Degree, TrackArray};

/// Rating in 1..=10 computed from melodic jumps, rests and rhythmic variety.
pub fn simulated_rater(track: &TrackArray) -> u8 {
    let degrees: Vec<f64> = track
        .melody()
        .iter()
        .filter_map(|n| match n.degree {
            Degree::Note(d) => Some(d as f64),
            Degree::Rest => None,
        })
        .collect();
    let jumpiness = if degrees.len() < 2 {
        0.0
    } else {
        degrees.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (degrees.len() - 1) as f64
    };
    let rest_share = track.rest_count() as f64 / track.len() as f64;
    let mut durations: Vec<u8> = track.melody().iter().map(|n| n.duration.quarters()).collect();
    durations.sort_unstable();
    durations.dedup();
    let rhythm_variety = (durations.len() - 1) as f64 / 3.0;

    let raw = (10.0 - 2.0 * jumpiness - 5.0 * rest_share - 2.0 * rhythm_variety).round();
    raw.clamp(MIN_RATING as f64, MAX_RATING as f64) as u8
}

/// [`simulated_rater`] as a reward provider.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimulatedRater;

impl RewardProvider for SimulatedRater {
    fn rate(&mut self, track: &TrackArray, _episode: usize, _step: usize) -> Result<u8, RewardError> {
        Ok(simulated_rater(track))
    }
}

/// Same rating for every step.
#[derive(Debug, Clone, Copy)]
pub struct ConstantRater(pub u8);

impl RewardProvider for ConstantRater {
    fn rate(&mut self, _: &TrackArray, _: usize, _: usize) -> Result<u8, RewardError> {
        Ok(self.0)
    }
}

/// Replays a fixed sequence of ratings, failing once it runs out.
#[derive(Debug, Clone, Default)]
pub struct ReplayRater {
    ratings: VecDeque<u8>,
}

impl ReplayRater {
    pub fn new(ratings: impl IntoIterator<Item = u8>) -> Self {
        ReplayRater {
            ratings: ratings.into_iter().collect(),
        }
    }

    pub fn remaining(&self) -> usize {
        self.ratings.len()
    }
}

impl RewardProvider for ReplayRater {
    fn rate(&mut self, _: &TrackArray, episode: usize, step: usize) -> Result<u8, RewardError> {
        self.ratings.pop_front().ok_or_else(|| {
            RewardError::Unavailable(format!("rating script exhausted at episode {episode} step {step}"))
        })
    }
}

/// Reads one integer rating per line, e.g. from a pipe.
pub struct LineRater<R> {
    input: R,
    line: String,
}

impl<R: BufRead> LineRater<R> {
    pub fn new(input: R) -> Self {
        LineRater {
            input,
            line: String::new(),
        }
    }
}

impl<R: BufRead> RewardProvider for LineRater<R> {
    fn rate(&mut self, _: &TrackArray, episode: usize, step: usize) -> Result<u8, RewardError> {
        self.line.clear();
        match self.input.read_line(&mut self.line) {
            Ok(0) => Err(RewardError::Unavailable(format!(
                "input closed before episode {episode} step {step}"
            ))),
            Ok(_) => {
                let text = self.line.trim();
                let n: i64 = text
                    .parse()
                    .map_err(|_| RewardError::Unavailable(format!("not a rating: {text:?}")))?;
                u8::try_from(n)
                    .ok()
                    .filter(|r| (MIN_RATING..=MAX_RATING).contains(r))
                    .ok_or(RewardError::OutOfRange(n))
            }
            Err(e) => Err(RewardError::Unavailable(e.to_string())),
        }
    }
}

/// A per-step reward rating as submitted by a listener.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingFeedback {
    pub session_id: String,
    pub episode: usize,
    pub step: usize,
    pub rating: u8,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expertise {
    None,
    Beginner,
    Intermediate,
    Expert,
}

/// End-of-session evaluation on three 1-5 scales. Stored for analysis only;
/// never used as a training reward.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationFeedback {
    pub session_id: String,
    pub musicality: u8,
    pub novelty: u8,
    pub coherence: u8,
    #[serde(default)]
    pub comment: String,
    pub expertise: Expertise,
}

impl EvaluationFeedback {
    pub fn validate(&self) -> Result<(), FeedbackError> {
        for (field, score) in [
            ("musicality", self.musicality),
            ("novelty", self.novelty),
            ("coherence", self.coherence),
        ] {
            if !(1..=5).contains(&score) {
                return Err(FeedbackError::OutOfRange { field, score });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum FeedbackError {
    #[error("{field} score {score} is outside 1..=5")]
    OutOfRange { field: &'static str, score: u8 },
    #[error("evaluation store {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("evaluation store {path} line {line}: {source}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// Position of a record in the store, starting at 1.
pub type RecordId = u64;

/// Append-only JSON-lines file of evaluations.
#[derive(Debug)]
pub struct EvaluationStore {
    path: PathBuf,
    // Serializes appends and id assignment.
    next_id: Mutex<RecordId>,
}

impl EvaluationStore {
    /// Opens (or creates on first write) the store at `path`.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, FeedbackError> {
        let path = path.into();
        let count = match File::open(&path) {
            Ok(f) => BufReader::new(f).lines().count() as RecordId,
            Err(e) if e.kind() == io::ErrorKind::NotFound => 0,
            Err(source) => return Err(FeedbackError::Io { path, source }),
        };
        Ok(EvaluationStore {
            path,
            next_id: Mutex::new(count + 1),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn record(&self, feedback: &EvaluationFeedback) -> Result<RecordId, FeedbackError> {
        record_evaluation(feedback, self)
    }

    /// All records in submission order.
    pub fn all(&self) -> Result<Vec<(RecordId, EvaluationFeedback)>, FeedbackError> {
        let _guard = self.next_id.lock().unwrap_or_else(|e| e.into_inner());
        let file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(source) => {
                return Err(FeedbackError::Io {
                    path: self.path.clone(),
                    source,
                })
            }
        };
        BufReader::new(file)
            .lines()
            .enumerate()
            .map(|(i, line)| {
                let line = line.map_err(|source| FeedbackError::Io {
                    path: self.path.clone(),
                    source,
                })?;
                let fb = serde_json::from_str(&line).map_err(|source| FeedbackError::Corrupt {
                    path: self.path.clone(),
                    line: i + 1,
                    source,
                })?;
                Ok((i as RecordId + 1, fb))
            })
            .collect()
    }

    pub fn for_session(&self, session_id: &str) -> Result<Vec<(RecordId, EvaluationFeedback)>, FeedbackError> {
        Ok(self
            .all()?
            .into_iter()
            .filter(|(_, fb)| fb.session_id == session_id)
            .collect())
    }
}

/// Validates and appends `feedback`, returning its record id.
pub fn record_evaluation(feedback: &EvaluationFeedback, store: &EvaluationStore) -> Result<RecordId, FeedbackError> {
    feedback.validate()?;
    let mut line = serde_json::to_string(feedback).expect("feedback serializes");
    line.push('\n');
    let mut next = store.next_id.lock().unwrap_or_else(|e| e.into_inner());
    let io_err = |source| FeedbackError::Io {
        path: store.path.clone(),
        source,
    };
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&store.path)
        .map_err(io_err)?;
    file.write_all(line.as_bytes()).map_err(io_err)?;
    let id = *next;
    *next += 1;
    Ok(id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theory::{generate_scale, ScaleType};
    use crate::track::{MelodyNote, NoteLength};

    fn track(notes: &[(Degree, u8)]) -> TrackArray {
        let scale = generate_scale("C4".parse().unwrap(), ScaleType::Major).unwrap();
        let melody = notes
            .iter()
            .map(|&(degree, q)| MelodyNote {
                degree,
                duration: NoteLength::from_quarters(q).unwrap(),
            })
            .collect();
        TrackArray::new(scale, melody, vec![0; 2 * notes.len()]).unwrap()
    }

    #[test]
    fn flat_steady_melody_scores_ten() {
        assert_eq!(simulated_rater(&track(&[(Degree::Note(2), 2); 8])), 10);
    }

    #[test]
    fn all_rests_score_five() {
        assert_eq!(simulated_rater(&track(&[(Degree::Rest, 2); 8])), 5);
    }

    #[test]
    fn wide_leaps_clamp_to_one() {
        let notes: Vec<_> = (0..8).map(|i| (Degree::Note(if i % 2 == 0 { 0 } else { 6 }), 4)).collect();
        assert_eq!(simulated_rater(&track(&notes)), 1);
    }

    #[test]
    fn jumps_are_measured_across_rests() {
        // 0 _ 2: one pair with jump 2 once the rest is skipped.
        let t = track(&[(Degree::Note(0), 1), (Degree::Rest, 1), (Degree::Note(2), 1)]);
        // 10 - 2*2 - 5/3 - 0 = 4.33
        assert_eq!(simulated_rater(&t), 4);
    }

    #[test]
    fn rhythm_variety_penalty() {
        let t = track(&[(Degree::Note(0), 1), (Degree::Note(0), 2), (Degree::Note(0), 3), (Degree::Note(0), 4)]);
        assert_eq!(simulated_rater(&t), 8);
    }

    #[test]
    fn replay_runs_out() {
        let t = track(&[(Degree::Note(0), 1)]);
        let mut r = ReplayRater::new([3, 4]);
        assert_eq!(r.rate(&t, 0, 0), Ok(3));
        assert_eq!(r.rate(&t, 0, 1), Ok(4));
        assert!(matches!(r.rate(&t, 0, 2), Err(RewardError::Unavailable(_))));
    }

    #[test]
    fn line_rater_parses_and_bounds() {
        let t = track(&[(Degree::Note(0), 1)]);
        let mut r = LineRater::new(&b"7\n 10 \n11\nx\n"[..]);
        assert_eq!(r.rate(&t, 0, 0), Ok(7));
        assert_eq!(r.rate(&t, 0, 1), Ok(10));
        assert_eq!(r.rate(&t, 0, 2), Err(RewardError::OutOfRange(11)));
        assert!(matches!(r.rate(&t, 0, 3), Err(RewardError::Unavailable(_))));
        assert!(matches!(r.rate(&t, 0, 4), Err(RewardError::Unavailable(_))));
    }

    fn feedback(session: &str, m: u8, n: u8, c: u8) -> EvaluationFeedback {
        EvaluationFeedback {
            session_id: session.into(),
            musicality: m,
            novelty: n,
            coherence: c,
            comment: "nice groove".into(),
            expertise: Expertise::Intermediate,
        }
    }

    #[test]
    fn evaluation_round_trip_and_ids() {
        let dir = tempfile::tempdir().unwrap();
        let store = EvaluationStore::open(dir.path().join("eval.jsonl")).unwrap();
        let a = store.record(&feedback("s1", 5, 4, 3)).unwrap();
        let b = store.record(&feedback("s2", 1, 1, 1)).unwrap();
        assert_eq!((a, b), (1, 2));
        let fetched = store.for_session("s1").unwrap();
        assert_eq!(fetched, vec![(1, feedback("s1", 5, 4, 3))]);

        let reopened = EvaluationStore::open(store.path()).unwrap();
        assert_eq!(reopened.record(&feedback("s1", 2, 2, 2)).unwrap(), 3);
        let ids: Vec<_> = reopened.all().unwrap().into_iter().map(|(id, _)| id).collect();
        assert_eq!(ids, vec![1, 2, 3]);
    }

    #[test]
    fn evaluation_score_bounds() {
        let dir = tempfile::tempdir().unwrap();
        let store = EvaluationStore::open(dir.path().join("eval.jsonl")).unwrap();
        let err = store.record(&feedback("s", 6, 3, 3)).unwrap_err();
        assert!(matches!(err, FeedbackError::OutOfRange { field: "musicality", score: 6 }));
        assert!(store.record(&feedback("s", 3, 0, 3)).is_err());
        assert!(store.all().unwrap().is_empty());
    }
}
