//! Tabular Q-learning over track states with an epsilon-greedy policy.
//!
//! Training is episodic. Every episode starts from the track generated by
//! the configuration's seed, so the opening state recurs and its values
//! accumulate across episodes. At every step the agent edits the note under a round-robin cursor, the
//! edited track is rated, and the rating is the immediate reward of a
//! one-step Bellman update.

use std::collections::BTreeMap;
use std::io;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::track::{apply_action, encode_state, init_track, Action, GenConfig, StateKey, TrackArray, TrackError};

pub const MIN_RATING: u8 = 1;
pub const MAX_RATING: u8 = 10;

/// Episode count below which training is considered too short to learn from.
pub const RECOMMENDED_MIN_EPISODES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            alpha: 0.1,
            gamma: 0.9,
            epsilon: 0.5,
            episodes: 10,
            steps_per_episode: 8,
            seed: 0,
        }
    }
}

impl HyperParams {
    /// Defaults with one step per note of `config`'s track.
    pub fn for_config(config: &GenConfig) -> Self {
        HyperParams {
            steps_per_episode: config.track_length,
            ..HyperParams::default()
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |field, reason: String| Err(AgentError::Param { field, reason });
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha", format!("{} is outside (0, 1]", self.alpha));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return bad("gamma", format!("{} is outside [0, 1)", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon", format!("{} is outside [0, 1]", self.epsilon));
        }
        if self.episodes == 0 {
            return bad("episodes", "must be at least 1".into());
        }
        if self.steps_per_episode == 0 {
            return bad("steps_per_episode", "must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("invalid {field}: {reason}")]
    Param { field: &'static str, reason: String },
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error("operation not allowed in phase {0:?}")]
    WrongPhase(Phase),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

impl AgentError {
    pub fn field(&self) -> Option<&'static str> {
        match self {
            AgentError::Param { field, .. } => Some(field),
            AgentError::Track(e) => e.field(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RewardError {
    #[error("rating {0} is outside 1..=10")]
    OutOfRange(i64),
    #[error("no rating available: {0}")]
    Unavailable(String),
}

/// Source of the per-step rating: a person, a replayed script, or the
/// simulated rater.
pub trait RewardProvider {
    fn rate(&mut self, track: &TrackArray, episode: usize, step: usize) -> Result<u8, RewardError>;
}

impl<P: RewardProvider + ?Sized> RewardProvider for &mut P {
    fn rate(&mut self, track: &TrackArray, episode: usize, step: usize) -> Result<u8, RewardError> {
        (**self).rate(track, episode, step)
    }
}

/// Action values per state. Unvisited states read as all zeros.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QTable {
    entries: BTreeMap<StateKey, [f64; Action::COUNT]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QTableStats {
    pub visited_states: usize,
    pub nonzero_entries: usize,
    pub max_q: f64,
    pub min_q: f64,
}

impl QTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn values(&self, state: &StateKey) -> [f64; Action::COUNT] {
        self.entries.get(state).copied().unwrap_or([0.0; Action::COUNT])
    }

    pub fn value(&self, state: &StateKey, action: Action) -> f64 {
        self.values(state)[action.index()]
    }

    pub fn max_value(&self, state: &StateKey) -> f64 {
        self.values(state).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn set(&mut self, state: StateKey, values: [f64; Action::COUNT]) {
        self.entries.insert(state, values);
    }

    pub fn contains(&self, state: &StateKey) -> bool {
        self.entries.contains_key(state)
    }

    /// Entries in byte order of their keys.
    pub fn iter(&self) -> impl Iterator<Item = (&StateKey, &[f64; Action::COUNT])> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn stats(&self) -> QTableStats {
        let values = || self.entries.values().flatten().copied();
        let (max_q, min_q) = if self.entries.is_empty() {
            (0.0, 0.0)
        } else {
            (
                values().fold(f64::NEG_INFINITY, f64::max),
                values().fold(f64::INFINITY, f64::min),
            )
        };
        QTableStats {
            visited_states: self.entries.len(),
            nonzero_entries: values().filter(|v| *v != 0.0).count(),
            max_q,
            min_q,
        }
    }
}

impl FromIterator<(StateKey, [f64; Action::COUNT])> for QTable {
    fn from_iter<I: IntoIterator<Item = (StateKey, [f64; Action::COUNT])>>(iter: I) -> Self {
        QTable {
            entries: iter.into_iter().collect(),
        }
    }
}

/// Epsilon-greedy choice. Returns the action and whether it was exploratory.
///
/// One uniform draw decides explore vs exploit; a second draw picks the
/// random action or breaks a tie among maximal actions.
pub fn select_action<R: Rng + ?Sized>(q: &QTable, state: &StateKey, epsilon: f64, rng: &mut R) -> (Action, bool) {
    if rng.random::<f64>() < epsilon {
        let a = rng.random_range(0..Action::COUNT);
        return (Action::ALL[a], true);
    }
    let values = q.values(state);
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<Action> = Action::ALL
        .into_iter()
        .filter(|a| values[a.index()] == best)
        .collect();
    let pick = if ties.len() == 1 {
        ties[0]
    } else {
        ties[rng.random_range(0..ties.len())]
    };
    (pick, false)
}

/// `Q(s,a) += alpha * (r + gamma * max_a' Q(s',a') - Q(s,a))`.
pub fn q_update(
    q: &mut QTable,
    state: &StateKey,
    action: Action,
    reward: f64,
    next_state: &StateKey,
    alpha: f64,
    gamma: f64,
) {
    let target = reward + gamma * q.max_value(next_state);
    let slot = q
        .entries
        .entry(state.clone())
        .or_insert([0.0; Action::COUNT]);
    let current = slot[action.index()];
    slot[action.index()] = current + alpha * (target - current);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub episode: usize,
    pub step: usize,
    pub state: StateKey,
    pub action: Action,
    pub explored: bool,
    pub reward: u8,
    pub next_state: StateKey,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<StepRecord>,
    pub episode_means: Vec<f64>,
}

pub const CSV_HEADER: &str = "episode,step,state_key,action,explored,reward";

impl TrainingLog {
    /// Appends a finished episode and its mean reward.
    pub fn push_episode(&mut self, records: Vec<StepRecord>) {
        self.episode_means.push(mean_reward(&records));
        self.records.extend(records);
    }

    pub fn explored_count(&self) -> usize {
        self.records.iter().filter(|r| r.explored).count()
    }

    /// Explored steps over all steps; `None` before the first step.
    pub fn exploration_fraction(&self) -> Option<f64> {
        (!self.records.is_empty()).then(|| self.explored_count() as f64 / self.records.len() as f64)
    }

    pub fn write_csv<W: io::Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.episode, r.step, r.state, r.action, r.explored, r.reward
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv is ascii")
    }
}

fn mean_reward(records: &[StepRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().map(|r| r.reward as f64).sum::<f64>() / records.len() as f64
}

/// Random stream driving exploration and tie-breaking.
pub fn policy_rng(hp: &HyperParams) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(hp.seed)
}

/// An action the agent has taken and is waiting to have rated.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingStep {
    pub episode: usize,
    pub step: usize,
    pub state: StateKey,
    pub action: Action,
    pub explored: bool,
    /// Track after the action; this is what gets rated.
    pub track: TrackArray,
    pub next_state: StateKey,
}

fn propose<R: Rng + ?Sized>(
    track: &TrackArray,
    episode: usize,
    step: usize,
    q: &QTable,
    hp: &HyperParams,
    rng: &mut R,
) -> PendingStep {
    let len = track.len();
    let cursor = step % len;
    let state = encode_state(track, cursor);
    let (action, explored) = select_action(q, &state, hp.epsilon, rng);
    let track = apply_action(track, cursor, action).expect("cursor is reduced modulo track length");
    let next_state = encode_state(&track, (step + 1) % len);
    PendingStep {
        episode,
        step,
        state,
        action,
        explored,
        track,
        next_state,
    }
}

fn check_rating(rating: u8) -> Result<u8, RewardError> {
    if (MIN_RATING..=MAX_RATING).contains(&rating) {
        Ok(rating)
    } else {
        Err(RewardError::OutOfRange(rating as i64))
    }
}

fn settle(q: &mut QTable, pending: PendingStep, rating: u8, hp: &HyperParams) -> (StepRecord, TrackArray) {
    q_update(
        q,
        &pending.state,
        pending.action,
        rating as f64,
        &pending.next_state,
        hp.alpha,
        hp.gamma,
    );
    let record = StepRecord {
        episode: pending.episode,
        step: pending.step,
        state: pending.state,
        action: pending.action,
        explored: pending.explored,
        reward: rating,
        next_state: pending.next_state,
    };
    (record, pending.track)
}

/// Provider failure part-way through an episode. The Q-table keeps every
/// update made before the failure.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("episode {episode} aborted after {} steps: {source}", records.len())]
pub struct EpisodeError {
    pub episode: usize,
    pub records: Vec<StepRecord>,
    pub source: AgentError,
}

pub fn run_episode<P: RewardProvider + ?Sized>(
    config: &GenConfig,
    hp: &HyperParams,
    q: &mut QTable,
    rng: &mut ChaCha8Rng,
    provider: &mut P,
    episode: usize,
) -> Result<Vec<StepRecord>, EpisodeError> {
    let fail = |records, source| EpisodeError {
        episode,
        records,
        source,
    };
    let mut track = init_track(config, &mut config.track_rng()).map_err(|e| fail(Vec::new(), e.into()))?;
    let mut records = Vec::with_capacity(hp.steps_per_episode);
    for step in 0..hp.steps_per_episode {
        let pending = propose(&track, episode, step, q, hp, rng);
        let rating = provider
            .rate(&pending.track, episode, step)
            .and_then(check_rating);
        let rating = match rating {
            Ok(r) => r,
            Err(source) => return Err(fail(records, source.into())),
        };
        let (record, next) = settle(q, pending, rating, hp);
        records.push(record);
        track = next;
    }
    Ok(records)
}

/// Training stopped by a provider failure. Carries everything learned so
/// far so the run can be saved or resumed.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{error}")]
pub struct TrainingError {
    pub q: QTable,
    pub log: TrainingLog,
    pub error: EpisodeError,
}

/// Trains a fresh Q-table for `hp.episodes` episodes.
pub fn run_training<P: RewardProvider + ?Sized>(
    config: &GenConfig,
    hp: &HyperParams,
    provider: &mut P,
) -> Result<(QTable, TrainingLog), Box<TrainingError>> {
    continue_training(config, hp, QTable::new(), provider)
}

/// Trains `hp.episodes` further episodes starting from `q`.
pub fn continue_training<P: RewardProvider + ?Sized>(
    config: &GenConfig,
    hp: &HyperParams,
    mut q: QTable,
    provider: &mut P,
) -> Result<(QTable, TrainingLog), Box<TrainingError>> {
    if hp.episodes < RECOMMENDED_MIN_EPISODES {
        log::warn!(
            "training for {} episodes; at least {RECOMMENDED_MIN_EPISODES} are recommended",
            hp.episodes
        );
    }
    let mut log = TrainingLog::default();
    if let Err(source) = hp.validate() {
        let error = EpisodeError {
            episode: 0,
            records: Vec::new(),
            source,
        };
        return Err(Box::new(TrainingError { q, log, error }));
    }
    let mut rng = policy_rng(hp);
    for episode in 0..hp.episodes {
        match run_episode(config, hp, &mut q, &mut rng, provider, episode) {
            Ok(records) => log.push_episode(records),
            Err(error) => return Err(Box::new(TrainingError { q, log, error })),
        }
    }
    Ok((q, log))
}

/// Builds a track by following the learned policy greedily for one episode
/// from the configuration's initial track.
pub fn compose(config: &GenConfig, hp: &HyperParams, q: &QTable) -> Result<TrackArray, TrackError> {
    let mut track = init_track(config, &mut config.track_rng())?;
    let greedy = HyperParams { epsilon: 0.0, ..hp.clone() };
    let mut rng = policy_rng(hp);
    for step in 0..hp.steps_per_episode {
        track = propose(&track, 0, step, q, &greedy, &mut rng).track;
    }
    Ok(track)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    AwaitingRating,
    BetweenEpisodes,
    Completed,
}

/// Result of rating one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub record: StepRecord,
    /// `(episode, mean reward)` when this rating closed an episode.
    pub episode_done: Option<(usize, f64)>,
    pub phase: Phase,
}

/// Step-at-a-time training driven by external ratings.
///
/// Consumes the policy stream in exactly the order [`continue_training`]
/// does, so a replayed rating sequence produces the same log.
///
/// Phases: `Idle -> AwaitingRating (-> AwaitingRating)* -> BetweenEpisodes
/// -> AwaitingRating ... -> Completed`.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: GenConfig,
    hp: HyperParams,
    q: QTable,
    rng: ChaCha8Rng,
    phase: Phase,
    episode: usize,
    track: Option<TrackArray>,
    pending: Option<PendingStep>,
    current: Vec<StepRecord>,
    log: TrainingLog,
}

impl Trainer {
    pub fn new(config: GenConfig, hp: HyperParams, q: QTable) -> Result<Self, AgentError> {
        config.validate()?;
        hp.validate()?;
        let rng = policy_rng(&hp);
        Ok(Trainer {
            config,
            hp,
            q,
            rng,
            phase: Phase::Idle,
            episode: 0,
            track: None,
            pending: None,
            current: Vec::new(),
            log: TrainingLog::default(),
        })
    }

    pub fn config(&self) -> &GenConfig {
        &self.config
    }

    pub fn hyperparams(&self) -> &HyperParams {
        &self.hp
    }

    pub fn qtable(&self) -> &QTable {
        &self.q
    }

    pub fn log(&self) -> &TrainingLog {
        &self.log
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Zero-based index of the episode in progress (or next to start).
    pub fn episode(&self) -> usize {
        self.episode
    }

    /// Zero-based index of the step awaiting a rating within the episode.
    pub fn step(&self) -> usize {
        self.current.len()
    }

    pub fn total_steps(&self) -> usize {
        self.log.records.len() + self.current.len()
    }

    pub fn pending(&self) -> Option<&PendingStep> {
        self.pending.as_ref()
    }

    /// Track to present for rating, or the last rated track once complete.
    pub fn current_track(&self) -> Option<&TrackArray> {
        self.pending.as_ref().map(|p| &p.track).or(self.track.as_ref())
    }

    /// Begins the first episode. Valid only in `Idle`.
    pub fn start(&mut self) -> Result<&PendingStep, AgentError> {
        if self.phase != Phase::Idle {
            return Err(AgentError::WrongPhase(self.phase));
        }
        self.begin_episode()
    }

    /// Begins the next episode. Valid only in `BetweenEpisodes`.
    pub fn next_episode(&mut self) -> Result<&PendingStep, AgentError> {
        if self.phase != Phase::BetweenEpisodes {
            return Err(AgentError::WrongPhase(self.phase));
        }
        self.begin_episode()
    }

    fn begin_episode(&mut self) -> Result<&PendingStep, AgentError> {
        let track = init_track(&self.config, &mut self.config.track_rng())?;
        self.track = Some(track);
        self.current.clear();
        self.propose_next();
        Ok(self.pending.as_ref().expect("just proposed"))
    }

    fn propose_next(&mut self) {
        let track = self.track.as_ref().expect("episode in progress");
        let pending = propose(
            track,
            self.episode,
            self.current.len(),
            &self.q,
            &self.hp,
            &mut self.rng,
        );
        self.pending = Some(pending);
        self.phase = Phase::AwaitingRating;
    }

    /// Applies a rating to the pending step and advances.
    pub fn rate(&mut self, rating: u8) -> Result<StepOutcome, AgentError> {
        if self.phase != Phase::AwaitingRating {
            return Err(AgentError::WrongPhase(self.phase));
        }
        let rating = check_rating(rating)?;
        let pending = self.pending.take().expect("awaiting rating implies a pending step");
        let (record, track) = settle(&mut self.q, pending, rating, &self.hp);
        self.track = Some(track);
        self.current.push(record.clone());

        let mut episode_done = None;
        if self.current.len() == self.hp.steps_per_episode {
            let records = std::mem::take(&mut self.current);
            self.log.push_episode(records);
            let mean = *self.log.episode_means.last().expect("just pushed");
            episode_done = Some((self.episode, mean));
            self.episode += 1;
            self.phase = if self.episode == self.hp.episodes {
                Phase::Completed
            } else {
                Phase::BetweenEpisodes
            };
        } else {
            self.propose_next();
        }
        Ok(StepOutcome {
            record,
            episode_done,
            phase: self.phase,
        })
    }
}
