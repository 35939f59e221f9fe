//! The track array: a melody of (degree, duration) pairs plus a percussion
//! line, along with the six edit actions the agent can take on it.

use std::fmt;

use num_bigint::BigUint;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::theory::{generate_scale, NoteName, Scale, ScaleType, TheoryError};

/// General MIDI drum notes selectable by a percussion slot: kick, snare.
pub const PERCUSSION_PITCHES: [u8; 2] = [36, 38];

/// Percussion slots per melody note.
pub const PERCUSSION_PER_NOTE: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrackError {
    #[error("invalid {field}: {reason}")]
    Config { field: &'static str, reason: String },
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error("cursor {cursor} out of range for a track of length {len}")]
    CursorOutOfRange { cursor: usize, len: usize },
    #[error("malformed track: {0}")]
    Malformed(String),
}

impl TrackError {
    /// Name of the offending configuration field, when there is one.
    pub fn field(&self) -> Option<&'static str> {
        match self {
            TrackError::Config { field, .. } => Some(field),
            _ => None,
        }
    }
}

/// Melody position: an index into the scale, or a rest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Degree {
    Note(u8),
    Rest,
}

impl Serialize for Degree {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Degree::Note(d) => serializer.serialize_u8(*d),
            Degree::Rest => serializer.serialize_str("rest"),
        }
    }
}

impl<'de> Deserialize<'de> for Degree {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Index(u8),
            Word(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Index(d) => Ok(Degree::Note(d)),
            Raw::Word(w) if w == "rest" => Ok(Degree::Rest),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "expected a scale degree or \"rest\", got {w:?}"
            ))),
        }
    }
}

/// Note length in quarter-beats (1..=4, i.e. 0.25 to 1.0 beats).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NoteLength(u8);

impl NoteLength {
    pub const MIN: NoteLength = NoteLength(1);
    pub const MAX: NoteLength = NoteLength(4);
    pub const ALL: [NoteLength; 4] = [NoteLength(1), NoteLength(2), NoteLength(3), NoteLength(4)];

    pub fn from_quarters(quarters: u8) -> Option<Self> {
        (1..=4).contains(&quarters).then_some(NoteLength(quarters))
    }

    /// Accepts exactly 0.25, 0.5, 0.75 or 1.0.
    pub fn from_beats(beats: f64) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.beats() == beats)
    }

    pub fn quarters(self) -> u8 {
        self.0
    }

    pub fn beats(self) -> f64 {
        self.0 as f64 / 4.0
    }

    fn longer(self) -> Self {
        NoteLength((self.0 + 1).min(4))
    }

    fn shorter(self) -> Self {
        NoteLength((self.0 - 1).max(1))
    }
}

impl Serialize for NoteLength {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.beats())
    }
}

impl<'de> Deserialize<'de> for NoteLength {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let beats = f64::deserialize(deserializer)?;
        NoteLength::from_beats(beats).ok_or_else(|| {
            serde::de::Error::custom(format!(
                "duration must be one of 0.25, 0.5, 0.75, 1.0, got {beats}"
            ))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MelodyNote {
    pub degree: Degree,
    pub duration: NoteLength,
}

/// User-facing generation parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenConfig {
    pub base_note: NoteName,
    pub scale_type: ScaleType,
    pub track_length: usize,
    pub tempo_bpm: u32,
    pub volume: u8,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            base_note: NoteName::new(crate::theory::Letter::C, crate::theory::Accidental::Natural, 4)
                .expect("C4 is a valid note"),
            scale_type: ScaleType::Major,
            track_length: 8,
            tempo_bpm: 120,
            volume: 100,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub const TEMPO_RANGE: std::ops::RangeInclusive<u32> = 20..=300;

    pub fn validate(&self) -> Result<(), TrackError> {
        if self.track_length == 0 {
            return Err(TrackError::Config {
                field: "track_length",
                reason: "must be at least 1".into(),
            });
        }
        if !Self::TEMPO_RANGE.contains(&self.tempo_bpm) {
            return Err(TrackError::Config {
                field: "tempo_bpm",
                reason: format!("{} is outside 20..=300", self.tempo_bpm),
            });
        }
        if self.volume > 127 {
            return Err(TrackError::Config {
                field: "volume",
                reason: format!("{} is outside 0..=127", self.volume),
            });
        }
        self.scale().map_err(|e| TrackError::Config {
            field: "base_note",
            reason: e.to_string(),
        })?;
        Ok(())
    }

    pub fn scale(&self) -> Result<Scale, TheoryError> {
        generate_scale(self.base_note, self.scale_type)
    }

    /// Track-generation stream for this configuration.
    pub fn track_rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// The MDP state content: scale, melody and percussion selectors.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TrackArray {
    scale: Scale,
    melody: Vec<MelodyNote>,
    percussion: Vec<u8>,
}

impl TrackArray {
    /// Builds a track after checking every structural invariant.
    pub fn new(scale: Scale, melody: Vec<MelodyNote>, percussion: Vec<u8>) -> Result<Self, TrackError> {
        if melody.is_empty() {
            return Err(TrackError::Malformed("melody is empty".into()));
        }
        if percussion.len() != PERCUSSION_PER_NOTE * melody.len() {
            return Err(TrackError::Malformed(format!(
                "percussion has {} slots, expected {}",
                percussion.len(),
                PERCUSSION_PER_NOTE * melody.len()
            )));
        }
        if let Some(i) = melody
            .iter()
            .position(|n| matches!(n.degree, Degree::Note(d) if d > scale.max_degree()))
        {
            return Err(TrackError::Malformed(format!(
                "melody[{i}] degree exceeds scale size {}",
                scale.len()
            )));
        }
        if let Some(i) = percussion.iter().position(|&p| p as usize >= PERCUSSION_PITCHES.len()) {
            return Err(TrackError::Malformed(format!(
                "percussion[{i}] must be 0 or 1"
            )));
        }
        Ok(TrackArray {
            scale,
            melody,
            percussion,
        })
    }

    pub fn scale(&self) -> &Scale {
        &self.scale
    }

    pub fn melody(&self) -> &[MelodyNote] {
        &self.melody
    }

    pub fn percussion(&self) -> &[u8] {
        &self.percussion
    }

    pub fn len(&self) -> usize {
        self.melody.len()
    }

    pub fn is_empty(&self) -> bool {
        self.melody.is_empty()
    }

    /// Sounding pitch of melody note `i`, `None` for a rest.
    pub fn pitch_at(&self, i: usize) -> Option<u8> {
        match self.melody[i].degree {
            Degree::Note(d) => Some(self.scale.pitches()[d as usize]),
            Degree::Rest => None,
        }
    }

    pub fn rest_count(&self) -> usize {
        self.melody.iter().filter(|n| n.degree == Degree::Rest).count()
    }

    /// Total melody length in quarter-beats.
    pub fn total_quarters(&self) -> u32 {
        self.melody.iter().map(|n| n.duration.quarters() as u32).sum()
    }
}

/// One of the six edits the agent may apply at the cursor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    RaisePitch = 0,
    LowerPitch = 1,
    Lengthen = 2,
    Shorten = 3,
    TogglePercussion = 4,
    RemoveNote = 5,
}

impl Action {
    pub const COUNT: usize = 6;
    pub const ALL: [Action; 6] = [
        Action::RaisePitch,
        Action::LowerPitch,
        Action::Lengthen,
        Action::Shorten,
        Action::TogglePercussion,
        Action::RemoveNote,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

impl Serialize for Action {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u8(*self as u8)
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let i = u8::deserialize(deserializer)?;
        Action::from_index(i as usize)
            .ok_or_else(|| serde::de::Error::custom(format!("action {i} is not in 0..=5")))
    }
}

/// Canonical text key for a (track, cursor) state.
///
/// Layout: `<degrees>|<quarters>|<percussion>|<cursor>`, one character per
/// element: degree digits 0-7 or `r` for a rest, duration digits 1-4 and
/// percussion selectors 0/1. The scale is not encoded; it
/// is fixed for the lifetime of a model.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateKey(String);

impl StateKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Wraps a key read back from storage after a shape check.
    pub fn parse(s: &str) -> Result<Self, TrackError> {
        let bad = || TrackError::Malformed(format!("state key {s:?}"));
        let parts: Vec<&str> = s.split('|').collect();
        let [degrees, quarters, perc, cursor] = parts[..] else {
            return Err(bad());
        };
        let n = degrees.len();
        let degrees_ok = n > 0 && degrees.bytes().all(|b| b == b'r' || (b'0'..=b'7').contains(&b));
        let quarters_ok = quarters.len() == n && quarters.bytes().all(|b| (b'1'..=b'4').contains(&b));
        let perc_ok = perc.len() == PERCUSSION_PER_NOTE * n && perc.bytes().all(|b| b == b'0' || b == b'1');
        let cursor_ok = cursor.parse::<usize>().map(|c| c < n).unwrap_or(false);
        if degrees_ok && quarters_ok && perc_ok && cursor_ok {
            Ok(StateKey(s.to_string()))
        } else {
            Err(bad())
        }
    }
}

impl fmt::Display for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Draws a fresh track: uniform degrees (no rests), uniform durations and
/// uniform percussion selectors.
pub fn init_track<R: Rng + ?Sized>(config: &GenConfig, rng: &mut R) -> Result<TrackArray, TrackError> {
    config.validate()?;
    let scale = config.scale()?;
    let melody = (0..config.track_length)
        .map(|_| {
            let degree = Degree::Note(rng.random_range(0..scale.len()) as u8);
            let duration = NoteLength::ALL[rng.random_range(0..NoteLength::ALL.len())];
            MelodyNote { degree, duration }
        })
        .collect();
    let percussion = (0..PERCUSSION_PER_NOTE * config.track_length)
        .map(|_| rng.random_range(0..PERCUSSION_PITCHES.len()) as u8)
        .collect();
    Ok(TrackArray {
        scale,
        melody,
        percussion,
    })
}

/// Returns the track with `action` applied at `cursor`. Pitch moves are one
/// scale degree, clamped to the scale; pitch moves on a rest do nothing.
pub fn apply_action(track: &TrackArray, cursor: usize, action: Action) -> Result<TrackArray, TrackError> {
    if cursor >= track.len() {
        return Err(TrackError::CursorOutOfRange {
            cursor,
            len: track.len(),
        });
    }
    let mut next = track.clone();
    let max = track.scale.max_degree();
    let note = &mut next.melody[cursor];
    match action {
        Action::RaisePitch => {
            if let Degree::Note(d) = note.degree {
                note.degree = Degree::Note((d + 1).min(max));
            }
        }
        Action::LowerPitch => {
            if let Degree::Note(d) = note.degree {
                note.degree = Degree::Note(d.saturating_sub(1));
            }
        }
        Action::Lengthen => note.duration = note.duration.longer(),
        Action::Shorten => note.duration = note.duration.shorter(),
        Action::TogglePercussion => {
            let slot = &mut next.percussion[PERCUSSION_PER_NOTE * cursor];
            *slot ^= 1;
        }
        Action::RemoveNote => note.degree = Degree::Rest,
    }
    Ok(next)
}

pub fn encode_state(track: &TrackArray, cursor: usize) -> StateKey {
    use std::fmt::Write;

    // Scales hold at most 8 pitches, so every degree is a single digit.
    let mut key = String::with_capacity(track.len() * 4 + 8);
    for note in &track.melody {
        match note.degree {
            Degree::Note(d) => key.push((b'0' + d) as char),
            Degree::Rest => key.push('r'),
        }
    }
    key.push('|');
    for note in &track.melody {
        key.push((b'0' + note.duration.quarters()) as char);
    }
    key.push('|');
    for &p in &track.percussion {
        key.push((b'0' + p) as char);
    }
    write!(key, "|{cursor}").unwrap();
    StateKey(key)
}

/// Exact count `scale_size^melody_len × rhythm_factor × perc_pitch_count^perc_slots`.
pub fn state_space_size(
    scale_size: u32,
    melody_len: u32,
    rhythm_factor: u32,
    perc_pitch_count: u32,
    perc_slots: u32,
) -> BigUint {
    BigUint::from(scale_size).pow(melody_len)
        * BigUint::from(rhythm_factor)
        * BigUint::from(perc_pitch_count).pow(perc_slots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theory::ScaleType;

    fn c_major() -> Scale {
        generate_scale("C4".parse().unwrap(), ScaleType::Major).unwrap()
    }

    fn note(degree: Degree, quarters: u8) -> MelodyNote {
        MelodyNote {
            degree,
            duration: NoteLength::from_quarters(quarters).unwrap(),
        }
    }

    fn single(degree: Degree, quarters: u8) -> TrackArray {
        TrackArray::new(c_major(), vec![note(degree, quarters)], vec![0, 0]).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_well_formed() {
        let config = GenConfig {
            seed: 99,
            ..GenConfig::default()
        };
        let a = init_track(&config, &mut config.track_rng()).unwrap();
        let b = init_track(&config, &mut config.track_rng()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.melody().len(), 8);
        assert_eq!(a.percussion().len(), 16);
        assert_eq!(a.rest_count(), 0);
    }

    #[test]
    fn init_rejects_bad_config() {
        let config = GenConfig {
            track_length: 0,
            ..GenConfig::default()
        };
        let err = init_track(&config, &mut config.track_rng()).unwrap_err();
        assert_eq!(err.field(), Some("track_length"));
        let config = GenConfig {
            tempo_bpm: 19,
            ..GenConfig::default()
        };
        assert_eq!(config.validate().unwrap_err().field(), Some("tempo_bpm"));
        let config = GenConfig {
            volume: 128,
            ..GenConfig::default()
        };
        assert_eq!(config.validate().unwrap_err().field(), Some("volume"));
    }

    #[test]
    fn duration_steps_and_caps() {
        let t = single(Degree::Note(0), 2);
        let t = apply_action(&t, 0, Action::Lengthen).unwrap();
        assert_eq!(t.melody()[0].duration.beats(), 0.75);
        let full = single(Degree::Note(0), 4);
        assert_eq!(apply_action(&full, 0, Action::Lengthen).unwrap(), full);
        let short = single(Degree::Note(0), 1);
        assert_eq!(apply_action(&short, 0, Action::Shorten).unwrap(), short);
    }

    #[test]
    fn pitch_clamps_at_scale_bounds() {
        let top = single(Degree::Note(6), 2);
        assert_eq!(apply_action(&top, 0, Action::RaisePitch).unwrap(), top);
        let bottom = single(Degree::Note(0), 2);
        assert_eq!(apply_action(&bottom, 0, Action::LowerPitch).unwrap(), bottom);
        let mid = apply_action(&bottom, 0, Action::RaisePitch).unwrap();
        assert_eq!(mid.melody()[0].degree, Degree::Note(1));
    }

    #[test]
    fn pitch_moves_on_rest_are_no_ops() {
        let rest = single(Degree::Rest, 3);
        assert_eq!(apply_action(&rest, 0, Action::RaisePitch).unwrap(), rest);
        assert_eq!(apply_action(&rest, 0, Action::LowerPitch).unwrap(), rest);
    }

    #[test]
    fn remove_keeps_duration() {
        let t = single(Degree::Note(3), 3);
        let r = apply_action(&t, 0, Action::RemoveNote).unwrap();
        assert_eq!(r.melody()[0], note(Degree::Rest, 3));
    }

    #[test]
    fn toggle_targets_aligned_slot() {
        let t = TrackArray::new(
            c_major(),
            vec![note(Degree::Note(0), 1), note(Degree::Note(1), 1)],
            vec![0, 0, 0, 0],
        )
        .unwrap();
        let t = apply_action(&t, 1, Action::TogglePercussion).unwrap();
        assert_eq!(t.percussion(), &[0, 0, 1, 0]);
    }

    #[test]
    fn cursor_out_of_range() {
        let t = single(Degree::Note(0), 1);
        assert_eq!(
            apply_action(&t, 1, Action::Shorten).unwrap_err(),
            TrackError::CursorOutOfRange { cursor: 1, len: 1 }
        );
    }

    #[test]
    fn state_key_layout() {
        let t = TrackArray::new(
            c_major(),
            vec![note(Degree::Note(3), 2), note(Degree::Rest, 4)],
            vec![1, 0, 0, 1],
        )
        .unwrap();
        let key = encode_state(&t, 1);
        assert_eq!(key.as_str(), "3r|24|1001|1");
        assert_eq!(StateKey::parse(key.as_str()).unwrap(), key);
        assert_ne!(encode_state(&t, 0), key);
    }

    #[test]
    fn state_key_parse_rejects_garbage() {
        for bad in ["", "1|2|00", "1|5|00|0", "1|2|02|0", "x|2|00|0", "1|2|00|1", "8|2|00|0", "|||0"] {
            assert!(StateKey::parse(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn track_new_validates() {
        assert!(TrackArray::new(c_major(), vec![], vec![]).is_err());
        assert!(TrackArray::new(c_major(), vec![note(Degree::Note(7), 1)], vec![0, 0]).is_err());
        assert!(TrackArray::new(c_major(), vec![note(Degree::Note(0), 1)], vec![0]).is_err());
        assert!(TrackArray::new(c_major(), vec![note(Degree::Note(0), 1)], vec![0, 2]).is_err());
    }

    #[test]
    fn state_space_degenerate_arguments() {
        assert_eq!(state_space_size(7, 8, 1, 1, 0), BigUint::from(5_764_801u32));
        assert_eq!(state_space_size(1, 0, 1, 1, 0), BigUint::from(1u32));
    }

    #[test]
    fn note_length_from_beats_is_exact() {
        assert_eq!(NoteLength::from_beats(0.75), NoteLength::from_quarters(3));
        assert_eq!(NoteLength::from_beats(0.3), None);
        assert_eq!(NoteLength::from_beats(0.0), None);
    }
}
