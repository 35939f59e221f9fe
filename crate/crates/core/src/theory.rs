//! Note naming, pitch numbering and scale generation.
//!
//! Pitches use MIDI numbering (C4 = 60). Scales span a single octave starting
//! at the base note; the octave repetition is not included.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// MIDI note number.
pub type Pitch = u8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TheoryError {
    #[error("invalid note name {0:?}: expected <letter><#|b?><octave>, e.g. \"C4\" or \"F#3\"")]
    InvalidNoteName(String),
    #[error("note {name} maps to pitch {pitch}, outside the MIDI range 0..=127")]
    PitchOutOfRange { name: String, pitch: i32 },
    #[error("scale on {base} would reach pitch {top}, above 127")]
    ScaleOutOfRange { base: String, top: i32 },
    #[error("unknown scale type {0:?}: expected major, minor or diminished")]
    UnknownScaleType(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Letter {
    C,
    D,
    E,
    F,
    G,
    A,
    B,
}

impl Letter {
    pub const ALL: [Letter; 7] = [
        Letter::C,
        Letter::D,
        Letter::E,
        Letter::F,
        Letter::G,
        Letter::A,
        Letter::B,
    ];

    /// Semitones above C within the octave.
    pub fn offset(self) -> i32 {
        match self {
            Letter::C => 0,
            Letter::D => 2,
            Letter::E => 4,
            Letter::F => 5,
            Letter::G => 7,
            Letter::A => 9,
            Letter::B => 11,
        }
    }

    fn from_char(c: char) -> Option<Self> {
        Some(match c {
            'C' => Letter::C,
            'D' => Letter::D,
            'E' => Letter::E,
            'F' => Letter::F,
            'G' => Letter::G,
            'A' => Letter::A,
            'B' => Letter::B,
            _ => return None,
        })
    }

    fn as_char(self) -> char {
        match self {
            Letter::C => 'C',
            Letter::D => 'D',
            Letter::E => 'E',
            Letter::F => 'F',
            Letter::G => 'G',
            Letter::A => 'A',
            Letter::B => 'B',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Accidental {
    Natural,
    Sharp,
    Flat,
}

impl Accidental {
    pub const ALL: [Accidental; 3] = [Accidental::Natural, Accidental::Sharp, Accidental::Flat];

    pub fn offset(self) -> i32 {
        match self {
            Accidental::Natural => 0,
            Accidental::Sharp => 1,
            Accidental::Flat => -1,
        }
    }
}

/// A spelled note such as `C4`, `F#3` or `Bb5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NoteName {
    pub letter: Letter,
    pub accidental: Accidental,
    octave: u8,
}

impl NoteName {
    pub const MAX_OCTAVE: u8 = 9;

    pub fn new(letter: Letter, accidental: Accidental, octave: u8) -> Result<Self, TheoryError> {
        let name = NoteName {
            letter,
            accidental,
            octave,
        };
        if octave > Self::MAX_OCTAVE {
            return Err(TheoryError::InvalidNoteName(name.to_string()));
        }
        Ok(name)
    }

    pub fn octave(&self) -> u8 {
        self.octave
    }

    /// Every spellable note name, in (octave, letter, accidental) order.
    pub fn all() -> impl Iterator<Item = NoteName> {
        (0..=Self::MAX_OCTAVE).flat_map(|octave| {
            Letter::ALL.into_iter().flat_map(move |letter| {
                Accidental::ALL.into_iter().map(move |accidental| NoteName {
                    letter,
                    accidental,
                    octave,
                })
            })
        })
    }
}

impl fmt::Display for NoteName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let acc = match self.accidental {
            Accidental::Natural => "",
            Accidental::Sharp => "#",
            Accidental::Flat => "b",
        };
        write!(f, "{}{}{}", self.letter.as_char(), acc, self.octave)
    }
}

impl FromStr for NoteName {
    type Err = TheoryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let invalid = || TheoryError::InvalidNoteName(s.to_string());
        let mut chars = s.chars();
        let letter = chars.next().and_then(Letter::from_char).ok_or_else(invalid)?;
        let rest = chars.as_str();
        let (accidental, digits) = match rest.strip_prefix('#') {
            Some(d) => (Accidental::Sharp, d),
            None => match rest.strip_prefix('b') {
                Some(d) => (Accidental::Flat, d),
                None => (Accidental::Natural, rest),
            },
        };
        if digits.len() != 1 || !digits.as_bytes()[0].is_ascii_digit() {
            return Err(invalid());
        }
        let octave = digits.as_bytes()[0] - b'0';
        NoteName::new(letter, accidental, octave)
    }
}

impl Serialize for NoteName {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NoteName {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// MIDI pitch of a spelled note: `12·(octave+1) + letter + accidental`.
pub fn note_to_pitch(name: NoteName) -> Result<Pitch, TheoryError> {
    let pitch = 12 * (name.octave as i32 + 1) + name.letter.offset() + name.accidental.offset();
    if !(0..=127).contains(&pitch) {
        return Err(TheoryError::PitchOutOfRange {
            name: name.to_string(),
            pitch,
        });
    }
    Ok(pitch as Pitch)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleType {
    Major,
    Minor,
    Diminished,
}

impl ScaleType {
    pub const ALL: [ScaleType; 3] = [ScaleType::Major, ScaleType::Minor, ScaleType::Diminished];

    /// Step sizes in semitones. The final step of each table returns to the
    /// octave and is not emitted as a scale pitch.
    pub fn intervals(self) -> &'static [u8] {
        match self {
            ScaleType::Major => &[2, 2, 1, 2, 2, 2, 1],
            // natural minor
            ScaleType::Minor => &[2, 1, 2, 2, 1, 2, 2],
            // whole-half octatonic
            ScaleType::Diminished => &[2, 1, 2, 1, 2, 1, 2, 1],
        }
    }

    /// Number of distinct pitches in one octave of this scale.
    pub fn note_count(self) -> usize {
        self.intervals().len()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScaleType::Major => "major",
            ScaleType::Minor => "minor",
            ScaleType::Diminished => "diminished",
        }
    }
}

impl fmt::Display for ScaleType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScaleType {
    type Err = TheoryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScaleType::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| TheoryError::UnknownScaleType(s.to_string()))
    }
}

/// One octave of pitches built from a base note and scale type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scale {
    base: NoteName,
    kind: ScaleType,
    pitches: Vec<Pitch>,
}

impl Scale {
    pub fn base(&self) -> NoteName {
        self.base
    }

    pub fn kind(&self) -> ScaleType {
        self.kind
    }

    pub fn pitches(&self) -> &[Pitch] {
        &self.pitches
    }

    pub fn len(&self) -> usize {
        self.pitches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pitches.is_empty()
    }

    /// Highest valid scale degree.
    pub fn max_degree(&self) -> u8 {
        (self.pitches.len() - 1) as u8
    }
}

pub fn generate_scale(base: NoteName, kind: ScaleType) -> Result<Scale, TheoryError> {
    let root = note_to_pitch(base)?;
    if root as i32 + 12 > 127 {
        return Err(TheoryError::ScaleOutOfRange {
            base: base.to_string(),
            top: root as i32 + 12,
        });
    }
    let steps = kind.intervals();
    let pitches = std::iter::once(root)
        .chain(steps[..steps.len() - 1].iter().scan(root, |p, step| {
            *p += step;
            Some(*p)
        }))
        .collect();
    Ok(Scale {
        base,
        kind,
        pitches,
    })
}
