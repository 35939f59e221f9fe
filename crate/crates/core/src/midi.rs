//! Standard MIDI File export and the JSON wire form used for playback.

use serde::{Deserialize, Serialize};

use crate::theory::Scale;
use crate::track::{GenConfig, MelodyNote, TrackArray, TrackError, PERCUSSION_PITCHES};

pub const TICKS_PER_QUARTER: u16 = 480;
/// Ticks per quarter-beat duration step.
const TICKS_PER_STEP: u32 = TICKS_PER_QUARTER as u32 / 4;
pub const DRUM_TICKS: u32 = 120;
pub const MELODY_CHANNEL: u8 = 0;
pub const DRUM_CHANNEL: u8 = 9;

/// A rendered SMF: format 1, tempo track + melody track + percussion track.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MidiRender {
    bytes: Vec<u8>,
}

impl MidiRender {
    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    // Offs sort before ons at the same tick.
    Off,
    On,
}

#[derive(Debug, Clone, Copy)]
struct NoteEvent {
    tick: u32,
    kind: Kind,
    key: u8,
}

fn write_vlq(out: &mut Vec<u8>, mut value: u32) {
    let mut buf = [0u8; 5];
    let mut i = buf.len() - 1;
    buf[i] = (value & 0x7f) as u8;
    value >>= 7;
    while value > 0 {
        i -= 1;
        buf[i] = (value & 0x7f) as u8 | 0x80;
        value >>= 7;
    }
    out.extend_from_slice(&buf[i..]);
}

fn chunk(out: &mut Vec<u8>, id: &[u8; 4], body: &[u8]) {
    out.extend_from_slice(id);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(body);
}

fn end_of_track(body: &mut Vec<u8>) {
    body.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);
}

/// Note events followed by end-of-track at `end`, so trailing rests keep
/// their length.
fn note_track(mut events: Vec<NoteEvent>, channel: u8, velocity: u8, end: u32) -> Vec<u8> {
    events.sort_by_key(|e| (e.tick, e.kind));
    let mut body = Vec::new();
    let mut now = 0;
    for e in events {
        write_vlq(&mut body, e.tick - now);
        now = e.tick;
        match e.kind {
            Kind::On => body.extend_from_slice(&[0x90 | channel, e.key, velocity]),
            Kind::Off => body.extend_from_slice(&[0x80 | channel, e.key, 0]),
        }
    }
    write_vlq(&mut body, end - now);
    body.extend_from_slice(&[0xff, 0x2f, 0x00]);
    body
}

/// Microseconds per quarter note for `bpm`, rounded to nearest.
pub fn tempo_micros(bpm: u32) -> u32 {
    (60_000_000 + bpm / 2) / bpm
}

/// Onset tick of each percussion slot, spread evenly over the melody span.
pub fn percussion_onsets(track: &TrackArray) -> Vec<u32> {
    let total = track.total_quarters() * TICKS_PER_STEP;
    let slots = track.percussion().len() as u32;
    (0..slots).map(|i| i * total / slots).collect()
}

/// Renders `track` at `config`'s tempo and volume.
///
/// Drum hits last [`DRUM_TICKS`], shortened when the next hit or the end of
/// the melody comes sooner. A volume of 0 is written as velocity 1, since a
/// zero-velocity note-on means note-off in MIDI.
pub fn export_midi(track: &TrackArray, config: &GenConfig) -> MidiRender {
    let velocity = config.volume.clamp(1, 127);

    let mut tempo = Vec::new();
    let micros = tempo_micros(config.tempo_bpm).to_be_bytes();
    tempo.extend_from_slice(&[0x00, 0xff, 0x51, 0x03, micros[1], micros[2], micros[3]]);
    end_of_track(&mut tempo);

    let mut melody = Vec::new();
    let mut tick = 0;
    for (i, note) in track.melody().iter().enumerate() {
        let len = note.duration.quarters() as u32 * TICKS_PER_STEP;
        if let Some(key) = track.pitch_at(i) {
            melody.push(NoteEvent { tick, kind: Kind::On, key });
            melody.push(NoteEvent { tick: tick + len, kind: Kind::Off, key });
        }
        tick += len;
    }
    let total = tick;

    let onsets = percussion_onsets(track);
    let drums = track
        .percussion()
        .iter()
        .zip(&onsets)
        .enumerate()
        .flat_map(|(i, (&sel, &on))| {
            let limit = onsets.get(i + 1).copied().unwrap_or(total);
            let off = (on + DRUM_TICKS).min(limit);
            let key = PERCUSSION_PITCHES[sel as usize];
            [
                NoteEvent { tick: on, kind: Kind::On, key },
                NoteEvent { tick: off, kind: Kind::Off, key },
            ]
        })
        .collect();

    let mut bytes = Vec::new();
    let mut header = Vec::with_capacity(6);
    header.extend_from_slice(&1u16.to_be_bytes());
    header.extend_from_slice(&3u16.to_be_bytes());
    header.extend_from_slice(&TICKS_PER_QUARTER.to_be_bytes());
    chunk(&mut bytes, b"MThd", &header);
    chunk(&mut bytes, b"MTrk", &tempo);
    chunk(&mut bytes, b"MTrk", &note_track(melody, MELODY_CHANNEL, velocity, total));
    chunk(&mut bytes, b"MTrk", &note_track(drums, DRUM_CHANNEL, velocity, total));
    MidiRender { bytes }
}

/// JSON form of a track for browsers and other clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackWire {
    pub scale: Scale,
    pub melody: Vec<MelodyNote>,
    pub percussion: Vec<u8>,
    pub tempo_bpm: u32,
    pub volume: u8,
}

pub fn to_wire(track: &TrackArray, config: &GenConfig) -> TrackWire {
    TrackWire {
        scale: track.scale().clone(),
        melody: track.melody().to_vec(),
        percussion: track.percussion().to_vec(),
        tempo_bpm: config.tempo_bpm,
        volume: config.volume,
    }
}

impl TrackWire {
    /// Rebuilds the track, checking that the scale is the one its base and
    /// kind generate.
    pub fn to_track(&self) -> Result<TrackArray, TrackError> {
        let expected = crate::theory::generate_scale(self.scale.base(), self.scale.kind())?;
        if expected != self.scale {
            return Err(TrackError::Malformed(format!(
                "scale pitches {:?} do not match {} {}",
                self.scale.pitches(),
                self.scale.base(),
                self.scale.kind()
            )));
        }
        TrackArray::new(self.scale.clone(), self.melody.clone(), self.percussion.clone())
    }
}
