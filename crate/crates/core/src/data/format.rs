//! `TRKS` binary track files.
//!
//! Layout, all little-endian:
//!
//! | offset | size        | field                                   |
//! |--------|-------------|-----------------------------------------|
//! | 0      | 4           | magic `TRKS`                            |
//! | 4      | 4           | version (`u32`, currently 1)            |
//! | 8      | 4           | P, number of points (`u32`)             |
//! | 12     | 4           | T, number of frames (`u32`)             |
//! | 16     | 4           | W, image width in pixels (`u32`)        |
//! | 20     | 4           | H, image height in pixels (`u32`)       |
//! | 24     | 4           | fps (`f32`)                             |
//! | 28     | 8·P·T       | coordinates, `f32`, point-major then frame, `x` before `y` |
//! | ...    | ⌈P·T/8⌉     | visibility bits, bit `p·T + t`, LSB first |
//!
//! Coordinates are raw pixels. In-memory tracks hold `f64`; writing rounds to
//! `f32`, so a round trip is bit-exact for `f32`-representable coordinates.

use std::fs;
use std::path::Path;

use super::DataError;
use crate::track::{Point, PointTrack, TrackError, TrackSet};

pub const TRACK_FILE_MAGIC: &[u8; 4] = b"TRKS";
pub const TRACK_FILE_VERSION: u32 = 1;
const HEADER_LEN: usize = 28;

fn payload_len(points: usize, frames: usize) -> usize {
    let n = points * frames;
    n * 8 + n.div_ceil(8)
}

pub fn encode_tracks(ts: &TrackSet) -> Result<Vec<u8>, DataError> {
    if ts.is_normalized() {
        return Err(TrackError::ExpectedRaw.into());
    }
    let (p, t) = (ts.len(), ts.num_frames());
    let mut buf = Vec::with_capacity(HEADER_LEN + payload_len(p, t));
    buf.extend_from_slice(TRACK_FILE_MAGIC);
    for v in [TRACK_FILE_VERSION, p as u32, t as u32, ts.width(), ts.height()] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&ts.fps().to_le_bytes());
    for track in ts.tracks() {
        for c in track.coords() {
            buf.extend_from_slice(&(c.x as f32).to_le_bytes());
            buf.extend_from_slice(&(c.y as f32).to_le_bytes());
        }
    }
    let mut bits = vec![0u8; (p * t).div_ceil(8)];
    for (k, &v) in ts.tracks().iter().flat_map(|tr| tr.visible()).enumerate() {
        if v {
            bits[k / 8] |= 1 << (k % 8);
        }
    }
    buf.extend_from_slice(&bits);
    Ok(buf)
}

pub fn decode_tracks(bytes: &[u8]) -> Result<TrackSet, DataError> {
    if bytes.len() < HEADER_LEN {
        return Err(DataError::Format(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != TRACK_FILE_MAGIC {
        return Err(DataError::Format(format!("bad magic {:?}", &bytes[..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != TRACK_FILE_VERSION {
        return Err(DataError::Version { found: version, expected: TRACK_FILE_VERSION });
    }
    let (p, t, w, h) = (word(1) as usize, word(2) as usize, word(3), word(4));
    let fps = f32::from_le_bytes(bytes[24..28].try_into().unwrap());
    if t == 0 {
        return Err(DataError::Format("zero frames".into()));
    }
    let expected = (HEADER_LEN + payload_len(p, t)) as u64;
    if bytes.len() as u64 != expected {
        return Err(DataError::SizeMismatch { expected, found: bytes.len() as u64 });
    }
    let coords = &bytes[HEADER_LEN..HEADER_LEN + p * t * 8];
    let bits = &bytes[HEADER_LEN + p * t * 8..];
    let float = |i: usize| f64::from(f32::from_le_bytes(coords[4 * i..4 * i + 4].try_into().unwrap()));
    let tracks = (0..p)
        .map(|pi| {
            let base = pi * t;
            let c = (0..t).map(|f| Point::new(float(2 * (base + f)), float(2 * (base + f) + 1))).collect();
            let v = (0..t).map(|f| bits[(base + f) / 8] >> ((base + f) % 8) & 1 == 1).collect();
            PointTrack::new(c, v)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TrackSet::new(tracks, t, w, h, fps)?)
}

/// Writes raw pixel tracks; normalized input is rejected.
pub fn write_tracks(ts: &TrackSet, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let bytes = encode_tracks(ts)?;
    fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}

pub fn read_tracks(path: impl AsRef<Path>) -> Result<TrackSet, DataError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    decode_tracks(&bytes)
}
