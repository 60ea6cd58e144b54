//! Point-track data model and the data-side pipeline of the TRec action recognizer.
//!
//! The crate is split along the lines the recognizer consumes its inputs:
//!
//! * [`track`] holds trajectories ([`PointTrack`], [`TrackSet`]) and the pure
//!   operations that prepare them for the network (normalization, random
//!   subsampling, flattening into one token row per point).
//! * [`data`] persists and produces tracks: the `TRKS` binary track file, an
//!   adapter for array dumps written by an external point tracker, frame
//!   sampling, manifests, and a synthetic moving-shape video generator with
//!   analytic ground-truth tracks.
//! * [`augment`] applies one geometric/photometric transform to all frames of a
//!   clip and replays the geometric part on the track coordinates.
//! * [`kde`] scores per-point motion by Gaussian kernel density and drops the
//!   dense (background) motion clusters.

pub mod augment;
pub mod data;
pub mod kde;
pub mod seed;
pub mod track;

pub use track::{MotionMatrix, Point, PointTrack, TrackError, TrackSet, VideoSample};
