//! Track records: per-object time series of raw observation vectors.
//!
//! The on-disk format is line-delimited UTF-8 text, one observation per line:
//!
//! ```text
//! # track_id,t,size,speed,direction,pos_x,pos_y
//! a,0,0.21,0.30,1.57,0.10,0.42
//! ```
//!
//! Lines starting with `#` and blank lines are ignored.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::TAU;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{FlaError, Result};

/// The four observation types, in their fixed storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feature {
    Size,
    Speed,
    Direction,
    Position,
}

impl Feature {
    pub const ALL: [Feature; 4] = [
        Feature::Size,
        Feature::Speed,
        Feature::Direction,
        Feature::Position,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Size => "size",
            Feature::Speed => "speed",
            Feature::Direction => "direction",
            Feature::Position => "position",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_scalar(self) -> bool {
        !matches!(self, Feature::Position)
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = FlaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "size" => Ok(Feature::Size),
            "speed" => Ok(Feature::Speed),
            "direction" => Ok(Feature::Direction),
            "position" => Ok(Feature::Position),
            other => Err(FlaError::Invalid(format!("unknown feature `{other}`"))),
        }
    }
}

/// One observation of a tracked object at frame `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationVector {
    pub t: i64,
    pub size: f64,
    pub speed: f64,
    /// Heading in radians, `[0, 2π)`.
    pub direction: f64,
    /// Normalized scene coordinates in `[0, 1]²`.
    pub position: [f64; 2],
}

impl ObservationVector {
    /// Returns the name of the first field that violates its range, if any.
    pub fn invalid_field(&self) -> Option<(&'static str, f64)> {
        let checks: [(&'static str, f64, bool); 5] = [
            ("size", self.size, self.size.is_finite() && self.size >= 0.0),
            ("speed", self.speed, self.speed.is_finite() && self.speed >= 0.0),
            (
                "direction",
                self.direction,
                self.direction.is_finite() && (0.0..TAU).contains(&self.direction),
            ),
            (
                "pos_x",
                self.position[0],
                (0.0..=1.0).contains(&self.position[0]),
            ),
            (
                "pos_y",
                self.position[1],
                (0.0..=1.0).contains(&self.position[1]),
            ),
        ];
        checks
            .into_iter()
            .find(|(_, _, ok)| !ok)
            .map(|(name, v, _)| (name, v))
    }

    pub fn scalar(&self, feature: Feature) -> Option<f64> {
        match feature {
            Feature::Size => Some(self.size),
            Feature::Speed => Some(self.speed),
            Feature::Direction => Some(self.direction),
            Feature::Position => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub track_id: String,
    /// Strictly increasing in `t`.
    pub observations: Vec<ObservationVector>,
}

impl Track {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn times(&self) -> Vec<i64> {
        self.observations.iter().map(|o| o.t).collect()
    }
}

/// A collection of tracks with unique ids. Feature order is always
/// `size, speed, direction, position`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackSet {
    pub tracks: Vec<Track>,
}

impl TrackSet {
    pub fn new(tracks: Vec<Track>) -> Result<Self> {
        let mut seen = HashSet::new();
        for track in &tracks {
            if !seen.insert(track.track_id.as_str()) {
                return Err(FlaError::Invalid(format!(
                    "duplicate track id `{}`",
                    track.track_id
                )));
            }
            if track.observations.windows(2).any(|w| w[0].t >= w[1].t) {
                return Err(FlaError::Invalid(format!(
                    "time indices of track `{}` are not strictly increasing",
                    track.track_id
                )));
            }
        }
        Ok(TrackSet { tracks })
    }

    pub fn feature_names(&self) -> [&'static str; 4] {
        Feature::ALL.map(Feature::name)
    }

    pub fn observation_count(&self) -> usize {
        self.tracks.iter().map(Track::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.observation_count() == 0
    }

    pub fn observations(&self) -> impl Iterator<Item = &ObservationVector> {
        self.tracks.iter().flat_map(|t| t.observations.iter())
    }
}

pub const TRACK_HEADER: &str = "# track_id,t,size,speed,direction,pos_x,pos_y";

/// Parses line-delimited track records, grouping by track id and sorting by
/// `t`. Tracks appear in order of first occurrence.
pub fn parse_track_records<R: BufRead>(reader: R) -> Result<TrackSet> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, BTreeMap<i64, ObservationVector>> = BTreeMap::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() != 7 {
            return Err(FlaError::Parse {
                line: line_no,
                message: format!("expected 7 fields, found {}", fields.len()),
            });
        }
        let track_id = fields[0];
        if track_id.is_empty() {
            return Err(FlaError::Parse {
                line: line_no,
                message: "empty track_id".into(),
            });
        }
        let t: i64 = fields[1].parse().map_err(|_| FlaError::Parse {
            line: line_no,
            message: format!("field `t` is not an integer: `{}`", fields[1]),
        })?;
        let mut values = [0.0f64; 5];
        const NAMES: [&str; 5] = ["size", "speed", "direction", "pos_x", "pos_y"];
        for (k, name) in NAMES.iter().enumerate() {
            values[k] = fields[k + 2].parse().map_err(|_| FlaError::Parse {
                line: line_no,
                message: format!("field `{name}` is not a number: `{}`", fields[k + 2]),
            })?;
        }
        let obs = ObservationVector {
            t,
            size: values[0],
            speed: values[1],
            direction: values[2],
            position: [values[3], values[4]],
        };
        if let Some((field, value)) = obs.invalid_field() {
            return Err(FlaError::OutOfRange {
                line: line_no,
                field,
                value: value.to_string(),
            });
        }
        let group = match groups.get_mut(track_id) {
            Some(g) => g,
            None => {
                order.push(track_id.to_string());
                groups.entry(track_id.to_string()).or_default()
            }
        };
        if group.insert(t, obs).is_some() {
            return Err(FlaError::DuplicateObservation {
                line: line_no,
                track_id: track_id.to_string(),
                t,
            });
        }
    }

    let tracks = order
        .into_iter()
        .map(|id| {
            let observations = groups.remove(&id).unwrap_or_default().into_values().collect();
            Track {
                track_id: id,
                observations,
            }
        })
        .collect();
    TrackSet::new(tracks)
}

pub fn write_track_records<W: Write>(tracks: &TrackSet, mut out: W) -> Result<()> {
    writeln!(out, "{TRACK_HEADER}")?;
    for track in &tracks.tracks {
        for o in &track.observations {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                track.track_id, o.t, o.size, o.speed, o.direction, o.position[0], o.position[1]
            )?;
        }
    }
    Ok(())
}

/// Linearly rescales one feature so that its observed minimum maps to 0 and
/// its maximum to 1. For `position` each axis is rescaled independently.
pub fn normalize_min_max(tracks: &TrackSet, feature: Feature) -> Result<TrackSet> {
    if tracks.is_empty() {
        return Err(FlaError::Degenerate(format!(
            "cannot normalize `{feature}` of an empty track set"
        )));
    }
    let axes: usize = if feature == Feature::Position { 2 } else { 1 };
    let get = |o: &ObservationVector, axis: usize| -> f64 {
        match feature {
            Feature::Position => o.position[axis],
            f => o.scalar(f).unwrap_or(0.0),
        }
    };
    let mut ranges = Vec::with_capacity(axes);
    for axis in 0..axes {
        let (lo, hi) = tracks
            .observations()
            .map(|o| get(o, axis))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
        if lo >= hi {
            return Err(FlaError::Degenerate(format!(
                "feature `{feature}` is constant ({lo}); cannot normalize"
            )));
        }
        ranges.push((lo, hi));
    }

    let mut out = tracks.clone();
    for o in out.tracks.iter_mut().flat_map(|t| t.observations.iter_mut()) {
        let scale = |v: f64, (lo, hi): (f64, f64)| ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
        match feature {
            Feature::Size => o.size = scale(o.size, ranges[0]),
            Feature::Speed => o.speed = scale(o.speed, ranges[0]),
            Feature::Direction => o.direction = scale(o.direction, ranges[0]),
            Feature::Position => {
                o.position[0] = scale(o.position[0], ranges[0]);
                o.position[1] = scale(o.position[1], ranges[1]);
            }
        }
    }
    Ok(out)
}
