//! Uniform discretization of each observation type into a symbol alphabet.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{FlaError, Result};
use crate::track::{Feature, ObservationVector, TrackSet};

/// Binning layout for one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BinKind {
    ScalarUniform { bins: usize, lower: f64, upper: f64 },
    Grid2d {
        bins_x: usize,
        bins_y: usize,
        lower: [f64; 2],
        upper: [f64; 2],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub feature: Feature,
    #[serde(flatten)]
    pub kind: BinKind,
}

/// Index of `value` among `bins` equal-width half-open bins over
/// `[lower, upper)`; the last bin is closed and out-of-range values clamp.
fn uniform_index(value: f64, bins: usize, lower: f64, upper: f64) -> usize {
    if bins <= 1 || value.is_nan() || value < lower {
        return 0;
    }
    if value >= upper {
        return bins - 1;
    }
    let width = upper - lower;
    let boundary = |k: usize| lower + width * (k as f64) / (bins as f64);
    let mut idx = (((value - lower) / width) * bins as f64).floor() as usize;
    idx = idx.min(bins - 1);
    // floor() can land one bin off when a boundary is not representable
    if idx + 1 < bins && value >= boundary(idx + 1) {
        idx += 1;
    } else if idx > 0 && value < boundary(idx) {
        idx -= 1;
    }
    idx
}

impl BinSpec {
    fn validate(&self) -> Result<()> {
        let ok = match &self.kind {
            BinKind::ScalarUniform { bins, lower, upper } => {
                *bins >= 1 && lower < upper && self.feature.is_scalar()
            }
            BinKind::Grid2d {
                bins_x,
                bins_y,
                lower,
                upper,
            } => {
                *bins_x >= 1
                    && *bins_y >= 1
                    && lower[0] < upper[0]
                    && lower[1] < upper[1]
                    && self.feature == Feature::Position
            }
        };
        if ok {
            Ok(())
        } else {
            Err(FlaError::Invalid(format!("invalid bin spec {self:?}")))
        }
    }

    pub fn alphabet_size(&self) -> usize {
        match &self.kind {
            BinKind::ScalarUniform { bins, .. } => *bins,
            BinKind::Grid2d { bins_x, bins_y, .. } => bins_x * bins_y,
        }
    }

    /// Symbol for a scalar value. Grid specs use [`BinSpec::symbol_2d`].
    pub fn symbol(&self, value: f64) -> u32 {
        match &self.kind {
            BinKind::ScalarUniform {
                bins,
                lower,
                upper,
            } => uniform_index(value, *bins, *lower, *upper) as u32,
            BinKind::Grid2d { .. } => self.symbol_2d([value, value]),
        }
    }

    /// Row-major cell index `iy * bins_x + ix`.
    pub fn symbol_2d(&self, p: [f64; 2]) -> u32 {
        match &self.kind {
            BinKind::Grid2d {
                bins_x,
                bins_y,
                lower,
                upper,
            } => {
                let ix = uniform_index(p[0], *bins_x, lower[0], upper[0]);
                let iy = uniform_index(p[1], *bins_y, lower[1], upper[1]);
                (iy * bins_x + ix) as u32
            }
            BinKind::ScalarUniform { .. } => self.symbol(p[0]),
        }
    }

    pub fn symbol_of(&self, o: &ObservationVector) -> u32 {
        match self.feature {
            Feature::Position => self.symbol_2d(o.position),
            f => self.symbol(o.scalar(f).unwrap_or(0.0)),
        }
    }

    /// Lower and upper edge of a scalar bin.
    pub fn bin_edges(&self, symbol: usize) -> Option<(f64, f64)> {
        match &self.kind {
            BinKind::ScalarUniform {
                bins,
                lower,
                upper,
            } if symbol < *bins => {
                let w = (upper - lower) / *bins as f64;
                Some((lower + w * symbol as f64, lower + w * (symbol + 1) as f64))
            }
            _ => None,
        }
    }
}

fn observed_range(tracks: &TrackSet, f: impl Fn(&ObservationVector) -> f64) -> (f64, f64) {
    tracks
        .observations()
        .map(f)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        })
}

/// Equal-width bins spanning the observed min to max of a scalar feature.
pub fn fit_uniform_bins(tracks: &TrackSet, feature: Feature, bins: usize) -> Result<BinSpec> {
    if !feature.is_scalar() {
        return Err(FlaError::Invalid(format!(
            "`{feature}` is not a scalar feature"
        )));
    }
    if bins == 0 {
        return Err(FlaError::Invalid("bin count must be at least 1".into()));
    }
    if tracks.is_empty() {
        return Err(FlaError::Degenerate("cannot fit bins to an empty track set".into()));
    }
    let (lower, upper) = observed_range(tracks, |o| o.scalar(feature).unwrap_or(0.0));
    if lower >= upper {
        return Err(FlaError::Degenerate(format!(
            "feature `{feature}` is constant ({lower})"
        )));
    }
    Ok(BinSpec {
        feature,
        kind: BinKind::ScalarUniform {
            bins,
            lower,
            upper,
        },
    })
}

/// Independent uniform partitions of x and y over the observed bounding box.
pub fn fit_grid_bins(tracks: &TrackSet, bins_x: usize, bins_y: usize) -> Result<BinSpec> {
    if bins_x == 0 || bins_y == 0 {
        return Err(FlaError::Invalid("grid bin counts must be at least 1".into()));
    }
    if tracks.is_empty() {
        return Err(FlaError::Degenerate("cannot fit bins to an empty track set".into()));
    }
    let (x0, x1) = observed_range(tracks, |o| o.position[0]);
    let (y0, y1) = observed_range(tracks, |o| o.position[1]);
    if x0 >= x1 || y0 >= y1 {
        return Err(FlaError::Degenerate(
            "position has a degenerate axis extent".into(),
        ));
    }
    Ok(BinSpec {
        feature: Feature::Position,
        kind: BinKind::Grid2d {
            bins_x,
            bins_y,
            lower: [x0, y0],
            upper: [x1, y1],
        },
    })
}

/// Bin counts for the four features, written `64,64,64,16x16`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinConfig {
    pub size: usize,
    pub speed: usize,
    pub direction: usize,
    pub position: (usize, usize),
}

impl Default for BinConfig {
    fn default() -> Self {
        BinConfig {
            size: 64,
            speed: 64,
            direction: 64,
            position: (16, 16),
        }
    }
}

impl fmt::Display for BinConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{}x{}",
            self.size, self.speed, self.direction, self.position.0, self.position.1
        )
    }
}

impl FromStr for BinConfig {
    type Err = FlaError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || FlaError::Invalid(format!("bad bin list `{s}`, expected e.g. 64,64,64,16x16"));
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(bad());
        }
        let num = |p: &str| p.parse::<usize>().map_err(|_| bad());
        let (px, py) = match parts[3].split_once(['x', 'X']) {
            Some((a, b)) => (num(a)?, num(b)?),
            None => {
                let n = num(parts[3])?;
                (n, n)
            }
        };
        Ok(BinConfig {
            size: num(parts[0])?,
            speed: num(parts[1])?,
            direction: num(parts[2])?,
            position: (px, py),
        })
    }
}

/// One [`BinSpec`] per feature, in [`Feature::ALL`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizerSet {
    pub specs: Vec<BinSpec>,
}

impl QuantizerSet {
    pub fn new(specs: Vec<BinSpec>) -> Result<Self> {
        let features: Vec<Feature> = specs.iter().map(|s| s.feature).collect();
        if features != Feature::ALL {
            return Err(FlaError::Invalid(format!(
                "quantizer set must cover size, speed, direction, position in order; got {features:?}"
            )));
        }
        for s in &specs {
            s.validate()?;
        }
        Ok(QuantizerSet { specs })
    }

    pub fn fit(tracks: &TrackSet, bins: &BinConfig) -> Result<Self> {
        QuantizerSet::new(vec![
            fit_uniform_bins(tracks, Feature::Size, bins.size)?,
            fit_uniform_bins(tracks, Feature::Speed, bins.speed)?,
            fit_uniform_bins(tracks, Feature::Direction, bins.direction)?,
            fit_grid_bins(tracks, bins.position.0, bins.position.1)?,
        ])
    }

    pub fn alphabet_sizes(&self) -> Vec<usize> {
        self.specs.iter().map(BinSpec::alphabet_size).collect()
    }

    pub fn spec(&self, feature: Feature) -> &BinSpec {
        &self.specs[feature.index()]
    }

    pub fn quantize(&self, tracks: &TrackSet) -> Result<SymbolSequences> {
        QuantizerSet::new(self.specs.clone())?;
        let k = self.specs.len();
        let tracks = tracks
            .tracks
            .iter()
            .map(|track| {
                let mut symbols = Vec::with_capacity(track.len() * k);
                for o in &track.observations {
                    symbols.extend(self.specs.iter().map(|s| s.symbol_of(o)));
                }
                SymbolTrack {
                    track_id: track.track_id.clone(),
                    times: track.times(),
                    features: k,
                    symbols,
                }
            })
            .collect();
        Ok(SymbolSequences {
            alphabet_sizes: self.alphabet_sizes(),
            tracks,
        })
    }
}

/// Symbols for one track: a K-tuple per frame, stored frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolTrack {
    pub track_id: String,
    pub times: Vec<i64>,
    pub features: usize,
    pub symbols: Vec<u32>,
}

impl SymbolTrack {
    pub fn new(track_id: impl Into<String>, times: Vec<i64>, frames: Vec<Vec<u32>>) -> Self {
        let features = frames.first().map_or(0, Vec::len);
        SymbolTrack {
            track_id: track_id.into(),
            times,
            features,
            symbols: frames.into_iter().flatten().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn frame(&self, idx: usize) -> &[u32] {
        &self.symbols[idx * self.features..(idx + 1) * self.features]
    }
}

/// Quantized tracks together with the alphabet size of each feature.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolSequences {
    pub alphabet_sizes: Vec<usize>,
    pub tracks: Vec<SymbolTrack>,
}

impl SymbolSequences {
    pub fn features(&self) -> usize {
        self.alphabet_sizes.len()
    }

    /// Keeps only the listed feature columns, in the given order.
    pub fn select(&self, features: &[usize]) -> Result<SymbolSequences> {
        if let Some(&bad) = features.iter().find(|&&f| f >= self.features()) {
            return Err(FlaError::Invalid(format!("feature index {bad} out of range")));
        }
        let tracks = self
            .tracks
            .iter()
            .map(|t| SymbolTrack {
                track_id: t.track_id.clone(),
                times: t.times.clone(),
                features: features.len(),
                symbols: (0..t.len())
                    .flat_map(|i| features.iter().map(move |&f| t.frame(i)[f]))
                    .collect(),
            })
            .collect();
        Ok(SymbolSequences {
            alphabet_sizes: features.iter().map(|&f| self.alphabet_sizes[f]).collect(),
            tracks,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.tracks {
            if t.features != self.features() || t.symbols.len() != t.len() * t.features {
                return Err(FlaError::Shape(format!(
                    "track `{}` has inconsistent symbol layout",
                    t.track_id
                )));
            }
            if let Some(pos) = t
                .symbols
                .iter()
                .enumerate()
                .position(|(i, &s)| s as usize >= self.alphabet_sizes[i % t.features])
            {
                return Err(FlaError::Shape(format!(
                    "track `{}`: symbol {} outside alphabet of feature {}",
                    t.track_id,
                    t.symbols[pos],
                    pos % t.features
                )));
            }
        }
        Ok(())
    }
}
