//! Synthetic scenes with planted latent structure.
//!
//! Every track draws one archetype and emits all of its frames from that
//! archetype's per-feature distributions: folded Gaussians for size and
//! speed, a wrapped Gaussian for direction, and a reflected random walk
//! inside an axis-aligned region for position. Archetypes that share the
//! exact same parameters for a feature share that feature's planted class.

use std::f64::consts::{SQRT_2, TAU};
use std::io::{BufRead, Write};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{FlaError, Result};
use crate::quantize::{BinKind, QuantizerSet};
use crate::track::{Feature, ObservationVector, Track, TrackSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub stddev: f64,
}

impl Gaussian {
    pub const fn new(mean: f64, stddev: f64) -> Self {
        Gaussian { mean, stddev }
    }
}

/// Axis-aligned rectangle inside the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Region {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Region { x0, y0, x1, y1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Archetype {
    pub weight: f64,
    pub size: Gaussian,
    pub speed: Gaussian,
    /// Heading mean and spread, radians.
    pub direction: Gaussian,
    pub region: Region,
}

fn default_step() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub archetypes: Vec<Archetype>,
    pub track_count: usize,
    /// Track lengths are uniform on `[0.75, 1.25] × mean`.
    pub mean_track_length: usize,
    pub seed: u64,
    /// Per-frame position step stddev as a fraction of the region extent.
    #[serde(default = "default_step")]
    pub position_step: f64,
}

/// Labels of one frame: the archetype and the planted class per feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameLabel {
    pub t: i64,
    pub archetype: u32,
    pub classes: [u32; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackLabels {
    pub track_id: String,
    pub frames: Vec<FrameLabel>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLabels {
    pub tracks: Vec<TrackLabels>,
}

impl GroundTruthLabels {
    pub fn frames(&self) -> impl Iterator<Item = &FrameLabel> {
        self.tracks.iter().flat_map(|t| t.frames.iter())
    }

    /// Fraction of frames in each planted class of a feature.
    pub fn class_frequencies(&self, feature: Feature, classes: usize) -> Vec<f64> {
        let mut counts = vec![0.0; classes];
        let mut total = 0.0;
        for f in self.frames() {
            counts[f.classes[feature.index()] as usize] += 1.0;
            total += 1.0;
        }
        counts.iter().map(|c| c / total).collect()
    }

    /// Fraction of frames with each planted class pair of two features.
    pub fn pair_frequencies(&self, a: Feature, b: Feature, ka: usize, kb: usize) -> Array2<f64> {
        let mut t = Array2::zeros((ka, kb));
        let mut total = 0.0;
        for f in self.frames() {
            t[[f.classes[a.index()] as usize, f.classes[b.index()] as usize]] += 1.0;
            total += 1.0;
        }
        t / total
    }

    pub fn archetype_of(&self, track_id: &str) -> Option<u32> {
        self.tracks
            .iter()
            .find(|t| t.track_id == track_id)
            .and_then(|t| t.frames.first())
            .map(|f| f.archetype)
    }
}

pub const TRUTH_HEADER: &str = "# track_id,t,archetype,l_size,l_speed,l_direction,l_position";

pub fn write_ground_truth<W: Write>(labels: &GroundTruthLabels, mut out: W) -> Result<()> {
    writeln!(out, "{TRUTH_HEADER}")?;
    for track in &labels.tracks {
        for f in &track.frames {
            let [s, v, d, p] = f.classes;
            writeln!(out, "{},{},{},{s},{v},{d},{p}", track.track_id, f.t, f.archetype)?;
        }
    }
    Ok(())
}

pub fn parse_ground_truth<R: BufRead>(reader: R) -> Result<GroundTruthLabels> {
    let mut tracks: Vec<TrackLabels> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let bad = |message: String| FlaError::Parse {
            line: idx + 1,
            message,
        };
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() != 7 {
            return Err(bad(format!("expected 7 fields, found {}", fields.len())));
        }
        let t: i64 = fields[1]
            .parse()
            .map_err(|_| bad(format!("bad time `{}`", fields[1])))?;
        let mut ints = [0u32; 5];
        for (k, v) in fields[2..].iter().enumerate() {
            ints[k] = v.parse().map_err(|_| bad(format!("bad label `{v}`")))?;
        }
        let label = FrameLabel {
            t,
            archetype: ints[0],
            classes: [ints[1], ints[2], ints[3], ints[4]],
        };
        match tracks.iter_mut().rev().find(|tl| tl.track_id == fields[0]) {
            Some(tl) => tl.frames.push(label),
            None => tracks.push(TrackLabels {
                track_id: fields[0].to_string(),
                frames: vec![label],
            }),
        }
    }
    for t in &mut tracks {
        t.frames.sort_by_key(|f| f.t);
    }
    Ok(GroundTruthLabels { tracks })
}

fn dedupe<T: PartialEq + Copy>(items: impl Iterator<Item = T>) -> (Vec<T>, Vec<u32>) {
    let mut distinct: Vec<T> = Vec::new();
    let mut ids = Vec::new();
    for item in items {
        let id = match distinct.iter().position(|d| *d == item) {
            Some(p) => p,
            None => {
                distinct.push(item);
                distinct.len() - 1
            }
        };
        ids.push(id as u32);
    }
    (distinct, ids)
}

/// Distinct planted emission parameters of one feature.
#[derive(Debug, Clone, PartialEq)]
pub enum PlantedClasses {
    Scalar(Vec<Gaussian>),
    Regions(Vec<Region>),
}

impl PlantedClasses {
    pub fn len(&self) -> usize {
        match self {
            PlantedClasses::Scalar(v) => v.len(),
            PlantedClasses::Regions(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FlaError::Invalid(m));
        if self.archetypes.is_empty() {
            return bad("scene needs at least one archetype".into());
        }
        if self.track_count == 0 {
            return bad("track_count must be at least 1".into());
        }
        if self.mean_track_length == 0 {
            return bad("mean_track_length must be at least 1".into());
        }
        if !(self.position_step >= 0.0 && self.position_step.is_finite()) {
            return bad(format!("bad position_step {}", self.position_step));
        }
        let total: f64 = self.archetypes.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("archetype weights sum to {total}, expected 1"));
        }
        for (n, a) in self.archetypes.iter().enumerate() {
            if !(a.weight > 0.0) {
                return bad(format!("archetype {n}: weight must be positive"));
            }
            for (name, g) in [("size", a.size), ("speed", a.speed), ("direction", a.direction)] {
                if !(g.stddev > 0.0 && g.stddev.is_finite() && g.mean.is_finite()) {
                    return bad(format!("archetype {n}: {name} stddev must be positive"));
                }
            }
            if a.size.mean < 0.0 || a.speed.mean < 0.0 {
                return bad(format!("archetype {n}: size and speed means must be nonnegative"));
            }
            let r = a.region;
            if !(0.0 <= r.x0 && r.x0 < r.x1 && r.x1 <= 1.0 && 0.0 <= r.y0 && r.y0 < r.y1 && r.y1 <= 1.0) {
                return bad(format!("archetype {n}: region {r:?} not inside the unit square"));
            }
        }
        Ok(())
    }

    /// Planted class id of every archetype for each feature.
    pub fn archetype_classes(&self) -> Vec<[u32; 4]> {
        let (_, s) = dedupe(self.archetypes.iter().map(|a| a.size));
        let (_, v) = dedupe(self.archetypes.iter().map(|a| a.speed));
        let (_, d) = dedupe(self.archetypes.iter().map(|a| a.direction));
        let (_, p) = dedupe(self.archetypes.iter().map(|a| a.region));
        (0..self.archetypes.len())
            .map(|n| [s[n], v[n], d[n], p[n]])
            .collect()
    }

    pub fn planted_classes(&self, feature: Feature) -> PlantedClasses {
        let arch = &self.archetypes;
        match feature {
            Feature::Size => PlantedClasses::Scalar(dedupe(arch.iter().map(|a| a.size)).0),
            Feature::Speed => PlantedClasses::Scalar(dedupe(arch.iter().map(|a| a.speed)).0),
            Feature::Direction => {
                PlantedClasses::Scalar(dedupe(arch.iter().map(|a| a.direction)).0)
            }
            Feature::Position => PlantedClasses::Regions(dedupe(arch.iter().map(|a| a.region)).0),
        }
    }

    pub fn class_counts(&self) -> [usize; 4] {
        Feature::ALL.map(|f| self.planted_classes(f).len())
    }

    /// Exact symbol distribution of every planted class under a quantizer,
    /// one `classes × alphabet` table per feature.
    pub fn planted_conditionals(&self, quantizers: &QuantizerSet) -> Vec<Array2<f64>> {
        Feature::ALL
            .iter()
            .map(|&f| {
                let spec = quantizers.spec(f);
                match (self.planted_classes(f), &spec.kind) {
                    (PlantedClasses::Scalar(gs), BinKind::ScalarUniform { bins, lower, upper }) => {
                        let edges = clamped_edges(*bins, *lower, *upper);
                        let mut t = Array2::zeros((gs.len(), *bins));
                        for (c, g) in gs.iter().enumerate() {
                            for k in 0..*bins {
                                let (a, b) = (edges[k], edges[k + 1]);
                                t[[c, k]] = if f == Feature::Direction {
                                    wrapped_mass(*g, a.max(0.0), b.min(TAU))
                                } else {
                                    folded_mass(*g, a.max(0.0), b)
                                };
                            }
                        }
                        crate::tables::normalize_rows(&mut t);
                        t
                    }
                    (
                        PlantedClasses::Regions(rs),
                        BinKind::Grid2d {
                            bins_x,
                            bins_y,
                            lower,
                            upper,
                        },
                    ) => {
                        let ex = clamped_edges(*bins_x, lower[0], upper[0]);
                        let ey = clamped_edges(*bins_y, lower[1], upper[1]);
                        let mut t = Array2::zeros((rs.len(), bins_x * bins_y));
                        for (c, r) in rs.iter().enumerate() {
                            for iy in 0..*bins_y {
                                let my = overlap(r.y0, r.y1, ey[iy], ey[iy + 1]) / (r.y1 - r.y0);
                                for ix in 0..*bins_x {
                                    let mx =
                                        overlap(r.x0, r.x1, ex[ix], ex[ix + 1]) / (r.x1 - r.x0);
                                    t[[c, iy * bins_x + ix]] = mx * my;
                                }
                            }
                        }
                        crate::tables::normalize_rows(&mut t);
                        t
                    }
                    _ => unreachable!("quantizer kind always matches feature"),
                }
            })
            .collect()
    }

    /// Road scene: pedestrians walk or loiter along sidewalks, vehicles
    /// drive north or south on the road. Two size classes, three speed
    /// classes (stopped, walking, driving), six headings, eight regions.
    /// Archetype 2 is the only stopped one.
    pub fn demo_road(seed: u64) -> SceneSpec {
        use std::f64::consts::PI;
        let heading = |k: f64| Gaussian::new((k + 0.5) * PI / 3.0, 0.12);
        let ped = Gaussian::new(0.2, 0.02);
        let veh = Gaussian::new(0.7, 0.04);
        let stopped = Gaussian::new(0.03, 0.01);
        let walk = Gaussian::new(0.3, 0.03);
        let drive = Gaussian::new(0.8, 0.04);
        let cell = |col: usize, row: usize| {
            let (x0, y0) = (col as f64 * 0.25, row as f64 * 0.5);
            Region::new(x0 + 0.02, y0 + 0.02, x0 + 0.23, y0 + 0.48)
        };
        let arch = |weight, size, speed, dir: f64, region| Archetype {
            weight,
            size,
            speed,
            direction: heading(dir),
            region,
        };
        SceneSpec {
            archetypes: vec![
                arch(0.15, ped, walk, 0.0, cell(0, 0)),
                arch(0.12, ped, walk, 1.0, cell(0, 1)),
                arch(0.10, ped, stopped, 2.0, cell(1, 0)),
                arch(0.15, veh, drive, 3.0, cell(1, 1)),
                arch(0.13, veh, drive, 4.0, cell(2, 0)),
                arch(0.10, ped, walk, 5.0, cell(2, 1)),
                arch(0.13, veh, drive, 0.0, cell(3, 0)),
                arch(0.12, ped, walk, 3.0, cell(3, 1)),
            ],
            track_count: 240,
            mean_track_length: 640,
            seed,
            position_step: 0.5,
        }
    }
}

fn phi(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / SQRT_2)
}

/// Bin edges where the outer edges extend to ±∞ (out-of-range clamps).
fn clamped_edges(bins: usize, lower: f64, upper: f64) -> Vec<f64> {
    let w = upper - lower;
    (0..=bins)
        .map(|k| {
            if k == 0 {
                f64::NEG_INFINITY
            } else if k == bins {
                f64::INFINITY
            } else {
                lower + w * k as f64 / bins as f64
            }
        })
        .collect()
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// `P(|X| ∈ [a, b))` for `X ~ N(μ, σ)`, `0 <= a`.
fn folded_mass(g: Gaussian, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let z = |x: f64| (x - g.mean) / g.stddev;
    (phi(z(b)) - phi(z(a))) + (phi(z(-a)) - phi(z(-b)))
}

/// `P(X mod 2π ∈ [a, b))` for `X ~ N(μ, σ)`, `0 <= a < b <= 2π`.
fn wrapped_mass(g: Gaussian, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let wraps = (6.0 * g.stddev / TAU).ceil() as i64 + 1;
    (-wraps..=wraps)
        .map(|k| {
            let shift = k as f64 * TAU;
            phi((b + shift - g.mean) / g.stddev) - phi((a + shift - g.mean) / g.stddev)
        })
        .sum()
}

/// Folds `x` into `[lo, hi]` by repeated reflection at the boundaries.
fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let w = hi - lo;
    let period = 2.0 * w;
    let mut y = (x - lo).rem_euclid(period);
    if y > w {
        y = period - y;
    }
    (lo + y).clamp(lo, hi)
}

fn wrap_angle(x: f64) -> f64 {
    let y = x.rem_euclid(TAU);
    if y >= TAU {
        0.0
    } else {
        y
    }
}

fn sample_archetype(rng: &mut ChaCha8Rng, archetypes: &[Archetype]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (n, a) in archetypes.iter().enumerate() {
        acc += a.weight;
        if u < acc {
            return n;
        }
    }
    archetypes.len() - 1
}

/// Deterministic in `spec` (seed included).
pub fn generate_scene(spec: &SceneSpec) -> Result<(TrackSet, GroundTruthLabels)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let classes = spec.archetype_classes();
    let lo_len = ((spec.mean_track_length as f64) * 0.75).ceil().max(1.0) as usize;
    let hi_len = ((spec.mean_track_length as f64) * 1.25).floor().max(lo_len as f64) as usize;
    let width = (spec.track_count.max(1) as f64).log10().floor() as usize + 1;

    let mut tracks = Vec::with_capacity(spec.track_count);
    let mut labels = Vec::with_capacity(spec.track_count);
    for n in 0..spec.track_count {
        let which = sample_archetype(&mut rng, &spec.archetypes);
        let a = spec.archetypes[which];
        let len = rng.random_range(lo_len..=hi_len);
        let r = a.region;
        let (sx, sy) = (
            spec.position_step * (r.x1 - r.x0),
            spec.position_step * (r.y1 - r.y0),
        );
        let mut pos = [rng.random_range(r.x0..=r.x1), rng.random_range(r.y0..=r.y1)];
        let track_id = format!("t{n:0width$}");
        let mut observations = Vec::with_capacity(len);
        let mut frames = Vec::with_capacity(len);
        for f in 0..len {
            let mut z = || std_normal.sample(&mut rng);
            if f > 0 {
                pos[0] = reflect(pos[0] + sx * z(), r.x0, r.x1);
                pos[1] = reflect(pos[1] + sy * z(), r.y0, r.y1);
            }
            let size = (a.size.mean + a.size.stddev * z()).abs();
            let speed = (a.speed.mean + a.speed.stddev * z()).abs();
            let direction = wrap_angle(a.direction.mean + a.direction.stddev * z());
            observations.push(ObservationVector {
                t: f as i64,
                size,
                speed,
                direction,
                position: pos,
            });
            frames.push(FrameLabel {
                t: f as i64,
                archetype: which as u32,
                classes: classes[which],
            });
        }
        tracks.push(Track {
            track_id: track_id.clone(),
            observations,
        });
        labels.push(TrackLabels { track_id, frames });
    }
    Ok((TrackSet::new(tracks)?, GroundTruthLabels { tracks: labels }))
}

/// Replaces each observation, independently with probability `rate`, by
/// uniform draws: size and speed on `[0, magnitude]`, direction on
/// `[0, 2π)`, position on the unit square. Returns the perturbed set and
/// the number of perturbed observations.
pub fn inject_glitches(
    tracks: &TrackSet,
    rate: f64,
    magnitude: f64,
    seed: u64,
) -> Result<(TrackSet, usize)> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(FlaError::Invalid(format!("glitch rate {rate} outside [0, 1]")));
    }
    if !(magnitude > 0.0 && magnitude.is_finite()) {
        return Err(FlaError::Invalid(format!("glitch magnitude {magnitude} must be positive")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = tracks.clone();
    let mut count = 0;
    for o in out.tracks.iter_mut().flat_map(|t| t.observations.iter_mut()) {
        let hit = rng.random::<f64>() < rate;
        // always draw so the stream does not depend on earlier outcomes
        let draws: [f64; 5] = [
            rng.random_range(0.0..=magnitude),
            rng.random_range(0.0..=magnitude),
            rng.random_range(0.0..TAU),
            rng.random_range(0.0..=1.0),
            rng.random_range(0.0..=1.0),
        ];
        if hit {
            o.size = draws[0];
            o.speed = draws[1];
            o.direction = draws[2];
            o.position = [draws[3], draws[4]];
            count += 1;
        }
    }
    Ok((out, count))
}
