//! Per-frame classification, temporal smoothing and segmentation.
//!
//! Each feature is classified on its own from `p̃(lᵢ) p̃(x̂ᵢ|lᵢ)`. Posteriors
//! are then averaged over the same Gaussian window used for the
//! co-occurrence statistics, and tracks are cut into runs of constant label
//! tuples.

use std::io::{BufRead, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::cooccur::WindowSpec;
use crate::error::{FlaError, Result};
use crate::model::FlaModel;
use crate::quantize::SymbolSequences;

#[derive(Debug, Clone, PartialEq)]
pub struct TrackPosteriors {
    pub track_id: String,
    pub times: Vec<i64>,
    /// One `frames × kᵢ` table per feature; rows sum to 1.
    pub features: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSequence {
    pub class_counts: Vec<usize>,
    pub tracks: Vec<TrackPosteriors>,
}

/// `p(lᵢ | x̂ᵢ(t)) ∝ p̃(lᵢ) p̃(x̂ᵢ(t) | lᵢ)` for every frame and feature. A
/// symbol no class can emit falls back to the prior.
pub fn instantaneous_posteriors(
    model: &FlaModel,
    sequences: &SymbolSequences,
) -> Result<PosteriorSequence> {
    if sequences.alphabet_sizes != model.alphabets {
        return Err(FlaError::Shape(format!(
            "symbol alphabets {:?} do not match model alphabets {:?}",
            sequences.alphabet_sizes, model.alphabets
        )));
    }
    sequences.validate()?;
    let priors = model.type_marginals();
    let tracks = sequences
        .tracks
        .iter()
        .map(|track| {
            let features = (0..model.features())
                .map(|f| {
                    let k = model.class_counts[f];
                    let cond = &model.conditionals[f];
                    let mut post = Array2::zeros((track.len(), k));
                    for t in 0..track.len() {
                        let a = track.frame(t)[f] as usize;
                        let mut row: Vec<f64> = (0..k).map(|l| priors[f][l] * cond[[l, a]]).collect();
                        let mut total: f64 = row.iter().sum();
                        if !(total > 0.0) {
                            row = priors[f].clone();
                            total = row.iter().sum();
                        }
                        for l in 0..k {
                            post[[t, l]] = row[l] / total;
                        }
                    }
                    post
                })
                .collect();
            TrackPosteriors {
                track_id: track.track_id.clone(),
                times: track.times.clone(),
                features,
            }
        })
        .collect();
    Ok(PosteriorSequence {
        class_counts: model.class_counts.clone(),
        tracks,
    })
}

/// Mask-weighted average of the posteriors in each frame's window,
/// truncated at the track ends.
pub fn smooth_posteriors(posteriors: &PosteriorSequence, window: &WindowSpec) -> Result<PosteriorSequence> {
    window.validate()?;
    let tracks = posteriors
        .tracks
        .iter()
        .map(|track| {
            let n = track.times.len();
            let members: Vec<Vec<(usize, f64)>> =
                (0..n).map(|t| window.members(&track.times, t)).collect();
            let features = track
                .features
                .iter()
                .map(|post| {
                    let mut out = Array2::zeros(post.dim());
                    for (t, m) in members.iter().enumerate() {
                        let mut row = out.row_mut(t);
                        for &(s, w) in m {
                            row.scaled_add(w, &post.row(s));
                        }
                        let total = row.sum();
                        row /= total;
                    }
                    out
                })
                .collect();
            TrackPosteriors {
                track_id: track.track_id.clone(),
                times: track.times.clone(),
                features,
            }
        })
        .collect();
    Ok(PosteriorSequence {
        class_counts: posteriors.class_counts.clone(),
        tracks,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackLabeling {
    pub track_id: String,
    pub times: Vec<i64>,
    /// Label tuple per frame.
    pub labels: Vec<Vec<u32>>,
    /// Posterior mass of the chosen label, per frame and feature.
    pub confidence: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelSequences {
    pub tracks: Vec<TrackLabeling>,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

pub fn label(posteriors: &PosteriorSequence) -> LabelSequences {
    let tracks = posteriors
        .tracks
        .iter()
        .map(|track| {
            let n = track.times.len();
            let mut labels = vec![Vec::with_capacity(track.features.len()); n];
            let mut confidence = vec![Vec::with_capacity(track.features.len()); n];
            for post in &track.features {
                for t in 0..n {
                    let row = post.row(t);
                    let l = argmax(row.iter().copied());
                    labels[t].push(l as u32);
                    confidence[t].push(row[l]);
                }
            }
            TrackLabeling {
                track_id: track.track_id.clone(),
                times: track.times.clone(),
                labels,
                confidence,
            }
        })
        .collect();
    LabelSequences { tracks }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub track_id: String,
    /// First and last frame time, inclusive.
    pub start: i64,
    pub end: i64,
    pub labels: Vec<u32>,
    /// Mean posterior of the segment label per feature; empty when read
    /// back from a segments file.
    pub confidence: Vec<f64>,
}

impl Segment {
    /// Extent in frames, `end - start + 1`.
    pub fn frames(&self) -> i64 {
        self.end - self.start + 1
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentSet {
    /// Grouped by track in input order, time-ordered within a track.
    pub segments: Vec<Segment>,
}

impl SegmentSet {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Segments of each track, in first-occurrence order of track ids.
    pub fn by_track(&self) -> Vec<(&str, Vec<&Segment>)> {
        let mut out: Vec<(&str, Vec<&Segment>)> = Vec::new();
        for s in &self.segments {
            match out.iter_mut().rev().find(|(id, _)| *id == s.track_id) {
                Some((_, v)) => v.push(s),
                None => out.push((&s.track_id, vec![s])),
            }
        }
        out
    }

    /// Label tuple at every listed time of a track.
    pub fn expand(&self, track_id: &str, times: &[i64]) -> Option<Vec<Vec<u32>>> {
        let segs: Vec<&Segment> = self.segments.iter().filter(|s| s.track_id == track_id).collect();
        times
            .iter()
            .map(|&t| {
                segs.iter()
                    .find(|s| s.start <= t && t <= s.end)
                    .map(|s| s.labels.clone())
            })
            .collect()
    }
}

/// Maximal runs of identical label tuples per track.
pub fn segment(labels: &LabelSequences) -> SegmentSet {
    let mut segments = Vec::new();
    for track in &labels.tracks {
        let n = track.labels.len();
        let mut start = 0;
        while start < n {
            let mut end = start;
            while end + 1 < n && track.labels[end + 1] == track.labels[start] {
                end += 1;
            }
            let k = track.labels[start].len();
            let confidence = (0..k)
                .map(|f| {
                    (start..=end)
                        .map(|t| track.confidence.get(t).and_then(|c| c.get(f)).copied().unwrap_or(f64::NAN))
                        .sum::<f64>()
                        / (end - start + 1) as f64
                })
                .collect();
            segments.push(Segment {
                track_id: track.track_id.clone(),
                start: track.times[start],
                end: track.times[end],
                labels: track.labels[start].clone(),
                confidence,
            });
            start = end + 1;
        }
    }
    SegmentSet { segments }
}

pub const SEGMENT_HEADER: &str = "# track_id,start_t,end_t,l_size,l_speed,l_direction,l_position";

pub fn write_segments<W: Write>(segments: &SegmentSet, mut out: W) -> Result<()> {
    writeln!(out, "{SEGMENT_HEADER}")?;
    for s in &segments.segments {
        write!(out, "{},{},{}", s.track_id, s.start, s.end)?;
        for l in &s.labels {
            write!(out, ",{l}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn parse_segments<R: BufRead>(reader: R) -> Result<SegmentSet> {
    let mut segments = Vec::new();
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
        if fields[0].is_empty() {
            return Err(bad("empty track_id".into()));
        }
        let int = |s: &str| s.parse::<i64>().map_err(|_| bad(format!("bad integer `{s}`")));
        let (start, end) = (int(fields[1])?, int(fields[2])?);
        if start > end {
            return Err(bad(format!("start {start} after end {end}")));
        }
        let labels = fields[3..]
            .iter()
            .map(|s| s.parse::<u32>().map_err(|_| bad(format!("bad label `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        segments.push(Segment {
            track_id: fields[0].to_string(),
            start,
            end,
            labels,
            confidence: Vec::new(),
        });
    }
    Ok(SegmentSet { segments })
}

/// Instantaneous posteriors, optionally smoothed, labeled and segmented.
pub fn classify(
    model: &FlaModel,
    sequences: &SymbolSequences,
    window: Option<&WindowSpec>,
) -> Result<(LabelSequences, SegmentSet)> {
    let mut post = instantaneous_posteriors(model, sequences)?;
    if let Some(w) = window {
        post = smooth_posteriors(&post, w)?;
    }
    let labels = label(&post);
    let segments = segment(&labels);
    Ok((labels, segments))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantize::SymbolTrack;
    use ndarray::array;

    fn one_feature_model(cond: Array2<f64>, prior: Array2<f64>) -> FlaModel {
        let (k, n) = cond.dim();
        FlaModel {
            class_counts: vec![k],
            alphabets: vec![n],
            conditionals: vec![cond],
            mixing: vec![prior],
        }
    }

    fn sequence(symbols: &[u32], alphabet: usize) -> SymbolSequences {
        SymbolSequences {
            alphabet_sizes: vec![alphabet],
            tracks: vec![SymbolTrack::new(
                "a",
                (0..symbols.len() as i64).collect(),
                symbols.iter().map(|&s| vec![s]).collect(),
            )],
        }
    }

    fn posteriors_of(rows: Vec<Vec<f64>>) -> PosteriorSequence {
        let k = rows[0].len();
        let n = rows.len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        PosteriorSequence {
            class_counts: vec![k],
            tracks: vec![TrackPosteriors {
                track_id: "a".into(),
                times: (0..n as i64).collect(),
                features: vec![Array2::from_shape_vec((n, k), flat).unwrap()],
            }],
        }
    }

    #[test]
    fn single_class_posterior_is_certain() {
        let m = one_feature_model(array![[0.2, 0.3, 0.5]], array![[1.0]]);
        let p = instantaneous_posteriors(&m, &sequence(&[0, 2, 1], 3)).unwrap();
        assert!(p.tracks[0].features[0].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn disjoint_support_and_hand_bayes() {
        let m = one_feature_model(
            array![[0.5, 0.5, 0.0], [0.0, 0.4, 0.6]],
            array![[0.3, 0.0], [0.0, 0.7]],
        );
        let p = instantaneous_posteriors(&m, &sequence(&[0, 2, 1], 3)).unwrap();
        let post = &p.tracks[0].features[0];
        assert_eq!(post.row(0).to_vec(), vec![1.0, 0.0]);
        assert_eq!(post.row(1).to_vec(), vec![0.0, 1.0]);
        let z = 0.3 * 0.5 + 0.7 * 0.4;
        assert!((post[[2, 0]] - 0.3 * 0.5 / z).abs() < 1e-15);
        assert!((post[[2, 1]] - 0.7 * 0.4 / z).abs() < 1e-15);
    }

    #[test]
    fn unexplained_symbol_falls_back_to_prior() {
        let m = one_feature_model(array![[1.0, 0.0], [1.0, 0.0]], array![[0.25, 0.0], [0.0, 0.75]]);
        let p = instantaneous_posteriors(&m, &sequence(&[1], 2)).unwrap();
        assert_eq!(p.tracks[0].features[0].row(0).to_vec(), vec![0.25, 0.75]);
    }

    #[test]
    fn smoothing_fixed_points() {
        let p = posteriors_of(vec![vec![0.2, 0.8]; 10]);
        let s = smooth_posteriors(&p, &WindowSpec::default()).unwrap();
        for (a, b) in s.tracks[0].features[0].iter().zip(p.tracks[0].features[0].iter()) {
            assert!((a - b).abs() < 1e-15);
        }
        let q = posteriors_of(vec![vec![0.2, 0.8], vec![0.9, 0.1], vec![0.5, 0.5]]);
        let w0 = WindowSpec {
            half_width: 0,
            ..WindowSpec::default()
        };
        assert_eq!(smooth_posteriors(&q, &w0).unwrap(), q);
    }

    #[test]
    fn smoothing_suppresses_a_single_glitch() {
        let mut rows = vec![vec![0.8, 0.2]; 15];
        rows[7] = vec![0.1, 0.9];
        let p = posteriors_of(rows);
        let spec = WindowSpec {
            half_width: 7,
            sigma: 2.0,
            ..WindowSpec::default()
        };
        let s = smooth_posteriors(&p, &spec).unwrap();
        let row = s.tracks[0].features[0].row(7);
        // direct evaluation: Σm·p / Σm over the full 15-frame window
        let masses: Vec<f64> = (-7i64..=7).map(|dt| spec.mask(dt)).collect();
        let total: f64 = masses.iter().sum();
        let glitch = spec.mask(0);
        let expect0 = ((total - glitch) * 0.8 + glitch * 0.1) / total;
        assert!((row[0] - expect0).abs() < 1e-12);
        assert_eq!(label(&s).tracks[0].labels[7], vec![0]);
        assert_eq!(label(&p).tracks[0].labels[7], vec![1]);
        for r in s.tracks[0].features[0].rows() {
            assert!((r.sum() - 1.0).abs() < 1e-12 && r.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn labels_break_ties_low() {
        let p = posteriors_of(vec![vec![0.7, 0.3], vec![0.5, 0.5], vec![0.2, 0.8]]);
        let l = label(&p);
        assert_eq!(l.tracks[0].labels, vec![vec![0], vec![0], vec![1]]);
        assert_eq!(argmax([0.2, 0.4, 0.4]), 1);
    }

    fn labeling(labels: &[u32]) -> LabelSequences {
        LabelSequences {
            tracks: vec![TrackLabeling {
                track_id: "a".into(),
                times: (0..labels.len() as i64).collect(),
                labels: labels.iter().map(|&l| vec![l]).collect(),
                confidence: vec![vec![1.0]; labels.len()],
            }],
        }
    }

    #[test]
    fn segments_are_maximal_runs() {
        let s = segment(&labeling(&[0; 20]));
        assert_eq!(s.len(), 1);
        assert_eq!((s.segments[0].start, s.segments[0].end), (0, 19));
        let s = segment(&labeling(&[4, 4, 7, 7, 7]));
        let spans: Vec<_> = s.segments.iter().map(|g| (g.start, g.end, g.labels[0])).collect();
        assert_eq!(spans, vec![(0, 1, 4), (2, 4, 7)]);
        assert_eq!(s.segments[0].confidence, vec![1.0]);
    }

    #[test]
    fn segments_expand_and_round_trip_through_file() {
        let l = labeling(&[1, 1, 0, 2, 2, 2, 1]);
        let s = segment(&l);
        let times = &l.tracks[0].times;
        assert_eq!(s.expand("a", times).unwrap(), l.tracks[0].labels);
        let mut buf = Vec::new();
        let four = SegmentSet {
            segments: s
                .segments
                .iter()
                .map(|g| Segment {
                    labels: vec![g.labels[0], 0, 1, 2],
                    confidence: Vec::new(),
                    ..g.clone()
                })
                .collect(),
        };
        write_segments(&four, &mut buf).unwrap();
        assert_eq!(parse_segments(buf.as_slice()).unwrap(), four);
        assert!(parse_segments("a,3,1,0,0,0,0\n".as_bytes()).is_err());
    }
}
