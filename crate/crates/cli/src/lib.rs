//! `fla` command-line front end.

pub mod manifest;
pub mod pipeline;

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fla_core::classify::{parse_segments, write_segments};
use fla_core::export::{grid_text, pgm_bytes, tables_for, ExportTarget};
use fla_core::synth::write_ground_truth;
use fla_core::track::{parse_track_records, write_track_records};
use fla_core::{
    generate_scene, inject_glitches, parse_query, query, BinConfig, FlaError, ModelFile, QueryContext,
    SceneSpec, SegmentSet, TrackSet,
};

use crate::manifest::{manifest_path_for, write_atomic, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "fla", version, about = "Factored latent analysis of object tracks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a scene: track file, ground-truth labels, scene spec.
    Gen(GenArgs),
    /// Quantize, accumulate co-occurrences and fit a model.
    Fit(FitArgs),
    /// Label tracks with a fitted model and write segments.
    Classify(ClassifyArgs),
    /// Evaluate a predicate over a segments file.
    Query(QueryArgs),
    /// Write model and empirical tables as PGM images and CSV grids.
    Export(ExportArgs),
    /// Fit the pairwise and full-joint estimators on identical windows.
    CompareOracle(CompareArgs),
}

/// Configuration flags shared by the subcommands. Each one overrides the
/// loaded manifest.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Replay configuration and inputs from a manifest file.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Class counts, e.g. `2,3,6,8`.
    #[arg(long)]
    pub classes: Option<String>,
    /// Bin counts, e.g. `64,64,64,16x16`.
    #[arg(long)]
    pub bins: Option<String>,
    #[arg(long)]
    pub window_seconds: Option<f64>,
    #[arg(long)]
    pub frame_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Scene spec JSON file, or `demo` for the bundled road scene.
    #[arg(long)]
    pub scene: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub glitch_rate: Option<f64>,
    #[arg(long)]
    pub glitch_seed: Option<u64>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    pub tracks: Option<PathBuf>,
    /// Model file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    pub tracks: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Segments file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Label each frame from its own posterior.
    #[arg(long)]
    pub no_smooth: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    pub segments: Option<PathBuf>,
    pub predicate: Option<String>,
    /// Model file supplying class counts, class names and frame rate.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Write matches here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Comma-separated targets or `all`.
    #[arg(long)]
    pub what: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub tracks: Option<PathBuf>,
    /// Feature subset, e.g. `size,speed`.
    #[arg(long)]
    pub features: Option<String>,
    /// Also write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

fn parse_counts(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| FlaError::Invalid(format!("bad class count `{p}` in `{s}`")).into())
        })
        .collect()
}

impl ConfigArgs {
    /// Loads the manifest (or a fresh one) and applies the flags.
    fn resolve(&self, command: &str) -> Result<RunManifest> {
        let mut m = match &self.manifest {
            Some(p) => {
                let m = RunManifest::load(p)?;
                if m.command != command {
                    bail!(FlaError::Invalid(format!(
                        "manifest {} is for `{}`, not `{command}`",
                        p.display(),
                        m.command
                    )));
                }
                m
            }
            None => RunManifest::new(command),
        };
        m.tool_version = env!("CARGO_PKG_VERSION").to_string();
        let c = &mut m.config;
        if let Some(s) = &self.classes {
            c.classes = parse_counts(s)?;
        }
        if let Some(s) = &self.bins {
            c.bins = s.parse::<BinConfig>()?;
        }
        if let Some(v) = self.window_seconds {
            c.window_seconds = v;
        }
        if let Some(v) = self.frame_rate {
            c.frame_rate = v;
        }
        if let Some(v) = self.seed {
            c.fit.seed = v;
        }
        if let Some(v) = self.tol {
            c.fit.tolerance = v;
        }
        if let Some(v) = self.max_iters {
            c.fit.max_iters = v;
        }
        if let Some(v) = self.restarts {
            c.fit.restarts = v;
        }
        c.fit.validate()?;
        Ok(m)
    }
}

fn required<T: Clone>(flag: Option<&T>, saved: Option<&T>, what: &str) -> Result<T> {
    flag.or(saved)
        .cloned()
        .ok_or_else(|| FlaError::Invalid(format!("missing {what}")).into())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

pub fn read_tracks(path: &Path) -> Result<TrackSet> {
    let f = fs::File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_track_records(BufReader::new(f)).with_context(|| format!("in {}", path.display()))
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    ModelFile::from_json(&read_text(path)?).with_context(|| format!("in {}", path.display()))
}

pub fn read_segments(path: &Path) -> Result<SegmentSet> {
    let f = fs::File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_segments(BufReader::new(f)).with_context(|| format!("in {}", path.display()))
}

fn write_manifest(m: &RunManifest, output: &Path, is_dir: bool) -> Result<()> {
    write_atomic(&manifest_path_for(output, is_dir), m.to_json()?.as_bytes())
}

fn run_gen(a: &GenArgs) -> Result<()> {
    let mut m = a.config.resolve("gen")?;
    if let Some(s) = &a.scene {
        m.inputs.scene = Some(s.clone());
    }
    if let Some(v) = a.glitch_rate {
        m.config.glitch_rate = v;
    }
    if let Some(v) = a.glitch_seed {
        m.config.glitch_seed = v;
    }
    if let Some(v) = a.config.seed {
        m.config.scene_seed = Some(v);
    }
    let out = required(a.out.as_ref(), m.output.as_ref(), "--out directory")?;
    m.output = Some(out.clone());
    let scene = required(None, m.inputs.scene.as_ref(), "--scene")?;
    let mut spec = if scene == "demo" {
        SceneSpec::demo_road(m.config.scene_seed.unwrap_or(0))
    } else {
        let text = read_text(Path::new(&scene))?;
        serde_json::from_str::<SceneSpec>(&text)
            .map_err(FlaError::from)
            .with_context(|| format!("in {scene}"))?
    };
    if let Some(seed) = m.config.scene_seed {
        spec.seed = seed;
    }
    let (tracks, truth) = generate_scene(&spec)?;
    let tracks = if m.config.glitch_rate > 0.0 {
        inject_glitches(&tracks, m.config.glitch_rate, 1.0, m.config.glitch_seed)?.0
    } else {
        tracks
    };
    let mut track_bytes = Vec::new();
    write_track_records(&tracks, &mut track_bytes)?;
    let mut truth_bytes = Vec::new();
    write_ground_truth(&truth, &mut truth_bytes)?;
    let mut spec_text = serde_json::to_string_pretty(&spec).map_err(FlaError::from)?;
    spec_text.push('\n');
    write_atomic(&out.join("tracks.csv"), &track_bytes)?;
    write_atomic(&out.join("truth.csv"), &truth_bytes)?;
    write_atomic(&out.join("scene.json"), spec_text.as_bytes())?;
    write_manifest(&m, &out, true)?;
    println!("{} tracks, {} observations -> {}", tracks.tracks.len(), tracks.observation_count(), out.display());
    Ok(())
}

fn run_fit(a: &FitArgs) -> Result<()> {
    let mut m = a.config.resolve("fit")?;
    let tracks_path = required(a.tracks.as_ref(), m.inputs.tracks.as_ref(), "tracks file")?;
    let out = required(a.out.as_ref(), m.output.as_ref(), "--out model file")?;
    m.inputs.tracks = Some(tracks_path.clone());
    m.output = Some(out.clone());
    let tracks = read_tracks(&tracks_path)?;
    let file = pipeline::fit_tracks(&tracks, &m.config)?;
    write_atomic(&out, file.to_json()?.as_bytes())?;
    write_manifest(&m, &out, false)?;
    println!(
        "objective {:.9} after {} iterations (converged: {}) -> {}",
        file.fit.final_objective,
        file.fit.iterations,
        file.fit.converged,
        out.display()
    );
    Ok(())
}

fn run_classify(a: &ClassifyArgs) -> Result<()> {
    let mut m = a.config.resolve("classify")?;
    let tracks_path = required(a.tracks.as_ref(), m.inputs.tracks.as_ref(), "tracks file")?;
    let model_path = required(a.model.as_ref(), m.inputs.model.as_ref(), "--model")?;
    let out = required(a.out.as_ref(), m.output.as_ref(), "--out segments file")?;
    if a.no_smooth {
        m.config.smooth = false;
    }
    m.inputs.tracks = Some(tracks_path.clone());
    m.inputs.model = Some(model_path.clone());
    m.output = Some(out.clone());
    let tracks = read_tracks(&tracks_path)?;
    let file = read_model(&model_path)?;
    let (_, segments) = pipeline::classify_tracks(&tracks, &file, m.config.smooth)?;
    let mut bytes = Vec::new();
    write_segments(&segments, &mut bytes)?;
    write_atomic(&out, &bytes)?;
    write_manifest(&m, &out, false)?;
    println!("{} segments -> {}", segments.len(), out.display());
    Ok(())
}

/// Class counts implied by the labels present, when no model is given.
fn context_from_segments(segments: &SegmentSet) -> QueryContext {
    let features = segments.segments.iter().map(|s| s.labels.len()).max().unwrap_or(0);
    let mut counts = vec![1usize; features];
    for s in &segments.segments {
        for (f, &l) in s.labels.iter().enumerate() {
            counts[f] = counts[f].max(l as usize + 1);
        }
    }
    QueryContext::new(counts)
}

/// One line per matching track: id, then `start-end` per witness.
pub fn format_matches(matches: &[fla_core::QueryMatch]) -> String {
    let mut s = String::new();
    for m in matches {
        s.push_str(&m.track_id);
        for w in &m.witnesses {
            s.push_str(&format!("\t{}-{}", w.start, w.end));
        }
        s.push('\n');
    }
    s
}

fn run_query(a: &QueryArgs) -> Result<()> {
    let mut m = a.config.resolve("query")?;
    let seg_path = required(a.segments.as_ref(), m.inputs.segments.as_ref(), "segments file")?;
    let predicate = required(a.predicate.as_ref(), m.config.predicate.as_ref(), "predicate")?;
    if let Some(p) = &a.model {
        m.inputs.model = Some(p.clone());
    }
    m.inputs.segments = Some(seg_path.clone());
    m.config.predicate = Some(predicate.clone());
    if let Some(o) = &a.out {
        m.output = Some(o.clone());
    }
    let segments = read_segments(&seg_path)?;
    let (ctx, frame_rate) = match &m.inputs.model {
        Some(p) => {
            let file = read_model(p)?;
            let rate = a.config.frame_rate.unwrap_or(file.frame_rate);
            (file.query_context(), rate)
        }
        None => (context_from_segments(&segments), m.config.frame_rate),
    };
    let pred = parse_query(&predicate, &ctx)?;
    let text = format_matches(&query(&segments, &pred, frame_rate));
    match &m.output {
        Some(out) => {
            write_atomic(out, text.as_bytes())?;
            write_manifest(&m, out, false)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn run_export(a: &ExportArgs) -> Result<()> {
    let mut m = a.config.resolve("export")?;
    let model_path = required(a.model.as_ref(), m.inputs.model.as_ref(), "--model")?;
    let out = required(a.out.as_ref(), m.output.as_ref(), "--out directory")?;
    if let Some(w) = &a.what {
        m.config.export = Some(w.clone());
    }
    let what = m.config.export.clone().unwrap_or_else(|| "all".into());
    m.inputs.model = Some(model_path.clone());
    m.output = Some(out.clone());
    m.config.export = Some(what.clone());
    let targets = ExportTarget::parse_list(&what)?;
    let file = read_model(&model_path)?;
    let mut written = 0;
    for target in targets {
        for t in tables_for(&file, target)? {
            write_atomic(&out.join(format!("{}.pgm", t.name)), &pgm_bytes(&t.table))?;
            write_atomic(&out.join(format!("{}.csv", t.name)), grid_text(&t.table).as_bytes())?;
            written += 1;
        }
    }
    write_manifest(&m, &out, true)?;
    println!("{written} tables -> {}", out.display());
    Ok(())
}

fn run_compare(a: &CompareArgs) -> Result<()> {
    let mut m = a.config.resolve("compare-oracle")?;
    let tracks_path = required(a.tracks.as_ref(), m.inputs.tracks.as_ref(), "tracks file")?;
    if let Some(f) = &a.features {
        m.config.features = Some(f.clone());
    }
    if let Some(o) = &a.out {
        m.output = Some(o.clone());
    }
    m.inputs.tracks = Some(tracks_path.clone());
    let tracks = read_tracks(&tracks_path)?;
    let report = pipeline::compare_oracle(&tracks, &m.config)?;
    print!("{report}");
    if let Some(out) = &m.output {
        let mut text = serde_json::to_string_pretty(&report).map_err(FlaError::from)?;
        text.push('\n');
        write_atomic(out, text.as_bytes())?;
        write_manifest(&m, out, false)?;
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => run_gen(a),
        Command::Fit(a) => run_fit(a),
        Command::Classify(a) => run_classify(a),
        Command::Query(a) => run_query(a),
        Command::Export(a) => run_export(a),
        Command::CompareOracle(a) => run_compare(a),
    }
}

/// Error class of the first typed error in the chain.
pub fn error_class(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<FlaError>() {
            return e.class();
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
    }
    "error"
}

/// `error: <class>: <message>` on one line.
pub fn error_line(err: &anyhow::Error) -> String {
    let message: Vec<String> = err.chain().map(|c| c.to_string().replace('\n', " ")).collect();
    format!("error: {}: {}", error_class(err), message.join(": "))
}

/// Parses arguments, runs, and returns the process exit status.
pub fn run_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("bad arguments");
            eprintln!("error: usage: {}", first.trim_start_matches("error: "));
            return 2;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            1
        }
    }
}
