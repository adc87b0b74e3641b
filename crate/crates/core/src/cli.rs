//! `smem` command line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::backends::{BackendRegistry, BackendRequest, LoadedSequence, Refiner, SyntheticNoise, SyntheticRefiner};
use crate::formats::{
    mask_file_name, read_config, read_mask_dir, write_atomic, write_mask_file, write_results_csv, EmbeddingFile,
    MaskFrame, SequenceManifest,
};
use crate::fusion::mask_to_box_prompt;
use crate::metrics::{track_rows, vots_bundle, AbsentFrames, MetricBundle, MetricOptions, SequenceMasks};
use crate::pipeline::{ablate, run_loaded, AblationRow, PipelineConfig, SequenceResult};
use crate::synth::{benchmark_suite, generate, suite_scene, SyntheticDataset, SUITE_NAMES};

const SEMANTICS: &str = "frame-class definitions without toolkit re-initialisation";

#[derive(Debug, Parser)]
#[command(name = "smem", version, about = "Smart-memory video object segmentation toolkit")]
pub struct Cli {
    /// Worker threads for per-sequence parallelism (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Track one sequence and write masks, the memory trace and a summary.
    Run(RunArgs),
    /// Score predicted mask directories against ground truth.
    Eval(EvalArgs),
    /// Write benchmark scenes as manifest, masks and embedding files.
    Synth(SynthArgs),
    /// Compare memory growth with and without smart eviction.
    BenchMem(BenchMemArgs),
    /// Score the four component combinations over benchmark scenes.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SeedArg {
    /// Random seed; falls back to SMEM_SEED.
    #[arg(long, env = "SMEM_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// TOML pipeline config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// `synthetic` or `file`; defaults to `synthetic` when the manifest names a scene.
    #[arg(long)]
    pub backend: Option<String>,
    /// Overrides the config seed.
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of NNNNN.smrl files, or of one such directory per sequence.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub track_threshold: f64,
    /// Leave frames with empty ground truth out of Q.
    #[arg(long)]
    pub skip_absent: bool,
    /// Boundary match radius in pixels (default: 0.8% of the diagonal, rounded up).
    #[arg(long)]
    pub boundary_tolerance: Option<f64>,
    /// Also write per-track rows to this CSV.
    #[arg(long)]
    pub tracks: Option<PathBuf>,
    /// Write the bundle CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene name or `all`.
    #[arg(long)]
    pub suite: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the per-pixel feature table needed for file-backend fusion.
    #[arg(long)]
    pub features: bool,
    /// Also write segmenter masks and refiner proposals for file-backend replay.
    #[arg(long)]
    pub replay: bool,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct BenchMemArgs {
    #[arg(long, default_value = "constant-1000")]
    pub suite: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Scene name or `all`.
    #[arg(long, default_value = "all")]
    pub suite: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of consecutive seeds, starting at --seed, to average over.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[command(flatten)]
    pub seed: SeedArg,
}

pub fn run_cli(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        ensure!(n > 0, "--workers must be positive");
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::BenchMem(a) => cmd_bench_mem(&a),
        Command::Ablate(a) => cmd_ablate(&a),
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => read_config(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn scene_names(suite: &str) -> Result<Vec<&'static str>> {
    if suite == "all" {
        return Ok(SUITE_NAMES.to_vec());
    }
    SUITE_NAMES
        .iter()
        .find(|&&n| n == suite)
        .map(|&n| vec![n])
        .ok_or_else(|| anyhow!("unknown suite {suite:?}; expected `all` or one of {}", SUITE_NAMES.join(", ")))
}

fn bundle_fields(b: &MetricBundle) -> [f64; 9] {
    [b.q, b.acc, b.rob, b.nre, b.dre, b.adq, b.j_mean, b.f_mean, b.jf_mean]
}

const BUNDLE_HEADER: &str = "Q,Acc,Rob,NRE,DRE,ADQ,J,F,JF";

fn csv_floats(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(",")
}

fn cmd_run(a: &RunArgs) -> Result<()> {
    let manifest =
        SequenceManifest::read(&a.manifest).with_context(|| format!("reading manifest {}", a.manifest.display()))?;
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed.seed {
        cfg.seed = seed;
    }
    let backend = match &a.backend {
        Some(b) => b.clone(),
        None if manifest.scene.is_some() => "synthetic".into(),
        None => "file".into(),
    };
    let base_dir = a.manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let request = BackendRequest {
        manifest,
        base_dir,
        noise: cfg.synthetic,
        seed: cfg.seed,
    };
    let seq = BackendRegistry::default()
        .load(&backend, &request)
        .with_context(|| format!("loading {backend} backends for {}", a.manifest.display()))?;
    let result = run_loaded(&seq, &cfg).map_err(|e| anyhow!("{e}"))?;

    create_dir(&a.out)?;
    for (t, masks) in result.masks.iter().enumerate() {
        let frame = MaskFrame {
            height: seq.descriptor.height,
            width: seq.descriptor.width,
            objects: seq.object_ids.iter().copied().zip(masks.iter().cloned()).collect(),
        };
        let path = a.out.join(mask_file_name(t));
        write_mask_file(&path, &frame).with_context(|| format!("writing {}", path.display()))?;
    }
    write_text(&a.out.join("memory_trace.csv"), &memory_trace_csv(&result))?;
    write_text(&a.out.join("summary.txt"), &run_summary(&seq, &cfg, &backend, &result)?)?;
    Ok(())
}

fn memory_trace_csv(result: &SequenceResult) -> String {
    let mut out = String::from("frame,memory_size,fusion_accepted\n");
    for (t, (size, acc)) in result.memory_trace.iter().zip(&result.accepted).enumerate() {
        let accepted = acc.iter().filter(|&&x| x).count();
        let _ = writeln!(out, "{t},{size},{accepted}");
    }
    out
}

fn run_summary(seq: &LoadedSequence, cfg: &PipelineConfig, backend: &str, r: &SequenceResult) -> Result<String> {
    let mut s = String::new();
    let accepted = r.accepted.iter().flatten().filter(|&&x| x).count();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("sequence", seq.descriptor.sequence_id.clone());
    kv("backend", backend.to_string());
    kv("frames", r.masks.len().to_string());
    kv("objects", seq.object_ids.len().to_string());
    kv("cadence", cfg.cadence.to_string());
    kv("enable_smem", cfg.enable_smem.to_string());
    kv("enable_hqtf", cfg.enable_hqtf.to_string());
    kv("seed", cfg.seed.to_string());
    kv("final_memory_size", r.final_memory_size().unwrap_or(0).to_string());
    kv("fusion_accepted", accepted.to_string());
    kv("fusion_fallbacks", r.fusion_fallbacks.len().to_string());
    if let Some(gt) = &seq.gt_all {
        let b = vots_bundle(std::slice::from_ref(&r.masks), std::slice::from_ref(gt), &MetricOptions::default())?;
        kv("metric_semantics", SEMANTICS.to_string());
        for (name, v) in BUNDLE_HEADER.split(',').zip(bundle_fields(&b)) {
            kv(name, format!("{v:.6}"));
        }
    }
    Ok(s)
}

fn has_masks(dir: &Path) -> Result<bool> {
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        if entry?.file_name().to_string_lossy().ends_with(".smrl") {
            return Ok(true);
        }
    }
    Ok(false)
}

struct EvalSequence {
    id: String,
    object_ids: Vec<u32>,
    pred: SequenceMasks,
    gt: SequenceMasks,
    final_memory_size: Option<usize>,
}

fn read_sequence_dir(dir: &Path) -> Result<(Vec<u32>, SequenceMasks)> {
    let frames = read_mask_dir(dir).with_context(|| format!("reading masks in {}", dir.display()))?;
    let ids = frames[0].ids();
    Ok((ids, frames.iter().map(MaskFrame::masks).collect()))
}

fn read_final_memory(dir: &Path) -> Result<Option<usize>> {
    let path = dir.join("memory_trace.csv");
    if !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let last = text.lines().skip(1).last();
    last.map(|line| {
        line.split(',')
            .nth(1)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| anyhow!("malformed line {line:?} in {}", path.display()))
    })
    .transpose()
}

fn eval_pair(id: String, pred_dir: &Path, gt_dir: &Path) -> Result<EvalSequence> {
    let (pred_ids, pred) = read_sequence_dir(pred_dir)?;
    let (gt_ids, gt) = read_sequence_dir(gt_dir)?;
    ensure!(
        pred_ids == gt_ids,
        "object ids {pred_ids:?} in {} differ from {gt_ids:?} in {}",
        pred_dir.display(),
        gt_dir.display()
    );
    ensure!(
        pred.len() == gt.len(),
        "{} has {} frames but {} has {}",
        pred_dir.display(),
        pred.len(),
        gt_dir.display(),
        gt.len()
    );
    Ok(EvalSequence {
        id,
        object_ids: pred_ids,
        pred,
        gt,
        final_memory_size: read_final_memory(pred_dir)?,
    })
}

fn collect_eval(pred: &Path, gt: &Path) -> Result<Vec<EvalSequence>> {
    if has_masks(pred)? {
        let id = gt
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "sequence".into());
        return Ok(vec![eval_pair(id, pred, gt)?]);
    }
    let mut names: Vec<String> = fs::read_dir(pred)
        .with_context(|| format!("listing {}", pred.display()))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    ensure!(!names.is_empty(), "{} holds neither masks nor sequence directories", pred.display());
    names
        .into_par_iter()
        .map(|name| {
            let mut gt_dir = gt.join(&name);
            if !has_masks(&gt_dir)? && gt_dir.join("gt").is_dir() {
                gt_dir = gt_dir.join("gt");
            }
            eval_pair(name.clone(), &pred.join(&name), &gt_dir)
        })
        .collect()
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let opts = MetricOptions {
        track_threshold: a.track_threshold,
        absent_frames: if a.skip_absent {
            AbsentFrames::Skip
        } else {
            AbsentFrames::ScoreOne
        },
        boundary_tolerance: a.boundary_tolerance,
    };
    let seqs = collect_eval(&a.pred, &a.gt)?;
    let preds: Vec<SequenceMasks> = seqs.iter().map(|s| s.pred.clone()).collect();
    let gts: Vec<SequenceMasks> = seqs.iter().map(|s| s.gt.clone()).collect();
    let bundle = vots_bundle(&preds, &gts, &opts)?;
    let text = format!(
        "# metric_semantics: {SEMANTICS}\n{BUNDLE_HEADER}\n{}\n",
        csv_floats(&bundle_fields(&bundle))
    );
    match &a.out {
        Some(p) => write_text(p, &text)?,
        None => print!("{text}"),
    }
    if let Some(path) = &a.tracks {
        let mut rows = Vec::new();
        for s in &seqs {
            rows.extend(track_rows(&s.id, &s.object_ids, &s.pred, &s.gt, s.final_memory_size, &opts)?);
        }
        write_text(path, &write_results_csv(&rows))?;
    }
    Ok(())
}

/// Writes one generated scene under `dir`, returning its manifest.
pub fn write_scene(
    ds: &SyntheticDataset,
    scene_seed: u64,
    dir: &Path,
    features: bool,
    replay: Option<&PipelineConfig>,
) -> Result<SequenceManifest> {
    let (h, w) = ds.shape();
    create_dir(&dir.join("gt"))?;
    let ids: Vec<u32> = (1..=ds.num_objects() as u32).collect();
    let frame_of = |masks: Vec<crate::mask::ObjectMask>| MaskFrame {
        height: h,
        width: w,
        objects: ids.iter().copied().zip(masks).collect(),
    };
    let mut manifest = SequenceManifest {
        sequence: ds.name().to_string(),
        frames: ds.len(),
        height: h,
        width: w,
        objects: ds.num_objects(),
        keys: Some("keys.smem".into()),
        scene: Some(ds.name().to_string()),
        scene_seed: Some(scene_seed),
        ..Default::default()
    };
    for t in 0..ds.len() {
        let rel = format!("gt/{}", mask_file_name(t));
        write_mask_file(&dir.join(&rel), &frame_of(ds.gt_masks(t)))?;
        manifest.gt.insert(t, rel);
    }
    let keys: Vec<_> = (0..ds.len()).map(|t| ds.frame_key(t).clone()).collect();
    let table = EmbeddingFile::from_embeddings("pooling=global-mean", &keys)?;
    write_atomic(&dir.join("keys.smem"), &table.encode())?;
    if features {
        let mut values = Vec::with_capacity(ds.len() * h * w * ds.dim());
        for t in 0..ds.len() {
            for r in 0..h {
                for c in 0..w {
                    values.extend(ds.feature_at(t, r, c).values().iter().map(|&v| v as f32));
                }
            }
        }
        let table = EmbeddingFile::new("per-pixel features, frame-major", ds.dim(), values)?;
        write_atomic(&dir.join("features.smem"), &table.encode())?;
        manifest.features = Some("features.smem".into());
    }
    if let Some(cfg) = replay {
        let seq = LoadedSequence::synthetic(Arc::new(ds.clone()), cfg.synthetic, cfg.seed);
        let result = run_loaded(&seq, cfg).map_err(|e| anyhow!("{e}"))?;
        let refiner = SyntheticRefiner::new(Arc::new(ds.clone()), cfg.seed);
        create_dir(&dir.join("vos"))?;
        create_dir(&dir.join("proposals"))?;
        for (t, masks) in result.vos_masks.iter().enumerate().skip(1) {
            let rel = format!("vos/{}", mask_file_name(t));
            write_mask_file(&dir.join(&rel), &frame_of(masks.clone()))?;
            manifest.vos.insert(t, rel);
            for (o, m) in masks.iter().enumerate() {
                let Some(bbox) = mask_to_box_prompt(m) else { continue };
                let triple = refiner.propose(&seq.descriptor.frame(t), o, &bbox)?;
                for (rank, p) in (1u8..).zip(triple) {
                    let rel = format!("proposals/{t:05}.{o}.{rank}.smrl");
                    let frame = MaskFrame {
                        height: h,
                        width: w,
                        objects: vec![(ids[o], p)],
                    };
                    write_mask_file(&dir.join(&rel), &frame)?;
                    manifest.proposals.insert((t, o, rank), rel);
                }
            }
        }
    }
    manifest.write(&dir.join("manifest.txt"))?;
    Ok(manifest)
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let seed = a.seed.seed.unwrap_or(0);
    let names = scene_names(&a.suite)?;
    let replay = a.replay.then(|| PipelineConfig {
        enable_hqtf: false,
        seed,
        ..Default::default()
    });
    names.par_iter().try_for_each(|name| -> Result<()> {
        let ds = generate(&suite_scene(name, seed)?)?;
        write_scene(&ds, seed, &a.out.join(name), a.features, replay.as_ref())
            .with_context(|| format!("writing scene {name}"))?;
        Ok(())
    })
}

/// Paired memory traces `(smem, baseline)` for one scene.
pub fn memory_traces(name: &str, cfg: &PipelineConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    let ds = Arc::new(generate(&suite_scene(name, cfg.seed)?)?);
    let seq = LoadedSequence::synthetic(ds, cfg.synthetic, cfg.seed);
    let (smem, base) = rayon::join(
        || run_loaded(&seq, &PipelineConfig { enable_smem: true, ..cfg.clone() }),
        || run_loaded(&seq, &PipelineConfig { enable_smem: false, ..cfg.clone() }),
    );
    let smem = smem.map_err(|e| anyhow!("{e}"))?;
    let base = base.map_err(|e| anyhow!("{e}"))?;
    Ok((smem.memory_trace, base.memory_trace))
}

fn cmd_bench_mem(a: &BenchMemArgs) -> Result<()> {
    let names = scene_names(&a.suite)?;
    ensure!(names.len() == 1, "bench-mem takes a single scene");
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed.seed {
        cfg.seed = seed;
    }
    let (smem, base) = memory_traces(names[0], &cfg)?;
    let mut out = String::from("frame,smem,baseline\n");
    for (t, (s, b)) in smem.iter().zip(&base).enumerate() {
        let _ = writeln!(out, "{t},{s},{b}");
    }
    let ratio = *smem.last().expect("non-empty") as f64 / *base.last().expect("non-empty") as f64;
    let _ = writeln!(out, "final_ratio,{ratio:.6}");
    write_text(&a.out, &out)
}

/// The benchmark scenes named by `names` for each seed in `seeds`, with
/// backends seeded like the scene.
pub fn suite_sequences(names: &[&str], seeds: std::ops::Range<u64>, noise: SyntheticNoise) -> Result<Vec<LoadedSequence>> {
    let specs: Vec<_> = seeds
        .flat_map(|seed| {
            benchmark_suite(seed)
                .into_iter()
                .filter(|s| names.contains(&s.name.as_str()))
                .map(move |s| (seed, s))
        })
        .collect();
    specs
        .par_iter()
        .map(|(seed, spec)| Ok(LoadedSequence::synthetic(Arc::new(generate(spec)?), noise, *seed)))
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = format!("# metric_semantics: {SEMANTICS}\nconfig,{BUNDLE_HEADER},mean_final_memory\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.6}",
            r.name,
            csv_floats(&bundle_fields(&r.bundle)),
            r.mean_final_memory
        );
    }
    out
}

fn cmd_ablate(a: &AblateArgs) -> Result<()> {
    ensure!(a.seeds > 0, "--seeds must be positive");
    let names = scene_names(&a.suite)?;
    let cfg = load_config(a.config.as_deref())?;
    let first = a.seed.seed.unwrap_or(cfg.seed);
    let end = first.checked_add(a.seeds).context("seed range overflows")?;
    let seqs = suite_sequences(&names, first..end, cfg.synthetic)?;
    let rows = ablate(&seqs, &cfg, &MetricOptions::default()).map_err(|e| anyhow!("{e}"))?;
    write_text(&a.out, &ablation_csv(&rows))
}
