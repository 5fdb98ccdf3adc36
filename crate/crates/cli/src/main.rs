//! `lexiface` command-line entry point.
//!
//! Every command accepts `--config PATH` (JSON; keys are the long flag names
//! in snake_case) whose values are overridden by flags, and records the
//! resolved configuration next to its outputs.
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use lexiface::audio::MelExtractor;
use lexiface::dataset::{prepare_sample, Corpus, Sample, Split};
use lexiface::eval::{
    evaluate_samples, export_embeddings, manifest_sha256, model_correlation, region_mae, run_ablation_saving,
    Modality, Reduction,
};
use lexiface::mesh::{read_mesh_sequence, write_mesh_sequence, MeshSequence, RegionMask, TemplateMesh};
use lexiface::model::checkpoint::{load_checkpoint, CheckpointManifest};
use lexiface::model::{one_hot, FusionMode, ModelConfig, ModelParams};
use lexiface::synth::{generate_corpus, SynthSpec};
use lexiface::text::EmbeddingSource;
use lexiface::train::{train, TrainConfig};

const RESOLVED_CONFIG: &str = "resolved-config.json";

#[derive(Parser)]
#[command(name = "lexiface", version, about = "Speech- and transcript-driven face-mesh animation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus.
    Synth(SynthArgs),
    /// Train a model on the training split of a corpus.
    Train(TrainArgs),
    /// Predict a mesh sequence for one utterance.
    Infer(InferArgs),
    /// Region error report for predicted meshes or a checkpoint.
    Eval(EvalArgs),
    /// Train and evaluate all modality/fusion variants over several seeds.
    Ablate(AblateArgs),
    /// Per-vertex correlation map between encoder features and predicted offsets.
    Correlate(CorrelateArgs),
    /// Per-frame text encoder outputs of one utterance as CSV.
    ExportEmbeddings(ExportArgs),
}

enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(message: impl Into<String>) -> CliError {
    CliError::Usage(message.into())
}

fn parse_fusion(s: &str) -> Result<FusionMode, String> {
    s.parse().map_err(|e: lexiface::Error| e.to_string())
}

fn parse_embeddings(s: &str) -> Result<String, String> {
    s.parse::<EmbeddingSource>().map(|_| s.to_string()).map_err(|e| e.to_string())
}

fn parse_modality(s: &str) -> Result<Modality, String> {
    s.parse().map_err(|e: lexiface::Error| e.to_string())
}

fn parse_reduction(s: &str) -> Result<Reduction, String> {
    s.parse().map_err(|e: lexiface::Error| e.to_string())
}

fn parse_split(s: &str) -> Result<String, String> {
    match s {
        "train" | "test" | "all" => Ok(s.to_string()),
        _ => Err(format!("unknown split {s:?}; expected train, test or all")),
    }
}

#[derive(Args, Serialize, Deserialize, Clone, Default)]
#[serde(deny_unknown_fields, default)]
struct SynthArgs {
    /// JSON file with default values for these flags.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    speakers: Option<usize>,
    #[arg(long)]
    utterances_per_speaker: Option<usize>,
    #[arg(long)]
    test_per_speaker: Option<usize>,
}

#[derive(Args, Serialize, Deserialize, Clone, Default)]
#[serde(deny_unknown_fields, default)]
struct TrainArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Corpus manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Checkpoint directory to write.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// tensor, concat, audio or text.
    #[arg(long, value_parser = parse_fusion)]
    fusion: Option<FusionMode>,
    /// pseudo, pseudo:SEED or file:PATH.
    #[arg(long, value_parser = parse_embeddings)]
    embeddings: Option<String>,
    /// Also save `epoch_NNNN` checkpoints every this many epochs.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Divide the summed loss by frames times vertices.
    #[arg(long)]
    normalize_loss: Option<bool>,
}

#[derive(Args, Serialize, Deserialize, Clone, Default)]
#[serde(deny_unknown_fields, default)]
struct InferArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// 16-bit PCM mono WAV.
    #[arg(long)]
    audio: Option<PathBuf>,
    /// Word alignment JSON.
    #[arg(long)]
    alignment: Option<PathBuf>,
    /// Neutral mesh (MSQ1 with one frame).
    #[arg(long)]
    template: Option<PathBuf>,
    /// Output MSQ1 file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Speaker index for the style one-hot.
    #[arg(long)]
    speaker: Option<usize>,
    /// Overrides the embedding source recorded in the checkpoint.
    #[arg(long, value_parser = parse_embeddings)]
    embeddings: Option<String>,
    /// Key for file embeddings; defaults to the audio file stem.
    #[arg(long)]
    utterance_id: Option<String>,
}

#[derive(Args, Serialize, Deserialize, Clone, Default)]
#[serde(deny_unknown_fields, default)]
struct EvalArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Predicted MSQ1 (with --truth and --mask).
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Region mask JSON.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Checkpoint to evaluate on a corpus split (with --manifest).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// train, test or all.
    #[arg(long, value_parser = parse_split)]
    split: Option<String>,
    #[arg(long, value_parser = parse_embeddings)]
    embeddings: Option<String>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Clone, Default)]
#[serde(deny_unknown_fields, default)]
struct AblateArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_parser = parse_embeddings)]
    embeddings: Option<String>,
    /// Output directory for tables and per-run checkpoints.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Clone, Default)]
#[serde(deny_unknown_fields, default)]
struct CorrelateArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// audio or text.
    #[arg(long, value_parser = parse_modality)]
    modality: Option<Modality>,
    /// mean or max over feature dimensions.
    #[arg(long, value_parser = parse_reduction)]
    reduction: Option<Reduction>,
    #[arg(long, value_parser = parse_split)]
    split: Option<String>,
    #[arg(long, value_parser = parse_embeddings)]
    embeddings: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Clone, Default)]
#[serde(deny_unknown_fields, default)]
struct ExportArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Utterance id from the manifest.
    #[arg(long)]
    utterance: Option<String>,
    #[arg(long, value_parser = parse_embeddings)]
    embeddings: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Config-file values with every non-null flag laid over them.
fn resolve<T: Serialize + DeserializeOwned>(flags: &T, config: Option<&Path>) -> CliResult<T> {
    let Some(path) = config else {
        return Ok(serde_json::from_value(serde_json::to_value(flags)?)?);
    };
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let base: T = serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    let mut merged = serde_json::to_value(&base)?;
    if let (Value::Object(m), Value::Object(over)) = (&mut merged, serde_json::to_value(flags)?) {
        for (k, v) in over {
            if !v.is_null() {
                m.insert(k, v);
            }
        }
    }
    Ok(serde_json::from_value(merged)?)
}

fn required<T: Clone>(value: &Option<T>, name: &str) -> CliResult<T> {
    value
        .clone()
        .ok_or_else(|| usage(format!("missing --{} (flag or config key `{}`)", name.replace('_', "-"), name)))
}

fn snapshot(command: &str, config: &impl Serialize, checkpoint_sha256: Option<&str>) -> CliResult<Value> {
    let mut v = json!({ "command": command, "config": config });
    if let Some(h) = checkpoint_sha256 {
        v["checkpoint_manifest_sha256"] = json!(h);
    }
    Ok(v)
}

fn write_snapshot(dir: &Path, snap: &Value) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    let mut s = serde_json::to_string_pretty(snap)?;
    s.push('\n');
    fs::write(dir.join(RESOLVED_CONFIG), s)?;
    Ok(())
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Header lines embedding the resolved configuration in a CSV report.
fn report_header(snap: &Value) -> String {
    let mut s = format!("# resolved_config={}\n", serde_json::to_string(&snap["config"]).unwrap_or_default());
    let hash = snap["checkpoint_manifest_sha256"].as_str().unwrap_or("none");
    s.push_str(&format!("# checkpoint_manifest_sha256={hash}\n"));
    s
}

/// Writes a report to `out` (plus the config snapshot beside it) or stdout.
fn emit_report(out: Option<&Path>, snap: &Value, body: &str) -> CliResult<()> {
    let text = format!("{}{body}", report_header(snap));
    match out {
        Some(path) => {
            let dir = parent_dir(path);
            write_snapshot(&dir, snap)?;
            fs::write(path, text)?;
            println!("{}", path.display());
        }
        None => {
            use std::io::Write;
            match std::io::stdout().lock().write_all(text.as_bytes()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
                _ => {}
            }
        }
    }
    Ok(())
}

fn embedding_source(flag: &Option<String>, fallback: &str) -> CliResult<EmbeddingSource> {
    let s = flag.as_deref().unwrap_or(fallback);
    s.parse().map_err(|e: lexiface::Error| usage(e.to_string()))
}

fn select_split<'a>(corpus: &'a Corpus, split: &str) -> Vec<&'a lexiface::dataset::Utterance> {
    match split {
        "train" => corpus.split(Split::Train),
        "test" => corpus.split(Split::Test),
        _ => corpus.manifest.utterances.iter().collect(),
    }
}

struct LoadedCheckpoint {
    params: ModelParams,
    manifest: CheckpointManifest,
    sha256: String,
}

fn open_checkpoint(dir: &Path) -> CliResult<LoadedCheckpoint> {
    let (params, manifest) =
        load_checkpoint(dir).with_context(|| format!("loading checkpoint {}", dir.display()))?;
    let sha256 = manifest_sha256(dir)?;
    Ok(LoadedCheckpoint {
        params,
        manifest,
        sha256,
    })
}

fn check_compatible(ckpt: &LoadedCheckpoint, corpus: &Corpus) -> CliResult<()> {
    let m = &corpus.manifest;
    if ckpt.manifest.vertices != m.vertex_count || ckpt.manifest.speakers != m.speakers {
        return Err(anyhow!(
            "checkpoint expects V={} S={}, corpus has V={} S={}",
            ckpt.manifest.vertices,
            ckpt.manifest.speakers,
            m.vertex_count,
            m.speakers
        )
        .into());
    }
    Ok(())
}

fn load_samples(corpus: &Corpus, split: &str, source: &EmbeddingSource) -> CliResult<Vec<Sample>> {
    let provider = source.open()?;
    let utterances = select_split(corpus, split);
    if utterances.is_empty() {
        return Err(anyhow!("split {split:?} has no utterances").into());
    }
    Ok(corpus.prepare_all(&utterances, provider.as_ref())?)
}

fn cmd_synth(args: SynthArgs) -> CliResult<()> {
    let r = resolve(&args, args.config.as_deref())?;
    let out = required(&r.out, "out")?;
    let mut spec = SynthSpec::with_speakers(r.speakers.unwrap_or(2));
    spec.seed = r.seed.unwrap_or(spec.seed);
    spec.utterances_per_speaker = r.utterances_per_speaker.unwrap_or(spec.utterances_per_speaker);
    spec.test_per_speaker = r.test_per_speaker.unwrap_or(spec.test_per_speaker);
    let resolved = SynthArgs {
        config: None,
        out: Some(out.clone()),
        seed: Some(spec.seed),
        speakers: Some(spec.speakers),
        utterances_per_speaker: Some(spec.utterances_per_speaker),
        test_per_speaker: Some(spec.test_per_speaker),
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    generate_corpus(&spec, &out)?;
    write_snapshot(&out, &snapshot("synth", &resolved, None)?)?;
    println!("{}", out.join("manifest.json").display());
    Ok(())
}

fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let mut r = resolve(&args, args.config.as_deref())?;
    let manifest = required(&r.manifest, "manifest")?;
    let out = required(&r.out, "out")?;
    r.epochs.get_or_insert(100);
    r.lr.get_or_insert(lexiface::train::DEFAULT_LEARNING_RATE);
    r.seed.get_or_insert(0);
    r.fusion.get_or_insert(FusionMode::Tensor);
    r.embeddings.get_or_insert_with(|| "pseudo".into());
    r.normalize_loss.get_or_insert(true);
    let source = embedding_source(&r.embeddings, "pseudo")?;

    let corpus = Corpus::load(&manifest)?;
    let samples = load_samples(&corpus, "train", &source)?;
    let m = &corpus.manifest;
    let model = ModelConfig::standard(m.speakers, m.vertex_count, r.fusion.expect("set"));
    let mut config = TrainConfig::new(model);
    config.learning_rate = r.lr.expect("set");
    config.epochs = r.epochs.expect("set");
    config.seed = r.seed.expect("set");
    config.normalize_loss = r.normalize_loss.expect("set");
    config.frame_rate = m.frame_rate;
    config.embeddings = source.to_string();
    config.checkpoint_dir = Some(out.clone());
    config.checkpoint_every = r.checkpoint_every;
    config.validate().map_err(|e| usage(e.to_string()))?;
    let outcome = train(config, &samples).context("training aborted")?;
    let sha = manifest_sha256(&out)?;
    write_snapshot(&out, &snapshot("train", &r, Some(&sha))?)?;
    println!(
        "{} final_loss={:.6e}",
        out.display(),
        outcome.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_infer(args: InferArgs) -> CliResult<()> {
    let mut r = resolve(&args, args.config.as_deref())?;
    let ckpt_dir = required(&r.checkpoint, "checkpoint")?;
    let audio = required(&r.audio, "audio")?;
    let alignment = required(&r.alignment, "alignment")?;
    let template_path = required(&r.template, "template")?;
    let out = required(&r.out, "out")?;
    let speaker = *r.speaker.get_or_insert(0);
    let ckpt = open_checkpoint(&ckpt_dir)?;
    let source = embedding_source(&r.embeddings, &ckpt.manifest.embeddings)?;
    r.embeddings = Some(source.to_string());
    let id = r
        .utterance_id
        .get_or_insert_with(|| audio.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
        .clone();

    let seq = read_mesh_sequence(fs::File::open(&template_path)?)?;
    let template = TemplateMesh::from_sequence(&seq)?;
    if template.vertex_count() != ckpt.manifest.vertices {
        return Err(anyhow!(
            "template has {} vertices, checkpoint predicts {}",
            template.vertex_count(),
            ckpt.manifest.vertices
        )
        .into());
    }
    if speaker >= ckpt.manifest.speakers {
        return Err(anyhow!(
            "speaker {speaker} out of range; checkpoint was trained with {} speakers",
            ckpt.manifest.speakers
        )
        .into());
    }
    let provider = source.open()?;
    let sample = prepare_sample(
        &id,
        speaker,
        &audio,
        &alignment,
        None,
        &template,
        ckpt.manifest.frame_rate,
        provider.as_ref(),
        &MelExtractor::new(),
    )?;
    let one = one_hot(speaker, ckpt.manifest.speakers)?;
    let pred = ckpt.params.forward(
        sample.audio.view(),
        sample.text.view(),
        one.as_slice().expect("contiguous"),
        &template,
        ckpt.manifest.frame_rate,
    )?;
    write_mesh_sequence(&pred, std::io::BufWriter::new(fs::File::create(&out)?))?;
    write_snapshot(&parent_dir(&out), &snapshot("infer", &r, Some(&ckpt.sha256))?)?;
    println!("{} frames={}", out.display(), pred.frame_count());
    Ok(())
}

fn read_msq(path: &Path) -> CliResult<MeshSequence> {
    Ok(read_mesh_sequence(fs::File::open(path).with_context(|| format!("opening {}", path.display()))?)?)
}

fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    let mut r = resolve(&args, args.config.as_deref())?;
    if r.pred.is_some() || r.truth.is_some() {
        let pred = read_msq(&required(&r.pred, "pred")?)?;
        let truth = read_msq(&required(&r.truth, "truth")?)?;
        let mask_path = required(&r.mask, "mask")?;
        let mask = RegionMask::from_json(fs::File::open(&mask_path)?, truth.vertex_count())?;
        let mut report = region_mae(&pred, &truth, &mask)?;
        report.utterances[0].id = r
            .pred
            .as_ref()
            .and_then(|p| p.file_stem())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let snap = snapshot("eval", &r, None)?;
        return emit_report(r.out.as_deref(), &snap, &report.to_csv());
    }
    let ckpt = open_checkpoint(&required(&r.checkpoint, "checkpoint")?)?;
    let corpus = Corpus::load(&required(&r.manifest, "manifest")?)?;
    check_compatible(&ckpt, &corpus)?;
    let split = r.split.get_or_insert_with(|| "test".into()).clone();
    let source = embedding_source(&r.embeddings, &ckpt.manifest.embeddings)?;
    r.embeddings = Some(source.to_string());
    let mask = match &r.mask {
        Some(p) => RegionMask::from_json(fs::File::open(p)?, corpus.manifest.vertex_count)?,
        None => corpus.mask()?,
    };
    let samples = load_samples(&corpus, &split, &source)?;
    let report = evaluate_samples(&ckpt.params, &samples, &mask)?;
    let snap = snapshot("eval", &r, Some(&ckpt.sha256))?;
    emit_report(r.out.as_deref(), &snap, &report.to_csv())
}

fn cmd_ablate(args: AblateArgs) -> CliResult<()> {
    let mut r = resolve(&args, args.config.as_deref())?;
    let manifest = required(&r.manifest, "manifest")?;
    let out = required(&r.out, "out")?;
    let seeds = r.seeds.get_or_insert_with(|| vec![1, 2, 3]).clone();
    if seeds.is_empty() {
        return Err(usage("--seeds needs at least one seed"));
    }
    let epochs = *r.epochs.get_or_insert(30);
    let lr = *r.lr.get_or_insert(lexiface::train::DEFAULT_LEARNING_RATE);
    let source = embedding_source(&r.embeddings, "pseudo")?;
    r.embeddings = Some(source.to_string());

    let corpus = Corpus::load(&manifest)?;
    let train_set = load_samples(&corpus, "train", &source)?;
    let test_set = load_samples(&corpus, "test", &source)?;
    let mask = corpus.mask()?;
    let m = &corpus.manifest;
    let mut base = TrainConfig::new(ModelConfig::standard(m.speakers, m.vertex_count, FusionMode::Tensor));
    base.epochs = epochs;
    base.learning_rate = lr;
    base.frame_rate = m.frame_rate;
    base.embeddings = source.to_string();
    base.validate().map_err(|e| usage(e.to_string()))?;
    let table = run_ablation_saving(&base, &train_set, &test_set, &mask, &seeds, Some(&out.join("runs")))?;

    let snap = snapshot("ablate", &r, None)?;
    write_snapshot(&out, &snap)?;
    let header = report_header(&snap);
    fs::write(out.join("ablation.csv"), format!("{header}{}", table.to_csv()))?;
    let text = table.to_text();
    fs::write(out.join("ablation.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_correlate(args: CorrelateArgs) -> CliResult<()> {
    let mut r = resolve(&args, args.config.as_deref())?;
    let ckpt = open_checkpoint(&required(&r.checkpoint, "checkpoint")?)?;
    let corpus = Corpus::load(&required(&r.manifest, "manifest")?)?;
    check_compatible(&ckpt, &corpus)?;
    let modality = *r.modality.get_or_insert(Modality::Text);
    let reduction = *r.reduction.get_or_insert(Reduction::Mean);
    let split = r.split.get_or_insert_with(|| "test".into()).clone();
    let source = embedding_source(&r.embeddings, &ckpt.manifest.embeddings)?;
    r.embeddings = Some(source.to_string());
    let samples = load_samples(&corpus, &split, &source)?;
    let map = model_correlation(&ckpt.params, &samples, modality, reduction)?;
    let snap = snapshot("correlate", &r, Some(&ckpt.sha256))?;
    emit_report(r.out.as_deref(), &snap, &map.to_csv())
}

fn cmd_export(args: ExportArgs) -> CliResult<()> {
    let mut r = resolve(&args, args.config.as_deref())?;
    let ckpt = open_checkpoint(&required(&r.checkpoint, "checkpoint")?)?;
    let corpus = Corpus::load(&required(&r.manifest, "manifest")?)?;
    check_compatible(&ckpt, &corpus)?;
    let id = required(&r.utterance, "utterance")?;
    let source = embedding_source(&r.embeddings, &ckpt.manifest.embeddings)?;
    r.embeddings = Some(source.to_string());
    let provider = source.open()?;
    let utterance = corpus.utterance(&id)?;
    let sample = corpus.prepare(utterance, &corpus.template()?, provider.as_ref(), &MelExtractor::new())?;
    let (h_l, _) = lexiface::eval::encoded_features(&ckpt.params, &sample, Modality::Text)?;
    let mut csv = Vec::new();
    export_embeddings(h_l.view(), &sample.alignment, f64::from(corpus.manifest.frame_rate), &mut csv)?;
    let snap = snapshot("export-embeddings", &r, Some(&ckpt.sha256))?;
    emit_report(r.out.as_deref(), &snap, &String::from_utf8(csv)?)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Correlate(a) => cmd_correlate(a),
        Command::ExportEmbeddings(a) => cmd_export(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"epochs": 7, "seed": 3}"#).unwrap();
        let flags = TrainArgs {
            seed: Some(9),
            ..Default::default()
        };
        let r = resolve(&flags, Some(&path)).ok().unwrap();
        assert_eq!(r.epochs, Some(7));
        assert_eq!(r.seed, Some(9));
    }

    #[test]
    fn unknown_config_keys_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"epochz": 7}"#).unwrap();
        assert!(matches!(resolve(&TrainArgs::default(), Some(&path)), Err(CliError::Usage(_))));
    }
}
