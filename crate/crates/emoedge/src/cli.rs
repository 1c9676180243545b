//! The `emoedge` command line.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use emoedge_core::compiler;
use emoedge_core::datapipe::{self, AnnotationRecord, AugmentBanks, AugmentConfig, ClassMap, CurationConfig, Emotion, ManifestRecord};
use emoedge_core::eval;
use emoedge_core::graph::ModelKind;
use emoedge_core::models::{self, KWS_CLASSES};
use emoedge_core::tensor::{DType, QuantParams, Tensor};
use emoedge_core::{Frontend, ModelGraph, PcmBuffer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::container::Container;
use crate::runtime::{self, RunConfig};
use crate::{Config, Error, Result};

#[derive(Debug, Parser)]
#[command(name = "emoedge", version, about = "Speech emotion and keyword pipeline for edge accelerators")]
pub struct Cli {
    /// TOML file with [frontend], [augment], [policy] and [runtime] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice a command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Log-mel spectrogram of a mono 16 kHz WAV file.
    Frontend(FrontendArgs),
    /// Dataset preparation.
    #[command(subcommand)]
    Dataprep(Dataprep),
    /// Build or describe models.
    #[command(subcommand)]
    Model(ModelCmd),
    /// Calibrate a float model and convert it to INT8.
    Quantize(QuantizeArgs),
    /// Accelerator compatibility, partitioning and memory report.
    CompileReport(CompileArgs),
    /// Single-window inference.
    Infer(InferArgs),
    /// Windowed inference over a whole WAV file.
    Stream(StreamArgs),
    /// Score predictions against references.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Arch {
    Kws,
    Emotion,
}

impl Arch {
    fn kind(self) -> ModelKind {
        match self {
            Arch::Kws => ModelKind::Kws,
            Arch::Emotion => ModelKind::Emotion,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutFormat {
    Container,
    Csv,
}

#[derive(Debug, Args)]
struct FrontendArgs {
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = OutFormat::Container)]
    format: OutFormat,
}

#[derive(Debug, Subcommand)]
enum Dataprep {
    /// Cut a recording into fixed-length overlapping segments.
    Segment {
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 5.0)]
        window: f64,
        #[arg(long, default_value_t = 1.0)]
        overlap: f64,
        /// For stereo recordings, which channel to keep.
        #[arg(long, value_enum, default_value_t = Channel::Left)]
        channel: Channel,
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Pick keyword classes from per-emotion word counts (JSON object of objects).
    Keywords {
        #[arg(long)]
        counts: PathBuf,
        /// One stopword per line.
        #[arg(long)]
        stopwords: Option<PathBuf>,
        /// One allowed word per line.
        #[arg(long)]
        vocabulary: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Soft labels from annotator votes (JSON lines of {clip_id, votes}).
    Labels {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Seeded synthetic tone-burst audio.
    Synth {
        #[arg(long, default_value_t = 30.0)]
        seconds: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Randomised waveform augmentation of one file.
    Augment {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Arch::Emotion)]
        preset: Arch,
        /// Directory of noise recordings for additive noise.
        #[arg(long)]
        noise_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Channel {
    Left,
    Right,
}

#[derive(Debug, Subcommand)]
enum ModelCmd {
    /// Build a model with seeded random weights.
    Build {
        #[arg(long, value_enum)]
        arch: Arch,
        #[arg(long)]
        out: PathBuf,
    },
    /// Layer table with shapes and parameter counts.
    Summary {
        #[arg(long, value_enum, required_unless_present = "model")]
        arch: Option<Arch>,
        #[arg(long, conflicts_with = "arch")]
        model: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Args)]
struct QuantizeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Number of synthetic calibration windows (ignored with --calib-dir).
    #[arg(long, default_value_t = crate::DEFAULT_CALIBRATION_SAMPLES)]
    calib_count: usize,
    /// Directory of WAV files; the first window of each is used.
    #[arg(long)]
    calib_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompileArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    json: bool,
    /// Exit with status 1 when the report has fatal violations.
    #[arg(long)]
    strict: bool,
    /// Write the rewritten graph here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    /// WAV file; its first 5 s window is used.
    #[arg(long, conflicts_with = "features", required_unless_present = "features")]
    wav: Option<PathBuf>,
    /// Container written by `frontend`.
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct StreamArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// JSON-lines event log.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Quantize a float model before streaming.
    #[arg(long)]
    quantize: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(value_enum)]
    task: Arch,
    /// CSV with `reference,hypothesis` columns: class ids or labels; a
    /// reference may also be `;`-separated class probabilities.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    json: bool,
}

/// Parses `args` and runs the command; returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let mut stdout = std::io::stdout().lock();
    match execute(cli, &mut stdout) {
        Ok(code) => code,
        Err(e) => {
            let line = serde_json::json!({ "error": { "category": e.category(), "message": e.to_string() } });
            eprintln!("{line}");
            1
        }
    }
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    let cfg = Config::load_or_default(cli.config.as_deref())?;
    let seed = cli.seed;
    let mut say = |s: String| writeln!(out, "{s}").map_err(|e| Error::io(Path::new("<stdout>"), e));
    match cli.command {
        Command::Frontend(a) => {
            let pcm = crate::read_wav(&a.input)?;
            let fe = Frontend::new(cfg.frontend.clone())?;
            let spec = fe.compute_spectrogram(&pcm)?;
            let (c, f) = (spec.num_channels(), spec.num_frames());
            let feats = spec.to_db_features(cfg.frontend.log_scale_shift, cfg.runtime.db_floor);
            match a.format {
                OutFormat::Container => {
                    let mut cont = Container::new(serde_json::json!({ "kind": "spectrogram", "frontend": cfg.frontend }));
                    cont.insert("features", Tensor::from_f32(vec![c, f], feats).map_err(models::ModelError::from)?);
                    let counts = spec.to_channel_major().into_iter().map(i32::from).collect();
                    let unit = QuantParams::new(1.0, 0, DType::I32).map_err(models::ModelError::from)?;
                    let counts = Tensor::from_i32(vec![c, f], counts, unit).map_err(models::ModelError::from)?;
                    cont.insert("counts", counts);
                    cont.write(&a.out)?;
                }
                OutFormat::Csv => {
                    let mut w = csv::Writer::from_path(&a.out).map_err(|e| Error::Input(e.to_string()))?;
                    for row in feats.chunks(f.max(1)) {
                        w.write_record(row.iter().map(|v| v.to_string())).map_err(|e| Error::Input(e.to_string()))?;
                    }
                    w.flush().map_err(|e| Error::io(&a.out, e))?;
                }
            }
            say(format!("{c}x{f} spectrogram written to {}", a.out.display()))?;
        }
        Command::Dataprep(d) => dataprep(d, &cfg, seed, &mut say)?,
        Command::Model(ModelCmd::Build { arch, out }) => {
            let g = crate::build_model(arch.kind(), seed)?;
            crate::save_model(&g, &out)?;
            say(format!("{} model, {} parameters, written to {}", g.kind, g.param_count(), out.display()))?;
        }
        Command::Model(ModelCmd::Summary { arch, model, json }) => {
            let g = match (arch, model) {
                (_, Some(p)) => crate::load_model(&p)?,
                (Some(Arch::Kws), None) => models::build_kws_model(KWS_CLASSES, models::SE_REDUCTION)?,
                (Some(Arch::Emotion), None) => models::build_emotion_model(models::D_MODEL)?,
                (None, None) => unreachable!("clap requires one of them"),
            };
            if json {
                #[derive(Serialize)]
                struct Summary<'a> {
                    kind: String,
                    rows: &'a [emoedge_core::graph::SummaryRow],
                    total: usize,
                }
                let rows = g.summary();
                say(to_json(&Summary { kind: g.kind.to_string(), rows: &rows, total: g.param_count() }))?;
            } else {
                say(summary_table(&g))?;
            }
        }
        Command::Quantize(a) => {
            let g = crate::load_model(&a.model)?;
            if g.is_quantized() {
                return Err(Error::Input(format!("{} is already quantized", a.model.display())));
            }
            let cal = match &a.calib_dir {
                Some(dir) => wav_calibration(dir, &g, &cfg)?,
                None => crate::synthetic_calibration(&g, a.calib_count, seed)?,
            };
            let q = crate::quantize_model(&g, &cal)?;
            crate::save_model(&q, &a.out)?;
            say(format!(
                "calibrated on {} windows; {} parameter bytes written to {}",
                cal.len(),
                q.param_bytes(),
                a.out.display()
            ))?;
        }
        Command::CompileReport(a) => {
            let g = crate::load_model(&a.model)?;
            let (compiled, report) = compiler::compile(&g, &cfg.policy)?;
            if let Some(p) = &a.out {
                crate::save_model(&compiled, p)?;
            }
            say(if a.json { to_json(&report) } else { report.to_text() })?;
            let fatal = report.violations.iter().any(|v| v.severity == compiler::Severity::Fatal);
            if a.strict && fatal {
                return Ok(1);
            }
        }
        Command::Infer(a) => {
            let g = crate::load_model(&a.model)?;
            runtime::check_compatible(&g, &cfg.frontend)?;
            let window = match (&a.wav, &a.features) {
                (Some(w), _) => {
                    let pcm = crate::read_wav(w)?;
                    let fe = Frontend::new(cfg.frontend.clone())?;
                    let spec = fe.compute_spectrogram(&pcm)?;
                    if spec.num_frames() < models::EMOTION_FRAMES {
                        return Err(Error::Input(format!("{} holds {} frames, a window needs {}", w.display(), spec.num_frames(), models::EMOTION_FRAMES)));
                    }
                    let feats = spec.slice_frames(0, models::EMOTION_FRAMES).to_db_features(cfg.frontend.log_scale_shift, cfg.runtime.db_floor);
                    Tensor::from_f32(vec![models::NUM_MEL, models::EMOTION_FRAMES], feats).map_err(models::ModelError::from)?
                }
                (None, Some(p)) => {
                    let c = Container::read(p)?;
                    let t = c.get("features")?;
                    if t.rank() != 2 || t.shape()[0] != models::NUM_MEL || t.shape()[1] < models::EMOTION_FRAMES {
                        return Err(crate::ContainerError::ShapeMismatch {
                            name: "features".into(),
                            expected: vec![models::NUM_MEL, models::EMOTION_FRAMES],
                            found: t.shape().to_vec(),
                        }
                        .into());
                    }
                    c.expect("features", t.shape(), DType::F32)?;
                    emoedge_core::tensor::slice(t, 1, 0, models::EMOTION_FRAMES).map_err(models::ModelError::from)?
                }
                (None, None) => unreachable!("clap requires one of them"),
            };
            let ev = runtime::infer_features(&g, &window, 0, &cfg.frontend)?;
            say(if a.json { ev.to_json_line() } else { format!("{} ({:.3})", ev.label, ev.confidence) })?;
        }
        Command::Stream(a) => {
            let rc = RunConfig {
                model: a.model,
                input: a.input,
                output: a.out,
                frontend: cfg.frontend.clone(),
                quantize: a.quantize,
                calibration_seed: seed,
                runtime: cfg.runtime.clone(),
            };
            let events = runtime::stream_run(&rc)?;
            for e in &events {
                say(e.to_json_line())?;
            }
        }
        Command::Eval(a) => {
            let (refs, hyps, classes, negatives) = read_pairs(&a.pairs, a.task)?;
            let mut report = eval::classification_report(&refs, &hyps, classes.len())?.with_labels(&classes);
            if !negatives.is_empty() {
                report = report.with_detection(&negatives);
            }
            say(if a.json { to_json(&report) } else { report.to_text() })?;
        }
    }
    Ok(0)
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serialisable")
}

fn summary_table(g: &ModelGraph) -> String {
    let rows = g.summary();
    let shape = |s: &[usize]| s.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
    let w = rows.iter().map(|r| r.group.len()).max().unwrap_or(0).max(5);
    let mut s = format!("{:<w$}  {:>14}  {:>14}  {:>10}\n", "layer", "input", "output", "params");
    for r in &rows {
        s += &format!("{:<w$}  {:>14}  {:>14}  {:>10}\n", r.group, shape(&r.input_shape), shape(&r.output_shape), group_thousands(r.params));
    }
    s += &format!("{:<w$}  {:>14}  {:>14}  {:>10}", "total", "", "", group_thousands(g.param_count()));
    s
}

fn group_thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn wav_calibration(dir: &Path, g: &ModelGraph, cfg: &Config) -> Result<Vec<Tensor>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    let fe = Frontend::new(cfg.frontend.clone())?;
    let mut out = Vec::new();
    for p in paths {
        let spec = fe.compute_spectrogram(&crate::read_wav(&p)?)?;
        if spec.num_frames() < models::EMOTION_FRAMES {
            continue;
        }
        let feats = spec.slice_frames(0, models::EMOTION_FRAMES).to_db_features(cfg.frontend.log_scale_shift, cfg.runtime.db_floor);
        let t = Tensor::from_f32(vec![models::NUM_MEL, models::EMOTION_FRAMES], feats).map_err(models::ModelError::from)?;
        out.push(match g.kind {
            ModelKind::Kws => emoedge_core::tensor::slice(&t, 1, 0, models::KWS_FRAMES)
                .and_then(|t| t.into_reshaped(vec![models::NUM_MEL, models::KWS_FRAMES, 1]))
                .map_err(models::ModelError::from)?,
            _ => t,
        });
    }
    if out.is_empty() {
        return Err(Error::Input(format!("no WAV file of at least 5 s in {}", dir.display())));
    }
    Ok(out)
}

/// References, hypotheses, class names and the non-keyword class ids.
fn read_pairs(path: &Path, task: Arch) -> Result<(Vec<usize>, Vec<usize>, Vec<String>, Vec<usize>)> {
    let classes: Vec<String> = match task {
        Arch::Emotion => Emotion::ALL.iter().map(|e| e.name().to_string()).collect(),
        Arch::Kws => models::kws_labels(KWS_CLASSES),
    };
    let negatives: Vec<usize> = match task {
        Arch::Emotion => vec![],
        Arch::Kws => vec![KWS_CLASSES - 2, KWS_CLASSES - 1],
    };
    let id = |s: &str| -> Result<usize> {
        let s = s.trim();
        if let Ok(i) = s.parse::<usize>() {
            return Ok(i);
        }
        if s.contains(';') {
            let p: Vec<f32> = s.split(';').map(|x| x.trim().parse::<f32>()).collect::<std::result::Result<_, _>>().map_err(|e| Error::Input(format!("`{s}`: {e}")))?;
            return Ok(eval::resolve_soft(&[p])[0]);
        }
        classes.iter().position(|c| c.eq_ignore_ascii_case(s)).ok_or_else(|| Error::Input(format!("unknown class `{s}`")))
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let (mut refs, mut hyps) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        if rec.len() < 2 {
            return Err(Error::Input(format!("{}: expected reference,hypothesis columns", path.display())));
        }
        refs.push(id(&rec[0])?);
        hyps.push(id(&rec[1])?);
    }
    Ok((refs, hyps, classes, negatives))
}

fn read_lines(path: &Path) -> Result<BTreeSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(|l| l.trim().to_lowercase()).filter(|l| !l.is_empty()).collect())
}

fn dataprep(cmd: Dataprep, cfg: &Config, seed: u64, say: &mut dyn FnMut(String) -> Result<()>) -> Result<()> {
    match cmd {
        Dataprep::Segment { input, out_dir, window, overlap, channel, split } => {
            let (samples, channels) = crate::wav::read_interleaved(&input)?;
            let pcm = match channels {
                1 => PcmBuffer::from_samples(samples),
                2 => {
                    let (l, r) = datapipe::isolate_channels(&samples, 2)?;
                    if channel == Channel::Left { l } else { r }
                }
                n => return Err(crate::WavError::Channels { path: input.display().to_string(), expected: 2, found: n }.into()),
            };
            let segments = datapipe::segment_audio(&pcm, window, overlap)?;
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "clip".into());
            let mut manifest = String::new();
            for (i, seg) in segments.iter().enumerate() {
                let name = format!("{stem}_{i:04}.wav");
                crate::write_wav(&out_dir.join(&name), seg)?;
                let rec = ManifestRecord { clip: name, label: vec![], split: split.clone(), augmentations: vec![] };
                manifest += &(serde_json::to_string(&rec).expect("serialisable") + "\n");
            }
            let mpath = out_dir.join("manifest.jsonl");
            std::fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
            say(format!("{} segments written to {}", segments.len(), out_dir.display()))?;
        }
        Dataprep::Keywords { counts, stopwords, vocabulary, out } => {
            let text = std::fs::read_to_string(&counts).map_err(|e| Error::io(&counts, e))?;
            let table: BTreeMap<String, BTreeMap<String, u64>> =
                serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", counts.display())))?;
            let stop = stopwords.as_deref().map(read_lines).transpose()?.unwrap_or_default();
            let vocab = vocabulary.as_deref().map(read_lines).transpose()?;
            let cur = datapipe::curate_keywords(&table, &stop, vocab.as_ref(), &CurationConfig::default())?;
            std::fs::write(&out, to_json(&cur)).map_err(|e| Error::io(&out, e))?;
            say(format!("{} keywords, {} classes", cur.keywords.len(), cur.classes.len()))?;
        }
        Dataprep::Labels { annotations, out } => {
            let text = std::fs::read_to_string(&annotations).map_err(|e| Error::io(&annotations, e))?;
            let map = ClassMap::default();
            let mut lines = String::new();
            let (mut kept, mut dropped) = (0, 0);
            for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let rec: AnnotationRecord = serde_json::from_str(line)
                    .map_err(|e| Error::Input(format!("{}:{}: {e}", annotations.display(), n + 1)))?;
                match datapipe::make_soft_label(&rec, &map) {
                    Ok(l) => {
                        kept += 1;
                        lines += &(serde_json::json!({ "clip_id": rec.clip_id, "label": l.0 }).to_string() + "\n");
                    }
                    Err(_) => dropped += 1,
                }
            }
            std::fs::write(&out, lines).map_err(|e| Error::io(&out, e))?;
            say(format!("{kept} labelled clips, {dropped} without a retained vote"))?;
        }
        Dataprep::Synth { seconds, out } => {
            if !(seconds > 0.0) {
                return Err(Error::Input(format!("duration must be positive, got {seconds}")));
            }
            let n = (seconds * emoedge_core::SAMPLE_RATE_HZ as f64).round() as usize;
            crate::write_wav(&out, &datapipe::synth::tonal_bursts(n, seed))?;
            say(format!("{n} samples written to {}", out.display()))?;
        }
        Dataprep::Augment { input, out, preset, noise_dir } => {
            let pcm = crate::read_wav(&input)?;
            let mut aug = match preset {
                Arch::Kws => AugmentConfig::kws(),
                Arch::Emotion => AugmentConfig::emotion(),
            };
            if cfg.augment != AugmentConfig::default() {
                aug = cfg.augment.clone();
            }
            let mut banks = AugmentBanks::default();
            if let Some(dir) = noise_dir {
                let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
                    .map_err(|e| Error::io(&dir, e))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
                    .collect();
                paths.sort();
                for p in paths {
                    banks.noise.push(crate::read_wav(&p)?);
                }
            }
            if banks.noise.is_empty() && aug.noise_prob > 0.0 {
                say("no noise recordings given; additive noise disabled".into())?;
                aug.noise_prob = 0.0;
            }
            if banks.rir.is_empty() && aug.rir_prob > 0.0 {
                say("no room responses given; reverberation disabled".into())?;
                aug.rir_prob = 0.0;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ aug.rng_seed);
            let (y, log) = datapipe::augment_waveform(&pcm, &aug, &banks, &mut rng)?;
            crate::write_wav(&out, &y)?;
            say(format!("applied: {}", if log.applied.is_empty() { "nothing".into() } else { log.applied.join(", ") }))?;
        }
    }
    Ok(())
}
