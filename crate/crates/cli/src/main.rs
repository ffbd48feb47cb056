use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use swishnet::audio::{load_wav, write_wav, TARGET_SAMPLE_RATE};
use swishnet::baselines::{GmmClassifier, GmmOptions, GMM_MAGIC};
use swishnet::bench::{bench_latency, DEFAULT_WARMUP};
use swishnet::dsp::{write_features, FeatureExtractor, FeatureKind, Preprocess};
use swishnet::model::{load_model, save_model, Model, ModelConfig, WEIGHT_MAGIC};
use swishnet::segment::{
    median_filter, score, score_labels, sliding_predict, synth_timeline, SegmentPools, SegmentPrediction, Timeline,
    TimelineOptions, DEFAULT_MEDIAN_LEN,
};
use swishnet::synthetic::{room_tone, write_corpus};
use swishnet::train::{
    make_clips, split_dataset, train, ClipSet, DatasetManifest, DistillConfig, Sgdr, Split, TeacherLogits,
    TrainConfig, DEFAULT_BATCH_AT_1S, DEFAULT_SOFT_WEIGHT,
};
use swishnet::{Class, CLASSES};

#[derive(Parser)]
#[command(name = "swishnet", version, about = "Speech/music/noise classification and segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct Seed {
    /// Seed for every random choice the command makes.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Extract a feature matrix from a WAV file into an SWFT cache.
    Features(FeaturesArgs),
    /// Split a class-per-directory corpus into train/val/test.
    Split(SplitArgs),
    /// Train a SwishNet model (or the GMM baseline) from a manifest.
    Train(TrainArgs),
    /// Train a student against teacher logits.
    Distill(DistillArgs),
    /// Write per-clip logits of a model, for use as a distillation teacher.
    Logits(LogitsArgs),
    /// Classify one clip.
    Classify(ClassifyArgs),
    /// Segment a recording into a timeline.
    Segment(SegmentArgs),
    /// Build a segmentation stream from class audio and silence.
    Synth(SynthArgs),
    /// Write a synthetic three-class corpus.
    Corpus(CorpusArgs),
    /// Score predictions against a timeline, or a model against a manifest split.
    Eval(EvalArgs),
    /// Time single-sample inference.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Mfcc,
    LogMfb,
    MfccDeltas,
}

impl From<Kind> for FeatureKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Mfcc => FeatureKind::Mfcc,
            Kind::LogMfb => FeatureKind::LogMfb,
            Kind::MfccDeltas => FeatureKind::MfccDeltas,
        }
    }
}

#[derive(Args)]
struct FeaturesArgs {
    wav: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "mfcc")]
    kind: Kind,
    /// Skip silence removal and loudness equalization.
    #[arg(long)]
    raw: bool,
    #[command(flatten)]
    seed: Seed,
}

#[derive(Args)]
struct SplitArgs {
    /// Directory with one subdirectory of WAV files per class.
    dir: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    #[command(flatten)]
    seed: Seed,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Gmm,
}

#[derive(Args)]
struct TrainOpts {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    /// `slim`, `wide`, or a path to a model config file.
    #[arg(long, default_value = "slim")]
    preset: String,
    #[arg(long, default_value_t = 1.0)]
    clip_len: f64,
    #[arg(long, default_value_t = 120)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1e-5)]
    min_lr: f64,
    #[arg(long, default_value_t = DEFAULT_BATCH_AT_1S)]
    batch_at_1s: usize,
    /// Metric log, one line per epoch (stderr when absent).
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    seed: Seed,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    opts: TrainOpts,
    /// Train a reference baseline instead of SwishNet.
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    /// Mixture components per class for the GMM baseline.
    #[arg(long, default_value_t = 8)]
    components: usize,
}

#[derive(Args)]
struct DistillArgs {
    #[command(flatten)]
    opts: TrainOpts,
    /// `clip_id<TAB>l0<TAB>l1<TAB>l2` per training clip.
    #[arg(long)]
    teacher: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    temperature: f64,
    #[arg(long, default_value_t = DEFAULT_SOFT_WEIGHT)]
    soft_weight: f64,
}

#[derive(Args)]
struct LogitsArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "train")]
    split: String,
    #[arg(long, default_value_t = 1.0)]
    clip_len: f64,
    #[arg(short, long)]
    out: PathBuf,
    #[command(flatten)]
    seed: Seed,
}

#[derive(Args)]
struct ClassifyArgs {
    /// SWSH network or SWGM mixture file.
    #[arg(long)]
    model: PathBuf,
    wav: PathBuf,
    #[command(flatten)]
    seed: Seed,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    model: PathBuf,
    wav: PathBuf,
    /// Timeline output (`start_s<TAB>end_s<TAB>class`).
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    window: f64,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Median filter length in frames; 0 disables filtering.
    #[arg(long, default_value_t = DEFAULT_MEDIAN_LEN)]
    median: usize,
    /// Per-frame probability dump.
    #[arg(long)]
    dump: Option<PathBuf>,
    #[command(flatten)]
    seed: Seed,
}

#[derive(Args)]
struct SynthArgs {
    /// Class audio: a manifest (with --split) or a class-per-directory corpus.
    #[arg(long, conflicts_with = "corpus")]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// WAV files of natural silence; quiet room tone is generated when absent.
    #[arg(long)]
    silence: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 20.0)]
    min_s: f64,
    #[arg(long, default_value_t = 120.0)]
    max_s: f64,
    /// Output directory for `stream_NNN.wav` and `stream_NNN.tsv`.
    #[arg(short, long)]
    out: PathBuf,
    #[command(flatten)]
    seed: Seed,
}

#[derive(Args)]
struct CorpusArgs {
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = 12)]
    files_per_class: usize,
    #[arg(long, default_value_t = 4.0)]
    seconds: f64,
    #[command(flatten)]
    seed: Seed,
}

#[derive(Args)]
struct EvalArgs {
    /// Prediction dump or predicted timeline.
    #[arg(long, requires = "truth", conflicts_with_all = ["model", "manifest"])]
    pred: Option<PathBuf>,
    /// Ground-truth timeline.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, requires = "manifest")]
    model: Option<PathBuf>,
    #[arg(long, requires = "model")]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 1.0)]
    clip_len: f64,
    #[command(flatten)]
    seed: Seed,
}

#[derive(Args)]
struct BenchArgs {
    /// Weights to time; a freshly initialized preset is timed when absent.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value = "slim")]
    preset: String,
    #[arg(long, default_value_t = 1.0)]
    clip_len: f64,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, default_value_t = DEFAULT_WARMUP)]
    warmup: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[command(flatten)]
    seed: Seed,
}

/// Bad combinations of otherwise valid flags.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Features(a) => features(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train_cmd(a),
        Command::Distill(a) => distill(a),
        Command::Logits(a) => logits(a),
        Command::Classify(a) => classify(a),
        Command::Segment(a) => segment(a),
        Command::Synth(a) => synth(a),
        Command::Corpus(a) => corpus(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
    }
}

fn parse_split(s: &str) -> anyhow::Result<Split> {
    s.parse().map_err(|_| usage(format!("unknown split `{s}` (train, val or test)")))
}

fn model_config(preset: &str) -> anyhow::Result<ModelConfig> {
    if let Some(c) = ModelConfig::preset(preset) {
        return Ok(c);
    }
    let text = fs::read_to_string(preset).with_context(|| format!("model config `{preset}`"))?;
    Ok(ModelConfig::from_toml(&text)?)
}

fn magic(path: &Path) -> anyhow::Result<[u8; 4]> {
    let mut m = [0u8; 4];
    File::open(path)
        .and_then(|mut f| f.read_exact(&mut m))
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(m)
}

enum Classifier {
    Net(Model),
    Gmm(GmmClassifier),
}

fn load_classifier(path: &Path) -> anyhow::Result<Classifier> {
    let m = magic(path)?;
    if &m == WEIGHT_MAGIC {
        Ok(Classifier::Net(load_model(path)?))
    } else if &m == GMM_MAGIC {
        Ok(Classifier::Gmm(GmmClassifier::load(path)?))
    } else {
        bail!("{} is neither an SWSH nor an SWGM file", path.display())
    }
}

fn load_net(path: &Path) -> anyhow::Result<Model> {
    load_model(path).with_context(|| format!("loading {}", path.display()))
}

fn gmm_extractor() -> FeatureExtractor {
    FeatureExtractor::new(FeatureKind::MfccDeltas, Some(Preprocess::default())).expect("valid extractor")
}

fn features(a: FeaturesArgs) -> anyhow::Result<()> {
    let pre = if a.raw { None } else { Some(Preprocess::default()) };
    let ex = FeatureExtractor::new(a.kind.into(), pre)?;
    let f = ex.extract(&load_wav(&a.wav)?)?;
    write_features(BufWriter::new(File::create(&a.out)?), &f)?;
    println!("{} frames x {} coefficients -> {}", f.n_frames(), f.n_coeffs(), a.out.display());
    Ok(())
}

fn list_wavs(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    out.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")));
    out.sort();
    Ok(out)
}

fn class_dirs(dir: &Path) -> anyhow::Result<BTreeMap<Class, Vec<PathBuf>>> {
    let mut files = BTreeMap::new();
    for c in CLASSES {
        let sub = dir.join(c.name());
        if !sub.is_dir() {
            bail!("missing class directory {}", sub.display());
        }
        files.insert(c, list_wavs(&sub)?);
    }
    Ok(files)
}

fn split(a: SplitArgs) -> anyhow::Result<()> {
    let m = split_dataset(&class_dirs(&a.dir)?, a.seed.seed)?;
    m.save(&a.out)?;
    for s in [Split::Train, Split::Val, Split::Test] {
        println!("{:<5} {} files", s.name(), m.files(s).count());
    }
    Ok(())
}

fn train_config(o: &TrainOpts, distill: Option<DistillConfig>) -> TrainConfig {
    TrainConfig {
        clip_len_s: o.clip_len,
        epochs: o.epochs,
        schedule: Sgdr {
            base_lr: o.lr,
            min_lr: o.min_lr,
            ..Sgdr::default()
        },
        batch_at_1s: o.batch_at_1s,
        distill,
        seed: o.seed.seed,
        target_train_accuracy: None,
    }
}

fn run_training(o: &TrainOpts, distill: Option<DistillConfig>, teacher: Option<&TeacherLogits>) -> anyhow::Result<()> {
    let config = train_config(o, distill);
    config.validate().map_err(|e| usage(e.to_string()))?;
    let model_cfg = model_config(&o.preset)?;
    let manifest = DatasetManifest::load(&o.manifest)?;
    let ex = FeatureExtractor::mfcc();
    let train_set = ClipSet::from_manifest(&manifest, Split::Train, o.clip_len, &ex)?;
    let val_set = ClipSet::from_manifest(&manifest, Split::Val, o.clip_len, &ex)?;
    let model = Model::build(&model_cfg, o.seed.seed)?;
    let val = (!val_set.is_empty()).then_some(&val_set);
    let out = train(model, &train_set, val, &config, teacher)?;
    let log: String = out.log.iter().map(|r| format!("{r}\n")).collect();
    match &o.log {
        Some(p) => fs::write(p, log)?,
        None => eprint!("{log}"),
    }
    save_model(&o.out, &out.model)?;
    println!(
        "{} parameters, best epoch {} of {} -> {}",
        out.model.param_count(),
        out.best_epoch,
        out.log.len(),
        o.out.display()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> anyhow::Result<()> {
    match a.baseline {
        None => run_training(&a.opts, None, None),
        Some(Baseline::Gmm) => {
            let manifest = DatasetManifest::load(&a.opts.manifest)?;
            let ex = gmm_extractor();
            let mut frames = vec![Vec::new(); CLASSES.len()];
            for rec in manifest.files(Split::Train) {
                let f = ex.extract(&load_wav(&rec.path)?)?;
                frames[rec.class.index()].extend_from_slice(f.values());
            }
            let opts = GmmOptions {
                components: a.components,
                seed: a.opts.seed.seed,
                ..GmmOptions::default()
            };
            let gmm = GmmClassifier::fit(&frames, ex.dim(), opts)?;
            gmm.save(&a.opts.out)?;
            println!("{} classes x {} components -> {}", gmm.n_classes(), a.components, a.opts.out.display());
            Ok(())
        }
    }
}

fn distill(a: DistillArgs) -> anyhow::Result<()> {
    let teacher = TeacherLogits::load(&a.teacher, CLASSES.len())?;
    let d = DistillConfig {
        temperature: a.temperature,
        soft_weight: a.soft_weight,
    };
    run_training(&a.opts, Some(d), Some(&teacher))
}

fn logits(a: LogitsArgs) -> anyhow::Result<()> {
    let model = load_net(&a.model)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let set = ClipSet::from_manifest(&manifest, parse_split(&a.split)?, a.clip_len, &FeatureExtractor::mfcc())?;
    let mut out = TeacherLogits::default();
    for (id, f) in set.ids.iter().zip(&set.features) {
        out.insert(id.clone(), model.logits(f)?);
    }
    fs::write(&a.out, out.to_tsv())?;
    println!("{} clips -> {}", out.len(), a.out.display());
    Ok(())
}

fn format_probs(p: &[f64]) -> String {
    let parts: Vec<String> = p.iter().map(|v| format!("{v:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

fn classify(a: ClassifyArgs) -> anyhow::Result<()> {
    let clip = load_wav(&a.wav)?;
    match load_classifier(&a.model)? {
        Classifier::Net(model) => {
            let f = FeatureExtractor::mfcc().extract(&clip)?;
            let p = model.probabilities(&f)?;
            let c = swishnet::model::argmax(&p);
            println!("{} p={}", CLASSES[c], format_probs(&p));
        }
        Classifier::Gmm(gmm) => {
            let f = gmm_extractor().extract(&clip)?;
            let d = gmm.classify(f.values())?;
            let n = f.n_frames().max(1) as f64;
            let votes: Vec<f64> = d.votes.iter().map(|&v| v as f64 / n).collect();
            println!("{} p={}", CLASSES[d.class], format_probs(&votes));
        }
    }
    Ok(())
}

fn segment(a: SegmentArgs) -> anyhow::Result<()> {
    if a.stride == 0 {
        return Err(usage("--stride must be at least 1"));
    }
    let model = load_net(&a.model)?;
    let clip = load_wav(&a.wav)?;
    let ex = FeatureExtractor::new(FeatureKind::Mfcc, Some(Preprocess::aligned()))?;
    let clip = if clip.sample_rate() == TARGET_SAMPLE_RATE {
        clip
    } else {
        swishnet::audio::resample(&clip, TARGET_SAMPLE_RATE)
    };
    let features = ex.extract(&clip)?;
    let mut pred = sliding_predict(&model, &features, a.window, a.stride)?;
    if a.median > 0 {
        pred = median_filter(&pred, a.median);
    }
    if let Some(p) = &a.dump {
        fs::write(p, pred.to_tsv())?;
    }
    let tl = Timeline::from_frame_labels(&pred.labels(), clip.len(), clip.sample_rate())?;
    fs::write(&a.out, tl.to_tsv())?;
    println!("{} segments over {:.2} s -> {}", tl.segments.len(), tl.duration_s(), a.out.display());
    Ok(())
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let mut pools = SegmentPools::default();
    match (&a.manifest, &a.corpus) {
        (Some(m), None) => {
            let manifest = DatasetManifest::load(m)?;
            for rec in manifest.files(parse_split(&a.split)?) {
                pools.classes[rec.class.index()].push(load_wav(&rec.path)?);
            }
        }
        (None, Some(dir)) => {
            for (c, files) in class_dirs(dir)? {
                for p in files {
                    pools.classes[c.index()].push(load_wav(&p)?);
                }
            }
        }
        _ => return Err(usage("give either --manifest or --corpus")),
    }
    pools.silence = match &a.silence {
        Some(dir) => list_wavs(dir)?.iter().map(load_wav).collect::<Result<_, _>>()?,
        None => (0..4).map(|i| room_tone(2.0, a.seed.seed.wrapping_add(i))).collect(),
    };
    let opts = TimelineOptions {
        min_total_s: a.min_s,
        max_total_s: a.max_s,
        ..TimelineOptions::default()
    };
    fs::create_dir_all(&a.out)?;
    for i in 0..a.count {
        let (audio, tl) = synth_timeline(&pools, &opts, a.seed.seed.wrapping_add(i as u64))?;
        write_wav(a.out.join(format!("stream_{i:03}.wav")), &audio)?;
        fs::write(a.out.join(format!("stream_{i:03}.tsv")), tl.to_tsv())?;
        println!("stream_{i:03}: {:.2} s, {} segments", tl.duration_s(), tl.segments.len());
    }
    Ok(())
}

fn corpus(a: CorpusArgs) -> anyhow::Result<()> {
    let files = write_corpus(&a.out, a.files_per_class, a.seconds, a.seed.seed)?;
    println!("{} files -> {}", files.len(), a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    match (&a.pred, &a.truth, &a.model, &a.manifest) {
        (Some(pred), Some(truth), None, None) => eval_frames(pred, truth),
        (None, None, Some(model), Some(manifest)) => eval_clips(model, manifest, parse_split(&a.split)?, a.clip_len),
        _ => Err(usage("give --pred with --truth, or --model with --manifest")),
    }
}

/// Per-frame labels from a prediction dump (four columns) or a timeline (three).
fn read_predicted(path: &Path, n_truth: usize) -> anyhow::Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    let columns = text.lines().find(|l| !l.trim().is_empty()).map_or(0, |l| l.split('\t').count());
    if columns == 3 {
        let tl = Timeline::from_tsv(&text, TARGET_SAMPLE_RATE)?;
        return tl
            .frame_labels_n(n_truth)
            .iter()
            .map(|l| l.class().map(|c| c.index()).context("predicted timeline contains silence"))
            .collect();
    }
    Ok(SegmentPrediction::from_tsv(&text, CLASSES.len())?.labels())
}

fn eval_frames(pred: &Path, truth: &Path) -> anyhow::Result<()> {
    let truth = Timeline::load(truth, TARGET_SAMPLE_RATE)?.frame_labels();
    let pred = read_predicted(pred, truth.len())?;
    if pred.len() != truth.len() {
        bail!("{} predicted frames against {} reference frames", pred.len(), truth.len());
    }
    print!("{}", score(&pred, &truth)?);
    Ok(())
}

fn eval_clips(model: &Path, manifest: &Path, split: Split, clip_len: f64) -> anyhow::Result<()> {
    let manifest = DatasetManifest::load(manifest)?;
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    match load_classifier(model)? {
        Classifier::Net(model) => {
            let set = ClipSet::from_manifest(&manifest, split, clip_len, &FeatureExtractor::mfcc())?;
            for (f, &l) in set.features.iter().zip(&set.labels) {
                pred.push(model.classify(f)?);
                truth.push(Some(l));
            }
        }
        Classifier::Gmm(gmm) => {
            let ex = gmm_extractor();
            for rec in manifest.files(split) {
                let audio = ex.preprocess(&load_wav(&rec.path)?);
                for clip in make_clips(&audio, clip_len) {
                    pred.push(gmm.classify(ex.features_of(&clip)?.values())?.class);
                    truth.push(Some(rec.class.index()));
                }
            }
        }
    }
    println!("clips              {}", pred.len());
    print!("{}", score_labels(&pred, &truth)?);
    Ok(())
}

fn bench(a: BenchArgs) -> anyhow::Result<()> {
    if a.iters == 0 || a.threads == 0 {
        return Err(usage("--iters and --threads must be positive"));
    }
    let model = match &a.model {
        Some(p) => load_net(p)?,
        None => Model::build(&model_config(&a.preset)?, a.seed.seed)?,
    };
    let report = bench_latency(&model, a.clip_len, a.iters, a.warmup, a.threads, a.seed.seed)?;
    print!("{report}");
    let _ = std::io::stdout().flush();
    Ok(())
}
