use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sixchan_core::dataset::{generate_splits, night_oracle_params, read_split, write_split, Annotation, Chain, DatasetSplit, Domain, ImageSet, SceneConfig};
use sixchan_core::detector::{train_detector, Detection, DetectionModel, DetectorConfig, InitMode, TrainSchedule};
use sixchan_core::metrics::{evaluate, ApVariant};
use sixchan_core::sixchannel::{load_sixchannel, pack_pair_manifest, ChannelOrder, PairManifest, SixChannelSample};
use sixchan_core::translate::{train_translator, translate_split, Direction, GanHyperparams, TranslatorKind, TranslatorPair};
use sixchan_harness::{render_report, run_pipeline, ExperimentReport, ExperimentSpec, Format, Grid, HarnessError, Result, Stage, StageContext};

#[derive(Parser)]
#[command(name = "sixchan", version, about = "Day/night car detection with six-channel inputs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the four synthetic splits.
    Datagen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 300)]
        per_split: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Scene configuration (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a day/night translator on the train splits of a data directory.
    TranslateTrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = KindArg::Learned)]
        kind: KindArg,
        /// Translator hyperparameters (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Translate a split directory.
    TranslateApply {
        #[arg(long)]
        translator: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long, value_enum)]
        direction: DirectionArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pair a real split with its translation into a six-channel manifest.
    Pack6 {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        fake: PathBuf,
        #[arg(long, value_enum, default_value_t = OrderArg::RealFirst)]
        order: OrderArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a detector.
    Train {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: PathBuf,
        /// Detector configuration (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training schedule (JSON).
        #[arg(long)]
        schedule: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Initialise a six-channel model from this three-channel model.
        #[arg(long)]
        expand_from: Option<PathBuf>,
    },
    /// Run a detector over a split and write detections (JSON).
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score detections against a split.
    Eval {
        #[arg(long)]
        detections: PathBuf,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long, value_enum, default_value_t = VariantArg::AllPoint)]
        variant: VariantArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment grid end to end.
    Experiment(ExperimentArgs),
    /// Render a saved report.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::All)]
        format: Format,
    },
}

#[derive(Args)]
struct InputArgs {
    /// Split directories (three-channel input).
    #[arg(long = "split", num_args = 1..)]
    splits: Vec<PathBuf>,
    /// Six-channel pair manifests.
    #[arg(long = "pairs", num_args = 1.., conflicts_with = "splits")]
    pairs: Vec<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment specification (JSON); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    grid: Option<Grid>,
    #[arg(long, value_enum)]
    translator: Option<KindArg>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    per_split: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_enum)]
    order: Option<OrderArg>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::All)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Oracle,
    Learned,
}

impl From<KindArg> for TranslatorKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Oracle => TranslatorKind::Oracle,
            KindArg::Learned => TranslatorKind::Learned,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Forward,
    Backward,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    RealFirst,
    DayFirst,
}

impl From<OrderArg> for ChannelOrder {
    fn from(o: OrderArg) -> Self {
        match o {
            OrderArg::RealFirst => ChannelOrder::RealFirst,
            OrderArg::DayFirst => ChannelOrder::DayFirst,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    AllPoint,
    ElevenPoint,
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

fn save_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::json(path.display().to_string(), e))?;
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// The loaded images behind `--split` or `--pairs`.
enum Input {
    Splits(Vec<DatasetSplit>),
    Pairs(Vec<Vec<SixChannelSample>>),
}

impl Input {
    fn load(args: &InputArgs, stage: Stage) -> Result<Self> {
        if !args.pairs.is_empty() {
            let sets = args
                .pairs
                .iter()
                .map(|p| {
                    let manifest = PairManifest::load(p).stage(stage)?;
                    load_sixchannel(&manifest).stage(stage)
                })
                .collect::<Result<_>>()?;
            return Ok(Input::Pairs(sets));
        }
        if args.splits.is_empty() {
            return Err(HarnessError::Config("give at least one --split or --pairs".into()));
        }
        let splits = args.splits.iter().map(|d| read_split(d).stage(stage)).collect::<Result<_>>()?;
        Ok(Input::Splits(splits))
    }

    fn with_set<R>(&self, f: impl FnOnce(&dyn ImageSet) -> Result<R>) -> Result<R> {
        let parts: Vec<&dyn ImageSet> = match self {
            Input::Splits(s) => s.iter().map(|s| s as &dyn ImageSet).collect(),
            Input::Pairs(p) => p.iter().map(|s| s as &dyn ImageSet).collect(),
        };
        f(&Chain::new(parts).map_err(|e| HarnessError::Config(e.to_string()))?)
    }
}

fn datagen(out: &Path, per_split: usize, seed: Option<u64>, config: Option<&Path>) -> Result<()> {
    let mut scene: SceneConfig = config.map(load_json).transpose()?.unwrap_or_default();
    if let Some(s) = seed {
        scene.seed = s;
    }
    for split in generate_splits(&scene, per_split).stage(Stage::Data)? {
        let dir = out.join(&split.name);
        write_split(&split, &dir).stage(Stage::Data)?;
        log::info!("wrote {} samples to {}", split.len(), dir.display());
    }
    Ok(())
}

fn translate_train(data: &Path, out: &Path, kind: KindArg, config: Option<&Path>, epochs: Option<usize>, seed: Option<u64>) -> Result<()> {
    let pair = match kind {
        KindArg::Oracle => {
            let scene: SceneConfig = config.map(load_json).transpose()?.unwrap_or_default();
            TranslatorPair::oracle(Domain::Day, night_oracle_params(&scene)).stage(Stage::Translator)?
        }
        KindArg::Learned => {
            let mut hp: GanHyperparams = config.map(load_json).transpose()?.unwrap_or_default();
            if let Some(e) = epochs {
                hp.epochs = e;
            }
            if let Some(s) = seed {
                hp.seed = s;
            }
            let day = read_split(&data.join("train-day")).stage(Stage::Translator)?;
            let night = read_split(&data.join("train-night")).stage(Stage::Translator)?;
            train_translator(&day, &night, &hp).stage(Stage::Translator)?
        }
    };
    pair.save(out).stage(Stage::Translator)
}

#[allow(clippy::too_many_arguments)]
fn train(
    input: &InputArgs,
    out: &Path,
    config: Option<&Path>,
    schedule: Option<&Path>,
    epochs: Option<usize>,
    lr: Option<f64>,
    seed: Option<u64>,
    expand_from: Option<&Path>,
) -> Result<()> {
    let data = Input::load(input, Stage::Train)?;
    let mut sched: TrainSchedule = schedule.map(load_json).transpose()?.unwrap_or_else(sixchan_harness::spec::desk_schedule);
    if let Some(e) = epochs {
        sched.epochs = e;
    }
    if let Some(l) = lr {
        sched.learning_rate = l;
    }
    if let Some(s) = seed {
        sched.seed = s;
    }
    let init = match expand_from {
        Some(p) => InitMode::Expand3(Box::new(DetectionModel::load(p).stage(Stage::Train)?)),
        None => InitMode::Random,
    };
    let model = data.with_set(|set| {
        let mut cfg: DetectorConfig = config.map(load_json).transpose()?.unwrap_or_default();
        cfg.input_channels = set.channels();
        train_detector(set, &cfg, &sched, &init, &mut |_| Ok(())).stage(Stage::Train)
    })?;
    model.save(out).stage(Stage::Train)
}

fn detect(model: &Path, input: &InputArgs, out: &Path) -> Result<()> {
    let model = DetectionModel::load(model).stage(Stage::Test)?;
    let data = Input::load(input, Stage::Test)?;
    let dets = data.with_set(|set| {
        let mut dets: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
        for i in 0..set.len() {
            dets.insert(set.id(i), model.detect_raw(&set.image(i).stage(Stage::Test)?).stage(Stage::Test)?);
        }
        Ok(dets)
    })?;
    save_json(out, &dets)
}

fn eval(detections: &Path, input: &InputArgs, iou: f64, variant: VariantArg, out: Option<&Path>) -> Result<()> {
    let dets: BTreeMap<String, Vec<Detection>> = load_json(detections)?;
    let data = Input::load(input, Stage::Test)?;
    let gts = data.with_set(|set| {
        Ok((0..set.len())
            .map(|i| (set.id(i), set.boxes(i).into_iter().map(Annotation::car).collect::<Vec<_>>()))
            .collect::<BTreeMap<_, _>>())
    })?;
    let variant = match variant {
        VariantArg::AllPoint => ApVariant::AllPoint,
        VariantArg::ElevenPoint => ApVariant::ElevenPoint,
    };
    let result = evaluate(&dets, &gts, iou, variant).stage(Stage::Test)?;
    println!("mAP {:.4} (tp {}, fp {}, gt {})", result.map, result.true_positives, result.false_positives, result.ground_truths);
    if let Some(p) = out {
        save_json(p, &result)?;
    }
    Ok(())
}

fn experiment(args: &ExperimentArgs) -> Result<ExitCode> {
    let mut spec = match &args.config {
        Some(p) => ExperimentSpec::load(p)?,
        None => ExperimentSpec::default(),
    };
    if let Some(g) = args.grid {
        spec.grid = g;
    }
    if let Some(t) = args.translator {
        spec.translator = t.into();
    }
    if let Some(s) = &args.seeds {
        spec.seeds.clone_from(s);
    }
    if let Some(n) = args.per_split {
        spec.per_split = n;
    }
    if let Some(e) = args.epochs {
        spec.schedule.epochs = e;
    }
    if let Some(o) = args.order {
        spec.channel_order = o.into();
    }
    if let Some(o) = &args.out {
        spec.output_dir.clone_from(o);
    }
    let report = run_pipeline(&spec)?;
    let dir = spec.output_dir.join("report");
    for f in render_report(&report, args.format, &dir)? {
        log::info!("wrote {}", f.display());
    }
    if let Some(f) = &report.failure {
        eprintln!("error: stage {} failed: {}", f.stage, f.message);
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Datagen {
            out,
            per_split,
            seed,
            config,
        } => datagen(&out, per_split, seed, config.as_deref())?,
        Command::TranslateTrain {
            data,
            out,
            kind,
            config,
            epochs,
            seed,
        } => translate_train(&data, &out, kind, config.as_deref(), epochs, seed)?,
        Command::TranslateApply {
            translator,
            split,
            direction,
            out,
        } => {
            let pair = TranslatorPair::load(&translator).stage(Stage::Fakes)?;
            let split = read_split(&split).stage(Stage::Fakes)?;
            let direction = match direction {
                DirectionArg::Forward => Direction::Forward,
                DirectionArg::Backward => Direction::Backward,
            };
            let fake = translate_split(&pair, &split, direction).stage(Stage::Fakes)?;
            write_split(&fake, &out).stage(Stage::Fakes)?;
        }
        Command::Pack6 { real, fake, order, out } => {
            pack_pair_manifest(&real, &fake, order.into())
                .and_then(|m| m.save(&out))
                .stage(Stage::Concat)?;
        }
        Command::Train {
            input,
            out,
            config,
            schedule,
            epochs,
            lr,
            seed,
            expand_from,
        } => train(&input, &out, config.as_deref(), schedule.as_deref(), epochs, lr, seed, expand_from.as_deref())?,
        Command::Detect { model, input, out } => detect(&model, &input, &out)?,
        Command::Eval {
            detections,
            input,
            iou,
            variant,
            out,
        } => eval(&detections, &input, iou, variant, out.as_deref())?,
        Command::Experiment(args) => return experiment(&args),
        Command::Report { input, out, format } => {
            let report = ExperimentReport::load(&input)?;
            render_report(&report, format, &out)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            match e.stage() {
                Some(stage) => eprintln!("error: stage {stage}: {e}"),
                None => eprintln!("error: {e}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
