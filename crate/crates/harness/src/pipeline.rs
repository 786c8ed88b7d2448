//! Runs the grid: data, translator, fake generation, six-channel pairing,
//! detector training and testing, each stage cached by input hash.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sixchan_core::dataset::{
    generate_splits, night_oracle_params, read_split, write_split, Annotation, Chain, DatasetSplit, Domain, ImageSet, SplitName,
};
use sixchan_core::detector::{train_detector, DetectionModel, DetectorConfig, EpochRecord, InitMode};
use sixchan_core::metrics::{evaluate, ApVariant, EvalResult};
use sixchan_core::sixchannel::{pack_pair_manifest, PairedSplit};
use sixchan_core::translate::{fake_split_name, train_translator, translate_split, Direction, TranslatorKind, TranslatorPair};

use crate::cache::{hash_json, Cache, Entry, CODE_VERSION};
use crate::error::{HarnessError, Result, Stage, StageContext};
use crate::grid::{grid_rows, GridRow, Table, TestSet, TrainSet};
use crate::report::{Environment, ExperimentReport, Failure, ReportRow, SeedResult, StageTiming};
use crate::spec::ExperimentSpec;

const TRANSLATOR_FILE: &str = "translator.bin";

/// Source split and direction of each generated fake split.
const FAKES: [(SplitName, Direction); 4] = [
    (SplitName::TrainDay, Direction::Forward),
    (SplitName::TrainNight, Direction::Backward),
    (SplitName::TestDay, Direction::Forward),
    (SplitName::TestNight, Direction::Backward),
];

/// Real split and fake counterpart of every six-channel set.
const PAIRS: [(&str, SplitName); 3] = [
    ("6ch-train-day", SplitName::TrainDay),
    ("6ch-train-night", SplitName::TrainNight),
    ("6ch-test-night", SplitName::TestNight),
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRecord {
    pub history: Vec<EpochRecord>,
    /// `(epoch, file)` of every saved checkpoint.
    pub checkpoints: Vec<(usize, String)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointEval {
    pub epoch: usize,
    pub map: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestRecord {
    pub checkpoints: Vec<CheckpointEval>,
    pub final_epoch: usize,
    pub final_map: f64,
    /// Highest mAP over the evaluated checkpoints, earliest on ties.
    pub best_epoch: usize,
    pub best_map: f64,
    /// Precision/recall curve of the final checkpoint.
    pub pr_curve: Vec<(f64, f64)>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub ground_truths: usize,
}

/// Detections of `model` on every image of `set`, scored against its boxes.
pub fn evaluate_set(model: &DetectionModel, set: &dyn ImageSet, iou_threshold: f64, variant: ApVariant) -> sixchan_core::Result<EvalResult> {
    let mut dets = BTreeMap::new();
    let mut gts = BTreeMap::new();
    for i in 0..set.len() {
        let id = set.id(i);
        dets.insert(id.clone(), model.detect_raw(&set.image(i)?)?);
        gts.insert(id, set.boxes(i).into_iter().map(Annotation::car).collect::<Vec<_>>());
    }
    evaluate(&dets, &gts, iou_threshold, variant)
}

/// Hash of everything in the spec that affects results.
pub fn config_hash(spec: &ExperimentSpec) -> String {
    let mut v = serde_json::to_value(spec).expect("spec serialises");
    if let Value::Object(m) = &mut v {
        m.remove("output_dir");
        m.insert("seeds".into(), json!(spec.sorted_seeds()));
    }
    hash_json(&json!({"code": CODE_VERSION, "spec": v}))
}

struct Run<'a> {
    spec: &'a ExperimentSpec,
    cache: Cache,
    timings: BTreeMap<(Stage, String), StageTiming>,
    data: Option<Entry<()>>,
    translator: Option<Entry<TranslatorKind>>,
    fakes: Option<Entry<()>>,
    concat: Option<Entry<()>>,
    trained: BTreeMap<(TrainSet, u64), Entry<TrainRecord>>,
    tested: BTreeMap<(TrainSet, TestSet, u64), TestRecord>,
}

impl<'a> Run<'a> {
    fn new(spec: &'a ExperimentSpec) -> Self {
        Self {
            spec,
            cache: Cache::new(cache_dir(spec)),
            timings: BTreeMap::new(),
            data: None,
            translator: None,
            fakes: None,
            concat: None,
            trained: BTreeMap::new(),
            tested: BTreeMap::new(),
        }
    }

    fn note<T>(&mut self, stage: Stage, job: String, entry: &Entry<T>) {
        self.timings.entry((stage, entry.hash.clone())).or_insert(StageTiming {
            stage,
            job,
            seconds: entry.seconds,
        });
    }

    fn data_dir(&self) -> &Path {
        &self.data.as_ref().expect("data stage ran").dir
    }

    fn fakes_dir(&self) -> &Path {
        &self.fakes.as_ref().expect("fake stage ran").dir
    }

    fn data_hash(&self) -> &str {
        &self.data.as_ref().expect("data stage ran").hash
    }

    fn fakes_hash(&self) -> &str {
        &self.fakes.as_ref().expect("fake stage ran").hash
    }

    fn real(&self, name: SplitName) -> sixchan_core::Result<DatasetSplit> {
        read_split(&self.data_dir().join(name.as_str()))
    }

    fn fake_of(&self, name: SplitName) -> sixchan_core::Result<DatasetSplit> {
        read_split(&self.fakes_dir().join(fake_split_name(name.as_str())))
    }

    fn run_data(&mut self) -> Result<()> {
        let spec = self.spec;
        let key = json!({"scene": spec.scene, "per_split": spec.per_split});
        let entry = self.cache.get_or_build(Stage::Data, &key, |dir| {
            let splits = generate_splits(&spec.scene, spec.per_split).stage(Stage::Data)?;
            for s in &splits {
                write_split(s, &dir.join(&s.name)).stage(Stage::Data)?;
            }
            Ok(())
        })?;
        self.note(Stage::Data, "generate splits".into(), &entry);
        self.data = Some(entry);
        Ok(())
    }

    fn run_translator(&mut self) -> Result<()> {
        let spec = self.spec;
        let params = match spec.translator {
            TranslatorKind::Oracle => json!({"oracle": night_oracle_params(&spec.scene)}),
            TranslatorKind::Learned => json!({"learned": spec.gan}),
        };
        let key = json!({"data": self.data_hash(), "translator": params});
        let data_dir = self.data_dir().to_path_buf();
        let entry = self.cache.get_or_build(Stage::Translator, &key, |dir| {
            let pair = match spec.translator {
                TranslatorKind::Oracle => TranslatorPair::oracle(Domain::Day, night_oracle_params(&spec.scene)),
                TranslatorKind::Learned => {
                    let day = read_split(&data_dir.join(SplitName::TrainDay.as_str())).stage(Stage::Translator)?;
                    let night = read_split(&data_dir.join(SplitName::TrainNight.as_str())).stage(Stage::Translator)?;
                    train_translator(&day, &night, &spec.gan)
                }
            }
            .stage(Stage::Translator)?;
            pair.save(&dir.join(TRANSLATOR_FILE)).stage(Stage::Translator)?;
            Ok(pair.kind())
        })?;
        self.note(Stage::Translator, format!("{:?} translator", spec.translator).to_lowercase(), &entry);
        self.translator = Some(entry);
        Ok(())
    }

    fn run_fakes(&mut self) -> Result<()> {
        let translator = self.translator.as_ref().expect("translator stage ran");
        let key = json!({"data": self.data_hash(), "translator": translator.hash});
        let translator_file = translator.dir.join(TRANSLATOR_FILE);
        let data_dir = self.data_dir().to_path_buf();
        let entry = self.cache.get_or_build(Stage::Fakes, &key, |dir| {
            let pair = TranslatorPair::load(&translator_file).stage(Stage::Fakes)?;
            for (name, direction) in FAKES {
                let split = read_split(&data_dir.join(name.as_str())).stage(Stage::Fakes)?;
                let fake = translate_split(&pair, &split, direction).stage(Stage::Fakes)?;
                write_split(&fake, &dir.join(&fake.name)).stage(Stage::Fakes)?;
            }
            Ok(())
        })?;
        self.note(Stage::Fakes, "translate splits".into(), &entry);
        self.fakes = Some(entry);
        Ok(())
    }

    fn run_concat(&mut self) -> Result<()> {
        let order = self.spec.channel_order;
        let key = json!({"data": self.data_hash(), "fakes": self.fakes_hash(), "order": order});
        let (data_dir, fakes_dir) = (self.data_dir().to_path_buf(), self.fakes_dir().to_path_buf());
        let entry = self.cache.get_or_build(Stage::Concat, &key, |dir| {
            for (file, real) in PAIRS {
                let manifest = pack_pair_manifest(
                    &data_dir.join(real.as_str()),
                    &fakes_dir.join(fake_split_name(real.as_str())),
                    order,
                )
                .stage(Stage::Concat)?;
                manifest.save(&dir.join(format!("{file}.json"))).stage(Stage::Concat)?;
            }
            Ok(())
        })?;
        self.note(Stage::Concat, "pair six-channel sets".into(), &entry);
        self.concat = Some(entry);
        Ok(())
    }

    fn detector_config(&self, channels: usize) -> DetectorConfig {
        DetectorConfig {
            input_channels: channels,
            ..self.spec.detector.clone()
        }
    }

    /// Loads the splits behind a training set and hands them to `f` as one
    /// image set.
    fn with_train_set<R>(&self, set: TrainSet, f: impl FnOnce(&dyn ImageSet) -> Result<R>) -> Result<R> {
        let order = self.spec.channel_order;
        let s = Stage::Train;
        match set {
            TrainSet::TrainDay => f(&self.real(SplitName::TrainDay).stage(s)?),
            TrainSet::TrainNight => f(&self.real(SplitName::TrainNight).stage(s)?),
            TrainSet::FakeTrainNight => f(&self.fake_of(SplitName::TrainDay).stage(s)?),
            TrainSet::FakeTrainDay => f(&self.fake_of(SplitName::TrainNight).stage(s)?),
            TrainSet::TrainDayNight => {
                let (day, night) = (self.real(SplitName::TrainDay).stage(s)?, self.real(SplitName::TrainNight).stage(s)?);
                f(&Chain::new(vec![&day, &night]).stage(s)?)
            }
            TrainSet::SixTrainDay | TrainSet::SixTrainNight => {
                let name = if set == TrainSet::SixTrainDay { SplitName::TrainDay } else { SplitName::TrainNight };
                let (real, fake) = (self.real(name).stage(s)?, self.fake_of(name).stage(s)?);
                f(&PairedSplit::new(&real, &fake, order).stage(s)?)
            }
            TrainSet::SixTrainDayNight => {
                let day = self.real(SplitName::TrainDay).stage(s)?;
                let fake_night = self.fake_of(SplitName::TrainDay).stage(s)?;
                let night = self.real(SplitName::TrainNight).stage(s)?;
                let fake_day = self.fake_of(SplitName::TrainNight).stage(s)?;
                let a = PairedSplit::new(&day, &fake_night, order).stage(s)?;
                let b = PairedSplit::new(&night, &fake_day, order).stage(s)?;
                f(&Chain::new(vec![&a, &b]).stage(s)?)
            }
        }
    }

    fn with_test_set<R>(&self, set: TestSet, f: impl FnOnce(&dyn ImageSet) -> Result<R>) -> Result<R> {
        let s = Stage::Test;
        match set {
            TestSet::TestNight => f(&self.real(SplitName::TestNight).stage(s)?),
            TestSet::TestDay => f(&self.real(SplitName::TestDay).stage(s)?),
            TestSet::FakeTestDay => f(&self.fake_of(SplitName::TestNight).stage(s)?),
            TestSet::FakeTestNight => f(&self.fake_of(SplitName::TestDay).stage(s)?),
            TestSet::SixTestNight => {
                let (real, fake) = (self.real(SplitName::TestNight).stage(s)?, self.fake_of(SplitName::TestNight).stage(s)?);
                f(&PairedSplit::new(&real, &fake, self.spec.channel_order).stage(s)?)
            }
        }
    }

    fn train_key(&self, set: TrainSet, seed: u64) -> Value {
        let spec = self.spec;
        let schedule = sixchan_core::detector::TrainSchedule {
            seed,
            ..spec.schedule.clone()
        };
        json!({
            "data": self.data_hash(),
            "fakes": set.uses_translator().then(|| self.fakes_hash()),
            "order": (set.channels() == 6).then_some(spec.channel_order),
            "train": set,
            "detector": self.detector_config(set.channels()),
            "schedule": schedule,
            "eval_epochs": spec.eval_epochs(),
        })
    }

    fn run_train(&mut self, set: TrainSet, seed: u64) -> Result<()> {
        if self.trained.contains_key(&(set, seed)) {
            return Ok(());
        }
        let key = self.train_key(set, seed);
        let spec = self.spec;
        let config = self.detector_config(set.channels());
        let schedule = sixchan_core::detector::TrainSchedule {
            seed,
            ..spec.schedule.clone()
        };
        let eval_epochs = spec.eval_epochs();
        log::info!("training on {} (seed {seed})", set.describe());
        let entry = self.cache.get_or_build(Stage::Train, &key, |dir| {
            self.with_train_set(set, |images| {
                let mut checkpoints = Vec::new();
                let mut save = |model: &DetectionModel| -> sixchan_core::Result<()> {
                    let epoch = model.history.len();
                    if eval_epochs.contains(&epoch) {
                        let file = format!("epoch-{epoch}.bin");
                        model.save(&dir.join(&file))?;
                        checkpoints.push((epoch, file));
                    }
                    Ok(())
                };
                let model = train_detector(images, &config, &schedule, &InitMode::Random, &mut save).stage(Stage::Train)?;
                if schedule.epochs == 0 {
                    save(&model).stage(Stage::Train)?;
                }
                Ok(TrainRecord {
                    history: model.history,
                    checkpoints,
                })
            })
        })?;
        self.note(Stage::Train, format!("train {} seed {seed}", set.slug()), &entry);
        self.trained.insert((set, seed), entry);
        Ok(())
    }

    fn run_test(&mut self, row: &GridRow, seed: u64) -> Result<()> {
        if self.tested.contains_key(&(row.train, row.test, seed)) {
            return Ok(());
        }
        let spec = self.spec;
        let trained = &self.trained[&(row.train, seed)];
        let key = json!({
            "model": trained.hash,
            "data": self.data_hash(),
            "fakes": row.test.uses_translator().then(|| self.fakes_hash()),
            "order": (row.test.channels() == 6).then_some(spec.channel_order),
            "test": row.test,
            "iou_threshold": spec.iou_threshold,
            "ap_variant": spec.ap_variant,
        });
        let (model_dir, checkpoints) = (trained.dir.clone(), trained.value.checkpoints.clone());
        let entry = self.cache.get_or_build(Stage::Test, &key, |_| {
            self.with_test_set(row.test, |images| test_checkpoints(&model_dir, &checkpoints, images, spec))
        })?;
        self.note(
            Stage::Test,
            format!("test {} on {} seed {seed}", row.train.slug(), row.test.slug()),
            &entry,
        );
        self.tested.insert((row.train, row.test, seed), entry.value);
        Ok(())
    }

    fn execute(&mut self, rows: &[GridRow]) -> Result<()> {
        self.run_data()?;
        self.run_translator()?;
        self.run_fakes()?;
        if rows.iter().any(|r| r.channels() == 6) {
            self.run_concat()?;
        }
        let seeds = self.spec.sorted_seeds();
        let train_sets: BTreeSet<TrainSet> = rows.iter().map(|r| r.train).collect();
        for &seed in &seeds {
            for &set in &train_sets {
                self.run_train(set, seed)?;
            }
        }
        for &seed in &seeds {
            for row in rows {
                self.run_test(row, seed)?;
            }
        }
        Ok(())
    }

    fn report(&self, rows: &[GridRow], failure: Option<Failure>) -> ExperimentReport {
        let seeds = self.spec.sorted_seeds();
        let report_rows = rows
            .iter()
            .map(|row| {
                let per_seed = seeds
                    .iter()
                    .filter_map(|&seed| {
                        self.tested.get(&(row.train, row.test, seed)).map(|t| SeedResult {
                            seed,
                            final_map: t.final_map,
                            final_epoch: t.final_epoch,
                            best_map: t.best_map,
                            best_epoch: t.best_epoch,
                            pr_curve: t.pr_curve.clone(),
                        })
                    })
                    .collect();
                ReportRow::new(row, per_seed)
            })
            .collect();
        let mut timings: Vec<StageTiming> = self.timings.values().cloned().collect();
        timings.sort_by(|a, b| a.stage.cmp(&b.stage).then_with(|| a.job.cmp(&b.job)));
        ExperimentReport::new(
            self.spec,
            report_rows,
            Environment {
                seeds,
                config_hash: config_hash(self.spec),
                code_version: CODE_VERSION.to_string(),
                per_split: self.spec.per_split,
                epochs: self.spec.schedule.epochs,
                eval_epochs: self.spec.eval_epochs(),
                total_seconds: timings.iter().map(|t| t.seconds).sum(),
                stages: timings,
            },
            failure,
        )
    }
}

fn test_checkpoints(model_dir: &Path, checkpoints: &[(usize, String)], images: &dyn ImageSet, spec: &ExperimentSpec) -> Result<TestRecord> {
    let mut evals = Vec::with_capacity(checkpoints.len());
    let mut last: Option<EvalResult> = None;
    for (epoch, file) in checkpoints {
        let model = DetectionModel::load(&model_dir.join(file)).stage(Stage::Test)?;
        let r = evaluate_set(&model, images, spec.iou_threshold, spec.ap_variant).stage(Stage::Test)?;
        log::info!("  epoch {epoch}: mAP {:.4}", r.map);
        evals.push(CheckpointEval { epoch: *epoch, map: r.map });
        last = Some(r);
    }
    let last = last.ok_or_else(|| HarnessError::Config("no checkpoint to evaluate".into()))?;
    let best = evals
        .iter()
        .fold(&evals[0], |b, e| if e.map > b.map { e } else { b });
    Ok(TestRecord {
        final_epoch: evals[evals.len() - 1].epoch,
        final_map: last.map,
        best_epoch: best.epoch,
        best_map: best.map,
        checkpoints: evals.clone(),
        pr_curve: last.pr_curve,
        true_positives: last.true_positives,
        false_positives: last.false_positives,
        ground_truths: last.ground_truths,
    })
}

/// Runs every stage for the spec's grid and assembles the report. A stage
/// failure stops the run; the report then carries the finished rows and the
/// failing stage.
pub fn run_pipeline(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let rows = grid_rows(spec.grid);
    let mut run = Run::new(spec);
    let failure = match run.execute(&rows) {
        Ok(()) => None,
        Err(HarnessError::Config(m)) => return Err(HarnessError::Config(m)),
        Err(e) => {
            log::error!("{e}");
            Some(Failure {
                stage: e.stage().unwrap_or(Stage::Report),
                message: e.to_string(),
            })
        }
    };
    Ok(run.report(&rows, failure))
}

/// Runs one table of the grid.
pub fn run_table(spec: &ExperimentSpec, table: Table) -> Result<ExperimentReport> {
    let grid = match table {
        Table::Table1 => crate::grid::Grid::Table1,
        Table::Table2 => crate::grid::Grid::Table2,
        Table::Table3 => crate::grid::Grid::Table3,
    };
    run_pipeline(&ExperimentSpec { grid, ..spec.clone() })
}

pub fn run_table1(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    run_table(spec, Table::Table1)
}

pub fn run_table2(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    run_table(spec, Table::Table2)
}

pub fn run_table3(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    run_table(spec, Table::Table3)
}

pub fn cache_dir(spec: &ExperimentSpec) -> PathBuf {
    spec.output_dir.join("cache")
}

/// Outputs of one (row, seed) job.
#[derive(Debug, Clone)]
pub struct JobResult {
    /// Cache directory holding the job's checkpoints.
    pub train_dir: PathBuf,
    pub train: TrainRecord,
    pub test: TestRecord,
}

/// Runs (or fetches from the cache) the stages one grid row needs for one
/// seed.
pub fn run_job(spec: &ExperimentSpec, row: &GridRow, seed: u64) -> Result<JobResult> {
    spec.validate()?;
    let mut run = Run::new(spec);
    run.run_data()?;
    run.run_translator()?;
    run.run_fakes()?;
    if row.channels() == 6 {
        run.run_concat()?;
    }
    run.run_train(row.train, seed)?;
    run.run_test(row, seed)?;
    let trained = &run.trained[&(row.train, seed)];
    Ok(JobResult {
        train_dir: trained.dir.clone(),
        train: trained.value.clone(),
        test: run.tested[&(row.train, row.test, seed)].clone(),
    })
}
