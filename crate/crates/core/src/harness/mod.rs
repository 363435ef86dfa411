//! Experiment orchestration: cross-validation and cross-dataset runs,
//! result tables and the reconstruction-latency benchmark.
//!
//! Seeds flow `experiment seed → fold/run → trajectory`:
//!
//! | stream                        | seed                             |
//! |-------------------------------|----------------------------------|
//! | CV shuffle                    | `mix_seed(seed, 1)`              |
//! | implicit synthetic data       | `mix_seed(seed, 2)` (`+1` test)  |
//! | train-side mechanism, fold f  | `mix_seed(seed, 100 + f)`        |
//! | test-side mechanism, fold f   | `mix_seed(seed, 200 + f)`        |
//! | model init, fold f            | `mix_seed(seed, 300 + f)`        |
//! | training (split, batches)     | `mix_seed(seed, 400 + f)`        |
//!
//! Within a mechanism stream, trajectory `i` draws from `sub_rng(stream, i)`.

pub mod cli;
pub mod kv;

use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::dataio::{read_canonical_file, BoundingBox, Trajectory};
use crate::encoding::fit_encoder;
use crate::error::{Error, Result};
use crate::geo::ReferenceFrame;
use crate::mechanisms::{protect, MechanismConfig, ProtectedPair};
use crate::metrics::{evaluate, mean_ci99, summarize, write_records, EvalRecord, ResultRow, Summary, RESULT_HEADER};
use crate::model::{train, ModelConfig, TrainConfig, TrainedModel};
use crate::rng::{mix_seed, sub_rng};
use crate::synth::{generate, SynthConfig};
use kv::KeyValues;

/// Test folds for `n` items: a seeded shuffle cut into `k` contiguous,
/// near-equal pieces.
pub fn crossval_folds(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::config(format!("cross-validation needs k >= 2, got {k}")));
    }
    if n < k {
        return Err(Error::domain(format!("{n} items cannot fill {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut sub_rng(seed, 0));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(order[start..start + size].to_vec());
        start += size;
    }
    Ok(folds)
}

/// `(train, test)` partitions, one per fold.
pub fn crossval_split<T: Clone>(items: &[T], k: usize, seed: u64) -> Result<Vec<(Vec<T>, Vec<T>)>> {
    let folds = crossval_folds(items.len(), k, seed)?;
    let mut fold_of = vec![0; items.len()];
    for (f, idx) in folds.iter().enumerate() {
        idx.iter().for_each(|&i| fold_of[i] = f);
    }
    Ok(folds
        .iter()
        .enumerate()
        .map(|(f, test)| {
            let train = (0..items.len()).filter(|&i| fold_of[i] != f).map(|i| items[i].clone()).collect();
            (train, test.iter().map(|&i| items[i].clone()).collect())
        })
        .collect())
}

/// Where a dataset comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Generated from the experiment's synth settings; an explicit seed
    /// (`synth:<seed>`) gives an independent second dataset.
    Synth(Option<u64>),
    /// A canonical CSV file.
    Csv(PathBuf),
}

impl FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.contains(',') || s.is_empty() {
            return Err(Error::config(format!("dataset reference {s:?} must be non-empty and comma-free")));
        }
        if s == "synth" {
            return Ok(DataSource::Synth(None));
        }
        if let Some(seed) = s.strip_prefix("synth:") {
            let seed = seed.parse().map_err(|_| Error::config(format!("bad synthetic seed in {s:?}")))?;
            return Ok(DataSource::Synth(Some(seed)));
        }
        Ok(DataSource::Csv(PathBuf::from(s)))
    }
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::Synth(None) => f.write_str("synth"),
            DataSource::Synth(Some(s)) => write!(f, "synth:{s}"),
            DataSource::Csv(p) => write!(f, "{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub id: String,
    pub dataset_train: DataSource,
    pub dataset_test: DataSource,
    pub mech_train: MechanismConfig,
    pub mech_test: MechanismConfig,
    /// Fold count in cross-validation mode.
    pub folds: usize,
    /// How many of the folds to run (desk-scale runs use fewer than all).
    pub folds_run: usize,
    /// Repetitions in cross-dataset mode.
    pub runs: usize,
    pub seed: u64,
    /// Result table, appended to.
    pub output: PathBuf,
    /// Optional per-trajectory records CSV, overwritten.
    pub records: Option<PathBuf>,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    /// `0` derives `max_len` from the data.
    pub max_len: usize,
    pub train: TrainConfig,
    /// Parallel protection and evaluation (results are identical).
    pub parallel: bool,
}

impl ExperimentConfig {
    pub fn is_cross_validation(&self) -> bool {
        self.dataset_train == self.dataset_test
    }

    pub fn from_kv(mut kv: KeyValues) -> Result<Self> {
        let required = |v: Option<String>, k: &str| v.ok_or_else(|| Error::config(format!("missing {k}")));
        let id: String = required(kv.take("id")?, "id")?;
        if id.contains(',') {
            return Err(Error::config("id must not contain commas"));
        }
        let dataset_train: DataSource =
            kv.take("dataset_train")?.ok_or_else(|| Error::config("missing dataset_train"))?;
        let dataset_test: DataSource = kv.take_or("dataset_test", dataset_train.clone())?;
        let shared = kv.mechanism_shared()?;
        let mech_train = kv.mechanism("mech_train", "eps_train", shared)?;
        let mech_test = kv.mechanism("mech_test", "eps_test", shared)?;
        let folds = kv.take_or("folds", 5)?;
        let folds_run = kv.take_or("folds_run", folds)?;
        let runs = kv.take_or("runs", 5)?;
        let seed = kv.take_or("seed", 0)?;
        let output: PathBuf = kv.take_or("output", PathBuf::from("results.csv"))?;
        let records = kv.take("records")?;
        let max_len = kv.take_or("max_len", 0)?;
        let parallel = kv.take_or("parallel", false)?;
        let synth = kv.synth(SynthConfig::default())?;
        let model = kv.model(ModelConfig::new(1))?;
        let train = kv.train(TrainConfig::default())?;
        kv.finish()?;
        let cfg = ExperimentConfig {
            id,
            dataset_train,
            dataset_test,
            mech_train,
            mech_test,
            folds,
            folds_run,
            runs,
            seed,
            output,
            records,
            synth,
            model,
            max_len,
            train,
            parallel,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_kv(KeyValues::read(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_cross_validation() {
            if self.folds < 2 {
                return Err(Error::config(format!("folds must be >= 2, got {}", self.folds)));
            }
            if self.folds_run == 0 || self.folds_run > self.folds {
                return Err(Error::config(format!("folds_run must be in 1..={}", self.folds)));
            }
        } else if self.runs == 0 {
            return Err(Error::config("runs must be >= 1"));
        }
        self.mech_train.validate()?;
        self.mech_test.validate()?;
        self.train.validate()
    }

    fn row(&self, summary: Option<Summary>) -> ResultRow {
        ResultRow {
            id: self.id.clone(),
            dataset_train: self.dataset_train.to_string(),
            dataset_test: self.dataset_test.to_string(),
            mech_train: self.mech_train.kind.to_string(),
            mech_test: self.mech_test.kind.to_string(),
            eps_train: self.mech_train.epsilon,
            eps_test: self.mech_test.epsilon,
            summary,
        }
    }

    fn load(&self, src: &DataSource, offset: u64) -> Result<Vec<Trajectory>> {
        match src {
            DataSource::Synth(seed) => {
                let mut cfg = self.synth.clone();
                cfg.seed = seed.unwrap_or_else(|| mix_seed(self.seed, 2 + offset));
                generate(&cfg)
            }
            DataSource::Csv(path) => {
                let trajs = read_canonical_file(path)?;
                if trajs.is_empty() {
                    return Err(Error::domain(format!("{} holds no trajectories", path.display())));
                }
                Ok(trajs)
            }
        }
    }
}

/// The projection frame at a dataset's bounding-box midpoint.
pub fn dataset_frame(trajs: &[Trajectory]) -> Result<ReferenceFrame> {
    let b = BoundingBox::of(trajs).ok_or_else(|| Error::domain("empty dataset"))?;
    ReferenceFrame::new((b.lat_min + b.lat_max) / 2.0, (b.lon_min + b.lon_max) / 2.0)
}

/// Maps `f` over `items` in order, optionally on all cores. Output order
/// and content do not depend on the thread count.
fn ordered_map<T: Sync, U: Send>(
    items: &[T],
    parallel: bool,
    f: impl Fn(usize, &T) -> Result<U> + Sync,
) -> Result<Vec<U>> {
    let threads = if parallel { std::thread::available_parallelism().map_or(1, |n| n.get()) } else { 1 };
    if threads <= 1 || items.len() < 2 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                s.spawn(move || part.iter().enumerate().map(|(j, t)| f(c * chunk + j, t)).collect::<Result<Vec<U>>>())
            })
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().map_err(|_| Error::domain("worker thread panicked"))??);
        }
        Ok(out)
    })
}

/// Same result as [`crate::mechanisms::protect_dataset`].
pub fn protect_all(
    trajs: &[Trajectory],
    mech: &MechanismConfig,
    frame: &ReferenceFrame,
    parallel: bool,
) -> Result<Vec<ProtectedPair>> {
    mech.validate()?;
    ordered_map(trajs, parallel, |i, t| {
        let (protected, _) = protect(t, mech, frame, &mut sub_rng(mech.rng_seed, i as u64))?;
        Ok(ProtectedPair { original: t.clone(), protected, mechanism: *mech })
    })
}

/// Per-trajectory metrics for reconstructions of `pairs`.
pub fn evaluate_all(
    pairs: &[ProtectedPair],
    recon: &[Trajectory],
    frame: &ReferenceFrame,
    parallel: bool,
) -> Result<Vec<EvalRecord>> {
    let joined: Vec<(&ProtectedPair, &Trajectory)> = pairs.iter().zip(recon).collect();
    ordered_map(&joined, parallel, |_, (p, r)| evaluate(&p.original, &p.protected, r, frame))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub row: ResultRow,
    pub summary: Summary,
    pub records: Vec<EvalRecord>,
    /// Human-readable notes, e.g. encoder refits.
    pub notes: Vec<String>,
}

fn overlaps(a: &BoundingBox, b: &BoundingBox) -> bool {
    a.lat_min <= b.lat_max && b.lat_min <= a.lat_max && a.lon_min <= b.lon_max && b.lon_min <= a.lon_max
}

struct Unit<'a> {
    index: u64,
    train: &'a [Trajectory],
    test: &'a [Trajectory],
}

fn run_unit(
    cfg: &ExperimentConfig,
    unit: &Unit,
    max_len: usize,
    log: &mut dyn FnMut(&str),
    notes: &mut Vec<String>,
) -> Result<Vec<EvalRecord>> {
    let f = unit.index;
    let train_frame = dataset_frame(unit.train)?;
    let test_frame = dataset_frame(unit.test)?;
    let train_pairs =
        protect_all(unit.train, &cfg.mech_train.with_seed(mix_seed(cfg.seed, 100 + f)), &train_frame, cfg.parallel)?;
    let test_pairs =
        protect_all(unit.test, &cfg.mech_test.with_seed(mix_seed(cfg.seed, 200 + f)), &test_frame, cfg.parallel)?;

    let encoder = fit_encoder(unit.train, max_len)?;
    let model_cfg = ModelConfig { max_len, ..cfg.model };
    let mut model = TrainedModel::build(model_cfg, encoder, mix_seed(cfg.seed, 300 + f))?;
    let tc = TrainConfig { seed: mix_seed(cfg.seed, 400 + f), ..cfg.train };
    log(&format!("[{}] unit {f}: training on {} pairs, testing on {}", cfg.id, train_pairs.len(), test_pairs.len()));
    train(&mut model, &train_pairs, &tc, &mut |e| {
        log(&format!(
            "[{}] unit {f} epoch {} train_loss={:.3} val_loss={:.3}",
            cfg.id, e.epoch, e.train_loss, e.val_loss
        ))
    })?;

    let train_box = BoundingBox::of(unit.train).ok_or_else(|| Error::domain("empty training set"))?;
    let test_box = BoundingBox::of(unit.test).ok_or_else(|| Error::domain("empty test set"))?;
    if !overlaps(&train_box, &test_box) {
        model.encoder = fit_encoder(unit.test, max_len)?;
        let note = format!("unit {f}: test region lies outside the training box; encoder refit on test originals");
        log(&format!("[{}] {note}", cfg.id));
        notes.push(note);
    }
    let protected: Vec<Trajectory> = test_pairs.iter().map(|p| p.protected.clone()).collect();
    let recon = model.reconstruct(&protected)?;
    evaluate_all(&test_pairs, &recon, &test_frame, cfg.parallel)
}

fn append_row(path: &Path, row: &ResultRow) -> Result<()> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{RESULT_HEADER}")?;
    }
    writeln!(f, "{}", row.to_csv())?;
    Ok(())
}

fn flush_records(path: &Option<PathBuf>, records: &[EvalRecord]) -> Result<()> {
    if let Some(p) = path {
        let mut w = BufWriter::new(fs::File::create(p)?);
        write_records(records, &mut w)?;
        w.flush()?;
    }
    Ok(())
}

/// Runs one experiment and appends its summary to `cfg.output`. On failure
/// the records gathered so far are flushed and a `failed` row is appended
/// before the error is returned.
pub fn run_experiment(cfg: &ExperimentConfig, log: &mut dyn FnMut(&str)) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let mut records = Vec::new();
    let mut notes = Vec::new();
    let result = run_units(cfg, log, &mut records, &mut notes).and_then(|()| summarize(&records));
    match result {
        Ok(summary) => {
            let row = cfg.row(Some(summary.clone()));
            flush_records(&cfg.records, &records)?;
            append_row(&cfg.output, &row)?;
            Ok(ExperimentOutcome { row, summary, records, notes })
        }
        Err(e) => {
            log(&format!("[{}] failed: {e}", cfg.id));
            flush_records(&cfg.records, &records)?;
            append_row(&cfg.output, &cfg.row(None))?;
            Err(e)
        }
    }
}

fn run_units(
    cfg: &ExperimentConfig,
    log: &mut dyn FnMut(&str),
    records: &mut Vec<EvalRecord>,
    notes: &mut Vec<String>,
) -> Result<()> {
    let train_set = cfg.load(&cfg.dataset_train, 0)?;
    if cfg.is_cross_validation() {
        let max_len = resolve_max_len(cfg, &[&train_set])?;
        let splits = crossval_split(&train_set, cfg.folds, mix_seed(cfg.seed, 1))?;
        for (f, (train, test)) in splits.iter().take(cfg.folds_run).enumerate() {
            let unit = Unit { index: f as u64, train, test };
            records.extend(run_unit(cfg, &unit, max_len, log, notes)?);
        }
    } else {
        let test_set = cfg.load(&cfg.dataset_test, 1)?;
        let max_len = resolve_max_len(cfg, &[&train_set, &test_set])?;
        for r in 0..cfg.runs {
            let unit = Unit { index: r as u64, train: &train_set, test: &test_set };
            records.extend(run_unit(cfg, &unit, max_len, log, notes)?);
        }
    }
    Ok(())
}

fn resolve_max_len(cfg: &ExperimentConfig, sets: &[&[Trajectory]]) -> Result<usize> {
    let longest = sets.iter().flat_map(|s| s.iter()).map(Trajectory::len).max().unwrap_or(0);
    match cfg.max_len {
        0 => Ok(longest.max(1)),
        m if m >= longest => Ok(m),
        m => Err(Error::config(format!("max_len {m} is shorter than the longest trajectory ({longest})"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchStats {
    /// One wall-clock sample per trajectory per repetition, milliseconds.
    pub samples_ms: Vec<f64>,
    pub mean_ms: f64,
    /// 99% half-width of the mean; 0 for a single sample.
    pub ci99_ms: f64,
}

impl fmt::Display for BenchStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "samples={} mean_ms={:.3} ci99_ms=[{:.3}, {:.3}]",
            self.samples_ms.len(),
            self.mean_ms,
            self.mean_ms - self.ci99_ms,
            self.mean_ms + self.ci99_ms
        )
    }
}

/// Per-trajectory reconstruction latency, encoding and decoding included.
/// One warm-up reconstruction precedes the measurements.
pub fn bench_reconstruct(model: &TrainedModel, trajs: &[Trajectory], repetitions: usize) -> Result<BenchStats> {
    let first = trajs.first().ok_or_else(|| Error::domain("benchmark needs at least one trajectory"))?;
    if repetitions == 0 {
        return Err(Error::config("repetitions must be >= 1"));
    }
    model.reconstruct(std::slice::from_ref(first))?;
    let mut samples_ms = Vec::with_capacity(trajs.len() * repetitions);
    for _ in 0..repetitions {
        for t in trajs {
            let start = Instant::now();
            let out = model.reconstruct(std::slice::from_ref(t))?;
            samples_ms.push(start.elapsed().as_secs_f64() * 1e3);
            std::hint::black_box(out);
        }
    }
    let (mean_ms, ci99_ms) = mean_ci99(&samples_ms);
    Ok(BenchStats { samples_ms, mean_ms, ci99_ms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::MechanismKind;

    #[test]
    fn ten_items_five_folds() {
        let folds = crossval_folds(10, 5, 3).unwrap();
        assert!(folds.iter().all(|f| f.len() == 2));
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(folds, crossval_folds(10, 5, 3).unwrap());
        assert!(crossval_folds(3, 5, 0).is_err());
        assert!(crossval_folds(10, 1, 0).is_err());
    }

    #[test]
    fn split_partitions() {
        let items: Vec<u32> = (0..23).collect();
        let splits = crossval_split(&items, 5, 9).unwrap();
        let sizes: Vec<usize> = splits.iter().map(|(_, t)| t.len()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for (train, test) in &splits {
            assert_eq!(train.len() + test.len(), 23);
            assert!(test.iter().all(|x| !train.contains(x)));
        }
    }

    #[test]
    fn data_source_syntax() {
        assert_eq!("synth".parse::<DataSource>().unwrap(), DataSource::Synth(None));
        assert_eq!("synth:7".parse::<DataSource>().unwrap(), DataSource::Synth(Some(7)));
        assert_eq!("a/b.csv".parse::<DataSource>().unwrap().to_string(), "a/b.csv");
        assert!("x,y".parse::<DataSource>().is_err());
        assert!("synth:x".parse::<DataSource>().is_err());
    }

    #[test]
    fn experiment_config_parsing() {
        let text = "id = row8\ndataset_train = synth\nmech_train = sdd\neps_train = 1.0\nmech_test = sdd\neps_test = 1.0\nfolds_run = 1\nn_users = 4\nmax_epochs = 5\nearly_stop_patience = 2\n";
        let cfg = ExperimentConfig::from_kv(text.parse().unwrap()).unwrap();
        assert!(cfg.is_cross_validation());
        assert_eq!((cfg.folds, cfg.folds_run, cfg.synth.n_users, cfg.train.max_epochs), (5, 1, 4, 5));
        assert_eq!(cfg.mech_test.kind, MechanismKind::Sdd);
        let row = cfg.row(None).to_csv();
        assert_eq!(row, "row8,synth,synth,sdd,sdd,1,1,failed,failed,failed,failed");
        assert!(ExperimentConfig::from_kv(format!("{text}folds = 1").parse().unwrap()).is_err());
        assert!(ExperimentConfig::from_kv(format!("{text}bogus = 1").parse().unwrap()).is_err());
    }

    #[test]
    fn parallel_protection_matches_sequential() {
        let cfg = SynthConfig { n_users: 3, trajs_per_user: 5, ..SynthConfig::default() };
        let trajs = generate(&cfg).unwrap();
        let frame = cfg.frame().unwrap();
        for kind in [MechanismKind::CNoise, MechanismKind::Sdd] {
            let m = MechanismConfig::new(kind, 1.0).with_seed(4);
            let seq = protect_all(&trajs, &m, &frame, false).unwrap();
            assert_eq!(seq, protect_all(&trajs, &m, &frame, true).unwrap());
            assert_eq!(seq, crate::mechanisms::protect_dataset(&trajs, &m, &frame).unwrap().pairs);
        }
    }

    #[test]
    fn single_repetition_has_zero_ci() {
        let enc = crate::encoding::EncoderConfig::new(ReferenceFrame::new(39.9, 116.4).unwrap(), 0.1, 0.1, 8).unwrap();
        let cfg = ModelConfig { fusion_units: 8, lstm_units: 4, ..ModelConfig::new(8) };
        let m = TrainedModel::build(cfg, enc, 1).unwrap();
        let t = Trajectory::new("u", "t", vec![crate::dataio::RawPoint::new(39.9, 116.4, 0); 5]);
        let s = bench_reconstruct(&m, &[t], 1).unwrap();
        assert_eq!((s.samples_ms.len(), s.ci99_ms), (1, 0.0));
        assert!(s.mean_ms > 0.0);
    }
}
