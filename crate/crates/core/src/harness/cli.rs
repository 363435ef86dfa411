//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 runtime
//! failure.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::kv::KeyValues;
use super::{bench_reconstruct, dataset_frame, evaluate_all, protect_all, run_experiment, ExperimentConfig};
use crate::dataio::{self, read_canonical_file, write_canonical_file, PreprocessConfig, Trajectory};
use crate::encoding::fit_encoder;
use crate::error::{Error, Result};
use crate::mechanisms::{MechanismKind, ProtectedPair};
use crate::metrics::{summarize, write_records};
use crate::model::{self, ModelConfig, TrainConfig, TrainedModel};
use crate::neuralnet::gradcheck::{grad_check, layer_checks, TOL_RECURRENT};
use crate::synth::{generate, SynthConfig};

#[derive(Debug, Parser)]
#[command(name = "raopt", version, about = "Trajectory privacy mechanisms and the RAoPT reconstruction attack")]
pub struct Cli {
    /// `key = value` config file for the subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output path.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Suppress progress logging.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RawFormat {
    Tdrive,
    Geolife,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean a raw T-Drive or GeoLife dataset into canonical CSV.
    Preprocess {
        /// T-Drive file or directory of files; GeoLife root directory.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        format: RawFormat,
    },
    /// Generate a synthetic dataset as canonical CSV.
    Synth,
    /// Apply a privacy mechanism to a canonical CSV.
    Protect {
        #[arg(long)]
        input: PathBuf,
        /// `cnoise` or `sdd` (overrides the config's `kind`).
        #[arg(long)]
        mechanism: Option<String>,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Train a model on original/protected CSVs matched by trajectory id.
    Train(TrainArgs),
    /// Reconstruct protected trajectories with a trained model.
    Reconstruct {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Score reconstructions; writes per-trajectory records.
    Evaluate {
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        protected: PathBuf,
        #[arg(long)]
        reconstructed: PathBuf,
    },
    /// Run a full experiment from an experiment config.
    Pipeline,
    /// Measure per-trajectory reconstruction latency.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 10)]
        repetitions: usize,
    },
    /// Finite-difference gradient checks of every layer and the full model.
    Gradcheck,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub original: PathBuf,
    #[arg(long)]
    pub protected: PathBuf,
    /// Also write the per-epoch loss history CSV here.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn config(cli: &Cli) -> Result<KeyValues> {
    match &cli.config {
        Some(p) => KeyValues::read(p),
        None => Ok(KeyValues::default()),
    }
}

fn out_path(cli: &Cli) -> Result<&Path> {
    cli.out.as_deref().ok_or_else(|| Error::config("--out is required for this command"))
}

fn read_raw(input: &Path, format: RawFormat) -> Result<dataio::Parsed> {
    match format {
        RawFormat::Geolife => dataio::parse_geolife(input),
        RawFormat::Tdrive if input.is_dir() => {
            let mut files: Vec<PathBuf> =
                fs::read_dir(input)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
            files.retain(|p| p.is_file());
            files.sort();
            let mut text = String::new();
            for f in files {
                text.push_str(&fs::read_to_string(f)?);
                if !text.ends_with('\n') {
                    text.push('\n');
                }
            }
            dataio::parse_tdrive(text.as_bytes())
        }
        RawFormat::Tdrive => dataio::parse_tdrive(std::io::BufReader::new(fs::File::open(input)?)),
    }
}

fn pair_up(originals: Vec<Trajectory>, protected: Vec<Trajectory>) -> Result<Vec<ProtectedPair>> {
    let mut by_id: HashMap<(String, String), Trajectory> =
        protected.into_iter().map(|t| ((t.user_id.clone(), t.traj_id.clone()), t)).collect();
    originals
        .into_iter()
        .map(|o| {
            let p = by_id
                .remove(&(o.user_id.clone(), o.traj_id.clone()))
                .ok_or_else(|| Error::domain(format!("no protected version of trajectory {}", o.traj_id)))?;
            if p.len() != o.len() {
                return Err(Error::domain(format!("trajectory {} changed length under protection", o.traj_id)));
            }
            Ok(ProtectedPair {
                original: o,
                protected: p,
                // Unknown here; only carried for bookkeeping.
                mechanism: crate::mechanisms::MechanismConfig::new(MechanismKind::CNoise, 1.0),
            })
        })
        .collect()
}

fn execute(cli: &Cli) -> Result<()> {
    let quiet = cli.quiet;
    let mut log = |msg: &str| {
        if !quiet {
            eprintln!("{msg}");
        }
    };
    match &cli.command {
        Command::Preprocess { input, format } => {
            let mut kv = config(cli)?;
            let base = match format {
                RawFormat::Tdrive => PreprocessConfig::tdrive(),
                RawFormat::Geolife => PreprocessConfig::geolife(),
            };
            let pcfg = kv.preprocess(base)?;
            kv.finish()?;
            let parsed = read_raw(input, *format)?;
            log(&format!(
                "parsed {} trajectories ({} lines, {} malformed)",
                parsed.trajectories.len(),
                parsed.good_lines,
                parsed.malformed_lines
            ));
            let (trajs, summary) = dataio::preprocess(&parsed.trajectories, &pcfg)?;
            log(summary.to_string().trim_end());
            write_canonical_file(&trajs, out_path(cli)?)?;
        }
        Command::Synth => {
            let mut kv = config(cli)?;
            let mut scfg = kv.synth(SynthConfig::default())?;
            scfg.seed = kv.take_or("seed", scfg.seed)?;
            kv.finish()?;
            if let Some(s) = cli.seed {
                scfg.seed = s;
            }
            let trajs = generate(&scfg)?;
            log(&format!("generated {} trajectories", trajs.len()));
            write_canonical_file(&trajs, out_path(cli)?)?;
        }
        Command::Protect { input, mechanism, epsilon } => {
            let mut kv = config(cli)?;
            let shared = kv.mechanism_shared()?;
            let kind: Option<MechanismKind> = kv.take("kind")?;
            let eps: Option<f64> = kv.take("epsilon")?;
            let parallel = kv.take_or("parallel", false)?;
            kv.finish()?;
            let kind = match mechanism {
                Some(m) => m.parse()?,
                None => kind.ok_or_else(|| Error::config("mechanism not given (--mechanism or `kind`)"))?,
            };
            let eps = epsilon.or(eps).ok_or_else(|| Error::config("epsilon not given (--epsilon or `epsilon`)"))?;
            let mut m = crate::mechanisms::MechanismConfig::new(kind, eps).with_seed(cli.seed.unwrap_or(0));
            (m.sensitivity_m, m.max_inner_loops) = shared;
            let trajs = read_canonical_file(input)?;
            let frame = dataset_frame(&trajs)?;
            let pairs = protect_all(&trajs, &m, &frame, parallel)?;
            log(&format!("protected {} trajectories with {}", pairs.len(), m.descriptor()));
            let protected: Vec<Trajectory> = pairs.into_iter().map(|p| p.protected).collect();
            write_canonical_file(&protected, out_path(cli)?)?;
        }
        Command::Train(args) => {
            let mut kv = config(cli)?;
            let tc = kv.train(TrainConfig::default())?;
            let mcfg = kv.model(ModelConfig::new(1))?;
            let max_len: usize = kv.take_or("max_len", 0)?;
            kv.finish()?;
            let tc = TrainConfig { seed: cli.seed.unwrap_or(0), ..tc };
            let pairs = pair_up(read_canonical_file(&args.original)?, read_canonical_file(&args.protected)?)?;
            let originals: Vec<Trajectory> = pairs.iter().map(|p| p.original.clone()).collect();
            let longest = originals.iter().map(Trajectory::len).max().unwrap_or(1);
            let max_len = if max_len == 0 { longest } else { max_len };
            let encoder = fit_encoder(&originals, max_len)?;
            let mut m =
                TrainedModel::build(ModelConfig { max_len, ..mcfg }, encoder, crate::rng::mix_seed(tc.seed, 300))?;
            model::train(&mut m, &pairs, &tc, &mut |e| {
                log(&format!("epoch {} train_loss={:.3} val_loss={:.3}", e.epoch, e.train_loss, e.val_loss))
            })?;
            model::save_file(&m, out_path(cli)?)?;
            if let Some(h) = &args.history {
                let mut w = BufWriter::new(fs::File::create(h)?);
                model::write_history(&m.history, &mut w)?;
                w.flush()?;
            }
        }
        Command::Reconstruct { model: path, input } => {
            config(cli)?.finish()?;
            let m = model::load_file(path)?;
            let recon = m.reconstruct(&read_canonical_file(input)?)?;
            write_canonical_file(&recon, out_path(cli)?)?;
        }
        Command::Evaluate { original, protected, reconstructed } => {
            let mut kv = config(cli)?;
            let parallel = kv.take_or("parallel", false)?;
            kv.finish()?;
            let originals = read_canonical_file(original)?;
            let frame = dataset_frame(&originals)?;
            let pairs = pair_up(originals, read_canonical_file(protected)?)?;
            let recon =
                pair_up(pairs.iter().map(|p| p.original.clone()).collect(), read_canonical_file(reconstructed)?)?;
            let recon: Vec<Trajectory> = recon.into_iter().map(|p| p.protected).collect();
            let records = evaluate_all(&pairs, &recon, &frame, parallel)?;
            let s = summarize(&records)?;
            println!(
                "n={} euclid_reduction_pct={:.4} (±{:.4}) hausdorff_reduction_pct={:.4} (±{:.4}) jaccard_before={:.6} jaccard_after={:.6}",
                s.n,
                s.mean_euclid_reduction_pct,
                s.ci99_euclid,
                s.mean_hausdorff_reduction_pct,
                s.ci99_hausdorff,
                s.mean_jaccard_before,
                s.mean_jaccard_after
            );
            if let Some(out) = &cli.out {
                let mut w = BufWriter::new(fs::File::create(out)?);
                write_records(&records, &mut w)?;
                w.flush()?;
            }
        }
        Command::Pipeline => {
            let path = cli.config.as_deref().ok_or_else(|| Error::config("pipeline needs --config"))?;
            let mut cfg = ExperimentConfig::read(path)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(o) = &cli.out {
                cfg.output = o.clone();
            }
            let outcome = run_experiment(&cfg, &mut log)?;
            println!("{}", outcome.row.to_csv());
        }
        Command::Bench { model: path, input, repetitions } => {
            config(cli)?.finish()?;
            let m = model::load_file(path)?;
            let stats = bench_reconstruct(&m, &read_canonical_file(input)?, *repetitions)?;
            println!("{stats}");
        }
        Command::Gradcheck => {
            config(cli)?.finish()?;
            let seed = cli.seed.unwrap_or(model::GRADCHECK_SEED);
            let mut reports = layer_checks(seed)?;
            reports.push(grad_check("raopt_model", &mut model::ModelProblem::tiny(seed)?, TOL_RECURRENT)?);
            for r in &reports {
                println!("{r}");
            }
            let failed = reports.iter().filter(|r| !r.passed()).count();
            if failed > 0 {
                return Err(Error::domain(format!("{failed} gradient check(s) failed")));
            }
        }
    }
    Ok(())
}
