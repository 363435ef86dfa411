//! The generated header must declare every exported symbol, and a C program
//! built against it must link and agree with the Rust side.

use std::path::{Path, PathBuf};
use std::process::Command;

use raopt::dataio::{RawPoint, Trajectory};
use raopt::encoding::EncoderConfig;
use raopt::geo::ReferenceFrame;
use raopt::mechanisms::{protect, MechanismConfig, MechanismKind};
use raopt::model::{save_file, ModelConfig, TrainedModel};
use raopt::rng::rng_from_seed;
use raopt_ffi::{RaoptMechanism, RaoptStatus};

fn crate_dir() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

fn header() -> String {
    std::fs::read_to_string(crate_dir().join("include/raopt.h")).unwrap()
}

fn exported_functions() -> Vec<String> {
    let src = std::fs::read_to_string(crate_dir().join("src/lib.rs")).unwrap();
    src.lines()
        .filter_map(|l| l.split_once("extern \"C\" fn ").map(|(_, rest)| rest))
        .map(|rest| rest.split('(').next().unwrap().trim().to_string())
        .collect()
}

#[test]
fn header_declares_every_export() {
    let h = header();
    let fns = exported_functions();
    assert!(fns.len() >= 12, "{fns:?}");
    for f in &fns {
        assert!(
            h.contains(&format!(" {f}(")) || h.contains(&format!("*{f}(")),
            "header lacks {f}; rebuild to regenerate it"
        );
    }
    let declared = h.matches("raopt_").count();
    assert!(declared >= fns.len());
}

#[test]
fn header_enum_values_match() {
    let h = header();
    let statuses = [
        (RaoptStatus::Ok, "OK"),
        (RaoptStatus::NullPointer, "NULL_POINTER"),
        (RaoptStatus::InvalidArgument, "INVALID_ARGUMENT"),
        (RaoptStatus::Format, "FORMAT"),
        (RaoptStatus::Config, "CONFIG"),
        (RaoptStatus::Checkpoint, "CHECKPOINT"),
        (RaoptStatus::Io, "IO"),
        (RaoptStatus::RestartLimit, "RESTART_LIMIT"),
        (RaoptStatus::NonFinite, "NON_FINITE"),
        (RaoptStatus::Panic, "PANIC"),
    ];
    for (s, name) in statuses {
        let line = format!("RAOPT_STATUS_{name} = {},", s as i32);
        assert!(h.contains(&line), "missing {line}");
    }
    for (m, name) in [(RaoptMechanism::Cnoise, "CNOISE"), (RaoptMechanism::Sdd, "SDD")] {
        let line = format!("RAOPT_MECHANISM_{name} = {},", m as i32);
        assert!(h.contains(&line), "missing {line}");
    }
}

/// `target/<profile>`, which holds the staticlib next to `deps/`.
fn profile_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_agrees() {
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler on PATH; skipping");
        return;
    }
    let lib = profile_dir().join("libraopt_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(crate_dir().join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");

    let enc = EncoderConfig::new(ReferenceFrame::new(39.91, 116.40).unwrap(), 0.05, 0.05, 10).unwrap();
    let cfg = ModelConfig { fusion_units: 12, lstm_units: 6, ..ModelConfig::new(10) };
    let model = TrainedModel::build(cfg, enc, 9).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    save_file(&model, &ckpt).unwrap();

    let run = Command::new(&exe).arg(&ckpt).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));

    // Same pipeline on the Rust side.
    let t = Trajectory::new(
        "u",
        "t",
        (0..8)
            .map(|i| RawPoint::new(39.90 + 0.002 * i as f64, 116.40 + 0.001 * i as f64, 1_202_000_000 + 60 * i))
            .collect(),
    );
    let mcfg = MechanismConfig::new(MechanismKind::Sdd, 1.0).with_seed(3);
    let (p, _) = protect(&t, &mcfg, &ReferenceFrame::new(39.91, 116.40).unwrap(), &mut rng_from_seed(3)).unwrap();
    let r = model.reconstruct(&[p]).unwrap().remove(0);
    let want: String = r.points.iter().map(|q| format!("{:.7} {:.7}\n", q.lat, q.lon)).collect();
    assert_eq!(String::from_utf8(run.stdout).unwrap(), want);
}
