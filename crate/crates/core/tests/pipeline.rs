use std::fs;
use std::path::Path;

use raopt::dataio::write_canonical_file;
use raopt::harness::kv::KeyValues;
use raopt::harness::{run_experiment, ExperimentConfig};
use raopt::metrics::RESULT_HEADER;
use raopt::synth::{generate, SynthConfig};

const SMALL: &str = "\
mech_train = cnoise
eps_train = 1.0
mech_test = cnoise
eps_test = 1.0
n_users = 4
trajs_per_user = 10
len_min = 5
len_max = 15
max_epochs = 4
early_stop_patience = 2
batch_size = 16
fusion_units = 16
lstm_units = 8
";

fn config(dir: &Path, extra: &str) -> ExperimentConfig {
    let text = format!("{SMALL}{extra}\noutput = {}\n", dir.join("results.csv").display());
    ExperimentConfig::from_kv(text.parse::<KeyValues>().unwrap()).unwrap()
}

#[test]
fn cross_validation_is_deterministic() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut rows = Vec::new();
    for d in &dirs {
        let mut cfg = config(d.path(), "id = cv\ndataset_train = synth\nfolds = 4\nfolds_run = 2\nseed = 3");
        cfg.records = Some(d.path().join("records.csv"));
        let out = run_experiment(&cfg, &mut |_| {}).unwrap();
        // Two folds of a 40-trajectory set, 10 test trajectories each.
        assert_eq!(out.summary.n, 20);
        assert!(out.notes.is_empty());
        rows.push(fs::read_to_string(d.path().join("results.csv")).unwrap());
    }
    assert_eq!(rows[0], rows[1]);
    assert!(rows[0].starts_with(&format!("{RESULT_HEADER}\n")));
    assert!(rows[0].lines().nth(1).unwrap().starts_with("cv,synth,synth,cnoise,cnoise,1,1,"));
    assert_eq!(
        fs::read(dirs[0].path().join("records.csv")).unwrap(),
        fs::read(dirs[1].path().join("records.csv")).unwrap()
    );

    // A different seed gives different numbers; the table gains a row.
    let cfg = config(dirs[0].path(), "id = cv\ndataset_train = synth\nfolds = 4\nfolds_run = 2\nseed = 4");
    run_experiment(&cfg, &mut |_| {}).unwrap();
    let table = fs::read_to_string(dirs[0].path().join("results.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_ne!(lines[1], lines[2]);
}

#[test]
fn disjoint_test_region_refits_encoder() {
    let dir = tempfile::tempdir().unwrap();
    let elsewhere = generate(&SynthConfig {
        n_users: 2,
        trajs_per_user: 5,
        len_range: (5, 15),
        bbox: (31.10, 31.28, 121.35, 121.58),
        seed: 8,
        ..SynthConfig::default()
    })
    .unwrap();
    let test_csv = dir.path().join("elsewhere.csv");
    write_canonical_file(&elsewhere, &test_csv).unwrap();
    let extra = format!("id = x\ndataset_train = synth:5\ndataset_test = {}\nruns = 2", test_csv.display());
    let out = run_experiment(&config(dir.path(), &extra), &mut |_| {}).unwrap();
    assert_eq!(out.summary.n, 20);
    assert_eq!(out.notes.len(), 2);
    assert!(out.notes[0].contains("refit"), "{}", out.notes[0]);
}

#[test]
fn failures_append_a_failed_row() {
    let dir = tempfile::tempdir().unwrap();
    let extra = "id = broken\ndataset_train = /nonexistent/trajectories.csv";
    let err = run_experiment(&config(dir.path(), extra), &mut |_| {}).unwrap_err();
    assert!(matches!(err, raopt::Error::Io(_)), "{err}");
    let table = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(
        table.lines().nth(1).unwrap(),
        "broken,/nonexistent/trajectories.csv,/nonexistent/trajectories.csv,cnoise,cnoise,1,1,failed,failed,failed,failed"
    );
}

#[test]
fn desk_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["desk_cnoise.conf", "desk_sdd.conf"] {
        let cfg = ExperimentConfig::read(&root.join(name)).unwrap();
        assert!(cfg.is_cross_validation());
        assert_eq!((cfg.folds, cfg.folds_run, cfg.seed), (5, 1, 7));
    }
}
