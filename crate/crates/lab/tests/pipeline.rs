use std::collections::BTreeMap;
use std::path::Path;

use unlearn_core::scrub::Method;
use unlearn_lab::checkpoint::load_checkpoint;
use unlearn_lab::experiment::{run_experiment, RunManifest};
use unlearn_lab::io::read_json;
use unlearn_lab::ExperimentConfig;

fn small_config(out: &Path) -> ExperimentConfig {
    let text = r#"
        seeds = [0]
        [dataset]
        per_class = 30
        input_dim = 8
        [arch]
        hidden = [12]
        [pretrain]
        epochs = 5
        [finetune]
        epochs = 40
        [readout]
        relearn_max_epochs = 40
    "#;
    let mut cfg = ExperimentConfig::parse(text, &[]).unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg
}

fn artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for sub in [dir.to_path_buf(), dir.join("checkpoints")] {
        for entry in std::fs::read_dir(&sub).unwrap() {
            let path = entry.unwrap().path();
            if path.is_file() && path.file_name().unwrap() != "timings.json" {
                let key = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.insert(key, std::fs::read(&path).unwrap());
            }
        }
    }
    files
}

#[test]
fn single_seed_manifest_lists_every_method_and_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (manifest, results) = run_experiment(&cfg).unwrap();
    assert!(manifest.failures.is_empty(), "{:?}", manifest.failures);

    let methods: Vec<Method> = manifest.checkpoints.iter().map(|c| c.method).collect();
    assert_eq!(methods, Method::ALL.to_vec());
    for entry in &manifest.checkpoints {
        let (outcome, hash) = load_checkpoint(&dir.path().join(&entry.path)).unwrap();
        assert_eq!(hash, cfg.hash());
        assert_eq!(&outcome, results.outcome(entry.method, entry.seed).unwrap());
    }

    for (name, rel) in &manifest.reports {
        let path = dir.path().join(rel);
        let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{name}: {e}"));
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => {
                let mut rdr = csv::Reader::from_reader(text.as_bytes());
                let width = rdr.headers().unwrap().len();
                for rec in rdr.records() {
                    assert_eq!(rec.unwrap().len(), width, "{name}");
                }
            }
            Some("json") => {
                serde_json::from_str::<serde_json::Value>(&text).unwrap();
            }
            Some("toml") => {
                let mut back = ExperimentConfig::parse(&text, &[]).unwrap();
                back.output_dir = cfg.output_dir.clone();
                assert_eq!(back.hash(), cfg.hash());
            }
            other => panic!("unexpected report type {other:?}"),
        }
    }
    let timings: BTreeMap<String, f64> = read_json(&dir.path().join(&manifest.timings)).unwrap();
    assert!(timings.values().all(|t| *t >= 0.0));

    let stored: RunManifest = read_json(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(stored.checkpoints.len(), 5);
    assert_eq!(stored.config_hash, manifest.config_hash);
}

#[test]
fn rerun_reproduces_every_artifact() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut cfg = small_config(a.path());
    cfg.seeds = vec![0, 1];
    run_experiment(&cfg).unwrap();
    cfg.output_dir = b.path().to_path_buf();
    run_experiment(&cfg).unwrap();
    let (fa, fb) = (artifacts(a.path()), artifacts(b.path()));
    assert!(fa.len() > 10);
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (name, bytes) in &fa {
        if name == "config.toml" {
            continue;
        }
        assert!(bytes == &fb[name], "{name} differs");
    }
}

#[test]
fn pca_metadata_matches_projected_variance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (_, results) = run_experiment(&cfg).unwrap();
    let pca = results.pca.as_ref().expect("pca computed");
    let seed = &results.seeds[0];
    let ntk = results.outcome(Method::Ntk, seed.seed).unwrap();
    let steps = cfg.readout.interpolation_steps;
    let scrub_path = (0..steps).map(|k| {
        let a = k as f64 / (steps - 1) as f64;
        seed.original.w.iter().zip(&ntk.shifted_weights).map(|(x, y)| x + a * (y - x)).collect::<Vec<f64>>()
    });
    let snapshots: Vec<Vec<f64>> = seed.path_d.iter().chain(&seed.path_dr).cloned().chain(scrub_path).collect();
    assert_eq!(snapshots.len(), pca.points.len());

    let p = snapshots[0].len();
    let m = snapshots.len() as f64;
    let mean: Vec<f64> = (0..p).map(|j| snapshots.iter().map(|s| s[j]).sum::<f64>() / m).collect();
    let total: f64 = snapshots.iter().map(|s| s.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).sum();
    let captured: [f64; 2] = [
        pca.points.iter().map(|q| q.pc1 * q.pc1).sum::<f64>() / total,
        pca.points.iter().map(|q| q.pc2 * q.pc2).sum::<f64>() / total,
    ];
    for k in 0..2 {
        assert!((captured[k] - pca.explained_variance[k]).abs() < 1e-9, "{captured:?} vs {:?}", pca.explained_variance);
    }
    assert!(pca.explained_variance[0] >= pca.explained_variance[1]);

    let meta: serde_json::Value = read_json(&dir.path().join("pca_meta.json")).unwrap();
    let reported = meta["explained_total"].as_f64().unwrap();
    assert!(captured[0] + captured[1] >= reported - 1e-9);
    assert!(reported <= 1.0 + 1e-12);
}
