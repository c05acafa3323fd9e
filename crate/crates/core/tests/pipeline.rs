mod common;

use std::fs;

use common::{csv_files, tiny_config};
use hideseek::attribution::LesionRow;
use hideseek::imaging::pnm::read_image;
use hideseek::phantom::Split;
use hideseek::pipeline::{
    load_split, run_all, run_stage, CandidateRow, ExperimentConfig, RunManifest, Stage, TrainingSummary,
};
use hideseek::Error;
use tempfile::tempdir;

fn read_rows<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Vec<T> {
    csv::Reader::from_path(path)
        .unwrap()
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap()
}

#[test]
fn runs_are_byte_identical_across_thread_counts() {
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    let mut cfg_a = tiny_config(a.path());
    cfg_a.jobs = 1;
    let cfg_b = tiny_config(b.path());
    run_all(&cfg_a).unwrap();
    run_all(&cfg_b).unwrap();
    let (fa, fb) = (csv_files(a.path()), csv_files(b.path()));
    assert!(fa.len() >= 10);
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (name, bytes) in &fa {
        assert!(bytes == &fb[name], "{name} differs between runs");
    }
    assert_eq!(cfg_a.hash(), cfg_b.hash());
}

#[test]
fn full_run_produces_every_artifact() {
    let dir = tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let manifest = run_all(&cfg).unwrap();
    assert!(!manifest.partial);
    assert_eq!(manifest.stages.len(), Stage::ALL.len());
    assert_eq!(manifest.missing_artifacts(dir.path()), Vec::<String>::new());
    let on_disk: RunManifest =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(on_disk, manifest);
    for f in [
        "data/dataset.json",
        "models/latent.bin",
        "models/latent_healthy.bin",
        "models/classifier.json",
        "reports/lesion_analysis.csv",
        "reports/comparison.csv",
        "reports/metrics.json",
        "ablations/summary.csv",
    ] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }

    // comparison table: phenotype, metric, then one column per method
    let mut rdr = csv::Reader::from_path(dir.path().join("reports/comparison.csv")).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(str::to_string).collect();
    assert_eq!(header, ["phenotype", "metric", "hide_and_seek", "otsu", "ad"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3 * 8);
    for r in &rows {
        for cell in r.iter().skip(2) {
            assert!(cell == "n/a" || cell.contains(" ± "), "{cell}");
        }
    }

    // one lesion row per scored candidate
    let lesions: Vec<LesionRow> = read_rows(&dir.path().join("reports/lesion_analysis.csv"));
    let candidates: Vec<CandidateRow> = read_rows(&dir.path().join("segmentations/hide_and_seek/candidates.csv"));
    assert_eq!(lesions.len(), candidates.len());
    assert!(lesions
        .iter()
        .zip(&candidates)
        .all(|(l, c)| l.delta == c.delta && l.kept == c.kept));

    let overlays = fs::read_dir(dir.path().join("overlays/hide_and_seek")).unwrap().count();
    assert_eq!(overlays, cfg.splits.test_total());
}

#[test]
fn disabled_baselines_leave_only_the_method() {
    let dir = tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.baselines.otsu = false;
    cfg.baselines.ad = false;
    run_all(&cfg).unwrap();
    let rdr = csv::Reader::from_path(dir.path().join("reports/comparison.csv"))
        .unwrap()
        .headers()
        .unwrap()
        .clone();
    assert_eq!(rdr.iter().collect::<Vec<_>>(), ["phenotype", "metric", "hide_and_seek"]);
    assert!(!dir.path().join("segmentations/otsu").exists());
    assert!(!dir.path().join("segmentations/ad").exists());
}

#[test]
fn segmenting_before_training_names_the_missing_file() {
    let dir = tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    run_stage(&cfg, Stage::Generate).unwrap();
    let err = run_stage(&cfg, Stage::Segment).unwrap_err();
    match &err {
        Error::Stage { stage, source } => {
            assert_eq!(*stage, "segment");
            assert!(matches!(**source, Error::MissingArtifact(_)), "{source}");
        }
        other => panic!("unexpected error {other}"),
    }
    let manifest: RunManifest =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert!(manifest.partial);
    assert!(manifest
        .stages
        .iter()
        .any(|s| s.stage == Stage::Segment && !s.ok && s.error.is_some()));
}

#[test]
fn config_files_merge_over_regime_defaults() {
    let cfg = ExperimentConfig::from_toml("regime = \"hard\"\nseed = 7\n[splits]\ntest_lytic = 3\n").unwrap();
    let base = ExperimentConfig::for_regime(hideseek::phantom::Regime::Hard);
    assert_eq!(cfg.seed, 7);
    assert_eq!(cfg.splits.test_lytic, 3);
    assert_eq!(cfg.splits.generative, base.splits.generative);
    assert_eq!(cfg.phantom, base.phantom);
    assert!(ExperimentConfig::from_toml("sed = 1\n").is_err());
    assert!(ExperimentConfig::from_toml("latent_dim = 0\n").is_err());
    let round = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(round.hash(), cfg.hash());
    for name in ["easy", "hard"] {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../configs/{name}.toml"));
        ExperimentConfig::load(&path).unwrap();
    }
}

/// Sanity checks on a default-sized run: the classifier gate, the healthy
/// reconstruction, candidate scoring and the baselines each behave as meant.
#[test]
fn default_run_behaves_sensibly() {
    let dir = tempdir().unwrap();
    let mut cfg = ExperimentConfig {
        output_dir: dir.path().to_path_buf(),
        ..Default::default()
    };
    cfg.ablation.projection_samples = 4;
    for stage in [Stage::Generate, Stage::Train, Stage::Segment, Stage::Evaluate] {
        run_stage(&cfg, stage).unwrap();
    }
    let training: TrainingSummary =
        serde_json::from_str(&fs::read_to_string(dir.path().join("models/training.json")).unwrap()).unwrap();
    assert!(training.training_accuracy >= 0.9, "{}", training.training_accuracy);

    // non-true-positive candidates are mostly rejected
    let lesions: Vec<LesionRow> = read_rows(&dir.path().join("reports/lesion_analysis.csv"));
    let negatives: Vec<&LesionRow> = lesions.iter().filter(|l| !l.true_positive).collect();
    let rejected = negatives.iter().filter(|l| l.delta < cfg.attribution.tau).count();
    assert!(rejected * 2 > negatives.len(), "{rejected}/{}", negatives.len());

    // the healthy reconstruction darkens blastic lesions
    let test = load_split(dir.path(), Split::Test).unwrap();
    let models = hideseek::latent::LatentModel::load(&dir.path().join("models/latent.bin")).unwrap();
    let (clf, _) = hideseek::classifier::LinearClassifier::load(&dir.path().join("models/classifier.json")).unwrap();
    let mut darker = 0;
    let blastic: Vec<_> = test.iter().filter(|s| s.gt_blastic.count() > 0).collect();
    for s in &blastic {
        use hideseek::latent::SemanticAutoencoder;
        let z = models.encode(&s.image).unwrap();
        let healthy = models
            .decode(&clf.healthy_edit(&z, cfg.attribution.p_target).unwrap())
            .unwrap();
        let gt = s.gt_blastic.foreground();
        let diff: f64 = gt.indices().map(|i| s.image.pixels()[i] - healthy.pixels()[i]).sum();
        darker += (diff > 0.0) as usize;
    }
    assert!(darker * 10 >= blastic.len() * 9, "{darker}/{}", blastic.len());

    // both baselines find something
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("reports/metrics.json")).unwrap()).unwrap();
    for method in ["otsu", "ad"] {
        let gd = metrics[method]["blastic"]["global_dice"]["mean"].as_f64().unwrap();
        assert!(gd > 0.0, "{method} global dice {gd}");
    }
    // segmentations are written as readable label maps
    let first = &test[0].sample_id;
    read_image(
        &dir.path()
            .join(format!("segmentations/hide_and_seek/{first}_lytic.pgm")),
    )
    .unwrap();
}
