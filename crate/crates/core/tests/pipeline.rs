mod common;

use std::path::Path;

use common::*;
use gradmorph::data::{generate_synthetic, netpbm, Split, SynthConfig};
use gradmorph::fsutil::sha256_hex;
use gradmorph::metrics::dice;
use gradmorph::optim::{AdadeltaConfig, AdadeltaState};
use gradmorph::pipeline::{Command, ExperimentConfig, Manifest};
use gradmorph::segnet::{build_segnet, train_segmentation, SegNetConfig};
use gradmorph::train::Schedule;

fn with(mut sets: Vec<String>, extra: &[&str]) -> Vec<String> {
    sets.extend(extra.iter().map(|s| s.to_string()));
    sets
}

fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn zero_epoch_training_writes_finite_untrained_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let exp = experiment(dir.path(), &with(tiny_config(1), &["seg_training.epochs=0"]));
    exp.run(Command::GenData).unwrap();
    exp.run(Command::TrainSeg).unwrap();
    let model = exp.load_segnet().unwrap();
    assert!(model.params.is_finite());
    let curve = std::fs::read_to_string(exp.report_path("seg_loss.csv")).unwrap();
    assert_eq!(curve.trim(), "epoch,loss");
}

#[test]
fn segmentation_overfits_four_samples() {
    let ds = generate_synthetic(&SynthConfig {
        count: 5,
        image_size: 16,
        seed: 3,
        ..SynthConfig::default()
    })
    .unwrap();
    assert_eq!(ds.train.len(), 4);
    let mut model = build_segnet(SegNetConfig::default(), 0).unwrap();
    let mut opt = AdadeltaState::new(AdadeltaConfig::default());
    let schedule = Schedule {
        epochs: 200,
        batch_size: 4,
    };
    let curve = train_segmentation(&mut model, &ds.train, schedule, &mut opt, 0).unwrap();
    assert!(curve.iter().all(|l| l.is_finite()));
    let mean = ds
        .train
        .iter()
        .map(|s| dice(&model.predict(&s.image).unwrap(), &s.mask, 1).unwrap())
        .sum::<f64>()
        / 4.0;
    assert!(mean >= 0.95, "training Dice {mean}");
}

#[test]
fn identity_translator_leaves_predictions_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(dir.path(), &with(tiny_config(2), &["translator_training.epochs=0"])).unwrap();
    let exp = experiment(dir.path(), &tiny_config(2));
    let orig = files_in(&exp.predictions_dir(Split::Test, "orig"));
    assert!(!orig.is_empty());
    assert_eq!(orig, files_in(&exp.predictions_dir(Split::Test, "gpts")));
    let summary = read_summary(&exp.report_path("summary_test.csv"));
    for metric in ["dice", "fpr", "fnr"] {
        let key = |m: &str| (m.to_string(), metric.to_string());
        assert_eq!(summary[&key("ORIG")], summary[&key("GP_Ts")]);
    }
}

#[test]
fn translator_loss_decreases_within_noise() {
    let dir = tempfile::tempdir().unwrap();
    let sets = with(tiny_config(3), &["translator_training.epochs=8", "translator_training.batch_size=8"]);
    run_pipeline(dir.path(), &sets).unwrap();
    let exp = experiment(dir.path(), &sets);
    let curve: Vec<f64> = csv_column(&exp.report_path("translator_loss.csv"), "loss")
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    assert_eq!(curve.len(), 8);
    for w in curve.windows(2) {
        assert!(w[1] <= w[0] * 1.05, "loss rose from {} to {}", w[0], w[1]);
    }
    assert!(curve.last() < curve.first());
}

#[test]
fn evaluate_reads_only_artifacts_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let sets = tiny_config(4);
    run_pipeline(dir.path(), &sets).unwrap();
    let mut exp = experiment(dir.path(), &sets);
    let reports = dir.path().join("reports");
    let before = std::fs::read(reports.join("summary_test.csv")).unwrap();
    std::fs::remove_dir_all(dir.path().join("models")).unwrap();
    exp.config.mode.split = Split::Test;
    exp.run(Command::Evaluate).unwrap();
    assert_eq!(before, std::fs::read(reports.join("summary_test.csv")).unwrap());
    assert!(exp.run(Command::Infer).is_err(), "infer needs the deleted checkpoints");
}

#[test]
fn oracle_predictions_are_reported_when_test_split_is_perturbed() {
    let dir = tempfile::tempdir().unwrap();
    let sets = with(tiny_config(5), &["perturb.max_iters=50"]);
    run_pipeline(dir.path(), &sets).unwrap();
    let mut exp = experiment(dir.path(), &sets);
    exp.config.mode.split = Split::Test;
    for cmd in [Command::Perturb, Command::Infer, Command::Evaluate] {
        exp.run(cmd).unwrap();
    }
    let summary = read_summary(&exp.report_path("summary_test.csv"));
    let oracle = summary[&("ORACLE_GP".to_string(), "dice".to_string())];
    let report = exp.report_path("perturb_test.csv");
    let final_dice: Vec<f64> = csv_column(&report, "final_dice").iter().map(|s| s.parse().unwrap()).collect();
    let mean = final_dice.iter().sum::<f64>() / final_dice.len() as f64;
    assert!((oracle - mean).abs() < 1e-12, "evaluate {oracle} vs perturb {mean}");
}

#[test]
fn correctly_segmented_inputs_get_zero_perturbation() {
    let dir = tempfile::tempdir().unwrap();
    let sets = tiny_config(6);
    let exp = experiment(dir.path(), &sets);
    exp.run(Command::GenData).unwrap();
    exp.run(Command::TrainSeg).unwrap();
    let seg = exp.load_segnet().unwrap();

    // A dataset whose ground truth is the model's own prediction.
    let own = dir.path().join("own");
    for split in ["train", "test"] {
        let images = exp.data_root().join(split).join("images");
        for sub in ["images", "masks"] {
            std::fs::create_dir_all(own.join(split).join(sub)).unwrap();
        }
        for e in std::fs::read_dir(&images).unwrap() {
            let p = e.unwrap().path();
            let bytes = std::fs::read(&p).unwrap();
            let pred = seg.predict(&netpbm::read_image(&bytes).unwrap()).unwrap();
            let name = p.file_name().unwrap();
            std::fs::write(own.join(split).join("images").join(name), &bytes).unwrap();
            std::fs::write(own.join(split).join("masks").join(name), netpbm::write_label_map(&pred, 2)).unwrap();
        }
    }
    let out2 = dir.path().join("own-run");
    std::fs::create_dir_all(out2.join("models")).unwrap();
    std::fs::copy(exp.segnet_path(), out2.join("models/segnet.ckpt")).unwrap();
    let exp2 = experiment(&out2, &with(sets, &[&format!("paths.data={:?}", own.display().to_string())]));
    exp2.run(Command::Perturb).unwrap();
    let report = exp2.report_path("perturb_test.csv");
    assert!(csv_column(&report, "terminated_by").iter().all(|t| t == "already_correct"));
    for e in std::fs::read_dir(out2.join("data/test/deltas")).unwrap() {
        let d = gradmorph::data::tensor_io::decode_tensor(&std::fs::read(e.unwrap().path()).unwrap()).unwrap();
        assert!(d.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn manifest_records_config_hash_and_regenerates_data() {
    let dir = tempfile::tempdir().unwrap();
    let exp = experiment(dir.path(), &tiny_config(7));
    exp.run(Command::GenData).unwrap();
    let m = Manifest::read(dir.path()).unwrap();
    let resolved = std::fs::read_to_string(dir.path().join("configs/gen-data.toml")).unwrap();
    assert_eq!(m.runs, [format!("gen-data seed=7 config_sha256={}", sha256_hex(resolved.as_bytes()))]);
    for (hash, rel) in &m.files {
        assert_eq!(hash, &sha256_hex(&std::fs::read(dir.path().join(rel)).unwrap()), "{rel}");
    }
    assert!(!dir.path().read_dir().unwrap().any(|e| e.unwrap().file_name().to_string_lossy().starts_with(".staging")));

    let again = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml_str(&resolved, &[]).unwrap();
    gradmorph::pipeline::Experiment::new(cfg, again.path()).unwrap().run(Command::GenData).unwrap();
    let m2 = Manifest::read(again.path()).unwrap();
    let data = |m: &Manifest| m.files.iter().filter(|(_, p)| p.starts_with("data/")).cloned().collect::<Vec<_>>();
    assert_eq!(data(&m), data(&m2));
}

#[test]
fn invalid_config_fails_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = ExperimentConfig::from_toml_str("", &["perturb.gamma=-1".into()]);
    assert!(cfg.is_err() || gradmorph::pipeline::Experiment::new(cfg.unwrap(), &out).is_err());
    assert!(!out.exists());
}

#[test]
fn end_to_end_arms_share_a_parameter_budget() {
    let dir = tempfile::tempdir().unwrap();
    let exp = experiment(dir.path(), &tiny_config(8));
    exp.run(Command::GenData).unwrap();
    exp.run(Command::End2endBaseline).unwrap();
    let summary = exp.report_path("end2end_summary.csv");
    let params = csv_column(&summary, "parameters");
    assert_eq!(params[0], params[1]);
    let cmp = exp.report_path("end2end_comparison.csv");
    for col in ["gpts_dice", "end2end_dice"] {
        assert!(csv_column(&cmp, col).iter().all(|v| v.parse::<f64>().unwrap().is_finite()));
    }
    assert!(dir.path().join("models/serial.ckpt").exists());
}
