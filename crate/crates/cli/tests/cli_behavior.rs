//! Command pipeline behavior: dataset ingestion, report emission,
//! reproducibility of artifacts.

use dham_cli::commands::{self};
use dham_cli::config::{Overrides, RunConfig};
use dham_cli::data::{generate_synthetic, load_cifar, CifarVariant, SyntheticSpec};
use std::fs;
use std::path::{Path, PathBuf};
use tempfile::TempDir;

fn tiny_synthetic(dir: &Path, seed: u64) -> (PathBuf, PathBuf) {
    generate_synthetic(
        &SyntheticSpec {
            classes: 4,
            train_per_class: 30,
            val_per_class: 10,
            seed,
            ..Default::default()
        },
        dir,
    )
    .unwrap();
    (dir.join("train.bin"), dir.join("val.bin"))
}

fn tiny_config(dir: &Path, train: &Path, val: &Path) -> RunConfig {
    RunConfig::parse_str(&format!(
        "seed = 5\n\
         outdir = {}\n\
         data.train = {}\n\
         data.val = {}\n\
         data.classes = 4\n\
         model.widths = 8,8\n\
         group.size = 2\n\
         act.mode = anneal\n\
         temp.init = 1\n\
         temp.final = 100\n\
         train.epochs = 1\n\
         train.batch = 32\n\
         train.lr = 0.05\n\
         train.lr_drops =\n\
         fewshot.n_way = 2\n\
         fewshot.k_shot = 2\n\
         fewshot.queries = 5\n\
         fewshot.runs = 50\n\
         fewshot.pool = 4\n",
        dir.join("out").display(),
        train.display(),
        val.display(),
    ))
    .unwrap()
}

#[test]
fn synthetic_data_round_trips_through_the_cifar_loader() {
    let dir = TempDir::new().unwrap();
    let (train, val) = tiny_synthetic(dir.path(), 3);
    let data = load_cifar(&train, CifarVariant::C10).unwrap();
    assert_eq!(data.n, 120);
    assert_eq!((data.c, data.h, data.w), (3, 32, 32));
    assert_eq!(data.classes, 10); // format classes, not generator classes
    assert!(data.labels.iter().all(|&l| l < 4));
    let val_data = load_cifar(&val, CifarVariant::C10).unwrap();
    assert_eq!(val_data.n, 40);

    // byte-level check: first record's label and first pixels survive
    let bytes = fs::read(&train).unwrap();
    assert_eq!(bytes[0] as u16, data.labels[0]);
    assert_eq!(&bytes[1..11], &data.images[0..10]);
}

#[test]
fn cifar_record_arithmetic() {
    let dir = TempDir::new().unwrap();
    // ten records of 3073 bytes with labels 0..10
    let mut bytes = Vec::new();
    for label in 0..10u8 {
        bytes.push(label);
        bytes.extend(std::iter::repeat_n(label * 20, 3072));
    }
    assert_eq!(bytes.len(), 30730);
    let path = dir.path().join("ten.bin");
    fs::write(&path, &bytes).unwrap();
    let data = load_cifar(&path, CifarVariant::C10).unwrap();
    assert_eq!(data.n, 10);
    assert_eq!(data.labels[7], 7);
    assert_eq!(data.image(3)[0], 60);

    // first byte is the first label
    let mut first = vec![7u8];
    first.extend(std::iter::repeat_n(0u8, 3072));
    let path7 = dir.path().join("one.bin");
    fs::write(&path7, &first).unwrap();
    assert_eq!(load_cifar(&path7, CifarVariant::C10).unwrap().labels[0], 7);

    // truncated file errors
    let bad = dir.path().join("bad.bin");
    fs::write(&bad, &bytes[..3072]).unwrap();
    let err = load_cifar(&bad, CifarVariant::C10).unwrap_err();
    assert!(format!("{err:#}").contains("truncated"));

    // out-of-range label errors
    let mut evil = vec![10u8];
    evil.extend(std::iter::repeat_n(0u8, 3072));
    let evil_path = dir.path().join("evil.bin");
    fs::write(&evil_path, &evil).unwrap();
    assert!(load_cifar(&evil_path, CifarVariant::C10).is_err());
}

#[test]
fn cifar100_uses_the_fine_label() {
    let dir = TempDir::new().unwrap();
    let mut bytes = vec![3u8, 42u8]; // coarse 3, fine 42
    bytes.extend(std::iter::repeat_n(9u8, 3072));
    let path = dir.path().join("c100.bin");
    fs::write(&path, &bytes).unwrap();
    let data = load_cifar(&path, CifarVariant::C100).unwrap();
    assert_eq!(data.labels[0], 42);
    assert_eq!(data.classes, 100);
}

#[test]
fn train_writes_checkpoint_csv_and_resolved_config() {
    let dir = TempDir::new().unwrap();
    let (train, val) = tiny_synthetic(dir.path(), 7);
    let cfg = tiny_config(dir.path(), &train, &val);
    let ckpt = commands::cmd_train(&cfg).unwrap();
    assert!(ckpt.exists());
    let csv = fs::read_to_string(cfg.outdir.join("training.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], commands::TRAINING_CSV_HEADER);
    assert_eq!(lines.len(), 2); // header + one epoch row
    let resolved = fs::read_to_string(cfg.outdir.join("config.resolved")).unwrap();
    assert!(resolved.contains("train.epochs = 1"));
    assert!(resolved.contains("group.size = 2"));
}

#[test]
fn missing_dataset_path_is_reported_by_name() {
    let dir = TempDir::new().unwrap();
    let cfg = RunConfig::parse_str(&format!(
        "outdir = {}\ndata.train = /nowhere/not-a-dataset.bin\n",
        dir.path().join("out").display()
    ))
    .unwrap();
    let err = commands::cmd_train(&cfg).unwrap_err();
    assert!(
        format!("{err:#}").contains("/nowhere/not-a-dataset.bin"),
        "error must name the path: {err:#}"
    );
}

#[test]
fn count_rows_obey_the_reciprocal_law() {
    let dir = TempDir::new().unwrap();
    let cfg = RunConfig::parse_str(&format!(
        "outdir = {}\nmodel.arch = resnet18\nmodel.base_width = 64\n",
        dir.path().join("out").display()
    ))
    .unwrap();
    commands::cmd_count(&cfg).unwrap();
    let csv = fs::read_to_string(cfg.outdir.join("count.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], commands::COUNT_CSV_HEADER);
    assert_eq!(lines.len(), 8); // header + 7 grid rows
    let mut a_b = None;
    for row in &lines[1..] {
        let cols: Vec<u128> = row.split(',').map(|v| v.parse().unwrap()).collect();
        let (ell, a, b, total) = (cols[0], cols[1], cols[2], cols[3]);
        let (ea, eb) = *a_b.get_or_insert((a, b));
        assert_eq!((a, b), (ea, eb), "A and B must not vary with ℓ");
        assert_eq!(total, a + b / ell, "law violated at ℓ={ell}");
    }
    let layers = fs::read_to_string(cfg.outdir.join("count_layers.csv")).unwrap();
    assert!(layers.starts_with(commands::COUNT_LAYERS_CSV_HEADER));
}

#[test]
fn full_pipeline_emits_all_reports() {
    let dir = TempDir::new().unwrap();
    let (train, val) = tiny_synthetic(dir.path(), 9);
    let cfg = tiny_config(dir.path(), &train, &val);
    let ckpt = commands::cmd_train(&cfg).unwrap();

    commands::cmd_eval(&cfg, &ckpt).unwrap();
    let eval_csv = fs::read_to_string(cfg.outdir.join("eval.csv")).unwrap();
    assert!(eval_csv.starts_with(commands::EVAL_CSV_HEADER));

    commands::cmd_wins(&cfg, &ckpt, None).unwrap();
    let wins = fs::read_to_string(cfg.outdir.join("wins.csv")).unwrap();
    assert!(wins.starts_with(commands::WINS_CSV_HEADER));
    assert!(cfg.outdir.join("wins_plot.dat").exists());

    commands::cmd_noise(&cfg, &ckpt).unwrap();
    let noise = fs::read_to_string(cfg.outdir.join("noise.csv")).unwrap();
    assert_eq!(noise.lines().next().unwrap(), commands::NOISE_CSV_HEADER);

    commands::cmd_fewshot(&cfg, &ckpt).unwrap();
    let fewshot = fs::read_to_string(cfg.outdir.join("fewshot.csv")).unwrap();
    assert!(fewshot.starts_with(commands::FEWSHOT_CSV_HEADER));

    commands::cmd_sam_demo(&cfg).unwrap();
    assert!(cfg.outdir.join("memory.samw").exists());

    commands::cmd_sam_capacity(&cfg, 3, 3, 3, 3, &[1, 4, 16], 5).unwrap();
    let cap = fs::read_to_string(cfg.outdir.join("capacity.csv")).unwrap();
    let lines: Vec<&str> = cap.lines().collect();
    assert_eq!(lines[0], commands::CAPACITY_CSV_HEADER);
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("1,0.000000"));
}

#[test]
fn eval_on_missing_checkpoint_names_the_path() {
    let dir = TempDir::new().unwrap();
    let (train, val) = tiny_synthetic(dir.path(), 13);
    let cfg = tiny_config(dir.path(), &train, &val);
    let missing = dir.path().join("ghost.dnwt");
    let err = commands::cmd_eval(&cfg, &missing).unwrap_err();
    assert!(format!("{err:#}").contains("ghost.dnwt"));
}

#[test]
fn flag_overrides_change_grouping_and_seed() {
    let base = RunConfig::default();
    let cfg = base.with_overrides(&Overrides {
        ell: Some(4),
        t_final: Some(500.0),
        seed: Some(99),
        ..Default::default()
    });
    assert_eq!(cfg.group_mode, "fixed_l");
    assert_eq!(cfg.group_size, 4);
    assert_eq!(cfg.temp_final, 500.0);
    assert_eq!(cfg.seed, 99);
}

#[test]
fn generator_rejects_too_many_classes() {
    let dir = TempDir::new().unwrap();
    assert!(generate_synthetic(
        &SyntheticSpec {
            classes: 26,
            ..Default::default()
        },
        dir.path(),
    )
    .is_err());
}

#[test]
fn directory_of_bins_is_concatenated_in_name_order() {
    let dir = TempDir::new().unwrap();
    let batches = dir.path().join("batches");
    fs::create_dir(&batches).unwrap();
    for (name, label) in [("data_batch_1.bin", 1u8), ("data_batch_2.bin", 2u8)] {
        let mut bytes = vec![label];
        bytes.extend(std::iter::repeat_n(label, 3072));
        fs::write(batches.join(name), &bytes).unwrap();
    }
    fs::write(batches.join("notes.txt"), b"ignored").unwrap();
    let data = load_cifar(&batches, CifarVariant::C10).unwrap();
    assert_eq!(data.n, 2);
    assert_eq!(data.labels, vec![1, 2]);
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert!(load_cifar(&empty, CifarVariant::C10).is_err());
}
