//! Command implementations. Each writes CSV reports with fixed headers into
//! the configured output directory and is deterministic given (config, seed).

use crate::config::RunConfig;
use crate::data::{generate_synthetic, load_cifar, CifarVariant, SyntheticSpec};
use anyhow::{bail, Context, Result};
use dham_net::analysis::{
    corrupt, count_multiplications, extract_features, ncm_fewshot, noise_eval, win_statistics,
    CorruptionSpec, FewShotConfig, NoiseKind,
};
use dham_net::model::{topology_of, ForwardMode, Model};
use dham_net::train::{evaluate, train, LabeledDataset};
use dham_net::util::derive_seed;
use dham_net::wta::GroupSpec;
use dham_sam::{capacity_sweep, HeteroMemory, SparseMessage, SweepConfig};
use std::fs;
use std::path::{Path, PathBuf};

pub const TRAINING_CSV_HEADER: &str = "epoch,lr,temperature,train_loss,train_acc,val_acc";
pub const EVAL_CSV_HEADER: &str = "mode,accuracy,n";
pub const COUNT_CSV_HEADER: &str = "ell,dense_input_macs,gated_dense_macs,total_macs";
pub const COUNT_LAYERS_CSV_HEADER: &str = "layer,kind,dense_macs,ell_eff,effective_macs";
pub const WINS_CSV_HEADER: &str = "layer,group,channel,kind,count,positions,proportion";
pub const NOISE_CSV_HEADER: &str = "clean,gaussian,shot,impulse";
pub const FEWSHOT_CSV_HEADER: &str = "n_way,k_shot,queries,runs,mean_accuracy,ci95_half_width";
pub const CAPACITY_CSV_HEADER: &str = "m,message_error_rate,symbol_error_rate";

fn prepare_outdir(cfg: &RunConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.outdir)
        .with_context(|| format!("cannot create output directory {}", cfg.outdir.display()))?;
    fs::write(cfg.outdir.join("config.resolved"), cfg.resolved())?;
    Ok(cfg.outdir.clone())
}

fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut text =
        String::with_capacity(header.len() + rows.iter().map(|r| r.len() + 1).sum::<usize>() + 1);
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn load_train_set(cfg: &RunConfig) -> Result<LabeledDataset> {
    let path = cfg
        .data_train
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("config has no data.train path"))?;
    if !path.exists() {
        bail!("training dataset not found at {}", path.display());
    }
    let variant = CifarVariant::from_name(&cfg.data_format)?;
    let data = load_cifar(path, variant)?.with_classes(cfg.data_classes)?;
    Ok(data.limit(cfg.data_limit))
}

fn load_val_set(cfg: &RunConfig) -> Result<Option<LabeledDataset>> {
    match &cfg.data_val {
        None => Ok(None),
        Some(path) => {
            if !path.exists() {
                bail!("validation dataset not found at {}", path.display());
            }
            let variant = CifarVariant::from_name(&cfg.data_format)?;
            Ok(Some(
                load_cifar(path, variant)?.with_classes(cfg.data_classes)?,
            ))
        }
    }
}

fn eval_mode(cfg: &RunConfig) -> ForwardMode {
    match cfg.eval_mode.as_str() {
        "baseline" => ForwardMode::Baseline,
        "anneal" => ForwardMode::Anneal {
            t: cfg.eval_t.unwrap_or(cfg.temp_final),
        },
        _ => ForwardMode::Wta {
            binary: cfg.act_binary,
        },
    }
}

fn load_model(cfg: &RunConfig, checkpoint: &Path) -> Result<Model> {
    if !checkpoint.exists() {
        bail!("checkpoint not found at {}", checkpoint.display());
    }
    let mut model = Model::build(cfg.model_config(), cfg.seed)?;
    model.load(checkpoint)?;
    Ok(model)
}

fn fmt_acc(v: f64) -> String {
    format!("{v:.6}")
}

/// Train a model, writing model.dnwt, training.csv, and config.resolved.
pub fn cmd_train(cfg: &RunConfig) -> Result<PathBuf> {
    let outdir = prepare_outdir(cfg)?;
    let train_set = load_train_set(cfg)?;
    let val_set = load_val_set(cfg)?;
    let mut model = Model::build(cfg.model_config(), cfg.seed)?;
    let report = train(
        &mut model,
        &train_set,
        val_set.as_ref(),
        &cfg.train_config(),
    )?;
    let rows: Vec<String> = report
        .rows
        .iter()
        .map(|r| {
            format!(
                "{},{:.8},{},{:.6},{},{}",
                r.epoch,
                r.lr,
                r.temperature.map(|t| format!("{t:.6}")).unwrap_or_default(),
                r.train_loss,
                fmt_acc(r.train_acc),
                r.val_acc.map(fmt_acc).unwrap_or_default(),
            )
        })
        .collect();
    write_csv(&outdir.join("training.csv"), TRAINING_CSV_HEADER, &rows)?;
    let ckpt = outdir.join("model.dnwt");
    model.save(&ckpt)?;
    if let Some(last) = report.rows.last() {
        println!(
            "trained {} epochs: train_acc {:.4}{}",
            report.rows.len(),
            last.train_acc,
            last.val_acc
                .map(|v| format!(", val_acc {v:.4}"))
                .unwrap_or_default()
        );
    }
    Ok(ckpt)
}

/// Evaluate a checkpoint on the validation (or training) set.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<f64> {
    let outdir = prepare_outdir(cfg)?;
    let mut model = load_model(cfg, checkpoint)?;
    let data = match load_val_set(cfg)? {
        Some(v) => v,
        None => load_train_set(cfg)?,
    };
    let mode = eval_mode(cfg);
    let acc = evaluate(&mut model, &data, mode)?;
    write_csv(
        &outdir.join("eval.csv"),
        EVAL_CSV_HEADER,
        &[format!("{},{},{}", cfg.eval_mode, fmt_acc(acc), data.n)],
    )?;
    println!(
        "accuracy ({}): {:.4} over {} examples",
        cfg.eval_mode, acc, data.n
    );
    Ok(acc)
}

/// Static multiplication counts over the ℓ grid, plus a per-layer breakdown
/// at the configured grouping. Works without a checkpoint.
pub fn cmd_count(cfg: &RunConfig) -> Result<()> {
    let outdir = prepare_outdir(cfg)?;
    let topo = topology_of(&cfg.model_config())?;
    let mut rows = Vec::new();
    for ell in [1usize, 2, 4, 8, 16, 32, 64] {
        let r = count_multiplications(&topo, &GroupSpec::FixedL(ell))?;
        rows.push(format!(
            "{ell},{},{},{}",
            r.dense_input_total, r.gated_dense_total, r.total_effective
        ));
    }
    write_csv(&outdir.join("count.csv"), COUNT_CSV_HEADER, &rows)?;

    let detail = count_multiplications(&topo, &cfg.group_spec())?;
    let rows: Vec<String> = detail
        .rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{}",
                r.layer, r.kind, r.dense_macs, r.sparsity_denom, r.effective_macs
            )
        })
        .collect();
    write_csv(
        &outdir.join("count_layers.csv"),
        COUNT_LAYERS_CSV_HEADER,
        &rows,
    )?;
    println!(
        "dense total {} multiplications; {} at the configured grouping",
        detail.total_dense, detail.total_effective
    );
    Ok(())
}

/// Win-proportion statistics over the evaluation set in WTA mode.
pub fn cmd_wins(cfg: &RunConfig, checkpoint: &Path, class: Option<u16>) -> Result<()> {
    let outdir = prepare_outdir(cfg)?;
    let mut model = load_model(cfg, checkpoint)?;
    let data = match load_val_set(cfg)? {
        Some(v) => v,
        None => load_train_set(cfg)?,
    };
    let data = data.limit(cfg.data_limit);
    let stats = win_statistics(&mut model, &data, class, cfg.act_binary)?;
    let mut rows = Vec::new();
    let mut plot = String::new();
    for layer in &stats.layers {
        for g in 0..layer.groups() {
            for j in 0..layer.group_len {
                let ch = g * layer.group_len + j;
                rows.push(format!(
                    "{},{},{},map,{},{},{}",
                    layer.name,
                    g,
                    ch,
                    layer.wins[ch],
                    layer.positions,
                    fmt_acc(layer.proportion(ch))
                ));
                plot.push_str(&format!(
                    "{} {} {} {:.6}\n",
                    layer.name,
                    g,
                    j,
                    layer.proportion(ch)
                ));
            }
            rows.push(format!(
                "{},{},,blank,{},{},{}",
                layer.name,
                g,
                layer.blanks[g],
                layer.positions,
                fmt_acc(layer.blank_proportion(g))
            ));
        }
    }
    write_csv(&outdir.join("wins.csv"), WINS_CSV_HEADER, &rows)?;
    fs::write(outdir.join("wins_plot.dat"), plot)?;
    println!(
        "win statistics over {} images, {} grouped layers",
        stats.images,
        stats.layers.len()
    );
    Ok(())
}

/// Accuracy under Gaussian, shot, and impulse noise, averaged over the five
/// severities, next to clean accuracy.
pub fn cmd_noise(cfg: &RunConfig, checkpoint: &Path) -> Result<()> {
    let outdir = prepare_outdir(cfg)?;
    let mut model = load_model(cfg, checkpoint)?;
    let data = match load_val_set(cfg)? {
        Some(v) => v,
        None => load_train_set(cfg)?,
    };
    let data = data.limit(cfg.data_limit);
    let report = noise_eval(
        &mut model,
        &data,
        &NoiseKind::ALL,
        eval_mode(cfg),
        derive_seed(cfg.seed, &[0x6e6f697365]),
    )?;
    let row = format!(
        "{},{},{},{}",
        fmt_acc(report.clean),
        fmt_acc(report.by_kind[0].1),
        fmt_acc(report.by_kind[1].1),
        fmt_acc(report.by_kind[2].1)
    );
    write_csv(&outdir.join("noise.csv"), NOISE_CSV_HEADER, &[row])?;
    println!(
        "clean {:.4} | gaussian {:.4} | shot {:.4} | impulse {:.4}",
        report.clean, report.by_kind[0].1, report.by_kind[1].1, report.by_kind[2].1
    );
    Ok(())
}

/// Few-shot nearest-class-mean transfer on features extracted from the
/// evaluation set.
pub fn cmd_fewshot(cfg: &RunConfig, checkpoint: &Path) -> Result<()> {
    let outdir = prepare_outdir(cfg)?;
    let mut model = load_model(cfg, checkpoint)?;
    let data = match load_val_set(cfg)? {
        Some(v) => v,
        None => load_train_set(cfg)?,
    };
    let data = data.limit(cfg.data_limit);
    let features = extract_features(&mut model, &data, eval_mode(cfg), cfg.fewshot_normalize)?;
    let mut by_class: Vec<Vec<Vec<f64>>> = vec![Vec::new(); data.classes];
    for (row, &label) in features.iter().zip(&data.labels) {
        by_class[label as usize].push(row.iter().map(|&v| v as f64).collect());
    }
    let pool = cfg.fewshot_pool.min(data.classes);
    if pool < cfg.fewshot_pool {
        println!("note: candidate pool clamped to the {pool} available classes");
    }
    let result = ncm_fewshot(
        &by_class,
        &FewShotConfig {
            n_way: cfg.fewshot_n_way,
            k_shot: cfg.fewshot_k_shot,
            queries_per_class: cfg.fewshot_queries,
            runs: cfg.fewshot_runs,
            pool,
            seed: derive_seed(cfg.seed, &[0x666577]),
            normalize: false, // applied in extract_features when requested
        },
    )?;
    let row = format!(
        "{},{},{},{},{},{}",
        cfg.fewshot_n_way,
        cfg.fewshot_k_shot,
        cfg.fewshot_queries,
        result.runs,
        fmt_acc(result.mean_accuracy),
        fmt_acc(result.ci95_half_width)
    );
    write_csv(&outdir.join("fewshot.csv"), FEWSHOT_CSV_HEADER, &[row])?;
    println!(
        "{}-way {}-shot: {:.4} (±{:.4})",
        cfg.fewshot_n_way, cfg.fewshot_k_shot, result.mean_accuracy, result.ci95_half_width
    );
    Ok(())
}

/// Store-and-retrieve walkthrough on a small memory, with a SAMW dump.
pub fn cmd_sam_demo(cfg: &RunConfig) -> Result<()> {
    let outdir = prepare_outdir(cfg)?;
    let mut mem = HeteroMemory::new(4, 3, 2, 5)?;
    let x = SparseMessage::from_indices(4, 3, &[2, 0, 0, 1])?;
    let y = SparseMessage::from_indices(2, 5, &[1, 3])?;
    mem.store(&x, &y)?;
    let full = mem.retrieve(&x)?;
    let partial = mem.retrieve(&x.with_blanks(&[1, 3]))?;
    println!("stored x={:?} -> y={:?}", x.active(), y.active());
    println!("retrieved from full probe:    {:?}", full.active());
    println!("retrieved from half the probe: {:?}", partial.active());
    let path = outdir.join("memory.samw");
    mem.save(&path)?;
    println!("memory written to {}", path.display());
    Ok(())
}

/// Capacity sweep: store M random pairs, report retrieval error rates.
#[allow(clippy::too_many_arguments)]
pub fn cmd_sam_capacity(
    cfg: &RunConfig,
    in_clusters: usize,
    in_cluster_size: usize,
    out_clusters: usize,
    out_cluster_size: usize,
    counts: &[usize],
    trials: usize,
) -> Result<()> {
    let outdir = prepare_outdir(cfg)?;
    let rows = capacity_sweep(&SweepConfig {
        in_clusters,
        in_cluster_size,
        out_clusters,
        out_cluster_size,
        message_counts: counts.to_vec(),
        trials,
        seed: cfg.seed,
    })?;
    let lines: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{}",
                r.m,
                fmt_acc(r.message_error),
                fmt_acc(r.symbol_error)
            )
        })
        .collect();
    write_csv(&outdir.join("capacity.csv"), CAPACITY_CSV_HEADER, &lines)?;
    for r in &rows {
        println!(
            "M={:>6}  message_error {:.4}  symbol_error {:.4}",
            r.m, r.message_error, r.symbol_error
        );
    }
    Ok(())
}

/// Corrupt the evaluation set once and report pixel change statistics;
/// mostly a scriptable sanity hook for the corruption pipeline.
pub fn cmd_corrupt_stats(cfg: &RunConfig, kind: NoiseKind, severity: usize) -> Result<f64> {
    let data = match load_val_set(cfg)? {
        Some(v) => v,
        None => load_train_set(cfg)?,
    };
    let data = data.limit(cfg.data_limit);
    let out = corrupt(
        &data,
        &CorruptionSpec {
            kind,
            severity,
            seed: derive_seed(cfg.seed, &[0x6e6f697365]),
        },
    )?;
    let changed = data
        .images
        .iter()
        .zip(&out.images)
        .filter(|(a, b)| a != b)
        .count();
    Ok(changed as f64 / data.images.len() as f64)
}

/// Write synthetic train/val splits in the CIFAR-10 binary layout.
pub fn cmd_gen_data(spec: &SyntheticSpec, outdir: &Path) -> Result<()> {
    generate_synthetic(spec, outdir)?;
    println!(
        "wrote {} train and {} val examples per class ({} classes) to {}",
        spec.train_per_class,
        spec.val_per_class,
        spec.classes,
        outdir.display()
    );
    Ok(())
}
