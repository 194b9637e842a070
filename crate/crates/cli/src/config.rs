//! Flat `key = value` run configuration with `#` comments. Unknown keys are
//! a hard error; every run echoes its effective configuration to
//! `<outdir>/config.resolved`.

use anyhow::{bail, Context, Result};
use dham_net::model::{ActivationMode, Architecture, ModelConfig, ReplacePolicy};
use dham_net::train::TrainConfig;
use dham_net::wta::GroupSpec;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub outdir: PathBuf,
    pub data_train: Option<PathBuf>,
    pub data_val: Option<PathBuf>,
    pub data_format: String,
    pub data_limit: usize,
    pub data_classes: usize,
    pub model_arch: String,
    pub model_widths: Vec<usize>,
    pub model_blocks: usize,
    pub model_base_width: usize,
    pub model_input: (usize, usize, usize),
    pub group_mode: String,
    pub group_size: usize,
    pub act_mode: String,
    pub act_binary: bool,
    pub act_replace: String,
    pub temp_init: f64,
    pub temp_final: f64,
    pub train_epochs: usize,
    pub train_batch: usize,
    pub train_lr: f64,
    pub train_lr_drops: Vec<usize>,
    pub train_momentum: f64,
    pub train_weight_decay: f64,
    pub train_augment: bool,
    pub eval_mode: String,
    pub eval_t: Option<f64>,
    pub fewshot_n_way: usize,
    pub fewshot_k_shot: usize,
    pub fewshot_queries: usize,
    pub fewshot_runs: usize,
    pub fewshot_pool: usize,
    pub fewshot_normalize: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            outdir: PathBuf::from("runs/out"),
            data_train: None,
            data_val: None,
            data_format: "cifar10".into(),
            data_limit: 0,
            data_classes: 10,
            model_arch: "toycnn".into(),
            model_widths: vec![16, 32],
            model_blocks: 1,
            model_base_width: 64,
            model_input: (3, 32, 32),
            group_mode: "fixed_l".into(),
            group_size: 2,
            act_mode: "anneal".into(),
            act_binary: false,
            act_replace: "all".into(),
            temp_init: 10.0,
            temp_final: 1000.0,
            train_epochs: 20,
            train_batch: 128,
            train_lr: 0.05,
            train_lr_drops: vec![7, 13],
            train_momentum: 0.9,
            train_weight_decay: 5e-4,
            train_augment: true,
            eval_mode: "wta".into(),
            eval_t: None,
            fewshot_n_way: 5,
            fewshot_k_shot: 5,
            fewshot_queries: 15,
            fewshot_runs: 1000,
            fewshot_pool: 20,
            fewshot_normalize: false,
        }
    }
}

/// Flag overrides that beat config-file values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub outdir: Option<PathBuf>,
    pub mode: Option<String>,
    pub ell: Option<usize>,
    pub c: Option<usize>,
    pub t_init: Option<f64>,
    pub t_final: Option<f64>,
    pub limit: Option<usize>,
}

fn parse_usize_list(v: &str) -> Result<Vec<usize>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|p| p.trim().parse::<usize>().context("expected integer list"))
        .collect()
}

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => bail!("expected boolean, got `{other}`"),
    }
}

impl RunConfig {
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {}: expected `key = value`, got `{line}`", lineno + 1);
            };
            let key = key.trim();
            let value = value.trim();
            if seen.insert(key.to_string(), lineno).is_some() {
                bail!("line {}: duplicate key `{key}`", lineno + 1);
            }
            cfg.apply(key, value)
                .with_context(|| format!("line {}: key `{key}`", lineno + 1))?;
        }
        Ok(cfg)
    }

    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        Self::parse_str(&text).with_context(|| format!("in config {}", path.display()))
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = value.parse()?,
            "outdir" => self.outdir = PathBuf::from(value),
            "data.train" => self.data_train = Some(PathBuf::from(value)),
            "data.val" => self.data_val = Some(PathBuf::from(value)),
            "data.format" => match value {
                "cifar10" | "cifar100" => self.data_format = value.into(),
                other => bail!("unknown data format `{other}` (cifar10|cifar100)"),
            },
            "data.limit" => self.data_limit = value.parse()?,
            "data.classes" => self.data_classes = value.parse()?,
            "model.arch" => match value {
                "toycnn" | "resnet18" => self.model_arch = value.into(),
                other => bail!("unknown architecture `{other}` (toycnn|resnet18)"),
            },
            "model.widths" => self.model_widths = parse_usize_list(value)?,
            "model.blocks" => self.model_blocks = value.parse()?,
            "model.base_width" => self.model_base_width = value.parse()?,
            "model.input" => {
                let parts = parse_usize_list(value)?;
                if parts.len() != 3 {
                    bail!("model.input needs three comma-separated values");
                }
                self.model_input = (parts[0], parts[1], parts[2]);
            }
            "group.mode" => match value {
                "fixed_l" | "fixed_c" => self.group_mode = value.into(),
                other => bail!("unknown group mode `{other}` (fixed_l|fixed_c)"),
            },
            "group.size" => self.group_size = value.parse()?,
            "act.mode" => match value {
                "baseline" | "anneal" | "wta" => self.act_mode = value.into(),
                other => bail!("unknown activation mode `{other}` (baseline|anneal|wta)"),
            },
            "act.binary" => self.act_binary = parse_bool(value)?,
            "act.replace" => match value {
                "all" | "pre_add_only" => self.act_replace = value.into(),
                other => bail!("unknown replace policy `{other}` (all|pre_add_only)"),
            },
            "temp.init" => self.temp_init = value.parse()?,
            "temp.final" => self.temp_final = value.parse()?,
            "train.epochs" => self.train_epochs = value.parse()?,
            "train.batch" => self.train_batch = value.parse()?,
            "train.lr" => self.train_lr = value.parse()?,
            "train.lr_drops" => self.train_lr_drops = parse_usize_list(value)?,
            "train.momentum" => self.train_momentum = value.parse()?,
            "train.weight_decay" => self.train_weight_decay = value.parse()?,
            "train.augment" => self.train_augment = parse_bool(value)?,
            "eval.mode" => match value {
                "baseline" | "anneal" | "wta" => self.eval_mode = value.into(),
                other => bail!("unknown eval mode `{other}` (baseline|anneal|wta)"),
            },
            "eval.t" => self.eval_t = Some(value.parse()?),
            "fewshot.n_way" => self.fewshot_n_way = value.parse()?,
            "fewshot.k_shot" => self.fewshot_k_shot = value.parse()?,
            "fewshot.queries" => self.fewshot_queries = value.parse()?,
            "fewshot.runs" => self.fewshot_runs = value.parse()?,
            "fewshot.pool" => self.fewshot_pool = value.parse()?,
            "fewshot.normalize" => self.fewshot_normalize = parse_bool(value)?,
            other => bail!("unknown configuration key `{other}`"),
        }
        Ok(())
    }

    pub fn with_overrides(mut self, o: &Overrides) -> Self {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(d) = &o.outdir {
            self.outdir = d.clone();
        }
        if let Some(m) = &o.mode {
            self.act_mode = m.clone();
            self.eval_mode = m.clone();
        }
        if let Some(l) = o.ell {
            self.group_mode = "fixed_l".into();
            self.group_size = l;
        }
        if let Some(c) = o.c {
            self.group_mode = "fixed_c".into();
            self.group_size = c;
        }
        if let Some(t) = o.t_init {
            self.temp_init = t;
        }
        if let Some(t) = o.t_final {
            self.temp_final = t;
        }
        if let Some(n) = o.limit {
            self.data_limit = n;
        }
        self
    }

    pub fn group_spec(&self) -> GroupSpec {
        match self.group_mode.as_str() {
            "fixed_c" => GroupSpec::FixedC(self.group_size),
            _ => GroupSpec::FixedL(self.group_size),
        }
    }

    pub fn activation_mode(&self) -> ActivationMode {
        match self.act_mode.as_str() {
            "baseline" => ActivationMode::Baseline,
            "wta" => ActivationMode::Wta {
                binary: self.act_binary,
            },
            _ => ActivationMode::Anneal {
                t_init: self.temp_init,
                t_final: self.temp_final,
            },
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let arch = match self.model_arch.as_str() {
            "resnet18" => Architecture::ResNet18 {
                base_width: self.model_base_width,
            },
            _ => Architecture::ToyCnn {
                widths: self.model_widths.clone(),
                blocks: self.model_blocks,
            },
        };
        ModelConfig {
            arch,
            input: self.model_input,
            classes: self.data_classes,
            group: self.group_spec(),
            mode: self.activation_mode(),
            policy: match self.act_replace.as_str() {
                "pre_add_only" => ReplacePolicy::PreAddOnly,
                _ => ReplacePolicy::All,
            },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train_epochs,
            batch_size: self.train_batch,
            lr: self.train_lr,
            lr_drop_epochs: self.train_lr_drops.clone(),
            momentum: self.train_momentum,
            weight_decay: self.train_weight_decay,
            augment: self.train_augment,
            seed: self.seed,
        }
    }

    /// Every effective key, sorted, as written to `config.resolved`.
    pub fn resolved(&self) -> String {
        let mut pairs: Vec<(String, String)> = vec![
            ("seed".into(), self.seed.to_string()),
            ("outdir".into(), self.outdir.display().to_string()),
            (
                "data.train".into(),
                self.data_train
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ),
            (
                "data.val".into(),
                self.data_val
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ),
            ("data.format".into(), self.data_format.clone()),
            ("data.limit".into(), self.data_limit.to_string()),
            ("data.classes".into(), self.data_classes.to_string()),
            ("model.arch".into(), self.model_arch.clone()),
            (
                "model.widths".into(),
                self.model_widths
                    .iter()
                    .map(|w| w.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("model.blocks".into(), self.model_blocks.to_string()),
            ("model.base_width".into(), self.model_base_width.to_string()),
            (
                "model.input".into(),
                format!(
                    "{},{},{}",
                    self.model_input.0, self.model_input.1, self.model_input.2
                ),
            ),
            ("group.mode".into(), self.group_mode.clone()),
            ("group.size".into(), self.group_size.to_string()),
            ("act.mode".into(), self.act_mode.clone()),
            ("act.binary".into(), self.act_binary.to_string()),
            ("act.replace".into(), self.act_replace.clone()),
            ("temp.init".into(), format!("{}", self.temp_init)),
            ("temp.final".into(), format!("{}", self.temp_final)),
            ("train.epochs".into(), self.train_epochs.to_string()),
            ("train.batch".into(), self.train_batch.to_string()),
            ("train.lr".into(), format!("{}", self.train_lr)),
            (
                "train.lr_drops".into(),
                self.train_lr_drops
                    .iter()
                    .map(|e| e.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("train.momentum".into(), format!("{}", self.train_momentum)),
            (
                "train.weight_decay".into(),
                format!("{}", self.train_weight_decay),
            ),
            ("train.augment".into(), self.train_augment.to_string()),
            ("eval.mode".into(), self.eval_mode.clone()),
            (
                "eval.t".into(),
                self.eval_t.map(|t| format!("{t}")).unwrap_or_default(),
            ),
            ("fewshot.n_way".into(), self.fewshot_n_way.to_string()),
            ("fewshot.k_shot".into(), self.fewshot_k_shot.to_string()),
            ("fewshot.queries".into(), self.fewshot_queries.to_string()),
            ("fewshot.runs".into(), self.fewshot_runs.to_string()),
            ("fewshot.pool".into(), self.fewshot_pool.to_string()),
            (
                "fewshot.normalize".into(),
                self.fewshot_normalize.to_string(),
            ),
        ];
        pairs.sort();
        let mut out = String::new();
        for (k, v) in pairs {
            if v.is_empty() {
                continue; // unset optional keys are omitted
            }
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
