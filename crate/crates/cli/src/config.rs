//! Experiment configuration: `key = value` lines under `[section]` headers.
//!
//! Key names are unique across sections, so a command-line override is just
//! `--key value`. Precedence, lowest first: preset defaults, config file,
//! `ADAPT_PARSE_SEED`, flags.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use adaptseg::data::{SceneParams, ShiftParams};
use adaptseg::nn::ScaleProfile;
use adaptseg::train::{TrainConfig, TrainMode};
use adaptseg::{Error, Result};

pub const SEED_ENV: &str = "ADAPT_PARSE_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Paper,
}

impl Preset {
    fn name(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub mode: TrainMode,
    pub checkpoint_interval: u64,
    pub eval_interval: u64,
    /// Seed, profile and branches are kept in sync with `mode` and the scene.
    pub train: TrainConfig,
    pub scene: SceneParams,
    pub shift: ShiftParams,
    pub source_count: usize,
    pub target_train_count: usize,
    pub target_test_count: usize,
    pub source_dir: PathBuf,
    pub target_dir: PathBuf,
    pub run_dir: PathBuf,
}

const SECTIONS: [(&str, &[&str]); 8] = [
    ("run", &["preset", "mode", "seed", "checkpoint_interval", "eval_interval"]),
    (
        "train",
        &[
            "iterations",
            "k_c",
            "batch_size",
            "lr_main",
            "lr_feature_adv",
            "lr_label_adv",
            "adam_beta1",
            "adam_beta2",
            "sgd_momentum",
            "sgd_weight_decay",
            "adversarial_bn_updates",
        ],
    ),
    ("profile", &ScaleProfile::KEYS),
    ("scene", &["scale_range", "pose_jitter", "texture_level"]),
    ("shift", &["brightness_factor", "blur_sigma", "noise_std", "downscale_factor", "motion_blur_len"]),
    ("data", &["source_count", "target_train_count", "target_test_count"]),
    ("paths", &["source_dir", "target_dir", "run_dir"]),
    ("", &[]),
];

pub fn section_of(key: &str) -> Option<&'static str> {
    SECTIONS.iter().find(|(_, keys)| keys.contains(&key)).map(|(s, _)| *s)
}

pub fn is_key(key: &str) -> bool {
    section_of(key).is_some()
}

fn bad(key: &str, value: &str, what: &str) -> Error {
    Error::InvalidConfig(format!("{key}: `{value}` is not {what}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value.trim().parse().map_err(|_| bad(key, value, what))
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let train = match preset {
            Preset::Desk => TrainConfig::desk(),
            Preset::Paper => TrainConfig::paper(),
        };
        let mut c = ExperimentConfig {
            preset,
            mode: TrainMode::Adapt,
            checkpoint_interval: 100,
            eval_interval: 100,
            scene: SceneParams::default(),
            shift: ShiftParams::default_target(),
            source_count: 500,
            target_train_count: 500,
            target_test_count: 100,
            source_dir: PathBuf::from("data/source"),
            target_dir: PathBuf::from("data/target"),
            run_dir: PathBuf::from("runs/adapt"),
            train,
        };
        c.sync();
        c
    }

    /// Copy the fields shared between sub-configurations.
    fn sync(&mut self) {
        self.train.branches = self.mode.branches();
        self.scene.seed = self.train.seed;
        self.scene.canvas_hw = self.train.profile.input_hw;
    }

    /// Apply `(key, value)` pairs in order over the preset they name (desk by default).
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let preset = match pairs.iter().rev().find(|(k, _)| k == "preset") {
            None => Preset::Desk,
            Some((_, v)) => match v.trim() {
                "desk" => Preset::Desk,
                "paper" => Preset::Paper,
                other => return Err(bad("preset", other, "`desk` or `paper`")),
            },
        };
        let mut c = Self::preset(preset);
        for (k, v) in pairs {
            c.set(k, v)?;
        }
        c.sync();
        c.validate()?;
        Ok(c)
    }

    /// Resolve a configuration from an optional file, the seed environment
    /// variable, and flag overrides.
    pub fn resolve(file: Option<&Path>, env_seed: Option<String>, flags: &[(String, String)]) -> Result<Self> {
        let mut pairs = match file {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::Io { path: p.to_path_buf(), source: e })?;
                parse_text(&text).map_err(|e| match e {
                    Error::InvalidConfig(m) => Error::InvalidConfig(format!("{}: {m}", p.display())),
                    other => other,
                })?
            }
            None => Vec::new(),
        };
        if let Some(seed) = env_seed {
            pairs.push(("seed".into(), seed));
        }
        pairs.extend(flags.iter().cloned());
        Self::from_pairs(&pairs)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let t = &mut self.train;
        match key {
            "preset" => {}
            "mode" => self.mode = TrainMode::parse(v)?,
            "seed" => t.seed = num(key, v, "an unsigned integer")?,
            "checkpoint_interval" => self.checkpoint_interval = num(key, v, "an unsigned integer")?,
            "eval_interval" => self.eval_interval = num(key, v, "an unsigned integer")?,
            "iterations" => t.iterations = num(key, v, "an unsigned integer")?,
            "k_c" => t.k_c = num(key, v, "an unsigned integer")?,
            "batch_size" => t.batch_size = num(key, v, "an unsigned integer")?,
            "lr_main" => t.lr_main = num(key, v, "a number")?,
            "lr_feature_adv" => t.lr_feature_adv = num(key, v, "a number")?,
            "lr_label_adv" => t.lr_label_adv = num(key, v, "a number")?,
            "adam_beta1" => t.adam_beta1 = num(key, v, "a number")?,
            "adam_beta2" => t.adam_beta2 = num(key, v, "a number")?,
            "sgd_momentum" => t.sgd_momentum = num(key, v, "a number")?,
            "sgd_weight_decay" => t.sgd_weight_decay = num(key, v, "a number")?,
            "adversarial_bn_updates" => t.adversarial_bn_updates = num(key, v, "`true` or `false`")?,
            "scale_range" => {
                let (lo, hi) = v.split_once(',').ok_or_else(|| bad(key, v, "a pair `lo,hi`"))?;
                self.scene.scale_range = (num(key, lo, "a number")?, num(key, hi, "a number")?);
            }
            "pose_jitter" => self.scene.pose_jitter = num(key, v, "a number")?,
            "texture_level" => self.scene.texture_level = num(key, v, "a number")?,
            "brightness_factor" => self.shift.brightness_factor = num(key, v, "a number")?,
            "blur_sigma" => self.shift.blur_sigma = num(key, v, "a number")?,
            "noise_std" => self.shift.noise_std = num(key, v, "a number")?,
            "downscale_factor" => self.shift.downscale_factor = num(key, v, "an unsigned integer")?,
            "motion_blur_len" => self.shift.motion_blur_len = num(key, v, "an unsigned integer")?,
            "source_count" => self.source_count = num(key, v, "an unsigned integer")?,
            "target_train_count" => self.target_train_count = num(key, v, "an unsigned integer")?,
            "target_test_count" => self.target_test_count = num(key, v, "an unsigned integer")?,
            "source_dir" => self.source_dir = PathBuf::from(v),
            "target_dir" => self.target_dir = PathBuf::from(v),
            "run_dir" => self.run_dir = PathBuf::from(v),
            _ => {
                if !t.profile.set(key, v)? {
                    return Err(Error::InvalidConfig(format!("unknown key `{key}`")));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        Some(match key {
            "preset" => self.preset.name().into(),
            "mode" => self.mode.name().into(),
            "seed" => t.seed.to_string(),
            "checkpoint_interval" => self.checkpoint_interval.to_string(),
            "eval_interval" => self.eval_interval.to_string(),
            "iterations" => t.iterations.to_string(),
            "k_c" => t.k_c.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "lr_main" => t.lr_main.to_string(),
            "lr_feature_adv" => t.lr_feature_adv.to_string(),
            "lr_label_adv" => t.lr_label_adv.to_string(),
            "adam_beta1" => t.adam_beta1.to_string(),
            "adam_beta2" => t.adam_beta2.to_string(),
            "sgd_momentum" => t.sgd_momentum.to_string(),
            "sgd_weight_decay" => t.sgd_weight_decay.to_string(),
            "adversarial_bn_updates" => t.adversarial_bn_updates.to_string(),
            "scale_range" => format!("{},{}", self.scene.scale_range.0, self.scene.scale_range.1),
            "pose_jitter" => self.scene.pose_jitter.to_string(),
            "texture_level" => self.scene.texture_level.to_string(),
            "brightness_factor" => self.shift.brightness_factor.to_string(),
            "blur_sigma" => self.shift.blur_sigma.to_string(),
            "noise_std" => self.shift.noise_std.to_string(),
            "downscale_factor" => self.shift.downscale_factor.to_string(),
            "motion_blur_len" => self.shift.motion_blur_len.to_string(),
            "source_count" => self.source_count.to_string(),
            "target_train_count" => self.target_train_count.to_string(),
            "target_test_count" => self.target_test_count.to_string(),
            "source_dir" => self.source_dir.display().to_string(),
            "target_dir" => self.target_dir.display().to_string(),
            "run_dir" => self.run_dir.display().to_string(),
            _ => return t.profile.get(key),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.scene.validate()?;
        self.shift.validate()?;
        let dirs = [&self.source_dir, &self.target_dir, &self.run_dir];
        for (i, a) in dirs.iter().enumerate() {
            if dirs[i + 1..].contains(a) {
                return Err(Error::InvalidConfig(format!("paths must be distinct, `{}` appears twice", a.display())));
            }
        }
        Ok(())
    }

    /// Every key, grouped by section; [`parse_text`] reads it back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (section, keys) in SECTIONS.iter().filter(|(s, _)| !s.is_empty()) {
            let _ = writeln!(s, "[{section}]");
            for key in keys.iter() {
                let _ = writeln!(s, "{key} = {}", self.get(key).expect("listed key"));
            }
            s.push('\n');
        }
        s
    }

    /// Every key as a string, nested by section.
    pub fn to_json(&self) -> serde_json::Value {
        let mut out = serde_json::Map::new();
        for (section, keys) in SECTIONS.iter().filter(|(s, _)| !s.is_empty()) {
            let entries = keys.iter().map(|k| (k.to_string(), self.get(k).expect("listed key").into())).collect();
            out.insert(section.to_string(), serde_json::Value::Object(entries));
        }
        serde_json::Value::Object(out)
    }

    pub fn target_train_dir(&self) -> PathBuf {
        self.target_dir.join("train")
    }

    pub fn target_test_dir(&self) -> PathBuf {
        self.target_dir.join("test")
    }
}

/// `(key, value)` pairs of a config file in order. `#` starts a comment; a
/// key must belong to the section it appears under.
pub fn parse_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut section: Option<String> = None;
    let mut pairs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let at = |msg: String| Error::InvalidConfig(format!("line {}: {msg}", n + 1));
        if let Some(name) = line.strip_prefix('[') {
            let name =
                name.strip_suffix(']').ok_or_else(|| at(format!("unterminated section header `{line}`")))?.trim();
            if !SECTIONS.iter().any(|(s, _)| *s == name && !s.is_empty()) {
                return Err(at(format!("unknown section `[{name}]`")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| at(format!("expected `key = value`, got `{line}`")))?;
        let k = k.trim();
        let home = section_of(k).ok_or_else(|| at(format!("unknown key `{k}`")))?;
        if let Some(s) = &section {
            if s != home {
                return Err(at(format!("key `{k}` belongs in [{home}], not [{s}]")));
            }
        }
        pairs.push((k.to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

pub type Overrides = Vec<(String, String)>;

/// Split `--key value` and `--key=value` config overrides out of `args`
/// (dashes in the key read as underscores), returning the remaining
/// arguments and the overrides in order.
pub fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, Overrides)> {
    let mut rest = Vec::with_capacity(args.len());
    let mut pairs = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (flag, None),
        };
        let key = name.replace('-', "_");
        if !is_key(&key) {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it.next().ok_or_else(|| Error::InvalidConfig(format!("--{name} needs a value")))?,
        };
        pairs.push((key, value));
    }
    Ok((rest, pairs))
}
