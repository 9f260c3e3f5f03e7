//! Network configuration, its validation, and the flat `key = value` file format.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::precision::PrecisionMode;

/// All structural and training hyperparameters of a three-layer network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    /// Input hypercolumns, one per pixel.
    pub n_input_hcu: usize,
    /// Minicolumns per input hypercolumn (2 = complementary pixel code).
    pub input_mcu_per_hcu: usize,
    pub n_hidden_hcu: usize,
    pub hidden_mcu_per_hcu: usize,
    /// Output minicolumns; the output layer is a single hypercolumn.
    pub n_classes: usize,
    /// Active input-hypercolumn links per hidden hypercolumn.
    pub n_act: usize,
    /// Silent (candidate) links per hidden hypercolumn.
    pub n_sil: usize,
    /// Trace time constant in epochs.
    pub tau_p: f64,
    pub epochs_unsup: usize,
    pub epochs_sup: usize,
    /// Soft-WTA gain.
    pub beta: f64,
    /// Samples between rewiring events; `None` means a quarter of the training set.
    pub rewire_period: Option<usize>,
    /// Silent links replaced per hypercolumn at each rewiring event.
    pub n_replace: usize,
    /// Mixing weight of a training sample in each hidden minicolumn's initial
    /// conditional traces. Zero leaves the independence prior untouched.
    pub init_sample_mix: f64,
    /// Strength of usage homeostasis on hidden biases during the unsupervised phase.
    pub homeostasis: f64,
    pub precision: PrecisionMode,
    pub seed: u64,
}

impl NetworkConfig {
    /// The 28x28 handwritten-digit configuration: 32x128 hidden, 64/64 links.
    pub fn mnist() -> NetworkConfig {
        NetworkConfig {
            n_input_hcu: 28 * 28,
            input_mcu_per_hcu: 2,
            n_hidden_hcu: 32,
            hidden_mcu_per_hcu: 128,
            n_classes: 10,
            n_act: 64,
            n_sil: 64,
            tau_p: 3.0,
            epochs_unsup: 5,
            epochs_sup: 5,
            beta: 2.0,
            rewire_period: None,
            n_replace: 16,
            init_sample_mix: 0.6,
            homeostasis: 0.0,
            precision: PrecisionMode::FP32,
            seed: 1,
        }
    }

    /// 64x64 chest X-ray base configuration: 30x400 hidden, 320/80 links.
    pub fn pneumonia() -> NetworkConfig {
        NetworkConfig {
            n_input_hcu: 64 * 64,
            n_hidden_hcu: 30,
            hidden_mcu_per_hcu: 400,
            n_classes: 2,
            n_act: 320,
            n_sil: 80,
            tau_p: 0.3,
            epochs_unsup: 5,
            epochs_sup: 5,
            n_replace: 20,
            ..NetworkConfig::mnist()
        }
    }

    /// 128x128 breast ultrasound configuration: 10x1000 hidden, 676/156 links.
    pub fn breast() -> NetworkConfig {
        NetworkConfig {
            n_input_hcu: 128 * 128,
            n_hidden_hcu: 10,
            hidden_mcu_per_hcu: 1000,
            n_classes: 2,
            n_act: 676,
            n_sil: 156,
            tau_p: 0.2,
            epochs_unsup: 15,
            epochs_sup: 15,
            n_replace: 39,
            ..NetworkConfig::mnist()
        }
    }

    /// Default replacement count for a given silent pool size.
    pub fn default_n_replace(n_sil: usize) -> usize {
        if n_sil == 0 {
            0
        } else {
            (n_sil / 4).max(1)
        }
    }

    pub fn n_input_mcu(&self) -> usize {
        self.n_input_hcu * self.input_mcu_per_hcu
    }

    pub fn n_hidden_mcu(&self) -> usize {
        self.n_hidden_hcu * self.hidden_mcu_per_hcu
    }

    /// Connections (active + silent) per hidden hypercolumn.
    pub fn n_slots(&self) -> usize {
        self.n_act + self.n_sil
    }

    pub fn rewire_period_for(&self, n_train: usize) -> usize {
        self.rewire_period
            .unwrap_or_else(|| n_train.div_ceil(4))
            .max(1)
    }

    /// Multiply-adds needed to compute every support for one image.
    pub fn support_ops(&self) -> u64 {
        let hidden = self.n_hidden_mcu() as u64 * (self.n_act * self.input_mcu_per_hcu) as u64;
        let output = self.n_classes as u64 * self.n_hidden_mcu() as u64;
        hidden + output
    }

    pub fn validate(&self) -> Result<()> {
        let v = validate_config(self);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<NetworkConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
    }

    /// Renders the configuration in the file format accepted by [`FromStr`].
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("n_input_hcu", self.n_input_hcu.to_string()),
            ("input_mcu_per_hcu", self.input_mcu_per_hcu.to_string()),
            ("n_hidden_hcu", self.n_hidden_hcu.to_string()),
            ("hidden_mcu_per_hcu", self.hidden_mcu_per_hcu.to_string()),
            ("n_classes", self.n_classes.to_string()),
            ("n_act", self.n_act.to_string()),
            ("n_sil", self.n_sil.to_string()),
            ("tau_p", self.tau_p.to_string()),
            ("epochs_unsup", self.epochs_unsup.to_string()),
            ("epochs_sup", self.epochs_sup.to_string()),
            ("beta", self.beta.to_string()),
            (
                "rewire_period",
                self.rewire_period
                    .map_or_else(|| "auto".to_string(), |p| p.to_string()),
            ),
            ("n_replace", self.n_replace.to_string()),
            ("init_sample_mix", self.init_sample_mix.to_string()),
            ("homeostasis", self.homeostasis.to_string()),
            ("precision", self.precision.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse {v:?}"))
        }
        match key {
            "n_input_hcu" => self.n_input_hcu = num(value)?,
            "input_mcu_per_hcu" => self.input_mcu_per_hcu = num(value)?,
            "n_hidden_hcu" => self.n_hidden_hcu = num(value)?,
            "hidden_mcu_per_hcu" => self.hidden_mcu_per_hcu = num(value)?,
            "n_classes" => self.n_classes = num(value)?,
            "n_act" => self.n_act = num(value)?,
            "n_sil" => self.n_sil = num(value)?,
            "tau_p" => self.tau_p = num(value)?,
            "epochs_unsup" => self.epochs_unsup = num(value)?,
            "epochs_sup" => self.epochs_sup = num(value)?,
            "beta" => self.beta = num(value)?,
            "rewire_period" => {
                self.rewire_period = if value == "auto" {
                    None
                } else {
                    Some(num(value)?)
                }
            }
            "n_replace" => self.n_replace = num(value)?,
            "init_sample_mix" => self.init_sample_mix = num(value)?,
            "homeostasis" => self.homeostasis = num(value)?,
            "precision" => self.precision = value.parse()?,
            "seed" => self.seed = num(value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig::mnist()
    }
}

impl FromStr for NetworkConfig {
    type Err = Error;

    /// Parses `key = value` lines on top of the MNIST defaults. `#` starts a
    /// comment; unknown keys are rejected.
    fn from_str(text: &str) -> Result<NetworkConfig> {
        let mut cfg = NetworkConfig::mnist();
        let mut replace_set = false;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::ConfigParse {
                line: n + 1,
                message: format!("expected `key = value`, got {line:?}"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            replace_set |= k == "n_replace";
            cfg.set(k, v)
                .map_err(|message| Error::ConfigParse { line: n + 1, message })?;
        }
        if !replace_set {
            cfg.n_replace = NetworkConfig::default_n_replace(cfg.n_sil);
        }
        Ok(cfg)
    }
}

/// One violated configuration invariant.
#[derive(Clone, Debug, PartialEq)]
pub enum ConfigViolation {
    ZeroCount(&'static str),
    LinksExceedInputs { n_act: usize, n_sil: usize, n_input_hcu: usize },
    NonPositiveTau(f64),
    NonPositiveBeta(f64),
    ReplaceExceedsSilent { n_replace: usize, n_sil: usize },
    ZeroRewirePeriod,
    SampleMixOutOfRange(f64),
    NegativeHomeostasis(f64),
}

impl fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigViolation::ZeroCount(name) => write!(f, "{name} must be at least 1"),
            ConfigViolation::LinksExceedInputs {
                n_act,
                n_sil,
                n_input_hcu,
            } => write!(
                f,
                "n_act+n_sil exceeds n_input_hcu ({n_act}+{n_sil} > {n_input_hcu})"
            ),
            ConfigViolation::NonPositiveTau(t) => write!(f, "tau_p must be positive (got {t})"),
            ConfigViolation::NonPositiveBeta(b) => write!(f, "beta must be positive (got {b})"),
            ConfigViolation::ReplaceExceedsSilent { n_replace, n_sil } => {
                write!(f, "n_replace exceeds n_sil ({n_replace} > {n_sil})")
            }
            ConfigViolation::ZeroRewirePeriod => write!(f, "rewire_period must be at least 1"),
            ConfigViolation::SampleMixOutOfRange(m) => {
                write!(f, "init_sample_mix must lie in [0, 1] (got {m})")
            }
            ConfigViolation::NegativeHomeostasis(h) => {
                write!(f, "homeostasis must be non-negative (got {h})")
            }
        }
    }
}

/// Returns every violated invariant, in a fixed order. Empty means valid.
pub fn validate_config(cfg: &NetworkConfig) -> Vec<ConfigViolation> {
    let mut v = Vec::new();
    for (name, value) in [
        ("n_input_hcu", cfg.n_input_hcu),
        ("input_mcu_per_hcu", cfg.input_mcu_per_hcu),
        ("n_hidden_hcu", cfg.n_hidden_hcu),
        ("hidden_mcu_per_hcu", cfg.hidden_mcu_per_hcu),
        ("n_classes", cfg.n_classes),
        ("n_act", cfg.n_act),
    ] {
        if value == 0 {
            v.push(ConfigViolation::ZeroCount(name));
        }
    }
    if cfg.n_act + cfg.n_sil > cfg.n_input_hcu {
        v.push(ConfigViolation::LinksExceedInputs {
            n_act: cfg.n_act,
            n_sil: cfg.n_sil,
            n_input_hcu: cfg.n_input_hcu,
        });
    }
    if cfg.tau_p.is_nan() || cfg.tau_p <= 0.0 {
        v.push(ConfigViolation::NonPositiveTau(cfg.tau_p));
    }
    if cfg.beta.is_nan() || cfg.beta <= 0.0 {
        v.push(ConfigViolation::NonPositiveBeta(cfg.beta));
    }
    if cfg.n_replace > cfg.n_sil {
        v.push(ConfigViolation::ReplaceExceedsSilent {
            n_replace: cfg.n_replace,
            n_sil: cfg.n_sil,
        });
    }
    if cfg.rewire_period == Some(0) {
        v.push(ConfigViolation::ZeroRewirePeriod);
    }
    if !(0.0..=1.0).contains(&cfg.init_sample_mix) {
        v.push(ConfigViolation::SampleMixOutOfRange(cfg.init_sample_mix));
    }
    if cfg.homeostasis.is_nan() || cfg.homeostasis < 0.0 {
        v.push(ConfigViolation::NegativeHomeostasis(cfg.homeostasis));
    }
    v
}
