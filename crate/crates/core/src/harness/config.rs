use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attacks::AttackKind;
use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::geometry::ReweightConfig;
use crate::nn::{DpConfig, EarlyStopping, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    Csv {
        path: PathBuf,
        /// Optional planted label noise applied after loading.
        #[serde(default)]
        label_noise_fraction: f64,
        #[serde(default)]
        noise_seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSource,
    pub n_members: usize,
    pub n_nonmembers: usize,
    pub split_seed: u64,
    pub train: TrainConfig,
    pub attacks: Vec<AttackKind>,
    pub fpr_levels: Vec<f64>,
    pub reweight: Option<ReweightConfig>,
    /// Epochs at which member/non-member scaled-logit histograms are taken;
    /// 0 is the untrained model.
    pub snapshot_epochs: Vec<usize>,
    pub histogram_bins: usize,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    /// Desk-scale overfitting setup: 20 classes of 200-bit records, 50
    /// members per class, 10% planted label noise, no defenses.
    fn default() -> Self {
        Self {
            name: "overfit".into(),
            dataset: DatasetSource::Synthetic(SyntheticSpec {
                num_classes: 20,
                feature_dim: 200,
                samples_per_class: 100,
                prototype_flip_rate: 0.3,
                label_noise_fraction: 0.1,
                seed: 7,
            }),
            n_members: 1000,
            n_nonmembers: 1000,
            split_seed: 7,
            train: TrainConfig {
                hidden_layers: vec![128],
                epochs: 200,
                learning_rate: 0.02,
                batch_size: 64,
                rng_seed: 7,
                ..TrainConfig::default()
            },
            attacks: AttackKind::ALL.to_vec(),
            fpr_levels: vec![0.01, 0.005],
            reweight: Some(ReweightConfig::default()),
            snapshot_epochs: vec![0, 1, 5, 10, 25, 50, 100, 200],
            histogram_bins: 40,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let DatasetSource::Synthetic(spec) = &self.dataset {
            spec.validate()?;
        }
        if self.attacks.is_empty() {
            return Err(Error::Config("at least one attack kind is required".into()));
        }
        if let Some(a) = self.fpr_levels.iter().find(|&&a| !(a > 0.0 && a < 1.0)) {
            return Err(Error::Config(format!("FPR level {a} outside (0, 1)")));
        }
        if let Some(e) = self.snapshot_epochs.iter().find(|&&e| e > self.train.epochs) {
            return Err(Error::Config(format!(
                "snapshot epoch {e} exceeds the {} training epochs",
                self.train.epochs
            )));
        }
        if self.histogram_bins == 0 {
            return Err(Error::Config("histogram_bins must be positive".into()));
        }
        if let Some(rw) = &self.reweight {
            rw.validate()?;
        }
        Ok(())
    }

    /// Applies one seed to data generation, the split and training.
    pub fn set_seed(&mut self, seed: u64) {
        self.split_seed = seed;
        self.train.rng_seed = seed;
        match &mut self.dataset {
            DatasetSource::Synthetic(spec) => spec.seed = seed,
            DatasetSource::Csv { noise_seed, .. } => *noise_seed = seed,
        }
    }

    pub fn primary_attack(&self) -> AttackKind {
        self.attacks.first().copied().unwrap_or(AttackKind::Loss)
    }
}

/// One training-time defense knob, as written on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Defense {
    L2(f64),
    Dropout(f64),
    LabelSmooth(f64),
    EarlyStop(usize),
    Dp { clip_norm: f64, noise_multiplier: f64 },
}

/// Validation share used when early stopping is requested from the CLI.
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.1;

impl Defense {
    pub fn apply(&self, cfg: &mut TrainConfig) {
        match *self {
            Defense::L2(l) => cfg.l2_lambda = l,
            Defense::Dropout(r) => cfg.dropout_rate = r,
            Defense::LabelSmooth(e) => cfg.label_smoothing = e,
            Defense::EarlyStop(patience) => {
                cfg.early_stopping = Some(EarlyStopping {
                    patience,
                    validation_fraction: DEFAULT_VALIDATION_FRACTION,
                })
            }
            Defense::Dp {
                clip_norm,
                noise_multiplier,
            } => {
                cfg.dp = Some(DpConfig {
                    clip_norm,
                    noise_multiplier,
                    delta: None,
                })
            }
        }
    }
}

impl fmt::Display for Defense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Defense::L2(l) => write!(f, "l2={l}"),
            Defense::Dropout(r) => write!(f, "dropout={r}"),
            Defense::LabelSmooth(e) => write!(f, "label-smooth={e}"),
            Defense::EarlyStop(p) => write!(f, "early-stop={p}"),
            Defense::Dp {
                clip_norm,
                noise_multiplier,
            } => write!(f, "dp={clip_norm},{noise_multiplier}"),
        }
    }
}

impl FromStr for Defense {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::Config(format!("defense `{s}`: {why}"));
        let (key, value) = s.split_once('=').ok_or_else(|| bad("expected <name>=<value>"))?;
        let num = |v: &str| v.trim().parse::<f64>().map_err(|_| bad("value is not a number"));
        match key.trim() {
            "l2" => Ok(Defense::L2(num(value)?)),
            "dropout" => Ok(Defense::Dropout(num(value)?)),
            "label-smooth" | "label_smooth" => Ok(Defense::LabelSmooth(num(value)?)),
            "early-stop" | "early_stop" => value
                .trim()
                .parse()
                .map(Defense::EarlyStop)
                .map_err(|_| bad("patience must be an integer")),
            "dp" => {
                let (c, sigma) = value.split_once(',').ok_or_else(|| bad("expected dp=<C>,<sigma>"))?;
                Ok(Defense::Dp {
                    clip_norm: num(c)?,
                    noise_multiplier: num(sigma)?,
                })
            }
            other => Err(bad(&format!("unknown defense `{other}`"))),
        }
    }
}

/// A named set of defenses applied on top of a base training config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseVariant {
    pub name: String,
    pub defenses: Vec<Defense>,
}

impl DefenseVariant {
    pub fn original() -> Self {
        Self {
            name: "original".into(),
            defenses: Vec::new(),
        }
    }

    /// Parses `+`-joined defenses, e.g. `l2=5e-4+dropout=0.25`.
    pub fn parse(spec: &str) -> Result<Self> {
        if spec.trim() == "original" {
            return Ok(Self::original());
        }
        let defenses = spec.split('+').map(str::parse).collect::<Result<Vec<Defense>>>()?;
        Ok(Self {
            name: spec.trim().to_string(),
            defenses,
        })
    }

    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        for d in &self.defenses {
            d.apply(&mut cfg);
        }
        cfg
    }
}

/// `floor=<f>` and/or `no-preserve-argmax`, comma separated; empty means
/// defaults.
pub fn parse_reweight(spec: &str) -> Result<ReweightConfig> {
    let mut cfg = ReweightConfig::default();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if part == "no-preserve-argmax" {
            cfg.preserve_argmax = false;
        } else if let Some(v) = part.strip_prefix("floor=") {
            cfg.weight_floor = v
                .parse()
                .map_err(|_| Error::Config(format!("reweight floor `{v}` is not a number")))?;
        } else {
            return Err(Error::Config(format!("unknown reweight option `{part}`")));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}
