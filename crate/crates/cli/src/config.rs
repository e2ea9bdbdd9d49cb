//! Flat `key = value` run configuration with typed accessors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use compemb::diarization::{ApConfig, BenchmarkConfig, ChangeDetector, DiarizeConfig, Strategy};
use compemb::nets::{Dims, Variant};
use compemb::synth::{SpeakerSplit, StreamParams};
use compemb::training::{AdamConfig, Mining, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("{path}:{line}: expected `key = value`, got `{text}`")]
    Syntax { path: String, line: usize, text: String },
    #[error("config key `{key}`: cannot parse `{value}` ({reason})")]
    BadValue { key: String, value: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read config file {path}: {source}")]
    Read { path: String, source: std::io::Error },
}

type Result<T> = std::result::Result<T, ConfigError>;

/// Every recognised key with its default value.
const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("out", "runs/default"),
    ("data.feature_dim", "64"),
    ("data.noise", "0.3"),
    ("data.train_speakers", "1000"),
    ("data.val_speakers", "100"),
    ("data.test_speakers", "200"),
    ("model.hidden", "128"),
    ("model.embed", "32"),
    ("train.variant", "cmpem"),
    ("train.lr", "0.0003"),
    ("train.margin", "0.1"),
    ("train.beta1", "0.9"),
    ("train.beta2", "0.999"),
    ("train.adam_eps", "1e-8"),
    ("train.episodes_train", "20000"),
    ("train.episodes_val", "500"),
    ("train.episodes_test", "2000"),
    ("train.val_every", "1000"),
    ("train.n_speakers", "5"),
    ("train.max_card", "3"),
    ("train.examples_per_set", "1"),
    ("train.mining", "all_active"),
    ("eval.cmpem", ""),
    ("eval.cmpeml2", ""),
    ("eval.singleem", ""),
    ("diar.streams", "10"),
    ("diar.speakers", "4"),
    ("diar.duration_s", "1800"),
    ("diar.overlap_fraction", "0.19"),
    ("diar.frame_s", "0.1"),
    ("diar.three_way", "false"),
    ("diar.long_turn_s", "3.3"),
    ("diar.segment_s", "1.0"),
    ("diar.ap_damping", "0.9"),
    ("diar.ap_max_iter", "200"),
    ("diar.ap_convergence_iter", "15"),
    ("diar.ap_preference", "median"),
    ("diar.overlap_false_alarm", "0"),
    ("diar.overlap_miss", "0"),
    ("diar.scd_jitter_frames", "0"),
    ("diar.scd_miss_rate", "0"),
    (
        "diar.strategies",
        "single_em_turn,single_em_seg_overlap,cmpem_seg,cmpem_seg_overlap",
    ),
    ("gradcheck.trials", "3"),
    ("gradcheck.corrupt_op", "none"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(ConfigError::UnknownKey(key.to_string())),
        }
    }

    /// Applies `key=value` as given on the command line.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair.split_once('=').ok_or_else(|| ConfigError::Syntax {
            path: "--set".into(),
            line: 0,
            text: pair.to_string(),
        })?;
        self.set(k.trim(), v.trim())
    }

    pub fn merge_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                path: origin.to_string(),
                line: i + 1,
                text: raw.to_string(),
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        self.merge_text(&text, &path.display().to_string())
    }

    /// Every key in sorted order, one `key = value` per line.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("known key")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key);
        v.parse().map_err(|e: T::Err| ConfigError::BadValue {
            key: key.to_string(),
            value: v.to_string(),
            reason: e.to_string(),
        })
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.raw(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed")
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("out"))
    }

    pub fn model_path(&self, variant: Variant) -> Option<PathBuf> {
        self.path(&format!("eval.{}", variant.tag()))
    }

    pub fn dims(&self) -> Result<Dims> {
        Ok(Dims {
            input: self.get("data.feature_dim")?,
            hidden: self.get("model.hidden")?,
            embed: self.get("model.embed")?,
        })
    }

    pub fn split(&self) -> Result<SpeakerSplit> {
        Ok(SpeakerSplit {
            train: self.get("data.train_speakers")?,
            val: self.get("data.val_speakers")?,
            test: self.get("data.test_speakers")?,
        })
    }

    pub fn noise(&self) -> Result<f64> {
        let n: f64 = self.get("data.noise")?;
        if !(n >= 0.0 && n.is_finite()) {
            return Err(ConfigError::Invalid(format!("data.noise must be >= 0, got {n}")));
        }
        Ok(n)
    }

    /// Variants named by `train.variant`; `all` expands to every variant.
    pub fn train_variants(&self) -> Result<Vec<Variant>> {
        match self.raw("train.variant") {
            "all" => Ok(vec![Variant::CmpEm, Variant::CmpEmL2, Variant::SingleEm]),
            _ => Ok(vec![self.get("train.variant")?]),
        }
    }

    pub fn train_config(&self, variant: Variant) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            adam: AdamConfig {
                lr: self.get("train.lr")?,
                beta1: self.get("train.beta1")?,
                beta2: self.get("train.beta2")?,
                eps: self.get("train.adam_eps")?,
            },
            margin: self.get("train.margin")?,
            episodes_train: self.get("train.episodes_train")?,
            episodes_val: self.get("train.episodes_val")?,
            episodes_test: self.get("train.episodes_test")?,
            val_every: self.get("train.val_every")?,
            seed: self.seed()?,
            variant,
            n_speakers: self.get("train.n_speakers")?,
            max_card: self.get("train.max_card")?,
            examples_per_set: self.get("train.examples_per_set")?,
            mining: self.get::<Mining>("train.mining")?,
        };
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn strategies(&self) -> Result<Vec<Strategy>> {
        self.raw("diar.strategies")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|e: compemb::Error| ConfigError::BadValue {
                    key: "diar.strategies".into(),
                    value: s.to_string(),
                    reason: e.to_string(),
                })
            })
            .collect()
    }

    pub fn benchmark_config(&self) -> Result<BenchmarkConfig> {
        let preference = match self.raw("diar.ap_preference") {
            "median" => None,
            _ => Some(self.get::<f64>("diar.ap_preference")?),
        };
        let stream = StreamParams {
            duration_s: self.get("diar.duration_s")?,
            overlap_fraction: self.get("diar.overlap_fraction")?,
            frame_duration: self.get("diar.frame_s")?,
            three_way: self.get("diar.three_way")?,
            ..StreamParams::default()
        };
        let cfg = BenchmarkConfig {
            streams: self.get("diar.streams")?,
            n_speakers: self.get("diar.speakers")?,
            stream,
            detector: ChangeDetector {
                jitter_frames: self.get("diar.scd_jitter_frames")?,
                miss_rate: self.get("diar.scd_miss_rate")?,
            },
            overlap_false_alarm: self.get("diar.overlap_false_alarm")?,
            overlap_miss: self.get("diar.overlap_miss")?,
            diarize: DiarizeConfig {
                long_turn_s: self.get("diar.long_turn_s")?,
                segment_s: self.get("diar.segment_s")?,
                ap: ApConfig {
                    damping: self.get("diar.ap_damping")?,
                    max_iter: self.get("diar.ap_max_iter")?,
                    convergence_iter: self.get("diar.ap_convergence_iter")?,
                    preference,
                },
            },
            seed: self.seed()?,
        };
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("diar.overlap_false_alarm", cfg.overlap_false_alarm)?;
        unit("diar.overlap_miss", cfg.overlap_miss)?;
        unit("diar.scd_miss_rate", cfg.detector.miss_rate)?;
        if cfg.streams == 0 {
            return Err(ConfigError::Invalid("diar.streams must be at least 1".into()));
        }
        Ok(cfg)
    }

    pub fn gradcheck_trials(&self) -> Result<usize> {
        self.get("gradcheck.trials")
    }

    pub fn corrupt_op(&self) -> Result<Option<compemb::autodiff::OpKind>> {
        match self.raw("gradcheck.corrupt_op") {
            "none" | "" => Ok(None),
            name => compemb::autodiff::OpKind::from_name(name)
                .map(Some)
                .ok_or_else(|| ConfigError::BadValue {
                    key: "gradcheck.corrupt_op".into(),
                    value: name.to_string(),
                    reason: "not an op name".into(),
                }),
        }
    }
}
