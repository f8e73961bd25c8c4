//! `key=value` run configuration shared by every pipeline stage.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys and
//! repeated keys are errors. [`RunConfig::to_key_value`] writes every key, so an
//! echoed config reproduces the run exactly.

use std::path::Path;

use crate::analysis::{DcfParams, F_RATIO_SAMPLES};
use crate::corpus::{CorpusConfig, PhoneInventory};
use crate::error::{Error, Result};
use crate::training::{Architecture, TrainConfig};
use crate::util::read_to_string;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Seeds corpus generation, initialization, batch sampling, trials and F-ratio draws.
    pub seed: u64,
    /// Training speakers; `corpus.seed` is ignored in favour of `seed`.
    pub corpus: CorpusConfig,
    /// Held-out speakers generated alongside the training speakers.
    pub eval_speakers: usize,
    /// Relative frequency overrides by phone label; unlisted phones weigh 1.
    pub phone_weights: Vec<(String, f64)>,
    pub arch: Architecture,
    pub train: TrainConfig,
    pub n_target_trials: usize,
    pub n_nontarget_trials: usize,
    pub dcf: DcfParams,
    pub fratio_samples: usize,
    /// Size of each pool of the F-ratio trial list, drawn with replacement.
    pub fratio_trials: usize,
    pub gradcheck_step: f64,
    pub gradcheck_tolerance: f64,
    pub gradcheck_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            corpus: CorpusConfig::default(),
            eval_speakers: 20,
            phone_weights: vec![("ZH".to_string(), 0.02)],
            arch: Architecture::default(),
            train: TrainConfig::default(),
            n_target_trials: 250,
            n_nontarget_trials: 250,
            dcf: DcfParams::default(),
            fratio_samples: F_RATIO_SAMPLES,
            fratio_trials: 6000,
            gradcheck_step: 1e-5,
            gradcheck_tolerance: 1e-4,
            gradcheck_k: 3,
        }
    }
}

/// Every accepted key, in output order.
pub const KEYS: &[&str] = &[
    "seed",
    "corpus.n_speakers",
    "corpus.utts_per_speaker",
    "corpus.eval_speakers",
    "corpus.feature_dim",
    "corpus.segment_min",
    "corpus.segment_max",
    "corpus.phones_min",
    "corpus.phones_max",
    "corpus.noise_std",
    "corpus.phone_scale",
    "corpus.speaker_scale",
    "corpus.trait_scale",
    "corpus.phone_weights",
    "model.encoder_layers",
    "model.embedding_dim",
    "train.k",
    "train.epochs",
    "train.learning_rate",
    "train.momentum",
    "train.steps_per_epoch",
    "train.alpha",
    "train.beta",
    "train.gamma",
    "train.aam_margin",
    "train.aam_scale",
    "trials.n_target",
    "trials.n_nontarget",
    "eval.p_target",
    "eval.c_miss",
    "eval.c_fa",
    "fratio.samples",
    "fratio.trials",
    "gradcheck.step",
    "gradcheck.tolerance",
    "gradcheck.k",
];

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

/// `uniform`, or comma-separated `LABEL:weight` overrides such as `ZH:0.02`.
fn parse_phone_weights(v: &str) -> Result<Vec<(String, f64)>> {
    if v == "uniform" || v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|item| {
            let (label, w) = item
                .trim()
                .rsplit_once(':')
                .ok_or_else(|| Error::Config(format!("phone weight {item:?} is not LABEL:weight")))?;
            let w: f64 = num("corpus.phone_weights", w)?;
            Ok((label.to_string(), w))
        })
        .collect()
}

fn format_phone_weights(w: &[(String, f64)]) -> String {
    if w.is_empty() {
        return "uniform".into();
    }
    w.iter().map(|(l, x)| format!("{l}:{x}")).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = num(key, v)?,
            "corpus.n_speakers" => self.corpus.n_speakers = num(key, v)?,
            "corpus.utts_per_speaker" => self.corpus.utts_per_speaker = num(key, v)?,
            "corpus.eval_speakers" => self.eval_speakers = num(key, v)?,
            "corpus.feature_dim" => self.corpus.feature_dim = num(key, v)?,
            "corpus.segment_min" => self.corpus.segment_length.0 = num(key, v)?,
            "corpus.segment_max" => self.corpus.segment_length.1 = num(key, v)?,
            "corpus.phones_min" => self.corpus.phones_per_utt.0 = num(key, v)?,
            "corpus.phones_max" => self.corpus.phones_per_utt.1 = num(key, v)?,
            "corpus.noise_std" => self.corpus.noise_std = num(key, v)?,
            "corpus.phone_scale" => self.corpus.phone_scale = num(key, v)?,
            "corpus.speaker_scale" => self.corpus.speaker_scale = num(key, v)?,
            "corpus.trait_scale" => self.corpus.trait_scale = num(key, v)?,
            "corpus.phone_weights" => self.phone_weights = parse_phone_weights(v)?,
            "model.encoder_layers" => self.arch.encoder_layers = v.to_string(),
            "model.embedding_dim" => self.arch.embedding_dim = num(key, v)?,
            "train.k" => self.train.k = num(key, v)?,
            "train.epochs" => self.train.epochs = num(key, v)?,
            "train.learning_rate" => self.train.learning_rate = num(key, v)?,
            "train.momentum" => self.train.momentum = num(key, v)?,
            "train.steps_per_epoch" => {
                self.train.steps_per_epoch = if v == "auto" { None } else { Some(num(key, v)?) }
            }
            "train.alpha" => self.train.weights.alpha = num(key, v)?,
            "train.beta" => self.train.weights.beta = num(key, v)?,
            "train.gamma" => self.train.weights.gamma = num(key, v)?,
            "train.aam_margin" => self.train.aam.margin = num(key, v)?,
            "train.aam_scale" => self.train.aam.scale = num(key, v)?,
            "trials.n_target" => self.n_target_trials = num(key, v)?,
            "trials.n_nontarget" => self.n_nontarget_trials = num(key, v)?,
            "eval.p_target" => self.dcf.p_target = num(key, v)?,
            "eval.c_miss" => self.dcf.c_miss = num(key, v)?,
            "eval.c_fa" => self.dcf.c_fa = num(key, v)?,
            "fratio.samples" => self.fratio_samples = num(key, v)?,
            "fratio.trials" => self.fratio_trials = num(key, v)?,
            "gradcheck.step" => self.gradcheck_step = num(key, v)?,
            "gradcheck.tolerance" => self.gradcheck_tolerance = num(key, v)?,
            "gradcheck.k" => self.gradcheck_k = num(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let c = &self.corpus;
        let t = &self.train;
        Some(match key {
            "seed" => self.seed.to_string(),
            "corpus.n_speakers" => c.n_speakers.to_string(),
            "corpus.utts_per_speaker" => c.utts_per_speaker.to_string(),
            "corpus.eval_speakers" => self.eval_speakers.to_string(),
            "corpus.feature_dim" => c.feature_dim.to_string(),
            "corpus.segment_min" => c.segment_length.0.to_string(),
            "corpus.segment_max" => c.segment_length.1.to_string(),
            "corpus.phones_min" => c.phones_per_utt.0.to_string(),
            "corpus.phones_max" => c.phones_per_utt.1.to_string(),
            "corpus.noise_std" => c.noise_std.to_string(),
            "corpus.phone_scale" => c.phone_scale.to_string(),
            "corpus.speaker_scale" => c.speaker_scale.to_string(),
            "corpus.trait_scale" => c.trait_scale.to_string(),
            "corpus.phone_weights" => format_phone_weights(&self.phone_weights),
            "model.encoder_layers" => self.arch.encoder_layers.clone(),
            "model.embedding_dim" => self.arch.embedding_dim.to_string(),
            "train.k" => t.k.to_string(),
            "train.epochs" => t.epochs.to_string(),
            "train.learning_rate" => t.learning_rate.to_string(),
            "train.momentum" => t.momentum.to_string(),
            "train.steps_per_epoch" => t.steps_per_epoch.map_or("auto".into(), |s| s.to_string()),
            "train.alpha" => t.weights.alpha.to_string(),
            "train.beta" => t.weights.beta.to_string(),
            "train.gamma" => t.weights.gamma.to_string(),
            "train.aam_margin" => t.aam.margin.to_string(),
            "train.aam_scale" => t.aam.scale.to_string(),
            "trials.n_target" => self.n_target_trials.to_string(),
            "trials.n_nontarget" => self.n_nontarget_trials.to_string(),
            "eval.p_target" => self.dcf.p_target.to_string(),
            "eval.c_miss" => self.dcf.c_miss.to_string(),
            "eval.c_fa" => self.dcf.c_fa.to_string(),
            "fratio.samples" => self.fratio_samples.to_string(),
            "fratio.trials" => self.fratio_trials.to_string(),
            "gradcheck.step" => self.gradcheck_step.to_string(),
            "gradcheck.tolerance" => self.gradcheck_tolerance.to_string(),
            "gradcheck.k" => self.gradcheck_k.to_string(),
            _ => return None,
        })
    }

    /// Applies `key=value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str, name: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(name, i + 1, format!("expected key=value, got {line:?}")))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::parse(name, i + 1, format!("duplicate key {k:?}")));
            }
            self.set(k, v).map_err(|e| match e {
                Error::Config(msg) => Error::parse(name, i + 1, msg),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str, name: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text, name)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&read_to_string(path)?, &path.display().to_string())
    }

    pub fn to_key_value(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k}={}\n", self.get(k).expect("every listed key is readable")))
            .collect()
    }

    /// Corpus config for training plus held-out speakers, seeded by `seed`.
    pub fn full_corpus_config(&self, inventory: &PhoneInventory) -> Result<CorpusConfig> {
        let phone_weights = if self.phone_weights.is_empty() {
            None
        } else {
            let mut w = vec![1.0; inventory.len()];
            for (label, x) in &self.phone_weights {
                let i = inventory
                    .index_of(label)
                    .ok_or_else(|| Error::Config(format!("corpus.phone_weights: unknown phone {label:?}")))?;
                w[i] = *x;
            }
            Some(w)
        };
        Ok(CorpusConfig {
            n_speakers: self.corpus.n_speakers + self.eval_speakers,
            seed: self.seed,
            phone_weights,
            ..self.corpus.clone()
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn validate(&self, inventory: &PhoneInventory) -> Result<()> {
        self.full_corpus_config(inventory)?.validate(inventory.len())?;
        if self.corpus.n_speakers < 2 {
            return Err(Error::Config("corpus.n_speakers must be >= 2".into()));
        }
        if self.eval_speakers == 1 {
            return Err(Error::Config("corpus.eval_speakers must be 0 or >= 2".into()));
        }
        self.train_config().validate()?;
        self.dcf.validate()?;
        if self.arch.embedding_dim == 0 {
            return Err(Error::Config("model.embedding_dim must be >= 1".into()));
        }
        crate::encoder::EncoderConfig::from_layer_string(self.corpus.feature_dim, &self.arch.encoder_layers)?;
        if self.fratio_samples == 0 {
            return Err(Error::Config("fratio.samples must be >= 1".into()));
        }
        if !(self.gradcheck_step > 0.0 && self.gradcheck_tolerance > 0.0) {
            return Err(Error::Config("gradcheck step and tolerance must be positive".into()));
        }
        if self.gradcheck_k < 2 {
            return Err(Error::Config("gradcheck.k must be >= 2".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("train.alpha", "0.5").unwrap();
        cfg.set("train.steps_per_epoch", "7").unwrap();
        cfg.set("corpus.noise_std", "0.125").unwrap();
        cfg.set("corpus.phone_weights", "ZH:0.02,[N-V]:0.5").unwrap();
        let back = RunConfig::from_text(&cfg.to_key_value(), "echo").unwrap();
        assert_eq!(back, cfg);
        assert_eq!(RunConfig::from_text(&RunConfig::default().to_key_value(), "d").unwrap(), RunConfig::default());
    }

    #[test]
    fn defaults_are_echoed() {
        let text = RunConfig::default().to_key_value();
        for line in ["train.alpha=0.0007", "train.beta=0.00001", "train.gamma=0.0001", "train.k=8"] {
            assert!(text.contains(&format!("{line}\n")), "{line}");
        }
    }

    #[test]
    fn unknown_and_duplicate_keys_fail() {
        let err = RunConfig::from_text("seed=1\nbogus=2\n", "c.txt").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(RunConfig::from_text("seed=1\nseed=2\n", "c.txt").is_err());
        assert!(RunConfig::from_text("seed\n", "c.txt").is_err());
        assert!(RunConfig::from_text("train.k=two\n", "c.txt").is_err());
    }

    #[test]
    fn comments_and_blank_lines() {
        let cfg = RunConfig::from_text("# run\n\n  train.epochs = 3 \n", "c").unwrap();
        assert_eq!(cfg.train.epochs, 3);
    }

    #[test]
    fn keys_table_is_complete() {
        let cfg = RunConfig::default();
        for k in KEYS {
            let v = cfg.get(k).unwrap();
            let mut c = cfg.clone();
            c.set(k, &v).unwrap();
            assert_eq!(c, cfg, "{k}");
        }
    }

    #[test]
    fn phone_weight_overrides() {
        let inv = PhoneInventory::cmu();
        let mut c = RunConfig::default();
        c.set("corpus.phone_weights", "uniform").unwrap();
        assert_eq!(c.full_corpus_config(&inv).unwrap().phone_weights, None);
        c.set("corpus.phone_weights", "ZH:0.02").unwrap();
        let w = c.full_corpus_config(&inv).unwrap().phone_weights.unwrap();
        assert_eq!(w[inv.index_of("ZH").unwrap()], 0.02);
        assert_eq!(w.iter().filter(|x| **x == 1.0).count(), 39);
        c.set("corpus.phone_weights", "QQ:1").unwrap();
        assert!(c.full_corpus_config(&inv).is_err());
        assert!(c.set("corpus.phone_weights", "ZH").is_err());
    }

    #[test]
    fn validation() {
        assert!(RunConfig::default().validate(&PhoneInventory::cmu()).is_ok());
        let mut c = RunConfig::default();
        c.train.k = 1;
        assert!(c.validate(&PhoneInventory::cmu()).is_err());
        let mut c = RunConfig::default();
        c.arch.encoder_layers = "0:x:relu".into();
        assert!(c.validate(&PhoneInventory::cmu()).is_err());
    }
}
