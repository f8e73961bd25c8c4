//! Pair-batch sampling, the SGD training loop and a finite-difference
//! gradient checker.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Corpus;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::losses::{AamConfig, LossBreakdown, LossTerms, LossWeights};
use crate::model::{batch_gradients, batch_loss, ModelConfig, ModelGrads, ModelState, PairSelection};
use crate::util::stream_rng;

/// Encoder layout and embedding size; the rest of the model config comes from
/// the corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    /// Layer string, see [`EncoderConfig::from_layer_string`].
    pub encoder_layers: String,
    pub embedding_dim: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            encoder_layers: "-1,0,1:32:relu;0:16:identity".into(),
            embedding_dim: 16,
        }
    }
}

impl Architecture {
    pub fn model_config(&self, corpus: &Corpus) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            encoder: EncoderConfig::from_layer_string(corpus.feature_dim(), &self.encoder_layers)?,
            n_phones: corpus.inventory.len(),
            embedding_dim: self.embedding_dim,
            n_classes: corpus.speakers().len(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Speakers per minibatch.
    pub k: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub aam: AamConfig,
    /// Defaults to one pass over the utterances: `ceil(n_utts / (2K))`.
    pub steps_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 8,
            epochs: 50,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
            weights: LossWeights::STANDARD,
            aam: AamConfig::default(),
            steps_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!("K must be >= 2, got {}", self.k)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::Config("steps_per_epoch must be >= 1".into()));
        }
        self.weights.validate()?;
        self.aam.validate()
    }

    pub fn steps_per_epoch(&self, corpus: &Corpus) -> usize {
        self.steps_per_epoch
            .unwrap_or_else(|| corpus.len().div_ceil(2 * self.k).max(1))
    }
}

/// Picks K distinct speakers and two distinct utterances of each.
///
/// Labels are speaker positions in `corpus.speakers()`. Only speakers with at
/// least two utterances are eligible.
pub fn sample_pair_batch(corpus: &Corpus, k: usize, rng: &mut ChaCha8Rng) -> Result<PairSelection> {
    let speakers = corpus.speakers();
    let eligible: Vec<usize> = (0..speakers.len()).filter(|&s| speakers[s].1.len() >= 2).collect();
    if k < 2 || eligible.len() < k {
        return Err(Error::InsufficientData(format!(
            "need {k} speakers with at least 2 utterances, corpus has {}",
            eligible.len()
        )));
    }
    let mut sel = PairSelection {
        speaker_ids: Vec::with_capacity(k),
        labels: Vec::with_capacity(k),
        enroll: Vec::with_capacity(k),
        test: Vec::with_capacity(k),
    };
    for pick in sample(rng, eligible.len(), k).into_iter() {
        let s = eligible[pick];
        let utts = &speakers[s].1;
        let pair = sample(rng, utts.len(), 2);
        sel.speaker_ids.push(speakers[s].0.clone());
        sel.labels.push(s);
        sel.enroll.push(utts[pair.index(0)]);
        sel.test.push(utts[pair.index(1)]);
    }
    Ok(sel)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    /// 1-based optimizer step.
    pub step: u64,
    /// 1-based epoch.
    pub epoch: usize,
    pub loss: LossBreakdown,
}

/// Loss log: a header and one `step,L_all,L_AAM,L_veri,L_center` line per step.
pub fn format_loss_log(history: &[LossRecord]) -> String {
    let mut out = String::from("step,l_all,l_aam,l_veri,l_center\n");
    for r in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.step, r.loss.all, r.loss.aam, r.loss.veri, r.loss.center
        );
    }
    out
}

/// Mean total loss of each epoch, in epoch order.
pub fn epoch_means(history: &[LossRecord]) -> Vec<f64> {
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for r in history {
        if sums.len() < r.epoch {
            sums.resize(r.epoch, (0.0, 0));
        }
        sums[r.epoch - 1].0 += r.loss.all;
        sums[r.epoch - 1].1 += 1;
    }
    sums.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
}

const SAMPLER_STREAM: u64 = 11;

/// Trains with SGD and momentum (`v = mu * v + g; p -= lr * v`).
///
/// `on_epoch` runs after every epoch with the 1-based epoch number and the
/// current state, e.g. to write checkpoints.
pub fn train_with<F>(
    corpus: &Corpus,
    arch: &Architecture,
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<(ModelState, Vec<LossRecord>)>
where
    F: FnMut(usize, &ModelState) -> Result<()>,
{
    config.validate()?;
    let model_cfg = arch.model_config(corpus)?;
    let mut model = ModelState::init(&model_cfg, config.seed)?;
    let mut velocity = model.zero_grads();
    let mut rng = stream_rng(config.seed, SAMPLER_STREAM);
    let steps = config.steps_per_epoch(corpus);
    let mut history = Vec::with_capacity(config.epochs * steps);

    for epoch in 1..=config.epochs {
        for _ in 0..steps {
            let sel = sample_pair_batch(corpus, config.k, &mut rng)?;
            let (loss, grads) = batch_gradients(&model, corpus, &sel, &config.weights, &config.aam, LossTerms::ALL)
                .map_err(|e| match e {
                    Error::Numeric(msg) => Error::Diverged { step: model.step + 1, msg },
                    other => other,
                })?;
            if !loss.all.is_finite() {
                return Err(Error::Diverged {
                    step: model.step + 1,
                    msg: format!(
                        "non-finite loss (aam={}, veri={}, center={})",
                        loss.aam, loss.veri, loss.center
                    ),
                });
            }
            apply_update(&mut model, &mut velocity, &grads, config.learning_rate, config.momentum);
            model.step += 1;
            if !model.is_finite() {
                return Err(Error::Diverged {
                    step: model.step,
                    msg: "parameters became non-finite".into(),
                });
            }
            history.push(LossRecord {
                step: model.step,
                epoch,
                loss,
            });
        }
        on_epoch(epoch, &model)?;
    }
    Ok((model, history))
}

pub fn train(corpus: &Corpus, arch: &Architecture, config: &TrainConfig) -> Result<(ModelState, Vec<LossRecord>)> {
    train_with(corpus, arch, config, |_, _| Ok(()))
}

fn apply_update(model: &mut ModelState, velocity: &mut ModelGrads, grads: &ModelGrads, lr: f64, momentum: f64) {
    let params = model.param_groups_mut();
    let vel = velocity.groups_mut();
    let g = grads.groups();
    for (((_, p), (_, v)), (_, g)) in params.into_iter().zip(vel).zip(g) {
        for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g.iter()) {
            *v = momentum * *v + g;
            *p -= lr * *v;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub name: String,
    pub n_params: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Index of the entry with the largest relative error.
    pub worst_index: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub step_size: f64,
    pub tolerance: f64,
    pub groups: Vec<GroupCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "step_size={}\ntolerance={}\npassed={}\ngroup,n_params,max_rel_error,max_abs_error,status\n",
            self.step_size,
            self.tolerance,
            self.passed()
        );
        for g in &self.groups {
            let _ = writeln!(
                out,
                "{},{},{:e},{:e},{}",
                g.name,
                g.n_params,
                g.max_rel_error,
                g.max_abs_error,
                if g.passed { "pass" } else { "FAIL" }
            );
        }
        out
    }
}

/// Relative error with a floor on the denominator so entries whose true
/// gradient is zero compare on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares analytic gradients of the selected loss terms against central
/// finite differences for every parameter of every group.
#[allow(clippy::too_many_arguments)]
pub fn grad_check(
    model: &ModelState,
    corpus: &Corpus,
    sel: &PairSelection,
    weights: &LossWeights,
    aam: &AamConfig,
    terms: LossTerms,
    step_size: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    grad_check_with(model, corpus, sel, weights, aam, terms, step_size, tolerance, |_| {})
}

/// [`grad_check`] with a hook that may alter the analytic gradients before
/// comparison (fault injection).
#[allow(clippy::too_many_arguments)]
pub fn grad_check_with<F: FnOnce(&mut ModelGrads)>(
    model: &ModelState,
    corpus: &Corpus,
    sel: &PairSelection,
    weights: &LossWeights,
    aam: &AamConfig,
    terms: LossTerms,
    step_size: f64,
    tolerance: f64,
    corrupt: F,
) -> Result<GradCheckReport> {
    if !(step_size > 0.0 && step_size.is_finite()) {
        return Err(Error::Config(format!("step size must be positive, got {step_size}")));
    }
    let (_, mut grads) = batch_gradients(model, corpus, sel, weights, aam, terms)?;
    corrupt(&mut grads);
    let eval = |m: &ModelState| batch_loss(m, corpus, sel, weights, aam, terms).map(|l| l.all);

    let analytic: Vec<(String, Vec<f64>)> = grads.groups().into_iter().map(|(n, v)| (n, v.to_vec())).collect();
    let mut probe = model.clone();
    let mut groups = Vec::with_capacity(analytic.len());
    for (g, (name, analytic)) in analytic.iter().enumerate() {
        let mut worst = (0.0f64, 0usize);
        let mut max_abs: f64 = 0.0;
        for (idx, &a) in analytic.iter().enumerate() {
            let original = probe.param_groups()[g].1[idx];
            probe.param_groups_mut()[g].1[idx] = original + step_size;
            let plus = eval(&probe)?;
            probe.param_groups_mut()[g].1[idx] = original - step_size;
            let minus = eval(&probe)?;
            probe.param_groups_mut()[g].1[idx] = original;
            let numeric = (plus - minus) / (2.0 * step_size);
            let rel = relative_error(a, numeric);
            max_abs = max_abs.max((a - numeric).abs());
            if rel > worst.0 || rel.is_nan() {
                worst = (rel, idx);
            }
        }
        groups.push(GroupCheck {
            name: name.clone(),
            n_params: analytic.len(),
            max_rel_error: worst.0,
            max_abs_error: max_abs,
            worst_index: worst.1,
            passed: worst.0 <= tolerance,
        });
    }
    Ok(GradCheckReport {
        step_size,
        tolerance,
        groups,
    })
}

/// Draws a random selection for gradient checking from a dedicated stream.
pub fn random_selection(corpus: &Corpus, k: usize, seed: u64) -> Result<PairSelection> {
    let mut rng = stream_rng(seed, SAMPLER_STREAM + 1);
    // burn one draw so the selection differs from the first training batch
    let _: u64 = rng.random();
    sample_pair_batch(corpus, k, &mut rng)
}
