//! Complete model state, pair-batch forward/backward and checkpoints.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, PhoneAlignment, UtteranceFeatures};
use crate::encoder::{self, EncoderConfig, EncoderGrads, EncoderLayer, EncoderParams};
use crate::error::{Error, Result};
use crate::losses::{total_loss, AamConfig, LossBreakdown, LossTerms, LossWeights, PairBatch};
use crate::trait_layer::{self, PhoneticTraitSet, ProjectionParams, SpeakerEmbedding, UtteranceTrace};
use crate::util::{read_to_string, stream_rng, write_atomic};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Size I of the phone inventory.
    pub n_phones: usize,
    /// Speaker embedding dimension D2.
    pub embedding_dim: usize,
    /// Number of training speakers (AAM classes).
    pub n_classes: usize,
}

impl ModelConfig {
    pub fn trait_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.n_phones < 2 {
            return Err(Error::Config(format!("n_phones must be >= 2, got {}", self.n_phones)));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be >= 1".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Config(format!("n_classes must be >= 2, got {}", self.n_classes)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub encoder: EncoderParams,
    pub projection: ProjectionParams,
    /// C x D2 AAM class weights.
    pub class_weights: Array2<f64>,
    pub step: u64,
}

/// Gradients laid out like [`ModelState`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub encoder: EncoderGrads,
    pub projection: ProjectionParams,
    pub class_weights: Array2<f64>,
}

fn named_groups<'a>(
    layers: &'a [EncoderLayer],
    proj: &'a ProjectionParams,
    cw: &'a Array2<f64>,
) -> Vec<(String, &'a [f64])> {
    let mut out = Vec::with_capacity(2 * layers.len() + 3);
    for (l, layer) in layers.iter().enumerate() {
        out.push((format!("encoder.{l}.weight"), layer.weight.as_slice().expect("standard layout")));
        out.push((format!("encoder.{l}.bias"), layer.bias.as_slice().expect("standard layout")));
    }
    out.push(("projection.weight".into(), proj.weight.as_slice().expect("standard layout")));
    out.push(("projection.bias".into(), proj.bias.as_slice().expect("standard layout")));
    out.push(("aam.class_weights".into(), cw.as_slice().expect("standard layout")));
    out
}

fn named_groups_mut<'a>(
    layers: &'a mut [EncoderLayer],
    proj: &'a mut ProjectionParams,
    cw: &'a mut Array2<f64>,
) -> Vec<(String, &'a mut [f64])> {
    let mut out = Vec::with_capacity(2 * layers.len() + 3);
    for (l, layer) in layers.iter_mut().enumerate() {
        out.push((format!("encoder.{l}.weight"), layer.weight.as_slice_mut().expect("standard layout")));
        out.push((format!("encoder.{l}.bias"), layer.bias.as_slice_mut().expect("standard layout")));
    }
    out.push(("projection.weight".into(), proj.weight.as_slice_mut().expect("standard layout")));
    out.push(("projection.bias".into(), proj.bias.as_slice_mut().expect("standard layout")));
    out.push(("aam.class_weights".into(), cw.as_slice_mut().expect("standard layout")));
    out
}

impl ModelState {
    /// Seeded initialization of every parameter group.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let encoder = encoder::init_params(&config.encoder, seed)?;
        let projection = ProjectionParams::init(config.trait_dim(), config.embedding_dim, seed.wrapping_add(1))?;
        let mut rng = stream_rng(seed, 3);
        let bound = 1.0 / (config.embedding_dim as f64).sqrt();
        let class_weights = Array2::from_shape_simple_fn((config.n_classes, config.embedding_dim), || {
            rng.random_range(-bound..=bound)
        });
        Ok(ModelState {
            config: config.clone(),
            encoder,
            projection,
            class_weights,
            step: 0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.encoder.config != self.config.encoder {
            return Err(Error::Config("encoder parameters do not match the model config".into()));
        }
        self.encoder.validate()?;
        let d1 = self.config.trait_dim();
        let d2 = self.config.embedding_dim;
        if self.projection.weight.dim() != (d2, 2 * d1) || self.projection.bias.len() != d2 {
            return Err(Error::Dimension(format!(
                "projection {:?} does not match D1={d1}, D2={d2}",
                self.projection.weight.dim()
            )));
        }
        if self.class_weights.dim() != (self.config.n_classes, d2) {
            return Err(Error::Dimension(format!(
                "class weights {:?} do not match {} classes x D2={d2}",
                self.class_weights.dim(),
                self.config.n_classes
            )));
        }
        Ok(())
    }

    pub fn param_groups(&self) -> Vec<(String, &[f64])> {
        named_groups(&self.encoder.layers, &self.projection, &self.class_weights)
    }

    pub fn param_groups_mut(&mut self) -> Vec<(String, &mut [f64])> {
        named_groups_mut(&mut self.encoder.layers, &mut self.projection, &mut self.class_weights)
    }

    pub fn is_finite(&self) -> bool {
        self.param_groups().iter().all(|(_, v)| v.iter().all(|x| x.is_finite()))
    }

    pub fn zero_grads(&self) -> ModelGrads {
        ModelGrads {
            encoder: EncoderGrads::zeros_like(&self.encoder),
            projection: self.projection.zeros_like(),
            class_weights: Array2::zeros(self.class_weights.raw_dim()),
        }
    }

    pub fn forward_trace(&self, feats: &UtteranceFeatures, align: &PhoneAlignment) -> Result<UtteranceTrace> {
        trait_layer::forward_utterance_trace(&self.encoder, &self.projection, feats, align, self.config.n_phones)
    }

    pub fn forward_utterance(
        &self,
        feats: &UtteranceFeatures,
        align: &PhoneAlignment,
    ) -> Result<(SpeakerEmbedding, PhoneticTraitSet)> {
        trait_layer::forward_utterance(&self.encoder, &self.projection, feats, align, self.config.n_phones)
    }
}

impl ModelGrads {
    pub fn groups(&self) -> Vec<(String, &[f64])> {
        named_groups(&self.encoder.layers, &self.projection, &self.class_weights)
    }

    pub fn groups_mut(&mut self) -> Vec<(String, &mut [f64])> {
        named_groups_mut(&mut self.encoder.layers, &mut self.projection, &mut self.class_weights)
    }

    fn add_assign(&mut self, enc: &EncoderGrads, proj: &ProjectionParams) {
        self.encoder.add_assign(enc);
        self.projection.weight += &proj.weight;
        self.projection.bias += &proj.bias;
    }
}

/// Utterances chosen for one training step: speaker `k` contributes
/// `enroll[k]` and `test[k]` (positions in the corpus) under AAM class `labels[k]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSelection {
    pub speaker_ids: Vec<String>,
    pub labels: Vec<usize>,
    pub enroll: Vec<usize>,
    pub test: Vec<usize>,
}

impl PairSelection {
    pub fn k(&self) -> usize {
        self.labels.len()
    }

    fn positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.enroll.iter().chain(&self.test).copied()
    }
}

fn forward_selection(model: &ModelState, corpus: &Corpus, sel: &PairSelection) -> Result<(Vec<UtteranceTrace>, PairBatch)> {
    let k = sel.k();
    if sel.enroll.len() != k || sel.test.len() != k || sel.speaker_ids.len() != k {
        return Err(Error::Batch("pair selection components disagree on K".into()));
    }
    if let Some(bad) = sel.positions().find(|&j| j >= corpus.len()) {
        return Err(Error::Batch(format!("utterance position {bad} outside corpus of {}", corpus.len())));
    }
    let positions: Vec<usize> = sel.positions().collect();
    let traces = positions
        .par_iter()
        .map(|&j| model.forward_trace(&corpus.utterances[j], &corpus.alignments[j]))
        .collect::<Result<Vec<_>>>()?;
    let d2 = model.config.embedding_dim;
    let mut enroll_embeddings = Array2::zeros((k, d2));
    let mut test_embeddings = Array2::zeros((k, d2));
    for r in 0..k {
        enroll_embeddings.row_mut(r).assign(&traces[r].embedding.vector);
        test_embeddings.row_mut(r).assign(&traces[k + r].embedding.vector);
    }
    let batch = PairBatch {
        speaker_ids: sel.speaker_ids.clone(),
        labels: sel.labels.clone(),
        enroll_traits: traces[..k].iter().map(|t| t.traits.clone()).collect(),
        test_traits: traces[k..].iter().map(|t| t.traits.clone()).collect(),
        enroll_embeddings,
        test_embeddings,
    };
    Ok((traces, batch))
}

/// Runs the model on a selection and returns the forward batch.
pub fn build_batch(model: &ModelState, corpus: &Corpus, sel: &PairSelection) -> Result<PairBatch> {
    forward_selection(model, corpus, sel).map(|(_, b)| b)
}

/// Objective value without gradients.
pub fn batch_loss(
    model: &ModelState,
    corpus: &Corpus,
    sel: &PairSelection,
    weights: &LossWeights,
    aam: &AamConfig,
    terms: LossTerms,
) -> Result<LossBreakdown> {
    let batch = build_batch(model, corpus, sel)?;
    total_loss(&batch, weights, aam, model.class_weights.view(), terms).map(|(l, _)| l)
}

/// Objective value and exact gradients w.r.t. every parameter group.
///
/// Per-utterance passes run in parallel; their gradients are summed in a fixed
/// order so results do not depend on scheduling.
pub fn batch_gradients(
    model: &ModelState,
    corpus: &Corpus,
    sel: &PairSelection,
    weights: &LossWeights,
    aam: &AamConfig,
    terms: LossTerms,
) -> Result<(LossBreakdown, ModelGrads)> {
    let (traces, batch) = forward_selection(model, corpus, sel)?;
    let (loss, bg) = total_loss(&batch, weights, aam, model.class_weights.view(), terms)?;
    let k = sel.k();
    let positions: Vec<usize> = sel.positions().collect();
    let parts = (0..2 * k)
        .into_par_iter()
        .map(|slot| {
            let (d_emb, d_traits) = if slot < k {
                (bg.enroll_embeddings.row(slot), &bg.traits.enroll[slot])
            } else {
                (bg.test_embeddings.row(slot - k), &bg.traits.test[slot - k])
            };
            trait_layer::utterance_backward(
                &model.encoder,
                &model.projection,
                &traces[slot],
                &corpus.alignments[positions[slot]],
                d_emb,
                Some(d_traits.view()),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grads = model.zero_grads();
    for (enc, proj) in &parts {
        grads.add_assign(enc, proj);
    }
    grads.class_weights = bg.class_weights;
    Ok((loss, grads))
}

// ------------------------------------------------------------- checkpoints

const CHECKPOINT_FORMAT: &str = "phonetrait-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StoredGroup {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct StoredCheckpoint {
    format: String,
    version: u32,
    config: ModelConfig,
    step: u64,
    groups: Vec<StoredGroup>,
}

fn group_shapes(model: &ModelState) -> Vec<Vec<usize>> {
    let mut shapes = Vec::new();
    for layer in &model.encoder.layers {
        shapes.push(layer.weight.shape().to_vec());
        shapes.push(layer.bias.shape().to_vec());
    }
    shapes.push(model.projection.weight.shape().to_vec());
    shapes.push(model.projection.bias.shape().to_vec());
    shapes.push(model.class_weights.shape().to_vec());
    shapes
}

/// JSON text with the model config echoed alongside every parameter group.
pub fn checkpoint_to_string(model: &ModelState) -> String {
    let shapes = group_shapes(model);
    let groups = model
        .param_groups()
        .into_iter()
        .zip(shapes)
        .map(|((name, values), shape)| StoredGroup {
            name,
            shape,
            values: values.to_vec(),
        })
        .collect();
    let stored = StoredCheckpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        step: model.step,
        groups,
    };
    let mut text = serde_json::to_string_pretty(&stored).expect("checkpoint serializes");
    text.push('\n');
    text
}

/// Parses a checkpoint. When `expected` is given the stored config must match it.
pub fn checkpoint_from_str(text: &str, name: &str, expected: Option<&ModelConfig>) -> Result<ModelState> {
    let stored: StoredCheckpoint = serde_json::from_str(text)
        .map_err(|e| Error::parse(name, e.line(), format!("invalid checkpoint: {e}")))?;
    if stored.format != CHECKPOINT_FORMAT || stored.version != CHECKPOINT_VERSION {
        return Err(Error::parse(
            name,
            1,
            format!("unsupported checkpoint {} v{}", stored.format, stored.version),
        ));
    }
    if let Some(want) = expected {
        if *want != stored.config {
            return Err(Error::Config(format!(
                "{name}: checkpoint config does not match the requested model config"
            )));
        }
    }
    let mut model = ModelState::init(&stored.config, 0)?;
    model.step = stored.step;
    let shapes = group_shapes(&model);
    let mut targets = model.param_groups_mut();
    if targets.len() != stored.groups.len() {
        return Err(Error::parse(
            name,
            0,
            format!("expected {} parameter groups, found {}", targets.len(), stored.groups.len()),
        ));
    }
    for (((tname, dst), shape), group) in targets.iter_mut().zip(&shapes).zip(&stored.groups) {
        if *tname != group.name || *shape != group.shape || dst.len() != group.values.len() {
            return Err(Error::parse(
                name,
                0,
                format!("parameter group {} {:?} does not match expected {tname} {shape:?}", group.name, group.shape),
            ));
        }
        dst.copy_from_slice(&group.values);
    }
    drop(targets);
    if !model.is_finite() {
        return Err(Error::Numeric(format!("{name}: checkpoint holds non-finite parameters")));
    }
    Ok(model)
}

pub fn save_checkpoint(path: &Path, model: &ModelState) -> Result<()> {
    write_atomic(path, checkpoint_to_string(model).as_bytes())
}

pub fn load_checkpoint(path: &Path, expected: Option<&ModelConfig>) -> Result<ModelState> {
    checkpoint_from_str(&read_to_string(path)?, &path.display().to_string(), expected)
}

/// Embedding vector and trait set of one utterance.
pub fn embed(model: &ModelState, feats: &UtteranceFeatures, align: &PhoneAlignment) -> Result<(Array1<f64>, PhoneticTraitSet)> {
    let (e, t) = model.forward_utterance(feats, align)?;
    Ok((e.vector, t))
}
