//! Trait layers: phone-wise averaging, trait filter, statistics pooling and
//! the linear projection to a speaker embedding.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{PhoneAlignment, UtteranceFeatures};
use crate::encoder::{self, EncoderGrads, EncoderParams, EncoderTrace, FrameEmbeddingSequence};
use crate::error::{Error, Result};

/// Added to the variance before the square root in statistics pooling.
pub const POOLING_EPSILON: f64 = 1e-9;

/// One trait per phone of the inventory. Absent phones hold the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PhoneticTraitSet {
    pub utterance_id: String,
    /// I x D1.
    pub traits: Array2<f64>,
    pub present: Vec<bool>,
}

impl PhoneticTraitSet {
    pub fn n_phones(&self) -> usize {
        self.present.len()
    }

    pub fn dim(&self) -> usize {
        self.traits.ncols()
    }

    pub fn n_present(&self) -> usize {
        self.present.iter().filter(|p| **p).count()
    }

    /// Checks that a row is flagged present exactly when it is nonzero.
    pub fn validate(&self) -> Result<()> {
        if self.traits.nrows() != self.present.len() {
            return Err(Error::Dimension(format!(
                "trait set {} has {} rows and a mask of {}",
                self.utterance_id,
                self.traits.nrows(),
                self.present.len()
            )));
        }
        for (i, row) in self.traits.rows().into_iter().enumerate() {
            let nonzero = row.iter().any(|v| *v != 0.0);
            if nonzero != self.present[i] {
                return Err(Error::Numeric(format!(
                    "trait set {}: phone {i} present={} but row nonzero={nonzero}",
                    self.utterance_id, self.present[i]
                )));
            }
        }
        Ok(())
    }
}

/// Linear layer `embedding = weight · stats + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionParams {
    /// D2 x (2 * D1).
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl ProjectionParams {
    /// Uniform in `[-1/sqrt(2*D1), 1/sqrt(2*D1)]`, like the encoder layers.
    pub fn init(d1: usize, d2: usize, seed: u64) -> Result<Self> {
        if d1 == 0 || d2 == 0 {
            return Err(Error::Config(format!("projection needs D1, D2 >= 1, got {d1}, {d2}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / ((2 * d1) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((d2, 2 * d1), || rng.random_range(-bound..=bound));
        let bias = Array1::from_shape_simple_fn(d2, || rng.random_range(-bound..=bound));
        Ok(ProjectionParams { weight, bias })
    }

    /// Identity map, D2 = 2 * D1.
    pub fn identity(d1: usize) -> Self {
        ProjectionParams {
            weight: Array2::eye(2 * d1),
            bias: Array1::zeros(2 * d1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ProjectionParams {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.len()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding {
    pub utterance_id: String,
    pub vector: Array1<f64>,
}

fn phone_counts(align: &PhoneAlignment, n_phones: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; n_phones];
    for seg in &align.segments {
        if seg.phone >= n_phones {
            return Err(Error::Dimension(format!(
                "alignment for {} uses phone {} but the inventory has {n_phones}",
                align.utterance_id, seg.phone
            )));
        }
        counts[seg.phone] += seg.len();
    }
    Ok(counts)
}

/// Averages frame embeddings over every frame aligned to each phone.
///
/// Several segments of the same phone are merged, weighted by duration. A
/// phone is present when it occurs and its mean is not exactly zero.
pub fn extract_traits(
    frames: &FrameEmbeddingSequence,
    align: &PhoneAlignment,
    n_phones: usize,
) -> Result<PhoneticTraitSet> {
    let t_len = frames.embeddings.nrows();
    align.validate(n_phones, Some(t_len))?;
    let counts = phone_counts(align, n_phones)?;
    let mut traits = Array2::zeros((n_phones, frames.embeddings.ncols()));
    for seg in &align.segments {
        let mut row = traits.row_mut(seg.phone);
        for t in seg.start..seg.end {
            row += &frames.embeddings.row(t);
        }
    }
    let mut present = vec![false; n_phones];
    for (i, mut row) in traits.rows_mut().into_iter().enumerate() {
        if counts[i] > 0 {
            row /= counts[i] as f64;
            present[i] = row.iter().any(|v| *v != 0.0);
        }
    }
    Ok(PhoneticTraitSet {
        utterance_id: frames.utterance_id.clone(),
        traits,
        present,
    })
}

/// Spreads trait gradients back over the frames that were averaged.
pub fn extract_traits_backward(
    align: &PhoneAlignment,
    present: &[bool],
    d_traits: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    let n_phones = present.len();
    if d_traits.nrows() != n_phones {
        return Err(Error::Dimension(format!(
            "trait gradient has {} rows for {n_phones} phones",
            d_traits.nrows()
        )));
    }
    let counts = phone_counts(align, n_phones)?;
    let mut d_frames = Array2::zeros((align.num_frames(), d_traits.ncols()));
    for seg in &align.segments {
        if !present[seg.phone] {
            continue;
        }
        let share = &d_traits.row(seg.phone) / counts[seg.phone] as f64;
        for t in seg.start..seg.end {
            d_frames.row_mut(t).assign(&share);
        }
    }
    Ok(d_frames)
}

/// Keeps present rows in ascending phone order.
pub fn filter_traits(ts: &PhoneticTraitSet) -> Result<(Array2<f64>, Vec<usize>)> {
    let kept: Vec<usize> = (0..ts.n_phones()).filter(|&i| ts.present[i]).collect();
    if kept.is_empty() {
        return Err(Error::EmptyUtterance(ts.utterance_id.clone()));
    }
    Ok((ts.traits.select(Axis(0), &kept), kept))
}

/// Per-dimension mean followed by per-dimension population standard deviation.
pub fn pool_statistics(filtered: ArrayView2<f64>) -> Result<Array1<f64>> {
    let (n, d) = filtered.dim();
    if n == 0 {
        return Err(Error::EmptyUtterance("pooling input".into()));
    }
    let mean = filtered.mean_axis(Axis(0)).expect("n >= 1");
    let mut stats = Array1::zeros(2 * d);
    for j in 0..d {
        let var = filtered
            .column(j)
            .iter()
            .map(|v| (v - mean[j]).powi(2))
            .sum::<f64>()
            / n as f64;
        stats[j] = mean[j];
        stats[d + j] = (var + POOLING_EPSILON).sqrt();
    }
    Ok(stats)
}

pub fn pool_statistics_backward(
    filtered: ArrayView2<f64>,
    stats: ArrayView1<f64>,
    d_stats: ArrayView1<f64>,
) -> Array2<f64> {
    let (n, d) = filtered.dim();
    let nf = n as f64;
    let mut grad = Array2::zeros((n, d));
    for j in 0..d {
        let mean = stats[j];
        let std = stats[d + j];
        // d std / d x_r = (x_r - mean) / (n * std); the mean's own dependence
        // cancels because the deviations sum to zero.
        for r in 0..n {
            grad[[r, j]] = d_stats[j] / nf + d_stats[d + j] * (filtered[[r, j]] - mean) / (nf * std);
        }
    }
    grad
}

pub fn pool_and_project(filtered: ArrayView2<f64>, proj: &ProjectionParams) -> Result<Array1<f64>> {
    if filtered.ncols() * 2 != proj.input_dim() {
        return Err(Error::Dimension(format!(
            "projection expects {} pooled statistics, traits have dimension {}",
            proj.input_dim(),
            filtered.ncols()
        )));
    }
    let stats = pool_statistics(filtered)?;
    Ok(proj.weight.dot(&stats) + &proj.bias)
}

/// Everything a backward pass through one utterance needs.
#[derive(Debug, Clone)]
pub struct UtteranceTrace {
    pub encoder: EncoderTrace,
    pub traits: PhoneticTraitSet,
    pub kept: Vec<usize>,
    pub filtered: Array2<f64>,
    pub stats: Array1<f64>,
    pub embedding: SpeakerEmbedding,
}

pub fn forward_utterance_trace(
    enc: &EncoderParams,
    proj: &ProjectionParams,
    feats: &UtteranceFeatures,
    align: &PhoneAlignment,
    n_phones: usize,
) -> Result<UtteranceTrace> {
    if align.utterance_id != feats.utterance_id {
        return Err(Error::Dimension(format!(
            "alignment {} paired with features {}",
            align.utterance_id, feats.utterance_id
        )));
    }
    let trace = encoder::forward_trace(enc, feats.features.view())?;
    let frames = FrameEmbeddingSequence {
        utterance_id: feats.utterance_id.clone(),
        embeddings: trace.output.clone(),
    };
    let traits = extract_traits(&frames, align, n_phones)?;
    let (filtered, kept) = filter_traits(&traits)?;
    if filtered.ncols() * 2 != proj.input_dim() {
        return Err(Error::Dimension(format!(
            "projection expects {} pooled statistics, traits have dimension {}",
            proj.input_dim(),
            filtered.ncols()
        )));
    }
    let stats = pool_statistics(filtered.view())?;
    let vector = proj.weight.dot(&stats) + &proj.bias;
    Ok(UtteranceTrace {
        encoder: trace,
        traits,
        kept,
        filtered,
        stats,
        embedding: SpeakerEmbedding {
            utterance_id: feats.utterance_id.clone(),
            vector,
        },
    })
}

/// Encoder, trait extraction, filter, pooling and projection in sequence.
pub fn forward_utterance(
    enc: &EncoderParams,
    proj: &ProjectionParams,
    feats: &UtteranceFeatures,
    align: &PhoneAlignment,
    n_phones: usize,
) -> Result<(SpeakerEmbedding, PhoneticTraitSet)> {
    let t = forward_utterance_trace(enc, proj, feats, align, n_phones)?;
    Ok((t.embedding, t.traits))
}

/// Gradients through projection, pooling, filter and averaging.
///
/// `d_embedding` is the loss gradient w.r.t. the speaker embedding and
/// `d_traits` (I x D1, optional) the gradient w.r.t. the full trait set coming
/// from trait-level losses. Rows of absent phones are ignored. Returns the
/// projection gradients and the gradient w.r.t. the frame embeddings.
pub fn trait_layer_backward(
    trace: &UtteranceTrace,
    align: &PhoneAlignment,
    proj: &ProjectionParams,
    d_embedding: ArrayView1<f64>,
    d_traits: Option<ArrayView2<f64>>,
) -> Result<(ProjectionParams, Array2<f64>)> {
    if d_embedding.len() != proj.output_dim() {
        return Err(Error::Dimension(format!(
            "embedding gradient has length {}, projection outputs {}",
            d_embedding.len(),
            proj.output_dim()
        )));
    }
    let mut total = match d_traits {
        Some(g) => {
            if g.dim() != trace.traits.traits.dim() {
                return Err(Error::Dimension(format!(
                    "trait gradient {:?} does not match trait set {:?}",
                    g.dim(),
                    trace.traits.traits.dim()
                )));
            }
            g.to_owned()
        }
        None => Array2::zeros(trace.traits.traits.raw_dim()),
    };
    let d_weight = d_embedding
        .to_owned()
        .insert_axis(Axis(1))
        .dot(&trace.stats.view().insert_axis(Axis(0)));
    let d_stats = proj.weight.t().dot(&d_embedding);
    let d_filtered = pool_statistics_backward(trace.filtered.view(), trace.stats.view(), d_stats.view());
    for (r, &i) in trace.kept.iter().enumerate() {
        let mut row = total.row_mut(i);
        row += &d_filtered.row(r);
    }
    let d_frames = extract_traits_backward(align, &trace.traits.present, total.view())?;
    Ok((
        ProjectionParams {
            weight: d_weight,
            bias: d_embedding.to_owned(),
        },
        d_frames,
    ))
}

/// Full backward pass for one utterance down to the encoder parameters.
pub fn utterance_backward(
    enc: &EncoderParams,
    proj: &ProjectionParams,
    trace: &UtteranceTrace,
    align: &PhoneAlignment,
    d_embedding: ArrayView1<f64>,
    d_traits: Option<ArrayView2<f64>>,
) -> Result<(EncoderGrads, ProjectionParams)> {
    let (proj_grads, d_frames) = trait_layer_backward(trace, align, proj, d_embedding, d_traits)?;
    let (enc_grads, _) = encoder::backward_trace(enc, &trace.encoder, d_frames.view())?;
    Ok((enc_grads, proj_grads))
}
