//! Training objectives with analytic gradients.
//!
//! * trait verification loss: pulls together the same phone's traits from the
//!   enrollment and test utterance of one speaker and pushes apart the closest
//!   same-phone trait of any other speaker in the batch
//! * trait-center loss: pulls every present trait of an utterance towards the
//!   mean of that utterance's present traits
//! * AAM-softmax: speaker classification on the utterance embeddings
//!
//! The training objective is the plain sum of the three.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trait_layer::PhoneticTraitSet;
use crate::util::{dot, norm, sq_dist};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Matched-pair weight of the verification loss.
    pub alpha: f64,
    /// Unmatched-pair weight of the verification loss.
    pub beta: f64,
    /// Trait-center weight.
    pub gamma: f64,
}

impl LossWeights {
    pub const STANDARD: LossWeights = LossWeights {
        alpha: 7e-4,
        beta: 1e-5,
        gamma: 1e-4,
    };

    pub const ZERO: LossWeights = LossWeights {
        alpha: 0.0,
        beta: 0.0,
        gamma: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::STANDARD
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AamConfig {
    /// Additive angular margin in radians.
    pub margin: f64,
    pub scale: f64,
}

impl Default for AamConfig {
    fn default() -> Self {
        AamConfig {
            margin: 0.2,
            scale: 30.0,
        }
    }
}

impl AamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0 && self.margin < std::f64::consts::FRAC_PI_2) {
            return Err(Error::Config(format!(
                "AAM margin must lie in [0, pi/2), got {}",
                self.margin
            )));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::Config(format!("AAM scale must be positive, got {}", self.scale)));
        }
        Ok(())
    }
}

/// Gradients w.r.t. the full (pre-filter) trait sets of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TraitGrads {
    pub enroll: Vec<Array2<f64>>,
    pub test: Vec<Array2<f64>>,
}

impl TraitGrads {
    fn zeros(enroll: &[PhoneticTraitSet], test: &[PhoneticTraitSet]) -> Self {
        let z = |v: &[PhoneticTraitSet]| v.iter().map(|t| Array2::zeros(t.traits.raw_dim())).collect();
        TraitGrads {
            enroll: z(enroll),
            test: z(test),
        }
    }

    fn add_assign(&mut self, other: &TraitGrads) {
        for (a, b) in self.enroll.iter_mut().zip(&other.enroll) {
            *a += b;
        }
        for (a, b) in self.test.iter_mut().zip(&other.test) {
            *a += b;
        }
    }
}

fn check_pairs(enroll: &[PhoneticTraitSet], test: &[PhoneticTraitSet], min_k: usize) -> Result<()> {
    if enroll.len() != test.len() {
        return Err(Error::Batch(format!(
            "{} enrollment and {} test trait sets",
            enroll.len(),
            test.len()
        )));
    }
    if enroll.len() < min_k {
        return Err(Error::Batch(format!(
            "need at least {min_k} speakers, got {}",
            enroll.len()
        )));
    }
    let shape = enroll[0].traits.dim();
    for ts in enroll.iter().chain(test) {
        if ts.traits.dim() != shape || ts.present.len() != shape.0 {
            return Err(Error::Dimension(format!(
                "trait set {} has shape {:?}, batch uses {:?}",
                ts.utterance_id,
                ts.traits.dim(),
                shape
            )));
        }
    }
    Ok(())
}

/// Values of the verification loss and its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerificationTerms {
    pub value: f64,
    /// Mean squared distance over matched pairs (0 when there are none).
    pub matched: f64,
    /// Mean of the retained minimum unmatched distances (0 when there are none).
    pub unmatched: f64,
    pub n_matched: usize,
    pub n_unmatched: usize,
}

/// Trait verification loss over K speakers.
///
/// ```text
/// L = alpha/N1 * sum_{i,k: e_k^i, t_k^i present} |e_k^i - t_k^i|^2
///   - beta/N2  * sum_{i,k: e_k^i present} min_{h != k, t_h^i present} |e_k^i - t_h^i|^2
/// ```
///
/// An `(i, k)` with no present `t_h^i` for any `h != k` is skipped, and `N2`
/// counts the retained minima. An empty sum contributes 0.
pub fn trait_verification_loss(
    enroll: &[PhoneticTraitSet],
    test: &[PhoneticTraitSet],
    alpha: f64,
    beta: f64,
) -> Result<(VerificationTerms, TraitGrads)> {
    check_pairs(enroll, test, 2)?;
    let k_count = enroll.len();
    let n_phones = enroll[0].n_phones();

    let mut matched_pairs = Vec::new();
    let mut unmatched_pairs = Vec::new();
    for k in 0..k_count {
        for i in 0..n_phones {
            if !enroll[k].present[i] {
                continue;
            }
            let e = enroll[k].traits.row(i);
            if test[k].present[i] {
                matched_pairs.push((k, i, sq_dist(e, test[k].traits.row(i))));
            }
            let mut best: Option<(usize, f64)> = None;
            for (h, t) in test.iter().enumerate() {
                if h == k || !t.present[i] {
                    continue;
                }
                let d = sq_dist(e, t.traits.row(i));
                if best.is_none_or(|(_, b)| d < b) {
                    best = Some((h, d));
                }
            }
            if let Some((h, d)) = best {
                unmatched_pairs.push((k, h, i, d));
            }
        }
    }

    let mut grads = TraitGrads::zeros(enroll, test);
    let n1 = matched_pairs.len();
    let n2 = unmatched_pairs.len();
    let mut matched = 0.0;
    if n1 > 0 {
        let c = 2.0 * alpha / n1 as f64;
        for &(k, i, d) in &matched_pairs {
            matched += d;
            let diff = &enroll[k].traits.row(i) - &test[k].traits.row(i);
            grads.enroll[k].row_mut(i).scaled_add(c, &diff);
            grads.test[k].row_mut(i).scaled_add(-c, &diff);
        }
        matched /= n1 as f64;
    }
    let mut unmatched = 0.0;
    if n2 > 0 {
        let c = 2.0 * beta / n2 as f64;
        for &(k, h, i, d) in &unmatched_pairs {
            unmatched += d;
            let diff = &enroll[k].traits.row(i) - &test[h].traits.row(i);
            grads.enroll[k].row_mut(i).scaled_add(-c, &diff);
            grads.test[h].row_mut(i).scaled_add(c, &diff);
        }
        unmatched /= n2 as f64;
    }
    Ok((
        VerificationTerms {
            value: alpha * matched - beta * unmatched,
            matched,
            unmatched,
            n_matched: n1,
            n_unmatched: n2,
        },
        grads,
    ))
}

fn center_side(sets: &[PhoneticTraitSet], gamma: f64, grads: &mut [Array2<f64>]) -> Result<f64> {
    let total: usize = sets.iter().map(PhoneticTraitSet::n_present).sum();
    let mut sum = 0.0;
    let mut centers = Vec::with_capacity(sets.len());
    for ts in sets {
        let n = ts.n_present();
        if n == 0 {
            return Err(Error::EmptyUtterance(ts.utterance_id.clone()));
        }
        let mut center = Array1::zeros(ts.dim());
        for (i, row) in ts.traits.rows().into_iter().enumerate() {
            if ts.present[i] {
                center += &row;
            }
        }
        center /= n as f64;
        for (i, row) in ts.traits.rows().into_iter().enumerate() {
            if ts.present[i] {
                sum += sq_dist(row, center.view());
            }
        }
        centers.push(center);
    }
    // The center's own dependence on the traits drops out of the gradient:
    // the deviations from the mean sum to zero.
    let c = 2.0 * gamma / total as f64;
    for ((ts, center), g) in sets.iter().zip(&centers).zip(grads.iter_mut()) {
        for (i, row) in ts.traits.rows().into_iter().enumerate() {
            if ts.present[i] {
                g.row_mut(i).scaled_add(c, &(&row - center));
            }
        }
    }
    Ok(gamma * sum / total as f64)
}

/// Trait-center loss: mean squared distance of each present trait to its
/// utterance's trait center, computed separately for the enrollment and test
/// sides and summed.
pub fn trait_center_loss(
    enroll: &[PhoneticTraitSet],
    test: &[PhoneticTraitSet],
    gamma: f64,
) -> Result<(f64, TraitGrads)> {
    check_pairs(enroll, test, 1)?;
    let mut grads = TraitGrads::zeros(enroll, test);
    let e = center_side(enroll, gamma, &mut grads.enroll)?;
    let t = center_side(test, gamma, &mut grads.test)?;
    Ok((e + t, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AamOutput {
    pub value: f64,
    /// B x D2.
    pub d_embeddings: Array2<f64>,
    /// C x D2.
    pub d_weights: Array2<f64>,
}

fn cosine_parts(x: ArrayView1<f64>, w: ArrayView1<f64>, xn: f64, wn: f64) -> f64 {
    dot(x, w) / (xn * wn)
}

/// Additive angular margin softmax, averaged over the batch.
///
/// The true-class logit is `s * cos(theta_y + m)` and every other logit is
/// `s * cos(theta_c)`, where `theta_c` is the angle between the embedding and
/// class weight row `c`.
pub fn aam_softmax_loss(
    embeddings: ArrayView2<f64>,
    labels: &[usize],
    class_weights: ArrayView2<f64>,
    cfg: &AamConfig,
) -> Result<AamOutput> {
    cfg.validate()?;
    let (b, d) = embeddings.dim();
    let n_classes = class_weights.nrows();
    if labels.len() != b || b == 0 {
        return Err(Error::Batch(format!("{b} embeddings with {} labels", labels.len())));
    }
    if class_weights.ncols() != d {
        return Err(Error::Dimension(format!(
            "class weights have dimension {}, embeddings {d}",
            class_weights.ncols()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::Batch(format!("label {bad} outside {n_classes} classes")));
    }
    let wnorms: Vec<f64> = class_weights.rows().into_iter().map(norm).collect();
    if let Some(c) = wnorms.iter().position(|n| !(*n > 0.0 && n.is_finite())) {
        return Err(Error::Numeric(format!("class weight row {c} has zero or non-finite norm")));
    }
    let (cos_m, sin_m) = (cfg.margin.cos(), cfg.margin.sin());
    let s = cfg.scale;

    let mut value = 0.0;
    let mut d_emb = Array2::zeros((b, d));
    let mut d_w = Array2::zeros(class_weights.raw_dim());
    for (r, &y) in labels.iter().enumerate() {
        let x = embeddings.row(r);
        let xn = norm(x);
        if !(xn > 0.0 && xn.is_finite()) {
            return Err(Error::Numeric(format!("embedding {r} has zero or non-finite norm")));
        }
        let cos: Vec<f64> = (0..n_classes)
            .map(|c| cosine_parts(x, class_weights.row(c), xn, wnorms[c]))
            .collect();
        let cy = cos[y].clamp(-1.0, 1.0);
        let sin_y = (1.0 - cy * cy).max(0.0).sqrt();
        let mut logits: Vec<f64> = cos.iter().map(|c| s * c).collect();
        logits[y] = s * (cy * cos_m - sin_y * sin_m);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        value += denom.ln() + max - logits[y];

        for c in 0..n_classes {
            let mut dz = exps[c] / denom;
            if c == y {
                dz -= 1.0;
            }
            dz /= b as f64;
            let dcos = if c == y {
                dz * s * (cos_m + sin_m * cy / sin_y.max(1e-12))
            } else {
                dz * s
            };
            if dcos == 0.0 {
                continue;
            }
            let w = class_weights.row(c);
            let wn = wnorms[c];
            // d cos / d x = w / (|x||w|) - cos * x / |x|^2, symmetric for w
            let mut gx = d_emb.row_mut(r);
            gx.scaled_add(dcos / (xn * wn), &w);
            gx.scaled_add(-dcos * cos[c] / (xn * xn), &x);
            let mut gw = d_w.row_mut(c);
            gw.scaled_add(dcos / (xn * wn), &x);
            gw.scaled_add(-dcos * cos[c] / (wn * wn), &w);
        }
    }
    Ok(AamOutput {
        value: value / b as f64,
        d_embeddings: d_emb,
        d_weights: d_w,
    })
}

/// Forward outputs of one pair batch: K speakers, each with an enrollment and
/// a test utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub speaker_ids: Vec<String>,
    /// AAM class index of each speaker.
    pub labels: Vec<usize>,
    pub enroll_traits: Vec<PhoneticTraitSet>,
    pub test_traits: Vec<PhoneticTraitSet>,
    /// K x D2.
    pub enroll_embeddings: Array2<f64>,
    /// K x D2.
    pub test_embeddings: Array2<f64>,
}

impl PairBatch {
    pub fn k(&self) -> usize {
        self.labels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k < 2 {
            return Err(Error::Batch(format!("a batch needs at least 2 speakers, got {k}")));
        }
        if self.speaker_ids.len() != k
            || self.enroll_traits.len() != k
            || self.test_traits.len() != k
            || self.enroll_embeddings.nrows() != k
            || self.test_embeddings.nrows() != k
        {
            return Err(Error::Batch("batch components disagree on K".into()));
        }
        for (e, t) in self.enroll_traits.iter().zip(&self.test_traits) {
            if e.utterance_id == t.utterance_id {
                return Err(Error::Batch(format!(
                    "utterance {} used for both enrollment and test",
                    e.utterance_id
                )));
            }
        }
        Ok(())
    }
}

/// Which loss terms contribute to the objective and its gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossTerms {
    pub aam: bool,
    pub veri: bool,
    pub center: bool,
}

impl LossTerms {
    pub const ALL: LossTerms = LossTerms {
        aam: true,
        veri: true,
        center: true,
    };
    pub const AAM: LossTerms = LossTerms {
        aam: true,
        veri: false,
        center: false,
    };
    pub const VERI: LossTerms = LossTerms {
        aam: false,
        veri: true,
        center: false,
    };
    pub const CENTER: LossTerms = LossTerms {
        aam: false,
        veri: false,
        center: true,
    };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// Sum of the enabled terms.
    pub all: f64,
    pub aam: f64,
    pub veri: f64,
    pub center: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchGrads {
    pub traits: TraitGrads,
    pub enroll_embeddings: Array2<f64>,
    pub test_embeddings: Array2<f64>,
    pub class_weights: Array2<f64>,
}

/// The combined objective `L_AAM + L_veri + L_center` over a pair batch.
///
/// AAM-softmax runs over all 2K embeddings (enrollment first, then test).
/// Every component is reported; only those enabled in `terms` enter `all` and
/// the gradients.
pub fn total_loss(
    batch: &PairBatch,
    weights: &LossWeights,
    aam_cfg: &AamConfig,
    class_weights: ArrayView2<f64>,
    terms: LossTerms,
) -> Result<(LossBreakdown, BatchGrads)> {
    batch.validate()?;
    weights.validate()?;
    let k = batch.k();
    let d2 = batch.enroll_embeddings.ncols();

    let mut stacked = Array2::zeros((2 * k, d2));
    stacked.slice_mut(ndarray::s![..k, ..]).assign(&batch.enroll_embeddings);
    stacked.slice_mut(ndarray::s![k.., ..]).assign(&batch.test_embeddings);
    let labels: Vec<usize> = batch.labels.iter().chain(&batch.labels).copied().collect();
    let aam = aam_softmax_loss(stacked.view(), &labels, class_weights, aam_cfg)?;
    let (veri, veri_grads) =
        trait_verification_loss(&batch.enroll_traits, &batch.test_traits, weights.alpha, weights.beta)?;
    let (center, center_grads) = trait_center_loss(&batch.enroll_traits, &batch.test_traits, weights.gamma)?;

    let mut traits = TraitGrads::zeros(&batch.enroll_traits, &batch.test_traits);
    if terms.veri {
        traits.add_assign(&veri_grads);
    }
    if terms.center {
        traits.add_assign(&center_grads);
    }
    let (d_emb, d_w) = if terms.aam {
        (aam.d_embeddings, aam.d_weights)
    } else {
        (Array2::zeros((2 * k, d2)), Array2::zeros(class_weights.raw_dim()))
    };
    let all = [(terms.aam, aam.value), (terms.veri, veri.value), (terms.center, center)]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, v)| v)
        .sum();
    Ok((
        LossBreakdown {
            all,
            aam: aam.value,
            veri: veri.value,
            center,
        },
        BatchGrads {
            traits,
            enroll_embeddings: d_emb.slice(ndarray::s![..k, ..]).to_owned(),
            test_embeddings: d_emb.slice(ndarray::s![k.., ..]).to_owned(),
            class_weights: d_w,
        },
    ))
}
