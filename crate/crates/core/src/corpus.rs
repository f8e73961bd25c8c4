//! Synthetic speaker corpus with frame-level phone alignments, and trial lists.
//!
//! Every speaker owns one characteristic vector per phone (its *signature*).
//! An utterance is a sequence of random phone segments; each frame in a segment
//! is the speaker's signature for that phone plus i.i.d. Gaussian noise.
//!
//! Signatures are built from three parts so that both the phone and the speaker
//! leave a mark on every frame:
//!
//! ```text
//! signature[s][p] = phone_scale * phone_base[p]
//!                 + speaker_scale * speaker_base[s]
//!                 + trait_scale * speaker_phone[s][p]
//! ```
//!
//! All randomness comes from ChaCha streams split off a single seed, so every
//! speaker and every utterance can be generated independently and the whole
//! corpus is a pure function of its configuration.

use std::collections::{HashMap, HashSet};

use ndarray::{Array1, Array2};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Normal, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::util::stream_rng;

/// The 39 CMU dictionary phones, in the dictionary's alphabetical order.
pub const CMU_PHONES: [&str; 39] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY", "F", "G", "HH",
    "IH", "IY", "JH", "K", "L", "M", "N", "NG", "OW", "OY", "P", "R", "S", "SH", "T", "TH", "UH",
    "UW", "V", "W", "Y", "Z", "ZH",
];

/// Label for frames that carry no phone (silence, laughter, breath).
pub const NON_VERBAL_LABEL: &str = "[N-V]";

/// Ordered set of phone labels. The position of a label is its phone index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhoneInventory {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl PhoneInventory {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::Config(format!(
                "phone inventory needs at least 2 labels, got {}",
                labels.len()
            )));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, label) in labels.iter().enumerate() {
            if label.is_empty() || label.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("invalid phone label {label:?}")));
            }
            if index.insert(label.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate phone label {label}")));
            }
        }
        Ok(PhoneInventory { labels, index })
    }

    /// CMU phone set plus the non-verbal label at the last index (40 entries).
    pub fn cmu() -> Self {
        let labels = CMU_PHONES
            .iter()
            .copied()
            .chain(std::iter::once(NON_VERBAL_LABEL))
            .map(String::from)
            .collect();
        Self::new(labels).expect("built-in inventory is valid")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    /// Copy of this inventory with extra labels appended after the existing ones.
    pub fn extended<S: AsRef<str>>(&self, extra: &[S]) -> Result<Self> {
        let mut labels = self.labels.clone();
        labels.extend(extra.iter().map(|s| s.as_ref().to_string()));
        Self::new(labels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceFeatures {
    pub utterance_id: String,
    pub speaker_id: String,
    /// T x F matrix, one row per frame.
    pub features: Array2<f64>,
}

impl UtteranceFeatures {
    pub fn num_frames(&self) -> usize {
        self.features.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let (t, f) = self.features.dim();
        if t == 0 || f == 0 {
            return Err(Error::Dimension(format!(
                "utterance {} has shape {t}x{f}; both dimensions must be positive",
                self.utterance_id
            )));
        }
        if !self.features.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!(
                "utterance {} has non-finite features",
                self.utterance_id
            )));
        }
        Ok(())
    }
}

/// Half-open frame range `[start, end)` labelled with one phone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub phone: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhoneAlignment {
    pub utterance_id: String,
    pub segments: Vec<Segment>,
}

impl PhoneAlignment {
    /// Number of frames covered (end of the last segment).
    pub fn num_frames(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end)
    }

    /// Checks that segments are non-empty, contiguous from frame 0 and use valid
    /// phone indices. When `num_frames` is given the coverage must end there.
    pub fn validate(&self, n_phones: usize, num_frames: Option<usize>) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::Config(format!(
                "alignment for {} has no segments",
                self.utterance_id
            )));
        }
        let mut expected = 0;
        for seg in &self.segments {
            if seg.start != expected {
                return Err(Error::Config(format!(
                    "alignment for {}: segment starts at frame {} but previous coverage ends at {}",
                    self.utterance_id, seg.start, expected
                )));
            }
            if seg.is_empty() {
                return Err(Error::Config(format!(
                    "alignment for {}: empty segment at frame {}",
                    self.utterance_id, seg.start
                )));
            }
            if seg.phone >= n_phones {
                return Err(Error::Config(format!(
                    "alignment for {}: phone index {} outside inventory of {}",
                    self.utterance_id, seg.phone, n_phones
                )));
            }
            expected = seg.end;
        }
        if let Some(t) = num_frames {
            if expected != t {
                return Err(Error::Dimension(format!(
                    "alignment for {} covers {} frames but the utterance has {}",
                    self.utterance_id, expected, t
                )));
            }
        }
        Ok(())
    }

    /// Phone index of every frame.
    pub fn frame_phones(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.num_frames());
        for seg in &self.segments {
            out.extend(std::iter::repeat_n(seg.phone, seg.len()));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpeakerProfile {
    pub speaker_id: String,
    /// I x F matrix, one characteristic vector per phone.
    pub signatures: Array2<f64>,
    pub noise_std: f64,
}

/// Parameters of [`generate_corpus`].
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    pub feature_dim: usize,
    /// Inclusive range of segment lengths in frames.
    pub segment_length: (usize, usize),
    /// Inclusive range of segments per utterance.
    pub phones_per_utt: (usize, usize),
    pub noise_std: f64,
    pub seed: u64,
    pub phone_scale: f64,
    pub speaker_scale: f64,
    pub trait_scale: f64,
    /// Relative phone frequencies; uniform when `None`.
    pub phone_weights: Option<Vec<f64>>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_speakers: 20,
            utts_per_speaker: 10,
            feature_dim: 12,
            segment_length: (3, 8),
            phones_per_utt: (24, 36),
            noise_std: 0.45,
            seed: 0,
            phone_scale: 1.0,
            speaker_scale: 1.0,
            trait_scale: 0.25,
            phone_weights: None,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self, n_phones: usize) -> Result<()> {
        let positive = [
            ("n_speakers", self.n_speakers),
            ("utts_per_speaker", self.utts_per_speaker),
            ("feature_dim", self.feature_dim),
            ("segment_length min", self.segment_length.0),
            ("phones_per_utt min", self.phones_per_utt.0),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.segment_length.0 > self.segment_length.1 {
            return Err(Error::Config(format!(
                "segment_length range {:?} is empty",
                self.segment_length
            )));
        }
        if self.phones_per_utt.0 > self.phones_per_utt.1 {
            return Err(Error::Config(format!(
                "phones_per_utt range {:?} is empty",
                self.phones_per_utt
            )));
        }
        let scales = [
            ("noise_std", self.noise_std),
            ("phone_scale", self.phone_scale),
            ("speaker_scale", self.speaker_scale),
            ("trait_scale", self.trait_scale),
        ];
        for (name, v) in scales {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if let Some(w) = &self.phone_weights {
            if w.len() != n_phones {
                return Err(Error::Config(format!(
                    "phone_weights has {} entries for an inventory of {n_phones}",
                    w.len()
                )));
            }
            if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Config(
                    "phone_weights must be finite, non-negative and not all zero".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Utterances, their alignments and (for synthetic data) speaker profiles.
///
/// `alignments[j]` always belongs to `utterances[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub inventory: PhoneInventory,
    pub utterances: Vec<UtteranceFeatures>,
    pub alignments: Vec<PhoneAlignment>,
    pub profiles: Vec<SyntheticSpeakerProfile>,
    index: HashMap<String, usize>,
}

impl Corpus {
    /// Pairs every utterance with its alignment (matched by id) and validates both.
    pub fn new(
        inventory: PhoneInventory,
        utterances: Vec<UtteranceFeatures>,
        alignments: Vec<PhoneAlignment>,
        profiles: Vec<SyntheticSpeakerProfile>,
    ) -> Result<Self> {
        let mut by_id: HashMap<String, PhoneAlignment> = HashMap::with_capacity(alignments.len());
        for a in alignments {
            let id = a.utterance_id.clone();
            if by_id.insert(id.clone(), a).is_some() {
                return Err(Error::Config(format!("duplicate alignment for {id}")));
            }
        }
        let mut index = HashMap::with_capacity(utterances.len());
        let mut ordered = Vec::with_capacity(utterances.len());
        let feature_dim = utterances.first().map(|u| u.features.ncols());
        for (j, utt) in utterances.iter().enumerate() {
            utt.validate()?;
            if Some(utt.features.ncols()) != feature_dim {
                return Err(Error::Dimension(format!(
                    "utterance {} has feature dimension {} but the corpus uses {}",
                    utt.utterance_id,
                    utt.features.ncols(),
                    feature_dim.unwrap_or(0)
                )));
            }
            if index.insert(utt.utterance_id.clone(), j).is_some() {
                return Err(Error::Config(format!(
                    "duplicate utterance id {}",
                    utt.utterance_id
                )));
            }
            let align = by_id
                .remove(&utt.utterance_id)
                .ok_or_else(|| Error::Config(format!("no alignment for {}", utt.utterance_id)))?;
            align.validate(inventory.len(), Some(utt.num_frames()))?;
            ordered.push(align);
        }
        if let Some(extra) = by_id.keys().min() {
            return Err(Error::MissingUtterance(format!(
                "{extra} (alignment without features)"
            )));
        }
        Ok(Corpus {
            inventory,
            utterances,
            alignments: ordered,
            profiles,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn position(&self, utterance_id: &str) -> Option<usize> {
        self.index.get(utterance_id).copied()
    }

    pub fn get(&self, utterance_id: &str) -> Option<(&UtteranceFeatures, &PhoneAlignment)> {
        self.position(utterance_id)
            .map(|j| (&self.utterances[j], &self.alignments[j]))
    }

    pub fn feature_dim(&self) -> usize {
        self.utterances.first().map_or(0, |u| u.features.ncols())
    }

    /// Speakers in order of first appearance, each with its utterance positions.
    pub fn speakers(&self) -> Vec<(String, Vec<usize>)> {
        let mut order: Vec<(String, Vec<usize>)> = Vec::new();
        let mut slot: HashMap<&str, usize> = HashMap::new();
        for (j, u) in self.utterances.iter().enumerate() {
            let k = *slot.entry(u.speaker_id.as_str()).or_insert_with(|| {
                order.push((u.speaker_id.clone(), Vec::new()));
                order.len() - 1
            });
            order[k].1.push(j);
        }
        order
    }

    /// Splits by speaker: the first `n_first` speakers (in order of appearance)
    /// and everyone else.
    pub fn split_speakers(&self, n_first: usize) -> Result<(Corpus, Corpus)> {
        let first: HashSet<String> = self
            .speakers()
            .into_iter()
            .take(n_first)
            .map(|(s, _)| s)
            .collect();
        let part = |keep: bool| {
            let mut utts = Vec::new();
            let mut aligns = Vec::new();
            for (u, a) in self.utterances.iter().zip(&self.alignments) {
                if first.contains(&u.speaker_id) == keep {
                    utts.push(u.clone());
                    aligns.push(a.clone());
                }
            }
            let profiles = self
                .profiles
                .iter()
                .filter(|p| first.contains(&p.speaker_id) == keep)
                .cloned()
                .collect();
            Corpus::new(self.inventory.clone(), utts, aligns, profiles)
        };
        Ok((part(true)?, part(false)?))
    }
}

pub fn speaker_id(s: usize) -> String {
    format!("spk{s:03}")
}

pub fn utterance_id(s: usize, u: usize) -> String {
    format!("spk{s:03}-utt{u:03}")
}

const WORLD_STREAM: u64 = 0;
const SPEAKER_STREAM_BASE: u64 = 1 << 20;
const UTTERANCE_STREAM_BASE: u64 = 1 << 40;

fn standard_normal_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal))
}

/// Generates a deterministic synthetic corpus.
///
/// Returns one feature matrix and one alignment per utterance, ordered by
/// speaker then utterance, and one profile per speaker.
pub fn generate_corpus(inventory: &PhoneInventory, cfg: &CorpusConfig) -> Result<Corpus> {
    cfg.validate(inventory.len())?;
    let n_phones = inventory.len();
    let f = cfg.feature_dim;

    let mut world = stream_rng(cfg.seed, WORLD_STREAM);
    let phone_base = standard_normal_matrix(&mut world, n_phones, f);

    let profiles: Vec<SyntheticSpeakerProfile> = (0..cfg.n_speakers)
        .map(|s| {
            let mut rng = stream_rng(cfg.seed, SPEAKER_STREAM_BASE + s as u64);
            let speaker_base: Array1<f64> =
                Array1::from_shape_simple_fn(f, || rng.sample::<f64, _>(StandardNormal));
            let speaker_phone = standard_normal_matrix(&mut rng, n_phones, f);
            let mut signatures = &phone_base * cfg.phone_scale + &speaker_phone * cfg.trait_scale;
            for mut row in signatures.rows_mut() {
                row.scaled_add(cfg.speaker_scale, &speaker_base);
            }
            SyntheticSpeakerProfile {
                speaker_id: speaker_id(s),
                signatures,
                noise_std: cfg.noise_std,
            }
        })
        .collect();

    let weights = match &cfg.phone_weights {
        Some(w) => Some(
            WeightedIndex::new(w.iter().copied())
                .map_err(|e| Error::Config(format!("phone_weights: {e}")))?,
        ),
        None => None,
    };
    let noise = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(format!("noise_std: {e}")))?;

    let jobs: Vec<(usize, usize)> = (0..cfg.n_speakers)
        .flat_map(|s| (0..cfg.utts_per_speaker).map(move |u| (s, u)))
        .collect();
    let generated: Vec<(UtteranceFeatures, PhoneAlignment)> = jobs
        .par_iter()
        .map(|&(s, u)| {
            let stream = UTTERANCE_STREAM_BASE + (s * cfg.utts_per_speaker + u) as u64;
            let mut rng = stream_rng(cfg.seed, stream);
            let n_segments = rng.random_range(cfg.phones_per_utt.0..=cfg.phones_per_utt.1);
            let mut segments = Vec::with_capacity(n_segments);
            let mut t = 0;
            for _ in 0..n_segments {
                let phone = match &weights {
                    Some(w) => w.sample(&mut rng),
                    None => rng.random_range(0..n_phones),
                };
                let len = rng.random_range(cfg.segment_length.0..=cfg.segment_length.1);
                segments.push(Segment {
                    start: t,
                    end: t + len,
                    phone,
                });
                t += len;
            }
            let signatures = &profiles[s].signatures;
            let mut features = Array2::zeros((t, f));
            for seg in &segments {
                for frame in seg.start..seg.end {
                    let mut row = features.row_mut(frame);
                    row.assign(&signatures.row(seg.phone));
                    if cfg.noise_std > 0.0 {
                        row.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
                    }
                }
            }
            let id = utterance_id(s, u);
            (
                UtteranceFeatures {
                    utterance_id: id.clone(),
                    speaker_id: speaker_id(s),
                    features,
                },
                PhoneAlignment {
                    utterance_id: id,
                    segments,
                },
            )
        })
        .collect();

    let (utterances, alignments) = generated.into_iter().unzip();
    Corpus::new(inventory.clone(), utterances, alignments, profiles)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub enroll: String,
    pub test: String,
    pub target: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrialList {
    pub trials: Vec<Trial>,
}

impl TrialList {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn n_target(&self) -> usize {
        self.trials.iter().filter(|t| t.target).count()
    }

    /// Checks that every referenced utterance exists and that labels agree with
    /// the corpus speaker ids.
    pub fn validate_against(&self, corpus: &Corpus) -> Result<()> {
        for t in &self.trials {
            let (e, _) = corpus
                .get(&t.enroll)
                .ok_or_else(|| Error::MissingUtterance(t.enroll.clone()))?;
            let (x, _) = corpus
                .get(&t.test)
                .ok_or_else(|| Error::MissingUtterance(t.test.clone()))?;
            if t.enroll == t.test {
                return Err(Error::Config(format!(
                    "trial pairs utterance {} with itself",
                    t.enroll
                )));
            }
            if (e.speaker_id == x.speaker_id) != t.target {
                return Err(Error::Config(format!(
                    "trial {} / {} is labelled {} but the speakers say otherwise",
                    t.enroll,
                    t.test,
                    if t.target { "target" } else { "nontarget" }
                )));
            }
        }
        Ok(())
    }
}

const TRIAL_STREAM: u64 = 7;

/// Samples `n_target` same-speaker and `n_nontarget` cross-speaker trials.
///
/// Pairs are drawn with replacement across trials, so the same pair may appear
/// more than once in large lists. Output order is shuffled.
pub fn make_trials(corpus: &Corpus, n_target: usize, n_nontarget: usize, seed: u64) -> Result<TrialList> {
    let speakers = corpus.speakers();
    let eligible: Vec<&(String, Vec<usize>)> =
        speakers.iter().filter(|(_, u)| u.len() >= 2).collect();
    if n_target > 0 && eligible.is_empty() {
        return Err(Error::Config(
            "target trials need a speaker with at least 2 utterances".into(),
        ));
    }
    if n_nontarget > 0 && speakers.len() < 2 {
        return Err(Error::Config(format!(
            "non-target trials need at least 2 speakers, corpus has {}",
            speakers.len()
        )));
    }
    let mut rng = stream_rng(seed, TRIAL_STREAM);
    let id = |j: usize| corpus.utterances[j].utterance_id.clone();
    let mut trials = Vec::with_capacity(n_target + n_nontarget);
    for _ in 0..n_target {
        let (_, utts) = eligible[rng.random_range(0..eligible.len())];
        let a = rng.random_range(0..utts.len());
        let mut b = rng.random_range(0..utts.len() - 1);
        if b >= a {
            b += 1;
        }
        trials.push(Trial {
            enroll: id(utts[a]),
            test: id(utts[b]),
            target: true,
        });
    }
    for _ in 0..n_nontarget {
        let a = rng.random_range(0..speakers.len());
        let mut b = rng.random_range(0..speakers.len() - 1);
        if b >= a {
            b += 1;
        }
        let ua = &speakers[a].1;
        let ub = &speakers[b].1;
        trials.push(Trial {
            enroll: id(ua[rng.random_range(0..ua.len())]),
            test: id(ub[rng.random_range(0..ub.len())]),
            target: false,
        });
    }
    trials.shuffle(&mut rng);
    Ok(TrialList { trials })
}

/// One target and one non-target trial with every utterance as enrollment.
pub fn make_trials_per_utterance(corpus: &Corpus, seed: u64) -> Result<TrialList> {
    let speakers = corpus.speakers();
    if speakers.len() < 2 {
        return Err(Error::Config(format!(
            "non-target trials need at least 2 speakers, corpus has {}",
            speakers.len()
        )));
    }
    let slot: HashMap<&str, usize> = speakers
        .iter()
        .enumerate()
        .map(|(k, (s, _))| (s.as_str(), k))
        .collect();
    let mut rng = stream_rng(seed, TRIAL_STREAM);
    let mut trials = Vec::with_capacity(2 * corpus.len());
    for (j, utt) in corpus.utterances.iter().enumerate() {
        let k = slot[utt.speaker_id.as_str()];
        let own = &speakers[k].1;
        if own.len() < 2 {
            return Err(Error::Config(format!(
                "speaker {} has a single utterance; no target trial possible",
                utt.speaker_id
            )));
        }
        let mut pick = rng.random_range(0..own.len() - 1);
        if own[pick] == j {
            pick = own.len() - 1;
        }
        trials.push(Trial {
            enroll: utt.utterance_id.clone(),
            test: corpus.utterances[own[pick]].utterance_id.clone(),
            target: true,
        });
        let mut other = rng.random_range(0..speakers.len() - 1);
        if other >= k {
            other += 1;
        }
        let pool = &speakers[other].1;
        trials.push(Trial {
            enroll: utt.utterance_id.clone(),
            test: corpus.utterances[pool[rng.random_range(0..pool.len())]]
                .utterance_id
                .clone(),
            target: false,
        });
    }
    Ok(TrialList { trials })
}
