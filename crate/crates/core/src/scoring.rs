//! Final scores, per-phone trait similarity vectors and evidence scores.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, ArrayView1};
use rayon::prelude::*;

use crate::corpus::{Corpus, TrialList};
use crate::error::{Error, Result};
use crate::model::{embed, ModelState};
use crate::trait_layer::PhoneticTraitSet;
use crate::util::{dot, fmt_opt, norm, read_to_string, write_atomic};

/// Cosine similarity of two nonzero vectors.
pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("cosine of lengths {} and {}", a.len(), b.len())));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Numeric("cosine of a zero-norm vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine between two speaker embeddings; the verification decision statistic.
pub fn final_score(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    cosine(a, b)
}

/// Per-phone cosines, defined only where the phone is present on both sides.
#[derive(Debug, Clone, PartialEq)]
pub struct TraitSimilarityVector {
    pub values: Vec<Option<f64>>,
}

impl TraitSimilarityVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn defined(&self, i: usize) -> bool {
        self.values[i].is_some()
    }

    pub fn n_defined(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }
}

pub fn trait_similarity_vector(e: &PhoneticTraitSet, t: &PhoneticTraitSet) -> Result<TraitSimilarityVector> {
    if e.n_phones() != t.n_phones() || e.dim() != t.dim() {
        return Err(Error::Dimension(format!(
            "trait sets {} ({}x{}) and {} ({}x{}) differ in shape",
            e.utterance_id,
            e.n_phones(),
            e.dim(),
            t.utterance_id,
            t.n_phones(),
            t.dim()
        )));
    }
    let values = (0..e.n_phones())
        .map(|i| {
            if e.present[i] && t.present[i] {
                cosine(e.traits.row(i), t.traits.row(i)).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;
    Ok(TraitSimilarityVector { values })
}

/// Mean of the defined entries. `None` when no phone is shared.
pub fn evidence_score(s: &TraitSimilarityVector) -> Option<f64> {
    let (sum, n) = s
        .values
        .iter()
        .flatten()
        .fold((0.0, 0usize), |(sum, n), v| (sum + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// [`evidence_score`] that reports the missing overlap as an error.
pub fn evidence_score_checked(s: &TraitSimilarityVector, enroll: &str, test: &str) -> Result<f64> {
    evidence_score(s).ok_or_else(|| Error::UndefinedEvidence {
        enroll: enroll.to_string(),
        test: test.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub enroll: String,
    pub test: String,
    pub label: Option<bool>,
    pub final_score: f64,
    /// Absent exactly when the similarity vector has no defined entry.
    pub evidence_score: Option<f64>,
    pub similarity: TraitSimilarityVector,
}

impl ScoreRecord {
    pub fn new(
        enroll: String,
        test: String,
        label: Option<bool>,
        emb: (ArrayView1<f64>, ArrayView1<f64>),
        traits: (&PhoneticTraitSet, &PhoneticTraitSet),
    ) -> Result<Self> {
        let final_score = final_score(emb.0, emb.1)?;
        let similarity = trait_similarity_vector(traits.0, traits.1)?;
        Ok(ScoreRecord {
            evidence_score: evidence_score(&similarity),
            enroll,
            test,
            label,
            final_score,
            similarity,
        })
    }
}

type Embedded = (Array1<f64>, PhoneticTraitSet);

fn embed_position(model: &ModelState, corpus: &Corpus, pos: usize) -> Result<Embedded> {
    embed(model, &corpus.utterances[pos], &corpus.alignments[pos])
}

fn resolve(corpus: &Corpus, trials: &TrialList) -> Result<Vec<(usize, usize)>> {
    trials
        .trials
        .iter()
        .map(|t| {
            let e = corpus.position(&t.enroll).ok_or_else(|| Error::MissingUtterance(t.enroll.clone()))?;
            let x = corpus.position(&t.test).ok_or_else(|| Error::MissingUtterance(t.test.clone()))?;
            Ok((e, x))
        })
        .collect()
}

/// Scores every trial, embedding each referenced utterance once.
pub fn score_trials(model: &ModelState, corpus: &Corpus, trials: &TrialList) -> Result<Vec<ScoreRecord>> {
    let pairs = resolve(corpus, trials)?;
    let mut needed: Vec<usize> = pairs.iter().flat_map(|&(e, x)| [e, x]).collect();
    needed.sort_unstable();
    needed.dedup();
    let embedded: Vec<Embedded> = needed
        .par_iter()
        .map(|&p| embed_position(model, corpus, p))
        .collect::<Result<_>>()?;
    let cache: BTreeMap<usize, &Embedded> = needed.iter().copied().zip(embedded.iter()).collect();

    trials
        .trials
        .par_iter()
        .zip(pairs.par_iter())
        .map(|(t, &(e, x))| {
            let (ee, et) = cache[&e];
            let (xe, xt) = cache[&x];
            ScoreRecord::new(t.enroll.clone(), t.test.clone(), Some(t.target), (ee.view(), xe.view()), (et, xt))
        })
        .collect()
}

/// Same output as [`score_trials`] but recomputes both sides of every trial.
pub fn score_trials_uncached(model: &ModelState, corpus: &Corpus, trials: &TrialList) -> Result<Vec<ScoreRecord>> {
    let pairs = resolve(corpus, trials)?;
    trials
        .trials
        .iter()
        .zip(pairs)
        .map(|(t, (e, x))| {
            let (ee, et) = embed_position(model, corpus, e)?;
            let (xe, xt) = embed_position(model, corpus, x)?;
            ScoreRecord::new(t.enroll.clone(), t.test.clone(), Some(t.target), (ee.view(), xe.view()), (&et, &xt))
        })
        .collect()
}

fn fmt_label(l: Option<bool>) -> &'static str {
    match l {
        Some(true) => "1",
        Some(false) => "0",
        None => "NA",
    }
}

/// Score file: a header naming the phones, then
/// `enroll, test, label, final, evidence, s(0) .. s(I-1)` per line, tab
/// separated, with `NA` for undefined entries.
pub fn format_scores(records: &[ScoreRecord], phone_labels: &[String]) -> String {
    let mut out = String::from("enroll\ttest\tlabel\tfinal\tevidence");
    for l in phone_labels {
        out.push('\t');
        out.push_str(l);
    }
    out.push('\n');
    for r in records {
        let _ = write!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            r.enroll,
            r.test,
            fmt_label(r.label),
            r.final_score,
            fmt_opt(r.evidence_score)
        );
        for v in &r.similarity.values {
            out.push('\t');
            out.push_str(&fmt_opt(*v));
        }
        out.push('\n');
    }
    out
}

fn parse_opt(field: &str, what: &str, name: &str, line: usize) -> Result<Option<f64>> {
    if field == "NA" {
        return Ok(None);
    }
    field
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(Some)
        .ok_or_else(|| Error::parse(name, line, format!("invalid {what} {field:?}")))
}

/// Parses a score file, returning the phone labels from its header and the records.
pub fn parse_scores(text: &str, name: &str) -> Result<(Vec<String>, Vec<ScoreRecord>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::parse(name, 1, "empty score file"))?;
    let cols: Vec<&str> = header.split('\t').collect();
    if cols.len() < 5 || cols[..5] != ["enroll", "test", "label", "final", "evidence"] {
        return Err(Error::parse(name, 1, "missing score file header"));
    }
    let phones: Vec<String> = cols[5..].iter().map(|s| s.to_string()).collect();
    let mut records = Vec::new();
    for (ln, line) in lines {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 + phones.len() {
            return Err(Error::parse(
                name,
                ln,
                format!("expected {} fields, found {}", 5 + phones.len(), f.len()),
            ));
        }
        let label = match f[2] {
            "1" => Some(true),
            "0" => Some(false),
            "NA" => None,
            other => return Err(Error::parse(name, ln, format!("invalid label {other:?}"))),
        };
        let final_score = parse_opt(f[3], "final score", name, ln)?
            .ok_or_else(|| Error::parse(name, ln, "final score may not be NA"))?;
        let evidence_score = parse_opt(f[4], "evidence score", name, ln)?;
        let values = f[5..]
            .iter()
            .map(|v| parse_opt(v, "similarity", name, ln))
            .collect::<Result<Vec<_>>>()?;
        let similarity = TraitSimilarityVector { values };
        if evidence_score.is_some() != (similarity.n_defined() > 0) {
            return Err(Error::parse(name, ln, "evidence must be present iff some similarity is defined"));
        }
        records.push(ScoreRecord {
            enroll: f[0].to_string(),
            test: f[1].to_string(),
            label,
            final_score,
            evidence_score,
            similarity,
        });
    }
    Ok((phones, records))
}

pub fn save_scores(path: &Path, records: &[ScoreRecord], phone_labels: &[String]) -> Result<()> {
    write_atomic(path, format_scores(records, phone_labels).as_bytes())
}

pub fn load_scores(path: &Path) -> Result<(Vec<String>, Vec<ScoreRecord>)> {
    parse_scores(&read_to_string(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, make_trials, CorpusConfig, PhoneInventory, UtteranceFeatures};
    use crate::encoder::EncoderConfig;
    use crate::model::ModelConfig;
    use ndarray::{array, Array2};
    use rand::Rng;

    fn trait_set(id: &str, rows: Array2<f64>) -> PhoneticTraitSet {
        let present = rows.rows().into_iter().map(|r| r.iter().any(|v| *v != 0.0)).collect();
        PhoneticTraitSet {
            utterance_id: id.into(),
            traits: rows,
            present,
        }
    }

    #[test]
    fn final_score_basics() {
        let v = array![1.0, 2.0, -0.5];
        assert!((final_score(v.view(), v.view()).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(final_score(array![1.0, 0.0].view(), array![0.0, 3.0].view()).unwrap(), 0.0);
        assert!((final_score(v.view(), (-&v).view()).unwrap() + 1.0).abs() < 1e-15);
        assert!(final_score(v.view(), Array1::zeros(3).view()).is_err());
    }

    #[test]
    fn identical_traits_give_unit_similarity() {
        let a = trait_set("a", array![[1.0, 2.0], [0.0, 0.0], [-3.0, 0.5]]);
        let s = trait_similarity_vector(&a, &a).unwrap();
        assert_eq!(s.n_defined(), 2);
        assert!(s.values[1].is_none());
        for v in s.values.iter().flatten() {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn disjoint_phones_have_no_evidence() {
        let a = trait_set("a", array![[1.0, 2.0], [0.0, 0.0]]);
        let b = trait_set("b", array![[0.0, 0.0], [1.0, 1.0]]);
        let s = trait_similarity_vector(&a, &b).unwrap();
        assert_eq!(s.n_defined(), 0);
        assert_eq!(evidence_score(&s), None);
        assert!(matches!(
            evidence_score_checked(&s, "a", "b"),
            Err(Error::UndefinedEvidence { .. })
        ));
    }

    #[test]
    fn evidence_is_mean_of_defined() {
        let mut values = vec![None; 40];
        values[5] = Some(0.958);
        values[6] = Some(0.959);
        values[23] = Some(0.973);
        let s = TraitSimilarityVector { values };
        assert!((evidence_score(&s).unwrap() - 2.89 / 3.0).abs() < 1e-12);
        let single = TraitSimilarityVector {
            values: vec![None, Some(-0.25), None],
        };
        assert_eq!(evidence_score(&single), Some(-0.25));
        let flat = TraitSimilarityVector {
            values: vec![Some(0.3); 7],
        };
        assert!((evidence_score(&flat).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn brute_force_cosines_and_invariances() {
        let mut rng = crate::util::stream_rng(3, 0);
        for _ in 0..50 {
            let mut gen = || {
                Array2::from_shape_fn((8, 4), |(i, _)| {
                    if i % 3 == 0 && rng.random_bool(0.5) {
                        0.0
                    } else {
                        rng.random_range(-1.0..1.0)
                    }
                })
            };
            let (ra, rb) = (gen(), gen());
            let zero_rows = |m: &Array2<f64>| {
                let mut m = m.clone();
                for mut r in m.rows_mut() {
                    if r[0] == 0.0 {
                        r.fill(0.0);
                    }
                }
                m
            };
            let a = trait_set("a", zero_rows(&ra));
            let b = trait_set("b", zero_rows(&rb));
            let s = trait_similarity_vector(&a, &b).unwrap();
            let swapped = trait_similarity_vector(&b, &a).unwrap();
            for i in 0..8 {
                match (a.present[i] && b.present[i], s.values[i]) {
                    (true, Some(v)) => {
                        let (x, y) = (a.traits.row(i), b.traits.row(i));
                        let brute: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>()
                            / (x.iter().map(|p| p * p).sum::<f64>().sqrt() * y.iter().map(|q| q * q).sum::<f64>().sqrt());
                        assert!((v - brute).abs() <= 1e-12);
                        assert!((swapped.values[i].unwrap() - v).abs() <= 1e-15);
                    }
                    (false, None) => assert!(swapped.values[i].is_none()),
                    other => panic!("mismatch at {i}: {other:?}"),
                }
            }
            let mut scaled = a.clone();
            scaled.traits.row_mut(0).mapv_inplace(|v| v * 3.5);
            let s2 = trait_similarity_vector(&scaled, &b).unwrap();
            for (x, y) in s.values.iter().zip(&s2.values) {
                assert_eq!(x.is_some(), y.is_some());
                if let (Some(x), Some(y)) = (x, y) {
                    assert!((x - y).abs() <= 1e-12);
                }
            }
        }
    }

    fn small_model(corpus: &Corpus) -> ModelState {
        let cfg = ModelConfig {
            encoder: EncoderConfig::default_for(corpus.feature_dim(), 6, 5),
            n_phones: corpus.inventory.len(),
            embedding_dim: 4,
            n_classes: 2,
        };
        ModelState::init(&cfg, 1).unwrap()
    }

    fn small_corpus() -> Corpus {
        generate_corpus(
            &PhoneInventory::cmu(),
            &CorpusConfig {
                n_speakers: 4,
                utts_per_speaker: 5,
                feature_dim: 5,
                seed: 9,
                ..CorpusConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn cached_equals_uncached() {
        let c = small_corpus();
        let m = small_model(&c);
        let trials = make_trials(&c, 30, 30, 1).unwrap();
        let a = score_trials(&m, &c, &trials).unwrap();
        let b = score_trials_uncached(&m, &c, &trials).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 60);
        assert!(a.iter().all(|r| r.final_score.is_finite()));
    }

    #[test]
    fn duplicated_utterance_scores_one() {
        let mut c = small_corpus();
        let src: UtteranceFeatures = c.utterances[0].clone();
        let mut align = c.alignments[0].clone();
        let copy = UtteranceFeatures {
            utterance_id: "copy".into(),
            ..src.clone()
        };
        align.utterance_id = "copy".into();
        let mut utts = c.utterances.clone();
        let mut aligns = c.alignments.clone();
        utts.push(copy);
        aligns.push(align);
        c = Corpus::new(c.inventory.clone(), utts, aligns, Vec::new()).unwrap();
        let m = small_model(&c);
        let trials = TrialList {
            trials: vec![crate::corpus::Trial {
                enroll: src.utterance_id.clone(),
                test: "copy".into(),
                target: true,
            }],
        };
        let r = &score_trials(&m, &c, &trials).unwrap()[0];
        assert!((r.final_score - 1.0).abs() < 1e-12);
        assert!((r.evidence_score.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn missing_utterance_is_reported() {
        let c = small_corpus();
        let m = small_model(&c);
        let trials = TrialList {
            trials: vec![crate::corpus::Trial {
                enroll: "nope".into(),
                test: c.utterances[0].utterance_id.clone(),
                target: false,
            }],
        };
        assert!(matches!(score_trials(&m, &c, &trials), Err(Error::MissingUtterance(id)) if id == "nope"));
    }

    #[test]
    fn score_file_round_trip() {
        let c = small_corpus();
        let m = small_model(&c);
        let trials = make_trials(&c, 5, 5, 2).unwrap();
        let mut recs = score_trials(&m, &c, &trials).unwrap();
        recs[0].label = None;
        recs[1].similarity.values.iter_mut().for_each(|v| *v = None);
        recs[1].evidence_score = None;
        let text = format_scores(&recs, c.inventory.labels());
        assert!(text.contains("\tNA"));
        let (phones, back) = parse_scores(&text, "s.tsv").unwrap();
        assert_eq!(phones, c.inventory.labels());
        assert_eq!(back, recs);
    }

    #[test]
    fn score_file_rejects_bad_rows() {
        let head = "enroll\ttest\tlabel\tfinal\tevidence\tAA\tAE\n";
        assert!(parse_scores(&format!("{head}a\tb\t1\t0.5\t0.5\t0.5\n"), "x").is_err());
        assert!(parse_scores(&format!("{head}a\tb\t2\t0.5\t0.5\t0.5\tNA\n"), "x").is_err());
        assert!(parse_scores(&format!("{head}a\tb\t1\t0.5\tNA\t0.5\tNA\n"), "x").is_err());
        let err = parse_scores(&format!("{head}a\tb\t1\tNA\tNA\tNA\tNA\n"), "x").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(parse_scores(&format!("{head}a\tb\t1\t0.5\t0.5\t0.5\tNA\n"), "x").is_ok());
    }
}
