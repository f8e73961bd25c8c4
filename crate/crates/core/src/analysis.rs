//! Verification metrics, explainability correlation, per-phone F-ratios and
//! explanation export.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scoring::{ScoreRecord, TraitSimilarityVector};
use crate::util::{fmt_opt, read_to_string, stream_rng, write_atomic};

/// Detection cost parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcfParams {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        DcfParams {
            p_target: 0.01,
            c_miss: 1.0,
            c_fa: 1.0,
        }
    }
}

impl DcfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_target > 0.0 && self.p_target < 1.0) {
            return Err(Error::Config(format!("p_target must lie in (0, 1), got {}", self.p_target)));
        }
        if !(self.c_miss > 0.0 && self.c_fa > 0.0) || !self.c_miss.is_finite() || !self.c_fa.is_finite() {
            return Err(Error::Config("detection costs must be positive and finite".into()));
        }
        Ok(())
    }
}

/// Miss and false-alarm rates at each candidate threshold.
///
/// Thresholds are the distinct scores in ascending order followed by `+inf`;
/// a trial is accepted when its score is at least the threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct RocSweep {
    pub thresholds: Vec<f64>,
    pub frr: Vec<f64>,
    pub far: Vec<f64>,
    pub n_target: usize,
    pub n_nontarget: usize,
}

pub fn roc_sweep(scores: &[(f64, bool)]) -> Result<RocSweep> {
    if let Some((s, _)) = scores.iter().find(|(s, _)| !s.is_finite()) {
        return Err(Error::Numeric(format!("non-finite score {s}")));
    }
    let n_target = scores.iter().filter(|(_, l)| *l).count();
    let n_nontarget = scores.len() - n_target;
    if n_target == 0 || n_nontarget == 0 {
        return Err(Error::InsufficientData(format!(
            "metrics need both classes, got {n_target} target and {n_nontarget} non-target trials"
        )));
    }
    let mut sorted: Vec<(f64, bool)> = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut sweep = RocSweep {
        thresholds: Vec::new(),
        frr: Vec::new(),
        far: Vec::new(),
        n_target,
        n_nontarget,
    };
    // targets and non-targets strictly below the current threshold
    let (mut tgt_below, mut non_below) = (0usize, 0usize);
    let mut i = 0;
    while i <= sorted.len() {
        let theta = if i < sorted.len() { sorted[i].0 } else { f64::INFINITY };
        sweep.thresholds.push(theta);
        sweep.frr.push(tgt_below as f64 / n_target as f64);
        sweep.far.push((n_nontarget - non_below) as f64 / n_nontarget as f64);
        if i == sorted.len() {
            break;
        }
        while i < sorted.len() && sorted[i].0 == theta {
            if sorted[i].1 {
                tgt_below += 1;
            } else {
                non_below += 1;
            }
            i += 1;
        }
    }
    Ok(sweep)
}

/// EER and the threshold where the interpolated FAR and FRR curves cross.
pub fn eer_from_sweep(sweep: &RocSweep) -> (f64, f64) {
    let j = (0..sweep.thresholds.len())
        .find(|&j| sweep.frr[j] >= sweep.far[j])
        .expect("FRR reaches 1 and FAR reaches 0 at +inf");
    if j == 0 {
        return (sweep.frr[0], sweep.thresholds[0]);
    }
    let d0 = sweep.far[j - 1] - sweep.frr[j - 1];
    let d1 = sweep.far[j] - sweep.frr[j];
    let t = d0 / (d0 - d1);
    let eer = sweep.frr[j - 1] + t * (sweep.frr[j] - sweep.frr[j - 1]);
    let (a, b) = (sweep.thresholds[j - 1], sweep.thresholds[j]);
    let threshold = if b.is_finite() { a + t * (b - a) } else { a };
    (eer, threshold)
}

pub fn compute_eer(scores: &[(f64, bool)]) -> Result<(f64, f64)> {
    Ok(eer_from_sweep(&roc_sweep(scores)?))
}

pub fn min_dcf_from_sweep(sweep: &RocSweep, p: &DcfParams) -> f64 {
    let norm = (p.c_miss * p.p_target).min(p.c_fa * (1.0 - p.p_target));
    sweep
        .frr
        .iter()
        .zip(&sweep.far)
        .map(|(frr, far)| (p.c_miss * p.p_target * frr + p.c_fa * (1.0 - p.p_target) * far) / norm)
        .fold(f64::INFINITY, f64::min)
}

pub fn compute_min_dcf(scores: &[(f64, bool)], params: &DcfParams) -> Result<f64> {
    params.validate()?;
    Ok(min_dcf_from_sweep(&roc_sweep(scores)?, params))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub eer: f64,
    pub min_dcf: f64,
    pub threshold_at_eer: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
}

pub fn metric_report(scores: &[(f64, bool)], params: &DcfParams) -> Result<MetricReport> {
    params.validate()?;
    let sweep = roc_sweep(scores)?;
    let (eer, threshold_at_eer) = eer_from_sweep(&sweep);
    Ok(MetricReport {
        eer,
        min_dcf: min_dcf_from_sweep(&sweep, params),
        threshold_at_eer,
        n_target: sweep.n_target,
        n_nontarget: sweep.n_nontarget,
    })
}

/// Pearson correlation of two equally long columns.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!("columns of length {} and {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData(format!("correlation needs 2 points, got {}", x.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Numeric("correlation undefined for a zero-variance column".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Correlation between final and evidence scores over records whose evidence
/// is defined.
pub fn explainability_correlation(records: &[ScoreRecord]) -> Result<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = records
        .iter()
        .filter_map(|r| r.evidence_score.map(|e| (r.final_score, e)))
        .unzip();
    pearson(&x, &y)
}

fn labelled(records: &[ScoreRecord]) -> Result<impl Iterator<Item = (&ScoreRecord, bool)>> {
    if let Some(r) = records.iter().find(|r| r.label.is_none()) {
        return Err(Error::InsufficientData(format!(
            "trial {} {} has no target/non-target label",
            r.enroll, r.test
        )));
    }
    Ok(records.iter().map(|r| (r, r.label.unwrap_or(false))))
}

pub fn final_scores(records: &[ScoreRecord]) -> Result<Vec<(f64, bool)>> {
    Ok(labelled(records)?.map(|(r, l)| (r.final_score, l)).collect())
}

/// Evidence scores of the records where evidence is defined.
pub fn evidence_scores(records: &[ScoreRecord]) -> Result<Vec<(f64, bool)>> {
    Ok(labelled(records)?
        .filter_map(|(r, l)| r.evidence_score.map(|e| (e, l)))
        .collect())
}

/// Metrics for the final and evidence columns plus their correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub dcf: DcfParams,
    pub final_metrics: MetricReport,
    pub evidence_metrics: MetricReport,
    pub correlation: f64,
    pub n_trials: usize,
    /// Trials whose enrollment and test utterances share no phone.
    pub n_evidence_undefined: usize,
}

pub fn evaluate(records: &[ScoreRecord], dcf: &DcfParams) -> Result<EvalReport> {
    let evidence = evidence_scores(records)?;
    Ok(EvalReport {
        dcf: *dcf,
        final_metrics: metric_report(&final_scores(records)?, dcf)?,
        evidence_metrics: metric_report(&evidence, dcf)?,
        correlation: explainability_correlation(records)?,
        n_trials: records.len(),
        n_evidence_undefined: records.len() - evidence.len(),
    })
}

impl EvalReport {
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "n_trials={}", self.n_trials);
        let _ = writeln!(out, "n_evidence_undefined={}", self.n_evidence_undefined);
        let _ = writeln!(out, "p_target={}", self.dcf.p_target);
        let _ = writeln!(out, "c_miss={}", self.dcf.c_miss);
        let _ = writeln!(out, "c_fa={}", self.dcf.c_fa);
        for (name, m) in [("final", &self.final_metrics), ("evidence", &self.evidence_metrics)] {
            let _ = writeln!(out, "{name}.eer={}", m.eer);
            let _ = writeln!(out, "{name}.min_dcf={}", m.min_dcf);
            let _ = writeln!(out, "{name}.threshold_at_eer={}", m.threshold_at_eer);
            let _ = writeln!(out, "{name}.n_target={}", m.n_target);
            let _ = writeln!(out, "{name}.n_nontarget={}", m.n_nontarget);
        }
        let _ = writeln!(out, "correlation={}", self.correlation);
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("score,eer,min_dcf,threshold_at_eer,n_target,n_nontarget\n");
        for (name, m) in [("final", &self.final_metrics), ("evidence", &self.evidence_metrics)] {
            let _ = writeln!(
                out,
                "{name},{},{},{},{},{}",
                m.eer, m.min_dcf, m.threshold_at_eer, m.n_target, m.n_nontarget
            );
        }
        out
    }
}

pub const F_RATIO_SAMPLES: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct FRatioRow {
    pub phone: String,
    /// Mean sampled similarity over target trials, when included.
    pub within_mean: Option<f64>,
    pub between_mean: Option<f64>,
    pub ratio: Option<f64>,
    /// Defined similarities in the smaller of the two pools.
    pub n_available: usize,
    pub included: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FRatioReport {
    pub n_samples: usize,
    pub rows: Vec<FRatioRow>,
}

impl FRatioReport {
    pub fn included(&self) -> impl Iterator<Item = &FRatioRow> {
        self.rows.iter().filter(|r| r.included)
    }

    pub fn excluded(&self) -> impl Iterator<Item = &FRatioRow> {
        self.rows.iter().filter(|r| !r.included)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("phone,within,between,ratio,included\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.phone,
                fmt_opt(r.within_mean),
                fmt_opt(r.between_mean),
                fmt_opt(r.ratio),
                r.included
            );
        }
        out
    }
}

const F_RATIO_STREAM_BASE: u64 = 1 << 32;

fn sample_mean(pool: &[f64], n: usize, rng: &mut impl Rng) -> f64 {
    (0..n).map(|_| pool[rng.random_range(0..pool.len())]).sum::<f64>() / n as f64
}

/// Per-phone F-ratio from pools of per-phone similarities.
///
/// `within[i]` and `between[i]` hold the defined similarities of phone `i`
/// over target and non-target trials. Each phone draws from its own RNG
/// stream, so excluding one phone leaves every other row unchanged.
pub fn f_ratio_from_pools(
    phones: &[String],
    within: &[Vec<f64>],
    between: &[Vec<f64>],
    n_samples: usize,
    seed: u64,
) -> Result<FRatioReport> {
    if within.len() != phones.len() || between.len() != phones.len() {
        return Err(Error::Dimension(format!(
            "{} phones but {} / {} pools",
            phones.len(),
            within.len(),
            between.len()
        )));
    }
    if n_samples == 0 {
        return Err(Error::Config("n_samples must be >= 1".into()));
    }
    if (0..phones.len()).all(|i| within[i].is_empty() || between[i].is_empty()) {
        return Err(Error::InsufficientData("no phone has similarities in both pools".into()));
    }
    let rows = (0..phones.len())
        .into_par_iter()
        .map(|i| {
            let n_available = within[i].len().min(between[i].len());
            let mut row = FRatioRow {
                phone: phones[i].clone(),
                within_mean: None,
                between_mean: None,
                ratio: None,
                n_available,
                included: n_available >= n_samples,
            };
            if row.included {
                let mut rng = stream_rng(seed, F_RATIO_STREAM_BASE + i as u64);
                let w = sample_mean(&within[i], n_samples, &mut rng);
                let b = sample_mean(&between[i], n_samples, &mut rng);
                row.within_mean = Some(w);
                row.between_mean = Some(b);
                row.ratio = Some(w / b);
            }
            row
        })
        .collect();
    Ok(FRatioReport { n_samples, rows })
}

pub fn f_ratio(records: &[ScoreRecord], phones: &[String], n_samples: usize, seed: u64) -> Result<FRatioReport> {
    let mut within = vec![Vec::new(); phones.len()];
    let mut between = vec![Vec::new(); phones.len()];
    for (r, target) in labelled(records)? {
        if r.similarity.len() != phones.len() {
            return Err(Error::Dimension(format!(
                "trial {} {} has {} similarities for {} phones",
                r.enroll,
                r.test,
                r.similarity.len(),
                phones.len()
            )));
        }
        let pools = if target { &mut within } else { &mut between };
        for (i, v) in r.similarity.values.iter().enumerate() {
            if let Some(v) = v {
                pools[i].push(*v);
            }
        }
    }
    f_ratio_from_pools(phones, &within, &between, n_samples, seed)
}

/// Explanation of one trial: header rows, then one row per phone with its
/// similarity or `NA` when the phone is missing from either utterance.
pub fn format_explanation(record: &ScoreRecord, phones: &[String]) -> Result<String> {
    if record.similarity.len() != phones.len() {
        return Err(Error::Dimension(format!(
            "record has {} similarities for {} phones",
            record.similarity.len(),
            phones.len()
        )));
    }
    let label = match record.label {
        Some(true) => "1",
        Some(false) => "0",
        None => "NA",
    };
    let mut out = String::new();
    let _ = writeln!(out, "enroll\t{}", record.enroll);
    let _ = writeln!(out, "test\t{}", record.test);
    let _ = writeln!(out, "label\t{label}");
    let _ = writeln!(out, "final\t{}", record.final_score);
    let _ = writeln!(out, "evidence\t{}", fmt_opt(record.evidence_score));
    let _ = writeln!(out, "n_shared\t{}", record.similarity.n_defined());
    out.push_str("index\tphone\tsimilarity\n");
    for (i, (p, v)) in phones.iter().zip(&record.similarity.values).enumerate() {
        let _ = writeln!(out, "{i}\t{p}\t{}", fmt_opt(*v));
    }
    Ok(out)
}

pub fn parse_explanation(text: &str, name: &str) -> Result<(ScoreRecord, Vec<String>)> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    let field = |idx: usize, key: &str| -> Result<&str> {
        let (ln, line) = *lines
            .get(idx)
            .ok_or_else(|| Error::parse(name, idx + 1, format!("missing {key} row")))?;
        match line.split_once('\t') {
            Some((k, v)) if k == key => Ok(v),
            _ => Err(Error::parse(name, ln, format!("expected {key} row"))),
        }
    };
    let opt = |idx: usize, v: &str| -> Result<Option<f64>> {
        if v == "NA" {
            return Ok(None);
        }
        v.parse::<f64>()
            .map(Some)
            .map_err(|_| Error::parse(name, lines[idx].0, format!("invalid number {v:?}")))
    };
    let enroll = field(0, "enroll")?.to_string();
    let test = field(1, "test")?.to_string();
    let label = match field(2, "label")? {
        "1" => Some(true),
        "0" => Some(false),
        "NA" => None,
        other => return Err(Error::parse(name, lines[2].0, format!("invalid label {other:?}"))),
    };
    let final_score = opt(3, field(3, "final")?)?
        .ok_or_else(|| Error::parse(name, lines[3].0, "final score may not be NA"))?;
    let evidence_score = opt(4, field(4, "evidence")?)?;
    field(5, "n_shared")?;
    if lines.get(6).map(|l| l.1) != Some("index\tphone\tsimilarity") {
        return Err(Error::parse(name, lines.get(6).map_or(7, |l| l.0), "missing phone table header"));
    }
    let mut phones = Vec::new();
    let mut values = Vec::new();
    for (k, &(ln, line)) in lines.iter().enumerate().skip(7) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 || f[0] != (k - 7).to_string() {
            return Err(Error::parse(name, ln, "expected index, phone and similarity"));
        }
        phones.push(f[1].to_string());
        values.push(opt(k, f[2])?);
    }
    let record = ScoreRecord {
        enroll,
        test,
        label,
        final_score,
        evidence_score,
        similarity: TraitSimilarityVector { values },
    };
    Ok((record, phones))
}

pub fn export_explanation(path: &Path, record: &ScoreRecord, phones: &[String]) -> Result<()> {
    write_atomic(path, format_explanation(record, phones)?.as_bytes())
}

pub fn load_explanation(path: &Path) -> Result<(ScoreRecord, Vec<String>)> {
    parse_explanation(&read_to_string(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PhoneInventory;

    fn scores(t: &[f64], n: &[f64]) -> Vec<(f64, bool)> {
        t.iter().map(|&s| (s, true)).chain(n.iter().map(|&s| (s, false))).collect()
    }

    #[test]
    fn eer_hand_cases() {
        assert_eq!(compute_eer(&scores(&[0.9, 0.8], &[0.1, 0.2])).unwrap().0, 0.0);
        let (eer, _) = compute_eer(&scores(&[0.9, 0.7, 0.3], &[0.6, 0.2, 0.1])).unwrap();
        assert!((eer - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(compute_eer(&scores(&[0.1, 0.2], &[0.9, 0.8])).unwrap().0, 1.0);
    }

    #[test]
    fn eer_interpolates_between_thresholds() {
        // thresholds .4 .45 .5 inf -> FRR 0 .5 .5 1, FAR 1 1 0 0
        let (eer, th) = compute_eer(&scores(&[0.5, 0.4], &[0.45])).unwrap();
        // j = 2 (FRR .5 >= FAR 0); d0 = .5, d1 = -.5 -> t = .5
        assert!((eer - 0.5).abs() < 1e-15);
        assert!((th - 0.475).abs() < 1e-15);
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(compute_eer(&scores(&[0.1, 0.2], &[])).is_err());
        assert!(compute_min_dcf(&scores(&[], &[0.3]), &DcfParams::default()).is_err());
    }

    #[test]
    fn min_dcf_cases() {
        let p = DcfParams::default();
        assert_eq!(compute_min_dcf(&scores(&[0.9, 0.8], &[0.1, 0.2]), &p).unwrap(), 0.0);
        let flat = compute_min_dcf(&scores(&[0.5; 4], &[0.5; 6]), &p).unwrap();
        assert!((flat - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eer_is_monotone_invariant() {
        let s = scores(&[0.9, 0.3, 0.55, 0.2], &[0.6, 0.25, 0.1, 0.5, 0.05]);
        let mapped: Vec<(f64, bool)> = s.iter().map(|&(x, l)| ((3.0 * x).exp() - 4.0, l)).collect();
        assert!((compute_eer(&s).unwrap().0 - compute_eer(&mapped).unwrap().0).abs() < 1e-15);
    }

    #[test]
    fn correlation_cases() {
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(), 1.0);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap(), -1.0);
        assert!(pearson(&[1.0, 1.0], &[2.0, 3.0]).is_err());
        assert!(pearson(&[1.0], &[2.0]).is_err());
    }

    fn record(final_score: f64, values: Vec<Option<f64>>, label: bool) -> ScoreRecord {
        let similarity = TraitSimilarityVector { values };
        ScoreRecord {
            enroll: "e".into(),
            test: "t".into(),
            label: Some(label),
            final_score,
            evidence_score: crate::scoring::evidence_score(&similarity),
            similarity,
        }
    }

    #[test]
    fn correlation_skips_undefined_evidence() {
        let recs = vec![
            record(0.1, vec![Some(0.1)], true),
            record(0.5, vec![None], false),
            record(0.9, vec![Some(0.9)], false),
        ];
        assert_eq!(explainability_correlation(&recs).unwrap(), 1.0);
    }

    #[test]
    fn f_ratio_constant_pools() {
        let phones = vec!["AA".to_string(), "ZH".to_string()];
        let within = vec![vec![0.9; 600], vec![0.9; 3]];
        let between = vec![vec![0.45; 700], vec![0.1; 900]];
        let r = f_ratio_from_pools(&phones, &within, &between, 500, 1).unwrap();
        assert!((r.rows[0].ratio.unwrap() - 2.0).abs() < 1e-12);
        assert!(r.rows[0].included);
        assert!(!r.rows[1].included);
        assert_eq!(r.rows[1].n_available, 3);
        assert!(r.to_csv().contains("ZH,NA,NA,NA,false"));
    }

    #[test]
    fn f_ratio_deterministic_and_row_local() {
        let mut rng = stream_rng(0, 0);
        let mut pool = |m: f64| (0..800).map(|_| m + rng.random_range(-0.1..0.1)).collect::<Vec<f64>>();
        let phones: Vec<String> = ["AA", "AE", "AH"].iter().map(|s| s.to_string()).collect();
        let within = vec![pool(0.8), pool(0.7), pool(0.6)];
        let between = vec![pool(0.3), pool(0.2), pool(0.1)];
        let a = f_ratio_from_pools(&phones, &within, &between, 500, 4).unwrap();
        let b = f_ratio_from_pools(&phones, &within, &between, 500, 4).unwrap();
        assert_eq!(a, b);
        let mut within2 = within.clone();
        within2[1].truncate(10);
        let c = f_ratio_from_pools(&phones, &within2, &between, 500, 4).unwrap();
        assert_eq!(a.rows[0], c.rows[0]);
        assert_eq!(a.rows[2], c.rows[2]);
        assert!(!c.rows[1].included);
    }

    #[test]
    fn f_ratio_needs_some_pool() {
        let phones = vec!["AA".to_string()];
        assert!(f_ratio_from_pools(&phones, &[vec![]], &[vec![0.1]], 500, 0).is_err());
    }

    #[test]
    fn explanation_round_trip() {
        let phones: Vec<String> = PhoneInventory::cmu().labels().to_vec();
        let mut values = vec![None; 40];
        values[2] = Some(0.958);
        values[5] = Some(0.959);
        values[22] = Some(0.973);
        let r = record(0.81, values, true);
        let text = format_explanation(&r, &phones).unwrap();
        assert!(text.contains("2\tAH\t0.958\n"));
        assert!(text.contains("39\t[N-V]\tNA\n"));
        let (back, p) = parse_explanation(&text, "x").unwrap();
        assert_eq!(back, r);
        assert_eq!(p, phones);

        let none = record(-0.258, vec![None; 40], false);
        let text = format_explanation(&none, &phones).unwrap();
        assert!(text.contains("evidence\tNA\n"));
        assert_eq!(text.matches("\tNA\n").count(), 41);
        assert_eq!(parse_explanation(&text, "x").unwrap().0, none);
    }
}
