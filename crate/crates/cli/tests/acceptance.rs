//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line per criterion; exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use phonetrait::analysis::{
    compute_eer, compute_min_dcf, evaluate, f_ratio, DcfParams, EvalReport, FRatioReport,
};
use phonetrait::config::RunConfig;
use phonetrait::corpus::{
    generate_corpus, make_trials, Corpus, CorpusConfig, PhoneAlignment, PhoneInventory, Segment, UtteranceFeatures,
    CMU_PHONES,
};
use phonetrait::encoder::{encode_frames, init_params, EncoderConfig, FrameEmbeddingSequence};
use phonetrait::losses::{LossTerms, LossWeights};
use phonetrait::model::ModelState;
use phonetrait::scoring::{evidence_score, evidence_score_checked, score_trials, trait_similarity_vector, ScoreRecord};
use phonetrait::trait_layer::{
    extract_traits, filter_traits, forward_utterance, pool_and_project, PhoneticTraitSet, ProjectionParams,
};
use phonetrait::training::{epoch_means, grad_check, random_selection, train, Architecture, LossRecord};
use phonetrait::Error;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, ok: String, bad: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(bad)
    }
}

// ------------------------------------------------------------------ 1

fn small_corpus(seed: u64) -> Corpus {
    let inv = PhoneInventory::new(CMU_PHONES[..6].iter().map(|s| s.to_string()).collect()).unwrap();
    let cfg = CorpusConfig {
        n_speakers: 4,
        utts_per_speaker: 2,
        feature_dim: 5,
        segment_length: (3, 5),
        phones_per_utt: (4, 6),
        noise_std: 0.3,
        seed,
        ..CorpusConfig::default()
    };
    generate_corpus(&inv, &cfg).unwrap()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let arch = Architecture {
        encoder_layers: "-1,0,1:8:relu;0:8:identity".into(),
        embedding_dim: 4,
    };
    let unit = LossWeights { alpha: 1.0, beta: 1.0, gamma: 1.0 };
    let cases = [
        ("aam", LossTerms::AAM, unit),
        ("veri", LossTerms::VERI, unit),
        ("center", LossTerms::CENTER, unit),
        ("all(unit)", LossTerms::ALL, unit),
        ("all(standard)", LossTerms::ALL, LossWeights::STANDARD),
    ];
    let mut worst: f64 = 0.0;
    let mut frames = 0usize;
    let mut failures = Vec::new();
    for seed in 0..3u64 {
        let corpus = small_corpus(seed);
        frames += corpus.utterances.iter().map(|u| u.num_frames()).sum::<usize>();
        let model = ModelState::init(&arch.model_config(&corpus).unwrap(), seed + 100).unwrap();
        if model.config.trait_dim() != 8 || model.config.n_phones != 6 {
            return Err("small model does not have D1=8, I=6".into());
        }
        let sel = random_selection(&corpus, 3, seed).unwrap();
        for (name, terms, w) in cases {
            let report = grad_check(&model, &corpus, &sel, &w, &Default::default(), terms, 1e-5, 1e-4)
                .map_err(|e| e.to_string())?;
            worst = worst.max(report.max_rel_error());
            for g in report.groups.iter().filter(|g| !g.passed) {
                failures.push(format!("seed {seed} {name} {} rel {:e}", g.name, g.max_rel_error));
            }
        }
    }
    let elapsed = start.elapsed();
    let mean_t = frames as f64 / 24.0;
    if elapsed > Duration::from_secs(60) {
        failures.push(format!("runtime {elapsed:?} > 60 s"));
    }
    check(
        failures.is_empty(),
        format!("max rel error {worst:.2e} over 3 models x 5 losses x 7 groups, mean T {mean_t:.1}, {elapsed:.1?}"),
        failures.join("; "),
    )
}

// ------------------------------------------------------------------ 2

fn random_alignment(rng: &mut ChaCha8Rng, id: &str, n_phones: usize) -> PhoneAlignment {
    let n_seg = rng.random_range(1..=25);
    let mut t = 0;
    let segments = (0..n_seg)
        .map(|_| {
            let len = rng.random_range(1..=6);
            let s = Segment {
                start: t,
                end: t + len,
                phone: rng.random_range(0..n_phones),
            };
            t += len;
            s
        })
        .collect();
    PhoneAlignment {
        utterance_id: id.into(),
        segments,
    }
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n_phones = 40;
    let mut worst: f64 = 0.0;
    for u in 0..100 {
        let align = random_alignment(&mut rng, &format!("u{u}"), n_phones);
        let t_len = align.num_frames();
        let d = rng.random_range(1..=10);
        let frames = FrameEmbeddingSequence {
            utterance_id: align.utterance_id.clone(),
            embeddings: Array2::from_shape_fn((t_len, d), |_| rng.random_range(-2.0..2.0)),
        };
        let ts = extract_traits(&frames, &align, n_phones).map_err(|e| e.to_string())?;
        ts.validate().map_err(|e| e.to_string())?;
        // naive group-by over frames
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for s in &align.segments {
            groups.entry(s.phone).or_default().extend(s.start..s.end);
        }
        for i in 0..n_phones {
            match groups.get(&i) {
                None => {
                    if ts.present[i] || ts.traits.row(i).iter().any(|v| *v != 0.0) {
                        return Err(format!("utterance {u}: absent phone {i} not zero"));
                    }
                }
                Some(idx) => {
                    for j in 0..d {
                        let naive = idx.iter().map(|&f| frames.embeddings[[f, j]]).sum::<f64>() / idx.len() as f64;
                        worst = worst.max((naive - ts.traits[[i, j]]).abs());
                    }
                }
            }
        }
    }
    check(
        worst <= 1e-12,
        format!("100 utterances, max |diff| {worst:.2e}"),
        format!("max |diff| {worst:e} > 1e-12"),
    )
}

// ------------------------------------------------------------------ 3

/// Moves whole segments to new positions, keeping their frames attached.
fn permute_segments(
    frames: &Array2<f64>,
    align: &PhoneAlignment,
    order: &[usize],
) -> (Array2<f64>, PhoneAlignment) {
    let mut out = Array2::zeros(frames.dim());
    let mut segments = Vec::new();
    let mut t = 0;
    for &k in order {
        let s = &align.segments[k];
        for (dst, src) in (t..).zip(s.start..s.end) {
            out.row_mut(dst).assign(&frames.row(src));
        }
        segments.push(Segment {
            start: t,
            end: t + s.len(),
            phone: s.phone,
        });
        t += s.len();
    }
    (
        out,
        PhoneAlignment {
            utterance_id: align.utterance_id.clone(),
            segments,
        },
    )
}

/// Permutation that only reorders segments sharing a label among themselves.
fn same_label_shuffle(align: &PhoneAlignment, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, s) in align.segments.iter().enumerate() {
        by_label.entry(s.phone).or_default().push(k);
    }
    for v in by_label.values_mut() {
        v.shuffle(rng);
    }
    let mut cursor: BTreeMap<usize, usize> = BTreeMap::new();
    align
        .segments
        .iter()
        .map(|s| {
            let c = cursor.entry(s.phone).or_default();
            *c += 1;
            by_label[&s.phone][*c - 1]
        })
        .collect()
}

fn embedding_from_frames(
    frames: &Array2<f64>,
    align: &PhoneAlignment,
    n_phones: usize,
    proj: &ProjectionParams,
) -> phonetrait::Result<(Array1<f64>, PhoneticTraitSet)> {
    let seq = FrameEmbeddingSequence {
        utterance_id: align.utterance_id.clone(),
        embeddings: frames.clone(),
    };
    let ts = extract_traits(&seq, align, n_phones)?;
    ts.validate()?;
    let (filtered, _) = filter_traits(&ts)?;
    Ok((pool_and_project(filtered.view(), proj)?, ts))
}

fn max_diff(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inv = PhoneInventory::cmu();
    let extended = inv.extended(&["X1", "X2", "X3", "X4", "X5"]).map_err(|e| e.to_string())?;
    let corpus = generate_corpus(
        &inv,
        &CorpusConfig {
            n_speakers: 5,
            utts_per_speaker: 6,
            seed: 3,
            ..CorpusConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let enc_cfg = EncoderConfig::default_for(corpus.feature_dim(), 16, 8);
    let enc = init_params(&enc_cfg, 4).map_err(|e| e.to_string())?;
    let local = init_params(
        &EncoderConfig::from_layer_string(corpus.feature_dim(), "0:16:relu;0:8:identity").unwrap(),
        5,
    )
    .map_err(|e| e.to_string())?;
    let proj = ProjectionParams::init(8, 6, 6).map_err(|e| e.to_string())?;

    let (mut worst_inv, mut worst_perm, mut worst_local) = (0.0f64, 0.0f64, 0.0f64);
    let mut n_sets = 0usize;
    for (feats, align) in corpus.utterances.iter().zip(&corpus.alignments) {
        // absent phones appended to the inventory
        let (e40, t40) = forward_utterance(&enc, &proj, feats, align, inv.len()).map_err(|e| e.to_string())?;
        let (e45, t45) = forward_utterance(&enc, &proj, feats, align, extended.len()).map_err(|e| e.to_string())?;
        t40.validate().map_err(|e| e.to_string())?;
        t45.validate().map_err(|e| e.to_string())?;
        n_sets += 2;
        if t45.present[inv.len()..].iter().any(|p| *p) {
            return Err("appended phones reported present".into());
        }
        worst_inv = worst_inv.max(max_diff(&e40.vector, &e45.vector));

        // same-label segment order, on frame embeddings
        let frames = encode_frames(&enc, feats).map_err(|e| e.to_string())?;
        let order = same_label_shuffle(align, &mut rng);
        let (pf, pa) = permute_segments(&frames.embeddings, align, &order);
        let (a, ta) = embedding_from_frames(&frames.embeddings, align, inv.len(), &proj).map_err(|e| e.to_string())?;
        let (b, tb) = embedding_from_frames(&pf, &pa, inv.len(), &proj).map_err(|e| e.to_string())?;
        n_sets += 2;
        worst_perm = worst_perm.max(max_diff(&a, &b));
        if ta.present != tb.present {
            return Err("permutation changed the present mask".into());
        }

        // and end to end through a frame-local encoder, permuting raw features
        let (pfeat, pa) = permute_segments(&feats.features, align, &order);
        let moved = UtteranceFeatures {
            features: pfeat,
            ..feats.clone()
        };
        let (x, tx) = forward_utterance(&local, &proj, feats, align, inv.len()).map_err(|e| e.to_string())?;
        let (y, ty) = forward_utterance(&local, &proj, &moved, &pa, inv.len()).map_err(|e| e.to_string())?;
        tx.validate().map_err(|e| e.to_string())?;
        ty.validate().map_err(|e| e.to_string())?;
        n_sets += 2;
        worst_local = worst_local.max(max_diff(&x.vector, &y.vector));
    }
    let worst = worst_inv.max(worst_perm).max(worst_local);
    check(
        worst <= 1e-12,
        format!(
            "inventory extension {worst_inv:.1e}, segment permutation {worst_perm:.1e} / {worst_local:.1e}; mask <=> nonzero held for {n_sets} trait sets"
        ),
        format!("embedding change {worst:e} > 1e-12"),
    )
}

// ------------------------------------------------------------------ 4

fn random_trait_set(rng: &mut ChaCha8Rng, id: &str, n_phones: usize, d: usize, p: f64) -> PhoneticTraitSet {
    let present: Vec<bool> = (0..n_phones).map(|_| rng.random_bool(p)).collect();
    let traits = Array2::from_shape_fn((n_phones, d), |(i, _)| {
        if present[i] {
            rng.random_range(-1.0..1.0)
        } else {
            0.0
        }
    });
    PhoneticTraitSet {
        utterance_id: id.into(),
        traits,
        present,
    }
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut n_defined, mut n_undefined) = (0, 0);
    for k in 0..1000 {
        let p = [0.05, 0.3, 0.7][k % 3];
        let e = random_trait_set(&mut rng, "e", 40, 6, p);
        let t = random_trait_set(&mut rng, "t", 40, 6, p);
        let s = trait_similarity_vector(&e, &t).map_err(|e| e.to_string())?;
        let (mut sum, mut n) = (0.0, 0usize);
        for i in 0..40 {
            if e.present[i] && t.present[i] {
                let (a, b) = (e.traits.row(i), t.traits.row(i));
                let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                sum += dot / (na * nb);
                n += 1;
            }
        }
        if n == 0 {
            n_undefined += 1;
            if evidence_score(&s).is_some() {
                return Err(format!("pair {k}: no shared phones but evidence defined"));
            }
            match evidence_score_checked(&s, "e", "t") {
                Err(Error::UndefinedEvidence { .. }) => {}
                other => return Err(format!("pair {k}: expected undefined-evidence error, got {other:?}")),
            }
        } else {
            n_defined += 1;
            let oracle = sum / n as f64;
            let got = evidence_score(&s).ok_or("evidence missing")?;
            if got != oracle {
                return Err(format!("pair {k}: evidence {got} != oracle {oracle}"));
            }
        }
    }
    check(
        n_undefined > 0 && n_defined > 0,
        format!("{n_defined} exact matches, {n_undefined} undefined-evidence errors"),
        "random pairs did not cover both cases".into(),
    )
}

// ------------------------------------------------------------------ 5

/// Independent sweep: every candidate threshold counted from scratch.
fn sweep_oracle(scores: &[(f64, bool)], p: &DcfParams) -> (f64, f64) {
    let mut th: Vec<f64> = scores.iter().map(|s| s.0).collect();
    th.sort_by(f64::total_cmp);
    th.dedup();
    th.push(f64::INFINITY);
    let nt = scores.iter().filter(|s| s.1).count() as f64;
    let nn = scores.len() as f64 - nt;
    let rates: Vec<(f64, f64)> = th
        .iter()
        .map(|&t| {
            let miss = scores.iter().filter(|s| s.1 && s.0 < t).count() as f64 / nt;
            let fa = scores.iter().filter(|s| !s.1 && s.0 >= t).count() as f64 / nn;
            (miss, fa)
        })
        .collect();
    let j = rates.iter().position(|(m, f)| m >= f).unwrap();
    let eer = if j == 0 {
        rates[0].0
    } else {
        let d0 = rates[j - 1].1 - rates[j - 1].0;
        let d1 = rates[j].1 - rates[j].0;
        let t = d0 / (d0 - d1);
        rates[j - 1].0 + t * (rates[j].0 - rates[j - 1].0)
    };
    let norm = (p.c_miss * p.p_target).min(p.c_fa * (1.0 - p.p_target));
    let dcf = rates
        .iter()
        .map(|(m, f)| (p.c_miss * p.p_target * m + p.c_fa * (1.0 - p.p_target) * f) / norm)
        .fold(f64::INFINITY, f64::min);
    (eer, dcf)
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = [
        DcfParams::default(),
        DcfParams {
            p_target: 0.05,
            c_miss: 10.0,
            c_fa: 1.0,
        },
    ];
    for round in 0..20 {
        let scores: Vec<(f64, bool)> = (0..200)
            .map(|_| {
                let target = rng.random_bool(0.5);
                let s: f64 = rng.random_range(-1.0..1.0) + if target { 0.5 } else { 0.0 };
                // coarse rounding produces ties
                let s = if round % 2 == 0 { (s * 20.0).round() / 20.0 } else { s };
                (s, target)
            })
            .collect();
        for p in &params {
            let (eer_o, dcf_o) = sweep_oracle(&scores, p);
            let eer = compute_eer(&scores).map_err(|e| e.to_string())?.0;
            let dcf = compute_min_dcf(&scores, p).map_err(|e| e.to_string())?;
            if eer != eer_o || dcf != dcf_o {
                return Err(format!(
                    "round {round}: eer {eer} vs {eer_o}, minDCF {dcf} vs {dcf_o}"
                ));
            }
        }
    }
    let hand: Vec<(f64, bool)> = [(0.9, true), (0.7, true), (0.3, true), (0.6, false), (0.2, false), (0.1, false)].to_vec();
    let eer = compute_eer(&hand).map_err(|e| e.to_string())?.0;
    check(
        eer == 1.0 / 3.0,
        format!("20 random 200-trial sets match the sweep oracle exactly; hand case EER {eer}"),
        format!("hand case EER {eer} != 1/3"),
    )
}

// ------------------------------------------------------------------ 6-8

struct Experiment {
    cfg: RunConfig,
    snr: f64,
    eval_corpus: Corpus,
    full_history: Vec<LossRecord>,
    full_model: ModelState,
    full_report: EvalReport,
    zero_report: EvalReport,
    elapsed: Duration,
}

fn run_experiment() -> Result<Experiment, String> {
    let start = Instant::now();
    let cfg = RunConfig::default();
    let inv = PhoneInventory::cmu();
    let full = generate_corpus(&inv, &cfg.full_corpus_config(&inv).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let (train_c, eval_c) = full.split_speakers(cfg.corpus.n_speakers).map_err(|e| e.to_string())?;
    let norms: Vec<f64> = train_c
        .profiles
        .iter()
        .flat_map(|p| p.signatures.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect::<Vec<_>>())
        .collect();
    let snr = norms.iter().sum::<f64>() / norms.len() as f64 / cfg.corpus.noise_std;
    let trials = make_trials(&eval_c, cfg.n_target_trials, cfg.n_nontarget_trials, cfg.seed).map_err(|e| e.to_string())?;

    let run = |weights: LossWeights| -> Result<(ModelState, Vec<LossRecord>, EvalReport), String> {
        let tc = phonetrait::training::TrainConfig {
            weights,
            ..cfg.train_config()
        };
        let (m, h) = train(&train_c, &cfg.arch, &tc).map_err(|e| e.to_string())?;
        let recs = score_trials(&m, &eval_c, &trials).map_err(|e| e.to_string())?;
        let rep = evaluate(&recs, &cfg.dcf).map_err(|e| e.to_string())?;
        Ok((m, h, rep))
    };
    let (full_model, full_history, full_report) = run(cfg.train.weights)?;
    let (_, _, zero_report) = run(LossWeights::ZERO)?;
    Ok(Experiment {
        snr,
        eval_corpus: eval_c,
        full_history,
        full_model,
        full_report,
        zero_report,
        elapsed: start.elapsed(),
        cfg,
    })
}

fn criterion_6(x: &Experiment) -> Outcome {
    let c = &x.cfg;
    let r = &x.full_report;
    let trials = r.final_metrics.n_target + r.final_metrics.n_nontarget;
    let mut bad = Vec::new();
    if c.corpus.n_speakers != 20 || c.corpus.utts_per_speaker != 10 {
        bad.push("corpus is not 20 x 10".to_string());
    }
    if c.train.weights != LossWeights::STANDARD || c.train.epochs > 50 {
        bad.push("training config differs from the standard weights or exceeds 50 epochs".into());
    }
    if x.snr < 10.0 {
        bad.push(format!("SNR {:.2} < 10", x.snr));
    }
    if trials != 500 {
        bad.push(format!("{trials} trials"));
    }
    if r.final_metrics.eer > 0.05 {
        bad.push(format!("final EER {} > 5%", r.final_metrics.eer));
    }
    if r.evidence_metrics.eer > 0.15 {
        bad.push(format!("evidence EER {} > 15%", r.evidence_metrics.eer));
    }
    if r.correlation < 0.5 {
        bad.push(format!("correlation {} < 0.5", r.correlation));
    }
    if x.elapsed > Duration::from_secs(600) {
        bad.push(format!("runtime {:?}", x.elapsed));
    }
    check(
        bad.is_empty(),
        format!(
            "SNR {:.1}, final EER {:.2}%, evidence EER {:.2}% ({} undefined), corr {:.3}, {} epochs, {:.1?} incl. ablation",
            x.snr,
            100.0 * r.final_metrics.eer,
            100.0 * r.evidence_metrics.eer,
            r.n_evidence_undefined,
            r.correlation,
            c.train.epochs,
            x.elapsed
        ),
        bad.join("; "),
    )
}

fn criterion_7(x: &Experiment) -> Outcome {
    let means = epoch_means(&x.full_history);
    if means.len() < 10 {
        return Err(format!("only {} epochs", means.len()));
    }
    let (e1, e10) = (means[0], means[9]);
    let (full, zero) = (x.full_report.evidence_metrics.eer, x.zero_report.evidence_metrics.eer);
    let detail = format!(
        "epoch-1 mean L_all {e1:.4}, epoch-10 {e10:.4}; evidence EER full {:.2}% vs alpha=beta=gamma=0 {:.2}%",
        100.0 * full,
        100.0 * zero
    );
    check(e10 < e1 && full < zero, detail.clone(), detail)
}

fn f_ratio_report(x: &Experiment, seed: u64) -> Result<FRatioReport, String> {
    let c = &x.cfg;
    let trials = make_trials(&x.eval_corpus, c.fratio_trials, c.fratio_trials, c.seed + 1).map_err(|e| e.to_string())?;
    let records: Vec<ScoreRecord> = score_trials(&x.full_model, &x.eval_corpus, &trials).map_err(|e| e.to_string())?;
    f_ratio(&records, x.eval_corpus.inventory.labels(), c.fratio_samples, seed).map_err(|e| e.to_string())
}

fn criterion_8(x: &Experiment) -> Outcome {
    let a = f_ratio_report(x, x.cfg.seed)?;
    let b = f_ratio_report(x, x.cfg.seed)?;
    let mut bad = Vec::new();
    if a != b || a.to_csv() != b.to_csv() {
        bad.push("report not deterministic".to_string());
    }
    for r in a.included() {
        if r.ratio.is_none_or(|v| v <= 1.0) {
            bad.push(format!("{} ratio {:?}", r.phone, r.ratio));
        }
    }
    for r in &a.rows {
        if r.included != (r.n_available >= 500) {
            bad.push(format!("{} inclusion flag disagrees with {} available", r.phone, r.n_available));
        }
    }
    let excluded: Vec<String> = a.excluded().map(|r| format!("{}({})", r.phone, r.n_available)).collect();
    if excluded.is_empty() {
        bad.push("no phone excluded; the rare phone was expected to fall below 500".into());
    }
    let ratios: Vec<f64> = a.included().filter_map(|r| r.ratio).collect();
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    check(
        bad.is_empty(),
        format!(
            "{} phones included, min F-ratio {min:.3}, excluded {}; identical report on rerun",
            ratios.len(),
            excluded.join(" ")
        ),
        bad.join("; "),
    )
}

// ------------------------------------------------------------------ 9

fn cli(out: &Path, args: &[&str]) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_phonetrait"))
        .arg("--seed")
        .arg("7")
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&status.stderr).trim()))
    }
}

fn pipeline(root: &Path) -> Result<(), String> {
    let p = |s: &str| root.join(s).display().to_string();
    cli(&root.join("corpus"), &["gen-corpus"])?;
    cli(&root.join("model"), &["train", "--corpus", &p("corpus/train"), "--epochs", "12"])?;
    let ckpt = p("model/ckpt_epoch12.json");
    cli(
        &root.join("scores"),
        &["score", "--checkpoint", &ckpt, "--corpus", &p("corpus/eval"), "--trials", &p("corpus/trials.txt")],
    )?;
    cli(&root.join("report"), &["eval", "--scores", &p("scores/scores.tsv")])?;
    cli(
        &root.join("fratio"),
        &[
            "score",
            "--checkpoint",
            &ckpt,
            "--corpus",
            &p("corpus/eval"),
            "--trials",
            &p("corpus/fratio_trials.txt"),
        ],
    )?;
    cli(&root.join("fratio"), &["fratio", "--scores", &p("fratio/scores.tsv")])?;
    cli(&root.join("explain"), &["explain", "--scores", &p("scores/scores.tsv"), "--trial", "0"])?;
    cli(&root.join("gradcheck"), &["gradcheck"])
}

fn files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    pipeline(&a)?;
    pipeline(&b)?;
    let (fa, fb) = (files(&a), files(&b));
    let expected = [
        "corpus/train/features.txt",
        "corpus/eval/alignments.txt",
        "corpus/trials.txt",
        "model/ckpt_epoch12.json",
        "model/loss_log.csv",
        "scores/scores.tsv",
        "report/metrics.txt",
        "fratio/fratio.csv",
        "gradcheck/gradcheck.txt",
    ];
    if let Some(missing) = expected.iter().find(|f| !fa.contains_key(**f)) {
        return Err(format!("pipeline did not write {missing}"));
    }
    if fa.keys().ne(fb.keys()) {
        return Err("runs wrote different file sets".into());
    }
    let differing: Vec<&String> = fa.iter().filter(|(k, v)| fb[*k] != **v).map(|(k, _)| k).collect();
    let bytes: usize = fa.values().map(|v| v.len()).sum();
    check(
        differing.is_empty(),
        format!("{} files ({:.1} MB) byte-identical across two runs", fa.len(), bytes as f64 / 1e6),
        format!("differing files: {differing:?}"),
    )
}

fn main() {
    // `cargo test` passes harness flags such as --nocapture; a name filter
    // that matches nothing here skips the suite
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    if filter.as_deref().is_some_and(|f| !"acceptance".contains(f)) {
        return;
    }

    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "gradient exactness", criterion_1()),
        (2, "trait-extraction oracle", criterion_2()),
        (3, "masking/permutation invariants", criterion_3()),
        (4, "evidence-score oracle", criterion_4()),
        (5, "metric oracles", criterion_5()),
    ];
    match run_experiment() {
        Ok(x) => {
            results.push((6, "end-to-end synthetic experiment", criterion_6(&x)));
            results.push((7, "loss behaviour and ablation", criterion_7(&x)));
            results.push((8, "F-ratio property", criterion_8(&x)));
        }
        Err(e) => {
            for (n, name) in [(6, "end-to-end synthetic experiment"), (7, "loss behaviour and ablation"), (8, "F-ratio property")] {
                results.push((n, name, Err(format!("experiment failed: {e}"))));
            }
        }
    }
    results.push((9, "CLI reproducibility", criterion_9()));

    let mut failed = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(msg) => println!("PASS criterion {n} ({name}): {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}): {msg}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
