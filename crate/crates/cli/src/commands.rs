use std::fmt::Display;
use std::path::Path;

use phonetrait::analysis::{evaluate, f_ratio, format_explanation};
use phonetrait::config::RunConfig;
use phonetrait::corpus::{generate_corpus, make_trials, Corpus, CorpusConfig, PhoneInventory, CMU_PHONES};
use phonetrait::formats::{load_corpus_dir, load_trials, save_corpus_dir, save_trials};
use phonetrait::losses::{LossTerms, LossWeights};
use phonetrait::model::{load_checkpoint, save_checkpoint, ModelState};
use phonetrait::scoring::{load_scores, save_scores, score_trials};
use phonetrait::training::{format_loss_log, grad_check, random_selection, train_with, Architecture};
use phonetrait::{write_atomic, Error};

use crate::{Cli, Command, EvalArgs, ExplainArgs, FratioArgs, GenCorpusArgs, GradcheckArgs, ScoreArgs, TrainArgs};

pub const CONFIG_ECHO: &str = "config.txt";

/// A failed command: process exit code and the single stderr line.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub line: String,
}

pub const EXIT_CONFIG: u8 = 3;
pub const EXIT_IO: u8 = 4;
pub const EXIT_PARSE: u8 = 5;
pub const EXIT_DATA: u8 = 6;
pub const EXIT_NUMERIC: u8 = 7;
pub const EXIT_GRADCHECK: u8 = 8;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Io { .. } => EXIT_IO,
        Error::Parse { .. } => EXIT_PARSE,
        Error::Numeric(_) | Error::Diverged { .. } => EXIT_NUMERIC,
        Error::Dimension(_)
        | Error::EmptyUtterance(_)
        | Error::Batch(_)
        | Error::UndefinedEvidence { .. }
        | Error::InsufficientData(_)
        | Error::MissingUtterance(_) => EXIT_DATA,
    }
}

fn one_line(s: impl Display) -> String {
    s.to_string().replace(['\n', '\r'], " ").replace('"', "'")
}

fn fail(kind: &str, code: u8, file: Option<&Path>, msg: impl Display) -> CliError {
    let file = file.map(|f| format!(" file=\"{}\"", one_line(f.display()))).unwrap_or_default();
    CliError {
        code,
        line: format!("error: kind={kind} code={code}{file} msg=\"{}\"", one_line(msg)),
    }
}

/// Wraps a library error, naming the input it came from.
fn lib_err(file: Option<&Path>) -> impl Fn(Error) -> CliError + '_ {
    move |e| fail(e.kind(), exit_code(&e), file, &e)
}

type CliResult<T> = std::result::Result<T, CliError>;

pub fn run(cli: &Cli) -> CliResult<()> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg = RunConfig::load(path).map_err(lib_err(Some(path)))?;
    }
    for item in &cli.overrides {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| fail("config", EXIT_CONFIG, None, format!("--set expects KEY=VALUE, got {item:?}")))?;
        cfg.set(k.trim(), v).map_err(lib_err(None))?;
    }
    let out = cli.out_dir.as_path();
    match &cli.command {
        Command::GenCorpus(a) => gen_corpus(apply_gen(cfg, a, cli.seed)?, out),
        Command::Train(a) => train(apply_train(cfg, a, cli.seed)?, a, out),
        Command::Score(a) => score(with_seed(cfg, cli.seed), a, out),
        Command::Eval(a) => eval(apply_eval(cfg, a, cli.seed)?, a, out),
        Command::Fratio(a) => fratio(apply_fratio(cfg, a, cli.seed), a, out),
        Command::Explain(a) => explain(with_seed(cfg, cli.seed), a, out),
        Command::Gradcheck(a) => gradcheck(apply_gradcheck(cfg, a, cli.seed), a, out),
    }
}

fn with_seed(mut cfg: RunConfig, seed: Option<u64>) -> RunConfig {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg
}

fn set_opt<T: ToString>(cfg: &mut RunConfig, key: &str, v: &Option<T>) -> CliResult<()> {
    if let Some(v) = v {
        cfg.set(key, &v.to_string()).map_err(lib_err(None))?;
    }
    Ok(())
}

fn apply_gen(mut cfg: RunConfig, a: &GenCorpusArgs, seed: Option<u64>) -> CliResult<RunConfig> {
    set_opt(&mut cfg, "corpus.n_speakers", &a.n_speakers)?;
    set_opt(&mut cfg, "corpus.utts_per_speaker", &a.utts_per_speaker)?;
    set_opt(&mut cfg, "corpus.eval_speakers", &a.eval_speakers)?;
    set_opt(&mut cfg, "corpus.feature_dim", &a.feature_dim)?;
    set_opt(&mut cfg, "corpus.noise_std", &a.noise_std)?;
    set_opt(&mut cfg, "trials.n_target", &a.n_target)?;
    set_opt(&mut cfg, "trials.n_nontarget", &a.n_nontarget)?;
    set_opt(&mut cfg, "fratio.trials", &a.fratio_trials)?;
    Ok(with_seed(cfg, seed))
}

fn apply_train(mut cfg: RunConfig, a: &TrainArgs, seed: Option<u64>) -> CliResult<RunConfig> {
    set_opt(&mut cfg, "train.k", &a.k)?;
    set_opt(&mut cfg, "train.epochs", &a.epochs)?;
    set_opt(&mut cfg, "train.learning_rate", &a.learning_rate)?;
    set_opt(&mut cfg, "train.momentum", &a.momentum)?;
    set_opt(&mut cfg, "train.alpha", &a.alpha)?;
    set_opt(&mut cfg, "train.beta", &a.beta)?;
    set_opt(&mut cfg, "train.gamma", &a.gamma)?;
    set_opt(&mut cfg, "train.aam_margin", &a.aam_margin)?;
    set_opt(&mut cfg, "train.aam_scale", &a.aam_scale)?;
    set_opt(&mut cfg, "model.encoder_layers", &a.encoder_layers)?;
    set_opt(&mut cfg, "model.embedding_dim", &a.embedding_dim)?;
    Ok(with_seed(cfg, seed))
}

fn apply_eval(mut cfg: RunConfig, a: &EvalArgs, seed: Option<u64>) -> CliResult<RunConfig> {
    set_opt(&mut cfg, "eval.p_target", &a.p_target)?;
    set_opt(&mut cfg, "eval.c_miss", &a.c_miss)?;
    set_opt(&mut cfg, "eval.c_fa", &a.c_fa)?;
    Ok(with_seed(cfg, seed))
}

fn apply_fratio(mut cfg: RunConfig, a: &FratioArgs, seed: Option<u64>) -> RunConfig {
    if let Some(s) = a.samples {
        cfg.fratio_samples = s;
    }
    with_seed(cfg, seed)
}

fn apply_gradcheck(mut cfg: RunConfig, a: &GradcheckArgs, seed: Option<u64>) -> RunConfig {
    if let Some(s) = a.step {
        cfg.gradcheck_step = s;
    }
    if let Some(t) = a.tolerance {
        cfg.gradcheck_tolerance = t;
    }
    if let Some(k) = a.k {
        cfg.gradcheck_k = k;
    }
    with_seed(cfg, seed)
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    write_atomic(path, text.as_bytes()).map_err(lib_err(Some(path)))
}

fn echo_config(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    write(&out.join(CONFIG_ECHO), &cfg.to_key_value())
}

fn validate(cfg: &RunConfig, inv: &PhoneInventory) -> CliResult<()> {
    cfg.validate(inv).map_err(lib_err(None))
}

fn require_dir(dir: &Path) -> CliResult<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(fail("io", EXIT_IO, Some(dir), "not a directory"))
    }
}

fn require_file(file: &Path) -> CliResult<()> {
    if file.is_file() {
        Ok(())
    } else {
        Err(fail("io", EXIT_IO, Some(file), "no such file"))
    }
}

fn load_corpus(dir: &Path) -> CliResult<Corpus> {
    require_dir(dir)?;
    load_corpus_dir(dir).map_err(lib_err(Some(dir)))
}

pub const TRAIN_DIR: &str = "train";
pub const EVAL_DIR: &str = "eval";
pub const TRIALS_FILE: &str = "trials.txt";
pub const FRATIO_TRIALS_FILE: &str = "fratio_trials.txt";

/// Offset between the evaluation trial seed and the F-ratio trial seed.
const FRATIO_TRIAL_SEED_OFFSET: u64 = 1;

fn gen_corpus(cfg: RunConfig, out: &Path) -> CliResult<()> {
    let inv = PhoneInventory::cmu();
    validate(&cfg, &inv)?;
    let full_cfg = cfg.full_corpus_config(&inv).map_err(lib_err(None))?;
    let full = generate_corpus(&inv, &full_cfg).map_err(lib_err(None))?;
    let (train_c, eval_c) = full.split_speakers(cfg.corpus.n_speakers).map_err(lib_err(None))?;
    save_corpus_dir(&out.join(TRAIN_DIR), &train_c).map_err(lib_err(Some(&out.join(TRAIN_DIR))))?;
    if cfg.eval_speakers > 0 {
        let eval_dir = out.join(EVAL_DIR);
        save_corpus_dir(&eval_dir, &eval_c).map_err(lib_err(Some(&eval_dir)))?;
        let trials = make_trials(&eval_c, cfg.n_target_trials, cfg.n_nontarget_trials, cfg.seed)
            .map_err(lib_err(Some(&eval_dir)))?;
        let path = out.join(TRIALS_FILE);
        save_trials(&path, &trials).map_err(lib_err(Some(&path)))?;
        let ft = make_trials(
            &eval_c,
            cfg.fratio_trials,
            cfg.fratio_trials,
            cfg.seed.wrapping_add(FRATIO_TRIAL_SEED_OFFSET),
        )
        .map_err(lib_err(Some(&eval_dir)))?;
        let path = out.join(FRATIO_TRIALS_FILE);
        save_trials(&path, &ft).map_err(lib_err(Some(&path)))?;
    }
    echo_config(&cfg, out)?;
    println!(
        "wrote {} training and {} evaluation utterances to {}",
        train_c.len(),
        eval_c.len(),
        out.display()
    );
    Ok(())
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("ckpt_epoch{epoch}.json")
}

pub const LOSS_LOG: &str = "loss_log.csv";

fn train(cfg: RunConfig, a: &TrainArgs, out: &Path) -> CliResult<()> {
    let corpus = load_corpus(&a.corpus)?;
    validate(&cfg, &corpus.inventory)?;
    if a.checkpoint_every == 0 {
        return Err(fail("config", EXIT_CONFIG, None, "--checkpoint-every must be >= 1"));
    }
    let tc = cfg.train_config();
    let epochs = tc.epochs;
    let every = a.checkpoint_every;
    let (model, history) = train_with(&corpus, &cfg.arch, &tc, |epoch, m| {
        if epoch % every == 0 || epoch == epochs {
            save_checkpoint(&out.join(checkpoint_name(epoch)), m)?;
        }
        Ok(())
    })
    .map_err(lib_err(Some(&a.corpus)))?;
    write(&out.join(LOSS_LOG), &format_loss_log(&history))?;
    echo_config(&cfg, out)?;
    let last = history.last().map_or(f64::NAN, |r| r.loss.all);
    println!(
        "trained {} steps, final loss {last}; checkpoint {}",
        model.step,
        out.join(checkpoint_name(epochs)).display()
    );
    Ok(())
}

fn load_model(path: &Path) -> CliResult<ModelState> {
    require_file(path)?;
    load_checkpoint(path, None).map_err(lib_err(Some(path)))
}

fn score(cfg: RunConfig, a: &ScoreArgs, out: &Path) -> CliResult<()> {
    let model = load_model(&a.checkpoint)?;
    let corpus = load_corpus(&a.corpus)?;
    require_file(&a.trials)?;
    let trials = load_trials(&a.trials).map_err(lib_err(Some(&a.trials)))?;
    if corpus.inventory.len() != model.config.n_phones || corpus.feature_dim() != model.config.encoder.input_dim {
        return Err(fail(
            "dimension",
            EXIT_DATA,
            Some(&a.corpus),
            format!(
                "corpus has {} phones and {} features, checkpoint expects {} and {}",
                corpus.inventory.len(),
                corpus.feature_dim(),
                model.config.n_phones,
                model.config.encoder.input_dim
            ),
        ));
    }
    let records = score_trials(&model, &corpus, &trials).map_err(lib_err(Some(&a.trials)))?;
    let path = out.join(&a.output);
    save_scores(&path, &records, corpus.inventory.labels()).map_err(lib_err(Some(&path)))?;
    echo_config(&cfg, out)?;
    println!("scored {} trials into {}", records.len(), path.display());
    Ok(())
}

pub const METRICS_TXT: &str = "metrics.txt";
pub const METRICS_CSV: &str = "metrics.csv";

fn eval(cfg: RunConfig, a: &EvalArgs, out: &Path) -> CliResult<()> {
    cfg.dcf.validate().map_err(lib_err(None))?;
    require_file(&a.scores)?;
    let (_, records) = load_scores(&a.scores).map_err(lib_err(Some(&a.scores)))?;
    let report = evaluate(&records, &cfg.dcf).map_err(lib_err(Some(&a.scores)))?;
    write(&out.join(METRICS_TXT), &report.to_key_value())?;
    write(&out.join(METRICS_CSV), &report.to_csv())?;
    echo_config(&cfg, out)?;
    print!("{}", report.to_key_value());
    Ok(())
}

pub const FRATIO_CSV: &str = "fratio.csv";

fn fratio(cfg: RunConfig, a: &FratioArgs, out: &Path) -> CliResult<()> {
    require_file(&a.scores)?;
    let (phones, records) = load_scores(&a.scores).map_err(lib_err(Some(&a.scores)))?;
    let report = f_ratio(&records, &phones, cfg.fratio_samples, cfg.seed).map_err(lib_err(Some(&a.scores)))?;
    write(&out.join(FRATIO_CSV), &report.to_csv())?;
    echo_config(&cfg, out)?;
    let excluded: Vec<&str> = report.excluded().map(|r| r.phone.as_str()).collect();
    println!(
        "{} phones included, excluded: {}",
        report.included().count(),
        if excluded.is_empty() { "none".to_string() } else { excluded.join(" ") }
    );
    Ok(())
}

pub fn explanation_name(enroll: &str, test: &str) -> String {
    let clean = |s: &str| s.replace(|c: char| !(c.is_ascii_alphanumeric() || c == '-' || c == '_'), "_");
    format!("explain_{}__{}.tsv", clean(enroll), clean(test))
}

fn explain(cfg: RunConfig, a: &ExplainArgs, out: &Path) -> CliResult<()> {
    require_file(&a.scores)?;
    let (phones, records) = load_scores(&a.scores).map_err(lib_err(Some(&a.scores)))?;
    let record = match (&a.enroll, &a.test) {
        (Some(e), Some(t)) => records.iter().find(|r| &r.enroll == e && &r.test == t).ok_or_else(|| {
            fail("missing-utterance", EXIT_DATA, Some(&a.scores), format!("no trial {e} {t}"))
        })?,
        _ => records.get(a.trial).ok_or_else(|| {
            fail(
                "missing-utterance",
                EXIT_DATA,
                Some(&a.scores),
                format!("trial {} out of range ({} trials)", a.trial, records.len()),
            )
        })?,
    };
    let path = out.join(explanation_name(&record.enroll, &record.test));
    write(&path, &format_explanation(record, &phones).map_err(lib_err(Some(&a.scores)))?)?;
    echo_config(&cfg, out)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub const GRADCHECK_REPORT: &str = "gradcheck.txt";

/// Small random corpus for gradient checking: F=5, 6 phones, about 20 frames
/// per utterance.
pub fn gradcheck_corpus(seed: u64) -> phonetrait::Result<Corpus> {
    let inv = PhoneInventory::new(CMU_PHONES[..6].iter().map(|s| s.to_string()).collect())?;
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
    generate_corpus(&inv, &cfg)
}

/// Architecture of the gradient-check model: D1=8, D2=4.
pub fn gradcheck_architecture() -> Architecture {
    Architecture {
        encoder_layers: "-1,0,1:8:relu;0:8:identity".into(),
        embedding_dim: 4,
    }
}

fn gradcheck(cfg: RunConfig, a: &GradcheckArgs, out: &Path) -> CliResult<()> {
    let corpus = match &a.corpus {
        Some(dir) => load_corpus(dir)?,
        None => gradcheck_corpus(cfg.seed).map_err(lib_err(None))?,
    };
    let arch = if a.corpus.is_some() { cfg.arch.clone() } else { gradcheck_architecture() };
    let model_cfg = arch.model_config(&corpus).map_err(lib_err(None))?;
    let model = ModelState::init(&model_cfg, cfg.seed).map_err(lib_err(None))?;
    let sel = random_selection(&corpus, cfg.gradcheck_k, cfg.seed).map_err(lib_err(None))?;
    let weights = if a.unit_weights {
        LossWeights { alpha: 1.0, beta: 1.0, gamma: 1.0 }
    } else {
        cfg.train.weights
    };
    let mut text = String::new();
    let mut passed = true;
    for (name, terms) in [
        ("aam", LossTerms::AAM),
        ("veri", LossTerms::VERI),
        ("center", LossTerms::CENTER),
        ("all", LossTerms::ALL),
    ] {
        let report = grad_check(
            &model,
            &corpus,
            &sel,
            &weights,
            &cfg.train.aam,
            terms,
            cfg.gradcheck_step,
            cfg.gradcheck_tolerance,
        )
        .map_err(lib_err(None))?;
        passed &= report.passed();
        text.push_str(&format!("[loss={name}]\n{}\n", report.to_text()));
    }
    text.push_str(&format!("overall={}\n", if passed { "pass" } else { "FAIL" }));
    let path = out.join(GRADCHECK_REPORT);
    write(&path, &text)?;
    echo_config(&cfg, out)?;
    println!("gradcheck {}; report {}", if passed { "passed" } else { "FAILED" }, path.display());
    if passed {
        Ok(())
    } else {
        Err(fail("gradcheck", EXIT_GRADCHECK, Some(&path), "analytic gradients disagree with finite differences"))
    }
}
