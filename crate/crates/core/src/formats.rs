//! Plain-text readers and writers for corpus files.
//!
//! | file        | line format                                          |
//! |-------------|------------------------------------------------------|
//! | inventory   | `label` (line order defines the phone index)         |
//! | alignments  | `utt_id<TAB>start_frame<TAB>end_frame<TAB>phone`     |
//! | trials      | `1\|0<TAB>enroll_utt_id<TAB>test_utt_id`             |
//! | features    | header `utt_id speaker_id T F`, then T rows of F     |
//! | trait dump  | `utt_id<TAB>phone<TAB>v_1<TAB>...<TAB>v_D1`          |
//!
//! Floats are written with Rust's shortest round-trip formatting, so saving and
//! loading reproduces every value bit for bit. Blank lines are ignored. Parse
//! errors carry the file name and 1-based line number.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::corpus::{Corpus, PhoneAlignment, PhoneInventory, Segment, Trial, TrialList, UtteranceFeatures};
use crate::error::{Error, Result};
use crate::trait_layer::PhoneticTraitSet;
use crate::util::{read_to_string, write_atomic};

pub const INVENTORY_FILE: &str = "inventory.txt";
pub const FEATURES_FILE: &str = "features.txt";
pub const ALIGNMENTS_FILE: &str = "alignments.txt";

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn parse_num<T: std::str::FromStr>(field: &str, what: &str, name: &str, line: usize) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::parse(name, line, format!("invalid {what} {field:?}")))
}

// ---------------------------------------------------------------- inventory

pub fn format_inventory(inv: &PhoneInventory) -> String {
    let mut out = String::new();
    for l in inv.labels() {
        out.push_str(l);
        out.push('\n');
    }
    out
}

pub fn parse_inventory(text: &str, name: &str) -> Result<PhoneInventory> {
    let mut labels = Vec::new();
    let mut seen = HashSet::new();
    for (line, l) in lines(text) {
        let label = l.trim();
        if label.contains(char::is_whitespace) {
            return Err(Error::parse(name, line, format!("label {label:?} contains whitespace")));
        }
        if !seen.insert(label.to_string()) {
            return Err(Error::parse(name, line, format!("duplicate label {label}")));
        }
        labels.push(label.to_string());
    }
    PhoneInventory::new(labels).map_err(|e| Error::parse(name, 0, e.to_string()))
}

pub fn save_inventory(path: &Path, inv: &PhoneInventory) -> Result<()> {
    write_atomic(path, format_inventory(inv).as_bytes())
}

pub fn load_inventory(path: &Path) -> Result<PhoneInventory> {
    parse_inventory(&read_to_string(path)?, &path.display().to_string())
}

// --------------------------------------------------------------- alignments

pub fn format_alignments(aligns: &[PhoneAlignment], inv: &PhoneInventory) -> String {
    let mut out = String::new();
    for a in aligns {
        for s in &a.segments {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                a.utterance_id,
                s.start,
                s.end,
                inv.label(s.phone)
            );
        }
    }
    out
}

/// Parses an alignment file. Segments of one utterance must be on consecutive
/// lines, in frame order, starting at frame 0 with no gaps or overlaps.
pub fn parse_alignments(text: &str, name: &str, inv: &PhoneInventory) -> Result<Vec<PhoneAlignment>> {
    let mut out: Vec<PhoneAlignment> = Vec::new();
    let mut finished: HashSet<String> = HashSet::new();
    for (line, l) in lines(text) {
        let fields: Vec<&str> = l.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                name,
                line,
                format!("expected 4 tab-separated fields, found {}", fields.len()),
            ));
        }
        let utt = fields[0].trim();
        let start: usize = parse_num(fields[1], "start frame", name, line)?;
        let end: usize = parse_num(fields[2], "end frame", name, line)?;
        let phone = inv
            .index_of(fields[3].trim())
            .ok_or_else(|| Error::parse(name, line, format!("unknown phone label {:?}", fields[3].trim())))?;
        if end <= start {
            return Err(Error::parse(name, line, format!("empty segment [{start}, {end})")));
        }
        let continuing = out.last().is_some_and(|a| a.utterance_id == utt);
        if !continuing {
            if let Some(prev) = out.last() {
                finished.insert(prev.utterance_id.clone());
            }
            if finished.contains(utt) {
                return Err(Error::parse(
                    name,
                    line,
                    format!("segments for {utt} are not on consecutive lines"),
                ));
            }
            out.push(PhoneAlignment {
                utterance_id: utt.to_string(),
                segments: Vec::new(),
            });
        }
        let align = out.last_mut().expect("pushed above");
        let expected = align.num_frames();
        if start > expected {
            return Err(Error::parse(
                name,
                line,
                format!("gap in {utt}: frames [{expected}, {start}) are not covered"),
            ));
        }
        if start < expected {
            return Err(Error::parse(
                name,
                line,
                format!("overlap in {utt}: segment starts at {start} before previous end {expected}"),
            ));
        }
        align.segments.push(Segment { start, end, phone });
    }
    Ok(out)
}

pub fn save_alignments(path: &Path, aligns: &[PhoneAlignment], inv: &PhoneInventory) -> Result<()> {
    write_atomic(path, format_alignments(aligns, inv).as_bytes())
}

pub fn load_alignments(path: &Path, inv: &PhoneInventory) -> Result<Vec<PhoneAlignment>> {
    parse_alignments(&read_to_string(path)?, &path.display().to_string(), inv)
}

// ------------------------------------------------------------------- trials

pub fn format_trials(trials: &TrialList) -> String {
    let mut out = String::new();
    for t in &trials.trials {
        let _ = writeln!(out, "{}\t{}\t{}", u8::from(t.target), t.enroll, t.test);
    }
    out
}

pub fn parse_trials(text: &str, name: &str) -> Result<TrialList> {
    let mut trials = Vec::new();
    for (line, l) in lines(text) {
        let fields: Vec<&str> = l.split('\t').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                name,
                line,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let target = match fields[0] {
            "1" => true,
            "0" => false,
            other => return Err(Error::parse(name, line, format!("label must be 1 or 0, got {other:?}"))),
        };
        if fields[1].is_empty() || fields[2].is_empty() {
            return Err(Error::parse(name, line, "empty utterance id"));
        }
        if fields[1] == fields[2] {
            return Err(Error::parse(
                name,
                line,
                format!("trial pairs utterance {} with itself", fields[1]),
            ));
        }
        trials.push(Trial {
            enroll: fields[1].to_string(),
            test: fields[2].to_string(),
            target,
        });
    }
    Ok(TrialList { trials })
}

pub fn save_trials(path: &Path, trials: &TrialList) -> Result<()> {
    write_atomic(path, format_trials(trials).as_bytes())
}

pub fn load_trials(path: &Path) -> Result<TrialList> {
    parse_trials(&read_to_string(path)?, &path.display().to_string())
}

// ----------------------------------------------------------------- features

pub fn format_features(utts: &[UtteranceFeatures]) -> String {
    let mut out = String::new();
    for u in utts {
        let (t, f) = u.features.dim();
        let _ = writeln!(out, "{} {} {} {}", u.utterance_id, u.speaker_id, t, f);
        for row in u.features.rows() {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
    }
    out
}

pub fn parse_features(text: &str, name: &str) -> Result<Vec<UtteranceFeatures>> {
    let mut out = Vec::new();
    let mut it = lines(text);
    while let Some((line, header)) = it.next() {
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 4 {
            return Err(Error::parse(
                name,
                line,
                "expected header `utt_id speaker_id T F`",
            ));
        }
        let t: usize = parse_num(h[2], "frame count", name, line)?;
        let f: usize = parse_num(h[3], "feature dimension", name, line)?;
        if t == 0 || f == 0 {
            return Err(Error::parse(name, line, format!("shape {t}x{f} must be positive")));
        }
        let mut values = Vec::with_capacity(t * f);
        for row in 0..t {
            let (rline, l) = it.next().ok_or_else(|| {
                Error::parse(name, line, format!("{}: expected {t} rows, found {row}", h[0]))
            })?;
            let before = values.len();
            for field in l.split_whitespace() {
                let v: f64 = parse_num(field, "feature value", name, rline)?;
                if !v.is_finite() {
                    return Err(Error::parse(name, rline, "non-finite feature value"));
                }
                values.push(v);
            }
            if values.len() - before != f {
                return Err(Error::parse(
                    name,
                    rline,
                    format!("expected {f} values, found {}", values.len() - before),
                ));
            }
        }
        out.push(UtteranceFeatures {
            utterance_id: h[0].to_string(),
            speaker_id: h[1].to_string(),
            features: Array2::from_shape_vec((t, f), values).expect("shape checked"),
        });
    }
    Ok(out)
}

pub fn save_features(path: &Path, utts: &[UtteranceFeatures]) -> Result<()> {
    write_atomic(path, format_features(utts).as_bytes())
}

pub fn load_features(path: &Path) -> Result<Vec<UtteranceFeatures>> {
    parse_features(&read_to_string(path)?, &path.display().to_string())
}

// --------------------------------------------------------------- trait dump

/// Present traits only, one row per (utterance, phone).
pub fn format_trait_dump(sets: &[PhoneticTraitSet], inv: &PhoneInventory) -> String {
    let mut out = String::new();
    for ts in sets {
        for (i, row) in ts.traits.rows().into_iter().enumerate() {
            if !ts.present[i] {
                continue;
            }
            let _ = write!(out, "{}\t{}", ts.utterance_id, inv.label(i));
            for v in row {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
    }
    out
}

/// Rebuilds full trait sets (absent rows zero) from a dump. `dim` is D1.
pub fn parse_trait_dump(text: &str, name: &str, inv: &PhoneInventory, dim: usize) -> Result<Vec<PhoneticTraitSet>> {
    let mut out: Vec<PhoneticTraitSet> = Vec::new();
    for (line, l) in lines(text) {
        let fields: Vec<&str> = l.split('\t').collect();
        if fields.len() != dim + 2 {
            return Err(Error::parse(
                name,
                line,
                format!("expected {} tab-separated fields, found {}", dim + 2, fields.len()),
            ));
        }
        let phone = inv
            .index_of(fields[1].trim())
            .ok_or_else(|| Error::parse(name, line, format!("unknown phone label {:?}", fields[1])))?;
        if out.last().is_none_or(|ts| ts.utterance_id != fields[0]) {
            out.push(PhoneticTraitSet {
                utterance_id: fields[0].to_string(),
                traits: Array2::zeros((inv.len(), dim)),
                present: vec![false; inv.len()],
            });
        }
        let ts = out.last_mut().expect("pushed above");
        if ts.present[phone] {
            return Err(Error::parse(name, line, format!("duplicate trait {}", fields[1])));
        }
        for (d, field) in fields[2..].iter().enumerate() {
            ts.traits[[phone, d]] = parse_num(field, "trait value", name, line)?;
        }
        if ts.traits.row(phone).iter().all(|v| *v == 0.0) {
            return Err(Error::parse(name, line, "present trait cannot be the zero vector"));
        }
        ts.present[phone] = true;
    }
    Ok(out)
}

// --------------------------------------------------------------- corpus dir

/// Writes inventory, features and alignments into `dir`.
pub fn save_corpus_dir(dir: &Path, corpus: &Corpus) -> Result<()> {
    save_inventory(&dir.join(INVENTORY_FILE), &corpus.inventory)?;
    save_features(&dir.join(FEATURES_FILE), &corpus.utterances)?;
    save_alignments(&dir.join(ALIGNMENTS_FILE), &corpus.alignments, &corpus.inventory)
}

/// Reads a directory written by [`save_corpus_dir`]. Speaker profiles are not
/// stored on disk, so the loaded corpus has none.
pub fn load_corpus_dir(dir: &Path) -> Result<Corpus> {
    let inventory = load_inventory(&dir.join(INVENTORY_FILE))?;
    let utterances = load_features(&dir.join(FEATURES_FILE))?;
    let alignments = load_alignments(&dir.join(ALIGNMENTS_FILE), &inventory)?;
    Corpus::new(inventory, utterances, alignments, Vec::new())
}
