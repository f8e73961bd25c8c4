use phonetrait::corpus::{generate_corpus, make_trials, Corpus, CorpusConfig, PhoneInventory};
use phonetrait::model::{load_checkpoint, save_checkpoint};
use phonetrait::scoring::score_trials;
use phonetrait::training::{epoch_means, format_loss_log, sample_pair_batch, train, Architecture, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn corpus(n_speakers: usize, seed: u64) -> Corpus {
    let cfg = CorpusConfig {
        n_speakers,
        utts_per_speaker: 6,
        seed,
        ..CorpusConfig::default()
    };
    generate_corpus(&PhoneInventory::cmu(), &cfg).unwrap()
}

fn small_arch() -> Architecture {
    Architecture {
        encoder_layers: "-1,0,1:16:relu;0:8:identity".into(),
        embedding_dim: 8,
    }
}

#[test]
fn sampler_covers_speakers_uniformly() {
    let c = corpus(20, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut counts = [0usize; 20];
    let draws = 10_000;
    let k = 4;
    for _ in 0..draws {
        let sel = sample_pair_batch(&c, k, &mut rng).unwrap();
        let mut seen = sel.labels.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), k, "speakers repeat within a batch");
        for (e, t) in sel.enroll.iter().zip(&sel.test) {
            assert_ne!(e, t);
            assert_eq!(c.utterances[*e].speaker_id, c.utterances[*t].speaker_id);
        }
        for l in sel.labels {
            counts[l] += 1;
        }
    }
    // each speaker is picked with probability k/20 per batch
    let p = k as f64 / 20.0;
    let mean = draws as f64 * p;
    let sd = (draws as f64 * p * (1.0 - p)).sqrt();
    for (s, n) in counts.iter().enumerate() {
        assert!((*n as f64 - mean).abs() <= 3.0 * sd, "speaker {s}: {n} vs {mean}±{sd}");
    }
}

#[test]
fn training_is_reproducible_and_loss_falls() {
    let c = corpus(8, 2);
    let cfg = TrainConfig {
        k: 4,
        epochs: 10,
        seed: 5,
        ..TrainConfig::default()
    };
    let (m1, h1) = train(&c, &small_arch(), &cfg).unwrap();
    let (m2, h2) = train(&c, &small_arch(), &cfg).unwrap();
    assert_eq!(format_loss_log(&h1), format_loss_log(&h2));
    assert_eq!(m1, m2);
    let means = epoch_means(&h1);
    assert_eq!(means.len(), 10);
    assert!(means[9] < means[0], "{means:?}");

    let (m3, _) = train(&c, &small_arch(), &TrainConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(m1, m3);
}

#[test]
fn reloaded_checkpoint_scores_identically() {
    let c = corpus(6, 3);
    let cfg = TrainConfig {
        k: 3,
        epochs: 2,
        ..TrainConfig::default()
    };
    let (model, _) = train(&c, &small_arch(), &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    save_checkpoint(&path, &model).unwrap();
    let back = load_checkpoint(&path, Some(&model.config)).unwrap();
    assert_eq!(back, model);

    let trials = make_trials(&c, 20, 20, 0).unwrap();
    let a = score_trials(&model, &c, &trials).unwrap();
    let b = score_trials(&back, &c, &trials).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.final_score.to_bits(), y.final_score.to_bits());
        assert_eq!(x.evidence_score.map(f64::to_bits), y.evidence_score.map(f64::to_bits));
    }
}
