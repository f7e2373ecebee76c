use sha2::{Digest, Sha256};

use super::*;
use crate::rngx::Rng;

const TAU: f64 = std::f64::consts::TAU;

/// Naive DFT power argmax over bins 1..n/2 (mean removed). Independent of
/// everything in the synth path.
fn dominant_bin(signal: &[f32]) -> usize {
    let n = signal.len();
    let mean = signal.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
    let mut best = (0usize, f64::MIN);
    for k in 1..n / 2 {
        let (mut re, mut im) = (0.0f64, 0.0f64);
        for (t, &v) in signal.iter().enumerate() {
            let ang = TAU * k as f64 * t as f64 / n as f64;
            re += (v as f64 - mean) * libm::cos(ang);
            im -= (v as f64 - mean) * libm::sin(ang);
        }
        let p = re * re + im * im;
        if p > best.1 {
            best = (k, p);
        }
    }
    best.0
}

fn hash_f32s(data: &[f32]) -> String {
    let mut h = Sha256::new();
    for v in data {
        h.update(v.to_le_bytes());
    }
    let d = h.finalize();
    d.iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn synth_dance_is_deterministic() {
    let g = GenreLabel::new(1, 3).unwrap();
    let (m1, y1) = synth_dance(&g, 3, 64, 42).unwrap();
    let (m2, y2) = synth_dance(&g, 3, 64, 42).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(y1, y2);
}

#[test]
fn synth_dance_shapes() {
    let g = GenreLabel::new(0, 3).unwrap();
    let (m, y) = synth_dance(&g, 3, 128, 7).unwrap();
    assert_eq!((m.frames, m.channels), (128, 66));
    assert_eq!((y.frames, y.channels), (128, 35));
}

#[test]
fn genre_changes_dominant_frequency_by_quarter_hz() {
    // 128 frames at 16 fps -> bin width 0.125 Hz; 0.25 Hz is two bins.
    let g0 = GenreLabel::new(0, 3).unwrap();
    let g1 = GenreLabel::new(1, 3).unwrap();
    let (m0, _) = synth_dance(&g0, 3, 128, 5).unwrap();
    let (m1, _) = synth_dance(&g1, 3, 128, 5).unwrap();
    let b0 = dominant_bin(&m0.channel(0));
    let b1 = dominant_bin(&m1.channel(0));
    let diff = b1 as isize - b0 as isize;
    assert!((1..=3).contains(&diff), "bins {b0} -> {b1}");
    // And the absolute bins sit on the fundamentals (4 and 6) within a bin.
    assert!((b0 as isize - 4).abs() <= 1, "genre0 bin {b0}");
    assert!((b1 as isize - 6).abs() <= 1, "genre1 bin {b1}");
}

#[test]
fn beat_channel_is_an_impulse_train() {
    let g = GenreLabel::new(1, 3).unwrap(); // 0.75 Hz
    let (_, y) = synth_dance(&g, 3, 128, 11).unwrap();
    let beat: Vec<f32> = (0..y.frames).map(|t| y.data[t * y.channels + 34]).collect();
    assert!(beat.iter().all(|&v| v == 0.0 || v == 1.0));
    let count = beat.iter().filter(|&&v| v == 1.0).count();
    // 128 frames / 16 fps * 0.75 Hz = 6 beats, plus the downbeat at t=0.
    assert!((6..=7).contains(&count), "beat count {count}");
}

#[test]
fn synth_dance_rejects_unknown_genre_and_short_lengths() {
    let g = GenreLabel {
        id: 9,
        name: "bogus".into(),
    };
    assert!(matches!(
        synth_dance(&g, 3, 64, 0).unwrap_err(),
        crate::Error::UnknownGenre(9)
    ));
    let g = GenreLabel::new(0, 3).unwrap();
    assert!(synth_dance(&g, 3, 4, 0).is_err());
    assert!(matches!(GenreLabel::new(5, 3), Err(crate::Error::UnknownGenre(5))));
}

#[test]
fn raise_arms_ramps_up_in_second_half() {
    let prompt = TextPrompt {
        template: TextTemplate::RaiseArms,
        duration: 128,
    };
    let m = synth_text_motion(&prompt, 3).unwrap();
    let arm_chan = ARM_JOINTS[0] * 3 + 1;
    let vals = m.channel(arm_chan);
    let half = vals.len() / 2;
    let first: f32 = vals[..half].iter().sum::<f32>() / half as f32;
    let second: f32 = vals[half..].iter().sum::<f32>() / (vals.len() - half) as f32;
    assert!(second > first, "first {first} second {second}");
}

#[test]
fn text_motion_duration_and_errors() {
    let prompt = TextPrompt {
        template: TextTemplate::Wave,
        duration: 40,
    };
    let m = synth_text_motion(&prompt, 0).unwrap();
    assert_eq!((m.frames, m.channels), (40, 66));
    assert!(matches!(
        TextTemplate::from_id(7),
        Err(crate::Error::UnknownTemplate(7))
    ));
}

/// Nearest-centroid probe over [channel means, second-half minus first-half
/// channel means]; linear in the features.
struct Probe {
    centroids: Vec<Vec<f64>>,
}

fn probe_features(m: &MotionSequence) -> Vec<f64> {
    let half = m.frames / 2;
    let mut f = vec![0.0f64; m.channels * 2];
    for t in 0..m.frames {
        for c in 0..m.channels {
            let v = m.data[t * m.channels + c] as f64;
            f[c] += v / m.frames as f64;
            if t >= half {
                f[m.channels + c] += v / (m.frames - half) as f64;
            } else {
                f[m.channels + c] -= v / half as f64;
            }
        }
    }
    f
}

impl Probe {
    fn train(samples: &[(usize, MotionSequence)], n_classes: usize) -> Self {
        let dim = probe_features(&samples[0].1).len();
        let mut centroids = vec![vec![0.0f64; dim]; n_classes];
        let mut counts = vec![0usize; n_classes];
        for (label, m) in samples {
            let f = probe_features(m);
            for (acc, v) in centroids[*label].iter_mut().zip(&f) {
                *acc += v;
            }
            counts[*label] += 1;
        }
        for (c, n) in centroids.iter_mut().zip(&counts) {
            for v in c.iter_mut() {
                *v /= (*n).max(1) as f64;
            }
        }
        Probe { centroids }
    }

    fn classify(&self, m: &MotionSequence) -> usize {
        let f = probe_features(m);
        let mut best = (0usize, f64::MAX);
        for (i, c) in self.centroids.iter().enumerate() {
            let d: f64 = c.iter().zip(&f).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }
}

#[test]
fn linear_probe_separates_templates_perfectly() {
    let mut train = Vec::new();
    for ti in 0..5 {
        let template = TextTemplate::from_id(ti).unwrap();
        for s in 0..20u64 {
            let m = synth_text_motion(
                &TextPrompt { template, duration: 128 },
                1000 + s,
            )
            .unwrap();
            train.push((ti, m));
        }
    }
    let probe = Probe::train(&train, 5);
    // 100% on the training samples
    for (label, m) in &train {
        assert_eq!(probe.classify(m), *label);
    }
    // and on unseen seeds, including the two-seeds-same-template case
    for ti in 0..5 {
        let template = TextTemplate::from_id(ti).unwrap();
        let a = synth_text_motion(&TextPrompt { template, duration: 128 }, 77).unwrap();
        let b = synth_text_motion(&TextPrompt { template, duration: 128 }, 78).unwrap();
        assert_ne!(a.data, b.data, "seeds must differ");
        assert_eq!(probe.classify(&a), ti);
        assert_eq!(probe.classify(&b), ti);
    }
}

#[test]
fn golden_hash_of_synth_outputs_is_stable() {
    let g = GenreLabel::new(2, 3).unwrap();
    let (m, y) = synth_dance(&g, 3, 64, 99).unwrap();
    let t = synth_text_motion(
        &TextPrompt {
            template: TextTemplate::Spin,
            duration: 64,
        },
        99,
    )
    .unwrap();
    let mut all = m.data.clone();
    all.extend_from_slice(&y.data);
    all.extend_from_slice(&t.data);
    assert_eq!(
        hash_f32s(&all),
        "4e160bd5bb5b64953eec7ac0a5d76c4df9494522ba6e0567ca6e677548726318",
        "synthetic data drifted from the golden hash"
    );
}

#[test]
fn corpus_is_balanced_and_ordered() {
    let corpus = gen_corpus(3, 4, 5, 2, 64, 31).unwrap();
    assert_eq!(corpus.records.len(), 3 * 4 + 5 * 2);
    let mut genre_counts = [0usize; 3];
    let mut template_counts = [0usize; 5];
    for rec in &corpus.records {
        match rec {
            Record::MusicPaired { genre, motion, music } => {
                genre_counts[*genre] += 1;
                assert_eq!(motion.frames, music.frames);
            }
            Record::TextPaired { template, .. } => template_counts[*template] += 1,
        }
    }
    assert!(genre_counts.iter().all(|&c| c == 4));
    assert!(template_counts.iter().all(|&c| c == 2));
}

#[test]
fn corpus_file_round_trips_losslessly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    let corpus = gen_corpus(2, 3, 3, 2, 48, 8).unwrap();
    write_corpus(&path, &corpus).unwrap();
    let back = read_corpus(&path).unwrap();
    assert_eq!(corpus, back);
}

#[test]
fn corpus_file_rejects_bad_magic() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("junk.bin");
    std::fs::write(&path, b"NOPE0000").unwrap();
    assert!(matches!(
        read_corpus(&path).unwrap_err(),
        crate::Error::Format { .. }
    ));
}

#[test]
fn preprocess_crops_to_leading_window() {
    let g = GenreLabel::new(0, 3).unwrap();
    let (motion, music) = synth_dance(&g, 3, 200, 1).unwrap();
    let corpus = Corpus {
        records: vec![Record::MusicPaired {
            genre: 0,
            motion: motion.clone(),
            music,
        }],
        c_d: C_D,
        c_m: C_M,
        fps: FPS,
        n_genres: 3,
        n_templates: 5,
    };
    let (out, stats) = preprocess(&corpus, 128, 40).unwrap();
    let rec = out.records[0].motion();
    assert_eq!(rec.frames, 128);
    // leading window: denormalizing returns the first 128 frames of the raw record
    let denorm = stats.denormalize_motion(rec);
    for i in 0..128 * C_D {
        assert!((denorm.data[i] - motion.data[i]).abs() < 1e-4);
    }
}

#[test]
fn preprocess_keeps_exact_length_and_repeats_short_records() {
    let g = GenreLabel::new(1, 3).unwrap();
    let (m128, y128) = synth_dance(&g, 3, 128, 2).unwrap();
    let (m96, y96) = synth_dance(&g, 3, 96, 3).unwrap();
    let corpus = Corpus {
        records: vec![
            Record::MusicPaired { genre: 1, motion: m128, music: y128 },
            Record::MusicPaired { genre: 1, motion: m96.clone(), music: y96 },
        ],
        c_d: C_D,
        c_m: C_M,
        fps: FPS,
        n_genres: 3,
        n_templates: 5,
    };
    let (out, stats) = preprocess(&corpus, 128, 40).unwrap();
    assert!(out.records.iter().all(|r| r.frames() == 128));
    // self-repeat: frame 96 of the unified short record equals its frame 0
    let denorm = stats.denormalize_motion(out.records[1].motion());
    for c in 0..C_D {
        assert!((denorm.data[96 * C_D + c] - m96.data[c]).abs() < 1e-4);
    }
}

#[test]
fn preprocess_rejects_records_below_minimum() {
    let g = GenreLabel::new(0, 3).unwrap();
    let (motion, music) = synth_dance(&g, 3, 39, 1).unwrap();
    let corpus = Corpus {
        records: vec![Record::MusicPaired { genre: 0, motion, music }],
        c_d: C_D,
        c_m: C_M,
        fps: FPS,
        n_genres: 3,
        n_templates: 5,
    };
    assert!(matches!(
        preprocess(&corpus, 128, 40).unwrap_err(),
        crate::Error::RecordTooShort { got: 39, min: 40 }
    ));
}

#[test]
fn normalize_denormalize_round_trips() {
    let corpus = gen_corpus(3, 2, 5, 1, 128, 17).unwrap();
    let (out, stats) = preprocess(&corpus, 128, 40).unwrap();
    for (raw, norm) in corpus.records.iter().zip(&out.records) {
        let back = stats.denormalize_motion(norm.motion());
        for (a, b) in raw.motion().data.iter().zip(&back.data) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn unified_length_is_exact_and_pairing_preserved(
            frames in 40usize..300,
            seed in 0u64..1000,
        ) {
            let g = GenreLabel::new(0, 3).unwrap();
            let (motion, music) = synth_dance(&g, 3, frames, seed).unwrap();
            let corpus = Corpus {
                records: vec![Record::MusicPaired { genre: 0, motion, music }],
                c_d: C_D,
                c_m: C_M,
                fps: FPS,
                n_genres: 3,
                n_templates: 5,
            };
            let (out, _) = preprocess(&corpus, 128, 40).unwrap();
            match &out.records[0] {
                Record::MusicPaired { motion, music, .. } => {
                    prop_assert_eq!(motion.frames, 128);
                    prop_assert_eq!(music.frames, 128);
                }
                _ => unreachable!(),
            }
        }

        #[test]
        fn generation_is_a_pure_function_of_ids_and_seed(
            genre in 0usize..3,
            seed in 0u64..500,
        ) {
            let g = GenreLabel::new(genre, 3).unwrap();
            let a = synth_dance(&g, 3, 64, seed).unwrap();
            let b = synth_dance(&g, 3, 64, seed).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}

#[test]
fn rng_below_is_unbiased_enough_for_shuffles() {
    let mut rng = Rng::seed_from_u64(4);
    let mut counts = [0usize; 5];
    for _ in 0..5000 {
        counts[rng.below(5)] += 1;
    }
    assert!(counts.iter().all(|&c| c > 800), "{counts:?}");
}
