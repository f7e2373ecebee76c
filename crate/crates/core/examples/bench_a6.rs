use choreo_core::config::RunConfig;
use choreo_core::data::{gen_corpus, preprocess};
use choreo_core::gpt::*;
use choreo_core::infill::*;
use choreo_core::rngx::Rng;
use choreo_core::vqvae::train_vqvae;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(500);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(3e-4);

    let corpus = gen_corpus(3, 3, 4, 2, 128, 42).unwrap();
    let mut trimmed = corpus.clone();
    trimmed.records = corpus.records.iter().take(8).cloned()
        .chain(corpus.records.iter().skip(9).take(8).cloned()).collect();
    let (prep, stats) = preprocess(&trimmed, 128, 40).unwrap();
    let mut cfg = RunConfig::desk();
    cfg.vq_steps = 600;
    cfg.vq_batch = 4;
    let (vq, _) = train_vqvae(&prep, &cfg, 7).unwrap();
    let (text, music) = tokenize_corpus(&vq, &prep, &stats).unwrap();

    cfg.gpt_steps = 600;
    cfg.gpt_batch = 4;
    cfg.gpt_lr = 3e-4;
    let mut gpt = CrossModalGpt::new(GptDims::from_config(&cfg), 11);
    gpt.music_mean = stats.music_mean.clone();
    gpt.music_std = stats.music_std.clone();
    alternate_train(&mut gpt, &text, &music, &cfg, 3).unwrap();
    println!("base gpt ready, music NLL {:.4}", nll_music(&gpt, &music).unwrap());

    cfg.infill_steps = steps;
    cfg.infill_batch = 4;
    cfg.infill_lr = lr;
    let t = Instant::now();
    train_infill(&mut gpt, &music, &cfg, 9).unwrap();
    println!("infill train: {:?}", t.elapsed());
    let acc = masked_recovery_accuracy(&gpt, &music, 0.3, 77).unwrap();
    println!("masked recovery accuracy: {:.4}", acc);

    // planted keyframes: keyframe from the sequence's own motion, k=6
    let motions: Vec<_> = prep.records.iter().filter_map(|r| match r {
        choreo_core::data::Record::MusicPaired { motion, .. } => Some(motion.clone()),
        _ => None,
    }).collect();
    let mut rng = Rng::seed_from_u64(5);
    let mut hit = 0usize;
    let mut total = 0usize;
    let mut preserved = true;
    for case in 0..50 {
        let si = case % music.len();
        let s = &music[si];
        let m = &motions[si];
        let pos = 3 + rng.below(s.tokens.len() - 6);
        let clip = choreo_core::data::MotionSequence::new(
            4, m.channels, m.fps,
            m.data[pos * 4 * m.channels..(pos * 4 + 4) * m.channels].to_vec(),
        );
        let out = infill(&gpt, &vq, &s.music_norm, s.music_frames, &s.tokens,
            &KeyframeSpec { entries: vec![(pos, clip)] }, 6, 4).unwrap();
        // preservation
        for (i, (&a, &b)) in out.tokens.iter().zip(&s.tokens).enumerate() {
            let in_window = i.abs_diff(pos) <= 6;
            if i == pos {
                if a != out.keyframe_tokens[0].1 { preserved = false; }
            } else if !in_window && a != b {
                preserved = false;
            }
            if in_window && i != pos {
                total += 1;
                if a == b { hit += 1; }
            }
        }
    }
    println!("preservation intact: {preserved}");
    println!("planted-keyframe recovery: {}/{} = {:.4}", hit, total, hit as f64 / total as f64);
}
