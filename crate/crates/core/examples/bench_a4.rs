use choreo_core::config::RunConfig;
use choreo_core::data::{gen_corpus, preprocess, synth_dance, GenreLabel};
use choreo_core::genre::{genre_code, train_genre};
use choreo_core::gpt::*;
use choreo_core::metrics::dominant_frequency;
use choreo_core::rngx::Rng;
use choreo_core::vqvae::train_vqvae;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let per_genre: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(16);
    let gpt_steps: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(900);
    let genre_steps: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(100);

    let corpus = gen_corpus(3, per_genre, 5, 1, 128, 55).unwrap();
    let (prep, stats) = preprocess(&corpus, 128, 40).unwrap();
    let mut cfg = RunConfig::desk();
    cfg.vq_steps = 1200;
    cfg.vq_batch = 8;
    let t0 = Instant::now();
    let (vq, vql) = train_vqvae(&prep, &cfg, 31).unwrap();
    println!("vq: {:?} recon {:.3} usage {:.2}", t0.elapsed(), vql.final_recon_l1, vql.codebook_usage);
    let (text, music) = tokenize_corpus(&vq, &prep, &stats).unwrap();

    cfg.gpt_steps = gpt_steps;
    cfg.gpt_batch = 4;
    cfg.gpt_lr = 3e-4;
    let mut gpt = CrossModalGpt::new(GptDims::from_config(&cfg), 37);
    gpt.music_mean = stats.music_mean.clone();
    gpt.music_std = stats.music_std.clone();
    let t1 = Instant::now();
    alternate_train(&mut gpt, &text, &music, &cfg, 7).unwrap();
    println!("gpt: {:?} music NLL {:.4}", t1.elapsed(), nll_music(&gpt, &music).unwrap());

    cfg.genre_steps = genre_steps;
    cfg.genre_batch = 4;
    let motions: Vec<_> = prep.records.iter().filter_map(|r| match r {
        choreo_core::data::Record::MusicPaired { motion, .. } => Some(motion.clone()),
        _ => None,
    }).collect();
    let t2 = Instant::now();
    let (net, log) = train_genre(&vq, &gpt, &music, &motions, &cfg, 41).unwrap();
    println!("genre: {:?} d_real {:.3} d_fake {:.3} (init fake {:.3})",
        t2.elapsed(), log.final_real_mean, log.final_fake_mean, log.initial_fake_mean);

    // 20 generated dances per genre on held-out music seeds
    let mut rng = Rng::seed_from_u64(4242);
    let mut correct = 0usize;
    let mut baseline = 0usize;
    let mut votes = [[0usize; 3]; 3];
    let t3 = Instant::now();
    for g in 0..3usize {
        let label = GenreLabel::new(g, 3).unwrap();
        for i in 0..20u64 {
            let (_, music_raw) = synth_dance(&label, 3, 128, 700_000 + 1000 * g as u64 + i).unwrap();
            let z: Vec<f32> = (0..16).map(|_| rng.normal_f32()).collect();
            let code = genre_code(&net, g, &z).unwrap();
            let tokens = gpt.generate(&GenerateSpec {
                music: &music_raw, genre: Some(&code), max_len: 32, seed: 9000 + i, decode: Decode::Greedy,
            }).unwrap();
            if tokens.is_empty() { continue; }
            let dance = vq.decode(&tokens).unwrap();
            let ch0 = dance.channel(0);
            let pred = dominant_frequency(&ch0, 16.0, &[0.5, 0.75, 1.0]);
            votes[g][pred] += 1;
            if pred == g { correct += 1; }
            let tokens0 = gpt.generate(&GenerateSpec {
                music: &music_raw, genre: None, max_len: 32, seed: 9000 + i, decode: Decode::Greedy,
            }).unwrap();
            if !tokens0.is_empty() {
                let d0 = vq.decode(&tokens0).unwrap();
                let pred0 = dominant_frequency(&d0.channel(0), 16.0, &[0.5, 0.75, 1.0]);
                if pred0 == g { baseline += 1; }
            }
        }
    }
    println!("generation+classify: {:?}", t3.elapsed());
    println!("confusion: {votes:?}");
    println!("accuracy with genre code: {}/60 = {:.3}", correct, correct as f64 / 60.0);
    println!("accuracy music-only:      {}/60 = {:.3}", baseline, baseline as f64 / 60.0);

    // label-swap margin on decoded reals
    let mut margin = 0.0f64;
    let mut n = 0usize;
    for s in &music {
        let decoded = vq.decode(&s.tokens).unwrap();
        let right = net.discriminate(&decoded, s.genre, &s.music_norm, s.music_frames).unwrap();
        let wrong = net.discriminate(&decoded, (s.genre + 1) % 3, &s.music_norm, s.music_frames).unwrap();
        margin += right - wrong;
        n += 1;
    }
    println!("label-swap margin: {:.4} over {n} reals", margin / n as f64);
}
