use choreo_core::config::RunConfig;
use choreo_core::data::{gen_corpus, preprocess};
use choreo_core::gpt::*;
use choreo_core::vqvae::train_vqvae;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(800);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1e-4);
    let tau: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.1);

    // memorization corpus: 8 music (3 genres) + 8 text (5 templates, cycled)
    let corpus = gen_corpus(3, 3, 5, 2, 128, 42).unwrap();
    let mut trimmed = corpus.clone();
    trimmed.records = corpus.records.iter().take(8).cloned()
        .chain(corpus.records.iter().skip(9).take(8).cloned())
        .collect();
    let (prep, stats) = preprocess(&trimmed, 128, 40).unwrap();

    let mut cfg = RunConfig::desk();
    cfg.vq_steps = 600;
    cfg.vq_batch = 4;
    let t0 = Instant::now();
    let (vq, _) = train_vqvae(&prep, &cfg, 7).unwrap();
    println!("mini vq train: {:?}", t0.elapsed());

    let (text, music) = tokenize_corpus(&vq, &prep, &stats).unwrap();
    println!("text {} seqs, music {} seqs, sample tokens: {:?}", text.len(), music.len(), &music[0].tokens[..8]);

    cfg.gpt_steps = steps;
    cfg.gpt_batch = 4;
    cfg.gpt_lr = lr;
    cfg.corrupt_tau = tau;
    let mut gpt = CrossModalGpt::new(GptDims::from_config(&cfg), 11);
    gpt.music_mean = stats.music_mean.clone();
    gpt.music_std = stats.music_std.clone();
    let t1 = Instant::now();
    alternate_train(&mut gpt, &text, &music, &cfg, 3).unwrap();
    let dt = t1.elapsed();
    let nt = nll_text(&gpt, &text).unwrap();
    let nm = nll_music(&gpt, &music).unwrap();
    println!("steps={steps} lr={lr} tau={tau}: {:.1}s ({:?}/step) | text NLL {:.4} music NLL {:.4}",
        dt.as_secs_f64(), dt / steps as u32, nt, nm);

    // greedy reproduction check (music side)
    let mut exact = 0;
    for s in &music {
        let toks = gpt.generate_from_normalized(&s.music_norm, s.music_frames, None, 32, 0, Decode::Greedy).unwrap();
        if toks == s.tokens { exact += 1; }
    }
    println!("music greedy reproduction: {exact}/{}", music.len());

    // text side: greedy from template alone
    let mut exact_t = 0;
    for s in &text {
        let mut toks: Vec<usize> = Vec::new();
        while toks.len() < 32 {
            let mut g = choreo_core::tensor::Graph::<f32>::new();
            let feats = gpt.t_base(&mut g, s.template, &toks, false).unwrap();
            let logits = gpt.head(&mut g, feats, &HeadMode::Causal, false).unwrap();
            let next = sample_token(g.data(logits), gpt.dims.vocab(), gpt.dims.pad_token(), Decode::Greedy, &mut choreo_core::rngx::Rng::seed_from_u64(0));
            if next >= gpt.dims.codebook_size { break; }
            toks.push(next);
        }
        if toks == s.tokens { exact_t += 1; }
    }
    println!("text greedy reproduction: {exact_t}/{}", text.len());
}
