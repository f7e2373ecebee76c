use choreo_core::config::RunConfig;
use choreo_core::data::{gen_corpus, preprocess};
use choreo_core::fusion::{generate_with_text, FusionSchedule, TextGenerateSpec};
use choreo_core::gpt::*;
use choreo_core::vqvae::train_vqvae;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(700);
    let tau: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.5);
    let lr: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(3e-4);

    // fusion fixture: 6 music (2/genre) + 5 text (1/template)
    let corpus = gen_corpus(3, 2, 5, 1, 128, 91).unwrap();
    let (prep, stats) = preprocess(&corpus, 128, 40).unwrap();
    let mut cfg = RunConfig::desk();
    cfg.vq_steps = 600;
    cfg.vq_batch = 4;
    let t0 = Instant::now();
    let (vq, _) = train_vqvae(&prep, &cfg, 17).unwrap();
    println!("mini vq: {:?}", t0.elapsed());
    let (text, music) = tokenize_corpus(&vq, &prep, &stats).unwrap();

    cfg.gpt_steps = steps;
    cfg.gpt_batch = 4;
    cfg.gpt_lr = lr;
    cfg.corrupt_tau = tau;
    let mut gpt = CrossModalGpt::new(GptDims::from_config(&cfg), 23);
    gpt.music_mean = stats.music_mean.clone();
    gpt.music_std = stats.music_std.clone();
    let t1 = Instant::now();
    alternate_train(&mut gpt, &text, &music, &cfg, 5).unwrap();
    println!("gpt train {:?} | text NLL {:.4} music NLL {:.4}",
        t1.elapsed(), nll_text(&gpt, &text).unwrap(), nll_music(&gpt, &music).unwrap());

    // mid-interval accuracy: for each prompt x each music, generate with
    // interval [8, 28) and compare plateau positions to the prompt's tokens
    let sched = FusionSchedule::new(8, 28).unwrap();
    let plateau: Vec<usize> = (8..28).filter(|&i| sched.weight(i) == 0.0).collect();
    let mut hit = 0usize;
    let mut total = 0usize;
    for ts in &text {
        for ms in &music {
            let out = generate_with_text(&gpt, &TextGenerateSpec {
                music_norm: &ms.music_norm,
                music_frames: ms.music_frames,
                genre: None,
                template: ts.template,
                schedule: sched.clone(),
                max_len: 32,
                seed: 13,
                decode: Decode::Greedy,
            }).unwrap();
            for &i in &plateau {
                if i < out.len() {
                    total += 1;
                    if out[i] == ts.tokens[i] { hit += 1; }
                }
            }
        }
    }
    println!("steps={steps} tau={tau} lr={lr}: plateau positions {:?}", plateau.len());
    println!("mid-interval accuracy: {}/{} = {:.3}", hit, total, hit as f64 / total as f64);
}
