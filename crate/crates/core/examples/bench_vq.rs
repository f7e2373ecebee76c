use choreo_core::config::RunConfig;
use choreo_core::data::{gen_corpus, preprocess};
use choreo_core::vqvae::train_vqvae;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1500);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(2e-4);
    let split: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.8);
    let final_lr: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(2e-5);
    let batch: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(8);
    let mult: f64 = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(25.0);
    let corpus = gen_corpus(3, 32, 5, 32, 128, 7).unwrap();
    let (prep, _) = preprocess(&corpus, 128, 40).unwrap();
    let mut cfg = RunConfig::desk();
    cfg.vq_steps = steps;
    cfg.vq_lr = lr;
    cfg.vq_lr_split = split;
    cfg.vq_lr_final = final_lr;
    cfg.vq_batch = batch;
    cfg.vq_codebook_lr_mult = mult;
    let t = Instant::now();
    let (_vq, log) = train_vqvae(&prep, &cfg, 7).unwrap();
    println!(
        "steps={steps} lr={lr} split={split} final={final_lr} batch={batch} mult={mult}: {:.1}s | validation L1 = {:.4} usage = {:.2} | usage curve {:?} | curve tail {:?}",
        t.elapsed().as_secs_f64(),
        log.final_recon_l1,
        log.codebook_usage,
        &log.usage_curve[log.usage_curve.len().saturating_sub(4)..],
        &log.recon_curve[log.recon_curve.len().saturating_sub(6)..]
    );
}
