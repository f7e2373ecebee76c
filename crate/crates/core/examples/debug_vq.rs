use choreo_core::config::RunConfig;
use choreo_core::data::{gen_corpus, preprocess, Record};
use choreo_core::vqvae::train_vqvae;

fn main() {
    let corpus = gen_corpus(3, 32, 5, 32, 128, 7).unwrap();
    let (prep, _) = preprocess(&corpus, 128, 40).unwrap();
    let mut cfg = RunConfig::desk();
    cfg.vq_steps = 2000;
    cfg.vq_lr = 2e-4;
    cfg.vq_lr_split = 0.7;
    cfg.vq_lr_final = 2e-5;
    let (vq, log) = train_vqvae(&prep, &cfg, 7).unwrap();
    println!("overall validation L1 = {:.4}, usage = {:.2}", log.final_recon_l1, log.codebook_usage);
    let mut per_cat: std::collections::BTreeMap<String, (f64, usize)> = Default::default();
    for rec in &prep.records {
        let m = rec.motion();
        let toks = vq.encode_tokens(m).unwrap();
        let out = vq.decode(&toks).unwrap();
        let l1: f64 = out.data.iter().zip(&m.data).map(|(a, b)| (a - b).abs() as f64).sum::<f64>() / m.data.len() as f64;
        let key = match rec {
            Record::MusicPaired { genre, .. } => format!("genre-{genre}"),
            Record::TextPaired { template, .. } => format!("template-{template}"),
        };
        let e = per_cat.entry(key).or_insert((0.0, 0));
        e.0 += l1;
        e.1 += 1;
    }
    for (k, (sum, n)) in per_cat {
        println!("{k}: mean L1 = {:.4} over {n}", sum / n as f64);
    }
}
