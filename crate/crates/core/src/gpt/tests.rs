use super::*;
use crate::rngx::Rng;

fn tiny_cfg() -> RunConfig {
    let mut cfg = RunConfig::desk();
    cfg.vq_codebook_size = 8;
    cfg.vq_codebook_dim = 6;
    cfg.gpt_dim = 32;
    cfg.gpt_heads = 2;
    cfg.gpt_base_layers = 1;
    cfg.gpt_head_layers = 2;
    cfg.gpt_max_music = 24;
    cfg.gpt_max_text = 24;
    cfg
}

fn tiny_gpt(seed: u64) -> CrossModalGpt {
    CrossModalGpt::new(GptDims::from_config(&tiny_cfg()), seed)
}

fn rand_music(rng: &mut Rng, frames: usize) -> Vec<f32> {
    (0..frames * crate::data::C_M).map(|_| rng.normal_f32()).collect()
}

#[test]
fn t_base_empty_prefix_is_a_single_row() {
    let gpt = tiny_gpt(1);
    let mut g = Graph::new();
    let f = gpt.t_base(&mut g, 0, &[], false).unwrap();
    assert_eq!(g.shape(f), &[1, 32]);
}

#[test]
fn t_base_rejects_bad_template_and_overlength() {
    let gpt = tiny_gpt(1);
    let mut g = Graph::new();
    assert!(matches!(
        gpt.t_base(&mut g, 9, &[], false).unwrap_err(),
        Error::UnknownTemplate(9)
    ));
    let long = vec![0usize; 25];
    assert!(gpt.t_base(&mut g, 0, &long, false).is_err());
}

#[test]
fn t_base_is_causal_under_token_perturbation() {
    let gpt = tiny_gpt(2);
    let prefix: Vec<usize> = vec![1, 4, 2, 7, 0, 3, 5, 6, 1, 2];
    let mut perturbed = prefix.clone();
    perturbed[7] = 5;
    let run = |toks: &[usize]| {
        let mut g = Graph::new();
        let f = gpt.t_base(&mut g, 1, toks, false).unwrap();
        g.data(f).to_vec()
    };
    let fa = run(&prefix);
    let fb = run(&perturbed);
    // slots 0..=7 (text slot + tokens before position 7) are bit-identical
    assert_eq!(fa[..8 * 32], fb[..8 * 32]);
    assert_ne!(fa[8 * 32..], fb[8 * 32..]);
}

#[test]
fn m_base_is_causal_and_finite_on_zero_music() {
    let gpt = tiny_gpt(3);
    let frames = 48; // 12 tokens at l=4
    let zeros = vec![0.0f32; frames * crate::data::C_M];
    let prefix: Vec<usize> = vec![3, 1, 4, 1, 5, 2, 6, 5];
    let mut perturbed = prefix.clone();
    perturbed[5] = 7;
    let run = |toks: &[usize]| {
        let mut g = Graph::new();
        let m = g.leaf(zeros.clone(), vec![frames, crate::data::C_M]);
        let memb = gpt.music_embedding(&mut g, m, false).unwrap();
        let f = gpt.m_base(&mut g, memb, None, toks, false).unwrap();
        g.data(f).to_vec()
    };
    let fa = run(&prefix);
    assert!(fa.iter().all(|v| v.is_finite()));
    let fb = run(&perturbed);
    assert_eq!(fa[..6 * 32], fb[..6 * 32]);
    assert_ne!(fa[6 * 32..], fb[6 * 32..]);
}

#[test]
fn m_base_rejects_short_music() {
    let gpt = tiny_gpt(3);
    let mut g = Graph::new();
    let mut rng = Rng::seed_from_u64(0);
    let m = g.leaf(rand_music(&mut rng, 8), vec![8, crate::data::C_M]);
    let memb = gpt.music_embedding(&mut g, m, false).unwrap(); // 2 rows
    let err = gpt.m_base(&mut g, memb, None, &[1, 2, 3], false).unwrap_err();
    assert!(err.to_string().contains("shorter than prefix"));
}

#[test]
fn head_logits_have_vocab_width() {
    let gpt = tiny_gpt(4);
    let mut g = Graph::new();
    let f = gpt.t_base(&mut g, 0, &[1, 2, 3], false).unwrap();
    let logits = gpt.head(&mut g, f, &HeadMode::Causal, false).unwrap();
    assert_eq!(g.shape(logits), &[4, 10]); // 8 + END + PAD
}

#[test]
fn head_causal_vs_all_known_mask_context() {
    // causal: position 0 logits ignore later features; all-KNOWN masked
    // mode: position 0 sees everything.
    let gpt = tiny_gpt(5);
    let mut rng = Rng::seed_from_u64(9);
    let base: Vec<f32> = (0..6 * 32).map(|_| rng.normal_f32()).collect();
    let mut changed = base.clone();
    for v in &mut changed[5 * 32..] {
        *v += 1.0;
    }
    let run = |feats: &[f32], mode: &HeadMode| {
        let mut g = Graph::new();
        let f = g.leaf(feats.to_vec(), vec![6, 32]);
        let logits = gpt.head(&mut g, f, mode, false).unwrap();
        g.data(logits)[..10].to_vec()
    };
    let causal_a = run(&base, &HeadMode::Causal);
    let causal_b = run(&changed, &HeadMode::Causal);
    assert_eq!(causal_a, causal_b);
    let full = HeadMode::Masked {
        visible: vec![true; 6],
        post_softmax: false,
    };
    let masked_a = run(&base, &full);
    let masked_b = run(&changed, &full);
    assert_ne!(masked_a, masked_b);
}

#[test]
fn head_masked_rejects_wrong_mask_length() {
    let gpt = tiny_gpt(5);
    let mut g = Graph::new();
    let f = g.leaf(vec![0.0; 4 * 32], vec![4, 32]);
    let mode = HeadMode::Masked {
        visible: vec![true; 3],
        post_softmax: false,
    };
    assert!(gpt.head(&mut g, f, &mode, false).is_err());
}

#[test]
fn recon_loss_matches_brute_force_nll() {
    let mut rng = Rng::seed_from_u64(11);
    let mut g = Graph::new();
    let rows = 5;
    let cols = 7;
    let data: Vec<f32> = (0..rows * cols).map(|_| rng.normal_f32()).collect();
    let logits = g.leaf(data.clone(), vec![rows, cols]);
    let targets: Vec<i64> = vec![3, -1, 0, 6, 2];
    let loss = recon_loss(&mut g, logits, &targets).unwrap();
    // brute force in f64
    let mut total = 0.0f64;
    let mut count = 0;
    for r in 0..rows {
        if targets[r] < 0 {
            continue;
        }
        let row: Vec<f64> = data[r * cols..(r + 1) * cols].iter().map(|&v| v as f64).collect();
        let mx = row.iter().cloned().fold(f64::MIN, f64::max);
        let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        total += lse - row[targets[r] as usize];
        count += 1;
    }
    assert!((g.scalar(loss) - total / count as f64).abs() < 1e-6);
}

#[test]
fn recon_loss_uniform_logits_is_ln_vocab() {
    let mut g = Graph::new();
    let logits = g.leaf(vec![1.25; 66], vec![1, 66]);
    let loss = recon_loss(&mut g, logits, &[42]).unwrap();
    assert!((g.scalar(loss) - 66.0f64.ln()).abs() < 1e-6);
}

#[test]
fn corrupt_endpoints() {
    let mut rng = Rng::seed_from_u64(3);
    let tokens: Vec<usize> = (0..50).map(|i| i % 8).collect();
    assert_eq!(corrupt(&tokens, 0.0, 8, &mut rng), tokens);
    let all = corrupt(&tokens, 1.0, 8, &mut rng);
    assert!(all.iter().all(|&t| t < 8));
    // uniform draws collide with the original at rate ~1/8
    let same = all.iter().zip(&tokens).filter(|(a, b)| a == b).count();
    assert!(same < 20, "tau=1 left too many tokens untouched: {same}");
}

#[test]
fn corrupt_rate_is_binomial_consistent() {
    let tokens: Vec<usize> = (0..1000).map(|i| i % 64).collect();
    for seed in 0..10u64 {
        let mut rng = Rng::seed_from_u64(seed);
        let out = corrupt(&tokens, 0.1, 64, &mut rng);
        let changed = out.iter().zip(&tokens).filter(|(a, b)| a != b).count() as f64 / 1000.0;
        // expected visible change rate: 0.1 * (1 - 1/64)
        assert!((changed - 0.0984).abs() < 0.03, "seed {seed}: rate {changed}");
    }
}

#[test]
fn music_batch_leaves_t_base_untouched_and_text_batch_leaves_m_base() {
    let gpt = tiny_gpt(6);
    let mut rng = Rng::seed_from_u64(5);
    let music_norm = rand_music(&mut rng, 32);
    let tokens = vec![1usize, 2, 3, 4, 5, 6, 7, 0];

    let mut g = Graph::new();
    let m = g.leaf(music_norm.clone(), vec![32, crate::data::C_M]);
    let memb = gpt.music_embedding(&mut g, m, true).unwrap();
    let feats = gpt.m_base(&mut g, memb, None, &tokens, true).unwrap();
    let logits = gpt.head(&mut g, feats, &HeadMode::Causal, true).unwrap();
    let loss = recon_loss(&mut g, logits, &targets_with_end(&tokens, 8)).unwrap();
    g.backward(loss).unwrap();
    let names: Vec<String> = g
        .collect_param_grads()
        .iter()
        .map(|(pid, _)| gpt.store.get(*pid).name.clone())
        .collect();
    assert!(names.iter().all(|n| !n.starts_with("base_t.") && n != "emb.text"));
    assert!(names.iter().any(|n| n.starts_with("base_m.")));
    assert!(names.iter().any(|n| n.starts_with("head.")));

    let mut g = Graph::new();
    let feats = gpt.t_base(&mut g, 2, &tokens, true).unwrap();
    let logits = gpt.head(&mut g, feats, &HeadMode::Causal, true).unwrap();
    let loss = recon_loss(&mut g, logits, &targets_with_end(&tokens, 8)).unwrap();
    g.backward(loss).unwrap();
    let names: Vec<String> = g
        .collect_param_grads()
        .iter()
        .map(|(pid, _)| gpt.store.get(*pid).name.clone())
        .collect();
    assert!(names.iter().all(|n| !n.starts_with("base_m.") && !n.starts_with("music.")));
    assert!(names.iter().any(|n| n.starts_with("base_t.")));
    assert!(names.iter().any(|n| n.starts_with("head.")));
}

#[test]
fn both_paths_bind_the_identical_head_parameter_set() {
    let gpt = tiny_gpt(7);
    let head_ids: std::collections::HashSet<_> = gpt.head_param_ids().into_iter().collect();
    assert!(!head_ids.is_empty());
    let mut rng = Rng::seed_from_u64(8);
    let music_norm = rand_music(&mut rng, 16);

    let mut g = Graph::new();
    let feats = gpt.t_base(&mut g, 0, &[1, 2], false).unwrap();
    gpt.head(&mut g, feats, &HeadMode::Causal, false).unwrap();
    let text_bound: std::collections::HashSet<_> = g.bound_params().into_iter().collect();

    let mut g = Graph::new();
    let m = g.leaf(music_norm, vec![16, crate::data::C_M]);
    let memb = gpt.music_embedding(&mut g, m, false).unwrap();
    let feats = gpt.m_base(&mut g, memb, None, &[1, 2], false).unwrap();
    gpt.head(&mut g, feats, &HeadMode::Causal, false).unwrap();
    let music_bound: std::collections::HashSet<_> = g.bound_params().into_iter().collect();

    // the same storage ids, not merely equal values
    assert!(head_ids.iter().all(|id| text_bound.contains(id)));
    assert!(head_ids.iter().all(|id| music_bound.contains(id)));
}

#[test]
fn generate_is_deterministic_and_respects_max_len() {
    let gpt = tiny_gpt(9);
    let mut rng = Rng::seed_from_u64(1);
    let music = MusicFeatures::new(32, crate::data::C_M, rand_music(&mut rng, 32));
    let spec = GenerateSpec {
        music: &music,
        genre: None,
        max_len: 8,
        seed: 42,
        decode: Decode::Greedy,
    };
    let a = gpt.generate(&spec).unwrap();
    let b = gpt.generate(&spec).unwrap();
    assert_eq!(a, b);
    assert!(a.len() <= 8);

    let one = GenerateSpec {
        music: &music,
        genre: None,
        max_len: 1,
        seed: 42,
        decode: Decode::Greedy,
    };
    assert!(gpt.generate(&one).unwrap().len() <= 1);

    let over = GenerateSpec {
        music: &music,
        genre: None,
        max_len: 100,
        seed: 0,
        decode: Decode::Greedy,
    };
    assert!(gpt.generate(&over).is_err());
}

#[test]
fn top_k_sampling_is_seeded_and_in_vocab() {
    let gpt = tiny_gpt(10);
    let mut rng = Rng::seed_from_u64(2);
    let music = MusicFeatures::new(32, crate::data::C_M, rand_music(&mut rng, 32));
    let spec = GenerateSpec {
        music: &music,
        genre: None,
        max_len: 8,
        seed: 5,
        decode: Decode::TopK(3),
    };
    let a = gpt.generate(&spec).unwrap();
    let b = gpt.generate(&spec).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|&t| t < 8));
}

#[test]
fn alternate_train_memorizes_a_tiny_corpus() {
    let cfg = {
        let mut c = tiny_cfg();
        c.gpt_steps = 240;
        c.gpt_batch = 2;
        c.gpt_lr = 3e-3;
        c.corrupt_tau = 0.1;
        c
    };
    let mut gpt = CrossModalGpt::new(GptDims::from_config(&cfg), 11);
    let mut rng = Rng::seed_from_u64(21);
    let text: Vec<TextSample> = (0..2)
        .map(|i| TextSample {
            template: i,
            tokens: (0..10).map(|t| (t * (i + 2)) % 8).collect(),
        })
        .collect();
    let music: Vec<MusicSample> = (0..2)
        .map(|i| MusicSample {
            genre: i,
            music_norm: rand_music(&mut rng, 40),
            music_frames: 40,
            tokens: (0..10).map(|t| (t + 3 * i) % 8).collect(),
        })
        .collect();
    let before_t = nll_text(&gpt, &text).unwrap();
    let before_m = nll_music(&gpt, &music).unwrap();
    alternate_train(&mut gpt, &text, &music, &cfg, 3).unwrap();
    let after_t = nll_text(&gpt, &text).unwrap();
    let after_m = nll_music(&gpt, &music).unwrap();
    assert!(after_t < before_t * 0.25, "text NLL {before_t} -> {after_t}");
    assert!(after_m < before_m * 0.25, "music NLL {before_m} -> {after_m}");
}

#[test]
fn alternate_train_requires_both_corpora() {
    let cfg = tiny_cfg();
    let mut gpt = CrossModalGpt::new(GptDims::from_config(&cfg), 1);
    let err = alternate_train(&mut gpt, &[], &[], &cfg, 0).unwrap_err();
    assert!(err.to_string().contains("both"));
}

#[test]
fn checkpoint_round_trip_preserves_every_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gpt.ckpt");
    let cfg = tiny_cfg();
    let gpt = CrossModalGpt::new(GptDims::from_config(&cfg), 13);
    gpt.save(&path, 13, cfg.to_lines()).unwrap();
    let back = CrossModalGpt::load(&path, &cfg, "test").unwrap();
    assert_eq!(gpt.store.hash_all(), back.store.hash_all());
}
