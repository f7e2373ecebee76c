use super::*;
use crate::data::{gen_corpus, preprocess, C_D};

fn test_dims() -> VqVaeDims {
    VqVaeDims {
        c_d: C_D,
        width: 16,
        codebook_size: 8,
        codebook_dim: 6,
        downsample: 4,
        beta: 0.02,
    }
}

#[test]
fn encode_downsamples_by_exactly_l() {
    let vq = VqVae::new(test_dims(), 0);
    let m = MotionSequence::zeros(128, C_D, 16);
    let latents = vq.encode(&m).unwrap();
    assert_eq!(latents.len(), 32);
    assert_eq!(latents[0].len(), 6);
}

#[test]
fn zero_input_yields_finite_latents() {
    let vq = VqVae::new(test_dims(), 1);
    let m = MotionSequence::zeros(64, C_D, 16);
    let latents = vq.encode(&m).unwrap();
    assert!(latents.iter().flatten().all(|v| v.is_finite()));
}

#[test]
fn encode_rejects_indivisible_length() {
    let vq = VqVae::new(test_dims(), 0);
    let m = MotionSequence::zeros(66, C_D, 16);
    assert!(matches!(
        vq.encode(&m).unwrap_err(),
        Error::IndivisibleLength { frames: 66, l: 4 }
    ));
}

#[test]
fn latents_are_local_up_to_the_receptive_field() {
    let vq = VqVae::new(test_dims(), 3);
    let mut rng = Rng::seed_from_u64(5);
    let base: Vec<f32> = (0..128 * C_D).map(|_| rng.normal_f32()).collect();
    let mut other = base.clone();
    for t in 96..128 {
        for c in 0..C_D {
            other[t * C_D + c] += 1.0 + rng.normal_f32();
        }
    }
    let la = vq.encode(&MotionSequence::new(128, C_D, 16, base)).unwrap();
    let lb = vq.encode(&MotionSequence::new(128, C_D, 16, other)).unwrap();
    let specs = encoder_specs();
    let mut checked = 0;
    for i in 0..la.len() {
        let (_, hi) = receptive_interval(&specs, i);
        if hi < 96 {
            assert_eq!(la[i], lb[i], "latent {i} reaches only up to input {hi}");
            checked += 1;
        }
    }
    assert!(checked >= 16, "receptive field unexpectedly wide");
}

#[test]
fn quantize_is_a_fixed_point_on_codebook_rows() {
    let vq = VqVae::new(test_dims(), 7);
    let code = &vq.store.get(vq.store.id("codebook").unwrap()).data;
    let j = 5usize;
    let row: Vec<f32> = code[j * 6..(j + 1) * 6].to_vec();
    let (tokens, rows) = vq.quantize(&[row.clone()]).unwrap();
    assert_eq!(tokens, vec![j]);
    assert_eq!(rows[0], row);
}

#[test]
fn quantize_ties_break_to_lowest_index() {
    let mut vq = VqVae::new(test_dims(), 7);
    // duplicate entry 2 into entry 6
    let cb_id = vq.store.id("codebook").unwrap();
    let cb = vq.store.data_mut(cb_id);
    let dup: Vec<f32> = cb[2 * 6..3 * 6].to_vec();
    cb[6 * 6..7 * 6].copy_from_slice(&dup);
    let (tokens, _) = vq.quantize(&[dup]).unwrap();
    assert_eq!(tokens, vec![2]);
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// The quantizer must agree with an exhaustive scan using the
        /// expanded form ||a||^2 - 2 a.b + ||b||^2 in f64.
        #[test]
        fn quantizer_matches_exhaustive_oracle(seed in 0u64..5000) {
            let vq = VqVae::new(test_dims(), 11);
            let mut rng = crate::rngx::Rng::seed_from_u64(seed);
            let latent: Vec<f32> = (0..6).map(|_| rng.normal_f32()).collect();
            let code = &vq.store.get(vq.store.id("codebook").unwrap()).data;
            let la2: f64 = latent.iter().map(|&v| (v as f64) * (v as f64)).sum();
            let mut best = (usize::MAX, f64::INFINITY);
            for j in 0..8 {
                let row = &code[j * 6..(j + 1) * 6];
                let rb2: f64 = row.iter().map(|&v| (v as f64) * (v as f64)).sum();
                let dot: f64 =
                    latent.iter().zip(row).map(|(&a, &b)| a as f64 * b as f64).sum();
                let dist = la2 - 2.0 * dot + rb2;
                if dist < best.1 {
                    best = (j, dist);
                }
            }
            let (tokens, _) = vq.quantize(&[latent]).unwrap();
            prop_assert_eq!(tokens[0], best.0);
        }
    }
}

#[test]
fn decode_shape_and_range_checks() {
    let vq = VqVae::new(test_dims(), 13);
    let m = vq.decode(&vec![3usize; 32]).unwrap();
    assert_eq!((m.frames, m.channels), (128, C_D));
    assert!(vq.decode(&[8]).is_err());
}

#[test]
fn encode_decode_preserves_frame_count() {
    let vq = VqVae::new(test_dims(), 17);
    let mut rng = Rng::seed_from_u64(2);
    let data: Vec<f32> = (0..96 * C_D).map(|_| rng.normal_f32()).collect();
    let m = MotionSequence::new(96, C_D, 16, data);
    let tokens = vq.encode_tokens(&m).unwrap();
    assert_eq!(tokens.len(), 24);
    let out = vq.decode(&tokens).unwrap();
    assert_eq!(out.frames, 96);
}

#[test]
fn loss_is_zero_for_perfect_reconstruction() {
    let mut g: Graph<f32> = Graph::new();
    let m = g.leaf(vec![0.5; 12], vec![4, 3]);
    let e = g.leaf(vec![1.5; 6], vec![2, 3]);
    let loss = vqvae_loss(&mut g, m, m, e, e, 0.02).unwrap();
    assert_eq!(g.scalar(loss), 0.0);
}

#[test]
fn loss_is_one_for_unit_offset_reconstruction() {
    let mut g: Graph<f32> = Graph::new();
    let m = g.leaf(vec![0.5; 12], vec![4, 3]);
    let m_hat = g.add_const(m, 1.0);
    let e = g.leaf(vec![1.5; 6], vec![2, 3]);
    let loss = vqvae_loss(&mut g, m_hat, m, e, e, 0.02).unwrap();
    assert!((g.scalar(loss) - 1.0).abs() < 1e-6);
}

#[test]
fn doubling_beta_doubles_the_commitment_contribution() {
    let mut rng = Rng::seed_from_u64(3);
    let e_data: Vec<f32> = (0..6).map(|_| rng.normal_f32()).collect();
    let h_data: Vec<f32> = (0..6).map(|_| rng.normal_f32()).collect();
    let eval = |beta: f64| -> f64 {
        let mut g: Graph<f32> = Graph::new();
        let m = g.leaf(vec![0.0; 12], vec![4, 3]);
        let e = g.leaf(e_data.clone(), vec![2, 3]);
        let h = g.leaf(h_data.clone(), vec![2, 3]);
        let loss = vqvae_loss(&mut g, m, m, e, h, beta).unwrap();
        g.scalar(loss)
    };
    let commit: f64 = e_data
        .iter()
        .zip(&h_data)
        .map(|(&a, &b)| ((a - b) as f64).powi(2))
        .sum::<f64>()
        / 6.0;
    let base = eval(0.0);
    let c1 = eval(0.02) - base;
    let c2 = eval(0.04) - base;
    assert!((c1 - 0.02 * commit).abs() < 1e-6);
    assert!((c2 - 2.0 * c1).abs() < 1e-6);
}

#[test]
fn stop_gradients_route_each_term_to_the_right_side() {
    // codebook term trains the encoder side; beta term trains the codebook
    let mut g: Graph<f32> = Graph::new();
    let m = g.leaf(vec![0.0; 12], vec![4, 3]);
    let e = g.leaf_grad(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![2, 3]);
    let h = g.leaf_grad(vec![0.5; 6], vec![2, 3]);
    let loss = vqvae_loss(&mut g, m, m, e, h, 0.5).unwrap();
    g.backward(loss).unwrap();
    let de = g.grad(e).unwrap();
    let dh = g.grad(h).unwrap();
    // d/de of beta * mean((e - sg[h])^2) = beta * 2 (e - h) / n
    for i in 0..6 {
        let expect_e = 0.5 * 2.0 * (g.data(e)[i] - 0.5) / 6.0;
        let expect_h = -2.0 * (g.data(e)[i] - 0.5) / 6.0;
        assert!((de[i] - expect_e).abs() < 1e-6);
        assert!((dh[i] - expect_h).abs() < 1e-6);
    }
}

#[test]
fn straight_through_reaches_encoder_parameters() {
    let dims = test_dims();
    let vq = VqVae::new(dims, 19);
    let mut g: Graph<f32> = Graph::new();
    let mut rng = Rng::seed_from_u64(4);
    let data: Vec<f32> = (0..64 * C_D).map(|_| rng.normal_f32()).collect();
    let x = g.leaf(data, vec![64, C_D]);
    let latents = vq.build_encoder(&mut g, x, true).unwrap();
    let rows: Vec<Vec<f32>> = {
        let d = g.data(latents);
        (0..16).map(|i| d[i * 6..(i + 1) * 6].to_vec()).collect()
    };
    let (tokens, _) = vq.quantize(&rows).unwrap();
    let code = g.param(&vq.store, vq.store.id("codebook").unwrap(), true);
    let e_sel = g.embed(code, &tokens).unwrap();
    let hard = g.data(e_sel).to_vec();
    let st = g.straight_through(latents, hard).unwrap();
    let recon = vq.build_decoder(&mut g, st, true).unwrap();
    let loss = vqvae_loss(&mut g, recon, x, e_sel, latents, 0.02).unwrap();
    g.backward(loss).unwrap();
    let grads = g.collect_param_grads();
    let named: Vec<&str> = grads
        .iter()
        .map(|(pid, _)| vq.store.get(*pid).name.as_str())
        .collect();
    assert!(named.contains(&"enc.in.w"), "encoder got no gradient: {named:?}");
    assert!(named.contains(&"codebook"));
    assert!(named.contains(&"dec.out.w"));
}

#[test]
fn short_training_is_deterministic_and_reduces_loss() {
    let corpus = gen_corpus(2, 2, 2, 1, 64, 3).unwrap();
    let (prep, _) = preprocess(&corpus, 64, 40).unwrap();
    let mut cfg = crate::config::RunConfig::desk();
    cfg.vq_codebook_size = 8;
    cfg.vq_codebook_dim = 6;
    cfg.vq_width = 16;
    cfg.vq_steps = 40;
    cfg.vq_batch = 2;
    let (vq1, log1) = train_vqvae(&prep, &cfg, 123).unwrap();
    let (vq2, _) = train_vqvae(&prep, &cfg, 123).unwrap();
    assert_eq!(vq1.store.hash_all(), vq2.store.hash_all());
    let first = log1.recon_curve.first().unwrap().1;
    let last = log1.recon_curve.last().unwrap().1;
    assert!(last < first, "no progress: {first} -> {last}");
}
