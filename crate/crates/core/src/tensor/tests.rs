use super::gradcheck::{grad_check, CheckInput, ScalarProgram};
use super::graph::{Graph, TensorId};
use super::optim::{AdamW, AdamWConfig};
use super::params::{Init, ParamStore};
use super::scalar::Scalar;
use crate::error::TensorError;
use crate::rngx::Rng;

fn rand_input(rng: &mut Rng, shape: &[usize]) -> CheckInput {
    let n: usize = shape.iter().product();
    // Offset away from zero so kinked ops (relu, abs) stay differentiable
    // at every probe point.
    let data = (0..n)
        .map(|_| {
            let v = rng.normal();
            v + 0.25 * v.signum()
        })
        .collect();
    CheckInput::new(data, shape.to_vec())
}

macro_rules! program {
    ($name:ident, |$g:ident, $inp:ident| $body:expr) => {
        struct $name;
        impl ScalarProgram for $name {
            fn build<E: Scalar>(
                &self,
                $g: &mut Graph<E>,
                $inp: &[TensorId],
            ) -> Result<TensorId, TensorError> {
                $body
            }
        }
    };
}

#[test]
fn matmul_identity() {
    let mut g: Graph<f32> = Graph::new();
    let a = g.leaf(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![2, 3]);
    let eye = g.leaf(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], vec![3, 3]);
    let c = g.matmul(a, eye).unwrap();
    assert_eq!(g.data(c), g.data(a));
}

#[test]
fn matmul_hand_computed() {
    let mut g: Graph<f32> = Graph::new();
    let a = g.leaf(vec![1.0, 2.0, 3.0, 4.0], vec![2, 2]);
    let b = g.leaf(vec![5.0, 6.0, 7.0, 8.0], vec![2, 2]);
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.data(c), &[19.0, 22.0, 43.0, 50.0]);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut g: Graph<f32> = Graph::new();
    let a = g.leaf(vec![0.0; 6], vec![2, 3]);
    let b = g.leaf(vec![0.0; 8], vec![4, 2]);
    let err = g.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "got: {msg}");
}

#[test]
fn matmul_transpose_flags_match_explicit() {
    let mut rng = Rng::seed_from_u64(11);
    let a: Vec<f32> = (0..6).map(|_| rng.normal_f32()).collect();
    let b: Vec<f32> = (0..6).map(|_| rng.normal_f32()).collect();
    // A [2,3] times B [2,3]^T = [2,2]
    let mut g: Graph<f32> = Graph::new();
    let ta = g.leaf(a.clone(), vec![2, 3]);
    let tb = g.leaf(b.clone(), vec![2, 3]);
    let c = g.matmul_t(ta, tb, false, true).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            let mut acc = 0.0;
            for p in 0..3 {
                acc += a[i * 3 + p] * b[j * 3 + p];
            }
            assert!((g.data(c)[i * 2 + j] - acc).abs() < 1e-6);
        }
    }
}

program!(MatmulSum, |g, inp| {
    let c = g.matmul(inp[0], inp[1])?;
    Ok(g.sum_all(c))
});

#[test]
fn matmul_grad_matches_finite_differences() {
    let mut rng = Rng::seed_from_u64(7);
    let a = rand_input(&mut rng, &[3, 4]);
    let b = rand_input(&mut rng, &[4, 2]);
    let err = grad_check(&MatmulSum, &[a, b], 1e-3).unwrap();
    assert!(err < 1e-4, "matmul rel err {err}");
}

program!(MatmulTtSum, |g, inp| {
    let c = g.matmul_t(inp[0], inp[1], true, true)?;
    let d = g.mul(c, c)?;
    Ok(g.sum_all(d))
});

#[test]
fn matmul_transposed_grads_match_finite_differences() {
    let mut rng = Rng::seed_from_u64(13);
    let a = rand_input(&mut rng, &[4, 3]); // logical [3,4] via ta
    let b = rand_input(&mut rng, &[2, 4]); // logical [4,2] via tb
    let err = grad_check(&MatmulTtSum, &[a, b], 1e-3).unwrap();
    assert!(err < 1e-4, "matmul_tt rel err {err}");
}

#[test]
fn softmax_symmetry_and_stability() {
    let mut g: Graph<f32> = Graph::new();
    let x = g.leaf(vec![0.0, 0.0], vec![1, 2]);
    let y = g.softmax_lastdim(x).unwrap();
    assert_eq!(g.data(y), &[0.5, 0.5]);

    let x = g.leaf(vec![1000.0, 0.0], vec![1, 2]);
    let y = g.softmax_lastdim(x).unwrap();
    let d = g.data(y);
    assert!(d.iter().all(|v| v.is_finite()));
    assert!((d[0] as f64 - 1.0).abs() < 1e-9);
    assert!((d[1] as f64).abs() < 1e-9);
}

#[test]
fn softmax_rows_sum_to_one_under_large_magnitudes() {
    let mut rng = Rng::seed_from_u64(5);
    for _ in 0..10 {
        let mut g: Graph<f32> = Graph::new();
        let data: Vec<f32> = (0..8).map(|_| (rng.range(-1e4, 1e4)) as f32).collect();
        let x = g.leaf(data, vec![1, 8]);
        let y = g.softmax_lastdim(x).unwrap();
        let sum: f64 = g.data(y).iter().map(|&v| v as f64).sum();
        assert!((sum - 1.0).abs() < 1e-6, "row sum {sum}");
    }
}

program!(SoftmaxCe, |g, inp| {
    let s = g.softmax_lastdim(inp[0])?;
    let l = g.ln(s);
    let m = g.mean_all(l);
    Ok(g.scale(m, -1.0))
});

#[test]
fn softmax_grad_matches_finite_differences() {
    let mut rng = Rng::seed_from_u64(3);
    let x = rand_input(&mut rng, &[4, 5]);
    let err = grad_check(&SoftmaxCe, &[x], 1e-3).unwrap();
    assert!(err < 1e-4, "softmax rel err {err}");
}

#[test]
fn cross_entropy_uniform_logits_is_ln_v() {
    let mut g: Graph<f32> = Graph::new();
    let v = 66;
    let logits = g.leaf(vec![0.3; v], vec![1, v]);
    let loss = g.cross_entropy_mean(logits, &[17]).unwrap();
    assert!((g.scalar(loss) - (v as f64).ln()).abs() < 1e-6);
}

#[test]
fn cross_entropy_near_one_hot_is_near_zero() {
    let mut g: Graph<f32> = Graph::new();
    let mut data = vec![0.0f32; 4];
    data[2] = 20.0;
    let logits = g.leaf(data, vec![1, 4]);
    let loss = g.cross_entropy_mean(logits, &[2]).unwrap();
    assert!(g.scalar(loss) < 1e-8);
}

#[test]
fn cross_entropy_rejects_out_of_range_target() {
    let mut g: Graph<f32> = Graph::new();
    let logits = g.leaf(vec![0.0; 10], vec![2, 5]);
    let err = g.cross_entropy_mean(logits, &[1, 9]).unwrap_err();
    assert!(matches!(err, TensorError::IndexOutOfRange { .. }));
}

#[test]
fn cross_entropy_rejects_all_ignored() {
    let mut g: Graph<f32> = Graph::new();
    let logits = g.leaf(vec![0.0; 10], vec![2, 5]);
    let err = g.cross_entropy_mean(logits, &[-1, -1]).unwrap_err();
    assert!(matches!(err, TensorError::NoSupervisedPositions));
}

program!(CeLoss, |g, inp| {
    let c = g.matmul(inp[0], inp[1])?;
    g.cross_entropy_mean(c, &[1, 3, 0, 2])
});

#[test]
fn matmul_softmax_cross_entropy_chain_grad() {
    let mut rng = Rng::seed_from_u64(21);
    let a = rand_input(&mut rng, &[4, 4]);
    let b = rand_input(&mut rng, &[4, 4]);
    let err = grad_check(&CeLoss, &[a, b], 1e-3).unwrap();
    assert!(err < 1e-4, "ce chain rel err {err}");
}

program!(ConvChain, |g, inp| {
    let y = g.conv1d(inp[0], inp[1], inp[2], 2, 1)?;
    let a = g.gelu(y);
    let z = g.convt1d(a, inp[3], inp[4], 2, 1)?;
    let sq = g.mul(z, z)?;
    Ok(g.mean_all(sq))
});

#[test]
fn conv_chain_grad_matches_finite_differences() {
    let mut rng = Rng::seed_from_u64(31);
    let x = rand_input(&mut rng, &[8, 1]); // 1x8 input, channel-last
    let w = rand_input(&mut rng, &[2, 4, 1]);
    let b = rand_input(&mut rng, &[2]);
    let wt = rand_input(&mut rng, &[4, 2, 1]);
    let bt = rand_input(&mut rng, &[1]);
    let err = grad_check(&ConvChain, &[x, w, b, wt, bt], 1e-3).unwrap();
    assert!(err < 1e-4, "conv chain rel err {err}");
}

#[test]
fn conv1d_stride_4_downsamples_128_to_32() {
    let mut g: Graph<f32> = Graph::new();
    let x = g.leaf(vec![0.5; 128 * 3], vec![128, 3]);
    let w = g.leaf(vec![0.1; 2 * 4 * 3], vec![2, 4, 3]);
    let b = g.leaf(vec![0.0; 2], vec![2]);
    let y = g.conv1d(x, w, b, 4, 0).unwrap();
    assert_eq!(g.shape(y), &[32, 2]);
}

#[test]
fn convt1d_doubles_length() {
    let mut g: Graph<f32> = Graph::new();
    let x = g.leaf(vec![0.5; 16 * 3], vec![16, 3]);
    let w = g.leaf(vec![0.1; 4 * 3 * 2], vec![4, 3, 2]);
    let b = g.leaf(vec![0.0; 2], vec![2]);
    let y = g.convt1d(x, w, b, 2, 1).unwrap();
    assert_eq!(g.shape(y), &[32, 2]);
}

#[test]
fn layer_norm_rows_are_standardized() {
    let mut rng = Rng::seed_from_u64(9);
    let mut g: Graph<f32> = Graph::new();
    let data: Vec<f32> = (0..6 * 32).map(|_| rng.normal_f32() * 3.0 + 1.0).collect();
    let x = g.leaf(data, vec![6, 32]);
    let gamma = g.leaf(vec![1.0; 32], vec![32]);
    let beta = g.leaf(vec![0.0; 32], vec![32]);
    let y = g.layer_norm(x, gamma, beta, 1e-5).unwrap();
    for r in 0..6 {
        let row = &g.data(y)[r * 32..(r + 1) * 32];
        let mean: f64 = row.iter().map(|&v| v as f64).sum::<f64>() / 32.0;
        let var: f64 = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / 32.0;
        assert!(mean.abs() < 1e-6, "row mean {mean}");
        assert!((var - 1.0).abs() < 1e-4, "row var {var}");
    }
}

program!(NormChain, |g, inp| {
    let y = g.layer_norm(inp[0], inp[1], inp[2], 1e-5)?;
    let a = g.gelu(y);
    Ok(g.sum_all(a))
});

#[test]
fn layer_norm_grad_matches_finite_differences() {
    let mut rng = Rng::seed_from_u64(41);
    let x = rand_input(&mut rng, &[3, 6]);
    let gamma = rand_input(&mut rng, &[6]);
    let beta = rand_input(&mut rng, &[6]);
    let err = grad_check(&NormChain, &[x, gamma, beta], 1e-3).unwrap();
    assert!(err < 1e-4, "layer_norm rel err {err}");
}

program!(MixedUnary, |g, inp| {
    let r = g.relu(inp[0]);
    let s = g.sigmoid(r);
    let t = g.softplus(s);
    let u = g.abs(t);
    let c = g.clamp_min(u, 0.25);
    let l = g.ln(c);
    Ok(g.mean_all(l))
});

#[test]
fn unary_ops_grads_match_finite_differences() {
    let mut rng = Rng::seed_from_u64(51);
    let x = rand_input(&mut rng, &[4, 4]);
    let err = grad_check(&MixedUnary, &[x], 1e-3).unwrap();
    assert!(err < 1e-4, "unary rel err {err}");
}

program!(StructuralOps, |g, inp| {
    let bias = g.add_bias_row(inp[0], inp[1])?;
    let sc = g.add_scalar_t(bias, inp[2])?;
    let left = g.slice_cols(sc, 0, 2)?;
    let right = g.slice_cols(sc, 2, 2)?;
    let cat = g.concat_cols(&[left, right])?;
    let rep = g.repeat_row(inp[3], 4)?;
    let sum = g.add(cat, rep)?;
    let pooled = g.avg_pool_rows(sum, 2)?;
    let m = g.mean_rows(pooled)?;
    Ok(g.sum_all(m))
});

#[test]
fn structural_ops_grads_match_finite_differences() {
    let mut rng = Rng::seed_from_u64(61);
    let x = rand_input(&mut rng, &[4, 4]);
    let b = rand_input(&mut rng, &[4]);
    let s = rand_input(&mut rng, &[1]);
    let row = rand_input(&mut rng, &[4]);
    let err = grad_check(&StructuralOps, &[x, b, s, row], 1e-3).unwrap();
    assert!(err < 1e-4, "structural rel err {err}");
}

program!(MaskedAttentionToy, |g, inp| {
    let scores = g.matmul_t(inp[0], inp[0], false, true)?;
    let masked = g.causal_mask(scores)?;
    let probs = g.softmax_lastdim(masked)?;
    let out = g.matmul(probs, inp[1])?;
    let sq = g.mul(out, out)?;
    Ok(g.mean_all(sq))
});

#[test]
fn causal_mask_grad_matches_finite_differences() {
    let mut rng = Rng::seed_from_u64(71);
    let q = rand_input(&mut rng, &[5, 3]);
    let v = rand_input(&mut rng, &[5, 2]);
    let err = grad_check(&MaskedAttentionToy, &[q, v], 1e-3).unwrap();
    assert!(err < 1e-4, "causal attention rel err {err}");
}

program!(KeyMaskToy, |g, inp| {
    let scores = g.matmul_t(inp[0], inp[0], false, true)?;
    let masked = g.key_mask(scores, &[true, false, true, false, true])?;
    let probs = g.softmax_lastdim(masked)?;
    let post = g.col_mask01(probs, &[true, true, false, true, true])?;
    let out = g.matmul(post, inp[1])?;
    Ok(g.sum_all(out))
});

#[test]
fn key_mask_grad_matches_finite_differences() {
    let mut rng = Rng::seed_from_u64(81);
    let q = rand_input(&mut rng, &[5, 3]);
    let v = rand_input(&mut rng, &[5, 2]);
    let err = grad_check(&KeyMaskToy, &[q, v], 1e-3).unwrap();
    assert!(err < 1e-4, "key mask rel err {err}");
}

program!(EmbedToy, |g, inp| {
    let rows = g.embed(inp[0], &[2, 0, 2, 1])?;
    let sq = g.mul(rows, rows)?;
    Ok(g.sum_all(sq))
});

#[test]
fn embed_grad_matches_finite_differences() {
    let mut rng = Rng::seed_from_u64(91);
    let table = rand_input(&mut rng, &[3, 4]);
    let err = grad_check(&EmbedToy, &[table], 1e-3).unwrap();
    assert!(err < 1e-4, "embed rel err {err}");
}

#[test]
fn embed_rejects_out_of_range_index() {
    let mut g: Graph<f32> = Graph::new();
    let t = g.leaf(vec![0.0; 12], vec![3, 4]);
    assert!(matches!(
        g.embed(t, &[3]).unwrap_err(),
        TensorError::IndexOutOfRange { .. }
    ));
}

program!(ConstProgram, |g, _inp| {
    let c = g.leaf(vec![E::from_f64(3.5)], vec![1]);
    Ok(g.detach(c))
});

#[test]
fn constant_program_has_exactly_zero_gradient() {
    let x = CheckInput::new(vec![1.0, 2.0], vec![2]);
    let err = grad_check(&ConstProgram, &[x], 1e-3).unwrap();
    assert_eq!(err, 0.0);
}

#[test]
fn detach_blocks_gradient_flow() {
    let mut g: Graph<f32> = Graph::new();
    let x = g.leaf_grad(vec![2.0, 3.0], vec![2]);
    let d = g.detach(x);
    let y = g.mul(d, d).unwrap();
    let loss = g.sum_all(y);
    g.backward(loss).unwrap();
    assert!(g.grad(x).is_none());
}

#[test]
fn straight_through_passes_gradient_and_hard_values() {
    let mut g: Graph<f32> = Graph::new();
    let soft = g.leaf_grad(vec![0.1, 0.9], vec![2]);
    let st = g.straight_through(soft, vec![5.0, -5.0]).unwrap();
    assert_eq!(g.data(st), &[5.0, -5.0]);
    let loss = g.sum_all(st);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(soft).unwrap(), &[1.0, 1.0]);
}

#[test]
fn forward_is_bit_identical_across_runs() {
    let run = || {
        let mut rng = Rng::seed_from_u64(123);
        let mut g: Graph<f32> = Graph::new();
        let data: Vec<f32> = (0..64).map(|_| rng.normal_f32()).collect();
        let x = g.leaf(data, vec![8, 8]);
        let s = g.softmax_lastdim(x).unwrap();
        let y = g.matmul(s, x).unwrap();
        let z = g.gelu(y);
        g.data(z).to_vec()
    };
    assert_eq!(run(), run());
}

#[test]
fn adamw_moves_only_params_with_grads() {
    let mut rng = Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let a = store.add_init("a", vec![4], Init::Normal(1.0), &mut rng);
    let b = store.add_init("b", vec![4], Init::Normal(1.0), &mut rng);
    let before_b = store.get(b).data.clone();
    let mut opt = AdamW::new(AdamWConfig::new(1e-2, 0.9, 0.99));
    opt.step(&mut store, &[(a, vec![1.0, 1.0, 1.0, 1.0])]);
    assert_eq!(store.get(b).data, before_b);
    assert_ne!(store.get(a).data, vec![0.0; 4]);
}

#[test]
fn param_grads_accumulate_across_bindings() {
    let mut rng = Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let p = store.add_init("p", vec![2], Init::Normal(1.0), &mut rng);
    let mut g: Graph<f32> = Graph::new();
    let x1 = g.param(&store, p, true);
    let x2 = g.param(&store, p, true);
    let s = g.add(x1, x2).unwrap();
    let loss = g.sum_all(s);
    g.backward(loss).unwrap();
    let grads = g.collect_param_grads();
    assert_eq!(grads.len(), 1);
    assert_eq!(grads[0].1, vec![2.0, 2.0]);
}
