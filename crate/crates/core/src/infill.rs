//! Keyframe control: user clips are encoded to tokens and pinned, the k
//! tokens on each side are regenerated by the head running mask attention,
//! and everything outside the windows passes through untouched.

use std::path::Path;

use crate::config::RunConfig;
use crate::data::MotionSequence;
use crate::error::{Error, Result};
use crate::gpt::{CrossModalGpt, HeadMode, MusicSample};
use crate::rngx::Rng;
use crate::tensor::{AdamW, AdamWConfig, Graph};
use crate::vqvae::VqVae;

pub const STAGE: &str = "infill";

/// Keyframes: strictly increasing token positions, each pinned to a motion
/// clip of exactly `l` frames (one token).
#[derive(Clone, Debug)]
pub struct KeyframeSpec {
    pub entries: Vec<(usize, MotionSequence)>,
}

impl KeyframeSpec {
    pub fn validate(&self, l: usize, seq_len: usize) -> Result<()> {
        let mut prev: Option<usize> = None;
        for (pos, clip) in &self.entries {
            if *pos >= seq_len {
                return Err(Error::Invalid(format!(
                    "keyframe position {pos} outside sequence of {seq_len} tokens"
                )));
            }
            if let Some(p) = prev {
                if *pos <= p {
                    return Err(Error::Invalid(
                        "keyframe positions must be strictly increasing".into(),
                    ));
                }
            }
            if clip.frames != l {
                return Err(Error::Invalid(format!(
                    "keyframe clip at {pos} has {} frames, expected exactly {l}",
                    clip.frames
                )));
            }
            prev = Some(*pos);
        }
        Ok(())
    }
}

/// Per-position KNOWN/PREDICT flags; `known[i] == true` means position i is
/// visible context.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InfillMask {
    pub known: Vec<bool>,
}

impl InfillMask {
    pub fn predict_positions(&self) -> Vec<usize> {
        self.known
            .iter()
            .enumerate()
            .filter_map(|(i, &k)| (!k).then_some(i))
            .collect()
    }
}

/// PREDICT the k positions before and after each keyframe (clamped at the
/// boundaries, unioned across keyframes); keyframes themselves stay KNOWN.
pub fn build_infill_mask(positions: &[usize], k: usize, len: usize) -> Result<InfillMask> {
    let mut known = vec![true; len];
    for &p in positions {
        if p >= len {
            return Err(Error::Invalid(format!(
                "keyframe position {p} outside sequence of {len} tokens"
            )));
        }
        let lo = p.saturating_sub(k);
        let hi = (p + k).min(len.saturating_sub(1));
        for i in lo..=hi {
            known[i] = false;
        }
    }
    for &p in positions {
        known[p] = true;
    }
    Ok(InfillMask { known })
}

#[derive(Clone, Debug, Default)]
pub struct InfillTrainLog {
    pub loss_curve: Vec<(usize, f64)>,
    pub skipped_batches: usize,
}

/// Retrain the head (and the mask embedding) for masked prediction; base
/// layers, token/positional embeddings and the music MLP stay frozen, and
/// that freeze is enforced by a hash check at the end.
pub fn train_infill(
    gpt: &mut CrossModalGpt,
    music_corpus: &[MusicSample],
    cfg: &RunConfig,
    seed: u64,
) -> Result<InfillTrainLog> {
    if music_corpus.is_empty() {
        return Err(Error::Invalid("empty corpus".into()));
    }
    let frozen_before = frozen_hash(gpt);
    let mut rng = Rng::derive(seed, "infill-train");
    let mut opt = AdamW::new(AdamWConfig::new(cfg.infill_lr as f32, 0.5, 0.99));
    let mut order: Vec<usize> = (0..music_corpus.len()).collect();
    let mut cursor = order.len();
    let mut log = InfillTrainLog::default();

    for step in 0..cfg.infill_steps {
        let mut g: Graph<f32> = Graph::new();
        let mut batch_loss = None;
        let mut supervised = 0usize;
        for _ in 0..cfg.infill_batch {
            if cursor >= order.len() {
                rng.shuffle(&mut order);
                cursor = 0;
            }
            let s = &music_corpus[order[cursor]];
            cursor += 1;
            let len = s.tokens.len();
            let mut known: Vec<bool> = (0..len).map(|_| rng.uniform() >= cfg.infill_mask_rate).collect();
            if known.iter().all(|&k| !k) {
                known[0] = true; // never all-PREDICT
            }
            if known.iter().all(|&k| k) {
                log.skipped_batches += 1;
                continue; // zero supervised positions
            }
            supervised += known.iter().filter(|&&k| !k).count();
            let music = g.leaf(s.music_norm.clone(), vec![s.music_frames, gpt.dims.c_m]);
            let memb = gpt.music_embedding(&mut g, music, false)?;
            let feats = gpt.m_base_masked(&mut g, memb, &s.tokens, &known, false, true)?;
            let mode = HeadMode::Masked {
                visible: known.clone(),
                post_softmax: cfg.mask_post_softmax,
            };
            let logits = gpt.head(&mut g, feats, &mode, true)?;
            let targets: Vec<i64> = s
                .tokens
                .iter()
                .zip(&known)
                .map(|(&t, &k)| if k { -1 } else { t as i64 })
                .collect();
            let loss = g.cross_entropy_mean(logits, &targets).map_err(Error::from)?;
            batch_loss = Some(match batch_loss {
                None => loss,
                Some(prev) => g.add(prev, loss).map_err(Error::from)?,
            });
        }
        let Some(sum) = batch_loss else {
            continue;
        };
        let _ = supervised;
        let total = g.scale(sum, 1.0 / cfg.infill_batch as f64);
        let v = g.finite_scalar(total).map_err(|_| Error::Divergence {
            stage: STAGE.into(),
            step,
        })?;
        g.backward(total).map_err(Error::from)?;
        let grads = g.collect_param_grads();
        opt.step(&mut gpt.store, &grads);
        if step % 20 == 0 || step + 1 == cfg.infill_steps {
            log.loss_curve.push((step, v));
        }
    }

    if frozen_hash(gpt) != frozen_before {
        return Err(Error::Invalid(
            "internal: infill training modified frozen base parameters".into(),
        ));
    }
    Ok(log)
}

/// Hash of everything the infill stage must not touch.
pub fn frozen_hash(gpt: &CrossModalGpt) -> [u8; 32] {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(gpt.store.hash_prefix("base_t."));
    h.update(gpt.store.hash_prefix("base_m."));
    h.update(gpt.store.hash_prefix("music."));
    h.update(gpt.store.hash_prefix("emb.token"));
    h.update(gpt.store.hash_prefix("emb.start"));
    h.update(gpt.store.hash_prefix("emb.text"));
    h.update(gpt.store.hash_prefix("emb.pos"));
    h.finalize().into()
}

/// Evaluate masked-position recovery accuracy over a corpus with seeded
/// random masks.
pub fn masked_recovery_accuracy(
    gpt: &CrossModalGpt,
    music_corpus: &[MusicSample],
    mask_rate: f64,
    seed: u64,
) -> Result<f64> {
    let mut rng = Rng::derive(seed, "infill-eval");
    let mut hit = 0usize;
    let mut total = 0usize;
    for s in music_corpus {
        let len = s.tokens.len();
        let mut known: Vec<bool> = (0..len).map(|_| rng.uniform() >= mask_rate).collect();
        if known.iter().all(|&k| !k) {
            known[0] = true;
        }
        if known.iter().all(|&k| k) {
            continue;
        }
        let predicted = predict_masked(gpt, &s.music_norm, s.music_frames, &s.tokens, &known, false)?;
        for i in 0..len {
            if !known[i] {
                total += 1;
                if predicted[i] == s.tokens[i] {
                    hit += 1;
                }
            }
        }
    }
    if total == 0 {
        return Err(Error::Invalid("no masked positions sampled".into()));
    }
    Ok(hit as f64 / total as f64)
}

/// One masked forward pass returning (argmax token, its softmax confidence)
/// per position.
fn predict_masked_scored(
    gpt: &CrossModalGpt,
    music_norm: &[f32],
    music_frames: usize,
    tokens: &[usize],
    known: &[bool],
) -> Result<Vec<(usize, f64)>> {
    let mut g: Graph<f32> = Graph::new();
    let music = g.leaf(music_norm.to_vec(), vec![music_frames, gpt.dims.c_m]);
    let memb = gpt.music_embedding(&mut g, music, false)?;
    let feats = gpt.m_base_masked(&mut g, memb, tokens, known, false, false)?;
    let mode = HeadMode::Masked {
        visible: known.to_vec(),
        post_softmax: false,
    };
    let logits = gpt.head(&mut g, feats, &mode, false)?;
    let data = g.data(logits);
    let vocab = gpt.dims.vocab();
    let v = gpt.dims.codebook_size;
    Ok((0..tokens.len())
        .map(|i| {
            let row = &data[i * vocab..i * vocab + v];
            let mut best = 0usize;
            let mut best_v = f32::NEG_INFINITY;
            for (j, &x) in row.iter().enumerate() {
                if x > best_v {
                    best_v = x;
                    best = j;
                }
            }
            let mx = best_v as f64;
            let denom: f64 = row.iter().map(|&x| ((x as f64) - mx).exp()).sum();
            (best, 1.0 / denom)
        })
        .collect())
}

/// One masked forward pass; returns argmax codebook tokens at every
/// position (callers take the PREDICT subset).
fn predict_masked(
    gpt: &CrossModalGpt,
    music_norm: &[f32],
    music_frames: usize,
    tokens: &[usize],
    known: &[bool],
    post_softmax: bool,
) -> Result<Vec<usize>> {
    let mut g: Graph<f32> = Graph::new();
    let music = g.leaf(music_norm.to_vec(), vec![music_frames, gpt.dims.c_m]);
    let memb = gpt.music_embedding(&mut g, music, false)?;
    let feats = gpt.m_base_masked(&mut g, memb, tokens, known, false, false)?;
    let mode = HeadMode::Masked {
        visible: known.to_vec(),
        post_softmax,
    };
    let logits = gpt.head(&mut g, feats, &mode, false)?;
    let data = g.data(logits);
    let vocab = gpt.dims.vocab();
    let v = gpt.dims.codebook_size;
    Ok((0..tokens.len())
        .map(|i| {
            let row = &data[i * vocab..i * vocab + v];
            let mut best = 0usize;
            let mut best_v = f32::NEG_INFINITY;
            for (j, &x) in row.iter().enumerate() {
                if x > best_v {
                    best_v = x;
                    best = j;
                }
            }
            best
        })
        .collect())
}

/// Masked logits at one position for the context-sensitivity check.
pub fn masked_logits_at(
    gpt: &CrossModalGpt,
    music_norm: &[f32],
    music_frames: usize,
    tokens: &[usize],
    known: &[bool],
    position: usize,
) -> Result<Vec<f32>> {
    let mut g: Graph<f32> = Graph::new();
    let music = g.leaf(music_norm.to_vec(), vec![music_frames, gpt.dims.c_m]);
    let memb = gpt.music_embedding(&mut g, music, false)?;
    let feats = gpt.m_base_masked(&mut g, memb, tokens, known, false, false)?;
    let mode = HeadMode::Masked {
        visible: known.to_vec(),
        post_softmax: false,
    };
    let logits = gpt.head(&mut g, feats, &mode, false)?;
    let vocab = gpt.dims.vocab();
    Ok(g.data(logits)[position * vocab..(position + 1) * vocab].to_vec())
}

#[derive(Clone, Debug)]
pub struct InfillOutcome {
    pub tokens: Vec<usize>,
    pub mask: InfillMask,
    pub keyframe_tokens: Vec<(usize, usize)>,
}

/// Pin keyframes, regenerate their k-neighborhoods, leave the rest alone.
///
/// Keyframe clips are encoded through the frozen VQ-VAE; the returned
/// sequence equals the input outside every window and equals the encoded
/// keyframe tokens at the pinned positions, by construction.
#[allow(clippy::too_many_arguments)]
pub fn infill(
    gpt: &CrossModalGpt,
    vq: &VqVae,
    music_norm: &[f32],
    music_frames: usize,
    tokens: &[usize],
    keyframes: &KeyframeSpec,
    k: usize,
    refine: usize,
) -> Result<InfillOutcome> {
    keyframes.validate(vq.dims.downsample, tokens.len())?;
    if keyframes.entries.is_empty() {
        return Ok(InfillOutcome {
            tokens: tokens.to_vec(),
            mask: InfillMask {
                known: vec![true; tokens.len()],
            },
            keyframe_tokens: Vec::new(),
        });
    }
    let mut current = tokens.to_vec();
    let mut keyframe_tokens = Vec::with_capacity(keyframes.entries.len());
    for (pos, clip) in &keyframes.entries {
        let latents = vq.encode(clip)?;
        let (toks, _) = vq.quantize(&latents)?;
        debug_assert_eq!(toks.len(), 1);
        current[*pos] = toks[0];
        keyframe_tokens.push((*pos, toks[0]));
    }
    let positions: Vec<usize> = keyframes.entries.iter().map(|(p, _)| *p).collect();
    let mask = build_infill_mask(&positions, k, tokens.len())?;
    let predict = mask.predict_positions();
    if predict.is_empty() {
        return Ok(InfillOutcome {
            tokens: current,
            mask,
            keyframe_tokens,
        });
    }

    // Progressive revelation: each pass commits the most confident of the
    // still-masked positions, so the gap shrinks toward the short-gap
    // patterns the head was trained on. One pass fills everything at once.
    let refine = refine.max(1);
    let mut revealed = vec![false; current.len()];
    let mut remaining: Vec<usize> = predict.clone();
    for pass in 0..refine {
        if remaining.is_empty() {
            break;
        }
        let known_now: Vec<bool> = mask
            .known
            .iter()
            .zip(&revealed)
            .map(|(&k, &r)| k || r)
            .collect();
        let scored = predict_masked_scored(gpt, music_norm, music_frames, &current, &known_now)?;
        let target_total = if pass + 1 == refine {
            predict.len()
        } else {
            (predict.len() * (pass + 1)).div_ceil(refine)
        };
        let already = predict.len() - remaining.len();
        let take = target_total.saturating_sub(already).max(1).min(remaining.len());
        let mut order: Vec<usize> = remaining.clone();
        order.sort_by(|&a, &b| {
            scored[b]
                .1
                .partial_cmp(&scored[a].1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        for &i in order.iter().take(take) {
            current[i] = scored[i].0;
            revealed[i] = true;
        }
        remaining.retain(|&i| !revealed[i]);
    }

    Ok(InfillOutcome {
        tokens: current,
        mask,
        keyframe_tokens,
    })
}

pub fn save_infill(gpt: &CrossModalGpt, path: &Path, seed: u64, config_echo: String) -> Result<()> {
    let mut ckpt = crate::ckpt::Checkpoint::new(STAGE, seed, config_echo);
    ckpt.push_store(&gpt.store);
    ckpt.push("norm.music_mean", vec![gpt.music_mean.len()], gpt.music_mean.clone());
    ckpt.push("norm.music_std", vec![gpt.music_std.len()], gpt.music_std.clone());
    crate::ckpt::write_checkpoint(path, &ckpt)
}
