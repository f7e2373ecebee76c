//! Motion VQ-VAE: projects every motion into a shared token space through a
//! learned codebook and reconstructs motion from tokens. Parameters are
//! frozen after pretraining; downstream stages only consume tokens.

use std::path::Path;

use crate::ckpt::{read_stage_checkpoint, write_checkpoint, Checkpoint};
use crate::config::RunConfig;
use crate::data::{Corpus, MotionSequence, NormStats};
use crate::error::{Error, Result, TensorError};
use crate::rngx::Rng;
use crate::tensor::{AdamW, AdamWConfig, Graph, Init, ParamStore, TensorId};

pub const STAGE: &str = "vqvae";

/// One conv layer spec: kernel, stride, padding. Used for receptive-field
/// bookkeeping as well as parameter construction.
#[derive(Clone, Copy, Debug)]
pub struct LayerSpec {
    pub k: usize,
    pub s: usize,
    pub p: usize,
}

#[derive(Clone, Debug)]
pub struct VqVaeDims {
    pub c_d: usize,
    pub width: usize,
    pub codebook_size: usize,
    pub codebook_dim: usize,
    pub downsample: usize,
    pub beta: f64,
}

impl VqVaeDims {
    pub fn from_config(cfg: &RunConfig, c_d: usize) -> Self {
        VqVaeDims {
            c_d,
            width: cfg.vq_width,
            codebook_size: cfg.vq_codebook_size,
            codebook_dim: cfg.vq_codebook_dim,
            downsample: cfg.vq_downsample,
            beta: cfg.vq_beta,
        }
    }
}

#[derive(Clone)]
pub struct VqVae {
    pub store: ParamStore,
    pub dims: VqVaeDims,
    pub stats: NormStats,
}

/// Composed input interval covered by one output position of a conv stack.
pub fn receptive_interval(specs: &[LayerSpec], out_index: usize) -> (isize, isize) {
    let mut lo = out_index as isize;
    let mut hi = out_index as isize;
    for spec in specs.iter().rev() {
        lo = lo * spec.s as isize - spec.p as isize;
        hi = hi * spec.s as isize - spec.p as isize + spec.k as isize - 1;
    }
    (lo, hi)
}

/// Encoder stack: two stride-2 blocks (k=4) with residual conv stacks in
/// between, then a 1x projection to the codebook dimension.
pub fn encoder_specs() -> Vec<LayerSpec> {
    vec![
        LayerSpec { k: 4, s: 2, p: 1 }, // in
        LayerSpec { k: 3, s: 1, p: 1 }, // res0.c1
        LayerSpec { k: 1, s: 1, p: 0 }, // res0.c2
        LayerSpec { k: 4, s: 2, p: 1 }, // down1
        LayerSpec { k: 3, s: 1, p: 1 }, // res1.c1
        LayerSpec { k: 1, s: 1, p: 0 }, // res1.c2
        LayerSpec { k: 3, s: 1, p: 1 }, // out
    ]
}

impl VqVae {
    pub fn new(dims: VqVaeDims, seed: u64) -> Self {
        let mut rng = Rng::derive(seed, "vqvae-init");
        let mut store = ParamStore::new();
        let w = dims.width;
        let d = dims.codebook_dim;
        let c = dims.c_d;
        let conv = |store: &mut ParamStore, rng: &mut Rng, name: &str, co: usize, k: usize, ci: usize| {
            let std = (2.0 / (ci * k) as f32).sqrt();
            store.add_init(&format!("{name}.w"), vec![co, k, ci], Init::Normal(std), rng);
            store.add_init(&format!("{name}.b"), vec![co], Init::Zeros, rng);
        };
        let tconv = |store: &mut ParamStore, rng: &mut Rng, name: &str, k: usize, ci: usize, co: usize| {
            let std = (2.0 / (ci * k) as f32).sqrt();
            store.add_init(&format!("{name}.w"), vec![k, ci, co], Init::Normal(std), rng);
            store.add_init(&format!("{name}.b"), vec![co], Init::Zeros, rng);
        };
        conv(&mut store, &mut rng, "enc.in", w, 4, c);
        conv(&mut store, &mut rng, "enc.res0.c1", w, 3, w);
        conv(&mut store, &mut rng, "enc.res0.c2", w, 1, w);
        conv(&mut store, &mut rng, "enc.down1", w, 4, w);
        conv(&mut store, &mut rng, "enc.res1.c1", w, 3, w);
        conv(&mut store, &mut rng, "enc.res1.c2", w, 1, w);
        {
            let std = 0.02 / (3.0 * w as f32).sqrt();
            store.add_init("enc.out.w", vec![d, 3, w], Init::Normal(std), &mut rng);
            store.add_init("enc.out.b", vec![d], Init::Zeros, &mut rng);
        }
        store.add_init(
            "codebook",
            vec![dims.codebook_size, d],
            Init::Normal(0.05),
            &mut rng,
        );
        conv(&mut store, &mut rng, "dec.in", w, 3, d);
        conv(&mut store, &mut rng, "dec.res0.c1", w, 3, w);
        conv(&mut store, &mut rng, "dec.res0.c2", w, 1, w);
        tconv(&mut store, &mut rng, "dec.up0", 4, w, w);
        conv(&mut store, &mut rng, "dec.res1.c1", w, 3, w);
        conv(&mut store, &mut rng, "dec.res1.c2", w, 1, w);
        tconv(&mut store, &mut rng, "dec.up1", 4, w, w);
        conv(&mut store, &mut rng, "dec.out", c, 3, w);
        let stats = NormStats {
            motion_mean: vec![0.0; c],
            motion_std: vec![1.0; c],
            music_mean: vec![0.0; crate::data::C_M],
            music_std: vec![1.0; crate::data::C_M],
        };
        VqVae { store, dims, stats }
    }

    fn p(&self, name: &str) -> crate::tensor::ParamId {
        self.store.id(name).unwrap_or_else(|| panic!("missing param {name}"))
    }

    fn conv_l(
        &self,
        g: &mut Graph<f32>,
        x: TensorId,
        name: &str,
        s: usize,
        pd: usize,
        trainable: bool,
    ) -> std::result::Result<TensorId, TensorError> {
        let w = g.param(&self.store, self.p(&format!("{name}.w")), trainable);
        let b = g.param(&self.store, self.p(&format!("{name}.b")), trainable);
        g.conv1d(x, w, b, s, pd)
    }

    fn tconv_l(
        &self,
        g: &mut Graph<f32>,
        x: TensorId,
        name: &str,
        s: usize,
        pd: usize,
        trainable: bool,
    ) -> std::result::Result<TensorId, TensorError> {
        let w = g.param(&self.store, self.p(&format!("{name}.w")), trainable);
        let b = g.param(&self.store, self.p(&format!("{name}.b")), trainable);
        g.convt1d(x, w, b, s, pd)
    }

    fn res_block(
        &self,
        g: &mut Graph<f32>,
        x: TensorId,
        name: &str,
        trainable: bool,
    ) -> std::result::Result<TensorId, TensorError> {
        let a = g.relu(x);
        let c1 = self.conv_l(g, a, &format!("{name}.c1"), 1, 1, trainable)?;
        let a2 = g.relu(c1);
        let c2 = self.conv_l(g, a2, &format!("{name}.c2"), 1, 0, trainable)?;
        g.add(x, c2)
    }

    /// Encoder graph: `[frames, C_d] -> [frames / l, D]`.
    pub fn build_encoder(
        &self,
        g: &mut Graph<f32>,
        x: TensorId,
        trainable: bool,
    ) -> std::result::Result<TensorId, TensorError> {
        let h = self.conv_l(g, x, "enc.in", 2, 1, trainable)?;
        let h = self.res_block(g, h, "enc.res0", trainable)?;
        let h = self.conv_l(g, h, "enc.down1", 2, 1, trainable)?;
        let h = self.res_block(g, h, "enc.res1", trainable)?;
        let h = g.relu(h);
        self.conv_l(g, h, "enc.out", 1, 1, trainable)
    }

    /// Decoder graph: `[steps, D] -> [steps * l, C_d]`.
    pub fn build_decoder(
        &self,
        g: &mut Graph<f32>,
        z: TensorId,
        trainable: bool,
    ) -> std::result::Result<TensorId, TensorError> {
        let h = self.conv_l(g, z, "dec.in", 1, 1, trainable)?;
        let h = self.res_block(g, h, "dec.res0", trainable)?;
        let h = self.tconv_l(g, h, "dec.up0", 2, 1, trainable)?;
        let h = self.res_block(g, h, "dec.res1", trainable)?;
        let h = self.tconv_l(g, h, "dec.up1", 2, 1, trainable)?;
        let h = g.relu(h);
        self.conv_l(g, h, "dec.out", 1, 1, trainable)
    }

    fn check_divisible(&self, frames: usize) -> Result<()> {
        if frames % self.dims.downsample != 0 {
            return Err(Error::IndivisibleLength {
                frames,
                l: self.dims.downsample,
            });
        }
        Ok(())
    }

    /// Encode a normalized motion to continuous latents (`frames / l` rows).
    pub fn encode(&self, motion: &MotionSequence) -> Result<Vec<Vec<f32>>> {
        self.check_divisible(motion.frames)?;
        let mut g: Graph<f32> = Graph::new();
        let x = g.leaf(motion.data.clone(), vec![motion.frames, motion.channels]);
        let z = self.build_encoder(&mut g, x, false).map_err(Error::from)?;
        let d = self.dims.codebook_dim;
        let steps = motion.frames / self.dims.downsample;
        let data = g.data(z);
        Ok((0..steps).map(|i| data[i * d..(i + 1) * d].to_vec()).collect())
    }

    /// Nearest codebook entry per latent row; L2 metric, ties break to the
    /// lowest index. Returns tokens and the quantized rows.
    pub fn quantize(&self, latents: &[Vec<f32>]) -> Result<(Vec<usize>, Vec<Vec<f32>>)> {
        let code = &self.store.get(self.p("codebook")).data;
        let v = self.dims.codebook_size;
        let d = self.dims.codebook_dim;
        if v == 0 {
            return Err(Error::Invalid("empty codebook".into()));
        }
        let mut tokens = Vec::with_capacity(latents.len());
        let mut rows = Vec::with_capacity(latents.len());
        for latent in latents {
            debug_assert_eq!(latent.len(), d);
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for j in 0..v {
                let mut dist = 0.0f64;
                for c in 0..d {
                    let diff = (latent[c] - code[j * d + c]) as f64;
                    dist += diff * diff;
                }
                if dist < best_d {
                    best_d = dist;
                    best = j;
                }
            }
            tokens.push(best);
            rows.push(code[best * d..(best + 1) * d].to_vec());
        }
        Ok((tokens, rows))
    }

    pub fn encode_tokens(&self, motion: &MotionSequence) -> Result<Vec<usize>> {
        let latents = self.encode(motion)?;
        Ok(self.quantize(&latents)?.0)
    }

    /// Decode tokens to a normalized-domain motion of `tokens.len() * l` frames.
    pub fn decode(&self, tokens: &[usize]) -> Result<MotionSequence> {
        let v = self.dims.codebook_size;
        for &t in tokens {
            if t >= v {
                return Err(Error::Tensor(TensorError::IndexOutOfRange {
                    op: "decode",
                    index: t,
                    bound: v,
                }));
            }
        }
        let mut g: Graph<f32> = Graph::new();
        let code = g.param(&self.store, self.p("codebook"), false);
        let z = g.embed(code, tokens).map_err(Error::from)?;
        let out = self.build_decoder(&mut g, z, false).map_err(Error::from)?;
        let frames = tokens.len() * self.dims.downsample;
        Ok(MotionSequence::new(
            frames,
            self.dims.c_d,
            crate::data::FPS,
            g.data(out).to_vec(),
        ))
    }

    pub fn save(&self, path: &Path, seed: u64, config_echo: String) -> Result<()> {
        let mut ckpt = Checkpoint::new(STAGE, seed, config_echo);
        ckpt.push_store(&self.store);
        ckpt.push("norm.motion_mean", vec![self.stats.motion_mean.len()], self.stats.motion_mean.clone());
        ckpt.push("norm.motion_std", vec![self.stats.motion_std.len()], self.stats.motion_std.clone());
        ckpt.push("norm.music_mean", vec![self.stats.music_mean.len()], self.stats.music_mean.clone());
        ckpt.push("norm.music_std", vec![self.stats.music_std.len()], self.stats.music_std.clone());
        write_checkpoint(path, &ckpt)
    }

    pub fn load(path: &Path, cfg: &RunConfig, needed_by: &str) -> Result<Self> {
        let ckpt = read_stage_checkpoint(path, STAGE, needed_by)?;
        let dims = VqVaeDims::from_config(cfg, crate::data::C_D);
        let mut vq = VqVae::new(dims, ckpt.seed);
        ckpt.apply_to_store(&mut vq.store, &path.display().to_string())?;
        let grab = |name: &str| -> Result<Vec<f32>> {
            Ok(ckpt
                .tensor(name)
                .ok_or_else(|| Error::Format {
                    path: path.display().to_string(),
                    msg: format!("missing tensor {name}"),
                })?
                .data
                .clone())
        };
        vq.stats = NormStats {
            motion_mean: grab("norm.motion_mean")?,
            motion_std: grab("norm.motion_std")?,
            music_mean: grab("norm.music_mean")?,
            music_std: grab("norm.music_std")?,
        };
        Ok(vq)
    }
}

/// The training objective exactly as written: mean-L1 reconstruction plus
/// `||sg[e] - e_hat||^2 + beta * ||e - sg[e_hat]||^2` with mean reductions.
pub fn vqvae_loss(
    g: &mut Graph<f32>,
    reconstructed: TensorId,
    target: TensorId,
    e_selected: TensorId,
    e_encoder_out: TensorId,
    beta: f64,
) -> std::result::Result<TensorId, TensorError> {
    let diff = g.sub(reconstructed, target)?;
    let l1 = g.abs(diff);
    let rec = g.mean_all(l1);

    let sg_e = g.detach(e_selected);
    let d1 = g.sub(sg_e, e_encoder_out)?;
    let d1sq = g.mul(d1, d1)?;
    let codebook_term = g.mean_all(d1sq);

    let sg_hat = g.detach(e_encoder_out);
    let d2 = g.sub(e_selected, sg_hat)?;
    let d2sq = g.mul(d2, d2)?;
    let commit = g.mean_all(d2sq);
    let commit_scaled = g.scale(commit, beta);

    let partial = g.add(rec, codebook_term)?;
    g.add(partial, commit_scaled)
}

#[derive(Clone, Debug, Default)]
pub struct VqTrainLog {
    /// (step, batch recon L1)
    pub recon_curve: Vec<(usize, f64)>,
    /// (step, fraction of entries selected at least once in recent batches)
    pub usage_curve: Vec<(usize, f64)>,
    pub final_recon_l1: f64,
    pub codebook_usage: f64,
    pub steps_run: usize,
}

/// Train on a preprocessed corpus. The codebook is initialized from first
/// batch encoder outputs and then learned purely by gradient.
pub fn train_vqvae(corpus: &Corpus, cfg: &RunConfig, seed: u64) -> Result<(VqVae, VqTrainLog)> {
    let dims = VqVaeDims::from_config(cfg, corpus.c_d);
    let mut vq = VqVae::new(dims, seed);
    let motions: Vec<&MotionSequence> = corpus.records.iter().map(|r| r.motion()).collect();
    if motions.is_empty() {
        return Err(Error::Invalid("empty corpus".into()));
    }

    // Data-dependent codebook init: spread entries over step-0 encoder
    // outputs with distance-squared seeding so few entries start dead.
    let mut init_rng = Rng::derive(seed, "vq-codebook-init");
    {
        let mut latents = Vec::new();
        for m in motions.iter().take(32.min(motions.len())) {
            latents.extend(vq.encode(m)?);
        }
        let v = vq.dims.codebook_size;
        let d = vq.dims.codebook_dim;
        let dist2 = |a: &[f32], b: &[f32]| -> f64 {
            a.iter()
                .zip(b)
                .map(|(&x, &y)| ((x - y) as f64).powi(2))
                .sum()
        };
        let mut chosen: Vec<usize> = vec![init_rng.below(latents.len())];
        let mut best = vec![f64::INFINITY; latents.len()];
        while chosen.len() < v.min(latents.len()) {
            let last = &latents[*chosen.last().unwrap()];
            let mut total = 0.0;
            for (i, row) in latents.iter().enumerate() {
                let d2 = dist2(row, last);
                if d2 < best[i] {
                    best[i] = d2;
                }
                total += best[i];
            }
            let mut draw = init_rng.uniform() * total;
            let mut pick = latents.len() - 1;
            for (i, &b) in best.iter().enumerate() {
                draw -= b;
                if draw <= 0.0 {
                    pick = i;
                    break;
                }
            }
            chosen.push(pick);
        }
        let cb_id = vq.store.id("codebook").unwrap();
        let cb = vq.store.data_mut(cb_id);
        for j in 0..v {
            let row = &latents[chosen[j % chosen.len()]];
            for c in 0..d {
                cb[j * d + c] = row[c] + 0.01 * init_rng.normal_f32();
            }
        }
    }

    let mut rng = Rng::derive(seed, "vq-train");
    let mut opt = AdamW::new(AdamWConfig::new(cfg.vq_lr as f32, 0.9, 0.99));
    let mut opt_codebook = AdamW::new(AdamWConfig::new(
        (cfg.vq_lr * cfg.vq_codebook_lr_mult) as f32,
        0.9,
        0.99,
    ));
    let codebook_pid = vq.store.id("codebook").unwrap();
    let mut recent_used = vec![false; vq.dims.codebook_size];
    let mut order: Vec<usize> = (0..motions.len()).collect();
    let mut cursor = order.len(); // force shuffle on first step
    let mut log = VqTrainLog::default();
    let lr_switch = (cfg.vq_steps as f64 * cfg.vq_lr_split) as usize;

    for step in 0..cfg.vq_steps {
        if step == lr_switch {
            opt.set_lr(cfg.vq_lr_final as f32);
            opt_codebook.set_lr((cfg.vq_lr_final * cfg.vq_codebook_lr_mult) as f32);
        }
        let mut g: Graph<f32> = Graph::new();
        let mut batch_loss: Option<TensorId> = None;
        let mut batch_recon = 0.0f64;
        for _ in 0..cfg.vq_batch {
            if cursor >= order.len() {
                rng.shuffle(&mut order);
                cursor = 0;
            }
            let m = motions[order[cursor]];
            cursor += 1;
            vq.check_divisible(m.frames)?;

            let x = g.leaf(m.data.clone(), vec![m.frames, m.channels]);
            let latents = vq.build_encoder(&mut g, x, true)?;
            // Hard nearest-neighbor assignment outside the graph.
            let d = vq.dims.codebook_dim;
            let steps_n = m.frames / vq.dims.downsample;
            let latent_rows: Vec<Vec<f32>> = {
                let data = g.data(latents);
                (0..steps_n).map(|i| data[i * d..(i + 1) * d].to_vec()).collect()
            };
            let (tokens, _) = vq.quantize(&latent_rows)?;
            for &t in &tokens {
                recent_used[t] = true;
            }
            let code = g.param(&vq.store, vq.p("codebook"), true);
            let e_sel = g.embed(code, &tokens)?;
            let hard = g.data(e_sel).to_vec();
            let st = g.straight_through(latents, hard)?;
            let recon = vq.build_decoder(&mut g, st, true)?;
            let loss = vqvae_loss(&mut g, recon, x, e_sel, latents, vq.dims.beta)?;

            // recon L1 for the log
            {
                let rd = g.data(recon);
                let xd = g.data(x);
                let mut acc = 0.0f64;
                for (a, b) in rd.iter().zip(xd) {
                    acc += (a - b).abs() as f64;
                }
                batch_recon += acc / rd.len() as f64;
            }
            batch_loss = Some(match batch_loss {
                None => loss,
                Some(prev) => g.add(prev, loss)?,
            });
        }
        let total = g.scale(batch_loss.unwrap(), 1.0 / cfg.vq_batch as f64);
        let loss_val = g.finite_scalar(total).map_err(|_| Error::Divergence {
            stage: STAGE.into(),
            step,
        })?;
        let _ = loss_val;
        g.backward(total)?;
        let grads = g.collect_param_grads();
        let (cb_grads, other_grads): (Vec<_>, Vec<_>) =
            grads.into_iter().partition(|(pid, _)| *pid == codebook_pid);
        opt.step(&mut vq.store, &other_grads);
        opt_codebook.step(&mut vq.store, &cb_grads);

        batch_recon /= cfg.vq_batch as f64;
        if step % 50 == 0 || step + 1 == cfg.vq_steps {
            log.recon_curve.push((step, batch_recon));
            let frac = recent_used.iter().filter(|&&u| u).count() as f64
                / recent_used.len() as f64;
            log.usage_curve.push((step, frac));
            recent_used.fill(false);
        }
        log.steps_run = step + 1;
    }

    // Validation pass: mean recon L1 and codebook usage over the corpus.
    let mut used = vec![false; vq.dims.codebook_size];
    let mut total_l1 = 0.0f64;
    for m in &motions {
        let latents = vq.encode(m)?;
        let (tokens, _) = vq.quantize(&latents)?;
        for &t in &tokens {
            used[t] = true;
        }
        let recon = vq.decode(&tokens)?;
        let mut acc = 0.0f64;
        for (a, b) in recon.data.iter().zip(&m.data) {
            acc += (a - b).abs() as f64;
        }
        total_l1 += acc / m.data.len() as f64;
    }
    log.final_recon_l1 = total_l1 / motions.len() as f64;
    log.codebook_usage = used.iter().filter(|&&u| u).count() as f64 / used.len() as f64;
    Ok((vq, log))
}

#[cfg(test)]
mod tests;
