//! Genre control: a mapping network turns (genre, z) into genre rows G that
//! are injected into the music path by cross-attention, and a multi-genre
//! discriminator drives adversarial training of the mapping network while
//! the base GPT and VQ-VAE stay frozen.

use std::path::Path;

use crate::ckpt::{read_stage_checkpoint, write_checkpoint, Checkpoint};
use crate::config::RunConfig;
use crate::data::MotionSequence;
use crate::error::{Error, Result, TensorError};
use crate::gpt::{CrossModalGpt, Decode, HeadMode};
use crate::rngx::Rng;
use crate::tensor::{AdamW, AdamWConfig, Graph, Init, ParamId, ParamStore, TensorId};
use crate::vqvae::VqVae;

pub const STAGE: &str = "genre";

#[derive(Clone, Debug)]
pub struct GenreDims {
    pub n_genres: usize,
    pub z_dim: usize,
    pub n_tokens: usize,
    pub hidden: usize,
    pub dim: usize,
    pub c_d: usize,
    pub c_m: usize,
    pub disc_width: usize,
}

impl GenreDims {
    pub fn from_config(cfg: &RunConfig) -> Self {
        GenreDims {
            n_genres: cfg.n_genres,
            z_dim: cfg.genre_z_dim,
            n_tokens: cfg.genre_tokens,
            hidden: cfg.genre_hidden,
            dim: cfg.gpt_dim,
            c_d: crate::data::C_D,
            c_m: crate::data::C_M,
            disc_width: cfg.disc_width,
        }
    }
}

/// GEN mapping network plus the discriminator, one store per stage artifact.
pub struct GenreNet {
    pub store: ParamStore,
    pub dims: GenreDims,
}

impl GenreNet {
    pub fn new(dims: GenreDims, seed: u64) -> Self {
        let mut rng = Rng::derive(seed, "genre-init");
        let mut store = ParamStore::new();
        let in_dim = dims.n_genres + dims.z_dim;
        let h = dims.hidden;
        store.add_init("gen.w1", vec![in_dim, h], Init::Normal((2.0 / in_dim as f32).sqrt()), &mut rng);
        store.add_init("gen.b1", vec![h], Init::Zeros, &mut rng);
        store.add_init("gen.w2", vec![h, h], Init::Normal((2.0 / h as f32).sqrt()), &mut rng);
        store.add_init("gen.b2", vec![h], Init::Zeros, &mut rng);
        for i in 0..dims.n_tokens {
            // near-zero output: the residual injection starts as a no-op and
            // adversarial training grows it from there
            store.add_init(&format!("gen.out{i}.w"), vec![h, dims.dim], Init::Normal(0.01), &mut rng);
            store.add_init(&format!("gen.out{i}.b"), vec![dims.dim], Init::Zeros, &mut rng);
        }
        store.add_init("gen.attn_bias", vec![1, 1], Init::Zeros, &mut rng);

        let w = dims.disc_width;
        let c_in = dims.c_d + dims.c_m;
        let g_dim = 32usize;
        let conv = |store: &mut ParamStore, rng: &mut Rng, name: &str, co: usize, k: usize, ci: usize| {
            let std = (2.0 / (ci * k) as f32).sqrt();
            store.add_init(&format!("{name}.w"), vec![co, k, ci], Init::Normal(std), rng);
            store.add_init(&format!("{name}.b"), vec![co], Init::Zeros, rng);
        };
        conv(&mut store, &mut rng, "disc.c1", w, 4, c_in);
        conv(&mut store, &mut rng, "disc.c2", w, 4, w);
        store.add_init("disc.genre_emb", vec![dims.n_genres, g_dim], Init::Normal(0.1), &mut rng);
        conv(&mut store, &mut rng, "disc.c3", w, 3, w + g_dim);
        store.add_init("disc.out.w", vec![w, 1], Init::Normal((1.0 / w as f32).sqrt()), &mut rng);
        store.add_init("disc.out.b", vec![1], Init::Zeros, &mut rng);
        GenreNet { store, dims }
    }

    fn p(&self, name: &str) -> ParamId {
        self.store.id(name).unwrap_or_else(|| panic!("missing param {name}"))
    }

    /// Mapping network: concat(one-hot g, z) through a 3-layer MLP into
    /// `n_tokens` genre rows aligned with the music embedding dimension.
    pub fn genre_rows(
        &self,
        g: &mut Graph<f32>,
        genre: usize,
        z: TensorId,
        trainable: bool,
    ) -> Result<TensorId> {
        if genre >= self.dims.n_genres {
            return Err(Error::UnknownGenre(genre));
        }
        if g.shape(z) != [1, self.dims.z_dim] {
            return Err(Error::Invalid(format!(
                "z must be [1, {}], got {:?}",
                self.dims.z_dim,
                g.shape(z)
            )));
        }
        let mut onehot = vec![0.0f32; self.dims.n_genres];
        onehot[genre] = 1.0;
        let oh = g.leaf(onehot, vec![1, self.dims.n_genres]);
        let input = g.concat_cols(&[oh, z]).map_err(Error::from)?;
        let w1 = g.param(&self.store, self.p("gen.w1"), trainable);
        let b1 = g.param(&self.store, self.p("gen.b1"), trainable);
        let h1 = g.matmul(input, w1).map_err(Error::from)?;
        let h1 = g.add_bias_row(h1, b1).map_err(Error::from)?;
        let h1 = g.relu(h1);
        let w2 = g.param(&self.store, self.p("gen.w2"), trainable);
        let b2 = g.param(&self.store, self.p("gen.b2"), trainable);
        let h2 = g.matmul(h1, w2).map_err(Error::from)?;
        let h2 = g.add_bias_row(h2, b2).map_err(Error::from)?;
        let h2 = g.relu(h2);
        let mut rows = Vec::with_capacity(self.dims.n_tokens);
        for i in 0..self.dims.n_tokens {
            let w = g.param(&self.store, self.p(&format!("gen.out{i}.w")), trainable);
            let b = g.param(&self.store, self.p(&format!("gen.out{i}.b")), trainable);
            let r = g.matmul(h2, w).map_err(Error::from)?;
            rows.push(g.add_bias_row(r, b).map_err(Error::from)?);
        }
        g.concat_rows(&rows).map_err(Error::from)
    }

    /// Build the injection consumed by the music base layer.
    pub fn injection(
        &self,
        g: &mut Graph<f32>,
        genre: usize,
        z: TensorId,
        trainable: bool,
    ) -> Result<GenreInjection> {
        let rows = self.genre_rows(g, genre, z, trainable)?;
        let bias = g.param(&self.store, self.p("gen.attn_bias"), trainable);
        Ok(GenreInjection { rows, bias: Some(bias) })
    }

    /// Discriminator logit for a (dance, genre, music) triple, both in the
    /// normalized domain. Genre enters by channel-concat of its embedding,
    /// music by channel-concat of its features.
    pub fn disc_logit(
        &self,
        g: &mut Graph<f32>,
        dance: TensorId,
        genre: usize,
        music: TensorId,
        trainable: bool,
    ) -> Result<TensorId> {
        if genre >= self.dims.n_genres {
            return Err(Error::UnknownGenre(genre));
        }
        let frames = g.shape(dance)[0];
        if g.shape(music)[0] != frames {
            return Err(Error::Tensor(TensorError::ShapeMismatch {
                op: "discriminate",
                lhs: g.shape(dance).to_vec(),
                rhs: g.shape(music).to_vec(),
            }));
        }
        let x = g.concat_cols(&[dance, music]).map_err(Error::from)?;
        let conv = |this: &Self, g: &mut Graph<f32>, x: TensorId, name: &str, s: usize, pd: usize|
            -> std::result::Result<TensorId, TensorError> {
            let w = g.param(&this.store, this.p(&format!("{name}.w")), trainable);
            let b = g.param(&this.store, this.p(&format!("{name}.b")), trainable);
            g.conv1d(x, w, b, s, pd)
        };
        let h = conv(self, g, x, "disc.c1", 2, 1).map_err(Error::from)?;
        let h = g.relu(h);
        let h = conv(self, g, h, "disc.c2", 2, 1).map_err(Error::from)?;
        let h = g.relu(h);
        let emb_table = g.param(&self.store, self.p("disc.genre_emb"), trainable);
        let emb = g.embed(emb_table, &[genre]).map_err(Error::from)?;
        let rows = g.shape(h)[0];
        let emb_rep = g.repeat_row(emb, rows).map_err(Error::from)?;
        let h = g.concat_cols(&[h, emb_rep]).map_err(Error::from)?;
        let h = conv(self, g, h, "disc.c3", 1, 1).map_err(Error::from)?;
        let h = g.relu(h);
        let pooled = g.mean_rows(h).map_err(Error::from)?;
        let w_cols = self.dims.disc_width;
        let pooled2 = g.reshape(pooled, vec![1, w_cols]).map_err(Error::from)?;
        let w = g.param(&self.store, self.p("disc.out.w"), trainable);
        let b = g.param(&self.store, self.p("disc.out.b"), trainable);
        let y = g.matmul(pooled2, w).map_err(Error::from)?;
        g.add_bias_row(y, b).map_err(Error::from)
    }

    /// Probability-space score in (0, 1).
    pub fn discriminate(
        &self,
        dance: &MotionSequence,
        genre: usize,
        music_norm: &[f32],
        music_frames: usize,
    ) -> Result<f64> {
        let mut g: Graph<f32> = Graph::new();
        let d = g.leaf(dance.data.clone(), vec![dance.frames, dance.channels]);
        let m = g.leaf(music_norm.to_vec(), vec![music_frames, self.dims.c_m]);
        let logit = self.disc_logit(&mut g, d, genre, m, false)?;
        let s = g.sigmoid(logit);
        Ok(g.scalar(s))
    }

    pub fn save(&self, path: &Path, seed: u64, config_echo: String) -> Result<()> {
        let mut ckpt = Checkpoint::new(STAGE, seed, config_echo);
        ckpt.push_store(&self.store);
        write_checkpoint(path, &ckpt)
    }

    pub fn load(path: &Path, cfg: &RunConfig, needed_by: &str) -> Result<Self> {
        let ckpt = read_stage_checkpoint(path, STAGE, needed_by)?;
        let mut net = GenreNet::new(GenreDims::from_config(cfg), ckpt.seed);
        ckpt.apply_to_store(&mut net.store, &path.display().to_string())?;
        Ok(net)
    }
}

/// Graph-level genre injection: rows G plus the attention bias B.
pub struct GenreInjection {
    pub rows: TensorId,
    pub bias: Option<TensorId>,
}

impl GenreInjection {
    /// Residual transform of the music embedding by Eq-style cross-attention.
    pub fn transform(&self, g: &mut Graph<f32>, music: TensorId) -> Result<TensorId> {
        let ca = cross_attention(g, music, self.rows, self.bias)?;
        g.add(music, ca).map_err(Error::from)
    }
}

/// Literal cross-attention: `Softmax(M G^T / sqrt(d) + B) G`. Queries are
/// music rows, keys and values are the genre rows; every output row is a
/// convex combination of G's rows whenever B broadcasts uniformly.
pub fn cross_attention(
    g: &mut Graph<f32>,
    music: TensorId,
    genre_rows: TensorId,
    bias: Option<TensorId>,
) -> Result<TensorId> {
    let md = g.shape(music).to_vec();
    let gd = g.shape(genre_rows).to_vec();
    if md.len() != 2 || gd.len() != 2 || md[1] != gd[1] {
        return Err(Error::Tensor(TensorError::ShapeMismatch {
            op: "cross_attention",
            lhs: md,
            rhs: gd,
        }));
    }
    let d = md[1];
    let scores = g.matmul_t(music, genre_rows, false, true).map_err(Error::from)?;
    let mut scaled = g.scale(scores, 1.0 / (d as f64).sqrt());
    if let Some(b) = bias {
        scaled = g.add_scalar_t(scaled, b).map_err(Error::from)?;
    }
    let probs = g.softmax_lastdim(scaled).map_err(Error::from)?;
    g.matmul(probs, genre_rows).map_err(Error::from)
}

/// Inference-time genre code: the materialized rows for one (g, z) draw.
#[derive(Clone, Debug)]
pub struct GenreCode {
    pub genre: usize,
    pub z: Vec<f32>,
    pub rows: Vec<f32>,
    pub n_tokens: usize,
    pub dim: usize,
    pub attn_bias: f32,
}

impl GenreCode {
    pub fn injection(&self, g: &mut Graph<f32>, _trainable: bool) -> Result<GenreInjection> {
        let rows = g.leaf(self.rows.clone(), vec![self.n_tokens, self.dim]);
        let bias = g.leaf(vec![self.attn_bias], vec![1, 1]);
        Ok(GenreInjection { rows, bias: Some(bias) })
    }
}

/// Run the mapping network once and materialize G for reuse across steps.
pub fn genre_code(net: &GenreNet, genre: usize, z: &[f32]) -> Result<GenreCode> {
    if z.len() != net.dims.z_dim {
        return Err(Error::Invalid(format!(
            "z dimension {} != {}",
            z.len(),
            net.dims.z_dim
        )));
    }
    let mut g: Graph<f32> = Graph::new();
    let z_id = g.leaf(z.to_vec(), vec![1, net.dims.z_dim]);
    let rows = net.genre_rows(&mut g, genre, z_id, false)?;
    Ok(GenreCode {
        genre,
        z: z.to_vec(),
        rows: g.data(rows).to_vec(),
        n_tokens: net.dims.n_tokens,
        dim: net.dims.dim,
        attn_bias: net.store.get(net.p("gen.attn_bias")).data[0],
    })
}

/// The adversarial objective evaluated in probability space:
/// `E[ln D(real)] + E[ln(1 - D(fake))]`, in f64 for the closed-form checks.
pub fn genre_objective(d_real: &[f64], d_fake: &[f64]) -> f64 {
    let a: f64 = d_real.iter().map(|&p| p.ln()).sum::<f64>() / d_real.len().max(1) as f64;
    let b: f64 = d_fake.iter().map(|&p| (1.0 - p).ln()).sum::<f64>() / d_fake.len().max(1) as f64;
    a + b
}

/// One adversarial sample: a real (dance, genre, music) triple from the
/// corpus with its tokens (for the likelihood anchor).
pub struct RealSample<'a> {
    pub genre: usize,
    pub dance_norm: &'a MotionSequence,
    pub music_norm: &'a [f32],
    pub music_frames: usize,
    pub tokens: &'a [usize],
}

pub struct AdversarialOutcome {
    pub d_loss: f64,
    pub g_loss: f64,
    pub d_real_mean: f64,
    pub d_fake_mean: f64,
}

/// One D step followed by one G step on the same batch.
///
/// The discriminator sees detached fakes, so generator parameters receive
/// no gradient during the D step; the G step binds discriminator and GPT
/// parameters as frozen leaves, so only the mapping network moves.
#[allow(clippy::too_many_arguments)]
pub fn adversarial_step(
    vq: &VqVae,
    gpt: &CrossModalGpt,
    net: &mut GenreNet,
    opt_g: &mut AdamW,
    opt_d: &mut AdamW,
    reals: &[RealSample],
    cfg: &RunConfig,
    rng: &mut Rng,
    seed_tag: u64,
    step: usize,
) -> Result<AdversarialOutcome> {
    let n = reals.len();
    assert!(n > 0);

    // Generate one fake per real, conditioned on the real's genre and music.
    let mut fakes: Vec<(usize, Vec<usize>, GenreCode, &RealSample)> = Vec::with_capacity(n);
    for real in reals {
        let z: Vec<f32> = (0..net.dims.z_dim).map(|_| rng.normal_f32()).collect();
        let code = genre_code(net, real.genre, &z)?;
        let max_len = real.music_frames / gpt.dims.downsample;
        let tokens = gpt.generate_from_normalized(
            real.music_norm,
            real.music_frames,
            Some(&code),
            max_len,
            rng_seed_for(seed_tag, step, fakes.len()),
            Decode::Greedy,
        )?;
        fakes.push((real.genre, tokens, code, real));
    }

    // D step on detached fakes; label-swapped reals count as fakes so the
    // discriminator must actually use the genre condition.
    let mut d_real_mean = 0.0;
    let mut d_fake_mean = 0.0;
    let d_loss = {
        let mut g: Graph<f32> = Graph::new();
        let mut loss: Option<TensorId> = None;
        for real in reals {
            let dance = g.leaf(
                real.dance_norm.data.clone(),
                vec![real.dance_norm.frames, real.dance_norm.channels],
            );
            let music = g.leaf(real.music_norm.to_vec(), vec![real.music_frames, net.dims.c_m]);
            let logit = net.disc_logit(&mut g, dance, real.genre, music, true)?;
            d_real_mean += sigmoid64(g.scalar(logit));
            let neg = g.scale(logit, -1.0);
            let sp = g.softplus(neg);
            let term = g.mean_all(sp);
            loss = Some(match loss {
                None => term,
                Some(prev) => g.add(prev, term).map_err(Error::from)?,
            });
            if net.dims.n_genres > 1 {
                let wrong = (real.genre + 1) % net.dims.n_genres;
                let logit_sw = net.disc_logit(&mut g, dance, wrong, music, true)?;
                let sp_sw = g.softplus(logit_sw);
                let term_sw = g.mean_all(sp_sw);
                let scaled = g.scale(term_sw, 0.5);
                loss = Some(g.add(loss.unwrap(), scaled).map_err(Error::from)?);
            }
        }
        for (genre, tokens, _, real) in &fakes {
            let decoded = vq.decode(tokens)?;
            let dance = g.leaf(decoded.data.clone(), vec![decoded.frames, decoded.channels]);
            let mf = frames_for_tokens(tokens.len(), vq.dims.downsample);
            let music = g.leaf(
                real.music_norm[..mf * net.dims.c_m].to_vec(),
                vec![mf, net.dims.c_m],
            );
            let logit = net.disc_logit(&mut g, dance, *genre, music, true)?;
            d_fake_mean += sigmoid64(g.scalar(logit));
            let sp = g.softplus(logit);
            let term = g.mean_all(sp);
            loss = Some(g.add(loss.unwrap(), term).map_err(Error::from)?);
        }
        let total = g.scale(loss.unwrap(), 1.0 / (2 * n) as f64);
        let v = g.finite_scalar(total).map_err(|_| Error::Divergence {
            stage: STAGE.into(),
            step,
        })?;
        g.backward(total).map_err(Error::from)?;
        let grads = g.collect_param_grads();
        debug_assert!(grads
            .iter()
            .all(|(pid, _)| net.store.get(*pid).name.starts_with("disc.")));
        opt_d.step(&mut net.store, &grads);
        v
    };

    // G step: non-saturating GAN term through the frozen decoder and frozen
    // discriminator, plus the likelihood anchor on real sequences.
    let g_loss = {
        let mut g: Graph<f32> = Graph::new();
        let mut loss: Option<TensorId> = None;
        for (genre, tokens, code, real) in &fakes {
            if tokens.is_empty() {
                continue;
            }
            let z_id = g.leaf(code.z.clone(), vec![1, net.dims.z_dim]);
            let inj = net.injection(&mut g, *genre, z_id, true)?;
            let mf = frames_for_tokens(tokens.len(), vq.dims.downsample);
            let music = g.leaf(
                real.music_norm.to_vec(),
                vec![real.music_frames, net.dims.c_m],
            );
            let memb = gpt.music_embedding(&mut g, music, false).map_err(Error::from)?;
            let feats = gpt.m_base(&mut g, memb, Some(&inj), tokens, false)?;
            let logits = gpt.head(&mut g, feats, &HeadMode::Causal, false)?;
            // soft codebook mixture per generated position, straight-through
            // to the hard tokens the decoder actually saw
            let pred_rows = g.slice_rows(logits, 0, tokens.len()).map_err(Error::from)?;
            let code_logits = g.slice_cols(pred_rows, 0, vq.dims.codebook_size).map_err(Error::from)?;
            let probs = g.softmax_lastdim(code_logits).map_err(Error::from)?;
            let codebook = g.param(&vq.store, vq.store.id("codebook").unwrap(), false);
            let soft = g.matmul(probs, codebook).map_err(Error::from)?;
            let hard = g.embed(codebook, tokens).map_err(Error::from)?;
            let hard_data = g.data(hard).to_vec();
            let st = g.straight_through(soft, hard_data).map_err(Error::from)?;
            let decoded = vq.build_decoder(&mut g, st, false).map_err(Error::from)?;
            let music_cut = g.leaf(
                real.music_norm[..mf * net.dims.c_m].to_vec(),
                vec![mf, net.dims.c_m],
            );
            let logit = net.disc_logit(&mut g, decoded, *genre, music_cut, false)?;
            let neg = g.scale(logit, -1.0);
            let sp = g.softplus(neg);
            let gan_term = g.mean_all(sp);
            loss = Some(match loss {
                None => gan_term,
                Some(prev) => g.add(prev, gan_term).map_err(Error::from)?,
            });
            if !cfg.genre_pure_gan {
                // likelihood anchor on the matching real sequence, with the
                // same genre injection active
                let music_real = g.leaf(
                    real.music_norm.to_vec(),
                    vec![real.music_frames, net.dims.c_m],
                );
                let memb_r = gpt.music_embedding(&mut g, music_real, false).map_err(Error::from)?;
                let z2 = g.leaf(code.z.clone(), vec![1, net.dims.z_dim]);
                let inj_r = net.injection(&mut g, real.genre, z2, true)?;
                let feats_r = gpt.m_base(&mut g, memb_r, Some(&inj_r), real.tokens, false)?;
                let logits_r = gpt.head(&mut g, feats_r, &HeadMode::Causal, false)?;
                let mut targets: Vec<i64> = real.tokens.iter().map(|&t| t as i64).collect();
                targets.push(gpt.dims.end_token() as i64);
                let nll = g.cross_entropy_mean(logits_r, &targets).map_err(Error::from)?;
                let anchored = g.scale(nll, cfg.genre_lambda_nll);
                loss = Some(g.add(loss.unwrap(), anchored).map_err(Error::from)?);
            }
        }
        match loss {
            None => 0.0,
            Some(sum) => {
                let total = g.scale(sum, 1.0 / n as f64);
                let v = g.finite_scalar(total).map_err(|_| Error::Divergence {
                    stage: STAGE.into(),
                    step,
                })?;
                g.backward(total).map_err(Error::from)?;
                let grads = g.collect_param_grads();
                debug_assert!(grads
                    .iter()
                    .all(|(pid, _)| net.store.get(*pid).name.starts_with("gen.")));
                opt_g.step(&mut net.store, &grads);
                v
            }
        }
    };

    Ok(AdversarialOutcome {
        d_loss,
        g_loss,
        d_real_mean: d_real_mean / n as f64,
        d_fake_mean: d_fake_mean / n as f64,
    })
}

fn sigmoid64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn frames_for_tokens(tokens: usize, l: usize) -> usize {
    tokens * l
}

fn rng_seed_for(seed: u64, step: usize, lane: usize) -> u64 {
    crate::rngx::mix(seed ^ 0x6A4E5, ((step as u64) << 16) | lane as u64)
}

#[derive(Clone, Debug, Default)]
pub struct GenreTrainLog {
    pub d_curve: Vec<(usize, f64, f64)>,
    pub initial_fake_mean: f64,
    pub final_real_mean: f64,
    pub final_fake_mean: f64,
}

/// Full adversarial stage over the tokenized music corpus.
pub fn train_genre(
    vq: &VqVae,
    gpt: &CrossModalGpt,
    music_corpus: &[crate::gpt::MusicSample],
    stats_motions: &[MotionSequence],
    cfg: &RunConfig,
    seed: u64,
) -> Result<(GenreNet, GenreTrainLog)> {
    if music_corpus.is_empty() {
        return Err(Error::Invalid("empty music corpus".into()));
    }
    assert_eq!(music_corpus.len(), stats_motions.len());
    let _ = stats_motions;
    // real side of the GAN lives in the same decoded domain as the fakes
    let decoded_reals: Vec<MotionSequence> = music_corpus
        .iter()
        .map(|s| vq.decode(&s.tokens))
        .collect::<Result<_>>()?;
    let mut net = GenreNet::new(GenreDims::from_config(cfg), seed);
    let mut opt_g = AdamW::new(AdamWConfig::new(cfg.genre_lr_g as f32, 0.5, 0.99));
    let mut opt_d = AdamW::new(AdamWConfig::new(cfg.genre_lr_d as f32, 0.5, 0.99));
    let mut rng = Rng::derive(seed, "genre-train");
    let mut order: Vec<usize> = (0..music_corpus.len()).collect();
    let mut cursor = order.len();
    let mut log = GenreTrainLog::default();

    for step in 0..cfg.genre_steps {
        let mut batch = Vec::with_capacity(cfg.genre_batch);
        for _ in 0..cfg.genre_batch {
            if cursor >= order.len() {
                rng.shuffle(&mut order);
                cursor = 0;
            }
            let i = order[cursor];
            cursor += 1;
            batch.push(RealSample {
                genre: music_corpus[i].genre,
                dance_norm: &decoded_reals[i],
                music_norm: &music_corpus[i].music_norm,
                music_frames: music_corpus[i].music_frames,
                tokens: &music_corpus[i].tokens,
            });
        }
        let out = adversarial_step(
            vq, gpt, &mut net, &mut opt_g, &mut opt_d, &batch, cfg, &mut rng, seed, step,
        )?;
        if step == 0 {
            log.initial_fake_mean = out.d_fake_mean;
        }
        if step % 10 == 0 || step + 1 == cfg.genre_steps {
            log.d_curve.push((step, out.d_real_mean, out.d_fake_mean));
        }
        log.final_real_mean = out.d_real_mean;
        log.final_fake_mean = out.d_fake_mean;
    }
    Ok((net, log))
}

#[cfg(test)]
mod tests;
