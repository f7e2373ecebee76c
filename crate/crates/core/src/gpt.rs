//! Cross-modal token predictor: distinct text and music base layers feed a
//! shared transformer head that emits next-token (causal) or masked-token
//! logits over the codebook vocabulary plus END/PAD.

use std::path::Path;

use crate::ckpt::{read_stage_checkpoint, write_checkpoint, Checkpoint};
use crate::config::RunConfig;
use crate::data::{Corpus, MusicFeatures, NormStats};
use crate::error::{Error, Result, TensorError};
use crate::rngx::Rng;
use crate::tensor::{AdamW, AdamWConfig, Graph, Init, ParamId, ParamStore, TensorId};
use crate::vqvae::VqVae;

pub const STAGE: &str = "gpt";

#[derive(Clone, Debug)]
pub struct GptDims {
    pub dim: usize,
    pub heads: usize,
    pub base_layers: usize,
    pub head_layers: usize,
    pub codebook_size: usize,
    pub max_music: usize,
    pub max_text: usize,
    pub n_templates: usize,
    pub c_m: usize,
    pub downsample: usize,
}

impl GptDims {
    pub fn from_config(cfg: &RunConfig) -> Self {
        GptDims {
            dim: cfg.gpt_dim,
            heads: cfg.gpt_heads,
            base_layers: cfg.gpt_base_layers,
            head_layers: cfg.gpt_head_layers,
            codebook_size: cfg.vq_codebook_size,
            max_music: cfg.gpt_max_music,
            max_text: cfg.gpt_max_text,
            n_templates: cfg.n_templates,
            c_m: crate::data::C_M,
            downsample: cfg.vq_downsample,
        }
    }

    pub fn vocab(&self) -> usize {
        self.codebook_size + 2
    }

    pub fn end_token(&self) -> usize {
        self.codebook_size
    }

    pub fn pad_token(&self) -> usize {
        self.codebook_size + 1
    }
}

/// Attention masking mode for the head stack; base layers are always causal.
#[derive(Clone, Debug)]
pub enum HeadMode {
    Causal,
    /// `visible[k]` marks KNOWN key positions; PREDICT inputs are replaced
    /// by the mask embedding but stay queryable. `post_softmax` switches to
    /// the literal post-softmax multiply for comparison runs.
    Masked {
        visible: Vec<bool>,
        post_softmax: bool,
    },
}

#[derive(Clone)]
pub struct CrossModalGpt {
    pub store: ParamStore,
    pub dims: GptDims,
    /// Music feature normalization carried from preprocessing; applied to
    /// raw music at generation time.
    pub music_mean: Vec<f32>,
    pub music_std: Vec<f32>,
}

fn block_names(prefix: &str, layers: usize) -> Vec<String> {
    (0..layers).map(|i| format!("{prefix}.block{i}")).collect()
}

impl CrossModalGpt {
    pub fn new(dims: GptDims, seed: u64) -> Self {
        let mut rng = Rng::derive(seed, "gpt-init");
        let mut store = ParamStore::new();
        let d = dims.dim;
        let vocab = dims.vocab();
        let std = 0.02f32;
        store.add_init("emb.token", vec![vocab, d], Init::Normal(std), &mut rng);
        store.add_init("emb.start", vec![1, d], Init::Normal(std), &mut rng);
        store.add_init("emb.mask", vec![1, d], Init::Normal(std), &mut rng);
        store.add_init("emb.text", vec![dims.n_templates, d], Init::Normal(std), &mut rng);
        store.add_init("emb.pos.t", vec![dims.max_text + 1, d], Init::Normal(std), &mut rng);
        store.add_init("emb.pos.m", vec![dims.max_music + 1, d], Init::Normal(std), &mut rng);
        store.add_init("music.mlp.w1", vec![dims.c_m, d], Init::Normal(0.05), &mut rng);
        store.add_init("music.mlp.b1", vec![d], Init::Zeros, &mut rng);
        store.add_init("music.mlp.w2", vec![d, d], Init::Normal(std), &mut rng);
        store.add_init("music.mlp.b2", vec![d], Init::Zeros, &mut rng);
        let mut add_block = |name: &str, rng: &mut Rng| {
            let proj = (d as f32).powf(-0.5);
            store.add_init(&format!("{name}.ln1.g"), vec![d], Init::Ones, rng);
            store.add_init(&format!("{name}.ln1.b"), vec![d], Init::Zeros, rng);
            for p in ["wq", "wk", "wv"] {
                store.add_init(&format!("{name}.attn.{p}"), vec![d, d], Init::Normal(proj), rng);
            }
            for p in ["bq", "bk", "bv"] {
                store.add_init(&format!("{name}.attn.{p}"), vec![d], Init::Zeros, rng);
            }
            store.add_init(&format!("{name}.attn.bias"), vec![1, dims.heads], Init::Zeros, rng);
            store.add_init(&format!("{name}.attn.wo"), vec![d, d], Init::Normal(proj), rng);
            store.add_init(&format!("{name}.attn.bo"), vec![d], Init::Zeros, rng);
            store.add_init(&format!("{name}.ln2.g"), vec![d], Init::Ones, rng);
            store.add_init(&format!("{name}.ln2.b"), vec![d], Init::Zeros, rng);
            store.add_init(&format!("{name}.mlp.w1"), vec![d, 4 * d], Init::Normal(proj), rng);
            store.add_init(&format!("{name}.mlp.b1"), vec![4 * d], Init::Zeros, rng);
            store.add_init(&format!("{name}.mlp.w2"), vec![4 * d, d], Init::Normal(proj), rng);
            store.add_init(&format!("{name}.mlp.b2"), vec![d], Init::Zeros, rng);
        };
        for name in block_names("base_t", dims.base_layers) {
            add_block(&name, &mut rng);
        }
        for name in block_names("base_m", dims.base_layers) {
            add_block(&name, &mut rng);
        }
        for name in block_names("head", dims.head_layers) {
            add_block(&name, &mut rng);
        }
        store.add_init("head.ln_f.g", vec![d], Init::Ones, &mut rng);
        store.add_init("head.ln_f.b", vec![d], Init::Zeros, &mut rng);
        store.add_init("head.out.w", vec![d, vocab], Init::Normal(0.02), &mut rng);
        store.add_init("head.out.b", vec![vocab], Init::Zeros, &mut rng);
        let c_m = dims.c_m;
        CrossModalGpt {
            store,
            dims,
            music_mean: vec![0.0; c_m],
            music_std: vec![1.0; c_m],
        }
    }

    pub fn p(&self, name: &str) -> ParamId {
        self.store.id(name).unwrap_or_else(|| panic!("missing param {name}"))
    }

    /// Head parameter ids; the identity of this set across both modality
    /// paths is what "shared head" means.
    pub fn head_param_ids(&self) -> Vec<ParamId> {
        self.store
            .iter()
            .filter(|(_, p)| p.name.starts_with("head."))
            .map(|(id, _)| id)
            .collect()
    }

    fn linear(
        &self,
        g: &mut Graph<f32>,
        x: TensorId,
        w: &str,
        b: &str,
        trainable: bool,
    ) -> std::result::Result<TensorId, TensorError> {
        let w = g.param(&self.store, self.p(w), trainable);
        let b = g.param(&self.store, self.p(b), trainable);
        let y = g.matmul(x, w)?;
        g.add_bias_row(y, b)
    }

    /// Pre-LN transformer block. Base layers pass `HeadMode::Causal`.
    fn block(
        &self,
        g: &mut Graph<f32>,
        x: TensorId,
        name: &str,
        mode: &HeadMode,
        trainable: bool,
    ) -> std::result::Result<TensorId, TensorError> {
        let d = self.dims.dim;
        let heads = self.dims.heads;
        let hd = d / heads;
        let g1 = g.param(&self.store, self.p(&format!("{name}.ln1.g")), trainable);
        let b1 = g.param(&self.store, self.p(&format!("{name}.ln1.b")), trainable);
        let ln1 = g.layer_norm(x, g1, b1, 1e-5)?;
        let q = self.linear(g, ln1, &format!("{name}.attn.wq"), &format!("{name}.attn.bq"), trainable)?;
        let k = self.linear(g, ln1, &format!("{name}.attn.wk"), &format!("{name}.attn.bk"), trainable)?;
        let v = self.linear(g, ln1, &format!("{name}.attn.wv"), &format!("{name}.attn.bv"), trainable)?;
        let bias = g.param(&self.store, self.p(&format!("{name}.attn.bias")), trainable);
        let mut head_outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = g.slice_cols(q, h * hd, hd)?;
            let kh = g.slice_cols(k, h * hd, hd)?;
            let vh = g.slice_cols(v, h * hd, hd)?;
            let scores = g.matmul_t(qh, kh, false, true)?;
            let scaled = g.scale(scores, 1.0 / (hd as f64).sqrt());
            let bh = g.slice_cols(bias, h, 1)?;
            let biased = g.add_scalar_t(scaled, bh)?;
            let (masked, post) = match mode {
                HeadMode::Causal => (g.causal_mask(biased)?, None),
                HeadMode::Masked { visible, post_softmax } => {
                    if *post_softmax {
                        (biased, Some(visible.clone()))
                    } else {
                        (g.key_mask(biased, visible)?, None)
                    }
                }
            };
            let mut probs = g.softmax_lastdim(masked)?;
            if let Some(visible) = post {
                probs = g.col_mask01(probs, &visible)?;
            }
            head_outs.push(g.matmul(probs, vh)?);
        }
        let cat = g.concat_cols(&head_outs)?;
        let proj = self.linear(g, cat, &format!("{name}.attn.wo"), &format!("{name}.attn.bo"), trainable)?;
        let x = g.add(x, proj)?;
        let g2 = g.param(&self.store, self.p(&format!("{name}.ln2.g")), trainable);
        let b2 = g.param(&self.store, self.p(&format!("{name}.ln2.b")), trainable);
        let ln2 = g.layer_norm(x, g2, b2, 1e-5)?;
        let h1 = self.linear(g, ln2, &format!("{name}.mlp.w1"), &format!("{name}.mlp.b1"), trainable)?;
        let a = g.gelu(h1);
        let h2 = self.linear(g, a, &format!("{name}.mlp.w2"), &format!("{name}.mlp.b2"), trainable)?;
        g.add(x, h2)
    }

    fn run_blocks(
        &self,
        g: &mut Graph<f32>,
        mut x: TensorId,
        prefix: &str,
        layers: usize,
        mode: &HeadMode,
        trainable: bool,
    ) -> std::result::Result<TensorId, TensorError> {
        for name in block_names(prefix, layers) {
            x = self.block(g, x, &name, mode, trainable)?;
        }
        Ok(x)
    }

    /// Pool raw-rate music features to token rate and project with the MLP.
    /// Input must already be normalized.
    pub fn music_embedding(
        &self,
        g: &mut Graph<f32>,
        music: TensorId,
        trainable: bool,
    ) -> std::result::Result<TensorId, TensorError> {
        let pooled = g.avg_pool_rows(music, self.dims.downsample)?;
        let h = self.linear(g, pooled, "music.mlp.w1", "music.mlp.b1", trainable)?;
        let a = g.gelu(h);
        self.linear(g, a, "music.mlp.w2", "music.mlp.b2", trainable)
    }

    pub fn normalize_music(&self, music: &MusicFeatures) -> Vec<f32> {
        let mut out = music.data.clone();
        for t in 0..music.frames {
            for c in 0..music.channels {
                let i = t * music.channels + c;
                out[i] = (out[i] - self.music_mean[c]) / self.music_std[c];
            }
        }
        out
    }

    /// Text base: the prompt embedding occupies slot 0, prefix tokens follow;
    /// causal attention; per-slot features come back.
    pub fn t_base(
        &self,
        g: &mut Graph<f32>,
        template: usize,
        prefix: &[usize],
        trainable: bool,
    ) -> Result<TensorId> {
        if template >= self.dims.n_templates {
            return Err(Error::UnknownTemplate(template));
        }
        if prefix.len() > self.dims.max_text {
            return Err(Error::Invalid(format!(
                "text prefix length {} exceeds T_t = {}",
                prefix.len(),
                self.dims.max_text
            )));
        }
        let text_table = g.param(&self.store, self.p("emb.text"), trainable);
        let t_row = g.embed(text_table, &[template]).map_err(Error::from)?;
        let x = if prefix.is_empty() {
            t_row
        } else {
            let tok_table = g.param(&self.store, self.p("emb.token"), trainable);
            let toks = g.embed(tok_table, prefix).map_err(Error::from)?;
            g.concat_rows(&[t_row, toks]).map_err(Error::from)?
        };
        let pos_table = g.param(&self.store, self.p("emb.pos.t"), trainable);
        let pos_idx: Vec<usize> = (0..=prefix.len()).collect();
        let pos = g.embed(pos_table, &pos_idx).map_err(Error::from)?;
        let x = g.add(x, pos).map_err(Error::from)?;
        self.run_blocks(g, x, "base_t", self.dims.base_layers, &HeadMode::Causal, trainable)
            .map_err(Error::from)
    }

    /// Music base for causal prediction. Slot 0 carries the start embedding;
    /// slot i carries token i-1 plus the aligned music row (zeros past the
    /// end of the music). Genre rows, when given, transform the music
    /// embedding through cross-attention before fusion.
    pub fn m_base(
        &self,
        g: &mut Graph<f32>,
        music_emb: TensorId,
        genre: Option<&crate::genre::GenreInjection>,
        prefix: &[usize],
        trainable: bool,
    ) -> Result<TensorId> {
        let music_rows = g.shape(music_emb)[0];
        if music_rows < prefix.len() {
            return Err(Error::Invalid(format!(
                "music rows {} shorter than prefix {}",
                music_rows,
                prefix.len()
            )));
        }
        if prefix.len() + 1 > self.dims.max_music + 1 {
            return Err(Error::Invalid(format!(
                "music prefix length {} exceeds T_m = {}",
                prefix.len(),
                self.dims.max_music
            )));
        }
        let music_emb = match genre {
            Some(inj) => inj.transform(g, music_emb)?,
            None => music_emb,
        };
        let slots = prefix.len() + 1;
        let start = g.param(&self.store, self.p("emb.start"), trainable);
        let x = if prefix.is_empty() {
            start
        } else {
            let tok_table = g.param(&self.store, self.p("emb.token"), trainable);
            let toks = g.embed(tok_table, prefix).map_err(Error::from)?;
            g.concat_rows(&[start, toks]).map_err(Error::from)?
        };
        let pos_table = g.param(&self.store, self.p("emb.pos.m"), trainable);
        let pos_idx: Vec<usize> = (0..slots).collect();
        let pos = g.embed(pos_table, &pos_idx).map_err(Error::from)?;
        let x = g.add(x, pos).map_err(Error::from)?;
        // align music rows to slots, zero-padding past the music end
        let aligned = if music_rows == slots {
            music_emb
        } else if music_rows > slots {
            g.slice_rows(music_emb, 0, slots).map_err(Error::from)?
        } else {
            let zeros = g.leaf(
                vec![0.0; (slots - music_rows) * self.dims.dim],
                vec![slots - music_rows, self.dims.dim],
            );
            g.concat_rows(&[music_emb, zeros]).map_err(Error::from)?
        };
        let x = g.add(x, aligned).map_err(Error::from)?;
        self.run_blocks(g, x, "base_m", self.dims.base_layers, &HeadMode::Causal, trainable)
            .map_err(Error::from)
    }

    /// Music base for masked infilling: no shift, slot i carries token i
    /// (or the mask embedding at PREDICT positions) plus music row i.
    pub fn m_base_masked(
        &self,
        g: &mut Graph<f32>,
        music_emb: TensorId,
        tokens: &[usize],
        known: &[bool],
        trainable: bool,
        mask_trainable: bool,
    ) -> Result<TensorId> {
        assert_eq!(tokens.len(), known.len());
        let len = tokens.len();
        let music_rows = g.shape(music_emb)[0];
        if music_rows < len {
            return Err(Error::Invalid(format!(
                "music rows {music_rows} shorter than sequence {len}"
            )));
        }
        let tok_table = g.param(&self.store, self.p("emb.token"), trainable);
        let mask_row = g.param(&self.store, self.p("emb.mask"), mask_trainable);
        let mut rows = Vec::with_capacity(len);
        for i in 0..len {
            if known[i] {
                rows.push(g.embed(tok_table, &tokens[i..i + 1]).map_err(Error::from)?);
            } else {
                rows.push(mask_row);
            }
        }
        let x = g.concat_rows(&rows).map_err(Error::from)?;
        let pos_table = g.param(&self.store, self.p("emb.pos.m"), trainable);
        let pos_idx: Vec<usize> = (0..len).collect();
        let pos = g.embed(pos_table, &pos_idx).map_err(Error::from)?;
        let x = g.add(x, pos).map_err(Error::from)?;
        let music_slice = if music_rows == len {
            music_emb
        } else {
            g.slice_rows(music_emb, 0, len).map_err(Error::from)?
        };
        let x = g.add(x, music_slice).map_err(Error::from)?;
        self.run_blocks(g, x, "base_m", self.dims.base_layers, &HeadMode::Causal, trainable)
            .map_err(Error::from)
    }

    /// Shared head: same weights serve both base layers and both modes.
    pub fn head(
        &self,
        g: &mut Graph<f32>,
        features: TensorId,
        mode: &HeadMode,
        trainable: bool,
    ) -> Result<TensorId> {
        if let HeadMode::Masked { visible, .. } = mode {
            if visible.len() != g.shape(features)[0] {
                return Err(Error::Invalid(format!(
                    "mask length {} does not match {} positions",
                    visible.len(),
                    g.shape(features)[0]
                )));
            }
        }
        let x = self
            .run_blocks(g, features, "head", self.dims.head_layers, mode, trainable)
            .map_err(Error::from)?;
        let gf = g.param(&self.store, self.p("head.ln_f.g"), trainable);
        let bf = g.param(&self.store, self.p("head.ln_f.b"), trainable);
        let ln = g.layer_norm(x, gf, bf, 1e-5).map_err(Error::from)?;
        self.linear(g, ln, "head.out.w", "head.out.b", trainable)
            .map_err(Error::from)
    }

    pub fn save(&self, path: &Path, seed: u64, config_echo: String) -> Result<()> {
        let mut ckpt = Checkpoint::new(STAGE, seed, config_echo);
        ckpt.push_store(&self.store);
        ckpt.push("norm.music_mean", vec![self.music_mean.len()], self.music_mean.clone());
        ckpt.push("norm.music_std", vec![self.music_std.len()], self.music_std.clone());
        write_checkpoint(path, &ckpt)
    }

    pub fn load(path: &Path, cfg: &RunConfig, needed_by: &str) -> Result<Self> {
        Self::load_stage(path, cfg, STAGE, needed_by)
    }

    pub fn load_stage(path: &Path, cfg: &RunConfig, stage: &str, needed_by: &str) -> Result<Self> {
        let ckpt = read_stage_checkpoint(path, stage, needed_by)?;
        let mut gpt = CrossModalGpt::new(GptDims::from_config(cfg), ckpt.seed);
        ckpt.apply_to_store(&mut gpt.store, &path.display().to_string())?;
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
        gpt.music_mean = grab("norm.music_mean")?;
        gpt.music_std = grab("norm.music_std")?;
        Ok(gpt)
    }
}

/// Mean next-token (or masked-token) negative log-likelihood; `-1` targets
/// are excluded.
pub fn recon_loss(
    g: &mut Graph<f32>,
    logits: TensorId,
    targets: &[i64],
) -> std::result::Result<TensorId, TensorError> {
    g.cross_entropy_mean(logits, targets)
}

/// Independently replace each input token with a uniform draw from the
/// codebook with probability `tau`. Targets are never corrupted.
pub fn corrupt(tokens: &[usize], tau: f64, codebook_size: usize, rng: &mut Rng) -> Vec<usize> {
    if tau <= 0.0 {
        return tokens.to_vec();
    }
    tokens
        .iter()
        .map(|&t| {
            if rng.uniform() < tau {
                rng.below(codebook_size)
            } else {
                t
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
pub enum Decode {
    Greedy,
    TopK(usize),
}

/// Pick the next token from a logits row. PAD is never sampled; END is
/// allowed so generation can terminate.
pub fn sample_token(logits: &[f32], vocab: usize, pad: usize, decode: Decode, rng: &mut Rng) -> usize {
    debug_assert_eq!(logits.len() % vocab, 0);
    let row = &logits[logits.len() - vocab..];
    match decode {
        Decode::Greedy => {
            let mut best = 0usize;
            let mut best_v = f32::NEG_INFINITY;
            for (i, &v) in row.iter().enumerate() {
                if i == pad {
                    continue;
                }
                if v > best_v {
                    best_v = v;
                    best = i;
                }
            }
            best
        }
        Decode::TopK(k) => {
            let mut idx: Vec<usize> = (0..vocab).filter(|&i| i != pad).collect();
            idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
            idx.truncate(k.max(1));
            let mx = row[idx[0]] as f64;
            let weights: Vec<f64> = idx.iter().map(|&i| ((row[i] as f64) - mx).exp()).collect();
            let total: f64 = weights.iter().sum();
            let mut draw = rng.uniform() * total;
            for (j, &i) in idx.iter().enumerate() {
                draw -= weights[j];
                if draw <= 0.0 {
                    return i;
                }
            }
            *idx.last().unwrap()
        }
    }
}

pub struct GenerateSpec<'a> {
    pub music: &'a MusicFeatures,
    pub genre: Option<&'a crate::genre::GenreCode>,
    pub max_len: usize,
    pub seed: u64,
    pub decode: Decode,
}

impl CrossModalGpt {
    /// Autoregressive music-to-dance generation; stops at END or `max_len`.
    pub fn generate(&self, spec: &GenerateSpec) -> Result<Vec<usize>> {
        let music_norm = self.normalize_music(spec.music);
        self.generate_from_normalized(
            &music_norm,
            spec.music.frames,
            spec.genre,
            spec.max_len,
            spec.seed,
            spec.decode,
        )
    }

    /// Same loop over music features that are already in the normalized
    /// domain (the form the training corpus is stored in).
    pub fn generate_from_normalized(
        &self,
        music_norm: &[f32],
        music_frames: usize,
        genre: Option<&crate::genre::GenreCode>,
        max_len: usize,
        seed: u64,
        decode: Decode,
    ) -> Result<Vec<usize>> {
        if max_len > self.dims.max_music {
            return Err(Error::Invalid(format!(
                "max_len {} exceeds T_m = {}",
                max_len, self.dims.max_music
            )));
        }
        let mut rng = Rng::derive(seed, "generate");
        let mut tokens: Vec<usize> = Vec::new();
        let end = self.dims.end_token();
        while tokens.len() < max_len {
            let mut g: Graph<f32> = Graph::new();
            let music = g.leaf(music_norm.to_vec(), vec![music_frames, self.dims.c_m]);
            let memb = self.music_embedding(&mut g, music, false).map_err(Error::from)?;
            let inj = genre
                .map(|code| code.injection(&mut g, false))
                .transpose()?;
            let feats = self.m_base(&mut g, memb, inj.as_ref(), &tokens, false)?;
            let logits = self.head(&mut g, feats, &HeadMode::Causal, false)?;
            let next = sample_token(
                g.data(logits),
                self.dims.vocab(),
                self.dims.pad_token(),
                decode,
                &mut rng,
            );
            if next == end || next >= self.dims.codebook_size {
                break;
            }
            tokens.push(next);
        }
        Ok(tokens)
    }
}

/// One tokenized text-paired sample.
#[derive(Clone, Debug)]
pub struct TextSample {
    pub template: usize,
    pub tokens: Vec<usize>,
}

/// One tokenized music-paired sample carrying normalized music features.
#[derive(Clone, Debug)]
pub struct MusicSample {
    pub genre: usize,
    pub music_norm: Vec<f32>,
    pub music_frames: usize,
    pub tokens: Vec<usize>,
}

/// Tokenize a preprocessed corpus with a frozen VQ-VAE.
pub fn tokenize_corpus(
    vq: &VqVae,
    corpus: &Corpus,
    stats: &NormStats,
) -> Result<(Vec<TextSample>, Vec<MusicSample>)> {
    let mut text = Vec::new();
    let mut music = Vec::new();
    for rec in &corpus.records {
        match rec {
            crate::data::Record::TextPaired { template, motion } => {
                text.push(TextSample {
                    template: *template,
                    tokens: vq.encode_tokens(motion)?,
                });
            }
            crate::data::Record::MusicPaired { genre, motion, music: m } => {
                music.push(MusicSample {
                    genre: *genre,
                    music_norm: m.data.clone(),
                    music_frames: m.frames,
                    tokens: vq.encode_tokens(motion)?,
                });
            }
        }
    }
    let _ = stats;
    Ok((text, music))
}

fn targets_with_end(tokens: &[usize], end: usize) -> Vec<i64> {
    let mut t: Vec<i64> = tokens.iter().map(|&x| x as i64).collect();
    t.push(end as i64);
    t
}

#[derive(Clone, Debug, Default)]
pub struct GptTrainLog {
    pub text_curve: Vec<(usize, f64)>,
    pub music_curve: Vec<(usize, f64)>,
}

/// Strict text/music batch alternation with the shared head updated by both.
pub fn alternate_train(
    gpt: &mut CrossModalGpt,
    text_corpus: &[TextSample],
    music_corpus: &[MusicSample],
    cfg: &RunConfig,
    seed: u64,
) -> Result<GptTrainLog> {
    if text_corpus.is_empty() || music_corpus.is_empty() {
        return Err(Error::Invalid(
            "alternate training requires both a text and a music corpus".into(),
        ));
    }
    let mut rng = Rng::derive(seed, "gpt-train");
    let mut opt = AdamW::new(AdamWConfig::new(cfg.gpt_lr as f32, 0.5, 0.99));
    let mut text_order: Vec<usize> = (0..text_corpus.len()).collect();
    let mut music_order: Vec<usize> = (0..music_corpus.len()).collect();
    let (mut tc, mut mc) = (text_order.len(), music_order.len());
    let mut log = GptTrainLog::default();
    let end = gpt.dims.end_token();

    for step in 0..cfg.gpt_steps {
        let mut g: Graph<f32> = Graph::new();
        let mut batch_loss: Option<TensorId> = None;
        let is_text = step % 2 == 0;
        for _ in 0..cfg.gpt_batch {
            let loss = if is_text {
                if tc >= text_order.len() {
                    rng.shuffle(&mut text_order);
                    tc = 0;
                }
                let s = &text_corpus[text_order[tc]];
                tc += 1;
                let inputs = corrupt(&s.tokens, cfg.corrupt_tau, gpt.dims.codebook_size, &mut rng);
                let feats = gpt.t_base(&mut g, s.template, &inputs, true)?;
                let logits = gpt.head(&mut g, feats, &HeadMode::Causal, true)?;
                recon_loss(&mut g, logits, &targets_with_end(&s.tokens, end))?
            } else {
                if mc >= music_order.len() {
                    rng.shuffle(&mut music_order);
                    mc = 0;
                }
                let s = &music_corpus[music_order[mc]];
                mc += 1;
                let music = g.leaf(s.music_norm.clone(), vec![s.music_frames, gpt.dims.c_m]);
                let memb = gpt.music_embedding(&mut g, music, true)?;
                let feats = gpt.m_base(&mut g, memb, None, &s.tokens, true)?;
                let logits = gpt.head(&mut g, feats, &HeadMode::Causal, true)?;
                recon_loss(&mut g, logits, &targets_with_end(&s.tokens, end))?
            };
            batch_loss = Some(match batch_loss {
                None => loss,
                Some(prev) => g.add(prev, loss)?,
            });
        }
        let total = g.scale(batch_loss.unwrap(), 1.0 / cfg.gpt_batch as f64);
        let loss_val = g.finite_scalar(total).map_err(|_| Error::Divergence {
            stage: STAGE.into(),
            step,
        })?;
        g.backward(total)?;
        let grads = g.collect_param_grads();
        opt.step(&mut gpt.store, &grads);
        if step % 20 == 0 || step + 1 == cfg.gpt_steps {
            if is_text {
                log.text_curve.push((step, loss_val));
            } else {
                log.music_curve.push((step, loss_val));
            }
        }
    }
    Ok(log)
}

/// Clean teacher-forced mean NLL of the text corpus.
pub fn nll_text(gpt: &CrossModalGpt, corpus: &[TextSample]) -> Result<f64> {
    let end = gpt.dims.end_token();
    let mut total = 0.0;
    for s in corpus {
        let mut g: Graph<f32> = Graph::new();
        let feats = gpt.t_base(&mut g, s.template, &s.tokens, false)?;
        let logits = gpt.head(&mut g, feats, &HeadMode::Causal, false)?;
        let loss = recon_loss(&mut g, logits, &targets_with_end(&s.tokens, end))?;
        total += g.scalar(loss);
    }
    Ok(total / corpus.len() as f64)
}

/// Clean teacher-forced mean NLL of the music corpus.
pub fn nll_music(gpt: &CrossModalGpt, corpus: &[MusicSample]) -> Result<f64> {
    let end = gpt.dims.end_token();
    let mut total = 0.0;
    for s in corpus {
        let mut g: Graph<f32> = Graph::new();
        let music = g.leaf(s.music_norm.clone(), vec![s.music_frames, gpt.dims.c_m]);
        let memb = gpt.music_embedding(&mut g, music, false)?;
        let feats = gpt.m_base(&mut g, memb, None, &s.tokens, false)?;
        let logits = gpt.head(&mut g, feats, &HeadMode::Causal, false)?;
        let loss = recon_loss(&mut g, logits, &targets_with_end(&s.tokens, end))?;
        total += g.scalar(loss);
    }
    Ok(total / corpus.len() as f64)
}

#[cfg(test)]
mod tests;
