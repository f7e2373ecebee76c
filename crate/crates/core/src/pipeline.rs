//! Stage orchestration: corpus -> vq.ckpt -> gpt.ckpt -> genre.ckpt ->
//! infill.ckpt, plus motion export and the token file format.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{
    gen_corpus, preprocess, read_corpus, write_corpus, Corpus, MotionSequence, Record,
};
use crate::error::{Error, Result};
use crate::genre::{train_genre, GenreTrainLog};
use crate::gpt::{alternate_train, tokenize_corpus, CrossModalGpt, GptDims, GptTrainLog, MusicSample};
use crate::infill::{save_infill, train_infill, InfillTrainLog};
use crate::vqvae::{train_vqvae, VqTrainLog, VqVae};

#[derive(Clone, Debug)]
pub struct StagePaths {
    pub corpus: PathBuf,
    pub vq: PathBuf,
    pub gpt: PathBuf,
    pub genre: PathBuf,
    pub infill: PathBuf,
}

impl StagePaths {
    pub fn in_dir(dir: &Path) -> Self {
        StagePaths {
            corpus: dir.join("corpus.bin"),
            vq: dir.join("vq.ckpt"),
            gpt: dir.join("gpt.ckpt"),
            genre: dir.join("genre.ckpt"),
            infill: dir.join("infill.ckpt"),
        }
    }
}

pub fn stage_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let corpus = gen_corpus(
        cfg.n_genres,
        cfg.per_genre,
        cfg.n_templates,
        cfg.per_template,
        cfg.frames,
        cfg.seed,
    )?;
    write_corpus(out, &corpus)
}

pub fn stage_vqvae(cfg: &RunConfig, corpus_path: &Path, out: &Path) -> Result<VqTrainLog> {
    let corpus = read_corpus(corpus_path)?;
    let (prep, stats) = preprocess(&corpus, cfg.frames, cfg.min_frames)?;
    let (mut vq, log) = train_vqvae(&prep, cfg, cfg.seed)?;
    vq.stats = stats;
    vq.save(out, cfg.seed, cfg.to_lines())?;
    Ok(log)
}

/// Tokenized corpus plus the normalized music-paired motions in sample order.
pub struct TokenizedCorpus {
    pub text: Vec<crate::gpt::TextSample>,
    pub music: Vec<MusicSample>,
    pub music_motions: Vec<MotionSequence>,
}

pub fn load_and_tokenize(
    cfg: &RunConfig,
    vq: &VqVae,
    corpus_path: &Path,
) -> Result<TokenizedCorpus> {
    let corpus = read_corpus(corpus_path)?;
    let (prep, stats) = preprocess(&corpus, cfg.frames, cfg.min_frames)?;
    let (text, music) = tokenize_corpus(vq, &prep, &stats)?;
    let music_motions = prep
        .records
        .iter()
        .filter_map(|r| match r {
            Record::MusicPaired { motion, .. } => Some(motion.clone()),
            _ => None,
        })
        .collect();
    Ok(TokenizedCorpus {
        text,
        music,
        music_motions,
    })
}

pub fn stage_gpt(
    cfg: &RunConfig,
    vq_path: &Path,
    corpus_path: &Path,
    out: &Path,
) -> Result<GptTrainLog> {
    let vq = VqVae::load(vq_path, cfg, "train-gpt")?;
    let tokens = load_and_tokenize(cfg, &vq, corpus_path)?;
    let mut gpt = CrossModalGpt::new(GptDims::from_config(cfg), cfg.seed);
    gpt.music_mean = vq.stats.music_mean.clone();
    gpt.music_std = vq.stats.music_std.clone();
    let log = alternate_train(&mut gpt, &tokens.text, &tokens.music, cfg, cfg.seed)?;
    gpt.save(out, cfg.seed, cfg.to_lines())?;
    Ok(log)
}

pub fn stage_genre(
    cfg: &RunConfig,
    gpt_path: &Path,
    vq_path: &Path,
    corpus_path: &Path,
    out: &Path,
) -> Result<GenreTrainLog> {
    let vq = VqVae::load(vq_path, cfg, "train-genre")?;
    let gpt = CrossModalGpt::load(gpt_path, cfg, "train-genre")?;
    let vq_hash_before = vq.store.hash_all();
    let gpt_hash_before = gpt.store.hash_all();
    let tokens = load_and_tokenize(cfg, &vq, corpus_path)?;
    let (net, log) = train_genre(&vq, &gpt, &tokens.music, &tokens.music_motions, cfg, cfg.seed)?;
    // stage isolation, enforced
    assert_eq!(vq.store.hash_all(), vq_hash_before);
    assert_eq!(gpt.store.hash_all(), gpt_hash_before);
    net.save(out, cfg.seed, cfg.to_lines())?;
    Ok(log)
}

pub fn stage_infill(
    cfg: &RunConfig,
    gpt_path: &Path,
    vq_path: &Path,
    corpus_path: &Path,
    out: &Path,
) -> Result<InfillTrainLog> {
    let vq = VqVae::load(vq_path, cfg, "train-infill")?;
    let vq_hash_before = vq.store.hash_all();
    let mut gpt = CrossModalGpt::load(gpt_path, cfg, "train-infill")?;
    let tokens = load_and_tokenize(cfg, &vq, corpus_path)?;
    let log = train_infill(&mut gpt, &tokens.music, cfg, cfg.seed)?;
    assert_eq!(vq.store.hash_all(), vq_hash_before);
    save_infill(&gpt, out, cfg.seed, cfg.to_lines())?;
    Ok(log)
}

pub struct PipelineReport {
    pub paths: StagePaths,
    pub vq: VqTrainLog,
    pub gpt: GptTrainLog,
    pub genre: GenreTrainLog,
    pub infill: InfillTrainLog,
    /// (stage name, wall seconds); log-only, never part of an artifact.
    pub timings: Vec<(&'static str, f64)>,
}

/// The four training stages in order, persisting one artifact each; any
/// stage can be rerun from its predecessor's artifact.
pub fn run_pipeline(cfg: &RunConfig, out_dir: &Path) -> Result<PipelineReport> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let paths = StagePaths::in_dir(out_dir);
    let mut timings = Vec::new();
    let mut timed = |name: &'static str, out: &mut Vec<(&'static str, f64)>, f: &mut dyn FnMut() -> Result<()>| -> Result<()> {
        let t = std::time::Instant::now();
        f()?;
        out.push((name, t.elapsed().as_secs_f64()));
        Ok(())
    };
    timed("data", &mut timings, &mut || stage_data(cfg, &paths.corpus))?;
    let mut vq = None;
    timed("vqvae", &mut timings, &mut || {
        vq = Some(stage_vqvae(cfg, &paths.corpus, &paths.vq)?);
        Ok(())
    })?;
    let mut gpt = None;
    timed("gpt", &mut timings, &mut || {
        gpt = Some(stage_gpt(cfg, &paths.vq, &paths.corpus, &paths.gpt)?);
        Ok(())
    })?;
    let mut genre = None;
    timed("genre", &mut timings, &mut || {
        genre = Some(stage_genre(cfg, &paths.gpt, &paths.vq, &paths.corpus, &paths.genre)?);
        Ok(())
    })?;
    let mut infill = None;
    timed("infill", &mut timings, &mut || {
        infill = Some(stage_infill(cfg, &paths.gpt, &paths.vq, &paths.corpus, &paths.infill)?);
        Ok(())
    })?;
    Ok(PipelineReport {
        paths,
        vq: vq.unwrap(),
        gpt: gpt.unwrap(),
        genre: genre.unwrap(),
        infill: infill.unwrap(),
        timings,
    })
}

// ---------------------------------------------------------------------------
// Token files

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TokenMeta {
    pub seed: u64,
    pub genre: Option<usize>,
    pub template: Option<usize>,
    pub music_frames: usize,
    /// Raw (unnormalized) music features, row-major frames x C_m.
    pub music_features: Vec<Vec<f32>>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TokenFile {
    pub tokens: Vec<usize>,
    pub meta: TokenMeta,
}

pub fn write_token_file(path: &Path, tf: &TokenFile) -> Result<()> {
    let json = serde_json::to_string_pretty(tf)
        .map_err(|e| Error::Invalid(format!("token serialization: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_token_file(path: &Path) -> Result<TokenFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.display().to_string(),
        msg: format!("token file: {e}"),
    })
}

pub fn music_matrix(meta: &TokenMeta) -> crate::data::MusicFeatures {
    let mut data = Vec::with_capacity(meta.music_frames * crate::data::C_M);
    for row in &meta.music_features {
        data.extend_from_slice(row);
    }
    crate::data::MusicFeatures::new(meta.music_frames, crate::data::C_M, data)
}

pub fn meta_from_music(
    music: &crate::data::MusicFeatures,
    seed: u64,
    genre: Option<usize>,
    template: Option<usize>,
) -> TokenMeta {
    TokenMeta {
        seed,
        genre,
        template,
        music_frames: music.frames,
        music_features: (0..music.frames).map(|t| music.row(t).to_vec()).collect(),
    }
}

// ---------------------------------------------------------------------------
// Motion export

/// Decode tokens through the frozen VQ-VAE, map back to raw units, and write
/// both a single-record corpus file and a CSV of (frame, 66 channels).
pub fn export_motion(tokens: &[usize], vq: &VqVae, base: &Path) -> Result<(PathBuf, PathBuf)> {
    let normalized = vq.decode(tokens)?;
    let raw = vq.stats.denormalize_motion(&normalized);
    let bin_path = base.with_extension("bin");
    let csv_path = base.with_extension("csv");
    let corpus = Corpus {
        records: vec![Record::TextPaired {
            template: 0,
            motion: raw.clone(),
        }],
        c_d: raw.channels,
        c_m: crate::data::C_M,
        fps: raw.fps,
        n_genres: 0,
        n_templates: 0,
    };
    write_corpus(&bin_path, &corpus)?;

    let mut csv = String::with_capacity(raw.frames * raw.channels * 10);
    csv.push_str("frame");
    for c in 0..raw.channels {
        csv.push_str(&format!(",c{c}"));
    }
    csv.push('\n');
    for t in 0..raw.frames {
        csv.push_str(&t.to_string());
        for v in raw.row(t) {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
    }
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    Ok((bin_path, csv_path))
}

/// Every motion from every corpus file directly inside `dir`, sorted by
/// file name for determinism.
pub fn load_motion_dir(dir: &Path) -> Result<Vec<MotionSequence>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir.display().to_string(), e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|x| x == "bin").unwrap_or(false))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Invalid(format!(
            "no .bin corpus files in {}",
            dir.display()
        )));
    }
    let mut motions = Vec::new();
    for f in files {
        let corpus = read_corpus(&f)?;
        for rec in corpus.records {
            motions.push(rec.motion().clone());
        }
    }
    Ok(motions)
}
