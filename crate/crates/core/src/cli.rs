//! Command-line surface. Every subcommand resolves a full `RunConfig`
//! (preset -> optional config file -> --set overrides -> --seed) and prints
//! it before doing any work.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::data::{read_corpus, MusicFeatures};
use crate::error::{Error, Result};
use crate::fusion::{generate_with_text, FusionSchedule, TextGenerateSpec};
use crate::genre::{genre_code, GenreCode, GenreNet};
use crate::gpt::{CrossModalGpt, Decode, GenerateSpec};
use crate::infill::KeyframeSpec;
use crate::metrics::{
    diversity, fid, geometric_features, kinetic_features, DiversityPairs, GaussianStats,
};
use crate::pipeline::{
    self, export_motion, load_motion_dir, meta_from_music, music_matrix, read_token_file,
    write_token_file, StagePaths, TokenFile,
};
use crate::rngx::Rng;
use crate::vqvae::VqVae;

#[derive(Parser, Debug)]
#[command(name = "choreo", about = "Controllable music-to-dance generation pipeline", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// Configuration preset: desk or paper.
    #[arg(long, default_value = "desk")]
    pub preset: String,
    /// key=value config file applied over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Inline key=value overrides, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Master seed override.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::preset(&self.preset)?;
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            cfg.apply_text(&text)?;
        }
        for kv in &self.sets {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got '{kv}'")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        println!("resolved configuration:");
        for line in cfg.to_lines().lines() {
            println!("  {line}");
        }
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Corpus tools.
    Data {
        #[command(subcommand)]
        command: DataCommand,
    },
    /// Stage 1: pretrain the motion tokenizer.
    TrainVqvae {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 2: alternate text/music training of the token predictor.
    TrainGpt {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        vq: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 3: adversarial genre control training.
    TrainGenre {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        gpt: PathBuf,
        #[arg(long)]
        vq: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 4: retrain the head for masked infilling.
    TrainInfill {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        gpt: PathBuf,
        #[arg(long)]
        vq: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a token sequence from music with optional genre/text control.
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        vq: PathBuf,
        #[arg(long)]
        gpt: PathBuf,
        /// Music source: synth:genre=G,frames=N,seed=S or corpus:FILE:INDEX.
        #[arg(long)]
        music: String,
        /// Genre id for genre control (requires --genre-ckpt).
        #[arg(long)]
        genre: Option<usize>,
        #[arg(long)]
        genre_ckpt: Option<PathBuf>,
        /// Text template name for text control (e.g. raise-arms).
        #[arg(long)]
        text: Option<String>,
        /// Fusion interval START:END in token positions.
        #[arg(long)]
        interval: Option<String>,
        #[arg(long)]
        max_len: Option<usize>,
        /// greedy or topk:K
        #[arg(long, default_value = "greedy")]
        decode: String,
        #[arg(long)]
        out: PathBuf,
        /// Also export the decoded motion under this path prefix.
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Regenerate the neighborhoods of pinned keyframes.
    Infill {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        gpt: PathBuf,
        #[arg(long)]
        vq: PathBuf,
        #[arg(long)]
        tokens: PathBuf,
        /// Keyframe spec pos=P,file=CLIP.bin; repeatable.
        #[arg(long = "keyframe", value_name = "pos=P,file=F")]
        keyframes: Vec<String>,
        #[arg(long, default_value_t = 6)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics between a generated and a reference motion directory.
    Eval {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Random pair count for diversity, or "all".
        #[arg(long, default_value = "all")]
        pairs: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// All four training stages in order.
    Pipeline {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a token file into corpus + CSV motion files.
    Export {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        vq: PathBuf,
        #[arg(long)]
        tokens: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
pub enum DataCommand {
    /// Generate a balanced synthetic corpus.
    Gen {
        #[arg(long, default_value_t = 3)]
        genres: usize,
        #[arg(long = "per-genre", default_value_t = 32)]
        per_genre: usize,
        #[arg(long, default_value_t = 5)]
        templates: usize,
        #[arg(long = "per-template", default_value_t = 32)]
        per_template: usize,
        #[arg(long, default_value_t = 128)]
        frames: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_decode(s: &str) -> Result<Decode> {
    if s == "greedy" {
        return Ok(Decode::Greedy);
    }
    if let Some(k) = s.strip_prefix("topk:") {
        let k: usize = k
            .parse()
            .map_err(|_| Error::Config(format!("bad top-k count in '{s}'")))?;
        return Ok(Decode::TopK(k));
    }
    Err(Error::Config(format!(
        "unknown decode mode '{s}' (expected greedy or topk:K)"
    )))
}

fn parse_interval(s: &str) -> Result<FusionSchedule> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("interval must be START:END, got '{s}'")))?;
    let start: usize = a
        .parse()
        .map_err(|_| Error::Config(format!("bad interval start '{a}'")))?;
    let end: usize = b
        .parse()
        .map_err(|_| Error::Config(format!("bad interval end '{b}'")))?;
    FusionSchedule::new(start, end)
}

/// synth:genre=G,frames=N,seed=S or corpus:FILE:INDEX
fn parse_music(spec: &str, cfg: &RunConfig) -> Result<(MusicFeatures, Option<usize>)> {
    if let Some(rest) = spec.strip_prefix("synth:") {
        let mut genre = 0usize;
        let mut frames = cfg.frames;
        let mut seed = 0u64;
        for part in rest.split(',') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad music field '{part}'")))?;
            match k {
                "genre" => genre = v.parse().map_err(|_| Error::Config(format!("bad genre '{v}'")))?,
                "frames" => frames = v.parse().map_err(|_| Error::Config(format!("bad frames '{v}'")))?,
                "seed" => seed = v.parse().map_err(|_| Error::Config(format!("bad seed '{v}'")))?,
                other => return Err(Error::Config(format!("unknown music field '{other}'"))),
            }
        }
        let label = crate::data::GenreLabel::new(genre, cfg.n_genres)?;
        let (_, music) = crate::data::synth_dance(&label, cfg.n_genres, frames, seed)?;
        return Ok((music, Some(genre)));
    }
    if let Some(rest) = spec.strip_prefix("corpus:") {
        let (path, index) = match rest.rsplit_once(':') {
            Some((p, i)) if i.chars().all(|c| c.is_ascii_digit()) => {
                (PathBuf::from(p), i.parse::<usize>().unwrap())
            }
            _ => (PathBuf::from(rest), 0),
        };
        let corpus = read_corpus(&path)?;
        let pairs: Vec<_> = corpus.music_paired().collect();
        let (genre, _, music) = pairs.get(index).ok_or_else(|| {
            Error::Invalid(format!(
                "corpus {} has {} music-paired records, index {index} out of range",
                path.display(),
                pairs.len()
            ))
        })?;
        return Ok(((*music).clone(), Some(*genre)));
    }
    Err(Error::Config(format!(
        "music spec must start with synth: or corpus:, got '{spec}'"
    )))
}

fn parse_keyframe(spec: &str, vq: &VqVae) -> Result<(usize, crate::data::MotionSequence)> {
    let mut pos: Option<usize> = None;
    let mut file: Option<PathBuf> = None;
    for part in spec.split(',') {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("bad keyframe field '{part}'")))?;
        match k {
            "pos" => pos = Some(v.parse().map_err(|_| Error::Config(format!("bad pos '{v}'")))?),
            "file" => file = Some(PathBuf::from(v)),
            other => return Err(Error::Config(format!("unknown keyframe field '{other}'"))),
        }
    }
    let pos = pos.ok_or_else(|| Error::Config("keyframe needs pos=".into()))?;
    let file = file.ok_or_else(|| Error::Config("keyframe needs file=".into()))?;
    let corpus = read_corpus(&file)?;
    let motion = corpus
        .records
        .first()
        .ok_or_else(|| Error::Invalid(format!("{} holds no records", file.display())))?
        .motion()
        .clone();
    // clips arrive in raw units; the encoder works in the normalized domain
    Ok((pos, vq.stats.normalize_motion(&motion)))
}

fn resolve_genre_code(
    cfg: &RunConfig,
    genre: Option<usize>,
    genre_ckpt: &Option<PathBuf>,
    seed: u64,
) -> Result<Option<GenreCode>> {
    match genre {
        None => Ok(None),
        Some(g) => {
            let path = genre_ckpt.as_ref().ok_or_else(|| {
                Error::Config("--genre requires --genre-ckpt".into())
            })?;
            let net = GenreNet::load(path, cfg, "generate")?;
            let mut rng = Rng::derive(seed, "genre-z");
            let z: Vec<f32> = (0..cfg.genre_z_dim).map(|_| rng.normal_f32()).collect();
            Ok(Some(genre_code(&net, g, &z)?))
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Data { command } => match command {
            DataCommand::Gen {
                genres,
                per_genre,
                templates,
                per_template,
                frames,
                seed,
                out,
            } => {
                let corpus =
                    crate::data::gen_corpus(genres, per_genre, templates, per_template, frames, seed)?;
                crate::data::write_corpus(&out, &corpus)?;
                println!(
                    "wrote {} records ({} music-paired, {} text-paired) to {}",
                    corpus.records.len(),
                    genres * per_genre,
                    templates * per_template,
                    out.display()
                );
                Ok(())
            }
        },
        Command::TrainVqvae { cfg, corpus, out } => {
            let cfg = cfg.resolve()?;
            let log = pipeline::stage_vqvae(&cfg, &corpus, &out)?;
            println!(
                "vq-vae done: recon L1 {:.4}, codebook usage {:.2}, {} steps -> {}",
                log.final_recon_l1,
                log.codebook_usage,
                log.steps_run,
                out.display()
            );
            Ok(())
        }
        Command::TrainGpt { cfg, vq, corpus, out } => {
            let cfg = cfg.resolve()?;
            let log = pipeline::stage_gpt(&cfg, &vq, &corpus, &out)?;
            let last_t = log.text_curve.last().map(|x| x.1).unwrap_or(f64::NAN);
            let last_m = log.music_curve.last().map(|x| x.1).unwrap_or(f64::NAN);
            println!(
                "gpt done: final text loss {last_t:.4}, music loss {last_m:.4} -> {}",
                out.display()
            );
            Ok(())
        }
        Command::TrainGenre { cfg, gpt, vq, corpus, out } => {
            let cfg = cfg.resolve()?;
            let log = pipeline::stage_genre(&cfg, &gpt, &vq, &corpus, &out)?;
            println!(
                "genre done: D(real) {:.3}, D(fake) {:.3} -> {}",
                log.final_real_mean,
                log.final_fake_mean,
                out.display()
            );
            Ok(())
        }
        Command::TrainInfill { cfg, gpt, vq, corpus, out } => {
            let cfg = cfg.resolve()?;
            let log = pipeline::stage_infill(&cfg, &gpt, &vq, &corpus, &out)?;
            println!(
                "infill done: {} skipped batches, final loss {:.4} -> {}",
                log.skipped_batches,
                log.loss_curve.last().map(|x| x.1).unwrap_or(f64::NAN),
                out.display()
            );
            Ok(())
        }
        Command::Generate {
            cfg,
            vq,
            gpt,
            music,
            genre,
            genre_ckpt,
            text,
            interval,
            max_len,
            decode,
            out,
            export,
        } => {
            let cfg = cfg.resolve()?;
            let vq = VqVae::load(&vq, &cfg, "generate")?;
            let gpt = CrossModalGpt::load(&gpt, &cfg, "generate")?;
            let decode = parse_decode(&decode)?;
            let (music, music_genre) = parse_music(&music, &cfg)?;
            let max_len = max_len.unwrap_or(music.frames / cfg.vq_downsample);
            let code = resolve_genre_code(&cfg, genre, &genre_ckpt, cfg.seed)?;

            let tokens = match (&text, &interval) {
                (None, None) => gpt.generate(&GenerateSpec {
                    music: &music,
                    genre: code.as_ref(),
                    max_len,
                    seed: cfg.seed,
                    decode,
                })?,
                (Some(name), maybe_interval) => {
                    let template = crate::data::TextTemplate::from_name(name)?;
                    let schedule = match maybe_interval {
                        Some(s) => parse_interval(s)?,
                        None => FusionSchedule::new(0, max_len)?,
                    };
                    generate_with_text(
                        &gpt,
                        &TextGenerateSpec {
                            music_norm: &gpt.normalize_music(&music),
                            music_frames: music.frames,
                            genre: code.as_ref(),
                            template: template.id(),
                            schedule,
                            max_len,
                            seed: cfg.seed,
                            decode,
                        },
                    )?
                }
                (None, Some(_)) => {
                    return Err(Error::Config("--interval requires --text".into()));
                }
            };

            let template_id = text
                .as_deref()
                .map(crate::data::TextTemplate::from_name)
                .transpose()?
                .map(|t| t.id());
            let tf = TokenFile {
                tokens: tokens.clone(),
                meta: meta_from_music(&music, cfg.seed, genre.or(music_genre), template_id),
            };
            write_token_file(&out, &tf)?;
            println!("generated {} tokens -> {}", tokens.len(), out.display());
            if let Some(prefix) = export {
                let (bin, csv) = export_motion(&tokens, &vq, &prefix)?;
                println!("exported {} and {}", bin.display(), csv.display());
            }
            Ok(())
        }
        Command::Infill { cfg, gpt, vq, tokens, keyframes, k, out } => {
            let cfg = cfg.resolve()?;
            let vq = VqVae::load(&vq, &cfg, "infill")?;
            let gpt = CrossModalGpt::load_stage(&gpt, &cfg, crate::infill::STAGE, "infill")?;
            let tf = read_token_file(&tokens)?;
            let music = music_matrix(&tf.meta);
            let music_norm = gpt.normalize_music(&music);
            let mut entries = Vec::new();
            for spec in &keyframes {
                entries.push(parse_keyframe(spec, &vq)?);
            }
            let outcome = crate::infill::infill(
                &gpt,
                &vq,
                &music_norm,
                music.frames,
                &tf.tokens,
                &KeyframeSpec { entries },
                k,
                cfg.infill_refine,
            )?;
            let new_tf = TokenFile {
                tokens: outcome.tokens.clone(),
                meta: tf.meta.clone(),
            };
            write_token_file(&out, &new_tf)?;
            println!(
                "infilled {} positions around {} keyframes -> {}",
                outcome.mask.predict_positions().len(),
                outcome.keyframe_tokens.len(),
                out.display()
            );
            Ok(())
        }
        Command::Eval {
            generated,
            reference,
            out,
            pairs,
            seed,
        } => {
            let pairs = if pairs == "all" {
                DiversityPairs::All
            } else {
                DiversityPairs::Sampled(
                    pairs
                        .parse()
                        .map_err(|_| Error::Config(format!("bad pair count '{pairs}'")))?,
                )
            };
            let row = eval_dirs(&generated, &reference, pairs, seed)?;
            std::fs::write(&out, &row).map_err(|e| Error::io(out.display().to_string(), e))?;
            print!("{row}");
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Pipeline { cfg, out } => {
            let cfg = cfg.resolve()?;
            let report = pipeline::run_pipeline(&cfg, &out)?;
            for (stage, secs) in &report.timings {
                println!("stage {stage}: {secs:.1}s");
            }
            let paths: &StagePaths = &report.paths;
            println!(
                "pipeline complete: corpus={} vq={} gpt={} genre={} infill={}",
                paths.corpus.display(),
                paths.vq.display(),
                paths.gpt.display(),
                paths.genre.display(),
                paths.infill.display()
            );
            println!(
                "  vq recon L1 {:.4} (usage {:.2}); D(real) {:.3} vs D(fake) {:.3}",
                report.vq.final_recon_l1,
                report.vq.codebook_usage,
                report.genre.final_real_mean,
                report.genre.final_fake_mean
            );
            Ok(())
        }
        Command::Export { cfg, vq, tokens, out } => {
            let cfg = cfg.resolve()?;
            let vq = VqVae::load(&vq, &cfg, "export")?;
            let tf = read_token_file(&tokens)?;
            let (bin, csv) = export_motion(&tf.tokens, &vq, &out)?;
            println!("exported {} and {}", bin.display(), csv.display());
            Ok(())
        }
    }
}

/// One CSV (header + row): fid_k, fid_g, div_k, div_g, plus the reference
/// set's diversity, counts and seed.
pub fn eval_dirs(
    generated: &Path,
    reference: &Path,
    pairs: DiversityPairs,
    seed: u64,
) -> Result<String> {
    let gen_motions = load_motion_dir(generated)?;
    let ref_motions = load_motion_dir(reference)?;
    let kin = |ms: &[crate::data::MotionSequence]| -> Result<Vec<Vec<f64>>> {
        ms.iter().map(kinetic_features).collect()
    };
    let geo = |ms: &[crate::data::MotionSequence]| -> Result<Vec<Vec<f64>>> {
        ms.iter().map(geometric_features).collect()
    };
    let gen_k = kin(&gen_motions)?;
    let gen_g = geo(&gen_motions)?;
    let ref_k = kin(&ref_motions)?;
    let ref_g = geo(&ref_motions)?;
    let fid_k = fid(&GaussianStats::fit(&gen_k)?, &GaussianStats::fit(&ref_k)?)?;
    let fid_g = fid(&GaussianStats::fit(&gen_g)?, &GaussianStats::fit(&ref_g)?)?;
    let div_k = diversity(&gen_k, pairs, seed)?;
    let div_g = diversity(&gen_g, pairs, seed)?;
    let div_k_ref = diversity(&ref_k, pairs, seed)?;
    let div_g_ref = diversity(&ref_g, pairs, seed)?;
    Ok(format!(
        "fid_k,fid_g,div_k,div_g,div_k_ref,div_g_ref,n_gen,n_ref,seed\n{fid_k},{fid_g},{div_k},{div_g},{div_k_ref},{div_g_ref},{},{},{seed}\n",
        gen_motions.len(),
        ref_motions.len(),
    ))
}
