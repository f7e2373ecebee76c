//! Procedural motion and music generators.
//!
//! Every generator is a pure function of its ids and seed. Trig goes through
//! `libm` so golden hashes hold across platforms.

use super::{
    genre_frequency, Corpus, GenreLabel, MotionSequence, MusicFeatures, Record, TextPrompt,
    TextTemplate, ARM_JOINTS, C_D, C_M, FPS,
};
use crate::error::{Error, Result};
use crate::rngx::{mix, Rng};

const TAU: f64 = std::f64::consts::TAU;

/// Sinusoidal dance whose fundamental frequency encodes the genre, paired
/// with music carrying a matched spectral envelope and a beat impulse train.
pub fn synth_dance(
    genre: &GenreLabel,
    n_genres: usize,
    frames: usize,
    seed: u64,
) -> Result<(MotionSequence, MusicFeatures)> {
    if genre.id >= n_genres {
        return Err(Error::UnknownGenre(genre.id));
    }
    if frames < 8 {
        return Err(Error::RecordTooShort { got: frames, min: 8 });
    }
    let f0 = genre_frequency(genre.id);
    let mut rng = Rng::seed_from_u64(mix(seed, 0xDA5CE ^ genre.id as u64));

    // Every record is a time-shifted rendition of its genre's template with
    // small per-channel jitter: a record-level phase shifts all channels
    // coherently (harmonic h shifts by h*phi so the waveform translates in
    // time), which keeps local windows on a compact manifold the codebook
    // can cover.
    const HARMONIC_BASE: [f64; 3] = [1.0, 0.25, 0.1];
    let phi_rec = rng.range(0.0, TAU);
    let scale_rec = rng.range(0.9, 1.1);
    let mut amp = [[0.0f64; 3]; C_D];
    let mut phase = [[0.0f64; 3]; C_D];
    let mut offset = [0.0f64; C_D];
    for c in 0..C_D {
        for h in 0..3 {
            let jitter = (0.04 * rng.normal()).clamp(-0.1, 0.1);
            amp[c][h] = HARMONIC_BASE[h] * scale_rec * (1.0 + jitter);
            phase[c][h] = (h + 1) as f64 * phi_rec + 0.37 * c as f64 + 0.03 * rng.normal();
        }
        offset[c] = rng.range(-0.05, 0.05);
    }

    let mut motion = vec![0.0f32; frames * C_D];
    for t in 0..frames {
        let ts = t as f64 / FPS as f64;
        for c in 0..C_D {
            let mut v = offset[c];
            for h in 0..3 {
                v += amp[c][h] * libm::sin(TAU * f0 * (h + 1) as f64 * ts + phase[c][h]);
            }
            motion[t * C_D + c] = v as f32;
        }
    }

    // Music: genre-shaped static envelope modulated at the fundamental,
    // plus a beat impulse train at period 1/f0 on the last channel.
    let env_center = (genre.id + 1) as f64 * (C_M - 1) as f64 / (n_genres + 1) as f64;
    let mut env = [0.0f64; C_M];
    let mut mphase = [0.0f64; C_M];
    for j in 0..C_M - 1 {
        let d = (j as f64 - env_center) / (C_M as f64 / 4.0);
        env[j] = (-0.5 * d * d).exp() * rng.range(0.9, 1.1);
        mphase[j] = phi_rec + 0.23 * j as f64 + 0.1 * rng.normal();
    }
    let mut music = vec![0.0f32; frames * C_M];
    for t in 0..frames {
        let ts = t as f64 / FPS as f64;
        for j in 0..C_M - 1 {
            let v = env[j] * (0.6 + 0.4 * libm::sin(TAU * f0 * ts + mphase[j]));
            music[t * C_M + j] = v as f32;
        }
        let beat_now = libm::floor(t as f64 * f0 / FPS as f64 + 1e-9);
        let beat_prev = if t == 0 {
            -1.0
        } else {
            libm::floor((t - 1) as f64 * f0 / FPS as f64 + 1e-9)
        };
        music[t * C_M + (C_M - 1)] = if beat_now > beat_prev { 1.0 } else { 0.0 };
    }

    Ok((
        MotionSequence::new(frames, C_D, FPS, motion),
        MusicFeatures::new(frames, C_M, music),
    ))
}

/// Template-specific parametric trajectory with seeded jitter.
pub fn synth_text_motion(prompt: &TextPrompt, seed: u64) -> Result<MotionSequence> {
    let frames = prompt.duration;
    if frames < 2 {
        return Err(Error::RecordTooShort { got: frames, min: 2 });
    }
    let template = prompt.template;
    let mut rng = Rng::seed_from_u64(mix(seed, 0x7E17 ^ template.id() as u64));
    let gain = rng.range(0.9, 1.1);
    let phi_rec = rng.range(0.0, TAU);
    let mut sway_phase = [0.0f64; C_D];
    for (c, p) in sway_phase.iter_mut().enumerate() {
        *p = phi_rec + 0.41 * c as f64 + 0.1 * rng.normal();
    }

    let sway_amp: Vec<f64> = (0..C_D).map(|_| 0.05 * rng.range(0.8, 1.2)).collect();
    let mut m = MotionSequence::zeros(frames, C_D, FPS);
    for t in 0..frames {
        let ts = t as f64 / FPS as f64;
        let progress = t as f64 / (frames - 1) as f64;
        let row = &mut m.data[t * C_D..(t + 1) * C_D];
        // Idle sway keeps every channel alive so probes cannot cheat on
        // all-zero channels. Jitter is structural (phase/amplitude), never
        // per-sample, so records stay reconstructible.
        for (c, v) in row.iter_mut().enumerate() {
            *v = (sway_amp[c] * libm::sin(TAU * 0.5 * ts + sway_phase[c])) as f32;
        }
        match template {
            TextTemplate::RaiseArms => {
                // Arms ramp monotonically from rest to raised.
                for &j in &ARM_JOINTS {
                    row[j * 3 + 1] += (gain * (2.0 * progress - 1.0)) as f32;
                }
            }
            TextTemplate::WalkForward => {
                row[2] += (gain * 2.0 * progress) as f32; // root advances in z
                for j in [1, 2, 4, 5] {
                    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                    row[j * 3 + 2] += (0.5 * gain * sign * libm::sin(TAU * 1.0 * ts)) as f32;
                }
            }
            TextTemplate::Spin => {
                row[0] += (gain * libm::cos(TAU * 0.4 * ts)) as f32;
                row[2] += (gain * libm::sin(TAU * 0.4 * ts)) as f32;
            }
            TextTemplate::Crouch => {
                for j in [0, 3, 6, 9] {
                    row[j * 3 + 1] -= (gain * progress) as f32;
                }
            }
            TextTemplate::Wave => {
                row[21 * 3] += (gain * libm::sin(TAU * 1.5 * ts)) as f32;
                row[21 * 3 + 1] += (0.5 * gain) as f32;
            }
        }
    }
    Ok(m)
}

/// Balanced corpus: `per_genre` music-paired records per genre followed by
/// `per_template` text-paired records per template, all `frames` long.
pub fn gen_corpus(
    n_genres: usize,
    per_genre: usize,
    n_templates: usize,
    per_template: usize,
    frames: usize,
    seed: u64,
) -> Result<Corpus> {
    if n_templates > TextTemplate::ALL.len() {
        return Err(Error::Invalid(format!(
            "at most {} text templates available",
            TextTemplate::ALL.len()
        )));
    }
    let mut records = Vec::new();
    for g in 0..n_genres {
        let genre = GenreLabel::new(g, n_genres)?;
        for i in 0..per_genre {
            let rec_seed = mix(seed, mix(0x4D55_5349 + g as u64, i as u64));
            let (motion, music) = synth_dance(&genre, n_genres, frames, rec_seed)?;
            records.push(Record::MusicPaired {
                genre: g,
                motion,
                music,
            });
        }
    }
    for ti in 0..n_templates {
        let template = TextTemplate::from_id(ti)?;
        for i in 0..per_template {
            let rec_seed = mix(seed, mix(0x7465_7874 + ti as u64, i as u64));
            let prompt = TextPrompt {
                template,
                duration: frames,
            };
            let motion = synth_text_motion(&prompt, rec_seed)?;
            records.push(Record::TextPaired {
                template: ti,
                motion,
            });
        }
    }
    Ok(Corpus {
        records,
        c_d: C_D,
        c_m: C_M,
        fps: FPS,
        n_genres,
        n_templates,
    })
}
