//! Length unification and per-channel z-normalization.
//!
//! Crop policy is the leading window; short records self-repeat before the
//! crop. Stats are computed on the unified corpus and stored so decoded
//! motion can be mapped back to raw units.

use super::{Corpus, MotionSequence, MusicFeatures, Record};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub motion_mean: Vec<f32>,
    pub motion_std: Vec<f32>,
    pub music_mean: Vec<f32>,
    pub music_std: Vec<f32>,
}

impl NormStats {
    pub fn normalize_motion(&self, m: &MotionSequence) -> MotionSequence {
        let mut out = m.clone();
        for t in 0..m.frames {
            for c in 0..m.channels {
                let i = t * m.channels + c;
                out.data[i] = (m.data[i] - self.motion_mean[c]) / self.motion_std[c];
            }
        }
        out
    }

    pub fn denormalize_motion(&self, m: &MotionSequence) -> MotionSequence {
        let mut out = m.clone();
        for t in 0..m.frames {
            for c in 0..m.channels {
                let i = t * m.channels + c;
                out.data[i] = m.data[i] * self.motion_std[c] + self.motion_mean[c];
            }
        }
        out
    }

    pub fn normalize_music(&self, m: &MusicFeatures) -> MusicFeatures {
        let mut out = m.clone();
        for t in 0..m.frames {
            for c in 0..m.channels {
                let i = t * m.channels + c;
                out.data[i] = (m.data[i] - self.music_mean[c]) / self.music_std[c];
            }
        }
        out
    }
}

/// Unify a single sequence of `frames` rows to exactly `t` rows.
fn unify_rows(data: &[f32], frames: usize, channels: usize, t: usize) -> Vec<f32> {
    if frames == t {
        return data.to_vec();
    }
    if frames > t {
        return data[..t * channels].to_vec();
    }
    // self-repeat, then leading crop
    let mut out = Vec::with_capacity(t * channels);
    let mut row = 0;
    while out.len() < t * channels {
        out.extend_from_slice(&data[row * channels..(row + 1) * channels]);
        row = (row + 1) % frames;
    }
    out
}

/// Crop/concatenate every record to `t` frames and z-normalize per channel.
pub fn preprocess(corpus: &Corpus, t: usize, min_frames: usize) -> Result<(Corpus, NormStats)> {
    let mut unified = Vec::with_capacity(corpus.records.len());
    for rec in &corpus.records {
        if rec.frames() < min_frames {
            return Err(Error::RecordTooShort {
                got: rec.frames(),
                min: min_frames,
            });
        }
        let motion = rec.motion();
        let mdata = unify_rows(&motion.data, motion.frames, motion.channels, t);
        let new_motion = MotionSequence::new(t, motion.channels, motion.fps, mdata);
        unified.push(match rec {
            Record::MusicPaired { genre, music, .. } => {
                let ydata = unify_rows(&music.data, music.frames, music.channels, t);
                Record::MusicPaired {
                    genre: *genre,
                    motion: new_motion,
                    music: MusicFeatures::new(t, music.channels, ydata),
                }
            }
            Record::TextPaired { template, .. } => Record::TextPaired {
                template: *template,
                motion: new_motion,
            },
        });
    }

    let stats = compute_stats(&unified, corpus.c_d, corpus.c_m);
    let normalized = unified
        .into_iter()
        .map(|rec| match rec {
            Record::MusicPaired { genre, motion, music } => Record::MusicPaired {
                genre,
                motion: stats.normalize_motion(&motion),
                music: stats.normalize_music(&music),
            },
            Record::TextPaired { template, motion } => Record::TextPaired {
                template,
                motion: stats.normalize_motion(&motion),
            },
        })
        .collect();

    Ok((
        Corpus {
            records: normalized,
            c_d: corpus.c_d,
            c_m: corpus.c_m,
            fps: corpus.fps,
            n_genres: corpus.n_genres,
            n_templates: corpus.n_templates,
        },
        stats,
    ))
}

fn compute_stats(records: &[Record], c_d: usize, c_m: usize) -> NormStats {
    let mut mo_sum = vec![0.0f64; c_d];
    let mut mo_sq = vec![0.0f64; c_d];
    let mut mo_n = 0usize;
    let mut mu_sum = vec![0.0f64; c_m];
    let mut mu_sq = vec![0.0f64; c_m];
    let mut mu_n = 0usize;
    for rec in records {
        let m = rec.motion();
        for t in 0..m.frames {
            for c in 0..c_d {
                let v = m.data[t * c_d + c] as f64;
                mo_sum[c] += v;
                mo_sq[c] += v * v;
            }
        }
        mo_n += m.frames;
        if let Record::MusicPaired { music, .. } = rec {
            for t in 0..music.frames {
                for c in 0..c_m {
                    let v = music.data[t * c_m + c] as f64;
                    mu_sum[c] += v;
                    mu_sq[c] += v * v;
                }
            }
            mu_n += music.frames;
        }
    }
    let finish = |sum: Vec<f64>, sq: Vec<f64>, n: usize| -> (Vec<f32>, Vec<f32>) {
        let n = n.max(1) as f64;
        let mean: Vec<f32> = sum.iter().map(|&s| (s / n) as f32).collect();
        let std: Vec<f32> = sq
            .iter()
            .zip(&mean)
            .map(|(&sq, &m)| {
                let var = (sq / n - (m as f64) * (m as f64)).max(0.0);
                (var.sqrt() + 1e-6) as f32
            })
            .collect();
        (mean, std)
    };
    let (motion_mean, motion_std) = finish(mo_sum, mo_sq, mo_n);
    let (music_mean, music_std) = finish(mu_sum, mu_sq, mu_n);
    NormStats {
        motion_mean,
        motion_std,
        music_mean,
        music_std,
    }
}
