//! Text control: a per-position fusion weight blends text-base and
//! music-base features over a user interval before the shared head.
//! Outside the interval w = 1 and generation is the music-only path,
//! bit for bit.

use crate::error::{Error, Result};
use crate::genre::GenreCode;
use crate::gpt::{sample_token, CrossModalGpt, Decode, HeadMode};
use crate::rngx::Rng;
use crate::tensor::{Graph, TensorId};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RampShape {
    Linear,
    Cosine,
}

/// Interval `[start, end)` in token positions with symmetric entry/exit
/// ramps covering `ramp_fraction` of the interval each.
#[derive(Clone, Debug)]
pub struct FusionSchedule {
    pub start: usize,
    pub end: usize,
    pub ramp_fraction: f64,
    pub shape: RampShape,
}

impl FusionSchedule {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        Self::with_shape(start, end, 0.10, RampShape::Linear)
    }

    pub fn with_shape(start: usize, end: usize, ramp_fraction: f64, shape: RampShape) -> Result<Self> {
        if start > end {
            return Err(Error::Invalid(format!(
                "fusion interval start {start} exceeds end {end}"
            )));
        }
        if !(0.0..=0.5).contains(&ramp_fraction) {
            return Err(Error::Invalid(format!(
                "ramp fraction {ramp_fraction} outside [0, 0.5]"
            )));
        }
        Ok(FusionSchedule {
            start,
            end,
            ramp_fraction,
            shape,
        })
    }

    pub fn empty() -> Self {
        FusionSchedule {
            start: 0,
            end: 0,
            ramp_fraction: 0.10,
            shape: RampShape::Linear,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    /// w(i): 1 outside the interval, ramps 1 -> 0 -> 1 across it.
    pub fn weight(&self, i: usize) -> f64 {
        if self.is_empty() || i < self.start || i >= self.end {
            return 1.0;
        }
        let span = (self.end - self.start) as f64;
        let ramp = (self.ramp_fraction * span).min(span / 2.0);
        if ramp <= 0.0 {
            return 0.0;
        }
        let x = (i - self.start) as f64;
        let raw = if x < ramp {
            1.0 - x / ramp
        } else if x >= span - ramp {
            (x - (span - ramp)) / ramp
        } else {
            0.0
        };
        match self.shape {
            RampShape::Linear => raw,
            // cosine easing of the same endpoints
            RampShape::Cosine => 0.5 - 0.5 * libm::cos(std::f64::consts::PI * raw),
        }
    }
}

/// `F = T * (1 - w) + M * w`. The endpoints select a branch without any
/// arithmetic so w = 0 and w = 1 are bit-exact.
pub fn fuse(
    g: &mut Graph<f32>,
    text_row: TensorId,
    music_row: TensorId,
    w: f64,
) -> Result<TensorId> {
    if g.shape(text_row) != g.shape(music_row) {
        return Err(Error::Tensor(crate::error::TensorError::ShapeMismatch {
            op: "fuse",
            lhs: g.shape(text_row).to_vec(),
            rhs: g.shape(music_row).to_vec(),
        }));
    }
    if w == 1.0 {
        return Ok(music_row);
    }
    if w == 0.0 {
        return Ok(text_row);
    }
    let t_scaled = g.scale(text_row, 1.0 - w);
    let m_scaled = g.scale(music_row, w);
    g.add(t_scaled, m_scaled).map_err(Error::from)
}

pub struct TextGenerateSpec<'a> {
    pub music_norm: &'a [f32],
    pub music_frames: usize,
    pub genre: Option<&'a GenreCode>,
    pub template: usize,
    pub schedule: FusionSchedule,
    pub max_len: usize,
    pub seed: u64,
    pub decode: Decode,
}

/// Generation with the text-control interval. Both base layers consume the
/// same generated prefix; the head sees the fused feature sequence.
pub fn generate_with_text(gpt: &CrossModalGpt, spec: &TextGenerateSpec) -> Result<Vec<usize>> {
    if spec.max_len > gpt.dims.max_music {
        return Err(Error::Invalid(format!(
            "max_len {} exceeds T_m = {}",
            spec.max_len, gpt.dims.max_music
        )));
    }
    let sched = &spec.schedule;
    if !sched.is_empty() {
        if sched.end > spec.max_len {
            return Err(Error::Invalid(format!(
                "fusion interval end {} exceeds max_len {}",
                sched.end, spec.max_len
            )));
        }
        if sched.end > gpt.dims.max_text {
            return Err(Error::Invalid(format!(
                "fusion interval end {} exceeds T_t = {}",
                sched.end, gpt.dims.max_text
            )));
        }
    }

    let mut rng = Rng::derive(spec.seed, "generate");
    let mut tokens: Vec<usize> = Vec::new();
    let end_token = gpt.dims.end_token();
    while tokens.len() < spec.max_len {
        let i = tokens.len();
        let mut g: Graph<f32> = Graph::new();
        let music = g.leaf(
            spec.music_norm.to_vec(),
            vec![spec.music_frames, gpt.dims.c_m],
        );
        let memb = gpt.music_embedding(&mut g, music, false).map_err(Error::from)?;
        let inj = spec
            .genre
            .map(|code| code.injection(&mut g, false))
            .transpose()?;
        let m_feats = gpt.m_base(&mut g, memb, inj.as_ref(), &tokens, false)?;

        let needs_text = (0..=i).any(|j| sched.weight(j) < 1.0);
        let fused = if !needs_text {
            m_feats
        } else {
            let t_feats = gpt.t_base(&mut g, spec.template, &tokens, false)?;
            let mut rows = Vec::with_capacity(i + 1);
            for j in 0..=i {
                let w = sched.weight(j);
                let row = if w == 1.0 {
                    g.slice_rows(m_feats, j, 1).map_err(Error::from)?
                } else if w == 0.0 {
                    g.slice_rows(t_feats, j, 1).map_err(Error::from)?
                } else {
                    let tr = g.slice_rows(t_feats, j, 1).map_err(Error::from)?;
                    let mr = g.slice_rows(m_feats, j, 1).map_err(Error::from)?;
                    fuse(&mut g, tr, mr, w)?
                };
                rows.push(row);
            }
            g.concat_rows(&rows).map_err(Error::from)?
        };

        let logits = gpt.head(&mut g, fused, &HeadMode::Causal, false)?;
        let next = sample_token(
            g.data(logits),
            gpt.dims.vocab(),
            gpt.dims.pad_token(),
            spec.decode,
            &mut rng,
        );
        if next == end_token || next >= gpt.dims.codebook_size {
            break;
        }
        tokens.push(next);
    }
    Ok(tokens)
}
