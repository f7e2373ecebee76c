//! Per-sequence feature vectors.

use crate::data::{MotionSequence, JOINTS};
use crate::error::{Error, Result};

pub const KINETIC_DIM: usize = JOINTS;
pub const GEOMETRIC_DIM: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureKind {
    Kinetic,
    Geometric,
}

/// Per-joint mean squared frame-to-frame velocity, fps-scaled. Invariant to
/// constant offsets of the whole sequence.
pub fn kinetic_features(m: &MotionSequence) -> Result<Vec<f64>> {
    if m.frames < 2 {
        return Err(Error::Invalid(format!(
            "kinetic features need at least 2 frames, got {}",
            m.frames
        )));
    }
    let fps = m.fps as f64;
    let mut out = vec![0.0f64; KINETIC_DIM];
    for t in 0..m.frames - 1 {
        let a = m.row(t);
        let b = m.row(t + 1);
        for (j, o) in out.iter_mut().enumerate() {
            let mut v2 = 0.0f64;
            for axis in 0..3 {
                let c = j * 3 + axis;
                let v = (b[c] - a[c]) as f64 * fps;
                v2 += v * v;
            }
            *o += v2;
        }
    }
    let n = (m.frames - 1) as f64;
    for o in &mut out {
        *o /= n;
    }
    Ok(out)
}

/// Channel pairs for the 16 boolean pose relations: joint i's height
/// against joint (i+6)'s height.
pub fn geometric_predicates() -> [(usize, usize); GEOMETRIC_DIM] {
    let mut out = [(0usize, 0usize); GEOMETRIC_DIM];
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = (i * 3 + 1, ((i + 6) % JOINTS) * 3 + 1);
    }
    out
}

/// Fraction of frames on which each predicate holds; always in [0, 1].
pub fn geometric_features(m: &MotionSequence) -> Result<Vec<f64>> {
    if m.frames == 0 {
        return Err(Error::Invalid("empty sequence".into()));
    }
    let preds = geometric_predicates();
    let mut out = vec![0.0f64; GEOMETRIC_DIM];
    for t in 0..m.frames {
        let row = m.row(t);
        for (p, &(a, b)) in preds.iter().enumerate() {
            if row[a] > row[b] {
                out[p] += 1.0;
            }
        }
    }
    for o in &mut out {
        *o /= m.frames as f64;
    }
    Ok(out)
}
