//! Deterministic procedural corpora: music-paired dances with genre labels
//! and text-paired motions from a closed template vocabulary, plus the
//! binary corpus format and preprocessing.

pub mod corpus;
pub mod preprocess;
pub mod synth;

pub use corpus::{read_corpus, write_corpus, Corpus, Record};
pub use preprocess::{preprocess, NormStats};
pub use synth::{gen_corpus, synth_dance, synth_text_motion};

use crate::error::{Error, Result};

/// Joints in the skeleton convention; each joint contributes x/y/z channels.
pub const JOINTS: usize = 22;
/// Motion feature channels (22 joints x 3 positional channels).
pub const C_D: usize = JOINTS * 3;
/// Music feature channels; the last channel is the beat impulse train.
pub const C_M: usize = 35;
/// Frames per second of all synthetic sequences.
pub const FPS: u32 = 16;
/// Arm joints used by templates that move the arms.
pub const ARM_JOINTS: [usize; 6] = [16, 17, 18, 19, 20, 21];

/// Genre fundamental frequency in Hz: `0.5 + 0.25 * id`.
pub fn genre_frequency(id: usize) -> f64 {
    0.5 + 0.25 * id as f64
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenreLabel {
    pub id: usize,
    pub name: String,
}

impl GenreLabel {
    pub fn new(id: usize, n_genres: usize) -> Result<Self> {
        if id >= n_genres {
            return Err(Error::UnknownGenre(id));
        }
        Ok(GenreLabel {
            id,
            name: format!("genre-{id}"),
        })
    }
}

/// Closed text vocabulary; stands in for free-form prompts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TextTemplate {
    RaiseArms = 0,
    WalkForward = 1,
    Spin = 2,
    Crouch = 3,
    Wave = 4,
}

impl TextTemplate {
    pub const ALL: [TextTemplate; 5] = [
        TextTemplate::RaiseArms,
        TextTemplate::WalkForward,
        TextTemplate::Spin,
        TextTemplate::Crouch,
        TextTemplate::Wave,
    ];

    pub fn from_id(id: usize) -> Result<Self> {
        Self::ALL.get(id).copied().ok_or(Error::UnknownTemplate(id))
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|t| t.name() == name)
            .ok_or_else(|| Error::Invalid(format!("unknown text template '{name}'")))
    }

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            TextTemplate::RaiseArms => "raise-arms",
            TextTemplate::WalkForward => "walk-forward",
            TextTemplate::Spin => "spin",
            TextTemplate::Crouch => "crouch",
            TextTemplate::Wave => "wave",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TextPrompt {
    pub template: TextTemplate,
    pub duration: usize,
}

/// Frames x channels matrix of joint features.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    pub frames: usize,
    pub channels: usize,
    pub fps: u32,
    pub data: Vec<f32>,
}

impl MotionSequence {
    pub fn new(frames: usize, channels: usize, fps: u32, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), frames * channels);
        MotionSequence {
            frames,
            channels,
            fps,
            data,
        }
    }

    pub fn zeros(frames: usize, channels: usize, fps: u32) -> Self {
        Self::new(frames, channels, fps, vec![0.0; frames * channels])
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.channels..(t + 1) * self.channels]
    }

    /// One channel over time.
    pub fn channel(&self, c: usize) -> Vec<f32> {
        (0..self.frames).map(|t| self.data[t * self.channels + c]).collect()
    }
}

/// Frames x channels matrix of music features, frame-aligned with its
/// paired motion.
#[derive(Clone, Debug, PartialEq)]
pub struct MusicFeatures {
    pub frames: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl MusicFeatures {
    pub fn new(frames: usize, channels: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), frames * channels);
        MusicFeatures {
            frames,
            channels,
            data,
        }
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.channels..(t + 1) * self.channels]
    }
}

#[cfg(test)]
mod tests;
