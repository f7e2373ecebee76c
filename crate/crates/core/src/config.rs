//! Flat key=value run configuration with two shipped presets.
//!
//! `desk` is the scale every verification target runs at. `paper` mirrors
//! the reference implementation constants (codebook 1024x512, 18 layers,
//! 1024 dims, 16 heads, T_m = 480) for structural fidelity; it is not a
//! tuned training recipe.

use crate::error::{Error, Result};

macro_rules! run_config {
    ($($field:ident: $ty:ty),+ $(,)?) => {
        #[derive(Clone, Debug, PartialEq)]
        pub struct RunConfig {
            $(pub $field: $ty),+
        }

        impl RunConfig {
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($field) => {
                        self.$field = value.parse::<$ty>().map_err(|_| {
                            Error::Config(format!(
                                "invalid value '{value}' for config key '{key}'"
                            ))
                        })?;
                        Ok(())
                    })+
                    _ => Err(Error::Config(format!("unknown config key '{key}'"))),
                }
            }

            /// Sorted key=value lines; this is the config echo that training
            /// stages embed in their checkpoints.
            pub fn to_lines(&self) -> String {
                let mut pairs = vec![
                    $((stringify!($field).to_string(), format!("{}", self.$field))),+
                ];
                pairs.sort();
                let mut out = String::new();
                for (k, v) in pairs {
                    out.push_str(&k);
                    out.push('=');
                    out.push_str(&v);
                    out.push('\n');
                }
                out
            }
        }
    };
}

run_config! {
    preset: String,
    seed: u64,
    // data
    n_genres: usize,
    per_genre: usize,
    n_templates: usize,
    per_template: usize,
    frames: usize,
    min_frames: usize,
    // vq-vae
    vq_codebook_size: usize,
    vq_codebook_dim: usize,
    vq_downsample: usize,
    vq_beta: f64,
    vq_width: usize,
    vq_steps: usize,
    vq_batch: usize,
    vq_lr: f64,
    vq_lr_final: f64,
    vq_lr_split: f64,
    vq_codebook_lr_mult: f64,
    // gpt
    gpt_dim: usize,
    gpt_heads: usize,
    gpt_base_layers: usize,
    gpt_head_layers: usize,
    gpt_max_music: usize,
    gpt_max_text: usize,
    gpt_steps: usize,
    gpt_batch: usize,
    gpt_lr: f64,
    corrupt_tau: f64,
    // genre control
    genre_tokens: usize,
    genre_z_dim: usize,
    genre_hidden: usize,
    disc_width: usize,
    genre_steps: usize,
    genre_batch: usize,
    genre_lr_g: f64,
    genre_lr_d: f64,
    genre_lambda_nll: f64,
    genre_pure_gan: bool,
    // keyframe infill
    infill_mask_rate: f64,
    infill_k: usize,
    infill_steps: usize,
    infill_batch: usize,
    infill_lr: f64,
    infill_refine: usize,
    mask_post_softmax: bool,
}

impl RunConfig {
    pub fn desk() -> Self {
        RunConfig {
            preset: "desk".into(),
            seed: 7,
            n_genres: 3,
            per_genre: 32,
            n_templates: 5,
            per_template: 32,
            frames: 128,
            min_frames: 40,
            vq_codebook_size: 64,
            vq_codebook_dim: 32,
            vq_downsample: 4,
            vq_beta: 0.02,
            vq_width: 64,
            vq_steps: 3000,
            vq_batch: 16,
            vq_lr: 2e-4,
            vq_lr_final: 2e-5,
            vq_lr_split: 0.75,
            vq_codebook_lr_mult: 50.0,
            gpt_dim: 128,
            gpt_heads: 4,
            gpt_base_layers: 1,
            gpt_head_layers: 3,
            gpt_max_music: 64,
            gpt_max_text: 64,
            gpt_steps: 600,
            gpt_batch: 4,
            gpt_lr: 1e-4,
            corrupt_tau: 0.1,
            genre_tokens: 4,
            genre_z_dim: 16,
            genre_hidden: 128,
            disc_width: 64,
            genre_steps: 120,
            genre_batch: 4,
            genre_lr_g: 1e-4,
            genre_lr_d: 2e-4,
            genre_lambda_nll: 1.0,
            genre_pure_gan: false,
            infill_mask_rate: 0.3,
            infill_k: 6,
            infill_steps: 400,
            infill_batch: 4,
            infill_lr: 1e-4,
            infill_refine: 4,
            mask_post_softmax: false,
        }
    }

    /// Reference-scale constants; selectable for structure, not a target.
    pub fn paper() -> Self {
        let mut c = Self::desk();
        c.preset = "paper".into();
        c.n_genres = 22;
        c.vq_codebook_size = 1024;
        c.vq_codebook_dim = 512;
        c.vq_width = 512;
        c.vq_steps = 400_000;
        c.vq_batch = 128;
        c.vq_lr = 2e-4;
        c.vq_lr_final = 1e-5;
        c.vq_lr_split = 0.5;
        c.gpt_dim = 1024;
        c.gpt_heads = 16;
        c.gpt_base_layers = 2;
        c.gpt_head_layers = 16;
        c.gpt_max_music = 480;
        c.gpt_max_text = 100;
        c.gpt_steps = 150_000;
        c.gpt_batch = 128;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected desk or paper)"
            ))),
        }
    }

    /// Parse key=value lines ('#' starts a comment) over this config.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got '{line}'", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn gpt_layers(&self) -> usize {
        self.gpt_base_layers + self.gpt_head_layers
    }

    pub fn vocab(&self) -> usize {
        self.vq_codebook_size + 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.gpt_dim % self.gpt_heads != 0 {
            return Err(Error::Config(format!(
                "gpt_dim {} must be divisible by gpt_heads {}",
                self.gpt_dim, self.gpt_heads
            )));
        }
        if self.frames % self.vq_downsample != 0 {
            return Err(Error::Config(format!(
                "frames {} must be divisible by vq_downsample {}",
                self.frames, self.vq_downsample
            )));
        }
        if self.vq_beta <= 0.0 {
            return Err(Error::Config("vq_beta must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.corrupt_tau) {
            return Err(Error::Config("corrupt_tau must be in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.infill_mask_rate) {
            return Err(Error::Config("infill_mask_rate must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let mut c = RunConfig::desk();
        let err = c.apply_text("bogus_key=3\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn echo_parses_back_to_the_same_config() {
        let c = RunConfig::paper();
        let mut d = RunConfig::desk();
        d.apply_text(&c.to_lines()).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let mut c = RunConfig::desk();
        c.apply_text("# comment\n\nseed = 99\n").unwrap();
        assert_eq!(c.seed, 99);
    }

    #[test]
    fn paper_preset_carries_reference_constants() {
        let c = RunConfig::paper();
        assert_eq!(c.vq_codebook_size, 1024);
        assert_eq!(c.vq_codebook_dim, 512);
        assert_eq!(c.gpt_layers(), 18);
        assert_eq!(c.gpt_dim, 1024);
        assert_eq!(c.gpt_heads, 16);
        assert_eq!(c.gpt_max_music, 480);
        assert_eq!(c.gpt_max_text, 100);
        assert_eq!(c.infill_k, 6);
        assert_eq!(c.vq_downsample, 4);
        assert!((c.vq_beta - 0.02).abs() < 1e-12);
        assert_eq!(c.frames, 128);
    }

    #[test]
    fn validation_catches_bad_dims() {
        let mut c = RunConfig::desk();
        c.gpt_heads = 5;
        assert!(c.validate().is_err());
    }
}
