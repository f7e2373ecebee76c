//! Corpus container and the `CHR1` binary file format (little endian).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{MotionSequence, MusicFeatures};
use crate::error::{Error, Result};

pub const CORPUS_MAGIC: &[u8; 4] = b"CHR1";
pub const CORPUS_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Record {
    MusicPaired {
        genre: usize,
        motion: MotionSequence,
        music: MusicFeatures,
    },
    TextPaired {
        template: usize,
        motion: MotionSequence,
    },
}

impl Record {
    pub fn motion(&self) -> &MotionSequence {
        match self {
            Record::MusicPaired { motion, .. } => motion,
            Record::TextPaired { motion, .. } => motion,
        }
    }

    pub fn frames(&self) -> usize {
        self.motion().frames
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub records: Vec<Record>,
    pub c_d: usize,
    pub c_m: usize,
    pub fps: u32,
    pub n_genres: usize,
    pub n_templates: usize,
}

impl Corpus {
    pub fn music_paired(&self) -> impl Iterator<Item = (usize, &MotionSequence, &MusicFeatures)> {
        self.records.iter().filter_map(|r| match r {
            Record::MusicPaired { genre, motion, music } => Some((*genre, motion, music)),
            _ => None,
        })
    }

    pub fn text_paired(&self) -> impl Iterator<Item = (usize, &MotionSequence)> {
        self.records.iter().filter_map(|r| match r {
            Record::TextPaired { template, motion } => Some((*template, motion)),
            _ => None,
        })
    }
}

fn fmt_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

struct Writer<W: Write> {
    w: W,
}

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> std::io::Result<()> {
        self.w.write_all(&[v])
    }
    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.w.write_all(&v.to_le_bytes())
    }
    fn f32s(&mut self, vs: &[f32]) -> std::io::Result<()> {
        for v in vs {
            self.w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

struct Reader<R: Read> {
    r: R,
}

impl<R: Read> Reader<R> {
    fn u8(&mut self) -> std::io::Result<u8> {
        let mut b = [0u8; 1];
        self.r.read_exact(&mut b)?;
        Ok(b[0])
    }
    fn u32(&mut self) -> std::io::Result<u32> {
        let mut b = [0u8; 4];
        self.r.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn f32s(&mut self, n: usize) -> std::io::Result<Vec<f32>> {
        let mut bytes = vec![0u8; n * 4];
        self.r.read_exact(&mut bytes)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = Writer {
        w: BufWriter::new(file),
    };
    let io = |e: std::io::Error| Error::io(path.display().to_string(), e);
    w.w.write_all(CORPUS_MAGIC).map_err(io)?;
    w.u32(CORPUS_VERSION).map_err(io)?;
    w.u32(corpus.c_d as u32).map_err(io)?;
    w.u32(corpus.c_m as u32).map_err(io)?;
    w.u32(corpus.fps).map_err(io)?;
    w.u32(corpus.n_genres as u32).map_err(io)?;
    w.u32(corpus.n_templates as u32).map_err(io)?;
    w.u32(corpus.records.len() as u32).map_err(io)?;
    for rec in &corpus.records {
        match rec {
            Record::MusicPaired { genre, motion, music } => {
                w.u8(0).map_err(io)?;
                w.u32(*genre as u32).map_err(io)?;
                w.u32(motion.frames as u32).map_err(io)?;
                w.f32s(&motion.data).map_err(io)?;
                w.f32s(&music.data).map_err(io)?;
            }
            Record::TextPaired { template, motion } => {
                w.u8(1).map_err(io)?;
                w.u32(*template as u32).map_err(io)?;
                w.u32(motion.frames as u32).map_err(io)?;
                w.f32s(&motion.data).map_err(io)?;
            }
        }
    }
    w.w.flush().map_err(io)?;
    Ok(())
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = Reader {
        r: BufReader::new(file),
    };
    let io = |e: std::io::Error| Error::io(path.display().to_string(), e);
    let mut magic = [0u8; 4];
    r.r.read_exact(&mut magic).map_err(io)?;
    if &magic != CORPUS_MAGIC {
        return Err(fmt_err(path, "bad magic: not a corpus file"));
    }
    let version = r.u32().map_err(io)?;
    if version != CORPUS_VERSION {
        return Err(fmt_err(path, format!("unsupported corpus version {version}")));
    }
    let c_d = r.u32().map_err(io)? as usize;
    let c_m = r.u32().map_err(io)? as usize;
    let fps = r.u32().map_err(io)?;
    let n_genres = r.u32().map_err(io)? as usize;
    let n_templates = r.u32().map_err(io)? as usize;
    let count = r.u32().map_err(io)? as usize;
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let tag = r.u8().map_err(io)?;
        let label = r.u32().map_err(io)? as usize;
        let frames = r.u32().map_err(io)? as usize;
        if frames == 0 {
            return Err(fmt_err(path, format!("record {i}: zero frames")));
        }
        let motion = MotionSequence::new(frames, c_d, fps, r.f32s(frames * c_d).map_err(io)?);
        match tag {
            0 => {
                let music = MusicFeatures::new(frames, c_m, r.f32s(frames * c_m).map_err(io)?);
                records.push(Record::MusicPaired {
                    genre: label,
                    motion,
                    music,
                });
            }
            1 => records.push(Record::TextPaired {
                template: label,
                motion,
            }),
            t => return Err(fmt_err(path, format!("record {i}: unknown modality tag {t}"))),
        }
    }
    Ok(Corpus {
        records,
        c_d,
        c_m,
        fps,
        n_genres,
        n_templates,
    })
}
