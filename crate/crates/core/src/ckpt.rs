//! `CKPT` checkpoint container: stage tag, seed, config echo and a named
//! tensor table, all little endian. Shared by every training stage.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::ParamStore;

pub const CKPT_MAGIC: &[u8; 4] = b"CKPT";
pub const CKPT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub stage: String,
    pub seed: u64,
    pub config_echo: String,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(stage: &str, seed: u64, config_echo: String) -> Self {
        Checkpoint {
            stage: stage.to_string(),
            seed,
            config_echo,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, shape: Vec<usize>, data: Vec<f32>) {
        assert_eq!(data.len(), shape.iter().product::<usize>());
        self.tensors.push(NamedTensor {
            name: name.to_string(),
            shape,
            data,
        });
    }

    pub fn push_store(&mut self, store: &ParamStore) {
        for (_, p) in store.iter() {
            self.push(&p.name, p.shape.clone(), p.data.clone());
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Copy tensors into a freshly constructed store, requiring an exact
    /// name and shape match for every registered parameter.
    pub fn apply_to_store(&self, store: &mut ParamStore, path_hint: &str) -> Result<()> {
        let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.name.clone(), p.shape.clone())).collect();
        for (id, name, shape) in ids {
            let t = self.tensor(&name).ok_or_else(|| Error::Format {
                path: path_hint.to_string(),
                msg: format!("checkpoint is missing tensor '{name}'"),
            })?;
            if t.shape != shape {
                return Err(Error::Format {
                    path: path_hint.to_string(),
                    msg: format!(
                        "tensor '{name}' has shape {:?}, expected {:?}",
                        t.shape, shape
                    ),
                });
            }
            store.data_mut(id).copy_from_slice(&t.data);
        }
        Ok(())
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let io = |e: std::io::Error| Error::io(path.display().to_string(), e);
    let file = File::create(path).map_err(io)?;
    let mut w = BufWriter::new(file);
    w.write_all(CKPT_MAGIC).map_err(io)?;
    w.write_all(&CKPT_VERSION.to_le_bytes()).map_err(io)?;
    write_str(&mut w, &ckpt.stage).map_err(io)?;
    w.write_all(&ckpt.seed.to_le_bytes()).map_err(io)?;
    write_str(&mut w, &ckpt.config_echo).map_err(io)?;
    w.write_all(&(ckpt.tensors.len() as u32).to_le_bytes()).map_err(io)?;
    for t in &ckpt.tensors {
        write_str(&mut w, &t.name).map_err(io)?;
        w.write_all(&(t.shape.len() as u8).to_le_bytes()).map_err(io)?;
        for &d in &t.shape {
            w.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
        }
        for &v in &t.data {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let io = |e: std::io::Error| Error::io(path.display().to_string(), e);
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::StageDependency(format!("missing checkpoint {}", path.display()))
        } else {
            Error::io(path.display().to_string(), e)
        }
    })?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != CKPT_MAGIC {
        return Err(Error::Format {
            path: path.display().to_string(),
            msg: "bad magic: not a checkpoint".into(),
        });
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(io)?;
    let version = u32::from_le_bytes(b4);
    if version != CKPT_VERSION {
        return Err(Error::Format {
            path: path.display().to_string(),
            msg: format!("unsupported checkpoint version {version}"),
        });
    }
    let stage = read_str(&mut r).map_err(io)?;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8).map_err(io)?;
    let seed = u64::from_le_bytes(b8);
    let config_echo = read_str(&mut r).map_err(io)?;
    r.read_exact(&mut b4).map_err(io)?;
    let count = u32::from_le_bytes(b4) as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name = read_str(&mut r).map_err(io)?;
        let mut b1 = [0u8; 1];
        r.read_exact(&mut b1).map_err(io)?;
        let ndim = b1[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            r.read_exact(&mut b8).map_err(io)?;
            shape.push(u64::from_le_bytes(b8) as usize);
        }
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes).map_err(io)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push(NamedTensor { name, shape, data });
    }
    Ok(Checkpoint {
        stage,
        seed,
        config_echo,
        tensors,
    })
}

/// Read a checkpoint and require a stage tag, mapping a mismatch to the
/// stage-dependency exit path.
pub fn read_stage_checkpoint(path: &Path, expected_stage: &str, needed_by: &str) -> Result<Checkpoint> {
    let ckpt = read_checkpoint(path).map_err(|e| match e {
        Error::StageDependency(_) => Error::StageDependency(format!(
            "{needed_by} requires {expected_stage} checkpoint: {} not found",
            path.display()
        )),
        other => other,
    })?;
    if ckpt.stage != expected_stage {
        return Err(Error::StageDependency(format!(
            "{needed_by} requires {expected_stage} checkpoint, {} has stage '{}'",
            path.display(),
            ckpt.stage
        )));
    }
    Ok(ckpt)
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_str<R: Read>(r: &mut R) -> std::io::Result<String> {
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let len = u32::from_le_bytes(b4) as usize;
    let mut bytes = vec![0u8; len];
    r.read_exact(&mut bytes)?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rngx::Rng;
    use crate::tensor::Init;

    #[test]
    fn checkpoint_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        let mut ckpt = Checkpoint::new("vqvae", 7, "a=1\nb=2\n".into());
        ckpt.push("w", vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        ckpt.push("b", vec![3], vec![0.5, -0.5, 0.25]);
        write_checkpoint(&path, &ckpt).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(ckpt, back);
    }

    #[test]
    fn apply_to_store_validates_shapes() {
        let mut rng = Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        store.add_init("w", vec![2, 2], Init::Normal(1.0), &mut rng);
        let mut ckpt = Checkpoint::new("vqvae", 0, String::new());
        ckpt.push("w", vec![2, 3], vec![0.0; 6]);
        assert!(matches!(
            ckpt.apply_to_store(&mut store, "x.ckpt").unwrap_err(),
            Error::Format { .. }
        ));
        let mut ok = Checkpoint::new("vqvae", 0, String::new());
        ok.push("w", vec![2, 2], vec![9.0; 4]);
        ok.apply_to_store(&mut store, "x.ckpt").unwrap();
        assert_eq!(store.get(store.id("w").unwrap()).data, vec![9.0; 4]);
    }

    #[test]
    fn missing_checkpoint_is_a_stage_dependency_error() {
        let err = read_stage_checkpoint(Path::new("/nonexistent/gpt.ckpt"), "gpt", "train-genre")
            .unwrap_err();
        assert!(matches!(err, Error::StageDependency(_)));
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("requires gpt checkpoint"));
    }
}
