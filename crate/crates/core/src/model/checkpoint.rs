//! Binary checkpoint: magic, format version, role, dimension table, task
//! registry, then named parameter blocks of little-endian `f64`, closed by a
//! SHA-256 of all preceding bytes.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::{EncoderConfig, ModelConfig, ModelState, Role};

const MAGIC: &[u8; 8] = b"RATNETCK";
pub const CHECKPOINT_VERSION: u32 = 1;

const DIMS: [&str; 7] = [
    "input_dim",
    "embedding_dim",
    "depth",
    "encoder_hidden",
    "knowledge_dim",
    "mlp_hidden",
    "projector_dim",
];

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(bad("truncated file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| bad("invalid utf-8 in name"))
    }
}

pub fn to_bytes(state: &ModelState) -> Vec<u8> {
    let c = &state.config;
    let mut w = Writer(MAGIC.to_vec());
    w.u32(CHECKPOINT_VERSION);
    w.0.push(match state.role {
        Role::Student => 0,
        Role::Teacher => 1,
    });
    let dims = [
        c.encoder.input_dim,
        c.encoder.embedding_dim,
        c.encoder.depth,
        c.encoder.hidden,
        c.knowledge_dim,
        c.mlp_hidden,
        c.projector_dim,
    ];
    w.u32(DIMS.len() as u32);
    for (name, v) in DIMS.iter().zip(dims) {
        w.str(name);
        w.u64(v as u64);
    }
    w.f64(c.tau);
    w.u32(state.heads.len() as u32);
    for h in &state.heads {
        w.str(&h.task_id);
        w.u32(h.classes() as u32);
    }
    let params = state.params();
    w.u32(params.len() as u32);
    for (name, t) in params {
        w.str(&name);
        w.u32(t.shape().len() as u32);
        for &d in t.shape() {
            w.u64(d as u64);
        }
        for &v in t.data() {
            w.f64(v);
        }
    }
    let digest = Sha256::digest(&w.0);
    w.0.extend_from_slice(&digest);
    w.0
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelState> {
    if bytes.len() < MAGIC.len() + 32 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(bad("not a model checkpoint (bad magic header)"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch; file is corrupted"));
    }
    let mut r = Reader {
        buf: body,
        pos: MAGIC.len(),
    };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "unsupported format version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let role = match r.take(1)?[0] {
        0 => Role::Student,
        1 => Role::Teacher,
        b => return Err(bad(format!("unknown role byte {b}"))),
    };
    let n = r.u32()? as usize;
    if n != DIMS.len() {
        return Err(bad(format!("dimension table has {n} entries, expected {}", DIMS.len())));
    }
    let mut dims = [0usize; 7];
    for (i, want) in DIMS.iter().enumerate() {
        let name = r.str()?;
        if name != *want {
            return Err(bad(format!("dimension `{name}` where `{want}` was expected")));
        }
        dims[i] = r.u64()? as usize;
    }
    let config = ModelConfig {
        encoder: EncoderConfig {
            input_dim: dims[0],
            embedding_dim: dims[1],
            depth: dims[2],
            hidden: dims[3],
        },
        knowledge_dim: dims[4],
        mlp_hidden: dims[5],
        projector_dim: dims[6],
        tau: r.f64()?,
    };
    config.validate().map_err(|e| bad(e.to_string()))?;
    let n_tasks = r.u32()? as usize;
    let mut tasks = Vec::with_capacity(n_tasks);
    for _ in 0..n_tasks {
        let id = r.str()?;
        let classes = r.u32()? as usize;
        tasks.push((id, classes));
    }
    let mut state = ModelState::new(config, &tasks, 0).map_err(|e| bad(e.to_string()))?;
    state.role = role;
    let n_params = r.u32()? as usize;
    let mut slots = state.params_mut();
    if n_params != slots.len() {
        return Err(bad(format!(
            "{n_params} parameter blocks, dimensions imply {}",
            slots.len()
        )));
    }
    for (want, t) in slots.iter_mut() {
        let name = r.str()?;
        if name != *want {
            return Err(bad(format!("parameter `{name}` where `{want}` was expected")));
        }
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if shape != t.shape() {
            return Err(bad(format!(
                "dimension mismatch for `{name}`: file {:?}, expected {:?}",
                shape,
                t.shape()
            )));
        }
        for v in t.data_mut() {
            *v = r.f64()?;
        }
    }
    drop(slots);
    if r.pos != body.len() {
        return Err(bad("trailing bytes after parameter blocks"));
    }
    Ok(state)
}

pub fn checkpoint_save(state: &ModelState, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(state)).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_load(path: &Path) -> Result<ModelState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
