//! Binary checkpoint: `"SEDM"`, version u32, config block (N, C, K, steps,
//! window_len, hop as u32), tensor records, trailing CRC32. All integers and
//! floats are little-endian.

use std::fs;
use std::path::Path;

use crate::audio::write_atomic;
use crate::autodiff::{ParamStore, Tensor};
use crate::dsp::StftConfig;
use crate::error::{Error, Result};

use super::{ModelConfig, Sedm};

pub const MAGIC: &[u8; 4] = b"SEDM";
pub const VERSION: u32 = 1;
const ARCH_TENSOR: &str = "meta.arch";

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.shape().len() as u32);
    for d in t.shape() {
        put_u32(out, *d as u32);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn to_bytes(model: &Sedm) -> Vec<u8> {
    let cfg = model.config();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    for v in [cfg.n_blocks, cfg.channels, cfg.kernel, cfg.steps, cfg.stft.window_len, cfg.stft.hop] {
        put_u32(&mut out, v as u32);
    }
    let arch = Tensor::new(
        &[5],
        vec![
            cfg.layers_per_block as f32,
            cfg.diffusion as u8 as f32,
            cfg.phase_aware as u8 as f32,
            cfg.gamma_start as f32,
            cfg.gamma_end as f32,
        ],
    )
    .unwrap_or_else(|_| Tensor::zeros(&[5]));
    put_tensor(&mut out, ARCH_TENSOR, &arch);
    for p in model.store().params() {
        put_tensor(&mut out, &p.name, &p.value);
    }
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let len = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("tensor `{name}` has rank {rank}")));
        }
        let dims = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok((name, Tensor::new(&dims, data)?))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Sedm> {
    if bytes.len() < 4 + 4 + 24 + 4 {
        return Err(Error::Checkpoint(format!("file too short ({} bytes)", bytes.len())));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Crc { stored, computed });
    }
    if &body[..4] != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut block = [0usize; 6];
    for v in &mut block {
        *v = r.u32()? as usize;
    }
    let [n_blocks, channels, kernel, steps, window_len, hop] = block;
    let (name, arch) = r.tensor()?;
    if name != ARCH_TENSOR || arch.len() != 5 {
        return Err(Error::Checkpoint(format!("expected `{ARCH_TENSOR}` record first, found `{name}`")));
    }
    let a = arch.data();
    let cfg = ModelConfig {
        n_blocks,
        channels,
        kernel,
        layers_per_block: a[0] as usize,
        stft: StftConfig::new(window_len, hop)?,
        steps,
        gamma_start: a[3] as f64,
        gamma_end: a[4] as f64,
        diffusion: a[1] != 0.0,
        phase_aware: a[2] != 0.0,
    };
    cfg.validate().map_err(|e| Error::Checkpoint(format!("invalid config block: {e}")))?;
    let mut store = ParamStore::new();
    while r.pos < body.len() {
        let (name, t) = r.tensor()?;
        store.add(name, t);
    }
    Sedm::from_parts(cfg, store)
}

pub fn save(model: &Sedm, path: &Path) -> Result<()> {
    write_atomic(path, &to_bytes(model))
}

pub fn load(path: &Path) -> Result<Sedm> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
    from_bytes(&bytes)
}
