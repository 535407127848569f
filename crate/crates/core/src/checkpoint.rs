//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "GLYVAE\0\x01"
//! version    u32
//! header     u32 length + UTF-8 JSON (architecture, normalization, windowing)
//! count      u32
//! tensor*    u32 name length + UTF-8 name, u32 rows, u32 cols, rows·cols f64
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so a save/load round trip is exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{ForecastEncoder, RnnForecasterParams};
use crate::cells::{CellKind, CellParams};
use crate::data::{NormStats, WindowConfig};
use crate::error::{Error, Result};
use crate::numeric::{Affine, Matrix, SeededRng};
use crate::vae::{VaeConfig, VaeRnnParams};

pub const MAGIC: [u8; 8] = *b"GLYVAE\0\x01";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Vae(VaeRnnParams),
    Rnn(RnnForecasterParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Architecture {
    Vae {
        config: VaeConfig,
    },
    Rnn {
        cell: CellKind,
        bidirectional: bool,
        input: usize,
        hidden: usize,
    },
}

impl Model {
    pub fn architecture(&self) -> Architecture {
        match self {
            Model::Vae(p) => Architecture::Vae { config: p.config },
            Model::Rnn(p) => Architecture::Rnn {
                cell: p.kind(),
                bidirectional: p.is_bidirectional(),
                input: p.input_dim(),
                hidden: p.hidden(),
            },
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Model::Vae(p) => p.config.input_dim,
            Model::Rnn(p) => p.input_dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub stats: Option<NormStats>,
    pub window: Option<WindowConfig>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    architecture: Architecture,
    stats: Option<NormStats>,
    window: Option<WindowConfig>,
}

type Named<'a> = Vec<(String, usize, usize, &'a [f64])>;
type NamedMut<'a> = Vec<(String, usize, usize, &'a mut [f64])>;

fn matrix<'a>(out: &mut Named<'a>, name: String, m: &'a Matrix) {
    out.push((name, m.rows(), m.cols(), m.data()));
}

fn matrix_mut<'a>(out: &mut NamedMut<'a>, name: String, m: &'a mut Matrix) {
    let (r, c) = (m.rows(), m.cols());
    out.push((name, r, c, m.data_mut()));
}

fn cell<'a>(out: &mut Named<'a>, prefix: &str, c: &'a CellParams) {
    matrix(out, format!("{prefix}.w"), &c.w);
    matrix(out, format!("{prefix}.u"), &c.u);
    out.push((format!("{prefix}.b"), 1, c.b.len(), &c.b));
}

fn cell_mut<'a>(out: &mut NamedMut<'a>, prefix: &str, c: &'a mut CellParams) {
    matrix_mut(out, format!("{prefix}.w"), &mut c.w);
    matrix_mut(out, format!("{prefix}.u"), &mut c.u);
    let n = c.b.len();
    out.push((format!("{prefix}.b"), 1, n, &mut c.b));
}

fn affine<'a>(out: &mut Named<'a>, prefix: &str, a: &'a Affine) {
    matrix(out, format!("{prefix}.weight"), &a.weight);
    out.push((format!("{prefix}.bias"), 1, a.bias.len(), &a.bias));
}

fn affine_mut<'a>(out: &mut NamedMut<'a>, prefix: &str, a: &'a mut Affine) {
    matrix_mut(out, format!("{prefix}.weight"), &mut a.weight);
    let n = a.bias.len();
    out.push((format!("{prefix}.bias"), 1, n, &mut a.bias));
}

fn tensors(model: &Model) -> Named<'_> {
    let mut out = Vec::new();
    match model {
        Model::Vae(p) => {
            cell(&mut out, "encoder", &p.encoder);
            affine(&mut out, "mu_head", &p.mu_head);
            affine(&mut out, "logvar_head", &p.logvar_head);
            affine(&mut out, "latent_to_hidden", &p.latent_to_hidden);
            if let Some(a) = &p.latent_to_cell {
                affine(&mut out, "latent_to_cell", a);
            }
            cell(&mut out, "decoder", &p.decoder);
            affine(&mut out, "recon_head", &p.recon_head);
            affine(&mut out, "pred_head", &p.pred_head);
        }
        Model::Rnn(p) => {
            match &p.encoder {
                ForecastEncoder::Uni(c) => cell(&mut out, "encoder", c),
                ForecastEncoder::Bi(b) => {
                    cell(&mut out, "encoder.forward", &b.forward);
                    cell(&mut out, "encoder.backward", &b.backward);
                }
            }
            affine(&mut out, "head", &p.head);
        }
    }
    out
}

fn tensors_mut(model: &mut Model) -> NamedMut<'_> {
    let mut out = Vec::new();
    match model {
        Model::Vae(p) => {
            cell_mut(&mut out, "encoder", &mut p.encoder);
            affine_mut(&mut out, "mu_head", &mut p.mu_head);
            affine_mut(&mut out, "logvar_head", &mut p.logvar_head);
            affine_mut(&mut out, "latent_to_hidden", &mut p.latent_to_hidden);
            if let Some(a) = &mut p.latent_to_cell {
                affine_mut(&mut out, "latent_to_cell", a);
            }
            cell_mut(&mut out, "decoder", &mut p.decoder);
            affine_mut(&mut out, "recon_head", &mut p.recon_head);
            affine_mut(&mut out, "pred_head", &mut p.pred_head);
        }
        Model::Rnn(p) => {
            match &mut p.encoder {
                ForecastEncoder::Uni(c) => cell_mut(&mut out, "encoder", c),
                ForecastEncoder::Bi(b) => {
                    cell_mut(&mut out, "encoder.forward", &mut b.forward);
                    cell_mut(&mut out, "encoder.backward", &mut b.backward);
                }
            }
            affine_mut(&mut out, "head", &mut p.head);
        }
    }
    out
}

fn skeleton(arch: &Architecture) -> Result<Model> {
    match *arch {
        Architecture::Vae { config } => Ok(Model::Vae(VaeRnnParams::zeros(config)?)),
        Architecture::Rnn {
            cell,
            bidirectional,
            input,
            hidden,
        } => {
            if input == 0 || hidden == 0 {
                return Err(Error::Checkpoint("forecaster dimensions must be positive".into()));
            }
            let mut rng = SeededRng::new(0);
            Ok(Model::Rnn(RnnForecasterParams::init(cell, bidirectional, input, hidden, &mut rng)))
        }
    }
}

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("size {v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            architecture: self.model.architecture(),
            stats: self.stats.clone(),
            window: self.window,
        })?;
        let mut buf = Vec::new();
        buf.extend_from_slice(&MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        put_u32(&mut buf, header.len())?;
        buf.extend_from_slice(&header);
        let list = tensors(&self.model);
        put_u32(&mut buf, list.len())?;
        for (name, rows, cols, data) in list {
            put_u32(&mut buf, name.len())?;
            buf.extend_from_slice(name.as_bytes());
            put_u32(&mut buf, rows)?;
            put_u32(&mut buf, cols)?;
            for v in data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {VERSION})"
            )));
        }
        let header_len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(header_len)?)?;
        let mut model = skeleton(&header.architecture)?;
        let count = r.u32()? as usize;
        {
            let mut slots = tensors_mut(&mut model);
            if count != slots.len() {
                return Err(Error::Checkpoint(format!(
                    "expected {} tensors, file has {count}",
                    slots.len()
                )));
            }
            for (name, rows, cols, data) in slots.iter_mut() {
                let len = r.u32()? as usize;
                let found = std::str::from_utf8(r.take(len)?)
                    .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
                let (fr, fc) = (r.u32()? as usize, r.u32()? as usize);
                if found != name || fr != *rows || fc != *cols {
                    return Err(Error::Checkpoint(format!(
                        "tensor {found} [{fr}x{fc}] does not match expected {name} [{rows}x{cols}]"
                    )));
                }
                for v in data.iter_mut() {
                    *v = f64::from_le_bytes(r.take(8)?.try_into().expect("8-byte slice"));
                }
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            model,
            stats: header.stats,
            window: header.window,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Checkpoint(format!("truncated file at byte {}", self.pos))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4-byte slice")))
    }
}
