//! Binary checkpoint container for a [`CollabNetwork`].
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CFNN"  u8 version
//! u32 input_dim  u32 output_dim  u8 bias  u32 trunk_len
//! trunk_len x (u32 width, str activation)
//! str output_activation  str collab_activation
//! matrices: trunk[0..], pseudo_out[0..], collab
//!   each: u32 rows  u32 cols  rows*cols x f64 (row-major)
//! ```
//!
//! `str` is a u8 byte length followed by the UTF-8 activation name.

use std::fs;
use std::path::Path;

use crate::activations::ActivationKind;
use crate::collab_net::{CollabNetwork, CollabSpec, LayerSpec};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const MAGIC: &[u8; 4] = b"CFNN";
pub const VERSION: u8 = 1;

pub fn encode(net: &CollabNetwork) -> Vec<u8> {
    let spec = net.spec();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    put_u32(&mut buf, spec.input_dim);
    put_u32(&mut buf, spec.output_dim);
    buf.push(u8::from(spec.bias));
    put_u32(&mut buf, spec.trunk.len());
    for layer in &spec.trunk {
        put_u32(&mut buf, layer.width);
        put_str(&mut buf, &layer.activation.to_string());
    }
    put_str(&mut buf, &spec.output_activation.to_string());
    put_str(&mut buf, &spec.collab_activation.to_string());
    for m in net.matrices() {
        put_u32(&mut buf, m.rows());
        put_u32(&mut buf, m.cols());
        for v in m.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn decode(bytes: &[u8]) -> Result<CollabNetwork> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(r.err_at(0, format!("bad magic {magic:?}")));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(r.err_at(4, format!("unsupported version {version}")));
    }
    let input_dim = r.u32()?;
    let output_dim = r.u32()?;
    let bias = match r.u8()? {
        0 => false,
        1 => true,
        b => return Err(r.err(format!("bad bias flag {b}"))),
    };
    let trunk_len = r.u32()?;
    let mut trunk = Vec::with_capacity(trunk_len.min(1024));
    for _ in 0..trunk_len {
        let width = r.u32()?;
        let activation = r.activation()?;
        trunk.push(LayerSpec { width, activation });
    }
    let output_activation = r.activation()?;
    let collab_activation = r.activation()?;
    let spec = CollabSpec {
        input_dim,
        trunk,
        output_dim,
        output_activation,
        collab_activation,
        bias,
    };
    spec.validate()
        .map_err(|e| Error::Checkpoint(format!("invalid spec: {e}")))?;

    let s = spec.subsystem_count();
    let mut matrices = Vec::with_capacity(2 * s + 1);
    for _ in 0..2 * s + 1 {
        matrices.push(r.matrix()?);
    }
    if r.pos != bytes.len() {
        return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let collab = matrices.pop().unwrap();
    let pseudo_out = matrices.split_off(s);
    CollabNetwork::from_parts(spec, matrices, pseudo_out, collab)
        .map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save_checkpoint(net: &CollabNetwork, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(net))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<CollabNetwork> {
    decode(&fs::read(path)?)
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("dimension exceeds u32");
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    let len = u8::try_from(s.len()).expect("activation name too long");
    buf.push(len);
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: String) -> Error {
        self.err_at(self.pos, msg)
    }

    fn err_at(&self, offset: usize, msg: String) -> Error {
        Error::Checkpoint(format!("at byte {offset}: {msg}"))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!(
                "truncated: need {n} bytes, {} left",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn activation(&mut self) -> Result<ActivationKind> {
        let at = self.pos;
        let len = self.u8()? as usize;
        let raw = self.take(len)?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| self.err_at(at, "activation name is not UTF-8".into()))?;
        name.parse().map_err(|e| self.err_at(at, format!("{e}")))
    }

    fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.u32()?;
        let cols = self.u32()?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| self.err("matrix size overflow".into()))?;
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| self.err("matrix size overflow".into()))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Matrix::from_vec(rows, cols, data)
    }
}
