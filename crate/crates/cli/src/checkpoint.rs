//! Versioned little-endian checkpoint files.
//!
//! Layout, in order:
//!
//! | field | encoding |
//! |---|---|
//! | magic | 8 bytes `PRNLAB01` |
//! | format version | u32 |
//! | arch string | u32 length + UTF-8 bytes |
//! | cycle | u64 |
//! | rng seed, training calls made | u64, u64 |
//! | parameters | tensor set |
//! | masks | per layer: u64 bit count + bits packed LSB first |
//! | snapshots | u32 count; each: u8 tag (0 init, 1 epoch, 2 converged), u64 epoch, tensor set |
//! | optimizer velocity | tensor set |
//! | checksum | u64 FNV-1a over every preceding byte |
//!
//! A tensor set is a u32 layer count followed, per layer, by the weights
//! (u64 length + f64 values) and a u8 bias flag with the biases when set.

use std::path::Path;

use serde::Serialize;

use prunelab_core::arch::build_network;
use prunelab_core::nn::{GradSet, Network, OptimState};
use prunelab_core::{Error, MaskState, Result, Snapshot, SnapshotTag, Tensor};

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 8] = b"PRNLAB01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: String,
    pub cycle: u64,
    pub seed: u64,
    /// Training calls already made; the next one trains with
    /// `derive_seed(seed, train_calls)`.
    pub train_calls: u64,
    pub params: Snapshot,
    pub masks: MaskState,
    /// The initialization snapshot and, when used, the epoch rewind target.
    pub snapshots: Vec<Snapshot>,
    pub optimizer: OptimState,
}

/// Metadata written next to each checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sidecar {
    pub format_version: u32,
    pub arch: String,
    pub cycle: u64,
    pub seed: u64,
    pub train_calls: u64,
    pub lambda_percent: f64,
    pub remaining: usize,
    pub total: usize,
    pub snapshots: Vec<String>,
    pub bytes: usize,
    pub checksum: String,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    put_u64(out, values.len() as u64);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_tensors(out: &mut Vec<u8>, weights: &[Tensor], biases: &[Option<Tensor>]) {
    put_u32(out, weights.len() as u32);
    for (w, b) in weights.iter().zip(biases) {
        put_f64s(out, w.data());
        match b {
            Some(b) => {
                out.push(1);
                put_f64s(out, b.data());
            }
            None => out.push(0),
        }
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_u32(&mut out, self.arch.len() as u32);
        out.extend_from_slice(self.arch.as_bytes());
        put_u64(&mut out, self.cycle);
        put_u64(&mut out, self.seed);
        put_u64(&mut out, self.train_calls);
        put_tensors(&mut out, &self.params.weights, &self.params.biases);
        for layer in self.masks.layers() {
            put_u64(&mut out, layer.len() as u64);
            let mut packed = vec![0u8; layer.len().div_ceil(8)];
            for (i, &keep) in layer.iter().enumerate() {
                if keep {
                    packed[i / 8] |= 1 << (i % 8);
                }
            }
            out.extend_from_slice(&packed);
        }
        put_u32(&mut out, self.snapshots.len() as u32);
        for s in &self.snapshots {
            let (tag, k) = match s.tag {
                SnapshotTag::Init => (0u8, 0u64),
                SnapshotTag::Epoch(k) => (1, k as u64),
                SnapshotTag::Converged => (2, 0),
            };
            out.push(tag);
            put_u64(&mut out, k);
            put_tensors(&mut out, &s.weights, &s.biases);
        }
        let v = &self.optimizer.velocity;
        put_tensors(&mut out, &v.weights, &v.biases);
        let sum = fnv1a(&out);
        put_u64(&mut out, sum);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(r.error_at(0, "bad magic, not a prunelab checkpoint"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(r.error_at(8, format!("unsupported format version {version}")));
        }
        let len = r.u32()? as usize;
        let at = r.pos;
        let arch = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| r.error_at(at, "arch is not UTF-8"))?;
        let net = build_network(&arch).map_err(|e| r.error_at(at, format!("arch: {e}")))?;
        let cycle = r.u64()?;
        let seed = r.u64()?;
        let train_calls = r.u64()?;
        let (weights, biases) = r.tensors(&net)?;
        let params = Snapshot {
            tag: SnapshotTag::Converged,
            weights,
            biases,
        };
        let mut keep = Vec::new();
        for layer in net.layers() {
            let at = r.pos;
            let n = r.u64()? as usize;
            if n != layer.weight().len() {
                return Err(r.error_at(at, format!("mask has {n} bits, layer has {} weights", layer.weight().len())));
            }
            let packed = r.take(n.div_ceil(8))?;
            keep.push((0..n).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect());
        }
        let masks = MaskState::from_bits(keep);
        let count = r.u32()?;
        let mut snapshots = Vec::new();
        for _ in 0..count {
            let at = r.pos;
            let tag = r.take(1)?[0];
            let k = r.u64()? as usize;
            let tag = match tag {
                0 => SnapshotTag::Init,
                1 => SnapshotTag::Epoch(k),
                2 => SnapshotTag::Converged,
                t => return Err(r.error_at(at, format!("unknown snapshot tag {t}"))),
            };
            let (weights, biases) = r.tensors(&net)?;
            snapshots.push(Snapshot { tag, weights, biases });
        }
        let (weights, biases) = r.tensors(&net)?;
        let optimizer = OptimState {
            velocity: GradSet { weights, biases },
        };
        let body = r.pos;
        let stored = r.u64()?;
        if stored != fnv1a(&bytes[..body]) {
            return Err(r.error_at(body, "checksum mismatch"));
        }
        if r.pos != bytes.len() {
            return Err(r.error_at(r.pos, "trailing bytes after checksum"));
        }
        Ok(Self {
            arch,
            cycle,
            seed,
            train_calls,
            params,
            masks,
            snapshots,
            optimizer,
        })
    }

    /// Network holding the checkpointed parameters.
    pub fn network(&self) -> Result<Network> {
        let mut net = build_network(&self.arch)?;
        net.load_snapshot(&self.params)?;
        Ok(net)
    }

    pub fn sidecar(&self, bytes: &[u8]) -> Sidecar {
        let record = self.masks.lambda();
        Sidecar {
            format_version: FORMAT_VERSION,
            arch: self.arch.clone(),
            cycle: self.cycle,
            seed: self.seed,
            train_calls: self.train_calls,
            lambda_percent: record.lambda_percent,
            remaining: record.remaining,
            total: record.total,
            snapshots: self
                .snapshots
                .iter()
                .map(|s| match s.tag {
                    SnapshotTag::Init => "init".to_string(),
                    SnapshotTag::Epoch(k) => format!("epoch:{k}"),
                    SnapshotTag::Converged => "converged".to_string(),
                })
                .collect(),
            bytes: bytes.len(),
            checksum: format!("{:016x}", fnv1a(&bytes[..bytes.len() - 8])),
        }
    }

    /// Writes `<stem>.ckpt` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> CliResult<()> {
        let bytes = self.to_bytes();
        let path = dir.join(format!("{stem}.ckpt"));
        std::fs::write(&path, &bytes).map_err(|e| CliError::io(&path, e))?;
        let side = dir.join(format!("{stem}.json"));
        let json = serde_json::to_string_pretty(&self.sidecar(&bytes))?;
        std::fs::write(&side, json + "\n").map_err(|e| CliError::io(&side, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Ok(Self::from_bytes(&bytes)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error_at(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Format {
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error_at(
                self.pos,
                format!("truncated: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, shape: &[usize]) -> Result<Tensor> {
        let at = self.pos;
        let n = self.u64()? as usize;
        let expected: usize = shape.iter().product();
        if n != expected {
            return Err(self.error_at(at, format!("tensor has {n} values, expected {expected}")));
        }
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.error_at(at, "tensor length overflows"))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(shape.to_vec(), data)
    }

    fn tensors(&mut self, net: &Network) -> Result<(Vec<Tensor>, Vec<Option<Tensor>>)> {
        let at = self.pos;
        let layers = self.u32()? as usize;
        if layers != net.layers().len() {
            return Err(self.error_at(at, format!("{layers} layers, arch has {}", net.layers().len())));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for layer in net.layers() {
            weights.push(self.f64s(layer.weight().shape())?);
            let at = self.pos;
            let flag = self.take(1)?[0];
            biases.push(match (flag, layer.bias()) {
                (0, None) => None,
                (1, Some(b)) => Some(self.f64s(b.shape())?),
                _ => return Err(self.error_at(at, "bias flag disagrees with arch")),
            });
        }
        Ok((weights, biases))
    }
}
