//! On-disk formats: interaction lists, candidate lists, IIW caches and checkpoints.
//!
//! Binary formats are little-endian and start with an 8-byte magic followed by
//! a `u32` version.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use dpaa_core::model::{EmbeddingTable, Mode};
use dpaa_core::weights::{IiwPlacement, PretrainedIiwCache};
use dpaa_core::Interaction;
use thiserror::Error;

pub const CACHE_MAGIC: &[u8; 8] = b"DPAAIIW\0";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DPAACKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },
    #[error("{path}: {reason}")]
    Invalid { path: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn invalid(path: &Path, reason: impl Into<String>) -> FormatError {
    FormatError::Invalid {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn data_lines(path: &Path) -> Result<Vec<(usize, String)>, FormatError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push((idx + 1, trimmed.to_string()));
    }
    Ok(out)
}

/// Reads `user<TAB>item` lines; `#` starts a comment line.
pub fn read_interactions(path: &Path) -> Result<Vec<Interaction>, FormatError> {
    data_lines(path)?
        .into_iter()
        .map(|(line, text)| {
            let mut fields = text.split('\t');
            let parse = |f: Option<&str>, what: &str| -> Result<u32, FormatError> {
                f.map(str::trim)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| FormatError::Parse {
                        path: path.to_path_buf(),
                        line,
                        reason: format!("expected integer {what} id"),
                    })
            };
            let user = parse(fields.next(), "user")?;
            let item = parse(fields.next(), "item")?;
            if fields.next().is_some() {
                return Err(FormatError::Parse {
                    path: path.to_path_buf(),
                    line,
                    reason: "expected exactly two tab-separated fields".into(),
                });
            }
            Ok(Interaction::new(user, item))
        })
        .collect()
}

pub fn write_interactions(path: &Path, interactions: &[Interaction]) -> Result<(), FormatError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for it in interactions {
        writeln!(w, "{}\t{}", it.user, it.item).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// One item id per line.
pub fn read_candidates(path: &Path) -> Result<Vec<u32>, FormatError> {
    data_lines(path)?
        .into_iter()
        .map(|(line, text)| {
            text.parse().map_err(|_| FormatError::Parse {
                path: path.to_path_buf(),
                line,
                reason: "expected integer item id".into(),
            })
        })
        .collect()
}

struct Reader<'a, R> {
    inner: R,
    path: &'a Path,
}

impl<R: Read> Reader<'_, R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(io_err(self.path))?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn header(&mut self, magic: &[u8; 8]) -> Result<(), FormatError> {
        if &self.bytes::<8>()? != magic {
            return Err(invalid(self.path, "bad magic"));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(invalid(self.path, format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn f32_block(&mut self, len: usize) -> Result<Vec<f64>, FormatError> {
        let mut raw = vec![0u8; len * 4];
        self.inner.read_exact(&mut raw).map_err(io_err(self.path))?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    }

    fn expect_end(&mut self) -> Result<(), FormatError> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe).map_err(io_err(self.path))? {
            0 => Ok(()),
            _ => Err(invalid(self.path, "trailing bytes")),
        }
    }
}

fn open_reader(path: &Path) -> Result<Reader<'_, BufReader<File>>, FormatError> {
    Ok(Reader {
        inner: BufReader::new(File::open(path).map_err(io_err(path))?),
        path,
    })
}

fn f32_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

/// Header: magic, version, `edge_count: u64`, `layer_count: u32`, layers as
/// `u32`; then `f32` values in layer-major, edge-index order.
pub fn write_cache(path: &Path, cache: &PretrainedIiwCache) -> Result<(), FormatError> {
    let mut buf = Vec::with_capacity(32 + cache.values().len() * 4);
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(cache.edge_count() as u64).to_le_bytes());
    buf.extend_from_slice(&(cache.layers().len() as u32).to_le_bytes());
    for &l in cache.layers() {
        buf.extend_from_slice(&(l as u32).to_le_bytes());
    }
    buf.extend_from_slice(&f32_bytes(cache.values()));
    std::fs::write(path, buf).map_err(io_err(path))
}

pub fn read_cache(path: &Path) -> Result<PretrainedIiwCache, FormatError> {
    let mut r = open_reader(path)?;
    r.header(CACHE_MAGIC)?;
    let edge_count = r.u64()? as usize;
    let layer_count = r.u32()? as usize;
    let layers = (0..layer_count)
        .map(|_| r.u32().map(|l| l as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let values = r.f32_block(edge_count * layer_count)?;
    r.expect_end()?;
    PretrainedIiwCache::new(layers, edge_count, values).map_err(|e| invalid(path, e.to_string()))
}

/// `edge_index<TAB>layer<TAB>value` per line.
pub fn export_cache_text(path: &Path, cache: &PretrainedIiwCache) -> Result<(), FormatError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for &l in cache.layers() {
        for (e, v) in cache.layer(l).expect("listed layer").iter().enumerate() {
            writeln!(w, "{e}\t{l}\t{}", *v as f32).map_err(io_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// Trained model parameters plus everything needed to rerun its forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub num_users: usize,
    pub num_items: usize,
    pub dim: usize,
    pub num_layers: usize,
    pub mode: Mode,
    pub c: f64,
    pub eta: f64,
    pub delta: f64,
    pub placement: IiwPlacement,
    /// Blend coefficient of the saved epoch.
    pub beta: f64,
    pub table: EmbeddingTable,
}

/// Header: magic, version, `M, N, d, L: u32`, `mode: u8` (0 dpaa, 1 lightgcn),
/// `gamma: u8`, `C, eta, delta, beta: f64`; then `(M + N) * d` `f32` values.
pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), FormatError> {
    let mut buf = Vec::with_capacity(64 + ckpt.table.as_slice().len() * 4);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [ckpt.num_users, ckpt.num_items, ckpt.dim, ckpt.num_layers] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.push(match ckpt.mode {
        Mode::Dpaa => 0,
        Mode::LightGcn => 1,
    });
    buf.push(ckpt.placement.gamma());
    for v in [ckpt.c, ckpt.eta, ckpt.delta, ckpt.beta] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&f32_bytes(ckpt.table.as_slice()));
    std::fs::write(path, buf).map_err(io_err(path))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, FormatError> {
    let mut r = open_reader(path)?;
    r.header(CHECKPOINT_MAGIC)?;
    let num_users = r.u32()? as usize;
    let num_items = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let num_layers = r.u32()? as usize;
    let mode = match r.u8()? {
        0 => Mode::Dpaa,
        1 => Mode::LightGcn,
        other => return Err(invalid(path, format!("unknown mode tag {other}"))),
    };
    let placement = IiwPlacement::from_gamma(r.u8()?).map_err(|e| invalid(path, e.to_string()))?;
    let c = r.f64()?;
    let eta = r.f64()?;
    let delta = r.f64()?;
    let beta = r.f64()?;
    let values = r.f32_block((num_users + num_items) * dim)?;
    r.expect_end()?;
    let table = EmbeddingTable::from_vec(num_users + num_items, dim, values).map_err(|e| invalid(path, e.to_string()))?;
    Ok(Checkpoint {
        num_users,
        num_items,
        dim,
        num_layers,
        mode,
        c,
        eta,
        delta,
        placement,
        beta,
        table,
    })
}
