//! Binary model container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "PIPMODEL"            8 bytes magic
//! format_version        u32
//! dof_count             u32
//!   name                u32 length + UTF-8
//!   role                u8 (0 observed, 1 latent, 2 controlled)
//!   unit                u32 length + UTF-8
//!   phase_input         u8 (0 none, 1 position, 2 velocity)
//!   basis_count         u32
//!   kappa               f64
//! prior_mean            u32 length + f64 * length
//! prior_cov             u32 rows + u32 cols + f64 * rows * cols (row-major)
//! noise                 u32 length + f64 * length
//! manifold              u32 E + u32 F + f64 pos_lo, pos_hi, vel_lo, vel_hi
//!                       + f64 * E*F table + u8 * E*F occupancy
//! checksum              first 8 bytes of SHA-256 over everything above
//! ```
//!
//! Floats are stored as raw IEEE-754 bits, so a load reproduces the saved
//! model exactly.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use super::{DofRole, DofSpec, PhaseInput, PipModel};
use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::manifold::{PhaseManifold, Range};

pub const MAGIC: &[u8; 8] = b"PIPMODEL";
pub const FORMAT_VERSION: u32 = 1;

const CHECKSUM_LEN: usize = 8;
const MAX_STRING: usize = 4096;

fn checksum(bytes: &[u8]) -> [u8; CHECKSUM_LEN] {
    let digest = Sha256::digest(bytes);
    let mut out = [0u8; CHECKSUM_LEN];
    out.copy_from_slice(&digest[..CHECKSUM_LEN]);
    out
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("model dimension exceeds u32");
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_bits().to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
}

/// Serializes a model; does not validate it.
pub fn encode_model(model: &PipModel) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.0.extend_from_slice(&FORMAT_VERSION.to_le_bytes());

    w.u32(model.dofs.len());
    for (spec, basis) in model.dofs.iter().zip(&model.bases) {
        w.str(&spec.name);
        w.u8(match spec.role {
            DofRole::Observed => 0,
            DofRole::Latent => 1,
            DofRole::Controlled => 2,
        });
        w.str(&spec.unit);
        w.u8(match spec.phase_input {
            None => 0,
            Some(PhaseInput::Position) => 1,
            Some(PhaseInput::Velocity) => 2,
        });
        w.u32(basis.count());
        w.f64(basis.kappa());
    }

    w.u32(model.prior_mean.len());
    for &v in model.prior_mean.iter() {
        w.f64(v);
    }
    let (rows, cols) = model.prior_cov.shape();
    w.u32(rows);
    w.u32(cols);
    for i in 0..rows {
        for j in 0..cols {
            w.f64(model.prior_cov[(i, j)]);
        }
    }
    w.u32(model.noise.len());
    for &v in &model.noise {
        w.f64(v);
    }

    let m = &model.manifold;
    w.u32(m.position_bins());
    w.u32(m.velocity_bins());
    for v in [
        m.position_range().lo,
        m.position_range().hi,
        m.velocity_range().lo,
        m.velocity_range().hi,
    ] {
        w.f64(v);
    }
    for &p in m.table() {
        w.f64(p);
    }
    for &o in m.occupancy() {
        w.u8(o as u8);
    }

    let sum = checksum(&w.0);
    w.0.extend_from_slice(&sum);
    w.0
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, field: &'static str, reason: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos,
            field,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(
                field,
                format!(
                    "unexpected end of file (need {n} bytes, {} left)",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, field: &'static str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    fn u32(&mut self, field: &'static str) -> Result<usize> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn f64(&mut self, field: &'static str) -> Result<f64> {
        let b = self.take(8, field)?;
        Ok(f64::from_bits(u64::from_le_bytes(b.try_into().unwrap())))
    }

    fn str(&mut self, field: &'static str) -> Result<String> {
        let start = self.pos;
        let len = self.u32(field)?;
        if len > MAX_STRING {
            self.pos = start;
            return Err(self.err(field, format!("string length {len} exceeds {MAX_STRING}")));
        }
        let b = self.take(len, field)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Parse {
            offset: start + 4,
            field,
            reason: "invalid UTF-8".into(),
        })
    }

    /// Reads a count and checks that `count * item_size` bytes remain.
    fn count(&mut self, item_size: usize, field: &'static str) -> Result<usize> {
        let start = self.pos;
        let n = self.u32(field)?;
        let remaining = self.bytes.len() - self.pos;
        if n.saturating_mul(item_size) > remaining {
            self.pos = start;
            return Err(self.err(
                field,
                format!("declares {n} entries but only {remaining} bytes remain"),
            ));
        }
        Ok(n)
    }

    fn f64s(&mut self, n: usize, field: &'static str) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64(field)).collect()
    }
}

/// Parses and validates a model from bytes.
pub fn decode_model(bytes: &[u8]) -> Result<PipModel> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(MAGIC.len(), "magic")?;
    if magic != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            field: "magic",
            reason: "not a model file (missing PIPMODEL magic)".into(),
        });
    }
    let version = r.take(4, "format_version")?;
    let version = u32::from_le_bytes(version.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            supported: FORMAT_VERSION,
        });
    }

    let dof_count = r.count(1, "dof_count")?;
    let mut dofs = Vec::with_capacity(dof_count);
    let mut bases = Vec::with_capacity(dof_count);
    for _ in 0..dof_count {
        let name = r.str("dof.name")?;
        let role = match r.u8("dof.role")? {
            0 => DofRole::Observed,
            1 => DofRole::Latent,
            2 => DofRole::Controlled,
            v => {
                r.pos -= 1;
                return Err(r.err("dof.role", format!("unknown role code {v}")));
            }
        };
        let unit = r.str("dof.unit")?;
        let phase_input = match r.u8("dof.phase_input")? {
            0 => None,
            1 => Some(PhaseInput::Position),
            2 => Some(PhaseInput::Velocity),
            v => {
                r.pos -= 1;
                return Err(r.err("dof.phase_input", format!("unknown code {v}")));
            }
        };
        let count_at = r.pos;
        let count = r.u32("dof.basis_count")?;
        let kappa = r.f64("dof.kappa")?;
        let basis = BasisSet::new(count, kappa).map_err(|e| Error::Parse {
            offset: count_at,
            field: "dof.basis",
            reason: e.to_string(),
        })?;
        dofs.push(DofSpec {
            name,
            role,
            unit,
            phase_input,
        });
        bases.push(basis);
    }
    let total: usize = bases.iter().map(BasisSet::count).sum();

    let at = r.pos;
    let n = r.count(8, "prior_mean")?;
    if n != total {
        return Err(Error::Parse {
            offset: at,
            field: "prior_mean",
            reason: format!("length {n} does not match total basis count {total}"),
        });
    }
    let prior_mean = DVector::from_vec(r.f64s(n, "prior_mean")?);

    let at = r.pos;
    let rows = r.u32("prior_cov")?;
    let cols = r.u32("prior_cov")?;
    if rows != total || cols != total {
        return Err(Error::Parse {
            offset: at,
            field: "prior_cov",
            reason: format!("dimension {rows}x{cols} does not match total basis count {total}"),
        });
    }
    if rows * cols * 8 > bytes.len() - r.pos {
        return Err(r.err("prior_cov", "unexpected end of file"));
    }
    let cov_values = r.f64s(rows * cols, "prior_cov")?;
    let prior_cov = DMatrix::from_row_slice(rows, cols, &cov_values);

    let at = r.pos;
    let n = r.count(8, "noise")?;
    if n != dof_count {
        return Err(Error::Parse {
            offset: at,
            field: "noise",
            reason: format!("length {n} does not match DOF count {dof_count}"),
        });
    }
    let noise = r.f64s(n, "noise")?;

    let at = r.pos;
    let e = r.u32("manifold.bins")?;
    let f = r.u32("manifold.bins")?;
    let pos_lo = r.f64("manifold.range")?;
    let pos_hi = r.f64("manifold.range")?;
    let vel_lo = r.f64("manifold.range")?;
    let vel_hi = r.f64("manifold.range")?;
    let cells = e.saturating_mul(f);
    if cells.saturating_mul(9) > bytes.len() - r.pos {
        return Err(Error::Parse {
            offset: at,
            field: "manifold.bins",
            reason: format!("{e}x{f} table does not fit in the remaining bytes"),
        });
    }
    let table = r.f64s(cells, "manifold.table")?;
    let occupancy = (0..cells)
        .map(|_| match r.u8("manifold.occupancy")? {
            0 => Ok(false),
            1 => Ok(true),
            v => {
                r.pos -= 1;
                Err(r.err("manifold.occupancy", format!("invalid flag {v}")))
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let body_end = r.pos;
    let stored = r.take(CHECKSUM_LEN, "checksum")?;
    if stored != checksum(&bytes[..body_end]) {
        return Err(Error::Parse {
            offset: body_end,
            field: "checksum",
            reason: "checksum mismatch; file is corrupt".into(),
        });
    }
    if r.pos != bytes.len() {
        return Err(r.err("trailer", format!("{} unexpected trailing bytes", bytes.len() - r.pos)));
    }

    let manifold = PhaseManifold::from_parts(
        e,
        f,
        Range { lo: pos_lo, hi: pos_hi },
        Range { lo: vel_lo, hi: vel_hi },
        table,
        occupancy,
    )
    .map_err(|err| Error::Parse {
        offset: at,
        field: "manifold",
        reason: err.to_string(),
    })?;

    let model = PipModel {
        dofs,
        bases,
        prior_mean,
        prior_cov,
        noise,
        manifold,
    };
    model.validate().map_err(|err| Error::Parse {
        offset: 12,
        field: "model",
        reason: err.to_string(),
    })?;
    Ok(model)
}

pub fn save_model(model: &PipModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<PipModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    decode_model(&bytes)
}
