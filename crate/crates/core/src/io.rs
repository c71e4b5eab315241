//! Binary field and trajectory dumps.
//!
//! Field dump (`.vlf`): `b"VLFD"`, `u32` version, `u32` n, `u32` field count,
//! `f64` box length, `f64` time, then each field as `n * n` little-endian
//! `f64` values, row-major with `x1` fastest, and finally the SHA-256 of all
//! preceding bytes.
//!
//! Trajectory dump (`.vlt`): `b"VLTR"`, `u32` version, `u32` point count,
//! `u32` time count, the times, then `[time][point][x1, x2]` positions, then
//! the SHA-256 trailer. All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};
use crate::solver::State;
use crate::spectral::{GridSpec, ScalarField, DEFAULT_DEALIAS};

const FIELD_MAGIC: &[u8; 4] = b"VLFD";
const TRACK_MAGIC: &[u8; 4] = b"VLTR";
const VERSION: u32 = 1;

fn seal(mut buf: Vec<u8>) -> Vec<u8> {
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

fn unseal<'a>(bytes: &'a [u8], path: &Path) -> Result<&'a [u8]> {
    if bytes.len() < 32 {
        return Err(LabError::Checksum(path.display().to_string()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != tail {
        return Err(LabError::Checksum(path.display().to_string()));
    }
    Ok(body)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        if self.pos + k > self.buf.len() {
            return Err(LabError::Format {
                path: self.path.display().to_string(),
                detail: "truncated".into(),
            });
        }
        let s = &self.buf[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn bad(&self, detail: impl Into<String>) -> LabError {
        LabError::Format {
            path: self.path.display().to_string(),
            detail: detail.into(),
        }
    }
}

pub fn encode_fields(t: f64, fields: &[&ScalarField]) -> Result<Vec<u8>> {
    let g = *fields
        .first()
        .ok_or_else(|| LabError::InsufficientData("no fields to dump".into()))?
        .grid();
    let mut buf = Vec::with_capacity(32 + fields.len() * g.len() * 8);
    buf.extend_from_slice(FIELD_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(g.n as u32).to_le_bytes());
    buf.extend_from_slice(&(fields.len() as u32).to_le_bytes());
    buf.extend_from_slice(&g.length.to_le_bytes());
    buf.extend_from_slice(&t.to_le_bytes());
    for f in fields {
        if *f.grid() != g {
            return Err(LabError::GridMismatch);
        }
        for v in f.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(seal(buf))
}

/// Decoded field dump; the dealiasing fraction is not stored and defaults to 2/3.
#[derive(Debug, Clone)]
pub struct FieldDump {
    pub t: f64,
    pub fields: Vec<ScalarField>,
}

pub fn decode_fields(bytes: &[u8], path: &Path) -> Result<FieldDump> {
    let body = unseal(bytes, path)?;
    let mut c = Cursor { buf: body, pos: 0, path };
    if c.take(4)? != FIELD_MAGIC {
        return Err(c.bad("not a field dump"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(c.bad(format!("unsupported version {version}")));
    }
    let n = c.u32()? as usize;
    let count = c.u32()? as usize;
    let length = c.f64()?;
    let t = c.f64()?;
    let grid = GridSpec::new(n, length, DEFAULT_DEALIAS).map_err(|e| c.bad(e.to_string()))?;
    let mut fields = Vec::with_capacity(count);
    for _ in 0..count {
        let mut vals = Vec::with_capacity(n * n);
        for _ in 0..n * n {
            vals.push(c.f64()?);
        }
        fields.push(ScalarField::from_values(grid, vals)?);
    }
    if c.pos != body.len() {
        return Err(c.bad("trailing bytes"));
    }
    Ok(FieldDump { t, fields })
}

/// Write `omega` and `rho` of a state.
pub fn write_state(path: &Path, state: &State) -> Result<()> {
    fs::write(path, encode_fields(state.t, &[&state.omega, &state.rho])?)?;
    Ok(())
}

pub fn read_state(path: &Path) -> Result<State> {
    let dump = decode_fields(&fs::read(path)?, path)?;
    let [w, r]: [ScalarField; 2] = dump.fields.try_into().map_err(|_| LabError::Format {
        path: path.display().to_string(),
        detail: "expected two fields".into(),
    })?;
    State::new(dump.t, w, r)
}

pub fn encode_tracks(times: &[f64], positions: &[Vec<[f64; 2]>]) -> Result<Vec<u8>> {
    if times.len() != positions.len() {
        return Err(LabError::InsufficientData("one point set per time required".into()));
    }
    let m = positions.first().map_or(0, |p| p.len());
    let mut buf = Vec::new();
    buf.extend_from_slice(TRACK_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(m as u32).to_le_bytes());
    buf.extend_from_slice(&(times.len() as u32).to_le_bytes());
    for t in times {
        buf.extend_from_slice(&t.to_le_bytes());
    }
    for set in positions {
        if set.len() != m {
            return Err(LabError::InsufficientData("ragged trajectory array".into()));
        }
        for p in set {
            buf.extend_from_slice(&p[0].to_le_bytes());
            buf.extend_from_slice(&p[1].to_le_bytes());
        }
    }
    Ok(seal(buf))
}

pub fn decode_tracks(bytes: &[u8], path: &Path) -> Result<(Vec<f64>, Vec<Vec<[f64; 2]>>)> {
    let body = unseal(bytes, path)?;
    let mut c = Cursor { buf: body, pos: 0, path };
    if c.take(4)? != TRACK_MAGIC {
        return Err(c.bad("not a trajectory dump"));
    }
    if c.u32()? != VERSION {
        return Err(c.bad("unsupported version"));
    }
    let m = c.u32()? as usize;
    let k = c.u32()? as usize;
    let times = (0..k).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
    let mut pos = Vec::with_capacity(k);
    for _ in 0..k {
        let set = (0..m)
            .map(|_| Ok([c.f64()?, c.f64()?]))
            .collect::<Result<Vec<_>>>()?;
        pos.push(set);
    }
    Ok((times, pos))
}

/// SHA-256 of a file as lowercase hex.
pub fn file_digest(path: &Path) -> Result<String> {
    let d = Sha256::digest(fs::read(path)?);
    Ok(d.iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_round_trip_and_corruption() {
        let g = GridSpec::new(16, 3.0, DEFAULT_DEALIAS).unwrap();
        let w = crate::random::band_limited(g, 1, 4, 1.0);
        let r = ScalarField::from_fn(g, |x, y| x * y);
        let st = State::new(0.25, w.clone(), r.clone()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.vlf");
        write_state(&p, &st).unwrap();
        let back = read_state(&p).unwrap();
        assert_eq!(back.t, 0.25);
        assert_eq!(back.omega.values(), w.values());
        assert_eq!(back.rho.values(), r.values());

        let mut bytes = fs::read(&p).unwrap();
        bytes[40] ^= 1;
        fs::write(&p, &bytes).unwrap();
        match read_state(&p) {
            Err(LabError::Checksum(name)) => assert!(name.ends_with("s.vlf")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn track_round_trip() {
        let times = vec![0.0, 0.5];
        let pos = vec![vec![[0.0, 1.0], [2.0, 3.0]], vec![[4.0, 5.0], [6.0, 7.0]]];
        let b = encode_tracks(&times, &pos).unwrap();
        let (t, p) = decode_tracks(&b, Path::new("x")).unwrap();
        assert_eq!(t, times);
        assert_eq!(p, pos);
    }
}
