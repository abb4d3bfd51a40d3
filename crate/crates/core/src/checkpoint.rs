//! Named-tensor container: `MDFF`, a little-endian `u32` version and
//! section count, then per section a length-prefixed UTF-8 name, `rows`,
//! `cols` and row-major `f32` data.
//!
//! Tensors are trained in `f64` and stored as `f32`. Loading widens exactly,
//! so save → load → save reproduces the same bytes.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::numerics::{Matrix, ParamSet};

pub const MAGIC: &[u8; 4] = b"MDFF";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub sections: Vec<(String, Matrix)>,
}

fn u32_of(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Checkpoint(format!("{what} {n} does not fit in u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.at)))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, m: Matrix) {
        self.sections.push((name.into(), m));
    }

    /// Appends every tensor of `params` under `prefix.`.
    pub fn push_params<P: ParamSet>(&mut self, prefix: &str, params: &P) {
        for (name, m) in params.tensors() {
            self.push(format!("{prefix}.{name}"), m.clone());
        }
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Checkpoint(format!("no section `{name}`")))
    }

    /// Loads the `prefix.`-named sections into `params`.
    pub fn load_params<P: ParamSet>(&self, prefix: &str, params: &mut P) -> Result<()> {
        let head = format!("{prefix}.");
        let named: Vec<(String, Matrix)> = self
            .sections
            .iter()
            .filter_map(|(n, m)| n.strip_prefix(&head).map(|s| (s.to_string(), m.clone())))
            .collect();
        params.load_named(&named)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&u32_of(self.sections.len(), "section count")?.to_le_bytes());
        for (name, m) in &self.sections {
            out.extend_from_slice(&u32_of(name.len(), "name length")?.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&u32_of(m.rows(), "rows")?.to_le_bytes());
            out.extend_from_slice(&u32_of(m.cols(), "cols")?.to_le_bytes());
            for &v in m.as_slice() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4).ok() != Some(MAGIC.as_slice()) {
            return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let count = r.u32()? as usize;
        let mut sections = Vec::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("section name is not UTF-8".into()))?
                .to_string();
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let n = rows
                .checked_mul(cols)
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::Checkpoint(format!("section `{name}` is too large")))?;
            let data = r
                .take(n)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            sections.push((name, Matrix::from_vec(rows, cols, data)?));
        }
        if r.at != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.at)));
        }
        Ok(Checkpoint { sections })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{sample_gaussian, Mlp, Rng};

    fn sample() -> Checkpoint {
        let mut rng = Rng::new(1, 0);
        let mut c = Checkpoint::new();
        c.push("E", sample_gaussian(&mut rng, 5, 3));
        c.push("empty", Matrix::zeros(0, 4));
        c.push_params("mapper", &Mlp::new(&mut rng, 3, 4, 2));
        c
    }

    #[test]
    fn header_layout() {
        let mut c = Checkpoint::new();
        c.push("ab", Matrix::row_vector(&[1.0, -2.0]));
        let b = c.to_bytes().unwrap();
        let mut want = b"MDFF".to_vec();
        for w in [1u32, 1, 2] {
            want.extend_from_slice(&w.to_le_bytes());
        }
        want.extend_from_slice(b"ab");
        for w in [1u32, 2] {
            want.extend_from_slice(&w.to_le_bytes());
        }
        want.extend_from_slice(&1f32.to_le_bytes());
        want.extend_from_slice(&(-2f32).to_le_bytes());
        assert_eq!(b, want);
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        let c = sample();
        c.save(&p).unwrap();
        let first = std::fs::read(&p).unwrap();
        Checkpoint::load(&p).unwrap().save(&p).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), first);
    }

    #[test]
    fn values_round_to_f32() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        let (a, b) = (c.get("E").unwrap(), back.get("E").unwrap());
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert_eq!(*y, *x as f32 as f64);
        }
        assert_eq!(back.get("empty").unwrap().shape(), (0, 4));
    }

    #[test]
    fn params_round_trip_by_name() {
        let c = sample();
        let mut m = Mlp::new(&mut Rng::new(9, 9), 3, 4, 2);
        c.load_params("mapper", &mut m).unwrap();
        let mut again = Checkpoint::new();
        again.push_params("mapper", &m);
        let orig: Vec<_> = c.sections.iter().filter(|(n, _)| n.starts_with("mapper.")).cloned().collect();
        let back = Checkpoint::from_bytes(&again.to_bytes().unwrap()).unwrap();
        assert_eq!(
            Checkpoint { sections: orig }.to_bytes().unwrap(),
            back.to_bytes().unwrap()
        );
        let mut wrong = Mlp::new(&mut Rng::new(9, 9), 3, 5, 2);
        assert!(c.load_params("mapper", &mut wrong).is_err());
    }

    #[test]
    fn rejects_bad_magic_version_and_truncation() {
        let b = sample().to_bytes().unwrap();
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut bad = b.clone();
        bad[4] = 2;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(m)) if m.contains("version")));
        assert!(Checkpoint::from_bytes(&b[..b.len() - 1]).is_err());
        let mut long = b.clone();
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
        assert!(Checkpoint::get(&sample(), "nope").is_err());
    }
}
