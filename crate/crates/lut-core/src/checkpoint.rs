//! Binary container for named tensors: model/teacher checkpoints and attention
//! dumps all share it. Little-endian throughout, `f64` payloads, bit-exact
//! round trips.
//!
//! Layout:
//! ```text
//! magic  b"LUTC"
//! u32    format version (currently 1)
//! u8     kind length, then kind bytes (utf-8: "model", "teacher", "attention", ...)
//! u64    config hash (fnv-1a of the canonical config text; 0 when unused)
//! u64    step counter
//! u32    entry count
//! entry: u16 name length, name bytes, u8 ndim, u32 dims..., f64 data...
//! ```

use crate::error::{LutError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"LUTC";
const VERSION: u32 = 1;

/// 64-bit FNV-1a, used to fingerprint the architecture-relevant config text.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Debug, Clone)]
pub struct Container {
    pub kind: String,
    pub config_hash: u64,
    pub step: u64,
    pub entries: Vec<(String, Tensor)>,
}

impl Container {
    pub fn from_store(kind: &str, config_hash: u64, step: u64, store: &ParamStore) -> Self {
        let entries = store
            .iter()
            .map(|(_, name, t)| (name.to_string(), t.clone()))
            .collect();
        Container { kind: kind.to_string(), config_hash, step, entries }
    }

    /// Copy values back into `store`; every store parameter must be present
    /// with an identical shape.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<()> {
        for id in store.ids() {
            let name = store.name(id).to_string();
            let (_, src) = self
                .entries
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| LutError::Corrupt {
                    kind: "checkpoint",
                    detail: format!("missing parameter {name}"),
                })?;
            let dst = store.get_mut(id);
            if dst.shape() != src.shape() {
                return Err(LutError::shape(
                    "checkpoint_load",
                    format!("{name}: checkpoint {:?} vs model {:?}", src.shape(), dst.shape()),
                ));
            }
            dst.set_data(src.data().to_vec());
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

pub fn save(path: &Path, c: &Container) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let kind = c.kind.as_bytes();
    if kind.len() > u8::MAX as usize {
        return Err(LutError::Config(format!("container kind too long: {}", c.kind)));
    }
    w.write_all(&[kind.len() as u8])?;
    w.write_all(kind)?;
    w.write_all(&c.config_hash.to_le_bytes())?;
    w.write_all(&c.step.to_le_bytes())?;
    w.write_all(&(c.entries.len() as u32).to_le_bytes())?;
    for (name, t) in &c.entries {
        let nb = name.as_bytes();
        w.write_all(&(nb.len() as u16).to_le_bytes())?;
        w.write_all(nb)?;
        w.write_all(&[t.shape().len() as u8])?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn corrupt(detail: impl Into<String>) -> LutError {
    LutError::Corrupt { kind: "checkpoint", detail: detail.into() }
}

pub fn load(path: &Path) -> Result<Container> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(corrupt(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let klen = read_u8(&mut r)? as usize;
    let mut kind = vec![0u8; klen];
    r.read_exact(&mut kind)?;
    let kind = String::from_utf8(kind).map_err(|e| corrupt(format!("kind not utf-8: {e}")))?;
    let config_hash = read_u64(&mut r)?;
    let step = read_u64(&mut r)?;
    let n = read_u32(&mut r)? as usize;
    let mut entries = Vec::with_capacity(n);
    for _ in 0..n {
        let nlen = read_u16(&mut r)? as usize;
        let mut name = vec![0u8; nlen];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| corrupt(format!("name not utf-8: {e}")))?;
        let ndim = read_u8(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(&mut r)? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut buf = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        entries.push((name, Tensor::new(shape, data)?));
    }
    Ok(Container { kind, config_hash, step, entries })
}

/// Load and verify both the kind tag and the config hash.
pub fn load_expect(path: &Path, kind: &str, config_hash: u64) -> Result<Container> {
    let c = load(path)?;
    if c.kind != kind {
        return Err(corrupt(format!("expected kind {kind:?}, found {:?}", c.kind)));
    }
    if c.config_hash != config_hash {
        return Err(LutError::CheckpointMismatch { expected: config_hash, found: c.config_hash });
    }
    Ok(c)
}

/// Elementwise arithmetic mean across containers with identical entry sets.
pub fn average(containers: &[Container]) -> Result<Container> {
    let first = containers.first().ok_or(LutError::EmptyInput("average of no checkpoints"))?;
    let mut out = first.clone();
    for c in &containers[1..] {
        if c.entries.len() != out.entries.len() {
            return Err(LutError::shape(
                "checkpoint_average",
                format!("{} entries vs {}", c.entries.len(), out.entries.len()),
            ));
        }
        for ((name, acc), (other_name, t)) in out.entries.iter_mut().zip(&c.entries) {
            if name != other_name || acc.shape() != t.shape() {
                return Err(LutError::shape(
                    "checkpoint_average",
                    format!("entry mismatch: {name} {:?} vs {other_name} {:?}", acc.shape(), t.shape()),
                ));
            }
            acc.add_assign(t.data());
        }
    }
    let k = containers.len() as f64;
    for (_, t) in &mut out.entries {
        t.scale_assign(1.0 / k);
    }
    out.step = containers.iter().map(|c| c.step).max().unwrap_or(0);
    Ok(out)
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use tempfile::tempdir;

    fn random_store(seed: u64) -> ParamStore {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        s.add("w", Tensor::new(vec![2, 3], (0..6).map(|_| rng.gen::<f64>() - 0.5).collect()).unwrap());
        s.add("b", Tensor::new(vec![3], (0..3).map(|_| rng.gen::<f64>() - 0.5).collect()).unwrap());
        s
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let store = random_store(3);
        let c = Container::from_store("model", fnv1a(b"cfg"), 42, &store);
        save(&path, &c).unwrap();
        let back = load_expect(&path, "model", fnv1a(b"cfg")).unwrap();
        assert_eq!(back.step, 42);
        let mut store2 = random_store(4);
        back.load_into(&mut store2).unwrap();
        assert!(store.bit_eq(&store2));
    }

    #[test]
    fn hash_mismatch_is_a_typed_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let c = Container::from_store("model", 7, 0, &random_store(1));
        save(&path, &c).unwrap();
        match load_expect(&path, "model", 8) {
            Err(LutError::CheckpointMismatch { expected: 8, found: 7 }) => {}
            other => panic!("expected hash mismatch, got {other:?}"),
        }
        assert!(matches!(
            load_expect(&path, "teacher", 7),
            Err(LutError::Corrupt { .. })
        ));
    }

    #[test]
    fn truncated_file_is_corrupt_or_io_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let c = Container::from_store("model", 7, 0, &random_store(1));
        save(&path, &c).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load(&path).is_err());
    }

    #[test]
    fn average_of_one_is_identity_and_opposites_cancel() {
        let store = random_store(9);
        let a = Container::from_store("model", 0, 5, &store);
        let avg = average(&[a.clone()]).unwrap();
        for ((_, x), (_, y)) in a.entries.iter().zip(&avg.entries) {
            assert!(x.bit_eq(y));
        }

        let mut neg = a.clone();
        for (_, t) in &mut neg.entries {
            t.scale_assign(-1.0);
        }
        let zero = average(&[a.clone(), neg]).unwrap();
        for (_, t) in &zero.entries {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn average_matches_elementwise_oracle_and_is_order_invariant() {
        let cs: Vec<Container> = (0..3)
            .map(|i| Container::from_store("model", 0, i, &random_store(i + 10)))
            .collect();
        let avg = average(&cs).unwrap();
        for (e, (name, t)) in avg.entries.iter().enumerate() {
            for (j, &v) in t.data().iter().enumerate() {
                let want: f64 =
                    cs.iter().map(|c| c.entries[e].1.data()[j]).sum::<f64>() / 3.0;
                assert!((v - want).abs() < 1e-15, "{name}[{j}]");
            }
        }
        let rev: Vec<Container> = cs.iter().rev().cloned().collect();
        let avg_rev = average(&rev).unwrap();
        for ((_, x), (_, y)) in avg.entries.iter().zip(&avg_rev.entries) {
            assert_eq!(x.data(), y.data());
        }
    }

    #[test]
    fn fnv1a_known_vectors() {
        // reference values for the 64-bit fnv-1a parameters
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }
}
