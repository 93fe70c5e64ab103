//! `SETM` checkpoints: named f64 arrays.
//!
//! Layout: magic `SETM`, little-endian u32 version and array count, then
//! per array a u32 name length, the UTF-8 name, u32 rows, u32 cols and
//! `rows * cols` little-endian f64 values.

use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

use super::adam::Adam;
use super::params::ParamStore;

pub const SETM_MAGIC: &[u8; 4] = b"SETM";
pub const SETM_VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::Format("truncated checkpoint".into()))?;
    Ok(u32::from_le_bytes(b) as usize)
}

pub fn write_setm<W: Write>(mut w: W, arrays: &[(String, Matrix)]) -> Result<()> {
    w.write_all(SETM_MAGIC)?;
    put_u32(&mut w, SETM_VERSION as usize)?;
    put_u32(&mut w, arrays.len())?;
    for (name, m) in arrays {
        put_u32(&mut w, name.len())?;
        w.write_all(name.as_bytes())?;
        put_u32(&mut w, m.rows())?;
        put_u32(&mut w, m.cols())?;
        for v in m.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_setm<R: Read>(mut r: R) -> Result<Vec<(String, Matrix)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::Format("truncated checkpoint".into()))?;
    if &magic != SETM_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = get_u32(&mut r)?;
    if version != SETM_VERSION as usize {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = get_u32(&mut r)?;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = get_u32(&mut r)?;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(|_| Error::Format("truncated name".into()))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("name is not UTF-8".into()))?;
        let (rows, cols) = (get_u32(&mut r)?, get_u32(&mut r)?);
        let mut buf = vec![0u8; rows * cols * 8];
        r.read_exact(&mut buf).map_err(|_| Error::Format(format!("truncated data for {name}")))?;
        let data = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push((name, Matrix::from_vec(rows, cols, data)?));
    }
    Ok(out)
}

/// Parameters, buffers and optional optimizer state.
pub fn save_checkpoint(path: impl AsRef<Path>, store: &ParamStore, adam: Option<&Adam>) -> Result<()> {
    let mut arrays = store.named();
    if let Some(adam) = adam {
        arrays.extend(adam.state(store));
    }
    write_setm(std::io::BufWriter::new(std::fs::File::create(path)?), &arrays)
}

/// Loads every store entry by name; optimizer state is restored when
/// `adam` is given.
pub fn load_checkpoint(path: impl AsRef<Path>, store: &mut ParamStore, adam: Option<&mut Adam>) -> Result<()> {
    let arrays = read_setm(std::io::BufReader::new(std::fs::File::open(path)?))?;
    restore_params(store, &arrays)?;
    if let Some(adam) = adam {
        adam.restore(store, &arrays)?;
    }
    Ok(())
}

pub fn restore_params(store: &mut ParamStore, arrays: &[(String, Matrix)]) -> Result<()> {
    for id in store.ids().collect::<Vec<_>>() {
        let name = store.name(id).to_owned();
        let (_, m) = arrays
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))?;
        store.set(id, m.clone())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::adam::AdamConfig;

    #[test]
    fn byte_layout() {
        let mut bytes = Vec::new();
        write_setm(&mut bytes, &[("w".to_owned(), Matrix::row_vector(&[1.5]))]).unwrap();
        let mut expect = b"SETM".to_vec();
        for v in [1u32, 1, 1] {
            expect.extend(v.to_le_bytes());
        }
        expect.push(b'w');
        for v in [1u32, 1] {
            expect.extend(v.to_le_bytes());
        }
        expect.extend(1.5f64.to_le_bytes());
        assert_eq!(bytes, expect);
    }

    #[test]
    fn store_and_optimizer_round_trip() {
        let mut store = ParamStore::new();
        let w = store.add("w", Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap());
        store.add_buffer("bn.running_mean", Matrix::row_vector(&[0.25, -1.0]));
        let mut adam = Adam::new(AdamConfig::default());
        adam.update(&mut store, &[(w, Matrix::filled(2, 2, 0.1))]).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.setm");
        save_checkpoint(&path, &store, Some(&adam)).unwrap();

        let mut fresh = ParamStore::new();
        fresh.add("w", Matrix::zeros(2, 2));
        fresh.add_buffer("bn.running_mean", Matrix::zeros(1, 2));
        let mut fresh_adam = Adam::new(AdamConfig::default());
        load_checkpoint(&path, &mut fresh, Some(&mut fresh_adam)).unwrap();
        assert_eq!(fresh.named(), store.named());
        assert_eq!(fresh_adam.state(&fresh), adam.state(&store));

        let mut wrong = ParamStore::new();
        wrong.add("w", Matrix::zeros(3, 2));
        assert!(load_checkpoint(&path, &mut wrong, None).is_err());
    }

    #[test]
    fn corrupt_checkpoints() {
        assert!(read_setm(&b"SETX\x01\0\0\0\0\0\0\0"[..]).is_err());
        assert!(read_setm(&b"SETM\x01\0\0\0\x01\0\0\0"[..]).is_err());
    }
}
