//! Binary `SETD` container and CSV export for collections of equally
//! shaped sets.
//!
//! Layout: magic `SETD`, then little-endian u32 version, count, N and F,
//! then `count * N * F` little-endian f32 values in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

pub const SETD_MAGIC: &[u8; 4] = b"SETD";
pub const SETD_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct SetDataset {
    pub elements: usize,
    pub features: usize,
    pub sets: Vec<Matrix>,
}

impl SetDataset {
    pub fn new(sets: Vec<Matrix>) -> Result<Self> {
        let (elements, features) = sets.first().map_or((0, 0), Matrix::shape);
        if let Some((i, m)) = sets.iter().enumerate().find(|(_, m)| m.shape() != (elements, features)) {
            return Err(Error::shape(
                "SetDataset",
                format!("set {i} is {:?}, expected ({elements}, {features})", m.shape()),
            ));
        }
        Ok(Self { elements, features, sets })
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
}

pub fn write_setd<W: Write>(mut w: W, data: &SetDataset) -> Result<()> {
    w.write_all(SETD_MAGIC)?;
    for (v, what) in [
        (SETD_VERSION as usize, "version"),
        (data.len(), "count"),
        (data.elements, "element count"),
        (data.features, "feature count"),
    ] {
        w.write_all(&to_u32(v, what)?.to_le_bytes())?;
    }
    for m in &data.sets {
        for &v in m.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_setd<R: Read>(mut r: R) -> Result<SetDataset> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::Format("truncated header".into()))?;
    if &magic != SETD_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut header = [0u32; 4];
    for h in &mut header {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(|_| Error::Format("truncated header".into()))?;
        *h = u32::from_le_bytes(b);
    }
    let [version, count, n, f] = header.map(|v| v as usize);
    if version != SETD_VERSION as usize {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let per_set = n
        .checked_mul(f)
        .ok_or_else(|| Error::Format("set size overflows".into()))?;
    let mut sets = Vec::with_capacity(count.min(1 << 20));
    let mut buf = vec![0u8; per_set * 4];
    for i in 0..count {
        r.read_exact(&mut buf)
            .map_err(|_| Error::Format(format!("truncated data in set {i}")))?;
        let values = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        sets.push(Matrix::from_vec(n, f, values)?);
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Format("trailing bytes after data".into()));
    }
    Ok(SetDataset { elements: n, features: f, sets })
}

pub fn save_setd(path: impl AsRef<Path>, data: &SetDataset) -> Result<()> {
    write_setd(std::io::BufWriter::new(std::fs::File::create(path)?), data)
}

pub fn load_setd(path: impl AsRef<Path>) -> Result<SetDataset> {
    read_setd(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// One line per element, comma-separated, with a blank line between sets.
pub fn write_csv<W: Write>(mut w: W, sets: &[Matrix]) -> Result<()> {
    for (i, m) in sets.iter().enumerate() {
        if i > 0 {
            writeln!(w)?;
        }
        for row in m.row_iter() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
    }
    w.flush()?;
    Ok(())
}
