//! Binary dataset cache.
//!
//! ```text
//! magic    8 bytes "NCSSLDAT"
//! version  u32     1
//! header   u32 len + JSON {rows, width, names, layout, report}
//! labels   rows × u8
//! values   rows × width × f64, row-major
//! ```
//! All integers and floats are little endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::preprocess::{Dataset, PreprocessReport};
use crate::error::{Error, Result};
use crate::features::FeatureLayout;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"NCSSLDAT";
pub const CACHE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    rows: usize,
    width: usize,
    names: Vec<String>,
    layout: FeatureLayout,
    report: PreprocessReport,
}

pub fn write_cache(ds: &Dataset, path: &Path) -> Result<()> {
    let (rows, width) = ds.features.dims2()?;
    let header = serde_json::to_vec(&Header {
        rows,
        width,
        names: ds.names.clone(),
        layout: ds.layout.clone(),
        report: ds.report.clone(),
    })?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&ds.labels)?;
    for v in ds.features.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cache(path: &Path) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Data(format!("{} is not a dataset cache", path.display())));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != CACHE_VERSION {
        return Err(Error::Data(format!("unsupported cache version {version}")));
    }
    r.read_exact(&mut b4)?;
    let mut header = vec![0u8; u32::from_le_bytes(b4) as usize];
    r.read_exact(&mut header)?;
    let h: Header = serde_json::from_slice(&header)?;
    let mut labels = vec![0u8; h.rows];
    r.read_exact(&mut labels)?;
    let mut bytes = vec![0u8; h.rows * h.width * 8];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    h.layout.validate()?;
    Ok(Dataset {
        features: Tensor::new(vec![h.rows, h.width], data)?,
        labels,
        layout: h.layout,
        names: h.names,
        report: h.report,
    })
}
