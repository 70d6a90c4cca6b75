//! Field dump format shared by all tools ("FYFD").
//!
//! Layout: magic bytes `FYFD`, format version as little-endian u32, a
//! length-prefixed UTF-8 JSON header
//! `{grid: {n, N}, bidegree: [p, q], name, dtype: "c128"|"f64",
//!   layout: "row-major multi-index-major"}`,
//! then the raw little-endian payload. Round trips are bit-exact.
//!
//! Form payloads store plain coefficients (the `sqrt(-1)` tag resolved), so
//! files are convention-free; loaded forms carry `i_pow = 0`.

use crate::error::{CoreError, Result};
use crate::field::{FormField, ScalarField};
use crate::grid::GridSpec;
use crate::C64;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

pub const MAGIC: &[u8; 4] = b"FYFD";
pub const VERSION: u32 = 1;
pub const LAYOUT: &str = "row-major multi-index-major";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct HeaderGrid {
    pub n: usize,
    #[serde(rename = "N")]
    pub points: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct DumpHeader {
    pub grid: HeaderGrid,
    pub bidegree: [usize; 2],
    pub name: String,
    pub dtype: String,
    pub layout: String,
}

fn write_header(w: &mut impl Write, header: &DumpHeader) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let json = serde_json::to_vec(header).expect("header serializes");
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    Ok(())
}

/// Write a real scalar field (dtype f64).
pub fn dump_scalar(w: &mut impl Write, name: &str, field: &ScalarField) -> Result<()> {
    let header = DumpHeader {
        grid: HeaderGrid {
            n: field.grid.n,
            points: field.grid.points_per_axis,
        },
        bidegree: [0, 0],
        name: name.to_string(),
        dtype: "f64".to_string(),
        layout: LAYOUT.to_string(),
    };
    write_header(w, &header)?;
    for v in &field.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Write a complex form field (dtype c128); the stored `sqrt(-1)` tag is
/// resolved into the payload.
pub fn dump_form(w: &mut impl Write, name: &str, field: &FormField) -> Result<()> {
    let header = DumpHeader {
        grid: HeaderGrid {
            n: field.grid.n,
            points: field.grid.points_per_axis,
        },
        bidegree: [field.p, field.q],
        name: name.to_string(),
        dtype: "c128".to_string(),
        layout: LAYOUT.to_string(),
    };
    write_header(w, &header)?;
    let plain = field.with_i_pow(0);
    for v in &plain.data {
        w.write_all(&v.re.to_le_bytes())?;
        w.write_all(&v.im.to_le_bytes())?;
    }
    Ok(())
}

#[derive(Debug)]
pub enum LoadedField {
    Scalar(ScalarField),
    Form(FormField),
}

pub struct Loaded {
    pub name: String,
    pub field: LoadedField,
}

/// Read one dumped field.
pub fn load(r: &mut impl Read) -> Result<Loaded> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CoreError::DumpFormat("bad magic".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(CoreError::DumpFormat(format!(
            "unsupported version {version}"
        )));
    }
    r.read_exact(&mut word)?;
    let hlen = u32::from_le_bytes(word) as usize;
    let mut hbuf = vec![0u8; hlen];
    r.read_exact(&mut hbuf)?;
    let header: DumpHeader = serde_json::from_slice(&hbuf)
        .map_err(|e| CoreError::DumpFormat(format!("header: {e}")))?;
    if header.layout != LAYOUT {
        return Err(CoreError::DumpFormat(format!(
            "unsupported layout {:?}",
            header.layout
        )));
    }
    let grid = GridSpec::new(header.grid.n, header.grid.points)?;
    let [p, q] = header.bidegree;
    match header.dtype.as_str() {
        "f64" => {
            if (p, q) != (0, 0) {
                return Err(CoreError::DumpFormat(
                    "f64 payloads must be (0,0) fields".into(),
                ));
            }
            let mut field = ScalarField::zeros(grid);
            let mut buf = [0u8; 8];
            for v in &mut field.data {
                r.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
            Ok(Loaded {
                name: header.name,
                field: LoadedField::Scalar(field),
            })
        }
        "c128" => {
            let mut field = FormField::zeros(grid, p, q, 0);
            let mut buf = [0u8; 8];
            for v in &mut field.data {
                r.read_exact(&mut buf)?;
                let re = f64::from_le_bytes(buf);
                r.read_exact(&mut buf)?;
                let im = f64::from_le_bytes(buf);
                *v = C64::new(re, im);
            }
            Ok(Loaded {
                name: header.name,
                field: LoadedField::Form(field),
            })
        }
        other => Err(CoreError::DumpFormat(format!("unknown dtype {other:?}"))),
    }
}

pub fn dump_scalar_bytes(name: &str, field: &ScalarField) -> Vec<u8> {
    let mut buf = Vec::new();
    dump_scalar(&mut buf, name, field).expect("in-memory write");
    buf
}

pub fn dump_form_bytes(name: &str, field: &FormField) -> Vec<u8> {
    let mut buf = Vec::new();
    dump_form(&mut buf, name, field).expect("in-memory write");
    buf
}
