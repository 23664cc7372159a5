//! Binary tensor dumps and checkpoints.
//!
//! Every dump entry is one JSON header line followed by a raw little-endian
//! row-major payload:
//!
//! ```text
//! {"shape":[1024,9],"dtype":"i32le","process":"<sha256>","seed":42}\n<payload bytes>
//! ```
//!
//! Batch and target dumps hold a single entry; checkpoints hold one entry per
//! named tensor.  Payloads are written with explicit little-endian conversion
//! so files are bit-exact across platforms.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::seqmodel::{ParamSet, Scalar};
use crate::{Error, Result};

/// Payload element type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
    I32,
}

impl Dtype {
    pub fn tag(self) -> &'static str {
        match self {
            Dtype::F32 => "f32le",
            Dtype::F64 => "f64le",
            Dtype::I32 => "i32le",
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 | Dtype::I32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "f32le" => Ok(Dtype::F32),
            "f64le" => Ok(Dtype::F64),
            "i32le" => Ok(Dtype::I32),
            other => Err(Error::Format(format!("unknown dtype {other}"))),
        }
    }
}

/// The JSON header line preceding each payload.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DumpHeader {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub shape: Vec<usize>,
    pub dtype: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub process: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl DumpHeader {
    pub fn elements(&self) -> usize {
        self.shape.iter().product()
    }
}

fn write_header<W: Write>(w: &mut W, header: &DumpHeader) -> Result<()> {
    let line = serde_json::to_string(header).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")?;
    Ok(())
}

fn read_header<R: Read>(r: &mut R) -> Result<Option<DumpHeader>> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        match r.read(&mut byte)? {
            0 => {
                if line.is_empty() {
                    return Ok(None); // clean end of file
                }
                return Err(Error::Format("truncated header".into()));
            }
            _ => {
                if byte[0] == b'\n' {
                    break;
                }
                line.push(byte[0]);
            }
        }
    }
    let header: DumpHeader =
        serde_json::from_slice(&line).map_err(|e| Error::Format(e.to_string()))?;
    Ok(Some(header))
}

/// One entry of a dump file: header plus payload decoded to f64
/// (integer payloads are exposed separately).
#[derive(Debug, Clone)]
pub struct Entry {
    pub header: DumpHeader,
    pub floats: Vec<f64>,
    pub ints: Vec<i32>,
}

pub fn write_entry_f32<W: Write>(w: &mut W, header: &DumpHeader, data: &[f32]) -> Result<()> {
    check_len(header, data.len())?;
    write_header(w, header)?;
    let mut buf = Vec::with_capacity(data.len() * 4);
    for &v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn write_entry_f64<W: Write>(w: &mut W, header: &DumpHeader, data: &[f64]) -> Result<()> {
    check_len(header, data.len())?;
    write_header(w, header)?;
    let mut buf = Vec::with_capacity(data.len() * 8);
    for &v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn write_entry_i32<W: Write>(w: &mut W, header: &DumpHeader, data: &[i32]) -> Result<()> {
    check_len(header, data.len())?;
    write_header(w, header)?;
    let mut buf = Vec::with_capacity(data.len() * 4);
    for &v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn check_len(header: &DumpHeader, len: usize) -> Result<()> {
    if header.elements() != len {
        return Err(Error::Format(format!(
            "payload has {len} elements, shape {:?} wants {}",
            header.shape,
            header.elements()
        )));
    }
    Ok(())
}

/// Read every entry of a dump file.
pub fn read_entries(path: &Path) -> Result<Vec<Entry>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    while let Some(header) = read_header(&mut r)? {
        let dtype = Dtype::from_tag(&header.dtype)?;
        let n = header.elements();
        let mut payload = vec![0u8; n * dtype.size()];
        r.read_exact(&mut payload)?;
        let mut floats = Vec::new();
        let mut ints = Vec::new();
        match dtype {
            Dtype::F32 => {
                floats.reserve(n);
                for c in payload.chunks_exact(4) {
                    floats.push(f32::from_le_bytes(c.try_into().unwrap()) as f64);
                }
            }
            Dtype::F64 => {
                floats.reserve(n);
                for c in payload.chunks_exact(8) {
                    floats.push(f64::from_le_bytes(c.try_into().unwrap()));
                }
            }
            Dtype::I32 => {
                ints.reserve(n);
                for c in payload.chunks_exact(4) {
                    ints.push(i32::from_le_bytes(c.try_into().unwrap()));
                }
            }
        }
        out.push(Entry {
            header,
            floats,
            ints,
        });
    }
    Ok(out)
}

/// Persist a parameter set as one named-tensor entry per spec.
pub fn save_params<F: Scalar>(path: &Path, params: &ParamSet<F>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for spec in params.specs() {
        let header = DumpHeader {
            name: Some(spec.name.clone()),
            shape: spec.shape.clone(),
            dtype: F::DTYPE.tag().to_string(),
            process: None,
            seed: None,
        };
        let slice = params.slice_of(&spec.name).expect("spec slice");
        match F::DTYPE {
            Dtype::F32 => {
                let data: Vec<f32> = slice.iter().map(|v| v.into_f64() as f32).collect();
                write_entry_f32(&mut w, &header, &data)?;
            }
            _ => {
                let data: Vec<f64> = slice.iter().map(|v| v.into_f64()).collect();
                write_entry_f64(&mut w, &header, &data)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Fill an existing parameter set from a checkpoint written by
/// [`save_params`].  Every tensor in the layout must be present with the
/// right shape.
pub fn load_params<F: Scalar>(path: &Path, params: &mut ParamSet<F>) -> Result<()> {
    let entries = read_entries(path)?;
    let mut seen = 0usize;
    for e in &entries {
        let name = e
            .header
            .name
            .as_deref()
            .ok_or_else(|| Error::Format("checkpoint entry without name".into()))?;
        params.load_tensor(name, &e.header.shape, &e.floats)?;
        seen += 1;
    }
    if seen != params.specs().len() {
        return Err(Error::Format(format!(
            "checkpoint has {seen} tensors, model wants {}",
            params.specs().len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entry_round_trip_mixed_dtypes() {
        let dir = std::env::temp_dir().join(format!("factorlab-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("mixed.bin");
        {
            let mut w = BufWriter::new(File::create(&path).unwrap());
            write_entry_i32(
                &mut w,
                &DumpHeader {
                    name: None,
                    shape: vec![2, 3],
                    dtype: "i32le".into(),
                    process: Some("abc".into()),
                    seed: Some(7),
                },
                &[1, 2, 3, 4, 5, 6],
            )
            .unwrap();
            write_entry_f32(
                &mut w,
                &DumpHeader {
                    name: Some("t".into()),
                    shape: vec![2],
                    dtype: "f32le".into(),
                    process: None,
                    seed: None,
                },
                &[0.5, -1.25],
            )
            .unwrap();
            w.flush().unwrap();
        }
        let entries = read_entries(&path).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].ints, vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(entries[0].header.seed, Some(7));
        assert_eq!(entries[1].floats, vec![0.5, -1.25]);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn header_shape_mismatch_is_rejected() {
        let mut buf = Vec::new();
        let bad = write_entry_f32(
            &mut buf,
            &DumpHeader {
                name: None,
                shape: vec![3],
                dtype: "f32le".into(),
                process: None,
                seed: None,
            },
            &[1.0, 2.0],
        );
        assert!(bad.is_err());
    }
}
