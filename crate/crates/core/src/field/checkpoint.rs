//! Binary checkpoint: `NEFC` magic, format version, grid configuration, then
//! named little-endian `f32` tensors until end of file.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::real::Real;

use super::config::{FieldConfig, HashGridConfig, SH_FEATURES};
use super::{FieldError, FieldParameters, Layout};

const MAGIC: &[u8; 4] = b"NEFC";
pub const FORMAT_VERSION: u32 = 1;
const MAX_NAME_LEN: usize = 256;
const MAX_RANK: usize = 8;

fn put_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64(w: &mut impl Write, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn write_checkpoint<T: Real>(
    w: &mut impl Write,
    params: &FieldParameters<T>,
) -> Result<(), FieldError> {
    let grid = &params.config().grid;
    w.write_all(MAGIC)?;
    put_u32(w, FORMAT_VERSION)?;
    put_u32(w, grid.levels)?;
    put_u32(w, grid.base_resolution)?;
    put_f64(w, grid.growth_factor)?;
    put_u32(w, grid.table_size)?;
    put_u32(w, grid.features_per_entry)?;
    for v in grid.bbox_min.iter().chain(&grid.bbox_max) {
        put_f64(w, *v)?;
    }
    let data = params.as_slice();
    let mut buf = Vec::new();
    for t in &params.layout().tensors {
        put_u32(w, t.name.len() as u32)?;
        w.write_all(t.name.as_bytes())?;
        put_u32(w, t.dims.len() as u32)?;
        for d in &t.dims {
            put_u32(w, *d as u32)?;
        }
        buf.clear();
        for v in &data[t.range()] {
            buf.extend_from_slice(&v.as_f32().to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FieldError> {
        if self.bytes.len() - self.at < n {
            return Err(FieldError::Checkpoint(format!(
                "truncated at byte {}",
                self.at
            )));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FieldError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, FieldError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.at == self.bytes.len()
    }
}

struct RawTensor {
    name: String,
    dims: Vec<usize>,
    data: Vec<f32>,
}

pub fn read_checkpoint<T: Real>(r: &mut impl Read) -> Result<FieldParameters<T>, FieldError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor {
        bytes: &bytes,
        at: 0,
    };
    if c.take(4)? != MAGIC {
        return Err(FieldError::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(FieldError::Checkpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let grid = HashGridConfig {
        levels: c.u32()?,
        base_resolution: c.u32()?,
        growth_factor: c.f64()?,
        table_size: c.u32()?,
        features_per_entry: c.u32()?,
        bbox_min: [c.f64()?, c.f64()?, c.f64()?],
        bbox_max: [c.f64()?, c.f64()?, c.f64()?],
    };
    grid.validate()?;

    let mut tensors = Vec::new();
    while !c.done() {
        let name_len = c.u32()? as usize;
        if name_len > MAX_NAME_LEN {
            return Err(FieldError::Checkpoint(format!(
                "tensor name length {name_len}"
            )));
        }
        let name = String::from_utf8(c.take(name_len)?.to_vec())
            .map_err(|_| FieldError::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = c.u32()? as usize;
        if rank > MAX_RANK {
            return Err(FieldError::Checkpoint(format!(
                "tensor {name} has rank {rank}"
            )));
        }
        let dims = (0..rank)
            .map(|_| c.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let len = dims.iter().product::<usize>();
        let raw = c.take(
            len.checked_mul(4)
                .ok_or_else(|| FieldError::Checkpoint("tensor too large".into()))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.push(RawTensor { name, dims, data });
    }

    let dims_of = |name: &str| {
        tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| t.dims.clone())
            .ok_or_else(|| FieldError::Checkpoint(format!("missing tensor {name}")))
    };
    let d0 = dims_of("density.w0")?;
    let d1 = dims_of("density.w1")?;
    let e0 = dims_of("edit.w0")?;
    if d0.len() != 2 || d1.len() != 2 || e0.len() != 2 || d1[0] < 2 {
        return Err(FieldError::Checkpoint("unexpected MLP tensor ranks".into()));
    }
    let geo_features = d1[0] - 1;
    let config = FieldConfig {
        grid,
        hidden_width: d0[0],
        geo_features,
        edit_view_dependent: e0[1] == geo_features + SH_FEATURES,
    };
    config.validate()?;
    let layout = Layout::new(&config);
    if layout.tensors.len() != tensors.len() {
        return Err(FieldError::Checkpoint(format!(
            "expected {} tensors, found {}",
            layout.tensors.len(),
            tensors.len()
        )));
    }
    let mut data = Vec::with_capacity(layout.total);
    for (want, got) in layout.tensors.iter().zip(&tensors) {
        if want.name != got.name || want.dims != got.dims {
            return Err(FieldError::Checkpoint(format!(
                "tensor {} {:?} does not match expected {} {:?}",
                got.name, got.dims, want.name, want.dims
            )));
        }
        data.extend(got.data.iter().map(|v| T::lit(*v as f64)));
    }
    FieldParameters::from_data(config, data)
}

/// Writes atomically: the file appears complete or not at all.
pub fn save_checkpoint<T: Real>(
    path: &Path,
    params: &FieldParameters<T>,
) -> Result<(), FieldError> {
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut w = io::BufWriter::new(fs::File::create(&tmp)?);
        write_checkpoint(&mut w, params)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<FieldParameters<T>, FieldError> {
    let mut r = io::BufReader::new(fs::File::open(path)?);
    read_checkpoint(&mut r)
}
