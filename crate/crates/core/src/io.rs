//! Raw little-endian `f64` arrays with JSON sidecars, plus CSV exports.
//!
//! An array stored under stem `p` lives in `p.bin` (no header) and `p.json`
//! (shape and metadata). Every write goes to a temporary sibling first and
//! is renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{FwiError, Result};
use crate::grid_wave::{Grid2D, Seismogram};

/// `stem.ext`, keeping any dots already in the stem.
pub fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| FwiError::Io(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = dir.join(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        FwiError::Io(format!("renaming into {}: {e}", path.display()))
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| FwiError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&s).map_err(|e| FwiError::Io(format!("{}: {e}", path.display())))
}

pub fn f64_to_le_bytes(data: &[f64]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn f64_from_le_bytes(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(FwiError::Io(format!("raw array of {} bytes is not a whole number of f64", bytes.len())));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect())
}

/// Writes `stem.bin` and `stem.json`; returns both paths.
pub fn write_raw<M: Serialize>(stem: &Path, data: &[f64], meta: &M) -> Result<(PathBuf, PathBuf)> {
    let (bin, json) = (with_ext(stem, "bin"), with_ext(stem, "json"));
    write_atomic(&bin, &f64_to_le_bytes(data))?;
    write_json(&json, meta)?;
    Ok((bin, json))
}

pub fn read_raw<M: DeserializeOwned>(stem: &Path) -> Result<(Vec<f64>, M)> {
    let bin = with_ext(stem, "bin");
    let bytes = fs::read(&bin).map_err(|e| FwiError::Io(format!("{}: {e}", bin.display())))?;
    Ok((f64_from_le_bytes(&bytes)?, read_json(&with_ext(stem, "json"))?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeismogramSidecar {
    /// `[n_src, n_rcv, nt]`, time fastest.
    pub shape: [usize; 3],
    pub dt: f64,
    pub zero_mean: bool,
    pub source_coords: Vec<(f64, f64)>,
    pub receiver_coords: Vec<(f64, f64)>,
}

pub fn write_seismogram(stem: &Path, s: &Seismogram) -> Result<(PathBuf, PathBuf)> {
    let meta = SeismogramSidecar {
        shape: s.shape(),
        dt: s.dt,
        zero_mean: s.zero_mean,
        source_coords: s.source_coords.clone(),
        receiver_coords: s.receiver_coords.clone(),
    };
    write_raw(stem, &s.data, &meta)
}

pub fn read_seismogram(stem: &Path) -> Result<Seismogram> {
    let (data, meta): (_, SeismogramSidecar) = read_raw(stem)?;
    let [n_src, n_rcv, nt] = meta.shape;
    let mut s = Seismogram::zeros(n_src, n_rcv, nt, meta.dt);
    s = s.with_data(data).map_err(|e| FwiError::Io(format!("{}: {e}", stem.display())))?;
    s.zero_mean = meta.zero_mean;
    s.source_coords = meta.source_coords;
    s.receiver_coords = meta.receiver_coords;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSidecar {
    pub grid: Grid2D,
    /// What the values are, e.g. `"velocity"` or `"latent"`.
    pub quantity: String,
    pub units: String,
}

pub fn write_field(stem: &Path, grid: &Grid2D, values: &[f64], quantity: &str, units: &str) -> Result<(PathBuf, PathBuf)> {
    if values.len() != grid.len() {
        return Err(FwiError::Shape(format!("field has {} values for a {} cell grid", values.len(), grid.len())));
    }
    let meta = FieldSidecar { grid: grid.clone(), quantity: quantity.into(), units: units.into() };
    write_raw(stem, values, &meta)
}

pub fn read_field(stem: &Path) -> Result<(Vec<f64>, FieldSidecar)> {
    let (v, meta): (Vec<f64>, FieldSidecar) = read_raw(stem)?;
    if v.len() != meta.grid.len() {
        return Err(FwiError::Io(format!("{}: {} values for a {} cell grid", stem.display(), v.len(), meta.grid.len())));
    }
    Ok((v, meta))
}

/// One row per time sample: `t` followed by one column per trace.
pub fn seismogram_csv(s: &Seismogram) -> String {
    let mut out = String::from("t");
    for src in 0..s.n_src {
        for r in 0..s.n_rcv {
            out.push_str(&format!(",s{src}r{r}"));
        }
    }
    out.push('\n');
    for n in 0..s.nt {
        out.push_str(&format!("{:.9e}", (n + 1) as f64 * s.dt));
        for tr in s.traces() {
            out.push_str(&format!(",{:.9e}", tr[n]));
        }
        out.push('\n');
    }
    out
}

/// `x,z,value` rows over the grid.
pub fn field_csv(grid: &Grid2D, columns: &[(&str, &[f64])]) -> Result<String> {
    for (name, c) in columns {
        if c.len() != grid.len() {
            return Err(FwiError::Shape(format!("column {name} has {} values for {} cells", c.len(), grid.len())));
        }
    }
    let mut out = String::from("x,z");
    for (name, _) in columns {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for iz in 0..grid.nz {
        for ix in 0..grid.nx {
            let (x, z) = grid.coords(ix, iz);
            out.push_str(&format!("{x:.6},{z:.6}"));
            let k = grid.index(ix, iz);
            for (_, c) in columns {
                out.push_str(&format!(",{:.9e}", c[k]));
            }
            out.push('\n');
        }
    }
    Ok(out)
}
