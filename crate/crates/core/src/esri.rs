//! ESRI ASCII grid serialization for density surfaces, plus the sidecar
//! metadata file carrying the georeferencing the `.asc` format cannot hold
//! (WGS84 origin, bandwidth, kernel, point count).
//!
//! Layout: `ncols`, `nrows`, `xllcorner`, `yllcorner`, `cellsize`,
//! `NODATA_value -9999`, then row-major values with the north row first.
//! Planar coordinates are anchored at the grid origin, so the corner is
//! always `(0, 0)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::density::{DensityGrid, GridSpec, Kernel};
use crate::error::{Error, Result};

pub const NODATA: f64 = -9999.0;

/// Renders the grid in ESRI ASCII form.
pub fn to_esri_ascii(grid: &DensityGrid) -> String {
    let spec = &grid.spec;
    let mut out = String::new();
    writeln!(out, "ncols {}", spec.nx).unwrap();
    writeln!(out, "nrows {}", spec.ny).unwrap();
    writeln!(out, "xllcorner 0").unwrap();
    writeln!(out, "yllcorner 0").unwrap();
    writeln!(out, "cellsize {}", spec.cell_size_m).unwrap();
    writeln!(out, "NODATA_value {NODATA}").unwrap();
    for row in (0..spec.ny).rev() {
        let mut line = String::new();
        for col in 0..spec.nx {
            if col > 0 {
                line.push(' ');
            }
            write!(line, "{}", grid.value(row, col)).unwrap();
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn write_esri_ascii(grid: &DensityGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_esri_ascii(grid)).map_err(|e| Error::io(path, e))
}

/// Renders the sidecar metadata: sorted `key=value` lines, including any
/// caller-provided extras (config echo).
pub fn to_sidecar(grid: &DensityGrid, extra: &BTreeMap<String, String>) -> String {
    let mut entries = extra.clone();
    let spec = &grid.spec;
    entries.insert("origin_lat".into(), format!("{}", spec.origin_lat));
    entries.insert("origin_lon".into(), format!("{}", spec.origin_lon));
    entries.insert("width_m".into(), format!("{}", spec.width_m));
    entries.insert("height_m".into(), format!("{}", spec.height_m));
    entries.insert("cell_size_m".into(), format!("{}", spec.cell_size_m));
    entries.insert("bandwidth_m".into(), format!("{}", grid.bandwidth_m));
    entries.insert("n_points".into(), format!("{}", grid.n_points));
    entries.insert("kernel".into(), grid.kernel.name().to_string());
    entries.insert("mass".into(), format!("{}", grid.mass()));

    let mut out = String::new();
    for (k, v) in &entries {
        writeln!(out, "{k}={v}").unwrap();
    }
    out
}

pub fn write_sidecar(
    grid: &DensityGrid,
    path: impl AsRef<Path>,
    extra: &BTreeMap<String, String>,
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_sidecar(grid, extra)).map_err(|e| Error::io(path, e))
}

fn parse_sidecar(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Schema(format!("sidecar line {}: expected key=value", lineno + 1))
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn sidecar_f64(map: &BTreeMap<String, String>, key: &str) -> Result<f64> {
    map.get(key)
        .ok_or_else(|| Error::Schema(format!("sidecar missing key {key:?}")))?
        .parse()
        .map_err(|_| Error::Schema(format!("sidecar key {key:?} is not a number")))
}

/// Reads a grid back from its `.asc` and sidecar files. NODATA cells map to
/// zero density. Round-trips written grids exactly: all floats are emitted
/// in shortest round-trip form.
pub fn read_esri_ascii(
    asc_path: impl AsRef<Path>,
    sidecar_path: impl AsRef<Path>,
) -> Result<DensityGrid> {
    let asc_path = asc_path.as_ref();
    let sidecar_path = sidecar_path.as_ref();
    let asc = std::fs::read_to_string(asc_path).map_err(|e| Error::io(asc_path, e))?;
    let meta_text =
        std::fs::read_to_string(sidecar_path).map_err(|e| Error::io(sidecar_path, e))?;
    let meta = parse_sidecar(&meta_text)?;

    let mut lines = asc.lines();
    let mut header = BTreeMap::new();
    let mut nodata = NODATA;
    let mut first_data_line: Option<&str> = None;
    for line in lines.by_ref() {
        let mut parts = line.split_whitespace();
        let (Some(key), Some(value)) = (parts.next(), parts.next()) else {
            continue;
        };
        let lower = key.to_ascii_lowercase();
        match lower.as_str() {
            "ncols" | "nrows" | "xllcorner" | "yllcorner" | "cellsize" => {
                let v: f64 = value.parse().map_err(|_| {
                    Error::Schema(format!("bad esri header value for {key}: {value:?}"))
                })?;
                header.insert(lower, v);
            }
            "nodata_value" => {
                nodata = value.parse().map_err(|_| {
                    Error::Schema(format!("bad NODATA_value: {value:?}"))
                })?;
            }
            _ => {
                first_data_line = Some(line);
                break;
            }
        }
    }

    let require = |k: &str| -> Result<f64> {
        header
            .get(k)
            .copied()
            .ok_or_else(|| Error::Schema(format!("esri header missing {k}")))
    };
    let nx = require("ncols")? as usize;
    let ny = require("nrows")? as usize;
    let cell_size = require("cellsize")?;

    let spec = GridSpec {
        origin_lat: sidecar_f64(&meta, "origin_lat")?,
        origin_lon: sidecar_f64(&meta, "origin_lon")?,
        width_m: sidecar_f64(&meta, "width_m")?,
        height_m: sidecar_f64(&meta, "height_m")?,
        cell_size_m: cell_size,
        nx,
        ny,
    };

    let mut values = vec![0.0f64; nx * ny];
    let data_lines = first_data_line.into_iter().chain(lines);
    let mut row_count = 0usize;
    for (i, line) in data_lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if i >= ny {
            return Err(Error::Schema(format!(
                "esri grid has more than {ny} data rows"
            )));
        }
        let row = ny - 1 - i; // north row first on disk
        let mut col = 0usize;
        for tok in line.split_whitespace() {
            if col >= nx {
                return Err(Error::Schema(format!(
                    "esri row {i} has more than {nx} values"
                )));
            }
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::Schema(format!("bad esri value {tok:?}")))?;
            values[row * nx + col] = if v == nodata { 0.0 } else { v };
            col += 1;
        }
        if col != nx {
            return Err(Error::Schema(format!(
                "esri row {i} has {col} values, expected {nx}"
            )));
        }
        row_count += 1;
    }
    if row_count != ny {
        return Err(Error::Schema(format!(
            "esri grid has {row_count} data rows, expected {ny}"
        )));
    }

    let kernel = meta
        .get("kernel")
        .map(|k| Kernel::from_name(k))
        .transpose()?
        .unwrap_or(Kernel::Gaussian);

    Ok(DensityGrid {
        spec,
        values,
        bandwidth_m: sidecar_f64(&meta, "bandwidth_m")?,
        n_points: sidecar_f64(&meta, "n_points")? as usize,
        kernel,
    })
}
