//! File formats.
//!
//! * Cubes: `<name>.raw` holds little-endian `f64` values in band-sequential
//!   order; `<name>.hdr.json` holds the extents and optional wavelengths.
//! * Endmember libraries: CSV, one column per endmember, one row per band,
//!   with a header row of names.
//! * Maps: `abundance_<k>.pgm/.csv` (k from 1), `pmap.pgm/.csv`, `phist.csv`.
//!   Grid CSVs have one line per image row and no header.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsi::{AbundanceMap, EndmemberMatrix, HsiCube, ProbabilityMap};

pub const HISTOGRAM_BINS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeHeader {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub dtype: String,
    pub byte_order: String,
    pub interleave: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelengths: Option<Vec<f64>>,
    /// Free-form provenance (seed, config hash, ...).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

/// `(raw, header)` paths for a cube given either the stem or one of the two
/// file names.
pub fn cube_paths(path: &Path) -> (PathBuf, PathBuf) {
    let s = path.to_string_lossy();
    let stem = s
        .strip_suffix(".hdr.json")
        .or_else(|| s.strip_suffix(".raw"))
        .unwrap_or(&s)
        .to_string();
    (PathBuf::from(format!("{stem}.raw")), PathBuf::from(format!("{stem}.hdr.json")))
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    create_parent(path)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_cube(cube: &HsiCube, path: &Path) -> Result<()> {
    write_cube_with_meta(cube, path, None)
}

pub fn write_cube_with_meta(cube: &HsiCube, path: &Path, meta: Option<serde_json::Value>) -> Result<()> {
    let (raw, hdr) = cube_paths(path);
    let header = CubeHeader {
        height: cube.height(),
        width: cube.width(),
        bands: cube.bands(),
        dtype: "f64".into(),
        byte_order: "little".into(),
        interleave: "bsq".into(),
        wavelengths: cube.wavelengths().map(<[f64]>::to_vec),
        meta,
    };
    let n = cube.pixels();
    let mut bytes = Vec::with_capacity(n * cube.bands() * 8);
    for b in 0..cube.bands() {
        for i in 0..n {
            bytes.extend_from_slice(&cube.pixel(i)[b].to_le_bytes());
        }
    }
    write_file(&raw, &bytes)?;
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    write_file(&hdr, text.as_bytes())
}

pub fn read_cube_header(path: &Path) -> Result<CubeHeader> {
    let (_, hdr) = cube_paths(path);
    let text = fs::read_to_string(&hdr).map_err(|e| Error::io(&hdr, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&hdr, e.to_string()))
}

pub fn read_cube(path: &Path) -> Result<HsiCube> {
    let (raw, hdr) = cube_paths(path);
    let header = read_cube_header(path)?;
    if header.dtype != "f64" {
        return Err(Error::format(&hdr, format!("unknown dtype {:?}", header.dtype)));
    }
    if header.byte_order != "little" {
        return Err(Error::format(&hdr, format!("unsupported byte order {:?}", header.byte_order)));
    }
    if header.interleave != "bsq" {
        return Err(Error::format(&hdr, format!("unsupported interleave {:?}", header.interleave)));
    }
    let (h, w, b) = (header.height, header.width, header.bands);
    if h == 0 || w == 0 || b == 0 {
        return Err(Error::format(&hdr, format!("extents must be positive, got {h}x{w}x{b}")));
    }
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    let n = h * w;
    if bytes.len() != n * b * 8 {
        return Err(Error::format(
            &raw,
            format!("payload has {} bytes, header implies {}", bytes.len(), n * b * 8),
        ));
    }
    let mut data = vec![0.0; n * b];
    for (k, chunk) in bytes.chunks_exact(8).enumerate() {
        let (band, i) = (k / n, k % n);
        data[i * b + band] = f64::from_le_bytes(chunk.try_into().unwrap());
    }
    let cube = HsiCube::new(h, w, b, data)?;
    match header.wavelengths {
        Some(wl) => cube.with_wavelengths(wl),
        None => Ok(cube),
    }
}

pub fn write_endmembers(e: &EndmemberMatrix, path: &Path) -> Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|err| csv_err(path, err))?;
    let names: Vec<String> = (1..=e.count()).map(|k| format!("endmember_{k}")).collect();
    w.write_record(&names).map_err(|err| csv_err(path, err))?;
    for b in 0..e.bands() {
        let row: Vec<String> = (0..e.count()).map(|j| e.get(b, j).to_string()).collect();
        w.write_record(&row).map_err(|err| csv_err(path, err))?;
    }
    w.flush().map_err(|err| Error::io(path, err))
}

fn csv_err(path: &Path, err: csv::Error) -> Error {
    Error::format(path, err.to_string())
}

pub fn read_endmembers(path: &Path) -> Result<EndmemberMatrix> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|err| csv_err(path, err))?;
    let count = r.headers().map_err(|err| csv_err(path, err))?.len();
    let mut data = Vec::new();
    let mut bands = 0;
    for (line, rec) in r.records().enumerate() {
        // csv rejects ragged rows itself
        let rec = rec.map_err(|err| csv_err(path, err))?;
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::format(path, format!("non-numeric cell {cell:?} at row {}, column {}", line + 2, j + 1))
            })?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(
                    "endmembers",
                    format!("value {v} at row {}, column {} outside [0, 1]", line + 2, j + 1),
                ));
            }
            data.push(v);
        }
        bands += 1;
    }
    EndmemberMatrix::new(bands, count, data)
}

fn grid_csv(values: &[f64], width: usize) -> String {
    let mut s = String::new();
    for row in values.chunks(width) {
        let line: Vec<String> = row.iter().map(f64::to_string).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

fn read_grid_csv(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|err| csv_err(path, err))?;
    let mut data = Vec::new();
    let mut rows = 0;
    let mut width = 0;
    for rec in r.records() {
        let rec = rec.map_err(|err| csv_err(path, err))?;
        width = rec.len();
        for cell in rec.iter() {
            data.push(
                cell.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::format(path, format!("non-numeric cell {cell:?}")))?,
            );
        }
        rows += 1;
    }
    Ok((rows, width, data))
}

/// 8-bit binary PGM; values are scaled by 255, rounded and clamped.
pub fn pgm_bytes(values: &[f64], width: usize, height: usize) -> Vec<u8> {
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(values.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    bytes
}

/// `(lower, upper, count)` per bin, [`HISTOGRAM_BINS`] uniform bins over
/// `[min, max]`. A constant map puts all mass in the first bin.
pub fn histogram(values: &[f64]) -> Vec<(f64, f64, usize)> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / HISTOGRAM_BINS as f64;
    let mut counts = vec![0usize; HISTOGRAM_BINS];
    for &v in values {
        let bin = if width > 0.0 {
            (((v - lo) / width) as usize).min(HISTOGRAM_BINS - 1)
        } else {
            0
        };
        counts[bin] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| (lo + k as f64 * width, lo + (k + 1) as f64 * width, c))
        .collect()
}

/// Write per-endmember abundance images and CSVs, the P map and its histogram.
pub fn write_maps(abundance: &AbundanceMap, p: &ProbabilityMap, dir: &Path) -> Result<()> {
    if abundance.height() != p.height() || abundance.width() != p.width() {
        return Err(Error::dim(
            "write_maps",
            format!(
                "abundance {}x{} vs P {}x{}",
                abundance.height(),
                abundance.width(),
                p.height(),
                p.width()
            ),
        ));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (h, w) = (abundance.height(), abundance.width());
    for k in 0..abundance.count() {
        let plane = abundance.plane(k);
        write_file(&dir.join(format!("abundance_{}.pgm", k + 1)), &pgm_bytes(&plane, w, h))?;
        write_file(&dir.join(format!("abundance_{}.csv", k + 1)), grid_csv(&plane, w).as_bytes())?;
    }
    write_file(&dir.join("pmap.pgm"), &pgm_bytes(p.data(), w, h))?;
    write_file(&dir.join("pmap.csv"), grid_csv(p.data(), w).as_bytes())?;
    let mut hist = String::from("bin_lower,bin_upper,count\n");
    for (lo, hi, c) in histogram(p.data()) {
        hist.push_str(&format!("{lo},{hi},{c}\n"));
    }
    write_file(&dir.join("phist.csv"), hist.as_bytes())
}

/// Read `abundance_1.csv, abundance_2.csv, ...` from `dir`. The map is
/// validated against the simplex.
pub fn read_abundance(dir: &Path) -> Result<AbundanceMap> {
    let mut planes = Vec::new();
    let mut shape = None;
    for k in 1.. {
        let path = dir.join(format!("abundance_{k}.csv"));
        if !path.exists() {
            break;
        }
        let (h, w, data) = read_grid_csv(&path)?;
        if *shape.get_or_insert((h, w)) != (h, w) {
            return Err(Error::format(&path, "plane shape differs from abundance_1.csv"));
        }
        planes.push(data);
    }
    let Some((h, w)) = shape else {
        return Err(Error::io(
            dir.join("abundance_1.csv"),
            std::io::Error::new(std::io::ErrorKind::NotFound, "no abundance planes"),
        ));
    };
    let r = planes.len();
    let mut data = vec![0.0; h * w * r];
    for (k, plane) in planes.iter().enumerate() {
        for (i, v) in plane.iter().enumerate() {
            data[i * r + k] = *v;
        }
    }
    AbundanceMap::new(h, w, r, data)
}

pub fn read_pmap(dir: &Path) -> Result<ProbabilityMap> {
    let (h, w, data) = read_grid_csv(&dir.join("pmap.csv"))?;
    ProbabilityMap::new(h, w, data)
}

/// Append CSV `rows` to `path`, writing `header` first if the file is new.
pub fn append_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    create_parent(path)?;
    let fresh = !path.exists();
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(header);
        text.push('\n');
    }
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
