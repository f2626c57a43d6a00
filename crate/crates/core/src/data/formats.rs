//! File formats: the `SCD1` binary dataset format, binary PGM images and numeric CSV.
//!
//! `SCD1` layout: magic `SCD1`, then little-endian `u32` version (1), `u64` N, `u64` D, and
//! `N * D` `f32` values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{DataSource, Dataset};

pub const SCD1_MAGIC: &[u8; 4] = b"SCD1";
pub const SCD1_VERSION: u32 = 1;

pub fn write_scd1(path: &Path, data: &Dataset) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    write(SCD1_MAGIC)?;
    write(&SCD1_VERSION.to_le_bytes())?;
    write(&(data.n() as u64).to_le_bytes())?;
    write(&(data.d() as u64).to_le_bytes())?;
    for row in data.x.row_iter() {
        for v in row.iter() {
            write(&(*v as f32).to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scd1(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut header = [0u8; 24];
    r.read_exact(&mut header).map_err(|_| Error::format(path, "truncated SCD1 header"))?;
    if &header[..4] != SCD1_MAGIC {
        return Err(Error::format(path, "missing SCD1 magic bytes"));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes"));
    if version != SCD1_VERSION {
        return Err(Error::format(path, format!("unsupported SCD1 version {version}")));
    }
    let n = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes")) as usize;
    let d = u64::from_le_bytes(header[16..24].try_into().expect("8 bytes")) as usize;
    let len = n.checked_mul(d).and_then(|l| l.checked_mul(4)).ok_or_else(|| Error::format(path, "size overflow"))?;
    let mut payload = Vec::with_capacity(len);
    r.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
    if payload.len() != len {
        return Err(Error::format(path, format!("expected {len} payload bytes for {n}x{d}, found {}", payload.len())));
    }
    let vals: Vec<f64> = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
    Dataset::new(DMatrix::from_row_slice(n, d, &vals), DataSource::Imported, None)
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Reads an 8-bit binary PGM (`P5`) as values in `[0, 1]`.
pub fn read_pgm(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0;
    let mut token = || -> Option<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token().as_deref() != Some("P5") {
        return Err(Error::format(path, "not a binary PGM (P5)"));
    }
    let mut number = |what: &str| -> Result<usize> {
        token()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::format(path, format!("invalid PGM {what}")))
    };
    let (width, height, maxval) = (number("width")?, number("height")?, number("maxval")?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(path, format!("only 8-bit PGM is supported, maxval {maxval}")));
    }
    let start = pos + 1;
    let need = width * height;
    if bytes.len() < start + need {
        return Err(Error::format(path, "truncated PGM pixel data"));
    }
    let px = &bytes[start..start + need];
    Ok(DMatrix::from_fn(height, width, |y, x| px[y * width + x] as f64 / maxval as f64))
}

pub fn write_pgm(path: &Path, img: &DMatrix<u8>) -> Result<()> {
    let (h, w) = img.shape();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            out.push(img[(y, x)]);
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Tiles the columns of `w` as `rows x cols` images in row-major order, with 1-pixel
/// separators, each field min-max scaled to `0..=255` on its own.
pub fn dictionary_grid(w: &DMatrix<f64>, rows: usize, cols: usize) -> Result<DMatrix<u8>> {
    if rows * cols != w.nrows() {
        return Err(Error::Shape(format!("{}x{} fields do not match D={}", rows, cols, w.nrows())));
    }
    let h = w.ncols();
    let per_row = (h as f64).sqrt().ceil().max(1.0) as usize;
    let grid_rows = h.div_ceil(per_row);
    let height = grid_rows * (rows + 1) + 1;
    let width = per_row * (cols + 1) + 1;
    let mut img = DMatrix::from_element(height, width, 0u8);
    for (f, col) in w.column_iter().enumerate() {
        let (lo, hi) = (col.min(), col.max());
        let span = if hi > lo { hi - lo } else { 1.0 };
        let (gy, gx) = (f / per_row, f % per_row);
        for p in 0..rows * cols {
            let v = ((col[p] - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8;
            img[(1 + gy * (rows + 1) + p / cols, 1 + gx * (cols + 1) + p % cols)] = v;
        }
    }
    Ok(img)
}

/// Reads a numeric CSV matrix. A first row that does not parse as numbers is taken as a header.
pub fn read_csv_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(|s| s.parse::<f64>()).collect();
        match parsed {
            Ok(v) => rows.push(v),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::format(path, format!("row {}: {e}", i + 1))),
        }
    }
    let ncols = rows.first().map(|r| r.len()).ok_or_else(|| Error::format(path, "no numeric rows"))?;
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::format(path, format!("row {} has {} fields, expected {ncols}", i + 1, rows[i].len())));
    }
    let flat: Vec<f64> = rows.concat();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

/// Writes a matrix as CSV with a header row `c0,c1,...`.
pub fn write_csv_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let header: Vec<String> = (0..m.ncols()).map(|j| format!("c{j}")).collect();
    w.write_record(&header).map_err(|e| Error::format(path, e.to_string()))?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| format!("{v:e}"))).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// A dataset from CSV, one datapoint per row.
pub fn read_csv_dataset(path: &Path) -> Result<Dataset> {
    let x = read_csv_matrix(path)?;
    Dataset::new(x, DataSource::Imported, None).map_err(|e| Error::format(path, e.to_string()))
}

/// Reads a dataset, choosing the format from the extension (`.csv`, anything else `SCD1`).
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        read_csv_dataset(path)
    } else {
        read_scd1(path)
    }
}

/// Matrix as nested JSON rows.
pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Shape("matrix rows must be non-empty and of equal length".into()));
    }
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &rows.concat()))
}

/// Reads a dictionary (`D x H`) from CSV or from JSON nested rows.
pub fn read_dictionary(path: &Path) -> Result<DMatrix<f64>> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let rows: Vec<Vec<f64>> = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        rows_to_matrix(&rows).map_err(|e| Error::format(path, e.to_string()))
    } else {
        read_csv_matrix(path)
    }
}
