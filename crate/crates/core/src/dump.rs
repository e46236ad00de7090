//! Field dumps: CSV (one row per node: coordinates, value, interior flag) and
//! a binary form (length-prefixed JSON header + little-endian `f64` payload).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::DumpError;
use crate::grid::{build_grid, Domain, Grid, ScalarField};

const MAGIC: &str = "mongeampere-field";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DumpFormat {
    Csv,
    Binary,
}

impl DumpFormat {
    /// `.csv` means CSV; anything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Self::Csv,
            _ => Self::Binary,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    n: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    resolution: Vec<usize>,
    len: usize,
}

fn axis_names(n: usize) -> Vec<String> {
    (1..=n).flat_map(|j| [format!("x{j}"), format!("y{j}")]).collect()
}

pub fn write_csv<W: Write>(field: &ScalarField, out: W) -> Result<(), DumpError> {
    let grid = field.grid();
    let mut w = csv::Writer::from_writer(out);
    let mut header = axis_names(grid.n());
    header.push("value".into());
    header.push("interior".into());
    w.write_record(&header)?;
    let mut coords = vec![0.0; grid.dim()];
    let mut row: Vec<String> = Vec::with_capacity(grid.dim() + 2);
    for flat in 0..grid.len() {
        grid.coords_into(flat, &mut coords);
        row.clear();
        // Display for f64 prints the shortest string that parses back exactly
        row.extend(coords.iter().map(|c| c.to_string()));
        row.push(field.get(flat).to_string());
        row.push(if grid.is_interior(flat) { "1" } else { "0" }.into());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV dump; the grid is recovered from the extreme coordinates and
/// the number of distinct values per axis.
pub fn read_csv<R: Read>(input: R) -> Result<ScalarField, DumpError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let cols = header.len();
    if cols < 4 || (cols - 2) % 2 != 0 {
        return Err(DumpError::Malformed(format!("unexpected column count {cols}")));
    }
    let dim = cols - 2;
    let expected = axis_names(dim / 2);
    if header.iter().take(dim).ne(expected.iter().map(String::as_str))
        || &header[dim] != "value"
        || &header[dim + 1] != "interior"
    {
        return Err(DumpError::Malformed("header must be x1,y1,...,value,interior".into()));
    }
    let parse = |s: &str, line: usize| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| DumpError::Malformed(format!("row {line}: cannot parse '{s}'")))
    };
    let mut coords: Vec<Vec<f64>> = vec![Vec::new(); dim];
    let mut values = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != cols {
            return Err(DumpError::Malformed(format!("row {line}: {} columns", rec.len())));
        }
        for (a, c) in coords.iter_mut().enumerate() {
            c.push(parse(&rec[a], line)?);
        }
        values.push(parse(&rec[dim], line)?);
    }
    let mut lo = Vec::with_capacity(dim);
    let mut hi = Vec::with_capacity(dim);
    let mut resolution = Vec::with_capacity(dim);
    for c in &coords {
        let mut distinct = c.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        lo.push(*distinct.first().ok_or_else(|| DumpError::Malformed("no rows".into()))?);
        hi.push(*distinct.last().unwrap());
        resolution.push(distinct.len());
    }
    let grid = Arc::new(build_grid(&Domain::Box { lo, hi }, &resolution)?);
    if grid.len() != values.len() {
        return Err(DumpError::Malformed(format!(
            "{} rows do not fill a {:?} grid",
            values.len(),
            resolution
        )));
    }
    // rows may come in any order; place each by its coordinates
    let mut placed = vec![f64::NAN; grid.len()];
    let mut idx = vec![0usize; dim];
    for (row, &v) in values.iter().enumerate() {
        for a in 0..dim {
            idx[a] = node_index(&grid, a, coords[a][row])
                .ok_or_else(|| DumpError::Malformed(format!("row {row}: coordinate off the grid")))?;
        }
        placed[grid.flat_index(&idx)] = v;
    }
    if placed.iter().any(|v| v.is_nan()) {
        return Err(DumpError::Malformed("some nodes are missing".into()));
    }
    Ok(ScalarField::new(grid, placed)?)
}

fn node_index(grid: &Grid, axis: usize, x: f64) -> Option<usize> {
    let r = grid.resolution()[axis];
    let i = ((x - grid.lo()[axis]) / grid.spacing()[axis]).round();
    if !(0.0..r as f64).contains(&i) {
        return None;
    }
    let i = i as usize;
    let mut c = vec![0.0; grid.dim()];
    let mut idx = vec![0usize; grid.dim()];
    idx[axis] = i;
    grid.coords_into(grid.flat_index(&idx), &mut c);
    (c[axis] == x).then_some(i)
}

pub fn write_binary<W: Write>(field: &ScalarField, mut out: W) -> Result<(), DumpError> {
    let grid = field.grid();
    let header = Header {
        format: MAGIC.into(),
        version: 1,
        n: grid.n(),
        lo: grid.lo().to_vec(),
        hi: grid.hi().to_vec(),
        resolution: grid.resolution().to_vec(),
        len: grid.len(),
    };
    let json = serde_json::to_vec(&header)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for v in field.values() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_binary<R: Read>(mut input: R) -> Result<ScalarField, DumpError> {
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len);
    if len > 1 << 24 {
        return Err(DumpError::Malformed(format!("header length {len} is implausible")));
    }
    let mut json = vec![0u8; len as usize];
    input.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    if header.format != MAGIC || header.version != 1 {
        return Err(DumpError::Malformed(format!(
            "unsupported format {} v{}",
            header.format, header.version
        )));
    }
    let grid = Arc::new(build_grid(
        &Domain::Box {
            lo: header.lo,
            hi: header.hi,
        },
        &header.resolution,
    )?);
    if grid.len() != header.len || grid.n() != header.n {
        return Err(DumpError::Malformed("header is inconsistent".into()));
    }
    let mut bytes = vec![0u8; grid.len() * 8];
    input.read_exact(&mut bytes)?;
    let values = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
        .collect();
    Ok(ScalarField::new(grid, values)?)
}

pub fn save(field: &ScalarField, path: &Path, format: DumpFormat) -> Result<(), DumpError> {
    let out = BufWriter::new(File::create(path)?);
    match format {
        DumpFormat::Csv => write_csv(field, out),
        DumpFormat::Binary => write_binary(field, out),
    }
}

pub fn load(path: &Path) -> Result<ScalarField, DumpError> {
    let input = BufReader::new(File::open(path)?);
    match DumpFormat::from_path(path) {
        DumpFormat::Csv => read_csv(input),
        DumpFormat::Binary => read_binary(input),
    }
}

impl From<csv::Error> for DumpError {
    fn from(e: csv::Error) -> Self {
        DumpError::Malformed(e.to_string())
    }
}
