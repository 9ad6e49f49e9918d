//! Cube and label-map file formats.
//!
//! Binary cube: a UTF-8 header line `HSCUBE v1 <rows> <cols> <bands>\n` followed by
//! `rows * cols * bands` little-endian `f32` values in (row, col, band) order.
//!
//! Binary label map: `HSLABL v1 <rows> <cols>\n` followed by `rows * cols`
//! little-endian `u16` values.
//!
//! CSV: one pixel per line, `row,col,label,v1,...,vB`. Every (row, col) pair of the
//! bounding grid must appear exactly once.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::data::{ClassId, DataError, LabelMap, SpectralCube};

const CUBE_MAGIC: &str = "HSCUBE";
const LABEL_MAGIC: &str = "HSLABL";
const VERSION: &str = "v1";
const MAX_HEADER: usize = 256;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("truncated data: expected {expected} values, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CubeFormat {
    Binary,
    Csv,
}

impl CubeFormat {
    /// Picks the format from a file extension, binary unless `.csv`.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => CubeFormat::Csv,
            _ => CubeFormat::Binary,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn read_header(reader: &mut impl BufRead, magic: &str, fields: usize) -> Result<Vec<usize>, IoError> {
    let mut line = Vec::new();
    reader
        .by_ref()
        .take(MAX_HEADER as u64)
        .read_until(b'\n', &mut line)
        .map_err(|e| IoError::Format(format!("unreadable header: {e}")))?;
    if line.last() != Some(&b'\n') {
        return Err(IoError::Format("header line is not newline-terminated".into()));
    }
    let text = std::str::from_utf8(&line[..line.len() - 1])
        .map_err(|_| IoError::Format("header is not valid UTF-8".into()))?;
    let mut parts = text.split_ascii_whitespace();
    if parts.next() != Some(magic) {
        return Err(IoError::Format(format!("expected '{magic}' header, got '{text}'")));
    }
    if parts.next() != Some(VERSION) {
        return Err(IoError::Format(format!("unsupported version in header '{text}'")));
    }
    let dims: Vec<usize> = parts
        .map(|p| {
            p.parse::<usize>()
                .map_err(|_| IoError::Format(format!("bad dimension '{p}' in header")))
        })
        .collect::<Result<_, _>>()?;
    if dims.len() != fields || dims.contains(&0) {
        return Err(IoError::Format(format!(
            "header '{text}' must carry {fields} positive dimensions"
        )));
    }
    Ok(dims)
}

fn read_exact_values(reader: &mut impl Read, count: usize, width: usize) -> Result<Vec<u8>, IoError> {
    let want = count * width;
    let mut buf = Vec::with_capacity(want);
    reader
        .take(want as u64 + 1)
        .read_to_end(&mut buf)
        .map_err(|e| IoError::Format(format!("unreadable payload: {e}")))?;
    if buf.len() != want {
        return Err(IoError::Truncated {
            expected: count,
            found: buf.len() / width,
        });
    }
    Ok(buf)
}

pub fn read_cube_binary(reader: impl Read) -> Result<SpectralCube, IoError> {
    let mut reader = BufReader::new(reader);
    let dims = read_header(&mut reader, CUBE_MAGIC, 3)?;
    let (rows, cols, bands) = (dims[0], dims[1], dims[2]);
    let buf = read_exact_values(&mut reader, rows * cols * bands, 4)?;
    let values = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(SpectralCube::new(rows, cols, bands, values)?)
}

pub fn write_cube_binary(cube: &SpectralCube, writer: impl Write) -> std::io::Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "{CUBE_MAGIC} {VERSION} {} {} {}", cube.rows(), cube.cols(), cube.bands())?;
    for v in cube.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

pub fn read_labels_binary(reader: impl Read) -> Result<LabelMap, IoError> {
    let mut reader = BufReader::new(reader);
    let dims = read_header(&mut reader, LABEL_MAGIC, 2)?;
    let (rows, cols) = (dims[0], dims[1]);
    let buf = read_exact_values(&mut reader, rows * cols, 2)?;
    let labels = buf
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    Ok(LabelMap::new(rows, cols, labels)?)
}

pub fn write_labels_binary(labels: &LabelMap, writer: impl Write) -> std::io::Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "{LABEL_MAGIC} {VERSION} {} {}", labels.rows(), labels.cols())?;
    for l in labels.labels() {
        w.write_all(&l.to_le_bytes())?;
    }
    w.flush()
}

/// Parses the CSV pixel format into a cube and its label map.
pub fn read_csv(reader: impl Read) -> Result<(SpectralCube, LabelMap), IoError> {
    let reader = BufReader::new(reader);
    let mut pixels: Vec<(usize, usize, ClassId, Vec<f32>)> = Vec::new();
    let mut bands = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| IoError::Format(format!("line {}: {e}", lineno + 1)))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 4 {
            return Err(IoError::Format(format!(
                "line {}: expected row,col,label and at least one band",
                lineno + 1
            )));
        }
        let parse_usize = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| IoError::Format(format!("line {}: bad integer '{s}'", lineno + 1)))
        };
        let row = parse_usize(fields[0])?;
        let col = parse_usize(fields[1])?;
        let label = fields[2]
            .parse::<ClassId>()
            .map_err(|_| IoError::Format(format!("line {}: bad label '{}'", lineno + 1, fields[2])))?;
        let values = fields[3..]
            .iter()
            .map(|s| {
                s.parse::<f32>()
                    .map_err(|_| IoError::Format(format!("line {}: bad value '{s}'", lineno + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        match bands {
            None => bands = Some(values.len()),
            Some(b) if b != values.len() => {
                return Err(IoError::Truncated {
                    expected: b,
                    found: values.len(),
                })
            }
            _ => {}
        }
        pixels.push((row, col, label, values));
    }
    let bands = bands.ok_or_else(|| IoError::Format("no pixels in CSV".into()))?;
    let rows = pixels.iter().map(|p| p.0).max().unwrap_or(0) + 1;
    let cols = pixels.iter().map(|p| p.1).max().unwrap_or(0) + 1;
    if pixels.len() != rows * cols {
        return Err(IoError::Truncated {
            expected: rows * cols,
            found: pixels.len(),
        });
    }
    let mut values = vec![0f32; rows * cols * bands];
    let mut labels = vec![0 as ClassId; rows * cols];
    let mut seen = vec![false; rows * cols];
    for (row, col, label, v) in pixels {
        let p = row * cols + col;
        if std::mem::replace(&mut seen[p], true) {
            return Err(IoError::Format(format!("pixel ({row},{col}) appears twice")));
        }
        labels[p] = label;
        values[p * bands..(p + 1) * bands].copy_from_slice(&v);
    }
    Ok((
        SpectralCube::new(rows, cols, bands, values)?,
        LabelMap::new(rows, cols, labels)?,
    ))
}

pub fn write_csv(cube: &SpectralCube, labels: &LabelMap, writer: impl Write) -> Result<(), IoError> {
    if cube.rows() != labels.rows() || cube.cols() != labels.cols() {
        return Err(DataError::DimensionMismatch("cube and label map differ in size".into()).into());
    }
    let mut w = BufWriter::new(writer);
    let wrap = |e: std::io::Error| IoError::Format(e.to_string());
    for row in 0..cube.rows() {
        for col in 0..cube.cols() {
            write!(w, "{row},{col},{}", labels.get(row, col)).map_err(wrap)?;
            for v in cube.pixel(row, col) {
                // `{}` on f32 prints the shortest string that round-trips.
                write!(w, ",{v}").map_err(wrap)?;
            }
            writeln!(w).map_err(wrap)?;
        }
    }
    w.flush().map_err(wrap)
}

pub fn load_cube(path: &Path, format: CubeFormat) -> Result<SpectralCube, IoError> {
    let file = File::open(path).map_err(io_err(path))?;
    match format {
        CubeFormat::Binary => read_cube_binary(file),
        CubeFormat::Csv => read_csv(file).map(|(cube, _)| cube),
    }
}

pub fn save_cube(cube: &SpectralCube, path: &Path) -> Result<(), IoError> {
    let file = File::create(path).map_err(io_err(path))?;
    write_cube_binary(cube, file).map_err(io_err(path))
}

pub fn load_labels(path: &Path) -> Result<LabelMap, IoError> {
    let file = File::open(path).map_err(io_err(path))?;
    read_labels_binary(file)
}

pub fn save_labels(labels: &LabelMap, path: &Path) -> Result<(), IoError> {
    let file = File::create(path).map_err(io_err(path))?;
    write_labels_binary(labels, file).map_err(io_err(path))
}

pub fn load_csv(path: &Path) -> Result<(SpectralCube, LabelMap), IoError> {
    let file = File::open(path).map_err(io_err(path))?;
    read_csv(file)
}

pub fn save_csv(cube: &SpectralCube, labels: &LabelMap, path: &Path) -> Result<(), IoError> {
    let file = File::create(path).map_err(io_err(path))?;
    write_csv(cube, labels, file)
}
