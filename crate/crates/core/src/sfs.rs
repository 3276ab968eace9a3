//! Shape-from-shading ingestion: image intensity to the eikonal right-hand
//! side `h = 1/I² - 1`.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A row-major grid of reals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(Error::GridMismatch(format!("{rows} x {cols} grid cannot hold {} values", values.len())));
        }
        Ok(Grid { rows, cols, values })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    /// Plain comma-separated rows, no header.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        for r in self.values.chunks(self.cols) {
            wr.write_record(r.iter().map(|v| v.to_string()))?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ingested {
    pub h: Grid,
    /// Number of pixels with `I > 1` that were clipped to `h = 0`.
    pub clipped: usize,
    pub warnings: Vec<String>,
}

/// `h = 1/I² - 1` entrywise. Pixels with `I ≤ 0` (or non-finite) are an
/// error; `I > 1` is clipped to `h = 0` with a warning.
pub fn intensity_to_h(intensity: &Grid) -> Result<Ingested> {
    let mut clipped = 0;
    let mut first_clip = None;
    let mut values = Vec::with_capacity(intensity.values.len());
    for (k, &i) in intensity.values.iter().enumerate() {
        let (row, col) = (k / intensity.cols, k % intensity.cols);
        if !(i > 0.0) || !i.is_finite() {
            return Err(Error::Intensity { row, col, value: i });
        }
        if i > 1.0 {
            clipped += 1;
            first_clip.get_or_insert((row, col, i));
            values.push(0.0);
        } else {
            values.push(1.0 / (i * i) - 1.0);
        }
    }
    let warnings = first_clip
        .map(|(r, c, v)| format!("{clipped} pixel(s) with intensity above 1 clipped to h = 0, first at ({r}, {c}) with I = {v}"))
        .into_iter()
        .collect();
    Ok(Ingested { h: Grid::new(intensity.rows, intensity.cols, values)?, clipped, warnings })
}

/// Reads a plain (`P2`) PGM and scales it by its maxval to `[0, 1]`.
pub fn read_pgm<R: Read>(mut r: R) -> Result<Grid> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let mut tokens = text.lines().map(|l| l.split('#').next().unwrap_or("")).flat_map(str::split_whitespace);
    let bad = |m: &str| Error::Validation(format!("PGM: {m}"));
    if tokens.next() != Some("P2") {
        return Err(bad("expected plain PGM magic 'P2'"));
    }
    let mut header = [0usize; 3];
    for (slot, name) in header.iter_mut().zip(["width", "height", "maxval"]) {
        *slot = tokens.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad(&format!("missing or bad {name}")))?;
    }
    let [cols, rows, maxval] = header;
    if maxval == 0 || maxval > 65535 {
        return Err(bad("maxval must be in 1..=65535"));
    }
    let values = tokens
        .map(|t| t.parse::<u32>().map(|v| v as f64 / maxval as f64).map_err(|_| bad(&format!("bad sample '{t}'"))))
        .collect::<Result<Vec<_>>>()?;
    if values.len() != rows * cols {
        return Err(bad(&format!("expected {} samples, found {}", rows * cols, values.len())));
    }
    Grid::new(rows, cols, values)
}

/// Reads a headerless CSV grid of intensities (rows of equal length).
pub fn read_csv_grid<R: BufRead>(r: R) -> Result<Grid> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(r);
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for rec in rd.records() {
        let rec = rec?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if *cols.get_or_insert(rec.len()) != rec.len() {
            return Err(Error::GridMismatch(format!("row {rows} has {} entries, expected {}", rec.len(), cols.unwrap())));
        }
        for (c, f) in rec.iter().enumerate() {
            values.push(f.parse::<f64>().map_err(|_| Error::Validation(format!("CSV grid: bad number '{f}' at ({rows}, {c})")))?);
        }
        rows += 1;
    }
    Grid::new(rows, cols.unwrap_or(0), values)
}

/// Reads an intensity grid, choosing the format by extension (`.pgm` or CSV).
pub fn read_intensity(path: &Path) -> Result<Grid> {
    let f = std::fs::File::open(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("pgm") => read_pgm(f),
        _ => read_csv_grid(std::io::BufReader::new(f)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_examples() {
        let g = Grid::new(1, 3, vec![1.0, 1.0 / 2f64.sqrt(), 0.5]).unwrap();
        let out = intensity_to_h(&g).unwrap();
        assert_eq!(out.h.values[0], 0.0);
        assert!((out.h.values[1] - 1.0).abs() < 1e-15);
        assert_eq!(out.h.values[2], 3.0);
        assert_eq!(out.clipped, 0);
    }

    #[test]
    fn non_positive_pixel_is_named() {
        let g = Grid::new(2, 2, vec![0.5, 0.5, 0.5, 0.0]).unwrap();
        match intensity_to_h(&g) {
            Err(Error::Intensity { row: 1, col: 1, value }) => assert_eq!(value, 0.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bright_pixels_clip() {
        let g = Grid::new(1, 2, vec![1.5, 0.5]).unwrap();
        let out = intensity_to_h(&g).unwrap();
        assert_eq!(out.h.values, vec![0.0, 3.0]);
        assert_eq!(out.clipped, 1);
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn pgm_with_comments() {
        let src = "P2\n# a comment\n3 2\n4\n4 2 1\n# another\n4 4 2\n";
        let g = read_pgm(src.as_bytes()).unwrap();
        assert_eq!((g.rows, g.cols), (2, 3));
        assert_eq!(g.values, vec![1.0, 0.5, 0.25, 1.0, 1.0, 0.5]);
        assert!(read_pgm("P5\n1 1\n255\n0".as_bytes()).is_err());
        assert!(read_pgm("P2\n2 2\n255\n1 2 3".as_bytes()).is_err());
    }

    #[test]
    fn csv_grid() {
        let g = read_csv_grid("1, 0.5\n0.25,1\n".as_bytes()).unwrap();
        assert_eq!((g.rows, g.cols), (2, 2));
        assert!(read_csv_grid("1,2\n3\n".as_bytes()).is_err());
    }
}
