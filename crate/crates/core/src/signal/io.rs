//! PGM and CSV readers and writers for [`Grid2`].
//!
//! PGM images map to a centered grid with unit spacing and values in `[0, 1]`.
//! The CSV layout is a header line `H,W,origin_x,origin_y,spacing` with the
//! corresponding numbers on the next line, followed by `H` rows of `W` values.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::grid::{Grid2, GridGeometry};
use crate::error::{Error, Result};

const CSV_HEADER: &str = "H,W,origin_x,origin_y,spacing";

/// Plain (P2) or raw (P5) PGM.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgmFormat {
    Ascii,
    Binary,
}

struct Tokens<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn next(&mut self) -> Result<&'a str> {
        loop {
            while self.pos < self.data.len() && self.data[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.data.len() && self.data[self.pos] == b'#' {
                while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.data.len() && !self.data[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Parse("unexpected end of PGM data".into()));
        }
        std::str::from_utf8(&self.data[start..self.pos]).map_err(|_| Error::Parse("non-ASCII PGM header".into()))
    }

    fn number(&mut self) -> Result<usize> {
        let t = self.next()?;
        t.parse().map_err(|_| Error::Parse(format!("bad PGM integer {t:?}")))
    }
}

pub fn parse_pgm(data: &[u8]) -> Result<Grid2> {
    let mut tok = Tokens { data, pos: 0 };
    let magic = tok.next()?;
    let binary = match magic {
        "P2" => false,
        "P5" => true,
        other => return Err(Error::Parse(format!("unsupported PGM magic {other:?}"))),
    };
    let width = tok.number()?;
    let height = tok.number()?;
    let maxval = tok.number()?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Parse(format!("PGM maxval {maxval} out of range")));
    }
    let geom = GridGeometry::centered(height, width, 1.0)?;
    let n = geom.len();
    let mut values = Vec::with_capacity(n);
    if binary {
        // Exactly one whitespace byte separates the header from the raster.
        let start = tok.pos + 1;
        let bytes = if maxval < 256 { 1 } else { 2 };
        let raster = data
            .get(start..start + n * bytes)
            .ok_or_else(|| Error::Parse("truncated P5 raster".into()))?;
        for i in 0..n {
            let v = if bytes == 1 {
                raster[i] as usize
            } else {
                ((raster[2 * i] as usize) << 8) | raster[2 * i + 1] as usize
            };
            values.push(v as f64 / maxval as f64);
        }
    } else {
        for _ in 0..n {
            values.push(tok.number()? as f64 / maxval as f64);
        }
    }
    if values.iter().any(|&v| v > 1.0) {
        return Err(Error::Parse("PGM sample exceeds maxval".into()));
    }
    Grid2::new(geom, values)
}

pub fn read_pgm(path: &Path) -> Result<Grid2> {
    parse_pgm(&fs::read(path)?)
}

/// Quantizes to 8 bits. Values already in `[0, 1]` are written as they are,
/// anything else is first rescaled linearly from `[min, max]` onto `[0, 1]`.
pub fn encode_pgm(f: &Grid2, format: PgmFormat) -> Vec<u8> {
    let vals = f.values();
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (offset, scale) = if lo >= 0.0 && hi <= 1.0 {
        (0.0, 1.0)
    } else if hi > lo {
        log::warn!("rescaling values from [{lo}, {hi}] to [0, 1] for PGM output");
        (lo, 1.0 / (hi - lo))
    } else {
        (lo, 0.0)
    };
    let quant: Vec<u8> = vals.iter().map(|&v| (((v - offset) * scale).clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let mut out = Vec::new();
    match format {
        PgmFormat::Ascii => {
            out.extend_from_slice(format!("P2\n{} {}\n255\n", f.width(), f.height()).as_bytes());
            for row in quant.chunks(f.width()) {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                out.extend_from_slice(line.join(" ").as_bytes());
                out.push(b'\n');
            }
        }
        PgmFormat::Binary => {
            out.extend_from_slice(format!("P5\n{} {}\n255\n", f.width(), f.height()).as_bytes());
            out.extend_from_slice(&quant);
        }
    }
    out
}

pub fn write_pgm(f: &Grid2, path: &Path, format: PgmFormat) -> Result<()> {
    fs::write(path, encode_pgm(f, format))?;
    Ok(())
}

pub fn encode_csv(f: &Grid2) -> String {
    let g = f.geometry();
    let mut s = String::new();
    s.push_str(CSV_HEADER);
    s.push('\n');
    s.push_str(&format!("{},{},{:?},{:?},{:?}\n", g.height, g.width, g.origin[0], g.origin[1], g.spacing));
    for row in f.values().chunks(g.width) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

pub fn parse_csv(text: &str) -> Result<Grid2> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let mut first = lines.next().ok_or_else(|| Error::Parse("empty CSV".into()))?;
    if first.replace(' ', "") == CSV_HEADER {
        first = lines.next().ok_or_else(|| Error::Parse("CSV header without geometry line".into()))?;
    }
    let head: Vec<&str> = first.split(',').map(str::trim).collect();
    if head.len() != 5 {
        return Err(Error::Parse(format!("expected 5 geometry fields, got {}", head.len())));
    }
    let int = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad integer {s:?}")));
    let real = |s: &str| s.parse::<f64>().map_err(|_| Error::Parse(format!("bad number {s:?}")));
    let geom = GridGeometry::new(int(head[0])?, int(head[1])?, [real(head[2])?, real(head[3])?], real(head[4])?)?;
    let mut values = Vec::with_capacity(geom.len());
    let mut rows = 0;
    for line in lines {
        let row: Vec<f64> = line.split(',').map(|s| real(s.trim())).collect::<Result<_>>()?;
        if row.len() != geom.width {
            return Err(Error::ShapeMismatch(format!("CSV row {rows} has {} values, expected {}", row.len(), geom.width)));
        }
        values.extend(row);
        rows += 1;
    }
    if rows != geom.height {
        return Err(Error::ShapeMismatch(format!("CSV has {rows} rows, expected {}", geom.height)));
    }
    Grid2::new(geom, values)
}

pub fn read_csv(path: &Path) -> Result<Grid2> {
    parse_csv(&fs::read_to_string(path)?)
}

pub fn write_csv(f: &Grid2, path: &Path) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(encode_csv(f).as_bytes())?;
    Ok(())
}

/// Reads a grid, choosing the format from the file extension (`.csv` or PGM otherwise).
pub fn read_grid(path: &Path) -> Result<Grid2> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("csv") => read_csv(path),
        _ => read_pgm(path),
    }
}

/// Writes a grid; `.csv` keeps full precision, `.pgm` writes P2 and `.pgm5`/`.p5` writes P5.
pub fn write_grid(f: &Grid2, path: &Path) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("csv") => write_csv(f, path),
        Some("pgm5") | Some("p5") => write_pgm(f, path, PgmFormat::Binary),
        _ => write_pgm(f, path, PgmFormat::Ascii),
    }
}
