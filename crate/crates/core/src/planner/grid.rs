use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cell {
    Free,
    Occupied,
    Unknown,
}

impl Cell {
    fn from_char(c: char) -> Option<Cell> {
        match c {
            '.' => Some(Cell::Free),
            '#' => Some(Cell::Occupied),
            '?' => Some(Cell::Unknown),
            _ => None,
        }
    }

    fn to_char(self) -> char {
        match self {
            Cell::Free => '.',
            Cell::Occupied => '#',
            Cell::Unknown => '?',
        }
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("line {line}: {message}")]
pub struct MapError {
    pub line: usize,
    pub message: String,
}

fn map_err(line: usize, message: impl Into<String>) -> MapError {
    MapError {
        line,
        message: message.into(),
    }
}

/// Occupancy grid. Cell `(col, row)` has its center at
/// `origin + resolution·(col, row)`; row 0 is the lowest `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    width: usize,
    height: usize,
    resolution: f64,
    origin: [f64; 2],
    cells: Vec<Cell>,
}

impl GridMap {
    pub fn new(width: usize, height: usize, resolution: f64, origin: [f64; 2]) -> GridMap {
        Self::filled(width, height, resolution, origin, Cell::Free)
    }

    pub fn filled(
        width: usize,
        height: usize,
        resolution: f64,
        origin: [f64; 2],
        fill: Cell,
    ) -> GridMap {
        assert!(width > 0 && height > 0, "grid must be non-empty");
        assert!(resolution > 0.0 && resolution.is_finite(), "bad resolution");
        GridMap {
            width,
            height,
            resolution,
            origin,
            cells: vec![fill; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    pub fn get(&self, col: usize, row: usize) -> Cell {
        self.cells[self.index(col, row)]
    }

    pub fn set(&mut self, col: usize, row: usize, cell: Cell) {
        let i = self.index(col, row);
        self.cells[i] = cell;
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn center(&self, col: usize, row: usize) -> [f64; 2] {
        [
            self.origin[0] + self.resolution * col as f64,
            self.origin[1] + self.resolution * row as f64,
        ]
    }

    /// Cell whose square contains `p`, if any.
    pub fn locate(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let c = ((p[0] - self.origin[0]) / self.resolution).round();
        let r = ((p[1] - self.origin[1]) / self.resolution).round();
        if c >= 0.0 && r >= 0.0 && (c as usize) < self.width && (r as usize) < self.height {
            Some((c as usize, r as usize))
        } else {
            None
        }
    }

    /// Occupancy at a global point; outside the map counts as occupied.
    pub fn occupied_at(&self, p: [f64; 2]) -> bool {
        self.locate(p)
            .map_or(true, |(c, r)| self.get(c, r) == Cell::Occupied)
    }

    /// Euclidean distance in meters from each cell center to the nearest
    /// occupied cell center; infinite when nothing is occupied.
    pub fn distance_field(&self) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let inf = f64::INFINITY;
        let mut grid: Vec<f64> = self
            .cells
            .iter()
            .map(|&c| if c == Cell::Occupied { 0.0 } else { inf })
            .collect();
        let mut f = vec![0.0; w.max(h)];
        let mut out = vec![0.0; w.max(h)];
        for col in 0..w {
            for row in 0..h {
                f[row] = grid[row * w + col];
            }
            squared_edt_1d(&f[..h], &mut out[..h]);
            for row in 0..h {
                grid[row * w + col] = out[row];
            }
        }
        for row in 0..h {
            f[..w].copy_from_slice(&grid[row * w..(row + 1) * w]);
            squared_edt_1d(&f[..w], &mut out[..w]);
            grid[row * w..(row + 1) * w].copy_from_slice(&out[..w]);
        }
        grid.into_iter()
            .map(|d2| d2.sqrt() * self.resolution)
            .collect()
    }

    pub fn parse(text: &str) -> Result<GridMap, MapError> {
        let mut width = None;
        let mut height = None;
        let mut resolution = None;
        let mut origin = None;
        let mut rows: Vec<(usize, &str)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with(';') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default();
            let values: Vec<&str> = parts.collect();
            let number = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| map_err(line_no, format!("`{s}` is not a number")))
            };
            let count = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| map_err(line_no, format!("`{s}` is not a cell count")))
            };
            let expect = |n: usize| {
                if values.len() == n {
                    Ok(())
                } else {
                    Err(map_err(line_no, format!("`{key}` takes {n} value(s)")))
                }
            };
            match key {
                "width" if rows.is_empty() => {
                    expect(1)?;
                    width = Some(count(values[0])?);
                }
                "height" if rows.is_empty() => {
                    expect(1)?;
                    height = Some(count(values[0])?);
                }
                "resolution" if rows.is_empty() => {
                    expect(1)?;
                    resolution = Some(number(values[0])?);
                }
                "origin" if rows.is_empty() => {
                    expect(2)?;
                    origin = Some([number(values[0])?, number(values[1])?]);
                }
                _ => rows.push((line_no, line)),
            }
        }
        let last = text.lines().count().max(1);
        let width = width.ok_or_else(|| map_err(last, "missing `width`"))?;
        let height = height.ok_or_else(|| map_err(last, "missing `height`"))?;
        let resolution = resolution.ok_or_else(|| map_err(last, "missing `resolution`"))?;
        let origin = origin.ok_or_else(|| map_err(last, "missing `origin`"))?;
        if width == 0 || height == 0 {
            return Err(map_err(last, "map must have at least one cell"));
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(map_err(last, "resolution must be positive"));
        }
        if !origin.iter().all(|v| v.is_finite()) {
            return Err(map_err(last, "origin must be finite"));
        }
        if rows.len() != height {
            return Err(map_err(
                rows.last().map_or(last, |r| r.0),
                format!("expected {height} rows, found {}", rows.len()),
            ));
        }
        let mut map = GridMap::new(width, height, resolution, origin);
        for (k, (line_no, row_text)) in rows.iter().enumerate() {
            let chars: Vec<char> = row_text.chars().collect();
            if chars.len() != width {
                return Err(map_err(
                    *line_no,
                    format!("expected {width} cells, found {}", chars.len()),
                ));
            }
            let row = height - 1 - k;
            for (col, &ch) in chars.iter().enumerate() {
                let cell = Cell::from_char(ch)
                    .ok_or_else(|| map_err(*line_no, format!("unknown cell `{ch}`")))?;
                map.set(col, row, cell);
            }
        }
        Ok(map)
    }
}

impl fmt::Display for GridMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "width {}", self.width)?;
        writeln!(f, "height {}", self.height)?;
        writeln!(f, "resolution {}", self.resolution)?;
        writeln!(f, "origin {} {}", self.origin[0], self.origin[1])?;
        for row in (0..self.height).rev() {
            let line: String = (0..self.width)
                .map(|c| self.get(c, row).to_char())
                .collect();
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

/// Squared distance transform of a sampled function (lower envelope of
/// parabolas). `f` holds 0 at sites and infinity elsewhere.
fn squared_edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    let mut first = None;
    for (q, &fq) in f.iter().enumerate() {
        if fq.is_finite() {
            first = Some(q);
            break;
        }
    }
    let Some(first) = first else {
        out.fill(f64::INFINITY);
        return;
    };
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in (first + 1)..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let qf = q as f64;
            let pf = p as f64;
            let s = ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf));
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}
