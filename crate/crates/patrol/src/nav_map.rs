//! Navigability raster: position/cell mapping, compass moves, segment
//! collision checks and the per-action validity mask used for censoring.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

pub const NUM_ACTIONS: usize = 8;

/// Compass bearings in action order [S, SE, E, NE, N, NW, W, SW],
/// as (east, north) unit vectors. Diagonals use 1/sqrt(2) components.
pub const BEARINGS: [(f64, f64); NUM_ACTIONS] = {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    [
        (0.0, -1.0),
        (s, -s),
        (1.0, 0.0),
        (s, s),
        (0.0, 1.0),
        (-s, s),
        (-1.0, 0.0),
        (-s, -s),
    ]
};

/// A continuous position in km. x grows east, y grows north.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, other: &Position) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Per-action validity, in compass order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionMask {
    pub valid: [bool; NUM_ACTIONS],
}

impl ActionMask {
    pub fn any_valid(&self) -> bool {
        self.valid.iter().any(|&v| v)
    }

    pub fn count_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Rasterized navigability map. Row 0 is the north edge; cell indices are
/// row-major. Immutable after load.
#[derive(Debug, Clone)]
pub struct NavMap {
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    mask: Vec<bool>,
    water_cells: Vec<usize>,
    /// cell index -> ordinal in `water_cells`, usize::MAX for land.
    water_ordinal: Vec<usize>,
}

impl NavMap {
    pub fn new(width: usize, height: usize, cell_size: f64, mask: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || mask.len() != width * height {
            return Err(Error::MapParse(format!(
                "mask has {} cells, expected {}x{}",
                mask.len(),
                width,
                height
            )));
        }
        if !(cell_size > 0.0) {
            return Err(Error::MapParse(format!("invalid cell size {cell_size}")));
        }
        let water_cells: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        if water_cells.is_empty() {
            return Err(Error::MapParse("map has no navigable cells".into()));
        }
        let mut water_ordinal = vec![usize::MAX; mask.len()];
        for (ord, &cell) in water_cells.iter().enumerate() {
            water_ordinal[cell] = ord;
        }
        Ok(Self {
            width,
            height,
            cell_size,
            mask,
            water_cells,
            water_ordinal,
        })
    }

    /// Parses the map text format: first line `cellsize <km>`, then H lines
    /// of W characters from {0,1}, row 0 at the top (north).
    pub fn parse(document: &str) -> Result<Self> {
        let mut lines = document.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::MapParse("empty map document".into()))?;
        let cell_size = header
            .strip_prefix("cellsize")
            .map(str::trim)
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| Error::MapParse(format!("bad header line {header:?}")))?;

        let mut width = None;
        let mut mask = Vec::new();
        let mut height = 0usize;
        for line in lines {
            let row = line.trim();
            match width {
                None => width = Some(row.len()),
                Some(w) if w != row.len() => {
                    return Err(Error::MapParse(format!(
                        "ragged row {}: {} chars, expected {}",
                        height,
                        row.len(),
                        w
                    )))
                }
                _ => {}
            }
            for ch in row.chars() {
                match ch {
                    '0' => mask.push(false),
                    '1' => mask.push(true),
                    other => return Err(Error::MapParse(format!("bad character {other:?}"))),
                }
            }
            height += 1;
        }
        let width = width.ok_or_else(|| Error::MapParse("map has no rows".into()))?;
        Self::new(width, height, cell_size, mask)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn num_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn num_water_cells(&self) -> usize {
        self.water_cells.len()
    }

    /// Navigable cell indices, row-major. Covariance indexing follows this order.
    pub fn water_cells(&self) -> &[usize] {
        &self.water_cells
    }

    /// Ordinal of a cell within `water_cells`, or None for land.
    pub fn water_ordinal(&self, cell: usize) -> Option<usize> {
        match self.water_ordinal.get(cell) {
            Some(&ord) if ord != usize::MAX => Some(ord),
            _ => None,
        }
    }

    pub fn is_water_cell(&self, cell: usize) -> bool {
        self.mask.get(cell).copied().unwrap_or(false)
    }

    /// Cell index containing a continuous position, or None if out of bounds.
    pub fn cell_at(&self, pos: &Position) -> Option<usize> {
        if pos.x < 0.0 || pos.y < 0.0 {
            return None;
        }
        let col = (pos.x / self.cell_size) as usize;
        let row_from_south = (pos.y / self.cell_size) as usize;
        if col >= self.width || row_from_south >= self.height {
            return None;
        }
        let row = self.height - 1 - row_from_south;
        Some(row * self.width + col)
    }

    pub fn is_navigable(&self, pos: &Position) -> bool {
        self.cell_at(pos).map_or(false, |c| self.mask[c])
    }

    /// Center of a cell in km.
    pub fn cell_center(&self, cell: usize) -> Position {
        let row = cell / self.width;
        let col = cell % self.width;
        Position::new(
            (col as f64 + 0.5) * self.cell_size,
            (self.height - 1 - row) as f64 * self.cell_size + 0.5 * self.cell_size,
        )
    }

    pub fn cell_rc(&self, cell: usize) -> (usize, usize) {
        (cell / self.width, cell % self.width)
    }
}

/// Endpoint of a straight travel of `d_meas` km along compass bearing `a`.
/// Pure geometry; navigability is judged by [`is_segment_navigable`].
pub fn move_endpoint(pos: &Position, a: usize, d_meas: f64) -> Position {
    let (dx, dy) = BEARINGS[a];
    Position::new(pos.x + dx * d_meas, pos.y + dy * d_meas)
}

/// True iff every sub-sample along the segment (step at most cell_size/4)
/// plus the endpoint lies in a navigable cell inside bounds.
pub fn is_segment_navigable(map: &NavMap, from: &Position, to: &Position) -> bool {
    let dist = from.dist(to);
    if dist == 0.0 {
        return map.is_navigable(to);
    }
    let steps = (dist / (map.cell_size / 4.0)).ceil() as usize;
    for k in 1..=steps {
        let t = k as f64 / steps as f64;
        let p = Position::new(from.x + (to.x - from.x) * t, from.y + (to.y - from.y) * t);
        if !map.is_navigable(&p) {
            return false;
        }
    }
    true
}

/// The censoring mask: validity of each of the 8 compass moves from `pos`.
pub fn valid_action_mask(map: &NavMap, pos: &Position, d_meas: f64) -> ActionMask {
    let mut valid = [false; NUM_ACTIONS];
    for (a, slot) in valid.iter_mut().enumerate() {
        let end = move_endpoint(pos, a, d_meas);
        *slot = is_segment_navigable(map, pos, &end);
    }
    ActionMask { valid }
}

/// Minimal-hop 8-connected path over navigable cells between two cell
/// indices. Returns the inclusive cell sequence, or an empty vector if the
/// goal is unreachable. Ties on f-score break toward the lowest cell index.
pub fn shortest_path(map: &NavMap, from: usize, to: usize) -> Result<Vec<usize>> {
    if !map.is_water_cell(from) {
        return Err(Error::BadCell(from));
    }
    if !map.is_water_cell(to) {
        return Err(Error::BadCell(to));
    }
    if from == to {
        return Ok(vec![from]);
    }

    let (gr, gc) = map.cell_rc(to);
    // Chebyshev distance: admissible for unit-cost 8-connected moves.
    let h = |cell: usize| -> u32 {
        let (r, c) = map.cell_rc(cell);
        let dr = r.abs_diff(gr) as u32;
        let dc = c.abs_diff(gc) as u32;
        dr.max(dc)
    };

    let n = map.num_cells();
    let mut g = vec![u32::MAX; n];
    let mut parent = vec![usize::MAX; n];
    let mut heap: BinaryHeap<Reverse<(u32, usize)>> = BinaryHeap::new();
    g[from] = 0;
    heap.push(Reverse((h(from), from)));

    while let Some(Reverse((f, cell))) = heap.pop() {
        if cell == to {
            let mut path = vec![to];
            let mut cur = to;
            while parent[cur] != usize::MAX {
                cur = parent[cur];
                path.push(cur);
            }
            path.reverse();
            return Ok(path);
        }
        if f > g[cell].saturating_add(h(cell)) {
            continue; // stale entry
        }
        let (r, c) = map.cell_rc(cell);
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                if nr < 0 || nc < 0 || nr >= map.height as i64 || nc >= map.width as i64 {
                    continue;
                }
                let next = nr as usize * map.width + nc as usize;
                if !map.is_water_cell(next) {
                    continue;
                }
                let tentative = g[cell] + 1;
                if tentative < g[next] {
                    g[next] = tentative;
                    parent[next] = cell;
                    heap.push(Reverse((tentative + h(next), next)));
                }
            }
        }
    }
    Ok(Vec::new())
}
