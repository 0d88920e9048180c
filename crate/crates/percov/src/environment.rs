//! Occupancy-grid environments and geodesic distance fields.
//!
//! The environment is a regular grid of square cells, each either free or an
//! obstacle. A world point maps to the cell containing it and cell centers
//! are the sample points for every integral in the crate. Row 0 is the
//! bottom of the map, so world y grows with the row index; map files are
//! stored top row first and flipped on load.
//!
//! Geodesic distances are computed by an 8-connected Dijkstra sweep
//! (diagonal steps may not cut obstacle corners) followed by line-of-sight
//! string pulling, which recovers the taut polyline `[q, h1, .., hl, source]`
//! together with its length. The pulled length is the distance exposed to the
//! rest of the crate; on obstacle-free maps it equals the Euclidean distance
//! to the source point exactly.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("malformed map data: {0}")]
    MalformedMap(String),
    #[error("map has no free cells")]
    AllObstacles,
    #[error("resolution must be positive, got {0}")]
    BadResolution(f64),
    #[error("point ({x}, {y}) is outside the map")]
    OutOfBounds { x: f64, y: f64 },
    #[error("point ({x}, {y}) lies in an obstacle")]
    InObstacle { x: f64, y: f64 },
    #[error("erosion by radius {0} removed every free cell")]
    ErodedEmpty(f64),
    #[error("point ({x}, {y}) is unreachable from the source")]
    Unreachable { x: f64, y: f64 },
    #[error("direction undefined: point coincides with the source")]
    AtSource,
}

/// A point in world coordinates, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, other: Self) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn distance(self, other: Self) -> f64 {
        (self - other).norm()
    }

    /// Unit vector in the direction of `self`, or `None` for a zero vector.
    pub fn normalized(self) -> Option<Self> {
        let n = self.norm();
        if n > 0.0 {
            Some(Self::new(self.x / n, self.y / n))
        } else {
            None
        }
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Mul<f64> for Point {
    type Output = Point;
    fn mul(self, rhs: f64) -> Point {
        Point::new(self.x * rhs, self.y * rhs)
    }
}

impl std::ops::Neg for Point {
    type Output = Point;
    fn neg(self) -> Point {
        Point::new(-self.x, -self.y)
    }
}

/// Grid cell index: `col` grows with world x, `row` with world y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub col: u32,
    pub row: u32,
}

impl Cell {
    pub const fn new(col: u32, row: u32) -> Self {
        Self { col, row }
    }
}

const DIRS8: [(i64, i64); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

/// Occupancy grid. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Environment {
    width: u32,
    height: u32,
    resolution: f64,
    origin: Point,
    free: Vec<bool>,
}

impl Environment {
    /// Builds an environment from an explicit free-cell mask, row-major with
    /// row 0 at the bottom.
    pub fn from_parts(
        width: u32,
        height: u32,
        resolution: f64,
        free: Vec<bool>,
    ) -> Result<Self, EnvError> {
        if resolution <= 0.0 || !resolution.is_finite() {
            return Err(EnvError::BadResolution(resolution));
        }
        if width == 0 || height == 0 || free.len() != (width as usize) * (height as usize) {
            return Err(EnvError::MalformedMap(format!(
                "mask of {} cells does not match {width}x{height}",
                free.len()
            )));
        }
        if !free.iter().any(|&f| f) {
            return Err(EnvError::AllObstacles);
        }
        Ok(Self {
            width,
            height,
            resolution,
            origin: Point::new(0.0, 0.0),
            free,
        })
    }

    /// Parses a map from raw bytes, accepting binary PGM (P5) or an ASCII
    /// grid of `.` (free) and `#` (obstacle). For PGM, gray values at or
    /// above `threshold` are free.
    pub fn load(bytes: &[u8], resolution: f64, threshold: u8) -> Result<Self, EnvError> {
        if bytes.starts_with(b"P5") {
            Self::from_pgm(bytes, resolution, threshold)
        } else {
            let text = std::str::from_utf8(bytes)
                .map_err(|_| EnvError::MalformedMap("not valid UTF-8 and not a P5 PGM".into()))?;
            Self::from_ascii(text, resolution)
        }
    }

    /// Parses an ASCII grid: one text line per row, top row first,
    /// `.` free and `#` obstacle.
    pub fn from_ascii(text: &str, resolution: f64) -> Result<Self, EnvError> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.is_empty() {
            return Err(EnvError::MalformedMap("empty map".into()));
        }
        let width = lines[0].chars().count();
        let height = lines.len();
        let mut free = vec![false; width * height];
        for (i, line) in lines.iter().enumerate() {
            if line.chars().count() != width {
                return Err(EnvError::MalformedMap(format!(
                    "row {i} has {} cells, expected {width}",
                    line.chars().count()
                )));
            }
            let row = height - 1 - i; // text is top row first
            for (col, ch) in line.chars().enumerate() {
                free[row * width + col] = match ch {
                    '.' => true,
                    '#' => false,
                    other => {
                        return Err(EnvError::MalformedMap(format!(
                            "unexpected character {other:?} at row {i}, col {col}"
                        )))
                    }
                };
            }
        }
        Self::from_parts(width as u32, height as u32, resolution, free)
    }

    /// Parses a binary (P5) PGM. Gray values `>= threshold` are free.
    pub fn from_pgm(bytes: &[u8], resolution: f64, threshold: u8) -> Result<Self, EnvError> {
        let mut pos = 0usize;
        let token = |pos: &mut usize| -> Result<Vec<u8>, EnvError> {
            // skip whitespace and '#' comments
            loop {
                while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                    *pos += 1;
                }
                if *pos < bytes.len() && bytes[*pos] == b'#' {
                    while *pos < bytes.len() && bytes[*pos] != b'\n' {
                        *pos += 1;
                    }
                } else {
                    break;
                }
            }
            let start = *pos;
            while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if start == *pos {
                return Err(EnvError::MalformedMap("truncated PGM header".into()));
            }
            Ok(bytes[start..*pos].to_vec())
        };
        let magic = token(&mut pos)?;
        if magic != b"P5" {
            return Err(EnvError::MalformedMap("missing P5 magic".into()));
        }
        let parse_num = |tok: Vec<u8>| -> Result<u64, EnvError> {
            std::str::from_utf8(&tok)
                .ok()
                .and_then(|s| s.parse::<u64>().ok())
                .ok_or_else(|| EnvError::MalformedMap("bad number in PGM header".into()))
        };
        let width = parse_num(token(&mut pos)?)?;
        let height = parse_num(token(&mut pos)?)?;
        let maxval = parse_num(token(&mut pos)?)?;
        if maxval == 0 || maxval > 255 {
            return Err(EnvError::MalformedMap(format!("unsupported maxval {maxval}")));
        }
        // exactly one whitespace byte separates header from raster
        pos += 1;
        let expected = (width * height) as usize;
        let raster = bytes
            .get(pos..pos + expected)
            .ok_or_else(|| EnvError::MalformedMap("truncated PGM raster".into()))?;
        let (w, h) = (width as usize, height as usize);
        let mut free = vec![false; expected];
        for fr in 0..h {
            let row = h - 1 - fr; // PGM rows are top first
            for col in 0..w {
                free[row * w + col] = raster[fr * w + col] >= threshold;
            }
        }
        Self::from_parts(width as u32, height as u32, resolution, free)
    }

    /// Serializes the map as an ASCII grid, top row first.
    pub fn to_ascii(&self) -> String {
        let mut out = String::with_capacity((self.width as usize + 1) * self.height as usize);
        for row in (0..self.height).rev() {
            for col in 0..self.width {
                out.push(if self.is_free(Cell::new(col, row)) { '.' } else { '#' });
            }
            out.push('\n');
        }
        out
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> Point {
        self.origin
    }

    pub fn cell_area(&self) -> f64 {
        self.resolution * self.resolution
    }

    /// World-space extent `(width, height)` in meters.
    pub fn world_size(&self) -> (f64, f64) {
        (
            self.width as f64 * self.resolution,
            self.height as f64 * self.resolution,
        )
    }

    pub fn num_cells(&self) -> usize {
        (self.width as usize) * (self.height as usize)
    }

    pub fn idx(&self, cell: Cell) -> usize {
        debug_assert!(cell.col < self.width && cell.row < self.height);
        (cell.row as usize) * (self.width as usize) + cell.col as usize
    }

    pub fn cell_at(&self, idx: usize) -> Cell {
        Cell::new(
            (idx % self.width as usize) as u32,
            (idx / self.width as usize) as u32,
        )
    }

    pub fn in_bounds(&self, col: i64, row: i64) -> bool {
        col >= 0 && row >= 0 && col < self.width as i64 && row < self.height as i64
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        cell.col < self.width && cell.row < self.height && self.free[self.idx(cell)]
    }

    fn is_free_raw(&self, col: i64, row: i64) -> bool {
        self.in_bounds(col, row) && self.free[(row as usize) * (self.width as usize) + col as usize]
    }

    pub fn cell_center(&self, cell: Cell) -> Point {
        Point::new(
            self.origin.x + (cell.col as f64 + 0.5) * self.resolution,
            self.origin.y + (cell.row as f64 + 0.5) * self.resolution,
        )
    }

    /// Cell containing the world point, if the point lies inside the map.
    pub fn world_to_cell(&self, p: Point) -> Option<Cell> {
        let col = ((p.x - self.origin.x) / self.resolution).floor();
        let row = ((p.y - self.origin.y) / self.resolution).floor();
        if col >= 0.0 && row >= 0.0 && col < self.width as f64 && row < self.height as f64 {
            Some(Cell::new(col as u32, row as u32))
        } else {
            None
        }
    }

    /// Cell containing the point, requiring it to be free.
    pub fn free_cell_of(&self, p: Point) -> Result<Cell, EnvError> {
        let cell = self
            .world_to_cell(p)
            .ok_or(EnvError::OutOfBounds { x: p.x, y: p.y })?;
        if self.is_free(cell) {
            Ok(cell)
        } else {
            Err(EnvError::InObstacle { x: p.x, y: p.y })
        }
    }

    pub fn free_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.num_cells()).filter_map(move |i| {
            if self.free[i] {
                Some(self.cell_at(i))
            } else {
                None
            }
        })
    }

    pub fn free_count(&self) -> usize {
        self.free.iter().filter(|&&f| f).count()
    }

    /// The whole free set as a [`CellSet`].
    pub fn free_set(&self) -> CellSet {
        CellSet {
            width: self.width,
            height: self.height,
            bits: self.free.clone(),
        }
    }

    /// 8-connected free neighbors; diagonal steps require both adjacent
    /// orthogonal cells to be free so paths never cut an obstacle corner.
    pub fn neighbors8(&self, cell: Cell) -> impl Iterator<Item = (Cell, f64)> + '_ {
        let (c, r) = (cell.col as i64, cell.row as i64);
        let res = self.resolution;
        DIRS8.iter().filter_map(move |&(dc, dr)| {
            if !self.is_free_raw(c + dc, r + dr) {
                return None;
            }
            if dc != 0 && dr != 0 && !(self.is_free_raw(c + dc, r) && self.is_free_raw(c, r + dr)) {
                return None;
            }
            let cost = if dc != 0 && dr != 0 {
                std::f64::consts::SQRT_2 * res
            } else {
                res
            };
            Some((Cell::new((c + dc) as u32, (r + dr) as u32), cost))
        })
    }

    /// Geodesic distance field from a source point in free space.
    pub fn geodesic_field(&self, source: Point) -> Result<GeodesicField, EnvError> {
        GeodesicField::compute(self, source)
    }
}

/// A set of grid cells over a fixed-size grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellSet {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl CellSet {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; (width as usize) * (height as usize)],
        }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(Cell) -> bool) -> Self {
        let mut set = Self::empty(width, height);
        for i in 0..set.bits.len() {
            let cell = Cell::new((i % width as usize) as u32, (i / width as usize) as u32);
            set.bits[i] = f(cell);
        }
        set
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    fn index(&self, cell: Cell) -> usize {
        (cell.row as usize) * (self.width as usize) + cell.col as usize
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.col < self.width && cell.row < self.height && self.bits[self.index(cell)]
    }

    pub fn insert(&mut self, cell: Cell) {
        let i = self.index(cell);
        self.bits[i] = true;
    }

    pub fn remove(&mut self, cell: Cell) {
        let i = self.index(cell);
        self.bits[i] = false;
    }

    pub fn len(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn iter(&self) -> impl Iterator<Item = Cell> + '_ {
        self.bits.iter().enumerate().filter_map(move |(i, &b)| {
            b.then(|| {
                Cell::new(
                    (i % self.width as usize) as u32,
                    (i / self.width as usize) as u32,
                )
            })
        })
    }
}

/// True when the point lies in the closed union of the set's cell squares.
/// Points exactly on a cell edge count as inside if any adjacent cell is in
/// the set, which is the membership rule for vertices on a region boundary.
pub fn point_in_set_closed(env: &Environment, set: &CellSet, p: Point) -> bool {
    let res = env.resolution();
    let u = (p.x - env.origin().x) / res;
    let v = (p.y - env.origin().y) / res;
    let eps = 1e-9;
    let cols = candidate_indices(u, env.width(), eps);
    let rows = candidate_indices(v, env.height(), eps);
    for &col in &cols {
        for &row in &rows {
            if set.contains(Cell::new(col, row)) {
                return true;
            }
        }
    }
    false
}

/// Cell indices whose closed unit interval contains coordinate `u`.
fn candidate_indices(u: f64, extent: u32, eps: f64) -> Vec<u32> {
    let mut out = Vec::with_capacity(2);
    let base = u.floor();
    for cand in [base - 1.0, base, base + 1.0] {
        if cand >= 0.0 && cand < extent as f64 && u >= cand - eps && u <= cand + 1.0 + eps {
            out.push(cand as u32);
        }
    }
    out
}

/// Conservative grid line-of-sight: every cell the open segment passes
/// through must be free; crossing exactly through a cell corner requires
/// both corner-adjacent cells free.
pub fn line_of_sight(env: &Environment, a: Point, b: Point) -> bool {
    segment_cells_ok(env, a, b, |col, row| env.is_free_raw(col, row))
}

/// Like [`line_of_sight`] but requires every traversed cell to be in `set`.
/// Used for sweep-graph edges, which must stay inside one eroded partition.
pub fn segment_in_set(env: &Environment, set: &CellSet, a: Point, b: Point) -> bool {
    segment_cells_ok(env, a, b, |col, row| {
        col >= 0
            && row >= 0
            && col < set.width as i64
            && row < set.height as i64
            && set.bits[(row as usize) * (set.width as usize) + col as usize]
    })
}

/// Amanatides–Woo traversal of the segment in cell space.
fn segment_cells_ok(
    env: &Environment,
    a: Point,
    b: Point,
    ok: impl Fn(i64, i64) -> bool,
) -> bool {
    let res = env.resolution();
    let ax = (a.x - env.origin().x) / res;
    let ay = (a.y - env.origin().y) / res;
    let bx = (b.x - env.origin().x) / res;
    let by = (b.y - env.origin().y) / res;

    let mut col = ax.floor() as i64;
    let mut row = ay.floor() as i64;
    let end_col = bx.floor() as i64;
    let end_row = by.floor() as i64;
    if !ok(col, row) {
        return false;
    }

    let dx = bx - ax;
    let dy = by - ay;
    let step_c: i64 = if dx > 0.0 { 1 } else { -1 };
    let step_r: i64 = if dy > 0.0 { 1 } else { -1 };
    // Parametric distance to the next vertical / horizontal grid line.
    let mut t_max_x = if dx != 0.0 {
        let next = if dx > 0.0 { col as f64 + 1.0 } else { col as f64 };
        (next - ax) / dx
    } else {
        f64::INFINITY
    };
    let mut t_max_y = if dy != 0.0 {
        let next = if dy > 0.0 { row as f64 + 1.0 } else { row as f64 };
        (next - ay) / dy
    } else {
        f64::INFINITY
    };
    let t_delta_x = if dx != 0.0 { (1.0 / dx).abs() } else { f64::INFINITY };
    let t_delta_y = if dy != 0.0 { (1.0 / dy).abs() } else { f64::INFINITY };

    let mut guard = 0usize;
    let limit = 4 * (env.num_cells() + 4);
    while (col != end_col || row != end_row) && guard < limit {
        guard += 1;
        if (t_max_x - t_max_y).abs() < 1e-12 {
            // exact corner crossing: both corner-adjacent cells must pass
            if !ok(col + step_c, row) || !ok(col, row + step_r) {
                return false;
            }
            col += step_c;
            row += step_r;
            t_max_x += t_delta_x;
            t_max_y += t_delta_y;
        } else if t_max_x < t_max_y {
            col += step_c;
            t_max_x += t_delta_x;
        } else {
            row += step_r;
            t_max_y += t_delta_y;
        }
        if t_max_x.min(t_max_y) > 1.0 + 1e-12 && (col == end_col && row == end_row) {
            return ok(col, row);
        }
        if !ok(col, row) {
            return false;
        }
    }
    true
}

const PARENT_NONE: u32 = u32::MAX;
/// Anchor sentinel: the anchor is the exact source point, not a cell.
const ANCHOR_SOURCE: u32 = u32::MAX;

/// Per-source shortest-path field with string-pulled distances.
///
/// `grid_dist` and `parent` come from a plain 8-connected Dijkstra sweep, so
/// `grid_dist(c) = grid_dist(parent(c)) + step` holds exactly. `dist` is the
/// taut polyline length from a second sweep ordered by pulled length, which
/// keeps the distance direction-symmetric when several routes nearly tie.
/// All distances are infinite for unreachable cells. Immutable after
/// construction.
#[derive(Debug, Clone)]
pub struct GeodesicField {
    source: Point,
    source_cell: Cell,
    width: u32,
    grid_dist: Vec<f64>,
    dist: Vec<f64>,
    parent: Vec<u32>,
    anchor: Vec<u32>,
}

struct HeapEntry {
    dist: f64,
    idx: u32,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.dist == other.dist && self.idx == other.idx
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, then index for determinism
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

impl GeodesicField {
    fn compute(env: &Environment, source: Point) -> Result<Self, EnvError> {
        let source_cell = env.free_cell_of(source)?;
        let n = env.num_cells();
        let mut field = GeodesicField {
            source,
            source_cell,
            width: env.width(),
            grid_dist: vec![f64::INFINITY; n],
            dist: vec![f64::INFINITY; n],
            parent: vec![PARENT_NONE; n],
            anchor: vec![PARENT_NONE; n],
        };
        let src_idx = env.idx(source_cell);
        field.grid_dist[src_idx] = 0.0;
        field.dist[src_idx] = 0.0;
        field.anchor[src_idx] = ANCHOR_SOURCE;

        // Pass 1: plain 8-connected Dijkstra for the raw grid metric and the
        // shortest-path tree.
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        heap.push(HeapEntry {
            dist: 0.0,
            idx: src_idx as u32,
        });
        while let Some(HeapEntry { dist, idx }) = heap.pop() {
            let idx = idx as usize;
            if done[idx] {
                continue;
            }
            done[idx] = true;
            for (next, cost) in env.neighbors8(env.cell_at(idx)) {
                let nidx = env.idx(next);
                if done[nidx] {
                    continue;
                }
                let cand = dist + cost;
                if cand < field.grid_dist[nidx] {
                    field.grid_dist[nidx] = cand;
                    field.parent[nidx] = idx as u32;
                    heap.push(HeapEntry {
                        dist: cand,
                        idx: nidx as u32,
                    });
                }
            }
        }

        // Pass 2: sweep ordered by taut length. Every heap key is the length
        // of a realizable polyline: a relaxation either extends the settled
        // cell's anchor segment (when the anchor sees the neighbor) or bends
        // at the settled cell itself. Pop-time refinement only shortens.
        let mut pending = vec![PARENT_NONE; n];
        let mut key = vec![f64::INFINITY; n];
        key[src_idx] = 0.0;
        pending[src_idx] = ANCHOR_SOURCE;
        done.iter_mut().for_each(|d| *d = false);
        let mut heap = BinaryHeap::new();
        heap.push(HeapEntry {
            dist: 0.0,
            idx: src_idx as u32,
        });
        while let Some(HeapEntry { idx, .. }) = heap.pop() {
            let idx = idx as usize;
            if done[idx] {
                continue;
            }
            done[idx] = true;
            field.anchor[idx] = pending[idx];
            field.dist[idx] = key[idx];
            if idx != src_idx {
                field.refine_anchor(env, idx, &done);
            }
            let here = env.cell_center(env.cell_at(idx));
            let (apoint, adist) = field.anchor_point(env, field.anchor[idx]);
            for (next, _) in env.neighbors8(env.cell_at(idx)) {
                let nidx = env.idx(next);
                if done[nidx] {
                    continue;
                }
                let np = env.cell_center(next);
                let (cand, cand_anchor) = if line_of_sight(env, apoint, np) {
                    (adist + apoint.distance(np), field.anchor[idx])
                } else {
                    (field.dist[idx] + here.distance(np), idx as u32)
                };
                if cand < key[nidx] {
                    key[nidx] = cand;
                    pending[nidx] = cand_anchor;
                    heap.push(HeapEntry {
                        dist: cand,
                        idx: nidx as u32,
                    });
                }
            }
        }
        Ok(field)
    }

    /// Shortens a freshly settled cell's chain in place: first skip anchor
    /// waypoints that are directly visible (funnel shortcut), then let the
    /// bend slide across settled neighbor cells, so both sweep directions
    /// bend at the same obstacle corner. Never lengthens the chain.
    fn refine_anchor(&mut self, env: &Environment, idx: usize, done: &[bool]) {
        let here = env.cell_center(env.cell_at(idx));
        let mut a = self.anchor[idx];
        while a != ANCHOR_SOURCE {
            let next = self.anchor[a as usize];
            let (point, base) = self.anchor_point(env, next);
            if line_of_sight(env, point, here) {
                a = next;
                self.anchor[idx] = next;
                self.dist[idx] = base + here.distance(point);
            } else {
                break;
            }
        }
        if a == ANCHOR_SOURCE {
            return;
        }
        let mut best_cell = a as usize;
        let mut best_dist = self.dist[idx];
        let mut improved_any = false;
        for _ in 0..3 {
            let mut improved = false;
            for (n, _) in env.neighbors8(env.cell_at(best_cell)) {
                let nidx = (n.row as usize) * (self.width as usize) + n.col as usize;
                if !done[nidx] || nidx == idx {
                    continue;
                }
                let np = env.cell_center(n);
                let cand = self.dist[nidx] + here.distance(np);
                if cand < best_dist - 1e-12 && line_of_sight(env, np, here) {
                    best_dist = cand;
                    best_cell = nidx;
                    improved = true;
                    improved_any = true;
                }
            }
            if !improved {
                break;
            }
        }
        if improved_any {
            self.anchor[idx] = best_cell as u32;
            self.dist[idx] = best_dist;
        }
    }

    fn anchor_point(&self, env: &Environment, anchor: u32) -> (Point, f64) {
        if anchor == ANCHOR_SOURCE {
            (self.source, 0.0)
        } else {
            let idx = anchor as usize;
            (env.cell_center(env.cell_at(idx)), self.dist[idx])
        }
    }

    pub fn source(&self) -> Point {
        self.source
    }

    pub fn source_cell(&self) -> Cell {
        self.source_cell
    }

    fn cell_idx(&self, cell: Cell) -> usize {
        (cell.row as usize) * (self.width as usize) + cell.col as usize
    }

    /// String-pulled geodesic distance of the cell center to the source
    /// point. Infinite for obstacle or unreachable cells.
    pub fn dist(&self, cell: Cell) -> f64 {
        self.dist[self.cell_idx(cell)]
    }

    /// Raw 8-connected grid path length.
    pub fn grid_dist(&self, cell: Cell) -> f64 {
        self.grid_dist[self.cell_idx(cell)]
    }

    pub fn is_reachable(&self, cell: Cell) -> bool {
        self.dist(cell).is_finite()
    }

    pub fn parent(&self, cell: Cell) -> Option<Cell> {
        let p = self.parent[self.cell_idx(cell)];
        (p != PARENT_NONE).then(|| {
            Cell::new(
                p % self.width,
                p / self.width,
            )
        })
    }

    /// Geodesic distance at a world point (sampled at its cell).
    pub fn dist_at(&self, env: &Environment, p: Point) -> Result<f64, EnvError> {
        let cell = env
            .world_to_cell(p)
            .ok_or(EnvError::OutOfBounds { x: p.x, y: p.y })?;
        Ok(self.dist(cell))
    }

    /// Recovers the taut waypoint polyline `[q, h1, .., hl, source]`.
    pub fn string_pull(&self, env: &Environment, q: Point) -> Result<WaypointChain, EnvError> {
        let cell = env
            .world_to_cell(q)
            .ok_or(EnvError::OutOfBounds { x: q.x, y: q.y })?;
        if !self.is_reachable(cell) {
            return Err(EnvError::Unreachable { x: q.x, y: q.y });
        }
        if cell == self.source_cell {
            if q.distance(self.source) < 1e-12 {
                return Ok(WaypointChain { points: vec![q] });
            }
            return Ok(WaypointChain {
                points: vec![q, self.source],
            });
        }
        let mut points = vec![q];
        let mut anchor = self.anchor[self.cell_idx(cell)];
        while anchor != ANCHOR_SOURCE {
            let idx = anchor as usize;
            points.push(env.cell_center(Cell::new(
                anchor % self.width,
                anchor / self.width,
            )));
            anchor = self.anchor[idx];
        }
        points.push(self.source);
        Ok(WaypointChain { points })
    }

    /// Unit vector `(q - h1) / |q - h1|`: the gradient of the geodesic
    /// distance with respect to the query point.
    pub fn first_hop_direction(&self, env: &Environment, q: Point) -> Result<Point, EnvError> {
        let cell = env
            .world_to_cell(q)
            .ok_or(EnvError::OutOfBounds { x: q.x, y: q.y })?;
        if !self.is_reachable(cell) {
            return Err(EnvError::Unreachable { x: q.x, y: q.y });
        }
        let h1 = if cell == self.source_cell {
            self.source
        } else {
            self.anchor_point(env, self.anchor[self.cell_idx(cell)]).0
        };
        (q - h1).normalized().ok_or(EnvError::AtSource)
    }

    /// The waypoint immediately before the source on the chain from `cell`:
    /// `h^l` in the geodesic decomposition, or the cell center itself when
    /// the chain is a single segment.
    pub fn last_hop(&self, env: &Environment, cell: Cell) -> Result<Point, EnvError> {
        if !self.is_reachable(cell) {
            let p = env.cell_center(cell);
            return Err(EnvError::Unreachable { x: p.x, y: p.y });
        }
        if cell == self.source_cell {
            return Ok(self.source);
        }
        let mut last = env.cell_center(cell);
        let mut anchor = self.anchor[self.cell_idx(cell)];
        while anchor != ANCHOR_SOURCE {
            let idx = anchor as usize;
            last = env.cell_center(Cell::new(anchor % self.width, anchor / self.width));
            anchor = self.anchor[idx];
        }
        Ok(last)
    }

    /// Writes per-cell pulled distances as CSV, row-major from row 0, with a
    /// `width,height,resolution` header. Unreachable cells print `inf`.
    pub fn export_csv(&self, env: &Environment, out: &mut dyn std::io::Write) -> std::io::Result<()> {
        writeln!(out, "width,height,resolution")?;
        writeln!(out, "{},{},{}", env.width(), env.height(), env.resolution())?;
        for row in 0..env.height() {
            let mut line = String::new();
            for col in 0..env.width() {
                if col > 0 {
                    line.push(',');
                }
                let d = self.dist(Cell::new(col, row));
                if d.is_finite() {
                    line.push_str(&format!("{d:.6}"));
                } else {
                    line.push_str("inf");
                }
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Taut polyline from a query point to a geodesic source; consecutive
/// points are mutually visible.
#[derive(Debug, Clone, PartialEq)]
pub struct WaypointChain {
    points: Vec<Point>,
}

impl WaypointChain {
    pub fn points(&self) -> &[Point] {
        &self.points
    }

    /// Total polyline length.
    pub fn length(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| w[0].distance(w[1]))
            .sum()
    }

    /// Waypoints strictly between the query point and the source.
    pub fn interior(&self) -> &[Point] {
        if self.points.len() <= 2 {
            &[]
        } else {
            &self.points[1..self.points.len() - 1]
        }
    }

    /// `h^1`: the first waypoint after the query point (the source itself
    /// for direct-visibility chains).
    pub fn first_hop(&self) -> Option<Point> {
        self.points.get(1).copied()
    }

    /// `h^l`: the waypoint immediately before the source.
    pub fn last_hop(&self) -> Option<Point> {
        if self.points.len() >= 2 {
            Some(self.points[self.points.len() - 2])
        } else {
            None
        }
    }
}

/// Robot-eroded free space: free cells whose Euclidean distance to the
/// obstacle region (obstacle cell squares plus everything outside the map)
/// exceeds `radius`.
pub fn erode_free_space(env: &Environment, radius: f64) -> Result<CellSet, EnvError> {
    if radius < 0.0 || !radius.is_finite() {
        return Err(EnvError::BadResolution(radius));
    }
    let res = env.resolution();
    let reach = (radius / res + 1.5).ceil() as i64;
    let mut set = CellSet::empty(env.width(), env.height());
    for cell in env.free_cells() {
        if obstacle_clearance_exceeds(env, cell, radius, reach) {
            set.insert(cell);
        }
    }
    if set.is_empty() {
        return Err(EnvError::ErodedEmpty(radius));
    }
    Ok(set)
}

/// True when no obstacle cell square within the search window is at
/// distance <= radius from the cell center. Distance to a square is the
/// point-to-closed-square Euclidean distance.
fn obstacle_clearance_exceeds(env: &Environment, cell: Cell, radius: f64, reach: i64) -> bool {
    let res = env.resolution();
    let (c, r) = (cell.col as i64, cell.row as i64);
    for dr in -reach..=reach {
        for dc in -reach..=reach {
            if dc == 0 && dr == 0 {
                continue;
            }
            if env.is_free_raw(c + dc, r + dr) {
                continue;
            }
            let gx = (dc.abs() as f64 - 0.5).max(0.0);
            let gy = (dr.abs() as f64 - 0.5).max(0.0);
            if gx.hypot(gy) * res <= radius {
                return false;
            }
        }
    }
    true
}
