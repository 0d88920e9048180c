//! Geodesic power diagrams and equitable partitioning.
//!
//! Every reachable free cell is assigned to the generator minimizing
//! `d_g(q, g_i)^2 - w_i`. The per-robot workloads are percentages of the
//! reachable workload, and the gradient control laws in [`control`] drive
//! the power weights (and optionally the generators) until the
//! capability-scaled shares are equal.

mod control;
mod gradient;

pub use control::{
    f_sat, run_partitioning, step_w, step_wg, ControlConfig, GainSchedule, IterationRecord,
    Mode, PartitionRunState, RobotIterRecord, StepOutcome,
};
pub use gradient::{
    boundary_normal, boundary_normal_norm, cost_h, grad_generator_from_view, grad_h_generator,
    grad_h_weight, grad_weight_from_view, neighbor_view, NeighborTerm, NeighborView, NORMAL_CLAMP,
};

use std::collections::BTreeMap;

use thiserror::Error;

use crate::environment::{Cell, CellSet, EnvError, Environment, GeodesicField, Point};

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("generators {0} and {1} occupy the same cell")]
    DuplicateGenerators(usize, usize),
    #[error("no generators given")]
    NoGenerators,
    #[error("capability count {got} does not match generator count {want}")]
    CapabilityCount { got: usize, want: usize },
    #[error("field {name} out of range at cell index {idx}: {value}")]
    FieldOutOfRange {
        name: &'static str,
        idx: usize,
        value: f64,
    },
    #[error("workload is zero everywhere")]
    ZeroWorkload,
    #[error("partition {robot} degenerate: workload share {share} below clamp")]
    DegeneratePartition { robot: usize, share: f64 },
    #[error("partition {0} is empty")]
    EmptyPartition(usize),
    #[error("malformed gain schedule: {0}")]
    BadGains(String),
}

/// Label value for cells outside every partition (obstacles and cells
/// unreachable from all generators).
pub const UNASSIGNED: u16 = u16::MAX;

/// Importance-weighted workload density over the grid:
/// `lambda(q) = phi (1 - d) Z*`.
#[derive(Debug, Clone)]
pub struct WorkloadMap {
    width: u32,
    lambda: Vec<f64>,
    cell_area: f64,
    /// `sum lambda * cellArea` over all free cells.
    total: f64,
}

impl WorkloadMap {
    pub fn idx(&self, cell: Cell) -> usize {
        (cell.row as usize) * (self.width as usize) + cell.col as usize
    }

    /// Raw density at a cell.
    pub fn density(&self, cell: Cell) -> f64 {
        self.lambda[self.idx(cell)]
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_area
    }

    /// Normalization constant: the workload integral over the free set.
    pub fn total(&self) -> f64 {
        self.total
    }
}

/// Builds the workload map, validating `0 < phi <= 1`, `0 < d < 1` and
/// `Z* > 0` on free cells.
pub fn compute_workload_map(
    env: &Environment,
    phi: &[f64],
    decay: &[f64],
    zstar: &[f64],
) -> Result<WorkloadMap, PartitionError> {
    let n = env.num_cells();
    for (name, field) in [("phi", phi), ("decay", decay), ("zstar", zstar)] {
        if field.len() != n {
            return Err(PartitionError::FieldOutOfRange {
                name,
                idx: field.len(),
                value: f64::NAN,
            });
        }
    }
    let mut lambda = vec![0.0; n];
    let mut total = 0.0;
    for cell in env.free_cells() {
        let i = env.idx(cell);
        let (p, d, z) = (phi[i], decay[i], zstar[i]);
        if !(p > 0.0 && p <= 1.0) {
            return Err(PartitionError::FieldOutOfRange {
                name: "phi",
                idx: i,
                value: p,
            });
        }
        if !(d > 0.0 && d < 1.0) {
            return Err(PartitionError::FieldOutOfRange {
                name: "decay",
                idx: i,
                value: d,
            });
        }
        if !(z > 0.0) {
            return Err(PartitionError::FieldOutOfRange {
                name: "zstar",
                idx: i,
                value: z,
            });
        }
        lambda[i] = p * (1.0 - d) * z;
        total += lambda[i] * env.cell_area();
    }
    if total <= 0.0 {
        return Err(PartitionError::ZeroWorkload);
    }
    Ok(WorkloadMap {
        width: env.width(),
        lambda,
        cell_area: env.cell_area(),
        total,
    })
}

/// A geodesic power diagram: generators, weights, per-cell labels and the
/// per-robot workload shares. Owns one geodesic field per generator.
#[derive(Debug, Clone)]
pub struct PowerDiagram {
    generators: Vec<Point>,
    weights: Vec<f64>,
    capabilities: Vec<f64>,
    fields: Vec<GeodesicField>,
    labels: Vec<u16>,
    /// Percent of the reachable workload held by each robot.
    workload_pct: Vec<f64>,
    /// `sum lambda * cellArea` over cells reachable from some generator.
    reachable_total: f64,
}

impl PowerDiagram {
    /// Computes the diagram for the given generators and weights.
    /// Capabilities default to 1 when `None`.
    pub fn compute(
        env: &Environment,
        workload: &WorkloadMap,
        generators: &[Point],
        weights: &[f64],
        capabilities: Option<&[f64]>,
    ) -> Result<Self, PartitionError> {
        if generators.is_empty() {
            return Err(PartitionError::NoGenerators);
        }
        let capabilities = match capabilities {
            Some(c) if c.len() != generators.len() => {
                return Err(PartitionError::CapabilityCount {
                    got: c.len(),
                    want: generators.len(),
                })
            }
            Some(c) => c.to_vec(),
            None => vec![1.0; generators.len()],
        };
        let mut cells = Vec::with_capacity(generators.len());
        for (i, g) in generators.iter().enumerate() {
            let cell = env.free_cell_of(*g)?;
            if let Some(j) = cells.iter().position(|&c| c == cell) {
                return Err(PartitionError::DuplicateGenerators(j, i));
            }
            cells.push(cell);
        }
        let fields = generators
            .iter()
            .map(|g| env.geodesic_field(*g))
            .collect::<Result<Vec<_>, _>>()?;
        let mut diagram = Self {
            generators: generators.to_vec(),
            weights: weights.to_vec(),
            capabilities,
            fields,
            labels: vec![UNASSIGNED; env.num_cells()],
            workload_pct: vec![0.0; generators.len()],
            reachable_total: 0.0,
        };
        diagram.reassign(env, workload);
        Ok(diagram)
    }

    /// Recomputes labels and workload shares from the current weights and
    /// fields. Ties go to the lowest robot index.
    pub fn reassign(&mut self, env: &Environment, workload: &WorkloadMap) {
        let n = env.num_cells();
        let mut reachable_total = 0.0;
        let mut acc = vec![0.0; self.generators.len()];
        for idx in 0..n {
            let cell = env.cell_at(idx);
            if !env.is_free(cell) {
                self.labels[idx] = UNASSIGNED;
                continue;
            }
            let mut best: Option<(f64, u16)> = None;
            for (i, field) in self.fields.iter().enumerate() {
                let d = field.dist(cell);
                if !d.is_finite() {
                    continue;
                }
                let cost = d * d - self.weights[i];
                match best {
                    Some((b, _)) if cost >= b => {}
                    _ => best = Some((cost, i as u16)),
                }
            }
            match best {
                Some((_, i)) => {
                    self.labels[idx] = i;
                    let w = workload.lambda[idx] * workload.cell_area;
                    acc[i as usize] += w;
                    reachable_total += w;
                }
                None => self.labels[idx] = UNASSIGNED,
            }
        }
        self.reachable_total = reachable_total;
        for (pct, w) in self.workload_pct.iter_mut().zip(&acc) {
            *pct = if reachable_total > 0.0 {
                100.0 * w / reachable_total
            } else {
                0.0
            };
        }
    }

    pub fn robot_count(&self) -> usize {
        self.generators.len()
    }

    pub fn generators(&self) -> &[Point] {
        &self.generators
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn capabilities(&self) -> &[f64] {
        &self.capabilities
    }

    pub fn field(&self, i: usize) -> &GeodesicField {
        &self.fields[i]
    }

    pub fn label(&self, env: &Environment, cell: Cell) -> Option<u16> {
        let l = self.labels[env.idx(cell)];
        (l != UNASSIGNED).then_some(l)
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    /// Percent of the reachable workload per robot; sums to 100.
    pub fn workload_pct(&self) -> &[f64] {
        &self.workload_pct
    }

    pub fn reachable_total(&self) -> f64 {
        self.reachable_total
    }

    /// Workload density normalized so shares integrate to 100 percent.
    pub fn norm_density(&self, workload: &WorkloadMap, cell: Cell) -> f64 {
        100.0 * workload.density(cell) / self.reachable_total
    }

    /// Capability-normalized shares `u_i`: equal at an equitable diagram
    /// and identical to the workload percentages for unit capabilities.
    pub fn capability_shares(&self) -> Vec<f64> {
        let scaled: Vec<f64> = self
            .workload_pct
            .iter()
            .zip(&self.capabilities)
            .map(|(w, c)| w / c)
            .collect();
        let total: f64 = scaled.iter().sum();
        scaled.iter().map(|s| 100.0 * s / total).collect()
    }

    /// Spread of the capability-normalized shares, in percentage points.
    pub fn share_spread(&self) -> f64 {
        let shares = self.capability_shares();
        let max = shares.iter().cloned().fold(f64::MIN, f64::max);
        let min = shares.iter().cloned().fold(f64::MAX, f64::min);
        max - min
    }

    /// Updates one generator and its geodesic field.
    pub(crate) fn move_generator(
        &mut self,
        env: &Environment,
        i: usize,
        to: Point,
    ) -> Result<(), PartitionError> {
        let field = env.geodesic_field(to)?;
        self.generators[i] = to;
        self.fields[i] = field;
        Ok(())
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// The cells of one partition.
    pub fn partition_cells(&self, env: &Environment, i: u16) -> CellSet {
        let mut set = CellSet::empty(env.width(), env.height());
        for idx in 0..self.labels.len() {
            if self.labels[idx] == i {
                set.insert(env.cell_at(idx));
            }
        }
        set
    }

    /// 4-connected components of partition `i`, largest workload first.
    pub fn components(
        &self,
        env: &Environment,
        workload: &WorkloadMap,
        i: u16,
    ) -> Vec<(CellSet, f64)> {
        let mut seen = vec![false; self.labels.len()];
        let mut out: Vec<(CellSet, f64)> = Vec::new();
        for start in 0..self.labels.len() {
            if seen[start] || self.labels[start] != i {
                continue;
            }
            let mut set = CellSet::empty(env.width(), env.height());
            let mut mass = 0.0;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(idx) = stack.pop() {
                let cell = env.cell_at(idx);
                set.insert(cell);
                mass += workload.lambda[idx] * workload.cell_area;
                let (c, r) = (cell.col as i64, cell.row as i64);
                for (dc, dr) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
                    let (nc, nr) = (c + dc, r + dr);
                    if !env.in_bounds(nc, nr) {
                        continue;
                    }
                    let nidx = (nr as usize) * (env.width() as usize) + nc as usize;
                    if !seen[nidx] && self.labels[nidx] == i {
                        seen[nidx] = true;
                        stack.push(nidx);
                    }
                }
            }
            out.push((set, mass));
        }
        out.sort_by(|a, b| b.1.total_cmp(&a.1));
        out
    }

    /// Writes the label map as a binary PGM, one gray level per robot
    /// (obstacles and unassigned cells are black). Rows top first.
    pub fn write_label_pgm(
        &self,
        env: &Environment,
        out: &mut dyn std::io::Write,
    ) -> std::io::Result<()> {
        let n = self.generators.len() as u32;
        write!(out, "P5\n{} {}\n255\n", env.width(), env.height())?;
        let mut raster = Vec::with_capacity(env.num_cells());
        for row in (0..env.height()).rev() {
            for col in 0..env.width() {
                let l = self.labels[env.idx(Cell::new(col, row))];
                raster.push(if l == UNASSIGNED {
                    0u8
                } else {
                    (255 * (l as u32 + 1) / n) as u8
                });
            }
        }
        out.write_all(&raster)
    }
}

/// Boundary cells between each pair of adjacent partitions. `Delta_ij`
/// holds cells of both labels, so the pair sets are symmetric.
#[derive(Debug, Clone, Default)]
pub struct BoundarySet {
    pairs: BTreeMap<(u16, u16), Vec<Cell>>,
}

impl BoundarySet {
    /// Cells on the boundary between partitions `i` and `j`.
    pub fn between(&self, i: u16, j: u16) -> &[Cell] {
        let key = (i.min(j), i.max(j));
        self.pairs.get(&key).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Neighbor indices of partition `i` (partitions sharing a boundary).
    pub fn neighbors(&self, i: u16) -> Vec<u16> {
        let mut out = Vec::new();
        for &(a, b) in self.pairs.keys() {
            if a == i {
                out.push(b);
            } else if b == i {
                out.push(a);
            }
        }
        out
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&(u16, u16), &Vec<Cell>)> {
        self.pairs.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Finds all boundary cells: a labeled cell belongs to `Delta_ij` when one
/// of its 8 neighbors carries the other label. Cells adjacent only to
/// obstacles or the map border join no pair.
pub fn extract_boundaries(env: &Environment, diagram: &PowerDiagram) -> BoundarySet {
    let labels = diagram.labels();
    let mut pairs: BTreeMap<(u16, u16), Vec<Cell>> = BTreeMap::new();
    let mut seen: BTreeMap<(u16, u16), CellSet> = BTreeMap::new();
    for idx in 0..labels.len() {
        let li = labels[idx];
        if li == UNASSIGNED {
            continue;
        }
        let cell = env.cell_at(idx);
        let (c, r) = (cell.col as i64, cell.row as i64);
        for (dc, dr) in [
            (1i64, 0i64),
            (-1, 0),
            (0, 1),
            (0, -1),
            (1, 1),
            (1, -1),
            (-1, 1),
            (-1, -1),
        ] {
            let (nc, nr) = (c + dc, r + dr);
            if !env.in_bounds(nc, nr) {
                continue;
            }
            let lj = labels[(nr as usize) * (env.width() as usize) + nc as usize];
            if lj == UNASSIGNED || lj == li {
                continue;
            }
            let key = (li.min(lj), li.max(lj));
            let marker = seen
                .entry(key)
                .or_insert_with(|| CellSet::empty(env.width(), env.height()));
            if !marker.contains(cell) {
                marker.insert(cell);
                pairs.entry(key).or_default().push(cell);
            }
        }
    }
    BoundarySet { pairs }
}

/// Workload-weighted centroid of the largest connected component of
/// partition `i`, projected onto that component if it falls outside.
pub fn largest_component_centroid(
    env: &Environment,
    diagram: &PowerDiagram,
    workload: &WorkloadMap,
    i: u16,
) -> Result<Point, PartitionError> {
    let components = diagram.components(env, workload, i);
    let Some((component, mass)) = components.first() else {
        return Err(PartitionError::EmptyPartition(i as usize));
    };
    let mut cx = 0.0;
    let mut cy = 0.0;
    for cell in component.iter() {
        let w = workload.density(cell) * workload.cell_area;
        let p = env.cell_center(cell);
        cx += p.x * w;
        cy += p.y * w;
    }
    let centroid = if *mass > 0.0 {
        Point::new(cx / mass, cy / mass)
    } else {
        // degenerate zero-mass component: plain geometric mean
        let len = component.len() as f64;
        let (mut sx, mut sy) = (0.0, 0.0);
        for cell in component.iter() {
            let p = env.cell_center(cell);
            sx += p.x;
            sy += p.y;
        }
        Point::new(sx / len, sy / len)
    };
    let inside = env
        .world_to_cell(centroid)
        .map(|c| component.contains(c))
        .unwrap_or(false);
    if inside {
        return Ok(centroid);
    }
    // project to the nearest cell of the component
    let mut best = None;
    let mut best_d = f64::INFINITY;
    for cell in component.iter() {
        let d = env.cell_center(cell).distance(centroid);
        if d < best_d {
            best_d = d;
            best = Some(cell);
        }
    }
    Ok(env.cell_center(best.expect("component non-empty")))
}

/// Connectivity summary of one diagram.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PartitionStats {
    /// Connected-component count per robot.
    pub components: Vec<usize>,
    /// Robots whose partition has more than one component.
    pub disconnected: usize,
    /// Workload of the biggest component relative to the partition, percent.
    pub biggest_component_rel_workload: Vec<f64>,
}

pub fn partition_stats(
    env: &Environment,
    diagram: &PowerDiagram,
    workload: &WorkloadMap,
) -> PartitionStats {
    let mut components = Vec::new();
    let mut rel = Vec::new();
    for i in 0..diagram.robot_count() as u16 {
        let comps = diagram.components(env, workload, i);
        components.push(comps.len());
        let total: f64 = comps.iter().map(|(_, m)| m).sum();
        let biggest = comps.first().map(|(_, m)| *m).unwrap_or(0.0);
        rel.push(if total > 0.0 {
            100.0 * biggest / total
        } else {
            0.0
        });
    }
    PartitionStats {
        disconnected: components.iter().filter(|&&c| c > 1).count(),
        components,
        biggest_component_rel_workload: rel,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covdyn::{ramp_y_field, uniform_field};

    fn open_env(w: u32, h: u32, res: f64) -> Environment {
        Environment::from_parts(w, h, res, vec![true; (w * h) as usize]).unwrap()
    }

    fn uniform_workload(env: &Environment) -> WorkloadMap {
        compute_workload_map(
            env,
            &uniform_field(env, 1.0),
            &uniform_field(env, 0.9995),
            &uniform_field(env, 80.0),
        )
        .unwrap()
    }

    #[test]
    fn workload_product_formula() {
        let env = open_env(6, 6, 0.5);
        let w = compute_workload_map(
            &env,
            &uniform_field(&env, 1.0),
            &uniform_field(&env, 0.9995),
            &uniform_field(&env, 80.0),
        )
        .unwrap();
        for cell in env.free_cells() {
            assert!((w.density(cell) - 0.04).abs() < 1e-12);
        }
        let expect_total = 0.04 * env.free_count() as f64 * env.cell_area();
        assert!((w.total() - expect_total).abs() < 1e-12);
    }

    #[test]
    fn workload_ramp_ratio_matches_field_profile() {
        // top rows carry more workload than bottom rows: the ratio of the
        // extreme densities is (1.0 * 100) / (0.5 * 80) = 2.5
        let env = open_env(10, 20, 0.1);
        let phi = ramp_y_field(&env, 0.5, 0.5);
        let zstar = ramp_y_field(&env, 80.0, 20.0);
        let w = compute_workload_map(&env, &phi, &uniform_field(&env, 0.9995), &zstar).unwrap();
        let bottom = w.density(Cell::new(0, 0));
        let top = w.density(Cell::new(0, 19));
        let i_bot = env.idx(Cell::new(0, 0));
        let i_top = env.idx(Cell::new(0, 19));
        let expect = (phi[i_top] * zstar[i_top]) / (phi[i_bot] * zstar[i_bot]);
        assert!((top / bottom - expect).abs() < 1e-12);
        // end-to-end ratio approaches 2.5 at the cell centers
        assert!((top / bottom - 2.5).abs() < 0.1);
    }

    #[test]
    fn workload_near_unit_decay_stays_positive() {
        let env = open_env(4, 4, 1.0);
        let w = compute_workload_map(
            &env,
            &uniform_field(&env, 1.0),
            &uniform_field(&env, 1.0 - 1e-9),
            &uniform_field(&env, 80.0),
        )
        .unwrap();
        for cell in env.free_cells() {
            assert!(w.density(cell) > 0.0);
            assert!(w.density(cell) < 1e-6);
        }
        assert!(w.total() > 0.0);
    }

    #[test]
    fn single_generator_takes_everything() {
        let env = open_env(8, 8, 0.5);
        let w = uniform_workload(&env);
        let g = env.cell_center(Cell::new(4, 4));
        let d = PowerDiagram::compute(&env, &w, &[g], &[0.0], None).unwrap();
        for cell in env.free_cells() {
            assert_eq!(d.label(&env, cell), Some(0));
        }
        assert!((d.workload_pct()[0] - 100.0).abs() < 1e-9);
    }

    #[test]
    fn mirror_generators_split_evenly() {
        let env = open_env(20, 10, 0.5);
        let w = uniform_workload(&env);
        let g1 = env.cell_center(Cell::new(4, 4));
        let g2 = env.cell_center(Cell::new(15, 4));
        let d = PowerDiagram::compute(&env, &w, &[g1, g2], &[0.0, 0.0], None).unwrap();
        let pct = d.workload_pct();
        assert!((pct[0] - 50.0).abs() <= 100.0 / env.free_count() as f64 * 10.0);
        assert!((pct[0] + pct[1] - 100.0).abs() < 1e-9);
        // split is the perpendicular bisector: left half goes to robot 0
        for cell in env.free_cells() {
            let p = env.cell_center(cell);
            if p.x < 4.75 {
                assert_eq!(d.label(&env, cell), Some(0));
            } else if p.x > 5.25 {
                assert_eq!(d.label(&env, cell), Some(1));
            }
        }
    }

    #[test]
    fn weight_shift_captures_other_generator_cell() {
        // with w = (D^2, 0) the cell at g2 ties and the tie-break gives it
        // to robot 0; with w = (D^2 - eps, 0) robot 1 keeps it
        let env = open_env(16, 4, 1.0);
        let w = uniform_workload(&env);
        let g1 = env.cell_center(Cell::new(2, 2));
        let g2 = env.cell_center(Cell::new(12, 2));
        let dd = g1.distance(g2);
        let tie = PowerDiagram::compute(&env, &w, &[g1, g2], &[dd * dd, 0.0], None).unwrap();
        assert_eq!(tie.label(&env, Cell::new(12, 2)), Some(0));
        let keep =
            PowerDiagram::compute(&env, &w, &[g1, g2], &[dd * dd - 1e-6, 0.0], None).unwrap();
        assert_eq!(keep.label(&env, Cell::new(12, 2)), Some(1));
    }

    #[test]
    fn duplicate_generator_cells_rejected() {
        let env = open_env(6, 6, 1.0);
        let w = uniform_workload(&env);
        let g = env.cell_center(Cell::new(3, 3));
        let g_off = Point::new(g.x + 0.1, g.y);
        assert!(matches!(
            PowerDiagram::compute(&env, &w, &[g, g_off], &[0.0, 0.0], None),
            Err(PartitionError::DuplicateGenerators(0, 1))
        ));
    }

    #[test]
    fn generator_in_obstacle_rejected() {
        let env = Environment::from_ascii("...\n.#.\n...\n", 1.0).unwrap();
        let w = uniform_workload(&env);
        let g = env.cell_center(Cell::new(1, 1));
        assert!(PowerDiagram::compute(&env, &w, &[g], &[0.0], None).is_err());
    }

    #[test]
    fn unreachable_rooms_stay_unassigned() {
        let env = Environment::from_ascii(".#.\n.#.\n.#.\n", 1.0).unwrap();
        let w = uniform_workload(&env);
        let g = env.cell_center(Cell::new(0, 1));
        let d = PowerDiagram::compute(&env, &w, &[g], &[0.0], None).unwrap();
        assert_eq!(d.label(&env, Cell::new(2, 1)), None);
        assert_eq!(d.label(&env, Cell::new(0, 0)), Some(0));
        // percentages are over the reachable workload only
        assert!((d.workload_pct()[0] - 100.0).abs() < 1e-9);
        assert!(d.reachable_total() < w.total());
    }

    #[test]
    fn boundaries_empty_for_single_robot() {
        let env = open_env(6, 6, 1.0);
        let w = uniform_workload(&env);
        let g = env.cell_center(Cell::new(3, 3));
        let d = PowerDiagram::compute(&env, &w, &[g], &[0.0], None).unwrap();
        let b = extract_boundaries(&env, &d);
        assert!(b.is_empty());
        assert!(b.neighbors(0).is_empty());
    }

    /// Brute-force boundary oracle: enumerate all 8-adjacent opposite-label
    /// cell pairs directly.
    fn boundary_oracle(env: &Environment, d: &PowerDiagram, i: u16, j: u16) -> Vec<Cell> {
        let mut out = Vec::new();
        for cell in env.free_cells() {
            let li = d.label(env, cell);
            if li != Some(i) && li != Some(j) {
                continue;
            }
            let other = if li == Some(i) { j } else { i };
            let (c, r) = (cell.col as i64, cell.row as i64);
            let mut hit = false;
            for dc in -1i64..=1 {
                for dr in -1i64..=1 {
                    if dc == 0 && dr == 0 || !env.in_bounds(c + dc, r + dr) {
                        continue;
                    }
                    let ncell = Cell::new((c + dc) as u32, (r + dr) as u32);
                    if d.label(env, ncell) == Some(other) {
                        hit = true;
                    }
                }
            }
            if hit {
                out.push(cell);
            }
        }
        out
    }

    #[test]
    fn two_label_split_boundary_matches_oracle() {
        let env = open_env(10, 10, 1.0);
        let w = uniform_workload(&env);
        let g1 = env.cell_center(Cell::new(2, 5));
        let g2 = env.cell_center(Cell::new(7, 5));
        let d = PowerDiagram::compute(&env, &w, &[g1, g2], &[0.0, 0.0], None).unwrap();
        let b = extract_boundaries(&env, &d);
        let mut got: Vec<Cell> = b.between(0, 1).to_vec();
        got.sort();
        let mut want = boundary_oracle(&env, &d, 0, 1);
        want.sort();
        assert_eq!(got, want);
        // vertical split: two cell columns along the split
        assert_eq!(got.len(), 2 * env.height() as usize);
        assert_eq!(b.neighbors(0), vec![1]);
    }

    #[test]
    fn three_labels_at_junction_all_neighbors() {
        let env = open_env(12, 12, 1.0);
        let w = uniform_workload(&env);
        let gens = [
            env.cell_center(Cell::new(2, 2)),
            env.cell_center(Cell::new(9, 2)),
            env.cell_center(Cell::new(5, 9)),
        ];
        let d = PowerDiagram::compute(&env, &w, &gens, &[0.0; 3], None).unwrap();
        let b = extract_boundaries(&env, &d);
        for i in 0..3u16 {
            assert_eq!(b.neighbors(i).len(), 2, "robot {i}");
            for j in 0..3u16 {
                if i != j {
                    let mut got: Vec<Cell> = b.between(i, j).to_vec();
                    got.sort();
                    let mut want = boundary_oracle(&env, &d, i, j);
                    want.sort();
                    assert_eq!(got, want);
                }
            }
        }
    }

    #[test]
    fn centroid_of_rectangle_is_center() {
        let env = open_env(9, 5, 1.0);
        let w = uniform_workload(&env);
        let g = env.cell_center(Cell::new(4, 2));
        let d = PowerDiagram::compute(&env, &w, &[g], &[0.0], None).unwrap();
        let c = largest_component_centroid(&env, &d, &w, 0).unwrap();
        assert!((c.x - 4.5).abs() < 1e-9);
        assert!((c.y - 2.5).abs() < 1e-9);
    }

    #[test]
    fn centroid_picks_heavier_component() {
        // two rooms joined only through an obstacle wall: robot 0 owns both
        // sides, the right room is bigger
        let env = Environment::from_ascii(
            "..#......\n..#......\n..#......\n",
            1.0,
        )
        .unwrap();
        let w = uniform_workload(&env);
        let g = env.cell_center(Cell::new(5, 1));
        let mut d = PowerDiagram::compute(&env, &w, &[g], &[0.0], None).unwrap();
        // force-label the unreachable left column by editing labels through
        // a second generator there
        let g2 = env.cell_center(Cell::new(0, 1));
        d = PowerDiagram::compute(&env, &w, &[g, g2], &[1000.0, 0.0], None).unwrap();
        // with the huge weight robot 0 claims everything reachable on both
        // sides of its field; the left room stays with robot 1
        let comps = d.components(&env, &w, 0);
        assert_eq!(comps.len(), 1);
        let c = largest_component_centroid(&env, &d, &w, 0).unwrap();
        assert!(c.x > 3.0);
    }

    #[test]
    fn centroid_projects_into_l_shape() {
        // L-shaped free region: centroid of the L falls in the obstacle
        // notch and must be projected back onto the region
        let env = Environment::from_ascii(
            "..####\n..####\n..####\n......\n......\n",
            1.0,
        )
        .unwrap();
        let w = uniform_workload(&env);
        let g = env.cell_center(Cell::new(1, 1));
        let d = PowerDiagram::compute(&env, &w, &[g], &[0.0], None).unwrap();
        // brute-force centroid oracle
        let cells = d.partition_cells(&env, 0);
        let mut sx = 0.0;
        let mut sy = 0.0;
        let mut m = 0.0;
        for cell in cells.iter() {
            let ww = w.density(cell);
            let p = env.cell_center(cell);
            sx += p.x * ww;
            sy += p.y * ww;
            m += ww;
        }
        let raw = Point::new(sx / m, sy / m);
        let projected = largest_component_centroid(&env, &d, &w, 0).unwrap();
        let raw_cell = env.world_to_cell(raw).unwrap();
        if cells.contains(raw_cell) {
            assert!((projected.x - raw.x).abs() < 1e-9);
        } else {
            let pc = env.world_to_cell(projected).unwrap();
            assert!(cells.contains(pc));
            // projection is the nearest region cell to the raw centroid
            let mut best = f64::INFINITY;
            for cell in cells.iter() {
                best = best.min(env.cell_center(cell).distance(raw));
            }
            assert!((env.cell_center(pc).distance(raw) - best).abs() < 1e-9);
        }
    }

    #[test]
    fn stats_connected_and_split() {
        let env = open_env(10, 6, 1.0);
        let w = uniform_workload(&env);
        let gens = [
            env.cell_center(Cell::new(2, 3)),
            env.cell_center(Cell::new(7, 3)),
        ];
        let d = PowerDiagram::compute(&env, &w, &gens, &[0.0, 0.0], None).unwrap();
        let s = partition_stats(&env, &d, &w);
        assert_eq!(s.disconnected, 0);
        assert_eq!(s.components, vec![1, 1]);
        for r in &s.biggest_component_rel_workload {
            assert!((r - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn label_pgm_has_distinct_levels() {
        let env = open_env(8, 4, 0.5);
        let w = uniform_workload(&env);
        let gens = [
            env.cell_center(Cell::new(1, 2)),
            env.cell_center(Cell::new(6, 2)),
        ];
        let d = PowerDiagram::compute(&env, &w, &gens, &[0.0, 0.0], None).unwrap();
        let mut buf = Vec::new();
        d.write_label_pgm(&env, &mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n8 4\n255\n"));
        let raster = &buf[buf.len() - 32..];
        let mut levels: Vec<u8> = raster.to_vec();
        levels.sort_unstable();
        levels.dedup();
        assert_eq!(levels.len(), 2);
    }
}
