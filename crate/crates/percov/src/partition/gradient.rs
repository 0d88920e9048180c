//! Analytic gradients of the equity cost `H = sum_i c_i / lambda_i` with
//! respect to the power weights and the generator positions.
//!
//! Both gradients are boundary integrals. For a boundary cell `q` between
//! partitions `i` and `j`, the unnormalized boundary normal is
//! `n' = 2 d_g(q,g_i) u_i - 2 d_g(q,g_j) u_j` with `u_k` the unit first-hop
//! direction of the pulled chain toward generator `k`. The integrals are
//! discretized over the two-sided boundary cell sets with a per-cell length
//! element `ds = res |n'| / (2 (|n'_x| + |n'_y|))`: a straight boundary of
//! any orientation then integrates to its true length, which is what the
//! finite-difference checks of the discrete cost require.

use crate::environment::{Cell, Environment, Point};

use super::{BoundarySet, PartitionError, PowerDiagram, WorkloadMap};

/// Lower clamp for `|n'_x| + |n'_y|` where the two first-hop directions
/// nearly cancel.
pub const NORMAL_CLAMP: f64 = 1e-6;

/// Workload shares below `1e-9 x total` make the `1/lambda^2` factors
/// meaningless; such partitions are reported as degenerate.
const DEGENERATE_FRACTION: f64 = 1e-9;

/// Unnormalized normal `n'_ij(q)` to the power-diagram boundary.
pub fn boundary_normal(
    env: &Environment,
    diagram: &PowerDiagram,
    q: Cell,
    i: usize,
    j: usize,
) -> Result<Point, PartitionError> {
    let p = env.cell_center(q);
    let fi = diagram.field(i);
    let fj = diagram.field(j);
    let di = fi.dist(q);
    let dj = fj.dist(q);
    let ui = fi.first_hop_direction(env, p)?;
    let uj = fj.first_hop_direction(env, p)?;
    Ok(ui * (2.0 * di) - uj * (2.0 * dj))
}

/// `|n'_ij(q)|`, clamped below so callers can divide by it.
pub fn boundary_normal_norm(
    env: &Environment,
    diagram: &PowerDiagram,
    q: Cell,
    i: usize,
    j: usize,
) -> Result<f64, PartitionError> {
    Ok(boundary_normal(env, diagram, q, i, j)?.norm().max(NORMAL_CLAMP))
}

/// One neighbor's contribution to a robot's gradient, precomputed so the
/// per-robot update can run from local data only.
#[derive(Debug, Clone)]
pub struct NeighborTerm {
    pub robot: usize,
    /// Neighbor's workload in raw units (`integral of lambda`).
    pub workload: f64,
    pub capability: f64,
    /// `sum over Delta_ij of lambda(q) ds / |n'|` (weight gradient).
    pub boundary_sum: f64,
    /// Same sum weighted by the unit vector from `g_i` to the last chain
    /// waypoint `h^l` (generator gradient), per component.
    pub boundary_dir_sum: Point,
}

/// Everything robot `i` needs from its neighbors to evaluate its own
/// gradient: the message a neighbor would send in a distributed run.
#[derive(Debug, Clone)]
pub struct NeighborView {
    pub robot: usize,
    /// Own workload in raw units.
    pub workload: f64,
    pub capability: f64,
    /// Workloads below this are treated as degenerate (`1e-9 x` the
    /// reachable total).
    pub degenerate_floor: f64,
    pub neighbors: Vec<NeighborTerm>,
    /// Boundary cells skipped because they coincided with a generator cell
    /// or had a zero-length final chain segment.
    pub skipped_cells: usize,
}

/// Gradient of the cost with respect to `w_i` from a neighbor view.
pub fn grad_weight_from_view(view: &NeighborView) -> Result<f64, PartitionError> {
    let own = share_factor(view.robot, view.workload, view.capability, view.degenerate_floor)?;
    let mut grad = 0.0;
    for t in &view.neighbors {
        let theirs = share_factor(t.robot, t.workload, t.capability, view.degenerate_floor)?;
        grad += (theirs - own) * t.boundary_sum;
    }
    Ok(grad)
}

/// Gradient of the cost with respect to `g_i` from a neighbor view.
pub fn grad_generator_from_view(view: &NeighborView) -> Result<Point, PartitionError> {
    let own = share_factor(view.robot, view.workload, view.capability, view.degenerate_floor)?;
    let mut grad = Point::new(0.0, 0.0);
    for t in &view.neighbors {
        let theirs = share_factor(t.robot, t.workload, t.capability, view.degenerate_floor)?;
        grad = grad + t.boundary_dir_sum * (theirs - own);
    }
    Ok(grad)
}

/// `c_i / lambda_i^2` with the degenerate-share guard.
fn share_factor(
    robot: usize,
    share: f64,
    capability: f64,
    floor: f64,
) -> Result<f64, PartitionError> {
    if share < floor {
        return Err(PartitionError::DegeneratePartition { robot, share });
    }
    Ok(capability / (share * share))
}

/// Assembles the neighbor view of robot `i` from the current diagram.
pub fn neighbor_view(
    env: &Environment,
    diagram: &PowerDiagram,
    boundaries: &BoundarySet,
    workload: &WorkloadMap,
    i: usize,
) -> Result<NeighborView, PartitionError> {
    let res = env.resolution();
    let gi = diagram.generators()[i];
    let gi_cell = env.free_cell_of(gi)?;
    let mut skipped = 0usize;
    let mut neighbors = Vec::new();
    for j in boundaries.neighbors(i as u16) {
        let j = j as usize;
        let gj_cell = env.free_cell_of(diagram.generators()[j])?;
        let mut sum = 0.0;
        let mut dir_sum = Point::new(0.0, 0.0);
        for &q in boundaries.between(i as u16, j as u16) {
            if q == gi_cell || q == gj_cell {
                skipped += 1;
                continue;
            }
            let n = boundary_normal(env, diagram, q, i, j)?;
            let l1 = (n.x.abs() + n.y.abs()).max(NORMAL_CLAMP);
            // lambda ds / |n'| with ds = res |n'| / (2 l1)
            let term = workload.density(q) * res / (2.0 * l1);
            sum += term;
            let h_last = diagram.field(i).last_hop(env, q)?;
            let seg = h_last - gi;
            match seg.normalized() {
                Some(dir) => dir_sum = dir_sum + dir * term,
                None => skipped += 1,
            }
        }
        neighbors.push(NeighborTerm {
            robot: j,
            workload: diagram.workload_raw()[j],
            capability: diagram.capabilities()[j],
            boundary_sum: sum,
            boundary_dir_sum: dir_sum,
        });
    }
    Ok(NeighborView {
        robot: i,
        workload: diagram.workload_raw()[i],
        capability: diagram.capabilities()[i],
        degenerate_floor: DEGENERATE_FRACTION * diagram.reachable_total(),
        neighbors,
        skipped_cells: skipped,
    })
}

/// Analytic `dH/dw_i` over the current diagram.
pub fn grad_h_weight(
    env: &Environment,
    diagram: &PowerDiagram,
    boundaries: &BoundarySet,
    workload: &WorkloadMap,
    i: usize,
) -> Result<f64, PartitionError> {
    grad_weight_from_view(&neighbor_view(env, diagram, boundaries, workload, i)?)
}

/// Analytic `dH/dg_i` over the current diagram.
pub fn grad_h_generator(
    env: &Environment,
    diagram: &PowerDiagram,
    boundaries: &BoundarySet,
    workload: &WorkloadMap,
    i: usize,
) -> Result<Point, PartitionError> {
    grad_generator_from_view(&neighbor_view(env, diagram, boundaries, workload, i)?)
}

/// The discrete equity cost `H = sum_i c_i / lambda_i` over raw workloads:
/// the quantity the finite-difference oracles probe.
pub fn cost_h(diagram: &PowerDiagram) -> f64 {
    let floor = DEGENERATE_FRACTION * diagram.reachable_total();
    diagram
        .workload_raw()
        .iter()
        .zip(diagram.capabilities())
        .map(|(share, c)| c / share.max(floor))
        .sum()
}
