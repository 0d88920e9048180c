//! Distributed control laws driving the diagram to an equitable partition.
//!
//! The weight law `w_i <- w_i - dt k_w(|g|) dH/dw_i` runs in synchronous
//! rounds with an explicit Euler step. The WG variant additionally walks
//! each generator along the geodesic path toward the workload centroid of
//! its largest connected component, gated by the saturation `f_sat` so the
//! motion never opposes the equity descent.

use crate::environment::{Environment, Point};

use super::gradient::{grad_generator_from_view, grad_weight_from_view, neighbor_view};
use super::{
    extract_boundaries, largest_component_centroid, PartitionError, PowerDiagram, WorkloadMap,
};

/// Saturation gate: `0` for `x <= 0`, `exp(-1 / (k_sat x)^2)` otherwise.
/// Strictly increasing on `x > 0` with limit 1.
pub fn f_sat(x: f64, k_sat: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        (-1.0 / (k_sat * x).powi(2)).exp()
    }
}

/// Piecewise gain for the weight law, read in descending gradient bands:
/// the largest gain applies to the smallest gradients so convergence does
/// not stall near the equilibrium.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GainSchedule {
    /// Gains for the four bands, increasing.
    pub k_w: [f64; 4],
    /// Strictly decreasing thresholds `beta_1 > beta_2 > beta_3 > 0`.
    pub beta: [f64; 3],
}

impl GainSchedule {
    /// The schedule used for the open-room class of environments.
    pub fn open_rooms() -> Self {
        Self {
            k_w: [5.0, 100.0, 500.0, 5000.0],
            beta: [5e-3, 3e-4, 1e-5],
        }
    }

    /// Variant with the tighter second threshold for room-heavy maps.
    pub fn rooms() -> Self {
        Self {
            k_w: [5.0, 100.0, 500.0, 5000.0],
            beta: [5e-3, 2e-4, 1e-5],
        }
    }

    pub fn validate(&self) -> Result<(), PartitionError> {
        let [b1, b2, b3] = self.beta;
        if !(b1 > b2 && b2 > b3 && b3 > 0.0) {
            return Err(PartitionError::BadGains(format!(
                "thresholds must satisfy beta1 > beta2 > beta3 > 0, got {b1}, {b2}, {b3}"
            )));
        }
        if !self.k_w.windows(2).all(|w| w[0] <= w[1]) || self.k_w[0] <= 0.0 {
            return Err(PartitionError::BadGains(format!(
                "gains must be positive and increasing, got {:?}",
                self.k_w
            )));
        }
        Ok(())
    }

    /// Gain for a gradient magnitude. Exact threshold hits take the
    /// larger-gradient band.
    pub fn gain(&self, grad_abs: f64) -> f64 {
        let [b1, b2, b3] = self.beta;
        if grad_abs > b1 {
            self.k_w[0]
        } else if grad_abs >= b2 {
            self.k_w[1]
        } else if grad_abs >= b3 {
            self.k_w[2]
        } else {
            self.k_w[3]
        }
    }
}

/// Which control law drives the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Weights only.
    W,
    /// Weights and generator positions.
    Wg,
    /// Weights frozen at zero: the geodesic Voronoi baseline.
    Voronoi,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ControlConfig {
    pub mode: Mode,
    pub gains: GainSchedule,
    pub k_g: f64,
    pub k_sat: f64,
    pub dt: f64,
    pub max_iters: usize,
    /// Convergence: capability-normalized share spread below this many
    /// percentage points.
    pub spread_target: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Wg,
            gains: GainSchedule::open_rooms(),
            k_g: 5.0,
            k_sat: 3.0,
            dt: 1.0,
            max_iters: 5000,
            spread_target: 5.0,
        }
    }
}

/// Per-robot record of one control iteration.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RobotIterRecord {
    pub workload_pct: f64,
    pub weight: f64,
    pub grad_abs: f64,
    pub f_sat: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub robots: Vec<RobotIterRecord>,
}

/// Trace of a partitioning run.
#[derive(Debug, Clone)]
pub struct PartitionRunState {
    pub iterations: usize,
    pub converged: bool,
    pub records: Vec<IterationRecord>,
    /// Polyline each generator traversed (starting position first).
    pub generator_paths: Vec<Vec<Point>>,
}

impl PartitionRunState {
    /// Wide-format CSV mirroring the per-iteration workload, weight,
    /// gradient and saturation traces.
    pub fn write_csv(&self, out: &mut dyn std::io::Write) -> std::io::Result<()> {
        let n = self.records.first().map(|r| r.robots.len()).unwrap_or(0);
        let mut header = String::from("iteration");
        for field in ["workload_pct", "weight", "grad_abs", "f_sat"] {
            for i in 0..n {
                header.push_str(&format!(",{field}_{i}"));
            }
        }
        writeln!(out, "{header}")?;
        for rec in &self.records {
            let mut line = rec.iteration.to_string();
            for get in [
                |r: &RobotIterRecord| r.workload_pct,
                |r: &RobotIterRecord| r.weight,
                |r: &RobotIterRecord| r.grad_abs,
                |r: &RobotIterRecord| r.f_sat,
            ] {
                for r in &rec.robots {
                    line.push_str(&format!(",{}", get(r)));
                }
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Result of one synchronous control round.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub grads: Vec<f64>,
    pub f_sat_values: Vec<f64>,
}

/// One synchronous weight-law round: every robot evaluates its gradient on
/// the same diagram snapshot, then all weights update and the labels are
/// recomputed once.
pub fn step_w(
    env: &Environment,
    diagram: &mut PowerDiagram,
    workload: &WorkloadMap,
    config: &ControlConfig,
) -> Result<StepOutcome, PartitionError> {
    let boundaries = extract_boundaries(env, diagram);
    let n = diagram.robot_count();
    let mut grads = Vec::with_capacity(n);
    for i in 0..n {
        let view = neighbor_view(env, diagram, &boundaries, workload, i)?;
        grads.push(grad_weight_from_view(&view)?);
    }
    for (i, g) in grads.iter().enumerate() {
        diagram.weights_mut()[i] -= config.dt * config.gains.gain(g.abs()) * g;
    }
    diagram.reassign(env, workload);
    Ok(StepOutcome {
        f_sat_values: vec![0.0; n],
        grads,
    })
}

/// One synchronous weight-and-generator round. Weights update as in
/// [`step_w`]; each generator then moves along the geodesic path toward the
/// centroid of its heaviest component, gated by `f_sat` on the alignment
/// between that path and the negative generator gradient, capped at one
/// cell per round and projected back into free space.
pub fn step_wg(
    env: &Environment,
    diagram: &mut PowerDiagram,
    workload: &WorkloadMap,
    config: &ControlConfig,
) -> Result<StepOutcome, PartitionError> {
    let boundaries = extract_boundaries(env, diagram);
    let n = diagram.robot_count();
    let mut grads = Vec::with_capacity(n);
    let mut moves: Vec<Option<Point>> = vec![None; n];
    let mut sats = vec![0.0; n];
    for i in 0..n {
        let view = neighbor_view(env, diagram, &boundaries, workload, i)?;
        grads.push(grad_weight_from_view(&view)?);
        let grad_g = grad_generator_from_view(&view)?;
        let gi = diagram.generators()[i];
        let target = largest_component_centroid(env, diagram, workload, i as u16)?;
        let Some(to_target) = (target - gi).normalized() else {
            continue; // already at the centroid
        };
        let sat = f_sat(to_target.dot(-grad_g), config.k_sat);
        sats[i] = sat;
        if sat <= 0.0 {
            continue;
        }
        // direction of the geodesic path from g_i toward the centroid,
        // taken from g_i's own field (last chain waypoint before source)
        let chain = match diagram.field(i).string_pull(env, target) {
            Ok(c) => c,
            Err(_) => continue, // centroid unreachable: skip motion
        };
        let Some(h_last) = chain.last_hop() else {
            continue;
        };
        let Some(dir) = (h_last - gi).normalized() else {
            continue;
        };
        let step_len = (config.dt * config.k_g * sat).min(env.resolution());
        moves[i] = Some(gi + dir * step_len);
    }
    for (i, g) in grads.iter().enumerate() {
        diagram.weights_mut()[i] -= config.dt * config.gains.gain(g.abs()) * g;
    }
    for (i, m) in moves.iter().enumerate() {
        let Some(mut to) = *m else { continue };
        if env.free_cell_of(to).is_err() {
            match project_to_free(env, to) {
                Some(p) => to = p,
                None => continue,
            }
        }
        // never collapse two generators onto one cell
        let to_cell = env.free_cell_of(to)?;
        let clash = (0..diagram.robot_count())
            .filter(|&j| j != i)
            .any(|j| env.free_cell_of(diagram.generators()[j]).ok() == Some(to_cell));
        if clash {
            continue;
        }
        diagram.move_generator(env, i, to)?;
    }
    diagram.reassign(env, workload);
    Ok(StepOutcome {
        grads,
        f_sat_values: sats,
    })
}

/// Nearest free cell center within a small ring search.
fn project_to_free(env: &Environment, p: Point) -> Option<Point> {
    let res = env.resolution();
    let mut best: Option<(f64, Point)> = None;
    let c = ((p.x - env.origin().x) / res).floor() as i64;
    let r = ((p.y - env.origin().y) / res).floor() as i64;
    for radius in 0..=3i64 {
        for dc in -radius..=radius {
            for dr in -radius..=radius {
                if dc.abs().max(dr.abs()) != radius {
                    continue;
                }
                let (nc, nr) = (c + dc, r + dr);
                if !env.in_bounds(nc, nr) {
                    continue;
                }
                let cell = crate::environment::Cell::new(nc as u32, nr as u32);
                if !env.is_free(cell) {
                    continue;
                }
                let center = env.cell_center(cell);
                let d = center.distance(p);
                if best.map(|(bd, _)| d < bd).unwrap_or(true) {
                    best = Some((d, center));
                }
            }
        }
        if best.is_some() {
            return best.map(|(_, p)| p);
        }
    }
    None
}

/// Runs the selected control law until the capability-normalized share
/// spread drops below the target or the iteration budget is exhausted.
/// Deterministic. On non-convergence the best diagram seen is returned
/// with `converged = false`.
pub fn run_partitioning(
    env: &Environment,
    workload: &WorkloadMap,
    starts: &[Point],
    capabilities: Option<&[f64]>,
    config: &ControlConfig,
) -> Result<(PowerDiagram, PartitionRunState), PartitionError> {
    config.gains.validate()?;
    let weights = vec![0.0; starts.len()];
    let mut diagram = PowerDiagram::compute(env, workload, starts, &weights, capabilities)?;
    let mut state = PartitionRunState {
        iterations: 0,
        converged: false,
        records: Vec::new(),
        generator_paths: starts.iter().map(|&g| vec![g]).collect(),
    };
    let record =
        |diagram: &PowerDiagram, iteration: usize, outcome: Option<&StepOutcome>| IterationRecord {
            iteration,
            robots: (0..diagram.robot_count())
                .map(|i| RobotIterRecord {
                    workload_pct: diagram.workload_pct()[i],
                    weight: diagram.weights()[i],
                    grad_abs: outcome.map(|o| o.grads[i].abs()).unwrap_or(0.0),
                    f_sat: outcome.map(|o| o.f_sat_values[i]).unwrap_or(0.0),
                })
                .collect(),
        };
    state.records.push(record(&diagram, 0, None));
    if config.mode == Mode::Voronoi {
        // weights frozen at zero: the assignment itself is the result
        state.converged = true;
        return Ok((diagram, state));
    }
    if diagram.share_spread() < config.spread_target {
        state.converged = true;
        return Ok((diagram, state));
    }
    let mut best = (diagram.share_spread(), diagram.clone());
    for iteration in 1..=config.max_iters {
        let outcome = match config.mode {
            Mode::W => step_w(env, &mut diagram, workload, config)?,
            Mode::Wg => step_wg(env, &mut diagram, workload, config)?,
            Mode::Voronoi => unreachable!(),
        };
        state.iterations = iteration;
        state.records.push(record(&diagram, iteration, Some(&outcome)));
        for (path, &g) in state.generator_paths.iter_mut().zip(diagram.generators()) {
            if path.last().map(|&p| p.distance(g) > 1e-12).unwrap_or(true) {
                path.push(g);
            }
        }
        let spread = diagram.share_spread();
        if spread < best.0 {
            best = (spread, diagram.clone());
        }
        if spread < config.spread_target {
            state.converged = true;
            return Ok((diagram, state));
        }
    }
    Ok((best.1, state))
}
