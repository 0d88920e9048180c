//! Coverage field dynamics: decay recurrence, robot coverage actions, the
//! gain controller and quality metrics.
//!
//! The coverage level `Z` decays multiplicatively each step and robot
//! actions replenish it: `Z(q,k) = d(q) Z(q,k-1) + sum_i rho_i alpha_i(q,p_i)`.
//! The gain `rho` scales each robot's production to the fraction needed to
//! reach the objective `Z*` inside its footprint without overshooting.

use std::sync::Arc;

use thiserror::Error;

use crate::environment::{Cell, CellSet, Environment, Point};

#[derive(Debug, Error)]
pub enum CovdynError {
    #[error("field {name} out of range at cell index {idx}: {value}")]
    FieldOutOfRange {
        name: &'static str,
        idx: usize,
        value: f64,
    },
    #[error("field length {got} does not match grid size {want}")]
    FieldSize { got: usize, want: usize },
    #[error("rho {0} outside [0, rho_max={1}]")]
    BadRho(f64, f64),
}

/// Per-robot production function `alpha_i(q, p)`: how much coverage the
/// robot at `p` applies at point `q`. Zero outside a disk of the stated
/// radius.
pub trait Footprint: Send + Sync {
    fn alpha(&self, q: Point, p: Point) -> f64;
    fn radius(&self) -> f64;
}

/// Constant production inside a disk, the default profile.
#[derive(Debug, Clone)]
pub struct UniformDisk {
    pub radius: f64,
}

impl Footprint for UniformDisk {
    fn alpha(&self, q: Point, p: Point) -> f64 {
        if q.distance(p) <= self.radius {
            1.0
        } else {
            0.0
        }
    }

    fn radius(&self) -> f64 {
        self.radius
    }
}

/// A robot's physical model.
#[derive(Clone)]
pub struct RobotModel {
    pub id: usize,
    /// Body radius, used to erode the partition for graph construction.
    pub body_radius: f64,
    /// Travel distance per simulation step, in meters.
    pub speed: f64,
    /// Upper clamp for the coverage gain.
    pub rho_max: f64,
    pub footprint: Arc<dyn Footprint>,
}

impl std::fmt::Debug for RobotModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RobotModel")
            .field("id", &self.id)
            .field("body_radius", &self.body_radius)
            .field("coverage_radius", &self.coverage_radius())
            .field("speed", &self.speed)
            .field("rho_max", &self.rho_max)
            .finish()
    }
}

impl RobotModel {
    /// Robot with the default uniform-disk production of the given radius.
    pub fn uniform_disk(
        id: usize,
        body_radius: f64,
        coverage_radius: f64,
        speed: f64,
        rho_max: f64,
    ) -> Self {
        Self {
            id,
            body_radius,
            speed,
            rho_max,
            footprint: Arc::new(UniformDisk {
                radius: coverage_radius,
            }),
        }
    }

    pub fn coverage_radius(&self) -> f64 {
        self.footprint.radius()
    }
}

/// Outcome of the gain computation. `empty_footprint` flags a robot whose
/// footprint does not intersect free space (rho forced to zero).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoValue {
    pub rho: f64,
    pub rho_star: f64,
    pub empty_footprint: bool,
}

/// One coverage action to apply this step.
#[derive(Clone)]
pub struct CoverageAction<'a> {
    pub robot: &'a RobotModel,
    pub position: Point,
    pub rho: f64,
}

/// The mutable coverage state over the free cells of one environment.
#[derive(Debug, Clone)]
pub struct CoverageField {
    width: u32,
    height: u32,
    cell_area: f64,
    free: Vec<bool>,
    z: Vec<f64>,
    zstar: Vec<f64>,
    phi: Vec<f64>,
    decay: Vec<f64>,
    visits: Vec<u32>,
}

impl CoverageField {
    /// Creates a field with `Z = 0` everywhere (the uncovered initial
    /// condition). Validates `Z* > 0`, `0 < phi <= 1` and `0 < d < 1` on
    /// free cells.
    pub fn new(
        env: &Environment,
        zstar: Vec<f64>,
        phi: Vec<f64>,
        decay: Vec<f64>,
    ) -> Result<Self, CovdynError> {
        let n = env.num_cells();
        for (name, field) in [("zstar", &zstar), ("phi", &phi), ("decay", &decay)] {
            if field.len() != n {
                return Err(CovdynError::FieldSize {
                    got: field.len(),
                    want: n,
                });
            }
            for cell in env.free_cells() {
                let idx = env.idx(cell);
                let v = field[idx];
                let ok = match name {
                    "zstar" => v > 0.0,
                    "phi" => v > 0.0 && v <= 1.0,
                    _ => v > 0.0 && v < 1.0,
                };
                if !ok || !v.is_finite() {
                    return Err(CovdynError::FieldOutOfRange { name, idx, value: v });
                }
            }
        }
        Ok(Self {
            width: env.width(),
            height: env.height(),
            cell_area: env.cell_area(),
            free: (0..n).map(|i| env.is_free(env.cell_at(i))).collect(),
            z: vec![0.0; n],
            zstar,
            phi,
            decay,
            visits: vec![0; n],
        })
    }

    fn idx(&self, cell: Cell) -> usize {
        (cell.row as usize) * (self.width as usize) + cell.col as usize
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        cell.col < self.width && cell.row < self.height && self.free[self.idx(cell)]
    }

    pub fn z(&self, cell: Cell) -> f64 {
        self.z[self.idx(cell)]
    }

    pub fn zstar(&self, cell: Cell) -> f64 {
        self.zstar[self.idx(cell)]
    }

    pub fn phi(&self, cell: Cell) -> f64 {
        self.phi[self.idx(cell)]
    }

    pub fn decay(&self, cell: Cell) -> f64 {
        self.decay[self.idx(cell)]
    }

    pub fn visits(&self, cell: Cell) -> u32 {
        self.visits[self.idx(cell)]
    }

    pub fn visit_counts(&self) -> &[u32] {
        &self.visits
    }

    pub fn z_field(&self) -> &[f64] {
        &self.z
    }

    pub fn zstar_field(&self) -> &[f64] {
        &self.zstar
    }

    pub fn phi_field(&self) -> &[f64] {
        &self.phi
    }

    pub fn decay_field(&self) -> &[f64] {
        &self.decay
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_area
    }

    /// Overrides the coverage level, for tests and replays.
    pub fn set_z(&mut self, z: Vec<f64>) -> Result<(), CovdynError> {
        if z.len() != self.z.len() {
            return Err(CovdynError::FieldSize {
                got: z.len(),
                want: self.z.len(),
            });
        }
        self.z = z;
        Ok(())
    }

    /// The gain `rho_i`: the fraction of the robot's production needed to
    /// lift its footprint to the objective, clamped to `[0, rho_max]`.
    pub fn compute_rho(&self, env: &Environment, robot: &RobotModel, position: Point) -> RhoValue {
        let mut num = 0.0;
        let mut den = 0.0;
        self.for_footprint_cells(env, robot, position, |idx, _cell, alpha| {
            let phi = self.phi[idx];
            num += phi * (self.zstar[idx] - self.decay[idx] * self.z[idx]) * alpha;
            den += phi * alpha * alpha;
        });
        if den <= 0.0 {
            return RhoValue {
                rho: 0.0,
                rho_star: 0.0,
                empty_footprint: true,
            };
        }
        let rho_star = num / den;
        RhoValue {
            rho: rho_star.clamp(0.0, robot.rho_max),
            rho_star,
            empty_footprint: false,
        }
    }

    fn for_footprint_cells(
        &self,
        env: &Environment,
        robot: &RobotModel,
        position: Point,
        mut f: impl FnMut(usize, Cell, f64),
    ) {
        let r = robot.coverage_radius();
        let res = env.resolution();
        let lo_col = (((position.x - r - env.origin().x) / res).floor().max(0.0)) as u32;
        let lo_row = (((position.y - r - env.origin().y) / res).floor().max(0.0)) as u32;
        let hi_col = ((((position.x + r - env.origin().x) / res).ceil()) as i64)
            .clamp(0, self.width as i64) as u32;
        let hi_row = ((((position.y + r - env.origin().y) / res).ceil()) as i64)
            .clamp(0, self.height as i64) as u32;
        for row in lo_row..hi_row {
            for col in lo_col..hi_col {
                let cell = Cell::new(col, row);
                let idx = self.idx(cell);
                if !self.free[idx] {
                    continue;
                }
                let alpha = robot.footprint.alpha(env.cell_center(cell), position);
                if alpha > 0.0 {
                    f(idx, cell, alpha);
                }
            }
        }
    }

    /// Advances the field one step: decay everywhere plus the superposed
    /// robot actions. Increments visit counts where a cell received a
    /// strictly positive action.
    pub fn apply_actions(
        &mut self,
        env: &Environment,
        actions: &[CoverageAction<'_>],
    ) -> Result<(), CovdynError> {
        for a in actions {
            if a.rho < 0.0 || a.rho > a.robot.rho_max {
                return Err(CovdynError::BadRho(a.rho, a.robot.rho_max));
            }
        }
        let mut applied = vec![0.0f64; self.z.len()];
        for a in actions {
            self.for_footprint_cells(env, a.robot, a.position, |idx, _cell, alpha| {
                applied[idx] += a.rho * alpha;
            });
        }
        for i in 0..self.z.len() {
            if !self.free[i] {
                continue;
            }
            self.z[i] = self.decay[i] * self.z[i] + applied[i];
            if applied[i] > 0.0 {
                self.visits[i] += 1;
            }
        }
        Ok(())
    }

    /// Per-cell coverage error `e = phi (Z* - Z)`; zero on obstacle cells.
    pub fn coverage_error(&self) -> Vec<f64> {
        (0..self.z.len())
            .map(|i| {
                if self.free[i] {
                    self.phi[i] * (self.zstar[i] - self.z[i])
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Quadratic coverage error over a cell set: `sum e^2 * cellArea`.
    pub fn quadratic_error_over(&self, cells: &CellSet) -> f64 {
        cells
            .iter()
            .map(|c| {
                let idx = self.idx(c);
                if !self.free[idx] {
                    return 0.0;
                }
                let e = self.phi[idx] * (self.zstar[idx] - self.z[idx]);
                e * e * self.cell_area
            })
            .sum()
    }

    /// Quadratic coverage error over the whole free set.
    pub fn quadratic_error(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.z.len() {
            if self.free[i] {
                let e = self.phi[i] * (self.zstar[i] - self.z[i]);
                acc += e * e * self.cell_area;
            }
        }
        acc
    }

    /// Field quality metrics at the current step.
    pub fn metrics(&self) -> FieldMetrics {
        let mut eps = Vec::new();
        let mut cov = Vec::new();
        for i in 0..self.z.len() {
            if !self.free[i] {
                continue;
            }
            let e = self.phi[i] * (self.zstar[i] - self.z[i]);
            eps.push(e / (self.zstar[i] * self.zstar[i]));
            cov.push(self.z[i]);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let std = |v: &[f64], m: f64| {
            (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
        };
        let mean_err = mean(&eps);
        let mean_cov = mean(&cov);
        FieldMetrics {
            mean_err,
            std_err: std(&eps, mean_err),
            mean_cov,
            std_cov: std(&cov, mean_cov),
        }
    }
}

/// Normalized-error and coverage-level summary of one field state.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct FieldMetrics {
    /// Mean over free cells of `e / Z*^2`.
    pub mean_err: f64,
    pub std_err: f64,
    pub mean_cov: f64,
    pub std_cov: f64,
}

/// Scalar field `base + slope * q_y / |Q|_y` sampled at cell centers.
pub fn ramp_y_field(env: &Environment, base: f64, slope: f64) -> Vec<f64> {
    let (_, size_y) = env.world_size();
    (0..env.num_cells())
        .map(|i| {
            let q = env.cell_center(env.cell_at(i));
            base + slope * (q.y - env.origin().y) / size_y
        })
        .collect()
}

pub fn uniform_field(env: &Environment, value: f64) -> Vec<f64> {
    vec![value; env.num_cells()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::Environment;

    fn open_env(w: u32, h: u32, res: f64) -> Environment {
        Environment::from_parts(w, h, res, vec![true; (w * h) as usize]).unwrap()
    }

    fn field_with(env: &Environment, zstar: f64, phi: f64, decay: f64) -> CoverageField {
        CoverageField::new(
            env,
            uniform_field(env, zstar),
            uniform_field(env, phi),
            uniform_field(env, decay),
        )
        .unwrap()
    }

    #[test]
    fn rho_uniform_steady_state() {
        // Z = Z* uniform: the gain equals (1 - d) Z*
        let env = open_env(20, 20, 0.1);
        let mut field = field_with(&env, 80.0, 1.0, 0.9995);
        field.set_z(uniform_field(&env, 80.0)).unwrap();
        let robot = RobotModel::uniform_disk(0, 0.1, 0.5, 0.1, 1.0);
        let rho = field.compute_rho(&env, &robot, Point::new(1.0, 1.0));
        assert!((rho.rho - 0.04).abs() < 1e-12, "rho = {}", rho.rho);
        assert!(!rho.empty_footprint);
    }

    #[test]
    fn rho_zero_when_decayed_level_meets_objective() {
        let env = open_env(10, 10, 0.1);
        let mut field = field_with(&env, 80.0, 0.7, 0.5);
        // d * Z = Z* everywhere
        field.set_z(uniform_field(&env, 160.0)).unwrap();
        let robot = RobotModel::uniform_disk(0, 0.1, 0.3, 0.1, 1.0);
        let rho = field.compute_rho(&env, &robot, Point::new(0.5, 0.5));
        assert_eq!(rho.rho, 0.0);
        assert!(rho.rho_star.abs() < 1e-12);
    }

    #[test]
    fn rho_clamps_to_rho_max() {
        let env = open_env(10, 10, 0.1);
        let field = field_with(&env, 80.0, 1.0, 0.9995);
        let robot1 = RobotModel::uniform_disk(0, 0.1, 0.3, 0.1, 1.0);
        let rho1 = field.compute_rho(&env, &robot1, Point::new(0.5, 0.5));
        assert!((rho1.rho_star - 80.0).abs() < 1e-9);
        assert_eq!(rho1.rho, 1.0);
        // the configurable cap admits the larger reading
        let robot20 = RobotModel::uniform_disk(0, 0.1, 0.3, 0.1, 20.0);
        let rho20 = field.compute_rho(&env, &robot20, Point::new(0.5, 0.5));
        assert_eq!(rho20.rho, 20.0);
    }

    #[test]
    fn rho_flags_footprint_outside_free_space() {
        let env = Environment::from_ascii("..####\n..####\n..####\n", 1.0).unwrap();
        let field = field_with(&env, 80.0, 1.0, 0.9995);
        let robot = RobotModel::uniform_disk(0, 0.1, 0.4, 0.1, 1.0);
        // footprint entirely over the obstacle block
        let rho = field.compute_rho(&env, &robot, Point::new(4.5, 1.5));
        assert!(rho.empty_footprint);
        assert_eq!(rho.rho, 0.0);
    }

    #[test]
    fn apply_no_actions_is_pure_decay() {
        let env = open_env(8, 8, 0.5);
        let mut field = field_with(&env, 10.0, 1.0, 0.9);
        field.set_z(uniform_field(&env, 5.0)).unwrap();
        field.apply_actions(&env, &[]).unwrap();
        for cell in env.free_cells() {
            assert!((field.z(cell) - 4.5).abs() < 1e-12);
            assert_eq!(field.visits(cell), 0);
        }
    }

    #[test]
    fn apply_single_disk_action() {
        let env = open_env(20, 20, 0.1);
        let mut field = field_with(&env, 80.0, 1.0, 0.9995);
        let robot = RobotModel::uniform_disk(0, 0.1, 0.35, 0.1, 1.0);
        let p = Point::new(1.0, 1.0);
        field
            .apply_actions(
                &env,
                &[CoverageAction {
                    robot: &robot,
                    position: p,
                    rho: 1.0,
                }],
            )
            .unwrap();
        for cell in env.free_cells() {
            let inside = env.cell_center(cell).distance(p) <= 0.35;
            let z = field.z(cell);
            if inside {
                assert!((z - 1.0).abs() < 1e-12);
                assert_eq!(field.visits(cell), 1);
            } else {
                assert_eq!(z, 0.0);
                assert_eq!(field.visits(cell), 0);
            }
        }
    }

    #[test]
    fn overlapping_actions_superpose() {
        let env = open_env(20, 20, 0.1);
        let mut field = field_with(&env, 80.0, 1.0, 0.9995);
        let r0 = RobotModel::uniform_disk(0, 0.1, 0.3, 0.1, 1.0);
        let r1 = RobotModel::uniform_disk(1, 0.1, 0.3, 0.1, 1.0);
        field
            .apply_actions(
                &env,
                &[
                    CoverageAction {
                        robot: &r0,
                        position: Point::new(0.9, 1.0),
                        rho: 1.0,
                    },
                    CoverageAction {
                        robot: &r1,
                        position: Point::new(1.1, 1.0),
                        rho: 1.0,
                    },
                ],
            )
            .unwrap();
        let mid = env.world_to_cell(Point::new(1.0, 1.0)).unwrap();
        assert!((field.z(mid) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn coverage_error_signs() {
        let env = open_env(6, 6, 1.0);
        let mut field = field_with(&env, 100.0, 0.5, 0.9);
        let e0 = field.coverage_error();
        for cell in env.free_cells() {
            assert!((e0[env.idx(cell)] - 50.0).abs() < 1e-12);
        }
        field.set_z(uniform_field(&env, 100.0)).unwrap();
        assert!(field.coverage_error().iter().all(|&e| e == 0.0));
        field.set_z(uniform_field(&env, 200.0)).unwrap();
        for cell in env.free_cells() {
            assert!((field.coverage_error()[env.idx(cell)] + 50.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_error_uniform_and_zero() {
        let env = open_env(5, 4, 0.5);
        let mut field = field_with(&env, 10.0, 1.0, 0.9);
        // e = 2 everywhere: phi (Z* - Z) = 10 - 8
        field.set_z(uniform_field(&env, 8.0)).unwrap();
        let area = env.free_count() as f64 * env.cell_area();
        assert!((field.quadratic_error() - 4.0 * area).abs() < 1e-9);
        field.set_z(uniform_field(&env, 10.0)).unwrap();
        assert_eq!(field.quadratic_error(), 0.0);
    }

    #[test]
    fn quadratic_error_is_additive_over_partitions() {
        use rand::prelude::*;
        let env = open_env(12, 9, 0.3);
        let mut field = field_with(&env, 50.0, 0.8, 0.99);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let z: Vec<f64> = (0..env.num_cells())
            .map(|_| rng.gen_range(0.0..100.0))
            .collect();
        field.set_z(z).unwrap();
        // random 3-way partition of the free set
        let mut sets = vec![
            CellSet::empty(12, 9),
            CellSet::empty(12, 9),
            CellSet::empty(12, 9),
        ];
        for cell in env.free_cells() {
            sets[rng.gen_range(0..3)].insert(cell);
        }
        let total = field.quadratic_error();
        let parts: f64 = sets.iter().map(|s| field.quadratic_error_over(s)).sum();
        assert!((total - parts).abs() <= 1e-9 * total.max(1.0));
    }

    #[test]
    fn metrics_normalization() {
        let env = open_env(10, 10, 0.2);
        let field = field_with(&env, 100.0, 0.7, 0.9995);
        let m = field.metrics();
        // Z = 0: eps = 0.7 * 100 / 100^2 per cell
        assert!((m.mean_err - 0.007).abs() < 1e-12);
        assert!(m.std_err < 1e-12);
        assert_eq!(m.mean_cov, 0.0);
    }

    #[test]
    fn metrics_zero_at_objective() {
        let env = open_env(10, 10, 0.2);
        let mut field = field_with(&env, 100.0, 0.7, 0.9995);
        field.set_z(uniform_field(&env, 100.0)).unwrap();
        let m = field.metrics();
        assert_eq!(m.mean_err, 0.0);
        assert_eq!(m.std_err, 0.0);
        assert!((m.mean_cov - 100.0).abs() < 1e-12);
    }

    #[test]
    fn decay_only_geometric_envelope() {
        let env = open_env(7, 7, 0.5);
        let mut field = field_with(&env, 10.0, 1.0, 0.97);
        field.set_z(uniform_field(&env, 3.0)).unwrap();
        let mut reference = 3.0f64;
        for _ in 0..25 {
            field.apply_actions(&env, &[]).unwrap();
            reference *= 0.97;
        }
        for cell in env.free_cells() {
            assert_eq!(field.z(cell), reference);
        }
    }

    #[test]
    fn steady_state_bound_holds() {
        use rand::prelude::*;
        let env = open_env(15, 15, 0.2);
        let mut field = field_with(&env, 80.0, 1.0, 0.95);
        let robots: Vec<RobotModel> = (0..3)
            .map(|i| RobotModel::uniform_disk(i, 0.1, 0.4, 0.2, 1.0))
            .collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let bound = 1.0 * 1.0 * 3.0 / (1.0 - 0.95);
        for _ in 0..200 {
            let actions: Vec<CoverageAction<'_>> = robots
                .iter()
                .map(|r| CoverageAction {
                    robot: r,
                    position: Point::new(rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0)),
                    rho: rng.gen_range(0.0..=1.0),
                })
                .collect();
            field.apply_actions(&env, &actions).unwrap();
            for cell in env.free_cells() {
                assert!(field.z(cell) <= bound + 1e-9);
            }
        }
    }

    #[test]
    fn controller_never_acts_on_overshoot() {
        let env = open_env(10, 10, 0.1);
        let mut field = field_with(&env, 50.0, 1.0, 0.9);
        // d Z = 54 > Z* everywhere in the footprint
        field.set_z(uniform_field(&env, 60.0)).unwrap();
        let robot = RobotModel::uniform_disk(0, 0.1, 0.3, 0.1, 1.0);
        let rho = field.compute_rho(&env, &robot, Point::new(0.5, 0.5));
        assert_eq!(rho.rho, 0.0);
        assert!(rho.rho_star < 0.0);
    }

    #[test]
    fn ramp_field_spans_declared_range() {
        let env = open_env(10, 20, 0.5);
        let f = ramp_y_field(&env, 80.0, 20.0);
        let bottom = f[env.idx(Cell::new(0, 0))];
        let top = f[env.idx(Cell::new(0, 19))];
        // cell centers sit half a cell inside the extremes
        assert!((bottom - (80.0 + 20.0 * 0.25 / 10.0)).abs() < 1e-12);
        assert!((top - (80.0 + 20.0 * 9.75 / 10.0)).abs() < 1e-12);
        assert!(bottom < top);
    }

    #[test]
    fn field_validation_rejects_bad_ranges() {
        let env = open_env(4, 4, 1.0);
        let bad_decay = CoverageField::new(
            &env,
            uniform_field(&env, 10.0),
            uniform_field(&env, 1.0),
            uniform_field(&env, 1.0),
        );
        assert!(matches!(bad_decay, Err(CovdynError::FieldOutOfRange { .. })));
        let bad_phi = CoverageField::new(
            &env,
            uniform_field(&env, 10.0),
            uniform_field(&env, 1.5),
            uniform_field(&env, 0.9),
        );
        assert!(matches!(bad_phi, Err(CovdynError::FieldOutOfRange { .. })));
    }
}
