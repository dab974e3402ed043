//! Gauss-Newton on products of SE(3) with finite-difference Jacobians.
//!
//! Variables are poses updated by right perturbation `T <- T * exp(delta)`.
//! Each residual block maps the poses it references to a 6-vector weighted
//! by an information matrix. Variables that never share a residual block are
//! eliminated with a block Schur complement before the dense solve, which
//! keeps object/camera windows cheap.

use std::io::Write;

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, Pose};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("normal equations are singular")]
    SingularNormalEquations,
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type ResidualFn = Box<dyn Fn(&[Pose]) -> Result<Vector6<f64>, GeometryError> + Send + Sync>;

pub struct ResidualBlock {
    vars: Vec<usize>,
    info: Matrix6<f64>,
    f: ResidualFn,
}

impl ResidualBlock {
    pub fn vars(&self) -> &[usize] {
        &self.vars
    }

    pub fn info(&self) -> &Matrix6<f64> {
        &self.info
    }

    fn evaluate(&self, poses: &[Pose], buf: &mut Vec<Pose>) -> Result<Vector6<f64>, GeometryError> {
        buf.clear();
        buf.extend(self.vars.iter().map(|&v| poses[v]));
        (self.f)(buf)
    }
}

/// Nonlinear least-squares problem over poses.
#[derive(Default)]
pub struct Problem {
    poses: Vec<Pose>,
    fixed: Vec<bool>,
    blocks: Vec<ResidualBlock>,
}

impl Problem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(&mut self, pose: Pose, fixed: bool) -> usize {
        self.poses.push(pose);
        self.fixed.push(fixed);
        self.poses.len() - 1
    }

    /// Adds a residual over `vars` with information matrix `info`. The
    /// closure receives the referenced poses in the order of `vars`.
    pub fn add_residual<F>(&mut self, vars: &[usize], info: Matrix6<f64>, f: F) -> Result<(), SolverError>
    where
        F: Fn(&[Pose]) -> Result<Vector6<f64>, GeometryError> + Send + Sync + 'static,
    {
        if let Some(&v) = vars.iter().find(|&&v| v >= self.poses.len()) {
            return Err(SolverError::InvalidProblem(format!(
                "residual references missing variable {v}"
            )));
        }
        if (info - info.transpose()).abs().max() > 1e-12 * info.abs().max().max(1.0) {
            return Err(SolverError::InvalidProblem(
                "information matrix is not symmetric".into(),
            ));
        }
        if info.cholesky().is_none() {
            return Err(SolverError::InvalidProblem(
                "information matrix is not positive definite".into(),
            ));
        }
        self.blocks.push(ResidualBlock {
            vars: vars.to_vec(),
            info,
            f: Box::new(f),
        });
        Ok(())
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn pose(&self, var: usize) -> &Pose {
        &self.poses[var]
    }

    pub fn is_fixed(&self, var: usize) -> bool {
        self.fixed[var]
    }

    pub fn blocks(&self) -> &[ResidualBlock] {
        &self.blocks
    }

    pub fn num_free(&self) -> usize {
        self.fixed.iter().filter(|f| !**f).count()
    }

    pub fn cost(&self) -> Result<f64, GeometryError> {
        cost_at(&self.blocks, &self.poses)
    }

    pub fn into_poses(self) -> Vec<Pose> {
        self.poses
    }
}

fn cost_at(blocks: &[ResidualBlock], poses: &[Pose]) -> Result<f64, GeometryError> {
    let mut buf = Vec::new();
    let mut total = 0.0;
    for b in blocks {
        let r = b.evaluate(poses, &mut buf)?;
        total += r.dot(&(b.info * r));
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GnConfig {
    pub max_iterations: usize,
    /// Stop once the infinity norm of the step falls below this.
    pub tolerance: f64,
    pub max_halvings: usize,
    pub fd_step: f64,
}

impl Default for GnConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-8,
            max_halvings: 10,
            fd_step: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    pub step_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
    pub trace: Vec<IterationRecord>,
}

impl SolveReport {
    /// CSV with header `iteration,cost,step_norm`.
    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iteration,cost,step_norm")?;
        for r in &self.trace {
            writeln!(w, "{},{:e},{:e}", r.iteration, r.cost, r.step_norm)?;
        }
        Ok(())
    }
}

/// Position of a free variable in the linear system.
#[derive(Clone, Copy)]
enum Slot {
    Fixed,
    /// Kept in the dense reduced system at this block index.
    Dense(usize),
    /// Eliminated; index into the per-variable block-diagonal store.
    Eliminated(usize),
}

/// Picks an independent set of free variables (no two share a residual
/// block), preferring low-degree variables, to eliminate first.
fn plan_slots(p: &Problem) -> Vec<Slot> {
    let n = p.poses.len();
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut touched = vec![false; n];
    for b in &p.blocks {
        for &a in &b.vars {
            touched[a] = true;
            for &c in &b.vars {
                if a != c && !p.fixed[c] && !neighbors[a].contains(&c) {
                    neighbors[a].push(c);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).filter(|&v| !p.fixed[v]).collect();
    order.sort_by_key(|&v| (neighbors[v].len(), v));
    let mut eliminated = vec![false; n];
    let mut blocked = vec![false; n];
    for &v in &order {
        // A variable in a block with itself twice would need a dense slot.
        let self_coupled = p.blocks.iter().any(|b| b.vars.iter().filter(|&&x| x == v).count() > 1);
        if !blocked[v] && touched[v] && !self_coupled {
            eliminated[v] = true;
            for &u in &neighbors[v] {
                blocked[u] = true;
            }
        }
    }
    let mut slots = vec![Slot::Fixed; n];
    let (mut nd, mut ne) = (0, 0);
    for v in 0..n {
        if p.fixed[v] {
            continue;
        }
        if eliminated[v] {
            slots[v] = Slot::Eliminated(ne);
            ne += 1;
        } else {
            slots[v] = Slot::Dense(nd);
            nd += 1;
        }
    }
    slots
}

struct Linearization {
    dense_h: DMatrix<f64>,
    dense_g: DVector<f64>,
    elim_h: Vec<Matrix6<f64>>,
    elim_g: Vec<Vector6<f64>>,
    /// Per eliminated variable: coupling blocks H[dense, elim].
    coupling: Vec<Vec<(usize, Matrix6<f64>)>>,
}

fn add_coupling(list: &mut Vec<(usize, Matrix6<f64>)>, d: usize, m: Matrix6<f64>) {
    match list.iter_mut().find(|(i, _)| *i == d) {
        Some((_, acc)) => *acc += m,
        None => list.push((d, m)),
    }
}

/// Central-difference Jacobian of `f` with respect to a right perturbation of
/// `poses[k]`. `poses` is restored before returning.
pub fn numeric_jacobian<F>(f: &F, poses: &mut [Pose], k: usize, h: f64) -> Result<Matrix6<f64>, GeometryError>
where
    F: Fn(&[Pose]) -> Result<Vector6<f64>, GeometryError> + ?Sized,
{
    let base = poses[k];
    let mut jac = Matrix6::zeros();
    for axis in 0..6 {
        let mut d = Vector6::zeros();
        d[axis] = h;
        poses[k] = base.retract(&d);
        let plus = f(poses);
        d[axis] = -h;
        poses[k] = base.retract(&d);
        let minus = f(poses);
        poses[k] = base;
        jac.set_column(axis, &((plus? - minus?) / (2.0 * h)));
    }
    Ok(jac)
}

fn linearize(
    p: &Problem,
    slots: &[Slot],
    n_dense: usize,
    n_elim: usize,
    h: f64,
) -> Result<Linearization, GeometryError> {
    let mut lin = Linearization {
        dense_h: DMatrix::zeros(6 * n_dense, 6 * n_dense),
        dense_g: DVector::zeros(6 * n_dense),
        elim_h: vec![Matrix6::zeros(); n_elim],
        elim_g: vec![Vector6::zeros(); n_elim],
        coupling: vec![Vec::new(); n_elim],
    };
    let mut local: Vec<Pose> = Vec::new();
    let mut jacobians: Vec<(Slot, Matrix6<f64>)> = Vec::new();
    for b in &p.blocks {
        local.clear();
        local.extend(b.vars.iter().map(|&v| p.poses[v]));
        let r = (b.f)(&local)?;
        jacobians.clear();
        for (k, &v) in b.vars.iter().enumerate() {
            if p.fixed[v] {
                continue;
            }
            let jac = numeric_jacobian(&b.f, &mut local, k, h)?;
            jacobians.push((slots[v], jac));
        }
        let wr = b.info * r;
        for (i, (si, ji)) in jacobians.iter().enumerate() {
            let jt_w = ji.transpose() * b.info;
            let gi = ji.transpose() * wr;
            match *si {
                Slot::Dense(a) => {
                    let mut seg = lin.dense_g.fixed_rows_mut::<6>(6 * a);
                    seg += gi;
                }
                Slot::Eliminated(e) => lin.elim_g[e] += gi,
                Slot::Fixed => unreachable!(),
            }
            for (sj, jj) in jacobians.iter().skip(i) {
                let hij = jt_w * jj;
                match (*si, *sj) {
                    (Slot::Dense(a), Slot::Dense(c)) => {
                        let mut blk = lin.dense_h.fixed_view_mut::<6, 6>(6 * a, 6 * c);
                        blk += hij;
                        if a != c {
                            let mut blk_t = lin.dense_h.fixed_view_mut::<6, 6>(6 * c, 6 * a);
                            blk_t += hij.transpose();
                        }
                    }
                    (Slot::Eliminated(e), Slot::Eliminated(f)) => {
                        debug_assert_eq!(e, f);
                        lin.elim_h[e] += hij;
                    }
                    (Slot::Dense(a), Slot::Eliminated(e)) => add_coupling(&mut lin.coupling[e], a, hij),
                    (Slot::Eliminated(e), Slot::Dense(a)) => add_coupling(&mut lin.coupling[e], a, hij.transpose()),
                    _ => unreachable!(),
                }
            }
        }
    }
    Ok(lin)
}

/// Solves `H delta = -g`, returning per-variable steps (zero for fixed).
fn solve_step(lin: Linearization, slots: &[Slot], n_dense: usize) -> Result<Vec<Vector6<f64>>, SolverError> {
    let Linearization {
        mut dense_h,
        mut dense_g,
        elim_h,
        elim_g,
        coupling,
    } = lin;
    let mut elim_inv = Vec::with_capacity(elim_h.len());
    for (e, he) in elim_h.iter().enumerate() {
        let inv = he.cholesky().ok_or(SolverError::SingularNormalEquations)?.inverse();
        let ge = inv * elim_g[e];
        for (i, (a, ba)) in coupling[e].iter().enumerate() {
            let ba_inv = ba * inv;
            let mut seg = dense_g.fixed_rows_mut::<6>(6 * a);
            seg -= ba * ge;
            for (c, bc) in coupling[e].iter().skip(i) {
                let s = ba_inv * bc.transpose();
                let mut blk = dense_h.fixed_view_mut::<6, 6>(6 * a, 6 * c);
                blk -= s;
                if a != c {
                    let mut blk_t = dense_h.fixed_view_mut::<6, 6>(6 * c, 6 * a);
                    blk_t -= s.transpose();
                }
            }
        }
        elim_inv.push(inv);
    }
    let dense_step = if n_dense > 0 {
        let band = bandwidth(&dense_h);
        if band * 4 < dense_h.nrows() {
            -banded_cholesky_solve(dense_h, &dense_g, band)?
        } else {
            let chol = dense_h.cholesky().ok_or(SolverError::SingularNormalEquations)?;
            -chol.solve(&dense_g)
        }
    } else {
        DVector::zeros(0)
    };
    let mut steps = vec![Vector6::zeros(); slots.len()];
    for (v, slot) in slots.iter().enumerate() {
        match *slot {
            Slot::Fixed => {}
            Slot::Dense(a) => steps[v] = dense_step.fixed_rows::<6>(6 * a).into_owned(),
            Slot::Eliminated(e) => {
                let mut rhs = -elim_g[e];
                for (a, ba) in &coupling[e] {
                    rhs -= ba.transpose() * dense_step.fixed_rows::<6>(6 * a);
                }
                steps[v] = elim_inv[e] * rhs;
            }
        }
    }
    if steps.iter().any(|s| !s.iter().all(|x| x.is_finite())) {
        return Err(SolverError::SingularNormalEquations);
    }
    Ok(steps)
}

/// Largest `i - j` over nonzero entries below the diagonal.
fn bandwidth(m: &DMatrix<f64>) -> usize {
    let n = m.nrows();
    (0..n)
        .map(|j| (j..n).rev().find(|&i| m[(i, j)] != 0.0).map_or(0, |i| i - j))
        .max()
        .unwrap_or(0)
}

/// Cholesky solve touching only entries within `band` of the diagonal.
fn banded_cholesky_solve(mut a: DMatrix<f64>, b: &DVector<f64>, band: usize) -> Result<DVector<f64>, SolverError> {
    let n = a.nrows();
    for j in 0..n {
        let lo = j.saturating_sub(band);
        let mut d = a[(j, j)];
        for k in lo..j {
            d -= a[(j, k)] * a[(j, k)];
        }
        if !(d > 0.0) {
            return Err(SolverError::SingularNormalEquations);
        }
        let d = d.sqrt();
        a[(j, j)] = d;
        for i in j + 1..n.min(j + band + 1) {
            let mut s = a[(i, j)];
            for k in i.saturating_sub(band).max(lo)..j {
                s -= a[(i, k)] * a[(j, k)];
            }
            a[(i, j)] = s / d;
        }
    }
    let mut x = b.clone();
    for i in 0..n {
        let mut s = x[i];
        for k in i.saturating_sub(band)..i {
            s -= a[(i, k)] * x[k];
        }
        x[i] = s / a[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n.min(i + band + 1) {
            s -= a[(k, i)] * x[k];
        }
        x[i] = s / a[(i, i)];
    }
    Ok(x)
}

fn apply_steps(poses: &[Pose], steps: &[Vector6<f64>], scale: f64) -> Vec<Pose> {
    poses
        .iter()
        .zip(steps)
        .map(|(p, s)| {
            if s.iter().all(|x| *x == 0.0) {
                *p
            } else {
                p.retract(&(s * scale))
            }
        })
        .collect()
}

/// Minimizes the problem in place.
pub fn solve_gauss_newton(p: &mut Problem, cfg: &GnConfig) -> Result<SolveReport, SolverError> {
    let initial_cost = p.cost()?;
    let mut report = SolveReport {
        iterations: 0,
        initial_cost,
        final_cost: initial_cost,
        converged: false,
        trace: vec![IterationRecord {
            iteration: 0,
            cost: initial_cost,
            step_norm: 0.0,
        }],
    };
    if p.num_free() == 0 || initial_cost == 0.0 {
        report.converged = true;
        return Ok(report);
    }
    for v in 0..p.poses.len() {
        if !p.fixed[v] && !p.blocks.iter().any(|b| b.vars.contains(&v)) {
            return Err(SolverError::SingularNormalEquations);
        }
    }
    let slots = plan_slots(p);
    let n_dense = slots.iter().filter(|s| matches!(s, Slot::Dense(_))).count();
    let n_elim = slots.iter().filter(|s| matches!(s, Slot::Eliminated(_))).count();

    let mut cost = initial_cost;
    for it in 1..=cfg.max_iterations {
        let lin = linearize(p, &slots, n_dense, n_elim, cfg.fd_step)?;
        let steps = solve_step(lin, &slots, n_dense)?;
        let step_norm = steps.iter().map(|s| s.amax()).fold(0.0, f64::max);
        if step_norm < cfg.tolerance {
            report.converged = true;
            break;
        }
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let trial = apply_steps(&p.poses, &steps, scale);
            // A trial that crosses the log singularity counts as a cost increase.
            if let Ok(c) = cost_at(&p.blocks, &trial) {
                if c <= cost {
                    accepted = Some((trial, c));
                    break;
                }
            }
            scale *= 0.5;
        }
        let Some((trial, c)) = accepted else {
            break;
        };
        p.poses = trial;
        cost = c;
        report.iterations = it;
        report.trace.push(IterationRecord {
            iteration: it,
            cost,
            step_norm: step_norm * scale,
        });
        if cost == 0.0 || step_norm * scale < cfg.tolerance {
            report.converged = true;
            break;
        }
    }
    report.final_cost = cost;
    Ok(report)
}
