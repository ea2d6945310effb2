use super::{normalize_angle, ControlInput, DeadlineMode, NmpcConfig, Prioritized, RobotState};
use crate::geometry::{membership_margin, propagate, CanonicalEllipse};
use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::Serialize;

type Matrix8 = SMatrix<f64, 8, 8>;
type Matrix8x3 = SMatrix<f64, 8, 3>;
type Matrix3x8 = SMatrix<f64, 3, 8>;
type Vector8 = SVector<f64, 8>;
use std::time::Instant;

/// Lateral input added to every initial guess so that exactly symmetric
/// head-on encounters do not stall on the ridge of the penalty.
const SYMMETRY_NUDGE: f64 = -0.01;

/// Worst violation of a warm start below which the solve starts at the
/// last penalty of the schedule.
const WARM_FEASIBLE: f64 = 0.05;

/// Outer iterations at the last penalty stop once the worst violation
/// shrinks by less than this factor.
const STALL_RATIO: f64 = 0.9;

/// Iterations one inner solve may spend before the outer loop reviews
/// progress.
const INNER_LIMIT: usize = 100;

/// Relative cost decrease below which an inner step counts as stalled.
const STALL_IMPROVEMENT: f64 = 1e-9;

/// Output of one control-tick solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Solution {
    /// Input actually applied: the first optimized input, or the previous
    /// input on timeout or failure.
    pub applied: ControlInput,
    pub inputs: Vec<ControlInput>,
    /// Predicted states for steps `0..=N` under `inputs`.
    pub states: Vec<RobotState>,
    pub solve_time_ms: f64,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    pub converged: bool,
    pub timeout: bool,
    pub failed: bool,
    /// Largest obstacle penalty over steps `1..=N`.
    pub max_obstacle_violation: f64,
    /// Largest field-of-view penalty over steps `1..=N`.
    pub max_tracking_violation: f64,
    /// Objective at the initial guess under the first multiplier.
    pub initial_cost: f64,
    pub final_cost: f64,
}

impl Solution {
    pub fn max_constraint_violation(&self) -> f64 {
        self.max_obstacle_violation.max(self.max_tracking_violation)
    }
}

/// Penalty-method single-shooting solver.
#[derive(Debug, Clone)]
pub struct NmpcSolver {
    cfg: NmpcConfig,
}

struct Problem<'a> {
    cfg: &'a NmpcConfig,
    x0: [f64; 5],
    reference: Vec<[f64; 5]>,
    /// Propagated ellipses, indexed `[set][step]`.
    obstacles: Vec<Vec<CanonicalEllipse>>,
    /// Propagated center of the tracked set per step.
    tracked: Option<Vec<[f64; 2]>>,
    u_prev: [f64; 3],
    mu: f64,
    /// Multiplier estimates, indexed `[set][step]`.
    obstacle_multipliers: Vec<Vec<f64>>,
    tracking_multipliers: Vec<f64>,
}

/// `μ([c + y/2μ]₊² − (y/2μ)²)` and its slope in `c`. Equals `μ[c]₊²` when
/// the multiplier `y` is zero.
fn shifted_penalty(mu: f64, y: f64, c: f64) -> (f64, f64) {
    let shift = y / (2.0 * mu);
    let t = c + shift;
    if t > 0.0 {
        (mu * (t * t - shift * shift), 2.0 * mu * t)
    } else {
        (-mu * shift * shift, 0.0)
    }
}

struct Budget {
    mode: DeadlineMode,
    start: Instant,
    deadline_ms: f64,
    limit: usize,
    used: usize,
}

impl Budget {
    fn exhausted(&self) -> bool {
        match self.mode {
            DeadlineMode::Iterations => self.used >= self.limit,
            DeadlineMode::Wallclock => self.start.elapsed().as_secs_f64() * 1e3 >= self.deadline_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum InnerOutcome {
    Converged,
    Stalled,
    /// Hit the per-solve iteration cap before the tolerance.
    Capped,
    Exhausted,
    NonFinite,
}

/// Heading-to-target alignment `h·d̂` with its derivatives in θ and p.
fn bearing_alignment(theta: f64, p: [f64; 2], target: [f64; 2]) -> Option<(f64, f64, [f64; 2])> {
    let d = [target[0] - p[0], target[1] - p[1]];
    let dn = d[0].hypot(d[1]);
    if dn < 1e-9 {
        return None;
    }
    let dh = [d[0] / dn, d[1] / dn];
    let (s, c) = theta.sin_cos();
    let a = c * dh[0] + s * dh[1];
    let da_dtheta = -s * dh[0] + c * dh[1];
    // ∂(h·d̂)/∂p = −(I − d̂d̂ᵀ)h / |d|
    let da_dp = [-(c - a * dh[0]) / dn, -(s - a * dh[1]) / dn];
    Some((a, da_dtheta, da_dp))
}

impl<'a> Problem<'a> {
    fn n(&self) -> usize {
        self.cfg.horizon
    }

    fn rollout(&self, z: &[f64]) -> Vec<[f64; 5]> {
        let tau = self.cfg.step;
        let alpha = tau / self.cfg.velocity_lag;
        let mut xs = Vec::with_capacity(self.n() + 1);
        let mut x = self.x0;
        xs.push(x);
        for u in z.chunks_exact(3) {
            let (s, c) = x[4].sin_cos();
            let gx = c * u[0] - s * u[1];
            let gy = s * u[0] + c * u[1];
            let vx = x[2] + alpha * (gx - x[2]);
            let vy = x[3] + alpha * (gy - x[3]);
            x = [x[0] + tau * vx, x[1] + tau * vy, vx, vy, x[4] + tau * u[2]];
            xs.push(x);
        }
        xs
    }

    /// Stage cost of state `n` and its gradient.
    fn stage(&self, n: usize, x: &[f64; 5], grad: &mut [f64; 5]) -> f64 {
        let w = &self.cfg.weights;
        let r = &self.reference[n];
        let mut cost = 0.0;
        for i in 0..2 {
            let e = x[i] - r[i];
            cost += w.position * e * e;
            grad[i] += 2.0 * w.position * e;
            let e = x[i + 2] - r[i + 2];
            cost += w.velocity * e * e;
            grad[i + 2] += 2.0 * w.velocity * e;
        }
        let p = [x[0], x[1]];
        match &self.tracked {
            Some(centers) => {
                if let Some((a, da_dt, da_dp)) = bearing_alignment(x[4], p, centers[n]) {
                    cost += 2.0 * w.heading * (1.0 - a);
                    grad[4] -= 2.0 * w.heading * da_dt;
                    grad[0] -= 2.0 * w.heading * da_dp[0];
                    grad[1] -= 2.0 * w.heading * da_dp[1];
                    let v = 1.0 - self.cfg.fov_margin - a;
                    let (pen, k) = shifted_penalty(self.mu, self.tracking_multipliers[n], v);
                    cost += pen;
                    if k > 0.0 {
                        grad[4] -= k * da_dt;
                        grad[0] -= k * da_dp[0];
                        grad[1] -= k * da_dp[1];
                    }
                }
            }
            None => {
                let e = x[4] - r[4];
                cost += 2.0 * w.heading * (1.0 - e.cos());
                grad[4] += 2.0 * w.heading * e.sin();
            }
        }
        for (set, ys) in self.obstacles.iter().zip(&self.obstacle_multipliers) {
            let (m, gm) = membership_margin(&set[n], p);
            let (pen, k) = shifted_penalty(self.mu, ys[n], m);
            cost += pen;
            if k > 0.0 {
                grad[0] += k * gm[0];
                grad[1] += k * gm[1];
            }
        }
        cost
    }

    /// First-order multiplier update `y ← [y + 2μc]₊`.
    fn update_multipliers(&mut self, z: &[f64]) {
        let xs = self.rollout(z);
        for (n, x) in xs.iter().enumerate().skip(1) {
            let p = [x[0], x[1]];
            for (set, ys) in self
                .obstacles
                .iter()
                .zip(self.obstacle_multipliers.iter_mut())
            {
                let m = membership_margin(&set[n], p).0;
                ys[n] = (ys[n] + 2.0 * self.mu * m).max(0.0);
            }
            if let Some(centers) = &self.tracked {
                if let Some((a, _, _)) = bearing_alignment(x[4], p, centers[n]) {
                    let v = 1.0 - self.cfg.fov_margin - a;
                    let y = &mut self.tracking_multipliers[n];
                    *y = (*y + 2.0 * self.mu * v).max(0.0);
                }
            }
        }
    }

    fn cost(&self, z: &[f64]) -> f64 {
        let mut g = vec![0.0; z.len()];
        self.cost_grad(z, &mut g)
    }

    /// Objective and its gradient through the adjoint recursion.
    fn cost_grad(&self, z: &[f64], g: &mut [f64]) -> f64 {
        let n = self.n();
        let tau = self.cfg.step;
        let alpha = tau / self.cfg.velocity_lag;
        let w = &self.cfg.weights;
        let xs = self.rollout(z);
        let mut cost = 0.0;

        let mut prev = self.u_prev;
        for (k, u) in z.chunks_exact(3).enumerate() {
            for i in 0..3 {
                let d = u[i] - prev[i];
                cost += w.input * u[i] * u[i] + w.input_rate * d * d;
                g[3 * k + i] = 2.0 * w.input * u[i] + 2.0 * w.input_rate * d;
                if k > 0 {
                    g[3 * (k - 1) + i] -= 2.0 * w.input_rate * d;
                }
            }
            prev = [u[0], u[1], u[2]];
        }

        let mut lam = [0.0; 5];
        cost += self.stage(n, &xs[n], &mut lam);
        for k in (0..n).rev() {
            let x = &xs[k];
            let u = &z[3 * k..3 * k + 3];
            let (s, c) = x[4].sin_cos();
            let gx = c * u[0] - s * u[1];
            let gy = s * u[0] + c * u[1];
            let mvx = lam[2] + tau * lam[0];
            let mvy = lam[3] + tau * lam[1];
            g[3 * k] += alpha * (c * mvx + s * mvy);
            g[3 * k + 1] += alpha * (-s * mvx + c * mvy);
            g[3 * k + 2] += tau * lam[4];
            let mut next = [
                lam[0],
                lam[1],
                (1.0 - alpha) * mvx,
                (1.0 - alpha) * mvy,
                lam[4] - alpha * gy * mvx + alpha * gx * mvy,
            ];
            if k > 0 {
                cost += self.stage(k, x, &mut next);
            }
            lam = next;
        }
        cost
    }

    /// Largest obstacle and tracking penalties over steps `1..=N`.
    fn violations(&self, z: &[f64]) -> (f64, f64) {
        let xs = self.rollout(z);
        let mut obs: f64 = 0.0;
        let mut trk: f64 = 0.0;
        for (n, x) in xs.iter().enumerate().skip(1) {
            let p = [x[0], x[1]];
            for set in &self.obstacles {
                obs = obs.max(membership_margin(&set[n], p).0);
            }
            if let Some(centers) = &self.tracked {
                if let Some((a, _, _)) = bearing_alignment(x[4], p, centers[n]) {
                    trk = trk.max(1.0 - self.cfg.fov_margin - a);
                }
            }
        }
        (obs, trk)
    }
}

impl<'a> Problem<'a> {
    /// Gauss-Newton curvature of the stage cost at state `n`: twice the sum
    /// of outer products of residual gradients with respect to the state.
    fn stage_curvature(&self, n: usize, x: &[f64; 5]) -> [[f64; 5]; 5] {
        let w = &self.cfg.weights;
        let mut h = [[0.0; 5]; 5];
        let mut add = |v: [f64; 5], scale: f64| {
            for i in 0..5 {
                for j in 0..5 {
                    h[i][j] += 2.0 * scale * v[i] * v[j];
                }
            }
        };
        add([1.0, 0.0, 0.0, 0.0, 0.0], w.position);
        add([0.0, 1.0, 0.0, 0.0, 0.0], w.position);
        add([0.0, 0.0, 1.0, 0.0, 0.0], w.velocity);
        add([0.0, 0.0, 0.0, 1.0, 0.0], w.velocity);
        let p = [x[0], x[1]];
        match &self.tracked {
            Some(centers) => {
                let c = centers[n];
                let d = [c[0] - p[0], c[1] - p[1]];
                let dn = d[0].hypot(d[1]);
                if dn >= 1e-9 {
                    // Residual h − d̂ with |h − d̂|² = 2(1 − h·d̂).
                    let dh = [d[0] / dn, d[1] / dn];
                    let (s, co) = x[4].sin_cos();
                    let proj = [
                        [(1.0 - dh[0] * dh[0]) / dn, -dh[0] * dh[1] / dn],
                        [-dh[0] * dh[1] / dn, (1.0 - dh[1] * dh[1]) / dn],
                    ];
                    add([proj[0][0], proj[0][1], 0.0, 0.0, -s], w.heading);
                    add([proj[1][0], proj[1][1], 0.0, 0.0, co], w.heading);
                }
                if let Some((a, da_dt, da_dp)) = bearing_alignment(x[4], p, c) {
                    let v = 1.0 - self.cfg.fov_margin - a;
                    let (_, k) = shifted_penalty(self.mu, self.tracking_multipliers[n], v);
                    if k > 0.0 {
                        add([-da_dp[0], -da_dp[1], 0.0, 0.0, -da_dt], self.mu);
                    }
                }
            }
            None => {
                let e = x[4] - self.reference[n][4];
                let c = (0.5 * e).cos();
                add([0.0, 0.0, 0.0, 0.0, c], w.heading);
            }
        }
        for (set, ys) in self.obstacles.iter().zip(&self.obstacle_multipliers) {
            let (m, gm) = membership_margin(&set[n], p);
            let (_, k) = shifted_penalty(self.mu, ys[n], m);
            if k > 0.0 {
                add([gm[0], gm[1], 0.0, 0.0, 0.0], self.mu);
            }
        }
        h
    }

    /// Step of the damped Gauss-Newton model restricted to the free inputs,
    /// by a Riccati recursion over the horizon. The previous input is carried
    /// as extra state so the rate cost stays stage-wise.
    fn gauss_newton_step(&self, z: &[f64], free: &[bool], damping: f64) -> Vec<f64> {
        let n = self.n();
        let tau = self.cfg.step;
        let alpha = tau / self.cfg.velocity_lag;
        let w = &self.cfg.weights;
        let xs = self.rollout(z);
        let rate = 2.0 * w.input_rate;

        let mut fs = Vec::with_capacity(n);
        let mut gs = Vec::with_capacity(n);
        for k in 0..n {
            let x = &xs[k];
            let u = &z[3 * k..3 * k + 3];
            let (s, c) = x[4].sin_cos();
            let gx = c * u[0] - s * u[1];
            let gy = s * u[0] + c * u[1];
            let mut f = Matrix8::zeros();
            f[(0, 0)] = 1.0;
            f[(1, 1)] = 1.0;
            f[(0, 2)] = tau * (1.0 - alpha);
            f[(1, 3)] = tau * (1.0 - alpha);
            f[(0, 4)] = -tau * alpha * gy;
            f[(1, 4)] = tau * alpha * gx;
            f[(2, 2)] = 1.0 - alpha;
            f[(3, 3)] = 1.0 - alpha;
            f[(2, 4)] = -alpha * gy;
            f[(3, 4)] = alpha * gx;
            f[(4, 4)] = 1.0;
            let mut g = Matrix8x3::zeros();
            g[(0, 0)] = tau * alpha * c;
            g[(0, 1)] = -tau * alpha * s;
            g[(1, 0)] = tau * alpha * s;
            g[(1, 1)] = tau * alpha * c;
            g[(2, 0)] = alpha * c;
            g[(2, 1)] = -alpha * s;
            g[(3, 0)] = alpha * s;
            g[(3, 1)] = alpha * c;
            g[(4, 2)] = tau;
            for i in 0..3 {
                g[(5 + i, i)] = 1.0;
            }
            fs.push(f);
            gs.push(g);
        }

        // Input-cost gradient per step.
        let mut input_grad = vec![[0.0; 3]; n];
        let mut prev = self.u_prev;
        for k in 0..n {
            for i in 0..3 {
                let u = z[3 * k + i];
                let d = u - prev[i];
                input_grad[k][i] += 2.0 * w.input * u + rate * d;
                if k > 0 {
                    input_grad[k - 1][i] -= rate * d;
                }
                prev[i] = u;
            }
        }

        let stage_terms = |k: usize| -> (Matrix8, Vector8) {
            let mut lxx = Matrix8::zeros();
            let mut lx = Vector8::zeros();
            if k > 0 {
                let curv = self.stage_curvature(k, &xs[k]);
                let mut grad = [0.0; 5];
                self.stage(k, &xs[k], &mut grad);
                for i in 0..5 {
                    lx[i] = grad[i];
                    for j in 0..5 {
                        lxx[(i, j)] = curv[i][j];
                    }
                }
            }
            for i in 5..8 {
                lxx[(i, i)] = rate;
            }
            (lxx, lx)
        };

        let (mut p, mut pv) = stage_terms(n);
        for i in 5..8 {
            p[(i, i)] = 0.0;
        }
        let mut gains = vec![(Matrix3x8::zeros(), Vector3::zeros()); n];
        for k in (0..n).rev() {
            let (lxx, lx) = stage_terms(k);
            let (f, g) = (&fs[k], &gs[k]);
            let luu = Matrix3::identity() * (2.0 * w.input + rate + damping);
            let mut lux = Matrix3x8::zeros();
            for i in 0..3 {
                lux[(i, 5 + i)] = -rate;
            }
            let lu = Vector3::from(input_grad[k]);
            let pf = p * f;
            let qxx = lxx + f.transpose() * pf;
            let quu = luu + g.transpose() * p * g;
            let qux = lux + g.transpose() * pf;
            let qx = lx + f.transpose() * pv;
            let qu = lu + g.transpose() * pv;

            let mask = [free[3 * k], free[3 * k + 1], free[3 * k + 2]];
            let mut quu_r = quu;
            let mut qux_r = qux;
            let mut qu_r = qu;
            for i in 0..3 {
                if !mask[i] {
                    for j in 0..3 {
                        quu_r[(i, j)] = 0.0;
                        quu_r[(j, i)] = 0.0;
                    }
                    quu_r[(i, i)] = 1.0;
                    qux_r.row_mut(i).fill(0.0);
                    qu_r[i] = 0.0;
                }
            }
            let chol = quu_r
                .cholesky()
                .expect("input curvature is positive definite");
            let gain = -chol.solve(&qux_r);
            let ff = -chol.solve(&qu_r);
            let kt = gain.transpose();
            p = qxx + kt * quu * gain + kt * qux + qux.transpose() * gain;
            p = (p + p.transpose()) * 0.5;
            pv = qx + kt * quu * ff + kt * qu + qux.transpose() * ff;
            gains[k] = (gain, ff);
        }

        let mut step = vec![0.0; 3 * n];
        let mut xi = Vector8::zeros();
        for k in 0..n {
            let (gain, ff) = &gains[k];
            let du = gain * xi + ff;
            for i in 0..3 {
                step[3 * k + i] = du[i];
            }
            xi = fs[k] * xi + gs[k] * du;
        }
        step
    }
}

/// Damped projected Gauss-Newton on the box `[lo, hi]`. Variables held at a
/// bound by the gradient are frozen; the rest take a damped Newton step
/// followed by a projected Armijo search.
fn minimize(
    problem: &Problem,
    z: &mut [f64],
    lo: &[f64],
    hi: &[f64],
    tol: f64,
    budget: &mut Budget,
) -> InnerOutcome {
    let dim = z.len();
    let mut iterations = 0;
    let mut g = vec![0.0; dim];
    let mut f = problem.cost_grad(z, &mut g);
    if !f.is_finite() {
        return InnerOutcome::NonFinite;
    }
    let mut damping = 1e-4;
    let mut trial = vec![0.0; dim];
    let mut g_trial = vec![0.0; dim];
    loop {
        let free: Vec<bool> = (0..dim)
            .map(|i| !((z[i] <= lo[i] && g[i] > 0.0) || (z[i] >= hi[i] && g[i] < 0.0)))
            .collect();
        let pg_norm = (0..dim)
            .filter(|&i| free[i])
            .fold(0.0f64, |m, i| m.max(g[i].abs()));
        log::trace!("inner f={f:.6e} pg={pg_norm:.3e} damping={damping:.1e}");
        if pg_norm < tol {
            return InnerOutcome::Converged;
        }
        if budget.exhausted() {
            return InnerOutcome::Exhausted;
        }
        if iterations == INNER_LIMIT {
            return InnerOutcome::Capped;
        }
        iterations += 1;
        budget.used += 1;

        let d = problem.gauss_newton_step(z, &free, damping);
        let mut t = 1.0;
        let mut accepted = false;
        let mut f_trial = f;
        for _ in 0..30 {
            for i in 0..dim {
                trial[i] = (z[i] + t * d[i]).clamp(lo[i], hi[i]);
            }
            f_trial = problem.cost_grad(&trial, &mut g_trial);
            let decrease: f64 = (0..dim).map(|i| g[i] * (trial[i] - z[i])).sum();
            if f_trial.is_finite() && f_trial <= f + 1e-4 * decrease && decrease < 0.0 {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return InnerOutcome::Stalled;
        }
        damping = if t == 1.0 {
            (damping / 3.0).max(1e-9)
        } else {
            (damping * 4.0).min(1e3)
        };
        let improvement = f - f_trial;
        z.copy_from_slice(&trial);
        g.copy_from_slice(&g_trial);
        f = f_trial;
        if improvement <= STALL_IMPROVEMENT * f.abs().max(1.0) {
            return InnerOutcome::Stalled;
        }
    }
}

impl NmpcSolver {
    pub fn new(cfg: NmpcConfig) -> Self {
        NmpcSolver { cfg }
    }

    pub fn config(&self) -> &NmpcConfig {
        &self.cfg
    }

    /// Solves from state `x0` toward `reference` (padded with its last
    /// entry to `N + 1` states), avoiding `priority.active` and keeping
    /// `priority.tracked` in view. `warm_start` seeds the input sequence.
    pub fn solve(
        &self,
        x0: &RobotState,
        reference: &[RobotState],
        priority: &Prioritized,
        u_prev: ControlInput,
        warm_start: Option<&[ControlInput]>,
    ) -> Solution {
        let start = Instant::now();
        let cfg = &self.cfg;
        let n = cfg.horizon;
        let tau = cfg.step;

        let last = reference.last().copied().unwrap_or(*x0);
        let mut refs: Vec<[f64; 5]> = (0..=n)
            .map(|k| reference.get(k).copied().unwrap_or(last).to_array())
            .collect();
        // Unwrap reference headings next to the predicted heading.
        for r in refs.iter_mut() {
            r[4] = x0.theta + normalize_angle(r[4] - x0.theta);
        }

        let obstacles: Vec<Vec<CanonicalEllipse>> = priority
            .active
            .iter()
            .map(|s| (0..=n).map(|k| propagate(s, k, tau)).collect())
            .collect();
        let tracked = priority
            .tracked
            .as_ref()
            .map(|s| (0..=n).map(|k| propagate(s, k, tau).center).collect());
        let mut problem = Problem {
            cfg,
            x0: x0.to_array(),
            reference: refs,
            tracked,
            u_prev: u_prev.to_array(),
            mu: cfg.penalty_schedule[0],
            obstacle_multipliers: vec![vec![0.0; n + 1]; obstacles.len()],
            tracking_multipliers: vec![0.0; n + 1],
            obstacles,
        };

        let lo: Vec<f64> = (0..n).flat_map(|_| cfg.u_min).collect();
        let hi: Vec<f64> = (0..n).flat_map(|_| cfg.u_max).collect();
        let mut z: Vec<f64> = (0..n)
            .flat_map(|k| {
                let u = match warm_start {
                    Some(ws) if !ws.is_empty() => ws[k.min(ws.len() - 1)],
                    _ => u_prev,
                };
                let u = ControlInput {
                    vy: u.vy + SYMMETRY_NUDGE,
                    ..u
                };
                u.clamp(cfg.u_min, cfg.u_max).to_array()
            })
            .collect();

        let initial_cost = problem.cost(&z);
        let mut budget = Budget {
            mode: cfg.deadline_mode,
            start,
            deadline_ms: cfg.deadline_ms,
            limit: cfg.iteration_budget,
            used: 0,
        };
        let mut converged = false;
        let mut timeout = false;
        let mut failed = !initial_cost.is_finite();
        let mut outer = 0;
        let mut viol = (f64::INFINITY, f64::INFINITY);
        if !failed {
            let schedule = &cfg.penalty_schedule;
            // A warm start that already keeps clear is held there by the
            // stiffest penalty instead of being relaxed into the sets.
            let warm_violation = problem.violations(&z);
            let mut stage = if warm_start.is_some()
                && warm_violation.0.max(warm_violation.1) <= WARM_FEASIBLE
            {
                schedule.len().saturating_sub(2)
            } else {
                0
            };
            let mut previous = f64::INFINITY;
            for i in 0..cfg.max_outer_iterations.max(schedule.len()) {
                problem.mu = schedule[stage];
                outer += 1;
                // Early outer iterations solve loosely; the final tolerance
                // applies from the fourth on.
                let tol = cfg.inner_tolerance.max(0.1f64.powi(i as i32 + 1));
                let outcome = minimize(&problem, &mut z, &lo, &hi, tol, &mut budget);
                if outcome == InnerOutcome::NonFinite {
                    failed = true;
                    break;
                }
                viol = problem.violations(&z);
                let worst = viol.0.max(viol.1);
                log::trace!(
                    "outer {outer}: mu={} {outcome:?} iterations={} violation={viol:?}",
                    problem.mu,
                    budget.used
                );
                if worst <= cfg.constraint_tolerance && tol <= cfg.inner_tolerance {
                    converged = true;
                    break;
                }
                if outcome == InnerOutcome::Exhausted {
                    timeout = true;
                    break;
                }
                // At the stiffest penalty with no real progress the
                // constraints are out of reach; keep the best compromise.
                let settled = tol <= cfg.inner_tolerance || outcome == InnerOutcome::Capped;
                if stage == schedule.len() - 1 && settled && worst > STALL_RATIO * previous {
                    break;
                }
                problem.update_multipliers(&z);
                if worst > cfg.constraint_tolerance && worst > 0.25 * previous {
                    stage = (stage + 1).min(schedule.len() - 1);
                }
                previous = worst;
            }
        }
        let final_cost = problem.cost(&z);
        if !final_cost.is_finite() {
            failed = true;
        }

        let inputs: Vec<ControlInput> = z
            .chunks_exact(3)
            .map(|u| ControlInput::from_array([u[0], u[1], u[2]]))
            .collect();
        let states = problem
            .rollout(&z)
            .into_iter()
            .map(|mut x| {
                x[4] = normalize_angle(x[4]);
                RobotState::from_array(x)
            })
            .collect();
        let applied = if timeout || failed { u_prev } else { inputs[0] };
        Solution {
            applied,
            inputs,
            states,
            solve_time_ms: start.elapsed().as_secs_f64() * 1e3,
            inner_iterations: budget.used,
            outer_iterations: outer,
            converged,
            timeout,
            failed,
            max_obstacle_violation: viol.0.max(0.0),
            max_tracking_violation: viol.1.max(0.0),
            initial_cost,
            final_cost,
        }
    }
}
