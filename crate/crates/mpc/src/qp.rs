//! Dense primal-dual interior-point solver for small convex QPs.
//!
//! ```text
//! minimize    ½ xᵀ H x + gᵀ x + Σ_j ρ_j s_j
//! subject to  lb ≤ x ≤ ub
//!             G_j x ≤ h_j            (hard rows)
//!             G_j x − s_j ≤ h_j      (soft rows, s_j ≥ 0)
//! ```
//!
//! Mehrotra predictor-corrector on the normal equations. Soft-row slacks
//! are eliminated analytically, so the linear system is always `n x n`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    /// Box bounds; use infinities for free components.
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
    pub rows: DMatrix<f64>,
    pub rhs: DVector<f64>,
    /// `None` for a hard row, `Some(ρ)` for an L1-penalized soft row.
    pub penalty: Vec<Option<f64>>,
}

impl QpProblem {
    pub fn unconstrained(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let n = g.len();
        Self {
            h,
            g,
            lb: DVector::from_element(n, f64::NEG_INFINITY),
            ub: DVector::from_element(n, f64::INFINITY),
            rows: DMatrix::zeros(0, n),
            rhs: DVector::zeros(0),
            penalty: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.g.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        let m = self.rows.nrows();
        if self.h.shape() != (n, n) || self.lb.len() != n || self.ub.len() != n {
            return Err(Error::contract("QP dimensions disagree"));
        }
        if self.rows.ncols() != n || self.rhs.len() != m || self.penalty.len() != m {
            return Err(Error::contract("QP constraint dimensions disagree"));
        }
        if (0..n).any(|i| self.lb[i] > self.ub[i]) {
            return Err(Error::contract("QP box bounds are crossed"));
        }
        let finite = |v: &f64| v.is_finite();
        if !self.h.iter().all(finite) || !self.g.iter().all(finite) || !self.rows.iter().all(finite)
            || !self.rhs.iter().all(finite)
        {
            return Err(Error::numerical("non-finite QP data"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    /// Stopped at the iteration limit; the returned point is the last iterate.
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Soft-row slacks (zero for hard rows).
    pub slack: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct QpSettings {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self { max_iterations: 60, tolerance: 1e-9 }
    }
}

/// Anything that can solve a [`QpProblem`].
pub trait QpSolver {
    fn solve(&self, qp: &QpProblem) -> Result<QpSolution>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct InteriorPoint {
    pub settings: QpSettings,
}

impl QpSolver for InteriorPoint {
    fn solve(&self, qp: &QpProblem) -> Result<QpSolution> {
        solve_ipm(qp, &self.settings)
    }
}

/// Inequalities in the lifted `(x, s)` space, grouped by kind.
struct Ineq {
    // box rows: index, sign (+1 upper, -1 lower), bound
    boxes: Vec<(usize, f64, f64)>,
    hard: Vec<usize>,
    soft: Vec<(usize, f64)>,
}

/// Primal-dual variables; `t` slacks and `l` multipliers are stored per
/// inequality in the order boxes, hard rows, soft rows (G x − s ≤ h), soft
/// nonnegativity (−s ≤ 0).
struct Vars {
    x: DVector<f64>,
    s: DVector<f64>,
    t: DVector<f64>,
    l: DVector<f64>,
}

fn fraction_to_boundary(v: &DVector<f64>, dv: &DVector<f64>, tau: f64) -> f64 {
    let mut a: f64 = 1.0;
    for (vi, di) in v.iter().zip(dv.iter()) {
        if *di < 0.0 {
            a = a.min(-tau * vi / di);
        }
    }
    a
}

pub fn solve_ipm(qp: &QpProblem, settings: &QpSettings) -> Result<QpSolution> {
    qp.validate()?;
    let n = qp.n();
    let mut ineq = Ineq { boxes: Vec::new(), hard: Vec::new(), soft: Vec::new() };
    for i in 0..n {
        if qp.lb[i].is_finite() {
            ineq.boxes.push((i, -1.0, -qp.lb[i]));
        }
        if qp.ub[i].is_finite() {
            ineq.boxes.push((i, 1.0, qp.ub[i]));
        }
    }
    for (j, p) in qp.penalty.iter().enumerate() {
        match p {
            None => ineq.hard.push(j),
            Some(rho) => {
                if !(*rho > 0.0) {
                    return Err(Error::contract("soft-row penalty must be positive"));
                }
                ineq.soft.push((j, *rho));
            }
        }
    }
    let nb = ineq.boxes.len();
    let nh = ineq.hard.len();
    let ns = ineq.soft.len();
    let m_total = nb + nh + 2 * ns;

    if m_total == 0 {
        let x = solve_spd(&qp.h, &(-&qp.g))?;
        return Ok(QpSolution { x, slack: DVector::zeros(qp.rows.nrows()), status: QpStatus::Solved, iterations: 0 });
    }

    // start at the box midpoint (or 0) with unit slacks and multipliers
    let x0 = DVector::from_fn(n, |i, _| {
        let (lo, hi) = (qp.lb[i], qp.ub[i]);
        match (lo.is_finite(), hi.is_finite()) {
            (true, true) => 0.5 * (lo + hi),
            (true, false) => lo + 1.0,
            (false, true) => hi - 1.0,
            _ => 0.0,
        }
    });
    let gx = &qp.rows * &x0;
    let s0 = DVector::from_fn(ns, |k, _| {
        let (j, _) = ineq.soft[k];
        (gx[j] - qp.rhs[j]).max(0.0) + 1.0
    });
    let mut v = Vars { x: x0, s: s0, t: DVector::from_element(m_total, 1.0), l: DVector::from_element(m_total, 1.0) };
    // match initial slacks to the actual primal gap where it is positive
    {
        let (rp, _) = primal_values(qp, &ineq, &v);
        for k in 0..m_total {
            v.t[k] = (-rp[k]).max(1.0);
        }
    }
    // soft-pair multipliers start dual feasible in s: λ₁ + λ₂ = ρ
    for (k, (_, rho)) in ineq.soft.iter().enumerate() {
        v.l[nb + nh + k] = 0.5 * rho;
        v.l[nb + nh + ns + k] = 0.5 * rho;
    }

    let scale_g = 1.0 + qp.g.amax().max(ineq.soft.iter().map(|(_, r)| *r).fold(0.0, f64::max));
    let scale_b = 1.0 + qp.rhs.amax().max(qp.lb.iter().chain(qp.ub.iter()).filter(|v| v.is_finite()).fold(0.0, |a: f64, b| a.max(b.abs())));

    let mut status = QpStatus::MaxIterations;
    let mut iterations = 0;
    for it in 0..settings.max_iterations {
        iterations = it;
        let (ax, _) = primal_values(qp, &ineq, &v);
        // primal residual: a_kᵀ y + t_k − b_k
        let rp = &ax + &v.t;
        let (rdx, rds) = dual_residual(qp, &ineq, &v);
        let mu = v.l.dot(&v.t) / m_total as f64;
        let res_p = rp.amax();
        let res_d = rdx.amax().max(rds.amax());
        if res_p <= settings.tolerance * scale_b && res_d <= settings.tolerance * scale_g && mu <= settings.tolerance {
            status = QpStatus::Solved;
            break;
        }

        let d = v.l.component_div(&v.t);
        let kkt = normal_matrix(qp, &ineq, &d);
        let chol = match kkt.clone().cholesky() {
            Some(c) => c,
            None => {
                let mut k = kkt;
                let reg = 1e-10 * (1.0 + k.diagonal().amax());
                for i in 0..n {
                    k[(i, i)] += reg;
                }
                k.cholesky().ok_or_else(|| Error::numerical("QP normal equations are singular"))?
            }
        };

        // predictor
        let rc_aff = v.l.component_mul(&v.t);
        let (_, _, dt_a, dl_a) = newton_direction(qp, &ineq, &v, &chol, &d, &rp, &rdx, &rds, &rc_aff);
        let a_p = fraction_to_boundary(&v.t, &dt_a, 1.0);
        let a_d = fraction_to_boundary(&v.l, &dl_a, 1.0);
        let mu_aff = (&v.t + &dt_a * a_p).dot(&(&v.l + &dl_a * a_d)) / m_total as f64;
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);

        // corrector
        let rc = DVector::from_fn(m_total, |k, _| v.l[k] * v.t[k] + dl_a[k] * dt_a[k] - sigma * mu);
        let (dx, ds, dt, dl) = newton_direction(qp, &ineq, &v, &chol, &d, &rp, &rdx, &rds, &rc);
        let a_p = fraction_to_boundary(&v.t, &dt, 0.995);
        let a_d = fraction_to_boundary(&v.l, &dl, 0.995);
        let alpha = a_p.min(a_d);
        v.x += &dx * alpha;
        v.s += &ds * alpha;
        v.t += &dt * alpha;
        v.l += &dl * alpha;
        if !v.x.iter().all(|x| x.is_finite()) {
            return Err(Error::numerical("QP iterate became non-finite"));
        }
    }

    let mut slack = DVector::zeros(qp.rows.nrows());
    for (k, (j, _)) in ineq.soft.iter().enumerate() {
        slack[*j] = v.s[k].max(0.0);
    }
    Ok(QpSolution { x: v.x, slack, status, iterations })
}

/// `a_kᵀ y − b_k` for every inequality.
fn primal_values(qp: &QpProblem, ineq: &Ineq, v: &Vars) -> (DVector<f64>, DVector<f64>) {
    let nb = ineq.boxes.len();
    let nh = ineq.hard.len();
    let ns = ineq.soft.len();
    let gx = &qp.rows * &v.x;
    let mut out = DVector::zeros(nb + nh + 2 * ns);
    for (k, (i, sign, b)) in ineq.boxes.iter().enumerate() {
        out[k] = sign * v.x[*i] - b;
    }
    for (k, j) in ineq.hard.iter().enumerate() {
        out[nb + k] = gx[*j] - qp.rhs[*j];
    }
    for (k, (j, _)) in ineq.soft.iter().enumerate() {
        out[nb + nh + k] = gx[*j] - v.s[k] - qp.rhs[*j];
        out[nb + nh + ns + k] = -v.s[k];
    }
    (out, gx)
}

/// Stationarity residuals in `x` and `s`.
fn dual_residual(qp: &QpProblem, ineq: &Ineq, v: &Vars) -> (DVector<f64>, DVector<f64>) {
    let nb = ineq.boxes.len();
    let nh = ineq.hard.len();
    let ns = ineq.soft.len();
    let mut rdx = &qp.h * &v.x + &qp.g;
    for (k, (i, sign, _)) in ineq.boxes.iter().enumerate() {
        rdx[*i] += sign * v.l[k];
    }
    let mut row_mult = DVector::zeros(qp.rows.nrows());
    for (k, j) in ineq.hard.iter().enumerate() {
        row_mult[*j] = v.l[nb + k];
    }
    let mut rds = DVector::zeros(ns);
    for (k, (j, rho)) in ineq.soft.iter().enumerate() {
        row_mult[*j] = v.l[nb + nh + k];
        rds[k] = rho - v.l[nb + nh + k] - v.l[nb + nh + ns + k];
    }
    rdx += qp.rows.tr_mul(&row_mult);
    (rdx, rds)
}

/// `H + Σ box D + Gᵀ D_eff G` with soft slacks eliminated.
fn normal_matrix(qp: &QpProblem, ineq: &Ineq, d: &DVector<f64>) -> DMatrix<f64> {
    let nb = ineq.boxes.len();
    let nh = ineq.hard.len();
    let ns = ineq.soft.len();
    let mut k = qp.h.clone();
    for (idx, (i, _, _)) in ineq.boxes.iter().enumerate() {
        k[(*i, *i)] += d[idx];
    }
    let m = qp.rows.nrows();
    let mut w = DVector::zeros(m);
    for (idx, j) in ineq.hard.iter().enumerate() {
        w[*j] = d[nb + idx];
    }
    for (idx, (j, _)) in ineq.soft.iter().enumerate() {
        let d1 = d[nb + nh + idx];
        let d2 = d[nb + nh + ns + idx];
        w[*j] = d1 * d2 / (d1 + d2);
    }
    if m > 0 {
        let mut scaled = qp.rows.clone();
        for (r, wr) in w.iter().enumerate() {
            scaled.row_mut(r).scale_mut(*wr);
        }
        k.gemm_tr(1.0, &qp.rows, &scaled, 1.0);
    }
    k
}

/// Solve the Newton system for complementarity target `rc` (`λ t` minus
/// the centering term).
#[allow(clippy::too_many_arguments)]
fn newton_direction(
    qp: &QpProblem,
    ineq: &Ineq,
    v: &Vars,
    chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    d: &DVector<f64>,
    rp: &DVector<f64>,
    rdx: &DVector<f64>,
    rds: &DVector<f64>,
    rc: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>) {
    let nb = ineq.boxes.len();
    let nh = ineq.hard.len();
    let ns = ineq.soft.len();
    let m_total = d.len();
    // Δλ_k = D_k a_kᵀ Δy + w_k
    let w = DVector::from_fn(m_total, |k, _| (v.l[k] * rp[k] - rc[k]) / v.t[k]);

    let mut rhs = -rdx;
    for (k, (i, sign, _)) in ineq.boxes.iter().enumerate() {
        rhs[*i] -= sign * w[k];
    }
    let mut row_w = DVector::zeros(qp.rows.nrows());
    for (k, j) in ineq.hard.iter().enumerate() {
        row_w[*j] = w[nb + k];
    }
    // soft rows: Δs = (D1 G Δx + w1 + w2 − r_s) / (D1 + D2)
    for (k, (j, _)) in ineq.soft.iter().enumerate() {
        let (d1, d2) = (d[nb + nh + k], d[nb + nh + ns + k]);
        let (w1, w2) = (w[nb + nh + k], w[nb + nh + ns + k]);
        row_w[*j] = w1 - d1 * (w1 + w2 - rds[k]) / (d1 + d2);
    }
    rhs -= qp.rows.tr_mul(&row_w);
    let dx = chol.solve(&rhs);

    let gdx = &qp.rows * &dx;
    let mut ds = DVector::zeros(ns);
    for (k, (j, _)) in ineq.soft.iter().enumerate() {
        let (d1, d2) = (d[nb + nh + k], d[nb + nh + ns + k]);
        let (w1, w2) = (w[nb + nh + k], w[nb + nh + ns + k]);
        ds[k] = (d1 * gdx[*j] + w1 + w2 - rds[k]) / (d1 + d2);
    }
    // a_kᵀ Δy per inequality
    let mut a_dy = DVector::zeros(m_total);
    for (k, (i, sign, _)) in ineq.boxes.iter().enumerate() {
        a_dy[k] = sign * dx[*i];
    }
    for (k, j) in ineq.hard.iter().enumerate() {
        a_dy[nb + k] = gdx[*j];
    }
    for (k, (j, _)) in ineq.soft.iter().enumerate() {
        a_dy[nb + nh + k] = gdx[*j] - ds[k];
        a_dy[nb + nh + ns + k] = -ds[k];
    }
    let dt = DVector::from_fn(m_total, |k, _| -rp[k] - a_dy[k]);
    let dl = DVector::from_fn(m_total, |k, _| d[k] * a_dy[k] + w[k]);
    (dx, ds, dt, dl)
}

fn solve_spd(h: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    h.clone()
        .cholesky()
        .map(|c| c.solve(rhs))
        .ok_or_else(|| Error::numerical("QP Hessian is not positive definite"))
}
