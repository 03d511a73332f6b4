//! Reduced stochastic OCP and its real-time SQP iteration.
//!
//! The mean dynamics are `x⁺ = f(x, u) + B μ_g(x, u)`. Covariances are
//! propagated along the current iterate with frozen gradients, turned into
//! fixed back-offs `β`, and the remaining deterministic problem is solved
//! by one Gauss-Newton QP per control step.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{ResidualModel, StageEval};
use crate::qp::{QpProblem, QpSolver, QpStatus};
use crate::rk4::Linearization;
use crate::uncertainty::{inverse_normal_cdf, propagate_covariance, tightening};

/// Least-squares cost `½ rᵀ W r + g_xᵀ x + g_uᵀ u` and its Jacobians.
#[derive(Debug, Clone)]
pub struct LsqCost {
    pub r: DVector<f64>,
    pub jx: DMatrix<f64>,
    pub ju: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub gx: DVector<f64>,
    pub gu: DVector<f64>,
}

impl LsqCost {
    pub fn value(&self, u: Option<&DVector<f64>>, x: &DVector<f64>) -> f64 {
        let mut v = 0.5 * self.r.dot(&(&self.w * &self.r)) + self.gx.dot(x);
        if let Some(u) = u {
            v += self.gu.dot(u);
        }
        v
    }
}

/// State constraint `h(x) ≤ 0`, linearized.
#[derive(Debug, Clone)]
pub struct ConstraintRow {
    pub value: f64,
    pub grad: DVector<f64>,
    /// L1-penalized rather than hard.
    pub soft: bool,
    /// Satisfaction probability; 0.5 disables tightening.
    pub prob: f64,
}

/// Problem callbacks; stage indices run over the horizon.
pub trait OcpProblem {
    fn n_x(&self) -> usize;
    fn n_u(&self) -> usize;
    /// Discrete nominal dynamics with Jacobians.
    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> Linearization;
    /// Cost of stage `i` in `0..T`.
    fn stage_cost(&self, i: usize, x: &DVector<f64>, u: &DVector<f64>) -> LsqCost;
    fn terminal_cost(&self, x: &DVector<f64>) -> LsqCost;
    /// Constraints on `x_i`, `i` in `1..=T`.
    fn constraints(&self, i: usize, x: &DVector<f64>) -> Vec<ConstraintRow>;
    fn input_bounds(&self) -> (DVector<f64>, DVector<f64>);
}

#[derive(Debug, Clone)]
pub struct OcpSpec {
    pub horizon: usize,
    pub dt: f64,
    /// `n_x x n_g` residual input matrix.
    pub b_residual: DMatrix<f64>,
    pub sigma_w: DMatrix<f64>,
    pub slack_penalty: f64,
    /// Levenberg-Marquardt term added to the condensed Hessian.
    pub regularization: f64,
    /// When false, back-offs are zero and no covariance is propagated.
    pub tighten: bool,
}

impl OcpSpec {
    pub fn validate(&self, n_x: usize, n_g: usize) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config("horizon must be at least one stage"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::config("dt must be positive"));
        }
        if self.b_residual.shape() != (n_x, n_g) {
            return Err(Error::config(format!(
                "B is {:?}, expected ({n_x}, {n_g})",
                self.b_residual.shape()
            )));
        }
        if self.sigma_w.shape() != (n_x, n_x) {
            return Err(Error::config("process noise must be n_x x n_x"));
        }
        let sym = (&self.sigma_w + self.sigma_w.transpose()) * 0.5;
        if sym.symmetric_eigen().eigenvalues.min() < -1e-12 {
            return Err(Error::config("process noise must be positive semi-definite"));
        }
        if !(self.slack_penalty > 0.0) || self.regularization < 0.0 {
            return Err(Error::config("slack penalty must be positive and regularization >= 0"));
        }
        Ok(())
    }
}

/// Primal trajectory plus the uncertainty quantities fixed at the last step.
#[derive(Debug, Clone, PartialEq)]
pub struct OcpIterate {
    pub xs: Vec<DVector<f64>>,
    pub us: Vec<DVector<f64>>,
    pub sigma_x: Vec<DMatrix<f64>>,
    /// `beta[i - 1][j]` is the back-off of constraint `j` on `x_i`.
    pub beta: Vec<Vec<f64>>,
}

impl OcpIterate {
    /// Roll the nominal dynamics out from `x0` under `us`.
    pub fn rollout<P: OcpProblem + ?Sized>(problem: &P, x0: &DVector<f64>, us: Vec<DVector<f64>>) -> Self {
        let mut xs = vec![x0.clone()];
        for u in &us {
            let next = problem.dynamics(xs.last().expect("seeded"), u).next;
            xs.push(next);
        }
        let n = x0.len();
        let t = us.len();
        Self { xs, us, sigma_x: vec![DMatrix::zeros(n, n); t + 1], beta: vec![Vec::new(); t] }
    }

    pub fn horizon(&self) -> usize {
        self.us.len()
    }

    /// Drop the first stage and duplicate the last.
    pub fn shift(&mut self) {
        if self.us.len() > 1 {
            self.us.remove(0);
            self.us.push(self.us.last().expect("non-empty").clone());
        }
        if self.xs.len() > 1 {
            self.xs.remove(0);
            self.xs.push(self.xs.last().expect("non-empty").clone());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    Solved,
    /// The QP needed nonzero slack on some soft rows.
    SoftConstraintsActive,
    /// The QP hit its iteration limit; the step was still applied.
    QpIterationLimit,
}

#[derive(Debug, Clone)]
pub struct StepReport {
    pub status: StepStatus,
    /// `‖(Δx, Δu)‖_∞` of the applied step.
    pub step_norm: f64,
    /// Back-offs used inside the QP (computed before the step).
    pub betas_used: Vec<Vec<f64>>,
    /// Number of horizon evaluation passes of the residual model.
    pub model_evals: usize,
    pub qp_iterations: usize,
    pub max_slack: f64,
    /// Residual predictions along the pre-step iterate.
    pub stage_evals: Vec<StageEval>,
}

#[derive(Debug, Clone, Copy)]
pub struct RtiOptions {
    pub shift: bool,
}

impl Default for RtiOptions {
    fn default() -> Self {
        Self { shift: true }
    }
}

/// Per-stage linearization of the mean dynamics.
struct StageModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    defect: DVector<f64>,
}

/// One real-time iteration. `iterate` is overwritten with the new solution;
/// `iterate.us[0]` is the control to apply.
pub fn sqp_rti_step<P, M, S>(
    iterate: &mut OcpIterate,
    problem: &P,
    model: &M,
    solver: &S,
    spec: &OcpSpec,
    x0: &DVector<f64>,
    options: RtiOptions,
) -> Result<StepReport>
where
    P: OcpProblem + ?Sized,
    M: ResidualModel + ?Sized,
    S: QpSolver + ?Sized,
{
    let t = spec.horizon;
    let n_x = problem.n_x();
    let n_u = problem.n_u();
    spec.validate(n_x, model.n_outputs())?;
    if iterate.horizon() != t || iterate.xs.len() != t + 1 {
        return Err(Error::contract("iterate horizon differs from OcpSpec::horizon"));
    }
    if x0.len() != n_x || x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("initial state must be finite with n_x entries"));
    }

    if options.shift {
        iterate.shift();
    }
    iterate.xs[0] = x0.clone();

    // (b) one model pass along the current iterate
    let evals = model.evaluate_stages(&iterate.xs[..t], &iterate.us)?;
    if evals.len() != t {
        return Err(Error::contract("model returned the wrong number of stages"));
    }
    for e in &evals {
        if e.mean.iter().chain(e.variance.iter()).chain(e.jac_x.iter()).chain(e.jac_u.iter()).any(|v| !v.is_finite())
        {
            return Err(Error::numerical("residual model returned non-finite values"));
        }
    }

    let bres = &spec.b_residual;
    let stages: Vec<StageModel> = (0..t)
        .map(|i| {
            let lin = problem.dynamics(&iterate.xs[i], &iterate.us[i]);
            let e = &evals[i];
            let next = lin.next + bres * &e.mean;
            StageModel {
                a: lin.a + bres * &e.jac_x,
                b: lin.b + bres * &e.jac_u,
                defect: next - &iterate.xs[i + 1],
            }
        })
        .collect();

    // (c) frozen covariances and back-offs
    let sigma_x = if spec.tighten {
        let a: Vec<DMatrix<f64>> = stages.iter().map(|s| s.a.clone()).collect();
        let sg: Vec<DMatrix<f64>> = evals.iter().map(|e| e.variance.clone()).collect();
        propagate_covariance(&a, &sg, bres, &spec.sigma_w)?
    } else {
        vec![DMatrix::zeros(n_x, n_x); t + 1]
    };
    let mut constraints = Vec::with_capacity(t);
    let mut betas = Vec::with_capacity(t);
    for i in 1..=t {
        let rows = problem.constraints(i, &iterate.xs[i]);
        let mut b = Vec::with_capacity(rows.len());
        for row in &rows {
            let beta = if spec.tighten {
                tightening(inverse_normal_cdf(row.prob)?, &row.grad, &sigma_x[i])
            } else {
                0.0
            };
            b.push(beta);
        }
        betas.push(b);
        constraints.push(rows);
    }

    // (d) condense: Δx_i = S_i Δu + c_i
    let n = t * n_u;
    let mut s_mats: Vec<DMatrix<f64>> = Vec::with_capacity(t + 1);
    let mut c_vecs: Vec<DVector<f64>> = Vec::with_capacity(t + 1);
    s_mats.push(DMatrix::zeros(n_x, n));
    c_vecs.push(DVector::zeros(n_x));
    for (i, st) in stages.iter().enumerate() {
        let mut s_next = DMatrix::zeros(n_x, n);
        // only the first i input blocks are nonzero in S_i
        if i > 0 {
            let cols = i * n_u;
            let prod = &st.a * s_mats[i].columns(0, cols);
            s_next.columns_mut(0, cols).copy_from(&prod);
        }
        s_next.columns_mut(i * n_u, n_u).copy_from(&st.b);
        c_vecs.push(&st.a * &c_vecs[i] + &st.defect);
        s_mats.push(s_next);
    }

    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut g = DVector::<f64>::zeros(n);
    let mut add_cost = |cost: &LsqCost, i: usize, with_u: bool| {
        let cols = if with_u { (i + 1) * n_u } else { i * n_u };
        if cols == 0 {
            return;
        }
        // M = Jx S_i + Ju E_i over the first `cols` columns
        let mut m = &cost.jx * s_mats[i].columns(0, cols);
        if with_u {
            let mut block = m.columns_mut(i * n_u, n_u);
            block += &cost.ju;
        }
        let resid = &cost.r + &cost.jx * &c_vecs[i];
        let wm = &cost.w * &m;
        let mut hb = h.view_mut((0, 0), (cols, cols));
        hb.gemm_tr(1.0, &m, &wm, 1.0);
        let mut gb = g.rows_mut(0, cols);
        gb.gemv_tr(1.0, &wm, &resid, 1.0);
        gb.gemv_tr(1.0, &s_mats[i].columns(0, cols), &cost.gx, 1.0);
        if with_u {
            let mut gu = g.rows_mut(i * n_u, n_u);
            gu += &cost.gu;
        }
    };
    for i in 0..t {
        let cost = problem.stage_cost(i, &iterate.xs[i], &iterate.us[i]);
        add_cost(&cost, i, true);
    }
    let terminal = problem.terminal_cost(&iterate.xs[t]);
    add_cost(&terminal, t, false);
    for k in 0..n {
        h[(k, k)] += spec.regularization;
    }
    let h = (&h + h.transpose()) * 0.5;

    let (u_lo, u_hi) = problem.input_bounds();
    let mut lb = DVector::zeros(n);
    let mut ub = DVector::zeros(n);
    for i in 0..t {
        for j in 0..n_u {
            lb[i * n_u + j] = u_lo[j] - iterate.us[i][j];
            ub[i * n_u + j] = u_hi[j] - iterate.us[i][j];
            // a previous solution sitting just outside a bound
            if lb[i * n_u + j] > 0.0 {
                lb[i * n_u + j] = 0.0;
            }
            if ub[i * n_u + j] < 0.0 {
                ub[i * n_u + j] = 0.0;
            }
        }
    }

    let m_rows: usize = constraints.iter().map(|c| c.len()).sum();
    let mut rows = DMatrix::zeros(m_rows, n);
    let mut rhs = DVector::zeros(m_rows);
    let mut penalty = Vec::with_capacity(m_rows);
    let mut r = 0;
    for (k, (cs, bs)) in constraints.iter().zip(&betas).enumerate() {
        let i = k + 1;
        for (c, beta) in cs.iter().zip(bs) {
            // value + β + gᵀ(S_i Δu + c_i) ≤ 0
            let cols = i * n_u;
            let row = c.grad.transpose() * s_mats[i].columns(0, cols);
            rows.view_mut((r, 0), (1, cols)).copy_from(&row);
            rhs[r] = -c.value - beta - c.grad.dot(&c_vecs[i]);
            penalty.push(if c.soft { Some(spec.slack_penalty) } else { None });
            r += 1;
        }
    }

    // (e) solve
    let qp = QpProblem { h, g, lb, ub, rows, rhs, penalty };
    let sol = solver.solve(&qp)?;
    let du = &sol.x;

    // (f) full step along the linear prediction
    let mut step_norm: f64 = du.amax();
    for i in 0..t {
        let d = du.rows(i * n_u, n_u);
        iterate.us[i] += d;
    }
    for i in 1..=t {
        let dx = &s_mats[i] * du + &c_vecs[i];
        step_norm = step_norm.max(dx.amax());
        iterate.xs[i] += dx;
    }
    if iterate.xs.iter().chain(iterate.us.iter()).any(|v| v.iter().any(|x| !x.is_finite())) {
        return Err(Error::numerical("SQP step produced non-finite trajectory"));
    }
    iterate.sigma_x = sigma_x;
    iterate.beta = betas.clone();

    let max_slack = sol.slack.iter().cloned().fold(0.0, f64::max);
    let status = match sol.status {
        QpStatus::MaxIterations => StepStatus::QpIterationLimit,
        QpStatus::Solved if max_slack > 1e-6 => StepStatus::SoftConstraintsActive,
        QpStatus::Solved => StepStatus::Solved,
    };
    Ok(StepReport {
        status,
        step_norm,
        betas_used: betas,
        model_evals: 1,
        qp_iterations: sol.iterations,
        max_slack,
        stage_evals: evals,
    })
}
