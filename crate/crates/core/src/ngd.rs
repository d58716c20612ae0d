//! Natural-gradient updates with Tikhonov damping and an adaptive
//! controller for the damping strength and the learning rate.
//!
//! The loss gradient is factorized as `X epsilon`, with `X` of shape
//! `n_params x n_cols`. The damped direction is
//! `delta = (X X^T + lambda)^-1 X epsilon` and the parameter update is
//! `-alpha delta`.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ansatz::VariationalState;
use crate::error::{Error, Result};
use crate::estimators::{FidelityEstimator, PairEvaluation, StatePair};

const RESIDUAL_LIMIT: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Qgt,
    Ntk,
    #[default]
    Auto,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvatureBundle {
    pub x: DMatrix<f64>,
    pub epsilon: DVector<f64>,
    pub loss_value: f64,
    pub solver: SolverKind,
    gradient: DVector<f64>,
    factorized: bool,
}

impl CurvatureBundle {
    pub fn new(x: DMatrix<f64>, epsilon: DVector<f64>, loss_value: f64, solver: SolverKind) -> Result<Self> {
        if x.ncols() != epsilon.len() {
            return Err(Error::Config(format!(
                "curvature factor has {} columns but epsilon has {} entries",
                x.ncols(),
                epsilon.len()
            )));
        }
        let gradient = &x * &epsilon;
        Ok(Self {
            x,
            epsilon,
            loss_value,
            solver,
            gradient,
            factorized: true,
        })
    }

    /// Curvature `X X^T` with a gradient that has no `X epsilon` form. Only
    /// the parameter-space solve applies to such a bundle.
    pub fn from_gradient(x: DMatrix<f64>, gradient: DVector<f64>, loss_value: f64, solver: SolverKind) -> Result<Self> {
        if x.nrows() != gradient.len() {
            return Err(Error::Config(format!(
                "curvature factor has {} rows but the gradient has {} entries",
                x.nrows(),
                gradient.len()
            )));
        }
        if solver == SolverKind::Ntk {
            return Err(Error::Capability("the sample-space solve needs a factorized gradient".into()));
        }
        let epsilon = DVector::zeros(x.ncols());
        Ok(Self {
            x,
            epsilon,
            loss_value,
            solver,
            gradient,
            factorized: false,
        })
    }

    pub fn is_factorized(&self) -> bool {
        self.factorized
    }

    pub fn n_params(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.x.ncols()
    }

    /// Loss gradient, `X epsilon` for factorized bundles.
    pub fn gradient(&self) -> &DVector<f64> {
        &self.gradient
    }

    /// The solver `Auto` resolves to: NTK when parameters outnumber columns.
    pub fn resolved_solver(&self) -> SolverKind {
        match self.solver {
            SolverKind::Auto if self.factorized && self.n_params() > self.n_cols() => SolverKind::Ntk,
            SolverKind::Auto => SolverKind::Qgt,
            s => s,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub delta: DVector<f64>,
    /// `|(X X^T + lambda) delta - X epsilon| / |X epsilon|`.
    pub relative_residual: f64,
    pub solver: SolverKind,
}

fn cholesky(mut m: DMatrix<f64>, lambda: f64) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    for i in 0..m.nrows() {
        m[(i, i)] += lambda;
    }
    Cholesky::new(m).ok_or_else(|| {
        Error::LinearSolve(format!("damped curvature is not positive definite at lambda = {lambda:.3e}; increase lambda"))
    })
}

fn finish(bundle: &CurvatureBundle, lambda: f64, delta: DVector<f64>, solver: SolverKind) -> Result<Solution> {
    if delta.iter().any(|v| !v.is_finite()) {
        return Err(Error::LinearSolve(format!("non-finite update at lambda = {lambda:.3e}")));
    }
    let rhs = bundle.gradient();
    let lhs = &bundle.x * (bundle.x.tr_mul(&delta)) + &delta * lambda;
    let scale = rhs.norm();
    let relative_residual = if scale > 0.0 { (lhs - rhs).norm() / scale } else { 0.0 };
    if relative_residual > RESIDUAL_LIMIT {
        return Err(Error::LinearSolve(format!(
            "relative residual {relative_residual:.3e} at lambda = {lambda:.3e}; increase lambda"
        )));
    }
    Ok(Solution {
        delta,
        relative_residual,
        solver,
    })
}

/// `delta = (X X^T + lambda)^-1 X epsilon`, one refinement sweep.
pub fn solve_qgt(bundle: &CurvatureBundle, lambda: f64) -> Result<Solution> {
    let chol = cholesky(&bundle.x * bundle.x.transpose(), lambda)?;
    let rhs = bundle.gradient();
    let mut delta = chol.solve(rhs);
    let r = rhs - (&bundle.x * bundle.x.tr_mul(&delta) + &delta * lambda);
    delta += chol.solve(&r);
    finish(bundle, lambda, delta, SolverKind::Qgt)
}

/// `delta = X (X^T X + lambda)^-1 epsilon`, one refinement sweep.
pub fn solve_ntk(bundle: &CurvatureBundle, lambda: f64) -> Result<Solution> {
    if !bundle.factorized {
        return Err(Error::Capability("the sample-space solve needs a factorized gradient".into()));
    }
    let chol = cholesky(bundle.x.tr_mul(&bundle.x), lambda)?;
    let mut coeffs = chol.solve(&bundle.epsilon);
    let r = &bundle.epsilon - (bundle.x.tr_mul(&(&bundle.x * &coeffs)) + &coeffs * lambda);
    coeffs += chol.solve(&r);
    finish(bundle, lambda, &bundle.x * coeffs, SolverKind::Ntk)
}

pub fn solve(bundle: &CurvatureBundle, lambda: f64) -> Result<Solution> {
    match bundle.resolved_solver() {
        SolverKind::Ntk => solve_ntk(bundle, lambda),
        _ => solve_qgt(bundle, lambda),
    }
}

/// `M(step) = L + step^T X epsilon + |X^T step|^2 / 2`.
pub fn quadratic_model(bundle: &CurvatureBundle, step: &DVector<f64>) -> f64 {
    let xt = bundle.x.tr_mul(step);
    bundle.loss_value + step.dot(&bundle.gradient) + 0.5 * xt.norm_squared()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DampingState {
    pub lambda: f64,
    pub alpha: f64,
    pub alpha_max: f64,
    /// Number of halvings tried below `alpha_max`, inclusive of `alpha_max`.
    pub alpha_candidates: usize,
    pub xi0: f64,
    pub rho0: f64,
    pub rho1: f64,
    pub eta0: f64,
    pub eta1: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl Default for DampingState {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            alpha: 1.0,
            alpha_max: 1.0,
            alpha_candidates: 6,
            xi0: 0.1,
            rho0: 0.25,
            rho1: 0.5,
            eta0: 1.5,
            eta1: 0.95,
            lambda_min: 1e-10,
            lambda_max: 1e2,
        }
    }
}

impl DampingState {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda > 0.0
            && self.alpha_max > 0.0
            && self.alpha_max <= 1.0
            && self.alpha_candidates >= 1
            && self.xi0 > 0.0
            && 0.0 < self.rho0
            && self.rho0 < self.rho1
            && self.rho1 < 1.0
            && self.eta0 > 1.0
            && 0.0 < self.eta1
            && self.eta1 < 1.0
            && 0.0 < self.lambda_min
            && self.lambda_min <= self.lambda_max;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid damping settings {self:?}")))
        }
    }

    fn clamp(&mut self) {
        self.lambda = self.lambda.clamp(self.lambda_min, self.lambda_max);
    }

    pub fn alpha_grid(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.alpha_candidates).map(move |k| self.alpha_max * 0.5f64.powi(k as i32))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DampingOutcome {
    pub state: DampingState,
    pub accepted: bool,
    pub rho: f64,
}

/// Reduction-ratio update of `lambda` after a candidate step.
pub fn auto_damping_step(ctrl: &DampingState, l_k: f64, l_next: f64, m_delta: f64) -> DampingOutcome {
    let mut state = *ctrl;
    if !l_next.is_finite() {
        state.lambda *= state.eta0 * state.eta0;
        state.clamp();
        return DampingOutcome {
            state,
            accepted: false,
            rho: f64::NAN,
        };
    }
    if m_delta == l_k {
        state.lambda *= state.eta0;
        state.clamp();
        return DampingOutcome {
            state,
            accepted: false,
            rho: 0.0,
        };
    }
    let rho = (l_next - l_k) / (m_delta - l_k);
    if rho < state.rho0 {
        state.lambda *= state.eta0;
    } else if rho > state.rho1 {
        state.lambda *= state.eta1;
    }
    state.clamp();
    DampingOutcome {
        state,
        accepted: true,
        rho,
    }
}

/// `|L - M| / |L + M|`.
pub fn model_agreement(l_next: f64, m: f64) -> f64 {
    (l_next - m).abs() / (l_next + m).abs()
}

/// One line of the per-iteration diagnostics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss: f64,
    pub loss_next: Option<f64>,
    pub lambda: f64,
    pub alpha: Option<f64>,
    pub rho: Option<f64>,
    pub xi: Option<f64>,
    pub delta_norm: f64,
    pub accepted: bool,
    pub solver: SolverKind,
    pub relative_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl IterationRecord {
    pub fn to_jsonl(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NgdUpdate {
    /// Damped natural gradient.
    pub delta: DVector<f64>,
    /// Parameter change actually proposed, `-alpha delta`; `None` if rejected.
    pub step: Option<DVector<f64>>,
    /// Quadratic model at the accepted step.
    pub model_value: f64,
    pub lambda_used: f64,
    pub alpha_used: f64,
    pub damping: DampingState,
    pub record: IterationRecord,
}

/// Solves for the damped direction, searches `alpha` on the geometric grid
/// for the largest value with model agreement `xi <= xi0`, then updates the
/// damping from the reduction ratio at that `alpha`. `loss_at` evaluates the
/// loss after a parameter change on the current samples.
pub fn ngd_step<F>(bundle: &CurvatureBundle, ctrl: &DampingState, iteration: usize, mut loss_at: F) -> NgdUpdate
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
{
    let l_k = bundle.loss_value;
    let mut record = IterationRecord {
        iteration,
        loss: l_k,
        loss_next: None,
        lambda: ctrl.lambda,
        alpha: None,
        rho: None,
        xi: None,
        delta_norm: 0.0,
        accepted: false,
        solver: bundle.resolved_solver(),
        relative_residual: f64::NAN,
        note: None,
    };
    let reject = |ctrl: &DampingState, delta: DVector<f64>, mut record: IterationRecord, note: String| {
        let mut damping = *ctrl;
        damping.lambda *= damping.eta0 * damping.eta0;
        damping.clamp();
        record.note = Some(note);
        NgdUpdate {
            delta,
            step: None,
            model_value: l_k,
            lambda_used: ctrl.lambda,
            alpha_used: 0.0,
            damping,
            record,
        }
    };
    let solution = match solve(bundle, ctrl.lambda) {
        Ok(s) => s,
        Err(e) => return reject(ctrl, DVector::zeros(bundle.n_params()), record, e.to_string()),
    };
    record.solver = solution.solver;
    record.relative_residual = solution.relative_residual;
    record.delta_norm = solution.delta.norm();
    let delta = solution.delta;
    let mut best: Option<(f64, DVector<f64>, f64, f64, f64)> = None;
    let mut last_xi = f64::NAN;
    for alpha in ctrl.alpha_grid() {
        let step = &delta * (-alpha);
        let m = quadratic_model(bundle, &step);
        let l_next = match loss_at(&step) {
            Ok(v) => v,
            Err(_) => continue,
        };
        if !l_next.is_finite() {
            continue;
        }
        let xi = model_agreement(l_next, m);
        last_xi = xi;
        if xi <= ctrl.xi0 {
            best = Some((alpha, step, m, l_next, xi));
            break;
        }
    }
    let Some((alpha, step, m, l_next, xi)) = best else {
        record.xi = last_xi.is_finite().then_some(last_xi);
        return reject(ctrl, delta, record, "no learning rate satisfies the model agreement test".into());
    };
    let outcome = auto_damping_step(ctrl, l_k, l_next, m);
    let mut damping = outcome.state;
    record.alpha = Some(alpha);
    record.xi = Some(xi);
    record.loss_next = Some(l_next);
    record.rho = outcome.rho.is_finite().then_some(outcome.rho);
    record.accepted = outcome.accepted;
    if !outcome.accepted {
        record.note = Some("zero predicted reduction".into());
        return NgdUpdate {
            delta,
            step: None,
            model_value: m,
            lambda_used: ctrl.lambda,
            alpha_used: alpha,
            damping,
            record,
        };
    }
    damping.alpha = alpha;
    NgdUpdate {
        delta,
        step: Some(step),
        model_value: m,
        lambda_used: ctrl.lambda,
        alpha_used: alpha,
        damping,
        record,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossEvaluation {
    pub loss: f64,
    pub effective_sample_size: f64,
    /// Set when fewer than two effective samples remain after reweighting.
    pub degenerate: bool,
}

/// Infidelity at `theta_new` on samples drawn from the state in `pair.psi`;
/// the reweighting to the new parameters happens inside the estimator.
pub fn reweighted_loss_eval(theta_new: &VariationalState, pair: StatePair<'_>, estimator: FidelityEstimator, c: f64) -> Result<LossEvaluation> {
    let eval = PairEvaluation::new(StatePair { psi: theta_new, ..pair })?;
    let ess = eval.effective_sample_size();
    Ok(LossEvaluation {
        loss: 1.0 - eval.estimate(estimator, c).value,
        effective_sample_size: ess,
        degenerate: ess < 2.0,
    })
}
