//! Time evolution by successive state compressions.
//!
//! Each time step walks the factors of a scheme plan. Diagonal exponentials
//! are absorbed into the parameters exactly; every linear or Padé factor is
//! one infidelity minimization `min_theta L(V psi_theta, U psi_old)`.

use std::time::Instant;

use nalgebra::DVector;
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ansatz::{Ansatz, VariationalState};
use crate::error::{Error, Result};
use crate::estimators::{FidelityEstimator, GradientEstimator, PairEvaluation, Pairing, StatePair};
use crate::exact::full_operator;
use crate::lattice::{LatticeSpec, DEFAULT_EXACT_LIMIT};
use crate::ngd::{ngd_step, reweighted_loss_eval, CurvatureBundle, DampingState, IterationRecord, SolverKind};
use crate::operators::{build_tfim, shift_scale, split_diag_offdiag, OperatorSplit, SparseOperator};
use crate::sampling::{estimate_observable, full_summation, mix_seed, sample, SampleSet, SamplerConfig};
use crate::schemes::{build_plan, FactorDescriptor, SchemeId, SchemePlan};

const MINUS_I: C64 = C64 { re: 0.0, im: -1.0 };

/// Default number of consecutive rejected NGD steps after which a compression stops.
pub const MAX_CONSECUTIVE_REJECTIONS: usize = 40;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSettings {
    /// Enumerate the whole basis instead of sampling.
    pub full_summation: bool,
    pub sampler: SamplerConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSettings {
    /// Estimator used for the loss, the model checks and best-seen selection.
    pub fidelity: FidelityEstimator,
    pub gradient: GradientEstimator,
    pub control_variate: f64,
    /// Pairing for sampled runs; full summation always uses product pairing.
    pub pairing: Pairing,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self {
            fidelity: FidelityEstimator::SingleMcCv,
            gradient: GradientEstimator::Hermitian,
            control_variate: -0.5,
            pairing: Pairing::Joint,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DampingMode {
    /// Reduction-ratio control of lambda with a line search on alpha.
    #[default]
    Auto,
    /// Constant lambda and alpha, every step taken.
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    pub max_iterations: usize,
    /// Stop once the monitored infidelity falls below this value. Defaults to
    /// 1e-8 with full summation and 1e-4 with sampling.
    pub target_infidelity: Option<f64>,
    pub solver: SolverKind,
    pub damping_mode: DampingMode,
    pub damping: DampingState,
    /// Stop after this many consecutive rejected steps; 0 never stops early.
    pub max_rejections: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            target_infidelity: None,
            solver: SolverKind::Auto,
            damping_mode: DampingMode::Auto,
            damping: DampingState::default(),
            max_rejections: MAX_CONSECUTIVE_REJECTIONS,
        }
    }
}

impl OptimizerSettings {
    pub fn target(&self, full_summation: bool) -> f64 {
        self.target_infidelity.unwrap_or(if full_summation { 1e-8 } else { 1e-4 })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressSettings {
    pub sampling: SamplingSettings,
    pub estimators: EstimatorSettings,
    pub optimizer: OptimizerSettings,
}

impl CompressSettings {
    pub fn validate(&self) -> Result<()> {
        if !self.sampling.full_summation {
            self.sampling.sampler.validate()?;
        }
        self.optimizer.damping.validate()?;
        if !self.estimators.control_variate.is_finite() {
            return Err(Error::Config("control_variate must be finite".into()));
        }
        Ok(())
    }

    fn pairing(&self) -> Pairing {
        if self.sampling.full_summation {
            Pairing::Product
        } else {
            self.estimators.pairing
        }
    }
}

/// Transformations and target state of one compression.
#[derive(Clone, Copy, Debug)]
pub struct CompressTarget<'a> {
    pub phi: &'a VariationalState,
    pub v_op: Option<&'a SparseOperator>,
    pub u_op: Option<&'a SparseOperator>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressDiagnostics {
    pub initial_infidelity: f64,
    pub best_infidelity: f64,
    pub best_iteration: usize,
    /// NGD iterations performed (steps attempted, accepted or not).
    pub iterations: usize,
    pub converged: bool,
    /// Monitored infidelity at every evaluated iterate.
    pub history: Vec<f64>,
    pub records: Vec<IterationRecord>,
    pub seconds: f64,
}

fn draw(state: &VariationalState, settings: &CompressSettings, seed: u64) -> Result<SampleSet> {
    if settings.sampling.full_summation {
        full_summation(state, DEFAULT_EXACT_LIMIT)
    } else {
        sample(state, &settings.sampling.sampler.with_seed(seed))
    }
}

fn divergence(detail: String) -> Error {
    Error::Divergence { substep: 0, detail }
}

/// Minimizes the infidelity between `V psi_theta` and `U phi`, starting at
/// `initial`, and returns the best parameters seen.
pub fn compress(initial: &VariationalState, target: CompressTarget<'_>, settings: &CompressSettings, seed: u64) -> Result<(VariationalState, CompressDiagnostics)> {
    compress_with(initial, target, settings, seed, &mut |_, _, _| Ok(()))
}

/// Per-iteration hook: iteration index, current parameters and the pair
/// evaluation on that iteration's samples.
pub type CompressObserver<'o> = dyn FnMut(usize, &VariationalState, &PairEvaluation<'_>) -> Result<()> + 'o;

/// [`compress`] with a hook called once per evaluated iterate.
pub fn compress_with(
    initial: &VariationalState,
    target: CompressTarget<'_>,
    settings: &CompressSettings,
    seed: u64,
    observer: &mut CompressObserver<'_>,
) -> Result<(VariationalState, CompressDiagnostics)> {
    settings.validate()?;
    let started = Instant::now();
    let est = settings.estimators;
    let opt = settings.optimizer;
    let goal = opt.target(settings.sampling.full_summation);
    let pairing = settings.pairing();
    let phi_fixed = if settings.sampling.full_summation {
        Some(draw(target.phi, settings, 0)?)
    } else {
        None
    };

    let mut state = initial.clone();
    let mut best = state.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_iteration = 0;
    let mut damping = opt.damping;
    let mut history = Vec::new();
    let mut records = Vec::new();
    let mut rejections = 0;
    let mut converged = false;
    let mut iteration = 0;

    loop {
        let samples_psi = draw(&state, settings, mix_seed(seed, 2 * iteration as u64))?;
        let samples_phi = match &phi_fixed {
            Some(s) => s.clone(),
            None => draw(target.phi, settings, mix_seed(seed, 2 * iteration as u64 + 1))?,
        };
        let pair = StatePair {
            psi: &state,
            v_op: target.v_op,
            phi: target.phi,
            u_op: target.u_op,
            samples_psi: &samples_psi,
            samples_phi: &samples_phi,
            pairing,
        };
        let eval = PairEvaluation::new(pair).map_err(|e| divergence(format!("iteration {iteration}: {e}")))?;
        observer(iteration, &state, &eval)?;
        let loss = 1.0 - eval.estimate(est.fidelity, est.control_variate).value;
        if !loss.is_finite() {
            return Err(divergence(format!("non-finite loss at iteration {iteration}")));
        }
        history.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best = state.clone();
            best_iteration = iteration;
        }
        if loss <= goal {
            converged = true;
            break;
        }
        if iteration >= opt.max_iterations || (opt.max_rejections > 0 && rejections >= opt.max_rejections) {
            break;
        }

        let grad = eval.gradient(est.gradient, est.control_variate)?;
        let bundle = match grad.factorized {
            Some(f) => CurvatureBundle::new(f.x, -f.epsilon, loss, opt.solver)?,
            None => {
                let curvature = eval.grad_hermitian(&eval.psi_jacobian()?)?;
                let x = curvature.factorized.expect("hermitian gradients are factorized").x;
                CurvatureBundle::from_gradient(x, -grad.grad, loss, opt.solver)?
            }
        };

        match opt.damping_mode {
            DampingMode::Auto => {
                let update = ngd_step(&bundle, &damping, iteration, |step: &DVector<f64>| {
                    let candidate = state.shifted(step.as_slice())?;
                    Ok(reweighted_loss_eval(&candidate, pair, est.fidelity, est.control_variate)?.loss)
                });
                damping = update.damping;
                records.push(update.record);
                match update.step {
                    Some(step) => {
                        state = state.shifted(step.as_slice())?;
                        rejections = 0;
                    }
                    None => rejections += 1,
                }
            }
            DampingMode::Fixed => {
                let solution = crate::ngd::solve(&bundle, damping.lambda)?;
                let step = &solution.delta * (-damping.alpha_max);
                records.push(IterationRecord {
                    iteration,
                    loss,
                    loss_next: None,
                    lambda: damping.lambda,
                    alpha: Some(damping.alpha_max),
                    rho: None,
                    xi: None,
                    delta_norm: solution.delta.norm(),
                    accepted: true,
                    solver: solution.solver,
                    relative_residual: solution.relative_residual,
                    note: None,
                });
                state = state.shifted(step.as_slice())?;
            }
        }
        iteration += 1;
    }

    let diagnostics = CompressDiagnostics {
        initial_infidelity: history[0],
        best_infidelity: best_loss,
        best_iteration,
        iterations: iteration,
        converged,
        history,
        records,
        seconds: started.elapsed().as_secs_f64(),
    };
    Ok((best, diagnostics))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubstepKind {
    Diagonal,
    Linear,
    Pade,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubstepDiagnostics {
    pub index: usize,
    pub kind: SubstepKind,
    /// `None` for exactly applied diagonal factors.
    pub compress: Option<CompressDiagnostics>,
}

impl SubstepDiagnostics {
    pub fn final_infidelity(&self) -> f64 {
        self.compress.as_ref().map_or(0.0, |c| c.best_infidelity)
    }

    pub fn iterations(&self) -> usize {
        self.compress.as_ref().map_or(0, |c| c.iterations)
    }
}

/// Operator the off-diagonal factors act with: the X part for split plans,
/// the full Hamiltonian otherwise.
pub fn factor_operator(plan: &SchemePlan, split: &OperatorSplit) -> Result<SparseOperator> {
    if plan.is_split() {
        Ok(split.x_part.clone())
    } else {
        full_operator(split)
    }
}

/// Advances `state` by one step of `plan`.
pub fn step(state: &VariationalState, plan: &SchemePlan, split: &OperatorSplit, dt: f64, settings: &CompressSettings, seed: u64) -> Result<(VariationalState, Vec<SubstepDiagnostics>)> {
    let op = factor_operator(plan, split)?;
    let mut current = state.clone();
    let mut out = Vec::with_capacity(plan.factors.len());
    for (index, factor) in plan.factors.iter().enumerate() {
        let with_substep = |e: Error| match e {
            Error::Divergence { detail, .. } => Error::Divergence { substep: index, detail },
            other => other,
        };
        match *factor {
            FactorDescriptor::DiagonalExp(alpha) => {
                current = current.apply_diagonal_exact(alpha, &split.z_part, dt)?;
                out.push(SubstepDiagnostics {
                    index,
                    kind: SubstepKind::Diagonal,
                    compress: None,
                });
            }
            FactorDescriptor::OffDiagLinear(a) => {
                let u = shift_scale(&op, a * MINUS_I, dt);
                let target = CompressTarget {
                    phi: &current,
                    v_op: None,
                    u_op: Some(&u),
                };
                let (next, diag) = compress(&current, target, settings, mix_seed(seed, index as u64)).map_err(with_substep)?;
                current = next;
                out.push(SubstepDiagnostics {
                    index,
                    kind: SubstepKind::Linear,
                    compress: Some(diag),
                });
            }
            FactorDescriptor::OffDiagPade { a, b } => {
                let u = shift_scale(&op, a * MINUS_I, dt);
                let v = shift_scale(&op, b * MINUS_I, dt);
                let target = CompressTarget {
                    phi: &current,
                    v_op: Some(&v),
                    u_op: Some(&u),
                };
                let (next, diag) = compress(&current, target, settings, mix_seed(seed, index as u64)).map_err(with_substep)?;
                current = next;
                out.push(SubstepDiagnostics {
                    index,
                    kind: SubstepKind::Pade,
                    compress: Some(diag),
                });
            }
        }
    }
    Ok((current, out))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AnsatzSettings {
    LogStateVector,
    Jastrow {
        /// Channels of an optional convolutional backbone; empty for none.
        #[serde(default)]
        channels: Vec<usize>,
        #[serde(default = "default_kernel")]
        kernel: usize,
    },
    Conv {
        channels: Vec<usize>,
        #[serde(default = "default_kernel")]
        kernel: usize,
    },
}

fn default_kernel() -> usize {
    3
}

impl Default for AnsatzSettings {
    fn default() -> Self {
        AnsatzSettings::Jastrow {
            channels: Vec::new(),
            kernel: 3,
        }
    }
}

impl AnsatzSettings {
    pub fn build(&self, lattice: &LatticeSpec) -> Result<Ansatz> {
        match self {
            AnsatzSettings::LogStateVector => Ansatz::log_state_vector(lattice.n_sites()),
            AnsatzSettings::Jastrow { channels, kernel } if channels.is_empty() => {
                let _ = kernel;
                Ansatz::jastrow(*lattice, None)
            }
            AnsatzSettings::Jastrow { channels, kernel } => Ansatz::jastrow(*lattice, Some((channels.clone(), *kernel))),
            AnsatzSettings::Conv { channels, kernel } => Ansatz::conv(*lattice, channels.clone(), *kernel),
        }
    }

    /// Infidelity the initial-state compression aims for.
    pub fn initial_target(&self) -> f64 {
        match self {
            AnsatzSettings::LogStateVector => 1e-14,
            AnsatzSettings::Jastrow { channels, .. } if channels.is_empty() => 1e-14,
            _ => 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuenchSpec {
    pub lattice: LatticeSpec,
    #[serde(default = "one")]
    pub coupling: f64,
    /// Only the fully polarized `h = inf` initial state is supported.
    #[serde(default = "infinity")]
    pub h_initial: f64,
    pub h_final: f64,
    pub scheme: SchemeId,
    pub dt: f64,
    pub t_final: f64,
    #[serde(default)]
    pub ansatz: AnsatzSettings,
    /// Scale of the random parameters the initial compression starts from.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub compress: CompressSettings,
}

fn one() -> f64 {
    1.0
}

fn infinity() -> f64 {
    f64::INFINITY
}

fn default_init_scale() -> f64 {
    0.01
}

impl QuenchSpec {
    pub fn validate(&self) -> Result<()> {
        self.lattice.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_final >= self.dt) {
            return Err(Error::Config(format!("t_final = {} must be at least dt = {}", self.t_final, self.dt)));
        }
        if self.h_initial != f64::INFINITY {
            return Err(Error::Config(format!(
                "h_initial = {} unsupported; only the h = inf initial state is available",
                self.h_initial
            )));
        }
        if !self.h_final.is_finite() || !self.coupling.is_finite() {
            return Err(Error::Config("h_final and coupling must be finite".into()));
        }
        if !self.scheme.is_supported() {
            let supported: Vec<String> = SchemeId::all_supported().iter().map(|s| s.to_string()).collect();
            return Err(Error::Config(format!("unsupported scheme {}; supported: {}", self.scheme, supported.join(", "))));
        }
        if !(self.init_scale >= 0.0) {
            return Err(Error::Config("init_scale must be non-negative".into()));
        }
        if self.scheme.kind.is_split() && matches!(self.ansatz, AnsatzSettings::Conv { .. }) {
            return Err(Error::Config(format!(
                "{} applies diagonal exponentials, which the conv ansatz cannot absorb; use kind = \"jastrow\" with channels",
                self.scheme
            )));
        }
        self.compress.validate()
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn hamiltonian(&self) -> Result<SparseOperator> {
        build_tfim(&self.lattice, self.coupling, self.h_final)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub time: f64,
    pub mx: f64,
    pub mx_err: f64,
    pub substep_infidelities: Vec<f64>,
    pub iterations: Vec<usize>,
    pub lambda_trace: Vec<f64>,
    pub alpha_trace: Vec<f64>,
    pub checkpoint: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub points: Vec<TrajectoryPoint>,
    pub initial_infidelity: f64,
    pub complete: bool,
    pub error: Option<String>,
}

pub struct QuenchOutcome {
    pub record: TrajectoryRecord,
    pub final_state: VariationalState,
}

/// Called after each recorded time point with the state at that time and
/// the substep diagnostics that produced it; returns a checkpoint reference.
pub trait QuenchObserver {
    fn on_point(&mut self, point: &TrajectoryPoint, state: &VariationalState, substeps: &[SubstepDiagnostics]) -> Result<Option<String>>;
}

impl QuenchObserver for () {
    fn on_point(&mut self, _: &TrajectoryPoint, _: &VariationalState, _: &[SubstepDiagnostics]) -> Result<Option<String>> {
        Ok(None)
    }
}

fn magnetization(state: &VariationalState, mx: &SparseOperator, settings: &CompressSettings, seed: u64) -> Result<(f64, f64)> {
    let samples = draw(state, settings, seed)?;
    let est = estimate_observable(state, mx, &samples)?;
    Ok((est.mean.re, est.stderr))
}

fn point(step: usize, time: f64, mx: (f64, f64), substeps: &[SubstepDiagnostics]) -> TrajectoryPoint {
    let compressions = substeps.iter().filter_map(|s| s.compress.as_ref());
    TrajectoryPoint {
        step,
        time,
        mx: mx.0,
        mx_err: mx.1,
        substep_infidelities: substeps.iter().filter(|s| s.kind != SubstepKind::Diagonal).map(|s| s.final_infidelity()).collect(),
        iterations: substeps.iter().filter(|s| s.kind != SubstepKind::Diagonal).map(|s| s.iterations()).collect(),
        lambda_trace: compressions.clone().flat_map(|c| c.records.iter().map(|r| r.lambda)).collect(),
        alpha_trace: compressions.flat_map(|c| c.records.iter().filter_map(|r| r.alpha)).collect(),
        checkpoint: None,
    }
}

/// Prepares the uniform state by compression from random parameters.
pub fn initial_state(spec: &QuenchSpec) -> Result<(VariationalState, CompressDiagnostics)> {
    let ansatz = spec.ansatz.build(&spec.lattice)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, 0));
    let start = VariationalState::random(ansatz.clone(), spec.init_scale, &mut rng)?;
    let uniform = VariationalState::zeros(ansatz)?;
    let mut settings = spec.compress.clone();
    if settings.sampling.full_summation {
        settings.optimizer.target_infidelity = Some(spec.ansatz.initial_target());
    }
    let target = CompressTarget {
        phi: &uniform,
        v_op: None,
        u_op: None,
    };
    compress(&start, target, &settings, mix_seed(spec.seed, 1))
}

pub fn run_quench(spec: &QuenchSpec) -> Result<QuenchOutcome> {
    run_quench_with(spec, &mut ())
}

/// Runs the quench; a failing substep ends the run with a partial record.
pub fn run_quench_with(spec: &QuenchSpec, observer: &mut dyn QuenchObserver) -> Result<QuenchOutcome> {
    spec.validate()?;
    let plan = build_plan(spec.scheme.kind, spec.scheme.order)?;
    let split = split_diag_offdiag(&spec.hamiltonian()?);
    let mx_op = SparseOperator::magnetization_x(spec.lattice.n_sites());
    let (mut state, init) = initial_state(spec)?;
    let settings = &spec.compress;

    let mut points = Vec::new();
    let mx0 = magnetization(&state, &mx_op, settings, mix_seed(spec.seed, 2))?;
    let mut p0 = point(0, 0.0, mx0, &[]);
    p0.checkpoint = observer.on_point(&p0, &state, &[])?;
    points.push(p0);

    let mut error = None;
    for k in 1..=spec.n_steps() {
        let step_seed = mix_seed(spec.seed, 1000 + k as u64);
        match step(&state, &plan, &split, spec.dt, settings, step_seed) {
            Ok((next, substeps)) => {
                state = next;
                let mx = magnetization(&state, &mx_op, settings, mix_seed(step_seed, u64::MAX))?;
                let mut p = point(k, k as f64 * spec.dt, mx, &substeps);
                p.checkpoint = observer.on_point(&p, &state, &substeps)?;
                points.push(p);
            }
            Err(e) => {
                error = Some(format!("step {k}: {e}"));
                break;
            }
        }
    }
    Ok(QuenchOutcome {
        record: TrajectoryRecord {
            points,
            initial_infidelity: init.best_infidelity,
            complete: error.is_none(),
            error,
        },
        final_state: state,
    })
}
