//! Fidelity and fidelity-gradient estimators for a pair of states, with
//! control variates and importance reweighting for transformed states.
//!
//! The variational side is `V|psi>` and the target side `U|phi>`. Samples are
//! always drawn from the bare states (or from an earlier parameter set of
//! `psi`); the ratio `|psi~(x) / psi_src(x)|^2` reweights them to the Born
//! distribution of the transformed state. Without transformations and with
//! unchanged parameters these weights are exactly one.
//!
//! Notation below: `R(x) = phi~(x)/psi~(x)` on psi-samples,
//! `R'(y) = psi~(y)/phi~(y)` on phi-samples and `A(x, y) = R(x) R'(y)`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ansatz::{JacobianBatch, VariationalState};
use crate::error::{Error, Result};
use crate::lattice::SpinConfiguration;
use crate::operators::SparseOperator;
use crate::sampling::SampleSet;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// How psi-samples and phi-samples are combined into pairs `z = (x, y)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// `z_i = (x_i, y_i)`; requires equal sample counts.
    #[default]
    Joint,
    /// All `(x_i, y_j)` combinations. Sums over `y` are evaluated once, so the
    /// cost stays linear in the number of samples.
    Product,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FidelityEstimator {
    SingleMc,
    SingleMcCv,
    DoubleMc,
    DoubleMcCv,
}

impl FidelityEstimator {
    pub const ALL: [FidelityEstimator; 4] = [
        FidelityEstimator::SingleMc,
        FidelityEstimator::SingleMcCv,
        FidelityEstimator::DoubleMc,
        FidelityEstimator::DoubleMcCv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FidelityEstimator::SingleMc => "single_mc",
            FidelityEstimator::SingleMcCv => "single_mc_cv",
            FidelityEstimator::DoubleMc => "double_mc",
            FidelityEstimator::DoubleMcCv => "double_mc_cv",
        }
    }

    pub fn uses_control_variate(self) -> bool {
        matches!(self, FidelityEstimator::SingleMcCv | FidelityEstimator::DoubleMcCv)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientEstimator {
    Hermitian,
    Mixed,
    NonHermitian,
}

/// Both sides of a fidelity evaluation.
#[derive(Clone, Copy, Debug)]
pub struct StatePair<'a> {
    pub psi: &'a VariationalState,
    pub v_op: Option<&'a SparseOperator>,
    pub phi: &'a VariationalState,
    pub u_op: Option<&'a SparseOperator>,
    pub samples_psi: &'a SampleSet,
    pub samples_phi: &'a SampleSet,
    pub pairing: Pairing,
}

/// Normalization ratios estimated on the samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormRatios {
    /// `<psi~|psi~> / <psi_src|psi_src>`.
    pub psi: f64,
    /// `<phi~|phi~> / <phi|phi>`.
    pub phi: f64,
    /// Normalization of the paired estimator.
    pub joint: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorResult {
    pub value: f64,
    pub variance: f64,
    /// `A(z_i)` for joint single-sample estimators; `H_loc(x_i)` otherwise.
    pub locals: Vec<C64>,
    pub norm_ratio_estimates: NormRatios,
}

/// `grad = X epsilon` with `X` of shape `n_params x 2 n_samples`.
#[derive(Clone, Debug, PartialEq)]
pub struct Factorization {
    pub x: DMatrix<f64>,
    pub epsilon: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientResult {
    /// Gradient of the fidelity with respect to the parameters of psi.
    pub grad: DVector<f64>,
    pub factorized: Option<Factorization>,
    pub estimator: GradientEstimator,
}

/// Deduplicated log-amplitude table.
struct LogTable {
    index: HashMap<u64, usize>,
    configs: Vec<SpinConfiguration>,
    values: Vec<C64>,
}

impl LogTable {
    fn build(state: &VariationalState, wanted: impl Iterator<Item = SpinConfiguration>) -> Self {
        let mut index = HashMap::new();
        let mut configs = Vec::new();
        for x in wanted {
            index.entry(x.index()).or_insert_with(|| {
                configs.push(x);
                configs.len() - 1
            });
        }
        let values = configs.par_iter().map(|x| state.log_amplitude(x)).collect();
        Self {
            index,
            configs,
            values,
        }
    }

    fn get(&self, x: &SpinConfiguration) -> C64 {
        self.values[self.index[&x.index()]]
    }
}

type Row = Vec<(SpinConfiguration, C64)>;

fn connected_rows(op: Option<&SparseOperator>, xs: &[SpinConfiguration]) -> Option<Vec<Row>> {
    op.map(|op| xs.par_iter().map(|x| op.connected_elements(x)).collect())
}

fn wanted<'a>(xs: &'a [SpinConfiguration], rows: &'a Option<Vec<Row>>) -> Box<dyn Iterator<Item = SpinConfiguration> + 'a> {
    match rows {
        Some(rows) => Box::new(rows.iter().flat_map(|r| r.iter().map(|(y, _)| *y))),
        None => Box::new(xs.iter().copied()),
    }
}

/// `log sum_x' v(x') exp(l(x'))` evaluated stably.
fn log_sum(row: &[(SpinConfiguration, C64)], table: &LogTable) -> C64 {
    let logs: Vec<C64> = row.iter().map(|(y, _)| table.get(y)).collect();
    let m = logs.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return C64::new(f64::NEG_INFINITY, 0.0);
    }
    let s: C64 = row.iter().zip(&logs).map(|((_, v), l)| v * (l - m).exp()).sum();
    if s == ZERO {
        return C64::new(f64::NEG_INFINITY, 0.0);
    }
    s.ln() + m
}

fn transformed_logs(xs: &[SpinConfiguration], rows: &Option<Vec<Row>>, table: &LogTable) -> Vec<C64> {
    match rows {
        Some(rows) => rows.iter().map(|r| log_sum(r, table)).collect(),
        None => xs.iter().map(|x| table.get(x)).collect(),
    }
}

/// Importance weights `w_i |t(x_i)/src(x_i)|^2`, normalized, and the log of
/// the (unnormalized) weighted mean of the ratios.
fn reweight(weights: &[f64], transformed: &[C64], source: &[C64]) -> (Vec<f64>, f64) {
    let logs: Vec<f64> = transformed.iter().zip(source).map(|(t, s)| 2.0 * (t.re - s.re)).collect();
    let shift = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = weights.iter().zip(&logs).map(|(w, l)| w * (l - shift).exp()).collect();
    let total: f64 = raw.iter().sum();
    let wsum: f64 = weights.iter().sum();
    let log_mean = (total / wsum).ln() + shift;
    (raw.iter().map(|r| r / total).collect(), log_mean)
}

/// Per-sample quantities shared by all estimators of one pair.
pub struct PairEvaluation<'a> {
    pair: StatePair<'a>,
    /// Reweighted, normalized weights of the psi-samples.
    pub px: Vec<f64>,
    /// Reweighted, normalized weights of the phi-samples.
    pub py: Vec<f64>,
    /// Normalized pair weights for joint pairing.
    pub q: Option<Vec<f64>>,
    pub rx: Vec<C64>,
    pub ry: Vec<C64>,
    log_psi_t_x: Vec<C64>,
    log_psi_t_y: Vec<C64>,
    rows_x: Option<Vec<Row>>,
    rows_y: Option<Vec<Row>>,
    psi_table: LogTable,
    norms: NormRatios,
}

impl<'a> PairEvaluation<'a> {
    pub fn new(pair: StatePair<'a>) -> Result<Self> {
        let xs = &pair.samples_psi.configs;
        let ys = &pair.samples_phi.configs;
        if xs.is_empty() || ys.is_empty() {
            return Err(Error::Config("empty sample set".into()));
        }
        if pair.pairing == Pairing::Joint && xs.len() != ys.len() {
            return Err(Error::Config(format!(
                "joint pairing needs equal sample counts, got {} and {}",
                xs.len(),
                ys.len()
            )));
        }
        let v_rows_x = connected_rows(pair.v_op, xs);
        let v_rows_y = connected_rows(pair.v_op, ys);
        let u_rows_x = connected_rows(pair.u_op, xs);
        let u_rows_y = connected_rows(pair.u_op, ys);
        let psi_table = LogTable::build(pair.psi, wanted(xs, &v_rows_x).chain(wanted(ys, &v_rows_y)));
        let phi_table = LogTable::build(pair.phi, wanted(xs, &u_rows_x).chain(wanted(ys, &u_rows_y)));
        let log_psi_t_x = transformed_logs(xs, &v_rows_x, &psi_table);
        let log_psi_t_y = transformed_logs(ys, &v_rows_y, &psi_table);
        let log_phi_t_x = transformed_logs(xs, &u_rows_x, &phi_table);
        let log_phi_t_y = transformed_logs(ys, &u_rows_y, &phi_table);
        if let Some(i) = log_psi_t_x.iter().position(|l| !l.re.is_finite()) {
            return Err(Error::ZeroAmplitude(xs[i].index()));
        }
        if let Some(i) = log_phi_t_y.iter().position(|l| !l.re.is_finite()) {
            return Err(Error::ZeroAmplitude(ys[i].index()));
        }
        let (px, log_n_psi) = reweight(&pair.samples_psi.weights, &log_psi_t_x, &pair.samples_psi.source_log_amplitudes);
        let (py, log_n_phi) = reweight(&pair.samples_phi.weights, &log_phi_t_y, &pair.samples_phi.source_log_amplitudes);
        let shift: f64 = px
            .iter()
            .zip(log_phi_t_x.iter().zip(&log_psi_t_x))
            .map(|(p, (f, s))| p * (f.re - s.re).max(-700.0))
            .sum();
        let rx: Vec<C64> = log_phi_t_x
            .iter()
            .zip(&log_psi_t_x)
            .map(|(f, s)| (f - s - shift).exp())
            .collect();
        let ry: Vec<C64> = log_psi_t_y
            .iter()
            .zip(&log_phi_t_y)
            .map(|(s, f)| (s - f + shift).exp())
            .collect();
        let (q, joint) = match pair.pairing {
            Pairing::Joint => {
                let wx = &pair.samples_psi.weights;
                let wy = &pair.samples_phi.weights;
                let base: Vec<f64> = wx.iter().zip(wy).map(|(a, b)| a * b).collect();
                let base_total: f64 = base.iter().sum();
                // W_psi(x_i) W_phi(y_i) relative to their weighted means
                let wpx: Vec<f64> = px.iter().zip(wx).map(|(p, w)| p / w).collect();
                let wpy: Vec<f64> = py.iter().zip(wy).map(|(p, w)| p / w).collect();
                let raw: Vec<f64> = (0..base.len()).map(|i| base[i] * wpx[i] * wpy[i]).collect();
                let total: f64 = raw.iter().sum();
                if !(total > 0.0) || !total.is_finite() {
                    return Err(Error::DegenerateReweighting("pair weights vanish".into()));
                }
                // wpx carries 1/(N_psi sum w_x) relative to the true ratio, likewise wpy
                let sums = wx.iter().sum::<f64>() * wy.iter().sum::<f64>();
                let joint = total / base_total * sums * (log_n_psi + log_n_phi).exp();
                (Some(raw.iter().map(|r| r / total).collect()), joint)
            }
            Pairing::Product => (None, (log_n_psi + log_n_phi).exp()),
        };
        let norms = NormRatios {
            psi: log_n_psi.exp(),
            phi: log_n_phi.exp(),
            joint,
        };
        if !(norms.joint > 0.0) {
            return Err(Error::DegenerateReweighting(format!("normalization estimate {}", norms.joint)));
        }
        Ok(Self {
            pair,
            px,
            py,
            q,
            rx,
            ry,
            log_psi_t_x,
            log_psi_t_y,
            rows_x: v_rows_x,
            rows_y: v_rows_y,
            psi_table,
            norms,
        })
    }

    pub fn pair(&self) -> &StatePair<'a> {
        &self.pair
    }

    pub fn norms(&self) -> NormRatios {
        self.norms
    }

    /// Kish effective sample size of the psi-side weights.
    pub fn effective_sample_size(&self) -> f64 {
        let weights = self.q.as_ref().unwrap_or(&self.px);
        1.0 / weights.iter().map(|w| w * w).sum::<f64>()
    }

    fn moments_y(&self) -> (C64, f64) {
        let m1 = self.ry.iter().zip(&self.py).map(|(r, p)| r * *p).sum();
        let m2 = self.ry.iter().zip(&self.py).map(|(r, p)| r.norm_sqr() * p).sum();
        (m1, m2)
    }

    fn moments_x(&self) -> (C64, f64) {
        let m1 = self.rx.iter().zip(&self.px).map(|(r, p)| r * *p).sum();
        let m2 = self.rx.iter().zip(&self.px).map(|(r, p)| r.norm_sqr() * p).sum();
        (m1, m2)
    }

    pub fn estimate(&self, kind: FidelityEstimator, c: f64) -> EstimatorResult {
        match kind {
            FidelityEstimator::SingleMc => self.single_mc(None),
            FidelityEstimator::SingleMcCv => self.single_mc(Some(c)),
            FidelityEstimator::DoubleMc => self.double_mc(None),
            FidelityEstimator::DoubleMcCv => self.double_mc(Some(c)),
        }
    }

    /// Mean of `Re A(z)`, or of `Re A + c(|A|^2 - 1)` with a control variate.
    pub fn single_mc(&self, c: Option<f64>) -> EstimatorResult {
        let cv = c.unwrap_or(0.0);
        match &self.q {
            Some(q) => {
                let locals: Vec<C64> = self.rx.iter().zip(&self.ry).map(|(a, b)| a * b).collect();
                let f: Vec<f64> = locals.iter().map(|a| a.re + cv * (a.norm_sqr() - 1.0)).collect();
                let value: f64 = f.iter().zip(q).map(|(v, w)| v * w).sum();
                let variance = f.iter().zip(q).map(|(v, w)| w * (v - value).powi(2)).sum();
                EstimatorResult {
                    value,
                    variance,
                    locals,
                    norm_ratio_estimates: self.norms,
                }
            }
            None => {
                let (m1x, m2x) = self.moments_x();
                let (m1y, m2y) = self.moments_y();
                let sq_x: C64 = self.rx.iter().zip(&self.px).map(|(r, p)| r * r * *p).sum();
                let sq_y: C64 = self.ry.iter().zip(&self.py).map(|(r, p)| r * r * *p).sum();
                let cube_x: C64 = self.rx.iter().zip(&self.px).map(|(r, p)| r * r.norm_sqr() * *p).sum();
                let cube_y: C64 = self.ry.iter().zip(&self.py).map(|(r, p)| r * r.norm_sqr() * *p).sum();
                let quart_x: f64 = self.rx.iter().zip(&self.px).map(|(r, p)| r.norm_sqr().powi(2) * p).sum();
                let quart_y: f64 = self.ry.iter().zip(&self.py).map(|(r, p)| r.norm_sqr().powi(2) * p).sum();
                let mean_re = (m1x * m1y).re;
                let mean_abs2 = m2x * m2y;
                let value = mean_re + cv * (mean_abs2 - 1.0);
                let e_re2 = 0.5 * ((sq_x * sq_y).re + mean_abs2);
                let e_re_abs2 = (cube_x * cube_y).re;
                let e_abs4 = quart_x * quart_y;
                let second = e_re2 + 2.0 * cv * (e_re_abs2 - mean_re) + cv * cv * (e_abs4 - 2.0 * mean_abs2 + 1.0);
                let variance = (second - value * value).max(0.0);
                let locals = self.rx.iter().map(|r| r * m1y).collect();
                EstimatorResult {
                    value,
                    variance,
                    locals,
                    norm_ratio_estimates: self.norms,
                }
            }
        }
    }

    /// Mean over psi-samples of `H_loc(x) = R(x) E_y[R'(y)]`, optionally with
    /// the control variate `|R(x)|^2 E_y[|R'(y)|^2] - 1`.
    pub fn double_mc(&self, c: Option<f64>) -> EstimatorResult {
        let cv = c.unwrap_or(0.0);
        let (m1y, m2y) = self.moments_y();
        let locals: Vec<C64> = self.rx.iter().map(|r| r * m1y).collect();
        let h: Vec<f64> = locals
            .iter()
            .zip(&self.rx)
            .map(|(l, r)| l.re + cv * (r.norm_sqr() * m2y - 1.0))
            .collect();
        let value: f64 = h.iter().zip(&self.px).map(|(v, p)| v * p).sum();
        let variance = h.iter().zip(&self.px).map(|(v, p)| p * (v - value).powi(2)).sum();
        EstimatorResult {
            value,
            variance,
            locals,
            norm_ratio_estimates: self.norms,
        }
    }

    fn jacobian_rows(&self, xs: &[SpinConfiguration], rows: &Option<Vec<Row>>, log_t: &[C64]) -> DMatrix<C64> {
        let state = self.pair.psi;
        let np = state.n_params();
        let computed: Vec<Vec<C64>> = match rows {
            None => xs.par_iter().map(|x| state.log_gradient(x)).collect(),
            Some(rows) => {
                let grads: Vec<Vec<C64>> = self.psi_table.configs.par_iter().map(|x| state.log_gradient(x)).collect();
                rows.par_iter()
                    .zip(log_t.par_iter())
                    .map(|(row, lt)| {
                        let mut acc = vec![ZERO; np];
                        for (y, v) in row {
                            let k = self.psi_table.index[&y.index()];
                            let w = v * (self.psi_table.values[k] - lt).exp();
                            for (a, g) in acc.iter_mut().zip(&grads[k]) {
                                *a += w * g;
                            }
                        }
                        acc
                    })
                    .collect()
            }
        };
        let mut out = DMatrix::<C64>::zeros(xs.len(), np);
        for (i, r) in computed.iter().enumerate() {
            for (c, v) in r.iter().enumerate() {
                out[(i, c)] = *v;
            }
        }
        out
    }

    /// `d log psi~(x_i) / d theta` on the psi-samples, centered with `px`.
    pub fn psi_jacobian(&self) -> Result<JacobianBatch> {
        let raw = self.jacobian_rows(&self.pair.samples_psi.configs, &self.rows_x, &self.log_psi_t_x);
        JacobianBatch::from_raw(raw, self.px.clone())
    }

    /// `d log psi~(y_j) / d theta` on the phi-samples, centered with `py`.
    pub fn phi_jacobian(&self) -> Result<JacobianBatch> {
        let raw = self.jacobian_rows(&self.pair.samples_phi.configs, &self.rows_y, &self.log_psi_t_y);
        JacobianBatch::from_raw(raw, self.py.clone())
    }

    fn check_batch(&self, jac: &JacobianBatch, n: usize) -> Result<()> {
        if jac.raw.nrows() != n || jac.raw.ncols() != self.pair.psi.n_params() {
            return Err(Error::Config(format!(
                "Jacobian of shape {}x{} does not match {} samples and {} parameters",
                jac.raw.nrows(),
                jac.raw.ncols(),
                n,
                self.pair.psi.n_params()
            )));
        }
        Ok(())
    }

    /// `grad = sum_i w_i 2 Re{conj(dJ_i) l_i}` and its `X epsilon` factorization.
    fn factorized_gradient(&self, jac: &JacobianBatch, weights: &[f64], locals: &[C64], estimator: GradientEstimator) -> GradientResult {
        let n = weights.len();
        let np = jac.centered.ncols();
        let mut x = DMatrix::<f64>::zeros(np, 2 * n);
        let mut eps = DVector::<f64>::zeros(2 * n);
        let mut grad = DVector::<f64>::zeros(np);
        for i in 0..n {
            let s = weights[i].sqrt();
            eps[i] = 2.0 * s * locals[i].re;
            eps[n + i] = 2.0 * s * locals[i].im;
            for k in 0..np {
                let d = jac.centered[(i, k)];
                x[(k, i)] = s * d.re;
                x[(k, n + i)] = s * d.im;
                grad[k] += 2.0 * weights[i] * (d.conj() * locals[i]).re;
            }
        }
        GradientResult {
            grad,
            factorized: Some(Factorization { x, epsilon: eps }),
            estimator,
        }
    }

    /// `E_x[2 Re{conj(dJ(x)) H_loc(x)}]` over the reweighted psi-samples.
    pub fn grad_hermitian(&self, jac: &JacobianBatch) -> Result<GradientResult> {
        self.check_batch(jac, self.px.len())?;
        let (m1y, _) = self.moments_y();
        let locals: Vec<C64> = self.rx.iter().map(|r| r * m1y).collect();
        Ok(self.factorized_gradient(jac, &self.px, &locals, GradientEstimator::Hermitian))
    }

    /// `E_z[2 Re{conj(dJ(x)) A(z)}]`; with product pairing the sum over `y`
    /// is done first, which gives the Hermitian estimator.
    pub fn grad_mixed(&self, jac: &JacobianBatch) -> Result<GradientResult> {
        self.check_batch(jac, self.px.len())?;
        match &self.q {
            Some(q) => {
                let locals: Vec<C64> = self.rx.iter().zip(&self.ry).map(|(a, b)| a * b).collect();
                Ok(self.factorized_gradient(jac, q, &locals, GradientEstimator::Mixed))
            }
            None => {
                let mut g = self.grad_hermitian(jac)?;
                g.estimator = GradientEstimator::Mixed;
                Ok(g)
            }
        }
    }

    /// Gradient of the single-sample control-variate estimator, including the
    /// dependence of `A(z)` on the parameters through `y`. Has no `X epsilon`
    /// factorization.
    pub fn grad_nonhermitian(&self, jac_psi: &JacobianBatch, jac_phi: &JacobianBatch, c: f64) -> Result<GradientResult> {
        self.check_batch(jac_psi, self.px.len())?;
        self.check_batch(jac_phi, self.py.len())?;
        let np = self.pair.psi.n_params();
        let mut acc = DVector::<C64>::zeros(np);
        match &self.q {
            Some(q) => {
                let a: Vec<C64> = self.rx.iter().zip(&self.ry).map(|(x, y)| x * y).collect();
                let f: Vec<f64> = a.iter().map(|v| v.re + c * (v.norm_sqr() - 1.0)).collect();
                let fbar: f64 = f.iter().zip(q).map(|(v, w)| v * w).sum();
                for i in 0..a.len() {
                    let cx = C64::new(2.0 * (f[i] - fbar), 0.0);
                    let cy = a[i] + 2.0 * c * a[i].norm_sqr();
                    for k in 0..np {
                        let jx = jac_psi.raw[(i, k)];
                        let jy = jac_phi.raw[(i, k)];
                        acc[k] += q[i] * (cx * jx + cy * (jy - jx));
                    }
                }
            }
            None => {
                let (m1y, m2y) = self.moments_y();
                let (m1x, m2x) = self.moments_x();
                let g: Vec<f64> = self.rx.iter().map(|r| (r * m1y).re + c * (r.norm_sqr() * m2y - 1.0)).collect();
                let fbar: f64 = g.iter().zip(&self.px).map(|(v, p)| v * p).sum();
                for i in 0..self.rx.len() {
                    let r = self.rx[i];
                    let coeff = C64::new(2.0 * (g[i] - fbar), 0.0) - (r * m1y + 2.0 * c * r.norm_sqr() * m2y);
                    for k in 0..np {
                        acc[k] += self.px[i] * coeff * jac_psi.raw[(i, k)];
                    }
                }
                for j in 0..self.ry.len() {
                    let r = self.ry[j];
                    let coeff = m1x * r + 2.0 * c * m2x * r.norm_sqr();
                    for k in 0..np {
                        acc[k] += self.py[j] * coeff * jac_phi.raw[(j, k)];
                    }
                }
            }
        }
        Ok(GradientResult {
            grad: acc.map(|v| v.re),
            factorized: None,
            estimator: GradientEstimator::NonHermitian,
        })
    }

    pub fn gradient(&self, kind: GradientEstimator, c: f64) -> Result<GradientResult> {
        let jac = self.psi_jacobian()?;
        match kind {
            GradientEstimator::Hermitian => self.grad_hermitian(&jac),
            GradientEstimator::Mixed => self.grad_mixed(&jac),
            GradientEstimator::NonHermitian => self.grad_nonhermitian(&jac, &self.phi_jacobian()?, c),
        }
    }
}

pub fn fidelity_single_mc(pair: StatePair<'_>, c: Option<f64>) -> Result<EstimatorResult> {
    Ok(PairEvaluation::new(pair)?.single_mc(c))
}

pub fn fidelity_double_mc(pair: StatePair<'_>, c: Option<f64>) -> Result<EstimatorResult> {
    Ok(PairEvaluation::new(pair)?.double_mc(c))
}

/// Any fidelity estimator on transformed states; the reweighting is active
/// whenever `V` or `U` is present or `psi` differs from the sampled state.
pub fn fidelity_reweighted(pair: StatePair<'_>, kind: FidelityEstimator, c: f64) -> Result<EstimatorResult> {
    Ok(PairEvaluation::new(pair)?.estimate(kind, c))
}

pub fn grad_hermitian(pair: StatePair<'_>, jac: &JacobianBatch) -> Result<GradientResult> {
    PairEvaluation::new(pair)?.grad_hermitian(jac)
}

pub fn grad_mixed(pair: StatePair<'_>, jac: &JacobianBatch) -> Result<GradientResult> {
    PairEvaluation::new(pair)?.grad_mixed(jac)
}

pub fn grad_nonhermitian(pair: StatePair<'_>, jac_psi: &JacobianBatch, jac_phi: &JacobianBatch, c: f64) -> Result<GradientResult> {
    PairEvaluation::new(pair)?.grad_nonhermitian(jac_psi, jac_phi, c)
}
