//! Dense state-vector oracle: exact evolution, exact plan application and
//! exact fidelity.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64 as C64;

use crate::ansatz::VariationalState;
use crate::error::{Error, Result};
use crate::lattice::{SpinConfiguration, StateVector};
use crate::linalg::{gmres, lanczos_expm, norm};
use crate::operators::{CsrMatrix, OperatorSplit, SparseOperator};
use crate::schemes::{FactorDescriptor, SchemePlan};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const MINUS_I: C64 = C64 { re: 0.0, im: -1.0 };

/// Largest system evolved through a dense eigendecomposition.
pub const DEFAULT_DENSE_CUTOFF: usize = 10;

/// Largest system for which a failed Padé solve falls back to dense LU.
pub const LU_FALLBACK_CUTOFF: usize = 12;

const KRYLOV_DIM: usize = 30;
const KRYLOV_TOL: f64 = 1e-12;

enum Propagator {
    DenseReal {
        vectors: DMatrix<f64>,
        values: DVector<f64>,
    },
    DenseComplex {
        vectors: DMatrix<C64>,
        values: DVector<f64>,
    },
    Krylov {
        csr: CsrMatrix,
        spectral_bound: f64,
    },
}

/// Cached `exp(-iHt)` for a fixed Hermitian `H`.
pub struct ExactEvolver {
    n_sites: usize,
    propagator: Propagator,
}

impl ExactEvolver {
    pub fn new(hamiltonian: &SparseOperator, limit: usize, dense_cutoff: usize) -> Result<Self> {
        let n_sites = hamiltonian.n_sites();
        let csr = hamiltonian.to_csr(limit)?;
        let propagator = if n_sites <= dense_cutoff {
            let dim = csr.dim();
            if csr.is_real() {
                let mut m = DMatrix::<f64>::zeros(dim, dim);
                for (r, c, v) in csr.entries() {
                    m[(r, c)] += v.re;
                }
                let eig = SymmetricEigen::new(m);
                Propagator::DenseReal {
                    vectors: eig.eigenvectors,
                    values: eig.eigenvalues,
                }
            } else {
                let mut m = DMatrix::<C64>::zeros(dim, dim);
                for (r, c, v) in csr.entries() {
                    m[(r, c)] += v;
                }
                let eig = SymmetricEigen::new(m);
                Propagator::DenseComplex {
                    vectors: eig.eigenvectors,
                    values: eig.eigenvalues,
                }
            }
        } else {
            // Gershgorin bound on the spectral radius sets the first trial step.
            let mut rows = vec![0.0f64; csr.dim()];
            for (r, _, v) in csr.entries() {
                rows[r] += v.norm();
            }
            let spectral_bound = rows.into_iter().fold(0.0, f64::max);
            Propagator::Krylov {
                csr,
                spectral_bound,
            }
        };
        Ok(Self {
            n_sites,
            propagator,
        })
    }

    pub fn evolve(&self, state: &StateVector, t: f64) -> Result<StateVector> {
        if state.n_sites() != self.n_sites {
            return Err(Error::InvalidOperator(format!(
                "state on {} sites evolved with a Hamiltonian on {}",
                state.n_sites(),
                self.n_sites
            )));
        }
        if t == 0.0 {
            return Ok(state.clone());
        }
        let amps = match &self.propagator {
            Propagator::DenseReal { vectors, values } => {
                let psi = DVector::from_column_slice(state.amplitudes());
                let re = vectors.transpose() * psi.map(|z| z.re);
                let im = vectors.transpose() * psi.map(|z| z.im);
                let phased_re = DVector::from_iterator(
                    values.len(),
                    values.iter().enumerate().map(|(k, e)| {
                        let p = C64::from_polar(1.0, -e * t) * C64::new(re[k], im[k]);
                        p.re
                    }),
                );
                let phased_im = DVector::from_iterator(
                    values.len(),
                    values.iter().enumerate().map(|(k, e)| {
                        let p = C64::from_polar(1.0, -e * t) * C64::new(re[k], im[k]);
                        p.im
                    }),
                );
                let out_re = vectors * phased_re;
                let out_im = vectors * phased_im;
                out_re
                    .iter()
                    .zip(out_im.iter())
                    .map(|(a, b)| C64::new(*a, *b))
                    .collect()
            }
            Propagator::DenseComplex { vectors, values } => {
                let psi = DVector::from_column_slice(state.amplitudes());
                let coeffs = vectors.adjoint() * psi;
                let phased = DVector::from_iterator(
                    values.len(),
                    coeffs
                        .iter()
                        .zip(values.iter())
                        .map(|(c, e)| c * C64::from_polar(1.0, -e * t)),
                );
                (vectors * phased).iter().copied().collect()
            }
            Propagator::Krylov {
                csr,
                spectral_bound,
            } => krylov_evolve(csr, *spectral_bound, state.amplitudes(), t),
        };
        StateVector::new(self.n_sites, amps)
    }
}

fn krylov_evolve(csr: &CsrMatrix, bound: f64, v: &[C64], t: f64) -> Vec<C64> {
    let apply = |x: &[C64], y: &mut [C64]| csr.matvec_into(x, y);
    let mut state = v.to_vec();
    let mut elapsed = 0.0;
    let mut tau = (t.abs()).min(10.0 / bound.max(1e-12)) * t.signum();
    while (t - elapsed).abs() > 1e-15 * t.abs() {
        if (elapsed + tau - t) * t.signum() > 0.0 {
            tau = t - elapsed;
        }
        let full = lanczos_expm(apply, &state, tau, KRYLOV_DIM);
        let half = lanczos_expm(apply, &state, tau / 2.0, KRYLOV_DIM);
        let twice = lanczos_expm(apply, &half, tau / 2.0, KRYLOV_DIM);
        let diff = full
            .iter()
            .zip(&twice)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let scale = norm(&state).max(1e-300);
        if diff <= KRYLOV_TOL * scale * (tau / t).abs() || tau.abs() < 1e-14 {
            state = twice;
            elapsed += tau;
            if diff < 0.1 * KRYLOV_TOL * scale * (tau / t).abs() {
                tau *= 1.5;
            }
        } else {
            tau *= 0.5;
        }
    }
    state
}

/// `exp(-iHt)|psi>`.
pub fn exact_evolve(state: &StateVector, hamiltonian: &SparseOperator, t: f64) -> Result<StateVector> {
    ExactEvolver::new(hamiltonian, crate::lattice::DEFAULT_EXACT_LIMIT, DEFAULT_DENSE_CUTOFF)?.evolve(state, t)
}

/// One time step of a scheme plan applied exactly to dense vectors.
pub struct PlanPropagator {
    factors: Vec<FactorDescriptor>,
    operator: CsrMatrix,
    diagonal: Vec<C64>,
    dt: f64,
}

impl PlanPropagator {
    pub fn new(plan: &SchemePlan, split: &OperatorSplit, dt: f64, limit: usize) -> Result<Self> {
        let n = split.x_part.n_sites();
        if n > limit {
            return Err(Error::ExactBackendSize { n_sites: n, limit });
        }
        let diagonal: Vec<C64> = (0..1u64 << n)
            .map(|i| split.z_part.value(&SpinConfiguration::from_index(i, n)))
            .collect();
        let operator = if plan.is_split() {
            split.x_part.to_csr(limit)?
        } else {
            full_operator(split)?.to_csr(limit)?
        };
        Ok(Self {
            factors: plan.factors.clone(),
            operator,
            diagonal,
            dt,
        })
    }

    pub fn apply(&self, state: &StateVector) -> Result<StateVector> {
        let mut amps = state.amplitudes().to_vec();
        let dim = amps.len();
        if dim != self.operator.dim() {
            return Err(Error::InvalidOperator("state dimension does not match the plan operator".into()));
        }
        let mut work = vec![ZERO; dim];
        for (idx, factor) in self.factors.iter().enumerate() {
            match *factor {
                FactorDescriptor::DiagonalExp(alpha) => {
                    let c = alpha * MINUS_I * self.dt;
                    for (a, d) in amps.iter_mut().zip(&self.diagonal) {
                        *a *= (c * d).exp();
                    }
                }
                FactorDescriptor::OffDiagLinear(a) => {
                    self.linear(&amps, a, &mut work);
                    std::mem::swap(&mut amps, &mut work);
                }
                FactorDescriptor::OffDiagPade { a, b } => {
                    self.linear(&amps, a, &mut work);
                    amps = self.solve_shifted(&work, b, idx)?;
                }
            }
        }
        StateVector::new(state.n_sites(), amps)
    }

    /// `out = (1 + c (-i) O dt) input`.
    fn linear(&self, input: &[C64], c: C64, out: &mut [C64]) {
        self.operator.matvec_into(input, out);
        let s = c * MINUS_I * self.dt;
        for (o, x) in out.iter_mut().zip(input) {
            *o = x + s * *o;
        }
    }

    fn solve_shifted(&self, rhs: &[C64], b: C64, factor: usize) -> Result<Vec<C64>> {
        let s = b * MINUS_I * self.dt;
        let apply = |x: &[C64], y: &mut [C64]| {
            self.operator.matvec_into(x, y);
            for (yi, xi) in y.iter_mut().zip(x) {
                *yi = xi + s * *yi;
            }
        };
        let dim = rhs.len();
        let out = gmres(apply, rhs, rhs.to_vec(), 1e-13, 10 * dim, 60);
        if out.relative_residual < 1e-12 {
            return Ok(out.solution);
        }
        let n_sites = self.operator.n_sites();
        if n_sites <= LU_FALLBACK_CUTOFF {
            let mut m = DMatrix::<C64>::identity(dim, dim);
            for (r, c, v) in self.operator.entries() {
                m[(r, c)] += s * v;
            }
            if let Some(sol) = m.lu().solve(&DVector::from_column_slice(rhs)) {
                if sol.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
                    return Ok(sol.iter().copied().collect());
                }
            }
        }
        Err(Error::SingularPade {
            factor,
            detail: format!("residual stagnated at {:.3e}", out.relative_residual),
        })
    }
}

/// The operator `x_part + diag(z_part)`.
pub fn full_operator(split: &OperatorSplit) -> Result<SparseOperator> {
    split.x_part.add(&split.z_part.to_sparse()?)
}

/// Applies one step of `plan` exactly.
pub fn apply_plan_exact(state: &StateVector, plan: &SchemePlan, split: &OperatorSplit, dt: f64) -> Result<StateVector> {
    PlanPropagator::new(plan, split, dt, crate::lattice::DEFAULT_EXACT_LIMIT)?.apply(state)
}

/// `|<psi|phi>|^2 / (<psi|psi><phi|phi>)`.
pub fn fidelity_exact(psi: &StateVector, phi: &StateVector) -> Result<f64> {
    let np = psi.norm_sqr();
    let nf = phi.norm_sqr();
    if !(np > 0.0 && nf > 0.0 && np.is_finite() && nf.is_finite()) {
        return Err(Error::ZeroNorm);
    }
    Ok(psi.inner(phi).norm_sqr() / (np * nf))
}

/// Dense amplitudes of a variational state, rescaled by the largest modulus.
pub fn evaluate_ansatz_dense(vstate: &VariationalState, limit: usize) -> Result<StateVector> {
    let n = vstate.n_sites();
    if n > limit {
        return Err(Error::ExactBackendSize { n_sites: n, limit });
    }
    let logs: Vec<C64> = (0..1u64 << n)
        .map(|i| vstate.log_amplitude(&SpinConfiguration::from_index(i, n)))
        .collect();
    let shift = logs.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return Err(Error::Overflow(
            "log-amplitudes are not finite; rescale the parameters in the log domain".into(),
        ));
    }
    let amps = logs.iter().map(|l| (l - shift).exp()).collect();
    StateVector::new(n, amps)
}
