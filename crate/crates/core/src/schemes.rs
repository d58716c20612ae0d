//! Product-expansion integration plans and their coefficients.
//!
//! A plan approximates `exp(L dt)` with `L = -iH` by a product of factors.
//! Factors are listed in application order: the first factor acts on the
//! state first. Unsplit plans (LPE, PPE) apply their linear factors with the
//! full generator; split plans (S-LPE, S-PPE) apply them with the off-diagonal
//! part only and treat the diagonal part through exact exponentials.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{ExactEvolver, PlanPropagator, DEFAULT_DENSE_CUTOFF};
use crate::lattice::{StateVector, DEFAULT_EXACT_LIMIT};
use crate::operators::{split_diag_offdiag, SparseOperator};


#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemeKind {
    Lpe,
    Ppe,
    Slpe,
    Sppe,
}

impl SchemeKind {
    pub fn is_split(self) -> bool {
        matches!(self, SchemeKind::Slpe | SchemeKind::Sppe)
    }

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Lpe => "LPE",
            SchemeKind::Ppe => "PPE",
            SchemeKind::Slpe => "S-LPE",
            SchemeKind::Sppe => "S-PPE",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A scheme kind together with its order, written like `S-PPE-3`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SchemeId {
    pub kind: SchemeKind,
    pub order: usize,
}

impl SchemeId {
    pub const fn new(kind: SchemeKind, order: usize) -> Self {
        Self { kind, order }
    }

    pub fn is_supported(&self) -> bool {
        match self.kind {
            SchemeKind::Lpe => (1..=4).contains(&self.order),
            SchemeKind::Ppe => matches!(self.order, 2 | 4 | 6),
            SchemeKind::Slpe => (1..=3).contains(&self.order),
            SchemeKind::Sppe => (2..=4).contains(&self.order),
        }
    }

    fn unsupported(&self) -> Error {
        unsupported_scheme(self.to_string())
    }

    /// Every scheme shipped with a plan.
    pub fn all_supported() -> Vec<SchemeId> {
        use SchemeKind::*;
        let mut out = Vec::new();
        out.extend((1..=4).map(|o| SchemeId::new(Lpe, o)));
        out.extend([2, 4, 6].map(|o| SchemeId::new(Ppe, o)));
        out.extend((1..=3).map(|o| SchemeId::new(Slpe, o)));
        out.extend((2..=4).map(|o| SchemeId::new(Sppe, o)));
        out
    }
}

fn unsupported_scheme(name: String) -> Error {
    let supported: Vec<String> = SchemeId::all_supported().iter().map(|id| id.to_string()).collect();
    Error::UnsupportedScheme {
        name,
        supported: supported.join(", "),
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.kind, self.order)
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        let bad = || unsupported_scheme(s.to_string());
        let (name, order) = upper.rsplit_once('-').ok_or_else(bad)?;
        let order: usize = order.parse().map_err(|_| bad())?;
        let kind = match name {
            "LPE" => SchemeKind::Lpe,
            "PPE" => SchemeKind::Ppe,
            "S-LPE" | "SLPE" => SchemeKind::Slpe,
            "S-PPE" | "SPPE" => SchemeKind::Sppe,
            _ => return Err(bad()),
        };
        let id = SchemeId::new(kind, order);
        if !id.is_supported() {
            return Err(id.unsupported());
        }
        Ok(id)
    }
}

impl Serialize for SchemeId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SchemeId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FactorDescriptor {
    /// Multiplies the amplitude at `x` by `exp(alpha * (-i) * d(x) * dt)`.
    DiagonalExp(C64),
    /// `1 + a (-i) O dt`.
    OffDiagLinear(C64),
    /// `(1 + b (-i) O dt)^-1 (1 + a (-i) O dt)`.
    OffDiagPade { a: C64, b: C64 },
}

impl FactorDescriptor {
    /// Padé factor; `b = 0` collapses to a linear factor.
    pub fn pade(a: C64, b: C64) -> Self {
        if b == C64::new(0.0, 0.0) {
            FactorDescriptor::OffDiagLinear(a)
        } else {
            FactorDescriptor::OffDiagPade { a, b }
        }
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self, FactorDescriptor::DiagonalExp(_))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchemePlan {
    pub kind: SchemeKind,
    pub order: usize,
    pub factors: Vec<FactorDescriptor>,
}

impl SchemePlan {
    pub fn id(&self) -> SchemeId {
        SchemeId::new(self.kind, self.order)
    }

    pub fn is_split(&self) -> bool {
        self.kind.is_split()
    }

    /// Number of compressions one time step requires.
    pub fn substep_count(&self) -> usize {
        self.factors.iter().filter(|f| !f.is_diagonal()).count()
    }
}

/// Elementary symmetric polynomials `e_0..=e_kmax`.
pub fn elementary_symmetric(values: &[C64], kmax: usize) -> Vec<C64> {
    let mut e = vec![C64::new(0.0, 0.0); kmax + 1];
    e[0] = C64::new(1.0, 0.0);
    for &v in values {
        for k in (1..=kmax).rev() {
            let prev = e[k - 1];
            e[k] += v * prev;
        }
    }
    e
}

/// Complete homogeneous symmetric polynomials `h_0..=h_kmax`.
pub fn complete_homogeneous(values: &[C64], kmax: usize) -> Vec<C64> {
    let mut h = vec![C64::new(0.0, 0.0); kmax + 1];
    h[0] = C64::new(1.0, 0.0);
    for &v in values {
        for k in 1..=kmax {
            let prev = h[k - 1];
            h[k] += v * prev;
        }
    }
    h
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// `max_k |e_k(a) - 1/k!|` for `1 <= k <= kmax`.
pub fn lpe_residual(a: &[C64], kmax: usize) -> f64 {
    let e = elementary_symmetric(a, kmax);
    (1..=kmax)
        .map(|k| (e[k] - 1.0 / factorial(k)).norm())
        .fold(0.0, f64::max)
}

/// Left-hand sides `sum_j (-1)^(k-j) e_j(a) h_(k-j)(b)` for `k = 0..=kmax`.
pub fn ppe_condition_values(a: &[C64], b: &[C64], kmax: usize) -> Vec<C64> {
    let e = elementary_symmetric(a, kmax);
    let h = complete_homogeneous(b, kmax);
    (0..=kmax)
        .map(|k| {
            (0..=k)
                .map(|j| {
                    let term = e[j] * h[k - j];
                    if (k - j) % 2 == 0 {
                        term
                    } else {
                        -term
                    }
                })
                .sum()
        })
        .collect()
}

/// `max_k |c_k(a, b) - 1/k!|` for `1 <= k <= kmax`.
pub fn ppe_residual(a: &[C64], b: &[C64], kmax: usize) -> f64 {
    let c = ppe_condition_values(a, b, kmax);
    (1..=kmax)
        .map(|k| (c[k] - 1.0 / factorial(k)).norm())
        .fold(0.0, f64::max)
}

/// Sorts by real part, then imaginary part, treating near-equal real parts as ties.
pub fn sort_canonical(values: &mut [C64]) {
    values.sort_by(|x, y| {
        if (x.re - y.re).abs() > 1e-9 {
            x.re.total_cmp(&y.re)
        } else {
            x.im.total_cmp(&y.im)
        }
    });
}

fn eval_poly(coeffs: &[C64], z: C64) -> (C64, C64) {
    let mut p = C64::new(0.0, 0.0);
    let mut dp = C64::new(0.0, 0.0);
    for &c in coeffs.iter().rev() {
        dp = dp * z + p;
        p = p * z + c;
    }
    (p, dp)
}

/// Roots of `sum_k coeffs[k] z^k` by Durand-Kerner iteration and Newton polish.
pub fn polynomial_roots(coeffs: &[C64]) -> Result<Vec<C64>> {
    let degree = coeffs
        .iter()
        .rposition(|c| c.norm() > 0.0)
        .ok_or_else(|| Error::SolverFailure("zero polynomial".into()))?;
    let lead = coeffs[degree];
    let monic: Vec<C64> = coeffs[..=degree].iter().map(|c| c / lead).collect();
    let seed = C64::new(0.4, 0.9);
    let mut roots: Vec<C64> = (0..degree).map(|i| seed.powu(i as u32)).collect();
    let mut converged = false;
    for _ in 0..2000 {
        let mut change: f64 = 0.0;
        for i in 0..degree {
            let (p, _) = eval_poly(&monic, roots[i]);
            let denom: C64 = (0..degree)
                .filter(|&j| j != i)
                .map(|j| roots[i] - roots[j])
                .product();
            let step = p / denom;
            roots[i] -= step;
            change = change.max(step.norm());
        }
        if change < 1e-15 {
            converged = true;
            break;
        }
    }
    for r in roots.iter_mut() {
        for _ in 0..3 {
            let (p, dp) = eval_poly(&monic, *r);
            if dp.norm() > 0.0 {
                *r -= p / dp;
            }
        }
    }
    let worst = roots
        .iter()
        .map(|r| eval_poly(&monic, *r).0.norm())
        .fold(0.0, f64::max);
    if !converged && worst > 1e-12 {
        return Err(Error::SolverFailure(format!(
            "polynomial root iteration did not converge (residual {worst:.3e})"
        )));
    }
    Ok(roots)
}

/// Snaps nearly-real values to the real axis and averages conjugate partners.
fn symmetrize_conjugates(values: &mut [C64]) {
    let n = values.len();
    let mut paired = vec![false; n];
    for i in 0..n {
        if paired[i] {
            continue;
        }
        if values[i].im.abs() < 1e-12 {
            values[i].im = 0.0;
            paired[i] = true;
            continue;
        }
        let partner = (i + 1..n)
            .filter(|&j| !paired[j])
            .min_by(|&j, &k| {
                let dj = (values[j] - values[i].conj()).norm();
                let dk = (values[k] - values[i].conj()).norm();
                dj.total_cmp(&dk)
            });
        if let Some(j) = partner {
            if (values[j] - values[i].conj()).norm() < 1e-8 {
                let avg = (values[i] + values[j].conj()) * 0.5;
                values[i] = avg;
                values[j] = avg.conj();
                paired[j] = true;
            }
        }
        paired[i] = true;
    }
}

/// LPE coefficients `a_i = -1/r_i` with `r_i` the roots of `sum_{k<=s} z^k/k!`.
pub fn solve_lpe_coefficients(order: usize) -> Result<Vec<C64>> {
    if !(1..=4).contains(&order) {
        return Err(SchemeId::new(SchemeKind::Lpe, order).unsupported());
    }
    let coeffs: Vec<C64> = (0..=order)
        .map(|k| C64::new(1.0 / factorial(k), 0.0))
        .collect();
    let roots = polynomial_roots(&coeffs)?;
    let mut a: Vec<C64> = roots.iter().map(|r| -r.inv()).collect();
    symmetrize_conjugates(&mut a);
    sort_canonical(&mut a);
    let res = lpe_residual(&a, order);
    if res > 1e-10 {
        return Err(Error::SolverFailure(format!(
            "LPE-{order} coefficients violate the order conditions (residual {res:.3e})"
        )));
    }
    Ok(a)
}

/// PPE coefficients for `s` Padé factors (order `2s`), using the ansatz `b = -a`.
pub fn solve_ppe_coefficients(substeps: usize) -> Result<(Vec<C64>, Vec<C64>)> {
    if !(1..=3).contains(&substeps) {
        return Err(SchemeId::new(SchemeKind::Ppe, 2 * substeps).unsupported());
    }
    let s = substeps;
    // With b = -a the even conditions follow from the odd ones, leaving s
    // equations for s unknowns.
    let residual = |a: &[C64]| -> DVector<C64> {
        let b: Vec<C64> = a.iter().map(|v| -v).collect();
        let c = ppe_condition_values(a, &b, 2 * s);
        DVector::from_iterator(
            s,
            (0..s).map(|j| {
                let k = 2 * j + 1;
                c[k] - 1.0 / factorial(k)
            }),
        )
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x00C0_FFEE);
    for _restart in 0..100 {
        let mut a: Vec<C64> = (0..s)
            .map(|_| C64::new(rng.random_range(0.0..0.6), rng.random_range(-0.6..0.6)))
            .collect();
        let mut r = residual(&a);
        for _iter in 0..200 {
            let rn = r.norm();
            if rn < 1e-15 {
                break;
            }
            let mut jac = DMatrix::<C64>::zeros(s, s);
            for m in 0..s {
                let step = 1e-7 * (1.0 + a[m].norm());
                let mut plus = a.clone();
                let mut minus = a.clone();
                plus[m] += step;
                minus[m] -= step;
                let col = (residual(&plus) - residual(&minus)) / C64::new(2.0 * step, 0.0);
                jac.set_column(m, &col);
            }
            let Some(delta) = jac.lu().solve(&(-&r)) else {
                break;
            };
            let mut scale = 1.0;
            let mut improved = false;
            for _ in 0..30 {
                let trial: Vec<C64> = a.iter().zip(delta.iter()).map(|(x, d)| x + d * scale).collect();
                let tr = residual(&trial);
                if tr.norm() < rn {
                    a = trial;
                    r = tr;
                    improved = true;
                    break;
                }
                scale *= 0.5;
            }
            if !improved {
                break;
            }
        }
        if !a.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            continue;
        }
        symmetrize_conjugates(&mut a);
        sort_canonical(&mut a);
        let b: Vec<C64> = a.iter().map(|v| -v).collect();
        if ppe_residual(&a, &b, 2 * s) < 1e-12 {
            return Ok((a, b));
        }
    }
    Err(Error::SolverFailure(format!(
        "PPE-{} Newton iteration failed after 100 restarts",
        2 * s
    )))
}

/// Tabulated split-scheme coefficients `(a, b, alpha)`.
///
/// S-LPE tables carry `a = alpha` and no `b`. Irrational entries are written
/// in closed form; they round to the published four-decimal values.
pub fn split_coefficients(kind: SchemeKind, order: usize) -> Result<(Vec<C64>, Vec<C64>, Vec<C64>)> {
    let c = C64::new;
    let r3 = 3f64.sqrt();
    let r15 = 15f64.sqrt();
    match (kind, order) {
        (SchemeKind::Slpe, 1) => {
            let a = vec![c(1.0, 0.0)];
            Ok((a.clone(), vec![], a))
        }
        (SchemeKind::Slpe, 2) => {
            let a = vec![c(0.5, -0.5), c(0.5, 0.5)];
            Ok((a.clone(), vec![], a))
        }
        (SchemeKind::Slpe, 3) => {
            let lo = (3.0 - r3) / 12.0;
            let hi = (3.0 + r3) / 12.0;
            let a = vec![c(lo, -hi), c(hi, lo), c(hi, -lo), c(lo, hi)];
            Ok((a.clone(), vec![], a))
        }
        (SchemeKind::Sppe, 2) => Ok((vec![c(0.5, 0.0)], vec![c(-0.5, 0.0)], vec![c(0.5, 0.0), c(0.5, 0.0)])),
        (SchemeKind::Sppe, 3) => {
            let p = c(3.0, r3) / 12.0;
            let m = c(3.0, -r3) / 12.0;
            Ok((vec![p, m], vec![-p, -m], vec![p, c(0.5, 0.0), m]))
        }
        (SchemeKind::Sppe, 4) => {
            let m = c(3.0, -r15) / 24.0;
            let p = c(3.0, r15) / 24.0;
            let q = c(0.25, 0.0);
            Ok((
                vec![m, q, p],
                vec![-m, -q, -p],
                vec![m, c(9.0, -r15) / 24.0, c(9.0, r15) / 24.0, p],
            ))
        }
        _ => Err(SchemeId::new(kind, order).unsupported()),
    }
}

/// Builds a split plan from the tabulated coefficients.
pub fn lookup_split_coefficients(kind: SchemeKind, order: usize) -> Result<SchemePlan> {
    if !kind.is_split() {
        return Err(SchemeId::new(kind, order).unsupported());
    }
    let (a, b, alpha) = split_coefficients(kind, order)?;
    let mut factors = Vec::with_capacity(a.len() + alpha.len());
    for (i, ai) in a.iter().enumerate() {
        factors.push(FactorDescriptor::DiagonalExp(alpha[i]));
        factors.push(match kind {
            SchemeKind::Slpe => FactorDescriptor::OffDiagLinear(*ai),
            _ => FactorDescriptor::pade(*ai, b[i]),
        });
    }
    if alpha.len() > a.len() {
        factors.push(FactorDescriptor::DiagonalExp(alpha[a.len()]));
    }
    Ok(SchemePlan {
        kind,
        order,
        factors,
    })
}

pub fn build_plan(kind: SchemeKind, order: usize) -> Result<SchemePlan> {
    let id = SchemeId::new(kind, order);
    if !id.is_supported() {
        return Err(id.unsupported());
    }
    match kind {
        SchemeKind::Lpe => Ok(SchemePlan {
            kind,
            order,
            factors: solve_lpe_coefficients(order)?
                .into_iter()
                .map(FactorDescriptor::OffDiagLinear)
                .collect(),
        }),
        SchemeKind::Ppe => {
            let (a, b) = solve_ppe_coefficients(order / 2)?;
            Ok(SchemePlan {
                kind,
                order,
                factors: a
                    .into_iter()
                    .zip(b)
                    .map(|(a, b)| FactorDescriptor::pade(a, b))
                    .collect(),
            })
        }
        SchemeKind::Slpe | SchemeKind::Sppe => lookup_split_coefficients(kind, order),
    }
}

/// Global errors of a plan over a step-size grid.
#[derive(Clone, Debug, PartialEq)]
pub struct OrderReport {
    pub dts: Vec<f64>,
    pub errors: Vec<f64>,
    /// Log-log least-squares slope; `None` when fewer than two points lie
    /// above the rounding floor.
    pub slope: Option<f64>,
}

impl OrderReport {
    /// `error / dt^order` at the smallest step used by the fit.
    pub fn prefactor(&self, order: usize) -> Option<f64> {
        self.dts
            .iter()
            .zip(&self.errors)
            .filter(|(_, e)| **e > ROUNDING_FLOOR)
            .min_by(|a, b| a.0.total_cmp(b.0))
            .map(|(dt, e)| e / dt.powi(order as i32))
    }
}

/// Errors below this are treated as rounding noise and excluded from fits.
pub const ROUNDING_FLOOR: f64 = 1e-11;

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > ROUNDING_FLOOR)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Evolves the normalized uniform state to `t_final` with the plan and with
/// the exact propagator, returning `||psi_plan - psi_exact||_2` per step size.
pub fn verify_order(
    plan: &SchemePlan,
    hamiltonian: &SparseOperator,
    t_final: f64,
    dt_grid: &[f64],
) -> Result<OrderReport> {
    let n = hamiltonian.n_sites();
    if n > DEFAULT_EXACT_LIMIT {
        return Err(Error::ExactBackendSize {
            n_sites: n,
            limit: DEFAULT_EXACT_LIMIT,
        });
    }
    let initial = StateVector::uniform(n);
    let evolver = ExactEvolver::new(hamiltonian, DEFAULT_EXACT_LIMIT, DEFAULT_DENSE_CUTOFF)?;
    let reference = evolver.evolve(&initial, t_final)?;
    let split = split_diag_offdiag(hamiltonian);
    let mut errors = Vec::with_capacity(dt_grid.len());
    for &dt in dt_grid {
        if !(dt > 0.0) {
            return Err(Error::Config(format!("step size must be positive, got {dt}")));
        }
        let steps = (t_final / dt).round() as usize;
        if ((steps as f64) * dt - t_final).abs() > 1e-9 * t_final.max(1.0) {
            return Err(Error::Config(format!(
                "t_final = {t_final} is not a multiple of dt = {dt}"
            )));
        }
        let prop = PlanPropagator::new(plan, &split, dt, DEFAULT_EXACT_LIMIT)?;
        let mut state = initial.clone();
        for _ in 0..steps {
            state = prop.apply(&state)?;
        }
        errors.push(state.distance(&reference));
    }
    let slope = loglog_slope(dt_grid, &errors);
    Ok(OrderReport {
        dts: dt_grid.to_vec(),
        errors,
        slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeSpec;
    use crate::operators::{build_tfim, LocalTerm};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::{prop, proptest, prop_assert, prop_assert_eq, Just, Strategy};

    fn close(x: C64, re: f64, im: f64, tol: f64) -> bool {
        (x.re - re).abs() < tol && (x.im - im).abs() < tol
    }

    #[test]
    fn lpe_low_orders() {
        let a1 = solve_lpe_coefficients(1).unwrap();
        assert_eq!(a1.len(), 1);
        assert!(close(a1[0], 1.0, 0.0, 1e-14));
        let a2 = solve_lpe_coefficients(2).unwrap();
        assert!(close(a2[0], 0.5, -0.5, 1e-14));
        assert!(close(a2[1], 0.5, 0.5, 1e-14));
    }

    #[test]
    fn lpe_matches_taylor_roots() {
        // a_i = -1/r_i: the product of (1 + a_i z) is the Taylor polynomial.
        for order in 1..=4 {
            let a = solve_lpe_coefficients(order).unwrap();
            for z in [C64::new(0.3, 0.1), C64::new(-1.2, 0.7)] {
                let prod: C64 = a.iter().map(|ai| C64::new(1.0, 0.0) + ai * z).product();
                let taylor: C64 = (0..=order).map(|k| z.powu(k as u32) / factorial(k)).sum();
                assert!((prod - taylor).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn lpe_rejects_high_order() {
        assert!(matches!(
            solve_lpe_coefficients(5),
            Err(Error::UnsupportedScheme { .. })
        ));
    }

    #[test]
    fn ppe_low_orders() {
        let (a, b) = solve_ppe_coefficients(1).unwrap();
        assert!(close(a[0], 0.5, 0.0, 1e-14) && close(b[0], -0.5, 0.0, 1e-14));
        let c = ppe_condition_values(&a, &b, 1);
        assert_abs_diff_eq!(c[1].re, 1.0, epsilon = 1e-15);
        let (a, b) = solve_ppe_coefficients(2).unwrap();
        let r3 = 3f64.sqrt();
        assert!(close(a[0], 0.25, -r3 / 12.0, 1e-13));
        assert!(close(a[1], 0.25, r3 / 12.0, 1e-13));
        assert!(a.iter().zip(&b).all(|(x, y)| (x + y).norm() < 1e-15));
    }

    #[test]
    fn ppe_matches_pade_numerator_roots() {
        // Independent route: -1/a_i are the roots of the [s/s] Padé numerator.
        for s in 1..=3usize {
            let num: Vec<C64> = (0..=s)
                .map(|k| {
                    C64::new(
                        factorial(2 * s - k) * factorial(s)
                            / (factorial(2 * s) * factorial(k) * factorial(s - k)),
                        0.0,
                    )
                })
                .collect();
            let mut expected: Vec<C64> = polynomial_roots(&num).unwrap().iter().map(|r| -r.inv()).collect();
            sort_canonical(&mut expected);
            let (a, _) = solve_ppe_coefficients(s).unwrap();
            for (x, y) in a.iter().zip(&expected) {
                assert!((x - y).norm() < 1e-10, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn split_tables_satisfy_unsplit_limits() {
        // With Z = 0 a split plan reduces to its off-diagonal factors, and
        // with X = 0 to a single exponential with weight sum(alpha).
        for (kind, order) in [
            (SchemeKind::Slpe, 1),
            (SchemeKind::Slpe, 2),
            (SchemeKind::Slpe, 3),
            (SchemeKind::Sppe, 2),
            (SchemeKind::Sppe, 3),
            (SchemeKind::Sppe, 4),
        ] {
            let (a, b, alpha) = split_coefficients(kind, order).unwrap();
            let total: C64 = alpha.iter().sum();
            assert!((total - 1.0).norm() < 1e-14);
            let res = if kind == SchemeKind::Slpe {
                lpe_residual(&a, order)
            } else {
                ppe_residual(&a, &b, order)
            };
            assert!(res < 1e-14, "{kind}-{order}: {res}");
        }
    }

    #[test]
    fn plan_structure() {
        let p = build_plan(SchemeKind::Lpe, 1).unwrap();
        assert_eq!(p.factors, vec![FactorDescriptor::OffDiagLinear(C64::new(1.0, 0.0))]);
        let p = build_plan(SchemeKind::Ppe, 2).unwrap();
        assert_eq!(
            p.factors,
            vec![FactorDescriptor::OffDiagPade {
                a: C64::new(0.5, 0.0),
                b: C64::new(-0.5, 0.0)
            }]
        );
        let p = build_plan(SchemeKind::Slpe, 1).unwrap();
        assert_eq!(
            p.factors,
            vec![
                FactorDescriptor::DiagonalExp(C64::new(1.0, 0.0)),
                FactorDescriptor::OffDiagLinear(C64::new(1.0, 0.0))
            ]
        );
        for id in SchemeId::all_supported() {
            let plan = build_plan(id.kind, id.order).unwrap();
            let diag = plan.factors.iter().filter(|f| f.is_diagonal()).count();
            let lin = plan.factors.iter().filter(|f| matches!(f, FactorDescriptor::OffDiagLinear(_))).count();
            let pade = plan.factors.iter().filter(|f| matches!(f, FactorDescriptor::OffDiagPade { .. })).count();
            match id.kind {
                SchemeKind::Lpe => assert_eq!((lin, pade, diag), (id.order, 0, 0)),
                SchemeKind::Ppe => assert_eq!((lin, pade, diag), (0, id.order / 2, 0)),
                SchemeKind::Slpe => assert_eq!(diag, lin),
                SchemeKind::Sppe => assert_eq!(diag, pade + 1),
            }
            if id.kind.is_split() {
                for w in plan.factors.windows(2) {
                    assert_ne!(w[0].is_diagonal(), w[1].is_diagonal());
                }
                assert!(plan.factors[0].is_diagonal());
            }
        }
    }

    #[test]
    fn unsupported_pairs_list_supported() {
        let err = lookup_split_coefficients(SchemeKind::Slpe, 4).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("S-LPE-4"));
        for id in SchemeId::all_supported() {
            assert!(msg.contains(&id.to_string()), "{msg}");
        }
        assert!(build_plan(SchemeKind::Ppe, 3).is_err());
        assert!("S-PPE-5".parse::<SchemeId>().is_err());
        assert!("RK-4".parse::<SchemeId>().is_err());
    }

    #[test]
    fn scheme_id_round_trip() {
        for id in SchemeId::all_supported() {
            assert_eq!(id.to_string().parse::<SchemeId>().unwrap(), id);
        }
        assert_eq!("s-ppe-3".parse::<SchemeId>().unwrap(), SchemeId::new(SchemeKind::Sppe, 3));
    }

    #[test]
    fn pade_with_zero_b_is_linear() {
        let a = C64::new(0.3, 0.2);
        assert_eq!(FactorDescriptor::pade(a, C64::new(0.0, 0.0)), FactorDescriptor::OffDiagLinear(a));
    }

    #[test]
    fn lpe2_order_on_random_three_site_hamiltonian() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut terms = Vec::new();
        for sites in [vec![0, 1], vec![1, 2], vec![0, 2]] {
            let m: Vec<C64> = (0..16).map(|_| C64::new(rng.random_range(-1.0..1.0), 0.0)).collect();
            // symmetrize so the operator is Hermitian
            let sym: Vec<C64> = (0..16).map(|k| (m[k] + m[(k % 4) * 4 + k / 4]) * 0.5).collect();
            terms.push(LocalTerm::new(sites, sym, C64::new(1.0, 0.0)).unwrap());
        }
        let h = SparseOperator::new(3, terms).unwrap();
        let plan = build_plan(SchemeKind::Lpe, 2).unwrap();
        let report = verify_order(&plan, &h, 1.0, &[0.1, 0.05, 0.025, 0.0125]).unwrap();
        let slope = report.slope.unwrap();
        assert!((slope - 2.0).abs() < 0.3, "slope {slope}");
    }

    #[test]
    fn diagonal_hamiltonian_is_exact_under_split_plan() {
        let lat = LatticeSpec::new(2, 2).unwrap();
        let h = build_tfim(&lat, 1.0, 0.0).unwrap();
        let plan = build_plan(SchemeKind::Slpe, 1).unwrap();
        let report = verify_order(&plan, &h, 0.2, &[0.1, 0.05]).unwrap();
        assert!(report.errors.iter().all(|e| *e < 1e-13));
        assert!(report.slope.is_none());
    }

    #[test]
    fn sppe3_order_on_tfim() {
        let lat = LatticeSpec::new(2, 3).unwrap();
        let h = build_tfim(&lat, 1.0, 2.0 * crate::operators::TFIM_CRITICAL_FIELD).unwrap();
        let plan = build_plan(SchemeKind::Sppe, 3).unwrap();
        let report = verify_order(&plan, &h, 0.2, &[0.004, 0.002, 0.001, 0.0005]).unwrap();
        let slope = report.slope.unwrap();
        assert!((slope - 3.0).abs() < 0.3, "slope {slope}");
    }

    proptest! {
        #[test]
        fn symmetric_polynomials_match_brute_force(
            raw in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..5)
        ) {
            let v: Vec<C64> = raw.into_iter().map(|(a, b)| C64::new(a, b)).collect();
            let n = v.len();
            let e = elementary_symmetric(&v, n);
            let h = complete_homogeneous(&v, 3);
            // brute force over subsets / multisets
            for k in 0..=n {
                let mut sum = C64::new(0.0, 0.0);
                for mask in 0u32..(1 << n) {
                    if mask.count_ones() as usize == k {
                        sum += (0..n).filter(|i| mask >> i & 1 == 1).map(|i| v[i]).product::<C64>();
                    }
                }
                prop_assert!((sum - e[k]).norm() < 1e-12);
            }
            let mut h2 = C64::new(0.0, 0.0);
            for i in 0..n {
                for j in i..n {
                    h2 += v[i] * v[j];
                }
            }
            prop_assert!((h2 - h[2]).norm() < 1e-12);
        }

        #[test]
        fn canonical_sort_is_permutation_invariant(perm in Just((0..4usize).collect::<Vec<_>>()).prop_shuffle()) {
            let base = solve_lpe_coefficients(4).unwrap();
            let mut shuffled: Vec<C64> = perm.iter().map(|&i| base[i]).collect();
            sort_canonical(&mut shuffled);
            prop_assert_eq!(shuffled, base);
        }
    }
}
