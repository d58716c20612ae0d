//! K-local spin operators evaluated through connected elements.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::lattice::{LatticeSpec, SpinConfiguration, StateVector};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Critical transverse field of the 2D square-lattice TFIM (J = 1).
pub const TFIM_CRITICAL_FIELD: f64 = 3.044;

/// A term `coeff * M` acting on `sites`, with `M` a dense `2^k x 2^k` matrix.
///
/// Local basis index `l` has bit `m` equal to the bit of `sites[m]`.
/// Matrix entries are stored row-major: `matrix[l_out * 2^k + l_in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalTerm {
    sites: Vec<usize>,
    matrix: Vec<C64>,
    coeff: C64,
    diagonal_only: bool,
}

impl LocalTerm {
    pub fn new(sites: Vec<usize>, matrix: Vec<C64>, coeff: C64) -> Result<Self> {
        let dim = 1usize << sites.len();
        if matrix.len() != dim * dim {
            return Err(Error::InvalidOperator(format!(
                "local matrix on {} sites needs {} entries, got {}",
                sites.len(),
                dim * dim,
                matrix.len()
            )));
        }
        for (k, s) in sites.iter().enumerate() {
            if sites[k + 1..].contains(s) {
                return Err(Error::InvalidOperator(format!(
                    "site {s} repeated in a local term"
                )));
            }
        }
        let diagonal_only = (0..dim).all(|r| (0..dim).all(|c| r == c || matrix[r * dim + c] == ZERO));
        Ok(Self {
            sites,
            matrix,
            coeff,
            diagonal_only,
        })
    }

    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    pub fn matrix(&self) -> &[C64] {
        &self.matrix
    }

    pub fn coeff(&self) -> C64 {
        self.coeff
    }

    fn local_dim(&self) -> usize {
        1 << self.sites.len()
    }

    #[inline]
    fn local_index(&self, x: &SpinConfiguration) -> usize {
        self.sites
            .iter()
            .enumerate()
            .fold(0, |acc, (m, &s)| acc | ((x.bit(s) as usize) << m))
    }

    #[inline]
    fn replace_bits(&self, x: &SpinConfiguration, local: usize) -> SpinConfiguration {
        let mut bits = x.index();
        for (m, &s) in self.sites.iter().enumerate() {
            bits = (bits & !(1u64 << s)) | ((((local >> m) & 1) as u64) << s);
        }
        x.with_bits(bits)
    }

    fn diagonal_entry(&self, x: &SpinConfiguration) -> C64 {
        let l = self.local_index(x);
        self.coeff * self.matrix[l * self.local_dim() + l]
    }
}

/// Sum of local terms.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseOperator {
    n_sites: usize,
    terms: Vec<LocalTerm>,
}

impl SparseOperator {
    pub fn new(n_sites: usize, terms: Vec<LocalTerm>) -> Result<Self> {
        for t in &terms {
            if let Some(&s) = t.sites.iter().find(|&&s| s >= n_sites) {
                return Err(Error::InvalidOperator(format!(
                    "site {s} out of range for {n_sites} sites"
                )));
            }
        }
        Ok(Self { n_sites, terms })
    }

    pub fn identity(n_sites: usize) -> Self {
        Self {
            n_sites,
            terms: vec![identity_term()],
        }
    }

    pub fn zero(n_sites: usize) -> Self {
        Self {
            n_sites,
            terms: Vec::new(),
        }
    }

    pub fn pauli_x(n_sites: usize, site: usize) -> Result<Self> {
        Self::new(
            n_sites,
            vec![LocalTerm::new(vec![site], vec![ZERO, ONE, ONE, ZERO], ONE)?],
        )
    }

    pub fn pauli_z(n_sites: usize, site: usize) -> Result<Self> {
        Self::new(
            n_sites,
            vec![LocalTerm::new(vec![site], vec![ONE, ZERO, ZERO, -ONE], ONE)?],
        )
    }

    /// Average transverse magnetization `(1/N) sum_i sigma^x_i`.
    pub fn magnetization_x(n_sites: usize) -> Self {
        let c = C64::new(1.0 / n_sites as f64, 0.0);
        let terms = (0..n_sites)
            .map(|s| LocalTerm::new(vec![s], vec![ZERO, ONE, ONE, ZERO], c).expect("valid"))
            .collect();
        Self { n_sites, terms }
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn terms(&self) -> &[LocalTerm] {
        &self.terms
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Upper bound on the number of connected elements per row.
    pub fn max_connected(&self) -> usize {
        1 + self
            .terms
            .iter()
            .map(|t| t.local_dim() - 1)
            .sum::<usize>()
    }

    pub fn add(&self, other: &SparseOperator) -> Result<Self> {
        if self.n_sites != other.n_sites {
            return Err(Error::InvalidOperator(format!(
                "cannot add operators on {} and {} sites",
                self.n_sites, other.n_sites
            )));
        }
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Ok(Self {
            n_sites: self.n_sites,
            terms,
        })
    }

    pub fn scaled(&self, factor: C64) -> Self {
        Self {
            n_sites: self.n_sites,
            terms: self
                .terms
                .iter()
                .map(|t| LocalTerm {
                    coeff: t.coeff * factor,
                    ..t.clone()
                })
                .collect(),
        }
    }

    /// Writes the nonzero entries of row `x` into `out`, merging duplicates.
    pub fn connected_into(&self, x: &SpinConfiguration, out: &mut Vec<(SpinConfiguration, C64)>) {
        out.clear();
        for t in &self.terms {
            if t.coeff == ZERO {
                continue;
            }
            let dim = t.local_dim();
            let l = t.local_index(x);
            if t.diagonal_only {
                push_merge(out, *x, t.coeff * t.matrix[l * dim + l]);
                continue;
            }
            let row = &t.matrix[l * dim..(l + 1) * dim];
            for (lp, &m) in row.iter().enumerate() {
                if m != ZERO {
                    let xp = if lp == l { *x } else { t.replace_bits(x, lp) };
                    push_merge(out, xp, t.coeff * m);
                }
            }
        }
        out.retain(|(_, v)| *v != ZERO);
    }

    pub fn connected_elements(&self, x: &SpinConfiguration) -> Vec<(SpinConfiguration, C64)> {
        let mut out = Vec::with_capacity(self.max_connected());
        self.connected_into(x, &mut out);
        out
    }

    pub fn diagonal_element(&self, x: &SpinConfiguration) -> C64 {
        self.terms.iter().map(|t| t.diagonal_entry(x)).sum()
    }

    /// True when every matrix element is real.
    pub fn is_real(&self) -> bool {
        self.terms
            .iter()
            .all(|t| t.matrix.iter().all(|m| (t.coeff * m).im == 0.0))
    }

    /// `O |psi>` computed row by row.
    pub fn apply(&self, state: &StateVector) -> Result<StateVector> {
        if state.n_sites() != self.n_sites {
            return Err(Error::InvalidOperator(format!(
                "operator on {} sites applied to a state on {}",
                self.n_sites,
                state.n_sites()
            )));
        }
        let amps = state.amplitudes();
        let mut buf = Vec::with_capacity(self.max_connected());
        let out = (0..state.dim() as u64)
            .map(|i| {
                self.connected_into(&SpinConfiguration::from_index(i, self.n_sites), &mut buf);
                buf.iter()
                    .map(|(xp, v)| v * amps[xp.index() as usize])
                    .sum()
            })
            .collect();
        StateVector::new(self.n_sites, out)
    }

    /// Compressed sparse row form for repeated application.
    pub fn to_csr(&self, limit: usize) -> Result<CsrMatrix> {
        if self.n_sites > limit {
            return Err(Error::ExactBackendSize {
                n_sites: self.n_sites,
                limit,
            });
        }
        let dim = 1usize << self.n_sites;
        let mut indptr = Vec::with_capacity(dim + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut buf = Vec::with_capacity(self.max_connected());
        indptr.push(0);
        for i in 0..dim as u64 {
            self.connected_into(&SpinConfiguration::from_index(i, self.n_sites), &mut buf);
            buf.sort_by_key(|(xp, _)| xp.index());
            for (xp, v) in &buf {
                indices.push(xp.index() as u32);
                values.push(*v);
            }
            indptr.push(indices.len());
        }
        Ok(CsrMatrix {
            n_sites: self.n_sites,
            indptr,
            indices,
            values,
        })
    }

    /// Dense matrix `M[x, x'] = <x|O|x'>`.
    pub fn to_dense(&self, limit: usize) -> Result<DMatrix<C64>> {
        let csr = self.to_csr(limit)?;
        let dim = 1usize << self.n_sites;
        let mut m = DMatrix::zeros(dim, dim);
        for r in 0..dim {
            for k in csr.indptr[r]..csr.indptr[r + 1] {
                m[(r, csr.indices[k] as usize)] += csr.values[k];
            }
        }
        Ok(m)
    }
}

fn identity_term() -> LocalTerm {
    LocalTerm {
        sites: Vec::new(),
        matrix: vec![ONE],
        coeff: ONE,
        diagonal_only: true,
    }
}

#[inline]
fn push_merge(out: &mut Vec<(SpinConfiguration, C64)>, x: SpinConfiguration, v: C64) {
    if let Some(e) = out.iter_mut().find(|(y, _)| *y == x) {
        e.1 += v;
    } else {
        out.push((x, v));
    }
}

/// Row-compressed matrix over the full basis.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    n_sites: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<C64>,
}

impl CsrMatrix {
    pub fn dim(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn matvec_into(&self, input: &[C64], out: &mut [C64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = ZERO;
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.values[k] * input[self.indices[k] as usize];
            }
            *o = acc;
        }
    }

    pub fn matvec(&self, input: &[C64]) -> Vec<C64> {
        let mut out = vec![ZERO; self.dim()];
        self.matvec_into(input, &mut out);
        out
    }

    pub fn is_real(&self) -> bool {
        self.values.iter().all(|v| v.im == 0.0)
    }

    /// Entries `(row, col, value)` in row order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim()).flat_map(move |r| {
            (self.indptr[r]..self.indptr[r + 1])
                .map(move |k| (r, self.indices[k] as usize, self.values[k]))
        })
    }
}

/// A diagonal operator `d(x)` stored as diagonal local terms.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalOperator {
    n_sites: usize,
    terms: Vec<(Vec<usize>, Vec<C64>)>,
}

/// Expansion of a diagonal operator in products of spin values:
/// `d(x) = constant + sum_i fields_i x_i + sum_{i<j} couplings_ij x_i x_j`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SpinPolynomial {
    pub constant: C64,
    pub fields: Vec<(usize, C64)>,
    pub couplings: Vec<((usize, usize), C64)>,
}

impl DiagonalOperator {
    pub fn zero(n_sites: usize) -> Self {
        Self {
            n_sites,
            terms: Vec::new(),
        }
    }

    /// Builds `constant + sum fields_i x_i + sum couplings_ij x_i x_j`.
    pub fn from_polynomial(n_sites: usize, poly: &SpinPolynomial) -> Result<Self> {
        let mut terms = Vec::new();
        if poly.constant != ZERO {
            terms.push((Vec::new(), vec![poly.constant]));
        }
        for &(s, f) in &poly.fields {
            if s >= n_sites {
                return Err(Error::InvalidOperator(format!("site {s} out of range")));
            }
            terms.push((vec![s], vec![f, -f]));
        }
        for &((i, j), c) in &poly.couplings {
            if i >= n_sites || j >= n_sites || i == j {
                return Err(Error::InvalidOperator(format!("invalid coupling ({i}, {j})")));
            }
            terms.push((vec![i, j], vec![c, -c, -c, c]));
        }
        Ok(Self { n_sites, terms })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn value(&self, x: &SpinConfiguration) -> C64 {
        self.terms
            .iter()
            .map(|(sites, diag)| {
                let l = sites
                    .iter()
                    .enumerate()
                    .fold(0, |acc, (m, &s)| acc | ((x.bit(s) as usize) << m));
                diag[l]
            })
            .sum()
    }

    /// The same operator as a [`SparseOperator`] of diagonal local terms.
    pub fn to_sparse(&self) -> Result<SparseOperator> {
        let terms = self
            .terms
            .iter()
            .map(|(sites, d)| LocalTerm::new(sites.clone(), diag_matrix(d), ONE))
            .collect::<Result<Vec<_>>>()?;
        SparseOperator::new(self.n_sites, terms)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|(_, d)| d.iter().all(|v| *v == ZERO))
    }

    /// Walsh expansion of `d`. Fails if any term couples more than two spins.
    pub fn spin_polynomial(&self) -> Result<SpinPolynomial> {
        let mut poly = SpinPolynomial::default();
        let tol = 1e-14;
        for (sites, diag) in &self.terms {
            let k = sites.len();
            let dim = 1usize << k;
            for subset in 0..dim {
                let mut c = ZERO;
                for (l, &d) in diag.iter().enumerate() {
                    let parity = (l & subset).count_ones();
                    c += if parity % 2 == 0 { d } else { -d };
                }
                c /= dim as f64;
                if c.norm() <= tol * diag.iter().map(|d| d.norm()).fold(1.0, f64::max) {
                    continue;
                }
                let members: Vec<usize> = (0..k).filter(|m| subset >> m & 1 == 1).map(|m| sites[m]).collect();
                match members.as_slice() {
                    [] => poly.constant += c,
                    [s] => add_entry(&mut poly.fields, *s, c),
                    [a, b] => add_entry(&mut poly.couplings, ((*a).min(*b), (*a).max(*b)), c),
                    _ => {
                        return Err(Error::Capability(format!(
                            "diagonal term on sites {members:?} is not a one- or two-body spin product"
                        )))
                    }
                }
            }
        }
        Ok(poly)
    }
}

fn add_entry<K: PartialEq>(list: &mut Vec<(K, C64)>, key: K, v: C64) {
    if let Some(e) = list.iter_mut().find(|(k, _)| *k == key) {
        e.1 += v;
    } else {
        list.push((key, v));
    }
}

/// Diagonal and off-diagonal parts of an operator.
#[derive(Clone, Debug)]
pub struct OperatorSplit {
    pub x_part: SparseOperator,
    pub z_part: DiagonalOperator,
}

pub fn split_diag_offdiag(op: &SparseOperator) -> OperatorSplit {
    let mut off_terms = Vec::new();
    let mut diag_terms = Vec::new();
    for t in &op.terms {
        let dim = t.local_dim();
        let diag: Vec<C64> = (0..dim).map(|l| t.coeff * t.matrix[l * dim + l]).collect();
        if diag.iter().any(|d| *d != ZERO) {
            diag_terms.push((t.sites.clone(), diag));
        }
        if !t.diagonal_only {
            let mut matrix = t.matrix.clone();
            for l in 0..dim {
                matrix[l * dim + l] = ZERO;
            }
            off_terms.push(LocalTerm {
                sites: t.sites.clone(),
                matrix,
                coeff: t.coeff,
                diagonal_only: false,
            });
        }
    }
    OperatorSplit {
        x_part: SparseOperator {
            n_sites: op.n_sites,
            terms: off_terms,
        },
        z_part: DiagonalOperator {
            n_sites: op.n_sites,
            terms: diag_terms,
        },
    }
}

/// Returns `1 + a * dt * op`.
pub fn shift_scale(op: &SparseOperator, a: C64, dt: f64) -> SparseOperator {
    let mut out = op.scaled(a * dt);
    out.terms.insert(0, identity_term());
    out
}

/// `H = -J sum_<ij> z_i z_j - h sum_i x_i` on the lattice's periodic bonds.
pub fn build_tfim(lattice: &LatticeSpec, coupling: f64, field: f64) -> Result<SparseOperator> {
    lattice.validate()?;
    build_tfim_from_bonds(lattice.n_sites(), &lattice.bonds(), coupling, field)
}

/// TFIM on an explicit bond list; repeated unordered bonds are rejected.
pub fn build_tfim_from_bonds(
    n_sites: usize,
    bonds: &[(usize, usize)],
    coupling: f64,
    field: f64,
) -> Result<SparseOperator> {
    let mut terms = Vec::new();
    let mut seen: Vec<(usize, usize)> = Vec::with_capacity(bonds.len());
    for &(i, j) in bonds {
        let pair = (i.min(j), i.max(j));
        if i == j || seen.contains(&pair) {
            return Err(Error::InvalidOperator(format!(
                "bond ({i}, {j}) is a self-loop or counted twice"
            )));
        }
        seen.push(pair);
        if coupling != 0.0 {
            terms.push(LocalTerm::new(
                vec![i, j],
                diag_matrix(&[ONE, -ONE, -ONE, ONE]),
                C64::new(-coupling, 0.0),
            )?);
        }
    }
    if field != 0.0 {
        for s in 0..n_sites {
            terms.push(LocalTerm::new(
                vec![s],
                vec![ZERO, ONE, ONE, ZERO],
                C64::new(-field, 0.0),
            )?);
        }
    }
    SparseOperator::new(n_sites, terms)
}

fn diag_matrix(d: &[C64]) -> Vec<C64> {
    let n = d.len();
    let mut m = vec![ZERO; n * n];
    for (i, v) in d.iter().enumerate() {
        m[i * n + i] = *v;
    }
    m
}
