//! Periodic square lattices, basis configurations and dense state vectors.
//!
//! Bit convention: spin +1 is bit 0, spin -1 is bit 1, and site 0 is the
//! least significant bit of the basis index.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the number of sites handled by dense state vectors.
pub const DEFAULT_EXACT_LIMIT: usize = 20;

/// Largest lattice representable by a [`SpinConfiguration`].
pub const MAX_SITES: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    Periodic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub rows: usize,
    pub cols: usize,
    #[serde(default)]
    pub boundary: Boundary,
}

impl LatticeSpec {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        let spec = Self {
            rows,
            cols,
            boundary: Boundary::Periodic,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidLattice(format!(
                "rows and cols must be positive, got {}x{}",
                self.rows, self.cols
            )));
        }
        if self.rows * self.cols > MAX_SITES {
            return Err(Error::InvalidLattice(format!(
                "{} sites exceeds the maximum of {MAX_SITES}",
                self.rows * self.cols
            )));
        }
        Ok(())
    }

    pub fn n_sites(&self) -> usize {
        self.rows * self.cols
    }

    pub fn site(&self, row: usize, col: usize) -> usize {
        (row % self.rows) * self.cols + (col % self.cols)
    }

    pub fn coords(&self, site: usize) -> (usize, usize) {
        (site / self.cols, site % self.cols)
    }

    /// Nearest-neighbour bonds as unordered pairs `(i, j)` with `i < j`.
    ///
    /// Every site contributes a right and a down bond. On tori with a side of
    /// length 1 or 2 some of these coincide or become self-loops; duplicates
    /// are kept once and self-loops dropped, so the list has `2 * n_sites`
    /// entries only when both sides are at least 3.
    pub fn bonds(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::with_capacity(2 * self.n_sites());
        for r in 0..self.rows {
            for c in 0..self.cols {
                let s = self.site(r, c);
                for t in [self.site(r, c + 1), self.site(r + 1, c)] {
                    if s == t {
                        continue;
                    }
                    let pair = (s.min(t), s.max(t));
                    if !out.contains(&pair) {
                        out.push(pair);
                    }
                }
            }
        }
        out
    }

    /// Fails when the lattice is too large for dense state vectors.
    pub fn check_exact(&self, limit: usize) -> Result<()> {
        if self.n_sites() > limit {
            return Err(Error::ExactBackendSize {
                n_sites: self.n_sites(),
                limit,
            });
        }
        Ok(())
    }
}

/// A computational-basis configuration stored as a bit string.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpinConfiguration {
    bits: u64,
    n_sites: u8,
}

impl SpinConfiguration {
    pub fn from_index(index: u64, n_sites: usize) -> Self {
        debug_assert!(n_sites <= MAX_SITES);
        debug_assert!(n_sites == 64 || index < (1u64 << n_sites));
        Self {
            bits: index,
            n_sites: n_sites as u8,
        }
    }

    pub fn all_up(n_sites: usize) -> Self {
        Self::from_index(0, n_sites)
    }

    pub fn from_values(values: &[i8]) -> Result<Self> {
        if values.len() > MAX_SITES {
            return Err(Error::InvalidLattice(format!(
                "{} sites exceeds the maximum of {MAX_SITES}",
                values.len()
            )));
        }
        let mut bits = 0u64;
        for (site, &v) in values.iter().enumerate() {
            match v {
                1 => {}
                -1 => bits |= 1 << site,
                _ => return Err(Error::InvalidSpin { site, value: v }),
            }
        }
        Ok(Self::from_index(bits, values.len()))
    }

    pub fn index(&self) -> u64 {
        self.bits
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites as usize
    }

    pub fn values(&self) -> Vec<i8> {
        (0..self.n_sites()).map(|s| self.spin(s)).collect()
    }

    /// Spin value at `site`, either +1 or -1.
    #[inline]
    pub fn spin(&self, site: usize) -> i8 {
        1 - 2 * ((self.bits >> site) & 1) as i8
    }

    #[inline]
    pub fn bit(&self, site: usize) -> u64 {
        (self.bits >> site) & 1
    }

    #[inline]
    pub fn flipped(&self, site: usize) -> Self {
        Self {
            bits: self.bits ^ (1 << site),
            n_sites: self.n_sites,
        }
    }

    #[inline]
    pub fn with_bits(&self, bits: u64) -> Self {
        Self {
            bits,
            n_sites: self.n_sites,
        }
    }
}

pub fn config_index(config: &SpinConfiguration) -> u64 {
    config.index()
}

pub fn index_config(index: u64, n_sites: usize) -> SpinConfiguration {
    SpinConfiguration::from_index(index, n_sites)
}

/// All basis configurations in ascending index order.
pub fn enumerate_configurations(
    lattice: &LatticeSpec,
    limit: usize,
) -> Result<Vec<SpinConfiguration>> {
    lattice.check_exact(limit)?;
    let n = lattice.n_sites();
    Ok((0..1u64 << n)
        .map(|i| SpinConfiguration::from_index(i, n))
        .collect())
}

/// Dense amplitude vector over the `2^n_sites` basis.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    n_sites: usize,
    amplitudes: Vec<C64>,
}

impl StateVector {
    pub fn new(n_sites: usize, amplitudes: Vec<C64>) -> Result<Self> {
        if n_sites >= MAX_SITES || amplitudes.len() != 1usize << n_sites {
            return Err(Error::InvalidLattice(format!(
                "state vector of length {} does not match {n_sites} sites",
                amplitudes.len()
            )));
        }
        Ok(Self {
            n_sites,
            amplitudes,
        })
    }

    pub fn zeros(n_sites: usize) -> Self {
        Self {
            n_sites,
            amplitudes: vec![C64::new(0.0, 0.0); 1 << n_sites],
        }
    }

    pub fn basis(n_sites: usize, index: u64) -> Self {
        let mut s = Self::zeros(n_sites);
        s.amplitudes[index as usize] = C64::new(1.0, 0.0);
        s
    }

    pub fn uniform(n_sites: usize) -> Self {
        let dim = 1usize << n_sites;
        let a = 1.0 / (dim as f64).sqrt();
        Self {
            n_sites,
            amplitudes: vec![C64::new(a, 0.0); dim],
        }
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &StateVector) -> C64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::ZeroNorm);
        }
        Ok(self.scaled(C64::new(1.0 / n, 0.0)))
    }

    pub fn scaled(&self, factor: C64) -> Self {
        Self {
            n_sites: self.n_sites,
            amplitudes: self.amplitudes.iter().map(|a| a * factor).collect(),
        }
    }

    /// `||self - other||_2`.
    pub fn distance(&self, other: &StateVector) -> f64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

/// Born probabilities `|psi(x)|^2 / <psi|psi>`.
pub fn born_distribution(state: &StateVector) -> Result<Vec<f64>> {
    let norm = state.norm_sqr();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::ZeroNorm);
    }
    Ok(state
        .amplitudes
        .iter()
        .map(|a| a.norm_sqr() / norm)
        .collect())
}
