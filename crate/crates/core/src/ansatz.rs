//! Variational wavefunctions with real parameters and complex log-amplitudes.
//!
//! Complex weights are stored as consecutive `(re, im)` pairs of real
//! parameters. All log-amplitudes are holomorphic in the complex weights, so
//! the derivative with respect to the imaginary slot is `i` times the
//! derivative with respect to the real slot.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{LatticeSpec, SpinConfiguration, MAX_SITES};
use crate::operators::DiagonalOperator;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const I: C64 = C64 { re: 0.0, im: 1.0 };
const MINUS_I: C64 = C64 { re: 0.0, im: -1.0 };

/// Largest lattice for the log-state-vector ansatz (it stores `2^n` amplitudes).
pub const LOG_STATE_VECTOR_MAX_SITES: usize = 20;

/// Periodic convolutional network with channel widths `channels` and a
/// square `kernel`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub lattice: LatticeSpec,
    pub channels: Vec<usize>,
    pub kernel: usize,
}

impl ConvSpec {
    pub fn new(lattice: LatticeSpec, channels: Vec<usize>, kernel: usize) -> Result<Self> {
        let spec = Self {
            lattice,
            channels,
            kernel,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        self.lattice.validate()?;
        if self.channels.is_empty() || self.channels.contains(&0) || self.kernel == 0 {
            return Err(Error::Config(
                "convolutional network needs at least one layer, positive widths and kernel".into(),
            ));
        }
        Ok(())
    }

    fn input_channels(&self, layer: usize) -> usize {
        if layer == 0 {
            1
        } else {
            self.channels[layer - 1]
        }
    }

    fn layer_params(&self, layer: usize) -> usize {
        let k2 = self.kernel * self.kernel;
        let weights = self.channels[layer] * self.input_channels(layer) * k2;
        let bias = if layer == 0 { 0 } else { self.channels[layer] };
        2 * (weights + bias)
    }

    pub fn n_params(&self) -> usize {
        (0..self.channels.len()).map(|l| self.layer_params(l)).sum()
    }

    /// `table[site * k^2 + offset]` is the input site read by `offset` at `site`.
    fn neighbour_table(&self) -> Vec<usize> {
        let lat = &self.lattice;
        let k = self.kernel;
        let half = k / 2;
        let mut out = Vec::with_capacity(lat.n_sites() * k * k);
        for site in 0..lat.n_sites() {
            let (r, c) = lat.coords(site);
            for i in 0..k {
                for j in 0..k {
                    out.push(lat.site(r + lat.rows * k + i - half, c + lat.cols * k + j - half));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Ansatz {
    /// One free complex log-amplitude per basis state.
    LogStateVector { n_sites: usize },
    /// Two-body Jastrow factor and single-site fields plus an optional
    /// convolutional backbone.
    Jastrow {
        n_sites: usize,
        backbone: Option<ConvSpec>,
    },
    PeriodicConv(ConvSpec),
}

impl Ansatz {
    pub fn log_state_vector(n_sites: usize) -> Result<Self> {
        if n_sites == 0 || n_sites > LOG_STATE_VECTOR_MAX_SITES {
            return Err(Error::Config(format!(
                "log-state-vector ansatz supports 1..={LOG_STATE_VECTOR_MAX_SITES} sites, got {n_sites}"
            )));
        }
        Ok(Ansatz::LogStateVector { n_sites })
    }

    pub fn jastrow(lattice: LatticeSpec, backbone: Option<(Vec<usize>, usize)>) -> Result<Self> {
        lattice.validate()?;
        let backbone = backbone
            .map(|(channels, kernel)| ConvSpec::new(lattice, channels, kernel))
            .transpose()?;
        Ok(Ansatz::Jastrow {
            n_sites: lattice.n_sites(),
            backbone,
        })
    }

    pub fn conv(lattice: LatticeSpec, channels: Vec<usize>, kernel: usize) -> Result<Self> {
        Ok(Ansatz::PeriodicConv(ConvSpec::new(lattice, channels, kernel)?))
    }

    pub fn n_sites(&self) -> usize {
        match self {
            Ansatz::LogStateVector { n_sites } | Ansatz::Jastrow { n_sites, .. } => *n_sites,
            Ansatz::PeriodicConv(c) => c.lattice.n_sites(),
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            Ansatz::LogStateVector { n_sites } => 2 << n_sites,
            Ansatz::Jastrow { n_sites, backbone } => {
                let n = *n_sites;
                2 * (n * (n - 1) / 2 + n) + backbone.as_ref().map_or(0, |b| b.n_params())
            }
            Ansatz::PeriodicConv(c) => c.n_params(),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Ansatz::LogStateVector { .. } => "log_state_vector",
            Ansatz::Jastrow { .. } => "jastrow",
            Ansatz::PeriodicConv(_) => "periodic_conv",
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Ansatz::LogStateVector { n_sites } => {
                Ansatz::log_state_vector(*n_sites)?;
            }
            Ansatz::Jastrow { n_sites, backbone } => {
                if *n_sites == 0 || *n_sites > MAX_SITES {
                    return Err(Error::Config(format!("invalid site count {n_sites}")));
                }
                if let Some(b) = backbone {
                    b.validate()?;
                    if b.lattice.n_sites() != *n_sites {
                        return Err(Error::Config("backbone lattice does not match the Jastrow sites".into()));
                    }
                }
            }
            Ansatz::PeriodicConv(c) => c.validate()?,
        }
        Ok(())
    }
}

/// An ansatz with concrete parameters.
///
/// `log_offset` is a constant added to every log-amplitude. It is not a
/// variational parameter; it absorbs the constant part of exactly applied
/// diagonal exponentials.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationalState {
    ansatz: Ansatz,
    theta: Vec<f64>,
    log_offset: C64,
    conv_table: Option<Vec<usize>>,
}

impl VariationalState {
    pub fn new(ansatz: Ansatz, theta: Vec<f64>) -> Result<Self> {
        ansatz.validate()?;
        let expected = ansatz.n_params();
        if theta.len() != expected {
            return Err(Error::ParameterCount {
                expected,
                got: theta.len(),
            });
        }
        let conv_table = match &ansatz {
            Ansatz::Jastrow {
                backbone: Some(b), ..
            } => Some(b.neighbour_table()),
            Ansatz::PeriodicConv(c) => Some(c.neighbour_table()),
            _ => None,
        };
        Ok(Self {
            ansatz,
            theta,
            log_offset: ZERO,
            conv_table,
        })
    }

    pub fn zeros(ansatz: Ansatz) -> Result<Self> {
        let n = ansatz.n_params();
        Self::new(ansatz, vec![0.0; n])
    }

    /// Parameters drawn as complex normals `scale * (g1 + i g2) / sqrt(2)`.
    pub fn random<R: Rng + ?Sized>(ansatz: Ansatz, scale: f64, rng: &mut R) -> Result<Self> {
        let n = ansatz.n_params();
        let theta = (0..n)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal) / std::f64::consts::SQRT_2)
            .collect();
        Self::new(ansatz, theta)
    }

    pub fn ansatz(&self) -> &Ansatz {
        &self.ansatz
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    pub fn n_sites(&self) -> usize {
        self.ansatz.n_sites()
    }

    pub fn log_offset(&self) -> C64 {
        self.log_offset
    }

    pub fn set_log_offset(&mut self, offset: C64) {
        self.log_offset = offset;
    }

    /// A copy with new parameters and the same structure and offset.
    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != self.theta.len() {
            return Err(Error::ParameterCount {
                expected: self.theta.len(),
                got: theta.len(),
            });
        }
        Ok(Self {
            theta,
            ..self.clone()
        })
    }

    /// A copy with parameters `theta + step`.
    pub fn shifted(&self, step: &[f64]) -> Result<Self> {
        if step.len() != self.theta.len() {
            return Err(Error::ParameterCount {
                expected: self.theta.len(),
                got: step.len(),
            });
        }
        let theta = self.theta.iter().zip(step).map(|(a, b)| a + b).collect();
        self.with_theta(theta)
    }

    fn weight(&self, index: usize) -> C64 {
        C64::new(self.theta[2 * index], self.theta[2 * index + 1])
    }

    pub fn log_amplitude(&self, x: &SpinConfiguration) -> C64 {
        self.log_offset
            + match &self.ansatz {
                Ansatz::LogStateVector { .. } => self.weight(x.index() as usize),
                Ansatz::Jastrow { n_sites, backbone } => {
                    let n = *n_sites;
                    let spins: Vec<f64> = (0..n).map(|s| x.spin(s) as f64).collect();
                    let mut acc = ZERO;
                    let mut k = 0;
                    for i in 0..n {
                        for j in i + 1..n {
                            acc += self.weight(k) * (spins[i] * spins[j]);
                            k += 1;
                        }
                    }
                    for (i, si) in spins.iter().enumerate() {
                        acc += self.weight(k + i) * *si;
                    }
                    if let Some(b) = backbone {
                        let offset = 2 * (k + n);
                        acc += conv_forward(b, self.conv_table.as_deref().unwrap(), &self.theta[offset..], &spins, None);
                    }
                    acc
                }
                Ansatz::PeriodicConv(c) => {
                    let spins: Vec<f64> = (0..c.lattice.n_sites()).map(|s| x.spin(s) as f64).collect();
                    conv_forward(c, self.conv_table.as_deref().unwrap(), &self.theta, &spins, None)
                }
            }
    }

    /// Writes `d log psi(x) / d theta` into `out` (length `n_params`).
    pub fn log_gradient_into(&self, x: &SpinConfiguration, out: &mut [C64]) {
        debug_assert_eq!(out.len(), self.theta.len());
        match &self.ansatz {
            Ansatz::LogStateVector { .. } => {
                out.iter_mut().for_each(|v| *v = ZERO);
                let k = x.index() as usize;
                out[2 * k] = C64::new(1.0, 0.0);
                out[2 * k + 1] = I;
            }
            Ansatz::Jastrow { n_sites, backbone } => {
                let n = *n_sites;
                let spins: Vec<f64> = (0..n).map(|s| x.spin(s) as f64).collect();
                let mut k = 0;
                for i in 0..n {
                    for j in i + 1..n {
                        let v = spins[i] * spins[j];
                        out[2 * k] = C64::new(v, 0.0);
                        out[2 * k + 1] = C64::new(0.0, v);
                        k += 1;
                    }
                }
                for (i, si) in spins.iter().enumerate() {
                    out[2 * (k + i)] = C64::new(*si, 0.0);
                    out[2 * (k + i) + 1] = C64::new(0.0, *si);
                }
                if let Some(b) = backbone {
                    let offset = 2 * (k + n);
                    conv_forward(
                        b,
                        self.conv_table.as_deref().unwrap(),
                        &self.theta[offset..],
                        &spins,
                        Some(&mut out[offset..]),
                    );
                }
            }
            Ansatz::PeriodicConv(c) => {
                let spins: Vec<f64> = (0..c.lattice.n_sites()).map(|s| x.spin(s) as f64).collect();
                conv_forward(c, self.conv_table.as_deref().unwrap(), &self.theta, &spins, Some(out));
            }
        }
    }

    pub fn log_gradient(&self, x: &SpinConfiguration) -> Vec<C64> {
        let mut out = vec![ZERO; self.theta.len()];
        self.log_gradient_into(x, &mut out);
        out
    }

    /// Applies `exp(alpha (-i) d(x) dt)` through a parameter shift.
    pub fn apply_diagonal_exact(&self, alpha: C64, z_part: &DiagonalOperator, dt: f64) -> Result<Self> {
        let c = alpha * MINUS_I * dt;
        let mut out = self.clone();
        if c == ZERO {
            return Ok(out);
        }
        match &self.ansatz {
            Ansatz::LogStateVector { n_sites } => {
                for k in 0..1u64 << n_sites {
                    let d = c * z_part.value(&SpinConfiguration::from_index(k, *n_sites));
                    out.theta[2 * k as usize] += d.re;
                    out.theta[2 * k as usize + 1] += d.im;
                }
            }
            Ansatz::Jastrow { n_sites, .. } => {
                let n = *n_sites;
                let poly = z_part.spin_polynomial()?;
                out.log_offset += c * poly.constant;
                for &((i, j), v) in &poly.couplings {
                    // pairs (i, j), i < j, are stored row by row
                    let k = i * n - i * (i + 1) / 2 + (j - i - 1);
                    out.theta[2 * k] += (c * v).re;
                    out.theta[2 * k + 1] += (c * v).im;
                }
                let base = n * (n - 1) / 2;
                for &(i, v) in &poly.fields {
                    out.theta[2 * (base + i)] += (c * v).re;
                    out.theta[2 * (base + i) + 1] += (c * v).im;
                }
            }
            Ansatz::PeriodicConv(_) => {
                return Err(Error::Capability(
                    "the convolutional ansatz has no Jastrow layer to absorb diagonal exponentials; wrap it in a Jastrow ansatz".into(),
                ))
            }
        }
        Ok(out)
    }
}

fn sigma_first(z: C64) -> (C64, C64) {
    let z2 = z * z;
    let value = z2 * (0.5 - z2 / 12.0 + z2 * z2 / 45.0);
    let deriv = z * (1.0 - z2 / 3.0 + z2 * z2 * (2.0 / 15.0));
    (value, deriv)
}

fn sigma_deep(z: C64) -> (C64, C64) {
    let z2 = z * z;
    let value = z * (0.5 - z2 / 3.0 + z2 * z2 * (2.0 / 15.0));
    let deriv = C64::new(0.5, 0.0) - z2 + z2 * z2 * (2.0 / 3.0);
    (value, deriv)
}

/// Evaluates the network; with `grad` present also writes the parameter gradient.
fn conv_forward(spec: &ConvSpec, table: &[usize], theta: &[f64], spins: &[f64], grad: Option<&mut [C64]>) -> C64 {
    let n = spins.len();
    let k2 = spec.kernel * spec.kernel;
    let layers = spec.channels.len();
    let w = |idx: usize| C64::new(theta[2 * idx], theta[2 * idx + 1]);
    // activations[l] is the input of layer l, flattened as [channel][site]
    let mut activations: Vec<Vec<C64>> = Vec::with_capacity(layers + 1);
    let mut derivs: Vec<Vec<C64>> = Vec::with_capacity(layers);
    activations.push(spins.iter().map(|s| C64::new(*s, 0.0)).collect());
    let mut offset = 0;
    let mut offsets = Vec::with_capacity(layers);
    for l in 0..layers {
        let cin = spec.input_channels(l);
        let cout = spec.channels[l];
        offsets.push(offset);
        let input = &activations[l];
        let mut out = vec![ZERO; cout * n];
        let mut der = vec![ZERO; cout * n];
        let bias_base = offset + cout * cin * k2;
        for beta in 0..cout {
            let bias = if l == 0 { ZERO } else { w(bias_base + beta) };
            for p in 0..n {
                let mut z = bias;
                let nb = &table[p * k2..(p + 1) * k2];
                for alpha in 0..cin {
                    let wbase = offset + (beta * cin + alpha) * k2;
                    let inp = &input[alpha * n..(alpha + 1) * n];
                    for (o, &q) in nb.iter().enumerate() {
                        z += w(wbase + o) * inp[q];
                    }
                }
                let (v, d) = if l == 0 { sigma_first(z) } else { sigma_deep(z) };
                out[beta * n + p] = v;
                der[beta * n + p] = d;
            }
        }
        offset = bias_base + if l == 0 { 0 } else { cout };
        activations.push(out);
        derivs.push(der);
    }
    let value: C64 = activations[layers].iter().sum();
    let Some(grad) = grad else {
        return value;
    };
    // reverse pass; upstream[c * n + p] = d value / d activation
    let mut upstream = vec![C64::new(1.0, 0.0); spec.channels[layers - 1] * n];
    for l in (0..layers).rev() {
        let cin = spec.input_channels(l);
        let cout = spec.channels[l];
        let g: Vec<C64> = upstream.iter().zip(&derivs[l]).map(|(u, d)| u * d).collect();
        let input = &activations[l];
        let base = offsets[l];
        let bias_base = base + cout * cin * k2;
        let mut down = vec![ZERO; cin * n];
        for beta in 0..cout {
            let gb = &g[beta * n..(beta + 1) * n];
            if l > 0 {
                let s: C64 = gb.iter().sum();
                grad[2 * (bias_base + beta)] = s;
                grad[2 * (bias_base + beta) + 1] = I * s;
            }
            for alpha in 0..cin {
                let wbase = base + (beta * cin + alpha) * k2;
                let inp = &input[alpha * n..(alpha + 1) * n];
                for o in 0..k2 {
                    let mut acc = ZERO;
                    let wt = w(wbase + o);
                    for p in 0..n {
                        let q = table[p * k2 + o];
                        acc += gb[p] * inp[q];
                        if l > 0 {
                            down[alpha * n + q] += wt * gb[p];
                        }
                    }
                    grad[2 * (wbase + o)] = acc;
                    grad[2 * (wbase + o) + 1] = I * acc;
                }
            }
        }
        upstream = down;
    }
    value
}

/// Jacobian rows `d log psi(x_i) / d theta` and their weighted centering.
#[derive(Clone, Debug)]
pub struct JacobianBatch {
    pub raw: DMatrix<C64>,
    pub centered: DMatrix<C64>,
    pub weights: Vec<f64>,
}

impl JacobianBatch {
    /// Centers `raw` (rows are samples) with the given probability weights.
    pub fn from_raw(raw: DMatrix<C64>, weights: Vec<f64>) -> Result<Self> {
        if raw.nrows() != weights.len() {
            return Err(Error::Config(format!(
                "{} Jacobian rows but {} weights",
                raw.nrows(),
                weights.len()
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::Config("Jacobian weights must be a probability vector".into()));
        }
        let mut centered = raw.clone();
        for c in 0..raw.ncols() {
            let mean: C64 = raw.column(c).iter().zip(&weights).map(|(v, w)| v * *w).sum();
            centered.column_mut(c).iter_mut().for_each(|v| *v -= mean);
        }
        Ok(Self {
            raw,
            centered,
            weights,
        })
    }
}

pub fn jacobian(vstate: &VariationalState, xs: &[SpinConfiguration], weights: &[f64]) -> Result<JacobianBatch> {
    let np = vstate.n_params();
    let mut raw = DMatrix::<C64>::zeros(xs.len(), np);
    let mut row = vec![ZERO; np];
    for (i, x) in xs.iter().enumerate() {
        vstate.log_gradient_into(x, &mut row);
        for (c, v) in row.iter().enumerate() {
            raw[(i, c)] = *v;
        }
    }
    JacobianBatch::from_raw(raw, weights.to_vec())
}

/// Serializable snapshot of a variational state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub ansatz: Ansatz,
    pub log_offset: [f64; 2],
    #[serde(default)]
    pub metadata: serde_json::Map<String, serde_json::Value>,
    pub theta: Vec<f64>,
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"PTVMCCK1";

impl Checkpoint {
    pub fn from_state(state: &VariationalState) -> Self {
        Self {
            ansatz: state.ansatz.clone(),
            log_offset: [state.log_offset.re, state.log_offset.im],
            metadata: serde_json::Map::new(),
            theta: state.theta.clone(),
        }
    }

    pub fn into_state(self) -> Result<VariationalState> {
        let mut s = VariationalState::new(self.ansatz, self.theta)?;
        s.log_offset = C64::new(self.log_offset[0], self.log_offset[1]);
        Ok(s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Binary layout, all integers and floats little-endian:
    /// 8-byte magic `PTVMCCK1`, `u32` header length, UTF-8 JSON header with
    /// every field except `theta`, `u64` parameter count, then the parameters
    /// as `f64`.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&serde_json::json!({
            "ansatz": self.ansatz,
            "log_offset": self.log_offset,
            "metadata": self.metadata,
        }))?;
        let mut out = Vec::with_capacity(28 + header.len() + 8 * self.theta.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.theta.len() as u64).to_le_bytes());
        for v in &self.theta {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing magic header"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let rest = &bytes[12..];
        if rest.len() < hlen + 8 {
            return Err(bad("truncated header"));
        }
        #[derive(Deserialize)]
        struct Header {
            ansatz: Ansatz,
            log_offset: [f64; 2],
            #[serde(default)]
            metadata: serde_json::Map<String, serde_json::Value>,
        }
        let header: Header = serde_json::from_slice(&rest[..hlen])?;
        let count = u64::from_le_bytes(rest[hlen..hlen + 8].try_into().unwrap()) as usize;
        let data = &rest[hlen + 8..];
        if data.len() != 8 * count {
            return Err(bad("parameter block length does not match the count"));
        }
        let theta = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            ansatz: header.ansatz,
            log_offset: header.log_offset,
            metadata: header.metadata,
            theta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::evaluate_ansatz_dense;
    use crate::lattice::born_distribution;
    use crate::operators::{build_tfim, split_diag_offdiag, SpinPolynomial};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lattice(r: usize, c: usize) -> LatticeSpec {
        LatticeSpec::new(r, c).unwrap()
    }

    fn all_ansatze() -> Vec<Ansatz> {
        vec![
            Ansatz::log_state_vector(4).unwrap(),
            Ansatz::jastrow(lattice(2, 2), None).unwrap(),
            Ansatz::jastrow(lattice(2, 3), Some((vec![2, 2], 3))).unwrap(),
            Ansatz::conv(lattice(3, 2), vec![3, 2], 2).unwrap(),
        ]
    }

    fn fd_check(state: &VariationalState, x: &SpinConfiguration) -> f64 {
        let grad = state.log_gradient(x);
        let h = 1e-5;
        let scale = grad.iter().map(|g| g.norm()).fold(1e-3, f64::max);
        let mut worst: f64 = 0.0;
        for k in 0..state.n_params() {
            let mut plus = state.theta().to_vec();
            let mut minus = state.theta().to_vec();
            plus[k] += h;
            minus[k] -= h;
            let fd = (state.with_theta(plus).unwrap().log_amplitude(x)
                - state.with_theta(minus).unwrap().log_amplitude(x))
                / (2.0 * h);
            worst = worst.max((fd - grad[k]).norm() / scale);
        }
        worst
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(Ansatz::log_state_vector(3).unwrap().n_params(), 16);
        assert_eq!(Ansatz::jastrow(lattice(2, 2), None).unwrap().n_params(), 2 * (6 + 4));
        // layers (2, 3), kernel 3: 1*2*9 + (2*3*9 + 3) complex weights
        assert_eq!(Ansatz::conv(lattice(3, 3), vec![2, 3], 3).unwrap().n_params(), 2 * (18 + 57));
        let err = VariationalState::new(Ansatz::log_state_vector(2).unwrap(), vec![0.0; 3]).unwrap_err();
        assert!(matches!(err, Error::ParameterCount { expected: 8, got: 3 }));
    }

    #[test]
    fn log_state_vector_is_definitional() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = VariationalState::random(Ansatz::log_state_vector(3).unwrap(), 1.0, &mut rng).unwrap();
        for k in 0..8u64 {
            let x = SpinConfiguration::from_index(k, 3);
            let th = s.theta();
            assert_eq!(s.log_amplitude(&x), C64::new(th[2 * k as usize], th[2 * k as usize + 1]));
            let g = s.log_gradient(&x);
            for (c, v) in g.iter().enumerate() {
                let expected = if c == 2 * k as usize {
                    C64::new(1.0, 0.0)
                } else if c == 2 * k as usize + 1 {
                    I
                } else {
                    ZERO
                };
                assert_eq!(*v, expected);
            }
        }
    }

    #[test]
    fn jastrow_without_backbone_is_quadratic_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = VariationalState::random(Ansatz::jastrow(lattice(1, 3), None).unwrap(), 1.0, &mut rng).unwrap();
        let th = s.theta();
        let w = |k: usize| C64::new(th[2 * k], th[2 * k + 1]);
        for idx in 0..8 {
            let x = SpinConfiguration::from_index(idx, 3);
            let v: Vec<f64> = x.values().iter().map(|&s| s as f64).collect();
            let expected = w(0) * v[0] * v[1] + w(1) * v[0] * v[2] + w(2) * v[1] * v[2] + w(3) * v[0] + w(4) * v[1] + w(5) * v[2];
            assert!((s.log_amplitude(&x) - expected).norm() < 1e-14);
        }
    }

    #[test]
    fn zero_conv_is_zero_and_zero_jastrow_is_uniform() {
        let s = VariationalState::zeros(Ansatz::conv(lattice(2, 3), vec![2, 2], 3).unwrap()).unwrap();
        for i in 0..64 {
            assert_eq!(s.log_amplitude(&SpinConfiguration::from_index(i, 6)), ZERO);
        }
        let j = VariationalState::zeros(Ansatz::jastrow(lattice(2, 2), Some((vec![1], 3))).unwrap()).unwrap();
        let dense = evaluate_ansatz_dense(&j, 20).unwrap();
        assert!(dense.amplitudes().iter().all(|a| (a - C64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn conv_is_translation_invariant() {
        let lat = lattice(3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = VariationalState::random(Ansatz::conv(lat, vec![3, 2], 3).unwrap(), 0.5, &mut rng).unwrap();
        for idx in [5u64, 1234, 4000] {
            let x = SpinConfiguration::from_index(idx, 12);
            let mut bits = 0u64;
            for site in 0..12 {
                let (r, c) = lat.coords(site);
                let target = lat.site(r + 1, c + 2);
                bits |= x.bit(site) << target;
            }
            let y = SpinConfiguration::from_index(bits, 12);
            let (a, b) = (s.log_amplitude(&x), s.log_amplitude(&y));
            assert!((a - b).norm() < 1e-12 * a.norm().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn conv_is_spin_flip_symmetric() {
        let lat = lattice(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = VariationalState::random(Ansatz::conv(lat, vec![2, 2], 3).unwrap(), 0.5, &mut rng).unwrap();
        for idx in 0..64u64 {
            let x = SpinConfiguration::from_index(idx, 6);
            let y = SpinConfiguration::from_index(idx ^ 63, 6);
            assert!((s.log_amplitude(&x) - s.log_amplitude(&y)).norm() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for ansatz in all_ansatze() {
            for _ in 0..5 {
                let s = VariationalState::random(ansatz.clone(), 0.6, &mut rng).unwrap();
                for idx in 0..20u64 {
                    let x = SpinConfiguration::from_index((idx * 7) % (1 << s.n_sites()), s.n_sites());
                    let err = fd_check(&s, &x);
                    assert!(err < 1e-5, "{} error {err}", ansatz.id());
                }
            }
        }
    }

    #[test]
    fn jacobian_batch_is_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = VariationalState::random(Ansatz::jastrow(lattice(2, 2), Some((vec![2], 3))).unwrap(), 0.3, &mut rng).unwrap();
        let xs: Vec<SpinConfiguration> = (0..16).map(|i| SpinConfiguration::from_index(i, 4)).collect();
        let dense = evaluate_ansatz_dense(&s, 20).unwrap();
        let w = born_distribution(&dense).unwrap();
        let batch = jacobian(&s, &xs, &w).unwrap();
        for c in 0..s.n_params() {
            let m: C64 = batch.centered.column(c).iter().zip(&w).map(|(v, p)| v * *p).sum();
            assert!(m.norm() < 1e-10);
        }
        assert!(jacobian(&s, &xs, &[0.5; 16]).is_err());
    }

    #[test]
    fn diagonal_application_matches_dense() {
        let lat = lattice(2, 3);
        let z = split_diag_offdiag(&build_tfim(&lat, 1.0, 2.0).unwrap()).z_part;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for ansatz in [Ansatz::log_state_vector(6).unwrap(), Ansatz::jastrow(lat, Some((vec![2], 3))).unwrap()] {
            let s = VariationalState::random(ansatz, 0.3, &mut rng).unwrap();
            let alpha = C64::new(0.3, -0.2);
            let dt = 0.07;
            let after = s.apply_diagonal_exact(alpha, &z, dt).unwrap();
            for i in 0..64 {
                let x = SpinConfiguration::from_index(i, 6);
                let expected = s.log_amplitude(&x) + alpha * MINUS_I * dt * z.value(&x);
                assert!((after.log_amplitude(&x) - expected).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn diagonal_application_with_constant_and_fields() {
        let lat = lattice(2, 2);
        let poly = SpinPolynomial {
            constant: C64::new(0.4, 0.1),
            fields: vec![(1, C64::new(-0.3, 0.0))],
            couplings: vec![((0, 3), C64::new(0.2, 0.5)), ((1, 2), C64::new(-1.0, 0.0))],
        };
        let z = DiagonalOperator::from_polynomial(4, &poly).unwrap();
        let s = VariationalState::zeros(Ansatz::jastrow(lat, None).unwrap()).unwrap();
        let after = s.apply_diagonal_exact(C64::new(1.0, 0.0), &z, 0.1).unwrap();
        for i in 0..16 {
            let x = SpinConfiguration::from_index(i, 4);
            assert!((after.log_amplitude(&x) - MINUS_I * 0.1 * z.value(&x)).norm() < 1e-14);
        }
    }

    #[test]
    fn diagonal_application_requires_jastrow_layer() {
        let lat = lattice(2, 2);
        let z = split_diag_offdiag(&build_tfim(&lat, 1.0, 1.0).unwrap()).z_part;
        let s = VariationalState::zeros(Ansatz::conv(lat, vec![1], 3).unwrap()).unwrap();
        assert!(matches!(s.apply_diagonal_exact(C64::new(1.0, 0.0), &z, 0.1), Err(Error::Capability(_))));
        assert_eq!(s.apply_diagonal_exact(ZERO, &z, 0.1).unwrap(), s);
    }

    #[test]
    fn checkpoint_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut s = VariationalState::random(Ansatz::jastrow(lattice(2, 2), Some((vec![2, 1], 3))).unwrap(), 0.1, &mut rng).unwrap();
        s.set_log_offset(C64::new(0.25, -1.5));
        let cp = Checkpoint::from_state(&s);
        let back = Checkpoint::from_json(&cp.to_json().unwrap()).unwrap().into_state().unwrap();
        assert_eq!(back, s);
        let back = Checkpoint::from_bytes(&cp.to_bytes().unwrap()).unwrap().into_state().unwrap();
        assert_eq!(back, s);
        assert!(Checkpoint::from_bytes(b"garbage!").is_err());
    }

    proptest! {
        #[test]
        fn diagonal_shifts_are_additive(a1 in -1.0f64..1.0, a2 in -1.0f64..1.0, b1 in -1.0f64..1.0, b2 in -1.0f64..1.0) {
            let lat = lattice(2, 2);
            let z1 = split_diag_offdiag(&build_tfim(&lat, 1.0, 0.0).unwrap()).z_part;
            let z2 = DiagonalOperator::from_polynomial(4, &SpinPolynomial {
                constant: ZERO,
                fields: vec![(0, C64::new(0.5, 0.0)), (3, C64::new(-0.2, 0.0))],
                couplings: vec![((0, 2), C64::new(0.7, 0.0))],
            }).unwrap();
            let s = VariationalState::zeros(Ansatz::jastrow(lat, None).unwrap()).unwrap();
            let (x1, x2) = (C64::new(a1, b1), C64::new(a2, b2));
            let twice = s.apply_diagonal_exact(x1, &z1, 0.1).unwrap().apply_diagonal_exact(x2, &z1, 0.1).unwrap();
            let once = s.apply_diagonal_exact(x1 + x2, &z1, 0.1).unwrap();
            for (p, q) in twice.theta().iter().zip(once.theta()) {
                prop_assert!((p - q).abs() < 1e-14);
            }
            let ab = s.apply_diagonal_exact(x1, &z1, 0.1).unwrap().apply_diagonal_exact(x2, &z2, 0.1).unwrap();
            let ba = s.apply_diagonal_exact(x2, &z2, 0.1).unwrap().apply_diagonal_exact(x1, &z1, 0.1).unwrap();
            for (p, q) in ab.theta().iter().zip(ba.theta()) {
                prop_assert!((p - q).abs() < 1e-14);
            }
        }
    }
}
