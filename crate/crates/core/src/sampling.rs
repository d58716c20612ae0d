//! Metropolis sampling of Born distributions and full-summation sample sets.

use std::collections::HashMap;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ansatz::VariationalState;
use crate::error::{Error, Result};
use crate::lattice::SpinConfiguration;
use crate::operators::SparseOperator;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Proposal {
    #[default]
    SingleFlip,
    /// Swaps two sites with opposite spins; conserves magnetization.
    Exchange,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_chains: usize,
    pub n_samples_per_chain: usize,
    /// Sweeps discarded at the start of every chain.
    pub burn_in: usize,
    /// Sweeps between kept samples.
    pub thinning: usize,
    pub proposal: Proposal,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_chains: 16,
            n_samples_per_chain: 128,
            burn_in: 100,
            thinning: 1,
            proposal: Proposal::SingleFlip,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 || self.n_samples_per_chain == 0 || self.thinning == 0 {
            return Err(Error::InvalidSampler(
                "n_chains, n_samples_per_chain and thinning must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.n_chains * self.n_samples_per_chain
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Mcmc,
    FullSummation,
}

/// Configurations with probability weights and the log-amplitudes of the
/// state they were drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub configs: Vec<SpinConfiguration>,
    pub weights: Vec<f64>,
    pub provenance: Provenance,
    /// `log psi(x)` of the source state at every configuration.
    pub source_log_amplitudes: Vec<C64>,
    /// Number of chains; samples are ordered chain by chain.
    pub n_chains: usize,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }
}

/// Log-amplitudes at many configurations, evaluated in parallel in a fixed order.
pub fn log_amplitudes(vstate: &VariationalState, configs: &[SpinConfiguration]) -> Vec<C64> {
    configs.par_iter().map(|x| vstate.log_amplitude(x)).collect()
}

/// SplitMix64 finalizer, used to derive independent seeds from one master seed.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const MAX_START_ATTEMPTS: usize = 100;

struct Chain<'a> {
    state: &'a VariationalState,
    cache: HashMap<u64, C64>,
    rng: ChaCha8Rng,
    current: SpinConfiguration,
    current_log: C64,
    proposal: Proposal,
}

impl<'a> Chain<'a> {
    fn log_amp(&mut self, x: SpinConfiguration) -> C64 {
        let state = self.state;
        *self.cache.entry(x.index()).or_insert_with(|| state.log_amplitude(&x))
    }

    /// `n_sites` proposals. Each proposal keeps the configuration with
    /// probability `1/(n_sites+1)`, which makes the chain aperiodic even when
    /// every move is accepted (for example on a uniform state, where plain
    /// single flips would preserve the parity of a sweep).
    fn sweep(&mut self) {
        let n = self.state.n_sites();
        for _ in 0..n {
            let i = self.rng.random_range(0..=n);
            if i == n {
                continue;
            }
            let proposal = match self.proposal {
                Proposal::SingleFlip => Some(self.current.flipped(i)),
                Proposal::Exchange => {
                    let j = self.rng.random_range(0..n);
                    (self.current.bit(i) != self.current.bit(j))
                        .then(|| self.current.flipped(i).flipped(j))
                }
            };
            let Some(next) = proposal else {
                continue;
            };
            let next_log = self.log_amp(next);
            let log_ratio = 2.0 * (next_log.re - self.current_log.re);
            let u: f64 = self.rng.random();
            if log_ratio >= 0.0 || u.ln() < log_ratio {
                self.current = next;
                self.current_log = next_log;
            }
        }
    }
}

/// Metropolis sampling of `|psi|^2`; chain `c` uses stream `c` of a ChaCha8
/// generator keyed by the configured seed.
pub fn sample(vstate: &VariationalState, cfg: &SamplerConfig) -> Result<SampleSet> {
    cfg.validate()?;
    let n = vstate.n_sites();
    let chains: Vec<Result<Vec<(SpinConfiguration, C64)>>> = (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(c as u64);
            let mut chain = Chain {
                state: vstate,
                cache: HashMap::new(),
                rng,
                current: SpinConfiguration::all_up(n),
                current_log: C64::new(0.0, 0.0),
                proposal: cfg.proposal,
            };
            let mut started = false;
            for _ in 0..MAX_START_ATTEMPTS {
                let bits = if n == 64 {
                    chain.rng.random::<u64>()
                } else {
                    chain.rng.random::<u64>() & ((1u64 << n) - 1)
                };
                let x = SpinConfiguration::from_index(bits, n);
                let l = chain.log_amp(x);
                if l.re.is_finite() {
                    chain.current = x;
                    chain.current_log = l;
                    started = true;
                    break;
                }
            }
            if !started {
                return Err(Error::SamplerStart(MAX_START_ATTEMPTS));
            }
            for _ in 0..cfg.burn_in {
                chain.sweep();
            }
            let mut out = Vec::with_capacity(cfg.n_samples_per_chain);
            for _ in 0..cfg.n_samples_per_chain {
                for _ in 0..cfg.thinning {
                    chain.sweep();
                }
                out.push((chain.current, chain.current_log));
            }
            Ok(out)
        })
        .collect();
    let total = cfg.n_samples();
    let mut configs = Vec::with_capacity(total);
    let mut logs = Vec::with_capacity(total);
    for chain in chains {
        for (x, l) in chain? {
            configs.push(x);
            logs.push(l);
        }
    }
    Ok(SampleSet {
        configs,
        weights: vec![1.0 / total as f64; total],
        provenance: Provenance::Mcmc,
        source_log_amplitudes: logs,
        n_chains: cfg.n_chains,
    })
}

/// Every basis configuration with its exact Born weight.
pub fn full_summation(vstate: &VariationalState, limit: usize) -> Result<SampleSet> {
    let n = vstate.n_sites();
    if n > limit {
        return Err(Error::ExactBackendSize { n_sites: n, limit });
    }
    let configs: Vec<SpinConfiguration> = (0..1u64 << n)
        .map(|i| SpinConfiguration::from_index(i, n))
        .collect();
    let logs = log_amplitudes(vstate, &configs);
    let shift = logs.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return Err(Error::ZeroNorm);
    }
    let raw: Vec<f64> = logs.iter().map(|l| (2.0 * (l.re - shift)).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(SampleSet {
        configs,
        weights: raw.iter().map(|w| w / total).collect(),
        provenance: Provenance::FullSummation,
        source_log_amplitudes: logs,
        n_chains: 1,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObservableEstimate {
    pub mean: C64,
    pub stderr: f64,
}

/// Local estimator `O_loc(x) = sum_x' <x|O|x'> psi(x')/psi(x)` averaged over
/// the samples. The standard error uses batch means over chains, or ten
/// contiguous batches for a single chain, and is zero in full summation.
pub fn estimate_observable(vstate: &VariationalState, op: &SparseOperator, samples: &SampleSet) -> Result<ObservableEstimate> {
    let locals: Vec<C64> = samples
        .configs
        .par_iter()
        .zip(samples.source_log_amplitudes.par_iter())
        .map(|(x, lx)| {
            let mut buf = Vec::with_capacity(op.max_connected());
            op.connected_into(x, &mut buf);
            buf.iter()
                .map(|(xp, v)| {
                    if xp == x {
                        *v
                    } else {
                        v * (vstate.log_amplitude(xp) - lx).exp()
                    }
                })
                .sum()
        })
        .collect();
    if let Some(bad) = locals.iter().position(|l| !(l.re.is_finite() && l.im.is_finite())) {
        return Err(Error::ZeroAmplitude(samples.configs[bad].index()));
    }
    let mean: C64 = locals.iter().zip(&samples.weights).map(|(l, w)| l * *w).sum();
    let stderr = match samples.provenance {
        Provenance::FullSummation => 0.0,
        Provenance::Mcmc => {
            let n = locals.len();
            let batches = if samples.n_chains > 1 { samples.n_chains } else { 10.min(n) };
            let size = n / batches;
            if batches < 2 || size == 0 {
                0.0
            } else {
                let means: Vec<f64> = (0..batches)
                    .map(|b| locals[b * size..(b + 1) * size].iter().map(|l| l.re).sum::<f64>() / size as f64)
                    .collect();
                let m = means.iter().sum::<f64>() / batches as f64;
                let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
                (var / batches as f64).sqrt()
            }
        }
    };
    Ok(ObservableEstimate { mean, stderr })
}
