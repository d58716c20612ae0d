use anyhow::{Context, Result};
use ptvmc_core::ansatz::{Checkpoint, VariationalState};
use ptvmc_core::driver::{compress_with, run_quench_with, CompressTarget, QuenchObserver, SubstepDiagnostics, TrajectoryPoint};
use ptvmc_core::estimators::FidelityEstimator;
use ptvmc_core::exact::{evaluate_ansatz_dense, fidelity_exact, ExactEvolver, DEFAULT_DENSE_CUTOFF};
use ptvmc_core::lattice::{SpinConfiguration, StateVector, DEFAULT_EXACT_LIMIT};
use ptvmc_core::operators::{build_tfim, SparseOperator};
use ptvmc_core::sampling::mix_seed;
use ptvmc_core::schemes::{build_plan, verify_order};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::{self, ExactConfig, InitialState, MatchingConfig, QuenchConfig, SchemeCheckConfig};
use crate::output::{num, JsonLines, OutDir};
use crate::{Common, Outcome};

/// Largest lattice for which the benchmark also reports the exact fidelity.
pub const BENCH_EXACT_CAP: usize = 16;

fn tagged(record: &impl serde::Serialize, tags: &[(&str, Value)]) -> Result<Value> {
    let mut value = serde_json::to_value(record)?;
    if let Value::Object(map) = &mut value {
        for (k, v) in tags {
            map.insert((*k).to_string(), v.clone());
        }
    }
    Ok(value)
}

struct QuenchFiles<'a> {
    out: &'a OutDir,
    diagnostics: JsonLines,
}

impl QuenchObserver for QuenchFiles<'_> {
    fn on_point(&mut self, point: &TrajectoryPoint, state: &VariationalState, substeps: &[SubstepDiagnostics]) -> ptvmc_core::Result<Option<String>> {
        let io = |e: anyhow::Error| ptvmc_core::Error::Checkpoint(format!("{e:#}"));
        for sub in substeps {
            let Some(c) = &sub.compress else { continue };
            for r in &c.records {
                let line = tagged(r, &[("step", json!(point.step)), ("substep", json!(sub.index))]).map_err(io)?;
                self.diagnostics.write(&line).map_err(io)?;
            }
        }
        let bytes = Checkpoint::from_state(state).to_bytes()?;
        let name = format!("checkpoints/step_{:05}.ckpt", point.step);
        self.out.write_bytes(&name, &bytes).map_err(io).map(Some)
    }
}

pub fn quench(common: &Common) -> Result<Outcome> {
    let mut cfg: QuenchConfig = config::load(&common.config)?;
    config::apply_overrides_quench(&mut cfg, common);
    cfg.validate()?;
    let out = OutDir::create(&common.out_dir)?;
    out.effective_config(&cfg)?;
    let substeps = build_plan(cfg.scheme.kind, cfg.scheme.order)?.substep_count();

    let mut files = QuenchFiles {
        out: &out,
        diagnostics: out.jsonl("diagnostics.jsonl")?,
    };
    let result = run_quench_with(&cfg, &mut files)?;
    files.diagnostics.finish()?;

    let mut csv = out.csv("trajectory.csv")?;
    let mut header = vec!["t".to_string(), "mx".into(), "mx_err".into()];
    header.extend((1..=substeps).map(|i| format!("infidelity_{i}")));
    header.extend((1..=substeps).map(|i| format!("iterations_{i}")));
    csv.write_record(&header)?;
    for p in &result.record.points {
        let mut row = vec![num(p.time), num(p.mx), num(p.mx_err)];
        let pad = |v: Vec<String>| -> Vec<String> {
            if v.is_empty() {
                vec![String::new(); substeps]
            } else {
                v
            }
        };
        row.extend(pad(p.substep_infidelities.iter().map(|v| num(*v)).collect()));
        row.extend(pad(p.iterations.iter().map(|v| v.to_string()).collect()));
        csv.write_record(&row)?;
    }
    csv.flush()?;
    eprintln!(
        "quench: {} time points, initial-state infidelity {:.3e}",
        result.record.points.len(),
        result.record.initial_infidelity
    );
    Ok(match result.record.error {
        Some(msg) => Outcome::Partial(msg),
        None => Outcome::Complete,
    })
}

fn mean_z(state: &StateVector) -> f64 {
    let n = state.n_sites();
    let total = state.norm_sqr();
    state
        .amplitudes()
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let spins = SpinConfiguration::from_index(i as u64, n).values();
            a.norm_sqr() * spins.iter().map(|s| f64::from(*s)).sum::<f64>() / n as f64
        })
        .sum::<f64>()
        / total
}

pub fn exact(common: &Common) -> Result<Outcome> {
    let cfg: ExactConfig = config::load(&common.config)?;
    cfg.validate()?;
    cfg.lattice.check_exact(DEFAULT_EXACT_LIMIT)?;
    let out = OutDir::create(&common.out_dir)?;
    out.effective_config(&cfg)?;
    let n = cfg.lattice.n_sites();
    let h = build_tfim(&cfg.lattice, cfg.coupling, cfg.h_final)?;
    let evolver = ExactEvolver::new(&h, DEFAULT_EXACT_LIMIT, DEFAULT_DENSE_CUTOFF)?;
    let initial = match cfg.initial {
        InitialState::XPolarized => StateVector::uniform(n),
        InitialState::ZPolarized => StateVector::basis(n, 0),
    };
    let mx_op = SparseOperator::magnetization_x(n);
    let steps = (cfg.t_final / cfg.dt).round() as usize;
    let mut csv = out.csv("exact.csv")?;
    csv.write_record(["t", "mx", "fidelity_vs_initial", "mz"])?;
    for k in 0..=steps {
        let t = k as f64 * cfg.dt;
        let psi = evolver.evolve(&initial, t)?;
        let mx = psi.inner(&mx_op.apply(&psi)?).re / psi.norm_sqr();
        let fid = fidelity_exact(&initial, &psi)?;
        csv.write_record([num(t), num(mx), num(fid), num(mean_z(&psi))])?;
    }
    csv.flush()?;
    Ok(Outcome::Complete)
}

pub fn scheme_check(common: &Common) -> Result<Outcome> {
    let cfg: SchemeCheckConfig = config::load(&common.config)?;
    cfg.validate()?;
    let out = OutDir::create(&common.out_dir)?;
    out.effective_config(&cfg)?;
    let h = build_tfim(&cfg.lattice, cfg.coupling, cfg.h_final)?;
    let mut csv = out.csv("scheme_check.csv")?;
    csv.write_record(["scheme", "order", "dt", "l2_error", "slope"])?;
    for id in &cfg.schemes {
        let plan = build_plan(id.kind, id.order)?;
        let report = verify_order(&plan, &h, cfg.t_final, &cfg.dt_grid).with_context(|| format!("order check for {id}"))?;
        let slope = report.slope.map(num).unwrap_or_default();
        for (dt, err) in report.dts.iter().zip(&report.errors) {
            csv.write_record([id.to_string(), id.order.to_string(), num(*dt), num(*err), slope.clone()])?;
        }
        eprintln!("{id}: slope {}", report.slope.map_or("n/a".to_string(), |s| format!("{s:.3}")));
    }
    csv.flush()?;
    Ok(Outcome::Complete)
}

/// Random target and a start point offset from it by `perturbation`.
fn matching_states(cfg: &MatchingConfig) -> Result<(VariationalState, VariationalState)> {
    let ansatz = cfg.ansatz.build(&cfg.lattice)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0));
    let target = VariationalState::random(ansatz.clone(), cfg.target_scale, &mut rng)?;
    let noise = VariationalState::random(ansatz, cfg.perturbation, &mut rng)?;
    let start = target.shifted(noise.theta())?;
    Ok((target, start))
}

fn load_matching(common: &Common) -> Result<(MatchingConfig, OutDir)> {
    let mut cfg: MatchingConfig = config::load(&common.config)?;
    cfg.apply_overrides(common);
    cfg.validate()?;
    let out = OutDir::create(&common.out_dir)?;
    out.effective_config(&cfg)?;
    Ok((cfg, out))
}

fn dense_fidelity(a: &VariationalState, b: &StateVector) -> ptvmc_core::Result<f64> {
    fidelity_exact(&evaluate_ansatz_dense(a, DEFAULT_EXACT_LIMIT)?, b)
}

pub fn estimator_bench(common: &Common) -> Result<Outcome> {
    let (cfg, out) = load_matching(common)?;
    let (target, start) = matching_states(&cfg)?;
    let with_exact = cfg.lattice.n_sites() <= BENCH_EXACT_CAP;
    let target_dense = if with_exact {
        Some(evaluate_ansatz_dense(&target, DEFAULT_EXACT_LIMIT)?)
    } else {
        None
    };
    let c = cfg.compress.estimators.control_variate;

    let mut csv = out.csv("estimators.csv")?;
    let mut header = vec!["iteration", "estimator", "value", "variance"];
    if with_exact {
        header.push("exact");
    }
    csv.write_record(&header)?;

    let phi = CompressTarget {
        phi: &target,
        v_op: None,
        u_op: None,
    };
    let mut rows = Vec::new();
    let result = compress_with(&start, phi, &cfg.compress, mix_seed(cfg.seed, 1), &mut |it, state, eval| {
        let exact = match &target_dense {
            Some(t) => Some(num(dense_fidelity(state, t)?)),
            None => None,
        };
        for kind in FidelityEstimator::ALL {
            let r = eval.estimate(kind, c);
            let mut row = vec![it.to_string(), kind.name().to_string(), num(r.value), num(r.variance)];
            row.extend(exact.clone());
            rows.push(row);
        }
        Ok(())
    });
    for row in &rows {
        csv.write_record(row)?;
    }
    csv.flush()?;
    finish_matching(&out, result)
}

fn finish_matching(out: &OutDir, result: ptvmc_core::Result<(VariationalState, ptvmc_core::driver::CompressDiagnostics)>) -> Result<Outcome> {
    match result {
        Ok((state, diag)) => {
            let mut jsonl = out.jsonl("diagnostics.jsonl")?;
            for r in &diag.records {
                jsonl.write(r)?;
            }
            jsonl.finish()?;
            out.write_bytes("final.ckpt", &Checkpoint::from_state(&state).to_bytes()?)?;
            eprintln!("best infidelity {:.3e} after {} iterations", diag.best_infidelity, diag.iterations);
            Ok(Outcome::Complete)
        }
        Err(e) => Ok(Outcome::Partial(e.to_string())),
    }
}

pub fn compress(common: &Common) -> Result<Outcome> {
    let (cfg, out) = load_matching(common)?;
    let (target, start) = matching_states(&cfg)?;
    let with_exact = cfg.lattice.n_sites() <= BENCH_EXACT_CAP;
    let target_dense = if with_exact {
        Some(evaluate_ansatz_dense(&target, DEFAULT_EXACT_LIMIT)?)
    } else {
        None
    };
    let est = cfg.compress.estimators;
    let mut csv = out.csv("compress.csv")?;
    let mut header = vec!["iteration", "infidelity"];
    if with_exact {
        header.push("exact_infidelity");
    }
    csv.write_record(&header)?;
    let phi = CompressTarget {
        phi: &target,
        v_op: None,
        u_op: None,
    };
    let mut rows = Vec::new();
    let result = compress_with(&start, phi, &cfg.compress, mix_seed(cfg.seed, 1), &mut |it, state, eval| {
        let mut row = vec![it.to_string(), num(1.0 - eval.estimate(est.fidelity, est.control_variate).value)];
        if let Some(t) = &target_dense {
            row.push(num(1.0 - dense_fidelity(state, t)?));
        }
        rows.push(row);
        Ok(())
    });
    for row in &rows {
        csv.write_record(row)?;
    }
    csv.flush()?;
    finish_matching(&out, result)
}
