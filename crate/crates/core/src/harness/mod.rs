//! Experiment runner: configuration, Monte Carlo batches, metrics and the
//! invariant checks behind `cogbeam check`.

pub mod config;
pub mod experiment;

pub use config::{parse_config, Algo, ExperimentConfig, Sweep, SweepParam, REFERENCE_CONFIG};
pub use experiment::{run_experiment, verify_manifest, ExperimentOutput, RunRecord, SweepPoint};

use crate::bca::{run_centralized, run_distributed, StopRule};
use crate::error::{Error, Result};
use crate::lmi::{assemble, RobustConstraintSpec, SubproblemMode, SubproblemSpec};
use crate::matrix::hermitian_sqrt;
use crate::mse::{gradient_d, link_covariances, mse_matrix, utility};
use crate::scenario::{derive_seed, generate};
use crate::sdp::{check_certificate, solve, SolverOptions};

/// Right-continuous empirical CDF: each sorted value paired with the
/// fraction of samples `≤` it.
pub fn empirical_cdf(values: &[f64]) -> Result<Vec<(f64, f64)>> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    let mut out = Vec::with_capacity(v.len());
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j + 1 < v.len() && v[j + 1] == v[i] {
            j += 1;
        }
        for x in &v[i..=j] {
            out.push((*x, (j + 1) as f64 / n));
        }
        i = j + 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub run: usize,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricTable {
    pub rows: Vec<MetricRow>,
    /// Named CDF summaries.
    pub cdfs: Vec<(String, Vec<(f64, f64)>)>,
}

impl MetricTable {
    pub fn values(&self, metric: &str) -> Vec<f64> {
        self.rows.iter().filter(|r| r.metric == metric).map(|r| r.value).collect()
    }

    pub fn cdf(&self, name: &str) -> Option<&[(f64, f64)]> {
        self.cdfs.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        name: name.to_string(),
        passed,
        detail,
    }
}

/// Invariant and certificate checks on `fixtures` instances drawn from the
/// configured network, plus MANIFEST verification when `cfg.out_dir` holds
/// one.
pub fn run_checks(cfg: &ExperimentConfig, fixtures: usize) -> Result<Vec<CheckOutcome>> {
    let base = cfg.effective_network()?;
    let opts = experiment::bca_options(cfg, base.links);
    let mut worst_decrease: f64 = 0.0;
    let mut worst_power: f64 = f64::NEG_INFINITY;
    let mut worst_ratio: f64 = 0.0;
    let mut worst_identity: f64 = 0.0;
    let mut worst_dist: f64 = 0.0;
    let mut counts_ok = true;
    let mut cert_worst: f64 = 0.0;
    let mut cert_failures = Vec::new();
    for i in 0..fixtures {
        let mut net = base.clone();
        net.seed = derive_seed(cfg.seed, i as u64);
        let ch = generate(&net)?;
        let budgets = net.equal_split_budgets();
        let (prof, trace) = run_centralized(&ch, &budgets, &opts)?;
        worst_decrease = worst_decrease.max(trace.max_decrease());
        for u in &trace.updates {
            worst_power = worst_power.max(u.trace_q - ch.p_max[u.link]);
            worst_ratio = worst_ratio.max(u.worst_case_ratio);
        }
        let rep = utility(&ch, &prof)?;
        for k in 0..ch.links() {
            let e = mse_matrix(&ch, &prof, k)?;
            let m = ch.tx_antennas(k) as f64;
            worst_identity = worst_identity.max((e.trace_re() - (m - rep.u[k])).abs());
        }
        let dopts = crate::bca::BcaOptions {
            stop_rule: Some(StopRule::SumUtility),
            ..opts.clone()
        };
        let (dprof, dtrace, log) = run_distributed(&ch, &budgets, &dopts)?;
        for k in 0..ch.links() {
            worst_dist = worst_dist.max((dprof.q[k].as_matrix() - prof.q[k].as_matrix()).norm());
        }
        let k = ch.links();
        counts_ok &= (1..=dtrace.cycle_count()).all(|c| log.pair_exchanges(c) == k * (k - 1));

        // certificate of the link-0 subproblem at the final profile
        let spec = SubproblemSpec {
            k: 0,
            mode: SubproblemMode::Plain,
            d: Some(gradient_d(&ch, &prof.q, 0, 0.0)?),
            h_kk: Some(ch.h[0][0].clone()),
            r_half: Some(hermitian_sqrt(&link_covariances(&ch, &prof.q, 0).0)?),
            p_max: ch.p_max[0],
            robust: (0..ch.num_pu())
                .map(|pu| RobustConstraintSpec {
                    g_hat: ch.g_hat[pu][0].clone(),
                    eps: ch.eps[pu][0],
                    iota: budgets[pu][0],
                })
                .collect(),
            prev_q: None,
            tau: None,
        };
        let asm = assemble(&spec)?;
        let sol = solve(&asm.sdp, &SolverOptions::default())?;
        match check_certificate(&asm.sdp, &sol, 1e-8) {
            Ok(r) => cert_worst = cert_worst.max(r.gap.max(r.primal_infeas).max(r.dual_infeas)),
            Err(e) => cert_failures.push(format!("fixture {i}: {e}")),
        }
    }
    let mut out = vec![
        outcome(
            "monotone ascent",
            worst_decrease <= 1e-8,
            format!("largest per-cycle decrease {worst_decrease:e}"),
        ),
        outcome(
            "power cap after every update",
            worst_power <= 1e-7,
            format!("largest Tr(Q) - p_max {worst_power:e}"),
        ),
        outcome(
            "worst-case interference after every update",
            worst_ratio <= 1.0 + 1e-6,
            format!("largest worst case / limit {worst_ratio:.9}"),
        ),
        outcome(
            "receiver identity Tr E = M - u",
            worst_identity <= 1e-9,
            format!("largest deviation {worst_identity:e}"),
        ),
        outcome(
            "distributed run matches centralized",
            worst_dist <= 1e-9 && counts_ok,
            format!("largest Frobenius difference {worst_dist:e}, message counts ok: {counts_ok}"),
        ),
        outcome(
            "subproblem certificates",
            cert_failures.is_empty(),
            if cert_failures.is_empty() {
                format!("largest residual {cert_worst:e}")
            } else {
                cert_failures.join("; ")
            },
        ),
    ];
    if cfg.out_dir.join("MANIFEST").exists() {
        let v = verify_manifest(&cfg.out_dir)?;
        let bad: Vec<&str> = v.iter().filter(|(_, ok)| !ok).map(|(f, _)| f.as_str()).collect();
        out.push(outcome(
            "manifest hashes",
            bad.is_empty(),
            if bad.is_empty() {
                format!("{} files verified", v.len())
            } else {
                format!("mismatch: {}", bad.join(", "))
            },
        ));
    }
    Ok(out)
}
