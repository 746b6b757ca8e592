//! Primal decomposition of an aggregate interference budget.
//!
//! A cluster head owns, per primary user, a budget vector `ι` on the simplex
//! `{ι ≥ 0, Σ ι_k ≤ ι^max}`. After each BCA cycle in budgeted mode every link
//! reports the multiplier `λ_k` of its `t_k ≤ ι_k` constraint and the head
//! takes a projected subgradient step.

use crate::bca::{BcaOptions, BudgetDuals, Engine, IterationTrace, MessageKind, MessageLog};
use crate::error::{Error, Result};
use crate::mse::CovarianceProfile;
use crate::scenario::ChannelSet;

/// Euclidean projection onto `{x ≥ 0, Σ x ≤ iota_max}`.
pub fn project_simplex(v: &[f64], iota_max: f64) -> Vec<f64> {
    let clamp: Vec<f64> = v.iter().map(|&x| x.max(0.0)).collect();
    if clamp.iter().sum::<f64>() <= iota_max {
        return clamp;
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut nu = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        cum += s;
        let cand = (cum - iota_max) / (i + 1) as f64;
        if s - cand > 0.0 {
            nu = cand;
        } else {
            break;
        }
    }
    v.iter().map(|&x| (x - nu).max(0.0)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetState {
    pub iota: Vec<f64>,
    pub lambda: Vec<f64>,
    pub ell: usize,
    pub step: f64,
    pub iota_max: f64,
}

impl BudgetState {
    /// Equal split `ι_k = ι^max / K`.
    pub fn equal(links: usize, iota_max: f64) -> Self {
        BudgetState {
            iota: vec![iota_max / links as f64; links],
            lambda: vec![0.0; links],
            ell: 0,
            step: 0.0,
            iota_max,
        }
    }

    pub fn total(&self) -> f64 {
        self.iota.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MasterOptions {
    /// Initial step `s₀`; `None` means `ι^max / 10`.
    pub s0: Option<f64>,
    /// Step along `λ/‖λ‖` instead of `λ`.
    pub normalize: bool,
    /// Lower bound on every budget as a fraction of `ι^max / K`.
    pub floor_frac: f64,
}

impl Default for MasterOptions {
    fn default() -> Self {
        MasterOptions {
            s0: None,
            normalize: true,
            floor_frac: 1e-7,
        }
    }
}

/// `ι ← Proj[ι + s(ℓ) λ]` with `s(ℓ) = s₀/√ℓ`.
pub fn master_step(state: &BudgetState, lambdas: &[f64], opts: &MasterOptions) -> BudgetState {
    let k = state.iota.len();
    let ell = state.ell + 1;
    let s0 = opts.s0.unwrap_or(state.iota_max / 10.0);
    let step = s0 / (ell as f64).sqrt();
    let lam: Vec<f64> = lambdas.iter().map(|&l| l.max(0.0)).collect();
    let norm = lam.iter().map(|l| l * l).sum::<f64>().sqrt();
    let scale = if opts.normalize {
        if norm > 0.0 {
            step / norm
        } else {
            0.0
        }
    } else {
        step
    };
    let floor = opts.floor_frac * state.iota_max / k as f64;
    let shifted: Vec<f64> = state.iota.iter().zip(&lam).map(|(i, l)| i + scale * l - floor).collect();
    let iota = if scale == 0.0 {
        state.iota.clone()
    } else {
        project_simplex(&shifted, state.iota_max - k as f64 * floor)
            .into_iter()
            .map(|x| x + floor)
            .collect()
    };
    BudgetState {
        iota,
        lambda: lam,
        ell,
        step,
        iota_max: state.iota_max,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocatorOptions {
    pub bca: BcaOptions,
    pub master: MasterOptions,
    pub max_master: usize,
    /// Consecutive all-zero multiplier rounds before flagging a collapse.
    pub max_stall: usize,
    /// Run the inner BCA to convergence instead of one cycle per master step.
    pub inner_to_convergence: bool,
}

impl AllocatorOptions {
    pub fn new(links: usize) -> Self {
        AllocatorOptions {
            bca: BcaOptions::new(links),
            master: MasterOptions::default(),
            max_master: 100,
            max_stall: 5,
            inner_to_convergence: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetRecord {
    pub master_iter: usize,
    pub pu: usize,
    pub link: usize,
    pub iota: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDecompositionResult {
    pub profile: CovarianceProfile,
    /// One budget state per primary user.
    pub states: Vec<BudgetState>,
    pub trace: IterationTrace,
    /// Budgets in force during each master iteration, with the multipliers
    /// they produced.
    pub history: Vec<BudgetRecord>,
    /// `[pu][k]` budgets used by the last inner cycle.
    pub applied: Vec<Vec<f64>>,
    /// `[master][pu]` sum of worst-case interference after each inner solve.
    pub aggregate_worst_case: Vec<Vec<f64>>,
    pub messages: MessageLog,
    pub converged: bool,
    /// All multipliers stayed zero for `max_stall` rounds without convergence.
    pub collapsed: bool,
}

fn floored_start(links: usize, iota_max: f64, opts: &MasterOptions) -> BudgetState {
    let mut s = BudgetState::equal(links, iota_max);
    let floor = opts.floor_frac * iota_max / links as f64;
    for x in &mut s.iota {
        *x = x.max(floor);
    }
    s
}

/// Algorithm with a cluster head: equal split start, one budgeted BCA cycle
/// per master step, stop when every link utility changes by less than `υ`.
pub fn run_primal_decomposition(ch: &ChannelSet, iota_max: f64, opts: &AllocatorOptions) -> Result<PrimalDecompositionResult> {
    if !(iota_max > 0.0) {
        return Err(Error::InvalidConfig(format!("iota_max > 0 required, got {iota_max}")));
    }
    let links = ch.links();
    let mut states: Vec<BudgetState> = (0..ch.num_pu()).map(|_| floored_start(links, iota_max, &opts.master)).collect();
    let budgets = |states: &[BudgetState]| states.iter().map(|s| s.iota.clone()).collect::<Vec<_>>();
    let mut eng = Engine::new(ch, opts.bca.clone(), &budgets(&states))?;
    let mut history = Vec::new();
    let mut aggregate = Vec::new();
    let mut messages = MessageLog::default();
    let mut converged = false;
    let mut collapsed = false;
    let mut stall = 0;
    let mut cycle = 0;
    let mut applied = budgets(&states);
    for master in 1..=opts.max_master {
        applied = budgets(&states);
        let before: Vec<f64> = eng.trace.cycles.last().map(|c| c.u.clone()).unwrap_or_default();
        let mut duals: BudgetDuals;
        loop {
            cycle += 1;
            let prev = eng.trace.cycles.last().map(|c| c.sum_utility).unwrap_or(f64::NEG_INFINITY);
            duals = eng.central_cycle(cycle, &applied, true)?;
            let now = eng.trace.cycles.last().unwrap().sum_utility;
            if !opts.inner_to_convergence || now - prev < opts.bca.upsilon || cycle >= opts.max_master * opts.bca.max_cycles {
                break;
            }
        }
        let last = eng.trace.cycles.last().unwrap();
        aggregate.push(last.worst_case.iter().map(|row| row.iter().sum::<f64>()).collect::<Vec<f64>>());
        for (pu, st) in states.iter().enumerate() {
            for k in 0..links {
                history.push(BudgetRecord {
                    master_iter: master,
                    pu,
                    link: k,
                    iota: st.iota[k],
                    lambda: duals.lambda[pu][k],
                });
                messages.push_scalar(cycle, Some(k), None, MessageKind::Lambda);
            }
        }
        if !before.is_empty() && last.u.iter().zip(&before).all(|(a, b)| (a - b).abs() < opts.bca.upsilon) {
            converged = true;
            break;
        }
        let all_zero = duals.lambda.iter().flatten().all(|&l| l * iota_max < 1e-12);
        if all_zero {
            stall += 1;
            if stall >= opts.max_stall {
                collapsed = true;
            }
        } else {
            stall = 0;
        }
        for (pu, st) in states.iter_mut().enumerate() {
            *st = master_step(st, &duals.lambda[pu], &opts.master);
            for k in 0..links {
                messages.push_scalar(cycle, None, Some(k), MessageKind::Iota);
            }
        }
    }
    let (profile, trace) = eng.finish()?;
    Ok(PrimalDecompositionResult {
        profile,
        states,
        trace,
        history,
        applied,
        aggregate_worst_case: aggregate,
        messages,
        converged,
        collapsed,
    })
}
