//! Block coordinate ascent over the links.
//!
//! Each cycle visits the links in ascending order. Link `k` linearizes the
//! other links' utilities at the current profile (gradient `D_k`), solves its
//! convex subproblem and replaces `Q_k` immediately, so later links in the same
//! cycle see the new value.
//!
//! [`run_distributed`] produces the same iterates through a node model: the
//! gradient is assembled from `(B_j, V_j)` pairs broadcast by the other
//! receivers, and the local interference covariance is "measured" at the
//! node's own receiver. Every exchanged matrix is logged.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::lmi::{solve_subproblem, RobustConstraintSpec, SubproblemMode, SubproblemSolution, SubproblemSpec};
use crate::matrix::{complex_gaussian, hermitian_sqrt, singular_values, ComplexMatrix, HermitianMatrix};
use crate::mse::{
    gradient_term, is_neighbor, link_covariances, link_utility, optimal_receiver, sum_gradient, utility,
    worst_case_interference, CovarianceProfile,
};
use crate::scenario::ChannelSet;
use crate::sdp::SolverOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcaMode {
    Plain,
    Proximal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    GaussSeidel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopRule {
    /// Sum-utility increase below `υ`.
    SumUtility,
    /// Every `|Δu_k|` below `υ`.
    PerLink,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcaOptions {
    pub mode: BcaMode,
    /// Proximal weights `τ_k`, one per link.
    pub tau: Vec<f64>,
    pub upsilon: f64,
    pub max_cycles: usize,
    pub schedule: Schedule,
    /// Squared-Frobenius gain floor for a cross link to enter `D_k`.
    pub neighbor_threshold: f64,
    /// Overrides the run's native stopping test.
    pub stop_rule: Option<StopRule>,
    pub solver: SolverOptions,
    /// Standard deviation of additive Hermitian noise on the locally measured
    /// covariances of the distributed run, with its seed. Off by default.
    pub measurement_noise: Option<(f64, u64)>,
    /// Evaluate the stationarity residual after every cycle.
    pub track_stationarity: bool,
}

impl BcaOptions {
    pub fn new(links: usize) -> Self {
        BcaOptions {
            mode: BcaMode::Plain,
            tau: vec![0.1; links],
            upsilon: 1e-5,
            max_cycles: 100,
            schedule: Schedule::GaussSeidel,
            neighbor_threshold: 0.0,
            stop_rule: None,
            solver: SolverOptions {
                tol_gap: 1e-10,
                tol_feas: 1e-10,
                ..SolverOptions::default()
            },
            measurement_noise: None,
            track_stationarity: false,
        }
    }

    pub fn proximal(links: usize, tau: f64) -> Self {
        BcaOptions {
            mode: BcaMode::Proximal,
            tau: vec![tau; links],
            ..Self::new(links)
        }
    }

    pub fn validate(&self, links: usize) -> Result<()> {
        if !(self.upsilon > 0.0) {
            return Err(Error::InvalidConfig(format!("upsilon must be > 0, got {}", self.upsilon)));
        }
        if self.mode == BcaMode::Proximal && (self.tau.len() != links || self.tau.iter().any(|&t| !(t > 0.0))) {
            return Err(Error::InvalidConfig("proximal mode needs tau > 0 for every link".into()));
        }
        Ok(())
    }
}

/// One single-link update.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRecord {
    pub cycle: usize,
    pub link: usize,
    pub utility_before: f64,
    pub utility_after: f64,
    /// Linearized objective at the new point, shifted so that it equals
    /// `utility_before` at the old point.
    pub surrogate_after: f64,
    pub trace_q: f64,
    /// Largest worst-case interference over the link's limits, as a ratio.
    pub worst_case_ratio: f64,
    pub step_norm: f64,
    pub solver_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub cycle: usize,
    pub sum_utility: f64,
    pub u: Vec<f64>,
    pub sum_mse: f64,
    /// `[pu][k]` interference through the estimate.
    pub nominal: Vec<Vec<f64>>,
    /// `[pu][k]` worst case over the uncertainty ball.
    pub worst_case: Vec<Vec<f64>>,
    pub stationarity: Option<f64>,
    pub max_step: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IterationTrace {
    /// Entry 0 is the all-zero starting profile.
    pub cycles: Vec<CycleRecord>,
    pub updates: Vec<UpdateRecord>,
    pub converged: bool,
}

impl IterationTrace {
    pub fn sum_utilities(&self) -> Vec<f64> {
        self.cycles.iter().map(|c| c.sum_utility).collect()
    }

    /// Number of completed cycles (the initial record excluded).
    pub fn cycle_count(&self) -> usize {
        self.cycles.len().saturating_sub(1)
    }

    /// Largest drop of the sum utility between consecutive cycles (0 when
    /// the sequence is nondecreasing).
    pub fn max_decrease(&self) -> f64 {
        self.cycles
            .windows(2)
            .map(|w| w[0].sum_utility - w[1].sum_utility)
            .fold(0.0, f64::max)
    }

    /// CSV with one row per cycle. Columns: `cycle,sum_utility,sum_mse,
    /// stationarity,max_step,wall_time_s`, then `u_<k>` per link, then
    /// `nominal_<pu>_<k>` and `worst_case_<pu>_<k>`. Missing stationarity
    /// values are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cycle,sum_utility,sum_mse,stationarity,max_step,wall_time_s");
        if let Some(first) = self.cycles.first() {
            for k in 0..first.u.len() {
                let _ = write!(out, ",u_{k}");
            }
            for prefix in ["nominal", "worst_case"] {
                for (pu, row) in first.nominal.iter().enumerate() {
                    for k in 0..row.len() {
                        let _ = write!(out, ",{prefix}_{pu}_{k}");
                    }
                }
            }
        }
        out.push('\n');
        for c in &self.cycles {
            let st = c.stationarity.map(|s| format!("{s:e}")).unwrap_or_default();
            let _ = write!(
                out,
                "{},{:.12e},{:.12e},{},{:e},{:.6}",
                c.cycle, c.sum_utility, c.sum_mse, st, c.max_step, c.wall_time_s
            );
            for v in c.u.iter().chain(c.nominal.iter().flatten()).chain(c.worst_case.iter().flatten()) {
                let _ = write!(out, ",{v:e}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageKind {
    /// `B_j`, received covariance of receiver `j`.
    B,
    /// `V_j`, desired-signal covariance of receiver `j`.
    V,
    /// Cross channel `H_jk` acquired by transmitter `k`.
    Channel,
    /// Budget multiplier sent to the cluster head.
    Lambda,
    /// Budget sent back by the cluster head.
    Iota,
}

impl MessageKind {
    fn name(self) -> &'static str {
        match self {
            MessageKind::B => "B",
            MessageKind::V => "V",
            MessageKind::Channel => "H",
            MessageKind::Lambda => "lambda",
            MessageKind::Iota => "iota",
        }
    }
}

/// Sender or receiver of a message; the cluster head is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageRecord {
    pub cycle: usize,
    pub from: Option<usize>,
    pub to: Option<usize>,
    pub kind: MessageKind,
    pub rows: usize,
    pub cols: usize,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MessageLog {
    pub messages: Vec<MessageRecord>,
}

impl MessageLog {
    pub fn push_matrix(&mut self, cycle: usize, from: Option<usize>, to: Option<usize>, kind: MessageKind, m: &ComplexMatrix) {
        self.messages.push(MessageRecord {
            cycle,
            from,
            to,
            kind,
            rows: m.nrows(),
            cols: m.ncols(),
            bytes: 16 * m.len(),
        });
    }

    pub fn push_scalar(&mut self, cycle: usize, from: Option<usize>, to: Option<usize>, kind: MessageKind) {
        self.messages.push(MessageRecord {
            cycle,
            from,
            to,
            kind,
            rows: 1,
            cols: 1,
            bytes: 8,
        });
    }

    /// Number of `(B, V)` pairs exchanged in `cycle`.
    pub fn pair_exchanges(&self, cycle: usize) -> usize {
        self.messages.iter().filter(|m| m.cycle == cycle && m.kind == MessageKind::B).count()
    }

    pub fn total_bytes(&self) -> usize {
        self.messages.iter().map(|m| m.bytes).sum()
    }

    /// CSV with header `cycle,from,to,kind,rows,cols,bytes`; the cluster head
    /// is written as `head`.
    pub fn to_csv(&self) -> String {
        let node = |n: Option<usize>| n.map(|k| k.to_string()).unwrap_or_else(|| "head".into());
        let mut out = String::from("cycle,from,to,kind,rows,cols,bytes\n");
        for m in &self.messages {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                m.cycle,
                node(m.from),
                node(m.to),
                m.kind.name(),
                m.rows,
                m.cols,
                m.bytes
            );
        }
        out
    }
}

/// Per-link full-column-rank flags of the direct channels.
pub fn rank_check(ch: &ChannelSet) -> Vec<bool> {
    (0..ch.links())
        .map(|k| {
            let h = &ch.h[k][k];
            if h.ncols() > h.nrows() {
                return false;
            }
            let sv = singular_values(h);
            let max = sv.first().copied().unwrap_or(0.0);
            let min = sv.last().copied().unwrap_or(0.0);
            max > 0.0 && min > 1e-10 * max
        })
        .collect()
}

fn robust_specs(ch: &ChannelSet, k: usize, budgets: &[Vec<f64>]) -> Vec<RobustConstraintSpec> {
    (0..ch.num_pu())
        .map(|pu| RobustConstraintSpec {
            g_hat: ch.g_hat[pu][k].clone(),
            eps: ch.eps[pu][k],
            iota: budgets[pu][k],
        })
        .collect()
}

fn check_budgets(ch: &ChannelSet, budgets: &[Vec<f64>]) -> Result<()> {
    if budgets.len() != ch.num_pu() || budgets.iter().any(|b| b.len() != ch.links()) {
        return Err(Error::ShapeMismatch("budgets must be [num_pu][K]".into()));
    }
    if budgets.iter().flatten().any(|&b| !(b >= 0.0)) {
        return Err(Error::InvalidConfig("budgets must be >= 0".into()));
    }
    Ok(())
}

/// `max_pu wc / ι` for one link.
pub fn worst_case_ratio(ch: &ChannelSet, q: &HermitianMatrix, k: usize, budgets: &[Vec<f64>]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for pu in 0..ch.num_pu() {
        let (wc, _) = worst_case_interference(&ch.g_hat[pu][k], ch.eps[pu][k], q)?;
        let lim = budgets[pu][k];
        let r = if lim > 0.0 {
            wc / lim
        } else if wc > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        worst = worst.max(r);
    }
    Ok(worst)
}

/// Where a node gets the gradient pieces and local covariance from.
enum View<'a> {
    Central,
    Nodes {
        log: &'a mut MessageLog,
        noise: Option<(f64, &'a mut ChaCha20Rng)>,
    },
}

fn noisy(h: HermitianMatrix, noise: &mut Option<(f64, &mut ChaCha20Rng)>) -> HermitianMatrix {
    match noise {
        Some((std, rng)) if *std > 0.0 => {
            let n = h.dim();
            let e = complex_gaussian(&mut **rng, n, n, *std * *std);
            h.add(&HermitianMatrix::symmetrize(e))
        }
        _ => h,
    }
}

/// State of one BCA run; also driven cycle by cycle by the budget allocator.
pub struct Engine<'a> {
    pub ch: &'a ChannelSet,
    pub opts: BcaOptions,
    pub q: Vec<HermitianMatrix>,
    pub trace: IterationTrace,
    start: Instant,
}

/// Outcome of one cycle in budgeted mode: per-PU, per-link multipliers of
/// `t ≤ ι` and the budget variables.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BudgetDuals {
    pub lambda: Vec<Vec<f64>>,
    pub t: Vec<Vec<f64>>,
}

impl<'a> Engine<'a> {
    pub fn new(ch: &'a ChannelSet, opts: BcaOptions, budgets: &[Vec<f64>]) -> Result<Self> {
        ch.validate()?;
        check_budgets(ch, budgets)?;
        opts.validate(ch.links())?;
        let mut e = Engine {
            ch,
            q: CovarianceProfile::zeros(ch).q,
            opts,
            trace: IterationTrace::default(),
            start: Instant::now(),
        };
        e.record_cycle(0, budgets, 0.0)?;
        Ok(e)
    }

    fn record_cycle(&mut self, cycle: usize, budgets: &[Vec<f64>], max_step: f64) -> Result<()> {
        let ch = self.ch;
        let rep = utility(ch, &CovarianceProfile::new(self.q.clone()))?;
        let mut nominal = Vec::new();
        let mut worst = Vec::new();
        for pu in 0..ch.num_pu() {
            let mut nrow = Vec::new();
            let mut wrow = Vec::new();
            for k in 0..ch.links() {
                let (wc, _) = worst_case_interference(&ch.g_hat[pu][k], ch.eps[pu][k], &self.q[k])?;
                nrow.push(self.q[k].congruence(&ch.g_hat[pu][k]).trace_re());
                wrow.push(wc);
            }
            nominal.push(nrow);
            worst.push(wrow);
        }
        let stationarity = if self.opts.track_stationarity {
            Some(stationarity_residual_with(ch, &self.q, budgets, &self.opts.solver)?)
        } else {
            None
        };
        self.trace.cycles.push(CycleRecord {
            cycle,
            sum_utility: rep.sum_u,
            u: rep.u,
            sum_mse: rep.sum_mse,
            nominal,
            worst_case: worst,
            stationarity,
            max_step,
            wall_time_s: self.start.elapsed().as_secs_f64(),
        });
        Ok(())
    }

    fn update_link(
        &mut self,
        cycle: usize,
        k: usize,
        budgets: &[Vec<f64>],
        budgeted: bool,
        view: &mut View<'_>,
    ) -> Result<SubproblemSolution> {
        let ch = self.ch;
        let fail = |reason: String| Error::SolverFailure { cycle, link: k, reason };
        let (d, r_kk) = match view {
            View::Central => (
                crate::mse::gradient_d(ch, &self.q, k, self.opts.neighbor_threshold).map_err(|e| fail(e.to_string()))?,
                link_covariances(ch, &self.q, k).0,
            ),
            View::Nodes { log, noise } => {
                let mut d = HermitianMatrix::zeros(ch.tx_antennas(k));
                for j in 0..ch.links() {
                    if j == k || !is_neighbor(&ch.h[j][k], self.opts.neighbor_threshold) {
                        continue;
                    }
                    // receiver j measures its own covariances and broadcasts them
                    let (r_jj, v_j) = link_covariances(ch, &self.q, j);
                    let b_j = noisy(r_jj.add(&v_j), noise);
                    log.push_matrix(cycle, Some(j), Some(k), MessageKind::B, b_j.as_matrix());
                    log.push_matrix(cycle, Some(j), Some(k), MessageKind::V, v_j.as_matrix());
                    d = d.sub(&gradient_term(&ch.h[j][k], &b_j, &v_j).map_err(|e| fail(e.to_string()))?);
                }
                (d, noisy(link_covariances(ch, &self.q, k).0, noise))
            }
        };
        let r_half = hermitian_sqrt(&r_kk).map_err(|e| fail(e.to_string()))?;
        let mode = if budgeted {
            SubproblemMode::Budgeted
        } else {
            match self.opts.mode {
                BcaMode::Plain => SubproblemMode::Plain,
                BcaMode::Proximal => SubproblemMode::Proximal,
            }
        };
        let spec = SubproblemSpec {
            k,
            mode,
            d: Some(d.clone()),
            h_kk: Some(ch.h[k][k].clone()),
            r_half: Some(r_half),
            p_max: ch.p_max[k],
            robust: robust_specs(ch, k, budgets),
            prev_q: Some(self.q[k].clone()),
            tau: Some(self.opts.tau.get(k).copied().unwrap_or(0.1)),
        };
        let before = crate::mse::sum_utility(ch, &self.q)?;
        let (r_old, v_old) = link_covariances(ch, &self.q, k);
        let u_old = link_utility(&r_old, &v_old)?;
        let sol = solve_subproblem(&spec, &self.opts.solver).map_err(|e| fail(e.to_string()))?;
        let step = (sol.q.as_matrix() - self.q[k].as_matrix()).norm();
        let lin_old = d.inner(&self.q[k]);
        let lin_new = d.inner(&sol.q);
        let old_q = std::mem::replace(&mut self.q[k], sol.q.clone());
        let (r_new, v_new) = link_covariances(ch, &self.q, k);
        let u_new = link_utility(&r_new, &v_new)?;
        let after = crate::mse::sum_utility(ch, &self.q)?;
        let _ = old_q;
        self.trace.updates.push(UpdateRecord {
            cycle,
            link: k,
            utility_before: before,
            utility_after: after,
            surrogate_after: before + (u_new - u_old) + (lin_new - lin_old),
            trace_q: sol.q.trace_re(),
            worst_case_ratio: worst_case_ratio(ch, &sol.q, k, budgets)?,
            step_norm: step,
            solver_iterations: sol.sdp.iterations,
        });
        Ok(sol)
    }

    fn cycle(&mut self, cycle: usize, budgets: &[Vec<f64>], budgeted: bool, view: &mut View<'_>) -> Result<BudgetDuals> {
        let ch = self.ch;
        let mut duals = BudgetDuals {
            lambda: vec![vec![0.0; ch.links()]; ch.num_pu()],
            t: vec![vec![0.0; ch.links()]; ch.num_pu()],
        };
        let mut max_step: f64 = 0.0;
        for k in 0..ch.links() {
            let sol = self.update_link(cycle, k, budgets, budgeted, view)?;
            max_step = max_step.max(self.trace.updates.last().unwrap().step_norm);
            for pu in 0..sol.lambda.len() {
                duals.lambda[pu][k] = sol.lambda[pu].max(0.0);
                duals.t[pu][k] = sol.t[pu];
            }
        }
        self.record_cycle(cycle, budgets, max_step)?;
        Ok(duals)
    }

    /// One centralized cycle.
    pub fn central_cycle(&mut self, cycle: usize, budgets: &[Vec<f64>], budgeted: bool) -> Result<BudgetDuals> {
        self.cycle(cycle, budgets, budgeted, &mut View::Central)
    }

    fn stop(&self, rule: StopRule) -> bool {
        let n = self.trace.cycles.len();
        if n < 2 {
            return false;
        }
        let (prev, cur) = (&self.trace.cycles[n - 2], &self.trace.cycles[n - 1]);
        match rule {
            StopRule::SumUtility => cur.sum_utility - prev.sum_utility < self.opts.upsilon,
            StopRule::PerLink => cur.u.iter().zip(&prev.u).all(|(a, b)| (a - b).abs() < self.opts.upsilon),
        }
    }

    pub fn finish(self) -> Result<(CovarianceProfile, IterationTrace)> {
        let mut prof = CovarianceProfile::new(self.q);
        optimal_receiver(self.ch, &mut prof)?;
        Ok((prof, self.trace))
    }
}

/// Centralized BCA: starts from `Q = 0`, stops when the sum utility gains
/// less than `υ` in a cycle (or per the override), and attaches MMSE filters.
pub fn run_centralized(ch: &ChannelSet, budgets: &[Vec<f64>], opts: &BcaOptions) -> Result<(CovarianceProfile, IterationTrace)> {
    let mut eng = Engine::new(ch, opts.clone(), budgets)?;
    let rule = opts.stop_rule.unwrap_or(StopRule::SumUtility);
    for cycle in 1..=opts.max_cycles {
        eng.central_cycle(cycle, budgets, false)?;
        if eng.stop(rule) {
            eng.trace.converged = true;
            break;
        }
    }
    eng.finish()
}

/// Distributed BCA over simulated nodes. Stops when every link's utility
/// changes by less than `υ` (or per the override).
pub fn run_distributed(
    ch: &ChannelSet,
    budgets: &[Vec<f64>],
    opts: &BcaOptions,
) -> Result<(CovarianceProfile, IterationTrace, MessageLog)> {
    let mut eng = Engine::new(ch, opts.clone(), budgets)?;
    let rule = opts.stop_rule.unwrap_or(StopRule::PerLink);
    let mut log = MessageLog::default();
    for k in 0..ch.links() {
        for j in 0..ch.links() {
            if j != k && is_neighbor(&ch.h[j][k], opts.neighbor_threshold) {
                log.push_matrix(0, Some(j), Some(k), MessageKind::Channel, &ch.h[j][k]);
            }
        }
    }
    let mut rng = opts.measurement_noise.map(|(_, seed)| ChaCha20Rng::seed_from_u64(seed));
    for cycle in 1..=opts.max_cycles {
        let noise = match (&opts.measurement_noise, rng.as_mut()) {
            (Some((std, _)), Some(r)) => Some((*std, r)),
            _ => None,
        };
        let mut view = View::Nodes { log: &mut log, noise };
        eng.cycle(cycle, budgets, false, &mut view)?;
        if eng.stop(rule) {
            eng.trace.converged = true;
            break;
        }
    }
    let (prof, trace) = eng.finish()?;
    Ok((prof, trace, log))
}

/// Per-link ascent gap `max_{Q_k feasible} Re Tr{∇_k U (Q_k − Q̄_k)}`,
/// maximized over links and floored at zero.
pub fn stationarity_residual(ch: &ChannelSet, prof: &CovarianceProfile, budgets: &[Vec<f64>]) -> Result<f64> {
    let solver = SolverOptions {
        tol_gap: 1e-10,
        tol_feas: 1e-10,
        ..SolverOptions::default()
    };
    stationarity_residual_with(ch, &prof.q, budgets, &solver)
}

pub fn stationarity_residual_with(
    ch: &ChannelSet,
    q: &[HermitianMatrix],
    budgets: &[Vec<f64>],
    solver: &SolverOptions,
) -> Result<f64> {
    check_budgets(ch, budgets)?;
    let mut worst: f64 = 0.0;
    for k in 0..ch.links() {
        let g = sum_gradient(ch, q, k)?;
        let spec = SubproblemSpec {
            k,
            mode: SubproblemMode::LinearAscent,
            d: Some(g.clone()),
            h_kk: None,
            r_half: None,
            p_max: ch.p_max[k],
            robust: robust_specs(ch, k, budgets),
            prev_q: None,
            tau: None,
        };
        // the linear objective can stall just short of a very tight gap;
        // fall back to the default tolerances
        let sol = match solve_subproblem(&spec, solver) {
            Ok(s) => s,
            Err(Error::NumericalBreakdown(_)) if solver.tol_gap < SolverOptions::default().tol_gap => {
                solve_subproblem(&spec, &SolverOptions { max_iter: solver.max_iter, ..SolverOptions::default() })?
            }
            Err(e) => return Err(e),
        };
        let best = -sol.objective;
        worst = worst.max(best - g.inner(&q[k]));
    }
    Ok(worst.max(0.0))
}
