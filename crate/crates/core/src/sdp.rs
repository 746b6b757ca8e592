//! Small dense SDP solver.
//!
//! Primal form:
//!
//! ```text
//! minimize    c·x
//! subject to  F_0^(b) + Σ_i x_i F_i^(b) ⪰ 0     for every block b
//!             a_j·x ≤ b_j                      for every linear row j
//! ```
//!
//! Dual: maximize `−Σ_b ⟨F_0^(b), Z_b⟩ − Σ_j b_j z_j` subject to
//! `Σ_b ⟨F_i^(b), Z_b⟩ − Σ_j a_ji z_j = c_i`, `Z_b ⪰ 0`, `z ≥ 0`. Linear rows are
//! treated internally as 1x1 blocks with `F_0 = b_j`, `F_i = −a_ji`; `z_j` is
//! the multiplier of `a_j·x ≤ b_j`, so the optimal value moves by `−z_j` per
//! unit increase of `b_j`.
//!
//! The method is an infeasible-start primal-dual path-following scheme with
//! the HKM direction and Mehrotra predictor-corrector steps.

use nalgebra::{Cholesky, DVector, LU};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::matrix::{symmetric_eig, RealMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct SdpBlock {
    pub size: usize,
    pub f0: RealMatrix,
    /// Nonzero coefficient matrices `(variable index, F_i)`.
    pub coeffs: Vec<(usize, RealMatrix)>,
    pub dual_needed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    /// Sparse row `(variable index, a_ji)`.
    pub a: Vec<(usize, f64)>,
    pub b: f64,
    pub dual_needed: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SdpProblem {
    pub n: usize,
    pub c: Vec<f64>,
    pub blocks: Vec<SdpBlock>,
    pub linear: Vec<LinearConstraint>,
}

impl SdpProblem {
    pub fn new(n: usize) -> Self {
        SdpProblem {
            n,
            c: vec![0.0; n],
            blocks: Vec::new(),
            linear: Vec::new(),
        }
    }

    pub fn add_block(&mut self, f0: RealMatrix, coeffs: Vec<(usize, RealMatrix)>, dual_needed: bool) -> usize {
        self.blocks.push(SdpBlock {
            size: f0.nrows(),
            f0: mirror_upper(f0),
            coeffs: coeffs
                .into_iter()
                .filter(|(_, f)| f.iter().any(|&v| v != 0.0))
                .map(|(i, f)| (i, mirror_upper(f)))
                .collect(),
            dual_needed,
        });
        self.blocks.len() - 1
    }

    pub fn add_linear(&mut self, a: Vec<(usize, f64)>, b: f64, dual_needed: bool) -> usize {
        self.linear.push(LinearConstraint {
            a: a.into_iter().filter(|&(_, v)| v != 0.0).collect(),
            b,
            dual_needed,
        });
        self.linear.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ShapeMismatch(m));
        if self.c.len() != self.n {
            return bad(format!("objective has {} entries for {} variables", self.c.len(), self.n));
        }
        if self.c.iter().any(|v| !v.is_finite()) {
            return bad("non-finite objective".into());
        }
        for (bi, b) in self.blocks.iter().enumerate() {
            if b.size == 0 || b.f0.shape() != (b.size, b.size) {
                return bad(format!("block {bi}: F_0 is not {0}x{0}", b.size));
            }
            for (i, f) in std::iter::once((usize::MAX, &b.f0)).chain(b.coeffs.iter().map(|(i, f)| (*i, f))) {
                if i != usize::MAX && i >= self.n {
                    return bad(format!("block {bi}: variable {i} out of range"));
                }
                if f.shape() != (b.size, b.size) {
                    return bad(format!("block {bi}: coefficient has wrong shape"));
                }
                let scale = f.amax().max(1.0);
                if (f - f.transpose()).amax() > 1e-12 * scale || f.iter().any(|v| !v.is_finite()) {
                    return bad(format!("block {bi}: coefficient is not symmetric"));
                }
            }
        }
        for (j, l) in self.linear.iter().enumerate() {
            if l.a.iter().any(|&(i, v)| i >= self.n || !v.is_finite()) || !l.b.is_finite() {
                return bad(format!("linear row {j} is malformed"));
            }
        }
        Ok(())
    }

    /// `F_0 + Σ x_i F_i` for block `b`.
    pub fn block_value(&self, b: usize, x: &[f64]) -> RealMatrix {
        let blk = &self.blocks[b];
        let mut s = blk.f0.clone();
        for (i, f) in &blk.coeffs {
            s += f * x[*i];
        }
        s
    }

    /// `b_j − a_j·x`.
    pub fn linear_slack(&self, j: usize, x: &[f64]) -> f64 {
        let l = &self.linear[j];
        l.b - l.a.iter().map(|&(i, v)| v * x[i]).sum::<f64>()
    }

    /// `(⟨F_i, Z⟩)_i − (a_ji z_j)_i`, the adjoint map applied to a dual point.
    pub fn adjoint(&self, z: &[RealMatrix], zl: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (b, blk) in self.blocks.iter().enumerate() {
            for (i, f) in &blk.coeffs {
                out[*i] += f.dot(&z[b]);
            }
        }
        for (j, l) in self.linear.iter().enumerate() {
            for &(i, v) in &l.a {
                out[i] -= v * zl[j];
            }
        }
        out
    }

    pub fn dual_objective(&self, z: &[RealMatrix], zl: &[f64]) -> f64 {
        let mut d = 0.0;
        for (b, blk) in self.blocks.iter().enumerate() {
            d -= blk.f0.dot(&z[b]);
        }
        for (j, l) in self.linear.iter().enumerate() {
            d -= l.b * zl[j];
        }
        d
    }

    pub fn primal_objective(&self, x: &[f64]) -> f64 {
        self.c.iter().zip(x).map(|(a, b)| a * b).sum()
    }

    fn f0_norm(&self) -> f64 {
        let mut s: f64 = self.blocks.iter().map(|b| b.f0.norm_squared()).sum();
        s += self.linear.iter().map(|l| l.b * l.b).sum::<f64>();
        s.sqrt()
    }

    /// Line-oriented text form:
    ///
    /// ```text
    /// sdp-dump v1
    /// vars <n>
    /// c <c_0> ... <c_{n-1}>
    /// block <size> <dual_needed 0|1>
    /// <mat> <row> <col> <value>      (mat 0 is F_0, mat i+1 is F_i; row <= col)
    /// linear <b> <dual_needed 0|1> [<var> <coef>]...
    /// end
    /// ```
    ///
    /// Floats use the shortest representation that round-trips exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "sdp-dump v1");
        let _ = writeln!(out, "vars {}", self.n);
        out.push('c');
        for v in &self.c {
            let _ = write!(out, " {v:?}");
        }
        out.push('\n');
        for blk in &self.blocks {
            let _ = writeln!(out, "block {} {}", blk.size, blk.dual_needed as u8);
            let mats = std::iter::once((0, &blk.f0)).chain(blk.coeffs.iter().map(|(i, f)| (i + 1, f)));
            for (mi, f) in mats {
                for r in 0..blk.size {
                    for c in r..blk.size {
                        if f[(r, c)] != 0.0 {
                            let _ = writeln!(out, "{mi} {r} {c} {:?}", f[(r, c)]);
                        }
                    }
                }
            }
        }
        for l in &self.linear {
            let _ = write!(out, "linear {:?} {}", l.b, l.dual_needed as u8);
            for &(i, v) in &l.a {
                let _ = write!(out, " {i} {v:?}");
            }
            out.push('\n');
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<SdpProblem> {
        let perr = |line: usize, msg: &str| Error::Parse { line, msg: msg.to_string() };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
        match lines.next() {
            Some((_, "sdp-dump v1")) => {}
            Some((n, _)) => return Err(perr(n, "expected header `sdp-dump v1`")),
            None => return Err(perr(0, "empty dump")),
        }
        let mut p = SdpProblem::default();
        let mut seen_end = false;
        let num = |ln: usize, s: &str| s.parse::<f64>().map_err(|_| perr(ln, &format!("bad number `{s}`")));
        let idx = |ln: usize, s: &str| s.parse::<usize>().map_err(|_| perr(ln, &format!("bad index `{s}`")));
        // matrices of the block currently being read, keyed by mat index
        let mut current: Option<(usize, bool, Vec<(usize, RealMatrix)>)> = None;
        let flush = |p: &mut SdpProblem, cur: Option<(usize, bool, Vec<(usize, RealMatrix)>)>| {
            if let Some((size, dual, mut mats)) = cur {
                mats.sort_by_key(|(i, _)| *i);
                let f0 = match mats.first() {
                    Some((0, _)) => mats.remove(0).1,
                    _ => RealMatrix::zeros(size, size),
                };
                let coeffs = mats.into_iter().map(|(i, f)| (i - 1, f)).collect();
                p.blocks.push(SdpBlock { size, f0, coeffs, dual_needed: dual });
            }
        };
        for (ln, line) in lines {
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks[0] {
                "vars" if toks.len() == 2 => {
                    p.n = idx(ln, toks[1])?;
                }
                "c" => {
                    p.c = toks[1..].iter().map(|t| num(ln, t)).collect::<Result<_>>()?;
                }
                "block" if toks.len() == 3 => {
                    flush(&mut p, current.take());
                    current = Some((idx(ln, toks[1])?, toks[2] == "1", Vec::new()));
                }
                "linear" if toks.len() >= 3 && toks.len() % 2 == 1 => {
                    flush(&mut p, current.take());
                    let b = num(ln, toks[1])?;
                    let a = toks[3..]
                        .chunks(2)
                        .map(|c| Ok((idx(ln, c[0])?, num(ln, c[1])?)))
                        .collect::<Result<_>>()?;
                    p.linear.push(LinearConstraint { a, b, dual_needed: toks[2] == "1" });
                }
                "end" => {
                    flush(&mut p, current.take());
                    seen_end = true;
                    break;
                }
                _ if toks.len() == 4 => {
                    let Some((size, _, mats)) = current.as_mut() else {
                        return Err(perr(ln, "coefficient outside a block"));
                    };
                    let (mi, r, c, v) = (idx(ln, toks[0])?, idx(ln, toks[1])?, idx(ln, toks[2])?, num(ln, toks[3])?);
                    if r >= *size || c >= *size {
                        return Err(perr(ln, "entry outside block"));
                    }
                    let pos = match mats.iter().position(|(i, _)| *i == mi) {
                        Some(pos) => pos,
                        None => {
                            mats.push((mi, RealMatrix::zeros(*size, *size)));
                            mats.len() - 1
                        }
                    };
                    mats[pos].1[(r, c)] = v;
                    mats[pos].1[(c, r)] = v;
                }
                _ => return Err(perr(ln, &format!("unrecognized line `{line}`"))),
            }
        }
        if !seen_end {
            return Err(perr(text.lines().count(), "missing `end`"));
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol_gap: f64,
    pub tol_feas: f64,
    pub max_iter: usize,
    pub record_iterates: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol_gap: 1e-8,
            tol_feas: 1e-8,
            max_iter: 200,
            record_iterates: false,
        }
    }
}

/// Quantities of one interior-point iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord {
    pub primal_obj: f64,
    pub dual_obj: f64,
    /// `⟨S, Z⟩` summed over all cones.
    pub complementarity: f64,
    /// `x·r_D`.
    pub x_dot_rd: f64,
    /// `⟨r_P, Z⟩`.
    pub rp_dot_z: f64,
    pub primal_infeas: f64,
    pub dual_infeas: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub x: Vec<f64>,
    pub block_duals: Vec<RealMatrix>,
    pub linear_duals: Vec<f64>,
    pub primal_obj: f64,
    pub dual_obj: f64,
    /// Relative gap `|p − d| / (1 + |p| + |d|)`.
    pub gap: f64,
    pub iterations: usize,
    pub history: Vec<IterateRecord>,
}

struct State {
    x: Vec<f64>,
    s: Vec<RealMatrix>,
    z: Vec<RealMatrix>,
    sl: Vec<f64>,
    zl: Vec<f64>,
}

struct Direction {
    dx: Vec<f64>,
    ds: Vec<RealMatrix>,
    dz: Vec<RealMatrix>,
    dsl: Vec<f64>,
    dzl: Vec<f64>,
}

enum Factor {
    Chol(Cholesky<f64, nalgebra::Dyn>),
    Lu(LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl Factor {
    fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        match self {
            Factor::Chol(c) => Some(c.solve(rhs)),
            Factor::Lu(l) => l.solve(rhs),
        }
    }
}

fn factor_schur(m: &RealMatrix) -> Result<Factor> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(Factor::Chol(c));
    }
    let diag_max = m.diagonal().amax().max(f64::MIN_POSITIVE);
    for reg in [1e-14, 1e-12, 1e-10] {
        let mut r = m.clone();
        for i in 0..r.nrows() {
            r[(i, i)] += reg * diag_max;
        }
        if let Some(c) = Cholesky::new(r) {
            return Ok(Factor::Chol(c));
        }
    }
    let lu = LU::new(m.clone());
    if lu.is_invertible() {
        Ok(Factor::Lu(lu))
    } else {
        Err(Error::NumericalBreakdown("Schur complement matrix is singular".into()))
    }
}

/// Copies the upper triangle onto the lower one, so the stored matrix is
/// exactly symmetric (and identical to what a dump reloads).
fn mirror_upper(mut m: RealMatrix) -> RealMatrix {
    for r in 0..m.nrows() {
        for c in r + 1..m.ncols() {
            m[(c, r)] = m[(r, c)];
        }
    }
    m
}

fn sym(m: RealMatrix) -> RealMatrix {
    (&m + m.transpose()) * 0.5
}

/// Largest `α` with `S + α ΔS ⪰ 0` (infinite when `ΔS ⪰ 0`).
fn max_step(s: &RealMatrix, ds: &RealMatrix) -> Result<f64> {
    let l = Cholesky::new(s.clone())
        .ok_or_else(|| Error::NumericalBreakdown("iterate left the cone".into()))?
        .unpack();
    let li = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NumericalBreakdown("singular Cholesky factor".into()))?;
    let w = sym(&li * ds * li.transpose());
    let (vals, _) = symmetric_eig(&w)?;
    let min = *vals.last().unwrap();
    Ok(if min >= 0.0 { f64::INFINITY } else { -1.0 / min })
}

fn lp_max_step(s: &[f64], ds: &[f64]) -> f64 {
    s.iter()
        .zip(ds)
        .filter(|(_, &d)| d < 0.0)
        .map(|(&s, &d)| -s / d)
        .fold(f64::INFINITY, f64::min)
}

pub fn solve(p: &SdpProblem, opts: &SolverOptions) -> Result<SdpSolution> {
    p.validate()?;
    let n = p.n;
    let nb = p.blocks.len();
    let ml = p.linear.len();
    let nu = (p.blocks.iter().map(|b| b.size).sum::<usize>() + ml) as f64;
    let f0_norm = p.f0_norm();
    let c_norm = p.c.iter().map(|v| v * v).sum::<f64>().sqrt();

    // interior start scaled to the data
    let mut coef_max: f64 = 0.0;
    let mut rho_d: f64 = 1.0;
    for blk in &p.blocks {
        coef_max = coef_max.max(blk.f0.amax());
        for (i, f) in &blk.coeffs {
            let fnorm = f.norm();
            rho_d = rho_d.max((1.0 + p.c[*i].abs()) / (1.0 + fnorm));
        }
    }
    for l in &p.linear {
        coef_max = coef_max.max(l.b.abs());
        for &(i, v) in &l.a {
            rho_d = rho_d.max((1.0 + p.c[i].abs()) / (1.0 + v.abs()));
        }
    }
    let rho_p = 10.0 * coef_max.max(1.0);
    let rho_d = 10.0 * rho_d;

    let mut st = State {
        x: vec![0.0; n],
        s: p.blocks.iter().map(|b| RealMatrix::identity(b.size, b.size) * rho_p).collect(),
        z: p.blocks.iter().map(|b| RealMatrix::identity(b.size, b.size) * rho_d).collect(),
        sl: vec![rho_p; ml],
        zl: vec![rho_d; ml],
    };
    let mut history = Vec::new();

    let finish = |st: State, status: SdpStatus, it: usize, history: Vec<IterateRecord>| {
        let pobj = p.primal_objective(&st.x);
        let dobj = p.dual_objective(&st.z, &st.zl);
        SdpSolution {
            status,
            gap: (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs()),
            x: st.x,
            block_duals: st.z,
            linear_duals: st.zl,
            primal_obj: pobj,
            dual_obj: dobj,
            iterations: it,
            history,
        }
    };

    for it in 0..=opts.max_iter {
        // residuals
        let rp: Vec<RealMatrix> = (0..nb).map(|b| p.block_value(b, &st.x) - &st.s[b]).collect();
        let rpl: Vec<f64> = (0..ml).map(|j| p.linear_slack(j, &st.x) - st.sl[j]).collect();
        let fz = p.adjoint(&st.z, &st.zl);
        let rd: Vec<f64> = (0..n).map(|i| p.c[i] - fz[i]).collect();
        let pobj = p.primal_objective(&st.x);
        let dobj = p.dual_objective(&st.z, &st.zl);
        let comp: f64 = (0..nb).map(|b| st.s[b].dot(&st.z[b])).sum::<f64>()
            + st.sl.iter().zip(&st.zl).map(|(a, b)| a * b).sum::<f64>();
        let rp_norm = (rp.iter().map(|m| m.norm_squared()).sum::<f64>() + rpl.iter().map(|v| v * v).sum::<f64>()).sqrt();
        let rd_norm = rd.iter().map(|v| v * v).sum::<f64>().sqrt();
        let pinf = rp_norm / (1.0 + f0_norm);
        let dinf = rd_norm / (1.0 + c_norm);
        let denom = 1.0 + pobj.abs() + dobj.abs();
        if opts.record_iterates {
            history.push(IterateRecord {
                primal_obj: pobj,
                dual_obj: dobj,
                complementarity: comp,
                x_dot_rd: st.x.iter().zip(&rd).map(|(a, b)| a * b).sum(),
                rp_dot_z: (0..nb).map(|b| rp[b].dot(&st.z[b])).sum::<f64>()
                    + rpl.iter().zip(&st.zl).map(|(a, b)| a * b).sum::<f64>(),
                primal_infeas: pinf,
                dual_infeas: dinf,
            });
        }
        if pinf <= opts.tol_feas
            && dinf <= opts.tol_feas
            && (pobj - dobj).abs() / denom <= opts.tol_gap
            && comp / denom <= opts.tol_gap
        {
            return Ok(finish(st, SdpStatus::Optimal, it, history));
        }
        // certificates of infeasibility: a dual ray Z with F*(Z) ≈ 0 and
        // −⟨F_0, Z⟩ > 0, or a primal ray x with c·x → −∞
        let ray_obj = dobj;
        let fz_norm = fz.iter().map(|v| v * v).sum::<f64>().sqrt();
        if ray_obj > 0.0 && fz_norm <= opts.tol_feas * ray_obj && ray_obj > 1e8 * (1.0 + c_norm) {
            return Ok(finish(st, SdpStatus::Infeasible, it, history));
        }
        if pobj < 0.0 && (f0_norm + rp_norm) < opts.tol_feas * (-pobj) {
            return Ok(finish(st, SdpStatus::Unbounded, it, history));
        }
        if it == opts.max_iter {
            return Ok(finish(st, SdpStatus::MaxIter, it, history));
        }

        let mu = comp / nu;
        let s_inv: Vec<RealMatrix> = st
            .s
            .iter()
            .map(|s| {
                Cholesky::new(s.clone())
                    .map(|c| sym(c.inverse()))
                    .ok_or_else(|| Error::NumericalBreakdown("slack lost definiteness".into()))
            })
            .collect::<Result<_>>()?;

        // Schur complement M_ij = Σ_b Tr(F_i Z F_j S^{-1}) + Σ_l a_li a_lj z_l / s_l
        let mut m = RealMatrix::zeros(n, n);
        for (b, blk) in p.blocks.iter().enumerate() {
            for (j, fj) in &blk.coeffs {
                let g = &st.z[b] * fj * &s_inv[b];
                for (i, fi) in &blk.coeffs {
                    m[(*i, *j)] += fi.dot(&g);
                }
            }
        }
        for (l, row) in p.linear.iter().enumerate() {
            let w = st.zl[l] / st.sl[l];
            for &(i, ai) in &row.a {
                for &(j, aj) in &row.a {
                    m[(i, j)] += ai * aj * w;
                }
            }
        }
        let m = sym(m);
        let fac = factor_schur(&m)?;

        let direction = |sigma_mu: f64, corr: Option<&Direction>| -> Result<Direction> {
            // X_b = σμ S^{-1} − Z − (C + Z r_P) S^{-1}
            let xs: Vec<RealMatrix> = (0..nb)
                .map(|b| {
                    let mut inner = &st.z[b] * &rp[b];
                    if let Some(c) = corr {
                        inner += &c.dz[b] * &c.ds[b];
                    }
                    &s_inv[b] * sigma_mu - &st.z[b] - inner * &s_inv[b]
                })
                .collect();
            let xl: Vec<f64> = (0..ml)
                .map(|l| {
                    let cc = corr.map_or(0.0, |c| c.dzl[l] * c.dsl[l]);
                    (sigma_mu - st.sl[l] * st.zl[l] - cc - st.zl[l] * rpl[l]) / st.sl[l]
                })
                .collect();
            let mut rhs = DVector::from_iterator(n, rd.iter().map(|v| -v));
            for (b, blk) in p.blocks.iter().enumerate() {
                for (i, f) in &blk.coeffs {
                    rhs[*i] += f.dot(&xs[b]);
                }
            }
            for (l, row) in p.linear.iter().enumerate() {
                for &(i, a) in &row.a {
                    rhs[i] -= a * xl[l];
                }
            }
            let dx = fac
                .solve(&rhs)
                .ok_or_else(|| Error::NumericalBreakdown("Newton system solve failed".into()))?;
            if dx.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericalBreakdown("non-finite Newton step".into()));
            }
            let dx: Vec<f64> = dx.iter().copied().collect();
            let mut ds = Vec::with_capacity(nb);
            let mut dz = Vec::with_capacity(nb);
            for (b, blk) in p.blocks.iter().enumerate() {
                let mut d = rp[b].clone();
                for (i, f) in &blk.coeffs {
                    d += f * dx[*i];
                }
                let d = sym(d);
                let mut inner = &st.z[b] * &d;
                if let Some(c) = corr {
                    inner += &c.dz[b] * &c.ds[b];
                }
                dz.push(sym(&s_inv[b] * sigma_mu - &st.z[b] - inner * &s_inv[b]));
                ds.push(d);
            }
            let mut dsl = Vec::with_capacity(ml);
            let mut dzl = Vec::with_capacity(ml);
            for (l, row) in p.linear.iter().enumerate() {
                let d = rpl[l] - row.a.iter().map(|&(i, a)| a * dx[i]).sum::<f64>();
                let cc = corr.map_or(0.0, |c| c.dzl[l] * c.dsl[l]);
                dzl.push((sigma_mu - st.sl[l] * st.zl[l] - cc - st.zl[l] * d) / st.sl[l]);
                dsl.push(d);
            }
            Ok(Direction { dx, ds, dz, dsl, dzl })
        };

        let steps = |d: &Direction| -> Result<(f64, f64)> {
            let mut ap = lp_max_step(&st.sl, &d.dsl);
            let mut ad = lp_max_step(&st.zl, &d.dzl);
            for b in 0..nb {
                ap = ap.min(max_step(&st.s[b], &d.ds[b])?);
                ad = ad.min(max_step(&st.z[b], &d.dz[b])?);
            }
            Ok(((0.98 * ap).min(1.0), (0.98 * ad).min(1.0)))
        };

        let pred = direction(0.0, None)?;
        let (ap, ad) = steps(&pred)?;
        let mut comp_aff = 0.0;
        for b in 0..nb {
            comp_aff += (&st.s[b] + &pred.ds[b] * ap).dot(&(&st.z[b] + &pred.dz[b] * ad));
        }
        for l in 0..ml {
            comp_aff += (st.sl[l] + ap * pred.dsl[l]) * (st.zl[l] + ad * pred.dzl[l]);
        }
        let sigma = (comp_aff / nu / mu).clamp(0.0, 1.0).powi(3);
        let corr = direction(sigma * mu, Some(&pred))?;
        let (mut ap, mut ad) = steps(&corr)?;

        // rounding can leave a boundary eigenvalue slightly negative; back off
        // until every new block still factors
        let mut new_s: Vec<RealMatrix>;
        let mut tries = 0;
        loop {
            new_s = (0..nb).map(|b| sym(&st.s[b] + &corr.ds[b] * ap)).collect();
            if new_s.iter().all(|m| Cholesky::new(m.clone()).is_some()) {
                break;
            }
            ap *= 0.5;
            tries += 1;
            if tries > 60 {
                return Err(Error::NumericalBreakdown("primal step cannot stay in the cone".into()));
            }
        }
        let mut new_z: Vec<RealMatrix>;
        tries = 0;
        loop {
            new_z = (0..nb).map(|b| sym(&st.z[b] + &corr.dz[b] * ad)).collect();
            if new_z.iter().all(|m| Cholesky::new(m.clone()).is_some()) {
                break;
            }
            ad *= 0.5;
            tries += 1;
            if tries > 60 {
                return Err(Error::NumericalBreakdown("dual step cannot stay in the cone".into()));
            }
        }

        for i in 0..n {
            st.x[i] += ap * corr.dx[i];
        }
        st.s = new_s;
        st.z = new_z;
        for l in 0..ml {
            st.sl[l] += ap * corr.dsl[l];
            st.zl[l] += ad * corr.dzl[l];
        }
    }
    unreachable!("loop returns at max_iter")
}

/// Residuals of an optimal solution recomputed from the problem data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateReport {
    /// Most negative eigenvalue of `F(x)` (or linear slack), relative.
    pub primal_infeas: f64,
    /// `‖c − F*(Z)‖ / (1 + ‖c‖)`.
    pub dual_infeas: f64,
    /// Most negative eigenvalue of `Z` (or linear dual), relative.
    pub dual_cone: f64,
    /// `|c·x − d(Z)| / (1 + |c·x| + |d(Z)|)`.
    pub gap: f64,
    /// `⟨F(x), Z⟩ / (1 + |c·x| + |d(Z)|)`.
    pub complementarity: f64,
}

/// Recomputes every optimality residual of `sol` and requires each to be at
/// most `10·tol`.
pub fn check_certificate(p: &SdpProblem, sol: &SdpSolution, tol: f64) -> Result<CertificateReport> {
    let fail = |m: String| Err(Error::CertificateFailure(m));
    if sol.status != SdpStatus::Optimal {
        return fail(format!("status is {:?}", sol.status));
    }
    if sol.x.len() != p.n || sol.block_duals.len() != p.blocks.len() || sol.linear_duals.len() != p.linear.len() {
        return fail("solution shape does not match the problem".into());
    }
    let f0_norm = p.f0_norm();
    let mut worst_primal: f64 = 0.0;
    let mut worst_dual: f64 = 0.0;
    let mut comp = 0.0;
    for b in 0..p.blocks.len() {
        let s = p.block_value(b, &sol.x);
        let (sv, _) = symmetric_eig(&sym(s.clone()))?;
        let (zv, _) = symmetric_eig(&sym(sol.block_duals[b].clone()))?;
        let z_scale = 1.0 + sol.block_duals[b].norm();
        worst_primal = worst_primal.max(-sv.last().unwrap() / (1.0 + f0_norm));
        worst_dual = worst_dual.max(-zv.last().unwrap() / z_scale);
        comp += s.dot(&sol.block_duals[b]);
    }
    for j in 0..p.linear.len() {
        let s = p.linear_slack(j, &sol.x);
        worst_primal = worst_primal.max(-s / (1.0 + f0_norm));
        worst_dual = worst_dual.max(-sol.linear_duals[j] / (1.0 + sol.linear_duals[j].abs()));
        comp += s * sol.linear_duals[j];
    }
    let fz = p.adjoint(&sol.block_duals, &sol.linear_duals);
    let c_norm = p.c.iter().map(|v| v * v).sum::<f64>().sqrt();
    let rd = p.c.iter().zip(&fz).map(|(c, f)| (c - f).powi(2)).sum::<f64>().sqrt() / (1.0 + c_norm);
    let pobj = p.primal_objective(&sol.x);
    let dobj = p.dual_objective(&sol.block_duals, &sol.linear_duals);
    let denom = 1.0 + pobj.abs() + dobj.abs();
    let report = CertificateReport {
        primal_infeas: worst_primal,
        dual_infeas: rd,
        dual_cone: worst_dual,
        gap: (pobj - dobj).abs() / denom,
        complementarity: comp.abs() / denom,
    };
    let lim = 10.0 * tol;
    let checks = [
        ("primal feasibility", report.primal_infeas),
        ("dual feasibility", report.dual_infeas),
        ("dual cone", report.dual_cone),
        ("duality gap", report.gap),
        ("complementarity", report.complementarity),
    ];
    for (name, v) in checks {
        if !(v <= lim) {
            return fail(format!("{name} residual {v:e} exceeds {lim:e}"));
        }
    }
    Ok(report)
}
