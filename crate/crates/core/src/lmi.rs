//! Per-link subproblems as real SDPs.
//!
//! Complex Hermitian LMIs are written as affine maps of real parameters and
//! pass through [`real_embedding`]. A Hermitian `m x m` variable uses `m²`
//! real parameters: the diagonal first, then `(re, im)` for every `i < j` with
//! basis `e_ij + e_ji` and `i e_ij − i e_ji`.
//!
//! Units are normalized before solving so that every block is O(1): the
//! covariance is `Q = p Q̃` with `p` the power cap, the MSE block is divided by
//! `s = Tr(R)/N`, and each robust block by `p g²` with `g = ‖Ĝ‖_F + ε`. The
//! objective is left in its natural units. Returned quantities are converted
//! back.

use crate::error::{Error, Result};
use crate::matrix::{real_embedding, real_embedding_inverse, ComplexMatrix, HermitianMatrix, RealMatrix, C64};
use crate::mse::worst_case_interference;
use crate::sdp::{solve, SdpProblem, SdpSolution, SdpStatus, SolverOptions};

/// One PU protection requirement of a link.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustConstraintSpec {
    pub g_hat: ComplexMatrix,
    pub eps: f64,
    /// Interference limit `ι_k` in watts (the upper bound of `t_k` in
    /// budgeted mode).
    pub iota: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubproblemMode {
    /// `min Tr T − Tr{D Q}`.
    Plain,
    /// Plain plus `(1/2τ) ‖Q − Q_prev‖_F²`.
    Proximal,
    /// Plain with per-PU budget variables `t ≤ ι` whose multipliers are
    /// reported.
    Budgeted,
    /// `max Re Tr{D Q}` over the feasible set (no MSE block); `D` holds the
    /// full gradient.
    LinearAscent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSpec {
    pub k: usize,
    pub mode: SubproblemMode,
    pub d: Option<HermitianMatrix>,
    pub h_kk: Option<ComplexMatrix>,
    pub r_half: Option<HermitianMatrix>,
    pub p_max: f64,
    pub robust: Vec<RobustConstraintSpec>,
    pub prev_q: Option<HermitianMatrix>,
    pub tau: Option<f64>,
}

/// Hermitian basis in parameter order.
pub fn hermitian_basis(m: usize) -> Vec<ComplexMatrix> {
    let mut out = Vec::with_capacity(m * m);
    for i in 0..m {
        let mut e = ComplexMatrix::zeros(m, m);
        e[(i, i)] = C64::new(1.0, 0.0);
        out.push(e);
    }
    for i in 0..m {
        for j in (i + 1)..m {
            let mut re = ComplexMatrix::zeros(m, m);
            re[(i, j)] = C64::new(1.0, 0.0);
            re[(j, i)] = C64::new(1.0, 0.0);
            let mut im = ComplexMatrix::zeros(m, m);
            im[(i, j)] = C64::new(0.0, 1.0);
            im[(j, i)] = C64::new(0.0, -1.0);
            out.push(re);
            out.push(im);
        }
    }
    out
}

pub fn hermitian_from_params(params: &[f64], m: usize) -> HermitianMatrix {
    let mut h = ComplexMatrix::zeros(m, m);
    for i in 0..m {
        h[(i, i)] = C64::new(params[i], 0.0);
    }
    let mut idx = m;
    for i in 0..m {
        for j in (i + 1)..m {
            let z = C64::new(params[idx], params[idx + 1]);
            h[(i, j)] = z;
            h[(j, i)] = z.conj();
            idx += 2;
        }
    }
    HermitianMatrix::symmetrize(h)
}

pub fn hermitian_to_params(h: &HermitianMatrix) -> Vec<f64> {
    let m = h.dim();
    let mut out: Vec<f64> = (0..m).map(|i| h[(i, i)].re).collect();
    for i in 0..m {
        for j in (i + 1)..m {
            out.push(h[(i, j)].re);
            out.push(h[(i, j)].im);
        }
    }
    out
}

/// Handle to a Hermitian variable occupying `dim²` consecutive parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HermitianVar {
    pub offset: usize,
    pub dim: usize,
}

impl HermitianVar {
    pub fn len(&self) -> usize {
        self.dim * self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.dim == 0
    }

    pub fn read(&self, x: &[f64]) -> HermitianMatrix {
        hermitian_from_params(&x[self.offset..self.offset + self.len()], self.dim)
    }
}

/// Complex Hermitian affine map `F_0 + Σ x_i F_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexLmi {
    pub f0: ComplexMatrix,
    pub terms: Vec<(usize, ComplexMatrix)>,
}

impl ComplexLmi {
    fn zeros(n: usize) -> Self {
        ComplexLmi {
            f0: ComplexMatrix::zeros(n, n),
            terms: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.f0.nrows()
    }

    pub fn evaluate(&self, x: &[f64]) -> HermitianMatrix {
        let mut m = self.f0.clone();
        for (i, f) in &self.terms {
            m += f * C64::new(x[*i], 0.0);
        }
        HermitianMatrix::symmetrize(m)
    }

    /// Moves the terms of the listed variables into the constant part.
    pub fn fix(&self, values: &[(usize, f64)]) -> ComplexLmi {
        let mut out = ComplexLmi {
            f0: self.f0.clone(),
            terms: Vec::new(),
        };
        for (i, f) in &self.terms {
            match values.iter().find(|(j, _)| j == i) {
                Some((_, v)) => out.f0 += f * C64::new(*v, 0.0),
                None => out.terms.push((*i, f.clone())),
            }
        }
        out
    }

    pub fn add_to(&self, p: &mut SdpProblem, dual_needed: bool) -> usize {
        p.add_block(
            real_embedding(&self.f0),
            self.terms.iter().map(|(i, f)| (*i, real_embedding(f))).collect(),
            dual_needed,
        )
    }

    fn place(&mut self, r0: usize, c0: usize, block: &ComplexMatrix, var: Option<usize>) {
        let target = match var {
            None => &mut self.f0,
            Some(i) => {
                let pos = match self.terms.iter().position(|(j, _)| *j == i) {
                    Some(pos) => pos,
                    None => {
                        let n = self.dim();
                        self.terms.push((i, ComplexMatrix::zeros(n, n)));
                        self.terms.len() - 1
                    }
                };
                &mut self.terms[pos].1
            }
        };
        let mut view = target.view_mut((r0, c0), block.shape());
        view += block;
    }
}

fn vec_col(m: &ComplexMatrix) -> ComplexMatrix {
    ComplexMatrix::from_iterator(m.len(), 1, m.iter().copied())
}

/// Robust interference block in `(Q, θ)`:
///
/// ```text
/// [ θ I_{LM} − I_L ⊗ Q     −vec(Q Ĝ^H)            ]
/// [ −vec(Q Ĝ^H)^H          ι − ε² θ − Tr{Ĝ Q Ĝ^H} ] ⪰ 0
/// ```
///
/// `ι` is the constant `spec.iota`, or the variable `t` when given.
pub fn s_procedure_lmi(spec: &RobustConstraintSpec, q: HermitianVar, theta: usize, t: Option<usize>) -> ComplexLmi {
    let (l, m) = spec.g_hat.shape();
    let lm = l * m;
    let mut lmi = ComplexLmi::zeros(lm + 1);
    let one = ComplexMatrix::from_element(1, 1, C64::new(1.0, 0.0));
    match t {
        Some(t) => lmi.place(lm, lm, &one, Some(t)),
        None => lmi.place(lm, lm, &(&one * C64::new(spec.iota, 0.0)), None),
    }
    let mut th = ComplexMatrix::identity(lm + 1, lm + 1);
    th[(lm, lm)] = C64::new(-spec.eps * spec.eps, 0.0);
    lmi.place(0, 0, &th, Some(theta));
    for (i, e) in hermitian_basis(m).iter().enumerate() {
        let mut f = ComplexMatrix::zeros(lm + 1, lm + 1);
        for b in 0..l {
            let mut v = f.view_mut((b * m, b * m), (m, m));
            v -= e;
        }
        let off = vec_col(&(e * spec.g_hat.adjoint()));
        f.view_mut((0, lm), (lm, 1)).copy_from(&(-&off));
        f.view_mut((lm, 0), (1, lm)).copy_from(&(-off.adjoint()));
        f[(lm, lm)] = -(&spec.g_hat * e * spec.g_hat.adjoint()).trace();
        lmi.place(0, 0, &f, Some(q.offset + i));
    }
    lmi
}

/// `[[H Q H^H + R, R^{1/2}], [R^{1/2}, T]] ⪰ 0`.
pub fn mse_epigraph_lmi(h: &ComplexMatrix, r_half: &HermitianMatrix, q: HermitianVar, t: HermitianVar) -> ComplexLmi {
    let n = h.nrows();
    let r = r_half.as_matrix() * r_half.as_matrix();
    let mut lmi = ComplexLmi::zeros(2 * n);
    lmi.place(0, 0, &r, None);
    lmi.place(0, n, r_half.as_matrix(), None);
    lmi.place(n, 0, r_half.as_matrix(), None);
    for (i, e) in hermitian_basis(q.dim).iter().enumerate() {
        lmi.place(0, 0, &(h * e * h.adjoint()), Some(q.offset + i));
    }
    for (i, e) in hermitian_basis(t.dim).iter().enumerate() {
        lmi.place(n, n, e, Some(t.offset + i));
    }
    lmi
}

/// `[[I, Q − Q_prev], [Q − Q_prev, Y]] ⪰ 0`.
pub fn proximal_lmi(q: HermitianVar, prev_q: &HermitianMatrix, y: HermitianVar) -> ComplexLmi {
    let m = q.dim;
    let mut lmi = ComplexLmi::zeros(2 * m);
    lmi.place(0, 0, &ComplexMatrix::identity(m, m), None);
    lmi.place(0, m, &(-prev_q.as_matrix()), None);
    lmi.place(m, 0, &(-prev_q.as_matrix()), None);
    for (i, e) in hermitian_basis(m).iter().enumerate() {
        lmi.place(0, m, e, Some(q.offset + i));
        lmi.place(m, 0, e, Some(q.offset + i));
        lmi.place(m, m, e, Some(y.offset + i));
    }
    lmi
}

/// How each PU constraint was emitted.
#[derive(Debug, Clone, PartialEq)]
pub enum RobustLayout {
    /// LMI block with multiplier `theta` (scaled units).
    Lmi { block: usize, theta: usize },
    /// Nominal trace constraint (`ε = 0`).
    Linear { row: usize },
}

/// Variable positions and unit scalings of an assembled subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub q: HermitianVar,
    pub t_mat: Option<HermitianVar>,
    pub y: Option<HermitianVar>,
    pub robust: Vec<RobustLayout>,
    /// Budget variable and its `t ≤ ι` row, per PU (budgeted mode).
    pub budget: Vec<(usize, usize)>,
    pub power_row: usize,
    /// `Q = power_scale · Q̃`.
    pub power_scale: f64,
    /// Per-PU factor `p g²` between physical and scaled interference.
    pub robust_scale: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledSubproblem {
    pub sdp: SdpProblem,
    pub layout: Layout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSolution {
    pub q: HermitianMatrix,
    pub t_mat: Option<HermitianMatrix>,
    pub y: Option<HermitianMatrix>,
    /// S-procedure multipliers per PU (0 for nominal constraints).
    pub theta: Vec<f64>,
    /// Budget variables `t` per PU (watts), budgeted mode only.
    pub t: Vec<f64>,
    /// Multipliers of `t ≤ ι` per PU (per watt), budgeted mode only.
    pub lambda: Vec<f64>,
    /// Optimal value of the minimization in natural units.
    pub objective: f64,
    pub sdp: SdpSolution,
}

fn check_spec(spec: &SubproblemSpec) -> Result<()> {
    let missing = |what: &str| Err(Error::InconsistentSpec(format!("link {}: missing {what}", spec.k)));
    if spec.d.is_none() {
        return missing("d");
    }
    if spec.mode != SubproblemMode::LinearAscent {
        if spec.h_kk.is_none() {
            return missing("h_kk");
        }
        if spec.r_half.is_none() {
            return missing("r_half");
        }
    }
    if spec.mode == SubproblemMode::Proximal {
        if spec.prev_q.is_none() {
            return missing("prev_q");
        }
        match spec.tau {
            None => return missing("tau"),
            Some(t) if !(t > 0.0) => {
                return Err(Error::InconsistentSpec(format!("link {}: tau must be > 0, got {t}", spec.k)))
            }
            _ => {}
        }
    }
    if !(spec.p_max > 0.0) {
        return Err(Error::InconsistentSpec(format!("link {}: p_max must be > 0", spec.k)));
    }
    let m = spec.d.as_ref().unwrap().dim();
    for r in &spec.robust {
        if r.g_hat.ncols() != m || !(r.eps >= 0.0) || !(r.iota >= 0.0) {
            return Err(Error::InconsistentSpec(format!("link {}: malformed robust constraint", spec.k)));
        }
    }
    Ok(())
}

pub fn assemble(spec: &SubproblemSpec) -> Result<AssembledSubproblem> {
    check_spec(spec)?;
    let d = spec.d.as_ref().unwrap();
    let m = d.dim();
    let p = spec.p_max;

    let mut n = 0;
    let mut alloc_h = |dim: usize| {
        let v = HermitianVar { offset: n, dim };
        n += dim * dim;
        v
    };
    let q = alloc_h(m);
    let t_mat = match spec.mode {
        SubproblemMode::LinearAscent => None,
        _ => Some(alloc_h(spec.h_kk.as_ref().unwrap().nrows())),
    };
    let y = (spec.mode == SubproblemMode::Proximal).then(|| alloc_h(m));
    let mut thetas = Vec::new();
    for r in &spec.robust {
        thetas.push((r.eps > 0.0).then(|| {
            n += 1;
            n - 1
        }));
    }
    let budget_vars: Vec<usize> = if spec.mode == SubproblemMode::Budgeted {
        (0..spec.robust.len())
            .map(|_| {
                n += 1;
                n - 1
            })
            .collect()
    } else {
        Vec::new()
    };

    let mut sdp = SdpProblem::new(n);
    let basis = hermitian_basis(m);

    // objective
    let (dsign, with_mse) = match spec.mode {
        SubproblemMode::LinearAscent => (-1.0, false),
        _ => (-1.0, true),
    };
    for (i, e) in basis.iter().enumerate() {
        sdp.c[q.offset + i] = dsign * p * (d.as_matrix() * e).trace().re;
    }
    if with_mse {
        let tv = t_mat.unwrap();
        for (i, e) in hermitian_basis(tv.dim).iter().enumerate() {
            sdp.c[tv.offset + i] = e.trace().re;
        }
    }
    if let Some(yv) = y {
        let w = p * p / (2.0 * spec.tau.unwrap());
        for (i, e) in basis.iter().enumerate() {
            sdp.c[yv.offset + i] = w * e.trace().re;
        }
    }

    // Q ⪰ 0 and Tr Q̃ ≤ 1
    let mut qpsd = ComplexLmi::zeros(m);
    for (i, e) in basis.iter().enumerate() {
        qpsd.place(0, 0, e, Some(q.offset + i));
    }
    qpsd.add_to(&mut sdp, false);
    let power_row = sdp.add_linear((0..m).map(|i| (q.offset + i, 1.0)).collect(), 1.0, true);

    if with_mse {
        let h = spec.h_kk.as_ref().unwrap();
        let r_half = spec.r_half.as_ref().unwrap();
        let nrx = h.nrows();
        let r = r_half.as_matrix() * r_half.as_matrix();
        let s = (r.trace().re / nrx as f64).max(f64::MIN_POSITIVE);
        let h_s = h * C64::new((p / s).sqrt(), 0.0);
        let r_half_s = r_half.scale(1.0 / s.sqrt());
        mse_epigraph_lmi(&h_s, &r_half_s, q, t_mat.unwrap()).add_to(&mut sdp, false);
    }

    if let Some(yv) = y {
        let prev = spec.prev_q.as_ref().unwrap().scale(1.0 / p);
        proximal_lmi(q, &prev, yv).add_to(&mut sdp, false);
    }

    let mut robust = Vec::new();
    let mut robust_scale = Vec::new();
    let mut budget = Vec::new();
    for (pu, r) in spec.robust.iter().enumerate() {
        let g = r.g_hat.norm() + r.eps;
        let g = if g > 0.0 { g } else { 1.0 };
        let scale = p * g * g;
        robust_scale.push(scale);
        let scaled = RobustConstraintSpec {
            g_hat: &r.g_hat * C64::new(1.0 / g, 0.0),
            eps: r.eps / g,
            iota: r.iota / scale,
        };
        let tvar = budget_vars.get(pu).copied();
        match thetas[pu] {
            Some(theta) => {
                let block = s_procedure_lmi(&scaled, q, theta, tvar).add_to(&mut sdp, false);
                sdp.add_linear(vec![(theta, -1.0)], 0.0, false);
                robust.push(RobustLayout::Lmi { block, theta });
            }
            None => {
                // Tr{Ĝ Q̃ Ĝ^H} ≤ ι (or ≤ t)
                let mut a: Vec<(usize, f64)> = basis
                    .iter()
                    .enumerate()
                    .map(|(i, e)| (q.offset + i, (&scaled.g_hat * e * scaled.g_hat.adjoint()).trace().re))
                    .collect();
                let b = match tvar {
                    Some(t) => {
                        a.push((t, -1.0));
                        0.0
                    }
                    None => scaled.iota,
                };
                let row = sdp.add_linear(a, b, false);
                robust.push(RobustLayout::Linear { row });
            }
        }
        if let Some(t) = tvar {
            sdp.add_linear(vec![(t, -1.0)], 0.0, false);
            let row = sdp.add_linear(vec![(t, 1.0)], scaled.iota, true);
            budget.push((t, row));
        }
    }

    Ok(AssembledSubproblem {
        sdp,
        layout: Layout {
            q,
            t_mat,
            y,
            robust,
            budget,
            power_row,
            power_scale: p,
            robust_scale,
        },
    })
}

/// Converts a solver answer back to physical units.
pub fn extract(asm: &AssembledSubproblem, sol: SdpSolution) -> Result<SubproblemSolution> {
    let lay = &asm.layout;
    let p = lay.power_scale;
    let q_raw = lay.q.read(&sol.x).scale(p);
    // remove round-off negative eigenvalues left by the interior-point solve
    let q = q_raw.psd_part().unwrap_or(q_raw);
    let theta = lay
        .robust
        .iter()
        .map(|r| match r {
            RobustLayout::Lmi { theta, .. } => sol.x[*theta] * p,
            RobustLayout::Linear { .. } => 0.0,
        })
        .collect();
    let (t, lambda) = lay
        .budget
        .iter()
        .zip(&lay.robust_scale)
        .map(|(&(tv, row), &s)| (sol.x[tv] * s, sol.linear_duals[row] / s))
        .unzip();
    Ok(SubproblemSolution {
        q,
        t_mat: lay.t_mat.map(|v| v.read(&sol.x)),
        y: lay.y.map(|v| v.read(&sol.x).scale(p * p)),
        theta,
        t,
        lambda,
        objective: sol.primal_obj,
        sdp: sol,
    })
}

/// Assembles, solves and extracts; any status other than optimal is an error.
pub fn solve_subproblem(spec: &SubproblemSpec, opts: &SolverOptions) -> Result<SubproblemSolution> {
    let asm = assemble(spec)?;
    let sol = solve(&asm.sdp, opts)?;
    if sol.status != SdpStatus::Optimal {
        return Err(Error::NumericalBreakdown(format!(
            "link {} subproblem ended with status {:?} after {} iterations (gap {:e})",
            spec.k, sol.status, sol.iterations, sol.gap
        )));
    }
    extract(&asm, sol)
}

/// The robust block evaluated at a fixed `(Q, θ)` in physical units.
pub fn s_procedure_matrix(spec: &RobustConstraintSpec, q: &HermitianMatrix, theta: f64) -> HermitianMatrix {
    let m = q.dim();
    let var = HermitianVar { offset: 0, dim: m };
    let lmi = s_procedure_lmi(spec, var, m * m, None);
    let mut x = hermitian_to_params(q);
    x.push(theta);
    lmi.evaluate(&x)
}

/// Worst-case interference check used to report feasibility of a candidate.
pub fn robust_satisfied(spec: &RobustConstraintSpec, q: &HermitianMatrix, rel_tol: f64) -> Result<bool> {
    let (wc, _) = worst_case_interference(&spec.g_hat, spec.eps, q)?;
    Ok(wc <= spec.iota * (1.0 + rel_tol))
}

/// Real embedding of a complex dual block mapped back to Hermitian form.
pub fn complex_dual(z: &RealMatrix) -> HermitianMatrix {
    real_embedding_inverse(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{complex_gaussian, hermitian_eig, hermitian_sqrt};
    use crate::sdp::check_certificate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn opts() -> SolverOptions {
        SolverOptions {
            tol_gap: 1e-10,
            tol_feas: 1e-10,
            ..SolverOptions::default()
        }
    }

    fn random_psd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> HermitianMatrix {
        let a = complex_gaussian(rng, n, n, 1.0);
        HermitianMatrix::symmetrize(&a * a.adjoint() * C64::new(scale / n as f64, 0.0))
    }

    fn min_eig(h: &HermitianMatrix) -> f64 {
        *hermitian_eig(h).unwrap().0.last().unwrap()
    }

    #[test]
    fn basis_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = random_psd(&mut rng, 3, 1.0);
        let back = hermitian_from_params(&hermitian_to_params(&h), 3);
        assert!((back.as_matrix() - h.as_matrix()).norm() < 1e-15);
        let basis = hermitian_basis(3);
        assert_eq!(basis.len(), 9);
        let params = hermitian_to_params(&h);
        let mut sum = ComplexMatrix::zeros(3, 3);
        for (e, v) in basis.iter().zip(&params) {
            sum += e * C64::new(*v, 0.0);
        }
        assert!((sum - h.as_matrix()).norm() < 1e-15);
    }

    #[test]
    fn s_procedure_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = complex_gaussian(&mut rng, 2, 2, 1.0);
        // Q = 0, θ = 0: only the corner ι remains
        let spec = RobustConstraintSpec { g_hat: g.clone(), eps: 0.3, iota: 0.5 };
        assert!(min_eig(&s_procedure_matrix(&spec, &HermitianMatrix::zeros(2), 0.0)) >= 0.0);
        let neg = RobustConstraintSpec { iota: -0.1, ..spec.clone() };
        assert!(min_eig(&s_procedure_matrix(&neg, &HermitianMatrix::zeros(2), 0.0)) < 0.0);

        // ε = 0: large θ decouples, leaving the nominal test
        let q = random_psd(&mut rng, 2, 1.0);
        let nominal = (&g * q.as_matrix() * g.adjoint()).trace().re;
        for (iota, ok) in [(nominal * 1.01, true), (nominal * 0.99, false)] {
            let s = RobustConstraintSpec { g_hat: g.clone(), eps: 0.0, iota };
            let big = s_procedure_matrix(&s, &q, 1e6);
            let lm = 4;
            let schur = big[(lm, lm)].re
                - (big.view((lm, 0), (1, lm)) * big.view((0, 0), (lm, lm)).try_inverse().unwrap() * big.view((0, lm), (lm, 1)))
                    [(0, 0)]
                    .re;
            assert_eq!(schur >= 0.0, ok);
        }
    }

    fn fixed_q_lmi(lmi: &ComplexLmi, q: &HermitianMatrix, q_var: HermitianVar) -> ComplexLmi {
        let vals: Vec<(usize, f64)> = hermitian_to_params(q)
            .into_iter()
            .enumerate()
            .map(|(i, v)| (q_var.offset + i, v))
            .collect();
        lmi.fix(&vals)
    }

    /// Minimizes `Tr X` over the second Hermitian variable of a two-variable
    /// LMI after fixing `Q`.
    fn min_trace_of_second(lmi: &ComplexLmi, q: &HermitianMatrix, q_var: HermitianVar, x_var: HermitianVar) -> HermitianMatrix {
        let fixed = fixed_q_lmi(lmi, q, q_var);
        let mut shifted = ComplexLmi {
            f0: fixed.f0.clone(),
            terms: fixed.terms.iter().map(|(i, f)| (i - x_var.offset, f.clone())).collect(),
        };
        shifted.terms.sort_by_key(|(i, _)| *i);
        let mut p = SdpProblem::new(x_var.len());
        for i in 0..x_var.dim {
            p.c[i] = 1.0;
        }
        shifted.add_to(&mut p, false);
        let sol = solve(&p, &opts()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        check_certificate(&p, &sol, 1e-10).unwrap();
        hermitian_from_params(&sol.x, x_var.dim)
    }

    #[test]
    fn mse_epigraph_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let qv = HermitianVar { offset: 0, dim: 2 };
        let tv = HermitianVar { offset: 4, dim: 2 };
        for case in 0..5 {
            let h = complex_gaussian(&mut rng, 2, 2, 1.0);
            let r = random_psd(&mut rng, 2, 1.0).add(&HermitianMatrix::identity(2).scale(0.2));
            let r_half = hermitian_sqrt(&r).unwrap();
            let q = if case == 0 { HermitianMatrix::zeros(2) } else { random_psd(&mut rng, 2, 1.0) };
            let lmi = mse_epigraph_lmi(&h, &r_half, qv, tv);
            let t = min_trace_of_second(&lmi, &q, qv, tv);
            let a = q.congruence(&h).add(&r);
            let a_inv = a.as_matrix().clone().try_inverse().unwrap();
            let direct = (r_half.as_matrix() * a_inv * r_half.as_matrix()).trace().re;
            assert!((t.trace_re() - direct).abs() < 1e-6);
            if case == 0 {
                assert!((t.trace_re() - 2.0).abs() < 1e-6);
            }
        }
        // scalar: H = 1, R = 1, Q = p gives T = 1/(1+p)
        let one = ComplexMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        let lmi = mse_epigraph_lmi(
            &one,
            &HermitianMatrix::identity(1),
            HermitianVar { offset: 0, dim: 1 },
            HermitianVar { offset: 1, dim: 1 },
        );
        let t = min_trace_of_second(
            &lmi,
            &HermitianMatrix::from_real_diagonal(&[3.0]),
            HermitianVar { offset: 0, dim: 1 },
            HermitianVar { offset: 1, dim: 1 },
        );
        assert!((t.trace_re() - 0.25).abs() < 1e-8);
    }

    #[test]
    fn proximal_block_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let qv = HermitianVar { offset: 0, dim: 2 };
        let yv = HermitianVar { offset: 4, dim: 2 };
        let prev = random_psd(&mut rng, 2, 1.0);
        let y = min_trace_of_second(&proximal_lmi(qv, &prev, yv), &prev, qv, yv);
        assert!(y.trace_re().abs() < 1e-7);
        for _ in 0..5 {
            let q = random_psd(&mut rng, 2, 1.0);
            let y = min_trace_of_second(&proximal_lmi(qv, &prev, yv), &q, qv, yv);
            let dist = (q.as_matrix() - prev.as_matrix()).norm_squared();
            assert!((y.trace_re() - dist).abs() < 1e-7);
        }
        let sq = min_trace_of_second(
            &proximal_lmi(HermitianVar { offset: 0, dim: 1 }, &HermitianMatrix::from_real_diagonal(&[1.0]), HermitianVar { offset: 1, dim: 1 }),
            &HermitianMatrix::from_real_diagonal(&[2.5]),
            HermitianVar { offset: 0, dim: 1 },
            HermitianVar { offset: 1, dim: 1 },
        );
        assert!((sq.trace_re() - 2.25).abs() < 1e-8);
    }

    fn scalar_spec(mode: SubproblemMode, h: f64, sigma2: f64, d: f64, p_max: f64) -> SubproblemSpec {
        SubproblemSpec {
            k: 0,
            mode,
            d: Some(HermitianMatrix::from_real_diagonal(&[d])),
            h_kk: Some(ComplexMatrix::from_element(1, 1, C64::new(h, 0.0))),
            r_half: Some(HermitianMatrix::from_real_diagonal(&[sigma2.sqrt()])),
            p_max,
            robust: Vec::new(),
            prev_q: None,
            tau: None,
        }
    }

    #[test]
    fn single_link_scalar_matches_grid() {
        // maximize h² p / (h² p + σ²) + d p over [0, p_max]
        let (h, s2, d, pmax) = (1.3, 0.4, -0.35, 3.0);
        let sol = solve_subproblem(&scalar_spec(SubproblemMode::Plain, h, s2, d, pmax), &opts()).unwrap();
        let f = |p: f64| h * h * p / (h * h * p + s2) + d * p;
        let best = (0..=300_000)
            .map(|i| pmax * i as f64 / 300_000.0)
            .max_by(|a, b| f(*a).partial_cmp(&f(*b)).unwrap())
            .unwrap();
        assert!((sol.q[(0, 0)].re - best).abs() < 1e-4);
        assert!((1.0 - f(sol.q[(0, 0)].re) - sol.objective).abs() < 1e-8);
        // without the linear penalty the cap binds
        let sol = solve_subproblem(&scalar_spec(SubproblemMode::Plain, h, s2, 0.0, pmax), &opts()).unwrap();
        assert!((sol.q[(0, 0)].re - pmax).abs() < 1e-7);
    }

    #[test]
    fn binding_scalar_robust_constraint() {
        let (g, eps, iota) = (0.8, 0.1, 0.2);
        let mut spec = scalar_spec(SubproblemMode::Plain, 1.0, 1.0, 0.0, 1.0);
        spec.robust.push(RobustConstraintSpec {
            g_hat: ComplexMatrix::from_element(1, 1, C64::new(g, 0.0)),
            eps,
            iota,
        });
        let sol = solve_subproblem(&spec, &opts()).unwrap();
        let expect = iota / (g + eps).powi(2);
        assert!((sol.q[(0, 0)].re - expect).abs() < 1e-8);
    }

    #[test]
    fn zero_budget_forces_zero_power() {
        let mut spec = scalar_spec(SubproblemMode::Budgeted, 1.0, 1.0, 0.0, 1.0);
        spec.robust.push(RobustConstraintSpec {
            g_hat: ComplexMatrix::from_element(1, 1, C64::new(0.5, 0.2)),
            eps: 0.1,
            iota: 0.0,
        });
        let sol = solve_subproblem(&spec, &SolverOptions::default()).unwrap();
        assert!(sol.q[(0, 0)].re.abs() < 1e-6);
    }

    #[test]
    fn missing_fields_are_reported() {
        let mut spec = scalar_spec(SubproblemMode::Proximal, 1.0, 1.0, 0.0, 1.0);
        assert!(matches!(assemble(&spec), Err(Error::InconsistentSpec(m)) if m.contains("prev_q")));
        spec.prev_q = Some(HermitianMatrix::zeros(1));
        assert!(matches!(assemble(&spec), Err(Error::InconsistentSpec(m)) if m.contains("tau")));
        spec.tau = Some(0.0);
        assert!(assemble(&spec).is_err());
        spec.mode = SubproblemMode::Plain;
        spec.h_kk = None;
        assert!(matches!(assemble(&spec), Err(Error::InconsistentSpec(m)) if m.contains("h_kk")));
    }

    fn random_spec(rng: &mut ChaCha8Rng, mode: SubproblemMode) -> SubproblemSpec {
        let h = complex_gaussian(rng, 2, 2, 1.0);
        let r = random_psd(rng, 2, 0.5).add(&HermitianMatrix::identity(2).scale(0.3));
        let d = random_psd(rng, 2, 0.2).scale(-1.0);
        let g = complex_gaussian(rng, 2, 2, 1.0);
        SubproblemSpec {
            k: 0,
            mode,
            d: Some(d),
            h_kk: Some(h),
            r_half: Some(hermitian_sqrt(&r).unwrap()),
            p_max: 2.0,
            robust: vec![RobustConstraintSpec { eps: 0.2 * g.norm(), g_hat: g, iota: 0.5 }],
            prev_q: None,
            tau: None,
        }
    }

    #[test]
    fn proximal_with_large_tau_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let plain = random_spec(&mut rng, SubproblemMode::Plain);
        let base = solve_subproblem(&plain, &opts()).unwrap();
        let prox = SubproblemSpec {
            mode: SubproblemMode::Proximal,
            prev_q: Some(HermitianMatrix::zeros(2)),
            tau: Some(1e7),
            ..plain.clone()
        };
        let sol = solve_subproblem(&prox, &opts()).unwrap();
        assert!((sol.q.as_matrix() - base.q.as_matrix()).norm() < 1e-4);
    }

    #[test]
    fn optimum_satisfies_epigraph_and_robust_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..5 {
            let spec = random_spec(&mut rng, SubproblemMode::Plain);
            let asm = assemble(&spec).unwrap();
            let sol = solve(&asm.sdp, &opts()).unwrap();
            check_certificate(&asm.sdp, &sol, 1e-10).unwrap();
            let out = extract(&asm, sol).unwrap();
            let h = spec.h_kk.as_ref().unwrap();
            let rh = spec.r_half.as_ref().unwrap();
            let a = out.q.congruence(h).add(&HermitianMatrix::symmetrize(rh.as_matrix() * rh.as_matrix()));
            let inv = a.as_matrix().clone().try_inverse().unwrap();
            let direct = (rh.as_matrix() * inv * rh.as_matrix()).trace().re;
            assert!((out.t_mat.as_ref().unwrap().trace_re() - direct).abs() < 1e-6);
            assert!(robust_satisfied(&spec.robust[0], &out.q, 1e-6).unwrap());
            assert!(out.q.trace_re() <= spec.p_max + 1e-7);
        }
    }

    #[test]
    fn budget_multiplier_tracks_sensitivity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut spec = random_spec(&mut rng, SubproblemMode::Budgeted);
        spec.robust[0].iota = 0.05;
        let base = solve_subproblem(&spec, &opts()).unwrap();
        assert!(base.lambda[0] > 0.0);
        let delta = 1e-5;
        spec.robust[0].iota += delta;
        let bumped = solve_subproblem(&spec, &opts()).unwrap();
        let gain = (base.objective - bumped.objective) / delta;
        assert!((gain - base.lambda[0]).abs() <= 0.05 * base.lambda[0], "{gain} vs {}", base.lambda[0]);
    }

    #[test]
    fn multiple_pus_each_get_a_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut spec = random_spec(&mut rng, SubproblemMode::Plain);
        let g = complex_gaussian(&mut rng, 3, 2, 1.0);
        spec.robust.push(RobustConstraintSpec { eps: 0.0, g_hat: g, iota: 0.3 });
        let asm = assemble(&spec).unwrap();
        assert!(matches!(asm.layout.robust[0], RobustLayout::Lmi { .. }));
        assert!(matches!(asm.layout.robust[1], RobustLayout::Linear { .. }));
        let sol = solve_subproblem(&spec, &opts()).unwrap();
        for r in &spec.robust {
            assert!(robust_satisfied(r, &sol.q, 1e-6).unwrap());
        }
    }
}
