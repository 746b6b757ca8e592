//! Closed-form MSE quantities at the covariance level: per-link utilities,
//! MMSE receive filters, error matrices, the gradient of the other links'
//! utilities with respect to one covariance, and PU interference (nominal,
//! realized and worst case).

use nalgebra::Cholesky;

use crate::error::{Error, Result};
use crate::matrix::{hermitian_eig, hermitian_sqrt, ComplexMatrix, HermitianMatrix, C64};
use crate::scenario::ChannelSet;

/// Current iterate: one transmit covariance per link and, once computed, the
/// matching receive filters.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceProfile {
    pub q: Vec<HermitianMatrix>,
    pub w: Option<Vec<ComplexMatrix>>,
}

impl CovarianceProfile {
    pub fn zeros(ch: &ChannelSet) -> Self {
        CovarianceProfile {
            q: (0..ch.links()).map(|k| HermitianMatrix::zeros(ch.tx_antennas(k))).collect(),
            w: None,
        }
    }

    pub fn new(q: Vec<HermitianMatrix>) -> Self {
        CovarianceProfile { q, w: None }
    }

    /// Checks shapes, PSD-ness and the power caps of `ch`.
    pub fn validate(&self, ch: &ChannelSet) -> Result<()> {
        if self.q.len() != ch.links() {
            return Err(Error::ShapeMismatch(format!(
                "profile has {} covariances for {} links",
                self.q.len(),
                ch.links()
            )));
        }
        for (k, q) in self.q.iter().enumerate() {
            if q.dim() != ch.tx_antennas(k) {
                return Err(Error::ShapeMismatch(format!("Q[{k}] has dim {}", q.dim())));
            }
            let (vals, _) = hermitian_eig(q)?;
            let top = vals[0].abs().max(f64::MIN_POSITIVE);
            let min = *vals.last().unwrap();
            if min < -1e-10 * top {
                return Err(Error::NotPsd { min_eig: min, max_eig: vals[0] });
            }
            if q.trace_re() > ch.p_max[k] + 1e-8 {
                return Err(Error::InvalidConfig(format!(
                    "Tr Q[{k}] = {} exceeds p_max = {}",
                    q.trace_re(),
                    ch.p_max[k]
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtilityReport {
    pub u: Vec<f64>,
    pub sum_u: f64,
    pub sum_mse: f64,
    /// `A_k`, total received covariance at receiver `k`.
    pub a: Vec<HermitianMatrix>,
    /// `R_{k,k}`, interference-plus-noise covariance at receiver `k`.
    pub r: Vec<HermitianMatrix>,
}

/// `(R_{k,k}, V_k)`: interference-plus-noise covariance and desired-signal
/// covariance at receiver `k`. `A_k = B_k = R_{k,k} + V_k`.
pub fn link_covariances(ch: &ChannelSet, q: &[HermitianMatrix], k: usize) -> (HermitianMatrix, HermitianMatrix) {
    let n = ch.rx_antennas(k);
    let mut r = ComplexMatrix::identity(n, n) * C64::new(ch.sigma2[k], 0.0);
    for (i, qi) in q.iter().enumerate() {
        if i != k {
            r += qi.congruence(&ch.h[k][i]).as_matrix();
        }
    }
    (HermitianMatrix::symmetrize(r), q[k].congruence(&ch.h[k][k]))
}

fn cholesky(m: &HermitianMatrix) -> Result<Cholesky<C64, nalgebra::Dyn>> {
    Cholesky::new(m.as_matrix().clone())
        .ok_or_else(|| Error::SingularSystem("received covariance is not positive definite".into()))
}

/// `Tr{V A^{-1}}` with `A = V + R`.
pub fn link_utility(r: &HermitianMatrix, v: &HermitianMatrix) -> Result<f64> {
    let a = r.add(v);
    let x = cholesky(&a)?.solve(v.as_matrix());
    Ok(x.trace().re)
}

pub fn utility(ch: &ChannelSet, prof: &CovarianceProfile) -> Result<UtilityReport> {
    let k_links = ch.links();
    let mut u = Vec::with_capacity(k_links);
    let mut a = Vec::with_capacity(k_links);
    let mut r = Vec::with_capacity(k_links);
    let mut sum_mse = 0.0;
    for k in 0..k_links {
        let (rk, vk) = link_covariances(ch, &prof.q, k);
        let uk = link_utility(&rk, &vk)?;
        sum_mse += ch.tx_antennas(k) as f64 - uk;
        u.push(uk);
        a.push(rk.add(&vk));
        r.push(rk);
    }
    Ok(UtilityReport {
        sum_u: u.iter().sum(),
        u,
        sum_mse,
        a,
        r,
    })
}

/// Sum utility `U = Σ_k u_k`.
pub fn sum_utility(ch: &ChannelSet, q: &[HermitianMatrix]) -> Result<f64> {
    let mut s = 0.0;
    for k in 0..ch.links() {
        let (r, v) = link_covariances(ch, q, k);
        s += link_utility(&r, &v)?;
    }
    Ok(s)
}

/// MMSE filters `W_k = F_k^H H_kk^H A_k^{-1}`, stored into `prof.w`.
pub fn optimal_receiver(ch: &ChannelSet, prof: &mut CovarianceProfile) -> Result<Vec<ComplexMatrix>> {
    let mut ws = Vec::with_capacity(ch.links());
    for k in 0..ch.links() {
        let (r, v) = link_covariances(ch, &prof.q, k);
        let chol = cholesky(&r.add(&v))?;
        let f = hermitian_sqrt(&prof.q[k])?;
        // A is Hermitian, so W^H = A^{-1} H F
        let wh = chol.solve(&(&ch.h[k][k] * f.as_matrix()));
        ws.push(wh.adjoint());
    }
    prof.w = Some(ws.clone());
    Ok(ws)
}

/// `E_k = W A W^H − W H F − F^H H^H W^H + I` for the stored filter `W_k`.
pub fn mse_matrix(ch: &ChannelSet, prof: &CovarianceProfile, k: usize) -> Result<HermitianMatrix> {
    let w = prof.w.as_ref().ok_or(Error::MissingReceiver)?;
    let w = &w[k];
    let (r, v) = link_covariances(ch, &prof.q, k);
    let a = r.add(&v);
    let f = hermitian_sqrt(&prof.q[k])?;
    let whf = w * &ch.h[k][k] * f.as_matrix();
    let m = w.nrows();
    let e = w * a.as_matrix() * w.adjoint() - &whf - whf.adjoint() + ComplexMatrix::identity(m, m);
    Ok(HermitianMatrix::symmetrize(e))
}

/// One summand `H_jk^H B_j^{-1} V_j B_j^{-1} H_jk` of the gradient, built
/// from the pair `(B_j, V_j)` that receiver `j` broadcasts.
pub fn gradient_term(h_jk: &ComplexMatrix, b_j: &HermitianMatrix, v_j: &HermitianMatrix) -> Result<HermitianMatrix> {
    let x = cholesky(b_j)?.solve(h_jk);
    Ok(HermitianMatrix::symmetrize(x.adjoint() * v_j.as_matrix() * x))
}

/// Whether cross link `H_jk` enters `D_k` under a squared-Frobenius gain
/// floor.
pub fn is_neighbor(h_jk: &ComplexMatrix, threshold: f64) -> bool {
    h_jk.norm_squared() >= threshold
}

/// `D_k = −Σ_{j≠k} H_jk^H B_j^{-1} V_j B_j^{-1} H_jk`, the gradient of
/// `f_k(Q_k) = Σ_{j≠k} u_j` with respect to `Q_k^*`. Cross links with
/// `‖H_jk‖_F² < neighbor_threshold` are skipped.
pub fn gradient_d(ch: &ChannelSet, q: &[HermitianMatrix], k: usize, neighbor_threshold: f64) -> Result<HermitianMatrix> {
    let mut d = HermitianMatrix::zeros(ch.tx_antennas(k));
    for j in 0..ch.links() {
        if j == k || !is_neighbor(&ch.h[j][k], neighbor_threshold) {
            continue;
        }
        let (r, v) = link_covariances(ch, q, j);
        d = d.sub(&gradient_term(&ch.h[j][k], &r.add(&v), &v)?);
    }
    Ok(d)
}

/// Gradient of `u_k` with respect to its own covariance:
/// `H^H A^{-1} R A^{-1} H`.
pub fn own_gradient(ch: &ChannelSet, q: &[HermitianMatrix], k: usize) -> Result<HermitianMatrix> {
    let (r, v) = link_covariances(ch, q, k);
    let x = cholesky(&r.add(&v))?.solve(&ch.h[k][k]);
    Ok(HermitianMatrix::symmetrize(x.adjoint() * r.as_matrix() * x))
}

/// Full block gradient `∇_k U = own_gradient + D_k`.
pub fn sum_gradient(ch: &ChannelSet, q: &[HermitianMatrix], k: usize) -> Result<HermitianMatrix> {
    Ok(own_gradient(ch, q, k)?.add(&gradient_d(ch, q, k, 0.0)?))
}

/// `Tr{G Q G^H}`.
pub fn interference_with(g: &ComplexMatrix, q: &HermitianMatrix) -> f64 {
    q.congruence(g).trace_re()
}

/// Interference of link `k` at PU `pu` through the estimate or the true
/// channel.
pub fn interference(ch: &ChannelSet, q_k: &HermitianMatrix, k: usize, pu: usize, use_true: bool) -> Result<f64> {
    let g = if use_true {
        &ch.g_true.as_ref().ok_or(Error::MissingTrueChannel)?[pu][k]
    } else {
        &ch.g_hat[pu][k]
    };
    Ok(interference_with(g, q_k))
}

/// `max_{‖ΔG‖_F ≤ ε} Tr{(Ĝ+ΔG) Q (Ĝ+ΔG)^H}` and a maximizer `ΔG`.
///
/// With `Z = ΔG^H` the objective is `Tr{Z^H Q Z} + 2 Re Tr{Z^H Q Ĝ^H} + c`.
/// Diagonalizing `Q = U Λ U^H` and writing `Y = U^H Z`, `β_i = λ_i (U^H
/// Ĝ^H)_i` the maximizer is `y_i = β_i / (μ − λ_i)` with the multiplier `μ ≥
/// λ_max` fixed by `‖Y‖_F = ε`, found by bisection.
pub fn worst_case_interference(g_hat: &ComplexMatrix, eps: f64, q: &HermitianMatrix) -> Result<(f64, ComplexMatrix)> {
    let (l, m) = g_hat.shape();
    let nominal = interference_with(g_hat, q);
    if eps == 0.0 {
        return Ok((nominal, ComplexMatrix::zeros(l, m)));
    }
    let (vals, u) = hermitian_eig(q)?;
    let lam: Vec<f64> = vals.iter().map(|&x| x.max(0.0)).collect();
    let lmax = lam[0];
    if lmax == 0.0 {
        return Ok((nominal, ComplexMatrix::zeros(l, m)));
    }
    let w = u.adjoint() * g_hat.adjoint();
    // beta row norms squared
    let beta2: Vec<f64> = (0..m).map(|i| lam[i] * lam[i] * w.row(i).norm_squared()).collect();
    let b_norm = beta2.iter().sum::<f64>().sqrt();
    let top: Vec<bool> = lam.iter().map(|&x| x >= lmax * (1.0 - 1e-12)).collect();
    let beta_top: f64 = (0..m).filter(|&i| top[i]).map(|i| beta2[i]).sum();

    let phi = |mu: f64, skip_top: bool| -> f64 {
        (0..m)
            .filter(|&i| !(skip_top && top[i]))
            .map(|i| beta2[i] / (mu - lam[i]).powi(2))
            .sum()
    };

    let eps2 = eps * eps;
    let mut y = ComplexMatrix::zeros(m, l);
    let hard = beta_top <= 1e-28 * b_norm * b_norm && phi(lmax, true) <= eps2;
    if b_norm == 0.0 || hard {
        // multiplier pinned at λ_max; fill the remaining norm along the top
        // eigenvector
        let mut used = 0.0;
        for i in 0..m {
            if !top[i] {
                let s = lam[i] / (lmax - lam[i]);
                for c in 0..l {
                    y[(i, c)] = w[(i, c)] * s;
                }
                used += beta2[i] / (lmax - lam[i]).powi(2);
            }
        }
        y[(0, 0)] += C64::new((eps2 - used).max(0.0).sqrt(), 0.0);
    } else {
        let mut lo = lmax;
        let mut hi = lmax + b_norm / eps;
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if phi(mid, false) > eps2 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-12 * hi {
                break;
            }
        }
        let mu = hi;
        for i in 0..m {
            let s = lam[i] / (mu - lam[i]);
            for c in 0..l {
                y[(i, c)] = w[(i, c)] * s;
            }
        }
        let n = y.norm();
        if n > 0.0 {
            y *= C64::new(eps / n, 0.0);
        }
    }
    let delta = (&u * y).adjoint();
    let value = interference_with(&(g_hat + &delta), q);
    Ok((value.max(nominal), delta))
}

/// Worst-case interference of link `k` at PU `pu` under the instance radius.
pub fn link_worst_case(ch: &ChannelSet, q_k: &HermitianMatrix, k: usize, pu: usize) -> Result<f64> {
    Ok(worst_case_interference(&ch.g_hat[pu][k], ch.eps[pu][k], q_k)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{complex_gaussian, kron, vec};
    use crate::scenario::uniform_in_ball;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_psd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> HermitianMatrix {
        let a = complex_gaussian(rng, n, n, 1.0);
        HermitianMatrix::symmetrize(&a * a.adjoint() * C64::new(scale / n as f64, 0.0))
    }

    /// Unit-scale instance with `K` links; channel gains and noise are O(1)
    /// so that finite differences are well conditioned.
    pub(crate) fn unit_instance(rng: &mut ChaCha8Rng, k: usize, m: usize, n: usize) -> ChannelSet {
        let h = (0..k)
            .map(|r| (0..k).map(|j| complex_gaussian(rng, n, m, if r == j { 1.0 } else { 0.4 })).collect())
            .collect();
        let g_hat = vec![(0..k).map(|_| complex_gaussian(rng, 2, m, 1.0)).collect::<Vec<_>>()];
        let eps = vec![g_hat[0].iter().map(|g: &ComplexMatrix| 0.2 * g.norm()).collect()];
        ChannelSet {
            h,
            g_hat,
            g_true: None,
            eps,
            sigma2: vec![0.5; k],
            p_max: vec![2.0; k],
        }
    }

    fn scalar_set(h: f64, sigma2: f64) -> ChannelSet {
        let one = |x: f64| ComplexMatrix::from_element(1, 1, C64::new(x, 0.0));
        ChannelSet {
            h: vec![vec![one(h)]],
            g_hat: vec![vec![one(1.0)]],
            g_true: None,
            eps: vec![vec![0.0]],
            sigma2: vec![sigma2],
            p_max: vec![10.0],
        }
    }

    fn scalar_q(p: f64) -> HermitianMatrix {
        HermitianMatrix::from_real_diagonal(&[p])
    }

    #[test]
    fn zero_profile_has_zero_utility() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ch = unit_instance(&mut rng, 3, 2, 2);
        let rep = utility(&ch, &CovarianceProfile::zeros(&ch)).unwrap();
        assert!(rep.u.iter().all(|&u| u.abs() < 1e-15));
        assert!((rep.sum_mse - 6.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_link() {
        let ch = scalar_set(1.0, 1.0);
        let p = 3.0;
        let mut prof = CovarianceProfile::new(vec![scalar_q(p)]);
        let rep = utility(&ch, &prof).unwrap();
        assert!((rep.u[0] - p / (p + 1.0)).abs() < 1e-14);
        let w = optimal_receiver(&ch, &mut prof).unwrap();
        assert!((w[0][(0, 0)].re - p.sqrt() / (p + 1.0)).abs() < 1e-14);

        let half = CovarianceProfile {
            q: vec![scalar_q(1.0)],
            w: Some(vec![ComplexMatrix::from_element(1, 1, C64::new(0.5, 0.0))]),
        };
        assert!((mse_matrix(&ch, &half, 0).unwrap()[(0, 0)].re - 0.5).abs() < 1e-14);
    }

    #[test]
    fn zero_q_gives_zero_filter_and_identity_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ch = unit_instance(&mut rng, 2, 2, 3);
        let mut prof = CovarianceProfile::zeros(&ch);
        let w = optimal_receiver(&ch, &mut prof).unwrap();
        assert!(w.iter().all(|w| w.norm() == 0.0));
        let e = mse_matrix(&ch, &prof, 1).unwrap();
        assert!((e.as_matrix() - ComplexMatrix::identity(2, 2)).norm() < 1e-15);
        assert!(matches!(
            mse_matrix(&ch, &CovarianceProfile::zeros(&ch), 0),
            Err(Error::MissingReceiver)
        ));
    }

    /// Error covariance built directly from its definition
    /// `E{(W y − s)(W y − s)^H}` with `y = H F s + Σ H_i F_i s_i + n`.
    fn error_from_definition(ch: &ChannelSet, q: &[HermitianMatrix], w: &ComplexMatrix, k: usize) -> ComplexMatrix {
        let f = hermitian_sqrt(&q[k]).unwrap();
        let m = q[k].dim();
        let signal = w * &ch.h[k][k] * f.as_matrix() - ComplexMatrix::identity(m, m);
        let mut e = &signal * signal.adjoint();
        for i in 0..ch.links() {
            if i != k {
                let fi = hermitian_sqrt(&q[i]).unwrap();
                let t = w * &ch.h[k][i] * fi.as_matrix();
                e += &t * t.adjoint();
            }
        }
        e + w * w.adjoint() * C64::new(ch.sigma2[k], 0.0)
    }

    #[test]
    fn utility_matches_error_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let ch = unit_instance(&mut rng, 2, 2, 2);
            let q: Vec<_> = (0..2).map(|_| random_psd(&mut rng, 2, 1.0)).collect();
            let mut prof = CovarianceProfile::new(q.clone());
            let rep = utility(&ch, &prof).unwrap();
            let w = optimal_receiver(&ch, &mut prof).unwrap();
            for k in 0..2 {
                let e = error_from_definition(&ch, &q, &w[k], k);
                assert!((2.0 - e.trace().re - rep.u[k]).abs() < 1e-12);
                let ek = mse_matrix(&ch, &prof, k).unwrap();
                assert!((ek.as_matrix() - &e).norm() < 1e-12);
            }
            assert!((rep.sum_mse - (4.0 - rep.sum_u)).abs() < 1e-12);
        }
    }

    #[test]
    fn optimal_receiver_beats_perturbations() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ch = unit_instance(&mut rng, 3, 2, 2);
        let q: Vec<_> = (0..3).map(|_| random_psd(&mut rng, 2, 1.0)).collect();
        let mut prof = CovarianceProfile::new(q.clone());
        let w = optimal_receiver(&ch, &mut prof).unwrap();
        for k in 0..3 {
            let best = error_from_definition(&ch, &q, &w[k], k).trace().re;
            for _ in 0..100 {
                let d = complex_gaussian(&mut rng, 2, 2, 1e-2);
                let other = error_from_definition(&ch, &q, &(&w[k] + d), k).trace().re;
                assert!(best <= other + 1e-14);
            }
        }
    }

    fn others_utility(ch: &ChannelSet, q: &[HermitianMatrix], k: usize) -> f64 {
        (0..ch.links())
            .filter(|&j| j != k)
            .map(|j| {
                let (r, v) = link_covariances(ch, q, j);
                link_utility(&r, &v).unwrap()
            })
            .sum()
    }

    /// Central differences on real and imaginary coordinates, assembled into
    /// the Hermitian matrix whose trace pairing gives the directional
    /// derivative.
    pub(crate) fn fd_gradient(ch: &ChannelSet, q: &[HermitianMatrix], k: usize, h: f64) -> ComplexMatrix {
        let m = q[k].dim();
        let f = |dq: &ComplexMatrix, s: f64| {
            let mut qq = q.to_vec();
            qq[k] = HermitianMatrix::symmetrize(q[k].as_matrix() + dq * C64::new(s, 0.0));
            others_utility(ch, &qq, k)
        };
        let mut d = ComplexMatrix::zeros(m, m);
        for a in 0..m {
            let mut e = ComplexMatrix::zeros(m, m);
            e[(a, a)] = C64::new(1.0, 0.0);
            d[(a, a)] = C64::new((f(&e, h) - f(&e, -h)) / (2.0 * h), 0.0);
            for b in (a + 1)..m {
                let mut er = ComplexMatrix::zeros(m, m);
                er[(a, b)] = C64::new(1.0, 0.0);
                er[(b, a)] = C64::new(1.0, 0.0);
                let mut ei = ComplexMatrix::zeros(m, m);
                ei[(a, b)] = C64::new(0.0, 1.0);
                ei[(b, a)] = C64::new(0.0, -1.0);
                let re = (f(&er, h) - f(&er, -h)) / (4.0 * h);
                let im = (f(&ei, h) - f(&ei, -h)) / (4.0 * h);
                d[(a, b)] = C64::new(re, im);
                d[(b, a)] = C64::new(re, -im);
            }
        }
        d
    }

    #[test]
    fn gradient_trivial_cases() {
        let ch = scalar_set(1.0, 1.0);
        let d = gradient_d(&ch, &[scalar_q(1.0)], 0, 0.0).unwrap();
        assert_eq!(d.as_matrix()[(0, 0)], C64::new(0.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ch = unit_instance(&mut rng, 3, 2, 2);
        let zero = CovarianceProfile::zeros(&ch);
        assert_eq!(gradient_d(&ch, &zero.q, 1, 0.0).unwrap().as_matrix().norm(), 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ch = unit_instance(&mut rng, 3, 3, 2);
        let q: Vec<_> = (0..3).map(|_| random_psd(&mut rng, 3, 1.0)).collect();
        for k in 0..3 {
            let d = gradient_d(&ch, &q, k, 0.0).unwrap();
            let fd = fd_gradient(&ch, &q, k, 1e-5);
            let scale = d.as_matrix().camax();
            for (x, y) in d.iter().zip(fd.iter()) {
                assert!((x - y).norm() <= 1e-5 * scale, "{x} vs {y}");
            }
            let (vals, _) = hermitian_eig(&d).unwrap();
            assert!(vals[0] <= 1e-14 * scale);
        }
    }

    #[test]
    fn own_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ch = unit_instance(&mut rng, 2, 2, 2);
        let q: Vec<_> = (0..2).map(|_| random_psd(&mut rng, 2, 1.0)).collect();
        let g = own_gradient(&ch, &q, 0).unwrap();
        let h = 1e-5;
        let mut e = ComplexMatrix::zeros(2, 2);
        e[(0, 1)] = C64::new(0.0, 1.0);
        e[(1, 0)] = C64::new(0.0, -1.0);
        let u_at = |s: f64| {
            let mut qq = q.clone();
            qq[0] = HermitianMatrix::symmetrize(q[0].as_matrix() + &e * C64::new(s, 0.0));
            let (r, v) = link_covariances(&ch, &qq, 0);
            link_utility(&r, &v).unwrap()
        };
        let fd = (u_at(h) - u_at(-h)) / (4.0 * h);
        assert!((fd - g[(0, 1)].im).abs() < 1e-7);
    }

    #[test]
    fn zero_gain_neighbor_can_be_pruned() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut ch = unit_instance(&mut rng, 3, 2, 2);
        ch.h[2][0] = ComplexMatrix::zeros(2, 2);
        let q: Vec<_> = (0..3).map(|_| random_psd(&mut rng, 2, 1.0)).collect();
        let full = gradient_d(&ch, &q, 0, 0.0).unwrap();
        let pruned = gradient_d(&ch, &q, 0, 1e-30).unwrap();
        assert_eq!(full, pruned);
    }

    #[test]
    fn interference_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ch = unit_instance(&mut rng, 2, 2, 2);
        assert_eq!(interference(&ch, &HermitianMatrix::zeros(2), 0, 0, false).unwrap(), 0.0);
        assert!(matches!(
            interference(&ch, &HermitianMatrix::zeros(2), 0, 0, true),
            Err(Error::MissingTrueChannel)
        ));
        let id = ComplexMatrix::identity(2, 2);
        let q = HermitianMatrix::from_real_diagonal(&[0.3, 0.5]);
        assert!((interference_with(&id, &q) - 0.8).abs() < 1e-15);

        // vec/kron quadratic form: Tr{G Q G^H} = vec(G^H)^H (I ⊗ Q) vec(G^H)
        let g = complex_gaussian(&mut rng, 2, 3, 1.0);
        let q = random_psd(&mut rng, 3, 1.0);
        let z = vec(&g.adjoint());
        let big = kron(&ComplexMatrix::identity(2, 2), q.as_matrix());
        let quad = (z.adjoint() * big * &z)[(0, 0)].re;
        assert!((quad - interference_with(&g, &q)).abs() < 1e-12 * quad.abs().max(1.0));
    }

    #[test]
    fn worst_case_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let g = complex_gaussian(&mut rng, 2, 2, 1.0);
        let q = random_psd(&mut rng, 2, 1.0);
        let (v, d) = worst_case_interference(&g, 0.0, &q).unwrap();
        assert_eq!(v, interference_with(&g, &q));
        assert_eq!(d.norm(), 0.0);
        let (v, _) = worst_case_interference(&g, 0.3, &HermitianMatrix::zeros(2)).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn worst_case_scalar_closed_form() {
        let g = ComplexMatrix::from_element(1, 1, C64::new(0.6, -0.8));
        let (v, d) = worst_case_interference(&g, 0.5, &scalar_q(2.0)).unwrap();
        assert!((v - 1.5f64.powi(2) * 2.0).abs() < 1e-12);
        assert!((d.norm() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn worst_case_dominates_ball_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..3 {
            let g = complex_gaussian(&mut rng, 2, 2, 1.0);
            let q = random_psd(&mut rng, 2, 1.0);
            let eps = 0.4;
            let (v, d) = worst_case_interference(&g, eps, &q).unwrap();
            assert!((d.norm() - eps).abs() < 1e-10);
            assert!((interference_with(&(&g + &d), &q) - v).abs() <= 1e-10 * v);
            let mut best: f64 = 0.0;
            for _ in 0..100_000 {
                let dd = uniform_in_ball(&mut rng, 2, 2, eps);
                best = best.max(interference_with(&(&g + dd), &q));
            }
            assert!(v >= best);
            assert!(v - best < 0.05 * v);
        }
    }

    #[test]
    fn worst_case_hard_case() {
        // Ĝ orthogonal to the top eigenvector of Q
        let g = ComplexMatrix::from_row_slice(1, 2, &[C64::new(0.0, 0.0), C64::new(1.0, 0.0)]);
        let q = HermitianMatrix::from_real_diagonal(&[2.0, 1.0]);
        let (v, d) = worst_case_interference(&g, 1.5, &q).unwrap();
        // any maximizer must beat the two axis-aligned candidates
        let cand_top = 2.0 * 1.5f64.powi(2) + 1.0;
        let cand_same = (1.0 + 1.5f64).powi(2);
        assert!(v >= cand_top.max(cand_same) - 1e-12);
        assert!((d.norm() - 1.5).abs() < 1e-12);
        // brute force over a fine grid of the real boundary
        let mut best: f64 = 0.0;
        for i in 0..20000 {
            let t = i as f64 / 20000.0 * std::f64::consts::TAU;
            let dd = ComplexMatrix::from_row_slice(1, 2, &[C64::new(1.5 * t.cos(), 0.0), C64::new(1.5 * t.sin(), 0.0)]);
            best = best.max(interference_with(&(&g + dd), &q));
        }
        assert!((v - best).abs() < 1e-6 * best);
    }

    #[test]
    fn worst_case_monotone_in_eps() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = complex_gaussian(&mut rng, 2, 3, 1.0);
        let q = random_psd(&mut rng, 3, 1.0);
        let mut last = 0.0;
        for i in 0..50 {
            let (v, _) = worst_case_interference(&g, i as f64 * 0.02, &q).unwrap();
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn utility_is_midpoint_concave() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let ch = unit_instance(&mut rng, 3, 2, 2);
        let q: Vec<_> = (0..3).map(|_| random_psd(&mut rng, 2, 1.0)).collect();
        for _ in 0..200 {
            let k = rng.random_range(0..3);
            let qa = random_psd(&mut rng, 2, 2.0);
            let qb = random_psd(&mut rng, 2, 2.0);
            let qm = HermitianMatrix::symmetrize((qa.as_matrix() + qb.as_matrix()) * C64::new(0.5, 0.0));
            let at = |x: &HermitianMatrix| {
                let mut qq = q.clone();
                qq[k] = x.clone();
                let (r, v) = link_covariances(&ch, &qq, k);
                (link_utility(&r, &v).unwrap(), others_utility(&ch, &qq, k))
            };
            let (ua, fa) = at(&qa);
            let (ub, fb) = at(&qb);
            let (um, fm) = at(&qm);
            assert!(um >= 0.5 * (ua + ub) - 1e-9);
            assert!(fm <= 0.5 * (fa + fb) + 1e-9);
        }
    }

    #[test]
    fn surrogate_is_strictly_concave_for_full_rank_links() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let ch = unit_instance(&mut rng, 2, 2, 3);
        let mut q: Vec<_> = (0..2).map(|_| random_psd(&mut rng, 2, 1.0)).collect();
        q[0] = q[0].add(&HermitianMatrix::identity(2).scale(0.5));
        let d = gradient_d(&ch, &q, 0, 0.0).unwrap();
        for _ in 0..50 {
            let y = complex_gaussian(&mut rng, 2, 2, 1.0);
            let y = HermitianMatrix::symmetrize(y * C64::new(0.05, 0.0));
            let s = |t: f64| {
                let mut qq = q.clone();
                qq[0] = q[0].add(&y.scale(t));
                let (r, v) = link_covariances(&ch, &qq, 0);
                link_utility(&r, &v).unwrap() + d.inner(&qq[0])
            };
            let h = 0.5;
            assert!(s(h) - 2.0 * s(0.0) + s(-h) < 0.0);
        }
    }
}
