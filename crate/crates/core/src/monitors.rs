//! Numerical verification of the a-priori estimates on computed states.
//!
//! Every estimate is monitored, never enforced: the analysis only provides
//! existential constants, so each bound is converted into a measured ratio
//! whose stability under data sweeps and grid refinement is the checkable
//! content.

use crate::exec;
use crate::field::{integrate, ScalarField, VolumeWeight};
use crate::geometry::{HermitianStructure, ProblemData};
use crate::residual::PhiDerivatives;
use crate::smallalg::{pencil_eigenvalues_at, r2, ratio_phase, top_plan};
use crate::C64;
use serde::Serialize;

/// All monitored quantities for one accepted state.
#[derive(Debug, Clone, Serialize)]
pub struct MonitorReport {
    pub t: f64,
    pub residual_sup: f64,
    /// C0 sandwich constant: max(sup(e^-phi)/A, A/inf(e^-phi)).
    pub m0: f64,
    pub sup_exp_neg_phi: f64,
    pub inf_exp_neg_phi: f64,
    pub sup_grad2: f64,
    /// sup |ddbar phi|_g / (1 + sup |dphi|_g^2).
    pub c19_ratio: f64,
    /// sup |ddbar phi|_g itself.
    pub sup_ddbar: f64,
    /// largest pencil eigenvalue of omega_t against omega.
    pub lambda1_sup: f64,
    pub cone_m1: f64,
    pub cone_m2: f64,
    /// min over eigen-ordered i >= 2 of G^{ii}/sum_k G^{kk}.
    pub lt94_ratio: f64,
    /// | ||e^{-phi}|| - A | in the problem norm.
    pub norm_residual: f64,
    pub astheno_defect: f64,
    /// min pencil eigenvalue of (e^phi omega / 2 + t alpha e^{-phi} rho)
    /// against omega; negative values flag inadmissibly large rho.
    pub rho_lower_margin: f64,
    /// Integral-inequality gaps (only evaluated at t = 1).
    pub lemma21_gap_negexp: Option<f64>,
    pub lemma21_gap_identity: Option<f64>,
}

/// `M0 = max(sup(e^-phi)/A, A/inf(e^-phi))`.
pub fn c0_sandwich(phi: &ScalarField, a_norm: f64) -> f64 {
    let e = phi.map(|v| (-v).exp());
    (e.max() / a_norm).max(a_norm / e.min())
}

/// Frobenius-type norm |ddbar phi|_g = sqrt(tr(g^{-1} P g^{-1} P)),
/// pointwise sup.
pub fn sup_ddbar_norm(phi: &ScalarField, s: &HermitianStructure) -> f64 {
    let derivs = PhiDerivatives::compute(phi);
    let n = phi.grid.n;
    exec::max_indexed(phi.grid.num_points(), |idx| {
        let ginv = s.ginv_at(idx);
        let p = derivs.hess_mat(idx, n);
        let a = ginv.mul(&p);
        a.mul(&a).trace().re.max(0.0).sqrt()
    })
}

pub fn sup_grad2(phi: &ScalarField, s: &HermitianStructure) -> f64 {
    crate::residual::grad_norm_sq(phi, s).max()
}

/// Ratio `sup |ddbar phi|_g / (1 + sup |dphi|_g^2)`.
pub fn c2_vs_grad_ratio(phi: &ScalarField, s: &HermitianStructure) -> f64 {
    sup_ddbar_norm(phi, s) / (1.0 + sup_grad2(phi, s))
}

/// Weight function choices for the gradient integral inequality.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightChoice {
    /// f(s) = -e^{-2s}, f'(s) = 2 e^{-2s}.
    NegExp2,
    /// f(s) = s, f' = 1.
    Identity,
}

impl WeightChoice {
    fn f(&self, s: f64) -> f64 {
        match self {
            WeightChoice::NegExp2 => -(-2.0 * s).exp(),
            WeightChoice::Identity => s,
        }
    }
    fn fp(&self, s: f64) -> f64 {
        match self {
            WeightChoice::NegExp2 => 2.0 * (-2.0 * s).exp(),
            WeightChoice::Identity => 1.0,
        }
    }
}

/// Gap (right side minus left side) of the L2-gradient integral
/// inequality at t = 1; nonnegative up to quadrature error on valid
/// states.
pub fn lemma21_check(phi: &ScalarField, data: &ProblemData, choice: WeightChoice) -> f64 {
    let s = data.structure.as_ref();
    let grid = phi.grid;
    let n = grid.n;
    let alpha = data.alpha;
    let nfact: f64 = (1..=n).map(|k| k as f64).product();
    let cache = data.contraction_cache();
    let derivs = PhiDerivatives::compute(phi);

    // LHS: ∫ f'(phi) i dphi ∧ dbar phi ∧ (e^phi omega + alpha e^{-phi} rho)
    //        ∧ omega^{n-2}
    let lhs_ratio = ScalarField::from_fn(grid, |idx| {
        let pv = phi.data[idx];
        let gr = derivs.grad_mat(idx, n);
        let mut sp = s.g_at(idx);
        sp.scale(C64::new(pv.exp(), 0.0));
        sp.add_scaled(&cache.rho_mat.at(idx), C64::new(alpha * (-pv).exp(), 0.0));
        choice.fp(pv) * r2(&cache.ginv.at(idx), &gr, &sp).re
    });
    let lhs = nfact * integrate(&lhs_ratio, s);

    // RHS term 1: -2 ∫ f' i dphi ∧ (e^phi dbar omega - alpha e^{-phi}
    // dbar rho) ∧ omega^{n-2}  (complex per point; imaginary parts cancel
    // against term 2 in the total)
    let rhs1_re = ScalarField::from_fn(grid, |idx| {
        let pv = phi.data[idx];
        let df = derivs.dz_at(idx, n);
        let w_om = cache.w_omega.at(idx);
        let w_rho = cache.w_rho.at(idx);
        let mut v = C64::new(0.0, 0.0);
        for i in 0..n {
            v += df[i] * (w_om[i] * pv.exp() - w_rho[i] * (alpha * (-pv).exp()));
        }
        -2.0 * choice.fp(pv) * v.re
    });

    // RHS term 2: -2 ∫ f' dbar phi ∧ (e^phi omega - alpha e^{-phi} rho)
    //               ∧ i d omega^{n-2}
    let rhs2_re = if s.d_omega.is_zero() || n == 2 {
        ScalarField::zeros(grid)
    } else {
        let plan = top_plan(3, &[(0, 1), (1, 1), (2, 1)]);
        let nc21 = crate::smallalg::binomial(n, 2) * n;
        ScalarField::from_fn(grid, |idx| {
            let pv = phi.data[idx];
            let df = derivs.dz_at(idx, n);
            let mut dbf = [C64::new(0.0, 0.0); 3];
            for i in 0..n {
                dbf[i] = df[i].conj();
            }
            let mut sm = s.g_at(idx);
            sm.scale(C64::new(pv.exp(), 0.0));
            sm.add_scaled(&cache.rho_mat.at(idx), C64::new(-alpha * (-pv).exp(), 0.0));
            let mut sm_buf = [C64::new(0.0, 0.0); 9];
            for i in 0..n {
                for j in 0..n {
                    sm_buf[i * n + j] = sm.e[i][j];
                }
            }
            let mut d_buf = [C64::new(0.0, 0.0); 9];
            s.d_omega.eval_at(&grid, idx, &mut d_buf[..nc21]);
            let phase = ratio_phase(n, n as u8) / s.detg_at(idx);
            let v = plan.eval(&[&dbf[..n], &sm_buf[..n * n], &d_buf[..nc21]]);
            -2.0 * choice.fp(pv) * (phase * v).re
        })
    };

    // RHS term 3: 2 ∫ f(phi) mu omega^n / n!
    let rhs3_ratio = ScalarField::from_fn(grid, |idx| choice.f(phi.data[idx]) * data.mu.data[idx]);
    let rhs = nfact * integrate(&rhs1_re, s) + nfact * integrate(&rhs2_re, s)
        + 2.0 * integrate(&rhs3_ratio, s);

    rhs - lhs
}

/// Assemble the full report for one state.
pub fn full_report(
    phi: &ScalarField,
    data: &ProblemData,
    t: f64,
    residual_sup: f64,
) -> MonitorReport {
    let s = data.structure.as_ref();
    let grid = phi.grid;
    let n = grid.n;
    let alpha = data.alpha;
    let cache = data.contraction_cache();
    let derivs = PhiDerivatives::compute(phi);
    let e = phi.map(|v| (-v).exp());
    let sup_e = e.max();
    let inf_e = e.min();
    let m0 = (sup_e / data.a_norm).max(data.a_norm / inf_e);
    let sup_g2 = sup_grad2(phi, s);
    let sup_dd = sup_ddbar_norm(phi, s);

    let wt_at = |idx: usize| {
        crate::residual::omega_tilde_at(idx, phi.data[idx], &derivs, s, &cache, alpha, t)
    };
    let (m1, m2) = crate::hessian::gamma2_margin_fn(grid, s, wt_at);
    let lambda1_sup = exec::max_indexed(grid.num_points(), |idx| {
        let wt = wt_at(idx);
        let g = s.g_at(idx);
        pencil_eigenvalues_at(&wt, &g).expect("metric positive")[0]
    });
    let lt94_ratio = if m1 > 0.0 && m2 > 0.0 {
        exec::min_indexed(grid.num_points(), |idx| {
            let wt = wt_at(idx);
            let g = s.g_at(idx);
            let lam = pencil_eigenvalues_at(&wt, &g).expect("metric positive");
            let s1: f64 = lam[..n].iter().sum();
            let mut worst = f64::INFINITY;
            for i in 1..n {
                worst = worst.min((s1 - lam[i]) / ((n - 1) as f64 * s1));
            }
            worst
        })
    } else {
        f64::NAN
    };
    let rho_lower_margin = exec::min_indexed(grid.num_points(), |idx| {
        let pv = phi.data[idx];
        let mut m = s.g_at(idx);
        m.scale(C64::new(0.5 * pv.exp(), 0.0));
        m.add_scaled(&cache.rho_mat.at(idx), C64::new(t * alpha * (-pv).exp(), 0.0));
        let g = s.g_at(idx);
        pencil_eigenvalues_at(&m, &g).expect("metric positive")[n - 1]
    });
    let norm_residual = (data.gauge_norm(phi) - data.a_norm).abs();
    let (gap_e, gap_id) = if (t - 1.0).abs() < 1e-14 {
        (
            Some(lemma21_check(phi, data, WeightChoice::NegExp2)),
            Some(lemma21_check(phi, data, WeightChoice::Identity)),
        )
    } else {
        (None, None)
    };
    MonitorReport {
        t,
        residual_sup,
        m0,
        sup_exp_neg_phi: sup_e,
        inf_exp_neg_phi: inf_e,
        sup_grad2: sup_g2,
        c19_ratio: sup_dd / (1.0 + sup_g2),
        sup_ddbar: sup_dd,
        lambda1_sup,
        cone_m1: m1,
        cone_m2: m2,
        lt94_ratio,
        norm_residual,
        astheno_defect: s.astheno_defect,
        rho_lower_margin,
        lemma21_gap_negexp: gap_e,
        lemma21_gap_identity: gap_id,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{flat_metric, make_problem, NormKind};
    use crate::grid::GridSpec;
    use std::sync::Arc;

    #[test]
    fn sandwich_constant_basics() {
        let grid = GridSpec::new(2, 8).unwrap();
        let a = 0.05f64;
        let phi = ScalarField::constant(grid, -a.ln());
        assert!((c0_sandwich(&phi, a) - 1.0).abs() < 1e-14);
        // e^{-phi} in [A/2, 2A]
        let phi2 = ScalarField::from_fn(grid, |i| {
            let x1 = grid.coords(i)[0];
            -(a * (1.5 + 0.5 * x1.cos())).ln()
        });
        let m0 = c0_sandwich(&phi2, a);
        assert!((m0 - 2.0).abs() < 1e-12, "m0 = {m0}");
    }

    #[test]
    fn c19_ratio_of_constant_is_zero() {
        let grid = GridSpec::new(2, 8).unwrap();
        let s = flat_metric(grid);
        let phi = ScalarField::constant(grid, 3.0);
        assert_eq!(c2_vs_grad_ratio(&phi, &s), 0.0);
    }

    #[test]
    fn c19_ratio_of_small_cosine_matches_closed_form() {
        let grid = GridSpec::new(2, 16).unwrap();
        let s = flat_metric(grid);
        let c = s.g_at(0).e[0][0].re;
        let eps = 1e-3;
        let phi = ScalarField::from_fn(grid, |i| eps * grid.coords(i)[0].cos());
        // |ddbar phi|_g sup = eps/(4c); sup |dphi|^2 = eps^2/(4c)
        let expect = (eps / (4.0 * c)) / (1.0 + eps * eps / (4.0 * c));
        let got = c2_vs_grad_ratio(&phi, &s);
        assert!(
            (got - expect).abs() < 1e-6 * expect,
            "got {got}, expect {expect}"
        );
    }

    #[test]
    fn lemma21_trivial_state_gap_zero() {
        let grid = GridSpec::new(2, 8).unwrap();
        let s = Arc::new(flat_metric(grid));
        let data = make_problem(-1.0, &[], &[], 0.05, NormKind::L1, s).unwrap();
        let phi = ScalarField::constant(grid, -(0.05f64).ln());
        for choice in [WeightChoice::NegExp2, WeightChoice::Identity] {
            let gap = lemma21_check(&phi, &data, choice);
            assert!(gap.abs() < 1e-12, "gap = {gap}");
        }
    }

    #[test]
    fn full_report_on_constant_solution() {
        let grid = GridSpec::new(2, 8).unwrap();
        let s = Arc::new(flat_metric(grid));
        let data = make_problem(-1.0, &[], &[], 0.05, NormKind::L1, s).unwrap();
        let phi = ScalarField::constant(grid, -(0.05f64).ln());
        let rep = full_report(&phi, &data, 1.0, 0.0);
        assert!((rep.m0 - 1.0).abs() < 1e-12);
        assert_eq!(rep.sup_grad2, 0.0);
        assert!(rep.cone_m1 > 0.0 && rep.cone_m2 > 0.0);
        assert!(rep.norm_residual < 1e-14);
        assert!(rep.lt94_ratio >= 1.0 / (3.0 * 2.0) - 1e-12);
    }
}
