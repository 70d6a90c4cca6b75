//! Linearized operators: the metric-trace operator behind the auxiliary
//! gauge solve, the linearization of the continuation map at a frozen
//! state, and its integration-by-parts adjoint.
//!
//! Every operator is applied matrix-free through one fused pointwise pass:
//! frozen coefficients reduce to a (1,1)-slot contraction matrix, a
//! first-order weight vector, and a zero-order scalar, all phi-independent
//! during a Krylov solve. Real input is assumed (the solves run over real
//! fields); the paired first-order terms then combine into `2 Re <.,.>`.

use crate::error::{CoreError, Result};
use crate::exec;
use crate::field::{ScalarField, VolumeWeight};
use crate::geometry::{HermitianStructure, ProblemData};
use crate::residual::{
    build_cached, c0_field, contract_k, ginv_cached, r2_weight, torsion_weights_field,
    two_re_dot, Cached, PhiDerivatives,
};
use crate::smallalg::{ratio_phase, top_plan, SmallMat};
use crate::solver::{gmres, FourierDiagonal, GmresOptions};
use crate::C64;
use crate::geometry::{eta, zeta};
use std::sync::Arc;

/// Which operator a frozen handle applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    /// `(L~ u) omega^n = i ddbar(u omega) ∧ omega^{n-2}`.
    MetricTrace,
    /// Linearization of the continuation map at a frozen state.
    Linearized,
    /// L2 adjoint of the linearization.
    Adjoint,
}

/// A frozen second-order operator in fused pointwise form:
/// `(op u)(x) = Re contract(k_hat(x), ddbar u(x))
///            + 2 Re sum_i (du)_i(x) w(x)_i + c0(x) u(x)`.
pub struct FrozenOperator {
    pub kind: OperatorKind,
    pub structure: Arc<HermitianStructure>,
    pub k_hat: Cached<SmallMat>,
    pub w: Cached<[C64; 3]>,
    pub c0: Cached<f64>,
}

impl FrozenOperator {
    /// Apply to a real scalar field.
    pub fn apply(&self, u: &ScalarField) -> ScalarField {
        let grid = u.grid;
        let n = grid.n;
        let derivs = PhiDerivatives::compute(u);
        let mut out = ScalarField::zeros(grid);
        exec::fill_indexed(&mut out.data, |idx| {
            let p = derivs.hess_mat(idx, n);
            let k = self.k_hat.at(idx);
            let mut v = contract_k(&k, &p).re;
            let w = self.w.at(idx);
            let df = derivs.dz_at(idx, n);
            v += two_re_dot(&df, &w, n);
            v += self.c0.at(idx) * u.data[idx];
            v
        });
        out
    }

    /// Grid-mean of the (1,1)-slot contraction matrix (preconditioner input).
    pub fn mean_k(&self) -> SmallMat {
        let n = self.structure.grid.n;
        match &self.k_hat {
            Cached::Const(k) => *k,
            other => {
                let npts = self.structure.grid.num_points();
                let mut m = SmallMat::zero(n);
                for i in 0..n {
                    for j in 0..n {
                        let re = exec::sum_indexed(npts, |idx| other.at(idx).e[i][j].re)
                            / npts as f64;
                        let im = exec::sum_indexed(npts, |idx| other.at(idx).e[i][j].im)
                            / npts as f64;
                        m.e[i][j] = C64::new(re, im);
                    }
                }
                m
            }
        }
    }

    /// Constant-coefficient Fourier symbol from the mean contraction
    /// matrix: `sym(k) = Re sum_{ij} zeta_i eta_j Kbar_{ji}`.
    pub fn mean_symbol(&self) -> impl Fn(&[i64]) -> f64 {
        let kbar = self.mean_k();
        let n = kbar.n;
        move |k: &[i64]| {
            let mut kk = [0i32; 6];
            for (a, &v) in k.iter().enumerate() {
                kk[a] = v as i32;
            }
            let mut s = C64::new(0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    s += zeta(&kk, i) * eta(&kk, j) * kbar.e[j][i];
                }
            }
            s.re
        }
    }

    /// Fourier-diagonal preconditioner for `op - shift`.
    pub fn preconditioner(&self, shift: f64) -> FourierDiagonal {
        FourierDiagonal::from_symbol(self.structure.grid, shift, self.mean_symbol())
    }

    /// Linearity defect on two probes (diagnostic).
    pub fn linearity_defect(&self, u: &ScalarField, v: &ScalarField) -> f64 {
        let mut combo = u.clone();
        combo.scale(0.7);
        combo.add_scaled(v, -1.3);
        let lhs = self.apply(&combo);
        let lu = self.apply(u);
        let lv = self.apply(v);
        exec::max_indexed(u.grid.num_points(), |i| {
            (lhs.data[i] - 0.7 * lu.data[i] + 1.3 * lv.data[i]).abs()
        })
    }
}

/// Above this grid size the metric-trace freeze generates pointwise data on
/// the fly instead of materializing per-point tables.
const MATERIALIZE_LIMIT_POINTS: usize = 6_000_000;

/// Freeze the metric-trace operator `(L~ u) omega^n = i ddbar(u omega) ∧
/// omega^{n-2}` of the structure.
pub fn freeze_metric_trace(structure: Arc<HermitianStructure>) -> FrozenOperator {
    let s = structure.as_ref();
    let grid = s.grid;
    let npts = grid.num_points();
    let n = grid.n;
    let (k_hat, w, c0) = if !s.is_flat() && npts > MATERIALIZE_LIMIT_POINTS {
        // on-the-fly evaluation from the analytic metric
        let s1 = structure.clone();
        let k_hat = Cached::Gen(Arc::new(move |idx: usize| {
            let mut k = s1.ginv_at(idx);
            k.scale(C64::new(1.0 / k.n as f64, 0.0));
            k
        }));
        let s2 = structure.clone();
        let plan = if n == 3 {
            crate::smallalg::top_plan(3, &[(1, 0), (1, 2), (1, 1)])
        } else {
            crate::smallalg::top_plan(2, &[(1, 0), (1, 2)])
        };
        let nc12 = n * crate::smallalg::binomial(n, 2);
        let w = Cached::Gen(Arc::new(move |idx: usize| {
            let mut om_buf = [C64::new(0.0, 0.0); 9];
            let mut y_buf = [C64::new(0.0, 0.0); 9];
            crate::residual::torsion_weights_at(
                s2.as_ref(),
                &s2.db_omega,
                idx,
                &plan,
                &mut om_buf[..n * n],
                &mut y_buf[..nc12],
            )
        }));
        let c0 = if s.ddbar_omega.is_zero() {
            Cached::Const(0.0)
        } else {
            let s3 = structure.clone();
            let plan = if n == 3 {
                crate::smallalg::top_plan(3, &[(2, 2), (1, 1)])
            } else {
                crate::smallalg::top_plan(2, &[(2, 2)])
            };
            let nc22 = crate::smallalg::binomial(n, 2) * crate::smallalg::binomial(n, 2);
            Cached::Gen(Arc::new(move |idx: usize| {
                let mut om_buf = [C64::new(0.0, 0.0); 9];
                let mut x_buf = [C64::new(0.0, 0.0); 9];
                crate::residual::c0_weight_at(
                    s3.as_ref(),
                    &s3.ddbar_omega,
                    idx,
                    &plan,
                    &mut om_buf[..n * n],
                    &mut x_buf[..nc22],
                )
            }))
        };
        (k_hat, w, c0)
    } else {
        let ginv = ginv_cached(s);
        let k_hat = build_cached(npts, s.is_flat(), |idx| {
            let mut k = ginv.at(idx);
            k.scale(C64::new(1.0 / n as f64, 0.0));
            k
        });
        let w = torsion_weights_field(s, &s.db_omega);
        let c0 = c0_field(s, &s.ddbar_omega);
        (k_hat, w, c0)
    };
    FrozenOperator {
        kind: OperatorKind::MetricTrace,
        structure,
        k_hat,
        w,
        c0,
    }
}

/// Apply the metric-trace operator once (spec-level convenience).
pub fn apply_l_tilde(u: &ScalarField, structure: Arc<HermitianStructure>) -> ScalarField {
    freeze_metric_trace(structure).apply(u)
}

/// Freeze the linearization of the continuation map at `(phi_hat, t_hat)`:
///
/// ```text
/// (L u) omega^n = i ddbar(u e^{phi} omega + t alpha u e^{-phi} rho) ∧ omega^{n-2}
///              + 2 n alpha i ddbar phi ∧ i ddbar u ∧ omega^{n-2}
/// ```
pub fn freeze_linearized(phi_hat: &ScalarField, t_hat: f64, data: &ProblemData) -> FrozenOperator {
    let s = data.structure.clone();
    let grid = s.grid;
    let n = grid.n;
    let nf = n as f64;
    let alpha = data.alpha;
    let cache = data.contraction_cache();
    let derivs = PhiDerivatives::compute(phi_hat);
    let npts = grid.num_points();

    // k_hat = r2 weight of omega_tilde at the frozen state
    let k_hat = build_cached(npts, false, |idx| {
        let wt = crate::residual::omega_tilde_at(
            idx,
            phi_hat.data[idx],
            &derivs,
            s.as_ref(),
            &cache,
            alpha,
            t_hat,
        );
        r2_weight(&cache.ginv.at(idx), &wt)
    });

    // first-order weights: from dbar(e^phi omega + t alpha e^{-phi} rho)
    let w = build_cached(npts, false, |idx| {
        let pv = phi_hat.data[idx];
        let f1 = pv.exp();
        let f2 = t_hat * alpha * (-pv).exp();
        let dphi = derivs.dz_at(idx, n);
        let k_om = cache.k_omega.at(idx);
        let k_rho = cache.k_rho.at(idx);
        let w_om = cache.w_omega.at(idx);
        let w_rho = cache.w_rho.at(idx);
        let mut out = [C64::new(0.0, 0.0); 3];
        for i in 0..n {
            let mut v = C64::new(0.0, 0.0);
            // sum_j (dbar f)_j K.e[j][i], with dbar f = conj(d f) for real f
            for j in 0..n {
                let dbf1 = dphi[j].conj() * f1;
                let dbf2 = dphi[j].conj() * (-f2);
                v += dbf1 * k_om.e[j][i] + dbf2 * k_rho.e[j][i];
            }
            v += w_om[i] * f1 + w_rho[i] * f2;
            out[i] = v;
        }
        out
    });

    // zero-order: ratio[i ddbar(e^phi omega + t alpha e^{-phi} rho) ∧ omega^{n-2}]
    let c0 = build_cached(npts, false, |idx| {
        let pv = phi_hat.data[idx];
        let f1 = pv.exp();
        let f2 = t_hat * alpha * (-pv).exp();
        let p = derivs.hess_mat(idx, n);
        let gr = derivs.grad_mat(idx, n);
        let dphi = derivs.dz_at(idx, n);
        // ddbar f1 = f1 (P + Gr), ddbar f2 = f2 (Gr - P)
        let mut m1 = p;
        m1.add_scaled(&gr, C64::new(1.0, 0.0));
        m1.scale(C64::new(f1, 0.0));
        let mut m2 = gr;
        m2.add_scaled(&p, C64::new(-1.0, 0.0));
        m2.scale(C64::new(f2, 0.0));
        let mut v = contract_k(&cache.k_omega.at(idx), &m1).re
            + contract_k(&cache.k_rho.at(idx), &m2).re;
        let mut df1 = dphi;
        for t in df1.iter_mut() {
            *t *= f1;
        }
        let mut df2 = dphi;
        for t in df2.iter_mut() {
            *t *= -f2;
        }
        v += two_re_dot(&df1, &cache.w_omega.at(idx), n);
        v += two_re_dot(&df2, &cache.w_rho.at(idx), n);
        v += f1 * cache.c0_omega.at(idx) + f2 * cache.c0_rho.at(idx);
        v
    });
    let _ = nf;
    FrozenOperator {
        kind: OperatorKind::Linearized,
        structure: s,
        k_hat,
        w,
        c0,
    }
}

/// Spec-level convenience: apply the linearization once.
pub fn apply_l(
    u: &ScalarField,
    phi_hat: &ScalarField,
    t_hat: f64,
    data: &ProblemData,
) -> ScalarField {
    freeze_linearized(phi_hat, t_hat, data).apply(u)
}

/// Freeze the L2-adjoint of the linearization:
///
/// ```text
/// (L* v) omega^n = i ddbar v ∧ omega_t ∧ omega^{n-2}
///                + i dv ∧ omega_t ∧ dbar omega^{n-2}
///                - dbar v ∧ omega_t ∧ i d omega^{n-2}
/// ```
///
/// No zero-order term: constants are annihilated exactly as assembled.
pub fn freeze_adjoint(phi_hat: &ScalarField, t_hat: f64, data: &ProblemData) -> FrozenOperator {
    let s = data.structure.clone();
    let grid = s.grid;
    let n = grid.n;
    let alpha = data.alpha;
    let cache = data.contraction_cache();
    let derivs = PhiDerivatives::compute(phi_hat);
    let npts = grid.num_points();

    let k_hat = build_cached(npts, false, |idx| {
        let wt = crate::residual::omega_tilde_at(
            idx,
            phi_hat.data[idx],
            &derivs,
            s.as_ref(),
            &cache,
            alpha,
            t_hat,
        );
        r2_weight(&cache.ginv.at(idx), &wt)
    });

    // first-order weights: ratio[i dv ∧ omega_t ∧ dbar omega^{n-2}];
    // dbar omega^{n-2} = dbar omega for n = 3 and vanishes for n = 2.
    let w = if n == 2 || s.db_omega.is_zero() {
        Cached::Const([C64::new(0.0, 0.0); 3])
    } else {
        let plan = top_plan(3, &[(1, 0), (1, 1), (1, 2)]);
        let nc12 = n * crate::smallalg::binomial(n, 2);
        build_cached(npts, false, |idx| {
            let wt = crate::residual::omega_tilde_at(
                idx,
                phi_hat.data[idx],
                &derivs,
                s.as_ref(),
                &cache,
                alpha,
                t_hat,
            );
            let mut wt_buf = [C64::new(0.0, 0.0); 9];
            for i in 0..n {
                for j in 0..n {
                    wt_buf[i * n + j] = wt.e[i][j];
                }
            }
            let mut y_buf = [C64::new(0.0, 0.0); 9];
            s.db_omega.eval_at(&grid, idx, &mut y_buf[..nc12]);
            let detg = s.detg_at(idx);
            let phase = ratio_phase(n, n as u8) / detg;
            let mut out = [C64::new(0.0, 0.0); 3];
            let mut basis = [C64::new(0.0, 0.0); 3];
            for i in 0..n {
                basis[i] = C64::new(1.0, 0.0);
                let v = plan.eval(&[&basis[..n], &wt_buf[..n * n], &y_buf[..nc12]]);
                out[i] = phase * v;
                basis[i] = C64::new(0.0, 0.0);
            }
            out
        })
    };

    FrozenOperator {
        kind: OperatorKind::Adjoint,
        structure: s,
        k_hat,
        w,
        c0: Cached::Const(0.0),
    }
}

/// Spec-level convenience: apply the adjoint once.
pub fn apply_l_star(
    v: &ScalarField,
    phi_hat: &ScalarField,
    t_hat: f64,
    data: &ProblemData,
) -> ScalarField {
    freeze_adjoint(phi_hat, t_hat, data).apply(v)
}

// ---------------------------------------------------------------------------
// Kernel extraction and the auxiliary gauge solve
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct KernelOptions {
    pub tol: f64,
    pub max_outer: usize,
    pub gmres: GmresOptions,
    pub seed: u64,
    /// Probe a second, deflated direction to confirm the kernel is
    /// one-dimensional.
    pub check_dimension: bool,
}

impl Default for KernelOptions {
    fn default() -> Self {
        KernelOptions {
            tol: 1e-9,
            max_outer: 12,
            gmres: GmresOptions {
                restart: 20,
                max_restarts: 10,
                rel_tol: 1e-12,
            },
            seed: 0x5eed,
            check_dimension: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KernelResult {
    pub vector: ScalarField,
    /// sup |op v| / sup |v| at the returned vector.
    pub defect: f64,
    pub min_value: f64,
    pub outer_iterations: usize,
    pub krylov_iterations: usize,
}

/// Smallest nonzero magnitude of the mean-coefficient symbol (spectral gap
/// estimate used to place the inverse-iteration shift).
fn symbol_gap(op: &FrozenOperator) -> f64 {
    let grid = op.structure.grid;
    let sym = op.mean_symbol();
    let axes = grid.axes();
    let nn = grid.points_per_axis;
    let mut gap = f64::INFINITY;
    let npts = grid.num_points();
    for idx in 0..npts {
        let mut k = [0i64; 6];
        let mut rest = idx;
        for a in (0..axes).rev() {
            k[a] = grid.wavenumber(rest % nn);
            rest /= nn;
        }
        if k[..axes].iter().all(|&v| v == 0) {
            continue;
        }
        let s = sym(&k[..axes]).abs();
        if s > 0.0 && s < gap {
            gap = s;
        }
    }
    gap
}

/// Shifted inverse iteration for the (one-dimensional) kernel of a frozen
/// operator, matrix-free with the Fourier preconditioner. The start vector
/// is `1 + small seeded noise`; the sign is fixed so the mean is positive.
pub fn kernel_generator(op: &FrozenOperator, opts: &KernelOptions) -> Result<KernelResult> {
    let grid = op.structure.grid;
    let gap = symbol_gap(op);
    let shift = gap / 50.0;
    let pre = op.preconditioner(shift);
    let apply_shifted = |u: &ScalarField| {
        let mut v = op.apply(u);
        v.add_scaled(u, -shift);
        v
    };

    let mut v = ScalarField::constant(grid, 1.0);
    {
        let noise = crate::probes::band_limited_scalar(grid, opts.seed, 1, 0.01);
        v.add_scaled(&noise, 1.0);
    }
    let nl2 = v.norm_l2();
    v.scale(1.0 / nl2);

    let mut defect = f64::INFINITY;
    let mut outer = 0;
    let mut krylov = 0;
    for _ in 0..opts.max_outer {
        outer += 1;
        let (w, stats) = gmres(apply_shifted, |u: &ScalarField| pre.apply(u), &v, &opts.gmres);
        krylov += stats.iterations;
        if !stats.converged {
            return Err(CoreError::KrylovStagnation {
                rel_resid: stats.rel_residual,
                iters: stats.iterations,
            });
        }
        let wn = w.norm_l2();
        if wn == 0.0 {
            return Err(CoreError::AmbiguousKernel(
                "inverse iteration produced the zero vector".into(),
            ));
        }
        v = w;
        v.scale(1.0 / wn);
        let lv = op.apply(&v);
        defect = lv.sup_norm() / v.sup_norm();
        if defect <= opts.tol {
            break;
        }
    }
    if defect > opts.tol {
        return Err(CoreError::AmbiguousKernel(format!(
            "inverse iteration stalled at defect {defect:.3e} (tol {:.1e})",
            opts.tol
        )));
    }
    // fix the sign by the mean
    let mean = exec::sum_indexed(grid.num_points(), |i| v.data[i]);
    if mean < 0.0 {
        v.scale(-1.0);
    }

    if opts.check_dimension {
        // deflated probe: if a second direction also reaches a tiny defect,
        // the discrete kernel is not one-dimensional.
        let mut u = crate::probes::band_limited_scalar(grid, opts.seed ^ 0xabcdef, 1, 1.0);
        let proj = u.dot(&v) / v.dot(&v);
        u.add_scaled(&v, -proj);
        let un = u.norm_l2();
        u.scale(1.0 / un);
        let mut second_defect = f64::INFINITY;
        for _ in 0..3 {
            let (w, stats) = gmres(apply_shifted, |x: &ScalarField| pre.apply(x), &u, &opts.gmres);
            krylov += stats.iterations;
            if !stats.converged {
                break;
            }
            let mut w = w;
            let proj = w.dot(&v) / v.dot(&v);
            w.add_scaled(&v, -proj);
            let wn = w.norm_l2();
            if wn == 0.0 {
                break;
            }
            u = w;
            u.scale(1.0 / wn);
            second_defect = op.apply(&u).sup_norm() / u.sup_norm();
        }
        if second_defect < 10.0 * defect.max(opts.tol) {
            return Err(CoreError::AmbiguousKernel(format!(
                "deflated direction reaches defect {second_defect:.3e}, within 10x of the kernel defect {defect:.3e}"
            )));
        }
    }

    let min_value = v.min();
    Ok(KernelResult {
        vector: v,
        defect,
        min_value,
        outer_iterations: outer,
        krylov_iterations: krylov,
    })
}

#[derive(Debug, Clone, Default)]
pub struct SolveHOptions {
    pub kernel: KernelOptions,
}

#[derive(Debug, Clone)]
pub struct HSolve {
    /// Gauge function, normalized so max h = 0.
    pub h: ScalarField,
    /// sup |i ddbar(e^h omega) ∧ omega^{n-2} / omega^n| at the returned h.
    pub defect: f64,
    pub kernel_min: f64,
    pub outer_iterations: usize,
}

/// Solve for the gauge function h with `i ddbar(e^h omega) ∧ omega^{n-2}
/// = 0`: h is the log of the positive kernel generator of the metric-trace
/// operator, shifted so max h = 0.
pub fn solve_h(structure: &HermitianStructure, opts: &SolveHOptions) -> Result<HSolve> {
    let op = freeze_metric_trace(Arc::new(structure.clone()));
    let mut kopts = opts.kernel.clone();
    if structure.grid.num_points() > MATERIALIZE_LIMIT_POINTS {
        // bound the Krylov basis footprint on very large grids
        kopts.gmres.restart = kopts.gmres.restart.min(8);
        kopts.gmres.max_restarts = kopts.gmres.max_restarts.max(24);
    }
    let kr = kernel_generator(&op, &kopts)?;
    if kr.min_value <= 0.0 {
        return Err(CoreError::KernelNotPositive {
            min_val: kr.min_value,
        });
    }
    let mut h = kr.vector.map(f64::ln);
    let hmax = h.max();
    h.shift(-hmax);
    // defect on the normalized scale (linearity of the operator)
    let eh = h.exp();
    let defect = op.apply(&eh).sup_norm() / eh.sup_norm();
    Ok(HSolve {
        h,
        defect,
        kernel_min: kr.min_value * (-hmax).exp(),
        outer_iterations: kr.outer_iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{flat_metric, make_problem, skt_metric, NormKind, XiTerm};
    use crate::grid::GridSpec;

    #[test]
    fn metric_trace_annihilates_constants() {
        let grid = GridSpec::new(3, 8).unwrap();
        let xi = [XiTerm {
            j: 1,
            k: [1, 0, 0, 0, 0, 0],
            coef: C64::new(1.0, 0.0),
        }];
        let s = Arc::new(skt_metric(grid, &xi, 0.05).unwrap());
        let op = freeze_metric_trace(s);
        let u = ScalarField::constant(grid, 2.5);
        let lu = op.apply(&u);
        assert!(lu.sup_norm() < 1e-10, "sup = {}", lu.sup_norm());
    }

    #[test]
    fn metric_trace_is_negative_laplacian_like_on_flat() {
        let grid = GridSpec::new(2, 12).unwrap();
        let s = Arc::new(flat_metric(grid));
        let op = freeze_metric_trace(s.clone());
        let u = ScalarField::from_fn(grid, |i| grid.coords(i)[0].cos());
        let lu = op.apply(&u);
        // expected: tr(ginv ddbar u)/n = -cos(x1)/(4 c n)
        let c = s.g_at(0).e[0][0].re;
        let err = exec::max_indexed(grid.num_points(), |i| {
            let x1 = grid.coords(i)[0];
            (lu.data[i] + x1.cos() / (4.0 * c * 2.0)).abs()
        });
        assert!(err < 1e-11, "err = {err}");
        // <L~u, u> < 0
        let pairing = lu.dot(&u);
        assert!(pairing < 0.0);
    }

    #[test]
    fn frozen_operator_linearity() {
        let grid = GridSpec::new(2, 8).unwrap();
        let s = Arc::new(flat_metric(grid));
        let data = make_problem(-1.0, &[], &[], 0.05, NormKind::L1, s).unwrap();
        let phi = {
            let mut p = crate::probes::band_limited_scalar(grid, 3, 1, 0.1);
            p.shift(3.0);
            p
        };
        let op = freeze_linearized(&phi, 0.7, &data);
        let u = crate::probes::band_limited_scalar(grid, 5, 2, 1.0);
        let v = crate::probes::band_limited_scalar(grid, 6, 2, 1.0);
        assert!(op.linearity_defect(&u, &v) < 1e-10);
    }

    #[test]
    fn adjoint_annihilates_constants_exactly() {
        let grid = GridSpec::new(2, 8).unwrap();
        let s = Arc::new(flat_metric(grid));
        let data = make_problem(-1.0, &[], &[], 0.05, NormKind::L1, s).unwrap();
        let phi = {
            let mut p = crate::probes::band_limited_scalar(grid, 4, 1, 0.1);
            p.shift(3.0);
            p
        };
        let op = freeze_adjoint(&phi, 1.0, &data);
        let c = ScalarField::constant(grid, -1.7);
        assert!(op.apply(&c).sup_norm() < 1e-12);
    }

    #[test]
    fn h_is_zero_on_flat_kaehler() {
        let grid = GridSpec::new(2, 8).unwrap();
        let s = flat_metric(grid);
        let hs = solve_h(&s, &SolveHOptions::default()).unwrap();
        assert!(hs.h.sup_norm() < 1e-10, "sup h = {}", hs.h.sup_norm());
        assert!(hs.defect < 1e-10);
    }

    #[test]
    fn kernel_check_flags_shifted_operator() {
        // adding a mass term removes the kernel: inverse iteration cannot
        // reach a tiny defect and must report
        let grid = GridSpec::new(2, 8).unwrap();
        let s = Arc::new(flat_metric(grid));
        let base = freeze_metric_trace(s.clone());
        let mass = 0.5;
        let shifted = FrozenOperator {
            kind: OperatorKind::MetricTrace,
            structure: s,
            k_hat: base.k_hat,
            w: base.w,
            c0: Cached::Const(mass),
        };
        let res = kernel_generator(&shifted, &KernelOptions::default());
        assert!(res.is_err(), "kernel extraction should fail with a mass term");
    }
}
