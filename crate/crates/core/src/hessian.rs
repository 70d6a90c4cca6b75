//! Pointwise linear algebra of Hermitian pencils: eigenvalues against the
//! metric, elementary symmetric functions, the Gamma_2 cone test, and the
//! derivative tensor of sigma_2^{1/2}.

use crate::error::{CoreError, Result};
use crate::exec;
use crate::field::{FormField, ScalarField};
use crate::geometry::HermitianStructure;
use crate::grid::GridSpec;
use crate::smallalg::{pencil_eigenvalues_at, r1, r2, SmallMat};
use crate::C64;
use nalgebra::{Complex, Matrix2, Matrix3, SymmetricEigen};

/// Per-point eigenvalues of a Hermitian pencil, sorted descending.
#[derive(Debug, Clone)]
pub struct PencilEigenvalues {
    pub grid: GridSpec,
    /// Point-major: `vals[idx * n + i]`, descending in `i`.
    pub vals: Vec<f64>,
}

impl PencilEigenvalues {
    #[inline]
    pub fn at(&self, idx: usize) -> &[f64] {
        let n = self.grid.n;
        &self.vals[idx * n..(idx + 1) * n]
    }

    /// Largest eigenvalue over the grid.
    pub fn lambda1_sup(&self) -> f64 {
        let n = self.grid.n;
        exec::max_indexed(self.grid.num_points(), |i| self.vals[i * n])
    }
}

fn extract_mat(a: &FormField, idx: usize) -> SmallMat {
    let n = a.grid.n;
    let np = a.grid.num_points();
    let mut m = SmallMat::zero(n);
    for i in 0..n {
        for j in 0..n {
            m.e[i][j] = a.data[(i * n + j) * np + idx];
        }
    }
    m
}

/// Eigenvalues of `g^{-1} a` per point, both (1,1) coefficient fields with
/// the Hermitian convention. Rejects non-positive `g` with the location of
/// the worst point.
pub fn pencil_eigenvalues(a: &FormField, g: &FormField) -> Result<PencilEigenvalues> {
    assert!(a.p == 1 && a.q == 1 && g.p == 1 && g.q == 1);
    assert_eq!(a.grid, g.grid);
    let grid = a.grid;
    let n = grid.n;
    let npts = grid.num_points();
    let mut vals = vec![0.0; n * npts];
    // track positivity failure deterministically
    let (worst_at, worst) = exec::argmax_indexed(npts, |idx| {
        let gm = extract_mat(g, idx);
        -gm.eigenvalues_hermitian()[n - 1]
    });
    if -worst <= 0.0 {
        return Err(CoreError::MetricNotPositive {
            min_eig: -worst,
            at: worst_at,
        });
    }
    exec::for_each_chunk_mut(&mut vals, n, |idx, chunk| {
        let am = extract_mat(a, idx);
        let gm = extract_mat(g, idx);
        let eigs = pencil_eigenvalues_at(&am, &gm).expect("positivity checked above");
        chunk.copy_from_slice(&eigs[..n]);
    });
    Ok(PencilEigenvalues { grid, vals })
}

/// Eigenvalues of a (1,1) field against the structure's metric.
pub fn pencil_vs_structure(a: &FormField, s: &HermitianStructure) -> PencilEigenvalues {
    assert!(a.p == 1 && a.q == 1);
    let grid = a.grid;
    let n = grid.n;
    let npts = grid.num_points();
    let mut vals = vec![0.0; n * npts];
    exec::for_each_chunk_mut(&mut vals, n, |idx, chunk| {
        let am = extract_mat(a, idx);
        let gm = s.g_at(idx);
        let eigs = pencil_eigenvalues_at(&am, &gm).expect("structure metric is positive");
        chunk.copy_from_slice(&eigs[..n]);
    });
    PencilEigenvalues { grid, vals }
}

/// Elementary symmetric function of the eigenvalues, k in {1, 2}.
pub fn sigma_k(lam: &PencilEigenvalues, k: usize) -> ScalarField {
    let n = lam.grid.n;
    let vals = &lam.vals;
    match k {
        1 => ScalarField::from_fn(lam.grid, |idx| vals[idx * n..(idx + 1) * n].iter().sum()),
        2 => ScalarField::from_fn(lam.grid, |idx| {
            let l = &vals[idx * n..(idx + 1) * n];
            let mut s = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    s += l[i] * l[j];
                }
            }
            s
        }),
        _ => panic!("sigma_k supports k in {{1,2}}"),
    }
}

/// Gamma_2 cone margins of a real (1,1) field: minima over the grid of the
/// two wedge ratios `a ∧ omega^{n-1} / omega^n` and
/// `a ∧ a ∧ omega^{n-2} / omega^n`, evaluated by exact pointwise algebra
/// (no eigensolves). Membership iff both are positive.
pub fn gamma2_margin(a: &FormField, s: &HermitianStructure) -> (f64, f64) {
    assert!(a.p == 1 && a.q == 1);
    let npts = a.grid.num_points();
    let m1 = exec::min_indexed(npts, |idx| {
        let ginv = s.ginv_at(idx);
        r1(&ginv, &extract_mat(a, idx)).re
    });
    let m2 = exec::min_indexed(npts, |idx| {
        let ginv = s.ginv_at(idx);
        let am = extract_mat(a, idx);
        r2(&ginv, &am, &am).re
    });
    (m1, m2)
}

/// Same margins from a pointwise matrix closure (used by the lean solver
/// paths that never materialize the form).
pub fn gamma2_margin_fn(
    grid: GridSpec,
    s: &HermitianStructure,
    mat_at: impl Fn(usize) -> SmallMat + Sync,
) -> (f64, f64) {
    let npts = grid.num_points();
    let m1 = exec::min_indexed(npts, |idx| {
        let ginv = s.ginv_at(idx);
        r1(&ginv, &mat_at(idx)).re
    });
    let m2 = exec::min_indexed(npts, |idx| {
        let ginv = s.ginv_at(idx);
        let am = mat_at(idx);
        r2(&ginv, &am, &am).re
    });
    (m1, m2)
}

pub use gamma2_margin as gamma2_margin_field;

/// Pointwise derivative tensor of sigma_2^{1/2} with respect to the pencil
/// matrix entries, plus the running minimum of
/// `G^{i ibar} / sum_k G^{k kbar}` over eigen-ordered directions i >= 2.
#[derive(Debug, Clone)]
pub struct GTensorField {
    pub grid: GridSpec,
    /// Point-major n x n Hermitian matrices.
    pub data: Vec<C64>,
}

impl GTensorField {
    pub fn at(&self, idx: usize) -> SmallMat {
        let n = self.grid.n;
        let mut m = SmallMat::zero(n);
        for i in 0..n {
            for j in 0..n {
                m.e[i][j] = self.data[idx * n * n + i * n + j];
            }
        }
        m
    }
}

/// G tensor of a (1,1) field in the Gamma_2 cone (with sigma_2 > 0)
/// against the structure metric. In the pencil eigenbasis G is diagonal
/// with entries `(sigma_1 - lambda_i) / (2 sigma_2^{1/2})`, rotated back.
pub fn g_tensor(wt: &FormField, s: &HermitianStructure) -> Result<(GTensorField, f64)> {
    assert!(wt.p == 1 && wt.q == 1);
    let grid = wt.grid;
    let n = grid.n;
    let npts = grid.num_points();

    // cone check first (exact route)
    let (m1, m2) = gamma2_margin(wt, s);
    if m1 <= 0.0 || m2 <= 0.0 {
        return Err(CoreError::ConeViolation {
            m1,
            m2,
            context: "in g_tensor".into(),
        });
    }

    let mut data = vec![C64::new(0.0, 0.0); npts * n * n];
    exec::for_each_chunk_mut(&mut data, n * n, |idx, out| {
        let am = extract_mat(wt, idx);
        let gm = s.g_at(idx);
        let g2 = g_tensor_at(&am, &gm);
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = g2.e[i][j];
            }
        }
    });
    let field = GTensorField { grid, data };
    let lt94 = lt94_ratio_streaming(wt, s);
    Ok((field, lt94))
}

/// min over the grid and eigen-ordered i >= 2 of
/// `(sigma_1 - lambda_i) / ((n-1) sigma_1)`, the normalized partial-trace
/// ratio of the G tensor.
pub fn lt94_ratio_streaming(wt: &FormField, s: &HermitianStructure) -> f64 {
    let grid = wt.grid;
    let n = grid.n;
    exec::min_indexed(grid.num_points(), |idx| {
        let am = extract_mat(wt, idx);
        let gm = s.g_at(idx);
        let lam = pencil_eigenvalues_at(&am, &gm).expect("metric positive");
        let s1: f64 = lam[..n].iter().sum();
        let mut worst = f64::INFINITY;
        for i in 1..n {
            worst = worst.min((s1 - lam[i]) / ((n - 1) as f64 * s1));
        }
        worst
    })
}

/// Pointwise G tensor via the Cholesky congruence and a dense Hermitian
/// eigendecomposition.
pub fn g_tensor_at(a: &SmallMat, g: &SmallMat) -> SmallMat {
    let n = a.n;
    let l = g.cholesky().expect("metric positive");
    // B = L^{-1} a L^{-H}
    let mut y = SmallMat::zero(n);
    for c in 0..n {
        let col: Vec<C64> = (0..n).map(|r| a.e[r][c]).collect();
        let x = l.solve_lower(&col);
        for r in 0..n {
            y.e[r][c] = x[r];
        }
    }
    let mut b = SmallMat::zero(n);
    for r in 0..n {
        let row: Vec<C64> = (0..n).map(|c| y.e[r][c].conj()).collect();
        let x = l.solve_lower(&row);
        for c in 0..n {
            b.e[r][c] = x[c].conj();
        }
    }
    // Hermitian eigendecomposition of B
    let (lams, vecs): (Vec<f64>, Vec<Vec<C64>>) = match n {
        2 => {
            let m = Matrix2::new(
                Complex::new(b.e[0][0].re, b.e[0][0].im),
                Complex::new(b.e[0][1].re, b.e[0][1].im),
                Complex::new(b.e[1][0].re, b.e[1][0].im),
                Complex::new(b.e[1][1].re, b.e[1][1].im),
            );
            let se = SymmetricEigen::new(m);
            let lams: Vec<f64> = se.eigenvalues.iter().cloned().collect();
            let vecs: Vec<Vec<C64>> = (0..2)
                .map(|c| {
                    (0..2)
                        .map(|r| {
                            let v = se.eigenvectors[(r, c)];
                            C64::new(v.re, v.im)
                        })
                        .collect()
                })
                .collect();
            (lams, vecs)
        }
        3 => {
            let m = Matrix3::from_fn(|r, c| Complex::new(b.e[r][c].re, b.e[r][c].im));
            let se = SymmetricEigen::new(m);
            let lams: Vec<f64> = se.eigenvalues.iter().cloned().collect();
            let vecs: Vec<Vec<C64>> = (0..3)
                .map(|c| {
                    (0..3)
                        .map(|r| {
                            let v = se.eigenvectors[(r, c)];
                            C64::new(v.re, v.im)
                        })
                        .collect()
                })
                .collect();
            (lams, vecs)
        }
        _ => unreachable!(),
    };
    let s1: f64 = lams.iter().sum();
    let s2: f64 = {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += lams[i] * lams[j];
            }
        }
        s
    };
    let denom = 2.0 * s2.max(0.0).sqrt();
    // w_i = L^{-H} v_i via back substitution on L^H
    let mut g2 = SmallMat::zero(n);
    for (i, v) in vecs.iter().enumerate() {
        let mut w = [C64::new(0.0, 0.0); 3];
        for r in (0..n).rev() {
            let mut sacc = v[r];
            for k in (r + 1)..n {
                // (L^H)[r][k] = conj(L[k][r])
                sacc -= l.e[k][r].conj() * w[k];
            }
            w[r] = sacc / l.e[r][r].re;
        }
        let c = (s1 - lams[i]) / denom;
        for a_ in 0..n {
            for b_ in 0..n {
                g2.e[a_][b_] += w[a_].conj() * w[b_] * c;
            }
        }
    }
    g2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::flat_metric;

    fn const_11(grid: GridSpec, m: &SmallMat) -> FormField {
        let n = grid.n;
        let mut f = FormField::zeros(grid, 1, 1, 1);
        for i in 0..n {
            for j in 0..n {
                let c = f.comp_11(i, j);
                let v = m.e[i][j];
                for w in f.comp_mut(c) {
                    *w = v;
                }
            }
        }
        f
    }

    #[test]
    fn pencil_eigenvalues_simple_cases() {
        let grid = GridSpec::new(2, 8).unwrap();
        let g = const_11(grid, &SmallMat::identity(2));
        let mut am = SmallMat::zero(2);
        am.e[0][0] = C64::new(3.0, 0.0);
        am.e[1][1] = C64::new(1.0, 0.0);
        let a = const_11(grid, &am);
        let lam = pencil_eigenvalues(&a, &g).unwrap();
        assert_eq!(lam.at(5), &[3.0, 1.0]);

        let mut bm = SmallMat::zero(2);
        bm.e[0][0] = C64::new(2.0, 0.0);
        bm.e[1][1] = C64::new(2.0, 0.0);
        bm.e[0][1] = C64::new(1.0, 0.0);
        bm.e[1][0] = C64::new(1.0, 0.0);
        let b = const_11(grid, &bm);
        let lam = pencil_eigenvalues(&b, &g).unwrap();
        let l = lam.at(0);
        assert!((l[0] - 3.0).abs() < 1e-14 && (l[1] - 1.0).abs() < 1e-14);

        let g2 = const_11(grid, &SmallMat::scaled_identity(2, 2.0));
        let id = const_11(grid, &SmallMat::identity(2));
        let lam = pencil_eigenvalues(&id, &g2).unwrap();
        let l = lam.at(0);
        assert!((l[0] - 0.5).abs() < 1e-14 && (l[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn non_positive_metric_rejected_with_location() {
        let grid = GridSpec::new(2, 8).unwrap();
        let g = const_11(grid, &SmallMat::scaled_identity(2, -1.0));
        let a = const_11(grid, &SmallMat::identity(2));
        match pencil_eigenvalues(&a, &g) {
            Err(CoreError::MetricNotPositive { min_eig, .. }) => assert!(min_eig < 0.0),
            other => panic!("expected MetricNotPositive, got {other:?}"),
        }
    }

    #[test]
    fn sigma_values() {
        let grid = GridSpec::new(3, 8).unwrap();
        let lam = PencilEigenvalues {
            grid,
            vals: [3.0, 1.0, -1.0]
                .iter()
                .cloned()
                .cycle()
                .take(3 * grid.num_points())
                .collect(),
        };
        let s2 = sigma_k(&lam, 2);
        assert!((s2.data[0] - (-1.0)).abs() < 1e-14);
        let lam1 = PencilEigenvalues {
            grid,
            vals: vec![1.0; 3 * grid.num_points()],
        };
        assert!((sigma_k(&lam1, 2).data[0] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn gamma2_margin_calibrates_on_omega() {
        for n in [2usize, 3] {
            let grid = GridSpec::new(n, 8).unwrap();
            let s = flat_metric(grid);
            let omega = s.omega_form();
            let (m1, m2) = gamma2_margin(&omega, &s);
            assert!((m1 - 1.0).abs() < 1e-12, "m1 = {m1}");
            assert!((m2 - 1.0).abs() < 1e-12, "m2 = {m2}");
            let mut neg = omega.clone();
            neg.scale(C64::new(-1.0, 0.0));
            let (m1, _) = gamma2_margin(&neg, &s);
            assert!((m1 + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gamma2_rejects_indefinite_pencil() {
        // constant eigenvalues (3, 1, -1): sigma_2 = -1 < 0 so
        // m2 = 2 sigma_2 / (n(n-1)) = -1/3
        let grid = GridSpec::new(3, 8).unwrap();
        let s = flat_metric(grid);
        let c = s.g_at(0).e[0][0].re;
        let mut am = SmallMat::zero(3);
        am.e[0][0] = C64::new(3.0 * c, 0.0);
        am.e[1][1] = C64::new(1.0 * c, 0.0);
        am.e[2][2] = C64::new(-1.0 * c, 0.0);
        let a = const_11(grid, &am);
        let (_, m2) = gamma2_margin(&a, &s);
        assert!((m2 + 1.0 / 3.0).abs() < 1e-12, "m2 = {m2}");
    }

    #[test]
    fn g_tensor_identity_values() {
        // For the pencil equal to the metric itself: eigenvalues all 1,
        // G = (sigma_1 - 1)/(2 sqrt(sigma_2)) * ginv-congruent identity.
        for n in [2usize, 3] {
            let g = SmallMat::identity(n);
            let a = SmallMat::identity(n);
            let gt = g_tensor_at(&a, &g);
            let s2 = (n * (n - 1) / 2) as f64;
            let expect = (n as f64 - 1.0) / (2.0 * s2.sqrt());
            for i in 0..n {
                assert!(
                    (gt.e[i][i].re - expect).abs() < 1e-12,
                    "n={n}: {} vs {expect}",
                    gt.e[i][i].re
                );
                for j in 0..n {
                    if i != j {
                        assert!(gt.e[i][j].norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn g_tensor_matches_finite_differences() {
        // generic Gamma_2 pencil, FD oracle on sigma_2^{1/2}
        let n = 3;
        let mut g = SmallMat::identity(n);
        g.e[0][1] = C64::new(0.1, 0.05);
        g.e[1][0] = C64::new(0.1, -0.05);
        g.e[2][2] = C64::new(1.3, 0.0);
        let mut a = SmallMat::zero(n);
        a.e[0][0] = C64::new(2.5, 0.0);
        a.e[1][1] = C64::new(1.8, 0.0);
        a.e[2][2] = C64::new(1.1, 0.0);
        a.e[0][1] = C64::new(0.3, -0.2);
        a.e[1][0] = C64::new(0.3, 0.2);
        a.e[1][2] = C64::new(-0.15, 0.1);
        a.e[2][1] = C64::new(-0.15, -0.1);

        let sqrt_sigma2 = |m: &SmallMat| -> f64 {
            let lam = pencil_eigenvalues_at(m, &g).unwrap();
            let mut s = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    s += lam[i] * lam[j];
                }
            }
            s.sqrt()
        };

        let gt = g_tensor_at(&a, &g);
        let step = 1e-5;
        for i in 0..n {
            for j in 0..n {
                // real direction: E_ij + E_ji
                let mut ap = a;
                ap.e[i][j] += C64::new(step, 0.0);
                ap.e[j][i] += C64::new(step, 0.0);
                let mut am = a;
                am.e[i][j] -= C64::new(step, 0.0);
                am.e[j][i] -= C64::new(step, 0.0);
                let fd = (sqrt_sigma2(&ap) - sqrt_sigma2(&am)) / (2.0 * step);
                let analytic = if i == j {
                    2.0 * gt.e[i][i].re
                } else {
                    2.0 * gt.e[i][j].re
                };
                assert!(
                    (fd - analytic).abs() < 1e-6,
                    "re ({i},{j}): fd {fd} vs {analytic}"
                );
                if i < j {
                    // imaginary direction: i (E_ij - E_ji)
                    let di = C64::new(0.0, step);
                    let mut ap = a;
                    ap.e[i][j] += di;
                    ap.e[j][i] += di.conj();
                    let mut am = a;
                    am.e[i][j] -= di;
                    am.e[j][i] -= di.conj();
                    let fd = (sqrt_sigma2(&ap) - sqrt_sigma2(&am)) / (2.0 * step);
                    let analytic = -2.0 * gt.e[i][j].im;
                    assert!(
                        (fd - analytic).abs() < 1e-6,
                        "im ({i},{j}): fd {fd} vs {analytic}"
                    );
                }
            }
        }
    }
}
