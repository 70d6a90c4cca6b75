//! Matrix-free restarted GMRES with right preconditioning, and the
//! Fourier-diagonal constant-coefficient preconditioner.
//!
//! Vectors are real scalar fields; inner products use the deterministic
//! chunked reduction, so iteration histories are bit-reproducible.

use crate::error::{CoreError, Result};
use crate::exec;
use crate::field::ScalarField;
use crate::grid::GridSpec;

#[derive(Debug, Clone, Copy)]
pub struct GmresOptions {
    pub restart: usize,
    pub max_restarts: usize,
    pub rel_tol: f64,
}

impl Default for GmresOptions {
    fn default() -> Self {
        GmresOptions {
            restart: 25,
            max_restarts: 8,
            rel_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GmresStats {
    pub iterations: usize,
    pub rel_residual: f64,
    pub converged: bool,
}

/// Solve `A x = b` by restarted GMRES with right preconditioner `M^{-1}`
/// (a fixed linear map). The update is `x += M^{-1}(V y)`, which is valid
/// because the preconditioner is not flexible.
pub fn gmres<A, M>(apply: A, precond: M, b: &ScalarField, opts: &GmresOptions) -> (ScalarField, GmresStats)
where
    A: Fn(&ScalarField) -> ScalarField,
    M: Fn(&ScalarField) -> ScalarField,
{
    let grid = b.grid;
    let mut x = ScalarField::zeros(grid);
    let bnorm = b.norm_l2().max(1e-300);
    let mut total_iters = 0usize;
    let mut rel = 1.0;

    for _restart in 0..opts.max_restarts {
        // r = b - A x
        let ax = apply(&x);
        let mut r = b.clone();
        r.add_scaled(&ax, -1.0);
        let beta = r.norm_l2();
        rel = beta / bnorm;
        if rel <= opts.rel_tol {
            return (
                x,
                GmresStats {
                    iterations: total_iters,
                    rel_residual: rel,
                    converged: true,
                },
            );
        }
        let m = opts.restart;
        let mut basis: Vec<ScalarField> = Vec::with_capacity(m + 1);
        {
            let mut v0 = r.clone();
            v0.scale(1.0 / beta);
            basis.push(v0);
        }
        let mut hess = vec![vec![0.0f64; m]; m + 1];
        let mut cs = vec![0.0f64; m];
        let mut sn = vec![0.0f64; m];
        let mut g = vec![0.0f64; m + 1];
        g[0] = beta;
        let mut k_used = 0;

        for j in 0..m {
            total_iters += 1;
            let z = precond(&basis[j]);
            let mut w = apply(&z);
            // modified Gram-Schmidt
            for (i, vi) in basis.iter().enumerate() {
                let hij = w.dot(vi);
                hess[i][j] = hij;
                w.add_scaled(vi, -hij);
            }
            let hjj = w.norm_l2();
            hess[j + 1][j] = hjj;
            // apply accumulated rotations to the new column
            for i in 0..j {
                let t = cs[i] * hess[i][j] + sn[i] * hess[i + 1][j];
                hess[i + 1][j] = -sn[i] * hess[i][j] + cs[i] * hess[i + 1][j];
                hess[i][j] = t;
            }
            let denom = (hess[j][j] * hess[j][j] + hjj * hjj).sqrt().max(1e-300);
            cs[j] = hess[j][j] / denom;
            sn[j] = hjj / denom;
            hess[j][j] = denom;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            k_used = j + 1;
            rel = g[j + 1].abs() / bnorm;
            if hjj > 0.0 {
                let mut v = w;
                v.scale(1.0 / hjj);
                basis.push(v);
            }
            if rel <= opts.rel_tol || hjj == 0.0 {
                break;
            }
        }
        // back substitution for y
        let mut y = vec![0.0f64; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for (l, yl) in y.iter().enumerate().take(k_used).skip(i + 1) {
                s -= hess[i][l] * yl;
            }
            y[i] = s / hess[i][i];
        }
        // x += M^{-1} (V y)
        let mut vy = ScalarField::zeros(grid);
        for (i, yi) in y.iter().enumerate() {
            vy.add_scaled(&basis[i], *yi);
        }
        let mz = precond(&vy);
        x.add_scaled(&mz, 1.0);
        if rel <= opts.rel_tol {
            return (
                x,
                GmresStats {
                    iterations: total_iters,
                    rel_residual: rel,
                    converged: true,
                },
            );
        }
    }
    (
        x,
        GmresStats {
            iterations: total_iters,
            rel_residual: rel,
            converged: rel <= opts.rel_tol,
        },
    )
}

pub fn gmres_checked<A, M>(
    apply: A,
    precond: M,
    b: &ScalarField,
    opts: &GmresOptions,
) -> Result<(ScalarField, GmresStats)>
where
    A: Fn(&ScalarField) -> ScalarField,
    M: Fn(&ScalarField) -> ScalarField,
{
    let (x, stats) = gmres(apply, precond, b, opts);
    if !stats.converged {
        return Err(CoreError::KrylovStagnation {
            rel_resid: stats.rel_residual,
            iters: stats.iterations,
        });
    }
    Ok((x, stats))
}

/// Fourier-diagonal preconditioner: the inverse of a constant-coefficient
/// operator whose symbol is supplied per integer wave vector. The zero mode
/// is annihilated (the solves run on mean-zero subspaces).
pub struct FourierDiagonal {
    grid: GridSpec,
    mult: Vec<f64>,
}

impl FourierDiagonal {
    /// Build from a symbol; the multiplier is `1/(symbol(k) - shift)`.
    /// Modes where the shifted symbol (nearly) vanishes are annihilated,
    /// which projects out the zero mode exactly when `shift == 0`; a
    /// nonzero shift keeps the constant direction invertible.
    pub fn from_symbol(grid: GridSpec, shift: f64, symbol: impl Fn(&[i64]) -> f64 + Sync) -> Self {
        let axes = grid.axes();
        let nn = grid.points_per_axis;
        let npts = grid.num_points();
        // max |shifted symbol| for the degeneracy cutoff
        let mut max_sym = 0.0f64;
        {
            let mut k = vec![0i64; axes];
            for idx in 0..npts {
                let mut rest = idx;
                for a in (0..axes).rev() {
                    k[a] = grid.wavenumber(rest % nn);
                    rest /= nn;
                }
                max_sym = max_sym.max((symbol(&k) - shift).abs());
            }
        }
        let floor = 1e-12 * max_sym.max(1e-300);
        let mut mult = vec![0.0f64; npts];
        exec::fill_indexed(&mut mult, |idx| {
            let mut k = [0i64; 6];
            let mut rest = idx;
            for a in (0..axes).rev() {
                k[a] = grid.wavenumber(rest % nn);
                rest /= nn;
            }
            let d = symbol(&k[..axes]) - shift;
            if d.abs() < floor {
                0.0
            } else {
                1.0 / d
            }
        });
        FourierDiagonal { grid, mult }
    }

    pub fn apply(&self, u: &ScalarField) -> ScalarField {
        assert_eq!(u.grid, self.grid);
        crate::spectral::apply_fourier_table(u, &self.mult)
    }
}
