//! Damped Newton-Krylov solve at fixed continuation parameter, and the
//! adaptive path between t = 0 and t = 1.
//!
//! The gauge constraint `||e^{-phi}|| = A` is handled by tangent-space
//! projection plus exact closed-form renormalization: the Krylov solve runs
//! on the weighted-mean-zero subspace (weight `e^{-phi}` for the L1 norm,
//! `e^{-n phi}` for L^n) against mean-zero right-hand sides, and every
//! accepted iterate is renormalized in closed form. Cone margins are
//! checked before the residual in the backtracking line search.

use crate::error::{CoreError, Result};
#[cfg(test)]
use crate::exec;
use crate::field::{integrate, ScalarField};
use crate::geometry::{gauge_norm, NormKind, ProblemData};
use crate::linearized::freeze_linearized;
use crate::monitors::{full_report, MonitorReport};
use crate::residual::{omega_tilde_at, residual_divergence_with, PhiDerivatives};
use crate::solver::{gmres, GmresOptions};

#[derive(Debug, Clone)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub gmres: GmresOptions,
    pub armijo: f64,
    pub backtrack_ratio: f64,
    pub max_backtracks: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-9,
            max_iters: 50,
            gmres: GmresOptions {
                restart: 30,
                max_restarts: 6,
                rel_tol: 1e-10,
            },
            armijo: 1e-4,
            backtrack_ratio: 0.5,
            max_backtracks: 20,
        }
    }
}

/// Accepted state of the Newton solve at one continuation parameter.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub phi: ScalarField,
    pub t: f64,
    pub newton_iters: usize,
    pub krylov_iters: usize,
    pub residual_sup: f64,
    pub cone_margins: (f64, f64),
    pub norm_residual: f64,
    /// Residual history across Newton iterations (for convergence-order
    /// diagnostics).
    pub residual_history: Vec<f64>,
}

/// Initial state of the path: `phi_0 = h + log ||e^{-h}|| - log A`, which
/// solves the t = 0 equation up to the gauge-solve tolerance.
pub fn initial_solution(data: &ProblemData) -> Result<ScalarField> {
    let s = data.structure.as_ref();
    let mut phi = data.h.clone();
    let norm_h = gauge_norm(&data.h, data.norm, s);
    phi.shift(norm_h.ln() - data.a_norm.ln());
    // cone membership at t = 0
    let derivs = PhiDerivatives::compute(&phi);
    let cache = data.contraction_cache();
    let (m1, m2) = crate::hessian::gamma2_margin_fn(s.grid, s, |idx| {
        omega_tilde_at(idx, phi.data[idx], &derivs, s, &cache, data.alpha, 0.0)
    });
    if m1 <= 0.0 || m2 <= 0.0 {
        return Err(CoreError::ConeViolation {
            m1,
            m2,
            context: "at the initial state; A is too large for this data".into(),
        });
    }
    Ok(phi)
}

/// Exact gauge restoration: `phi + log(||e^{-phi}|| / A)`.
pub fn renormalize(
    phi: &ScalarField,
    a_norm: f64,
    kind: NormKind,
    data: &ProblemData,
) -> ScalarField {
    let nrm = gauge_norm(phi, kind, data.structure.as_ref());
    let mut out = phi.clone();
    out.shift((nrm / a_norm).ln());
    out
}

/// Subtract the plain omega-mean (the residual's codomain is mean-zero).
fn project_mean_zero(r: &mut ScalarField, data: &ProblemData) {
    let mean = integrate(r, data.structure.as_ref());
    r.shift(-mean);
}

/// Projection onto the constraint tangent space:
/// `u - (∫ u w omega^n / ∫ w omega^n)` with `w = e^{-kappa phi}`.
fn project_tangent(u: &ScalarField, weight: &ScalarField, data: &ProblemData) -> ScalarField {
    let s = data.structure.as_ref();
    let grid = u.grid;
    let uw = ScalarField::from_fn(grid, |i| u.data[i] * weight.data[i]);
    let num = integrate(&uw, s);
    let den = integrate(weight, s);
    let mut out = u.clone();
    out.shift(-num / den);
    out
}

/// Damped Newton iteration at fixed t.
pub fn newton_solve_at_t(
    phi_init: &ScalarField,
    t: f64,
    data: &ProblemData,
    opts: &NewtonOptions,
) -> Result<SolverState> {
    let s = data.structure.as_ref();
    let grid = phi_init.grid;
    let kappa = match data.norm {
        NormKind::L1 => 1.0,
        NormKind::Ln => grid.n as f64,
    };
    let mut phi = renormalize(phi_init, data.a_norm, data.norm, data);
    let mut krylov_total = 0usize;
    let mut history = Vec::new();
    let cache = data.contraction_cache();

    let eval = |phi: &ScalarField| -> (ScalarField, f64, (f64, f64)) {
        let derivs = PhiDerivatives::compute(phi);
        let mut r = residual_divergence_with(phi, &derivs, data, t).values;
        project_mean_zero(&mut r, data);
        let sup = r.sup_norm();
        let margins = crate::hessian::gamma2_margin_fn(grid, s, |idx| {
            omega_tilde_at(idx, phi.data[idx], &derivs, s, &cache, data.alpha, t)
        });
        (r, sup, margins)
    };

    let (mut r, mut resid_sup, mut margins) = eval(&phi);
    history.push(resid_sup);
    if margins.0 <= 0.0 || margins.1 <= 0.0 {
        return Err(CoreError::ConeViolation {
            m1: margins.0,
            m2: margins.1,
            context: format!("at the Newton start, t = {t}"),
        });
    }

    for iter in 0..opts.max_iters {
        if resid_sup <= opts.tol {
            let norm_residual = (data.gauge_norm(&phi) - data.a_norm).abs();
            return Ok(SolverState {
                phi,
                t,
                newton_iters: iter,
                krylov_iters: krylov_total,
                residual_sup: resid_sup,
                cone_margins: margins,
                norm_residual,
                residual_history: history,
            });
        }
        // freeze the linearization and solve L u = -r on the projected
        // subspaces
        let op = freeze_linearized(&phi, t, data);
        let pre = op.preconditioner(0.0);
        let weight = phi.map(|v| (-kappa * v).exp());
        let apply = |u: &ScalarField| {
            let pu = project_tangent(u, &weight, data);
            let mut v = op.apply(&pu);
            project_mean_zero(&mut v, data);
            v
        };
        let precond = |u: &ScalarField| {
            let v = pre.apply(u);
            project_tangent(&v, &weight, data)
        };
        let mut rhs = r.clone();
        rhs.scale(-1.0);
        let (u_raw, stats) = gmres(apply, precond, &rhs, &opts.gmres);
        krylov_total += stats.iterations;
        if !stats.converged {
            return Err(CoreError::KrylovStagnation {
                rel_resid: stats.rel_residual,
                iters: stats.iterations,
            });
        }
        let u = project_tangent(&u_raw, &weight, data);

        // backtracking line search: cone check first, then residual decrease
        let mut tau = 1.0f64;
        let mut accepted = false;
        for _bt in 0..opts.max_backtracks {
            let mut phi_try = phi.clone();
            phi_try.add_scaled(&u, tau);
            let phi_try = renormalize(&phi_try, data.a_norm, data.norm, data);
            let (r_try, sup_try, margins_try) = eval(&phi_try);
            if margins_try.0 <= 0.0 || margins_try.1 <= 0.0 {
                tau *= opts.backtrack_ratio;
                continue;
            }
            if sup_try <= (1.0 - opts.armijo * tau) * resid_sup {
                phi = phi_try;
                r = r_try;
                resid_sup = sup_try;
                margins = margins_try;
                history.push(resid_sup);
                accepted = true;
                break;
            }
            tau *= opts.backtrack_ratio;
        }
        if !accepted {
            return Err(CoreError::LineSearchStagnation {
                resid: resid_sup,
                iter,
            });
        }
    }
    if resid_sup <= opts.tol {
        let norm_residual = (data.gauge_norm(&phi) - data.a_norm).abs();
        return Ok(SolverState {
            phi,
            t,
            newton_iters: opts.max_iters,
            krylov_iters: krylov_total,
            residual_sup: resid_sup,
            cone_margins: margins,
            norm_residual,
            residual_history: history,
        });
    }
    Err(CoreError::NewtonFailure(format!(
        "no convergence in {} iterations (residual {resid_sup:.3e})",
        opts.max_iters
    )))
}

// ---------------------------------------------------------------------------
// Continuation driver
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ContinuationOptions {
    pub newton: NewtonOptions,
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub growth: f64,
    /// Consecutive cheap steps before the step size grows.
    pub easy_threshold: usize,
    /// Newton iteration count at or below which a step counts as easy.
    pub easy_iters: usize,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        ContinuationOptions {
            newton: NewtonOptions::default(),
            dt_init: 0.25,
            dt_min: 1e-4,
            dt_max: 0.25,
            growth: 1.5,
            easy_threshold: 2,
            easy_iters: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub enum ContinuationOutcome {
    Completed,
    StepUnderflow { at_t: f64, dt: f64, last_error: String },
}

pub struct StepRecord {
    pub state: SolverState,
    pub dt: f64,
    pub monitor: MonitorReport,
}

pub struct ContinuationTrace {
    pub steps: Vec<StepRecord>,
    pub outcome: ContinuationOutcome,
}

impl ContinuationTrace {
    pub fn completed(&self) -> bool {
        matches!(self.outcome, ContinuationOutcome::Completed)
    }

    pub fn final_state(&self) -> &SolverState {
        &self.steps.last().expect("trace has at least the start state").state
    }
}

/// Run the path from the closed-form start at `t = 0` to `t = 1`.
pub fn run_continuation(data: &ProblemData, opts: &ContinuationOptions) -> Result<ContinuationTrace> {
    let phi0 = initial_solution(data)?;
    let start = newton_solve_at_t(&phi0, 0.0, data, &opts.newton)?;
    run_continuation_from(data, start, 1.0, opts)
}

/// Continue from an accepted state toward `t_target` (forward or backward).
pub fn run_continuation_from(
    data: &ProblemData,
    start: SolverState,
    t_target: f64,
    opts: &ContinuationOptions,
) -> Result<ContinuationTrace> {
    let mut steps: Vec<StepRecord> = Vec::new();
    let monitor = full_report(&start.phi, data, start.t, start.residual_sup);
    let mut t = start.t;
    let direction = if t_target >= t { 1.0 } else { -1.0 };
    steps.push(StepRecord {
        state: start,
        dt: 0.0,
        monitor,
    });
    let mut dt = opts.dt_init;
    let mut easy_run = 0usize;

    while (t_target - t) * direction > 1e-14 {
        let t_next = if (t_target - t).abs() <= dt {
            t_target
        } else {
            t + direction * dt
        };
        // secant predictor over the last two accepted states
        let pred = if steps.len() >= 2 {
            let last = &steps[steps.len() - 1].state;
            let prev = &steps[steps.len() - 2].state;
            let denom = last.t - prev.t;
            if denom.abs() > 1e-14 {
                let fac = (t_next - last.t) / denom;
                let mut p = last.phi.clone();
                let mut diff = last.phi.clone();
                diff.add_scaled(&prev.phi, -1.0);
                p.add_scaled(&diff, fac);
                p
            } else {
                steps.last().unwrap().state.phi.clone()
            }
        } else {
            steps.last().unwrap().state.phi.clone()
        };

        match newton_solve_at_t(&pred, t_next, data, &opts.newton) {
            Ok(state) => {
                let monitor = full_report(&state.phi, data, t_next, state.residual_sup);
                let easy = state.newton_iters <= opts.easy_iters;
                steps.push(StepRecord {
                    state,
                    dt: (t_next - t).abs(),
                    monitor,
                });
                t = t_next;
                if easy {
                    easy_run += 1;
                    if easy_run >= opts.easy_threshold {
                        dt = (dt * opts.growth).min(opts.dt_max);
                        easy_run = 0;
                    }
                } else {
                    easy_run = 0;
                }
            }
            Err(e) => {
                dt *= 0.5;
                easy_run = 0;
                if dt < opts.dt_min {
                    return Ok(ContinuationTrace {
                        steps,
                        outcome: ContinuationOutcome::StepUnderflow {
                            at_t: t,
                            dt,
                            last_error: e.to_string(),
                        },
                    });
                }
            }
        }
    }
    Ok(ContinuationTrace {
        steps,
        outcome: ContinuationOutcome::Completed,
    })
}

/// CSV rows for a trace (stable column set).
pub fn trace_csv(trace: &ContinuationTrace) -> String {
    let mut out = String::from(
        "t,dt,newton_iters,krylov_iters,residual_sup,m1,m2,sup_exp_neg_phi,inf_exp_neg_phi,sup_grad2,lambda1_sup\n",
    );
    for s in &trace.steps {
        out.push_str(&format!(
            "{},{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
            s.state.t,
            s.dt,
            s.state.newton_iters,
            s.state.krylov_iters,
            s.state.residual_sup,
            s.state.cone_margins.0,
            s.state.cone_margins.1,
            s.monitor.sup_exp_neg_phi,
            s.monitor.inf_exp_neg_phi,
            s.monitor.sup_grad2,
            s.monitor.lambda1_sup,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{flat_metric, make_problem};
    use crate::grid::GridSpec;
    use std::sync::Arc;

    #[test]
    fn initial_solution_trivial_case() {
        let grid = GridSpec::new(2, 8).unwrap();
        let s = Arc::new(flat_metric(grid));
        let data = make_problem(-1.0, &[], &[], 0.05, NormKind::L1, s).unwrap();
        let phi0 = initial_solution(&data).unwrap();
        let expect = -(0.05f64).ln();
        assert!(
            exec::max_indexed(grid.num_points(), |i| (phi0.data[i] - expect).abs()) < 1e-13
        );
        let drift = (data.gauge_norm(&phi0) - 0.05).abs();
        assert!(drift < 1e-12 * 0.05, "norm drift = {drift:.3e}");
    }

    #[test]
    fn renormalize_closed_forms() {
        let grid = GridSpec::new(2, 8).unwrap();
        let s = Arc::new(flat_metric(grid));
        let data = make_problem(-1.0, &[], &[], 0.1, NormKind::L1, s).unwrap();
        // ||e^{-phi}||_1 = 2A  =>  shift by log 2
        let phi = ScalarField::constant(grid, -(0.2f64).ln());
        let out = renormalize(&phi, 0.1, NormKind::L1, &data);
        let shift = out.data[0] - phi.data[0];
        assert!((shift - 2.0f64.ln()).abs() < 1e-13, "shift = {shift}");
        // already normalized: no further shift beyond summation roundoff
        let out2 = renormalize(&out, 0.1, NormKind::L1, &data);
        let c2 = (out2.data[0] - out.data[0]).abs();
        assert!(c2 < 1e-14, "second shift = {c2:.3e}");
        // Ln with constant phi on unit volume
        let out3 = renormalize(&phi, 0.1, NormKind::Ln, &data);
        assert!((out3.data[0] - (-(0.1f64).ln())).abs() < 1e-13);
    }

    #[test]
    fn newton_fixed_point_stays_put() {
        let grid = GridSpec::new(2, 8).unwrap();
        let s = Arc::new(flat_metric(grid));
        let data = make_problem(-1.0, &[], &[], 0.05, NormKind::L1, s).unwrap();
        let phi = ScalarField::constant(grid, -(0.05f64).ln());
        let state = newton_solve_at_t(&phi, 1.0, &data, &NewtonOptions::default()).unwrap();
        assert!(state.newton_iters <= 1);
        let drift =
            exec::max_indexed(grid.num_points(), |i| (state.phi.data[i] - phi.data[i]).abs());
        assert!(drift < 1e-10, "drift = {drift}");
    }

    #[test]
    fn trivial_continuation_stays_constant() {
        let grid = GridSpec::new(2, 8).unwrap();
        let s = Arc::new(flat_metric(grid));
        let data = make_problem(-1.0, &[], &[], 0.05, NormKind::L1, s).unwrap();
        let trace = run_continuation(&data, &ContinuationOptions::default()).unwrap();
        assert!(trace.completed());
        let expect = -(0.05f64).ln();
        for step in &trace.steps {
            assert!(step.state.newton_iters <= 2);
            let drift = exec::max_indexed(grid.num_points(), |i| {
                (step.state.phi.data[i] - expect).abs()
            });
            assert!(drift < 1e-9);
        }
        assert!((trace.final_state().t - 1.0).abs() < 1e-15);
    }
}
