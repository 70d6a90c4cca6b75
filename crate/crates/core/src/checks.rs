//! Runtime property suite: the invariants of the calculus kernel, the
//! residual equivalence, linearization consistency, kernel structure, and
//! manufactured-solution recovery, executed as a pass/fail table.
//!
//! The same functions back the `check` subcommand and the acceptance tests.

use crate::error::Result;
use crate::exec;
use crate::field::{integrate, top_ratio_checked, wedge, FormField, ScalarField};
use crate::geometry::{
    flat_metric, make_problem, manufactured_problem, skt_metric, NormKind, RhoTerm, XiTerm,
};
use crate::grid::GridSpec;
use crate::hessian::{gamma2_margin, pencil_vs_structure, sigma_k};
use crate::linearized::{apply_l, apply_l_star, solve_h, SolveHOptions};
use crate::probes::{band_limited_form, band_limited_real_11, band_limited_scalar};
use crate::residual::{residual_divergence, AssemblyOptions};
use crate::spectral::{differentiate, Deriv};
use crate::C64;
use std::sync::Arc;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, measured: f64, threshold: f64, detail: String) -> Self {
        CheckOutcome {
            name: name.to_string(),
            passed: measured <= threshold,
            measured,
            threshold,
            detail,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    /// Flip the torsion-group sign in the Hessian right-hand side.
    FTorsionSign,
}

#[derive(Debug, Clone)]
pub struct CheckOptions {
    pub seed: u64,
    pub mutate: Option<Mutation>,
    /// Grid sizes for the two complex dimensions.
    pub n2_points: usize,
    pub n3_points: usize,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            seed: 7,
            mutate: None,
            n2_points: 16,
            n3_points: 8,
        }
    }
}

/// Spectral-accuracy tolerance scale for coarse grids: derivative checks on
/// random band-limited data stay near machine precision, but quadrature
/// pairings degrade as the grid coarsens.
fn eps_n(points: usize) -> f64 {
    if points >= 16 {
        1e-10
    } else {
        1e-8
    }
}

pub fn run_all(opts: &CheckOptions) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    out.extend(check_dbar_squared(opts));
    out.push(check_wedge_commutativity(opts));
    out.push(check_wedge_point_oracle(opts));
    out.extend(check_calibration(opts));
    out.push(check_integration_oracle(opts));
    out.push(check_integration_by_parts(opts));
    out.extend(check_kappa(opts));
    out.push(check_adjointness_decay(opts));
    out.push(check_fd_consistency(opts));
    out.extend(check_kernels(opts));
    out.extend(check_manufactured(opts));
    out.push(check_fyfd_roundtrip(opts));
    out
}

pub fn all_passed(rows: &[CheckOutcome]) -> bool {
    rows.iter().all(|r| r.passed)
}

pub fn render_table(rows: &[CheckOutcome]) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "{:<44} {:>10} {:>10}  {}\n",
        "check", "measured", "threshold", "status"
    ));
    for r in rows {
        s.push_str(&format!(
            "{:<44} {:>10.3e} {:>10.1e}  {}{}\n",
            r.name,
            r.measured,
            r.threshold,
            if r.passed { "pass" } else { "FAIL" },
            if r.detail.is_empty() {
                String::new()
            } else {
                format!("  ({})", r.detail)
            }
        ));
    }
    s
}

// ---------------------------------------------------------------------------

pub fn check_dbar_squared(opts: &CheckOptions) -> Vec<CheckOutcome> {
    let mut rows = Vec::new();
    for (n, pts) in [(2usize, opts.n2_points), (3, opts.n3_points)] {
        let grid = GridSpec::new(n, pts).unwrap();
        let a = band_limited_form(grid, 0, 1, opts.seed, 2, 1.0);
        let b = band_limited_form(grid, 1, 0, opts.seed + 1, 2, 1.0);
        let dd = differentiate(&differentiate(&a, Deriv::D).unwrap(), Deriv::D).unwrap();
        let bb = differentiate(&differentiate(&b, Deriv::Dbar).unwrap(), Deriv::Dbar).unwrap();
        let measured = dd.sup_norm().max(bb.sup_norm());
        rows.push(CheckOutcome::new(
            &format!("d^2 = 0 and dbar^2 = 0 (n={n}, N={pts})"),
            measured,
            1e-12,
            String::new(),
        ));
    }
    rows
}

pub fn check_wedge_commutativity(opts: &CheckOptions) -> CheckOutcome {
    let grid = GridSpec::new(2, opts.n2_points).unwrap();
    // mixed degrees: (1,0)^(1,1) and (0,1)^(1,0)
    let a10 = band_limited_form(grid, 1, 0, opts.seed + 1, 1, 1.0);
    let b11 = band_limited_form(grid, 1, 1, opts.seed + 2, 1, 1.0);
    let c01 = band_limited_form(grid, 0, 1, opts.seed + 3, 1, 1.0);
    let mut worst = 0.0f64;
    // deg 1 * deg 2: commute
    let ab = wedge(&a10, &b11).unwrap();
    let ba = wedge(&b11, &a10).unwrap();
    worst = worst.max(exec::max_indexed(ab.data.len(), |i| {
        (ab.data[i] - ba.data[i]).norm()
    }));
    // deg 1 * deg 1: anticommute
    let ac = wedge(&a10, &c01).unwrap();
    let ca = wedge(&c01, &a10).unwrap();
    worst = worst.max(exec::max_indexed(ac.data.len(), |i| {
        (ac.data[i] + ca.data[i]).norm()
    }));
    // bilinearity
    let mut combo = a10.clone();
    combo.scale(C64::new(0.3, -0.2));
    let lhs = wedge(&combo, &b11).unwrap();
    let mut rhs = ab.clone();
    rhs.scale(C64::new(0.3, -0.2));
    worst = worst.max(exec::max_indexed(lhs.data.len(), |i| {
        (lhs.data[i] - rhs.data[i]).norm()
    }));
    CheckOutcome::new("wedge graded commutativity + bilinearity", worst, 1e-12, String::new())
}

/// Brute-force exterior product at one point: represent forms as dense
/// antisymmetric tensors over the 2n complex covectors (dz first, dzbar
/// after) and wedge by summing over all index interleavings.
mod naive {
    use crate::C64;

    /// A form of total degree d as a map from index tuples (length d,
    /// values in 0..2n, strictly increasing) to coefficients; stored dense
    /// over all increasing tuples.
    pub struct Naive {
        pub basis: usize,
        pub tuples: Vec<Vec<usize>>,
        pub coefs: Vec<C64>,
    }

    pub fn increasing_tuples(basis: usize, d: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut cur = Vec::new();
        fn rec(basis: usize, d: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if cur.len() == d {
                out.push(cur.clone());
                return;
            }
            for v in start..basis {
                cur.push(v);
                rec(basis, d, v + 1, cur, out);
                cur.pop();
            }
        }
        rec(basis, d, 0, &mut cur, &mut out);
        out
    }

    impl Naive {
        pub fn zero(basis: usize, d: usize) -> Self {
            let tuples = increasing_tuples(basis, d);
            let coefs = vec![C64::new(0.0, 0.0); tuples.len()];
            Naive { basis, tuples, coefs }
        }

        pub fn set(&mut self, tuple: &[usize], c: C64) {
            let pos = self.tuples.iter().position(|t| t == tuple).unwrap();
            self.coefs[pos] += c;
        }

        pub fn get(&self, tuple: &[usize]) -> C64 {
            let pos = self.tuples.iter().position(|t| t == tuple).unwrap();
            self.coefs[pos]
        }

        /// Wedge by explicit interleaving with permutation signs.
        pub fn wedge(&self, other: &Naive) -> Naive {
            let d1 = self.tuples.first().map(|t| t.len()).unwrap_or(0);
            let d2 = other.tuples.first().map(|t| t.len()).unwrap_or(0);
            let mut out = Naive::zero(self.basis, d1 + d2);
            for (t1, c1) in self.tuples.iter().zip(self.coefs.iter()) {
                if c1.norm() == 0.0 {
                    continue;
                }
                for (t2, c2) in other.tuples.iter().zip(other.coefs.iter()) {
                    if c2.norm() == 0.0 {
                        continue;
                    }
                    if t1.iter().any(|v| t2.contains(v)) {
                        continue;
                    }
                    // sign of sorting the concatenation
                    let mut concat: Vec<usize> = t1.iter().chain(t2.iter()).cloned().collect();
                    let mut sign = 1.0;
                    for i in 0..concat.len() {
                        for j in (i + 1)..concat.len() {
                            if concat[i] > concat[j] {
                                concat.swap(i, j);
                                sign = -sign;
                            }
                        }
                    }
                    out.set(&concat, *c1 * *c2 * sign);
                }
            }
            out
        }
    }
}

pub fn check_wedge_point_oracle(opts: &CheckOptions) -> CheckOutcome {
    // three random (1,1)-forms at one point, n = 3, against the naive
    // permutation-sign oracle
    let n = 3;
    let grid = GridSpec::new(n, 8).unwrap();
    let fs: Vec<FormField> = (0..3)
        .map(|i| band_limited_form(grid, 1, 1, opts.seed + 10 + i, 1, 1.0))
        .collect();
    let w = wedge(&wedge(&fs[0], &fs[1]).unwrap(), &fs[2]).unwrap();
    let idx = 5; // arbitrary grid point
    let np = grid.num_points();
    // naive route: basis covectors 0..n are dz, n..2n are dzbar
    let to_naive = |f: &FormField| {
        let mut nv = naive::Naive::zero(2 * n, 2);
        for i in 0..n {
            for j in 0..n {
                nv.set(&[i, n + j], f.data[(i * n + j) * np + idx]);
            }
        }
        nv
    };
    let nw = to_naive(&fs[0]).wedge(&to_naive(&fs[1])).wedge(&to_naive(&fs[2]));
    // compare the top coefficient: tuple [0,1,2,3,4,5] corresponds to
    // dz^{123} ∧ dzbar^{123} after moving dzbar factors right; both store
    // plain coefficients so the values must agree up to the interleaving
    // sign of (z1 zb1 z2 zb2 ... -> z1 z2 z3 zb1 zb2 zb3), which the naive
    // route already applies by sorting.
    let naive_top = nw.get(&[0, 1, 2, 3, 4, 5]);
    let ours = w.data[idx];
    let measured = (naive_top - ours).norm() / ours.norm().max(1e-30);
    CheckOutcome::new(
        "wedge of three (1,1)-forms vs permutation oracle",
        measured,
        1e-12,
        String::new(),
    )
}

pub fn check_calibration(opts: &CheckOptions) -> Vec<CheckOutcome> {
    let mut rows = Vec::new();
    for (n, pts) in [(2usize, opts.n2_points), (3, opts.n3_points)] {
        let grid = GridSpec::new(n, pts).unwrap();
        let s = flat_metric(grid);
        let a = band_limited_real_11(grid, opts.seed + 20, 1, 0.3);
        // shift to a positive-definite pencil so sigma routes are smooth
        let mut a_pos = a.clone();
        let omega = s.omega_form();
        a_pos.add_scaled(&omega, C64::new(1.0, 0.0));
        // route 1: wedge + top_ratio; route 2: eigenvalues
        let lam = pencil_vs_structure(&a_pos, &s);
        let s1 = sigma_k(&lam, 1);
        let s2 = sigma_k(&lam, 2);
        let om_nm1 = s.omega_power(n - 1).unwrap();
        let t1 = wedge(&a_pos, &om_nm1).unwrap();
        let (r1f, imag1) = top_ratio_checked(&t1, &s);
        let mut worst = imag1;
        worst = worst.max(exec::max_indexed(grid.num_points(), |i| {
            (r1f.data[i] - s1.data[i] / n as f64).abs()
        }));
        let t2 = if n == 2 {
            wedge(&a_pos, &a_pos).unwrap()
        } else {
            wedge(&wedge(&a_pos, &a_pos).unwrap(), &omega).unwrap()
        };
        let (r2f, imag2) = top_ratio_checked(&t2, &s);
        worst = worst.max(imag2);
        let denom = (n * (n - 1)) as f64;
        worst = worst.max(exec::max_indexed(grid.num_points(), |i| {
            (r2f.data[i] - 2.0 * s2.data[i] / denom).abs()
        }));
        // gamma2 margins of omega itself calibrate to 1
        let (m1, m2) = gamma2_margin(&omega, &s);
        worst = worst.max((m1 - 1.0).abs()).max((m2 - 1.0).abs());
        rows.push(CheckOutcome::new(
            &format!("Gamma_2 calibration identities (n={n}, N={pts})"),
            worst,
            1e-10,
            String::new(),
        ));
    }
    rows
}

pub fn check_integration_oracle(opts: &CheckOptions) -> CheckOutcome {
    // (1/2pi) ∫ e^{cos x} dx = I_0(1); with unit volume the grid integral
    // of exp(cos x1) must match the Bessel series value.
    let grid = GridSpec::new(2, opts.n2_points).unwrap();
    let s = flat_metric(grid);
    let u = ScalarField::from_fn(grid, |i| grid.coords(i)[0].cos().exp());
    let got = integrate(&u, &s);
    // I_0(1) by its series, summed to machine precision
    let mut i0 = 0.0f64;
    let mut term = 1.0f64;
    let mut m = 0usize;
    while term > 1e-18 {
        i0 += term;
        m += 1;
        term = (0.25f64).powi(m as i32);
        let mut fact = 1.0;
        for k in 1..=m {
            fact *= k as f64;
        }
        term /= fact * fact;
    }
    CheckOutcome::new(
        "volume-normalized quadrature vs Bessel oracle",
        (got - i0).abs(),
        1e-12,
        format!("I0(1) = {i0:.15}"),
    )
}

pub fn check_integration_by_parts(opts: &CheckOptions) -> CheckOutcome {
    // | ∫ dbar u ∧ v + (-1)^{deg u} ∫ u ∧ dbar v | for an (n, n-1) pairing
    let grid = GridSpec::new(2, opts.n2_points).unwrap();
    let s = flat_metric(grid);
    // u: (1,0), v: (1,1) -> dbar u ∧ v and u ∧ dbar v are (2,2)
    let u = band_limited_form(grid, 1, 0, opts.seed + 30, 2, 1.0);
    let v = band_limited_form(grid, 1, 1, opts.seed + 31, 2, 1.0);
    let lhs = crate::field::integrate_form(&wedge(&differentiate(&u, Deriv::Dbar).unwrap(), &v).unwrap(), &s);
    let rhs = crate::field::integrate_form(&wedge(&u, &differentiate(&v, Deriv::Dbar).unwrap()).unwrap(), &s);
    // deg u = 1: ∫ dbar(u∧v) = 0 = ∫ dbar u ∧ v - ∫ u ∧ dbar v
    let measured = (lhs - rhs).abs();
    CheckOutcome::new(
        "discrete Stokes pairing (dbar integration by parts)",
        measured,
        eps_n(opts.n2_points),
        String::new(),
    )
}

pub fn check_kappa(opts: &CheckOptions) -> Vec<CheckOutcome> {
    let mut rows = Vec::new();
    let assembly = match opts.mutate {
        Some(Mutation::FTorsionSign) => AssemblyOptions {
            flip_torsion_sign: true,
        },
        None => AssemblyOptions::default(),
    };
    // Kahler n = 2 with rho, mu
    {
        let grid = GridSpec::new(2, opts.n2_points).unwrap();
        let s = Arc::new(flat_metric(grid));
        let rho = [RhoTerm {
            i: 0,
            j: 0,
            k: [0, 0, 1, 0, 0, 0],
            coef: C64::new(0.2, 0.0),
        }];
        let mu = [crate::geometry::MuTerm {
            k: [1, 0, 0, 0, 0, 0],
            c: 0.4,
            s: 0.1,
        }];
        let data = make_problem(-1.0, &rho, &mu, 0.05, NormKind::L1, s).unwrap();
        let mut worst = 0.0f64;
        let mut kappa_err = 0.0f64;
        for t in [0.0, 0.5, 1.0] {
            let phi = {
                let mut p = band_limited_scalar(grid, opts.seed + 40, 2, 0.1);
                p.shift(3.0);
                p
            };
            let rep =
                crate::residual::equivalence_factor_on(&phi, &data, t, &assembly).unwrap();
            worst = worst.max(rep.rel_spread).max(rep.ratio_std_rel);
            kappa_err = kappa_err
                .max((rep.kappa - rep.kappa_formula).abs() / rep.kappa_formula.abs());
        }
        rows.push(CheckOutcome::new(
            "residual equivalence spread (Kahler n=2, t sweep)",
            worst,
            1e-8,
            String::new(),
        ));
        rows.push(CheckOutcome::new(
            "kappa vs 2 n^2 (n-1) alpha (n=2)",
            kappa_err,
            1e-8,
            "kappa = -8 at alpha = -1".into(),
        ));
    }
    // trivial-data Kahler n = 3
    {
        let grid = GridSpec::new(3, opts.n3_points).unwrap();
        let s = Arc::new(flat_metric(grid));
        let data = make_problem(-1.0, &[], &[], 0.05, NormKind::L1, s).unwrap();
        let rep = crate::residual::equivalence_factor(&data, 1.0, opts.seed + 41).unwrap();
        rows.push(CheckOutcome::new(
            "kappa vs formula (Kahler n=3)",
            (rep.kappa - (-36.0)).abs() / 36.0,
            1e-7,
            format!("kappa = {:.9}", rep.kappa),
        ));
    }
    // SKT n = 3: the torsion terms enter
    {
        let grid = GridSpec::new(3, opts.n3_points).unwrap();
        let xi = [XiTerm {
            j: 1,
            k: [1, 0, 0, 0, 0, 0],
            coef: C64::new(1.0, 0.0),
        }];
        let s = Arc::new(skt_metric(grid, &xi, 0.05).unwrap());
        let rho = [RhoTerm {
            i: 0,
            j: 1,
            k: [0, 1, 0, 0, 0, 0],
            coef: C64::new(0.1, 0.05),
        }];
        let data = make_problem(-1.0, &rho, &[], 0.05, NormKind::L1, s).unwrap();
        let mut worst = 0.0f64;
        for t in [0.0, 0.5, 1.0] {
            let phi = {
                let mut p = band_limited_scalar(grid, opts.seed + 42, 1, 0.1);
                p.shift(3.0);
                p
            };
            let rep =
                crate::residual::equivalence_factor_on(&phi, &data, t, &assembly).unwrap();
            worst = worst.max(rep.rel_spread);
        }
        rows.push(CheckOutcome::new(
            "residual equivalence spread (SKT n=3, t sweep)",
            worst,
            1e-8,
            "exercises every torsion term".into(),
        ));
    }
    rows
}

pub fn check_adjointness_decay(_opts: &CheckOptions) -> CheckOutcome {
    // |<Lu, v> - <u, L*v>| must drop by >= 10x from N=16 to N=32 on fixed
    // analytic (non-band-limited) data
    let defect = |pts: usize| -> f64 {
        let grid = GridSpec::new(2, pts).unwrap();
        let s = Arc::new(flat_metric(grid));
        let data = make_problem(-1.0, &[], &[], 0.05, NormKind::L1, s.clone()).unwrap();
        let phi_hat = ScalarField::from_fn(grid, |i| {
            let x = grid.coords(i);
            3.0 + 1.5 * (x[0]).cos() + 0.7 * (x[1] + x[2]).sin()
        });
        let u = ScalarField::from_fn(grid, |i| {
            let x = grid.coords(i);
            (x[0] - x[3]).cos()
        });
        let v = ScalarField::from_fn(grid, |i| {
            let x = grid.coords(i);
            (x[1]).sin() * (1.0 + 0.5 * (x[2]).cos())
        });
        let lu = apply_l(&u, &phi_hat, 1.0, &data);
        let lsv = apply_l_star(&v, &phi_hat, 1.0, &data);
        let nfact = 2.0;
        let lhs = {
            let prod = ScalarField::from_fn(grid, |i| lu.data[i] * v.data[i]);
            nfact * integrate(&prod, s.as_ref())
        };
        let rhs = {
            let prod = ScalarField::from_fn(grid, |i| u.data[i] * lsv.data[i]);
            nfact * integrate(&prod, s.as_ref())
        };
        (lhs - rhs).abs()
    };
    let d16 = defect(16);
    let d32 = defect(32);
    let ratio = d32 / d16.max(1e-300);
    CheckOutcome::new(
        "adjoint pairing defect decay N=16 -> N=32",
        ratio,
        0.1,
        format!("defects {d16:.3e} -> {d32:.3e}"),
    )
}

pub fn check_fd_consistency(opts: &CheckOptions) -> CheckOutcome {
    // apply_l matches [res(phi + s u) - res(phi)]/s with first-order error
    let grid = GridSpec::new(2, opts.n2_points).unwrap();
    let s = Arc::new(flat_metric(grid));
    let rho = [RhoTerm {
        i: 0,
        j: 0,
        k: [0, 1, 0, 0, 0, 0],
        coef: C64::new(0.15, 0.0),
    }];
    let data = make_problem(-1.0, &rho, &[], 0.05, NormKind::L1, s).unwrap();
    let phi_hat = {
        let mut p = band_limited_scalar(grid, opts.seed + 50, 1, 0.1);
        p.shift(3.0);
        p
    };
    let u = band_limited_scalar(grid, opts.seed + 51, 2, 1.0);
    let t = 0.7;
    let lu = apply_l(&u, &phi_hat, t, &data);
    let r0 = residual_divergence(&phi_hat, &data, t).values;
    let err_at = |step: f64| -> f64 {
        let mut phi_s = phi_hat.clone();
        phi_s.add_scaled(&u, step);
        let rs = residual_divergence(&phi_s, &data, t).values;
        exec::max_indexed(grid.num_points(), |i| {
            ((rs.data[i] - r0.data[i]) / step - lu.data[i]).abs()
        })
    };
    let e3 = err_at(1e-3);
    let e4 = err_at(1e-4);
    let slope_ratio = e3 / e4.max(1e-300);
    // first-order error: ratio of errors should track the step ratio (10),
    // allow [5, 20]
    let measured = if (5.0..=20.0).contains(&slope_ratio) && e4 < 1e-2 {
        0.0
    } else {
        slope_ratio
    };
    CheckOutcome::new(
        "linearization vs finite differences (first order)",
        measured,
        0.0,
        format!("errors {e3:.3e} / {e4:.3e}, ratio {slope_ratio:.2}"),
    )
}

pub fn check_kernels(opts: &CheckOptions) -> Vec<CheckOutcome> {
    let mut rows = Vec::new();
    // constants in Ker Ltilde and Ker L* on flat and SKT structures
    {
        let grid = GridSpec::new(2, opts.n2_points).unwrap();
        let s = Arc::new(flat_metric(grid));
        let data = make_problem(-1.0, &[], &[], 0.05, NormKind::L1, s.clone()).unwrap();
        let c = ScalarField::constant(grid, 1.0);
        let lt = crate::linearized::apply_l_tilde(&c, s);
        let phi_hat = {
            let mut p = band_limited_scalar(grid, opts.seed + 60, 1, 0.1);
            p.shift(3.0);
            p
        };
        let ls = apply_l_star(&c, &phi_hat, 1.0, &data);
        rows.push(CheckOutcome::new(
            "constants in Ker(metric trace) and Ker(adjoint)",
            lt.sup_norm().max(ls.sup_norm()),
            1e-10,
            String::new(),
        ));
    }
    // flat Kahler gauge solve gives h = 0
    {
        let grid = GridSpec::new(2, opts.n2_points).unwrap();
        let s = flat_metric(grid);
        let hs = solve_h(&s, &SolveHOptions::default()).unwrap();
        rows.push(CheckOutcome::new(
            "gauge solve on flat Kahler (h = 0)",
            hs.h.sup_norm().max(hs.defect),
            1e-10,
            String::new(),
        ));
    }
    // SKT gauge solve: positive kernel, small defect
    {
        let grid = GridSpec::new(3, opts.n3_points).unwrap();
        let xi = [XiTerm {
            j: 1,
            k: [1, 0, 0, 0, 0, 0],
            coef: C64::new(1.0, 0.0),
        }];
        let s = skt_metric(grid, &xi, 0.05).unwrap();
        match solve_h(&s, &SolveHOptions::default()) {
            Ok(hs) => {
                let ok_pos = hs.kernel_min > 0.0;
                rows.push(CheckOutcome::new(
                    "gauge solve on SKT structure (defect)",
                    hs.defect,
                    1e-8,
                    format!("kernel min = {:.3e}, positive = {ok_pos}", hs.kernel_min),
                ));
            }
            Err(e) => rows.push(CheckOutcome {
                name: "gauge solve on SKT structure (defect)".into(),
                passed: false,
                measured: f64::INFINITY,
                threshold: 1e-8,
                detail: e.to_string(),
            }),
        }
    }
    rows
}

pub fn check_manufactured(opts: &CheckOptions) -> Vec<CheckOutcome> {
    let mut rows = Vec::new();
    let grid = GridSpec::new(2, opts.n2_points.max(16)).unwrap();
    let s = Arc::new(flat_metric(grid));
    let phi_star = ScalarField::from_fn(grid, |i| 3.0 + 0.1 * grid.coords(i)[0].cos());
    let data = manufactured_problem(&phi_star, -1.0, &[], 1.0, NormKind::L1, s.clone()).unwrap();
    let r = residual_divergence(&phi_star, &data, 1.0).values;
    rows.push(CheckOutcome::new(
        "manufactured solution residual",
        r.sup_norm(),
        1e-10,
        String::new(),
    ));
    // refinement of a non-band-limited analytic phi: sup residual decays
    // spectrally
    let resid_at = |pts: usize| -> f64 {
        let grid = GridSpec::new(2, pts).unwrap();
        let s = Arc::new(flat_metric(grid));
        let phi_a = ScalarField::from_fn(grid, |i| 3.0 + 0.3 * (grid.coords(i)[0].cos()).exp());
        // data manufactured at N resolving the bandwidth: reuse phi_a but
        // mu from the coarse assembly is *not* exact, so measure the
        // self-consistency defect of the divergence assembly against the
        // exact zero of the hessian equivalence instead: here we simply
        // compare residual forms, whose difference is pure aliasing.
        let data = make_problem(-1.0, &[], &[], 0.05, NormKind::L1, s).unwrap();
        let rd = residual_divergence(&phi_a, &data, 1.0).values;
        let rh = crate::residual::residual_hessian(&phi_a, &data, 1.0).values;
        let kappa = 2.0 * 4.0 * (-1.0);
        exec::max_indexed(grid.num_points(), |i| {
            (rh.data[i] - kappa * rd.data[i]).abs()
        })
    };
    let c16 = resid_at(16);
    let c32 = resid_at(32);
    rows.push(CheckOutcome::new(
        "spectral decay of assembly aliasing N=16 -> N=32",
        c32 / c16.max(1e-300),
        0.1,
        format!("{c16:.3e} -> {c32:.3e}"),
    ));
    let _ = opts;
    rows
}

pub fn check_fyfd_roundtrip(opts: &CheckOptions) -> CheckOutcome {
    let grid = GridSpec::new(2, 8).unwrap();
    let u = band_limited_scalar(grid, opts.seed + 70, 2, 1.3);
    let bytes = crate::io::dump_scalar_bytes("probe", &u);
    let loaded = crate::io::load(&mut bytes.as_slice()).unwrap();
    let ok = match loaded.field {
        crate::io::LoadedField::Scalar(v) => {
            let bytes2 = crate::io::dump_scalar_bytes("probe", &v);
            bytes == bytes2
        }
        _ => false,
    };
    CheckOutcome::new(
        "FYFD round trip bit-exact",
        if ok { 0.0 } else { 1.0 },
        0.0,
        String::new(),
    )
}

/// Convenience used by tests: run the suite and return an error message
/// when anything failed.
pub fn run_all_strict(opts: &CheckOptions) -> Result<Vec<CheckOutcome>> {
    let rows = run_all(opts);
    if all_passed(&rows) {
        Ok(rows)
    } else {
        let failed: Vec<&str> = rows
            .iter()
            .filter(|r| !r.passed)
            .map(|r| r.name.as_str())
            .collect();
        Err(crate::CoreError::InvalidData(format!(
            "property suite failures: {}",
            failed.join(", ")
        )))
    }
}
