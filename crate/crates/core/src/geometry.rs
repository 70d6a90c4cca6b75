//! Hermitian structures on the flat torus and the equation data.
//!
//! Metrics and the (1,1)-form datum rho are represented as finite
//! trigonometric polynomials (exact symbolic derivatives, pointwise
//! evaluation); only genuinely solution-dependent quantities live on the
//! grid. The flat metric is `c * identity` with `c` fixed by unit volume;
//! SKT structures take `omega = omega_0 + eps (d xi + conj(d xi))` for a
//! (0,1)-form xi, which is pluriclosed for free since `del^2 = 0`.

use crate::error::{CoreError, Result};
use crate::exec;
use crate::field::{integrate, FormField, ScalarField, VolumeWeight};
use crate::grid::GridSpec;
use crate::smallalg::{comp_masks, merge_sign, SmallMat};
use crate::C64;
use std::sync::Arc;

// ---------------------------------------------------------------------------
// Analytic trigonometric-polynomial forms
// ---------------------------------------------------------------------------

/// One Fourier term of a (p,q)-form component: `coef * exp(i <k, x>)` on
/// the basis element labelled by the z / zbar index masks.
#[derive(Debug, Clone, Copy)]
pub struct TrigTerm {
    pub im: u8,
    pub jm: u8,
    pub k: [i32; 6],
    pub coef: C64,
}

/// A band-limited (p,q)-form with exact symbolic calculus.
#[derive(Debug, Clone)]
pub struct TrigForm {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub i_pow: u8,
    pub terms: Vec<TrigTerm>,
}

/// Symbol of `d/dz_j` on `exp(i <k, x>)` (0-based complex direction).
pub fn zeta(k: &[i32; 6], j: usize) -> C64 {
    C64::new(k[2 * j + 1] as f64, k[2 * j] as f64) * 0.5
}

/// Symbol of `d/dzbar_j`.
pub fn eta(k: &[i32; 6], j: usize) -> C64 {
    C64::new(-(k[2 * j + 1] as f64), k[2 * j] as f64) * 0.5
}

impl TrigForm {
    pub fn zero(n: usize, p: usize, q: usize, i_pow: u8) -> Self {
        TrigForm {
            n,
            p,
            q,
            i_pow: i_pow % 4,
            terms: Vec::new(),
        }
    }

    /// Constant multiple of the identity as an (1,1) form (i_pow 1).
    pub fn scaled_identity(n: usize, c: f64) -> Self {
        let mut f = Self::zero(n, 1, 1, 1);
        for i in 0..n {
            f.terms.push(TrigTerm {
                im: 1 << i,
                jm: 1 << i,
                k: [0; 6],
                coef: C64::new(c, 0.0),
            });
        }
        f
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn scale(&mut self, c: C64) {
        for t in &mut self.terms {
            t.coef *= c;
        }
    }

    pub fn add(&mut self, other: &TrigForm, c: C64) {
        assert_eq!((self.p, self.q, self.i_pow), (other.p, other.q, other.i_pow));
        for t in &other.terms {
            self.terms.push(TrigTerm {
                coef: t.coef * c,
                ..*t
            });
        }
        self.combine();
    }

    /// Merge like terms, dropping coefficients below 1e-14 of the largest.
    pub fn combine(&mut self) {
        let mut merged: Vec<TrigTerm> = Vec::new();
        for t in &self.terms {
            if let Some(m) = merged
                .iter_mut()
                .find(|m| m.im == t.im && m.jm == t.jm && m.k == t.k)
            {
                m.coef += t.coef;
            } else {
                merged.push(*t);
            }
        }
        let scale = merged
            .iter()
            .map(|t| t.coef.norm())
            .fold(0.0f64, f64::max)
            .max(1e-300);
        merged.retain(|t| t.coef.norm() > 1e-14 * scale);
        self.terms = merged;
    }

    /// Exact symbolic exterior derivative.
    pub fn differentiate(&self, which: crate::spectral::Deriv) -> TrigForm {
        use crate::spectral::Deriv;
        let (p_out, q_out) = match which {
            Deriv::D => (self.p + 1, self.q),
            Deriv::Dbar => (self.p, self.q + 1),
        };
        assert!(p_out <= self.n && q_out <= self.n, "degree overflow");
        let mut out = TrigForm::zero(self.n, p_out, q_out, self.i_pow);
        for t in &self.terms {
            for j in 0..self.n {
                let bit = 1u8 << j;
                match which {
                    Deriv::D => {
                        if t.im & bit != 0 {
                            continue;
                        }
                        let s = merge_sign(bit, t.im);
                        out.terms.push(TrigTerm {
                            im: t.im | bit,
                            jm: t.jm,
                            k: t.k,
                            coef: t.coef * zeta(&t.k, j) * s,
                        });
                    }
                    Deriv::Dbar => {
                        if t.jm & bit != 0 {
                            continue;
                        }
                        let sp = if self.p % 2 == 0 { 1.0 } else { -1.0 };
                        let s = sp * merge_sign(bit, t.jm);
                        out.terms.push(TrigTerm {
                            im: t.im,
                            jm: t.jm | bit,
                            k: t.k,
                            coef: t.coef * eta(&t.k, j) * s,
                        });
                    }
                }
            }
        }
        out.combine();
        out
    }

    /// Complex conjugate form (bidegree swaps).
    pub fn conj_form(&self) -> TrigForm {
        let sign = if (self.p * self.q) % 2 == 0 { 1.0 } else { -1.0 };
        let mut out = TrigForm::zero(self.n, self.q, self.p, (4 - self.i_pow % 4) % 4);
        for t in &self.terms {
            let mut k = t.k;
            for v in &mut k {
                *v = -*v;
            }
            out.terms.push(TrigTerm {
                im: t.jm,
                jm: t.im,
                k,
                coef: t.coef.conj() * sign,
            });
        }
        out.combine();
        out
    }

    pub fn num_comps(&self) -> usize {
        crate::smallalg::binomial(self.n, self.p) * crate::smallalg::binomial(self.n, self.q)
    }

    /// Evaluate all components at grid point `idx` into `out`.
    pub fn eval_at(&self, grid: &GridSpec, idx: usize, out: &mut [C64]) {
        debug_assert_eq!(out.len(), self.num_comps());
        for v in out.iter_mut() {
            *v = C64::new(0.0, 0.0);
        }
        if self.terms.is_empty() {
            return;
        }
        let x = grid.coords(idx);
        let imasks = comp_masks(self.n, self.p);
        let jmasks = comp_masks(self.n, self.q);
        for t in &self.terms {
            let mut phase = 0.0;
            for (a, &ka) in t.k.iter().take(grid.axes()).enumerate() {
                phase += ka as f64 * x[a];
            }
            let e = C64::new(phase.cos(), phase.sin());
            let ci = imasks.iter().position(|&m| m == t.im).unwrap() * jmasks.len()
                + jmasks.iter().position(|&m| m == t.jm).unwrap();
            out[ci] += t.coef * e;
        }
    }

    /// Evaluate an (1,1) form into a small matrix at a point.
    pub fn eval_mat(&self, grid: &GridSpec, idx: usize) -> SmallMat {
        debug_assert!(self.p == 1 && self.q == 1);
        let n = self.n;
        let mut buf = [C64::new(0.0, 0.0); 9];
        self.eval_at(grid, idx, &mut buf[..n * n]);
        let mut m = SmallMat::zero(n);
        for i in 0..n {
            for j in 0..n {
                m.e[i][j] = buf[i * n + j];
            }
        }
        m
    }

    /// Materialize on a grid.
    pub fn to_field(&self, grid: GridSpec) -> FormField {
        assert_eq!(grid.n, self.n);
        let nc = self.num_comps();
        let mut out = FormField::zeros(grid, self.p, self.q, self.i_pow);
        let np = grid.num_points();
        // evaluate point-major to reuse coordinate work
        let mut values = vec![C64::new(0.0, 0.0); nc * np];
        exec::for_each_chunk_mut(&mut values, nc, |idx, chunk| {
            self.eval_at(&grid, idx, chunk);
        });
        for c in 0..nc {
            let comp = out.comp_mut(c);
            exec::fill_indexed(comp, |i| values[i * nc + c]);
        }
        out
    }

    /// Sup over the grid of the largest component modulus.
    pub fn sup_norm(&self, grid: &GridSpec) -> f64 {
        if self.terms.is_empty() {
            return 0.0;
        }
        let nc = self.num_comps();
        exec::max_indexed(grid.num_points(), |idx| {
            let mut buf = [C64::new(0.0, 0.0); 16];
            self.eval_at(grid, idx, &mut buf[..nc]);
            buf[..nc].iter().map(|v| v.norm()).fold(0.0, f64::max)
        })
    }

    /// Max Hermitian defect |m - m^H| sampled on the grid (for (1,1) forms).
    pub fn hermitian_defect(&self, grid: &GridSpec) -> f64 {
        assert!(self.p == 1 && self.q == 1);
        exec::max_indexed(grid.num_points(), |idx| {
            let m = self.eval_mat(grid, idx);
            let mut d = 0.0f64;
            for i in 0..self.n {
                for j in 0..self.n {
                    d = d.max((m.e[i][j] - m.e[j][i].conj()).norm());
                }
            }
            d
        })
    }
}

// ---------------------------------------------------------------------------
// Hermitian structure
// ---------------------------------------------------------------------------

/// The base Hermitian metric with its derived analytic data.
#[derive(Debug, Clone)]
pub struct HermitianStructure {
    pub grid: GridSpec,
    /// The metric (1,1)-form, Hermitian trig polynomial, volume-scaled.
    pub omega: TrigForm,
    pub d_omega: TrigForm,
    pub db_omega: TrigForm,
    pub ddbar_omega: TrigForm,
    pub kaehler: bool,
    /// Sup norm of the coefficients of `sqrt(-1) ddbar omega^{n-2}`
    /// (identically zero for n = 2).
    pub astheno_defect: f64,
    /// Fast path for constant metrics.
    flat: Option<(SmallMat, SmallMat, f64)>,
}

impl HermitianStructure {
    fn build(grid: GridSpec, mut omega: TrigForm) -> Result<Self> {
        // positivity against the flat reference
        let (at, min_eig) = min_metric_eigenvalue(&omega, &grid);
        if min_eig <= 0.0 {
            return Err(CoreError::MetricNotPositive { min_eig, at });
        }
        // volume normalization: scale omega so that sum detg * 2^n h^{2n} = 1
        let vol = raw_volume(&omega, &grid);
        let scale = vol.powf(-1.0 / grid.n as f64);
        omega.scale(C64::new(scale, 0.0));

        let d_omega = omega.differentiate(crate::spectral::Deriv::D);
        let db_omega = omega.differentiate(crate::spectral::Deriv::Dbar);
        let ddbar_omega = db_omega.differentiate(crate::spectral::Deriv::D);
        let kaehler = d_omega.is_zero() && db_omega.is_zero();
        let astheno_defect = if grid.n == 2 {
            0.0
        } else {
            ddbar_omega.sup_norm(&grid)
        };
        if astheno_defect > 1e-8 {
            return Err(CoreError::InvalidData(format!(
                "structure is not astheno-Kahler: defect {astheno_defect:.3e}"
            )));
        }
        let flat = if omega.terms.iter().all(|t| t.k.iter().all(|&v| v == 0)) {
            let g = omega.eval_mat(&grid, 0);
            let ginv = g.inverse();
            let detg = g.det().re;
            Some((g, ginv, detg))
        } else {
            None
        };
        Ok(HermitianStructure {
            grid,
            omega,
            d_omega,
            db_omega,
            ddbar_omega,
            kaehler,
            astheno_defect,
            flat,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.grid.n
    }

    #[inline]
    pub fn is_flat(&self) -> bool {
        self.flat.is_some()
    }

    #[inline]
    pub fn g_at(&self, idx: usize) -> SmallMat {
        match &self.flat {
            Some((g, _, _)) => *g,
            None => self.omega.eval_mat(&self.grid, idx),
        }
    }

    #[inline]
    pub fn ginv_at(&self, idx: usize) -> SmallMat {
        match &self.flat {
            Some((_, gi, _)) => *gi,
            None => self.omega.eval_mat(&self.grid, idx).inverse(),
        }
    }

    /// Materialized metric form.
    pub fn omega_form(&self) -> FormField {
        self.omega.to_field(self.grid)
    }

    /// Materialized `omega^k`.
    pub fn omega_power(&self, k: usize) -> Result<FormField> {
        crate::field::wedge_power(&self.omega_form(), k)
    }
}

impl VolumeWeight for HermitianStructure {
    fn vol_grid(&self) -> GridSpec {
        self.grid
    }

    #[inline]
    fn detg_at(&self, idx: usize) -> f64 {
        match &self.flat {
            Some((_, _, d)) => *d,
            None => self.omega.eval_mat(&self.grid, idx).det().re,
        }
    }
}

fn min_metric_eigenvalue(omega: &TrigForm, grid: &GridSpec) -> (usize, f64) {
    let (at, neg_max) = exec::argmax_indexed(grid.num_points(), |idx| {
        let m = omega.eval_mat(grid, idx);
        let eigs = m.eigenvalues_hermitian();
        -eigs[grid.n - 1]
    });
    (at, -neg_max)
}

fn raw_volume(omega: &TrigForm, grid: &GridSpec) -> f64 {
    let h = grid.spacing();
    let cell = 2f64.powi(grid.n as i32) * h.powi(grid.axes() as i32);
    exec::sum_indexed(grid.num_points(), |idx| {
        omega.eval_mat(grid, idx).det().re
    }) * cell
}

/// Flat Kahler structure: constant metric `c * I`, unit volume.
pub fn flat_metric(grid: GridSpec) -> HermitianStructure {
    let omega = TrigForm::scaled_identity(grid.n, 1.0);
    HermitianStructure::build(grid, omega).expect("flat metric is always admissible")
}

/// One Fourier term of the (0,1)-form xi: `coef * exp(i<k,x>) dzbar^j`.
#[derive(Debug, Clone, Copy)]
pub struct XiTerm {
    /// 0-based antiholomorphic direction.
    pub j: usize,
    pub k: [i32; 6],
    pub coef: C64,
}

/// SKT (pluriclosed, astheno-Kahler for n = 3) perturbation of the flat
/// metric: `omega = omega_0 + eps (d xi + conj(d xi))`, then volume-scaled.
/// Fails with the bisected admissible amplitude when positivity breaks.
pub fn skt_metric(grid: GridSpec, xi: &[XiTerm], eps: f64) -> Result<HermitianStructure> {
    if grid.n != 3 {
        return Err(CoreError::InvalidData(
            "SKT perturbations are constructed for n = 3 only".into(),
        ));
    }
    let build = |e: f64| -> TrigForm {
        let mut xi_form = TrigForm::zero(grid.n, 0, 1, 0);
        for t in xi {
            xi_form.terms.push(TrigTerm {
                im: 0,
                jm: 1 << t.j,
                k: t.k,
                coef: t.coef,
            });
        }
        let dxi = xi_form.differentiate(crate::spectral::Deriv::D);
        let mut chi = dxi.clone();
        chi.add(&dxi.conj_form().with_i_pow_zero_to(0), C64::new(1.0, 0.0));
        // retag the plain (i_pow 0) correction into the Hermitian (i_pow 1)
        // convention: stored' = -i * stored.
        let mut chi_herm = TrigForm::zero(grid.n, 1, 1, 1);
        for t in &chi.terms {
            chi_herm.terms.push(TrigTerm {
                coef: t.coef * C64::new(0.0, -1.0),
                ..*t
            });
        }
        chi_herm.combine();
        let mut omega = TrigForm::scaled_identity(grid.n, 1.0);
        omega.add(&chi_herm, C64::new(e, 0.0));
        omega
    };
    let omega = build(eps);
    let (_, min_eig) = min_metric_eigenvalue(&omega, &grid);
    if min_eig <= 0.0 {
        // bisect the positivity threshold for the error report
        let mut lo = 0.0f64;
        let mut hi = eps;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if min_metric_eigenvalue(&build(mid), &grid).1 > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return Err(CoreError::PerturbationTooLarge {
            requested: eps,
            max_admissible: lo,
        });
    }
    HermitianStructure::build(grid, omega)
}

impl TrigForm {
    /// Helper used when a conjugated form already has the wanted tag.
    fn with_i_pow_zero_to(&self, target: u8) -> TrigForm {
        let target = target % 4;
        let diff = (4 + self.i_pow as i32 - target as i32) % 4;
        let i = C64::new(0.0, 1.0);
        let mut phase = C64::new(1.0, 0.0);
        for _ in 0..diff {
            phase *= i;
        }
        let mut out = self.clone();
        out.i_pow = target;
        if diff != 0 {
            out.scale(phase);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Problem data
// ---------------------------------------------------------------------------

/// Which norm fixes the additive gauge of phi.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum NormKind {
    L1,
    Ln,
}

/// One Fourier term of the Hermitian (1,1) datum rho.
#[derive(Debug, Clone, Copy)]
pub struct RhoTerm {
    /// 0-based matrix entry (i, j).
    pub i: usize,
    pub j: usize,
    pub k: [i32; 6],
    pub coef: C64,
}

/// One Fourier term of the scalar datum mu: `c cos(<k,x>) + s sin(<k,x>)`.
#[derive(Debug, Clone, Copy)]
pub struct MuTerm {
    pub k: [i32; 6],
    pub c: f64,
    pub s: f64,
}

/// Full data set of the equation.
#[derive(Clone)]
pub struct ProblemData {
    pub alpha: f64,
    pub a_norm: f64,
    pub norm: NormKind,
    pub rho: TrigForm,
    pub d_rho: TrigForm,
    pub db_rho: TrigForm,
    pub ddbar_rho: TrigForm,
    pub mu: ScalarField,
    /// Auxiliary gauge function (log of the kernel generator), max h = 0.
    pub h: ScalarField,
    /// Cached `sqrt(-1) ddbar h ∧ sqrt(-1) ddbar h ∧ omega^{n-2} / omega^n`.
    pub hh_scalar: ScalarField,
    pub structure: Arc<HermitianStructure>,
    /// Set when the rho input needed Hermitian symmetrization.
    pub rho_symmetrized: bool,
    cache: once_cell::sync::OnceCell<Arc<crate::residual::ContractionCache>>,
}

impl ProblemData {
    pub fn grid(&self) -> GridSpec {
        self.structure.grid
    }

    /// Lazily built pointwise contraction weights (phi-independent).
    pub fn contraction_cache(&self) -> Arc<crate::residual::ContractionCache> {
        self.cache
            .get_or_init(|| Arc::new(crate::residual::ContractionCache::build(self)))
            .clone()
    }

    pub fn has_rho(&self) -> bool {
        !self.rho.is_zero()
    }

    /// `||e^{-phi}||` in the problem's norm (unit-volume measure
    /// `omega^n/n!`).
    pub fn gauge_norm(&self, phi: &ScalarField) -> f64 {
        gauge_norm(phi, self.norm, self.structure.as_ref())
    }
}

pub fn gauge_norm(phi: &ScalarField, norm: NormKind, structure: &HermitianStructure) -> f64 {
    match norm {
        NormKind::L1 => {
            let u = phi.map(|v| (-v).exp());
            integrate(&u, structure)
        }
        NormKind::Ln => {
            let nn = structure.n() as f64;
            let u = phi.map(|v| (-nn * v).exp());
            integrate(&u, structure).powf(1.0 / nn)
        }
    }
}

/// Assemble the Hermitian trig polynomial for rho from raw entry terms,
/// symmetrizing. Returns (form, was_symmetrized).
pub fn rho_from_terms(n: usize, terms: &[RhoTerm]) -> (TrigForm, bool) {
    let mut raw = TrigForm::zero(n, 1, 1, 1);
    for t in terms {
        raw.terms.push(TrigTerm {
            im: 1 << t.i,
            jm: 1 << t.j,
            k: t.k,
            coef: t.coef,
        });
    }
    raw.combine();
    // Hermitian part: (rho + rho^H)/2, with rho^H term (i,j,k,c) -> (j,i,-k,conj c)
    let mut herm = TrigForm::zero(n, 1, 1, 1);
    for t in &raw.terms {
        herm.terms.push(TrigTerm {
            coef: t.coef * 0.5,
            ..*t
        });
        let mut k = t.k;
        for v in &mut k {
            *v = -*v;
        }
        herm.terms.push(TrigTerm {
            im: t.jm,
            jm: t.im,
            k,
            coef: t.coef.conj() * 0.5,
        });
    }
    herm.combine();
    // was the input already Hermitian?
    let mut diff = raw.clone();
    diff.add(&herm, C64::new(-1.0, 0.0));
    let scale = raw
        .terms
        .iter()
        .map(|t| t.coef.norm())
        .fold(0.0f64, f64::max)
        .max(1e-300);
    let symmetrized = diff
        .terms
        .iter()
        .any(|t| t.coef.norm() > 1e-12 * scale);
    (herm, symmetrized)
}

/// Build a problem from band-limited data. `mu` is mean-corrected against
/// the volume form; `h` is solved from the structure (identically zero on
/// flat Kahler bases).
pub fn make_problem(
    alpha: f64,
    rho_terms: &[RhoTerm],
    mu_terms: &[MuTerm],
    a_norm: f64,
    norm: NormKind,
    structure: Arc<HermitianStructure>,
) -> Result<ProblemData> {
    if alpha == 0.0 {
        return Err(CoreError::InvalidData("alpha must be nonzero".into()));
    }
    if a_norm <= 0.0 {
        return Err(CoreError::InvalidData("A must be positive".into()));
    }
    let grid = structure.grid;
    let (rho, rho_symmetrized) = rho_from_terms(grid.n, rho_terms);
    let mut mu = ScalarField::zeros(grid);
    {
        let terms = mu_terms.to_vec();
        exec::fill_indexed(&mut mu.data, |idx| {
            let x = grid.coords(idx);
            let mut v = 0.0;
            for t in &terms {
                let mut phase = 0.0;
                for (a, &ka) in t.k.iter().take(grid.axes()).enumerate() {
                    phase += ka as f64 * x[a];
                }
                v += t.c * phase.cos() + t.s * phase.sin();
            }
            v
        });
    }
    let mean = integrate(&mu, structure.as_ref());
    mu.shift(-mean);

    let h = if structure.kaehler && structure.is_flat() {
        ScalarField::zeros(grid)
    } else {
        crate::linearized::solve_h(structure.as_ref(), &Default::default())?.h
    };
    finish_problem(alpha, rho, mu, h, a_norm, norm, structure, rho_symmetrized)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn finish_problem(
    alpha: f64,
    rho: TrigForm,
    mu: ScalarField,
    h: ScalarField,
    a_norm: f64,
    norm: NormKind,
    structure: Arc<HermitianStructure>,
    rho_symmetrized: bool,
) -> Result<ProblemData> {
    let d_rho = rho.differentiate(crate::spectral::Deriv::D);
    let db_rho = rho.differentiate(crate::spectral::Deriv::Dbar);
    let ddbar_rho = db_rho.differentiate(crate::spectral::Deriv::D);
    let hh_scalar = hh_wedge_scalar(&h, structure.as_ref());
    Ok(ProblemData {
        alpha,
        a_norm,
        norm,
        rho,
        d_rho,
        db_rho,
        ddbar_rho,
        mu,
        h,
        hh_scalar,
        structure,
        rho_symmetrized,
        cache: once_cell::sync::OnceCell::new(),
    })
}

/// `sqrt(-1) ddbar h ∧ sqrt(-1) ddbar h ∧ omega^{n-2} / omega^n` as a
/// scalar field.
pub fn hh_wedge_scalar(h: &ScalarField, structure: &HermitianStructure) -> ScalarField {
    if h.sup_norm() == 0.0 {
        return ScalarField::zeros(h.grid);
    }
    let hess = crate::spectral::complex_hessian_real(h);
    let grid = h.grid;
    let mut out = ScalarField::zeros(grid);
    exec::fill_indexed(&mut out.data, |idx| {
        let ginv = structure.ginv_at(idx);
        let m = hess.at(idx);
        crate::smallalg::r2(&ginv, &m, &m).re
    });
    out
}

/// Back-compute mu so that `phi_star` solves the continuation equation
/// exactly at parameter `t`, and set `A = ||e^{-phi_star}||`.
pub fn manufactured_problem(
    phi_star: &ScalarField,
    alpha: f64,
    rho_terms: &[RhoTerm],
    t: f64,
    norm: NormKind,
    structure: Arc<HermitianStructure>,
) -> Result<ProblemData> {
    if t <= 0.0 {
        return Err(CoreError::InvalidData(
            "manufactured problems need t > 0 (mu enters scaled by t)".into(),
        ));
    }
    let grid = structure.grid;
    let (rho, rho_symmetrized) = rho_from_terms(grid.n, rho_terms);
    let h = if structure.kaehler && structure.is_flat() {
        ScalarField::zeros(grid)
    } else {
        crate::linearized::solve_h(structure.as_ref(), &Default::default())?.h
    };
    // residual with mu = 0
    let data0 = finish_problem(
        alpha,
        rho.clone(),
        ScalarField::zeros(grid),
        h.clone(),
        1.0,
        norm,
        structure.clone(),
        false,
    )?;
    // cone membership at phi_star
    let wt = crate::residual::omega_tilde(phi_star, &data0, t);
    let (m1, m2) = crate::hessian::gamma2_margin_field(&wt, structure.as_ref());
    if m1 <= 0.0 || m2 <= 0.0 {
        return Err(CoreError::ConeViolation {
            m1,
            m2,
            context: "at the manufactured solution; shrink its amplitude or raise its additive constant".into(),
        });
    }
    let resid0 = crate::residual::residual_divergence(phi_star, &data0, t);
    let nfact: f64 = (1..=grid.n).map(|k| k as f64).product();
    let mut mu = resid0.values.map(|v| -v * nfact / t);
    let mean = integrate(&mu, structure.as_ref());
    mu.shift(-mean);
    let a_norm = gauge_norm(phi_star, norm, structure.as_ref());
    finish_problem(alpha, rho, mu, h, a_norm, norm, structure, rho_symmetrized)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_metric_has_unit_volume_and_vanishing_torsion() {
        for n in [2usize, 3] {
            let grid = GridSpec::new(n, 8).unwrap();
            let s = flat_metric(grid);
            assert!(s.kaehler);
            assert_eq!(s.astheno_defect, 0.0);
            let one = ScalarField::constant(grid, 1.0);
            let vol = integrate(&one, &s);
            assert!((vol - 1.0).abs() < 1e-12, "vol = {vol}");
            // sigma_2 of the metric against itself
            let idx = 3;
            let g = s.g_at(idx);
            let gi = s.ginv_at(idx);
            let r = crate::smallalg::r2(&gi, &g, &g).re;
            assert!((r - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn skt_metric_is_pluriclosed_but_not_kaehler() {
        let grid = GridSpec::new(3, 8).unwrap();
        let xi = [XiTerm {
            j: 1,
            k: [1, 0, 0, 0, 0, 0],
            coef: C64::new(1.0, 0.0),
        }];
        let s = skt_metric(grid, &xi, 0.05).unwrap();
        assert!(!s.kaehler);
        assert!(s.astheno_defect <= 1e-10, "defect = {}", s.astheno_defect);
        assert!(s.d_omega.sup_norm(&grid) > 0.0);
        let one = ScalarField::constant(grid, 1.0);
        assert!((integrate(&one, &s) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn skt_zero_xi_returns_flat() {
        let grid = GridSpec::new(3, 8).unwrap();
        let s = skt_metric(grid, &[], 0.05).unwrap();
        assert!(s.kaehler);
        assert!(s.is_flat());
    }

    #[test]
    fn skt_rejects_overlarge_eps_with_threshold() {
        let grid = GridSpec::new(3, 8).unwrap();
        let xi = [XiTerm {
            j: 1,
            k: [1, 0, 0, 0, 0, 0],
            coef: C64::new(1.0, 0.0),
        }];
        // unit-scale threshold for this xi is eps = 2 (eigenvalues 1 ± eps/2)
        match skt_metric(grid, &xi, 5.0) {
            Err(CoreError::PerturbationTooLarge {
                requested,
                max_admissible,
            }) => {
                assert_eq!(requested, 5.0);
                assert!(
                    (max_admissible - 2.0).abs() < 1e-6,
                    "threshold = {max_admissible}"
                );
            }
            other => panic!("expected PerturbationTooLarge, got {other:?}"),
        }
    }

    #[test]
    fn mu_is_mean_corrected() {
        let grid = GridSpec::new(2, 8).unwrap();
        let s = Arc::new(flat_metric(grid));
        let mu_terms = [
            MuTerm {
                k: [0; 6],
                c: 1.0,
                s: 0.0,
            },
            MuTerm {
                k: [1, 0, 0, 0, 0, 0],
                c: 1.0,
                s: 0.0,
            },
        ];
        let data = make_problem(-1.0, &[], &mu_terms, 0.05, NormKind::L1, s.clone()).unwrap();
        let mean = integrate(&data.mu, s.as_ref());
        assert!(mean.abs() < 1e-12);
        // the cos part survives
        assert!(data.mu.sup_norm() > 0.5);
    }

    #[test]
    fn rho_symmetrization_flags_non_hermitian_input() {
        let grid = GridSpec::new(2, 8).unwrap();
        let s = Arc::new(flat_metric(grid));
        let rho_terms = [RhoTerm {
            i: 0,
            j: 1,
            k: [0; 6],
            coef: C64::new(1.0, 0.0),
        }];
        let data =
            make_problem(-1.0, &rho_terms, &[], 0.05, NormKind::L1, s.clone()).unwrap();
        assert!(data.rho_symmetrized);
        assert!(data.rho.hermitian_defect(&grid) < 1e-14);
        // Hermitian input: diagonal entry with real coefficient
        let rho_terms = [RhoTerm {
            i: 0,
            j: 0,
            k: [0; 6],
            coef: C64::new(0.3, 0.0),
        }];
        let data = make_problem(-1.0, &rho_terms, &[], 0.05, NormKind::L1, s).unwrap();
        assert!(!data.rho_symmetrized);
    }

    #[test]
    fn trig_derivative_matches_spectral() {
        let grid = GridSpec::new(2, 12).unwrap();
        // xi-style (0,1) form with a couple of waves
        let mut f = TrigForm::zero(2, 0, 1, 0);
        f.terms.push(TrigTerm {
            im: 0,
            jm: 0b01,
            k: [1, 0, -1, 2, 0, 0],
            coef: C64::new(0.7, -0.3),
        });
        f.terms.push(TrigTerm {
            im: 0,
            jm: 0b10,
            k: [0, 1, 0, 0, 0, 0],
            coef: C64::new(-0.2, 0.5),
        });
        let sym = f.differentiate(crate::spectral::Deriv::D);
        let num = crate::spectral::differentiate(&f.to_field(grid), crate::spectral::Deriv::D)
            .unwrap();
        let symf = sym.to_field(grid);
        let mut diff = 0.0f64;
        for c in 0..symf.comps() {
            let a = symf.comp(c);
            let b = num.comp(c);
            for i in 0..a.len() {
                diff = diff.max((a[i] - b[i]).norm());
            }
        }
        assert!(diff < 1e-12, "diff = {diff}");
    }
}
