//! Grid-sampled (p,q)-form fields and real scalar fields.
//!
//! A [`FormField`] stores, per grid point, the coefficients `a_{I Jbar}` of
//! `sum a_{I Jbar} dz^I ∧ dzbar^J` over strictly increasing multi-indices,
//! component-major (all points of one component contiguous). The `i_pow`
//! tag records the power of `sqrt(-1)` multiplying the stored expansion:
//! a real (1,1)-form is stored with `i_pow = 1` and a pointwise Hermitian
//! coefficient matrix. Wedge products act on stored coefficients with
//! shuffle signs and add the tags; the tags are resolved against
//! `omega^n = n! det(g) 2^n dx^1 ∧ ... ∧ dx^{2n}` only in [`top_ratio`] and
//! [`integrate_form`].

use crate::error::{CoreError, Result};
use crate::exec;
use crate::grid::GridSpec;
use crate::smallalg::{self, binomial, merge_sign, ratio_phase};
use crate::C64;
use once_cell::sync::Lazy;
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

/// Real scalar field on the grid.
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub grid: GridSpec,
    pub data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: GridSpec) -> Self {
        ScalarField {
            grid,
            data: vec![0.0; grid.num_points()],
        }
    }

    pub fn constant(grid: GridSpec, v: f64) -> Self {
        ScalarField {
            grid,
            data: vec![v; grid.num_points()],
        }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(usize) -> f64 + Sync) -> Self {
        let mut s = Self::zeros(grid);
        exec::fill_indexed(&mut s.data, f);
        s
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Self {
        Self::from_fn(self.grid, |i| f(self.data[i]))
    }

    pub fn exp(&self) -> Self {
        self.map(f64::exp)
    }

    pub fn add_scaled(&mut self, other: &ScalarField, c: f64) {
        assert_eq!(self.grid, other.grid);
        exec::update_indexed(&mut self.data, |i, v| *v += c * other.data[i]);
    }

    pub fn shift(&mut self, c: f64) {
        exec::update_indexed(&mut self.data, |_, v| *v += c);
    }

    pub fn scale(&mut self, c: f64) {
        exec::update_indexed(&mut self.data, |_, v| *v *= c);
    }

    pub fn sup_norm(&self) -> f64 {
        exec::max_indexed(self.data.len(), |i| self.data[i].abs())
    }

    pub fn max(&self) -> f64 {
        exec::max_indexed(self.data.len(), |i| self.data[i])
    }

    pub fn min(&self) -> f64 {
        exec::min_indexed(self.data.len(), |i| self.data[i])
    }

    /// Plain l2 inner product (no volume weight), deterministic.
    pub fn dot(&self, other: &ScalarField) -> f64 {
        assert_eq!(self.grid, other.grid);
        exec::sum_indexed(self.data.len(), |i| self.data[i] * other.data[i])
    }

    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Promote to a complex (0,0)-form.
    pub fn to_form(&self) -> FormField {
        let mut f = FormField::zeros(self.grid, 0, 0, 0);
        exec::fill_indexed(&mut f.data, |i| C64::new(self.data[i], 0.0));
        f
    }
}

/// Grid-sampled (p,q)-form with complex coefficients.
#[derive(Debug, Clone)]
pub struct FormField {
    pub grid: GridSpec,
    pub p: usize,
    pub q: usize,
    /// Power of sqrt(-1) multiplying the stored expansion (mod 4).
    pub i_pow: u8,
    /// Component-major data: `data[c * num_points + idx]`.
    pub data: Vec<C64>,
}

impl FormField {
    pub fn num_comps(grid: &GridSpec, p: usize, q: usize) -> usize {
        binomial(grid.n, p) * binomial(grid.n, q)
    }

    pub fn zeros(grid: GridSpec, p: usize, q: usize, i_pow: u8) -> Self {
        assert!(p <= grid.n && q <= grid.n);
        let nc = Self::num_comps(&grid, p, q);
        FormField {
            grid,
            p,
            q,
            i_pow: i_pow % 4,
            data: vec![C64::new(0.0, 0.0); nc * grid.num_points()],
        }
    }

    #[inline]
    pub fn comps(&self) -> usize {
        Self::num_comps(&self.grid, self.p, self.q)
    }

    #[inline]
    pub fn comp(&self, c: usize) -> &[C64] {
        let np = self.grid.num_points();
        &self.data[c * np..(c + 1) * np]
    }

    #[inline]
    pub fn comp_mut(&mut self, c: usize) -> &mut [C64] {
        let np = self.grid.num_points();
        &mut self.data[c * np..(c + 1) * np]
    }

    /// Component index of masks (zmask, zbarmask).
    pub fn comp_of_masks(&self, zmask: u8, zbmask: u8) -> usize {
        let n = self.grid.n;
        let jn = binomial(n, self.q);
        smallalg::comp_index(n, self.p, zmask) * jn + smallalg::comp_index(n, self.q, zbmask)
    }

    /// For a (1,1) field, component index of `dz^i ∧ dzbar^j` (0-based).
    #[inline]
    pub fn comp_11(&self, i: usize, j: usize) -> usize {
        debug_assert!(self.p == 1 && self.q == 1);
        i * self.grid.n + j
    }

    pub fn add_scaled(&mut self, other: &FormField, c: C64) {
        assert_eq!((self.p, self.q), (other.p, other.q));
        assert_eq!(self.i_pow, other.i_pow, "i_pow mismatch in add");
        assert_eq!(self.grid, other.grid);
        exec::update_indexed(&mut self.data, |i, v| *v += c * other.data[i]);
    }

    pub fn scale(&mut self, c: C64) {
        exec::update_indexed(&mut self.data, |_, v| *v *= c);
    }

    /// Multiply every component pointwise by a real scalar field.
    pub fn mul_scalar(&self, s: &ScalarField) -> FormField {
        assert_eq!(self.grid, s.grid);
        let np = self.grid.num_points();
        let mut out = self.clone();
        exec::update_indexed(&mut out.data, |i, v| *v *= s.data[i % np]);
        out
    }

    /// Re-express with a different `i_pow` tag (stored values absorb the
    /// phase difference).
    pub fn with_i_pow(&self, target: u8) -> FormField {
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

    /// Complex conjugate form: bidegree (q,p).
    pub fn conj_form(&self) -> FormField {
        let n = self.grid.n;
        let np = self.grid.num_points();
        let sign = if (self.p * self.q) % 2 == 0 { 1.0 } else { -1.0 };
        let out_ipow = ((4 - self.i_pow % 4) % 4) as u8;
        let mut out = FormField::zeros(self.grid, self.q, self.p, out_ipow);
        let imasks = smallalg::comp_masks(n, self.p);
        let jmasks = smallalg::comp_masks(n, self.q);
        for (ic, _im) in imasks.iter().enumerate() {
            for (jc, _jm) in jmasks.iter().enumerate() {
                let src = ic * jmasks.len() + jc;
                let dst = jc * imasks.len() + ic;
                let (src_slice, dst_slice): (Vec<C64>, _) =
                    (self.comp(src).to_vec(), out.comp_mut(dst));
                for (o, s) in dst_slice.iter_mut().zip(src_slice.iter()) {
                    *o = s.conj() * sign;
                }
            }
        }
        let _ = np;
        out
    }

    /// Max over points of |a_{ij} - conj(a_{ji})| for a (1,1) field.
    pub fn hermitian_defect(&self) -> f64 {
        assert!(self.p == 1 && self.q == 1);
        let n = self.grid.n;
        let np = self.grid.num_points();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let a = self.comp(self.comp_11(i, j));
                let b = self.comp(self.comp_11(j, i));
                let m = exec::max_indexed(np, |x| (a[x] - b[x].conj()).norm());
                worst = worst.max(m);
            }
        }
        worst
    }

    pub fn sup_norm(&self) -> f64 {
        exec::max_indexed(self.data.len(), |i| self.data[i].norm())
    }

    /// Extract the real part of a (0,0)-form, reporting the largest
    /// imaginary residue.
    pub fn to_scalar_checked(&self) -> (ScalarField, f64) {
        assert!(self.p == 0 && self.q == 0 && self.i_pow % 4 == 0);
        let mut s = ScalarField::zeros(self.grid);
        exec::fill_indexed(&mut s.data, |i| self.data[i].re);
        let imag = exec::max_indexed(self.data.len(), |i| self.data[i].im.abs());
        (s, imag)
    }
}

// ---------------------------------------------------------------------------
// Wedge product
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct WedgeEntry {
    a_comp: u32,
    b_comp: u32,
    out_comp: u32,
    sign: f64,
}

type WedgeKey = (usize, (usize, usize), (usize, usize));
static WEDGE_CACHE: Lazy<Mutex<HashMap<WedgeKey, Arc<Vec<WedgeEntry>>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

fn wedge_entries(n: usize, da: (usize, usize), db: (usize, usize)) -> Arc<Vec<WedgeEntry>> {
    let key = (n, da, db);
    let mut cache = WEDGE_CACHE.lock().unwrap();
    cache
        .entry(key)
        .or_insert_with(|| {
            let (p1, q1) = da;
            let (p2, q2) = db;
            let ia = smallalg::comp_masks(n, p1);
            let ja = smallalg::comp_masks(n, q1);
            let ib = smallalg::comp_masks(n, p2);
            let jb = smallalg::comp_masks(n, q2);
            let jo = smallalg::comp_masks(n, q1 + q2);
            let io = smallalg::comp_masks(n, p1 + p2);
            let cross = if (q1 * p2) % 2 == 0 { 1.0 } else { -1.0 };
            let mut entries = Vec::new();
            for (ica, &ma) in ia.iter().enumerate() {
                for (jca, &na) in ja.iter().enumerate() {
                    for (icb, &mb) in ib.iter().enumerate() {
                        if ma & mb != 0 {
                            continue;
                        }
                        for (jcb, &nb) in jb.iter().enumerate() {
                            if na & nb != 0 {
                                continue;
                            }
                            let sign =
                                cross * merge_sign(ma, mb) * merge_sign(na, nb);
                            let oc = io.iter().position(|&m| m == (ma | mb)).unwrap()
                                * jo.len()
                                + jo.iter().position(|&m| m == (na | nb)).unwrap();
                            entries.push(WedgeEntry {
                                a_comp: (ica * ja.len() + jca) as u32,
                                b_comp: (icb * jb.len() + jcb) as u32,
                                out_comp: oc as u32,
                                sign,
                            });
                        }
                    }
                }
            }
            Arc::new(entries)
        })
        .clone()
}

/// Pointwise exterior product. Bidegrees must fit within (n,n).
pub fn wedge(a: &FormField, b: &FormField) -> Result<FormField> {
    let n = a.grid.n;
    if a.grid != b.grid {
        return Err(CoreError::ShapeMismatch("wedge on different grids".into()));
    }
    if a.p + b.p > n || a.q + b.q > n {
        return Err(CoreError::DegreeOverflow {
            p: a.p + b.p,
            q: a.q + b.q,
            n,
        });
    }
    let entries = wedge_entries(n, (a.p, a.q), (b.p, b.q));
    let mut out = FormField::zeros(a.grid, a.p + b.p, a.q + b.q, a.i_pow + b.i_pow);
    let np = a.grid.num_points();
    for e in entries.iter() {
        let ac = a.comp(e.a_comp as usize);
        let bc = b.comp(e.b_comp as usize);
        let oc = out.comp_mut(e.out_comp as usize);
        let s = e.sign;
        exec::update_indexed(oc, |i, v| *v += ac[i] * bc[i] * s);
        let _ = np;
    }
    Ok(out)
}

/// n-fold wedge power of a (1,1)-form.
pub fn wedge_power(a: &FormField, k: usize) -> Result<FormField> {
    assert!(k >= 1);
    let mut out = a.clone();
    for _ in 1..k {
        out = wedge(&out, a)?;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Top-degree ratio and integration
// ---------------------------------------------------------------------------

/// Anything that can supply the pointwise volume density det(g) and grid.
pub trait VolumeWeight: Sync {
    fn vol_grid(&self) -> GridSpec;
    fn detg_at(&self, idx: usize) -> f64;
}

/// Pointwise ratio `t / omega^n` for a top-degree field, with the stored
/// `sqrt(-1)` tag resolved. Returns the real part; the imaginary residue is
/// available through [`top_ratio_checked`].
pub fn top_ratio(t: &FormField, vol: &impl VolumeWeight) -> ScalarField {
    top_ratio_checked(t, vol).0
}

pub fn top_ratio_checked(t: &FormField, vol: &impl VolumeWeight) -> (ScalarField, f64) {
    let grid = t.grid;
    assert_eq!(grid, vol.vol_grid());
    assert!(
        t.p == grid.n && t.q == grid.n,
        "top_ratio requires an (n,n)-form"
    );
    let phase = ratio_phase(grid.n, t.i_pow);
    let c = t.comp(0);
    let mut out = ScalarField::zeros(grid);
    exec::fill_indexed(&mut out.data, |i| (phase * c[i]).re / vol.detg_at(i));
    let imag = exec::max_indexed(c.len(), |i| (phase * c[i]).im.abs() / vol.detg_at(i));
    (out, imag)
}

/// `∫ u omega^n / n!` with the uniform-grid rule.
pub fn integrate(u: &ScalarField, vol: &impl VolumeWeight) -> f64 {
    let grid = u.grid;
    assert_eq!(grid, vol.vol_grid());
    let h = grid.spacing();
    let cell = 2f64.powi(grid.n as i32) * h.powi(grid.axes() as i32);
    exec::sum_indexed(grid.num_points(), |i| u.data[i] * vol.detg_at(i)) * cell
}

/// `∫_M t` for a top-degree form (no 1/n! factor; this is the raw integral
/// of the (n,n)-form). The dx-volume coefficient of `t` is
/// `Re[phase * c] * n! 2^n` by the `omega^n` convention, so det(g) never
/// enters.
pub fn integrate_form(t: &FormField, _vol: &impl VolumeWeight) -> f64 {
    let grid = t.grid;
    assert!(t.p == grid.n && t.q == grid.n);
    let phase = ratio_phase(grid.n, t.i_pow);
    let nfact: f64 = (1..=grid.n).map(|k| k as f64).product();
    let h = grid.spacing();
    let cell = nfact * 2f64.powi(grid.n as i32) * h.powi(grid.axes() as i32);
    let c = t.comp(0);
    exec::sum_indexed(grid.num_points(), |i| (phase * c[i]).re) * cell
}
