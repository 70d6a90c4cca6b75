//! Trigonometric (discrete Fourier) collocation derivatives on the periodic
//! grid.
//!
//! First derivatives multiply mode k by `i k`, with the Nyquist mode's
//! derivative set to zero. Complex derivatives combine the two paired real
//! axes: `d/dz_j = (d/dx_{2j} - i d/dx_{2j+1}) / 2` (0-based axes) and
//! `d/dzbar_j` with `+ i`.

use crate::exec;
use crate::field::{FormField, ScalarField};
use crate::grid::GridSpec;
use crate::smallalg::{comp_masks, merge_sign, SmallMat};
use crate::C64;
use once_cell::sync::Lazy;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

struct Plans {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

static PLAN_CACHE: Lazy<Mutex<HashMap<usize, Arc<Plans>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

fn plans(n: usize) -> Arc<Plans> {
    let mut cache = PLAN_CACHE.lock().unwrap();
    cache
        .entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Arc::new(Plans {
                fwd: planner.plan_fft_forward(n),
                inv: planner.plan_fft_inverse(n),
            })
        })
        .clone()
}

/// Writes into disjoint strided positions from parallel line workers. Lines
/// never overlap, so the raw writes are sound.
struct SyncSlice<T>(*mut T);
unsafe impl<T> Sync for SyncSlice<T> {}
unsafe impl<T> Send for SyncSlice<T> {}

impl<T> SyncSlice<T> {
    /// Caller guarantees index disjointness across threads.
    #[inline]
    unsafe fn write(&self, i: usize, v: T) {
        self.0.add(i).write(v);
    }
}

fn for_each_line(
    npts: usize,
    axis_len: usize,
    stride: usize,
    f: impl Fn(usize, &mut Vec<C64>) + Sync,
) {
    let nlines = npts / axis_len;
    let block = stride * axis_len;
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..nlines)
            .into_par_iter()
            .for_each_init(Vec::new, |scratch, l| {
                let base = (l / stride) * block + (l % stride);
                f(base, scratch);
            });
    }
    #[cfg(not(feature = "parallel"))]
    {
        let mut scratch = Vec::new();
        for l in 0..nlines {
            let base = (l / stride) * block + (l % stride);
            f(base, &mut scratch);
        }
    }
}

/// Spectral d/dx_axis of complex grid data.
pub fn axis_derivative(data: &[C64], grid: &GridSpec, axis: usize) -> Vec<C64> {
    let n = grid.points_per_axis;
    let stride = grid.stride(axis);
    let npts = grid.num_points();
    assert_eq!(data.len(), npts);
    let plans = plans(n);
    let scratch_len = plans
        .fwd
        .get_inplace_scratch_len()
        .max(plans.inv.get_inplace_scratch_len());

    // i*k multipliers, Nyquist zeroed.
    let mult: Vec<C64> = (0..n)
        .map(|m| {
            if m == n / 2 {
                C64::new(0.0, 0.0)
            } else {
                C64::new(0.0, grid.wavenumber(m) as f64)
            }
        })
        .collect();

    let mut out = vec![C64::new(0.0, 0.0); npts];
    let out_w = SyncSlice(out.as_mut_ptr());
    let inv_n = 1.0 / n as f64;

    for_each_line(npts, n, stride, |base, scratch| {
        scratch.resize(n + scratch_len, C64::new(0.0, 0.0));
        let (line, fft_scratch) = scratch.split_at_mut(n);
        for t in 0..n {
            line[t] = data[base + t * stride];
        }
        plans.fwd.process_with_scratch(line, fft_scratch);
        for t in 0..n {
            line[t] *= mult[t];
        }
        plans.inv.process_with_scratch(line, fft_scratch);
        for t in 0..n {
            // disjoint strided writes per line
            unsafe { out_w.write(base + t * stride, line[t] * inv_n) };
        }
    });
    out
}

/// d/dz_j of complex data (0-based complex direction).
pub fn dz(data: &[C64], grid: &GridSpec, j: usize) -> Vec<C64> {
    let dx = axis_derivative(data, grid, 2 * j);
    let dy = axis_derivative(data, grid, 2 * j + 1);
    let mut out = dx;
    exec::update_indexed(&mut out, |i, v| {
        *v = 0.5 * (*v - C64::new(0.0, 1.0) * dy[i]);
    });
    out
}

/// d/dzbar_j of complex data.
pub fn dzbar(data: &[C64], grid: &GridSpec, j: usize) -> Vec<C64> {
    let dx = axis_derivative(data, grid, 2 * j);
    let dy = axis_derivative(data, grid, 2 * j + 1);
    let mut out = dx;
    exec::update_indexed(&mut out, |i, v| {
        *v = 0.5 * (*v + C64::new(0.0, 1.0) * dy[i]);
    });
    out
}

/// Both d/dz_j and d/dzbar_j in one pair of axis sweeps.
pub fn dz_dzbar(data: &[C64], grid: &GridSpec, j: usize) -> (Vec<C64>, Vec<C64>) {
    let dx = axis_derivative(data, grid, 2 * j);
    let dy = axis_derivative(data, grid, 2 * j + 1);
    let mut z = vec![C64::new(0.0, 0.0); dx.len()];
    let mut zb = vec![C64::new(0.0, 0.0); dx.len()];
    exec::fill_indexed(&mut z, |i| 0.5 * (dx[i] - C64::new(0.0, 1.0) * dy[i]));
    exec::fill_indexed(&mut zb, |i| 0.5 * (dx[i] + C64::new(0.0, 1.0) * dy[i]));
    (z, zb)
}

/// Which complex derivative a [`differentiate`] call takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Deriv {
    /// Holomorphic exterior derivative, raises p.
    D,
    /// Anti-holomorphic exterior derivative, raises q.
    Dbar,
}

/// Exterior derivative of a form field with antisymmetrization over the
/// extended multi-index. `i_pow` is preserved.
pub fn differentiate(a: &FormField, which: Deriv) -> crate::Result<FormField> {
    let grid = a.grid;
    let n = grid.n;
    let (p_out, q_out) = match which {
        Deriv::D => (a.p + 1, a.q),
        Deriv::Dbar => (a.p, a.q + 1),
    };
    if p_out > n || q_out > n {
        return Err(crate::CoreError::DegreeOverflow {
            p: p_out,
            q: q_out,
            n,
        });
    }
    let mut out = FormField::zeros(grid, p_out, q_out, a.i_pow);
    let imasks_in = comp_masks(n, a.p);
    let jmasks_in = comp_masks(n, a.q);
    let imasks_out = comp_masks(n, p_out);
    let jmasks_out = comp_masks(n, q_out);

    for (ic, &im) in imasks_in.iter().enumerate() {
        for (jc, &jm) in jmasks_in.iter().enumerate() {
            let src = ic * jmasks_in.len() + jc;
            for j in 0..n {
                let bit = 1u8 << j;
                let (oc, sign, deriv): (usize, f64, Vec<C64>) = match which {
                    Deriv::D => {
                        if im & bit != 0 {
                            continue;
                        }
                        let oc = imasks_out.iter().position(|&m| m == (im | bit)).unwrap()
                            * jmasks_out.len()
                            + jc;
                        // dz^j moves to the front: sign of sorting j into I
                        let s = merge_sign(bit, im);
                        (oc, s, dz(a.comp(src), &grid, j))
                    }
                    Deriv::Dbar => {
                        if jm & bit != 0 {
                            continue;
                        }
                        let oc = ic * jmasks_out.len()
                            + jmasks_out.iter().position(|&m| m == (jm | bit)).unwrap();
                        // dzbar^j passes the p existing dz factors first
                        let s = if a.p % 2 == 0 { 1.0 } else { -1.0 };
                        let s = s * merge_sign(bit, jm);
                        (oc, s, dzbar(a.comp(src), &grid, j))
                    }
                };
                let occ = out.comp_mut(oc);
                exec::update_indexed(occ, |i, v| *v += deriv[i] * sign);
            }
        }
    }
    Ok(out)
}

/// All holomorphic derivatives of a real scalar: returns `n` complex fields
/// `(d/dz_j) u`. For real input the antiholomorphic derivatives are the
/// conjugates.
pub fn dz_all_real(u: &ScalarField) -> Vec<Vec<C64>> {
    let grid = u.grid;
    let data: Vec<C64> = u.data.iter().map(|&v| C64::new(v, 0.0)).collect();
    (0..grid.n).map(|j| dz(&data, &grid, j)).collect()
}

/// Compressed Hermitian (1,1) coefficient field: real diagonal entries and
/// upper-triangle complex entries.
pub struct Herm11 {
    pub grid: GridSpec,
    pub diag: Vec<Vec<f64>>,
    /// Order (0,1), (0,2), (1,2) for n = 3; (0,1) for n = 2.
    pub off: Vec<Vec<C64>>,
}

impl Herm11 {
    pub fn off_index(n: usize, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j < n);
        match (n, i, j) {
            (_, 0, 1) => 0,
            (3, 0, 2) => 1,
            (3, 1, 2) => 2,
            _ => unreachable!(),
        }
    }

    /// Extract the Hermitian matrix at a point.
    #[inline]
    pub fn at(&self, idx: usize) -> SmallMat {
        let n = self.grid.n;
        let mut m = SmallMat::zero(n);
        for i in 0..n {
            m.e[i][i] = C64::new(self.diag[i][idx], 0.0);
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let v = self.off[Self::off_index(n, i, j)][idx];
                m.e[i][j] = v;
                m.e[j][i] = v.conj();
            }
        }
        m
    }

    /// Promote to a full (1,1) form field with `i_pow = 1`.
    pub fn to_form(&self) -> FormField {
        let n = self.grid.n;
        let mut out = FormField::zeros(self.grid, 1, 1, 1);
        for i in 0..n {
            for j in 0..n {
                let c = out.comp_11(i, j);
                let slice = out.comp_mut(c);
                if i == j {
                    let d = &self.diag[i];
                    exec::fill_indexed(slice, |x| C64::new(d[x], 0.0));
                } else if i < j {
                    let o = &self.off[Self::off_index(n, i, j)];
                    exec::fill_indexed(slice, |x| o[x]);
                } else {
                    let o = &self.off[Self::off_index(n, j, i)];
                    exec::fill_indexed(slice, |x| o[x].conj());
                }
            }
        }
        out
    }
}

/// Complex Hessian `(d/dz_i)(d/dzbar_j) u` of a REAL scalar field, stored
/// Hermitian-compressed. Peak extra memory is one complex scalar per pass.
pub fn complex_hessian_real(u: &ScalarField) -> Herm11 {
    let grid = u.grid;
    let n = grid.n;
    let npts = grid.num_points();
    let data: Vec<C64> = u.data.iter().map(|&v| C64::new(v, 0.0)).collect();
    let mut diag: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut off: Vec<Vec<C64>> = vec![Vec::new(); n * (n - 1) / 2];
    for j in 0..n {
        let dbj = dzbar(&data, &grid, j);
        for i in 0..=j {
            let dij = dz(&dbj, &grid, i);
            if i == j {
                let mut d = vec![0.0; npts];
                exec::fill_indexed(&mut d, |x| dij[x].re);
                diag.push(d);
            } else {
                off[Herm11::off_index(n, i, j)] = dij;
            }
        }
    }
    Herm11 { grid, diag, off }
}

/// Apply a real Fourier multiplier `m(k)` to a real scalar field
/// (full-spectrum transform, multiply, inverse).
pub fn apply_fourier_multiplier(
    u: &ScalarField,
    m: impl Fn(&[i64]) -> f64 + Sync,
) -> ScalarField {
    let grid = u.grid;
    let axes = grid.axes();
    let npts = grid.num_points();
    let mut data: Vec<C64> = u.data.iter().map(|&v| C64::new(v, 0.0)).collect();
    // forward along every axis
    for a in 0..axes {
        data = fft_axis(&data, &grid, a, true);
    }
    // multiply by m(k)
    let nn = grid.points_per_axis;
    exec::update_indexed(&mut data, |idx, v| {
        let mut k = [0i64; 6];
        let mut rest = idx;
        for a in (0..axes).rev() {
            k[a] = grid.wavenumber(rest % nn);
            rest /= nn;
        }
        *v *= m(&k[..axes]);
    });
    // inverse along every axis
    for a in 0..axes {
        data = fft_axis(&data, &grid, a, false);
    }
    let scale = 1.0 / npts as f64;
    let mut out = ScalarField::zeros(grid);
    exec::fill_indexed(&mut out.data, |i| data[i].re * scale);
    out
}

/// Apply a precomputed real multiplier table indexed like the flat mode
/// layout (same ordering as grid points).
pub fn apply_fourier_table(u: &ScalarField, mult: &[f64]) -> ScalarField {
    let grid = u.grid;
    let axes = grid.axes();
    let npts = grid.num_points();
    assert_eq!(mult.len(), npts);
    let mut data: Vec<C64> = u.data.iter().map(|&v| C64::new(v, 0.0)).collect();
    for a in 0..axes {
        data = fft_axis(&data, &grid, a, true);
    }
    exec::update_indexed(&mut data, |idx, v| *v *= mult[idx]);
    for a in 0..axes {
        data = fft_axis(&data, &grid, a, false);
    }
    let scale = 1.0 / npts as f64;
    let mut out = ScalarField::zeros(grid);
    exec::fill_indexed(&mut out.data, |i| data[i].re * scale);
    out
}

fn fft_axis(data: &[C64], grid: &GridSpec, axis: usize, forward: bool) -> Vec<C64> {
    let n = grid.points_per_axis;
    let stride = grid.stride(axis);
    let npts = grid.num_points();
    let plans = plans(n);
    let fft = if forward { &plans.fwd } else { &plans.inv };
    let scratch_len = fft.get_inplace_scratch_len();
    let mut out = vec![C64::new(0.0, 0.0); npts];
    let out_w = SyncSlice(out.as_mut_ptr());
    for_each_line(npts, n, stride, |base, scratch| {
        scratch.resize(n + scratch_len, C64::new(0.0, 0.0));
        let (line, fft_scratch) = scratch.split_at_mut(n);
        for t in 0..n {
            line[t] = data[base + t * stride];
        }
        fft.process_with_scratch(line, fft_scratch);
        for t in 0..n {
            unsafe { out_w.write(base + t * stride, line[t]) };
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    fn cosx1_field(grid: GridSpec) -> ScalarField {
        ScalarField::from_fn(grid, |i| grid.coords(i)[0].cos())
    }

    #[test]
    fn dz_of_cos_x1() {
        // d/dz_1 cos(x1) = -sin(x1)/2
        let grid = GridSpec::new(2, 16).unwrap();
        let u = cosx1_field(grid);
        let phi = u.to_form();
        let d = differentiate(&phi, Deriv::D).unwrap();
        // component dz^1 is comp index 0
        let c0 = d.comp(0);
        let err = exec::max_indexed(grid.num_points(), |i| {
            let x1 = grid.coords(i)[0];
            (c0[i] - C64::new(-0.5 * x1.sin(), 0.0)).norm()
        });
        assert!(err < 1e-12, "err = {err}");
        // other components vanish
        assert!(exec::max_indexed(grid.num_points(), |i| d.comp(1)[i].norm()) < 1e-13);
    }

    #[test]
    fn ddbar_of_cos_x1() {
        // (d/dz_1)(d/dzbar_1) cos(x1) = -cos(x1)/4
        let grid = GridSpec::new(2, 16).unwrap();
        let u = cosx1_field(grid);
        let h = complex_hessian_real(&u);
        let err = exec::max_indexed(grid.num_points(), |i| {
            let x1 = grid.coords(i)[0];
            (h.diag[0][i] + 0.25 * x1.cos()).abs()
        });
        assert!(err < 1e-12, "err = {err}");
        assert!(exec::max_indexed(grid.num_points(), |i| h.diag[1][i].abs()) < 1e-13);
        assert!(exec::max_indexed(grid.num_points(), |i| h.off[0][i].norm()) < 1e-13);
    }

    #[test]
    fn d_squared_vanishes() {
        let grid = GridSpec::new(2, 16).unwrap();
        // band-limited non-trivial scalar
        let u = ScalarField::from_fn(grid, |i| {
            let x = grid.coords(i);
            (x[0] + 2.0 * x[1]).cos() + 0.5 * (x[2] - x[3]).sin()
        });
        let phi = u.to_form();
        let d1 = differentiate(&phi, Deriv::D).unwrap();
        let d2 = differentiate(&d1, Deriv::D).unwrap();
        assert!(d2.sup_norm() < 1e-12, "sup = {}", d2.sup_norm());
        let b1 = differentiate(&phi, Deriv::Dbar).unwrap();
        let b2 = differentiate(&b1, Deriv::Dbar).unwrap();
        assert!(b2.sup_norm() < 1e-12);
        // mixed derivatives anticommute: d dbar = -dbar d
        let db = differentiate(&b1, Deriv::D).unwrap();
        let bd = differentiate(&d1, Deriv::Dbar).unwrap();
        let mut sum = db.clone();
        sum.add_scaled(&bd, C64::new(1.0, 0.0));
        assert!(sum.sup_norm() < 1e-12);
    }

    #[test]
    fn hessian_matches_differentiate_route() {
        let grid = GridSpec::new(2, 12).unwrap();
        let u = ScalarField::from_fn(grid, |i| {
            let x = grid.coords(i);
            (x[0] + x[1]).cos() * (1.0 + 0.3 * (x[2]).sin()) + 0.2 * (x[3] - x[0]).cos()
        });
        let h = complex_hessian_real(&u);
        let hf = h.to_form();
        let via = differentiate(
            &differentiate(&u.to_form(), Deriv::Dbar).unwrap(),
            Deriv::D,
        )
        .unwrap();
        // Herm11::to_form stores the same raw ddbar coefficients, tagged
        // with the real-(1,1) convention; compare the raw component data.
        let mut diff = 0.0f64;
        for c in 0..via.comps() {
            let a = via.comp(c);
            let b = hf.comp(c);
            for i in 0..a.len() {
                diff = diff.max((a[i] - b[i]).norm());
            }
        }
        assert!(diff < 1e-12, "diff = {diff}");
    }

    #[test]
    fn fourier_multiplier_shifts_modes() {
        let grid = GridSpec::new(2, 8).unwrap();
        let u = ScalarField::from_fn(grid, |i| {
            let x = grid.coords(i);
            3.0 + (x[1]).cos()
        });
        // multiplier selecting only the constant mode
        let m = |k: &[i64]| if k.iter().all(|&v| v == 0) { 1.0 } else { 0.0 };
        let v = apply_fourier_multiplier(&u, m);
        for &val in &v.data {
            assert!((val - 3.0).abs() < 1e-12);
        }
    }
}
