//! Seeded band-limited random fields for property checks and probes.

use crate::exec;
use crate::field::{FormField, ScalarField};
use crate::grid::GridSpec;
use crate::C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Enumerate integer wave vectors with `|k|_inf <= kmax`, excluding zero,
/// in a fixed deterministic order.
fn wave_vectors(axes: usize, kmax: i32) -> Vec<[i32; 6]> {
    let mut out = Vec::new();
    let mut k = [0i32; 6];
    fn rec(axes: usize, kmax: i32, a: usize, k: &mut [i32; 6], out: &mut Vec<[i32; 6]>) {
        if a == axes {
            if k[..axes].iter().any(|&v| v != 0) {
                out.push(*k);
            }
            return;
        }
        for v in -kmax..=kmax {
            k[a] = v;
            rec(axes, kmax, a + 1, k, out);
        }
    }
    rec(axes, kmax, 0, &mut k, &mut out);
    out
}

/// Real band-limited random scalar: sum of `amp * cos(<k,x> + phase)` over
/// all modes with `|k|_inf <= kmax`, coefficients from the seeded stream,
/// normalized to the requested sup amplitude.
pub fn band_limited_scalar(grid: GridSpec, seed: u64, kmax: i32, amplitude: f64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves = wave_vectors(grid.axes(), kmax);
    let coefs: Vec<(f64, f64)> = waves
        .iter()
        .map(|_| {
            (
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let mut u = ScalarField::zeros(grid);
    exec::fill_indexed(&mut u.data, |idx| {
        let x = grid.coords(idx);
        let mut v = 0.0;
        for (w, (a, p)) in waves.iter().zip(coefs.iter()) {
            let mut phase = *p;
            for (ax, &kk) in w.iter().take(grid.axes()).enumerate() {
                phase += kk as f64 * x[ax];
            }
            v += a * phase.cos();
        }
        v
    });
    let sup = u.sup_norm();
    if sup > 0.0 {
        u.scale(amplitude / sup);
    }
    u
}

/// Random band-limited (p,q) form with complex coefficients (plain tag).
pub fn band_limited_form(
    grid: GridSpec,
    p: usize,
    q: usize,
    seed: u64,
    kmax: i32,
    amplitude: f64,
) -> FormField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves = wave_vectors(grid.axes(), kmax);
    let mut out = FormField::zeros(grid, p, q, 0);
    let nc = out.comps();
    for c in 0..nc {
        let coefs: Vec<(f64, f64, f64)> = waves
            .iter()
            .map(|_| {
                (
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        let comp = out.comp_mut(c);
        exec::fill_indexed(comp, |idx| {
            let x = grid.coords(idx);
            let mut v = C64::new(0.0, 0.0);
            for (w, (ar, ai, ph)) in waves.iter().zip(coefs.iter()) {
                let mut phase = *ph;
                for (ax, &kk) in w.iter().take(grid.axes()).enumerate() {
                    phase += kk as f64 * x[ax];
                }
                v += C64::new(ar * phase.cos(), ai * phase.sin());
            }
            v
        });
    }
    let sup = out.sup_norm();
    if sup > 0.0 {
        out.scale(C64::new(amplitude / sup, 0.0));
    }
    out
}

/// Random real (1,1) form (Hermitian coefficient matrix, i_pow 1).
pub fn band_limited_real_11(
    grid: GridSpec,
    seed: u64,
    kmax: i32,
    amplitude: f64,
) -> FormField {
    let raw = band_limited_form(grid, 1, 1, seed, kmax, amplitude);
    // Hermitian part
    let n = grid.n;
    let mut out = FormField::zeros(grid, 1, 1, 1);
    let np = grid.num_points();
    for i in 0..n {
        for j in 0..n {
            let cij = i * n + j;
            let cji = j * n + i;
            let a = raw.comp(cij).to_vec();
            let b = raw.comp(cji).to_vec();
            let comp = out.comp_mut(cij);
            exec::fill_indexed(comp, |x| 0.5 * (a[x] + b[x].conj()));
        }
    }
    let _ = np;
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probes_are_deterministic() {
        let grid = GridSpec::new(2, 8).unwrap();
        let a = band_limited_scalar(grid, 7, 2, 0.3);
        let b = band_limited_scalar(grid, 7, 2, 0.3);
        assert_eq!(a.data, b.data);
        let c = band_limited_scalar(grid, 8, 2, 0.3);
        assert!(a.data != c.data);
    }

    #[test]
    fn real_11_probe_is_hermitian() {
        let grid = GridSpec::new(3, 8).unwrap();
        let f = band_limited_real_11(grid, 3, 1, 1.0);
        assert!(f.hermitian_defect() < 1e-14);
    }
}
