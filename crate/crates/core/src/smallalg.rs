//! Multi-index bookkeeping, shuffle signs, compiled top-degree contraction
//! plans, and small Hermitian matrix algebra.
//!
//! Strictly increasing multi-indices over `n <= 3` complex directions are
//! bitmasks; the component list for bidegree (p,q) enumerates mask pairs in
//! ascending numeric order, z-indices first. A form component `(I, J)`
//! represents the basis element `dz^I ∧ dzbar^J` (all z factors before all
//! zbar factors).
//!
//! A [`TopPlan`] is a compiled contraction: given a sequence of slot
//! bidegrees whose wedge has top degree (n,n), it lists every combination of
//! slot components with the combined shuffle sign, so per-point evaluation
//! is a flat loop of multiply-adds. Field-level wedges and the streaming
//! residual/operator kernels share this one sign engine.

use crate::C64;
use once_cell::sync::Lazy;
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

/// Binomial coefficient for the tiny range we need.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let mut r = 1usize;
    for i in 0..k {
        r = r * (n - i) / (i + 1);
    }
    r
}

/// All masks over `n` bits with population count `p`, ascending.
pub fn comp_masks(n: usize, p: usize) -> &'static [u8] {
    const N2: [&[u8]; 3] = [&[0b00], &[0b01, 0b10], &[0b11]];
    const N3: [&[u8]; 4] = [&[0], &[1, 2, 4], &[3, 5, 6], &[7]];
    match n {
        2 => N2[p],
        3 => N3[p],
        _ => panic!("complex dimension {n} unsupported"),
    }
}

/// Position of `mask` in `comp_masks(n, p)`.
pub fn comp_index(n: usize, p: usize, mask: u8) -> usize {
    comp_masks(n, p)
        .iter()
        .position(|&m| m == mask)
        .expect("mask not in component list")
}

/// Sign of merging two disjoint ascending index sets `a` then `b` into one
/// ascending set: (-1)^{#\{(i,j) : i in a, j in b, i > j\}}.
pub fn merge_sign(a: u8, b: u8) -> f64 {
    let mut inversions = 0u32;
    for j in 0..8 {
        if b & (1 << j) != 0 {
            inversions += (a >> (j + 1)).count_ones();
        }
    }
    if inversions % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// One term of a compiled contraction: which component to read from each
/// slot and the combined sign.
#[derive(Debug, Clone, Copy)]
pub struct PlanEntry {
    pub comps: [u8; 4],
    pub sign: f64,
}

/// Compiled top-degree contraction over up to four slots.
#[derive(Debug, Clone)]
pub struct TopPlan {
    pub n: usize,
    pub slots: Vec<(usize, usize)>,
    pub entries: Vec<PlanEntry>,
}

impl TopPlan {
    /// Compile the contraction plan for the given slot bidegrees. The total
    /// bidegree must be exactly (n,n).
    pub fn compile(n: usize, slots: &[(usize, usize)]) -> Self {
        assert!(slots.len() <= 4, "at most four slots supported");
        let ptot: usize = slots.iter().map(|s| s.0).sum();
        let qtot: usize = slots.iter().map(|s| s.1).sum();
        assert_eq!((ptot, qtot), (n, n), "slots must wedge to top degree");

        let per_slot_masks: Vec<(&[u8], &[u8])> = slots
            .iter()
            .map(|&(p, q)| (comp_masks(n, p), comp_masks(n, q)))
            .collect();

        let mut entries = Vec::new();
        let mut comps = [0u8; 4];
        fn recurse(
            slot: usize,
            n: usize,
            slots: &[(usize, usize)],
            per_slot_masks: &[(&[u8], &[u8])],
            acc_i: u8,
            acc_j: u8,
            acc_q: usize,
            sign: f64,
            comps: &mut [u8; 4],
            entries: &mut Vec<PlanEntry>,
        ) {
            if slot == slots.len() {
                debug_assert_eq!(acc_i, (1u8 << n) - 1);
                debug_assert_eq!(acc_j, (1u8 << n) - 1);
                entries.push(PlanEntry { comps: *comps, sign });
                return;
            }
            let (p, q) = slots[slot];
            let (imasks, jmasks) = per_slot_masks[slot];
            let cross = if (acc_q * p) % 2 == 0 { 1.0 } else { -1.0 };
            for (ic, &im) in imasks.iter().enumerate() {
                if im & acc_i != 0 {
                    continue;
                }
                let si = merge_sign(acc_i, im);
                for (jc, &jm) in jmasks.iter().enumerate() {
                    if jm & acc_j != 0 {
                        continue;
                    }
                    let sj = merge_sign(acc_j, jm);
                    comps[slot] = (ic * jmasks.len() + jc) as u8;
                    recurse(
                        slot + 1,
                        n,
                        slots,
                        per_slot_masks,
                        acc_i | im,
                        acc_j | jm,
                        acc_q + q,
                        sign * cross * si * sj,
                        comps,
                        entries,
                    );
                }
            }
        }
        recurse(
            0,
            n,
            slots,
            &per_slot_masks,
            0,
            0,
            0,
            1.0,
            &mut comps,
            &mut entries,
        );
        TopPlan {
            n,
            slots: slots.to_vec(),
            entries,
        }
    }

    /// Evaluate the plan on per-slot component arrays (each indexed like
    /// `comp_masks` pairs, z-major).
    #[inline]
    pub fn eval(&self, slot_values: &[&[C64]]) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        match self.slots.len() {
            1 => {
                for e in &self.entries {
                    acc += slot_values[0][e.comps[0] as usize] * e.sign;
                }
            }
            2 => {
                for e in &self.entries {
                    acc += slot_values[0][e.comps[0] as usize]
                        * slot_values[1][e.comps[1] as usize]
                        * e.sign;
                }
            }
            3 => {
                for e in &self.entries {
                    acc += slot_values[0][e.comps[0] as usize]
                        * slot_values[1][e.comps[1] as usize]
                        * slot_values[2][e.comps[2] as usize]
                        * e.sign;
                }
            }
            4 => {
                for e in &self.entries {
                    acc += slot_values[0][e.comps[0] as usize]
                        * slot_values[1][e.comps[1] as usize]
                        * slot_values[2][e.comps[2] as usize]
                        * slot_values[3][e.comps[3] as usize]
                        * e.sign;
                }
            }
            _ => unreachable!(),
        }
        acc
    }
}

type PlanKey = (usize, Vec<(usize, usize)>);
static PLAN_CACHE: Lazy<Mutex<HashMap<PlanKey, Arc<TopPlan>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

/// Cached plan lookup.
pub fn top_plan(n: usize, slots: &[(usize, usize)]) -> Arc<TopPlan> {
    let key = (n, slots.to_vec());
    let mut cache = PLAN_CACHE.lock().unwrap();
    cache
        .entry(key)
        .or_insert_with(|| Arc::new(TopPlan::compile(n, slots)))
        .clone()
}

/// Phase constant resolving stored coefficients to the dx-volume ratio:
/// a top-degree field with `sqrt(-1)` power `i_pow` and stored top
/// coefficient `c` has ratio against `omega^n` equal to
/// `Re[phase(n, i_pow) * c] / det g`.
pub fn ratio_phase(n: usize, i_pow: u8) -> C64 {
    // dz^{1..n} ∧ dzbar^{1..n} = (-1)^{n(n-1)/2} (-2i)^n dx-volume,
    // omega^n = n! det(g) 2^n dx-volume.
    let i = C64::new(0.0, 1.0);
    let m2i = C64::new(0.0, -2.0);
    let mut s = C64::new(1.0, 0.0);
    for _ in 0..n {
        s *= m2i;
    }
    if (n * (n - 1) / 2) % 2 == 1 {
        s = -s;
    }
    let mut ip = C64::new(1.0, 0.0);
    for _ in 0..(i_pow % 4) {
        ip *= i;
    }
    let nfact: f64 = (1..=n).map(|k| k as f64).product();
    ip * s / (nfact * 2f64.powi(n as i32))
}

// ---------------------------------------------------------------------------
// Small Hermitian matrices (pointwise pencil algebra)
// ---------------------------------------------------------------------------

/// Dense complex matrix of dimension `n <= 3`, row-major. Not necessarily
/// Hermitian; the Hermitian-only routines say so.
#[derive(Debug, Clone, Copy)]
pub struct SmallMat {
    pub n: usize,
    pub e: [[C64; 3]; 3],
}

impl Default for SmallMat {
    fn default() -> Self {
        SmallMat::zero(3)
    }
}

impl SmallMat {
    pub fn zero(n: usize) -> Self {
        SmallMat {
            n,
            e: [[C64::new(0.0, 0.0); 3]; 3],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zero(n);
        for i in 0..n {
            m.e[i][i] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn scaled_identity(n: usize, c: f64) -> Self {
        let mut m = Self::zero(n);
        for i in 0..n {
            m.e[i][i] = C64::new(c, 0.0);
        }
        m
    }

    /// Rank-one matrix x y^T (entry (i,j) = x_i y_j).
    pub fn rank_one(n: usize, x: &[C64], y: &[C64]) -> Self {
        let mut m = Self::zero(n);
        for i in 0..n {
            for j in 0..n {
                m.e[i][j] = x[i] * y[j];
            }
        }
        m
    }

    #[inline]
    pub fn trace(&self) -> C64 {
        let mut t = C64::new(0.0, 0.0);
        for i in 0..self.n {
            t += self.e[i][i];
        }
        t
    }

    pub fn mul(&self, other: &SmallMat) -> SmallMat {
        let n = self.n;
        let mut m = SmallMat::zero(n);
        for i in 0..n {
            for j in 0..n {
                let mut s = C64::new(0.0, 0.0);
                for k in 0..n {
                    s += self.e[i][k] * other.e[k][j];
                }
                m.e[i][j] = s;
            }
        }
        m
    }

    pub fn add_scaled(&mut self, other: &SmallMat, c: C64) {
        for i in 0..self.n {
            for j in 0..self.n {
                self.e[i][j] += other.e[i][j] * c;
            }
        }
    }

    pub fn scale(&mut self, c: C64) {
        for i in 0..self.n {
            for j in 0..self.n {
                self.e[i][j] *= c;
            }
        }
    }

    /// Determinant (general complex).
    pub fn det(&self) -> C64 {
        let e = &self.e;
        match self.n {
            1 => e[0][0],
            2 => e[0][0] * e[1][1] - e[0][1] * e[1][0],
            3 => {
                e[0][0] * (e[1][1] * e[2][2] - e[1][2] * e[2][1])
                    - e[0][1] * (e[1][0] * e[2][2] - e[1][2] * e[2][0])
                    + e[0][2] * (e[1][0] * e[2][1] - e[1][1] * e[2][0])
            }
            _ => unreachable!(),
        }
    }

    /// Inverse via adjugate. Caller guarantees invertibility.
    pub fn inverse(&self) -> SmallMat {
        let n = self.n;
        let d = self.det();
        let mut m = SmallMat::zero(n);
        match n {
            1 => {
                m.e[0][0] = 1.0 / self.e[0][0];
            }
            2 => {
                m.e[0][0] = self.e[1][1] / d;
                m.e[1][1] = self.e[0][0] / d;
                m.e[0][1] = -self.e[0][1] / d;
                m.e[1][0] = -self.e[1][0] / d;
            }
            3 => {
                let e = &self.e;
                let cof = |r1: usize, c1: usize, r2: usize, c2: usize| {
                    e[r1][c1] * e[r2][c2] - e[r1][c2] * e[r2][c1]
                };
                // adj(A)_{ij} = cofactor_{ji}
                m.e[0][0] = cof(1, 1, 2, 2) / d;
                m.e[0][1] = -cof(0, 1, 2, 2) / d;
                m.e[0][2] = cof(0, 1, 1, 2) / d;
                m.e[1][0] = -cof(1, 0, 2, 2) / d;
                m.e[1][1] = cof(0, 0, 2, 2) / d;
                m.e[1][2] = -cof(0, 0, 1, 2) / d;
                m.e[2][0] = cof(1, 0, 2, 1) / d;
                m.e[2][1] = -cof(0, 0, 2, 1) / d;
                m.e[2][2] = cof(0, 0, 1, 1) / d;
            }
            _ => unreachable!(),
        }
        m
    }

    /// Eigenvalues of a Hermitian matrix, descending. Closed form.
    pub fn eigenvalues_hermitian(&self) -> [f64; 3] {
        match self.n {
            2 => {
                let a = self.e[0][0].re;
                let d = self.e[1][1].re;
                let b2 = self.e[0][1].norm_sqr();
                let tr = a + d;
                let disc = ((a - d) * (a - d) + 4.0 * b2).max(0.0).sqrt();
                let l1 = 0.5 * (tr + disc);
                let l2 = 0.5 * (tr - disc);
                [l1, l2, 0.0]
            }
            3 => {
                let a11 = self.e[0][0].re;
                let a22 = self.e[1][1].re;
                let a33 = self.e[2][2].re;
                let p1 = self.e[0][1].norm_sqr()
                    + self.e[0][2].norm_sqr()
                    + self.e[1][2].norm_sqr();
                let q = (a11 + a22 + a33) / 3.0;
                let p2 = (a11 - q).powi(2) + (a22 - q).powi(2) + (a33 - q).powi(2) + 2.0 * p1;
                if p2 <= 0.0 {
                    return [q, q, q];
                }
                let p = (p2 / 6.0).sqrt();
                let mut b = *self;
                for i in 0..3 {
                    b.e[i][i] -= C64::new(q, 0.0);
                }
                b.scale(C64::new(1.0 / p, 0.0));
                let r = (b.det().re / 2.0).clamp(-1.0, 1.0);
                let phi = r.acos() / 3.0;
                let l1 = q + 2.0 * p * phi.cos();
                let l3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3 * 2.0).cos();
                let l2 = 3.0 * q - l1 - l3;
                let mut v = [l1, l2, l3];
                v.sort_by(|x, y| y.partial_cmp(x).unwrap());
                v
            }
            _ => unreachable!(),
        }
    }

    /// Lower Cholesky factor of a Hermitian positive definite matrix.
    /// Returns `None` when a pivot is not positive.
    pub fn cholesky(&self) -> Option<SmallMat> {
        let n = self.n;
        let mut l = SmallMat::zero(n);
        for j in 0..n {
            let mut d = self.e[j][j].re;
            for k in 0..j {
                d -= l.e[j][k].norm_sqr();
            }
            if d <= 0.0 {
                return None;
            }
            let d = d.sqrt();
            l.e[j][j] = C64::new(d, 0.0);
            for i in (j + 1)..n {
                let mut s = self.e[i][j];
                for k in 0..j {
                    s -= l.e[i][k] * l.e[j][k].conj();
                }
                l.e[i][j] = s / d;
            }
        }
        Some(l)
    }

    /// Solve L x = b for lower-triangular L (forward substitution).
    pub fn solve_lower(&self, b: &[C64]) -> [C64; 3] {
        let n = self.n;
        let mut x = [C64::new(0.0, 0.0); 3];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.e[i][k] * x[k];
            }
            x[i] = s / self.e[i][i];
        }
        x
    }
}

/// Eigenvalues of the pencil `a` against Hermitian positive `g`, i.e. of
/// `g^{-1} a`, descending. Both matrices Hermitian. Returns `None` when `g`
/// is not positive definite.
pub fn pencil_eigenvalues_at(a: &SmallMat, g: &SmallMat) -> Option<[f64; 3]> {
    let l = g.cholesky()?;
    // B = L^{-1} a L^{-H}: first Y = L^{-1} a (column by column on a^H gives
    // rows), then B = Y L^{-H} computed as solving on the right.
    let n = a.n;
    let mut y = SmallMat::zero(n);
    for c in 0..n {
        let col: Vec<C64> = (0..n).map(|r| a.e[r][c]).collect();
        let x = l.solve_lower(&col);
        for r in 0..n {
            y.e[r][c] = x[r];
        }
    }
    // B = Y L^{-H}  <=>  B L^H = Y  <=>  L B^H = Y^H
    let mut b = SmallMat::zero(n);
    for r in 0..n {
        let row: Vec<C64> = (0..n).map(|c| y.e[r][c].conj()).collect();
        let x = l.solve_lower(&row);
        for c in 0..n {
            b.e[r][c] = x[c].conj();
        }
    }
    Some(b.eigenvalues_hermitian())
}

/// `sqrt(-1) a ∧ omega^{n-1} / omega^n = tr(g^{-1} a) / n` for a stored
/// (1,1) coefficient matrix `a` (the `sqrt(-1)` prefactor is part of the
/// (1,1) convention).
#[inline]
pub fn r1(ginv: &SmallMat, a: &SmallMat) -> C64 {
    let n = ginv.n;
    let mut t = C64::new(0.0, 0.0);
    for i in 0..n {
        for k in 0..n {
            t += ginv.e[i][k] * a.e[k][i];
        }
    }
    t / n as f64
}

/// `sqrt(-1) a ∧ sqrt(-1) b ∧ omega^{n-2} / omega^n
///   = [tr(A) tr(B) - tr(A B)] / (n(n-1))` with `A = g^{-1} a`.
#[inline]
pub fn r2(ginv: &SmallMat, a: &SmallMat, b: &SmallMat) -> C64 {
    let n = ginv.n;
    let aa = ginv.mul(a);
    let bb = ginv.mul(b);
    let t = aa.trace() * bb.trace() - aa.mul(&bb).trace();
    t / (n * (n - 1)) as f64
}
