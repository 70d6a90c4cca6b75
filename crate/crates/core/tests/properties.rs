//! Property tests over randomized inputs: wedge algebra laws and dump
//! round trips.

use fuyau_core::field::{wedge, FormField};
use fuyau_core::grid::GridSpec;
use fuyau_core::probes::band_limited_form;
use fuyau_core::C64;
use proptest::prelude::*;

fn grid() -> GridSpec {
    GridSpec::new(2, 8).unwrap()
}

fn degrees() -> impl Strategy<Value = (usize, usize)> {
    (0usize..=1, 0usize..=1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn wedge_graded_commutativity((pa, qa) in degrees(), (pb, qb) in degrees(), seed in 0u64..1000) {
        let g = grid();
        prop_assume!(pa + pb <= 2 && qa + qb <= 2);
        let a = band_limited_form(g, pa, qa, seed, 1, 1.0);
        let b = band_limited_form(g, pb, qb, seed + 1, 1, 1.0);
        let ab = wedge(&a, &b).unwrap();
        let ba = wedge(&b, &a).unwrap();
        let sign = if ((pa + qa) * (pb + qb)) % 2 == 0 { 1.0 } else { -1.0 };
        let mut worst = 0.0f64;
        for i in 0..ab.data.len() {
            worst = worst.max((ab.data[i] - ba.data[i] * sign).norm());
        }
        prop_assert!(worst < 1e-12, "worst = {}", worst);
    }

    #[test]
    fn wedge_bilinearity(seed in 0u64..1000, re in -2.0f64..2.0, im in -2.0f64..2.0) {
        let g = grid();
        let a = band_limited_form(g, 1, 0, seed, 1, 1.0);
        let b = band_limited_form(g, 0, 1, seed + 7, 1, 1.0);
        let c = C64::new(re, im);
        let mut ca = a.clone();
        ca.scale(c);
        let lhs = wedge(&ca, &b).unwrap();
        let mut rhs = wedge(&a, &b).unwrap();
        rhs.scale(c);
        let mut worst = 0.0f64;
        for i in 0..lhs.data.len() {
            worst = worst.max((lhs.data[i] - rhs.data[i]).norm());
        }
        prop_assert!(worst < 1e-12, "worst = {}", worst);
    }

    #[test]
    fn fyfd_form_roundtrip_bit_exact(seed in 0u64..1000, p in 0usize..=1, q in 0usize..=1) {
        let g = grid();
        let f = band_limited_form(g, p, q, seed, 1, 1.0);
        let bytes = fuyau_core::io::dump_form_bytes("probe", &f);
        let loaded = fuyau_core::io::load(&mut bytes.as_slice()).unwrap();
        let g2 = match loaded.field {
            fuyau_core::io::LoadedField::Form(g2) => g2,
            _ => panic!("expected form"),
        };
        let bytes2 = fuyau_core::io::dump_form_bytes("probe", &g2);
        prop_assert_eq!(bytes, bytes2);
    }

    #[test]
    fn differentiate_squares_to_zero(seed in 0u64..1000) {
        let g = grid();
        let a = band_limited_form(g, 0, 1, seed, 2, 1.0);
        let da = fuyau_core::spectral::differentiate(&a, fuyau_core::spectral::Deriv::D).unwrap();
        let dda = fuyau_core::spectral::differentiate(&da, fuyau_core::spectral::Deriv::D).unwrap();
        prop_assert!(dda.sup_norm() < 1e-12);
    }
}

#[test]
fn wedge_power_associativity() {
    // (a ∧ a) ∧ a == a ∧ (a ∧ a) for a (1,0) + (0,1)-mixed field on n = 3
    let g = GridSpec::new(3, 8).unwrap();
    let a = band_limited_form(g, 1, 1, 3, 1, 1.0);
    let left = wedge(&wedge(&a, &a).unwrap(), &a).unwrap();
    let right = wedge(&a, &wedge(&a, &a).unwrap()).unwrap();
    let mut worst = 0.0f64;
    for i in 0..left.data.len() {
        worst = worst.max((left.data[i] - right.data[i]).norm());
    }
    assert!(worst < 1e-12, "worst = {worst}");
}

#[test]
fn top_field_extremes_are_rejected() {
    let g = GridSpec::new(2, 8).unwrap();
    let top = band_limited_form(g, 2, 2, 1, 1, 1.0);
    assert!(wedge(&top, &band_limited_form(g, 1, 0, 2, 1, 1.0)).is_err());
    let _ = FormField::zeros(g, 2, 2, 0);
}
