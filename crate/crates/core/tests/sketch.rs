mod common;

use common::*;
use hkit::sketch::{apply_sketch, gamma_variance_ratio, kappa_ratio, make_sketch, sketch_moments, variance_bound, variance_exact, SketchMatrix};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn dense_oracle_forward_and_transpose() {
    let mut r = rng(7);
    for seed in 0..20 {
        let p = make_sketch(300, 40, seed).unwrap();
        let m = dense_sketch(&p);
        for row in 0..p.d_in() {
            assert_eq!((0..p.d_out()).filter(|&o| m[o][row] != 0.0).count(), 1);
        }
        let x = uniform_vec(&mut r, 300, -1.0, 1.0);
        assert!(max_abs_diff(&apply_sketch(&p, &x).unwrap(), &matvec(&m, &x)) < 1e-12);
        let g = uniform_vec(&mut r, 40, -1.0, 1.0);
        assert!(max_abs_diff(&p.apply_transpose(&g).unwrap(), &matvec_t(&m, &g)) < 1e-12);
    }
}

#[test]
fn basis_vector_lands_in_its_bucket() {
    let p = make_sketch(10, 4, 3).unwrap();
    for j in 0..10 {
        let mut e = vec![0.0; 10];
        e[j] = 1.0;
        let out = apply_sketch(&p, &e).unwrap();
        let mut want = vec![0.0; 4];
        want[p.buckets()[j] as usize] = f64::from(p.signs()[j]);
        assert_eq!(out, want);
    }
}

#[test]
fn permutation_sketch_is_identity() {
    let p = SketchMatrix::from_parts(4, vec![0, 1, 2, 3], vec![1; 4]).unwrap();
    assert_eq!(apply_sketch(&p, &[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![1.0, -2.0, 3.0, 0.5]);
    assert_eq!(make_sketch(50, 8, 9).unwrap(), make_sketch(50, 8, 9).unwrap());
}

#[test]
fn single_coordinate_has_no_variance() {
    let mut e = vec![0.0; 32];
    e[0] = 1.0;
    let (mean, var) = sketch_moments(&e, &e, 8, 200, 0).unwrap();
    assert_eq!((mean, var), (1.0, 0.0));
}

#[test]
fn variance_closed_forms_agree_with_expansion() {
    let mut r = rng(8);
    let a = uniform_vec(&mut r, 12, -1.0, 1.0);
    let b = uniform_vec(&mut r, 12, -1.0, 1.0);
    let d_out = 5.0;
    // Var⟨Pa,Pb⟩ = (1/d')·Σ_{i≠j}(a_i² b_j² + a_i b_i a_j b_j)
    let mut s = 0.0;
    for i in 0..12 {
        for j in 0..12 {
            if i != j {
                s += a[i] * a[i] * b[j] * b[j] + a[i] * b[i] * a[j] * b[j];
            }
        }
    }
    assert!((variance_exact(&a, &b, 5) - s / d_out).abs() < 1e-12);
    assert!(variance_exact(&a, &b, 5) <= variance_bound(&a, &b, 5));
}

#[test]
fn kappa_endpoints_and_bounds() {
    assert_eq!(kappa_ratio(&[0.6, 0.8], &[0.6, 0.8]).unwrap(), 1.0);
    assert_eq!(kappa_ratio(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 2.0);
    let mut r = rng(10);
    for _ in 0..1000 {
        let a = uniform_vec(&mut r, 20, 0.0, 1.0);
        let b = uniform_vec(&mut r, 20, 0.0, 1.0);
        let k = kappa_ratio(&a, &b).unwrap();
        let ip = dot(&a, &b) / (norm(&a) * norm(&b));
        assert!((1.0..=2.0).contains(&k));
        assert!((k - 2.0 / (ip * ip + 1.0)).abs() < 1e-12);
    }
}

#[test]
fn gamma_ratio_rises_toward_kappa() {
    let mut r = rng(12);
    for _ in 0..50 {
        let a: Vec<f64> = (0..64).map(|_| r.random_range(0.0f64..1.0).powi(4) + 1e-3).collect();
        let b: Vec<f64> = (0..64).map(|_| r.random_range(0.0f64..1.0).powi(4) + 1e-3).collect();
        let ratios: Vec<f64> = [1.0, 0.5, 0.25, 0.1, 0.01, 1e-4]
            .iter()
            .map(|&g| gamma_variance_ratio(&a, &b, g).unwrap())
            .collect();
        assert!((ratios[0] - 1.0).abs() < 1e-12);
        assert!(ratios.windows(2).all(|w| w[1] >= w[0] - 1e-12), "{ratios:?}");
        let ip = dot(&a, &b) / (norm(&a) * norm(&b));
        let limit = 2.0 / (ip * ip + 1.0);
        assert!((ratios.last().unwrap() - limit).abs() < 1e-2, "{ratios:?} vs {limit}");
    }
}

proptest! {
    #[test]
    fn sketch_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0,
                        x in prop::collection::vec(-5.0f64..5.0, 40), y in prop::collection::vec(-5.0f64..5.0, 40)) {
        let p = make_sketch(40, 7, seed).unwrap();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let px = apply_sketch(&p, &x).unwrap();
        let py = apply_sketch(&p, &y).unwrap();
        let want: Vec<f64> = px.iter().zip(&py).map(|(u, v)| a * u + b * v).collect();
        prop_assert!(max_abs_diff(&apply_sketch(&p, &mix).unwrap(), &want) < 1e-12);
    }

    #[test]
    fn kappa_decreases_with_alignment(t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
        // unit nonnegative pairs with inner product cos(θ)
        let pair = |t: f64| {
            let th = t * std::f64::consts::FRAC_PI_2;
            (vec![1.0, 0.0], vec![th.cos(), th.sin()])
        };
        let ((a1, b1), (a2, b2)) = (pair(t1), pair(t2));
        let (k1, k2) = (kappa_ratio(&a1, &b1).unwrap(), kappa_ratio(&a2, &b2).unwrap());
        let (ip1, ip2) = (dot(&a1, &b1), dot(&a2, &b2));
        if ip1 < ip2 {
            prop_assert!(k1 >= k2);
        }
        prop_assert!((1.0..=2.0).contains(&k1));
    }
}
