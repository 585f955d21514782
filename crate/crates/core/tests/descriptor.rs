mod common;

use common::*;
use hkit::descriptor::{encode_bow, encode_fv, fit_gmm_traced, fit_kmeans, fit_pca, fv_orders, Codebook, DescriptorSet, GmmModel};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn bow_matches_exhaustive_search() {
    let mut r = rng(11);
    for case in 0..1000 {
        let k = r.random_range(1..20);
        let d = r.random_range(1..8);
        let centers: Vec<Vec<f64>> = (0..k).map(|_| uniform_vec(&mut r, d, -2.0, 2.0)).collect();
        let cb = Codebook::new(d, centers.concat()).unwrap();
        // every fourth case sits exactly on a center
        let x = if case % 4 == 0 { centers[r.random_range(0..k)].clone() } else { uniform_vec(&mut r, d, -3.0, 3.0) };
        let phi = encode_bow(&x, &cb).unwrap();
        let want = nearest_exhaustive(&x, &centers);
        assert_eq!(phi.iter().position(|v| *v == 1.0), Some(want), "case {case}");
    }
}

#[test]
fn bow_tie_goes_to_first_center() {
    let cb = Codebook::new(2, vec![1.0, 0.0, -1.0, 0.0, 0.0, 5.0]).unwrap();
    assert_eq!(encode_bow(&[0.0, 0.0], &cb).unwrap(), vec![1.0, 0.0, 0.0]);
}

#[test]
fn fv_matches_formula_oracle() {
    let mut r = rng(5);
    for _ in 0..200 {
        let gmm = random_gmm(&mut r, 3, 5);
        let x = uniform_vec(&mut r, 5, -2.0, 2.0);
        let got = encode_fv(&x, &gmm).unwrap();
        let want = fisher_vector_oracle(&x, &gmm);
        assert!(max_abs_diff(&got, &want) < 1e-10);
    }
}

#[test]
fn fv_at_the_mean_of_a_single_unit_component() {
    let gmm = GmmModel::new(3, vec![1.0], vec![0.5, -1.0, 2.0], vec![1.0; 3]).unwrap();
    let fv = encode_fv(&[0.5, -1.0, 2.0], &gmm).unwrap();
    let (first, second) = fv_orders(&fv, 1, 3).unwrap();
    assert_eq!(first, vec![0.0; 3]);
    for v in second {
        assert!((v + 1.0 / 2f64.sqrt()).abs() < 1e-15);
    }
}

#[test]
fn fv_full_scale_length() {
    let (k, d) = (256, 213);
    let gmm = GmmModel::new(d, vec![1.0 / k as f64; k], vec![0.0; k * d], vec![1.0; k * d]).unwrap();
    let fv = encode_fv(&vec![0.1; d], &gmm).unwrap();
    assert_eq!(fv.len(), 109_056);
    let (a, b) = fv_orders(&fv, k, d).unwrap();
    assert_eq!((a.len(), b.len()), (54_528, 54_528));
}

#[test]
fn kmeans_recovers_separated_blobs() {
    let mut r = rng(2);
    let centers = [[0.0, 0.0], [10.0, 0.0]];
    let mut rows = Vec::new();
    for c in &centers {
        for _ in 0..200 {
            rows.push(vec![c[0] + r.random_range(-0.01..0.01), c[1] + r.random_range(-0.01..0.01)]);
        }
    }
    let means: Vec<Vec<f64>> = rows
        .chunks(200)
        .map(|b| (0..2).map(|j| b.iter().map(|x| x[j]).sum::<f64>() / 200.0).collect())
        .collect();
    let cb = fit_kmeans(&DescriptorSet::from_rows(&rows).unwrap(), 2, 0).unwrap();
    for m in &means {
        let k = nearest_exhaustive(m, &[cb.center(0).to_vec(), cb.center(1).to_vec()]);
        assert!(max_abs_diff(cb.center(k), m) < 0.1);
    }
}

#[test]
fn gmm_single_component_is_the_sample_moments() {
    let mut r = rng(3);
    let n = 2000;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let z: f64 = (0..12).map(|_| r.random::<f64>()).sum::<f64>() - 6.0;
            vec![1.5 + 0.7 * z]
        })
        .collect();
    let mean = rows.iter().map(|x| x[0]).sum::<f64>() / n as f64;
    let sd = (rows.iter().map(|x| (x[0] - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let (gmm, trace) = fit_gmm_traced(&DescriptorSet::from_rows(&rows).unwrap(), 1, 0).unwrap();
    assert!((gmm.mean(0)[0] - mean).abs() < 3.0 * sd / (n as f64).sqrt());
    assert!((gmm.stddev(0)[0] / sd - 1.0).abs() < 0.1);
    assert!(trace.windows(2).all(|w| w[1] >= w[0] - 1e-9));
}

#[test]
fn pca_recovers_a_plane() {
    let mut r = rng(4);
    let u = [1.0, 2.0, 0.0, -1.0, 0.5];
    let v = [0.0, 1.0, 1.0, 1.0, -2.0];
    let rows: Vec<Vec<f64>> = (0..100)
        .map(|_| {
            let (a, b) = (r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
            (0..5).map(|j| 3.0 + a * u[j] + b * v[j]).collect()
        })
        .collect();
    let pca = fit_pca(&DescriptorSet::from_rows(&rows).unwrap(), 2).unwrap();
    for x in &rows {
        let back = pca.reconstruct(&pca.project(x).unwrap()).unwrap();
        assert!(max_abs_diff(&back, x) < 1e-9);
    }
    // projection against an explicit dense multiply
    let x = uniform_vec(&mut r, 5, -2.0, 2.0);
    let dense: Vec<f64> = (0..2)
        .map(|j| pca.component(j).iter().zip(x.iter().zip(pca.mean())).map(|(b, (xi, m))| b * (xi - m)).sum())
        .collect();
    assert!(max_abs_diff(&pca.project(&x).unwrap(), &dense) < 1e-12);
}

fn small_gmm() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..5, 1usize..5).prop_flat_map(|(k, d)| {
        (
            Just(k),
            Just(d),
            prop::collection::vec(0.1f64..1.0, k),
            prop::collection::vec(-2.0f64..2.0, k * d),
            prop::collection::vec(0.3f64..2.0, k * d),
            prop::collection::vec(-3.0f64..3.0, d),
        )
    })
}

proptest! {
    #[test]
    fn bow_is_one_hot(k in 1usize..16, d in 1usize..6, seed in any::<u64>()) {
        let mut r = rng(seed);
        let cb = Codebook::new(d, uniform_vec(&mut r, k * d, -1.0, 1.0)).unwrap();
        let phi = encode_bow(&uniform_vec(&mut r, d, -2.0, 2.0), &cb).unwrap();
        prop_assert!(phi.iter().all(|v| *v == 0.0 || *v == 1.0));
        prop_assert_eq!(phi.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn fv_permutes_with_components((k, d, w, m, s, x) in small_gmm(), rot in 0usize..5) {
        let total: f64 = w.iter().sum();
        let w: Vec<f64> = w.iter().map(|v| v / total).collect();
        let gmm = GmmModel::new(d, w.clone(), m.clone(), s.clone()).unwrap();
        let perm: Vec<usize> = (0..k).map(|i| (i + rot) % k).collect();
        let pick = |v: &[f64], width: usize| perm.iter().flat_map(|&p| v[p * width..(p + 1) * width].to_vec()).collect::<Vec<_>>();
        let permuted = GmmModel::new(d, pick(&w, 1), pick(&m, d), pick(&s, d)).unwrap();
        let a = encode_fv(&x, &gmm).unwrap();
        let b = encode_fv(&x, &permuted).unwrap();
        prop_assert_eq!(a.len(), 2 * k * d);
        prop_assert!(max_abs_diff(&pick(&a, 2 * d), &b) < 1e-12);
    }
}
