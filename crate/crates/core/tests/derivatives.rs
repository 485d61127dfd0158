mod common;

use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scr_core::data::{generate_gaussian, Dataset, GaussianSpec};
use scr_core::losses::log1p_exp;
use scr_core::{Exec, IndexSet, Objective, ObjectiveModel, Regularizer, Vector};

use common::{gaussian_vector, rel_err};

fn model(n: usize, d: usize, seed: u64, reg: Regularizer, lambda: f64) -> ObjectiveModel {
    let ds = generate_gaussian(&GaussianSpec::new(n, d, seed)).unwrap();
    ObjectiveModel::new(Arc::new(ds), reg, lambda).unwrap()
}

/// Central-difference gradient of `value`.
fn fd_gradient(m: &ObjectiveModel, x: &Vector, set: &IndexSet, h: f64) -> Vector {
    Vector::from_fn(x.len(), |j, _| {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        (m.value(&xp, set).unwrap() - m.value(&xm, set).unwrap()) / (2.0 * h)
    })
}

#[test]
fn gradient_and_hvp_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..100 {
        let d = rng.random_range(1..=20);
        let reg = if trial % 2 == 0 { Regularizer::L2 } else { Regularizer::NonConvex };
        let m = model(40, d, trial, reg, 0.1);
        let x = gaussian_vector(d, &mut rng);
        let v = gaussian_vector(d, &mut rng);
        let set = IndexSet::full(40);

        let g = m.gradient(&x, &set).unwrap();
        let fd = fd_gradient(&m, &x, &set, 1e-6);
        let err = (&g - &fd).norm() / g.norm().max(1e-8);
        assert!(err < 1e-5, "trial {trial}: gradient rel err {err:e}");

        let h = 1e-5;
        let gp = m.gradient(&(&x + &v * h), &set).unwrap();
        let gm = m.gradient(&(&x - &v * h), &set).unwrap();
        let fd_hv = (gp - gm) / (2.0 * h);
        let hv = m.hvp(&x, &set, &v).unwrap();
        let err = (&hv - &fd_hv).norm() / hv.norm().max(1e-8);
        assert!(err < 1e-4, "trial {trial}: hvp rel err {err:e}");
    }
}

#[test]
fn value_matches_direct_sum() {
    let m = model(30, 4, 5, Regularizer::NonConvex, 0.2);
    let x = Vector::from_vec(vec![0.3, -1.2, 2.0, 0.1]);
    let set = IndexSet::subset(vec![3, 7, 11, 29], 30).unwrap();
    let data = m.data();
    let mut loss = 0.0;
    for i in set.iter() {
        let margin = data.label(i) * data.row_dot(i, x.as_slice());
        loss += log1p_exp(-margin);
    }
    let reg: f64 = x.iter().map(|t| 0.2 * t * t / (1.0 + t * t)).sum();
    let expected = loss / 4.0 + reg;
    assert!(rel_err(m.value(&x, &set).unwrap(), expected) < 1e-14);
}

#[test]
fn dense_hessian_is_symmetric_and_matches_hvp() {
    let m = model(60, 6, 9, Regularizer::NonConvex, 0.5);
    let x = Vector::from_vec(vec![0.5, -0.5, 1.5, 0.0, 2.0, -3.0]);
    let set = IndexSet::full(60);
    let h = m.hessian(&x, &set).unwrap();
    assert!((&h - h.transpose()).amax() < 1e-15);
    let v = Vector::from_vec(vec![1.0, 2.0, -1.0, 0.5, 0.0, 1.0]);
    assert!((&h * &v - m.hvp(&x, &set, &v).unwrap()).amax() < 1e-12);
}

#[test]
fn sparse_and_dense_storage_agree() {
    let rows = vec![
        vec![(0, 1.0), (3, -2.0)],
        vec![(1, 0.5)],
        vec![(2, 3.0), (3, 1.0)],
        vec![(0, -1.0), (1, 1.0), (2, 1.0), (3, 1.0)],
    ];
    let labels = vec![1.0, -1.0, 1.0, -1.0];
    let mut dense = vec![0.0; 16];
    for (i, r) in rows.iter().enumerate() {
        for &(j, v) in r {
            dense[i * 4 + j] = v;
        }
    }
    let sparse = Dataset::from_sparse_rows(rows, labels.clone(), 4).unwrap();
    let dense = Dataset::from_dense(dense, labels, 4).unwrap();
    let ms = ObjectiveModel::new(Arc::new(sparse), Regularizer::L2, 0.1).unwrap();
    let md = ObjectiveModel::new(Arc::new(dense), Regularizer::L2, 0.1).unwrap();
    let x = Vector::from_vec(vec![0.1, 0.2, -0.3, 0.4]);
    let set = IndexSet::full(4);
    assert!((ms.value(&x, &set).unwrap() - md.value(&x, &set).unwrap()).abs() < 1e-15);
    assert!((ms.gradient(&x, &set).unwrap() - md.gradient(&x, &set).unwrap()).amax() < 1e-15);
    assert!((ms.hvp(&x, &set, &x).unwrap() - md.hvp(&x, &set, &x).unwrap()).amax() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn parallel_and_sequential_are_bit_identical(
        seed in 0u64..1000,
        n in 1usize..1500,
        d in 1usize..12,
        lambda in 0.0f64..1.0,
        nonconvex in any::<bool>(),
    ) {
        let reg = if nonconvex { Regularizer::NonConvex } else { Regularizer::L2 };
        let par = model(n, d, seed, reg, lambda).with_exec(Exec::Parallel);
        let seq = model(n, d, seed, reg, lambda).with_exec(Exec::Sequential);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian_vector(d, &mut rng);
        let v = gaussian_vector(d, &mut rng);
        let set = IndexSet::full(n);
        prop_assert_eq!(par.value(&x, &set).unwrap().to_bits(), seq.value(&x, &set).unwrap().to_bits());
        prop_assert_eq!(par.gradient(&x, &set).unwrap(), seq.gradient(&x, &set).unwrap());
        prop_assert_eq!(par.hvp(&x, &set, &v).unwrap(), seq.hvp(&x, &set, &v).unwrap());
    }

    #[test]
    fn full_and_explicit_subset_are_bit_identical(seed in 0u64..1000, n in 1usize..1200, d in 1usize..8) {
        let m = model(n, d, seed, Regularizer::L2, 0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
        let x = gaussian_vector(d, &mut rng);
        let full = IndexSet::full(n);
        let all = IndexSet::subset((0..n).collect(), n).unwrap();
        prop_assert_eq!(m.value(&x, &full).unwrap().to_bits(), m.value(&x, &all).unwrap().to_bits());
        prop_assert_eq!(m.gradient(&x, &full).unwrap(), m.gradient(&x, &all).unwrap());
        prop_assert_eq!(m.hvp(&x, &full, &x).unwrap(), m.hvp(&x, &all, &x).unwrap());
    }

    #[test]
    fn l2_model_is_convex_along_any_direction(seed in 0u64..500, d in 1usize..10) {
        let m = model(50, d, seed, Regularizer::L2, 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian_vector(d, &mut rng) * 3.0;
        let v = gaussian_vector(d, &mut rng);
        let curvature = v.dot(&m.hvp(&x, &IndexSet::full(50), &v).unwrap());
        prop_assert!(curvature >= 2e-3 * v.norm_squared() * (1.0 - 1e-12));
    }

    #[test]
    fn nonconvex_regularizer_is_bounded(t in -1e6f64..1e6, lambda in 0.0f64..10.0) {
        let (v, d1, d2) = Regularizer::NonConvex.coordinate(lambda, t);
        prop_assert!(v >= 0.0 && v <= lambda);
        prop_assert!(d1.abs() <= lambda * 0.65 + 1e-12);
        prop_assert!(d2.abs() <= 2.0 * lambda + 1e-12);
    }
}
