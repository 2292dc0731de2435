use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::Rng as _;
use sfms::autodiff::{numeric_grad, Graph};
use sfms::quantizer::*;
use sfms::rng;
use sfms::Mat;

#[test]
fn vq_agrees_with_brute_force_scan() {
    let mut r = rng::stream(31, "vq-trials", 0);
    for _ in 0..1000 {
        let n = r.gen_range(1..20);
        let d = r.gen_range(1..6);
        let entries = Mat::from_fn(n, d, |_, _| r.gen_range(-2.0..2.0));
        let z: Vec<f64> = (0..d).map(|_| r.gen_range(-2.0..2.0)).collect();
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for i in 0..n {
            let dist = (0..d).map(|j| (entries.get(i, j) - z[j]).powi(2)).sum::<f64>().sqrt();
            if dist < best_d {
                best_d = dist;
                best = i;
            }
        }
        let book = Codebook::vq(entries.clone()).unwrap();
        let (id, zq) = vq_encode(&z, &book).unwrap();
        assert_eq!(id, best);
        assert_eq!(zq, entries.row(best));
    }
}

#[test]
fn vq_codewords_are_fixed_points() {
    let book = Codebook::init_vq(16, 4, &mut rng::stream(1, "book", 0)).unwrap();
    let Codebook::Vq { entries } = &book else { unreachable!() };
    for i in 0..16 {
        let (id, zq) = vq_encode(entries.row(i), &book).unwrap();
        assert_eq!(id, i);
        assert_eq!(zq, entries.row(i));
    }
    assert!(entries.data().iter().all(|v| v.abs() <= 1.0 / 16.0));
}

#[test]
fn vq_loss_gradients_route_through_one_side_each() {
    let z0 = Mat::from_rows(&[vec![0.4, -0.2, 0.9]]);
    let q0 = Mat::from_rows(&[vec![0.1, 0.3, 0.5]]);
    let grads = |which: usize| {
        let mut g = Graph::new();
        let z = g.input(z0.clone());
        let q = g.input(q0.clone());
        let (cb, cm) = vq_losses_graph(&mut g, z, q);
        let l = if which == 0 { cb } else { cm };
        let gr = g.backward(l);
        (gr.get_or_zeros(z, (1, 3)), gr.get_or_zeros(q, (1, 3)))
    };
    let value = |z: &Mat, q: &Mat| vq_losses(z.data(), q.data()).0;
    // codebook term: moves q, blind to z
    let (gz, gq) = grads(0);
    assert!(gz.data().iter().all(|&v| v == 0.0));
    let num_q = numeric_grad(&q0, 1e-6, |q| value(&z0, q));
    assert!(gq.max_abs_diff(&num_q) < 1e-6);
    // commitment term: moves z, blind to q
    let (gz, gq) = grads(1);
    assert!(gq.data().iter().all(|&v| v == 0.0));
    let num_z = numeric_grad(&z0, 1e-6, |z| value(z, &q0));
    assert!(gz.max_abs_diff(&num_z) < 1e-6);
    // the stop-gradient argument still changes the value
    let shifted = Mat::from_rows(&[vec![0.5, -0.2, 0.9]]);
    assert_ne!(value(&shifted, &q0), value(&z0, &q0));
}

#[test]
fn fsq_256_reaches_every_code() {
    let book = Codebook::fsq(DEFAULT_FSQ_LEVELS.to_vec()).unwrap();
    let grid: Vec<f64> = (0..25).map(|i| -3.0 + 0.25 * i as f64).collect();
    let mut seen = BTreeSet::new();
    for &a in &grid {
        for &b in &grid {
            for &c in &grid {
                for &d in &grid {
                    seen.insert(fsq_encode(&[a, b, c, d], &book).unwrap().0);
                }
            }
        }
    }
    assert_eq!(seen.len(), 256);
    assert_eq!(*seen.iter().max().unwrap(), 255);
}

#[test]
fn mixed_radix_bijection_is_exhaustive() {
    for levels in [vec![4, 4, 4, 4], vec![8, 5, 5, 5], vec![2, 3], vec![7, 2, 16, 3]] {
        let size: usize = levels.iter().product();
        assert!(size <= 4096);
        let mut seen = BTreeSet::new();
        for id in 0..size {
            let idx = fsq_id_to_levels(id, &levels).unwrap();
            assert!(seen.insert(idx.clone()));
            assert_eq!(fsq_levels_to_id(&idx, &levels).unwrap(), id);
        }
        assert!(fsq_id_to_levels(size, &levels).is_err());
    }
}

#[test]
fn fsq_straight_through_passes_gradient_unchanged() {
    let book = Codebook::fsq(vec![4, 4]).unwrap();
    let mut g = Graph::new();
    let z = g.input(Mat::from_rows(&[vec![0.3, -1.2], vec![2.0, 0.1]]));
    let q = fsq_graph(&mut g, z, &book).unwrap();
    let w = g.constant(Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
    let p = g.mul(q.out, w);
    let l = g.sum_all(p);
    let gz = g.backward(l).get_or_zeros(z, (2, 2));
    assert_eq!(gz.data(), &[1.0, 2.0, 3.0, 4.0]);
    for (r, &id) in q.ids.iter().enumerate() {
        assert_eq!(g.value(q.out).row(r), book.code_vector(id).unwrap().as_slice());
    }
}

#[test]
fn vq_graph_selects_nearest_rows() {
    let entries = Mat::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![-1.0, 2.0]]);
    let mut g = Graph::new();
    let e = g.input(entries.clone());
    let z = g.input(Mat::from_rows(&[vec![0.9, 1.2], vec![-0.7, 1.6]]));
    let q = vq_graph(&mut g, z, e).unwrap();
    assert_eq!(q.ids, vec![1, 2]);
    assert_eq!(g.value(q.out).row(1), entries.row(2));
}

proptest! {
    #[test]
    fn fsq_outputs_are_fixed_points(
        levels in prop::collection::vec(2usize..17, 1..5),
        raw in prop::collection::vec(-4.0f64..4.0, 4),
    ) {
        let book = Codebook::fsq(levels.clone()).unwrap();
        let z: Vec<f64> = raw.iter().cycle().take(levels.len()).copied().collect();
        let (id, zq) = fsq_encode(&z, &book).unwrap();
        let (id2, zq2) = fsq_encode(&zq, &book).unwrap();
        prop_assert_eq!(id, id2);
        prop_assert_eq!(zq, zq2);
    }

    #[test]
    fn token_sequences_round_trip(
        classes in prop::collection::vec(0u32..=64, 1..60),
        fsq in any::<bool>(),
    ) {
        let kind = if fsq { CodebookKind::Fsq } else { CodebookKind::Vq };
        let t = TokenSequence::new(classes, kind, 64).unwrap();
        let back = TokenSequence::from_json(&t.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, t);
    }
}
