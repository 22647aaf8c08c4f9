//! Forward-value oracles and gradient checks for every tape operation.
//!
//! Expected values are frozen from hand arithmetic or computed in-test by an
//! independent straight-line formula; gradients are validated against the
//! finite-difference facility, which only uses forward evaluations.

use aloft::tensor::{check_gradients, Tape, Tensor, TensorError};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-5;
const FD_FLOOR: f64 = 1e-6;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

// ── forward oracles ──

#[test]
fn matmul_identity_is_identity() {
    let mut tape = Tape::new();
    let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let out = tape.matmul(&a, &eye).unwrap();
    assert_eq!(out.data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn matmul_row_times_column() {
    let mut tape = Tape::new();
    let a = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
    let b = Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap();
    let out = tape.matmul(&a, &b).unwrap();
    assert_eq!(out.shape(), &[1, 1]);
    assert_eq!(out.data(), &[11.0]);
}

#[test]
fn matmul_rejects_inner_dim_mismatch() {
    let mut tape = Tape::new();
    let a = Tensor::zeros(vec![2, 3]);
    let b = Tensor::zeros(vec![2, 3]);
    assert!(matches!(
        tape.matmul(&a, &b),
        Err(TensorError::ShapeMismatch { op: "matmul", .. })
    ));
}

#[test]
fn activation_values_at_known_points() {
    let mut tape = Tape::new();
    let x = Tensor::from_vec(vec![0.0, -3.0, 2.0]);
    assert_eq!(tape.tanh(&x).data(), &[0.0, (-3.0f64).tanh(), 2.0f64.tanh()]);
    assert_eq!(tape.relu(&x).data(), &[0.0, 0.0, 2.0]);
    let sig = tape.sigmoid(&x);
    assert_eq!(sig.data()[0], 0.5);
    assert!((sig.data()[2] - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-15);
}

#[test]
fn tanh_gradient_at_zero_is_one() {
    let mut tape = Tape::new();
    let x = tape.var(&Tensor::scalar(0.0));
    let y = tape.tanh(&x);
    let grads = tape.backward(&y).unwrap();
    assert_eq!(grads.wrt(&x).unwrap().data(), &[1.0]);
}

#[test]
fn relu_gradient_is_step_function() {
    let mut tape = Tape::new();
    let x = tape.var(&Tensor::from_vec(vec![-3.0, 0.0, 2.0]));
    let y = tape.relu(&x);
    let loss = tape.sum(&y);
    let grads = tape.backward(&loss).unwrap();
    assert_eq!(grads.wrt(&x).unwrap().data(), &[0.0, 0.0, 1.0]);
}

#[test]
fn sigmoid_gradient_at_zero_is_quarter() {
    let mut tape = Tape::new();
    let x = tape.var(&Tensor::scalar(0.0));
    let y = tape.sigmoid(&x);
    let grads = tape.backward(&y).unwrap();
    assert_eq!(grads.wrt(&x).unwrap().data(), &[0.25]);
}

#[test]
fn softmax_uniform_logits_give_uniform_weights() {
    let mut tape = Tape::new();
    let x = Tensor::zeros(vec![10]);
    let y = tape.softmax(&x).unwrap();
    for &w in y.data() {
        assert_eq!(w, 0.1);
    }
}

#[test]
fn softmax_extreme_logits_saturate_without_nan() {
    let mut tape = Tape::new();
    let x = Tensor::from_vec(vec![1000.0, 0.0]);
    let y = tape.softmax(&x).unwrap();
    assert!((y.data()[0] - 1.0).abs() <= 1e-12);
    assert!(y.data()[1] >= 0.0 && y.data()[1] <= 1e-12);
    assert!(y.all_finite());
}

#[test]
fn softmax_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let logits: Vec<f64> = (0..8).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let total: f64 = logits.iter().map(|&x| x.exp()).sum();
        let expected: Vec<f64> = logits.iter().map(|&x| x.exp() / total).collect();
        let mut tape = Tape::new();
        let y = tape.softmax(&Tensor::from_vec(logits)).unwrap();
        for (a, e) in y.data().iter().zip(&expected) {
            assert!((a - e).abs() <= 1e-12, "softmax {a} vs direct {e}");
        }
    }
}

#[test]
fn softmax_rejects_non_finite_input() {
    let mut tape = Tape::new();
    let x = Tensor::from_vec(vec![1.0, f64::NAN]);
    assert!(matches!(
        tape.softmax(&x),
        Err(TensorError::Numeric { op: "softmax", .. })
    ));
    let x = Tensor::from_vec(vec![1.0, f64::INFINITY]);
    assert!(tape.softmax(&x).is_err());
}

#[test]
fn log_rejects_non_positive_input() {
    let mut tape = Tape::new();
    let x = Tensor::from_vec(vec![1.0, -1.0]);
    assert!(matches!(
        tape.log(&x),
        Err(TensorError::Domain { op: "log", .. })
    ));
    assert!(tape.log(&Tensor::scalar(0.0)).is_err());
}

#[test]
fn conv2d_hand_computed_case() {
    // Diagonal 2x2 kernel: out[i][j] = in[i][j] + in[i+1][j+1].
    let mut tape = Tape::new();
    let input = Tensor::new(vec![1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
    let kernel = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let out = tape.conv2d(&input, &kernel, 1).unwrap();
    assert_eq!(out.shape(), &[1, 2, 2]);
    assert_eq!(out.data(), &[6.0, 8.0, 12.0, 14.0]);
}

#[test]
fn conv2d_stride_two_sums_patches() {
    let mut tape = Tape::new();
    let input = Tensor::new(vec![1, 4, 4], (1..=16).map(f64::from).collect()).unwrap();
    let kernel = Tensor::new(vec![1, 1, 2, 2], vec![1.0; 4]).unwrap();
    let out = tape.conv2d(&input, &kernel, 2).unwrap();
    assert_eq!(out.shape(), &[1, 2, 2]);
    assert_eq!(out.data(), &[14.0, 22.0, 46.0, 54.0]);
}

#[test]
fn conv2d_rejects_oversized_kernel() {
    let mut tape = Tape::new();
    let input = Tensor::zeros(vec![1, 2, 2]);
    let kernel = Tensor::zeros(vec![1, 1, 3, 3]);
    assert!(tape.conv2d(&input, &kernel, 1).is_err());
}

#[test]
fn pad2d_places_input_in_zero_border() {
    let mut tape = Tape::new();
    let input = Tensor::new(vec![1, 1, 1], vec![5.0]).unwrap();
    let out = tape.pad2d(&input, 1).unwrap();
    assert_eq!(out.shape(), &[1, 3, 3]);
    assert_eq!(out.data(), &[0.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 0.0]);
}

#[test]
fn upsample2x_repeats_each_cell() {
    let mut tape = Tape::new();
    let input = Tensor::new(vec![1, 1, 2], vec![1.0, 2.0]).unwrap();
    let out = tape.upsample2x(&input).unwrap();
    assert_eq!(out.shape(), &[1, 2, 4]);
    assert_eq!(out.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
}

#[test]
fn concat0_stacks_vectors() {
    let mut tape = Tape::new();
    let a = Tensor::from_vec(vec![1.0, 2.0]);
    let b = Tensor::from_vec(vec![3.0]);
    let out = tape.concat0(&[&a, &b]).unwrap();
    assert_eq!(out.shape(), &[3]);
    assert_eq!(out.data(), &[1.0, 2.0, 3.0]);
}

#[test]
fn index_extracts_single_element() {
    let mut tape = Tape::new();
    let x = tape.var(&Tensor::from_vec(vec![10.0, 20.0, 30.0]));
    let y = tape.index(&x, 1).unwrap();
    assert_eq!(y.data(), &[20.0]);
    let grads = tape.backward(&y).unwrap();
    assert_eq!(grads.wrt(&x).unwrap().data(), &[0.0, 1.0, 0.0]);
}

#[test]
fn smul_scales_by_scalar_tensor() {
    let mut tape = Tape::new();
    let s = tape.var(&Tensor::scalar(2.0));
    let t = tape.var(&Tensor::from_vec(vec![1.0, 2.0, 3.0]));
    let y = tape.smul(&s, &t).unwrap();
    assert_eq!(y.data(), &[2.0, 4.0, 6.0]);
    let loss = tape.sum(&y);
    let grads = tape.backward(&loss).unwrap();
    assert_eq!(grads.wrt(&s).unwrap().data(), &[6.0]);
    assert_eq!(grads.wrt(&t).unwrap().data(), &[2.0, 2.0, 2.0]);
}

#[test]
fn mean_divides_sum_by_count() {
    let mut tape = Tape::new();
    let x = tape.var(&Tensor::from_vec(vec![1.0, 2.0, 3.0, 6.0]));
    let m = tape.mean(&x);
    assert_eq!(m.data(), &[3.0]);
    let grads = tape.backward(&m).unwrap();
    assert_eq!(grads.wrt(&x).unwrap().data(), &[0.25, 0.25, 0.25, 0.25]);
}

// ── gradient structure ──

#[test]
fn reused_leaf_sums_gradient_contributions() {
    // loss = x*x + x, so d loss / dx = 2x + 1 = 7 at x = 3.
    let mut tape = Tape::new();
    let x = tape.var(&Tensor::scalar(3.0));
    let sq = tape.mul(&x, &x).unwrap();
    let loss = tape.add(&sq, &x).unwrap();
    let grads = tape.backward(&loss).unwrap();
    assert_eq!(grads.wrt(&x).unwrap().data(), &[7.0]);
}

#[test]
fn constants_do_not_accumulate_gradients() {
    let mut tape = Tape::new();
    let x = tape.var(&Tensor::scalar(2.0));
    let c = Tensor::scalar(5.0);
    let y = tape.mul(&x, &c).unwrap();
    let grads = tape.backward(&y).unwrap();
    assert_eq!(grads.wrt(&x).unwrap().data(), &[5.0]);
    assert!(grads.wrt(&c).is_err());
}

#[test]
fn untracked_inputs_record_no_nodes() {
    let mut tape = Tape::new();
    let a = Tensor::from_vec(vec![1.0, 2.0]);
    let b = Tensor::from_vec(vec![3.0, 4.0]);
    let c = tape.add(&a, &b).unwrap();
    let _ = tape.tanh(&c);
    assert!(tape.is_empty());
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::new();
    let x = tape.var(&Tensor::from_vec(vec![1.0, 2.0]));
    let y = tape.tanh(&x);
    assert!(matches!(
        tape.backward(&y),
        Err(TensorError::NonScalar { op: "backward", .. })
    ));
}

#[test]
fn backward_rejects_untracked_loss() {
    let tape = Tape::new();
    let x = Tensor::scalar(1.0);
    assert!(matches!(
        tape.backward(&x),
        Err(TensorError::NotTracked { .. })
    ));
}

#[test]
fn unreached_leaf_gets_zero_gradient() {
    let mut tape = Tape::new();
    let x = tape.var(&Tensor::scalar(1.0));
    let y = tape.var(&Tensor::scalar(2.0));
    let loss = tape.tanh(&x);
    let grads = tape.backward(&loss).unwrap();
    assert_eq!(grads.wrt(&y).unwrap().data(), &[0.0]);
}

#[test]
fn backward_is_bitwise_deterministic() {
    let build = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut tape = Tape::new();
        let w = tape.var(&rand_tensor(&mut rng, &[4, 6]));
        let x = tape.var(&rand_tensor(&mut rng, &[6]));
        let h = tape.matvec(&w, &x).unwrap();
        let a = tape.tanh(&h);
        let p = tape.softmax(&a).unwrap();
        let lp = tape.log(&p).unwrap();
        let loss = tape.mean(&lp);
        let grads = tape.backward(&loss).unwrap();
        (
            grads.wrt(&w).unwrap().data().to_vec(),
            grads.wrt(&x).unwrap().data().to_vec(),
        )
    };
    let (gw1, gx1) = build();
    let (gw2, gx2) = build();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<u64>>();
    assert_eq!(bits(&gw1), bits(&gw2));
    assert_eq!(bits(&gx1), bits(&gx2));
}

#[test]
fn repeated_backward_on_same_tape_matches() {
    let mut tape = Tape::new();
    let x = tape.var(&Tensor::from_vec(vec![0.3, -0.7, 1.1]));
    let y = tape.tanh(&x);
    let loss = tape.sum(&y);
    let g1 = tape.backward(&loss).unwrap().wrt(&x).unwrap();
    let g2 = tape.backward(&loss).unwrap().wrt(&x).unwrap();
    assert_eq!(g1.data(), g2.data());
}

// ── finite-difference sweeps per operation ──

#[test]
fn fd_matches_elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let a = rand_tensor(&mut rng, &[3, 4]);
        let b = rand_tensor(&mut rng, &[3, 4]);
        let report = check_gradients(&[("a", a), ("b", b)], FD_STEP, FD_FLOOR, |tape, p| {
            let sum = tape.add(&p[0], &p[1])?;
            let diff = tape.sub(&p[0], &p[1])?;
            let prod = tape.mul(&sum, &diff)?;
            let scaled = tape.scale(&prod, 0.7);
            let neg = tape.neg(&scaled);
            Ok(tape.sum(&neg))
        })
        .unwrap();
        assert!(report.within(1e-6), "{report:?}");
    }
}

#[test]
fn fd_matches_activations() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..5 {
        let x = rand_tensor(&mut rng, &[8]);
        let report = check_gradients(&[("x", x)], FD_STEP, FD_FLOOR, |tape, p| {
            let t = tape.tanh(&p[0]);
            let s = tape.sigmoid(&t);
            let r = tape.relu(&s);
            let a = tape.abs(&r);
            Ok(tape.sum(&a))
        })
        .unwrap();
        assert!(report.within(1e-6), "{report:?}");
    }
}

#[test]
fn fd_matches_matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..5 {
        let a = rand_tensor(&mut rng, &[3, 5]);
        let b = rand_tensor(&mut rng, &[5, 2]);
        let report = check_gradients(&[("a", a), ("b", b)], FD_STEP, FD_FLOOR, |tape, p| {
            let m = tape.matmul(&p[0], &p[1])?;
            Ok(tape.sum(&m))
        })
        .unwrap();
        assert!(report.within(1e-6), "{report:?}");
    }
}

#[test]
fn fd_matches_softmax_log_composite() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..5 {
        let x = rand_tensor(&mut rng, &[6]);
        let report = check_gradients(&[("x", x)], FD_STEP, FD_FLOOR, |tape, p| {
            let sm = tape.softmax(&p[0])?;
            let lp = tape.log(&sm)?;
            let picked = tape.index(&lp, 2)?;
            Ok(tape.neg(&picked))
        })
        .unwrap();
        assert!(report.within(1e-5), "{report:?}");
    }
}

#[test]
fn fd_matches_conv_pipeline() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..3 {
        let input = rand_tensor(&mut rng, &[2, 6, 6]);
        let k1 = rand_tensor(&mut rng, &[3, 2, 3, 3]);
        let report = check_gradients(
            &[("input", input), ("k1", k1)],
            FD_STEP,
            FD_FLOOR,
            |tape, p| {
                let padded = tape.pad2d(&p[0], 1)?;
                let c = tape.conv2d(&padded, &p[1], 2)?;
                let a = tape.tanh(&c);
                let up = tape.upsample2x(&a)?;
                Ok(tape.mean(&up))
            },
        )
        .unwrap();
        assert!(report.within(1e-6), "{report:?}");
    }
}

#[test]
fn fd_matches_concat_and_smul() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let a = rand_tensor(&mut rng, &[3]);
    let b = rand_tensor(&mut rng, &[3]);
    let s = rand_tensor(&mut rng, &[1]);
    let report = check_gradients(
        &[("a", a), ("b", b), ("s", s)],
        FD_STEP,
        FD_FLOOR,
        |tape, p| {
            let sa = tape.smul(&p[2], &p[0])?;
            let cat = tape.concat0(&[&sa, &p[1]])?;
            let sq = tape.mul(&cat, &cat)?;
            Ok(tape.sum(&sq))
        },
    )
    .unwrap();
    assert!(report.within(1e-6), "{report:?}");
}

#[test]
fn fd_matches_dot_and_reshape() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let a = rand_tensor(&mut rng, &[6]);
    let b = rand_tensor(&mut rng, &[6]);
    let report = check_gradients(&[("a", a), ("b", b)], FD_STEP, FD_FLOOR, |tape, p| {
        let m = tape.reshape(&p[0], vec![2, 3])?;
        let flat = tape.reshape(&m, vec![6])?;
        tape.dot(&flat, &p[1])
    })
    .unwrap();
    assert!(report.within(1e-6), "{report:?}");
}

#[test]
fn bias_ch_adds_per_channel() {
    let mut tape = Tape::new();
    let x = tape.var(&Tensor::new(vec![2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let b = tape.var(&Tensor::from_vec(vec![10.0, 20.0]));
    let y = tape.bias_ch(&x, &b).unwrap();
    assert_eq!(y.data(), &[11.0, 12.0, 23.0, 24.0]);
    let loss = tape.sum(&y);
    let grads = tape.backward(&loss).unwrap();
    assert_eq!(grads.wrt(&b).unwrap().data(), &[2.0, 2.0]);
    assert_eq!(grads.wrt(&x).unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
}

#[test]
fn clamp_bounds_values_and_masks_gradient() {
    let mut tape = Tape::new();
    let x = tape.var(&Tensor::from_vec(vec![-2.0, 0.5, 3.0]));
    let y = tape.clamp(&x, 0.0, 1.0).unwrap();
    assert_eq!(y.data(), &[0.0, 0.5, 1.0]);
    let loss = tape.sum(&y);
    let grads = tape.backward(&loss).unwrap();
    assert_eq!(grads.wrt(&x).unwrap().data(), &[0.0, 1.0, 0.0]);
}

#[test]
fn fd_matches_bias_ch_and_clamp() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let x = rand_tensor(&mut rng, &[2, 3, 3]);
    let b = rand_tensor(&mut rng, &[2]);
    let report = check_gradients(&[("x", x), ("b", b)], FD_STEP, FD_FLOOR, |tape, p| {
        let biased = tape.bias_ch(&p[0], &p[1])?;
        // Bounds sit outside the reachable values so no element straddles a
        // clamp edge, where the two-sided difference would be meaningless.
        let c = tape.clamp(&biased, -10.0, 10.0)?;
        let s = tape.sigmoid(&c);
        Ok(tape.mean(&s))
    })
    .unwrap();
    assert!(report.within(1e-6), "{report:?}");
}

// ── property-based invariants ──

mod properties {
    use super::*;
    use proptest::prelude::*;

    fn logits() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-20.0f64..20.0, 1..12)
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(xs in logits()) {
            let mut tape = Tape::new();
            let y = tape.softmax(&Tensor::from_vec(xs)).unwrap();
            let total: f64 = y.data().iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(y.data().iter().all(|&w| w >= 0.0 && w <= 1.0));
        }

        #[test]
        fn softmax_is_permutation_equivariant(xs in logits(), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut perm: Vec<usize> = (0..xs.len()).collect();
            for i in (1..perm.len()).rev() {
                let j = rand::Rng::gen_range(&mut rng, 0..=i);
                perm.swap(i, j);
            }
            let permuted: Vec<f64> = perm.iter().map(|&i| xs[i]).collect();
            let mut tape = Tape::new();
            let base = tape.softmax(&Tensor::from_vec(xs)).unwrap();
            let shuf = tape.softmax(&Tensor::from_vec(permuted)).unwrap();
            for (k, &i) in perm.iter().enumerate() {
                prop_assert!((shuf.data()[k] - base.data()[i]).abs() <= 1e-12);
            }
        }

        #[test]
        fn add_is_commutative(a in proptest::collection::vec(-1e6f64..1e6, 1..8)) {
            let b: Vec<f64> = a.iter().rev().cloned().collect();
            let ta = Tensor::from_vec(a);
            let tb = Tensor::from_vec(b);
            let mut tape = Tape::new();
            let x = tape.add(&ta, &tb).unwrap();
            let y = tape.add(&tb, &ta).unwrap();
            prop_assert_eq!(x.data(), y.data());
        }

        #[test]
        fn sum_gradient_is_all_ones(a in proptest::collection::vec(-10.0f64..10.0, 1..16)) {
            let mut tape = Tape::new();
            let x = tape.var(&Tensor::from_vec(a));
            let loss = tape.sum(&x);
            let grads = tape.backward(&loss).unwrap();
            prop_assert!(grads.wrt(&x).unwrap().data().iter().all(|&g| g == 1.0));
        }
    }
}
