use proptest::{prop_assert, prop_assert_eq, proptest};

use super::*;
use crate::rng::Rng;

fn rand_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let data = (0..numel(shape)).map(|_| rng.normal()).collect();
    Tensor::param(data, shape).unwrap()
}

/// Central differences over every coordinate of every leaf; returns the worst
/// relative error `|a - n| / max(1e-8, |a| + |n|)`.
fn max_rel_err(leaves: &[Tensor], f: impl Fn(&[Tensor]) -> Tensor) -> f64 {
    for l in leaves {
        l.zero_grad();
    }
    f(leaves).backward().unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (li, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        for i in 0..leaf.numel() {
            let eval = |delta: f64| {
                let mut d = leaf.to_vec();
                d[i] += delta;
                let mut probe = leaves.to_vec();
                probe[li] = Tensor::new(d, leaf.shape()).unwrap();
                f(&probe).item()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let err = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    worst
}

#[test]
fn matmul_identity_and_projection() {
    let eye = Tensor::new(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
    let m = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
    assert_eq!(eye.matmul(&m).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);

    let p = Tensor::new(vec![1.0, 0.0, 0.0, 0.0], &[2, 2]).unwrap();
    let v = Tensor::new(vec![5.0, 7.0], &[2, 1]).unwrap();
    assert_eq!(p.matmul(&v).unwrap().data(), &[5.0, 0.0]);
}

#[test]
fn matmul_shape_mismatch_is_descriptive() {
    let a = Tensor::zeros(&[2, 3]);
    let b = Tensor::zeros(&[4, 2]);
    let err = a.matmul(&b).unwrap_err().to_string();
    assert!(err.contains("inner dimensions"), "{err}");
}

#[test]
fn matmul_sum_gradient_is_ones_times_bt() {
    let mut rng = Rng::new(11);
    let a = rand_tensor(&mut rng, &[3, 4]);
    let b = rand_tensor(&mut rng, &[4, 2]).detach();
    a.matmul(&b).unwrap().sum().backward().unwrap();
    let ga = a.grad().unwrap();
    for i in 0..3 {
        for k in 0..4 {
            let want: f64 = (0..2).map(|j| b.data()[k * 2 + j]).sum();
            assert!((ga[i * 4 + k] - want).abs() < 1e-12);
        }
    }
    let err = max_rel_err(&[a, b.with_requires_grad(true)], |t| t[0].matmul(&t[1]).unwrap().sum());
    assert!(err < 1e-6, "{err}");
}

#[test]
fn batched_and_transposed_matmul_gradients() {
    let mut rng = Rng::new(12);
    let a = rand_tensor(&mut rng, &[2, 3, 4]);
    let b = rand_tensor(&mut rng, &[2, 5, 4]);
    let w = rand_tensor(&mut rng, &[2, 3, 5]);
    let err = max_rel_err(&[a.clone(), b.clone(), w], |t| {
        t[0].matmul_t(&t[1]).unwrap().mul(&t[2]).unwrap().sum()
    });
    assert!(err < 1e-6, "{err}");

    let shared = rand_tensor(&mut rng, &[4, 3]);
    let err = max_rel_err(&[a, shared], |t| t[0].matmul(&t[1]).unwrap().relu().sum());
    assert!(err < 1e-6, "{err}");
}

#[test]
fn softmax_examples() {
    let s = Tensor::new(vec![0.0, 0.0], &[2]).unwrap().softmax(0).unwrap();
    assert_eq!(s.data(), &[0.5, 0.5]);
    let s = Tensor::new(vec![1000.0, 0.0], &[2]).unwrap().softmax(0).unwrap();
    assert_eq!(s.data()[0], 1.0);
    assert!(s.data()[1] >= 0.0 && s.data()[1] < 1e-300);
    let bad = Tensor::new(vec![f64::NAN, 0.0], &[2]).unwrap();
    assert!(matches!(bad.softmax(0), Err(Error::Numeric(_))));
}

#[test]
fn softmax_gradient_matches_finite_differences() {
    let mut rng = Rng::new(13);
    let x = rand_tensor(&mut rng, &[5]);
    let w = rand_tensor(&mut rng, &[5]).detach();
    let err = max_rel_err(&[x], |t| t[0].softmax(0).unwrap().mul(&w).unwrap().sum());
    assert!(err < 1e-6, "{err}");

    // non-last axis
    let x = rand_tensor(&mut rng, &[3, 4, 2]);
    let w = rand_tensor(&mut rng, &[3, 4, 2]).detach();
    let err = max_rel_err(&[x], |t| t[0].softmax(1).unwrap().mul(&w).unwrap().sum());
    assert!(err < 1e-6, "{err}");
}

#[test]
fn rms_norm_examples_and_gradient() {
    let ones = Tensor::new(vec![1.0; 4], &[4]).unwrap();
    let y = ones.rms_norm(&ones, 0.0).unwrap();
    assert_eq!(y.data(), &[1.0; 4]);
    let zero = Tensor::zeros(&[4]);
    assert_eq!(zero.rms_norm(&ones, 1e-6).unwrap().data(), &[0.0; 4]);

    let mut rng = Rng::new(14);
    let x = rand_tensor(&mut rng, &[3, 6]);
    let g = rand_tensor(&mut rng, &[6]);
    let w = rand_tensor(&mut rng, &[3, 6]).detach();
    let err = max_rel_err(&[x, g], |t| t[0].rms_norm(&t[1], 1e-6).unwrap().mul(&w).unwrap().sum());
    assert!(err < 1e-6, "{err}");
    assert!(Tensor::zeros(&[2, 3]).rms_norm(&Tensor::zeros(&[4]), 1e-6).is_err());
}

#[test]
fn cross_entropy_analytic_cases() {
    let uniform = Tensor::zeros(&[1, 8]);
    let l = uniform.cross_entropy(&[3], None).unwrap().item();
    assert!((l - 8f64.ln()).abs() < 1e-12);

    let mut v = vec![0.0; 8];
    v[2] = 30.0;
    let peaked = Tensor::new(v, &[1, 8]).unwrap();
    assert!(peaked.cross_entropy(&[2], None).unwrap().item() < 1e-12);

    assert!(matches!(uniform.cross_entropy(&[8], None), Err(Error::Index(_))));
    // ignored rows do not count
    let two = Tensor::zeros(&[2, 8]);
    let l = two.cross_entropy(&[1, 0], Some(0)).unwrap().item();
    assert!((l - 8f64.ln()).abs() < 1e-12);
}

#[test]
fn cross_entropy_against_log_sum_exp_oracle() {
    let mut rng = Rng::new(15);
    let logits = rand_tensor(&mut rng, &[4, 10]);
    let targets = [3usize, 0, 9, 5];
    let loss = logits.cross_entropy(&targets, None).unwrap();
    let x = logits.data();
    let mut want = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let row = &x[r * 10..(r + 1) * 10];
        let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
        want += lse - row[t];
    }
    want /= 4.0;
    assert!((loss.item() - want).abs() < 1e-12);
    let err = max_rel_err(&[logits], |t| t[0].cross_entropy(&targets, None).unwrap());
    assert!(err < 1e-6, "{err}");
}

#[test]
fn backward_rejects_non_scalar() {
    let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
    assert!(matches!(x.scale(2.0).backward(), Err(Error::Contract(_))));
}

#[test]
fn analytic_backward_cases() {
    let x = Tensor::param(vec![1.0, -2.0, 3.0], &[3]).unwrap();
    x.sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![1.0; 3]);

    x.zero_grad();
    x.mul(&x).unwrap().sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![2.0, -4.0, 6.0]);
}

#[test]
fn shared_subexpressions_accumulate() {
    let x = Tensor::param(vec![0.5, 1.5], &[2]).unwrap();
    let s = x.sum();
    s.add(&s).unwrap().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
    // repeated backward on a fresh graph accumulates into the leaf
    x.sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![3.0, 3.0]);
}

#[test]
fn no_grad_skips_recording() {
    let x = Tensor::param(vec![1.0], &[1]).unwrap();
    let y = no_grad(|| x.scale(3.0));
    assert!(!y.requires_grad());
    assert!(x.scale(3.0).requires_grad());
}

#[test]
fn structural_ops_gradients() {
    let mut rng = Rng::new(16);
    let a = rand_tensor(&mut rng, &[2, 3, 4]);
    let b = rand_tensor(&mut rng, &[1, 3, 4]);
    let bias = rand_tensor(&mut rng, &[4]);
    let w = rand_tensor(&mut rng, &[4, 3, 2]).detach();
    let err = max_rel_err(&[a, b, bias], |t| {
        let c = Tensor::concat(&[t[0].clone(), t[1].clone()]).unwrap();
        let c = c.add(&t[2]).unwrap().narrow(1, 2).unwrap();
        let p = c.permute(&[2, 1, 0]).unwrap();
        let s = p.reshape(&[4, 3, 2]).unwrap().mul(&w).unwrap();
        s.mean_axis(1).unwrap().relu().sum()
    });
    assert!(err < 1e-6, "{err}");

    let table = rand_tensor(&mut rng, &[5, 3]);
    let err = max_rel_err(&[table], |t| t[0].embedding(&[4, 1, 4]).unwrap().mul(&t[0].embedding(&[0, 2, 3]).unwrap()).unwrap().sum());
    assert!(err < 1e-6, "{err}");
}

#[test]
fn softplus_values_and_gradient() {
    let x = Tensor::new(vec![-800.0, -1.0, 0.0, 2.0, 800.0], &[5]).unwrap();
    let y = x.softplus();
    let want = [0.0, (1.0f64 + (-1.0f64).exp()).ln(), 2f64.ln(), (1.0f64 + 2f64.exp()).ln(), 800.0];
    for (a, b) in y.data().iter().zip(want) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    let mut rng = Rng::new(21);
    let a = rand_tensor(&mut rng, &[3, 4]);
    let w = rand_tensor(&mut rng, &[3, 4]);
    let err = max_rel_err(&[a, w], |t| t[0].softplus().mul(&t[1]).unwrap().sum());
    assert!(err < 1e-7, "{err}");
}

#[test]
fn permute_round_trip() {
    let x = Tensor::new((0..24).map(f64::from).collect(), &[2, 3, 4]).unwrap();
    let y = x.permute(&[1, 2, 0]).unwrap();
    assert_eq!(y.shape(), &[3, 4, 2]);
    // y[i,j,k] = x[k,i,j]
    assert_eq!(y.data()[(4 + 2) * 2 + 1], x.data()[(3 + 1) * 4 + 2]);
    let z = y.permute(&[2, 0, 1]).unwrap();
    assert_eq!(z.data(), x.data());
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(vals in proptest::collection::vec(-50.0f64..50.0, 12)) {
        let s = Tensor::new(vals, &[3, 4]).unwrap().softmax(1).unwrap();
        for row in s.data().chunks(4) {
            prop_assert!(row.iter().all(|p| *p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn ops_are_deterministic(seed in 0u64..1000) {
        let mut r1 = Rng::new(seed);
        let mut r2 = Rng::new(seed);
        let a1 = rand_tensor(&mut r1, &[3, 5]);
        let a2 = rand_tensor(&mut r2, &[3, 5]);
        let y1 = a1.matmul_t(&a1).unwrap().softmax(1).unwrap().rms_norm(&Tensor::new(vec![1.0; 3], &[3]).unwrap(), 1e-6).unwrap();
        let y2 = a2.matmul_t(&a2).unwrap().softmax(1).unwrap().rms_norm(&Tensor::new(vec![1.0; 3], &[3]).unwrap(), 1e-6).unwrap();
        prop_assert_eq!(y1.data(), y2.data());
    }
}
