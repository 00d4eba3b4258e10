use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                c[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
            }
        }
    }
    c
}

fn naive_conv(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
    let (t, c) = (x.shape()[0], x.shape()[1]);
    let (k, width) = (w.shape()[0], w.shape()[2]);
    let t_out = (t + 2 * pad - width) / stride + 1;
    let mut out = vec![0.0; t_out * k];
    for o in 0..t_out {
        for f in 0..k {
            let mut acc = 0.0;
            for ch in 0..c {
                for d in 0..width {
                    let pos = (o * stride + d) as isize - pad as isize;
                    if pos >= 0 && (pos as usize) < t {
                        acc += x.data()[pos as usize * c + ch] * w.data()[(f * c + ch) * width + d];
                    }
                }
            }
            out[o * k + f] = acc;
        }
    }
    out
}

fn fd_error<F>(f: F, inputs: &[Tensor]) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> crate::Result<Var>,
{
    grad_check(f, inputs, 1e-5).unwrap().max_rel_error
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "index {i}: {x} vs {y}");
    }
}

#[test]
fn matmul_identity_and_hand_example() {
    let mut g = Graph::new();
    let i2 = g.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let a = g.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let b = g.constant(Tensor::new(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap());
    let ia = g.matmul(i2, a).unwrap();
    assert_eq!(g.value(ia).data(), &[1.0, 2.0, 3.0, 4.0]);
    let ab = g.matmul(a, b).unwrap();
    assert_eq!(g.value(ab).data(), &[19.0, 22.0, 43.0, 50.0]);
}

#[test]
fn matmul_shape_mismatch() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(g.matmul(a, b), Err(Error::Dimension(_))));
}

#[test]
fn matmul_matches_naive_and_fd() {
    for seed in 0..10 {
        let a = rand_tensor(&[3, 3], seed);
        let b = rand_tensor(&[3, 3], seed + 100);
        let mut g = Graph::new();
        let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
        let c = g.matmul(va, vb).unwrap();
        assert_close(g.value(c).data(), &naive_matmul(&a, &b), 1e-12);

        let err = fd_error(
            |g, v| {
                let c = g.matmul(v[0], v[1])?;
                g.sum(c)
            },
            &[a, b],
        );
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn conv_constant_and_impulse() {
    let mut g = Graph::new();
    let ones = g.constant(Tensor::new(vec![5, 1], vec![1.0; 5]).unwrap());
    let k = g.constant(Tensor::new(vec![1, 1, 3], vec![1.0, 1.0, 1.0]).unwrap());
    let y = g.conv1d(ones, k, 1, 0).unwrap();
    assert_eq!(g.shape(y), &[3, 1]);
    assert_eq!(g.value(y).data(), &[3.0, 3.0, 3.0]);

    let delta = g.constant(Tensor::new(vec![5, 1], vec![0.0, 0.0, 1.0, 0.0, 0.0]).unwrap());
    let k = g.constant(Tensor::new(vec![1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap());
    let y = g.conv1d(delta, k, 1, 0).unwrap();
    assert_eq!(g.value(y).data(), &[3.0, 2.0, 1.0]);
}

#[test]
fn conv_matches_naive_oracle() {
    for (stride, pad) in [(1, 0), (2, 1), (3, 2)] {
        let x = rand_tensor(&[10, 3], 7 + stride as u64);
        let w = rand_tensor(&[4, 3, 3], 11 + pad as u64);
        let mut g = Graph::new();
        let (vx, vw) = (g.constant(x.clone()), g.constant(w.clone()));
        let y = g.conv1d(vx, vw, stride, pad).unwrap();
        let want = naive_conv(&x, &w, stride, pad);
        assert_eq!(g.shape(y), &[want.len() / 4, 4]);
        assert_close(g.value(y).data(), &want, 1e-12);
    }
}

#[test]
fn conv_rejects_wide_kernel() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[3, 2]));
    let w = g.constant(Tensor::zeros(&[1, 2, 4]));
    assert!(matches!(g.conv1d(x, w, 1, 0), Err(Error::Dimension(_))));
    assert!(g.conv1d(x, w, 1, 1).is_ok());
    assert!(g.conv1d(x, w, 0, 1).is_err());
}

#[test]
fn lstm_cell_zero_cases() {
    for forget_bias in [0.0, 2.5] {
        let mut g = Graph::new();
        let (inp, hid) = (3, 4);
        let x = g.constant(Tensor::zeros(&[inp]));
        let h = g.constant(Tensor::zeros(&[hid]));
        let c = g.constant(Tensor::zeros(&[hid]));
        let wi = g.param(Tensor::zeros(&[inp, 4 * hid]));
        let wh = g.param(Tensor::zeros(&[hid, 4 * hid]));
        let mut b = vec![0.0; 4 * hid];
        b[hid..2 * hid].iter_mut().for_each(|v| *v = forget_bias);
        let b = g.param(Tensor::new(vec![4 * hid], b).unwrap());
        let (h2, c2) = g.lstm_cell(x, h, c, wi, wh, b).unwrap();
        assert!(g.value(h2).data().iter().all(|&v| v == 0.0));
        assert!(g.value(c2).data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn lstm_cell_shape_mismatch() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[3]));
    let h = g.constant(Tensor::zeros(&[4]));
    let wi = g.param(Tensor::zeros(&[3, 16]));
    let wh = g.param(Tensor::zeros(&[4, 16]));
    let b = g.param(Tensor::zeros(&[12]));
    assert!(matches!(g.lstm_cell(x, h, h, wi, wh, b), Err(Error::Dimension(_))));
}

#[test]
fn lstm_cell_gradients_match_fd() {
    for seed in 0..10 {
        let inputs = [
            rand_tensor(&[3], seed),
            rand_tensor(&[4], seed + 1),
            rand_tensor(&[4], seed + 2),
            rand_tensor(&[3, 16], seed + 3),
            rand_tensor(&[4, 16], seed + 4),
            rand_tensor(&[16], seed + 5),
        ];
        let err = fd_error(
            |g, v| {
                let (h, c) = g.lstm_cell(v[0], v[1], v[2], v[3], v[4], v[5])?;
                let hc = g.mul(h, c)?;
                let s = g.add(h, hc)?;
                g.sum(s)
            },
            &inputs,
        );
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn lstm_seq_equals_unrolled_cells() {
    let (b, t, inp, hid) = (2, 5, 3, 4);
    let x = rand_tensor(&[b, t, inp], 1);
    let wi = rand_tensor(&[inp, 4 * hid], 2);
    let wh = rand_tensor(&[hid, 4 * hid], 3);
    let bias = rand_tensor(&[4 * hid], 4);

    let mut g1 = Graph::new();
    let vx = g1.param(x.clone());
    let p1 = [g1.param(wi.clone()), g1.param(wh.clone()), g1.param(bias.clone())];
    let seq = g1.lstm_seq(vx, p1[0], p1[1], p1[2]).unwrap();
    let sq = g1.mul(seq, seq).unwrap();
    let root1 = g1.sum(sq).unwrap();
    let grads1 = g1.backward(root1).unwrap();

    let mut g2 = Graph::new();
    let vx2 = g2.param(x.clone());
    let p2 = [g2.param(wi), g2.param(wh), g2.param(bias)];
    let mut h = g2.constant(Tensor::zeros(&[b, hid]));
    let mut c = g2.constant(Tensor::zeros(&[b, hid]));
    let mut total = None;
    let mut states = Vec::new();
    for step in 0..t {
        let xt = g2.select_time(vx2, step).unwrap();
        let (hn, cn) = g2.lstm_cell(xt, h, c, p2[0], p2[1], p2[2]).unwrap();
        h = hn;
        c = cn;
        states.push(g2.value(h).clone());
        let sq = g2.mul(h, h).unwrap();
        let s = g2.sum(sq).unwrap();
        total = Some(match total {
            None => s,
            Some(acc) => g2.add(acc, s).unwrap(),
        });
    }
    let grads2 = g2.backward(total.unwrap()).unwrap();

    let out = g1.value(seq);
    for (step, st) in states.iter().enumerate() {
        for bi in 0..b {
            for j in 0..hid {
                let a = out.at(&[bi, step, j]);
                assert!((a - st.at(&[bi, j])).abs() < 1e-12);
            }
        }
    }
    assert_close(grads1.wrt(vx).data(), grads2.wrt(vx2).data(), 1e-10);
    for (a, b) in p1.iter().zip(&p2) {
        assert_close(grads1.wrt(*a).data(), grads2.wrt(*b).data(), 1e-10);
    }
}

#[test]
fn cross_entropy_uniform_and_oracle() {
    let mut g = Graph::new();
    let logits = g.constant(Tensor::new(vec![2, 8], vec![0.7; 16]).unwrap());
    let ce = g.cross_entropy(logits, &[0, 5]).unwrap();
    assert!((g.value(ce).item() - 8f64.ln()).abs() < 1e-12);

    for seed in 0..10 {
        let l = rand_tensor(&[4, 8], seed).data().iter().map(|v| v * 10.0).collect::<Vec<_>>();
        let targets = [seed as usize % 8, 3, 7, 0];
        let mut want = 0.0;
        for (row, &t) in l.chunks(8).zip(&targets) {
            let e: Vec<f64> = row.iter().map(|v| v.exp()).collect();
            let p = e[t] / e.iter().sum::<f64>();
            want -= p.ln();
        }
        want /= 4.0;
        let mut g = Graph::new();
        let v = g.constant(Tensor::new(vec![4, 8], l).unwrap());
        let ce = g.cross_entropy(v, &targets).unwrap();
        assert!((g.value(ce).item() - want).abs() < 1e-12);
    }
}

#[test]
fn cross_entropy_label_out_of_range() {
    let mut g = Graph::new();
    let logits = g.constant(Tensor::zeros(&[1, 8]));
    assert!(matches!(g.cross_entropy(logits, &[8]), Err(Error::Label(_))));
}

#[test]
fn loss_dispatch() {
    let mut g = Graph::new();
    let x = g.constant(rand_tensor(&[3, 4], 0));
    let m = loss(&mut g, LossKind::Mse, x, LossTarget::Values(x)).unwrap();
    assert_eq!(g.value(m).item(), 0.0);
    let l = g.constant(Tensor::zeros(&[1, 8]));
    let ce = loss(&mut g, LossKind::CrossEntropy, l, LossTarget::Classes(&[2])).unwrap();
    assert!((g.value(ce).item() - 8f64.ln()).abs() < 1e-12);
    assert!(loss(&mut g, LossKind::Mse, l, LossTarget::Classes(&[2])).is_err());
}

#[test]
fn backward_square_sum() {
    let mut g = Graph::new();
    let x = g.param(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
    let sq = g.mul(x, x).unwrap();
    let root = g.sum(sq).unwrap();
    let grads = g.backward(root).unwrap();
    assert_eq!(grads.wrt(x).data(), &[2.0, 4.0]);
}

#[test]
fn backward_unused_parameter_is_zero() {
    let mut g = Graph::new();
    let x = g.param(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
    let p = g.param(Tensor::new(vec![3], vec![5.0, 6.0, 7.0]).unwrap());
    let root = g.sum(x).unwrap();
    let grads = g.backward(root).unwrap();
    assert_eq!(grads.wrt(p).data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn backward_rejects_non_scalar_root() {
    let mut g = Graph::new();
    let x = g.param(Tensor::zeros(&[2]));
    assert!(matches!(g.backward(x), Err(Error::Contract(_))));
}

#[test]
fn backward_twice_is_identical() {
    let mut g = Graph::new();
    let x = g.constant(rand_tensor(&[4, 5], 1));
    let w = g.param(rand_tensor(&[5, 3], 2));
    let y = g.matmul(x, w).unwrap();
    let y = g.tanh(y).unwrap();
    let root = g.cross_entropy(y, &[0, 1, 2, 0]).unwrap();
    let a = g.backward(root).unwrap();
    let b = g.backward(root).unwrap();
    assert_eq!(a.wrt(w), b.wrt(w));
}

#[test]
fn forward_rejects_non_finite() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![1], vec![1e300]).unwrap());
    assert!(matches!(g.mul(x, x), Err(Error::Numeric(_))));
}

#[test]
fn grad_check_linear_and_preconditions() {
    let a = rand_tensor(&[3, 2], 5);
    let check = grad_check(
        |g, v| {
            let s = g.scale(v[0], 3.0)?;
            g.sum(s)
        },
        std::slice::from_ref(&a),
        1e-5,
    )
    .unwrap();
    assert!(check.max_rel_error < 1e-9);
    assert_eq!(check.coordinates_checked, 6);

    let f = |g: &mut Graph, v: &[Var]| g.sum(v[0]);
    assert!(matches!(grad_check(f, std::slice::from_ref(&a), 0.0), Err(Error::Contract(_))));

    let blowup = |g: &mut Graph, v: &[Var]| {
        let s = g.scale(v[0], 1e308)?;
        let s = g.scale(s, 10.0)?;
        g.sum(s)
    };
    assert!(matches!(grad_check(blowup, &[a], 1e-5), Err(Error::Numeric(_))));
}

#[test]
fn grad_check_detects_wrong_derivative() {
    let a = rand_tensor(&[4], 3);
    let err = fd_error(
        |g, v| {
            let y = g.map(v[0], |x| x * x, |x| 3.0 * x)?;
            g.sum(y)
        },
        &[a],
    );
    assert!(err > 0.1);
}

#[test]
fn every_op_matches_finite_differences() {
    for op in crate::gradsuite::op_cases() {
        let entry = crate::gradsuite::check_op(&op, 10).unwrap();
        assert!(entry.passed, "{}: {:?}", op.name, entry);
    }
}

#[test]
fn faulty_rule_is_detected() {
    let entry = crate::gradsuite::check_op(&crate::gradsuite::faulty_case(), 3).unwrap();
    assert!(!entry.passed);
    assert!(entry.max_rel_error > 0.1);
}

#[test]
fn composite_dnn_matches_finite_differences() {
    let inputs = [
        rand_tensor(&[4, 6], 1),
        rand_tensor(&[6, 5], 2),
        rand_tensor(&[5], 3),
        rand_tensor(&[5, 3], 4),
        rand_tensor(&[3], 5),
    ];
    let err = fd_error(
        |g, v| {
            let h = g.matmul(v[0], v[1])?;
            let h = g.add_bias(h, v[2])?;
            let h = g.tanh(h)?;
            let y = g.matmul(h, v[3])?;
            let y = g.add_bias(y, v[4])?;
            g.cross_entropy(y, &[0, 2, 1, 2])
        },
        &inputs,
    );
    assert!(err < 1e-4, "{err}");
}

#[test]
fn dropout_is_seeded_and_inverted() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![1000], vec![1.0; 1000]).unwrap());
    let a = g.dropout(x, 0.25, 3).unwrap();
    let b = g.dropout(x, 0.25, 3).unwrap();
    let c = g.dropout(x, 0.25, 4).unwrap();
    assert_eq!(g.value(a), g.value(b));
    assert_ne!(g.value(a), g.value(c));
    for &v in g.value(a).data() {
        assert!(v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-15);
    }
    assert!(g.dropout(x, 1.0, 0).is_err());
    let same = g.dropout(x, 0.0, 0).unwrap();
    assert_eq!(g.value(same), g.value(x));
}

proptest! {
    #[test]
    fn softmax_sums_to_one(v in prop::collection::vec(-50.0f64..50.0, 1..20)) {
        let p = softmax(&v);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn cross_entropy_non_negative(v in prop::collection::vec(-30.0f64..30.0, 8), t in 0usize..8) {
        let mut g = Graph::new();
        let l = g.constant(Tensor::new(vec![1, 8], v).unwrap());
        let ce = g.cross_entropy(l, &[t]).unwrap();
        prop_assert!(g.value(ce).item() >= 0.0);
    }

    #[test]
    fn matmul_matches_naive(m in 1usize..6, k in 1usize..6, n in 1usize..6, seed in any::<u64>()) {
        let a = rand_tensor(&[m, k], seed);
        let b = rand_tensor(&[k, n], seed ^ 1);
        let mut g = Graph::new();
        let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
        let c = g.matmul(va, vb).unwrap();
        let want = naive_matmul(&a, &b);
        for (x, y) in g.value(c).data().iter().zip(&want) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_matches_naive(t in 3usize..12, c in 1usize..4, k in 1usize..4, width in 1usize..4,
                          stride in 1usize..3, pad in 0usize..2, seed in any::<u64>()) {
        let x = rand_tensor(&[t, c], seed);
        let w = rand_tensor(&[k, c, width], seed ^ 7);
        let mut g = Graph::new();
        let (vx, vw) = (g.constant(x.clone()), g.constant(w.clone()));
        let y = g.conv1d(vx, vw, stride, pad).unwrap();
        let want = naive_conv(&x, &w, stride, pad);
        prop_assert_eq!(g.value(y).len(), want.len());
        for (a, b) in g.value(y).data().iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
