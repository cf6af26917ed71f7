use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check_coords, max_rel_err};
use super::*;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Six nested loops, zero padding, cross-correlation.
fn conv_reference(input: &Tensor, kernel: &Tensor, bias: &Tensor, same: bool) -> Tensor {
    let (cin, h, w) = input.dims3().unwrap();
    let [cout, _, kh, kw] = kernel.shape()[..] else { unreachable!() };
    let (ph, pw) = if same { (kh / 2, kw / 2) } else { (0, 0) };
    let (oh, ow) = if same { (h, w) } else { (h - kh + 1, w - kw + 1) };
    let mut out = vec![0.0; cout * oh * ow];
    for co in 0..cout {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = bias.data()[co];
                for ci in 0..cin {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = oy as isize + ky as isize - ph as isize;
                            let ix = ox as isize + kx as isize - pw as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            s += input.get(&[ci, iy as usize, ix as usize])
                                * kernel.get(&[co, ci, ky, kx]);
                        }
                    }
                }
                out[(co * oh + oy) * ow + ox] = s;
            }
        }
    }
    Tensor::new([cout, oh, ow], out).unwrap()
}

fn assert_close(a: &Tensor, b: &Tensor, tol: f64) {
    assert_eq!(a.shape(), b.shape());
    for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
        assert!((x - y).abs() <= tol, "element {i}: {x} vs {y}");
    }
}

fn conv_value(input: &Tensor, kernel: &Tensor, bias: &Tensor, padding: Padding) -> Tensor {
    let mut g = Graph::new();
    let (x, k, b) = (g.constant(input.clone()), g.constant(kernel.clone()), g.constant(bias.clone()));
    let y = g.conv2d(x, k, b, padding).unwrap();
    g.value(y).clone()
}

#[test]
fn conv_zero_input_gives_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let out = conv_value(
        &Tensor::zeros([1, 3, 3]),
        &random(&[1, 1, 3, 3], &mut rng),
        &Tensor::new([1], vec![0.25]).unwrap(),
        Padding::Same,
    );
    assert!(out.data().iter().all(|&v| v == 0.25));
}

#[test]
fn conv_scalar_multiply() {
    let out = conv_value(
        &Tensor::new([1, 1, 1], vec![2.0]).unwrap(),
        &Tensor::new([1, 1, 1, 1], vec![3.0]).unwrap(),
        &Tensor::zeros([1]),
        Padding::Same,
    );
    assert_eq!(out.data(), &[6.0]);
}

#[test]
fn conv_matches_loop_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let input = random(&[2, 8, 8], &mut rng);
    let kernel = random(&[4, 2, 3, 3], &mut rng);
    let bias = random(&[4], &mut rng);
    for (padding, same) in [(Padding::Same, true), (Padding::Valid, false)] {
        let fast = conv_value(&input, &kernel, &bias, padding);
        assert_close(&fast, &conv_reference(&input, &kernel, &bias, same), 1e-12);
    }
    let k5 = random(&[3, 2, 5, 3], &mut rng);
    let b3 = random(&[3], &mut rng);
    assert_close(
        &conv_value(&input, &k5, &b3, Padding::Same),
        &conv_reference(&input, &k5, &b3, true),
        1e-12,
    );
}

#[test]
fn conv_rejects_bad_shapes() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros([2, 4, 4]));
    let k = g.constant(Tensor::zeros([1, 3, 3, 3]));
    let b = g.constant(Tensor::zeros([1]));
    let err = g.conv2d(x, k, b, Padding::Same).unwrap_err();
    assert!(err.to_string().contains("2 channels"), "{err}");

    let k_even = g.constant(Tensor::zeros([1, 2, 2, 2]));
    assert!(g.conv2d(x, k_even, b, Padding::Same).is_err());
    assert!(g.conv2d(x, k_even, b, Padding::Valid).is_ok());
}

#[test]
fn maxpool_basic_and_ties() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new([1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = g.maxpool2d(x).unwrap();
    assert_eq!(g.value(y).data(), &[4.0]);

    let mut g = Graph::new();
    let x = g.leaf(Tensor::full([1, 4, 4], 7.0));
    let y = g.maxpool2d(x).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 7.0));
    let s = g.sum(y);
    let grads = g.backward(s).unwrap();
    let gx = grads.get(x).unwrap();
    // first (top-left) element of each window
    let expected: Vec<f64> = (0..16)
        .map(|i| if (i / 4) % 2 == 0 && (i % 4) % 2 == 0 { 1.0 } else { 0.0 })
        .collect();
    assert_eq!(gx.data(), &expected[..]);
}

#[test]
fn maxpool_matches_loop_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let input = random(&[1, 8, 8], &mut rng);
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let y = g.maxpool2d(x).unwrap();
    let mut expected = [0.0; 16];
    for oy in 0..4 {
        for ox in 0..4 {
            let mut m = f64::NEG_INFINITY;
            for dy in 0..2 {
                for dx in 0..2 {
                    m = m.max(input.get(&[0, 2 * oy + dy, 2 * ox + dx]));
                }
            }
            expected[oy * 4 + ox] = m;
        }
    }
    assert_eq!(g.value(y).data(), &expected[..]);
    let mut g = Graph::new();
    let odd = g.constant(Tensor::zeros([1, 3, 4]));
    assert!(g.maxpool2d(odd).is_err());
}

#[test]
fn upsample_replicates_and_sums_gradient() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new([1, 1, 1], vec![5.0]).unwrap());
    let y = g.upsample_nearest(x).unwrap();
    assert_eq!(g.value(y).data(), &[5.0; 4]);
    let s = g.sum(y);
    assert_eq!(g.backward(s).unwrap().get(x).unwrap().data(), &[4.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let input = random(&[3, 4, 4], &mut rng);
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let y = g.upsample_nearest(x).unwrap();
    let out = g.value(y);
    for c in 0..3 {
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(out.get(&[c, y, x]), input.get(&[c, y / 2, x / 2]));
            }
        }
    }
}

#[test]
fn concat_then_slice_roundtrip() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros([1, 2, 2]));
    let b = g.constant(Tensor::full([1, 2, 2], 1.0));
    let c = g.concat_channels(a, b).unwrap();
    let v = g.value(c);
    assert_eq!(v.shape(), &[2, 2, 2]);
    assert_eq!(v.data(), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    assert!(v.slice_channels(0, 1).unwrap().bit_eq(g.value(a)));
    assert!(v.slice_channels(1, 1).unwrap().bit_eq(g.value(b)));

    let d = g.constant(Tensor::zeros([1, 3, 2]));
    assert!(g.concat_channels(a, d).is_err());
}

#[test]
fn activations_pointwise() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new([3], vec![-1.0, 0.0, 2.0]).unwrap());
    let r = g.relu(x);
    assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
    let z = g.constant(Tensor::scalar(0.0));
    let s = g.sigmoid(z);
    assert_eq!(g.value(s).item(), Some(0.5));
    let l = g.linear(x);
    assert!(g.value(l).bit_eq(g.value(x)));
}

#[test]
fn softmax_uniform_and_stable() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full([4, 2, 2], 3.0));
    let s = g.softmax_channels(x).unwrap();
    assert!(g.value(s).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));

    let big = Tensor::new([2, 1, 1], vec![1000.0, 0.0]).unwrap();
    let x = g.constant(big);
    let s = g.softmax_channels(x).unwrap();
    let v = g.value(s).data();
    assert!(v.iter().all(|x| x.is_finite()));
    assert!((v[0] - 1.0).abs() < 1e-12 && v[1] < 1e-300);

    let one = g.constant(Tensor::zeros([1, 2, 2]));
    assert!(g.softmax_channels(one).is_err());
}

#[test]
fn backward_of_sum_is_ones() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::from_fn([2, 3], |i| i as f64));
    let s = g.sum(x);
    assert!(g.backward(s).unwrap().get(x).unwrap().data().iter().all(|&v| v == 1.0));
}

#[test]
fn backward_of_dot_is_other_operand() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new([3], vec![1.0, 2.0, 3.0]).unwrap());
    let w = g.constant(Tensor::new([3], vec![0.5, -1.0, 4.0]).unwrap());
    let p = g.mul(x, w).unwrap();
    let s = g.sum(p);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[0.5, -1.0, 4.0]);
    assert!(grads.get(w).is_none(), "constants get no gradient entry");
}

#[test]
fn backward_rejects_non_scalar_root() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::zeros([2]));
    let err = g.backward(x).unwrap_err();
    assert!(matches!(err, Error::Contract { op: "backward", .. }));
}

#[test]
fn unreachable_leaf_gets_zero_gradient() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::zeros([2]));
    let y = g.leaf(Tensor::full([2], 3.0));
    let s = g.sum(x);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(y).unwrap().data(), &[0.0, 0.0]);
}

#[test]
fn shared_node_accumulates() {
    // d/dx sum(x*x + x) = 2x + 1
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new([2], vec![1.5, -2.0]).unwrap());
    let sq = g.mul(x, x).unwrap();
    let t = g.add(sq, x).unwrap();
    let s = g.sum(t);
    assert_eq!(g.backward(s).unwrap().get(x).unwrap().data(), &[4.0, -3.0]);
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let logits = random(&[3, 4, 4], &mut rng);
    let labels = LabelMap::new(4, 4, (0..16).map(|i| (i % 3) as u8).collect()).unwrap();
    let f = |t: &Tensor| {
        let mut g = Graph::new();
        let x = g.constant(t.clone());
        let l = g.softmax_cross_entropy(x, &labels)?;
        Ok(g.value(l).item().unwrap())
    };
    let mut g = Graph::new();
    let x = g.leaf(logits.clone());
    let l = g.softmax_cross_entropy(x, &labels).unwrap();
    let grad = g.backward(l).unwrap().get(x).unwrap().clone();
    let idx: Vec<usize> = (0..48).collect();
    let checks = check_coords(f, &logits, &grad, &idx, 1e-5).unwrap();
    assert!(max_rel_err(&checks) <= 1e-6, "{checks:?}");

    let bad = LabelMap::filled(4, 4, 3);
    let mut g = Graph::new();
    let x = g.leaf(logits);
    assert!(g.softmax_cross_entropy(x, &bad).is_err());
}

#[test]
fn box_mean_matches_direct_windows() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let input = random(&[2, 6, 7], &mut rng);
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let y = g.box_mean(x, 3).unwrap();
    let out = g.value(y);
    assert_eq!(out.shape(), &[2, 4, 5]);
    for c in 0..2 {
        for oy in 0..4 {
            for ox in 0..5 {
                let mut s = 0.0;
                for dy in 0..3 {
                    for dx in 0..3 {
                        s += input.get(&[c, oy + dy, ox + dx]);
                    }
                }
                assert!((out.get(&[c, oy, ox]) - s / 9.0).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn requires_grad_propagates_only_from_leaves() {
    let mut g = Graph::new();
    let c = g.constant(Tensor::zeros([2]));
    let d = g.relu(c);
    assert!(!g.requires_grad(d));
    let l = g.leaf(Tensor::zeros([2]));
    let e = g.add(d, l).unwrap();
    assert!(g.requires_grad(e));
}
