use gcblane_core::autodiff::{grad_check, grad_check_many, Padding, Tape, Tensor, Var, DEFAULT_EPS, DEFAULT_TOL};
use gcblane_core::train::cross_entropy;
use gcblane_core::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_f64(shape, &data).unwrap()
}

/// Values in `±[0.1, 1]`, away from the kinks of relu, clamp and |x|.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    random(shape, 0.1, 1.0, seed).map(|v| v * if (v * 1e4) as i64 % 2 == 0 { 1.0 } else { -1.0 })
}

/// Weighted sum with fixed random weights, so every output coordinate
/// contributes a distinct amount to the scalar.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let w = random(tape.value(y).shape(), -1.0, 1.0, seed ^ 0xABCD);
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

fn check1(x: Tensor<f64>, f: impl Fn(&mut Tape<f64>, Var) -> Result<Var>) {
    let r = grad_check(|t, x| { let y = f(t, x)?; project(t, y, 1) }, &x, DEFAULT_EPS, DEFAULT_TOL).unwrap();
    assert!(r.passed, "{r:?}");
}

fn check2(a: Tensor<f64>, b: Tensor<f64>, f: impl Fn(&mut Tape<f64>, Var, Var) -> Result<Var>) {
    let r = grad_check_many(|t, v| { let y = f(t, v[0], v[1])?; project(t, y, 2) }, &[a, b], DEFAULT_EPS, DEFAULT_TOL)
        .unwrap();
    assert!(r.passed, "{r:?}");
}

fn shape3() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..=3, 3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn elementwise_binary_ops_with_broadcasting(shape in shape3(), axis in 0usize..3, seed in 0u64..1000) {
        let a = random(&shape, -1.0, 1.0, seed);
        let mut bshape = shape.clone();
        bshape[axis] = 1;
        let b = random(&bshape, 0.5, 2.0, seed + 1);
        check2(a.clone(), b.clone(), |t, x, y| t.add(x, y));
        check2(a.clone(), b.clone(), |t, x, y| t.sub(x, y));
        check2(a.clone(), b.clone(), |t, x, y| t.mul(x, y));
        check2(a.clone(), b.clone(), |t, x, y| t.div(x, y));
        check2(b.clone(), a.clone(), |t, x, y| t.div(y, x));
        check2(b, a, |t, x, y| t.sub(x, y));
    }

    #[test]
    fn unary_ops(shape in shape3(), seed in 0u64..1000) {
        let x = random(&shape, -1.0, 1.0, seed);
        let pos = random(&shape, 0.5, 2.0, seed);
        let nz = away_from_zero(&shape, seed);
        check1(x.clone(), |t, x| Ok(t.scale(x, -2.5)));
        check1(x.clone(), |t, x| Ok(t.neg(x)));
        check1(x.clone(), |t, x| Ok(t.add_scalar(x, 0.3)));
        check1(x.clone(), |t, x| Ok(t.exp(x)));
        check1(x.clone(), |t, x| Ok(t.tanh(x)));
        check1(x.clone(), |t, x| Ok(t.sigmoid(x)));
        check1(x, |t, x| t.square(x));
        check1(pos.clone(), |t, x| Ok(t.log(x)));
        check1(pos, |t, x| Ok(t.sqrt(x)));
        check1(nz.clone(), |t, x| Ok(t.relu(x)));
        check1(nz.clone(), |t, x| Ok(t.recip(x)));
        check1(nz, |t, x| Ok(t.clamp(x, -0.05, 0.05)));
    }

    #[test]
    fn broadcast_to(shape in shape3(), axis in 0usize..3, seed in 0u64..1000) {
        let mut small = shape.clone();
        small[axis] = 1;
        let target = shape.clone();
        check1(random(&small, -1.0, 1.0, seed), move |t, x| t.broadcast_to(x, &target));
    }

    #[test]
    fn matrix_products(m in 1usize..4, k in 1usize..4, n in 1usize..4, batch in 1usize..3, seed in 0u64..1000) {
        check2(random(&[m, k], -1.0, 1.0, seed), random(&[k, n], -1.0, 1.0, seed + 1), |t, a, b| t.matmul(a, b));
        check2(random(&[batch, m, k], -1.0, 1.0, seed), random(&[k, n], -1.0, 1.0, seed + 1), |t, a, b| t.matmul(a, b));
        check2(random(&[batch, m, k], -1.0, 1.0, seed), random(&[batch, k, n], -1.0, 1.0, seed + 1), |t, a, b| t.matmul(a, b));
        check2(random(&[batch, k, m], -1.0, 1.0, seed), random(&[batch, n, k], -1.0, 1.0, seed + 1), |t, a, b| t.matmul_t(a, b, true, true));
        check2(random(&[batch, k, m], -1.0, 1.0, seed), random(&[batch, k, n], -1.0, 1.0, seed + 1), |t, a, b| t.matmul_t(a, b, true, false));
        check2(random(&[batch, m, k], -1.0, 1.0, seed), random(&[n, k], -1.0, 1.0, seed + 1), |t, a, b| t.matmul_t(a, b, false, true));
    }

    #[test]
    fn structural_ops(shape in shape3(), axis in 0usize..3, seed in 0u64..1000) {
        let x = random(&shape, -1.0, 1.0, seed);
        let n: usize = shape.iter().product();
        check1(x.clone(), move |t, x| t.reshape(x, &[n]));
        check1(x.clone(), |t, x| t.permute(x, &[2, 0, 1]));
        check1(x.clone(), |t, x| t.transpose(x));
        let other = random(&shape, -1.0, 1.0, seed + 7);
        check2(x.clone(), other, move |t, a, b| t.concat(&[a, b, a], axis));
        let len = shape[axis];
        let start = len / 2;
        check1(x.clone(), move |t, x| {
            let a = t.slice(x, axis, start, len - start)?;
            let b = t.slice(x, axis, 0, len.min(start + 1))?;
            let a = t.sum(a);
            let b = t.sum(b);
            t.add(a, b)
        });
    }

    #[test]
    fn reductions(shape in shape3(), axis in 0usize..3, keep in any::<bool>(), seed in 0u64..1000) {
        let x = random(&shape, -1.0, 1.0, seed);
        check1(x.clone(), move |t, x| t.sum_axis(x, axis, keep));
        check1(x.clone(), move |t, x| t.mean_axis(x, axis, keep));
        check1(x.clone(), |t, x| Ok(t.sum(x)));
        check1(x.clone(), |t, x| Ok(t.mean(x)));
        check1(x, move |t, x| t.softmax(x, axis));
        // distinct values so the arg-max is stable under perturbation
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let mut perm: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        check1(Tensor::from_f64(&shape, &perm).unwrap(), move |t, x| t.max_axis(x, axis));
    }

    #[test]
    fn convolution_including_even_kernels(b in 1usize..3, l in 1usize..7, cin in 1usize..3, cout in 1usize..3, k in 1usize..6, seed in 0u64..1000) {
        let x = random(&[b, l, cin], -1.0, 1.0, seed);
        let w = random(&[k, cin, cout], -1.0, 1.0, seed + 1);
        check2(x.clone(), w.clone(), |t, x, w| t.conv1d_same(x, w));

        // oracle: explicit cross-correlation with the extra pad cell on the right
        let mut tape = Tape::new();
        let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
        let y = tape.conv1d_same(xv, wv).unwrap();
        let got = tape.value(y).to_f64_vec();
        let left = (k - 1) / 2;
        for bi in 0..b {
            for i in 0..l {
                for o in 0..cout {
                    let mut s = 0.0;
                    for tap in 0..k {
                        let p = i as isize + tap as isize - left as isize;
                        if p < 0 || p >= l as isize {
                            continue;
                        }
                        for c in 0..cin {
                            s += x.data()[(bi * l + p as usize) * cin + c] * w.data()[(tap * cin + c) * cout + o];
                        }
                    }
                    prop_assert!((got[(bi * l + i) * cout + o] - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn max_pooling_variants(b in 1usize..3, l in 2usize..9, c in 1usize..3, pool in 1usize..4, stride in 1usize..3, same in any::<bool>(), seed in 0u64..1000) {
        let padding = if same { Padding::Same } else { Padding::Valid };
        prop_assume!(padding.pool_geometry(l, pool, stride).is_some());
        let n = b * l * c;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - 0.3).collect();
        for i in (1..n).rev() {
            vals.swap(i, rng.random_range(0..=i));
        }
        let x = Tensor::from_f64(&[b, l, c], &vals).unwrap();
        check1(x.clone(), move |t, x| t.max_pool1d(x, pool, stride, padding));

        // oracle over the unpadded cells of each window
        let (out, left) = padding.pool_geometry(l, pool, stride).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = tape.max_pool1d(xv, pool, stride, padding).unwrap();
        prop_assert_eq!(tape.value(y).shape(), &[b, out, c][..]);
        let got = tape.value(y).to_f64_vec();
        for bi in 0..b {
            for o in 0..out {
                for ch in 0..c {
                    let lo = (o * stride) as isize - left as isize;
                    let m = (lo..lo + pool as isize)
                        .filter(|&p| p >= 0 && p < l as isize)
                        .map(|p| x.data()[(bi * l + p as usize) * c + ch])
                        .fold(f64::NEG_INFINITY, f64::max);
                    prop_assert_eq!(got[(bi * out + o) * c + ch], m);
                }
            }
        }
    }

    #[test]
    fn softmax_is_a_distribution_and_shift_invariant(shape in shape3(), axis in 0usize..3, shift in -50.0f64..50.0, seed in 0u64..1000) {
        let x = random(&shape, -30.0, 30.0, seed);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let p = tape.softmax(xv, axis).unwrap();
        let xs = tape.constant(x.map(|v| v + shift));
        let q = tape.softmax(xs, axis).unwrap();
        let s = tape.sum_axis(p, axis, false).unwrap();
        prop_assert!(tape.value(p).data().iter().all(|&v| v >= 0.0));
        prop_assert!(tape.value(s).data().iter().all(|&v| (v - 1.0).abs() < 1e-6));
        for (a, b) in tape.value(p).data().iter().zip(tape.value(q).data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_cross_entropy_gradient_is_prediction_minus_label(rows in 1usize..6, seed in 0u64..1000) {
        let logits = random(&[rows, 2], -3.0, 3.0, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<f64> = (0..rows).flat_map(|_| if rng.random_bool(0.5) { [0.0, 1.0] } else { [1.0, 0.0] }).collect();
        let mut tape = Tape::new();
        let z = tape.variable(logits);
        let p = tape.softmax(z, 1).unwrap();
        let y = tape.constant(Tensor::from_f64(&[rows, 2], &labels).unwrap());
        let loss = cross_entropy(&mut tape, p, y).unwrap();
        let g = tape.backward(loss).unwrap();
        let grad = g.get(z).unwrap().to_f64_vec();
        let pv = tape.value(p).to_f64_vec();
        for i in 0..2 * rows {
            prop_assert!((grad[i] - (pv[i] - labels[i]) / rows as f64).abs() < 1e-6);
        }
    }
}

#[test]
fn diamond_graph_sums_both_paths() {
    // y = x·x + exp(x) through a shared x: dy/dx = 2x + exp(x)
    let x0 = Tensor::<f64>::from_f64(&[3], &[0.2, -1.0, 1.5]).unwrap();
    let mut tape = Tape::new();
    let x = tape.variable(x0.clone());
    let a = tape.mul(x, x).unwrap();
    let b = tape.exp(x);
    let s = tape.add(a, b).unwrap();
    let loss = tape.sum(s);
    let g = tape.backward(loss).unwrap();
    for (gv, xv) in g.get(x).unwrap().data().iter().zip(x0.data()) {
        assert!((gv - (2.0 * xv + xv.exp())).abs() < 1e-14);
    }
}

#[test]
fn primitive_examples() {
    let mut tape = Tape::<f64>::new();
    let z = tape.constant(Tensor::zeros(&[3]));
    let p = tape.softmax(z, 0).unwrap();
    assert!(tape.value(p).data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));

    let x = tape.variable(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
    let sq = tape.mul(x, x).unwrap();
    let l = tape.sum(sq);
    let g = tape.backward(l).unwrap();
    assert_eq!(g.get(x).unwrap().to_f64_vec(), vec![2.0, 4.0]);

    let x = tape.constant(random(&[1, 101, 4], -1.0, 1.0, 3));
    for k in [1, 2, 4, 11] {
        let w = tape.constant(random(&[k, 4, 3], -1.0, 1.0, k as u64));
        let y = tape.conv1d_same(x, w).unwrap();
        assert_eq!(tape.shape(y), &[1, 101, 3]);
    }
}

#[test]
fn gradient_check_oracle_examples() {
    let x = random(&[4, 3], -1.0, 1.0, 9);
    let r = grad_check(|t, x| { let s = t.square(x)?; Ok(t.sum(s)) }, &x, DEFAULT_EPS, DEFAULT_TOL).unwrap();
    assert!(r.max_rel_error < 1e-8, "{r:?}");
    let r = grad_check(
        |t, x| {
            let p = t.softmax(x, 1)?;
            let l = t.log(p);
            project(t, l, 4)
        },
        &x,
        DEFAULT_EPS,
        DEFAULT_TOL,
    )
    .unwrap();
    assert!(r.passed, "{r:?}");
}

#[test]
fn single_precision_tape_agrees_with_double() {
    let x = random(&[2, 5, 3], -1.0, 1.0, 11);
    let w = random(&[3, 3, 2], -1.0, 1.0, 12);
    let run64 = {
        let mut t = Tape::<f64>::new();
        let (a, b) = (t.variable(x.clone()), t.constant(w.clone()));
        let y = t.conv1d_same(a, b).unwrap();
        let y = t.tanh(y);
        let l = t.sum(y);
        t.backward(l).unwrap().get(a).unwrap().to_f64_vec()
    };
    let run32 = {
        let mut t = Tape::<f32>::new();
        let (a, b) = (t.variable(x.cast()), t.constant(w.cast()));
        let y = t.conv1d_same(a, b).unwrap();
        let y = t.tanh(y);
        let l = t.sum(y);
        t.backward(l).unwrap().get(a).unwrap().to_f64_vec()
    };
    for (a, b) in run64.iter().zip(&run32) {
        assert!((a - b).abs() < 1e-5);
    }
}
