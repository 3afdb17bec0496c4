use super::*;
use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn positive(shape: &[usize], seed: u64) -> Tensor {
    rand_tensor(shape, seed).map(|x| 0.5 + x.abs())
}

const TOL: f64 = 1e-5;
const DELTA: f64 = 1e-4;

#[test]
fn log2_derivative() {
    let tape = Tape::new();
    let x = tape.var(Tensor::scalar(1.0));
    let y = x.add_scalar(1.0).log2();
    let g = tape.backward(y).unwrap();
    let d = g.wrt(x).unwrap().data[0];
    assert_relative_eq!(d, 1.0 / (2.0 * std::f64::consts::LN_2), epsilon = 1e-15);
    assert_relative_eq!(d, 0.7213, epsilon = 1e-4);
}

#[test]
fn trace_power_gradient_is_twice_w() {
    let (wr, wi) = (rand_tensor(&[3, 2], 1), rand_tensor(&[3, 2], 2));
    let tape = Tape::new();
    let w = CVar::new(tape.var(wr.clone()), tape.var(wi.clone()));
    let tr = w.bmm(false, w.conj(), true).re.diag().sum();
    let g = tape.backward(tr).unwrap();
    for (a, b) in g.wrt(w.re).unwrap().data.iter().zip(&wr.data) {
        assert_relative_eq!(*a, 2.0 * b, epsilon = 1e-14);
    }
    for (a, b) in g.wrt(w.im).unwrap().data.iter().zip(&wi.data) {
        assert_relative_eq!(*a, 2.0 * b, epsilon = 1e-14);
    }
}

#[test]
fn leaky_relu_slopes() {
    let tape = Tape::new();
    let x = tape.var(Tensor::new(vec![2], vec![-2.0, 3.0]).unwrap());
    let y = x.leaky_relu(0.01).sum();
    let g = tape.backward(y).unwrap();
    assert_eq!(g.wrt(x).unwrap().data, vec![0.01, 1.0]);
    assert_relative_eq!(y.item(), 2.98, epsilon = 1e-15);
}

#[test]
fn quadratic_form_is_exact() {
    let a = rand_tensor(&[4, 4], 3);
    let x = rand_tensor(&[4], 4);
    let err = gradcheck(
        |t, v| {
            let a = t.constant(a.clone());
            let row = v[0].reshape(&[1, 4]);
            (row.linear(a) * row).sum()
        },
        &[x],
        DELTA,
    );
    assert!(err < 1e-8, "{err}");
}

#[test]
fn constant_function_has_zero_gradient() {
    let x = rand_tensor(&[3], 5);
    let tape = Tape::new();
    let v = tape.var(x.clone());
    let out = v.scale(0.0).sum().add_scalar(4.0);
    let g = tape.backward(out).unwrap();
    assert!(g.wrt(v).unwrap().data.iter().all(|&d| d == 0.0));
    assert_eq!(gradcheck(|_, v| v[0].scale(0.0).sum(), &[x], DELTA), 0.0);
}

#[test]
fn constants_receive_no_gradient() {
    let tape = Tape::new();
    let c = tape.constant(Tensor::scalar(2.0));
    let x = tape.var(Tensor::scalar(3.0));
    let g = tape.backward(c * x).unwrap();
    assert!(g.wrt(c).is_none());
    assert_eq!(g.wrt(x).unwrap().data, vec![2.0]);
}

#[test]
fn shape_errors() {
    let tape = Tape::new();
    let a = tape.var(Tensor::zeros(&[2, 3]));
    let b = tape.var(Tensor::zeros(&[3, 2]));
    assert!(matches!(a.try_add(b), Err(Error::ShapeMismatch(_))));
    assert!(a.try_bmm(false, a, false).is_err());
    assert!(a.try_linear(a).is_err());
    assert!(a.try_reshape(&[5]).is_err());
    assert!(tape.backward(a).is_err());
    assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
}

#[test]
fn reused_node_accumulates() {
    let tape = Tape::new();
    let x = tape.var(Tensor::scalar(3.0));
    let y = x * x + x;
    let g = tape.backward(y).unwrap();
    assert_eq!(g.wrt(x).unwrap().data, vec![7.0]);
}

#[test]
fn backward_touches_each_node_once() {
    let tape = Tape::new();
    let mut x = tape.var(Tensor::scalar(1.0));
    let x0 = x;
    for _ in 0..1000 {
        x = x.scale(1.001);
    }
    assert_eq!(tape.len(), 1001);
    let g = tape.backward(x).unwrap();
    assert_relative_eq!(
        g.wrt(x0).unwrap().data[0],
        1.001f64.powi(1000),
        max_relative = 1e-12
    );
}

fn check_unary(f: impl for<'t> Fn(Var<'t>) -> Var<'t>, x: Tensor) {
    let err = gradcheck(|_, v| f(v[0]).square().sum(), &[x], DELTA);
    assert!(err < TOL, "{err}");
}

#[test]
fn unary_ops_gradcheck() {
    let x = positive(&[2, 3], 10);
    check_unary(|v| v.recip(), x.clone());
    check_unary(|v| v.log2(), x.clone());
    check_unary(|v| v.sqrt(), x.clone());
    check_unary(|v| v.powi(3), rand_tensor(&[2, 3], 11));
    check_unary(|v| v.scale(-2.5).add_scalar(0.3), rand_tensor(&[4], 12));
    check_unary(|v| v.leaky_relu(0.01), rand_tensor(&[5], 13));
    check_unary(|v| v.sum_axis(1), rand_tensor(&[2, 3, 2], 14));
    check_unary(|v| v.mean_axis(0), rand_tensor(&[2, 3, 2], 15));
    check_unary(|v| v.diag(), rand_tensor(&[2, 3, 3], 16));
    check_unary(|v| v.select_last(1), rand_tensor(&[2, 3], 17));
    check_unary(|v| v.reshape(&[6]), rand_tensor(&[2, 3], 18));
    check_unary(|v| v.mean(), rand_tensor(&[2, 3], 19));
}

#[test]
fn binary_ops_gradcheck_with_broadcast() {
    let shapes: [(&[usize], &[usize]); 4] = [
        (&[2, 3], &[2, 3]),
        (&[2, 3], &[3]),
        (&[2, 1, 3], &[4, 1]),
        (&[2, 2], &[]),
    ];
    for (i, (sa, sb)) in shapes.iter().enumerate() {
        let (a, b) = (rand_tensor(sa, 20 + i as u64), positive(sb, 30 + i as u64));
        for op in 0..3 {
            let err = gradcheck(
                |_, v| {
                    let r = match op {
                        0 => v[0] + v[1],
                        1 => v[0] - v[1],
                        _ => v[0] * v[1],
                    };
                    r.square().sum()
                },
                &[a.clone(), b.clone()],
                DELTA,
            );
            assert!(err < TOL, "op {op} shapes {sa:?} {sb:?}: {err}");
        }
    }
}

#[test]
fn matmul_gradcheck() {
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let sa: [usize; 3] = if ta { [2, 4, 3] } else { [2, 3, 4] };
        let sb: [usize; 3] = if tb { [2, 5, 4] } else { [2, 4, 5] };
        let err = gradcheck(
            |_, v| v[0].bmm(ta, v[1], tb).square().sum(),
            &[rand_tensor(&sa, 40), rand_tensor(&sb, 41)],
            DELTA,
        );
        assert!(err < TOL, "ta={ta} tb={tb}: {err}");
    }
    let err = gradcheck(
        |_, v| v[0].linear(v[1]).leaky_relu(0.1).square().sum(),
        &[rand_tensor(&[2, 3, 4], 42), rand_tensor(&[4, 5], 43)],
        DELTA,
    );
    assert!(err < TOL, "{err}");
}

#[test]
fn complex_ops_gradcheck() {
    let shape = [3, 2];
    let pts: Vec<Tensor> = (0..4).map(|i| rand_tensor(&shape, 50 + i)).collect();
    let err = gradcheck(
        |_, v| {
            let a = CVar::new(v[0], v[1]);
            let b = CVar::new(v[2], v[3]);
            let c = a.cmul(b.conj()).add(a.scale(0.5)).sub(b);
            let m = a.bmm(true, b, false);
            c.abs2().sum() + m.abs2().sum() + c.sum_axis(0).re.sum()
        },
        &pts,
        DELTA,
    );
    assert!(err < TOL, "{err}");
}

#[test]
fn linear_matches_naive() {
    let x = rand_tensor(&[2, 3], 60);
    let w = rand_tensor(&[3, 2], 61);
    let tape = Tape::new();
    let y = tape.var(x.clone()).linear(tape.var(w.clone())).value();
    for r in 0..2 {
        for c in 0..2 {
            let want: f64 = (0..3).map(|k| x.data[r * 3 + k] * w.data[k * 2 + c]).sum();
            assert_relative_eq!(y.data[r * 2 + c], want, epsilon = 1e-14);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn random_chains_gradcheck(seed in 0u64..1_000_000, rows in 1usize..4, cols in 1usize..4) {
        let a = rand_tensor(&[rows, cols], seed);
        let b = positive(&[cols], seed + 1);
        let err = gradcheck(
            |_, v| {
                let t = (v[0] * v[1]).powi(3) + v[1].sqrt();
                t.sum_axis(0).powi(2).add_scalar(1.0).log2().sum()
            },
            &[a, b],
            // Cubes of products have large third derivatives at some points;
            // the smaller step keeps the O(δ²) truncation well under TOL.
            DELTA / 10.0,
        );
        prop_assert!(err < TOL, "{}", err);
    }
}
