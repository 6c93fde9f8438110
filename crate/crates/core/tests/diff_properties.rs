use koopflow::diff::{forward_tangent, reverse_gradient, Scalar, Tangent, Tape};
use proptest::prelude::*;

const PRIMITIVES: usize = 14;

/// Binary program exercising one primitive. `x` is bounded away from zero
/// and `y` is positive, so every primitive is smooth at the inputs.
fn primitive<S: Scalar>(op: usize, x: S, y: S) -> S {
    match op {
        0 => x + y,
        1 => x - y,
        2 => x * y,
        3 => x / y,
        4 => -x * y,
        5 => x.exp() * y,
        6 => y.ln() * x,
        7 => x.tanh() + y,
        8 => x.elu() * y,
        9 => x.elu_prime() * y,
        10 => x.powi(3) - y.powi(2),
        11 => S::sum_products(x, [(x, y), (y, y), (x, x)].into_iter()),
        12 => (x + 0.5) * y - 1.5,
        _ => (x * 2.5 - y) * 0.25,
    }
}

fn second<S: Scalar>(x: S, y: S) -> S {
    primitive(5, x, y) + primitive(10, x, y)
}

fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn input() -> impl Strategy<Value = f64> {
    prop_oneof![-2.0..-0.05, 0.05..2.0f64]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn reverse_forward_and_differences_agree(op in 0..PRIMITIVES, x in input(), y in 0.2..2.0f64) {
        let (value, grad) = reverse_gradient(&[x, y], |_, v| primitive(op, v[0], v[1])).unwrap();
        prop_assert_eq!(value, primitive(op, x, y));
        let h = 1e-6;
        for (k, direction) in [[1.0, 0.0], [0.0, 1.0]].iter().enumerate() {
            let (_, jvp) = forward_tangent(&[x, y], direction, |t| vec![primitive(op, t[0], t[1])]).unwrap();
            let f = |s: f64| primitive(op, x + s * direction[0], y + s * direction[1]);
            let fd = (f(h) - f(-h)) / (2.0 * h);
            prop_assert!(relative_gap(grad[k], jvp[0]) < 1e-12, "op {op}: reverse {} forward {}", grad[k], jvp[0]);
            prop_assert!(relative_gap(grad[k], fd) < 1e-4, "op {op}: reverse {} difference {fd}", grad[k]);
        }
    }

    #[test]
    fn gradient_is_linear(alpha in -3.0..3.0f64, x in input(), y in 0.2..2.0f64) {
        let (_, gf) = reverse_gradient(&[x, y], |_, v| primitive(3, v[0], v[1]).tanh()).unwrap();
        let (_, gg) = reverse_gradient(&[x, y], |_, v| second(v[0], v[1])).unwrap();
        let (_, gs) = reverse_gradient(&[x, y], |_, v| primitive(3, v[0], v[1]).tanh() * alpha + second(v[0], v[1])).unwrap();
        for k in 0..2 {
            let expected = alpha * gf[k] + gg[k];
            prop_assert!((gs[k] - expected).abs() <= 1e-13 * expected.abs().max(1.0));
        }
    }
}

/// `½ xᵀ H x + bᵀ x` for symmetric `H`.
fn quadratic<S: Scalar>(h: &[f64], b: &[f64], x: &[S]) -> S {
    let n = x.len();
    let zero = x[0].constant_like(0.0);
    let mut acc = zero;
    for i in 0..n {
        let row = S::sum_products(zero, (0..n).map(|j| (x[j], x[j].constant_like(0.5 * h[i * n + j]))));
        acc = acc + row * x[i] + x[i] * b[i];
    }
    acc
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn nested_modes_give_hessian_products(
        raw in prop::collection::vec(-2.0..2.0f64, 9),
        b in prop::collection::vec(-1.0..1.0f64, 3),
        x in prop::collection::vec(-1.0..1.0f64, 3),
        v in prop::collection::vec(-1.0..1.0f64, 3),
    ) {
        let h: Vec<f64> = (0..9).map(|k| raw[k] + raw[(k % 3) * 3 + k / 3]).collect();
        // Reverse over forward: gradient of the directional derivative.
        let (_, hv) = reverse_gradient(&x, |tape: &Tape, vars| {
            let seeded: Vec<Tangent<_>> = vars.iter().zip(&v).map(|(&p, &d)| Tangent::new(p, tape.constant(d))).collect();
            quadratic(&h, &b, &seeded).tangent
        })
        .unwrap();
        // Second-order differences of the value.
        let step = 1e-3;
        let f = |s: f64, k: usize, t: f64| {
            let y: Vec<f64> = (0..3).map(|i| x[i] + s * v[i] + if i == k { t } else { 0.0 }).collect();
            quadratic(&h, &b, &y)
        };
        for k in 0..3 {
            let fd = (f(step, k, step) - f(step, k, -step) - f(-step, k, step) + f(-step, k, -step)) / (4.0 * step * step);
            let exact: f64 = (0..3).map(|j| h[k * 3 + j] * v[j]).sum();
            prop_assert!((hv[k] - fd).abs() <= 1e-3 * hv[k].abs().max(1e-3), "{} vs {fd}", hv[k]);
            prop_assert!((hv[k] - exact).abs() <= 1e-12 * exact.abs().max(1.0));
        }
    }
}
