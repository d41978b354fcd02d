//! Minimal reverse-mode differentiation over dense `f64` arrays.
//!
//! A [`Tape`] records a closed library of operations. [`Tape::backward`]
//! returns exact adjoints; [`Tape::grad_graph`] records the adjoints as new
//! nodes so that quantities defined through gradients (span marginals of a
//! log-partition function, say) can themselves be differentiated.

mod backward;
mod check;
mod graph;
mod tape;

pub use backward::{Adjoints, GradientMap};
pub use check::{grad_check, relative_error, GradCheckOptions, GradCheckReport};
pub use tape::{AdjointFault, Tape, Var};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AdError {
    #[error("backward requires a scalar output, got {elements} elements")]
    NonScalarOutput { elements: usize },
    #[error("node {node} is not recorded on this tape")]
    ForeignNode { node: usize },
    #[error("direction has {got} entries, expected {expected}")]
    DirectionMismatch { expected: usize, got: usize },
    #[error("function value is not finite when perturbing coordinate {coordinate}")]
    NonFiniteValue { coordinate: usize },
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn square_derivative() {
        let mut t = Tape::new();
        let x = t.param("x", vec![3.0], &[]);
        let y = t.mul(x, x);
        let g = t.gradients(y).unwrap();
        assert_eq!(g.get("x").unwrap(), &[6.0]);
    }

    #[test]
    fn symmetric_softmax_gradient() {
        let mut t = Tape::new();
        let x = t.param("x", vec![0.0], &[]);
        let y = t.param("y", vec![0.0], &[]);
        let xy = t.concat(&[x, y]);
        let lse = t.logsumexp(xy, 0);
        let g = t.gradients(lse).unwrap();
        assert!(close(g.get("x").unwrap()[0], 0.5, 1e-15));
        assert!(close(g.get("y").unwrap()[0], 0.5, 1e-15));
        assert!(close(t.scalar_value(lse), 2f64.ln(), 1e-15));
    }

    #[test]
    fn two_layer_network_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let (d_in, d_hid) = (4, 5);
        let n_params = d_hid * d_in + d_hid + d_hid;
        let point: Vec<f64> = (0..n_params).map(|_| rng.random_range(-1.0..1.0)).collect();
        let input: Vec<f64> = (0..d_in).map(|_| rng.random_range(-1.0..1.0)).collect();
        let build = |p: &[f64], t: &mut Tape| {
            let w1 = t.param("w1", p[..d_hid * d_in].to_vec(), &[d_hid, d_in]);
            let b1 = t.param("b1", p[d_hid * d_in..d_hid * d_in + d_hid].to_vec(), &[d_hid]);
            let w2 = t.param("w2", p[d_hid * d_in + d_hid..].to_vec(), &[d_hid]);
            let x = t.constant(input.clone(), &[d_in]);
            let h = t.affine(w1, x, b1);
            let h = t.tanh(h);
            t.dot(w2, h)
        };
        let mut t = Tape::new();
        let out = build(&point, &mut t);
        let g = t.gradients(out).unwrap();
        let analytic: Vec<f64> =
            ["w1", "b1", "w2"].iter().flat_map(|n| g.get(n).unwrap().to_vec()).collect();
        let report = grad_check(
            |p| {
                let mut t = Tape::new();
                let out = build(p, &mut t);
                t.scalar_value(out)
            },
            &point,
            &analytic,
            &[],
            &GradCheckOptions { floor: 1e-3, ..Default::default() },
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-6, "{:?}", report);
    }

    #[test]
    fn directional_derivative_of_cube() {
        let mut t = Tape::new();
        let x = t.param("x", vec![2.0], &[]);
        let xx = t.mul(x, x);
        let y = t.mul(xx, x);
        let (scalar, grads) = t.directional_grad(y, &[x], &[1.0]).unwrap();
        assert!(close(scalar, 12.0, 1e-12));
        assert!(close(grads.get("x").unwrap()[0], 12.0, 1e-12));
    }

    #[test]
    fn zero_direction_gives_zero() {
        let mut t = Tape::new();
        let x = t.param("x", vec![2.0, -1.0], &[2]);
        let e = t.exp(x);
        let y = t.sum(e);
        let (scalar, grads) = t.directional_grad(y, &[x], &[0.0]).unwrap();
        assert_eq!(scalar, 0.0);
        assert!(grads.get("x").unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn direction_length_is_checked() {
        let mut t = Tape::new();
        let x = t.param("x", vec![1.0], &[]);
        let y = t.exp(x);
        assert_eq!(
            t.directional_grad(y, &[x], &[1.0, 2.0]).unwrap_err(),
            AdError::DirectionMismatch { expected: 1, got: 2 }
        );
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let mut t = Tape::new();
        let x = t.param("x", vec![1.0, 2.0], &[2]);
        let y = t.exp(x);
        assert_eq!(t.backward(y).unwrap_err(), AdError::NonScalarOutput { elements: 2 });
    }

    #[test]
    fn foreign_node_is_rejected() {
        let mut a = Tape::new();
        let x = a.scalar(1.0);
        let mut b = Tape::new();
        b.scalar(1.0);
        b.scalar(2.0);
        assert!(matches!(b.backward(x), Err(AdError::ForeignNode { .. })));
    }

    #[test]
    fn repeated_backward_is_identical() {
        let mut t = Tape::new();
        let x = t.param("x", vec![0.3, -0.2, 0.9], &[3]);
        let s = t.sigmoid(x);
        let l = t.logsumexp(s, 0);
        assert_eq!(t.gradients(l).unwrap(), t.gradients(l).unwrap());
    }

    #[test]
    fn unused_parameters_get_zero_entries() {
        let mut t = Tape::new();
        let x = t.param("x", vec![1.0], &[]);
        t.param("unused", vec![1.0, 2.0], &[2]);
        let y = t.exp(x);
        let g = t.gradients(y).unwrap();
        assert_eq!(g.get("unused").unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn quadratic_form_is_exact() {
        let a = [[2.0, 0.5], [0.5, 1.0]];
        let f = |x: &[f64]| {
            (0..2).map(|i| (0..2).map(|j| x[i] * a[i][j] * x[j]).sum::<f64>()).sum::<f64>()
        };
        let point = [0.7, -1.3];
        let analytic: Vec<f64> =
            (0..2).map(|i| 2.0 * (0..2).map(|j| a[i][j] * point[j]).sum::<f64>()).collect();
        let report = grad_check(f, &point, &analytic, &[], &GradCheckOptions::default()).unwrap();
        assert!(report.max_relative_error < 1e-8);
    }

    #[test]
    fn non_finite_values_name_the_coordinate() {
        let err = grad_check(
            |x| if x[1] > 1.0 { f64::NAN } else { x[0] },
            &[0.0, 1.0],
            &[1.0, 0.0],
            &[],
            &GradCheckOptions::default(),
        )
        .unwrap_err();
        assert_eq!(err, AdError::NonFiniteValue { coordinate: 1 });
    }

    #[test]
    fn logsumexp_of_all_negative_infinity() {
        let mut t = Tape::new();
        let x = t.param("x", vec![f64::NEG_INFINITY; 3], &[3]);
        let l = t.logsumexp(x, 0);
        assert_eq!(t.scalar_value(l), f64::NEG_INFINITY);
        assert!(t.gradients(l).unwrap().get("x").unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn cosine_of_zero_vector_is_zero() {
        let mut t = Tape::new();
        let a = t.param("a", vec![0.0, 0.0], &[2]);
        let b = t.param("b", vec![1.0, 0.0], &[2]);
        let c = t.cosine(a, b);
        assert_eq!(t.scalar_value(c), 0.0);
        let g = t.gradients(c).unwrap();
        assert_eq!(g.get("a").unwrap(), &[0.0, 0.0]);
    }
}
