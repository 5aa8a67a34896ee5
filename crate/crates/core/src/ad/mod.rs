//! Reverse-mode automatic differentiation over dense tensors.
//!
//! The design is deliberately small: 64-bit floats everywhere, a tape that is
//! rebuilt on every forward pass, and no broadcasting beyond scalar-tensor.
//! Everything the models in this crate need — matrix products, the softplus
//! family of elementwise ops, reductions, and a handful of structural ops —
//! is a method on [`Tape`].

mod tape;
mod tensor;

pub use tape::{Gradients, Tape};
pub use tensor::{NodeRef, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("shape {shape:?} does not match data length {len}")]
    ShapeDataMismatch { shape: Vec<usize>, len: usize },
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: index {index} out of range for extent {extent}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        extent: usize,
    },
    #[error("{op}: empty tensor")]
    EmptyReduce { op: &'static str },
    #[error("tensor belongs to a different tape")]
    TapeMismatch,
    #[error("loss tensor is not tracked on this tape")]
    UntrackedLoss,
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("tensor is not tracked, no gradient available")]
    NotTracked,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grad_of<F>(f: F, x: &[f64]) -> (f64, Vec<f64>)
    where
        F: Fn(&mut Tape, &Tensor) -> Tensor,
    {
        let mut tape = Tape::new();
        let xt = tape.watch(&Tensor::from_slice(x));
        let y = f(&mut tape, &xt);
        let grads = tape.backward(&y).unwrap();
        (y.item(), grads.wrt(&xt).unwrap().data().to_vec())
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let v = Tensor::from_slice(&[3.0, -1.5]);
        let out = tape.matmul(&Tensor::eye(2), &v).unwrap();
        assert_eq!(out.data(), v.data());
    }

    #[test]
    fn matmul_hand_example() {
        let mut tape = Tape::new();
        let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap();
        let out = tape.matmul(&a, &b).unwrap();
        assert_eq!(out.shape(), &[2, 1]);
        assert_eq!(out.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = Tensor::matrix(2, 3, vec![0.0; 6]).unwrap();
        let b = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
        let err = tape.matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn softplus_values() {
        let mut tape = Tape::new();
        let out = tape
            .softplus(&Tensor::from_slice(&[0.0, 50.0, -700.0]))
            .unwrap();
        assert!((out.data()[0] - 2.0_f64.ln()).abs() < 1e-15);
        assert_eq!(out.data()[1], 50.0);
        assert!(out.data()[2] >= 0.0 && out.data()[2] < 1e-300);
    }

    #[test]
    fn softplus_gradient_is_sigmoid() {
        let (_, g) = grad_of(
            |tape, x| {
                let s = tape.softplus(x).unwrap();
                tape.sum(&s).unwrap()
            },
            &[1.0],
        );
        let expected = 1.0 / (1.0 + (-1.0_f64).exp());
        assert!((g[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn sq_norm_hand_example() {
        let mut tape = Tape::new();
        let out = tape.sq_norm(&Tensor::from_slice(&[3.0, 4.0])).unwrap();
        assert_eq!(out.item(), 25.0);
        assert_eq!(out.shape(), &[] as &[usize]);
    }

    #[test]
    fn mean_of_empty_errors() {
        let mut tape = Tape::new();
        let err = tape.mean(&Tensor::from_vec(vec![])).unwrap_err();
        assert!(matches!(err, AdError::EmptyReduce { op: "mean" }));
    }

    #[test]
    fn sum_backward_is_ones() {
        let (_, g) = grad_of(
            |tape, x| tape.sum(x).unwrap(),
            &[1.0, 2.0, 3.0],
        );
        assert_eq!(g, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_loss_gradient() {
        let (y, g) = grad_of(
            |tape, x| {
                let s = tape.square(x).unwrap();
                tape.sum(&s).unwrap()
            },
            &[3.0],
        );
        assert_eq!(y, 9.0);
        assert_eq!(g, vec![6.0]);
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.watch(&Tensor::from_slice(&[2.0]));
        let unused = tape.watch(&Tensor::from_slice(&[5.0, 6.0]));
        let y = tape.sq_norm(&x).unwrap();
        let grads = tape.backward(&y).unwrap();
        assert_eq!(grads.wrt(&unused).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.watch(&Tensor::from_slice(&[1.0, 2.0]));
        let err = tape.backward(&x).unwrap_err();
        assert!(matches!(err, AdError::NonScalarLoss { .. }));
    }

    #[test]
    fn untracked_loss_is_rejected() {
        let tape = Tape::new();
        let err = tape.backward(&Tensor::scalar(1.0)).unwrap_err();
        assert!(matches!(err, AdError::UntrackedLoss));
    }

    #[test]
    fn foreign_tensor_is_rejected() {
        let mut t1 = Tape::new();
        let mut t2 = Tape::new();
        let x = t1.watch(&Tensor::scalar(1.0));
        let err = t2.sum(&x).unwrap_err();
        assert!(matches!(err, AdError::TapeMismatch));
    }

    #[test]
    fn backward_twice_is_identical() {
        let mut tape = Tape::new();
        let x = tape.watch(&Tensor::from_slice(&[0.3, -1.2, 0.7]));
        let s = tape.softplus(&x).unwrap();
        let e = tape.exp(&x).unwrap();
        let p = tape.mul(&s, &e).unwrap();
        let loss = tape.sum(&p).unwrap();
        let g1 = tape.backward(&loss).unwrap().wrt(&x).unwrap();
        let g2 = tape.backward(&loss).unwrap().wrt(&x).unwrap();
        assert_eq!(g1.data(), g2.data());
    }

    #[test]
    fn tracked_and_untracked_forward_agree_bitwise() {
        let xs = [0.25, -0.75, 1.5, 2.0];
        let run = |tape: &mut Tape, x: Tensor| -> Vec<f64> {
            let w = Tensor::matrix(2, 4, vec![0.1, -0.2, 0.3, 0.4, 0.5, 0.6, -0.7, 0.8]).unwrap();
            let h = tape.matmul(&w, &x).unwrap();
            let s = tape.softplus(&h).unwrap();
            let t = tape.tanh(&s).unwrap();
            let out = tape.sq_norm(&t).unwrap();
            vec![out.item()]
        };
        let mut tape = Tape::new();
        let plain = run(&mut tape, Tensor::from_slice(&xs));
        assert!(tape.is_empty());
        let mut tape = Tape::new();
        let watched = tape.watch(&Tensor::from_slice(&xs));
        let tracked = run(&mut tape, watched);
        assert!(!tape.is_empty());
        assert_eq!(plain, tracked);
    }

    #[test]
    fn scalar_broadcast_mul_and_backward() {
        let mut tape = Tape::new();
        let x = tape.watch(&Tensor::from_slice(&[1.0, 2.0, 4.0]));
        let c = tape.watch(&Tensor::scalar(3.0));
        let y = tape.mul(&x, &c).unwrap();
        assert_eq!(y.data(), &[3.0, 6.0, 12.0]);
        let loss = tape.sum(&y).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.wrt(&x).unwrap().data(), &[3.0, 3.0, 3.0]);
        assert_eq!(grads.wrt(&c).unwrap().data(), &[7.0]);
    }

    #[test]
    fn row_and_element_backward_scatter() {
        let mut tape = Tape::new();
        let m = tape.watch(&Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let r = tape.row(&m, 1).unwrap();
        assert_eq!(r.data(), &[3.0, 4.0]);
        let e = tape.element(&r, 0).unwrap();
        let grads = tape.backward(&e).unwrap();
        assert_eq!(grads.wrt(&m).unwrap().data(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn concat_backward_splits() {
        let mut tape = Tape::new();
        let a = tape.watch(&Tensor::from_slice(&[1.0, 2.0]));
        let b = tape.watch(&Tensor::from_slice(&[3.0]));
        let c = tape.concat(&a, &b).unwrap();
        let w = Tensor::from_slice(&[10.0, 20.0, 30.0]);
        let y = tape.mul(&c, &w).unwrap();
        let loss = tape.sum(&y).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.wrt(&a).unwrap().data(), &[10.0, 20.0]);
        assert_eq!(grads.wrt(&b).unwrap().data(), &[30.0]);
    }
}
