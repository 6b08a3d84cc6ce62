//! Reverse-mode differentiation over small matrix programs and Adam.
//!
//! A [`Program`] is an ordered list of [`Op`]s. Each op reads earlier nodes,
//! so the list order is a valid evaluation order and its reverse a valid
//! accumulation order. Parameters live in one flat [`ParameterVector`]; every
//! dense layer's block is owned by exactly one `Affine` op, and
//! `AffineTangent` ops may reuse that block read-only to push forward-mode
//! tangents through a network (used for input Jacobians without nesting
//! differentiation).

mod adam;
mod check;
mod eval;
pub mod nets;
mod program;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use check::finite_difference_check;
pub use eval::Evaluation;
pub use program::{
    Activation, Bandwidth, LayerId, LayerShape, Node, Op, ParamLayout, ParameterVector, Program,
    ProgramBuilder,
};

use crate::error::Result;
use crate::matrix::Matrix;

pub fn forward_scalar(program: &Program, params: &ParameterVector, inputs: &[Matrix]) -> Result<f64> {
    program.forward_scalar(params, inputs)
}

pub fn gradient(
    program: &Program,
    params: &ParameterVector,
    inputs: &[Matrix],
) -> Result<ParameterVector> {
    program.gradient(params, inputs)
}

#[cfg(test)]
mod tests {
    use super::nets::{init_uniform, mlp, tangent};
    use super::*;
    use crate::error::Error;
    use crate::rng::Stream;
    use alloc::vec;
    use alloc::vec::Vec;

    /// `loss = f(w * 1)` for a single scalar parameter `w`.
    fn scalar_param_program(f: impl Fn(&mut ProgramBuilder, Node) -> Node) -> Program {
        let mut b = ProgramBuilder::new();
        let one = b.input(Some(1));
        let layer = b.layer(1, 1, false);
        let w = b.affine(one, layer);
        let out = f(&mut b, w);
        b.finish(out).unwrap()
    }

    fn one() -> Vec<Matrix> {
        vec![Matrix::scalar(1.0)]
    }

    #[test]
    fn square_and_log_primitives() {
        let sq = scalar_param_program(|b, w| b.square(w));
        let p = ParameterVector(vec![3.0]);
        assert_eq!(forward_scalar(&sq, &p, &one()).unwrap(), 9.0);
        assert_eq!(gradient(&sq, &p, &one()).unwrap().0, vec![6.0]);

        let lg = scalar_param_program(|b, w| b.log(w));
        let p = ParameterVector(vec![2.0]);
        assert_eq!(gradient(&lg, &p, &one()).unwrap().0, vec![0.5]);
    }

    #[test]
    fn square_of_input_and_mean_of_inputs() {
        let mut b = ProgramBuilder::new();
        let x = b.input(Some(1));
        let s = b.square(x);
        let out = b.sum(s);
        let prog = b.finish(out).unwrap();
        let v = forward_scalar(&prog, &ParameterVector(vec![]), &[Matrix::scalar(3.0)]).unwrap();
        assert_eq!(v, 9.0);

        let mut b = ProgramBuilder::new();
        let x = b.input(None);
        let out = b.mean(x);
        let prog = b.finish(out).unwrap();
        let v = forward_scalar(&prog, &ParameterVector(vec![]), &[Matrix::column(&[1.0, 2.0, 3.0])])
            .unwrap();
        assert_eq!(v, 2.0);
    }

    #[test]
    fn two_layer_tanh_matches_hand_evaluation() {
        let mut b = ProgramBuilder::new();
        let x = b.input(Some(2));
        let net = mlp(&mut b, x, &[2, 2, 1], Activation::Tanh, Activation::Identity);
        let out = b.sum(net.output);
        let prog = b.finish(out).unwrap();
        // layer 1: W1 = [[0.5, -0.3], [0.8, 0.1]], b1 = [0.1, -0.2]
        // layer 2: W2 = [[1.5, -0.7]], b2 = [0.05]
        let p = ParameterVector(vec![0.5, -0.3, 0.8, 0.1, 0.1, -0.2, 1.5, -0.7, 0.05]);
        let xin = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let h1 = (0.5f64 * 1.0 - 0.3 * 2.0 + 0.1).tanh();
        let h2 = (0.8f64 * 1.0 + 0.1 * 2.0 - 0.2).tanh();
        let want = 1.5 * h1 - 0.7 * h2 + 0.05;
        let got = forward_scalar(&prog, &p, &[xin]).unwrap();
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn linear_program_has_exact_differences() {
        let mut b = ProgramBuilder::new();
        let x = b.input(Some(3));
        let l = b.layer(3, 2, true);
        let y = b.affine(x, l);
        let out = b.sum(y);
        let prog = b.finish(out).unwrap();
        let p = init_uniform(prog.layout(), &mut Stream::new(5, 0));
        let xin = Matrix::from_rows(&[[1.0, -2.0, 0.5], [0.3, 0.7, -1.1]]).unwrap();
        let err = finite_difference_check(&prog, &p, &[xin], 1e-5).unwrap();
        assert!(err < 1e-8, "err = {err}");
    }

    #[test]
    fn zero_parameter_program_checks_to_zero() {
        let mut b = ProgramBuilder::new();
        let x = b.input(None);
        let out = b.mean(x);
        let prog = b.finish(out).unwrap();
        let err = finite_difference_check(&prog, &ParameterVector(vec![]), &[Matrix::scalar(4.0)], 1e-5)
            .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn shape_and_finiteness_errors() {
        let sq = scalar_param_program(|b, w| b.log(w));
        assert!(matches!(
            forward_scalar(&sq, &ParameterVector(vec![1.0, 2.0]), &one()),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            forward_scalar(&sq, &ParameterVector(vec![1.0]), &[Matrix::zeros(1, 2)]),
            Err(Error::Shape(_))
        ));
        // log of a negative value names the log node (index 2).
        match forward_scalar(&sq, &ParameterVector(vec![-1.0]), &one()) {
            Err(Error::NonFinite { index, op }) => {
                assert_eq!(index, 2);
                assert_eq!(op, "log");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn layer_ownership_is_enforced() {
        let mut b = ProgramBuilder::new();
        let x = b.input(Some(1));
        let l = b.layer(1, 1, true);
        let y1 = b.affine(x, l);
        let y2 = b.affine(x, l);
        let out = b.add(y1, y2);
        assert!(matches!(b.finish(out), Err(Error::InvalidProgram(_))));

        let mut b = ProgramBuilder::new();
        let x = b.input(Some(1));
        let _unused = b.layer(1, 1, true);
        let out = b.sum(x);
        assert!(matches!(b.finish(out), Err(Error::InvalidProgram(_))));
    }

    #[test]
    fn tangent_chain_is_the_input_derivative() {
        let mut b = ProgramBuilder::new();
        let x = b.input(Some(2));
        let net = mlp(&mut b, x, &[2, 5, 5, 1], Activation::Tanh, Activation::Identity);
        let dir = b.unit_direction(x, 1);
        let t = tangent(&mut b, &net, dir);
        let out = b.sum(t);
        let prog_t = b.finish(out).unwrap();

        let mut b = ProgramBuilder::new();
        let x = b.input(Some(2));
        let net = mlp(&mut b, x, &[2, 5, 5, 1], Activation::Tanh, Activation::Identity);
        let out = b.sum(net.output);
        let prog_f = b.finish(out).unwrap();

        let p = init_uniform(prog_f.layout(), &mut Stream::new(11, 0));
        let xv = Matrix::from_rows(&[[0.3, -0.4]]).unwrap();
        let eps = 1e-6;
        let up = Matrix::from_rows(&[[0.3, -0.4 + eps]]).unwrap();
        let dn = Matrix::from_rows(&[[0.3, -0.4 - eps]]).unwrap();
        let fd = (prog_f.forward_scalar(&p, &[up]).unwrap() - prog_f.forward_scalar(&p, &[dn]).unwrap())
            / (2.0 * eps);
        let an = prog_t.forward_scalar(&p, &[xv.clone()]).unwrap();
        assert!((an - fd).abs() / an.abs().max(1e-8) < 1e-7);
        // And the tangent itself differentiates cleanly in the parameters.
        let err = finite_difference_check(&prog_t, &p, &[xv], 1e-5).unwrap();
        assert!(err < 1e-4, "err = {err}");
    }

    #[test]
    fn evaluation_is_bit_reproducible() {
        let mut b = ProgramBuilder::new();
        let x = b.input(Some(3));
        let net = mlp(&mut b, x, &[3, 6, 1], Activation::Sigmoid, Activation::Identity);
        let k = b.gaussian_kernel(net.output, Bandwidth::Silverman { window: 1.0 });
        let s = b.row_sum(k);
        let l = b.log(s);
        let out = b.mean(l);
        let prog = b.finish(out).unwrap();
        let p = init_uniform(prog.layout(), &mut Stream::new(3, 1));
        let xin = Matrix::from_rows(&[[0.1, 0.2, 0.3], [1.0, -1.0, 0.5], [0.0, 2.0, -0.3]]).unwrap();
        let a = prog.value_and_gradient(&p, &[xin.clone()]).unwrap();
        let b2 = prog.value_and_gradient(&p, &[xin]).unwrap();
        assert_eq!(a.0.to_bits(), b2.0.to_bits());
        assert_eq!(a.1, b2.1);
    }
}
