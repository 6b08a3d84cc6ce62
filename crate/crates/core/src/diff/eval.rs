use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::program::{Bandwidth, Node, Op, ParameterVector, Program};
use crate::error::{Error, Result};
use crate::kde::silverman_bandwidth;
use crate::matrix::{sample_std, spd_inverse, spd_log_det, Matrix};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Values of every node after a forward pass, plus what the backward pass
/// needs to reuse (kernel bandwidths, SPD inverses).
#[derive(Clone, Debug)]
pub struct Evaluation {
    values: Vec<Matrix>,
    bandwidths: Vec<f64>,
    inverses: Vec<Option<Matrix>>,
}

impl Evaluation {
    pub fn value(&self, node: Node) -> &Matrix {
        &self.values[node.0]
    }

    /// Bandwidth used by a `GaussianKernel` node (NaN for other nodes).
    pub fn bandwidth(&self, node: Node) -> f64 {
        self.bandwidths[node.0]
    }
}

fn broadcast(
    a: &Matrix,
    b: &Matrix,
    index: usize,
    op: &'static str,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Matrix> {
    if a.shape() == b.shape() {
        Ok(a.zip_map(b, f))
    } else if b.shape() == (1, 1) {
        let s = b.value();
        Ok(a.map(|x| f(x, s)))
    } else if a.shape() == (1, 1) {
        let s = a.value();
        Ok(b.map(|y| f(s, y)))
    } else {
        Err(Error::shape(format!(
            "node {index} ({op}): operands {}x{} and {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )))
    }
}

/// Reduces a gradient back to the operand's shape when it was broadcast.
fn unbroadcast(g: Matrix, shape: (usize, usize)) -> Matrix {
    if g.shape() == shape {
        g
    } else {
        Matrix::scalar(g.sum())
    }
}

fn kernel_matrix(u: &[f64], h: f64) -> Matrix {
    let n = u.len();
    let mut k = Matrix::zeros(n, n);
    let norm = INV_SQRT_2PI / h;
    let inv2h2 = 0.5 / (h * h);
    for a in 0..n {
        k[(a, a)] = norm;
        for b in (a + 1)..n {
            let d = u[a] - u[b];
            let v = norm * libm::exp(-d * d * inv2h2);
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
    }
    k
}

impl Program {
    fn check_call(&self, params: &ParameterVector, inputs: &[Matrix]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::shape(format!(
                "parameter vector has {} entries, program declares {}",
                params.len(),
                self.param_count()
            )));
        }
        if inputs.len() != self.input_arity() {
            return Err(Error::shape(format!(
                "program takes {} inputs, got {}",
                self.input_arity(),
                inputs.len()
            )));
        }
        for (slot, (want, got)) in self.input_cols.iter().zip(inputs).enumerate() {
            if let Some(cols) = want {
                if got.cols() != *cols {
                    return Err(Error::shape(format!(
                        "input {slot} has {} columns, expected {cols}",
                        got.cols()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Runs every node forward.
    pub fn evaluate(&self, params: &ParameterVector, inputs: &[Matrix]) -> Result<Evaluation> {
        self.check_call(params, inputs)?;
        let p = params.as_slice();
        let n = self.ops.len();
        let mut values: Vec<Matrix> = Vec::with_capacity(n);
        let mut bandwidths = vec![f64::NAN; n];
        let mut inverses: Vec<Option<Matrix>> = vec![None; n];

        for (i, op) in self.ops.iter().enumerate() {
            let v = |node: &Node| -> &Matrix { &values[node.0] };
            let out = match op {
                Op::Input { slot } => inputs[*slot].clone(),
                Op::Affine { src, layer } | Op::AffineTangent { src, layer } => {
                    let shape = self.layout.layers[layer.0];
                    let x = v(src);
                    if x.cols() != shape.in_dim {
                        return Err(Error::shape(format!(
                            "node {i} ({}): input has {} columns, layer expects {}",
                            op.name(),
                            x.cols(),
                            shape.in_dim
                        )));
                    }
                    let w = Matrix::from_vec(
                        shape.out_dim,
                        shape.in_dim,
                        p[shape.weight_range()].to_vec(),
                    )?;
                    let mut y = x.matmul_t(&w);
                    if matches!(op, Op::Affine { .. }) && shape.bias {
                        let b = &p[shape.bias_range()];
                        for r in 0..y.rows() {
                            for (yv, bv) in y.row_mut(r).iter_mut().zip(b) {
                                *yv += bv;
                            }
                        }
                    }
                    y
                }
                Op::Activate { src, act } => v(src).map(|x| act.apply(x)),
                Op::ActivateDerivative { src, act } => v(src).map(|x| act.derivative(x)),
                Op::GaussianKernel { src, bandwidth } => {
                    let u = v(src);
                    if u.cols() != 1 {
                        return Err(Error::shape(format!(
                            "node {i} (gaussian-kernel): expects a column vector, got {} columns",
                            u.cols()
                        )));
                    }
                    let h = match bandwidth {
                        Bandwidth::Fixed(h) => *h,
                        Bandwidth::Silverman { window } => {
                            silverman_bandwidth(sample_std(u.as_slice()), u.rows(), *window)?
                        }
                    };
                    if !(h > 0.0 && h.is_finite()) {
                        return Err(Error::invalid(format!("node {i}: bandwidth {h} is not positive")));
                    }
                    bandwidths[i] = h;
                    kernel_matrix(u.as_slice(), h)
                }
                Op::Log { src } => v(src).map(libm::log),
                Op::Exp { src } => v(src).map(libm::exp),
                Op::Square { src } => v(src).map(|x| x * x),
                Op::Abs { src } => v(src).map(libm::fabs),
                Op::ClampMin { src, floor } => v(src).map(|x| if x > *floor { x } else { *floor }),
                Op::Scale { src, factor } => v(src).map(|x| x * factor),
                Op::Offset { src, shift } => v(src).map(|x| x + shift),
                Op::Add { lhs, rhs } => broadcast(v(lhs), v(rhs), i, "add", |a, b| a + b)?,
                Op::Sub { lhs, rhs } => broadcast(v(lhs), v(rhs), i, "sub", |a, b| a - b)?,
                Op::Mul { lhs, rhs } => broadcast(v(lhs), v(rhs), i, "mul", |a, b| a * b)?,
                Op::Div { lhs, rhs } => broadcast(v(lhs), v(rhs), i, "div", |a, b| a / b)?,
                Op::Sum { src } => Matrix::scalar(v(src).sum()),
                Op::Mean { src } => {
                    let x = v(src);
                    Matrix::scalar(x.sum() / x.as_slice().len() as f64)
                }
                Op::RowSum { src } => {
                    let x = v(src);
                    let sums: Vec<f64> = (0..x.rows()).map(|r| x.row(r).iter().sum()).collect();
                    Matrix::column(&sums)
                }
                Op::ColMean { src } => {
                    let x = v(src);
                    Matrix::from_vec(1, x.cols(), x.column_means())?
                }
                Op::MatMul { lhs, rhs } => {
                    let (a, b) = (v(lhs), v(rhs));
                    if a.cols() != b.rows() {
                        return Err(Error::shape(format!(
                            "node {i} (matmul): {}x{} times {}x{}",
                            a.rows(),
                            a.cols(),
                            b.rows(),
                            b.cols()
                        )));
                    }
                    a.matmul(b)
                }
                Op::Columns { src, start, len } => {
                    let x = v(src);
                    if start + len > x.cols() {
                        return Err(Error::shape(format!(
                            "node {i} (columns): range {start}..{} exceeds {} columns",
                            start + len,
                            x.cols()
                        )));
                    }
                    x.select_cols(*start, *len)
                }
                Op::Concat { parts } => {
                    let rows = v(&parts[0]).rows();
                    let cols: usize = parts.iter().map(|p| v(p).cols()).sum();
                    if parts.iter().any(|p| v(p).rows() != rows) {
                        return Err(Error::shape(format!("node {i} (concat): row counts differ")));
                    }
                    let mut out = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        let mut c0 = 0;
                        for part in parts {
                            let pr = v(part).row(r);
                            out.row_mut(r)[c0..c0 + pr.len()].copy_from_slice(pr);
                            c0 += pr.len();
                        }
                    }
                    out
                }
                Op::UnitDirection { like, col } => {
                    let shape = values[like.0].shape();
                    if *col >= shape.1 {
                        return Err(Error::shape(format!(
                            "node {i} (unit-direction): column {col} of {}",
                            shape.1
                        )));
                    }
                    let mut out = Matrix::zeros(shape.0, shape.1);
                    for r in 0..shape.0 {
                        out[(r, *col)] = 1.0;
                    }
                    out
                }
                Op::Covariance { src, ridge } => {
                    let x = v(src);
                    if x.rows() < 2 {
                        return Err(Error::shape(format!(
                            "node {i} (covariance): needs at least two rows"
                        )));
                    }
                    let means = x.column_means();
                    let mut c = x.clone();
                    for r in 0..c.rows() {
                        for (cv, m) in c.row_mut(r).iter_mut().zip(&means) {
                            *cv -= m;
                        }
                    }
                    let mut s = c.t_matmul(&c);
                    let denom = (x.rows() - 1) as f64;
                    s.as_mut_slice().iter_mut().for_each(|e| *e /= denom);
                    for d in 0..s.rows() {
                        s[(d, d)] += ridge;
                    }
                    s
                }
                Op::LogDet { src } => {
                    let s = v(src);
                    let ld = spd_log_det(s)?;
                    inverses[i] = Some(spd_inverse(s)?);
                    Matrix::scalar(ld)
                }
                Op::Trace { src } => {
                    let s = v(src);
                    if s.rows() != s.cols() {
                        return Err(Error::shape(format!("node {i} (trace): not square")));
                    }
                    Matrix::scalar((0..s.rows()).map(|d| s[(d, d)]).sum())
                }
            };
            if !out.is_finite() {
                return Err(Error::NonFinite {
                    index: i,
                    op: op.name(),
                });
            }
            values.push(out);
        }
        Ok(Evaluation {
            values,
            bandwidths,
            inverses,
        })
    }

    /// Scalar value of the output node.
    pub fn forward_scalar(&self, params: &ParameterVector, inputs: &[Matrix]) -> Result<f64> {
        let eval = self.evaluate(params, inputs)?;
        self.scalar_output(&eval)
    }

    fn scalar_output(&self, eval: &Evaluation) -> Result<f64> {
        let out = eval.value(self.output);
        if out.shape() != (1, 1) {
            return Err(Error::shape(format!(
                "output node is {}x{}, expected a scalar",
                out.rows(),
                out.cols()
            )));
        }
        Ok(out.value())
    }

    /// Output value and its gradient with respect to the parameters.
    pub fn value_and_gradient(
        &self,
        params: &ParameterVector,
        inputs: &[Matrix],
    ) -> Result<(f64, ParameterVector)> {
        let eval = self.evaluate(params, inputs)?;
        let value = self.scalar_output(&eval)?;
        let grad = self.backward(params, &eval)?;
        Ok((value, grad))
    }

    pub fn gradient(&self, params: &ParameterVector, inputs: &[Matrix]) -> Result<ParameterVector> {
        self.value_and_gradient(params, inputs).map(|(_, g)| g)
    }

    /// Reverse accumulation from the (scalar) output node.
    pub fn backward(&self, params: &ParameterVector, eval: &Evaluation) -> Result<ParameterVector> {
        let p = params.as_slice();
        let mut grad = vec![0.0; p.len()];
        let n = self.ops.len();
        let mut adj: Vec<Option<Matrix>> = vec![None; n];
        adj[self.output.0] = Some(Matrix::scalar(1.0));

        let needs = &self.needs_grad;
        let val = |node: &Node| -> &Matrix { &eval.values[node.0] };
        fn acc(adj: &mut [Option<Matrix>], node: Node, g: Matrix) {
            match &mut adj[node.0] {
                Some(a) => a.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=self.output.0).rev() {
            if !needs[i] {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            let y = &eval.values[i];
            match &self.ops[i] {
                Op::Input { .. } | Op::UnitDirection { .. } => {}
                op @ (Op::Affine { src, layer } | Op::AffineTangent { src, layer }) => {
                    let shape = self.layout.layers[layer.0];
                    let x = val(src);
                    // dW = g^T x
                    let dw = g.t_matmul(x);
                    for (gw, d) in grad[shape.weight_range()].iter_mut().zip(dw.as_slice()) {
                        *gw += d;
                    }
                    if matches!(op, Op::Affine { .. }) && shape.bias {
                        let gb = &mut grad[shape.bias_range()];
                        for r in 0..g.rows() {
                            for (b, d) in gb.iter_mut().zip(g.row(r)) {
                                *b += d;
                            }
                        }
                    }
                    if needs[src.0] {
                        let w = Matrix::from_vec(
                            shape.out_dim,
                            shape.in_dim,
                            p[shape.weight_range()].to_vec(),
                        )?;
                        acc(&mut adj, *src, g.matmul(&w));
                    }
                }
                Op::Activate { src, act } => {
                    if needs[src.0] {
                        let x = val(src);
                        let dx = match act {
                            super::Activation::Tanh => g.zip_map(y, |gv, t| gv * (1.0 - t * t)),
                            super::Activation::Sigmoid => g.zip_map(y, |gv, s| gv * s * (1.0 - s)),
                            super::Activation::Identity => g.zip_map(x, |gv, _| gv),
                        };
                        acc(&mut adj, *src, dx);
                    }
                }
                Op::ActivateDerivative { src, act } => {
                    if needs[src.0] {
                        let dx = g.zip_map(val(src), |gv, x| gv * act.second_derivative(x));
                        acc(&mut adj, *src, dx);
                    }
                }
                Op::GaussianKernel { src, .. } => {
                    if needs[src.0] {
                        let u = val(src).as_slice();
                        let h = eval.bandwidths[i];
                        let inv_h2 = 1.0 / (h * h);
                        let m = u.len();
                        let mut du = vec![0.0; m];
                        for a in 0..m {
                            let mut s = 0.0;
                            for b in 0..m {
                                let gsym = g[(a, b)] + g[(b, a)];
                                s += (u[a] - u[b]) * y[(a, b)] * gsym;
                            }
                            du[a] = -s * inv_h2;
                        }
                        acc(&mut adj, *src, Matrix::column(&du));
                    }
                }
                Op::Log { src } => {
                    if needs[src.0] {
                        acc(&mut adj, *src, g.zip_map(val(src), |gv, x| gv / x));
                    }
                }
                Op::Exp { src } => {
                    if needs[src.0] {
                        acc(&mut adj, *src, g.zip_map(y, |gv, e| gv * e));
                    }
                }
                Op::Square { src } => {
                    if needs[src.0] {
                        acc(&mut adj, *src, g.zip_map(val(src), |gv, x| 2.0 * x * gv));
                    }
                }
                Op::Abs { src } => {
                    if needs[src.0] {
                        let dx = g.zip_map(val(src), |gv, x| {
                            if x > 0.0 {
                                gv
                            } else if x < 0.0 {
                                -gv
                            } else {
                                0.0
                            }
                        });
                        acc(&mut adj, *src, dx);
                    }
                }
                Op::ClampMin { src, floor } => {
                    if needs[src.0] {
                        let f = *floor;
                        acc(&mut adj, *src, g.zip_map(val(src), |gv, x| if x > f { gv } else { 0.0 }));
                    }
                }
                Op::Scale { src, factor } => {
                    if needs[src.0] {
                        acc(&mut adj, *src, g.map(|gv| gv * factor));
                    }
                }
                Op::Offset { src, .. } => {
                    if needs[src.0] {
                        acc(&mut adj, *src, g);
                    }
                }
                Op::Add { lhs, rhs } | Op::Sub { lhs, rhs } => {
                    let sign = if matches!(self.ops[i], Op::Sub { .. }) { -1.0 } else { 1.0 };
                    if needs[rhs.0] {
                        let gr = unbroadcast(g.map(|gv| sign * gv), val(rhs).shape());
                        acc(&mut adj, *rhs, gr);
                    }
                    if needs[lhs.0] {
                        acc(&mut adj, *lhs, unbroadcast(g, val(lhs).shape()));
                    }
                }
                Op::Mul { lhs, rhs } => {
                    let (a, b) = (val(lhs), val(rhs));
                    if needs[lhs.0] {
                        let ga = broadcast(&g, b, i, "mul", |gv, bv| gv * bv)?;
                        acc(&mut adj, *lhs, unbroadcast(ga, a.shape()));
                    }
                    if needs[rhs.0] {
                        let gb = broadcast(&g, a, i, "mul", |gv, av| gv * av)?;
                        acc(&mut adj, *rhs, unbroadcast(gb, b.shape()));
                    }
                }
                Op::Div { lhs, rhs } => {
                    let (a, b) = (val(lhs), val(rhs));
                    if needs[lhs.0] {
                        let ga = broadcast(&g, b, i, "div", |gv, bv| gv / bv)?;
                        acc(&mut adj, *lhs, unbroadcast(ga, a.shape()));
                    }
                    if needs[rhs.0] {
                        // d(a/b)/db = -y / b
                        let gy = g.zip_map(y, |gv, yv| gv * yv);
                        let gb = broadcast(&gy, b, i, "div", |t, bv| -t / bv)?;
                        acc(&mut adj, *rhs, unbroadcast(gb, b.shape()));
                    }
                }
                Op::Sum { src } => {
                    if needs[src.0] {
                        let (r, c) = val(src).shape();
                        acc(&mut adj, *src, Matrix::filled(r, c, g.value()));
                    }
                }
                Op::Mean { src } => {
                    if needs[src.0] {
                        let (r, c) = val(src).shape();
                        acc(&mut adj, *src, Matrix::filled(r, c, g.value() / (r * c) as f64));
                    }
                }
                Op::RowSum { src } => {
                    if needs[src.0] {
                        let (r, c) = val(src).shape();
                        let mut dx = Matrix::zeros(r, c);
                        for row in 0..r {
                            let gv = g[(row, 0)];
                            dx.row_mut(row).iter_mut().for_each(|e| *e = gv);
                        }
                        acc(&mut adj, *src, dx);
                    }
                }
                Op::ColMean { src } => {
                    if needs[src.0] {
                        let (r, c) = val(src).shape();
                        let mut dx = Matrix::zeros(r, c);
                        for row in 0..r {
                            for col in 0..c {
                                dx[(row, col)] = g[(0, col)] / r as f64;
                            }
                        }
                        acc(&mut adj, *src, dx);
                    }
                }
                Op::MatMul { lhs, rhs } => {
                    let (a, b) = (val(lhs), val(rhs));
                    if needs[lhs.0] {
                        acc(&mut adj, *lhs, g.matmul_t(b));
                    }
                    if needs[rhs.0] {
                        acc(&mut adj, *rhs, a.t_matmul(&g));
                    }
                }
                Op::Columns { src, start, len } => {
                    if needs[src.0] {
                        let (r, c) = val(src).shape();
                        let mut dx = Matrix::zeros(r, c);
                        for row in 0..r {
                            dx.row_mut(row)[*start..start + len].copy_from_slice(g.row(row));
                        }
                        acc(&mut adj, *src, dx);
                    }
                }
                Op::Concat { parts } => {
                    let mut c0 = 0;
                    for part in parts {
                        let w = val(part).cols();
                        if needs[part.0] {
                            acc(&mut adj, *part, g.select_cols(c0, w));
                        }
                        c0 += w;
                    }
                }
                Op::Covariance { src, .. } => {
                    if needs[src.0] {
                        let x = val(src);
                        let means = x.column_means();
                        let mut c = x.clone();
                        for r in 0..c.rows() {
                            for (cv, m) in c.row_mut(r).iter_mut().zip(&means) {
                                *cv -= m;
                            }
                        }
                        // dx = c (G + G^T) / (n - 1)
                        let gs = g.zip_map(&g.transpose(), |a, b| (a + b) / (x.rows() - 1) as f64);
                        acc(&mut adj, *src, c.matmul(&gs));
                    }
                }
                Op::LogDet { src } => {
                    if needs[src.0] {
                        let inv = eval.inverses[i]
                            .as_ref()
                            .expect("log-det forward stores the inverse");
                        let gv = g.value();
                        acc(&mut adj, *src, inv.map(|e| e * gv));
                    }
                }
                Op::Trace { src } => {
                    if needs[src.0] {
                        let d = val(src).rows();
                        let mut dx = Matrix::zeros(d, d);
                        for k in 0..d {
                            dx[(k, k)] = g.value();
                        }
                        acc(&mut adj, *src, dx);
                    }
                }
            }
        }
        if let Some(k) = grad.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index: k,
                op: "backward",
            });
        }
        Ok(ParameterVector(grad))
    }
}
