use super::{AutodiffError, Tensor};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// Elementwise sum; the right operand may be a `[1, n]` row broadcast over rows.
    Add(Var, Var),
    Relu(Var),
    Tanh(Var),
    Softplus(Var),
    Square(Var),
    Mean(Var),
    Scale(Var, f64),
    /// Column-wise concatenation of two matrices with equal row counts.
    Concat(Var, Var),
    /// Elementwise product of equal shapes.
    Mul(Var, Var),
    /// Softmax along each row of a matrix.
    Softmax(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of a single forward computation.
///
/// Every primitive checks its operand shapes and rejects non-finite results,
/// so a NaN or infinity aborts the computation at the op that produced it.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every node that requires them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `var` as a tensor; zeros when the loss does not depend on it.
    pub fn tensor(&self, var: Var) -> Tensor {
        let shape = self.shapes[var.0].clone();
        match self.get(var) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient matches node shape"),
            None => Tensor::zeros(shape),
        }
    }
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<(), AutodiffError> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(AutodiffError::NonFinite { op })
    }
}

fn require_2d(op: &'static str, t: &Tensor) -> Result<(usize, usize), AutodiffError> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(AutodiffError::ShapeMismatch {
            op,
            lhs: other.to_vec(),
            rhs: vec![],
        }),
    }
}

/// `out[m,n] += a[m,k] * b[k,n]`
fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,k] += g[m,n] * b[k,n]^T`
fn gemm_nt(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let dot: f64 = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            out[i * k + p] += dot;
        }
    }
}

/// `out[k,n] += a[m,k]^T * g[m,n]`
fn gemm_tn(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let g_row = &g[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += av * gv;
            }
        }
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf whose gradient is tracked (a trainable parameter or an input being differentiated).
    pub fn param(&mut self, t: Tensor) -> Result<Var, AutodiffError> {
        check_finite("param", &t)?;
        Ok(self.push(t, Op::Leaf, true))
    }

    /// A leaf treated as a constant; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor) -> Result<Var, AutodiffError> {
        check_finite("constant", &t)?;
        Ok(self.push(t, Op::Leaf, false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = require_2d("matmul", ta)?;
        let (k2, n) = require_2d("matmul", tb)?;
        if k != k2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(ta.data(), tb.data(), &mut out, m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        check_finite("matmul", &t)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out: Vec<f64> = if ta.shape() == tb.shape() {
            ta.data()
                .iter()
                .zip(tb.data())
                .map(|(x, y)| x + y)
                .collect()
        } else if ta.shape().len() == 2 && tb.shape() == [1, ta.cols()] {
            let bias = tb.data();
            ta.data()
                .chunks(ta.cols())
                .flat_map(|row| row.iter().zip(bias).map(|(x, y)| x + y))
                .collect()
        } else {
            return Err(AutodiffError::ShapeMismatch {
                op: "add",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        };
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        check_finite("add", &t)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    fn unary(
        &mut self,
        name: &'static str,
        a: Var,
        op: Op,
        f: impl Fn(f64) -> f64,
    ) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        let t = Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|&x| f(x)).collect(),
        )?;
        check_finite(name, &t)?;
        let rg = self.needs(a);
        Ok(self.push(t, op, rg))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("relu", a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("tanh", a, Op::Tanh(a), f64::tanh)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("softplus", a, Op::Softplus(a), softplus)
    }

    pub fn square(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("square", a, Op::Square(a), |x| x * x)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        self.unary("scale", a, Op::Scale(a, c), |x| c * x)
    }

    /// Mean over all elements; the result is a scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        if ta.is_empty() {
            return Err(AutodiffError::ShapeMismatch {
                op: "mean",
                lhs: ta.shape().to_vec(),
                rhs: vec![],
            });
        }
        let m = ta.data().iter().sum::<f64>() / ta.len() as f64;
        let t = Tensor::scalar(m);
        check_finite("mean", &t)?;
        let rg = self.needs(a);
        Ok(self.push(t, Op::Mean(a), rg))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (ra, ca) = require_2d("concat", ta)?;
        let (rb, cb) = require_2d("concat", tb)?;
        if ra != rb {
            return Err(AutodiffError::ShapeMismatch {
                op: "concat",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut out = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            out.extend_from_slice(ta.row(r));
            out.extend_from_slice(tb.row(r));
        }
        let t = Tensor::new(vec![ra, ca + cb], out)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Concat(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "mul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let out = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        check_finite("mul", &t)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Row-wise softmax, shifted by the row maximum.
    pub fn softmax(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        let (r, c) = require_2d("softmax", ta)?;
        let mut out = Vec::with_capacity(r * c);
        for row in ta.data().chunks(c.max(1)) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
            let z: f64 = e.iter().sum();
            out.extend(e.iter().map(|x| x / z));
        }
        let t = Tensor::new(vec![r, c], out)?;
        check_finite("softmax", &t)?;
        let rg = self.needs(a);
        Ok(self.push(t, Op::Softmax(a), rg))
    }

    /// `a - b`, composed from `scale` and `add`.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(lt.shape().to_vec()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        fn accumulate(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
            slot.get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(a), self.value(b));
                    let (m, k) = (ta.rows(), ta.cols());
                    let nn = tb.cols();
                    if self.needs(a) {
                        let ga = accumulate(&mut grads[a.0], m * k);
                        gemm_nt(&g, tb.data(), ga, m, k, nn);
                    }
                    if self.needs(b) {
                        let gb = accumulate(&mut grads[b.0], k * nn);
                        gemm_tn(ta.data(), &g, gb, m, k, nn);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(a) {
                        let ga = accumulate(&mut grads[a.0], g.len());
                        ga.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                    }
                    if self.needs(b) {
                        let tb = self.value(b);
                        let gb = accumulate(&mut grads[b.0], tb.len());
                        if tb.len() == g.len() {
                            gb.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                        } else {
                            for row in g.chunks(tb.len()) {
                                gb.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                            }
                        }
                    }
                }
                Op::Relu(a) => {
                    let x = self.value(a).data();
                    let ga = accumulate(&mut grads[a.0], x.len());
                    for ((o, &gi), &xi) in ga.iter_mut().zip(&g).zip(x) {
                        if xi > 0.0 {
                            *o += gi;
                        }
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    let ga = accumulate(&mut grads[a.0], y.len());
                    for ((o, &gi), &yi) in ga.iter_mut().zip(&g).zip(y) {
                        *o += gi * (1.0 - yi * yi);
                    }
                }
                Op::Softplus(a) => {
                    let x = self.value(a).data();
                    let ga = accumulate(&mut grads[a.0], x.len());
                    for ((o, &gi), &xi) in ga.iter_mut().zip(&g).zip(x) {
                        *o += gi * sigmoid(xi);
                    }
                }
                Op::Square(a) => {
                    let x = self.value(a).data();
                    let ga = accumulate(&mut grads[a.0], x.len());
                    for ((o, &gi), &xi) in ga.iter_mut().zip(&g).zip(x) {
                        *o += 2.0 * gi * xi;
                    }
                }
                Op::Scale(a, c) => {
                    let ga = accumulate(&mut grads[a.0], g.len());
                    ga.iter_mut().zip(&g).for_each(|(x, y)| *x += c * y);
                }
                Op::Mean(a) => {
                    let len = self.value(a).len();
                    let share = g[0] / len as f64;
                    let ga = accumulate(&mut grads[a.0], len);
                    ga.iter_mut().for_each(|x| *x += share);
                }
                Op::Concat(a, b) => {
                    let (ca, cb) = (self.value(a).cols(), self.value(b).cols());
                    let rows = self.value(a).rows();
                    if self.needs(a) {
                        let ga = accumulate(&mut grads[a.0], rows * ca);
                        for r in 0..rows {
                            let src = &g[r * (ca + cb)..r * (ca + cb) + ca];
                            ga[r * ca..(r + 1) * ca]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                    if self.needs(b) {
                        let gb = accumulate(&mut grads[b.0], rows * cb);
                        for r in 0..rows {
                            let src = &g[r * (ca + cb) + ca..(r + 1) * (ca + cb)];
                            gb[r * cb..(r + 1) * cb]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (x, y) = (self.value(a).data(), self.value(b).data());
                    if self.needs(a) {
                        let ga = accumulate(&mut grads[a.0], x.len());
                        for ((o, &gi), &yi) in ga.iter_mut().zip(&g).zip(y) {
                            *o += gi * yi;
                        }
                    }
                    if self.needs(b) {
                        let gb = accumulate(&mut grads[b.0], y.len());
                        for ((o, &gi), &xi) in gb.iter_mut().zip(&g).zip(x) {
                            *o += gi * xi;
                        }
                    }
                }
                Op::Softmax(a) => {
                    let p = node.value.data();
                    let c = node.value.cols().max(1);
                    let ga = accumulate(&mut grads[a.0], p.len());
                    for ((o, gr), pr) in ga.chunks_mut(c).zip(g.chunks(c)).zip(p.chunks(c)) {
                        let dot: f64 = gr.iter().zip(pr).map(|(x, y)| x * y).sum();
                        for k in 0..c {
                            o[k] += pr[k] * (gr[k] - dot);
                        }
                    }
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(AutodiffError::NonFiniteGradient { node: i });
                }
            }
        }
        Ok(Gradients {
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_hand_arithmetic() {
        let mut g = Graph::new();
        let a = g.constant(t(&[1, 2], &[1.0, 2.0])).unwrap();
        let b = g.constant(t(&[2, 1], &[3.0, 4.0])).unwrap();
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[11.0]);
    }

    #[test]
    fn relu_and_softplus_values() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 3], &[-1.0, 0.0, 2.0])).unwrap();
        let r = g.relu(x).unwrap();
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = g.constant(t(&[1, 1], &[0.0])).unwrap();
        let s = g.softplus(z).unwrap();
        assert!((g.value(s).data()[0] - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        let mut g = Graph::new();
        let x = g.param(t(&[1, 2], &[800.0, -800.0])).unwrap();
        let s = g.softplus(x).unwrap();
        assert_eq!(g.value(s).data()[0], 800.0);
        assert!(g.value(s).data()[1] >= 0.0);
    }

    #[test]
    fn mean_square_gradient() {
        let mut g = Graph::new();
        let x = g.param(t(&[1, 2], &[1.0, 2.0])).unwrap();
        let sq = g.square(x).unwrap();
        let m = g.mean(sq).unwrap();
        let grads = g.backward(m).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn tanh_gradient_at_zero() {
        let mut g = Graph::new();
        let x = g.param(t(&[1], &[0.0])).unwrap();
        let y = g.tanh(x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[1.0]);
    }

    #[test]
    fn shape_errors_name_the_primitive() {
        let mut g = Graph::new();
        let a = g.constant(t(&[1, 2], &[1.0, 2.0])).unwrap();
        let b = g.constant(t(&[3, 1], &[1.0, 2.0, 3.0])).unwrap();
        let err = g.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: vec![1, 2],
                rhs: vec![3, 1]
            }
        );
        assert!(err.to_string().contains("matmul"));
        let c = g.constant(t(&[2, 1], &[1.0, 2.0])).unwrap();
        assert!(matches!(
            g.concat(a, c),
            Err(AutodiffError::ShapeMismatch { op: "concat", .. })
        ));
        assert!(matches!(
            g.add(a, c),
            Err(AutodiffError::ShapeMismatch { op: "add", .. })
        ));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.param(t(&[1, 2], &[1.0, 2.0])).unwrap();
        assert_eq!(
            g.backward(x).unwrap_err(),
            AutodiffError::NonScalarLoss(vec![1, 2])
        );
    }

    #[test]
    fn nan_aborts_at_the_producing_op() {
        let mut g = Graph::new();
        assert!(g.constant(t(&[1], &[f64::NAN])).is_err());
        let x = g.param(t(&[1], &[1e300])).unwrap();
        assert_eq!(
            g.square(x).unwrap_err(),
            AutodiffError::NonFinite { op: "square" }
        );
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let w = g.param(t(&[2, 1], &[1.0, -1.0])).unwrap();
        let x = g.constant(t(&[1, 2], &[3.0, 4.0])).unwrap();
        let y = g.matmul(x, w).unwrap();
        let grads = g.backward(y).unwrap();
        assert!(grads.get(x).is_none());
        assert_eq!(grads.get(w).unwrap(), &[3.0, 4.0]);
    }

    #[test]
    fn bias_broadcast_gradient_sums_rows() {
        let mut g = Graph::new();
        let x = g
            .constant(t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]))
            .unwrap();
        let b = g.param(t(&[1, 2], &[0.5, -0.5])).unwrap();
        let y = g.add(x, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.5, 1.5, 3.5, 3.5, 5.5, 5.5]);
        let m = g.mean(y).unwrap();
        let grads = g.backward(m).unwrap();
        assert_eq!(grads.get(b).unwrap(), &[0.5, 0.5]);
    }

    #[test]
    fn mul_gradient_is_the_other_operand() {
        let mut g = Graph::new();
        let a = g.param(t(&[1, 2], &[2.0, -3.0])).unwrap();
        let b = g.param(t(&[1, 2], &[5.0, 7.0])).unwrap();
        let y = g.mul(a, b).unwrap();
        assert_eq!(g.value(y).data(), &[10.0, -21.0]);
        let m = g.mean(y).unwrap();
        let grads = g.backward(m).unwrap();
        assert_eq!(grads.get(a).unwrap(), &[2.5, 3.5]);
        assert_eq!(grads.get(b).unwrap(), &[1.0, -1.5]);
        let c = g.param(t(&[2, 1], &[1.0, 1.0])).unwrap();
        assert!(g.mul(a, c).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one_and_survive_large_logits() {
        let mut g = Graph::new();
        let x = g
            .param(t(&[2, 3], &[1.0, 2.0, 3.0, 1000.0, 1000.0, -1000.0]))
            .unwrap();
        let p = g.softmax(x).unwrap();
        let v = g.value(p).data().to_vec();
        assert!((v[0] + v[1] + v[2] - 1.0).abs() < 1e-15);
        assert!((v[3] - 0.5).abs() < 1e-15 && v[5] == 0.0);
        // the gradient of the sum of probabilities is zero
        let m = g.mean(p).unwrap();
        let grads = g.backward(m).unwrap();
        assert!(grads.get(x).unwrap().iter().all(|d| d.abs() < 1e-15));
    }
}
