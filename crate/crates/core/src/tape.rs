//! Define-by-run tape with reverse-mode gradients.
//!
//! A [`Tape`] records primitive operations in creation order (which is a
//! topological order by construction) and replays them in reverse to
//! accumulate gradients. Tapes are rebuilt per minibatch; parameters are
//! re-registered as leaves each time.
//!
//! The op set is exactly what the adversarial training objective needs:
//! affine layers, ReLU, row softmax, mean cross-entropy over index targets,
//! gradient reversal, row scaling for pseudo-label weighting, and scalar
//! arithmetic to combine loss terms.

use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Probability floor inside cross-entropy, avoiding `-ln(0)`.
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    /// out = x W + b, b broadcast over rows.
    Affine {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Relu {
        x: NodeId,
    },
    /// Row-wise softmax with max-subtraction.
    Softmax {
        x: NodeId,
    },
    /// Identity forward; backward multiplies upstream by `-coeff`.
    GradReverse {
        x: NodeId,
        coeff: S,
    },
    /// Mean over rows of `-ln(max(p[i, target_i], floor))`.
    MeanCrossEntropy {
        p: NodeId,
        targets: Vec<usize>,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        x: NodeId,
        c: S,
    },
    Sum {
        x: NodeId,
    },
    SliceRows {
        x: NodeId,
        start: usize,
    },
    Column {
        x: NodeId,
        col: usize,
    },
    /// out[i,:] = w[i] * x[i,:], with w a recorded `[n,1]` node.
    ScaleRows {
        x: NodeId,
        w: NodeId,
    },
    /// Same scaling with constant weights (no gradient into the weights).
    ScaleRowsConst {
        x: NodeId,
        weights: Vec<S>,
    },
}

#[derive(Debug, Clone)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
}

/// Gradient slots for every tape node, produced by [`Tape::backward`].
///
/// Nodes the loss does not reach hold exact zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<S> {
    slots: Vec<Vec<S>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of the loss with respect to the given node's values.
    pub fn wrt(&self, id: NodeId) -> &[S] {
        &self.slots[id.index()]
    }
}

/// Recorded computation over tensors.
#[derive(Debug, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.index()].value
    }

    /// Forward value of a 1x1 node.
    pub fn scalar_value(&self, id: NodeId) -> S {
        self.nodes[id.index()].value.item()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, op });
        id
    }

    /// Register an input or parameter tensor.
    pub fn leaf(&mut self, value: Tensor<S>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// New leaf carrying the same values as `x` but cut off from gradients.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).clone();
        self.push(value, Op::Leaf)
    }

    /// `out[i,j] = sum_k x[i,k] w[k,j] + b[j]`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (n, d_in) = (xv.rows(), xv.cols());
        let (wk, d_out) = (wv.rows(), wv.cols());
        if d_in != wk || bv.numel() != d_out {
            return Err(Error::Shape(format!(
                "affine: x is {n}x{d_in}, W is {wk}x{d_out}, b has {} entries",
                bv.numel()
            )));
        }
        let mut out = vec![S::zero(); n * d_out];
        for i in 0..n {
            let xr = xv.row_slice(i);
            let or = &mut out[i * d_out..(i + 1) * d_out];
            or.copy_from_slice(bv.values());
            for (k, &xik) in xr.iter().enumerate() {
                let wr = wv.row_slice(k);
                for j in 0..d_out {
                    or[j] += xik * wr[j];
                }
            }
        }
        let value = Tensor::matrix(n, d_out, out)?;
        Ok(self.push(value, Op::Affine { x, w, b }))
    }

    /// Element-wise `max(0, x)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let values = xv.values().iter().map(|&v| v.max(S::zero())).collect();
        let value = Tensor::new(xv.shape().to_vec(), values).expect("relu preserves shape");
        self.push(value, Op::Relu { x })
    }

    /// Row-wise softmax, computed with max-subtraction for overflow safety.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let (n, k) = (xv.rows(), xv.cols());
        if k < 2 {
            return Err(Error::Shape(format!(
                "softmax needs at least 2 columns, got {k}"
            )));
        }
        let mut out = Vec::with_capacity(n * k);
        for i in 0..n {
            let row = xv.row_slice(i);
            let m = row.iter().cloned().fold(S::neg_infinity(), S::max);
            let exps: Vec<S> = row.iter().map(|&z| (z - m).exp()).collect();
            let total = exps.iter().fold(S::zero(), |acc, &e| acc + e);
            out.extend(exps.into_iter().map(|e| e / total));
        }
        let value = Tensor::matrix(n, k, out)?;
        Ok(self.push(value, Op::Softmax { x }))
    }

    /// Identity forward; backward multiplies the upstream gradient by `-coeff`.
    pub fn grad_reverse(&mut self, x: NodeId, coeff: S) -> Result<NodeId> {
        if !coeff.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "gradient reversal coefficient must be finite, got {coeff}"
            )));
        }
        let value = self.value(x).clone();
        Ok(self.push(value, Op::GradReverse { x, coeff }))
    }

    /// `-ln(max(p[target], floor))` for a single probability row.
    pub fn cross_entropy(&mut self, p: NodeId, true_index: usize) -> Result<NodeId> {
        let pv = self.value(p);
        if pv.rows() != 1 {
            return Err(Error::Shape(format!(
                "cross_entropy expects one probability row, got {} rows",
                pv.rows()
            )));
        }
        self.mean_cross_entropy(p, &[true_index])
    }

    /// Mean over rows of `-ln(max(p[i, target_i], floor))`.
    pub fn mean_cross_entropy(&mut self, p: NodeId, targets: &[usize]) -> Result<NodeId> {
        let pv = self.value(p);
        let (n, k) = (pv.rows(), pv.cols());
        if targets.len() != n {
            return Err(Error::Shape(format!(
                "{n} probability rows but {} targets",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::InvalidArgument(format!(
                "target index {bad} out of range for {k} classes"
            )));
        }
        let floor = S::from_f64(PROB_FLOOR);
        let mut total = S::zero();
        for (i, &t) in targets.iter().enumerate() {
            total -= pv.get(i, t).max(floor).ln();
        }
        let value = Tensor::scalar(total / S::from_usize(n));
        Ok(self.push(
            value,
            Op::MeanCrossEntropy {
                p,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Element-wise sum of two same-shape nodes.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Shape(format!(
                "add: shapes {:?} and {:?} differ",
                av.shape(),
                bv.shape()
            )));
        }
        let values = av
            .values()
            .iter()
            .zip(bv.values())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(av.shape().to_vec(), values)?;
        Ok(self.push(value, Op::Add { a, b }))
    }

    /// Element-wise product of two same-shape nodes.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Shape(format!(
                "mul: shapes {:?} and {:?} differ",
                av.shape(),
                bv.shape()
            )));
        }
        let values = av
            .values()
            .iter()
            .zip(bv.values())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(av.shape().to_vec(), values)?;
        Ok(self.push(value, Op::Mul { a, b }))
    }

    /// Multiply every element by a constant.
    pub fn scale(&mut self, x: NodeId, c: S) -> NodeId {
        let xv = self.value(x);
        let values = xv.values().iter().map(|&v| v * c).collect();
        let value = Tensor::new(xv.shape().to_vec(), values).expect("scale preserves shape");
        self.push(value, Op::Scale { x, c })
    }

    /// Sum of all elements, as a 1x1 node.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total = self
            .value(x)
            .values()
            .iter()
            .fold(S::zero(), |acc, &v| acc + v);
        self.push(Tensor::scalar(total), Op::Sum { x })
    }

    /// Copy of rows `start .. start+len`.
    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        if len == 0 || start + len > n {
            return Err(Error::Shape(format!(
                "slice_rows {start}..{} out of range for {n} rows",
                start + len
            )));
        }
        let values = xv.values()[start * c..(start + len) * c].to_vec();
        let value = Tensor::matrix(len, c, values)?;
        Ok(self.push(value, Op::SliceRows { x, start }))
    }

    /// One column as an `[n,1]` node.
    pub fn column(&mut self, x: NodeId, col: usize) -> Result<NodeId> {
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        if col >= c {
            return Err(Error::Shape(format!(
                "column {col} out of range for {c} columns"
            )));
        }
        let values = (0..n).map(|i| xv.get(i, col)).collect();
        let value = Tensor::matrix(n, 1, values)?;
        Ok(self.push(value, Op::Column { x, col }))
    }

    /// `out[i,:] = w[i] * x[i,:]` with `w` an `[n,1]` node on the tape.
    pub fn scale_rows(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (n, c) = (xv.rows(), xv.cols());
        if wv.numel() != n {
            return Err(Error::Shape(format!(
                "scale_rows: {n} rows but {} weights",
                wv.numel()
            )));
        }
        let mut values = Vec::with_capacity(n * c);
        for (i, &wi) in wv.values().iter().enumerate() {
            values.extend(xv.row_slice(i).iter().map(|&v| wi * v));
        }
        let value = Tensor::matrix(n, c, values)?;
        Ok(self.push(value, Op::ScaleRows { x, w }))
    }

    /// `out[i,:] = weights[i] * x[i,:]` with constant weights.
    pub fn scale_rows_const(&mut self, x: NodeId, weights: &[S]) -> Result<NodeId> {
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        if weights.len() != n {
            return Err(Error::Shape(format!(
                "scale_rows_const: {n} rows but {} weights",
                weights.len()
            )));
        }
        let mut values = Vec::with_capacity(n * c);
        for (i, &wi) in weights.iter().enumerate() {
            values.extend(xv.row_slice(i).iter().map(|&v| wi * v));
        }
        let value = Tensor::matrix(n, c, values)?;
        Ok(self.push(
            value,
            Op::ScaleRowsConst {
                x,
                weights: weights.to_vec(),
            },
        ))
    }

    /// Activation pattern (`input > 0`) of every ReLU input on the tape, in
    /// recording order. Two evaluations of the same graph at nearby
    /// parameters are separated by a kink iff their patterns differ.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu { x } = &node.op {
                out.extend(self.value(*x).values().iter().map(|v| *v > S::zero()));
            }
        }
        out
    }

    /// Smallest `|input|` over every recorded ReLU node.
    ///
    /// Central differences are only valid where no ReLU flips state inside
    /// the perturbation interval; gradient-checking tests use this margin to
    /// confirm the graph sits clear of the kinks.
    pub fn min_relu_input_magnitude(&self) -> Option<S> {
        let mut min: Option<S> = None;
        for node in &self.nodes {
            if let Op::Relu { x } = &node.op {
                for &v in self.value(*x).values() {
                    let m = v.abs();
                    min = Some(match min {
                        Some(cur) => cur.min(m),
                        None => m,
                    });
                }
            }
        }
        min
    }

    /// Reverse pass from a scalar loss node.
    ///
    /// Deterministic and side-effect free: repeated calls over the same tape
    /// return identical gradient maps.
    // index loops throughout: each step reads the node's slot while writing
    // its inputs' slots, which iterator forms cannot express without
    // splitting the arena
    #[allow(clippy::needless_range_loop)]
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<S>> {
        if !self.value(loss).is_scalar_shape() {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut slots: Vec<Vec<S>> = self
            .nodes
            .iter()
            .map(|n| vec![S::zero(); n.value.numel()])
            .collect();
        slots[loss.index()][0] = S::one();

        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Affine { x, w, b } => {
                    let g = std::mem::take(&mut slots[idx]);
                    let xv = self.value(*x).clone();
                    let wv = self.value(*w).clone();
                    let (n, d_in) = (xv.rows(), xv.cols());
                    let d_out = wv.cols();
                    {
                        let gx = &mut slots[x.index()];
                        for i in 0..n {
                            let gr = &g[i * d_out..(i + 1) * d_out];
                            for k in 0..d_in {
                                let wr = wv.row_slice(k);
                                let mut acc = S::zero();
                                for j in 0..d_out {
                                    acc += gr[j] * wr[j];
                                }
                                gx[i * d_in + k] += acc;
                            }
                        }
                    }
                    {
                        let gw = &mut slots[w.index()];
                        for i in 0..n {
                            let xr = xv.row_slice(i);
                            let gr = &g[i * d_out..(i + 1) * d_out];
                            for (k, &xik) in xr.iter().enumerate() {
                                for j in 0..d_out {
                                    gw[k * d_out + j] += xik * gr[j];
                                }
                            }
                        }
                    }
                    {
                        let gb = &mut slots[b.index()];
                        for i in 0..n {
                            let gr = &g[i * d_out..(i + 1) * d_out];
                            for j in 0..d_out {
                                gb[j] += gr[j];
                            }
                        }
                    }
                    slots[idx] = g;
                }
                Op::Relu { x } => {
                    let xv = self.value(*x);
                    for j in 0..xv.numel() {
                        if xv.values()[j] > S::zero() {
                            let gj = slots[idx][j];
                            slots[x.index()][j] += gj;
                        }
                    }
                }
                Op::Softmax { x } => {
                    let p = node.value.clone();
                    let (n, k) = (p.rows(), p.cols());
                    for i in 0..n {
                        let pr = p.row_slice(i);
                        let gr: Vec<S> = slots[idx][i * k..(i + 1) * k].to_vec();
                        let dot = pr
                            .iter()
                            .zip(&gr)
                            .fold(S::zero(), |acc, (&pj, &gj)| acc + pj * gj);
                        let gx = &mut slots[x.index()];
                        for j in 0..k {
                            gx[i * k + j] += pr[j] * (gr[j] - dot);
                        }
                    }
                }
                Op::GradReverse { x, coeff } => {
                    let c = *coeff;
                    for j in 0..node.value.numel() {
                        let gj = slots[idx][j];
                        slots[x.index()][j] += -c * gj;
                    }
                }
                Op::MeanCrossEntropy { p, targets } => {
                    let g = slots[idx][0];
                    let pv = self.value(*p);
                    let (n, k) = (pv.rows(), pv.cols());
                    let floor = S::from_f64(PROB_FLOOR);
                    let scale = g / S::from_usize(n);
                    let gp = &mut slots[p.index()];
                    for (i, &t) in targets.iter().enumerate() {
                        let pit = pv.get(i, t);
                        if pit >= floor {
                            gp[i * k + t] -= scale / pit;
                        }
                    }
                }
                Op::Add { a, b } => {
                    for j in 0..node.value.numel() {
                        let gj = slots[idx][j];
                        slots[a.index()][j] += gj;
                        slots[b.index()][j] += gj;
                    }
                }
                Op::Mul { a, b } => {
                    let av = self.value(*a).clone();
                    let bv = self.value(*b).clone();
                    for j in 0..node.value.numel() {
                        let gj = slots[idx][j];
                        slots[a.index()][j] += gj * bv.values()[j];
                        slots[b.index()][j] += gj * av.values()[j];
                    }
                }
                Op::Scale { x, c } => {
                    let c = *c;
                    for j in 0..node.value.numel() {
                        let gj = slots[idx][j];
                        slots[x.index()][j] += c * gj;
                    }
                }
                Op::Sum { x } => {
                    let g = slots[idx][0];
                    for v in slots[x.index()].iter_mut() {
                        *v += g;
                    }
                }
                Op::SliceRows { x, start } => {
                    let c = node.value.cols();
                    let offset = start * c;
                    for j in 0..node.value.numel() {
                        let gj = slots[idx][j];
                        slots[x.index()][offset + j] += gj;
                    }
                }
                Op::Column { x, col } => {
                    let c = self.value(*x).cols();
                    for i in 0..node.value.rows() {
                        let gi = slots[idx][i];
                        slots[x.index()][i * c + col] += gi;
                    }
                }
                Op::ScaleRows { x, w } => {
                    let xv = self.value(*x).clone();
                    let wv = self.value(*w).clone();
                    let (n, c) = (xv.rows(), xv.cols());
                    for i in 0..n {
                        let wi = wv.values()[i];
                        let mut wdot = S::zero();
                        for j in 0..c {
                            let gj = slots[idx][i * c + j];
                            slots[x.index()][i * c + j] += wi * gj;
                            wdot += gj * xv.get(i, j);
                        }
                        slots[w.index()][i] += wdot;
                    }
                }
                Op::ScaleRowsConst { x, weights } => {
                    let c = node.value.cols();
                    for (i, &wi) in weights.iter().enumerate() {
                        for j in 0..c {
                            let gj = slots[idx][i * c + j];
                            slots[x.index()][i * c + j] += wi * gj;
                        }
                    }
                }
            }
        }
        Ok(Gradients { slots })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::matrix(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn affine_identity_weights() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(1, 2, &[1.0, 2.0]));
        let w = tape.leaf(t(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let b = tape.leaf(t(1, 2, &[0.0, 0.0]));
        let y = tape.affine(x, w, b).unwrap();
        assert_eq!(tape.value(y).values(), &[1.0, 2.0]);
    }

    #[test]
    fn affine_zero_input_passes_bias() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(1, 2, &[0.0, 0.0]));
        let w = tape.leaf(t(2, 2, &[5.0, -2.0, 7.0, 0.25]));
        let b = tape.leaf(t(1, 2, &[3.0, -1.0]));
        let y = tape.affine(x, w, b).unwrap();
        assert_eq!(tape.value(y).values(), &[3.0, -1.0]);
    }

    #[test]
    fn affine_direct_arithmetic() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(1, 2, &[1.0, 1.0]));
        let w = tape.leaf(t(2, 2, &[2.0, 0.0, 0.0, 3.0]));
        let b = tape.leaf(t(1, 2, &[1.0, 1.0]));
        let y = tape.affine(x, w, b).unwrap();
        assert_eq!(tape.value(y).values(), &[3.0, 4.0]);
    }

    #[test]
    fn affine_rejects_shape_mismatch() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(1, 3, &[1.0, 2.0, 3.0]));
        let w = tape.leaf(t(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let b = tape.leaf(t(1, 2, &[0.0, 0.0]));
        let err = tape.affine(x, w, b).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "got {err:?}");
    }

    #[test]
    fn relu_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(1, 3, &[-1.0, 0.0, 2.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).values(), &[0.0, 0.0, 2.0]);

        let neg = tape.leaf(t(1, 3, &[-3.0, -0.5, -1e-9]));
        let y = tape.relu(neg);
        assert_eq!(tape.value(y).values(), &[0.0, 0.0, 0.0]);

        let pos = tape.leaf(t(1, 3, &[0.5, 1.0, 9.0]));
        let y = tape.relu(pos);
        assert_eq!(tape.value(y).values(), &[0.5, 1.0, 9.0]);
    }

    #[test]
    fn softmax_uniform_logits() {
        let mut tape = Tape::new();
        let z = tape.leaf(t(1, 2, &[0.0, 0.0]));
        let p = tape.softmax(z).unwrap();
        assert_eq!(tape.value(p).values(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut tape = Tape::new();
        let z = tape.leaf(t(2, 3, &[0.1, -2.0, 3.0, 700.0, 701.0, 699.0]));
        let zs = tape.leaf(t(
            2,
            3,
            &[
                0.1 + 5.0,
                -2.0 + 5.0,
                3.0 + 5.0,
                700.0 - 650.0,
                701.0 - 650.0,
                699.0 - 650.0,
            ],
        ));
        let p = tape.softmax(z).unwrap();
        let ps = tape.softmax(zs).unwrap();
        for (a, b) in tape.value(p).values().iter().zip(tape.value(ps).values()) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn softmax_hand_evaluated() {
        let mut tape = Tape::new();
        let z = tape.leaf(t(1, 2, &[0.0, 3f64.ln()]));
        let p = tape.softmax(z).unwrap();
        let v = tape.value(p).values();
        assert!((v[0] - 0.25).abs() < 1e-15);
        assert!((v[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_single_column() {
        let mut tape = Tape::new();
        let z = tape.leaf(t(3, 1, &[0.0, 1.0, 2.0]));
        assert!(tape.softmax(z).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let mut tape = Tape::new();
        let p = tape.leaf(t(1, 2, &[0.5, 0.5]));
        let l = tape.cross_entropy(p, 0).unwrap();
        assert!((tape.scalar_value(l) - 2f64.ln()).abs() < 1e-15);
        let l = tape.cross_entropy(p, 1).unwrap();
        assert!((tape.scalar_value(l) - 2f64.ln()).abs() < 1e-15);

        let onehot = tape.leaf(t(1, 3, &[0.0, 1.0, 0.0]));
        let l = tape.cross_entropy(onehot, 1).unwrap();
        assert_eq!(tape.scalar_value(l), 0.0);

        let p = tape.leaf(t(1, 2, &[0.9, 0.1]));
        let l = tape.cross_entropy(p, 1).unwrap();
        // -ln(0.1) = ln 10
        assert!((tape.scalar_value(l) - std::f64::consts::LN_10).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_bad_index() {
        let mut tape = Tape::new();
        let p = tape.leaf(t(1, 2, &[0.5, 0.5]));
        assert!(tape.cross_entropy(p, 2).is_err());
    }

    #[test]
    fn grad_reverse_forward_is_identity_bit_exact() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(1, 2, &[1.2, -3.0]));
        let y = tape.grad_reverse(x, 1.0).unwrap();
        assert_eq!(tape.value(y).values()[0].to_bits(), (1.2f64).to_bits());
        assert_eq!(tape.value(y).values()[1].to_bits(), (-3.0f64).to_bits());
        assert!(tape.grad_reverse(x, f64::NAN).is_err());
    }

    #[test]
    fn grad_reverse_backward_negates() {
        // loss = sum(grad_reverse(x) * c) so the upstream gradient is c.
        let mut tape = Tape::new();
        let x = tape.leaf(t(1, 2, &[7.0, 8.0]));
        let r = tape.grad_reverse(x, 1.0).unwrap();
        let c = tape.leaf(t(1, 2, &[0.5, -1.0]));
        let prod = tape.mul(r, c).unwrap();
        let loss = tape.sum(prod);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(x), &[-0.5, 1.0]);
    }

    #[test]
    fn grad_reverse_zero_coeff_blocks_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(1, 2, &[7.0, 8.0]));
        let r = tape.grad_reverse(x, 0.0).unwrap();
        let s = tape.sum(r);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.wrt(x), &[0.0, 0.0]);
    }

    #[test]
    fn backward_sum_of_squares() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(1, 2, &[1.0, 2.0]));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(x), &[2.0, 4.0]);
    }

    #[test]
    fn backward_unreachable_parameter_gets_exact_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(1, 2, &[1.0, 2.0]));
        let w = tape.leaf(t(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let loss = tape.sum(x);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(w), &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(1, 2, &[1.0, 2.0]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn backward_is_deterministic() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(2, 2, &[0.3, -0.7, 1.1, 0.0]));
        let w = tape.leaf(t(2, 2, &[0.5, 0.25, -0.5, 1.0]));
        let b = tape.leaf(t(1, 2, &[0.1, -0.1]));
        let h = tape.affine(x, w, b).unwrap();
        let a = tape.relu(h);
        let p = tape.softmax(a).unwrap();
        let loss = tape.mean_cross_entropy(p, &[0, 1]).unwrap();
        let g1 = tape.backward(loss).unwrap();
        let g2 = tape.backward(loss).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn slice_and_column_backward_scatter() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let top = tape.slice_rows(x, 0, 2).unwrap();
        assert_eq!(tape.value(top).values(), &[1.0, 2.0, 3.0, 4.0]);
        let loss = tape.sum(top);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(x), &[1.0, 1.0, 1.0, 1.0, 0.0, 0.0]);

        let col = tape.column(x, 1).unwrap();
        assert_eq!(tape.value(col).values(), &[2.0, 4.0, 6.0]);
        let loss = tape.sum(col);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(x), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn scale_rows_variants_agree_on_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let w = tape.leaf(t(2, 1, &[0.5, 2.0]));
        let a = tape.scale_rows(x, w).unwrap();
        let b = tape.scale_rows_const(x, &[0.5, 2.0]).unwrap();
        assert_eq!(tape.value(a).values(), tape.value(b).values());
        assert_eq!(tape.value(a).values(), &[0.5, 1.0, 6.0, 8.0]);

        // gradient into the weights only for the recorded variant
        let s = tape.sum(a);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.wrt(w), &[3.0, 7.0]);
    }
}
