//! Reverse-mode differentiation over a linear tape of matrix operations.
//!
//! Every operation appends a node holding its forward value. [`Tape::backward`]
//! walks the nodes in reverse, accumulating the gradient of a scalar output
//! with respect to every earlier node.

use alloc::vec;
use alloc::vec::Vec;

use super::tensor::Matrix;
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    SoftmaxRows(Var),
    /// `scale · x / ‖x‖` per row; keeps the row norms.
    NormalizeRows { input: Var, scale: f64, norms: Vec<f64> },
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    /// Mean softmax cross-entropy of each row against a target column.
    SoftmaxXent { logits: Var, targets: Vec<usize> },
    /// Mean `−ln max(p[i, target], floor)`.
    NegLogPick { probs: Var, targets: Vec<usize>, floor: f64 },
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every tape node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, zeros of `shape` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.data[0]
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    /// Adds the `1 × cols` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!(b.rows, 1, "bias must be a single row");
        let mut v = self.value(a).clone();
        assert_eq!(v.cols, b.cols, "bias width differs");
        for r in 0..v.rows {
            v.row_mut(r).iter_mut().zip(&b.data).for_each(|(x, y)| *x += y);
        }
        self.push(v, Op::AddRow(a, bias))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scaled(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for r in 0..v.rows {
            math::softmax_in_place(v.row_mut(r));
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Rescales every row to L2 norm `scale`. Returns `None` when a row has
    /// zero norm.
    pub fn normalize_rows(&mut self, a: Var, scale: f64) -> Option<Var> {
        let mut v = self.value(a).clone();
        let mut norms = Vec::with_capacity(v.rows);
        for r in 0..v.rows {
            let row = v.row_mut(r);
            let n = math::norm_f64(row);
            if !(n > 0.0 && n.is_finite()) {
                return None;
            }
            row.iter_mut().for_each(|x| *x *= scale / n);
            norms.push(n);
        }
        Some(self.push(
            v,
            Op::NormalizeRows {
                input: a,
                scale,
                norms,
            },
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = parts.first().map_or(0, |&p| self.value(p).cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols, cols, "concatenated rows differ in width");
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).mean_rows();
        self.push(v, Op::MeanRows(a))
    }

    pub fn softmax_xent(&mut self, logits: Var, targets: &[usize]) -> Var {
        let z = self.value(logits);
        assert_eq!(z.rows, targets.len(), "one target per row");
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = z.row(r);
            total += math::log_sum_exp(row) - row[t];
        }
        let v = Matrix::from_vec(1, 1, vec![total / targets.len() as f64]);
        self.push(
            v,
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
            },
        )
    }

    pub fn neg_log_pick(&mut self, probs: Var, targets: &[usize], floor: f64) -> Var {
        let p = self.value(probs);
        assert_eq!(p.rows, targets.len(), "one target per row");
        let total: f64 = targets
            .iter()
            .enumerate()
            .map(|(r, &t)| -libm::log(p.get(r, t).max(floor)))
            .sum();
        let v = Matrix::from_vec(1, 1, vec![total / targets.len() as f64]);
        self.push(
            v,
            Op::NegLogPick {
                probs,
                targets: targets.to_vec(),
                floor,
            },
        )
    }

    /// `x · weight + bias` for `weight: in × out`, `bias: 1 × out`.
    pub fn affine(&mut self, x: Var, weight: Var, bias: Var) -> Var {
        let xw = self.matmul(x, weight);
        self.add_row(xw, bias)
    }

    /// Gradients of the `1 × 1` node `output`.
    pub fn backward(&self, output: Var) -> Gradients {
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Matrix::from_vec(1, 1, vec![1.0]));
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    accumulate(&mut grads[a.0], g.matmul(&bv.transpose()));
                    accumulate(&mut grads[b.0], av.transpose().matmul(&g));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g.clone());
                }
                Op::AddRow(a, bias) => {
                    accumulate(&mut grads[bias.0], g.mean_rows().scaled(g.rows as f64));
                    accumulate(&mut grads[a.0], g.clone());
                }
                Op::Scale(a, s) => accumulate(&mut grads[a.0], g.scaled(*s)),
                Op::Transpose(a) => accumulate(&mut grads[a.0], g.transpose()),
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut dx = Matrix::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let inner = math::dot_f64(yr, gr);
                        for ((d, &yv), &gv) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *d = yv * (gv - inner);
                        }
                    }
                    accumulate(&mut grads[a.0], dx);
                }
                Op::NormalizeRows { input, scale, norms } => {
                    let y = &node.value;
                    let mut dx = Matrix::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        // u = y / scale is the unit row; dx = (s/n)(g − u(u·g)).
                        let (yr, gr) = (y.row(r), g.row(r));
                        let ug = math::dot_f64(yr, gr) / scale;
                        let f = scale / norms[r];
                        for ((d, &yv), &gv) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *d = f * (gv - yv / scale * ug);
                        }
                    }
                    accumulate(&mut grads[input.0], dx);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let rows = self.value(*p).rows;
                        let slice = g.data[offset * g.cols..(offset + rows) * g.cols].to_vec();
                        accumulate(&mut grads[p.0], Matrix::from_vec(rows, g.cols, slice));
                        offset += rows;
                    }
                }
                Op::MeanRows(a) => {
                    let av = self.value(*a);
                    let mut dx = Matrix::zeros(av.rows, av.cols);
                    let n = av.rows as f64;
                    for r in 0..av.rows {
                        dx.row_mut(r)
                            .iter_mut()
                            .zip(&g.data)
                            .for_each(|(d, gv)| *d = gv / n);
                    }
                    accumulate(&mut grads[a.0], dx);
                }
                Op::SoftmaxXent { logits, targets } => {
                    let z = self.value(*logits);
                    let scale = g.data[0] / targets.len() as f64;
                    let mut dz = z.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        let row = dz.row_mut(r);
                        math::softmax_in_place(row);
                        row[t] -= 1.0;
                        row.iter_mut().for_each(|x| *x *= scale);
                    }
                    accumulate(&mut grads[logits.0], dz);
                }
                Op::NegLogPick {
                    probs,
                    targets,
                    floor,
                } => {
                    let p = self.value(*probs);
                    let scale = g.data[0] / targets.len() as f64;
                    let mut dp = Matrix::zeros(p.rows, p.cols);
                    for (r, &t) in targets.iter().enumerate() {
                        let pv = p.get(r, t);
                        if pv > *floor {
                            dp.data[r * p.cols + t] = -scale / pv;
                        }
                    }
                    accumulate(&mut grads[probs.0], dp);
                }
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }
}
