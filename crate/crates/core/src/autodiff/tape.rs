//! Reverse-mode differentiation over a dynamically recorded tape.
//!
//! Every operation appends a node holding its forward value; [`Tape::backward`]
//! replays the nodes in reverse order. Nodes only reference earlier nodes, so
//! the recorded graph is acyclic by construction. Parameters are borrowed
//! from a [`ParamStore`] rather than copied.

use super::{ParamGrads, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Tanh,
    Sigmoid,
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    /// `y = a * x + b`
    Affine(Var, f64),
    Softmax(Var),
    Concat(Vec<Var>),
    Mean(Vec<Var>),
    Stack(Vec<Var>),
    /// matrix + row vector added to every row
    AddRow(Var, Var),
    Row(Var, usize),
    /// scalar sum of the selected entries of a vector
    PickSum(Var, Vec<usize>),
    Sum(Var),
    Ln {
        input: Var,
        floor: f64,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    /// `None` for parameter nodes, whose value lives in the store.
    value: Option<Vec<f64>>,
}

pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    floor_hits: usize,
}

/// Per-node adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the root with respect to `var`; `None` if `var` did not
    /// influence the root.
    pub fn wrt(&self, var: Var) -> Option<&[f64]> {
        self.nodes.get(var.0).and_then(|g| g.as_deref())
    }
}

fn shape_numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
            floor_hits: 0,
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of `ln_floored` calls whose input fell below the floor.
    pub fn floor_hits(&self) -> usize {
        self.floor_hits
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>) -> Var {
        debug_assert_eq!(shape_numel(&shape), value.len());
        self.nodes.push(Node {
            op,
            shape,
            value: Some(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &[f64] {
        let node = &self.nodes[var.0];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(id)) => self.store.tensor(*id).values(),
            (None, _) => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        &self.nodes[var.0].shape
    }

    pub fn tensor(&self, var: Var) -> Tensor {
        Tensor::new(self.shape(var).to_vec(), self.value(var).to_vec())
            .expect("tape nodes always hold consistent shapes")
    }

    /// Scalar value of a one-element node.
    pub fn scalar_value(&self, var: Var) -> f64 {
        self.value(var)[0]
    }

    pub fn input(&mut self, tensor: Tensor) -> Var {
        let shape = tensor.shape().to_vec();
        self.push(Op::Input, shape, tensor.into_values())
    }

    pub fn vector(&mut self, values: Vec<f64>) -> Result<Var> {
        Ok(self.input(Tensor::vector(values)?))
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.input(Tensor::scalar(value))
    }

    pub fn zeros(&mut self, len: usize) -> Result<Var> {
        self.vector(vec![0.0; len])
    }

    /// Leaf node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(var) = self.param_vars[id.0] {
            return var;
        }
        let shape = self.store.tensor(id).shape().to_vec();
        self.nodes.push(Node {
            op: Op::Param(id),
            shape,
            value: None,
        });
        let var = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(var);
        var
    }

    /// Matrix product. A rank-1 left operand is a row vector and a rank-1
    /// right operand is a column vector; the result drops that unit axis.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (m, k, n, shape) = match (sa.as_slice(), sb.as_slice()) {
            (&[k], &[k2, n]) if k == k2 => (1, k, n, vec![n]),
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n, vec![m, n]),
            (&[m, k], &[k2]) if k == k2 => (m, k, 1, vec![m]),
            _ => return Err(Error::shape("matmul", &sa, &sb)),
        };
        let out = matmul_kernel(self.value(a), self.value(b), m, k, n);
        Ok(self.push(Op::MatMul(a, b), shape, out))
    }

    pub fn elementwise(&mut self, op: Elementwise, args: &[Var]) -> Result<Var> {
        match (op, args) {
            (Elementwise::Add, &[a, b]) => self.add(a, b),
            (Elementwise::Sub, &[a, b]) => self.sub(a, b),
            (Elementwise::Mul, &[a, b]) => self.mul(a, b),
            (Elementwise::Tanh, &[a]) => Ok(self.tanh(a)),
            (Elementwise::Sigmoid, &[a]) => Ok(self.sigmoid(a)),
            _ => Err(Error::Domain(format!(
                "{op:?} called with {} operands",
                args.len()
            ))),
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Vec<usize>, Vec<f64>)> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(name, self.shape(a), self.shape(b)));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok((self.shape(a).to_vec(), out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, out) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), shape, out))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, out) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), shape, out))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, out) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), shape, out))
    }

    fn unary(&mut self, op: Op, x: Var, f: impl Fn(f64) -> f64) -> Var {
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(op, shape, out)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(Op::Tanh(x), x, f64::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Op::Sigmoid(x), x, sigmoid)
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        self.unary(Op::Affine(x, scale), x, |v| scale * v + shift)
    }

    /// `1 - x`, elementwise.
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 1.0)
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 1 {
            return Err(Error::shape("softmax", &shape, &[]));
        }
        let out = softmax_values(self.value(x))?;
        Ok(self.push(Op::Softmax(x), shape, out))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Domain("concat of zero parts".into()));
        }
        let mut out = Vec::new();
        for &p in parts {
            if self.shape(p).len() != 1 {
                return Err(Error::shape("concat", self.shape(p), &[]));
            }
            out.extend_from_slice(self.value(p));
        }
        let shape = vec![out.len()];
        Ok(self.push(Op::Concat(parts.to_vec()), shape, out))
    }

    /// Elementwise mean of equally shaped vectors, summed left to right.
    pub fn mean(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Domain("mean of an empty list".into()))?;
        let shape = self.shape(first).to_vec();
        let mut acc = vec![0.0; self.value(first).len()];
        for &p in parts {
            if self.shape(p) != shape.as_slice() {
                return Err(Error::shape("mean", &shape, self.shape(p)));
            }
            for (a, v) in acc.iter_mut().zip(self.value(p)) {
                *a += v;
            }
        }
        let n = parts.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(self.push(Op::Mean(parts.to_vec()), shape, acc))
    }

    /// Stack equally sized vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let first = *rows
            .first()
            .ok_or_else(|| Error::Domain("stack of an empty list".into()))?;
        let row_shape = self.shape(first).to_vec();
        if row_shape.len() != 1 {
            return Err(Error::shape("stack", &row_shape, &[]));
        }
        let mut out = Vec::with_capacity(row_shape[0] * rows.len());
        for &r in rows {
            if self.shape(r) != row_shape.as_slice() {
                return Err(Error::shape("stack", &row_shape, self.shape(r)));
            }
            out.extend_from_slice(self.value(r));
        }
        let shape = vec![rows.len(), row_shape[0]];
        Ok(self.push(Op::Stack(rows.to_vec()), shape, out))
    }

    pub fn add_row(&mut self, matrix: Var, row: Var) -> Result<Var> {
        let (sm, sr) = (self.shape(matrix).to_vec(), self.shape(row).to_vec());
        if sm.len() != 2 || sr.len() != 1 || sm[1] != sr[0] {
            return Err(Error::shape("add_row", &sm, &sr));
        }
        let r = self.value(row).to_vec();
        let out = self
            .value(matrix)
            .chunks(sm[1])
            .flat_map(|chunk| chunk.iter().zip(&r).map(|(a, b)| a + b))
            .collect();
        Ok(self.push(Op::AddRow(matrix, row), sm, out))
    }

    /// Row `index` of a matrix (embedding lookup).
    pub fn row(&mut self, matrix: Var, index: usize) -> Result<Var> {
        let sm = self.shape(matrix).to_vec();
        if sm.len() != 2 || index >= sm[0] {
            return Err(Error::shape("row", &sm, &[index]));
        }
        let d = sm[1];
        let out = self.value(matrix)[index * d..(index + 1) * d].to_vec();
        Ok(self.push(Op::Row(matrix, index), vec![d], out))
    }

    /// Scalar holding the sum of `x[i]` over `indices` (duplicates count twice).
    pub fn pick_sum(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let len = self.value(x).len();
        if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
            return Err(Error::shape("pick_sum", self.shape(x), &[bad]));
        }
        let vals = self.value(x);
        let s = indices.iter().fold(0.0, |acc, &i| acc + vals[i]);
        Ok(self.push(Op::PickSum(x, indices.to_vec()), vec![1], vec![s]))
    }

    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        self.pick_sum(x, &[index])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().fold(0.0, |acc, v| acc + v);
        self.push(Op::Sum(x), vec![1], vec![s])
    }

    /// Sum of several scalars, left to right.
    pub fn sum_scalars(&mut self, xs: &[Var]) -> Result<Var> {
        let Some((&first, rest)) = xs.split_first() else {
            return Ok(self.scalar(0.0));
        };
        rest.iter().try_fold(first, |acc, &x| self.add(acc, x))
    }

    /// `ln(max(x, floor))`; inputs below the floor get zero gradient and are
    /// counted in [`Tape::floor_hits`].
    pub fn ln_floored(&mut self, x: Var, floor: f64) -> Var {
        let mut floored = false;
        let out: Vec<f64> = self
            .value(x)
            .iter()
            .map(|&v| {
                if v < floor {
                    floored = true;
                    floor.ln()
                } else {
                    v.ln()
                }
            })
            .collect();
        if floored {
            self.floor_hits += 1;
        }
        let shape = self.shape(x).to_vec();
        self.push(Op::Ln { input: x, floor }, shape, out)
    }

    /// Reverse pass from a scalar root. Adjoint buffers are freshly zeroed
    /// on each call.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::Domain(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &upstream, &mut grads);
            grads[idx] = Some(upstream);
        }
        Ok(Gradients { nodes: grads })
    }

    /// Collect parameter gradients out of a backward result.
    pub fn param_grads(&self, grads: &Gradients) -> ParamGrads {
        let mut out = ParamGrads::zeros_like(self.store);
        self.accumulate_param_grads(grads, &mut out, 1.0);
        out
    }

    /// `out += scale * dRoot/dParam` for every parameter used on this tape.
    pub fn accumulate_param_grads(&self, grads: &Gradients, out: &mut ParamGrads, scale: f64) {
        for (pid, var) in self.param_vars.iter().enumerate() {
            let Some(var) = var else { continue };
            let Some(g) = grads.wrt(*var) else { continue };
            for (d, s) in out.get_mut(ParamId(pid)).iter_mut().zip(g) {
                *d += scale * s;
            }
        }
    }

    fn propagate(&self, idx: usize, up: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out_val = node.value.as_deref();
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k) = if sa.len() == 1 { (1, sa[0]) } else { (sa[0], sa[1]) };
                let n = if sb.len() == 1 { 1 } else { sb[1] };
                let (av, bv) = (self.value(*a), self.value(*b));
                // dA = dC * B^T
                let ga = accum(grads, *a, av.len());
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += up[i * n + j] * bv[p * n + j];
                        }
                        ga[i * k + p] += s;
                    }
                }
                // dB = A^T * dC
                let gb = accum(grads, *b, bv.len());
                for i in 0..m {
                    for p in 0..k {
                        let aip = av[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        let row = &mut gb[p * n..(p + 1) * n];
                        for (j, g) in row.iter_mut().enumerate() {
                            *g += aip * up[i * n + j];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                add_into(accum(grads, *a, up.len()), up, 1.0);
                add_into(accum(grads, *b, up.len()), up, 1.0);
            }
            Op::Sub(a, b) => {
                add_into(accum(grads, *a, up.len()), up, 1.0);
                add_into(accum(grads, *b, up.len()), up, -1.0);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = accum(grads, *a, up.len());
                for ((g, u), y) in ga.iter_mut().zip(up).zip(bv) {
                    *g += u * y;
                }
                let gb = accum(grads, *b, up.len());
                for ((g, u), x) in gb.iter_mut().zip(up).zip(av) {
                    *g += u * x;
                }
            }
            Op::Tanh(x) => {
                let y = out_val.expect("tanh value");
                let gx = accum(grads, *x, up.len());
                for ((g, u), t) in gx.iter_mut().zip(up).zip(y) {
                    *g += u * (1.0 - t * t);
                }
            }
            Op::Sigmoid(x) => {
                let y = out_val.expect("sigmoid value");
                let gx = accum(grads, *x, up.len());
                for ((g, u), s) in gx.iter_mut().zip(up).zip(y) {
                    *g += u * s * (1.0 - s);
                }
            }
            Op::Affine(x, scale) => {
                add_into(accum(grads, *x, up.len()), up, *scale);
            }
            Op::Softmax(x) => {
                let y = out_val.expect("softmax value");
                let dot = up.iter().zip(y).fold(0.0, |acc, (u, p)| acc + u * p);
                let gx = accum(grads, *x, up.len());
                for ((g, u), p) in gx.iter_mut().zip(up).zip(y) {
                    *g += p * (u - dot);
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    add_into(accum(grads, p, len), &up[offset..offset + len], 1.0);
                    offset += len;
                }
            }
            Op::Mean(parts) => {
                let scale = 1.0 / parts.len() as f64;
                for &p in parts {
                    add_into(accum(grads, p, up.len()), up, scale);
                }
            }
            Op::Stack(rows) => {
                let d = self.shape(rows[0])[0];
                for (i, &r) in rows.iter().enumerate() {
                    add_into(accum(grads, r, d), &up[i * d..(i + 1) * d], 1.0);
                }
            }
            Op::AddRow(m, r) => {
                add_into(accum(grads, *m, up.len()), up, 1.0);
                let d = self.shape(*r)[0];
                let gr = accum(grads, *r, d);
                for chunk in up.chunks(d) {
                    add_into(gr, chunk, 1.0);
                }
            }
            Op::Row(m, index) => {
                let len = self.value(*m).len();
                let d = up.len();
                let gm = accum(grads, *m, len);
                add_into(&mut gm[index * d..(index + 1) * d], up, 1.0);
            }
            Op::PickSum(x, indices) => {
                let len = self.value(*x).len();
                let gx = accum(grads, *x, len);
                for &i in indices {
                    gx[i] += up[0];
                }
            }
            Op::Sum(x) => {
                let len = self.value(*x).len();
                accum(grads, *x, len).iter_mut().for_each(|g| *g += up[0]);
            }
            Op::Ln { input, floor } => {
                let xv = self.value(*input);
                let gx = accum(grads, *input, up.len());
                for ((g, u), x) in gx.iter_mut().zip(up).zip(xv) {
                    if *x >= *floor {
                        *g += u / x;
                    }
                }
            }
        }
    }
}

fn accum(grads: &mut [Option<Vec<f64>>], var: Var, len: usize) -> &mut Vec<f64> {
    grads[var.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += aip * bv;
            }
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted softmax over a slice.
pub fn softmax_values(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Domain("softmax of an empty vector".into()));
    }
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total = exps.iter().fold(0.0, |acc, e| acc + e);
    Ok(exps.into_iter().map(|e| e / total).collect())
}
