//! Reverse-mode differentiation over batched 2-D values.
//!
//! Every node holds a `rows x cols` matrix. Rows are batch samples, so a
//! per-sample loss reduced with [`Tape::sum`] yields exact per-row input
//! gradients in one backward pass.

use ndarray::{Array2, ArrayView2, Axis, s};

use crate::error::{shape_err, Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Handle to a parameter vector registered on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Affine {
        x: Var,
        param: ParamId,
        offset: usize,
        fan_in: usize,
        fan_out: usize,
    },
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Min(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Clamp(Var, f64, f64),
    Concat(Var, Var),
    Slice(Var, usize, usize),
    SumRows(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

struct ParamSlot<'p> {
    values: &'p [f64],
    trainable: bool,
}

/// Records a computation for later reverse-mode differentiation.
pub struct Tape<'p> {
    nodes: Vec<Node>,
    params: Vec<ParamSlot<'p>>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    nodes: Vec<Option<Array2<f64>>>,
    params: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to a node, if it was differentiated.
    pub fn wrt(&self, var: Var) -> Option<&Array2<f64>> {
        self.nodes.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to a registered parameter vector.
    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn take_param(&mut self, id: ParamId) -> Option<Vec<f64>> {
        self.params.get_mut(id.0).and_then(|g| g.take())
    }
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    /// Registers a flat parameter vector. Parameters that are not trainable
    /// still propagate gradients to their inputs but accumulate none themselves.
    pub fn register(&mut self, values: &'p [f64], trainable: bool) -> ParamId {
        self.params.push(ParamSlot { values, trainable });
        ParamId(self.params.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Array2<f64> {
        &self.nodes[var.0].value
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, var: Var) -> f64 {
        self.nodes[var.0].value[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!(
                "{what}: operand shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    /// A leaf that is held constant.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is requested.
    pub fn variable(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// `x · W + b` where `W` (`fan_in x fan_out`, row-major) and `b` (`fan_out`)
    /// are read from the registered parameter vector starting at `offset`.
    pub fn affine(
        &mut self,
        x: Var,
        param: ParamId,
        offset: usize,
        fan_in: usize,
        fan_out: usize,
    ) -> Result<Var> {
        let slot = self
            .params
            .get(param.0)
            .ok_or_else(|| Error::Shape("unknown parameter handle".into()))?;
        let end = offset + (fan_in + 1) * fan_out;
        if end > slot.values.len() {
            return shape_err(format!(
                "affine layer needs parameters [{offset}, {end}) but only {} exist",
                slot.values.len()
            ));
        }
        if self.shape(x).1 != fan_in {
            return shape_err(format!(
                "affine layer expects {fan_in} input columns, got {}",
                self.shape(x).1
            ));
        }
        let trainable = slot.trainable;
        let (w, b) = weight_views(slot.values, offset, fan_in, fan_out);
        let mut out = self.nodes[x.0].value.dot(&w);
        out += &b;
        let needs = trainable || self.needs(x);
        Ok(self.push(
            out,
            Op::Affine {
                x,
                param,
                offset,
                fan_in,
                fan_out,
            },
            needs,
        ))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.nodes[x.0].value.mapv(f);
        let needs = self.needs(x);
        self.push(value, op, needs)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    /// Addition of a constant.
    pub fn shift(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::Shift(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let mut value = self.nodes[a.0].value.clone();
        value.zip_mut_with(&self.nodes[b.0].value, |x, &y| *x = f(*x, y));
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "min", |x, y| if y < x { y } else { x }, Op::Min(a, b))
    }

    /// Column-wise concatenation `[a | b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if ra != rb {
            return shape_err(format!("concat: row counts {ra} and {rb} differ"));
        }
        let mut value = Array2::zeros((ra, ca + cb));
        value.slice_mut(s![.., ..ca]).assign(&self.nodes[a.0].value);
        value.slice_mut(s![.., ca..]).assign(&self.nodes[b.0].value);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Concat(a, b), needs))
    }

    /// Columns `start..start + len`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let cols = self.shape(x).1;
        if start + len > cols {
            return shape_err(format!(
                "slice: columns {start}..{} out of range for width {cols}",
                start + len
            ));
        }
        let value = self.nodes[x.0]
            .value
            .slice(s![.., start..start + len])
            .to_owned();
        let needs = self.needs(x);
        Ok(self.push(value, Op::Slice(x, start, len), needs))
    }

    /// Per-row sum, producing a `rows x 1` column.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.sum_axis(Axis(1)).insert_axis(Axis(1));
        let needs = self.needs(x);
        self.push(value, Op::SumRows(x), needs)
    }

    /// Sum of every entry, producing `1 x 1`.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.nodes[x.0].value.sum();
        let needs = self.needs(x);
        self.push(Array2::from_elem((1, 1), total), Op::Sum(x), needs)
    }

    /// Mean of every entry, producing `1 x 1`.
    pub fn mean(&mut self, x: Var) -> Var {
        let v = &self.nodes[x.0].value;
        let m = v.sum() / v.len() as f64;
        let needs = self.needs(x);
        self.push(Array2::from_elem((1, 1), m), Op::Mean(x), needs)
    }

    /// Reverse sweep from a `1 x 1` loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return shape_err(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            ));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        let mut params: Vec<Option<Vec<f64>>> = self
            .params
            .iter()
            .map(|p| p.trainable.then(|| vec![0.0; p.values.len()]))
            .collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            match node.op {
                Op::Leaf => {
                    grads[idx] = Some(dy);
                    continue;
                }
                Op::Affine {
                    x,
                    param,
                    offset,
                    fan_in,
                    fan_out,
                } => {
                    let slot = &self.params[param.0];
                    let (w, _) = weight_views(slot.values, offset, fan_in, fan_out);
                    if let Some(pg) = params[param.0].as_mut() {
                        let xv = &self.nodes[x.0].value;
                        let dw = xv.t().dot(&dy);
                        let wlen = fan_in * fan_out;
                        for (dst, src) in pg[offset..offset + wlen].iter_mut().zip(dw.iter()) {
                            *dst += *src;
                        }
                        let db = dy.sum_axis(Axis(0));
                        for (dst, src) in pg[offset + wlen..offset + wlen + fan_out]
                            .iter_mut()
                            .zip(db.iter())
                        {
                            *dst += *src;
                        }
                    }
                    if self.needs(x) {
                        accumulate(&mut grads, x, dy.dot(&w.t()));
                    }
                }
                Op::Tanh(x) => {
                    let mut g = dy;
                    g.zip_mut_with(&node.value, |g, &y| *g *= 1.0 - y * y);
                    accumulate(&mut grads, x, g);
                }
                Op::Relu(x) => {
                    let mut g = dy;
                    g.zip_mut_with(&self.nodes[x.0].value, |g, &v| {
                        if v <= 0.0 {
                            *g = 0.0
                        }
                    });
                    accumulate(&mut grads, x, g);
                }
                Op::Exp(x) => {
                    let mut g = dy;
                    g.zip_mut_with(&node.value, |g, &y| *g *= y);
                    accumulate(&mut grads, x, g);
                }
                Op::Log(x) => {
                    let mut g = dy;
                    g.zip_mut_with(&self.nodes[x.0].value, |g, &v| *g /= v);
                    accumulate(&mut grads, x, g);
                }
                Op::Square(x) => {
                    let mut g = dy;
                    g.zip_mut_with(&self.nodes[x.0].value, |g, &v| *g *= 2.0 * v);
                    accumulate(&mut grads, x, g);
                }
                Op::Scale(x, c) => {
                    let g = dy.mapv(|v| v * c);
                    accumulate(&mut grads, x, g);
                }
                Op::Shift(x) => accumulate(&mut grads, x, dy),
                Op::Clamp(x, lo, hi) => {
                    let mut g = dy;
                    g.zip_mut_with(&self.nodes[x.0].value, |g, &v| {
                        if v < lo || v > hi {
                            *g = 0.0
                        }
                    });
                    accumulate(&mut grads, x, g);
                }
                Op::Add(a, b) => {
                    if self.needs(b) {
                        accumulate(&mut grads, b, dy.clone());
                    }
                    if self.needs(a) {
                        accumulate(&mut grads, a, dy);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(b) {
                        accumulate(&mut grads, b, dy.mapv(|v| -v));
                    }
                    if self.needs(a) {
                        accumulate(&mut grads, a, dy);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(b) {
                        let mut g = dy.clone();
                        g.zip_mut_with(&self.nodes[a.0].value, |g, &v| *g *= v);
                        accumulate(&mut grads, b, g);
                    }
                    if self.needs(a) {
                        let mut g = dy;
                        g.zip_mut_with(&self.nodes[b.0].value, |g, &v| *g *= v);
                        accumulate(&mut grads, a, g);
                    }
                }
                Op::Min(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    if self.needs(b) {
                        let mut g = dy.clone();
                        ndarray::Zip::from(&mut g).and(av).and(bv).for_each(|g, &x, &y| {
                            if y >= x {
                                *g = 0.0
                            }
                        });
                        accumulate(&mut grads, b, g);
                    }
                    if self.needs(a) {
                        let mut g = dy;
                        ndarray::Zip::from(&mut g).and(av).and(bv).for_each(|g, &x, &y| {
                            if y < x {
                                *g = 0.0
                            }
                        });
                        accumulate(&mut grads, a, g);
                    }
                }
                Op::Concat(a, b) => {
                    let ca = self.shape(a).1;
                    if self.needs(b) {
                        accumulate(&mut grads, b, dy.slice(s![.., ca..]).to_owned());
                    }
                    if self.needs(a) {
                        accumulate(&mut grads, a, dy.slice(s![.., ..ca]).to_owned());
                    }
                }
                Op::Slice(x, start, len) => {
                    let mut g = Array2::zeros(self.shape(x));
                    g.slice_mut(s![.., start..start + len]).assign(&dy);
                    accumulate(&mut grads, x, g);
                }
                Op::SumRows(x) => {
                    let (r, c) = self.shape(x);
                    let g = dy.broadcast((r, c)).expect("column broadcast").to_owned();
                    accumulate(&mut grads, x, g);
                }
                Op::Sum(x) => {
                    let g = Array2::from_elem(self.shape(x), dy[[0, 0]]);
                    accumulate(&mut grads, x, g);
                }
                Op::Mean(x) => {
                    let shape = self.shape(x);
                    let n = (shape.0 * shape.1) as f64;
                    let g = Array2::from_elem(shape, dy[[0, 0]] / n);
                    accumulate(&mut grads, x, g);
                }
            }
        }
        Ok(Gradients {
            nodes: grads,
            params: params
                .drain(..)
                .collect(),
        })
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], var: Var, g: Array2<f64>) {
    match &mut grads[var.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn weight_views(
    values: &[f64],
    offset: usize,
    fan_in: usize,
    fan_out: usize,
) -> (ArrayView2<'_, f64>, ndarray::ArrayView1<'_, f64>) {
    let wlen = fan_in * fan_out;
    let w = ArrayView2::from_shape((fan_in, fan_out), &values[offset..offset + wlen])
        .expect("weight block is contiguous");
    let b = ndarray::ArrayView1::from(&values[offset + wlen..offset + wlen + fan_out]);
    (w, b)
}

/// Convenience for tests and callers holding a plain vector.
pub fn row(values: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row shape")
}
