//! Finite-difference checks of reverse-mode gradients.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// `|a − b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Derivatives agree when the relative error is below `rel` or, near zero,
/// the absolute error is below `abs`.
pub fn agrees(analytic: f64, numeric: f64, rel: f64, abs: f64) -> bool {
    relative_error(analytic, numeric) < rel || (analytic - numeric).abs() < abs
}

/// `(f(x + h·e_k) − f(x − h·e_k)) / 2h` for every coordinate `k`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + h;
            let up = f(&probe);
            probe[k] = x[k] - h;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Outcome of comparing analytic against numeric derivatives.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradReport {
    pub checked: usize,
    pub failures: usize,
    /// Largest relative error among coordinates of magnitude at least the
    /// absolute floor.
    pub worst_relative: f64,
}

impl GradReport {
    pub fn compare(analytic: &[f64], numeric: &[f64], rel: f64, abs: f64) -> Self {
        let mut report = Self::default();
        for (&a, &n) in analytic.iter().zip(numeric) {
            report.checked += 1;
            if a.abs().max(n.abs()) >= abs {
                report.worst_relative = report.worst_relative.max(relative_error(a, n));
            }
            if !agrees(a, n, rel, abs) {
                report.failures += 1;
            }
        }
        report
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            checked: self.checked + other.checked,
            failures: self.failures + other.failures,
            worst_relative: self.worst_relative.max(other.worst_relative),
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Node {
    Leaf(usize),
    MatMul(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Concat(usize, usize, usize),
    Sum(usize),
    Transpose(usize),
    Elu(usize),
    Sigmoid(usize),
    SqFrobenius(usize),
}

/// A random computation graph over matrix leaves, reduced to a scalar by a
/// weighted sum of its last node.
#[derive(Clone, Debug)]
pub struct RandomProgram {
    leaves: Vec<Tensor<f64>>,
    nodes: Vec<Node>,
    weights: Tensor<f64>,
    ops: usize,
}

struct Builder<'a, G: ?Sized> {
    rng: &'a mut G,
    max_extent: usize,
    leaves: Vec<Tensor<f64>>,
    nodes: Vec<Node>,
    shapes: Vec<Vec<usize>>,
}

impl<G: Rng + ?Sized> Builder<'_, G> {
    fn extent(&mut self) -> usize {
        self.rng.random_range(1..=self.max_extent)
    }

    fn push(&mut self, node: Node, shape: Vec<usize>) -> usize {
        self.nodes.push(node);
        self.shapes.push(shape);
        self.nodes.len() - 1
    }

    fn leaf(&mut self, rows: usize, cols: usize) -> usize {
        let t = Tensor::matrix(rows, cols, |_, _| self.rng.sample::<f64, _>(StandardNormal));
        self.leaves.push(t);
        self.push(Node::Leaf(self.leaves.len() - 1), vec![rows, cols])
    }

    /// An existing node of the given shape, or a fresh leaf half the time.
    fn operand(&mut self, shape: &[usize]) -> usize {
        let found: Vec<usize> = (0..self.nodes.len()).filter(|&k| self.shapes[k] == shape).collect();
        if found.is_empty() || self.rng.random_bool(0.5) {
            self.leaf(shape[0], shape[1])
        } else {
            found[self.rng.random_range(0..found.len())]
        }
    }

    /// One operation on `a`, or `None` when the drawn kind does not apply.
    fn op(&mut self, a: usize) -> Option<usize> {
        let sa = self.shapes[a].clone();
        let matrix = sa.len() == 2;
        let kind = self.rng.random_range(0..10);
        let (node, shape) = match kind {
            0 if matrix => {
                let cols = self.extent();
                let b = self.operand(&[sa[1], cols]);
                (Node::MatMul(a, b), vec![sa[0], cols])
            }
            1 | 2 => {
                let b = if matrix { self.operand(&sa) } else { self.leaf(1, 1) };
                // a one-element right operand broadcasts to the left shape
                if kind == 1 {
                    (Node::Add(a, b), sa)
                } else {
                    (Node::Mul(a, b), sa)
                }
            }
            3 => (Node::Scale(a, self.rng.random_range(-2.0..2.0)), sa),
            4 if matrix => {
                let axis = self.rng.random_range(0..2);
                if sa[axis] >= self.max_extent {
                    return None;
                }
                let extra = self.rng.random_range(1..=self.max_extent - sa[axis]);
                let mut shape = sa.clone();
                shape[axis] = extra;
                let b = self.operand(&shape);
                shape[axis] = sa[axis] + extra;
                (Node::Concat(a, b, axis), shape)
            }
            5 => (Node::Sum(a), vec![]),
            6 if matrix => (Node::Transpose(a), vec![sa[1], sa[0]]),
            7 => (Node::Elu(a), sa),
            8 => (Node::Sigmoid(a), sa),
            9 => (Node::SqFrobenius(a), vec![]),
            _ => return None,
        };
        Some(self.push(node, shape))
    }
}

impl RandomProgram {
    /// Between one and `max_ops` operations chained from a first matrix leaf;
    /// every matrix extent stays within `max_extent`.
    pub fn generate<G: Rng + ?Sized>(max_ops: usize, max_extent: usize, rng: &mut G) -> Self {
        let ops = rng.random_range(1..=max_ops);
        let mut b = Builder {
            rng,
            max_extent,
            leaves: Vec::new(),
            nodes: Vec::new(),
            shapes: Vec::new(),
        };
        let (r, c) = (b.extent(), b.extent());
        let mut last = b.leaf(r, c);
        let mut done = 0;
        while done < ops {
            // mostly extend the chain, sometimes branch from an earlier node
            let a = if b.rng.random_bool(0.75) { last } else { b.rng.random_range(0..b.nodes.len()) };
            if let Some(k) = b.op(a) {
                last = k;
                done += 1;
            }
        }
        let shape = b.shapes[last].clone();
        let weights = Tensor::from_fn(&shape, |_| b.rng.sample(StandardNormal));
        Self {
            leaves: b.leaves,
            nodes: b.nodes,
            weights,
            ops,
        }
    }

    pub fn ops(&self) -> usize {
        self.ops
    }

    pub fn leaves(&self) -> &[Tensor<f64>] {
        &self.leaves
    }

    fn record(&self, tape: &mut Tape<f64>, leaves: &[Tensor<f64>], track: bool) -> Result<(Var, Vec<Var>)> {
        let mut vars: Vec<Var> = Vec::with_capacity(self.nodes.len());
        let mut leaf_vars = Vec::with_capacity(leaves.len());
        for node in &self.nodes {
            let v = match *node {
                Node::Leaf(k) => {
                    let v = tape.leaf(leaves[k].clone(), track);
                    leaf_vars.push(v);
                    v
                }
                Node::MatMul(a, b) => tape.matmul(vars[a], vars[b])?,
                Node::Add(a, b) => tape.add(vars[a], vars[b])?,
                Node::Mul(a, b) => tape.mul(vars[a], vars[b])?,
                Node::Scale(a, c) => tape.scale(vars[a], c),
                Node::Concat(a, b, axis) => tape.concat(&[vars[a], vars[b]], axis)?,
                Node::Sum(a) => tape.sum(vars[a]),
                Node::Transpose(a) => tape.transpose(vars[a])?,
                Node::Elu(a) => tape.elu(vars[a]),
                Node::Sigmoid(a) => tape.sigmoid(vars[a]),
                Node::SqFrobenius(a) => tape.sq_frobenius(vars[a]),
            };
            vars.push(v);
        }
        let last = *vars.last().expect("at least one node");
        let w = tape.constant(self.weights.clone());
        let weighted = tape.mul(last, w)?;
        Ok((tape.sum(weighted), leaf_vars))
    }

    /// Scalar output for the given leaf values.
    pub fn evaluate(&self, leaves: &[Tensor<f64>]) -> Result<f64> {
        let mut tape = Tape::no_grad();
        let (out, _) = self.record(&mut tape, leaves, false)?;
        Ok(tape.value(out).data()[0])
    }

    /// Reverse-mode gradient with respect to every leaf scalar, leaves in order.
    pub fn gradient(&self) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let (out, leaf_vars) = self.record(&mut tape, &self.leaves, true)?;
        tape.backward(out)?;
        let mut grads = Vec::new();
        for (v, t) in leaf_vars.iter().zip(&self.leaves) {
            match tape.grad(*v) {
                Some(g) => grads.extend_from_slice(g.data()),
                None => grads.extend(std::iter::repeat_n(0.0, t.len())),
            }
        }
        Ok(grads)
    }

    /// Central differences with respect to every leaf scalar.
    pub fn numeric_gradient(&self, h: f64) -> Result<Vec<f64>> {
        let flat: Vec<f64> = self.leaves.iter().flat_map(|t| t.data().iter().copied()).collect();
        let mut failed = None;
        let grads = central_difference(
            |x| {
                let mut offset = 0;
                let leaves: Vec<Tensor<f64>> = self
                    .leaves
                    .iter()
                    .map(|t| {
                        let mut t = t.clone();
                        let len = t.len();
                        t.data_mut().copy_from_slice(&x[offset..offset + len]);
                        offset += len;
                        t
                    })
                    .collect();
                self.evaluate(&leaves).unwrap_or_else(|e| {
                    failed = Some(e);
                    f64::NAN
                })
            },
            &flat,
            h,
        );
        match failed {
            Some(e) => Err(e),
            None => Ok(grads),
        }
    }

    /// Compares reverse-mode and numeric gradients.
    pub fn check(&self, rel: f64, abs: f64) -> Result<GradReport> {
        Ok(GradReport::compare(&self.gradient()?, &self.numeric_gradient(FD_STEP)?, rel, abs))
    }
}
