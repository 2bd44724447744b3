//! Reverse-mode differentiation over a linear operation tape.
//!
//! Forward methods record one node per primitive and compute values through
//! the shared [`kernels`](super::kernels), so a value read off the tape is
//! bit-identical to the same computation done without a tape. `backward`
//! propagates adjoints through a fresh scratch buffer and then adds them
//! into each node's persistent gradient, so repeated backward passes
//! accumulate additively.

use super::kernels;
use super::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
#[allow(dead_code)] // constants stay in the record even when backward ignores them
enum Op {
    Leaf { trainable: bool },
    Add(Var, Var),
    AddBias(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScalarMul(Var, f64),
    ScalarAdd(Var, f64),
    MatMul(Var, Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Softmax(Var),
    LogSoftmax(Var),
    /// Select whole rows of a matrix (embedding lookup).
    GatherRows(Var, Vec<usize>),
    /// Select one element per (row, col) pair.
    GatherPairs(Var, Vec<(usize, usize)>),
    Mean(Var),
    Sum(Var),
    Clip(Var, f64, f64),
    Min(Var, Var),
    PrefixMean(Var),
    ShiftDown(Var),
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Vec<f64>,
    /// Persistent gradient accumulator; backward adds into it.
    grad: Vec<f64>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![0.0; value.len()];
        self.nodes.push(Node {
            op,
            shape,
            value,
            grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        assert_eq!(self.nodes[v.0].value.len(), 1, "node is not scalar");
        self.nodes[v.0].value[0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn grad(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].grad
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Trainable leaf initialized from a tensor's current values.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(
            Op::Leaf { trainable: true },
            t.shape().to_vec(),
            t.data().to_vec(),
        )
    }

    /// Non-trainable leaf (treated as a constant by backward).
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Var {
        self.push(Op::Leaf { trainable: false }, shape, data)
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.constant(vec![1], vec![v])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.assert_same_shape(a, b, "add");
        let value = kernels::add(self.value(a), self.value(b));
        let shape = self.shape(a).to_vec();
        self.push(Op::Add(a, b), shape, value)
    }

    /// `a` is `[m, n]`, `bias` is `[n]`; adds the bias to every row.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let n = *self.shape(a).last().expect("add_bias: empty shape");
        assert_eq!(
            self.shape(bias),
            &[n],
            "add_bias: bias shape {:?} does not match row width {}",
            self.shape(bias),
            n
        );
        let value = kernels::add_bias(self.value(a), n, self.value(bias));
        let shape = self.shape(a).to_vec();
        self.push(Op::AddBias(a, bias), shape, value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.assert_same_shape(a, b, "sub");
        let value = kernels::sub(self.value(a), self.value(b));
        let shape = self.shape(a).to_vec();
        self.push(Op::Sub(a, b), shape, value)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.assert_same_shape(a, b, "mul");
        let value = kernels::mul(self.value(a), self.value(b));
        let shape = self.shape(a).to_vec();
        self.push(Op::Mul(a, b), shape, value)
    }

    pub fn scalar_mul(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).iter().map(|v| v * c).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::ScalarMul(a, c), shape, value)
    }

    pub fn scalar_add(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).iter().map(|v| v + c).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::ScalarAdd(a, c), shape, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(
            sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0],
            "matmul: incompatible shapes {:?} x {:?}",
            sa,
            sb
        );
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let value = kernels::matmul(self.value(a), m, k, self.value(b), n);
        self.push(Op::MatMul(a, b), vec![m, n], value)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = kernels::exp(self.value(a));
        let shape = self.shape(a).to_vec();
        self.push(Op::Exp(a), shape, value)
    }

    pub fn log(&mut self, a: Var) -> Var {
        assert!(
            self.value(a).iter().all(|&v| v > 0.0),
            "log domain violation: non-positive input"
        );
        let value = kernels::ln(self.value(a));
        let shape = self.shape(a).to_vec();
        self.push(Op::Log(a), shape, value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = kernels::sigmoid(self.value(a));
        let shape = self.shape(a).to_vec();
        self.push(Op::Sigmoid(a), shape, value)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let n = *self.shape(a).last().expect("softmax: empty shape");
        let value = kernels::softmax_rows(self.value(a), n);
        let shape = self.shape(a).to_vec();
        self.push(Op::Softmax(a), shape, value)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let n = *self.shape(a).last().expect("log_softmax: empty shape");
        let value = kernels::log_softmax_rows(self.value(a), n);
        let shape = self.shape(a).to_vec();
        self.push(Op::LogSoftmax(a), shape, value)
    }

    /// `a` is `[v, d]`; returns `[ids.len(), d]` with `out[i] = a[ids[i]]`.
    pub fn gather_rows(&mut self, a: Var, ids: &[usize]) -> Var {
        let sa = self.shape(a);
        assert_eq!(sa.len(), 2, "gather_rows: expected matrix, got {:?}", sa);
        let (v, d) = (sa[0], sa[1]);
        let mut value = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            assert!(id < v, "gather_rows: row {} out of range {}", id, v);
            value.extend_from_slice(&self.value(a)[id * d..(id + 1) * d]);
        }
        self.push(Op::GatherRows(a, ids.to_vec()), vec![ids.len(), d], value)
    }

    /// `a` is `[m, n]`; returns `[pairs.len()]` with `out[p] = a[r, c]`.
    pub fn gather_pairs(&mut self, a: Var, pairs: &[(usize, usize)]) -> Var {
        let sa = self.shape(a);
        assert_eq!(sa.len(), 2, "gather_pairs: expected matrix, got {:?}", sa);
        let (m, n) = (sa[0], sa[1]);
        let mut value = Vec::with_capacity(pairs.len());
        for &(r, c) in pairs {
            assert!(r < m && c < n, "gather_pairs: ({}, {}) out of range", r, c);
            value.push(self.value(a)[r * n + c]);
        }
        self.push(Op::GatherPairs(a, pairs.to_vec()), vec![pairs.len()], value)
    }

    /// Mean over all elements; returns a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let vals = self.value(a);
        assert!(!vals.is_empty(), "mean of empty tensor");
        let s: f64 = vals.iter().sum();
        let value = vec![s / vals.len() as f64];
        self.push(Op::Mean(a), vec![1], value)
    }

    /// Sum over all elements; returns a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).iter().sum();
        self.push(Op::Sum(a), vec![1], vec![s])
    }

    pub fn clip(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        assert!(lo <= hi, "clip: lo {} > hi {}", lo, hi);
        let value = kernels::clip(self.value(a), lo, hi);
        let shape = self.shape(a).to_vec();
        self.push(Op::Clip(a, lo, hi), shape, value)
    }

    /// Elementwise minimum. At ties the gradient goes to the first argument.
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        self.assert_same_shape(a, b, "min");
        let value = kernels::min(self.value(a), self.value(b));
        let shape = self.shape(a).to_vec();
        self.push(Op::Min(a, b), shape, value)
    }

    /// Causal running mean over rows of a `[t, d]` matrix.
    pub fn prefix_mean(&mut self, a: Var) -> Var {
        let sa = self.shape(a);
        assert_eq!(sa.len(), 2, "prefix_mean: expected matrix, got {:?}", sa);
        let (t, d) = (sa[0], sa[1]);
        let value = kernels::prefix_mean(self.value(a), t, d);
        self.push(Op::PrefixMean(a), vec![t, d], value)
    }

    /// Rows shifted down by one, first row zero.
    pub fn shift_down(&mut self, a: Var) -> Var {
        let sa = self.shape(a);
        assert_eq!(sa.len(), 2, "shift_down: expected matrix, got {:?}", sa);
        let (t, d) = (sa[0], sa[1]);
        let value = kernels::shift_down(self.value(a), t, d);
        self.push(Op::ShiftDown(a), vec![t, d], value)
    }

    /// Chained add of one or more scalars/tensors of equal shape.
    pub fn add_all(&mut self, vars: &[Var]) -> Var {
        assert!(!vars.is_empty(), "add_all: empty input");
        let mut acc = vars[0];
        for &v in &vars[1..] {
            acc = self.add(acc, v);
        }
        acc
    }

    /// Reverse pass from a scalar root. Adjoints are computed in a fresh
    /// scratch buffer and then added into every node's persistent gradient,
    /// so calling backward twice doubles the gradients.
    pub fn backward(&mut self, root: Var) {
        assert_eq!(
            self.nodes[root.0].value.len(),
            1,
            "backward root must be scalar, got shape {:?}",
            self.nodes[root.0].shape
        );
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let g = match adj[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(idx, &g, &mut adj);
            let dst = &mut self.nodes[idx].grad;
            for (d, s) in dst.iter_mut().zip(&g) {
                *d += s;
            }
        }
    }

    fn propagate(&self, idx: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let ensure = |adj: &mut [Option<Vec<f64>>], v: Var, len: usize| {
            if adj[v.0].is_none() {
                adj[v.0] = Some(vec![0.0; len]);
            }
        };
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) => {
                ensure(adj, *a, g.len());
                ensure(adj, *b, g.len());
                for (i, &gv) in g.iter().enumerate() {
                    adj[a.0].as_mut().unwrap()[i] += gv;
                    adj[b.0].as_mut().unwrap()[i] += gv;
                }
            }
            Op::AddBias(a, bias) => {
                let n = *node.shape.last().unwrap();
                ensure(adj, *a, g.len());
                ensure(adj, *bias, n);
                for (i, &gv) in g.iter().enumerate() {
                    adj[a.0].as_mut().unwrap()[i] += gv;
                    adj[bias.0].as_mut().unwrap()[i % n] += gv;
                }
            }
            Op::Sub(a, b) => {
                ensure(adj, *a, g.len());
                ensure(adj, *b, g.len());
                for (i, &gv) in g.iter().enumerate() {
                    adj[a.0].as_mut().unwrap()[i] += gv;
                    adj[b.0].as_mut().unwrap()[i] -= gv;
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                ensure(adj, *a, g.len());
                ensure(adj, *b, g.len());
                for (i, &gv) in g.iter().enumerate() {
                    adj[a.0].as_mut().unwrap()[i] += gv * bv[i];
                    adj[b.0].as_mut().unwrap()[i] += gv * av[i];
                }
            }
            Op::ScalarMul(a, c) => {
                ensure(adj, *a, g.len());
                for (i, &gv) in g.iter().enumerate() {
                    adj[a.0].as_mut().unwrap()[i] += gv * c;
                }
            }
            Op::ScalarAdd(a, _) => {
                ensure(adj, *a, g.len());
                for (i, &gv) in g.iter().enumerate() {
                    adj[a.0].as_mut().unwrap()[i] += gv;
                }
            }
            Op::MatMul(a, b) => {
                let sa = &self.nodes[a.0].shape;
                let sb = &self.nodes[b.0].shape;
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                ensure(adj, *a, m * k);
                ensure(adj, *b, k * n);
                {
                    let ga = adj[a.0].as_mut().unwrap();
                    for i in 0..m {
                        for kk in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g[i * n + j] * bv[kk * n + j];
                            }
                            ga[i * k + kk] += acc;
                        }
                    }
                }
                {
                    let gb = adj[b.0].as_mut().unwrap();
                    for kk in 0..k {
                        for j in 0..n {
                            let mut acc = 0.0;
                            for i in 0..m {
                                acc += av[i * k + kk] * g[i * n + j];
                            }
                            gb[kk * n + j] += acc;
                        }
                    }
                }
            }
            Op::Exp(a) => {
                ensure(adj, *a, g.len());
                for (i, &gv) in g.iter().enumerate() {
                    adj[a.0].as_mut().unwrap()[i] += gv * node.value[i];
                }
            }
            Op::Log(a) => {
                let av = &self.nodes[a.0].value;
                ensure(adj, *a, g.len());
                for (i, &gv) in g.iter().enumerate() {
                    adj[a.0].as_mut().unwrap()[i] += gv / av[i];
                }
            }
            Op::Sigmoid(a) => {
                ensure(adj, *a, g.len());
                for (i, &gv) in g.iter().enumerate() {
                    let s = node.value[i];
                    adj[a.0].as_mut().unwrap()[i] += gv * s * (1.0 - s);
                }
            }
            Op::Softmax(a) => {
                let n = *node.shape.last().unwrap();
                ensure(adj, *a, g.len());
                let ga = adj[a.0].as_mut().unwrap();
                for r in 0..g.len() / n {
                    let row = &node.value[r * n..(r + 1) * n];
                    let grow = &g[r * n..(r + 1) * n];
                    let dot: f64 = row.iter().zip(grow).map(|(p, gv)| p * gv).sum();
                    for j in 0..n {
                        ga[r * n + j] += row[j] * (grow[j] - dot);
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let n = *node.shape.last().unwrap();
                ensure(adj, *a, g.len());
                let ga = adj[a.0].as_mut().unwrap();
                for r in 0..g.len() / n {
                    let row = &node.value[r * n..(r + 1) * n];
                    let grow = &g[r * n..(r + 1) * n];
                    let gsum: f64 = grow.iter().sum();
                    for j in 0..n {
                        ga[r * n + j] += grow[j] - row[j].exp() * gsum;
                    }
                }
            }
            Op::GatherRows(a, ids) => {
                let d = *node.shape.last().unwrap();
                ensure(adj, *a, self.nodes[a.0].value.len());
                let ga = adj[a.0].as_mut().unwrap();
                for (i, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        ga[id * d + j] += g[i * d + j];
                    }
                }
            }
            Op::GatherPairs(a, pairs) => {
                let n = self.nodes[a.0].shape[1];
                ensure(adj, *a, self.nodes[a.0].value.len());
                let ga = adj[a.0].as_mut().unwrap();
                for (p, &(r, c)) in pairs.iter().enumerate() {
                    ga[r * n + c] += g[p];
                }
            }
            Op::Mean(a) => {
                let len = self.nodes[a.0].value.len();
                ensure(adj, *a, len);
                let gv = g[0] / len as f64;
                for x in adj[a.0].as_mut().unwrap().iter_mut() {
                    *x += gv;
                }
            }
            Op::Sum(a) => {
                let len = self.nodes[a.0].value.len();
                ensure(adj, *a, len);
                for x in adj[a.0].as_mut().unwrap().iter_mut() {
                    *x += g[0];
                }
            }
            Op::Clip(a, lo, hi) => {
                // Subgradient 1 inside [lo, hi] including the boundary
                // (ties resolve toward the pass-through branch).
                let av = &self.nodes[a.0].value;
                ensure(adj, *a, g.len());
                for (i, &gv) in g.iter().enumerate() {
                    if av[i] >= *lo && av[i] <= *hi {
                        adj[a.0].as_mut().unwrap()[i] += gv;
                    }
                }
            }
            Op::Min(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                ensure(adj, *a, g.len());
                ensure(adj, *b, g.len());
                for (i, &gv) in g.iter().enumerate() {
                    if av[i] <= bv[i] {
                        adj[a.0].as_mut().unwrap()[i] += gv;
                    } else {
                        adj[b.0].as_mut().unwrap()[i] += gv;
                    }
                }
            }
            Op::PrefixMean(a) => {
                let d = node.shape[1];
                let t_len = node.shape[0];
                ensure(adj, *a, g.len());
                let ga = adj[a.0].as_mut().unwrap();
                // out[t] = sum_{s<=t} x[s] / (t+1)  =>  dx[s] = sum_{t>=s} g[t]/(t+1)
                let mut acc = vec![0.0; d];
                for t in (0..t_len).rev() {
                    let denom = (t + 1) as f64;
                    for j in 0..d {
                        acc[j] += g[t * d + j] / denom;
                        ga[t * d + j] += acc[j];
                    }
                }
            }
            Op::ShiftDown(a) => {
                let d = node.shape[1];
                let t_len = node.shape[0];
                ensure(adj, *a, g.len());
                let ga = adj[a.0].as_mut().unwrap();
                for t in 1..t_len {
                    for j in 0..d {
                        ga[(t - 1) * d + j] += g[t * d + j];
                    }
                }
            }
        }
    }

    /// True when the node is a trainable leaf.
    pub fn is_trainable_leaf(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Leaf { trainable: true })
    }

    fn assert_same_shape(&self, a: Var, b: Var, op: &str) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{}: shape mismatch {:?} vs {:?}",
            op,
            self.shape(a),
            self.shape(b)
        );
    }
}
