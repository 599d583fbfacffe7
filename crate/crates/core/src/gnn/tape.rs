//! Minimal reverse-mode autodiff over dense `f64` matrices.
//!
//! A [`Tape`] records the forward computation as a flat list of nodes; the
//! list order is a topological order by construction, so the backward pass is
//! a single reverse sweep. Only the operations the message-passing models
//! need are implemented. Everything is sequential with a fixed reduction
//! order, which keeps training bit-reproducible for a fixed seed.

use std::rc::Rc;

use ndarray::{Array2, Axis};

/// Index of a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

/// Constant sparse matrix in coordinate form, used for neighbor aggregation.
/// No gradient flows through the matrix itself.
#[derive(Debug, Clone)]
pub struct Coo {
    pub shape: (usize, usize),
    /// `(row, col, weight)` triples in a fixed order.
    pub entries: Vec<(usize, usize, f64)>,
}

impl Coo {
    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.shape.0, x.ncols()));
        for &(r, c, w) in &self.entries {
            let src = x.row(c).to_owned();
            let mut dst = out.row_mut(r);
            dst.scaled_add(w, &src);
        }
        out
    }

    fn apply_transposed(&self, g: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.shape.1, g.ncols()));
        for &(r, c, w) in &self.entries {
            let src = g.row(r).to_owned();
            let mut dst = out.row_mut(c);
            dst.scaled_add(w, &src);
        }
        out
    }
}

enum Op {
    Leaf,
    /// `a @ b`
    MatMul(VarId, VarId),
    /// elementwise sum, same shape
    Add(VarId, VarId),
    /// `x + b` with `b` a single row broadcast over the rows of `x`
    AddRowBroadcast(VarId, VarId),
    Relu(VarId),
    /// constant sparse matrix times variable: `S @ x`
    Spmm { s: Rc<Coo>, x: VarId },
    /// columns of `a` followed by columns of `b`
    ConcatCols(VarId, VarId),
    /// `x * s` with `s` a 1x1 variable
    ScaleByScalar { x: VarId, s: VarId },
    /// attention-weighted neighbor sum; see [`Tape::gat_attention`]
    GatAttention {
        h: VarId,
        p: VarId,
        q: VarId,
        adj: Rc<Vec<Vec<usize>>>,
        /// per-edge attention weights, aligned with `adj` flattened row-wise
        alpha: Vec<f64>,
        /// raw logits before the optional leaky rectifier, same alignment
        raw: Vec<f64>,
        leaky_slope: Option<f64>,
    },
    /// scalar (1x1) mean cross-entropy of `logits` rows listed in `rows`
    MeanCrossEntropy {
        logits: VarId,
        labels: Rc<Vec<usize>>,
        rows: Rc<Vec<usize>>,
        /// softmax probabilities of the selected rows, in `rows` order
        probs: Array2<f64>,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Forward-recording tape. Create one per forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> VarId {
        self.nodes.push(Node { value, op });
        VarId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: VarId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> VarId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> VarId {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        debug_assert_eq!(self.value(a).dim(), self.value(b).dim());
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn add_row_broadcast(&mut self, x: VarId, b: VarId) -> VarId {
        debug_assert_eq!(self.value(b).nrows(), 1);
        let value = self.value(x) + &self.value(b).row(0);
        self.push(value, Op::AddRowBroadcast(x, b))
    }

    pub fn relu(&mut self, x: VarId) -> VarId {
        let value = self.value(x).mapv(|v| v.max(0.0));
        self.push(value, Op::Relu(x))
    }

    pub fn spmm(&mut self, s: Rc<Coo>, x: VarId) -> VarId {
        debug_assert_eq!(s.shape.1, self.value(x).nrows());
        let value = s.apply(self.value(x));
        self.push(value, Op::Spmm { s, x })
    }

    pub fn concat_cols(&mut self, a: VarId, b: VarId) -> VarId {
        let va = self.value(a);
        let vb = self.value(b);
        debug_assert_eq!(va.nrows(), vb.nrows());
        let mut value = Array2::zeros((va.nrows(), va.ncols() + vb.ncols()));
        value.slice_mut(ndarray::s![.., ..va.ncols()]).assign(va);
        value.slice_mut(ndarray::s![.., va.ncols()..]).assign(vb);
        self.push(value, Op::ConcatCols(a, b))
    }

    pub fn scale_by_scalar(&mut self, x: VarId, s: VarId) -> VarId {
        debug_assert_eq!(self.value(s).dim(), (1, 1));
        let scale = self.value(s)[[0, 0]];
        let value = self.value(x) * scale;
        self.push(value, Op::ScaleByScalar { x, s })
    }

    /// Attention-weighted neighbor aggregation.
    ///
    /// For each node `u` with neighbors `v`: logit `z = p[u] + q[v]`
    /// (optionally passed through a leaky rectifier), `alpha = softmax(z)`
    /// over `N(u)`, and the message is `sum_v alpha[u,v] * h[v]`. Nodes
    /// without neighbors get a zero row.
    pub fn gat_attention(
        &mut self,
        h: VarId,
        p: VarId,
        q: VarId,
        adj: Rc<Vec<Vec<usize>>>,
        leaky_slope: Option<f64>,
    ) -> VarId {
        let hv = self.value(h);
        let pv = self.value(p);
        let qv = self.value(q);
        let n = adj.len();
        debug_assert_eq!(hv.nrows(), n);
        debug_assert_eq!(pv.dim(), (n, 1));
        debug_assert_eq!(qv.dim(), (n, 1));

        let total_edges: usize = adj.iter().map(Vec::len).sum();
        let mut alpha = Vec::with_capacity(total_edges);
        let mut raw = Vec::with_capacity(total_edges);
        let mut value = Array2::zeros((n, hv.ncols()));
        for (u, nbrs) in adj.iter().enumerate() {
            if nbrs.is_empty() {
                continue;
            }
            let start = raw.len();
            let mut max_logit = f64::NEG_INFINITY;
            for &v in nbrs {
                let z = pv[[u, 0]] + qv[[v, 0]];
                raw.push(z);
                let act = match leaky_slope {
                    Some(slope) if z < 0.0 => slope * z,
                    _ => z,
                };
                alpha.push(act);
                max_logit = max_logit.max(act);
            }
            let mut denom = 0.0;
            for a in &mut alpha[start..] {
                *a = (*a - max_logit).exp();
                denom += *a;
            }
            for (offset, &v) in nbrs.iter().enumerate() {
                let a = alpha[start + offset] / denom;
                alpha[start + offset] = a;
                let src = hv.row(v).to_owned();
                value.row_mut(u).scaled_add(a, &src);
            }
        }
        self.push(
            value,
            Op::GatAttention {
                h,
                p,
                q,
                adj,
                alpha,
                raw,
                leaky_slope,
            },
        )
    }

    /// Mean cross-entropy over the listed `rows` of `logits`; the result is
    /// a 1x1 value. A row listed twice contributes twice before averaging.
    pub fn mean_cross_entropy(
        &mut self,
        logits: VarId,
        labels: Rc<Vec<usize>>,
        rows: Rc<Vec<usize>>,
    ) -> VarId {
        assert!(!rows.is_empty(), "cross-entropy over an empty row set");
        let lv = self.value(logits);
        let c = lv.ncols();
        let mut probs = Array2::zeros((rows.len(), c));
        let mut total = 0.0;
        for (i, &r) in rows.iter().enumerate() {
            let row = lv.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for j in 0..c {
                let e = (row[j] - max).exp();
                probs[[i, j]] = e;
                denom += e;
            }
            for j in 0..c {
                probs[[i, j]] /= denom;
            }
            total -= probs[[i, labels[r]]].max(1e-300).ln();
        }
        let value = Array2::from_elem((1, 1), total / rows.len() as f64);
        self.push(
            value,
            Op::MeanCrossEntropy {
                logits,
                labels,
                rows,
                probs,
            },
        )
    }

    /// Reverse sweep from `root` (must be 1x1). Returns one gradient slot per
    /// tape node; untouched slots are `None`.
    pub fn backward(&self, root: VarId) -> Vec<Option<Array2<f64>>> {
        assert_eq!(self.value(root).dim(), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Array2::from_elem((1, 1), 1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::AddRowBroadcast(x, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *x, g.clone());
                    accumulate(&mut grads, *b, gb);
                }
                Op::Relu(x) => {
                    let mask = self.value(*x).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    accumulate(&mut grads, *x, g * &mask);
                }
                Op::Spmm { s, x } => {
                    accumulate(&mut grads, *x, s.apply_transposed(&g));
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).ncols();
                    let ga = g.slice(ndarray::s![.., ..ca]).to_owned();
                    let gb = g.slice(ndarray::s![.., ca..]).to_owned();
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::ScaleByScalar { x, s } => {
                    let scale = self.value(*s)[[0, 0]];
                    let gx = &g * scale;
                    let gs = (&g * self.value(*x)).sum();
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *s, Array2::from_elem((1, 1), gs));
                }
                Op::GatAttention {
                    h,
                    p,
                    q,
                    adj,
                    alpha,
                    raw,
                    leaky_slope,
                } => {
                    let hv = self.value(*h);
                    let n = adj.len();
                    let mut gh = Array2::zeros(hv.dim());
                    let mut gp = Array2::zeros((n, 1));
                    let mut gq = Array2::zeros((n, 1));
                    let mut cursor = 0usize;
                    for (u, nbrs) in adj.iter().enumerate() {
                        if nbrs.is_empty() {
                            continue;
                        }
                        let gu = g.row(u);
                        let m = nbrs.len();
                        // d(loss)/d(alpha), then through the softmax
                        let mut dalpha = vec![0.0; m];
                        let mut inner = 0.0;
                        for (offset, &v) in nbrs.iter().enumerate() {
                            let d: f64 = gu.iter().zip(hv.row(v)).map(|(a, b)| a * b).sum();
                            dalpha[offset] = d;
                            inner += alpha[cursor + offset] * d;
                        }
                        for (offset, &v) in nbrs.iter().enumerate() {
                            let a = alpha[cursor + offset];
                            let mut dz = a * (dalpha[offset] - inner);
                            if let Some(slope) = leaky_slope {
                                if raw[cursor + offset] < 0.0 {
                                    dz *= slope;
                                }
                            }
                            gp[[u, 0]] += dz;
                            gq[[v, 0]] += dz;
                            gh.row_mut(v).scaled_add(a, &gu);
                        }
                        cursor += m;
                    }
                    accumulate(&mut grads, *h, gh);
                    accumulate(&mut grads, *p, gp);
                    accumulate(&mut grads, *q, gq);
                }
                Op::MeanCrossEntropy {
                    logits,
                    labels,
                    rows,
                    probs,
                } => {
                    let scale = g[[0, 0]] / rows.len() as f64;
                    let mut gl = Array2::zeros(self.value(*logits).dim());
                    for (i, &r) in rows.iter().enumerate() {
                        for j in 0..probs.ncols() {
                            let indicator = if labels[r] == j { 1.0 } else { 0.0 };
                            gl[[r, j]] += scale * (probs[[i, j]] - indicator);
                        }
                    }
                    accumulate(&mut grads, *logits, gl);
                }
            }
        }
        grads
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], id: VarId, g: Array2<f64>) {
    match &mut grads[id.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Takes the gradient for `id` out of a backward result, zero if untouched.
pub fn grad_of(grads: &mut [Option<Array2<f64>>], id: VarId, shape: (usize, usize)) -> Array2<f64> {
    grads[id.0].take().unwrap_or_else(|| Array2::zeros(shape))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central-difference check of a scalar tape program at a leaf.
    fn fd_check<F>(build: F, at: Array2<f64>, h: f64, tol: f64)
    where
        F: Fn(&mut Tape, VarId) -> VarId,
    {
        let mut tape = Tape::new();
        let x = tape.leaf(at.clone());
        let loss = build(&mut tape, x);
        let mut grads = tape.backward(loss);
        let analytic = grad_of(&mut grads, x, at.dim());

        for i in 0..at.nrows() {
            for j in 0..at.ncols() {
                let mut plus = at.clone();
                plus[[i, j]] += h;
                let mut minus = at.clone();
                minus[[i, j]] -= h;
                let eval = |m: Array2<f64>| {
                    let mut t = Tape::new();
                    let x = t.leaf(m);
                    let l = build(&mut t, x);
                    t.value(l)[[0, 0]]
                };
                let fd = (eval(plus) - eval(minus)) / (2.0 * h);
                let a = analytic[[i, j]];
                let denom = a.abs().max(fd.abs()).max(1.0);
                assert!(
                    ((a - fd) / denom).abs() < tol,
                    "grad mismatch at ({i},{j}): analytic {a}, fd {fd}"
                );
            }
        }
    }

    #[test]
    fn matmul_and_ce_gradients_match_fd() {
        let w = array![[0.3, -0.2], [0.5, 0.8], [-0.4, 0.1]];
        let labels = Rc::new(vec![0usize, 1]);
        let rows = Rc::new(vec![0usize, 1]);
        let x = array![[1.0, 0.5, -0.3], [0.2, -0.7, 0.9]];
        fd_check(
            move |t, wv| {
                let xv = t.leaf(x.clone());
                let logits = t.matmul(xv, wv);
                t.mean_cross_entropy(logits, labels.clone(), rows.clone())
            },
            w,
            1e-5,
            1e-6,
        );
    }

    #[test]
    fn relu_concat_scale_gradients_match_fd() {
        let x = array![[0.4, -0.6], [1.2, 0.3]];
        let labels = Rc::new(vec![1usize, 0]);
        let rows = Rc::new(vec![0usize, 1]);
        fd_check(
            move |t, xv| {
                let r = t.relu(xv);
                let cat = t.concat_cols(r, xv);
                let s = t.leaf(Array2::from_elem((1, 1), 0.7));
                let scaled = t.scale_by_scalar(cat, s);
                let w = t.leaf(array![[0.2, -0.1], [0.4, 0.3], [-0.5, 0.6], [0.1, 0.2]]);
                let logits = t.matmul(scaled, w);
                t.mean_cross_entropy(logits, labels.clone(), rows.clone())
            },
            x,
            1e-5,
            1e-6,
        );
    }

    #[test]
    fn spmm_gradient_matches_fd() {
        // path 0-1-2, mean aggregation weights
        let s = Rc::new(Coo {
            shape: (3, 3),
            entries: vec![
                (0, 1, 1.0),
                (1, 0, 0.5),
                (1, 2, 0.5),
                (2, 1, 1.0),
            ],
        });
        let x = array![[0.3, 0.9], [-0.5, 0.4], [0.8, -0.2]];
        let labels = Rc::new(vec![0usize, 1, 0]);
        let rows = Rc::new(vec![0usize, 1, 2]);
        fd_check(
            move |t, xv| {
                let m = t.spmm(s.clone(), xv);
                t.mean_cross_entropy(m, labels.clone(), rows.clone())
            },
            x,
            1e-5,
            1e-6,
        );
    }

    #[test]
    fn gat_attention_gradients_match_fd() {
        let adj = Rc::new(vec![vec![1, 2], vec![0], vec![0], vec![]]);
        let h = array![[0.5, -0.2], [0.3, 0.8], [-0.6, 0.4], [0.1, 0.1]];
        let a_self = array![[0.7], [-0.3]];
        let a_neigh = array![[0.2], [0.9]];
        let labels = Rc::new(vec![0usize, 1, 0, 1]);
        let rows = Rc::new(vec![0usize, 1, 2, 3]);
        for leaky in [None, Some(0.2)] {
            let adj = adj.clone();
            let a_self = a_self.clone();
            let a_neigh = a_neigh.clone();
            let labels = labels.clone();
            let rows = rows.clone();
            fd_check(
                move |t, hv| {
                    let asv = t.leaf(a_self.clone());
                    let anv = t.leaf(a_neigh.clone());
                    let p = t.matmul(hv, asv);
                    let q = t.matmul(hv, anv);
                    let m = t.gat_attention(hv, p, q, adj.clone(), leaky);
                    t.mean_cross_entropy(m, labels.clone(), rows.clone())
                },
                h.clone(),
                1e-5,
                1e-6,
            );
        }
    }

    #[test]
    fn isolated_node_message_is_zero() {
        let mut t = Tape::new();
        let h = t.leaf(array![[1.0, 2.0], [3.0, 4.0]]);
        let p = t.leaf(array![[0.1], [0.2]]);
        let q = t.leaf(array![[0.3], [0.4]]);
        let m = t.gat_attention(h, p, q, Rc::new(vec![vec![], vec![0]]), None);
        assert_eq!(t.value(m).row(0).to_vec(), vec![0.0, 0.0]);
        assert_eq!(t.value(m).row(1).to_vec(), vec![1.0, 2.0]);
    }
}
