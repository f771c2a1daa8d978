//! Define-by-run computation tape with reverse-mode differentiation.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamSet, Tensor};

/// Handle to one output of a recorded node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Value {
    node: usize,
    slot: usize,
}

#[derive(Debug)]
enum Op {
    Leaf { param: Option<(u64, ParamId)> },
    MatMul,
    AddRowBroadcast,
    Add,
    Scale { c: f64 },
    MulElem,
    Tanh,
    Sigmoid,
    EmbedLookup { ids: Arc<Vec<u32>> },
    LstmCell { hidden: usize },
    ConcatRows,
    LogSoftmax,
    NllMean { targets: Arc<Vec<u32>> },
    ConvexCombination,
    LogMixture,
    Dropout { mask: Tensor },
    SumAll,
}

struct Node {
    op: Op,
    parents: Vec<Value>,
    outputs: Vec<Tensor>,
    saved: Vec<Tensor>,
    grads: Vec<Option<Tensor>>,
}

/// A recorded forward computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn value(&self, v: Value) -> &Tensor {
        &self.nodes[v.node].outputs[v.slot]
    }

    /// Copy a value out of the tape (cheap; storage is shared).
    pub fn detach(&self, v: Value) -> Tensor {
        self.value(v).clone()
    }

    fn shape(&self, v: Value) -> (usize, usize) {
        self.value(v).shape()
    }

    fn push(
        &mut self,
        op: Op,
        parents: Vec<Value>,
        outputs: Vec<Tensor>,
        saved: Vec<Tensor>,
    ) -> Value {
        let slots = outputs.len();
        self.nodes.push(Node {
            op,
            parents,
            outputs,
            saved,
            grads: vec![None; slots],
        });
        Value {
            node: self.nodes.len() - 1,
            slot: 0,
        }
    }

    /// Record a constant input (no gradient).
    pub fn constant(&mut self, t: Tensor) -> Value {
        self.push(Op::Leaf { param: None }, vec![], vec![t], vec![])
    }

    /// Record a parameter leaf. Each call creates its own leaf node; leaves
    /// from distinct parameter sets never alias, and gradients from repeated
    /// uses all accumulate into the owning set on backward.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Value {
        let t = params.get(id).value.clone();
        self.push(
            Op::Leaf {
                param: Some((params.set_id(), id)),
            },
            vec![],
            vec![t],
            vec![],
        )
    }

    pub fn matmul(&mut self, a: Value, b: Value) -> Result<Value> {
        let out = self.value(a).matmul(self.value(b))?;
        out.check_finite("matmul")?;
        Ok(self.push(Op::MatMul, vec![a, b], vec![out], vec![]))
    }

    /// `(N,M) + (1,M)` with the row added to every row of the matrix.
    pub fn add_row_broadcast(&mut self, m: Value, row: Value) -> Result<Value> {
        let (mt, rt) = (self.value(m), self.value(row));
        if rt.rows() != 1 || rt.cols() != mt.cols() {
            return Err(Error::ShapeMismatch {
                op: "add_row_broadcast",
                lhs: mt.shape_string(),
                rhs: rt.shape_string(),
            });
        }
        let cols = mt.cols();
        let mut out = mt.clone();
        {
            let dst = out.data_mut();
            let r = rt.data();
            for (i, v) in dst.iter_mut().enumerate() {
                *v += r[i % cols];
            }
        }
        out.check_finite("add_row_broadcast")?;
        Ok(self.push(Op::AddRowBroadcast, vec![m, row], vec![out], vec![]))
    }

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value> {
        let (at, bt) = (self.value(a), self.value(b));
        if !at.same_shape(bt) {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: at.shape_string(),
                rhs: bt.shape_string(),
            });
        }
        let mut out = at.clone();
        {
            let dst = out.data_mut();
            for (d, s) in dst.iter_mut().zip(bt.data()) {
                *d += s;
            }
        }
        out.check_finite("add")?;
        Ok(self.push(Op::Add, vec![a, b], vec![out], vec![]))
    }

    pub fn scale(&mut self, a: Value, c: f64) -> Result<Value> {
        let at = self.value(a);
        let mut out = at.clone();
        for v in out.data_mut() {
            *v *= c;
        }
        out.check_finite("scale")?;
        Ok(self.push(Op::Scale { c }, vec![a], vec![out], vec![]))
    }

    pub fn mul_elem(&mut self, a: Value, b: Value) -> Result<Value> {
        let (at, bt) = (self.value(a), self.value(b));
        if !at.same_shape(bt) {
            return Err(Error::ShapeMismatch {
                op: "mul_elem",
                lhs: at.shape_string(),
                rhs: bt.shape_string(),
            });
        }
        let mut out = at.clone();
        {
            let dst = out.data_mut();
            for (d, s) in dst.iter_mut().zip(bt.data()) {
                *d *= s;
            }
        }
        out.check_finite("mul_elem")?;
        Ok(self.push(Op::MulElem, vec![a, b], vec![out], vec![]))
    }

    pub fn tanh(&mut self, a: Value) -> Result<Value> {
        let mut out = self.value(a).clone();
        for v in out.data_mut() {
            *v = v.tanh();
        }
        out.check_finite("tanh")?;
        Ok(self.push(Op::Tanh, vec![a], vec![out], vec![]))
    }

    pub fn sigmoid(&mut self, a: Value) -> Result<Value> {
        let mut out = self.value(a).clone();
        for v in out.data_mut() {
            *v = sigmoid(*v);
        }
        out.check_finite("sigmoid")?;
        Ok(self.push(Op::Sigmoid, vec![a], vec![out], vec![]))
    }

    /// Gather rows of `table` by id: output row `n` is `table[ids[n]]`.
    pub fn embedding_lookup(&mut self, table: Value, ids: &[u32]) -> Result<Value> {
        let tt = self.value(table);
        let (v, d) = tt.shape();
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= v) {
            return Err(Error::ShapeMismatch {
                op: "embedding_lookup",
                lhs: format!("id {bad}"),
                rhs: format!("table rows {v}"),
            });
        }
        let mut out = vec![0.0; ids.len() * d];
        for (n, &id) in ids.iter().enumerate() {
            out[n * d..(n + 1) * d].copy_from_slice(tt.row(id as usize));
        }
        let out = Tensor::from_vec(ids.len(), d, out)?;
        Ok(self.push(
            Op::EmbedLookup {
                ids: Arc::new(ids.to_vec()),
            },
            vec![table],
            vec![out],
            vec![],
        ))
    }

    /// One step of the standard 4-gate LSTM cell.
    ///
    /// `x` is `(B,E)`, `h`/`c` are `(B,H)`; `wx` is `(E,4H)`, `wh` is
    /// `(H,4H)`, `b` is `(1,4H)`, gate order `[input, forget, cell, output]`.
    /// Returns `(h_next, c_next)`.
    pub fn lstm_cell(
        &mut self,
        x: Value,
        h: Value,
        c: Value,
        wx: Value,
        wh: Value,
        b: Value,
    ) -> Result<(Value, Value)> {
        let (batch, _e) = self.shape(x);
        let (hb, hidden) = self.shape(h);
        if hb != batch || self.shape(c) != (batch, hidden) {
            return Err(Error::ShapeMismatch {
                op: "lstm_cell",
                lhs: format!("x {}", self.value(x).shape_string()),
                rhs: format!(
                    "h {} c {}",
                    self.value(h).shape_string(),
                    self.value(c).shape_string()
                ),
            });
        }
        let four_h = 4 * hidden;
        if self.shape(wx).1 != four_h || self.shape(wh) != (hidden, four_h)
            || self.shape(b) != (1, four_h)
        {
            return Err(Error::ShapeMismatch {
                op: "lstm_cell",
                lhs: format!(
                    "wx {} wh {} b {}",
                    self.value(wx).shape_string(),
                    self.value(wh).shape_string(),
                    self.value(b).shape_string()
                ),
                rhs: format!("hidden {hidden}"),
            });
        }

        // z = x·wx + h·wh + b
        let mut z = self.value(x).matmul(self.value(wx))?;
        let hwh = self.value(h).matmul(self.value(wh))?;
        {
            let zd = z.data_mut();
            let hd = hwh.data();
            let bd = self.value(b).data();
            for (i, v) in zd.iter_mut().enumerate() {
                *v += hd[i] + bd[i % four_h];
            }
        }

        let mut gi = vec![0.0; batch * hidden];
        let mut gf = vec![0.0; batch * hidden];
        let mut gg = vec![0.0; batch * hidden];
        let mut go = vec![0.0; batch * hidden];
        {
            let zd = z.data();
            for r in 0..batch {
                for j in 0..hidden {
                    let base = r * four_h;
                    gi[r * hidden + j] = sigmoid(zd[base + j]);
                    gf[r * hidden + j] = sigmoid(zd[base + hidden + j]);
                    gg[r * hidden + j] = zd[base + 2 * hidden + j].tanh();
                    go[r * hidden + j] = sigmoid(zd[base + 3 * hidden + j]);
                }
            }
        }

        let cd = self.value(c).data();
        let mut c_next = vec![0.0; batch * hidden];
        let mut tc = vec![0.0; batch * hidden];
        let mut h_next = vec![0.0; batch * hidden];
        for i in 0..batch * hidden {
            c_next[i] = gf[i] * cd[i] + gi[i] * gg[i];
            tc[i] = c_next[i].tanh();
            h_next[i] = go[i] * tc[i];
        }

        let h_next = Tensor::from_vec(batch, hidden, h_next)?;
        let c_next = Tensor::from_vec(batch, hidden, c_next)?;
        h_next.check_finite("lstm_cell")?;
        c_next.check_finite("lstm_cell")?;
        let saved = vec![
            Tensor::from_vec(batch, hidden, gi)?,
            Tensor::from_vec(batch, hidden, gf)?,
            Tensor::from_vec(batch, hidden, gg)?,
            Tensor::from_vec(batch, hidden, go)?,
            Tensor::from_vec(batch, hidden, tc)?,
        ];
        let v = self.push(
            Op::LstmCell { hidden },
            vec![x, h, c, wx, wh, b],
            vec![h_next, c_next],
            saved,
        );
        Ok((v, Value { node: v.node, slot: 1 }))
    }

    /// Stack tensors with equal column counts along the row axis.
    pub fn concat_rows(&mut self, parts: &[Value]) -> Result<Value> {
        if parts.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "concat_rows",
                lhs: "0 inputs".into(),
                rhs: "at least 1".into(),
            });
        }
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: format!("{cols} cols"),
                    rhs: t.shape_string(),
                });
            }
            data.extend_from_slice(t.data());
        }
        let rows = data.len() / cols;
        let out = Tensor::from_vec(rows, cols, data)?;
        Ok(self.push(Op::ConcatRows, parts.to_vec(), vec![out], vec![]))
    }

    /// Row-wise log-softmax with max subtraction.
    pub fn log_softmax(&mut self, a: Value) -> Result<Value> {
        let at = self.value(a);
        let (n, v) = at.shape();
        let mut out = vec![0.0; n * v];
        for r in 0..n {
            let row = at.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row {
                sum += (x - m).exp();
            }
            let lse = m + sum.ln();
            for (j, x) in row.iter().enumerate() {
                out[r * v + j] = x - lse;
            }
        }
        let out = Tensor::from_vec(n, v, out)?;
        out.check_finite("log_softmax")?;
        Ok(self.push(Op::LogSoftmax, vec![a], vec![out], vec![]))
    }

    /// Mean negative log-likelihood of the targets under row-wise
    /// log-probabilities: the cross-entropy loss.
    pub fn nll_mean(&mut self, log_probs: Value, targets: &[u32]) -> Result<Value> {
        let lp = self.value(log_probs);
        let (n, v) = lp.shape();
        if targets.len() != n {
            return Err(Error::ShapeMismatch {
                op: "nll_mean",
                lhs: format!("{n} rows"),
                rhs: format!("{} targets", targets.len()),
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t as usize >= v) {
            return Err(Error::ShapeMismatch {
                op: "nll_mean",
                lhs: format!("target {bad}"),
                rhs: format!("{v} classes"),
            });
        }
        let mut sum = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            sum -= lp.get(r, t as usize);
        }
        let out = Tensor::scalar(sum / n as f64);
        out.check_finite("nll_mean")?;
        Ok(self.push(
            Op::NllMean {
                targets: Arc::new(targets.to_vec()),
            },
            vec![log_probs],
            vec![out],
            vec![],
        ))
    }

    /// Probability-space mixture: `out[n,v] = Σ_k weights[n,k]·dists_k[n,v]`.
    /// Weights must be non-negative and sum to 1 per row.
    pub fn convex_combination(&mut self, weights: Value, dists: &[Value]) -> Result<Value> {
        let wt = self.value(weights);
        let (n, k) = wt.shape();
        if dists.len() != k {
            return Err(Error::ShapeMismatch {
                op: "convex_combination",
                lhs: format!("{k} weight columns"),
                rhs: format!("{} distributions", dists.len()),
            });
        }
        for r in 0..n {
            let row = wt.row(r);
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&w| w < -1e-9) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Invariant(format!(
                    "convex_combination weights at row {r} are not a distribution (sum {sum})"
                )));
            }
        }
        let (dn, v) = self.shape(dists[0]);
        if dn != n {
            return Err(Error::ShapeMismatch {
                op: "convex_combination",
                lhs: format!("{n} rows"),
                rhs: format!("{dn} rows"),
            });
        }
        let mut out = vec![0.0; n * v];
        for (ki, &d) in dists.iter().enumerate() {
            let dt = self.value(d);
            if dt.shape() != (n, v) {
                return Err(Error::ShapeMismatch {
                    op: "convex_combination",
                    lhs: format!("{n}x{v}"),
                    rhs: dt.shape_string(),
                });
            }
            let dd = dt.data();
            for r in 0..n {
                let w = wt.get(r, ki);
                for j in 0..v {
                    out[r * v + j] += w * dd[r * v + j];
                }
            }
        }
        let out = Tensor::from_vec(n, v, out)?;
        out.check_finite("convex_combination")?;
        let mut parents = vec![weights];
        parents.extend_from_slice(dists);
        Ok(self.push(Op::ConvexCombination, parents, vec![out], vec![]))
    }

    /// Log-space mixture: `out[n,v] = logsumexp_k(log_w[n,k] + log_d_k[n,v])`.
    pub fn log_mixture(&mut self, log_weights: Value, log_dists: &[Value]) -> Result<Value> {
        let lw = self.value(log_weights);
        let (n, k) = lw.shape();
        if log_dists.len() != k || k == 0 {
            return Err(Error::ShapeMismatch {
                op: "log_mixture",
                lhs: format!("{k} weight columns"),
                rhs: format!("{} distributions", log_dists.len()),
            });
        }
        let (dn, v) = self.shape(log_dists[0]);
        if dn != n {
            return Err(Error::ShapeMismatch {
                op: "log_mixture",
                lhs: format!("{n} rows"),
                rhs: format!("{dn} rows"),
            });
        }
        for &d in log_dists {
            if self.shape(d) != (n, v) {
                return Err(Error::ShapeMismatch {
                    op: "log_mixture",
                    lhs: format!("{n}x{v}"),
                    rhs: self.value(d).shape_string(),
                });
            }
        }
        let mut out = vec![f64::NEG_INFINITY; n * v];
        // max over k, then the stabilized sum
        for (ki, &d) in log_dists.iter().enumerate() {
            let dd = self.value(d).data();
            for r in 0..n {
                let w = lw.get(r, ki);
                for j in 0..v {
                    let t = w + dd[r * v + j];
                    if t > out[r * v + j] {
                        out[r * v + j] = t;
                    }
                }
            }
        }
        let maxes = out.clone();
        out.fill(0.0);
        for (ki, &d) in log_dists.iter().enumerate() {
            let dd = self.value(d).data();
            for r in 0..n {
                let w = lw.get(r, ki);
                for j in 0..v {
                    out[r * v + j] += (w + dd[r * v + j] - maxes[r * v + j]).exp();
                }
            }
        }
        for (o, m) in out.iter_mut().zip(maxes.iter()) {
            *o = m + o.ln();
        }
        let out = Tensor::from_vec(n, v, out)?;
        out.check_finite("log_mixture")?;
        let mut parents = vec![log_weights];
        parents.extend_from_slice(log_dists);
        Ok(self.push(Op::LogMixture, parents, vec![out], vec![]))
    }

    /// Inverted dropout: entries are zeroed with probability `p` and kept
    /// entries are scaled by `1/(1-p)`.
    pub fn dropout(&mut self, x: Value, p: f64, rng: &mut impl Rng) -> Result<Value> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} not in [0,1)")));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let (r, c) = self.shape(x);
        let keep = 1.0 / (1.0 - p);
        let mask_data: Vec<f64> = (0..r * c)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let mask = Tensor::from_vec(r, c, mask_data)?;
        let mut out = self.value(x).clone();
        {
            let dst = out.data_mut();
            for (d, m) in dst.iter_mut().zip(mask.data()) {
                *d *= m;
            }
        }
        Ok(self.push(Op::Dropout { mask }, vec![x], vec![out], vec![]))
    }

    pub fn sum_all(&mut self, a: Value) -> Result<Value> {
        let s: f64 = self.value(a).data().iter().sum();
        let out = Tensor::scalar(s);
        out.check_finite("sum_all")?;
        Ok(self.push(Op::SumAll, vec![a], vec![out], vec![]))
    }

    /// Reverse sweep from a scalar loss, accumulating into `params`.
    pub fn backward(&mut self, loss: Value, params: &mut ParamSet) -> Result<()> {
        if loss.node >= self.nodes.len() {
            return Err(Error::NoForwardRecord(format!(
                "value {}/{} is not on this tape",
                loss.node, loss.slot
            )));
        }
        if self.nodes[loss.node].outputs[loss.slot].shape() != (1, 1) {
            return Err(Error::NoForwardRecord(format!(
                "backward requires a scalar loss, got {}",
                self.nodes[loss.node].outputs[loss.slot].shape_string()
            )));
        }
        self.nodes[loss.node].grads[loss.slot] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.node).rev() {
            if self.nodes[i].grads.iter().all(Option::is_none) {
                continue;
            }
            let contributions = self.node_backward(i)?;
            for (parent, grad) in contributions {
                let slot_grad = &mut self.nodes[parent.node].grads[parent.slot];
                match slot_grad {
                    Some(existing) => existing.add_assign(&grad)?,
                    None => *slot_grad = Some(grad),
                }
            }
        }

        // Push leaf gradients into the parameter set, in creation order. A
        // parameter leaf from a different set reached by the sweep is a
        // wiring bug, not a frozen parameter; fail loudly.
        for i in 0..self.nodes.len() {
            if let Op::Leaf {
                param: Some((sid, id)),
            } = self.nodes[i].op
            {
                if let Some(g) = self.nodes[i].grads[0].take() {
                    if sid != params.set_id() {
                        return Err(Error::Invariant(format!(
                            "backward reached parameter {id} of a different parameter set"
                        )));
                    }
                    g.check_finite("backward")?;
                    params.accumulate_grad(id, &g)?;
                    self.nodes[i].grads[0] = Some(g);
                }
            }
        }
        Ok(())
    }

    /// Gradient of one node's output(s) with respect to each parent.
    fn node_backward(&self, i: usize) -> Result<Vec<(Value, Tensor)>> {
        let node = &self.nodes[i];
        let grad_or_zero = |slot: usize| -> Tensor {
            node.grads[slot]
                .clone()
                .unwrap_or_else(|| Tensor::zeros(node.outputs[slot].rows(), node.outputs[slot].cols()))
        };
        let g = grad_or_zero(0);
        let pt = |j: usize| self.value(node.parents[j]);
        let mut out: Vec<(Value, Tensor)> = Vec::new();

        match &node.op {
            Op::Leaf { .. } => {}
            Op::MatMul => {
                out.push((node.parents[0], g.matmul_t(pt(1))?));
                out.push((node.parents[1], pt(0).t_matmul(&g)?));
            }
            Op::AddRowBroadcast => {
                let cols = g.cols();
                let mut rg = vec![0.0; cols];
                for (i, v) in g.data().iter().enumerate() {
                    rg[i % cols] += v;
                }
                out.push((node.parents[0], g.clone()));
                out.push((node.parents[1], Tensor::from_vec(1, cols, rg)?));
            }
            Op::Add => {
                out.push((node.parents[0], g.clone()));
                out.push((node.parents[1], g));
            }
            Op::Scale { c } => {
                let mut gx = g;
                for v in gx.data_mut() {
                    *v *= c;
                }
                out.push((node.parents[0], gx));
            }
            Op::MulElem => {
                let mut ga = g.clone();
                for (d, s) in ga.data_mut().iter_mut().zip(pt(1).data()) {
                    *d *= s;
                }
                let mut gb = g;
                for (d, s) in gb.data_mut().iter_mut().zip(pt(0).data()) {
                    *d *= s;
                }
                out.push((node.parents[0], ga));
                out.push((node.parents[1], gb));
            }
            Op::Tanh => {
                let y = &node.outputs[0];
                let mut gx = g;
                for (d, &yv) in gx.data_mut().iter_mut().zip(y.data()) {
                    *d *= 1.0 - yv * yv;
                }
                out.push((node.parents[0], gx));
            }
            Op::Sigmoid => {
                let y = &node.outputs[0];
                let mut gx = g;
                for (d, &yv) in gx.data_mut().iter_mut().zip(y.data()) {
                    *d *= yv * (1.0 - yv);
                }
                out.push((node.parents[0], gx));
            }
            Op::EmbedLookup { ids } => {
                let table = pt(0);
                let d = table.cols();
                let mut gt = Tensor::zeros(table.rows(), d);
                {
                    let dst = gt.data_mut();
                    for (n, &id) in ids.iter().enumerate() {
                        let src = &g.data()[n * d..(n + 1) * d];
                        let row = &mut dst[id as usize * d..(id as usize + 1) * d];
                        for (r, s) in row.iter_mut().zip(src) {
                            *r += s;
                        }
                    }
                }
                out.push((node.parents[0], gt));
            }
            Op::LstmCell { hidden } => {
                let h = *hidden;
                let dh = grad_or_zero(0);
                let dc_out = grad_or_zero(1);
                let (gi, gf, gg, go, tc) = (
                    node.saved[0].data(),
                    node.saved[1].data(),
                    node.saved[2].data(),
                    node.saved[3].data(),
                    node.saved[4].data(),
                );
                let c_prev = pt(2).data();
                let batch = node.outputs[0].rows();
                let four_h = 4 * h;

                let mut dz = vec![0.0; batch * four_h];
                let mut dc_prev = vec![0.0; batch * h];
                let dhd = dh.data();
                let dcd = dc_out.data();
                for r in 0..batch {
                    for j in 0..h {
                        let i1 = r * h + j;
                        let dho = dhd[i1];
                        let o = go[i1];
                        let t = tc[i1];
                        let dc_total = dcd[i1] + dho * o * (1.0 - t * t);
                        let do_ = dho * t;
                        let di = dc_total * gg[i1];
                        let df = dc_total * c_prev[i1];
                        let dg = dc_total * gi[i1];
                        dc_prev[i1] = dc_total * gf[i1];
                        let base = r * four_h;
                        dz[base + j] = di * gi[i1] * (1.0 - gi[i1]);
                        dz[base + h + j] = df * gf[i1] * (1.0 - gf[i1]);
                        dz[base + 2 * h + j] = dg * (1.0 - gg[i1] * gg[i1]);
                        dz[base + 3 * h + j] = do_ * o * (1.0 - o);
                    }
                }
                let dz = Tensor::from_vec(batch, four_h, dz)?;

                let mut db = vec![0.0; four_h];
                for (i, v) in dz.data().iter().enumerate() {
                    db[i % four_h] += v;
                }

                out.push((node.parents[0], dz.matmul_t(pt(3))?)); // dx
                out.push((node.parents[1], dz.matmul_t(pt(4))?)); // dh_prev
                out.push((node.parents[2], Tensor::from_vec(batch, h, dc_prev)?));
                out.push((node.parents[3], pt(0).t_matmul(&dz)?)); // dwx
                out.push((node.parents[4], pt(1).t_matmul(&dz)?)); // dwh
                out.push((node.parents[5], Tensor::from_vec(1, four_h, db)?));
            }
            Op::ConcatRows => {
                let cols = g.cols();
                let mut offset = 0;
                for &p in &node.parents {
                    let rows = self.value(p).rows();
                    let part = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                    out.push((p, Tensor::from_vec(rows, cols, part)?));
                    offset += rows;
                }
            }
            Op::LogSoftmax => {
                let y = &node.outputs[0];
                let (n, v) = y.shape();
                let mut gx = g.clone();
                {
                    let dst = gx.data_mut();
                    for r in 0..n {
                        let gsum: f64 = g.row(r).iter().sum();
                        for j in 0..v {
                            dst[r * v + j] -= y.get(r, j).exp() * gsum;
                        }
                    }
                }
                out.push((node.parents[0], gx));
            }
            Op::NllMean { targets } => {
                let lp = pt(0);
                let (n, v) = lp.shape();
                let scale = g.item()? / n as f64;
                let mut gx = Tensor::zeros(n, v);
                {
                    let dst = gx.data_mut();
                    for (r, &t) in targets.iter().enumerate() {
                        dst[r * v + t as usize] = -scale;
                    }
                }
                out.push((node.parents[0], gx));
            }
            Op::ConvexCombination => {
                let wt = pt(0);
                let (n, k) = wt.shape();
                let v = g.cols();
                let mut gw = Tensor::zeros(n, k);
                {
                    let dst = gw.data_mut();
                    for ki in 0..k {
                        let dd = self.value(node.parents[1 + ki]).data();
                        for r in 0..n {
                            let mut s = 0.0;
                            for j in 0..v {
                                s += g.get(r, j) * dd[r * v + j];
                            }
                            dst[r * k + ki] = s;
                        }
                    }
                }
                out.push((node.parents[0], gw));
                for ki in 0..k {
                    let mut gd = g.clone();
                    {
                        let dst = gd.data_mut();
                        for r in 0..n {
                            let w = wt.get(r, ki);
                            for j in 0..v {
                                dst[r * v + j] *= w;
                            }
                        }
                    }
                    out.push((node.parents[1 + ki], gd));
                }
            }
            Op::LogMixture => {
                let lw = pt(0);
                let (n, k) = lw.shape();
                let y = &node.outputs[0];
                let v = y.cols();
                let mut gw = Tensor::zeros(n, k);
                for ki in 0..k {
                    let dd = self.value(node.parents[1 + ki]).data();
                    let mut gd = Tensor::zeros(n, v);
                    {
                        let gdd = gd.data_mut();
                        let gwd = gw.data_mut();
                        for r in 0..n {
                            let w = lw.get(r, ki);
                            let mut row_sum = 0.0;
                            for j in 0..v {
                                let post = (w + dd[r * v + j] - y.get(r, j)).exp();
                                let gv = g.get(r, j) * post;
                                gdd[r * v + j] = gv;
                                row_sum += gv;
                            }
                            gwd[r * k + ki] = row_sum;
                        }
                    }
                    out.push((node.parents[1 + ki], gd));
                }
                out.push((node.parents[0], gw));
            }
            Op::Dropout { mask } => {
                let mut gx = g;
                for (d, m) in gx.data_mut().iter_mut().zip(mask.data()) {
                    *d *= m;
                }
                out.push((node.parents[0], gx));
            }
            Op::SumAll => {
                let x = pt(0);
                let gv = g.item()?;
                out.push((node.parents[0], Tensor::full(x.rows(), x.cols(), gv)));
            }
        }
        Ok(out)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
