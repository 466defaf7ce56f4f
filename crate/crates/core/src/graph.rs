//! Dual-track computation graph with reverse-mode differentiation.
//!
//! Every node carries both a concrete value and an interval, filled in one
//! topologically ordered forward pass. Backward propagates the gradient of
//! a scalar output through *both* tracks: bound gradients flow through the
//! same formulas the forward used (two-matrix-product form for affine,
//! selected corners for multiplication, endpoint derivatives for monotonic
//! functions, softmax weights for logsumexp). Parameters are interval-free;
//! the interval of a parameter node is the degenerate box at its value.
//!
//! Graphs are built per example and are DAGs by construction: an operation
//! can only reference node ids that already exist.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::interval::{
    affine_bounds, log_softmax_bounds, logsumexp, monotonic_bounds, mult_corners, CornerSelection,
    IntervalTensor, Monotonic,
};
use crate::tensor::Tensor;

/// Slack for the forward containment assertion, relative to |value|.
const CONTAINMENT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

/// A named learnable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

/// Flat parameter container shared by every graph instance of a model.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name,
            value,
            grad,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter)> {
        self.params
            .iter_mut()
            .enumerate()
            .map(|(i, p)| (ParamId(i), p))
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Global L2 norm of all trainable gradients.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .flat_map(|p| p.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone)]
pub enum Op {
    /// Leaf with externally supplied value and box.
    Input,
    /// Leaf bound to a parameter; its interval is the point at its value.
    Param(ParamId),
    /// Leaf with a fixed tensor.
    Const,
    /// out = W x (+ b) where W and b are parameters.
    Affine { w: ParamId, b: Option<ParamId> },
    Monotonic(Monotonic),
    /// Elementwise product; either side may be a scalar broadcast.
    Mul,
    /// Sum of equally shaped dependencies.
    AddN,
    Scale(f64),
    Slice { start: usize, len: usize },
    Concat,
    /// Sum of all coordinates, producing a scalar.
    SumElems,
    /// Vector of log-softmax scores with per-class stable bounds.
    LogSoftmax,
    /// Inverted dropout on the concrete track; intervals pass through
    /// untouched so bound semantics stay mask-free.
    Dropout { p: f64 },
    /// Scalar = concrete value of the dependency (point interval).
    ValueOf,
    /// Scalar = lower bound of the dependency (point interval).
    LowerOf,
    /// Scalar = upper bound of the dependency (point interval).
    UpperOf,
    /// Axis-aligned box over the concrete values of the dependencies;
    /// value track passes through dependency 0 (the unperturbed word).
    BoxOverSet,
    /// Interval shrink toward the concrete center by factor eps.
    ShrinkBox { eps: f64 },
}

#[derive(Debug, Clone)]
enum Aux {
    None,
    Corners(CornerSelection),
    Mask(Option<Vec<f64>>),
    ArgExt { min_idx: Vec<u32>, max_idx: Vec<u32> },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    deps: Vec<NodeId>,
    value: Tensor,
    bounds: IntervalTensor,
    aux: Aux,
}

/// Forward execution mode.
#[derive(Debug, PartialEq)]
pub enum Mode<'a> {
    /// Dropout disabled; containment is asserted at every node.
    Eval,
    /// Dropout active with the given stream. Containment checks are
    /// suspended once any mask fires, since masking only the concrete
    /// track intentionally decouples it from the interval track.
    Train(&'a mut ChaCha8Rng),
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    forward_done: bool,
}

struct GradBuf {
    val: Vec<Option<Vec<f64>>>,
    lo: Vec<Option<Vec<f64>>>,
    hi: Vec<Option<Vec<f64>>>,
}

impl GradBuf {
    fn new(n: usize) -> Self {
        GradBuf {
            val: (0..n).map(|_| None).collect(),
            lo: (0..n).map(|_| None).collect(),
            hi: (0..n).map(|_| None).collect(),
        }
    }

    fn add(slot: &mut Option<Vec<f64>>, len: usize, idx: usize, g: f64) {
        if g == 0.0 {
            return;
        }
        slot.get_or_insert_with(|| vec![0.0; len])[idx] += g;
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, deps: Vec<NodeId>, shape: Vec<usize>) -> NodeId {
        let value = Tensor::zeros(&shape);
        let bounds = IntervalTensor::point(&value);
        self.nodes.push(Node {
            op,
            deps,
            value,
            bounds,
            aux: Aux::None,
        });
        self.forward_done = false;
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn bounds(&self, id: NodeId) -> &IntervalTensor {
        &self.nodes[id.0].bounds
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    // ---- builders ----

    pub fn input(&mut self, value: Tensor, bounds: IntervalTensor) -> Result<NodeId> {
        if value.shape() != bounds.shape() {
            return Err(Error::dimension(
                "Graph::input",
                format!("{:?}", value.shape()),
                format!("{:?}", bounds.shape()),
            ));
        }
        let id = self.push(Op::Input, vec![], value.shape().to_vec());
        self.nodes[id.0].value = value;
        self.nodes[id.0].bounds = bounds;
        Ok(id)
    }

    pub fn param(&mut self, store: &ParamStore, p: ParamId) -> NodeId {
        let shape = store.value(p).shape().to_vec();
        self.push(Op::Param(p), vec![], shape)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let id = self.push(Op::Const, vec![], value.shape().to_vec());
        self.nodes[id.0].bounds = IntervalTensor::point(&value);
        self.nodes[id.0].value = value;
        id
    }

    pub fn affine(
        &mut self,
        store: &ParamStore,
        w: ParamId,
        b: Option<ParamId>,
        x: NodeId,
    ) -> Result<NodeId> {
        let wt = store.value(w);
        if wt.shape().len() != 2 || wt.cols() != self.node(x).value.len() {
            return Err(Error::dimension(
                "Graph::affine",
                format!("[m, {}]", self.node(x).value.len()),
                format!("{:?}", wt.shape()),
            ));
        }
        let m = wt.rows();
        if let Some(b) = b {
            if store.value(b).len() != m {
                return Err(Error::dimension("Graph::affine bias", m, store.value(b).len()));
            }
        }
        Ok(self.push(Op::Affine { w, b }, vec![x], vec![m]))
    }

    pub fn monotonic(&mut self, sigma: Monotonic, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        self.push(Op::Monotonic(sigma), vec![x], shape)
    }

    pub fn mul(&mut self, x: NodeId, y: NodeId) -> Result<NodeId> {
        let (nx, ny) = (self.node(x).value.len(), self.node(y).value.len());
        if nx != ny && nx != 1 && ny != 1 {
            return Err(Error::dimension("Graph::mul", nx, ny));
        }
        let out = nx.max(ny);
        Ok(self.push(Op::Mul, vec![x, y], vec![out]))
    }

    pub fn add_n(&mut self, deps: &[NodeId]) -> Result<NodeId> {
        if deps.is_empty() {
            return Err(Error::Precondition("add_n over empty list".into()));
        }
        let shape = self.shape(deps[0]).to_vec();
        for &d in deps {
            if self.shape(d) != shape.as_slice() {
                return Err(Error::dimension(
                    "Graph::add_n",
                    format!("{shape:?}"),
                    format!("{:?}", self.shape(d)),
                ));
            }
        }
        Ok(self.push(Op::AddN, deps.to_vec(), shape))
    }

    pub fn scale(&mut self, c: f64, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        self.push(Op::Scale(c), vec![x], shape)
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        if start + len > self.node(x).value.len() {
            return Err(Error::dimension(
                "Graph::slice",
                format!("<= {}", self.node(x).value.len()),
                start + len,
            ));
        }
        Ok(self.push(Op::Slice { start, len }, vec![x], vec![len]))
    }

    pub fn concat(&mut self, deps: &[NodeId]) -> Result<NodeId> {
        if deps.is_empty() {
            return Err(Error::Precondition("concat of empty list".into()));
        }
        let total: usize = deps.iter().map(|&d| self.node(d).value.len()).sum();
        Ok(self.push(Op::Concat, deps.to_vec(), vec![total]))
    }

    pub fn sum_elems(&mut self, x: NodeId) -> NodeId {
        self.push(Op::SumElems, vec![x], vec![1])
    }

    /// Dot product of two equal-length vectors as mul followed by sum.
    pub fn dot(&mut self, x: NodeId, y: NodeId) -> Result<NodeId> {
        let prod = self.mul(x, y)?;
        Ok(self.sum_elems(prod))
    }

    pub fn mean_of(&mut self, deps: &[NodeId]) -> Result<NodeId> {
        let sum = self.add_n(deps)?;
        Ok(self.scale(1.0 / deps.len() as f64, sum))
    }

    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.node(x).value.len();
        if n == 0 {
            return Err(Error::Precondition("log_softmax over empty logits".into()));
        }
        Ok(self.push(Op::LogSoftmax, vec![x], vec![n]))
    }

    /// Softmax, always routed through log space.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let ls = self.log_softmax(x)?;
        Ok(self.monotonic(Monotonic::Exp, ls))
    }

    pub fn dropout(&mut self, p: f64, x: NodeId) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(Op::Dropout { p }, vec![x], shape))
    }

    pub fn value_of(&mut self, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        self.push(Op::ValueOf, vec![x], shape)
    }

    pub fn lower_of(&mut self, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        self.push(Op::LowerOf, vec![x], shape)
    }

    pub fn upper_of(&mut self, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        self.push(Op::UpperOf, vec![x], shape)
    }

    /// Smallest axis-aligned box over the concrete values of `candidates`;
    /// the value track follows `candidates[0]` (the unperturbed word).
    pub fn box_over_set(&mut self, candidates: &[NodeId]) -> Result<NodeId> {
        if candidates.is_empty() {
            return Err(Error::Precondition("box_over_set of empty candidate set".into()));
        }
        let shape = self.shape(candidates[0]).to_vec();
        for &c in candidates {
            if self.shape(c) != shape.as_slice() {
                return Err(Error::dimension(
                    "Graph::box_over_set",
                    format!("{shape:?}"),
                    format!("{:?}", self.shape(c)),
                ));
            }
        }
        Ok(self.push(Op::BoxOverSet, candidates.to_vec(), shape))
    }

    pub fn shrink_box(&mut self, eps: f64, x: NodeId) -> Result<NodeId> {
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::Config(format!("epsilon {eps} outside [0, 1]")));
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(Op::ShrinkBox { eps }, vec![x], shape))
    }

    // ---- execution ----

    /// Dual forward pass. Returns an internal soundness fault if any
    /// node's concrete value escapes its interval while containment
    /// checking is active (Eval mode, or Train with no dropout fired).
    pub fn forward(&mut self, store: &ParamStore, mode: Mode) -> Result<()> {
        let mut rng = match mode {
            Mode::Eval => None,
            Mode::Train(r) => Some(r),
        };
        let mut dropout_fired = false;
        for i in 0..self.nodes.len() {
            self.forward_node(i, store, &mut rng, &mut dropout_fired)?;
            if !dropout_fired {
                let node = &self.nodes[i];
                if !node.bounds.contains(&node.value, CONTAINMENT_TOL) {
                    return Err(Error::Soundness(format!(
                        "node {i} ({:?}): concrete value escaped its interval",
                        node.op
                    )));
                }
            }
        }
        self.forward_done = true;
        Ok(())
    }

    fn forward_node(
        &mut self,
        i: usize,
        store: &ParamStore,
        rng: &mut Option<&mut ChaCha8Rng>,
        dropout_fired: &mut bool,
    ) -> Result<()> {
        // Split so dependency reads and the output write don't alias.
        let (before, rest) = self.nodes.split_at_mut(i);
        let node = &mut rest[0];
        let dep = |id: &NodeId| -> &Node { &before[id.0] };

        match &node.op {
            Op::Input | Op::Const => {}
            Op::Param(p) => {
                node.value = store.value(*p).clone();
                node.bounds = IntervalTensor::point(&node.value);
            }
            Op::Affine { w, b } => {
                let x = dep(&node.deps[0]);
                let wt = store.value(*w);
                let bt = b.map(|b| store.value(b));
                let mut y = wt.matvec(x.value.data());
                if let Some(bt) = bt {
                    for (yi, bi) in y.iter_mut().zip(bt.data()) {
                        *yi += bi;
                    }
                }
                node.value = Tensor::vector(y);
                node.bounds = affine_bounds(wt, bt, &x.bounds)?;
            }
            Op::Monotonic(sigma) => {
                let sigma = *sigma;
                let x = dep(&node.deps[0]);
                node.value = x.value.map(|v| sigma.apply(v));
                node.bounds = monotonic_bounds(sigma, &x.bounds);
            }
            Op::Mul => {
                let x = dep(&node.deps[0]);
                let y = dep(&node.deps[1]);
                let n = x.value.len().max(y.value.len());
                let ix = |j: usize| if x.value.len() == 1 { 0 } else { j };
                let iy = |j: usize| if y.value.len() == 1 { 0 } else { j };
                let mut val = vec![0.0; n];
                let mut lo = vec![0.0; n];
                let mut hi = vec![0.0; n];
                let mut min_corner = vec![0u8; n];
                let mut max_corner = vec![0u8; n];
                for j in 0..n {
                    val[j] = x.value.data()[ix(j)] * y.value.data()[iy(j)];
                    let corners = mult_corners(
                        x.bounds.lower().data()[ix(j)],
                        x.bounds.upper().data()[ix(j)],
                        y.bounds.lower().data()[iy(j)],
                        y.bounds.upper().data()[iy(j)],
                    );
                    let (mut l, mut lc) = (corners[0], 0u8);
                    let (mut h, mut hc) = (corners[0], 0u8);
                    for (c, &v) in corners.iter().enumerate().skip(1) {
                        if v < l {
                            l = v;
                            lc = c as u8;
                        }
                        if v > h {
                            h = v;
                            hc = c as u8;
                        }
                    }
                    lo[j] = l;
                    hi[j] = h;
                    min_corner[j] = lc;
                    max_corner[j] = hc;
                }
                node.value = Tensor::vector(val);
                node.bounds = IntervalTensor::from_bounds(lo, hi)?;
                node.aux = Aux::Corners(CornerSelection {
                    min_corner,
                    max_corner,
                });
            }
            Op::AddN => {
                let n = dep(&node.deps[0]).value.len();
                let mut val = vec![0.0; n];
                let mut lo = vec![0.0; n];
                let mut hi = vec![0.0; n];
                for d in &node.deps {
                    let t = dep(d);
                    for j in 0..n {
                        val[j] += t.value.data()[j];
                        lo[j] += t.bounds.lower().data()[j];
                        hi[j] += t.bounds.upper().data()[j];
                    }
                }
                node.value = Tensor::vector(val);
                node.bounds = IntervalTensor::from_bounds(lo, hi)?;
            }
            Op::Scale(c) => {
                let c = *c;
                let x = dep(&node.deps[0]);
                node.value = x.value.map(|v| c * v);
                let (lo, hi) = if c >= 0.0 {
                    (x.bounds.lower().map(|v| c * v), x.bounds.upper().map(|v| c * v))
                } else {
                    (x.bounds.upper().map(|v| c * v), x.bounds.lower().map(|v| c * v))
                };
                node.bounds = IntervalTensor::new(lo, hi)?;
            }
            Op::Slice { start, len } => {
                let (start, len) = (*start, *len);
                let x = dep(&node.deps[0]);
                node.value = Tensor::vector(x.value.data()[start..start + len].to_vec());
                node.bounds = IntervalTensor::from_bounds(
                    x.bounds.lower().data()[start..start + len].to_vec(),
                    x.bounds.upper().data()[start..start + len].to_vec(),
                )?;
            }
            Op::Concat => {
                let mut val = Vec::new();
                let mut lo = Vec::new();
                let mut hi = Vec::new();
                for d in &node.deps {
                    let t = dep(d);
                    val.extend_from_slice(t.value.data());
                    lo.extend_from_slice(t.bounds.lower().data());
                    hi.extend_from_slice(t.bounds.upper().data());
                }
                node.value = Tensor::vector(val);
                node.bounds = IntervalTensor::from_bounds(lo, hi)?;
            }
            Op::SumElems => {
                let x = dep(&node.deps[0]);
                node.value = Tensor::scalar(x.value.data().iter().sum());
                node.bounds = IntervalTensor::from_bounds(
                    vec![x.bounds.lower().data().iter().sum()],
                    vec![x.bounds.upper().data().iter().sum()],
                )?;
            }
            Op::LogSoftmax => {
                let x = dep(&node.deps[0]);
                let z = x.value.data();
                let lse = logsumexp(z);
                node.value = Tensor::vector(z.iter().map(|&v| v - lse).collect());
                let m = z.len();
                let mut lo = vec![0.0; m];
                let mut hi = vec![0.0; m];
                for c in 0..m {
                    let (l, h) = log_softmax_bounds(&x.bounds, c)?;
                    lo[c] = l;
                    hi[c] = h;
                }
                node.bounds = IntervalTensor::from_bounds(lo, hi)?;
            }
            Op::Dropout { p } => {
                let p = *p;
                let x = dep(&node.deps[0]);
                node.bounds = x.bounds.clone();
                match rng {
                    Some(rng) if p > 0.0 => {
                        let keep = 1.0 - p;
                        let mask: Vec<f64> = (0..x.value.len())
                            .map(|_| {
                                if rng.gen::<f64>() < keep {
                                    1.0 / keep
                                } else {
                                    0.0
                                }
                            })
                            .collect();
                        node.value = Tensor::vector(
                            x.value
                                .data()
                                .iter()
                                .zip(&mask)
                                .map(|(v, m)| v * m)
                                .collect(),
                        );
                        node.aux = Aux::Mask(Some(mask));
                        *dropout_fired = true;
                    }
                    _ => {
                        node.value = x.value.clone();
                        node.aux = Aux::Mask(None);
                    }
                }
            }
            Op::ValueOf => {
                let x = dep(&node.deps[0]);
                node.value = x.value.clone();
                node.bounds = IntervalTensor::point(&node.value);
            }
            Op::LowerOf => {
                let x = dep(&node.deps[0]);
                node.value = x.bounds.lower().clone();
                node.bounds = IntervalTensor::point(&node.value);
            }
            Op::UpperOf => {
                let x = dep(&node.deps[0]);
                node.value = x.bounds.upper().clone();
                node.bounds = IntervalTensor::point(&node.value);
            }
            Op::BoxOverSet => {
                let n = dep(&node.deps[0]).value.len();
                let mut lo = dep(&node.deps[0]).value.data().to_vec();
                let mut hi = lo.clone();
                let mut min_idx = vec![0u32; n];
                let mut max_idx = vec![0u32; n];
                for (k, d) in node.deps.iter().enumerate().skip(1) {
                    let v = dep(d).value.data();
                    for j in 0..n {
                        if v[j] < lo[j] {
                            lo[j] = v[j];
                            min_idx[j] = k as u32;
                        }
                        if v[j] > hi[j] {
                            hi[j] = v[j];
                            max_idx[j] = k as u32;
                        }
                    }
                }
                node.value = dep(&node.deps[0]).value.clone();
                node.bounds = IntervalTensor::from_bounds(lo, hi)?;
                node.aux = Aux::ArgExt { min_idx, max_idx };
            }
            Op::ShrinkBox { eps } => {
                let eps = *eps;
                let x = dep(&node.deps[0]);
                let c = x.value.data();
                node.value = x.value.clone();
                node.bounds = if eps == 0.0 {
                    IntervalTensor::point(&x.value)
                } else if eps == 1.0 {
                    x.bounds.clone()
                } else {
                    let lo: Vec<f64> = c
                        .iter()
                        .zip(x.bounds.lower().data())
                        .map(|(&c, &l)| c - eps * (c - l))
                        .collect();
                    let hi: Vec<f64> = c
                        .iter()
                        .zip(x.bounds.upper().data())
                        .map(|(&c, &u)| c + eps * (u - c))
                        .collect();
                    IntervalTensor::from_bounds(lo, hi)?
                };
            }
        }
        Ok(())
    }

    /// Reverse-mode differentiation of the scalar node `out`, seeding its
    /// value gradient with `seed`. Gradients accumulate into `store`.
    pub fn backward(&mut self, out: NodeId, seed: f64, store: &mut ParamStore) -> Result<()> {
        if !self.forward_done {
            return Err(Error::Precondition(
                "backward called before forward".into(),
            ));
        }
        if self.node(out).value.len() != 1 {
            return Err(Error::Precondition(format!(
                "backward output must be scalar, got {} elements",
                self.node(out).value.len()
            )));
        }
        let mut grads = GradBuf::new(self.nodes.len());
        grads.val[out.0] = Some(vec![seed]);

        for i in (0..self.nodes.len()).rev() {
            let gv = grads.val[i].take();
            let gl = grads.lo[i].take();
            let gh = grads.hi[i].take();
            if gv.is_none() && gl.is_none() && gh.is_none() {
                continue;
            }
            self.backward_node(i, gv, gl, gh, &mut grads, store);
        }
        Ok(())
    }

    #[allow(clippy::too_many_lines)]
    fn backward_node(
        &self,
        i: usize,
        gv: Option<Vec<f64>>,
        gl: Option<Vec<f64>>,
        gh: Option<Vec<f64>>,
        grads: &mut GradBuf,
        store: &mut ParamStore,
    ) {
        let node = &self.nodes[i];
        let n = node.value.len();
        let zeros = |g: &Option<Vec<f64>>, j: usize| g.as_ref().map_or(0.0, |g| g[j]);

        match &node.op {
            Op::Input | Op::Const => {}
            Op::Param(p) => {
                // The parameter's interval is the point at its value, so
                // bound gradients fold into the value gradient.
                let grad = &mut store.get_mut(*p).grad;
                for j in 0..n {
                    grad.data_mut()[j] += zeros(&gv, j) + zeros(&gl, j) + zeros(&gh, j);
                }
            }
            Op::Affine { w, b } => {
                let x = &self.nodes[node.deps[0].0];
                let nd = x.value.len();
                let has_bound_grad = gl.is_some() || gh.is_some();

                let gmu: Vec<f64> = (0..n).map(|j| zeros(&gl, j) + zeros(&gh, j)).collect();
                let gr: Vec<f64> = (0..n).map(|j| zeros(&gh, j) - zeros(&gl, j)).collect();
                let mid: Vec<f64> = (0..nd)
                    .map(|j| (x.bounds.lower().data()[j] + x.bounds.upper().data()[j]) / 2.0)
                    .collect();
                let rad: Vec<f64> = (0..nd)
                    .map(|j| (x.bounds.upper().data()[j] - x.bounds.lower().data()[j]) / 2.0)
                    .collect();

                // Dependency gradients, reading W immutably.
                {
                    let wt = store.value(*w);
                    if let Some(gv) = &gv {
                        let mut dx = vec![0.0; nd];
                        wt.matvec_t_accum(gv, &mut dx);
                        for j in 0..nd {
                            GradBuf::add(&mut grads.val[node.deps[0].0], nd, j, dx[j]);
                        }
                    }
                    if has_bound_grad {
                        let mut dmid = vec![0.0; nd];
                        wt.matvec_t_accum(&gmu, &mut dmid);
                        let mut drad = vec![0.0; nd];
                        wt.matvec_abs_t_accum(&gr, &mut drad);
                        for j in 0..nd {
                            GradBuf::add(
                                &mut grads.lo[node.deps[0].0],
                                nd,
                                j,
                                0.5 * dmid[j] - 0.5 * drad[j],
                            );
                            GradBuf::add(
                                &mut grads.hi[node.deps[0].0],
                                nd,
                                j,
                                0.5 * dmid[j] + 0.5 * drad[j],
                            );
                        }
                    }
                }

                // Weight gradient; value and grad are disjoint fields.
                {
                    let pw = store.get_mut(*w);
                    let (wval, wgrad) = (&pw.value, &mut pw.grad);
                    let cols = wval.cols();
                    if let Some(gv) = &gv {
                        Tensor::outer_accum(wgrad, gv, x.value.data());
                    }
                    if has_bound_grad {
                        Tensor::outer_accum(wgrad, &gmu, &mid);
                        // d r_i / d W_ij = sign(W_ij) rad_j
                        for r in 0..n {
                            let gri = gr[r];
                            if gri == 0.0 {
                                continue;
                            }
                            let wrow = &wval.data()[r * cols..(r + 1) * cols];
                            let grow = &mut wgrad.data_mut()[r * cols..(r + 1) * cols];
                            for j in 0..cols {
                                grow[j] += gri * wrow[j].signum_or_zero() * rad[j];
                            }
                        }
                    }
                }

                if let Some(b) = b {
                    let gb = &mut store.get_mut(*b).grad;
                    if let Some(gv) = &gv {
                        for (g, &v) in gb.data_mut().iter_mut().zip(gv) {
                            *g += v;
                        }
                    }
                    if has_bound_grad {
                        for (g, &v) in gb.data_mut().iter_mut().zip(&gmu) {
                            *g += v;
                        }
                    }
                }
            }
            Op::Monotonic(sigma) => {
                let x = &self.nodes[node.deps[0].0];
                for j in 0..n {
                    let g = zeros(&gv, j);
                    if g != 0.0 {
                        GradBuf::add(
                            &mut grads.val[node.deps[0].0],
                            n,
                            j,
                            g * sigma.derivative(x.value.data()[j]),
                        );
                    }
                    let g = zeros(&gl, j);
                    if g != 0.0 {
                        GradBuf::add(
                            &mut grads.lo[node.deps[0].0],
                            n,
                            j,
                            g * sigma.derivative(x.bounds.lower().data()[j]),
                        );
                    }
                    let g = zeros(&gh, j);
                    if g != 0.0 {
                        GradBuf::add(
                            &mut grads.hi[node.deps[0].0],
                            n,
                            j,
                            g * sigma.derivative(x.bounds.upper().data()[j]),
                        );
                    }
                }
            }
            Op::Mul => {
                let x = &self.nodes[node.deps[0].0];
                let y = &self.nodes[node.deps[1].0];
                let (nx, ny) = (x.value.len(), y.value.len());
                let ix = |j: usize| if nx == 1 { 0 } else { j };
                let iy = |j: usize| if ny == 1 { 0 } else { j };
                let Aux::Corners(sel) = &node.aux else {
                    unreachable!("Mul node without corner selection")
                };
                for j in 0..n {
                    let g = zeros(&gv, j);
                    if g != 0.0 {
                        GradBuf::add(&mut grads.val[node.deps[0].0], nx, ix(j), g * y.value.data()[iy(j)]);
                        GradBuf::add(&mut grads.val[node.deps[1].0], ny, iy(j), g * x.value.data()[ix(j)]);
                    }
                    for (grad, corner) in [(zeros(&gl, j), sel.min_corner[j]), (zeros(&gh, j), sel.max_corner[j])] {
                        if grad == 0.0 {
                            continue;
                        }
                        let (xl, xu) = (x.bounds.lower().data()[ix(j)], x.bounds.upper().data()[ix(j)]);
                        let (yl, yu) = (y.bounds.lower().data()[iy(j)], y.bounds.upper().data()[iy(j)]);
                        // corner code: bit 1 = x side upper, bit 0 = y side upper
                        let x_upper = corner >= 2;
                        let y_upper = corner % 2 == 1;
                        let xe = if x_upper { xu } else { xl };
                        let ye = if y_upper { yu } else { yl };
                        let x_slot = if x_upper {
                            &mut grads.hi[node.deps[0].0]
                        } else {
                            &mut grads.lo[node.deps[0].0]
                        };
                        GradBuf::add(x_slot, nx, ix(j), grad * ye);
                        let y_slot = if y_upper {
                            &mut grads.hi[node.deps[1].0]
                        } else {
                            &mut grads.lo[node.deps[1].0]
                        };
                        GradBuf::add(y_slot, ny, iy(j), grad * xe);
                    }
                }
            }
            Op::AddN => {
                for d in &node.deps {
                    for j in 0..n {
                        GradBuf::add(&mut grads.val[d.0], n, j, zeros(&gv, j));
                        GradBuf::add(&mut grads.lo[d.0], n, j, zeros(&gl, j));
                        GradBuf::add(&mut grads.hi[d.0], n, j, zeros(&gh, j));
                    }
                }
            }
            Op::Scale(c) => {
                let c = *c;
                let d = node.deps[0].0;
                for j in 0..n {
                    GradBuf::add(&mut grads.val[d], n, j, c * zeros(&gv, j));
                    if c >= 0.0 {
                        GradBuf::add(&mut grads.lo[d], n, j, c * zeros(&gl, j));
                        GradBuf::add(&mut grads.hi[d], n, j, c * zeros(&gh, j));
                    } else {
                        // lower_out = c * upper_in, upper_out = c * lower_in
                        GradBuf::add(&mut grads.hi[d], n, j, c * zeros(&gl, j));
                        GradBuf::add(&mut grads.lo[d], n, j, c * zeros(&gh, j));
                    }
                }
            }
            Op::Slice { start, .. } => {
                let d = node.deps[0].0;
                let nd = self.nodes[d].value.len();
                for j in 0..n {
                    GradBuf::add(&mut grads.val[d], nd, start + j, zeros(&gv, j));
                    GradBuf::add(&mut grads.lo[d], nd, start + j, zeros(&gl, j));
                    GradBuf::add(&mut grads.hi[d], nd, start + j, zeros(&gh, j));
                }
            }
            Op::Concat => {
                let mut offset = 0;
                for d in &node.deps {
                    let nd = self.nodes[d.0].value.len();
                    for j in 0..nd {
                        GradBuf::add(&mut grads.val[d.0], nd, j, zeros(&gv, offset + j));
                        GradBuf::add(&mut grads.lo[d.0], nd, j, zeros(&gl, offset + j));
                        GradBuf::add(&mut grads.hi[d.0], nd, j, zeros(&gh, offset + j));
                    }
                    offset += nd;
                }
            }
            Op::SumElems => {
                let d = node.deps[0].0;
                let nd = self.nodes[d].value.len();
                for j in 0..nd {
                    GradBuf::add(&mut grads.val[d], nd, j, zeros(&gv, 0));
                    GradBuf::add(&mut grads.lo[d], nd, j, zeros(&gl, 0));
                    GradBuf::add(&mut grads.hi[d], nd, j, zeros(&gh, 0));
                }
            }
            Op::LogSoftmax => {
                let d = node.deps[0].0;
                let x = &self.nodes[d];
                let m = n;
                if let Some(gv) = &gv {
                    // dz_j = g_j − softmax(z)_j · Σ_c g_c
                    let total: f64 = gv.iter().sum();
                    for j in 0..m {
                        let p = node.value.data()[j].exp();
                        GradBuf::add(&mut grads.val[d], m, j, gv[j] - p * total);
                    }
                }
                let l = x.bounds.lower().data();
                let u = x.bounds.upper().data();
                if let Some(gl) = &gl {
                    // lower_c = l_c − log(exp(l_c) + Σ_{j≠c} exp(u_j))
                    for c in 0..m {
                        let g = gl[c];
                        if g == 0.0 {
                            continue;
                        }
                        let lower_c = node.bounds.lower().data()[c];
                        let log_denom = l[c] - lower_c;
                        GradBuf::add(&mut grads.lo[d], m, c, g * (1.0 - lower_c.exp()));
                        for j in 0..m {
                            if j != c {
                                GradBuf::add(&mut grads.hi[d], m, j, -g * (u[j] - log_denom).exp());
                            }
                        }
                    }
                }
                if let Some(gh) = &gh {
                    // upper_c = u_c − log(exp(u_c) + Σ_{j≠c} exp(l_j))
                    for c in 0..m {
                        let g = gh[c];
                        if g == 0.0 {
                            continue;
                        }
                        let upper_c = node.bounds.upper().data()[c];
                        let log_denom = u[c] - upper_c;
                        GradBuf::add(&mut grads.hi[d], m, c, g * (1.0 - upper_c.exp()));
                        for j in 0..m {
                            if j != c {
                                GradBuf::add(&mut grads.lo[d], m, j, -g * (l[j] - log_denom).exp());
                            }
                        }
                    }
                }
            }
            Op::Dropout { .. } => {
                let d = node.deps[0].0;
                let mask = match &node.aux {
                    Aux::Mask(m) => m.as_deref(),
                    _ => None,
                };
                for j in 0..n {
                    let scale = mask.map_or(1.0, |m| m[j]);
                    GradBuf::add(&mut grads.val[d], n, j, scale * zeros(&gv, j));
                    GradBuf::add(&mut grads.lo[d], n, j, zeros(&gl, j));
                    GradBuf::add(&mut grads.hi[d], n, j, zeros(&gh, j));
                }
            }
            Op::ValueOf => {
                let d = node.deps[0].0;
                for j in 0..n {
                    GradBuf::add(
                        &mut grads.val[d],
                        n,
                        j,
                        zeros(&gv, j) + zeros(&gl, j) + zeros(&gh, j),
                    );
                }
            }
            Op::LowerOf => {
                let d = node.deps[0].0;
                for j in 0..n {
                    GradBuf::add(
                        &mut grads.lo[d],
                        n,
                        j,
                        zeros(&gv, j) + zeros(&gl, j) + zeros(&gh, j),
                    );
                }
            }
            Op::UpperOf => {
                let d = node.deps[0].0;
                for j in 0..n {
                    GradBuf::add(
                        &mut grads.hi[d],
                        n,
                        j,
                        zeros(&gv, j) + zeros(&gl, j) + zeros(&gh, j),
                    );
                }
            }
            Op::BoxOverSet => {
                let Aux::ArgExt { min_idx, max_idx } = &node.aux else {
                    unreachable!("BoxOverSet node without arg extremes")
                };
                let d0 = node.deps[0].0;
                for j in 0..n {
                    GradBuf::add(&mut grads.val[d0], n, j, zeros(&gv, j));
                    let g = zeros(&gl, j);
                    if g != 0.0 {
                        let d = node.deps[min_idx[j] as usize].0;
                        GradBuf::add(&mut grads.val[d], n, j, g);
                    }
                    let g = zeros(&gh, j);
                    if g != 0.0 {
                        let d = node.deps[max_idx[j] as usize].0;
                        GradBuf::add(&mut grads.val[d], n, j, g);
                    }
                }
            }
            Op::ShrinkBox { eps } => {
                let eps = *eps;
                let d = node.deps[0].0;
                for j in 0..n {
                    let (gvj, glj, ghj) = (zeros(&gv, j), zeros(&gl, j), zeros(&gh, j));
                    if eps == 0.0 {
                        GradBuf::add(&mut grads.val[d], n, j, gvj + glj + ghj);
                    } else if eps == 1.0 {
                        GradBuf::add(&mut grads.val[d], n, j, gvj);
                        GradBuf::add(&mut grads.lo[d], n, j, glj);
                        GradBuf::add(&mut grads.hi[d], n, j, ghj);
                    } else {
                        GradBuf::add(&mut grads.val[d], n, j, gvj + (1.0 - eps) * (glj + ghj));
                        GradBuf::add(&mut grads.lo[d], n, j, eps * glj);
                        GradBuf::add(&mut grads.hi[d], n, j, eps * ghj);
                    }
                }
            }
        }
    }

    /// Smallest distance to a gradient discontinuity observed in the last
    /// forward pass: ReLU kinks, multiplication corner ties, box argmin /
    /// argmax ties, and |W| kinks under nonzero input width. Finite
    /// difference checks resample fixtures when this margin is tiny.
    pub fn kink_margin(&self, store: &ParamStore) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Monotonic(Monotonic::Relu) => {
                    let x = &self.nodes[node.deps[0].0];
                    for j in 0..x.value.len() {
                        margin = margin.min(x.value.data()[j].abs());
                        margin = margin.min(x.bounds.lower().data()[j].abs());
                        margin = margin.min(x.bounds.upper().data()[j].abs());
                    }
                }
                Op::Mul => {
                    let x = &self.nodes[node.deps[0].0];
                    let y = &self.nodes[node.deps[1].0];
                    let ix = |j: usize| if x.value.len() == 1 { 0 } else { j };
                    let iy = |j: usize| if y.value.len() == 1 { 0 } else { j };
                    for j in 0..node.value.len() {
                        let (xl, xu) = (x.bounds.lower().data()[ix(j)], x.bounds.upper().data()[ix(j)]);
                        let (yl, yu) = (y.bounds.lower().data()[iy(j)], y.bounds.upper().data()[iy(j)]);
                        if (xu - xl).max(yu - yl) < 1e-12 {
                            continue; // degenerate: all corners coincide harmlessly
                        }
                        let mut corners = mult_corners(xl, xu, yl, yu);
                        corners.sort_by(|a, b| a.partial_cmp(b).unwrap());
                        margin = margin.min(corners[1] - corners[0]);
                        margin = margin.min(corners[3] - corners[2]);
                    }
                }
                Op::BoxOverSet if node.deps.len() > 1 => {
                    for j in 0..node.value.len() {
                        let vals: Vec<f64> = node
                            .deps
                            .iter()
                            .map(|d| self.nodes[d.0].value.data()[j])
                            .collect();
                        let mut sorted = vals.clone();
                        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                        let k = sorted.len();
                        // Ties exactly at the ReLU floor are harmless: every
                        // tied candidate has zero local derivative.
                        if sorted[0] != 0.0 || sorted[1] != 0.0 {
                            margin = margin.min(sorted[1] - sorted[0]);
                        }
                        if sorted[k - 1] != 0.0 || sorted[k - 2] != 0.0 {
                            margin = margin.min(sorted[k - 1] - sorted[k - 2]);
                        }
                    }
                }
                Op::Affine { w, .. } => {
                    let x = &self.nodes[node.deps[0].0];
                    let has_width = x
                        .bounds
                        .lower()
                        .data()
                        .iter()
                        .zip(x.bounds.upper().data())
                        .any(|(l, u)| u - l > 1e-12);
                    if has_width {
                        for &wij in store.value(*w).data() {
                            margin = margin.min(wij.abs());
                        }
                    }
                }
                _ => {}
            }
        }
        margin
    }
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    /// Subgradient of |x|: sign(x) with 0 at the kink.
    fn signum_or_zero(self) -> f64 {
        if self > 0.0 {
            1.0
        } else if self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

impl From<usize> for ParamId {
    fn from(v: usize) -> Self {
        ParamId(v)
    }
}
