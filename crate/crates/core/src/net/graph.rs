//! A tape-based reverse-mode autodiff graph over `f64` buffers.
//!
//! Nodes are appended in evaluation order, so the tape itself is a valid
//! topological order and `backward` is a single reverse sweep.

use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};

use super::kernels::{self, Conv2dGeom, Rulebook};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    /// Populated by backward; `None` until first touched.
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Tensor { shape, data, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n], grad: None }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Gradient buffer, zero when backward never reached this tensor.
    pub fn grad_or_zeros(&self) -> Vec<f64> {
        self.grad.clone().unwrap_or_else(|| vec![0.0; self.data.len()])
    }
}

/// Named parameters in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name {name}")));
        }
        let id = self.tensors.len();
        self.names.push(name.to_string());
        self.tensors.push(t);
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|i| &self.tensors[i])
    }

    pub fn by_id(&self, id: usize) -> &Tensor {
        &self.tensors[id]
    }

    pub fn by_id_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.tensors[id]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.grad = None;
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(usize),
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Linear { x: Var, w: Var, b: Var },
    Relu(Var),
    SegmentMax { x: Var, argmax: Vec<u32> },
    ConcatPooled { x: Var, pooled: Var, segment_of: Rc<Vec<u32>> },
    SubmConv { x: Var, w: Var, b: Var, rules: Rc<Rulebook> },
    ScatterBev { x: Var, offsets: Vec<usize> },
    Conv2d { x: Var, w: Var, b: Var, geom: Conv2dGeom },
    /// Scalar node whose local input gradients were computed in the forward pass.
    Precomputed { inputs: Vec<Var>, local: Vec<Vec<f64>> },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn same_shape(op: &str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{op}: {a:?} vs {b:?}")));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { shape, value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t.shape, t.data, Op::Constant, false))
    }

    pub fn param(&mut self, store: &ParamStore, id: usize) -> Var {
        let t = store.by_id(id);
        self.push(t.shape.clone(), t.data.clone(), Op::Param(id), true)
    }

    pub fn param_named(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let id = store.id(name).ok_or_else(|| Error::InvalidArgument(format!("no parameter named {name}")))?;
        Ok(self.param(store, id))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.shape(a), self.shape(b))?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(self.shape(a).to_vec(), v, Op::Add(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.shape(a), self.shape(b))?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(self.shape(a).to_vec(), v, Op::Mul(a, b), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let ng = self.needs(a);
        self.push(vec![1], vec![s], Op::Sum(a), ng)
    }

    /// `[N, Cin] x [Cin, Cout] + [Cout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bs != [ws[1]] {
            return Err(Error::Shape(format!("linear: x {xs:?}, w {ws:?}, b {bs:?}")));
        }
        let (n, cin, cout) = (xs[0], xs[1], ws[1]);
        let mut out = vec![0.0; n * cout];
        for row in out.chunks_mut(cout) {
            row.copy_from_slice(self.value(b));
        }
        kernels::gemm(n, cin, cout, self.value(x), cin, 1, self.value(w), cout, 1, 1.0, &mut out, cout, 1);
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(vec![n, cout], out, Op::Linear { x, w, b }, ng))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).iter().map(|v| v.max(0.0)).collect();
        let ng = self.needs(x);
        self.push(self.shape(x).to_vec(), v, Op::Relu(x), ng)
    }

    /// Max over rows `starts[k]..starts[k+1]` of `[N, C]`; first maximal row wins.
    pub fn segment_max(&mut self, x: Var, starts: &[usize]) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 2 || starts.last() != Some(&xs[0]) {
            return Err(Error::Shape(format!("segment_max: x {xs:?} with {} segment bounds", starts.len())));
        }
        let c = xs[1];
        let k = starts.len() - 1;
        let xv = self.value(x);
        let mut out = vec![0.0; k * c];
        let mut argmax = vec![0u32; k * c];
        for s in 0..k {
            let (lo, hi) = (starts[s], starts[s + 1]);
            if hi <= lo {
                return Err(Error::InvalidArgument(format!("segment {s} is empty")));
            }
            for ch in 0..c {
                let mut best = xv[lo * c + ch];
                let mut arg = lo;
                for r in lo + 1..hi {
                    let v = xv[r * c + ch];
                    if v > best {
                        best = v;
                        arg = r;
                    }
                }
                out[s * c + ch] = best;
                argmax[s * c + ch] = arg as u32;
            }
        }
        let ng = self.needs(x);
        Ok(self.push(vec![k, c], out, Op::SegmentMax { x, argmax }, ng))
    }

    /// Appends `pooled[segment_of[n]]` to every row `n` of `x`.
    pub fn concat_pooled(&mut self, x: Var, pooled: Var, segment_of: Rc<Vec<u32>>) -> Result<Var> {
        let (xs, ps) = (self.shape(x), self.shape(pooled));
        if xs.len() != 2 || ps.len() != 2 || segment_of.len() != xs[0] {
            return Err(Error::Shape(format!("concat_pooled: x {xs:?}, pooled {ps:?}")));
        }
        let (n, c1, c2) = (xs[0], xs[1], ps[1]);
        let mut out = Vec::with_capacity(n * (c1 + c2));
        let (xv, pv) = (self.value(x), self.value(pooled));
        for r in 0..n {
            out.extend_from_slice(&xv[r * c1..(r + 1) * c1]);
            let s = segment_of[r] as usize;
            out.extend_from_slice(&pv[s * c2..(s + 1) * c2]);
        }
        let ng = self.needs(x) || self.needs(pooled);
        Ok(self.push(vec![n, c1 + c2], out, Op::ConcatPooled { x, pooled, segment_of }, ng))
    }

    /// Submanifold 3x3x3 convolution over active sites. `w` is `[27, Cin, Cout]`.
    pub fn subm_conv3d(&mut self, x: Var, w: Var, b: Var, rules: Rc<Rulebook>) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 3 || ws[0] != 27 || ws[1] != xs[1] || bs != [ws[2]] || xs[0] != rules.num_sites {
            return Err(Error::Shape(format!("subm_conv3d: x {xs:?}, w {ws:?}, b {bs:?}")));
        }
        let (cin, cout) = (ws[1], ws[2]);
        let out = kernels::subm_conv3d_forward(&rules, self.value(x), cin, self.value(w), self.value(b), cout);
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(vec![xs[0], cout], out, Op::SubmConv { x, w, b, rules }, ng))
    }

    /// Scatters `[K, C]` site features into a dense `[ny, nx, nz*C]` map.
    pub fn scatter_bev(&mut self, x: Var, coords: &[[usize; 3]], dims: [usize; 3]) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 2 || xs[0] != coords.len() {
            return Err(Error::Shape(format!("scatter_bev: x {xs:?} for {} sites", coords.len())));
        }
        let c = xs[1];
        let [nx, ny, nz] = dims;
        let mut offsets = Vec::with_capacity(coords.len());
        for co in coords {
            if co[0] >= nx || co[1] >= ny || co[2] >= nz {
                return Err(Error::InvalidArgument(format!("site {co:?} outside grid {dims:?}")));
            }
            offsets.push(((co[1] * nx + co[0]) * nz + co[2]) * c);
        }
        let mut out = vec![0.0; ny * nx * nz * c];
        let xv = self.value(x);
        for (i, &o) in offsets.iter().enumerate() {
            out[o..o + c].copy_from_slice(&xv[i * c..(i + 1) * c]);
        }
        let ng = self.needs(x);
        Ok(self.push(vec![ny, nx, nz * c], out, Op::ScatterBev { x, offsets }, ng))
    }

    /// `[H, W, Cin]` cross-correlation with `w: [k, k, Cin, Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize, dilation: usize) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 3 || ws.len() != 4 || ws[0] != ws[1] || ws[2] != xs[2] || bs != [ws[3]] {
            return Err(Error::Shape(format!("conv2d: x {xs:?}, w {ws:?}, b {bs:?}")));
        }
        if stride == 0 || dilation == 0 {
            return Err(Error::InvalidArgument("conv2d stride and dilation must be positive".into()));
        }
        let geom = Conv2dGeom { h: xs[0], w: xs[1], cin: xs[2], cout: ws[3], k: ws[0], stride, pad, dilation };
        if geom.h + 2 * pad < dilation * (geom.k - 1) + 1 || geom.w + 2 * pad < dilation * (geom.k - 1) + 1 {
            return Err(Error::Shape(format!("conv2d: kernel larger than padded input {xs:?}")));
        }
        let out = kernels::conv2d_forward(&geom, self.value(x), self.value(w), self.value(b));
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(vec![geom.out_h(), geom.out_w(), geom.cout], out, Op::Conv2d { x, w, b, geom }, ng))
    }

    /// A scalar whose gradient with respect to each input was already computed.
    pub fn precomputed_scalar(&mut self, value: f64, inputs: Vec<Var>, local: Vec<Vec<f64>>) -> Result<Var> {
        if inputs.len() != local.len() {
            return Err(Error::Shape("precomputed_scalar: inputs and gradients differ in count".into()));
        }
        for (v, g) in inputs.iter().zip(&local) {
            if self.nodes[v.0].value.len() != g.len() {
                return Err(Error::Shape("precomputed_scalar: gradient length mismatch".into()));
            }
        }
        let ng = inputs.iter().any(|v| self.needs(*v));
        Ok(self.push(vec![1], vec![value], Op::Precomputed { inputs, local }, ng))
    }

    /// Reverse sweep from a scalar `loss`; parameter gradients are accumulated
    /// into `store`.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let node = &self.nodes[loss.0];
        if node.value.len() != 1 {
            return Err(Error::Shape(format!("backward needs a scalar, got shape {:?}", node.shape)));
        }
        if !node.needs_grad {
            return Err(Error::InvalidArgument("backward on a tensor detached from every parameter".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        fn acc<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<&'g mut Vec<f64>> {
            if !nodes[v.0].needs_grad {
                return None;
            }
            let n = nodes[v.0].value.len();
            Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
        }

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let nodes = &self.nodes;
            match &nodes[id].op {
                Op::Constant => {}
                Op::Param(pid) => {
                    let t = store.by_id_mut(*pid);
                    let dst = t.grad.get_or_insert_with(|| vec![0.0; t.data.len()]);
                    for (d, v) in dst.iter_mut().zip(&g) {
                        *d += v;
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if let Some(d) = acc(&mut grads, nodes, v) {
                            for (d, x) in d.iter_mut().zip(&g) {
                                *d += x;
                            }
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (nodes[a.0].value.clone(), nodes[b.0].value.clone());
                    if let Some(d) = acc(&mut grads, nodes, *a) {
                        for ((d, x), y) in d.iter_mut().zip(&g).zip(&bv) {
                            *d += x * y;
                        }
                    }
                    if let Some(d) = acc(&mut grads, nodes, *b) {
                        for ((d, x), y) in d.iter_mut().zip(&g).zip(&av) {
                            *d += x * y;
                        }
                    }
                }
                Op::Sum(a) => {
                    if let Some(d) = acc(&mut grads, nodes, *a) {
                        for d in d.iter_mut() {
                            *d += g[0];
                        }
                    }
                }
                Op::Linear { x, w, b } => {
                    let (n, cin) = (nodes[x.0].shape[0], nodes[x.0].shape[1]);
                    let cout = nodes[w.0].shape[1];
                    if let Some(db) = acc(&mut grads, nodes, *b) {
                        for row in g.chunks(cout) {
                            for (d, v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                    }
                    if let Some(dw) = acc(&mut grads, nodes, *w) {
                        kernels::gemm(cin, n, cout, &nodes[x.0].value, 1, cin, &g, cout, 1, 1.0, dw, cout, 1);
                    }
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        kernels::gemm(n, cout, cin, &g, cout, 1, &nodes[w.0].value, 1, cout, 1.0, dx, cin, 1);
                    }
                }
                Op::Relu(x) => {
                    let xv = &nodes[x.0].value;
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        for ((d, gv), v) in dx.iter_mut().zip(&g).zip(xv) {
                            if *v > 0.0 {
                                *d += gv;
                            }
                        }
                    }
                }
                Op::SegmentMax { x, argmax } => {
                    let c = nodes[x.0].shape[1];
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        for (i, &r) in argmax.iter().enumerate() {
                            dx[r as usize * c + i % c] += g[i];
                        }
                    }
                }
                Op::ConcatPooled { x, pooled, segment_of } => {
                    let c1 = nodes[x.0].shape[1];
                    let c2 = nodes[pooled.0].shape[1];
                    let w = c1 + c2;
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        for (r, row) in g.chunks(w).enumerate() {
                            for (d, v) in dx[r * c1..(r + 1) * c1].iter_mut().zip(&row[..c1]) {
                                *d += v;
                            }
                        }
                    }
                    if let Some(dp) = acc(&mut grads, nodes, *pooled) {
                        for (r, row) in g.chunks(w).enumerate() {
                            let s = segment_of[r] as usize;
                            for (d, v) in dp[s * c2..(s + 1) * c2].iter_mut().zip(&row[c1..]) {
                                *d += v;
                            }
                        }
                    }
                }
                Op::SubmConv { x, w, b, rules } => {
                    let cin = nodes[x.0].shape[1];
                    let cout = nodes[w.0].shape[2];
                    let mut dw = vec![0.0; nodes[w.0].value.len()];
                    let mut db = vec![0.0; cout];
                    let mut dx = if nodes[x.0].needs_grad { Some(vec![0.0; nodes[x.0].value.len()]) } else { None };
                    kernels::subm_conv3d_backward(
                        rules,
                        &nodes[x.0].value,
                        cin,
                        &nodes[w.0].value,
                        cout,
                        &g,
                        dx.as_deref_mut(),
                        &mut dw,
                        &mut db,
                    );
                    add_into(&mut grads, nodes, *w, &dw);
                    add_into(&mut grads, nodes, *b, &db);
                    if let Some(dx) = dx {
                        add_into(&mut grads, nodes, *x, &dx);
                    }
                }
                Op::ScatterBev { x, offsets } => {
                    let c = nodes[x.0].shape[1];
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        for (i, &o) in offsets.iter().enumerate() {
                            for (d, v) in dx[i * c..(i + 1) * c].iter_mut().zip(&g[o..o + c]) {
                                *d += v;
                            }
                        }
                    }
                }
                Op::Conv2d { x, w, b, geom } => {
                    let mut dw = vec![0.0; nodes[w.0].value.len()];
                    let mut db = vec![0.0; geom.cout];
                    let mut dx = if nodes[x.0].needs_grad { Some(vec![0.0; nodes[x.0].value.len()]) } else { None };
                    kernels::conv2d_backward(
                        geom,
                        &nodes[x.0].value,
                        &nodes[w.0].value,
                        &g,
                        dx.as_deref_mut(),
                        &mut dw,
                        &mut db,
                    );
                    add_into(&mut grads, nodes, *w, &dw);
                    add_into(&mut grads, nodes, *b, &db);
                    if let Some(dx) = dx {
                        add_into(&mut grads, nodes, *x, &dx);
                    }
                }
                Op::Precomputed { inputs, local } => {
                    for (v, l) in inputs.iter().zip(local) {
                        if let Some(d) = acc(&mut grads, nodes, *v) {
                            for (d, x) in d.iter_mut().zip(l) {
                                *d += g[0] * x;
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn add_into(grads: &mut [Option<Vec<f64>>], nodes: &[Node], v: Var, src: &[f64]) {
    if !nodes[v.0].needs_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(d) => {
            for (d, s) in d.iter_mut().zip(src) {
                *d += s;
            }
        }
        slot @ None => *slot = Some(src.to_vec()),
    }
}
