use super::{GradSet, NnError, ParamId, ParamStore, Real, Result, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    AddRowBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    GlobalAvgPool(Var),
    SoftmaxRows(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    SumAll(Var),
    Rmse(Var, Var),
    Reshape(Var),
}

struct Node<T> {
    op: Op,
    value: Option<Tensor<T>>,
    /// Op-specific cache (the im2col matrix for convolutions).
    aux: Option<Vec<T>>,
    /// Whether any parameter or tracked input feeds this node.
    tracked: bool,
}

/// Records a forward pass for reverse-mode differentiation.
pub struct Tape<'s, T> {
    store: &'s ParamStore<T>,
    nodes: Vec<Node<T>>,
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    for (x, y) in ra.iter().zip(rb) {
        acc[0] += *x * *y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// `c[m,n] += a[m,k] b[k,n]`
fn gemm_nn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let ci = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip != T::zero() {
                axpy(aip, &b[p * n..(p + 1) * n], ci);
            }
        }
    }
}

/// `c[m,n] += a[m,k] b[n,k]^T`
fn gemm_nt<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let ai = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(ai, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `c[m,n] += a[k,m]^T b[k,n]`
fn gemm_tn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    for p in 0..k {
        let bp = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a[p * m + i];
            if api != T::zero() {
                axpy(api, bp, &mut c[i * n..(i + 1) * n]);
            }
        }
    }
}

fn mismatch<T>(msg: String) -> Result<T> {
    Err(NnError::ShapeMismatch(msg))
}

impl<'s, T: Real> Tape<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Tape { store, nodes: Vec::with_capacity(64) }
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor<T>) -> Var {
        let tracked = self.parents(&op).iter().any(|p| self.nodes[p.0].tracked);
        self.nodes.push(Node { op, value: Some(value), aux: None, tracked });
        Var(self.nodes.len() - 1)
    }

    fn parents(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Input | Op::Param(_) => vec![],
            Op::MatMul(a, b)
            | Op::MatMulBt(a, b)
            | Op::AddRowBias(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Rmse(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Relu(a)
            | Op::GlobalAvgPool(a)
            | Op::SoftmaxRows(a)
            | Op::MeanRows(a)
            | Op::SumAll(a)
            | Op::Reshape(a) => vec![*a],
            Op::SliceCols { x, .. } => vec![*x],
            Op::Conv2d { x, w, b, .. } => vec![*x, *w, *b],
            Op::ConcatCols(xs) | Op::ConcatRows(xs) => xs.clone(),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.store.value(id),
            _ => node.value.as_ref().expect("non-parameter nodes own their value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.value(v).shape
    }

    /// Records an input whose gradient is available after backward.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node { op: Op::Input, value: Some(t), aux: None, tracked: true });
        Var(self.nodes.len() - 1)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node { op: Op::Input, value: Some(t), aux: None, tracked: false });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node { op: Op::Param(id), value: None, aux: None, tracked: true });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return mismatch(format!("matmul [{m},{k}] x [{k2},{n}]"));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nn(m, k, n, &self.value(a).data, &self.value(b).data, &mut out);
        Ok(self.push(Op::MatMul(a, b), Tensor { shape: vec![m, n], data: out }))
    }

    /// `a b^T` for `a: [m,k]`, `b: [n,k]`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (n, k2) = self.value(b).dims2()?;
        if k != k2 {
            return mismatch(format!("matmul_bt [{m},{k}] x [{n},{k2}]^T"));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nt(m, k, n, &self.value(a).data, &self.value(b).data, &mut out);
        Ok(self.push(Op::MatMulBt(a, b), Tensor { shape: vec![m, n], data: out }))
    }

    /// Adds a length-`n` bias to every row of `a: [m,n]`.
    pub fn add_row_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if self.value(b).len() != n {
            return mismatch(format!("bias of {} for [{m},{n}]", self.value(b).len()));
        }
        let bias = &self.value(b).data;
        let mut out = self.value(a).data.clone();
        for row in out.chunks_exact_mut(n) {
            for (o, bb) in row.iter_mut().zip(bias) {
                *o += *bb;
            }
        }
        Ok(self.push(Op::AddRowBias(a, b), Tensor { shape: vec![m, n], data: out }))
    }

    fn zip_same(&mut self, a: Var, b: Var, op: Op, f: impl Fn(T, T) -> T) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return mismatch(format!("elementwise {:?} vs {:?}", ta.shape, tb.shape));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| f(*x, *y)).collect();
        let shape = ta.shape.clone();
        Ok(self.push(op, Tensor { shape, data }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let cc = T::of(c);
        let out = Tensor { shape: t.shape.clone(), data: t.data.iter().map(|v| *v * cc).collect() };
        self.push(Op::Scale(a, c), out)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let cc = T::of(c);
        let out = Tensor { shape: t.shape.clone(), data: t.data.iter().map(|v| *v + cc).collect() };
        self.push(Op::AddScalar(a), out)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor { shape: t.shape.clone(), data: t.data.iter().map(|v| v.max(T::zero())).collect() };
        self.push(Op::Relu(a), out)
    }

    /// 2-D convolution of `x: [C,H,W]` with `w: [O,C,k,k]` and bias `b: [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (c, h, wd) = match self.shape(x) {
            [c, h, w] => (*c, *h, *w),
            s => return mismatch(format!("conv input must be [C,H,W], got {s:?}")),
        };
        let (o, k) = match self.shape(w) {
            [o, c2, k, k2] if *c2 == c && k == k2 => (*o, *k),
            s => return mismatch(format!("conv weight {s:?} for {c} input channels")),
        };
        if self.value(b).len() != o {
            return mismatch(format!("conv bias of {} for {o} filters", self.value(b).len()));
        }
        if stride == 0 || h + 2 * pad < k || wd + 2 * pad < k {
            return mismatch(format!("conv input {h}x{wd} too small for kernel {k} pad {pad}"));
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let geom = ConvGeom { c, h, w: wd, o, k, oh, ow, stride, pad };
        let p = oh * ow;
        let xs = &self.value(x).data;
        let mut col = vec![T::zero(); c * k * k * p];
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut col[((ci * k + ky) * k + kx) * p..][..p];
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &xs[(ci * h + iy as usize) * wd..][..wd];
                        let dst = &mut row[oy * ow..(oy + 1) * ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < wd as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        let bias = &self.value(b).data;
        let mut out = vec![T::zero(); o * p];
        for (oi, chunk) in out.chunks_exact_mut(p).enumerate() {
            chunk.iter_mut().for_each(|v| *v = bias[oi]);
        }
        gemm_nn(o, c * k * k, p, &self.value(w).data, &col, &mut out);
        let v = self.push(Op::Conv2d { x, w, b, geom }, Tensor { shape: vec![o, oh, ow], data: out });
        self.nodes[v.0].aux = Some(col);
        Ok(v)
    }

    /// Mean over the spatial axes: `[C,H,W] -> [1,C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (c, hw) = match self.shape(x) {
            [c, h, w] => (*c, h * w),
            s => return mismatch(format!("pool input must be [C,H,W], got {s:?}")),
        };
        let t = self.value(x);
        let inv = T::of(1.0 / hw as f64);
        let data = t.data.chunks_exact(hw).map(|ch| ch.iter().copied().sum::<T>() * inv).collect();
        Ok(self.push(Op::GlobalAvgPool(x), Tensor { shape: vec![1, c], data }))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        let mut out = self.value(x).data.clone();
        for row in out.chunks_exact_mut(n) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v = *v / s;
            }
        }
        Ok(self.push(Op::SoftmaxRows(x), Tensor { shape: vec![m, n], data: out }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if start + len > n {
            return mismatch(format!("columns {start}..{} of a {n}-column matrix", start + len));
        }
        let t = self.value(x);
        let data = (0..m).flat_map(|i| t.data[i * n + start..i * n + start + len].iter().copied()).collect();
        Ok(self.push(Op::SliceCols { x, start }, Tensor { shape: vec![m, len], data }))
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let mut rows = None;
        let mut total = 0;
        for v in xs {
            let (m, n) = self.value(*v).dims2()?;
            if *rows.get_or_insert(m) != m {
                return mismatch("concat_cols row counts differ".into());
            }
            total += n;
        }
        let m = rows.ok_or_else(|| NnError::ShapeMismatch("concat of nothing".into()))?;
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for v in xs {
                let t = self.value(*v);
                let n = t.shape[1];
                data.extend_from_slice(&t.data[i * n..(i + 1) * n]);
            }
        }
        Ok(self.push(Op::ConcatCols(xs.to_vec()), Tensor { shape: vec![m, total], data }))
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let mut cols = None;
        let mut total = 0;
        let mut data = Vec::new();
        for v in xs {
            let (m, n) = self.value(*v).dims2()?;
            if *cols.get_or_insert(n) != n {
                return mismatch("concat_rows column counts differ".into());
            }
            total += m;
            data.extend_from_slice(&self.value(*v).data);
        }
        let n = cols.ok_or_else(|| NnError::ShapeMismatch("concat of nothing".into()))?;
        Ok(self.push(Op::ConcatRows(xs.to_vec()), Tensor { shape: vec![total, n], data }))
    }

    /// Column means: `[m,n] -> [1,n]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        let t = self.value(x);
        let inv = T::of(1.0 / m as f64);
        let data = (0..n).map(|j| (0..m).map(|i| t.data[i * n + j]).sum::<T>() * inv).collect();
        Ok(self.push(Op::MeanRows(x), Tensor { shape: vec![1, n], data }))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().copied().sum::<T>();
        self.push(Op::SumAll(x), Tensor::scalar(s))
    }

    /// `sqrt(mean((pred - target)^2))`; the gradient at zero loss is zero.
    pub fn rmse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.len() != t.len() || p.is_empty() {
            return mismatch(format!("rmse over {} and {} values", p.len(), t.len()));
        }
        let mse = p.data.iter().zip(&t.data).map(|(a, b)| (*a - *b) * (*a - *b)).sum::<T>() / T::of(p.len() as f64);
        Ok(self.push(Op::Rmse(pred, target), Tensor::scalar(mse.sqrt())))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.len() {
            return mismatch(format!("reshape {:?} -> {shape:?}", t.shape));
        }
        let out = Tensor { shape: shape.to_vec(), data: t.data.clone() };
        Ok(self.push(Op::Reshape(x), out))
    }

    /// Sign pattern of every ReLU input; changes when a perturbation crosses a kink.
    pub fn relu_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(a) = node.op {
                sig.extend(self.value(a).data.iter().map(|v| *v > T::zero()));
            }
        }
        sig
    }

    /// Backpropagates from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if root.0 >= self.nodes.len() {
            return Err(NnError::NoGraph);
        }
        let v = self.value(root);
        if v.len() != 1 {
            return mismatch(format!("backward from non-scalar {:?}", v.shape));
        }
        self.backward_seeded(root, Tensor::full(&v.shape.clone(), T::one()))
    }

    /// Backpropagates an arbitrary upstream gradient `seed` from `root`.
    pub fn backward_seeded(&self, root: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        if root.0 >= self.nodes.len() {
            return Err(NnError::NoGraph);
        }
        if seed.shape != self.value(root).shape {
            return mismatch(format!("seed {:?} for root {:?}", seed.shape, self.value(root).shape));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let params = self
            .nodes
            .iter()
            .map(|n| match n.op {
                Op::Param(id) => Some(id),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let mut acc = |v: Var, f: &dyn Fn(&mut [T])| {
            if !self.nodes[v.0].tracked {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(&self.value(v).shape));
            f(&mut slot.data);
        };
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let n = self.value(*b).shape[1];
                let (av, bv) = (&self.value(*a).data, &self.value(*b).data);
                acc(*a, &|d| gemm_nt(m, n, k, &g.data, bv, d));
                acc(*b, &|d| gemm_tn(k, m, n, av, &g.data, d));
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let n = self.value(*b).shape[0];
                let (av, bv) = (&self.value(*a).data, &self.value(*b).data);
                acc(*a, &|d| gemm_nn(m, n, k, &g.data, bv, d));
                acc(*b, &|d| gemm_tn(n, m, k, &g.data, av, d));
            }
            Op::AddRowBias(a, b) => {
                let n = self.value(*b).len();
                acc(*a, &|d| axpy(T::one(), &g.data, d));
                acc(*b, &|d| {
                    for row in g.data.chunks_exact(n) {
                        axpy(T::one(), row, d);
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &|d| axpy(T::one(), &g.data, d));
                acc(*b, &|d| axpy(T::one(), &g.data, d));
            }
            Op::Sub(a, b) => {
                acc(*a, &|d| axpy(T::one(), &g.data, d));
                acc(*b, &|d| axpy(-T::one(), &g.data, d));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.value(*a).data, &self.value(*b).data);
                acc(*a, &|d| d.iter_mut().zip(&g.data).zip(bv).for_each(|((d, g), y)| *d += *g * *y));
                acc(*b, &|d| d.iter_mut().zip(&g.data).zip(av).for_each(|((d, g), x)| *d += *g * *x));
            }
            Op::Scale(a, c) => acc(*a, &|d| axpy(T::of(*c), &g.data, d)),
            Op::AddScalar(a) | Op::Reshape(a) => acc(*a, &|d| axpy(T::one(), &g.data, d)),
            Op::Relu(a) => {
                let x = &self.value(*a).data;
                acc(*a, &|d| {
                    for ((d, g), x) in d.iter_mut().zip(&g.data).zip(x) {
                        if *x > T::zero() {
                            *d += *g;
                        }
                    }
                });
            }
            Op::Conv2d { x, w, b, geom } => {
                let ConvGeom { c, h, w: wd, o, k, oh, ow, stride, pad } = *geom;
                let p = oh * ow;
                let kk = c * k * k;
                let col = node.aux.as_ref().expect("conv caches its column matrix");
                let wv = &self.value(*w).data;
                acc(*w, &|d| gemm_nt(o, p, kk, &g.data, col, d));
                acc(*b, &|d| {
                    for (oi, row) in g.data.chunks_exact(p).enumerate() {
                        d[oi] += row.iter().copied().sum::<T>();
                    }
                });
                if !self.nodes[x.0].tracked {
                    return;
                }
                let mut dcol = vec![T::zero(); kk * p];
                gemm_tn(kk, o, p, wv, &g.data, &mut dcol);
                acc(*x, &|d| {
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let row = &dcol[((ci * k + ky) * k + kx) * p..][..p];
                                for oy in 0..oh {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    let dst = &mut d[(ci * h + iy as usize) * wd..][..wd];
                                    for ox in 0..ow {
                                        let ix = (ox * stride + kx) as isize - pad as isize;
                                        if ix >= 0 && ix < wd as isize {
                                            dst[ix as usize] += row[oy * ow + ox];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::GlobalAvgPool(x) => {
                let hw = self.value(*x).len() / g.len();
                let inv = T::of(1.0 / hw as f64);
                acc(*x, &|d| {
                    for (ch, gc) in d.chunks_exact_mut(hw).zip(&g.data) {
                        ch.iter_mut().for_each(|v| *v += *gc * inv);
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let n = g.shape[1];
                let p = node.value.as_ref().unwrap();
                acc(*x, &|d| {
                    for ((drow, grow), prow) in d.chunks_exact_mut(n).zip(g.data.chunks_exact(n)).zip(p.data.chunks_exact(n)) {
                        let s = dot(grow, prow);
                        for ((dv, gv), pv) in drow.iter_mut().zip(grow).zip(prow) {
                            *dv += *pv * (*gv - s);
                        }
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let n = self.value(*x).shape[1];
                let len = g.shape[1];
                acc(*x, &|d| {
                    for (i, grow) in g.data.chunks_exact(len).enumerate() {
                        axpy(T::one(), grow, &mut d[i * n + start..i * n + start + len]);
                    }
                });
            }
            Op::ConcatCols(xs) => {
                let total = g.shape[1];
                let mut off = 0;
                for v in xs {
                    let n = self.value(*v).shape[1];
                    acc(*v, &|d| {
                        for (i, drow) in d.chunks_exact_mut(n).enumerate() {
                            axpy(T::one(), &g.data[i * total + off..i * total + off + n], drow);
                        }
                    });
                    off += n;
                }
            }
            Op::ConcatRows(xs) => {
                let mut off = 0;
                for v in xs {
                    let len = self.value(*v).len();
                    acc(*v, &|d| axpy(T::one(), &g.data[off..off + len], d));
                    off += len;
                }
            }
            Op::MeanRows(x) => {
                let n = g.len();
                let m = self.value(*x).len() / n;
                let inv = T::of(1.0 / m as f64);
                acc(*x, &|d| {
                    for row in d.chunks_exact_mut(n) {
                        axpy(inv, &g.data, row);
                    }
                });
            }
            Op::SumAll(x) => {
                let gv = g.item();
                acc(*x, &|d| d.iter_mut().for_each(|v| *v += gv));
            }
            Op::Rmse(p, t) => {
                let loss = node.value.as_ref().unwrap().item();
                if loss > T::zero() {
                    let (pv, tv) = (&self.value(*p).data, &self.value(*t).data);
                    let coef = g.item() / (T::of(pv.len() as f64) * loss);
                    acc(*p, &|d| d.iter_mut().zip(pv.iter().zip(tv)).for_each(|(d, (a, b))| *d += coef * (*a - *b)));
                    acc(*t, &|d| d.iter_mut().zip(pv.iter().zip(tv)).for_each(|(d, (a, b))| *d -= coef * (*a - *b)));
                }
            }
        }
    }
}

/// Result of a backward pass: gradients of every recorded node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<Option<ParamId>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to a recorded value, if it influenced the root.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Sums the gradients of every parameter node into `out`.
    pub fn accumulate_into(&self, out: &mut GradSet<T>) {
        for (g, p) in self.grads.iter().zip(&self.params) {
            if let (Some(g), Some(id)) = (g, p) {
                out.grads[id.index()].add_assign(g);
            }
        }
    }

    pub fn to_grad_set(&self, store: &ParamStore<T>) -> GradSet<T> {
        let mut out = GradSet::zeros_like(store);
        self.accumulate_into(&mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_params_has_unit_gradients() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", Tensor::from_f64(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap());
        let b = store.add("b", Tensor::from_f64(&[4], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let mut tape = Tape::new(&store);
        let (va, vb) = (tape.param(a), tape.param(b));
        let (sa, sb) = (tape.sum_all(va), tape.sum_all(vb));
        let loss = tape.add(sa, sb).unwrap();
        let g = tape.backward(loss).unwrap().to_grad_set(&store);
        assert!(g.get(a).data.iter().chain(&g.get(b).data).all(|v| *v == 1.0));
    }

    #[test]
    fn half_squared_norm_gradient_is_x() {
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        let x = tape.input(Tensor::from_f64(&[1, 4], &[0.3, -1.2, 2.0, 0.0]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum_all(sq);
        let loss = tape.scale(s, 0.5);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap().data, vec![0.3, -1.2, 2.0, 0.0]);
    }

    #[test]
    fn backward_without_graph() {
        let store = ParamStore::<f32>::new();
        let tape = Tape::new(&store);
        assert!(matches!(tape.backward(Var(0)), Err(NnError::NoGraph)));
    }

    #[test]
    fn rmse_values_and_zero_gradient() {
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        let p = tape.input(Tensor::from_f64(&[2], &[3.0, -3.0]).unwrap());
        let t = tape.input(Tensor::from_f64(&[2], &[0.0, 0.0]).unwrap());
        let l = tape.rmse(p, t).unwrap();
        assert_eq!(tape.value(l).item(), 3.0);
        let same = tape.rmse(p, p).unwrap();
        assert_eq!(tape.value(same).item(), 0.0);
        let g = tape.backward(same).unwrap();
        assert!(g.wrt(p).is_none_or(|g| g.data.iter().all(|v| *v == 0.0)));
        let bad = tape.input(Tensor::from_f64(&[3], &[0.0; 3]).unwrap());
        assert!(matches!(tape.rmse(p, bad), Err(NnError::ShapeMismatch(_))));
    }

    #[test]
    fn matmul_shape_errors() {
        let store = ParamStore::<f32>::new();
        let mut tape = Tape::new(&store);
        let a = tape.input(Tensor::zeros(&[2, 3]));
        let b = tape.input(Tensor::zeros(&[2, 3]));
        assert!(tape.matmul(a, b).is_err());
        assert!(tape.matmul_bt(a, b).is_ok());
    }

    #[test]
    fn conv_matches_direct_loops() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (c, h, w, o) = (2, 7, 6, 3);
        let x: Vec<f64> = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let wt: Vec<f64> = (0..o * c * 9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bs: Vec<f64> = (0..o).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        let vx = tape.input(Tensor::from_f64(&[c, h, w], &x).unwrap());
        let vw = tape.input(Tensor::from_f64(&[o, c, 3, 3], &wt).unwrap());
        let vb = tape.input(Tensor::from_f64(&[o], &bs).unwrap());
        let y = tape.conv2d(vx, vw, vb, 2, 1).unwrap();
        let (oh, ow) = (4, 3);
        assert_eq!(tape.shape(y), &[o, oh, ow]);
        for oi in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = bs[oi];
                    for ci in 0..c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (iy, ix) = (2 * oy as isize + ky as isize - 1, 2 * ox as isize + kx as isize - 1);
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                    s += wt[((oi * c + ci) * 3 + ky) * 3 + kx] * x[(ci * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                    }
                    let got = tape.value(y).data[(oi * oh + oy) * ow + ox];
                    assert!((got - s).abs() < 1e-12);
                }
            }
        }
    }
}
