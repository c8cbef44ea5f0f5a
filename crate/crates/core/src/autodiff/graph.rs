use super::kernels::{self, ConvGeom};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::geometry::BilinearTaps;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Unary<T> {
    Relu,
    Softplus,
    Exp,
    Log,
    Sqrt,
    Abs,
    Recip,
    Scale(T),
    AddScalar(T),
}

#[derive(Debug, Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Same,
    LeftScalar,
    RightScalar,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Unary(Var, Unary<T>),
    Binary(Var, Var, Binary, Bcast),
    Matmul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    AddRow(Var, Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var, usize),
    MinLast {
        x: Var,
        k: usize,
        argmin: Vec<usize>,
    },
    ExpandLast(Var, usize),
    Reshape(Var),
    Concat0(Vec<Var>),
    StackLast(Vec<Var>),
    Bilinear {
        grid: Var,
        channels: usize,
        taps: Vec<[(u32, T); 4]>,
    },
    BoxFilter {
        x: Var,
        planes: usize,
        h: usize,
        w: usize,
        k: usize,
    },
    ForwardDiff {
        x: Var,
        planes: usize,
        h: usize,
        w: usize,
        axis_last: bool,
    },
    ExclusiveCumsum(Var, usize),
    WeightedSum {
        w: Var,
        values: Tensor<T>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    ChwToHwc {
        x: Var,
        c: usize,
        h: usize,
        w: usize,
    },
    TransposeLast2 {
        x: Var,
        a: usize,
        b: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, which is a
/// topological order; [`Graph::backward`] walks it in reverse exactly once.
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of the leaves that require them, keyed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn shape_of_len(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    pub fn scalar(&mut self, v: T) -> Var {
        self.constant(Tensor::scalar(v))
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    // ---- elementwise -------------------------------------------------------

    fn unary(&mut self, x: Var, kind: Unary<T>) -> Var {
        let xs = self.value(x);
        let data: Vec<T> = xs.data().iter().map(|&v| unary_fwd(kind, v)).collect();
        let value = Tensor::new(xs.shape(), data);
        self.push(value, Op::Unary(x, kind), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Softplus)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Exp)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Log)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sqrt)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Abs)
    }

    pub fn recip(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Recip)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Scale(-T::one()))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.unary(x, Unary::Scale(c))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        self.unary(x, Unary::AddScalar(c))
    }

    fn binary(&mut self, a: Var, b: Var, kind: Binary) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let bc = if sa == sb {
            Bcast::Same
        } else if shape_of_len(sa) == 1 {
            Bcast::LeftScalar
        } else if shape_of_len(sb) == 1 {
            Bcast::RightScalar
        } else {
            panic!("shape mismatch in {kind:?}: {sa:?} vs {sb:?}");
        };
        let (da, db) = (self.data(a), self.data(b));
        let shape = if bc == Bcast::LeftScalar { sb.to_vec() } else { sa.to_vec() };
        let data = match kind {
            Binary::Add => zip_bcast(da, db, bc, |x, y| x + y),
            Binary::Sub => zip_bcast(da, db, bc, |x, y| x - y),
            Binary::Mul => zip_bcast(da, db, bc, |x, y| x * y),
            Binary::Div => zip_bcast(da, db, bc, |x, y| x / y),
        };
        self.push(Tensor::new(&shape, data), Op::Binary(a, b, kind, bc), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Binary::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Binary::Div)
    }

    // ---- linear algebra ----------------------------------------------------

    /// `[m,k] × [k,n] → [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(
            sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0],
            "shape mismatch in matmul: {sa:?} vs {sb:?}"
        );
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        kernels::gemm(m, k, n, self.data(a), false, self.data(b), false, &mut out, false);
        self.push(Tensor::new(&[m, n], out), Op::Matmul { a, b, m, k, n }, &[a, b])
    }

    /// Adds a `[n]` row vector to every row of `[m,n]`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (sx, sr) = (self.shape(x), self.shape(row));
        assert!(
            sx.len() == 2 && sr.len() == 1 && sx[1] == sr[0],
            "shape mismatch in add_row: {sx:?} vs {sr:?}"
        );
        let n = sr[0];
        let r = self.data(row);
        let mut data = self.data(x).to_vec();
        for chunk in data.chunks_exact_mut(n) {
            for (v, &b) in chunk.iter_mut().zip(r) {
                *v += b;
            }
        }
        let shape = sx.to_vec();
        self.push(Tensor::new(&shape, data), Op::AddRow(x, row), &[x, row])
    }

    // ---- reductions --------------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.data(x).iter().map(|v| v.f64()).sum();
        self.push(Tensor::scalar(T::of(s)), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        assert!(!d.is_empty(), "mean of empty tensor");
        let s: f64 = d.iter().map(|v| v.f64()).sum::<f64>() / d.len() as f64;
        self.push(Tensor::scalar(T::of(s)), Op::Mean(x), &[x])
    }

    /// Sum over the last axis: `[…, n] → […]`.
    pub fn sum_last(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().expect("sum_last on a scalar");
        let data: Vec<T> = self
            .data(x)
            .chunks_exact(n)
            .map(|c| T::of(c.iter().map(|v| v.f64()).sum()))
            .collect();
        self.push(Tensor::new(&shape[..shape.len() - 1], data), Op::SumLast(x, n), &[x])
    }

    /// Minimum over the last axis; ties resolve to the lowest index and the
    /// gradient is routed entirely to that element.
    pub fn min_last(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let k = *shape.last().expect("min_last on a scalar");
        assert!(k > 0, "min over an empty axis");
        let mut argmin = Vec::with_capacity(self.data(x).len() / k);
        let mut data = Vec::with_capacity(argmin.capacity());
        for row in self.data(x).chunks_exact(k) {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v < row[best] {
                    best = i;
                }
            }
            argmin.push(best);
            data.push(row[best]);
        }
        self.push(Tensor::new(&shape[..shape.len() - 1], data), Op::MinLast { x, k, argmin }, &[x])
    }

    /// Repeats every element `m` times along a new last axis: `[…] → […, m]`.
    pub fn expand_last(&mut self, x: Var, m: usize) -> Var {
        let mut shape = self.shape(x).to_vec();
        shape.push(m);
        let data: Vec<T> = self.data(x).iter().flat_map(|&v| std::iter::repeat_n(v, m)).collect();
        self.push(Tensor::new(&shape, data), Op::ExpandLast(x, m), &[x])
    }

    // ---- shape -------------------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let value = self.value(x).clone().reshaped(shape);
        self.push(value, Op::Reshape(x), &[x])
    }

    /// Concatenates along axis 0; trailing dimensions must agree.
    pub fn concat0(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let tail = self.shape(parts[0])[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            assert!(s[1..] == tail[..], "shape mismatch in concat0: {:?} vs {:?}", self.shape(parts[0]), s);
            lead += s[0];
            data.extend_from_slice(self.data(p));
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&tail);
        self.push(Tensor::new(&shape, data), Op::Concat0(parts.to_vec()), parts)
    }

    /// Stacks equally shaped tensors along a new last axis: `K × […] → […, K]`.
    pub fn stack_last(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "stack of nothing");
        let base = self.shape(parts[0]).to_vec();
        for &p in parts {
            assert!(self.shape(p) == &base[..], "shape mismatch in stack_last: {base:?} vs {:?}", self.shape(p));
        }
        let k = parts.len();
        let n = shape_of_len(&base);
        let mut data = vec![T::zero(); n * k];
        for (j, &p) in parts.iter().enumerate() {
            for (i, &v) in self.data(p).iter().enumerate() {
                data[i * k + j] = v;
            }
        }
        let mut shape = base;
        shape.push(k);
        self.push(Tensor::new(&shape, data), Op::StackLast(parts.to_vec()), parts)
    }

    /// `[C,H,W] → [H,W,C]`.
    pub fn chw_to_hwc(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        assert_eq!(s.len(), 3, "chw_to_hwc expects rank 3, got {s:?}");
        let (c, h, w) = (s[0], s[1], s[2]);
        let src = self.data(x);
        let mut data = vec![T::zero(); c * h * w];
        for ch in 0..c {
            for i in 0..h * w {
                data[i * c + ch] = src[ch * h * w + i];
            }
        }
        self.push(Tensor::new(&[h, w, c], data), Op::ChwToHwc { x, c, h, w }, &[x])
    }

    /// Swaps the two trailing axes: `[…, a, b] → […, b, a]`.
    pub fn transpose_last2(&mut self, x: Var) -> Var {
        let mut s = self.shape(x).to_vec();
        assert!(s.len() >= 2, "transpose_last2 expects rank >= 2, got {s:?}");
        let n = s.len();
        let (a, b) = (s[n - 2], s[n - 1]);
        let data = transpose_blocks(self.data(x), a, b);
        s.swap(n - 2, n - 1);
        self.push(Tensor::new(&s, data), Op::TransposeLast2 { x, a, b }, &[x])
    }

    // ---- image ops -------------------------------------------------------------

    /// Bilinear samples of an `[H,W,C]` grid at normalized coordinates with
    /// border clamping: `[N, C]`. Differentiable with respect to the grid.
    pub fn bilinear_sample(&mut self, grid: Var, coords: &[[f64; 2]]) -> Var {
        let s = self.shape(grid);
        assert_eq!(s.len(), 3, "bilinear_sample expects an [H,W,C] grid, got {s:?}");
        let (h, w, c) = (s[0], s[1], s[2]);
        let g = self.data(grid);
        let mut taps = Vec::with_capacity(coords.len());
        let mut out = vec![T::zero(); coords.len() * c];
        for (n, &u) in coords.iter().enumerate() {
            let t = BilinearTaps::new(u, w, h).taps(w);
            let tt = t.map(|(i, wt)| (i as u32, T::of(wt)));
            let row = &mut out[n * c..(n + 1) * c];
            for &(idx, wt) in &tt {
                if wt == T::zero() {
                    continue;
                }
                let texel = &g[idx as usize * c..idx as usize * c + c];
                for (o, &v) in row.iter_mut().zip(texel) {
                    *o += wt * v;
                }
            }
            taps.push(tt);
        }
        self.push(
            Tensor::new(&[coords.len(), c], out),
            Op::Bilinear {
                grid,
                channels: c,
                taps,
            },
            &[grid],
        )
    }

    /// k×k mean filter over the two trailing axes with clamp padding.
    pub fn box_filter(&mut self, x: Var, k: usize) -> Var {
        assert!(k % 2 == 1, "box filter size must be odd, got {k}");
        let s = self.shape(x).to_vec();
        assert!(s.len() >= 2, "box_filter expects rank >= 2, got {s:?}");
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let planes = shape_of_len(&s[..s.len() - 2]);
        let data = kernels::box_filter(self.data(x), planes, h, w, k);
        self.push(Tensor::new(&s, data), Op::BoxFilter { x, planes, h, w, k }, &[x])
    }

    /// Forward difference along W (`axis_last`) or H, zero padded at the end.
    pub fn forward_diff(&mut self, x: Var, axis_last: bool) -> Var {
        let s = self.shape(x).to_vec();
        assert!(s.len() >= 2, "forward_diff expects rank >= 2, got {s:?}");
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let planes = shape_of_len(&s[..s.len() - 2]);
        let data = kernels::forward_diff(self.data(x), planes, h, w, axis_last);
        self.push(
            Tensor::new(&s, data),
            Op::ForwardDiff {
                x,
                planes,
                h,
                w,
                axis_last,
            },
            &[x],
        )
    }

    /// `out[…, i] = Σ_{j<i} x[…, j]` along the last axis.
    pub fn exclusive_cumsum(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let n = *s.last().expect("cumsum on a scalar");
        let mut data = vec![T::zero(); self.data(x).len()];
        for (src, dst) in self.data(x).chunks_exact(n).zip(data.chunks_exact_mut(n)) {
            let mut acc = T::zero();
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = acc;
                acc += v;
            }
        }
        self.push(Tensor::new(&s, data), Op::ExclusiveCumsum(x, n), &[x])
    }

    /// Contracts weights `[R,S]` against constant values `[R,S,M]`: `[R,M]`.
    pub fn weighted_sum(&mut self, w: Var, values: Tensor<T>) -> Var {
        let sw = self.shape(w);
        let sv = values.shape();
        assert!(
            sw.len() == 2 && sv.len() == 3 && sv[0] == sw[0] && sv[1] == sw[1],
            "shape mismatch in weighted_sum: {sw:?} vs {sv:?}"
        );
        let (r, s, m) = (sv[0], sv[1], sv[2]);
        let wd = self.data(w);
        let vd = values.data();
        let mut out = vec![T::zero(); r * m];
        for ri in 0..r {
            let o = &mut out[ri * m..(ri + 1) * m];
            for si in 0..s {
                let wt = wd[ri * s + si];
                let v = &vd[(ri * s + si) * m..(ri * s + si + 1) * m];
                for (a, &b) in o.iter_mut().zip(v) {
                    *a += wt * b;
                }
            }
        }
        self.push(Tensor::new(&[r, m], out), Op::WeightedSum { w, values }, &[w])
    }

    /// 3×3 convolution, zero padding 1: `[Cin,H,W] ⊛ [Cout,Cin,3,3] + [Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Var {
        assert!(stride == 1 || stride == 2, "conv2d stride must be 1 or 2, got {stride}");
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        assert!(
            sx.len() == 3 && sw.len() == 4 && sw[1] == sx[0] && sw[2] == 3 && sw[3] == 3 && sb == [sw[0]],
            "shape mismatch in conv2d: input {sx:?}, weight {sw:?}, bias {sb:?}"
        );
        let cout = sw[0];
        let geom = ConvGeom::new(sx[0], sx[1], sx[2], stride);
        let cols = kernels::im2col(self.data(x), &geom);
        let ol = geom.out_len();
        let mut out = vec![T::zero(); cout * ol];
        kernels::gemm(cout, sx[0] * 9, ol, self.data(w), false, &cols, false, &mut out, false);
        for (c, &bias) in self.data(b).iter().enumerate() {
            for v in &mut out[c * ol..(c + 1) * ol] {
                *v += bias;
            }
        }
        let shape = [cout, geom.out_height, geom.out_width];
        let cols = if self.requires_grad(w) { cols } else { Vec::new() };
        self.push(Tensor::new(&shape, out), Op::Conv2d { x, w, b, geom, cols }, &[x, w, b])
    }

    /// Stride-2 transposed 3×3 convolution doubling resolution:
    /// `[Cin,H,W]`, weight `[Cin,Cout,3,3]`, bias `[Cout]` → `[Cout,2H,2W]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        assert!(
            sx.len() == 3 && sw.len() == 4 && sw[0] == sx[0] && sw[2] == 3 && sw[3] == 3 && sb == [sw[1]],
            "shape mismatch in conv_transpose2d: input {sx:?}, weight {sw:?}, bias {sb:?}"
        );
        let (cin, h, wd, cout) = (sx[0], sx[1], sx[2], sw[1]);
        let geom = ConvGeom::new(cout, 2 * h, 2 * wd, 2);
        debug_assert_eq!((geom.out_height, geom.out_width), (h, wd));
        let mut cols = vec![T::zero(); cout * 9 * h * wd];
        kernels::gemm(cout * 9, cin, h * wd, self.data(w), true, self.data(x), false, &mut cols, false);
        let mut out = kernels::col2im(&cols, &geom);
        let plane = 4 * h * wd;
        for (c, &bias) in self.data(b).iter().enumerate() {
            for v in &mut out[c * plane..(c + 1) * plane] {
                *v += bias;
            }
        }
        self.push(
            Tensor::new(&[cout, 2 * h, 2 * wd], out),
            Op::ConvTranspose2d { x, w, b, geom },
            &[x, w, b],
        )
    }

    // ---- backward ------------------------------------------------------------

    /// Reverse pass from a scalar `loss`. Returns gradients for every leaf
    /// created with `requires_grad`; constants receive none.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let ls = self.shape(loss);
        if shape_of_len(ls) != 1 {
            return Err(Error::NonScalarLoss(ls.to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        let mut out: Vec<Option<Tensor<T>>> = Vec::with_capacity(loss.0 + 1);
        out.resize_with(loss.0 + 1, || None);
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if let Op::Leaf = node.op {
                if node.requires_grad {
                    out[id] = Some(Tensor::new(node.value.shape(), g));
                }
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads: out })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Unary(x, kind) => {
                let xv = self.data(*x);
                let yv = node.value.data();
                let dx: Vec<T> = (0..g.len()).map(|i| g[i] * unary_deriv(*kind, xv[i], yv[i])).collect();
                accumulate(grads, *x, dx);
            }
            Op::Binary(a, b, kind, bc) => self.backprop_binary(*a, *b, *kind, *bc, g, grads),
            Op::Matmul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                if self.wants(*a) {
                    let mut da = vec![T::zero(); m * k];
                    kernels::gemm(m, n, k, g, false, self.data(*b), true, &mut da, false);
                    accumulate(grads, *a, da);
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); k * n];
                    kernels::gemm(k, m, n, self.data(*a), true, g, false, &mut db, false);
                    accumulate(grads, *b, db);
                }
            }
            Op::AddRow(x, row) => {
                if self.wants(*x) {
                    accumulate(grads, *x, g.to_vec());
                }
                if self.wants(*row) {
                    let n = self.data(*row).len();
                    let mut dr = vec![0.0f64; n];
                    for chunk in g.chunks_exact(n) {
                        for (d, &v) in dr.iter_mut().zip(chunk) {
                            *d += v.f64();
                        }
                    }
                    accumulate(grads, *row, dr.into_iter().map(T::of).collect());
                }
            }
            Op::Sum(x) => {
                let n = self.data(*x).len();
                accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.data(*x).len();
                accumulate(grads, *x, vec![g[0] / T::of(n as f64); n]);
            }
            Op::SumLast(x, n) => {
                let dx: Vec<T> = g.iter().flat_map(|&v| std::iter::repeat_n(v, *n)).collect();
                accumulate(grads, *x, dx);
            }
            Op::MinLast { x, k, argmin } => {
                let mut dx = vec![T::zero(); g.len() * k];
                for (row, (&gi, &j)) in g.iter().zip(argmin).enumerate() {
                    dx[row * k + j] = gi;
                }
                accumulate(grads, *x, dx);
            }
            Op::ExpandLast(x, m) => {
                let dx: Vec<T> = g.chunks_exact(*m).map(|c| c.iter().copied().sum()).collect();
                accumulate(grads, *x, dx);
            }
            Op::Reshape(x) => accumulate(grads, *x, g.to_vec()),
            Op::Concat0(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.data(p).len();
                    if self.wants(p) {
                        accumulate(grads, p, g[off..off + n].to_vec());
                    }
                    off += n;
                }
            }
            Op::StackLast(parts) => {
                let k = parts.len();
                for (j, &p) in parts.iter().enumerate() {
                    if self.wants(p) {
                        let dp: Vec<T> = g.iter().skip(j).step_by(k).copied().collect();
                        accumulate(grads, p, dp);
                    }
                }
            }
            Op::ChwToHwc { x, c, h, w } => {
                let (c, hw) = (*c, h * w);
                let mut dx = vec![T::zero(); c * hw];
                for ch in 0..c {
                    for i in 0..hw {
                        dx[ch * hw + i] = g[i * c + ch];
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::TransposeLast2 { x, a, b } => accumulate(grads, *x, transpose_blocks(g, *b, *a)),
            Op::Bilinear { grid, channels, taps } => {
                let c = *channels;
                let mut dg = vec![T::zero(); self.data(*grid).len()];
                for (n, tt) in taps.iter().enumerate() {
                    let gr = &g[n * c..(n + 1) * c];
                    for &(idx, wt) in tt {
                        if wt == T::zero() {
                            continue;
                        }
                        let dst = &mut dg[idx as usize * c..idx as usize * c + c];
                        for (d, &v) in dst.iter_mut().zip(gr) {
                            *d += wt * v;
                        }
                    }
                }
                accumulate(grads, *grid, dg);
            }
            Op::BoxFilter { x, planes, h, w, k } => {
                accumulate(grads, *x, kernels::box_filter_backward(g, *planes, *h, *w, *k));
            }
            Op::ForwardDiff {
                x,
                planes,
                h,
                w,
                axis_last,
            } => {
                accumulate(grads, *x, kernels::forward_diff_backward(g, *planes, *h, *w, *axis_last));
            }
            Op::ExclusiveCumsum(x, n) => {
                let mut dx = vec![T::zero(); g.len()];
                for (src, dst) in g.chunks_exact(*n).zip(dx.chunks_exact_mut(*n)) {
                    let mut acc = T::zero();
                    for i in (0..*n).rev() {
                        dst[i] = acc;
                        acc += src[i];
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::WeightedSum { w, values } => {
                let sv = values.shape();
                let (r, s, m) = (sv[0], sv[1], sv[2]);
                let vd = values.data();
                let mut dw = vec![T::zero(); r * s];
                for ri in 0..r {
                    let gr = &g[ri * m..(ri + 1) * m];
                    for si in 0..s {
                        let v = &vd[(ri * s + si) * m..(ri * s + si + 1) * m];
                        dw[ri * s + si] = gr.iter().zip(v).map(|(&a, &b)| a * b).sum();
                    }
                }
                accumulate(grads, *w, dw);
            }
            Op::Conv2d { x, w, b, geom, cols } => {
                let ol = geom.out_len();
                let cout = self.shape(*w)[0];
                let kdim = geom.channels * 9;
                if self.wants(*w) {
                    let mut dw = vec![T::zero(); cout * kdim];
                    kernels::gemm(cout, ol, kdim, g, false, cols, true, &mut dw, false);
                    accumulate(grads, *w, dw);
                }
                if self.wants(*b) {
                    let db: Vec<T> = g.chunks_exact(ol).map(|c| c.iter().copied().sum()).collect();
                    accumulate(grads, *b, db);
                }
                if self.wants(*x) {
                    let mut dcols = vec![T::zero(); kdim * ol];
                    kernels::gemm(kdim, cout, ol, self.data(*w), true, g, false, &mut dcols, false);
                    accumulate(grads, *x, kernels::col2im(&dcols, geom));
                }
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                let sx = self.shape(*x);
                let (cin, hw) = (sx[0], sx[1] * sx[2]);
                let cout = geom.channels;
                let dcols = kernels::im2col(g, geom);
                if self.wants(*w) {
                    let mut dw = vec![T::zero(); cin * cout * 9];
                    kernels::gemm(cin, hw, cout * 9, self.data(*x), false, &dcols, true, &mut dw, false);
                    accumulate(grads, *w, dw);
                }
                if self.wants(*b) {
                    let plane = geom.height * geom.width;
                    let db: Vec<T> = g.chunks_exact(plane).map(|c| c.iter().copied().sum()).collect();
                    accumulate(grads, *b, db);
                }
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); cin * hw];
                    kernels::gemm(cin, cout * 9, hw, self.data(*w), false, &dcols, false, &mut dx, false);
                    accumulate(grads, *x, dx);
                }
            }
        }
    }

    fn backprop_binary(&self, a: Var, b: Var, kind: Binary, bc: Bcast, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let (da, db) = (self.data(a), self.data(b));
        let reduce = |v: Vec<T>, scalar: bool| -> Vec<T> {
            if scalar {
                vec![T::of(v.iter().map(|x| x.f64()).sum())]
            } else {
                v
            }
        };
        if self.wants(a) {
            let d = match kind {
                Binary::Add | Binary::Sub => g.to_vec(),
                Binary::Mul => zip_grad(g, db, bc == Bcast::RightScalar, |g, y| g * y),
                Binary::Div => zip_grad(g, db, bc == Bcast::RightScalar, |g, y| g / y),
            };
            accumulate(grads, a, reduce(d, bc == Bcast::LeftScalar));
        }
        if self.wants(b) {
            let d = match kind {
                Binary::Add => g.to_vec(),
                Binary::Sub => g.iter().map(|&v| -v).collect(),
                Binary::Mul => zip_grad(g, da, bc == Bcast::LeftScalar, |g, x| g * x),
                Binary::Div => match bc {
                    Bcast::Same => g.iter().zip(da).zip(db).map(|((&g, &x), &y)| -g * x / (y * y)).collect(),
                    Bcast::LeftScalar => g.iter().zip(db).map(|(&g, &y)| -g * da[0] / (y * y)).collect(),
                    Bcast::RightScalar => {
                        let y2 = db[0] * db[0];
                        g.iter().zip(da).map(|(&g, &x)| -g * x / y2).collect()
                    }
                },
            };
            accumulate(grads, b, reduce(d, bc == Bcast::RightScalar));
        }
    }
}

/// Elementwise `f(a, b)` with either side possibly a scalar.
fn zip_bcast<T: Real>(da: &[T], db: &[T], bc: Bcast, f: impl Fn(T, T) -> T) -> Vec<T> {
    match bc {
        Bcast::Same => da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect(),
        Bcast::LeftScalar => db.iter().map(|&y| f(da[0], y)).collect(),
        Bcast::RightScalar => da.iter().map(|&x| f(x, db[0])).collect(),
    }
}

/// `f(g_i, other_i)`, or `f(g_i, other_0)` when `other` is a scalar.
fn zip_grad<T: Real>(g: &[T], other: &[T], scalar: bool, f: impl Fn(T, T) -> T) -> Vec<T> {
    if scalar {
        g.iter().map(|&v| f(v, other[0])).collect()
    } else {
        g.iter().zip(other).map(|(&v, &o)| f(v, o)).collect()
    }
}

/// Transposes each consecutive `a×b` block of `src` into `b×a`.
fn transpose_blocks<T: Real>(src: &[T], a: usize, b: usize) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    for (s, d) in src.chunks_exact(a * b).zip(out.chunks_exact_mut(a * b)) {
        for i in 0..a {
            for j in 0..b {
                d[j * a + i] = s[i * b + j];
            }
        }
    }
    out
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, contrib: Vec<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contrib) {
                *e += c;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

fn unary_fwd<T: Real>(kind: Unary<T>, x: T) -> T {
    match kind {
        Unary::Relu => x.max(T::zero()),
        Unary::Softplus => softplus(x),
        Unary::Exp => x.exp(),
        Unary::Log => x.ln(),
        Unary::Sqrt => x.sqrt(),
        Unary::Abs => x.abs(),
        Unary::Recip => x.recip(),
        Unary::Scale(c) => x * c,
        Unary::AddScalar(c) => x + c,
    }
}

/// d(out)/d(in) given input `x` and output `y`.
fn unary_deriv<T: Real>(kind: Unary<T>, x: T, y: T) -> T {
    match kind {
        // Subgradient 0 at the kink.
        Unary::Relu => {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        Unary::Softplus => sigmoid(x),
        Unary::Exp => y,
        Unary::Log => x.recip(),
        Unary::Sqrt => T::of(0.5) / y,
        Unary::Abs => {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        }
        Unary::Recip => -(y * y),
        Unary::Scale(c) => c,
        Unary::AddScalar(_) => T::one(),
    }
}

/// ln(1 + eˣ), overflow-safe.
pub fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
