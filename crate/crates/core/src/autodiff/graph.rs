//! Tape of differentiable operations.
//!
//! Nodes are appended in creation order, which is a valid topological order:
//! an operation can only consume nodes that already exist. [`Graph::backward`]
//! walks the tape in exact reverse order and leaves `d loss / d leaf` in the
//! gradient slot of every leaf created with [`Graph::param`].

use super::fsum::exact_sum;
use super::gemm::{gemm, Layout};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Abs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resample {
    AvgDown2,
    NearestUp2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

/// Predictions are clamped into `[BCE_EPS, 1 - BCE_EPS]` before the logarithm.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug)]
enum Op {
    Leaf,
    Activation(Var, Activation),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv3d {
        x: Var,
        k: Var,
        b: Var,
    },
    Resample(Var, Resample),
    ScatterMean {
        feats: Var,
        cells: Vec<usize>,
        counts: Vec<u32>,
    },
    Gather {
        grid: Var,
        cells: Vec<usize>,
    },
    Trilinear {
        volume: Var,
        corners: Vec<[usize; 8]>,
        weights: Vec<[f64; 8]>,
    },
    Bce {
        pred: Var,
        target: Vec<f64>,
        reduction: Reduction,
    },
    Add(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single-use computation graph.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward pass with respect to a parameter leaf.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    /// Takes the value of a node out of the graph, leaving an empty tensor.
    pub fn take_value(&mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros(vec![0]))
    }

    /// A constant input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_node(t, Op::Leaf, false)
    }

    /// A trainable leaf; after `backward` its gradient slot is filled.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push_node(t, Op::Leaf, true)
    }

    fn push_node(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_node(value, op, requires_grad))
    }

    fn check_live(&self) -> Result<()> {
        if self.consumed {
            Err(Error::contract("graph already consumed by backward"))
        } else {
            Ok(())
        }
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        self.check_live()?;
        let xv = self.value(x);
        let data: Vec<f64> = match kind {
            Activation::Relu => xv.data().iter().map(|&v| v.max(0.0)).collect(),
            Activation::Sigmoid => xv.data().iter().map(|&v| sigmoid(v)).collect(),
            Activation::Abs => xv.data().iter().map(|&v| v.abs()).collect(),
        };
        let out = Tensor::from_parts(xv.shape().to_vec(), data);
        self.push("activation", out, Op::Activation(x, kind), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Abs)
    }

    /// `y[B,O] = x[B,I] W[O,I]^T + b[O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        self.check_live()?;
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::dims("linear", xs, ws));
        }
        let (batch, inp, outp) = (xs[0], xs[1], ws[0]);
        let mut out = vec![0.0; batch * outp];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.shape() != [outp] {
                return Err(Error::dims("linear bias", bv.shape(), &[outp]));
            }
            for row in out.chunks_exact_mut(outp) {
                row.copy_from_slice(bv.data());
            }
        }
        gemm(
            1.0,
            self.value(x).data(),
            Layout::row_major(batch, inp),
            self.value(w).data(),
            Layout::transposed(inp, outp),
            1.0,
            &mut out,
            Layout::row_major(batch, outp),
        );
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(
            "linear",
            Tensor::from_parts(vec![batch, outp], out),
            Op::Linear { x, w, b },
            &inputs,
        )
    }

    /// 3x3x3 convolution, stride 1, zero padding 1, over `[B,C,X,Y,Z]`.
    pub fn conv3d(&mut self, x: Var, k: Var, b: Var) -> Result<Var> {
        self.check_live()?;
        let (xs, ks) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if xs.len() != 5 || ks.len() != 5 || ks[2..] != [3, 3, 3] || ks[1] != xs[1] {
            return Err(Error::dims("conv3d", &xs, &ks));
        }
        let (batch, cin, cout) = (xs[0], xs[1], ks[0]);
        let dims = [xs[2], xs[3], xs[4]];
        let vox = dims.iter().product::<usize>();
        if self.shape(b) != [cout] {
            return Err(Error::dims("conv3d bias", self.shape(b), &[cout]));
        }
        let xv = self.value(x).data();
        let kv = self.value(k).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; batch * cout * vox];
        let mut shifted = vec![0.0; cin * vox];
        for bi in 0..batch {
            let src = &xv[bi * cin * vox..(bi + 1) * cin * vox];
            let dst = &mut out[bi * cout * vox..(bi + 1) * cout * vox];
            for (o, row) in dst.chunks_exact_mut(vox).enumerate() {
                row.fill(bv[o]);
            }
            for tap in 0..27 {
                let off = tap_offset(tap);
                let input: &[f64] = if tap == CENTER_TAP {
                    src
                } else {
                    shift_copy(src, &mut shifted, cin, dims, off);
                    &shifted
                };
                gemm(
                    1.0,
                    &kv[tap..],
                    Layout::strided(cout, cin, cin * 27, 27),
                    input,
                    Layout::row_major(cin, vox),
                    1.0,
                    dst,
                    Layout::row_major(cout, vox),
                );
            }
        }
        let mut shape = xs.clone();
        shape[1] = cout;
        self.push(
            "conv3d",
            Tensor::from_parts(shape, out),
            Op::Conv3d { x, k, b },
            &[x, k, b],
        )
    }

    pub fn resample3d(&mut self, x: Var, mode: Resample) -> Result<Var> {
        self.check_live()?;
        let xs = self.shape(x).to_vec();
        if xs.len() != 5 {
            return Err(Error::dims("resample3d", &xs, &[0, 0, 0, 0, 0]));
        }
        let planes = xs[0] * xs[1];
        let (nx, ny, nz) = (xs[2], xs[3], xs[4]);
        let xv = self.value(x).data();
        let (shape, data) = match mode {
            Resample::AvgDown2 => {
                if nx % 2 != 0 || ny % 2 != 0 || nz % 2 != 0 {
                    return Err(Error::dims("resample3d avg_down2 (odd size)", &xs, &[2, 2, 2]));
                }
                let (mx, my, mz) = (nx / 2, ny / 2, nz / 2);
                let mut out = vec![0.0; planes * mx * my * mz];
                for p in 0..planes {
                    let src = &xv[p * nx * ny * nz..];
                    let dst = &mut out[p * mx * my * mz..];
                    for i in 0..nx {
                        for j in 0..ny {
                            let srow = &src[(i * ny + j) * nz..(i * ny + j + 1) * nz];
                            let drow = &mut dst[((i / 2) * my + j / 2) * mz..];
                            for (l, &v) in srow.iter().enumerate() {
                                drow[l / 2] += v * 0.125;
                            }
                        }
                    }
                }
                (vec![xs[0], xs[1], mx, my, mz], out)
            }
            Resample::NearestUp2 => {
                let (mx, my, mz) = (nx * 2, ny * 2, nz * 2);
                let mut out = vec![0.0; planes * mx * my * mz];
                for p in 0..planes {
                    let src = &xv[p * nx * ny * nz..];
                    let dst = &mut out[p * mx * my * mz..];
                    for i in 0..mx {
                        for j in 0..my {
                            let srow = &src[((i / 2) * ny + j / 2) * nz..];
                            let drow = &mut dst[(i * my + j) * mz..(i * my + j + 1) * mz];
                            for (l, d) in drow.iter_mut().enumerate() {
                                *d = srow[l / 2];
                            }
                        }
                    }
                }
                (vec![xs[0], xs[1], mx, my, mz], out)
            }
        };
        self.push(
            "resample3d",
            Tensor::from_parts(shape, data),
            Op::Resample(x, mode),
            &[x],
        )
    }

    /// Averages rows of `feats[N,C]` into `grid_dims` cells; output `[C, X, Y, Z]`.
    /// Cells that receive no rows hold exactly zero.
    pub fn scatter_mean(&mut self, feats: Var, cells: &[usize], grid_dims: [usize; 3]) -> Result<Var> {
        self.check_live()?;
        let fs = self.shape(feats);
        if fs.len() != 2 || fs[0] != cells.len() {
            return Err(Error::dims("scatter_mean", fs, &[cells.len()]));
        }
        let ch = fs[1];
        let ncells: usize = grid_dims.iter().product();
        let mut counts = vec![0u32; ncells];
        for &c in cells {
            if c >= ncells {
                return Err(Error::Index {
                    op: "scatter_mean",
                    index: c,
                    limit: ncells,
                });
            }
            counts[c] += 1;
        }
        // Rows grouped by cell; each cell mean uses a correctly rounded sum so
        // the result is exactly invariant to row order and duplication.
        let mut start = vec![0usize; ncells + 1];
        for (cell, &cnt) in counts.iter().enumerate() {
            start[cell + 1] = start[cell] + cnt as usize;
        }
        let mut fill = start.clone();
        let mut order = vec![0usize; cells.len()];
        for (n, &cell) in cells.iter().enumerate() {
            order[fill[cell]] = n;
            fill[cell] += 1;
        }
        let fv = self.value(feats).data();
        let mut out = vec![0.0; ch * ncells];
        let mut partials = Vec::new();
        for cell in 0..ncells {
            let rows = &order[start[cell]..start[cell + 1]];
            match rows.len() {
                0 => {}
                1 => {
                    for c in 0..ch {
                        out[c * ncells + cell] = fv[rows[0] * ch + c];
                    }
                }
                cnt => {
                    for c in 0..ch {
                        let s = exact_sum(rows.iter().map(|&n| fv[n * ch + c]), &mut partials);
                        out[c * ncells + cell] = s / cnt as f64;
                    }
                }
            }
        }
        let shape = vec![ch, grid_dims[0], grid_dims[1], grid_dims[2]];
        self.push(
            "scatter_mean",
            Tensor::from_parts(shape, out),
            Op::ScatterMean {
                feats,
                cells: cells.to_vec(),
                counts,
            },
            &[feats],
        )
    }

    /// Reads the per-cell feature vector of a channel-major grid (`[C, ...]`)
    /// for every listed cell; output `[N, C]`.
    pub fn gather_cells(&mut self, grid: Var, cells: &[usize]) -> Result<Var> {
        self.check_live()?;
        let gs = self.shape(grid);
        let ch = gs[0];
        let ncells: usize = gs[1..].iter().product();
        if let Some(&bad) = cells.iter().find(|&&c| c >= ncells) {
            return Err(Error::Index {
                op: "gather_cells",
                index: bad,
                limit: ncells,
            });
        }
        let gv = self.value(grid).data();
        let mut out = vec![0.0; cells.len() * ch];
        for (n, &cell) in cells.iter().enumerate() {
            for c in 0..ch {
                out[n * ch + c] = gv[c * ncells + cell];
            }
        }
        self.push(
            "gather_cells",
            Tensor::from_parts(vec![cells.len(), ch], out),
            Op::Gather {
                grid,
                cells: cells.to_vec(),
            },
            &[grid],
        )
    }

    /// Trilinear interpolation of a `[C, X, Y, Z]` volume at continuous
    /// lattice coordinates (lattice point `(i,j,k)` sits at `[i, j, k]`).
    /// Coordinates outside the lattice hull are clamped onto it. Output `[M, C]`;
    /// differentiable with respect to the volume only.
    pub fn trilinear_query(&mut self, volume: Var, coords: &[[f64; 3]]) -> Result<Var> {
        self.check_live()?;
        let vs = self.shape(volume).to_vec();
        if vs.len() != 4 {
            return Err(Error::dims("trilinear_query", &vs, &[0, 0, 0, 0]));
        }
        let ch = vs[0];
        let dims = [vs[1], vs[2], vs[3]];
        let ncells: usize = dims.iter().product();
        let mut corners = Vec::with_capacity(coords.len());
        let mut weights = Vec::with_capacity(coords.len());
        let mut clamped = 0usize;
        for q in coords {
            if q.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("trilinear_query coordinates"));
            }
            let mut lo = [0usize; 3];
            let mut hi = [0usize; 3];
            let mut t = [0.0; 3];
            let mut was_clamped = false;
            for a in 0..3 {
                let top = (dims[a] - 1) as f64;
                let mut u = q[a];
                if u < 0.0 || u > top {
                    was_clamped = true;
                    u = u.clamp(0.0, top);
                }
                if dims[a] == 1 {
                    continue;
                }
                let i0 = (u.floor() as usize).min(dims[a] - 2);
                lo[a] = i0;
                hi[a] = i0 + 1;
                t[a] = u - i0 as f64;
            }
            clamped += usize::from(was_clamped);
            let mut idx = [0usize; 8];
            let mut w = [0.0; 8];
            for corner in 0..8 {
                let pick = |a: usize| (corner >> (2 - a)) & 1 == 1;
                let (mut flat, mut wt) = (0usize, 1.0);
                for a in 0..3 {
                    let (i, f) = if pick(a) { (hi[a], t[a]) } else { (lo[a], 1.0 - t[a]) };
                    flat = flat * dims[a] + i;
                    wt *= f;
                }
                idx[corner] = flat;
                w[corner] = wt;
            }
            corners.push(idx);
            weights.push(w);
        }
        if clamped > 0 {
            log::debug!("trilinear_query: clamped {clamped} of {} coordinates to the lattice hull", coords.len());
        }
        let vv = self.value(volume).data();
        let mut out = vec![0.0; coords.len() * ch];
        for (m, (idx, w)) in corners.iter().zip(&weights).enumerate() {
            for c in 0..ch {
                let plane = &vv[c * ncells..(c + 1) * ncells];
                out[m * ch + c] = (0..8).map(|k| w[k] * plane[idx[k]]).sum();
            }
        }
        self.push(
            "trilinear_query",
            Tensor::from_parts(vec![coords.len(), ch], out),
            Op::Trilinear {
                volume,
                corners,
                weights,
            },
            &[volume],
        )
    }

    /// Binary cross-entropy `-y ln x - (1-y) ln(1-x)` with clamped predictions.
    pub fn bce(&mut self, pred: Var, target: &[f64], reduction: Reduction) -> Result<Var> {
        self.check_live()?;
        let pv = self.value(pred);
        if pv.numel() != target.len() {
            return Err(Error::dims("bce", pv.shape(), &[target.len()]));
        }
        if pv.numel() == 0 {
            return Err(Error::contract("bce of an empty tensor"));
        }
        if target.iter().any(|y| !(0.0..=1.0).contains(y)) {
            return Err(Error::contract("bce targets must lie in [0, 1]"));
        }
        let total: f64 = pv
            .data()
            .iter()
            .zip(target)
            .map(|(&p, &y)| {
                let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -y * p.ln() - (1.0 - y) * (1.0 - p).ln()
            })
            .sum();
        let value = match reduction {
            Reduction::Mean => total / target.len() as f64,
            Reduction::Sum => total,
        };
        self.push(
            "bce",
            Tensor::from_parts(vec![1], vec![value]),
            Op::Bce {
                pred,
                target: target.to_vec(),
                reduction,
            },
            &[pred],
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_live()?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::dims("add", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.check_live()?;
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v * factor).collect();
        let out = Tensor::from_parts(xv.shape().to_vec(), data);
        self.push("scale", out, Op::Scale(x, factor), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check_live()?;
        let s = self.value(x).data().iter().sum();
        self.push("sum", Tensor::from_parts(vec![1], vec![s]), Op::Sum(x), &[x])
    }

    /// Concatenation along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        self.check_live()?;
        let first = inputs
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::dims("concat axis", &base, &[axis]));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let same = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(a, (x, y))| a == axis || x == y);
            if !same {
                return Err(Error::dims("concat", s, &base));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let width = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.value(v).data()[o * width..(o + 1) * width]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(
            "concat",
            Tensor::from_parts(shape, data),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.check_live()?;
        let xv = self.value(x);
        if shape.iter().product::<usize>() != xv.numel() {
            return Err(Error::dims("reshape", xv.shape(), shape));
        }
        let out = Tensor::from_parts(shape.to_vec(), xv.data().to_vec());
        self.push("reshape", out, Op::Reshape(x), &[x])
    }

    /// Reverse pass from a scalar loss. Consumes the graph.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check_live()?;
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if matches!(self.nodes[id].op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            self.backward_node(id, &g, &mut grads);
        }
        for (id, node) in self.nodes.iter_mut().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let g = grads[id].take().unwrap_or_else(|| vec![0.0; node.value.numel()]);
                node.value.set_grad(g)?;
            }
        }
        Ok(())
    }

    fn backward_node(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Activation(x, kind) => {
                let xv = self.value(*x).data();
                let yv = node.value.data();
                acc(*x, &mut |dx| match kind {
                    Activation::Relu => {
                        for i in 0..dx.len() {
                            if xv[i] > 0.0 {
                                dx[i] += g[i];
                            }
                        }
                    }
                    Activation::Sigmoid => {
                        for i in 0..dx.len() {
                            dx[i] += g[i] * yv[i] * (1.0 - yv[i]);
                        }
                    }
                    Activation::Abs => {
                        for i in 0..dx.len() {
                            let s = if xv[i] > 0.0 {
                                1.0
                            } else if xv[i] < 0.0 {
                                -1.0
                            } else {
                                0.0
                            };
                            dx[i] += g[i] * s;
                        }
                    }
                });
            }
            Op::Linear { x, w, b } => {
                let (batch, inp) = (self.shape(*x)[0], self.shape(*x)[1]);
                let outp = self.shape(*w)[0];
                let wv = self.value(*w).data();
                let xv = self.value(*x).data();
                acc(*x, &mut |dx| {
                    gemm(
                        1.0,
                        g,
                        Layout::row_major(batch, outp),
                        wv,
                        Layout::row_major(outp, inp),
                        1.0,
                        dx,
                        Layout::row_major(batch, inp),
                    )
                });
                acc(*w, &mut |dw| {
                    gemm(
                        1.0,
                        g,
                        Layout::transposed(outp, batch),
                        xv,
                        Layout::row_major(batch, inp),
                        1.0,
                        dw,
                        Layout::row_major(outp, inp),
                    )
                });
                if let Some(b) = b {
                    acc(*b, &mut |db| {
                        for row in g.chunks_exact(outp) {
                            for (d, r) in db.iter_mut().zip(row) {
                                *d += r;
                            }
                        }
                    });
                }
            }
            Op::Conv3d { x, k, b } => self.conv3d_backward(*x, *k, *b, g, grads),
            Op::Resample(x, mode) => {
                let xs = self.shape(*x);
                let planes = xs[0] * xs[1];
                let (nx, ny, nz) = (xs[2], xs[3], xs[4]);
                acc(*x, &mut |dx| match mode {
                    Resample::AvgDown2 => {
                        let (my, mz) = (ny / 2, nz / 2);
                        let mvox = (nx / 2) * my * mz;
                        for p in 0..planes {
                            let src = &g[p * mvox..];
                            let dst = &mut dx[p * nx * ny * nz..];
                            for i in 0..nx {
                                for j in 0..ny {
                                    let srow = &src[((i / 2) * my + j / 2) * mz..];
                                    let drow = &mut dst[(i * ny + j) * nz..(i * ny + j + 1) * nz];
                                    for (l, d) in drow.iter_mut().enumerate() {
                                        *d += srow[l / 2] * 0.125;
                                    }
                                }
                            }
                        }
                    }
                    Resample::NearestUp2 => {
                        let (mx, my, mz) = (nx * 2, ny * 2, nz * 2);
                        for p in 0..planes {
                            let src = &g[p * mx * my * mz..];
                            let dst = &mut dx[p * nx * ny * nz..];
                            for i in 0..mx {
                                for j in 0..my {
                                    let srow = &src[(i * my + j) * mz..(i * my + j + 1) * mz];
                                    let drow = &mut dst[((i / 2) * ny + j / 2) * nz..];
                                    for (l, &v) in srow.iter().enumerate() {
                                        drow[l / 2] += v;
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::ScatterMean {
                feats,
                cells,
                counts,
            } => {
                let ch = self.shape(*feats)[1];
                let ncells = counts.len();
                acc(*feats, &mut |df| {
                    for (n, &cell) in cells.iter().enumerate() {
                        let inv = 1.0 / f64::from(counts[cell]);
                        for c in 0..ch {
                            df[n * ch + c] += g[c * ncells + cell] * inv;
                        }
                    }
                });
            }
            Op::Gather { grid, cells } => {
                let gs = self.shape(*grid);
                let ch = gs[0];
                let ncells: usize = gs[1..].iter().product();
                acc(*grid, &mut |dg| {
                    for (n, &cell) in cells.iter().enumerate() {
                        for c in 0..ch {
                            dg[c * ncells + cell] += g[n * ch + c];
                        }
                    }
                });
            }
            Op::Trilinear {
                volume,
                corners,
                weights,
            } => {
                let vs = self.shape(*volume);
                let ch = vs[0];
                let ncells: usize = vs[1..].iter().product();
                acc(*volume, &mut |dv| {
                    for (m, (idx, w)) in corners.iter().zip(weights).enumerate() {
                        for c in 0..ch {
                            let gm = g[m * ch + c];
                            for k in 0..8 {
                                dv[c * ncells + idx[k]] += w[k] * gm;
                            }
                        }
                    }
                });
            }
            Op::Bce {
                pred,
                target,
                reduction,
            } => {
                let pv = self.value(*pred).data();
                let scale = match reduction {
                    Reduction::Mean => g[0] / target.len() as f64,
                    Reduction::Sum => g[0],
                };
                acc(*pred, &mut |dp| {
                    for i in 0..dp.len() {
                        let p = pv[i];
                        if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
                            continue;
                        }
                        let y = target[i];
                        dp[i] += scale * (-y / p + (1.0 - y) / (1.0 - p));
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| add_into(d, g));
            }
            Op::Scale(x, f) => acc(*x, &mut |d| {
                for (d, v) in d.iter_mut().zip(g) {
                    *d += f * v;
                }
            }),
            Op::Sum(x) => acc(*x, &mut |d| {
                for v in d.iter_mut() {
                    *v += g[0];
                }
            }),
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let row = shape[*axis] * inner;
                let mut start = 0;
                for &v in inputs {
                    let width = self.shape(v)[*axis] * inner;
                    acc(v, &mut |d| {
                        for o in 0..outer {
                            add_into(
                                &mut d[o * width..(o + 1) * width],
                                &g[o * row + start..o * row + start + width],
                            );
                        }
                    });
                    start += width;
                }
            }
            Op::Reshape(x) => acc(*x, &mut |d| add_into(d, g)),
        }
    }

    fn conv3d_backward(&self, x: Var, k: Var, b: Var, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let xs = self.shape(x);
        let (batch, cin, cout) = (xs[0], xs[1], self.shape(k)[0]);
        let dims = [xs[2], xs[3], xs[4]];
        let vox: usize = dims.iter().product();
        let xv = self.value(x).data();
        let kv = self.value(k).data();
        let need = |v: Var| self.nodes[v.0].requires_grad;
        let take = |grads: &mut [Option<Vec<f64>>], v: Var| {
            if need(v) {
                Some(
                    grads[v.0]
                        .take()
                        .unwrap_or_else(|| vec![0.0; self.nodes[v.0].value.numel()]),
                )
            } else {
                None
            }
        };
        let mut dx = take(grads, x);
        let mut dk = take(grads, k);
        let mut db = take(grads, b);
        let mut shifted = vec![0.0; cin * vox];
        let mut dshift = vec![0.0; cin * vox];
        for bi in 0..batch {
            let gout = &g[bi * cout * vox..(bi + 1) * cout * vox];
            let src = &xv[bi * cin * vox..(bi + 1) * cin * vox];
            if let Some(db) = db.as_mut() {
                for (o, row) in gout.chunks_exact(vox).enumerate() {
                    db[o] += row.iter().sum::<f64>();
                }
            }
            for tap in 0..27 {
                let off = tap_offset(tap);
                if let Some(dk) = dk.as_mut() {
                    let input: &[f64] = if tap == CENTER_TAP {
                        src
                    } else {
                        shift_copy(src, &mut shifted, cin, dims, off);
                        &shifted
                    };
                    gemm(
                        1.0,
                        gout,
                        Layout::row_major(cout, vox),
                        input,
                        Layout::transposed(vox, cin),
                        1.0,
                        &mut dk[tap..],
                        Layout::strided(cout, cin, cin * 27, 27),
                    );
                }
                if let Some(dx) = dx.as_mut() {
                    let dst = &mut dx[bi * cin * vox..(bi + 1) * cin * vox];
                    if tap == CENTER_TAP {
                        gemm(
                            1.0,
                            &kv[tap..],
                            Layout::strided(cin, cout, 27, cin * 27),
                            gout,
                            Layout::row_major(cout, vox),
                            1.0,
                            dst,
                            Layout::row_major(cin, vox),
                        );
                    } else {
                        gemm(
                            1.0,
                            &kv[tap..],
                            Layout::strided(cin, cout, 27, cin * 27),
                            gout,
                            Layout::row_major(cout, vox),
                            0.0,
                            &mut dshift,
                            Layout::row_major(cin, vox),
                        );
                        shift_add_back(&dshift, dst, cin, dims, off);
                    }
                }
            }
        }
        if let Some(v) = dx {
            grads[x.0] = Some(v);
        }
        if let Some(v) = dk {
            grads[k.0] = Some(v);
        }
        if let Some(v) = db {
            grads[b.0] = Some(v);
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

const CENTER_TAP: usize = 13;

fn tap_offset(tap: usize) -> [isize; 3] {
    [
        (tap / 9) as isize - 1,
        ((tap / 3) % 3) as isize - 1,
        (tap % 3) as isize - 1,
    ]
}

/// Valid output range along one axis for a shift: `dst[i] = src[i + off]`.
fn shift_range(n: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (n as isize - off.max(0)).max(0) as usize;
    (lo.min(n), hi.max(lo.min(n)))
}

/// `dst[c, i, j, l] = src[c, i + off.0, j + off.1, l + off.2]`, zero outside.
fn shift_copy(src: &[f64], dst: &mut [f64], ch: usize, dims: [usize; 3], off: [isize; 3]) {
    let [nx, ny, nz] = dims;
    let vox = nx * ny * nz;
    dst[..ch * vox].fill(0.0);
    let (ilo, ihi) = shift_range(nx, off[0]);
    let (jlo, jhi) = shift_range(ny, off[1]);
    let (llo, lhi) = shift_range(nz, off[2]);
    if llo >= lhi {
        return;
    }
    for c in 0..ch {
        let s = &src[c * vox..(c + 1) * vox];
        let d = &mut dst[c * vox..(c + 1) * vox];
        for i in ilo..ihi {
            let si = (i as isize + off[0]) as usize;
            for j in jlo..jhi {
                let sj = (j as isize + off[1]) as usize;
                let drow = (i * ny + j) * nz;
                let srow = (si * ny + sj) * nz;
                let sl = (llo as isize + off[2]) as usize;
                d[drow + llo..drow + lhi].copy_from_slice(&s[srow + sl..srow + sl + (lhi - llo)]);
            }
        }
    }
}

/// Adjoint of [`shift_copy`]: `dst[c, i + off] += src[c, i]`.
fn shift_add_back(src: &[f64], dst: &mut [f64], ch: usize, dims: [usize; 3], off: [isize; 3]) {
    let [nx, ny, nz] = dims;
    let vox = nx * ny * nz;
    let (ilo, ihi) = shift_range(nx, off[0]);
    let (jlo, jhi) = shift_range(ny, off[1]);
    let (llo, lhi) = shift_range(nz, off[2]);
    if llo >= lhi {
        return;
    }
    for c in 0..ch {
        let s = &src[c * vox..(c + 1) * vox];
        let d = &mut dst[c * vox..(c + 1) * vox];
        for i in ilo..ihi {
            let di = (i as isize + off[0]) as usize;
            for j in jlo..jhi {
                let dj = (j as isize + off[1]) as usize;
                let srow = (i * ny + j) * nz;
                let drow = (di * ny + dj) * nz;
                let dl = (llo as isize + off[2]) as usize;
                add_into(&mut d[drow + dl..drow + dl + (lhi - llo)], &s[srow + llo..srow + lhi]);
            }
        }
    }
}
