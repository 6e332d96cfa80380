use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::lattice::{FeatureVolume, Lattice};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};

/// Architecture hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Cells per axis of the feature volume over the unit cube.
    pub grid_res: usize,
    /// Channels of the feature volume.
    pub feature_dim: usize,
    /// Hidden width of the point encoder.
    pub encoder_hidden: usize,
    pub pointnet_blocks: usize,
    pub unet_depth: usize,
    pub decoder_blocks: usize,
    pub decoder_hidden: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            grid_res: 32,
            feature_dim: 32,
            encoder_hidden: 32,
            pointnet_blocks: 5,
            unet_depth: 2,
            decoder_blocks: 5,
            decoder_hidden: 32,
        }
    }
}

impl NetConfig {
    /// A config with `encoder_hidden` tied to `feature_dim`.
    pub fn with_sizes(grid_res: usize, feature_dim: usize, unet_depth: usize) -> Self {
        Self {
            grid_res,
            feature_dim,
            encoder_hidden: feature_dim,
            unet_depth,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self;
        if !c.grid_res.is_power_of_two() || c.grid_res < 2 {
            return Err(Error::Config(format!("grid_res must be a power of two >= 2, got {}", c.grid_res)));
        }
        if c.unet_depth == 0 || (1usize << c.unet_depth) > c.grid_res {
            return Err(Error::Config(format!(
                "unet_depth must lie in 1..=log2(grid_res), got {}",
                c.unet_depth
            )));
        }
        let dims = [c.feature_dim, c.encoder_hidden, c.pointnet_blocks, c.decoder_blocks, c.decoder_hidden];
        if dims.contains(&0) {
            return Err(Error::Config("all network widths and block counts must be >= 1".into()));
        }
        Ok(())
    }

    /// Lattice sizes must be multiples of this for the hourglass pooling.
    pub fn size_multiple(&self) -> usize {
        1 << self.unet_depth
    }

    /// Farthest lattice offset (in cells) through which one feature-volume
    /// input cell can influence an output cell of the hourglass network.
    pub fn receptive_radius(&self) -> usize {
        let d = self.unet_depth;
        let encoder: usize = (0..=d).map(|l| 1 << l).sum();
        let decoder: usize = (0..d).map(|l| 1 << l).sum();
        let pooling: usize = (1..=d).map(|l| (1 << l) - 1).sum();
        encoder + decoder + pooling
    }

    /// Names and shapes of every parameter, in canonical order.
    pub fn parameter_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut push = |name: String, shape: Vec<usize>| out.push((name, shape));
        let (h, c) = (self.encoder_hidden, self.feature_dim);
        push("encoder.fc_pos.weight".into(), vec![2 * h, 3]);
        push("encoder.fc_pos.bias".into(), vec![2 * h]);
        for i in 0..self.pointnet_blocks {
            push(format!("encoder.block{i}.fc0.weight"), vec![h, 2 * h]);
            push(format!("encoder.block{i}.fc0.bias"), vec![h]);
            push(format!("encoder.block{i}.fc1.weight"), vec![h, h]);
            push(format!("encoder.block{i}.fc1.bias"), vec![h]);
            push(format!("encoder.block{i}.shortcut.weight"), vec![h, 2 * h]);
        }
        push("encoder.fc_c.weight".into(), vec![c, h]);
        push("encoder.fc_c.bias".into(), vec![c]);
        for l in 0..=self.unet_depth {
            let cin = if l == 0 { c } else { c << (l - 1) };
            push(format!("unet.down{l}.weight"), vec![c << l, cin, 3, 3, 3]);
            push(format!("unet.down{l}.bias"), vec![c << l]);
        }
        for l in (0..self.unet_depth).rev() {
            let cin = (c << (l + 1)) + (c << l);
            push(format!("unet.up{l}.weight"), vec![c << l, cin, 3, 3, 3]);
            push(format!("unet.up{l}.bias"), vec![c << l]);
        }
        let hd = self.decoder_hidden;
        push("decoder.fc_in.weight".into(), vec![hd, 3 + c]);
        push("decoder.fc_in.bias".into(), vec![hd]);
        for i in 0..self.decoder_blocks {
            push(format!("decoder.block{i}.fc0.weight"), vec![hd, hd]);
            push(format!("decoder.block{i}.fc0.bias"), vec![hd]);
            push(format!("decoder.block{i}.fc1.weight"), vec![hd, hd]);
            push(format!("decoder.block{i}.fc1.bias"), vec![hd]);
        }
        push("decoder.fc_out.weight".into(), vec![1, hd]);
        push("decoder.fc_out.bias".into(), vec![1]);
        out
    }
}

/// Whether a parameter belongs to the occupancy decoder (frozen in the
/// encoder-only optimization mode).
pub fn is_decoder_param(name: &str) -> bool {
    name.starts_with("decoder.")
}

/// How a parameter enters a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binding {
    Skip,
    Constant,
    Trainable,
}

/// Parameters bound into one [`Graph`]; indexed like the model's parameters.
#[derive(Debug)]
pub struct BoundParams {
    vars: Vec<Option<Var>>,
}

impl BoundParams {
    pub fn var(&self, index: usize) -> Option<Var> {
        self.vars[index]
    }
}

/// Queries per graph when evaluating the decoder without gradients.
const QUERY_CHUNK: usize = 8192;

/// Convolutional occupancy network: point encoder with grid pooling,
/// hourglass 3D conv net, and an MLP occupancy decoder on `[q, f(q)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvOccNet {
    config: NetConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ConvOccNet {
    /// Assembles a model from named tensors, checking them against the layout
    /// implied by `config`.
    pub fn from_named(config: NetConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let layout = config.parameter_layout();
        let mut given: HashMap<String, Tensor> = HashMap::with_capacity(named.len());
        for (name, t) in named {
            if !t.is_finite() {
                return Err(Error::Schema {
                    name,
                    message: "non-finite values".into(),
                });
            }
            if given.insert(name.clone(), t).is_some() {
                return Err(Error::Schema {
                    name,
                    message: "duplicate tensor".into(),
                });
            }
        }
        let mut names = Vec::with_capacity(layout.len());
        let mut tensors = Vec::with_capacity(layout.len());
        for (name, shape) in layout {
            let t = given.remove(&name).ok_or_else(|| Error::Schema {
                name: name.clone(),
                message: "missing tensor".into(),
            })?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Schema {
                    name,
                    message: format!("shape {:?}, expected {shape:?}", t.shape()),
                });
            }
            names.push(name);
            tensors.push(t);
        }
        if let Some(extra) = given.into_keys().min() {
            return Err(Error::Schema {
                name: extra,
                message: "unexpected tensor".into(),
            });
        }
        let index = names.iter().cloned().enumerate().map(|(i, n)| (n, i)).collect();
        Ok(Self {
            config,
            names,
            tensors,
            index,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    fn idx(&self, name: &str) -> usize {
        self.index[name]
    }

    /// Binds every parameter into `g` according to `select`.
    pub fn bind(&self, g: &mut Graph, mut select: impl FnMut(&str) -> Binding) -> BoundParams {
        let vars = self
            .names
            .iter()
            .zip(&self.tensors)
            .map(|(name, t)| match select(name) {
                Binding::Skip => None,
                Binding::Constant => Some(g.constant(t.clone())),
                Binding::Trainable => Some(g.param(t.clone())),
            })
            .collect();
        BoundParams { vars }
    }

    fn get(&self, bound: &BoundParams, name: &str) -> Result<Var> {
        bound
            .var(self.idx(name))
            .ok_or_else(|| Error::contract(format!("parameter {name} is not bound in this graph")))
    }

    fn check_lattice(&self, lattice: &Lattice) -> Result<()> {
        let m = self.config.size_multiple();
        if lattice.dims.iter().any(|d| d % m != 0) {
            return Err(Error::contract(format!(
                "lattice dims {:?} must be multiples of {m} for the hourglass network",
                lattice.dims
            )));
        }
        Ok(())
    }

    /// Encoder graph: points (unit-cube coordinates) to the feature volume
    /// `[C, X, Y, Z]` over `lattice`. Points outside the window are ignored.
    pub fn encode_graph(&self, g: &mut Graph, bound: &BoundParams, points: &[Vec3], lattice: &Lattice) -> Result<Var> {
        self.check_lattice(lattice)?;
        let mut local = Vec::with_capacity(points.len() * 3);
        let mut cells = Vec::with_capacity(points.len());
        for p in points {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("encoder input points"));
            }
            if let Some(cell) = lattice.local_cell(*p) {
                local.extend_from_slice(&lattice.cell_local(*p));
                cells.push(cell);
            }
        }
        let dims = lattice.dims;
        let c = self.config.feature_dim;
        let v0 = if cells.is_empty() {
            g.constant(Tensor::zeros(vec![c, dims[0], dims[1], dims[2]]))
        } else {
            let n = cells.len();
            let x = g.constant(Tensor::new(vec![n, 3], local)?);
            let w = self.get(bound, "encoder.fc_pos.weight")?;
            let b = self.get(bound, "encoder.fc_pos.bias")?;
            let mut net = g.linear(x, w, Some(b))?;
            for i in 0..self.config.pointnet_blocks {
                if i > 0 {
                    let pooled = g.scatter_mean(net, &cells, dims)?;
                    let back = g.gather_cells(pooled, &cells)?;
                    net = g.concat(&[net, back], 1)?;
                }
                net = self.resnet_block(g, bound, &format!("encoder.block{i}"), net, true)?;
            }
            let w = self.get(bound, "encoder.fc_c.weight")?;
            let b = self.get(bound, "encoder.fc_c.bias")?;
            let feats = g.linear(net, w, Some(b))?;
            g.scatter_mean(feats, &cells, dims)?
        };
        self.hourglass(g, bound, v0)
    }

    /// `shortcut(x) + fc1(relu(fc0(relu(x))))`; identity shortcut when absent.
    fn resnet_block(&self, g: &mut Graph, bound: &BoundParams, prefix: &str, x: Var, shortcut: bool) -> Result<Var> {
        let p = |s: &str| format!("{prefix}.{s}");
        let h = g.relu(x)?;
        let (w0, b0) = (self.get(bound, &p("fc0.weight"))?, self.get(bound, &p("fc0.bias"))?);
        let h = g.linear(h, w0, Some(b0))?;
        let h = g.relu(h)?;
        let (w1, b1) = (self.get(bound, &p("fc1.weight"))?, self.get(bound, &p("fc1.bias"))?);
        let dx = g.linear(h, w1, Some(b1))?;
        let skip = if shortcut {
            let ws = self.get(bound, &p("shortcut.weight"))?;
            g.linear(x, ws, None)?
        } else {
            x
        };
        g.add(skip, dx)
    }

    fn hourglass(&self, g: &mut Graph, bound: &BoundParams, v0: Var) -> Result<Var> {
        let s = g.shape(v0).to_vec();
        let mut x = g.reshape(v0, &[1, s[0], s[1], s[2], s[3]])?;
        let depth = self.config.unet_depth;
        let mut skips = Vec::with_capacity(depth);
        for l in 0..=depth {
            if l > 0 {
                x = g.resample3d(x, crate::autodiff::Resample::AvgDown2)?;
            }
            let w = self.get(bound, &format!("unet.down{l}.weight"))?;
            let b = self.get(bound, &format!("unet.down{l}.bias"))?;
            x = g.conv3d(x, w, b)?;
            x = g.relu(x)?;
            if l < depth {
                skips.push(x);
            }
        }
        for l in (0..depth).rev() {
            let up = g.resample3d(x, crate::autodiff::Resample::NearestUp2)?;
            let skip = skips.pop().expect("one skip per level");
            let cat = g.concat(&[up, skip], 1)?;
            let w = self.get(bound, &format!("unet.up{l}.weight"))?;
            let b = self.get(bound, &format!("unet.up{l}.bias"))?;
            x = g.conv3d(cat, w, b)?;
            if l > 0 {
                x = g.relu(x)?;
            }
        }
        g.reshape(x, &s)
    }

    /// Decoder graph: logits `[M]` at unit-cube coordinates `coords`.
    pub fn decode_graph(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        volume: Var,
        lattice: &Lattice,
        coords: &[Vec3],
    ) -> Result<Var> {
        if coords.is_empty() {
            return Err(Error::contract("decoder needs at least one query"));
        }
        let lat: Vec<[f64; 3]> = coords.iter().map(|q| lattice.lattice_coords(*q)).collect();
        let feats = g.trilinear_query(volume, &lat)?;
        let q = g.constant(Tensor::new(vec![coords.len(), 3], coords.iter().flatten().copied().collect())?);
        let input = g.concat(&[q, feats], 1)?;
        let w = self.get(bound, "decoder.fc_in.weight")?;
        let b = self.get(bound, "decoder.fc_in.bias")?;
        let mut x = g.linear(input, w, Some(b))?;
        for i in 0..self.config.decoder_blocks {
            x = self.resnet_block(g, bound, &format!("decoder.block{i}"), x, false)?;
        }
        let x = g.relu(x)?;
        let w = self.get(bound, "decoder.fc_out.weight")?;
        let b = self.get(bound, "decoder.fc_out.bias")?;
        let out = g.linear(x, w, Some(b))?;
        g.reshape(out, &[coords.len()])
    }

    /// Feature volume over the whole unit cube for a cloud in unit-cube
    /// coordinates.
    pub fn encode(&self, pc: &PointCloud) -> Result<FeatureVolume> {
        self.encode_window(&pc.points, Lattice::full(self.config.grid_res))
    }

    pub fn encode_window(&self, points: &[Vec3], lattice: Lattice) -> Result<FeatureVolume> {
        if points.is_empty() {
            return Err(Error::contract("cannot encode an empty point cloud"));
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g, |n| {
            if is_decoder_param(n) {
                Binding::Skip
            } else {
                Binding::Constant
            }
        });
        let v = self.encode_graph(&mut g, &bound, points, &lattice)?;
        FeatureVolume::new(g.take_value(v), lattice)
    }

    /// Occupancy logits at unit-cube coordinates; evaluated in chunks.
    pub fn query_logits(&self, vol: &FeatureVolume, coords: &[Vec3]) -> Result<Vec<f64>> {
        if vol.channels() != self.config.feature_dim {
            return Err(Error::dims("query_logits volume", vol.features.shape(), &[self.config.feature_dim]));
        }
        let mut out = Vec::with_capacity(coords.len());
        for chunk in coords.chunks(QUERY_CHUNK) {
            let mut g = Graph::new();
            let bound = self.bind(&mut g, |n| {
                if is_decoder_param(n) {
                    Binding::Constant
                } else {
                    Binding::Skip
                }
            });
            let v = g.constant(vol.features.clone());
            let logits = self.decode_graph(&mut g, &bound, v, &vol.lattice, chunk)?;
            out.extend_from_slice(g.value(logits).data());
        }
        Ok(out)
    }

    /// Occupancy probabilities `sigmoid(logit)`.
    pub fn query_occupancy(&self, vol: &FeatureVolume, coords: &[Vec3]) -> Result<Vec<f64>> {
        Ok(self
            .query_logits(vol, coords)?
            .into_iter()
            .map(crate::autodiff::sigmoid)
            .collect())
    }
}
