//! NgramCNN layer graphs.
//!
//! Every family is expressed as a set of parallel *paths* that all read the
//! embedded document. Each path is a chain of convolution / pooling layers;
//! path outputs are flattened, concatenated, passed through dropout and a
//! small dense classifier ending in a single sigmoid unit.
//!
//! | family        | paths | per path                                                     |
//! |---------------|-------|--------------------------------------------------------------|
//! | `basic`       | W     | (conv k=b, maxpool r) repeated D/2 times                     |
//! | `pyramid`     | W     | like basic, but every pooling stack except the last is a stride-r conv with k=3 |
//! | `fluctuating` | 1     | (W parallel convs k=1..W, tail-aligned and channel-concatenated, maxpool r) repeated D/2 times |
//! | `single`      | W     | conv k=b, global max-pool; no hidden dense layer             |
//!
//! Every convolution is followed by relu.

use std::fmt;
use std::path::Path;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::embeddings::{embed, EmbeddingTable};
use crate::error::{Error, Result};
use crate::nn::{
    bce_loss, conv1d_backward_into, conv1d_forward, dense_backward_into, dense_forward, dropout, maxpool_backward_into,
    maxpool_forward, Activation, ConvSpec, DenseOutput, Mode, PoolSpec, Tensor2,
};

/// Filter length of the strided downsampling convolutions in the pyramid family.
pub const PYRAMID_DOWNSAMPLE_K: usize = 3;

/// Final feature-map lengths that tend to give the best accuracy.
pub const OPTIMAL_MAP_BAND: std::ops::RangeInclusive<usize> = 6..=18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Basic,
    Pyramid,
    Fluctuating,
    Single,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Basic => "basic",
            Family::Pyramid => "pyramid",
            Family::Fluctuating => "fluctuating",
            Family::Single => "single",
        })
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(Family::Basic),
            "pyramid" => Ok(Family::Pyramid),
            "fluctuating" => Ok(Family::Fluctuating),
            "single" => Ok(Family::Single),
            other => Err(Error::Config(format!("unknown architecture family {other:?}"))),
        }
    }
}

pub(crate) fn default_filters() -> usize {
    80
}

pub(crate) fn default_dense_width() -> usize {
    80
}

pub(crate) fn default_dropout() -> f64 {
    0.35
}

pub(crate) fn default_l2() -> f64 {
    0.1
}

/// Declarative description of a network. Serialized as TOML with exactly these keys;
/// `filters`, `dense_width`, `dropout_rate`, `l2_lambda` and `dense_activation` may be omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    pub family: Family,
    /// Parallel branches with filter lengths 1..=width.
    pub width: usize,
    /// Total stacks, convolution and downsampling stacks counted separately.
    pub depth: usize,
    /// Pooling region per pooling stack; the stride of pyramid downsampling convolutions.
    pub region: usize,
    #[serde(default = "default_filters")]
    pub filters: usize,
    #[serde(default = "default_dense_width")]
    pub dense_width: usize,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
    #[serde(default = "default_l2")]
    pub l2_lambda: f64,
    pub input_length: usize,
    pub embed_dim: usize,
    #[serde(default)]
    pub dense_activation: Activation,
}

impl ArchitectureSpec {
    /// A spec with the default filter count (80), dense width (80), dropout (0.35) and L2 (0.1).
    pub fn new(family: Family, width: usize, depth: usize, region: usize, input_length: usize, embed_dim: usize) -> Self {
        ArchitectureSpec {
            family,
            width,
            depth,
            region,
            filters: default_filters(),
            dense_width: default_dense_width(),
            dropout_rate: default_dropout(),
            l2_lambda: default_l2(),
            input_length,
            embed_dim,
            dense_activation: Activation::Relu,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("architecture file: {}", e.message())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("architecture spec serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Pooling stacks (= convolution stacks) in the network.
    pub fn stack_pairs(&self) -> usize {
        self.depth / 2
    }

    /// Product of the pooling regions over all pooling stacks.
    pub fn aggregate_region(&self) -> usize {
        match self.family {
            Family::Single => 0,
            _ => self.region.pow(self.stack_pairs() as u32),
        }
    }

    pub fn build(&self) -> Result<LayerGraph> {
        LayerGraph::build(self)
    }

    fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.width < 1 {
            problems.push("width must be >= 1".to_string());
        }
        if self.depth < 2 || !self.depth.is_multiple_of(2) {
            problems.push(format!("depth must be even and >= 2, got {}", self.depth));
        }
        if self.family == Family::Single && self.depth != 2 {
            problems.push(format!("single family has depth 2, got {}", self.depth));
        }
        if self.region < 1 {
            problems.push("region must be >= 1".to_string());
        }
        if self.filters < 1 {
            problems.push("filters must be >= 1".to_string());
        }
        if self.dense_width < 1 && self.family != Family::Single {
            problems.push("dense width must be >= 1".to_string());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            problems.push(format!("dropout rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(self.l2_lambda >= 0.0) {
            problems.push(format!("l2 lambda {} must be >= 0", self.l2_lambda));
        }
        if self.input_length < 1 || self.embed_dim < 1 {
            problems.push("input length and embedding dimension must be >= 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// `ceil((n - k + 1) / r)`: the map length after a valid stride-1 conv and one pooling stack.
pub fn final_map_length(n: usize, k: usize, r: usize) -> Option<usize> {
    (n >= k && r >= 1).then(|| (n - k + 1).div_ceil(r))
}

pub fn in_optimal_band(l: usize) -> bool {
    OPTIMAL_MAP_BAND.contains(&l)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvLayer {
    pub spec: ConvSpec,
    pub weight: usize,
    pub bias: usize,
    pub in_len: usize,
    pub out_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Layer {
    Conv(ConvLayer),
    MaxPool {
        spec: PoolSpec,
        in_len: usize,
        out_len: usize,
        channels: usize,
    },
    /// Parallel convolutions over one input, truncated at the tail to the
    /// shortest output and concatenated along channels.
    ParallelConv { convs: Vec<ConvLayer>, in_len: usize, out_len: usize },
}

impl Layer {
    pub fn out_shape(&self) -> (usize, usize) {
        match self {
            Layer::Conv(c) => (c.out_len, c.spec.filters),
            Layer::MaxPool { out_len, channels, .. } => (*out_len, *channels),
            Layer::ParallelConv { convs, out_len, .. } => (*out_len, convs.iter().map(|c| c.spec.filters).sum()),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Layer::Conv(c) if c.spec.stride > 1 => format!("conv(k={}, s={})", c.spec.k, c.spec.stride),
            Layer::Conv(c) => format!("conv(k={})", c.spec.k),
            Layer::MaxPool { spec, .. } => format!("maxpool(r={})", spec.region),
            Layer::ParallelConv { convs, .. } => format!("parallel-conv(k=1..{})", convs.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSpec {
    pub layers: Vec<Layer>,
}

impl PathSpec {
    pub fn out_shape(&self, input: (usize, usize)) -> (usize, usize) {
        self.layers.last().map_or(input, Layer::out_shape)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub weight: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub fan_in: usize,
    pub fan_out: usize,
    pub regularized: bool,
}

/// Executable network structure. Parameters live separately in a `Vec<Tensor2>`
/// whose layout is described by [`LayerGraph::params`].
///
/// Equality is structural: graphs built from different specs compare equal
/// when their layers, head and parameter layout coincide.
#[derive(Debug, Clone, Serialize)]
pub struct LayerGraph {
    pub spec: ArchitectureSpec,
    pub input_length: usize,
    pub embed_dim: usize,
    pub paths: Vec<PathSpec>,
    pub feature_width: usize,
    pub dropout_rate: f64,
    pub hidden: Option<DenseLayer>,
    pub output: DenseLayer,
    pub l2_lambda: f64,
    pub params: Vec<ParamInfo>,
}

struct Builder<'a> {
    spec: &'a ArchitectureSpec,
    params: Vec<ParamInfo>,
}

impl Builder<'_> {
    fn param(&mut self, name: String, rows: usize, cols: usize, fan_in: usize, fan_out: usize, regularized: bool) -> usize {
        self.params.push(ParamInfo {
            name,
            rows,
            cols,
            fan_in,
            fan_out,
            regularized,
        });
        self.params.len() - 1
    }

    fn conv(&mut self, prefix: &str, k: usize, stride: usize, in_channels: usize, in_len: usize, stack: usize) -> Result<ConvLayer> {
        let spec = ConvSpec::new(k, stride, self.spec.filters, in_channels)?;
        let out_len = spec.out_len(in_len).ok_or_else(|| {
            Error::Config(format!(
                "{prefix}, stack {stack} (convolution k={k}, s={stride}): input length {in_len} is shorter than the filter"
            ))
        })?;
        let (rows, cols) = spec.weight_shape();
        let fan_in = k * in_channels;
        let fan_out = k * self.spec.filters;
        let weight = self.param(format!("{prefix}.stack{stack}.weight"), rows, cols, fan_in, fan_out, false);
        let bias = self.param(format!("{prefix}.stack{stack}.bias"), 1, spec.filters, fan_in, fan_out, false);
        Ok(ConvLayer {
            spec,
            weight,
            bias,
            in_len,
            out_len,
        })
    }

    fn pool(&self, region: usize, in_len: usize, channels: usize) -> Result<Layer> {
        let spec = PoolSpec::new(region)?;
        Ok(Layer::MaxPool {
            spec,
            in_len,
            out_len: spec.out_len(in_len),
            channels,
        })
    }

    fn dense(&mut self, name: &str, inputs: usize, outputs: usize, activation: Activation, regularized: bool) -> DenseLayer {
        let weight = self.param(format!("{name}.weight"), outputs, inputs, inputs, outputs, regularized);
        let bias = self.param(format!("{name}.bias"), 1, outputs, inputs, outputs, false);
        DenseLayer {
            inputs,
            outputs,
            activation,
            weight,
            bias,
        }
    }

    /// Basic, pyramid and single: one independent path per filter length.
    fn multichannel_paths(&mut self) -> Result<Vec<PathSpec>> {
        let s = self.spec;
        let pairs = s.stack_pairs();
        let mut paths = Vec::new();
        for k in 1..=s.width {
            let prefix = format!("branch{k}");
            let mut layers = Vec::new();
            let mut len = s.input_length;
            let mut channels = s.embed_dim;
            for pair in 0..pairs {
                let conv_stack = 2 * pair + 1;
                let conv = self.conv(&prefix, k, 1, channels, len, conv_stack)?;
                len = conv.out_len;
                channels = s.filters;
                layers.push(Layer::Conv(conv));

                let down_stack = conv_stack + 1;
                let last = pair + 1 == pairs;
                match s.family {
                    Family::Single => {
                        let pool = self.pool(len, len, channels)?;
                        len = 1;
                        layers.push(pool);
                    }
                    Family::Pyramid if !last => {
                        let conv = self.conv(&prefix, PYRAMID_DOWNSAMPLE_K, s.region, channels, len, down_stack)?;
                        len = conv.out_len;
                        layers.push(Layer::Conv(conv));
                    }
                    _ => {
                        let pool = self.pool(s.region, len, channels)?;
                        len = pool.out_shape().0;
                        layers.push(pool);
                    }
                }
            }
            paths.push(PathSpec { layers });
        }
        Ok(paths)
    }

    fn fluctuating_path(&mut self) -> Result<Vec<PathSpec>> {
        let s = self.spec;
        let mut layers = Vec::new();
        let mut len = s.input_length;
        let mut channels = s.embed_dim;
        for pair in 0..s.stack_pairs() {
            let conv_stack = 2 * pair + 1;
            let mut convs = Vec::new();
            for k in 1..=s.width {
                convs.push(self.conv(&format!("turn{}.k{k}", pair + 1), k, 1, channels, len, conv_stack)?);
            }
            let aligned = convs.iter().map(|c| c.out_len).min().unwrap_or(0);
            if aligned < 1 {
                return Err(Error::Config(format!(
                    "stack {conv_stack} (parallel convolution): aligned map length is 0"
                )));
            }
            let in_len = len;
            len = aligned;
            channels = s.width * s.filters;
            layers.push(Layer::ParallelConv {
                convs,
                in_len,
                out_len: aligned,
            });
            let pool = self.pool(s.region, len, channels)?;
            len = pool.out_shape().0;
            layers.push(pool);
        }
        Ok(vec![PathSpec { layers }])
    }
}

impl PartialEq for LayerGraph {
    fn eq(&self, other: &Self) -> bool {
        self.input_length == other.input_length
            && self.embed_dim == other.embed_dim
            && self.paths == other.paths
            && self.feature_width == other.feature_width
            && self.dropout_rate == other.dropout_rate
            && self.hidden == other.hidden
            && self.output == other.output
            && self.l2_lambda == other.l2_lambda
            && self.params == other.params
    }
}

impl LayerGraph {
    pub fn build(spec: &ArchitectureSpec) -> Result<Self> {
        spec.validate()?;
        let mut b = Builder {
            spec,
            params: Vec::new(),
        };
        let paths = match spec.family {
            Family::Fluctuating => b.fluctuating_path()?,
            _ => b.multichannel_paths()?,
        };
        let input = (spec.input_length, spec.embed_dim);
        let feature_width: usize = paths
            .iter()
            .map(|p| {
                let (r, c) = p.out_shape(input);
                r * c
            })
            .sum();
        // L2 goes on the classifier layer: the hidden layer, or the output when there is none.
        let (hidden, output) = if spec.family == Family::Single {
            (None, b.dense("output", feature_width, 1, Activation::Sigmoid, true))
        } else {
            let hidden = b.dense("hidden", feature_width, spec.dense_width, spec.dense_activation, true);
            let output = b.dense("output", spec.dense_width, 1, Activation::Sigmoid, false);
            (Some(hidden), output)
        };
        Ok(LayerGraph {
            spec: spec.clone(),
            input_length: spec.input_length,
            embed_dim: spec.embed_dim,
            paths,
            feature_width,
            dropout_rate: spec.dropout_rate,
            hidden,
            output,
            l2_lambda: spec.l2_lambda,
            params: b.params,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.rows * p.cols).sum()
    }

    /// Output length of each path's last layer.
    pub fn final_lengths(&self) -> Vec<usize> {
        let input = (self.input_length, self.embed_dim);
        self.paths.iter().map(|p| p.out_shape(input).0).collect()
    }

    /// Longest final feature map over all paths (the k=1 branch in multi-path families).
    pub fn final_map_len(&self) -> usize {
        self.final_lengths().into_iter().max().unwrap_or(0)
    }

    /// Output shape of every layer, per path.
    pub fn layer_shapes(&self) -> Vec<Vec<(usize, usize)>> {
        self.paths
            .iter()
            .map(|p| p.layers.iter().map(Layer::out_shape).collect())
            .collect()
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Tensor2> {
        self.params
            .iter()
            .map(|p| {
                let mut t = Tensor2::zeros(p.rows, p.cols);
                if p.name.ends_with(".weight") {
                    let limit = (6.0 / (p.fan_in + p.fan_out) as f64).sqrt();
                    t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-limit..limit));
                }
                t
            })
            .collect()
    }

    pub fn zero_grads(&self) -> Vec<Tensor2> {
        self.params.iter().map(|p| Tensor2::zeros(p.rows, p.cols)).collect()
    }

    pub fn check_params(&self, params: &[Tensor2]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "graph has {} parameter tensors, got {}",
                self.params.len(),
                params.len()
            )));
        }
        for (info, t) in self.params.iter().zip(params) {
            t.ensure_shape(info.rows, info.cols, &info.name)?;
        }
        Ok(())
    }

    fn run_conv(&self, c: &ConvLayer, params: &[Tensor2], x: &Tensor2) -> Result<Tensor2> {
        let mut out = conv1d_forward(x, &c.spec, &params[c.weight], params[c.bias].data())?;
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        Ok(out)
    }

    /// Runs one embedded document (`input_length x embed_dim`) through the network.
    /// `rng` drives dropout; `None` means evaluation mode.
    pub fn forward_doc(&self, params: &[Tensor2], x: &Tensor2, rng: Option<&mut dyn RngCore>) -> Result<DocTrace> {
        x.ensure_shape(self.input_length, self.embed_dim, "embedded document")?;
        let mut paths = Vec::with_capacity(self.paths.len());
        let mut features = Vec::with_capacity(self.feature_width);
        for path in &self.paths {
            let mut trace = PathTrace {
                outputs: Vec::with_capacity(path.layers.len()),
                argmax: Vec::with_capacity(path.layers.len()),
            };
            for layer in &path.layers {
                let input = trace.outputs.last().unwrap_or(x);
                let (out, arg) = match layer {
                    Layer::Conv(c) => (self.run_conv(c, params, input)?, Vec::new()),
                    Layer::MaxPool { spec, .. } => maxpool_forward(input, spec)?,
                    Layer::ParallelConv { convs, out_len, .. } => {
                        let maps = convs
                            .iter()
                            .map(|c| self.run_conv(c, params, input))
                            .collect::<Result<Vec<_>>>()?;
                        (concat_aligned(&maps, *out_len), Vec::new())
                    }
                };
                trace.outputs.push(out);
                trace.argmax.push(arg);
            }
            features.extend_from_slice(trace.outputs.last().unwrap_or(x).data());
            paths.push(trace);
        }
        if features.len() != self.feature_width {
            return Err(Error::Shape(format!(
                "feature vector has {} entries, graph expects {}",
                features.len(),
                self.feature_width
            )));
        }
        let mode = if rng.is_some() { Mode::Train } else { Mode::Eval };
        let (dropped, mask) = match rng {
            Some(r) => dropout(&features, self.dropout_rate, mode, r)?,
            None => (features.clone(), vec![1.0; features.len()]),
        };
        let hidden = match &self.hidden {
            Some(h) => Some(dense_forward(&dropped, &params[h.weight], params[h.bias].data(), h.activation)?),
            None => None,
        };
        let head_in = hidden.as_ref().map_or(&dropped, |h| &h.a);
        let output = dense_forward(head_in, &params[self.output.weight], params[self.output.bias].data(), Activation::Sigmoid)?;
        Ok(DocTrace {
            prob: output.a[0],
            paths,
            dropped,
            mask,
            hidden,
            output,
        })
    }

    /// Accumulates d loss / d params for one document given d loss / d probability.
    pub fn backward_doc(&self, params: &[Tensor2], x: &Tensor2, trace: &DocTrace, grad_prob: f64, grads: &mut [Tensor2]) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::Shape("gradient buffer does not match the graph".into()));
        }
        let head_in = trace.hidden.as_ref().map_or(&trace.dropped, |h| &h.a);
        let mut grad_head_in = vec![0.0; head_in.len()];
        {
            let (gw, gb) = pair_mut(grads, self.output.weight, self.output.bias);
            dense_backward_into(
                &[grad_prob],
                head_in,
                &trace.output,
                &params[self.output.weight],
                Activation::Sigmoid,
                gw,
                gb.data_mut(),
                Some(&mut grad_head_in),
            )?;
        }
        let grad_dropped = match (&self.hidden, &trace.hidden) {
            (Some(h), Some(out)) => {
                let mut g = vec![0.0; trace.dropped.len()];
                let (gw, gb) = pair_mut(grads, h.weight, h.bias);
                dense_backward_into(&grad_head_in, &trace.dropped, out, &params[h.weight], h.activation, gw, gb.data_mut(), Some(&mut g))?;
                g
            }
            _ => grad_head_in,
        };
        let grad_features: Vec<f64> = grad_dropped.iter().zip(&trace.mask).map(|(g, m)| g * m).collect();

        let mut offset = 0;
        for (path, ptrace) in self.paths.iter().zip(&trace.paths) {
            let last = ptrace.outputs.last().unwrap_or(x);
            let n = last.len();
            let mut g = Tensor2::from_vec(last.rows(), last.cols(), grad_features[offset..offset + n].to_vec())?;
            offset += n;
            for (i, layer) in path.layers.iter().enumerate().rev() {
                let input = if i == 0 { x } else { &ptrace.outputs[i - 1] };
                let need_input_grad = i > 0;
                g = match layer {
                    Layer::Conv(c) => {
                        let masked = relu_mask(&g, &ptrace.outputs[i]);
                        let mut gx = need_input_grad.then(|| Tensor2::zeros(input.rows(), input.cols()));
                        let (gw, gb) = pair_mut(grads, c.weight, c.bias);
                        conv1d_backward_into(&masked, input, &c.spec, &params[c.weight], gw, gb.data_mut(), gx.as_mut())?;
                        match gx {
                            Some(gx) => gx,
                            None => break,
                        }
                    }
                    Layer::MaxPool { .. } => {
                        let mut gx = Tensor2::zeros(input.rows(), input.cols());
                        maxpool_backward_into(&g, &ptrace.argmax[i], &mut gx)?;
                        gx
                    }
                    Layer::ParallelConv { convs, out_len, .. } => {
                        let out = &ptrace.outputs[i];
                        let mut gx = need_input_grad.then(|| Tensor2::zeros(input.rows(), input.cols()));
                        let mut col = 0;
                        for c in convs {
                            let m = c.spec.filters;
                            let mut gi = Tensor2::zeros(c.out_len, m);
                            for r in 0..*out_len {
                                for f in 0..m {
                                    if out.get(r, col + f) > 0.0 {
                                        gi.set(r, f, g.get(r, col + f));
                                    }
                                }
                            }
                            col += m;
                            let (gw, gb) = pair_mut(grads, c.weight, c.bias);
                            conv1d_backward_into(&gi, input, &c.spec, &params[c.weight], gw, gb.data_mut(), gx.as_mut())?;
                        }
                        match gx {
                            Some(gx) => gx,
                            None => break,
                        }
                    }
                };
            }
        }
        Ok(())
    }

    /// Evaluation-mode probabilities for a batch of row-index documents.
    pub fn predict(&self, params: &[Tensor2], table: &EmbeddingTable, docs: &[&[usize]]) -> Result<Vec<f64>> {
        self.check_params(params)?;
        docs.iter()
            .map(|d| {
                let x = self.embed_doc(d, table)?;
                Ok(self.forward_doc(params, &x, None)?.prob)
            })
            .collect()
    }

    pub fn embed_doc(&self, doc: &[usize], table: &EmbeddingTable) -> Result<Tensor2> {
        if doc.len() != self.input_length {
            return Err(Error::Shape(format!(
                "document has {} tokens, graph expects {}",
                doc.len(),
                self.input_length
            )));
        }
        if table.dim() != self.embed_dim {
            return Err(Error::Shape(format!(
                "embedding dimension {} does not match the graph's {}",
                table.dim(),
                self.embed_dim
            )));
        }
        embed(doc, table)
    }

    /// L2 penalty over regularized weights and its gradient, added into `grads`.
    pub fn add_l2(&self, params: &[Tensor2], grads: &mut [Tensor2]) -> f64 {
        let mut penalty = 0.0;
        for (i, info) in self.params.iter().enumerate() {
            if !info.regularized {
                continue;
            }
            for (g, w) in grads[i].data_mut().iter_mut().zip(params[i].data()) {
                penalty += self.l2_lambda * w * w;
                *g += 2.0 * self.l2_lambda * w;
            }
        }
        penalty
    }

    /// Mean binary cross-entropy plus L2 over a batch, with gradients.
    pub fn batch_loss_and_grad(
        &self,
        params: &[Tensor2],
        table: &EmbeddingTable,
        docs: &[&[usize]],
        labels: &[u8],
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<(f64, Vec<Tensor2>)> {
        self.check_params(params)?;
        if docs.is_empty() || docs.len() != labels.len() {
            return Err(Error::Shape(format!("batch of {} documents and {} labels", docs.len(), labels.len())));
        }
        let mut grads = self.zero_grads();
        let mut loss = 0.0;
        for (doc, &y) in docs.iter().zip(labels) {
            let x = self.embed_doc(doc, table)?;
            let trace = self.forward_doc(params, &x, rng.as_mut().map(|r| &mut **r as &mut dyn RngCore))?;
            let (l, dl_dp) = bce_loss(trace.prob, y as f64);
            loss += l;
            self.backward_doc(params, &x, &trace, dl_dp, &mut grads)?;
        }
        let scale = 1.0 / docs.len() as f64;
        for g in &mut grads {
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
        let penalty = self.add_l2(params, &mut grads);
        Ok((loss * scale + penalty, grads))
    }
}

fn relu_mask(g: &Tensor2, out: &Tensor2) -> Tensor2 {
    let data = g
        .data()
        .iter()
        .zip(out.data())
        .map(|(&g, &a)| if a > 0.0 { g } else { 0.0 })
        .collect();
    Tensor2::from_vec(g.rows(), g.cols(), data).expect("same shape")
}

fn concat_aligned(maps: &[Tensor2], len: usize) -> Tensor2 {
    let cols: usize = maps.iter().map(Tensor2::cols).sum();
    let mut out = Tensor2::zeros(len, cols);
    for r in 0..len {
        let row = out.row_mut(r);
        let mut c = 0;
        for m in maps {
            row[c..c + m.cols()].copy_from_slice(m.row(r));
            c += m.cols();
        }
    }
    out
}

fn pair_mut(grads: &mut [Tensor2], a: usize, b: usize) -> (&mut Tensor2, &mut Tensor2) {
    assert!(a < b, "weight index precedes bias index");
    let (lo, hi) = grads.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

#[derive(Debug, Clone)]
pub struct PathTrace {
    /// Output of every layer in the path, in order.
    pub outputs: Vec<Tensor2>,
    argmax: Vec<Vec<usize>>,
}

/// Everything a backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct DocTrace {
    pub prob: f64,
    pub paths: Vec<PathTrace>,
    dropped: Vec<f64>,
    mask: Vec<f64>,
    hidden: Option<DenseOutput>,
    output: DenseOutput,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(family: Family, width: usize, depth: usize, region: usize, n: usize) -> ArchitectureSpec {
        ArchitectureSpec::new(family, width, depth, region, n, 4)
    }

    #[test]
    fn basic_branch_lengths() {
        let g = spec(Family::Basic, 3, 2, 4, 30).build().unwrap();
        assert_eq!(g.final_lengths(), [8, 8, 7]);
        assert_eq!(g.feature_width, 80 * (8 + 8 + 7));
    }

    #[test]
    fn region_one_keeps_length() {
        let g = spec(Family::Basic, 1, 2, 1, 12).build().unwrap();
        assert_eq!(g.layer_shapes(), [[(12, 80), (12, 80)]]);
    }

    #[test]
    fn sent_config_parameter_count() {
        let mut s = ArchitectureSpec::new(Family::Basic, 3, 4, 2, 30, 300);
        s.filters = 80;
        s.dense_width = 80;
        let g = s.build().unwrap();
        // independent count: per branch k, two convs (k*300*80+80, k*80*80+80);
        // maps 30-k+1 -> pool 2 -> -k+1 -> pool 2
        let (d, m, n, r) = (300usize, 80usize, 30usize, 2usize);
        let mut convs = 0;
        let mut features = 0;
        for k in 1..=3 {
            convs += k * d * m + m + k * m * m + m;
            let l1 = (n - k + 1).div_ceil(r);
            let l2 = (l1 - k + 1).div_ceil(r);
            features += l2 * m;
        }
        let dense = features * 80 + 80 + 80 + 1;
        assert_eq!(g.param_count(), convs + dense);
    }

    #[test]
    fn pyramid_strided_stack() {
        let mut s = spec(Family::Pyramid, 1, 4, 2, 11);
        s.filters = 3;
        let g = s.build().unwrap();
        // strided conv k=3, s=2 over 11 rows: floor(8/2)+1 = 5
        assert_eq!(g.layer_shapes()[0][1], (5, 3));
        let mut s = spec(Family::Pyramid, 1, 4, 2, 10);
        s.filters = 3;
        let g = s.build().unwrap();
        assert_eq!(g.layer_shapes()[0][1], (4, 3));
    }

    #[test]
    fn pyramid_depth_two_equals_basic() {
        for w in 1..=3 {
            let b = spec(Family::Basic, w, 2, 3, 20).build().unwrap();
            let p = spec(Family::Pyramid, w, 2, 3, 20).build().unwrap();
            assert_eq!(b, p);
        }
    }

    #[test]
    fn fluctuating_alignment() {
        let mut s = spec(Family::Fluctuating, 3, 2, 1, 10);
        s.filters = 5;
        let g = s.build().unwrap();
        assert_eq!(g.layer_shapes(), [[(8, 15), (8, 15)]]);

        s.depth = 4;
        s.region = 2;
        let g = s.build().unwrap();
        // 10 -> aligned 8 -> pool 4 -> aligned 2 -> pool 1, second turn reads 15 channels
        assert_eq!(g.layer_shapes(), [[(8, 15), (4, 15), (2, 15), (1, 15)]]);
        let Layer::ParallelConv { convs, .. } = &g.paths[0].layers[2] else { panic!() };
        assert!(convs.iter().all(|c| c.spec.in_channels == 15));
    }

    #[test]
    fn fluctuating_width_one_matches_basic_shapes() {
        let b = spec(Family::Basic, 1, 4, 3, 40).build().unwrap();
        let f = spec(Family::Fluctuating, 1, 4, 3, 40).build().unwrap();
        assert_eq!(b.layer_shapes(), f.layer_shapes());
        assert_eq!(b.param_count(), f.param_count());
    }

    #[test]
    fn single_uses_global_pool() {
        let g = spec(Family::Single, 3, 2, 1, 17).build().unwrap();
        assert_eq!(g.final_lengths(), [1, 1, 1]);
        assert_eq!(g.feature_width, 240);
        assert!(g.hidden.is_none());
        assert!(spec(Family::Single, 3, 4, 1, 17).build().is_err());
    }

    #[test]
    fn collapsing_spec_names_stack() {
        let err = spec(Family::Basic, 3, 4, 10, 12).build().unwrap_err();
        let msg = err.to_string();
        assert!(err.is_config());
        assert!(msg.contains("stack 3"), "{msg}");
        assert!(spec(Family::Basic, 3, 3, 2, 30).build().is_err());
        assert!(spec(Family::Basic, 0, 2, 2, 30).build().is_err());
    }

    #[test]
    fn spec_toml_round_trip() {
        let s = spec(Family::Pyramid, 3, 4, 5, 400);
        let text = s.to_toml();
        assert_eq!(ArchitectureSpec::from_toml(&text).unwrap(), s);
        assert!(ArchitectureSpec::from_toml(&format!("{text}bogus = 1\n")).is_err());
    }

    #[test]
    fn final_length_formula() {
        assert_eq!(final_map_length(30, 1, 2), Some(15));
        assert_eq!(final_map_length(30, 1, 4), Some(8));
        assert_eq!(final_map_length(30, 1, 25), Some(2));
        assert_eq!(final_map_length(2, 3, 1), None);
        assert!(in_optimal_band(6) && in_optimal_band(18) && !in_optimal_band(5) && !in_optimal_band(19));
    }

    #[test]
    fn all_pad_document_gives_probability() {
        let table = EmbeddingTable::from_pairs(4, [("w", vec![1.0, 0.0, 0.0, 0.0])]).unwrap();
        for family in [Family::Basic, Family::Pyramid, Family::Fluctuating, Family::Single] {
            let mut s = spec(family, 2, 2, 2, 8);
            s.filters = 3;
            s.dense_width = 4;
            let g = s.build().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let params = g.init_params(&mut rng);
            let p = g.predict(&params, &table, &[&[0; 8]]).unwrap()[0];
            assert!(p > 0.0 && p < 1.0);
            // zero input: only bias paths carry gradient into the conv layers
            let (_, grads) = g.batch_loss_and_grad(&params, &table, &[&[0; 8]], &[1], None).unwrap();
            for (info, gr) in g.params.iter().zip(&grads) {
                if info.name.starts_with("branch") || info.name.starts_with("turn") {
                    if info.name.ends_with("stack1.weight") {
                        assert!(gr.data().iter().all(|&v| v == 0.0), "{}", info.name);
                    }
                }
            }
        }
    }

    #[test]
    fn wrong_document_length_is_shape_error() {
        let table = EmbeddingTable::from_pairs(4, [("w", vec![1.0; 4])]).unwrap();
        let g = spec(Family::Basic, 1, 2, 2, 8).build().unwrap();
        let params = g.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(g.predict(&params, &table, &[&[0; 7]]), Err(Error::Shape(_))));
    }

    #[test]
    fn l2_covers_the_classifier_layer() {
        let regularized = |g: &LayerGraph| -> Vec<String> {
            g.params.iter().filter(|p| p.regularized).map(|p| p.name.clone()).collect()
        };
        assert_eq!(regularized(&spec(Family::Pyramid, 2, 4, 2, 20).build().unwrap()), ["hidden.weight"]);
        assert_eq!(regularized(&spec(Family::Single, 2, 2, 1, 20).build().unwrap()), ["output.weight"]);
    }
}
