//! Message passing over graph tensors.
//!
//! A GraphNets layer runs three blocks in order:
//!
//! 1. **edge block** — each edge row becomes `concat(e, x_src, x_dst, u)` and
//!    goes through the edge MLP;
//! 2. **node block** — each node aggregates the updated rows of its incident
//!    edges, then `concat(agg, x, u)` goes through the node MLP;
//! 3. **global block** — `concat(agg(X'), agg(E'), u)` goes through the
//!    global MLP.
//!
//! Incident edges are the incoming ones for directed graphs and both
//! endpoints' edges for undirected graphs. A node with no incident edges, or
//! a graph with no edges, aggregates to a zero vector of the right width.
//!
//! A GCN layer is the node-only variant: `X'_i = act(mean_{j ∈ {i} ∪ N(i)} X_j W)`.
//!
//! All backward passes are written by hand; `max` aggregation routes the
//! gradient to the first row attaining the maximum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphTensor;
use crate::nn::{load_tensor, mse_grad, mse_loss, Activation, MlpCache, MlpParams, Parameters, TrainConfig};
use crate::tensor::{hstack, Aggregator, Tensor};

/// Feature widths `(Fn, Fe, Fu)` of a graph tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Widths {
    pub node: usize,
    pub edge: usize,
    pub global: usize,
}

impl Widths {
    pub fn new(node: usize, edge: usize, global: usize) -> Self {
        Widths { node, edge, global }
    }

    pub fn of(g: &GraphTensor) -> Self {
        Widths::new(g.nodes.cols(), g.edges.cols(), g.globals.cols())
    }
}

impl std::fmt::Display for Widths {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(Fn={}, Fe={}, Fu={})", self.node, self.edge, self.global)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskLevel {
    Global,
    Node,
    Edge,
}

impl std::str::FromStr for TaskLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(TaskLevel::Global),
            "node" => Ok(TaskLevel::Node),
            "edge" => Ok(TaskLevel::Edge),
            _ => Err(Error::Usage(format!("unknown task level `{s}`"))),
        }
    }
}

fn check_aggregator(agg: Aggregator) -> Result<()> {
    match agg {
        Aggregator::Sum | Aggregator::Mean | Aggregator::Max => Ok(()),
        other => Err(Error::Config(format!("message passing aggregator must be sum, mean or max, not {}", other.name()))),
    }
}

fn width_mismatch(what: &str, expected: usize, got: usize) -> Error {
    Error::Schema(format!("{what}: expected width {expected}, got {got}"))
}

/// Parameters of one GraphNets layer.
///
/// `global_mlp: None` passes `U` through unchanged; with zero-width globals
/// this turns off the long-range hub entirely.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphNetsLayerParams {
    /// Widths of the graph this layer consumes.
    pub input: Widths,
    /// in = `Fe + 2·Fn + Fu`
    pub edge_mlp: MlpParams,
    /// in = `Fe' + Fn + Fu`
    pub node_mlp: MlpParams,
    /// in = `Fn' + Fe' + Fu`
    pub global_mlp: Option<MlpParams>,
    pub aggregator: Aggregator,
}

impl GraphNetsLayerParams {
    /// Glorot-initialised layer. `hidden` lists the hidden widths used inside
    /// every block MLP; `output.global` is ignored when `with_global` is false.
    pub fn init(
        input: Widths,
        output: Widths,
        hidden: &[usize],
        activation: Activation,
        aggregator: Aggregator,
        with_global: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let sizes = |i: usize, o: usize| {
            let mut s = vec![i];
            s.extend_from_slice(hidden);
            s.push(o);
            s
        };
        let edge_mlp = MlpParams::init(&sizes(input.edge + 2 * input.node + input.global, output.edge), activation, rng);
        let node_mlp = MlpParams::init(&sizes(output.edge + input.node + input.global, output.node), activation, rng);
        let global_mlp = with_global
            .then(|| MlpParams::init(&sizes(output.node + output.edge + input.global, output.global), activation, rng));
        GraphNetsLayerParams {
            input,
            edge_mlp,
            node_mlp,
            global_mlp,
            aggregator,
        }
    }

    /// Widths chain exactly and the aggregator is one of sum/mean/max.
    pub fn check(&self) -> Result<()> {
        check_aggregator(self.aggregator)?;
        self.edge_mlp.check()?;
        self.node_mlp.check()?;
        let w = self.input;
        let (e_out, n_out) = (self.edge_mlp.output_width(), self.node_mlp.output_width());
        if self.edge_mlp.input_width() != w.edge + 2 * w.node + w.global {
            return Err(width_mismatch("edge MLP input", w.edge + 2 * w.node + w.global, self.edge_mlp.input_width()));
        }
        if self.node_mlp.input_width() != e_out + w.node + w.global {
            return Err(width_mismatch("node MLP input", e_out + w.node + w.global, self.node_mlp.input_width()));
        }
        if let Some(m) = &self.global_mlp {
            m.check()?;
            if m.input_width() != n_out + e_out + w.global {
                return Err(width_mismatch("global MLP input", n_out + e_out + w.global, m.input_width()));
            }
        }
        Ok(())
    }

    pub fn output(&self) -> Widths {
        Widths {
            node: self.node_mlp.output_width(),
            edge: self.edge_mlp.output_width(),
            global: self.global_mlp.as_ref().map_or(self.input.global, MlpParams::output_width),
        }
    }

    fn check_graph(&self, g: &GraphTensor) -> Result<()> {
        let got = Widths::of(g);
        if got != self.input {
            return Err(Error::Schema(format!("layer expects widths {} but graph has {got}", self.input)));
        }
        Ok(())
    }

    fn mlps(&self) -> impl Iterator<Item = &MlpParams> {
        [Some(&self.edge_mlp), Some(&self.node_mlp), self.global_mlp.as_ref()].into_iter().flatten()
    }

    fn mlps_mut(&mut self) -> impl Iterator<Item = &mut MlpParams> {
        [Some(&mut self.edge_mlp), Some(&mut self.node_mlp), self.global_mlp.as_mut()].into_iter().flatten()
    }
}

/// Aggregates `rows` over each index set; empty sets give zeros.
fn aggregate_sets(rows: &Tensor, sets: &[Vec<usize>], agg: Aggregator) -> Result<Tensor> {
    let mut data = Vec::with_capacity(sets.len() * rows.cols());
    for s in sets {
        if s.is_empty() {
            data.extend(std::iter::repeat(0.0).take(rows.cols()));
        } else {
            data.extend(rows.select_rows(s).aggregate(agg)?.into_data());
        }
    }
    Tensor::new(sets.len(), rows.cols(), data)
}

/// Gradient of [`aggregate_sets`] with respect to `rows`.
fn aggregate_sets_backward(rows: &Tensor, sets: &[Vec<usize>], agg: Aggregator, grad: &Tensor) -> Result<Tensor> {
    let cols = rows.cols();
    let mut out = vec![0.0; rows.rows() * cols];
    for (j, s) in sets.iter().enumerate() {
        if s.is_empty() {
            continue;
        }
        let g = grad.row_slice(j);
        match agg {
            Aggregator::Sum | Aggregator::Mean => {
                let f = if agg == Aggregator::Mean { 1.0 / s.len() as f64 } else { 1.0 };
                for &r in s {
                    for c in 0..cols {
                        out[r * cols + c] += f * g[c];
                    }
                }
            }
            Aggregator::Max => {
                for c in 0..cols {
                    let best = s.iter().map(|&r| rows.get(r, c)).fold(f64::NEG_INFINITY, f64::max);
                    let r = *s.iter().find(|&&r| rows.get(r, c) == best).expect("non-empty set");
                    out[r * cols + c] += g[c];
                }
            }
            other => return Err(Error::Config(format!("no gradient for aggregator {}", other.name()))),
        }
    }
    Tensor::new(rows.rows(), cols, out)
}

fn broadcast_rows(u: &Tensor, n: usize) -> Tensor {
    let mut data = Vec::with_capacity(n * u.cols());
    for _ in 0..n {
        data.extend_from_slice(u.data());
    }
    Tensor::new(n, u.cols(), data).expect("finite broadcast")
}

/// `M x (Fe + 2·Fn + Fu)` rows `concat(e_k, x_src, x_dst, u)`.
fn edge_inputs(g: &GraphTensor) -> Result<Tensor> {
    let (src, dst): (Vec<usize>, Vec<usize>) = g.connectivity.edges.iter().copied().unzip();
    hstack(&[
        &g.edges,
        &g.nodes.select_rows(&src),
        &g.nodes.select_rows(&dst),
        &broadcast_rows(&g.globals, g.num_edges()),
    ])
}

fn node_inputs(g: &GraphTensor, e_new: &Tensor, incidence: &[Vec<usize>], agg: Aggregator) -> Result<Tensor> {
    let pooled = aggregate_sets(e_new, incidence, agg)?;
    hstack(&[&pooled, &g.nodes, &broadcast_rows(&g.globals, g.num_nodes())])
}

fn pool_all(rows: &Tensor, agg: Aggregator) -> Result<Tensor> {
    aggregate_sets(rows, &[(0..rows.rows()).collect()], agg)
}

fn global_inputs(g: &GraphTensor, x_new: &Tensor, e_new: &Tensor, agg: Aggregator) -> Result<Tensor> {
    hstack(&[&pool_all(x_new, agg)?, &pool_all(e_new, agg)?, &g.globals])
}

/// Updated edge features `E'` (`M x Fe'`).
pub fn edge_block(g: &GraphTensor, p: &GraphNetsLayerParams) -> Result<Tensor> {
    p.check_graph(g)?;
    p.edge_mlp.forward(&edge_inputs(g)?)
}

/// Updated node features `X'` (`N x Fn'`) from the edge block's output.
pub fn node_block(g: &GraphTensor, e_new: &Tensor, p: &GraphNetsLayerParams) -> Result<Tensor> {
    p.check_graph(g)?;
    if e_new.rows() != g.num_edges() || e_new.cols() != p.edge_mlp.output_width() {
        return Err(Error::shape("node_block", e_new.shape(), crate::Shape::new(g.num_edges(), p.edge_mlp.output_width())));
    }
    p.node_mlp.forward(&node_inputs(g, e_new, &g.connectivity.incidence(), p.aggregator)?)
}

/// Updated global features `U'` (`1 x Fu'`); `U` itself without a global MLP.
pub fn global_block(g: &GraphTensor, x_new: &Tensor, e_new: &Tensor, p: &GraphNetsLayerParams) -> Result<Tensor> {
    p.check_graph(g)?;
    let out = p.output();
    if x_new.cols() != out.node || x_new.rows() != g.num_nodes() {
        return Err(Error::shape("global_block", x_new.shape(), crate::Shape::new(g.num_nodes(), out.node)));
    }
    if e_new.cols() != out.edge || e_new.rows() != g.num_edges() {
        return Err(Error::shape("global_block", e_new.shape(), crate::Shape::new(g.num_edges(), out.edge)));
    }
    match &p.global_mlp {
        Some(m) => m.forward(&global_inputs(g, x_new, e_new, p.aggregator)?),
        None => Ok(g.globals.clone()),
    }
}

/// Edge, node and global blocks in sequence. Connectivity, aux matrices and
/// labels carry over; column names are dropped since features are latent.
pub fn graphnets_layer(g: &GraphTensor, p: &GraphNetsLayerParams) -> Result<GraphTensor> {
    let e = edge_block(g, p)?;
    let x = node_block(g, &e, p)?;
    let u = global_block(g, &x, &e, p)?;
    Ok(with_features(g, x, e, u))
}

fn with_features(g: &GraphTensor, x: Tensor, e: Tensor, u: Tensor) -> GraphTensor {
    GraphTensor {
        nodes: x,
        edges: e,
        globals: u,
        connectivity: g.connectivity.clone(),
        aux: g.aux.clone(),
        node_columns: Vec::new(),
        edge_columns: Vec::new(),
        global_columns: Vec::new(),
        node_labels: g.node_labels.clone(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcnLayer {
    /// `Fn x Fn'`
    pub weights: Tensor,
    pub activation: Activation,
}

impl GcnLayer {
    pub fn init(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let mlp = MlpParams::init(&[fan_in, fan_out], activation, rng);
        GcnLayer {
            weights: mlp.layers[0].weights.clone(),
            activation,
        }
    }
}

/// `{i} ∪ neighbours(i)` for every node.
fn closed_neighborhoods(g: &GraphTensor) -> Vec<Vec<usize>> {
    g.connectivity
        .neighbor_sets()
        .into_iter()
        .enumerate()
        .map(|(i, mut s)| {
            s.insert(i);
            s.into_iter().collect()
        })
        .collect()
}

/// Degree-normalised neighbourhood averaging followed by `W` and `act`.
/// Edge and global features are left alone.
pub fn gcn_layer(g: &GraphTensor, w: &Tensor, activation: Activation) -> Result<Tensor> {
    if w.rows() != g.nodes.cols() {
        return Err(width_mismatch("GCN weights", g.nodes.cols(), w.rows()));
    }
    let h = aggregate_sets(&g.nodes, &closed_neighborhoods(g), Aggregator::Mean)?;
    h.matmul(w)?.map(|z| activation.apply(z))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum GnnLayer {
    GraphNets(GraphNetsLayerParams),
    Gcn(GcnLayer),
}

impl GnnLayer {
    fn output(&self, input: Widths) -> Widths {
        match self {
            GnnLayer::GraphNets(p) => p.output(),
            GnnLayer::Gcn(l) => Widths { node: l.weights.cols(), ..input },
        }
    }
}

/// Maps the final graph to predictions at one task level through a separate
/// head MLP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Readout {
    pub task: TaskLevel,
    pub head: MlpParams,
    /// Global task only: also pool the final node features and append them
    /// to `U'` before the head. Needed when the layers never update `U`.
    #[serde(default)]
    pub pool_nodes: Option<Aggregator>,
}

impl Readout {
    fn input_width(&self, w: Widths) -> usize {
        match self.task {
            TaskLevel::Global => w.global + self.pool_nodes.map_or(0, |_| w.node),
            TaskLevel::Node => w.node,
            TaskLevel::Edge => w.edge,
        }
    }

    fn head_input(&self, g: &GraphTensor) -> Result<Tensor> {
        match self.task {
            TaskLevel::Global => match self.pool_nodes {
                Some(agg) => hstack(&[&g.globals, &pool_all(&g.nodes, agg)?]),
                None => Ok(g.globals.clone()),
            },
            TaskLevel::Node => Ok(g.nodes.clone()),
            TaskLevel::Edge => Ok(g.edges.clone()),
        }
    }
}

/// Predictions for `g` (already passed through the layers): `1 x t`,
/// `N x t` or `M x t` depending on the task level.
pub fn readout(g: &GraphTensor, r: &Readout) -> Result<Tensor> {
    let input = r.head_input(g)?;
    if input.cols() != r.head.input_width() {
        return Err(width_mismatch("readout head input", input.cols(), r.head.input_width()));
    }
    r.head.forward(&input)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    GraphNets,
    Gcn,
}

/// Architecture description used by [`GnnModel::init`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GnnConfig {
    pub kind: LayerKind,
    pub input: Widths,
    /// Output widths of every layer.
    pub latent: Widths,
    pub num_layers: usize,
    /// Hidden widths inside each block MLP (GraphNets only).
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub aggregator: Aggregator,
    /// `false` zeroes the global width: `U` is dropped on input and never
    /// updated, so information travels one hop per layer.
    pub use_globals: bool,
    pub task: TaskLevel,
    #[serde(default)]
    pub head_hidden: Vec<usize>,
    pub output_width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GnnModel {
    /// Widths the first layer sees; `global` is 0 when `use_globals` is off.
    pub input: Widths,
    pub use_globals: bool,
    pub layers: Vec<GnnLayer>,
    pub readout: Readout,
}

enum Tape {
    GraphNets {
        input: GraphTensor,
        e_out: Tensor,
        x_out: Tensor,
        incidence: Vec<Vec<usize>>,
        edge_cache: MlpCache,
        node_cache: MlpCache,
        global_cache: Option<MlpCache>,
    },
    Gcn {
        input: Tensor,
        sets: Vec<Vec<usize>>,
        pre: Tensor,
    },
}

/// Gradients for one graph flowing backwards through a layer.
struct GraphGrads {
    x: Tensor,
    e: Tensor,
    u: Tensor,
}

impl GnnModel {
    pub fn init(cfg: &GnnConfig, seed: u64) -> Result<Self> {
        check_aggregator(cfg.aggregator)?;
        if cfg.output_width == 0 {
            return Err(Error::Config("output width must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = Widths {
            global: if cfg.use_globals { cfg.input.global } else { 0 },
            ..cfg.input
        };
        let mut w = input;
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for _ in 0..cfg.num_layers {
            let layer = match cfg.kind {
                LayerKind::GraphNets => GnnLayer::GraphNets(GraphNetsLayerParams::init(
                    w,
                    cfg.latent,
                    &cfg.hidden,
                    cfg.activation,
                    cfg.aggregator,
                    cfg.use_globals,
                    &mut rng,
                )),
                LayerKind::Gcn => GnnLayer::Gcn(GcnLayer::init(w.node, cfg.latent.node, cfg.activation, &mut rng)),
            };
            w = layer.output(w);
            layers.push(layer);
        }
        // Without a learned global update the head also sees pooled nodes.
        let pool_nodes = (cfg.task == TaskLevel::Global && (!cfg.use_globals || cfg.kind == LayerKind::Gcn || cfg.num_layers == 0))
            .then_some(cfg.aggregator);
        let mut readout = Readout {
            task: cfg.task,
            head: MlpParams::init(&[1, 1], cfg.activation, &mut rng),
            pool_nodes,
        };
        let mut sizes = vec![readout.input_width(w)];
        sizes.extend_from_slice(&cfg.head_hidden);
        sizes.push(cfg.output_width);
        readout.head = MlpParams::init(&sizes, cfg.activation, &mut rng);
        let model = GnnModel {
            input,
            use_globals: cfg.use_globals,
            layers,
            readout,
        };
        model.check()?;
        Ok(model)
    }

    /// Layer widths chain and the head consumes what the last layer emits.
    pub fn check(&self) -> Result<()> {
        if !self.use_globals && self.input.global != 0 {
            return Err(Error::Config("global width must be 0 when globals are disabled".into()));
        }
        let mut w = self.input;
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                GnnLayer::GraphNets(p) => {
                    p.check().map_err(|e| Error::Schema(format!("layer {i}: {e}")))?;
                    if p.input != w {
                        return Err(Error::Schema(format!("layer {i} expects {} but receives {w}", p.input)));
                    }
                }
                GnnLayer::Gcn(l) => {
                    if l.weights.rows() != w.node {
                        return Err(Error::Schema(format!(
                            "layer {i}: GCN weights take width {} but receive {}",
                            l.weights.rows(),
                            w.node
                        )));
                    }
                }
            }
            w = layer.output(w);
        }
        self.readout.head.check()?;
        if let Some(agg) = self.readout.pool_nodes {
            check_aggregator(agg)?;
        }
        let need = self.readout.input_width(w);
        if self.readout.head.input_width() != need {
            return Err(width_mismatch("readout head input", need, self.readout.head.input_width()));
        }
        Ok(())
    }

    pub fn task(&self) -> TaskLevel {
        self.readout.task
    }

    pub fn output_width(&self) -> usize {
        self.readout.head.output_width()
    }

    /// Checks widths and drops `U` when globals are disabled.
    fn prepare(&self, g: &GraphTensor) -> Result<GraphTensor> {
        let mut g = g.clone();
        if !self.use_globals {
            g.globals = Tensor::zeros(1, 0);
        }
        let got = Widths::of(&g);
        if got != self.input {
            return Err(Error::Schema(format!("model expects input widths {} but graph has {got}", self.input)));
        }
        Ok(g)
    }

    /// The graph after every layer, before the readout.
    pub fn embed(&self, g: &GraphTensor) -> Result<GraphTensor> {
        let mut g = self.prepare(g)?;
        for layer in &self.layers {
            g = match layer {
                GnnLayer::GraphNets(p) => graphnets_layer(&g, p)?,
                GnnLayer::Gcn(l) => {
                    let x = gcn_layer(&g, &l.weights, l.activation)?;
                    with_features(&g, x, g.edges.clone(), g.globals.clone())
                }
            };
        }
        Ok(g)
    }

    pub fn predict(&self, g: &GraphTensor) -> Result<Tensor> {
        readout(&self.embed(g)?, &self.readout)
    }

    fn forward_tape(&self, g: &GraphTensor) -> Result<(GraphTensor, Vec<Tape>)> {
        let mut g = self.prepare(g)?;
        let mut tapes = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            match layer {
                GnnLayer::GraphNets(p) => {
                    let incidence = g.connectivity.incidence();
                    let (e_out, edge_cache) = p.edge_mlp.forward_cached(&edge_inputs(&g)?)?;
                    let (x_out, node_cache) = p.node_mlp.forward_cached(&node_inputs(&g, &e_out, &incidence, p.aggregator)?)?;
                    let (u_out, global_cache) = match &p.global_mlp {
                        Some(m) => {
                            let (u, c) = m.forward_cached(&global_inputs(&g, &x_out, &e_out, p.aggregator)?)?;
                            (u, Some(c))
                        }
                        None => (g.globals.clone(), None),
                    };
                    let next = with_features(&g, x_out.clone(), e_out.clone(), u_out);
                    tapes.push(Tape::GraphNets {
                        input: g,
                        e_out,
                        x_out,
                        incidence,
                        edge_cache,
                        node_cache,
                        global_cache,
                    });
                    g = next;
                }
                GnnLayer::Gcn(l) => {
                    let sets = closed_neighborhoods(&g);
                    let pre = aggregate_sets(&g.nodes, &sets, Aggregator::Mean)?.matmul(&l.weights)?;
                    let x = pre.map(|z| l.activation.apply(z))?;
                    let next = with_features(&g, x, g.edges.clone(), g.globals.clone());
                    tapes.push(Tape::Gcn {
                        input: g.nodes.clone(),
                        sets,
                        pre,
                    });
                    g = next;
                }
            }
        }
        Ok((g, tapes))
    }

    /// Mean squared error of the prediction for `g` against `target`, and its
    /// gradient with respect to every parameter (shaped like `self`).
    pub fn loss_and_gradients(&self, g: &GraphTensor, target: &Tensor) -> Result<(f64, GnnModel)> {
        let (last, tapes) = self.forward_tape(g)?;
        let head_in = self.readout.head_input(&last)?;
        let (pred, head_cache) = self.readout.head.forward_cached(&head_in)?;
        let loss = mse_loss(&pred, target)?;
        let (head_grad, d_in) = self.readout.head.backward(&head_cache, &mse_grad(&pred, target)?)?;

        let w = Widths::of(&last);
        let mut grads = GraphGrads {
            x: Tensor::zeros(last.num_nodes(), w.node),
            e: Tensor::zeros(last.num_edges(), w.edge),
            u: Tensor::zeros(1, w.global),
        };
        match self.readout.task {
            TaskLevel::Global => {
                grads.u = d_in.slice_cols(0, w.global);
                if let Some(agg) = self.readout.pool_nodes {
                    let d_pool = d_in.slice_cols(w.global, w.global + w.node);
                    grads.x = aggregate_sets_backward(&last.nodes, &[(0..last.num_nodes()).collect()], agg, &d_pool)?;
                }
            }
            TaskLevel::Node => grads.x = d_in,
            TaskLevel::Edge => grads.e = d_in,
        }

        let mut layer_grads = Vec::with_capacity(self.layers.len());
        for (layer, tape) in self.layers.iter().zip(&tapes).rev() {
            let (lg, next) = layer_backward(layer, tape, grads)?;
            layer_grads.push(lg);
            grads = next;
        }
        layer_grads.reverse();
        Ok((
            loss,
            GnnModel {
                input: self.input,
                use_globals: self.use_globals,
                layers: layer_grads,
                readout: Readout {
                    head: head_grad,
                    ..self.readout.clone()
                },
            },
        ))
    }
}

fn layer_backward(layer: &GnnLayer, tape: &Tape, out: GraphGrads) -> Result<(GnnLayer, GraphGrads)> {
    match (layer, tape) {
        (
            GnnLayer::GraphNets(p),
            Tape::GraphNets {
                input,
                e_out,
                x_out,
                incidence,
                edge_cache,
                node_cache,
                global_cache,
            },
        ) => {
            let w = p.input;
            let o = p.output();
            let mut d_x_out = out.x;
            let mut d_e_out = out.e;
            let mut d_u = Tensor::zeros(1, w.global);

            let global_grad = match (&p.global_mlp, global_cache) {
                (Some(m), Some(cache)) => {
                    let (mg, d_in) = m.backward(cache, &out.u)?;
                    let d_pool_x = d_in.slice_cols(0, o.node);
                    let d_pool_e = d_in.slice_cols(o.node, o.node + o.edge);
                    d_x_out = d_x_out.add(&aggregate_sets_backward(x_out, &[(0..x_out.rows()).collect()], p.aggregator, &d_pool_x)?)?;
                    d_e_out = d_e_out.add(&aggregate_sets_backward(e_out, &[(0..e_out.rows()).collect()], p.aggregator, &d_pool_e)?)?;
                    d_u = d_u.add(&d_in.slice_cols(o.node + o.edge, o.node + o.edge + w.global))?;
                    Some(mg)
                }
                _ => {
                    d_u = d_u.add(&out.u)?;
                    None
                }
            };

            let (node_grad, d_node_in) = p.node_mlp.backward(node_cache, &d_x_out)?;
            let d_agg = d_node_in.slice_cols(0, o.edge);
            let d_x = d_node_in.slice_cols(o.edge, o.edge + w.node);
            d_u = d_u.add(&column_sums(&d_node_in.slice_cols(o.edge + w.node, o.edge + w.node + w.global)))?;
            d_e_out = d_e_out.add(&aggregate_sets_backward(e_out, incidence, p.aggregator, &d_agg)?)?;

            let (edge_grad, d_edge_in) = p.edge_mlp.backward(edge_cache, &d_e_out)?;
            let d_e = d_edge_in.slice_cols(0, w.edge);
            let mut dx = d_x.into_data();
            let d_src = d_edge_in.slice_cols(w.edge, w.edge + w.node);
            let d_dst = d_edge_in.slice_cols(w.edge + w.node, w.edge + 2 * w.node);
            for (k, &(s, d)) in input.connectivity.edges.iter().enumerate() {
                for c in 0..w.node {
                    dx[s * w.node + c] += d_src.get(k, c);
                    dx[d * w.node + c] += d_dst.get(k, c);
                }
            }
            d_u = d_u.add(&column_sums(&d_edge_in.slice_cols(w.edge + 2 * w.node, w.edge + 2 * w.node + w.global)))?;

            Ok((
                GnnLayer::GraphNets(GraphNetsLayerParams {
                    input: w,
                    edge_mlp: edge_grad,
                    node_mlp: node_grad,
                    global_mlp: global_grad,
                    aggregator: p.aggregator,
                }),
                GraphGrads {
                    x: Tensor::new(input.num_nodes(), w.node, dx)?,
                    e: d_e,
                    u: d_u,
                },
            ))
        }
        (GnnLayer::Gcn(l), Tape::Gcn { input, sets, pre }) => {
            let act_grad = pre.map(|z| l.activation.derivative(z))?;
            let d_pre = out.x.hadamard(&act_grad)?;
            let h = aggregate_sets(input, sets, Aggregator::Mean)?;
            let d_w = h.transpose().matmul(&d_pre)?;
            let d_h = d_pre.matmul(&l.weights.transpose())?;
            let d_x = aggregate_sets_backward(input, sets, Aggregator::Mean, &d_h)?;
            Ok((
                GnnLayer::Gcn(GcnLayer {
                    weights: d_w,
                    activation: l.activation,
                }),
                GraphGrads { x: d_x, e: out.e, u: out.u },
            ))
        }
        _ => unreachable!("tape recorded for a different layer kind"),
    }
}

fn column_sums(t: &Tensor) -> Tensor {
    let mut out = vec![0.0; t.cols()];
    for r in 0..t.rows() {
        for (o, v) in out.iter_mut().zip(t.row_slice(r)) {
            *o += v;
        }
    }
    Tensor::new(1, t.cols(), out).expect("finite sums")
}

impl Parameters for GnnModel {
    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                GnnLayer::GraphNets(p) => p.mlps().for_each(|m| out.extend(m.flatten())),
                GnnLayer::Gcn(l) => out.extend_from_slice(l.weights.data()),
            }
        }
        out.extend(self.readout.head.flatten());
        out
    }

    fn load_flat(&mut self, values: &[f64]) -> Result<()> {
        fn load_mlp(m: &mut MlpParams, values: &[f64], offset: &mut usize) -> Result<()> {
            for l in &mut m.layers {
                load_tensor(&mut l.weights, values, offset)?;
                load_tensor(&mut l.bias, values, offset)?;
            }
            Ok(())
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            match layer {
                GnnLayer::GraphNets(p) => {
                    for m in p.mlps_mut() {
                        load_mlp(m, values, &mut offset)?;
                    }
                }
                GnnLayer::Gcn(l) => load_tensor(&mut l.weights, values, &mut offset)?,
            }
        }
        load_mlp(&mut self.readout.head, values, &mut offset)?;
        if offset != values.len() {
            return Err(Error::Usage(format!("{} flat values for {offset} parameters", values.len())));
        }
        Ok(())
    }
}

/// Graphs paired with targets at one task level.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub items: Vec<(GraphTensor, Tensor)>,
    pub task: TaskLevel,
}

impl Dataset {
    pub fn new(items: Vec<(GraphTensor, Tensor)>, task: TaskLevel) -> Result<Self> {
        let d = Dataset { items, task };
        d.check()?;
        Ok(d)
    }

    /// Targets are `1 x t`, `N x t` or `M x t` with one `t` throughout.
    pub fn check(&self) -> Result<()> {
        let mut width = None;
        for (i, (g, y)) in self.items.iter().enumerate() {
            let rows = match self.task {
                TaskLevel::Global => 1,
                TaskLevel::Node => g.num_nodes(),
                TaskLevel::Edge => g.num_edges(),
            };
            if y.rows() != rows {
                return Err(Error::Schema(format!(
                    "item {i}: {:?}-level target needs {rows} rows, got {}",
                    self.task,
                    y.rows()
                )));
            }
            if *width.get_or_insert(y.cols()) != y.cols() {
                return Err(Error::Schema(format!("item {i}: target width {} differs from earlier items", y.cols())));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn target_width(&self) -> Option<usize> {
        self.items.first().map(|(_, y)| y.cols())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            items: indices.iter().map(|&i| self.items[i].clone()).collect(),
            task: self.task,
        }
    }
}

fn check_compatible(model: &GnnModel, data: &Dataset) -> Result<()> {
    if model.task() != data.task {
        return Err(Error::Schema(format!("model predicts {:?}-level targets, dataset has {:?}", model.task(), data.task)));
    }
    if let Some(t) = data.target_width() {
        if t != model.output_width() {
            return Err(width_mismatch("target", model.output_width(), t));
        }
    }
    Ok(())
}

/// Gradient descent on the mean over graphs of per-graph mean squared error.
/// Returns the trained model and the mean pre-update loss of every epoch.
pub fn train(model: &GnnModel, data: &Dataset, cfg: &TrainConfig) -> Result<(GnnModel, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::Usage("cannot train on an empty dataset".into()));
    }
    model.check()?;
    data.check()?;
    check_compatible(model, data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = model.flatten();
    let mut current = model.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let batches = crate::nn::epoch_batches(data.len(), cfg.batch_size, &mut rng);
        let mut total = 0.0;
        for b in &batches {
            let mut grad = vec![0.0; params.len()];
            let mut loss = 0.0;
            for &i in b {
                let (g, y) = &data.items[i];
                let (l, gm) = current.loss_and_gradients(g, y)?;
                loss += l;
                for (acc, v) in grad.iter_mut().zip(gm.flatten()) {
                    *acc += v;
                }
            }
            let n = b.len() as f64;
            loss /= n;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss at epoch {epoch}")));
            }
            total += loss;
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= cfg.lr * g / n;
            }
            current
                .load_flat(&params)
                .map_err(|e| Error::Numerical(format!("update diverged at epoch {epoch}: {e}")))?;
        }
        history.push(total / batches.len() as f64);
    }
    Ok((current, history))
}

/// Predictions for every item, in order.
pub fn predict_all(model: &GnnModel, data: &Dataset) -> Result<Vec<Tensor>> {
    check_compatible(model, data)?;
    data.items.iter().map(|(g, _)| model.predict(g)).collect()
}

/// Mean over graphs of per-graph mean squared error.
pub fn evaluate(model: &GnnModel, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Usage("cannot evaluate on an empty dataset".into()));
    }
    let preds = predict_all(model, data)?;
    let mut total = 0.0;
    for (p, (_, y)) in preds.iter().zip(&data.items) {
        total += mse_loss(p, y)?;
    }
    Ok(total / data.len() as f64)
}

pub const CHECKPOINT_FORMAT: &str = "chemgraph-gnn";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    model: GnnModel,
}

/// Versioned JSON dump of every parameter tensor plus the width schema.
pub fn save_checkpoint(model: &GnnModel) -> Result<String> {
    let c = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        model: model.clone(),
    };
    serde_json::to_string_pretty(&c).map_err(|e| Error::Usage(e.to_string()))
}

/// Parses and validates a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(text: &str) -> Result<GnnModel> {
    let c: Checkpoint = serde_json::from_str(text)?;
    if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
        return Err(Error::Schema(format!(
            "unsupported checkpoint {} v{} (expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION})",
            c.format, c.version
        )));
    }
    c.model.check()?;
    Ok(c.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{permute_nodes, Connectivity};
    use crate::nn::Dense;

    fn linear(w: Vec<Vec<f64>>, b: Vec<f64>) -> MlpParams {
        let cols = b.len();
        MlpParams::new(
            vec![Dense {
                weights: Tensor::from_rows(&w, cols).unwrap(),
                bias: Tensor::row(b).unwrap(),
            }],
            Activation::Identity,
        )
        .unwrap()
    }

    fn zero_mlp(i: usize, o: usize) -> MlpParams {
        linear(vec![vec![0.0; o]; i], vec![0.0; o])
    }

    fn graph(x: Vec<Vec<f64>>, fe: usize, edges: Vec<(usize, usize)>, u: Vec<f64>, seed: u64) -> GraphTensor {
        let fn_ = x[0].len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e: Vec<Vec<f64>> = edges.iter().map(|_| (0..fe).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        GraphTensor::new(
            Tensor::from_rows(&x, fn_).unwrap(),
            Tensor::from_rows(&e, fe).unwrap(),
            Tensor::row(u).unwrap(),
            Connectivity::undirected(x.len(), edges),
        )
        .unwrap()
    }

    fn methane() -> GraphTensor {
        graph(
            vec![vec![6.0, -0.4, 1.0], vec![1.0, 0.1, 2.0], vec![1.0, 0.1, 2.0], vec![1.0, 0.1, 2.0], vec![1.0, 0.1, 2.0]],
            2,
            vec![(0, 1), (0, 2), (0, 3), (0, 4)],
            vec![16.04],
            1,
        )
    }

    fn methane_layer() -> GraphNetsLayerParams {
        GraphNetsLayerParams::init(
            Widths::new(3, 2, 1),
            Widths::new(3, 2, 1),
            &[],
            Activation::Relu,
            Aggregator::Sum,
            true,
            &mut ChaCha8Rng::seed_from_u64(3),
        )
    }

    #[test]
    fn methane_shape_trace() {
        let g = methane();
        let p = methane_layer();
        assert_eq!(p.edge_mlp.input_width(), 9);
        assert_eq!(edge_inputs(&g).unwrap().cols(), 9);
        let e = edge_block(&g, &p).unwrap();
        assert_eq!((e.rows(), e.cols()), (4, 2));
        assert_eq!(node_inputs(&g, &e, &g.connectivity.incidence(), Aggregator::Sum).unwrap().cols(), 6);
        let x = node_block(&g, &e, &p).unwrap();
        assert_eq!((x.rows(), x.cols()), (5, 3));
        assert_eq!(global_inputs(&g, &x, &e, Aggregator::Sum).unwrap().cols(), 6);
        let u = global_block(&g, &x, &e, &p).unwrap();
        assert_eq!((u.rows(), u.cols()), (1, 1));
        let out = graphnets_layer(&g, &p).unwrap();
        assert_eq!(out.connectivity, g.connectivity);
    }

    #[test]
    fn hydrogen_sum_is_its_single_edge() {
        let g = methane();
        let p = methane_layer();
        let e = edge_block(&g, &p).unwrap();
        let pooled = aggregate_sets(&e, &g.connectivity.incidence(), Aggregator::Sum).unwrap();
        for h in 1..5 {
            assert_eq!(pooled.row_slice(h), e.row_slice(h - 1));
        }
    }

    #[test]
    fn zero_mlps_give_zero_outputs() {
        let g = methane();
        let p = GraphNetsLayerParams {
            input: Widths::new(3, 2, 1),
            edge_mlp: zero_mlp(9, 2),
            node_mlp: zero_mlp(6, 3),
            global_mlp: Some(zero_mlp(6, 1)),
            aggregator: Aggregator::Sum,
        };
        let out = graphnets_layer(&g, &p).unwrap();
        assert!(out.edges.data().iter().chain(out.nodes.data()).chain(out.globals.data()).all(|&v| v == 0.0));
    }

    /// Two nodes, one edge, every block a hand-set linear map.
    #[test]
    fn two_node_hand_computation() {
        let g = GraphTensor::new(
            Tensor::from_rows(&[vec![1.0], vec![2.0]], 1).unwrap(),
            Tensor::from_rows(&[vec![3.0]], 1).unwrap(),
            Tensor::row(vec![0.5]).unwrap(),
            Connectivity::undirected(2, [(0, 1)]),
        )
        .unwrap();
        // e' = 1·e + 2·x_src + 3·x_dst + 4·u + 0.1 = 3 + 2 + 6 + 2 + 0.1
        let p = GraphNetsLayerParams {
            input: Widths::new(1, 1, 1),
            edge_mlp: linear(vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]], vec![0.1]),
            // x' = agg + 10·x + u
            node_mlp: linear(vec![vec![1.0], vec![10.0], vec![1.0]], vec![0.0]),
            // u' = sum x' − sum e' + 2u
            global_mlp: Some(linear(vec![vec![1.0], vec![-1.0], vec![2.0]], vec![0.0])),
            aggregator: Aggregator::Sum,
        };
        let e = 3.0 + 2.0 + 6.0 + 2.0 + 0.1;
        let x0 = e + 10.0 + 0.5;
        let x1 = e + 20.0 + 0.5;
        let u = x0 + x1 - e + 1.0;
        let out = graphnets_layer(&g, &p).unwrap();
        assert!((out.edges.item().unwrap() - e).abs() < 1e-12);
        assert!((out.nodes.get(0, 0) - x0).abs() < 1e-12);
        assert!((out.nodes.get(1, 0) - x1).abs() < 1e-12);
        assert!((out.globals.item().unwrap() - u).abs() < 1e-12);
    }

    #[test]
    fn isolated_node_aggregates_to_zero() {
        let g = GraphTensor::new(
            Tensor::from_rows(&[vec![1.0], vec![2.0], vec![7.0]], 1).unwrap(),
            Tensor::from_rows(&[vec![3.0]], 1).unwrap(),
            Tensor::row(vec![0.5]).unwrap(),
            Connectivity::undirected(3, [(0, 1)]),
        )
        .unwrap();
        let p = GraphNetsLayerParams {
            input: Widths::new(1, 1, 1),
            edge_mlp: linear(vec![vec![1.0], vec![1.0], vec![1.0], vec![1.0]], vec![0.0]),
            node_mlp: linear(vec![vec![100.0], vec![1.0], vec![2.0]], vec![0.25]),
            global_mlp: None,
            aggregator: Aggregator::Mean,
        };
        let out = graphnets_layer(&g, &p).unwrap();
        // node_mlp(concat(0, 7, 0.5)) = 7 + 1 + 0.25
        assert_eq!(out.nodes.get(2, 0), 8.25);
        assert_eq!(out.globals, g.globals);
    }

    #[test]
    fn edgeless_graph_runs() {
        let g = GraphTensor::new(Tensor::zeros(2, 3), Tensor::zeros(0, 2), Tensor::zeros(1, 1), Connectivity::undirected(2, [])).unwrap();
        let out = graphnets_layer(&g, &methane_layer()).unwrap();
        assert_eq!(out.edges.rows(), 0);
        assert_eq!(out.globals.cols(), 1);
    }

    #[test]
    fn width_mismatch_is_schema_error() {
        let g = graph(vec![vec![1.0, 2.0]], 2, vec![], vec![0.0], 0);
        assert!(matches!(edge_block(&g, &methane_layer()), Err(Error::Schema(_))));
    }

    #[test]
    fn rejects_non_invariant_aggregator() {
        let mut p = methane_layer();
        p.aggregator = Aggregator::Variance;
        assert!(p.check().is_err());
    }

    fn path3() -> GraphTensor {
        graph(vec![vec![1.0], vec![2.0], vec![3.0]], 1, vec![(0, 1), (1, 2)], vec![], 0)
    }

    #[test]
    fn gcn_path_means() {
        let x = gcn_layer(&path3(), &Tensor::identity(1), Activation::Identity).unwrap();
        assert!((x.get(1, 0) - 2.0).abs() < 1e-15);
        assert!((x.get(0, 0) - 1.5).abs() < 1e-15);
        assert!((x.get(2, 0) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn gcn_isolated_node_unchanged() {
        let g = graph(vec![vec![4.0, -1.0]], 1, vec![], vec![], 0);
        assert_eq!(gcn_layer(&g, &Tensor::identity(2), Activation::Identity).unwrap(), g.nodes);
    }

    #[test]
    fn gcn_regular_graph_preserves_constant() {
        let g = graph(vec![vec![0.7]; 4], 1, vec![(0, 1), (1, 2), (2, 3), (0, 3)], vec![], 0);
        let x = gcn_layer(&g, &Tensor::identity(1), Activation::Identity).unwrap();
        assert!(x.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    fn config(kind: LayerKind, task: TaskLevel, layers: usize, use_globals: bool, act: Activation, agg: Aggregator) -> GnnConfig {
        GnnConfig {
            kind,
            input: Widths::new(2, 2, 1),
            latent: Widths::new(3, 2, 2),
            num_layers: layers,
            hidden: vec![4],
            activation: act,
            aggregator: agg,
            use_globals,
            task,
            head_hidden: vec![3],
            output_width: 2,
        }
    }

    fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> GraphTensor {
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let mut edges = Vec::new();
        for i in 1..n {
            edges.push((rng.gen_range(0..i), i));
        }
        if n > 2 {
            edges.push((0, n - 1));
        }
        edges.dedup();
        let seed = rng.gen();
        graph(x, 2, edges, vec![rng.gen_range(-1.0..1.0)], seed)
    }

    fn target(task: TaskLevel, g: &GraphTensor) -> Tensor {
        let rows = match task {
            TaskLevel::Global => 1,
            TaskLevel::Node => g.num_nodes(),
            TaskLevel::Edge => g.num_edges(),
        };
        Tensor::new(rows, 2, (0..rows * 2).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap()
    }

    fn max_rel_error(model: &GnnModel, g: &GraphTensor, y: &Tensor) -> f64 {
        let (_, grads) = model.loss_and_gradients(g, y).unwrap();
        let analytic = grads.flatten();
        let base = model.flatten();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..base.len() {
            let mut m = model.clone();
            let mut v = base.clone();
            v[i] += h;
            m.load_flat(&v).unwrap();
            let plus = mse_loss(&m.predict(g).unwrap(), y).unwrap();
            v[i] -= 2.0 * h;
            m.load_flat(&v).unwrap();
            let minus = mse_loss(&m.predict(g).unwrap(), y).unwrap();
            let numeric = (plus - minus) / (2.0 * h);
            let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for task in [TaskLevel::Global, TaskLevel::Node, TaskLevel::Edge] {
            for agg in [Aggregator::Sum, Aggregator::Mean, Aggregator::Max] {
                for kind in [LayerKind::GraphNets, LayerKind::Gcn] {
                    let cfg = config(kind, task, 2, true, Activation::Tanh, agg);
                    let model = GnnModel::init(&cfg, rng.gen()).unwrap();
                    let n = rng.gen_range(2..=5);
                    let g = random_graph(&mut rng, n);
                    let err = max_rel_error(&model, &g, &target(task, &g));
                    assert!(err <= 1e-4, "{task:?} {agg:?} {kind:?}: {err}");
                }
            }
        }
    }

    #[test]
    fn flatten_round_trip() {
        let model = GnnModel::init(&config(LayerKind::GraphNets, TaskLevel::Global, 2, true, Activation::Relu, Aggregator::Sum), 5).unwrap();
        let mut other = model.clone();
        let v: Vec<f64> = (0..model.num_params()).map(|i| i as f64).collect();
        other.load_flat(&v).unwrap();
        assert_eq!(other.flatten(), v);
        assert!(other.load_flat(&v[1..]).is_err());
    }

    #[test]
    fn permutation_behaviour() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let global = GnnModel::init(&config(LayerKind::GraphNets, TaskLevel::Global, 2, true, Activation::Relu, Aggregator::Sum), 1).unwrap();
        let node = GnnModel::init(&config(LayerKind::GraphNets, TaskLevel::Node, 2, true, Activation::Relu, Aggregator::Mean), 2).unwrap();
        for _ in 0..20 {
            let g = random_graph(&mut rng, 6);
            let mut p: Vec<usize> = (0..6).collect();
            rand::seq::SliceRandom::shuffle(&mut p[..], &mut rng);
            let h = permute_nodes(&g, &p).unwrap();
            assert!(global.predict(&g).unwrap().approx_eq(&global.predict(&h).unwrap(), 1e-9));
            let a = node.predict(&g).unwrap();
            let b = node.predict(&h).unwrap();
            for i in 0..6 {
                assert_eq!(a.row_slice(i), b.row_slice(p[i]));
            }
        }
    }

    #[test]
    fn locality_two_layers_on_path() {
        let g = path3();
        let cfg = GnnConfig {
            input: Widths::new(1, 1, 0),
            ..config(LayerKind::GraphNets, TaskLevel::Node, 1, false, Activation::Tanh, Aggregator::Sum)
        };
        let mut edited = g.clone();
        edited.nodes.set(2, 0, 100.0).unwrap();
        let one = GnnModel::init(&cfg, 8).unwrap();
        assert_eq!(one.predict(&g).unwrap().row_slice(0), one.predict(&edited).unwrap().row_slice(0));
        let two = GnnModel::init(&GnnConfig { num_layers: 2, ..cfg }, 8).unwrap();
        assert_ne!(two.predict(&g).unwrap().row_slice(0), two.predict(&edited).unwrap().row_slice(0));
    }

    #[test]
    fn readout_row_counts() {
        let g = methane();
        for (task, rows) in [(TaskLevel::Global, 1), (TaskLevel::Node, 5), (TaskLevel::Edge, 4)] {
            let cfg = GnnConfig {
                input: Widths::new(3, 2, 1),
                ..config(LayerKind::GraphNets, task, 1, true, Activation::Relu, Aggregator::Sum)
            };
            assert_eq!(GnnModel::init(&cfg, 0).unwrap().predict(&g).unwrap().rows(), rows);
        }
    }

    fn tiny_dataset() -> Dataset {
        let g = path3();
        Dataset::new(vec![(g, Tensor::row(vec![0.3, -0.2]).unwrap())], TaskLevel::Global).unwrap()
    }

    fn tiny_model() -> GnnModel {
        GnnModel::init(
            &GnnConfig {
                input: Widths::new(1, 1, 0),
                ..config(LayerKind::GraphNets, TaskLevel::Global, 1, true, Activation::Tanh, Aggregator::Sum)
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let model = tiny_model();
        let cfg = TrainConfig { epochs: 5, lr: 0.0, seed: 1, batch_size: None };
        let (trained, history) = train(&model, &tiny_dataset(), &cfg).unwrap();
        assert_eq!(trained, model);
        assert!(history.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn overfits_a_single_graph() {
        let cfg = TrainConfig { epochs: 500, lr: 0.05, seed: 1, batch_size: None };
        let (_, history) = train(&tiny_model(), &tiny_dataset(), &cfg).unwrap();
        assert_eq!(history.len(), 500);
        assert!(history[499] < 1e-3 * history[0], "{} vs {}", history[499], history[0]);
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let items = (0..6)
            .map(|_| {
                let g = random_graph(&mut rng, 4);
                (g, Tensor::row(vec![rng.gen(), rng.gen()]).unwrap())
            })
            .collect();
        let data = Dataset::new(items, TaskLevel::Global).unwrap();
        let model = GnnModel::init(&config(LayerKind::GraphNets, TaskLevel::Global, 2, true, Activation::Relu, Aggregator::Sum), 9).unwrap();
        let cfg = TrainConfig { epochs: 10, lr: 0.01, seed: 5, batch_size: Some(2) };
        let a = train(&model, &data, &cfg).unwrap();
        let b = train(&model, &data, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dataset_rejects_wrong_target_rows() {
        let g = path3();
        assert!(Dataset::new(vec![(g, Tensor::zeros(2, 1))], TaskLevel::Node).is_err());
    }

    #[test]
    fn task_mismatch_is_rejected() {
        let model = tiny_model();
        let data = Dataset::new(vec![(path3(), Tensor::zeros(3, 2))], TaskLevel::Node).unwrap();
        assert!(train(&model, &data, &TrainConfig { epochs: 1, lr: 0.1, seed: 0, batch_size: None }).is_err());
    }

    #[test]
    fn checkpoint_round_trip_and_validation() {
        let model = tiny_model();
        let text = save_checkpoint(&model).unwrap();
        assert_eq!(load_checkpoint(&text).unwrap(), model);
        let mut broken = model.clone();
        broken.readout.head = MlpParams::init(&[7, 2], Activation::Relu, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(load_checkpoint(&save_checkpoint(&broken).unwrap()), Err(Error::Schema(_))));
    }
}
