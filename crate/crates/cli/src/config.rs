//! Run configuration for `train` and the `graph_path,target` dataset format.

use std::path::{Path, PathBuf};

use chemgraph::baselines::RbfKernel;
use chemgraph::gnn::{TaskLevel, Widths};
use chemgraph::io::{build_graph, BuildOptions, Builder, GraphFile};
use chemgraph::nn::Activation;
use chemgraph::{hstack, Aggregator, Error, GraphTensor, Result, Tensor};
use serde::{Deserialize, Serialize};

/// Environment variable that replaces the configured seed.
pub const SEED_ENV: &str = "CHEMGRAPH_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linreg,
    Gp,
    Mlp,
    Gcn,
    Graphnets,
}

impl ModelKind {
    /// Models trained by gradient descent need `epochs` and `lr`.
    pub fn is_iterative(self) -> bool {
        matches!(self, ModelKind::Mlp | ModelKind::Gcn | ModelKind::Graphnets)
    }

    pub fn is_gnn(self) -> bool {
        matches!(self, ModelKind::Gcn | ModelKind::Graphnets)
    }
}

fn default_builder() -> Builder {
    Builder::Schema
}

fn default_task() -> TaskLevel {
    TaskLevel::Global
}
fn default_latent() -> Widths {
    Widths::new(8, 8, 8)
}
fn default_layers() -> usize {
    1
}
fn default_activation() -> Activation {
    Activation::Relu
}
fn default_aggregator() -> Aggregator {
    Aggregator::Sum
}
fn default_true() -> bool {
    true
}
fn default_kernel() -> RbfKernel {
    RbfKernel {
        lengthscale: 1.0,
        signal_variance: 1.0,
        noise_variance: 0.1,
    }
}

/// Everything `train` needs. Relative dataset paths resolve against the
/// directory holding the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    #[serde(default = "default_task")]
    pub task: TaskLevel,
    pub seed: u64,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    /// Per-layer output widths (GNN models).
    #[serde(default = "default_latent")]
    pub latent: Widths,
    #[serde(default = "default_layers")]
    pub num_layers: usize,
    /// Hidden widths inside each GraphNets block MLP, or of the plain MLP.
    #[serde(default)]
    pub hidden: Vec<usize>,
    /// Hidden widths of the GNN readout head.
    #[serde(default)]
    pub head_hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_aggregator")]
    pub aggregator: Aggregator,
    #[serde(default = "default_true")]
    pub use_globals: bool,
    #[serde(default = "default_kernel")]
    pub kernel: RbfKernel,
    #[serde(default = "default_builder")]
    pub builder: Builder,
    #[serde(default)]
    pub build_options: BuildOptions,
    pub train: PathBuf,
    #[serde(default)]
    pub test: Option<PathBuf>,
    /// Node or edge column used as the target of node/edge tasks; it is
    /// removed from the inputs.
    #[serde(default)]
    pub target_column: Option<String>,
}

impl RunConfig {
    /// Malformed JSON is a parse error; well-formed JSON with missing or
    /// mistyped fields is a config error.
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| json_error(e, Error::Config))
    }

    /// Reads, resolves relative paths, applies [`SEED_ENV`] and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = RunConfig::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.train = base.join(&cfg.train);
        cfg.test = cfg.test.map(|t| base.join(t));
        if let Some(seed) = env_seed()? {
            cfg.seed = seed;
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.model.is_iterative() {
            match self.epochs {
                Some(e) if e > 0 => {}
                _ => return bad(format!("{:?} needs a positive `epochs`", self.model)),
            }
            match self.lr {
                Some(lr) if lr > 0.0 && lr.is_finite() => {}
                _ => return bad(format!("{:?} needs a positive `lr`", self.model)),
            }
        }
        if self.batch_size == Some(0) {
            return bad("`batch_size` must be positive".into());
        }
        if self.model.is_gnn() {
            let l = self.latent;
            if l.node == 0 || (self.model == ModelKind::Graphnets && (l.edge == 0 || (self.use_globals && l.global == 0))) {
                return bad(format!("latent widths {l} must be positive"));
            }
        }
        if self.hidden.iter().chain(&self.head_hidden).any(|&w| w == 0) {
            return bad("hidden widths must be positive".into());
        }
        RbfKernel::new(self.kernel.lengthscale, self.kernel.signal_variance, self.kernel.noise_variance)
            .map_err(|e| Error::Config(e.to_string()))?;
        match (self.task, &self.target_column) {
            (TaskLevel::Global, Some(_)) => bad("`target_column` applies to node and edge tasks only".into()),
            (TaskLevel::Node | TaskLevel::Edge, None) => bad("node and edge tasks need `target_column`".into()),
            _ => Ok(()),
        }
    }
}

pub(crate) fn json_error(e: serde_json::Error, data: fn(String) -> Error) -> Error {
    if e.is_data() {
        data(e.to_string())
    } else {
        e.into()
    }
}

/// The seed from [`SEED_ENV`], if set.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// One CSV row: a graph file and its optional scalar target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub graph_path: String,
    pub target: Option<f64>,
}

/// Reads a `graph_path,target` CSV. Graph paths are returned as written.
pub fn read_dataset_csv(path: &Path) -> Result<Vec<DatasetRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["graph_path", "target"] {
        return Err(Error::Parse {
            msg: format!("{}: header must be `graph_path,target`", path.display()),
            line: 1,
            column: 1,
        });
    }
    reader
        .deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::Io(format!("{}: {e}", path.display())),
        _ => Error::Parse {
            msg: format!("{}: {e}", path.display()),
            line,
            column: 0,
        },
    }
}

/// Reads and builds one graph file.
pub fn load_graph(path: &Path, builder: Builder, opts: BuildOptions) -> Result<GraphTensor> {
    let file = GraphFile::read(path).map_err(|e| match e {
        Error::Io(m) => Error::Io(format!("{}: {m}", path.display())),
        other => other,
    })?;
    build_graph(&file, builder, opts)
}

/// Splits the named node (or edge) column off as the target.
pub fn split_target_column(g: &mut GraphTensor, task: TaskLevel, column: &str) -> Result<Tensor> {
    let (features, names) = match task {
        TaskLevel::Node => (&mut g.nodes, &mut g.node_columns),
        TaskLevel::Edge => (&mut g.edges, &mut g.edge_columns),
        TaskLevel::Global => return Err(Error::Config("global tasks take targets from the dataset CSV".into())),
    };
    let j = names
        .iter()
        .position(|n| n == column)
        .ok_or_else(|| Error::UnknownColumn(column.to_string()))?;
    let target = features.slice_cols(j, j + 1);
    let rest = hstack(&[&features.slice_cols(0, j), &features.slice_cols(j + 1, features.cols())])?;
    *features = rest;
    names.remove(j);
    Ok(target)
}

/// A labelled graph from a dataset CSV.
#[derive(Clone, Debug)]
pub struct Sample {
    pub path: String,
    pub graph: GraphTensor,
    pub target: Tensor,
}

/// Loads every row of a dataset CSV into graphs with targets. Graph paths
/// resolve against the CSV's directory.
pub fn load_samples(csv_path: &Path, cfg: &RunConfig) -> Result<Vec<Sample>> {
    let base = csv_path.parent().unwrap_or(Path::new(""));
    let rows = read_dataset_csv(csv_path)?;
    if rows.is_empty() {
        return Err(Error::Config(format!("{}: dataset has no rows", csv_path.display())));
    }
    rows.into_iter()
        .enumerate()
        .map(|(i, row)| {
            let path = base.join(&row.graph_path);
            let mut graph = load_graph(&path, cfg.builder, cfg.build_options)?;
            let target = match (&cfg.target_column, row.target) {
                (Some(col), _) => split_target_column(&mut graph, cfg.task, col)?,
                (None, Some(t)) => Tensor::row(vec![t])?,
                (None, None) => {
                    return Err(Error::Invalid(vec![format!(
                        "{}: row {} has no target",
                        csv_path.display(),
                        i + 2
                    )]))
                }
            };
            Ok(Sample {
                path: row.graph_path,
                graph,
                target,
            })
        })
        .collect()
}
