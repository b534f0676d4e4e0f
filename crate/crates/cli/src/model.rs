//! Training, checkpoints and prediction for every model kind.

use std::path::Path;

use chemgraph::baselines::{gp_fit, linreg_fit, r2_score, GpModel, LinearModel};
use chemgraph::gnn::{self, Dataset, GnnConfig, GnnModel, LayerKind, TaskLevel};
use chemgraph::io::{BuildOptions, Builder};
use chemgraph::nn::{mse_loss, train_mlp, MlpParams, Parameters, TrainConfig};
use chemgraph::{concat_rows, Error, GraphTensor, Result, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ModelKind, RunConfig, Sample};

pub const CHECKPOINT_FORMAT: &str = "chemgraph-model";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Fitted parameters. Feature baselines read `U`, `X` or `E` rows depending
/// on the task level; GNNs read the whole graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "lowercase")]
pub enum TrainedModel {
    Linreg(LinearModel),
    Gp(GpModel),
    Mlp(MlpParams),
    Gnn(GnnModel),
}

/// A trained model plus what is needed to turn graph files into inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub task: TaskLevel,
    pub builder: Builder,
    pub build_options: BuildOptions,
    pub target_column: Option<String>,
    pub model: TrainedModel,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text).map_err(|e| crate::config::json_error(e, Error::Schema))?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported checkpoint {} v{} (expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION})",
                c.format, c.version
            )));
        }
        match &c.model {
            TrainedModel::Gnn(m) => {
                m.check()?;
                if m.task() != c.task {
                    return Err(Error::Schema(format!("model task {:?} differs from checkpoint task {:?}", m.task(), c.task)));
                }
            }
            TrainedModel::Mlp(m) => m.check().map_err(|e| Error::Schema(e.to_string()))?,
            TrainedModel::Linreg(_) | TrainedModel::Gp(_) => {}
        }
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Checkpoint::parse(&text)
    }

    /// Feature width the model expects, for baselines.
    fn feature_width(&self) -> Option<usize> {
        match &self.model {
            TrainedModel::Linreg(m) => Some(m.width()),
            TrainedModel::Gp(m) => Some(m.inputs.cols()),
            TrainedModel::Mlp(m) => Some(m.input_width()),
            TrainedModel::Gnn(_) => None,
        }
    }

    /// Predictions for one graph: one row for global tasks, one per node or
    /// edge otherwise.
    pub fn predict(&self, g: &GraphTensor) -> Result<Tensor> {
        if let TrainedModel::Gnn(m) = &self.model {
            return m.predict(g);
        }
        let x = features(g, self.task);
        let want = self.feature_width().unwrap_or(0);
        if x.cols() != want {
            return Err(Error::Schema(format!(
                "model expects {want} {:?}-level feature columns, graph has {}",
                self.task,
                x.cols()
            )));
        }
        match &self.model {
            TrainedModel::Linreg(m) => m.predict(&x),
            TrainedModel::Gp(m) => m.predict_mean(&x),
            TrainedModel::Mlp(m) => m.forward(&x),
            TrainedModel::Gnn(_) => unreachable!(),
        }
    }
}

/// The feature rows a baseline sees for a given task level.
pub fn features(g: &GraphTensor, task: TaskLevel) -> Tensor {
    match task {
        TaskLevel::Global => g.globals.clone(),
        TaskLevel::Node => g.nodes.clone(),
        TaskLevel::Edge => g.edges.clone(),
    }
}

fn stack(parts: Vec<Tensor>) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    concat_rows(&parts.iter().collect::<Vec<_>>())
}

/// Final scores over all prediction rows of a split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub mse: f64,
    /// `None` when the targets are constant.
    pub r2: Option<f64>,
}

pub fn score(ckpt: &Checkpoint, samples: &[Sample]) -> Result<Scores> {
    let preds = samples.iter().map(|s| ckpt.predict(&s.graph)).collect::<Result<Vec<_>>>()?;
    let pred = stack(preds)?;
    let y = stack(samples.iter().map(|s| s.target.clone()).collect())?;
    if pred.rows() != y.rows() || pred.cols() != y.cols() {
        return Err(Error::Schema(format!(
            "predictions are {}x{} but targets are {}x{}",
            pred.rows(),
            pred.cols(),
            y.rows(),
            y.cols()
        )));
    }
    Ok(Scores {
        mse: mse_loss(&pred, &y)?,
        r2: match r2_score(&pred, &y) {
            Ok(r) => Some(r),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        },
    })
}

/// Fits the configured model. Returns the checkpoint and the per-epoch
/// training loss (empty for closed-form models).
pub fn fit(cfg: &RunConfig, train: &[Sample]) -> Result<(Checkpoint, Vec<f64>)> {
    let tc = TrainConfig {
        epochs: cfg.epochs.unwrap_or(0),
        lr: cfg.lr.unwrap_or(0.0),
        seed: cfg.seed,
        batch_size: cfg.batch_size,
    };
    let (model, history) = if cfg.model.is_gnn() {
        let first = &train.first().ok_or_else(|| Error::Config("empty training set".into()))?;
        let gcfg = GnnConfig {
            kind: if cfg.model == ModelKind::Gcn { LayerKind::Gcn } else { LayerKind::GraphNets },
            input: gnn::Widths::of(&first.graph),
            latent: cfg.latent,
            num_layers: cfg.num_layers,
            hidden: cfg.hidden.clone(),
            activation: cfg.activation,
            aggregator: cfg.aggregator,
            use_globals: cfg.use_globals,
            task: cfg.task,
            head_hidden: cfg.head_hidden.clone(),
            output_width: first.target.cols(),
        };
        let init = GnnModel::init(&gcfg, cfg.seed)?;
        let data = Dataset::new(train.iter().map(|s| (s.graph.clone(), s.target.clone())).collect(), cfg.task)?;
        let (m, h) = gnn::train(&init, &data, &tc)?;
        (TrainedModel::Gnn(m), h)
    } else {
        let x = stack(train.iter().map(|s| features(&s.graph, cfg.task)).collect())?;
        let y = stack(train.iter().map(|s| s.target.clone()).collect())?;
        if x.rows() != y.rows() {
            return Err(Error::Schema(format!("{} feature rows but {} target rows", x.rows(), y.rows())));
        }
        if x.cols() == 0 {
            return Err(Error::Schema(format!("graphs have no {:?}-level feature columns", cfg.task)));
        }
        match cfg.model {
            ModelKind::Linreg => (TrainedModel::Linreg(linreg_fit(&x, &y)?), vec![]),
            ModelKind::Gp => {
                if y.cols() != 1 {
                    return Err(Error::Config("the GP baseline predicts a single target column".into()));
                }
                (TrainedModel::Gp(gp_fit(&x, &y, cfg.kernel)?), vec![])
            }
            ModelKind::Mlp => {
                let mut sizes = vec![x.cols()];
                sizes.extend_from_slice(&cfg.hidden);
                sizes.push(y.cols());
                let init = MlpParams::init(&sizes, cfg.activation, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
                let (m, h) = train_mlp(&init, &x, &y, &tc)?;
                (TrainedModel::Mlp(m), h)
            }
            ModelKind::Gcn | ModelKind::Graphnets => unreachable!(),
        }
    };
    let ckpt = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        task: cfg.task,
        builder: cfg.builder,
        build_options: cfg.build_options,
        target_column: cfg.target_column.clone(),
        model,
    };
    Ok((ckpt, history))
}

/// Number of trainable scalars, for the run summary.
pub fn parameter_count(m: &TrainedModel) -> usize {
    match m {
        TrainedModel::Linreg(l) => l.width() + 1,
        TrainedModel::Gp(g) => g.inputs.rows() * (g.inputs.cols() + 1),
        TrainedModel::Mlp(p) => p.num_params(),
        TrainedModel::Gnn(p) => p.num_params(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chemgraph::Connectivity;

    fn graph(u: f64) -> GraphTensor {
        GraphTensor::new(
            Tensor::zeros(2, 1),
            Tensor::zeros(1, 1),
            Tensor::row(vec![u, u * u]).unwrap(),
            Connectivity::undirected(2, [(0, 1)]),
        )
        .unwrap()
    }

    fn linreg_checkpoint() -> Checkpoint {
        let cfg = RunConfig::parse(r#"{"model": "linreg", "seed": 0, "builder": "schema", "train": "t.csv"}"#).unwrap();
        let samples: Vec<Sample> = (0..5)
            .map(|i| Sample {
                path: format!("g{i}"),
                graph: graph(i as f64),
                target: Tensor::scalar(3.0 * i as f64 + 1.0).unwrap(),
            })
            .collect();
        fit(&cfg, &samples).unwrap().0
    }

    #[test]
    fn checkpoint_round_trips_exactly() {
        let c = linreg_checkpoint();
        assert_eq!(Checkpoint::parse(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn version_mismatch_is_a_schema_error() {
        let mut c = linreg_checkpoint();
        c.version = 2;
        assert!(matches!(Checkpoint::parse(&c.to_json()), Err(Error::Schema(_))));
    }

    #[test]
    fn baseline_prediction_checks_feature_width() {
        let c = linreg_checkpoint();
        let p = c.predict(&graph(10.0)).unwrap().get(0, 0);
        assert!((p - 31.0).abs() < 1e-9, "{p}");
        let mut wide = graph(1.0);
        wide.globals = Tensor::row(vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(c.predict(&wide), Err(Error::Schema(_))));
    }
}
