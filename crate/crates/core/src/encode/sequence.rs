use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::one_hot;
use crate::error::{Error, Result};
use crate::graph::{Connectivity, GraphTensor};
use crate::tensor::Tensor;

/// One snapshot: the node identities it is defined over and its typed edges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub time: Option<f64>,
    pub node_ids: Vec<String>,
    /// `(src, dst, kind)`, undirected.
    pub edges: Vec<(usize, usize, String)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphSequence {
    pub frames: Vec<GraphTensor>,
    pub labels: Vec<Option<String>>,
    pub timestamps: Option<Vec<f64>>,
}

impl GraphSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Graphs over a fixed node set whose edges change frame to frame. Every
/// frame shares the node tensor; edges are one-hot encoded over the union of
/// edge kinds seen in the sequence.
pub fn build_graph_sequence(
    node_ids: &[String],
    nodes: &Tensor,
    node_columns: &[String],
    frames: &[Frame],
) -> Result<GraphSequence> {
    let n = node_ids.len();
    if nodes.rows() != n {
        return Err(Error::Invalid(vec![format!("{} node rows for {n} node ids", nodes.rows())]));
    }
    for (i, f) in frames.iter().enumerate() {
        if f.node_ids != node_ids {
            return Err(Error::Invalid(vec![format!(
                "frame {i} is defined over a different node set than the sequence"
            )]));
        }
    }
    let kinds: Vec<String> = frames
        .iter()
        .flat_map(|f| f.edges.iter().map(|e| e.2.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut out = Vec::with_capacity(frames.len());
    for f in frames {
        let rows = f
            .edges
            .iter()
            .map(|(_, _, k)| Ok(one_hot(k, &kinds)?.into_data()))
            .collect::<Result<Vec<_>>>()?;
        out.push(
            GraphTensor {
                nodes: nodes.clone(),
                edges: Tensor::from_rows(&rows, kinds.len())?,
                globals: Tensor::zeros(1, 0),
                connectivity: Connectivity::undirected(n, f.edges.iter().map(|&(a, b, _)| (a, b))),
                aux: Vec::new(),
                node_columns: node_columns.to_vec(),
                edge_columns: kinds.iter().map(|k| format!("bond_type={k}")).collect(),
                global_columns: Vec::new(),
                node_labels: Some(node_ids.to_vec()),
            }
            .checked()?,
        );
    }
    let timestamps = frames.iter().map(|f| f.time).collect::<Option<Vec<_>>>();
    Ok(GraphSequence {
        frames: out,
        labels: frames.iter().map(|f| f.label.clone()).collect(),
        timestamps,
    })
}
