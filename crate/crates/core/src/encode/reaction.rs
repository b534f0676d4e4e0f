use serde::{Deserialize, Serialize};

use super::{Attrs, GraphSchema};
use crate::error::{Error, Result};
use crate::graph::{Connectivity, GraphTensor};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Species {
    pub name: String,
    #[serde(flatten)]
    pub attrs: Attrs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reaction {
    pub from: usize,
    pub to: usize,
    #[serde(default)]
    pub reversible: bool,
    #[serde(flatten)]
    pub attrs: Attrs,
}

/// Species and reactions plus the schema that encodes their attributes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReactionNetwork {
    pub species: Vec<Species>,
    pub reactions: Vec<Reaction>,
    #[serde(default)]
    pub globals: Attrs,
    pub schema: GraphSchema,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ReactionOptions {
    /// Directed graph in which every reversible reaction contributes a
    /// forward and a reverse edge. Otherwise each reaction is one undirected
    /// edge.
    pub reversible_as_two_edges: bool,
}

/// Reaction graph with species as nodes. In two-edge mode the reverse edge
/// directly follows its forward edge and antisymmetric continuous columns
/// (free energies) change sign on it.
pub fn build_reaction_graph(net: &ReactionNetwork, opts: ReactionOptions) -> Result<GraphTensor> {
    let n = net.species.len();
    net.schema.check()?;
    for (k, r) in net.reactions.iter().enumerate() {
        if r.from >= n || r.to >= n {
            return Err(Error::Invalid(vec![format!(
                "reaction {k} ({} -> {}) has a missing endpoint; network has {n} species",
                r.from, r.to
            )]));
        }
    }
    let mut edges = Vec::new();
    let mut rows = Vec::new();
    for r in &net.reactions {
        if opts.reversible_as_two_edges {
            edges.push((r.from, r.to));
            rows.push(net.schema.edge.encode_record(&r.attrs, false)?);
            if r.reversible {
                edges.push((r.to, r.from));
                rows.push(net.schema.edge.encode_record(&r.attrs, true)?);
            }
        } else {
            edges.push((r.from.min(r.to), r.from.max(r.to)));
            rows.push(net.schema.edge.encode_record(&r.attrs, false)?);
        }
    }
    GraphTensor {
        nodes: net.schema.node.encode_rows(net.species.iter().map(|s| &s.attrs))?,
        edges: Tensor::from_rows(&rows, net.schema.edge.width())?,
        globals: net.schema.global.encode_rows([&net.globals])?,
        connectivity: Connectivity::new(n, edges, opts.reversible_as_two_edges),
        aux: Vec::new(),
        node_columns: net.schema.node.feature_names(),
        edge_columns: net.schema.edge.feature_names(),
        global_columns: net.schema.global.feature_names(),
        node_labels: Some(net.species.iter().map(|s| s.name.clone()).collect()),
    }
    .checked()
}
