use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Attrs, Column, FeatureSchema};
use crate::error::{Error, Result};
use crate::graph::{Connectivity, GraphTensor};

/// A unit operation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub name: String,
    /// h
    pub time: f64,
    pub cost: f64,
    /// kWh
    pub energy: f64,
}

/// Material flow between two units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stream {
    pub from: usize,
    pub to: usize,
    /// kg
    pub mass: f64,
    /// L
    pub volume: f64,
}

/// Directed flowsheet graph: `X = [time, cost, energy]` per unit,
/// `E = [mass, volume]` per stream, `U = [total_time, total_cost,
/// total_energy]` summed over units.
pub fn build_process_graph(units: &[Unit], streams: &[Stream]) -> Result<GraphTensor> {
    let n = units.len();
    for (k, s) in streams.iter().enumerate() {
        if s.from >= n || s.to >= n {
            return Err(Error::Invalid(vec![format!(
                "stream {k} ({} -> {}) has a missing endpoint; process has {n} units",
                s.from, s.to
            )]));
        }
    }
    let node_schema = FeatureSchema::new(vec![
        Column::continuous("time", Some("h")),
        Column::continuous("cost", Some("USD")),
        Column::continuous("energy", Some("kWh")),
    ])?;
    let edge_schema = FeatureSchema::new(vec![
        Column::continuous("mass", Some("kg")),
        Column::continuous("volume", Some("L")),
    ])?;
    let global_schema = FeatureSchema::new(vec![
        Column::continuous("total_time", Some("h")),
        Column::continuous("total_cost", Some("USD")),
        Column::continuous("total_energy", Some("kWh")),
    ])?;
    let nodes: Vec<Attrs> = units
        .iter()
        .map(|u| [("time".into(), json!(u.time)), ("cost".into(), json!(u.cost)), ("energy".into(), json!(u.energy))].into())
        .collect();
    let edges: Vec<Attrs> = streams
        .iter()
        .map(|s| [("mass".into(), json!(s.mass)), ("volume".into(), json!(s.volume))].into())
        .collect();
    let global: Attrs = [
        ("total_time".into(), json!(units.iter().map(|u| u.time).sum::<f64>())),
        ("total_cost".into(), json!(units.iter().map(|u| u.cost).sum::<f64>())),
        ("total_energy".into(), json!(units.iter().map(|u| u.energy).sum::<f64>())),
    ]
    .into();
    GraphTensor {
        nodes: node_schema.encode_rows(&nodes)?,
        edges: edge_schema.encode_rows(&edges)?,
        globals: global_schema.encode_rows([&global])?,
        connectivity: Connectivity::new(n, streams.iter().map(|s| (s.from, s.to)).collect(), true),
        aux: Vec::new(),
        node_columns: node_schema.feature_names(),
        edge_columns: edge_schema.feature_names(),
        global_columns: global_schema.feature_names(),
        node_labels: Some(units.iter().map(|u| u.name.clone()).collect()),
    }
    .checked()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Shape;

    #[test]
    fn single_unit_no_streams() {
        let g = build_process_graph(&[Unit { name: "still".into(), time: 2.0, cost: 5.0, energy: 9.0 }], &[]).unwrap();
        assert_eq!(g.nodes.shape(), Shape::new(1, 3));
        assert_eq!(g.edges.shape(), Shape::new(0, 2));
        assert_eq!(g.globals.data(), &[2.0, 5.0, 9.0]);
    }

    #[test]
    fn dangling_stream() {
        let u = Unit { name: "a".into(), time: 1.0, cost: 1.0, energy: 1.0 };
        let s = Stream { from: 0, to: 1, mass: 1.0, volume: 1.0 };
        assert!(build_process_graph(&[u], &[s]).is_err());
    }
}
