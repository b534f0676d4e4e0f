use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{derive_vocab, Attrs, Column, FeatureSchema};
use crate::error::{Error, Result};
use crate::graph::{distance_matrix, Connectivity, GraphTensor};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residue {
    /// Residue type code, e.g. `ASN`.
    pub code: String,
    /// g/mol
    pub molar_mass: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidueBond {
    pub a: usize,
    pub b: usize,
    /// Å
    pub distance: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Protein {
    pub residues: Vec<Residue>,
    pub covalent_bonds: Vec<ResidueBond>,
    #[serde(default)]
    pub hydrogen_bonds: Vec<ResidueBond>,
    /// One `[x, y, z]` (Å) per residue, usually the alpha carbon.
    #[serde(default)]
    pub coords: Option<Vec<[f64; 3]>>,
}

/// Residue graph: nodes carry molar mass plus one-hot residue type over the
/// protein's own residue set. Edges carry the bond distance; when hydrogen
/// bonds are present they follow the covalent bonds and every edge also gets
/// a one-hot `{covalent, hydrogen}` type. Coordinates, if given, produce the
/// pairwise `distance` matrix as an aux adjacency.
pub fn build_protein_graph(p: &Protein) -> Result<GraphTensor> {
    let n = p.residues.len();
    let mut seen = BTreeSet::new();
    let bonds: Vec<(ResidueBond, &str)> = p
        .covalent_bonds
        .iter()
        .map(|b| (*b, "covalent"))
        .chain(p.hydrogen_bonds.iter().map(|b| (*b, "hydrogen")))
        .collect();
    for (b, kind) in &bonds {
        if b.a >= n || b.b >= n || b.a == b.b {
            return Err(Error::Invalid(vec![format!("{kind} bond ({},{}) is not between two residues of {n}", b.a, b.b)]));
        }
        if !(b.distance.is_finite() && b.distance > 0.0) {
            return Err(Error::Invalid(vec![format!(
                "{kind} bond ({},{}) has non-positive distance {}",
                b.a, b.b, b.distance
            )]));
        }
        if !seen.insert((b.a.min(b.b), b.a.max(b.b))) {
            return Err(Error::Invalid(vec![format!("duplicate bond ({},{})", b.a, b.b)]));
        }
    }

    let codes = derive_vocab(&p.residues.iter().map(|r| json!(r.code)).collect::<Vec<_>>());
    let node_schema = FeatureSchema::new(vec![
        Column::continuous("molar_mass", Some("g/mol")),
        Column::categorical("residue", codes),
    ])?;
    let mut edge_cols = vec![Column::continuous("distance", Some("Å"))];
    if !p.hydrogen_bonds.is_empty() {
        edge_cols.push(Column::categorical("bond_type", ["covalent", "hydrogen"]));
    }
    let edge_schema = FeatureSchema::new(edge_cols)?;
    let global_schema = FeatureSchema::new(vec![
        Column::continuous("total_molar_mass", Some("g/mol")),
        Column::continuous("residue_count", None),
    ])?;

    let node_records: Vec<Attrs> = p
        .residues
        .iter()
        .map(|r| [("molar_mass".to_string(), json!(r.molar_mass)), ("residue".to_string(), json!(r.code))].into())
        .collect();
    let edge_records: Vec<Attrs> = bonds
        .iter()
        .map(|(b, kind)| [("distance".to_string(), json!(b.distance)), ("bond_type".to_string(), json!(kind))].into())
        .collect();
    let total: f64 = p.residues.iter().map(|r| r.molar_mass).sum();
    let global: Attrs = [
        ("total_molar_mass".to_string(), json!(total)),
        ("residue_count".to_string(), json!(n)),
    ]
    .into();

    let mut aux = Vec::new();
    if let Some(coords) = &p.coords {
        if coords.len() != n {
            return Err(Error::Invalid(vec![format!("{} coordinates for {n} residues", coords.len())]));
        }
        let pos = Tensor::from_rows(&coords.iter().map(|c| c.to_vec()).collect::<Vec<_>>(), 3)?;
        aux.push(("distance".to_string(), distance_matrix(&pos)?));
    }

    GraphTensor {
        nodes: node_schema.encode_rows(&node_records)?,
        edges: edge_schema.encode_rows(&edge_records)?,
        globals: global_schema.encode_rows([&global])?,
        connectivity: Connectivity::undirected(n, bonds.iter().map(|(b, _)| (b.a, b.b))),
        aux,
        node_columns: node_schema.feature_names(),
        edge_columns: edge_schema.feature_names(),
        global_columns: global_schema.feature_names(),
        node_labels: Some(p.residues.iter().map(|r| r.code.clone()).collect()),
    }
    .checked()
}
