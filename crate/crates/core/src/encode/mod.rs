//! Feature schemas and graph builders.
//!
//! A [`FeatureSchema`] turns a record of raw attributes into one tensor row:
//! categorical columns become one-hot blocks, continuous columns pass through,
//! binary columns become 0/1. The builders in the submodules assemble those
//! rows into [`GraphTensor`](crate::GraphTensor)s for molecules, proteins,
//! reaction networks, process flowsheets and time sequences.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

mod molecule;
mod process;
mod protein;
mod reaction;
mod sequence;

pub use molecule::{add_explicit_hydrogens, build_molecule_graph, Atom, Bond, BondOrder, Molecule, MoleculeOptions};
pub use process::{build_process_graph, Stream, Unit};
pub use protein::{build_protein_graph, Protein, Residue, ResidueBond};
pub use reaction::{build_reaction_graph, Reaction, ReactionNetwork, ReactionOptions, Species};
pub use sequence::{build_graph_sequence, Frame, GraphSequence};

/// Raw attributes of a node, edge or graph, keyed by name.
pub type Attrs = BTreeMap<String, Value>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnKind {
    Categorical {
        vocab: Vec<String>,
    },
    Continuous {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        unit: Option<String>,
        /// Value changes sign when a directed edge is reversed (e.g. a
        /// reaction free energy).
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        antisymmetric: bool,
    },
    Binary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

impl Column {
    pub fn categorical(name: &str, vocab: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Categorical {
                vocab: vocab.into_iter().map(Into::into).collect(),
            },
        }
    }

    pub fn continuous(name: &str, unit: Option<&str>) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Continuous {
                unit: unit.map(Into::into),
                antisymmetric: false,
            },
        }
    }

    pub fn binary(name: &str) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Binary,
        }
    }

    pub fn width(&self) -> usize {
        match &self.kind {
            ColumnKind::Categorical { vocab } => vocab.len(),
            _ => 1,
        }
    }

    fn feature_names(&self) -> Vec<String> {
        match &self.kind {
            ColumnKind::Categorical { vocab } => vocab.iter().map(|v| format!("{}={v}", self.name)).collect(),
            _ => vec![self.name.clone()],
        }
    }
}

/// Ordered list of columns. The encoded width is the sum of column widths.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureSchema {
    pub columns: Vec<Column>,
}

impl FeatureSchema {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        let s = FeatureSchema { columns };
        s.check()?;
        Ok(s)
    }

    pub fn empty() -> Self {
        FeatureSchema::default()
    }

    pub fn check(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for c in &self.columns {
            if !names.insert(&c.name) {
                return Err(Error::Schema(format!("duplicate column `{}`", c.name)));
            }
            if let ColumnKind::Categorical { vocab } = &c.kind {
                let uniq: BTreeSet<_> = vocab.iter().collect();
                if uniq.len() != vocab.len() {
                    return Err(Error::Schema(format!("column `{}` has duplicate vocabulary entries", c.name)));
                }
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.columns.iter().map(Column::width).sum()
    }

    /// One label per encoded feature, e.g. `element=C`, `mass`.
    pub fn feature_names(&self) -> Vec<String> {
        self.columns.iter().flat_map(Column::feature_names).collect()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// Encodes one record. `reversed` flips antisymmetric continuous columns.
    pub fn encode_record(&self, record: &Attrs, reversed: bool) -> Result<Vec<f64>> {
        let mut row = Vec::with_capacity(self.width());
        for c in &self.columns {
            let value = record
                .get(&c.name)
                .ok_or_else(|| Error::Schema(format!("record is missing attribute `{}`", c.name)))?;
            match &c.kind {
                ColumnKind::Categorical { vocab } => {
                    row.extend_from_slice(one_hot_named(&c.name, &category(value), vocab)?.data());
                }
                ColumnKind::Continuous { antisymmetric, .. } => {
                    let v = value
                        .as_f64()
                        .ok_or_else(|| Error::Schema(format!("attribute `{}` = {value} is not a number", c.name)))?;
                    row.push(if reversed && *antisymmetric { -v } else { v });
                }
                ColumnKind::Binary => row.push(if binary(value).map_err(|m| Error::Schema(format!("attribute `{}`: {m}", c.name)))? {
                    1.0
                } else {
                    0.0
                }),
            }
        }
        Ok(row)
    }

    /// Encodes records into an `n x width` tensor.
    pub fn encode_rows<'a>(&self, records: impl IntoIterator<Item = &'a Attrs>) -> Result<Tensor> {
        let rows = records
            .into_iter()
            .map(|r| self.encode_record(r, false))
            .collect::<Result<Vec<_>>>()?;
        Tensor::from_rows(&rows, self.width())
    }
}

/// Node, edge and global schemas of one graph.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphSchema {
    #[serde(default)]
    pub node: FeatureSchema,
    #[serde(default)]
    pub edge: FeatureSchema,
    #[serde(default)]
    pub global: FeatureSchema,
}

impl GraphSchema {
    pub fn check(&self) -> Result<()> {
        self.node.check()?;
        self.edge.check()?;
        self.global.check()
    }
}

/// String form used to look a value up in a categorical vocabulary.
pub fn category(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn binary(value: &Value) -> std::result::Result<bool, String> {
    match value {
        Value::Bool(b) => Ok(*b),
        Value::Number(n) if n.as_f64() == Some(0.0) => Ok(false),
        Value::Number(n) if n.as_f64() == Some(1.0) => Ok(true),
        other => Err(format!("{other} is not a boolean")),
    }
}

/// Binary vector with a single 1 at the position of `value` in `vocab`.
pub fn one_hot(value: &str, vocab: &[String]) -> Result<Tensor> {
    one_hot_named("", value, vocab)
}

fn one_hot_named(column: &str, value: &str, vocab: &[String]) -> Result<Tensor> {
    let idx = vocab.iter().position(|v| v == value).ok_or_else(|| Error::Encoding {
        column: column.to_string(),
        value: value.to_string(),
        vocab: vocab.to_vec(),
    })?;
    let mut data = vec![0.0; vocab.len()];
    data[idx] = 1.0;
    Tensor::row(data)
}

/// Sorted, de-duplicated vocabulary of the observed values.
pub fn derive_vocab<'a>(values: impl IntoIterator<Item = &'a Value>) -> Vec<String> {
    values.into_iter().map(category).collect::<BTreeSet<_>>().into_iter().collect()
}

fn element_table() -> &'static BTreeMap<String, f64> {
    static TABLE: OnceLock<BTreeMap<String, f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        serde_json::from_str(include_str!("../../data/elements.json")).expect("bundled element table parses")
    })
}

/// Standard atomic mass (g/mol) from the bundled element table.
pub fn element_mass(symbol: &str) -> Option<f64> {
    element_table().get(symbol).copied()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn vocab(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn one_hot_examples() {
        let cop = vocab(&["C", "O", "P"]);
        assert_eq!(one_hot("C", &cop).unwrap().data(), &[1.0, 0.0, 0.0]);
        assert_eq!(one_hot("P", &cop).unwrap().data(), &[0.0, 0.0, 1.0]);
        assert_eq!(one_hot("X", &vocab(&["X"])).unwrap().data(), &[1.0]);
    }

    #[test]
    fn unknown_category_names_value_and_vocab() {
        let err = one_hot("N", &vocab(&["C", "O", "P"])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("`N`") && msg.contains("\"P\""), "{msg}");
    }

    #[test]
    fn schema_encodes_mixed_columns() {
        let schema = FeatureSchema::new(vec![
            Column::categorical("element", ["C", "O"]),
            Column::continuous("mass", Some("u")),
            Column::binary("aromatic"),
        ])
        .unwrap();
        let rec: Attrs = [
            ("element".to_string(), json!("O")),
            ("mass".to_string(), json!(15.999)),
            ("aromatic".to_string(), json!(false)),
        ]
        .into_iter()
        .collect();
        assert_eq!(schema.width(), 4);
        assert_eq!(schema.encode_record(&rec, false).unwrap(), vec![0.0, 1.0, 15.999, 0.0]);
        assert_eq!(schema.feature_names(), vec!["element=C", "element=O", "mass", "aromatic"]);
    }

    #[test]
    fn numeric_categories_stringify() {
        let schema = FeatureSchema::new(vec![Column::categorical("h", ["0", "1", "2"])]).unwrap();
        let rec: Attrs = [("h".to_string(), json!(2))].into_iter().collect();
        assert_eq!(schema.encode_record(&rec, false).unwrap(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn duplicate_vocab_rejected() {
        assert!(FeatureSchema::new(vec![Column::categorical("e", ["C", "C"])]).is_err());
    }

    #[test]
    fn missing_attribute_is_schema_error() {
        let schema = FeatureSchema::new(vec![Column::binary("flag")]).unwrap();
        assert!(matches!(schema.encode_record(&Attrs::new(), false), Err(Error::Schema(_))));
    }

    #[test]
    fn antisymmetric_flips_when_reversed() {
        let mut col = Column::continuous("dg", None);
        col.kind = ColumnKind::Continuous { unit: None, antisymmetric: true };
        let schema = FeatureSchema::new(vec![col]).unwrap();
        let rec: Attrs = [("dg".to_string(), json!(-16.7))].into_iter().collect();
        assert_eq!(schema.encode_record(&rec, true).unwrap(), vec![16.7]);
    }

    #[test]
    fn element_masses() {
        let water = 2.0 * element_mass("H").unwrap() + element_mass("O").unwrap();
        assert!((water - 18.015).abs() < 1e-12);
        assert!(element_mass("Xx").is_none());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn one_hot_sums_to_one(n in 1usize..12, pick in any::<proptest::sample::Index>()) {
                let vocab: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
                let v = &vocab[pick.index(n)];
                let t = one_hot(v, &vocab).unwrap();
                prop_assert_eq!(t.sum(), 1.0);
                prop_assert_eq!(t.cols(), n);
            }

            #[test]
            fn encoded_width_matches_schema(vocab_sizes in proptest::collection::vec(1usize..5, 0..5), n_cont in 0usize..4) {
                let mut cols = Vec::new();
                let mut rec = Attrs::new();
                for (i, &k) in vocab_sizes.iter().enumerate() {
                    let name = format!("c{i}");
                    cols.push(Column::categorical(&name, (0..k).map(|j| j.to_string())));
                    rec.insert(name, json!(0));
                }
                for i in 0..n_cont {
                    let name = format!("x{i}");
                    cols.push(Column::continuous(&name, None));
                    rec.insert(name, json!(1.5));
                }
                let schema = FeatureSchema::new(cols).unwrap();
                let rows = schema.encode_rows([&rec, &rec]).unwrap();
                prop_assert_eq!(rows.cols(), schema.width());
                prop_assert_eq!(schema.feature_names().len(), schema.width());
            }
        }
    }
}
