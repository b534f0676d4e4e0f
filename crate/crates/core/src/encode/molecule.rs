use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{derive_vocab, element_mass, Attrs, Column, FeatureSchema, GraphSchema};
use crate::error::{Error, Result};
use crate::graph::{Connectivity, GraphTensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub element: String,
    /// Implicit hydrogens attached to this atom. Must be `None` when hydrogens
    /// are explicit nodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_count: Option<u32>,
    #[serde(flatten)]
    pub attrs: Attrs,
}

impl Atom {
    pub fn new(element: &str, h_count: Option<u32>) -> Self {
        Atom {
            element: element.into(),
            h_count,
            attrs: Attrs::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BondOrder {
    Single,
    Double,
}

impl BondOrder {
    pub fn name(self) -> &'static str {
        match self {
            BondOrder::Single => "single",
            BondOrder::Double => "double",
        }
    }

    pub fn valence(self) -> u32 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
    #[serde(default)]
    pub cyclic: bool,
    #[serde(flatten)]
    pub attrs: Attrs,
}

impl Bond {
    pub fn new(a: usize, b: usize, order: BondOrder, cyclic: bool) -> Self {
        Bond {
            a,
            b,
            order,
            cyclic,
            attrs: Attrs::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Molecule {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    #[serde(default)]
    pub globals: Attrs,
}

#[derive(Clone, Debug, Default)]
pub struct MoleculeOptions {
    pub explicit_hydrogens: bool,
    /// Overrides the default schema. Node records expose `element`,
    /// `h_count`, `mass` and any extra atom attributes; edge records expose
    /// `bond_order`, `cyclic` and extra bond attributes; the global record
    /// exposes `molecular_weight` and the molecule's global attributes.
    pub schema: Option<GraphSchema>,
}

/// Moves implicit hydrogen counts into explicit `H` nodes joined by single,
/// acyclic bonds. New atoms follow the heavy atoms in parent order.
pub fn add_explicit_hydrogens(mol: &Molecule) -> Molecule {
    let mut out = mol.clone();
    for (i, atom) in mol.atoms.iter().enumerate() {
        for _ in 0..atom.h_count.unwrap_or(0) {
            out.bonds.push(Bond::new(i, out.atoms.len(), BondOrder::Single, false));
            out.atoms.push(Atom::new("H", None));
        }
    }
    out.atoms.iter_mut().for_each(|a| a.h_count = None);
    out
}

/// Default schema: one-hot element over the molecule's element set, plus (in
/// implicit mode) one-hot hydrogen count over the observed `min..=max` range;
/// edges get one-hot bond order over `{single, double}` and a cyclic flag;
/// the global row is the molecular weight.
fn default_schema(mol: &Molecule, explicit: bool) -> GraphSchema {
    let elements = derive_vocab(&mol.atoms.iter().map(|a| json!(a.element)).collect::<Vec<_>>());
    let mut node = vec![Column::categorical("element", elements)];
    if !explicit {
        let hs = mol.atoms.iter().map(|a| a.h_count.unwrap_or(0));
        let (lo, hi) = hs.clone().fold((u32::MAX, 0), |(lo, hi), h| (lo.min(h), hi.max(h)));
        if lo <= hi {
            node.push(Column::categorical("h_count", (lo..=hi).map(|h| h.to_string())));
        }
    }
    GraphSchema {
        node: FeatureSchema { columns: node },
        edge: FeatureSchema {
            columns: vec![
                Column::categorical("bond_order", ["single", "double"]),
                Column::binary("cyclic"),
            ],
        },
        global: FeatureSchema {
            columns: vec![Column::continuous("molecular_weight", Some("g/mol"))],
        },
    }
}

/// Molecular graph with atoms as nodes and covalent bonds as undirected
/// edges stored `(min, max)` in bond order.
pub fn build_molecule_graph(mol: &Molecule, opts: &MoleculeOptions) -> Result<GraphTensor> {
    let n = mol.atoms.len();
    for (k, b) in mol.bonds.iter().enumerate() {
        if b.a >= n || b.b >= n {
            return Err(Error::Invalid(vec![format!(
                "bond {k} ({},{}) references a missing atom; molecule has {n}",
                b.a, b.b
            )]));
        }
    }
    if opts.explicit_hydrogens {
        if let Some(i) = mol.atoms.iter().position(|a| a.h_count.is_some()) {
            return Err(Error::Invalid(vec![format!(
                "atom {i} carries an implicit hydrogen count in explicit-hydrogen mode"
            )]));
        }
    }
    let schema = match &opts.schema {
        Some(s) => {
            s.check()?;
            s.clone()
        }
        None => default_schema(mol, opts.explicit_hydrogens),
    };

    let mut weight = 0.0;
    let mut node_records = Vec::with_capacity(n);
    for a in &mol.atoms {
        let mass = element_mass(&a.element);
        let h = a.h_count.unwrap_or(0);
        if let Some(m) = mass {
            weight += m + h as f64 * element_mass("H").expect("hydrogen in table");
        }
        let mut rec = a.attrs.clone();
        rec.insert("element".into(), json!(a.element));
        rec.insert("h_count".into(), json!(h));
        if let Some(m) = mass {
            rec.entry("mass".into()).or_insert(json!(m));
        }
        node_records.push(rec);
    }
    let edge_records: Vec<Attrs> = mol
        .bonds
        .iter()
        .map(|b| {
            let mut rec = b.attrs.clone();
            rec.insert("bond_order".into(), json!(b.order.name()));
            rec.insert("cyclic".into(), json!(b.cyclic));
            rec
        })
        .collect();
    let mut global_record = mol.globals.clone();
    global_record.entry("molecular_weight".into()).or_insert(json!(weight));

    GraphTensor {
        nodes: schema.node.encode_rows(&node_records)?,
        edges: schema.edge.encode_rows(&edge_records)?,
        globals: schema.global.encode_rows([&global_record])?,
        connectivity: Connectivity::undirected(n, mol.bonds.iter().map(|b| (b.a, b.b))),
        aux: Vec::new(),
        node_columns: schema.node.feature_names(),
        edge_columns: schema.edge.feature_names(),
        global_columns: schema.global.feature_names(),
        node_labels: Some(mol.atoms.iter().map(|a| a.element.clone()).collect()),
    }
    .checked()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Shape;

    fn methanol() -> Molecule {
        Molecule {
            atoms: vec![Atom::new("C", Some(3)), Atom::new("O", Some(1))],
            bonds: vec![Bond::new(0, 1, BondOrder::Single, false)],
            globals: Attrs::new(),
        }
    }

    #[test]
    fn implicit_mode_shapes() {
        let g = build_molecule_graph(&methanol(), &MoleculeOptions::default()).unwrap();
        // element {C,O} + h_count {1,2,3}
        assert_eq!(g.nodes.shape(), Shape::new(2, 5));
        assert_eq!(g.edges.shape(), Shape::new(1, 3));
        assert_eq!(g.node_columns[2..], ["h_count=1", "h_count=2", "h_count=3"]);
        let mw = g.globals.item().unwrap();
        assert!((mw - 32.042).abs() < 1e-9, "{mw}");
    }

    #[test]
    fn explicit_mode_drops_h_count() {
        let mol = add_explicit_hydrogens(&methanol());
        assert_eq!(mol.atoms.len(), 6);
        let g = build_molecule_graph(&mol, &MoleculeOptions { explicit_hydrogens: true, schema: None }).unwrap();
        assert_eq!(g.nodes.shape(), Shape::new(6, 3)); // C, H, O
        assert_eq!(g.edges.shape(), Shape::new(5, 3));
        assert!((g.globals.item().unwrap() - 32.042).abs() < 1e-9);
    }

    #[test]
    fn explicit_mode_rejects_h_counts() {
        let opts = MoleculeOptions { explicit_hydrogens: true, schema: None };
        assert!(build_molecule_graph(&methanol(), &opts).is_err());
    }

    #[test]
    fn bond_to_missing_atom() {
        let mut mol = methanol();
        mol.bonds.push(Bond::new(1, 5, BondOrder::Single, false));
        let err = build_molecule_graph(&mol, &MoleculeOptions::default()).unwrap_err();
        assert!(err.to_string().contains("missing atom"));
    }
}
