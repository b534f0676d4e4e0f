//! JSON graph files.
//!
//! A graph file lists nodes and edges by string id, with arbitrary attributes
//! alongside:
//!
//! ```json
//! {
//!   "directed": false,
//!   "nodes": [{"id": "C1", "element": "C", "h_count": 1}],
//!   "edges": [{"src": "C1", "dst": "O5", "order": "single", "cyclic": true}],
//!   "global": {},
//!   "schema": {"node": [...], "edge": [...], "global": [...]},
//!   "positions": [[0.0, 0.0, 0.0]]
//! }
//! ```
//!
//! `schema` and `positions` are optional. A [`Builder`] decides how the
//! attributes become tensors. Dumps are canonical: fields in declaration
//! order, attributes sorted by key, so load → dump → load is idempotent.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::encode::{
    add_explicit_hydrogens, build_graph_sequence, build_molecule_graph, build_process_graph, build_protein_graph,
    build_reaction_graph, Atom, Attrs, Bond, BondOrder, Column, FeatureSchema, Frame, GraphSchema, GraphSequence,
    Molecule, MoleculeOptions, Protein, Reaction, ReactionNetwork, ReactionOptions, Residue, ResidueBond, Species,
    Stream, Unit,
};
use crate::error::{Error, Result};
use crate::graph::{distance_matrix, Connectivity, GraphTensor};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: String,
    #[serde(flatten)]
    pub attrs: Attrs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub src: String,
    pub dst: String,
    #[serde(flatten)]
    pub attrs: Attrs,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    #[serde(default)]
    pub directed: bool,
    pub nodes: Vec<NodeRecord>,
    #[serde(default)]
    pub edges: Vec<EdgeRecord>,
    #[serde(default)]
    pub global: Attrs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<GraphSchema>,
    /// One `[x, y, z]` (Å) per node.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<[f64; 3]>>,
}

impl GraphFile {
    /// Parses and checks ids. Syntax errors carry line and column.
    pub fn parse(text: &str) -> Result<Self> {
        let f: GraphFile = serde_json::from_str(text)?;
        f.check()?;
        Ok(f)
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        GraphFile::parse(&text)
    }

    /// Canonical pretty-printed JSON.
    pub fn dump(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph files serialise") + "\n"
    }

    /// Ids are unique, edge endpoints resolve, positions match the nodes.
    pub fn check(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut seen = BTreeSet::new();
        for n in &self.nodes {
            if !seen.insert(n.id.as_str()) {
                problems.push(format!("duplicate node id `{}`", n.id));
            }
        }
        for (k, e) in self.edges.iter().enumerate() {
            for end in [&e.src, &e.dst] {
                if !seen.contains(end.as_str()) {
                    problems.push(format!("edge {k} references unknown node `{end}`"));
                }
            }
        }
        if let Some(p) = &self.positions {
            if p.len() != self.nodes.len() {
                problems.push(format!("{} positions for {} nodes", p.len(), self.nodes.len()));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(problems))
        }
    }

    fn index(&self) -> BTreeMap<&str, usize> {
        self.nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect()
    }

    /// Edge endpoints as node indices, in file order.
    pub fn edge_indices(&self) -> Vec<(usize, usize)> {
        let idx = self.index();
        self.edges.iter().map(|e| (idx[e.src.as_str()], idx[e.dst.as_str()])).collect()
    }

    pub fn positions_tensor(&self) -> Result<Option<Tensor>> {
        self.positions
            .as_ref()
            .map(|p| Tensor::from_rows(&p.iter().map(|r| r.to_vec()).collect::<Vec<_>>(), 3))
            .transpose()
    }

    fn require_schema(&self, builder: Builder) -> Result<&GraphSchema> {
        self.schema
            .as_ref()
            .ok_or_else(|| Error::Schema(format!("the {} builder needs a `schema` section", builder.name())))
    }

    /// Writes a graph tensor back out as a file for the [`Builder::Schema`]
    /// builder: every tensor column becomes a continuous attribute named
    /// after the column.
    pub fn from_tensor(g: &GraphTensor) -> Result<Self> {
        fn names(given: &[String], prefix: &str, width: usize) -> Vec<String> {
            if given.len() == width {
                given.to_vec()
            } else {
                (0..width).map(|i| format!("{prefix}{i}")).collect()
            }
        }
        fn record(names: &[String], row: &[f64]) -> Attrs {
            names.iter().zip(row).map(|(n, v)| (n.clone(), json!(v))).collect()
        }
        fn schema(names: &[String]) -> FeatureSchema {
            FeatureSchema {
                columns: names.iter().map(|n| Column::continuous(n, None)).collect(),
            }
        }
        let (nn, en, gn) = (
            names(&g.node_columns, "x", g.nodes.cols()),
            names(&g.edge_columns, "e", g.edges.cols()),
            names(&g.global_columns, "u", g.globals.cols()),
        );
        let ids: Vec<String> = (0..g.num_nodes()).map(|i| format!("n{i}")).collect();
        Ok(GraphFile {
            directed: g.connectivity.directed,
            nodes: ids
                .iter()
                .enumerate()
                .map(|(i, id)| NodeRecord { id: id.clone(), attrs: record(&nn, g.nodes.row_slice(i)) })
                .collect(),
            edges: g
                .connectivity
                .edges
                .iter()
                .enumerate()
                .map(|(k, &(s, d))| EdgeRecord {
                    src: ids[s].clone(),
                    dst: ids[d].clone(),
                    attrs: record(&en, g.edges.row_slice(k)),
                })
                .collect(),
            global: record(&gn, g.globals.row_slice(0)),
            schema: Some(GraphSchema { node: schema(&nn), edge: schema(&en), global: schema(&gn) }),
            positions: None,
        })
    }
}

/// How a [`GraphFile`]'s attributes become tensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Builder {
    /// Encode attributes with the file's own schema.
    Schema,
    /// Atoms (`element`, optional `h_count`) and bonds (`order`, `cyclic`).
    Molecule,
    /// Residues (`code`, `molar_mass`) and bonds (`distance`, `type`).
    Protein,
    /// Species and reactions (`reversible`), encoded with the file's schema.
    Reaction,
    /// Units (`time`, `cost`, `energy`) and streams (`mass`, `volume`).
    Process,
}

impl Builder {
    pub const ALL: [Builder; 5] = [Builder::Schema, Builder::Molecule, Builder::Protein, Builder::Reaction, Builder::Process];

    pub fn name(self) -> &'static str {
        match self {
            Builder::Schema => "schema",
            Builder::Molecule => "molecule",
            Builder::Protein => "protein",
            Builder::Reaction => "reaction",
            Builder::Process => "process",
        }
    }
}

impl std::str::FromStr for Builder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Builder::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown builder `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildOptions {
    /// Molecule: expand implicit hydrogen counts into `H` nodes.
    pub explicit_hydrogens: bool,
    /// Protein: include edges whose `type` is `hydrogen`.
    pub hydrogen_bonds: bool,
    /// Reaction: directed graph with a reverse edge per reversible reaction.
    pub reversible_as_two_edges: bool,
}

fn take<'a>(attrs: &'a Attrs, key: &str, what: &str) -> Result<&'a Value> {
    attrs
        .get(key)
        .ok_or_else(|| Error::Schema(format!("{what} is missing attribute `{key}`")))
}

fn take_f64(attrs: &Attrs, key: &str, what: &str) -> Result<f64> {
    take(attrs, key, what)?
        .as_f64()
        .ok_or_else(|| Error::Schema(format!("{what}: attribute `{key}` must be a number")))
}

fn take_str<'a>(attrs: &'a Attrs, key: &str, what: &str) -> Result<&'a str> {
    take(attrs, key, what)?
        .as_str()
        .ok_or_else(|| Error::Schema(format!("{what}: attribute `{key}` must be a string")))
}

fn without(attrs: &Attrs, keys: &[&str]) -> Attrs {
    attrs.iter().filter(|(k, _)| !keys.contains(&k.as_str())).map(|(k, v)| (k.clone(), v.clone())).collect()
}

/// Builds the graph tensor for `file` with the chosen builder.
pub fn build_graph(file: &GraphFile, builder: Builder, opts: BuildOptions) -> Result<GraphTensor> {
    file.check()?;
    let edges = file.edge_indices();
    let mut g = match builder {
        Builder::Schema => {
            let schema = file.require_schema(builder)?;
            schema.check()?;
            let conn = if file.directed {
                Connectivity::new(file.nodes.len(), edges, true)
            } else {
                Connectivity::undirected(file.nodes.len(), edges)
            };
            let mut aux = Vec::new();
            if let Some(p) = file.positions_tensor()? {
                aux.push(("distance".to_string(), distance_matrix(&p)?));
            }
            GraphTensor {
                nodes: schema.node.encode_rows(file.nodes.iter().map(|n| &n.attrs))?,
                edges: schema.edge.encode_rows(file.edges.iter().map(|e| &e.attrs))?,
                globals: schema.global.encode_rows([&file.global])?,
                connectivity: conn,
                aux,
                node_columns: schema.node.feature_names(),
                edge_columns: schema.edge.feature_names(),
                global_columns: schema.global.feature_names(),
                node_labels: Some(file.nodes.iter().map(|n| n.id.clone()).collect()),
            }
            .checked()?
        }
        Builder::Molecule => {
            let atoms = file
                .nodes
                .iter()
                .map(|n| {
                    let what = format!("atom `{}`", n.id);
                    let h_count = match n.attrs.get("h_count") {
                        None => None,
                        Some(v) => Some(
                            v.as_u64()
                                .and_then(|h| u32::try_from(h).ok())
                                .ok_or_else(|| Error::Schema(format!("{what}: `h_count` must be a non-negative integer")))?,
                        ),
                    };
                    Ok(Atom {
                        element: take_str(&n.attrs, "element", &what)?.to_string(),
                        h_count,
                        attrs: without(&n.attrs, &["element", "h_count"]),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let bonds = file
                .edges
                .iter()
                .zip(&edges)
                .map(|(e, &(a, b))| {
                    let what = format!("bond {}-{}", e.src, e.dst);
                    let order = match e.attrs.get("order").map(|v| v.as_str()) {
                        None | Some(Some("single")) => BondOrder::Single,
                        Some(Some("double")) => BondOrder::Double,
                        _ => return Err(Error::Schema(format!("{what}: `order` must be \"single\" or \"double\""))),
                    };
                    let cyclic = match e.attrs.get("cyclic") {
                        None => false,
                        Some(v) => v.as_bool().ok_or_else(|| Error::Schema(format!("{what}: `cyclic` must be a boolean")))?,
                    };
                    Ok(Bond { a, b, order, cyclic, attrs: without(&e.attrs, &["order", "cyclic"]) })
                })
                .collect::<Result<Vec<_>>>()?;
            let mut mol = Molecule { atoms, bonds, globals: file.global.clone() };
            if opts.explicit_hydrogens {
                mol = add_explicit_hydrogens(&mol);
            }
            build_molecule_graph(
                &mol,
                &MoleculeOptions {
                    explicit_hydrogens: opts.explicit_hydrogens,
                    schema: file.schema.clone(),
                },
            )?
        }
        Builder::Protein => {
            let residues = file
                .nodes
                .iter()
                .map(|n| {
                    let what = format!("residue `{}`", n.id);
                    Ok(Residue {
                        code: take_str(&n.attrs, "code", &what)?.to_string(),
                        molar_mass: take_f64(&n.attrs, "molar_mass", &what)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let mut protein = Protein { residues, coords: file.positions.clone(), ..Protein::default() };
            for (e, &(a, b)) in file.edges.iter().zip(&edges) {
                let what = format!("bond {}-{}", e.src, e.dst);
                let bond = ResidueBond { a, b, distance: take_f64(&e.attrs, "distance", &what)? };
                match e.attrs.get("type").and_then(Value::as_str).unwrap_or("covalent") {
                    "covalent" => protein.covalent_bonds.push(bond),
                    "hydrogen" if opts.hydrogen_bonds => protein.hydrogen_bonds.push(bond),
                    "hydrogen" => {}
                    other => return Err(Error::Schema(format!("{what}: unknown bond type `{other}`"))),
                }
            }
            build_protein_graph(&protein)?
        }
        Builder::Reaction => {
            let net = ReactionNetwork {
                species: file.nodes.iter().map(|n| Species { name: n.id.clone(), attrs: n.attrs.clone() }).collect(),
                reactions: file
                    .edges
                    .iter()
                    .zip(&edges)
                    .map(|(e, &(from, to))| {
                        let reversible = match e.attrs.get("reversible") {
                            None => false,
                            Some(v) => v.as_bool().ok_or_else(|| {
                                Error::Schema(format!("reaction {}-{}: `reversible` must be a boolean", e.src, e.dst))
                            })?,
                        };
                        Ok(Reaction { from, to, reversible, attrs: without(&e.attrs, &["reversible"]) })
                    })
                    .collect::<Result<Vec<_>>>()?,
                globals: file.global.clone(),
                schema: file.require_schema(builder)?.clone(),
            };
            build_reaction_graph(
                &net,
                ReactionOptions {
                    reversible_as_two_edges: opts.reversible_as_two_edges,
                },
            )?
        }
        Builder::Process => {
            let units = file
                .nodes
                .iter()
                .map(|n| {
                    let what = format!("unit `{}`", n.id);
                    Ok(Unit {
                        name: n.id.clone(),
                        time: take_f64(&n.attrs, "time", &what)?,
                        cost: take_f64(&n.attrs, "cost", &what)?,
                        energy: take_f64(&n.attrs, "energy", &what)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let streams = file
                .edges
                .iter()
                .zip(&edges)
                .map(|(e, &(from, to))| {
                    let what = format!("stream {}-{}", e.src, e.dst);
                    Ok(Stream {
                        from,
                        to,
                        mass: take_f64(&e.attrs, "mass", &what)?,
                        volume: take_f64(&e.attrs, "volume", &what)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            build_process_graph(&units, &streams)?
        }
    };
    // Builders that do not derive labels themselves fall back to file ids.
    if matches!(builder, Builder::Reaction | Builder::Process) {
        g.node_labels = Some(file.nodes.iter().map(|n| n.id.clone()).collect());
    }
    Ok(g)
}

/// A fixed node set observed over several frames with changing edges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceFile {
    pub nodes: Vec<NodeRecord>,
    /// Encodes node attributes.
    pub schema: FeatureSchema,
    pub frames: Vec<SequenceFrame>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceFrame {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
    /// Node ids this frame is defined over; defaults to the file's node set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_ids: Option<Vec<String>>,
    /// Edge records; the `kind` attribute (default `edge`) is one-hot encoded.
    pub edges: Vec<EdgeRecord>,
}

impl SequenceFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn build(&self) -> Result<GraphSequence> {
        self.schema.check()?;
        let ids: Vec<String> = self.nodes.iter().map(|n| n.id.clone()).collect();
        let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let nodes = self.schema.encode_rows(self.nodes.iter().map(|n| &n.attrs))?;
        let frames = self
            .frames
            .iter()
            .enumerate()
            .map(|(f, frame)| {
                let edges = frame
                    .edges
                    .iter()
                    .map(|e| {
                        let end = |id: &str| {
                            index
                                .get(id)
                                .copied()
                                .ok_or_else(|| Error::Invalid(vec![format!("frame {f}: edge references unknown node `{id}`")]))
                        };
                        let kind = e.attrs.get("kind").map(crate::encode::category).unwrap_or_else(|| "edge".into());
                        Ok((end(&e.src)?, end(&e.dst)?, kind))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Frame {
                    label: frame.label.clone(),
                    time: frame.time,
                    node_ids: frame.node_ids.clone().unwrap_or_else(|| ids.clone()),
                    edges,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        build_graph_sequence(&ids, &nodes, &self.schema.feature_names(), &frames)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::validate;

    const WATER: &str = r#"{
        "nodes": [
            {"id": "O", "element": "O"},
            {"id": "H1", "element": "H"},
            {"id": "H2", "element": "H"}
        ],
        "edges": [
            {"src": "O", "dst": "H1"},
            {"src": "H2", "dst": "O"}
        ]
    }"#;

    #[test]
    fn molecule_builder() {
        let f = GraphFile::parse(WATER).unwrap();
        let g = build_graph(&f, Builder::Molecule, BuildOptions::default()).unwrap();
        assert_eq!(g.shape_summary(), "X: 3x3, E: 2x3, A: 3x3, U: 1x1");
        assert_eq!(g.connectivity.edges, vec![(0, 1), (0, 2)]);
        assert!(validate(&g).is_ok());
    }

    #[test]
    fn malformed_json_reports_position() {
        match GraphFile::parse("{\n  \"nodes\": [\n    {\"id\": }\n  ]\n}") {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (3, 12)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_endpoint_and_duplicate_id() {
        let text = r#"{"nodes": [{"id": "a"}, {"id": "a"}], "edges": [{"src": "a", "dst": "b"}]}"#;
        match GraphFile::parse(text) {
            Err(Error::Invalid(p)) => {
                assert_eq!(p.len(), 2);
                assert!(p[0].contains("duplicate"));
                assert!(p[1].contains("unknown node `b`"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schema_builder_requires_schema() {
        let f = GraphFile::parse(WATER).unwrap();
        assert!(matches!(build_graph(&f, Builder::Schema, BuildOptions::default()), Err(Error::Schema(_))));
    }

    #[test]
    fn missing_attribute_is_schema_error() {
        let f = GraphFile::parse(r#"{"nodes": [{"id": "u"}]}"#).unwrap();
        assert!(matches!(build_graph(&f, Builder::Process, BuildOptions::default()), Err(Error::Schema(_))));
    }

    #[test]
    fn dump_is_idempotent() {
        let f = GraphFile::parse(WATER).unwrap();
        let once = f.dump();
        let twice = GraphFile::parse(&once).unwrap().dump();
        assert_eq!(once, twice);
    }

    #[test]
    fn tensor_round_trip() {
        let f = GraphFile::parse(WATER).unwrap();
        let g = build_graph(&f, Builder::Molecule, BuildOptions::default()).unwrap();
        let back = build_graph(&GraphFile::from_tensor(&g).unwrap(), Builder::Schema, BuildOptions::default()).unwrap();
        assert_eq!(back.nodes, g.nodes);
        assert_eq!(back.edges, g.edges);
        assert_eq!(back.globals, g.globals);
        assert_eq!(back.connectivity, g.connectivity);
        assert_eq!(back.node_columns, g.node_columns);
    }

    #[test]
    fn sequence_file() {
        let text = r#"{
            "nodes": [{"id": "a", "m": 1.0}, {"id": "b", "m": 2.0}, {"id": "c", "m": 3.0}],
            "schema": [{"name": "m", "kind": "continuous"}],
            "frames": [
                {"label": "open", "edges": [{"src": "a", "dst": "b", "kind": "peptide"}]},
                {"label": "closed", "edges": [{"src": "a", "dst": "b", "kind": "peptide"}, {"src": "c", "dst": "a", "kind": "hbond"}]}
            ]
        }"#;
        let seq = SequenceFile::parse(text).unwrap().build().unwrap();
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.frames[1].connectivity.edges, vec![(0, 1), (0, 2)]);
        assert_eq!(seq.frames[1].edge_columns, ["bond_type=hbond", "bond_type=peptide"]);
        assert_eq!(seq.frames[0].nodes, seq.frames[1].nodes);
    }
}
