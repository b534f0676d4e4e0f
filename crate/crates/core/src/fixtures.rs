//! Worked-example graphs shipped with the crate, and checks of their tensor
//! dimensions against the published figure captions.
//!
//! The JSON sources live in `fixtures/` and are embedded at compile time;
//! [`verify`] can also read them from another directory.

use std::path::Path;

use crate::encode::GraphSequence;
use crate::error::{Error, Result};
use crate::graph::GraphTensor;
use crate::io::{build_graph, BuildOptions, Builder, GraphFile, SequenceFile};

/// `(file name, contents)` of every shipped fixture.
pub const FILES: [(&str, &str); 9] = [
    ("g6p.json", include_str!("../fixtures/g6p.json")),
    ("methane.json", include_str!("../fixtures/methane.json")),
    ("water.json", include_str!("../fixtures/water.json")),
    ("1l2y.json", include_str!("../fixtures/1l2y.json")),
    ("glycolysis17.json", include_str!("../fixtures/glycolysis17.json")),
    ("glycolysis11.json", include_str!("../fixtures/glycolysis11.json")),
    ("tequila8.json", include_str!("../fixtures/tequila8.json")),
    ("tequila10.json", include_str!("../fixtures/tequila10.json")),
    ("deca_alanine.json", include_str!("../fixtures/deca_alanine.json")),
];

/// Embedded contents of a fixture file.
pub fn text(file: &str) -> Result<&'static str> {
    FILES
        .iter()
        .find(|(name, _)| *name == file)
        .map(|(_, t)| *t)
        .ok_or_else(|| Error::Io(format!("no fixture named `{file}`")))
}

fn graph(file: &str, builder: Builder, opts: BuildOptions) -> Result<GraphTensor> {
    build_graph(&GraphFile::parse(text(file)?)?, builder, opts)
}

/// Glucose 6-phosphate; heavy atoms only unless `explicit_hydrogens`.
pub fn g6p(explicit_hydrogens: bool) -> Result<GraphTensor> {
    graph("g6p.json", Builder::Molecule, BuildOptions { explicit_hydrogens, ..Default::default() })
}

/// Methane with 3 node, 2 edge and 1 global feature.
pub fn methane() -> Result<GraphTensor> {
    graph("methane.json", Builder::Molecule, BuildOptions::default())
}

/// Water with explicit hydrogens and a per-atom `mass` column.
pub fn water() -> Result<GraphTensor> {
    graph("water.json", Builder::Molecule, BuildOptions::default())
}

/// The 20-residue Trp-cage miniprotein; covalent backbone only unless
/// `hydrogen_bonds`. Node positions are an idealised alpha-carbon trace.
pub fn trp_cage(hydrogen_bonds: bool) -> Result<GraphTensor> {
    graph("1l2y.json", Builder::Protein, BuildOptions { hydrogen_bonds, ..Default::default() })
}

/// Alpha-carbon positions of [`trp_cage`] (`20 x 3`, Å).
pub fn trp_cage_positions() -> Result<crate::Tensor> {
    GraphFile::parse(text("1l2y.json")?)?
        .positions_tensor()?
        .ok_or_else(|| Error::Schema("1l2y fixture has no positions".into()))
}

/// Glycolysis with the aldolase split: two parallel three-carbon branches.
pub fn glycolysis_branched() -> Result<GraphTensor> {
    graph("glycolysis17.json", Builder::Reaction, BuildOptions::default())
}

/// Glycolysis as a directed network: one reverse edge per reversible step.
pub fn glycolysis_directed() -> Result<GraphTensor> {
    graph("glycolysis11.json", Builder::Reaction, BuildOptions { reversible_as_two_edges: true, ..Default::default() })
}

/// Tequila production with a single aging step.
pub fn tequila() -> Result<GraphTensor> {
    graph("tequila8.json", Builder::Process, BuildOptions::default())
}

/// Tequila production with aging split into three units.
pub fn tequila_split_aging() -> Result<GraphTensor> {
    graph("tequila10.json", Builder::Process, BuildOptions::default())
}

/// Deca-alanine stretching: packed, partly stretched, fully stretched.
pub fn deca_alanine() -> Result<GraphSequence> {
    SequenceFile::parse(text("deca_alanine.json")?)?.build()
}

/// One dimension check.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Check {
    pub name: &'static str,
    /// Wording of the published description being checked.
    pub citation: &'static str,
    pub expected: String,
    pub actual: String,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.expected == self.actual
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.passed() {
            write!(f, "PASS {}: {} [\"{}\"]", self.name, self.actual, self.citation)
        } else {
            write!(
                f,
                "FAIL {}: expected {}, got {} [\"{}\"]",
                self.name, self.expected, self.actual, self.citation
            )
        }
    }
}

struct Expected {
    name: &'static str,
    file: &'static str,
    builder: Builder,
    opts: BuildOptions,
    expected: &'static str,
    citation: &'static str,
}

const fn opts(explicit_hydrogens: bool, hydrogen_bonds: bool, reversible_as_two_edges: bool) -> BuildOptions {
    BuildOptions {
        explicit_hydrogens,
        hydrogen_bonds,
        reversible_as_two_edges,
    }
}

const EXPECTED: [Expected; 9] = [
    Expected {
        name: "G6P",
        file: "g6p.json",
        builder: Builder::Molecule,
        opts: opts(false, false, false),
        expected: "X: 16x6, E: 16x3, A: 16x16, U: 1x1",
        citation: "node tensor (X) with dimensions 16 nodes x 6 ... edge tensor (E) with dimension 16 edges x 3",
    },
    Expected {
        name: "G6P explicit hydrogens",
        file: "g6p.json",
        builder: Builder::Molecule,
        opts: opts(true, false, false),
        expected: "X: 29x4, E: 29x3, A: 29x29, U: 1x1",
        citation: "node tensor (X) with dimensions 29 nodes x 4 ... edge tensor (E) with dimensions 29 edges x 3",
    },
    Expected {
        name: "1L2Y",
        file: "1l2y.json",
        builder: Builder::Protein,
        opts: opts(false, false, false),
        expected: "X: 20x13, E: 19x1, A: 20x20, U: 1x2, distance: 20x20",
        citation: "node tensor (X) with dimensions 20 nodes x 13 ... edge tensor (E) with dimensions 19 edges x 1",
    },
    Expected {
        name: "1L2Y hydrogen bonds",
        file: "1l2y.json",
        builder: Builder::Protein,
        opts: opts(false, true, false),
        expected: "X: 20x13, E: 32x3, A: 20x20, U: 1x2, distance: 20x20",
        citation: "edge tensor (E) with dimensions 32 edges x 3",
    },
    Expected {
        name: "glycolysis",
        file: "glycolysis17.json",
        builder: Builder::Reaction,
        opts: opts(false, false, false),
        expected: "X: 17x2, E: 16x3, A: 17x17, U: 1x2",
        citation: "resulting in 17 nodes and 16 edges ... This results in a 17 x 2 tensor",
    },
    Expected {
        name: "glycolysis directed",
        file: "glycolysis11.json",
        builder: Builder::Reaction,
        opts: opts(false, false, true),
        expected: "X: 11x6, E: 19x3, A: 11x11, U: 1x2",
        citation: "an edge tensor with dimensions 19 x 3 and a new adjacency matrix of 11 x 11 ... node tensor with dimension 11 x 6",
    },
    Expected {
        name: "tequila",
        file: "tequila8.json",
        builder: Builder::Process,
        opts: opts(false, false, false),
        expected: "X: 8x3, E: 10x2, A: 8x8, U: 1x3",
        citation: "node tensor (X) with dimensions 8 nodes x 3 features, edge tensor (E) with dimensions 10 edges x 2 features, and global tensor (U) with dimensions 1 x 3",
    },
    Expected {
        name: "tequila split aging",
        file: "tequila10.json",
        builder: Builder::Process,
        opts: opts(false, false, false),
        expected: "X: 10x3, E: 18x2, A: 10x10, U: 1x3",
        citation: "node tensor (X) with dimensions 10 nodes x 3 features, edge tensor (E) with dimensions 18 edges x 2 features",
    },
    Expected {
        name: "methane",
        file: "methane.json",
        builder: Builder::Molecule,
        opts: opts(false, false, false),
        expected: "X: 5x3, E: 4x2, A: 5x5, U: 1x1",
        citation: "the edge's own features (2 features), the features of the two nodes it connects (3 features each ...), and the global features (1 feature)",
    },
];

fn load_text(dir: Option<&Path>, file: &str) -> Result<String> {
    match dir {
        Some(d) => {
            let path = d.join(file);
            std::fs::read_to_string(&path).map_err(|e| Error::Io(format!("missing fixture {}: {e}", path.display())))
        }
        None => Ok(text(file)?.to_string()),
    }
}

/// Builds every fixture and compares its dimensions with the published
/// ones. Fixtures come from `dir` when given, else from the embedded copies.
/// A missing file is an error; a fixture that fails to build is a failed
/// check carrying the error message.
pub fn verify(dir: Option<&Path>) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for s in &EXPECTED {
        let text = load_text(dir, s.file)?;
        let actual = GraphFile::parse(&text)
            .and_then(|f| build_graph(&f, s.builder, s.opts))
            .map(|g| g.shape_summary())
            .unwrap_or_else(|e| format!("error: {e}"));
        checks.push(Check {
            name: s.name,
            citation: s.citation,
            expected: s.expected.to_string(),
            actual,
        });
    }
    let text = load_text(dir, "deca_alanine.json")?;
    let actual = SequenceFile::parse(&text)
        .and_then(|f| f.build())
        .map(|seq| {
            seq.frames
                .iter()
                .zip(&seq.labels)
                .map(|(g, l)| format!("{}: {}/{}", l.as_deref().unwrap_or("?"), g.num_nodes(), g.num_edges()))
                .collect::<Vec<_>>()
                .join(", ")
        })
        .unwrap_or_else(|e| format!("error: {e}"));
    checks.push(Check {
        name: "deca-alanine",
        citation: "10 nodes with 14 edges: 9 from peptide bonds and 6 from hydrogen bonds ... 4 of the 6 hydrogen bonds are broken ... only the 9 peptide bonds",
        expected: "G1: 10/15, G2: 10/11, G3: 10/9".into(),
        actual,
    });
    Ok(checks)
}
