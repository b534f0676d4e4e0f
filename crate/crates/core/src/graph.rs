//! The graph-tensor data model.
//!
//! A [`GraphTensor`] bundles node features `X` (`N x Fn`), edge features `E`
//! (`M x Fe`), global features `U` (`1 x Fu`) and the [`Connectivity`] that
//! ties rows of `E` to pairs of rows of `X`. Row `i` of `E` always describes
//! edge `i` of the edge list.
//!
//! Node indices are 0-based everywhere. Builders emit undirected edges as
//! `(min, max)` pairs sorted lexicographically; [`permute_nodes`] keeps each
//! edge's orientation and position so that edge rows keep their meaning.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Connectivity {
    pub num_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    pub directed: bool,
    #[serde(default)]
    pub allow_self_loops: bool,
}

impl Connectivity {
    pub fn new(num_nodes: usize, edges: Vec<(usize, usize)>, directed: bool) -> Self {
        Connectivity {
            num_nodes,
            edges,
            directed,
            allow_self_loops: false,
        }
    }

    /// Undirected connectivity with every pair stored as `(min, max)`.
    pub fn undirected(num_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let edges = edges.into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect();
        Connectivity::new(num_nodes, edges, false)
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edge indices whose messages reach node `i`: incoming edges when
    /// directed, both endpoints when undirected. Ascending edge order.
    pub fn incident_edges(&self, i: usize) -> Vec<usize> {
        self.incidence()[i].clone()
    }

    /// [`incident_edges`](Self::incident_edges) for every node at once.
    pub fn incidence(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.num_nodes];
        for (k, &(s, d)) in self.edges.iter().enumerate() {
            inc[d].push(k);
            if !self.directed && s != d {
                inc[s].push(k);
            }
        }
        inc
    }

    /// Distinct neighbours of each node ignoring edge direction.
    pub fn neighbor_sets(&self) -> Vec<BTreeSet<usize>> {
        let mut nb = vec![BTreeSet::new(); self.num_nodes];
        for &(s, d) in &self.edges {
            if s != d {
                nb[s].insert(d);
                nb[d].insert(s);
            }
        }
        nb
    }

    /// Number of edge endpoints at each node (undirected sense).
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(s, d) in &self.edges {
            deg[s] += 1;
            deg[d] += 1;
        }
        deg
    }

    /// Every problem with the edge list.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (k, &(s, d)) in self.edges.iter().enumerate() {
            if s >= self.num_nodes || d >= self.num_nodes {
                out.push(format!(
                    "edge {k} ({s},{d}) references a node outside 0..{}",
                    self.num_nodes
                ));
            } else if s == d && !self.allow_self_loops {
                out.push(format!("edge {k} is a self-loop on node {s}"));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphTensor {
    /// Node features `X`, `N x Fn`.
    pub nodes: Tensor,
    /// Edge features `E`, `M x Fe`.
    pub edges: Tensor,
    /// Global features `U`, `1 x Fu`.
    pub globals: Tensor,
    pub connectivity: Connectivity,
    /// Extra `N x N` matrices, e.g. `("distance", AD)`.
    #[serde(default)]
    pub aux: Vec<(String, Tensor)>,
    #[serde(default)]
    pub node_columns: Vec<String>,
    #[serde(default)]
    pub edge_columns: Vec<String>,
    #[serde(default)]
    pub global_columns: Vec<String>,
    /// Per-node labels used by substructure matching (element symbols for
    /// molecules, residue codes for proteins).
    #[serde(default)]
    pub node_labels: Option<Vec<String>>,
}

impl GraphTensor {
    /// A graph with unnamed columns, checked with [`validate`].
    pub fn new(nodes: Tensor, edges: Tensor, globals: Tensor, connectivity: Connectivity) -> Result<Self> {
        let g = GraphTensor {
            nodes,
            edges,
            globals,
            connectivity,
            aux: Vec::new(),
            node_columns: Vec::new(),
            edge_columns: Vec::new(),
            global_columns: Vec::new(),
            node_labels: None,
        };
        g.checked()
    }

    /// Returns `self` if it validates, otherwise every violation.
    pub fn checked(self) -> Result<Self> {
        match validate(&self) {
            Ok(()) => Ok(self),
            Err(v) => Err(Error::Invalid(v)),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.connectivity.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.connectivity.num_edges()
    }

    pub fn aux_matrix(&self, name: &str) -> Option<&Tensor> {
        self.aux.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn node_column_index(&self, name: &str) -> Result<usize> {
        self.node_columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    /// Shape summary in the `X: 16x6, E: 16x3, A: 16x16, U: 1x1` form.
    pub fn shape_summary(&self) -> String {
        let n = self.num_nodes();
        let mut s = format!(
            "X: {}, E: {}, A: {n}x{n}, U: {}",
            self.nodes.shape(),
            self.edges.shape(),
            self.globals.shape()
        );
        for (name, m) in &self.aux {
            s.push_str(&format!(", {name}: {}", m.shape()));
        }
        s
    }
}

/// Checks every graph-tensor invariant and reports all violations.
pub fn validate(g: &GraphTensor) -> Result<(), Vec<String>> {
    let mut v = g.connectivity.violations();
    let n = g.connectivity.num_nodes;
    let m = g.connectivity.num_edges();
    if g.nodes.rows() != n {
        v.push(format!("node tensor rows {} ≠ node count {n}", g.nodes.rows()));
    }
    if g.edges.rows() != m {
        v.push(format!("edge tensor rows {} ≠ edge count {m}", g.edges.rows()));
    }
    if g.globals.rows() != 1 {
        v.push(format!("global tensor has {} rows, expected 1", g.globals.rows()));
    }
    for (cols, names, what) in [
        (g.nodes.cols(), &g.node_columns, "node"),
        (g.edges.cols(), &g.edge_columns, "edge"),
        (g.globals.cols(), &g.global_columns, "global"),
    ] {
        if !names.is_empty() && names.len() != cols {
            v.push(format!("{what} column names {} ≠ {what} tensor width {cols}", names.len()));
        }
    }
    if let Some(labels) = &g.node_labels {
        if labels.len() != n {
            v.push(format!("node labels {} ≠ node count {n}", labels.len()));
        }
    }
    for (name, a) in &g.aux {
        if a.rows() != n || a.cols() != n {
            v.push(format!("aux matrix `{name}` is {}, expected {n}x{n}", a.shape()));
        } else if !g.connectivity.directed && !is_symmetric(a) {
            v.push(format!("aux matrix `{name}` is asymmetric in an undirected graph"));
        }
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

fn is_symmetric(a: &Tensor) -> bool {
    (0..a.rows()).all(|i| (0..i).all(|j| a.get(i, j) == a.get(j, i)))
}

/// Dense `N x N` 0/1 view of the edge list. Undirected edges fill both
/// `(i,j)` and `(j,i)`; parallel edges collapse to a single 1.
pub fn adjacency_matrix(g: &GraphTensor) -> Tensor {
    connectivity_matrix(&g.connectivity)
}

pub fn connectivity_matrix(c: &Connectivity) -> Tensor {
    let n = c.num_nodes;
    let mut data = vec![0.0; n * n];
    for &(s, d) in &c.edges {
        data[s * n + d] = 1.0;
        if !c.directed {
            data[d * n + s] = 1.0;
        }
    }
    Tensor::new(n, n, data).expect("0/1 entries are finite")
}

/// Edge list of a 0/1 matrix in row-major order. Undirected input emits each
/// pair once as `(i, j)` with `i <= j`.
pub fn adjacency_list(m: &Tensor, directed: bool) -> Result<Connectivity> {
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::Shape {
            op: "adjacency_list",
            left: m.shape(),
            right: crate::Shape::new(n, n),
        });
    }
    if let Some(v) = m.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::Usage(format!("adjacency entries must be 0 or 1, found {v}")));
    }
    if !directed && !is_symmetric(m) {
        return Err(Error::Invalid(vec!["asymmetric matrix for an undirected graph".into()]));
    }
    let mut edges = Vec::new();
    for i in 0..n {
        let start = if directed { 0 } else { i };
        for j in start..n {
            if m.get(i, j) == 1.0 {
                edges.push((i, j));
            }
        }
    }
    let self_loops = edges.iter().any(|&(a, b)| a == b);
    Ok(Connectivity {
        num_nodes: n,
        edges,
        directed,
        allow_self_loops: self_loops,
    })
}

/// Contact map: `(i,j) = 1` iff `i != j` and the euclidean distance between
/// positions `i` and `j` is at most `cutoff` (same length unit, Å for
/// residues).
pub fn contact_adjacency(positions: &Tensor, cutoff: f64) -> Result<Tensor> {
    if positions.cols() != 3 {
        return Err(Error::Shape {
            op: "contact_adjacency",
            left: positions.shape(),
            right: crate::Shape::new(positions.rows(), 3),
        });
    }
    if !(cutoff.is_finite() && cutoff > 0.0) {
        return Err(Error::Usage(format!("cutoff must be positive, got {cutoff}")));
    }
    let d = distance_matrix(positions)?;
    let n = positions.rows();
    let mut out = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j && d.get(i, j) <= cutoff {
                out.set(i, j, 1.0)?;
            }
        }
    }
    Ok(out)
}

/// Pairwise euclidean distances between rows of an `N x 3` position tensor.
pub fn distance_matrix(positions: &Tensor) -> Result<Tensor> {
    let n = positions.rows();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let a = positions.row_slice(i);
            let b = positions.row_slice(j);
            data[i * n + j] = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        }
    }
    Tensor::new(n, n, data)
}

fn check_permutation(p: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if p.len() != n {
        return Err(Error::Invalid(vec![format!("permutation has {} entries for {n} nodes", p.len())]));
    }
    for &x in p {
        if x >= n || std::mem::replace(&mut seen[x], true) {
            return Err(Error::Invalid(vec![format!("{p:?} is not a bijection on 0..{n}")]));
        }
    }
    Ok(())
}

pub fn inverse_permutation(p: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; p.len()];
    for (i, &x) in p.iter().enumerate() {
        inv[x] = i;
    }
    inv
}

/// Relabels node `i` as `p[i]`. Node rows (and labels, aux matrices) move
/// with their node; edge rows stay in place with relabelled endpoints, so the
/// adjacency view becomes `P A Pᵀ`.
pub fn permute_nodes(g: &GraphTensor, p: &[usize]) -> Result<GraphTensor> {
    let n = g.num_nodes();
    check_permutation(p, n)?;
    let inv = inverse_permutation(p);
    let relabel_aux = |a: &Tensor| -> Result<Tensor> {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                data[p[i] * n + p[j]] = a.get(i, j);
            }
        }
        Tensor::new(n, n, data)
    };
    let aux = g
        .aux
        .iter()
        .map(|(name, a)| Ok((name.clone(), relabel_aux(a)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(GraphTensor {
        nodes: g.nodes.select_rows(&inv),
        edges: g.edges.clone(),
        globals: g.globals.clone(),
        connectivity: Connectivity {
            edges: g.connectivity.edges.iter().map(|&(s, d)| (p[s], p[d])).collect(),
            ..g.connectivity.clone()
        },
        aux,
        node_columns: g.node_columns.clone(),
        edge_columns: g.edge_columns.clone(),
        global_columns: g.global_columns.clone(),
        node_labels: g
            .node_labels
            .as_ref()
            .map(|l| inv.iter().map(|&i| l[i].clone()).collect()),
    })
}
