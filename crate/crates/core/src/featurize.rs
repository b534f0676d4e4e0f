//! Hand-engineered graph features for the classical baselines.
//!
//! Three families, all invariant under node relabelling:
//! - column statistics: an [`Aggregator`] applied to one node column;
//! - substructure counts: induced, label-exact matches of a small pattern,
//!   one per distinct node set;
//! - folded fingerprints: counts hashed into a fixed number of buckets with
//!   FNV-1a over the pattern's canonical form. Distinct patterns may collide.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphTensor;
use crate::tensor::{Aggregator, Tensor};

/// Largest pattern accepted by [`count_substructure`].
pub const MAX_PATTERN_NODES: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub values: Tensor,
    pub names: Vec<String>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, names: Vec<String>) -> Result<Self> {
        if values.len() != names.len() {
            return Err(Error::Usage(format!("{} values but {} names", values.len(), names.len())));
        }
        if names.iter().collect::<BTreeSet<_>>().len() != names.len() {
            return Err(Error::Usage("feature names must be unique".into()));
        }
        Ok(FeatureVector {
            values: Tensor::row(values)?,
            names,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values.get(0, i))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternKind {
    Path,
    Cycle,
    LabeledMotif,
}

impl PatternKind {
    fn tag(self) -> &'static str {
        match self {
            PatternKind::Path => "path",
            PatternKind::Cycle => "cycle",
            PatternKind::LabeledMotif => "labeled-motif",
        }
    }
}

/// A small connected pattern graph. `None` labels match any node.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgraphPattern {
    pub labels: Vec<Option<String>>,
    pub edges: Vec<(usize, usize)>,
    pub kind: PatternKind,
}

impl SubgraphPattern {
    pub fn new(labels: Vec<Option<String>>, edges: Vec<(usize, usize)>, kind: PatternKind) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::Usage("pattern needs at least one node".into()));
        }
        let mut seen = BTreeSet::new();
        for &(a, b) in &edges {
            if a >= n || b >= n || a == b {
                return Err(Error::Usage(format!("pattern edge ({a},{b}) is invalid for {n} nodes")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(Error::Usage(format!("pattern edge ({a},{b}) repeated")));
            }
        }
        let p = SubgraphPattern { labels, edges, kind };
        if !p.is_connected() {
            return Err(Error::Usage("pattern must be connected".into()));
        }
        Ok(p)
    }

    /// Unlabelled path on `n` nodes; `path(2)` is the single-edge pattern.
    pub fn path(n: usize) -> Result<Self> {
        SubgraphPattern::new(vec![None; n], (1..n).map(|i| (i - 1, i)).collect(), PatternKind::Path)
    }

    pub fn cycle(n: usize) -> Result<Self> {
        SubgraphPattern::labeled_cycle(vec![None; n])
    }

    /// Ring whose `i`-th node carries `labels[i]`, e.g. a pyranose ring
    /// `[O, C, C, C, C, C]`.
    pub fn labeled_cycle(labels: Vec<Option<String>>) -> Result<Self> {
        let n = labels.len();
        if n < 3 {
            return Err(Error::Usage("a cycle needs at least 3 nodes".into()));
        }
        SubgraphPattern::new(labels, (0..n).map(|i| (i, (i + 1) % n)).collect(), PatternKind::Cycle)
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    fn adjacency(&self) -> Vec<Vec<bool>> {
        let n = self.num_nodes();
        let mut adj = vec![vec![false; n]; n];
        for &(a, b) in &self.edges {
            adj[a][b] = true;
            adj[b][a] = true;
        }
        adj
    }

    fn is_connected(&self) -> bool {
        let adj = self.adjacency();
        let mut seen = vec![false; adj.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..adj.len() {
                if adj[u][v] && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Relabelling-independent string: the lexicographically smallest
    /// `kind|labels|upper-triangle bits` over all node orderings.
    pub fn canonical_form(&self) -> String {
        let n = self.num_nodes();
        let adj = self.adjacency();
        let mut order: Vec<usize> = (0..n).collect();
        let mut best: Option<String> = None;
        permutations(&mut order, 0, &mut |perm| {
            let labels: Vec<&str> = perm.iter().map(|&i| self.labels[i].as_deref().unwrap_or("*")).collect();
            let mut bits = String::with_capacity(n * n / 2);
            for i in 0..n {
                for j in (i + 1)..n {
                    bits.push(if adj[perm[i]][perm[j]] { '1' } else { '0' });
                }
            }
            let s = format!("{}|{}|{}", self.kind.tag(), labels.join(","), bits);
            if best.as_ref().map_or(true, |b| s < *b) {
                best = Some(s);
            }
        });
        best.expect("pattern has at least one node")
    }
}

fn permutations(v: &mut [usize], k: usize, f: &mut impl FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permutations(v, k + 1, f);
        v.swap(k, i);
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// One node column of `g` reduced with `agg`.
pub fn aggregate_node_column(g: &GraphTensor, column: &str, agg: Aggregator) -> Result<f64> {
    let c = g.node_column_index(column)?;
    let col = Tensor::column(g.nodes.column_values(c))?;
    col.aggregate(agg)?.item()
}

/// Every `(column, aggregator)` statistic plus node and edge counts, named
/// `column:aggregator`, `num_nodes`, `num_edges`.
pub fn graph_statistics(g: &GraphTensor, columns: &[&str], aggs: &[Aggregator]) -> Result<FeatureVector> {
    let mut values = Vec::new();
    let mut names = Vec::new();
    for col in columns {
        for &agg in aggs {
            values.push(aggregate_node_column(g, col, agg)?);
            names.push(format!("{col}:{}", agg.name()));
        }
    }
    values.push(g.num_nodes() as f64);
    names.push("num_nodes".into());
    values.push(g.num_edges() as f64);
    names.push("num_edges".into());
    FeatureVector::new(values, names)
}

struct Matcher<'a> {
    pattern: &'a SubgraphPattern,
    p_adj: Vec<Vec<bool>>,
    g_adj: Vec<Vec<bool>>,
    g_nb: Vec<Vec<usize>>,
    labels: Option<&'a [String]>,
    order: Vec<usize>,
    anchor: Vec<Option<usize>>,
    map: Vec<usize>,
    used: Vec<bool>,
    found: BTreeSet<Vec<usize>>,
}

impl Matcher<'_> {
    fn label_ok(&self, pu: usize, gv: usize) -> bool {
        match &self.pattern.labels[pu] {
            None => true,
            Some(l) => self.labels.is_some_and(|ls| &ls[gv] == l),
        }
    }

    fn extend(&mut self, depth: usize) {
        if depth == self.order.len() {
            let mut set: Vec<usize> = self.map.clone();
            set.sort_unstable();
            self.found.insert(set);
            return;
        }
        let pu = self.order[depth];
        let candidates: Vec<usize> = match self.anchor[depth] {
            Some(pa) => self.g_nb[self.map[pa]].clone(),
            None => (0..self.g_adj.len()).collect(),
        };
        for gv in candidates {
            if self.used[gv] || !self.label_ok(pu, gv) {
                continue;
            }
            let consistent = self.order[..depth]
                .iter()
                .all(|&pq| self.p_adj[pu][pq] == self.g_adj[gv][self.map[pq]]);
            if !consistent {
                continue;
            }
            self.used[gv] = true;
            self.map[pu] = gv;
            self.extend(depth + 1);
            self.used[gv] = false;
        }
    }
}

/// Number of distinct node sets of `g` whose induced subgraph matches `p`
/// with labels equal. Edge direction is ignored. Patterns larger than the
/// graph give 0.
pub fn count_substructure(g: &GraphTensor, p: &SubgraphPattern) -> Result<usize> {
    let k = p.num_nodes();
    if k > MAX_PATTERN_NODES {
        return Err(Error::Usage(format!("pattern has {k} nodes, limit is {MAX_PATTERN_NODES}")));
    }
    let n = g.num_nodes();
    if k > n {
        return Ok(0);
    }
    let nb = g.connectivity.neighbor_sets();
    let mut g_adj = vec![vec![false; n]; n];
    for (u, set) in nb.iter().enumerate() {
        for &v in set {
            g_adj[u][v] = true;
        }
    }
    // BFS order so every node after the first has an already-placed neighbour.
    let p_adj = p.adjacency();
    let mut order = vec![0];
    let mut anchor = vec![None];
    let mut placed = vec![false; k];
    placed[0] = true;
    let mut head = 0;
    while head < order.len() {
        let u = order[head];
        for v in 0..k {
            if p_adj[u][v] && !placed[v] {
                placed[v] = true;
                order.push(v);
                anchor.push(Some(u));
            }
        }
        head += 1;
    }
    let mut m = Matcher {
        pattern: p,
        p_adj,
        g_adj,
        g_nb: nb.into_iter().map(|s| s.into_iter().collect()).collect(),
        labels: g.node_labels.as_deref(),
        order,
        anchor,
        map: vec![usize::MAX; k],
        used: vec![false; n],
        found: BTreeSet::new(),
    };
    m.extend(0);
    Ok(m.found.len())
}

/// Presence indicator companion to [`count_substructure`].
pub fn has_substructure(g: &GraphTensor, p: &SubgraphPattern) -> Result<bool> {
    Ok(count_substructure(g, p)? > 0)
}

/// Bucket of a pattern in a fingerprint of width `size`.
pub fn fingerprint_bucket(p: &SubgraphPattern, size: usize) -> usize {
    (fnv1a64(p.canonical_form().as_bytes()) % size as u64) as usize
}

/// Substructure counts folded into `size` buckets; colliding patterns add.
pub fn fingerprint(g: &GraphTensor, patterns: &[SubgraphPattern], size: usize) -> Result<FeatureVector> {
    if size == 0 {
        return Err(Error::Usage("fingerprint size must be at least 1".into()));
    }
    let mut buckets = vec![0.0; size];
    for p in patterns {
        buckets[fingerprint_bucket(p, size)] += count_substructure(g, p)? as f64;
    }
    FeatureVector::new(buckets, (0..size).map(|i| format!("fp{i}")).collect())
}
