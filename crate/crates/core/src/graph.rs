//! Graph data model, ingestion, synthetic generation, splits, and deletion.
//!
//! Graphs are undirected, simple (no self-loops, no parallel edges), and
//! immutable after construction: every mutation returns a new graph. Node ids
//! are always dense `0..n`, so matrix rows stay aligned with node ids; the
//! operations that drop nodes return an id map alongside the new graph.

use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GerkError, Result};

/// Format tag written into every graph snapshot.
pub const GRAPH_FORMAT: &str = "gerk-graph-v1";

/// Undirected attributed graph with dense node ids `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    /// Sorted, duplicate-free neighbor list per node; symmetric.
    adj: Vec<Vec<usize>>,
    /// Feature matrix, one row per node.
    x: Array2<f64>,
    /// Label per node, in `0..num_classes`.
    y: Vec<usize>,
    num_classes: usize,
}

impl Graph {
    /// Builds a graph from symmetric parts, checking every invariant.
    pub fn new(adj: Vec<Vec<usize>>, x: Array2<f64>, y: Vec<usize>, num_classes: usize) -> Result<Self> {
        let g = Graph { adj, x, y, num_classes };
        g.validate()?;
        Ok(g)
    }

    /// Builds a graph from an undirected edge list. Self-loops and duplicate
    /// edges are dropped silently; use [`load_graph`] when drop counts matter.
    pub fn from_edges(
        n: usize,
        edges: &[(usize, usize)],
        x: Array2<f64>,
        y: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(GerkError::InvalidRequest(format!(
                    "edge ({u}, {v}) references a node outside 0..{n}"
                )));
            }
            if u == v {
                continue;
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        for nbrs in &mut adj {
            nbrs.sort_unstable();
            nbrs.dedup();
        }
        Graph::new(adj, x, y, num_classes)
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.adj[u]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.adj[u].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.adj.len() && self.adj[u].binary_search(&v).is_ok()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn labels(&self) -> &[usize] {
        &self.y
    }

    pub fn label(&self, u: usize) -> usize {
        self.y[u]
    }

    /// Undirected edge list with `u < v`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (u, nbrs) in self.adj.iter().enumerate() {
            for &v in nbrs {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Full-scan check of every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let n = self.adj.len();
        if self.x.nrows() != n {
            return Err(GerkError::DimensionMismatch(format!(
                "feature matrix has {} rows for {} nodes",
                self.x.nrows(),
                n
            )));
        }
        if self.y.len() != n {
            return Err(GerkError::DimensionMismatch(format!(
                "{} labels for {} nodes",
                self.y.len(),
                n
            )));
        }
        if !self.x.iter().all(|v| v.is_finite()) {
            return Err(GerkError::Format("non-finite feature entry".into()));
        }
        for (u, &label) in self.y.iter().enumerate() {
            if label >= self.num_classes {
                return Err(GerkError::Format(format!(
                    "node {u} has label {label} outside 0..{}",
                    self.num_classes
                )));
            }
        }
        for (u, nbrs) in self.adj.iter().enumerate() {
            for w in nbrs.windows(2) {
                if w[0] >= w[1] {
                    return Err(GerkError::Format(format!(
                        "neighbor list of {u} is not sorted/duplicate-free"
                    )));
                }
            }
            for &v in nbrs {
                if v >= n {
                    return Err(GerkError::Format(format!("node {u} links to unknown node {v}")));
                }
                if v == u {
                    return Err(GerkError::Format(format!("self-loop at node {u}")));
                }
                if self.adj[v].binary_search(&u).is_err() {
                    return Err(GerkError::Format(format!(
                        "asymmetric edge: {v} in N({u}) but {u} not in N({v})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Induced subgraph on `nodes`, re-indexed densely.
    ///
    /// Keeps exactly the edges with both endpoints in the set; features and
    /// labels are carried over. The returned map translates between the old
    /// and new id spaces.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<(Graph, IdMap)> {
        let n = self.adj.len();
        let mut kept = nodes.to_vec();
        kept.sort_unstable();
        kept.dedup();
        if let Some(&bad) = kept.iter().find(|&&u| u >= n) {
            return Err(GerkError::InvalidRequest(format!("unknown node id {bad}")));
        }
        let mut new_of_old = vec![usize::MAX; n];
        for (new, &old) in kept.iter().enumerate() {
            new_of_old[old] = new;
        }
        let m = kept.len();
        let mut adj = vec![Vec::new(); m];
        let mut x = Array2::zeros((m, self.x.ncols()));
        let mut y = vec![0usize; m];
        for (new, &old) in kept.iter().enumerate() {
            x.row_mut(new).assign(&self.x.row(old));
            y[new] = self.y[old];
            for &v in &self.adj[old] {
                if new_of_old[v] != usize::MAX {
                    adj[new].push(new_of_old[v]);
                }
            }
            // source list was sorted by old id; order is preserved under the
            // monotone old->new map
        }
        let graph = Graph {
            adj,
            x,
            y,
            num_classes: self.num_classes,
        };
        Ok((graph, IdMap { old_of_new: kept, new_of_old }))
    }

    /// Removes a node, its feature row, its label, and all incident edges.
    /// Remaining nodes are re-indexed densely; the map records the shift.
    pub fn delete_node(&self, u: usize) -> Result<(Graph, IdMap)> {
        if u >= self.adj.len() {
            return Err(GerkError::InvalidRequest(format!("unknown node id {u}")));
        }
        let keep: Vec<usize> = (0..self.adj.len()).filter(|&v| v != u).collect();
        self.induced_subgraph(&keep)
    }

    /// Removes one undirected edge. Node ids, features, and labels are
    /// untouched. An absent edge is an error: it signals a bad request.
    pub fn delete_edge(&self, u: usize, v: usize) -> Result<Graph> {
        if u >= self.adj.len() || v >= self.adj.len() {
            return Err(GerkError::InvalidRequest(format!(
                "edge ({u}, {v}) references an unknown node"
            )));
        }
        if !self.has_edge(u, v) {
            return Err(GerkError::InvalidRequest(format!("edge ({u}, {v}) does not exist")));
        }
        let mut adj = self.adj.clone();
        adj[u].retain(|&w| w != v);
        adj[v].retain(|&w| w != u);
        Ok(Graph {
            adj,
            x: self.x.clone(),
            y: self.y.clone(),
            num_classes: self.num_classes,
        })
    }

    /// Content hash covering structure, features, and labels. Used by the
    /// unlearning audit to detect stale shard models.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.adj.len() as u64).to_le_bytes());
        h.update((self.num_classes as u64).to_le_bytes());
        h.update((self.x.ncols() as u64).to_le_bytes());
        for nbrs in &self.adj {
            h.update((nbrs.len() as u64).to_le_bytes());
            for &v in nbrs {
                h.update((v as u64).to_le_bytes());
            }
        }
        for v in self.x.iter() {
            h.update(v.to_le_bytes());
        }
        for &label in &self.y {
            h.update((label as u64).to_le_bytes());
        }
        let digest = h.finalize();
        let mut out = String::with_capacity(64);
        for b in digest {
            let _ = write!(out, "{b:02x}");
        }
        out
    }
}

/// Translation between an old id space and the dense id space of a derived
/// graph (induced subgraph or post-deletion graph).
#[derive(Debug, Clone)]
pub struct IdMap {
    /// `old_of_new[new] = old`.
    pub old_of_new: Vec<usize>,
    /// `new_of_old[old] = new`, or `usize::MAX` for dropped nodes.
    pub new_of_old: Vec<usize>,
}

impl IdMap {
    pub fn to_new(&self, old: usize) -> Option<usize> {
        match self.new_of_old.get(old) {
            Some(&new) if new != usize::MAX => Some(new),
            _ => None,
        }
    }

    pub fn to_old(&self, new: usize) -> usize {
        self.old_of_new[new]
    }
}

/// Disjoint train/test node sets produced by [`split_train_test`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeSplit {
    pub train_nodes: Vec<usize>,
    pub test_nodes: Vec<usize>,
    pub seed: u64,
}

/// Uniform random split; `|train| = round(ratio * n)`.
pub fn split_train_test(g: &Graph, ratio: f64, seed: u64) -> Result<NodeSplit> {
    split_train_test_with(g, ratio, seed, false)
}

/// Split with optional per-class stratification.
pub fn split_train_test_with(g: &Graph, ratio: f64, seed: u64, stratified: bool) -> Result<NodeSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(GerkError::InvalidConfig(format!(
            "split ratio must lie in (0, 1), got {ratio}"
        )));
    }
    let n = g.node_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    if stratified {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); g.num_classes()];
        for u in 0..n {
            by_class[g.label(u)].push(u);
        }
        for class_nodes in &mut by_class {
            class_nodes.shuffle(&mut rng);
            let take = (ratio * class_nodes.len() as f64).round() as usize;
            train.extend_from_slice(&class_nodes[..take.min(class_nodes.len())]);
        }
    } else {
        let mut ids: Vec<usize> = (0..n).collect();
        ids.shuffle(&mut rng);
        let take = (ratio * n as f64).round() as usize;
        train.extend_from_slice(&ids[..take.min(n)]);
    }
    let mut in_train = vec![false; n];
    for &u in &train {
        in_train[u] = true;
    }
    let test: Vec<usize> = (0..n).filter(|&u| !in_train[u]).collect();
    train.sort_unstable();
    Ok(NodeSplit {
        train_nodes: train,
        test_nodes: test,
        seed,
    })
}

/// How node labels are derived in a generated block-model graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    /// Label = block id: the block structure is part of the ground truth.
    BlockId,
    /// Label = nearest block centroid of the noisy feature vector: labels
    /// carry feature information only, structure is incidental.
    NearestCentroid,
}

/// Stochastic block model spec for the synthetic test bed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SbmSpec {
    pub blocks: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub label_rule: LabelRule,
    /// Stddev of Gaussian noise added around each block centroid.
    pub feature_noise: f64,
    /// Scale of the block centroids; 0 makes features carry no block signal.
    #[serde(default = "default_centroid_scale")]
    pub centroid_scale: f64,
    pub seed: u64,
}

fn default_centroid_scale() -> f64 {
    1.0
}

impl SbmSpec {
    fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() || self.blocks.iter().any(|&b| b == 0) {
            return Err(GerkError::InvalidConfig("block sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.p_out)
            || !(0.0..=1.0).contains(&self.p_in)
            || self.p_out > self.p_in
        {
            return Err(GerkError::InvalidConfig(format!(
                "need 0 <= p_out <= p_in <= 1, got p_in={} p_out={}",
                self.p_in, self.p_out
            )));
        }
        if self.feature_dim == 0 {
            return Err(GerkError::InvalidConfig("feature_dim must be positive".into()));
        }
        if self.feature_noise < 0.0 || self.centroid_scale < 0.0 {
            return Err(GerkError::InvalidConfig(
                "feature_noise and centroid_scale must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Generates a stochastic block model graph with Gaussian block features.
/// Deterministic for a fixed spec (including seed).
pub fn generate_sbm(spec: &SbmSpec) -> Result<Graph> {
    spec.validate()?;
    let n: usize = spec.blocks.iter().sum();
    let k = spec.blocks.len();
    let mut block_of = vec![0usize; n];
    {
        let mut next = 0usize;
        for (b, &size) in spec.blocks.iter().enumerate() {
            for _ in 0..size {
                block_of[next] = b;
                next += 1;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut centroids = Array2::zeros((k, spec.feature_dim));
    for b in 0..k {
        for d in 0..spec.feature_dim {
            centroids[[b, d]] = spec.centroid_scale * gaussian(&mut rng);
        }
    }

    let mut x = Array2::zeros((n, spec.feature_dim));
    for u in 0..n {
        for d in 0..spec.feature_dim {
            x[[u, d]] = centroids[[block_of[u], d]] + spec.feature_noise * gaussian(&mut rng);
        }
    }

    let y: Vec<usize> = match spec.label_rule {
        LabelRule::BlockId => block_of.clone(),
        LabelRule::NearestCentroid => (0..n)
            .map(|u| {
                let row = x.row(u);
                (0..k)
                    .min_by(|&a, &b| {
                        let da: f64 = row
                            .iter()
                            .zip(centroids.row(a))
                            .map(|(p, c)| (p - c) * (p - c))
                            .sum();
                        let db: f64 = row
                            .iter()
                            .zip(centroids.row(b))
                            .map(|(p, c)| (p - c) * (p - c))
                            .sum();
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap()
            })
            .collect(),
    };

    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if block_of[u] == block_of[v] { spec.p_in } else { spec.p_out };
            if p >= 1.0 || (p > 0.0 && rng.gen::<f64>() < p) {
                edges.push((u, v));
            }
        }
    }

    Graph::from_edges(n, &edges, x, y, k)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; two uniforms per draw keeps the stream simple to reason about.
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Counts of lines dropped during ingestion, reported via the log.
#[derive(Debug, Default, Clone, Copy)]
struct IngestWarnings {
    self_loops: usize,
    duplicates: usize,
}

/// Loads a graph from a node CSV (`id,label,f0,...`) and a whitespace edge
/// list (`u v` per line, `#` comments). Edges are symmetrized; duplicate
/// edges and self-loops are dropped with a warning count.
pub fn load_graph(node_file: &Path, edge_file: &Path) -> Result<Graph> {
    let node_name = node_file.display().to_string();
    let edge_name = edge_file.display().to_string();
    let node_text =
        std::fs::read_to_string(node_file).map_err(|e| GerkError::io(&node_name, e))?;
    let edge_text =
        std::fs::read_to_string(edge_file).map_err(|e| GerkError::io(&edge_name, e))?;

    let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    let mut feature_dim: Option<usize> = None;
    for (idx, line) in node_text.lines().enumerate() {
        let line_no = idx + 1;
        if idx == 0 {
            let header = line.trim();
            if !header.starts_with("id,label") {
                return Err(GerkError::parse(
                    &node_name,
                    line_no,
                    format!("expected header starting with 'id,label', got '{header}'"),
                ));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(GerkError::parse(&node_name, line_no, "expected at least id,label"));
        }
        let id: usize = fields[0]
            .parse()
            .map_err(|_| GerkError::parse(&node_name, line_no, format!("bad node id '{}'", fields[0])))?;
        let label: usize = fields[1]
            .parse()
            .map_err(|_| GerkError::parse(&node_name, line_no, format!("bad label '{}'", fields[1])))?;
        let feats: Vec<f64> = fields[2..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| GerkError::parse(&node_name, line_no, format!("bad feature '{f}'")))
            })
            .collect::<Result<_>>()?;
        match feature_dim {
            None => feature_dim = Some(feats.len()),
            Some(d) if d != feats.len() => {
                return Err(GerkError::parse(
                    &node_name,
                    line_no,
                    format!("row has {} features, expected {d}", feats.len()),
                ));
            }
            _ => {}
        }
        rows.push((id, label, feats));
    }
    if rows.is_empty() {
        return Err(GerkError::parse(&node_name, 1, "no node rows"));
    }

    let n = rows.len();
    let d = feature_dim.unwrap_or(0);
    let mut seen = vec![false; n];
    let mut x = Array2::zeros((n, d));
    let mut y = vec![0usize; n];
    for (id, label, feats) in rows {
        if id >= n || seen[id] {
            return Err(GerkError::parse(
                &node_name,
                0,
                format!("node ids must be contiguous 0..{n}; id {id} is out of range or repeated"),
            ));
        }
        seen[id] = true;
        y[id] = label;
        for (j, f) in feats.into_iter().enumerate() {
            x[[id, j]] = f;
        }
    }
    let num_classes = y.iter().copied().max().unwrap_or(0) + 1;

    let mut warnings = IngestWarnings::default();
    let mut adj = vec![Vec::new(); n];
    for (idx, line) in edge_text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut it = trimmed.split_whitespace();
        let (u, v) = match (it.next(), it.next(), it.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(GerkError::parse(
                    &edge_name,
                    line_no,
                    format!("expected 'u v', got '{trimmed}'"),
                ))
            }
        };
        let u: usize = u
            .parse()
            .map_err(|_| GerkError::parse(&edge_name, line_no, format!("bad node id '{u}'")))?;
        let v: usize = v
            .parse()
            .map_err(|_| GerkError::parse(&edge_name, line_no, format!("bad node id '{v}'")))?;
        if u >= n || v >= n {
            return Err(GerkError::parse(
                &edge_name,
                line_no,
                format!("edge ({u}, {v}) references a node absent from {node_name}"),
            ));
        }
        if u == v {
            warnings.self_loops += 1;
            continue;
        }
        if adj[u].contains(&v) {
            warnings.duplicates += 1;
            continue;
        }
        adj[u].push(v);
        adj[v].push(u);
    }
    if warnings.self_loops > 0 || warnings.duplicates > 0 {
        log::warn!(
            "{edge_name}: dropped {} self-loop(s) and {} duplicate edge line(s)",
            warnings.self_loops,
            warnings.duplicates
        );
    }
    for nbrs in &mut adj {
        nbrs.sort_unstable();
    }
    Graph::new(adj, x, y, num_classes)
}

#[derive(Serialize, Deserialize)]
struct SnapshotJson {
    format: String,
    n: usize,
    c: usize,
    d_x: usize,
    edges: Vec<(usize, usize)>,
    x: Vec<Vec<f64>>,
    y: Vec<usize>,
}

/// Writes a graph snapshot. `.json` extension selects the JSON container,
/// anything else the binary one; both carry the same version tag.
pub fn save_snapshot(g: &Graph, path: &Path) -> Result<()> {
    if path.extension().and_then(|e| e.to_str()) == Some("json") {
        let snap = SnapshotJson {
            format: GRAPH_FORMAT.to_string(),
            n: g.node_count(),
            c: g.num_classes(),
            d_x: g.feature_dim(),
            edges: g.edges(),
            x: g.x.rows().into_iter().map(|r| r.to_vec()).collect(),
            y: g.y.clone(),
        };
        let text = serde_json::to_string(&snap)
            .map_err(|e| GerkError::Format(format!("snapshot encode: {e}")))?;
        std::fs::write(path, text).map_err(|e| GerkError::io(path.display().to_string(), e))
    } else {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(GRAPH_FORMAT.as_bytes());
        buf.push(b'\n');
        let mut w = std::io::Cursor::new(&mut buf);
        w.set_position(GRAPH_FORMAT.len() as u64 + 1);
        w.write_u64::<LittleEndian>(g.node_count() as u64).unwrap();
        w.write_u64::<LittleEndian>(g.num_classes() as u64).unwrap();
        w.write_u64::<LittleEndian>(g.feature_dim() as u64).unwrap();
        let edges = g.edges();
        w.write_u64::<LittleEndian>(edges.len() as u64).unwrap();
        for (u, v) in edges {
            w.write_u64::<LittleEndian>(u as u64).unwrap();
            w.write_u64::<LittleEndian>(v as u64).unwrap();
        }
        for v in g.x.iter() {
            w.write_f64::<LittleEndian>(*v).unwrap();
        }
        for &label in &g.y {
            w.write_u64::<LittleEndian>(label as u64).unwrap();
        }
        std::fs::write(path, buf).map_err(|e| GerkError::io(path.display().to_string(), e))
    }
}

/// Reads a snapshot written by [`save_snapshot`], validating the version tag
/// and every graph invariant.
pub fn load_snapshot(path: &Path) -> Result<Graph> {
    let name = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|e| GerkError::io(&name, e))?;
    if path.extension().and_then(|e| e.to_str()) == Some("json") {
        let snap: SnapshotJson = serde_json::from_slice(&bytes)
            .map_err(|e| GerkError::Format(format!("{name}: snapshot decode: {e}")))?;
        if snap.format != GRAPH_FORMAT {
            return Err(GerkError::Format(format!(
                "{name}: unsupported snapshot format '{}'",
                snap.format
            )));
        }
        let mut x = Array2::zeros((snap.n, snap.d_x));
        if snap.x.len() != snap.n {
            return Err(GerkError::Format(format!("{name}: feature row count mismatch")));
        }
        for (i, row) in snap.x.iter().enumerate() {
            if row.len() != snap.d_x {
                return Err(GerkError::Format(format!("{name}: feature width mismatch at row {i}")));
            }
            for (j, v) in row.iter().enumerate() {
                x[[i, j]] = *v;
            }
        }
        Graph::from_edges(snap.n, &snap.edges, x, snap.y, snap.c)
    } else {
        let tag_len = GRAPH_FORMAT.len() + 1;
        if bytes.len() < tag_len || &bytes[..tag_len - 1] != GRAPH_FORMAT.as_bytes() {
            return Err(GerkError::Format(format!("{name}: missing snapshot format tag")));
        }
        let mut r = std::io::Cursor::new(&bytes[tag_len..]);
        let read_err = |e: std::io::Error| GerkError::io(&name, e);
        let n = r.read_u64::<LittleEndian>().map_err(read_err)? as usize;
        let c = r.read_u64::<LittleEndian>().map_err(read_err)? as usize;
        let d = r.read_u64::<LittleEndian>().map_err(read_err)? as usize;
        let m = r.read_u64::<LittleEndian>().map_err(read_err)? as usize;
        let mut edges = Vec::with_capacity(m);
        for _ in 0..m {
            let u = r.read_u64::<LittleEndian>().map_err(read_err)? as usize;
            let v = r.read_u64::<LittleEndian>().map_err(read_err)? as usize;
            edges.push((u, v));
        }
        let mut x = Array2::zeros((n, d));
        for i in 0..n {
            for j in 0..d {
                x[[i, j]] = r.read_f64::<LittleEndian>().map_err(read_err)?;
            }
        }
        let mut y = vec![0usize; n];
        for label in &mut y {
            *label = r.read_u64::<LittleEndian>().map_err(read_err)? as usize;
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest).map_err(read_err)?;
        if !rest.is_empty() {
            return Err(GerkError::Format(format!("{name}: trailing bytes in snapshot")));
        }
        Graph::from_edges(n, &edges, x, y, c)
    }
}

/// Lookup structure for membership tests over a node subset.
pub fn membership_mask(n: usize, nodes: &[usize]) -> Vec<bool> {
    let mut mask = vec![false; n];
    for &u in nodes {
        mask[u] = true;
    }
    mask
}

/// Adjusted Rand index between two labelings over the same nodes.
/// Used by partition-quality checks; 1.0 means identical clusterings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let ka = a.iter().copied().max().map_or(0, |m| m + 1);
    let kb = b.iter().copied().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    let mut row = vec![0u64; ka];
    let mut col = vec![0u64; kb];
    for i in 0..n {
        table[a[i]][b[i]] += 1;
        row[a[i]] += 1;
        col[b[i]] += 1;
    }
    let choose2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let sum_ij: f64 = table.iter().flatten().map(|&x| choose2(x)).sum();
    let sum_a: f64 = row.iter().map(|&x| choose2(x)).sum();
    let sum_b: f64 = col.iter().map(|&x| choose2(x)).sum();
    let total = choose2(n as u64);
    if total == 0.0 {
        return 1.0;
    }
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    if (max_index - expected).abs() < 1e-12 {
        return 1.0;
    }
    (sum_ij - expected) / (max_index - expected)
}

#[derive(Debug, Clone, Copy)]
struct _AssertSendSync<T: Send + Sync>(std::marker::PhantomData<T>);
type _GraphIsShareable = _AssertSendSync<Graph>;
