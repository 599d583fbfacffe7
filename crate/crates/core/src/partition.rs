//! Balanced shard assignment over the training graph.
//!
//! All three methods enforce the same balancing principle: rank node-shard
//! pairs by a preference value, then satisfy them greedily subject to a
//! per-shard capacity `delta`. The preference is the within-shard neighbor
//! count for label propagation and the negative embedding-centroid distance
//! for k-means; random assignment is the baseline that ignores the graph.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GerkError, Result};
use crate::graph::Graph;

/// Shard assignment method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMethod {
    Random,
    Blpa,
    Bekm,
}

impl std::fmt::Display for PartitionMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PartitionMethod::Random => write!(f, "random"),
            PartitionMethod::Blpa => write!(f, "blpa"),
            PartitionMethod::Bekm => write!(f, "bekm"),
        }
    }
}

/// Configuration shared by all partitioners.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub method: PartitionMethod,
    pub k: usize,
    /// Slack factor for the capacity: `delta = ceil(gamma * n / k)`.
    pub gamma: f64,
    /// Maximum number of iterations.
    pub max_iters: usize,
    pub seed: u64,
    /// Convergence tolerance on centroid movement (k-means only).
    pub bekm_tol: f64,
    /// When set, a label-propagation move must strictly beat the node's
    /// neighbor count in its current shard; by default ties also move.
    pub blpa_strict_improve: bool,
}

impl PartitionConfig {
    pub fn new(method: PartitionMethod, k: usize, seed: u64) -> Self {
        PartitionConfig {
            method,
            k,
            gamma: 1.0,
            max_iters: 30,
            seed,
            bekm_tol: 1e-6,
            blpa_strict_improve: false,
        }
    }

    pub fn delta_for(&self, n: usize) -> usize {
        ((self.gamma * n as f64) / self.k as f64).ceil() as usize
    }

    fn validate(&self, n: usize) -> Result<usize> {
        if self.k == 0 {
            return Err(GerkError::InvalidConfig("k must be at least 1".into()));
        }
        if self.gamma < 1.0 {
            return Err(GerkError::InvalidConfig(format!(
                "gamma must be >= 1, got {}",
                self.gamma
            )));
        }
        if self.max_iters == 0 {
            return Err(GerkError::InvalidConfig("max_iters must be at least 1".into()));
        }
        if self.k > n {
            return Err(GerkError::Infeasible(format!("k = {} exceeds node count {n}", self.k)));
        }
        let delta = self.delta_for(n);
        if self.k * delta < n {
            return Err(GerkError::Infeasible(format!(
                "k * delta = {} cannot hold {n} nodes",
                self.k * delta
            )));
        }
        Ok(delta)
    }
}

/// A balanced node-to-shard map over `n` training nodes (local ids `0..n`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShardAssignment {
    pub k: usize,
    pub delta: usize,
    pub method: PartitionMethod,
    pub seed: u64,
    /// Shard id per node, indexed by local node id.
    pub assign: Vec<usize>,
    pub iterations_run: usize,
    pub converged: bool,
}

impl ShardAssignment {
    /// Node ids per shard, each list sorted.
    pub fn shards(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (node, &shard) in self.assign.iter().enumerate() {
            out[shard].push(node);
        }
        out
    }

    pub fn shard_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &s in &self.assign {
            sizes[s] += 1;
        }
        sizes
    }

    /// Asserts the balance contract: total map, every shard within capacity.
    pub fn validate(&self) -> Result<()> {
        if self.assign.iter().any(|&s| s >= self.k) {
            return Err(GerkError::Format("shard id out of range".into()));
        }
        let sizes = self.shard_sizes();
        if let Some((shard, &size)) = sizes.iter().enumerate().find(|(_, &s)| s > self.delta) {
            return Err(GerkError::Format(format!(
                "shard {shard} holds {size} nodes, capacity {}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// One reassignment candidate: move `node` from `src` to `dst`, where `xi`
/// counts the node's neighbors already inside `dst`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReassignmentProfile {
    pub node: usize,
    pub src: usize,
    pub dst: usize,
    pub xi: usize,
}

/// Accounting record for an accepted label-propagation move.
#[derive(Debug, Clone, Copy)]
pub struct MoveRecord {
    pub iteration: usize,
    pub node: usize,
    pub src: usize,
    pub dst: usize,
    /// Neighbor count in the destination shard, from the iteration snapshot.
    pub xi_dst: usize,
    /// Neighbor count in the source shard, from the same snapshot.
    pub xi_src: usize,
}

/// Random balanced baseline: shuffle by seed, deal round-robin.
/// Shard sizes differ by at most one; capacity is recorded as `ceil(n/k)`.
pub fn random_partition(n: usize, k: usize, seed: u64) -> Result<ShardAssignment> {
    if k == 0 {
        return Err(GerkError::InvalidConfig("k must be at least 1".into()));
    }
    if k > n {
        return Err(GerkError::Infeasible(format!("k = {k} exceeds node count {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut assign = vec![0usize; n];
    for (pos, &node) in order.iter().enumerate() {
        assign[node] = pos % k;
    }
    Ok(ShardAssignment {
        k,
        delta: n.div_ceil(k),
        method: PartitionMethod::Random,
        seed,
        assign,
        iterations_run: 1,
        converged: true,
    })
}

/// Capacity-constrained label propagation over the training graph.
///
/// Starts from a seeded balanced random assignment, then repeats: build the
/// reassignment profiles from the current assignment, sort them by neighbor
/// count descending (ties by node id, then shard id), and scan. A profile
/// executes iff the node has not been settled this iteration, the destination
/// has room under the live shard sizes, and the destination neighbor count is
/// at least the node's neighbor count in its own shard (strictly greater
/// under `blpa_strict_improve`). Stops when an iteration performs no move or
/// the iteration cap is reached.
pub fn blpa(g_train: &Graph, cfg: &PartitionConfig) -> Result<ShardAssignment> {
    let init = random_partition(g_train.node_count(), cfg.k, cfg.seed)?;
    blpa_from_initial(g_train, init.assign, cfg).map(|(a, _)| a)
}

/// Label propagation from an explicit initial assignment. Returns the move
/// trace alongside the assignment so the preference invariant is checkable.
pub fn blpa_from_initial(
    g_train: &Graph,
    initial: Vec<usize>,
    cfg: &PartitionConfig,
) -> Result<(ShardAssignment, Vec<MoveRecord>)> {
    let n = g_train.node_count();
    let delta = cfg.validate(n)?;
    if initial.len() != n {
        return Err(GerkError::InvalidConfig(format!(
            "initial assignment covers {} nodes, graph has {n}",
            initial.len()
        )));
    }
    if initial.iter().any(|&s| s >= cfg.k) {
        return Err(GerkError::InvalidConfig("initial shard id out of range".into()));
    }

    let mut assign = initial;
    let mut sizes = vec![0usize; cfg.k];
    for &s in &assign {
        sizes[s] += 1;
    }

    let mut moves = Vec::new();
    let mut iterations_run = 0;
    let mut converged = false;

    for iteration in 1..=cfg.max_iters {
        iterations_run = iteration;
        let snapshot = assign.clone();

        // Step 2: one profile per (node, neighbor shard) pair.
        let mut profiles: Vec<ReassignmentProfile> = Vec::new();
        let mut xi_src = vec![0usize; n];
        let mut counts = vec![0usize; cfg.k];
        for u in 0..n {
            let mut touched: Vec<usize> = Vec::new();
            for &v in g_train.neighbors(u) {
                let shard = snapshot[v];
                if counts[shard] == 0 {
                    touched.push(shard);
                }
                counts[shard] += 1;
            }
            touched.sort_unstable();
            let src = snapshot[u];
            for &shard in &touched {
                if shard == src {
                    xi_src[u] = counts[shard];
                } else {
                    profiles.push(ReassignmentProfile {
                        node: u,
                        src,
                        dst: shard,
                        xi: counts[shard],
                    });
                }
                counts[shard] = 0;
            }
        }

        // Step 3: descending preference, deterministic tie order.
        profiles.sort_unstable_by(|a, b| {
            b.xi
                .cmp(&a.xi)
                .then(a.node.cmp(&b.node))
                .then(a.dst.cmp(&b.dst))
        });

        // Step 4: greedy scan against live shard sizes; each node settles at
        // most once per iteration.
        let mut settled = vec![false; n];
        let mut any_move = false;
        for p in &profiles {
            if settled[p.node] {
                continue;
            }
            let wants_move = if cfg.blpa_strict_improve {
                p.xi > xi_src[p.node]
            } else {
                p.xi >= xi_src[p.node]
            };
            if !wants_move {
                // The stay option outranks every remaining profile of this
                // node, so it keeps its shard for the rest of the iteration.
                settled[p.node] = true;
                continue;
            }
            if sizes[p.dst] < delta {
                sizes[p.dst] += 1;
                sizes[p.src] -= 1;
                assign[p.node] = p.dst;
                settled[p.node] = true;
                any_move = true;
                moves.push(MoveRecord {
                    iteration,
                    node: p.node,
                    src: p.src,
                    dst: p.dst,
                    xi_dst: p.xi,
                    xi_src: xi_src[p.node],
                });
            }
        }

        if !any_move {
            converged = true;
            break;
        }
    }

    let out = ShardAssignment {
        k: cfg.k,
        delta,
        method: PartitionMethod::Blpa,
        seed: cfg.seed,
        assign,
        iterations_run,
        converged,
    };
    out.validate()?;
    Ok((out, moves))
}

/// Node embeddings aligned with training-node ids.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    pub embeddings: Array2<f64>,
}

impl EmbeddingSet {
    pub fn new(embeddings: Array2<f64>) -> Result<Self> {
        if !embeddings.iter().all(|v| v.is_finite()) {
            return Err(GerkError::Format("non-finite embedding entry".into()));
        }
        Ok(EmbeddingSet { embeddings })
    }

    pub fn len(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }
}

/// Capacity-constrained k-means over node embeddings.
///
/// Each iteration reassigns every node from scratch: all `n * k`
/// node-centroid distances are sorted ascending (ties by node id, then
/// centroid id) and scanned greedily, assigning each still-unassigned node to
/// the pair's centroid while that shard is below capacity. Centroids are then
/// recomputed as member means; an empty shard is reseeded from the point
/// farthest from its assigned centroid. Converges when no centroid moves more
/// than `bekm_tol`.
pub fn bekm(emb: &EmbeddingSet, cfg: &PartitionConfig) -> Result<ShardAssignment> {
    let n = emb.len();
    let d = emb.dim();
    let delta = cfg.validate(n)?;
    let k = cfg.k;

    // Initial centroids: k distinct member embeddings, chosen by seeded
    // farthest-point traversal. Uniform sampling can start two centroids in
    // the same cluster and collapse them onto one coordinate, a fixed point
    // the update rule never escapes.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let first = rand::Rng::gen_range(&mut rng, 0..n);
    let mut chosen = vec![first];
    let mut nearest2: Vec<f64> = (0..n)
        .map(|u| {
            emb.embeddings
                .row(u)
                .iter()
                .zip(emb.embeddings.row(first))
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        })
        .collect();
    nearest2[first] = -1.0;
    while chosen.len() < k {
        let far = (0..n)
            .max_by(|&a, &b| nearest2[a].partial_cmp(&nearest2[b]).unwrap().then(b.cmp(&a)))
            .unwrap();
        chosen.push(far);
        nearest2[far] = -1.0; // never re-pick a chosen node
        for u in 0..n {
            if nearest2[u] < 0.0 {
                continue;
            }
            let d2: f64 = emb
                .embeddings
                .row(u)
                .iter()
                .zip(emb.embeddings.row(far))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            nearest2[u] = nearest2[u].min(d2);
        }
    }
    let mut centroids = Array2::zeros((k, d));
    for (j, &node) in chosen.iter().enumerate() {
        centroids.row_mut(j).assign(&emb.embeddings.row(node));
    }

    let mut assign = vec![0usize; n];
    let mut iterations_run = 0;
    let mut converged = false;

    for _iteration in 1..=cfg.max_iters {
        iterations_run += 1;

        // All node-centroid pairs, ascending distance.
        let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * k);
        for u in 0..n {
            for j in 0..k {
                pairs.push((dist2_to(&emb.embeddings, u, &centroids, j), u, j));
            }
        }
        pairs.sort_unstable_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap()
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });

        let mut sizes = vec![0usize; k];
        let mut placed = vec![false; n];
        let mut remaining = n;
        for &(_, u, j) in &pairs {
            if remaining == 0 {
                break;
            }
            if placed[u] || sizes[j] >= delta {
                continue;
            }
            assign[u] = j;
            placed[u] = true;
            sizes[j] += 1;
            remaining -= 1;
        }
        debug_assert_eq!(remaining, 0, "capacity k*delta >= n guarantees full assignment");

        // Empty shards steal the point that fits its current shard worst.
        for j in 0..k {
            if sizes[j] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&u| sizes[assign[u]] > 1)
                .max_by(|&a, &b| {
                    let da = dist2_to(&emb.embeddings, a, &centroids, assign[a]);
                    let db = dist2_to(&emb.embeddings, b, &centroids, assign[b]);
                    da.partial_cmp(&db).unwrap().then(a.cmp(&b))
                })
                .expect("n >= k guarantees a donor shard with more than one node");
            log::debug!("reseeding empty shard {j} from node {far}");
            sizes[assign[far]] -= 1;
            assign[far] = j;
            sizes[j] = 1;
        }

        // Centroid update: mean of members.
        let mut next = Array2::zeros((k, d));
        for u in 0..n {
            let mut row = next.row_mut(assign[u]);
            row += &emb.embeddings.row(u);
        }
        let mut max_shift2 = 0.0f64;
        for j in 0..k {
            let mut row = next.row_mut(j);
            row /= sizes[j] as f64;
            let shift2: f64 = row
                .iter()
                .zip(centroids.row(j))
                .map(|(a, c)| (a - c) * (a - c))
                .sum();
            max_shift2 = max_shift2.max(shift2);
        }
        centroids = next;

        if max_shift2.sqrt() <= cfg.bekm_tol {
            converged = true;
            break;
        }
    }

    let out = ShardAssignment {
        k,
        delta,
        method: PartitionMethod::Bekm,
        seed: cfg.seed,
        assign,
        iterations_run,
        converged,
    };
    out.validate()?;
    Ok(out)
}

fn dist2_to(emb: &Array2<f64>, node: usize, centroids: &Array2<f64>, j: usize) -> f64 {
    emb.row(node)
        .iter()
        .zip(centroids.row(j))
        .map(|(a, c)| (a - c) * (a - c))
        .sum()
}

/// Dispatch by configured method. Embeddings are required for k-means and
/// ignored otherwise.
pub fn partition(
    g_train: &Graph,
    embeddings: Option<&EmbeddingSet>,
    cfg: &PartitionConfig,
) -> Result<ShardAssignment> {
    match cfg.method {
        PartitionMethod::Random => random_partition(g_train.node_count(), cfg.k, cfg.seed),
        PartitionMethod::Blpa => blpa(g_train, cfg),
        PartitionMethod::Bekm => {
            let emb = embeddings.ok_or_else(|| {
                GerkError::InvalidConfig("bekm partition requires node embeddings".into())
            })?;
            if emb.len() != g_train.node_count() {
                return Err(GerkError::DimensionMismatch(format!(
                    "{} embeddings for {} nodes",
                    emb.len(),
                    g_train.node_count()
                )));
            }
            bekm(emb, cfg)
        }
    }
}
