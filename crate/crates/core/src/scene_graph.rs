//! Semantic scene graphs over landmarks and two-stage graph matching:
//! spatial-layout candidates first, then semantic verification.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::association::Landmark;
use crate::features::FeatureError;
use crate::geometry::{translation_distance, wrap_angle, Pose};

#[derive(Clone, Debug, PartialEq)]
pub struct Vertex {
    pub id: u64,
    pub label: String,
    pub pose: Pose,
    pub dims: Vector3<f64>,
    pub hist: Vec<f64>,
    pub emb: Vec<f64>,
}

impl Vertex {
    pub fn from_landmark(lm: &Landmark) -> Self {
        Self {
            id: lm.id,
            label: lm.label.clone(),
            pose: lm.pose,
            dims: lm.dims,
            hist: lm.mean_hist(),
            emb: lm.mean_emb(),
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        *self.pose.translation()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    pub k_nn: usize,
    /// Layout difference threshold.
    pub delta: f64,
    /// Weight of geometric terms against appearance terms.
    pub mu: f64,
    /// Minimum semantic similarity for a verified match.
    pub tau: f64,
    /// Verified matches needed to declare a loop.
    pub min_matches: usize,
    /// Compare positions relative to each graph's vertex centroid instead of
    /// in the shared world frame.
    pub centroid_relative: bool,
    /// Use `exp(-|a . b|)` for the histogram and embedding terms instead of
    /// `exp(-|a - b|)`.
    pub literal_products: bool,
    /// Verified pairs must preserve inter-object distances within this many
    /// meters; 0 disables the check.
    pub consistency_tol: f64,
    /// Verified pairs must agree on the local-to-global yaw offset within
    /// this many radians. Only used when `consistency_tol` is positive.
    pub consistency_yaw_tol: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            k_nn: 4,
            delta: 0.15,
            mu: 0.5,
            tau: 1.2,
            min_matches: 3,
            centroid_relative: false,
            literal_products: false,
            consistency_tol: 1.0,
            consistency_yaw_tol: 0.35,
        }
    }
}

/// Undirected K-nearest-neighbor graph. Vertices are kept sorted by id so
/// results do not depend on insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGraph {
    vertices: Vec<Vertex>,
    /// Per vertex: its K nearest others as (vertex index, distance).
    knn: Vec<Vec<(usize, f64)>>,
    /// Keyed by (smaller id, larger id).
    edges: BTreeMap<(u64, u64), f64>,
    k_nn: usize,
    centroid: Vector3<f64>,
}

impl SceneGraph {
    pub fn build(mut vertices: Vec<Vertex>, k_nn: usize) -> Self {
        vertices.sort_by_key(|v| v.id);
        let n = vertices.len();
        let mut knn = Vec::with_capacity(n);
        let mut edges = BTreeMap::new();
        for i in 0..n {
            let mut d: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, translation_distance(&vertices[i].pose, &vertices[j].pose)))
                .collect();
            d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            d.truncate(k_nn);
            for &(j, len) in &d {
                let (a, b) = (vertices[i].id.min(vertices[j].id), vertices[i].id.max(vertices[j].id));
                edges.insert((a, b), len);
            }
            knn.push(d);
        }
        let centroid = if n > 0 {
            vertices.iter().map(|v| v.position()).sum::<Vector3<f64>>() / n as f64
        } else {
            Vector3::zeros()
        };
        Self {
            vertices,
            knn,
            edges,
            k_nn,
            centroid,
        }
    }

    pub fn from_landmarks<'a, I: IntoIterator<Item = &'a Landmark>>(landmarks: I, k_nn: usize) -> Self {
        Self::build(landmarks.into_iter().map(Vertex::from_landmark).collect(), k_nn)
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &BTreeMap<(u64, u64), f64> {
        &self.edges
    }

    pub fn k_nn(&self) -> usize {
        self.k_nn
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.centroid
    }

    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.vertices.binary_search_by_key(&id, |v| v.id).ok()
    }

    pub fn vertex(&self, id: u64) -> Option<&Vertex> {
        self.index_of(id).map(|i| &self.vertices[i])
    }

    pub fn degree(&self, id: u64) -> usize {
        self.edges.keys().filter(|(a, b)| *a == id || *b == id).count()
    }

    /// Layout descriptor of the vertex at `index`.
    pub fn descriptor_at(&self, index: usize) -> Vec<f64> {
        let mut d: Vec<f64> = self.knn[index].iter().map(|(_, len)| *len).collect();
        d.resize(self.k_nn, 0.0);
        d.sort_by(|a, b| a.total_cmp(b));
        let sum: f64 = d.iter().sum();
        if sum > 0.0 {
            d.iter_mut().for_each(|x| *x /= sum);
        }
        d
    }

    pub fn export(&self) -> GraphExport {
        GraphExport {
            vertices: self
                .vertices
                .iter()
                .map(|v| VertexRecord {
                    id: v.id,
                    label: v.label.clone(),
                    position: v.position().into(),
                    dims: v.dims.into(),
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|(&(a, b), &length)| EdgeRecord { a, b, length })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexRecord {
    pub id: u64,
    pub label: String,
    pub position: [f64; 3],
    pub dims: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub a: u64,
    pub b: u64,
    pub length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphExport {
    pub vertices: Vec<VertexRecord>,
    pub edges: Vec<EdgeRecord>,
}

pub fn build_graph(landmarks: &[Landmark], k_nn: usize) -> SceneGraph {
    SceneGraph::from_landmarks(landmarks, k_nn)
}

/// Sorted, sum-normalized K nearest-neighbor distances of vertex `id`.
pub fn layout_descriptor(g: &SceneGraph, id: u64) -> Option<Vec<f64>> {
    g.index_of(id).map(|i| g.descriptor_at(i))
}

pub fn layout_difference(a: &[f64], b: &[f64]) -> Result<f64, FeatureError> {
    if a.len() != b.len() {
        return Err(FeatureError::DimMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchCandidate {
    pub local: u64,
    pub global: u64,
    pub d_f: f64,
}

/// All local/global vertex pairs whose layout difference is at most
/// `delta`. Isolated vertices carry no layout information and are skipped.
pub fn candidate_matches(g_l: &SceneGraph, g_g: &SceneGraph, cfg: &GraphConfig) -> Vec<MatchCandidate> {
    let desc_g: Vec<Vec<f64>> = (0..g_g.vertices.len()).map(|j| g_g.descriptor_at(j)).collect();
    let mut out = Vec::new();
    for (i, vl) in g_l.vertices.iter().enumerate() {
        if g_l.knn[i].is_empty() {
            continue;
        }
        let dl = g_l.descriptor_at(i);
        for (j, vg) in g_g.vertices.iter().enumerate() {
            if g_g.knn[j].is_empty() || dl.len() != desc_g[j].len() {
                continue;
            }
            let d_f = layout_difference(&dl, &desc_g[j]).expect("lengths checked");
            if d_f <= cfg.delta {
                out.push(MatchCandidate {
                    local: vl.id,
                    global: vg.id,
                    d_f,
                });
            }
        }
    }
    out
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Semantic similarity in {0} or (0, 2]. `offsets` are subtracted from the
/// positions of `v` and `w` before comparison.
pub fn semantic_similarity_with_offsets(
    v: &Vertex,
    w: &Vertex,
    offsets: (Vector3<f64>, Vector3<f64>),
    cfg: &GraphConfig,
) -> f64 {
    if v.label != w.label {
        return 0.0;
    }
    let d_s = (-(v.dims - w.dims).norm()).exp();
    let d_p = (-((v.position() - offsets.0) - (w.position() - offsets.1)).norm()).exp();
    let (d_c, d_e) = if cfg.literal_products {
        ((-dot(&v.hist, &w.hist).abs()).exp(), (-dot(&v.emb, &w.emb).abs()).exp())
    } else {
        ((-norm_diff(&v.hist, &w.hist)).exp(), (-norm_diff(&v.emb, &w.emb)).exp())
    };
    cfg.mu * (d_s + d_p) + (1.0 - cfg.mu) * (d_c + d_e)
}

pub fn semantic_similarity(v: &Vertex, w: &Vertex, cfg: &GraphConfig) -> f64 {
    semantic_similarity_with_offsets(v, w, (Vector3::zeros(), Vector3::zeros()), cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub local: u64,
    pub global: u64,
    pub d_f: f64,
    pub s_l: f64,
}

/// One-to-one verified matches, ordered by local id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchSet {
    pub pairs: Vec<MatchPair>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn mean_similarity(&self) -> f64 {
        if self.pairs.is_empty() {
            0.0
        } else {
            self.pairs.iter().map(|p| p.s_l).sum::<f64>() / self.pairs.len() as f64
        }
    }

    /// Loop detection score: match count plus half the mean similarity.
    pub fn score(&self) -> f64 {
        if self.pairs.is_empty() {
            0.0
        } else {
            self.pairs.len() as f64 + 0.5 * self.mean_similarity()
        }
    }
}

/// Scores candidates, drops those below `tau`, and resolves conflicts
/// greedily by similarity (ties: lower d_f, then lower id pair).
pub fn verify_matches(
    g_l: &SceneGraph,
    g_g: &SceneGraph,
    candidates: &[MatchCandidate],
    cfg: &GraphConfig,
) -> MatchSet {
    let offsets = if cfg.centroid_relative {
        (g_l.centroid, g_g.centroid)
    } else {
        (Vector3::zeros(), Vector3::zeros())
    };
    let mut scored: Vec<MatchPair> = candidates
        .iter()
        .filter_map(|c| {
            let v = g_l.vertex(c.local)?;
            let w = g_g.vertex(c.global)?;
            let s_l = semantic_similarity_with_offsets(v, w, offsets, cfg);
            (s_l >= cfg.tau && s_l > 0.0).then_some(MatchPair {
                local: c.local,
                global: c.global,
                d_f: c.d_f,
                s_l,
            })
        })
        .collect();
    scored.sort_by(|a, b| {
        b.s_l
            .total_cmp(&a.s_l)
            .then(a.d_f.total_cmp(&b.d_f))
            .then((a.local, a.global).cmp(&(b.local, b.global)))
    });
    let mut pairs = if cfg.consistency_tol > 0.0 {
        largest_consistent_set(&scored, g_l, g_g, cfg)
    } else {
        let mut used_l = BTreeSet::new();
        let mut used_g = BTreeSet::new();
        scored
            .into_iter()
            .filter(|p| used_l.insert(p.local) && used_g.insert(p.global))
            .collect()
    };
    pairs.sort_by_key(|p| (p.local, p.global));
    MatchSet { pairs }
}

fn consistent(a: &MatchPair, b: &MatchPair, g_l: &SceneGraph, g_g: &SceneGraph, cfg: &GraphConfig) -> bool {
    let (Some(la), Some(lb), Some(ga), Some(gb)) = (
        g_l.vertex(a.local),
        g_l.vertex(b.local),
        g_g.vertex(a.global),
        g_g.vertex(b.global),
    ) else {
        return false;
    };
    let span_l = (la.position() - lb.position()).norm();
    let span_g = (ga.position() - gb.position()).norm();
    let turn_a = la.pose.yaw() - ga.pose.yaw();
    let turn_b = lb.pose.yaw() - gb.pose.yaw();
    (span_l - span_g).abs() <= cfg.consistency_tol && wrap_angle(turn_a - turn_b).abs() <= cfg.consistency_yaw_tol
}

/// One-to-one subset of `scored` (sorted best first) whose pairs all agree
/// on inter-object distances and yaw offset. Each pair seeds a greedy pass; the largest
/// result wins, ties going to the higher total similarity, then the earlier
/// seed.
fn largest_consistent_set(
    scored: &[MatchPair],
    g_l: &SceneGraph,
    g_g: &SceneGraph,
    cfg: &GraphConfig,
) -> Vec<MatchPair> {
    let n = scored.len();
    let ok: Vec<Vec<bool>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| i == j || consistent(&scored[i], &scored[j], g_l, g_g, cfg))
                .collect()
        })
        .collect();
    let mut best: Vec<usize> = Vec::new();
    let mut best_sum = 0.0;
    for seed in 0..n {
        let mut set = vec![seed];
        for c in 0..n {
            let p = &scored[c];
            if c != seed
                && set
                    .iter()
                    .all(|&m| ok[c][m] && scored[m].local != p.local && scored[m].global != p.global)
            {
                set.push(c);
            }
        }
        let sum: f64 = set.iter().map(|&m| scored[m].s_l).sum();
        if set.len() > best.len() || (set.len() == best.len() && sum > best_sum) {
            best = set;
            best_sum = sum;
        }
    }
    best.into_iter().map(|m| scored[m]).collect()
}

/// Both matching stages, without the loop gate.
pub fn match_graphs(g_l: &SceneGraph, g_g: &SceneGraph, cfg: &GraphConfig) -> MatchSet {
    if g_l.vertices.is_empty() || g_g.vertices.is_empty() {
        return MatchSet::default();
    }
    let candidates = candidate_matches(g_l, g_g, cfg);
    verify_matches(g_l, g_g, &candidates, cfg)
}

/// Returns the verified matches when there are at least `min_matches`.
pub fn detect_loop(g_l: &SceneGraph, g_g: &SceneGraph, cfg: &GraphConfig) -> Option<MatchSet> {
    let m = match_graphs(g_l, g_g, cfg);
    (m.len() >= cfg.min_matches.max(1)).then_some(m)
}
