//! Combinatorial and metric structure of a compact metric graph.
//!
//! Edge ends are indexed `0..2E`: ends `0..E` are the initial points of the
//! edges in edge order, ends `E..2E` the terminal points. The involution
//! [`MetricGraph::omega`] swaps the two ends of an edge. Directed edges are
//! identified with their initial end, so a transition `j -> j'` means the
//! walk leaves through the directed edge starting at end `j'` after arriving
//! along the directed edge starting at end `j`.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph needs at least one vertex, got {0}")]
    NoVertices(usize),
    #[error("graph needs at least one edge")]
    NoEdges,
    #[error("edge {edge} endpoint {vertex} out of range (vertices: {count})")]
    EndpointOutOfRange {
        edge: usize,
        vertex: usize,
        count: usize,
    },
    #[error("edge {edge} has non-positive or non-finite length {length}")]
    BadLength { edge: usize, length: f64 },
    #[error("orbit enumeration exceeded budget of {budget} orbits at topological length {length}")]
    OrbitBudgetExceeded { budget: usize, length: usize },
}

/// An undirected edge with a positive length, joining `from` to `to`.
/// Loops (`from == to`) are allowed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub length: f64,
}

/// A finite metric graph: `vertices` vertices and a list of weighted edges.
#[derive(Debug, Clone)]
pub struct MetricGraph {
    vertices: usize,
    edges: Vec<Edge>,
}

impl MetricGraph {
    pub fn new(vertices: usize, edges: Vec<Edge>) -> Result<Self, GraphError> {
        if vertices == 0 {
            return Err(GraphError::NoVertices(vertices));
        }
        if edges.is_empty() {
            return Err(GraphError::NoEdges);
        }
        for (i, e) in edges.iter().enumerate() {
            for v in [e.from, e.to] {
                if v >= vertices {
                    return Err(GraphError::EndpointOutOfRange {
                        edge: i,
                        vertex: v,
                        count: vertices,
                    });
                }
            }
            if !(e.length > 0.0 && e.length.is_finite()) {
                return Err(GraphError::BadLength {
                    edge: i,
                    length: e.length,
                });
            }
        }
        Ok(MetricGraph { vertices, edges })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Number of edge ends, `2E`; the dimension of all boundary-value data.
    pub fn num_ends(&self) -> usize {
        2 * self.edges.len()
    }

    /// The involution exchanging the two ends of an edge.
    pub fn omega(&self, end: usize) -> usize {
        let e = self.edges.len();
        if end < e {
            end + e
        } else {
            end - e
        }
    }

    /// Edge index underlying an edge end.
    pub fn edge_of_end(&self, end: usize) -> usize {
        end % self.edges.len()
    }

    /// Vertex at which an edge end sits.
    pub fn vertex_of_end(&self, end: usize) -> usize {
        let e = self.edges.len();
        if end < e {
            self.edges[end].from
        } else {
            self.edges[end - e].to
        }
    }

    /// Length of the edge underlying an end.
    pub fn length_of_end(&self, end: usize) -> f64 {
        self.edges[self.edge_of_end(end)].length
    }

    /// Edge ends at a vertex, in increasing end order. This fixes the row
    /// and column layout of per-vertex boundary-condition blocks.
    pub fn ends_at_vertex(&self, v: usize) -> Vec<usize> {
        (0..self.num_ends())
            .filter(|&j| self.vertex_of_end(j) == v)
            .collect()
    }

    /// Degree of a vertex; a loop contributes two.
    pub fn degree(&self, v: usize) -> usize {
        self.ends_at_vertex(v).len()
    }

    pub fn total_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).sum()
    }

    pub fn min_edge_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).fold(f64::INFINITY, f64::min)
    }

    pub fn max_edge_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).fold(0.0, f64::max)
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.vertices];
        let mut stack = vec![self.edges[0].from];
        seen[self.edges[0].from] = true;
        while let Some(v) = stack.pop() {
            for e in &self.edges {
                for (a, b) in [(e.from, e.to), (e.to, e.from)] {
                    if a == v && !seen[b] {
                        seen[b] = true;
                        stack.push(b);
                    }
                }
            }
        }
        // Isolated vertices are unreachable by construction; require none.
        seen.iter().all(|&s| s)
    }
}

/// Allowed transitions between directed edges. Entry `(from, to)` says the
/// scattering amplitude from the edge arriving as `from` into the edge
/// leaving as `to` is structurally nonzero.
#[derive(Debug, Clone)]
pub struct TransitionMask {
    dim: usize,
    allowed: Vec<bool>,
}

impl TransitionMask {
    pub fn new(dim: usize, allowed: impl Fn(usize, usize) -> bool) -> Self {
        let mut v = Vec::with_capacity(dim * dim);
        for from in 0..dim {
            for to in 0..dim {
                v.push(allowed(from, to));
            }
        }
        TransitionMask { dim, allowed: v }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn allowed(&self, from: usize, to: usize) -> bool {
        self.allowed[from * self.dim + to]
    }

    /// Trace of the n-th power of the 0/1 transition matrix: the number of
    /// pointed closed directed paths of topological length n. Used as the
    /// counting oracle for orbit enumeration.
    pub fn pointed_path_counts(&self, n_max: usize) -> Vec<u128> {
        let d = self.dim;
        let adj: Vec<u128> = self.allowed.iter().map(|&b| b as u128).collect();
        let mut power = adj.clone();
        let mut counts = Vec::with_capacity(n_max);
        counts.push((0..d).map(|i| power[i * d + i]).sum());
        for _ in 1..n_max {
            let mut next = vec![0u128; d * d];
            for i in 0..d {
                for k in 0..d {
                    let a = power[i * d + k];
                    if a == 0 {
                        continue;
                    }
                    for j in 0..d {
                        next[i * d + j] += a * adj[k * d + j];
                    }
                }
            }
            power = next;
            counts.push((0..d).map(|i| power[i * d + i]).sum());
        }
        counts
    }
}

/// A periodic orbit: an equivalence class of closed directed paths modulo
/// cyclic rotation, stored through its lexicographically least rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicOrbit {
    /// Canonical directed end sequence `(j_1, ..., j_n)`.
    pub ends: Vec<usize>,
    /// Repetition number: the sequence is the `repetition`-th power of its
    /// primitive block.
    pub repetition: usize,
    /// Metric length of the primitive block.
    pub primitive_len: f64,
    /// Metric length of the orbit; equals `primitive_len * repetition` exactly.
    pub metric_len: f64,
}

impl PeriodicOrbit {
    pub fn topological_len(&self) -> usize {
        self.ends.len()
    }
}

/// Smallest period of a sequence under cyclic rotation.
fn smallest_period(seq: &[usize]) -> usize {
    let n = seq.len();
    'outer: for d in 1..=n {
        if n % d != 0 {
            continue;
        }
        for i in 0..n {
            if seq[i] != seq[(i + d) % n] {
                continue 'outer;
            }
        }
        return d;
    }
    n
}

/// Whether `seq` is the lexicographically least among its rotations.
pub fn is_canonical_rotation(seq: &[usize]) -> bool {
    let n = seq.len();
    for s in 1..n {
        for i in 0..n {
            let a = seq[i];
            let b = seq[(i + s) % n];
            if a != b {
                if a > b {
                    return false;
                }
                break;
            }
        }
    }
    true
}

/// Lexicographically least rotation of `seq`.
pub fn canonical_rotation(seq: &[usize]) -> Vec<usize> {
    let n = seq.len();
    let mut best = 0;
    for s in 1..n {
        for i in 0..n {
            let a = seq[(best + i) % n];
            let b = seq[(s + i) % n];
            if a != b {
                if b < a {
                    best = s;
                }
                break;
            }
        }
    }
    (0..n).map(|i| seq[(best + i) % n]).collect()
}

/// Periodic orbits of the graph grouped by topological length.
#[derive(Debug, Clone)]
pub struct OrbitTable {
    by_length: Vec<Vec<PeriodicOrbit>>,
}

impl OrbitTable {
    /// Orbits of topological length `n` (1-based).
    pub fn of_length(&self, n: usize) -> &[PeriodicOrbit] {
        &self.by_length[n - 1]
    }

    pub fn max_length(&self) -> usize {
        self.by_length.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &PeriodicOrbit> {
        self.by_length.iter().flatten()
    }

    pub fn total(&self) -> usize {
        self.by_length.iter().map(|v| v.len()).sum()
    }
}

impl MetricGraph {
    fn orbit_from_canonical(&self, seq: &[usize]) -> PeriodicOrbit {
        let n0 = smallest_period(seq);
        let repetition = seq.len() / n0;
        let primitive_len: f64 = seq[..n0].iter().map(|&j| self.length_of_end(j)).sum();
        PeriodicOrbit {
            ends: seq.to_vec(),
            repetition,
            primitive_len,
            metric_len: primitive_len * repetition as f64,
        }
    }

    /// Enumerate all periodic orbits of topological length up to `n_max`.
    ///
    /// Depth-first search over closed directed paths, keeping exactly the
    /// lexicographically least rotation of each class: the search fixes the
    /// smallest end as the starting point and prunes any prefix that could
    /// not begin a canonical rotation.
    pub fn enumerate_orbits(
        &self,
        mask: &TransitionMask,
        n_max: usize,
        budget: usize,
    ) -> Result<OrbitTable, GraphError> {
        assert_eq!(mask.dim(), self.num_ends());
        let dim = self.num_ends();
        let mut by_length: Vec<Vec<PeriodicOrbit>> = vec![Vec::new(); n_max];
        let mut total = 0usize;
        let mut seq: Vec<usize> = Vec::with_capacity(n_max);

        struct Dfs<'a> {
            graph: &'a MetricGraph,
            mask: &'a TransitionMask,
            n_max: usize,
            budget: usize,
        }

        impl Dfs<'_> {
            fn run(
                &self,
                seq: &mut Vec<usize>,
                start: usize,
                total: &mut usize,
                by_length: &mut [Vec<PeriodicOrbit>],
            ) -> Result<(), GraphError> {
                let last = *seq.last().unwrap();
                if self.mask.allowed(last, start) && is_canonical_rotation(seq) {
                    if *total >= self.budget {
                        return Err(GraphError::OrbitBudgetExceeded {
                            budget: self.budget,
                            length: seq.len(),
                        });
                    }
                    *total += 1;
                    by_length[seq.len() - 1].push(self.graph.orbit_from_canonical(seq));
                }
                if seq.len() == self.n_max {
                    return Ok(());
                }
                for next in start..self.mask.dim() {
                    // Ends below the start can never appear in a canonical
                    // rotation beginning at `start`.
                    if self.mask.allowed(last, next) {
                        seq.push(next);
                        self.run(seq, start, total, by_length)?;
                        seq.pop();
                    }
                }
                Ok(())
            }
        }

        let dfs = Dfs {
            graph: self,
            mask,
            n_max,
            budget,
        };
        for start in 0..dim {
            seq.clear();
            seq.push(start);
            dfs.run(&mut seq, start, &mut total, &mut by_length)?;
        }
        Ok(OrbitTable { by_length })
    }
}
