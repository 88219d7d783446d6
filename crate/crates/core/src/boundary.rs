//! Self-adjoint boundary conditions `A F + B F' = 0` on the edge-end
//! boundary values of a metric graph, and their canonical form.
//!
//! `F` collects the function values at all `2E` edge ends and `F'` the
//! derivatives taken into the edges. A pair `(A, B)` defines a self-adjoint
//! Laplacian exactly when `[A B]` has full rank `2E` and `A B*` is
//! self-adjoint; two pairs related by an invertible left factor describe the
//! same operator. [`BoundaryConditions::canonicalize`] removes that gauge
//! freedom: it produces the orthogonal projector `P` onto `ker B`, its
//! complement `Q`, and the self-adjoint map `L` supported on `ran B*`, which
//! together determine the operator uniquely.

use crate::graph::MetricGraph;
use crate::linalg::{
    adjoint, eigh_ascending, fro_norm, horizontal_concat, identity, max_abs, projector_onto,
    pseudo_inverse, rank_split, ONE,
};
use crate::{CMatrix, Complex64};
use thiserror::Error;

/// Relative singular-value cutoff for all rank decisions.
pub const RANK_TOL: f64 = 1e-10;
/// Relative tolerance on the self-adjointness defect of `A B*`.
pub const SELF_ADJOINT_TOL: f64 = 1e-10;
/// Relative tolerance below which an eigenvalue of `L` counts as zero.
pub const LAMBDA_ZERO_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum BoundaryError {
    #[error("boundary matrices must be {expected}x{expected}, got {rows}x{cols}")]
    BadShape {
        expected: usize,
        rows: usize,
        cols: usize,
    },
    #[error("[A B] has rank {rank}, need full rank {expected}")]
    RankDeficient { rank: usize, expected: usize },
    #[error("A B* deviates from self-adjointness by {defect:.3e} (allowed {allowed:.3e})")]
    NotSelfAdjoint { defect: f64, allowed: f64 },
    #[error("matrices are not local for the given graph: entry ({row}, {col}) = {value:.3e} lies outside every vertex block")]
    NotLocal { row: usize, col: usize, value: f64 },
    #[error("vertex {vertex} needs {expected} boundary rows, block has {got}")]
    BlockSizeMismatch {
        vertex: usize,
        expected: usize,
        got: usize,
    },
    #[error("robin coefficients: expected {expected} values (one per edge end), got {got}")]
    RobinLength { expected: usize, got: usize },
    #[error("kirchhoff weights: expected {expected} values (one per vertex), got {got}")]
    KirchhoffLength { expected: usize, got: usize },
    #[error("canonical map L deviates from self-adjointness by {defect:.3e}")]
    CanonicalNotHermitian { defect: f64 },
}

/// Role of one column of the spectral basis of the canonical form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ColumnRole {
    /// Eigenvector of `L` inside `ran B*` with the given real eigenvalue.
    RanBStar { lambda: f64 },
    /// Basis vector of `ker B`.
    KerB,
}

/// A boundary-condition pair `(A, B)` together with optional vertex blocks
/// recording which edge ends each condition couples.
#[derive(Debug, Clone)]
pub struct BoundaryConditions {
    a: CMatrix,
    b: CMatrix,
    vertex_blocks: Option<Vec<Vec<usize>>>,
}

impl BoundaryConditions {
    /// Wrap explicit global matrices. No locality is claimed.
    pub fn explicit(a: CMatrix, b: CMatrix) -> Result<Self, BoundaryError> {
        if a.nrows() != a.ncols() || b.nrows() != b.ncols() || a.nrows() != b.nrows() {
            return Err(BoundaryError::BadShape {
                expected: a.ncols().max(b.ncols()),
                rows: a.nrows(),
                cols: a.ncols(),
            });
        }
        let bc = BoundaryConditions {
            a,
            b,
            vertex_blocks: None,
        };
        bc.validate()?;
        Ok(bc)
    }

    /// Assemble from one `(A_v, B_v)` block per vertex. Block rows and
    /// columns refer to the ends listed by `MetricGraph::ends_at_vertex`.
    pub fn from_vertex_blocks(
        graph: &MetricGraph,
        blocks: &[(CMatrix, CMatrix)],
    ) -> Result<Self, BoundaryError> {
        let n = graph.num_ends();
        let mut a = CMatrix::zeros((n, n));
        let mut b = CMatrix::zeros((n, n));
        let mut vertex_blocks = Vec::with_capacity(graph.num_vertices());
        for v in 0..graph.num_vertices() {
            let ends = graph.ends_at_vertex(v);
            let (av, bv) = &blocks[v];
            if av.nrows() != ends.len() || av.ncols() != ends.len() || bv.nrows() != ends.len() {
                return Err(BoundaryError::BlockSizeMismatch {
                    vertex: v,
                    expected: ends.len(),
                    got: av.nrows(),
                });
            }
            for (bi, &gi) in ends.iter().enumerate() {
                for (bj, &gj) in ends.iter().enumerate() {
                    a[(gi, gj)] = av[(bi, bj)];
                    b[(gi, gj)] = bv[(bi, bj)];
                }
            }
            vertex_blocks.push(ends);
        }
        let bc = BoundaryConditions {
            a,
            b,
            vertex_blocks: Some(vertex_blocks),
        };
        bc.validate()?;
        Ok(bc)
    }

    /// Dirichlet conditions on every vertex: `F = 0`.
    pub fn dirichlet(graph: &MetricGraph) -> Self {
        let blocks: Vec<_> = (0..graph.num_vertices())
            .map(|v| {
                let d = graph.degree(v);
                (identity(d), CMatrix::zeros((d, d)))
            })
            .collect();
        Self::from_vertex_blocks(graph, &blocks).expect("dirichlet blocks are valid")
    }

    /// Neumann conditions on every vertex: `F' = 0`.
    pub fn neumann(graph: &MetricGraph) -> Self {
        let blocks: Vec<_> = (0..graph.num_vertices())
            .map(|v| {
                let d = graph.degree(v);
                (CMatrix::zeros((d, d)), identity(d))
            })
            .collect();
        Self::from_vertex_blocks(graph, &blocks).expect("neumann blocks are valid")
    }

    /// Generalized Kirchhoff (delta-type) conditions: the function is
    /// continuous through each vertex and the inward derivatives satisfy
    /// `sum_j f_j'(v) = mu_v f(v)`. With `mu_v = 0` these are the standard
    /// Kirchhoff conditions; at a vertex of degree one, `mu_v = 0` reduces
    /// to Neumann.
    pub fn kirchhoff(graph: &MetricGraph, mu: &[f64]) -> Result<Self, BoundaryError> {
        if mu.len() != graph.num_vertices() {
            return Err(BoundaryError::KirchhoffLength {
                expected: graph.num_vertices(),
                got: mu.len(),
            });
        }
        let blocks: Vec<_> = (0..graph.num_vertices())
            .map(|v| {
                let d = graph.degree(v);
                let mut av = CMatrix::zeros((d, d));
                let mut bv = CMatrix::zeros((d, d));
                for r in 0..d.saturating_sub(1) {
                    av[(r, r)] = ONE;
                    av[(r, r + 1)] = -ONE;
                }
                av[(d - 1, d - 1)] = Complex64::new(-mu[v], 0.0);
                for c in 0..d {
                    bv[(d - 1, c)] = ONE;
                }
                (av, bv)
            })
            .collect();
        Self::from_vertex_blocks(graph, &blocks)
    }

    /// Standard Kirchhoff conditions (`mu_v = 0` everywhere).
    pub fn kirchhoff_standard(graph: &MetricGraph) -> Self {
        Self::kirchhoff(graph, &vec![0.0; graph.num_vertices()])
            .expect("kirchhoff blocks are valid")
    }

    /// Robin conditions decoupling every edge end: `lambda_j f_j + f_j' = 0`
    /// with one real coefficient per edge end (global end order).
    pub fn robin(graph: &MetricGraph, lambda: &[f64]) -> Result<Self, BoundaryError> {
        let n = graph.num_ends();
        if lambda.len() != n {
            return Err(BoundaryError::RobinLength {
                expected: n,
                got: lambda.len(),
            });
        }
        let blocks: Vec<_> = (0..graph.num_vertices())
            .map(|v| {
                let ends = graph.ends_at_vertex(v);
                let d = ends.len();
                let mut av = CMatrix::zeros((d, d));
                for (bi, &gi) in ends.iter().enumerate() {
                    av[(bi, bi)] = Complex64::new(lambda[gi], 0.0);
                }
                (av, identity(d))
            })
            .collect();
        Self::from_vertex_blocks(graph, &blocks)
    }

    /// Robin conditions with one common coefficient at every edge end.
    pub fn robin_uniform(graph: &MetricGraph, lambda: f64) -> Self {
        Self::robin(graph, &vec![lambda; graph.num_ends()])
            .expect("robin blocks are valid")
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &CMatrix {
        &self.a
    }

    pub fn b(&self) -> &CMatrix {
        &self.b
    }

    pub fn vertex_blocks(&self) -> Option<&[Vec<usize>]> {
        self.vertex_blocks.as_deref()
    }

    /// The pair `(-B, A)`, which describes another self-adjoint operator
    /// whose scattering matrix is the inversion `k -> 1/k` image of this
    /// one. Its canonical data supply the zero-momentum limit.
    pub fn tilde(&self) -> BoundaryConditions {
        BoundaryConditions {
            a: self.b.mapv(|z| -z),
            b: self.a.clone(),
            vertex_blocks: self.vertex_blocks.clone(),
        }
    }

    /// Check full rank of `[A B]`, self-adjointness of `A B*`, and locality
    /// when vertex blocks are declared.
    pub fn validate(&self) -> Result<(), BoundaryError> {
        let n = self.dim();
        let ab = horizontal_concat(&self.a, &self.b);
        let (rank, _, _) = rank_split(&ab, RANK_TOL);
        if rank != n {
            return Err(BoundaryError::RankDeficient { rank, expected: n });
        }
        let m = self.a.dot(&adjoint(&self.b));
        let defect = fro_norm(&(&m - &adjoint(&m)));
        let allowed = SELF_ADJOINT_TOL * fro_norm(&self.a) * fro_norm(&self.b);
        if defect > allowed {
            return Err(BoundaryError::NotSelfAdjoint { defect, allowed });
        }
        if let Some(blocks) = &self.vertex_blocks {
            let mut inside = vec![vec![false; n]; n];
            for ends in blocks {
                for &i in ends {
                    for &j in ends {
                        inside[i][j] = true;
                    }
                }
            }
            let scale = max_abs(&self.a).max(max_abs(&self.b)).max(1.0);
            for i in 0..n {
                for j in 0..n {
                    if inside[i][j] {
                        continue;
                    }
                    let value = self.a[(i, j)].norm().max(self.b[(i, j)].norm());
                    if value > 1e-12 * scale {
                        return Err(BoundaryError::NotLocal {
                            row: i,
                            col: j,
                            value,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Compute the gauge-invariant canonical form.
    pub fn canonicalize(&self) -> Result<CanonicalForm, BoundaryError> {
        self.validate()?;
        let n = self.dim();
        let (rank_b, ker_b, ran_bstar) = rank_split(&self.b, RANK_TOL);
        let p = projector_onto(&ker_b);
        let q = &identity(n) - &p;

        // L = (B restricted to ran B*)^{-1} A Q, extended by zero on ker B.
        // The pseudo-inverse realizes exactly that restriction-inverse.
        let l_raw = pseudo_inverse(&self.b, RANK_TOL).dot(&self.a).dot(&q);
        let defect = fro_norm(&(&l_raw - &adjoint(&l_raw)));
        let scale = fro_norm(&l_raw).max(1.0);
        if defect > 1e-8 * scale {
            return Err(BoundaryError::CanonicalNotHermitian { defect });
        }
        let l_op = (&l_raw + &adjoint(&l_raw)).mapv(|z| z * 0.5);

        // Diagonalize the restriction of L to ran B*; ker B columns complete
        // the basis. Splitting the two zero subspaces here is what keeps the
        // scattering matrix well defined at k = 0 and k -> infinity.
        let l_sub = adjoint(&ran_bstar).dot(&l_op).dot(&ran_bstar);
        let (sub_vals, sub_vecs) = eigh_ascending(&l_sub);
        let lam_scale = sub_vals.iter().fold(0.0f64, |m, &x| m.max(x.abs())).max(1.0);
        let mut columns = CMatrix::zeros((n, n));
        let mut roles = Vec::with_capacity(n);
        for (idx, &lam) in sub_vals.iter().enumerate() {
            let u = ran_bstar.dot(&sub_vecs.column(idx).to_owned());
            columns.column_mut(idx).assign(&u);
            let lambda = if lam.abs() <= LAMBDA_ZERO_TOL * lam_scale {
                0.0
            } else {
                lam
            };
            roles.push(ColumnRole::RanBStar { lambda });
        }
        for j in 0..(n - rank_b) {
            columns.column_mut(rank_b + j).assign(&ker_b.column(j));
            roles.push(ColumnRole::KerB);
        }

        Ok(CanonicalForm {
            dim: n,
            p,
            q,
            l_op,
            columns,
            roles,
        })
    }
}

/// Gauge-invariant description of a self-adjoint boundary condition:
/// the projector `P` onto `ker B`, the complementary projector `Q`, the
/// self-adjoint map `L` on `ran B*`, and an orthonormal basis adapted to
/// the spectral decomposition of `L`.
#[derive(Debug, Clone)]
pub struct CanonicalForm {
    dim: usize,
    p: CMatrix,
    q: CMatrix,
    l_op: CMatrix,
    columns: CMatrix,
    roles: Vec<ColumnRole>,
}

impl CanonicalForm {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn p(&self) -> &CMatrix {
        &self.p
    }

    pub fn q(&self) -> &CMatrix {
        &self.q
    }

    pub fn l_op(&self) -> &CMatrix {
        &self.l_op
    }

    /// Orthonormal basis columns adapted to `L`; pair with [`Self::roles`].
    pub fn columns(&self) -> &CMatrix {
        &self.columns
    }

    pub fn roles(&self) -> &[ColumnRole] {
        &self.roles
    }

    /// Canonical representative `A' = P + L` of the gauge class.
    pub fn a_canonical(&self) -> CMatrix {
        &self.p + &self.l_op
    }

    /// Canonical representative `B' = Q` of the gauge class.
    pub fn b_canonical(&self) -> CMatrix {
        self.q.clone()
    }

    /// Nonzero eigenvalues of `L`, ascending, with multiplicity.
    pub fn nonzero_lambdas(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .roles
            .iter()
            .filter_map(|r| match r {
                ColumnRole::RanBStar { lambda } if *lambda != 0.0 => Some(*lambda),
                _ => None,
            })
            .collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    /// Number of nonzero eigenvalues of `L` (with multiplicity).
    pub fn d(&self) -> usize {
        self.nonzero_lambdas().len()
    }

    pub fn d_plus(&self) -> usize {
        self.nonzero_lambdas().iter().filter(|&&l| l > 0.0).count()
    }

    pub fn d_minus(&self) -> usize {
        self.nonzero_lambdas().iter().filter(|&&l| l < 0.0).count()
    }

    /// Dimension of the zero eigenspace of `L` inside `ran B*`.
    pub fn r(&self) -> usize {
        self.roles
            .iter()
            .filter(|r| matches!(r, ColumnRole::RanBStar { lambda } if *lambda == 0.0))
            .count()
    }

    /// Dimension of `ker B`.
    pub fn s(&self) -> usize {
        self.roles.iter().filter(|r| matches!(r, ColumnRole::KerB)).count()
    }

    /// Largest absolute nonzero eigenvalue of `L`; zero when `L = 0`.
    pub fn lambda_max(&self) -> f64 {
        self.nonzero_lambdas()
            .iter()
            .fold(0.0f64, |m, &l| m.max(l.abs()))
    }

    /// Smallest positive eigenvalue of `L`; infinite when none exists, so
    /// that `2 / lambda_plus_min` degrades gracefully to zero.
    pub fn lambda_plus_min(&self) -> f64 {
        self.nonzero_lambdas()
            .iter()
            .filter(|&&l| l > 0.0)
            .fold(f64::INFINITY, |m, &l| m.min(l))
    }

    /// Smallest absolute value among negative eigenvalues of `L`; infinite
    /// when none exists.
    pub fn lambda_minus_min(&self) -> f64 {
        self.nonzero_lambdas()
            .iter()
            .filter(|&&l| l < 0.0)
            .fold(f64::INFINITY, |m, &l| m.min(l.abs()))
    }

    /// True when `L = 0`; the scattering matrix is then independent of `k`.
    pub fn is_non_robin(&self) -> bool {
        self.d() == 0
    }

    /// `trace S` for the k-independent case equals `2E - 2 dim ker B`;
    /// meaningful for any condition as the high-momentum limit trace.
    pub fn trace_s_infinity(&self) -> f64 {
        self.dim as f64 - 2.0 * self.s() as f64
    }
}
