//! Experiment descriptions for the command-line frontend: one JSON file
//! holds the graph and its boundary conditions; run parameters arrive as
//! flags and fall back to the centralized defaults below, echoed into
//! every report.

use crate::boundary::{BoundaryConditions, BoundaryError};
use crate::graph::{Edge, GraphError, MetricGraph};
use crate::{CMatrix, Complex64};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const DEFAULT_K_MAX: f64 = 50.0;
pub const DEFAULT_N_MAX: usize = 10;
pub const DEFAULT_T: f64 = 0.05;
/// Cauchy-type test function default decay parameter.
pub const DEFAULT_CAUCHY_A: f64 = 1.0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config at key `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("explicit matrix {name} must be {expected}x{expected} (2E for E edges), got {rows}x{cols}")]
    MatrixShape {
        name: &'static str,
        expected: usize,
        rows: usize,
        cols: usize,
    },
    #[error("boundary type `{0}` requires explicit A and B matrices")]
    MissingMatrices(&'static str),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Boundary(#[from] BoundaryError),
}

impl ConfigError {
    /// Configuration mistakes exit with 2; mathematical validation
    /// failures of an otherwise well-formed description exit with 1.
    pub fn is_validation(&self) -> bool {
        matches!(self, ConfigError::Boundary(_))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub from: usize,
    pub to: usize,
    pub length: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrList {
    Scalar(f64),
    List(Vec<f64>),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryParams {
    /// Robin coupling: one value for all edge ends or one per end.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<ScalarOrList>,
    /// Delta coupling strength per vertex (`sum of inward derivatives =
    /// mu_v f(v)`); omitted entries default to zero.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySpec {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<BoundaryParams>,
    /// Explicit boundary matrices, complex entries as `[re, im]` pairs.
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<[f64; 2]>>>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<[f64; 2]>>>,
}

/// One self-contained experiment description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub vertices: usize,
    pub edges: Vec<EdgeSpec>,
    pub boundary: BoundarySpec,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_str(&text)
    }

    pub fn from_str(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    pub fn graph(&self) -> Result<MetricGraph, ConfigError> {
        let edges = self
            .edges
            .iter()
            .map(|e| Edge {
                from: e.from,
                to: e.to,
                length: e.length,
            })
            .collect();
        Ok(MetricGraph::new(self.vertices, edges)?)
    }

    pub fn boundary(&self, graph: &MetricGraph) -> Result<BoundaryConditions, ConfigError> {
        let n = graph.num_ends();
        match self.boundary.kind.as_str() {
            "dirichlet" => Ok(BoundaryConditions::dirichlet(graph)),
            "neumann" => Ok(BoundaryConditions::neumann(graph)),
            "kirchhoff" => {
                let mu = match self.boundary.params.as_ref().and_then(|p| p.mu.as_ref()) {
                    Some(mu) => mu.clone(),
                    None => vec![0.0; graph.num_vertices()],
                };
                Ok(BoundaryConditions::kirchhoff(graph, &mu)?)
            }
            "robin" => {
                let lambda = match self.boundary.params.as_ref().and_then(|p| p.lambda.as_ref())
                {
                    Some(ScalarOrList::Scalar(v)) => vec![*v; n],
                    Some(ScalarOrList::List(vs)) => vs.clone(),
                    None => {
                        return Err(ConfigError::Parse {
                            path: "boundary.params.lambda".into(),
                            message: "robin conditions need a coupling value".into(),
                        })
                    }
                };
                Ok(BoundaryConditions::robin(graph, &lambda)?)
            }
            "explicit" => {
                let (a, b) = match (&self.boundary.a, &self.boundary.b) {
                    (Some(a), Some(b)) => (a, b),
                    _ => return Err(ConfigError::MissingMatrices("explicit")),
                };
                Ok(BoundaryConditions::explicit(
                    parse_matrix("A", a, n)?,
                    parse_matrix("B", b, n)?,
                )?)
            }
            other => Err(ConfigError::Parse {
                path: "boundary.type".into(),
                message: format!(
                    "unknown type `{other}`; expected dirichlet, neumann, kirchhoff, robin, or explicit"
                ),
            }),
        }
    }

    /// Graph and validated boundary conditions in one step.
    pub fn build(&self) -> Result<(MetricGraph, BoundaryConditions), ConfigError> {
        let graph = self.graph()?;
        let bc = self.boundary(&graph)?;
        Ok((graph, bc))
    }
}

fn parse_matrix(
    name: &'static str,
    rows: &[Vec<[f64; 2]>],
    expected: usize,
) -> Result<CMatrix, ConfigError> {
    let shape_err = |r: usize, c: usize| ConfigError::MatrixShape {
        name,
        expected,
        rows: r,
        cols: c,
    };
    if rows.len() != expected {
        return Err(shape_err(rows.len(), rows.first().map_or(0, Vec::len)));
    }
    let mut m = CMatrix::zeros((expected, expected));
    for (i, row) in rows.iter().enumerate() {
        if row.len() != expected {
            return Err(shape_err(rows.len(), row.len()));
        }
        for (j, &[re, im]) in row.iter().enumerate() {
            m[(i, j)] = Complex64::new(re, im);
        }
    }
    Ok(m)
}

/// Run parameters with defaults filled in; echoed verbatim into every
/// report so results are reproducible from the report alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunParams {
    pub config_path: String,
    pub k_max: f64,
    pub n_max: usize,
    pub t: f64,
    pub test_fn: String,
    pub cauchy_a: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub identity: Option<String>,
    pub theta_tol: f64,
    pub cluster_tol: f64,
    pub spectral_tail_tol: f64,
}

impl RunParams {
    pub fn new(config_path: &Path) -> Self {
        let defaults = crate::spectrum::SolverOptions::default();
        RunParams {
            config_path: config_path.display().to_string(),
            k_max: DEFAULT_K_MAX,
            n_max: DEFAULT_N_MAX,
            t: DEFAULT_T,
            test_fn: "gaussian".into(),
            cauchy_a: DEFAULT_CAUCHY_A,
            identity: None,
            theta_tol: defaults.theta_tol,
            cluster_tol: defaults.cluster_tol,
            spectral_tail_tol: 1e-10,
        }
    }
}
