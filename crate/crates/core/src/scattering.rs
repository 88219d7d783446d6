//! Edge scattering matrix `S(k)`, metric matrix `T(k)`, quantum map
//! `U(k) = S(k) T(k)`, and the trace weight `Lambda(k)`.
//!
//! All evaluations go through the spectral representation of the canonical
//! map `L`: with orthonormal columns `u_alpha` (eigenvectors of `L` on
//! `ran B*`) and a basis of `ker B`,
//!
//! ```text
//! S(k) = sum_alpha  -(lambda_alpha - ik)/(lambda_alpha + ik) u_alpha u_alpha*
//!      + sum (zero-eigenvalue columns) u u*  -  sum (ker B columns) p p*
//! ```
//!
//! which is valid uniformly in `k`, including `k = 0` and large `|k|`, and
//! stays meaningful at complex `k` away from the poles `i lambda_alpha`.
//! The matrix-inversion formula `S(k) = -(A + ikB)^{-1} (A - ikB)` is kept
//! as a cross-check.

use crate::boundary::{BoundaryConditions, BoundaryError, CanonicalForm, ColumnRole};
use crate::graph::{MetricGraph, TransitionMask};
use crate::linalg::{adjoint, identity, try_inverse};
use crate::{CMatrix, Complex64};
use thiserror::Error;

/// Default exclusion radius factor around the poles of `S`.
pub const POLE_EXCLUSION_FACTOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ScatteringError {
    #[error("wave number {k} lies {distance:.3e} from a pole of S (exclusion radius {radius:.3e})")]
    PoleProximity {
        k: Complex64,
        distance: f64,
        radius: f64,
    },
    #[error("A + ikB is singular at k = {k}; the direct formula does not apply")]
    DirectFormulaSingular { k: Complex64 },
}

/// Immutable evaluator for one graph and one boundary condition.
/// Evaluations at distinct `k` are independent and thread-safe.
#[derive(Debug, Clone)]
pub struct ScatteringEvaluator {
    end_lengths: Vec<f64>,
    omega: Vec<usize>,
    min_edge_length: f64,
    a: CMatrix,
    b: CMatrix,
    canonical: CanonicalForm,
    tilde: CanonicalForm,
    poles: Vec<Complex64>,
    exclusion_radius: f64,
}

impl ScatteringEvaluator {
    pub fn new(graph: &MetricGraph, bc: &BoundaryConditions) -> Result<Self, BoundaryError> {
        let canonical = bc.canonicalize()?;
        let tilde = bc.tilde().canonicalize()?;
        let n = graph.num_ends();
        let end_lengths: Vec<f64> = (0..n).map(|j| graph.length_of_end(j)).collect();
        let omega: Vec<usize> = (0..n).map(|j| graph.omega(j)).collect();
        let poles: Vec<Complex64> = canonical
            .nonzero_lambdas()
            .iter()
            .flat_map(|&l| {
                [
                    Complex64::new(0.0, l),
                    Complex64::new(0.0, -l),
                ]
            })
            .collect();
        let exclusion_radius = POLE_EXCLUSION_FACTOR * canonical.lambda_max().max(1.0);
        Ok(ScatteringEvaluator {
            end_lengths,
            omega,
            min_edge_length: graph.min_edge_length(),
            a: bc.a().clone(),
            b: bc.b().clone(),
            canonical,
            tilde,
            poles,
            exclusion_radius,
        })
    }

    pub fn dim(&self) -> usize {
        self.canonical.dim()
    }

    pub fn canonical(&self) -> &CanonicalForm {
        &self.canonical
    }

    /// Canonical data of the pair `(-B, A)`, which governs the `k = 0` limit.
    pub fn tilde_canonical(&self) -> &CanonicalForm {
        &self.tilde
    }

    /// Poles of `S` and of `L/(L^2+k^2)`: `+/- i lambda` for each nonzero
    /// eigenvalue `lambda` of `L`.
    pub fn poles(&self) -> &[Complex64] {
        &self.poles
    }

    pub fn exclusion_radius(&self) -> f64 {
        self.exclusion_radius
    }

    pub fn distance_to_poles(&self, k: Complex64) -> f64 {
        self.poles
            .iter()
            .fold(f64::INFINITY, |m, &p| m.min((k - p).norm()))
    }

    fn guard(&self, k: Complex64) -> Result<(), ScatteringError> {
        let distance = self.distance_to_poles(k);
        if distance < self.exclusion_radius {
            return Err(ScatteringError::PoleProximity {
                k,
                distance,
                radius: self.exclusion_radius,
            });
        }
        Ok(())
    }

    /// Assemble `columns * diag(coeffs) * columns^H`.
    fn spectral_assemble<F>(&self, coeff: F) -> CMatrix
    where
        F: Fn(&ColumnRole) -> Complex64,
    {
        let cols = self.canonical.columns();
        let mut scaled = cols.clone();
        for (idx, role) in self.canonical.roles().iter().enumerate() {
            let c = coeff(role);
            scaled.column_mut(idx).map_inplace(|z| *z *= c);
        }
        scaled.dot(&adjoint(cols))
    }

    /// Scattering matrix via the spectral representation.
    pub fn s(&self, k: Complex64) -> Result<CMatrix, ScatteringError> {
        self.guard(k)?;
        Ok(self.spectral_assemble(|role| match role {
            ColumnRole::RanBStar { lambda } => {
                if *lambda == 0.0 {
                    Complex64::new(1.0, 0.0)
                } else {
                    let lam = Complex64::new(*lambda, 0.0);
                    let ik = Complex64::new(0.0, 1.0) * k;
                    -(lam - ik) / (lam + ik)
                }
            }
            ColumnRole::KerB => Complex64::new(-1.0, 0.0),
        }))
    }

    /// Scattering matrix via `-(A + ikB)^{-1} (A - ikB)`; cross-check path.
    pub fn s_direct(&self, k: Complex64) -> Result<CMatrix, ScatteringError> {
        let ik = Complex64::new(0.0, 1.0) * k;
        let m = &self.a + &self.b.mapv(|z| z * ik);
        let inv = try_inverse(&m).ok_or(ScatteringError::DirectFormulaSingular { k })?;
        let rhs = &self.a - &self.b.mapv(|z| z * ik);
        Ok(inv.dot(&rhs).mapv(|z| -z))
    }

    /// Derivative `dS/dk = -2i L/(L^2+k^2) S(k)`, evaluated spectrally so
    /// the removable singularity at `k = 0` needs no special casing.
    pub fn s_prime(&self, k: Complex64) -> Result<CMatrix, ScatteringError> {
        self.guard(k)?;
        Ok(self.spectral_assemble(|role| match role {
            ColumnRole::RanBStar { lambda } if *lambda != 0.0 => {
                let lam = Complex64::new(*lambda, 0.0);
                let ik = Complex64::new(0.0, 1.0) * k;
                let f = -(lam - ik) / (lam + ik);
                Complex64::new(0.0, -2.0) * lam / (lam * lam + k * k) * f
            }
            _ => Complex64::new(0.0, 0.0),
        }))
    }

    /// The Hermitian-at-real-k factor `L (L^2 + k^2)^{-1}`.
    pub fn l_resolvent(&self, k: Complex64) -> Result<CMatrix, ScatteringError> {
        self.guard(k)?;
        Ok(self.spectral_assemble(|role| match role {
            ColumnRole::RanBStar { lambda } if *lambda != 0.0 => {
                let lam = Complex64::new(*lambda, 0.0);
                lam / (lam * lam + k * k)
            }
            _ => Complex64::new(0.0, 0.0),
        }))
    }

    /// Metric matrix: `T[j, omega(j)] = exp(i k l_j)`, zero elsewhere.
    pub fn t(&self, k: Complex64) -> CMatrix {
        let n = self.dim();
        let mut t = CMatrix::zeros((n, n));
        for j in 0..n {
            let phase = (Complex64::new(0.0, 1.0) * k * self.end_lengths[j]).exp();
            t[(j, self.omega[j])] = phase;
        }
        t
    }

    /// Quantum map `U(k) = S(k) T(k)`.
    pub fn u(&self, k: Complex64) -> Result<CMatrix, ScatteringError> {
        Ok(self.s(k)?.dot(&self.t(k)))
    }

    /// `dU/dk = S'(k) T(k) + i S(k) D T(k)` with `D` the end-length diagonal.
    pub fn u_prime(&self, k: Complex64) -> Result<CMatrix, ScatteringError> {
        let t = self.t(k);
        let mut dt = t.clone();
        for (j, mut row) in dt.rows_mut().into_iter().enumerate() {
            let f = Complex64::new(0.0, self.end_lengths[j]);
            row.map_inplace(|z| *z *= f);
        }
        Ok(self.s_prime(k)?.dot(&t) + self.s(k)?.dot(&dt))
    }

    /// Trace weight `Lambda(k) = -2i L/(L^2+k^2) + i D`.
    pub fn lambda_matrix(&self, k: Complex64) -> Result<CMatrix, ScatteringError> {
        let mut m = self
            .l_resolvent(k)?
            .mapv(|z| z * Complex64::new(0.0, -2.0));
        for j in 0..self.dim() {
            m[(j, j)] += Complex64::new(0.0, self.end_lengths[j]);
        }
        Ok(m)
    }

    /// End-length diagonal `D` as a matrix.
    pub fn length_diagonal(&self) -> CMatrix {
        let n = self.dim();
        let mut d = CMatrix::zeros((n, n));
        for j in 0..n {
            d[(j, j)] = Complex64::new(self.end_lengths[j], 0.0);
        }
        d
    }

    /// High-momentum limit `S_infinity = 1 - 2P`.
    pub fn s_infinity(&self) -> CMatrix {
        &identity(self.dim()) - &self.canonical.p().mapv(|z| z * 2.0)
    }

    /// Zero-momentum limit `S_0 = -1 + 2 P~` with `P~` from the pair
    /// `(-B, A)`.
    pub fn s_zero(&self) -> CMatrix {
        &self.tilde.p().mapv(|z| z * 2.0) - &identity(self.dim())
    }

    /// Truncated large-momentum series `1 - 2P + 2 sum_{n=1}^N (iL)^n / k^n`,
    /// convergent for `|k| > lambda_max`.
    pub fn series_large_k(&self, k: Complex64, terms: usize) -> CMatrix {
        let il = self.canonical.l_op().mapv(|z| z * Complex64::new(0.0, 1.0));
        let mut sum = self.s_infinity();
        let mut power = identity(self.dim());
        for n in 1..=terms {
            power = power.dot(&il);
            let kn = k.powi(n as i32);
            sum = sum + power.mapv(|z| 2.0 * z / kn);
        }
        sum
    }

    /// Truncated small-momentum series `-1 + 2P~ - 2 sum_{n=1}^N k^n (iL~)^n`,
    /// convergent for `|k| < lambda_min`.
    pub fn series_small_k(&self, k: Complex64, terms: usize) -> CMatrix {
        let il = self.tilde.l_op().mapv(|z| z * Complex64::new(0.0, 1.0));
        let mut sum = self.s_zero();
        let mut power = identity(self.dim());
        for n in 1..=terms {
            power = power.dot(&il);
            let kn = k.powi(n as i32);
            sum = sum - power.mapv(|z| 2.0 * z * kn);
        }
        sum
    }

    /// Upper bound on `norm(S(k + i kappa))` and `norm(S(k - i kappa)^{-1})`
    /// for real `k` and `0 < kappa < lambda_plus_min`.
    pub fn s_norm_bound_below_lambda(&self, kappa: f64) -> f64 {
        let lp = self.canonical.lambda_plus_min();
        if lp.is_infinite() {
            1.0
        } else {
            1.0f64.max((lp + kappa) / (lp - kappa))
        }
    }

    /// Upper bound on the same norms for `kappa > lambda_max`.
    pub fn s_norm_bound_above_lambda(&self, kappa: f64) -> f64 {
        let lm = self.canonical.lambda_max();
        (kappa + lm) / (kappa - lm)
    }

    /// Upper bound on `norm(U(k + i kappa))` for `0 < kappa < lambda_plus_min`.
    pub fn u_norm_bound(&self, kappa: f64) -> f64 {
        self.s_norm_bound_below_lambda(kappa) * (-kappa * self.min_edge_length).exp()
    }

    /// Directed transitions `j -> j'` whose amplitude `S[j', omega(j)]` is
    /// structurally nonzero. Sampled at two incommensurate wave numbers so
    /// an accidental zero of a genuinely k-dependent entry cannot hide a
    /// transition.
    pub fn transition_mask(&self) -> TransitionMask {
        let samples = [
            self.s(Complex64::new(1.0, 0.0)).expect("real k off poles"),
            self.s(Complex64::new(std::f64::consts::SQRT_2, 0.0))
                .expect("real k off poles"),
        ];
        TransitionMask::new(self.dim(), |from, to| {
            samples
                .iter()
                .map(|s| s[(to, self.omega[from])].norm())
                .fold(0.0, f64::max)
                > 1e-12
        })
    }
}
