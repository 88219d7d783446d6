//! Full eigenvalue data of the Laplacian on a metric graph.
//!
//! Positive eigenvalues `k_n^2` are located by tracking the eigenphases of
//! the unitary quantum map `U(k)`: `k_n` is an eigenvalue exactly when some
//! eigenphase passes a multiple of `2 pi`, and the number of branches doing
//! so at `k_n` is the multiplicity. Negative eigenvalues `-kappa^2` are
//! zeros of the secular function `F(i kappa)` on the imaginary axis, found
//! by a scan plus argument-principle confirmation. The zero eigenvalue is
//! handled separately through its own multiplicity pair `(g0, n_secular)`:
//! `g0` is the dimension of the zero eigenspace while `n_secular` is the
//! multiplicity of the eigenvalue one of `U(0)`, and the two need not
//! agree.

use crate::graph::MetricGraph;
use crate::linalg::{determinant, eig_general, kernel_dim_with_gap, try_inverse};
use crate::scattering::{ScatteringError, ScatteringEvaluator};
use crate::{CMatrix, Complex64};
use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpectrumError {
    #[error(transparent)]
    Scattering(#[from] ScatteringError),
    #[error("eigenvector continuation lost near k = {k}: best overlap {overlap:.3}")]
    TrackingLoss { k: f64, overlap: f64 },
    #[error("winding number around {center} did not stabilize (last value {value:.3e})")]
    WindingUnstable { center: Complex64, value: f64 },
    #[error("kernel dimension ambiguous: discarded singular value {dropped:.3e} too close to retained {kept:.3e}")]
    KernelAmbiguous { dropped: f64, kept: f64 },
    #[error("zero-mode count differs between evaluation points: {counts:?}")]
    InconsistentZeroModes { counts: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositiveEigenvalue {
    pub k: f64,
    pub multiplicity: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NegativeEigenvalue {
    /// Eigenvalue is `-kappa^2`.
    pub kappa: f64,
    pub multiplicity: usize,
    /// False when the zero sits so close to a pole of `S` on the imaginary
    /// axis that no clean confirmation contour exists; the location is then
    /// reported as found by the scan, without a certified multiplicity.
    pub resolved: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroModes {
    /// Multiplicity of the eigenvalue zero of the Laplacian.
    pub g0: usize,
    /// Multiplicity of the eigenvalue one of `U(0)`. Not the order of the
    /// k-zero of the secular function at the origin: at a threshold
    /// resonance that order is strictly larger, and the trace identities
    /// take this eigenvalue count.
    pub n_secular: usize,
}

/// Convergence window for orbit sums: the minimum over `kappa` of
/// `l(kappa) = (log 2E + 2 artanh(kappa / lambda_plus_min)) / kappa`.
/// Orbit sums converge geometrically when every edge is longer than the
/// minimal `l`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OrbitWindow {
    /// Infinite when `L` has no positive eigenvalue (any edge length works).
    #[serde(with = "maybe_infinite")]
    pub kappa: f64,
    #[serde(with = "maybe_infinite")]
    pub l_value: f64,
    pub satisfied: bool,
}

/// JSON has no infinities, so non-finite values travel as tagged strings.
mod maybe_infinite {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            x.serialize(s)
        } else if *x > 0.0 {
            "inf".serialize(s)
        } else if *x < 0.0 {
            "-inf".serialize(s)
        } else {
            "nan".serialize(s)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Tag(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Tag(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!(
                    "expected a number or \"inf\"/\"-inf\"/\"nan\", got {other:?}"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConditionFlags {
    /// `l_min > 2 / lambda_plus_min`: every eigenphase is strictly
    /// increasing, so phase crossings are simple and multiplicities exact.
    pub simple_crossings: bool,
    /// True when multiplicities are covered by the flag above or were
    /// confirmed by the argument principle around every located root.
    pub multiplicities_verified: bool,
    pub orbit_window: OrbitWindow,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackSample {
    pub k: f64,
    pub thetas: Vec<f64>,
    pub theta_primes: Vec<f64>,
    pub min_overlap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Spectrum {
    pub positive: Vec<PositiveEigenvalue>,
    pub zero: ZeroModes,
    pub negative: Vec<NegativeEigenvalue>,
    pub k_max: f64,
    /// A-priori lower bound: every eigenvalue satisfies `-kappa^2 >= -s^2`.
    pub s_bound: f64,
    pub flags: ConditionFlags,
    pub track: Vec<TrackSample>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WeylRow {
    pub k: f64,
    pub counted: usize,
    pub predicted: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub k_max: f64,
    /// Bisection stops when the eigenphase is this close to a multiple of 2 pi.
    pub theta_tol: f64,
    /// Roots within this distance in k merge into one eigenvalue.
    pub cluster_tol: f64,
    /// Roots at or below this k are left to the zero-mode computation.
    pub min_positive_k: f64,
    pub negative_grid: usize,
    /// Record eigenphase samples in the result (cheap, useful for reports).
    pub record_track: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            k_max: 50.0,
            theta_tol: 1e-12,
            cluster_tol: 1e-9,
            min_positive_k: 1e-8,
            negative_grid: 2000,
            record_track: true,
        }
    }
}

/// Secular function `F(k) = det(1 - U(k))`.
pub fn secular_f(ev: &ScatteringEvaluator, k: Complex64) -> Result<Complex64, SpectrumError> {
    let u = ev.u(k)?;
    let m = &CMatrix::eye(ev.dim()) - &u;
    Ok(determinant(&m))
}

/// Logarithmic derivative `F'(k)/F(k) = -tr[(1 - U)^{-1} U']`.
/// Fails where `1 - U` is singular, i.e. exactly at the zeros of `F`.
pub fn secular_log_derivative(
    ev: &ScatteringEvaluator,
    k: Complex64,
) -> Result<Complex64, SpectrumError> {
    let u = ev.u(k)?;
    let m = &CMatrix::eye(ev.dim()) - &u;
    let minv = try_inverse(&m).ok_or(SpectrumError::WindingUnstable {
        center: k,
        value: f64::INFINITY,
    })?;
    let prod = minv.dot(&ev.u_prime(k)?);
    let tr: Complex64 = (0..ev.dim()).map(|i| prod[(i, i)]).sum();
    Ok(-tr)
}

/// Residual of the reflection identity
/// `F(k) = (-1)^M exp(2ikL) prod_a (lambda_a - ik)/(lambda_a + ik) F(-k)`
/// with `M = E + d + dim ker B` and `L` the total edge length.
pub fn functional_equation_residual(
    graph: &MetricGraph,
    ev: &ScatteringEvaluator,
    k: Complex64,
) -> Result<f64, SpectrumError> {
    let can = ev.canonical();
    let m = graph.num_edges() + can.d() + can.s();
    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
    let phase = (Complex64::new(0.0, 2.0) * k * graph.total_length()).exp();
    let mut prod = Complex64::new(sign, 0.0);
    for &lam in &can.nonzero_lambdas() {
        let lam = Complex64::new(lam, 0.0);
        let ik = Complex64::new(0.0, 1.0) * k;
        prod *= (lam - ik) / (lam + ik);
    }
    let lhs = secular_f(ev, k)?;
    let rhs = phase * prod * secular_f(ev, -k)?;
    Ok((lhs - rhs).norm())
}

/// Eigenphase derivative for a normalized eigenvector `v` of `U(k)`:
/// `theta' = sum_i l_i |v_i|^2 - 2 <v, L/(L^2+k^2) v>`.
pub fn theta_prime(
    graph: &MetricGraph,
    ev: &ScatteringEvaluator,
    k: f64,
    v: ArrayView1<Complex64>,
) -> Result<f64, SpectrumError> {
    let r = ev.l_resolvent(Complex64::new(k, 0.0))?;
    Ok(theta_prime_with_resolvent(graph, &r, v))
}

fn theta_prime_with_resolvent(
    graph: &MetricGraph,
    l_resolvent: &CMatrix,
    v: ArrayView1<Complex64>,
) -> f64 {
    let mut length_term = 0.0;
    for (j, z) in v.iter().enumerate() {
        length_term += graph.length_of_end(j) * z.norm_sqr();
    }
    let rv = l_resolvent.dot(&v);
    let quad: Complex64 = v.iter().zip(rv.iter()).map(|(a, b)| a.conj() * b).sum();
    length_term - 2.0 * quad.re
}

/// Both eigenphase-derivative bounds: every `theta'` lies in
/// `[l_min - 2/lambda_plus_min, l_max + 2/lambda_minus_min]`,
/// with infinite `lambda` limits dropping the correction term.
pub fn theta_prime_bounds(graph: &MetricGraph, ev: &ScatteringEvaluator) -> (f64, f64) {
    let can = ev.canonical();
    let lo_corr = if can.lambda_plus_min().is_infinite() {
        0.0
    } else {
        2.0 / can.lambda_plus_min()
    };
    let hi_corr = if can.lambda_minus_min().is_infinite() {
        0.0
    } else {
        2.0 / can.lambda_minus_min()
    };
    (
        graph.min_edge_length() - lo_corr,
        graph.max_edge_length() + hi_corr,
    )
}

/// Unique `s >= 0` with `s tanh(s l_min / 2) = lambda_plus_max`; every
/// eigenvalue of the Laplacian is `>= -s^2`.
pub fn lower_bound_s(graph: &MetricGraph, ev: &ScatteringEvaluator) -> f64 {
    let target = ev
        .canonical()
        .nonzero_lambdas()
        .iter()
        .filter(|&&l| l > 0.0)
        .fold(0.0f64, |m, &l| m.max(l));
    if target == 0.0 {
        return 0.0;
    }
    let l_half = graph.min_edge_length() / 2.0;
    let f = |s: f64| s * (s * l_half).tanh() - target;
    let mut hi = target + 1.0 / l_half + 1.0;
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > 1e-14 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Minimize `l(kappa) = (log(2E) + 2 artanh(kappa/lambda_plus_min)) / kappa`
/// over `0 < kappa < lambda_plus_min`. When `L` has no positive eigenvalue
/// the infimum is zero and any positive edge length qualifies.
pub fn orbit_sum_window(graph: &MetricGraph, ev: &ScatteringEvaluator) -> OrbitWindow {
    let lp = ev.canonical().lambda_plus_min();
    let l_min = graph.min_edge_length();
    if lp.is_infinite() {
        return OrbitWindow {
            kappa: f64::INFINITY,
            l_value: 0.0,
            satisfied: true,
        };
    }
    let log2e = (graph.num_ends() as f64).ln();
    let l_of = |kappa: f64| (log2e + 2.0 * (kappa / lp).atanh()) / kappa;
    // Coarse scan, then golden-section refinement of the unique interior dip.
    let n = 2000;
    let mut best = (lp * 0.5, l_of(lp * 0.5));
    for i in 1..n {
        let kappa = lp * i as f64 / n as f64;
        let v = l_of(kappa);
        if v < best.1 {
            best = (kappa, v);
        }
    }
    let (mut a, mut b) = (
        (best.0 - lp / n as f64).max(lp * 1e-9),
        (best.0 + lp / n as f64).min(lp * (1.0 - 1e-12)),
    );
    let phi = 0.5 * (5.0f64.sqrt() - 1.0);
    for _ in 0..200 {
        let x1 = b - phi * (b - a);
        let x2 = a + phi * (b - a);
        if l_of(x1) < l_of(x2) {
            b = x2;
        } else {
            a = x1;
        }
    }
    let kappa = 0.5 * (a + b);
    let l_value = l_of(kappa);
    OrbitWindow {
        kappa,
        l_value,
        satisfied: l_min > l_value,
    }
}

/// The zero-mode test matrix `C(l;k)`: `C[j,j] = l_j / (2i/k + l_j)` and
/// `C[j, omega(j)] = (2i/k) / (2i/k + l_j)`.
pub fn zero_mode_matrix(graph: &MetricGraph, k: f64) -> CMatrix {
    let n = graph.num_ends();
    let two_i_over_k = Complex64::new(0.0, 2.0 / k);
    let mut c = CMatrix::zeros((n, n));
    for j in 0..n {
        let l = Complex64::new(graph.length_of_end(j), 0.0);
        c[(j, j)] = l / (two_i_over_k + l);
        c[(j, graph.omega(j))] = two_i_over_k / (two_i_over_k + l);
    }
    c
}

fn kernel_dim(m: &CMatrix) -> Result<usize, SpectrumError> {
    kernel_dim_with_gap(m, 1e-9, 100.0)
        .map_err(|(dropped, kept)| SpectrumError::KernelAmbiguous { dropped, kept })
}

/// Multiplicity pair at eigenvalue zero: `g0` counted as the eigenvalue-one
/// multiplicity of `S(k) C(l;k)` (k-independent; evaluated at the given
/// sample points and required to agree), `n_secular` as the eigenvalue-one
/// multiplicity of `U(0)`.
pub fn zero_modes_at(
    graph: &MetricGraph,
    ev: &ScatteringEvaluator,
    sample_ks: &[f64],
) -> Result<ZeroModes, SpectrumError> {
    let eye = CMatrix::eye(graph.num_ends());
    let mut counts = Vec::with_capacity(sample_ks.len());
    for &k in sample_ks {
        let sc = ev.s(Complex64::new(k, 0.0))?.dot(&zero_mode_matrix(graph, k));
        counts.push(kernel_dim(&(&sc - &eye))?);
    }
    if counts.windows(2).any(|w| w[0] != w[1]) {
        return Err(SpectrumError::InconsistentZeroModes { counts });
    }
    let u0 = ev.u(Complex64::new(0.0, 0.0))?;
    let n_secular = kernel_dim(&(&u0 - &eye))?;
    Ok(ZeroModes {
        g0: counts[0],
        n_secular,
    })
}

pub fn zero_modes(
    graph: &MetricGraph,
    ev: &ScatteringEvaluator,
) -> Result<ZeroModes, SpectrumError> {
    zero_modes_at(graph, ev, &[1.0, 2.0])
}

/// Winding number of `F` around the circle `center + radius e^{i phi}` and
/// the centroid of the enclosed zeros. Sample count doubles until the
/// winding value is within 1e-3 of an integer.
pub fn winding_and_centroid(
    ev: &ScatteringEvaluator,
    center: Complex64,
    radius: f64,
) -> Result<(i64, Complex64), SpectrumError> {
    let mut n = 128;
    loop {
        let mut w = Complex64::new(0.0, 0.0);
        let mut c1 = Complex64::new(0.0, 0.0);
        let mut ok = true;
        for j in 0..n {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
            let dir = Complex64::new(phi.cos(), phi.sin());
            let z = center + dir * radius;
            match secular_log_derivative(ev, z) {
                Ok(ld) => {
                    // dz/dphi = i radius e^{i phi}; 1/(2 pi i) folds in.
                    let weight = dir * radius / n as f64;
                    w += ld * weight;
                    c1 += z * ld * weight;
                }
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            let rounded = w.re.round();
            if (w - Complex64::new(rounded, 0.0)).norm() < 1e-3 {
                let count = rounded as i64;
                let centroid = if count != 0 {
                    c1 / Complex64::new(rounded, 0.0)
                } else {
                    center
                };
                return Ok((count, centroid));
            }
        }
        n *= 2;
        if n > 4096 {
            return Err(SpectrumError::WindingUnstable {
                center,
                value: f64::NAN,
            });
        }
    }
}

/// Net winding (zeros minus poles, with orders) of `F` around the closed
/// rectangle `[x0, x1] x [y0, y1]`. The boundary must stay clear of zeros
/// and poles; sampling doubles until the value is within 1e-3 of an integer.
pub fn winding_rectangle(
    ev: &ScatteringEvaluator,
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
) -> Result<i64, SpectrumError> {
    let corners = [
        Complex64::new(x0, y0),
        Complex64::new(x1, y0),
        Complex64::new(x1, y1),
        Complex64::new(x0, y1),
    ];
    let mut n_per_edge = 64;
    loop {
        let mut w = Complex64::new(0.0, 0.0);
        let mut ok = true;
        'edges: for e in 0..4 {
            let a = corners[e];
            let b = corners[(e + 1) % 4];
            let dz = (b - a) / n_per_edge as f64;
            for j in 0..n_per_edge {
                // Midpoint rule per segment avoids sampling the corners.
                let z = a + dz * (j as f64 + 0.5);
                match secular_log_derivative(ev, z) {
                    Ok(ld) => w += ld * dz,
                    Err(_) => {
                        ok = false;
                        break 'edges;
                    }
                }
            }
        }
        if ok {
            let w = w / Complex64::new(0.0, 2.0 * std::f64::consts::PI);
            let rounded = w.re.round();
            if (w - Complex64::new(rounded, 0.0)).norm() < 1e-3 {
                return Ok(rounded as i64);
            }
        }
        n_per_edge *= 2;
        if n_per_edge > 16384 {
            return Err(SpectrumError::WindingUnstable {
                center: Complex64::new(0.5 * (x0 + x1), 0.5 * (y0 + y1)),
                value: f64::NAN,
            });
        }
    }
}

struct Branches {
    k: f64,
    thetas: Vec<f64>,
    vectors: CMatrix,
    theta_primes: Vec<f64>,
}

/// Raw eigenpairs of `U(k)` with principal-value phases.
fn eigen_snapshot(
    graph: &MetricGraph,
    ev: &ScatteringEvaluator,
    k: f64,
) -> Result<Branches, SpectrumError> {
    let u = ev.u(Complex64::new(k, 0.0))?;
    let (vals, vecs) = eig_general(&u);
    let thetas: Vec<f64> = vals.iter().map(|z| z.arg()).collect();
    let r = ev.l_resolvent(Complex64::new(k, 0.0))?;
    let theta_primes: Vec<f64> = (0..vals.len())
        .map(|j| theta_prime_with_resolvent(graph, &r, vecs.column(j)))
        .collect();
    Ok(Branches {
        k,
        thetas,
        vectors: vecs,
        theta_primes,
    })
}

/// Match the eigenpairs at the next grid point to the previous branches by
/// maximal eigenvector overlap, lifting phases near the predicted values.
/// Returns the matched branch state and the smallest matched overlap among
/// branches that are not part of a degenerate cluster.
fn match_branches(
    graph: &MetricGraph,
    ev: &ScatteringEvaluator,
    prev: &Branches,
    k: f64,
) -> Result<(Branches, f64), SpectrumError> {
    let n = prev.thetas.len();
    let u = ev.u(Complex64::new(k, 0.0))?;
    let (vals, vecs) = eig_general(&u);
    let dk = k - prev.k;

    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n);
    for i in 0..n {
        let vi = prev.vectors.column(i);
        for j in 0..n {
            let ov: Complex64 = vi
                .iter()
                .zip(vecs.column(j).iter())
                .map(|(a, b)| a.conj() * b)
                .sum();
            pairs.push((ov.norm(), i, j));
        }
    }
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut assigned_prev = vec![false; n];
    let mut assigned_new = vec![false; n];
    let mut map = vec![usize::MAX; n];
    let mut overlap_of = vec![0.0f64; n];
    for (ov, i, j) in pairs {
        if assigned_prev[i] || assigned_new[j] {
            continue;
        }
        assigned_prev[i] = true;
        assigned_new[j] = true;
        map[i] = j;
        overlap_of[i] = ov;
    }

    // A branch inside a near-degenerate eigenvalue cluster may legitimately
    // mix with its partners, so low overlap is only fatal outside clusters.
    let mut min_free_overlap: f64 = 1.0;
    for i in 0..n {
        let j = map[i];
        let clustered = (0..n).any(|j2| j2 != j && (vals[j2] - vals[j]).norm() < 1e-3);
        if !clustered {
            min_free_overlap = min_free_overlap.min(overlap_of[i]);
        }
    }

    let mut thetas = vec![0.0; n];
    let mut vectors = CMatrix::zeros((n, n));
    for i in 0..n {
        let j = map[i];
        let predicted = prev.thetas[i] + dk * prev.theta_primes[i];
        let raw = vals[j].arg();
        let wraps = ((predicted - raw) / (2.0 * std::f64::consts::PI)).round();
        thetas[i] = raw + 2.0 * std::f64::consts::PI * wraps;
        vectors.column_mut(i).assign(&vecs.column(j));
    }
    let r = ev.l_resolvent(Complex64::new(k, 0.0))?;
    let theta_primes: Vec<f64> = (0..n)
        .map(|i| theta_prime_with_resolvent(graph, &r, vectors.column(i)))
        .collect();
    Ok((
        Branches {
            k,
            thetas,
            vectors,
            theta_primes,
        },
        min_free_overlap,
    ))
}

/// Locate the k in `(k_lo, k_hi)` where the branch tracked from `v_ref`
/// has its eigenvalue phase pass `2 pi m`, by bisection on the principal
/// argument relative to the target.
fn refine_crossing(
    ev: &ScatteringEvaluator,
    v_ref: ArrayView1<Complex64>,
    mut k_lo: f64,
    mut k_hi: f64,
    mut f_lo: f64,
    theta_tol: f64,
) -> Result<f64, SpectrumError> {
    let phase_at = |k: f64| -> Result<f64, SpectrumError> {
        let u = ev.u(Complex64::new(k, 0.0))?;
        let (vals, vecs) = eig_general(&u);
        let mut best = (0.0, 0usize);
        for j in 0..vals.len() {
            let ov: Complex64 = v_ref
                .iter()
                .zip(vecs.column(j).iter())
                .map(|(a, b)| a.conj() * b)
                .sum();
            if ov.norm() > best.0 {
                best = (ov.norm(), j);
            }
        }
        Ok(vals[best.1].arg())
    };
    for _ in 0..200 {
        let mid = 0.5 * (k_lo + k_hi);
        let f_mid = phase_at(mid)?;
        if f_mid.abs() < theta_tol || k_hi - k_lo < f64::EPSILON * mid.max(1.0) {
            return Ok(mid);
        }
        if (f_mid > 0.0) == (f_lo > 0.0) {
            k_lo = mid;
            f_lo = f_mid;
        } else {
            k_hi = mid;
        }
    }
    Ok(0.5 * (k_lo + k_hi))
}

/// Track all eigenphase branches on `[0, k_max]` and return the refined
/// roots (k, one entry per crossing branch) plus the recorded samples.
fn track_positive(
    graph: &MetricGraph,
    ev: &ScatteringEvaluator,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, Vec<TrackSample>), SpectrumError> {
    let (lo_rate, hi_rate) = theta_prime_bounds(graph, ev);
    let max_rate = lo_rate.abs().max(hi_rate.abs()).max(1e-6);
    let base_step = std::f64::consts::FRAC_PI_4 / max_rate;
    let two_pi = 2.0 * std::f64::consts::PI;

    let mut state = eigen_snapshot(graph, ev, 0.0)?;
    let mut samples = Vec::new();
    let mut roots: Vec<f64> = Vec::new();
    if opts.record_track {
        samples.push(TrackSample {
            k: 0.0,
            thetas: state.thetas.clone(),
            theta_primes: state.theta_primes.clone(),
            min_overlap: 1.0,
        });
    }

    while state.k < opts.k_max {
        let mut step = base_step.min(opts.k_max - state.k);
        let mut attempt = 0;
        let (next, min_overlap) = loop {
            let k_next = state.k + step;
            let (cand, ov) = match_branches(graph, ev, &state, k_next)?;
            // A clean continuation moves every phase by less than pi/2.
            let jump_ok = cand
                .thetas
                .iter()
                .zip(state.thetas.iter())
                .all(|(a, b)| (a - b).abs() < std::f64::consts::FRAC_PI_2);
            if (ov > 0.9 && jump_ok) || attempt >= 8 {
                if ov <= 0.9 && attempt >= 8 {
                    return Err(SpectrumError::TrackingLoss {
                        k: k_next,
                        overlap: ov,
                    });
                }
                break (cand, ov);
            }
            step *= 0.5;
            attempt += 1;
        };

        for i in 0..next.thetas.len() {
            let a = state.thetas[i];
            let b = next.thetas[i];
            let (m_lo, m_hi) = if a < b {
                ((a / two_pi).floor() as i64 + 1, (b / two_pi).floor() as i64)
            } else {
                ((b / two_pi).ceil() as i64, (a / two_pi).ceil() as i64 - 1)
            };
            for m in m_lo..=m_hi {
                let target = two_pi * m as f64;
                // Bisection works on the phase relative to the target.
                let root = refine_crossing(
                    ev,
                    state.vectors.column(i),
                    state.k,
                    next.k,
                    a - target,
                    opts.theta_tol,
                )?;
                roots.push(root);
            }
        }

        if opts.record_track {
            samples.push(TrackSample {
                k: next.k,
                thetas: next.thetas.clone(),
                theta_primes: next.theta_primes.clone(),
                min_overlap,
            });
        }
        state = next;
    }
    roots.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok((roots, samples))
}

fn cluster_roots(roots: &[f64], cluster_tol: f64, min_k: f64) -> Vec<PositiveEigenvalue> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < roots.len() {
        let mut j = i + 1;
        while j < roots.len() && roots[j] - roots[j - 1] <= cluster_tol {
            j += 1;
        }
        let slice = &roots[i..j];
        let mean = slice.iter().sum::<f64>() / slice.len() as f64;
        if mean > min_k {
            out.push(PositiveEigenvalue {
                k: mean,
                multiplicity: slice.len(),
            });
        }
        i = j;
    }
    out
}

/// Confirm the multiplicity of each located root by the argument principle
/// on a small circle. Returns false on any mismatch.
fn verify_multiplicities(
    ev: &ScatteringEvaluator,
    eigenvalues: &[PositiveEigenvalue],
) -> Result<bool, SpectrumError> {
    for (idx, pe) in eigenvalues.iter().enumerate() {
        let mut radius: f64 = 1e-3;
        if idx > 0 {
            radius = radius.min((pe.k - eigenvalues[idx - 1].k) / 3.0);
        }
        if idx + 1 < eigenvalues.len() {
            radius = radius.min((eigenvalues[idx + 1].k - pe.k) / 3.0);
        }
        radius = radius.min(pe.k / 2.0);
        let (w, _) = winding_and_centroid(ev, Complex64::new(pe.k, 0.0), radius)?;
        if w != pe.multiplicity as i64 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Zeros of `F(i kappa)` on `(0, s(1+margin)]` with argument-principle
/// confirmation and centroid/Newton refinement.
pub fn negative_eigenvalues(
    graph: &MetricGraph,
    ev: &ScatteringEvaluator,
    opts: &SolverOptions,
) -> Result<Vec<NegativeEigenvalue>, SpectrumError> {
    let s = lower_bound_s(graph, ev);
    if s == 0.0 {
        return Ok(Vec::new());
    }
    let hi = s * 1.05;
    let n = opts.negative_grid;
    let positive_poles: Vec<f64> = ev
        .canonical()
        .nonzero_lambdas()
        .iter()
        .filter(|&&l| l > 0.0)
        .cloned()
        .collect();
    let near_pole = |kappa: f64| positive_poles.iter().any(|&p| (kappa - p).abs() < 1e-4);

    let mut values = vec![f64::NAN; n + 1];
    for i in 1..=n {
        let kappa = hi * i as f64 / n as f64;
        if near_pole(kappa) {
            continue;
        }
        values[i] = secular_f(ev, Complex64::new(0.0, kappa))?.norm();
    }
    let mut candidates: Vec<f64> = Vec::new();
    for i in 2..n {
        let (a, b, c) = (values[i - 1], values[i], values[i + 1]);
        if a.is_nan() || b.is_nan() || c.is_nan() {
            continue;
        }
        if b < a && b <= c {
            candidates.push(hi * i as f64 / n as f64);
        }
    }

    let mut found: Vec<NegativeEigenvalue> = Vec::new();
    for (ci, &kappa_c) in candidates.iter().enumerate() {
        let mut radius: f64 = 1e-3;
        radius = radius.min(kappa_c / 2.0);
        for (cj, &other) in candidates.iter().enumerate() {
            if ci != cj {
                radius = radius.min((kappa_c - other).abs() / 2.0);
            }
        }
        let pole_dist = positive_poles
            .iter()
            .fold(f64::INFINITY, |m, &p| m.min((kappa_c - p).abs()));
        radius = radius.min((pole_dist - ev.exclusion_radius()).max(0.0) / 2.0);
        if radius < 1e-7 {
            found.push(NegativeEigenvalue {
                kappa: kappa_c,
                multiplicity: 0,
                resolved: false,
            });
            continue;
        }
        let center = Complex64::new(0.0, kappa_c);
        let (w, centroid) = winding_and_centroid(ev, center, radius)?;
        if w <= 0 {
            continue;
        }
        // Re-center for a sharper centroid, then polish with Newton steps
        // adapted to the multiplicity.
        let (w2, centroid2) = winding_and_centroid(ev, centroid, radius / 4.0)?;
        let mut z = if w2 == w { centroid2 } else { centroid };
        for _ in 0..8 {
            let ld = match secular_log_derivative(ev, z) {
                Ok(v) => v,
                Err(_) => break,
            };
            let step = Complex64::new(w as f64, 0.0) / ld;
            if step.norm() > radius {
                break;
            }
            z -= step;
            if step.norm() < 1e-13 {
                break;
            }
        }
        let kappa = z.im;
        if !found.iter().any(|e| (e.kappa - kappa).abs() < 1e-9) {
            found.push(NegativeEigenvalue {
                kappa,
                multiplicity: w as usize,
                resolved: true,
            });
        }
    }
    found.sort_by(|a, b| a.kappa.partial_cmp(&b.kappa).unwrap());
    Ok(found)
}

/// Compute the complete spectrum up to `opts.k_max`.
pub fn compute_spectrum(
    graph: &MetricGraph,
    ev: &ScatteringEvaluator,
    opts: &SolverOptions,
) -> Result<Spectrum, SpectrumError> {
    let can = ev.canonical();
    let simple_crossings = if can.lambda_plus_min().is_infinite() {
        true
    } else {
        graph.min_edge_length() > 2.0 / can.lambda_plus_min()
    };

    let (roots, track) = track_positive(graph, ev, opts)?;
    let positive = cluster_roots(&roots, opts.cluster_tol, opts.min_positive_k);
    let multiplicities_verified = if simple_crossings {
        true
    } else {
        verify_multiplicities(ev, &positive)?
    };

    let negative = negative_eigenvalues(graph, ev, opts)?;
    let zero = zero_modes(graph, ev)?;

    Ok(Spectrum {
        positive,
        zero,
        negative,
        k_max: opts.k_max,
        s_bound: lower_bound_s(graph, ev),
        flags: ConditionFlags {
            simple_crossings,
            multiplicities_verified,
            orbit_window: orbit_sum_window(graph, ev),
        },
        track,
    })
}

impl Spectrum {
    /// Counting function `N(K)`: eigenvalues `k_n <= K` including the zero
    /// mode with its multiplicity.
    pub fn counting(&self, k: f64) -> usize {
        let positives: usize = self
            .positive
            .iter()
            .take_while(|pe| pe.k <= k)
            .map(|pe| pe.multiplicity)
            .sum();
        if k >= 0.0 {
            positives + self.zero.g0
        } else {
            positives
        }
    }

    pub fn weyl_rows(&self, graph: &MetricGraph, ks: &[f64]) -> Vec<WeylRow> {
        let slope = graph.total_length() / std::f64::consts::PI;
        ks.iter()
            .map(|&k| {
                let counted = self.counting(k);
                let predicted = slope * k;
                WeylRow {
                    k,
                    counted,
                    predicted,
                    deviation: counted as f64 - predicted,
                }
            })
            .collect()
    }
}
