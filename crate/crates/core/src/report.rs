//! Output documents for the command-line frontend: CSV and JSON writers
//! for spectra, trace-identity reports, and the consistency-check suite.
//! All floating-point values are serialized with 17 significant digits so
//! that re-ingesting a document reproduces bit-identical numbers.

use crate::config::RunParams;
use crate::graph::MetricGraph;
use crate::linalg::{eig_general, max_abs, op_norm};
use crate::scattering::{ScatteringError, ScatteringEvaluator};
use crate::spectrum::{
    functional_equation_residual, theta_prime, Spectrum, SpectrumError,
};
use crate::traceformula::{
    matrix_trace_d, matrix_trace_resolvent, AmplitudeEvaluator, TraceError, TraceReport,
};
use crate::{CMatrix, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Scattering(#[from] ScatteringError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
}

/// 17 significant digits: enough to reproduce any f64 exactly.
fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_spectrum_csv(path: &Path, spectrum: &Spectrum) -> Result<(), ReportError> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "k,multiplicity,sign")?;
    let mut negatives = spectrum.negative.clone();
    negatives.sort_by(|a, b| b.kappa.total_cmp(&a.kappa));
    for ne in &negatives {
        writeln!(f, "{},{},negative", fmt(ne.kappa), ne.multiplicity)?;
    }
    if spectrum.zero.g0 > 0 {
        writeln!(f, "{},{},zero", fmt(0.0), spectrum.zero.g0)?;
    }
    for pe in &spectrum.positive {
        writeln!(f, "{},{},positive", fmt(pe.k), pe.multiplicity)?;
    }
    Ok(())
}

pub fn write_weyl_csv(
    path: &Path,
    graph: &MetricGraph,
    spectrum: &Spectrum,
    samples: usize,
) -> Result<(), ReportError> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "k,counted,predicted,deviation")?;
    let ks: Vec<f64> = (1..=samples)
        .map(|i| spectrum.k_max * i as f64 / samples as f64)
        .collect();
    for row in spectrum.weyl_rows(graph, &ks) {
        writeln!(
            f,
            "{},{},{},{}",
            fmt(row.k),
            row.counted,
            fmt(row.predicted),
            fmt(row.deviation)
        )?;
    }
    Ok(())
}

/// Spectrum plus the parameters that produced it; the on-disk form of
/// `spectrum.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumDocument {
    pub params: RunParams,
    pub spectrum: Spectrum,
}

pub fn write_spectrum_json(path: &Path, doc: &SpectrumDocument) -> Result<(), ReportError> {
    let f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(f, doc)?;
    Ok(())
}

pub fn load_spectrum_json(path: &Path) -> Result<SpectrumDocument, ReportError> {
    let f = std::fs::File::open(path)?;
    Ok(serde_json::from_reader(f)?)
}

/// Trace-identity report plus run parameters; the on-disk form of
/// `report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyDocument {
    pub params: RunParams,
    pub requested_identity: String,
    /// Identity actually used: requested tf2 silently degrades to tf1
    /// grouping when the convergence window is unsatisfied.
    pub grouping: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    pub report: TraceReport,
}

pub fn write_report_json(path: &Path, doc: &VerifyDocument) -> Result<(), ReportError> {
    let f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(f, doc)?;
    Ok(())
}

/// Heat-identity sweep document: one report per time sample.
#[derive(Debug, Clone, Serialize)]
pub struct HeatDocument {
    pub params: RunParams,
    pub reports: Vec<TraceReport>,
}

pub fn write_heat_json(path: &Path, doc: &HeatDocument) -> Result<(), ReportError> {
    let f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(f, doc)?;
    Ok(())
}

/// Rows `(cutoff, lhs, rhs, residual)` where the right side is truncated
/// at each topological orbit length in turn.
pub fn convergence_rows(report: &TraceReport) -> Vec<(f64, f64, f64, f64)> {
    let fixed =
        report.terms.volume_term + report.terms.zero_term + report.terms.im_tr_s_term;
    let mut acc = fixed;
    report
        .per_length
        .iter()
        .map(|lp| {
            acc += lp.partial_sum;
            (
                lp.topological_length as f64,
                report.lhs,
                acc,
                (report.lhs - acc).abs(),
            )
        })
        .collect()
}

pub fn write_convergence_csv(
    path: &Path,
    rows: &[(f64, f64, f64, f64)],
) -> Result<(), ReportError> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "cutoff,lhs,rhs,residual")?;
    for (cutoff, lhs, rhs, residual) in rows {
        writeln!(f, "{},{},{},{}", fmt(*cutoff), fmt(*lhs), fmt(*rhs), fmt(*residual))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityCheck {
    pub name: String,
    pub samples: usize,
    pub max_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl IdentityCheck {
    fn new(name: &str, samples: usize, max_residual: f64, tolerance: f64) -> Self {
        IdentityCheck {
            name: name.into(),
            samples,
            max_residual,
            tolerance,
            pass: max_residual < tolerance,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentitySuite {
    pub all_pass: bool,
    pub checks: Vec<IdentityCheck>,
}

pub fn write_identities_json(path: &Path, suite: &IdentitySuite) -> Result<(), ReportError> {
    let f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(f, suite)?;
    Ok(())
}

fn hermitian_defect(m: &CMatrix) -> f64 {
    let mh = m.t().mapv(|z| z.conj());
    let prod = m.dot(&mh);
    let n = m.nrows();
    let mut eye = CMatrix::zeros((n, n));
    for i in 0..n {
        eye[(i, i)] = Complex64::new(1.0, 0.0);
    }
    max_abs(&(&prod - &eye))
}

/// Deterministic consistency-check suite over the structural identities:
/// unitarity of S and U, the secular functional equation, derivative
/// formulas against finite differences, analytic norm bounds off the real
/// axis, and the grouped orbit sums against matrix-power traces.
pub fn run_identity_suite(
    graph: &MetricGraph,
    ev: &ScatteringEvaluator,
    seed: u64,
) -> Result<IdentitySuite, ReportError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    // Unitarity on the real axis.
    let mut worst_s = 0.0f64;
    let mut worst_u = 0.0f64;
    for _ in 0..100 {
        let k = Complex64::new(rng.gen_range(0.05..50.0), 0.0);
        worst_s = worst_s.max(hermitian_defect(&ev.s(k)?));
        worst_u = worst_u.max(hermitian_defect(&ev.u(k)?));
    }
    checks.push(IdentityCheck::new("s_unitarity", 100, worst_s, 1e-12));
    checks.push(IdentityCheck::new("u_unitarity", 100, worst_u, 1e-12));

    // Functional equation of the secular determinant at complex k. The
    // imaginary part stays small enough that e^{2ikL} is of order one and
    // the absolute tolerance is meaningful.
    let im_cap = (0.4 / graph.total_length()).min(0.4);
    let mut worst = 0.0f64;
    let mut accepted = 0usize;
    let mut attempts = 0usize;
    while accepted < 100 && attempts < 10_000 {
        attempts += 1;
        let k = Complex64::new(
            rng.gen_range(-6.0..6.0),
            rng.gen_range(-im_cap..im_cap),
        );
        if k.norm() < 1e-3 || ev.distance_to_poles(k) < 2.0 * ev.exclusion_radius() {
            continue;
        }
        worst = worst.max(functional_equation_residual(graph, ev, k)?);
        accepted += 1;
    }
    checks.push(IdentityCheck::new(
        "functional_equation",
        accepted,
        worst,
        1e-10,
    ));

    // S' against central differences, relative to the derivative's scale.
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let k = rng.gen_range(0.2..40.0);
        let sp = ev.s_prime(Complex64::new(k, 0.0))?;
        let fp = ev.s(Complex64::new(k + h, 0.0))?;
        let fm = ev.s(Complex64::new(k - h, 0.0))?;
        let fd = (&fp - &fm).mapv(|z| z / Complex64::new(2.0 * h, 0.0));
        let scale = max_abs(&sp).max(1e-12);
        worst = worst.max(max_abs(&(&sp - &fd)) / scale);
    }
    checks.push(IdentityCheck::new("s_derivative_fd", 100, worst, 1e-6));

    // Eigenphase derivative against central differences of tracked phases.
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut used = 0usize;
    let mut tries = 0usize;
    while used < 50 && tries < 2_000 {
        tries += 1;
        let k = rng.gen_range(0.5..30.0);
        let u0 = ev.u(Complex64::new(k, 0.0))?;
        let (vals, vecs) = eig_general(&u0);
        // Pick the branch farthest from all others so overlap matching
        // cannot be confused by a near-crossing.
        let mut best: Option<(usize, f64)> = None;
        for j in 0..vals.len() {
            let gap = (0..vals.len())
                .filter(|&j2| j2 != j)
                .map(|j2| (vals[j2] - vals[j]).norm())
                .fold(f64::INFINITY, f64::min);
            if best.map_or(true, |(_, g)| gap > g) {
                best = Some((j, gap));
            }
        }
        let (j, gap) = best.expect("at least one branch");
        if gap < 1e-3 {
            continue;
        }
        let v = vecs.column(j);
        let matched_arg = |k_off: f64| -> Result<Option<f64>, ReportError> {
            let u = ev.u(Complex64::new(k_off, 0.0))?;
            let (vals2, vecs2) = eig_general(&u);
            let mut best = (0usize, 0.0f64);
            for j2 in 0..vals2.len() {
                let overlap: Complex64 = v
                    .iter()
                    .zip(vecs2.column(j2).iter())
                    .map(|(a, b)| a.conj() * b)
                    .sum();
                if overlap.norm() > best.1 {
                    best = (j2, overlap.norm());
                }
            }
            if best.1 < 0.9 {
                return Ok(None);
            }
            Ok(Some(vals2[best.0].arg()))
        };
        let (tp, tm) = match (matched_arg(k + h)?, matched_arg(k - h)?) {
            (Some(a), Some(b)) => (a, b),
            _ => continue,
        };
        let mut diff = tp - tm;
        diff -= 2.0 * std::f64::consts::PI * (diff / (2.0 * std::f64::consts::PI)).round();
        let fd = diff / (2.0 * h);
        let formula = theta_prime(graph, ev, k, v)?;
        worst = worst.max((formula - fd).abs());
        used += 1;
    }
    checks.push(IdentityCheck::new("theta_prime_fd", used, worst, 1e-5));

    // Norm bounds off the real axis: below the smallest positive
    // eigenvalue of L and above the largest one.
    let can = ev.canonical();
    let mut worst = 0.0f64;
    let mut n_bound = 0usize;
    for _ in 0..100 {
        let re = rng.gen_range(-5.0..5.0);
        let lp = can.lambda_plus_min();
        if lp.is_infinite() {
            let kappa = rng.gen_range(0.1..3.0);
            let k = Complex64::new(re, kappa);
            let excess = op_norm(&ev.s(k)?) - ev.s_norm_bound_below_lambda(kappa);
            let u_excess = op_norm(&ev.u(k)?) - ev.u_norm_bound(kappa);
            worst = worst.max(excess).max(u_excess);
        } else {
            let kappa = rng.gen_range(0.05 * lp..0.95 * lp);
            let k = Complex64::new(re, kappa);
            if ev.distance_to_poles(k) > 2.0 * ev.exclusion_radius() {
                let excess = op_norm(&ev.s(k)?) - ev.s_norm_bound_below_lambda(kappa);
                let u_excess = op_norm(&ev.u(k)?) - ev.u_norm_bound(kappa);
                worst = worst.max(excess).max(u_excess);
            }
            let lm = can.lambda_max();
            let kappa = rng.gen_range(1.05 * lm + 0.1..3.0 * lm + 5.0);
            let k = Complex64::new(re, kappa);
            if ev.distance_to_poles(k) > 2.0 * ev.exclusion_radius() {
                let excess = op_norm(&ev.s(k)?) - ev.s_norm_bound_above_lambda(kappa);
                worst = worst.max(excess);
            }
        }
        n_bound += 1;
    }
    checks.push(IdentityCheck::new("norm_bounds", n_bound, worst, 1e-10));

    // Grouped orbit sums against matrix-power traces.
    let table = graph.enumerate_orbits(&ev.transition_mask(), 6, 200_000)?;
    let amp = AmplitudeEvaluator::new(graph, ev);
    let mut worst = 0.0f64;
    for l in 1..=6usize {
        for _ in 0..20 {
            let k = Complex64::new(rng.gen_range(0.2..6.0), 0.0);
            let mut d_sum = Complex64::new(0.0, 0.0);
            let mut r_sum = Complex64::new(0.0, 0.0);
            for p in table.of_length(l) {
                let osc = Complex64::new(0.0, k.re * p.metric_len).exp();
                d_sum += p.primitive_len * amp.a1(p, k)? * osc;
                r_sum += amp.a2(p, k)? * osc;
            }
            worst = worst.max((d_sum - matrix_trace_d(ev, l as u32, k)?).norm());
            worst = worst.max((r_sum - matrix_trace_resolvent(ev, l as u32, k)?).norm());
        }
    }
    checks.push(IdentityCheck::new("orbit_trace_oracle", 120, worst, 1e-9));

    let all_pass = checks.iter().all(|c| c.pass);
    Ok(IdentitySuite { all_pass, checks })
}
