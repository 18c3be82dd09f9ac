//! Outlier locations and the spectral measure of the deformation eigenvectors.

use std::f64::consts::PI;

use nalgebra::{Complex, DVector};

use crate::ensemble::{hermitian_spectrum, Beta, Entries, Model, SampledMatrix, C64};
use crate::error::{Error, Result};
use crate::lanczos::extreme_eigenpairs;
use crate::par::{trial_seed, try_map_trials};
use crate::quadrature::integrate;
use crate::stats::summarize;

/// Limit of the eigenvalue attached to a deformation eigenvalue `a`:
/// `a + 1/a` past the threshold `|a| > 1`, else the bulk edge `±2`.
pub fn outlier_limit(a: f64) -> Result<f64> {
    if a == 0.0 || !a.is_finite() {
        return Err(Error::ZeroDeformation);
    }
    Ok(if a > 1.0 {
        a + 1.0 / a
    } else if a > 0.0 {
        2.0
    } else if a >= -1.0 {
        -2.0
    } else {
        a + 1.0 / a
    })
}

/// Predicted limits of `λ_1..λ_jmax` and of `λ_N, λ_{N−1}, …` (`jmax` each).
pub fn bbp_predictions(deformation_eigenvalues: &[f64], j_max: usize) -> (Vec<f64>, Vec<f64>) {
    let mut desc = deformation_eigenvalues.to_vec();
    desc.sort_by(|a, b| b.total_cmp(a));
    let top = (0..j_max)
        .map(|j| match desc.get(j) {
            Some(&a) if a > 1.0 => a + 1.0 / a,
            _ => 2.0,
        })
        .collect();
    let bottom = (0..j_max)
        .map(|j| match desc.iter().rev().nth(j) {
            Some(&a) if a < -1.0 => a + 1.0 / a,
            _ => -2.0,
        })
        .collect();
    (top, bottom)
}

/// `μ_a`: density `(1/2π)√(4−x²)/(a²+1−ax)` on `[−2, 2]` plus an atom of mass
/// `1 − 1/a²` at `a + 1/a` when `|a| ≥ 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralMeasureTarget {
    pub a: f64,
    pub atom_location: f64,
    pub atom_mass: f64,
}

pub const MAX_DEFORMATION: f64 = 100.0;
// Absolute tolerance on the θ-integral, per unit of the integrand's bound 2^m.
const MOMENT_TOL: f64 = 2.5e-13;

impl SpectralMeasureTarget {
    pub fn new(a: f64) -> Result<Self> {
        if !(a.abs() <= MAX_DEFORMATION) {
            return Err(Error::Domain(format!("|a| = {} exceeds {MAX_DEFORMATION}", a.abs())));
        }
        let (atom_location, atom_mass) = if a.abs() >= 1.0 { (a + 1.0 / a, 1.0 - 1.0 / (a * a)) } else { (f64::NAN, 0.0) };
        Ok(Self { a, atom_location, atom_mass })
    }

    pub fn density(&self, x: f64) -> f64 {
        if x.abs() > 2.0 {
            return 0.0;
        }
        let denom = self.a * self.a + 1.0 - self.a * x;
        if denom <= 0.0 {
            return f64::INFINITY;
        }
        (4.0 - x * x).sqrt() / (2.0 * PI * denom)
    }

    /// `∫ x^m` over the continuous part, after `x = 2cos θ`:
    /// `(2/π) ∫_0^π (2cos θ)^m sin²θ / (a² + 1 − 2a cos θ) dθ`.
    pub fn continuous_moment(&self, m: u32) -> Result<f64> {
        let a = self.a;
        let f = move |t: f64| {
            let (sh, ch) = (0.5 * t).sin_cos();
            let (sh2, ch2) = (sh * sh, ch * ch);
            // a² + 1 − 2a cos θ without cancellation near the peak at θ = 0 (a > 0) or π (a < 0)
            let denom = if a >= 0.0 { (a - 1.0).powi(2) + 4.0 * a * sh2 } else { (a + 1.0).powi(2) - 4.0 * a * ch2 };
            let ratio = if denom > 0.0 { 4.0 * sh2 * ch2 / denom } else if a >= 0.0 { ch2 } else { sh2 };
            (2.0 * t.cos()).powi(m as i32) * ratio
        };
        let mut pieces = vec![0.0, PI];
        if (a.abs() - 1.0).abs() < 0.5 {
            // split off the Poisson-kernel peak at the end where the denominator is smallest
            let w = (a.abs() - 1.0).abs().max(1e-6);
            pieces.insert(1, if a > 0.0 { w } else { PI - w });
        }
        let mut total = 0.0;
        for w in pieces.windows(2) {
            total += integrate(f, w[0], w[1], MOMENT_TOL * 2f64.powi(m as i32) / (pieces.len() - 1) as f64, 20_000)?.value;
        }
        Ok(2.0 / PI * total)
    }

    pub fn moment(&self, m: u32) -> Result<f64> {
        let atom = if self.atom_mass > 0.0 { self.atom_mass * self.atom_location.powi(m as i32) } else { 0.0 };
        Ok(self.continuous_moment(m)? + atom)
    }
}

/// `∫ x^m dμ_a`.
pub fn mu_a_moment(a: f64, m: u32) -> Result<f64> {
    SpectralMeasureTarget::new(a)?.moment(m)
}

pub const MAX_MOMENT_ORDER: usize = 30;

/// `(q* X^m q)_{m = 0..=m_max}` by repeated matrix–vector products.
pub fn spectral_measure_moments(x: &SampledMatrix, q: &DVector<C64>, m_max: usize) -> Result<Vec<f64>> {
    let norm = q.norm();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::NotUnit(norm));
    }
    if m_max > MAX_MOMENT_ORDER {
        return Err(Error::Domain(format!("m_max = {m_max} exceeds {MAX_MOMENT_ORDER}")));
    }
    if q.len() != x.n {
        return Err(Error::SizeMismatch { expected: x.n, found: q.len() });
    }
    let mut out = Vec::with_capacity(m_max + 1);
    let mut v = q.clone();
    out.push(q.dotc(&v).re);
    for _ in 0..m_max {
        v = x.apply(&v);
        out.push(q.dotc(&v).re);
    }
    Ok(out)
}

/// The `n_top` largest and `n_bottom` smallest eigenvalues of `x`.
pub fn extreme_eigenvalues(x: &SampledMatrix, n_top: usize, n_bottom: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    match (&x.entries, x.beta) {
        (Entries::Real(m), Beta::Real) if x.n > 64 => {
            let tol = 1e-10 * m.norm().max(1.0);
            let p = extreme_eigenpairs(m, n_top, n_bottom, tol, x.seed ^ 0x5EED)?;
            Ok((p.top, p.bottom))
        }
        _ => {
            let all = hermitian_spectrum(x)?;
            let top = all.iter().take(n_top).copied().collect();
            let bottom = all.iter().rev().take(n_bottom).copied().collect();
            Ok((top, bottom))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Top,
    Bottom,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct BbpRow {
    pub side: Side,
    /// `j` for `λ_j` on the top side, or for `λ_{N+1−j}` on the bottom side.
    pub index: usize,
    pub mean: f64,
    pub stddev: f64,
    pub stderr: f64,
    pub prediction: f64,
    pub abs_err: f64,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct BbpTable {
    pub rows: Vec<BbpRow>,
    /// Per trial: top eigenvalues then bottom eigenvalues.
    pub samples: Vec<(Vec<f64>, Vec<f64>)>,
    pub warnings: Vec<String>,
}

pub const MIN_BBP_TRIALS: usize = 30;

fn sparsity_warning(model: &Model, factor: f64) -> Option<String> {
    let n = model.n() as f64;
    let proxy = factor * model.profile.sigma_star() * n.ln().max(0.0).sqrt();
    (proxy > 0.5).then(|| format!("sparsity proxy {proxy:.3} exceeds 0.5; finite-N bias may be visible"))
}

/// Trial means of the `j_max` largest and smallest eigenvalues against
/// their predicted limits.
pub fn run_bbp_experiment(model: &Model, trials: usize, master_seed: u64, j_max: usize) -> Result<BbpTable> {
    if trials < MIN_BBP_TRIALS {
        return Err(Error::TooFewSamples { got: trials, need: MIN_BBP_TRIALS });
    }
    let r = model.deformation.rank() as f64;
    let warnings: Vec<String> = sparsity_warning(model, r + 1.0).into_iter().collect();
    let samples = try_map_trials(trials, |t| {
        let x = model.sample(trial_seed(master_seed, t as u64))?;
        extreme_eigenvalues(&x, j_max, j_max)
    })?;
    let (pred_top, pred_bottom) = bbp_predictions(model.deformation.eigenvalues(), j_max);
    let mut rows = Vec::new();
    for (side, preds) in [(Side::Top, &pred_top), (Side::Bottom, &pred_bottom)] {
        for j in 0..j_max {
            let xs: Vec<f64> = samples
                .iter()
                .map(|(top, bottom)| if side == Side::Top { top[j] } else { bottom[j] })
                .collect();
            let s = summarize(&xs);
            rows.push(BbpRow {
                side,
                index: j + 1,
                mean: s.mean,
                stddev: s.variance.sqrt(),
                stderr: s.stderr,
                prediction: preds[j],
                abs_err: (s.mean - preds[j]).abs(),
            });
        }
    }
    Ok(BbpTable { rows, samples, warnings })
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct MomentRow {
    pub m: usize,
    pub empirical: f64,
    pub stderr: f64,
    pub target: f64,
    pub abs_err: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct SpectralMeasureReport {
    pub a: f64,
    pub rows: Vec<MomentRow>,
    /// `max_m |empirical − target|` over `1 ≤ m ≤ m_max`.
    pub max_abs_err: f64,
    pub max_rel_err: f64,
}

/// Trial-averaged moments of the spectral measure at the eigenvector of
/// `A_N` for `a_i` (0-based `a_index`), against the moments of `μ_{a_i}`.
pub fn verify_spectral_measure(
    model: &Model,
    a_index: usize,
    m_max: usize,
    trials: usize,
    master_seed: u64,
) -> Result<SpectralMeasureReport> {
    if trials < 2 {
        return Err(Error::TooFewSamples { got: trials, need: 2 });
    }
    let a = *model
        .deformation
        .eigenvalues()
        .get(a_index)
        .ok_or(Error::IndexOutOfRange { index: a_index + 1, n: model.deformation.rank() })?;
    let q = model.deformation.embedded_eigenvector(a_index, model.n())?;
    let target = SpectralMeasureTarget::new(a)?;
    let per_trial = try_map_trials(trials, |t| {
        let x = model.sample(trial_seed(master_seed, t as u64))?;
        spectral_measure_moments(&x, &q, m_max)
    })?;
    let mut rows = Vec::with_capacity(m_max + 1);
    for m in 0..=m_max {
        let xs: Vec<f64> = per_trial.iter().map(|v| v[m]).collect();
        let s = summarize(&xs);
        let t = target.moment(m as u32)?;
        let abs_err = (s.mean - t).abs();
        rows.push(MomentRow { m, empirical: s.mean, stderr: s.stderr, target: t, abs_err, rel_err: abs_err / t.abs().max(1e-300) });
    }
    let max_abs_err = rows.iter().skip(1).map(|r| r.abs_err).fold(0.0, f64::max);
    let max_rel_err = rows.iter().skip(1).filter(|r| r.target.abs() > 1e-12).map(|r| r.rel_err).fold(0.0, f64::max);
    Ok(SpectralMeasureReport { a, rows, max_abs_err, max_rel_err })
}

/// `Σ_i λ_i^m |⟨v_i, q⟩|²` from a full eigendecomposition.
pub fn spectral_moments_from_eigen(x: &SampledMatrix, q: &DVector<C64>, m_max: usize) -> Result<Vec<f64>> {
    let h = x.to_complex();
    let eig = nalgebra::SymmetricEigen::try_new(h, 1e-14, 0)
        .ok_or_else(|| Error::Numeric { seed: x.seed, msg: "eigensolver did not converge".into() })?;
    let weights: Vec<f64> = (0..x.n).map(|i| eig.eigenvectors.column(i).dotc(q).norm_sqr()).collect();
    Ok((0..=m_max)
        .map(|m| (0..x.n).map(|i| eig.eigenvalues[i].powi(m as i32) * weights[i]).sum())
        .collect())
}

/// Standard basis vector `e_i` (0-based) in `ℂ^n`.
pub fn unit_vector(n: usize, i: usize) -> DVector<C64> {
    let mut q = DVector::from_element(n, Complex::new(0.0, 0.0));
    q[i] = Complex::new(1.0, 0.0);
    q
}
