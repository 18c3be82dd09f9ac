//! Outlier fluctuations: the limiting matrix `Z_β`, the rescaled top
//! eigenvalues, and the Laplace-transform check of the moment expansion.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::ensemble::{hermitian_spectrum, Beta, EntryLaw, LawKind, Model, SampledMatrix, C64};
use crate::error::{Error, Result};
use crate::lanczos::extreme_eigenpairs;
use crate::par::{stream_seed, trial_seed, try_map_trials};
use crate::profile::LimitLawParams;
use crate::spectral::{extreme_eigenvalues, outlier_limit};
use crate::stats::summarize;

const NEGATIVE_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct LimitingMatrixSample {
    /// Eigenvalues of `Z_β`, descending.
    pub z: Vec<f64>,
    pub h_id: DMatrix<C64>,
    pub h_gauss: DMatrix<C64>,
    pub h_diag: DMatrix<C64>,
}

/// Checks the parameters once so that repeated sampling cannot fail.
pub fn validate_params(params: &LimitLawParams, law: &EntryLaw) -> Result<()> {
    if law.beta != params.beta {
        return Err(Error::BetaMismatch("entry law and limit parameters disagree on beta".into()));
    }
    let r = params.r;
    if params.g.shape() != (r, r) || params.sigma_tilde.shape() != (r, r) || params.chi.len() != r || params.tau.len() != r {
        return Err(Error::InvalidParams(format!("parameter shapes do not match r = {r}")));
    }
    if params.q_rows.ncols() != r || params.q_rows.nrows() == 0 || params.q_rows.nrows() > r {
        return Err(Error::InvalidParams("q_rows must be q x r with 1 <= q <= r".into()));
    }
    if let Some(v) = params.g.iter().find(|&&v| v < -NEGATIVE_TOL) {
        return Err(Error::InvalidParams(format!("g has a negative entry {v:e}; its square root is undefined")));
    }
    for i in 0..r {
        let v = params.tau[i] - params.chi[i];
        if v < -NEGATIVE_TOL {
            return Err(Error::NegativeVariance { index: i + 1, value: v });
        }
    }
    Ok(())
}

/// One draw of `Z_β = Q_β(H_ID + H_Gaussian + H_Diag)Q_β*`.
pub fn sample_z(params: &LimitLawParams, law: &EntryLaw, seed: u64) -> Result<LimitingMatrixSample> {
    validate_params(params, law)?;
    Ok(sample_z_unchecked(params, law, &mut ChaCha8Rng::seed_from_u64(seed)))
}

fn sample_z_unchecked<R: Rng>(params: &LimitLawParams, law: &EntryLaw, rng: &mut R) -> LimitingMatrixSample {
    let r = params.r;
    let gaussian = EntryLaw::new(LawKind::Gaussian, params.beta);
    let mut h_id = DMatrix::zeros(r, r);
    let mut h_gauss = DMatrix::zeros(r, r);
    let mut h_diag = DMatrix::zeros(r, r);
    for i in 0..r {
        for j in i..r {
            let w = law.draw(rng, i == j) * params.sigma_tilde[(i, j)];
            let gz = gaussian.draw(rng, i == j) * params.g[(i, j)].max(0.0).sqrt();
            h_id[(i, j)] = w;
            h_id[(j, i)] = w.conj();
            h_gauss[(i, j)] = gz;
            h_gauss[(j, i)] = gz.conj();
        }
        let sd = (params.tau[i] - params.chi[i]).max(0.0).sqrt();
        let d: f64 = rng.sample(StandardNormal);
        h_diag[(i, i)] = C64::new(d * sd, 0.0);
    }
    let q = &params.q_rows;
    let z = q * (&h_id + &h_gauss + &h_diag) * q.adjoint();
    // exact Hermitian symmetry before the eigensolver
    let z = (&z + z.adjoint()) * C64::new(0.5, 0.0);
    let mut eig: Vec<f64> = SymmetricEigen::new(z).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    LimitingMatrixSample { z: eig, h_id, h_gauss, h_diag }
}

/// `count` independent eigenvalue lists of `Z_β`.
pub fn sample_z_many(params: &LimitLawParams, law: &EntryLaw, count: usize, master_seed: u64) -> Result<Vec<Vec<f64>>> {
    validate_params(params, law)?;
    try_map_trials(count, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(master_seed, i as u64));
        Ok(sample_z_unchecked(params, law, &mut rng).z)
    })
}

/// `a²/((a² − 1)σ*) · (λ − ρ_a)`.
pub fn scaled_statistic(lambda: f64, a: f64, sigma_star: f64) -> f64 {
    let a2 = a * a;
    a2 / ((a2 - 1.0) * sigma_star) * (lambda - (a + 1.0 / a))
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct FluctuationSample {
    pub trial: usize,
    pub seed: u64,
    pub j: usize,
    pub lambda: f64,
    pub scaled: f64,
}

#[derive(Clone, Debug)]
pub struct FluctuationRun {
    pub samples: Vec<FluctuationSample>,
    pub warnings: Vec<String>,
}

/// Rescaled `λ_j` for `j = 1..=j_max` over `trials` independent matrices.
pub fn collect_fluctuations(model: &Model, j_max: usize, trials: usize, master_seed: u64) -> Result<FluctuationRun> {
    let a = model.deformation.top_eigenvalue().ok_or(Error::ZeroDeformation)?;
    if !(a > 1.0) {
        return Err(Error::Subcritical(a));
    }
    if j_max == 0 {
        return Err(Error::Domain("j_max must be at least 1".into()));
    }
    let s_star = model.profile.sigma_star();
    let n = model.n() as f64;
    let mut warnings = Vec::new();
    if s_star * n.ln() > 0.5 {
        warnings.push(format!("sigma* log N = {:.3} exceeds 0.5", s_star * n.ln()));
    }
    let per_trial = try_map_trials(trials, |t| {
        let seed = trial_seed(master_seed, t as u64);
        let x = model.sample(seed)?;
        let (top, _) = extreme_eigenvalues(&x, j_max, 0)?;
        Ok(top
            .into_iter()
            .enumerate()
            .map(|(j, lambda)| FluctuationSample { trial: t, seed, j: j + 1, lambda, scaled: scaled_statistic(lambda, a, s_star) })
            .collect::<Vec<_>>())
    })?;
    Ok(FluctuationRun { samples: per_trial.into_iter().flatten().collect(), warnings })
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct LaplaceReport {
    pub t: Vec<f64>,
    pub k: Vec<usize>,
    pub c: Vec<f64>,
    pub lhs: f64,
    pub lhs_stderr: f64,
    pub rhs: f64,
    pub rhs_stderr: f64,
    pub rel_err: f64,
    /// `|lhs − rhs|` in units of the combined standard error.
    pub z_score: f64,
}

/// Above this size real matrices use Lanczos plus a stochastic trace of the
/// deflated bulk instead of a full eigendecomposition.
pub const DENSE_TRACE_LIMIT: usize = 400;

/// `ρ^{−k} Tr X^k` for each `k` in `ks`.
///
/// Small or complex matrices use the full spectrum. Large real matrices take
/// the top `deflate` eigenpairs exactly and estimate the rest with one
/// Rademacher probe projected off those eigenvectors, which is unbiased.
pub fn normalized_traces(x: &SampledMatrix, rho: f64, ks: &[usize], deflate: usize, probe_seed: u64) -> Result<Vec<f64>> {
    let exact = |values: &[f64]| ks.iter().map(|&k| values.iter().map(|l| (l / rho).powi(k as i32)).sum()).collect();
    let m = match x.as_real() {
        Some(m) if x.n > DENSE_TRACE_LIMIT => m,
        _ => return Ok(exact(&hermitian_spectrum(x)?)),
    };
    let tol = 1e-10 * m.norm().max(1.0);
    let pairs = extreme_eigenpairs(m, deflate, 0, tol, x.seed ^ 0x1A2C)?;
    let mut out: Vec<f64> = exact(&pairs.top);
    let kmax = ks.iter().copied().max().unwrap_or(0);
    let project = |v: &mut DVector<f64>| {
        for u in &pairs.top_vectors {
            let c = u.dot(v);
            v.axpy(-c, u, 1.0);
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(probe_seed);
    let mut z = DVector::from_fn(x.n, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
    project(&mut z);
    let mut y = z.clone();
    for step in 1..=kmax {
        y = m * &y / rho;
        project(&mut y);
        for (slot, &k) in out.iter_mut().zip(ks) {
            if k == step {
                *slot += z.dot(&y);
            }
        }
    }
    Ok(out)
}

/// Compares `ρ_a^{−Σk_j} E ∏_j Tr X^{k_j}`, `k_j = ⌊t_j/σ*⌋`, with
/// `E ∏_j Tr exp(c_j Z_β)`, `c_j = t_j(a² − 1)/((a² + 1)a)`.
pub fn laplace_check(
    model: &Model,
    params: &LimitLawParams,
    t_list: &[f64],
    trials: usize,
    z_draws: usize,
    master_seed: u64,
) -> Result<LaplaceReport> {
    let a = model.deformation.top_eigenvalue().ok_or(Error::ZeroDeformation)?;
    if !(a > 1.0) {
        return Err(Error::Subcritical(a));
    }
    if t_list.is_empty() || t_list.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::Domain("t_list must hold positive times".into()));
    }
    if trials < 2 || z_draws < 2 {
        return Err(Error::TooFewSamples { got: trials.min(z_draws), need: 2 });
    }
    let rho = outlier_limit(a)?;
    let s_star = model.profile.sigma_star();
    let k: Vec<usize> = t_list.iter().map(|t| (t / s_star).floor() as usize).collect();
    if let Some(pos) = k.iter().position(|&k| k == 0) {
        return Err(Error::Domain(format!("k = floor(t/sigma*) is 0 for t = {}", t_list[pos])));
    }
    let a2 = a * a;
    let c: Vec<f64> = t_list.iter().map(|t| t * (a2 - 1.0) / ((a2 + 1.0) * a)).collect();
    let q = params.q();

    let lhs_samples = try_map_trials(trials, |i| {
        let x = model.sample(stream_seed(master_seed, 0, i as u64))?;
        let traces = normalized_traces(&x, rho, &k, q, stream_seed(master_seed, 1, i as u64))?;
        Ok(traces.iter().product::<f64>())
    })?;
    let z = sample_z_many(params, &model.law, z_draws, stream_seed(master_seed, 2, 0))?;
    let rhs_samples: Vec<f64> = z
        .iter()
        .map(|zs| c.iter().map(|cj| zs.iter().map(|zi| (cj * zi).exp()).sum::<f64>()).product())
        .collect();
    let l = summarize(&lhs_samples);
    let r = summarize(&rhs_samples);
    let combined = (l.stderr.powi(2) + r.stderr.powi(2)).sqrt();
    Ok(LaplaceReport {
        t: t_list.to_vec(),
        k,
        c,
        lhs: l.mean,
        lhs_stderr: l.stderr,
        rhs: r.mean,
        rhs_stderr: r.stderr,
        rel_err: (l.mean - r.mean).abs() / r.mean.abs(),
        z_score: (l.mean - r.mean).abs() / combined.max(f64::MIN_POSITIVE),
    })
}

/// `Var Z = 2σ̃² + 2g + (τ − χ)` for a real scalar limiting law.
pub fn scalar_variance(params: &LimitLawParams) -> f64 {
    let diag = if params.beta == Beta::Real { 2.0 } else { 1.0 };
    diag * params.sigma_tilde[(0, 0)].powi(2) + diag * params.g[(0, 0)] + params.tau[0] - params.chi[0]
}
