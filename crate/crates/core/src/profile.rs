//! Variance profiles `Σ_N` and the quantities derived from them.
//!
//! A profile stores the entrywise standard deviations `σ_ij`. Every constructor
//! checks that `σ` is symmetric, non-negative and that its entrywise square
//! `P = (σ_ij²)` is row-stochastic.

use nalgebra::{DMatrix, DVector};
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::ensemble::{Beta, Deformation, EntryLaw};
use crate::error::{Error, Result};

const STOCHASTIC_TOL: f64 = 1e-12;
const POWER_DRIFT_TOL: f64 = 1e-9;

/// Symmetric density used to build band profiles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BandKernel {
    /// Standard Gaussian density on `ℝ^d`.
    Gaussian,
    /// Uniform density on the cube `‖x‖_∞ ≤ radius`.
    Flat { radius: f64 },
}

impl BandKernel {
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let d = x.len() as i32;
        match *self {
            BandKernel::Gaussian => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                (2.0 * std::f64::consts::PI).powf(-0.5 * d as f64) * (-0.5 * r2).exp()
            }
            BandKernel::Flat { radius } => {
                if x.iter().all(|v| v.abs() <= radius) {
                    (2.0 * radius).powi(-d)
                } else {
                    0.0
                }
            }
        }
    }

    /// `‖f‖_∞` in dimension `d`.
    pub fn sup_norm(&self, d: usize) -> f64 {
        self.evaluate(&vec![0.0; d])
    }

    /// Radius (sup-norm, in units of the bandwidth) beyond which the kernel is
    /// zero at double precision.
    pub fn support_radius(&self) -> f64 {
        match *self {
            BandKernel::Gaussian => 40.0,
            BandKernel::Flat { radius } => radius,
        }
    }
}

/// Whether a 0/1 adjacency matrix is given explicitly or generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adjacency {
    /// Circulant graph: offsets `±1..±d/2` for even `d`, plus the diagonal for odd `d`.
    Circulant,
    Explicit(Vec<Vec<u8>>),
}

/// How a profile was built. Serialized as the `kind`/`params` pair of the
/// profile document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum ProfileKind {
    Band {
        l: usize,
        d: usize,
        bandwidth: f64,
        kernel: BandKernel,
    },
    Dregular {
        degree: usize,
        adjacency: Adjacency,
    },
    Chiral {
        phi: Vec<Vec<f64>>,
    },
    Uniform,
    Custom,
}

/// JSON document form of a profile: `{kind, params, n, sigma_rows?}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileDoc {
    #[serde(flatten)]
    pub kind: ProfileKind,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_rows: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug)]
pub struct VarianceProfile {
    sigma: DMatrix<f64>,
    kind: ProfileKind,
}

impl VarianceProfile {
    /// Wraps an explicit `σ` matrix after checking every profile invariant.
    pub fn custom(sigma: DMatrix<f64>) -> Result<Self> {
        Self::validated(sigma, ProfileKind::Custom)
    }

    fn validated(sigma: DMatrix<f64>, kind: ProfileKind) -> Result<Self> {
        let n = sigma.nrows();
        if n == 0 || sigma.ncols() != n {
            return Err(Error::Domain(format!(
                "sigma must be a non-empty square matrix, got {}x{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                let s = sigma[(i, j)];
                if !(s >= 0.0) || !s.is_finite() {
                    return Err(Error::Domain(format!("sigma[{i},{j}] = {s} is not a non-negative real")));
                }
                if s != sigma[(j, i)] {
                    return Err(Error::Domain(format!("sigma is not symmetric at ({i},{j})")));
                }
                row += s * s;
            }
            if (row - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::Domain(format!("row {i} of P sums to {row}, not 1")));
            }
        }
        Ok(Self { sigma, kind })
    }

    pub fn n(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn kind(&self) -> &ProfileKind {
        &self.kind
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("uniform profile needs n >= 1".into()));
        }
        let s = 1.0 / (n as f64).sqrt();
        Self::validated(DMatrix::from_element(n, n, s), ProfileKind::Uniform)
    }

    /// Band profile on the torus `(ℤ/L)^d`:
    /// `σ_ij² = M⁻¹ Σ_n f((i − j + nL)/b)` with `M = Σ_i f(i/b)`.
    pub fn band(l: usize, d: usize, bandwidth: f64, kernel: BandKernel) -> Result<Self> {
        if l == 0 || d == 0 {
            return Err(Error::Domain("band profile needs L >= 1 and d >= 1".into()));
        }
        if !(bandwidth > 0.0) || bandwidth > l as f64 / 2.0 {
            return Err(Error::Domain(format!(
                "bandwidth {bandwidth} must lie in (0, L/2] = (0, {}]",
                l as f64 / 2.0
            )));
        }
        let n = l.checked_pow(d as u32).ok_or_else(|| Error::Domain("L^d overflows".into()))?;
        // Periods summed on each side: three plus enough to cover the kernel support.
        let n_max = 3 + (kernel.support_radius() * bandwidth / l as f64).ceil() as i64;
        let li = l as i64;
        let half = li / 2;
        // representative of a residue in (-L/2, L/2]
        let rep = |r: i64| -> i64 {
            let m = r.rem_euclid(li);
            if m > half {
                m - li
            } else {
                m
            }
        };

        // table[δ] = Σ_n f((δ + nL)/b) for every residue vector δ, indexed mixed-radix.
        let mut table = vec![0.0f64; n];
        let periods = (2 * n_max + 1) as usize;
        let mut point = vec![0.0f64; d];
        for (idx, slot) in table.iter_mut().enumerate() {
            let delta = digits(idx, l, d).into_iter().map(|c| rep(c as i64)).collect::<Vec<_>>();
            let mut acc = 0.0;
            for shift in 0..periods.pow(d as u32) {
                let ns = digits(shift, periods, d);
                for c in 0..d {
                    let nc = ns[c] as i64 - n_max;
                    point[c] = (delta[c] + nc * li) as f64 / bandwidth;
                }
                acc += kernel.evaluate(&point);
            }
            *slot = acc;
        }
        let m: f64 = table.iter().sum();
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::DegenerateKernel(format!("normalizer M = {m}")));
        }

        let coords: Vec<Vec<usize>> = (0..n).map(|i| digits(i, l, d)).collect();
        let mut sigma = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut idx = 0usize;
                for c in (0..d).rev() {
                    let diff = (coords[i][c] as i64 - coords[j][c] as i64).rem_euclid(li) as usize;
                    idx = idx * l + diff;
                }
                let s = (table[idx] / m).sqrt();
                sigma[(i, j)] = s;
                sigma[(j, i)] = s;
            }
        }
        let kind = ProfileKind::Band { l, d, bandwidth, kernel };
        Self::validated(sigma, kind)
    }

    /// `Σ_N = Ψ_N / √d` for a symmetric 0/1 matrix with constant row sum `d`.
    pub fn dregular(psi: &DMatrix<u8>) -> Result<Self> {
        let n = psi.nrows();
        if n == 0 || psi.ncols() != n {
            return Err(Error::Domain("adjacency must be a non-empty square matrix".into()));
        }
        let mut degree = None;
        for i in 0..n {
            let mut row = 0usize;
            for j in 0..n {
                let v = psi[(i, j)];
                if v > 1 {
                    return Err(Error::Domain(format!("psi[{i},{j}] = {v} is not 0/1")));
                }
                if v != psi[(j, i)] {
                    return Err(Error::Domain(format!("psi is not symmetric at ({i},{j})")));
                }
                row += v as usize;
            }
            match degree {
                None => degree = Some(row),
                Some(d) if d != row => {
                    return Err(Error::NotRegular(format!("row 0 has degree {d}, row {i} has {row}")));
                }
                _ => {}
            }
        }
        let d = degree.unwrap_or(0);
        if d == 0 {
            return Err(Error::NotRegular("degree must be at least 1".into()));
        }
        let scale = 1.0 / (d as f64).sqrt();
        let sigma = psi.map(|v| v as f64 * scale);
        let rows = (0..n).map(|i| psi.row(i).iter().copied().collect()).collect();
        Self::validated(
            sigma,
            ProfileKind::Dregular { degree: d, adjacency: Adjacency::Explicit(rows) },
        )
    }

    /// Circulant `d`-regular profile on `n` sites.
    pub fn dregular_circulant(n: usize, degree: usize) -> Result<Self> {
        let psi = circulant_adjacency(n, degree)?;
        let mut p = Self::dregular(&psi)?;
        p.kind = ProfileKind::Dregular { degree, adjacency: Adjacency::Circulant };
        Ok(p)
    }

    /// Chiral profile `[[0, Φ], [Φᵀ, 0]]`.
    pub fn chiral(phi: &DMatrix<f64>) -> Result<Self> {
        let h = phi.nrows();
        if h == 0 || phi.ncols() != h {
            return Err(Error::Domain("phi must be a non-empty square matrix".into()));
        }
        for i in 0..h {
            let row: f64 = phi.row(i).iter().map(|v| v * v).sum();
            let col: f64 = phi.column(i).iter().map(|v| v * v).sum();
            if (row - 1.0).abs() > 1e-10 || (col - 1.0).abs() > 1e-10 {
                return Err(Error::Domain(format!(
                    "row/column {i} of phi has squared norms {row}, {col}; both must be 1"
                )));
            }
        }
        if phi.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Domain("phi must be non-negative".into()));
        }
        let n = 2 * h;
        let mut sigma = DMatrix::zeros(n, n);
        sigma.view_mut((0, h), (h, h)).copy_from(phi);
        sigma.view_mut((h, 0), (h, h)).copy_from(&phi.transpose());
        let rows = (0..h).map(|i| phi.row(i).iter().copied().collect()).collect();
        Self::validated(sigma, ProfileKind::Chiral { phi: rows })
    }

    pub fn from_doc(doc: &ProfileDoc) -> Result<Self> {
        let explicit = doc
            .sigma_rows
            .as_ref()
            .map(|rows| rows_to_matrix(rows, doc.n))
            .transpose()?;
        let built = match &doc.kind {
            ProfileKind::Band { l, d, bandwidth, kernel } => Self::band(*l, *d, *bandwidth, *kernel)?,
            ProfileKind::Dregular { degree, adjacency } => match adjacency {
                Adjacency::Circulant => Self::dregular_circulant(doc.n, *degree)?,
                Adjacency::Explicit(rows) => {
                    let psi = DMatrix::from_fn(rows.len(), rows.len(), |i, j| {
                        rows[i].get(j).copied().unwrap_or(0)
                    });
                    let p = Self::dregular(&psi)?;
                    if let ProfileKind::Dregular { degree: d, .. } = p.kind {
                        if d != *degree {
                            return Err(Error::NotRegular(format!(
                                "declared degree {degree}, adjacency has {d}"
                            )));
                        }
                    }
                    p
                }
            },
            ProfileKind::Chiral { phi } => Self::chiral(&rows_to_matrix(phi, phi.len())?)?,
            ProfileKind::Uniform => Self::uniform(doc.n)?,
            ProfileKind::Custom => {
                let sigma = explicit
                    .clone()
                    .ok_or_else(|| Error::Config("custom profiles need sigma_rows".into()))?;
                Self::custom(sigma)?
            }
        };
        if built.n() != doc.n {
            return Err(Error::SizeMismatch { expected: doc.n, found: built.n() });
        }
        if let Some(sigma) = explicit {
            if (&sigma - &built.sigma).amax() > 1e-12 {
                return Err(Error::Config("sigma_rows disagree with the named profile params".into()));
            }
        }
        Ok(built)
    }

    /// Document form. `sigma_rows` is only written for custom profiles.
    pub fn to_doc(&self) -> ProfileDoc {
        let sigma_rows = matches!(self.kind, ProfileKind::Custom).then(|| {
            (0..self.n()).map(|i| self.sigma.row(i).iter().copied().collect()).collect()
        });
        ProfileDoc { kind: self.kind.clone(), n: self.n(), sigma_rows }
    }

    /// `σ*_N = max σ_ij`.
    pub fn sigma_star(&self) -> f64 {
        self.sigma.max()
    }

    /// The stochastic matrix `P_N = (σ_ij²)`.
    pub fn transition(&self) -> DMatrix<f64> {
        self.sigma.map(|s| s * s)
    }

    /// `P^k` by repeated multiplication; every intermediate power is checked
    /// to stay row-stochastic.
    pub fn markov_power(&self, k: usize) -> Result<DMatrix<f64>> {
        if k == 0 {
            return Ok(DMatrix::identity(self.n(), self.n()));
        }
        let p = self.transition();
        let mut acc = p.clone();
        for step in 1..k {
            acc = &acc * &p;
            check_stochastic(&acc, step + 1)?;
        }
        Ok(acc)
    }

    /// `(P^k)_{ij}` with 1-based indices.
    pub fn markov_power_entry(&self, k: usize, i: usize, j: usize) -> Result<f64> {
        let n = self.n();
        for idx in [i, j] {
            if idx == 0 || idx > n {
                return Err(Error::IndexOutOfRange { index: idx, n });
            }
        }
        if k == 0 {
            return Err(Error::Domain("markov_power_entry needs k >= 1".into()));
        }
        Ok(self.markov_power(k)?[(i - 1, j - 1)])
    }

    /// Row `i` (0-based) of `P^1, …, P^kmax` by vector–matrix products.
    fn power_rows(&self, i: usize, kmax: usize) -> Vec<DVector<f64>> {
        let p = self.transition();
        let mut out = Vec::with_capacity(kmax);
        let mut row = DVector::from_fn(self.n(), |j, _| p[(i, j)]);
        out.push(row.clone());
        for _ in 1..kmax {
            row = p.tr_mul(&row);
            out.push(row.clone());
        }
        out
    }
}

fn check_stochastic(m: &DMatrix<f64>, k: usize) -> Result<()> {
    for (i, row) in m.row_iter().enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > POWER_DRIFT_TOL * k as f64 {
            return Err(Error::Domain(format!("row {i} of P^{k} sums to {s}")));
        }
    }
    Ok(())
}

fn digits(mut idx: usize, base: usize, d: usize) -> Vec<usize> {
    let mut out = vec![0; d];
    for slot in out.iter_mut() {
        *slot = idx % base;
        idx /= base;
    }
    out
}

fn rows_to_matrix(rows: &[Vec<f64>], n: usize) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::SizeMismatch { expected: n, found: rows.len() });
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Symmetric circulant 0/1 matrix with `degree` ones per row.
pub fn circulant_adjacency(n: usize, degree: usize) -> Result<DMatrix<u8>> {
    if degree == 0 || degree > n {
        return Err(Error::NotRegular(format!("degree {degree} impossible on {n} sites")));
    }
    let mut offsets: Vec<usize> = Vec::new();
    if degree % 2 == 1 {
        offsets.push(0);
    }
    for o in 1..=degree / 2 {
        offsets.push(o);
        offsets.push(n - o);
    }
    offsets.sort_unstable();
    offsets.dedup();
    if offsets.len() != degree {
        return Err(Error::NotRegular(format!(
            "no circulant {degree}-regular pattern on {n} sites"
        )));
    }
    let mut psi = DMatrix::zeros(n, n);
    for i in 0..n {
        for &o in &offsets {
            psi[(i, (i + o) % n)] = 1;
        }
    }
    Ok(psi)
}

/// Everything needed to sample the limiting matrix `Z_β` of the outlier
/// fluctuation law, evaluated at finite `N`.
#[derive(Clone, Debug)]
pub struct LimitLawParams {
    pub r: usize,
    pub a: f64,
    pub beta: Beta,
    pub g: DMatrix<f64>,
    pub sigma_tilde: DMatrix<f64>,
    pub chi: Vec<f64>,
    pub tau: Vec<f64>,
    /// First `q` rows of `U` where `Ã = U* diag(a) U`.
    pub q_rows: DMatrix<nalgebra::Complex<f64>>,
    /// Number of series terms used for `g` (largest power of `P`).
    pub terms: usize,
}

impl LimitLawParams {
    pub fn q(&self) -> usize {
        self.q_rows.nrows()
    }
}

/// Smallest `K ≥ 2` with `a^{-2K} a²/(a² − 1) < tol`.
///
/// Valid as a bound on the series tail of `g_ij` because
/// `(P^k)_{xy} ≤ max_l P_{ly} ≤ σ*²` for every `k ≥ 1`.
pub fn series_terms(a: f64, tol: f64) -> usize {
    let a2 = a * a;
    let mut k = 2usize;
    while a2.powi(-(k as i32)) * a2 / (a2 - 1.0) >= tol {
        k += 1;
    }
    k
}

/// `g_ij` truncated after the `P^kmax` term.
pub fn g_matrix(profile: &VarianceProfile, positions: &[usize], a: f64, kmax: usize) -> Result<DMatrix<f64>> {
    let n = profile.n();
    let r = positions.len();
    let idx = zero_based(positions, n)?;
    let s2 = profile.sigma_star().powi(2);
    let a2 = a * a;
    let rows: Vec<Vec<DVector<f64>>> = idx.iter().map(|&m| profile.power_rows(m, kmax)).collect();
    let mut g = DMatrix::zeros(r, r);
    for i in 0..r {
        for j in 0..r {
            let mut acc = 0.0;
            for k in 2..=kmax {
                acc += rows[i][k - 1][idx[j]] * a2.powi(-(k as i32) + 1);
            }
            if i == j {
                acc -= rows[i][1][idx[j]] / a2;
            }
            g[(i, j)] = acc / s2;
        }
    }
    // P^k is symmetric, so symmetrize away the rounding difference between rows.
    let gt = g.transpose();
    Ok((g + gt) * 0.5)
}

fn zero_based(positions: &[usize], n: usize) -> Result<Vec<usize>> {
    let mut seen = std::collections::BTreeSet::new();
    positions
        .iter()
        .map(|&m| {
            if m == 0 || m > n {
                Err(Error::IndexOutOfRange { index: m, n })
            } else if !seen.insert(m) {
                Err(Error::Domain(format!("position {m} repeated")))
            } else {
                Ok(m - 1)
            }
        })
        .collect()
}

/// Finite-`N` surrogates of `g_ij, σ̃_ij, χ_i, τ_i` and `Q_β` for the
/// outlier at `a = a_1 = … = a_q`.
pub fn compute_limit_params(
    profile: &VarianceProfile,
    deformation: &Deformation,
    law: &EntryLaw,
    q: usize,
    tol: f64,
) -> Result<LimitLawParams> {
    let a = deformation.top_eigenvalue().ok_or_else(|| {
        Error::InvalidParams("the deformation has rank 0; no outlier to describe".into())
    })?;
    if !(a > 1.0) {
        return Err(Error::Subcritical(a));
    }
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    let r = deformation.rank();
    if q == 0 || q > r {
        return Err(Error::Domain(format!("q = {q} must lie in 1..={r}")));
    }
    let n = profile.n();
    let positions = deformation.positions();
    let idx = zero_based(positions, n)?;
    let s_star = profile.sigma_star();
    let s2 = s_star * s_star;
    let a2 = a * a;

    let terms = series_terms(a, tol);
    let g = g_matrix(profile, positions, a, terms)?;
    let sigma = profile.sigma();
    let sigma_tilde = DMatrix::from_fn(r, r, |i, j| sigma[(idx[i], idx[j])] / s_star);

    let m4_off = law.fourth_moment_offdiag();
    let m4_diag = law.fourth_moment_diag();
    let mut chi = Vec::with_capacity(r);
    let mut tau = Vec::with_capacity(r);
    for &m in &idx {
        let (mut c, mut t) = (0.0, 0.0);
        for y in 0..n {
            let s4 = sigma[(m, y)].powi(4);
            c += s4;
            t += s4 * if y == m { m4_diag } else { m4_off };
        }
        chi.push(c / (s2 * a2));
        tau.push(t / (s2 * a2));
    }

    let u = deformation.u();
    let q_rows = u.rows(0, q).into_owned();
    let beta = law.beta();
    if beta == Beta::Real && q_rows.iter().any(|z| !z.im.is_zero()) {
        return Err(Error::BetaMismatch("real ensemble with a complex eigenbasis".into()));
    }
    Ok(LimitLawParams { r, a, beta, g, sigma_tilde, chi, tau, q_rows, terms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::LawKind;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn flat(radius: f64) -> BandKernel {
        BandKernel::Flat { radius }
    }

    fn row_sums_ok(p: &VarianceProfile) {
        for row in p.transition().row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert_eq!(p.sigma(), &p.sigma().transpose());
    }

    #[test]
    fn band_flat_wraps_on_small_torus() {
        // kernel support {-1, 0, 1} hits residue 2 from both sides on Z/4
        let p = VarianceProfile::band(4, 1, 2.0, flat(1.0)).unwrap();
        row_sums_ok(&p);
        let row: Vec<f64> = p.transition().row(0).iter().copied().collect();
        for (got, want) in row.iter().zip([0.2, 0.2, 0.4, 0.2]) {
            assert_relative_eq!(*got, want, epsilon = 1e-14);
        }
    }

    #[test]
    fn band_flat_sigma_star() {
        let p = VarianceProfile::band(8, 1, 2.0, flat(0.5)).unwrap();
        row_sums_ok(&p);
        assert_relative_eq!(p.sigma_star(), 1.0 / 3f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn band_gaussian_sigma_star_scaling() {
        let p = VarianceProfile::band(8, 1, 2.0, BandKernel::Gaussian).unwrap();
        row_sums_ok(&p);
        let predicted = BandKernel::Gaussian.sup_norm(1) / 2.0;
        let s2 = p.sigma_star().powi(2);
        assert!(s2 > 0.5 * predicted && s2 < 1.5 * predicted, "{s2} vs {predicted}");
    }

    #[test]
    fn band_full_support_is_uniform() {
        let p = VarianceProfile::band(3, 2, 1.0, flat(1.0)).unwrap();
        assert_eq!(p.n(), 9);
        for v in p.transition().iter() {
            assert_relative_eq!(*v, 1.0 / 9.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn band_errors() {
        assert!(matches!(VarianceProfile::band(8, 1, 5.0, BandKernel::Gaussian), Err(Error::Domain(_))));
        assert!(matches!(VarianceProfile::band(8, 1, 2.0, flat(0.0)), Err(Error::DegenerateKernel(_))));
    }

    #[test]
    fn kernel_symmetry_and_sign() {
        for k in [BandKernel::Gaussian, flat(0.7)] {
            for x in [[0.3, -1.2], [2.0, 0.5], [-0.69, 0.0]] {
                let neg = [-x[0], -x[1]];
                assert_eq!(k.evaluate(&x), k.evaluate(&neg));
                assert!(k.evaluate(&x) >= 0.0);
            }
        }
    }

    #[test]
    fn dregular_examples() {
        let p = VarianceProfile::dregular(&DMatrix::from_element(4, 4, 1u8)).unwrap();
        assert!(p.sigma().iter().all(|&s| s == 0.5));
        let cyc = DMatrix::from_fn(6, 6, |i, j| u8::from((i + 6 - j) % 6 == 1 || (j + 6 - i) % 6 == 1));
        let p = VarianceProfile::dregular(&cyc).unwrap();
        row_sums_ok(&p);
        assert_relative_eq!(p.sigma()[(0, 1)], 0.5f64.sqrt());
        assert_eq!(p.sigma()[(0, 2)], 0.0);
        assert_relative_eq!(p.markov_power_entry(2, 3, 3).unwrap(), 0.5, epsilon = 1e-15);
        let p9 = VarianceProfile::dregular_circulant(20, 9).unwrap();
        assert_relative_eq!(p9.sigma_star(), 1.0 / 3.0, epsilon = 1e-15);
        let mut bad = DMatrix::from_element(4, 4, 1u8);
        bad[(2, 3)] = 0;
        bad[(3, 2)] = 0;
        assert!(matches!(VarianceProfile::dregular(&bad), Err(Error::NotRegular(_))));
    }

    #[test]
    fn chiral_examples() {
        let p = VarianceProfile::chiral(&DMatrix::identity(2, 2)).unwrap();
        let t = p.transition();
        for i in 0..4 {
            assert_relative_eq!(t.column(i).sum(), 1.0);
        }
        let p = VarianceProfile::chiral(&DMatrix::from_element(2, 2, 0.5f64.sqrt())).unwrap();
        row_sums_ok(&p);
        assert_eq!(p.sigma()[(0, 0)], 0.0);
        let mut bad = DMatrix::identity(2, 2);
        bad[(0, 0)] = 0.9f64.sqrt();
        assert!(matches!(VarianceProfile::chiral(&bad), Err(Error::Domain(_))));
    }

    #[test]
    fn uniform_examples() {
        let p = VarianceProfile::uniform(16).unwrap();
        assert_eq!(p.sigma_star(), 0.25);
        for k in 1..5 {
            assert_relative_eq!(p.markov_power_entry(k, 3, 11).unwrap(), 1.0 / 16.0, epsilon = 1e-15);
        }
        assert!(matches!(p.markov_power_entry(1, 0, 1), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(p.markov_power_entry(1, 1, 17), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn custom_rejects_bad_matrices() {
        let asym = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.5, 0.5f64.sqrt()]);
        assert!(VarianceProfile::custom(asym).is_err());
        let neg = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0]);
        assert!(VarianceProfile::custom(neg).is_err());
        let ok = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(VarianceProfile::custom(ok).is_ok());
    }

    #[test]
    fn json_round_trip() {
        let docs = [
            r#"{"kind":"uniform","n":5}"#,
            r#"{"kind":"band","params":{"l":16,"d":1,"bandwidth":3.0,"kernel":{"type":"gaussian"}},"n":16}"#,
            r#"{"kind":"dregular","params":{"degree":3,"adjacency":"circulant"},"n":10}"#,
            r#"{"kind":"custom","n":2,"sigma_rows":[[0.0,1.0],[1.0,0.0]]}"#,
        ];
        for d in docs {
            let doc: ProfileDoc = serde_json::from_str(d).unwrap();
            let p = VarianceProfile::from_doc(&doc).unwrap();
            let again = VarianceProfile::from_doc(&serde_json::from_str(&serde_json::to_string(&p.to_doc()).unwrap()).unwrap()).unwrap();
            assert_eq!(p.sigma(), again.sigma());
        }
        let bad: ProfileDoc = serde_json::from_str(r#"{"kind":"custom","n":2}"#).unwrap();
        assert!(matches!(VarianceProfile::from_doc(&bad), Err(Error::Config(_))));
        let mismatch: ProfileDoc = serde_json::from_str(r#"{"kind":"uniform","n":3,"sigma_rows":[[1,0,0],[0,1,0],[0,0,1]]}"#).unwrap();
        assert!(VarianceProfile::from_doc(&mismatch).is_err());
    }

    #[test]
    fn uniform_limit_params_closed_forms() {
        let n = 50;
        let p = VarianceProfile::uniform(n).unwrap();
        let d = Deformation::diagonal(vec![7], &[2.0], Beta::Real).unwrap();
        let law = EntryLaw::new(LawKind::Gaussian, Beta::Real);
        let lp = compute_limit_params(&p, &d, &law, 1, 1e-14).unwrap();
        let a2 = 4.0;
        assert_relative_eq!(lp.g[(0, 0)], 1.0 / (a2 * (a2 - 1.0)), epsilon = 1e-10);
        assert_relative_eq!(lp.chi[0], 0.25, epsilon = 1e-10);
        // off-diagonal E W⁴ = 3 on N − 1 sites, diagonal E W⁴ = 12 on one site
        let nf = n as f64;
        assert_relative_eq!(lp.tau[0], (3.0 * (nf - 1.0) + 12.0) / (nf * a2), epsilon = 1e-10);
        assert_relative_eq!(lp.sigma_tilde[(0, 0)], 1.0, epsilon = 1e-15);
        assert_eq!(lp.q_rows.shape(), (1, 1));
        assert_relative_eq!(lp.q_rows[(0, 0)].norm(), 1.0);
    }

    #[test]
    fn limit_param_errors() {
        let p = VarianceProfile::uniform(10).unwrap();
        let law = EntryLaw::new(LawKind::Gaussian, Beta::Real);
        let sub = Deformation::diagonal(vec![1], &[0.9], Beta::Real).unwrap();
        assert!(matches!(compute_limit_params(&p, &sub, &law, 1, 1e-10), Err(Error::Subcritical(_))));
        let far = Deformation::diagonal(vec![11], &[2.0], Beta::Real).unwrap();
        assert!(matches!(compute_limit_params(&p, &far, &law, 1, 1e-10), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn band_limit_params_symmetric_and_truncation_sound() {
        let p = VarianceProfile::band(40, 1, 3.0, BandKernel::Gaussian).unwrap();
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, 0.1, 2.0, 0.2, 0.0, 0.2, 2.0]);
        let d = Deformation::real(vec![1, 2, 10], a).unwrap();
        let law = EntryLaw::new(LawKind::UniformSymmetric, Beta::Real);
        let tol = 1e-9;
        let lp = compute_limit_params(&p, &d, &law, 2, tol).unwrap();
        assert_eq!(lp.g, lp.g.transpose());
        assert_eq!(lp.sigma_tilde, lp.sigma_tilde.transpose());
        let qq = &lp.q_rows * lp.q_rows.adjoint();
        assert!((qq - DMatrix::identity(2, 2)).norm() < 1e-10);
        let more = g_matrix(&p, d.positions(), lp.a, lp.terms + 5).unwrap();
        assert!((more - &lp.g).amax() < tol);
    }

    proptest! {
        #[test]
        fn powers_stay_stochastic(l in 4usize..24, b in 1.0f64..2.0, k in 1usize..6) {
            let p = VarianceProfile::band(l, 1, b, BandKernel::Gaussian).unwrap();
            let pk = p.markov_power(k).unwrap();
            for row in pk.row_iter() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-9 * k as f64);
            }
            prop_assert!((&pk - pk.transpose()).amax() < 1e-14);
        }

        #[test]
        fn circulant_rows(n in 3usize..30, d in 1usize..3) {
            let psi = circulant_adjacency(n, d).unwrap();
            for i in 0..n {
                prop_assert_eq!(psi.row(i).iter().map(|&v| v as usize).sum::<usize>(), d);
            }
        }

        #[test]
        fn series_terms_meet_tail_bound(a in 1.05f64..10.0, e in 3i32..14) {
            let tol = 10f64.powi(-e);
            let k = series_terms(a, tol);
            let a2 = a * a;
            prop_assert!(a2.powi(-(k as i32)) * a2 / (a2 - 1.0) < tol);
        }
    }
}
