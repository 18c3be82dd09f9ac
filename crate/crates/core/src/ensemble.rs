//! Wigner sampling, Hadamard variance profiles and finite-rank deformations.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::VarianceProfile;

pub type C64 = Complex<f64>;

/// Symmetry class: `β = 1` real symmetric, `β = 2` complex Hermitian.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Beta {
    Real,
    Complex,
}

impl TryFrom<u8> for Beta {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Beta::Real),
            2 => Ok(Beta::Complex),
            other => Err(format!("beta must be 1 or 2, got {other}")),
        }
    }
}

impl From<Beta> for u8 {
    fn from(b: Beta) -> u8 {
        match b {
            Beta::Real => 1,
            Beta::Complex => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawKind {
    Gaussian,
    Rademacher,
    /// Uniform on `[−√3, √3]` before the diagonal/complex rescaling.
    UniformSymmetric,
}

/// A symmetric entry distribution in a given symmetry class, normalized so
/// that `E|W_ij|² = 1` off the diagonal and `E W_ii² = 2/β` on it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryLaw {
    pub kind: LawKind,
    pub beta: Beta,
}

fn double_factorial_odd(k: u32) -> f64 {
    // (2k − 1)!!
    (1..=k).map(|i| (2 * i - 1) as f64).product()
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl EntryLaw {
    pub fn new(kind: LawKind, beta: Beta) -> Self {
        Self { kind, beta }
    }

    pub fn beta(&self) -> Beta {
        self.beta
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            LawKind::Gaussian => "gaussian",
            LawKind::Rademacher => "rademacher",
            LawKind::UniformSymmetric => "uniform_symmetric",
        }
    }

    /// Variance of a real entry: the real diagonal, the complex diagonal,
    /// the real off-diagonal, or one of the two parts of a complex off-diagonal.
    fn real_variance(&self, diagonal: bool) -> f64 {
        match (self.beta, diagonal) {
            (Beta::Real, true) => 2.0,
            (Beta::Real, false) | (Beta::Complex, true) => 1.0,
            (Beta::Complex, false) => 0.5,
        }
    }

    /// `E X^{2k}` for a real entry of this law with variance `v`.
    fn real_even_moment(&self, v: f64, k: u32) -> f64 {
        match self.kind {
            LawKind::Gaussian => v.powi(k as i32) * double_factorial_odd(k),
            LawKind::Rademacher => v.powi(k as i32),
            // U[−c, c] with c² = 3v
            LawKind::UniformSymmetric => (3.0 * v).powi(k as i32) / (2 * k + 1) as f64,
        }
    }

    /// `E|W|^{2k}` for a diagonal (`diagonal = true`) or off-diagonal entry.
    pub fn abs_moment(&self, k: u32, diagonal: bool) -> f64 {
        let v = self.real_variance(diagonal);
        if self.beta == Beta::Complex && !diagonal {
            // |W|² = ξ² + η² with ξ, η independent copies of variance 1/2.
            (0..=k)
                .map(|j| binomial(k, j) * self.real_even_moment(v, j) * self.real_even_moment(v, k - j))
                .sum()
        } else {
            self.real_even_moment(v, k)
        }
    }

    pub fn second_moment_offdiag(&self) -> f64 {
        self.abs_moment(1, false)
    }

    pub fn second_moment_diag(&self) -> f64 {
        self.abs_moment(1, true)
    }

    pub fn fourth_moment_offdiag(&self) -> f64 {
        self.abs_moment(2, false)
    }

    pub fn fourth_moment_diag(&self) -> f64 {
        self.abs_moment(2, true)
    }

    /// Smallest `γ ≥ 1` with `E|W|^{2k} ≤ γ^{k−1}(2k − 1)!!` for `k = 2..=12`,
    /// over diagonal and off-diagonal entries.
    pub fn gamma(&self) -> f64 {
        let mut gamma = 1.0f64;
        for diagonal in [false, true] {
            for k in 2..=12u32 {
                let ratio = self.abs_moment(k, diagonal) / double_factorial_odd(k);
                gamma = gamma.max(ratio.powf(1.0 / (k - 1) as f64));
            }
        }
        gamma
    }

    /// One real draw with the given variance.
    #[inline]
    fn draw_scaled<R: Rng + ?Sized>(&self, rng: &mut R, v: f64) -> f64 {
        match self.kind {
            LawKind::Gaussian => {
                let z: f64 = rng.sample(StandardNormal);
                z * v.sqrt()
            }
            LawKind::Rademacher => {
                if rng.random::<bool>() {
                    v.sqrt()
                } else {
                    -v.sqrt()
                }
            }
            LawKind::UniformSymmetric => {
                let c = (3.0 * v).sqrt();
                rng.random_range(-c..=c)
            }
        }
    }

    /// A real entry (`β = 1` only).
    #[inline]
    pub fn draw_real<R: Rng + ?Sized>(&self, rng: &mut R, diagonal: bool) -> f64 {
        self.draw_scaled(rng, self.real_variance(diagonal))
    }

    /// An entry of either class; diagonal entries are always real.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, diagonal: bool) -> C64 {
        match (self.beta, diagonal) {
            (Beta::Complex, false) => {
                let re = self.draw_scaled(rng, 0.5);
                let im = self.draw_scaled(rng, 0.5);
                C64::new(re, im)
            }
            _ => C64::new(self.draw_real(rng, diagonal), 0.0),
        }
    }
}

/// Rank-`r` deformation `A_N`, supported on rows/columns `m_1..m_r` (1-based).
#[derive(Clone, Debug)]
pub struct Deformation {
    positions: Vec<usize>,
    a_tilde: DMatrix<C64>,
    beta: Beta,
    eigenvalues: Vec<f64>,
    /// `Ã = U* diag(a) U`.
    u: DMatrix<C64>,
}

const HERMITIAN_TOL: f64 = 1e-12;

impl Deformation {
    pub fn none(beta: Beta) -> Self {
        Self {
            positions: Vec::new(),
            a_tilde: DMatrix::zeros(0, 0),
            beta,
            eigenvalues: Vec::new(),
            u: DMatrix::zeros(0, 0),
        }
    }

    pub fn real(positions: Vec<usize>, a_tilde: DMatrix<f64>) -> Result<Self> {
        Self::new(positions, a_tilde.map(|v| C64::new(v, 0.0)), Beta::Real)
    }

    /// `Ã = diag(a_1..a_r)` at the given positions.
    pub fn diagonal(positions: Vec<usize>, a: &[f64], beta: Beta) -> Result<Self> {
        let r = a.len();
        let m = DMatrix::from_fn(r, r, |i, j| if i == j { C64::new(a[i], 0.0) } else { C64::new(0.0, 0.0) });
        Self::new(positions, m, beta)
    }

    pub fn new(positions: Vec<usize>, a_tilde: DMatrix<C64>, beta: Beta) -> Result<Self> {
        let r = positions.len();
        if a_tilde.nrows() != r || a_tilde.ncols() != r {
            return Err(Error::SizeMismatch { expected: r, found: a_tilde.nrows() });
        }
        let mut seen = std::collections::BTreeSet::new();
        for &m in &positions {
            if m == 0 {
                return Err(Error::IndexOutOfRange { index: m, n: usize::MAX });
            }
            if !seen.insert(m) {
                return Err(Error::Domain(format!("position {m} repeated")));
            }
        }
        let scale = a_tilde.iter().map(|z| z.norm()).fold(1.0, f64::max);
        for i in 0..r {
            for j in 0..r {
                if (a_tilde[(i, j)] - a_tilde[(j, i)].conj()).norm() > HERMITIAN_TOL * scale {
                    return Err(Error::Domain(format!("a_tilde is not Hermitian at ({i},{j})")));
                }
            }
        }
        if beta == Beta::Real && a_tilde.iter().any(|z| z.im != 0.0) {
            return Err(Error::BetaMismatch("complex a_tilde for a real ensemble".into()));
        }
        if r == 0 {
            return Ok(Self::none(beta));
        }

        let (values, vectors) = match beta {
            Beta::Real => {
                let eig = SymmetricEigen::new(a_tilde.map(|z| z.re));
                (eig.eigenvalues, eig.eigenvectors.map(|v| C64::new(v, 0.0)))
            }
            Beta::Complex => {
                let eig = SymmetricEigen::new(a_tilde.clone());
                (eig.eigenvalues, eig.eigenvectors)
            }
        };
        let mut order: Vec<usize> = (0..r).collect();
        order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
        let eigenvalues: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        // Row i of U is the conjugate of the i-th eigenvector.
        let u = DMatrix::from_fn(r, r, |i, j| vectors[(j, order[i])].conj());
        Ok(Self { positions, a_tilde, beta, eigenvalues, u })
    }

    pub fn rank(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn a_tilde(&self) -> &DMatrix<C64> {
        &self.a_tilde
    }

    pub fn beta(&self) -> Beta {
        self.beta
    }

    /// `a_1 ≥ … ≥ a_r`.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn top_eigenvalue(&self) -> Option<f64> {
        self.eigenvalues.first().copied()
    }

    pub fn u(&self) -> &DMatrix<C64> {
        &self.u
    }

    /// Unit eigenvector of `A_N` for `a_i` (0-based `i`), embedded in `ℂ^N`.
    pub fn embedded_eigenvector(&self, i: usize, n: usize) -> Result<DVector<C64>> {
        if i >= self.rank() {
            return Err(Error::IndexOutOfRange { index: i + 1, n: self.rank() });
        }
        self.check_fits(n)?;
        let mut q = DVector::zeros(n);
        for (l, &m) in self.positions.iter().enumerate() {
            q[m - 1] = self.u[(i, l)].conj();
        }
        Ok(q)
    }

    fn check_fits(&self, n: usize) -> Result<()> {
        for &m in &self.positions {
            if m > n {
                return Err(Error::IndexOutOfRange { index: m, n });
            }
        }
        Ok(())
    }

    /// The dense `N×N` matrix `A_N`.
    pub fn embed(&self, n: usize) -> Result<DMatrix<C64>> {
        self.check_fits(n)?;
        let mut a = DMatrix::zeros(n, n);
        for (i, &mi) in self.positions.iter().enumerate() {
            for (j, &mj) in self.positions.iter().enumerate() {
                a[(mi - 1, mj - 1)] = self.a_tilde[(i, j)];
            }
        }
        Ok(a)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Entries {
    Real(DMatrix<f64>),
    Complex(DMatrix<C64>),
}

/// A Hermitian matrix together with the seed that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledMatrix {
    pub n: usize,
    pub beta: Beta,
    pub entries: Entries,
    pub seed: u64,
}

impl SampledMatrix {
    pub fn zeros(n: usize, beta: Beta) -> Self {
        let entries = match beta {
            Beta::Real => Entries::Real(DMatrix::zeros(n, n)),
            Beta::Complex => Entries::Complex(DMatrix::zeros(n, n)),
        };
        Self { n, beta, entries, seed: 0 }
    }

    pub fn from_real(m: DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n || m != m.transpose() {
            return Err(Error::Domain("matrix is not symmetric".into()));
        }
        Ok(Self { n, beta: Beta::Real, entries: Entries::Real(m), seed: 0 })
    }

    pub fn as_real(&self) -> Option<&DMatrix<f64>> {
        match &self.entries {
            Entries::Real(m) => Some(m),
            Entries::Complex(_) => None,
        }
    }

    pub fn to_complex(&self) -> DMatrix<C64> {
        match &self.entries {
            Entries::Real(m) => m.map(|v| C64::new(v, 0.0)),
            Entries::Complex(m) => m.clone(),
        }
    }

    /// Frobenius norm, an upper bound on the operator norm.
    pub fn frobenius(&self) -> f64 {
        match &self.entries {
            Entries::Real(m) => m.norm(),
            Entries::Complex(m) => m.norm(),
        }
    }

    pub fn trace(&self) -> f64 {
        match &self.entries {
            Entries::Real(m) => m.trace(),
            Entries::Complex(m) => m.trace().re,
        }
    }

    /// `y = X x` for a complex vector.
    pub fn apply(&self, x: &DVector<C64>) -> DVector<C64> {
        match &self.entries {
            Entries::Real(m) => {
                let re = m * x.map(|z| z.re);
                let im = m * x.map(|z| z.im);
                DVector::from_fn(self.n, |i, _| C64::new(re[i], im[i]))
            }
            Entries::Complex(m) => m * x,
        }
    }
}

/// Wigner matrix `W_N` with independent entries on and above the diagonal.
pub fn sample_wigner(n: usize, law: &EntryLaw, seed: u64) -> SampledMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = match law.beta {
        Beta::Real => {
            let mut m = DMatrix::zeros(n, n);
            for i in 0..n {
                m[(i, i)] = law.draw_real(&mut rng, true);
                for j in i + 1..n {
                    let w = law.draw_real(&mut rng, false);
                    m[(i, j)] = w;
                    m[(j, i)] = w;
                }
            }
            Entries::Real(m)
        }
        Beta::Complex => {
            let mut m = DMatrix::zeros(n, n);
            for i in 0..n {
                m[(i, i)] = law.draw(&mut rng, true);
                for j in i + 1..n {
                    let w = law.draw(&mut rng, false);
                    m[(i, j)] = w;
                    m[(j, i)] = w.conj();
                }
            }
            Entries::Complex(m)
        }
    };
    SampledMatrix { n, beta: law.beta, entries, seed }
}

/// `X_N = Σ_N ∘ W_N + A_N`.
pub fn assemble_deformed(
    profile: &VarianceProfile,
    wigner: &SampledMatrix,
    deformation: &Deformation,
) -> Result<SampledMatrix> {
    let n = profile.n();
    if wigner.n != n {
        return Err(Error::SizeMismatch { expected: n, found: wigner.n });
    }
    if wigner.beta != deformation.beta() {
        return Err(Error::BetaMismatch(format!(
            "wigner has beta {}, deformation has beta {}",
            u8::from(wigner.beta),
            u8::from(deformation.beta())
        )));
    }
    deformation.check_fits(n)?;
    let sigma = profile.sigma();
    let entries = match &wigner.entries {
        Entries::Real(w) => {
            let mut x = w.component_mul(sigma);
            for (i, &mi) in deformation.positions().iter().enumerate() {
                for (j, &mj) in deformation.positions().iter().enumerate() {
                    x[(mi - 1, mj - 1)] += deformation.a_tilde()[(i, j)].re;
                }
            }
            Entries::Real(x)
        }
        Entries::Complex(w) => {
            let mut x = w.zip_map(sigma, |z, s| z * s);
            for (i, &mi) in deformation.positions().iter().enumerate() {
                for (j, &mj) in deformation.positions().iter().enumerate() {
                    x[(mi - 1, mj - 1)] += deformation.a_tilde()[(i, j)];
                }
            }
            Entries::Complex(x)
        }
    };
    Ok(SampledMatrix { n, beta: wigner.beta, entries, seed: wigner.seed })
}

const EIGEN_EPS: f64 = 1e-14;
const EIGEN_MAX_ITER: usize = 0;
const RESIDUAL_TOL: f64 = 1e-8;

/// All eigenvalues of a Hermitian matrix in descending order, with a residual
/// check on the extreme eigenpairs.
pub fn hermitian_spectrum(x: &SampledMatrix) -> Result<Vec<f64>> {
    let numeric = |msg: String| Error::Numeric { seed: x.seed, msg };
    let norm = x.frobenius().max(f64::MIN_POSITIVE);
    let (values, residuals) = match &x.entries {
        Entries::Real(m) => {
            let eig = SymmetricEigen::try_new(m.clone(), EIGEN_EPS, EIGEN_MAX_ITER)
                .ok_or_else(|| numeric("symmetric eigensolver did not converge".into()))?;
            let res = extreme_residuals(&eig.eigenvalues, |i| {
                let v = eig.eigenvectors.column(i);
                (m * v - v * eig.eigenvalues[i]).norm()
            });
            (eig.eigenvalues, res)
        }
        Entries::Complex(m) => {
            let eig = SymmetricEigen::try_new(m.clone(), EIGEN_EPS, EIGEN_MAX_ITER)
                .ok_or_else(|| numeric("hermitian eigensolver did not converge".into()))?;
            let res = extreme_residuals(&eig.eigenvalues, |i| {
                let v = eig.eigenvectors.column(i);
                (m * v - v * C64::new(eig.eigenvalues[i], 0.0)).norm()
            });
            (eig.eigenvalues, res)
        }
    };
    if let Some(r) = residuals.iter().copied().find(|r| !(*r <= RESIDUAL_TOL * norm)) {
        return Err(numeric(format!("eigenpair residual {r:e} exceeds {:e}", RESIDUAL_TOL * norm)));
    }
    let mut out: Vec<f64> = values.iter().copied().collect();
    out.sort_by(|a, b| b.total_cmp(a));
    Ok(out)
}

fn extreme_residuals(values: &DVector<f64>, residual: impl Fn(usize) -> f64) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let (mut lo, mut hi) = (0, 0);
    for i in 0..values.len() {
        if values[i] < values[lo] {
            lo = i;
        }
        if values[i] > values[hi] {
            hi = i;
        }
    }
    vec![residual(lo), residual(hi)]
}

/// Samples `X_N` and returns its full spectrum, descending.
pub fn sample_spectrum(
    profile: &VarianceProfile,
    law: &EntryLaw,
    deformation: &Deformation,
    seed: u64,
) -> Result<Vec<f64>> {
    let w = sample_wigner(profile.n(), law, seed);
    let x = assemble_deformed(profile, &w, deformation)?;
    hermitian_spectrum(&x)
}

/// Profile, entry law and deformation of one deformed ensemble.
#[derive(Clone, Debug)]
pub struct Model {
    pub profile: VarianceProfile,
    pub law: EntryLaw,
    pub deformation: Deformation,
}

impl Model {
    pub fn new(profile: VarianceProfile, law: EntryLaw, deformation: Deformation) -> Result<Self> {
        if law.beta != deformation.beta() {
            return Err(Error::BetaMismatch("entry law and deformation disagree on beta".into()));
        }
        deformation.check_fits(profile.n())?;
        Ok(Self { profile, law, deformation })
    }

    pub fn n(&self) -> usize {
        self.profile.n()
    }

    pub fn beta(&self) -> Beta {
        self.law.beta
    }

    pub fn sample(&self, seed: u64) -> Result<SampledMatrix> {
        assemble_deformed(&self.profile, &sample_wigner(self.n(), &self.law, seed), &self.deformation)
    }
}
