//! Exact trace moments of small real Gaussian models, the diagram-function
//! expansion of the same moments, and the exact identities behind it.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_bigint::BigUint;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::combinatorics::{diagrams_for_perimeters, Diagram, EdgeKind};
use crate::ensemble::{Beta, Deformation, Entries, Model};
use crate::error::{Error, Result};
use crate::par::{map_trials, trial_seed, try_map_trials};
use crate::profile::VarianceProfile;
use crate::stats::{summarize, Summary};

/// Largest `N^{Σk}` the brute-force oracle accepts.
pub const ORACLE_BUDGET: u64 = 1 << 24;
pub const MAX_ORACLE_PERIMETER: usize = 10;

fn real_deformation(deformation: &Deformation, n: usize) -> Result<DMatrix<f64>> {
    if deformation.beta() != Beta::Real {
        return Err(Error::BetaMismatch("the exact moment tools cover the real case only".into()));
    }
    Ok(deformation.embed(n)?.map(|z| z.re))
}

/// `E ∏_j Tr X^{k_j}` for `X = H + A` with real Gaussian `H`, by summing over
/// index maps, subsets of factors replaced by `A`, and Wick pairings of the rest.
pub fn exact_moment_oracle(profile: &VarianceProfile, deformation: &Deformation, k_list: &[usize]) -> Result<f64> {
    let n = profile.n();
    let k: usize = k_list.iter().sum();
    if k_list.is_empty() || k_list.contains(&0) {
        return Err(Error::Domain("trace powers must be positive".into()));
    }
    if k > MAX_ORACLE_PERIMETER || (n as u64).checked_pow(k as u32).is_none_or(|c| c > ORACLE_BUDGET) {
        return Err(Error::Budget(format!("N = {n}, total power {k}")));
    }
    let a = real_deformation(deformation, n)?;
    let var = profile.sigma().map(|s| s * s);

    // next[p]: the factor that follows p inside its trace.
    let mut next = vec![0; k];
    let mut start = 0;
    for &kj in k_list {
        for i in 0..kj {
            next[start + i] = start + (i + 1) % kj;
        }
        start += kj;
    }

    // Leading index fixed per task; the rest run as an odometer.
    let parts = map_trials(n, |lead| {
        let mut eta = vec![0usize; k];
        eta[0] = lead;
        let mut total = 0.0;
        loop {
            total += expand(&eta, &next, &a, &var, (1u32 << k) - 1);
            let mut pos = 1;
            while pos < k {
                eta[pos] += 1;
                if eta[pos] < n {
                    break;
                }
                eta[pos] = 0;
                pos += 1;
            }
            if pos >= k {
                break;
            }
        }
        total
    });
    Ok(parts.into_iter().sum())
}

/// Expected product of the factors in `mask` for a fixed index map: the
/// lowest factor is either deterministic or paired with a later one.
fn expand(eta: &[usize], next: &[usize], a: &DMatrix<f64>, var: &DMatrix<f64>, mask: u32) -> f64 {
    if mask == 0 {
        return 1.0;
    }
    let p = mask.trailing_zeros() as usize;
    let rest = mask & !(1 << p);
    let (x, y) = (eta[p], eta[next[p]]);
    let mut sum = 0.0;
    let ax = a[(x, y)];
    if ax != 0.0 {
        sum += ax * expand(eta, next, a, var, rest);
    }
    let v = var[(x, y)];
    if v == 0.0 {
        return sum;
    }
    let mut others = rest;
    while others != 0 {
        let q = others.trailing_zeros() as usize;
        others &= others - 1;
        let (z, w) = (eta[q], eta[next[q]]);
        let deltas = ((x == w && y == z) as u8 + (x == z && y == w) as u8) as f64;
        if deltas > 0.0 {
            sum += v * deltas * expand(eta, next, a, var, rest & !(1 << q));
        }
    }
    sum
}

/// Normalising constant of the expansion: the largest outlier location, or
/// the bulk edge 2 without a supercritical deformation.
pub fn expansion_scale(deformation: &Deformation) -> f64 {
    deformation
        .eigenvalues()
        .iter()
        .filter(|a| a.abs() > 1.0)
        .map(|a| a.abs() + 1.0 / a.abs())
        .fold(2.0, f64::max)
}

fn binomial_f64(n: usize, r: usize) -> f64 {
    if r > n {
        return 0.0;
    }
    let r = r.min(n - r);
    (0..r).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn catalan_f64(m: usize) -> f64 {
    binomial_f64(2 * m, m) / (m + 1) as f64
}

/// Weighted count of all ribbon graphs contracting to `diagram` with face
/// perimeters `k_list`, scaled by `ρ^{−Σk}`. With `absolute`, deformation
/// powers enter entrywise in absolute value.
pub fn diagram_function(
    diagram: &Diagram,
    profile: &VarianceProfile,
    deformation: &Deformation,
    k_list: &[usize],
    absolute: bool,
) -> Result<f64> {
    let graph = &diagram.graph;
    if graph.faces.len() != k_list.len() {
        return Err(Error::SizeMismatch { expected: graph.faces.len(), found: k_list.len() });
    }
    let n = profile.n();
    let k_max = k_list.iter().copied().max().unwrap_or(0);
    let a = real_deformation(deformation, n)?;
    let p = profile.transition();
    let mut p_pow = vec![DMatrix::identity(n, n)];
    let mut a_pow = vec![DMatrix::identity(n, n)];
    for i in 1..=k_max {
        p_pow.push(&p_pow[i - 1] * &p);
        a_pow.push(&a_pow[i - 1] * &a);
    }
    if absolute {
        a_pow.iter_mut().for_each(|m| m.apply(|x| *x = x.abs()));
    }

    // Point faces carry all their length in a tree.
    let mut tree_factor = 1.0;
    for (f, &kj) in graph.faces.iter().zip(k_list) {
        if f.sides.is_empty() {
            if kj % 2 == 1 {
                return Ok(0.0);
            }
            tree_factor *= catalan_f64(kj / 2);
        }
    }

    // face_uses[e][j]: how often face j walks along edge e.
    let ne = graph.edges.len();
    let mut face_uses = vec![vec![0usize; k_list.len()]; ne];
    for (j, f) in graph.faces.iter().enumerate() {
        for s in &f.sides {
            face_uses[s.edge][j] += 1;
        }
    }

    let mut segments = vec![0usize; ne];
    let mut lengths = vec![0usize; k_list.len()];
    let mut total = 0.0;
    let mut visit = |segments: &[usize], lengths: &[usize]| {
        let mut weight = tree_factor;
        for (j, (&kj, &nj)) in k_list.iter().zip(lengths).enumerate() {
            if graph.faces[j].sides.is_empty() {
                continue;
            }
            if (kj - nj) % 2 == 1 {
                return;
            }
            weight *= binomial_f64(kj, (kj - nj) / 2);
        }
        let mats: Vec<&DMatrix<f64>> = graph
            .edges
            .iter()
            .zip(segments)
            .map(|(e, &m)| match e.kind {
                EdgeKind::Interior => &p_pow[m],
                EdgeKind::Boundary => &a_pow[m],
            })
            .collect();
        total += weight * vertex_sum(graph.vertices, n, &graph.edges, &mats);
    };
    segment_rec(0, &face_uses, k_list, &mut segments, &mut lengths, &mut visit);
    Ok(total / expansion_scale(deformation).powi(k_list.iter().sum::<usize>() as i32))
}

/// Assigns every edge a segment count `≥ 1` keeping each face within its perimeter.
fn segment_rec(
    e: usize,
    face_uses: &[Vec<usize>],
    k_list: &[usize],
    segments: &mut Vec<usize>,
    lengths: &mut Vec<usize>,
    visit: &mut dyn FnMut(&[usize], &[usize]),
) {
    if e == segments.len() {
        visit(segments, lengths);
        return;
    }
    let mut m = 1;
    loop {
        let fits = face_uses[e].iter().zip(lengths.iter()).zip(k_list).all(|((&u, &l), &kj)| l + u * m <= kj);
        if !fits {
            break;
        }
        segments[e] = m;
        for (l, &u) in lengths.iter_mut().zip(&face_uses[e]) {
            *l += u * m;
        }
        segment_rec(e + 1, face_uses, k_list, segments, lengths, visit);
        for (l, &u) in lengths.iter_mut().zip(&face_uses[e]) {
            *l -= u * m;
        }
        m += 1;
    }
}

/// `Σ_η ∏_e M_e[η(tail), η(head)]` over all vertex labellings.
fn vertex_sum(vertices: usize, n: usize, edges: &[crate::combinatorics::Edge], mats: &[&DMatrix<f64>]) -> f64 {
    // Edges are checked as soon as both ends are labelled.
    let mut ready: Vec<Vec<usize>> = vec![Vec::new(); vertices];
    for (i, e) in edges.iter().enumerate() {
        ready[e.tail.max(e.head)].push(i);
    }
    fn rec(v: usize, eta: &mut Vec<usize>, n: usize, edges: &[crate::combinatorics::Edge], mats: &[&DMatrix<f64>], ready: &[Vec<usize>]) -> f64 {
        if v == eta.len() {
            return 1.0;
        }
        let mut sum = 0.0;
        for x in 0..n {
            eta[v] = x;
            let mut w = 1.0;
            for &i in &ready[v] {
                w *= mats[i][(eta[edges[i].tail], eta[edges[i].head])];
                if w == 0.0 {
                    break;
                }
            }
            if w != 0.0 {
                sum += w * rec(v + 1, eta, n, edges, mats, ready);
            }
        }
        sum
    }
    rec(0, &mut vec![0; vertices], n, edges, mats, &ready)
}

/// `Σ_Γ W_Γ` over every diagram reached from the real gluings of `k_list`.
pub fn expansion_total(profile: &VarianceProfile, deformation: &Deformation, k_list: &[usize]) -> Result<f64> {
    let classes = diagrams_for_perimeters(k_list, Beta::Real)?;
    let mut total = 0.0;
    for class in &classes {
        total += diagram_function(&class.diagram, profile, deformation, k_list, false)?;
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CatalanIdentity {
    /// `Σ (2u_1+1) ∏ C_{u_i}` over compositions of `(k−n)/2` into `n` parts.
    pub lhs: BigUint,
    /// `binom(k, (k−n)/2)`.
    pub rhs: BigUint,
}

fn catalan_table(m: usize) -> Vec<BigUint> {
    let mut c = vec![BigUint::one()];
    for i in 1..=m {
        let next = (0..i).map(|j| &c[j] * &c[i - 1 - j]).sum();
        c.push(next);
    }
    c
}

fn binomial_big(n: usize, r: usize) -> BigUint {
    if r > n {
        return BigUint::zero();
    }
    let r = r.min(n - r);
    let mut acc = BigUint::one();
    for i in 0..r {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

/// Number of ways to hang plane trees on `n` corners of a face of perimeter
/// `k`, counted by compositions and by the closed binomial.
pub fn catalan_tree_count(k: usize, n: usize) -> Result<CatalanIdentity> {
    if n == 0 || n > k {
        return Err(Error::Domain(format!("need 1 <= n <= k, got k = {k}, n = {n}")));
    }
    if (k - n) % 2 == 1 {
        return Ok(CatalanIdentity { lhs: BigUint::zero(), rhs: BigUint::zero() });
    }
    let half = (k - n) / 2;
    let cat = catalan_table(half);
    let mut lhs = BigUint::zero();
    let mut parts = vec![0usize; n];
    compositions(half, 0, &mut parts, &mut |u| {
        let mut term = BigUint::from(2 * u[0] + 1);
        for &ui in u {
            term *= &cat[ui];
        }
        lhs += term;
    });
    Ok(CatalanIdentity { lhs, rhs: binomial_big(k, half) })
}

fn compositions(left: usize, i: usize, parts: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
    if i + 1 == parts.len() {
        parts[i] = left;
        f(parts);
        return;
    }
    for u in 0..=left {
        parts[i] = u;
        compositions(left - u, i + 1, parts, f);
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinomialIdentity {
    /// `P(Bin(k, a²/(a²+1)) = (k+n)/2)`.
    pub lhs: f64,
    /// `(a + 1/a)^{−k} a^n binom(k, (k−n)/2)`.
    pub rhs: f64,
}

pub fn binom_identity_check(k: usize, n: usize, a: f64) -> Result<BinomialIdentity> {
    if n > k || (k - n) % 2 == 1 {
        return Err(Error::Parity { k, n });
    }
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::Domain(format!("need a > 0, got {a}")));
    }
    let p = a * a / (a * a + 1.0);
    let successes = (k + n) / 2;
    let lhs = binomial_f64(k, successes) * p.powi(successes as i32) * (1.0 - p).powi((k - successes) as i32);
    let rhs = (a + 1.0 / a).powi(-(k as i32)) * a.powi(n as i32) * binomial_f64(k, (k - n) / 2);
    Ok(BinomialIdentity { lhs, rhs })
}

/// Set partitions of `0..s` as block lists, blocks in order of first element.
pub fn set_partitions(s: usize) -> Vec<Vec<Vec<usize>>> {
    fn rec(i: usize, s: usize, blocks: &mut Vec<Vec<usize>>, out: &mut Vec<Vec<Vec<usize>>>) {
        if i == s {
            out.push(blocks.clone());
            return;
        }
        for b in 0..blocks.len() {
            blocks[b].push(i);
            rec(i + 1, s, blocks, out);
            blocks[b].pop();
        }
        blocks.push(vec![i]);
        rec(i + 1, s, blocks, out);
        blocks.pop();
    }
    let mut out = Vec::new();
    rec(0, s, &mut Vec::new(), &mut out);
    out
}

fn sub_tuple(k: &[usize], block: &[usize]) -> Vec<usize> {
    block.iter().map(|&i| k[i]).collect()
}

/// Joint cumulants from joint moments: `T(k) = m(k) − Σ_Π ∏_B T(k_B)` over
/// partitions with at least two blocks. Sub-tuples keep their order.
pub fn connected_cumulants(moments: &BTreeMap<Vec<usize>, f64>) -> Result<BTreeMap<Vec<usize>, f64>> {
    let mut out = BTreeMap::new();
    for key in moments.keys() {
        cumulant_of(key, moments, &mut out)?;
    }
    Ok(out)
}

fn cumulant_of(key: &[usize], moments: &BTreeMap<Vec<usize>, f64>, memo: &mut BTreeMap<Vec<usize>, f64>) -> Result<f64> {
    if let Some(&v) = memo.get(key) {
        return Ok(v);
    }
    let m = *moments.get(key).ok_or_else(|| Error::MissingSubtuple(key.to_vec()))?;
    let mut t = m;
    for partition in set_partitions(key.len()).into_iter().filter(|p| p.len() > 1) {
        let mut prod = 1.0;
        for block in &partition {
            prod *= cumulant_of(&sub_tuple(key, block), moments, memo)?;
        }
        t -= prod;
    }
    memo.insert(key.to_vec(), t);
    Ok(t)
}

/// Joint moments from joint cumulants: `m(k) = Σ_Π ∏_B T(k_B)`.
pub fn moments_from_cumulants(cumulants: &BTreeMap<Vec<usize>, f64>) -> Result<BTreeMap<Vec<usize>, f64>> {
    let mut out = BTreeMap::new();
    for key in cumulants.keys() {
        let mut m = 0.0;
        for partition in set_partitions(key.len()) {
            let mut prod = 1.0;
            for block in &partition {
                let sub = sub_tuple(key, block);
                prod *= *cumulants.get(&sub).ok_or(Error::MissingSubtuple(sub))?;
            }
            m += prod;
        }
        out.insert(key.clone(), m);
    }
    Ok(out)
}

/// `ln D_{g,t,s}` for the summable per-(g, t) bound on diagram functions.
pub fn ln_dominating_function(g: usize, t: usize, s: usize, xi: f64, a: f64, lambda: f64) -> Result<f64> {
    if t == 0 || s == 0 || !(a > 1.0) || !(lambda >= 1.0) || !(xi > 0.0) {
        return Err(Error::Domain(format!("need t, s >= 1, a > 1, lambda >= 1, xi > 0 (a = {a}, lambda = {lambda}, xi = {xi})")));
    }
    let m = (g + t) as f64;
    let s_f = s as f64;
    let e1 = 2.0 * m + 2.0 * s_f - 4.0;
    let e2 = 3.0 * m + 4.0 * s_f - 6.0;
    let e3 = m + 2.0 * s_f;
    let ln_fact: f64 = (1..=g + t).map(|i| (i as f64).ln()).sum();
    Ok(e1 * (2.0 * xi * s_f).ln() + e2 * (2.0 * lambda * a * a / (a * a - 1.0)).ln() + e3 * 2048f64.ln() - ln_fact)
}

pub fn dominating_function(g: usize, t: usize, s: usize, xi: f64, a: f64, lambda: f64) -> Result<f64> {
    Ok(ln_dominating_function(g, t, s, xi, a, lambda)?.exp())
}

fn log_add(x: f64, y: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return y;
    }
    let (hi, lo) = if x > y { (x, y) } else { (y, x) };
    hi + (lo - hi).exp().ln_1p()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DominatingSum {
    /// `ln Σ_{g+t ≤ m} D` for `m = 1..=max_order`.
    pub ln_partial: Vec<f64>,
    /// `ln` of the full series, including the geometric tail bound.
    pub ln_total: f64,
    /// Order where the summation stopped.
    pub terms: usize,
}

/// Partial sums of `D_{g,t,s}` by total order `g + t`, and the full sum.
/// Every `(g, t)` with `g + t = m` and `t ≥ 1` has the same value, so order
/// `m` contributes `m·D`.
pub fn dominating_sums(s: usize, xi: f64, a: f64, lambda: f64, max_order: usize) -> Result<DominatingSum> {
    // ln of the order-m contribution m·D, advanced by the ratio D(m+1)/D(m).
    let ln_step = 2.0 * (2.0 * xi * s as f64).ln() + 3.0 * (2.0 * lambda * a * a / (a * a - 1.0)).ln() + 2048f64.ln();
    let mut ln_d = ln_dominating_function(0, 1, s, xi, a, lambda)?;
    let mut ln_partial = Vec::with_capacity(max_order);
    let mut acc = f64::NEG_INFINITY;
    let mut m = 1usize;
    loop {
        let lt = (m as f64).ln() + ln_d;
        acc = log_add(acc, lt);
        if m <= max_order {
            ln_partial.push(acc);
        }
        let ln_d_next = ln_d + ln_step - ((m + 1) as f64).ln();
        let lt_next = ((m + 1) as f64).ln() + ln_d_next;
        // Past the peak the ratio of consecutive terms keeps falling, so the
        // remainder is at most a geometric series.
        let ratio = (lt_next - lt).exp();
        if m >= max_order && ratio < 0.5 {
            let ln_tail = lt_next - (1.0 - ratio).ln();
            if ln_tail - acc < (1e-16f64).ln() {
                return Ok(DominatingSum { ln_partial, ln_total: log_add(acc, ln_tail), terms: m });
            }
        }
        ln_d = ln_d_next;
        m += 1;
        if m > 100_000_000 {
            return Err(Error::Numeric { seed: 0, msg: "dominating series did not settle".into() });
        }
    }
}

/// Cache key for an oracle value.
pub fn oracle_key(profile: &VarianceProfile, deformation: &Deformation, k_list: &[usize]) -> String {
    let mut h = Sha256::new();
    for v in profile.sigma().iter() {
        h.update(v.to_bits().to_le_bytes());
    }
    for &p in deformation.positions() {
        h.update((p as u64).to_le_bytes());
    }
    for z in deformation.a_tilde().iter() {
        h.update(z.re.to_bits().to_le_bytes());
        h.update(z.im.to_bits().to_le_bytes());
    }
    h.update(b"|");
    for &k in k_list {
        h.update((k as u64).to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Monte Carlo estimate of `E ∏_j Tr X^{k_j}`.
pub fn monte_carlo_trace_moment(model: &Model, k_list: &[usize], trials: usize, master_seed: u64) -> Result<Summary> {
    let values = try_map_trials(trials, |t| {
        let x = model.sample(trial_seed(master_seed, t as u64))?;
        let Entries::Real(m) = &x.entries else {
            return Err(Error::BetaMismatch("trace moments are sampled in the real case".into()));
        };
        let mut prod = 1.0;
        for &k in k_list {
            let mut p = DMatrix::identity(m.nrows(), m.nrows());
            for _ in 0..k {
                p = &p * m;
            }
            prod *= p.trace();
        }
        Ok(prod)
    })?;
    Ok(summarize(&values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combinatorics::{glue_polygons, okounkov_contract, Gluing};
    use crate::profile::BandKernel;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn spike(n: usize, a: f64) -> Deformation {
        let _ = n;
        Deformation::diagonal(vec![1], &[a], Beta::Real).unwrap()
    }

    #[test]
    fn oracle_small_cases() {
        let p = VarianceProfile::uniform(4).unwrap();
        let none = Deformation::none(Beta::Real);
        assert_relative_eq!(exact_moment_oracle(&p, &none, &[2]).unwrap(), 5.0, epsilon = 1e-12);
        assert_eq!(exact_moment_oracle(&p, &none, &[3]).unwrap(), 0.0);
        assert_relative_eq!(exact_moment_oracle(&p, &spike(4, 2.0), &[2]).unwrap(), 9.0, epsilon = 1e-12);
        let zero = VarianceProfile::custom(DMatrix::identity(1, 1)).unwrap();
        // A 1x1 "matrix" with H = sqrt(2) g: E (h + 2)^2 = 2 + 4.
        assert_relative_eq!(exact_moment_oracle(&zero, &spike(1, 2.0), &[2]).unwrap(), 6.0, epsilon = 1e-12);
    }

    #[test]
    fn oracle_matches_gaussian_scalar_moments() {
        // N = 1: X = sqrt(2) g + a, so E X^4 = 12 + 12 a^2 + a^4 and E X^2 X^2 is the same.
        let p = VarianceProfile::custom(DMatrix::identity(1, 1)).unwrap();
        let a = 1.5f64;
        let want = 12.0 + 12.0 * a * a + a.powi(4);
        assert_relative_eq!(exact_moment_oracle(&p, &spike(1, a), &[4]).unwrap(), want, epsilon = 1e-10);
        assert_relative_eq!(exact_moment_oracle(&p, &spike(1, a), &[2, 2]).unwrap(), want, epsilon = 1e-10);
    }

    #[test]
    fn oracle_matches_direct_fourth_moment_for_goe() {
        // E Tr H^4 for GOE-normalised uniform N: 2N + 5 + 5/N... computed by hand
        // through the three pairings of four factors.
        let n = 3usize;
        let p = VarianceProfile::uniform(n).unwrap();
        let got = exact_moment_oracle(&p, &Deformation::none(Beta::Real), &[4]).unwrap();
        // E Tr H^4 = Σ over (i,j,k,l) of E[H_ij H_jk H_kl H_li]; with
        // E H_ij^2 = (1 + δ_ij)/N, E H_ij^4 = 3 (1 + δ_ij)^2 / N^2:
        let nf = n as f64;
        let mut direct = 0.0;
        let var = |i: usize, j: usize| if i == j { 2.0 / nf } else { 1.0 / nf };
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let pairs = [(i, j), (j, k), (k, l), (l, i)];
                        let key = |(x, y): (usize, usize)| (x.min(y), x.max(y));
                        let mut keys: Vec<(usize, usize)> = pairs.iter().map(|&q| key(q)).collect();
                        keys.sort();
                        // Moments of independent centred Gaussians.
                        let mut e = 1.0;
                        let mut idx = 0;
                        while idx < 4 {
                            let mut run = 1;
                            while idx + run < 4 && keys[idx + run] == keys[idx] {
                                run += 1;
                            }
                            let v = var(keys[idx].0, keys[idx].1);
                            e *= match run {
                                2 => v,
                                4 => 3.0 * v * v,
                                _ => 0.0,
                            };
                            idx += run;
                        }
                        direct += e;
                    }
                }
            }
        }
        assert_relative_eq!(got, direct, epsilon = 1e-12);
        assert!(matches!(exact_moment_oracle(&p, &Deformation::none(Beta::Real), &[0]), Err(Error::Domain(_))));
        let big = VarianceProfile::uniform(16).unwrap();
        assert!(matches!(exact_moment_oracle(&big, &Deformation::none(Beta::Real), &[8]), Err(Error::Budget(_))));
    }

    #[test]
    fn circle_diagram_value() {
        let p = VarianceProfile::uniform(4).unwrap();
        let d = Diagram::degenerate_circle();
        let w = diagram_function(&d, &p, &spike(4, 2.0), &[2], false).unwrap();
        assert_relative_eq!(w, 0.64, epsilon = 1e-14);
        assert!(matches!(diagram_function(&d, &p, &spike(4, 2.0), &[2, 2], false), Err(Error::SizeMismatch { .. })));
    }

    #[test]
    fn diagram_too_long_for_face_vanishes() {
        let p = VarianceProfile::uniform(3).unwrap();
        // Two triangles sharing a side need at least three steps per face.
        let d = okounkov_contract(&glue_polygons(&[3, 3], &[Gluing::opposite(2, 5)], None).unwrap());
        assert_eq!(diagram_function(&d, &p, &spike(3, 2.0), &[2, 2], false).unwrap(), 0.0);
        assert!(diagram_function(&d, &p, &spike(3, 2.0), &[3, 3], false).unwrap() > 0.0);
    }

    #[test]
    fn absolute_variant_dominates() {
        let p = VarianceProfile::uniform(3).unwrap();
        let a = Deformation::real(vec![1, 2], DMatrix::from_row_slice(2, 2, &[0.5, -1.5, -1.5, 0.5])).unwrap();
        for class in diagrams_for_perimeters(&[3, 2], Beta::Real).unwrap() {
            let w = diagram_function(&class.diagram, &p, &a, &[3, 2], false).unwrap();
            let w_abs = diagram_function(&class.diagram, &p, &a, &[3, 2], true).unwrap();
            assert!(w.abs() <= w_abs + 1e-12);
        }
    }

    #[test]
    fn expansion_equals_oracle_small() {
        let band = VarianceProfile::band(5, 1, 2.0, BandKernel::Gaussian).unwrap();
        for profile in [VarianceProfile::uniform(3).unwrap(), band] {
            let n = profile.n();
            for def in [Deformation::none(Beta::Real), spike(n, 2.0)] {
                for k_list in [vec![1], vec![2], vec![3], vec![4], vec![2, 1], vec![2, 2]] {
                    let exact = exact_moment_oracle(&profile, &def, &k_list).unwrap();
                    let scale = expansion_scale(&def).powi(k_list.iter().sum::<usize>() as i32);
                    let expanded = expansion_total(&profile, &def, &k_list).unwrap();
                    assert!((expanded - exact / scale).abs() <= 1e-9, "{k_list:?}: {expanded} vs {}", exact / scale);
                }
            }
        }
    }

    #[test]
    fn catalan_examples() {
        let c = catalan_tree_count(2, 2).unwrap();
        assert_eq!(c.lhs, BigUint::from(1u32));
        let c = catalan_tree_count(4, 2).unwrap();
        assert_eq!((c.lhs.clone(), c.rhs.clone()), (BigUint::from(4u32), BigUint::from(4u32)));
        let c = catalan_tree_count(6, 2).unwrap();
        assert_eq!(c.lhs, BigUint::from(15u32));
        assert_eq!(catalan_tree_count(5, 2).unwrap().lhs, BigUint::zero());
        assert!(catalan_tree_count(3, 0).is_err());
    }

    #[test]
    fn catalan_identity_grid() {
        for k in 1..=20 {
            for n in 1..=k {
                let c = catalan_tree_count(k, n).unwrap();
                assert_eq!(c.lhs, c.rhs, "k = {k}, n = {n}");
            }
        }
    }

    #[test]
    fn binomial_examples() {
        let b = binom_identity_check(2, 0, 2.0).unwrap();
        assert_relative_eq!(b.lhs, 0.32, epsilon = 1e-15);
        assert_relative_eq!(b.rhs, 0.32, epsilon = 1e-15);
        let b = binom_identity_check(2, 0, 1.0).unwrap();
        assert_relative_eq!(b.lhs, 0.5, epsilon = 1e-15);
        let b = binom_identity_check(5, 5, 1.5).unwrap();
        assert_relative_eq!(b.lhs, (2.25f64 / 3.25).powi(5), epsilon = 1e-15);
        assert!(matches!(binom_identity_check(3, 0, 2.0), Err(Error::Parity { .. })));
    }

    #[test]
    fn cumulant_examples() {
        let mut m = BTreeMap::new();
        m.insert(vec![2], 3.0);
        m.insert(vec![4], 7.0);
        m.insert(vec![2, 4], 21.0);
        let t = connected_cumulants(&m).unwrap();
        assert_eq!(t[&vec![2]], 3.0);
        assert!(t[&vec![2, 4]].abs() < 1e-15);
        m.remove(&vec![4]);
        assert!(matches!(connected_cumulants(&m), Err(Error::MissingSubtuple(v)) if v == vec![4]));
    }

    #[test]
    fn bell_numbers() {
        let counts: Vec<usize> = (0..6).map(|s| set_partitions(s).len()).collect();
        assert_eq!(counts, vec![1, 1, 2, 5, 15, 52]);
    }

    #[test]
    fn dominating_function_values() {
        let direct = 8.0 / 3.0 * 2048f64.powi(3);
        assert_relative_eq!(dominating_function(0, 1, 1, 1.0, 2.0, 1.0).unwrap(), direct, max_relative = 1e-12);
        let direct = (2.0f64).powi(2) * (8.0f64 / 3.0).powi(4) * 2048f64.powi(4) / 2.0;
        assert_relative_eq!(dominating_function(1, 1, 1, 1.0, 2.0, 1.0).unwrap(), direct, max_relative = 1e-12);
        let mut prev = 0.0;
        for lambda in [1.0, 1.5, 2.0, 4.0] {
            let v = dominating_function(1, 2, 2, 1.0, 2.0, lambda).unwrap();
            assert!(v > prev);
            prev = v;
        }
        assert!(dominating_function(0, 0, 1, 1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn dominating_series_converges() {
        // Small xi keeps the peak at low order so the direct sum is checkable.
        let sum = dominating_sums(1, 0.01, 2.0, 1.0, 50).unwrap();
        let ln_d = |m: usize| (m as f64).ln() + ln_dominating_function(0, m, 1, 0.01, 2.0, 1.0).unwrap();
        let direct: f64 = (1..2000).map(|m| ln_d(m).exp()).sum();
        assert_relative_eq!(sum.ln_total, direct.ln(), max_relative = 1e-12);
        assert!(sum.ln_partial.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn monte_carlo_smoke() {
        let p = VarianceProfile::uniform(2).unwrap();
        let model = Model::new(p.clone(), crate::ensemble::EntryLaw::new(crate::ensemble::LawKind::Gaussian, Beta::Real), spike(2, 1.0)).unwrap();
        let s = monte_carlo_trace_moment(&model, &[2], 20_000, 9).unwrap();
        let exact = exact_moment_oracle(&p, &spike(2, 1.0), &[2]).unwrap();
        assert!((s.mean - exact).abs() < 4.0 * s.stderr);
    }

    #[test]
    fn oracle_key_depends_on_inputs() {
        let p = VarianceProfile::uniform(3).unwrap();
        let k1 = oracle_key(&p, &spike(3, 2.0), &[2]);
        assert_eq!(k1, oracle_key(&p, &spike(3, 2.0), &[2]));
        assert_ne!(k1, oracle_key(&p, &spike(3, 2.0), &[3]));
        assert_ne!(k1, oracle_key(&p, &spike(3, 1.5), &[2]));
    }

    proptest! {
        #[test]
        fn cumulant_round_trip(values in prop::collection::vec(-5.0f64..5.0, 7)) {
            let keys = [vec![1], vec![2], vec![3], vec![1, 2], vec![1, 3], vec![2, 3], vec![1, 2, 3]];
            let table: BTreeMap<Vec<usize>, f64> = keys.iter().cloned().zip(values.iter().copied()).collect();
            let back = moments_from_cumulants(&connected_cumulants(&table).unwrap()).unwrap();
            for (k, v) in &table {
                prop_assert!((back[k] - v).abs() <= 1e-10 * (1.0 + v.abs()));
            }
        }

        #[test]
        fn binomial_identity_grid(k in 0usize..31, n_half in 0usize..16, a_idx in 0usize..4) {
            let a = [1.0, 1.5, 2.0, 5.0][a_idx];
            let n = k.saturating_sub(2 * n_half.min(k / 2));
            let b = binom_identity_check(k, n, a).unwrap();
            prop_assert!((b.lhs - b.rhs).abs() <= 1e-12);
        }
    }
}
