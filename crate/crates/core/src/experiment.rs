//! Config-driven experiments: each one runs a module against its predicted
//! values and reports pass/fail checks plus CSV data.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::combinatorics::{enumerate_small_diagrams, perimeter_tuples, trivalent_count_bound, LemmaTally};
use crate::ensemble::{Beta, Deformation, EntryLaw, LawKind, Model, C64};
use crate::error::{Error, Result};
use crate::fluctuation::{collect_fluctuations, laplace_check, sample_z_many, scalar_variance};
use crate::profile::{compute_limit_params, ProfileDoc, VarianceProfile};
use crate::spectral::{run_bbp_experiment, verify_spectral_measure, Side};
use crate::stats::{compare_distributions, summarize};
use crate::wick::{
    binom_identity_check, catalan_tree_count, connected_cumulants, dominating_sums, exact_moment_oracle,
    expansion_scale, expansion_total, monte_carlo_trace_moment, moments_from_cumulants,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    BbpLln,
    FluctuationKs,
    SpectralMeasure,
    Laplace,
    Identities,
    DiagramSuite,
    OracleCrosscheck,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::BbpLln,
        ExperimentKind::FluctuationKs,
        ExperimentKind::SpectralMeasure,
        ExperimentKind::Laplace,
        ExperimentKind::Identities,
        ExperimentKind::DiagramSuite,
        ExperimentKind::OracleCrosscheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::BbpLln => "bbp_lln",
            ExperimentKind::FluctuationKs => "fluctuation_ks",
            ExperimentKind::SpectralMeasure => "spectral_measure",
            ExperimentKind::Laplace => "laplace",
            ExperimentKind::Identities => "identities",
            ExperimentKind::DiagramSuite => "diagram_suite",
            ExperimentKind::OracleCrosscheck => "oracle_crosscheck",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentKind::BbpLln => "mean extreme eigenvalues against a + 1/a (or the bulk edge)",
            ExperimentKind::FluctuationKs => "rescaled outlier against the limiting Z law: variance and two-sample KS",
            ExperimentKind::SpectralMeasure => "moments of the spectral measure at the spike against mu_a",
            ExperimentKind::Laplace => "rescaled trace of a high power against E Tr exp(cZ)",
            ExperimentKind::Identities => "Catalan, binomial and cumulant identities plus small-diagram lemmas",
            ExperimentKind::DiagramSuite => "exhaustive diagram census, count bound and dominating series",
            ExperimentKind::OracleCrosscheck => "diagram expansion against the brute-force Wick oracle",
        }
    }

    pub fn claim(self) -> &'static str {
        match self {
            ExperimentKind::BbpLln => "outlier law of large numbers",
            ExperimentKind::FluctuationKs => "outlier fluctuation limit",
            ExperimentKind::SpectralMeasure => "spectral measure limit",
            ExperimentKind::Laplace => "Laplace transform limit of high moments",
            ExperimentKind::Identities => "exact identities of the moment expansion",
            ExperimentKind::DiagramSuite => "diagram counting bounds and summability",
            ExperimentKind::OracleCrosscheck => "diagram expansion of joint trace moments",
        }
    }
}

/// Table of experiment names, descriptions and the claim each one checks.
pub fn list_experiments() -> String {
    let mut out = format!("{:<18} {:<42} {}\n", "name", "checks", "description");
    for kind in ExperimentKind::ALL {
        out.push_str(&format!("{:<18} {:<42} {}\n", kind.name(), kind.claim(), kind.description()));
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeformationSpec {
    /// 1-based rows carrying the deformation.
    #[serde(default)]
    pub positions: Vec<usize>,
    #[serde(default)]
    pub a_tilde: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub profile: ProfileDoc,
    pub law: LawKind,
    pub beta: Beta,
    #[serde(default)]
    pub deformation: DeformationSpec,
}

impl ModelSpec {
    pub fn build(&self) -> Result<Model> {
        let profile = VarianceProfile::from_doc(&self.profile)?;
        let r = self.deformation.positions.len();
        let rows = &self.deformation.a_tilde;
        if rows.len() != r || rows.iter().any(|row| row.len() != r) {
            return Err(Error::Config(format!("a_tilde must be {r}x{r} to match positions")));
        }
        let a = DMatrix::from_fn(r, r, |i, j| C64::new(rows[i][j], 0.0));
        let deformation = Deformation::new(self.deformation.positions.clone(), a, self.beta)?;
        Model::new(profile, EntryLaw::new(self.law, self.beta), deformation)
    }
}

/// Pinned tolerances; absent values take the per-experiment defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub abs: Option<f64>,
    pub ks: Option<f64>,
    pub stderr_multiple: Option<f64>,
    pub exact: Option<f64>,
    pub stabilization: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    pub j_max: Option<usize>,
    pub m_max: Option<usize>,
    pub z_draws: Option<usize>,
    pub t_list: Option<Vec<f64>>,
    pub k_budget: Option<usize>,
    pub k_max: Option<usize>,
    pub k_lists: Option<Vec<Vec<usize>>>,
    pub mc_k_list: Option<Vec<usize>>,
    pub mc_trials: Option<usize>,
    pub max_order: Option<usize>,
    pub xi: Option<f64>,
    pub a: Option<f64>,
    pub lambda: Option<f64>,
    pub s: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub trials: Option<usize>,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub params: Params,
    /// Output directory; the command line overrides it.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    /// `|measured − expected| ≤ tolerance`.
    pub fn near(name: impl Into<String>, measured: f64, expected: f64, tolerance: f64) -> Self {
        let pass = (measured - expected).abs() <= tolerance;
        Check { name: name.into(), measured, expected, tolerance, pass }
    }

    /// `measured ≤ tolerance`.
    pub fn at_most(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Check { name: name.into(), measured, expected: 0.0, tolerance, pass: measured <= tolerance }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub experiment: ExperimentKind,
    pub config_hash: String,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub pass: bool,
    pub wall_time_s: f64,
    pub warnings: Vec<String>,
    pub outputs: Vec<String>,
}

/// A CSV file as header plus rows, written after the run succeeds.
#[derive(Clone, Debug, Default)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Table { name: name.into(), header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(&self.name);
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        w.write_record(&self.header).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(path)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Checks, tables and warnings of a finished run.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub checks: Vec<Check>,
    pub tables: Vec<Table>,
    pub warnings: Vec<String>,
}

/// A validated config with its model built; nothing has been written yet.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub model: Option<Model>,
}

fn need<T: Clone>(value: &Option<T>, what: &str, kind: ExperimentKind) -> Result<T> {
    value.clone().ok_or_else(|| Error::Config(format!("{} needs `{what}`", kind.name())))
}

/// Validates the config and builds its model, overriding the seed if asked.
pub fn prepare(mut config: ExperimentConfig, seed: Option<u64>) -> Result<Prepared> {
    if let Some(s) = seed {
        config.seed = s;
    }
    let kind = config.experiment;
    let needs_model = matches!(
        kind,
        ExperimentKind::BbpLln
            | ExperimentKind::FluctuationKs
            | ExperimentKind::SpectralMeasure
            | ExperimentKind::Laplace
            | ExperimentKind::OracleCrosscheck
    );
    let model = match (&config.model, needs_model) {
        (Some(spec), _) => Some(spec.build()?),
        (None, true) => return Err(Error::Config(format!("{} needs `model`", kind.name()))),
        (None, false) => None,
    };
    if matches!(
        kind,
        ExperimentKind::BbpLln | ExperimentKind::FluctuationKs | ExperimentKind::SpectralMeasure | ExperimentKind::Laplace
    ) {
        need(&config.trials, "trials", kind)?;
    }
    if kind == ExperimentKind::OracleCrosscheck {
        let m = model.as_ref().expect("built above");
        if m.beta() != Beta::Real || m.law.kind != LawKind::Gaussian {
            return Err(Error::Config("oracle_crosscheck needs real Gaussian entries".into()));
        }
    }
    if matches!(kind, ExperimentKind::FluctuationKs | ExperimentKind::Laplace) {
        let m = model.as_ref().expect("built above");
        if m.deformation.rank() != 1 {
            return Err(Error::Config(format!("{} runs the scalar case and needs rank 1", kind.name())));
        }
    }
    Ok(Prepared { config, model })
}

/// Runs a prepared experiment without touching the file system.
pub fn execute(prepared: &Prepared) -> Result<Outcome> {
    let c = &prepared.config;
    let model = prepared.model.as_ref();
    match c.experiment {
        ExperimentKind::BbpLln => bbp_lln(c, model.expect("validated")),
        ExperimentKind::FluctuationKs => fluctuation_ks(c, model.expect("validated")),
        ExperimentKind::SpectralMeasure => spectral_measure(c, model.expect("validated")),
        ExperimentKind::Laplace => laplace(c, model.expect("validated")),
        ExperimentKind::Identities => identities(c),
        ExperimentKind::DiagramSuite => diagram_suite(c),
        ExperimentKind::OracleCrosscheck => oracle_crosscheck(c, model.expect("validated")),
    }
}

/// Executes and writes `report.json` plus CSV files into `out`.
pub fn run(prepared: &Prepared, out: &Path) -> Result<RunReport> {
    let start = Instant::now();
    let outcome = execute(prepared)?;
    std::fs::create_dir_all(out)?;
    let mut outputs = Vec::new();
    for table in &outcome.tables {
        table.write(out)?;
        outputs.push(table.name.clone());
    }
    let report = RunReport {
        experiment: prepared.config.experiment,
        config_hash: prepared.config.hash(),
        seed: prepared.config.seed,
        pass: outcome.checks.iter().all(|c| c.pass),
        checks: outcome.checks,
        wall_time_s: start.elapsed().as_secs_f64(),
        warnings: outcome.warnings,
        outputs,
    };
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn bbp_lln(c: &ExperimentConfig, model: &Model) -> Result<Outcome> {
    let trials = c.trials.unwrap_or_default();
    let j_max = c.params.j_max.unwrap_or(1);
    let tol = c.tolerances.abs.unwrap_or(0.05);
    let table = run_bbp_experiment(model, trials, c.seed, j_max)?;
    let eigs = model.deformation.eigenvalues();
    let mut checks = Vec::new();
    if eigs.is_empty() {
        let norms: Vec<f64> = table.samples.iter().map(|(t, b)| t[0].abs().max(b[0].abs())).collect();
        checks.push(Check::near("mean operator norm", summarize(&norms).mean, 2.0, tol));
    }
    for row in &table.rows {
        let checked = match row.side {
            Side::Top => eigs.first().is_some_and(|&a| a > 0.0),
            Side::Bottom => eigs.last().is_some_and(|&a| a < 0.0),
        };
        if checked {
            let label = match row.side {
                Side::Top => format!("mean lambda_{}", row.index),
                Side::Bottom => format!("mean lambda_(N+1-{})", row.index),
            };
            checks.push(Check::near(label, row.mean, row.prediction, tol));
        }
    }
    let mut samples = Table::new("bbp_eigenvalues.csv", &["trial", "side", "j", "lambda"]);
    for (t, (top, bottom)) in table.samples.iter().enumerate() {
        for (j, v) in top.iter().enumerate() {
            samples.push(vec![t.to_string(), "top".into(), (j + 1).to_string(), num(*v)]);
        }
        for (j, v) in bottom.iter().enumerate() {
            samples.push(vec![t.to_string(), "bottom".into(), (j + 1).to_string(), num(*v)]);
        }
    }
    let mut summary = Table::new("bbp_summary.csv", &["side", "j", "mean", "stderr", "prediction", "abs_err"]);
    for row in &table.rows {
        let side = if row.side == Side::Top { "top" } else { "bottom" };
        summary.push(vec![
            side.into(),
            row.index.to_string(),
            num(row.mean),
            num(row.stderr),
            num(row.prediction),
            num(row.abs_err),
        ]);
    }
    Ok(Outcome { checks, tables: vec![samples, summary], warnings: table.warnings })
}

fn fluctuation_ks(c: &ExperimentConfig, model: &Model) -> Result<Outcome> {
    let trials = c.trials.unwrap_or_default();
    let z_draws = c.params.z_draws.unwrap_or(trials);
    let ks_tol = c.tolerances.ks.unwrap_or(0.08);
    let se_mult = c.tolerances.stderr_multiple.unwrap_or(3.0);
    let params = compute_limit_params(&model.profile, &model.deformation, &model.law, 1, 1e-14)?;
    let run = collect_fluctuations(model, 1, trials, c.seed)?;
    let scaled: Vec<f64> = run.samples.iter().map(|s| s.scaled).collect();
    let z: Vec<f64> = sample_z_many(&params, &model.law, z_draws, c.seed ^ 0x5A5A_0F0F)?.into_iter().map(|v| v[0]).collect();
    let s = summarize(&scaled);
    let expected = scalar_variance(&params);
    let ks = compare_distributions(&scaled, &z, ks_tol)?;
    let checks = vec![
        Check::near("variance of scaled outlier", s.variance, expected, se_mult * s.variance_stderr),
        Check::at_most("two-sample KS statistic", ks.ks_stat, ks_tol),
    ];
    let mut fl = Table::new("fluctuations.csv", &["trial", "j", "lambda", "scaled"]);
    for x in &run.samples {
        fl.push(vec![x.trial.to_string(), x.j.to_string(), num(x.lambda), num(x.scaled)]);
    }
    let mut zt = Table::new("z_draws.csv", &["draw", "z"]);
    for (i, v) in z.iter().enumerate() {
        zt.push(vec![i.to_string(), num(*v)]);
    }
    Ok(Outcome { checks, tables: vec![fl, zt], warnings: run.warnings })
}

fn spectral_measure(c: &ExperimentConfig, model: &Model) -> Result<Outcome> {
    let trials = c.trials.unwrap_or_default();
    let m_max = c.params.m_max.unwrap_or(10);
    let tol = c.tolerances.abs.unwrap_or(0.05);
    let report = verify_spectral_measure(model, 0, m_max, trials, c.seed)?;
    let mut checks = Vec::new();
    let mut t = Table::new("moments.csv", &["m", "empirical", "stderr", "target", "abs_err"]);
    for row in &report.rows {
        if row.m >= 1 {
            checks.push(Check::near(format!("moment {}", row.m), row.empirical, row.target, tol));
        }
        t.push(vec![row.m.to_string(), num(row.empirical), num(row.stderr), num(row.target), num(row.abs_err)]);
    }
    Ok(Outcome { checks, tables: vec![t], warnings: Vec::new() })
}

fn laplace(c: &ExperimentConfig, model: &Model) -> Result<Outcome> {
    let trials = c.trials.unwrap_or_default();
    let z_draws = c.params.z_draws.unwrap_or(trials);
    let t_list = c.params.t_list.clone().unwrap_or_else(|| vec![1.0]);
    let se_mult = c.tolerances.stderr_multiple.unwrap_or(4.0);
    let params = compute_limit_params(&model.profile, &model.deformation, &model.law, 1, 1e-14)?;
    let r = laplace_check(model, &params, &t_list, trials, z_draws, c.seed)?;
    let checks = vec![Check::at_most("lhs-rhs gap in combined standard errors", r.z_score, se_mult)];
    let mut t = Table::new("laplace.csv", &["lhs", "lhs_stderr", "rhs", "rhs_stderr", "rel_err", "z_score"]);
    t.push(vec![num(r.lhs), num(r.lhs_stderr), num(r.rhs), num(r.rhs_stderr), num(r.rel_err), num(r.z_score)]);
    Ok(Outcome { checks, tables: vec![t], warnings: Vec::new() })
}

/// Catalan, binomial and cumulant identities.
pub fn identity_checks(k_max: usize, tol: f64, seed: u64) -> Result<Vec<Check>> {
    let mut catalan_failures = 0;
    for k in 1..=k_max {
        for n in 1..=k {
            let c = catalan_tree_count(k, n)?;
            if c.lhs != c.rhs {
                catalan_failures += 1;
            }
        }
    }
    let mut binom_err: f64 = 0.0;
    for k in 0..=30 {
        for n in (k % 2..=k).step_by(2) {
            for a in [1.0, 1.5, 2.0, 5.0] {
                let b = binom_identity_check(k, n, a)?;
                binom_err = binom_err.max((b.lhs - b.rhs).abs());
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cumulant_err: f64 = 0.0;
    for _ in 0..200 {
        let mut keys: Vec<Vec<usize>> = Vec::new();
        for s in 1..=3 {
            keys.extend(perimeter_tuples(3 + s, s).into_iter().filter(|k| k.len() == s));
        }
        let table: BTreeMap<Vec<usize>, f64> = keys.into_iter().map(|k| (k, rng.random_range(-5.0..5.0))).collect();
        let back = moments_from_cumulants(&connected_cumulants(&table)?)?;
        for (k, v) in &table {
            cumulant_err = cumulant_err.max((back[k] - v).abs());
        }
    }
    Ok(vec![
        Check::at_most("Catalan tree-count mismatches", catalan_failures as f64, 0.0),
        Check::at_most("binomial identity max error", binom_err, tol),
        Check::at_most("cumulant round-trip max error", cumulant_err, 1e-10),
    ])
}

/// Lemma tally over every diagram from gluings with total perimeter up to `k_budget`.
pub fn diagram_census(k_budget: usize) -> Result<LemmaTally> {
    let mut tally = LemmaTally::default();
    for s in 1..=k_budget {
        for d in enumerate_small_diagrams(k_budget, s)? {
            tally.record(&d);
        }
    }
    Ok(tally)
}

fn lemma_checks(tally: &LemmaTally) -> Vec<Check> {
    vec![
        Check::at_most("Euler formula failures", tally.euler_failures as f64, 0.0),
        Check::at_most("|E_b| != |V_b| cases", tally.boundary_balance_failures as f64, 0.0),
        Check::at_most("boundary inequality failures", tally.inequality_failures as f64, 0.0),
        Check::at_most("equality cases outside the trivalent class", tally.equality_mismatches as f64, 0.0),
        Check::at_most("typical-predicate mismatches", tally.typical_mismatches as f64, 0.0),
        Check::at_most("trivalent vertex/edge count failures", tally.count_failures as f64, 0.0),
    ]
}

fn identities(c: &ExperimentConfig) -> Result<Outcome> {
    let tol = c.tolerances.exact.unwrap_or(1e-12);
    let mut checks = identity_checks(c.params.k_max.unwrap_or(20), tol, c.seed)?;
    let tally = diagram_census(c.params.k_budget.unwrap_or(6))?;
    checks.extend(lemma_checks(&tally));
    Ok(Outcome { checks, ..Default::default() })
}

fn diagram_suite(c: &ExperimentConfig) -> Result<Outcome> {
    let budget = c.params.k_budget.unwrap_or(8);
    let tally = diagram_census(budget)?;
    let mut checks = lemma_checks(&tally);
    let mut counts = Table::new("trivalent_counts.csv", &["g", "t", "s", "count", "bound"]);
    let mut worst: f64 = 0.0;
    for (&(g, t, s), &n) in &tally.trivalent_by_type {
        let bound = trivalent_count_bound(g, t, s);
        worst = worst.max(n as f64 / bound);
        counts.push(vec![g.to_string(), t.to_string(), s.to_string(), n.to_string(), num(bound)]);
    }
    checks.push(Check::at_most("largest count / bound ratio", worst, 1.0));

    let (xi, a, lambda, s) =
        (c.params.xi.unwrap_or(1.0), c.params.a.unwrap_or(2.0), c.params.lambda.unwrap_or(1.0), c.params.s.unwrap_or(1));
    let max_order = c.params.max_order.unwrap_or(200);
    let sums = dominating_sums(s, xi, a, lambda, max_order)?;
    let last = sums.ln_partial.len() - 1;
    // Share of the partial sum added by the final order g + t = max_order.
    let increment = 1.0 - (sums.ln_partial[last - 1] - sums.ln_partial[last]).exp();
    checks.push(Check::at_most(
        format!("last-order share of the partial sum at g+t={max_order}"),
        increment,
        c.tolerances.stabilization.unwrap_or(1e-6),
    ));
    let mut series = Table::new("dominating_partial_sums.csv", &["order", "ln_partial_sum"]);
    for (m, v) in sums.ln_partial.iter().enumerate() {
        series.push(vec![(m + 1).to_string(), num(*v)]);
    }
    let warnings = vec![format!(
        "full dominating series: ln total = {:.6}, summed to order {}",
        sums.ln_total, sums.terms
    )];
    Ok(Outcome { checks, tables: vec![counts, series], warnings })
}

/// Largest `|Σ_Γ W_Γ − ρ^{−k} oracle|` over the given trace-power lists.
pub fn oracle_table(model: &Model, k_lists: &[Vec<usize>]) -> Result<Vec<(Vec<usize>, f64, f64)>> {
    let mut rows = Vec::new();
    for k_list in k_lists {
        let scale = expansion_scale(&model.deformation).powi(k_list.iter().sum::<usize>() as i32);
        let oracle = exact_moment_oracle(&model.profile, &model.deformation, k_list)? / scale;
        let expanded = expansion_total(&model.profile, &model.deformation, k_list)?;
        rows.push((k_list.clone(), oracle, expanded));
    }
    Ok(rows)
}

/// Trace-power lists with at most two traces and total power at most `budget`.
pub fn small_k_lists(budget: usize) -> Vec<Vec<usize>> {
    (1..=2).flat_map(|s| perimeter_tuples(budget, s)).collect()
}

fn oracle_crosscheck(c: &ExperimentConfig, model: &Model) -> Result<Outcome> {
    let k_lists = c.params.k_lists.clone().unwrap_or_else(|| small_k_lists(6));
    let tol = c.tolerances.exact.unwrap_or(1e-9);
    let rows = oracle_table(model, &k_lists)?;
    let worst = rows.iter().map(|(_, o, e)| (o - e).abs()).fold(0.0, f64::max);
    let mut checks = vec![Check::at_most("max |expansion - oracle|", worst, tol)];
    let mut t = Table::new("oracle.csv", &["k_list", "oracle_scaled", "expansion", "diff"]);
    for (k, o, e) in &rows {
        let label = k.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ");
        t.push(vec![label, num(*o), num(*e), num(e - o)]);
    }
    let mut tables = vec![t];
    if let Some(k_list) = &c.params.mc_k_list {
        let trials = c.params.mc_trials.unwrap_or(1_000_000);
        let se = c.tolerances.stderr_multiple.unwrap_or(4.0);
        let exact = exact_moment_oracle(&model.profile, &model.deformation, k_list)?;
        let mc = monte_carlo_trace_moment(model, k_list, trials, c.seed)?;
        checks.push(Check::near("Monte Carlo trace moment", mc.mean, exact, se * mc.stderr));
        let mut m = Table::new("monte_carlo.csv", &["trials", "mean", "stderr", "oracle"]);
        m.push(vec![trials.to_string(), num(mc.mean), num(mc.stderr), num(exact)]);
        tables.push(m);
    }
    Ok(Outcome { checks, tables, warnings: Vec::new() })
}

/// Process exit code for a failed run: 2 for bad input, 3 for numeric trouble.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numeric { .. } | Error::Quadrature(_) | Error::Io(_) => 3,
        _ => 2,
    }
}
