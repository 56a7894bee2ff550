//! The experiment families behind each subcommand. Each returns a [`Report`]
//! of plot-ready tables and pass/fail verdicts; nothing here touches the disk.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::ExperimentConfig;
use crate::dynamics::{evolve_tagged, flux_batch, flux_naive, flux_variance_exact, FluxQuery};
use crate::ensemble::{derive_seed, sample, Configuration, RodPoint, Window};
use crate::error::{Error, Result};
use crate::fields::{
    asymptotic_center, diffusive_variance_oracle, field_half_width, first_tagged, pair_displacements,
    raw_static_sum, rigid_translation_stats, tagged_pair, transported, EvolvedState, Tagging, TestFunction,
};
use crate::measures::{
    covariance_matrix, diffusivity, random_measure, v_eff_integral, Model, VELOCITY_TAIL,
};
use crate::stats::{
    correlation, fit_rate, map_replicas, normality, stable_sum, test_against, test_mean_with_stderr,
    ConvergenceFit, CovarianceStats, ReplicaStats, TestKind, Verdict,
};

/// How scaled fields are centered before they are reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterMode {
    /// Subtract the replica mean.
    Empirical,
    /// Subtract `⟨φ⟩ / (1 + σ)`.
    Asymptotic,
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub center: CenterMode,
    /// Print progress lines on standard error.
    pub progress: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { threads: 0, center: CenterMode::Empirical, progress: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Flag(bool),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Num(x) => write!(f, "{x:?}"),
            Cell::Int(n) => write!(f, "{n}"),
            Cell::Text(s) => write!(f, "{s}"),
            Cell::Flag(b) => write!(f, "{b}"),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(n: usize) -> Self {
        Cell::Int(n as u64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Cell::Flag(b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(name: &str, columns: &[&'static str]) -> Self {
        Table { name: name.to_string(), columns: columns.to_vec(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

macro_rules! row {
    ($($x:expr),* $(,)?) => { vec![$(Cell::from($x)),*] };
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedFit {
    pub id: String,
    #[serde(flatten)]
    pub fit: ConvergenceFit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub command: String,
    pub verdicts: Vec<Verdict>,
    pub tables: Vec<Table>,
    pub fits: Vec<NamedFit>,
    pub notes: Vec<String>,
}

impl Report {
    fn new(command: &str) -> Self {
        Report { command: command.to_string(), verdicts: Vec::new(), tables: Vec::new(), fits: Vec::new(), notes: Vec::new() }
    }

    pub fn pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn verdict(&self, id: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.test_id == id)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}

/// Replica master seed for one experiment stream.
fn stream(master: u64, tag: &str, k: usize) -> u64 {
    // FNV-1a over the tag keeps streams of different experiments apart.
    let h = tag.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3));
    derive_seed(derive_seed(master, h), k as u64)
}

fn progress(opts: &RunOptions, msg: impl FnOnce() -> String) {
    if opts.progress {
        eprintln!("{}", msg());
    }
}

/// Largest `|y|` in the supports of `functions` over speeds up to `cap`.
fn extent(functions: &[&TestFunction], cap: f64) -> f64 {
    functions
        .iter()
        .filter_map(|f| f.support_over(-cap, cap))
        .map(|(lo, hi)| lo.abs().max(hi.abs()))
        .fold(0.0, f64::max)
}

/// Pass iff `lo ≤ statistic ≤ hi`; `z_or_chi2` is the offset from `target` in
/// units of the interval half-width.
fn interval_verdict(id: String, statistic: f64, target: f64, lo: f64, hi: f64) -> Verdict {
    let half = 0.5 * (hi - lo);
    Verdict {
        test_id: id,
        statistic,
        target,
        stderr_or_ci: crate::stats::StderrOrCi::Ci([lo, hi]),
        z_or_chi2: if half > 0.0 { (statistic - target) / half } else { 0.0 },
        pass: lo <= statistic && statistic <= hi,
    }
}

/// Velocities at which tagged rods are followed: every velocity atom, and the
/// mean of every continuous velocity component.
pub fn tag_targets(model: &Model, band: f64) -> Vec<(f64, Tagging)> {
    let mut out: Vec<(f64, Tagging)> = Vec::new();
    for c in model.mu.components() {
        if c.weight == 0.0 {
            continue;
        }
        let v = c.velocity.atom().unwrap_or_else(|| c.velocity.mean());
        if out.iter().all(|&(w, _)| w != v) {
            out.push((v, Tagging::for_velocity(model, v, band)));
        }
    }
    out
}

/// Search length that contains a tagged rod except with probability `e^{-40}`.
fn tag_search_length(model: &Model, v: f64, tagging: Tagging, eps: f64) -> Result<f64> {
    let p = tagging.probability(model, v);
    if p <= 0.0 {
        return Err(Error::InvalidParameter(format!("no rods are tagged at velocity {v}")));
    }
    Ok(40.0 * eps / (model.rho * p) + 1.0)
}

fn velocity_cap(model: &Model) -> f64 {
    model.mu.velocity_cap(VELOCITY_TAIL)
}

/// Mass density and rod-weighted field means against their limits.
pub fn lln(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Report> {
    let mut report = lln_mass(cfg, opts)?;
    let fields = lln_fields(cfg, opts)?;
    report.verdicts.extend(fields.verdicts);
    report.tables.extend(fields.tables);
    report.notes.extend(fields.notes);
    Ok(report)
}

/// Mass per unit length on `(0, b]` against `σ`, with the convergence rate of
/// its root-mean-square residual across epsilons.
pub fn lln_mass(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Report> {
    let model = cfg.model()?;
    let r2 = model.length_second_moment()?;
    let sigma = model.params.sigma;
    let b = cfg.lln_length;
    let n = cfg.replicas;

    let mut report = Report::new("lln");
    let mut mass_table = Table::new("mass", &["epsilon", "estimate", "target", "stderr", "z", "rms_residual", "pass"]);
    let mut rms = Vec::new();
    for (k, &eps) in cfg.epsilons.iter().enumerate() {
        progress(opts, || format!("lln mass: epsilon {eps}"));
        let window = Window::new(0.0, b)?;
        let mass = map_replicas(n, stream(cfg.seed, "lln/mass", k), opts.threads, |_, seed| {
            let c = sample(eps, cfg.rho, &model.mu, window, seed)?;
            Ok(c.mass(0.0, b) / b)
        })?;
        let stats = ReplicaStats::from_samples(&mass)?;
        // Poisson identity: Var(mass(0, b)/b) = ε ρ E[r²] / b.
        let stderr = (eps * cfg.rho * r2 / b).sqrt() / (n as f64).sqrt();
        let v = test_mean_with_stderr(stats.mean, sigma, stderr).with_id(format!("lln/mass/eps={eps}"));
        let resid: Vec<f64> = mass.iter().map(|m| (m - sigma) * (m - sigma)).collect();
        let rms_k = (stable_sum(&resid) / n as f64).sqrt();
        mass_table.push(row![eps, stats.mean, sigma, stderr, v.z_or_chi2, rms_k, v.pass]);
        rms.push((eps, rms_k));
        report.verdicts.push(v);
    }

    if rms.iter().all(|&(_, r)| r == 0.0) {
        report.notes.push("mass residual is identically zero; convergence rate is not defined".into());
        report.verdicts.push(interval_verdict("lln/mass_rate".into(), 0.5, 0.5, 0.4, 0.6));
    } else if rms.len() >= 3 {
        let fit = fit_rate(&rms, 0.0)?;
        for e in &fit.excluded {
            report.notes.push(format!("epsilon {e} excluded from the rate fit: zero residual"));
        }
        report.verdicts.push(interval_verdict("lln/mass_rate".into(), fit.fitted_rate, 0.5, 0.4, 0.6));
        report.fits.push(NamedFit { id: "lln/mass_rms_residual".into(), fit });
    } else {
        report.notes.push("fewer than three epsilons; convergence rate not fitted".into());
    }
    report.tables.push(mass_table);
    Ok(report)
}

/// Rod-weighted sums `ε Σ r φ(y)` against `⟨φ⟩ / (1 + σ)`, judged by the
/// spread of a single configuration.
pub fn lln_fields(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Report> {
    let model = cfg.model()?;
    let fns = cfg.functions()?;
    let refs: Vec<&TestFunction> = fns.iter().collect();
    let n = cfg.replicas;
    let centers = fns.iter().map(|f| asymptotic_center(f, &model)).collect::<Result<Vec<_>>>()?;
    let half = cfg.half_width.max(extent(&refs, velocity_cap(&model)) + 1.0);

    let mut report = Report::new("lln");
    let mut field_table = Table::new("field_mean", &["epsilon", "phi_id", "estimate", "target", "sd", "z", "pass"]);
    for (k, &eps) in cfg.epsilons.iter().enumerate() {
        progress(opts, || format!("lln fields: epsilon {eps}"));
        let window = Window::symmetric(half)?;
        let sums = map_replicas(n, stream(cfg.seed, "lln/field", k), opts.threads, |_, seed| {
            let c = sample(eps, cfg.rho, &model.mu, window, seed)?;
            fns.iter().map(|f| raw_static_sum(&c, f)).collect::<Result<Vec<f64>>>()
        })?;
        for (j, f) in fns.iter().enumerate() {
            let col: Vec<f64> = sums.iter().map(|r| r[j]).collect();
            let st = ReplicaStats::from_samples(&col)?;
            // Per-configuration spread: the LLN is a statement about one configuration.
            let sd = st.variance.sqrt();
            let v = test_mean_with_stderr(st.mean, centers[j], sd).with_id(format!("lln/field/{}/eps={eps}", f.id));
            field_table.push(row![eps, f.id.as_str(), st.mean, centers[j], sd, v.z_or_chi2, v.pass]);
            report.verdicts.push(v);
        }
    }
    report.tables.push(field_table);
    Ok(report)
}

fn center_rows(rows: &mut [Vec<f64>], subtract: &[f64]) {
    for r in rows.iter_mut() {
        for (x, c) in r.iter_mut().zip(subtract) {
            *x -= c;
        }
    }
}

fn column_means(rows: &[Vec<f64>]) -> Vec<f64> {
    let k = rows.first().map_or(0, |r| r.len());
    (0..k)
        .map(|j| stable_sum(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()) / rows.len() as f64)
        .collect()
}

/// Empirical covariance of static fields against the limit covariance, plus
/// moment-based normality checks.
pub fn static_clt(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Report> {
    let model = cfg.model()?;
    let fns = cfg.functions()?;
    let refs: Vec<&TestFunction> = fns.iter().collect();
    let gram = covariance_matrix(&refs, &model.params, &model.mu)?;
    let centers = fns.iter().map(|f| asymptotic_center(f, &model)).collect::<Result<Vec<_>>>()?;
    let half = cfg.half_width.max(extent(&refs, velocity_cap(&model)) + 1.0);
    let n = cfg.static_replicas();

    let mut report = Report::new("static_clt");
    let mut cov_table = Table::new(
        "covariance",
        &["epsilon", "phi_i", "phi_j", "empirical", "theoretical", "stderr", "z", "pass"],
    );
    let mut norm_table = Table::new(
        "normality",
        &["epsilon", "phi_id", "mean", "variance", "skewness", "excess_kurtosis", "skew_bound", "kurtosis_bound", "pass"],
    );
    for (k, &eps) in cfg.static_epsilons().iter().enumerate() {
        progress(opts, || format!("static-clt: epsilon {eps}"));
        let window = Window::symmetric(half)?;
        let scale = eps.sqrt();
        let mut rows = map_replicas(n, stream(cfg.seed, "static_clt", k), opts.threads, |_, seed| {
            let c = sample(eps, cfg.rho, &model.mu, window, seed)?;
            fns.iter().map(|f| Ok(raw_static_sum(&c, f)? / scale)).collect::<Result<Vec<f64>>>()
        })?;
        let subtract = match opts.center {
            CenterMode::Empirical => column_means(&rows),
            CenterMode::Asymptotic => centers.iter().map(|c| c / scale).collect(),
        };
        center_rows(&mut rows, &subtract);
        let cov = CovarianceStats::from_rows(&rows)?;
        for i in 0..fns.len() {
            for j in i..fns.len() {
                let (emp, theo, se) = (cov.covariance[i][j], gram[i][j], cov.stderr[i][j]);
                let v = test_mean_with_stderr(emp, theo, se)
                    .with_id(format!("static_clt/cov/{}/{}/eps={eps}", fns[i].id, fns[j].id));
                cov_table.push(row![eps, fns[i].id.as_str(), fns[j].id.as_str(), emp, theo, se, v.z_or_chi2, v.pass]);
                report.verdicts.push(v);
            }
        }
        for (j, f) in fns.iter().enumerate() {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let st = ReplicaStats::from_samples(&col)?;
            if st.variance == 0.0 {
                report.notes.push(format!("{} at epsilon {eps}: field is identically zero, normality not tested", f.id));
                continue;
            }
            let [skew, kurt] = normality(&format!("static_clt/normality/{}/eps={eps}", f.id), &col)?;
            let nf = col.len() as f64;
            let pass = skew.pass && kurt.pass;
            norm_table.push(row![
                eps,
                f.id.as_str(),
                st.mean,
                st.variance,
                skew.statistic,
                kurt.statistic,
                4.0 * (6.0 / nf).sqrt(),
                4.0 * (24.0 / nf).sqrt(),
                pass
            ]);
            report.verdicts.push(skew);
            report.verdicts.push(kurt);
        }
    }
    report.tables.push(cov_table);
    report.tables.push(norm_table);
    Ok(report)
}

/// Effective-velocity drift, pathwise transport of fluctuations, and a
/// finite-difference check of the transport generator.
pub fn euler(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Report> {
    let mut report = euler_drift(cfg, opts)?;
    let fields = euler_fields(cfg, opts)?;
    report.verdicts.extend(fields.verdicts);
    report.tables.extend(fields.tables);
    report.notes.extend(fields.notes);
    Ok(report)
}

/// Mean displacement rate of a tagged rod against the effective velocity.
pub fn euler_drift(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Report> {
    let model = cfg.model()?;
    let cap = velocity_cap(&model);
    let n = cfg.euler_replicas();
    let tags = tag_targets(&model, cfg.velocity_band);

    let mut report = Report::new("euler");
    let mut drift = Table::new("drift", &["epsilon", "t", "velocity", "estimate", "target", "stderr", "z", "pass"]);
    for (k, &eps) in cfg.euler_epsilons().iter().enumerate() {
        for (m, &t) in cfg.euler_times.iter().enumerate() {
            progress(opts, || format!("euler drift: epsilon {eps}, t {t}"));
            for (q, &(v, tagging)) in tags.iter().enumerate() {
                let search = tag_search_length(&model, v, tagging, eps)?;
                let window = Window::new(-2.0 * cap * t - 1.0, search + 2.0 * cap * t + 1.0)?;
                let tag = format!("euler/drift/{q}/{m}");
                let rates = map_replicas(n, stream(cfg.seed, &tag, k), opts.threads, |_, seed| {
                    let c = sample(eps, cfg.rho, &model.mu, window, seed)?;
                    let i = first_tagged(&c, v, tagging, 0.0).ok_or(Error::TooFewTagged { found: 0 })?;
                    let rec = evolve_tagged(&c, &[i], t, &model)?[0];
                    Ok(rec.displacement / t - model.v_eff(c.points()[i].v) + model.v_eff(v))
                })?;
                let st = ReplicaStats::from_samples(&rates)?;
                let target = model.v_eff(v);
                let verdict = test_against(&st, target, TestKind::Mean)?.with_id(format!("euler/drift/v={v}/t={t}/eps={eps}"));
                drift.push(row![eps, t, v, st.mean, target, st.stderr, verdict.z_or_chi2, verdict.pass]);
                report.verdicts.push(verdict);
            }
        }
    }
    report.tables.push(drift);
    Ok(report)
}

/// Same-replica correlation of evolved and transported fields, and the
/// finite-difference generator check on the first test function.
pub fn euler_fields(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Report> {
    let model = cfg.model()?;
    let fns = cfg.functions()?;
    let cap = velocity_cap(&model);
    let n = cfg.euler_replicas();
    let h = cfg.fd_step;

    let mut report = Report::new("euler");
    let mut transport = Table::new(
        "transport",
        &[
            "epsilon",
            "t",
            "phi_id",
            "correlation",
            "threshold",
            "pass",
            "variance_evolved",
            "variance_transported",
            "limit_variance_phi",
            "limit_variance_phi_t",
        ],
    );
    let mut generator = Table::new(
        "generator",
        &["epsilon", "t", "phi_id", "fd_covariance", "generator_covariance", "difference", "stderr", "z", "pass"],
    );

    for (k, &eps) in cfg.euler_epsilons().iter().enumerate() {
        for (m, &t) in cfg.euler_times.iter().enumerate() {
            progress(opts, || format!("euler fields: epsilon {eps}, t {t}"));
            let moved: Vec<TestFunction> = fns.iter().map(|f| transported(f, t, &model)).collect();
            let lead = &fns[0];
            let lead_drift = moved[0].drift_derivative(&model.params)?;
            let mut all: Vec<&TestFunction> = fns.iter().chain(moved.iter()).collect();
            all.push(&lead_drift);
            let half = cfg.half_width.max(field_half_width(extent(&all, cap), t + h, false, &model, eps, cap));
            let window = Window::symmetric(half)?;
            let scale = eps.sqrt();
            let rows = map_replicas(n, stream(cfg.seed, &format!("euler/fields/{m}"), k), opts.threads, |_, seed| {
                let c = sample(eps, cfg.rho, &model.mu, window, seed)?;
                let now = EvolvedState::new(&c, t, &model, false)?;
                let mut out = Vec::with_capacity(2 * fns.len() + 3);
                for (f, ft) in fns.iter().zip(&moved) {
                    out.push(now.sum(f)? / scale);
                    out.push(raw_static_sum(&c, ft)? / scale);
                }
                let plus = EvolvedState::new(&c, t + h, &model, false)?.sum(lead)? / scale;
                let minus = EvolvedState::new(&c, (t - h).max(0.0), &model, false)?.sum(lead)? / scale;
                let step = t + h - (t - h).max(0.0);
                out.push((plus - minus) / step);
                out.push(raw_static_sum(&c, &lead_drift)? / scale);
                out.push(raw_static_sum(&c, lead)? / scale);
                Ok(out)
            })?;
            for (j, f) in fns.iter().enumerate() {
                let a: Vec<f64> = rows.iter().map(|r| r[2 * j]).collect();
                let b: Vec<f64> = rows.iter().map(|r| r[2 * j + 1]).collect();
                let threshold = 0.95;
                let (corr, pass) = match correlation(&a, &b)? {
                    Some(r) => (r, r > threshold),
                    None => (0.0, false),
                };
                let verdict = interval_verdict(format!("euler/transport/{}/t={t}/eps={eps}", f.id), corr, 1.0, threshold, 1.0);
                let limit = covariance_matrix(&[f, &moved[j]], &model.params, &model.mu)?;
                transport.push(row![
                    eps,
                    t,
                    f.id.as_str(),
                    corr,
                    threshold,
                    pass,
                    ReplicaStats::from_samples(&a)?.variance,
                    ReplicaStats::from_samples(&b)?.variance,
                    limit[0][0],
                    limit[1][1]
                ]);
                report.verdicts.push(Verdict { pass, ..verdict });
            }
            let base = 2 * fns.len();
            let psi: Vec<f64> = rows.iter().map(|r| r[base + 2]).collect();
            let psi_mean = stable_sum(&psi) / psi.len() as f64;
            let fd_cov: Vec<f64> = rows.iter().map(|r| r[base] * (r[base + 2] - psi_mean)).collect();
            let gen_cov: Vec<f64> = rows.iter().map(|r| r[base + 1] * (r[base + 2] - psi_mean)).collect();
            let diff: Vec<f64> = fd_cov.iter().zip(&gen_cov).map(|(a, b)| a - b).collect();
            let st = ReplicaStats::from_samples(&diff)?;
            let verdict = test_against(&st, 0.0, TestKind::Mean)?.with_id(format!("euler/generator/{}/t={t}/eps={eps}", lead.id));
            let denom = (n as f64 - 1.0) / n as f64;
            generator.push(row![
                eps,
                t,
                lead.id.as_str(),
                stable_sum(&fd_cov) / n as f64 / denom,
                stable_sum(&gen_cov) / n as f64 / denom,
                st.mean,
                st.stderr,
                verdict.z_or_chi2,
                verdict.pass
            ]);
            report.verdicts.push(verdict);
        }
    }
    report.tables.push(transport);
    report.tables.push(generator);
    Ok(report)
}

/// Window holding the crossing ranges of a tagged pair near the origin.
fn pair_window(model: &Model, v: f64, tagging: Tagging, eps: f64, micro: f64, separation: f64) -> Result<Window> {
    let cap = velocity_cap(model);
    let search = tag_search_length(model, v, tagging, eps)?;
    let lo = ((v - cap) * micro).min(0.0) - 1.0;
    let hi = separation + 2.0 * search + ((v + cap) * micro).max(0.0) + 1.0;
    Window::new(lo, hi)
}

/// Recentered tagged displacements at diffusive times, their pair correlation
/// across epsilons, and the diffusive field variance.
pub fn diffusive(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Report> {
    let mut report = diffusive_tagged(cfg, opts)?;
    let fields = diffusive_fields(cfg, opts)?;
    report.verdicts.extend(fields.verdicts);
    report.tables.extend(fields.tables);
    report.notes.extend(fields.notes);
    Ok(report)
}

/// Displacement variance of a tagged rod and the correlation of a tagged pair.
pub fn diffusive_tagged(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Report> {
    let model = cfg.model()?;
    let tags = tag_targets(&model, cfg.velocity_band);

    let mut report = Report::new("diffusive");
    let mut tagged = Table::new(
        "tagged",
        &[
            "epsilon",
            "t",
            "velocity",
            "replicas",
            "variance",
            "diffusivity_target",
            "flux_variance_exact",
            "ci_lo",
            "ci_hi",
            "pass",
            "pair_correlation",
        ],
    );

    for (m, &t) in cfg.diffusive_times.iter().enumerate() {
        for (q, &(v, tagging)) in tags.iter().enumerate() {
            let mut series: Vec<(f64, Option<f64>)> = Vec::new();
            for (k, &eps) in cfg.epsilons.iter().enumerate() {
                let n = cfg.tagged_replicas(k);
                progress(opts, || format!("diffusive: t {t}, velocity {v}, epsilon {eps}, {n} replicas"));
                let micro = t / eps;
                let window = pair_window(&model, v, tagging, eps, micro, cfg.pair_separation)?;
                let tag = format!("diffusive/tagged/{m}/{q}");
                let pairs = map_replicas(n, stream(cfg.seed, &tag, k), opts.threads, |_, seed| {
                    let c = sample(eps, cfg.rho, &model.mu, window, seed)?;
                    let pair = tagged_pair(&c, v, tagging, 0.0, cfg.pair_separation)?;
                    pair_displacements(&c, pair, t, &model)
                })?;
                let rigid = rigid_translation_stats(&pairs)?;
                let first: Vec<f64> = pairs.iter().map(|p| p.0).collect();
                let st = ReplicaStats::from_samples(&first)?;
                let target = diffusivity(v, cfg.rho, &model.mu)? * t;
                let exact = flux_variance_exact(cfg.rho, &model.mu, v, micro, eps)?;
                let by_d = test_against(&st, target, TestKind::Variance)?
                    .with_id(format!("diffusive/variance/v={v}/t={t}/eps={eps}"));
                let by_flux = test_against(&st, exact, TestKind::Variance)?
                    .with_id(format!("diffusive/flux_variance/v={v}/t={t}/eps={eps}"));
                let (lo, hi) = crate::stats::variance_interval(st.variance, st.n)?;
                let corr_cell = rigid.pair_correlation.map_or(Cell::Text(String::new()), Cell::Num);
                let mut r = row![eps, t, v, n, st.variance, target, exact, lo, hi, by_d.pass && by_flux.pass];
                r.push(corr_cell);
                tagged.push(r);
                report.verdicts.push(by_d);
                report.verdicts.push(by_flux);
                series.push((eps, rigid.pair_correlation));
            }
            let corrs: Vec<f64> = series.iter().map(|s| s.1.unwrap_or(f64::NAN)).collect();
            let defined = corrs.iter().all(|c| c.is_finite());
            if series.len() >= 2 {
                let increases = defined && corrs.windows(2).all(|w| w[1] > w[0]);
                let steps = corrs.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
                report.verdicts.push(Verdict::threshold(
                    format!("diffusive/pair_monotone/v={v}/t={t}"),
                    if steps.is_finite() { steps } else { 0.0 },
                    0.0,
                    0.0,
                    increases,
                ));
            }
            if let Some(&(eps, c)) = series.last() {
                let c = c.unwrap_or(0.0);
                report.verdicts.push(interval_verdict(format!("diffusive/pair_correlation/v={v}/t={t}/eps={eps}"), c, 1.0, 0.9, 1.0));
            }
        }
    }
    report.tables.push(tagged);
    Ok(report)
}

/// Variance of the recentered diffusive field against the rigid-shift oracle,
/// one velocity class at a time.
pub fn diffusive_fields(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Report> {
    let model = cfg.model()?;
    let fns = cfg.functions()?;
    let cap = velocity_cap(&model);
    let mut report = Report::new("diffusive");
    let mut field = Table::new("field", &["epsilon", "t", "phi_id", "variance", "oracle", "ci_lo", "ci_hi", "pass"]);

    let atoms = model.mu.velocity_atoms();
    let all_atomic = model.mu.components().iter().all(|c| c.weight == 0.0 || c.velocity.atom().is_some());
    if !all_atomic {
        report.notes.push("diffusive field variance needs a velocity law made of atoms; skipped".into());
    } else {
        let n = cfg.field_replicas();
        for (k, &eps) in cfg.diffusive_field_epsilons().iter().enumerate() {
            for (m, &t) in cfg.diffusive_times.iter().enumerate() {
                for (q, &v) in atoms.iter().enumerate() {
                    let phi = fns[0].restricted_to_class(&atoms, v);
                    progress(opts, || format!("diffusive field: epsilon {eps}, t {t}, class {v}"));
                    let oracle = diffusive_variance_oracle(&phi, t, v, &model)?;
                    let micro = t / eps;
                    let half = cfg.half_width.max(field_half_width(extent(&[&phi], cap), micro, true, &model, eps, cap));
                    let window = Window::symmetric(half)?;
                    let tag = format!("diffusive/field/{m}/{q}");
                    let vals = map_replicas(n, stream(cfg.seed, &tag, k), opts.threads, |_, seed| {
                        let c = sample(eps, cfg.rho, &model.mu, window, seed)?;
                        Ok(EvolvedState::new(&c, micro, &model, true)?.sum(&phi)? / eps.sqrt())
                    })?;
                    let st = ReplicaStats::from_samples(&vals)?;
                    let verdict = test_against(&st, oracle, TestKind::Variance)?
                        .with_id(format!("diffusive/field/{}/t={t}/eps={eps}", phi.id));
                    let (lo, hi) = crate::stats::variance_interval(st.variance, st.n)?;
                    field.push(row![eps, t, phi.id.as_str(), st.variance, oracle, lo, hi, verdict.pass]);
                    report.verdicts.push(verdict);
                }
            }
        }
    }
    report.tables.push(field);
    Ok(report)
}

struct FluxCase {
    queries: usize,
    mismatches: usize,
    interval_form_gap: f64,
}

/// Flux through open-interval indicators, summed in floating point.
fn flux_interval_form(config: &Configuration, q: &FluxQuery) -> f64 {
    let mut s = 0.0;
    for p in config.points() {
        if p.v < q.v && q.x < p.x && p.x < q.x + (q.v - p.v) * q.t {
            s += config.epsilon() * p.r;
        } else if p.v > q.v && q.x + (q.v - p.v) * q.t < p.x && p.x < q.x {
            s -= config.epsilon() * p.r;
        }
    }
    s
}

/// Exact-equivalence suites: batch flux against enumeration, and the
/// closed forms against their integral forms.
pub fn oracle(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Report> {
    let model = cfg.model()?;
    let cap = velocity_cap(&model);
    let mut report = Report::new("oracle");
    let mut table = Table::new("checks", &["check", "cases", "failures", "max_abs_difference", "pass"]);

    progress(opts, || "oracle: flux kernels".to_string());
    const CONFIGS: usize = 1000;
    const QUERIES: usize = 10;
    let t_max = 3.0;
    let window = Window::symmetric(5.0 + 2.0 * cap * t_max + 1.0)?;
    let cases = map_replicas(CONFIGS, stream(cfg.seed, "oracle/flux", 0), opts.threads, |_, seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(0..=50);
        let points: Vec<RodPoint> = (0..n)
            .map(|_| {
                let (v, r) = model.mu.sample_mark(&mut rng);
                RodPoint { x: rng.random_range(-5.0..5.0), v: v.clamp(-cap, cap), r }
            })
            .collect();
        let c = Configuration::from_points(points, 1.0, cfg.rho, window)?.with_velocity_cap(cap);
        let t = rng.random_range(0.0..t_max);
        let queries: Vec<FluxQuery> = (0..QUERIES)
            .map(|_| {
                let (v, _) = model.mu.sample_mark(&mut rng);
                FluxQuery { x: rng.random_range(-5.0..5.0), v: v.clamp(-cap, cap), t }
            })
            .collect();
        let batch = flux_batch(&c, &queries)?;
        let mut mismatches = 0;
        let mut gap = 0.0f64;
        for (q, b) in queries.iter().zip(&batch) {
            let naive = flux_naive(&c, q)?;
            if naive.to_bits() != b.to_bits() {
                mismatches += 1;
            }
            gap = gap.max((naive - flux_interval_form(&c, q)).abs());
        }
        Ok(FluxCase { queries: queries.len(), mismatches, interval_form_gap: gap })
    })?;
    let total: usize = cases.iter().map(|c| c.queries).sum();
    let mismatches: usize = cases.iter().map(|c| c.mismatches).sum();
    let gap = cases.iter().map(|c| c.interval_form_gap).fold(0.0, f64::max);
    let pass = mismatches == 0;
    table.push(row!["flux_batch_equals_naive", total, mismatches, 0.0, pass]);
    report.verdicts.push(interval_verdict("oracle/flux_batch_equals_naive".into(), mismatches as f64, 0.0, 0.0, 0.0));
    let pass = gap <= 1e-12;
    table.push(row!["flux_crossing_vs_interval_form", total, usize::from(!pass), gap, pass]);
    report.verdicts.push(interval_verdict("oracle/flux_crossing_vs_interval_form".into(), gap, 0.0, 0.0, 1e-12));

    progress(opts, || "oracle: closed forms".to_string());
    let mut rng = ChaCha8Rng::seed_from_u64(stream(cfg.seed, "oracle/formulas", 0));
    let (mut veff_gap, mut var_gap) = (0.0f64, 0.0f64);
    let mut cases = 0;
    let mut check = |model: &Model, v: f64, t: f64, eps: f64| -> Result<()> {
        let closed = model.v_eff(v);
        let integral = v_eff_integral(v, model.rho, &model.mu)?;
        veff_gap = veff_gap.max((closed - integral).abs());
        let exact = flux_variance_exact(model.rho, &model.mu, v, t, eps)?;
        let via_d = eps * t * diffusivity(v, model.rho, &model.mu)?;
        var_gap = var_gap.max((exact - via_d).abs());
        cases += 1;
        Ok(())
    };
    for _ in 0..100 {
        let random = Model::new(rng.random_range(0.2..2.0), random_measure(&mut rng))?;
        let (v, t, eps) = (rng.random_range(-2.0..2.0), rng.random_range(0.0..50.0), rng.random_range(0.001..1.0));
        check(&random, v, t, eps)?;
    }
    for (v, _) in tag_targets(&model, cfg.velocity_band) {
        for &eps in &cfg.epsilons {
            for &t in &cfg.diffusive_times {
                check(&model, v, t / eps, eps)?;
            }
        }
    }
    for (name, gap) in [("v_eff_closed_vs_integral", veff_gap), ("flux_variance_two_paths", var_gap)] {
        let pass = gap <= 1e-10;
        table.push(row![name, cases, usize::from(!pass), gap, pass]);
        report.verdicts.push(interval_verdict(format!("oracle/{name}"), gap, 0.0, 0.0, 1e-10));
    }
    report.tables.push(table);
    Ok(report)
}

/// One configuration at the first configured epsilon, for inspection.
pub fn sample_dump(cfg: &ExperimentConfig) -> Result<Configuration> {
    let model = cfg.model()?;
    let eps = cfg.epsilons[0];
    sample(eps, cfg.rho, &model.mu, Window::symmetric(cfg.half_width)?, stream(cfg.seed, "sample", 0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_distinct() {
        let a = stream(1, "lln/mass", 0);
        assert_ne!(a, stream(1, "lln/field", 0));
        assert_ne!(a, stream(1, "lln/mass", 1));
        assert_ne!(a, stream(2, "lln/mass", 0));
        assert_eq!(a, stream(1, "lln/mass", 0));
    }

    #[test]
    fn tag_targets_cover_atoms_and_means() {
        let model = Model::benchmark();
        let tags = tag_targets(&model, 0.05);
        assert_eq!(tags, vec![(1.0, Tagging::Exact), (-1.0, Tagging::Exact)]);
        let mixed = Model::new(
            1.0,
            crate::measures::VelocityLengthMeasure::new(vec![
                crate::measures::Component {
                    weight: 0.5,
                    velocity: crate::measures::DistSpec::Uniform { lo: 0.0, hi: 2.0 },
                    length: crate::measures::DistSpec::Atom { value: 1.0 },
                },
                crate::measures::Component {
                    weight: 0.5,
                    velocity: crate::measures::DistSpec::Atom { value: -1.0 },
                    length: crate::measures::DistSpec::Atom { value: 1.0 },
                },
            ])
            .unwrap(),
        )
        .unwrap();
        assert_eq!(tag_targets(&mixed, 0.05), vec![(1.0, Tagging::Band(0.05)), (-1.0, Tagging::Exact)]);
    }

    #[test]
    fn cells_format_plainly() {
        let cells = row![0.1, 3usize, "x", true];
        let s: Vec<String> = cells.iter().map(|c| c.to_string()).collect();
        assert_eq!(s, ["0.1", "3", "x", "true"]);
    }
}
