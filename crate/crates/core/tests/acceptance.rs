//! End-to-end acceptance run: nine criteria, each printed as one PASS/FAIL
//! line with its runtime against a budget. Runs with `harness = false` so the
//! criteria execute one after another and their timings are not distorted.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use hard_rods::cli::config::ExperimentConfig;
use hard_rods::cli::experiments::{self, Report, RunOptions};
use hard_rods::stats::Verdict;

const BENCHMARK: &str = include_str!("../../../configs/benchmark.toml");

struct Outcome {
    id: u32,
    title: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
    budget: Duration,
}

impl Outcome {
    fn line(&self) -> String {
        let ok = self.pass && self.elapsed <= self.budget;
        format!(
            "criterion {} [{}] {}: {} ({:.1} s of {} s)",
            self.id,
            if ok { "PASS" } else { "FAIL" },
            self.title,
            self.detail,
            self.elapsed.as_secs_f64(),
            self.budget.as_secs()
        )
    }
}

fn benchmark() -> ExperimentConfig {
    ExperimentConfig::parse(BENCHMARK).expect("shipped benchmark parses")
}

fn opts() -> RunOptions {
    RunOptions { progress: false, ..RunOptions::default() }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn selected<'a>(report: &'a Report, prefix: &str) -> Vec<&'a Verdict> {
    report.verdicts.iter().filter(|v| v.test_id.starts_with(prefix)).collect()
}

fn summarize(verdicts: &[&Verdict]) -> (bool, String) {
    let pass = !verdicts.is_empty() && verdicts.iter().all(|v| v.pass);
    let failed: Vec<String> = verdicts
        .iter()
        .filter(|v| !v.pass)
        .map(|v| format!("{} = {:.4} (target {:.4})", v.test_id, v.statistic, v.target))
        .collect();
    let detail = if failed.is_empty() {
        format!("{} checks passed", verdicts.len())
    } else {
        format!("{} of {} checks failed: {}", failed.len(), verdicts.len(), failed.join("; "))
    };
    (pass, detail)
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn oracle_criteria() -> [Outcome; 2] {
    let (report, elapsed) = timed(|| experiments::oracle(&benchmark(), &opts()).expect("oracle run"));
    let table = report.table("checks").expect("checks table");
    let cases = |name: &str| table.rows.iter().find(|r| r[0].to_string() == name).map(|r| r[1].to_string()).unwrap();
    let flux = report.verdict("oracle/flux_batch_equals_naive").unwrap();
    let veff = report.verdict("oracle/v_eff_closed_vs_integral").unwrap();
    let var = report.verdict("oracle/flux_variance_two_paths").unwrap();
    [
        Outcome {
            id: 1,
            title: "batch flux equals enumeration",
            pass: flux.pass,
            detail: format!("{} mismatches in {} queries", flux.statistic, cases("flux_batch_equals_naive")),
            elapsed,
            budget: secs(10),
        },
        Outcome {
            id: 2,
            title: "closed forms match integral forms",
            pass: veff.pass && var.pass,
            detail: format!(
                "max |v_eff gap| {:.2e}, max |flux variance gap| {:.2e} over {} cases",
                veff.statistic,
                var.statistic,
                cases("v_eff_closed_vs_integral")
            ),
            elapsed,
            budget: secs(10),
        },
    ]
}

fn lln_criterion() -> Outcome {
    let (report, elapsed) = timed(|| experiments::lln_mass(&benchmark(), &opts()).expect("lln run"));
    let mass = report.verdict("lln/mass/eps=0.001").expect("mass verdict");
    let rate = report.verdict("lln/mass_rate").expect("rate verdict");
    Outcome {
        id: 3,
        title: "mass density law of large numbers",
        pass: mass.pass && rate.pass,
        detail: format!(
            "mass(0,5)/5 = {:.5} (z = {:.2}) at epsilon 1e-3, fitted rate {:.3}",
            mass.statistic, mass.z_or_chi2, rate.statistic
        ),
        elapsed,
        budget: secs(60),
    }
}

fn static_criterion() -> Outcome {
    let mut cfg = benchmark();
    cfg.static_clt.epsilons = Some(vec![0.01]);
    let (report, elapsed) = timed(|| experiments::static_clt(&cfg, &opts()).expect("static run"));
    let (pass, detail) = summarize(&selected(&report, "static_clt/"));
    Outcome { id: 4, title: "static field covariance and normality", pass, detail, elapsed, budget: secs(300) }
}

fn drift_criterion() -> Outcome {
    let mut cfg = benchmark();
    cfg.euler.epsilons = Some(vec![0.01]);
    cfg.euler_times = vec![1.0];
    let (report, elapsed) = timed(|| experiments::euler_drift(&cfg, &opts()).expect("drift run"));
    let (pass, detail) = summarize(&selected(&report, "euler/drift/"));
    Outcome { id: 5, title: "tagged drift at the effective velocity", pass, detail, elapsed, budget: secs(300) }
}

fn transport_criterion() -> Outcome {
    let mut cfg = benchmark();
    cfg.euler.epsilons = Some(vec![0.01]);
    cfg.euler_times = vec![0.5];
    let (report, elapsed) = timed(|| experiments::euler_fields(&cfg, &opts()).expect("transport run"));
    let (pass, detail) = summarize(&selected(&report, "euler/transport/"));
    Outcome { id: 6, title: "same-replica transport correlation", pass, detail, elapsed, budget: secs(300) }
}

fn variance_criterion() -> Outcome {
    let mut cfg = benchmark();
    cfg.epsilons = vec![0.01];
    cfg.diffusive.tagged_replicas = Some(vec![10_000]);
    let (report, elapsed) = timed(|| experiments::diffusive_tagged(&cfg, &opts()).expect("diffusive run"));
    let variance: Vec<&Verdict> = report
        .verdicts
        .iter()
        .filter(|v| v.test_id.starts_with("diffusive/variance/") || v.test_id.starts_with("diffusive/flux_variance/"))
        .collect();
    let (pass, detail) = summarize(&variance);
    let table = report.table("tagged").expect("tagged table");
    let values: Vec<String> = table.rows.iter().map(|r| format!("v={}: {}", r[2], r[4])).collect();
    Outcome {
        id: 7,
        title: "recentered displacement variance",
        pass,
        detail: format!("{detail}; variances {}", values.join(", ")),
        elapsed,
        budget: secs(600),
    }
}

fn pair_criterion() -> Outcome {
    let cfg = benchmark();
    let (report, elapsed) = timed(|| experiments::diffusive_tagged(&cfg, &opts()).expect("diffusive run"));
    let pair: Vec<&Verdict> = report
        .verdicts
        .iter()
        .filter(|v| v.test_id.starts_with("diffusive/pair_monotone/") || v.test_id.starts_with("diffusive/pair_correlation/"))
        .collect();
    let (pass, detail) = summarize(&pair);
    let table = report.table("tagged").expect("tagged table");
    let corr: Vec<String> = table.rows.iter().map(|r| format!("v={} eps={}: {}", r[2], r[0], r[10])).collect();
    Outcome {
        id: 8,
        title: "pair correlation grows toward one",
        pass,
        detail: format!("{detail}; correlations {}", corr.join(", ")),
        elapsed,
        budget: secs(1200),
    }
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .expect("output directory")
        .map(|e| {
            let path = e.expect("entry").path();
            (path.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&path).expect("read output"))
        })
        .collect();
    files.sort();
    files
}

fn determinism_criterion() -> Outcome {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml");
    let root = tempfile::tempdir().expect("temp dir");
    let ((pass, detail), elapsed) = timed(|| {
        let mut runs = Vec::new();
        for (name, threads) in [("a", "1"), ("b", "4"), ("c", "1")] {
            let cwd = root.path().join(name);
            fs::create_dir_all(&cwd).unwrap();
            let status = Command::new(env!("CARGO_BIN_EXE_hard-rods"))
                .args(["all", "--quiet", "--out", "out", "--threads", threads, "--config"])
                .arg(&config)
                .current_dir(&cwd)
                .output()
                .expect("run binary");
            runs.push((status.status.code(), read_dir_sorted(&cwd.join("out"))));
        }
        let files = runs[0].1.len();
        let same = runs.windows(2).all(|w| w[0] == w[1]);
        let codes_ok = runs.iter().all(|r| matches!(r.0, Some(0) | Some(1)));
        (same && codes_ok && files > 0, format!("{files} files compared across 1, 4 and 1 threads"))
    });
    Outcome { id: 9, title: "byte-identical output on rerun", pass, detail, elapsed, budget: secs(120) }
}

fn main() {
    // `cargo test -- --list` and filters are passed through by cargo; honor the listing request.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut outcomes = Vec::new();
    let mut report = |o: Outcome| {
        println!("{}", o.line());
        outcomes.push(o);
    };
    for o in oracle_criteria() {
        report(o);
    }
    report(lln_criterion());
    report(static_criterion());
    report(drift_criterion());
    report(transport_criterion());
    report(variance_criterion());
    report(pair_criterion());
    report(determinism_criterion());
    let failed: Vec<u32> = outcomes.iter().filter(|o| !(o.pass && o.elapsed <= o.budget)).map(|o| o.id).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", outcomes.len());
    } else {
        println!("acceptance: criteria {failed:?} failed");
        std::process::exit(1);
    }
}
