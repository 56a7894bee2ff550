//! Experiment configuration file (TOML) and its validation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{TestFunction, TestFunctionSpec};
use crate::measures::{Model, VelocityLengthMeasure};

fn default_lln_length() -> f64 {
    5.0
}

fn default_clt_max_epsilon() -> f64 {
    0.01
}

fn default_band() -> f64 {
    crate::fields::DEFAULT_BAND
}

fn default_separation() -> f64 {
    2.0
}

fn default_fd_step() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub replicas: usize,
    pub out: String,
    pub rho: f64,
    /// Strictly decreasing.
    pub epsilons: Vec<f64>,
    /// Half-width `L` of the core window.
    pub half_width: f64,
    pub euler_times: Vec<f64>,
    pub diffusive_times: Vec<f64>,
    /// Mark measure as a list of weighted components.
    pub measure: VelocityLengthMeasure,
    pub test_functions: Vec<TestFunctionSpec>,
    /// Right end `b` of the mass window `(0, b]` in the density check.
    #[serde(default = "default_lln_length")]
    pub lln_length: f64,
    /// Fluctuation tests run only at epsilons at or below this value.
    #[serde(default = "default_clt_max_epsilon")]
    pub clt_max_epsilon: f64,
    /// Velocity band half-width for tagging under continuous velocity laws.
    #[serde(default = "default_band")]
    pub velocity_band: f64,
    /// Initial distance between the two tagged rods of the pair test.
    #[serde(default = "default_separation")]
    pub pair_separation: f64,
    /// Time step of the finite-difference check of the transport generator.
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    #[serde(default)]
    pub static_clt: SectionOverrides,
    #[serde(default)]
    pub euler: SectionOverrides,
    #[serde(default)]
    pub diffusive: DiffusiveOverrides,
}

/// Per-command replica count and epsilons; top-level values apply when absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionOverrides {
    pub replicas: Option<usize>,
    pub epsilons: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusiveOverrides {
    /// Replicas for the tagged-pair series, one entry per top-level epsilon.
    pub tagged_replicas: Option<Vec<usize>>,
    /// Replicas for the diffusive-field variance test.
    pub field_replicas: Option<usize>,
    /// Epsilons at which the diffusive field itself is evaluated.
    pub field_epsilons: Option<Vec<f64>>,
}

/// Command-line values that replace fields of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replicas: Option<usize>,
    pub out: Option<String>,
    pub epsilons: Option<Vec<f64>>,
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {x}")))
    }
}

fn decreasing(name: &str, xs: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::InvalidParameter(format!("{name} must not be empty")));
    }
    for &x in xs {
        positive(name, x)?;
    }
    if xs.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter(format!("{name} must be strictly decreasing")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::InvalidParameter(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidParameter(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn apply(mut self, o: &Overrides) -> Result<Self> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(n) = o.replicas {
            self.replicas = n;
            self.static_clt.replicas = None;
            self.euler.replicas = None;
            self.diffusive.tagged_replicas = None;
            self.diffusive.field_replicas = None;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(e) = &o.epsilons {
            self.epsilons = e.clone();
            self.static_clt.epsilons = None;
            self.euler.epsilons = None;
            self.diffusive.tagged_replicas = self.diffusive.tagged_replicas.take().filter(|r| r.len() == e.len());
            self.diffusive.field_epsilons = None;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicas < crate::stats::MIN_TEST_SAMPLES {
            return Err(Error::InvalidParameter(format!(
                "replicas must be at least {}",
                crate::stats::MIN_TEST_SAMPLES
            )));
        }
        let tagged = self.diffusive.tagged_replicas.clone().unwrap_or_default();
        let single = [self.static_clt.replicas, self.euler.replicas, self.diffusive.field_replicas];
        for n in single.into_iter().flatten().chain(tagged.iter().copied()) {
            if n < crate::stats::MIN_TEST_SAMPLES {
                return Err(Error::InvalidParameter(format!(
                    "replica overrides must be at least {}",
                    crate::stats::MIN_TEST_SAMPLES
                )));
            }
        }
        positive("rho", self.rho)?;
        positive("half_width", self.half_width)?;
        positive("lln_length", self.lln_length)?;
        positive("clt_max_epsilon", self.clt_max_epsilon)?;
        positive("pair_separation", self.pair_separation)?;
        positive("fd_step", self.fd_step)?;
        if !(self.velocity_band.is_finite() && self.velocity_band >= 0.0) {
            return Err(Error::InvalidParameter("velocity_band must be nonnegative".into()));
        }
        decreasing("epsilons", &self.epsilons)?;
        if self.epsilons.iter().any(|&e| e > 1.0) {
            return Err(Error::InvalidParameter("epsilons must lie in (0, 1]".into()));
        }
        if let Some(t) = &self.diffusive.tagged_replicas {
            if t.len() != self.epsilons.len() {
                return Err(Error::InvalidParameter(
                    "diffusive.tagged_replicas needs one entry per epsilon".into(),
                ));
            }
        }
        for (name, list) in [
            ("static_clt.epsilons", &self.static_clt.epsilons),
            ("euler.epsilons", &self.euler.epsilons),
            ("diffusive.field_epsilons", &self.diffusive.field_epsilons),
        ] {
            if let Some(f) = list {
                decreasing(name, f)?;
                if f.iter().any(|&e| e > 1.0) {
                    return Err(Error::InvalidParameter(format!("{name} must lie in (0, 1]")));
                }
            }
        }
        for (name, ts) in [("euler_times", &self.euler_times), ("diffusive_times", &self.diffusive_times)] {
            if ts.is_empty() {
                return Err(Error::InvalidParameter(format!("{name} must not be empty")));
            }
            for &t in ts {
                positive(name, t)?;
            }
        }
        if self.lln_length > self.half_width {
            return Err(Error::InvalidParameter("lln_length must not exceed half_width".into()));
        }
        if self.test_functions.is_empty() {
            return Err(Error::InvalidParameter("at least one test function is required".into()));
        }
        let mut ids: Vec<&str> = self.test_functions.iter().map(|f| f.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter("test function ids must be unique".into()));
        }
        for f in &self.test_functions {
            f.build()?;
        }
        Ok(())
    }

    pub fn model(&self) -> Result<Model> {
        Model::new(self.rho, self.measure.clone())
    }

    pub fn functions(&self) -> Result<Vec<TestFunction>> {
        self.test_functions.iter().map(|f| f.build()).collect()
    }

    /// Epsilons at which fluctuation tests run.
    pub fn clt_epsilons(&self) -> Vec<f64> {
        self.epsilons.iter().copied().filter(|&e| e <= self.clt_max_epsilon).collect()
    }

    pub fn static_replicas(&self) -> usize {
        self.static_clt.replicas.unwrap_or(self.replicas)
    }

    pub fn static_epsilons(&self) -> Vec<f64> {
        self.static_clt.epsilons.clone().unwrap_or_else(|| self.clt_epsilons())
    }

    pub fn euler_replicas(&self) -> usize {
        self.euler.replicas.unwrap_or(self.replicas)
    }

    pub fn euler_epsilons(&self) -> Vec<f64> {
        self.euler.epsilons.clone().unwrap_or_else(|| self.clt_epsilons())
    }

    /// Tagged-pair replicas at the `k`-th epsilon.
    pub fn tagged_replicas(&self, k: usize) -> usize {
        self.diffusive.tagged_replicas.as_ref().map_or(self.replicas, |r| r[k])
    }

    pub fn field_replicas(&self) -> usize {
        self.diffusive.field_replicas.unwrap_or(self.replicas)
    }

    pub fn diffusive_field_epsilons(&self) -> Vec<f64> {
        self.diffusive.field_epsilons.clone().unwrap_or_else(|| self.clt_epsilons())
    }

    /// Resolved configuration as compact JSON, embedded in every artifact.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("configuration serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BENCHMARK: &str = include_str!("../../../../configs/benchmark.toml");

    #[test]
    fn shipped_benchmark_parses() {
        let c = ExperimentConfig::parse(BENCHMARK).unwrap();
        let m = c.model().unwrap();
        assert_eq!((m.params.sigma, m.params.pi, m.params.rho_bar), (1.0, 0.0, 0.5));
        assert_eq!(c.epsilons, vec![0.1, 0.01, 0.001]);
        assert_eq!(c.clt_epsilons(), vec![0.01, 0.001]);
        assert_eq!(c.replicas, 10_000);
    }

    #[test]
    fn schema_violations_are_rejected() {
        let bad = [
            BENCHMARK.replace("epsilons = [0.1, 0.01, 0.001]", "epsilons = [0.01, 0.1]"),
            BENCHMARK.replace("rho = 1.0", "rho = -1.0"),
            BENCHMARK.replace("seed = ", "unknown_key = 1\nseed = "),
            BENCHMARK.replace("half_width = 10.0", "half_width = 1.0"),
        ];
        for text in bad {
            assert!(ExperimentConfig::parse(&text).is_err());
        }
    }

    #[test]
    fn overrides_replace_scalars() {
        let c = ExperimentConfig::parse(BENCHMARK).unwrap();
        let o = Overrides { seed: Some(9), replicas: Some(100), out: Some("x".into()), epsilons: Some(vec![0.05]) };
        let c = c.apply(&o).unwrap();
        assert_eq!((c.seed, c.replicas, c.out.as_str(), c.epsilons.clone()), (9, 100, "x", vec![0.05]));
        assert_eq!(c.tagged_replicas(0), 100);
        let err = c.apply(&Overrides { replicas: Some(3), ..Default::default() });
        assert!(err.is_err());
    }
}
