//! Experiment configuration: a JSON document, overridden field by field from
//! the command line, then resolved against per-experiment defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mtm_core::discrete::ENUMERATION_LIMIT;
use mtm_core::samplers::KernelKind;

use crate::error::CliError;
use crate::output::Format;

pub const MAX_STEPS: u64 = 100_000_000;
pub const MAX_SAMPLES: usize = 100_000_000;
pub const MAX_DIM: usize = 65_536;
pub const MAX_TRIES: usize = 100_000;
pub const MAX_SPECS: usize = 100_000;
pub const MAX_MC_DRAWS: u64 = 1_000_000_000;
/// Ceiling on `sum over cells of (transitions) * (weight evaluations per step) * d`.
pub const WORK_LIMIT: f64 = 1e12;
/// Shortest chain the autocorrelation proxy accepts.
pub const MIN_AUTOCORR_STEPS: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Sample,
    Moments,
    Bounds,
    Oracle,
    Scaling,
    GbDecay,
    MtmVsIdeal,
}

impl Experiment {
    pub fn as_str(&self) -> &'static str {
        match self {
            Experiment::Sample => "sample",
            Experiment::Moments => "moments",
            Experiment::Bounds => "bounds",
            Experiment::Oracle => "oracle",
            Experiment::Scaling => "scaling",
            Experiment::GbDecay => "gb-decay",
            Experiment::MtmVsIdeal => "mtm-vs-ideal",
        }
    }
}

/// Every field is optional; unset fields take the experiment's default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Kernel for `sample`: mh, ideal, semi-ideal, mtm, lazy-mtm.
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Sets `sigma = zeta * d^(-1/4)` when `sigma` is not given.
    #[arg(long)]
    pub zeta: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
    /// Number of tries.
    #[arg(long)]
    pub n: Option<usize>,
    /// Inner tuples `M` of the semi-ideal estimator.
    #[arg(long)]
    pub inner_samples: Option<usize>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub burnin: Option<u64>,
    #[arg(long)]
    pub chains: Option<usize>,
    /// Stationary replicas for one-step estimators.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub d_grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub radii: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub k_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub s_grid: Option<Vec<f64>>,
    /// Random finite specs checked by `oracle`.
    #[arg(long)]
    pub specs: Option<usize>,
    #[arg(long)]
    pub m_max: Option<usize>,
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long)]
    pub random_functions: Option<usize>,
    #[arg(long)]
    pub mc_draws: Option<u64>,
    /// `pi(A)` of the set used by the conductance estimate.
    #[arg(long)]
    pub tail_mass: Option<f64>,
    #[arg(long)]
    pub traceable_k: Option<bool>,
    /// Random-walk scale `l` in `sigma = l * d^(-1/2)` for MH in `scaling`.
    #[arg(long)]
    pub mh_scale: Option<f64>,
    /// Finite-chain spec (JSON) checked by `oracle` in place of random ones.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Fields set in `over` replace those in `self`.
    pub fn overridden_by(self, over: &ExperimentConfig) -> Self {
        macro_rules! pick {
            ($($f:ident),*) => { Self { $($f: over.$f.clone().or(self.$f)),* } };
        }
        pick!(
            seed, kernel, d, sigma, zeta, theta, n, inner_samples, p, steps, burnin, chains, samples, d_grid, n_grid,
            radii, k_grid, s_grid, specs, m_max, n_max, random_functions, mc_draws, tail_mass, traceable_k, mh_scale,
            spec, out, format
        )
    }
}

/// A configuration with every field resolved and checked.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub experiment: Experiment,
    pub seed: u64,
    pub kernel: KernelKind,
    pub d: usize,
    pub sigma: f64,
    pub zeta: f64,
    pub theta: f64,
    pub n: usize,
    pub inner_samples: usize,
    pub p: f64,
    pub steps: u64,
    pub burnin: u64,
    pub chains: usize,
    pub samples: usize,
    pub d_grid: Vec<usize>,
    pub n_grid: Vec<usize>,
    pub radii: Vec<f64>,
    pub k_grid: Vec<f64>,
    pub s_grid: Vec<f64>,
    pub specs: usize,
    pub m_max: usize,
    pub n_max: usize,
    pub random_functions: usize,
    pub mc_draws: u64,
    pub tail_mass: f64,
    pub traceable_k: bool,
    pub mh_scale: f64,
    pub spec: Option<PathBuf>,
}

fn default_s_grid() -> Vec<f64> {
    (0..=40).map(|i| 10f64.powf(-1.0 + i as f64 / 20.0)).collect()
}

impl Plan {
    pub fn resolve(experiment: Experiment, c: &ExperimentConfig) -> Result<Self, CliError> {
        use Experiment::*;
        let seed = c.seed.ok_or_else(|| CliError::config("seed", "is mandatory (use --seed or the config file)"))?;
        let d = c.d.unwrap_or(match experiment {
            Moments => 1,
            Bounds => 16,
            GbDecay => 5,
            MtmVsIdeal => 4,
            _ => 2,
        });
        if d == 0 {
            return Err(CliError::config("d", "must be at least 1"));
        }
        let zeta = c.zeta.unwrap_or(1.0);
        let sigma = match (c.sigma, c.zeta) {
            (Some(s), _) => s,
            (None, Some(z)) => z * (d as f64).powf(-0.25),
            (None, None) => match experiment {
                GbDecay => 0.5,
                MtmVsIdeal | Bounds => zeta * (d as f64).powf(-0.25),
                _ => 1.0,
            },
        };
        let theta = c.theta.unwrap_or(match experiment {
            GbDecay => 1.0,
            _ => 0.5,
        });
        let kernel = match &c.kernel {
            Some(k) => k.parse::<KernelKind>().map_err(|e| CliError::config("kernel", e))?,
            None => KernelKind::Mtm,
        };
        let plan = Plan {
            experiment,
            seed,
            kernel,
            d,
            sigma,
            zeta,
            theta,
            n: c.n.unwrap_or(match experiment {
                Bounds => 10,
                _ => 4,
            }),
            inner_samples: c.inner_samples.unwrap_or(16),
            p: c.p.unwrap_or(1.0),
            steps: c.steps.unwrap_or(match experiment {
                Sample => 10_000,
                _ => 100_000,
            }),
            burnin: c.burnin.unwrap_or(0),
            chains: c.chains.unwrap_or(match experiment {
                Sample => 4,
                _ => 1,
            }),
            samples: c.samples.unwrap_or(100_000),
            d_grid: c.d_grid.clone().unwrap_or_else(|| vec![4, 16, 64, 256]),
            n_grid: c.n_grid.clone().unwrap_or_else(|| match experiment {
                GbDecay => vec![1, 10, 100, 1000],
                Oracle => vec![2, 4, 8],
                _ => vec![1, 2, 4, 8, 16, 32],
            }),
            radii: c.radii.clone().unwrap_or_else(|| match experiment {
                GbDecay => vec![2.0, 4.0, 6.0],
                _ => vec![0.0, 2.0, 4.0],
            }),
            k_grid: c.k_grid.clone().unwrap_or_else(|| (0..=6).map(|i| 10f64.powi(i)).collect()),
            s_grid: c.s_grid.clone().unwrap_or_else(default_s_grid),
            specs: c.specs.unwrap_or(300),
            m_max: c.m_max.unwrap_or(4),
            n_max: c.n_max.unwrap_or(4),
            random_functions: c.random_functions.unwrap_or(8),
            mc_draws: c.mc_draws.unwrap_or(10_000_000),
            tail_mass: c.tail_mass.unwrap_or(0.1),
            traceable_k: c.traceable_k.unwrap_or(true),
            mh_scale: c.mh_scale.unwrap_or(2.38),
            spec: c.spec.clone(),
        };
        plan.validate()?;
        plan.check_budget()?;
        Ok(plan)
    }

    fn validate(&self) -> Result<(), CliError> {
        let pos = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(CliError::config(field, format!("must be positive and finite, got {v}")))
            }
        };
        pos("sigma", self.sigma)?;
        pos("zeta", self.zeta)?;
        pos("mh_scale", self.mh_scale)?;
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return Err(CliError::config("theta", "must be finite and nonnegative"));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(CliError::config("p", "must be at least 1"));
        }
        for (field, v) in [("n", self.n), ("inner_samples", self.inner_samples), ("chains", self.chains)] {
            if v == 0 {
                return Err(CliError::config(field, "must be at least 1"));
            }
        }
        if self.steps == 0 {
            return Err(CliError::config("steps", "must be at least 1"));
        }
        if self.samples < mtm_core::diagnostics::MIN_REPORT_SAMPLES {
            return Err(CliError::config(
                "samples",
                format!("must be at least {}", mtm_core::diagnostics::MIN_REPORT_SAMPLES),
            ));
        }
        if !(self.tail_mass > 0.0 && self.tail_mass <= 0.5) {
            return Err(CliError::config("tail_mass", "must lie in (0, 1/2]"));
        }
        if self.m_max < 2 || self.n_max == 0 {
            return Err(CliError::config("m_max", "need m_max >= 2 and n_max >= 1"));
        }
        let nonempty = |field: &str, len: usize| {
            if len == 0 {
                Err(CliError::config(field, "must be non-empty"))
            } else {
                Ok(())
            }
        };
        nonempty("d_grid", self.d_grid.len())?;
        nonempty("n_grid", self.n_grid.len())?;
        nonempty("radii", self.radii.len())?;
        nonempty("k_grid", self.k_grid.len())?;
        nonempty("s_grid", self.s_grid.len())?;
        if self.d_grid.iter().any(|&d| d == 0) {
            return Err(CliError::config("d_grid", "entries must be at least 1"));
        }
        if self.n_grid.iter().any(|&n| n == 0) {
            return Err(CliError::config("n_grid", "entries must be at least 1"));
        }
        if self.radii.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return Err(CliError::config("radii", "entries must be finite and nonnegative"));
        }
        if self.k_grid.iter().any(|k| !(*k >= 1.0 && k.is_finite())) {
            return Err(CliError::config("k_grid", "entries must be at least 1"));
        }
        if self.s_grid.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(CliError::config("s_grid", "entries must be positive"));
        }
        let needs_autocorr = matches!(self.experiment, Experiment::Scaling | Experiment::MtmVsIdeal | Experiment::Sample);
        if needs_autocorr && self.steps < MIN_AUTOCORR_STEPS {
            return Err(CliError::config("steps", format!("autocorrelation needs at least {MIN_AUTOCORR_STEPS}")));
        }
        if self.experiment == Experiment::Moments && self.mc_draws == 1 {
            return Err(CliError::config("mc_draws", "use 0 to skip Monte Carlo or at least 2"));
        }
        Ok(())
    }

    fn evals_per_step(&self, kind: KernelKind, n: usize) -> f64 {
        match kind {
            KernelKind::Mh | KernelKind::Ideal => 2.0,
            KernelKind::Mtm | KernelKind::LazyMtm => 2.0 * n as f64,
            KernelKind::SemiIdeal => 2.0 * (n * self.inner_samples) as f64,
        }
    }

    /// Rejects configurations that exceed module limits before any work starts.
    fn check_budget(&self) -> Result<(), CliError> {
        let over = |what: &str, v: f64, lim: f64| {
            if v > lim {
                Err(CliError::Budget(format!("{what} = {v} exceeds the limit {lim}")))
            } else {
                Ok(())
            }
        };
        over("steps + burnin", (self.steps + self.burnin) as f64, MAX_STEPS as f64)?;
        over("samples", self.samples as f64, MAX_SAMPLES as f64)?;
        over("specs", self.specs as f64, MAX_SPECS as f64)?;
        over("mc_draws", self.mc_draws as f64, MAX_MC_DRAWS as f64)?;
        let dims = self.d_grid.iter().chain(std::iter::once(&self.d));
        over("d", dims.copied().max().unwrap_or(0) as f64, MAX_DIM as f64)?;
        let tries = self.n_grid.iter().chain(std::iter::once(&self.n));
        over("n", tries.copied().max().unwrap_or(0) as f64, MAX_TRIES as f64)?;
        let transitions = (self.steps + self.burnin) as f64 * self.chains as f64;
        let work = match self.experiment {
            Experiment::Sample => transitions * self.evals_per_step(self.kernel, self.n) * self.d as f64,
            Experiment::Scaling => {
                self.d_grid.iter().map(|&d| 2.0 * (transitions + self.samples as f64) * 2.0 * d as f64).sum()
            }
            Experiment::GbDecay => self
                .n_grid
                .iter()
                .map(|&n| {
                    let per = self.evals_per_step(KernelKind::Mtm, n) * self.d as f64;
                    (2.0 * self.samples as f64 + self.radii.len() as f64 * self.samples as f64) * per
                })
                .sum(),
            Experiment::MtmVsIdeal => self
                .n_grid
                .iter()
                .map(|&n| (transitions + self.samples as f64) * self.evals_per_step(KernelKind::Mtm, n) * self.d as f64)
                .sum(),
            Experiment::Moments => self.mc_draws as f64 * self.d as f64,
            Experiment::Oracle => {
                let m = self.m_max as f64;
                let tuples = m.powi(2 * (self.n_max as i32 - 1));
                if tuples > ENUMERATION_LIMIT as f64 {
                    return Err(CliError::Budget(format!(
                        "m_max^(2 (n_max - 1)) = {tuples} exceeds the enumeration limit {ENUMERATION_LIMIT}"
                    )));
                }
                let beta_m = 3f64;
                let beta_n = self.n_grid.iter().copied().max().unwrap_or(1) as f64;
                let beta_tuples = beta_m.powf(beta_n - 1.0);
                if beta_tuples > ENUMERATION_LIMIT as f64 {
                    return Err(CliError::Budget(format!(
                        "beta curves need 3^(n - 1) = {beta_tuples} tuples, over the enumeration limit"
                    )));
                }
                self.specs as f64 * tuples * m * m
            }
            Experiment::Bounds => 0.0,
        };
        over("work (transitions x weight evaluations x d)", work, WORK_LIMIT)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(seed: u64) -> ExperimentConfig {
        ExperimentConfig { seed: Some(seed), ..Default::default() }
    }

    #[test]
    fn seed_is_mandatory() {
        let e = Plan::resolve(Experiment::Bounds, &ExperimentConfig::default()).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("seed"));
    }

    #[test]
    fn flags_override_file() {
        let file = ExperimentConfig { d: Some(3), sigma: Some(0.2), ..cfg(1) };
        let flags = ExperimentConfig { d: Some(7), ..Default::default() };
        let merged = file.overridden_by(&flags);
        assert_eq!(merged.d, Some(7));
        assert_eq!(merged.sigma, Some(0.2));
        assert_eq!(merged.seed, Some(1));
    }

    #[test]
    fn zeta_sets_sigma() {
        let p = Plan::resolve(Experiment::Bounds, &ExperimentConfig { zeta: Some(1.0), d: Some(16), ..cfg(0) }).unwrap();
        assert_eq!(p.sigma, 0.5);
    }

    #[test]
    fn field_level_errors() {
        let e = Plan::resolve(Experiment::Sample, &ExperimentConfig { sigma: Some(-1.0), ..cfg(0) }).unwrap_err();
        assert!(e.to_string().contains("`sigma`"));
        let e = Plan::resolve(Experiment::Sample, &ExperimentConfig { kernel: Some("x".into()), ..cfg(0) }).unwrap_err();
        assert!(e.to_string().contains("`kernel`"));
        let e = Plan::resolve(Experiment::Scaling, &ExperimentConfig { d_grid: Some(vec![]), ..cfg(0) }).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn budgets_fail_before_work() {
        let e = Plan::resolve(Experiment::Sample, &ExperimentConfig { steps: Some(MAX_STEPS + 1), ..cfg(0) }).unwrap_err();
        assert_eq!(e.exit_code(), 3);
        let e = Plan::resolve(Experiment::Oracle, &ExperimentConfig { n_max: Some(12), ..cfg(0) }).unwrap_err();
        assert_eq!(e.exit_code(), 3);
        let e = Plan::resolve(
            Experiment::GbDecay,
            &ExperimentConfig { n_grid: Some(vec![100_000]), samples: Some(10_000_000), ..cfg(0) },
        )
        .unwrap_err();
        assert_eq!(e.exit_code(), 3);
    }

    #[test]
    fn unknown_fields_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"seed": 1, "sigmaa": 2}"#).unwrap();
        assert_eq!(ExperimentConfig::load(&path).unwrap_err().exit_code(), 2);
    }
}
