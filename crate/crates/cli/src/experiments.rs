//! One function per experiment; each returns rows ordered by grid index.

use rayon::prelude::*;

use mtm_core::analytics::{self, KConstants, MomentInputs, Sign, VarpiMoments};
use mtm_core::diagnostics::{
    acceptance_profile, autocorr_gap_proxy_series, conductance_halfspace, dirichlet_ratio_linear, radius_for_mass,
    stationary_acceptance, Diagnosable, GapProxyReport,
};
use mtm_core::discrete::{beta_one, random_spec, verify_inequalities, FiniteChainSpec, WeightKind};
use mtm_core::gaussian::RwModel;
use mtm_core::rng::StepStream;
use mtm_core::samplers::{run_chain_streaming, stationary_draw, KernelKind, KernelSpec};
use mtm_core::stats::{batch_means, ols};

use crate::config::{Experiment, Plan};
use crate::error::CliError;
use crate::output::ResultRow;

/// Rows plus any asserted inequality failures (only `oracle` produces those).
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub rows: Vec<ResultRow>,
    pub violations: Vec<String>,
}

pub fn run(plan: &Plan) -> Result<Outcome, CliError> {
    match plan.experiment {
        Experiment::Sample => sample(plan).map(rows_only),
        Experiment::Moments => moments(plan).map(rows_only),
        Experiment::Bounds => bounds(plan).map(rows_only),
        Experiment::Oracle => oracle(plan),
        Experiment::Scaling => scaling(plan).map(rows_only),
        Experiment::GbDecay => gb_decay(plan).map(rows_only),
        Experiment::MtmVsIdeal => mtm_vs_ideal(plan).map(rows_only),
    }
}

fn rows_only(rows: Vec<ResultRow>) -> Outcome {
    Outcome { rows, violations: Vec::new() }
}

fn kernel(kind: KernelKind, n: usize, inner: usize, model: RwModel) -> Result<KernelSpec<RwModel>, CliError> {
    Ok(match kind {
        KernelKind::SemiIdeal => KernelSpec::semi_ideal(n, inner, model)?,
        k => KernelSpec::new(k, n, model)?,
    })
}

fn tries_column(kind: KernelKind, n: usize) -> Option<usize> {
    match kind {
        KernelKind::Mh | KernelKind::Ideal => None,
        _ => Some(n),
    }
}

fn report_row(plan: &Plan, r: &GapProxyReport, estimator: String) -> ResultRow {
    let kind = r.tag.kernel.parse::<KernelKind>().ok();
    ResultRow {
        experiment: plan.experiment.as_str().into(),
        kernel: r.tag.kernel.clone(),
        d: Some(r.tag.d),
        sigma: r.tag.sigma,
        theta: r.tag.theta,
        n: kind.and_then(|k| tries_column(k, r.tag.n)),
        estimator,
        estimate: r.estimate,
        se: Some(r.se),
        n_samples: Some(r.n_samples as u64),
        seed: plan.seed,
    }
}

fn analytic_row(plan: &Plan, estimator: String, estimate: f64) -> ResultRow {
    ResultRow {
        experiment: plan.experiment.as_str().into(),
        kernel: "analytic".into(),
        d: Some(plan.d),
        sigma: Some(plan.sigma),
        theta: Some(0.5),
        n: None,
        estimator,
        estimate,
        se: None,
        n_samples: None,
        seed: plan.seed,
    }
}

/// Chain `c` started from an exact draw; returns coordinate 0 of every
/// retained state and the accept indicators.
fn stationary_chain(k: &KernelSpec<RwModel>, plan: &Plan, chain: u64) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let x0 = stationary_draw(k.model(), &StepStream::new(plan.seed, chain, u64::MAX), 0)?;
    let mut xs = Vec::with_capacity(plan.steps as usize + 1);
    let mut acc = Vec::with_capacity(plan.steps as usize);
    run_chain_streaming(k, &x0, plan.steps, plan.burnin, plan.seed, chain, |_, s, r| {
        xs.push(s[0]);
        if let Some(r) = r {
            acc.push(if r.accepted { 1.0 } else { 0.0 });
        }
    })?;
    Ok((xs, acc))
}

/// Pools per-chain reports: mean of estimates, `sqrt(sum se^2) / C`.
fn pool(reports: &[GapProxyReport]) -> GapProxyReport {
    let c = reports.len() as f64;
    let mut out = reports[0].clone();
    out.estimate = reports.iter().map(|r| r.estimate).sum::<f64>() / c;
    out.se = reports.iter().map(|r| r.se * r.se).sum::<f64>().sqrt() / c;
    out.n_samples = reports.iter().map(|r| r.n_samples).sum();
    out
}

fn autocorr_over_chains(k: &KernelSpec<RwModel>, plan: &Plan) -> Result<GapProxyReport, CliError> {
    let reports = (0..plan.chains as u64)
        .into_par_iter()
        .map(|c| {
            let (xs, _) = stationary_chain(k, plan, c)?;
            Ok(autocorr_gap_proxy_series(&xs, k.tag())?)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(pool(&reports))
}

fn e1(d: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[0] = 1.0;
    v
}

fn sample(plan: &Plan) -> Result<Vec<ResultRow>, CliError> {
    let k = kernel(plan.kernel, plan.n, plan.inner_samples, RwModel::gaussian(plan.d, plan.sigma, plan.theta)?)?;
    let per_chain = (0..plan.chains as u64)
        .into_par_iter()
        .map(|c| stationary_chain(&k, plan, c))
        .collect::<Result<Vec<_>, CliError>>()?;
    let tag = k.tag();
    let mut rows = Vec::new();
    for (c, (xs, acc)) in per_chain.iter().enumerate() {
        let (a, a_se) = batch_means(acc);
        let (m, m_se) = batch_means(xs);
        let proxy = autocorr_gap_proxy_series(xs, tag.clone())?;
        let base = report_row(plan, &proxy, format!("lag-autocorrelation/chain={c}"));
        rows.push(ResultRow { estimator: format!("acceptance-rate/chain={c}"), estimate: a, se: Some(a_se), ..base.clone() });
        rows.push(ResultRow { estimator: format!("mean-x0/chain={c}"), estimate: m, se: Some(m_se), ..base.clone() });
        rows.push(base);
    }
    Ok(rows)
}

fn moments(plan: &Plan) -> Result<Vec<ResultRow>, CliError> {
    let s2 = plan.sigma * plan.sigma;
    let inp = MomentInputs::new(plan.d, s2, plan.p)?;
    let mut rows = Vec::new();
    for (i, sign) in [Sign::Plus, Sign::Minus].into_iter().enumerate() {
        let r = if sign == Sign::Plus { 2.0 * plan.p } else { -2.0 * plan.p };
        let rep = analytics::moment_report(&inp, sign)?;
        rows.push(analytic_row(plan, format!("m({r})/displayed"), rep.formula));
        rows.push(analytic_row(plan, format!("m({r})/quadrature"), rep.oracle.unwrap_or(f64::NAN)));
        rows.push(analytic_row(plan, format!("m({r})/relative-discrepancy"), rep.relative_discrepancy.unwrap_or(f64::NAN)));
        if plan.mc_draws > 0 && analytics::moment_is_finite(s2, r) {
            let (m, se) = analytics::varpi_moment_mc(plan.d, s2, r, plan.mc_draws, plan.seed.wrapping_add(i as u64))?;
            rows.push(ResultRow {
                se: Some(se),
                n_samples: Some(plan.mc_draws),
                ..analytic_row(plan, format!("m({r})/monte-carlo"), m)
            });
        }
    }
    rows.push(analytic_row(plan, "sigma2-threshold".into(), analytics::sigma2_threshold(plan.p)?));
    Ok(rows)
}

fn bounds(plan: &Plan) -> Result<Vec<ResultRow>, CliError> {
    let s2 = plan.sigma * plan.sigma;
    let d = plan.d;
    let mut rows = Vec::new();
    let (phi, gamma) = analytics::gap_lower_bound(plan.zeta, d)?;
    rows.push(analytic_row(plan, "gap-lower-conductance".into(), phi));
    rows.push(analytic_row(plan, "gap-lower".into(), gamma));
    rows.push(analytic_row(plan, "gap-upper".into(), analytics::gap_upper_bound(s2, d)?));
    rows.push(analytic_row(plan, "alpha-inf-lower".into(), analytics::alpha_inf_lower(s2, d)?));
    rows.push(analytic_row(plan, "alpha-inf-lower-zeta".into(), analytics::alpha_inf_lower_zeta(plan.zeta)));
    let thr = analytics::sigma2_threshold(plan.p)?;
    rows.push(analytic_row(plan, "sigma2-threshold".into(), thr));
    let inp = MomentInputs::new(d, s2, plan.p)?;
    let m = VarpiMoments::compute(&inp)?;
    let k = if plan.traceable_k && m.all_finite() { KConstants::traceable(&inp, &m)? } else { KConstants::default() };
    let beta = analytics::beta_n_bound(1.0, plan.n, plan.p, &m, &k)?;
    rows.push(ResultRow { n: Some(plan.n), ..analytic_row(plan, "beta-n-bound/s=1".into(), beta.value) });
    let displayed = analytics::mtm_convergence_bound(plan.n, s2, plan.p, d, &k)?;
    let rederived = analytics::mtm_convergence_bound_rederived(plan.n, s2, plan.p, d, &k)?;
    for (name, b) in [("convergence-displayed", &displayed), ("convergence-rederived", &rederived)] {
        rows.push(ResultRow { n: Some(plan.n), ..analytic_row(plan, format!("{name}/exponent"), b.exponent) });
        for &kk in &plan.k_grid {
            rows.push(ResultRow { n: Some(plan.n), ..analytic_row(plan, format!("{name}/k={kk}"), b.at(kk)) });
        }
    }
    Ok(rows)
}

fn oracle(plan: &Plan) -> Result<Outcome, CliError> {
    let specs: Vec<FiniteChainSpec> = match &plan.spec {
        Some(path) => vec![FiniteChainSpec::load(path)?],
        None => (0..plan.specs)
            .map(|i| {
                let m = 2 + i % (plan.m_max - 1);
                let n = 1 + (i / (plan.m_max - 1)) % plan.n_max;
                let kind = match i % 6 {
                    4 => WeightKind::PiRatio,
                    5 => WeightKind::Constant,
                    _ => WeightKind::LogUniform,
                };
                random_spec(plan.seed, i as u64, m, n, kind)
            })
            .collect(),
    };
    let checks = specs
        .par_iter()
        .enumerate()
        .map(|(i, s)| verify_inequalities(s, plan.random_functions, plan.seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Outcome::default();
    for (s, cs) in specs.iter().zip(&checks) {
        for c in cs {
            out.rows.push(ResultRow {
                experiment: "oracle".into(),
                kernel: "discrete".into(),
                d: Some(s.m()),
                sigma: None,
                theta: None,
                n: Some(s.n),
                estimator: c.name.clone(),
                estimate: c.max_violation,
                se: None,
                n_samples: None,
                seed: plan.seed,
            });
            if c.asserted && !c.pass {
                out.violations.push(format!("{} on spec {}: {:e} ({})", c.name, c.spec_hash, c.max_violation, c.witness));
            }
        }
    }
    for &n in &plan.n_grid {
        let s = random_spec(plan.seed, u64::MAX, 3, n, WeightKind::LogUniform);
        for &sv in &plan.s_grid {
            out.rows.push(ResultRow {
                experiment: "oracle".into(),
                kernel: "discrete".into(),
                d: Some(3),
                sigma: None,
                theta: None,
                n: Some(n),
                estimator: format!("beta-one/s={sv}"),
                estimate: beta_one(&s, sv)?,
                se: None,
                n_samples: None,
                seed: plan.seed,
            });
        }
    }
    Ok(out)
}

fn slope_row(plan: &Plan, kernel: &str, estimator: &str, pts: &[(f64, f64)]) -> ResultRow {
    let (x, y): (Vec<f64>, Vec<f64>) = pts.iter().map(|(d, v)| (d.ln(), v.ln())).unzip();
    let (slope, intercept) = ols(&x, &y);
    let k = x.len() as f64;
    let se = if x.len() > 2 {
        let xm = x.iter().sum::<f64>() / k;
        let rss: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        let sxx: f64 = x.iter().map(|a| (a - xm).powi(2)).sum();
        Some((rss / (k - 2.0) / sxx).sqrt())
    } else {
        None
    };
    ResultRow {
        experiment: plan.experiment.as_str().into(),
        kernel: kernel.into(),
        d: None,
        sigma: None,
        theta: None,
        n: None,
        estimator: format!("slope/{estimator}"),
        estimate: slope,
        se,
        n_samples: Some(pts.len() as u64),
        seed: plan.seed,
    }
}

/// Gap proxies for the ideal (`sigma = zeta d^(-1/4)`) and MH
/// (`sigma = l d^(-1/2)`) chains across the `d` grid, plus fitted slopes.
pub fn scaling_cells(plan: &Plan) -> Vec<(KernelKind, usize, f64)> {
    let mut cells = Vec::new();
    for kind in [KernelKind::Ideal, KernelKind::Mh] {
        for &d in &plan.d_grid {
            let df = d as f64;
            let sigma = if kind == KernelKind::Ideal { plan.zeta * df.powf(-0.25) } else { plan.mh_scale / df.sqrt() };
            cells.push((kind, d, sigma));
        }
    }
    cells
}

fn scaling(plan: &Plan) -> Result<Vec<ResultRow>, CliError> {
    let cells = scaling_cells(plan);
    let results = cells
        .par_iter()
        .map(|&(kind, d, sigma)| {
            let theta = if kind == KernelKind::Ideal { plan.theta } else { 0.0 };
            let k = KernelSpec::new(kind, 1, RwModel::gaussian(d, sigma, theta)?)?;
            let ac = autocorr_over_chains(&k, plan)?;
            let dr = dirichlet_ratio_linear(&k, &e1(d), plan.samples, plan.seed)?;
            Ok((ac, dr))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut rows = Vec::new();
    for (ac, dr) in &results {
        rows.push(report_row(plan, ac, "lag-autocorrelation".into()));
        rows.push(report_row(plan, dr, "dirichlet-linear".into()));
    }
    for kind in [KernelKind::Ideal, KernelKind::Mh] {
        for (idx, name) in [(0usize, "lag-autocorrelation"), (1, "dirichlet-linear")] {
            let pts: Vec<(f64, f64)> = cells
                .iter()
                .zip(&results)
                .filter(|((k, _, _), _)| *k == kind)
                .map(|((_, d, _), (ac, dr))| (*d as f64, if idx == 0 { ac.estimate } else { dr.estimate }))
                .collect();
            rows.push(slope_row(plan, kind.as_str(), name, &pts));
        }
    }
    Ok(rows)
}

fn gb_decay(plan: &Plan) -> Result<Vec<ResultRow>, CliError> {
    let model = RwModel::gaussian(plan.d, plan.sigma, plan.theta)?;
    let radius = radius_for_mass(plan.d, plan.tail_mass)?;
    let mut rows = Vec::new();
    let mut kernels: Vec<KernelSpec<RwModel>> =
        plan.n_grid.iter().map(|&n| KernelSpec::mtm(n, model.clone())).collect::<Result<_, _>>()?;
    kernels.push(KernelSpec::ideal(model.clone()));
    for k in &kernels {
        let c = conductance_halfspace(k, radius, plan.samples, plan.seed)?;
        rows.push(report_row(plan, &c, "conductance-halfspace".into()));
        let a = stationary_acceptance(k, plan.samples, plan.seed)?;
        rows.push(report_row(plan, &a, "acceptance-rate".into()));
        for r in acceptance_profile(k, &plan.radii, plan.samples, plan.seed)? {
            let rad = r.radius.unwrap_or(f64::NAN);
            rows.push(report_row(plan, &r, format!("acceptance-rate/r={rad}")));
        }
    }
    if plan.theta == 1.0 {
        let env = analytics::GbEnvelope::new(plan.sigma * plan.sigma, plan.d)?;
        for &r in &plan.radii {
            rows.push(ResultRow {
                theta: Some(1.0),
                ..analytic_row(plan, format!("gb-envelope/r={r}"), env.at_norm2(r * r))
            });
        }
    }
    Ok(rows)
}

fn mtm_vs_ideal(plan: &Plan) -> Result<Vec<ResultRow>, CliError> {
    let model = RwModel::gaussian(plan.d, plan.sigma, plan.theta)?;
    let mut kernels: Vec<KernelSpec<RwModel>> =
        plan.n_grid.iter().map(|&n| KernelSpec::mtm(n, model.clone())).collect::<Result<_, _>>()?;
    kernels.push(KernelSpec::ideal(model));
    let results = kernels
        .par_iter()
        .map(|k| {
            let ac = autocorr_over_chains(k, plan)?;
            let dr = dirichlet_ratio_linear(k, &e1(plan.d), plan.samples, plan.seed)?;
            let acc = stationary_acceptance(k, plan.samples, plan.seed)?;
            Ok([ac, dr, acc])
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut rows = Vec::new();
    for reps in &results {
        rows.push(report_row(plan, &reps[0], "lag-autocorrelation".into()));
        rows.push(report_row(plan, &reps[1], "dirichlet-linear".into()));
        rows.push(report_row(plan, &reps[2], "acceptance-rate".into()));
    }
    Ok(rows)
}
