//! Single-step transitions and chain simulation for the Metropolis–Hastings,
//! ideal, semi-ideal, Multiple-try and lazy Multiple-try kernels.
//!
//! Every step draws its randomness from a [`StepStream`]; the `i`-th
//! proposal (and its Gumbel selection noise) comes from lane
//! [`Lane::Proposal`] index `i`, the `i`-th shadow draw from [`Lane::Shadow`]
//! index `i`, and so on. Work inside a step may therefore be split across
//! threads without changing the result.

use rand::Rng;
use rand_distr::{Distribution, Open01};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::quadrature::log_sum_exp;
use crate::rng::{Lane, StepStream, StreamRng};

/// Floor applied to `ln (qw)(.)` in the generic ideal ratio.
pub const LOG_QW_FLOOR: f64 = -745.0;

/// Enumeration budget for the exact semi-ideal normaliser.
pub const EXACT_TUPLE_LIMIT: u128 = 1_000_000;

/// Proposal batches at least this large are evaluated on the rayon pool.
const PARALLEL_THRESHOLD: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelKind {
    #[serde(rename = "mh")]
    Mh,
    #[serde(rename = "ideal")]
    Ideal,
    #[serde(rename = "semi-ideal")]
    SemiIdeal,
    #[serde(rename = "mtm")]
    Mtm,
    #[serde(rename = "lazy-mtm")]
    LazyMtm,
}

impl KernelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            KernelKind::Mh => "mh",
            KernelKind::Ideal => "ideal",
            KernelKind::SemiIdeal => "semi-ideal",
            KernelKind::Mtm => "mtm",
            KernelKind::LazyMtm => "lazy-mtm",
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mh" => KernelKind::Mh,
            "ideal" => KernelKind::Ideal,
            "semi-ideal" => KernelKind::SemiIdeal,
            "mtm" => KernelKind::Mtm,
            "lazy-mtm" => KernelKind::LazyMtm,
            other => return Err(Error::invalid("kernel", format!("unknown kernel {other:?}"))),
        })
    }
}

/// How the semi-ideal chain obtains `(q̃w)_n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimator {
    /// Inverse of an `M`-sample average of `(q̂w_n)^{-1}`, fresh inner tuples each time.
    MonteCarlo,
    /// Exact enumeration over the finite proposal support.
    Exact,
}

/// A Markov kernel: kind, try count, inner sample count and the model.
#[derive(Debug, Clone)]
pub struct KernelSpec<M> {
    kind: KernelKind,
    n_tries: usize,
    inner_samples: usize,
    estimator: Estimator,
    model: M,
}

impl<M: Model> KernelSpec<M> {
    pub fn new(kind: KernelKind, n_tries: usize, model: M) -> Result<Self> {
        if n_tries == 0 {
            return Err(Error::invalid("n_tries", "must be at least 1"));
        }
        Ok(Self { kind, n_tries, inner_samples: 1, estimator: Estimator::MonteCarlo, model })
    }

    pub fn mh(model: M) -> Self {
        Self { kind: KernelKind::Mh, n_tries: 1, inner_samples: 1, estimator: Estimator::MonteCarlo, model }
    }

    pub fn ideal(model: M) -> Self {
        Self { kind: KernelKind::Ideal, n_tries: 1, inner_samples: 1, estimator: Estimator::MonteCarlo, model }
    }

    pub fn mtm(n_tries: usize, model: M) -> Result<Self> {
        Self::new(KernelKind::Mtm, n_tries, model)
    }

    pub fn lazy_mtm(n_tries: usize, model: M) -> Result<Self> {
        Self::new(KernelKind::LazyMtm, n_tries, model)
    }

    /// Semi-ideal kernel with `inner_samples` Monte Carlo tuples per normaliser estimate.
    pub fn semi_ideal(n_tries: usize, inner_samples: usize, model: M) -> Result<Self> {
        if inner_samples == 0 {
            return Err(Error::invalid("inner_samples", "must be at least 1"));
        }
        let mut s = Self::new(KernelKind::SemiIdeal, n_tries, model)?;
        s.inner_samples = inner_samples;
        Ok(s)
    }

    /// Semi-ideal kernel with the normaliser computed by exact enumeration.
    pub fn semi_ideal_exact(n_tries: usize, model: M) -> Result<Self> {
        let mut s = Self::new(KernelKind::SemiIdeal, n_tries, model)?;
        s.estimator = Estimator::Exact;
        Ok(s)
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn n_tries(&self) -> usize {
        self.n_tries
    }

    pub fn inner_samples(&self) -> usize {
        self.inner_samples
    }

    pub fn estimator(&self) -> Estimator {
        self.estimator
    }

    pub fn model(&self) -> &M {
        &self.model
    }
}

/// What happened in one transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub prev: Vec<f64>,
    pub proposed: Vec<f64>,
    /// 0-based index of the selected try, for kernels that select among tries.
    pub selected_index: Option<usize>,
    /// `ln` of the acceptance probability; `-inf` on a lazy hold.
    pub log_accept: f64,
    pub accepted: bool,
    /// Number of `ln w` evaluations made this step.
    pub weight_evals: u64,
    pub lazy_hold: bool,
    /// Set when `ln (qw)` hit [`LOG_QW_FLOOR`].
    pub clamped: bool,
}

impl StepRecord {
    fn decided(prev: &[f64], proposed: Vec<f64>, log_accept: f64, stream: &StepStream) -> Self {
        let log_accept = log_accept.min(0.0);
        let accepted = accept(log_accept, stream);
        Self {
            prev: prev.to_vec(),
            proposed,
            selected_index: None,
            log_accept,
            accepted,
            weight_evals: 0,
            lazy_hold: false,
            clamped: false,
        }
    }

    fn next_state(&self) -> Vec<f64> {
        if self.accepted {
            self.proposed.clone()
        } else {
            self.prev.clone()
        }
    }
}

fn accept(log_accept: f64, stream: &StepStream) -> bool {
    if log_accept >= 0.0 {
        return true;
    }
    let u: f64 = Open01.sample(&mut stream.rng(Lane::Accept, 0));
    u.ln() < log_accept
}

fn finite_log_target<M: Model>(model: &M, x: &[f64], which: &'static str) -> Result<f64> {
    let v = model.log_target(x);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteDensity { which, point: x.to_vec() })
    }
}

/// Anything that moves a state one step given a keyed stream.
pub trait Transition: Sync {
    fn dim(&self) -> usize;
    fn step(&self, x: &[f64], stream: &StepStream) -> Result<(Vec<f64>, StepRecord)>;
}

impl<M: Model> Transition for KernelSpec<M> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn step(&self, x: &[f64], stream: &StepStream) -> Result<(Vec<f64>, StepRecord)> {
        match self.kind {
            KernelKind::Mh => step_mh(self, x, stream),
            KernelKind::Ideal => step_ideal(self, x, stream),
            KernelKind::SemiIdeal => step_semi_ideal(self, x, stream),
            KernelKind::Mtm => step_mtm(self, x, stream),
            KernelKind::LazyMtm => step_lazy(self, x, stream),
        }
    }
}

/// Random-walk Metropolis–Hastings step.
pub fn step_mh<M: Model>(spec: &KernelSpec<M>, x: &[f64], stream: &StepStream) -> Result<(Vec<f64>, StepRecord)> {
    let m = &spec.model;
    let y = m.sample_proposal(x, &mut stream.rng(Lane::Proposal, 0));
    let lx = finite_log_target(m, x, "current")?;
    let ly = m.log_target(&y);
    let la = if ly.is_nan() { f64::NEG_INFINITY } else { ly - lx + m.log_proposal_ratio(x, &y) };
    let rec = StepRecord::decided(x, y, la, stream);
    Ok((rec.next_state(), rec))
}

/// Metropolis–Hastings step with the weighted proposal `q^w`.
pub fn step_ideal<M: Model>(spec: &KernelSpec<M>, x: &[f64], stream: &StepStream) -> Result<(Vec<f64>, StepRecord)> {
    let m = &spec.model;
    let y = m.sample_weighted_proposal(x, &mut stream.rng(Lane::Proposal, 0))?;
    let (la, evals, clamped) = ideal_log_ratio(m, x, &y)?;
    let mut rec = StepRecord::decided(x, y, la, stream);
    rec.weight_evals = evals;
    rec.clamped = clamped;
    Ok((rec.next_state(), rec))
}

/// `ln` of the ideal acceptance ratio (not yet capped at 0), the number of
/// weight evaluations used and whether a normaliser was clamped.
pub fn ideal_log_ratio<M: Model>(m: &M, x: &[f64], y: &[f64]) -> Result<(f64, u64, bool)> {
    if let Some(v) = m.ideal_log_ratio(x, y) {
        return Ok((v, 0, false));
    }
    let lx = finite_log_target(m, x, "current")?;
    let ly = finite_log_target(m, y, "proposed")?;
    let wxy = m.log_weight(x, y)?;
    let (wyx, evals) = if m.weight_is_antisymmetric() { (-wxy, 1) } else { (m.log_weight(y, x)?, 2) };
    let raw_x = m.log_qw_normalizer(x)?;
    let raw_y = m.log_qw_normalizer(y)?;
    let clamped = raw_x < LOG_QW_FLOOR || raw_y < LOG_QW_FLOOR;
    let (qx, qy) = (raw_x.max(LOG_QW_FLOOR), raw_y.max(LOG_QW_FLOOR));
    Ok((ly - lx + m.log_proposal_ratio(x, y) + wyx - wxy + qx - qy, evals, clamped))
}

/// Output of the importance-resampling subroutine.
#[derive(Debug, Clone, PartialEq)]
pub struct Resampled {
    /// 0-based selected index.
    pub index: usize,
    pub proposals: Vec<Vec<f64>>,
    /// `ln w(x, Y_i)` for every try.
    pub log_weights: Vec<f64>,
}

impl Resampled {
    pub fn selected(&self) -> &[f64] {
        &self.proposals[self.index]
    }
}

/// Draws `n` i.i.d. proposals, weighs them and selects one with probability
/// proportional to its weight (Gumbel-argmax, ties to the smallest index).
pub fn resample_proposal<M: Model>(spec: &KernelSpec<M>, x: &[f64], stream: &StepStream) -> Result<Resampled> {
    let n = spec.n_tries;
    let m = &spec.model;
    let one = |i: usize| -> Result<(Vec<f64>, f64, f64)> {
        let mut rng = stream.rng(Lane::Proposal, i as u64);
        let y = m.sample_proposal(x, &mut rng);
        let lw = m.log_weight(x, &y)?;
        let u: f64 = Open01.sample(&mut rng);
        Ok((y, lw, -(-u.ln()).ln()))
    };
    let draws: Vec<(Vec<f64>, f64, f64)> = if n >= PARALLEL_THRESHOLD {
        (0..n).into_par_iter().map(one).collect::<Result<_>>()?
    } else {
        (0..n).map(one).collect::<Result<_>>()?
    };
    let mut best: Option<(usize, f64)> = None;
    for (i, (_, lw, g)) in draws.iter().enumerate() {
        if *lw == f64::NEG_INFINITY {
            continue;
        }
        let key = lw + g;
        if best.is_none_or(|(_, b)| key > b) {
            best = Some((i, key));
        }
    }
    let (index, _) = best.ok_or(Error::DegenerateSelection { n })?;
    let (proposals, log_weights) = draws.into_iter().map(|(y, lw, _)| (y, lw)).unzip();
    Ok(Resampled { index, proposals, log_weights })
}

/// Multiple-try Metropolis step with shadow samples.
pub fn step_mtm<M: Model>(spec: &KernelSpec<M>, x: &[f64], stream: &StepStream) -> Result<(Vec<f64>, StepRecord)> {
    let n = spec.n_tries;
    let m = &spec.model;
    let r = resample_proposal(spec, x, stream)?;
    let y = r.selected().to_vec();
    let lx = finite_log_target(m, x, "current")?;
    let ly = finite_log_target(m, &y, "proposed")?;
    let wxy = r.log_weights[r.index];
    let mut evals = n as u64;
    let wyx = if m.weight_is_antisymmetric() {
        -wxy
    } else {
        evals += 1;
        m.log_weight(&y, x)?
    };
    let shadow = |i: usize| -> Result<f64> {
        if i == r.index {
            return Ok(wyx);
        }
        let z = m.sample_proposal(&y, &mut stream.rng(Lane::Shadow, i as u64));
        m.log_weight(&y, &z)
    };
    let shadow_weights: Vec<f64> = if n >= PARALLEL_THRESHOLD {
        (0..n).into_par_iter().map(shadow).collect::<Result<_>>()?
    } else {
        (0..n).map(shadow).collect::<Result<_>>()?
    };
    evals += n as u64 - 1;
    let forward = log_sum_exp(&r.log_weights);
    let backward = log_sum_exp(&shadow_weights);
    let la = ly - lx + m.log_proposal_ratio(x, &y) + wyx - wxy + forward - backward;
    let mut rec = StepRecord::decided(x, y, la, stream);
    rec.selected_index = Some(r.index);
    rec.weight_evals = evals;
    Ok((rec.next_state(), rec))
}

fn log_mean_inverse(values: impl Iterator<Item = (f64, f64)>) -> f64 {
    // ln sum_k exp(log_prob_k - log_value_k)
    let terms: Vec<f64> = values.map(|(lp, lv)| lp - lv).collect();
    log_sum_exp(&terms)
}

/// `ln (q̃w)_n(x, y)` and the number of weight evaluations used.
///
/// `lane` selects the inner-tuple stream (forward or reverse); only the
/// Monte Carlo estimator consumes randomness.
pub fn log_qw_tilde<M: Model>(
    m: &M,
    x: &[f64],
    y: &[f64],
    n: usize,
    estimator: Estimator,
    inner_samples: usize,
    stream: &StepStream,
    lane: Lane,
) -> Result<(f64, u64)> {
    let w1 = m.log_weight(x, y)?;
    if n == 1 {
        return Ok((w1, 1));
    }
    let ln_n = (n as f64).ln();
    match estimator {
        Estimator::MonteCarlo => {
            let tuple = |k: usize| -> Result<f64> {
                let mut lws = Vec::with_capacity(n);
                lws.push(w1);
                for i in 1..n {
                    let z = m.sample_proposal(x, &mut stream.rng2(lane, k as u64, i as u64));
                    lws.push(m.log_weight(x, &z)?);
                }
                Ok(log_sum_exp(&lws) - ln_n)
            };
            let hats: Vec<f64> = if inner_samples >= PARALLEL_THRESHOLD {
                (0..inner_samples).into_par_iter().map(tuple).collect::<Result<_>>()?
            } else {
                (0..inner_samples).map(tuple).collect::<Result<_>>()?
            };
            let ln_m = (inner_samples as f64).ln();
            let lmi = log_mean_inverse(hats.iter().map(|&h| (-ln_m, h)));
            Ok((-lmi, 1 + (inner_samples * (n - 1)) as u64))
        }
        Estimator::Exact => {
            let support = m
                .proposal_support(x)
                .ok_or(Error::UnsupportedTarget("exact normaliser needs a finite proposal support"))?;
            let k = support.len() as u128;
            let needed = k.checked_pow((n - 1) as u32).unwrap_or(u128::MAX);
            if needed > EXACT_TUPLE_LIMIT {
                return Err(Error::EnumerationLimit { what: "semi-ideal tuples", needed, limit: EXACT_TUPLE_LIMIT });
            }
            let lw: Vec<f64> = support.iter().map(|(z, _)| m.log_weight(x, z)).collect::<Result<_>>()?;
            let lp: Vec<f64> = support.iter().map(|(_, p)| p.ln()).collect();
            let mut idx = vec![0usize; n - 1];
            let mut terms = Vec::with_capacity(needed as usize);
            let mut lws = vec![0.0; n];
            loop {
                lws[0] = w1;
                let mut logp = 0.0;
                for (slot, &j) in idx.iter().enumerate() {
                    lws[slot + 1] = lw[j];
                    logp += lp[j];
                }
                terms.push(logp - (log_sum_exp(&lws) - ln_n));
                // Odometer increment.
                let mut pos = 0;
                loop {
                    if pos == idx.len() {
                        let lmi = log_sum_exp(&terms);
                        return Ok((-lmi, 1 + support.len() as u64));
                    }
                    idx[pos] += 1;
                    if idx[pos] < support.len() {
                        break;
                    }
                    idx[pos] = 0;
                    pos += 1;
                }
            }
        }
    }
}

/// `ln` of the semi-ideal acceptance ratio for a move `x -> y` (not capped at 0).
pub fn semi_ideal_log_ratio<M: Model>(spec: &KernelSpec<M>, x: &[f64], y: &[f64], stream: &StepStream) -> Result<(f64, u64)> {
    let m = &spec.model;
    let lx = finite_log_target(m, x, "current")?;
    let ly = finite_log_target(m, y, "proposed")?;
    let wxy = m.log_weight(x, y)?;
    let wyx = m.log_weight(y, x)?;
    let (fwd, e1) = log_qw_tilde(m, x, y, spec.n_tries, spec.estimator, spec.inner_samples, stream, Lane::InnerForward)?;
    let (rev, e2) = log_qw_tilde(m, y, x, spec.n_tries, spec.estimator, spec.inner_samples, stream, Lane::InnerReverse)?;
    Ok((ly - lx + m.log_proposal_ratio(x, y) + wyx - wxy + fwd - rev, 2 + e1 + e2))
}

/// Semi-ideal step: importance-resampled proposal, acceptance using an
/// estimate of `(q̃w)_n` (exact only in the limit of many inner samples, or
/// with [`Estimator::Exact`]).
pub fn step_semi_ideal<M: Model>(spec: &KernelSpec<M>, x: &[f64], stream: &StepStream) -> Result<(Vec<f64>, StepRecord)> {
    let r = resample_proposal(spec, x, stream)?;
    let y = r.selected().to_vec();
    let (la, evals) = semi_ideal_log_ratio(spec, x, &y, stream)?;
    let mut rec = StepRecord::decided(x, y, la, stream);
    rec.selected_index = Some(r.index);
    rec.weight_evals = spec.n_tries as u64 + evals;
    Ok((rec.next_state(), rec))
}

/// Lazy Multiple-try step: hold with probability 1/2, else an MTM step.
pub fn step_lazy<M: Model>(spec: &KernelSpec<M>, x: &[f64], stream: &StepStream) -> Result<(Vec<f64>, StepRecord)> {
    if stream.rng(Lane::Lazy, 0).random::<bool>() {
        let rec = StepRecord {
            prev: x.to_vec(),
            proposed: x.to_vec(),
            selected_index: None,
            log_accept: f64::NEG_INFINITY,
            accepted: false,
            weight_evals: 0,
            lazy_hold: true,
            clamped: false,
        };
        return Ok((x.to_vec(), rec));
    }
    step_mtm(spec, x, stream)
}

/// Aggregate counters over every transition of a run, burn-in included.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainCounters {
    pub transitions: u64,
    pub accepted: u64,
    pub lazy_holds: u64,
    pub clamped: u64,
    pub weight_evals: u64,
    pub sum_accept_prob: f64,
}

impl ChainCounters {
    fn add(&mut self, r: &StepRecord) {
        self.transitions += 1;
        self.accepted += r.accepted as u64;
        self.lazy_holds += r.lazy_hold as u64;
        self.clamped += r.clamped as u64;
        self.weight_evals += r.weight_evals;
        self.sum_accept_prob += r.log_accept.exp();
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.transitions as f64
    }
}

/// States and records of a chain after burn-in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    pub seed: u64,
    pub chain: u64,
    pub burnin: u64,
    /// `steps + 1` states; the first is the state after burn-in.
    pub states: Vec<Vec<f64>>,
    /// One record per retained transition; `records[k]` moves `states[k]` to `states[k + 1]`.
    pub records: Vec<StepRecord>,
    pub counters: ChainCounters,
}

impl ChainTrace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Coordinate `i` of every retained state.
    pub fn coordinate(&self, i: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[i]).collect()
    }
}

/// Runs `burnin + steps` transitions, calling `observe(k, state, record)` for
/// every retained state (`k = 0` is the post-burn-in state with no record).
/// Nothing but the counters is stored, so long chains cost O(d) memory.
pub fn run_chain_streaming<T: Transition + ?Sized>(
    kernel: &T,
    x0: &[f64],
    steps: u64,
    burnin: u64,
    seed: u64,
    chain: u64,
    mut observe: impl FnMut(u64, &[f64], Option<&StepRecord>),
) -> Result<ChainCounters> {
    if steps == 0 {
        return Err(Error::invalid("steps", "must be at least 1"));
    }
    if x0.len() != kernel.dim() {
        return Err(Error::invalid("x0", format!("expected dimension {}, got {}", kernel.dim(), x0.len())));
    }
    let mut counters = ChainCounters::default();
    let mut x = x0.to_vec();
    for t in 0..burnin + steps {
        if t == burnin {
            observe(0, &x, None);
        }
        let (next, rec) = kernel
            .step(&x, &StepStream::new(seed, chain, t))
            .map_err(|e| Error::Step { step: t, source: Box::new(e) })?;
        counters.add(&rec);
        x = next;
        if t >= burnin {
            observe(t - burnin + 1, &x, Some(&rec));
        }
    }
    Ok(counters)
}

/// Runs a chain and keeps every retained state and record.
pub fn run_chain<T: Transition + ?Sized>(
    kernel: &T,
    x0: &[f64],
    steps: u64,
    burnin: u64,
    seed: u64,
    chain: u64,
) -> Result<ChainTrace> {
    let mut states = Vec::with_capacity(steps as usize + 1);
    let mut records = Vec::with_capacity(steps as usize);
    let counters = run_chain_streaming(kernel, x0, steps, burnin, seed, chain, |_, s, r| {
        states.push(s.to_vec());
        if let Some(r) = r {
            records.push(r.clone());
        }
    })?;
    Ok(ChainTrace { seed, chain, burnin, states, records, counters })
}

/// Draw from the model's target on the [`Lane::Stationary`] stream.
pub fn stationary_draw<M: Model>(model: &M, stream: &StepStream, index: u64) -> Result<Vec<f64>> {
    let mut rng: StreamRng = stream.rng(Lane::Stationary, index);
    model
        .sample_target(&mut rng)
        .ok_or(Error::UnsupportedTarget("exact draws from the target are unavailable"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::RwModel;
    use crate::stats;

    fn g(d: usize, sigma: f64, theta: f64) -> RwModel {
        RwModel::gaussian(d, sigma, theta).unwrap()
    }

    #[test]
    fn construction_checks() {
        assert!(KernelSpec::mtm(0, g(1, 1.0, 0.5)).is_err());
        assert!(KernelSpec::semi_ideal(2, 0, g(1, 1.0, 0.5)).is_err());
        assert_eq!("lazy-mtm".parse::<KernelKind>().unwrap(), KernelKind::LazyMtm);
        assert!("nope".parse::<KernelKind>().is_err());
    }

    #[test]
    fn mh_uphill_always_accepted() {
        let spec = KernelSpec::mh(g(2, 1.0, 0.0));
        let x = [5.0, 5.0];
        for t in 0..200 {
            let (_, r) = step_mh(&spec, &x, &StepStream::new(1, 0, t)).unwrap();
            if r.proposed.iter().map(|v| v * v).sum::<f64>() <= 50.0 {
                assert!(r.accepted);
                assert_eq!(r.log_accept, 0.0);
            }
        }
    }

    #[test]
    fn mh_second_moment() {
        let spec = KernelSpec::mh(g(1, 1.0, 0.0));
        let tr = run_chain(&spec, &[0.0], 200_000, 1_000, 3, 0).unwrap();
        let sq: Vec<f64> = tr.states.iter().map(|s| s[0] * s[0]).collect();
        let (m, se) = stats::batch_means(&sq);
        assert!((m - 1.0).abs() < 4.0 * se, "mean {m} se {se}");
    }

    #[test]
    fn replay_is_identical() {
        let spec = KernelSpec::mtm(5, g(3, 0.8, 0.5)).unwrap();
        let a = run_chain(&spec, &[0.1, 0.2, 0.3], 300, 10, 77, 2).unwrap();
        let b = run_chain(&spec, &[0.1, 0.2, 0.3], 300, 10, 77, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn trace_shape() {
        let spec = KernelSpec::mh(g(2, 1.0, 0.0));
        let tr = run_chain(&spec, &[0.0, 0.0], 1, 0, 1, 0).unwrap();
        assert_eq!(tr.len(), 2);
        assert_eq!(tr.records.len(), 1);
        assert!(run_chain(&spec, &[0.0, 0.0], 0, 0, 1, 0).is_err());
        let tr = run_chain(&spec, &[0.0, 0.0], 50, 20, 1, 0).unwrap();
        assert_eq!(tr.len(), 51);
        assert_eq!(tr.counters.transitions, 70);
        for (k, r) in tr.records.iter().enumerate() {
            assert_eq!(r.prev, tr.states[k]);
            if r.accepted {
                assert_eq!(tr.states[k + 1], r.proposed);
            } else {
                assert_eq!(tr.states[k + 1], tr.states[k]);
            }
        }
    }

    #[test]
    fn ideal_psi_examples() {
        let spec = KernelSpec::ideal(g(1, 1.0, 0.5));
        let (v, _, _) = ideal_log_ratio(spec.model(), &[0.0], &[6f64.sqrt()]).unwrap();
        assert!((v + 0.5).abs() < 1e-14);
        // The psi shortcut agrees with the generic assembly.
        let generic = g(2, 1.3, 0.5000000000000001);
        let shortcut = g(2, 1.3, 0.5);
        for (x, y) in [([0.3, -1.0], [2.0, 0.5]), ([3.0, 1.0], [0.0, 0.1])] {
            let a = ideal_log_ratio(&generic, &x, &y).unwrap().0;
            let b = ideal_log_ratio(&shortcut, &x, &y).unwrap().0;
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        // Shrinking moves are always accepted.
        for t in 0..100 {
            let (_, r) = step_ideal(&spec, &[2.0], &StepStream::new(5, 0, t)).unwrap();
            if r.proposed[0].abs() <= 2.0 {
                assert!(r.accepted);
            }
        }
    }

    #[test]
    fn ideal_rejects_custom_target() {
        use crate::gaussian::{RwProposal, TargetModel, WeightSpec};
        let t = TargetModel::custom(1, |x: &[f64]| -x[0].abs()).unwrap();
        let m = RwModel::new(t, RwProposal::new(1.0, 1).unwrap(), WeightSpec::locally_balanced()).unwrap();
        let spec = KernelSpec::ideal(m.clone());
        assert!(matches!(step_ideal(&spec, &[0.0], &StepStream::new(1, 0, 0)), Err(Error::UnsupportedTarget(_))));
        // MTM only needs weight ratios.
        let spec = KernelSpec::mtm(4, m).unwrap();
        assert!(step_mtm(&spec, &[0.0], &StepStream::new(1, 0, 0)).is_ok());
    }

    #[test]
    fn ideal_clamps_tiny_normaliser() {
        // A model whose (qw) underflows: report the clamp.
        #[derive(Clone)]
        struct Tiny(RwModel);
        impl Model for Tiny {
            fn dim(&self) -> usize {
                1
            }
            fn log_target(&self, x: &[f64]) -> f64 {
                self.0.log_target(x)
            }
            fn sample_proposal(&self, x: &[f64], rng: &mut StreamRng) -> Vec<f64> {
                self.0.sample_proposal(x, rng)
            }
            fn log_weight(&self, x: &[f64], y: &[f64]) -> Result<f64> {
                self.0.log_weight(x, y)
            }
            fn sample_weighted_proposal(&self, x: &[f64], rng: &mut StreamRng) -> Result<Vec<f64>> {
                self.0.sample_weighted_proposal(x, rng)
            }
            fn log_qw_normalizer(&self, _x: &[f64]) -> Result<f64> {
                Ok(-1000.0)
            }
        }
        let spec = KernelSpec::ideal(Tiny(g(1, 1.0, 1.0)));
        let (_, r) = step_ideal(&spec, &[0.0], &StepStream::new(1, 0, 0)).unwrap();
        assert!(r.clamped);
    }

    #[test]
    fn resample_single_try() {
        let spec = KernelSpec::mtm(1, g(2, 1.0, 1.0)).unwrap();
        for t in 0..20 {
            let r = resample_proposal(&spec, &[0.0, 1.0], &StepStream::new(2, 0, t)).unwrap();
            assert_eq!(r.index, 0);
            assert_eq!(r.proposals.len(), 1);
        }
    }

    #[test]
    fn resample_uniform_when_unweighted() {
        let n = 5;
        let spec = KernelSpec::mtm(n, g(1, 1.0, 0.0)).unwrap();
        let mut counts = vec![0u64; n];
        let calls = 100_000u64;
        for t in 0..calls {
            counts[resample_proposal(&spec, &[0.3], &StepStream::new(4, 0, t)).unwrap().index] += 1;
        }
        let expected = vec![calls as f64 / n as f64; n];
        assert!(stats::chi_square_pvalue(&counts, &expected) > 1e-3);
    }

    #[test]
    fn resample_degenerate() {
        #[derive(Clone)]
        struct Zero(RwModel);
        impl Model for Zero {
            fn dim(&self) -> usize {
                1
            }
            fn log_target(&self, x: &[f64]) -> f64 {
                self.0.log_target(x)
            }
            fn sample_proposal(&self, x: &[f64], rng: &mut StreamRng) -> Vec<f64> {
                self.0.sample_proposal(x, rng)
            }
            fn log_weight(&self, _x: &[f64], _y: &[f64]) -> Result<f64> {
                Ok(f64::NEG_INFINITY)
            }
        }
        let spec = KernelSpec::mtm(3, Zero(g(1, 1.0, 1.0))).unwrap();
        assert!(matches!(
            resample_proposal(&spec, &[0.0], &StepStream::new(1, 0, 0)),
            Err(Error::DegenerateSelection { n: 3 })
        ));
    }

    #[test]
    fn mtm_weight_eval_count() {
        for n in [1, 2, 7, 100] {
            let spec = KernelSpec::mtm(n, g(2, 1.0, 0.5)).unwrap();
            let (_, r) = step_mtm(&spec, &[0.5, 0.5], &StepStream::new(1, 0, 0)).unwrap();
            assert_eq!(r.weight_evals, 2 * n as u64 - 1);
            assert!(r.log_accept <= 0.0);
        }
    }

    #[test]
    fn mtm_single_try_is_mh() {
        let mtm = KernelSpec::mtm(1, g(2, 1.2, 1.0)).unwrap();
        let mh = KernelSpec::mh(g(2, 1.2, 1.0));
        let a = run_chain(&mtm, &[1.0, -1.0], 500, 0, 8, 0).unwrap();
        let b = run_chain(&mh, &[1.0, -1.0], 500, 0, 8, 0).unwrap();
        assert_eq!(a.states, b.states);
    }

    #[test]
    fn semi_ideal_single_try_and_unweighted_are_mh() {
        let x = [0.4, -0.2];
        let y = [1.0, 0.3];
        let lmh = -0.5 * (1.0 + 0.09) + 0.5 * (0.16 + 0.04);
        let s = StepStream::new(1, 0, 0);
        let one = KernelSpec::semi_ideal(1, 3, g(2, 1.0, 1.0)).unwrap();
        assert!((semi_ideal_log_ratio(&one, &x, &y, &s).unwrap().0 - lmh).abs() < 1e-14);
        let flat = KernelSpec::semi_ideal(6, 3, g(2, 1.0, 0.0)).unwrap();
        assert!((semi_ideal_log_ratio(&flat, &x, &y, &s).unwrap().0 - lmh).abs() < 1e-14);
    }

    #[test]
    fn lazy_holds_half_the_time() {
        let spec = KernelSpec::lazy_mtm(3, g(1, 1.0, 0.5)).unwrap();
        let steps = 100_000u64;
        let mut holds = 0u64;
        for t in 0..steps {
            let (_, r) = step_lazy(&spec, &[0.0], &StepStream::new(6, 0, t)).unwrap();
            if r.lazy_hold {
                holds += 1;
                assert_eq!(r.log_accept, f64::NEG_INFINITY);
            }
        }
        let p = holds as f64 / steps as f64;
        assert!((p - 0.5).abs() < 4.0 * (0.25 / steps as f64).sqrt());
    }

    #[test]
    fn step_errors_carry_index() {
        use crate::gaussian::{RwProposal, TargetModel, WeightSpec};
        let t = TargetModel::custom(1, |x: &[f64]| if x[0].abs() > 1.0 { f64::NEG_INFINITY } else { 0.0 }).unwrap();
        let m = RwModel::new(t, RwProposal::new(3.0, 1).unwrap(), WeightSpec::locally_balanced()).unwrap();
        let spec = KernelSpec::mtm(4, m).unwrap();
        match run_chain(&spec, &[0.0], 100, 0, 1, 0) {
            Err(Error::Step { source, .. }) => assert!(matches!(*source, Error::NonFiniteDensity { .. })),
            other => panic!("expected a step error, got {other:?}"),
        }
    }
}
