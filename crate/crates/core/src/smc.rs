//! Sequential Monte Carlo search for the best k-subset.
//!
//! Particles are ordered k-lists of column indices. The sampler moves a
//! population from the sequential without-replacement distribution `f0`
//! (inclusion probabilities proportional to single-regressor R²) towards
//! `f(U) ∝ exp(-SSE(U))` through the bridge `f_j ∝ f^γ_j f0^(1-γ_j)`.
//! Every round reweights, resamples and rejuvenates the population with
//! Metropolis-Hastings swap moves. All densities are kept in log space.

use std::collections::HashSet;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, RngCore};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::RANK_TOLERANCE;
use crate::model::{SolverKind, SubsetModel};
use crate::problem::RegressionProblem;
use crate::rng::{self, StreamRng};

/// Smallest γ step taken when even a tiny increment breaks the ESS bound.
pub const GAMMA_FLOOR: f64 = 1e-6;
/// Bisection tolerance for the next γ.
pub const GAMMA_TOLERANCE: f64 = 1e-6;
/// Floor applied to single-regressor R² before normalizing into `q`.
pub const INCLUSION_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SmcConfig {
    /// Population size M.
    pub particles: usize,
    /// Required ESS as a fraction of M.
    pub ess_fraction: f64,
    /// Weight of the count-based component in the MH proposal.
    pub proposal_mix: f64,
    /// Weight of the add/trim component in a warm-started initial sampler.
    pub warm_start_mix: f64,
    /// Cumulative acceptance (in units of M) that ends a boosting phase.
    pub boost_target: f64,
    /// Maximum MH sweeps per boosting phase.
    pub max_moves: usize,
    /// Safety cap on tempering rounds; γ jumps to 1 once reached.
    pub max_rounds: usize,
    pub seed: u64,
}

impl Default for SmcConfig {
    fn default() -> Self {
        Self {
            particles: 1000,
            ess_fraction: 0.5,
            proposal_mix: 0.5,
            warm_start_mix: 0.1,
            boost_target: 5.0,
            max_moves: 10,
            max_rounds: 1000,
            seed: 0,
        }
    }
}

impl SmcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(Error::ConfigInvalid { field: field.into(), reason: reason.into() });
        if self.particles < 2 {
            return bad("smc.particles", "need at least 2 particles");
        }
        if !(self.ess_fraction > 0.0 && self.ess_fraction < 1.0) {
            return bad("smc.ess_fraction", "must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.proposal_mix) {
            return bad("smc.proposal_mix", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.warm_start_mix) {
            return bad("smc.warm_start_mix", "must lie in [0, 1]");
        }
        if self.max_moves == 0 {
            return bad("smc.max_moves", "must be at least 1");
        }
        if self.max_rounds == 0 {
            return bad("smc.max_rounds", "must be at least 1");
        }
        Ok(())
    }
}

/// OLS SSE of small supports from a precomputed Gram matrix.
#[derive(Debug, Clone)]
pub struct SubsetEvaluator {
    gram: DMatrix<f64>,
    xty: Vec<f64>,
    sst: f64,
    t: usize,
    pivot_scale: f64,
}

impl SubsetEvaluator {
    pub fn new(problem: &RegressionProblem) -> Self {
        let gram = problem.x().tr_mul(problem.x());
        let t1 = (problem.n_obs() as f64 - 1.0).max(1.0);
        Self {
            gram,
            xty: problem.xty().to_vec(),
            sst: problem.sst(),
            t: problem.n_obs(),
            pivot_scale: RANK_TOLERANCE / t1,
        }
    }

    /// SSE of the OLS fit with intercept on `support`; `+inf` when rank deficient.
    pub fn sse(&self, support: &[usize]) -> f64 {
        let k = support.len();
        if k == 0 {
            return self.sst;
        }
        if k >= self.t {
            return f64::INFINITY;
        }
        let mean_diag = support.iter().map(|&j| self.gram[(j, j)]).sum::<f64>() / k as f64;
        let tol = self.pivot_scale * mean_diag.max(f64::MIN_POSITIVE);
        // Cholesky of G_U stored row-major in `l`, forward-solving X_U'y alongside.
        let mut l = vec![0.0; k * k];
        let mut z = vec![0.0; k];
        for i in 0..k {
            for j in 0..=i {
                let mut s = self.gram[(support[i], support[j])];
                for m in 0..j {
                    s -= l[i * k + m] * l[j * k + m];
                }
                if i == j {
                    if !(s > tol) {
                        return f64::INFINITY;
                    }
                    l[i * k + i] = s.sqrt();
                } else {
                    l[i * k + j] = s / l[j * k + j];
                }
            }
            let mut s = self.xty[support[i]];
            for m in 0..i {
                s -= l[i * k + m] * z[m];
            }
            z[i] = s / l[i * k + i];
        }
        (self.sst - z.iter().map(|v| v * v).sum::<f64>()).max(0.0)
    }
}

/// Categorical distribution over columns supporting sequential draws
/// without replacement.
#[derive(Debug, Clone)]
pub struct Categorical {
    probs: Vec<f64>,
    cum: Vec<f64>,
    positive: usize,
}

impl Categorical {
    /// Normalizes nonnegative weights; `None` if they sum to zero.
    pub fn new(weights: &[f64]) -> Option<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return None;
        }
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut acc = 0.0;
        let cum = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        let positive = probs.iter().filter(|p| **p > 0.0).count();
        Some(Self { probs, cum, positive })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Whether `n` more draws are possible once `excluded` is removed.
    pub fn can_draw(&self, excluded: &[usize], n: usize) -> bool {
        let blocked = excluded.iter().filter(|&&j| self.probs[j] > 0.0).count();
        self.positive >= blocked + n
    }

    /// One draw conditional on avoiding `excluded`.
    pub fn draw_excluding<R: Rng + ?Sized>(&self, excluded: &[usize], rng: &mut R) -> usize {
        let last = *self.cum.last().expect("nonempty");
        for _ in 0..64 {
            let u = rng.random::<f64>() * last;
            let j = self.cum.partition_point(|c| *c <= u).min(self.probs.len() - 1);
            if self.probs[j] > 0.0 && !excluded.contains(&j) {
                return j;
            }
        }
        let remaining: f64 = (0..self.probs.len()).filter(|j| !excluded.contains(j)).map(|j| self.probs[j]).sum();
        let mut u = rng.random::<f64>() * remaining;
        let mut fallback = None;
        for (j, &p) in self.probs.iter().enumerate() {
            if p > 0.0 && !excluded.contains(&j) {
                fallback = Some(j);
                if u < p {
                    return j;
                }
                u -= p;
            }
        }
        fallback.expect("can_draw was checked")
    }

    /// Appends `n` sequential draws avoiding `excluded` and earlier draws.
    pub fn draw_sequence<R: Rng + ?Sized>(&self, excluded: &[usize], n: usize, rng: &mut R) -> Vec<usize> {
        let mut blocked = excluded.to_vec();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let j = self.draw_excluding(&blocked, rng);
            blocked.push(j);
            out.push(j);
        }
        out
    }

    /// Log-probability of drawing `draws` in order, each avoiding `excluded`
    /// and the draws before it.
    pub fn log_sequence(&self, excluded: &[usize], draws: &[usize]) -> f64 {
        let mut blocked_mass: f64 = excluded.iter().map(|&j| self.probs[j]).sum();
        let mut blocked: Vec<usize> = excluded.to_vec();
        let mut lp = 0.0;
        for &j in draws {
            let p = self.probs[j];
            if !(p > 0.0) || blocked.contains(&j) {
                return f64::NEG_INFINITY;
            }
            let mut remaining = 1.0 - blocked_mass;
            if remaining < 1e-8 {
                remaining = (0..self.probs.len()).filter(|i| !blocked.contains(i)).map(|i| self.probs[i]).sum();
            }
            lp += p.ln() - remaining.ln();
            blocked_mass += p;
            blocked.push(j);
        }
        lp
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Effective sample size `(Σw)² / Σw²` from log-weights.
pub fn ess_from_log(log_w: &[f64]) -> f64 {
    let m = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return 0.0;
    }
    let (s1, s2) = log_w.iter().fold((0.0, 0.0), |(a, b), lw| {
        let w = (lw - m).exp();
        (a + w, b + w * w)
    });
    s1 * s1 / s2
}

/// Systematic resampling; returns the index of the parent of each offspring.
pub fn systematic_resample<R: Rng + ?Sized>(weights: &[f64], m: usize, rng: &mut R) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    assert!(total > 0.0, "resampling needs a positive weight");
    let step = total / m as f64;
    let mut u = rng.random::<f64>() * step;
    let mut out = Vec::with_capacity(m);
    let mut acc = 0.0;
    let mut i = 0;
    for _ in 0..m {
        while i + 1 < weights.len() && acc + weights[i] <= u {
            acc += weights[i];
            i += 1;
        }
        out.push(i);
        u += step;
    }
    out
}

/// One member of the population.
#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    /// Ordered list of distinct column indices.
    pub support: Vec<usize>,
    pub sse: f64,
    /// Log-density of `support` under the initial sampler.
    pub log_base: f64,
}

impl Particle {
    pub fn sorted_support(&self) -> Vec<usize> {
        let mut s = self.support.clone();
        s.sort_unstable();
        s
    }
}

/// Per-round summary.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub gamma: f64,
    /// ESS of the reweighted population before resampling.
    pub ess: f64,
    /// Distinct supports (as sets) after boosting.
    pub distinct: usize,
    pub best_sse: f64,
    /// Accepted moves divided by M, summed over the boosting sweeps.
    pub acceptance: f64,
    pub sweeps: usize,
}

#[derive(Debug, Clone)]
pub struct SmcRun {
    pub model: SubsetModel,
    /// Best particle in draw order, used to warm-start neighbouring k.
    pub best_ordered: Vec<usize>,
    pub rounds: Vec<RoundRecord>,
    /// Candidate supports whose SSE was evaluated.
    pub evaluations: usize,
    /// Set when every single-regressor R² was zero and `q` fell back to uniform.
    pub degenerate_r2: bool,
    /// Set when the round cap forced γ to 1.
    pub round_cap_hit: bool,
}

#[derive(Debug, Clone)]
struct WarmStart {
    previous: Vec<usize>,
}

/// Everything a run needs besides the population.
pub struct Sampler<'a> {
    problem: &'a RegressionProblem,
    k: usize,
    config: SmcConfig,
    evaluator: SubsetEvaluator,
    q: Categorical,
    degenerate_r2: bool,
    warm: Option<WarmStart>,
}

/// Outcome of one boosting phase.
#[derive(Debug, Clone, PartialEq)]
pub struct BoostStats {
    pub sweeps: usize,
    pub acceptance: f64,
    pub evaluations: usize,
    pub best: Option<(Vec<usize>, f64)>,
}

fn check_k(problem: &RegressionProblem, k: usize) -> Result<()> {
    if k < 1 || k >= problem.n_obs() || k > problem.n_features() {
        return Err(Error::InvalidK { k, reason: format!("need 1 <= k <= p and k < T = {}", problem.n_obs()) });
    }
    Ok(())
}

fn log_choose(n: usize, r: usize) -> f64 {
    (0..r).map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln()).sum()
}

impl<'a> Sampler<'a> {
    pub fn new(problem: &'a RegressionProblem, k: usize, config: &SmcConfig) -> Result<Self> {
        config.validate()?;
        check_k(problem, k)?;
        let r2 = problem.univariate_r2();
        let degenerate_r2 = r2.iter().all(|v| *v <= 0.0);
        let weights: Vec<f64> = if degenerate_r2 {
            log::warn!("every single-regressor R² is zero; using uniform inclusion probabilities");
            vec![1.0; r2.len()]
        } else {
            r2.iter().map(|v| v.max(INCLUSION_FLOOR)).collect()
        };
        let q = Categorical::new(&weights).expect("positive weights");
        Ok(Self {
            problem,
            k,
            config: config.clone(),
            evaluator: SubsetEvaluator::new(problem),
            q,
            degenerate_r2,
            warm: None,
        })
    }

    /// Mixes the add/trim sampler around `previous` into the initial sampler.
    pub fn with_warm_start(mut self, previous: &[usize]) -> Result<Self> {
        let mut seen = HashSet::new();
        if previous.is_empty() || previous.iter().any(|&j| j >= self.problem.n_features() || !seen.insert(j)) {
            return Err(Error::InvalidInput("warm start needs distinct in-range indices".into()));
        }
        self.warm = Some(WarmStart { previous: previous.to_vec() });
        Ok(self)
    }

    pub fn inclusion_probs(&self) -> &[f64] {
        self.q.probs()
    }

    pub fn evaluator(&self) -> &SubsetEvaluator {
        &self.evaluator
    }

    pub fn degenerate_r2(&self) -> bool {
        self.degenerate_r2
    }

    /// `log f0(U)` for an ordered list.
    pub fn log_f0(&self, support: &[usize]) -> f64 {
        self.q.log_sequence(&[], support)
    }

    /// Log-density of the add/trim sampler around the warm-start support.
    pub fn log_add_trim(&self, support: &[usize]) -> f64 {
        let Some(w) = &self.warm else { return f64::NEG_INFINITY };
        let prev = &w.previous;
        let (k0, k1) = (prev.len(), support.len());
        if k1 < k0 {
            // Order-preserving subsequence of the previous support.
            let mut it = prev.iter();
            if support.iter().all(|s| it.any(|p| p == s)) {
                -log_choose(k0, k0 - k1)
            } else {
                f64::NEG_INFINITY
            }
        } else if support[..k0] == prev[..] {
            self.q.log_sequence(prev, &support[k0..])
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Log-density of the initial sampler: `f0`, or the warm-start mixture.
    pub fn log_base(&self, support: &[usize]) -> f64 {
        let f0 = self.log_f0(support);
        match &self.warm {
            None => f0,
            Some(_) => {
                let w = self.config.warm_start_mix;
                let a = if w > 0.0 { w.ln() + self.log_add_trim(support) } else { f64::NEG_INFINITY };
                let b = if w < 1.0 { (1.0 - w).ln() + f0 } else { f64::NEG_INFINITY };
                log_add(a, b)
            }
        }
    }

    fn draw_add_trim<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let prev = &self.warm.as_ref().expect("warm start").previous;
        let k0 = prev.len();
        if self.k < k0 {
            let mut keep = index::sample(rng, k0, self.k).into_vec();
            keep.sort_unstable();
            keep.into_iter().map(|i| prev[i]).collect()
        } else {
            let mut out = prev.clone();
            out.extend(self.q.draw_sequence(prev, self.k - k0, rng));
            out
        }
    }

    /// One draw from the initial sampler.
    pub fn draw_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        if self.warm.is_some() && rng.random::<f64>() < self.config.warm_start_mix {
            self.draw_add_trim(rng)
        } else {
            self.q.draw_sequence(&[], self.k, rng)
        }
    }

    pub fn particle(&self, support: Vec<usize>) -> Particle {
        let sse = self.evaluator.sse(&support);
        let log_base = self.log_base(&support);
        Particle { support, sse, log_base }
    }

    pub fn initial_population<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Vec<Particle> {
        (0..m).map(|_| self.particle(self.draw_initial(rng))).collect()
    }

    /// Log incremental weight per unit of γ: `-SSE - log base`.
    fn log_increment(p: &Particle) -> f64 {
        if p.sse.is_finite() {
            -p.sse - p.log_base
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn ess_at(particles: &[Particle], delta: f64) -> f64 {
        let lw: Vec<f64> = particles
            .iter()
            .map(|p| {
                let s = Self::log_increment(p);
                if delta == 0.0 && s == f64::NEG_INFINITY {
                    0.0
                } else {
                    delta * s
                }
            })
            .collect();
        ess_from_log(&lw)
    }

    /// Largest next γ in `(gamma, 1]` whose reweighting keeps ESS ≥ ηM.
    pub fn choose_next_gamma(&self, particles: &[Particle], gamma: f64) -> f64 {
        let target = self.config.ess_fraction * particles.len() as f64;
        if Self::ess_at(particles, 1.0 - gamma) >= target {
            return 1.0;
        }
        let (mut lo, mut hi) = (gamma, 1.0);
        while hi - lo > GAMMA_TOLERANCE {
            let mid = 0.5 * (lo + hi);
            if Self::ess_at(particles, mid - gamma) >= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if lo - gamma < GAMMA_FLOOR {
            (gamma + GAMMA_FLOOR).min(1.0)
        } else {
            lo
        }
    }

    /// Weights `exp(delta * (-SSE - log base))`, normalized to max 1.
    pub fn weights(particles: &[Particle], delta: f64) -> Vec<f64> {
        let lw: Vec<f64> = particles.iter().map(|p| delta * Self::log_increment(p)).collect();
        let m = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        lw.iter().map(|l| (l - m).exp()).collect()
    }

    fn count_proposal(&self, particles: &[Particle]) -> Option<Categorical> {
        let mut counts = vec![0.0; self.problem.n_features()];
        for p in particles {
            for &j in &p.support {
                counts[j] += 1.0;
            }
        }
        Categorical::new(&counts)
    }

    /// `log h^(ω)(fill | kept)`: mixture of count-based and `q`-based sequential draws.
    fn log_proposal(&self, counts: Option<&Categorical>, kept: &[usize], fill: &[usize]) -> f64 {
        let lq = self.q.log_sequence(kept, fill);
        match counts {
            Some(c) if c.can_draw(kept, fill.len()) => {
                let w = self.config.proposal_mix;
                let a = if w > 0.0 { w.ln() + c.log_sequence(kept, fill) } else { f64::NEG_INFINITY };
                let b = if w < 1.0 { (1.0 - w).ln() + lq } else { f64::NEG_INFINITY };
                log_add(a, b)
            }
            _ => lq,
        }
    }

    /// One MH swap move. Returns whether it was accepted and the evaluated candidate.
    pub fn mh_move<R: Rng + ?Sized>(
        &self,
        particle: &mut Particle,
        gamma: f64,
        counts: Option<&Categorical>,
        rng: &mut R,
    ) -> (bool, Vec<usize>, f64) {
        let k = particle.support.len();
        let a_max = k.div_ceil(2).max(1);
        let a_size = rng.random_range(1..=a_max);
        let mut positions = index::sample(rng, k, a_size).into_vec();
        positions.sort_unstable();
        let kept: Vec<usize> =
            (0..k).filter(|i| positions.binary_search(i).is_err()).map(|i| particle.support[i]).collect();
        let removed: Vec<usize> = positions.iter().map(|&i| particle.support[i]).collect();
        let use_counts = match counts {
            Some(c) if c.can_draw(&kept, a_size) => rng.random::<f64>() < self.config.proposal_mix,
            _ => false,
        };
        let fill = if use_counts {
            counts.expect("checked").draw_sequence(&kept, a_size, rng)
        } else {
            self.q.draw_sequence(&kept, a_size, rng)
        };
        let mut candidate = particle.support.clone();
        for (&pos, &j) in positions.iter().zip(&fill) {
            candidate[pos] = j;
        }
        let sse = self.evaluator.sse(&candidate);
        let u: f64 = rng.random();
        if candidate == particle.support {
            return (true, candidate, sse);
        }
        if !sse.is_finite() {
            return (false, candidate, sse);
        }
        let log_base = self.log_base(&candidate);
        let log_a = -gamma * (sse - particle.sse) + (1.0 - gamma) * (log_base - particle.log_base)
            + self.log_proposal(counts, &kept, &removed)
            - self.log_proposal(counts, &kept, &fill);
        let accepted = u.ln() < log_a;
        if accepted {
            particle.support = candidate.clone();
            particle.sse = sse;
            particle.log_base = log_base;
        }
        (accepted, candidate, sse)
    }

    /// Runs `sweeps` MH sweeps over the population, one move per particle each,
    /// stopping early once cumulative acceptance reaches `target` (in units of M).
    pub fn boost<R: RngCore>(
        &self,
        particles: &mut [Particle],
        gamma: f64,
        max_sweeps: usize,
        target: f64,
        rng: &mut R,
    ) -> BoostStats {
        let m = particles.len() as f64;
        let mut stats = BoostStats { sweeps: 0, acceptance: 0.0, evaluations: 0, best: None };
        while stats.sweeps < max_sweeps && stats.acceptance < target {
            let counts = self.count_proposal(particles);
            let seeds: Vec<u64> = (0..particles.len()).map(|_| rng.next_u64()).collect();
            let results: Vec<(bool, Vec<usize>, f64)> = particles
                .par_iter_mut()
                .zip(seeds)
                .map(|(p, seed)| {
                    let mut prng = rng::from_seed(seed);
                    self.mh_move(p, gamma, counts.as_ref(), &mut prng)
                })
                .collect();
            let accepted = results.iter().filter(|r| r.0).count();
            for (_, cand, sse) in results {
                if sse.is_finite() && stats.best.as_ref().is_none_or(|(_, b)| sse < *b) {
                    stats.best = Some((cand, sse));
                }
            }
            stats.evaluations += particles.len();
            stats.acceptance += accepted as f64 / m;
            stats.sweeps += 1;
        }
        stats
    }

    /// Full tempering run from the initial sampler to γ = 1.
    pub fn run(&self, rng: &mut StreamRng) -> Result<SmcRun> {
        let cfg = &self.config;
        let m = cfg.particles;
        let mut particles = self.initial_population(m, rng);
        let mut evaluations = m;
        let mut best: Option<(Vec<usize>, f64)> = None;
        let consider = |cand: &[usize], sse: f64, best: &mut Option<(Vec<usize>, f64)>| {
            if sse.is_finite() && best.as_ref().is_none_or(|(_, b)| sse < *b) {
                *best = Some((cand.to_vec(), sse));
            }
        };
        for p in &particles {
            consider(&p.support, p.sse, &mut best);
        }
        if best.is_none() {
            return Err(Error::RankDeficient { support: particles[0].sorted_support() });
        }

        let mut gamma = 0.0;
        let mut rounds = Vec::new();
        let mut round_cap_hit = false;
        while gamma < 1.0 {
            let next = if rounds.len() + 1 >= cfg.max_rounds {
                round_cap_hit = true;
                log::warn!("SMC round cap {} reached at gamma = {gamma:e}; jumping to 1", cfg.max_rounds);
                1.0
            } else {
                self.choose_next_gamma(&particles, gamma)
            };
            let delta = next - gamma;
            let ess = Self::ess_at(&particles, delta);
            let weights = Self::weights(&particles, delta);
            let parents = systematic_resample(&weights, m, rng);
            particles = parents.iter().map(|&i| particles[i].clone()).collect();
            gamma = next;
            let stats = self.boost(&mut particles, gamma, cfg.max_moves, cfg.boost_target, rng);
            evaluations += stats.evaluations;
            if let Some((c, s)) = &stats.best {
                consider(c, *s, &mut best);
            }
            rounds.push(RoundRecord {
                round: rounds.len() + 1,
                gamma,
                ess,
                distinct: distinct_supports(&particles),
                best_sse: best.as_ref().map(|b| b.1).unwrap_or(f64::INFINITY),
                acceptance: stats.acceptance,
                sweeps: stats.sweeps,
            });
        }

        // Duplicate the final sample and boost once more.
        let mut doubled: Vec<Particle> = particles.iter().chain(particles.iter()).cloned().collect();
        let stats = self.boost(&mut doubled, 1.0, cfg.max_moves, cfg.boost_target, rng);
        evaluations += stats.evaluations;
        if let Some((c, s)) = &stats.best {
            consider(c, *s, &mut best);
        }
        let (best_ordered, _) = best.expect("checked above");
        let mut support = best_ordered.clone();
        support.sort_unstable();
        let model = SubsetModel::refit(self.problem, &support, SolverKind::Smc)?;
        Ok(SmcRun { model, best_ordered, rounds, evaluations, degenerate_r2: self.degenerate_r2, round_cap_hit })
    }
}

pub fn distinct_supports(particles: &[Particle]) -> usize {
    particles.iter().map(|p| p.sorted_support()).collect::<HashSet<_>>().len()
}

/// Best k-subset from a cold start.
pub fn smc_best_subset(problem: &RegressionProblem, k: usize, config: &SmcConfig) -> Result<SmcRun> {
    let sampler = Sampler::new(problem, k, config)?;
    sampler.run(&mut rng::stream(config.seed, "smc", k as u64))
}

/// Best k'-subset with the initial sampler mixed around a previous solution.
pub fn smc_warm_start(
    problem: &RegressionProblem,
    k_prime: usize,
    previous: &[usize],
    config: &SmcConfig,
) -> Result<SmcRun> {
    let sampler = Sampler::new(problem, k_prime, config)?.with_warm_start(previous)?;
    sampler.run(&mut rng::stream(config.seed, "smc", k_prime as u64))
}

/// Solutions for k = 1..=k_max, each warm-started from the previous one.
pub fn smc_path(problem: &RegressionProblem, k_max: usize, config: &SmcConfig) -> Result<Vec<SmcRun>> {
    let mut runs: Vec<SmcRun> = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let run = match runs.last() {
            None => smc_best_subset(problem, k, config)?,
            Some(prev) => smc_warm_start(problem, k, &prev.best_ordered, config)?,
        };
        runs.push(run);
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exhaustive::best_subset;
    use crate::linalg::subset_sse;
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(t: usize, p: usize, seed: u64, signal: &[(usize, f64)], noise: f64) -> RegressionProblem {
        let mut rng = StreamRng::seed_from_u64(seed);
        let x = DMatrix::from_fn(t, p, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_fn(t, |i, _| {
            let e: f64 = StandardNormal.sample(&mut rng);
            signal.iter().map(|&(j, b)| b * x[(i, j)]).sum::<f64>() + noise * e
        });
        RegressionProblem::standardized(x, y, None).unwrap().0
    }

    fn small_config(m: usize, seed: u64) -> SmcConfig {
        SmcConfig { particles: m, seed, ..SmcConfig::default() }
    }

    #[test]
    fn f0_of_ordered_pair() {
        let q = Categorical::new(&[0.5, 0.3, 0.2]).unwrap();
        assert!((q.log_sequence(&[], &[0, 1]).exp() - 0.3).abs() < 1e-12);
        // Every ordering of all p indices: the densities sum to one.
        let mut total = 0.0;
        for perm in [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
            total += q.log_sequence(&[], &perm).exp();
        }
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn first_draw_frequencies_match_q() {
        let q = Categorical::new(&[0.4, 0.1, 0.3, 0.2]).unwrap();
        let mut rng = StreamRng::seed_from_u64(3);
        let n = 10_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[q.draw_sequence(&[], 2, &mut rng)[0]] += 1;
        }
        for (c, p) in counts.iter().zip(q.probs()) {
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((*c as f64 - n as f64 * p).abs() < 3.0 * sd);
        }
    }

    #[test]
    fn evaluator_matches_cholesky_refit() {
        let p = gaussian(40, 12, 1, &[(0, 1.0), (4, 0.5)], 1.0);
        let ev = SubsetEvaluator::new(&p);
        for s in [vec![0], vec![4, 0, 7], vec![1, 2, 3, 5, 11]] {
            assert!((ev.sse(&s) - subset_sse(&p, &s).unwrap()).abs() < 1e-8);
        }
        assert!((ev.sse(&[]) - p.sst()).abs() < 1e-12);
    }

    #[test]
    fn ess_identities() {
        assert!((ess_from_log(&[0.3; 10]) - 10.0).abs() < 1e-12);
        assert!((ess_from_log(&[0.0, f64::NEG_INFINITY, f64::NEG_INFINITY]) - 1.0).abs() < 1e-12);
        let same = vec![Particle { support: vec![0], sse: 2.0, log_base: -1.0 }; 8];
        let p = gaussian(20, 3, 2, &[(0, 1.0)], 1.0);
        let s = Sampler::new(&p, 1, &small_config(8, 0)).unwrap();
        assert_eq!(s.choose_next_gamma(&same, 0.0), 1.0);
        let pair = vec![
            Particle { support: vec![0], sse: 1.0, log_base: 0.0 },
            Particle { support: vec![1], sse: 1.0, log_base: 0.0 },
        ];
        assert!((Sampler::ess_at(&pair, 0.7) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn next_gamma_is_maximal_under_ess_bound() {
        let p = gaussian(30, 10, 4, &[(0, 1.0)], 1.0);
        let cfg = small_config(200, 0);
        let s = Sampler::new(&p, 2, &cfg).unwrap();
        let mut rng = StreamRng::seed_from_u64(5);
        for _ in 0..10 {
            let pop = s.initial_population(200, &mut rng);
            let g0: f64 = rng.random::<f64>() * 0.5;
            let g = s.choose_next_gamma(&pop, g0);
            assert!(g > g0);
            assert!(Sampler::ess_at(&pop, g - g0) >= 100.0 || g - g0 <= GAMMA_FLOOR + 1e-15);
            assert!(g == 1.0 || Sampler::ess_at(&pop, g + 1e-4 - g0) < 100.0);
        }
    }

    #[test]
    fn systematic_resampling_edge_cases() {
        let mut rng = StreamRng::seed_from_u64(6);
        let mut w = vec![0.0; 10];
        w[0] = 1.0;
        assert!(systematic_resample(&w, 10, &mut rng).iter().all(|&i| i == 0));
        let idx = systematic_resample(&[1.0; 7], 7, &mut rng);
        assert_eq!(idx, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn identity_proposal_always_accepted() {
        // With k = p = 1 the only fill is the removed element itself.
        let p = gaussian(20, 1, 7, &[(0, 1.0)], 1.0);
        let s = Sampler::new(&p, 1, &small_config(4, 0)).unwrap();
        let mut rng = StreamRng::seed_from_u64(8);
        let mut part = s.particle(vec![0]);
        for _ in 0..20 {
            let (acc, cand, _) = s.mh_move(&mut part, 0.3, None, &mut rng);
            assert!(acc);
            assert_eq!(cand, vec![0]);
        }
    }

    #[test]
    fn population_keeps_k_distinct_indices() {
        let p = gaussian(50, 20, 9, &[(1, 1.0), (3, 1.0)], 1.0);
        let cfg = small_config(100, 11);
        let s = Sampler::new(&p, 4, &cfg).unwrap();
        let mut rng = StreamRng::seed_from_u64(10);
        let mut pop = s.initial_population(100, &mut rng);
        s.boost(&mut pop, 0.5, 10, 5.0, &mut rng);
        for part in &pop {
            let set: HashSet<_> = part.support.iter().collect();
            assert_eq!(set.len(), 4);
            assert!((part.sse - subset_sse(&p, &part.sorted_support()).unwrap()).abs() < 1e-8);
        }
    }

    #[test]
    fn single_column_runs_pick_best_r2() {
        for seed in 0..5 {
            let p = gaussian(60, 15, seed, &[(3, 1.0), (8, 0.6)], 1.0);
            let run = smc_best_subset(&p, 1, &small_config(100, seed)).unwrap();
            let r2 = p.univariate_r2();
            let best = (0..15).max_by(|a, b| r2[*a].total_cmp(&r2[*b])).unwrap();
            assert_eq!(run.model.support, vec![best]);
        }
    }

    #[test]
    fn tempering_schedule_and_best_sse_monotone() {
        let p = gaussian(60, 15, 12, &[(0, 1.0), (5, 1.0), (9, 1.0)], 1.0);
        let run = smc_best_subset(&p, 3, &small_config(300, 1)).unwrap();
        let g: Vec<f64> = run.rounds.iter().map(|r| r.gamma).collect();
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(*g.last().unwrap(), 1.0);
        assert!(run.rounds.iter().all(|r| r.ess >= 150.0 - 1e-9));
        assert!(run.rounds.windows(2).all(|w| w[1].best_sse <= w[0].best_sse));
        let oracle = best_subset(&p, 3).unwrap();
        assert_eq!(run.model.support, oracle.support);
    }

    #[test]
    fn trimming_by_one_is_uniform() {
        let p = gaussian(30, 12, 13, &[(2, 1.0)], 1.0);
        let cfg = SmcConfig { warm_start_mix: 1.0, ..small_config(10, 0) };
        let s = Sampler::new(&p, 2, &cfg).unwrap().with_warm_start(&[2, 5, 9]).unwrap();
        let mut rng = StreamRng::seed_from_u64(14);
        let n = 10_000;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..n {
            *counts.entry(s.draw_initial(&mut rng)).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 3);
        let sd = (n as f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for key in [vec![2, 5], vec![2, 9], vec![5, 9]] {
            assert!((counts[&key] as f64 - n as f64 / 3.0).abs() < 3.0 * sd);
            assert!((s.log_add_trim(&key) - (1.0f64 / 3.0).ln()).abs() < 1e-12);
        }
        assert_eq!(s.log_add_trim(&[5, 2]), f64::NEG_INFINITY);
    }

    #[test]
    fn same_size_warm_start_mixture() {
        let p = gaussian(30, 12, 15, &[(2, 1.0)], 1.0);
        let cfg = small_config(10, 0);
        let s = Sampler::new(&p, 3, &cfg).unwrap().with_warm_start(&[2, 5, 9]).unwrap();
        let mut rng = StreamRng::seed_from_u64(16);
        let n = 5000;
        let hits = (0..n).filter(|_| s.draw_initial(&mut rng) == vec![2, 5, 9]).count();
        assert!(hits as f64 > 0.07 * n as f64 && (hits as f64) < 0.14 * n as f64);
        let expected = log_add(0.1f64.ln(), 0.9f64.ln() + s.log_f0(&[2, 5, 9]));
        assert!((s.log_base(&[2, 5, 9]) - expected).abs() < 1e-12);
    }

    #[test]
    fn invalid_k_rejected() {
        let p = gaussian(10, 20, 17, &[(0, 1.0)], 1.0);
        assert!(smc_best_subset(&p, 0, &small_config(10, 0)).is_err());
        assert!(smc_best_subset(&p, 10, &small_config(10, 0)).is_err());
        assert!(smc_warm_start(&p, 12, &[1, 2], &small_config(10, 0)).is_err());
    }
}
