//! Running expanded cases under timing noise and judging them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{
    bind_case, expand_cases, label_from_pairs, Catalog, CaseOptions, ConcreteCase, PairSet, VulnPattern,
    VulnType,
};
use crate::error::{Error, Result};
use crate::geometry::CacheGeometry;
use crate::machine::{
    AddressClass, BoundSequence, Candidate, Counters, InitialState, Machine, MachineConfig, SecureCacheConfig,
    DEFAULT_REP, ENSEMBLE_RUNS,
};
use crate::rng::derive_seed;
use crate::stats::{judge, welch_t_test, Verdict, DEFAULT_P_THRESHOLD, PAIRS};

pub const DEFAULT_TRIALS: usize = 1000;
pub const MIN_TRIALS: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct TimingSamples {
    pub case_id: u32,
    /// Summed Step 3 latency per trial, indexed by [`Candidate::index`].
    pub samples: [Vec<f64>; 3],
    pub n_trials: usize,
    pub seed: u64,
    /// Machine counters summed over every simulated run.
    pub audit: Counters,
}

impl TimingSamples {
    pub fn of(&self, c: Candidate) -> &[f64] {
        &self.samples[c.index()]
    }

    pub fn mean(&self, c: Candidate) -> f64 {
        let s = self.of(c);
        s.iter().sum::<f64>() / s.len() as f64
    }
}

/// Adds truncated Gaussian noise to each timed window; a draw that would
/// leave the value at or below zero is redrawn.
pub struct NoiseSource {
    rng: ChaCha8Rng,
    normal: Option<Normal<f64>>,
}

impl NoiseSource {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("noise sigma must be finite and >= 0, got {sigma}")));
        }
        let normal = if sigma > 0.0 {
            Some(Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?)
        } else {
            None
        };
        Ok(Self { rng: ChaCha8Rng::seed_from_u64(seed), normal })
    }

    pub fn perturb(&mut self, latency: u64) -> f64 {
        let base = latency as f64;
        let Some(normal) = self.normal else { return base };
        loop {
            let v = base + normal.sample(&mut self.rng);
            if v > 0.0 {
                return v;
            }
        }
    }

    /// Noisy sum of the given window totals.
    pub fn trial(&mut self, windows: &[u64]) -> f64 {
        windows.iter().map(|&l| self.perturb(l)).sum()
    }
}

/// The timed step has nothing to time when it targets an empty eviction set.
pub fn untestable(seq: &BoundSequence) -> bool {
    seq.plan.eviction_set_empty()
        && matches!(seq.steps[2], Some(s) if s.class == AddressClass::EvictionSet)
}

fn noise_seed(seed: u64, cfg: &MachineConfig, case_id: u32, c: Candidate) -> u64 {
    derive_seed(derive_seed(seed, cfg.noise.seed), (case_id as u64) << 2 | c.index() as u64)
}

/// Samples for an already bound case. The machine is deterministic for a
/// fixed seed, so the noise-free Step 3 latencies are measured once per
/// candidate and each trial draws fresh noise on top of them. Random-fill
/// machines are re-run every trial with a fresh fill stream; a trial is
/// then one ensemble run, cycling through the ensemble seeds.
pub fn collect_bound(
    machine: &mut Machine,
    cfg: &MachineConfig,
    seq: &BoundSequence,
    case_id: u32,
    n_trials: usize,
    seed: u64,
) -> Result<Option<TimingSamples>> {
    if n_trials < MIN_TRIALS {
        return Err(Error::Config(format!("n_trials must be >= {MIN_TRIALS}, got {n_trials}")));
    }
    if untestable(seq) {
        return Ok(None);
    }
    let mut samples: [Vec<f64>; 3] = Default::default();
    let mut audit = Counters::default();
    let per_trial_fill = matches!(cfg.secure, SecureCacheConfig::Rf { .. });
    for c in Candidate::ALL {
        let mut noise = NoiseSource::new(cfg.noise.sigma, noise_seed(seed, cfg, case_id, c))?;
        let out = &mut samples[c.index()];
        if per_trial_fill {
            for trial in 0..n_trials {
                let k = trial as u64 % ENSEMBLE_RUNS;
                let t = machine.ensemble_run(seq, c, InitialState::Cold, seed, k, trial as u64 + 1)?;
                out.push(noise.trial(&t.run_totals));
                audit.absorb(&t.audit);
            }
        } else {
            let ideal = machine.measure(seq, c, InitialState::Cold, seed)?;
            audit.absorb(&ideal.audit);
            out.extend((0..n_trials).map(|_| noise.trial(&ideal.run_totals)));
        }
    }
    Ok(Some(TimingSamples { case_id, samples, n_trials, seed, audit }))
}

/// Timing samples of one case; `None` when the case is untestable.
pub fn collect_samples(
    cfg: &MachineConfig,
    pattern: &VulnPattern,
    case: &ConcreteCase,
    n_trials: usize,
    seed: u64,
) -> Result<Option<TimingSamples>> {
    let seq = bind_case(cfg, pattern, case, None, DEFAULT_REP)?;
    seq.validate(cfg)?;
    let mut m = Machine::new(cfg.clone())?;
    collect_bound(&mut m, cfg, &seq, case.case_id, n_trials, seed)
}

pub fn judge_case(samples: &TimingSamples, p_threshold: f64) -> Result<Verdict> {
    if !(p_threshold > 0.0 && p_threshold < 1.0) {
        return Err(Error::Config(format!("p threshold must lie in (0, 1), got {p_threshold}")));
    }
    let tests = PAIRS.map(|(x, y)| welch_t_test(samples.of(x), samples.of(y)));
    Ok(judge(samples.case_id, tests, p_threshold))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOptions {
    pub n_trials: usize,
    pub p_threshold: f64,
    pub seed: u64,
    pub big_little: bool,
    /// Geometry the benchmark assumes; `None` uses the device's own.
    pub bench_geometry: Option<CacheGeometry>,
    pub rep: usize,
    /// Row label in matrices.
    pub config_name: String,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            n_trials: DEFAULT_TRIALS,
            p_threshold: DEFAULT_P_THRESHOLD,
            seed: 0,
            big_little: false,
            bench_geometry: None,
            rep: DEFAULT_REP,
            config_name: "default".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CaseOutcome {
    Judged(Verdict),
    Untestable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub case: ConcreteCase,
    pub outcome: CaseOutcome,
    pub audit: Counters,
}

impl CaseResult {
    pub fn verdict(&self) -> Option<&Verdict> {
        match &self.outcome {
            CaseOutcome::Judged(v) => Some(v),
            CaseOutcome::Untestable => None,
        }
    }

    pub fn effective(&self) -> bool {
        self.verdict().is_some_and(|v| v.effective)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternResult {
    pub pattern_id: u32,
    pub label: VulnType,
    pub effective: bool,
    /// Type shown by the union of the effective cases' separable pairs.
    pub observed: Option<VulnType>,
    pub effective_cases: usize,
    pub total_cases: usize,
    /// Every effective case writes: drawn as a half marker.
    pub write_only: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub config_name: String,
    pub cases: Vec<CaseResult>,
    pub patterns: Vec<PatternResult>,
}

impl SuiteResult {
    pub fn effective_ids(&self) -> Vec<u32> {
        self.patterns.iter().filter(|p| p.effective).map(|p| p.pattern_id).collect()
    }

    pub fn effective_count(&self) -> usize {
        self.patterns.iter().filter(|p| p.effective).count()
    }

    pub fn effective_of_type(&self, t: VulnType) -> usize {
        self.patterns.iter().filter(|p| p.effective && p.label == t).count()
    }

    pub fn pattern(&self, id: u32) -> Option<&PatternResult> {
        self.patterns.iter().find(|p| p.pattern_id == id)
    }

    pub fn audit(&self) -> Counters {
        let mut total = Counters::default();
        for c in &self.cases {
            total.absorb(&c.audit);
        }
        total
    }

    pub fn effective_case_count(&self) -> usize {
        self.cases.iter().filter(|c| c.effective()).count()
    }
}

fn summarize(p: &VulnPattern, cases: &[CaseResult]) -> PatternResult {
    let eff: Vec<&CaseResult> = cases.iter().filter(|c| c.effective()).collect();
    let pairs: PairSet = eff.iter().filter_map(|c| c.verdict()).fold(0, |acc, v| acc | v.pairs);
    PatternResult {
        pattern_id: p.id,
        label: p.vuln_type,
        effective: !eff.is_empty(),
        observed: label_from_pairs(pairs),
        effective_cases: eff.len(),
        total_cases: cases.len(),
        write_only: !eff.is_empty() && eff.iter().all(|c| c.case.has_write()),
    }
}

/// Expand, run and judge every case of the catalog on one machine.
pub fn run_suite(cfg: &MachineConfig, catalog: &Catalog, opts: &SuiteOptions) -> Result<SuiteResult> {
    cfg.validate()?;
    if !(opts.p_threshold > 0.0 && opts.p_threshold < 1.0) {
        return Err(Error::Config(format!("p threshold must lie in (0, 1), got {}", opts.p_threshold)));
    }
    let case_opts = CaseOptions {
        big_little: opts.big_little,
        lock_prelude: matches!(cfg.secure, SecureCacheConfig::Pl),
    };
    let mut work = Vec::new();
    for p in &catalog.patterns {
        let next = work.len() as u32 + 1;
        for c in expand_cases(p, case_opts, next) {
            work.push((p, c));
        }
    }
    let results: Vec<CaseResult> = work
        .par_iter()
        .map_init(
            || Machine::new(cfg.clone()),
            |m, (p, case)| {
                let m = m.as_mut().map_err(|e| Error::Config(e.to_string()))?;
                let seq = bind_case(cfg, p, case, opts.bench_geometry, opts.rep)?;
                seq.validate(cfg)?;
                let (outcome, audit) = match collect_bound(m, cfg, &seq, case.case_id, opts.n_trials, opts.seed)? {
                    Some(s) => (CaseOutcome::Judged(judge_case(&s, opts.p_threshold)?), s.audit),
                    None => (CaseOutcome::Untestable, Counters::default()),
                };
                Ok(CaseResult { case: case.clone(), outcome, audit })
            },
        )
        .collect::<Result<_>>()?;
    let patterns = catalog
        .patterns
        .iter()
        .map(|p| {
            let mine: Vec<CaseResult> =
                results.iter().filter(|r| r.case.pattern_id == p.id).cloned().collect();
            summarize(p, &mine)
        })
        .collect();
    Ok(SuiteResult { config_name: opts.config_name.clone(), cases: results, patterns })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_is_exact() {
        let mut n = NoiseSource::new(0.0, 1).unwrap();
        assert_eq!(n.trial(&[4, 4, 200]), 208.0);
    }

    #[test]
    fn truncated_noise_stays_positive() {
        let mut n = NoiseSource::new(50.0, 3).unwrap();
        for _ in 0..10_000 {
            assert!(n.perturb(1) > 0.0);
        }
    }

    #[test]
    fn bad_sigma_rejected() {
        assert!(NoiseSource::new(f64::NAN, 1).is_err());
        assert!(NoiseSource::new(-1.0, 1).is_err());
    }
}
