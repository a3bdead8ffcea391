//! Executing a bound three-step sequence on the machine.

use serde::{Deserialize, Serialize};

use super::{AddressClass, AddressPlan, Candidate, Counters, Machine, MachineConfig};
use crate::cache::PRIME_REPETITIONS;
use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Independent machine runs whose Step 3 latencies make up one
/// measurement. Under random replacement a single run of 8 lanes is still
/// luck dependent; four runs with derived seeds give a stable total.
pub const ENSEMBLE_RUNS: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    Victim,
    Attacker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemOp {
    Read,
    Write,
    Flush,
    RemoteWrite,
}

/// One step resolved to an executing core, operation and address class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepBinding {
    pub actor: Actor,
    pub core: usize,
    pub op: MemOp,
    pub class: AddressClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// Benchmark lines absent from every cache.
    Cold,
    /// `a` of every lane preloaded on the local core.
    Warm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundSequence {
    /// `None` marks the don't-care step.
    pub steps: [Option<StepBinding>; 3],
    pub plan: AddressPlan,
    /// Lock every secret candidate before Step 1 (PL machines).
    pub lock_candidates: bool,
    pub local_core: usize,
}

impl BoundSequence {
    pub fn validate(&self, cfg: &MachineConfig) -> Result<()> {
        if self.steps[2].is_none() {
            return Err(Error::Config("Step 3 must be a timed operation".into()));
        }
        for s in self.steps.iter().flatten() {
            if s.core >= cfg.cores.len() {
                return Err(Error::Config(format!("step bound to missing core {}", s.core)));
            }
        }
        Ok(())
    }
}

/// Latencies of the timed Step 3.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Step3Timing {
    pub op_latencies: Vec<u64>,
    /// Step 3 total of each run; one entry per timed measurement window.
    pub run_totals: Vec<u64>,
    /// Machine counters accumulated over the runs.
    pub audit: Counters,
}

impl Step3Timing {
    pub fn total(&self) -> u64 {
        self.op_latencies.iter().sum()
    }
}

impl Machine {
    /// Runs Steps 1-3 for one secret value from the current machine state
    /// and returns the Step 3 latencies. Untimed steps repeat their access
    /// sequence [`PRIME_REPETITIONS`] times; Step 3 runs once.
    pub fn run_three_steps(
        &mut self,
        seq: &BoundSequence,
        secret: Candidate,
        init: InitialState,
    ) -> Result<Step3Timing> {
        if init == InitialState::Warm {
            let addrs = seq.plan.addresses(AddressClass::A, secret);
            for _ in 0..PRIME_REPETITIONS {
                for &a in &addrs {
                    self.read(seq.local_core, a);
                }
            }
        }
        if seq.lock_candidates {
            for a in seq.plan.candidate_addresses() {
                self.pl_lock(seq.local_core, a)?;
            }
        }
        let mut timing = Step3Timing::default();
        for (i, step) in seq.steps.iter().enumerate() {
            let Some(s) = step else { continue };
            self.begin_step();
            let addrs = seq.plan.addresses(s.class, secret);
            if i == 2 {
                timing.op_latencies = addrs
                    .iter()
                    .map(|&a| self.execute(s.core, s.op, a))
                    .collect();
                timing.run_totals = vec![timing.total()];
            } else {
                for _ in 0..PRIME_REPETITIONS {
                    for &a in &addrs {
                        self.execute(s.core, s.op, a);
                    }
                }
            }
        }
        timing.audit = self.counters().clone();
        Ok(timing)
    }

    /// One measurement: [`ENSEMBLE_RUNS`] fresh runs with seeds derived
    /// from `seed`, latencies concatenated.
    pub fn measure(
        &mut self,
        seq: &BoundSequence,
        secret: Candidate,
        init: InitialState,
        seed: u64,
    ) -> Result<Step3Timing> {
        let mut out = Step3Timing::default();
        for k in 0..ENSEMBLE_RUNS {
            let t = self.ensemble_run(seq, secret, init, seed, k, 0)?;
            out.op_latencies.extend(t.op_latencies);
            out.run_totals.extend(t.run_totals);
            out.audit.absorb(&t.audit);
        }
        Ok(out)
    }

    /// Run `k` of the measurement ensemble for `seed`. `rf_salt` perturbs
    /// the random-fill stream while the replacement streams stay fixed.
    pub fn ensemble_run(
        &mut self,
        seq: &BoundSequence,
        secret: Candidate,
        init: InitialState,
        seed: u64,
        k: u64,
        rf_salt: u64,
    ) -> Result<Step3Timing> {
        let s = derive_seed(seed, k);
        self.reset(s, derive_seed(s, 0x7266 ^ rf_salt.rotate_left(17)));
        self.run_three_steps(seq, secret, init)
    }
}

/// Noise-free Step 3 latencies for the three secret candidates, measured
/// with the same seeds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdealTiming {
    pub per_candidate: [Step3Timing; 3],
}

impl IdealTiming {
    pub fn total(&self, c: Candidate) -> u64 {
        self.per_candidate[c.index()].total()
    }

    /// Candidate pairs with different totals, as a 3x3 matrix.
    pub fn distinct(&self) -> [[bool; 3]; 3] {
        let mut m = [[false; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = self.per_candidate[i].total() != self.per_candidate[j].total();
            }
        }
        m
    }
}

pub fn ideal_timing(
    cfg: &MachineConfig,
    seq: &BoundSequence,
    seed: u64,
    init: InitialState,
) -> Result<IdealTiming> {
    seq.validate(cfg)?;
    let mut m = Machine::new(cfg.clone())?;
    let mut out: [Step3Timing; 3] = Default::default();
    for c in Candidate::ALL {
        out[c.index()] = m.measure(seq, c, init, seed)?;
    }
    Ok(IdealTiming { per_candidate: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::ReplacementPolicyKind;

    fn cfg() -> MachineConfig {
        let mut cfg = MachineConfig::default();
        for c in &mut cfg.cores {
            c.l1_policy = ReplacementPolicyKind::Lru;
        }
        cfg
    }

    fn bind(actor: Actor, core: usize, op: MemOp, class: AddressClass) -> Option<StepBinding> {
        Some(StepBinding { actor, core, op, class })
    }

    fn seq(steps: [Option<StepBinding>; 3]) -> BoundSequence {
        let cfg = cfg();
        BoundSequence {
            steps,
            plan: AddressPlan::new(cfg.cores[0].l1_geometry, 8).unwrap(),
            lock_candidates: false,
            local_core: 0,
        }
    }

    #[test]
    fn flush_reload_separates_a_from_the_rest() {
        let s = seq([
            bind(Actor::Attacker, 0, MemOp::Flush, AddressClass::A),
            bind(Actor::Victim, 0, MemOp::Read, AddressClass::U),
            bind(Actor::Attacker, 0, MemOp::Read, AddressClass::A),
        ]);
        let t = ideal_timing(&cfg(), &s, 1, InitialState::Cold).unwrap();
        assert_eq!(t.total(Candidate::A), 4 * 8 * 4);
        assert_eq!(t.total(Candidate::AAlias), 4 * 8 * 200);
        assert_eq!(t.total(Candidate::Nib), 4 * 8 * 200);
        assert_eq!(t.per_candidate[0].op_latencies.len(), 32);
        assert_eq!(t.per_candidate[0].run_totals, vec![8 * 4; 4]);
    }

    #[test]
    fn star_step_is_skipped() {
        let s = seq([
            None,
            bind(Actor::Victim, 0, MemOp::Read, AddressClass::U),
            bind(Actor::Attacker, 0, MemOp::Read, AddressClass::A),
        ]);
        let t = ideal_timing(&cfg(), &s, 1, InitialState::Cold).unwrap();
        assert!(t.total(Candidate::A) < t.total(Candidate::Nib));
        assert_eq!(t.total(Candidate::AAlias), t.total(Candidate::Nib));
    }

    #[test]
    fn step3_required() {
        let s = seq([None, None, None]);
        assert!(ideal_timing(&cfg(), &s, 1, InitialState::Cold).is_err());
    }
}
