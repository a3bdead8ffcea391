use super::expand::{bind_case, op_combos, ConcreteCase, Scheduling};
use super::{interference_of, Interference, StepOp, VulnPattern, VulnType};
use crate::error::Result;
use crate::machine::{
    Candidate, InitialState, Machine, MachineConfig, MemOp, DEFAULT_REP,
};

/// Distinguishable candidate pairs: bit 0 `(a, a_alias)`, bit 1
/// `(a, NIB)`, bit 2 `(a_alias, NIB)`.
pub type PairSet = u8;

pub fn candidate_pairs(totals: &[u64; 3]) -> PairSet {
    let [a, alias, nib] = *totals;
    (a != alias) as u8 | ((a != nib) as u8) << 1 | ((alias != nib) as u8) << 2
}

/// A pair set that is a partition of the three candidates; anything else
/// (a single separated pair) is not.
pub fn is_partition(p: PairSet) -> bool {
    matches!(p & 0b111, 0 | 0b011 | 0b110 | 0b101 | 0b111)
}

fn consistent(p: PairSet) -> PairSet {
    if is_partition(p) {
        p
    } else {
        0
    }
}

pub fn label_from_pairs(p: PairSet) -> Option<VulnType> {
    match p & 0b111 {
        0 => None,
        0b111 => Some(VulnType::SA),
        0b011 => Some(VulnType::AO),
        // NIB or a_alias stands apart: the set is revealed
        0b110 | 0b101 => Some(VulnType::SO),
        _ => None,
    }
}

/// The machine the catalog labels are computed on.
pub fn reference_machine() -> MachineConfig {
    MachineConfig::default()
}

pub struct Classifier {
    cfg: MachineConfig,
    machine: Machine,
    seed: u64,
    rep: usize,
}

impl Classifier {
    pub fn new(cfg: MachineConfig, seed: u64) -> Result<Self> {
        let machine = Machine::new(cfg.clone())?;
        Ok(Self {
            cfg,
            machine,
            seed,
            rep: DEFAULT_REP,
        })
    }

    pub fn reference(seed: u64) -> Result<Self> {
        Self::new(reference_machine(), seed)
    }

    pub fn config(&self) -> &MachineConfig {
        &self.cfg
    }

    fn totals(&mut self, p: &VulnPattern, case: &ConcreteCase, init: InitialState) -> Result<[u64; 3]> {
        let seq = bind_case(&self.cfg, p, case, None, self.rep)?;
        seq.validate(&self.cfg)?;
        let mut out = [0u64; 3];
        for c in Candidate::ALL {
            out[c.index()] = self.machine.measure(&seq, c, init, self.seed)?.total();
        }
        Ok(out)
    }

    /// Pairs told apart by one case whatever the prior cache state: the
    /// pair must differ both from a cold start and with the candidates
    /// already cached.
    pub fn case_pairs(&mut self, p: &VulnPattern, case: &ConcreteCase) -> Result<PairSet> {
        let cold = candidate_pairs(&self.totals(p, case, InitialState::Cold)?);
        if cold == 0 {
            return Ok(0);
        }
        let warm = candidate_pairs(&self.totals(p, case, InitialState::Warm)?);
        Ok(consistent(cold & warm))
    }

    /// Union over the time-sliced operation combinations.
    pub fn pattern_pairs(&mut self, p: &VulnPattern) -> Result<PairSet> {
        let mut pairs = 0;
        for ops in op_combos(p) {
            let case = time_sliced_case(p, ops);
            pairs |= self.case_pairs(p, &case)?;
            if pairs == 0b111 {
                break;
            }
        }
        Ok(pairs)
    }

    /// `None` when no candidate pair is ever distinguishable.
    pub fn classify(&mut self, steps: &[StepOp; 3]) -> Result<Option<(VulnType, Interference)>> {
        let p = VulnPattern {
            id: 0,
            steps: *steps,
            vuln_type: VulnType::AO,
            interference: interference_of(steps),
            name: None,
        };
        let pairs = self.pattern_pairs(&p)?;
        Ok(label_from_pairs(pairs).map(|t| (t, p.interference)))
    }
}

pub(crate) fn time_sliced_case(p: &VulnPattern, ops: [Option<MemOp>; 3]) -> ConcreteCase {
    ConcreteCase {
        case_id: 0,
        pattern_id: p.id,
        ops,
        scheduling: Scheduling::TimeSliced,
        binding: None,
        lock_prelude: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_bits() {
        assert_eq!(candidate_pairs(&[5, 5, 5]), 0);
        assert_eq!(candidate_pairs(&[1, 5, 5]), 0b011);
        assert_eq!(candidate_pairs(&[5, 5, 1]), 0b110);
        assert_eq!(candidate_pairs(&[5, 1, 5]), 0b101);
        assert_eq!(candidate_pairs(&[1, 2, 3]), 0b111);
    }

    #[test]
    fn labels() {
        assert_eq!(label_from_pairs(0), None);
        assert_eq!(label_from_pairs(0b011), Some(VulnType::AO));
        assert_eq!(label_from_pairs(0b110), Some(VulnType::SO));
        assert_eq!(label_from_pairs(0b101), Some(VulnType::SO));
        assert_eq!(label_from_pairs(0b111), Some(VulnType::SA));
        assert_eq!(label_from_pairs(0b001), None);
        assert!(!is_partition(0b100));
    }
}
