//! One set-associative cache level.
//!
//! Sets are materialised lazily: a set that has not been touched since the
//! last [`Cache::reset`] is rebuilt on first use, either empty or (for a
//! "warm" cache) full of clean background lines owned by nobody. Resetting
//! a cache is therefore O(1), which matters because the harness resets
//! machines millions of times.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CacheGeometry;
use crate::rng::XorShift64Star;

/// Repetitions of each untimed step's memory operations.
pub const PRIME_REPETITIONS: usize = 10;

/// Tags at or above this value are background lines.
pub const BACKGROUND_TAG_BASE: u64 = 1 << 50;

/// First tag of the eviction-set region. Benchmark addresses proper
/// (a, a_alias, NIB, u) use tags below it.
pub const EVICTION_TAG_BASE: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReplacementPolicyKind {
    Random { seed: u64 },
    Lru,
    /// Random replacement honouring PL lock bits.
    PlRandom { seed: u64 },
}

impl ReplacementPolicyKind {
    pub fn seed(&self) -> Option<u64> {
        match *self {
            ReplacementPolicyKind::Random { seed } | ReplacementPolicyKind::PlRandom { seed } => {
                Some(seed)
            }
            ReplacementPolicyKind::Lru => None,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        match self {
            ReplacementPolicyKind::Random { .. } => ReplacementPolicyKind::Random { seed },
            ReplacementPolicyKind::PlRandom { .. } => ReplacementPolicyKind::PlRandom { seed },
            ReplacementPolicyKind::Lru => ReplacementPolicyKind::Lru,
        }
    }

    pub fn honours_locks(&self) -> bool {
        matches!(self, ReplacementPolicyKind::PlRandom { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CacheLineSlot {
    pub valid: bool,
    pub tag: u64,
    pub dirty: bool,
    pub locked: bool,
    pub transient: bool,
    pub lru_stamp: u64,
}

impl CacheLineSlot {
    pub fn is_background(&self) -> bool {
        self.valid && self.tag >= BACKGROUND_TAG_BASE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Read,
    Write,
}

/// A valid line displaced by a fill.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Evicted {
    pub set: u64,
    pub tag: u64,
    pub addr: u64,
    pub was_dirty: bool,
    pub transient: bool,
    pub background: bool,
}

/// Outcome of the PL replacement flow for a miss in a full set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplacementDecision {
    Evict(usize),
    Uncached,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Insert {
    Installed { way: usize, evicted: Option<Evicted> },
    Uncached,
}

/// Where a single-level access was served from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccessLevel {
    L1Hit,
    L2Hit,
    DramFill,
    Uncached,
    WriteBufferHit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccessOutcome {
    pub level: AccessLevel,
    pub evicted: Option<Evicted>,
    pub latency_cycles: u64,
}

#[derive(Debug, Clone)]
struct CacheSet {
    epoch: u64,
    slots: Vec<CacheLineSlot>,
}

/// Row of the debug state dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotDump {
    pub set: u64,
    pub way: usize,
    pub valid: bool,
    pub tag: u64,
    pub dirty: bool,
    pub locked: bool,
    pub transient: bool,
}

#[derive(Debug, Clone)]
pub struct Cache {
    geom: CacheGeometry,
    policy: ReplacementPolicyKind,
    rng: XorShift64Star,
    warm: bool,
    epoch: u64,
    clock: u64,
    sets: Vec<CacheSet>,
}

impl Cache {
    pub fn new(geom: CacheGeometry, policy: ReplacementPolicyKind) -> Self {
        let ways = geom.associativity() as usize;
        let sets = (0..geom.num_sets())
            .map(|_| CacheSet {
                epoch: 0,
                slots: vec![CacheLineSlot::default(); ways],
            })
            .collect();
        Self {
            geom,
            policy,
            rng: XorShift64Star::new(policy.seed().unwrap_or(0)),
            warm: false,
            epoch: 1,
            clock: 0,
            sets,
        }
    }

    /// A warm cache starts every set full of clean background lines, the
    /// way a real L1 is always full of somebody's data.
    pub fn warm(mut self, warm: bool) -> Self {
        self.warm = warm;
        self
    }

    pub fn geometry(&self) -> &CacheGeometry {
        &self.geom
    }

    pub fn policy(&self) -> ReplacementPolicyKind {
        self.policy
    }

    /// Forget all contents and restart the replacement stream from `seed`.
    pub fn reset(&mut self, seed: u64) {
        self.epoch += 1;
        self.clock = 0;
        self.policy = self.policy.with_seed(seed);
        self.rng = XorShift64Star::new(seed);
    }

    fn set_mut(&mut self, set: u64) -> &mut CacheSet {
        let epoch = self.epoch;
        let warm = self.warm;
        let s = &mut self.sets[set as usize];
        if s.epoch != epoch {
            s.epoch = epoch;
            for (way, slot) in s.slots.iter_mut().enumerate() {
                *slot = if warm {
                    CacheLineSlot {
                        valid: true,
                        tag: BACKGROUND_TAG_BASE + way as u64,
                        lru_stamp: 0,
                        ..Default::default()
                    }
                } else {
                    CacheLineSlot::default()
                };
            }
        }
        s
    }

    fn set_ref(&self, set: u64) -> Option<&CacheSet> {
        let s = &self.sets[set as usize];
        (s.epoch == self.epoch).then_some(s)
    }

    /// Way holding the line of `addr`, if resident.
    pub fn lookup(&self, addr: u64) -> Option<usize> {
        let (set, tag) = (self.geom.set_index(addr), self.geom.tag(addr));
        self.set_ref(set)?
            .slots
            .iter()
            .position(|s| s.valid && s.tag == tag)
    }

    pub fn contains(&self, addr: u64) -> bool {
        self.lookup(addr).is_some()
    }

    pub fn line(&self, addr: u64) -> Option<CacheLineSlot> {
        let set = self.geom.set_index(addr);
        self.lookup(addr).map(|w| self.sets[set as usize].slots[w])
    }

    pub fn line_mut(&mut self, addr: u64) -> Option<&mut CacheLineSlot> {
        let set = self.geom.set_index(addr);
        let way = self.lookup(addr)?;
        Some(&mut self.set_mut(set).slots[way])
    }

    /// Update recency of a resident line.
    pub fn touch(&mut self, addr: u64) {
        self.hit(addr);
    }

    /// Touch the line if resident; returns whether it was.
    pub fn hit(&mut self, addr: u64) -> bool {
        let (set, tag) = (self.geom.set_index(addr), self.geom.tag(addr));
        self.clock += 1;
        let clock = self.clock;
        let s = &mut self.sets[set as usize];
        if s.epoch != self.epoch {
            return false;
        }
        match s.slots.iter_mut().find(|s| s.valid && s.tag == tag) {
            Some(slot) => {
                slot.lru_stamp = clock;
                true
            }
            None => false,
        }
    }

    pub fn slots(&mut self, set: u64) -> &[CacheLineSlot] {
        &self.set_mut(set).slots
    }

    pub fn valid_count(&mut self, set: u64) -> usize {
        self.slots(set).iter().filter(|s| s.valid).count()
    }

    /// Victim choice for a miss into a full set. Under `PlRandom` a locked
    /// candidate turns the fill into an uncached access.
    pub fn replacement_decision(&mut self, set: u64) -> ReplacementDecision {
        let ways = self.geom.associativity();
        match self.policy {
            ReplacementPolicyKind::Lru => {
                let slots = &self.set_mut(set).slots;
                let way = slots
                    .iter()
                    .enumerate()
                    .min_by_key(|(i, s)| (s.lru_stamp, *i))
                    .map(|(i, _)| i)
                    .expect("associativity >= 1");
                ReplacementDecision::Evict(way)
            }
            ReplacementPolicyKind::Random { .. } => {
                ReplacementDecision::Evict(self.rng.below(ways) as usize)
            }
            ReplacementPolicyKind::PlRandom { .. } => {
                let way = self.rng.below(ways) as usize;
                if self.set_mut(set).slots[way].locked {
                    ReplacementDecision::Uncached
                } else {
                    ReplacementDecision::Evict(way)
                }
            }
        }
    }

    /// Install the line of `addr` (which must not be resident).
    pub fn insert(&mut self, addr: u64, dirty: bool, transient: bool) -> Insert {
        debug_assert!(!self.contains(addr));
        let (set, tag) = (self.geom.set_index(addr), self.geom.tag(addr));
        let free = self.set_mut(set).slots.iter().position(|s| !s.valid);
        let (way, evicted) = match free {
            Some(w) => (w, None),
            None => match self.replacement_decision(set) {
                ReplacementDecision::Uncached => return Insert::Uncached,
                ReplacementDecision::Evict(w) => {
                    let old = self.set_mut(set).slots[w];
                    debug_assert!(!old.locked, "locked line chosen as victim");
                    let ev = Evicted {
                        set,
                        tag: old.tag,
                        addr: self.geom.addr_of(set, old.tag),
                        was_dirty: old.dirty,
                        transient: old.transient,
                        background: old.is_background(),
                    };
                    (w, Some(ev))
                }
            },
        };
        self.clock += 1;
        let clock = self.clock;
        self.set_mut(set).slots[way] = CacheLineSlot {
            valid: true,
            tag,
            dirty,
            locked: false,
            transient,
            lru_stamp: clock,
        };
        Insert::Installed { way, evicted }
    }

    /// Drop the line of `addr`; returns its final state.
    pub fn invalidate(&mut self, addr: u64) -> Option<CacheLineSlot> {
        let set = self.geom.set_index(addr);
        let way = self.lookup(addr)?;
        let s = &mut self.set_mut(set).slots[way];
        let old = *s;
        *s = CacheLineSlot::default();
        Some(old)
    }

    pub fn set_locked(&mut self, addr: u64, locked: bool) -> bool {
        match self.line_mut(addr) {
            Some(slot) => {
                slot.locked = locked;
                true
            }
            None => false,
        }
    }

    pub fn locked_in_set(&mut self, set: u64) -> usize {
        self.slots(set).iter().filter(|s| s.locked).count()
    }

    /// Single-level access used when the cache stands alone: every miss is a
    /// memory fill. The machine composes levels itself.
    pub fn access(&mut self, op: OpKind, addr: u64, hit_cycles: u64, miss_cycles: u64) -> AccessOutcome {
        if self.contains(addr) {
            self.touch(addr);
            if op == OpKind::Write {
                self.line_mut(addr).expect("resident").dirty = true;
            }
            return AccessOutcome {
                level: AccessLevel::L1Hit,
                evicted: None,
                latency_cycles: hit_cycles,
            };
        }
        match self.insert(addr, op == OpKind::Write, false) {
            Insert::Installed { evicted, .. } => AccessOutcome {
                level: AccessLevel::DramFill,
                evicted,
                latency_cycles: miss_cycles,
            },
            Insert::Uncached => AccessOutcome {
                level: AccessLevel::Uncached,
                evicted: None,
                latency_cycles: miss_cycles,
            },
        }
    }

    /// Access every address of `eviction_set` in order, the whole sequence
    /// [`PRIME_REPETITIONS`] times.
    pub fn prime_set(&mut self, eviction_set: &[u64]) {
        for _ in 0..PRIME_REPETITIONS {
            for &a in eviction_set {
                self.access(OpKind::Read, a, 1, 1);
            }
        }
    }

    /// Contents of every materialised set, background lines included.
    pub fn dump(&self) -> Vec<SlotDump> {
        let mut out = Vec::new();
        for (set, s) in self.sets.iter().enumerate() {
            if s.epoch != self.epoch {
                continue;
            }
            for (way, slot) in s.slots.iter().enumerate() {
                out.push(SlotDump {
                    set: set as u64,
                    way,
                    valid: slot.valid,
                    tag: slot.tag,
                    dirty: slot.dirty,
                    locked: slot.locked,
                    transient: slot.transient,
                });
            }
        }
        out
    }
}

/// `associativity - 1` addresses mapping to `target_set`, drawn from the
/// dedicated eviction region (tags from [`EVICTION_TAG_BASE`]). Empty for a
/// direct-mapped geometry.
pub fn build_eviction_set(target_set: u64, geom: &CacheGeometry) -> Result<Vec<u64>> {
    if target_set >= geom.num_sets() {
        return Err(Error::Config(format!(
            "target set {target_set} out of range for {} sets",
            geom.num_sets()
        )));
    }
    Ok((0..geom.associativity().saturating_sub(1))
        .map(|k| geom.addr_of(target_set, EVICTION_TAG_BASE + k))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(ways: u64) -> CacheGeometry {
        CacheGeometry::new(128 * 64 * ways, ways, 64).unwrap()
    }

    #[test]
    fn cold_miss_then_hit_then_dirty() {
        let mut c = Cache::new(geom(4), ReplacementPolicyKind::Lru);
        let o = c.access(OpKind::Read, 0, 4, 200);
        assert_eq!(o.level, AccessLevel::DramFill);
        assert!(o.evicted.is_none());
        let slot = c.line(0).unwrap();
        assert!(slot.valid && !slot.dirty);
        assert_eq!(c.access(OpKind::Read, 0, 4, 200).level, AccessLevel::L1Hit);
        let w = c.access(OpKind::Write, 0, 4, 200);
        assert_eq!(w.level, AccessLevel::L1Hit);
        assert!(c.line(0).unwrap().dirty);
    }

    #[test]
    fn lines_share_slot_within_line() {
        let mut c = Cache::new(geom(4), ReplacementPolicyKind::Lru);
        c.access(OpKind::Read, 128, 4, 200);
        assert_eq!(c.access(OpKind::Read, 128 + 63, 4, 200).level, AccessLevel::L1Hit);
        assert_eq!(c.access(OpKind::Read, 128 + 64, 4, 200).level, AccessLevel::DramFill);
    }

    #[test]
    fn eviction_set_shapes() {
        let g = geom(4);
        let ev = build_eviction_set(0, &g).unwrap();
        assert_eq!(ev.len(), 3);
        for w in ev.windows(2) {
            assert_eq!((w[1] - w[0]) % 8192, 0);
        }
        assert_eq!(build_eviction_set(0, &geom(2)).unwrap().len(), 1);
        assert!(build_eviction_set(0, &geom(1)).unwrap().is_empty());
        let g16 = geom(16);
        let ev = build_eviction_set(5, &g16).unwrap();
        assert_eq!(ev.len(), 15);
        // independent mapping: line number modulo set count
        assert!(ev.iter().all(|a| (a / 64) % 128 == 5));
        assert!(build_eviction_set(128, &g).is_err());
    }

    #[test]
    fn lru_prime_into_empty_set_is_exact() {
        let g = geom(4);
        let mut c = Cache::new(g, ReplacementPolicyKind::Lru);
        let ev = build_eviction_set(0, &g).unwrap();
        c.prime_set(&ev);
        assert_eq!(c.valid_count(0), 3);
        assert!(ev.iter().all(|&a| c.contains(a)));
    }

    #[test]
    fn lru_evicts_minimum_stamp() {
        let g = geom(2);
        let mut c = Cache::new(g, ReplacementPolicyKind::Lru);
        let (x, y, z) = (0, g.way_stride(), 2 * g.way_stride());
        c.access(OpKind::Read, x, 1, 1);
        c.access(OpKind::Read, y, 1, 1);
        c.access(OpKind::Read, x, 1, 1);
        let o = c.access(OpKind::Read, z, 1, 1);
        assert_eq!(o.evicted.unwrap().addr, y);
    }

    #[test]
    fn random_prime_replays_under_fixed_seed() {
        let g = geom(4);
        let run = |seed| {
            let mut c = Cache::new(g, ReplacementPolicyKind::Random { seed }).warm(true);
            c.reset(seed);
            c.prime_set(&build_eviction_set(3, &g).unwrap());
            c.dump()
        };
        assert_eq!(run(11), run(11));
    }

    #[test]
    fn reset_is_cold_or_warm() {
        let g = geom(4);
        let mut c = Cache::new(g, ReplacementPolicyKind::Lru).warm(true);
        assert_eq!(c.valid_count(7), 4);
        assert!(c.slots(7).iter().all(|s| s.is_background()));
        c.access(OpKind::Read, 7 * 64, 1, 1);
        c.reset(0);
        assert!(!c.contains(7 * 64));
        let mut cold = Cache::new(g, ReplacementPolicyKind::Lru);
        assert_eq!(cold.valid_count(7), 0);
    }

    #[test]
    fn pl_decision_with_all_locked_is_uncached() {
        let g = geom(4);
        let mut c = Cache::new(g, ReplacementPolicyKind::PlRandom { seed: 3 });
        for k in 0..4 {
            let a = g.addr_of(0, k);
            c.access(OpKind::Read, a, 1, 1);
            assert!(c.set_locked(a, true));
        }
        for _ in 0..100 {
            assert_eq!(c.replacement_decision(0), ReplacementDecision::Uncached);
        }
        let before = c.dump();
        let o = c.access(OpKind::Read, g.addr_of(0, 9), 1, 1);
        assert_eq!(o.level, AccessLevel::Uncached);
        assert_eq!(before, c.dump());
    }

    #[test]
    fn dump_field_names_are_fixed() {
        let mut c = Cache::new(geom(1), ReplacementPolicyKind::Lru);
        c.access(OpKind::Write, 0, 1, 1);
        let v = serde_json::to_value(&c.dump()[0]).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        for k in ["set", "way", "valid", "tag", "dirty", "locked", "transient"] {
            assert!(keys.contains(&k.to_string()), "{k}");
        }
    }
}
