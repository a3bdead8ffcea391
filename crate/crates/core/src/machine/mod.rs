//! Multi-core machine: private L1 per core, shared inclusive L2, coherence
//! invalidations, per-core write buffers and a per-step MSHR budget.

mod config;
mod plan;
mod run;

use std::collections::{BTreeSet, VecDeque};

use serde::Serialize;

pub use config::{
    Cluster, CoreDescriptor, LatencyTable, MachineConfig, MicroArchToggles, NoiseModel,
    SecureCacheConfig,
};
pub use plan::{AddressClass, AddressPlan, Candidate, Lane, DEFAULT_REP};
pub use run::{
    ideal_timing, Actor, BoundSequence, IdealTiming, InitialState, MemOp, Step3Timing,
    StepBinding, ENSEMBLE_RUNS,
};

use crate::cache::{AccessLevel, Cache, Evicted, Insert, ReplacementPolicyKind, SlotDump};
use crate::error::Result;
use crate::rng::{derive_seed, XorShift64Star};

/// Audit counters, reset with the machine.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub writebacks: u64,
    pub locked_evictions: u64,
    pub uncached_fills: u64,
    pub rf_fills: u64,
    pub rf_window_violations: u64,
    pub rf_demand_fill_violations: u64,
    pub l1_misses: u64,
}

impl Counters {
    pub fn absorb(&mut self, o: &Counters) {
        self.writebacks += o.writebacks;
        self.locked_evictions += o.locked_evictions;
        self.uncached_fills += o.uncached_fills;
        self.rf_fills += o.rf_fills;
        self.rf_window_violations += o.rf_window_violations;
        self.rf_demand_fill_violations += o.rf_demand_fill_violations;
        self.l1_misses += o.l1_misses;
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MachineDump {
    pub l1: Vec<Vec<SlotDump>>,
    pub l2: Vec<SlotDump>,
    pub write_buffers: Vec<Vec<u64>>,
}

#[derive(Debug, Clone)]
pub struct Machine {
    cfg: MachineConfig,
    l1: Vec<Cache>,
    l2: Cache,
    wb: Vec<VecDeque<u64>>,
    rf_rng: XorShift64Star,
    locks: BTreeSet<(usize, u64)>,
    counters: Counters,
    step_misses: usize,
}

impl Machine {
    pub fn new(cfg: MachineConfig) -> Result<Self> {
        cfg.validate()?;
        let l1 = cfg
            .cores
            .iter()
            .map(|c| Cache::new(c.l1_geometry, c.l1_policy).warm(true))
            .collect();
        let l2 = Cache::new(cfg.l2_geometry, ReplacementPolicyKind::Lru);
        let wb = vec![VecDeque::new(); cfg.cores.len()];
        let mut m = Self {
            l1,
            l2,
            wb,
            rf_rng: XorShift64Star::new(0),
            locks: BTreeSet::new(),
            counters: Counters::default(),
            step_misses: 0,
            cfg,
        };
        let seed = m.cfg.seed;
        m.reset(seed, 0);
        Ok(m)
    }

    pub fn config(&self) -> &MachineConfig {
        &self.cfg
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    /// Back to the known starting state: L1s full of background lines, L2
    /// empty, buffers drained, no locks. `seed` drives replacement and
    /// `rf_seed` the random-fill stream.
    pub fn reset(&mut self, seed: u64, rf_seed: u64) {
        for (i, c) in self.l1.iter_mut().enumerate() {
            c.reset(derive_seed(seed, i as u64));
        }
        self.l2.reset(0);
        for w in &mut self.wb {
            w.clear();
        }
        self.rf_rng = XorShift64Star::new(derive_seed(rf_seed, 0x5246));
        self.locks.clear();
        self.counters = Counters::default();
        self.step_misses = 0;
    }

    /// Opens a new step: the in-flight miss budget restarts.
    pub fn begin_step(&mut self) {
        self.step_misses = 0;
    }

    pub fn line_size(&self) -> u64 {
        self.cfg.l2_geometry.line_size()
    }

    fn align(&self, addr: u64) -> u64 {
        addr - addr % self.line_size()
    }

    fn penalty(&self, a: usize, b: usize) -> u64 {
        if self.cfg.cores[a].cluster != self.cfg.cores[b].cluster {
            self.cfg.latency.cross_cluster_penalty
        } else {
            0
        }
    }

    fn is_transient(&self) -> bool {
        self.cfg.toggles.transient_region
    }

    pub fn l1(&self, core: usize) -> &Cache {
        &self.l1[core]
    }

    pub fn l2(&self) -> &Cache {
        &self.l2
    }

    pub fn in_l1(&self, core: usize, addr: u64) -> bool {
        self.l1[core].contains(addr)
    }

    pub fn in_l2(&self, addr: u64) -> bool {
        self.l2.contains(addr)
    }

    pub fn in_write_buffer(&self, core: usize, addr: u64) -> bool {
        let line = self.align(addr);
        self.wb[core].contains(&line)
    }

    pub fn is_locked(&self, core: usize, addr: u64) -> bool {
        let line = self.align(addr);
        self.locks.contains(&(core, line))
    }

    fn locked_anywhere(&self, line: u64) -> bool {
        (0..self.l1.len()).any(|c| self.locks.contains(&(c, line)))
    }

    pub(crate) fn lock_directory(&self) -> &BTreeSet<(usize, u64)> {
        &self.locks
    }

    pub(crate) fn lock_directory_mut(&mut self) -> &mut BTreeSet<(usize, u64)> {
        &mut self.locks
    }

    pub(crate) fn l1_mut(&mut self, core: usize) -> &mut Cache {
        &mut self.l1[core]
    }

    pub(crate) fn rf_rng(&mut self) -> &mut XorShift64Star {
        &mut self.rf_rng
    }

    pub(crate) fn counters_mut(&mut self) -> &mut Counters {
        &mut self.counters
    }

    fn drain_write_buffer(&mut self, core: usize) {
        self.wb[core].clear();
    }

    fn drop_wb_entry(&mut self, line: u64) {
        for w in &mut self.wb {
            w.retain(|&l| l != line);
        }
    }

    fn enqueue_store(&mut self, core: usize, line: u64) {
        let cap = self.cfg.toggles.write_buffer_size;
        if cap == 0 {
            return;
        }
        let w = &mut self.wb[core];
        if !w.contains(&line) {
            w.push_back(line);
            while w.len() > cap {
                w.pop_front();
            }
        }
    }

    /// Bookkeeping for a line leaving an L1.
    fn retire(&mut self, core: usize, ev: Evicted) {
        if ev.background {
            return;
        }
        if self.locks.contains(&(core, ev.addr)) {
            self.counters.locked_evictions += 1;
        }
        if ev.was_dirty {
            self.counters.writebacks += 1;
        }
    }

    fn invalidate_l1(&mut self, core: usize, line: u64) -> bool {
        match self.l1[core].invalidate(line) {
            Some(old) => {
                let set = self.l1[core].geometry().set_index(line);
                self.retire(
                    core,
                    Evicted {
                        set,
                        tag: old.tag,
                        addr: line,
                        was_dirty: old.dirty,
                        transient: old.transient,
                        background: old.is_background(),
                    },
                );
                true
            }
            None => false,
        }
    }

    /// Allocate in the shared L2, back-invalidating L1 copies of the victim
    /// to keep inclusion.
    fn l2_fill(&mut self, line: u64) {
        if self.l2.contains(line) {
            return;
        }
        if let Insert::Installed {
            evicted: Some(ev), ..
        } = self.l2.insert(line, false, false)
        {
            for c in 0..self.l1.len() {
                // locked lines are exempt from inclusion
                if !self.locks.contains(&(c, ev.addr)) {
                    self.invalidate_l1(c, ev.addr);
                }
            }
        }
    }

    /// Serve an L1 miss from a peer L1, the L2 or DRAM.
    fn miss_path(&mut self, core: usize, line: u64) -> (AccessLevel, u64) {
        self.drain_write_buffer(core);
        self.counters.l1_misses += 1;
        self.step_misses += 1;
        let lat = self.cfg.latency.clone();
        let extra = if self.step_misses > self.cfg.toggles.mshr_size {
            lat.t_dram / 2
        } else {
            0
        };
        let peer = (0..self.l1.len()).find(|&c| c != core && self.l1[c].contains(line));
        let (level, cycles) = if let Some(p) = peer {
            if let Some(slot) = self.l1[p].line_mut(line) {
                if slot.dirty {
                    slot.dirty = false;
                    self.counters.writebacks += 1;
                }
            }
            if !self.is_transient() {
                self.l2_fill(line);
            }
            (AccessLevel::L2Hit, lat.t_l2 + self.penalty(core, p))
        } else if self.l2.hit(line) {
            (AccessLevel::L2Hit, lat.t_l2)
        } else {
            if !self.is_transient() {
                self.l2_fill(line);
            }
            (AccessLevel::DramFill, lat.t_dram)
        };
        (level, cycles + extra)
    }

    /// Plain demand allocation. Returns false when the PL flow served the
    /// access uncached.
    pub(crate) fn install_l1(&mut self, core: usize, line: u64, dirty: bool) -> bool {
        let transient = self.is_transient();
        match self.l1[core].insert(line, dirty, transient) {
            Insert::Installed { evicted, .. } => {
                if let Some(ev) = evicted {
                    self.retire(core, ev);
                }
                true
            }
            Insert::Uncached => {
                self.counters.uncached_fills += 1;
                if dirty {
                    // the store goes straight to the next level
                    self.counters.writebacks += 1;
                    if !transient {
                        self.l2_fill(line);
                    }
                }
                false
            }
        }
    }

    /// Fill that is off the critical path (RF neighbour fetch).
    pub(crate) fn background_fill(&mut self, line: u64) {
        if !self.is_transient() {
            self.l2_fill(line);
        }
    }

    fn fill_l1(&mut self, core: usize, line: u64, dirty: bool) -> bool {
        match self.cfg.secure {
            SecureCacheConfig::Rf { rf_start, rf_size } => {
                self.rf_fill(core, line, dirty, rf_start, rf_size);
                false
            }
            _ => self.install_l1(core, line, dirty),
        }
    }

    pub fn read(&mut self, core: usize, addr: u64) -> (AccessLevel, u64) {
        let line = self.align(addr);
        if self.wb[core].contains(&line) {
            return (AccessLevel::WriteBufferHit, self.cfg.latency.t_wb_hit);
        }
        if self.l1[core].hit(line) {
            return (AccessLevel::L1Hit, self.cfg.latency.t_l1);
        }
        let (level, cycles) = self.miss_path(core, line);
        let cached = self.fill_l1(core, line, false);
        let level = if !cached && matches!(self.cfg.secure, SecureCacheConfig::Pl) {
            AccessLevel::Uncached
        } else {
            level
        };
        (level, cycles)
    }

    pub fn write(&mut self, core: usize, addr: u64) -> (AccessLevel, u64) {
        let line = self.align(addr);
        let lat = &self.cfg.latency;
        let (level, cycles) = if let Some(slot) = self.l1[core].line_mut(line) {
            let mut c = lat.t_l1;
            if self.cfg.toggles.store_buffer && !slot.dirty {
                c += lat.store_buffer_delta;
            }
            slot.dirty = true;
            self.l1[core].touch(line);
            (AccessLevel::L1Hit, c)
        } else {
            let (level, cycles) = self.miss_path(core, line);
            self.fill_l1(core, line, true);
            (level, cycles)
        };
        for c in 0..self.l1.len() {
            if c != core && !self.locks.contains(&(c, line)) {
                self.invalidate_l1(c, line);
            }
        }
        self.enqueue_store(core, line);
        (level, cycles)
    }

    /// Clean and invalidate by address to the point of coherence.
    pub fn flush(&mut self, core: usize, addr: u64) -> u64 {
        let line = self.align(addr);
        let lat = self.cfg.latency.clone();
        if self.locked_anywhere(line) {
            // locked lines stay put; the instruction still retires as an L1 flush
            return lat.flush_l1;
        }
        self.drop_wb_entry(line);
        let holder = (0..self.l1.len()).find(|&c| c != core && self.l1[c].contains(line));
        let cycles = if self.l1[core].contains(line) {
            lat.flush_l1
        } else if let Some(h) = holder {
            if self.cfg.toggles.scu {
                lat.flush_l2
            } else {
                lat.flush_l1 + self.penalty(core, h)
            }
        } else if self.l2.contains(line) {
            lat.flush_l2
        } else {
            lat.flush_miss
        };
        for c in 0..self.l1.len() {
            self.invalidate_l1(c, line);
        }
        self.l2.invalidate(line);
        cycles
    }

    /// A write issued on `from_core` that invalidates every other copy.
    /// The written data lands in the shared L2; no L1 keeps the line.
    pub fn remote_invalidate(&mut self, addr: u64, from_core: usize) -> u64 {
        let line = self.align(addr);
        let lat = self.cfg.latency.clone();
        let holder = (0..self.l1.len())
            .filter(|&c| c != from_core && self.l1[c].contains(line))
            .max_by_key(|&c| (self.l1[c].line(line).map(|s| s.dirty), std::cmp::Reverse(c)))
            .or_else(|| self.l1[from_core].contains(line).then_some(from_core));
        let cycles = match holder {
            Some(h) => {
                let dirty = self.l1[h].line(line).map(|s| s.dirty).unwrap_or(false);
                let base = if dirty {
                    lat.inv_remote_dirty_l1
                } else {
                    lat.inv_remote_clean_l1
                };
                base + self.penalty(from_core, h)
            }
            None if self.l2.contains(line) => {
                if self.cfg.toggles.scu {
                    lat.inv_remote_clean_l1
                } else {
                    lat.inv_remote_l2
                }
            }
            None => return lat.flush_miss,
        };
        self.drop_wb_entry(line);
        for c in 0..self.l1.len() {
            if !self.locks.contains(&(c, line)) {
                self.invalidate_l1(c, line);
            } else if let Some(s) = self.l1[c].line_mut(line) {
                // locked copies are updated in place
                s.dirty = true;
            }
        }
        if !self.is_transient() {
            self.l2_fill(line);
        }
        cycles
    }

    /// One memory operation issued on `core`; returns its modeled latency.
    pub fn execute(&mut self, core: usize, op: MemOp, addr: u64) -> u64 {
        match op {
            MemOp::Read => self.read(core, addr).1,
            MemOp::Write => self.write(core, addr).1,
            MemOp::Flush => self.flush(core, addr),
            MemOp::RemoteWrite => self.remote_invalidate(addr, core),
        }
    }

    pub fn dump(&self) -> MachineDump {
        MachineDump {
            l1: self.l1.iter().map(|c| c.dump()).collect(),
            l2: self.l2.dump(),
            write_buffers: self.wb.iter().map(|w| w.iter().copied().collect()).collect(),
        }
    }
}
