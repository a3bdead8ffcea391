//! Secure-cache policies layered on the machine: partition-locked (PL) lines
//! and random-fill (RF) L1 misses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::machine::Machine;
use crate::rng::XorShift64Star;

/// Lines addressable by the benchmark array; RF windows wrap inside it.
pub const RF_REGION_LINES: u64 = 1 << 16;

/// Neighbourhood window of the random-fill cache, in lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RfWindow {
    pub rf_start: u64,
    pub rf_size: u64,
}

impl RfWindow {
    pub fn new(rf_start: u64, rf_size: u64) -> Result<Self> {
        if rf_size == 0 {
            return Err(Error::Config("rf_size must be >= 1".into()));
        }
        if rf_size > RF_REGION_LINES || rf_start >= RF_REGION_LINES {
            return Err(Error::Config(format!(
                "rf window ({rf_start}, {rf_size}) larger than the {RF_REGION_LINES}-line region"
            )));
        }
        Ok(Self { rf_start, rf_size })
    }

    /// `k`-th line of the window around `line` (a line index, not bytes).
    pub fn nth(&self, line: u64, k: u64) -> u64 {
        let base = line - line % RF_REGION_LINES;
        let off = line % RF_REGION_LINES;
        let back = self.rf_start % RF_REGION_LINES;
        base + (off + RF_REGION_LINES - back + k) % RF_REGION_LINES
    }

    pub fn pick(&self, line: u64, rng: &mut XorShift64Star) -> u64 {
        self.nth(line, rng.below(self.rf_size))
    }

    pub fn contains(&self, line: u64, candidate: u64) -> bool {
        let first = self.nth(line, 0);
        let base = line - line % RF_REGION_LINES;
        candidate - candidate % RF_REGION_LINES == base
            && (candidate + RF_REGION_LINES - first) % RF_REGION_LINES < self.rf_size
    }
}

impl Machine {
    /// Fetch (if needed) and lock the line of `addr` in `core`'s L1.
    pub fn pl_lock(&mut self, core: usize, addr: u64) -> Result<()> {
        let ls = self.line_size();
        let line = addr - addr % ls;
        if self.is_locked(core, line) {
            return Ok(());
        }
        let set = self.l1(core).geometry().set_index(line);
        let ways = self.l1(core).geometry().associativity() as usize;
        if self.l1_mut(core).locked_in_set(set) >= ways {
            return Err(Error::Config(format!(
                "locking {line:#x} would lock more than {ways} lines into set {set} of core {core}"
            )));
        }
        if !self.in_l1(core, line) {
            self.read(core, line);
            // a locked victim turns the fill uncached; retry until it lands
            let mut tries = 0;
            while !self.in_l1(core, line) {
                self.install_l1(core, line, false);
                tries += 1;
                if tries > 10_000 {
                    return Err(Error::Config(format!("could not fetch {line:#x} for locking")));
                }
            }
        }
        self.l1_mut(core).set_locked(line, true);
        self.lock_directory_mut().insert((core, line));
        Ok(())
    }

    pub fn pl_unlock(&mut self, core: usize, addr: u64) {
        let ls = self.line_size();
        let line = addr - addr % ls;
        self.l1_mut(core).set_locked(line, false);
        self.lock_directory_mut().remove(&(core, line));
    }

    /// Lock directory and slot flags agree, and every locked line is resident.
    pub fn locks_consistent(&self) -> bool {
        self.lock_directory().iter().all(|&(core, line)| {
            self.l1(core).line(line).map(|s| s.locked).unwrap_or(false)
        })
    }

    /// RF handling of an L1 demand miss on `line` (byte address). The
    /// demand data was already served from below and sits in the L2; the L1
    /// receives one random line of the window instead. Returns the fetched
    /// line's byte address.
    pub(crate) fn rf_fill(&mut self, core: usize, line: u64, dirty: bool, rf_start: u64, rf_size: u64) -> u64 {
        let ls = self.line_size();
        let window = RfWindow { rf_start, rf_size };
        let demand_idx = line / ls;
        let fetched_idx = {
            let rng = self.rf_rng();
            window.pick(demand_idx, rng)
        };
        let fetched = fetched_idx * ls;
        if dirty {
            // store data goes straight to the next level
            self.counters_mut().writebacks += 1;
        }
        if !window.contains(demand_idx, fetched_idx) {
            self.counters_mut().rf_window_violations += 1;
        }
        self.counters_mut().rf_fills += 1;
        if !self.in_l1(core, fetched) {
            self.background_fill(fetched);
            self.install_l1(core, fetched, false);
        }
        if fetched != line && self.in_l1(core, line) {
            self.counters_mut().rf_demand_fill_violations += 1;
        }
        fetched
    }
}
