//! Benchmark address generation.
//!
//! A benchmark measures `rep` lanes at once. Lane `r` targets set `r` of the
//! geometry the benchmark *believes* in: `a` and `a_alias` are two fixed
//! tags of that set, `NIB` sits `rep` lines after `a`, and the eviction set
//! is `associativity - 1` further tags from the dedicated eviction region.
//! The machine then maps these byte addresses with its own geometry, which
//! is where misconfiguration shows up.

use serde::{Deserialize, Serialize};

use crate::cache::build_eviction_set;
use crate::error::{Error, Result};
use crate::geometry::CacheGeometry;

pub const A_TAG: u64 = 16;
pub const ALIAS_TAG: u64 = 17;

/// Default number of lanes (primed sets) per benchmark.
pub const DEFAULT_REP: usize = 8;

/// Value of the victim's secret-dependent address `u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Candidate {
    A,
    AAlias,
    Nib,
}

impl Candidate {
    pub const ALL: [Candidate; 3] = [Candidate::A, Candidate::AAlias, Candidate::Nib];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Candidate::A => "a",
            Candidate::AAlias => "a_alias",
            Candidate::Nib => "NIB",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddressClass {
    U,
    A,
    AAlias,
    Nib,
    EvictionSet,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lane {
    pub a: u64,
    pub a_alias: u64,
    pub nib: u64,
    pub eviction: Vec<u64>,
}

impl Lane {
    pub fn candidate(&self, c: Candidate) -> u64 {
        match c {
            Candidate::A => self.a,
            Candidate::AAlias => self.a_alias,
            Candidate::Nib => self.nib,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddressPlan {
    geometry: CacheGeometry,
    lanes: Vec<Lane>,
}

impl AddressPlan {
    pub fn new(geometry: CacheGeometry, rep: usize) -> Result<Self> {
        if rep == 0 {
            return Err(Error::Config("rep must be >= 1".into()));
        }
        if (rep as u64) > geometry.num_sets() {
            return Err(Error::Config(format!(
                "rep {rep} exceeds the {} sets of {geometry}",
                geometry.num_sets()
            )));
        }
        let lanes = (0..rep as u64)
            .map(|set| {
                let a = geometry.addr_of(set, A_TAG);
                Ok(Lane {
                    a,
                    a_alias: geometry.addr_of(set, ALIAS_TAG),
                    nib: a + rep as u64 * geometry.line_size(),
                    eviction: build_eviction_set(set, &geometry)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { geometry, lanes })
    }

    pub fn geometry(&self) -> &CacheGeometry {
        &self.geometry
    }

    pub fn lanes(&self) -> &[Lane] {
        &self.lanes
    }

    pub fn rep(&self) -> usize {
        self.lanes.len()
    }

    /// True when the eviction sets are empty (direct-mapped assumption).
    pub fn eviction_set_empty(&self) -> bool {
        self.lanes.iter().all(|l| l.eviction.is_empty())
    }

    /// Addresses touched by one pass of an operation on `class`, lane-major.
    pub fn addresses(&self, class: AddressClass, secret: Candidate) -> Vec<u64> {
        let mut out = Vec::new();
        for lane in &self.lanes {
            match class {
                AddressClass::U => out.push(lane.candidate(secret)),
                AddressClass::A => out.push(lane.a),
                AddressClass::AAlias => out.push(lane.a_alias),
                AddressClass::Nib => out.push(lane.nib),
                AddressClass::EvictionSet => out.extend_from_slice(&lane.eviction),
            }
        }
        out
    }

    /// Every secret-candidate address of every lane.
    pub fn candidate_addresses(&self) -> Vec<u64> {
        self.lanes
            .iter()
            .flat_map(|l| [l.a, l.a_alias, l.nib])
            .collect()
    }
}
