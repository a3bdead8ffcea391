use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Size, associativity and line size of one cache level.
///
/// Device geometries are strict: every parameter is a power of two. A
/// benchmark's *assumed* geometry may be any exact factorisation (the
/// 96 KiB point of the cache-size sweep has 384 sets), see
/// [`CacheGeometry::assumed`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawGeometry", into = "RawGeometry")]
pub struct CacheGeometry {
    total_size: u64,
    associativity: u64,
    line_size: u64,
    num_sets: u64,
    /// `log2(line_size)` and `num_sets - 1` when both are powers of two.
    fast: Option<(u32, u64)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGeometry {
    total_size: u64,
    associativity: u64,
    line_size: u64,
}

impl TryFrom<RawGeometry> for CacheGeometry {
    type Error = Error;
    fn try_from(r: RawGeometry) -> Result<Self> {
        CacheGeometry::new(r.total_size, r.associativity, r.line_size)
    }
}

impl From<CacheGeometry> for RawGeometry {
    fn from(g: CacheGeometry) -> Self {
        RawGeometry {
            total_size: g.total_size,
            associativity: g.associativity,
            line_size: g.line_size,
        }
    }
}

impl CacheGeometry {
    pub fn new(total_size: u64, associativity: u64, line_size: u64) -> Result<Self> {
        for (name, v) in [
            ("total_size", total_size),
            ("associativity", associativity),
            ("line_size", line_size),
        ] {
            if !v.is_power_of_two() {
                return Err(Error::Geometry(format!("{name} = {v} is not a power of two")));
            }
        }
        Self::assumed(total_size, associativity, line_size)
    }

    /// Geometry as believed by a benchmark. Only requires an exact
    /// factorisation `total = sets * ways * line`.
    pub fn assumed(total_size: u64, associativity: u64, line_size: u64) -> Result<Self> {
        if associativity == 0 {
            return Err(Error::Geometry("associativity must be >= 1".into()));
        }
        if line_size < 8 {
            return Err(Error::Geometry(format!("line_size {line_size} < 8 bytes")));
        }
        let way_bytes = associativity * line_size;
        if total_size == 0 || total_size % way_bytes != 0 {
            return Err(Error::Geometry(format!(
                "total_size {total_size} is not a multiple of associativity*line_size = {way_bytes}"
            )));
        }
        let num_sets = total_size / way_bytes;
        let fast = (line_size.is_power_of_two() && num_sets.is_power_of_two())
            .then(|| (line_size.trailing_zeros(), num_sets - 1));
        Ok(Self {
            total_size,
            associativity,
            line_size,
            num_sets,
            fast,
        })
    }

    pub fn total_size(&self) -> u64 {
        self.total_size
    }
    pub fn associativity(&self) -> u64 {
        self.associativity
    }
    pub fn line_size(&self) -> u64 {
        self.line_size
    }
    pub fn num_sets(&self) -> u64 {
        self.num_sets
    }

    /// Byte distance between consecutive addresses of one set (`tot/asso`).
    pub fn way_stride(&self) -> u64 {
        self.total_size / self.associativity
    }

    pub fn line_addr(&self, addr: u64) -> u64 {
        addr / self.line_size
    }

    #[inline]
    pub fn set_index(&self, addr: u64) -> u64 {
        match self.fast {
            Some((shift, mask)) => (addr >> shift) & mask,
            None => (addr / self.line_size) % self.num_sets,
        }
    }

    #[inline]
    pub fn tag(&self, addr: u64) -> u64 {
        match self.fast {
            Some((shift, mask)) => (addr >> shift) >> (mask.count_ones()),
            None => (addr / self.line_size) / self.num_sets,
        }
    }

    /// First byte of the line identified by `(set, tag)`.
    pub fn addr_of(&self, set: u64, tag: u64) -> u64 {
        (tag * self.num_sets + set) * self.line_size
    }

    pub fn with_associativity(&self, associativity: u64) -> Result<Self> {
        Self::assumed(self.total_size, associativity, self.line_size)
    }
    pub fn with_line_size(&self, line_size: u64) -> Result<Self> {
        Self::assumed(self.total_size, self.associativity, line_size)
    }
    pub fn with_total_size(&self, total_size: u64) -> Result<Self> {
        Self::assumed(total_size, self.associativity, self.line_size)
    }
}

impl std::fmt::Display for CacheGeometry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}B/{}-way/{}B",
            self.total_size, self.associativity, self.line_size
        )
    }
}

/// Free-function form used throughout the address-planning code.
pub fn set_index(addr: u64, geom: &CacheGeometry) -> u64 {
    geom.set_index(addr)
}
