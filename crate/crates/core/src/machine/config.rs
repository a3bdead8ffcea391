use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cache::ReplacementPolicyKind;
use crate::error::{Error, Result};
use crate::geometry::CacheGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cluster {
    Big,
    Little,
}

impl std::fmt::Display for Cluster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Cluster::Big => "big",
            Cluster::Little => "little",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoreDescriptor {
    pub core_id: usize,
    pub cluster: Cluster,
    pub l1_geometry: CacheGeometry,
    pub l1_policy: ReplacementPolicyKind,
}

/// All latencies in cycles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyTable {
    pub t_l1: u64,
    pub t_l2: u64,
    pub t_dram: u64,
    pub t_wb_hit: u64,
    pub flush_l1: u64,
    pub flush_l2: u64,
    pub flush_miss: u64,
    pub inv_remote_clean_l1: u64,
    pub inv_remote_dirty_l1: u64,
    pub inv_remote_l2: u64,
    pub cross_cluster_penalty: u64,
    pub store_buffer_delta: u64,
}

impl Default for LatencyTable {
    fn default() -> Self {
        Self {
            t_l1: 4,
            t_l2: 14,
            t_dram: 200,
            t_wb_hit: 2,
            flush_l1: 40,
            flush_l2: 60,
            flush_miss: 30,
            inv_remote_clean_l1: 50,
            inv_remote_dirty_l1: 80,
            inv_remote_l2: 65,
            cross_cluster_penalty: 30,
            store_buffer_delta: 6,
        }
    }
}

impl LatencyTable {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_l1 < self.t_l2 && self.t_l2 < self.t_dram) {
            return Err(Error::Config(format!(
                "latency ordering t_l1 < t_l2 < t_dram violated ({} / {} / {})",
                self.t_l1, self.t_l2, self.t_dram
            )));
        }
        let all = [
            self.t_l1,
            self.t_l2,
            self.t_dram,
            self.t_wb_hit,
            self.flush_l1,
            self.flush_l2,
            self.flush_miss,
            self.inv_remote_clean_l1,
            self.inv_remote_dirty_l1,
            self.inv_remote_l2,
        ];
        if all.contains(&0) {
            return Err(Error::Config("latencies must be positive".into()));
        }
        Ok(())
    }

    /// Every latency multiplied by `factor` (frequency scaling).
    pub fn scaled(&self, factor: u64) -> Self {
        Self {
            t_l1: self.t_l1 * factor,
            t_l2: self.t_l2 * factor,
            t_dram: self.t_dram * factor,
            t_wb_hit: self.t_wb_hit * factor,
            flush_l1: self.flush_l1 * factor,
            flush_l2: self.flush_l2 * factor,
            flush_miss: self.flush_miss * factor,
            inv_remote_clean_l1: self.inv_remote_clean_l1 * factor,
            inv_remote_dirty_l1: self.inv_remote_dirty_l1 * factor,
            inv_remote_l2: self.inv_remote_l2 * factor,
            cross_cluster_penalty: self.cross_cluster_penalty * factor,
            store_buffer_delta: self.store_buffer_delta * factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicroArchToggles {
    pub store_buffer: bool,
    pub scu: bool,
    pub transient_region: bool,
    pub write_buffer_size: usize,
    pub mshr_size: usize,
}

impl Default for MicroArchToggles {
    fn default() -> Self {
        Self {
            store_buffer: true,
            scu: false,
            transient_region: false,
            write_buffer_size: 8,
            mshr_size: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    /// Standard deviation in cycles of the Gaussian added to every timed
    /// operation; the noisy value is truncated at zero.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { sigma: 3.0, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SecureCacheConfig {
    #[default]
    None,
    /// Partition-locked L1 on every core.
    Pl,
    /// Random-fill L1 on every core.
    Rf { rf_start: u64, rf_size: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineConfig {
    pub cores: Vec<CoreDescriptor>,
    pub l2_geometry: CacheGeometry,
    #[serde(default)]
    pub latency: LatencyTable,
    #[serde(default)]
    pub toggles: MicroArchToggles,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub secure: SecureCacheConfig,
    /// Core holding the target line.
    pub local_core: usize,
    /// Core used for cross-core steps and remote-write invalidations.
    pub remote_core: usize,
    /// Seed of the replacement streams.
    #[serde(default)]
    pub seed: u64,
}

impl Default for MachineConfig {
    /// Two little cores (32 KiB, 4-way, 64 B, random replacement) and two
    /// big cores (64 KiB, 16-way, 64 B) over a 256 KiB 8-way shared L2.
    fn default() -> Self {
        let little = CacheGeometry::new(32 * 1024, 4, 64).expect("valid");
        let big = CacheGeometry::new(64 * 1024, 16, 64).expect("valid");
        let core = |core_id, cluster, l1_geometry| CoreDescriptor {
            core_id,
            cluster,
            l1_geometry,
            l1_policy: ReplacementPolicyKind::Random { seed: 0 },
        };
        Self {
            cores: vec![
                core(0, Cluster::Little, little),
                core(1, Cluster::Little, little),
                core(2, Cluster::Big, big),
                core(3, Cluster::Big, big),
            ],
            l2_geometry: CacheGeometry::new(256 * 1024, 8, 64).expect("valid"),
            latency: LatencyTable::default(),
            toggles: MicroArchToggles::default(),
            noise: NoiseModel::default(),
            secure: SecureCacheConfig::None,
            local_core: 0,
            remote_core: 1,
            seed: 0,
        }
    }
}

impl MachineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cores.is_empty() {
            return Err(Error::Config("at least one core is required".into()));
        }
        for (i, c) in self.cores.iter().enumerate() {
            if c.core_id != i {
                return Err(Error::Config(format!(
                    "core_id {} at position {i}; ids must be 0..n in order",
                    c.core_id
                )));
            }
            if c.l1_geometry.line_size() != self.l2_geometry.line_size() {
                return Err(Error::Config(format!(
                    "core {i}: L1 line size {} differs from L2 line size {}",
                    c.l1_geometry.line_size(),
                    self.l2_geometry.line_size()
                )));
            }
            if matches!(self.secure, SecureCacheConfig::Pl)
                != matches!(c.l1_policy, ReplacementPolicyKind::PlRandom { .. })
            {
                return Err(Error::Config(format!(
                    "core {i}: PL cache requires the pl_random policy and vice versa"
                )));
            }
        }
        for (name, id) in [("local_core", self.local_core), ("remote_core", self.remote_core)] {
            if id >= self.cores.len() {
                return Err(Error::Config(format!("{name} {id} does not exist")));
            }
        }
        if self.cores.len() > 1 && self.local_core == self.remote_core {
            return Err(Error::Config("local_core and remote_core must differ".into()));
        }
        self.latency.validate()?;
        if self.toggles.mshr_size < 1 {
            return Err(Error::Config("mshr_size must be >= 1".into()));
        }
        if !(self.noise.sigma >= 0.0) {
            return Err(Error::Config("noise sigma must be >= 0".into()));
        }
        if let SecureCacheConfig::Rf { rf_size, .. } = self.secure {
            if rf_size < 1 {
                return Err(Error::Config("rf_size must be >= 1".into()));
            }
        }
        Ok(())
    }

    pub fn core(&self, id: usize) -> &CoreDescriptor {
        &self.cores[id]
    }

    /// First core of `cluster`, skipping `avoid`.
    pub fn core_in(&self, cluster: Cluster, avoid: Option<usize>) -> Option<usize> {
        self.cores
            .iter()
            .find(|c| c.cluster == cluster && Some(c.core_id) != avoid)
            .map(|c| c.core_id)
    }

    pub fn with_binding(&self, local: usize, remote: usize) -> Self {
        Self {
            local_core: local,
            remote_core: remote,
            ..self.clone()
        }
    }

    /// PL variant of this machine: lock-aware random replacement everywhere.
    pub fn with_pl(&self) -> Self {
        let mut cfg = self.clone();
        cfg.secure = SecureCacheConfig::Pl;
        for c in &mut cfg.cores {
            c.l1_policy = ReplacementPolicyKind::PlRandom {
                seed: c.l1_policy.seed().unwrap_or(0),
            };
        }
        cfg
    }

    pub fn with_rf(&self, rf_start: u64, rf_size: u64) -> Self {
        let mut cfg = self.clone();
        cfg.secure = SecureCacheConfig::Rf { rf_start, rf_size };
        for c in &mut cfg.cores {
            if let ReplacementPolicyKind::PlRandom { seed } = c.l1_policy {
                c.l1_policy = ReplacementPolicyKind::Random { seed };
            }
        }
        cfg
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}
