//! Benchmarks run with a wrong idea of the cache geometry: address-mapping
//! diagnosis and one-parameter sweeps.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, VulnType};
use crate::error::{Error, Result};
use crate::geometry::CacheGeometry;
use crate::harness::{run_suite, SuiteOptions, SuiteResult};
use crate::machine::{AddressPlan, MachineConfig, DEFAULT_REP};
use crate::report::{matrix_rows, MatrixRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    Associativity,
    LineSize,
    TotalSize,
}

impl Parameter {
    pub const ALL: [Parameter; 3] = [Parameter::Associativity, Parameter::LineSize, Parameter::TotalSize];

    pub fn name(self) -> &'static str {
        match self {
            Parameter::Associativity => "associativity",
            Parameter::LineSize => "line_size",
            Parameter::TotalSize => "total_size",
        }
    }

    pub fn parse(s: &str) -> Option<Parameter> {
        Parameter::ALL.into_iter().find(|p| p.name() == s)
    }

    /// Default sweep grid.
    pub fn grid(self) -> Vec<u64> {
        match self {
            Parameter::Associativity => vec![1, 2, 4, 8, 16],
            Parameter::LineSize => vec![16, 32, 64, 128, 256],
            Parameter::TotalSize => vec![8192, 16384, 32768, 65536, 98304],
        }
    }

    pub fn value_of(self, g: &CacheGeometry) -> u64 {
        match self {
            Parameter::Associativity => g.associativity(),
            Parameter::LineSize => g.line_size(),
            Parameter::TotalSize => g.total_size(),
        }
    }

    /// `g` with this parameter replaced, as a benchmark would assume it.
    pub fn patch(self, g: &CacheGeometry, value: u64) -> Result<CacheGeometry> {
        match self {
            Parameter::Associativity => g.with_associativity(value),
            Parameter::LineSize => g.with_line_size(value),
            Parameter::TotalSize => g.with_total_size(value),
        }
    }
}

impl fmt::Display for Parameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Situation {
    /// Fewer than `asso_d` distinct lines reach the intended device set.
    FewerLines,
    /// One intended set is spread over several device sets.
    SetSplit,
    /// Different intended sets share a device set.
    SetCollision,
}

impl Situation {
    pub fn symbol(self) -> &'static str {
        match self {
            Situation::FewerLines => "1",
            Situation::SetSplit => "2",
            Situation::SetCollision => "3",
        }
    }
}

/// Addresses a benchmark believing `bench` touches for each of its `rep`
/// intended sets: the target line `a` followed by its eviction set, i.e.
/// `asso_b` lines the benchmark considers one full set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchAddresses {
    pub set_groups: Vec<Vec<u64>>,
    pub a: Vec<u64>,
    pub nib: Vec<u64>,
}

pub fn generate_addresses(bench: &CacheGeometry, rep: usize) -> Result<BenchAddresses> {
    let plan = AddressPlan::new(*bench, rep)?;
    let lanes = plan.lanes();
    Ok(BenchAddresses {
        set_groups: lanes
            .iter()
            .map(|l| std::iter::once(l.a).chain(l.eviction.iter().copied()).collect())
            .collect(),
        a: lanes.iter().map(|l| l.a).collect(),
        nib: lanes.iter().map(|l| l.nib).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingDiagnosis {
    pub situations: BTreeSet<Situation>,
    /// Distinct device lines of each intended set that land in the device
    /// set of its target line.
    pub lines_in_target_set: Vec<usize>,
    /// NIB falls into the device set of `a`.
    pub wrap_back: bool,
    /// `tot_b / tot_d`.
    pub c_prime: f64,
}

impl MappingDiagnosis {
    pub fn symbols(&self) -> String {
        self.situations.iter().map(|s| s.symbol()).collect::<Vec<_>>().join("+")
    }
}

pub fn diagnose_mapping_rep(bench: &CacheGeometry, device: &CacheGeometry, rep: usize) -> Result<MappingDiagnosis> {
    let addrs = generate_addresses(bench, rep)?;
    let mut situations = BTreeSet::new();
    let mut lines_in_target_set = Vec::new();
    for group in &addrs.set_groups {
        let target = device.set_index(group[0]);
        let lines: BTreeSet<u64> = group
            .iter()
            .filter(|&&x| device.set_index(x) == target)
            .map(|&x| device.line_addr(x))
            .collect();
        lines_in_target_set.push(lines.len());
        if (lines.len() as u64) < device.associativity() {
            situations.insert(Situation::FewerLines);
        }
        if group.iter().any(|&x| device.set_index(x) != target) {
            situations.insert(Situation::SetSplit);
        }
    }
    let sets: BTreeSet<u64> = addrs.a.iter().map(|&x| device.set_index(x)).collect();
    if sets.len() < addrs.a.len() {
        situations.insert(Situation::SetCollision);
    }
    let wrap_back = addrs
        .a
        .iter()
        .zip(&addrs.nib)
        .any(|(&a, &n)| device.set_index(a) == device.set_index(n));
    Ok(MappingDiagnosis {
        situations,
        lines_in_target_set,
        wrap_back,
        c_prime: bench.total_size() as f64 / device.total_size() as f64,
    })
}

pub fn diagnose_mapping(bench: &CacheGeometry, device: &CacheGeometry) -> Result<MappingDiagnosis> {
    diagnose_mapping_rep(bench, device, DEFAULT_REP)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub parameter: Parameter,
    pub value: u64,
    pub is_device_value: bool,
    pub total_effective: usize,
    pub ao_effective: usize,
    pub so_effective: usize,
    pub sa_effective: usize,
    pub ao_ids: Vec<u32>,
    pub untestable_cases: usize,
    pub diagnosis: MappingDiagnosis,
    /// Per-pattern markers, labelled `parameter=value`.
    pub row: MatrixRow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub parameter: Parameter,
    pub device_value: u64,
    pub points: Vec<SweepPoint>,
}

impl SweepTable {
    pub fn point(&self, value: u64) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.value == value)
    }

    pub fn device_point(&self) -> Option<&SweepPoint> {
        self.point(self.device_value)
    }

    /// The device value scores at least as many effective patterns as any
    /// other value.
    pub fn argmax_at_device(&self) -> bool {
        match self.device_point() {
            Some(d) => self.points.iter().all(|p| p.total_effective <= d.total_effective),
            None => false,
        }
    }

    pub fn ao_invariant(&self) -> bool {
        self.points.windows(2).all(|w| w[0].ao_ids == w[1].ao_ids)
    }
}

fn point(parameter: Parameter, value: u64, device_value: u64, diagnosis: MappingDiagnosis, r: &SuiteResult) -> SweepPoint {
    let ao_ids = r
        .patterns
        .iter()
        .filter(|p| p.effective && p.label == VulnType::AO)
        .map(|p| p.pattern_id)
        .collect();
    SweepPoint {
        parameter,
        value,
        is_device_value: value == device_value,
        total_effective: r.effective_count(),
        ao_effective: r.effective_of_type(VulnType::AO),
        so_effective: r.effective_of_type(VulnType::SO),
        sa_effective: r.effective_of_type(VulnType::SA),
        ao_ids,
        untestable_cases: r.cases.iter().filter(|c| c.verdict().is_none()).count(),
        diagnosis,
        row: matrix_rows(&[r]).remove(0),
    }
}

/// Run the suite once per value with the benchmark geometry patched; the
/// device is the local core's L1.
pub fn sweep_parameter(
    device_machine: &MachineConfig,
    catalog: &Catalog,
    parameter: Parameter,
    values: &[u64],
    opts: &SuiteOptions,
) -> Result<SweepTable> {
    device_machine.validate()?;
    let device = device_machine.core(device_machine.local_core).l1_geometry;
    let device_value = parameter.value_of(&device);
    if !values.contains(&device_value) {
        return Err(Error::Config(format!(
            "{parameter} sweep must include the device value {device_value}"
        )));
    }
    let mut points = Vec::with_capacity(values.len());
    for &v in values {
        let bench = parameter.patch(&device, v)?;
        let diagnosis = diagnose_mapping_rep(&bench, &device, opts.rep)?;
        let o = SuiteOptions {
            bench_geometry: Some(bench),
            config_name: format!("{parameter}={v}"),
            ..opts.clone()
        };
        let r = run_suite(device_machine, catalog, &o)?;
        points.push(point(parameter, v, device_value, diagnosis, &r));
    }
    Ok(SweepTable { parameter, device_value, points })
}
