use serde::{Deserialize, Serialize};

use super::{Catalog, StepOp, Target, VulnPattern};
use crate::error::{Error, Result};
use crate::geometry::CacheGeometry;
use crate::machine::{
    Actor, AddressClass, AddressPlan, BoundSequence, Cluster, MachineConfig, MemOp, StepBinding,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheduling {
    /// Victim and attacker take turns on the local core.
    TimeSliced,
    /// The attacker runs on the remote core.
    MultiThreaded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClusterBinding {
    pub local: Cluster,
    pub remote: Cluster,
}

impl ClusterBinding {
    pub const ALL: [ClusterBinding; 4] = [
        ClusterBinding { local: Cluster::Little, remote: Cluster::Little },
        ClusterBinding { local: Cluster::Little, remote: Cluster::Big },
        ClusterBinding { local: Cluster::Big, remote: Cluster::Little },
        ClusterBinding { local: Cluster::Big, remote: Cluster::Big },
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConcreteCase {
    pub case_id: u32,
    pub pattern_id: u32,
    /// Operation per step; `None` for the star step.
    pub ops: [Option<MemOp>; 3],
    pub scheduling: Scheduling,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binding: Option<ClusterBinding>,
    #[serde(default)]
    pub lock_prelude: bool,
}

impl ConcreteCase {
    /// Compact description such as `flush/read/read`.
    pub fn ops_label(&self) -> String {
        self.ops
            .iter()
            .map(|o| match o {
                None => "*",
                Some(MemOp::Read) => "read",
                Some(MemOp::Write) => "write",
                Some(MemOp::Flush) => "flush",
                Some(MemOp::RemoteWrite) => "remote_write",
            })
            .collect::<Vec<_>>()
            .join("/")
    }

    pub fn has_write(&self) -> bool {
        self.ops
            .iter()
            .any(|o| matches!(o, Some(MemOp::Write) | Some(MemOp::RemoteWrite)))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CaseOptions {
    /// Instantiate every case for the four local/remote cluster pairs.
    pub big_little: bool,
    /// Add the candidate-locking prelude (PL machines).
    pub lock_prelude: bool,
}

fn op_choices(step: &StepOp) -> &'static [Option<MemOp>] {
    match step {
        StepOp::Star => &[None],
        StepOp::Access { .. } => &[Some(MemOp::Read), Some(MemOp::Write)],
        StepOp::Invalidate { .. } => &[Some(MemOp::Flush), Some(MemOp::RemoteWrite)],
    }
}

/// Operation combinations of a pattern, Step 1 varying slowest.
pub(crate) fn op_combos(p: &VulnPattern) -> Vec<[Option<MemOp>; 3]> {
    let mut out = Vec::new();
    for &o1 in op_choices(&p.steps[0]) {
        for &o2 in op_choices(&p.steps[1]) {
            for &o3 in op_choices(&p.steps[2]) {
                out.push([o1, o2, o3]);
            }
        }
    }
    out
}

/// Under time slicing a remote write runs on the other core; the case gets
/// a multi-threaded twin only when the local core still hosts both actors.
fn local_hosts_both(p: &VulnPattern, ops: &[Option<MemOp>; 3]) -> bool {
    let mut v = false;
    let mut a = false;
    for (s, o) in p.steps.iter().zip(ops) {
        if matches!(o, None | Some(MemOp::RemoteWrite)) {
            continue;
        }
        match s.actor() {
            Some(Actor::Victim) => v = true,
            Some(Actor::Attacker) => a = true,
            None => {}
        }
    }
    v && a
}

/// Cases of one pattern, numbered from `first_id`.
pub fn expand_cases(p: &VulnPattern, opts: CaseOptions, first_id: u32) -> Vec<ConcreteCase> {
    let bindings: Vec<Option<ClusterBinding>> = if opts.big_little {
        ClusterBinding::ALL.iter().copied().map(Some).collect()
    } else {
        vec![None]
    };
    let mut out = Vec::new();
    for ops in op_combos(p) {
        let mut scheds = vec![Scheduling::TimeSliced];
        if local_hosts_both(p, &ops) {
            scheds.push(Scheduling::MultiThreaded);
        }
        for &scheduling in &scheds {
            for &binding in &bindings {
                out.push(ConcreteCase {
                    case_id: first_id + out.len() as u32,
                    pattern_id: p.id,
                    ops,
                    scheduling,
                    binding,
                    lock_prelude: opts.lock_prelude,
                });
            }
        }
    }
    out
}

pub fn expand_catalog(cat: &Catalog, opts: CaseOptions) -> Vec<ConcreteCase> {
    let mut out = Vec::new();
    for p in &cat.patterns {
        let next = out.len() as u32 + 1;
        out.extend(expand_cases(p, opts, next));
    }
    out
}

fn address_class(t: Target) -> AddressClass {
    match t {
        Target::U => AddressClass::U,
        Target::A => AddressClass::A,
        Target::AAlias => AddressClass::EvictionSet,
        Target::Nib => AddressClass::Nib,
    }
}

/// Resolve a case to cores, operations and addresses on `cfg`. The address
/// plan uses `bench` when given, otherwise the geometry picked by the
/// configuration-selection rule.
pub fn bind_case(
    cfg: &MachineConfig,
    p: &VulnPattern,
    case: &ConcreteCase,
    bench: Option<CacheGeometry>,
    rep: usize,
) -> Result<BoundSequence> {
    let (local, remote) = match case.binding {
        None => (cfg.local_core, cfg.remote_core),
        Some(b) => {
            let local = cfg.core_in(b.local, None).ok_or_else(|| {
                Error::Config(format!("machine has no {} core", b.local))
            })?;
            let remote = cfg.core_in(b.remote, Some(local)).ok_or_else(|| {
                Error::Config(format!("machine has no second {} core", b.remote))
            })?;
            (local, remote)
        }
    };
    let home = |actor: Actor| match (actor, case.scheduling) {
        (Actor::Victim, _) | (Actor::Attacker, Scheduling::TimeSliced) => local,
        (Actor::Attacker, Scheduling::MultiThreaded) => remote,
    };
    let other = |core: usize| if core == local { remote } else { local };
    let mut steps = [None; 3];
    for (i, (s, o)) in p.steps.iter().zip(case.ops.iter()).enumerate() {
        let (StepOp::Access { actor, target } | StepOp::Invalidate { actor, target }) = *s else {
            continue;
        };
        let op = o.ok_or_else(|| Error::Config(format!("case {}: step {} has no op", case.case_id, i + 1)))?;
        let core = match op {
            MemOp::RemoteWrite => other(home(actor)),
            _ => home(actor),
        };
        steps[i] = Some(StepBinding {
            actor,
            core,
            op,
            class: address_class(target),
        });
    }
    let geometry = match bench {
        Some(g) => g,
        None => {
            let early: Vec<usize> = steps[..2].iter().flatten().map(|s| s.core).collect();
            if !early.is_empty() && early.iter().all(|&c| c == remote) {
                cfg.core(remote).l1_geometry
            } else {
                cfg.core(local).l1_geometry
            }
        }
    };
    Ok(BoundSequence {
        steps,
        plan: AddressPlan::new(geometry, rep)?,
        lock_candidates: case.lock_prelude,
        local_core: local,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{interference_of, VulnType};

    fn pat(steps: [StepOp; 3]) -> VulnPattern {
        VulnPattern {
            id: 7,
            steps,
            vuln_type: VulnType::AO,
            interference: interference_of(&steps),
            name: None,
        }
    }
    fn acc(actor: Actor, target: Target) -> StepOp {
        StepOp::Access { actor, target }
    }
    fn inv(actor: Actor, target: Target) -> StepOp {
        StepOp::Invalidate { actor, target }
    }

    #[test]
    fn all_local_mixed_actors_double() {
        let p = pat([acc(Actor::Attacker, Target::A), acc(Actor::Victim, Target::U), acc(Actor::Attacker, Target::A)]);
        let cases = expand_cases(&p, CaseOptions::default(), 1);
        assert_eq!(cases.len(), 16);
        assert_eq!(cases[0].case_id, 1);
        assert_eq!(cases[15].case_id, 16);
    }

    #[test]
    fn victim_only_does_not_double() {
        let p = pat([acc(Actor::Victim, Target::U), acc(Actor::Victim, Target::A), acc(Actor::Victim, Target::U)]);
        assert_eq!(expand_cases(&p, CaseOptions::default(), 1).len(), 8);
        let q = pat([StepOp::Star, acc(Actor::Victim, Target::U), acc(Actor::Victim, Target::A)]);
        assert_eq!(expand_cases(&q, CaseOptions::default(), 1).len(), 4);
    }

    #[test]
    fn remote_write_moves_actor_off_core() {
        // V_u -> A_inv_a -> V_u: the remote-write variant leaves only the victim locally
        let p = pat([acc(Actor::Victim, Target::U), inv(Actor::Attacker, Target::A), acc(Actor::Victim, Target::U)]);
        assert_eq!(expand_cases(&p, CaseOptions::default(), 1).len(), 12);
    }

    #[test]
    fn big_little_quadruples() {
        let p = pat([acc(Actor::Victim, Target::U), acc(Actor::Victim, Target::A), acc(Actor::Victim, Target::U)]);
        let opts = CaseOptions { big_little: true, lock_prelude: false };
        assert_eq!(expand_cases(&p, opts, 1).len(), 32);
    }

    #[test]
    fn binding_follows_scheduling() {
        let cfg = MachineConfig::default();
        let p = pat([inv(Actor::Attacker, Target::A), acc(Actor::Victim, Target::U), acc(Actor::Attacker, Target::A)]);
        let cases = expand_cases(&p, CaseOptions::default(), 1);
        let mt = cases
            .iter()
            .find(|c| c.scheduling == Scheduling::MultiThreaded && c.ops[0] == Some(MemOp::Flush))
            .unwrap();
        let b = bind_case(&cfg, &p, mt, None, 8).unwrap();
        let cores: Vec<usize> = b.steps.iter().map(|s| s.unwrap().core).collect();
        assert_eq!(cores, vec![1, 0, 1]);
        let rw = cases
            .iter()
            .find(|c| c.scheduling == Scheduling::TimeSliced && c.ops[0] == Some(MemOp::RemoteWrite))
            .unwrap();
        let b = bind_case(&cfg, &p, rw, None, 8).unwrap();
        assert_eq!(b.steps[0].unwrap().core, 1);
    }

    #[test]
    fn remote_geometry_selected_when_early_steps_are_remote() {
        let mut cfg = MachineConfig::default();
        cfg.local_core = 0;
        cfg.remote_core = 2;
        // both early steps are attacker steps, multi-threaded -> remote big core
        let p = pat([acc(Actor::Attacker, Target::AAlias), acc(Actor::Attacker, Target::A), acc(Actor::Victim, Target::U)]);
        let cases = expand_cases(&p, CaseOptions::default(), 1);
        let mt = cases.iter().find(|c| c.scheduling == Scheduling::MultiThreaded).unwrap();
        let b = bind_case(&cfg, &p, mt, None, 8).unwrap();
        assert_eq!(*b.plan.geometry(), cfg.core(2).l1_geometry);
        let ts = cases.iter().find(|c| c.scheduling == Scheduling::TimeSliced).unwrap();
        let b = bind_case(&cfg, &p, ts, None, 8).unwrap();
        assert_eq!(*b.plan.geometry(), cfg.core(0).l1_geometry);
    }
}
