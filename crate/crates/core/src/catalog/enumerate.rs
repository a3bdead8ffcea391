use std::fmt::Write as _;

use rayon::prelude::*;

use super::classify::Classifier;
use super::expand::{expand_cases, CaseOptions};
use super::{interference_of, Catalog, Interference, StepOp, Target, VulnPattern, VulnType};
use crate::error::{Error, Result};
use crate::machine::Actor;
use crate::rng::splitmix64;

pub const TARGET_PATTERNS: usize = 88;
pub const TARGET_CASES: usize = 1094;

/// Every step symbol: seven accesses, seven invalidations and `*`.
pub fn vocabulary() -> Vec<StepOp> {
    let mut v = vec![StepOp::Star];
    for inv in [false, true] {
        for target in [Target::U, Target::A, Target::AAlias, Target::Nib] {
            for actor in [Actor::Victim, Actor::Attacker] {
                let op = if inv {
                    StepOp::Invalidate { actor, target }
                } else {
                    StepOp::Access { actor, target }
                };
                if op.is_well_formed() {
                    v.push(op);
                }
            }
        }
    }
    v
}

/// A triple that survived reduction, with its oracle label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPattern {
    pub steps: [StepOp; 3],
    pub vuln_type: VulnType,
    pub interference: Interference,
    pub pairs: u8,
    /// Single-core case count of the expansion.
    pub cases: usize,
}

/// Syntactic reduction: needs `u`, a timed Step 3, `*` only as the first
/// step and no identical adjacent steps.
pub fn syntactically_valid(steps: &[StepOp; 3]) -> bool {
    steps.iter().any(|s| s.touches_u())
        && !steps[2].is_star()
        && !steps[1].is_star()
        && steps[0] != steps[1]
        && steps[1] != steps[2]
}

/// All triples over the vocabulary that survive reduction on the reference
/// machine, in vocabulary order.
pub fn enumerate_patterns(seed: u64) -> Result<Vec<RawPattern>> {
    let vocab = vocabulary();
    let mut triples = Vec::new();
    for &s1 in &vocab {
        for &s2 in &vocab {
            for &s3 in &vocab {
                let steps = [s1, s2, s3];
                if syntactically_valid(&steps) {
                    triples.push(steps);
                }
            }
        }
    }
    let labelled: Vec<Option<RawPattern>> = triples
        .par_chunks(64)
        .map(|chunk| -> Result<Vec<Option<RawPattern>>> {
            let mut cl = Classifier::reference(seed)?;
            chunk
                .iter()
                .map(|steps| {
                    let p = VulnPattern {
                        id: 0,
                        steps: *steps,
                        vuln_type: VulnType::AO,
                        interference: interference_of(steps),
                        name: None,
                    };
                    let pairs = cl.pattern_pairs(&p)?;
                    Ok(super::label_from_pairs(pairs).map(|t| RawPattern {
                        steps: *steps,
                        vuln_type: t,
                        interference: p.interference,
                        pairs,
                        cases: expand_cases(&p, CaseOptions::default(), 1).len(),
                    }))
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok(labelled.into_iter().flatten().collect())
}

/// Named attacks pinned to fixed catalog ids.
pub struct Anchor {
    pub id: u32,
    pub notation: &'static str,
    pub name: &'static str,
}

pub const ANCHORS: &[Anchor] = &[
    Anchor { id: 5, notation: "A_inv_a -> V_u -> A_a", name: "Flush+Reload" },
    Anchor { id: 6, notation: "V_inv_a -> V_u -> A_a", name: "Flush+Reload" },
    Anchor { id: 7, notation: "A_alias -> V_u -> A_a", name: "Evict+Reload" },
    Anchor { id: 8, notation: "V_alias -> V_u -> A_a", name: "Evict+Reload" },
    Anchor { id: 33, notation: "V_u -> V_a -> V_u", name: "Bernstein" },
    Anchor { id: 34, notation: "V_a -> V_u -> V_a", name: "Bernstein" },
    Anchor { id: 35, notation: "V_u -> V_alias -> V_u", name: "Bernstein" },
    Anchor { id: 36, notation: "V_alias -> V_u -> V_alias", name: "Bernstein" },
    Anchor { id: 41, notation: "V_u -> A_alias -> V_u", name: "Evict+Time" },
    Anchor { id: 43, notation: "A_alias -> V_u -> A_alias", name: "Prime+Probe" },
    Anchor { id: 44, notation: "A_a -> V_u -> A_a", name: "Prime+Probe" },
    Anchor { id: 47, notation: "A_inv_a -> V_u -> A_inv_a", name: "Flush+Flush" },
    Anchor { id: 48, notation: "V_inv_a -> V_u -> A_inv_a", name: "Flush+Flush" },
    Anchor { id: 49, notation: "A_inv_a -> V_u -> V_inv_a", name: "Flush+Flush" },
    Anchor { id: 50, notation: "V_inv_a -> V_u -> V_inv_a", name: "Flush+Flush" },
];

/// Block order used for ids outside the anchored positions.
pub const BLOCK_ORDER: [(Interference, VulnType); 6] = [
    (Interference::E, VulnType::AO),
    (Interference::I, VulnType::AO),
    (Interference::E, VulnType::SO),
    (Interference::I, VulnType::SO),
    (Interference::E, VulnType::SA),
    (Interference::I, VulnType::SA),
];

fn block_index(i: Interference, t: VulnType) -> usize {
    BLOCK_ORDER
        .iter()
        .position(|b| *b == (i, t))
        .expect("every label has a block")
}

pub fn notation(steps: &[StepOp; 3]) -> String {
    format!("{} -> {} -> {}", steps[0], steps[1], steps[2])
}

/// Stable pseudo-random rank of a pattern, used to sample each block
/// without favouring any region of the vocabulary.
fn sample_rank(steps: &[StepOp; 3]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in notation(steps).bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(h)
}

/// Largest-remainder apportionment of `total` over `weights`.
fn apportion(weights: &[usize], total: usize) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let mut q: Vec<usize> = weights.iter().map(|w| w * total / sum).collect();
    let mut rem: Vec<(usize, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, w)| (w * total % sum, i))
        .collect();
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let missing = total - q.iter().sum::<usize>();
    for &(_, i) in rem.iter().take(missing) {
        q[i] += 1;
    }
    q
}

/// Result of building the curated catalog.
#[derive(Debug, Clone)]
pub struct CatalogBuild {
    pub catalog: Catalog,
    pub raw_count: usize,
    pub case_count: usize,
    /// Account of how the raw enumeration was reduced to the catalog.
    pub report: String,
}

/// Enumerate, then curate to [`TARGET_PATTERNS`] patterns: anchored named
/// attacks at fixed ids, every other block sampled in proportion to its
/// raw size, and single swaps inside a block until the single-core
/// expansion totals [`TARGET_CASES`].
pub fn build_catalog(seed: u64) -> Result<CatalogBuild> {
    let raw = enumerate_patterns(seed)?;
    let mut report = String::new();
    let mut block_raw = [0usize; 6];
    for r in &raw {
        block_raw[block_index(r.interference, r.vuln_type)] += 1;
    }
    writeln!(report, "raw patterns surviving reduction: {}", raw.len()).ok();
    for (b, n) in BLOCK_ORDER.iter().zip(block_raw) {
        writeln!(report, "  {}-{}: {n}", b.0, b.1).ok();
    }

    let mut anchored: Vec<(u32, &RawPattern, &str)> = Vec::new();
    for a in ANCHORS {
        let r = raw
            .iter()
            .find(|r| notation(&r.steps) == a.notation)
            .ok_or_else(|| {
                Error::Oracle(format!(
                    "anchor {} ({}) did not survive reduction on the reference machine",
                    a.notation, a.name
                ))
            })?;
        anchored.push((a.id, r, a.name));
    }
    let is_anchor = |r: &RawPattern| anchored.iter().any(|(_, a, _)| a.steps == r.steps);

    let quotas = apportion(&block_raw, TARGET_PATTERNS);
    let mut chosen: Vec<Vec<&RawPattern>> = vec![Vec::new(); 6];
    let mut spare: Vec<Vec<&RawPattern>> = vec![Vec::new(); 6];
    for b in 0..6 {
        let in_block = anchored
            .iter()
            .filter(|(_, r, _)| block_index(r.interference, r.vuln_type) == b)
            .count();
        let mut pool: Vec<&RawPattern> = raw
            .iter()
            .filter(|r| block_index(r.interference, r.vuln_type) == b && !is_anchor(r))
            .collect();
        pool.sort_by_key(|r| sample_rank(&r.steps));
        let take = quotas[b].saturating_sub(in_block).min(pool.len());
        spare[b] = pool.split_off(take);
        chosen[b] = pool;
    }
    let mut total: usize = anchored.iter().map(|(_, r, _)| r.cases).sum::<usize>()
        + chosen.iter().flatten().map(|r| r.cases).sum::<usize>();
    let n_selected = anchored.len() + chosen.iter().map(Vec::len).sum::<usize>();
    writeln!(
        report,
        "sampled {n_selected} patterns (block quotas {quotas:?}); {total} single-core cases before balancing"
    )
    .ok();

    let mut swaps = 0;
    while total != TARGET_CASES && swaps < 64 {
        let want = TARGET_CASES as i64 - total as i64;
        // the swap that moves the total closest to the target
        let mut best: Option<(i64, usize, usize, usize)> = None;
        for b in 0..6 {
            for (ci, c) in chosen[b].iter().enumerate().rev() {
                for (si, s) in spare[b].iter().enumerate() {
                    let d = s.cases as i64 - c.cases as i64;
                    if d == 0 {
                        continue;
                    }
                    let miss = (want - d).abs();
                    if miss < want.abs() && best.map_or(true, |(m, ..)| miss < m) {
                        best = Some((miss, b, ci, si));
                    }
                }
            }
        }
        let Some((_, b, ci, si)) = best else { break };
        let out = chosen[b].remove(ci);
        let inn = spare[b].remove(si);
        total = total - out.cases + inn.cases;
        writeln!(report, "  swap {} ({} cases) for {} ({} cases)", notation(&out.steps), out.cases, notation(&inn.steps), inn.cases).ok();
        chosen[b].push(inn);
        spare[b].push(out);
        spare[b].sort_by_key(|r| sample_rank(&r.steps));
        swaps += 1;
    }
    if n_selected != TARGET_PATTERNS || total != TARGET_CASES {
        writeln!(report, "curation failed: {n_selected} patterns, {total} cases").ok();
        return Err(Error::Oracle(report));
    }

    let vocab = vocabulary();
    let vidx = |s: &StepOp| vocab.iter().position(|v| v == s).unwrap_or(usize::MAX);
    let mut rest: Vec<&RawPattern> = chosen.into_iter().flatten().collect();
    rest.sort_by_key(|r| {
        (
            block_index(r.interference, r.vuln_type),
            r.steps.map(|s| vidx(&s)),
        )
    });
    let mut slots: Vec<Option<(&RawPattern, Option<&str>)>> = vec![None; TARGET_PATTERNS];
    for (id, r, name) in &anchored {
        slots[*id as usize - 1] = Some((r, Some(name)));
    }
    let mut it = rest.into_iter();
    for s in slots.iter_mut().filter(|s| s.is_none()) {
        *s = it.next().map(|r| (r, None));
    }
    let patterns = slots
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let (r, name) = s.expect("every slot filled");
            VulnPattern {
                id: i as u32 + 1,
                steps: r.steps,
                vuln_type: r.vuln_type,
                interference: r.interference,
                name: name.map(str::to_string),
            }
        })
        .collect();
    writeln!(
        report,
        "curated catalog: {TARGET_PATTERNS} patterns, {total} single-core cases"
    )
    .ok();
    if raw.len() != TARGET_PATTERNS {
        writeln!(
            report,
            "discrepancy: reconstructed reduction yields {} raw patterns, not {TARGET_PATTERNS}",
            raw.len()
        )
        .ok();
    }
    Ok(CatalogBuild {
        catalog: Catalog::new(patterns),
        raw_count: raw.len(),
        case_count: total,
        report,
    })
}
