//! Three-step vulnerability patterns: vocabulary, labels, the catalog file
//! and its expansion into concrete benchmark cases.

mod classify;
mod enumerate;
mod expand;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use classify::{
    candidate_pairs, is_partition, label_from_pairs, reference_machine, Classifier, PairSet,
};
pub use enumerate::{
    build_catalog, enumerate_patterns, notation, syntactically_valid, vocabulary, Anchor,
    CatalogBuild, RawPattern, ANCHORS, BLOCK_ORDER, TARGET_CASES, TARGET_PATTERNS,
};
pub use expand::{bind_case, expand_catalog, expand_cases, CaseOptions, ClusterBinding, ConcreteCase, Scheduling};

use crate::error::{Error, Result};
use crate::machine::Actor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Target {
    #[serde(rename = "u")]
    U,
    #[serde(rename = "a")]
    A,
    #[serde(rename = "a_alias")]
    AAlias,
    #[serde(rename = "NIB")]
    Nib,
}

impl Target {
    fn short(self) -> &'static str {
        match self {
            Target::U => "u",
            Target::A => "a",
            Target::AAlias => "alias",
            Target::Nib => "NIB",
        }
    }
}

/// One step of a pattern: an access or an invalidation by an actor, or the
/// don't-care state `*`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StepOp {
    Star,
    Access { actor: Actor, target: Target },
    Invalidate { actor: Actor, target: Target },
}

impl StepOp {
    pub fn actor(&self) -> Option<Actor> {
        match *self {
            StepOp::Star => None,
            StepOp::Access { actor, .. } | StepOp::Invalidate { actor, .. } => Some(actor),
        }
    }

    pub fn target(&self) -> Option<Target> {
        match *self {
            StepOp::Star => None,
            StepOp::Access { target, .. } | StepOp::Invalidate { target, .. } => Some(target),
        }
    }

    pub fn is_star(&self) -> bool {
        matches!(self, StepOp::Star)
    }

    pub fn is_invalidation(&self) -> bool {
        matches!(self, StepOp::Invalidate { .. })
    }

    pub fn touches_u(&self) -> bool {
        self.target() == Some(Target::U)
    }

    /// `u` and `inv_u` are victim-only.
    pub fn is_well_formed(&self) -> bool {
        !(self.touches_u() && self.actor() == Some(Actor::Attacker))
    }

    fn target_name(&self) -> &'static str {
        match *self {
            StepOp::Star => "star",
            StepOp::Access { target, .. } => match target {
                Target::U => "u",
                Target::A => "a",
                Target::AAlias => "a_alias",
                Target::Nib => "NIB",
            },
            StepOp::Invalidate { target, .. } => match target {
                Target::U => "inv_u",
                Target::A => "inv_a",
                Target::AAlias => "inv_alias",
                Target::Nib => "inv_NIB",
            },
        }
    }

    fn from_names(actor: Option<Actor>, target: &str) -> std::result::Result<Self, String> {
        let (inv, t) = match target {
            "star" => {
                return match actor {
                    None => Ok(StepOp::Star),
                    Some(_) => Err("star step takes no actor".into()),
                }
            }
            "u" => (false, Target::U),
            "a" => (false, Target::A),
            "a_alias" => (false, Target::AAlias),
            "NIB" => (false, Target::Nib),
            "inv_u" => (true, Target::U),
            "inv_a" => (true, Target::A),
            "inv_alias" => (true, Target::AAlias),
            "inv_NIB" => (true, Target::Nib),
            other => return Err(format!("unknown step target {other:?}")),
        };
        let actor = actor.ok_or_else(|| format!("step {target:?} needs an actor"))?;
        let op = if inv {
            StepOp::Invalidate { actor, target: t }
        } else {
            StepOp::Access { actor, target: t }
        };
        if !op.is_well_formed() {
            return Err(format!("{op} is victim-only"));
        }
        Ok(op)
    }
}

impl fmt::Display for StepOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            StepOp::Star => f.write_str("*"),
            StepOp::Access { actor, target } | StepOp::Invalidate { actor, target } => {
                let who = match actor {
                    Actor::Victim => "V",
                    Actor::Attacker => "A",
                };
                let inv = if self.is_invalidation() { "inv_" } else { "" };
                write!(f, "{who}_{inv}{}", target.short())
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStep {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    actor: Option<Actor>,
    target: String,
}

impl Serialize for StepOp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RawStep {
            actor: self.actor(),
            target: self.target_name().to_string(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for StepOp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawStep::deserialize(d)?;
        StepOp::from_names(raw.actor, &raw.target).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VulnType {
    AO,
    SO,
    SA,
}

impl fmt::Display for VulnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VulnType::AO => "AO",
            VulnType::SO => "SO",
            VulnType::SA => "SA",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Interference {
    I,
    E,
}

impl fmt::Display for Interference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Interference::I => "I",
            Interference::E => "E",
        })
    }
}

/// External iff the attacker acts in Step 2 or Step 3.
pub fn interference_of(steps: &[StepOp; 3]) -> Interference {
    if steps[1..].iter().any(|s| s.actor() == Some(Actor::Attacker)) {
        Interference::E
    } else {
        Interference::I
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VulnPattern {
    pub id: u32,
    pub steps: [StepOp; 3],
    #[serde(rename = "type")]
    pub vuln_type: VulnType,
    pub interference: Interference,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl VulnPattern {
    pub fn label(&self) -> String {
        format!("{}-{}", self.interference, self.vuln_type)
    }

    pub fn notation(&self) -> String {
        format!("{} -> {} -> {}", self.steps[0], self.steps[1], self.steps[2])
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.steps[2].is_star() {
            return Err("step 3 must be timed, not star".into());
        }
        if !self.steps.iter().any(|s| s.touches_u()) {
            return Err("no step involves u".into());
        }
        if interference_of(&self.steps) != self.interference {
            return Err(format!(
                "interference {} contradicts actor placement",
                self.interference
            ));
        }
        Ok(())
    }
}

pub const CATALOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Catalog {
    pub schema_version: u32,
    pub patterns: Vec<VulnPattern>,
}

impl Catalog {
    pub fn new(patterns: Vec<VulnPattern>) -> Self {
        Self {
            schema_version: CATALOG_SCHEMA_VERSION,
            patterns,
        }
    }

    pub fn get(&self, id: u32) -> Option<&VulnPattern> {
        self.patterns.iter().find(|p| p.id == id)
    }

    pub fn by_name(&self, name: &str) -> Vec<&VulnPattern> {
        self.patterns
            .iter()
            .filter(|p| p.name.as_deref() == Some(name))
            .collect()
    }

    /// Pattern counts per `I/E-type` block.
    pub fn block_counts(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for p in &self.patterns {
            *m.entry(p.label()).or_insert(0) += 1;
        }
        m
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("catalog serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let schema = |line: usize, msg: String| Error::Schema {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let cat: Catalog =
            serde_json::from_str(text).map_err(|e| schema(e.line(), e.to_string()))?;
        if cat.schema_version != CATALOG_SCHEMA_VERSION {
            return Err(schema(
                line_of(text, "\"schema_version\"", 0),
                format!("unsupported schema_version {}", cat.schema_version),
            ));
        }
        let mut seen = BTreeMap::new();
        for (i, p) in cat.patterns.iter().enumerate() {
            let line = id_line(text, p.id, seen.get(&p.id).copied().unwrap_or(0));
            if let Some(_first) = seen.insert(p.id, line) {
                return Err(schema(line, format!("duplicate pattern id {}", p.id)));
            }
            if p.id == 0 {
                return Err(schema(line, "pattern ids start at 1".into()));
            }
            if i > 0 && cat.patterns[i - 1].id >= p.id {
                return Err(schema(line, format!("pattern id {} out of order", p.id)));
            }
            p.check().map_err(|m| schema(line, format!("pattern {}: {m}", p.id)))?;
        }
        Ok(cat)
    }
}

/// 1-based line of the first occurrence of `needle` after line `after`.
fn line_of(text: &str, needle: &str, after: usize) -> usize {
    text.lines()
        .enumerate()
        .skip(after)
        .find(|(_, l)| l.contains(needle))
        .map(|(i, _)| i + 1)
        .unwrap_or(0)
}

fn id_line(text: &str, id: u32, after: usize) -> usize {
    text.lines()
        .enumerate()
        .skip(after)
        .find(|(_, l)| {
            let t = l.trim().trim_end_matches(',');
            t.strip_prefix("\"id\":")
                .map(|v| v.trim() == id.to_string())
                .unwrap_or(false)
        })
        .map(|(i, _)| i + 1)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(t: Target) -> StepOp {
        StepOp::Access { actor: Actor::Victim, target: t }
    }
    fn a(t: Target) -> StepOp {
        StepOp::Access { actor: Actor::Attacker, target: t }
    }
    fn ainv(t: Target) -> StepOp {
        StepOp::Invalidate { actor: Actor::Attacker, target: t }
    }

    fn pattern(id: u32, steps: [StepOp; 3]) -> VulnPattern {
        VulnPattern {
            id,
            steps,
            vuln_type: VulnType::AO,
            interference: interference_of(&steps),
            name: None,
        }
    }

    #[test]
    fn notation() {
        let p = pattern(1, [ainv(Target::A), v(Target::U), a(Target::A)]);
        assert_eq!(p.notation(), "A_inv_a -> V_u -> A_a");
        assert_eq!(p.interference, Interference::E);
        let q = pattern(2, [StepOp::Star, v(Target::U), v(Target::A)]);
        assert_eq!(q.notation(), "* -> V_u -> V_a");
        assert_eq!(q.interference, Interference::I);
    }

    #[test]
    fn step_json_shape() {
        let s = serde_json::to_string(&ainv(Target::AAlias)).unwrap();
        assert_eq!(s, r#"{"actor":"attacker","target":"inv_alias"}"#);
        assert_eq!(serde_json::to_string(&StepOp::Star).unwrap(), r#"{"target":"star"}"#);
        let bad = serde_json::from_str::<StepOp>(r#"{"actor":"attacker","target":"u"}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn round_trip_and_duplicates() {
        let cat = Catalog::new(vec![
            pattern(1, [ainv(Target::A), v(Target::U), a(Target::A)]),
            pattern(2, [a(Target::A), v(Target::U), a(Target::A)]),
        ]);
        let text = cat.to_json();
        let back = Catalog::parse(&text, Path::new("c.json")).unwrap();
        assert_eq!(back, cat);

        let dup = text.replacen("\"id\": 2", "\"id\": 1", 1);
        match Catalog::parse(&dup, Path::new("c.json")) {
            Err(Error::Schema { line, msg, .. }) => {
                assert!(msg.contains("duplicate"), "{msg}");
                assert!(line > 1);
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn schema_errors_carry_lines() {
        let text = "{\n  \"schema_version\": 1,\n  \"patterns\": [\n    {\"id\": 1, \"steps\": 3}\n  ]\n}\n";
        match Catalog::parse(text, Path::new("c.json")) {
            Err(Error::Schema { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_semantic_violations() {
        let mut p = pattern(1, [ainv(Target::A), v(Target::U), a(Target::A)]);
        p.interference = Interference::I;
        let text = Catalog::new(vec![p]).to_json();
        assert!(Catalog::parse(&text, Path::new("c.json")).is_err());
        let q = pattern(1, [v(Target::A), a(Target::A), a(Target::Nib)]);
        let text = Catalog::new(vec![q]).to_json();
        assert!(Catalog::parse(&text, Path::new("c.json")).is_err());
    }
}
