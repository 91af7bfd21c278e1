//! Findings, their stable keys, user flags and report diffs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::address::CellAddress;

pub const RULE_REPEATED_REF: &str = "SG-R1-repeated-ref";
pub const RULE_EMPTY_REF: &str = "SG-R2-empty-ref";
pub const RULE_CONSTANT: &str = "SG-R3-constant";
pub const RULE_READING_DIRECTION: &str = "SG-R4-reading-direction";
pub const RULE_HIDDEN_CONTENT: &str = "SG-R5-hidden-content";
pub const RULE_NEIGHBOR: &str = "SG-R6-neighbor-inconsistency";
pub const RULE_SCENARIO: &str = "SG-T1-scenario";
pub const RULE_VALIDATION: &str = "SG-V1-validation";
pub const RULE_ENGINE: &str = "SG-E1-engine";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Severity {
    /// Points at a likely error in the computation.
    FaultIndicator,
    /// A smell that makes the sheet harder to maintain.
    Imperfection,
}

impl Severity {
    pub fn as_str(self) -> &'static str {
        match self {
            Severity::FaultIndicator => "fault-indicator",
            Severity::Imperfection => "imperfection",
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FindingLocation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub address: CellAddress,
}

impl FindingLocation {
    pub fn at(address: CellAddress) -> Self {
        Self { name: None, address }
    }

    pub fn named(name: impl Into<String>, address: CellAddress) -> Self {
        Self { name: Some(name.into()), address }
    }

    fn identity(&self) -> String {
        match &self.name {
            Some(n) => format!("name:{n}"),
            None => format!("addr:{}", self.address),
        }
    }
}

impl fmt::Display for FindingLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.name {
            Some(n) => write!(f, "{} ({n})", self.address),
            None => self.address.fmt(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Finding {
    pub key: String,
    pub rule_id: String,
    pub severity: Severity,
    pub locations: Vec<FindingLocation>,
    pub message: String,
    pub generation: u64,
    #[serde(default)]
    pub payload: Vec<String>,
}

impl Finding {
    pub fn new(
        rule_id: &str,
        severity: Severity,
        locations: Vec<FindingLocation>,
        message: impl Into<String>,
        payload: Vec<String>,
        generation: u64,
    ) -> Self {
        Self {
            key: finding_key(rule_id, &locations, &payload),
            rule_id: rule_id.to_string(),
            severity,
            locations,
            message: message.into(),
            generation,
            payload,
        }
    }

    pub fn primary(&self) -> Option<&CellAddress> {
        self.locations.first().map(|l| &l.address)
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let locs: Vec<String> = self.locations.iter().map(ToString::to_string).collect();
        write!(f, "[{}] {} {} {}: {}", self.key, self.severity, self.rule_id, locs.join(", "), self.message)
    }
}

/// First 16 hex digits of SHA-256 over the rule id, the location
/// identities (stable name when there is one, address otherwise) sorted,
/// and the payload. Every field is length-prefixed.
pub fn finding_key(rule_id: &str, locations: &[FindingLocation], payload: &[String]) -> String {
    let mut ids: Vec<String> = locations.iter().map(FindingLocation::identity).collect();
    ids.sort();
    let mut hasher = Sha256::new();
    let mut field = |tag: u8, s: &str| {
        hasher.update([tag]);
        hasher.update((s.len() as u64).to_be_bytes());
        hasher.update(s.as_bytes());
    };
    field(b'r', rule_id);
    for id in &ids {
        field(b'l', id);
    }
    for p in payload {
        field(b'p', p);
    }
    let digest = hasher.finalize();
    hex::encode(&digest[..8])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "camelCase")]
pub enum FlagStatus {
    FalsePositive,
    #[serde(rename_all = "camelCase")]
    HoldOff {
        until_generation: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FindingFlag {
    pub key: String,
    #[serde(flatten)]
    pub status: FlagStatus,
    #[serde(default)]
    pub note: String,
    #[serde(default)]
    pub author: String,
    pub timestamp: DateTime<Utc>,
}

impl FindingFlag {
    /// A flag stamped with the current time.
    pub fn new(key: impl Into<String>, status: FlagStatus, note: impl Into<String>, author: impl Into<String>) -> Self {
        Self { key: key.into(), status, note: note.into(), author: author.into(), timestamp: Utc::now() }
    }

    pub fn suppresses(&self, generation: u64) -> bool {
        match self.status {
            FlagStatus::FalsePositive => true,
            FlagStatus::HoldOff { until_generation } => generation < until_generation,
        }
    }
}

/// Drops findings suppressed by a flag. A false-positive flag always
/// suppresses; a hold-off only while the report generation is below its
/// limit. Returns the visible findings and the number suppressed.
pub fn apply_flags(raw: Vec<Finding>, flags: &BTreeMap<String, FindingFlag>, generation: u64) -> (Vec<Finding>, usize) {
    let before = raw.len();
    let visible: Vec<Finding> =
        raw.into_iter().filter(|f| !flags.get(&f.key).is_some_and(|flag| flag.suppresses(generation))).collect();
    let suppressed = before - visible.len();
    (visible, suppressed)
}

/// Merges a new flag into an existing set. A false-positive flag is never
/// downgraded to a hold-off.
pub fn merge_flag(flags: &mut BTreeMap<String, FindingFlag>, flag: FindingFlag) {
    if let Some(old) = flags.get(&flag.key) {
        if old.status == FlagStatus::FalsePositive && flag.status != FlagStatus::FalsePositive {
            return;
        }
    }
    flags.insert(flag.key.clone(), flag);
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportDiff {
    pub new: Vec<String>,
    pub resolved: Vec<String>,
    pub persisting: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InspectionReport {
    pub generation: u64,
    pub findings: Vec<Finding>,
    pub suppressed_count: usize,
    pub diff: ReportDiff,
}

impl InspectionReport {
    pub fn keys(&self) -> BTreeSet<&str> {
        self.findings.iter().map(|f| f.key.as_str()).collect()
    }

    pub fn has_faults(&self) -> bool {
        self.findings.iter().any(|f| f.severity == Severity::FaultIndicator)
    }
}

pub fn diff_reports(previous: Option<&InspectionReport>, current: &[Finding]) -> ReportDiff {
    let old: BTreeSet<&str> = previous.map(|r| r.keys()).unwrap_or_default();
    let now: BTreeSet<&str> = current.iter().map(|f| f.key.as_str()).collect();
    let owned = |it: &mut dyn Iterator<Item = &&str>| it.map(|s| s.to_string()).collect::<Vec<_>>();
    ReportDiff {
        new: owned(&mut now.difference(&old)),
        resolved: owned(&mut old.difference(&now)),
        persisting: owned(&mut now.intersection(&old)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn addr(s: &str) -> CellAddress {
        s.parse().unwrap()
    }

    fn finding(rule: &str, at: &str) -> Finding {
        Finding::new(rule, Severity::Imperfection, vec![FindingLocation::at(addr(at))], "m", vec![], 1)
    }

    fn flag(key: &str, status: FlagStatus) -> FindingFlag {
        FindingFlag { key: key.into(), status, note: String::new(), author: "t".into(), timestamp: Utc::now() }
    }

    #[test]
    fn keys_are_short_hex_and_order_insensitive() {
        let a = FindingLocation::at(addr("S!A1"));
        let b = FindingLocation::named("sg_in_1", addr("S!B2"));
        let k1 = finding_key("X", &[a.clone(), b.clone()], &["p".into()]);
        let k2 = finding_key("X", &[b.clone(), a.clone()], &["p".into()]);
        assert_eq!(k1, k2);
        assert_eq!(k1.len(), 16);
        assert!(k1.chars().all(|c| c.is_ascii_hexdigit()));
        assert_ne!(k1, finding_key("Y", &[a.clone(), b.clone()], &["p".into()]));
        assert_ne!(k1, finding_key("X", &[a, b], &["q".into()]));
    }

    #[test]
    fn named_location_key_survives_moves() {
        let k1 = finding_key("X", &[FindingLocation::named("n", addr("S!B12"))], &[]);
        let k2 = finding_key("X", &[FindingLocation::named("n", addr("S!B13"))], &[]);
        assert_eq!(k1, k2);
    }

    #[test]
    fn key_matches_independent_digest() {
        let key = finding_key("R", &[FindingLocation::at(addr("S!A1"))], &[]);
        let mut bytes = vec![b'r'];
        bytes.extend(1u64.to_be_bytes());
        bytes.push(b'R');
        let id = "addr:S!A1";
        bytes.push(b'l');
        bytes.extend((id.len() as u64).to_be_bytes());
        bytes.extend(id.as_bytes());
        let digest = Sha256::digest(&bytes);
        assert_eq!(key, hex::encode(&digest[..8]));
    }

    #[test]
    fn flags_suppress() {
        let f = finding("X", "S!A1");
        let mut flags = BTreeMap::new();
        flags.insert(f.key.clone(), flag(&f.key, FlagStatus::HoldOff { until_generation: 5 }));
        let (vis, n) = apply_flags(vec![f.clone()], &flags, 4);
        assert!(vis.is_empty());
        assert_eq!(n, 1);
        let (vis, n) = apply_flags(vec![f.clone()], &flags, 5);
        assert_eq!((vis.len(), n), (1, 0));

        merge_flag(&mut flags, flag(&f.key, FlagStatus::FalsePositive));
        merge_flag(&mut flags, flag(&f.key, FlagStatus::HoldOff { until_generation: 1 }));
        let (vis, _) = apply_flags(vec![f], &flags, 100);
        assert!(vis.is_empty());
    }

    #[test]
    fn diff_partitions_keys() {
        let a = finding("A", "S!A1");
        let b = finding("B", "S!A1");
        let c = finding("C", "S!A1");
        let prev = InspectionReport { findings: vec![a.clone(), b.clone()], ..Default::default() };
        let d = diff_reports(Some(&prev), &[b.clone(), c.clone()]);
        assert_eq!(d.new, vec![c.key]);
        assert_eq!(d.resolved, vec![a.key]);
        assert_eq!(d.persisting, vec![b.key.clone()]);
        assert_eq!(diff_reports(None, std::slice::from_ref(&b)).new, vec![b.key]);
    }

    #[test]
    fn flag_serde_shape() {
        let f = flag("abc", FlagStatus::HoldOff { until_generation: 9 });
        let v = serde_json::to_value(&f).unwrap();
        assert_eq!(v["status"], "holdOff");
        assert_eq!(v["untilGeneration"], 9);
        let back: FindingFlag = serde_json::from_value(v).unwrap();
        assert_eq!(back, f);
    }
}
