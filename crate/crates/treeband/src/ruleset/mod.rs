//! Rules, packets, and the linear-scan oracle.
//!
//! A rule is a priority-ordered conjunction of 12 field matchers, each
//! canonicalized to a closed integer interval `[lo, hi]`; a packet is a point
//! in the same 12-dimensional space. [`oracle_classify`] is the exhaustive
//! reference matcher the rest of the crate is validated against.

pub(crate) mod parse;
mod synth;

pub use parse::{parse_ruleset, RulesetFormat};
pub use synth::{generate_synthetic, generate_trace, SynthProfile, TracePoint};

use crate::{Error, Result};

/// How a field is conventionally written in rule files. After parsing, every
/// matcher is an interval regardless of its source syntax.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchKind {
    Prefix,
    Range,
    Exact,
}

/// One packet-header attribute: name, bit width, and conventional match syntax.
#[derive(Debug, Clone, Copy)]
pub struct FieldSpec {
    pub name: &'static str,
    pub width: u32,
    pub kind: MatchKind,
    pub index: usize,
}

impl FieldSpec {
    /// Largest representable value for this field.
    pub fn max_value(&self) -> u64 {
        max_for_width(self.width)
    }
}

pub(crate) fn max_for_width(width: u32) -> u64 {
    debug_assert!(width > 0 && width <= 48);
    (1u64 << width) - 1
}

/// Number of header fields.
pub const FIELD_COUNT: usize = 12;

/// The 12 OpenFlow match fields, in canonical declaration order.
pub static FIELDS: [FieldSpec; FIELD_COUNT] = [
    FieldSpec { name: "nw_src", width: 32, kind: MatchKind::Prefix, index: 0 },
    FieldSpec { name: "nw_dst", width: 32, kind: MatchKind::Prefix, index: 1 },
    FieldSpec { name: "tp_src", width: 16, kind: MatchKind::Range, index: 2 },
    FieldSpec { name: "tp_dst", width: 16, kind: MatchKind::Range, index: 3 },
    FieldSpec { name: "ip_proto", width: 8, kind: MatchKind::Exact, index: 4 },
    FieldSpec { name: "dl_src", width: 48, kind: MatchKind::Exact, index: 5 },
    FieldSpec { name: "dl_dst", width: 48, kind: MatchKind::Exact, index: 6 },
    FieldSpec { name: "in_port", width: 32, kind: MatchKind::Exact, index: 7 },
    FieldSpec { name: "vlan_id", width: 12, kind: MatchKind::Exact, index: 8 },
    FieldSpec { name: "eth_type", width: 16, kind: MatchKind::Exact, index: 9 },
    FieldSpec { name: "vlan_priority", width: 3, kind: MatchKind::Exact, index: 10 },
    FieldSpec { name: "ip_tos", width: 6, kind: MatchKind::Exact, index: 11 },
];

/// Look up a field spec by name.
pub fn field_by_name(name: &str) -> Option<&'static FieldSpec> {
    FIELDS.iter().find(|f| f.name == name)
}

/// The field indices eligible for metric ranking. `vlan_priority` and
/// `ip_tos` are excluded: generated rulesets never vary them.
pub const RANKABLE_FIELDS: [usize; 10] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9];

/// A closed integer interval over one field. `is_wildcard` is derived:
/// it holds exactly when the interval spans the field's full range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FieldMatcher {
    lo: u64,
    hi: u64,
    wildcard: bool,
}

impl FieldMatcher {
    pub fn new(lo: u64, hi: u64, width: u32) -> Result<Self> {
        let max = max_for_width(width);
        if lo > hi {
            return Err(Error::invalid(format!("matcher lo {lo} > hi {hi}")));
        }
        if hi > max {
            return Err(Error::invalid(format!(
                "matcher hi {hi} exceeds {width}-bit field maximum {max}"
            )));
        }
        Ok(FieldMatcher { lo, hi, wildcard: lo == 0 && hi == max })
    }

    pub fn wildcard(width: u32) -> Self {
        FieldMatcher { lo: 0, hi: max_for_width(width), wildcard: true }
    }

    pub fn exact(value: u64, width: u32) -> Result<Self> {
        FieldMatcher::new(value, value, width)
    }

    pub fn lo(&self) -> u64 {
        self.lo
    }

    pub fn hi(&self) -> u64 {
        self.hi
    }

    pub fn is_wildcard(&self) -> bool {
        self.wildcard
    }

    pub fn contains(&self, value: u64) -> bool {
        self.lo <= value && value <= self.hi
    }

    /// Closed-interval intersection test.
    pub fn intersects(&self, lo: u64, hi: u64) -> bool {
        self.lo <= hi && lo <= self.hi
    }
}

/// Expand `address/prefix_len` into the interval it covers.
///
/// The address must have zero bits below the prefix; a stray host bit is a
/// data error, not something to mask away silently.
pub fn prefix_to_range(address: u64, prefix_len: u32, width: u32) -> Result<FieldMatcher> {
    if prefix_len > width {
        return Err(Error::invalid(format!(
            "prefix length {prefix_len} exceeds field width {width}"
        )));
    }
    let host_bits = width - prefix_len;
    let host_mask = if host_bits == 0 { 0 } else { (1u64 << host_bits) - 1 };
    if address & host_mask != 0 {
        return Err(Error::invalid(format!(
            "address {address:#x} has nonzero host bits below /{prefix_len}"
        )));
    }
    if address > max_for_width(width) {
        return Err(Error::invalid(format!(
            "address {address:#x} exceeds {width}-bit field"
        )));
    }
    FieldMatcher::new(address, address | host_mask, width)
}

/// A single match rule: `priority` orders rules (smaller wins), `matchers`
/// aligns with the owning ruleset's field list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub id: usize,
    pub priority: u64,
    pub matchers: Vec<FieldMatcher>,
    pub action: String,
}

/// A packet header: one value per field in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Packet {
    pub values: [u64; FIELD_COUNT],
}

impl Packet {
    pub fn new(values: [u64; FIELD_COUNT]) -> Result<Self> {
        for (i, v) in values.iter().enumerate() {
            if *v > FIELDS[i].max_value() {
                return Err(Error::invalid(format!(
                    "packet value {} exceeds field {} width",
                    v, FIELDS[i].name
                )));
            }
        }
        Ok(Packet { values })
    }
}

/// An ordered rule list plus the field layout its matchers follow.
/// A freshly parsed ruleset covers all 12 fields; [`Ruleset::project`]
/// narrows the layout to a subset.
#[derive(Debug, Clone)]
pub struct Ruleset {
    pub rules: Vec<Rule>,
    /// Indices into [`FIELDS`], in declaration order. `matchers[i]` of every
    /// rule belongs to field `fields[i]`.
    pub fields: Vec<usize>,
    pub source: String,
}

impl Ruleset {
    pub fn new(rules: Vec<Rule>, fields: Vec<usize>, source: impl Into<String>) -> Result<Self> {
        let rs = Ruleset { rules, fields, source: source.into() };
        rs.validate()?;
        Ok(rs)
    }

    fn validate(&self) -> Result<()> {
        if self.fields.is_empty() {
            return Err(Error::invalid("ruleset needs at least one field"));
        }
        let mut seen_ids = std::collections::HashSet::new();
        let mut seen_prio = std::collections::HashSet::new();
        for rule in &self.rules {
            if rule.matchers.len() != self.fields.len() {
                return Err(Error::invalid(format!(
                    "rule {} has {} matchers for {} fields",
                    rule.id,
                    rule.matchers.len(),
                    self.fields.len()
                )));
            }
            if !seen_ids.insert(rule.id) {
                return Err(Error::invalid(format!("duplicate rule id {}", rule.id)));
            }
            if !seen_prio.insert(rule.priority) {
                return Err(Error::invalid(format!("duplicate priority {}", rule.priority)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn rule_by_id(&self, id: usize) -> Option<&Rule> {
        self.rules.iter().find(|r| r.id == id)
    }

    /// True iff `rule` matches `packet` on every field of this ruleset's
    /// layout.
    pub fn rule_matches(&self, rule: &Rule, packet: &Packet) -> bool {
        self.fields
            .iter()
            .zip(&rule.matchers)
            .all(|(&f, m)| m.contains(packet.values[f]))
    }

    /// Keep only the matchers for `field_indices` (given in any order; the
    /// result preserves declaration order). Ids, priorities, and actions are
    /// untouched.
    pub fn project(&self, field_indices: &[usize]) -> Result<Ruleset> {
        if field_indices.is_empty() {
            return Err(Error::invalid("projection onto an empty field set"));
        }
        let mut keep: Vec<usize> = Vec::new();
        for (pos, &f) in self.fields.iter().enumerate() {
            if field_indices.contains(&f) {
                keep.push(pos);
            }
        }
        if keep.len() != field_indices.len() {
            return Err(Error::invalid(
                "projection names a field absent from this ruleset".to_string(),
            ));
        }
        let rules = self
            .rules
            .iter()
            .map(|r| Rule {
                id: r.id,
                priority: r.priority,
                matchers: keep.iter().map(|&p| r.matchers[p]).collect(),
                action: r.action.clone(),
            })
            .collect();
        Ruleset::new(rules, keep.iter().map(|&p| self.fields[p]).collect(), self.source.clone())
    }

    /// Serialize to the native `key=value` format; one line per rule, in
    /// priority order. Parsing the output reproduces the canonical intervals
    /// exactly.
    pub fn to_native(&self) -> String {
        let mut out = String::new();
        let mut rules: Vec<&Rule> = self.rules.iter().collect();
        rules.sort_by_key(|r| r.priority);
        for rule in rules {
            let mut parts: Vec<String> = Vec::new();
            for (&f, m) in self.fields.iter().zip(&rule.matchers) {
                parts.push(format!("{}={}", FIELDS[f].name, parse::matcher_to_text(m, &FIELDS[f])));
            }
            parts.push(format!("action={}", rule.action));
            out.push_str(&parts.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Ground truth: scan every rule, return the id of the matching rule with the
/// smallest priority value, if any.
pub fn oracle_classify(ruleset: &Ruleset, packet: &Packet) -> Option<usize> {
    let mut best: Option<&Rule> = None;
    for rule in &ruleset.rules {
        if ruleset.rule_matches(rule, packet) {
            match best {
                Some(b) if b.priority <= rule.priority => {}
                _ => best = Some(rule),
            }
        }
    }
    best.map(|r| r.id)
}
