//! Seeded synthetic rulesets and oracle-labeled packet traces.
//!
//! The generator imitates the texture of generated OpenFlow filter sets:
//! address prefixes of assorted lengths drawn from a small pool of subnets,
//! port ranges and well-known exact ports, a handful of MAC addresses and
//! VLANs, and heavy use of wildcards on fields a rule does not care about.

use super::{
    max_for_width, oracle_classify, FieldMatcher, Packet, Rule, Ruleset, FIELDS, FIELD_COUNT,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Knobs for [`generate_synthetic`].
#[derive(Debug, Clone)]
pub struct SynthProfile {
    /// Per-field probability of emitting `*`.
    pub wildcard_prob: [f64; FIELD_COUNT],
    /// Distinct /16 subnets the address fields draw from.
    pub subnet_pool: usize,
    /// Distinct exact port values.
    pub port_pool: usize,
    /// Distinct MAC addresses.
    pub mac_pool: usize,
    /// Distinct VLAN ids.
    pub vlan_pool: usize,
}

impl Default for SynthProfile {
    fn default() -> Self {
        SynthProfile {
            wildcard_prob: [0.15, 0.10, 0.55, 0.20, 0.30, 0.55, 0.50, 0.50, 0.40, 0.30, 1.0, 1.0],
            subnet_pool: 12,
            port_pool: 24,
            mac_pool: 24,
            vlan_pool: 16,
        }
    }
}

impl SynthProfile {
    /// Every matcher of every rule becomes `*` with probability `p`.
    pub fn uniform_wildcard(p: f64) -> Self {
        SynthProfile { wildcard_prob: [p; FIELD_COUNT], ..SynthProfile::default() }
    }
}

struct Pools {
    subnets: Vec<u64>,
    ports: Vec<u64>,
    macs: Vec<u64>,
    vlans: Vec<u64>,
}

fn draw_pools(rng: &mut ChaCha8Rng, profile: &SynthProfile) -> Pools {
    let subnets = (0..profile.subnet_pool.max(1))
        .map(|_| rng.gen_range(0u64..=0xffff) << 16)
        .collect();
    let ports = (0..profile.port_pool.max(1)).map(|_| rng.gen_range(0u64..=0xffff)).collect();
    let macs = (0..profile.mac_pool.max(1)).map(|_| rng.gen_range(0..=max_for_width(48))).collect();
    let vlans = (0..profile.vlan_pool.max(1)).map(|_| rng.gen_range(0u64..=4095)).collect();
    Pools { subnets, ports, macs, vlans }
}

/// Deterministically generate `n` rules for the given seed and profile.
/// Priorities are the generation order, so they are unique by construction.
pub fn generate_synthetic(seed: u64, n: usize, profile: &SynthProfile) -> Ruleset {
    assert!(n >= 1, "generate_synthetic needs at least one rule");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pools = draw_pools(&mut rng, profile);

    let mut rules = Vec::with_capacity(n);
    for id in 0..n {
        let mut matchers = Vec::with_capacity(FIELD_COUNT);
        for spec in FIELDS.iter() {
            matchers.push(gen_matcher(&mut rng, spec.index, profile, &pools));
        }
        let action = format!("act{}", rng.gen_range(0..4u32));
        rules.push(Rule { id, priority: id as u64, matchers, action });
    }
    Ruleset::new(rules, (0..FIELD_COUNT).collect(), format!("synthetic(seed={seed},n={n})"))
        .expect("generated ruleset is structurally valid")
}

fn gen_matcher(rng: &mut ChaCha8Rng, field: usize, profile: &SynthProfile, pools: &Pools) -> FieldMatcher {
    let spec = &FIELDS[field];
    if rng.gen_bool(profile.wildcard_prob[field]) {
        return FieldMatcher::wildcard(spec.width);
    }
    match field {
        // Address fields: a prefix of assorted length inside a pooled /16.
        0 | 1 => {
            let subnet = pools.subnets[rng.gen_range(0..pools.subnets.len())];
            let len = [16u32, 24, 24, 28, 32, 32][rng.gen_range(0..6)];
            let host_bits = 32 - len;
            let inner = if len <= 16 { 0 } else { rng.gen_range(0u64..(1u64 << (len - 16))) << host_bits };
            let addr = subnet | inner;
            super::prefix_to_range(addr, len, 32).expect("generated prefix is aligned")
        }
        // Port fields: exact pooled port, a conventional band, or a short range.
        2 | 3 => match rng.gen_range(0..10u32) {
            0..=4 => {
                let p = pools.ports[rng.gen_range(0..pools.ports.len())];
                FieldMatcher::exact(p, 16).unwrap()
            }
            5..=6 => FieldMatcher::new(0, 1023, 16).unwrap(),
            7..=8 => FieldMatcher::new(1024, 0xffff, 16).unwrap(),
            _ => {
                let a = rng.gen_range(0u64..=0xfff0);
                let b = a + rng.gen_range(0u64..=0xffff - a);
                FieldMatcher::new(a, b, 16).unwrap()
            }
        },
        4 => {
            let proto = match rng.gen_range(0..20u32) {
                0..=11 => 6,
                12..=18 => 17,
                _ => 1,
            };
            FieldMatcher::exact(proto, 8).unwrap()
        }
        5 | 6 => {
            let m = pools.macs[rng.gen_range(0..pools.macs.len())];
            FieldMatcher::exact(m, 48).unwrap()
        }
        7 => FieldMatcher::exact(rng.gen_range(0u64..48), 32).unwrap(),
        8 => {
            let v = pools.vlans[rng.gen_range(0..pools.vlans.len())];
            FieldMatcher::exact(v, 12).unwrap()
        }
        9 => {
            let ty = match rng.gen_range(0..20u32) {
                0..=15 => 0x0800,
                16..=18 => 0x8100,
                _ => 0x0806,
            };
            FieldMatcher::exact(ty, 16).unwrap()
        }
        10 => FieldMatcher::exact(rng.gen_range(0u64..8), 3).unwrap(),
        11 => FieldMatcher::exact(rng.gen_range(0u64..64), 6).unwrap(),
        _ => unreachable!("field index out of range"),
    }
}

/// One labeled trace entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TracePoint {
    pub packet: Packet,
    /// Rule id per [`oracle_classify`], absent when nothing matches.
    pub expected: Option<usize>,
}

/// Sample `n` packets: with probability `uniform_fraction` a uniform random
/// header, otherwise a uniform point inside a uniformly chosen rule's
/// hyper-rectangle. Labels always come from the oracle, so a point that also
/// hits a higher-priority rule is labeled with that rule.
pub fn generate_trace(ruleset: &Ruleset, seed: u64, n: usize, uniform_fraction: f64) -> Vec<TracePoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut values = [0u64; FIELD_COUNT];
        for (i, spec) in FIELDS.iter().enumerate() {
            values[i] = rng.gen_range(0..=spec.max_value());
        }
        let inside_rule = !ruleset.is_empty() && !rng.gen_bool(uniform_fraction.clamp(0.0, 1.0));
        if inside_rule {
            let rule = &ruleset.rules[rng.gen_range(0..ruleset.rules.len())];
            for (pos, &f) in ruleset.fields.iter().enumerate() {
                let m = &rule.matchers[pos];
                values[f] = rng.gen_range(m.lo()..=m.hi());
            }
        }
        let packet = Packet { values };
        out.push(TracePoint { packet, expected: oracle_classify(ruleset, &packet) });
    }
    out
}
