//! Ruleset text formats.
//!
//! Native format: one rule per line, whitespace-separated `key=value` tokens.
//! Keys are the 12 field names plus `action`; omitted fields are wildcards.
//! Values may be `*`, a decimal exact value, an `a-b` range, a dotted quad
//! (optionally with `/len`), a `0x` hex exact value, or a colon-hex MAC.
//! `#` starts a comment. Priority is implicit: the first rule line gets
//! priority 0, the next 1, and so on.
//!
//! ClassBench import: classic 5-tuple filter lines
//! `@sip/len dip/len lo : hi lo : hi proto/mask`; the seven fields a 5-tuple
//! does not constrain are filled with wildcards.

use super::{
    field_by_name, max_for_width, FieldMatcher, FieldSpec, MatchKind, Rule, Ruleset, FIELDS,
    FIELD_COUNT,
};
use crate::{Error, Result};

/// Supported on-disk ruleset formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RulesetFormat {
    Native,
    ClassBench5,
}

impl std::str::FromStr for RulesetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "native" => Ok(RulesetFormat::Native),
            "classbench5" => Ok(RulesetFormat::ClassBench5),
            other => Err(Error::invalid(format!("unknown ruleset format '{other}'"))),
        }
    }
}

/// Parse a ruleset document. Line order defines priority.
pub fn parse_ruleset(text: &str, format: RulesetFormat, source: &str) -> Result<Ruleset> {
    match format {
        RulesetFormat::Native => parse_native(text, source),
        RulesetFormat::ClassBench5 => parse_classbench5(text, source),
    }
}

fn parse_native(text: &str, source: &str) -> Result<Ruleset> {
    let mut rules = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        let id = rules.len();
        rules.push(parse_native_line(line, lineno + 1, id)?);
    }
    Ruleset::new(rules, (0..FIELD_COUNT).collect(), source)
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(pos) => line[..pos].trim(),
        None => line.trim(),
    }
}

fn parse_native_line(line: &str, lineno: usize, id: usize) -> Result<Rule> {
    let mut matchers: [Option<FieldMatcher>; FIELD_COUNT] = [None; FIELD_COUNT];
    let mut action: Option<String> = None;
    for token in line.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| Error::parse(lineno, format!("expected key=value, got '{token}'")))?;
        if key == "action" {
            if action.is_some() {
                return Err(Error::parse(lineno, "duplicate action"));
            }
            action = Some(value.to_string());
            continue;
        }
        let spec = field_by_name(key)
            .ok_or_else(|| Error::parse(lineno, format!("unknown field key '{key}'")))?;
        if matchers[spec.index].is_some() {
            return Err(Error::parse(lineno, format!("duplicate field '{key}'")));
        }
        matchers[spec.index] = Some(
            parse_value(value, spec).map_err(|e| Error::parse(lineno, format!("{key}: {e}")))?,
        );
    }
    let matchers = matchers
        .iter()
        .enumerate()
        .map(|(i, m)| m.unwrap_or_else(|| FieldMatcher::wildcard(FIELDS[i].width)))
        .collect();
    Ok(Rule {
        id,
        priority: id as u64,
        matchers,
        action: action.unwrap_or_else(|| "-".to_string()),
    })
}

/// Parse one field value in any of the native syntaxes.
fn parse_value(value: &str, spec: &FieldSpec) -> std::result::Result<FieldMatcher, String> {
    if value == "*" {
        return Ok(FieldMatcher::wildcard(spec.width));
    }
    // Protocol names are only meaningful for ip_proto.
    if spec.name == "ip_proto" {
        match value.to_ascii_lowercase().as_str() {
            "tcp" => return Ok(FieldMatcher::exact(6, spec.width).unwrap()),
            "udp" => return Ok(FieldMatcher::exact(17, spec.width).unwrap()),
            other if other.chars().any(|c| c.is_ascii_alphabetic()) && !other.starts_with("0x") => {
                return Err(format!("unknown protocol name '{value}'"));
            }
            _ => {}
        }
    }
    if value.contains(':') {
        if spec.width != 48 {
            return Err(format!("colon-hex value on a {}-bit field", spec.width));
        }
        let v = parse_mac(value)?;
        return FieldMatcher::exact(v, spec.width).map_err(|e| e.to_string());
    }
    if let Some((addr_text, len_text)) = value.split_once('/') {
        if spec.width != 32 {
            return Err(format!("prefix syntax on a {}-bit field", spec.width));
        }
        let addr = parse_dotted_quad(addr_text)?;
        let len: u32 = len_text.parse().map_err(|_| format!("bad prefix length '{len_text}'"))?;
        return super::prefix_to_range(addr, len, spec.width).map_err(|e| e.to_string());
    }
    if value.contains('.') {
        if spec.width != 32 {
            return Err(format!("dotted-quad value on a {}-bit field", spec.width));
        }
        // A bare host address is an exact /32 match.
        let addr = parse_dotted_quad(value)?;
        return FieldMatcher::exact(addr, spec.width).map_err(|e| e.to_string());
    }
    if let Some(hex) = value.strip_prefix("0x").or_else(|| value.strip_prefix("0X")) {
        let v = u64::from_str_radix(hex, 16).map_err(|_| format!("bad hex value '{value}'"))?;
        return check_bounds(v, spec).map(|v| FieldMatcher::exact(v, spec.width).unwrap());
    }
    if let Some((a, b)) = value.split_once('-') {
        let lo: u64 = a.parse().map_err(|_| format!("bad range bound '{a}'"))?;
        let hi: u64 = b.parse().map_err(|_| format!("bad range bound '{b}'"))?;
        check_bounds(hi, spec)?;
        return FieldMatcher::new(lo, hi, spec.width).map_err(|e| e.to_string());
    }
    let v: u64 = value.parse().map_err(|_| format!("bad value '{value}'"))?;
    check_bounds(v, spec).map(|v| FieldMatcher::exact(v, spec.width).unwrap())
}

fn check_bounds(v: u64, spec: &FieldSpec) -> std::result::Result<u64, String> {
    if v > max_for_width(spec.width) {
        Err(format!("value {} exceeds {}-bit field '{}'", v, spec.width, spec.name))
    } else {
        Ok(v)
    }
}

fn parse_dotted_quad(text: &str) -> std::result::Result<u64, String> {
    let mut out: u64 = 0;
    let mut octets = 0;
    for part in text.split('.') {
        let octet: u64 = part.parse().map_err(|_| format!("bad dotted quad '{text}'"))?;
        if octet > 255 {
            return Err(format!("octet {octet} out of range in '{text}'"));
        }
        out = (out << 8) | octet;
        octets += 1;
    }
    if octets != 4 {
        return Err(format!("dotted quad '{text}' needs 4 octets"));
    }
    Ok(out)
}

fn parse_mac(text: &str) -> std::result::Result<u64, String> {
    let mut out: u64 = 0;
    let mut bytes = 0;
    for part in text.split(':') {
        let byte = u64::from_str_radix(part, 16).map_err(|_| format!("bad MAC '{text}'"))?;
        if byte > 255 || part.len() > 2 {
            return Err(format!("bad MAC byte '{part}'"));
        }
        out = (out << 8) | byte;
        bytes += 1;
    }
    if bytes != 6 {
        return Err(format!("MAC '{text}' needs 6 bytes"));
    }
    Ok(out)
}

fn parse_classbench5(text: &str, source: &str) -> Result<Ruleset> {
    let mut rules = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        let id = rules.len();
        rules.push(parse_classbench_line(line, lineno + 1, id)?);
    }
    Ruleset::new(rules, (0..FIELD_COUNT).collect(), source)
}

fn parse_classbench_line(line: &str, lineno: usize, id: usize) -> Result<Rule> {
    let line = line
        .strip_prefix('@')
        .ok_or_else(|| Error::parse(lineno, "classbench line must start with '@'"))?;
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() < 9 {
        return Err(Error::parse(lineno, "classbench line needs 5-tuple groups"));
    }
    let err = |msg: String| Error::parse(lineno, msg);

    let parse_prefix = |tok: &str| -> Result<FieldMatcher> {
        let (addr_text, len_text) =
            tok.split_once('/').ok_or_else(|| err(format!("expected ip/len, got '{tok}'")))?;
        let addr = parse_dotted_quad(addr_text).map_err(&err)?;
        let len: u32 = len_text.parse().map_err(|_| err(format!("bad prefix len '{len_text}'")))?;
        super::prefix_to_range(addr, len, 32).map_err(|e| err(e.to_string()))
    };
    let parse_port = |tok: &str| -> Result<u64> {
        let v: u64 = tok.parse().map_err(|_| err(format!("bad port '{tok}'")))?;
        if v > 0xffff {
            return Err(err(format!("port {v} out of range")));
        }
        Ok(v)
    };

    let nw_src = parse_prefix(tokens[0])?;
    let nw_dst = parse_prefix(tokens[1])?;
    // Port groups look like "lo : hi".
    if tokens[3] != ":" || tokens[6] != ":" {
        return Err(err("expected 'lo : hi' port ranges".to_string()));
    }
    let tp_src = FieldMatcher::new(parse_port(tokens[2])?, parse_port(tokens[4])?, 16)
        .map_err(|e| err(e.to_string()))?;
    let tp_dst = FieldMatcher::new(parse_port(tokens[5])?, parse_port(tokens[7])?, 16)
        .map_err(|e| err(e.to_string()))?;

    let (proto_text, mask_text) = tokens[8]
        .split_once('/')
        .ok_or_else(|| err(format!("expected proto/mask, got '{}'", tokens[8])))?;
    let parse_hex_or_dec = |t: &str| -> Result<u64> {
        let v = if let Some(h) = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
            u64::from_str_radix(h, 16).map_err(|_| err(format!("bad number '{t}'")))?
        } else {
            t.parse().map_err(|_| err(format!("bad number '{t}'")))?
        };
        Ok(v)
    };
    let proto = parse_hex_or_dec(proto_text)?;
    let mask = parse_hex_or_dec(mask_text)?;
    let ip_proto = match mask {
        0x00 => FieldMatcher::wildcard(8),
        0xff => FieldMatcher::exact(proto, 8).map_err(|e| err(e.to_string()))?,
        other => return Err(err(format!("unsupported protocol mask {other:#x}"))),
    };
    // Anything after the protocol group (flag fields etc.) is ignored.

    let mut matchers: Vec<FieldMatcher> =
        FIELDS.iter().map(|f| FieldMatcher::wildcard(f.width)).collect();
    matchers[0] = nw_src;
    matchers[1] = nw_dst;
    matchers[2] = tp_src;
    matchers[3] = tp_dst;
    matchers[4] = ip_proto;

    Ok(Rule { id, priority: id as u64, matchers, action: "act0".to_string() })
}

/// Render a matcher in the friendliest native syntax that re-parses to the
/// same interval.
pub(super) fn matcher_to_text(m: &FieldMatcher, spec: &FieldSpec) -> String {
    if m.is_wildcard() {
        return "*".to_string();
    }
    if spec.width == 32 && spec.kind == MatchKind::Prefix {
        let size = m.hi() - m.lo() + 1;
        if size.is_power_of_two() && m.lo() % size == 0 {
            let len = 32 - size.trailing_zeros();
            if len == 32 {
                return dotted(m.lo());
            }
            return format!("{}/{}", dotted(m.lo()), len);
        }
        if m.lo() == m.hi() {
            return dotted(m.lo());
        }
        return format!("{}-{}", m.lo(), m.hi());
    }
    if m.lo() == m.hi() {
        if spec.width == 48 {
            return mac(m.lo());
        }
        if spec.name == "eth_type" {
            return format!("{:#06x}", m.lo());
        }
        return format!("{}", m.lo());
    }
    format!("{}-{}", m.lo(), m.hi())
}

fn dotted(v: u64) -> String {
    format!("{}.{}.{}.{}", (v >> 24) & 0xff, (v >> 16) & 0xff, (v >> 8) & 0xff, v & 0xff)
}

fn mac(v: u64) -> String {
    format!(
        "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
        (v >> 40) & 0xff,
        (v >> 32) & 0xff,
        (v >> 24) & 0xff,
        (v >> 16) & 0xff,
        (v >> 8) & 0xff,
        v & 0xff
    )
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::ruleset::{generate_synthetic, SynthProfile};

    /// Ten OpenFlow-style rules exercising every native value syntax.
    pub(crate) const SAMPLE_RULES: &str = "\
# sample OpenFlow 12-field rules
nw_src=181.19.211.54/32 nw_dst=98.74.51.88/32 tp_src=67 tp_dst=512 ip_proto=* dl_src=fa:16:3e:d0:be:01 dl_dst=fa:16:3e:05:30:c1 in_port=* vlan_id=100 eth_type=0x0800 vlan_priority=* ip_tos=* action=act0
nw_src=* nw_dst=191.28.225.110 tp_src=* tp_dst=22 ip_proto=TCP dl_src=* dl_dst=* in_port=* vlan_id=56 eth_type=0x0800 vlan_priority=* ip_tos=* action=act1
nw_src=* nw_dst=191.28.225.110 tp_src=* tp_dst=443 ip_proto=TCP dl_src=* dl_dst=* in_port=* vlan_id=56 eth_type=0x0800 vlan_priority=* ip_tos=* action=act1
nw_src=181.19.21.104/32 nw_dst=98.74.67.48/32 tp_src=* tp_dst=512 ip_proto=* dl_src=fa:16:3e:d5:7e:08 dl_dst=fa:16:3d:06:60:c5 in_port=5 vlan_id=23 eth_type=0x0800 vlan_priority=* ip_tos=* action=act1
nw_src=180.230.21.104/32 nw_dst=13.23.0.0/16 tp_src=17 tp_dst=21 ip_proto=UDP dl_src=fa:16:3e:45:6e:11 dl_dst=fa:16:3e:d0:be:01 in_port=9 vlan_id=* vlan_priority=* ip_tos=* action=act2
nw_src=185.230.25.204/32 nw_dst=45.67.0.0/24 tp_src=34 tp_dst=512 ip_proto=* dl_src=fa:16:3e:05:30:c1 dl_dst=* in_port=11 vlan_id=34 eth_type=0x0800 vlan_priority=* ip_tos=* action=act0
nw_src=130.23.0.0/16 nw_dst=180.230.21.104/32 tp_src=0-124 tp_dst=514 ip_proto=* dl_src=* dl_dst=* in_port=* vlan_id=110 eth_type=* vlan_priority=* ip_tos=* action=act2
nw_src=131.230.0.0/16 nw_dst=181.19.21.104/32 tp_src=0-9800 tp_dst=512 ip_proto=* dl_src=fa:16:3d:06:60:c5 dl_dst=* in_port=* vlan_id=841 eth_type=* vlan_priority=* ip_tos=* action=act2
nw_src=45.67.8.0/24 nw_dst=130.23.0.0/16 tp_src=34 tp_dst=22 ip_proto=TCP dl_src=fa:16:3e:05:30:c1 dl_dst=* in_port=12 vlan_id=4095 eth_type=* vlan_priority=* ip_tos=* action=act0
nw_src=* nw_dst=131.230.0.0/16 tp_src=* tp_dst=80 ip_proto=TCP dl_src=* dl_dst=* in_port=15 vlan_id=3200 eth_type=0x8100 vlan_priority=* ip_tos=* action=act3
";

    pub(crate) fn sample_ruleset() -> Ruleset {
        parse_ruleset(SAMPLE_RULES, RulesetFormat::Native, "sample").unwrap()
    }

    #[test]
    fn native_parses_sample_rules() {
        let rs = sample_ruleset();
        assert_eq!(rs.len(), 10);

        let r1 = &rs.rules[0];
        assert_eq!(r1.priority, 0);
        assert_eq!(r1.action, "act0");
        assert_eq!((r1.matchers[2].lo(), r1.matchers[2].hi()), (67, 67));
        assert!(r1.matchers[4].is_wildcard());
        assert_eq!((r1.matchers[4].lo(), r1.matchers[4].hi()), (0, 255));
        assert_eq!((r1.matchers[8].lo(), r1.matchers[8].hi()), (100, 100));

        // Bare host address parses as an exact /32.
        let r2 = &rs.rules[1];
        let host = (191u64 << 24) | (28 << 16) | (225 << 8) | 110;
        assert_eq!((r2.matchers[1].lo(), r2.matchers[1].hi()), (host, host));
        assert_eq!((r2.matchers[4].lo(), r2.matchers[4].hi()), (6, 6));

        // R5 maps UDP and leaves the omitted eth_type a wildcard.
        let r5 = &rs.rules[4];
        assert_eq!((r5.matchers[4].lo(), r5.matchers[4].hi()), (17, 17));
        assert!(r5.matchers[9].is_wildcard());

        // R7's port range.
        let r7 = &rs.rules[6];
        assert_eq!((r7.matchers[2].lo(), r7.matchers[2].hi()), (0, 124));
        assert!(!r7.matchers[2].is_wildcard());
    }

    #[test]
    fn wildcard_star_is_full_range() {
        let rs = parse_ruleset("nw_src=* action=a", RulesetFormat::Native, "t").unwrap();
        let m = &rs.rules[0].matchers[0];
        assert_eq!((m.lo(), m.hi()), (0, u32::MAX as u64));
        assert!(m.is_wildcard());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_ruleset("nw_src=*\nbogus_key=1", RulesetFormat::Native, "t").unwrap_err();
        match err {
            Error::Parse { line, ref msg } => {
                assert_eq!(line, 2);
                assert!(msg.contains("bogus_key"), "{msg}");
            }
            other => panic!("unexpected error {other:?}"),
        }

        // Value exceeding the field width.
        assert!(parse_ruleset("vlan_id=5000", RulesetFormat::Native, "t").is_err());
        // Unknown protocol name.
        assert!(parse_ruleset("ip_proto=ICMP", RulesetFormat::Native, "t").is_err());
        // Host bits below the prefix.
        assert!(parse_ruleset("nw_src=10.0.0.1/24", RulesetFormat::Native, "t").is_err());
    }

    #[test]
    fn classbench_import_fills_wildcards() {
        let text = "@192.168.0.0/16 10.0.0.0/8 0 : 65535 80 : 80 0x06/0xFF\n\
                    @0.0.0.0/0 10.1.0.0/16 1000 : 2000 0 : 65535 0x00/0x00 0x1000/0x1000\n";
        let rs = parse_ruleset(text, RulesetFormat::ClassBench5, "cb").unwrap();
        assert_eq!(rs.len(), 2);
        let r0 = &rs.rules[0];
        assert_eq!((r0.matchers[3].lo(), r0.matchers[3].hi()), (80, 80));
        assert_eq!((r0.matchers[4].lo(), r0.matchers[4].hi()), (6, 6));
        for f in 5..FIELD_COUNT {
            assert!(r0.matchers[f].is_wildcard());
        }
        let r1 = &rs.rules[1];
        assert!(r1.matchers[0].is_wildcard());
        assert!(r1.matchers[4].is_wildcard());
        assert_eq!((r1.matchers[2].lo(), r1.matchers[2].hi()), (1000, 2000));
    }

    #[test]
    fn native_round_trip_is_lossless() {
        let rs = sample_ruleset();
        let text = rs.to_native();
        let back = parse_ruleset(&text, RulesetFormat::Native, "sample").unwrap();
        assert_eq!(rs.rules, back.rules);

        // Same for a synthetic ruleset covering generator syntax mix.
        for seed in [3u64, 17, 99] {
            let rs = generate_synthetic(seed, 80, &SynthProfile::default());
            let back =
                parse_ruleset(&rs.to_native(), RulesetFormat::Native, "synth").unwrap();
            assert_eq!(rs.rules, back.rules);
        }
    }

    use crate::Error;
}
