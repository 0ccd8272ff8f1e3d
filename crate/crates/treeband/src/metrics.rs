//! Per-field dispersion statistics and field-subset planning.
//!
//! Each rule contributes one representative scalar per field (the low
//! endpoint of its matcher); a field's series is max-normalized and summarized
//! by sample standard deviation, sample variance, and a diversity index that
//! weighs the normalized value spread by how many distinct values occur.
//! Fields are ranked by the chosen statistic and dealt into two subsets —
//! odd ranks into one, even ranks into the other — which later drive one
//! decision tree each. Two fixed "random draw" subset assignments are also
//! provided for comparison runs.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::ruleset::{FieldMatcher, Ruleset, FIELDS, FIELD_COUNT, RANKABLE_FIELDS};
use crate::{Error, Result};

/// Which statistic drives the ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Sd,
    Variance,
    Di,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Sd => "sd",
            Metric::Variance => "variance",
            Metric::Di => "di",
        }
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sd" => Ok(Metric::Sd),
            "variance" | "var" => Ok(Metric::Variance),
            "di" => Ok(Metric::Di),
            other => Err(Error::invalid(format!("unknown metric `{other}` (expected sd, variance, or di)"))),
        }
    }
}

/// How a fully wildcarded matcher contributes to a field's value series.
///
/// `Exclude` drops the rule from the series entirely, so a field that is
/// wildcarded everywhere ends up with an empty series and zero statistics.
/// `Zero` records a literal 0; `Lo` records the matcher's low endpoint,
/// which for a full-range wildcard is also 0 — the two differ only in intent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WildcardPolicy {
    #[default]
    Exclude,
    Zero,
    Lo,
}

impl FromStr for WildcardPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exclude" => Ok(WildcardPolicy::Exclude),
            "zero" => Ok(WildcardPolicy::Zero),
            "lo" => Ok(WildcardPolicy::Lo),
            other => Err(Error::invalid(format!(
                "unknown wildcard policy `{other}` (expected exclude, zero, or lo)"
            ))),
        }
    }
}

/// The representative values one field takes across a ruleset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldValueSeries {
    pub field_index: usize,
    pub width: u32,
    pub values: Vec<u64>,
}

impl FieldValueSeries {
    /// Collect the series for `field_index` from `ruleset` under `policy`.
    /// A field the ruleset does not carry yields an empty series.
    pub fn from_ruleset(ruleset: &Ruleset, field_index: usize, policy: WildcardPolicy) -> Self {
        let width = FIELDS[field_index].width;
        let mut values = Vec::new();
        if let Some(pos) = ruleset.fields.iter().position(|&f| f == field_index) {
            for rule in &ruleset.rules {
                let m: &FieldMatcher = &rule.matchers[pos];
                match policy {
                    WildcardPolicy::Exclude if m.is_wildcard() => continue,
                    WildcardPolicy::Zero if m.is_wildcard() => values.push(0),
                    _ => values.push(m.lo()),
                }
            }
        }
        FieldValueSeries { field_index, width, values }
    }
}

/// Divide every value by the series maximum. An all-zero series maps to all
/// zeros rather than dividing by zero.
pub fn normalize(series: &FieldValueSeries) -> Vec<f64> {
    let max = series.values.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return vec![0.0; series.values.len()];
    }
    let max = max as f64;
    series.values.iter().map(|&v| v as f64 / max).collect()
}

/// Sample variance (N−1 denominator). Fewer than two values yields 0.
pub fn variance(normalized: &[f64]) -> f64 {
    let n = normalized.len();
    if n < 2 {
        return 0.0;
    }
    let mean = normalized.iter().sum::<f64>() / n as f64;
    normalized.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
}

/// Sample standard deviation; the square root of [`variance`].
pub fn standard_deviation(normalized: &[f64]) -> f64 {
    variance(normalized).sqrt()
}

/// Diversity index: (max normalized − min normalized) × Σ 1/count over the
/// distinct raw values. Constant series (and series shorter than two) give 0.
/// Deduplication happens on the raw integers, so equality is exact even for
/// 48-bit fields; the normalized term only sets the overall scale.
pub fn diversity_index(series: &FieldValueSeries) -> f64 {
    if series.values.len() < 2 {
        return 0.0;
    }
    let normalized = normalize(series);
    let max_n = normalized.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_n = normalized.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for &v in &series.values {
        *counts.entry(v).or_insert(0) += 1;
    }
    let coefficient: f64 = counts.values().map(|&c| 1.0 / c as f64).sum();
    (max_n - min_n) * coefficient
}

/// All three statistics for one field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldStats {
    pub field_index: usize,
    pub sd: f64,
    pub variance: f64,
    pub di: f64,
}

/// Statistics for all 12 fields of `ruleset` under `policy`.
pub fn compute_stats(ruleset: &Ruleset, policy: WildcardPolicy) -> Vec<FieldStats> {
    (0..FIELD_COUNT)
        .map(|field_index| {
            let series = FieldValueSeries::from_ruleset(ruleset, field_index, policy);
            if series.values.len() < 2 {
                return FieldStats { field_index, sd: 0.0, variance: 0.0, di: 0.0 };
            }
            let normalized = normalize(&series);
            let variance = variance(&normalized);
            FieldStats {
                field_index,
                sd: variance.sqrt(),
                variance,
                di: diversity_index(&series),
            }
        })
        .collect()
}

/// One row of a ranking: a field, the statistic it was ranked on, and its
/// 1-based rank (1 = largest value).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankEntry {
    pub field_index: usize,
    pub value: f64,
    pub rank: usize,
}

/// Rank arbitrary (field, value) pairs: descending by value, ties broken by
/// field declaration order. Rank numbers are 1-based and contiguous.
pub fn rank_values(pairs: &[(usize, f64)]) -> Vec<RankEntry> {
    let mut entries: Vec<(usize, f64)> = pairs.to_vec();
    entries.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("ranking values must be finite")
            .then(a.0.cmp(&b.0))
    });
    entries
        .into_iter()
        .enumerate()
        .map(|(i, (field_index, value))| RankEntry { field_index, value, rank: i + 1 })
        .collect()
}

/// Rank the ten rankable fields by `metric`. `stats` must cover all of them;
/// entries for other fields are ignored.
pub fn rank_fields(stats: &[FieldStats], metric: Metric) -> Vec<RankEntry> {
    let pairs: Vec<(usize, f64)> = RANKABLE_FIELDS
        .iter()
        .map(|&f| {
            let s = stats
                .iter()
                .find(|s| s.field_index == f)
                .unwrap_or_else(|| panic!("stats missing rankable field {}", FIELDS[f].name));
            let value = match metric {
                Metric::Sd => s.sd,
                Metric::Variance => s.variance,
                Metric::Di => s.di,
            };
            (f, value)
        })
        .collect();
    rank_values(&pairs)
}

/// How the two subsets were chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Sd,
    Variance,
    Di,
    Random1,
    Random2,
    Custom,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Sd => "sd",
            Scheme::Variance => "variance",
            Scheme::Di => "di",
            Scheme::Random1 => "random1",
            Scheme::Random2 => "random2",
            Scheme::Custom => "custom",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sd" => Ok(Scheme::Sd),
            "variance" | "var" => Ok(Scheme::Variance),
            "di" => Ok(Scheme::Di),
            "random1" => Ok(Scheme::Random1),
            "random2" => Ok(Scheme::Random2),
            "custom" => Ok(Scheme::Custom),
            other => Err(Error::invalid(format!(
                "unknown scheme `{other}` (expected sd, variance, di, random1, random2, or custom)"
            ))),
        }
    }
}

/// The outcome of decomposition: two field subsets that each get a decision
/// tree, plus the residual fields verified only at final match time.
/// Subsets are stored sorted by field index.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionPlan {
    pub scheme: Scheme,
    /// Empty for the fixed and custom schemes.
    pub ranking: Vec<RankEntry>,
    pub subset_a: Vec<usize>,
    pub subset_b: Vec<usize>,
    pub residual: Vec<usize>,
}

impl DecompositionPlan {
    /// Every field appears in exactly one of subset_a / subset_b / residual.
    pub fn is_partition(&self) -> bool {
        let mut seen = [0usize; FIELD_COUNT];
        for &f in self.subset_a.iter().chain(&self.subset_b).chain(&self.residual) {
            if f >= FIELD_COUNT {
                return false;
            }
            seen[f] += 1;
        }
        seen.iter().all(|&c| c == 1)
    }
}

fn sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v
}

fn residual_of(ranked: &[usize]) -> Vec<usize> {
    (0..FIELD_COUNT).filter(|f| !ranked.contains(f)).collect()
}

/// Deal a ranking into the two subsets: odd ranks (1st, 3rd, …) into
/// subset_a, even ranks into subset_b. Fields absent from the ranking form
/// the residual.
pub fn decompose(ranking: &[RankEntry], scheme: Scheme) -> DecompositionPlan {
    let subset_a = sorted(ranking.iter().filter(|e| e.rank % 2 == 1).map(|e| e.field_index).collect());
    let subset_b = sorted(ranking.iter().filter(|e| e.rank % 2 == 0).map(|e| e.field_index).collect());
    let ranked: Vec<usize> = ranking.iter().map(|e| e.field_index).collect();
    DecompositionPlan { scheme, ranking: ranking.to_vec(), subset_a, subset_b, residual: residual_of(&ranked) }
}

/// The two fixed subset assignments used for comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedScheme {
    Random1,
    Random2,
}

/// Field memberships for the fixed schemes. Both place nw_src, tp_dst, and
/// ip_proto in subset_a; they differ in whether the remaining pair comes from
/// the 5-tuple (`Random1`) or from the link-layer fields (`Random2`).
pub fn fixed_decomposition(scheme: FixedScheme) -> DecompositionPlan {
    // Indices: nw_src 0, nw_dst 1, tp_src 2, tp_dst 3, ip_proto 4,
    // dl_src 5, dl_dst 6, in_port 7, vlan_id 8, eth_type 9.
    let (scheme, subset_a) = match scheme {
        FixedScheme::Random1 => (Scheme::Random1, vec![0, 1, 2, 3, 4]),
        FixedScheme::Random2 => (Scheme::Random2, vec![0, 3, 4, 6, 7]),
    };
    let subset_b = RANKABLE_FIELDS.iter().copied().filter(|f| !subset_a.contains(f)).collect();
    DecompositionPlan {
        scheme,
        ranking: Vec::new(),
        subset_a,
        subset_b,
        residual: residual_of(&RANKABLE_FIELDS),
    }
}

/// A caller-chosen partition. The residual is whatever neither subset names.
pub fn custom_plan(subset_a: &[usize], subset_b: &[usize]) -> Result<DecompositionPlan> {
    let plan = DecompositionPlan {
        scheme: Scheme::Custom,
        ranking: Vec::new(),
        subset_a: sorted(subset_a.to_vec()),
        subset_b: sorted(subset_b.to_vec()),
        residual: (0..FIELD_COUNT)
            .filter(|f| !subset_a.contains(f) && !subset_b.contains(f))
            .collect(),
    };
    if subset_a.iter().chain(subset_b).any(|&f| f >= FIELD_COUNT) {
        return Err(Error::invalid("subset field index out of range"));
    }
    if !plan.is_partition() {
        return Err(Error::invalid("subsets overlap or repeat a field"));
    }
    if plan.subset_a.is_empty() || plan.subset_b.is_empty() {
        return Err(Error::invalid("both subsets must be nonempty"));
    }
    Ok(plan)
}

/// Convenience: stats → ranking → plan for the metric-driven schemes, or the
/// fixed memberships for random1/random2. `Custom` is rejected here because
/// it needs explicit subsets.
pub fn plan_for(ruleset: &Ruleset, scheme: Scheme, policy: WildcardPolicy) -> Result<DecompositionPlan> {
    let metric = match scheme {
        Scheme::Sd => Metric::Sd,
        Scheme::Variance => Metric::Variance,
        Scheme::Di => Metric::Di,
        Scheme::Random1 => return Ok(fixed_decomposition(FixedScheme::Random1)),
        Scheme::Random2 => return Ok(fixed_decomposition(FixedScheme::Random2)),
        Scheme::Custom => {
            return Err(Error::invalid("custom scheme requires explicit subsets"));
        }
    };
    let stats = compute_stats(ruleset, policy);
    let ranking = rank_fields(&stats, metric);
    Ok(decompose(&ranking, scheme))
}

/// One `inspect` report row: the statistics plus the field's position in the
/// SD and DI rankings (absent for the two never-ranked fields).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldReport {
    pub field_index: usize,
    pub sd: f64,
    pub variance: f64,
    pub di: f64,
    pub rank_sd: Option<usize>,
    pub rank_di: Option<usize>,
}

/// Per-field statistics and rankings for the whole ruleset.
pub fn field_report(ruleset: &Ruleset, policy: WildcardPolicy) -> Vec<FieldReport> {
    let stats = compute_stats(ruleset, policy);
    let by_sd = rank_fields(&stats, Metric::Sd);
    let by_di = rank_fields(&stats, Metric::Di);
    let rank_in = |ranking: &[RankEntry], f: usize| ranking.iter().find(|e| e.field_index == f).map(|e| e.rank);
    stats
        .iter()
        .map(|s| FieldReport {
            field_index: s.field_index,
            sd: s.sd,
            variance: s.variance,
            di: s.di,
            rank_sd: rank_in(&by_sd, s.field_index),
            rank_di: rank_in(&by_di, s.field_index),
        })
        .collect()
}
