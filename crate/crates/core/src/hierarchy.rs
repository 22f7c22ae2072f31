//! Per-attribute concept hierarchies.
//!
//! Level 0 is the raw numeric value. Every level above it is a sorted list of
//! contiguous half-open intervals `[lo, hi)` (the last interval of a level is
//! closed at `hi`), each carrying a label and, below the top, the index of its
//! parent interval one level up. Children are always contained in their
//! parent, so looking a raw value up directly at level `k` and walking parent
//! links from a finer level give the same answer.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TOP_LABEL: &str = "ANY";

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeSchema {
    pub name: String,
    /// Column position in the retained attribute vector.
    pub index: usize,
    pub weight: f64,
    pub max_level: usize,
}

/// A value at some generalization level: the raw reading at level 0, an
/// interval index above it.
#[derive(Debug, Clone, Copy)]
pub enum Label {
    Raw(f64),
    Node(u32),
}

impl Label {
    /// Raw label with `-0.0` folded into `0.0` so equal readings hash equally.
    pub fn raw(v: f64) -> Self {
        Label::Raw(if v == 0.0 { 0.0 } else { v })
    }

    fn key(&self) -> (u8, u64) {
        match *self {
            Label::Raw(v) => (0, v.to_bits()),
            Label::Node(i) => (1, i as u64),
        }
    }
}

impl PartialEq for Label {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Label {}

impl Hash for Label {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.key().hash(state)
    }
}

impl Ord for Label {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Label::Raw(a), Label::Raw(b)) => a.total_cmp(b),
            (Label::Node(a), Label::Node(b)) => a.cmp(b),
            (Label::Raw(_), Label::Node(_)) => Ordering::Less,
            (Label::Node(_), Label::Raw(_)) => Ordering::Greater,
        }
    }
}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LevelValue {
    pub attr: usize,
    pub level: usize,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    pub intervals: Vec<Interval>,
    /// `parents[i]` is the index of interval `i`'s parent one level up. Empty
    /// at the top level.
    pub parents: Vec<u32>,
}

impl Level {
    fn lo(&self) -> f64 {
        self.intervals[0].lo
    }

    fn hi(&self) -> f64 {
        self.intervals[self.intervals.len() - 1].hi
    }

    fn position(&self, label: &str) -> Option<usize> {
        self.intervals.iter().position(|iv| iv.label == label)
    }
}

/// What to do with a raw value outside the finest level's range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RangePolicy {
    #[default]
    Clamp,
    Strict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptHierarchy {
    pub schema: AttributeSchema,
    /// `levels[k - 1]` describes level `k`.
    levels: Vec<Level>,
}

impl ConceptHierarchy {
    /// Builds a hierarchy from explicit levels, checking the tree invariants.
    pub fn new(mut schema: AttributeSchema, levels: Vec<Level>) -> Result<Self> {
        schema.max_level = levels.len();
        let lines = vec![vec![0; 0]; levels.len()];
        validate(&schema, &levels, &lines, &[])?;
        Ok(Self { schema, levels })
    }

    pub fn max_level(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, k: usize) -> &Level {
        &self.levels[k - 1]
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    /// Interval index of `value` at level `k >= 1`.
    pub fn locate(&self, value: f64, k: usize, policy: RangePolicy) -> Result<u32> {
        let v = self.clamp(value, policy)?;
        let level = self.level(k);
        let idx = level.intervals.partition_point(|iv| iv.lo <= v);
        if idx == 0 || v > level.hi() {
            // only reachable when a coarser level is narrower than level 1,
            // which validation forbids
            return Err(self.out_of_range(k, value));
        }
        Ok((idx - 1) as u32)
    }

    fn clamp(&self, value: f64, policy: RangePolicy) -> Result<f64> {
        if value.is_nan() {
            return Err(self.out_of_range(0, value));
        }
        let Some(finest) = self.levels.first() else {
            return Ok(value);
        };
        let (lo, hi) = (finest.lo(), finest.hi());
        if value >= lo && value <= hi {
            return Ok(value);
        }
        match policy {
            RangePolicy::Strict => Err(self.out_of_range(1, value)),
            RangePolicy::Clamp => Ok(value.clamp(lo, hi)),
        }
    }

    fn out_of_range(&self, level: usize, value: f64) -> Error {
        Error::OutOfRange {
            attribute: self.schema.name.clone(),
            level,
            value,
        }
    }

    /// Label of a raw reading at level `k`.
    pub fn generalize_raw(&self, value: f64, k: usize, policy: RangePolicy) -> Result<Label> {
        if k == 0 {
            // raw readings are kept as-is; the check only rejects NaN and,
            // in strict mode, out-of-range values
            self.clamp(value, policy)?;
            Ok(Label::raw(value))
        } else {
            self.locate(value, k, policy).map(Label::Node)
        }
    }

    /// Concept-tree ascension of a single value to `target`.
    pub fn generalize_value(
        &self,
        v: LevelValue,
        target: usize,
        policy: RangePolicy,
    ) -> Result<LevelValue> {
        if target < v.level || target > self.max_level() {
            return Err(Error::InvalidParameter(format!(
                "cannot generalize `{}` from level {} to level {target} (max {})",
                self.schema.name,
                v.level,
                self.max_level()
            )));
        }
        if target == v.level {
            return Ok(v);
        }
        let mut idx = match v.label {
            Label::Raw(x) => {
                return Ok(LevelValue {
                    level: target,
                    label: self.generalize_raw(x, target, policy)?,
                    ..v
                })
            }
            Label::Node(i) => i,
        };
        for k in v.level..target {
            let level = self.level(k);
            idx = *level
                .parents
                .get(idx as usize)
                .ok_or_else(|| Error::InvalidParameter(format!("bad label index {idx}")))?;
        }
        Ok(LevelValue {
            level: target,
            label: Label::Node(idx),
            ..v
        })
    }

    pub fn label_name(&self, level: usize, label: Label) -> String {
        match label {
            Label::Raw(v) => format!("{v}"),
            Label::Node(i) => self.level(level).intervals[i as usize].label.clone(),
        }
    }

    pub fn parse_label(&self, level: usize, text: &str) -> Option<Label> {
        if level == 0 {
            text.parse::<f64>().ok().filter(|v| !v.is_nan()).map(Label::raw)
        } else {
            self.level(level).position(text).map(|i| Label::Node(i as u32))
        }
    }
}

/// Empirical quantile with linear interpolation between order statistics.
/// `sorted` must be ascending and non-empty.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    if lo + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Percentile ladder: raw, `base_bins` quantile bins, pairwise merges, `ANY`.
///
/// `num_levels` counts every level including raw, so `num_levels = 4` with
/// ten bins gives raw -> deciles -> five bins -> `ANY`.
pub fn build_percentile_hierarchy(
    name: &str,
    index: usize,
    values: &[f64],
    num_levels: usize,
    base_bins: usize,
) -> Result<ConceptHierarchy> {
    if values.is_empty() {
        return Err(Error::EmptyInput("percentile hierarchy values"));
    }
    if num_levels < 2 {
        return Err(Error::InvalidParameter(format!("num_levels {num_levels} < 2")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidParameter(format!("attribute `{name}` contains NaN")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    let schema = AttributeSchema {
        name: name.to_string(),
        index,
        weight: 1.0,
        max_level: num_levels - 1,
    };
    let top = Level {
        intervals: vec![Interval {
            lo: min,
            hi: max,
            label: TOP_LABEL.to_string(),
        }],
        parents: vec![],
    };
    if num_levels == 2 {
        return ConceptHierarchy::new(schema, vec![top]);
    }

    let merges = num_levels - 3;
    if base_bins < 2 || !base_bins.is_multiple_of(1usize << merges) {
        return Err(Error::InvalidParameter(format!(
            "base_bins {base_bins} must be >= 2 and divisible by {}",
            1usize << merges
        )));
    }
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < base_bins {
        return Err(Error::DegenerateBins {
            attribute: name.to_string(),
            distinct: distinct.len(),
            bins: base_bins,
        });
    }

    let mut edges = Vec::with_capacity(base_bins + 1);
    edges.push(min);
    for k in 1..base_bins {
        edges.push(quantile(&sorted, k as f64 / base_bins as f64));
    }
    edges.push(max);

    let pct = |k: usize| 100.0 * k as f64 / base_bins as f64;
    let mut levels = Vec::with_capacity(num_levels - 1);
    for m in 0..=merges {
        let width = 1usize << m;
        let count = base_bins / width;
        let intervals = (0..count)
            .map(|i| Interval {
                lo: edges[i * width],
                hi: edges[(i + 1) * width],
                label: format!("P{}-P{}", pct(i * width), pct((i + 1) * width)),
            })
            .collect();
        let parents = if m == merges {
            vec![0; count]
        } else {
            (0..count).map(|i| (i / 2) as u32).collect()
        };
        levels.push(Level { intervals, parents });
    }
    levels.push(top);
    ConceptHierarchy::new(schema, levels)
}

/// Source positions attached to parsed items, used for error reporting.
struct ParentLine {
    level: usize,
    line: usize,
}

fn cfg_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Config {
        line,
        msg: msg.into(),
    }
}

fn validate(
    schema: &AttributeSchema,
    levels: &[Level],
    interval_lines: &[Vec<usize>],
    parent_lines: &[ParentLine],
) -> Result<()> {
    let line_of = |k: usize, i: usize| interval_lines.get(k).and_then(|l| l.get(i)).copied().unwrap_or(0);
    if !(schema.weight >= 0.0) {
        return Err(cfg_err(0, format!("attribute `{}` has negative weight", schema.name)));
    }
    if levels.is_empty() {
        return Err(cfg_err(0, format!("attribute `{}` declares no levels", schema.name)));
    }
    for (k, level) in levels.iter().enumerate() {
        if level.intervals.is_empty() {
            return Err(cfg_err(0, format!("`{}` level {} has no intervals", schema.name, k + 1)));
        }
        for (i, iv) in level.intervals.iter().enumerate() {
            if iv.lo.is_nan() || iv.hi.is_nan() || iv.lo > iv.hi {
                return Err(cfg_err(line_of(k, i), format!("bad interval [{}, {})", iv.lo, iv.hi)));
            }
            if i > 0 {
                let prev = &level.intervals[i - 1];
                if iv.lo < prev.hi {
                    return Err(cfg_err(
                        line_of(k, i),
                        format!(
                            "interval [{}, {}) overlaps [{}, {})",
                            iv.lo, iv.hi, prev.lo, prev.hi
                        ),
                    ));
                }
                if iv.lo > prev.hi {
                    return Err(cfg_err(
                        line_of(k, i),
                        format!("gap between {} and {}", prev.hi, iv.lo),
                    ));
                }
            }
            if level.intervals[..i].iter().any(|o| o.label == iv.label) {
                return Err(cfg_err(line_of(k, i), format!("duplicate label `{}`", iv.label)));
            }
        }
        let top = k + 1 == levels.len();
        if top {
            continue;
        }
        let parent_level = &levels[k + 1];
        let pline = parent_lines
            .iter()
            .find(|p| p.level == k + 2)
            .map(|p| p.line)
            .unwrap_or(0);
        if level.parents.len() != level.intervals.len() {
            return Err(cfg_err(pline, format!("`{}` level {} has labels without a parent", schema.name, k + 1)));
        }
        for (i, (&p, iv)) in level.parents.iter().zip(&level.intervals).enumerate() {
            let Some(parent) = parent_level.intervals.get(p as usize) else {
                return Err(cfg_err(line_of(k, i), format!("label `{}` has no parent", iv.label)));
            };
            if iv.lo < parent.lo || iv.hi > parent.hi {
                return Err(cfg_err(
                    line_of(k, i),
                    format!("`{}` is not contained in its parent `{}`", iv.label, parent.label),
                ));
            }
        }
    }
    Ok(())
}

/// Parses the line-oriented hierarchy configuration.
///
/// ```text
/// attribute s2
/// index 0
/// weight 1
/// level 1
/// interval 641.2 642.5 low
/// interval 642.5 644.6 high
/// level 2
/// interval 641.2 644.6 ANY
/// parent low ANY
/// parent high ANY
/// end
/// ```
///
/// Blank lines and `#` comments are ignored. `parent` lines under level `k`
/// map labels of level `k - 1` onto labels of level `k`.
pub fn parse_hierarchy_config(text: &str) -> Result<Vec<ConceptHierarchy>> {
    struct Block {
        name: String,
        start: usize,
        index: Option<usize>,
        weight: f64,
        levels: Vec<Level>,
        lines: Vec<Vec<usize>>,
        parents: Vec<(usize, String, String, usize)>,
    }

    let mut out = Vec::new();
    let mut cur: Option<Block> = None;

    let num = |tok: Option<&str>, line: usize, what: &str| -> Result<f64> {
        let t = tok.ok_or_else(|| cfg_err(line, format!("missing {what}")))?;
        t.parse::<f64>()
            .map_err(|_| cfg_err(line, format!("bad {what} `{t}`")))
    };

    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut toks = body.split_whitespace();
        let kw = toks.next().unwrap_or_default();
        match (kw, cur.as_mut()) {
            ("attribute", None) => {
                let name = toks.next().ok_or_else(|| cfg_err(line, "missing attribute name"))?;
                cur = Some(Block {
                    name: name.to_string(),
                    start: line,
                    index: None,
                    weight: 1.0,
                    levels: Vec::new(),
                    lines: Vec::new(),
                    parents: Vec::new(),
                });
            }
            ("attribute", Some(_)) => return Err(cfg_err(line, "nested attribute block")),
            (_, None) => return Err(cfg_err(line, format!("`{kw}` outside an attribute block"))),
            ("index", Some(b)) => {
                let v = num(toks.next(), line, "index")?;
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(cfg_err(line, format!("bad index {v}")));
                }
                b.index = Some(v as usize);
            }
            ("weight", Some(b)) => {
                let w = num(toks.next(), line, "weight")?;
                if !(w >= 0.0) {
                    return Err(cfg_err(line, format!("negative weight {w}")));
                }
                b.weight = w;
            }
            ("level", Some(b)) => {
                let k = num(toks.next(), line, "level")?;
                if k != (b.levels.len() + 1) as f64 {
                    return Err(cfg_err(line, format!("expected level {}", b.levels.len() + 1)));
                }
                b.levels.push(Level {
                    intervals: Vec::new(),
                    parents: Vec::new(),
                });
                b.lines.push(Vec::new());
            }
            ("interval", Some(b)) => {
                let lo = num(toks.next(), line, "interval lower bound")?;
                let hi = num(toks.next(), line, "interval upper bound")?;
                let label = toks.next().ok_or_else(|| cfg_err(line, "missing interval label"))?;
                let Some(level) = b.levels.last_mut() else {
                    return Err(cfg_err(line, "interval before any level"));
                };
                if let Some(prev) = level.intervals.last() {
                    if lo < prev.hi {
                        return Err(cfg_err(
                            line,
                            format!("interval [{lo}, {hi}) overlaps [{}, {})", prev.lo, prev.hi),
                        ));
                    }
                }
                level.intervals.push(Interval {
                    lo,
                    hi,
                    label: label.to_string(),
                });
                b.lines.last_mut().expect("level pushed with lines").push(line);
            }
            ("parent", Some(b)) => {
                let child = toks.next().ok_or_else(|| cfg_err(line, "missing child label"))?;
                let parent = toks.next().ok_or_else(|| cfg_err(line, "missing parent label"))?;
                if b.levels.len() < 2 {
                    return Err(cfg_err(line, "parent line needs a level above 1"));
                }
                b.parents
                    .push((b.levels.len(), child.to_string(), parent.to_string(), line));
            }
            ("end", Some(_)) => {
                let b = cur.take().expect("matched Some");
                out.push(finish_block(b.name, b.start, b.index, b.weight, b.levels, b.lines, b.parents)?);
            }
            (other, Some(_)) => return Err(cfg_err(line, format!("unknown keyword `{other}`"))),
        }
        if toks.next().is_some() {
            return Err(cfg_err(line, "trailing tokens"));
        }
    }
    if let Some(b) = cur {
        return Err(cfg_err(b.start, format!("attribute `{}` missing `end`", b.name)));
    }
    Ok(out)
}

fn finish_block(
    name: String,
    start: usize,
    index: Option<usize>,
    weight: f64,
    mut levels: Vec<Level>,
    lines: Vec<Vec<usize>>,
    parents: Vec<(usize, String, String, usize)>,
) -> Result<ConceptHierarchy> {
    let index = index.ok_or_else(|| cfg_err(start, format!("attribute `{name}` missing index")))?;
    for k in 0..levels.len().saturating_sub(1) {
        levels[k].parents = vec![u32::MAX; levels[k].intervals.len()];
    }
    let mut parent_lines = Vec::new();
    for (upper, child, parent, line) in parents {
        let (lower_levels, upper_levels) = levels.split_at_mut(upper - 1);
        let lower = &mut lower_levels[upper - 2];
        let ci = lower
            .position(&child)
            .ok_or_else(|| cfg_err(line, format!("unknown label `{child}` at level {}", upper - 1)))?;
        let pi = upper_levels[0]
            .position(&parent)
            .ok_or_else(|| cfg_err(line, format!("unknown label `{parent}` at level {upper}")))?;
        if lower.parents[ci] != u32::MAX {
            return Err(cfg_err(line, format!("label `{child}` has two parents")));
        }
        lower.parents[ci] = pi as u32;
        parent_lines.push(ParentLine { level: upper, line });
    }
    for (k, level) in levels.iter().enumerate().take(levels.len().saturating_sub(1)) {
        if let Some(i) = level.parents.iter().position(|&p| p == u32::MAX) {
            let line = parent_lines
                .iter()
                .filter(|p| p.level == k + 2)
                .map(|p| p.line)
                .max()
                .unwrap_or(lines[k][i]);
            return Err(cfg_err(
                line,
                format!("missing parent for label `{}` at level {}", level.intervals[i].label, k + 1),
            ));
        }
    }
    let schema = AttributeSchema {
        name,
        index,
        weight,
        max_level: levels.len(),
    };
    validate(&schema, &levels, &lines, &parent_lines)?;
    Ok(ConceptHierarchy { schema, levels })
}

/// Serializes hierarchies in the format read by [`parse_hierarchy_config`].
pub fn write_hierarchy_config(hierarchies: &[ConceptHierarchy]) -> String {
    let mut s = String::new();
    for h in hierarchies {
        let _ = writeln!(s, "attribute {}", h.schema.name);
        let _ = writeln!(s, "index {}", h.schema.index);
        let _ = writeln!(s, "weight {}", h.schema.weight);
        for (k, level) in h.levels.iter().enumerate() {
            let _ = writeln!(s, "level {}", k + 1);
            for iv in &level.intervals {
                let _ = writeln!(s, "interval {} {} {}", iv.lo, iv.hi, iv.label);
            }
            if k > 0 {
                let lower = &h.levels[k - 1];
                for (iv, &p) in lower.intervals.iter().zip(&lower.parents) {
                    let _ = writeln!(s, "parent {} {}", iv.label, level.intervals[p as usize].label);
                }
            }
        }
        let _ = writeln!(s, "end");
    }
    s
}

/// The hierarchies of every retained attribute, in attribute order.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchySet {
    pub hierarchies: Vec<ConceptHierarchy>,
    pub policy: RangePolicy,
}

impl HierarchySet {
    pub fn new(hierarchies: Vec<ConceptHierarchy>, policy: RangePolicy) -> Result<Self> {
        for (i, h) in hierarchies.iter().enumerate() {
            if h.schema.index != i {
                return Err(Error::InvalidParameter(format!(
                    "hierarchy `{}` has index {} at position {i}",
                    h.schema.name, h.schema.index
                )));
            }
        }
        Ok(Self { hierarchies, policy })
    }

    /// Percentile hierarchies for each column of `columns`.
    pub fn from_percentiles(
        names: &[String],
        columns: &[Vec<f64>],
        num_levels: usize,
        base_bins: usize,
        policy: RangePolicy,
    ) -> Result<Self> {
        let hierarchies = names
            .iter()
            .zip(columns)
            .enumerate()
            .map(|(i, (n, c))| build_percentile_hierarchy(n, i, c, num_levels, base_bins))
            .collect::<Result<Vec<_>>>()?;
        Self::new(hierarchies, policy)
    }

    pub fn len(&self) -> usize {
        self.hierarchies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hierarchies.is_empty()
    }

    pub fn get(&self, attr: usize) -> &ConceptHierarchy {
        &self.hierarchies[attr]
    }

    pub fn to_config(&self) -> String {
        write_hierarchy_config(&self.hierarchies)
    }

    /// SHA-256 of the serialized configuration.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.to_config().as_bytes()))
    }

    /// `labels[attr][level]` for one raw instance; used to avoid repeated
    /// interval searches when matching against many relation groups.
    pub fn ladder(&self, raw: &[f64]) -> Result<Vec<Vec<Label>>> {
        raw.iter()
            .zip(&self.hierarchies)
            .map(|(&v, h)| {
                (0..=h.max_level())
                    .map(|k| h.generalize_raw(v, k, self.policy))
                    .collect()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_to_hundred() -> Vec<f64> {
        (1..=100).map(f64::from).collect()
    }

    #[test]
    fn deciles_of_one_to_hundred() {
        let h = build_percentile_hierarchy("a", 0, &one_to_hundred(), 4, 10).unwrap();
        assert_eq!(h.max_level(), 3);
        let l1 = h.level(1);
        assert_eq!(l1.intervals.len(), 10);
        // (N-1)p = 9.9k -> x = 1 + 9.9k
        for k in 1..10 {
            let expected = 1.0 + 9.9 * k as f64;
            assert!((l1.intervals[k].lo - expected).abs() < 1e-12, "edge {k}");
        }
        assert_eq!(h.level(2).intervals.len(), 5);
        assert_eq!(h.level(3).intervals.len(), 1);
        assert_eq!(h.level(3).intervals[0].label, "ANY");
        assert_eq!(h.level(2).intervals[1].label, "P20-P40");
    }

    #[test]
    fn constant_values_are_degenerate() {
        let err = build_percentile_hierarchy("s1", 0, &[5.0; 40], 4, 10).unwrap_err();
        assert!(matches!(err, Error::DegenerateBins { ref attribute, .. } if attribute == "s1"));
    }

    #[test]
    fn two_point_median_split() {
        let h = build_percentile_hierarchy("a", 0, &[0.0, 1.0], 3, 2).unwrap();
        let l1 = h.level(1);
        assert_eq!((l1.intervals[0].lo, l1.intervals[0].hi), (0.0, 0.5));
        assert_eq!((l1.intervals[1].lo, l1.intervals[1].hi), (0.5, 1.0));
        assert_eq!(h.level(2).intervals[0].label, "ANY");
        // closed top edge
        assert_eq!(h.locate(1.0, 1, RangePolicy::Strict).unwrap(), 1);
    }

    #[test]
    fn decile_lookup_on_uniform_grid() {
        let values: Vec<f64> = (0..=1000).map(|i| i as f64 / 1000.0).collect();
        let h = build_percentile_hierarchy("u", 0, &values, 4, 10).unwrap();
        let v = LevelValue {
            attr: 0,
            level: 0,
            label: Label::raw(0.42),
        };
        let g = h.generalize_value(v, 1, RangePolicy::Strict).unwrap();
        assert_eq!(h.label_name(1, g.label), "P40-P50");
        assert_eq!(h.generalize_value(v, 0, RangePolicy::Strict).unwrap(), v);
        let top = h.generalize_value(v, 3, RangePolicy::Strict).unwrap();
        assert_eq!(h.label_name(3, top.label), "ANY");
    }

    #[test]
    fn clamp_versus_strict() {
        let h = build_percentile_hierarchy("a", 0, &one_to_hundred(), 4, 10).unwrap();
        assert_eq!(h.locate(-50.0, 1, RangePolicy::Clamp).unwrap(), 0);
        assert_eq!(h.locate(500.0, 2, RangePolicy::Clamp).unwrap(), 4);
        assert!(matches!(
            h.locate(500.0, 1, RangePolicy::Strict),
            Err(Error::OutOfRange { .. })
        ));
        assert!(h.generalize_raw(f64::NAN, 1, RangePolicy::Clamp).is_err());
    }

    #[test]
    fn bad_divisibility_rejected() {
        assert!(build_percentile_hierarchy("a", 0, &one_to_hundred(), 5, 10).is_err());
        assert!(build_percentile_hierarchy("a", 0, &one_to_hundred(), 5, 12).is_ok());
    }

    const MINIMAL: &str = "\
# one attribute
attribute pressure
index 0
weight 2.5
level 1
interval 0 5 low
interval 5 10 high
level 2
interval 0 10 ANY
parent low ANY
parent high ANY
end
";

    #[test]
    fn parses_minimal_document() {
        let hs = parse_hierarchy_config(MINIMAL).unwrap();
        assert_eq!(hs.len(), 1);
        assert_eq!(hs[0].max_level(), 2);
        assert_eq!(hs[0].schema.weight, 2.5);
        assert_eq!(hs[0].locate(7.0, 1, RangePolicy::Strict).unwrap(), 1);
    }

    #[test]
    fn empty_document_is_empty_list() {
        assert!(parse_hierarchy_config("").unwrap().is_empty());
        assert!(parse_hierarchy_config("# nothing\n\n").unwrap().is_empty());
    }

    #[test]
    fn overlap_reports_line() {
        let doc = MINIMAL.replace("interval 5 10 high", "interval 3 8 high");
        match parse_hierarchy_config(&doc) {
            Err(Error::Config { line, msg }) => {
                assert_eq!(line, 7);
                assert!(msg.contains("overlaps"), "{msg}");
            }
            other => panic!("expected overlap error, got {other:?}"),
        }
    }

    #[test]
    fn missing_parent_and_negative_weight() {
        let doc = MINIMAL.replace("parent high ANY\n", "");
        assert!(matches!(parse_hierarchy_config(&doc), Err(Error::Config { .. })));
        let doc = MINIMAL.replace("weight 2.5", "weight -1");
        assert!(matches!(
            parse_hierarchy_config(&doc),
            Err(Error::Config { line: 4, .. })
        ));
    }

    #[test]
    fn child_outside_parent_rejected() {
        let doc = "\
attribute a
index 0
level 1
interval 0 5 low
interval 5 10 high
level 2
interval 0 6 L
interval 6 10 H
parent low L
parent high L
end
";
        assert!(parse_hierarchy_config(doc).is_err());
    }

    #[test]
    fn round_trip_percentile_hierarchy() {
        let h = build_percentile_hierarchy("s7", 0, &one_to_hundred(), 4, 10).unwrap();
        let text = write_hierarchy_config(std::slice::from_ref(&h));
        let back = parse_hierarchy_config(&text).unwrap();
        assert_eq!(back, vec![h]);
        assert_eq!(write_hierarchy_config(&back), text);
    }
}
