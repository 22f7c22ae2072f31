//! Knowledge base of weighted clusters and its line-delimited text format.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::{self, Write as _};

use crate::aoi::AoiParams;
use crate::error::{Error, Result};
use crate::hierarchy::{HierarchySet, Label};

const MAGIC: &str = "aoipdm-kb 1";

/// Generalization state of one attribute within a relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttrLevel {
    Level(usize),
    Removed,
}

impl fmt::Display for AttrLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrLevel::Level(k) => write!(f, "{k}"),
            AttrLevel::Removed => f.write_str("REMOVED"),
        }
    }
}

/// Per-attribute levels identifying a generalized relation.
pub type Descriptor = Vec<AttrLevel>;

pub fn descriptor_string(d: &[AttrLevel]) -> String {
    d.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// One label per non-removed attribute, in attribute order.
    pub signature: Vec<Label>,
    pub instances: u64,
    /// Votes present in the relation when it was formed.
    pub outliers: u64,
    /// Minimum cluster size in force when the cluster was extracted.
    pub min_size: usize,
    pub level_weight: f64,
    pub prev_level_weight: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterGroup {
    pub descriptor: Descriptor,
    pub level_weight: f64,
    pub clusters: Vec<Cluster>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    pub params: AoiParams,
    /// Checksum of the hierarchy configuration the labels refer to.
    pub checksum: String,
    pub groups: Vec<ClusterGroup>,
}

impl KnowledgeBase {
    /// Groups clusters by descriptor: groups by descending level weight (ties
    /// by descriptor), clusters within a group by signature.
    pub fn from_clusters(
        params: AoiParams,
        checksum: String,
        clusters: Vec<(Descriptor, Cluster)>,
    ) -> Self {
        let mut by_desc: HashMap<Descriptor, Vec<Cluster>> = HashMap::new();
        for (d, c) in clusters {
            by_desc.entry(d).or_default().push(c);
        }
        let mut groups: Vec<ClusterGroup> = by_desc
            .into_iter()
            .map(|(descriptor, mut clusters)| {
                clusters.sort_by(|a, b| a.signature.cmp(&b.signature));
                debug_assert!(clusters.windows(2).all(|w| w[0].signature != w[1].signature));
                ClusterGroup {
                    descriptor,
                    level_weight: clusters[0].level_weight,
                    clusters,
                }
            })
            .collect();
        groups.sort_by(group_order);
        Self {
            params,
            checksum,
            groups,
        }
    }

    pub fn num_clusters(&self) -> usize {
        self.groups.iter().map(|g| g.clusters.len()).sum()
    }

    pub fn total_instances(&self) -> u64 {
        self.clusters().map(|c| c.instances).sum()
    }

    /// Clusters in knowledge-base order; the position is the cluster id.
    pub fn clusters(&self) -> impl Iterator<Item = &Cluster> {
        self.groups.iter().flat_map(|g| g.clusters.iter())
    }

    pub fn write(&self, hs: &HierarchySet) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(
            s,
            "params min_cluster_size={} attr_threshold={} tuple_threshold={}",
            self.params.min_cluster_size, self.params.attr_threshold, self.params.tuple_threshold
        );
        let _ = writeln!(s, "checksum {}", self.checksum);
        let _ = writeln!(s, "attributes {}", hs.len());
        let _ = writeln!(
            s,
            "# descriptor\tsignature\tinstances\toutliers\tmin_size\tlevel_weight\tprev_level_weight\tweight"
        );
        for g in &self.groups {
            let desc = descriptor_string(&g.descriptor);
            let kept: Vec<(usize, usize)> = g
                .descriptor
                .iter()
                .enumerate()
                .filter_map(|(a, l)| match l {
                    AttrLevel::Level(k) => Some((a, *k)),
                    AttrLevel::Removed => None,
                })
                .collect();
            for c in &g.clusters {
                let sig: Vec<String> = kept
                    .iter()
                    .zip(&c.signature)
                    .map(|(&(a, k), &l)| hs.get(a).label_name(k, l))
                    .collect();
                let _ = writeln!(
                    s,
                    "cluster\t{desc}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    sig.join(" "),
                    c.instances,
                    c.outliers,
                    c.min_size,
                    c.level_weight,
                    c.prev_level_weight,
                    c.weight
                );
            }
        }
        s
    }

    pub fn read(text: &str, hs: &HierarchySet) -> Result<Self> {
        let err = |line: usize, msg: String| Error::KnowledgeBase { line, msg };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut header = |what: &str| -> Result<(usize, String)> {
            let (n, l) = lines
                .next()
                .ok_or_else(|| err(0, format!("missing {what} line")))?;
            Ok((n, l.to_string()))
        };

        let (n, magic) = header("version")?;
        if magic != MAGIC {
            return Err(err(n, format!("unsupported header `{magic}`")));
        }
        let (n, params_line) = header("params")?;
        let params = parse_params(&params_line).ok_or_else(|| err(n, "bad params line".into()))?;
        let (n, ck) = header("checksum")?;
        let checksum = ck
            .strip_prefix("checksum ")
            .ok_or_else(|| err(n, "bad checksum line".into()))?
            .to_string();
        if checksum != hs.checksum() {
            return Err(err(n, "hierarchy checksum mismatch".into()));
        }
        let (n, attrs) = header("attributes")?;
        let count: usize = attrs
            .strip_prefix("attributes ")
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| err(n, "bad attributes line".into()))?;
        if count != hs.len() {
            return Err(err(n, format!("{count} attributes, hierarchies have {}", hs.len())));
        }

        let mut clusters = Vec::new();
        for (n, line) in lines {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 9 || f[0] != "cluster" {
                return Err(err(n, "expected 9 tab-separated cluster fields".into()));
            }
            let descriptor = f[1]
                .split(',')
                .map(|t| match t {
                    "REMOVED" => Some(AttrLevel::Removed),
                    k => k.parse().ok().map(AttrLevel::Level),
                })
                .collect::<Option<Descriptor>>()
                .ok_or_else(|| err(n, format!("bad descriptor `{}`", f[1])))?;
            if descriptor.len() != hs.len() {
                return Err(err(n, "descriptor arity mismatch".into()));
            }
            let kept: Vec<(usize, usize)> = descriptor
                .iter()
                .enumerate()
                .filter_map(|(a, l)| match l {
                    AttrLevel::Level(k) => Some((a, *k)),
                    AttrLevel::Removed => None,
                })
                .collect();
            let toks: Vec<&str> = f[2].split(' ').collect();
            if toks.len() != kept.len() {
                return Err(err(n, "signature arity mismatch".into()));
            }
            let signature = kept
                .iter()
                .zip(&toks)
                .map(|(&(a, k), t)| {
                    let h = hs.get(a);
                    if k > h.max_level() {
                        return None;
                    }
                    h.parse_label(k, t)
                })
                .collect::<Option<Vec<Label>>>()
                .ok_or_else(|| err(n, format!("unknown label in `{}`", f[2])))?;
            let int = |s: &str| s.parse::<u64>().map_err(|_| err(n, format!("bad integer `{s}`")));
            let real = |s: &str| s.parse::<f64>().map_err(|_| err(n, format!("bad number `{s}`")));
            clusters.push((
                descriptor,
                Cluster {
                    signature,
                    instances: int(f[3])?,
                    outliers: int(f[4])?,
                    min_size: int(f[5])? as usize,
                    level_weight: real(f[6])?,
                    prev_level_weight: real(f[7])?,
                    weight: real(f[8])?,
                },
            ));
        }
        let kb = Self::from_clusters(params, checksum, clusters);
        for g in &kb.groups {
            if g.clusters.windows(2).any(|w| w[0].signature == w[1].signature) {
                return Err(err(0, format!("duplicate signature in group {}", descriptor_string(&g.descriptor))));
            }
        }
        Ok(kb)
    }
}

fn group_order(a: &ClusterGroup, b: &ClusterGroup) -> Ordering {
    b.level_weight
        .total_cmp(&a.level_weight)
        .then_with(|| a.descriptor.cmp(&b.descriptor))
}

fn parse_params(line: &str) -> Option<AoiParams> {
    let rest = line.strip_prefix("params ")?;
    let mut p = AoiParams::default();
    for kv in rest.split(' ') {
        let (k, v) = kv.split_once('=')?;
        let v: usize = v.parse().ok()?;
        match k {
            "min_cluster_size" => p.min_cluster_size = v,
            "attr_threshold" => p.attr_threshold = v,
            "tuple_threshold" => p.tuple_threshold = v,
            _ => return None,
        }
    }
    Some(p)
}
