//! Attribute Oriented Induction with a decreasing minimum cluster size.
//!
//! Each pass starts from the unclustered raw tuples and repeatedly
//! generalizes the most heterogeneous attribute (ties: higher schema weight,
//! then lower index). Identical tuples merge and their votes add up. Whenever
//! the relation satisfies both thresholds, every tuple with at least
//! `min_cluster_size` votes is turned into a cluster and leaves the relation.
//! Tuples still unclustered at the end of a pass are expanded back to raw form
//! and retried with the next smaller minimum size, down to 2.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{HierarchySet, Label};
use crate::kb::{AttrLevel, Cluster, Descriptor, KnowledgeBase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AoiParams {
    pub min_cluster_size: usize,
    /// Maximum distinct values per attribute in an emitted relation.
    pub attr_threshold: usize,
    /// Maximum distinct tuples in an emitted relation.
    pub tuple_threshold: usize,
}

impl Default for AoiParams {
    fn default() -> Self {
        Self {
            min_cluster_size: 10,
            attr_threshold: 20,
            tuple_threshold: 200,
        }
    }
}

/// Average of `2^-level` over the non-removed attributes.
pub fn generalized_level_weight(levels: &[usize]) -> Result<f64> {
    if levels.is_empty() {
        return Err(Error::EmptyRelation);
    }
    let sum: f64 = levels.iter().map(|&l| 0.5f64.powi(l as i32)).sum();
    Ok(sum / levels.len() as f64)
}

/// Relation weight plus the share of the weight gap to the previous relation
/// proportional to the fraction of remaining votes the cluster absorbs.
pub fn cluster_weight(gen_lv_w: f64, inst: u64, outl: u64, diffw: f64) -> Result<f64> {
    if outl == 0 {
        return Err(Error::InvalidParameter("cluster weight with zero outliers".into()));
    }
    if inst == 0 || inst > outl || diffw < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "cluster weight needs 1 <= inst <= outl and diffw >= 0 (inst {inst}, outl {outl}, diffw {diffw})"
        )));
    }
    Ok(gen_lv_w + (inst as f64 / outl as f64) * diffw)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tuple {
    /// One label per attribute; removed attributes hold a placeholder.
    pub values: Vec<Label>,
    /// Raw tuple indexes merged into this one; the vote count is its length.
    pub members: Vec<u32>,
}

impl Tuple {
    pub fn votes(&self) -> u64 {
        self.members.len() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedRelation {
    /// Sorted by value vector.
    pub tuples: Vec<Tuple>,
    pub levels: Vec<usize>,
    pub removed: Vec<bool>,
    pub level_weight: f64,
    pub prev_level_weight: f64,
    /// Votes present when this relation was formed.
    pub outliers: u64,
}

const REMOVED_PLACEHOLDER: Label = Label::Node(0);

fn merge(rows: impl IntoIterator<Item = (Vec<Label>, Vec<u32>)>) -> Vec<Tuple> {
    let mut map: BTreeMap<Vec<Label>, Vec<u32>> = BTreeMap::new();
    for (values, members) in rows {
        map.entry(values).or_default().extend(members);
    }
    map.into_iter()
        .map(|(values, mut members)| {
            members.sort_unstable();
            Tuple { values, members }
        })
        .collect()
}

impl GeneralizedRelation {
    /// Level-0 relation over the raw rows selected by `members`.
    pub fn from_raw(raw: &[Vec<f64>], members: &[u32], hs: &HierarchySet) -> Result<Self> {
        let n_attr = hs.len();
        if n_attr == 0 {
            return Err(Error::EmptyRelation);
        }
        let rows = members
            .iter()
            .map(|&i| {
                let row = &raw[i as usize];
                if row.len() != n_attr {
                    return Err(Error::InvalidParameter(format!(
                        "tuple {i} has {} values, expected {n_attr}",
                        row.len()
                    )));
                }
                let values = row
                    .iter()
                    .enumerate()
                    .map(|(a, &v)| hs.get(a).generalize_raw(v, 0, hs.policy))
                    .collect::<Result<Vec<_>>>()?;
                Ok((values, vec![i]))
            })
            .collect::<Result<Vec<_>>>()?;
        let tuples = merge(rows);
        let outliers = tuples.iter().map(Tuple::votes).sum();
        Ok(Self {
            tuples,
            levels: vec![0; n_attr],
            removed: vec![false; n_attr],
            level_weight: 1.0,
            prev_level_weight: 1.0,
            outliers,
        })
    }

    pub fn num_attr(&self) -> usize {
        self.removed.iter().filter(|r| !**r).count()
    }

    pub fn votes(&self) -> u64 {
        self.tuples.iter().map(Tuple::votes).sum()
    }

    pub fn active_levels(&self) -> Vec<usize> {
        self.levels
            .iter()
            .zip(&self.removed)
            .filter(|(_, r)| !**r)
            .map(|(l, _)| *l)
            .collect()
    }

    pub fn descriptor(&self) -> Descriptor {
        self.levels
            .iter()
            .zip(&self.removed)
            .map(|(&l, &r)| if r { AttrLevel::Removed } else { AttrLevel::Level(l) })
            .collect()
    }

    /// Distinct values per attribute; 0 for removed attributes.
    pub fn distinct_counts(&self) -> Vec<usize> {
        (0..self.levels.len())
            .map(|a| {
                if self.removed[a] {
                    0
                } else {
                    self.tuples.iter().map(|t| t.values[a]).collect::<HashSet<_>>().len()
                }
            })
            .collect()
    }

    pub fn complies(&self, params: &AoiParams) -> bool {
        self.tuples.len() <= params.tuple_threshold
            && self.distinct_counts().iter().all(|&d| d <= params.attr_threshold)
    }

    /// Weight gap to the previous relation, never negative.
    pub fn diffw(&self) -> f64 {
        (self.prev_level_weight - self.level_weight).max(0.0)
    }

    fn successor(&self, tuples: Vec<Tuple>, levels: Vec<usize>, removed: Vec<bool>) -> Result<Self> {
        let active: Vec<usize> = levels
            .iter()
            .zip(&removed)
            .filter(|(_, r)| !**r)
            .map(|(l, _)| *l)
            .collect();
        let level_weight = generalized_level_weight(&active)?;
        let outliers = tuples.iter().map(Tuple::votes).sum();
        Ok(Self {
            tuples,
            levels,
            removed,
            level_weight,
            prev_level_weight: self.level_weight,
            outliers,
        })
    }
}

/// Attribute to generalize next, or `None` when nothing can change.
///
/// Candidates have at least two distinct values and are either below their
/// top level, or at it with more distinct values than `attr_threshold` (and
/// are not the last attribute left, which cannot be removed).
pub fn select_attribute_to_generalize(
    rel: &GeneralizedRelation,
    hs: &HierarchySet,
    attr_threshold: usize,
) -> Option<usize> {
    let counts = rel.distinct_counts();
    let removable = rel.num_attr() > 1;
    (0..counts.len())
        .filter(|&a| !rel.removed[a] && counts[a] >= 2)
        .filter(|&a| {
            rel.levels[a] < hs.get(a).max_level() || (removable && counts[a] > attr_threshold)
        })
        .max_by(|&a, &b| {
            counts[a]
                .cmp(&counts[b])
                .then(hs.get(a).schema.weight.total_cmp(&hs.get(b).schema.weight))
                .then(b.cmp(&a))
        })
}

/// Replaces every value of `attr` with its parent one level up and merges
/// tuples that became identical.
pub fn ascend_concept_tree(
    rel: &GeneralizedRelation,
    attr: usize,
    hs: &HierarchySet,
) -> Result<GeneralizedRelation> {
    let h = hs.get(attr);
    let from = rel.levels[attr];
    if rel.removed[attr] || from >= h.max_level() {
        return Err(Error::InvalidParameter(format!(
            "attribute `{}` cannot ascend from level {from}",
            h.schema.name
        )));
    }
    let rows = rel
        .tuples
        .iter()
        .map(|t| {
            let mut values = t.values.clone();
            let lv = crate::hierarchy::LevelValue {
                attr,
                level: from,
                label: values[attr],
            };
            values[attr] = h.generalize_value(lv, from + 1, hs.policy)?.label;
            Ok((values, t.members.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut levels = rel.levels.clone();
    levels[attr] += 1;
    rel.successor(merge(rows), levels, rel.removed.clone())
}

/// Drops `attr` from the relation and merges tuples that became identical.
pub fn remove_attribute(rel: &GeneralizedRelation, attr: usize) -> Result<GeneralizedRelation> {
    if rel.removed[attr] {
        return Err(Error::InvalidParameter(format!("attribute {attr} already removed")));
    }
    if rel.num_attr() == 1 {
        return Err(Error::EmptyRelation);
    }
    let rows = rel.tuples.iter().map(|t| {
        let mut values = t.values.clone();
        values[attr] = REMOVED_PLACEHOLDER;
        (values, t.members.clone())
    });
    let mut removed = rel.removed.clone();
    removed[attr] = true;
    rel.successor(merge(rows), rel.levels.clone(), removed)
}

/// Signature of a tuple restricted to the relation's non-removed attributes.
fn signature(rel: &GeneralizedRelation, t: &Tuple) -> Vec<Label> {
    t.values
        .iter()
        .zip(&rel.removed)
        .filter(|(_, r)| !**r)
        .map(|(v, _)| *v)
        .collect()
}

/// Moves every tuple with at least `min_cluster_size` votes into a cluster.
pub fn extract_clusters(
    rel: GeneralizedRelation,
    min_cluster_size: usize,
) -> Result<(Vec<Cluster>, GeneralizedRelation)> {
    if min_cluster_size < 2 {
        return Err(Error::InvalidParameter(format!(
            "min_cluster_size {min_cluster_size} < 2"
        )));
    }
    let diffw = rel.diffw();
    let mut clusters = Vec::new();
    let mut kept = Vec::new();
    for t in &rel.tuples {
        if t.votes() >= min_cluster_size as u64 {
            clusters.push(Cluster {
                signature: signature(&rel, t),
                instances: t.votes(),
                outliers: rel.outliers,
                min_size: min_cluster_size,
                level_weight: rel.level_weight,
                prev_level_weight: rel.prev_level_weight,
                weight: cluster_weight(rel.level_weight, t.votes(), rel.outliers, diffw)?,
            });
        } else {
            kept.push(t.clone());
        }
    }
    Ok((clusters, GeneralizedRelation { tuples: kept, ..rel }))
}

/// One recorded state of the working relation.
#[derive(Debug, Clone, PartialEq)]
pub struct AoiStep {
    pub min_size: usize,
    pub descriptor: Descriptor,
    pub relation_votes: u64,
    /// Votes absorbed by clusters so far, over all passes.
    pub clustered_votes: u64,
    pub compliant: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualReason {
    /// The most general reachable relation still has tuples with fewer than
    /// two votes.
    NoFurtherGeneralization,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    /// Raw tuple indexes never absorbed by any cluster.
    pub members: Vec<u32>,
    pub descriptor: Descriptor,
    pub reason: ResidualReason,
}

#[derive(Debug, Clone)]
pub struct AoiOutcome {
    pub kb: KnowledgeBase,
    pub residual: Option<Residual>,
    pub trace: Vec<AoiStep>,
    /// Relations emitted while violating a threshold because no further
    /// generalization was possible.
    pub forced_extractions: usize,
}

pub fn run_aoi(raw: &[Vec<f64>], hs: &HierarchySet, params: AoiParams) -> Result<AoiOutcome> {
    if raw.is_empty() {
        return Err(Error::EmptyInput("AOI input relation"));
    }
    if params.min_cluster_size < 2 {
        return Err(Error::InvalidParameter(format!(
            "min_cluster_size {} < 2",
            params.min_cluster_size
        )));
    }
    let mut pending: Vec<u32> = (0..raw.len() as u32).collect();
    let mut found: Vec<(Descriptor, Cluster)> = Vec::new();
    let mut trace = Vec::new();
    let mut clustered = 0u64;
    let mut forced = 0usize;
    let mut residual = None;

    for m in (2..=params.min_cluster_size).rev() {
        if pending.is_empty() {
            break;
        }
        let mut rel = GeneralizedRelation::from_raw(raw, &pending, hs)?;
        let mut record = |rel: &GeneralizedRelation, clustered: u64, compliant: bool| {
            trace.push(AoiStep {
                min_size: m,
                descriptor: rel.descriptor(),
                relation_votes: rel.votes(),
                clustered_votes: clustered,
                compliant,
            })
        };
        loop {
            let compliant = rel.complies(&params);
            if compliant {
                let d = rel.descriptor();
                let (cs, rest) = extract_clusters(rel, m)?;
                clustered += cs.iter().map(|c| c.instances).sum::<u64>();
                found.extend(cs.into_iter().map(|c| (d.clone(), c)));
                rel = rest;
            }
            record(&rel, clustered, compliant);
            if rel.tuples.is_empty() {
                break;
            }
            match select_attribute_to_generalize(&rel, hs, params.attr_threshold) {
                Some(a) if rel.levels[a] < hs.get(a).max_level() => {
                    rel = ascend_concept_tree(&rel, a, hs)?;
                }
                Some(a) => rel = remove_attribute(&rel, a)?,
                None => {
                    if !compliant {
                        forced += 1;
                        let d = rel.descriptor();
                        let (cs, rest) = extract_clusters(rel, m)?;
                        clustered += cs.iter().map(|c| c.instances).sum::<u64>();
                        found.extend(cs.into_iter().map(|c| (d.clone(), c)));
                        rel = rest;
                        record(&rel, clustered, false);
                    }
                    break;
                }
            }
        }
        pending = rel.tuples.iter().flat_map(|t| t.members.iter().copied()).collect();
        pending.sort_unstable();
        if m == 2 && !pending.is_empty() {
            residual = Some(Residual {
                members: pending.clone(),
                descriptor: rel.descriptor(),
                reason: ResidualReason::NoFurtherGeneralization,
            });
        }
    }

    let kb = KnowledgeBase::from_clusters(params, hs.checksum(), found);
    Ok(AoiOutcome {
        kb,
        residual,
        trace,
        forced_extractions: forced,
    })
}
