//! Turns a simulation into a per-cycle series of matched cluster weights.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::hierarchy::{HierarchySet, Label};
use crate::kb::{AttrLevel, KnowledgeBase};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    /// Position in knowledge-base order, `None` when nothing matched.
    pub cluster: Option<usize>,
    pub weight: f64,
}

impl Match {
    pub const NONE: Match = Match {
        cluster: None,
        weight: 0.0,
    };
}

struct GroupIndex {
    /// `(attribute, level)` for each non-removed attribute.
    keys: Vec<(usize, usize)>,
    by_signature: HashMap<Vec<Label>, (usize, f64)>,
}

/// Hash index over a knowledge base, one table per relation group, searched
/// in the knowledge base's group order.
pub struct Quantifier<'a> {
    hs: &'a HierarchySet,
    groups: Vec<GroupIndex>,
}

impl<'a> Quantifier<'a> {
    pub fn new(kb: &KnowledgeBase, hs: &'a HierarchySet) -> Self {
        let mut id = 0;
        let groups = kb
            .groups
            .iter()
            .map(|g| {
                let keys = g
                    .descriptor
                    .iter()
                    .enumerate()
                    .filter_map(|(a, l)| match l {
                        AttrLevel::Level(k) => Some((a, *k)),
                        AttrLevel::Removed => None,
                    })
                    .collect();
                let by_signature = g
                    .clusters
                    .iter()
                    .map(|c| {
                        id += 1;
                        (c.signature.clone(), (id - 1, c.weight))
                    })
                    .collect();
                GroupIndex { keys, by_signature }
            })
            .collect();
        Self { hs, groups }
    }

    pub fn match_instance(&self, instance: &[f64]) -> Result<Match> {
        if instance.len() != self.hs.len() {
            return Err(Error::InvalidParameter(format!(
                "instance has {} values, expected {}",
                instance.len(),
                self.hs.len()
            )));
        }
        let ladder = self.hs.ladder(instance)?;
        let mut key = Vec::with_capacity(instance.len());
        for g in &self.groups {
            key.clear();
            key.extend(g.keys.iter().map(|&(a, k)| ladder[a][k]));
            if let Some(&(cluster, weight)) = g.by_signature.get(&key) {
                return Ok(Match {
                    cluster: Some(cluster),
                    weight,
                });
            }
        }
        Ok(Match::NONE)
    }

    /// `rows` are the retained attribute values of consecutive cycles 1..=n.
    pub fn quantify(&self, sim_id: u32, rows: &[Vec<f64>]) -> Result<QuantificationSeries> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("simulation"));
        }
        let records = rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let m = self.match_instance(r)?;
                Ok(QRecord {
                    cycle: i as u32 + 1,
                    cluster: m.cluster,
                    weight: m.weight,
                })
            })
            .collect::<Result<_>>()?;
        Ok(QuantificationSeries { sim_id, records })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QRecord {
    pub cycle: u32,
    pub cluster: Option<usize>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantificationSeries {
    pub sim_id: u32,
    pub records: Vec<QRecord>,
}

impl QuantificationSeries {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.weight).collect()
    }

    /// `cycle\tcluster\tweight`, `NONE` for unmatched cycles.
    pub fn to_columns(&self) -> String {
        let mut s = String::from("cycle\tcluster\tweight\n");
        for r in &self.records {
            let c = r.cluster.map_or_else(|| "NONE".to_string(), |c| c.to_string());
            let _ = writeln!(s, "{}\t{c}\t{}", r.cycle, r.weight);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aoi::AoiParams;
    use crate::hierarchy::{build_percentile_hierarchy, RangePolicy};
    use crate::kb::Cluster;

    fn hs() -> HierarchySet {
        let vals: Vec<f64> = (1..=100).map(f64::from).collect();
        let a = build_percentile_hierarchy("a", 0, &vals, 3, 2).unwrap();
        let b = build_percentile_hierarchy("b", 1, &vals, 3, 2).unwrap();
        HierarchySet::new(vec![a, b], RangePolicy::Clamp).unwrap()
    }

    fn cluster(signature: Vec<Label>, lw: f64, w: f64) -> Cluster {
        Cluster {
            signature,
            instances: 10,
            outliers: 10,
            min_size: 10,
            level_weight: lw,
            prev_level_weight: lw,
            weight: w,
        }
    }

    fn kb() -> KnowledgeBase {
        use AttrLevel::*;
        KnowledgeBase::from_clusters(
            AoiParams::default(),
            String::new(),
            vec![
                (vec![Level(0), Level(0)], cluster(vec![Label::raw(5.0), Label::raw(7.0)], 1.0, 1.0)),
                (vec![Level(1), Removed], cluster(vec![Label::Node(1)], 0.25, 0.3)),
            ],
        )
    }

    #[test]
    fn specific_cluster_wins() {
        let hs = hs();
        let q = Quantifier::new(&kb(), &hs);
        assert_eq!(q.match_instance(&[5.0, 7.0]).unwrap(), Match { cluster: Some(0), weight: 1.0 });
        assert_eq!(q.match_instance(&[90.0, 7.0]).unwrap(), Match { cluster: Some(1), weight: 0.3 });
        assert_eq!(q.match_instance(&[5.0, 8.0]).unwrap(), Match::NONE);
        assert!(q.match_instance(&[5.0]).is_err());
    }

    #[test]
    fn step_shaped_series() {
        let hs = hs();
        let q = Quantifier::new(&kb(), &hs);
        let rows: Vec<Vec<f64>> = (0..10).map(|i| if i < 6 { vec![5.0, 7.0] } else { vec![80.0, 1.0] }).collect();
        let s = q.quantify(3, &rows).unwrap();
        assert_eq!(s.len(), 10);
        assert_eq!(s.weights(), [vec![1.0; 6], vec![0.3; 4]].concat());
        assert!(q.quantify(3, &[]).is_err());
        let cols = s.to_columns();
        assert!(cols.starts_with("cycle\tcluster\tweight\n1\t0\t1\n"));
    }
}
