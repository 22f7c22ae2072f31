//! Brute-force AOI used as a test oracle.
//!
//! It shares no code with the library: labels come straight from cut points
//! and every generalized relation is rebuilt from the raw rows of the
//! pending tuples instead of being derived from the previous relation.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use aoipdm::aoi::AoiParams;
use aoipdm::hierarchy::{AttributeSchema, ConceptHierarchy, HierarchySet, Interval, Label, Level, RangePolicy};
use aoipdm::kb::{AttrLevel, KnowledgeBase};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Raw values are integers in `0..=VALUE_MAX`.
pub const VALUE_MAX: u32 = 7;

#[derive(Debug, Clone)]
pub struct SmallCase {
    pub rows: Vec<Vec<f64>>,
    /// Level-1 cut points per attribute.
    pub cuts: Vec<Vec<f64>>,
    /// Level 2 merges neighbouring level-1 bins in pairs instead of being a
    /// single `ANY` node.
    pub paired_top: Vec<bool>,
    pub weights: Vec<f64>,
    pub params: AoiParams,
}

impl SmallCase {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_attr = rng.random_range(1..=4usize);
        let n_rows = rng.random_range(1..=50usize);
        // a narrow value range per attribute makes duplicates likely
        let spans: Vec<u32> = (0..n_attr).map(|_| rng.random_range(1..=VALUE_MAX)).collect();
        let rows = (0..n_rows)
            .map(|_| spans.iter().map(|&s| f64::from(rng.random_range(0..=s))).collect())
            .collect();
        let cuts = (0..n_attr)
            .map(|_| {
                let k = rng.random_range(0..=3usize);
                let set: BTreeSet<u32> = (0..k).map(|_| rng.random_range(1..=VALUE_MAX)).collect();
                set.into_iter().map(f64::from).collect()
            })
            .collect();
        let paired_top = (0..n_attr).map(|_| rng.random_bool(0.5)).collect();
        let weights = (0..n_attr).map(|_| f64::from(rng.random_range(1..=2u32))).collect();
        let params = AoiParams {
            min_cluster_size: rng.random_range(2..=6),
            attr_threshold: rng.random_range(1..=4),
            tuple_threshold: rng.random_range(1..=20),
        };
        Self {
            rows,
            cuts,
            paired_top,
            weights,
            params,
        }
    }

    pub fn n_attr(&self) -> usize {
        self.cuts.len()
    }

    pub fn hierarchies(&self) -> HierarchySet {
        let top = f64::from(VALUE_MAX);
        let hs = self
            .cuts
            .iter()
            .zip(&self.weights)
            .enumerate()
            .map(|(a, (cuts, &w))| {
                let paired = self.paired_top[a];
                let mut edges = vec![0.0];
                edges.extend(cuts);
                edges.push(top);
                let intervals: Vec<Interval> = edges
                    .windows(2)
                    .enumerate()
                    .map(|(i, e)| Interval {
                        lo: e[0],
                        hi: e[1],
                        label: format!("b{i}"),
                    })
                    .collect();
                let top_level = if paired {
                    Level {
                        intervals: intervals
                            .chunks(2)
                            .enumerate()
                            .map(|(i, c)| Interval {
                                lo: c[0].lo,
                                hi: c[c.len() - 1].hi,
                                label: format!("p{i}"),
                            })
                            .collect(),
                        parents: vec![],
                    }
                } else {
                    Level {
                        intervals: vec![Interval {
                            lo: 0.0,
                            hi: top,
                            label: "ANY".into(),
                        }],
                        parents: vec![],
                    }
                };
                let bins = Level {
                    parents: (0..intervals.len() as u32).map(|i| if paired { i / 2 } else { 0 }).collect(),
                    intervals,
                };
                let schema = AttributeSchema {
                    name: format!("a{a}"),
                    index: a,
                    weight: w,
                    max_level: 2,
                };
                ConceptHierarchy::new(schema, vec![bins, top_level]).expect("valid hierarchy")
            })
            .collect();
        HierarchySet::new(hs, RangePolicy::Strict).expect("valid set")
    }

    /// Key of raw value `v` of attribute `a` at `level`.
    fn key(&self, a: usize, level: usize, v: f64) -> u64 {
        match level {
            0 => v.to_bits(),
            1 => self.cuts[a].iter().filter(|&&c| c <= v).count() as u64,
            _ if self.paired_top[a] => self.key(a, 1, v) / 2,
            _ => 0,
        }
    }
}

/// Comparable view of one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatCluster {
    /// `None` marks a removed attribute.
    pub descriptor: Vec<Option<usize>>,
    pub signature: Vec<u64>,
    pub instances: u64,
    pub outliers: u64,
    pub min_size: usize,
    pub weight: f64,
}

fn sort_flat(v: &mut [FlatCluster]) {
    v.sort_by(|a, b| {
        (&a.descriptor, &a.signature, a.min_size).cmp(&(&b.descriptor, &b.signature, b.min_size))
    });
}

pub fn flatten(kb: &KnowledgeBase) -> Vec<FlatCluster> {
    let mut out: Vec<FlatCluster> = kb
        .groups
        .iter()
        .flat_map(|g| {
            let descriptor: Vec<Option<usize>> = g
                .descriptor
                .iter()
                .map(|l| match l {
                    AttrLevel::Level(k) => Some(*k),
                    AttrLevel::Removed => None,
                })
                .collect();
            g.clusters.iter().map(move |c| FlatCluster {
                descriptor: descriptor.clone(),
                signature: c
                    .signature
                    .iter()
                    .map(|l| match *l {
                        Label::Raw(x) => x.to_bits(),
                        Label::Node(i) => u64::from(i),
                    })
                    .collect(),
                instances: c.instances,
                outliers: c.outliers,
                min_size: c.min_size,
                weight: c.weight,
            })
        })
        .collect();
    sort_flat(&mut out);
    out
}

#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub clusters: Vec<FlatCluster>,
    pub residual: usize,
    /// Tuples in the relation plus tuples already clustered, at every step.
    pub step_totals: Vec<usize>,
}

fn level_weight(levels: &[usize], removed: &[bool]) -> f64 {
    let active: Vec<usize> = levels.iter().zip(removed).filter(|(_, r)| !**r).map(|(l, _)| *l).collect();
    active.iter().map(|&l| 1.0 / f64::from(1u32 << l)).sum::<f64>() / active.len() as f64
}

type Relation = BTreeMap<Vec<Option<u64>>, Vec<usize>>;

/// The relation's state as it was when formed.
struct Formed<'a> {
    levels: &'a [usize],
    removed: &'a [bool],
    lw: f64,
    prev: f64,
    outl: usize,
    m: usize,
}

impl Formed<'_> {
    fn extract(&self, rel: &Relation, pending: &mut Vec<usize>, out: &mut Vec<FlatCluster>) -> usize {
        let mut taken = 0;
        for (sig, rows) in rel {
            if rows.len() >= self.m {
                out.push(FlatCluster {
                    descriptor: self
                        .levels
                        .iter()
                        .zip(self.removed)
                        .map(|(&l, &r)| (!r).then_some(l))
                        .collect(),
                    signature: sig.iter().flatten().copied().collect(),
                    instances: rows.len() as u64,
                    outliers: self.outl as u64,
                    min_size: self.m,
                    weight: self.lw + rows.len() as f64 / self.outl as f64 * f64::max(self.prev - self.lw, 0.0),
                });
                taken += rows.len();
                pending.retain(|r| !rows.contains(r));
            }
        }
        taken
    }
}

pub fn oracle(case: &SmallCase) -> OracleOutcome {
    let p = case.params;
    let n_attr = case.n_attr();
    let mut pending: Vec<usize> = (0..case.rows.len()).collect();
    let mut clusters = Vec::new();
    let mut clustered = 0usize;
    let mut step_totals = Vec::new();

    let group = |pending: &[usize], levels: &[usize], removed: &[bool]| {
        let mut g = Relation::new();
        for &r in pending {
            let sig = (0..n_attr)
                .map(|a| (!removed[a]).then(|| case.key(a, levels[a], case.rows[r][a])))
                .collect();
            g.entry(sig).or_default().push(r);
        }
        g
    };
    let distinct = |g: &Relation, a: usize| {
        g.keys().map(|k| k[a]).collect::<BTreeSet<_>>().len()
    };

    for m in (2..=p.min_cluster_size).rev() {
        if pending.is_empty() {
            break;
        }
        let mut levels = vec![0usize; n_attr];
        let mut removed = vec![false; n_attr];
        let mut lw = 1.0;
        let mut prev = 1.0;
        loop {
            let rel = group(&pending, &levels, &removed);
            let outl = pending.len();
            let compliant = rel.len() <= p.tuple_threshold
                && (0..n_attr).all(|a| removed[a] || distinct(&rel, a) <= p.attr_threshold);
            let state = Formed {
                levels: &levels,
                removed: &removed,
                lw,
                prev,
                outl,
                m,
            };
            if compliant {
                clustered += state.extract(&rel, &mut pending, &mut clusters);
            }
            step_totals.push(pending.len() + clustered);
            if pending.is_empty() {
                break;
            }
            let rel = group(&pending, &levels, &removed);
            let n_active = removed.iter().filter(|r| !**r).count();
            let mut best: Option<(usize, usize)> = None;
            for a in 0..n_attr {
                if removed[a] {
                    continue;
                }
                let d = distinct(&rel, a);
                let can_ascend = levels[a] < 2;
                let can_remove = levels[a] == 2 && n_active > 1 && d > p.attr_threshold;
                if d < 2 || !(can_ascend || can_remove) {
                    continue;
                }
                best = match best {
                    None => Some((a, d)),
                    Some((b, db)) if d > db || (d == db && case.weights[a] > case.weights[b]) => Some((a, d)),
                    keep => keep,
                };
            }
            match best {
                Some((a, _)) => {
                    if levels[a] < 2 {
                        levels[a] += 1;
                    } else {
                        removed[a] = true;
                    }
                    prev = lw;
                    lw = level_weight(&levels, &removed);
                }
                None => {
                    if !compliant {
                        clustered += state.extract(&rel, &mut pending, &mut clusters);
                        step_totals.push(pending.len() + clustered);
                    }
                    break;
                }
            }
        }
    }
    sort_flat(&mut clusters);
    OracleOutcome {
        clusters,
        residual: pending.len(),
        step_totals,
    }
}

/// Empty on agreement, otherwise a description of the first difference.
pub fn compare(case: &SmallCase) -> Result<(), String> {
    let hs = case.hierarchies();
    let out = aoipdm::aoi::run_aoi(&case.rows, &hs, case.params).map_err(|e| format!("run_aoi failed: {e}"))?;
    let want = oracle(case);
    let got = flatten(&out.kb);
    if got.len() != want.clusters.len() {
        return Err(format!("{} clusters, oracle has {}", got.len(), want.clusters.len()));
    }
    for (g, w) in got.iter().zip(&want.clusters) {
        let same = g.descriptor == w.descriptor
            && g.signature == w.signature
            && g.instances == w.instances
            && g.outliers == w.outliers
            && g.min_size == w.min_size
            && (g.weight - w.weight).abs() <= 1e-12;
        if !same {
            return Err(format!("cluster {g:?} != oracle {w:?}"));
        }
    }
    let residual = out.residual.as_ref().map_or(0, |r| r.members.len());
    if residual != want.residual {
        return Err(format!("residual {residual}, oracle {}", want.residual));
    }
    let n = case.rows.len() as u64;
    if let Some(s) = out.trace.iter().find(|s| s.relation_votes + s.clustered_votes != n) {
        return Err(format!("votes not conserved at step {s:?}"));
    }
    if out.kb.total_instances() + residual as u64 != n {
        return Err("clusters plus residual do not cover the input".into());
    }
    if want.step_totals.iter().any(|&t| t != case.rows.len()) {
        return Err("oracle lost votes".into());
    }
    Ok(())
}
