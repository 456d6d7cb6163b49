// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-stage importance grids assembled into circuits, thresholded and
//! compared across tasks.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::HeadRef;
use crate::patching::ImportanceMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Mover,
    NegativeMover,
    Inhibition,
    ContentGatherer,
    Duplicate,
    Induction,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::Mover => "mover",
            Role::NegativeMover => "negative-mover",
            Role::Inhibition => "inhibition",
            Role::ContentGatherer => "content-gatherer",
            Role::Duplicate => "duplicate",
            Role::Induction => "induction",
        })
    }
}

/// Ordered path-patching stages of one task, plus role labels for heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitGraph {
    pub task: String,
    stages: Vec<ImportanceMatrix>,
    roles: BTreeMap<HeadRef, Role>,
}

impl CircuitGraph {
    pub fn new(task: impl Into<String>, stages: Vec<ImportanceMatrix>) -> Result<Self> {
        let Some(first) = stages.first() else {
            return Err(Error::DimensionMismatch("a circuit needs at least one stage".into()));
        };
        let dim = first.scores.dim();
        let mut labels = BTreeSet::new();
        for s in &stages {
            if s.scores.dim() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "stage `{}` is {:?}, expected {dim:?}",
                    s.stage_label,
                    s.scores.dim()
                )));
            }
            if !labels.insert(s.stage_label.clone()) {
                return Err(Error::DimensionMismatch(format!("duplicate stage `{}`", s.stage_label)));
            }
        }
        Ok(Self { task: task.into(), stages, roles: BTreeMap::new() })
    }

    pub fn stages(&self) -> &[ImportanceMatrix] {
        &self.stages
    }

    pub fn dim(&self) -> (usize, usize) {
        self.stages[0].scores.dim()
    }

    pub fn roles(&self) -> &BTreeMap<HeadRef, Role> {
        &self.roles
    }

    pub fn annotate(&mut self, head: HeadRef, role: Role) -> Result<()> {
        let (layers, heads) = self.dim();
        if head.layer >= layers || head.head >= heads {
            return Err(Error::InvalidComponent(format!("head {head} outside {layers}x{heads} grid")));
        }
        self.roles.insert(head, role);
        Ok(())
    }

    /// Per stage, the `ceil(fraction * n_layers * n_heads)` heads with the
    /// most negative scores (ties by `(layer, head)`), unioned over stages.
    pub fn top_fraction(&self, fraction: f64) -> Result<BTreeSet<HeadRef>> {
        Ok(self.top_fraction_per_stage(fraction)?.into_iter().flatten().collect())
    }

    pub fn top_fraction_per_stage(&self, fraction: f64) -> Result<Vec<BTreeSet<HeadRef>>> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::DimensionMismatch(format!("fraction {fraction} outside (0, 1]")));
        }
        let (layers, heads) = self.dim();
        let k = per_stage_count(fraction, layers * heads);
        Ok(self.stages.iter().map(|s| s.ranked().into_iter().take(k).map(|(h, _)| h).collect()).collect())
    }

    /// Per stage, every head whose patch lowers the logit difference by at
    /// least `min_drop` percent.
    pub fn above_effect(&self, min_drop: f64) -> BTreeSet<HeadRef> {
        self.stages
            .iter()
            .flat_map(|s| s.ranked().into_iter().filter(move |(_, v)| *v <= -min_drop))
            .map(|(h, _)| h)
            .collect()
    }
}

/// `ceil(fraction * total)` without float noise pushing exact products up.
pub fn per_stage_count(fraction: f64, total: usize) -> usize {
    let raw = fraction * total as f64;
    let rounded = raw.round();
    let k = if (raw - rounded).abs() < 1e-9 { rounded } else { raw.ceil() };
    (k as usize).clamp(1, total)
}

pub fn threshold_top_fraction(graph: &CircuitGraph, fraction: f64) -> Result<BTreeSet<HeadRef>> {
    graph.top_fraction(fraction)
}

/// Scores divided by the stage's largest magnitude. An all-zero stage is
/// returned unchanged with the flag set.
pub fn normalize_per_stage(matrix: &ImportanceMatrix) -> (ImportanceMatrix, bool) {
    let max = matrix.scores.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return (matrix.clone(), true);
    }
    let mut out = matrix.clone();
    out.scores.mapv_inplace(|v| v / max);
    (out, false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub threshold_fraction: f64,
    pub set_a: BTreeSet<HeadRef>,
    pub set_b: BTreeSet<HeadRef>,
    pub shared: BTreeSet<HeadRef>,
    /// `|shared| / |set_a ∪ set_b|`.
    pub overlap: f64,
    /// Per stage, normalized A minus normalized B.
    pub stage_differences: Vec<ImportanceMatrix>,
    /// Stage labels (A's) whose grid was all zero in either task.
    pub zero_stages: Vec<String>,
}

impl OverlapReport {
    pub fn union_size(&self) -> usize {
        self.set_a.union(&self.set_b).count()
    }
}

/// Jaccard overlap of two node sets.
pub fn set_overlap(a: &BTreeSet<HeadRef>, b: &BTreeSet<HeadRef>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Compares stage `k` of `a` with stage `k` of `b`.
pub fn overlap(a: &CircuitGraph, b: &CircuitGraph, fraction: f64) -> Result<OverlapReport> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    if a.stages.len() != b.stages.len() {
        return Err(Error::DimensionMismatch(format!("{} stages vs {} stages", a.stages.len(), b.stages.len())));
    }
    let set_a = a.top_fraction(fraction)?;
    let set_b = b.top_fraction(fraction)?;
    let shared: BTreeSet<HeadRef> = set_a.intersection(&set_b).copied().collect();
    let mut stage_differences = Vec::new();
    let mut zero_stages = Vec::new();
    for (sa, sb) in a.stages.iter().zip(&b.stages) {
        let (na, za) = normalize_per_stage(sa);
        let (nb, zb) = normalize_per_stage(sb);
        if za || zb {
            zero_stages.push(sa.stage_label.clone());
        }
        let mut diff = na.difference(&nb)?;
        diff.stage_label = format!("{} ({} minus {})", sa.stage_label, a.task, b.task);
        stage_differences.push(diff);
    }
    Ok(OverlapReport {
        threshold_fraction: fraction,
        overlap: set_overlap(&set_a, &set_b),
        set_a,
        set_b,
        shared,
        stage_differences,
        zero_stages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn grid(values: Array2<f64>, label: &str) -> ImportanceMatrix {
        ImportanceMatrix::new(values, label)
    }

    #[test]
    fn count_is_ceiling_of_fraction() {
        assert_eq!(per_stage_count(0.02, 384), 8);
        assert_eq!(per_stage_count(1.0, 384), 384);
        assert_eq!(per_stage_count(0.25, 4), 1);
        assert_eq!(per_stage_count(0.3, 10), 3);
        assert_eq!(per_stage_count(0.001, 4), 1);
    }

    #[test]
    fn full_fraction_selects_every_head() {
        let g = CircuitGraph::new("t", vec![grid(array![[1.0, -2.0], [0.0, 3.0]], "s")]).unwrap();
        assert_eq!(g.top_fraction(1.0).unwrap().len(), 4);
        assert!(g.top_fraction(0.0).is_err());
        assert!(g.top_fraction(1.5).is_err());
    }

    #[test]
    fn ties_break_by_layer_then_head() {
        let g = CircuitGraph::new("t", vec![grid(array![[-1.0, -1.0], [-1.0, 0.0]], "s")]).unwrap();
        let top: Vec<HeadRef> = g.top_fraction(0.5).unwrap().into_iter().collect();
        assert_eq!(top, vec![HeadRef::new(0, 0), HeadRef::new(0, 1)]);
    }

    #[test]
    fn overlap_of_self_and_disjoint() {
        let a = CircuitGraph::new("a", vec![grid(array![[-5.0, 0.0], [0.0, 0.0]], "s")]).unwrap();
        let b = CircuitGraph::new("b", vec![grid(array![[0.0, 0.0], [0.0, -5.0]], "s")]).unwrap();
        assert_eq!(overlap(&a, &a, 0.25).unwrap().overlap, 1.0);
        let r = overlap(&a, &b, 0.25).unwrap();
        assert_eq!(r.overlap, 0.0);
        assert_eq!(r.union_size(), 2);
        let c = CircuitGraph::new("c", vec![grid(Array2::zeros((3, 2)), "s")]).unwrap();
        assert!(overlap(&a, &c, 0.25).is_err());
    }

    #[test]
    fn normalization_maps_extremes_to_unit() {
        let (n, flag) = normalize_per_stage(&grid(array![[-50.0, 25.0]], "s"));
        assert!(!flag);
        assert_eq!(n.scores, array![[-1.0, 0.5]]);
        let zero = grid(Array2::zeros((1, 2)), "s");
        let (n, flag) = normalize_per_stage(&zero);
        assert!(flag);
        assert_eq!(n, zero);
    }

    #[test]
    fn stages_must_agree() {
        assert!(CircuitGraph::new("t", vec![]).is_err());
        let a = grid(Array2::zeros((2, 2)), "s");
        assert!(CircuitGraph::new("t", vec![a.clone(), a.clone()]).is_err());
        let b = grid(Array2::zeros((1, 2)), "u");
        assert!(CircuitGraph::new("t", vec![a, b]).is_err());
    }
}
