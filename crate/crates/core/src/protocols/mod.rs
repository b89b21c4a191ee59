//! Multiparty algorithms: spreading by sequential splitting from the root,
//! concentrating by sequential merging toward it, and the cost reports,
//! comparisons and labeling search built on them.

mod concentrate;
mod spread;

pub use concentrate::*;
pub use spread::*;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::network::{Edge, Labeling, TreeNetwork};
use crate::trace::Task;

/// Whole numbers of ebits serialize as integers, anything else as a float.
pub fn serialize_ebits<S: serde::Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if x.is_finite() && (x - x.round()).abs() < 1e-12 && x.abs() < 1e15 {
        s.serialize_i64(x.round() as i64)
    } else {
        s.serialize_f64(*x)
    }
}

/// Branch probabilities below this are dropped.
pub const BRANCH_CUTOFF: f64 = 1e-12;

/// Which measurement branches a run explores.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchPolicy {
    Exhaustive,
    /// `n` sampled outcome paths; identical paths are merged.
    Sample { n: usize, seed: u64 },
    /// One path: outcome indices for the nontrivial measurements in order.
    Fixed(Vec<usize>),
}

impl BranchPolicy {
    pub fn is_exhaustive(&self) -> bool {
        matches!(self, BranchPolicy::Exhaustive)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeCost {
    pub edge: Edge,
    /// Schmidt rank `M_e` of the resource on this edge.
    pub m: usize,
    #[serde(serialize_with = "serialize_ebits")]
    pub log2_cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub task: Task,
    pub code: String,
    /// Rank order used (empty for labeling-independent reports).
    pub labeling: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<ConcentrateMode>,
    /// In the tree's edge order.
    pub entries: Vec<EdgeCost>,
    #[serde(serialize_with = "serialize_ebits")]
    pub total: f64,
    /// Set when only some branches were explored, so `M_e` may be too small.
    pub lower_estimate: bool,
}

impl CostReport {
    pub fn new(task: Task, code: &str, labeling: Vec<String>, mode: Option<ConcentrateMode>, entries: Vec<(Edge, usize)>) -> Self {
        let entries: Vec<EdgeCost> =
            entries.into_iter().map(|(edge, m)| EdgeCost { edge, m, log2_cost: (m as f64).log2() }).collect();
        let total = entries.iter().map(|e| e.log2_cost).sum();
        CostReport { task, code: code.to_string(), labeling, mode, entries, total, lower_estimate: false }
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.m).collect()
    }

    pub fn log2_costs(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.log2_cost).collect()
    }

    pub fn get(&self, edge: &Edge) -> Option<usize> {
        self.entries.iter().find(|e| &e.edge == edge).map(|e| e.m)
    }
}

fn tree_edges(tree: &TreeNetwork) -> Vec<Edge> {
    tree.edges()
        .iter()
        .map(|&(p, c)| Edge { parent: tree.name(p).to_string(), child: tree.name(c).to_string() })
        .collect()
}

fn check_labeling(tree: &TreeNetwork, labeling: &Labeling) -> Result<()> {
    if crate::network::is_ascending(tree, labeling) {
        Ok(())
    } else {
        Err(crate::Error::NotAscending(labeling.names(tree).join(",")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EdgeComparison {
    pub edge: Edge,
    pub spread: usize,
    pub concentrate: usize,
    pub strict: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub labeling: Vec<String>,
    pub edges: Vec<EdgeComparison>,
    /// Edges where concentrating needs more than spreading (never expected).
    pub violations: Vec<Edge>,
    #[serde(serialize_with = "serialize_ebits")]
    pub spread_total: f64,
    #[serde(serialize_with = "serialize_ebits")]
    pub concentrate_total: f64,
}

/// Per-edge spreading and concentrating costs side by side.
pub fn compare_costs(
    code: &crate::code::IsometryCode,
    tree: &TreeNetwork,
    labeling: &Labeling,
    opts: &ConcentrateOptions,
) -> Result<Comparison> {
    let s = spreading_cost(code, tree, opts.rank_tol)?;
    let c = concentrating_cost(code, tree, labeling, opts)?;
    let edges: Vec<EdgeComparison> = s
        .entries
        .iter()
        .zip(&c.entries)
        .map(|(a, b)| EdgeComparison { edge: a.edge.clone(), spread: a.m, concentrate: b.m, strict: b.m < a.m })
        .collect();
    let violations = edges.iter().filter(|e| e.concentrate > e.spread).map(|e| e.edge.clone()).collect();
    Ok(Comparison {
        labeling: labeling.names(tree),
        edges,
        violations,
        spread_total: s.total,
        concentrate_total: c.total,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EdgeSlack {
    pub edge: Edge,
    pub consumed: usize,
    pub bound: usize,
    #[serde(serialize_with = "serialize_ebits")]
    pub slack_ebits: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LowerBoundVerdict {
    pub edges: Vec<EdgeSlack>,
    pub feasible: bool,
    pub optimal: bool,
    #[serde(serialize_with = "serialize_ebits")]
    pub slack_ebits: f64,
    pub verdict: String,
}

/// Compare consumed spreading resources with the Schmidt-rank bound.
pub fn spreading_lower_bound_check(
    code: &crate::code::IsometryCode,
    tree: &TreeNetwork,
    report: &CostReport,
    rank_tol: f64,
) -> Result<LowerBoundVerdict> {
    let bound = spreading_cost(code, tree, rank_tol)?;
    let edges: Vec<EdgeSlack> = bound
        .entries
        .iter()
        .map(|b| {
            let consumed = report.get(&b.edge).unwrap_or(1);
            EdgeSlack {
                edge: b.edge.clone(),
                consumed,
                bound: b.m,
                slack_ebits: (consumed as f64).log2() - b.log2_cost,
            }
        })
        .collect();
    let feasible = edges.iter().all(|e| e.consumed >= e.bound);
    let optimal = edges.iter().all(|e| e.consumed == e.bound);
    let slack: f64 = edges.iter().map(|e| e.slack_ebits).sum();
    let verdict = if !feasible {
        let short: Vec<String> = edges.iter().filter(|e| e.consumed < e.bound).map(|e| e.edge.to_string()).collect();
        format!("infeasible: below the Schmidt rank on {}", short.join(", "))
    } else if optimal {
        "optimal".to_string()
    } else {
        let unit = if (slack - 1.0).abs() < 1e-12 { "ebit" } else { "ebits" };
        format!("feasible, suboptimal by {} {unit}", fmt_ebits(slack))
    };
    Ok(LowerBoundVerdict { edges, feasible, optimal, slack_ebits: slack, verdict })
}

/// Integers without a fractional part, otherwise three decimals.
pub fn fmt_ebits(x: f64) -> String {
    if (x - x.round()).abs() < 1e-12 {
        format!("{}", x.round() as i64)
    } else {
        format!("{x:.3}")
    }
}

/// Labeling with the smallest total concentrating cost; ties go to the
/// lexicographically smallest name sequence.
pub fn optimize_labeling(
    code: &crate::code::IsometryCode,
    tree: &TreeNetwork,
    opts: &ConcentrateOptions,
    bound: usize,
) -> Result<(Labeling, CostReport)> {
    let mut all = crate::network::enumerate_ascending_labelings(tree, bound)?;
    all.sort_by_key(|l| l.names(tree));
    let mut best: Option<(Labeling, CostReport)> = None;
    for l in all {
        let r = concentrating_cost(code, tree, &l, opts)?;
        if best.as_ref().is_none_or(|(_, b)| r.total < b.total - 1e-9) {
            best = Some((l, r));
        }
    }
    Ok(best.expect("a tree has at least one ascending labeling"))
}
