//! Run configuration, trace assembly and trace verification: the plumbing
//! between the protocols and the command line.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::code::{encoded_me_state, logical_me_state, CodeDocument, IsometryCode};
use crate::error::{Error, Result};
use crate::io::{parse_inputs, TreeDocument};
use crate::network::{bfs_labeling, Labeling, TreeNetwork, DEFAULT_ENUMERATION_BOUND};
use crate::ki::{ki_decompose, BlockSummary, KiRoles};
use crate::merge::{choose_strategy, required_k, MergeMode};
use crate::par::ExecPolicy;
use crate::protocols::{
    concentrate_target, optimize_labeling, BranchPolicy, ConcentrateLeaf, ConcentrateMode, ConcentrateOptions,
    CostReport, SpreadOptions, SpreadRun,
};
use crate::tensor::{self, PureState, Register};
use crate::trace::{replay, state_hash, Event, ProtocolTrace, Task, Tolerances, TRACE_FORMAT};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelingChoice {
    /// The tree document must carry one.
    Given,
    /// The document's labeling if present, otherwise breadth first.
    Auto,
    /// Cheapest concentrating labeling over all ascending ones.
    Search,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub tolerances: Tolerances,
    pub branches: BranchPolicy,
    pub mode: ConcentrateMode,
    pub seed: u64,
    pub labeling: LabelingChoice,
    /// Random inputs for the relative-state check.
    pub rho_samples: usize,
    #[serde(skip)]
    pub policy: ExecPolicy,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            tolerances: Tolerances::default(),
            branches: BranchPolicy::Exhaustive,
            mode: ConcentrateMode::Tight,
            seed: 0,
            labeling: LabelingChoice::Auto,
            rho_samples: 20,
            policy: ExecPolicy::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("tol-rank", self.tolerances.rank), ("tol-verify", self.tolerances.verify)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Schema { field: field.into(), message: format!("tolerance must be positive, got {v}") });
            }
        }
        if let BranchPolicy::Sample { n: 0, .. } = self.branches {
            return Err(Error::Schema { field: "branches".into(), message: "sample count must be positive".into() });
        }
        Ok(())
    }

    pub fn concentrate_options(&self) -> ConcentrateOptions {
        ConcentrateOptions {
            mode: self.mode,
            branches: self.branches.clone(),
            rank_tol: self.tolerances.rank,
            verify_tol: self.tolerances.verify,
            seed: self.seed,
            policy: self.policy,
            ..ConcentrateOptions::default()
        }
    }

    pub fn spread_options(&self) -> SpreadOptions {
        SpreadOptions {
            rank_tol: self.tolerances.rank,
            verify_tol: self.tolerances.verify,
            branches: self.branches.clone(),
            policy: self.policy,
            overrides: Vec::new(),
        }
    }
}

/// Pick the labeling the configuration asks for.
pub fn resolve_labeling(
    code: &IsometryCode,
    tree: &TreeNetwork,
    from_document: Option<Labeling>,
    cfg: &RunConfig,
) -> Result<Labeling> {
    match cfg.labeling {
        LabelingChoice::Given => from_document.ok_or_else(|| Error::Schema {
            field: "labeling".into(),
            message: "`--labeling given` needs a labeling in the tree document".into(),
        }),
        LabelingChoice::Auto => Ok(from_document.unwrap_or_else(|| bfs_labeling(tree))),
        LabelingChoice::Search => {
            Ok(optimize_labeling(code, tree, &cfg.concentrate_options(), DEFAULT_ENUMERATION_BOUND)?.0)
        }
    }
}

/// Koashi-Imoto structure of one merging step, as reported by the CLI.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KiReport {
    pub roles: KiRoles,
    pub dim_reference: usize,
    pub dim_a: usize,
    pub dim_b: usize,
    pub blocks: Vec<BlockSummary>,
    /// Tight merging cost `M`.
    pub k: usize,
    /// `rank ρ^A`, what compress-and-teleport needs.
    pub k_fallback: usize,
    pub strategy: &'static str,
    pub reconstruction_error: f64,
}

/// Decompose `psi`; the generic algebra elements are drawn from `cfg.seed`.
pub fn ki_report(psi: &PureState, roles: &KiRoles, cfg: &RunConfig) -> Result<KiReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dec = ki_decompose(psi, roles, cfg.tolerances.rank, &mut rng)?;
    let (dim_reference, dim_a, dim_b) = dec.dims();
    Ok(KiReport {
        roles: roles.clone(),
        dim_reference,
        dim_a,
        dim_b,
        blocks: dec.summary(),
        k: required_k(&dec, MergeMode::Tight),
        k_fallback: required_k(&dec, MergeMode::Fallback),
        strategy: choose_strategy(&dec, MergeMode::Tight).tag(),
        reconstruction_error: dec.reconstruction_error,
    })
}

/// The recorded branch of a spreading run.
pub fn spread_trace(code: &CodeDocument, tree: &TreeDocument, run: &SpreadRun, cfg: &RunConfig) -> ProtocolTrace {
    ProtocolTrace {
        format: TRACE_FORMAT.into(),
        task: Task::Spread,
        code: code.clone(),
        tree: tree.clone(),
        labeling: run.plan.labeling.names(&run.plan.tree),
        mode: None,
        seed: cfg.seed,
        tolerances: cfg.tolerances.clone(),
        outcomes: run.outcomes.clone(),
        probability: run.probability,
        report: run.report.clone(),
        events: run.events.clone(),
        final_hash: state_hash(&run.final_state),
        deviation: run.deviation,
    }
}

/// One concentrating branch.
pub fn concentrate_trace(
    code: &CodeDocument,
    tree: &TreeDocument,
    report: &CostReport,
    leaf: &ConcentrateLeaf,
    cfg: &RunConfig,
) -> ProtocolTrace {
    ProtocolTrace {
        format: TRACE_FORMAT.into(),
        task: Task::Concentrate,
        code: code.clone(),
        tree: tree.clone(),
        labeling: report.labeling.clone(),
        mode: Some(cfg.mode.tag().into()),
        seed: cfg.seed,
        tolerances: cfg.tolerances.clone(),
        outcomes: leaf.outcomes.clone(),
        probability: leaf.probability,
        report: report.clone(),
        events: leaf.events.clone(),
        final_hash: state_hash(&leaf.final_state),
        deviation: leaf.deviation,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceVerdict {
    pub replayed_hash: String,
    pub hash_matches: bool,
    pub probability: f64,
    /// Largest gap between recorded and replayed probabilities.
    pub probability_mismatch: f64,
    pub deviation: f64,
    /// Resource events agree with the stored cost report.
    pub resources_match: bool,
    /// Measuring parties appear in the order the labeling prescribes.
    pub order_ok: bool,
    pub passed: bool,
}

/// Starting state of a task: `Φ⁺_D` at the root or `Φ̃⁺_D` spread out.
pub fn initial_state(task: Task, code: &IsometryCode, root: &str) -> PureState {
    match task {
        Task::Spread => logical_me_state(code, root),
        Task::Concentrate => encoded_me_state(code).squeezed(),
    }
}

fn target_state(trace: &ProtocolTrace, code: &IsometryCode, root: &str) -> Result<PureState> {
    match trace.task {
        Task::Spread => Ok(encoded_me_state(code).squeezed()),
        Task::Concentrate => {
            let outputs: Vec<Register> = trace
                .events
                .iter()
                .rev()
                .find_map(|e| match e {
                    Event::RootCorrection { outputs, .. } => Some(outputs.clone()),
                    _ => None,
                })
                .ok_or_else(|| Error::Schema { field: "events".into(), message: "no root correction".into() })?;
            concentrate_target(code, root, &outputs)
        }
    }
}

fn resources_match(trace: &ProtocolTrace) -> bool {
    let used = trace.resources();
    let each = used.iter().all(|(e, k)| trace.report.get(e) == Some(*k));
    let every = trace.report.entries.iter().filter(|e| e.m > 1).all(|e| used.iter().any(|(u, _)| *u == e.edge));
    let total = (trace.total_log2() - trace.report.total).abs() <= 1e-9;
    each && every && total
}

fn order_ok(trace: &ProtocolTrace) -> bool {
    let rank = |p: &str| trace.labeling.iter().position(|n| n == p);
    let ranks: Vec<Option<usize>> = trace
        .events
        .iter()
        .filter_map(|e| match e {
            Event::Measurement { party, .. } => Some(rank(party)),
            _ => None,
        })
        .collect();
    if ranks.iter().any(Option::is_none) {
        return false;
    }
    let r: Vec<usize> = ranks.into_iter().flatten().collect();
    match trace.task {
        Task::Spread => r.windows(2).all(|w| w[0] <= w[1]),
        Task::Concentrate => r.windows(2).all(|w| w[0] > w[1]),
    }
}

/// Re-execute a stored branch and compare with what was recorded.
pub fn verify_trace(trace: &ProtocolTrace) -> Result<TraceVerdict> {
    if trace.format != TRACE_FORMAT {
        return Err(Error::Schema { field: "format".into(), message: format!("expected `{TRACE_FORMAT}`, got `{}`", trace.format) });
    }
    let (code, tree, _) = parse_inputs(&trace.code, &trace.tree)?;
    Labeling::from_names(&tree, &trace.labeling)?;
    let root = tree.name(tree.root()).to_string();
    let rep = replay(&initial_state(trace.task, &code, &root), &trace.events)?;
    let replayed_hash = state_hash(&rep.state);
    let deviation = 1.0 - tensor::phase_free_overlap(&target_state(trace, &code, &root)?, &rep.state)?;
    let hash_matches = replayed_hash == trace.final_hash;
    let mismatch = rep.probability_mismatch.max((rep.probability - trace.probability).abs());
    let resources_match = resources_match(trace);
    let order_ok = order_ok(trace);
    let passed =
        hash_matches && mismatch <= 1e-9 && deviation <= trace.tolerances.verify && resources_match && order_ok;
    Ok(TraceVerdict {
        replayed_hash,
        hash_matches,
        probability: rep.probability,
        probability_mismatch: mismatch,
        deviation,
        resources_match,
        order_ok,
        passed,
    })
}
