//! Concentrating: parties merge toward the root in reverse labeling order.
//! Each `v_k` measures everything it holds together with its half of the
//! edge resource; the receivers' corrections are deferred and the root fixes
//! the whole branch at the end with one isometry.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_labeling, tree_edges, BranchPolicy, CostReport, BRANCH_CUTOFF};
use crate::code::{encoded_me_state, logical_me_state, IsometryCode, REFERENCE};
use crate::error::{Error, Result};
use crate::ki::{ki_decompose, KiDecomposition, KiRoles};
use crate::linalg::{self, orth_complement, CMat};
use crate::merge::{self, build_merge_protocol_from, MergeMode, MergeOptions, MergeProtocol};
use crate::network::{Edge, Labeling, TreeNetwork};
use crate::par::ExecPolicy;
use crate::split::Transfer;
use crate::tensor::{self, LinearMap, Owner, PureState, Register, Role};
use crate::trace::{apply_event, Event, Task};

const SALT_KI: u64 = 1;
const SALT_MERGE: u64 = 2;
const SALT_SAMPLE: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConcentrateMode {
    Tight,
    Fallback,
    /// Tight, but branches whose synthesis fails teleport instead.
    TightWithFallback,
}

impl ConcentrateMode {
    pub fn tag(self) -> &'static str {
        match self {
            ConcentrateMode::Tight => "tight",
            ConcentrateMode::Fallback => "fallback",
            ConcentrateMode::TightWithFallback => "tight-with-fallback",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConcentrateOptions {
    pub mode: ConcentrateMode,
    pub branches: BranchPolicy,
    pub rank_tol: f64,
    pub verify_tol: f64,
    pub seed: u64,
    pub policy: ExecPolicy,
    pub allow_ancilla: bool,
    /// Keep every intermediate state of every branch.
    pub record_states: bool,
}

impl Default for ConcentrateOptions {
    fn default() -> Self {
        ConcentrateOptions {
            mode: ConcentrateMode::Tight,
            branches: BranchPolicy::Exhaustive,
            rank_tol: 1e-8,
            verify_tol: 1e-9,
            seed: 0,
            policy: ExecPolicy::default(),
            allow_ancilla: true,
            record_states: false,
        }
    }
}

/// What happened when one party merged.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelRecord {
    pub party: String,
    pub parent: String,
    pub edge: Edge,
    /// `M_e`, shared by every branch at this level.
    pub k: usize,
    /// Branches entering the level.
    pub nodes: usize,
    pub strategies: BTreeMap<String, usize>,
    pub fallback_nodes: usize,
    pub max_ancilla: usize,
    /// The party held nothing but one-dimensional systems.
    pub trivial: bool,
    /// Worst Koashi-Imoto reconstruction error over the level's branches.
    pub max_ki_error: f64,
    /// Worst merge verification residual over the level's branches.
    pub max_merge_residual: f64,
}

/// A correction the receiving side would apply for `outcome`.
#[derive(Clone, Debug)]
pub struct CorrectionStep {
    pub party: String,
    pub outcome: usize,
    pub map: LinearMap,
}

/// Corrections in the order they were deferred plus the isometry the root
/// applies instead of all of them.
#[derive(Clone, Debug)]
pub struct DeferredCorrection {
    pub steps: Vec<CorrectionStep>,
    pub root: LinearMap,
}

impl DeferredCorrection {
    /// `U† U_{m_N} ⋯ U_{m_2}` applied to `Φ¹`: the latest correction first,
    /// each rebuilding the state before the corresponding measurement.
    pub fn compose(&self, code: &IsometryCode, root: &str, phi1: &PureState) -> Result<PureState> {
        let mut st = phi1.clone();
        for step in self.steps.iter().rev() {
            let ids: Vec<&str> = step.map.inputs.iter().map(|r| r.id.as_str()).collect();
            st = tensor::apply_map(&st, &step.map, &ids, None)?;
        }
        let phys: Vec<Register> = code.physical_registers().into_iter().filter(|r| r.dim > 1).collect();
        let ids: Vec<&str> = phys.iter().map(|r| r.id.as_str()).collect();
        let decode = LinearMap::new(phys.clone(), vec![code.logical_register(root)], code.matrix.adjoint())?;
        tensor::apply_map(&st, &decode, &ids, None)
    }
}

#[derive(Clone, Debug)]
pub struct ConcentrateLeaf {
    pub outcomes: Vec<usize>,
    pub probability: f64,
    pub events: Vec<Event>,
    pub deferred: DeferredCorrection,
    pub final_state: PureState,
    /// `1 - |<Φ⁺_D ⊗ 0|out>|`.
    pub deviation: f64,
    /// The same for the composed chain of deferred corrections.
    pub chain_deviation: f64,
    /// `Φ^N`, the states after each measurement, then the final state
    /// (only with `record_states`).
    pub history: Vec<PureState>,
}

#[derive(Clone, Debug)]
pub struct ConcentrateRun {
    pub report: CostReport,
    pub levels: Vec<LevelRecord>,
    pub leaves: Vec<ConcentrateLeaf>,
    pub probability_sum: f64,
    pub max_deviation: f64,
    pub passed: bool,
}

#[derive(Clone)]
struct Node {
    outcomes: Vec<usize>,
    probability: f64,
    weight: usize,
    state: PureState,
    events: Vec<Event>,
    deferred: Vec<CorrectionStep>,
    history: Vec<PureState>,
}

fn branch_rng(seed: u64, salt: u64, level: usize, path: &[usize]) -> ChaCha8Rng {
    let mut h = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut mix = |x: u64| {
        h = (h ^ x).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h ^= h >> 31;
    };
    mix(level as u64);
    for &o in path {
        mix(o as u64 + 1);
    }
    mix(path.len() as u64);
    ChaCha8Rng::seed_from_u64(h)
}

/// `M_e` for the edge above every party, in the tree's edge order.
pub fn concentrating_cost(code: &IsometryCode, tree: &TreeNetwork, labeling: &Labeling, opts: &ConcentrateOptions) -> Result<CostReport> {
    Ok(run_concentrating(code, tree, labeling, opts)?.report)
}

pub fn run_concentrating(code: &IsometryCode, tree: &TreeNetwork, labeling: &Labeling, opts: &ConcentrateOptions) -> Result<ConcentrateRun> {
    let root = tree.name(tree.root()).to_string();
    let (nodes, levels) = descend(code, tree, labeling, opts, 0)?;
    let leaves: Vec<Result<ConcentrateLeaf>> = opts.policy.map(&nodes, |n| finish(n, code, &root, opts.record_states));
    let leaves = leaves.into_iter().collect::<Result<Vec<_>>>()?;

    let entries = tree_edges(tree)
        .into_iter()
        .map(|e| {
            let k = levels.iter().find(|l| l.edge == e).map_or(1, |l| l.k);
            (e, k)
        })
        .collect();
    let mut report = CostReport::new(Task::Concentrate, &code.name, labeling.names(tree), Some(opts.mode), entries);
    report.lower_estimate = !opts.branches.is_exhaustive();
    let probability_sum: f64 = leaves.iter().map(|l| l.probability).sum();
    let max_deviation = leaves.iter().map(|l| l.deviation.max(l.chain_deviation)).fold(0.0, f64::max);
    let sum_ok = !opts.branches.is_exhaustive() || (probability_sum - 1.0).abs() <= 1e-9;
    Ok(ConcentrateRun {
        report,
        levels,
        passed: sum_ok && max_deviation <= opts.verify_tol,
        leaves,
        probability_sum,
        max_deviation,
    })
}

/// `Φ^k` just before `party` merges on the branch whose earlier outcomes are
/// `prefix`, with the roles its merge uses.
pub fn state_before(
    code: &IsometryCode,
    tree: &TreeNetwork,
    labeling: &Labeling,
    opts: &ConcentrateOptions,
    party: &str,
    prefix: &[usize],
) -> Result<(PureState, KiRoles)> {
    let v = tree.index(party)?;
    let idx = labeling.rank_of(v);
    if idx == 0 {
        return Err(Error::UnknownEdge(format!("`{party}` is the root and never merges")));
    }
    let opts = ConcentrateOptions { branches: BranchPolicy::Fixed(prefix.to_vec()), ..opts.clone() };
    let (nodes, _) = descend(code, tree, labeling, &opts, idx)?;
    let node = &nodes[0];
    if node.outcomes.len() != prefix.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} outcomes given, {} measurements precede `{party}`",
            prefix.len(),
            node.outcomes.len()
        )));
    }
    let a = node.state.ids_owned_by(&Owner::party(party));
    let b: Vec<String> =
        node.state.ids().into_iter().filter(|id| *id != REFERENCE && !a.iter().any(|x| x == id)).map(String::from).collect();
    let roles = KiRoles::new(&[REFERENCE.to_string()], &a, &b);
    Ok((node.state.clone(), roles))
}

/// Levels `N-1` down to `stop + 1` (all of them for `stop = 0`).
fn descend(
    code: &IsometryCode,
    tree: &TreeNetwork,
    labeling: &Labeling,
    opts: &ConcentrateOptions,
    stop: usize,
) -> Result<(Vec<Node>, Vec<LevelRecord>)> {
    code.check_parties(tree)?;
    check_labeling(tree, labeling)?;
    let start = encoded_me_state(code).squeezed();
    let weight = match opts.branches {
        BranchPolicy::Sample { n, .. } => n.max(1),
        _ => 1,
    };
    let mut nodes = vec![Node {
        outcomes: Vec::new(),
        probability: 1.0,
        weight,
        history: if opts.record_states { vec![start.clone()] } else { Vec::new() },
        state: start,
        events: Vec::new(),
        deferred: Vec::new(),
    }];
    let mut levels = Vec::new();
    let order = labeling.order();
    for idx in (stop + 1..order.len()).rev() {
        let v = order[idx];
        let party = tree.name(v).to_string();
        let parent = tree.name(tree.parent(v).expect("non-root")).to_string();
        let edge = tree.edge(v)?;
        let a: Vec<String> = nodes[0].state.ids_owned_by(&Owner::party(party.clone()));
        if a.is_empty() {
            levels.push(LevelRecord {
                party,
                parent,
                edge,
                k: 1,
                nodes: nodes.len(),
                strategies: BTreeMap::new(),
                fallback_nodes: 0,
                max_ancilla: 1,
                trivial: true,
                max_ki_error: 0.0,
                max_merge_residual: 0.0,
            });
            continue;
        }
        let (protos, record) = merge_level(&nodes, &a, idx, &party, &parent, edge.clone(), opts)?;
        let expanded: Vec<Result<Vec<Node>>> =
            opts.policy.map_range(nodes.len(), |i| expand(&nodes[i], &protos[i], idx, &party, &edge, opts));
        let mut next = Vec::new();
        for e in expanded {
            next.extend(e?);
        }
        if next.is_empty() {
            return Err(Error::ZeroProbabilityBranch(0.0));
        }
        nodes = next;
        levels.push(record);
    }
    Ok((nodes, levels))
}

/// Decompose every branch, fix `M_e` and build one protocol per branch.
fn merge_level(
    nodes: &[Node],
    a: &[String],
    idx: usize,
    party: &str,
    parent: &str,
    edge: Edge,
    opts: &ConcentrateOptions,
) -> Result<(Vec<MergeProtocol>, LevelRecord)> {
    let decs: Vec<Result<KiDecomposition>> = opts.policy.map(nodes, |n| {
        let a: Vec<&str> = a.iter().map(String::as_str).collect();
        let b: Vec<&str> = n.state.ids().into_iter().filter(|id| *id != REFERENCE && !a.contains(id)).collect();
        let roles = KiRoles::new(&[REFERENCE], &a, &b);
        ki_decompose(&n.state, &roles, opts.rank_tol, &mut branch_rng(opts.seed, SALT_KI, idx, &n.outcomes))
    });
    let decs = decs.into_iter().collect::<Result<Vec<_>>>()?;
    let mut fallback = vec![opts.mode == ConcentrateMode::Fallback; nodes.len()];
    let mode_of = |fb: bool| if fb { MergeMode::Fallback } else { MergeMode::Tight };
    let mut k = decs.iter().zip(&fallback).map(|(d, &fb)| merge::required_k(d, mode_of(fb))).max().unwrap_or(1);
    let transfer = Transfer::new(party, parent, &format!("{party}>{parent}"));
    let protos = loop {
        let built: Vec<Result<MergeProtocol>> = opts.policy.map_range(nodes.len(), |i| {
            let mo = MergeOptions {
                mode: mode_of(fallback[i]),
                rank_tol: opts.rank_tol,
                verify_tol: opts.verify_tol,
                k: Some(k),
                allow_ancilla: opts.allow_ancilla,
                policy: opts.policy,
                ..MergeOptions::default()
            };
            let mut rng = branch_rng(opts.seed, SALT_MERGE, idx, &nodes[i].outcomes);
            build_merge_protocol_from(&nodes[i].state, &decs[i], &transfer, &mo, &mut rng)
        });
        if opts.mode == ConcentrateMode::TightWithFallback {
            let newly: Vec<usize> = (0..nodes.len())
                .filter(|&i| !fallback[i] && matches!(built[i], Err(Error::SynthesisFailed(_))))
                .collect();
            if !newly.is_empty() {
                for i in newly {
                    fallback[i] = true;
                    k = k.max(merge::required_k(&decs[i], MergeMode::Fallback));
                }
                continue;
            }
        }
        break built.into_iter().collect::<Result<Vec<_>>>()?;
    };
    let mut strategies = BTreeMap::new();
    for p in &protos {
        *strategies.entry(p.strategy.tag().to_string()).or_insert(0) += 1;
    }
    let record = LevelRecord {
        party: party.to_string(),
        parent: parent.to_string(),
        edge,
        k,
        nodes: nodes.len(),
        strategies,
        fallback_nodes: fallback.iter().filter(|&&f| f).count(),
        max_ancilla: protos.iter().map(|p| p.ancilla_dim).max().unwrap_or(1),
        trivial: false,
        max_ki_error: decs.iter().map(|d| d.reconstruction_error).fold(0.0, f64::max),
        max_merge_residual: protos.iter().map(|p| p.verification.worst_residual()).fold(0.0, f64::max),
    };
    Ok((protos, record))
}

/// Children of `node` for the outcomes the branch policy keeps.
fn expand(node: &Node, proto: &MergeProtocol, idx: usize, party: &str, edge: &Edge, opts: &ConcentrateOptions) -> Result<Vec<Node>> {
    let prepared = proto.prepare(&node.state)?;
    let n = proto.outcomes();
    let picks: Vec<(usize, usize)> = match &opts.branches {
        BranchPolicy::Exhaustive => (0..n).filter(|&m| proto.probabilities[m] >= BRANCH_CUTOFF).map(|m| (m, 1)).collect(),
        BranchPolicy::Fixed(path) => {
            let step = node.outcomes.len();
            let m = *path
                .get(step)
                .ok_or_else(|| Error::ShapeMismatch(format!("outcome path {path:?} has no entry for measurement {step}")))?;
            if m >= n || proto.probabilities[m] < BRANCH_CUTOFF {
                return Err(Error::ZeroProbabilityBranch(proto.probabilities.get(m).copied().unwrap_or(0.0)));
            }
            vec![(m, 1)]
        }
        BranchPolicy::Sample { .. } => {
            let mut rng = branch_rng(opts.seed, SALT_SAMPLE, idx, &node.outcomes);
            let mut counts = BTreeMap::new();
            for _ in 0..node.weight {
                *counts.entry(merge::sample_index(&proto.probabilities, &mut rng)).or_insert(0) += 1;
            }
            counts.into_iter().collect()
        }
    };
    let mut registers = proto.a_registers.clone();
    if let Some((a0, _)) = &proto.resource {
        registers.push(a0.clone());
    }
    let mut out = Vec::with_capacity(picks.len());
    for (m, weight) in picks {
        let measured = proto.measure(&prepared, m)?;
        let p = measured.norm_sqr();
        if p < BRANCH_CUTOFF {
            continue;
        }
        let state = measured.normalized();
        let mut events = node.events.clone();
        events.push(Event::ResourceConsumed { edge: edge.clone(), k: proto.k, halves: proto.resource.clone() });
        events.push(Event::Measurement {
            party: party.to_string(),
            registers: registers.clone(),
            basis: proto.povm.clone(),
            outcome: m,
            probability: p,
        });
        events.push(Event::Broadcast { party: party.to_string(), outcome: m });
        let mut deferred = node.deferred.clone();
        if let Some(u) = &proto.corrections[m] {
            deferred.push(CorrectionStep {
                party: edge.parent.clone(),
                outcome: m,
                map: LinearMap::new(proto.correction_inputs.clone(), proto.correction_outputs.clone(), u.clone())?,
            });
        }
        let mut history = node.history.clone();
        if opts.record_states {
            history.push(state.clone());
        }
        let mut outcomes = node.outcomes.clone();
        outcomes.push(m);
        out.push(Node { outcomes, probability: node.probability * p, weight, state, events, deferred, history });
    }
    Ok(out)
}

/// Isometry taking the root's registers to `H ⊗ J` with `W Φ¹ = Φ⁺_D ⊗ |0>`:
/// rows `(h, 0)` hold the Procrustes solution, the complement of its row
/// space fills rows `(h, j ≥ 1)`.
pub fn root_isometry(m: &CMat) -> Result<(CMat, usize)> {
    let (d, n) = m.shape();
    if n < d {
        return Err(Error::NumericalDegeneracy(format!("root holds dimension {n} < D = {d}")));
    }
    let svd = linalg::svd(&m.adjoint());
    let wt = svd.u * svd.v_t;
    let w = wt.transpose();
    let dj = n.div_ceil(d);
    let mut out = CMat::zeros(d * dj, n);
    for h in 0..d {
        out.row_mut(h * dj).copy_from(&w.row(h));
    }
    if n > d {
        let comp = orth_complement(&w.adjoint(), n);
        let slots = (0..d).flat_map(|h| (1..dj).map(move |j| h * dj + j));
        for (i, s) in slots.take(n - d).enumerate() {
            out.row_mut(s).copy_from(&comp.column(i).adjoint());
        }
    }
    Ok((out, dj))
}

/// `|Φ⁺_D>` between `R` and the root's `H`, times `|0>` on any work register.
pub fn concentrate_target(code: &IsometryCode, root: &str, outputs: &[Register]) -> Result<PureState> {
    let mut t = logical_me_state(code, root);
    for r in outputs.iter().filter(|r| r.role == Role::Work) {
        t = tensor::tensor_product(&t, &PureState::basis(vec![r.clone()], &[0])?)?;
    }
    Ok(t)
}

fn finish(node: &Node, code: &IsometryCode, root: &str, record: bool) -> Result<ConcentrateLeaf> {
    let st = &node.state;
    let inputs: Vec<Register> = st.registers().iter().filter(|r| r.id != REFERENCE).cloned().collect();
    if let Some(r) = inputs.iter().find(|r| r.owner != Owner::party(root)) {
        return Err(Error::NumericalDegeneracy(format!("register `{}` still outside the root", r.id)));
    }
    let (matrix, dj) = root_isometry(&st.bipartite_matrix(&[REFERENCE])?)?;
    let mut outputs = vec![code.logical_register(root)];
    if dj > 1 {
        outputs.push(Register::new("J", dj, Owner::party(root), Role::Work));
    }
    let ev = Event::RootCorrection { party: root.to_string(), inputs: inputs.clone(), outputs: outputs.clone(), matrix: matrix.clone() };
    let (final_state, _) = apply_event(st, &ev)?;
    let target = concentrate_target(code, root, &outputs)?;
    let deviation = 1.0 - tensor::phase_free_overlap(&target, &final_state)?;
    let mut events = node.events.clone();
    events.push(ev);
    let mut history = node.history.clone();
    if record {
        history.push(final_state.clone());
    }
    let deferred = DeferredCorrection { steps: node.deferred.clone(), root: LinearMap::new(inputs, outputs, matrix)? };
    let chained = deferred.compose(code, root, st)?;
    let chain_deviation = 1.0 - tensor::phase_free_overlap(&logical_me_state(code, root), &chained)?;
    Ok(ConcentrateLeaf {
        outcomes: node.outcomes.clone(),
        probability: node.probability,
        events,
        deferred,
        final_state,
        deviation,
        chain_deviation,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::builtin;
    use crate::io::{parse_tree, TreeDocument};
    use crate::network::bfs_labeling;

    fn setup(code: &str, tree: TreeDocument) -> (IsometryCode, TreeNetwork) {
        let (t, _) = parse_tree(&tree).unwrap();
        let c = builtin(code, None, Some(t.names())).unwrap();
        (c, t)
    }

    #[test]
    fn five_qubit_needs_no_entanglement() {
        let (c, t) = setup("five_qubit", TreeDocument::line(5));
        let run = run_concentrating(&c, &t, &bfs_labeling(&t), &ConcentrateOptions::default()).unwrap();
        assert_eq!(run.report.ranks(), vec![1, 1, 1, 1]);
        assert_eq!(run.leaves.len(), 16);
        assert!(run.passed, "max deviation {}", run.max_deviation);
        assert!((run.probability_sum - 1.0).abs() < 1e-9);
    }

    /// Amplitudes over `R` then the listed parties, first most significant.
    fn golden(st: &PureState, parties: &[&str], amps: &[(usize, f64)]) -> f64 {
        let mut ids = vec![REFERENCE];
        ids.extend_from_slice(parties);
        let g = st.grouped(&ids).unwrap();
        let mut v = vec![crate::linalg::c(0.0, 0.0); g.amplitudes().len()];
        for &(i, a) in amps {
            v[i] = crate::linalg::c(a, 0.0);
        }
        let t = PureState::new(g.registers().to_vec(), v).unwrap();
        tensor::phase_free_overlap(&t, &g).unwrap()
    }

    #[test]
    fn five_qubit_intermediate_states() {
        let (c, t) = setup("five_qubit", TreeDocument::line(5));
        let opts = ConcentrateOptions {
            branches: BranchPolicy::Fixed(vec![0, 0, 0, 0]),
            record_states: true,
            ..Default::default()
        };
        let run = run_concentrating(&c, &t, &bfs_labeling(&t), &opts).unwrap();
        let leaf = &run.leaves[0];
        // after v5 and v4 both see 0
        let q = 1.0 / 8f64.sqrt();
        let phi3 = [
            (0b0000, q), (0b0110, q), (0b0011, q), (0b0101, -q),
            (0b1111, q), (0b1100, -q), (0b1010, -q), (0b1001, -q),
        ];
        assert!(1.0 - golden(&leaf.history[2], &["v1", "v2", "v3"], &phi3) < 1e-9);
        let phi2 = [(0b000, 0.5), (0b011, 0.5), (0b101, -0.5), (0b110, -0.5)];
        assert!(1.0 - golden(&leaf.history[3], &["v1", "v2"], &phi2) < 1e-9);
        let h = 0.5f64.sqrt();
        assert!(1.0 - golden(&leaf.history[4], &["v1"], &[(0b00, h), (0b11, -h)]) < 1e-9);
        assert!(leaf.deviation < 1e-9);
    }

    #[test]
    fn block_structures_before_v2() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (c, t) = setup("five_qubit", TreeDocument::line(5));
        let l = bfs_labeling(&t);
        let (st, roles) = state_before(&c, &t, &l, &ConcentrateOptions::default(), "v2", &[0, 0, 0]).unwrap();
        let dec = ki_decompose(&st, &roles, 1e-8, &mut rng).unwrap();
        assert_eq!(dec.blocks.len(), 2);
        assert_eq!(merge::required_k(&dec, MergeMode::Tight), 1);

        let (c, t) = setup("star4", TreeDocument::star(4));
        let l = bfs_labeling(&t);
        let (st, roles) = state_before(&c, &t, &l, &ConcentrateOptions::default(), "v2", &[0, 0]).unwrap();
        let dec = ki_decompose(&st, &roles, 1e-8, &mut rng).unwrap();
        assert_eq!(dec.blocks.len(), 1);
        assert_eq!(dec.blocks[0].dim_r_a, 2);
        assert_eq!(merge::required_k(&dec, MergeMode::Tight), 2);
        assert!(state_before(&c, &t, &l, &ConcentrateOptions::default(), "v2", &[0]).is_err());
    }

    #[test]
    fn star4_depends_on_labeling() {
        let (c, t) = setup("star4", TreeDocument::star(4));
        let opts = ConcentrateOptions::default();
        let given = Labeling::from_names(&t, &["v1", "v2", "v3", "v4"]).unwrap();
        let run = run_concentrating(&c, &t, &given, &opts).unwrap();
        assert_eq!(run.report.ranks(), vec![2, 1, 1]);
        assert!(run.passed);
        let swapped = Labeling::from_names(&t, &["v1", "v3", "v2", "v4"]).unwrap();
        let run = run_concentrating(&c, &t, &swapped, &opts).unwrap();
        assert_eq!(run.report.ranks(), vec![1, 2, 1]);
        assert!(run.passed);
    }

    #[test]
    fn identity_code_measures_nothing() {
        let (t, _) = parse_tree(&TreeDocument::star(3)).unwrap();
        let c = builtin("identity", Some(2), Some(t.names())).unwrap();
        let run = run_concentrating(&c, &t, &bfs_labeling(&t), &ConcentrateOptions::default()).unwrap();
        assert_eq!(run.leaves.len(), 1);
        assert!(run.leaves[0].events.iter().all(|e| matches!(e, Event::RootCorrection { .. })));
        assert!(run.passed);
    }

    #[test]
    fn fallback_teleports_everything() {
        let (c, t) = setup("star4", TreeDocument::star(4));
        let opts = ConcentrateOptions { mode: ConcentrateMode::Fallback, ..Default::default() };
        let run = run_concentrating(&c, &t, &bfs_labeling(&t), &opts).unwrap();
        assert!(run.passed);
        assert!(run.report.ranks().iter().all(|&m| m >= 1));
    }

    #[test]
    fn root_isometry_is_an_isometry() {
        let m = CMat::from_fn(2, 5, |i, j| crate::linalg::c((i + 2 * j) as f64 % 3.0, (i * j) as f64 * 0.1));
        let (w, dj) = root_isometry(&m).unwrap();
        assert_eq!(dj, 3);
        assert!(tensor::isometry_residual(&w) < 1e-12);
    }
}
