//! Spreading: the root encodes locally, then every party splits off each
//! child's subtree in turn, teleporting a compressed copy through `Φ⁺_K`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_labeling, tree_edges, BranchPolicy, CostReport, BRANCH_CUTOFF};
use crate::code::{encoded_me_state, logical_me_state, reduced_state_for_edge, IsometryCode};
use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::network::{Edge, Labeling, TreeNetwork};
use crate::par::ExecPolicy;
use crate::split::{build_split_protocol, split_cost, SplitProtocol, Transfer};
use crate::tensor::{self, apply_map, LinearMap, Owner, PureState, Register, Role};
use crate::trace::{Event, Task};

/// `M_e = rank Φ̃⁺_{D,e}` for every edge; no labeling enters.
pub fn spreading_cost(code: &IsometryCode, tree: &TreeNetwork, rank_tol: f64) -> Result<CostReport> {
    code.check_parties(tree)?;
    let mut entries = Vec::new();
    for (e, &(_, c)) in tree_edges(tree).into_iter().zip(tree.edges()) {
        let rho = reduced_state_for_edge(code, tree, c)?;
        entries.push((e, tensor::numerical_rank(&rho, rank_tol)));
    }
    Ok(CostReport::new(Task::Spread, &code.name, Vec::new(), None, entries))
}

/// One split: `sender` hands the registers of `receiver`'s subtree over.
#[derive(Clone, Debug)]
pub struct SplitStep {
    pub edge: Edge,
    pub sender: String,
    pub receiver: String,
    pub rank: usize,
    pub k: usize,
    /// `None` when the subtree holds nothing but one-dimensional systems.
    pub protocol: Option<SplitProtocol>,
}

impl SplitStep {
    /// Events of this split for outcome `o`.
    pub fn events(&self, o: usize) -> Vec<Event> {
        let Some(p) = &self.protocol else { return Vec::new() };
        vec![
            Event::LocalIsometry {
                party: self.sender.clone(),
                inputs: p.cut.clone(),
                outputs: vec![p.compressed.clone()],
                matrix: p.compress.clone(),
            },
            Event::ResourceConsumed { edge: self.edge.clone(), k: self.k, halves: Some(p.resource.clone()) },
            Event::Measurement {
                party: self.sender.clone(),
                registers: vec![p.compressed.clone(), p.resource.0.clone()],
                basis: p.bell.transpose(),
                outcome: o,
                probability: 1.0 / (self.k * self.k) as f64,
            },
            Event::Broadcast { party: self.sender.clone(), outcome: o },
            Event::LocalIsometry {
                party: self.receiver.clone(),
                inputs: vec![p.resource.1.clone()],
                outputs: p.received.clone(),
                matrix: &p.decompress * &p.corrections[o],
            },
        ]
    }
}

#[derive(Clone, Debug)]
pub struct SpreadPlan {
    pub code: IsometryCode,
    pub tree: TreeNetwork,
    pub labeling: Labeling,
    /// Root applies `U: H -> physical registers`, all still held by the root.
    pub encoder: Event,
    pub steps: Vec<SplitStep>,
}

impl SpreadPlan {
    /// Steps that involve a measurement.
    pub fn active_steps(&self) -> Vec<&SplitStep> {
        self.steps.iter().filter(|s| s.protocol.is_some()).collect()
    }

    pub fn branch_count(&self) -> usize {
        self.active_steps().iter().map(|s| s.k * s.k).product()
    }

    /// Consumed resources in the tree's edge order.
    pub fn report(&self) -> CostReport {
        let entries = tree_edges(&self.tree)
            .into_iter()
            .map(|e| {
                let k = self.steps.iter().find(|s| s.edge == e).map_or(1, |s| s.k);
                (e, k)
            })
            .collect();
        CostReport::new(Task::Spread, &self.code.name, self.labeling.names(&self.tree), None, entries)
    }

    /// Full event list of one branch; `outcomes` has one entry per active step.
    pub fn events(&self, outcomes: &[usize]) -> Result<Vec<Event>> {
        let active = self.active_steps();
        if outcomes.len() != active.len() {
            return Err(Error::ShapeMismatch(format!("{} outcomes for {} splits", outcomes.len(), active.len())));
        }
        let mut ev = vec![self.encoder.clone()];
        for (s, &o) in active.iter().zip(outcomes) {
            if o >= s.k * s.k {
                return Err(Error::ShapeMismatch(format!("outcome {o} on edge {} with K = {}", s.edge, s.k)));
            }
            ev.extend(s.events(o));
        }
        Ok(ev)
    }

    /// `|Φ̃⁺_D>` with each physical register owned by its party.
    pub fn target(&self) -> PureState {
        encoded_me_state(&self.code).squeezed()
    }

    pub fn initial_state(&self) -> PureState {
        logical_me_state(&self.code, self.tree.name(self.tree.root()))
    }
}

/// Physical registers of dimension > 1, all held by `holder`.
fn encoder_outputs(code: &IsometryCode, holder: &str) -> Vec<Register> {
    code.physical_registers()
        .into_iter()
        .filter(|r| r.dim > 1)
        .map(|r| r.owned_by(Owner::party(holder)))
        .collect()
}

/// Build all splits. `overrides` forces `K` on the edge above the named
/// child (it must not be below the rank).
pub fn plan_spreading(
    code: &IsometryCode,
    tree: &TreeNetwork,
    labeling: &Labeling,
    rank_tol: f64,
    overrides: &[(String, usize)],
) -> Result<SpreadPlan> {
    code.check_parties(tree)?;
    check_labeling(tree, labeling)?;
    let root = tree.name(tree.root()).to_string();
    let h = code.logical_register(&root);
    let encoder = Event::LocalIsometry {
        party: root.clone(),
        inputs: vec![h.clone()],
        outputs: encoder_outputs(code, &root),
        matrix: code.matrix.clone(),
    };
    let map = LinearMap::new(vec![h.clone()], encoder_outputs(code, &root), code.matrix.clone())?;
    let mut ideal = apply_map(&logical_me_state(code, &root), &map, &[h.id.as_str()], None)?;
    let mut steps = Vec::new();
    for &v in labeling.order() {
        let mut children = tree.children(v).to_vec();
        children.sort_by_key(|&c| labeling.rank_of(c));
        for c in children {
            let (sender, receiver) = (tree.name(v).to_string(), tree.name(c).to_string());
            let edge = tree.edge(c)?;
            let subtree: Vec<&str> = tree.subtree(c).iter().map(|&x| tree.name(x)).collect();
            let cut: Vec<String> =
                ideal.ids().into_iter().filter(|id| subtree.contains(id)).map(String::from).collect();
            if cut.is_empty() {
                steps.push(SplitStep { edge, sender, receiver, rank: 1, k: 1, protocol: None });
                continue;
            }
            let rank = split_cost(&ideal, &cut, rank_tol)?;
            let k = overrides.iter().find(|(n, _)| *n == receiver).map_or(rank, |&(_, k)| k);
            let transfer = Transfer::new(&sender, &receiver, &format!("{sender}>{receiver}"));
            let protocol = build_split_protocol(&ideal, &cut, k, &transfer, rank_tol)?;
            for id in &cut {
                ideal.set_owner(id, Owner::party(receiver.clone()))?;
            }
            steps.push(SplitStep { edge, sender, receiver, rank, k, protocol: Some(protocol) });
        }
    }
    Ok(SpreadPlan { code: code.clone(), tree: tree.clone(), labeling: labeling.clone(), encoder, steps })
}

fn encode(plan: &SpreadPlan, input: &PureState) -> Result<PureState> {
    Ok(crate::trace::apply_event(input, &plan.encoder)?.0)
}

/// Outcome paths chosen by a non-exhaustive policy.
fn selected_paths(plan: &SpreadPlan, branches: &BranchPolicy) -> Result<Vec<Vec<usize>>> {
    let sizes: Vec<usize> = plan.active_steps().iter().map(|s| s.k * s.k).collect();
    match branches {
        BranchPolicy::Exhaustive => {
            let mut out = vec![Vec::new()];
            for &n in &sizes {
                out = out.into_iter().flat_map(|p: Vec<usize>| (0..n).map(move |o| [p.clone(), vec![o]].concat())).collect();
            }
            Ok(out)
        }
        BranchPolicy::Fixed(path) => {
            if path.len() != sizes.len() || path.iter().zip(&sizes).any(|(o, n)| o >= n) {
                return Err(Error::ShapeMismatch(format!("outcome path {path:?} for split sizes {sizes:?}")));
            }
            Ok(vec![path.clone()])
        }
        BranchPolicy::Sample { n, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut out: Vec<Vec<usize>> =
                (0..*n).map(|_| sizes.iter().map(|&s| rng.random_range(0..s)).collect()).collect();
            out.sort();
            out.dedup();
            Ok(out)
        }
    }
}

/// Leaf visitor: outcome path, branch probability, normalized final state.
pub type LeafFn<'a, R> = dyn Fn(&[usize], f64, &PureState) -> R + Sync + 'a;

fn walk<R: Send>(
    steps: &[&SplitStep],
    state: &PureState,
    prefix: &[usize],
    prob: f64,
    policy: ExecPolicy,
    leaf: &LeafFn<'_, R>,
) -> Result<Vec<R>> {
    let Some((step, rest)) = steps.split_first() else {
        return Ok(vec![leaf(prefix, prob, state)]);
    };
    let p = step.protocol.as_ref().expect("active step");
    let prepared = p.prepare(state)?;
    let parts: Vec<Result<Vec<R>>> = policy.map_range(p.outcomes(), |o| {
        let measured = p.measure(&prepared, o)?;
        let q = measured.norm_sqr();
        if q < BRANCH_CUTOFF {
            return Ok(Vec::new());
        }
        let out = p.correct(&measured.scaled(crate::linalg::c(1.0 / q.sqrt(), 0.0)), o)?;
        let mut path = prefix.to_vec();
        path.push(o);
        walk(rest, &out, &path, prob * q, policy, leaf)
    });
    let mut all = Vec::new();
    for part in parts {
        all.extend(part?);
    }
    Ok(all)
}

fn walk_fold<A: Send>(
    steps: &[&SplitStep],
    state: &PureState,
    prefix: &[usize],
    prob: f64,
    policy: ExecPolicy,
    leaf: &(dyn Fn(&[usize], f64, &PureState) -> Result<A> + Sync),
    combine: &(dyn Fn(A, A) -> A + Sync),
) -> Result<Option<A>> {
    let Some((step, rest)) = steps.split_first() else {
        return leaf(prefix, prob, state).map(Some);
    };
    let p = step.protocol.as_ref().expect("active step");
    let prepared = p.prepare(state)?;
    let parts: Vec<Result<Option<A>>> = policy.map_range(p.outcomes(), |o| {
        let measured = p.measure(&prepared, o)?;
        let q = measured.norm_sqr();
        if q < BRANCH_CUTOFF {
            return Ok(None);
        }
        let out = p.correct(&measured.scaled(crate::linalg::c(1.0 / q.sqrt(), 0.0)), o)?;
        let mut path = prefix.to_vec();
        path.push(o);
        walk_fold(rest, &out, &path, prob * q, policy, leaf, combine)
    });
    let mut acc = None;
    for part in parts {
        if let Some(x) = part? {
            acc = Some(match acc {
                Some(a) => combine(a, x),
                None => x,
            });
        }
    }
    Ok(acc)
}

/// Exhaustive run that reduces leaf values in outcome order instead of
/// collecting them; `None` when every branch was cut off.
pub fn fold_spreading<A: Send>(
    plan: &SpreadPlan,
    input: &PureState,
    policy: ExecPolicy,
    leaf: &(dyn Fn(&[usize], f64, &PureState) -> Result<A> + Sync),
    combine: &(dyn Fn(A, A) -> A + Sync),
) -> Result<Option<A>> {
    let encoded = encode(plan, input)?;
    walk_fold(&plan.active_steps(), &encoded, &[], 1.0, policy, leaf, combine)
}

/// Run `input` (on `R` and the root's logical register) through the
/// selected branches and hand every final state to `leaf`.
pub fn execute_spreading<R: Send>(
    plan: &SpreadPlan,
    input: &PureState,
    branches: &BranchPolicy,
    policy: ExecPolicy,
    leaf: &LeafFn<'_, R>,
) -> Result<Vec<R>> {
    let encoded = encode(plan, input)?;
    let active = plan.active_steps();
    if branches.is_exhaustive() {
        return walk(&active, &encoded, &[], 1.0, policy, leaf);
    }
    let paths = selected_paths(plan, branches)?;
    let parts: Vec<Result<Vec<R>>> = policy.map(&paths, |path| {
        let mut state = encoded.clone();
        let mut prob = 1.0;
        for (s, &o) in active.iter().zip(path) {
            let p = s.protocol.as_ref().expect("active step");
            let measured = p.measure(&p.prepare(&state)?, o)?;
            let q = measured.norm_sqr();
            if q < BRANCH_CUTOFF {
                return Err(Error::ZeroProbabilityBranch(q));
            }
            prob *= q;
            state = p.correct(&measured.scaled(crate::linalg::c(1.0 / q.sqrt(), 0.0)), o)?;
        }
        Ok(vec![leaf(path, prob, &state)])
    });
    let mut all = Vec::new();
    for part in parts {
        all.extend(part?);
    }
    Ok(all)
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct SpreadVerification {
    pub branches: usize,
    pub probability_sum: f64,
    /// Worst `1 - |<Φ̃⁺_D|out>|` over the explored branches.
    pub max_deviation: f64,
    pub ownership_ok: bool,
    pub passed: bool,
}

/// Every physical register sits with the party it is named after.
fn owners_match(state: &PureState) -> bool {
    state
        .registers()
        .iter()
        .filter(|r| r.role == Role::Physical)
        .all(|r| r.owner == Owner::party(r.id.clone()))
}

pub fn verify_spreading(plan: &SpreadPlan, branches: &BranchPolicy, tol: f64, policy: ExecPolicy) -> Result<SpreadVerification> {
    let target = plan.target();
    let leaf = |_: &[usize], p: f64, s: &PureState| -> (f64, f64, bool) {
        let ov = tensor::phase_free_overlap(&target, s).unwrap_or(0.0);
        (p, 1.0 - ov, owners_match(s) && s.ids().len() == target.ids().len())
    };
    let res = execute_spreading(plan, &plan.initial_state(), branches, policy, &leaf)?;
    let probability_sum: f64 = res.iter().map(|r| r.0).sum();
    let max_deviation = res.iter().map(|r| r.1).fold(0.0, f64::max);
    let ownership_ok = res.iter().all(|r| r.2);
    let sum_ok = !branches.is_exhaustive() || (probability_sum - 1.0).abs() <= 1e-9;
    Ok(SpreadVerification {
        branches: res.len(),
        probability_sum,
        max_deviation,
        ownership_ok,
        passed: ownership_ok && max_deviation <= tol && sum_ok,
    })
}

#[derive(Clone, Debug)]
pub struct SpreadRun {
    pub plan: SpreadPlan,
    pub report: CostReport,
    pub verification: SpreadVerification,
    /// The recorded branch: first explored path.
    pub outcomes: Vec<usize>,
    pub events: Vec<Event>,
    pub probability: f64,
    pub final_state: PureState,
    pub deviation: f64,
}

#[derive(Clone, Debug)]
pub struct SpreadOptions {
    pub rank_tol: f64,
    pub verify_tol: f64,
    pub branches: BranchPolicy,
    pub policy: ExecPolicy,
    pub overrides: Vec<(String, usize)>,
}

impl Default for SpreadOptions {
    fn default() -> Self {
        SpreadOptions {
            rank_tol: 1e-8,
            verify_tol: 1e-9,
            branches: BranchPolicy::Exhaustive,
            policy: ExecPolicy::default(),
            overrides: Vec::new(),
        }
    }
}

pub fn run_spreading(code: &IsometryCode, tree: &TreeNetwork, labeling: &Labeling, opts: &SpreadOptions) -> Result<SpreadRun> {
    let plan = plan_spreading(code, tree, labeling, opts.rank_tol, &opts.overrides)?;
    let verification = verify_spreading(&plan, &opts.branches, opts.verify_tol, opts.policy)?;
    let outcomes = selected_paths(&plan, &match &opts.branches {
        BranchPolicy::Exhaustive => BranchPolicy::Fixed(vec![0; plan.active_steps().len()]),
        other => other.clone(),
    })?
    .swap_remove(0);
    let events = plan.events(&outcomes)?;
    let rep = crate::trace::replay(&plan.initial_state(), &events)?;
    let deviation = 1.0 - tensor::phase_free_overlap(&plan.target(), &rep.state)?;
    Ok(SpreadRun {
        report: plan.report(),
        verification,
        outcomes,
        events,
        probability: rep.probability,
        final_state: rep.state,
        deviation,
        plan,
    })
}

/// `U ρ U†` on the nontrivial physical registers in code order.
pub fn encoded_density(code: &IsometryCode, rho: &CMat) -> CMat {
    &code.matrix * rho * code.matrix.adjoint()
}
