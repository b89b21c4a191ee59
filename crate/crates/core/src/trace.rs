//! Protocol traces: the ordered local operations, resources and messages of
//! one outcome branch, in a form that can be stored and re-executed.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::code::CodeDocument;
use crate::error::{Error, Result};
use crate::io::TreeDocument;
use crate::linalg::{CMat, C64};
use crate::network::Edge;
use crate::protocols::CostReport;
use crate::tensor::{self, apply_map, LinearMap, PureState, Register};

/// Format tag written into every trace.
pub const TRACE_FORMAT: &str = "locc-net-trace/1";

/// Serde helpers: matrices as nested row lists of `[re, im]` pairs.
pub mod cmat_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &CMat, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<[f64; 2]>> =
            (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<CMat, D::Error> {
        let rows: Vec<Vec<[f64; 2]>> = Vec::deserialize(d)?;
        let nr = rows.len();
        let nc = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != nc) {
            return Err(serde::de::Error::custom("ragged matrix"));
        }
        Ok(CMat::from_fn(nr, nc, |i, j| C64::new(rows[i][j][0], rows[i][j][1])))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Spread,
    Concentrate,
}

impl Task {
    pub fn tag(self) -> &'static str {
        match self {
            Task::Spread => "spread",
            Task::Concentrate => "concentrate",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    LocalIsometry {
        party: String,
        inputs: Vec<Register>,
        outputs: Vec<Register>,
        #[serde(with = "cmat_serde")]
        matrix: CMat,
    },
    /// A copy of `Φ⁺_K` shared over `edge`; `halves` is absent when `K = 1`.
    ResourceConsumed {
        edge: Edge,
        k: usize,
        halves: Option<(Register, Register)>,
    },
    /// Row `m` of `basis` holds the components of `|m>` on `registers`.
    Measurement {
        party: String,
        registers: Vec<Register>,
        #[serde(with = "cmat_serde")]
        basis: CMat,
        outcome: usize,
        probability: f64,
    },
    Broadcast {
        party: String,
        outcome: usize,
    },
    RootCorrection {
        party: String,
        inputs: Vec<Register>,
        outputs: Vec<Register>,
        #[serde(with = "cmat_serde")]
        matrix: CMat,
    },
}

fn ids(regs: &[Register]) -> Vec<&str> {
    regs.iter().map(|r| r.id.as_str()).collect()
}

/// Apply one event. Measurements return the normalized post-measurement
/// state together with the conditional outcome probability.
pub fn apply_event(state: &PureState, ev: &Event) -> Result<(PureState, Option<f64>)> {
    match ev {
        Event::LocalIsometry { inputs, outputs, matrix, .. } | Event::RootCorrection { inputs, outputs, matrix, .. } => {
            let map = LinearMap::new(inputs.clone(), outputs.clone(), matrix.clone())?;
            Ok((apply_map(state, &map, &ids(inputs), None)?, None))
        }
        Event::ResourceConsumed { halves: Some((a, b)), .. } => {
            let phi = PureState::max_entangled(a.clone(), b.clone())?;
            Ok((tensor::tensor_product(state, &phi)?, None))
        }
        Event::ResourceConsumed { halves: None, .. } | Event::Broadcast { .. } => Ok((state.clone(), None)),
        Event::Measurement { registers, basis, outcome, .. } => {
            if *outcome >= basis.nrows() {
                return Err(Error::ShapeMismatch(format!("outcome {outcome} of a {}-outcome measurement", basis.nrows())));
            }
            let v: Vec<C64> = basis.row(*outcome).iter().copied().collect();
            let bra = LinearMap::bra(registers.clone(), &v)?;
            let out = apply_map(state, &bra, &ids(registers), None)?;
            let p = out.norm_sqr();
            if p <= 0.0 {
                return Err(Error::ZeroProbabilityBranch(p));
            }
            Ok((out.normalized(), Some(p)))
        }
    }
}

#[derive(Clone, Debug)]
pub struct Replay {
    pub state: PureState,
    /// Product of the conditional outcome probabilities.
    pub probability: f64,
    /// Largest gap between a recorded and a replayed outcome probability.
    pub probability_mismatch: f64,
}

pub fn replay(initial: &PureState, events: &[Event]) -> Result<Replay> {
    let mut state = initial.clone();
    let mut probability = 1.0;
    let mut mismatch: f64 = 0.0;
    for ev in events {
        let (next, p) = apply_event(&state, ev)?;
        if let (Some(p), Event::Measurement { probability: rec, .. }) = (p, ev) {
            probability *= p;
            mismatch = mismatch.max((p - rec).abs());
        }
        state = next;
    }
    Ok(Replay { state, probability, probability_mismatch: mismatch })
}

/// SHA-256 over register ids, dimensions and the amplitudes rounded to nine
/// decimals after fixing the global phase (largest amplitude real positive,
/// earliest index on ties) and sorting registers by id.
pub fn state_hash(state: &PureState) -> String {
    let mut order: Vec<&str> = state.ids();
    order.sort_unstable();
    let g = state.grouped(&order).expect("ids come from the state");
    let amps = g.amplitudes();
    let top = amps.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    let lead = amps.iter().position(|z| z.norm() > top - 1e-9).unwrap_or(0);
    let phase = if top > 0.0 { amps[lead].conj() / amps[lead].norm() } else { C64::new(1.0, 0.0) };
    let fix = |x: f64| {
        let r = (x * 1e9).round() / 1e9;
        if r == 0.0 { 0.0 } else { r }
    };
    let mut h = Sha256::new();
    for r in g.registers() {
        h.update(format!("{}:{};", r.id, r.dim).as_bytes());
    }
    for z in amps {
        let w = z * phase;
        h.update(format!("{:.9},{:.9};", fix(w.re), fix(w.im)).as_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub rank: f64,
    pub verify: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { rank: 1e-8, verify: 1e-9 }
    }
}

/// One executed outcome branch with everything needed to replay it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolTrace {
    pub format: String,
    pub task: Task,
    pub code: CodeDocument,
    pub tree: TreeDocument,
    pub labeling: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    pub seed: u64,
    pub tolerances: Tolerances,
    pub outcomes: Vec<usize>,
    pub probability: f64,
    /// Cost report of the run this branch came from.
    pub report: CostReport,
    pub events: Vec<Event>,
    pub final_hash: String,
    /// `1 - |<target|final>|` for the recorded branch.
    pub deviation: f64,
}

impl ProtocolTrace {
    /// `(edge, K)` for every resource event, in order.
    pub fn resources(&self) -> Vec<(Edge, usize)> {
        self.events
            .iter()
            .filter_map(|e| match e {
                Event::ResourceConsumed { edge, k, .. } => Some((edge.clone(), *k)),
                _ => None,
            })
            .collect()
    }

    /// `Σ log₂ K` over the resource events.
    pub fn total_log2(&self) -> f64 {
        self.resources().iter().map(|(_, k)| (*k as f64).log2()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, identity};

    #[test]
    fn matrices_round_trip_through_json() {
        let m = CMat::from_fn(2, 3, |i, j| c(i as f64 + 0.5, -(j as f64)));
        let ev = Event::LocalIsometry {
            party: "v1".into(),
            inputs: vec![Register::physical("x", 3, "v1")],
            outputs: vec![Register::physical("y", 2, "v1")],
            matrix: m,
        };
        let s = serde_json::to_string(&ev).unwrap();
        let back: Event = serde_json::from_str(&s).unwrap();
        assert_eq!(ev, back);
    }

    #[test]
    fn hash_ignores_global_phase_and_register_order() {
        let a = PureState::max_entangled(Register::reference("R", 2), Register::physical("x", 2, "p")).unwrap();
        let b = a.clone().scaled(C64::from_polar(1.0, 0.7));
        assert_eq!(state_hash(&a), state_hash(&b));
        let swapped = tensor::permute_registers(&a, &[1, 0]).unwrap();
        assert_eq!(state_hash(&a), state_hash(&swapped));
        let other = PureState::basis(vec![Register::reference("R", 2), Register::physical("x", 2, "p")], &[0, 1]).unwrap();
        assert_ne!(state_hash(&a), state_hash(&other));
    }

    #[test]
    fn replay_measures_and_tracks_probabilities() {
        let a = PureState::max_entangled(Register::reference("R", 2), Register::physical("x", 2, "p")).unwrap();
        let events = vec![
            Event::Measurement {
                party: "p".into(),
                registers: vec![Register::physical("x", 2, "p")],
                basis: identity(2),
                outcome: 1,
                probability: 0.5,
            },
            Event::Broadcast { party: "p".into(), outcome: 1 },
        ];
        let r = replay(&a, &events).unwrap();
        assert!((r.probability - 0.5).abs() < 1e-12);
        assert!(r.probability_mismatch < 1e-12);
        assert_eq!(r.state.ids(), vec!["R"]);
        assert!((r.state.amplitudes()[1].norm() - 1.0).abs() < 1e-12);
    }
}
