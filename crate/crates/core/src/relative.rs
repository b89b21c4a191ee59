//! Relative-state checks: the protocols were built for `|Φ⁺_D>`, so by
//! linearity the same operations must carry any purified input `ρ` through.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::code::{encoded_me_state, IsometryCode, REFERENCE};
use crate::error::Result;
use crate::linalg::{self, CMat, C64};
use crate::protocols::{fold_spreading, ConcentrateRun, SpreadPlan};
use crate::tensor::{self, LinearMap, PureState, Register};
use crate::trace;

/// `G G† / tr` with `G` complex Ginibre: full rank almost surely.
pub fn random_density<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CMat {
    let g = linalg::random_complex_gaussian(d, d, rng);
    let m = &g * g.adjoint();
    let t = m.trace();
    m.unscale(t.re)
}

/// `Σ_{r,h} (√ρ)[h, r] |r>|h>`, whose marginal on `holder` is `ρ`.
pub fn purification(reference: Register, holder: Register, rho: &CMat) -> Result<PureState> {
    let s = linalg::sqrt_psd(rho);
    let d = rho.nrows();
    let amps: Vec<C64> = (0..d * d).map(|i| s[(i % d, i / d)]).collect();
    PureState::new(vec![reference, holder], amps)
}

/// All `ρ_s` at once: `n^{-1/2} Σ_s |s>|ψ_{ρ_s}>` with `|s>` folded into a
/// reference of dimension `n D`. Every protocol step leaves the reference
/// alone, so each sample's block evolves exactly as its own input would.
pub fn stacked_purification(reference: &Register, holder: Register, rhos: &[CMat]) -> Result<PureState> {
    let d = holder.dim;
    let n = rhos.len();
    let scale = 1.0 / (n as f64).sqrt();
    let mut amps = Vec::with_capacity(n * d * d);
    for rho in rhos {
        let single = purification(reference.clone(), holder.clone(), rho)?;
        amps.extend(single.amplitudes().iter().map(|z| z * scale));
    }
    let big = Register { dim: n * d, ..reference.clone() };
    PureState::new(vec![big, holder], amps)
}

/// `tr` of everything but `keep` for each of the `n` stacked samples, scaled
/// back so that a branch of probability `p` contributes `p ρ_out,s`.
fn sample_marginals(st: &PureState, keep: &[String], n: usize, p: f64) -> Result<Vec<CMat>> {
    let mut order = keep.to_vec();
    order.push(REFERENCE.to_string());
    order.extend(
        st.ids().into_iter().filter(|id| *id != REFERENCE && !keep.iter().any(|k| k == id)).map(String::from),
    );
    let g = st.grouped(&order)?;
    let x = g.bipartite_matrix(keep)?;
    let width = x.ncols() / n;
    Ok((0..n)
        .map(|s| {
            let xs = x.columns(s * width, width);
            (xs * xs.adjoint()) * C64::new(p * n as f64, 0.0)
        })
        .collect())
}

fn physical_ids(code: &IsometryCode) -> Vec<String> {
    code.parties.iter().filter(|p| p.dim > 1).map(|p| p.name.clone()).collect()
}

fn accumulate(total: &mut [CMat], parts: Vec<CMat>) {
    for (t, m) in total.iter_mut().zip(parts) {
        *t += m;
    }
}

/// Trace distance between `U ρ_s U†` and the probability-weighted physical
/// output of every spreading branch run on the purification of `ρ_s`.
pub fn spread_on_densities(plan: &SpreadPlan, rhos: &[CMat], policy: crate::par::ExecPolicy) -> Result<Vec<f64>> {
    let ideal = plan.initial_state();
    let regs = ideal.registers().to_vec();
    let input = stacked_purification(&regs[0], regs[1].clone(), rhos)?;
    let keep = physical_ids(&plan.code);
    let n = rhos.len();
    let out = fold_spreading(plan, &input, policy, &|_, p, st| sample_marginals(st, &keep, n, p), &|mut a, b| {
        accumulate(&mut a, b);
        a
    })?;
    let dp = plan.code.physical_dim();
    let out = out.unwrap_or_else(|| vec![CMat::zeros(dp, dp); n]);
    Ok(out
        .iter()
        .zip(rhos)
        .map(|(o, rho)| linalg::trace_distance(o, &crate::protocols::encoded_density(&plan.code, rho)))
        .collect())
}

/// `(I ⊗ U)` applied to a (stacked) purification, dim-1 registers dropped.
pub fn encoded_purification(code: &IsometryCode, rhos: &[CMat]) -> Result<PureState> {
    let ideal = encoded_me_state(code);
    let phys: Vec<Register> = ideal.registers()[1..].to_vec();
    let holder = Register::new(crate::code::LOGICAL, code.logical_dim, tensor::Owner::Reference, tensor::Role::Logical);
    let input = stacked_purification(&code.reference_register(), holder.clone(), rhos)?;
    let enc = LinearMap::new(vec![holder], phys, code.matrix.clone())?;
    Ok(tensor::apply_map(&input, &enc, &[crate::code::LOGICAL], None)?.squeezed())
}

/// Replays every concentrating leaf on the encoded purifications and compares
/// the root's logical marginal with each `ρ_s`.
pub fn concentrate_on_densities(code: &IsometryCode, run: &ConcentrateRun, rhos: &[CMat]) -> Result<Vec<f64>> {
    let start = encoded_purification(code, rhos)?;
    let d = code.logical_dim;
    let n = rhos.len();
    let keep = [crate::code::LOGICAL.to_string()];
    let mut out = vec![CMat::zeros(d, d); n];
    for leaf in &run.leaves {
        let r = trace::replay(&start, &leaf.events)?;
        accumulate(&mut out, sample_marginals(&r.state, &keep, n, r.probability)?);
    }
    Ok(out.iter().zip(rhos).map(|(o, rho)| linalg::trace_distance(o, rho)).collect())
}

/// Worst trace distances over `samples` random inputs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RelativeReport {
    pub samples: usize,
    pub spread_max: Option<f64>,
    pub concentrate_max: Option<f64>,
}

impl RelativeReport {
    pub fn passed(&self, tol: f64) -> bool {
        [self.spread_max, self.concentrate_max].iter().flatten().all(|&x| x <= tol)
    }
}

fn worst(v: Vec<f64>) -> f64 {
    v.into_iter().fold(0.0, f64::max)
}

/// Salt mixed into the run seed so the inputs differ from other random draws.
const SALT_RHO: u64 = 0x5E_ED0F_D3A5;

/// `samples` Ginibre inputs drawn from `seed`, checked against whichever
/// protocols are given.
pub fn relative_state_check(
    code: &IsometryCode,
    spread: Option<&SpreadPlan>,
    concentrate: Option<&ConcentrateRun>,
    samples: usize,
    seed: u64,
    policy: crate::par::ExecPolicy,
) -> Result<RelativeReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SALT_RHO);
    let rhos: Vec<CMat> = (0..samples).map(|_| random_density(code.logical_dim, &mut rng)).collect();
    let spread_max = spread.map(|p| spread_on_densities(p, &rhos, policy).map(worst)).transpose()?;
    let concentrate_max = concentrate.map(|r| concentrate_on_densities(code, r, &rhos).map(worst)).transpose()?;
    Ok(RelativeReport { samples, spread_max, concentrate_max })
}
