//! Exact state merging: `A` measures its share of `ψ^{R′AB}` together with
//! half of `Φ⁺_K`, `B` applies an outcome-dependent isometry and ends up
//! holding `ψ^{R′B′B}`.
//!
//! Measurements are built in the Koashi-Imoto coordinates of `A`. Every
//! outcome must leave the `R′` marginal proportional to the original one;
//! the matching correction is then the closed-form alignment
//! `U_m^T = X_m^+ Y` completed to an isometry.

use std::f64::consts::PI;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ki::{self, BlockSummary, KiDecomposition, KiRoles};
use crate::linalg::{self, complete_isometry, orth_complement, polar_unitary, CMat, C64, ZERO};
use crate::par::ExecPolicy;
use crate::split::{bell_basis, Transfer};
use crate::tensor::{self, apply_map, LinearMap, PureState, Register};

/// Branches below this probability are treated as impossible.
pub const ZERO_PROBABILITY: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeMode {
    Tight,
    Fallback,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeStrategy {
    /// Product basis of the sender's registers, used whenever it already merges exactly.
    Computational,
    ScalarFourier,
    SingleBlock,
    UniformJunk,
    Synthesized,
    FallbackTeleport,
}

impl MergeStrategy {
    pub fn tag(self) -> &'static str {
        match self {
            MergeStrategy::Computational => "computational",
            MergeStrategy::ScalarFourier => "scalar-fourier",
            MergeStrategy::SingleBlock => "single-block",
            MergeStrategy::UniformJunk => "uniform-junk",
            MergeStrategy::Synthesized => "synthesized",
            MergeStrategy::FallbackTeleport => "fallback-teleport",
        }
    }
}

#[derive(Clone, Debug)]
pub struct MergeOptions {
    pub mode: MergeMode,
    pub rank_tol: f64,
    pub verify_tol: f64,
    /// Resource dimension to use instead of the minimum (must not be smaller).
    pub k: Option<usize>,
    /// Let the synthesizer fall back to an ancilla-padded closed form.
    pub allow_ancilla: bool,
    pub max_iterations: usize,
    pub max_restarts: usize,
    /// Try measuring in the computational basis before building one.
    pub prefer_computational: bool,
    pub policy: ExecPolicy,
}

impl Default for MergeOptions {
    fn default() -> Self {
        MergeOptions {
            mode: MergeMode::Tight,
            rank_tol: 1e-8,
            verify_tol: 1e-9,
            k: None,
            allow_ancilla: true,
            max_iterations: 500,
            max_restarts: 20,
            prefer_computational: true,
            policy: ExecPolicy::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MergeProtocol {
    pub k: usize,
    /// Smallest `K` the chosen mode needs for this state.
    pub required_k: usize,
    pub strategy: MergeStrategy,
    /// Dimension of the sender's local ancilla (1 when none is used).
    pub ancilla_dim: usize,
    pub roles: KiRoles,
    pub blocks: Vec<BlockSummary>,
    pub reference_registers: Vec<Register>,
    pub a_registers: Vec<Register>,
    pub b_registers: Vec<Register>,
    /// Present when `K > 1`.
    pub resource: Option<(Register, Register)>,
    /// Row `m` holds the components of `|m>` on `(A..., A0)` (ancilla
    /// already contracted with `|0>`); `Σ_m |m><m| = I`.
    pub povm: CMat,
    /// `U_m` from `(B..., B0)` to `(B′..., B...)`; `None` for impossible outcomes.
    pub corrections: Vec<Option<CMat>>,
    pub probabilities: Vec<f64>,
    pub correction_inputs: Vec<Register>,
    pub correction_outputs: Vec<Register>,
    /// Outcome of the branch-exhaustive check run when the protocol was built.
    pub verification: MergeReport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MergeReport {
    pub outcomes: usize,
    pub possible_outcomes: usize,
    pub max_deviation: f64,
    pub completeness_residual: f64,
    pub isometry_residual: f64,
    pub probability_sum: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct OutcomeBranch {
    pub outcomes: Vec<usize>,
    pub probability: f64,
    pub state: PureState,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BranchSelector {
    All,
    Sample { n: usize, seed: u64 },
    Fixed(Vec<usize>),
}

/// `ψ` grouped as `(R′, A, B)` with its dimensions.
struct Tripartite {
    amps: Vec<C64>,
    dr: usize,
    da: usize,
    db: usize,
}

impl Tripartite {
    fn new(psi: &PureState, roles: &KiRoles) -> Result<Self> {
        let order: Vec<&str> = roles.reference.iter().chain(&roles.a).chain(&roles.b).map(|s| s.as_str()).collect();
        let g = psi.grouped(&order)?;
        let dim = |ids: &[String]| -> Result<usize> {
            ids.iter().map(|i| psi.register(i).map(|r| r.dim)).product()
        };
        Ok(Tripartite { amps: g.into_amplitudes(), dr: dim(&roles.reference)?, da: dim(&roles.a)?, db: dim(&roles.b)? })
    }

    fn at(&self, r: usize, a: usize, b: usize) -> C64 {
        self.amps[(r * self.da + a) * self.db + b]
    }

    /// Target `Y`: rows `R′`, columns `(A copy, B)`.
    fn target(&self) -> CMat {
        CMat::from_fn(self.dr, self.da * self.db, |r, ab| self.amps[r * self.da * self.db + ab])
    }

    /// Unnormalized post-measurement `X_m`: rows `R′`, columns `(B, B0)`.
    fn post_measurement(&self, bra: &[C64], k: usize) -> CMat {
        let s = 1.0 / (k as f64).sqrt();
        let mut x = CMat::zeros(self.dr, self.db * k);
        for r in 0..self.dr {
            for a in 0..self.da {
                for b0 in 0..k {
                    let w = bra[a * k + b0];
                    if w == ZERO {
                        continue;
                    }
                    for b in 0..self.db {
                        x[(r, b * k + b0)] += w * self.at(r, a, b) * s;
                    }
                }
            }
        }
        x
    }
}

fn pinv(m: &CMat, rel: f64) -> CMat {
    let linalg::Svd { u, s: sv, v_t: vt } = linalg::svd(m);
    let top = sv.first().copied().unwrap_or(0.0);
    let mut out = CMat::zeros(m.ncols(), m.nrows());
    for (i, &s) in sv.iter().enumerate() {
        if s > rel * top && s > 0.0 {
            out += vt.row(i).adjoint() * u.column(i).adjoint() / C64::new(s, 0.0);
        }
    }
    out
}

/// Correction for one outcome: isometry `U` with `X̂ U^T = Y`.
fn alignment(x: &CMat, y: &CMat, rank_tol: f64) -> CMat {
    let partial = (pinv(x, rank_tol.sqrt()) * y).transpose();
    complete_isometry(&partial)
}

/// Flat tight frame: unit-modulus-entry vectors `h_i ∈ C^d` (entries
/// `1/√d`) with `Σ_i w_i h_i h_i^† = I/d`. Needs `Σ w = 1`, `w_i ≤ 1/d`.
pub fn flat_tight_frame<R: Rng + ?Sized>(weights: &[f64], d: usize, rng: &mut R) -> Option<Vec<Vec<C64>>> {
    let n = weights.len();
    let amp = 1.0 / (d as f64).sqrt();
    if d == 1 {
        return Some(vec![vec![C64::new(1.0, 0.0)]; n]);
    }
    if n < d || weights.iter().any(|&w| w > 1.0 / d as f64 + 1e-12) {
        return None;
    }
    let uniform = weights.iter().all(|&w| (w - weights[0]).abs() < 1e-12);
    if uniform {
        return Some(
            (0..n)
                .map(|i| (0..d).map(|k| C64::from_polar(amp, 2.0 * PI * ((k * i) % n) as f64 / n as f64)).collect())
                .collect(),
        );
    }
    if d == 2 {
        return polygon_frame(weights).map(|th| {
            th.iter().map(|&t| vec![C64::new(amp, 0.0), C64::from_polar(amp, t)]).collect()
        });
    }
    numeric_frame(weights, d, rng)
}

/// Angles `θ_i` with `Σ w_i e^{iθ_i} = 0`, grouping the sides into a triangle.
fn polygon_frame(weights: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = weights.iter().sum();
    let mut idx: Vec<usize> = (0..weights.len()).collect();
    idx.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]));
    let mut prefix = 0.0;
    let mut t = 0;
    while t < idx.len() && prefix + weights[idx[t]] <= total / 2.0 + 1e-15 {
        prefix += weights[idx[t]];
        t += 1;
    }
    if t == 0 || t == idx.len() {
        return None;
    }
    let a = prefix;
    let b = weights[idx[t]];
    let c = total - a - b;
    let cosb = ((c * c - a * a - b * b) / (2.0 * a * b)).clamp(-1.0, 1.0);
    let beta = cosb.acos();
    let third = -(C64::new(a, 0.0) + C64::from_polar(b, beta));
    let chi = third.arg();
    let mut th = vec![0.0; weights.len()];
    for &i in &idx[t + 1..] {
        th[i] = chi;
    }
    th[idx[t]] = beta;
    Some(th)
}

fn numeric_frame<R: Rng + ?Sized>(weights: &[f64], d: usize, rng: &mut R) -> Option<Vec<Vec<C64>>> {
    let n = weights.len();
    let amp = 1.0 / (d as f64).sqrt();
    let target = linalg::identity(d).scale(1.0 / d as f64);
    for _ in 0..20 {
        let mut h = CMat::from_fn(d, n, |_, i| C64::from_polar((weights[i] / d as f64).sqrt(), rng.random::<f64>() * 2.0 * PI));
        for _ in 0..5000 {
            let w = polar_unitary_rect(&h).scale(amp);
            h = CMat::from_fn(d, n, |k, i| {
                let z = w[(k, i)];
                let ph = if z.norm() > 0.0 { z / z.norm() } else { C64::new(1.0, 0.0) };
                ph * (weights[i] / d as f64).sqrt()
            });
            if linalg::max_abs(&(&h * h.adjoint() - &target)) < 1e-15 {
                break;
            }
        }
        if linalg::max_abs(&(&h * h.adjoint() - &target)) < 1e-13 {
            return Some(
                (0..n)
                    .map(|i| (0..d).map(|k| {
                        let z = h[(k, i)];
                        if z.norm() > 0.0 { z / z.norm() * amp } else { C64::new(amp, 0.0) }
                    }).collect())
                    .collect(),
            );
        }
    }
    None
}

/// Co-isometry `U V^†` from the SVD of a wide matrix.
fn polar_unitary_rect(m: &CMat) -> CMat {
    let d = linalg::svd(m);
    d.u * d.v_t
}

/// Orthonormal vectors `w_{j,i,k}` of the block coordinates on `(A, A0)`,
/// `i = a K + a0`, as columns; plus the per-block layout.
struct BlockFrame {
    vectors: CMat,
    /// `(offset, n_j, dR_j, weights)` per block, columns ordered `(i, k)`.
    layout: Vec<(usize, usize, usize, Vec<f64>)>,
}

fn block_frame(dec: &KiDecomposition, k: usize) -> BlockFrame {
    let (_, da, _) = dec.dims();
    let total: usize = dec.blocks.iter().map(|b| b.junk_weights.len() * k * b.dim_r_a).sum();
    let mut vectors = CMat::zeros(da * k, total);
    let mut layout = Vec::new();
    let mut col = 0;
    for blk in &dec.blocks {
        let (dl, dr) = (blk.dim_l_a, blk.dim_r_a);
        let nl = blk.junk_weights.len();
        let start = col;
        let mut weights = Vec::new();
        for a in 0..nl {
            for a0 in 0..k {
                weights.push(blk.junk_weights[a] / k as f64);
                for kk in 0..dr {
                    for l in 0..dl {
                        let coef = blk.junk_basis[(l, a)];
                        for x in 0..da {
                            vectors[(x * k + a0, col)] += coef * blk.embed_a[(x, l * dr + kk)];
                        }
                    }
                    col += 1;
                }
            }
        }
        layout.push((start, nl * k, dr, weights));
    }
    BlockFrame { vectors, layout }
}

fn fourier_phase(num: usize, den: usize) -> C64 {
    C64::from_polar(1.0, 2.0 * PI * (num % den) as f64 / den as f64)
}

/// Joint Fourier over all junk indices with a flat frame per block; all
/// blocks must share `dR`. Columns are the measurement vectors.
fn frame_fourier<R: Rng + ?Sized>(bf: &BlockFrame, rng: &mut R) -> Option<CMat> {
    let d = bf.layout[0].2;
    let n_tot: usize = bf.layout.iter().map(|l| l.1).sum();
    let mut coef = CMat::zeros(bf.vectors.ncols(), n_tot * d);
    let mut idx0 = 0;
    for (start, n, dr, w) in &bf.layout {
        let h = flat_tight_frame(w, *dr, rng)?;
        for i in 0..*n {
            let idx = idx0 + i;
            for y in 0..n_tot {
                for s in 0..d {
                    for k in 0..d {
                        let z = fourier_phase(y * idx, n_tot) * fourier_phase(s * k, d) * h[i][k];
                        coef[(start + i * dr + k, y * d + s)] = z / (n_tot as f64).sqrt();
                    }
                }
            }
        }
        idx0 += n;
    }
    Some(&bf.vectors * coef)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// Ancilla-padded Fourier: each block's junk is padded with zero-weight
/// directions (taken from the complement, using a local ancilla if needed)
/// until every block has the same dimension `Δ`; per-block flat-frame
/// Fourier bases are then mixed by a Fourier transform over block labels.
/// Returns the vectors on `(A, A0, anc)` and the ancilla dimension.
fn padded_fourier<R: Rng + ?Sized>(bf: &BlockFrame, da_k: usize, rng: &mut R) -> Option<(CMat, usize)> {
    let jn = bf.layout.len();
    let l = bf.layout.iter().fold(1, |acc, x| acc / gcd(acc, x.2) * x.2);
    let need = bf.layout.iter().map(|x| x.1 * x.2).max().unwrap_or(1);
    let delta = need.div_ceil(l) * l;
    let q = (jn * delta).div_ceil(da_k).max(1);
    let full = da_k * q;
    let nw = bf.vectors.ncols();
    // real block vectors ⊗ |0>_anc
    let mut real = CMat::zeros(full, nw);
    for c in 0..nw {
        for x in 0..da_k {
            real[(x * q, c)] = bf.vectors[(x, c)];
        }
    }
    let spare = orth_complement(&real, full);
    let mut used = 0;
    let mut out = CMat::zeros(full, jn * delta);
    let mut block_bases = Vec::new();
    for (start, n, dr, w) in &bf.layout {
        let np = delta / dr;
        let mut weights = w.clone();
        weights.resize(np, 0.0);
        let h = flat_tight_frame(&weights, *dr, rng)?;
        // padded coordinate vectors e'_{i,k}
        let mut e = CMat::zeros(full, np * dr);
        for i in 0..np {
            for k in 0..*dr {
                if i < *n {
                    e.set_column(i * dr + k, &real.column(start + i * dr + k));
                } else {
                    e.set_column(i * dr + k, &spare.column(used));
                    used += 1;
                }
            }
        }
        // f_{(y,s)} = n'^{-1/2} Σ_i e^{2πi y i/n'} e'_i ⊗ Z^s h_i
        let mut f = CMat::zeros(full, delta);
        for y in 0..np {
            for s in 0..*dr {
                let mut v = nalgebra::DVector::<C64>::zeros(full);
                for i in 0..np {
                    for k in 0..*dr {
                        let z = fourier_phase(y * i, np) * fourier_phase(s * k, *dr) * h[i][k];
                        v += e.column(i * dr + k) * (z / (np as f64).sqrt());
                    }
                }
                f.set_column(y * dr + s, &v);
            }
        }
        block_bases.push(f);
    }
    for u in 0..jn {
        for t in 0..delta {
            let mut v = nalgebra::DVector::<C64>::zeros(full);
            for (j, f) in block_bases.iter().enumerate() {
                v += f.column(t) * (fourier_phase(u * j, jn) / (jn as f64).sqrt());
            }
            out.set_column(u * delta + t, &v);
        }
    }
    Some((out, q))
}

/// Alternating projection for a unitary `Q` on the block coordinates whose
/// every column `m` satisfies `G_{m,j} N_j G_{m,j}^† = c_m I` for all `j`.
fn synthesize<R: Rng + ?Sized>(bf: &BlockFrame, iters: usize, restarts: usize, rng: &mut R) -> Option<CMat> {
    let nw = bf.vectors.ncols();
    let sum_dr: usize = bf.layout.iter().map(|l| l.2).sum();
    let residual = |q: &CMat| -> f64 {
        let mut worst = 0.0f64;
        for m in 0..nw {
            let gs: Vec<CMat> = bf
                .layout
                .iter()
                .map(|(start, n, dr, w)| {
                    let g = CMat::from_fn(*dr, *n, |k, i| q[(start + i * dr + k, m)] * w[i].sqrt());
                    &g * g.adjoint()
                })
                .collect();
            let c = gs.iter().map(|s| s.trace().re).sum::<f64>() / sum_dr as f64;
            for s in &gs {
                worst = worst.max(linalg::max_abs(&(s - linalg::identity(s.nrows()).scale(c))));
            }
        }
        worst
    };
    for _ in 0..restarts {
        let mut q = linalg::random_unitary(nw, rng);
        for _ in 0..iters {
            for m in 0..nw {
                let mut parts = Vec::new();
                let mut tr = 0.0;
                for (start, n, dr, w) in &bf.layout {
                    let gt = CMat::from_fn(*dr, *n, |k, i| q[(start + i * dr + k, m)] * w[i].sqrt());
                    tr += gt.norm_squared();
                    parts.push(polar_unitary_rect(&gt));
                }
                let t = (tr / sum_dr as f64).sqrt();
                for ((start, n, dr, w), p) in bf.layout.iter().zip(&parts) {
                    for i in 0..*n {
                        for k in 0..*dr {
                            q[(start + i * dr + k, m)] = p[(k, i)] * (t / w[i].sqrt());
                        }
                    }
                }
            }
            q = polar_unitary(&q);
            if residual(&q) < 1e-14 {
                return Some(&bf.vectors * q);
            }
        }
        if residual(&q) < 1e-12 {
            return Some(&bf.vectors * q);
        }
    }
    None
}

/// Columns of `basis` completed to a unitary of size `dim`.
fn complete_basis(basis: &CMat, dim: usize) -> CMat {
    let comp = orth_complement(basis, dim);
    let mut out = CMat::zeros(dim, dim);
    out.columns_mut(0, basis.ncols()).copy_from(basis);
    out.columns_mut(basis.ncols(), comp.ncols()).copy_from(&comp);
    out
}

/// Minimum `K` for the mode: Koashi-Imoto cost when tight, `rank ρ^A` for
/// compress-and-teleport.
pub fn required_k(dec: &KiDecomposition, mode: MergeMode) -> usize {
    match mode {
        MergeMode::Tight => ki::merge_cost_k(dec),
        MergeMode::Fallback => ki::spread_rank_bound(dec),
    }
}

pub fn choose_strategy(dec: &KiDecomposition, mode: MergeMode) -> MergeStrategy {
    if mode == MergeMode::Fallback {
        return MergeStrategy::FallbackTeleport;
    }
    let d0 = dec.blocks[0].dim_r_a;
    if dec.blocks.len() == 1 {
        MergeStrategy::SingleBlock
    } else if dec.blocks.iter().all(|b| b.dim_r_a == 1) {
        MergeStrategy::ScalarFourier
    } else if dec.blocks.iter().all(|b| b.dim_r_a == d0) {
        MergeStrategy::UniformJunk
    } else {
        MergeStrategy::Synthesized
    }
}

/// Build a merging protocol for `ψ` from its decomposition.
pub fn build_merge_protocol_from<R: Rng + ?Sized>(
    psi: &PureState,
    dec: &KiDecomposition,
    transfer: &Transfer,
    opts: &MergeOptions,
    rng: &mut R,
) -> Result<MergeProtocol> {
    let roles = &dec.roles;
    let required = required_k(dec, opts.mode);
    let k = opts.k.unwrap_or(required);
    if k < required {
        return Err(Error::InsufficientResource { needed: required, given: k });
    }
    let (_, da, _) = dec.dims();
    if k > da {
        // the receiver's correction could not be an isometry
        return Err(Error::DimensionMismatch(format!("resource dimension {k} exceeds sender dimension {da}")));
    }
    let dak = da * k;
    let tri = Tripartite::new(psi, roles)?;
    if opts.prefer_computational && opts.mode == MergeMode::Tight {
        let proto = assemble(psi, dec, &tri, transfer, opts, k, required, MergeStrategy::Computational, 1, linalg::identity(dak));
        if let Ok((proto, true)) = proto {
            return Ok(proto);
        }
    }
    let strategy = choose_strategy(dec, opts.mode);
    let mut ancilla_dim = 1;
    let vectors = match strategy {
        MergeStrategy::FallbackTeleport => {
            let r = dec.rank_a();
            if k > da {
                return Err(Error::DimensionMismatch(format!(
                    "teleporting a {da}-dimensional system through K = {k}"
                )));
            }
            let mut c = CMat::zeros(da, k);
            c.columns_mut(0, r).copy_from(&dec.support_a);
            if k > r {
                let comp = orth_complement(&dec.support_a, da);
                c.columns_mut(r, k - r).copy_from(&comp.columns(0, k - r));
            }
            kron_left(&c, k) * bell_basis(k)
        }
        MergeStrategy::Synthesized => {
            let bf = block_frame(dec, k);
            match synthesize(&bf, opts.max_iterations, opts.max_restarts, rng) {
                Some(v) => v,
                None if opts.allow_ancilla => {
                    let (v, q) = padded_fourier(&bf, dak, rng).ok_or_else(|| {
                        Error::SynthesisFailed("no flat frame for the padded blocks".into())
                    })?;
                    ancilla_dim = q;
                    v
                }
                None => {
                    return Err(Error::SynthesisFailed(format!(
                        "alternating projection did not converge in {} restarts of {} iterations",
                        opts.max_restarts, opts.max_iterations
                    )))
                }
            }
        }
        _ => {
            let bf = block_frame(dec, k);
            frame_fourier(&bf, rng).ok_or_else(|| {
                Error::NumericalDegeneracy("junk spectrum admits no flat frame at this K".into())
            })?
        }
    };
    let full = complete_basis(&vectors, dak * ancilla_dim);
    // contract the ancilla with |0>: keep rows x * q
    let povm = CMat::from_fn(full.ncols(), dak, |m, x| full[(x * ancilla_dim, m)]);
    let (proto, passed) = assemble(psi, dec, &tri, transfer, opts, k, required, strategy, ancilla_dim, povm)?;
    if !passed {
        let v = &proto.verification;
        let msg = format!(
            "{} protocol fails verification (deviation {:.3e}, completeness {:.3e}, isometry {:.3e})",
            strategy.tag(),
            v.max_deviation,
            v.completeness_residual,
            v.isometry_residual
        );
        return Err(match strategy {
            MergeStrategy::Synthesized => Error::SynthesisFailed(msg),
            _ => Error::NumericalDegeneracy(msg),
        });
    }
    Ok(proto)
}

/// Corrections for every outcome of `povm`, then verification.
#[allow(clippy::too_many_arguments)]
fn assemble(
    psi: &PureState,
    dec: &KiDecomposition,
    tri: &Tripartite,
    transfer: &Transfer,
    opts: &MergeOptions,
    k: usize,
    required: usize,
    strategy: MergeStrategy,
    ancilla_dim: usize,
    povm: CMat,
) -> Result<(MergeProtocol, bool)> {
    let roles = &dec.roles;
    let y = tri.target();
    let rows: Vec<usize> = (0..povm.nrows()).collect();
    let per: Vec<(f64, Option<CMat>)> = opts.policy.map(&rows, |&m| {
        let bra: Vec<C64> = povm.row(m).iter().map(|z| z.conj()).collect();
        let x = tri.post_measurement(&bra, k);
        let p = x.norm_squared();
        if p < ZERO_PROBABILITY {
            (p, None)
        } else {
            let xn = x.unscale(p.sqrt());
            (p, Some(alignment(&xn, &y, opts.rank_tol)))
        }
    });
    let probabilities = per.iter().map(|x| x.0).collect();
    let corrections = per.into_iter().map(|x| x.1).collect();

    let resource = (k > 1).then(|| transfer.resource(k));
    let mut correction_inputs = dec.b_registers.clone();
    let mut correction_outputs: Vec<Register> =
        dec.a_registers.iter().map(|r| r.clone().owned_by(transfer.receiver.clone())).collect();
    correction_outputs.extend(dec.b_registers.iter().cloned());
    if let Some((_, b0)) = &resource {
        correction_inputs.push(b0.clone());
    }
    let mut proto = MergeProtocol {
        k,
        required_k: required,
        strategy,
        ancilla_dim,
        roles: roles.clone(),
        blocks: dec.summary(),
        reference_registers: dec.reference_registers.clone(),
        a_registers: dec.a_registers.clone(),
        b_registers: dec.b_registers.clone(),
        resource,
        povm,
        corrections,
        probabilities,
        correction_inputs,
        correction_outputs,
        verification: MergeReport::default(),
    };
    proto.verification = verify_merge(&proto, psi, opts.verify_tol, opts.policy)?;
    let passed = proto.verification.passed;
    Ok((proto, passed))
}

/// `C ⊗ I_K`.
fn kron_left(c: &CMat, k: usize) -> CMat {
    linalg::kron(c, &linalg::identity(k))
}

/// Decompose and build in one go.
pub fn build_merge_protocol<R: Rng + ?Sized>(
    psi: &PureState,
    roles: &KiRoles,
    transfer: &Transfer,
    opts: &MergeOptions,
    rng: &mut R,
) -> Result<MergeProtocol> {
    let dec = ki::ki_decompose(psi, roles, opts.rank_tol, rng)?;
    build_merge_protocol_from(psi, &dec, transfer, opts, rng)
}

/// Execute every outcome against `ψ`: report the worst deviation of
/// `(<m| ⊗ U_m)(ψ ⊗ Φ_K)` from `√p(m) ψ^{R′B′B}` (normalized by `√p`,
/// modulo a per-branch phase), completeness and isometry residuals.
pub fn verify_merge(proto: &MergeProtocol, psi: &PureState, tol: f64, policy: ExecPolicy) -> Result<MergeReport> {
    let tri = Tripartite::new(psi, &proto.roles)?;
    let y = tri.target();
    let n = proto.povm.nrows();
    let completeness = linalg::max_abs(&(proto.povm.adjoint() * &proto.povm - linalg::identity(proto.povm.ncols())));
    let rows: Vec<usize> = (0..n).collect();
    let res: Vec<(f64, f64, f64, bool)> = policy.map(&rows, |&m| {
        let bra: Vec<C64> = proto.povm.row(m).iter().map(|z| z.conj()).collect();
        let x = tri.post_measurement(&bra, proto.k);
        let p = x.norm_squared();
        if p < ZERO_PROBABILITY {
            return (p, 0.0, 0.0, true);
        }
        match &proto.corrections[m] {
            None => (p, f64::INFINITY, 0.0, false),
            Some(u) => {
                let z = (x * u.transpose()).unscale(p.sqrt());
                let ov = y.iter().zip(z.iter()).map(|(a, b)| a.conj() * b).sum::<C64>();
                let phase = if ov.norm() > 0.0 { ov.conj() / ov.norm() } else { C64::new(1.0, 0.0) };
                let dev = (z * phase - &y).norm();
                (p, dev, tensor::isometry_residual(u), true)
            }
        }
    });
    let max_deviation = res.iter().map(|r| r.1).fold(0.0, f64::max);
    let isometry_residual = res.iter().map(|r| r.2).fold(0.0, f64::max);
    let probability_sum: f64 = res.iter().map(|r| r.0).sum();
    let possible = res.iter().filter(|r| r.0 >= ZERO_PROBABILITY).count();
    let passed = res.iter().all(|r| r.3)
        && max_deviation <= tol
        && completeness <= tol
        && isometry_residual <= tol
        && (probability_sum - 1.0).abs() <= 1e-9;
    Ok(MergeReport {
        outcomes: n,
        possible_outcomes: possible,
        max_deviation,
        completeness_residual: completeness,
        isometry_residual,
        probability_sum,
        passed,
    })
}

impl MergeReport {
    /// Largest of the deviation, completeness and isometry residuals.
    pub fn worst_residual(&self) -> f64 {
        self.max_deviation.max(self.completeness_residual).max(self.isometry_residual)
    }
}

impl MergeProtocol {
    pub fn outcomes(&self) -> usize {
        self.povm.nrows()
    }

    fn measured(&self) -> Vec<Register> {
        let mut m = self.a_registers.clone();
        if let Some((a0, _)) = &self.resource {
            m.push(a0.clone());
        }
        m
    }

    /// Attach `Φ⁺_K` to the state (no-op for `K = 1`).
    pub fn prepare(&self, state: &PureState) -> Result<PureState> {
        match &self.resource {
            Some((a0, b0)) => tensor::tensor_product(state, &PureState::max_entangled(a0.clone(), b0.clone())?),
            None => Ok(state.clone()),
        }
    }

    /// Project a prepared state on outcome `m` (unnormalized); leaves
    /// `R′`, `B` and `B0`.
    pub fn measure(&self, prepared: &PureState, m: usize) -> Result<PureState> {
        let regs = self.measured();
        let v: Vec<C64> = self.povm.row(m).iter().copied().collect();
        let ids: Vec<String> = regs.iter().map(|r| r.id.clone()).collect();
        apply_map(prepared, &LinearMap::bra(regs, &v)?, &ids, None)
    }

    /// Apply `U_m` on the receiving side.
    pub fn correct(&self, measured: &PureState, m: usize) -> Result<PureState> {
        let u = self.corrections[m].as_ref().ok_or(Error::ZeroProbabilityBranch(self.probabilities[m]))?;
        let map = LinearMap::new(self.correction_inputs.clone(), self.correction_outputs.clone(), u.clone())?;
        let ids: Vec<String> = self.correction_inputs.iter().map(|r| r.id.clone()).collect();
        if ids.is_empty() {
            // nothing on B's side yet: the outputs are freshly created
            let fresh = PureState::from_amplitudes(self.correction_outputs.clone(), u.column(0).iter().copied().collect())?;
            return tensor::tensor_product(measured, &fresh);
        }
        apply_map(measured, &map, &ids, None)
    }

    /// Run the protocol on `state` for the selected outcomes.
    pub fn execute(&self, state: &PureState, selector: &BranchSelector) -> Result<Vec<OutcomeBranch>> {
        let prepared = self.prepare(state)?;
        let chosen: Vec<usize> = match selector {
            BranchSelector::All => (0..self.outcomes()).filter(|&m| self.probabilities[m] >= ZERO_PROBABILITY).collect(),
            BranchSelector::Fixed(list) => {
                let m = *list.first().ok_or_else(|| Error::Parse("empty outcome list".into()))?;
                if m >= self.outcomes() || self.probabilities[m] < ZERO_PROBABILITY {
                    return Err(Error::ZeroProbabilityBranch(self.probabilities.get(m).copied().unwrap_or(0.0)));
                }
                vec![m]
            }
            BranchSelector::Sample { n, seed } => {
                use rand::SeedableRng;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(*seed);
                (0..*n).map(|_| sample_index(&self.probabilities, &mut rng)).collect()
            }
        };
        chosen
            .into_iter()
            .map(|m| {
                let measured = self.measure(&prepared, m)?;
                let p = measured.norm_sqr();
                let out = self.correct(&measured, m)?;
                Ok(OutcomeBranch { outcomes: vec![m], probability: p, state: out.normalized() })
            })
            .collect()
    }
}

/// Draw an index with the given (normalized) probabilities.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &p) in probs.iter().enumerate() {
        if u < p {
            return i;
        }
        u -= p;
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, random_complex_gaussian};
    use crate::tensor::{phase_free_overlap, tensor_product, Owner};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn reg(id: &str, d: usize, owner: &str) -> Register {
        Register::physical(id, d, owner)
    }

    fn random_state(regs: Vec<Register>, rng: &mut ChaCha8Rng) -> PureState {
        let d = regs.iter().map(|x| x.dim).product();
        let v = random_complex_gaussian(d, 1, rng);
        PureState::from_amplitudes(regs, v.iter().copied().collect()).unwrap().normalized()
    }

    fn roles() -> KiRoles {
        KiRoles::new(&["R"], &["A"], &["B"])
    }

    fn transfer() -> Transfer {
        Transfer::new("a", "b", "m")
    }

    fn check(psi: &PureState, roles: &KiRoles, opts: &MergeOptions) -> MergeProtocol {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = build_merge_protocol(psi, roles, &transfer(), opts, &mut rng).unwrap();
        let rep = verify_merge(&p, psi, 1e-9, ExecPolicy::Sequential).unwrap();
        assert!(rep.passed, "{rep:?}");
        let branches = p.execute(psi, &BranchSelector::All).unwrap();
        let total: f64 = branches.iter().map(|b| b.probability).sum();
        assert!((total - 1.0).abs() < 1e-10);
        for b in &branches {
            assert!((phase_free_overlap(psi, &b.state).unwrap() - 1.0).abs() < 1e-9);
            for id in &roles.a {
                assert_eq!(b.state.register(id).unwrap().owner, Owner::party("b"));
            }
        }
        p
    }

    #[test]
    fn teleportation_is_a_single_block_merge() {
        let psi = tensor_product(
            &PureState::max_entangled(Register::reference("R", 2), reg("A", 2, "a")).unwrap(),
            &PureState::basis(vec![reg("B", 2, "b")], &[0]).unwrap(),
        )
        .unwrap();
        let p = check(&psi, &roles(), &MergeOptions::default());
        assert_eq!((p.k, p.strategy), (2, MergeStrategy::SingleBlock));
        assert_eq!(p.outcomes(), 4);
    }

    #[test]
    fn pure_junk_costs_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random_state(vec![reg("A", 2, "a"), reg("B", 3, "b")], &mut rng);
        let f = random_state(vec![Register::reference("R", 2)], &mut rng);
        let psi = tensor_product(&f, &w).unwrap();
        let p = check(&psi, &roles(), &MergeOptions::default());
        assert_eq!((p.k, p.strategy), (1, MergeStrategy::Computational));
        let built = MergeOptions { prefer_computational: false, ..MergeOptions::default() };
        let p = check(&psi, &roles(), &built);
        assert_eq!((p.k, p.strategy), (1, MergeStrategy::SingleBlock));
    }

    #[test]
    fn classical_blocks_use_scalar_fourier() {
        // (|000> + |111>)/√2 on R, A, B: two blocks, no resource
        let mut amps = vec![ZERO; 8];
        amps[0] = c(0.5f64.sqrt(), 0.0);
        amps[7] = c(0.5f64.sqrt(), 0.0);
        let psi = PureState::new(vec![Register::reference("R", 2), reg("A", 2, "a"), reg("B", 2, "b")], amps).unwrap();
        let p = check(&psi, &roles(), &MergeOptions::default());
        assert_eq!((p.k, p.strategy), (1, MergeStrategy::ScalarFourier));
        // measurement in the |±> basis
        let h = 0.5f64.sqrt();
        for m in 0..2 {
            assert!((p.povm[(m, 0)].norm() - h).abs() < 1e-12);
            assert!((p.povm[(m, 1)].norm() - h).abs() < 1e-12);
        }
    }

    #[test]
    fn generic_states_and_fallback() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let psi = random_state(vec![Register::reference("R", 3), reg("A", 3, "a"), reg("B", 2, "b")], &mut rng);
            let tight = check(&psi, &roles(), &MergeOptions::default());
            let fb = check(&psi, &roles(), &MergeOptions { mode: MergeMode::Fallback, ..Default::default() });
            assert_eq!(fb.strategy, MergeStrategy::FallbackTeleport);
            assert!(tight.k <= fb.k);
            // forcing a larger resource still works
            if tight.k < 3 {
                let big = check(&psi, &roles(), &MergeOptions { k: Some(tight.k + 1), ..Default::default() });
                assert_eq!(big.k, tight.k + 1);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let over = MergeOptions { k: Some(4), ..Default::default() };
            assert!(build_merge_protocol(&psi, &roles(), &transfer(), &over, &mut rng).is_err());
        }
    }

    #[test]
    fn unequal_block_sizes() {
        // block 0: junk (0.7, 0.3) ⊗ |0>^R; block 1: R-correlated qubit
        let (p0, p1) = (0.4f64, 0.6f64);
        let mut amps = vec![ZERO; 2 * 4 * 4];
        let idx = |r: usize, a: usize, b: usize| (r * 4 + a) * 4 + b;
        amps[idx(0, 0, 0)] = c((p0 * 0.7).sqrt(), 0.0);
        amps[idx(0, 1, 1)] = c((p0 * 0.3).sqrt(), 0.0);
        amps[idx(0, 2, 2)] = c((p1 / 2.0).sqrt(), 0.0);
        amps[idx(1, 3, 2)] = c((p1 / 2.0).sqrt(), 0.0);
        let psi = PureState::new(vec![Register::reference("R", 2), reg("A", 4, "a"), reg("B", 4, "b")], amps).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dec = ki::ki_decompose(&psi, &roles(), 1e-8, &mut rng).unwrap();
        assert_eq!(dec.blocks.len(), 2);
        assert_eq!(choose_strategy(&dec, MergeMode::Tight), MergeStrategy::Synthesized);
        assert_eq!(ki::merge_cost_k(&dec), 2);
        let p = check(&psi, &roles(), &MergeOptions::default());
        assert_eq!(p.k, 2);
        let strict = MergeOptions { allow_ancilla: false, max_iterations: 50, max_restarts: 2, ..Default::default() };
        match build_merge_protocol(&psi, &roles(), &transfer(), &strict, &mut rng) {
            Ok(p) => assert!(verify_merge(&p, &psi, 1e-9, ExecPolicy::Sequential).unwrap().passed),
            Err(e) => assert!(matches!(e, Error::SynthesisFailed(_)), "{e}"),
        }
    }

    #[test]
    fn complex_support_inside_a_larger_sender() {
        // ρ^A has rank 2 inside a 4-dimensional A, on a complex subspace, and
        // the receiver holds nothing yet
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = linalg::random_isometry(4, 2, &mut rng);
        let amps = (0..8).map(|i| v[(i % 4, i / 4)] / 2f64.sqrt()).collect();
        let psi = PureState::new(vec![Register::reference("R", 2), reg("A", 4, "a")], amps).unwrap();
        let roles = KiRoles::new(&["R"], &["A"], &[] as &[&str]);
        let p = check(&psi, &roles, &MergeOptions { prefer_computational: false, ..MergeOptions::default() });
        assert_eq!(p.k, 2);
    }

    #[test]
    fn corrupted_correction_is_caught() {
        let psi = PureState::max_entangled(Register::reference("R", 2), reg("A", 2, "a")).unwrap();
        let psi = tensor_product(&psi, &PureState::basis(vec![reg("B", 2, "b")], &[1]).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = build_merge_protocol(&psi, &roles(), &transfer(), &MergeOptions::default(), &mut rng).unwrap();
        let u = p.corrections[0].clone().unwrap();
        let rot = linalg::random_unitary(u.nrows(), &mut rng);
        p.corrections[0] = Some(rot * u);
        let rep = verify_merge(&p, &psi, 1e-9, ExecPolicy::Sequential).unwrap();
        assert!(!rep.passed);
        assert!(rep.max_deviation >= 0.1, "{rep:?}");
    }

    #[test]
    fn frames_are_tight_and_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cases: Vec<(Vec<f64>, usize)> = vec![
            (vec![0.5, 0.3, 0.2], 2),
            (vec![0.25; 4], 2),
            (vec![0.3, 0.3, 0.2, 0.1, 0.1], 3),
            (vec![0.5, 0.5, 0.0, 0.0], 2),
        ];
        for (w, d) in cases {
            let h = flat_tight_frame(&w, d, &mut rng).unwrap();
            let mut s = CMat::zeros(d, d);
            for (i, v) in h.iter().enumerate() {
                assert!(v.iter().all(|z| (z.norm() - 1.0 / (d as f64).sqrt()).abs() < 1e-12));
                let col = CMat::from_column_slice(d, 1, v);
                s += &col * col.adjoint() * c(w[i], 0.0);
            }
            assert!(linalg::max_abs(&(s - linalg::identity(d).scale(1.0 / d as f64))) < 1e-12);
        }
        assert!(flat_tight_frame(&[0.6, 0.4], 2, &mut rng).is_none());
    }
}
