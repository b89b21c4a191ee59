//! Koashi-Imoto decomposition of a tripartite pure state `ψ^{R′AB}`:
//!
//! ```text
//! ψ = ⊕_j √p_j |ω_j>^{a_j^L b_j^L} ⊗ |φ_j>^{R′ a_j^R b_j^R}
//! ```
//!
//! The part of `A` correlated with `R′` is the algebra generated by the
//! operators `ρ_A^{-1/2} tr_B[<r|ψ><ψ|r′>] ρ_A^{-1/2}`, closed under the
//! modular flow of `ρ_A`. Its commutant carries the junk factors, its center
//! the block labels. Every decomposition is certified by rebuilding `ψ`.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, c, canonical_phase, herm_eigen, kron, psd_null_space, CMat, C64, ZERO};
use crate::tensor::{self, Owner, PureState, Register, Role};

/// Reconstruction and isometry tolerance for emitted decompositions.
pub const KI_VERIFY_TOL: f64 = 1e-9;
/// Two modular frequencies closer than this (in `ln λ`) are identified.
const FREQ_TOL: f64 = 1e-6;
/// Null-space threshold for commutator Gram operators.
const COMMUTANT_TOL: f64 = 1e-9;
/// Eigenvalue gaps of a random algebra element, relative to its spread,
/// below which the draw is rejected.
const MIN_GAP: f64 = 0.02;
const CLUSTER_TOL: f64 = 1e-6;
const MAX_DRAWS: usize = 16;

/// Which registers of `ψ` play `R′`, `A` and `B`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct KiRoles {
    pub reference: Vec<String>,
    pub a: Vec<String>,
    pub b: Vec<String>,
}

impl KiRoles {
    pub fn new<S: AsRef<str>>(reference: &[S], a: &[S], b: &[S]) -> Self {
        let own = |v: &[S]| v.iter().map(|s| s.as_ref().to_string()).collect();
        KiRoles { reference: own(reference), a: own(a), b: own(b) }
    }

    fn all(&self) -> Vec<&str> {
        self.reference.iter().chain(&self.a).chain(&self.b).map(|s| s.as_str()).collect()
    }

    fn check(&self, psi: &PureState) -> Result<()> {
        if self.a.is_empty() {
            return Err(Error::ShapeMismatch("A-set of a decomposition must be nonempty".into()));
        }
        let mut mine = self.all();
        let mut theirs = psi.ids();
        mine.sort_unstable();
        theirs.sort_unstable();
        if mine != theirs {
            return Err(Error::ShapeMismatch(format!(
                "roles {mine:?} do not partition the registers {theirs:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct KiBlock {
    pub j: usize,
    pub p: f64,
    pub dim_l_a: usize,
    pub dim_r_a: usize,
    pub dim_l_b: usize,
    pub dim_r_b: usize,
    /// State on `(aL, bL)`.
    pub omega: PureState,
    /// State on `(R′..., aR, bR)`.
    pub phi: PureState,
    pub lambda0: f64,
    /// Schmidt coefficients squared of `ω_j`, descending.
    pub junk_weights: Vec<f64>,
    /// Columns: Schmidt vectors of `ω_j` on `a_j^L`.
    pub junk_basis: CMat,
    /// `dA x (dimL_A * dimR_A)`, column `l * dimR_A + k` is `|l>|k>`.
    pub embed_a: CMat,
    /// `dB x (dimL_B * dimR_B)`, column `a * dimR_B + c` is `|a>|c>`.
    pub embed_b: CMat,
}

#[derive(Clone, Debug)]
pub struct KiDecomposition {
    pub roles: KiRoles,
    pub reference_registers: Vec<Register>,
    pub a_registers: Vec<Register>,
    pub b_registers: Vec<Register>,
    pub blocks: Vec<KiBlock>,
    /// Orthonormal basis of `supp ρ^A` as columns.
    pub support_a: CMat,
    /// Eigenvalues of `ρ^A` on the support, descending.
    pub spectrum_a: Vec<f64>,
    pub reconstruction_error: f64,
}

/// Summary row used by reports and the CLI.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockSummary {
    pub j: usize,
    pub p: f64,
    pub dim_l_a: usize,
    pub dim_r_a: usize,
    pub dim_l_b: usize,
    pub dim_r_b: usize,
    pub lambda0: f64,
}

impl KiDecomposition {
    pub fn summary(&self) -> Vec<BlockSummary> {
        self.blocks
            .iter()
            .map(|b| BlockSummary {
                j: b.j,
                p: b.p,
                dim_l_a: b.dim_l_a,
                dim_r_a: b.dim_r_a,
                dim_l_b: b.dim_l_b,
                dim_r_b: b.dim_r_b,
                lambda0: b.lambda0,
            })
            .collect()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let d = |v: &[Register]| v.iter().map(|r| r.dim).product();
        (d(&self.reference_registers), d(&self.a_registers), d(&self.b_registers))
    }

    pub fn rank_a(&self) -> usize {
        self.support_a.ncols()
    }
}

/// `ψ` as `dR′ x dA` matrices `M_r` over `(A, B)` with rows `a`, columns `b`.
fn slices(amps: &[C64], dr: usize, da: usize, db: usize) -> Vec<CMat> {
    (0..dr)
        .map(|r| CMat::from_fn(da, db, |a, b| amps[(r * da + a) * db + b]))
        .collect()
}

/// Group sorted values into runs whose consecutive gaps are at most `tol`;
/// returns the run id of every input position.
fn cluster_ids(values: &[f64], tol: f64) -> (Vec<usize>, usize) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ids = vec![0; values.len()];
    let mut cur = 0;
    for w in 0..idx.len() {
        if w > 0 && values[idx[w]] - values[idx[w - 1]] > tol {
            cur += 1;
        }
        ids[idx[w]] = cur;
    }
    (ids, if values.is_empty() { 0 } else { cur + 1 })
}

fn unvec(v: &[C64], n: usize) -> CMat {
    CMat::from_column_slice(n, n, v)
}

/// `Σ_g L_g^† L_g` with `L_g vec(Y) = vec([g, Y])` (column-major vec).
fn commutator_gram(gens: &[CMat], n: usize) -> CMat {
    let mut p = CMat::zeros(n, n);
    let mut q = CMat::zeros(n, n);
    let mut w = CMat::zeros(n * n, n * n);
    for g in gens {
        let gc = g.map(|z| z.conj());
        p += g.adjoint() * g;
        q += &gc * g.transpose();
        w += kron(&gc, g);
    }
    let id = linalg::identity(n);
    kron(&id, &p) + kron(&q, &id) - &w - w.adjoint()
}

fn null_basis(gram: &CMat, n: usize) -> Vec<CMat> {
    let ns = psd_null_space(gram, COMMUTANT_TOL);
    (0..ns.ncols())
        .map(|k| unvec(ns.column(k).as_slice(), n))
        .collect()
}

fn random_hermitian_in<R: Rng + ?Sized>(basis: &[CMat], rng: &mut R) -> CMat {
    let n = basis[0].nrows();
    let coeffs = linalg::random_complex_gaussian(basis.len(), 1, rng);
    let mut m = CMat::zeros(n, n);
    for (k, b) in basis.iter().enumerate() {
        m += b * coeffs[k];
    }
    &m + m.adjoint()
}

fn random_element<R: Rng + ?Sized>(basis: &[CMat], rng: &mut R) -> CMat {
    let n = basis[0].nrows();
    let coeffs = linalg::random_complex_gaussian(basis.len(), 1, rng);
    let mut m = CMat::zeros(n, n);
    for (k, b) in basis.iter().enumerate() {
        m += b * coeffs[k];
    }
    m
}

/// Eigenspaces of a Hermitian matrix grouped by clustered eigenvalues, in
/// ascending eigenvalue order.
fn eigenspaces(h: &CMat) -> Vec<CMat> {
    let (vals, vecs) = herm_eigen(h);
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let (ids, n) = cluster_ids(&vals, CLUSTER_TOL * scale);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, &g) in ids.iter().enumerate() {
        groups[g].push(i);
    }
    groups
        .into_iter()
        .map(|g| {
            let mut m = CMat::zeros(h.nrows(), g.len());
            for (k, &i) in g.iter().enumerate() {
                m.set_column(k, &vecs.column(i));
            }
            m
        })
        .collect()
}

/// Smallest gap between the eigenvalues belonging to different spaces must be
/// a fair fraction of the spread; otherwise noise in `h` mixes the spaces.
fn well_separated(h: &CMat, spaces: &[CMat]) -> bool {
    if spaces.len() < 2 {
        return true;
    }
    let mut means: Vec<f64> = spaces
        .iter()
        .map(|e| (e.adjoint() * h * e).trace().re / e.ncols() as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let spread = means[means.len() - 1] - means[0];
    means.windows(2).all(|w| w[1] - w[0] > MIN_GAP * spread)
}

fn hstack(ms: &[CMat], rows: usize) -> CMat {
    let cols = ms.iter().map(|m| m.ncols()).sum();
    let mut out = CMat::zeros(rows, cols);
    let mut at = 0;
    for m in ms {
        out.columns_mut(at, m.ncols()).copy_from(m);
        at += m.ncols();
    }
    out
}

/// Generators of the correlated algebra on `supp ρ^A`, in the eigenbasis of
/// `ρ^A`, reduced to an orthonormal basis of their span.
fn correlated_generators(psi_r: &[CMat], lam: &[f64]) -> Vec<CMat> {
    let n = lam.len();
    // m_s = Λ^{-1/2} V^† M_s, already in eigen-coordinates
    let ns = psi_r.len();
    let nn = n * n;
    // rows (s, s'), columns vec(X_{ss'})
    let mut omega = CMat::zeros(ns * ns, nn);
    for s in 0..ns {
        for t in 0..ns {
            let x = &psi_r[s] * psi_r[t].adjoint();
            for (k, z) in x.iter().enumerate() {
                omega[(s * ns + t, k)] = *z;
            }
        }
    }
    let mut sx = omega.transpose() * omega.map(|z| z.conj());
    // modular frequency of entry (i, j) is ln λ_i - ln λ_j
    let logs: Vec<f64> = lam.iter().map(|v| v.ln()).collect();
    let freq: Vec<f64> = (0..nn).map(|k| logs[k % n] - logs[k / n]).collect();
    let (fid, _) = cluster_ids(&freq, FREQ_TOL);
    for p in 0..nn {
        for q in 0..nn {
            if fid[p] != fid[q] {
                sx[(p, q)] = ZERO;
            }
        }
    }
    let (vals, vecs) = herm_eigen(&sx);
    let top = vals.first().copied().unwrap_or(0.0);
    (0..nn)
        .filter(|&k| vals[k] > 1e-14 * top)
        .map(|k| unvec(vecs.column(k).as_slice(), n))
        .collect()
}

/// Split a block (columns of `pj`, orthonormal in support coordinates) into
/// `L ⊗ R` using the commutant restricted to it. Returns the aligned basis
/// with column `l * dR + k` and `(dL, dR)`.
fn factor_block<R: Rng + ?Sized>(pj: &CMat, comm: &[CMat], rng: &mut R) -> Option<(CMat, usize, usize)> {
    let nj = pj.ncols();
    let restricted: Vec<CMat> = comm.iter().map(|y| pj.adjoint() * y * pj).collect();
    let restricted: Vec<CMat> = restricted.into_iter().filter(|m| linalg::max_abs(m) > 1e-12).collect();
    if restricted.is_empty() {
        return None;
    }
    for _ in 0..MAX_DRAWS {
        let h = random_hermitian_in(&restricted, rng);
        let spaces = eigenspaces(&h);
        let dl = spaces.len();
        let dr = spaces[0].ncols();
        if spaces.iter().any(|e| e.ncols() != dr) || dl * dr != nj || !well_separated(&h, &spaces) {
            continue;
        }
        if dl == 1 {
            return Some((spaces[0].clone(), 1, dr));
        }
        let z = random_element(&restricted, rng);
        let e1 = &spaces[0];
        let mut cols = vec![e1.clone()];
        let mut ok = true;
        for el in &spaces[1..] {
            let img = el * (el.adjoint() * &z * e1);
            let scale = img.column(0).norm();
            if scale < 1e-6 {
                ok = false;
                break;
            }
            cols.push(img.unscale(scale));
        }
        if !ok {
            continue;
        }
        let aligned = hstack(&cols, nj);
        if tensor::isometry_residual(&aligned) > 1e-8 {
            continue;
        }
        return Some((aligned, dl, dr));
    }
    None
}

/// Fix the phases of an `L ⊗ R` basis so that `|1>|k>` and `|l>|1>` have a
/// real positive first significant entry, keeping the product structure.
fn canonical_block_phases(e: &mut CMat, dl: usize, dr: usize) {
    let phase_of = |v: Vec<C64>| {
        let mut w = v.clone();
        canonical_phase(&mut w);
        v.iter()
            .zip(&w)
            .find(|(a, _)| a.norm() > 1e-9)
            .map(|(a, b)| b / a)
            .unwrap_or(c(1.0, 0.0))
    };
    let col = |e: &CMat, i: usize| e.column(i).iter().copied().collect::<Vec<_>>();
    let kph: Vec<C64> = (0..dr).map(|k| phase_of(col(e, k))).collect();
    for l in 0..dl {
        for k in 0..dr {
            let idx = l * dr + k;
            let s = kph[k];
            for i in 0..e.nrows() {
                e[(i, idx)] *= s;
            }
        }
    }
    for l in 1..dl {
        let ph = phase_of(col(e, l * dr));
        for k in 0..dr {
            let idx = l * dr + k;
            for i in 0..e.nrows() {
                e[(i, idx)] *= ph;
            }
        }
    }
}

/// Koashi-Imoto decomposition. `rank_tol` is the relative eigenvalue cutoff
/// for supports; randomness only picks generic algebra elements.
pub fn ki_decompose<R: Rng + ?Sized>(
    psi: &PureState,
    roles: &KiRoles,
    rank_tol: f64,
    rng: &mut R,
) -> Result<KiDecomposition> {
    roles.check(psi)?;
    if (psi.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::ShapeMismatch(format!("state has norm {}", psi.norm())));
    }
    let g = psi.grouped(&roles.all())?;
    let nr = roles.reference.len();
    let na = roles.a.len();
    let regs = g.registers();
    let ref_regs = regs[..nr].to_vec();
    let a_regs = regs[nr..nr + na].to_vec();
    let b_regs = regs[nr + na..].to_vec();
    let dim = |v: &[Register]| v.iter().map(|r| r.dim).product::<usize>();
    let (dr, da, db) = (dim(&ref_regs), dim(&a_regs), dim(&b_regs));
    let amps = g.amplitudes();
    let m = slices(amps, dr, da, db);

    let mut rho_a = CMat::zeros(da, da);
    for mr in &m {
        rho_a += mr * mr.adjoint();
    }
    let (vals, vecs) = herm_eigen(&rho_a);
    let top = vals[0];
    if let Some(v) = vals.iter().find(|&&v| v <= rank_tol * top && v > rank_tol * 1e-3 * top) {
        return Err(Error::NumericalDegeneracy(format!(
            "eigenvalue {v:.3e} of the A marginal is within the rank tolerance band"
        )));
    }
    let support: Vec<usize> = (0..da).filter(|&i| vals[i] > rank_tol * top).collect();
    let n = support.len();
    let lam: Vec<f64> = support.iter().map(|&i| vals[i]).collect();
    let mut v = CMat::zeros(da, n);
    for (k, &i) in support.iter().enumerate() {
        v.set_column(k, &vecs.column(i));
    }

    // compress R′ to the support of its marginal
    let big = CMat::from_fn(dr, da * db, |r, k| amps[r * da * db + k]);
    let svd = linalg::svd(&big);
    let u = svd.u;
    let smax = svd.s.first().copied().unwrap_or(0.0);
    let inv_sqrt = CMat::from_diagonal(&nalgebra::DVector::from_iterator(
        n,
        lam.iter().map(|&l| c(1.0 / l.sqrt(), 0.0)),
    ));
    let psi_r: Vec<CMat> = (0..u.ncols())
        .filter(|&s| svd.s[s] > 1e-12 * smax)
        .map(|s| {
            let mut ms = CMat::zeros(da, db);
            for r in 0..dr {
                ms += &m[r] * u[(r, s)].conj();
            }
            &inv_sqrt * v.adjoint() * ms
        })
        .collect();

    let gens = correlated_generators(&psi_r, &lam);
    let comm = null_basis(&commutator_gram(&gens, n), n);
    if comm.is_empty() {
        return Err(Error::NumericalDegeneracy("empty commutant".into()));
    }
    let mut all = gens.clone();
    all.extend(comm.iter().cloned());
    let center = null_basis(&commutator_gram(&all, n), n);
    if center.is_empty() {
        return Err(Error::NumericalDegeneracy("empty center".into()));
    }

    let mut projections = None;
    for _ in 0..MAX_DRAWS {
        let h = random_hermitian_in(&center, rng);
        let spaces = eigenspaces(&h);
        if spaces.len() == center.len() && well_separated(&h, &spaces) {
            projections = Some(spaces);
            break;
        }
    }
    let projections = projections.ok_or_else(|| {
        Error::NumericalDegeneracy("central projections could not be separated".into())
    })?;

    let mut raw = Vec::new();
    for pj in &projections {
        let (basis, dl, drr) = factor_block(pj, &comm, rng).ok_or_else(|| {
            Error::NumericalDegeneracy("block does not factor as a tensor product".into())
        })?;
        let mut emb = &v * pj * basis;
        canonical_block_phases(&mut emb, dl, drr);
        raw.push((emb, dl, drr));
    }

    let owner_a = a_regs[0].owner.clone();
    let owner_b = b_regs.first().map(|r| r.owner.clone()).unwrap_or(Owner::party("B"));
    let mut blocks = Vec::new();
    for (emb_a, dl, drr) in raw {
        let cr: Vec<CMat> = m.iter().map(|mr| emb_a.adjoint() * mr).collect();
        let p: f64 = cr.iter().map(|x| x.norm_squared()).sum();
        if p < 1e-14 {
            continue;
        }
        let sp = p.sqrt();
        // F[(r,k),(l,b)] and G[l,(r,k,b)]
        let f = CMat::from_fn(dr * drr, dl * db, |rk, lb| {
            let (r, k, l, b) = (rk / drr, rk % drr, lb / db, lb % db);
            cr[r][(l * drr + k, b)] / sp
        });
        let gl = CMat::from_fn(dl, dr * drr * db, |l, x| {
            let (r, k, b) = (x / (drr * db), (x / db) % drr, x % db);
            cr[r][(l * drr + k, b)] / sp
        });
        let (mu_all, ell_all) = herm_eigen(&(&gl * gl.adjoint()));
        let mtop = mu_all[0];
        let keep_l: Vec<usize> = (0..dl).filter(|&i| mu_all[i] > rank_tol * mtop).collect();
        let fsvd = linalg::svd(&f);
        let fu = fsvd.u;
        let ntop = fsvd.s[0].powi(2);
        let nu_idx: Vec<usize> = (0..fsvd.s.len()).filter(|&i| fsvd.s[i].powi(2) > rank_tol * ntop).collect();

        let mut ell = CMat::zeros(dl, keep_l.len());
        let mut mu = Vec::new();
        for (k, &i) in keep_l.iter().enumerate() {
            let mut col: Vec<C64> = ell_all.column(i).iter().copied().collect();
            canonical_phase(&mut col);
            ell.set_column(k, &nalgebra::DVector::from_vec(col));
            mu.push(mu_all[i]);
        }
        let mut chi = CMat::zeros(dr * drr, nu_idx.len());
        let mut nu = Vec::new();
        for (k, &i) in nu_idx.iter().enumerate() {
            let mut col: Vec<C64> = fu.column(i).iter().copied().collect();
            canonical_phase(&mut col);
            chi.set_column(k, &nalgebra::DVector::from_vec(col));
            nu.push(fsvd.s[i].powi(2));
        }
        let (nl, nc) = (mu.len(), nu.len());
        let mut emb_b = CMat::zeros(db, nl * nc);
        for a in 0..nl {
            for cc in 0..nc {
                let s = 1.0 / (p * mu[a] * nu[cc]).sqrt();
                for b in 0..db {
                    let mut acc = ZERO;
                    for r in 0..dr {
                        for l in 0..dl {
                            for k in 0..drr {
                                acc += ell[(l, a)].conj() * chi[(r * drr + k, cc)].conj() * cr[r][(l * drr + k, b)];
                            }
                        }
                    }
                    emb_b[(b, a * nc + cc)] = acc * s;
                }
            }
        }
        let mut om = vec![ZERO; dl * nl];
        for l in 0..dl {
            for a in 0..nl {
                om[l * nl + a] = ell[(l, a)] * mu[a].sqrt();
            }
        }
        let mut ph = vec![ZERO; dr * drr * nc];
        for rk in 0..dr * drr {
            for cc in 0..nc {
                ph[rk * nc + cc] = chi[(rk, cc)] * nu[cc].sqrt();
            }
        }
        let omega_regs = vec![
            Register::new("aL", dl, owner_a.clone(), Role::Work),
            Register::new("bL", nl, owner_b.clone(), Role::Work),
        ];
        let mut phi_regs = ref_regs.clone();
        phi_regs.push(Register::new("aR", drr, owner_a.clone(), Role::Work));
        phi_regs.push(Register::new("bR", nc, owner_b.clone(), Role::Work));
        let omega = PureState::from_amplitudes(omega_regs, om)?.normalized();
        let phi = PureState::from_amplitudes(phi_regs, ph)?.normalized();
        blocks.push(KiBlock {
            j: 0,
            p,
            dim_l_a: dl,
            dim_r_a: drr,
            dim_l_b: nl,
            dim_r_b: nc,
            omega,
            phi,
            lambda0: mu.iter().fold(0.0f64, |x, &y| x.max(y)),
            junk_weights: mu,
            junk_basis: ell,
            embed_a: emb_a,
            embed_b: emb_b,
        });
    }

    blocks.sort_by(|x, y| {
        y.p.total_cmp(&x.p)
            .then(x.dim_r_a.cmp(&y.dim_r_a))
            .then(x.dim_l_a.cmp(&y.dim_l_a))
    });
    for (j, b) in blocks.iter_mut().enumerate() {
        b.j = j;
    }

    let mut dec = KiDecomposition {
        roles: roles.clone(),
        reference_registers: ref_regs,
        a_registers: a_regs,
        b_registers: b_regs,
        blocks,
        support_a: v,
        spectrum_a: lam,
        reconstruction_error: 0.0,
    };
    let ea = hstack(&dec.blocks.iter().map(|b| b.embed_a.clone()).collect::<Vec<_>>(), da);
    let eb = hstack(&dec.blocks.iter().map(|b| b.embed_b.clone()).collect::<Vec<_>>(), db);
    let res = tensor::isometry_residual(&ea).max(tensor::isometry_residual(&eb));
    if res > KI_VERIFY_TOL {
        return Err(Error::NumericalDegeneracy(format!("block embeddings off by {res:.3e}")));
    }
    let rebuilt = rebuild(&dec);
    let err = amps
        .iter()
        .zip(rebuilt.amplitudes())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt();
    if err > KI_VERIFY_TOL {
        return Err(Error::NumericalDegeneracy(format!("reconstruction error {err:.3e}")));
    }
    dec.reconstruction_error = err;
    Ok(dec)
}

/// `⊕_j √p_j (E^A_j ⊗ E^B_j)|ω_j>|φ_j>` on `(R′, A, B)` in role order.
pub fn rebuild(dec: &KiDecomposition) -> PureState {
    let (dr, da, db) = dec.dims();
    let mut out = vec![ZERO; dr * da * db];
    for blk in &dec.blocks {
        let (dl, drr, nl, nc) = (blk.dim_l_a, blk.dim_r_a, blk.dim_l_b, blk.dim_r_b);
        let om = blk.omega.amplitudes();
        let ph = blk.phi.amplitudes();
        let sp = blk.p.sqrt();
        for r in 0..dr {
            let coef = CMat::from_fn(dl * drr, nl * nc, |lk, ac| {
                let (l, k, a, cc) = (lk / drr, lk % drr, ac / nc, ac % nc);
                om[l * nl + a] * ph[(r * drr + k) * nc + cc] * sp
            });
            let img = &blk.embed_a * coef * blk.embed_b.transpose();
            for a in 0..da {
                for b in 0..db {
                    out[(r * da + a) * db + b] += img[(a, b)];
                }
            }
        }
    }
    let mut regs = dec.reference_registers.clone();
    regs.extend(dec.a_registers.iter().cloned());
    regs.extend(dec.b_registers.iter().cloned());
    PureState::from_amplitudes(regs, out).expect("dimensions agree")
}

/// `⌈x⌉` that ignores floating noise just above an integer.
pub fn ceil_tol(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r.max(1.0) as usize
    } else {
        x.ceil().max(1.0) as usize
    }
}

/// Merging resource dimension `K = max_j ⌈λ0(j) dimR_A(j)⌉`.
pub fn merge_cost_k(dec: &KiDecomposition) -> usize {
    dec.blocks
        .iter()
        .map(|b| ceil_tol(b.lambda0 * b.dim_r_a as f64))
        .max()
        .unwrap_or(1)
}

/// `rank ρ^A = Σ_j dimL_A(j) dimR_A(j)`.
pub fn spread_rank_bound(dec: &KiDecomposition) -> usize {
    dec.blocks.iter().map(|b| b.dim_l_a * b.dim_r_a).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random_complex_gaussian;
    use crate::tensor::tensor_product;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn reg(id: &str, d: usize) -> Register {
        Register::physical(id, d, id)
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn random_state(regs: Vec<Register>, r: &mut ChaCha8Rng) -> PureState {
        let d = regs.iter().map(|x| x.dim).product();
        let v = random_complex_gaussian(d, 1, r);
        PureState::from_amplitudes(regs, v.iter().copied().collect()).unwrap().normalized()
    }

    #[test]
    fn uncorrelated_a_is_pure_junk() {
        let mut r = rng();
        let w = random_state(vec![reg("A", 2), reg("B", 3)], &mut r);
        let f = random_state(vec![reg("R", 2)], &mut r);
        let psi = tensor_product(&f, &w).unwrap();
        let dec = ki_decompose(&psi, &KiRoles::new(&["R"], &["A"], &["B"]), 1e-8, &mut r).unwrap();
        assert_eq!(dec.blocks.len(), 1);
        assert_eq!(dec.blocks[0].dim_r_a, 1);
        assert_eq!(dec.blocks[0].dim_l_a, 2);
        assert_eq!(merge_cost_k(&dec), 1);
    }

    #[test]
    fn bell_with_reference_is_fully_correlated() {
        let mut r = rng();
        let psi = PureState::max_entangled(Register::reference("R", 2), reg("A", 2)).unwrap();
        let dec = ki_decompose(&psi, &KiRoles::new(&["R"], &["A"], &[]), 1e-8, &mut r).unwrap();
        assert_eq!(dec.blocks.len(), 1);
        assert_eq!((dec.blocks[0].dim_l_a, dec.blocks[0].dim_r_a), (1, 2));
        assert_eq!(merge_cost_k(&dec), 2);
        assert_eq!(spread_rank_bound(&dec), 2);
    }

    #[test]
    fn classical_correlation_gives_blocks() {
        // Σ_l |l>^R |l>^{A1} |l>^{B1} |ω_l>^{A2 B2} / √2
        let mut r = rng();
        let w0 = random_state(vec![reg("x", 2), reg("B", 2)], &mut r);
        let w1 = random_state(vec![reg("x", 2), reg("B", 2)], &mut r);
        let mut amps = vec![ZERO; 2 * 4 * 4];
        for lbl in 0..2 {
            let w = if lbl == 0 { &w0 } else { &w1 };
            for xb in 0..4 {
                let (x, b) = (xb / 2, xb % 2);
                amps[(lbl * 4 + lbl * 2 + x) * 4 + lbl * 2 + b] = w.amplitudes()[xb] * (0.5f64).sqrt();
            }
        }
        let psi = PureState::new(vec![Register::reference("R", 2), reg("A", 4), reg("B", 4)], amps).unwrap();
        let dec = ki_decompose(&psi, &KiRoles::new(&["R"], &["A"], &["B"]), 1e-8, &mut r).unwrap();
        assert_eq!(dec.blocks.len(), 2);
        for b in &dec.blocks {
            assert!((b.p - 0.5).abs() < 1e-10);
            assert_eq!(b.dim_r_a, 1);
        }
        assert_eq!(merge_cost_k(&dec), 1);
    }

    #[test]
    fn generic_state_is_one_correlated_block() {
        let mut r = rng();
        let psi = random_state(vec![Register::reference("R", 4), reg("A", 2), reg("B", 3)], &mut r);
        let dec = ki_decompose(&psi, &KiRoles::new(&["R"], &["A"], &["B"]), 1e-8, &mut r).unwrap();
        assert_eq!(dec.blocks.len(), 1);
        assert_eq!((dec.blocks[0].dim_l_a, dec.blocks[0].dim_r_a), (1, 2));
        assert!(dec.reconstruction_error < 1e-10);
    }

    #[test]
    fn ceiling_ignores_noise() {
        assert_eq!(ceil_tol(1.0000000000002), 1);
        assert_eq!(ceil_tol(1.2), 2);
        assert_eq!(ceil_tol(0.3), 1);
    }
}
