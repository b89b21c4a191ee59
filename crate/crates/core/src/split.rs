//! Exact state splitting: `A` sends a subsystem `A′` to `B` by compressing
//! it onto the support of its marginal and teleporting through `Φ⁺_K`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{herm_eigen, orth_complement, CMat, C64, ZERO};
use crate::tensor::{self, apply_map, LinearMap, Owner, PureState, Register, Role};

/// Who receives what in a split or merge.
#[derive(Clone, Debug, PartialEq)]
pub struct Transfer {
    pub sender: Owner,
    pub receiver: Owner,
    /// Ids of the two halves of `Φ⁺_K` (sender half, receiver half).
    pub resource_ids: (String, String),
}

impl Transfer {
    pub fn new(sender: &str, receiver: &str, tag: &str) -> Self {
        Transfer {
            sender: Owner::party(sender),
            receiver: Owner::party(receiver),
            resource_ids: (format!("{tag}.a"), format!("{tag}.b")),
        }
    }

    pub fn resource(&self, k: usize) -> (Register, Register) {
        (
            Register::new(self.resource_ids.0.clone(), k, self.sender.clone(), Role::ResourceHalf),
            Register::new(self.resource_ids.1.clone(), k, self.receiver.clone(), Role::ResourceHalf),
        )
    }
}

#[derive(Clone, Debug)]
pub struct SplitProtocol {
    pub k: usize,
    /// Registers of `A′` as they are before the split.
    pub cut: Vec<Register>,
    /// `K x dA′`, maps `supp ρ^{A′}` isometrically into `C^K`.
    pub compress: CMat,
    /// `K² x K²`, column `a K + b` is `|β_ab> = K^{-1/2} Σ_k ω^{bk} |k+a>|k>`.
    pub bell: CMat,
    /// `X^a Z^b` for outcome `a K + b`.
    pub corrections: Vec<CMat>,
    /// `dA′ x K`, inverse of `compress` on the support.
    pub decompress: CMat,
    pub resource: (Register, Register),
    pub compressed: Register,
    /// Copies of the cut registers now held by the receiver.
    pub received: Vec<Register>,
}

/// Schmidt rank of `A′` against everything else.
pub fn split_cost<S: AsRef<str>>(psi: &PureState, cut: &[S], rank_tol: f64) -> Result<usize> {
    let rho = tensor::partial_trace(psi, cut)?;
    Ok(tensor::numerical_rank(&rho, rank_tol))
}

fn shift_clock(k: usize, a: usize, b: usize) -> CMat {
    // X^a Z^b: |j> -> ω^{bj} |j+a>
    let mut m = CMat::zeros(k, k);
    for j in 0..k {
        m[((j + a) % k, j)] = C64::from_polar(1.0, 2.0 * PI * ((b * j) % k) as f64 / k as f64);
    }
    m
}

/// Generalized Bell basis on `C^K ⊗ C^K`.
pub fn bell_basis(k: usize) -> CMat {
    let s = 1.0 / (k as f64).sqrt();
    let mut m = CMat::zeros(k * k, k * k);
    for a in 0..k {
        for b in 0..k {
            for j in 0..k {
                let ph = C64::from_polar(s, 2.0 * PI * ((b * j) % k) as f64 / k as f64);
                m[(((j + a) % k) * k + j, a * k + b)] = ph;
            }
        }
    }
    m
}

pub fn build_split_protocol<S: AsRef<str>>(
    psi: &PureState,
    cut: &[S],
    k: usize,
    transfer: &Transfer,
    rank_tol: f64,
) -> Result<SplitProtocol> {
    let rho = tensor::partial_trace(psi, cut)?;
    let (vals, vecs) = herm_eigen(&rho.matrix);
    let top = vals.first().copied().unwrap_or(0.0);
    let rank = vals.iter().filter(|&&v| v > rank_tol * top).count();
    if k < rank {
        return Err(Error::InsufficientResource { needed: rank, given: k });
    }
    let d = rho.matrix.nrows();
    // support first, then as much of the complement as fits
    let mut basis = vecs.columns(0, rank).into_owned();
    let extra = k.min(d) - rank;
    if extra > 0 {
        let comp = orth_complement(&basis, d);
        basis = basis.insert_columns(rank, extra, ZERO);
        basis.columns_mut(rank, extra).copy_from(&comp.columns(0, extra));
    }
    let mut decompress = CMat::zeros(d, k);
    decompress.columns_mut(0, basis.ncols()).copy_from(&basis);
    let compress = decompress.adjoint();

    let cut_regs: Vec<Register> = cut
        .iter()
        .map(|id| psi.register(id.as_ref()).cloned())
        .collect::<Result<_>>()?;
    let received = cut_regs.iter().map(|r| r.clone().owned_by(transfer.receiver.clone())).collect();
    let compressed = Register::new(
        format!("{}.cmp", transfer.resource_ids.0),
        k,
        transfer.sender.clone(),
        Role::Work,
    );
    let corrections = (0..k * k).map(|o| shift_clock(k, o / k, o % k)).collect();
    Ok(SplitProtocol {
        k,
        cut: cut_regs,
        compress,
        bell: bell_basis(k),
        corrections,
        decompress,
        resource: transfer.resource(k),
        compressed,
        received,
    })
}

impl SplitProtocol {
    pub fn outcomes(&self) -> usize {
        self.k * self.k
    }

    fn cut_ids(&self) -> Vec<String> {
        self.cut.iter().map(|r| r.id.clone()).collect()
    }

    /// Compress `A′` and attach the resource; common to every outcome. The
    /// measured pair (compressed `A′`, `A0`) comes first in the result.
    pub fn prepare(&self, state: &PureState) -> Result<PureState> {
        let m = LinearMap::new(self.cut.clone(), vec![self.compressed.clone()], self.compress.clone())?;
        let s = apply_map(state, &m, &self.cut_ids(), None)?;
        let phi = PureState::max_entangled(self.resource.0.clone(), self.resource.1.clone())?;
        tensor::tensor_product(&s, &phi)?.grouped(&[self.compressed.id.as_str(), self.resource.0.id.as_str()])
    }

    /// Project a prepared state on outcome `o` (unnormalized).
    pub fn measure(&self, prepared: &PureState, o: usize) -> Result<PureState> {
        let ids = [self.compressed.id.as_str(), self.resource.0.id.as_str()];
        if prepared.ids().get(..2) != Some(&ids[..]) {
            let v: Vec<C64> = self.bell.column(o).iter().copied().collect();
            let bra = LinearMap::bra(vec![self.compressed.clone(), self.resource.0.clone()], &v)?;
            return apply_map(prepared, &bra, &ids, None);
        }
        // leading block: contract directly without regrouping
        let lead = self.compressed.dim * self.resource.0.dim;
        let rest = prepared.dim() / lead;
        let amps = prepared.amplitudes();
        let mut out = vec![C64::new(0.0, 0.0); rest];
        for (i, b) in self.bell.column(o).iter().enumerate() {
            let w = b.conj();
            if w.norm_sqr() == 0.0 {
                continue;
            }
            for (x, a) in out.iter_mut().zip(&amps[i * rest..(i + 1) * rest]) {
                *x += w * a;
            }
        }
        PureState::from_amplitudes(prepared.registers()[2..].to_vec(), out)
    }

    /// Receiver's correction and decompression for outcome `o`.
    pub fn correct(&self, measured: &PureState, o: usize) -> Result<PureState> {
        let op = &self.decompress * &self.corrections[o];
        let m = LinearMap::new(vec![self.resource.1.clone()], self.received.clone(), op)?;
        apply_map(measured, &m, &[self.resource.1.id.as_str()], None)
    }

    /// Full branch `o`: returns the probability and the normalized output.
    pub fn run_branch(&self, state: &PureState, o: usize) -> Result<(f64, PureState)> {
        let prepared = self.prepare(state)?;
        let out = self.correct(&self.measure(&prepared, o)?, o)?;
        let p = out.norm_sqr();
        Ok((p, out.normalized()))
    }
}

/// Sanity helper for tests: `|<ψ|out>|` after aligning ids.
pub fn split_fidelity(psi: &PureState, out: &PureState) -> Result<f64> {
    tensor::phase_free_overlap(psi, out)
}
