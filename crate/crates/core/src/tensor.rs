//! Pure states over labeled registers and the multilinear algebra the
//! protocols are built from.
//!
//! Amplitude indices are mixed-radix over the register dimensions in list
//! order, first register most significant.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, herm_eigen, CMat, C64, ZERO};

/// Who holds a register.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Owner {
    Party(String),
    Reference,
}

impl Owner {
    pub fn party(name: impl Into<String>) -> Self {
        Owner::Party(name.into())
    }

    pub fn party_name(&self) -> Option<&str> {
        match self {
            Owner::Party(p) => Some(p),
            Owner::Reference => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Logical,
    Physical,
    ResourceHalf,
    Reference,
    Work,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Register {
    pub id: String,
    pub dim: usize,
    pub owner: Owner,
    pub role: Role,
}

impl Register {
    pub fn new(id: impl Into<String>, dim: usize, owner: Owner, role: Role) -> Self {
        assert!(dim >= 1, "register dimension must be positive");
        Register { id: id.into(), dim, owner, role }
    }

    pub fn reference(id: impl Into<String>, dim: usize) -> Self {
        Self::new(id, dim, Owner::Reference, Role::Reference)
    }

    pub fn physical(id: impl Into<String>, dim: usize, party: impl Into<String>) -> Self {
        Self::new(id, dim, Owner::party(party), Role::Physical)
    }

    pub fn owned_by(mut self, owner: Owner) -> Self {
        self.owner = owner;
        self
    }
}

fn check_unique(regs: &[Register]) -> Result<()> {
    let mut seen = HashSet::new();
    for r in regs {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::DuplicateRegister(r.id.clone()));
        }
    }
    Ok(())
}

fn product_dim(regs: &[Register]) -> usize {
    regs.iter().map(|r| r.dim).product()
}

/// Complex amplitude vector over an ordered list of registers.
///
/// Constructed states are normalized; intermediate branch vectors produced by
/// projections keep their norm so branch probabilities can be read off.
#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    registers: Vec<Register>,
    amps: Vec<C64>,
}

impl PureState {
    /// Normalized state; fails if the norm is off by more than `1e-9`.
    pub fn new(registers: Vec<Register>, amps: Vec<C64>) -> Result<Self> {
        let s = Self::from_amplitudes(registers, amps)?;
        let n = s.norm();
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::ShapeMismatch(format!("state norm is {n}, expected 1")));
        }
        Ok(s)
    }

    /// Any vector of the right length, normalized or not.
    pub fn from_amplitudes(registers: Vec<Register>, amps: Vec<C64>) -> Result<Self> {
        check_unique(&registers)?;
        let d = product_dim(&registers);
        if d != amps.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} amplitudes for total dimension {d}",
                amps.len()
            )));
        }
        Ok(PureState { registers, amps })
    }

    pub fn basis(registers: Vec<Register>, digits: &[usize]) -> Result<Self> {
        if digits.len() != registers.len() {
            return Err(Error::ShapeMismatch("one digit per register".into()));
        }
        let mut idx = 0;
        for (r, &d) in registers.iter().zip(digits) {
            if d >= r.dim {
                return Err(Error::ShapeMismatch(format!("digit {d} out of range for `{}`", r.id)));
            }
            idx = idx * r.dim + d;
        }
        let mut amps = vec![ZERO; product_dim(&registers)];
        amps[idx] = linalg::ONE;
        Self::new(registers, amps)
    }

    /// `(1/sqrt(d)) sum_l |l>|l>` on two fresh registers.
    pub fn max_entangled(a: Register, b: Register) -> Result<Self> {
        if a.dim != b.dim {
            return Err(Error::ShapeMismatch("maximally entangled pair needs equal dims".into()));
        }
        let d = a.dim;
        let mut amps = vec![ZERO; d * d];
        let s = 1.0 / (d as f64).sqrt();
        for l in 0..d {
            amps[l * d + l] = linalg::c(s, 0.0);
        }
        Self::new(vec![a, b], amps)
    }

    pub fn registers(&self) -> &[Register] {
        &self.registers
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn dims(&self) -> Vec<usize> {
        self.registers.iter().map(|r| r.dim).collect()
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.registers.iter().map(|r| r.id.as_str()).collect()
    }

    pub fn position(&self, id: &str) -> Result<usize> {
        self.registers
            .iter()
            .position(|r| r.id == id)
            .ok_or_else(|| Error::UnknownRegister(id.to_string()))
    }

    pub fn register(&self, id: &str) -> Result<&Register> {
        Ok(&self.registers[self.position(id)?])
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            for z in &mut self.amps {
                *z /= n;
            }
        }
        self
    }

    pub fn scaled(mut self, s: C64) -> Self {
        for z in &mut self.amps {
            *z *= s;
        }
        self
    }

    /// Ids of registers held by `owner`, in state order.
    pub fn ids_owned_by(&self, owner: &Owner) -> Vec<String> {
        self.registers.iter().filter(|r| &r.owner == owner).map(|r| r.id.clone()).collect()
    }

    pub fn set_owner(&mut self, id: &str, owner: Owner) -> Result<()> {
        let p = self.position(id)?;
        self.registers[p].owner = owner;
        Ok(())
    }

    /// Reorder registers so that `ids` come first (in the given order),
    /// followed by the remaining registers in their current order.
    pub fn grouped<S: AsRef<str>>(&self, ids: &[S]) -> Result<PureState> {
        let mut order = Vec::with_capacity(self.registers.len());
        let mut used = vec![false; self.registers.len()];
        for id in ids {
            let p = self.position(id.as_ref())?;
            if used[p] {
                return Err(Error::DuplicateRegister(id.as_ref().to_string()));
            }
            used[p] = true;
            order.push(p);
        }
        order.extend((0..self.registers.len()).filter(|&p| !used[p]));
        permute_registers(self, &order)
    }

    /// Amplitudes as a matrix with rows indexed by `left` (in the given order)
    /// and columns by the remaining registers in state order.
    pub fn bipartite_matrix<S: AsRef<str>>(&self, left: &[S]) -> Result<CMat> {
        let g = self.grouped(left)?;
        let ld: usize = g.registers[..left.len()].iter().map(|r| r.dim).product();
        let rd = g.dim() / ld;
        Ok(CMat::from_fn(ld, rd, |i, j| g.amps[i * rd + j]))
    }

    pub fn inner(&self, other: &PureState) -> Result<C64> {
        if self.dims() != other.dims() {
            return Err(Error::ShapeMismatch("inner product of differently shaped states".into()));
        }
        Ok(self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum())
    }

    /// Drops one-dimensional registers; the amplitudes are unchanged.
    pub fn squeezed(mut self) -> Self {
        self.registers.retain(|r| r.dim > 1);
        self
    }

    pub fn to_column(&self) -> CMat {
        CMat::from_column_slice(self.amps.len(), 1, &self.amps)
    }
}

/// `a ⊗ b`, registers concatenated.
pub fn tensor_product(a: &PureState, b: &PureState) -> Result<PureState> {
    let mut regs = a.registers.clone();
    regs.extend(b.registers.iter().cloned());
    check_unique(&regs)?;
    let mut amps = Vec::with_capacity(a.dim() * b.dim());
    for x in &a.amps {
        for y in &b.amps {
            amps.push(x * y);
        }
    }
    Ok(PureState { registers: regs, amps })
}

/// New register `i` is old register `order[i]`.
pub fn permute_registers(s: &PureState, order: &[usize]) -> Result<PureState> {
    let n = s.registers.len();
    let mut seen = vec![false; n];
    if order.len() != n {
        return Err(Error::BadPermutation(format!("length {} for {n} registers", order.len())));
    }
    for &o in order {
        if o >= n || seen[o] {
            return Err(Error::BadPermutation(format!("{order:?}")));
        }
        seen[o] = true;
    }
    if order.iter().enumerate().all(|(i, &o)| i == o) {
        return Ok(s.clone());
    }
    let dims = s.dims();
    let mut old_stride = vec![1usize; n];
    for k in (0..n.saturating_sub(1)).rev() {
        old_stride[k] = old_stride[k + 1] * dims[k + 1];
    }
    let new_dims: Vec<usize> = order.iter().map(|&o| dims[o]).collect();
    let strides: Vec<usize> = order.iter().map(|&o| old_stride[o]).collect();
    let mut amps = Vec::with_capacity(s.dim());
    let mut digits = vec![0usize; n];
    let mut old = 0usize;
    for _ in 0..s.dim() {
        amps.push(s.amps[old]);
        // odometer over the new order, last register fastest
        for k in (0..n).rev() {
            digits[k] += 1;
            old += strides[k];
            if digits[k] < new_dims[k] {
                break;
            }
            old -= strides[k] * digits[k];
            digits[k] = 0;
        }
    }
    let registers = order.iter().map(|&o| s.registers[o].clone()).collect();
    Ok(PureState { registers, amps })
}

/// Reduced density operator of a set of registers.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityOp {
    pub registers: Vec<Register>,
    pub matrix: CMat,
}

impl DensityOp {
    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        herm_eigen(&self.matrix).0
    }

    /// Checks Hermiticity, unit trace and positivity within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let herm = linalg::max_abs(&(&self.matrix - self.matrix.adjoint()));
        if herm > tol {
            return Err(Error::ShapeMismatch(format!("not Hermitian ({herm:.2e})")));
        }
        if (self.trace() - 1.0).abs() > tol {
            return Err(Error::ShapeMismatch(format!("trace {}", self.trace())));
        }
        if let Some(&min) = self.eigenvalues().last() {
            if min < -tol {
                return Err(Error::ShapeMismatch(format!("negative eigenvalue {min:.2e}")));
            }
        }
        Ok(())
    }
}

/// `tr_{discarded} |s><s|`; kept registers stay in state order.
pub fn partial_trace<S: AsRef<str>>(s: &PureState, keep: &[S]) -> Result<DensityOp> {
    let mut pos = Vec::with_capacity(keep.len());
    for k in keep {
        pos.push(s.position(k.as_ref())?);
    }
    pos.sort_unstable();
    pos.dedup();
    let ids: Vec<&str> = pos.iter().map(|&p| s.registers[p].id.as_str()).collect();
    let m = s.bipartite_matrix(&ids)?;
    Ok(DensityOp {
        registers: pos.iter().map(|&p| s.registers[p].clone()).collect(),
        matrix: &m * m.adjoint(),
    })
}

/// Number of eigenvalues above `rel_tol` times the largest one.
pub fn numerical_rank(d: &DensityOp, rel_tol: f64) -> usize {
    herm_rank(&d.matrix, rel_tol)
}

pub fn herm_rank(m: &CMat, rel_tol: f64) -> usize {
    let vals = herm_eigen(m).0;
    let top = vals.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return 0;
    }
    vals.iter().filter(|&&v| v > rel_tol * top).count()
}

#[derive(Clone, Debug)]
pub struct SchmidtDecomposition {
    /// Nonincreasing, squares sum to one.
    pub coefficients: Vec<f64>,
    /// Columns are the left Schmidt vectors.
    pub left_basis: CMat,
    pub right_basis: CMat,
    pub left_registers: Vec<Register>,
    pub right_registers: Vec<Register>,
}

impl SchmidtDecomposition {
    pub fn rank(&self) -> usize {
        self.coefficients.len()
    }

    /// `sum_i c_i |l_i>|r_i>` on `left ++ right`.
    pub fn reconstruct(&self) -> PureState {
        let ld = self.left_basis.nrows();
        let rd = self.right_basis.nrows();
        let mut amps = vec![ZERO; ld * rd];
        for (k, &c) in self.coefficients.iter().enumerate() {
            for i in 0..ld {
                let l = self.left_basis[(i, k)] * c;
                for j in 0..rd {
                    amps[i * rd + j] += l * self.right_basis[(j, k)];
                }
            }
        }
        let mut regs = self.left_registers.clone();
        regs.extend(self.right_registers.iter().cloned());
        PureState { registers: regs, amps }
    }
}

/// Schmidt decomposition across `left | rest`; coefficients below
/// `rel_tol` times the largest are dropped.
pub fn schmidt<S: AsRef<str>>(s: &PureState, left: &[S], rel_tol: f64) -> Result<SchmidtDecomposition> {
    let g = s.grouped(left)?;
    let m = s.bipartite_matrix(left)?;
    let linalg::Svd { u, s: sv, v_t: vt } = linalg::svd(&m);
    let top = sv.first().copied().unwrap_or(0.0);
    // singular values compare against sqrt of the eigenvalue tolerance
    let keep: Vec<usize> = (0..sv.len()).filter(|&i| sv[i] > rel_tol.sqrt() * top).collect();
    let mut lb = CMat::zeros(u.nrows(), keep.len());
    let mut rb = CMat::zeros(vt.ncols(), keep.len());
    for (k, &i) in keep.iter().enumerate() {
        lb.set_column(k, &u.column(i));
        rb.set_column(k, &vt.row(i).transpose());
    }
    let nl = left.len();
    Ok(SchmidtDecomposition {
        coefficients: keep.iter().map(|&i| sv[i]).collect(),
        left_basis: lb,
        right_basis: rb,
        left_registers: g.registers[..nl].to_vec(),
        right_registers: g.registers[nl..].to_vec(),
    })
}

/// Linear map between register lists; the matrix is
/// `(prod out dims) x (prod in dims)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearMap {
    pub inputs: Vec<Register>,
    pub outputs: Vec<Register>,
    pub matrix: CMat,
}

impl LinearMap {
    pub fn new(inputs: Vec<Register>, outputs: Vec<Register>, matrix: CMat) -> Result<Self> {
        check_unique(&outputs)?;
        let (r, c) = matrix.shape();
        if r != product_dim(&outputs) || c != product_dim(&inputs) {
            return Err(Error::ShapeMismatch(format!(
                "{r}x{c} matrix for {} -> {} dims",
                product_dim(&inputs),
                product_dim(&outputs)
            )));
        }
        Ok(LinearMap { inputs, outputs, matrix })
    }

    /// Identity on the given registers.
    pub fn identity(regs: Vec<Register>) -> Self {
        let d = product_dim(&regs);
        LinearMap { inputs: regs.clone(), outputs: regs, matrix: linalg::identity(d) }
    }

    /// Bra `<v|` on the given registers, producing no outputs.
    pub fn bra(inputs: Vec<Register>, v: &[C64]) -> Result<Self> {
        let m = CMat::from_fn(1, v.len(), |_, j| v[j].conj());
        Self::new(inputs, Vec::new(), m)
    }
}

/// `true` iff `M^† M = I` entrywise within `tol`.
pub fn is_isometry(m: &CMat, tol: f64) -> bool {
    isometry_residual(m) <= tol
}

pub fn isometry_residual(m: &CMat) -> f64 {
    if m.ncols() == 0 {
        return 0.0;
    }
    linalg::max_abs(&(m.adjoint() * m - linalg::identity(m.ncols())))
}

/// Apply `m` to `targets` (matched to `m.inputs` by position). The outputs
/// take the place of the first target; untouched registers keep their order.
pub fn apply_map<S: AsRef<str>>(
    s: &PureState,
    m: &LinearMap,
    targets: &[S],
    enforce_isometry: Option<f64>,
) -> Result<PureState> {
    if targets.len() != m.inputs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} targets for {} map inputs",
            targets.len(),
            m.inputs.len()
        )));
    }
    for (t, inp) in targets.iter().zip(&m.inputs) {
        let r = s.register(t.as_ref())?;
        if r.dim != inp.dim {
            return Err(Error::ShapeMismatch(format!(
                "register `{}` has dim {}, map expects {}",
                r.id, r.dim, inp.dim
            )));
        }
    }
    if let Some(tol) = enforce_isometry {
        let res = isometry_residual(&m.matrix);
        if res > tol {
            return Err(Error::NonIsometry(res));
        }
    }
    let first = targets.first().map(|t| s.position(t.as_ref())).transpose()?;
    let g = s.grouped(targets)?;
    let nt = targets.len();
    let din: usize = g.registers[..nt].iter().map(|r| r.dim).product();
    let rest = g.dim() / din;
    // row-major amplitudes read column-major are the transpose: Yᵀ = Xᵀ Mᵀ
    let xt = CMat::from_column_slice(rest, din, &g.amps);
    let yt = xt * m.matrix.transpose();
    let amps: Vec<C64> = yt.as_slice().to_vec();
    let rest_regs: Vec<Register> = g.registers[nt..].to_vec();
    let mut regs = m.outputs.clone();
    regs.extend(rest_regs.iter().cloned());
    check_unique(&regs)?;
    let out = PureState { registers: regs, amps };
    // move the output block back to where the first target sat
    let pos = match first {
        Some(f) => s.registers[..f]
            .iter()
            .filter(|r| !targets.iter().any(|t| t.as_ref() == r.id))
            .count(),
        None => 0,
    };
    let no = m.outputs.len();
    let mut order: Vec<usize> = (no..no + pos).collect();
    order.extend(0..no);
    order.extend(no + pos..no + rest_regs.len());
    permute_registers(&out, &order)
}

/// Compares two normalized states modulo global phase: `| |<a|b>| - 1 | <= tol`.
/// Registers are matched by id when both states carry the same id set,
/// otherwise positionally by dimension.
pub fn states_equal_up_to_phase(a: &PureState, b: &PureState, tol: f64) -> Result<bool> {
    Ok((phase_free_overlap(a, b)? - 1.0).abs() <= tol)
}

/// `|<a|b>|` after aligning register order.
pub fn phase_free_overlap(a: &PureState, b: &PureState) -> Result<f64> {
    let same_ids = {
        let mut x: Vec<&str> = a.ids();
        let mut y: Vec<&str> = b.ids();
        x.sort_unstable();
        y.sort_unstable();
        x == y
    };
    let b = if same_ids { b.grouped(&a.ids())? } else { b.clone() };
    Ok(a.inner(&b)?.norm())
}
