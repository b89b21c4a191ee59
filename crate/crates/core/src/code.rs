//! Isometry codes, their canonical maximally entangled states and the
//! built-in codes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, CMat, C64, ZERO};
use crate::network::TreeNetwork;
use crate::tensor::{self, DensityOp, Owner, PureState, Register, Role};

/// Register id of the inaccessible reference system.
pub const REFERENCE: &str = "R";
/// Register id of the logical system at the root.
pub const LOGICAL: &str = "H";

/// Isometry tolerance used when validating code matrices.
pub const CODE_ISOMETRY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartyDim {
    pub name: String,
    pub dim: usize,
}

/// Encoding isometry `U: C^D -> ⊗_v C^{d_v}`; column `l` is `U|l>`.
#[derive(Clone, Debug, PartialEq)]
pub struct IsometryCode {
    pub name: String,
    pub logical_dim: usize,
    pub parties: Vec<PartyDim>,
    pub matrix: CMat,
}

impl IsometryCode {
    pub fn new(name: impl Into<String>, logical_dim: usize, parties: Vec<PartyDim>, matrix: CMat) -> Result<Self> {
        if logical_dim == 0 {
            return Err(Error::DimensionMismatch("logical dimension must be positive".into()));
        }
        if parties.is_empty() {
            return Err(Error::DimensionMismatch("code has no parties".into()));
        }
        for (i, p) in parties.iter().enumerate() {
            if p.dim == 0 {
                return Err(Error::DimensionMismatch(format!("party `{}` has dimension 0", p.name)));
            }
            if parties[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::DimensionMismatch(format!("party `{}` listed twice", p.name)));
            }
        }
        let phys: usize = parties.iter().map(|p| p.dim).product();
        if matrix.nrows() != phys || matrix.ncols() != logical_dim {
            return Err(Error::DimensionMismatch(format!(
                "matrix is {}x{}, expected {phys}x{logical_dim}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if phys < logical_dim {
            return Err(Error::DimensionMismatch(format!(
                "physical dimension {phys} is smaller than logical dimension {logical_dim}"
            )));
        }
        let res = tensor::isometry_residual(&matrix);
        if res > CODE_ISOMETRY_TOL {
            return Err(Error::NotIsometry(res));
        }
        Ok(IsometryCode { name: name.into(), logical_dim, parties, matrix })
    }

    pub fn physical_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn party_names(&self) -> Vec<&str> {
        self.parties.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn party_dim(&self, name: &str) -> Option<usize> {
        self.parties.iter().find(|p| p.name == name).map(|p| p.dim)
    }

    /// One physical register per party, id = party name.
    pub fn physical_registers(&self) -> Vec<Register> {
        self.parties.iter().map(|p| Register::physical(p.name.clone(), p.dim, p.name.clone())).collect()
    }

    pub fn reference_register(&self) -> Register {
        Register::reference(REFERENCE, self.logical_dim)
    }

    pub fn logical_register(&self, holder: &str) -> Register {
        Register::new(LOGICAL, self.logical_dim, Owner::party(holder), Role::Logical)
    }

    /// Code parties must be exactly the tree's vertices.
    pub fn check_parties(&self, tree: &TreeNetwork) -> Result<()> {
        let mut a: Vec<&str> = self.party_names();
        let mut b: Vec<&str> = tree.names().iter().map(|s| s.as_str()).collect();
        a.sort_unstable();
        b.sort_unstable();
        if a != b {
            return Err(Error::PartyMismatch(format!("code has {a:?}, tree has {b:?}")));
        }
        Ok(())
    }
}

/// `|Φ⁺_D> = D^{-1/2} Σ_l |l>^R |l>^H` with `H` held by `holder`.
pub fn logical_me_state(code: &IsometryCode, holder: &str) -> PureState {
    PureState::max_entangled(code.reference_register(), code.logical_register(holder))
        .expect("equal dimensions")
}

/// `|Φ̃⁺_D> = D^{-1/2} Σ_l |l>^R ⊗ U|l>` on `R` followed by one register per
/// party in code order.
pub fn encoded_me_state(code: &IsometryCode) -> PureState {
    let d = code.logical_dim;
    let p = code.physical_dim();
    let s = 1.0 / (d as f64).sqrt();
    let mut amps = vec![ZERO; d * p];
    for l in 0..d {
        for i in 0..p {
            amps[l * p + i] = code.matrix[(i, l)] * s;
        }
    }
    let mut regs = vec![code.reference_register()];
    regs.extend(code.physical_registers());
    PureState::new(regs, amps).expect("isometry columns are orthonormal")
}

/// Reduced state of `|Φ̃⁺_D>` on the closed subtree of the edge's child.
pub fn reduced_state_for_edge(code: &IsometryCode, tree: &TreeNetwork, child: usize) -> Result<DensityOp> {
    code.check_parties(tree)?;
    if child >= tree.len() || tree.parent(child).is_none() {
        return Err(Error::UnknownEdge(format!("no edge above vertex #{child}")));
    }
    let keep: Vec<&str> = tree.subtree(child).iter().map(|&v| tree.name(v)).collect();
    tensor::partial_trace(&encoded_me_state(code), &keep)
}

fn qubit_parties(names: &[String]) -> Vec<PartyDim> {
    names.iter().map(|n| PartyDim { name: n.clone(), dim: 2 }).collect()
}

fn default_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("v{i}")).collect()
}

fn from_columns(cols: &[Vec<C64>]) -> CMat {
    CMat::from_fn(cols[0].len(), cols.len(), |i, j| cols[j][i])
}

fn bits_index(s: &str) -> usize {
    s.bytes().fold(0, |acc, b| acc * 2 + (b - b'0') as usize)
}

/// Signed five-qubit codewords: (+ terms, - terms), each a list of kets over
/// parties v1..v5 left to right.
const FIVE_QUBIT: [(&[&str], &[&str]); 2] = [
    (
        &["00000", "11000", "01100", "00110", "00011", "10001"],
        &["10100", "01010", "00101", "10010", "01001", "11110", "01111", "10111", "11011", "11101"],
    ),
    (
        &["11111", "00111", "10011", "11001", "11100", "01110"],
        &["01011", "10101", "11010", "01101", "10110", "00001", "10000", "01000", "00100", "00010"],
    ),
];

/// Names accepted by [`builtin`].
pub const BUILTINS: [&str; 5] = ["identity", "product", "star4", "five_qubit", "ghz"];

/// Built-in codes.
///
/// * `identity`: `|l> -> |l>` at the first party, dimension-1 systems elsewhere.
/// * `product`: `|l> -> |l> ⊗ |0...0>`, a qubit in `|0>` at every other party.
/// * `star4`: `|0> -> |0000>`, `|1> -> |+111>` over v1..v4.
/// * `five_qubit`: the five-qubit code over v1..v5.
/// * `ghz`: `|l> -> |l...l>` over qubit parties.
///
/// `logical_dim` applies to `identity` and `product` (default 2); `parties`
/// overrides the default names `v1..vN`.
pub fn builtin(name: &str, logical_dim: Option<usize>, parties: Option<&[String]>) -> Result<IsometryCode> {
    let d = logical_dim.unwrap_or(2);
    match name {
        "identity" | "product" => {
            let names = parties.map(|p| p.to_vec()).unwrap_or_else(|| default_names(1));
            if names.is_empty() {
                return Err(Error::DimensionMismatch("builtin needs at least one party".into()));
            }
            let other = if name == "identity" { 1 } else { 2 };
            let mut pd = vec![PartyDim { name: names[0].clone(), dim: d }];
            pd.extend(names[1..].iter().map(|n| PartyDim { name: n.clone(), dim: other }));
            let rest: usize = pd[1..].iter().map(|p| p.dim).product();
            // |l>|0...0> sits at row l * rest
            let m = CMat::from_fn(d * rest, d, |i, l| if i == l * rest { c(1.0, 0.0) } else { ZERO });
            IsometryCode::new(name, d, pd, m)
        }
        "star4" => {
            let names = parties.map(|p| p.to_vec()).unwrap_or_else(|| default_names(4));
            if names.len() != 4 {
                return Err(Error::DimensionMismatch("star4 has four parties".into()));
            }
            let s = 0.5f64.sqrt();
            let mut c0 = vec![ZERO; 16];
            c0[0] = c(1.0, 0.0);
            let mut c1 = vec![ZERO; 16];
            c1[bits_index("0111")] = c(s, 0.0);
            c1[bits_index("1111")] = c(s, 0.0);
            IsometryCode::new(name, 2, qubit_parties(&names), from_columns(&[c0, c1]))
        }
        "five_qubit" => {
            let names = parties.map(|p| p.to_vec()).unwrap_or_else(|| default_names(5));
            if names.len() != 5 {
                return Err(Error::DimensionMismatch("five_qubit has five parties".into()));
            }
            let cols: Vec<Vec<C64>> = FIVE_QUBIT
                .iter()
                .map(|(plus, minus)| {
                    let mut v = vec![ZERO; 32];
                    for k in plus.iter() {
                        v[bits_index(k)] = c(0.25, 0.0);
                    }
                    for k in minus.iter() {
                        v[bits_index(k)] = c(-0.25, 0.0);
                    }
                    v
                })
                .collect();
            IsometryCode::new(name, 2, qubit_parties(&names), from_columns(&cols))
        }
        "ghz" => {
            let names = parties.map(|p| p.to_vec()).unwrap_or_else(|| default_names(3));
            if names.is_empty() {
                return Err(Error::DimensionMismatch("ghz needs at least one party".into()));
            }
            let n = names.len();
            let mut c0 = vec![ZERO; 1 << n];
            let mut c1 = vec![ZERO; 1 << n];
            c0[0] = c(1.0, 0.0);
            c1[(1 << n) - 1] = c(1.0, 0.0);
            IsometryCode::new(name, 2, qubit_parties(&names), from_columns(&[c0, c1]))
        }
        other => Err(Error::UnknownBuiltin(other.to_string())),
    }
}

/// Random code on `parties`. Without `support` the isometry is Haar
/// distributed and every marginal has full rank; with `support = Some(s)` the
/// code space lies in the span of `s` random computational basis states,
/// which leaves room for correlations that concentrating can exploit.
pub fn random_code<R: rand::Rng + ?Sized>(
    name: &str,
    parties: Vec<PartyDim>,
    logical_dim: usize,
    support: Option<usize>,
    rng: &mut R,
) -> Result<IsometryCode> {
    let phys: usize = parties.iter().map(|p| p.dim).product();
    let s = support.unwrap_or(phys);
    if s < logical_dim || s > phys {
        return Err(Error::DimensionMismatch(format!(
            "support {s} must lie between {logical_dim} and {phys}"
        )));
    }
    let v = crate::linalg::random_isometry(s, logical_dim, rng);
    let mut rows = rand::seq::index::sample(rng, phys, s).into_vec();
    rows.sort_unstable();
    let mut m = CMat::zeros(phys, logical_dim);
    for (k, &r) in rows.iter().enumerate() {
        m.row_mut(r).copy_from(&v.row(k));
    }
    IsometryCode::new(name, logical_dim, parties, m)
}

/// Code document as read from disk; either a builtin reference or explicit
/// sparse matrix entries `[row, col, re, im]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    pub logical_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parties: Option<Vec<PartyDim>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entries: Option<Vec<(usize, usize, f64, f64)>>,
}

impl CodeDocument {
    pub fn from_code(code: &IsometryCode) -> Self {
        let mut entries = Vec::new();
        for j in 0..code.matrix.ncols() {
            for i in 0..code.matrix.nrows() {
                let z = code.matrix[(i, j)];
                if z != ZERO {
                    entries.push((i, j, z.re, z.im));
                }
            }
        }
        CodeDocument {
            name: Some(code.name.clone()),
            builtin: None,
            logical_dim: Some(code.logical_dim),
            parties: Some(code.parties.clone()),
            entries: Some(entries),
        }
    }
}

/// Turn a document into a validated code. `default_parties` names the
/// parties of generic builtins when the document does not list them.
pub fn validate_code(doc: &CodeDocument, default_parties: Option<&[String]>) -> Result<IsometryCode> {
    if let Some(b) = &doc.builtin {
        let names: Option<Vec<String>> =
            doc.parties.as_ref().map(|ps| ps.iter().map(|p| p.name.clone()).collect());
        let fixed = matches!(b.as_str(), "star4" | "five_qubit");
        let parties = match (&names, fixed) {
            (Some(n), _) => Some(n.as_slice()),
            (None, false) => default_parties,
            (None, true) => None,
        };
        let mut code = builtin(b, doc.logical_dim, parties)?;
        if let Some(n) = &doc.name {
            code.name = n.clone();
        }
        return Ok(code);
    }
    let field = |f: &str, m: &str| Error::Schema { field: f.into(), message: m.into() };
    let d = doc.logical_dim.ok_or_else(|| field("D", "required without `builtin`"))?;
    let parties = doc.parties.clone().ok_or_else(|| field("parties", "required without `builtin`"))?;
    let entries = doc.entries.as_ref().ok_or_else(|| field("entries", "required without `builtin`"))?;
    let rows: usize = parties.iter().map(|p| p.dim).product();
    let mut m = CMat::zeros(rows, d);
    for (k, &(i, j, re, im)) in entries.iter().enumerate() {
        if i >= rows || j >= d {
            return Err(field(
                &format!("entries[{k}]"),
                &format!("index ({i}, {j}) outside {rows}x{d}"),
            ));
        }
        m[(i, j)] += c(re, im);
    }
    IsometryCode::new(doc.name.clone().unwrap_or_else(|| "custom".into()), d, parties, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::validate_tree;
    use crate::tensor::{numerical_rank, partial_trace};

    fn line(n: usize) -> TreeNetwork {
        let names = default_names(n);
        let edges: Vec<(String, String)> = (1..n).map(|i| (format!("v{i}"), format!("v{}", i + 1))).collect();
        validate_tree(&names, &edges, "v1").unwrap()
    }

    fn star(n: usize) -> TreeNetwork {
        let names = default_names(n);
        let edges: Vec<(String, String)> = (2..=n).map(|i| ("v1".to_string(), format!("v{i}"))).collect();
        validate_tree(&names, &edges, "v1").unwrap()
    }

    #[test]
    fn builtins_validate() {
        for b in BUILTINS {
            builtin(b, None, None).unwrap();
        }
        assert!(matches!(builtin("seven_qubit", None, None), Err(Error::UnknownBuiltin(_))));
    }

    #[test]
    fn five_qubit_entries() {
        let code = builtin("five_qubit", None, None).unwrap();
        assert_eq!(code.matrix[(0, 0)], c(0.25, 0.0));
        assert_eq!(code.matrix[(bits_index("10100"), 0)], c(-0.25, 0.0));
        for l in 0..2 {
            let nz = (0..32).filter(|&i| code.matrix[(i, l)] != ZERO).count();
            assert_eq!(nz, 16);
        }
    }

    #[test]
    fn star4_and_ghz_columns() {
        let s = builtin("star4", None, None).unwrap();
        assert_eq!(s.matrix[(0, 0)], c(1.0, 0.0));
        let g = builtin("ghz", None, None).unwrap();
        assert_eq!(g.matrix[(0, 0)], c(1.0, 0.0));
        assert_eq!(g.matrix[(7, 1)], c(1.0, 0.0));
    }

    #[test]
    fn duplicate_columns_rejected() {
        let doc = CodeDocument {
            name: None,
            builtin: None,
            logical_dim: Some(2),
            parties: Some(vec![PartyDim { name: "v1".into(), dim: 2 }]),
            entries: Some(vec![(0, 0, 1.0, 0.0), (0, 1, 1.0, 0.0)]),
        };
        assert!(matches!(validate_code(&doc, None), Err(Error::NotIsometry(_))));
        let ok = CodeDocument { entries: Some(vec![(0, 0, 1.0, 0.0), (1, 1, 1.0, 0.0)]), ..doc };
        validate_code(&ok, None).unwrap();
    }

    #[test]
    fn me_states() {
        let code = builtin("identity", Some(3), None).unwrap();
        let phi = logical_me_state(&code, "v1");
        let s = 1.0 / 3f64.sqrt();
        assert_eq!(phi.amplitudes().iter().filter(|z| (z.re - s).abs() < 1e-15).count(), 3);
        let enc = encoded_me_state(&code);
        assert!(tensor::states_equal_up_to_phase(&phi, &enc, 1e-12).unwrap());
        let q = builtin("identity", Some(2), None).unwrap();
        let r = partial_trace(&logical_me_state(&q, "v1"), &[REFERENCE]).unwrap();
        assert!(crate::linalg::max_abs(&(r.matrix - crate::linalg::identity(2).scale(0.5))) < 1e-15);
    }

    #[test]
    fn five_qubit_encoded_amplitudes() {
        let code = builtin("five_qubit", None, None).unwrap();
        let enc = encoded_me_state(&code);
        let mag = 1.0 / (4.0 * 2f64.sqrt());
        let nz: Vec<&C64> = enc.amplitudes().iter().filter(|z| z.norm() > 1e-12).collect();
        assert_eq!(nz.len(), 32);
        assert!(nz.iter().all(|z| (z.norm() - mag).abs() < 1e-15));
        assert!((enc.amplitudes()[0].re - mag).abs() < 1e-15);
    }

    #[test]
    fn star4_encoded_state() {
        let code = builtin("star4", None, None).unwrap();
        let enc = encoded_me_state(&code);
        let h = 0.5f64.sqrt();
        let a = enc.amplitudes();
        assert!((a[0].re - h).abs() < 1e-15);
        // |1>^R |+>|111>
        assert!((a[16 + bits_index("0111")].re - 0.5).abs() < 1e-15);
        assert!((a[16 + bits_index("1111")].re - 0.5).abs() < 1e-15);
    }

    #[test]
    fn edge_reduced_ranks() {
        let five = builtin("five_qubit", None, None).unwrap();
        let t = line(5);
        let ranks: Vec<usize> = (1..5)
            .map(|v| numerical_rank(&reduced_state_for_edge(&five, &t, v).unwrap(), 1e-8))
            .collect();
        assert_eq!(ranks, vec![4, 8, 4, 2]);
        let star4 = builtin("star4", None, None).unwrap();
        let st = star(4);
        for v in 1..4 {
            assert_eq!(numerical_rank(&reduced_state_for_edge(&star4, &st, v).unwrap(), 1e-8), 2);
        }
        let names: Vec<String> = t.names().to_vec();
        let id = builtin("identity", Some(2), Some(&names)).unwrap();
        for v in 1..5 {
            assert_eq!(numerical_rank(&reduced_state_for_edge(&id, &t, v).unwrap(), 1e-8), 1);
        }
        assert!(matches!(reduced_state_for_edge(&five, &t, 0), Err(Error::UnknownEdge(_))));
    }

    #[test]
    fn five_qubit_far_marginal_rank() {
        let code = builtin("five_qubit", None, None).unwrap();
        let rho = partial_trace(&encoded_me_state(&code), &["v3", "v4", "v5"]).unwrap();
        assert_eq!(numerical_rank(&rho, 1e-8), 8);
    }
}
