//! Input documents: code and tree files, plus `builtin:NAME`, `line:N` and
//! `star:N` shorthands.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::code::{validate_code, CodeDocument, IsometryCode};
use crate::error::{Error, Result};
use crate::ki::KiRoles;
use crate::linalg::C64;
use crate::network::{validate_tree, Labeling, TreeNetwork};
use crate::tensor::{Owner, PureState, Register, Role};

/// `{root, edges: [[a, b], ...], labeling?: [names in rank order]}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeDocument {
    pub root: String,
    pub edges: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labeling: Option<Vec<String>>,
}

impl TreeDocument {
    /// Root first, then the other vertices by first appearance in `edges`.
    pub fn vertices(&self) -> Vec<String> {
        let mut out = vec![self.root.clone()];
        for (a, b) in &self.edges {
            for n in [a, b] {
                if !out.contains(n) {
                    out.push(n.clone());
                }
            }
        }
        out
    }

    pub fn from_tree(t: &TreeNetwork, labeling: Option<&Labeling>) -> Self {
        TreeDocument {
            root: t.name(t.root()).to_string(),
            edges: t.edges().iter().map(|&(p, c)| (t.name(p).to_string(), t.name(c).to_string())).collect(),
            labeling: labeling.map(|l| l.names(t)),
        }
    }

    /// `v1 - v2 - ... - vN` rooted at `v1`.
    pub fn line(n: usize) -> Self {
        TreeDocument {
            root: "v1".into(),
            edges: (1..n).map(|i| (format!("v{i}"), format!("v{}", i + 1))).collect(),
            labeling: None,
        }
    }

    /// `v1` joined to each of `v2..vN`.
    pub fn star(n: usize) -> Self {
        TreeDocument {
            root: "v1".into(),
            edges: (2..=n).map(|i| ("v1".to_string(), format!("v{i}"))).collect(),
            labeling: None,
        }
    }
}

/// Validated tree and the labeling named by the document, if any.
pub fn parse_tree(doc: &TreeDocument) -> Result<(TreeNetwork, Option<Labeling>)> {
    let tree = validate_tree(&doc.vertices(), &doc.edges, &doc.root)?;
    let labeling = doc.labeling.as_ref().map(|names| Labeling::from_names(&tree, names)).transpose()?;
    Ok((tree, labeling))
}

/// Parse JSON, turning serde errors into positioned diagnostics.
pub fn parse_json<T: DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    serde_json::from_str(text)
        .map_err(|e| Error::Parse(format!("{what}: line {}, column {}: {e}", e.line(), e.column())))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Code from `builtin:NAME` or a JSON file.
pub fn load_code_document(spec: &str) -> Result<CodeDocument> {
    if let Some(name) = spec.strip_prefix("builtin:") {
        return Ok(CodeDocument { name: None, builtin: Some(name.into()), logical_dim: None, parties: None, entries: None });
    }
    parse_json(&read(Path::new(spec))?, spec)
}

/// Tree from `line:N`, `star:N` or a JSON file.
pub fn load_tree_document(spec: &str) -> Result<TreeDocument> {
    let count = |s: &str| -> Result<usize> {
        s.parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| Error::Parse(format!("`{spec}`: expected a positive vertex count")))
    };
    if let Some(n) = spec.strip_prefix("line:") {
        return Ok(TreeDocument::line(count(n)?));
    }
    if let Some(n) = spec.strip_prefix("star:") {
        return Ok(TreeDocument::star(count(n)?));
    }
    parse_json(&read(Path::new(spec))?, spec)
}

/// Code, tree and the document's labeling, checked against each other.
/// Generic builtins take their party names from the tree.
pub fn parse_inputs(code: &CodeDocument, tree: &TreeDocument) -> Result<(IsometryCode, TreeNetwork, Option<Labeling>)> {
    let (t, l) = parse_tree(tree)?;
    let c = validate_code(code, Some(t.names()))?;
    c.check_parties(&t)?;
    Ok((c, t, l))
}

/// The tree a builtin was written for, if it has one.
pub fn default_tree(code: &CodeDocument) -> Option<TreeDocument> {
    match code.builtin.as_deref()? {
        "five_qubit" => Some(TreeDocument::line(5)),
        "star4" => Some(TreeDocument::star(4)),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterSpec {
    pub id: String,
    pub dim: usize,
}

/// A tripartite pure state for direct decomposition: amplitudes in
/// mixed-radix order over `registers`, first most significant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateDocument {
    pub registers: Vec<RegisterSpec>,
    pub amplitudes: Vec<[f64; 2]>,
    pub reference: Vec<String>,
    pub a: Vec<String>,
    pub b: Vec<String>,
}

pub fn parse_state(doc: &StateDocument) -> Result<(PureState, KiRoles)> {
    let schema = |field: &str, message: String| Error::Schema { field: field.into(), message };
    let mut regs = Vec::with_capacity(doc.registers.len());
    for (i, r) in doc.registers.iter().enumerate() {
        if r.dim == 0 {
            return Err(schema(&format!("registers[{i}].dim"), "dimension must be positive".into()));
        }
        let (owner, role) = if doc.reference.contains(&r.id) {
            (Owner::Reference, Role::Reference)
        } else if doc.a.contains(&r.id) {
            (Owner::party("A"), Role::Physical)
        } else if doc.b.contains(&r.id) {
            (Owner::party("B"), Role::Physical)
        } else {
            return Err(schema("registers", format!("`{}` is in none of reference, a, b", r.id)));
        };
        regs.push(Register::new(r.id.clone(), r.dim, owner, role));
    }
    let amps: Vec<C64> = doc.amplitudes.iter().map(|[re, im]| C64::new(*re, *im)).collect();
    let psi = PureState::new(regs, amps).map_err(|e| schema("amplitudes", e.to_string()))?;
    let roles = KiRoles::new(&doc.reference, &doc.a, &doc.b);
    for id in doc.reference.iter().chain(&doc.a).chain(&doc.b) {
        psi.position(id).map_err(|_| schema("roles", format!("`{id}` is not a register")))?;
    }
    Ok((psi, roles))
}

pub fn load_state_document(path: &str) -> Result<StateDocument> {
    parse_json(&read(Path::new(path))?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_documents_parse_and_validate() {
        let doc: TreeDocument =
            parse_json(r#"{"root": "a", "edges": [["a", "b"], ["b", "c"]], "labeling": ["a", "b", "c"]}"#, "t").unwrap();
        let (t, l) = parse_tree(&doc).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(l.unwrap().names(&t), vec!["a", "b", "c"]);
        let bad = TreeDocument { labeling: Some(vec!["a".into(), "c".into(), "b".into()]), ..doc.clone() };
        assert!(matches!(parse_tree(&bad), Err(Error::NotAscending(_))));
        assert_eq!(TreeDocument::from_tree(&t, None).edges, doc.edges);
    }

    #[test]
    fn diagnostics_name_the_position() {
        let e = parse_json::<TreeDocument>("{\n  \"root\": \"a\",\n  \"edgez\": []\n}", "tree.json").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("edgez"), "{msg}");
    }

    #[test]
    fn state_documents() {
        let h = 0.5f64.sqrt();
        let text = format!(
            r#"{{"registers": [{{"id": "R", "dim": 1}}, {{"id": "a", "dim": 2}}, {{"id": "b", "dim": 2}}],
               "amplitudes": [[{h}, 0], [0, 0], [0, 0], [{h}, 0]], "reference": ["R"], "a": ["a"], "b": ["b"]}}"#
        );
        let doc: StateDocument = parse_json(&text, "bell").unwrap();
        let (psi, roles) = parse_state(&doc).unwrap();
        assert_eq!(psi.dims(), vec![1, 2, 2]);
        assert_eq!(roles.a, vec!["a"]);
        let unnormalized = StateDocument { amplitudes: vec![[1.0, 0.0]; 4], ..doc };
        assert!(matches!(parse_state(&unnormalized), Err(Error::Schema { .. })));
    }

    #[test]
    fn generic_builtins_take_tree_names() {
        let (c, _, _) = parse_inputs(&load_code_document("builtin:ghz").unwrap(), &TreeDocument::star(4)).unwrap();
        assert_eq!(c.party_names(), vec!["v1", "v2", "v3", "v4"]);
        assert!(default_tree(&load_code_document("builtin:star4").unwrap()).is_some());
    }

    #[test]
    fn shorthands() {
        let (c, t, _) = parse_inputs(&load_code_document("builtin:five_qubit").unwrap(), &TreeDocument::line(5)).unwrap();
        assert_eq!((c.logical_dim, t.len()), (2, 5));
        assert_eq!(load_tree_document("star:4").unwrap().edges.len(), 3);
        assert!(load_tree_document("line:0").is_err());
        let mismatch = parse_inputs(&load_code_document("builtin:star4").unwrap(), &TreeDocument::line(5));
        assert!(matches!(mismatch, Err(Error::PartyMismatch(_))));
    }
}
