//! Rooted tree networks, ascending labelings and per-edge resources.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default bound on the number of vertices for labeling enumeration.
pub const DEFAULT_ENUMERATION_BOUND: usize = 10;

/// A validated tree rooted at the party holding the logical system. Vertex 0
/// is always the root; the other vertices keep their input order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeNetwork {
    names: Vec<String>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    /// `(parent, child)` pairs in input order.
    edges: Vec<(usize, usize)>,
}

/// Parent, children, descendants and the closed subtree `{v} ∪ descendants`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VertexStructure {
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub descendants: Vec<usize>,
    pub subtree: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub parent: String,
    pub child: String,
}

impl std::fmt::Display for Edge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.parent, self.child)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeResource {
    pub edge: Edge,
    pub schmidt_rank: usize,
    pub log2_cost: f64,
}

impl EdgeResource {
    pub fn new(edge: Edge, schmidt_rank: usize) -> Self {
        assert!(schmidt_rank >= 1);
        EdgeResource { edge, schmidt_rank, log2_cost: (schmidt_rank as f64).log2() }
    }
}

fn find(uf: &mut [usize], mut x: usize) -> usize {
    while uf[x] != x {
        uf[x] = uf[uf[x]];
        x = uf[x];
    }
    x
}

/// Validate an undirected vertex/edge list as a tree and root it at `root`.
pub fn validate_tree<S: AsRef<str>>(vertices: &[S], edges: &[(S, S)], root: &str) -> Result<TreeNetwork> {
    let input: Vec<String> = vertices.iter().map(|v| v.as_ref().to_string()).collect();
    if input.is_empty() {
        return Err(Error::BadEdge("tree has no vertices".into()));
    }
    for (i, v) in input.iter().enumerate() {
        if input[..i].contains(v) {
            return Err(Error::BadEdge(format!("vertex `{v}` listed twice")));
        }
    }
    let root_pos = input.iter().position(|v| v == root).ok_or_else(|| Error::UnknownVertex(root.into()))?;
    let mut names = vec![input[root_pos].clone()];
    names.extend(input.iter().enumerate().filter(|&(i, _)| i != root_pos).map(|(_, v)| v.clone()));
    let n = names.len();
    let idx = |v: &str| names.iter().position(|x| x == v);

    let mut uf: Vec<usize> = (0..n).collect();
    let mut adj = vec![Vec::new(); n];
    let mut seen = std::collections::HashSet::new();
    for (a, b) in edges {
        let (a, b) = (a.as_ref(), b.as_ref());
        let ia = idx(a).ok_or_else(|| Error::BadEdge(format!("edge {a}-{b}: unknown vertex `{a}`")))?;
        let ib = idx(b).ok_or_else(|| Error::BadEdge(format!("edge {a}-{b}: unknown vertex `{b}`")))?;
        if ia == ib {
            return Err(Error::BadEdge(format!("self-loop at `{a}`")));
        }
        if !seen.insert((ia.min(ib), ia.max(ib))) {
            return Err(Error::BadEdge(format!("duplicate edge {a}-{b}")));
        }
        let (ra, rb) = (find(&mut uf, ia), find(&mut uf, ib));
        if ra == rb {
            return Err(Error::HasCycle);
        }
        uf[ra] = rb;
        adj[ia].push(ib);
        adj[ib].push(ia);
    }
    if edges.len() != n - 1 {
        return Err(Error::NotConnected);
    }

    let mut parent = vec![None; n];
    let mut children = vec![Vec::new(); n];
    let mut visited = vec![false; n];
    let mut queue = std::collections::VecDeque::from([0usize]);
    visited[0] = true;
    while let Some(v) = queue.pop_front() {
        let mut next: Vec<usize> = adj[v].iter().copied().filter(|&u| !visited[u]).collect();
        next.sort_unstable();
        for u in next {
            visited[u] = true;
            parent[u] = Some(v);
            children[v].push(u);
            queue.push_back(u);
        }
    }
    let edges = edges
        .iter()
        .map(|(a, b)| {
            let (ia, ib) = (idx(a.as_ref()).unwrap(), idx(b.as_ref()).unwrap());
            if parent[ib] == Some(ia) {
                (ia, ib)
            } else {
                (ib, ia)
            }
        })
        .collect();
    Ok(TreeNetwork { names, parent, children, edges })
}

impl TreeNetwork {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, v: usize) -> &str {
        &self.names[v]
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.names.iter().position(|x| x == name).ok_or_else(|| Error::UnknownVertex(name.into()))
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    /// `(parent, child)` index pairs in input order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge(&self, child: usize) -> Result<Edge> {
        let p = self
            .parent(child)
            .ok_or_else(|| Error::UnknownEdge(format!("root `{}` has no parent edge", self.names[child])))?;
        Ok(Edge { parent: self.names[p].clone(), child: self.names[child].clone() })
    }

    pub fn edge_by_names(&self, a: &str, b: &str) -> Result<(usize, usize)> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        self.edges
            .iter()
            .copied()
            .find(|&(p, c)| (p, c) == (ia, ib) || (p, c) == (ib, ia))
            .ok_or_else(|| Error::UnknownEdge(format!("{a}-{b}")))
    }

    /// `{v} ∪ descendants(v)` in preorder.
    pub fn subtree(&self, v: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![v];
        while let Some(u) = stack.pop() {
            out.push(u);
            for &c in self.children[u].iter().rev() {
                stack.push(c);
            }
        }
        out
    }

    pub fn structure(&self, v: usize) -> Result<VertexStructure> {
        if v >= self.len() {
            return Err(Error::UnknownVertex(format!("#{v}")));
        }
        let subtree = self.subtree(v);
        Ok(VertexStructure {
            parent: self.parent[v],
            children: self.children[v].clone(),
            descendants: subtree[1..].to_vec(),
            subtree,
        })
    }

    /// Vertices on the path from the root to `v`, root first.
    pub fn path_from_root(&self, v: usize) -> Vec<usize> {
        let mut p = vec![v];
        let mut u = v;
        while let Some(q) = self.parent[u] {
            p.push(q);
            u = q;
        }
        p.reverse();
        p
    }
}

/// Bijection from ranks `0..N` to vertices; rank 0 is the root.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Labeling {
    order: Vec<usize>,
}

impl Labeling {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let n = order.len();
        let mut seen = vec![false; n];
        for &v in &order {
            if v >= n || seen[v] {
                return Err(Error::NotAscending(format!("{order:?} is not a permutation")));
            }
            seen[v] = true;
        }
        Ok(Labeling { order })
    }

    pub fn from_names<S: AsRef<str>>(t: &TreeNetwork, names: &[S]) -> Result<Self> {
        if names.len() != t.len() {
            return Err(Error::NotAscending(format!("{} names for {} vertices", names.len(), t.len())));
        }
        let order = names.iter().map(|n| t.index(n.as_ref())).collect::<Result<Vec<_>>>()?;
        let l = Labeling::new(order)?;
        if !is_ascending(t, &l) {
            return Err(Error::NotAscending(
                names.iter().map(|n| n.as_ref()).collect::<Vec<_>>().join(","),
            ));
        }
        Ok(l)
    }

    /// Vertices in rank order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn rank_of(&self, v: usize) -> usize {
        self.order.iter().position(|&x| x == v).expect("vertex in labeling")
    }

    pub fn names(&self, t: &TreeNetwork) -> Vec<String> {
        self.order.iter().map(|&v| t.name(v).to_string()).collect()
    }
}

/// Every non-root vertex ranks after its parent.
pub fn is_ascending(t: &TreeNetwork, l: &Labeling) -> bool {
    if l.order.len() != t.len() || l.order.first() != Some(&t.root()) {
        return false;
    }
    let mut rank = vec![0; t.len()];
    for (r, &v) in l.order.iter().enumerate() {
        rank[v] = r;
    }
    (0..t.len()).all(|v| t.parent(v).is_none_or(|p| rank[p] < rank[v]))
}

/// Breadth-first labeling, children in vertex order.
pub fn bfs_labeling(t: &TreeNetwork) -> Labeling {
    let mut order = Vec::with_capacity(t.len());
    let mut queue = std::collections::VecDeque::from([t.root()]);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        queue.extend(t.children(v).iter().copied());
    }
    Labeling { order }
}

/// All ascending labelings (linear extensions of the rooted-tree order), in
/// lexicographic order of their vertex sequences.
pub fn enumerate_ascending_labelings(t: &TreeNetwork, bound: usize) -> Result<Vec<Labeling>> {
    if t.len() > bound {
        return Err(Error::TooLarge { what: "tree", n: t.len(), max: bound });
    }
    let mut out = Vec::new();
    let mut prefix = vec![t.root()];
    let mut avail: Vec<usize> = t.children(t.root()).to_vec();
    extend(t, &mut prefix, &mut avail, &mut out);
    Ok(out)
}

fn extend(t: &TreeNetwork, prefix: &mut Vec<usize>, avail: &mut Vec<usize>, out: &mut Vec<Labeling>) {
    if avail.is_empty() {
        out.push(Labeling { order: prefix.clone() });
        return;
    }
    let mut choices = avail.clone();
    choices.sort_unstable();
    for v in choices {
        let saved = avail.clone();
        avail.retain(|&x| x != v);
        avail.extend(t.children(v).iter().copied());
        prefix.push(v);
        extend(t, prefix, avail, out);
        prefix.pop();
        *avail = saved;
    }
}
