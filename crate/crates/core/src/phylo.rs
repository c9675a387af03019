//! Rooted trees: Newick phylogenies with branch lengths and rank-labelled
//! taxonomy trees, plus the leaf-set queries used to pick the features a
//! taxon covers.
//!
//! Both trees live in arenas where a parent's index is always smaller than
//! its children's, so iterating indices in reverse visits nodes in post-order.
//! Nothing here recurses, which keeps arbitrarily deep input off the stack.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use crate::error::{decode_utf8, Error, Result};
use crate::ingest::{Rank, TaxonomyAssignment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

/// A reference to a taxon: `rank:name` in a taxonomy, `node:label` for a
/// labelled node (a leaf feature id or a named clade), or a raw handle.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TaxonRef {
    Named { rank: Rank, name: String },
    Label(String),
    Node(NodeId),
}

impl FromStr for TaxonRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (head, name) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("taxon `{s}` is not of the form rank:name")))?;
        if name.is_empty() {
            return Err(Error::invalid(format!("taxon `{s}` has an empty name")));
        }
        if head == "node" {
            return Ok(TaxonRef::Label(name.to_string()));
        }
        let rank: Rank = head
            .parse()
            .map_err(|_| Error::invalid(format!("taxon `{s}`: unknown rank `{head}`")))?;
        Ok(TaxonRef::Named {
            rank,
            name: name.to_string(),
        })
    }
}

impl fmt::Display for TaxonRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaxonRef::Named { rank, name } => write!(f, "{rank}:{name}"),
            TaxonRef::Label(l) => write!(f, "node:{l}"),
            TaxonRef::Node(NodeId(i)) => write!(f, "#{i}"),
        }
    }
}

/// One or more taxa removed together (leave-multiple-out). Written with `+`
/// between members, e.g. `family:A+genus:B`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TaxonSet(pub Vec<TaxonRef>);

impl TaxonSet {
    pub fn single(t: TaxonRef) -> Self {
        TaxonSet(vec![t])
    }

    /// The rank shown in tabular output; `mixed` when members differ.
    pub fn level(&self) -> String {
        let levels: BTreeSet<String> = self
            .0
            .iter()
            .map(|t| match t {
                TaxonRef::Named { rank, .. } => rank.to_string(),
                _ => "node".to_string(),
            })
            .collect();
        if levels.len() == 1 {
            levels.into_iter().next().unwrap()
        } else {
            "mixed".into()
        }
    }

    pub fn names(&self) -> String {
        self.0
            .iter()
            .map(|t| match t {
                TaxonRef::Named { name, .. } | TaxonRef::Label(name) => name.clone(),
                TaxonRef::Node(NodeId(i)) => format!("#{i}"),
            })
            .collect::<Vec<_>>()
            .join("+")
    }
}

impl FromStr for TaxonSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let members = s.split('+').map(str::parse).collect::<Result<Vec<_>>>()?;
        Ok(TaxonSet(members))
    }
}

impl fmt::Display for TaxonSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("+")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

/// Read-only navigation shared by both tree kinds.
pub trait TaxonTree {
    fn n_nodes(&self) -> usize;
    fn root(&self) -> NodeId {
        NodeId(0)
    }
    fn parent(&self, node: NodeId) -> Option<NodeId>;
    fn children(&self, node: NodeId) -> &[NodeId];
    /// The feature id if `node` is a leaf.
    fn leaf_label(&self, node: NodeId) -> Option<&str>;
    fn resolve(&self, taxon: &TaxonRef) -> Result<NodeId>;

    fn leaf_set(&self, node: NodeId) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut stack = vec![node];
        while let Some(v) = stack.pop() {
            let kids = self.children(v);
            if kids.is_empty() {
                if let Some(l) = self.leaf_label(v) {
                    out.insert(l.to_string());
                }
            } else {
                stack.extend_from_slice(kids);
            }
        }
        out
    }

    /// Union of the leaf sets of every member of `set`.
    fn leaf_set_of(&self, set: &TaxonSet) -> Result<BTreeSet<String>> {
        let mut out = BTreeSet::new();
        for t in &set.0 {
            out.extend(self.leaf_set(self.resolve(t)?));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
struct PhyloNode {
    parent: Option<NodeId>,
    children: Vec<NodeId>,
    length: f64,
    label: Option<String>,
}

#[derive(Debug, Clone)]
pub struct PhyloTree {
    nodes: Vec<PhyloNode>,
    leaves: Vec<NodeId>,
    leaf_index: HashMap<String, NodeId>,
    missing_lengths: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NewickOptions {
    /// Reject a non-root node without `:length` instead of reading it as 0.
    pub require_lengths: bool,
}

/// A branch: the edge above `node`, with the ordinals (into
/// [`PhyloTree::leaves`]) of the leaves below it.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub node: NodeId,
    pub length: f64,
    pub leaves: Vec<usize>,
}

impl PhyloTree {
    pub fn parse(text: &str) -> Result<PhyloTree> {
        parse_newick_with(text, NewickOptions::default())
    }

    pub fn length(&self, node: NodeId) -> f64 {
        self.nodes[node.0].length
    }

    pub fn label(&self, node: NodeId) -> Option<&str> {
        self.nodes[node.0].label.as_deref()
    }

    /// Leaves in order of appearance in the source.
    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn leaf(&self, label: &str) -> Option<NodeId> {
        self.leaf_index.get(label).copied()
    }

    pub fn leaf_labels(&self) -> Vec<&str> {
        self.leaves.iter().map(|&l| self.label(l).unwrap()).collect()
    }

    /// Non-root nodes that had no `:length` in the source (read as 0).
    pub fn missing_lengths(&self) -> usize {
        self.missing_lengths
    }

    /// Every non-root branch with its descendant leaf ordinals, built in one
    /// post-order pass.
    pub fn branch_table(&self) -> Vec<Branch> {
        let ordinal: HashMap<NodeId, usize> = self.leaves.iter().enumerate().map(|(i, &l)| (l, i)).collect();
        let mut sets: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        for v in (0..self.nodes.len()).rev() {
            let node = &self.nodes[v];
            if node.children.is_empty() {
                sets[v] = vec![ordinal[&NodeId(v)]];
            } else {
                let mut set: Vec<usize> = node.children.iter().flat_map(|c| sets[c.0].iter().copied()).collect();
                set.sort_unstable();
                sets[v] = set;
            }
        }
        (1..self.nodes.len())
            .map(|v| Branch {
                node: NodeId(v),
                length: self.nodes[v].length,
                leaves: std::mem::take(&mut sets[v]),
            })
            .collect()
    }

    /// Serialize to Newick. Lengths use the shortest round-tripping decimal.
    pub fn to_newick(&self) -> String {
        let mut out = String::new();
        // (node, next child to visit)
        let mut stack: Vec<(usize, usize)> = vec![(0, 0)];
        while let Some((v, next)) = stack.pop() {
            let node = &self.nodes[v];
            if node.children.is_empty() {
                write_label(&mut out, node.label.as_deref());
                write_length(&mut out, v, node.length);
                continue;
            }
            if next == 0 {
                out.push('(');
            } else if next < node.children.len() {
                out.push(',');
            }
            if next < node.children.len() {
                stack.push((v, next + 1));
                stack.push((node.children[next].0, 0));
            } else {
                out.push(')');
                write_label(&mut out, node.label.as_deref());
                write_length(&mut out, v, node.length);
            }
        }
        out.push(';');
        out
    }
}

fn write_label(out: &mut String, label: Option<&str>) {
    let Some(l) = label else { return };
    let plain = !l.is_empty() && !l.chars().any(|c| c.is_whitespace() || "()[]':;,".contains(c));
    if plain {
        out.push_str(l);
    } else {
        out.push('\'');
        out.push_str(&l.replace('\'', "''"));
        out.push('\'');
    }
}

fn write_length(out: &mut String, v: usize, length: f64) {
    if v != 0 {
        out.push(':');
        out.push_str(&format!("{length:?}"));
    }
}

impl TaxonTree for PhyloTree {
    fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn parent(&self, node: NodeId) -> Option<NodeId> {
        self.nodes[node.0].parent
    }

    fn children(&self, node: NodeId) -> &[NodeId] {
        &self.nodes[node.0].children
    }

    fn leaf_label(&self, node: NodeId) -> Option<&str> {
        let n = &self.nodes[node.0];
        if n.children.is_empty() {
            n.label.as_deref()
        } else {
            None
        }
    }

    fn resolve(&self, taxon: &TaxonRef) -> Result<NodeId> {
        match taxon {
            TaxonRef::Node(id) if id.0 < self.nodes.len() => Ok(*id),
            TaxonRef::Node(_) => Err(Error::UnknownTaxon(taxon.to_string())),
            TaxonRef::Label(label) => {
                let hits: Vec<usize> = (0..self.nodes.len())
                    .filter(|&v| self.nodes[v].label.as_deref() == Some(label.as_str()))
                    .collect();
                match hits.len() {
                    0 => Err(Error::UnknownTaxon(taxon.to_string())),
                    1 => Ok(NodeId(hits[0])),
                    n => Err(Error::AmbiguousTaxon {
                        reference: taxon.to_string(),
                        matches: n,
                    }),
                }
            }
            TaxonRef::Named { .. } => Err(Error::invalid(format!(
                "taxon `{taxon}`: a phylogeny has no ranks; use node:LABEL"
            ))),
        }
    }
}

struct NewickParser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    opts: NewickOptions,
    nodes: Vec<PhyloNode>,
    missing: usize,
}

impl<'a> NewickParser<'a> {
    fn err<T>(&self, offset: usize, msg: impl Into<String>) -> Result<T> {
        Err(Error::Newick {
            offset,
            message: msg.into(),
        })
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn skip_ws(&mut self) -> Result<()> {
        loop {
            match self.peek() {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'[') => {
                    let start = self.pos;
                    match self.src[self.pos..].find(']') {
                        Some(end) => self.pos += end + 1,
                        None => return self.err(start, "unterminated comment"),
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn add_node(&mut self, parent: Option<NodeId>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(PhyloNode {
            parent,
            children: Vec::new(),
            length: 0.0,
            label: None,
        });
        if let Some(p) = parent {
            self.nodes[p.0].children.push(id);
        }
        id
    }

    /// Optional label; returns it with its start offset.
    fn label(&mut self) -> Result<Option<(String, usize)>> {
        self.skip_ws()?;
        let start = self.pos;
        if self.peek() == Some(b'\'') {
            self.pos += 1;
            let mut out = String::new();
            loop {
                let rest = &self.src[self.pos..];
                match rest.find('\'') {
                    None => return self.err(start, "unterminated quoted label"),
                    Some(i) => {
                        out.push_str(&rest[..i]);
                        self.pos += i + 1;
                        if self.peek() == Some(b'\'') {
                            out.push('\'');
                            self.pos += 1;
                        } else {
                            return Ok(Some((out, start)));
                        }
                    }
                }
            }
        }
        while let Some(b) = self.peek() {
            if b.is_ascii_whitespace() || b"()[]':;,".contains(&b) {
                break;
            }
            self.pos += 1;
        }
        if self.pos == start {
            Ok(None)
        } else {
            Ok(Some((self.src[start..self.pos].to_string(), start)))
        }
    }

    fn length(&mut self, node: NodeId) -> Result<()> {
        self.skip_ws()?;
        if self.peek() != Some(b':') {
            if node.0 != 0 {
                if self.opts.require_lengths {
                    return self.err(self.pos, "missing branch length");
                }
                self.missing += 1;
            }
            return Ok(());
        }
        self.pos += 1;
        self.skip_ws()?;
        let start = self.pos;
        while let Some(b) = self.peek() {
            if b.is_ascii_digit() || b"+-.eE".contains(&b) {
                self.pos += 1;
            } else {
                break;
            }
        }
        let tok = &self.src[start..self.pos];
        match tok.parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => {
                self.nodes[node.0].length = v;
                Ok(())
            }
            Ok(v) if v < 0.0 => self.err(start, format!("negative branch length `{tok}`")),
            _ if tok.is_empty() => self.err(start, "expected a branch length after ':'"),
            _ => self.err(start, format!("invalid branch length `{tok}`")),
        }
    }

    fn parse(mut self) -> Result<PhyloTree> {
        let mut open: Vec<NodeId> = Vec::new();
        let mut leaf_index: HashMap<String, NodeId> = HashMap::new();
        let mut leaves = Vec::new();

        // Each turn of the outer loop reads one subtree start.
        'subtree: loop {
            self.skip_ws()?;
            let parent = open.last().copied();
            if parent.is_none() && !self.nodes.is_empty() {
                return self.err(self.pos, "more than one tree; expected ';'");
            }
            if self.peek() == Some(b'(') {
                self.pos += 1;
                let id = self.add_node(parent);
                open.push(id);
                continue 'subtree;
            }
            let here = self.pos;
            match self.label()? {
                Some((label, at)) => {
                    let id = self.add_node(parent);
                    if leaf_index.insert(label.clone(), id).is_some() {
                        return self.err(at, format!("duplicate leaf label `{label}`"));
                    }
                    self.nodes[id.0].label = Some(label);
                    leaves.push(id);
                    self.length(id)?;
                }
                None => {
                    let prev = self.src[..here].trim_end().bytes().last();
                    let msg = match (prev, self.peek()) {
                        (Some(b','), _) | (_, Some(b',')) => "dangling comma",
                        (_, None) => "unexpected end of input",
                        (_, Some(b')')) => "empty subtree",
                        (_, Some(b';')) if parent.is_none() => "empty tree",
                        _ => "expected a label or '('",
                    };
                    return self.err(here, msg);
                }
            }

            // After a subtree: close groups until a ',' or the terminator.
            loop {
                self.skip_ws()?;
                match self.peek() {
                    Some(b',') => {
                        if open.is_empty() {
                            return self.err(self.pos, "',' outside parentheses");
                        }
                        self.pos += 1;
                        continue 'subtree;
                    }
                    Some(b')') => {
                        let Some(id) = open.pop() else {
                            return self.err(self.pos, "unbalanced ')'");
                        };
                        self.pos += 1;
                        if let Some((label, _)) = self.label()? {
                            self.nodes[id.0].label = Some(label);
                        }
                        self.length(id)?;
                    }
                    Some(b';') => {
                        if !open.is_empty() {
                            return self.err(self.pos, "missing ')'");
                        }
                        self.pos += 1;
                        self.skip_ws()?;
                        if self.pos != self.bytes.len() {
                            return self.err(self.pos, "trailing characters after ';'");
                        }
                        break 'subtree;
                    }
                    None if !open.is_empty() => return self.err(self.pos, "missing ')'"),
                    None => return self.err(self.pos, "missing ';' terminator"),
                    Some(_) => return self.err(self.pos, "unexpected character"),
                }
            }
        }

        Ok(PhyloTree {
            nodes: self.nodes,
            leaves,
            leaf_index,
            missing_lengths: self.missing,
        })
    }
}

pub fn parse_newick_with(text: &str, opts: NewickOptions) -> Result<PhyloTree> {
    NewickParser {
        src: text,
        bytes: text.as_bytes(),
        pos: 0,
        opts,
        nodes: Vec::new(),
        missing: 0,
    }
    .parse()
}

/// Parse a single Newick statement terminated by `;`. Missing lengths read
/// as 0 (see [`PhyloTree::missing_lengths`]).
pub fn parse_newick(text: &str) -> Result<PhyloTree> {
    parse_newick_with(text, NewickOptions::default())
}

pub fn parse_newick_bytes(bytes: &[u8], opts: NewickOptions) -> Result<PhyloTree> {
    parse_newick_with(decode_utf8(bytes)?, opts)
}

pub fn load_newick(path: impl AsRef<std::path::Path>, opts: NewickOptions) -> Result<PhyloTree> {
    parse_newick_bytes(&crate::error::read_file(path.as_ref())?, opts)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TaxonomyNode {
    Root,
    Taxon { rank: Rank, name: String },
    Leaf(String),
}

#[derive(Debug, Clone)]
struct TaxNode {
    parent: Option<NodeId>,
    children: Vec<NodeId>,
    kind: TaxonomyNode,
}

/// Taxonomy as a tree: root → ranks → feature leaves.
#[derive(Debug, Clone)]
pub struct TaxonomyTree {
    nodes: Vec<TaxNode>,
    by_name: HashMap<(Rank, String), Vec<NodeId>>,
}

impl TaxonomyTree {
    pub fn node(&self, id: NodeId) -> &TaxonomyNode {
        &self.nodes[id.0].kind
    }

    pub fn feature_ids(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.kind {
                TaxonomyNode::Leaf(f) => Some(f.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Reference naming `id` in `rank:name` form where possible.
    pub fn reference(&self, id: NodeId) -> TaxonRef {
        match &self.nodes[id.0].kind {
            TaxonomyNode::Taxon { rank, name } => TaxonRef::Named {
                rank: *rank,
                name: name.clone(),
            },
            TaxonomyNode::Leaf(f) => TaxonRef::Label(f.clone()),
            TaxonomyNode::Root => TaxonRef::Node(id),
        }
    }
}

impl TaxonTree for TaxonomyTree {
    fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn parent(&self, node: NodeId) -> Option<NodeId> {
        self.nodes[node.0].parent
    }

    fn children(&self, node: NodeId) -> &[NodeId] {
        &self.nodes[node.0].children
    }

    fn leaf_label(&self, node: NodeId) -> Option<&str> {
        match &self.nodes[node.0].kind {
            TaxonomyNode::Leaf(f) => Some(f),
            _ => None,
        }
    }

    fn resolve(&self, taxon: &TaxonRef) -> Result<NodeId> {
        let hits: Vec<NodeId> = match taxon {
            TaxonRef::Node(id) if id.0 < self.nodes.len() => return Ok(*id),
            TaxonRef::Node(_) => Vec::new(),
            TaxonRef::Named { rank, name } => self.by_name.get(&(*rank, name.clone())).cloned().unwrap_or_default(),
            TaxonRef::Label(label) => (0..self.nodes.len())
                .filter(|&v| match &self.nodes[v].kind {
                    TaxonomyNode::Leaf(f) => f == label,
                    TaxonomyNode::Taxon { name, .. } => name == label,
                    TaxonomyNode::Root => false,
                })
                .map(NodeId)
                .collect(),
        };
        match hits.len() {
            0 => Err(Error::UnknownTaxon(taxon.to_string())),
            1 => Ok(hits[0]),
            n => Err(Error::AmbiguousTaxon {
                reference: taxon.to_string(),
                matches: n,
            }),
        }
    }
}

/// Merge shared lineage prefixes into a tree whose leaves are feature ids.
/// Features without a lineage hang directly off the root.
pub fn build_taxonomy_tree(assignments: &[TaxonomyAssignment]) -> Result<TaxonomyTree> {
    if assignments.is_empty() {
        return Err(Error::invalid("no taxonomy assignments"));
    }
    let mut nodes = vec![TaxNode {
        parent: None,
        children: Vec::new(),
        kind: TaxonomyNode::Root,
    }];
    let mut child_of: HashMap<(usize, Rank, &str), usize> = HashMap::new();
    let mut by_name: HashMap<(Rank, String), Vec<NodeId>> = HashMap::new();
    let mut seen = std::collections::HashSet::new();
    let mut dup = BTreeSet::new();

    let push = |nodes: &mut Vec<TaxNode>, parent: usize, kind: TaxonomyNode| {
        let id = nodes.len();
        nodes.push(TaxNode {
            parent: Some(NodeId(parent)),
            children: Vec::new(),
            kind,
        });
        nodes[parent].children.push(NodeId(id));
        id
    };

    for a in assignments {
        if !seen.insert(a.feature_id.as_str()) {
            dup.insert(a.feature_id.clone());
            continue;
        }
        let mut cur = 0usize;
        let mut last: Option<Rank> = None;
        for (rank, name) in &a.lineage {
            if last.is_some_and(|l| *rank <= l) {
                return Err(Error::invalid(format!(
                    "feature `{}`: lineage ranks are not broad-to-specific",
                    a.feature_id
                )));
            }
            last = Some(*rank);
            cur = match child_of.get(&(cur, *rank, name.as_str())) {
                Some(&c) => c,
                None => {
                    let id = push(
                        &mut nodes,
                        cur,
                        TaxonomyNode::Taxon {
                            rank: *rank,
                            name: name.clone(),
                        },
                    );
                    child_of.insert((cur, *rank, name.as_str()), id);
                    by_name.entry((*rank, name.clone())).or_default().push(NodeId(id));
                    id
                }
            };
        }
        push(&mut nodes, cur, TaxonomyNode::Leaf(a.feature_id.clone()));
    }
    if !dup.is_empty() {
        return Err(Error::Duplicate {
            kind: "taxonomy feature",
            ids: dup.into_iter().collect(),
        });
    }
    Ok(TaxonomyTree { nodes, by_name })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn offset(e: Error) -> usize {
        match e {
            Error::Newick { offset, .. } => offset,
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn two_leaves() {
        let t = parse_newick("(A:1,B:2);").unwrap();
        assert_eq!(t.leaf_labels(), vec!["A", "B"]);
        assert_eq!(t.length(t.leaf("A").unwrap()), 1.0);
        assert_eq!(t.length(t.leaf("B").unwrap()), 2.0);
        assert_eq!(t.parent(t.leaf("A").unwrap()), Some(t.root()));
    }

    #[test]
    fn nested_internal_node() {
        let t = parse_newick("((A:1,B:1):0.5,C:2);").unwrap();
        let a = t.leaf("A").unwrap();
        let internal = t.parent(a).unwrap();
        assert_ne!(internal, t.root());
        assert_eq!(t.length(internal), 0.5);
        assert_eq!(t.parent(internal), Some(t.root()));
        assert_eq!(t.leaf_set(t.root()), set(&["A", "B", "C"]));
    }

    #[test]
    fn missing_close_paren_offset() {
        let e = parse_newick("(A:1,B:2").unwrap_err();
        assert!(e.to_string().contains("missing ')'"), "{e}");
        assert_eq!(offset(e), 8);
    }

    #[test]
    fn other_errors_carry_offsets() {
        assert_eq!(offset(parse_newick("(A,);").unwrap_err()), 3);
        assert!(parse_newick("(A,);").unwrap_err().to_string().contains("dangling comma"));
        assert_eq!(offset(parse_newick("(A,B)").unwrap_err()), 5);
        assert_eq!(offset(parse_newick("(A,A);").unwrap_err()), 3);
        assert!(parse_newick("(A,B));").is_err());
        assert!(parse_newick("(A:-1,B);").is_err());
        assert!(parse_newick("(A,B); x").is_err());
        assert!(parse_newick("").is_err());
        assert!(parse_newick(";").is_err());
    }

    #[test]
    fn support_values_stay_labels() {
        let t = parse_newick("((A:1,B:1)0.95:0.5,C:2);").unwrap();
        let internal = t.parent(t.leaf("A").unwrap()).unwrap();
        assert_eq!(t.label(internal), Some("0.95"));
        assert_eq!(t.length(internal), 0.5);
    }

    #[test]
    fn quoted_labels_and_underscores() {
        let t = parse_newick("('a b':1,'it''s':1,c_d:1);").unwrap();
        assert!(t.leaf("a b").is_some());
        assert!(t.leaf("it's").is_some());
        assert!(t.leaf("c_d").is_some());
    }

    #[test]
    fn comments_and_whitespace() {
        let t = parse_newick(" ( A : 1 [comment] , B:2 ) root ;\n").unwrap();
        assert_eq!(t.leaf_labels(), vec!["A", "B"]);
        assert_eq!(t.label(t.root()), Some("root"));
    }

    #[test]
    fn missing_lengths_default_or_error() {
        let t = parse_newick("((A,B),C:1);").unwrap();
        assert_eq!(t.missing_lengths(), 3);
        assert_eq!(t.length(t.leaf("A").unwrap()), 0.0);
        let strict = NewickOptions { require_lengths: true };
        assert!(parse_newick_with("((A,B),C:1);", strict).is_err());
        assert!(parse_newick_with("((A:1,B:1):1,C:1);", strict).is_ok());
    }

    #[test]
    fn single_leaf_and_multifurcation() {
        let t = parse_newick("A;").unwrap();
        assert_eq!(t.leaf_labels(), vec!["A"]);
        assert!(t.branch_table().is_empty());
        let t = parse_newick("(A:1,B:1,C:1,D:1);").unwrap();
        assert_eq!(t.children(t.root()).len(), 4);
    }

    #[test]
    fn deep_nesting_does_not_recurse() {
        let depth = 100_000;
        let text = format!("{}A{};", "(".repeat(depth), ")".repeat(depth));
        let t = parse_newick(&text).unwrap();
        assert_eq!(t.n_nodes(), depth + 1);
        let back = t.to_newick();
        assert_eq!(parse_newick(&back).unwrap().n_nodes(), depth + 1);
        assert_eq!(t.branch_table().len(), depth);
    }

    #[test]
    fn branch_tables() {
        let t = parse_newick("(A:1,B:2);").unwrap();
        let b = t.branch_table();
        assert_eq!(b.len(), 2);
        assert_eq!((b[0].length, b[0].leaves.clone()), (1.0, vec![0]));
        assert_eq!((b[1].length, b[1].leaves.clone()), (2.0, vec![1]));

        let t = parse_newick("((A:1,B:1):0.5,C:2);").unwrap();
        let b = t.branch_table();
        assert_eq!(b.len(), 4);
        let internal = b.iter().find(|x| x.leaves.len() == 2).unwrap();
        assert_eq!(internal.length, 0.5);
        assert_eq!(internal.leaves, vec![0, 1]);

        let t = parse_newick("(A:1,B:1,C:1);").unwrap();
        let b = t.branch_table();
        assert_eq!(b.len(), 3);
        assert!(b.iter().all(|x| x.leaves.len() == 1));
    }

    #[test]
    fn leaf_set_queries() {
        let t = parse_newick("((A,B)X,C);").unwrap();
        let x = t.resolve(&TaxonRef::Label("X".into())).unwrap();
        assert_eq!(t.leaf_set(x), set(&["A", "B"]));
        let a = t.resolve(&"node:A".parse().unwrap()).unwrap();
        assert_eq!(t.leaf_set(a), set(&["A"]));
        assert!(t.resolve(&"family:X".parse().unwrap()).is_err());
    }

    fn assign(id: &str, lineage: &[(Rank, &str)]) -> TaxonomyAssignment {
        TaxonomyAssignment {
            feature_id: id.into(),
            lineage: lineage.iter().map(|(r, n)| (*r, n.to_string())).collect(),
        }
    }

    #[test]
    fn shared_prefix_merges() {
        let t = build_taxonomy_tree(&[
            assign("ASV1", &[(Rank::Kingdom, "B"), (Rank::Phylum, "F")]),
            assign("ASV2", &[(Rank::Kingdom, "B"), (Rank::Phylum, "F")]),
        ])
        .unwrap();
        let root_kids = t.children(t.root());
        assert_eq!(root_kids.len(), 1);
        let k = root_kids[0];
        assert_eq!(t.node(k), &TaxonomyNode::Taxon { rank: Rank::Kingdom, name: "B".into() });
        let p = t.children(k)[0];
        assert_eq!(t.children(k).len(), 1);
        assert_eq!(t.leaf_set(p), set(&["ASV1", "ASV2"]));
        assert_eq!(t.children(p).len(), 2);
    }

    #[test]
    fn siblings_under_shared_parent() {
        let t = build_taxonomy_tree(&[
            assign("ASV1", &[(Rank::Kingdom, "B"), (Rank::Phylum, "F")]),
            assign("ASV2", &[(Rank::Kingdom, "B"), (Rank::Phylum, "X")]),
        ])
        .unwrap();
        let f = t.resolve(&"phylum:F".parse().unwrap()).unwrap();
        let x = t.resolve(&"phylum:X".parse().unwrap()).unwrap();
        assert_eq!(t.parent(f), t.parent(x));
        assert_eq!(t.parent(f), Some(t.resolve(&"kingdom:B".parse().unwrap()).unwrap()));
    }

    #[test]
    fn empty_lineage_hangs_off_root() {
        let t = build_taxonomy_tree(&[assign("ASV1", &[])]).unwrap();
        let leaf = t.resolve(&TaxonRef::Label("ASV1".into())).unwrap();
        assert_eq!(t.parent(leaf), Some(t.root()));
        assert_eq!(t.leaf_set(leaf), set(&["ASV1"]));
        assert_eq!(t.leaf_set(t.root()), set(&["ASV1"]));
    }

    #[test]
    fn duplicate_feature_rejected() {
        let e = build_taxonomy_tree(&[assign("ASV1", &[]), assign("ASV1", &[])]).unwrap_err();
        assert!(e.to_string().contains("ASV1"));
    }

    #[test]
    fn ambiguous_and_unknown_names() {
        let t = build_taxonomy_tree(&[
            assign("a", &[(Rank::Family, "F1"), (Rank::Genus, "G")]),
            assign("b", &[(Rank::Family, "F2"), (Rank::Genus, "G")]),
        ])
        .unwrap();
        assert!(matches!(
            t.resolve(&"genus:G".parse().unwrap()),
            Err(Error::AmbiguousTaxon { matches: 2, .. })
        ));
        assert!(matches!(t.resolve(&"genus:H".parse().unwrap()), Err(Error::UnknownTaxon(_))));
    }

    #[test]
    fn taxon_reference_grammar() {
        let r: TaxonRef = "family:Ruminococcaceae".parse().unwrap();
        assert_eq!(r, TaxonRef::Named { rank: Rank::Family, name: "Ruminococcaceae".into() });
        assert_eq!(r.to_string(), "family:Ruminococcaceae");
        assert!("Ruminococcaceae".parse::<TaxonRef>().is_err());
        assert!("tribe:X".parse::<TaxonRef>().is_err());
        let s: TaxonSet = "family:A+genus:B".parse().unwrap();
        assert_eq!(s.0.len(), 2);
        assert_eq!(s.to_string(), "family:A+genus:B");
        assert_eq!(s.level(), "mixed");
    }
}
