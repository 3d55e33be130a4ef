//! Reasoning plans.
//!
//! A plan is a rooted DAG whose root is the user's original query and whose
//! other nodes are subquery templates. Templates may embed answer tags
//! (`<A1.1>`) that are filled in with a parent's answer at execution time.
//!
//! Node ids follow the `QI.J` scheme, where `I` is the node's longest-path
//! distance from the root and `J` its position among the nodes at that depth.
//! The root is rendered as plain `Q`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::parser::{self, TemplateSegment};

/// Identifier of a plan node: depth index and position within that depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId {
    depth: u32,
    position: u32,
}

impl NodeId {
    /// The main-query node. Position 0 is used by the root only.
    pub const ROOT: NodeId = NodeId {
        depth: 0,
        position: 0,
    };

    /// Creates a subquery id. Both indices must be at least 1.
    pub fn new(depth: u32, position: u32) -> Option<Self> {
        (depth >= 1 && position >= 1).then_some(Self { depth, position })
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn position(&self) -> u32 {
        self.position
    }

    pub fn is_root(&self) -> bool {
        *self == Self::ROOT
    }

    /// The tag that refers to this node's answer, or `None` for the root.
    pub fn answer_tag(&self) -> Option<AnswerTag> {
        (!self.is_root()).then_some(AnswerTag { target: *self })
    }

    /// Label used for this node's answer, e.g. `A1.2`.
    pub fn answer_label(&self) -> String {
        if self.is_root() {
            "A".to_string()
        } else {
            format!("A{}.{}", self.depth, self.position)
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_root() {
            f.write_str("Q")
        } else {
            write!(f, "Q{}.{}", self.depth, self.position)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid node id `{0}`")]
pub struct InvalidNodeId(pub String);

impl FromStr for NodeId {
    type Err = InvalidNodeId;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || InvalidNodeId(s.to_string());
        let rest = s.strip_prefix('Q').ok_or_else(bad)?;
        if rest.is_empty() {
            return Ok(NodeId::ROOT);
        }
        let (depth, position) = rest.split_once('.').ok_or_else(bad)?;
        let depth = parse_index(depth).ok_or_else(bad)?;
        let position = parse_index(position).ok_or_else(bad)?;
        NodeId::new(depth, position).ok_or_else(bad)
    }
}

/// Parses a decimal index made of ASCII digits only (no sign, no spaces).
pub(crate) fn parse_index(s: &str) -> Option<u32> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

impl Serialize for NodeId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A placeholder `<AI.J>` for the answer of node `QI.J`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AnswerTag {
    pub target: NodeId,
}

impl fmt::Display for AnswerTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "<A{}.{}>",
            self.target.depth(),
            self.target.position()
        )
    }
}

/// One subquery template and the tags it must resolve before it can run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanNode {
    pub id: NodeId,
    pub template: String,
    pub tags: Vec<AnswerTag>,
}

impl PlanNode {
    fn new(id: NodeId, template: String) -> Self {
        let tags = if id.is_root() {
            Vec::new()
        } else {
            parser::extract_tags(&template)
        };
        Self { id, template, tags }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("plan contains a cycle through {}", join_ids(.0))]
    CycleDetected(Vec<NodeId>),
    #[error("node {0} is not reachable from the root")]
    DisconnectedNode(NodeId),
    #[error("plan has more than one sink: {}", join_ids(.0))]
    MultipleSinks(Vec<NodeId>),
    #[error("node {0} is defined twice with different templates")]
    DuplicateNode(NodeId),
    #[error("node {node} uses tag {tag} which is not one of its parents")]
    DanglingTag { node: NodeId, tag: AnswerTag },
    #[error("the root cannot have a parent (edge from {0})")]
    RootHasParent(NodeId),
    #[error("edge references undefined node {0}")]
    UnknownNode(NodeId),
}

fn join_ids(ids: &[NodeId]) -> String {
    ids.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

/// A node label as it appears in planner output: id plus template text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeLabel {
    pub id: NodeId,
    pub template: String,
}

impl NodeLabel {
    pub fn new(id: NodeId, template: impl Into<String>) -> Self {
        Self {
            id,
            template: template.into(),
        }
    }
}

/// A validated reasoning plan. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReasoningDag {
    original_query: String,
    nodes: BTreeMap<NodeId, PlanNode>,
    edges: BTreeSet<(NodeId, NodeId)>,
    parents: BTreeMap<NodeId, Vec<NodeId>>,
    children: BTreeMap<NodeId, Vec<NodeId>>,
    sink: NodeId,
}

/// Builds a plan from `(parent, child)` label pairs.
///
/// An empty edge list yields the single-node plan for a simple query.
pub fn build_dag(
    original_query: &str,
    edges: &[(NodeLabel, NodeLabel)],
) -> Result<ReasoningDag, PlanError> {
    build_dag_with_warnings(original_query, edges).map(|(dag, _)| dag)
}

/// Like [`build_dag`], also returning the repair warnings that were raised.
pub fn build_dag_with_warnings(
    original_query: &str,
    edges: &[(NodeLabel, NodeLabel)],
) -> Result<(ReasoningDag, Vec<String>), PlanError> {
    let mut builder = DagBuilder::new(original_query);
    for (parent, child) in edges {
        builder.node(parent.id, &parent.template)?;
        builder.node(child.id, &child.template)?;
        builder.edge(parent.id, child.id);
    }
    builder.build()
}

/// Incremental plan construction with validation deferred to [`DagBuilder::build`].
#[derive(Debug, Clone)]
pub struct DagBuilder {
    original_query: String,
    templates: BTreeMap<NodeId, String>,
    edges: BTreeSet<(NodeId, NodeId)>,
    warnings: Vec<String>,
}

impl DagBuilder {
    pub fn new(original_query: &str) -> Self {
        Self {
            original_query: original_query.trim().to_string(),
            templates: BTreeMap::new(),
            edges: BTreeSet::new(),
            warnings: Vec::new(),
        }
    }

    /// Declares a node. Redeclaring with the same template is a no-op.
    pub fn node(&mut self, id: NodeId, template: &str) -> Result<&mut Self, PlanError> {
        let template = template.trim();
        if id.is_root() {
            if !template.is_empty() && template != self.original_query {
                let msg = "root label text differs from the original query; using the original query"
                    .to_string();
                if !self.warnings.contains(&msg) {
                    self.warnings.push(msg);
                }
            }
            return Ok(self);
        }
        match self.templates.get(&id) {
            Some(existing) if existing != template => Err(PlanError::DuplicateNode(id)),
            Some(_) => Ok(self),
            None => {
                self.templates.insert(id, template.to_string());
                Ok(self)
            }
        }
    }

    pub fn edge(&mut self, parent: NodeId, child: NodeId) -> &mut Self {
        self.edges.insert((parent, child));
        self
    }

    pub fn build(mut self) -> Result<(ReasoningDag, Vec<String>), PlanError> {
        for &(p, c) in &self.edges {
            for id in [p, c] {
                if !id.is_root() && !self.templates.contains_key(&id) {
                    return Err(PlanError::UnknownNode(id));
                }
            }
        }
        if let Some(&(p, _)) = self.edges.iter().find(|(_, c)| c.is_root()) {
            if p.is_root() {
                return Err(PlanError::CycleDetected(vec![NodeId::ROOT]));
            }
            return Err(PlanError::RootHasParent(p));
        }

        let mut ids: BTreeSet<NodeId> = self.templates.keys().copied().collect();
        ids.insert(NodeId::ROOT);

        if let Some(cycle) = find_cycle_members(&ids, &self.edges) {
            return Err(PlanError::CycleDetected(cycle));
        }

        // Planner output that never mentions the root: hang every
        // parentless subquery off the main query.
        let root_used = self.edges.iter().any(|(p, _)| p.is_root());
        if !root_used && ids.len() > 1 {
            let with_parent: BTreeSet<NodeId> = self.edges.iter().map(|&(_, c)| c).collect();
            let orphans: Vec<NodeId> = ids
                .iter()
                .copied()
                .filter(|id| !id.is_root() && !with_parent.contains(id))
                .collect();
            for &id in &orphans {
                self.edges.insert((NodeId::ROOT, id));
            }
            self.warnings.push(format!(
                "plan does not start at Q; attached {} to the root",
                join_ids(&orphans)
            ));
        }

        let (parents, children) = adjacency(&ids, &self.edges);

        // Reachability from the root.
        let mut seen = BTreeSet::from([NodeId::ROOT]);
        let mut queue = VecDeque::from([NodeId::ROOT]);
        while let Some(id) = queue.pop_front() {
            for &c in &children[&id] {
                if seen.insert(c) {
                    queue.push_back(c);
                }
            }
        }
        if let Some(&lost) = ids.iter().find(|id| !seen.contains(id)) {
            return Err(PlanError::DisconnectedNode(lost));
        }

        // Markov property: a tag may only name one of the node's parents.
        for (&id, template) in &self.templates {
            for tag in parser::extract_tags(template) {
                if !parents[&id].contains(&tag.target) {
                    return Err(PlanError::DanglingTag { node: id, tag });
                }
            }
        }

        let sinks: Vec<NodeId> = ids
            .iter()
            .copied()
            .filter(|id| children[id].is_empty())
            .collect();
        if sinks.len() > 1 {
            return Err(PlanError::MultipleSinks(sinks));
        }

        let depths = longest_path_depths(&ids, &parents);
        let consistent = ids.iter().all(|id| id.depth() as usize == depths[id]);
        let mut warnings = self.warnings;
        let (templates, edges) = if consistent {
            (self.templates, self.edges)
        } else {
            let mapping = relabel_by_depth(&ids, &depths);
            let changed: Vec<String> = mapping
                .iter()
                .filter(|(old, new)| old != new)
                .map(|(old, new)| format!("{old}->{new}"))
                .collect();
            warnings.push(format!(
                "node labels disagree with plan topology; relabelled {}",
                changed.join(", ")
            ));
            let templates = self
                .templates
                .into_iter()
                .map(|(id, t)| (mapping[&id], rewrite_tags(&t, &mapping)))
                .collect();
            let edges = self
                .edges
                .into_iter()
                .map(|(p, c)| (mapping[&p], mapping[&c]))
                .collect();
            (templates, edges)
        };

        Ok((
            ReasoningDag::assemble(self.original_query, templates, edges),
            warnings,
        ))
    }
}

fn adjacency(
    ids: &BTreeSet<NodeId>,
    edges: &BTreeSet<(NodeId, NodeId)>,
) -> (BTreeMap<NodeId, Vec<NodeId>>, BTreeMap<NodeId, Vec<NodeId>>) {
    let mut parents: BTreeMap<NodeId, Vec<NodeId>> =
        ids.iter().map(|&id| (id, Vec::new())).collect();
    let mut children = parents.clone();
    for &(p, c) in edges {
        parents.get_mut(&c).expect("known node").push(p);
        children.get_mut(&p).expect("known node").push(c);
    }
    (parents, children)
}

/// Kahn's algorithm; returns the nodes left over when the graph has a cycle.
fn find_cycle_members(
    ids: &BTreeSet<NodeId>,
    edges: &BTreeSet<(NodeId, NodeId)>,
) -> Option<Vec<NodeId>> {
    let (parents, children) = adjacency(ids, edges);
    let mut indegree: BTreeMap<NodeId, usize> =
        parents.iter().map(|(&id, ps)| (id, ps.len())).collect();
    let mut ready: VecDeque<NodeId> = indegree
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&id, _)| id)
        .collect();
    let mut removed = 0;
    while let Some(id) = ready.pop_front() {
        removed += 1;
        for c in &children[&id] {
            let d = indegree.get_mut(c).expect("known node");
            *d -= 1;
            if *d == 0 {
                ready.push_back(*c);
            }
        }
    }
    (removed < ids.len()).then(|| {
        indegree
            .into_iter()
            .filter(|(_, d)| *d > 0)
            .map(|(id, _)| id)
            .collect()
    })
}

/// Longest-path distance from the root for every node of an acyclic graph.
fn longest_path_depths(
    ids: &BTreeSet<NodeId>,
    parents: &BTreeMap<NodeId, Vec<NodeId>>,
) -> BTreeMap<NodeId, usize> {
    fn visit(
        id: NodeId,
        parents: &BTreeMap<NodeId, Vec<NodeId>>,
        memo: &mut BTreeMap<NodeId, usize>,
    ) -> usize {
        if let Some(&d) = memo.get(&id) {
            return d;
        }
        let d = parents[&id]
            .iter()
            .map(|&p| visit(p, parents, memo) + 1)
            .max()
            .unwrap_or(0);
        memo.insert(id, d);
        d
    }
    let mut memo = BTreeMap::new();
    for &id in ids {
        visit(id, parents, &mut memo);
    }
    memo
}

fn relabel_by_depth(
    ids: &BTreeSet<NodeId>,
    depths: &BTreeMap<NodeId, usize>,
) -> BTreeMap<NodeId, NodeId> {
    let mut next_position: BTreeMap<usize, u32> = BTreeMap::new();
    let mut mapping = BTreeMap::new();
    // `ids` iterates in old-label order, which fixes positions within a depth.
    for &id in ids {
        if id.is_root() {
            mapping.insert(id, id);
            continue;
        }
        let depth = depths[&id];
        let pos = next_position.entry(depth).or_insert(0);
        *pos += 1;
        let new = NodeId::new(depth as u32, *pos).expect("depth >= 1 for non-root");
        mapping.insert(id, new);
    }
    mapping
}

fn rewrite_tags(template: &str, mapping: &BTreeMap<NodeId, NodeId>) -> String {
    parser::split_template(template)
        .into_iter()
        .map(|seg| match seg {
            TemplateSegment::Text(t) => t.to_string(),
            TemplateSegment::Tag(tag) => match mapping.get(&tag.target) {
                Some(&target) => AnswerTag { target }.to_string(),
                None => tag.to_string(),
            },
        })
        .collect()
}

impl ReasoningDag {
    /// The single-node plan used for queries that need no decomposition.
    pub fn simple(original_query: &str) -> Self {
        Self::assemble(
            original_query.trim().to_string(),
            BTreeMap::new(),
            BTreeSet::new(),
        )
    }

    fn assemble(
        original_query: String,
        templates: BTreeMap<NodeId, String>,
        edges: BTreeSet<(NodeId, NodeId)>,
    ) -> Self {
        let mut nodes: BTreeMap<NodeId, PlanNode> = templates
            .into_iter()
            .map(|(id, t)| (id, PlanNode::new(id, t)))
            .collect();
        nodes.insert(
            NodeId::ROOT,
            PlanNode::new(NodeId::ROOT, original_query.clone()),
        );
        let ids: BTreeSet<NodeId> = nodes.keys().copied().collect();
        let (parents, children) = adjacency(&ids, &edges);
        let sink = children
            .iter()
            .find(|(_, cs)| cs.is_empty())
            .map(|(&id, _)| id)
            .expect("acyclic graph has a sink");
        Self {
            original_query,
            nodes,
            edges,
            parents,
            children,
            sink,
        }
    }

    pub fn original_query(&self) -> &str {
        &self.original_query
    }

    pub fn nodes(&self) -> impl Iterator<Item = &PlanNode> {
        self.nodes.values()
    }

    pub fn node(&self, id: NodeId) -> Option<&PlanNode> {
        self.nodes.get(&id)
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Always false: a plan has at least its root.
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.edges.iter().copied()
    }

    pub fn parents(&self, id: NodeId) -> &[NodeId] {
        self.parents.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        self.children.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn root(&self) -> NodeId {
        NodeId::ROOT
    }

    pub fn sink(&self) -> NodeId {
        self.sink
    }

    /// True when the plan is just the main query.
    pub fn is_simple(&self) -> bool {
        self.nodes.len() == 1
    }

    /// Longest-path distance of every node from the root.
    pub fn node_depths(&self) -> BTreeMap<NodeId, usize> {
        let ids = self.nodes.keys().copied().collect();
        longest_path_depths(&ids, &self.parents)
    }

    /// Nodes grouped by depth; layer `i` holds every node at depth `i`.
    pub fn layers(&self) -> Vec<Vec<NodeId>> {
        let depths = self.node_depths();
        let max = depths.values().copied().max().unwrap_or(0);
        let mut layers = vec![Vec::new(); max + 1];
        for (id, d) in depths {
            layers[d].push(id);
        }
        layers
    }

    /// Maximum depth over subquery nodes; 0 for a simple query.
    pub fn reasoning_depth(&self) -> usize {
        self.node_depths().values().copied().max().unwrap_or(0)
    }

    /// Every node reachable from `id`, excluding `id` itself.
    pub fn descendants(&self, id: NodeId) -> BTreeSet<NodeId> {
        let mut out = BTreeSet::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            for &c in self.children(n) {
                if out.insert(c) {
                    stack.push(c);
                }
            }
        }
        out
    }

    pub fn to_canonical(&self) -> CanonicalPlan {
        CanonicalPlan {
            original_query: self.original_query.clone(),
            nodes: self
                .nodes
                .values()
                .map(|n| CanonicalNode {
                    id: n.id,
                    template: n.template.clone(),
                })
                .collect(),
            edges: self.edges.iter().map(|&(p, c)| [p, c]).collect(),
        }
    }

    pub fn from_canonical(plan: &CanonicalPlan) -> Result<Self, PlanError> {
        Self::from_canonical_with_warnings(plan).map(|(dag, _)| dag)
    }

    pub fn from_canonical_with_warnings(
        plan: &CanonicalPlan,
    ) -> Result<(Self, Vec<String>), PlanError> {
        let mut builder = DagBuilder::new(&plan.original_query);
        for n in &plan.nodes {
            builder.node(n.id, &n.template)?;
        }
        for &[p, c] in &plan.edges {
            builder.edge(p, c);
        }
        builder.build()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_canonical()).expect("plan serializes")
    }

    /// Renders the plan in the planner's tuple-list output syntax.
    pub fn to_tuple_text(&self) -> String {
        let label = |id: NodeId| quote(&format!("{}: {}", id, self.nodes[&id].template));
        if self.is_simple() {
            return label(NodeId::ROOT);
        }
        let rows: Vec<String> = self
            .edges
            .iter()
            .map(|&(p, c)| format!("\t({}, {})", label(p), label(c)))
            .collect();
        format!("[\n{}\n]", rows.join(",\n"))
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            _ => out.push(ch),
        }
    }
    out.push('"');
    out
}

/// JSON form of a plan used for caching and fixtures.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalPlan {
    pub original_query: String,
    pub nodes: Vec<CanonicalNode>,
    pub edges: Vec<[NodeId; 2]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalNode {
    pub id: NodeId,
    pub template: String,
}
