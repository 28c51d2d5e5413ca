//! Live reconfiguration of a running stack from a new definition.
//!
//! Old and new nodes are matched first by identical alias and type id, then
//! by type id and position within the same branch path. Positional matching
//! never pairs two nodes that both carry (different) aliases, so aliasing
//! every component is the reliable way to keep state across a change.
//! Demux branch templates are not matched node by node: a kept demux node
//! keeps its live branches when its template is unchanged, and loses them
//! otherwise.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::adl::{
    validate, BranchRef, ComponentNode, NodePath, OptionBinding, Shape, StackDefinition,
};
use crate::assembly::{AssemblyError, DemuxState, Fanout, NodeId, StackInstance};
use crate::component::OptionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PortRef {
    /// Linear successor, or the join a demux node's branches end on.
    Next,
    Alt(usize),
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PortRef::Next => f.write_str("next"),
            PortRef::Alt(b) => write!(f, "alt{b}"),
        }
    }
}

/// One port whose target changes, in new-definition coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rewire {
    pub from: NodePath,
    pub port: PortRef,
    pub to: Option<NodePath>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReconfigPlan {
    /// `(old position, new position)`.
    pub keep: Vec<(NodePath, NodePath)>,
    pub create: Vec<NodePath>,
    pub destroy: Vec<NodePath>,
    pub rewire: Vec<Rewire>,
    /// Kept nodes (new position) whose bound value changes.
    pub option_updates: Vec<(NodePath, OptionBinding)>,
    /// Kept demux nodes (new position) whose branch template changed.
    pub demux_resets: Vec<NodePath>,
}

impl ReconfigPlan {
    pub fn is_identity(&self) -> bool {
        self.create.is_empty()
            && self.destroy.is_empty()
            && self.rewire.is_empty()
            && self.option_updates.is_empty()
            && self.demux_resets.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReconfigError {
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error("{component}: {error}")]
    Option {
        component: String,
        error: OptionError,
    },
    #[error("stack is not running")]
    NotRunning,
}

fn nodes(def: &StackDefinition) -> Vec<(NodePath, &ComponentNode)> {
    let mut out = Vec::new();
    def.visit(false, &mut |p, n| out.push((p.clone(), n)));
    out
}

type EdgeMap = BTreeMap<(NodePath, PortRef), Option<NodePath>>;

fn edges(def: &StackDefinition) -> EdgeMap {
    fn walk(
        seq: &[ComponentNode],
        prefix: &[crate::adl::BranchStep],
        cont: Option<NodePath>,
        out: &mut EdgeMap,
    ) {
        let path = |i: usize| NodePath {
            steps: prefix.to_vec(),
            index: i,
        };
        for (i, node) in seq.iter().enumerate() {
            let here = path(i);
            let next = if i + 1 < seq.len() {
                Some(path(i + 1))
            } else {
                cont.clone()
            };
            match &node.shape {
                Shape::Simple => {
                    out.insert((here, PortRef::Next), next);
                }
                Shape::Demux(_) => {
                    out.insert((here, PortRef::Next), next);
                }
                Shape::Alternative(branches) => {
                    for (b, branch) in branches.iter().enumerate() {
                        let mut steps = prefix.to_vec();
                        steps.push(crate::adl::BranchStep {
                            node: i,
                            branch: BranchRef::Alt(b),
                        });
                        out.insert(
                            (here.clone(), PortRef::Alt(b)),
                            Some(NodePath {
                                steps: steps.clone(),
                                index: 0,
                            }),
                        );
                        walk(branch, &steps, next.clone(), out);
                    }
                }
            }
        }
    }
    let mut out = EdgeMap::new();
    walk(&def.body, &[], None, &mut out);
    out
}

/// Computes the minimal-destruction plan turning `old` into `new`.
pub fn diff(old: &StackDefinition, new: &StackDefinition) -> ReconfigPlan {
    let old_nodes = nodes(old);
    let new_nodes = nodes(new);

    let mut new_to_old: HashMap<NodePath, NodePath> = HashMap::new();
    let mut old_taken: HashSet<NodePath> = HashSet::new();

    let old_by_alias: HashMap<&str, (&NodePath, &ComponentNode)> = old_nodes
        .iter()
        .filter_map(|(p, n)| n.alias.as_deref().map(|a| (a, (p, *n))))
        .collect();
    for (np, nn) in &new_nodes {
        let Some(alias) = nn.alias.as_deref() else {
            continue;
        };
        if let Some((op, on)) = old_by_alias.get(alias) {
            if on.type_id == nn.type_id && !old_taken.contains(*op) {
                old_taken.insert((*op).clone());
                new_to_old.insert(np.clone(), (*op).clone());
            }
        }
    }

    let old_by_pos: HashMap<&NodePath, &ComponentNode> =
        old_nodes.iter().map(|(p, n)| (p, *n)).collect();
    for (np, nn) in &new_nodes {
        if new_to_old.contains_key(np) || old_taken.contains(np) {
            continue;
        }
        if let Some(on) = old_by_pos.get(np) {
            let both_aliased = on.alias.is_some() && nn.alias.is_some();
            if on.type_id == nn.type_id && !both_aliased {
                old_taken.insert(np.clone());
                new_to_old.insert(np.clone(), np.clone());
            }
        }
    }

    let mut plan = ReconfigPlan::default();
    for (np, nn) in &new_nodes {
        match new_to_old.get(np) {
            Some(op) => {
                plan.keep.push((op.clone(), np.clone()));
                let on = old.node(op).expect("old node");
                for b in &nn.options {
                    if let Some(v) = &b.value {
                        if on.binding(&b.name).and_then(|ob| ob.value.as_ref()) != Some(v) {
                            plan.option_updates.push((np.clone(), b.clone()));
                        }
                    }
                }
                if let (Shape::Demux(ot), Shape::Demux(nt)) = (&on.shape, &nn.shape) {
                    if ot != nt {
                        plan.demux_resets.push(np.clone());
                    }
                }
            }
            None => plan.create.push(np.clone()),
        }
    }
    plan.destroy = old_nodes
        .iter()
        .filter(|(p, _)| !old_taken.contains(p))
        .map(|(p, _)| p.clone())
        .collect();

    let old_to_new: HashMap<&NodePath, &NodePath> =
        new_to_old.iter().map(|(n, o)| (o, n)).collect();
    let old_edges = edges(old);
    for ((from, port), to) in edges(new) {
        let changed = match new_to_old.get(&from) {
            None => to.is_some(),
            Some(old_from) => match old_edges.get(&(old_from.clone(), port)) {
                None => true,
                Some(old_to) => {
                    let mapped = old_to
                        .as_ref()
                        .map(|t| old_to_new.get(t).map(|p| (*p).clone()));
                    match mapped {
                        None => to.is_some(),
                        Some(None) => true,
                        Some(Some(t)) => Some(t) != to,
                    }
                }
            },
        };
        if changed {
            plan.rewire.push(Rewire { from, port, to });
        }
    }
    plan
}

/// Applies `new` to a quiesced instance. On failure the instance is left
/// exactly as it was.
pub fn apply(
    stack: &mut StackInstance,
    new: &StackDefinition,
) -> Result<ReconfigPlan, ReconfigError> {
    let diags = validate(new, &stack.graph.env.factories);
    if !diags.is_empty() {
        return Err(AssemblyError::Invalid(diags).into());
    }
    if new.body.is_empty() {
        return Err(AssemblyError::EmptyStack.into());
    }
    let old = stack.active_definition();
    let plan = diff(&old, new);

    let old_ids: HashMap<NodePath, NodeId> = {
        let mut m = HashMap::new();
        for (p, _) in nodes(&old) {
            let id = resolve_top(stack, &p).expect("active node resolves");
            m.insert(p, id);
        }
        m
    };
    let mut ids: HashMap<NodePath, NodeId> = plan
        .keep
        .iter()
        .map(|(o, n)| (n.clone(), old_ids[o]))
        .collect();

    // Creations. Replacements take over the labels and sensor names of the
    // nodes they replace.
    let doomed: Vec<NodeId> = plan.destroy.iter().map(|p| old_ids[p]).collect();
    let released = stack.graph.release(&doomed);
    let mark = stack.graph.slots.len();
    for p in &plan.create {
        let node = new.node(p).expect("new node");
        let bare = ComponentNode {
            shape: Shape::Simple,
            ..node.clone()
        };
        match stack.graph.build_node(&bare, "") {
            Ok(id) => {
                ids.insert(p.clone(), id);
            }
            Err(e) => {
                stack.graph.rollback(mark);
                stack.graph.settle(Some(released));
                return Err(e.into());
            }
        }
    }

    // Option updates on kept components.
    let mut applied: Vec<(NodeId, String, Option<crate::event::ScalarValue>)> = Vec::new();
    for (p, b) in &plan.option_updates {
        let id = ids[p];
        let previous = stack.graph.slots[id].values.get(&b.name).cloned();
        let value = b.value.clone().expect("update carries a value");
        if let Err(error) = stack.set_option_at(id, &b.name, value) {
            for (id, name, prev) in applied.into_iter().rev() {
                if let Some(v) = prev {
                    let _ = stack.set_option_at(id, &name, v);
                }
            }
            stack.graph.rollback(mark);
            stack.graph.settle(Some(released));
            return Err(ReconfigError::Option {
                component: format!("{}/{}", new.name, p),
                error,
            });
        }
        applied.push((id, b.name.clone(), previous));
    }

    stack.graph.settle(None);

    // Rewiring. Nothing below can fail.
    let resets: HashSet<&NodePath> = plan.demux_resets.iter().collect();
    let body = rewire_seq(stack, &new.body, &[], &ids, &resets);
    if let Some(&last) = body.last() {
        stack.graph.set_continuation(last, None);
    }
    stack.graph.body = body;

    // Destructions, latest-built first.
    let mut doomed = doomed;
    doomed.sort_unstable();
    for id in doomed.into_iter().rev() {
        stack.graph.destroy_slot(id);
    }
    Ok(plan)
}

fn resolve_top(stack: &StackInstance, path: &NodePath) -> Option<NodeId> {
    let g = &stack.graph;
    let mut seq: &[NodeId] = &g.body;
    for step in &path.steps {
        let id = *seq.get(step.node)?;
        seq = match (&g.slots[id].fanout, &step.branch) {
            (Fanout::Alternative(b), BranchRef::Alt(i)) => b.get(*i)?,
            _ => return None,
        };
    }
    seq.get(path.index).copied()
}

fn rewire_seq(
    stack: &mut StackInstance,
    seq: &[ComponentNode],
    prefix: &[crate::adl::BranchStep],
    ids: &HashMap<NodePath, NodeId>,
    resets: &HashSet<&NodePath>,
) -> Vec<NodeId> {
    let mut out = Vec::with_capacity(seq.len());
    for (i, node) in seq.iter().enumerate() {
        let path = NodePath {
            steps: prefix.to_vec(),
            index: i,
        };
        let id = ids[&path];
        {
            let slot = &mut stack.graph.slots[id];
            slot.alias = node.alias.clone();
            let mut bindings = node.options.clone();
            for old in &slot.bindings {
                let rebound = bindings
                    .iter()
                    .any(|b| b.name == old.name && b.value.is_some());
                if !rebound && old.value.is_some() {
                    match bindings.iter_mut().find(|b| b.name == old.name) {
                        Some(b) => b.value = slot.values.get(&old.name).cloned(),
                        None => bindings.push(OptionBinding {
                            name: old.name.clone(),
                            alias: old.alias.clone(),
                            value: slot.values.get(&old.name).cloned(),
                        }),
                    }
                }
            }
            slot.bindings = bindings;
        }
        match &node.shape {
            Shape::Simple => {
                drop_demux_branches(stack, id);
                stack.graph.slots[id].fanout = Fanout::Linear;
            }
            Shape::Alternative(branches) => {
                drop_demux_branches(stack, id);
                let mut heads = Vec::with_capacity(branches.len());
                for (b, branch) in branches.iter().enumerate() {
                    let mut steps = prefix.to_vec();
                    steps.push(crate::adl::BranchStep {
                        node: i,
                        branch: BranchRef::Alt(b),
                    });
                    heads.push(rewire_seq(stack, branch, &steps, ids, resets));
                }
                stack.graph.slots[id].fanout = Fanout::Alternative(heads);
            }
            Shape::Demux(template) => {
                let keep_branches = matches!(stack.graph.slots[id].fanout, Fanout::Demux(_))
                    && !resets.contains(&path);
                if !keep_branches {
                    drop_demux_branches(stack, id);
                    let cap = stack.graph.slots[id]
                        .component
                        .as_ref()
                        .and_then(|c| c.max_categories());
                    stack.graph.slots[id].fanout = Fanout::Demux(Box::new(DemuxState {
                        template: template.clone(),
                        routes: HashMap::new(),
                        branches: Vec::new(),
                        cap,
                    }));
                }
            }
        }
        out.push(id);
    }
    stack.graph.chain(&out);
    out
}

fn drop_demux_branches(stack: &mut StackInstance, id: NodeId) {
    let g = &mut stack.graph;
    if let Fanout::Demux(d) = &mut g.slots[id].fanout {
        let doomed: Vec<NodeId> = d.branches.drain(..).flat_map(|(_, b)| b).collect();
        d.routes.clear();
        for b in doomed.into_iter().rev() {
            g.destroy_slot(b);
        }
    }
}
