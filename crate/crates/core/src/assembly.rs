//! Factory registry and instantiation of stack definitions into wired graphs.
//!
//! Wiring rule: nodes of a sequence are chained in definition order. A
//! multi-output node's branches all end on the node that follows the block
//! (the join). When a block closes its own sequence, its branches continue
//! wherever that sequence continues, which for the top-level body is a sink.
//! Demux branches are built lazily, the first time their key is seen.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use thiserror::Error;

use crate::adl::{
    validate, BranchRef, ComponentNode, Diagnostic, NodePath, OptionBinding, Shape, StackDefinition,
};
use crate::component::{
    resolve_option, Component, ComponentContract, Context, OptionError, Port, Production, Setup,
    StackError, StackErrorKind, StackRouter,
};
use crate::event::{is_identifier, Event, ScalarValue};
use crate::sensors::{SensorRef, SensorRegistry};

pub type NodeId = usize;

pub type Constructor =
    Arc<dyn Fn(&mut Setup<'_>) -> Result<Box<dyn Component>, String> + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssemblyError {
    #[error("component type {0:?} already registered")]
    Duplicate(String),
    #[error("bad contract for {type_id:?}: {message}")]
    BadContract { type_id: String, message: String },
    #[error("unresolved component type {0:?}")]
    Unresolved(String),
    #[error("invalid definition: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
    #[error("empty stack not runnable")]
    EmptyStack,
    #[error("{component}: construction failed: {message}")]
    Constructor { component: String, message: String },
    #[error("{component}: {error}")]
    Option {
        component: String,
        error: OptionError,
    },
    #[error("{component}: open failed: {message}")]
    Open { component: String, message: String },
    #[error("no component at {0}")]
    NoSuchComponent(String),
}

struct Factory {
    contract: Arc<ComponentContract>,
    ctor: Constructor,
}

/// Map from type id to contract and constructor. Each type id may be
/// registered once.
#[derive(Default)]
pub struct FactoryRegistry {
    factories: RwLock<HashMap<String, Arc<Factory>>>,
}

impl FactoryRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register<F>(&self, contract: ComponentContract, ctor: F) -> Result<(), AssemblyError>
    where
        F: Fn(&mut Setup<'_>) -> Result<Box<dyn Component>, String> + Send + Sync + 'static,
    {
        let bad = |message: String| AssemblyError::BadContract {
            type_id: contract.type_id.clone(),
            message,
        };
        if !is_identifier(&contract.type_id) {
            return Err(bad("type id is not an identifier".into()));
        }
        let mut seen = HashSet::new();
        for decl in &contract.options {
            if !is_identifier(&decl.name) || !seen.insert(decl.name.as_str()) {
                return Err(bad(format!("bad or repeated option name {:?}", decl.name)));
            }
            if let Some(d) = &decl.default {
                resolve_option(decl, d.clone()).map_err(|e| bad(format!("default: {e}")))?;
            }
        }
        let mut map = self.factories.write().unwrap();
        if map.contains_key(&contract.type_id) {
            return Err(AssemblyError::Duplicate(contract.type_id));
        }
        map.insert(
            contract.type_id.clone(),
            Arc::new(Factory {
                contract: Arc::new(contract),
                ctor: Arc::new(ctor),
            }),
        );
        Ok(())
    }

    pub fn contract(&self, type_id: &str) -> Option<Arc<ComponentContract>> {
        self.factories
            .read()
            .unwrap()
            .get(type_id)
            .map(|f| f.contract.clone())
    }

    fn factory(&self, type_id: &str) -> Option<Arc<Factory>> {
        self.factories.read().unwrap().get(type_id).cloned()
    }

    pub fn type_ids(&self) -> Vec<String> {
        let mut ids: Vec<_> = self.factories.read().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }
}

/// Shared services a stack is built against.
#[derive(Clone)]
pub struct StackEnv {
    pub factories: Arc<FactoryRegistry>,
    pub sensors: Arc<SensorRegistry>,
    pub router: Option<Arc<dyn StackRouter>>,
}

impl StackEnv {
    pub fn new(factories: Arc<FactoryRegistry>, sensors: Arc<SensorRegistry>) -> Self {
        StackEnv {
            factories,
            sensors,
            router: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StackHandle(pub u64);

impl fmt::Display for StackHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StackState {
    Created,
    Running,
    Stopping,
    Stopped,
}

impl fmt::Display for StackState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StackState::Created => "created",
            StackState::Running => "running",
            StackState::Stopping => "stopping",
            StackState::Stopped => "stopped",
        })
    }
}

pub(crate) struct DemuxState {
    pub(crate) template: Vec<ComponentNode>,
    pub(crate) routes: HashMap<String, usize>,
    /// Branches in creation order.
    pub(crate) branches: Vec<(String, Vec<NodeId>)>,
    pub(crate) cap: Option<usize>,
}

pub(crate) enum Fanout {
    Linear,
    Alternative(Vec<Vec<NodeId>>),
    Demux(Box<DemuxState>),
}

pub(crate) struct Slot {
    pub(crate) component: Option<Box<dyn Component>>,
    pub(crate) contract: Arc<ComponentContract>,
    pub(crate) alias: Option<String>,
    pub(crate) bindings: Vec<OptionBinding>,
    pub(crate) values: BTreeMap<String, ScalarValue>,
    pub(crate) label: String,
    pub(crate) sensors: Vec<SensorRef>,
    /// Continuation: linear successor, or the join of a block.
    pub(crate) next: Option<NodeId>,
    pub(crate) fanout: Fanout,
    pub(crate) live: bool,
}

pub struct Graph {
    pub(crate) slots: Vec<Slot>,
    pub(crate) body: Vec<NodeId>,
    pub(crate) env: StackEnv,
    pub(crate) stack_label: String,
    labels: HashSet<String>,
    /// Sensors of nodes due for destruction, by name, during a
    /// reconfiguration; replacements may take their names.
    pub(crate) handover: HashMap<String, SensorRef>,
    /// Cells displaced through `handover`, restored on rollback.
    displaced: Vec<SensorRef>,
}

impl Graph {
    fn new(env: StackEnv, stack_label: String) -> Self {
        Graph {
            slots: Vec::new(),
            body: Vec::new(),
            env,
            stack_label,
            labels: HashSet::new(),
            handover: HashMap::new(),
            displaced: Vec::new(),
        }
    }

    #[inline(always)]
    pub(crate) fn deliver(&mut self, id: NodeId, event: Event) -> Result<(), StackError> {
        let Some(mut comp) = self.slots[id].component.take() else {
            return Err(StackErrorKind::Reentrant(self.slots[id].label.clone()).into());
        };
        let r = comp.process(
            &mut Context {
                graph: self,
                node: id,
            },
            event,
        );
        self.slots[id].component = Some(comp);
        r
    }

    #[inline(always)]
    pub(crate) fn forward(
        &mut self,
        from: NodeId,
        port: Port<'_>,
        event: Event,
    ) -> Result<(), StackError> {
        let slot = &self.slots[from];
        let target = match (&slot.fanout, port) {
            (Fanout::Linear, Port::Next | Port::Alt(0)) => slot.next,
            (Fanout::Alternative(branches), Port::Next) => Some(branches[0][0]),
            (Fanout::Alternative(branches), Port::Alt(i)) => match branches.get(i) {
                Some(b) => Some(b[0]),
                None => {
                    return Err(self.wiring(
                        from,
                        format!("alternative port {i} out of range (0..{})", branches.len()),
                    ))
                }
            },
            (Fanout::Linear, Port::Alt(i)) => {
                return Err(self.wiring(from, format!("alternative port {i} out of range (0..1)")))
            }
            (Fanout::Demux(_), Port::Key(key)) => self.route(from, key)?,
            (Fanout::Demux(_), _) => {
                return Err(self.wiring(from, "demux output needs a category key".into()))
            }
            (_, Port::Key(_)) => {
                return Err(self.wiring(from, "category key on a non-demux output".into()))
            }
        };
        match target {
            Some(t) => self.deliver(t, event),
            None => Ok(()),
        }
    }

    #[cold]
    fn wiring(&self, id: NodeId, message: String) -> StackError {
        StackErrorKind::Wiring {
            component: self.slots[id].label.clone(),
            message,
        }
        .into()
    }

    #[inline(never)]
    fn route(&mut self, from: NodeId, key: &str) -> Result<Option<NodeId>, StackError> {
        let Fanout::Demux(d) = &self.slots[from].fanout else {
            unreachable!("route on non-demux node")
        };
        if let Some(&i) = d.routes.get(key) {
            return Ok(d.branches[i].1.first().copied().or(self.slots[from].next));
        }
        if let Some(cap) = d.cap {
            if d.branches.len() >= cap {
                return Err(StackErrorKind::CategoryLimit {
                    component: self.slots[from].label.clone(),
                    limit: cap,
                }
                .into());
            }
        }
        let template = d.template.clone();
        let suffix = format!("{}{{{}}}", self.branch_suffix(from), key);
        let mark = self.slots.len();
        let ids = match self.build_seq(&template, &suffix) {
            Ok(ids) => ids,
            Err(e) => {
                self.rollback(mark);
                return Err(StackErrorKind::Branch {
                    component: self.slots[from].label.clone(),
                    message: e.to_string(),
                }
                .into());
            }
        };
        let cont = self.slots[from].next;
        if let Some(&last) = ids.last() {
            self.set_continuation(last, cont);
        }
        let head = ids.first().copied().or(cont);
        let Fanout::Demux(d) = &mut self.slots[from].fanout else {
            unreachable!()
        };
        d.routes.insert(key.to_string(), d.branches.len());
        d.branches.push((key.to_string(), ids));
        Ok(head)
    }

    /// Demux keys of the enclosing branches of `id`, so nested branch
    /// instances get distinct labels.
    fn branch_suffix(&self, id: NodeId) -> String {
        let label = &self.slots[id].label;
        match label.find('{') {
            Some(i) => label[i..].split('#').next().unwrap_or("").to_string(),
            None => String::new(),
        }
    }

    pub(crate) fn category_count(&self, id: NodeId) -> usize {
        match &self.slots[id].fanout {
            Fanout::Demux(d) => d.branches.len(),
            _ => 0,
        }
    }

    pub(crate) fn router(&self) -> Option<&Arc<dyn StackRouter>> {
        self.env.router.as_ref()
    }

    pub(crate) fn label(&self, id: NodeId) -> &str {
        &self.slots[id].label
    }

    fn unique_label(&mut self, base: String) -> String {
        let label = if self.labels.contains(&base) {
            format!("{base}#{}", self.slots.len())
        } else {
            base
        };
        self.labels.insert(label.clone());
        label
    }

    /// Constructs one component (and, for alternatives, its branches) without
    /// wiring its continuation.
    pub(crate) fn build_node(
        &mut self,
        node: &ComponentNode,
        suffix: &str,
    ) -> Result<NodeId, AssemblyError> {
        let factory = self
            .env
            .factories
            .factory(&node.type_id)
            .ok_or_else(|| AssemblyError::Unresolved(node.type_id.clone()))?;
        let base = format!(
            "{}{}",
            node.alias.as_deref().unwrap_or(&node.type_id),
            suffix
        );
        let label = self.unique_label(base);
        let mut setup = Setup {
            sensors: &self.env.sensors,
            prefix: format!("{}.{}", self.stack_label, label),
            registered: Vec::new(),
            handover: &self.handover,
            displaced: Vec::new(),
        };
        let built = (factory.ctor)(&mut setup);
        let sensors = std::mem::take(&mut setup.registered);
        let displaced = std::mem::take(&mut setup.displaced);
        let discard = |graph: &mut Graph, label: &str| {
            for s in &sensors {
                graph.env.sensors.unregister(s);
            }
            for s in &displaced {
                graph.env.sensors.restore(s);
            }
            graph.labels.remove(label);
        };
        let mut comp = match built {
            Ok(c) => c,
            Err(message) => {
                discard(self, &label);
                return Err(AssemblyError::Constructor {
                    component: label,
                    message,
                });
            }
        };
        let values = match bind_options(&factory.contract, &node.options, comp.as_mut()) {
            Ok(v) => v,
            Err(error) => {
                discard(self, &label);
                return Err(AssemblyError::Option {
                    component: label,
                    error,
                });
            }
        };
        if let Err(message) = comp.open() {
            discard(self, &label);
            return Err(AssemblyError::Open {
                component: label,
                message,
            });
        }
        self.displaced.extend(displaced);
        let cap = comp.max_categories();
        let id = self.slots.len();
        self.slots.push(Slot {
            component: Some(comp),
            contract: factory.contract.clone(),
            alias: node.alias.clone(),
            bindings: node.options.clone(),
            values,
            label,
            sensors,
            next: None,
            fanout: Fanout::Linear,
            live: true,
        });
        match &node.shape {
            Shape::Simple => {}
            Shape::Alternative(branches) => {
                let mut ids = Vec::with_capacity(branches.len());
                for b in branches {
                    ids.push(self.build_seq(b, suffix)?);
                }
                self.slots[id].fanout = Fanout::Alternative(ids);
            }
            Shape::Demux(template) => {
                self.slots[id].fanout = Fanout::Demux(Box::new(DemuxState {
                    template: template.clone(),
                    routes: HashMap::new(),
                    branches: Vec::new(),
                    cap,
                }));
            }
        }
        Ok(id)
    }

    /// Builds and chains a sequence; the last node's continuation is left
    /// for the caller.
    pub(crate) fn build_seq(
        &mut self,
        seq: &[ComponentNode],
        suffix: &str,
    ) -> Result<Vec<NodeId>, AssemblyError> {
        let mut ids = Vec::with_capacity(seq.len());
        for node in seq {
            ids.push(self.build_node(node, suffix)?);
        }
        self.chain(&ids);
        Ok(ids)
    }

    pub(crate) fn chain(&mut self, ids: &[NodeId]) {
        for w in ids.windows(2) {
            self.set_continuation(w[0], Some(w[1]));
        }
    }

    pub(crate) fn set_continuation(&mut self, id: NodeId, target: Option<NodeId>) {
        self.slots[id].next = target;
        let tails: Vec<NodeId> = match &self.slots[id].fanout {
            Fanout::Linear => Vec::new(),
            Fanout::Alternative(branches) => {
                branches.iter().filter_map(|b| b.last().copied()).collect()
            }
            Fanout::Demux(d) => d
                .branches
                .iter()
                .filter_map(|(_, b)| b.last().copied())
                .collect(),
        };
        for t in tails {
            self.set_continuation(t, target);
        }
    }

    /// Discards every slot created at or after `mark`. Those components
    /// never processed an event, so their sensors are removed outright.
    pub(crate) fn rollback(&mut self, mark: usize) {
        while self.slots.len() > mark {
            let mut slot = self.slots.pop().expect("slot");
            if let Some(mut c) = slot.component.take() {
                c.close();
            }
            for s in &slot.sensors {
                self.env.sensors.unregister(s);
            }
            self.labels.remove(&slot.label);
        }
        for s in self.displaced.drain(..) {
            self.env.sensors.restore(&s);
        }
    }

    /// Frees the labels and sensor names of `ids` ahead of their
    /// destruction so replacements can reuse them. Returns the labels.
    pub(crate) fn release(&mut self, ids: &[NodeId]) -> Vec<String> {
        let mut labels = Vec::new();
        for &id in ids {
            let slot = &self.slots[id];
            for s in &slot.sensors {
                self.handover.insert(s.name().to_string(), s.clone());
            }
            self.labels.remove(&slot.label);
            labels.push(slot.label.clone());
        }
        labels
    }

    /// Ends a handover. On failure the released labels are taken back.
    pub(crate) fn settle(&mut self, reclaim: Option<Vec<String>>) {
        self.handover.clear();
        self.displaced.clear();
        if let Some(labels) = reclaim {
            self.labels.extend(labels);
        }
    }

    /// Destroys one live slot and, recursively, any lazily built demux
    /// branches it owns. Sensors stay readable, flagged stale.
    pub(crate) fn destroy_slot(&mut self, id: NodeId) {
        if !self.slots[id].live {
            return;
        }
        if let Fanout::Demux(d) = &mut self.slots[id].fanout {
            let branch_ids: Vec<NodeId> = d.branches.drain(..).flat_map(|(_, b)| b).collect();
            d.routes.clear();
            for b in branch_ids.into_iter().rev() {
                self.destroy_slot(b);
            }
        }
        let slot = &mut self.slots[id];
        slot.live = false;
        if let Some(mut c) = slot.component.take() {
            c.close();
        }
        for s in &slot.sensors {
            s.mark_stale();
        }
        let label = slot.label.clone();
        // A replacement may already hold the label.
        if !self.slots.iter().any(|s| s.live && s.label == label) {
            self.labels.remove(&label);
        }
    }

    fn resolve(&self, path: &NodePath) -> Option<NodeId> {
        let mut seq: &[NodeId] = &self.body;
        for step in &path.steps {
            let id = *seq.get(step.node)?;
            seq = match (&self.slots[id].fanout, &step.branch) {
                (Fanout::Alternative(branches), BranchRef::Alt(b)) => branches.get(*b)?,
                (Fanout::Demux(d), BranchRef::Key(k)) => &d.branches[*d.routes.get(k)?].1,
                _ => return None,
            };
        }
        seq.get(path.index).copied()
    }

    pub(crate) fn node_def(&self, id: NodeId) -> ComponentNode {
        let slot = &self.slots[id];
        let shape = match &slot.fanout {
            Fanout::Linear => Shape::Simple,
            Fanout::Alternative(branches) => Shape::Alternative(
                branches
                    .iter()
                    .map(|b| b.iter().map(|&i| self.node_def(i)).collect())
                    .collect(),
            ),
            Fanout::Demux(d) => Shape::Demux(d.template.clone()),
        };
        ComponentNode {
            type_id: slot.contract.type_id.clone(),
            alias: slot.alias.clone(),
            options: slot.bindings.clone(),
            shape,
        }
    }
}

/// Resolves defaults and bindings, pushing every final value into the
/// component. Returns the effective option values.
fn bind_options(
    contract: &ComponentContract,
    bindings: &[OptionBinding],
    comp: &mut dyn Component,
) -> Result<BTreeMap<String, ScalarValue>, OptionError> {
    let mut values = BTreeMap::new();
    for decl in &contract.options {
        if let Some(d) = &decl.default {
            values.insert(decl.name.clone(), resolve_option(decl, d.clone())?);
        }
    }
    for b in bindings {
        let decl = contract
            .option(&b.name)
            .ok_or_else(|| OptionError::Unknown(b.name.clone()))?;
        if let Some(v) = &b.value {
            values.insert(decl.name.clone(), resolve_option(decl, v.clone())?);
        }
    }
    for (name, v) in &values {
        comp.set_option(name, v)
            .map_err(|reason| OptionError::Rejected {
                name: name.clone(),
                reason,
            })?;
    }
    Ok(values)
}

static NEXT_HANDLE: AtomicU64 = AtomicU64::new(1 << 32);

/// A live, wired stack. It is driven from a single execution context: the
/// kernel gives each running instance its own thread, tests may drive one
/// directly.
pub struct StackInstance {
    pub(crate) handle: StackHandle,
    pub(crate) name: String,
    pub(crate) alias: Option<String>,
    pub(crate) state: StackState,
    pub(crate) graph: Graph,
}

impl fmt::Debug for StackInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StackInstance")
            .field("handle", &self.handle)
            .field("name", &self.name)
            .field("alias", &self.alias)
            .field("state", &self.state)
            .finish()
    }
}

/// Builds a stack with a fresh handle; sensors are named after the stack's
/// alias, or its name when it has none.
pub fn instantiate(def: &StackDefinition, env: &StackEnv) -> Result<StackInstance, AssemblyError> {
    let handle = StackHandle(NEXT_HANDLE.fetch_add(1, Ordering::Relaxed));
    let label = def.alias.clone().unwrap_or_else(|| def.name.clone());
    instantiate_as(def, env, handle, &label)
}

pub fn instantiate_as(
    def: &StackDefinition,
    env: &StackEnv,
    handle: StackHandle,
    label: &str,
) -> Result<StackInstance, AssemblyError> {
    let diags = validate(def, &env.factories);
    if !diags.is_empty() {
        return Err(AssemblyError::Invalid(diags));
    }
    if def.body.is_empty() {
        return Err(AssemblyError::EmptyStack);
    }
    let mut graph = Graph::new(env.clone(), label.to_string());
    match graph.build_seq(&def.body, "") {
        Ok(ids) => {
            if let Some(&last) = ids.last() {
                graph.set_continuation(last, None);
            }
            graph.body = ids;
        }
        Err(e) => {
            graph.rollback(0);
            return Err(e);
        }
    }
    Ok(StackInstance {
        handle,
        name: def.name.clone(),
        alias: def.alias.clone(),
        state: StackState::Created,
        graph,
    })
}

impl StackInstance {
    pub fn handle(&self) -> StackHandle {
        self.handle
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn alias(&self) -> Option<&str> {
        self.alias.as_deref()
    }

    pub fn state(&self) -> StackState {
        self.state
    }

    pub fn label(&self) -> &str {
        &self.graph.stack_label
    }

    pub fn env(&self) -> &StackEnv {
        &self.graph.env
    }

    /// Delivers an event to the initial component's input port and runs the
    /// cascade to completion.
    #[inline]
    pub fn inject(&mut self, event: Event) -> Result<(), StackError> {
        let initial = self.graph.body[0];
        self.graph.deliver(initial, event)
    }

    /// Asks the initial component for one production.
    #[inline]
    pub fn produce(&mut self) -> Result<Production, StackError> {
        let initial = self.graph.body[0];
        let Some(mut comp) = self.graph.slots[initial].component.take() else {
            return Err(StackErrorKind::Reentrant(self.graph.slots[initial].label.clone()).into());
        };
        let r = comp.produce(&mut Context {
            graph: &mut self.graph,
            node: initial,
        });
        self.graph.slots[initial].component = Some(comp);
        r
    }

    pub fn stop_producing(&mut self) {
        let initial = self.graph.body[0];
        if let Some(c) = self.graph.slots[initial].component.as_mut() {
            c.stop();
        }
    }

    /// The active structure, with options as currently bound.
    pub fn active_definition(&self) -> StackDefinition {
        StackDefinition {
            name: self.name.clone(),
            alias: self.alias.clone(),
            body: self
                .graph
                .body
                .iter()
                .map(|&id| self.graph.node_def(id))
                .collect(),
        }
    }

    fn slot_at(&self, path: &NodePath) -> Result<NodeId, AssemblyError> {
        self.graph
            .resolve(path)
            .ok_or_else(|| AssemblyError::NoSuchComponent(format!("{}/{}", self.name, path)))
    }

    fn option_name(&self, id: NodeId, name: &str) -> Option<String> {
        let slot = &self.graph.slots[id];
        if slot.contract.option(name).is_some() {
            return Some(name.to_string());
        }
        slot.bindings
            .iter()
            .find(|b| b.alias.as_deref() == Some(name))
            .map(|b| b.name.clone())
    }

    /// Current value of an option, addressed by name or option alias.
    pub fn option(&self, path: &NodePath, name: &str) -> Result<ScalarValue, AssemblyError> {
        let id = self.slot_at(path)?;
        let component = format!("{}/{}", self.name, path);
        let real = self
            .option_name(id, name)
            .ok_or_else(|| AssemblyError::Option {
                component: component.clone(),
                error: OptionError::Unknown(name.to_string()),
            })?;
        self.graph.slots[id]
            .values
            .get(&real)
            .cloned()
            .ok_or(AssemblyError::Option {
                component,
                error: OptionError::Unset(real),
            })
    }

    /// Assigns an option on a live component; the new value is seen by the
    /// component's next event. Returns the value after the option hook.
    pub fn set_option(
        &mut self,
        path: &NodePath,
        name: &str,
        value: ScalarValue,
    ) -> Result<ScalarValue, AssemblyError> {
        let id = self.slot_at(path)?;
        let component = format!("{}/{}", self.name, path);
        self.set_option_at(id, name, value)
            .map_err(|error| AssemblyError::Option { component, error })
    }

    pub(crate) fn set_option_at(
        &mut self,
        id: NodeId,
        name: &str,
        value: ScalarValue,
    ) -> Result<ScalarValue, OptionError> {
        let real = self
            .option_name(id, name)
            .ok_or_else(|| OptionError::Unknown(name.to_string()))?;
        let slot = &mut self.graph.slots[id];
        let decl = slot.contract.option(&real).expect("declared option");
        let v = resolve_option(decl, value)?;
        let comp = slot
            .component
            .as_mut()
            .expect("set_option outside a cascade");
        comp.set_option(&real, &v)
            .map_err(|reason| OptionError::Rejected {
                name: real.clone(),
                reason,
            })?;
        let cap = comp.max_categories();
        if let Fanout::Demux(d) = &mut slot.fanout {
            d.cap = cap;
        }
        slot.values.insert(real.clone(), v.clone());
        match slot.bindings.iter_mut().find(|b| b.name == real) {
            Some(b) => b.value = Some(v.clone()),
            None => slot.bindings.push(OptionBinding {
                name: real,
                alias: None,
                value: Some(v.clone()),
            }),
        }
        Ok(v)
    }

    /// Keys of a demux node's branches, in creation order.
    pub fn demux_keys(&self, path: &NodePath) -> Result<Vec<String>, AssemblyError> {
        let id = self.slot_at(path)?;
        match &self.graph.slots[id].fanout {
            Fanout::Demux(d) => Ok(d.branches.iter().map(|(k, _)| k.clone()).collect()),
            _ => Err(AssemblyError::NoSuchComponent(format!(
                "{}/{} (not a demux)",
                self.name, path
            ))),
        }
    }

    /// Sensor-name label of the component at `path`.
    pub fn component_label(&self, path: &NodePath) -> Result<String, AssemblyError> {
        let id = self.slot_at(path)?;
        Ok(self.graph.slots[id].label.clone())
    }

    pub fn live_components(&self) -> usize {
        self.graph.slots.iter().filter(|s| s.live).count()
    }

    /// `(from, to)` labels of every wired continuation edge, in node order.
    /// Block nodes report their branch heads and their join.
    pub fn wiring(&self) -> Vec<(String, String)> {
        let mut edges = Vec::new();
        let name = |id: Option<NodeId>| match id {
            Some(i) => self.graph.slots[i].label.clone(),
            None => "-".to_string(),
        };
        for slot in self.graph.slots.iter().filter(|s| s.live) {
            match &slot.fanout {
                Fanout::Linear => edges.push((slot.label.clone(), name(slot.next))),
                Fanout::Alternative(branches) => {
                    for b in branches {
                        edges.push((slot.label.clone(), name(b.first().copied())));
                    }
                }
                Fanout::Demux(d) => {
                    for (_, b) in &d.branches {
                        edges.push((slot.label.clone(), name(b.first().copied())));
                    }
                }
            }
        }
        edges
    }

    /// Destroys every component in reverse construction order.
    pub fn destroy(&mut self) {
        for id in (0..self.graph.slots.len()).rev() {
            self.graph.destroy_slot(id);
        }
        self.state = StackState::Stopped;
    }

    pub(crate) fn set_state(&mut self, state: StackState) {
        self.state = state;
    }
}

impl Drop for StackInstance {
    fn drop(&mut self) {
        if self.graph.slots.iter().any(|s| s.live) {
            self.destroy();
        }
    }
}
