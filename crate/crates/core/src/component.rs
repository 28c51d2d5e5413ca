//! The component contract: options, output shapes, and the forwarding
//! interface components use to pass events downstream.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::assembly::{Graph, NodeId};
use crate::event::{Event, ScalarKind, ScalarValue};
use crate::sensors::{
    SensorError, SensorKind, SensorMode, SensorRef, SensorRegistry, SensorWriter,
};

/// Output arity declared by a component author.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputKind {
    /// Exactly one successor.
    Linear,
    /// Statically numbered ports `0..n`, one branch each. Used without
    /// branches it behaves as `Linear`.
    Alternative,
    /// One branch template, instantiated per category key.
    Demux,
}

pub type OptionHook = Arc<dyn Fn(ScalarValue) -> Result<ScalarValue, String> + Send + Sync>;

#[derive(Clone)]
pub struct OptionDecl {
    pub name: String,
    pub kind: ScalarKind,
    pub default: Option<ScalarValue>,
    pub on_set: Option<OptionHook>,
}

impl OptionDecl {
    pub fn new(name: impl Into<String>, kind: ScalarKind) -> Self {
        OptionDecl {
            name: name.into(),
            kind,
            default: None,
            on_set: None,
        }
    }

    pub fn default_value(mut self, v: impl Into<ScalarValue>) -> Self {
        self.default = Some(v.into());
        self
    }

    /// Conversion/validation applied to every assigned value. The hook may
    /// accept values of another kind as long as it returns one of `kind`.
    pub fn on_set(
        mut self,
        hook: impl Fn(ScalarValue) -> Result<ScalarValue, String> + Send + Sync + 'static,
    ) -> Self {
        self.on_set = Some(Arc::new(hook));
        self
    }
}

impl fmt::Debug for OptionDecl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OptionDecl")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .field("default", &self.default)
            .field("on_set", &self.on_set.is_some())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptionError {
    #[error("unknown option {0:?}")]
    Unknown(String),
    #[error("option {name:?} expects {expected}, got {found}")]
    KindMismatch {
        name: String,
        expected: ScalarKind,
        found: ScalarKind,
    },
    #[error("option {name:?} rejected value: {reason}")]
    Rejected { name: String, reason: String },
    #[error("option {0:?} has no value")]
    Unset(String),
}

/// Applies a declaration's hook and kind check to a candidate value.
pub fn resolve_option(decl: &OptionDecl, value: ScalarValue) -> Result<ScalarValue, OptionError> {
    let value = match &decl.on_set {
        Some(hook) => hook(value).map_err(|reason| OptionError::Rejected {
            name: decl.name.clone(),
            reason,
        })?,
        None => value,
    };
    if value.kind() != decl.kind {
        return Err(OptionError::KindMismatch {
            name: decl.name.clone(),
            expected: decl.kind,
            found: value.kind(),
        });
    }
    Ok(value)
}

#[derive(Debug, Clone)]
pub struct ComponentContract {
    pub type_id: String,
    pub options: Vec<OptionDecl>,
    pub output: OutputKind,
    pub initial: bool,
}

impl ComponentContract {
    pub fn new(type_id: impl Into<String>) -> Self {
        ComponentContract {
            type_id: type_id.into(),
            options: Vec::new(),
            output: OutputKind::Linear,
            initial: false,
        }
    }

    pub fn option(&self, name: &str) -> Option<&OptionDecl> {
        self.options.iter().find(|d| d.name == name)
    }

    pub fn with_option(mut self, decl: OptionDecl) -> Self {
        self.options.push(decl);
        self
    }

    pub fn output(mut self, kind: OutputKind) -> Self {
        self.output = kind;
        self
    }

    /// Marks the component as able to drive a stack through `produce`.
    pub fn initial(mut self) -> Self {
        self.initial = true;
        self
    }
}

/// Output port selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Port<'k> {
    Next,
    Alt(usize),
    Key(&'k str),
}

/// What an initial component did when asked to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Production {
    /// One event was produced and its cascade has completed.
    Emitted,
    /// Nothing to do right now; ask again after at most this long.
    Idle(Duration),
    /// The source is finished.
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StackErrorKind {
    #[error("wiring error at {component}: {message}")]
    Wiring { component: String, message: String },
    #[error("re-entrant delivery into {0}")]
    Reentrant(String),
    #[error("category limit of {limit} reached at {component}")]
    CategoryLimit { component: String, limit: usize },
    #[error("branch creation failed at {component}: {message}")]
    Branch { component: String, message: String },
    #[error("{component}: {message}")]
    Component { component: String, message: String },
    #[error("inter-stack send failed: {0}")]
    Send(String),
}

/// Error raised while an event cascade runs. Boxed so that the
/// `Result<(), StackError>` returned at every hop fits in a register.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error(transparent)]
pub struct StackError(Box<StackErrorKind>);

impl StackError {
    pub fn kind(&self) -> &StackErrorKind {
        &self.0
    }

    pub fn into_kind(self) -> StackErrorKind {
        *self.0
    }

    pub fn component(component: impl Into<String>, message: impl Into<String>) -> Self {
        StackErrorKind::Component {
            component: component.into(),
            message: message.into(),
        }
        .into()
    }
}

impl From<StackErrorKind> for StackError {
    #[cold]
    fn from(k: StackErrorKind) -> Self {
        StackError(Box::new(k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SendMode {
    Sync,
    Async,
}

/// Named delivery into another stack's initial component.
pub trait StackRouter: Send + Sync {
    fn send(&self, target: &str, event: Event, mode: SendMode) -> Result<(), String>;
}

/// A processing unit. Each instance lives on its stack's execution context
/// and is only ever called from there.
pub trait Component: Send {
    /// Handles one event arriving on the input port.
    fn process(&mut self, ctx: &mut Context<'_>, event: Event) -> Result<(), StackError>;

    /// Called in a loop when this component is a stack's initial component.
    fn produce(&mut self, _ctx: &mut Context<'_>) -> Result<Production, StackError> {
        Ok(Production::Exhausted)
    }

    /// Receives an option value that already passed the declaration's hook
    /// and kind check.
    fn set_option(&mut self, _name: &str, _value: &ScalarValue) -> Result<(), String> {
        Ok(())
    }

    /// Called once options are bound, before the first event.
    fn open(&mut self) -> Result<(), String> {
        Ok(())
    }

    /// Asks an initial component to stop producing.
    fn stop(&mut self) {}

    /// Called right before the instance is dropped.
    fn close(&mut self) {}

    /// Upper bound on demux categories; `None` is unbounded.
    fn max_categories(&self) -> Option<usize> {
        None
    }
}

/// Handle passed to a component while it processes or produces an event.
pub struct Context<'g> {
    pub(crate) graph: &'g mut Graph,
    pub(crate) node: NodeId,
}

impl Context<'_> {
    /// Forwards on the linear port (port 0 of an alternative). Returns once
    /// the whole downstream cascade has completed. Forwarding past the end of
    /// a stack or branch is a silent sink.
    #[inline(always)]
    pub fn forward(&mut self, event: Event) -> Result<(), StackError> {
        self.graph.forward(self.node, Port::Next, event)
    }

    #[inline(always)]
    pub fn forward_to(&mut self, port: Port<'_>, event: Event) -> Result<(), StackError> {
        self.graph.forward(self.node, port, event)
    }

    /// Number of live demux categories on this component.
    pub fn categories(&self) -> usize {
        self.graph.category_count(self.node)
    }

    pub fn send_to_stack(
        &self,
        target: &str,
        event: Event,
        mode: SendMode,
    ) -> Result<(), StackError> {
        match self.graph.router() {
            Some(r) => r
                .send(target, event, mode)
                .map_err(|e| StackErrorKind::Send(e).into()),
            None => Err(
                StackErrorKind::Send(format!("no kernel attached, cannot reach {target}")).into(),
            ),
        }
    }

    pub fn label(&self) -> &str {
        self.graph.label(self.node)
    }
}

/// Construction-time handle: sensor registration and naming.
pub struct Setup<'a> {
    pub(crate) sensors: &'a SensorRegistry,
    pub(crate) prefix: String,
    pub(crate) registered: Vec<SensorRef>,
    /// Live sensors this instance may take the names of.
    pub(crate) handover: &'a HashMap<String, SensorRef>,
    pub(crate) displaced: Vec<SensorRef>,
}

impl<'a> Setup<'a> {
    /// Registers `prefix.local` where prefix is `stack.component`.
    pub fn sensor(
        &mut self,
        local: &str,
        kind: SensorKind,
        mode: SensorMode,
    ) -> Result<SensorWriter, SensorError> {
        let name = format!("{}.{local}", self.prefix);
        if self.registered.iter().any(|s| s.name() == name) {
            return Err(SensorError::Duplicate(name));
        }
        let w = match self.handover.get(&name) {
            Some(previous) => {
                let w = self
                    .sensors
                    .register_replacing(&name, kind, mode, previous)?;
                self.displaced.push(previous.clone());
                w
            }
            None => self.sensors.register(&name, kind, mode)?,
        };
        self.registered.push(w.reader());
        Ok(w)
    }

    pub fn counter(&mut self, local: &str) -> Result<SensorWriter, SensorError> {
        self.sensor(local, SensorKind::Int, SensorMode::Passive)
    }

    /// `stack.component` prefix of this instance's sensors.
    pub fn prefix(&self) -> &str {
        &self.prefix
    }
}
