//! A stackable, message-passing component runtime.
//!
//! Stacks of components are described in a small description language
//! ([`adl`]), assembled against a registry of component factories
//! ([`assembly`]), and run under a [`kernel`] that gives each stack its own
//! thread. Running stacks can be inspected and changed at runtime through
//! options, sensors, in-place reconfiguration ([`reconfig`]) and a text
//! control protocol ([`control`]).

pub mod adl;
pub mod assembly;
pub mod bench;
pub mod component;
pub mod control;
pub mod event;
pub mod kernel;
pub mod reconfig;
pub mod sensors;
pub mod stdlib;

pub use adl::{parse_config, parse_stack, render_stack, validate, NodePath, StackDefinition};
pub use assembly::{
    instantiate, FactoryRegistry, StackEnv, StackHandle, StackInstance, StackState,
};
pub use component::{
    Component, ComponentContract, Context, OptionDecl, OutputKind, Port, Production, SendMode,
    Setup, StackError, StackErrorKind,
};
pub use event::{Event, EventType, ScalarKind, ScalarValue};
pub use kernel::{Kernel, KernelError, MailboxConfig, OverflowPolicy, Scope, StartOptions};
pub use sensors::{SensorKind, SensorMode, SensorRef, SensorRegistry, SensorValue};
