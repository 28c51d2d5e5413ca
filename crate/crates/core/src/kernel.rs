//! The micro-kernel: stored definitions, running stacks, handles and
//! aliases, inter-stack delivery.
//!
//! Every running stack owns one thread. That thread alternates between
//! kernel commands, its mailbox, and its initial component's `produce`, so
//! events of one stack are never processed concurrently and control
//! operations (option changes, reconfiguration) always land between two
//! cascades. Control operations are serialized on a kernel-wide lock and
//! never hold the registry lock while waiting on a stack thread.

use std::cell::Cell;
use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, AtomicU8, Ordering};
use std::sync::{Arc, Mutex, RwLock, Weak};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, select, unbounded, Receiver, Sender, TrySendError};
use thiserror::Error;

use crate::adl::{
    parse_config, render_stack, validate, Diagnostic, NodePath, ParseError, StackDefinition,
};
use crate::assembly::{
    instantiate_as, AssemblyError, FactoryRegistry, StackEnv, StackHandle, StackInstance,
    StackState,
};
use crate::component::{
    resolve_option, OptionError, Production, SendMode, StackError, StackErrorKind, StackRouter,
};
use crate::event::{is_identifier, Event, ScalarValue};
use crate::reconfig::{self, ReconfigError, ReconfigPlan};
use crate::sensors::{SensorRef, SensorRegistry, SensorWriter};

pub const DEFAULT_MAILBOX_CAPACITY: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverflowPolicy {
    Block,
    DropNewest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MailboxConfig {
    pub capacity: usize,
    pub policy: OverflowPolicy,
}

impl Default for MailboxConfig {
    fn default() -> Self {
        MailboxConfig {
            capacity: DEFAULT_MAILBOX_CAPACITY,
            policy: OverflowPolicy::Block,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct StartOptions {
    pub alias: Option<String>,
    pub mailbox: MailboxConfig,
}

impl StartOptions {
    pub fn alias(alias: impl Into<String>) -> Self {
        StartOptions {
            alias: Some(alias.into()),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub enum StartSource {
    Stored(String),
    Definition(StackDefinition),
}

impl From<&str> for StartSource {
    fn from(s: &str) -> Self {
        StartSource::Stored(s.to_string())
    }
}

impl From<StackDefinition> for StartSource {
    fn from(d: StackDefinition) -> Self {
        StartSource::Definition(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Stored,
    Active,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("parse error: {0}")]
    Parse(#[from] ParseError),
    #[error("invalid definition: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Reconfig(#[from] ReconfigError),
    #[error("unknown stack {0:?}")]
    UnknownStack(String),
    #[error("no running stack with handle {0}")]
    UnknownHandle(StackHandle),
    #[error("stack {0:?} is ambiguous: several running instances")]
    Ambiguous(String),
    #[error("alias {0:?} already in use")]
    AliasInUse(String),
    #[error("malformed alias {0:?}")]
    BadAlias(String),
    #[error("stack {0} is not running")]
    NotRunning(String),
    #[error("synchronous send from stack {0} to itself would deadlock")]
    Deadlock(StackHandle),
    #[error("no component at {0}")]
    NoSuchComponent(String),
    #[error("{component}: {error}")]
    Option {
        component: String,
        error: OptionError,
    },
    #[error("{0}")]
    Delivery(StackError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StackInfo {
    pub handle: StackHandle,
    pub name: String,
    pub alias: Option<String>,
    pub state: StackState,
}

/// Comparable view of everything the kernel holds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistrySnapshot {
    /// Stored definitions, canonically rendered.
    pub stored: BTreeMap<String, String>,
    /// Stacks with their rendered active definition when running.
    pub stacks: Vec<(StackInfo, Option<String>)>,
}

type Job = Box<dyn FnOnce(&mut StackInstance) + Send>;

enum Command {
    Run(Job),
    Pause,
    Resume,
    Stop,
}

#[derive(Clone)]
struct Link {
    commands: Sender<Command>,
    mailbox: Sender<Event>,
    policy: OverflowPolicy,
    dropped: Arc<SensorWriter>,
}

struct Entry {
    name: String,
    alias: Option<String>,
    label: String,
    status: Arc<AtomicU8>,
    link: Option<Link>,
    thread: Option<JoinHandle<()>>,
}

impl Entry {
    fn state(&self) -> StackState {
        decode_state(self.status.load(Ordering::Acquire))
    }

    fn running(&self) -> bool {
        self.link.is_some() && self.state() == StackState::Running
    }
}

fn encode_state(s: StackState) -> u8 {
    match s {
        StackState::Created => 0,
        StackState::Running => 1,
        StackState::Stopping => 2,
        StackState::Stopped => 3,
    }
}

fn decode_state(v: u8) -> StackState {
    match v {
        0 => StackState::Created,
        1 => StackState::Running,
        2 => StackState::Stopping,
        _ => StackState::Stopped,
    }
}

#[derive(Default)]
struct Registry {
    stacks: BTreeMap<StackHandle, Entry>,
    aliases: HashMap<String, StackHandle>,
    stored: BTreeMap<String, StackDefinition>,
}

struct Shared {
    factories: Arc<FactoryRegistry>,
    sensors: Arc<SensorRegistry>,
    control: Mutex<()>,
    registry: RwLock<Registry>,
    next_handle: AtomicU64,
}

thread_local! {
    static CURRENT_STACK: Cell<Option<(usize, StackHandle)>> = const { Cell::new(None) };
}

#[derive(Clone)]
pub struct Kernel {
    shared: Arc<Shared>,
}

struct KernelRouter(Weak<Shared>);

impl StackRouter for KernelRouter {
    fn send(&self, target: &str, event: Event, mode: SendMode) -> Result<(), String> {
        let shared = self.0.upgrade().ok_or("kernel is gone")?;
        Kernel { shared }
            .send_to_stack(target, event, mode)
            .map_err(|e| e.to_string())
    }
}

impl Kernel {
    pub fn new(factories: Arc<FactoryRegistry>) -> Kernel {
        Kernel {
            shared: Arc::new(Shared {
                factories,
                sensors: SensorRegistry::new(),
                control: Mutex::new(()),
                registry: RwLock::new(Registry::default()),
                next_handle: AtomicU64::new(1),
            }),
        }
    }

    /// A kernel with the standard component library registered.
    pub fn with_stdlib() -> Kernel {
        Kernel::new(Arc::new(crate::stdlib::registry()))
    }

    pub fn factories(&self) -> &Arc<FactoryRegistry> {
        &self.shared.factories
    }

    pub fn sensors(&self) -> &Arc<SensorRegistry> {
        &self.shared.sensors
    }

    fn id(&self) -> usize {
        Arc::as_ptr(&self.shared) as usize
    }

    fn lock_control(&self) -> std::sync::MutexGuard<'_, ()> {
        self.shared
            .control
            .lock()
            .unwrap_or_else(|e| e.into_inner())
    }

    // -- stored definitions -------------------------------------------------

    fn check(&self, def: &StackDefinition) -> Result<(), KernelError> {
        let diags = validate(def, &self.shared.factories);
        if diags.is_empty() {
            Ok(())
        } else {
            Err(KernelError::Invalid(diags))
        }
    }

    /// Stores (or replaces) a definition. Running instances are untouched.
    pub fn store_definition(&self, def: StackDefinition) -> Result<(), KernelError> {
        let _c = self.lock_control();
        self.check(&def)?;
        self.shared
            .registry
            .write()
            .unwrap()
            .stored
            .insert(def.name.clone(), def);
        Ok(())
    }

    /// Parses and validates every definition in `text`, then stores them all;
    /// on any error nothing is stored. Returns the stored names.
    pub fn load_config(&self, text: &str) -> Result<Vec<String>, KernelError> {
        let _c = self.lock_control();
        let defs = parse_config(text)?;
        for d in &defs {
            self.check(d)?;
        }
        let mut reg = self.shared.registry.write().unwrap();
        Ok(defs
            .into_iter()
            .map(|d| {
                let name = d.name.clone();
                reg.stored.insert(name.clone(), d);
                name
            })
            .collect())
    }

    pub fn stored(&self, name: &str) -> Option<StackDefinition> {
        self.shared
            .registry
            .read()
            .unwrap()
            .stored
            .get(name)
            .cloned()
    }

    pub fn stored_names(&self) -> Vec<String> {
        self.shared
            .registry
            .read()
            .unwrap()
            .stored
            .keys()
            .cloned()
            .collect()
    }

    // -- lifecycle ----------------------------------------------------------

    pub fn start_stack(
        &self,
        source: impl Into<StartSource>,
        opts: StartOptions,
    ) -> Result<StackHandle, KernelError> {
        let _c = self.lock_control();
        let mut def = match source.into() {
            StartSource::Stored(name) => {
                self.stored(&name).ok_or(KernelError::UnknownStack(name))?
            }
            StartSource::Definition(d) => d,
        };
        if opts.alias.is_some() {
            def.alias = opts.alias.clone();
        }
        self.check(&def)?;
        let handle = StackHandle(self.shared.next_handle.fetch_add(1, Ordering::Relaxed));
        let label = {
            let reg = self.shared.registry.read().unwrap();
            if let Some(a) = &def.alias {
                if !is_identifier(a) {
                    return Err(KernelError::BadAlias(a.clone()));
                }
                if reg.aliases.contains_key(a) {
                    return Err(KernelError::AliasInUse(a.clone()));
                }
            }
            let base = def.alias.clone().unwrap_or_else(|| def.name.clone());
            if reg
                .stacks
                .values()
                .any(|e| e.link.is_some() && e.label == base)
            {
                format!("{base}_{handle}")
            } else {
                base
            }
        };

        let mut env = StackEnv::new(self.shared.factories.clone(), self.shared.sensors.clone());
        env.router = Some(Arc::new(KernelRouter(Arc::downgrade(&self.shared))));
        let mut inst = instantiate_as(&def, &env, handle, &label)?;

        let dropped = Arc::new(
            self.shared
                .sensors
                .register(
                    &format!("{label}.mailbox.dropped"),
                    crate::sensors::SensorKind::Int,
                    crate::sensors::SensorMode::Passive,
                )
                .map_err(|e| KernelError::Delivery(StackErrorKind::Send(e.to_string()).into()))?,
        );
        let errors = self
            .shared
            .sensors
            .register(
                &format!("{label}.stack.errors"),
                crate::sensors::SensorKind::Int,
                crate::sensors::SensorMode::Passive,
            )
            .map_err(|e| KernelError::Delivery(StackErrorKind::Send(e.to_string()).into()))?;

        let (cmd_tx, cmd_rx) = unbounded();
        let (mb_tx, mb_rx) = bounded(opts.mailbox.capacity.max(1));
        let status = Arc::new(AtomicU8::new(encode_state(StackState::Running)));
        inst.set_state(StackState::Running);
        let kernel_id = self.id();
        let thread_status = status.clone();
        let retire = [dropped.reader(), errors.reader()];
        let thread = std::thread::Builder::new()
            .name(format!("stack-{label}"))
            .spawn(move || {
                CURRENT_STACK.with(|c| c.set(Some((kernel_id, handle))));
                run_stack(inst, cmd_rx, mb_rx, &thread_status, &errors);
                for s in &retire {
                    s.mark_stale();
                }
            })
            .expect("spawn stack thread");

        let mut reg = self.shared.registry.write().unwrap();
        if let Some(a) = &def.alias {
            reg.aliases.insert(a.clone(), handle);
        }
        reg.stacks.insert(
            handle,
            Entry {
                name: def.name.clone(),
                alias: def.alias.clone(),
                label,
                status,
                link: Some(Link {
                    commands: cmd_tx,
                    mailbox: mb_tx,
                    policy: opts.mailbox.policy,
                    dropped,
                }),
                thread: Some(thread),
            },
        );
        Ok(handle)
    }

    /// Stops a running stack: the initial component is told to cease, the
    /// current cascade and the mailbox are drained, then components are
    /// destroyed in reverse order. Returns once that is complete.
    pub fn stop_stack(&self, handle: StackHandle) -> Result<(), KernelError> {
        let _c = self.lock_control();
        self.stop_locked(handle)
    }

    fn stop_locked(&self, handle: StackHandle) -> Result<(), KernelError> {
        let (link, thread) = {
            let mut reg = self.shared.registry.write().unwrap();
            let entry = reg
                .stacks
                .get_mut(&handle)
                .filter(|e| e.link.is_some())
                .ok_or(KernelError::UnknownHandle(handle))?;
            let link = entry.link.take().expect("link");
            let thread = entry.thread.take();
            if let Some(a) = entry.alias.clone() {
                reg.aliases.remove(&a);
            }
            (link, thread)
        };
        let _ = link.commands.send(Command::Stop);
        drop(link);
        if let Some(t) = thread {
            if t.thread().id() == std::thread::current().id() {
                return Err(KernelError::Deadlock(handle));
            }
            let _ = t.join();
        }
        Ok(())
    }

    pub fn list_stacks(&self) -> Vec<StackInfo> {
        self.shared
            .registry
            .read()
            .unwrap()
            .stacks
            .iter()
            .map(|(h, e)| StackInfo {
                handle: *h,
                name: e.name.clone(),
                alias: e.alias.clone(),
                state: e.state(),
            })
            .collect()
    }

    /// Resolves a handle number, an alias, or the name of exactly one running
    /// instance.
    pub fn resolve(&self, selector: &str) -> Result<StackHandle, KernelError> {
        let reg = self.shared.registry.read().unwrap();
        if let Ok(n) = selector.parse::<u64>() {
            let h = StackHandle(n);
            return if reg.stacks.contains_key(&h) {
                Ok(h)
            } else {
                Err(KernelError::UnknownHandle(h))
            };
        }
        if let Some(h) = reg.aliases.get(selector) {
            return Ok(*h);
        }
        let mut running = reg
            .stacks
            .iter()
            .filter(|(_, e)| e.name == selector && e.link.is_some());
        match (running.next(), running.next()) {
            (Some((h, _)), None) => Ok(*h),
            (Some(_), Some(_)) => Err(KernelError::Ambiguous(selector.to_string())),
            (None, _) => {
                if reg.stacks.values().any(|e| e.name == selector) {
                    Err(KernelError::NotRunning(selector.to_string()))
                } else {
                    Err(KernelError::UnknownStack(selector.to_string()))
                }
            }
        }
    }

    fn link(&self, handle: StackHandle) -> Result<Link, KernelError> {
        let reg = self.shared.registry.read().unwrap();
        match reg.stacks.get(&handle) {
            Some(e) if e.running() => Ok(e.link.clone().expect("link")),
            Some(_) => Err(KernelError::NotRunning(handle.to_string())),
            None => Err(KernelError::UnknownHandle(handle)),
        }
    }

    fn on_stack_thread(&self, handle: StackHandle) -> bool {
        CURRENT_STACK.with(|c| c.get()) == Some((self.id(), handle))
    }

    /// Runs `f` on the stack's own thread, between cascades, and waits for
    /// its result.
    pub fn call<R, F>(&self, handle: StackHandle, f: F) -> Result<R, KernelError>
    where
        R: Send + 'static,
        F: FnOnce(&mut StackInstance) -> R + Send + 'static,
    {
        if self.on_stack_thread(handle) {
            return Err(KernelError::Deadlock(handle));
        }
        let link = self.link(handle)?;
        let (tx, rx) = bounded(1);
        link.commands
            .send(Command::Run(Box::new(move |inst| {
                let _ = tx.send(f(inst));
            })))
            .map_err(|_| KernelError::NotRunning(handle.to_string()))?;
        rx.recv()
            .map_err(|_| KernelError::NotRunning(handle.to_string()))
    }

    /// Suspends production and mailbox draining; commands still execute.
    pub fn pause_stack(&self, handle: StackHandle) -> Result<(), KernelError> {
        let link = self.link(handle)?;
        let _ = link.commands.send(Command::Pause);
        // Round-trip so the pause is in effect on return.
        self.call(handle, |_| ())
    }

    pub fn resume_stack(&self, handle: StackHandle) -> Result<(), KernelError> {
        let link = self.link(handle)?;
        let _ = link.commands.send(Command::Resume);
        Ok(())
    }

    /// Delivers `event` to the initial component of the stack named or
    /// aliased `target`.
    pub fn send_to_stack(
        &self,
        target: &str,
        event: Event,
        mode: SendMode,
    ) -> Result<(), KernelError> {
        let handle = self.resolve(target)?;
        match mode {
            SendMode::Sync => {
                if self.on_stack_thread(handle) {
                    return Err(KernelError::Deadlock(handle));
                }
                self.call(handle, move |inst| inst.inject(event))?
                    .map_err(KernelError::Delivery)
            }
            SendMode::Async => {
                let link = self.link(handle)?;
                let blocking =
                    link.policy == OverflowPolicy::Block && !self.on_stack_thread(handle);
                if blocking {
                    link.mailbox
                        .send(event)
                        .map_err(|_| KernelError::NotRunning(target.to_string()))
                } else {
                    match link.mailbox.try_send(event) {
                        Ok(()) => Ok(()),
                        Err(TrySendError::Full(_)) if link.policy == OverflowPolicy::DropNewest => {
                            link.dropped.add(1);
                            Ok(())
                        }
                        Err(TrySendError::Full(_)) => Err(KernelError::Deadlock(handle)),
                        Err(TrySendError::Disconnected(_)) => {
                            Err(KernelError::NotRunning(target.to_string()))
                        }
                    }
                }
            }
        }
    }

    /// Sensor counting async events dropped by a stack's full mailbox.
    pub fn mailbox_drops(&self, handle: StackHandle) -> Result<SensorRef, KernelError> {
        Ok(self.link(handle)?.dropped.reader())
    }

    // -- reflection ---------------------------------------------------------

    pub fn reconfigure(
        &self,
        handle: StackHandle,
        def: StackDefinition,
    ) -> Result<ReconfigPlan, KernelError> {
        let _c = self.lock_control();
        self.check(&def)?;
        Ok(self.call(handle, move |inst| reconfig::apply(inst, &def))??)
    }

    pub fn active_definition(&self, handle: StackHandle) -> Result<StackDefinition, KernelError> {
        self.call(handle, |inst| inst.active_definition())
    }

    pub fn get_option(
        &self,
        scope: Scope,
        selector: &str,
        path: &NodePath,
        name: &str,
    ) -> Result<ScalarValue, KernelError> {
        match scope {
            Scope::Active => {
                let handle = self.resolve(selector)?;
                let (path, name) = (path.clone(), name.to_string());
                Ok(self.call(handle, move |inst| inst.option(&path, &name))??)
            }
            Scope::Stored => {
                let reg = self.shared.registry.read().unwrap();
                let def = reg
                    .stored
                    .get(selector)
                    .ok_or_else(|| KernelError::UnknownStack(selector.to_string()))?;
                let component = format!("{selector}/{path}");
                let node = def
                    .node(path)
                    .ok_or_else(|| KernelError::NoSuchComponent(component.clone()))?;
                let contract = self
                    .shared
                    .factories
                    .contract(&node.type_id)
                    .ok_or_else(|| AssemblyError::Unresolved(node.type_id.clone()))?;
                let real = stored_option_name(node, &contract, name).ok_or_else(|| {
                    KernelError::Option {
                        component: component.clone(),
                        error: OptionError::Unknown(name.to_string()),
                    }
                })?;
                node.binding(&real)
                    .and_then(|b| b.value.clone())
                    .or_else(|| contract.option(&real).and_then(|d| d.default.clone()))
                    .ok_or(KernelError::Option {
                        component,
                        error: OptionError::Unset(real),
                    })
            }
        }
    }

    pub fn set_option(
        &self,
        scope: Scope,
        selector: &str,
        path: &NodePath,
        name: &str,
        value: ScalarValue,
    ) -> Result<ScalarValue, KernelError> {
        let _c = self.lock_control();
        match scope {
            Scope::Active => {
                let handle = self.resolve(selector)?;
                let (path, name) = (path.clone(), name.to_string());
                Ok(self.call(handle, move |inst| inst.set_option(&path, &name, value))??)
            }
            Scope::Stored => {
                let mut reg = self.shared.registry.write().unwrap();
                let def = reg
                    .stored
                    .get_mut(selector)
                    .ok_or_else(|| KernelError::UnknownStack(selector.to_string()))?;
                let component = format!("{selector}/{path}");
                let node = def
                    .node_mut(path)
                    .ok_or_else(|| KernelError::NoSuchComponent(component.clone()))?;
                let contract = self
                    .shared
                    .factories
                    .contract(&node.type_id)
                    .ok_or_else(|| AssemblyError::Unresolved(node.type_id.clone()))?;
                let real = stored_option_name(node, &contract, name).ok_or_else(|| {
                    KernelError::Option {
                        component: component.clone(),
                        error: OptionError::Unknown(name.to_string()),
                    }
                })?;
                let decl = contract.option(&real).expect("declared");
                resolve_option(decl, value.clone())
                    .map_err(|error| KernelError::Option { component, error })?;
                node.bind(&real, value.clone());
                Ok(value)
            }
        }
    }

    pub fn snapshot(&self) -> RegistrySnapshot {
        let stored = self
            .shared
            .registry
            .read()
            .unwrap()
            .stored
            .iter()
            .map(|(k, d)| (k.clone(), render_stack(d)))
            .collect();
        let stacks = self
            .list_stacks()
            .into_iter()
            .map(|info| {
                let active = if info.state == StackState::Running {
                    self.active_definition(info.handle)
                        .ok()
                        .map(|d| render_stack(&d))
                } else {
                    None
                };
                (info, active)
            })
            .collect();
        RegistrySnapshot { stored, stacks }
    }

    /// Stops every running stack.
    pub fn shutdown(&self) {
        let _c = self.lock_control();
        let handles: Vec<StackHandle> = self
            .shared
            .registry
            .read()
            .unwrap()
            .stacks
            .iter()
            .filter(|(_, e)| e.link.is_some())
            .map(|(h, _)| *h)
            .collect();
        for h in handles {
            let _ = self.stop_locked(h);
        }
    }

    /// Waits until `cond` holds or `timeout` elapses.
    pub fn wait_until(&self, timeout: Duration, mut cond: impl FnMut() -> bool) -> bool {
        let deadline = Instant::now() + timeout;
        while Instant::now() < deadline {
            if cond() {
                return true;
            }
            std::thread::sleep(Duration::from_millis(1));
        }
        cond()
    }
}

fn stored_option_name(
    node: &crate::adl::ComponentNode,
    contract: &crate::component::ComponentContract,
    name: &str,
) -> Option<String> {
    if contract.option(name).is_some() {
        return Some(name.to_string());
    }
    node.options
        .iter()
        .find(|b| b.alias.as_deref() == Some(name))
        .map(|b| b.name.clone())
}

fn report(inst: &StackInstance, errors: &SensorWriter, r: Result<(), StackError>) {
    if let Err(e) = r {
        errors.add(1);
        log::warn!("stack {}: {e}", inst.label());
    }
}

fn run_stack(
    mut inst: StackInstance,
    commands: Receiver<Command>,
    mailbox: Receiver<Event>,
    status: &AtomicU8,
    errors: &SensorWriter,
) {
    let mut paused = false;
    let mut producing = true;
    let mut idle_until: Option<Instant> = None;
    'run: loop {
        loop {
            match commands.try_recv() {
                Ok(Command::Run(job)) => job(&mut inst),
                Ok(Command::Pause) => paused = true,
                Ok(Command::Resume) => paused = false,
                Ok(Command::Stop) => break 'run,
                Err(crossbeam_channel::TryRecvError::Empty) => break,
                Err(crossbeam_channel::TryRecvError::Disconnected) => break 'run,
            }
        }
        if paused {
            match commands.recv() {
                Ok(Command::Run(job)) => job(&mut inst),
                Ok(Command::Pause) => {}
                Ok(Command::Resume) => paused = false,
                Ok(Command::Stop) | Err(_) => break 'run,
            }
            continue;
        }
        while let Ok(ev) = mailbox.try_recv() {
            let r = inst.inject(ev);
            report(&inst, errors, r);
        }
        if producing && idle_until.is_none_or(|t| Instant::now() >= t) {
            idle_until = None;
            match inst.produce() {
                Ok(Production::Emitted) => {}
                Ok(Production::Idle(d)) => idle_until = Some(Instant::now() + d),
                Ok(Production::Exhausted) => producing = false,
                Err(e) => report(&inst, errors, Err(e)),
            }
            continue;
        }
        let timeout = idle_until
            .map(|t| t.saturating_duration_since(Instant::now()))
            .unwrap_or(Duration::from_secs(3600));
        select! {
            recv(commands) -> c => match c {
                Ok(Command::Run(job)) => job(&mut inst),
                Ok(Command::Pause) => paused = true,
                Ok(Command::Resume) => paused = false,
                Ok(Command::Stop) | Err(_) => break 'run,
            },
            recv(mailbox) -> ev => if let Ok(ev) = ev {
                let r = inst.inject(ev);
                report(&inst, errors, r);
            },
            default(timeout) => {}
        }
    }
    status.store(encode_state(StackState::Stopping), Ordering::Release);
    inst.set_state(StackState::Stopping);
    inst.stop_producing();
    while let Ok(ev) = mailbox.try_recv() {
        let r = inst.inject(ev);
        report(&inst, errors, r);
    }
    inst.destroy();
    status.store(encode_state(StackState::Stopped), Ordering::Release);
}
