//! Instrumented test components.

use std::sync::{Arc, Mutex};

use pandora::component::{
    Component, ComponentContract, Context, OptionDecl, OutputKind, Port, StackError,
};
use pandora::event::{Event, ScalarKind, ScalarValue};
use pandora::FactoryRegistry;

/// Shared log written by `probe` instances.
#[derive(Default, Clone)]
pub struct Recorder {
    /// `(component label, seq attribute)` per processed event.
    pub seen: Arc<Mutex<Vec<(String, i64)>>>,
    /// Sensor prefixes in construction order.
    pub built: Arc<Mutex<Vec<String>>>,
}

impl Recorder {
    pub fn seen(&self) -> Vec<(String, i64)> {
        self.seen.lock().unwrap().clone()
    }

    pub fn built(&self) -> Vec<String> {
        self.built.lock().unwrap().clone()
    }
}

struct Probe {
    rec: Recorder,
}

impl Component for Probe {
    fn process(&mut self, ctx: &mut Context<'_>, event: Event) -> Result<(), StackError> {
        let seq = event.attr("seq").and_then(|v| v.as_int()).unwrap_or(-1);
        self.rec
            .seen
            .lock()
            .unwrap()
            .push((ctx.label().to_string(), seq));
        ctx.forward(event)
    }
}

/// Sends event `seq` to alternative port `seq % n`.
struct Route {
    n: usize,
}

impl Component for Route {
    fn process(&mut self, ctx: &mut Context<'_>, event: Event) -> Result<(), StackError> {
        let seq = event.attr("seq").and_then(|v| v.as_int()).unwrap_or(0);
        let port = seq.rem_euclid(self.n as i64) as usize;
        ctx.forward_to(Port::Alt(port), event)
    }

    fn set_option(&mut self, _name: &str, value: &ScalarValue) -> Result<(), String> {
        match value.as_int() {
            Some(n) if n > 0 => {
                self.n = n as usize;
                Ok(())
            }
            _ => Err("n must be positive".into()),
        }
    }
}

/// Copies `seq % m` into attribute `k` as a string.
struct Keyer {
    m: i64,
}

impl Component for Keyer {
    fn process(&mut self, ctx: &mut Context<'_>, event: Event) -> Result<(), StackError> {
        let seq = event.attr("seq").and_then(|v| v.as_int()).unwrap_or(0);
        let key = format!("k{}", seq.rem_euclid(self.m));
        ctx.forward(event.derive().attr("k", key).build())
    }

    fn set_option(&mut self, _name: &str, value: &ScalarValue) -> Result<(), String> {
        self.m = value
            .as_int()
            .filter(|m| *m > 0)
            .ok_or("m must be positive")?;
        Ok(())
    }
}

/// Standard components plus `probe`, `route` and `keyer`.
pub fn registry(rec: &Recorder) -> Arc<FactoryRegistry> {
    let reg = pandora::stdlib::registry();
    let r = rec.clone();
    reg.register(ComponentContract::new("probe"), move |setup| {
        r.built.lock().unwrap().push(setup.prefix().to_string());
        Ok(Box::new(Probe { rec: r.clone() }) as Box<dyn Component>)
    })
    .unwrap();
    reg.register(
        ComponentContract::new("route")
            .output(OutputKind::Alternative)
            .with_option(OptionDecl::new("n", ScalarKind::Int).default_value(2)),
        |_| Ok(Box::new(Route { n: 2 }) as Box<dyn Component>),
    )
    .unwrap();
    reg.register(
        ComponentContract::new("keyer")
            .with_option(OptionDecl::new("m", ScalarKind::Int).default_value(3)),
        |_| Ok(Box::new(Keyer { m: 3 }) as Box<dyn Component>),
    )
    .unwrap();
    Arc::new(reg)
}
