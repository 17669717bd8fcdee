//! Kernel trait, the builtin kernel registry and shared helpers.
//!
//! A kernel is the code behind an actor. The runtime hands it the active
//! rates and the input tokens for one firing and expects exactly
//! `rate * token_size` bytes back on every output port. Control and
//! feedback traffic never reaches a kernel; the actor loop consumes those
//! edges itself.

pub mod builtins;
pub mod tensor;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use crate::model::{fnv1a64, ActorSpec};

#[derive(Debug, thiserror::Error)]
pub enum KernelError {
    #[error("kernel `{0}` is not registered")]
    Unknown(String),
    #[error("actor `{actor}`: missing kernel parameter `{param}`")]
    MissingParam { actor: String, param: &'static str },
    #[error("actor `{actor}`: parameter `{param}`: {message}")]
    BadParam {
        actor: String,
        param: &'static str,
        message: String,
    },
    #[error("actor `{actor}`: {message}")]
    Fire { actor: String, message: String },
}

/// Everything a kernel builder may look at: the actor declaration, the
/// token sizes of its wired data ports, and the seed for any state it
/// derives pseudo-randomly.
#[derive(Debug, Clone)]
pub struct KernelCtx {
    pub actor: ActorSpec,
    /// Data input port id -> token size in bytes.
    pub in_token_size: BTreeMap<String, u32>,
    /// Data output port id -> token size in bytes.
    pub out_token_size: BTreeMap<String, u32>,
    /// Per-actor seed: the `seed` kernel parameter when present, otherwise
    /// the run's global seed mixed with the actor id. Mixing with the id
    /// keeps the value independent of which device the actor lands on.
    pub seed: u64,
}

impl KernelCtx {
    pub fn new(
        actor: ActorSpec,
        in_token_size: BTreeMap<String, u32>,
        out_token_size: BTreeMap<String, u32>,
        global_seed: u64,
    ) -> Self {
        let seed = actor
            .kernel_params
            .get("seed")
            .and_then(|v| v.as_u64())
            .unwrap_or_else(|| global_seed ^ fnv1a64(actor.id.as_bytes()));
        KernelCtx {
            actor,
            in_token_size,
            out_token_size,
            seed,
        }
    }

    pub fn param_u64(&self, param: &'static str) -> Result<u64, KernelError> {
        self.opt_param_u64(param)?
            .ok_or_else(|| KernelError::MissingParam {
                actor: self.actor.id.clone(),
                param,
            })
    }

    pub fn opt_param_u64(&self, param: &'static str) -> Result<Option<u64>, KernelError> {
        match self.actor.kernel_params.get(param) {
            None => Ok(None),
            Some(v) => v.as_u64().map(Some).ok_or_else(|| self.bad(param, "expected a non-negative integer")),
        }
    }

    pub fn param_usize(&self, param: &'static str) -> Result<usize, KernelError> {
        Ok(self.param_u64(param)? as usize)
    }

    pub fn opt_param_f64(&self, param: &'static str) -> Result<Option<f64>, KernelError> {
        match self.actor.kernel_params.get(param) {
            None => Ok(None),
            Some(v) => v.as_f64().map(Some).ok_or_else(|| self.bad(param, "expected a number")),
        }
    }

    pub fn opt_param_str(&self, param: &'static str) -> Result<Option<&str>, KernelError> {
        match self.actor.kernel_params.get(param) {
            None => Ok(None),
            Some(v) => v.as_str().map(Some).ok_or_else(|| self.bad(param, "expected a string")),
        }
    }

    pub fn param_array(&self, param: &'static str) -> Result<&[serde_json::Value], KernelError> {
        match self.actor.kernel_params.get(param) {
            None => Err(KernelError::MissingParam {
                actor: self.actor.id.clone(),
                param,
            }),
            Some(v) => v
                .as_array()
                .map(|a| a.as_slice())
                .ok_or_else(|| self.bad(param, "expected an array")),
        }
    }

    pub fn bad(&self, param: &'static str, message: impl Into<String>) -> KernelError {
        KernelError::BadParam {
            actor: self.actor.id.clone(),
            param,
            message: message.into(),
        }
    }

    pub fn fire_error(&self, message: impl Into<String>) -> KernelError {
        KernelError::Fire {
            actor: self.actor.id.clone(),
            message: message.into(),
        }
    }

    /// The single input/output port when the kernel expects exactly one.
    pub fn sole_input(&self) -> Result<(String, u32), KernelError> {
        if self.in_token_size.len() != 1 {
            return Err(self.fire_error(format!(
                "kernel expects exactly one data input, found {}",
                self.in_token_size.len()
            )));
        }
        let (k, v) = self.in_token_size.iter().next().unwrap();
        Ok((k.clone(), *v))
    }

    pub fn sole_output(&self) -> Result<(String, u32), KernelError> {
        if self.out_token_size.len() != 1 {
            return Err(self.fire_error(format!(
                "kernel expects exactly one data output, found {}",
                self.out_token_size.len()
            )));
        }
        let (k, v) = self.out_token_size.iter().next().unwrap();
        Ok((k.clone(), *v))
    }
}

/// Result of one firing: bytes per output port (exactly rate x token_size
/// each) and whether the kernel wants to keep running. After a firing with
/// `finished` set, the runtime flushes the outputs, propagates
/// end-of-stream downstream and retires the actor.
#[derive(Debug, Default)]
pub struct Firing {
    pub outputs: BTreeMap<String, Vec<u8>>,
    pub finished: bool,
}

impl Firing {
    pub fn out(mut self, port: &str, bytes: Vec<u8>) -> Self {
        self.outputs.insert(port.to_string(), bytes);
        self
    }

    pub fn finished(mut self) -> Self {
        self.finished = true;
        self
    }
}

pub trait Kernel: Send {
    /// Executes one firing. `rates` holds the active rate of every data
    /// port this firing; `inputs` holds `rate * token_size` bytes per data
    /// input port.
    fn fire(
        &mut self,
        firing: u64,
        rates: &BTreeMap<String, u32>,
        inputs: &BTreeMap<String, Vec<u8>>,
    ) -> Result<Firing, KernelError>;

    /// Optional end-of-run summary, merged into the run statistics.
    fn report(&self) -> Option<serde_json::Value> {
        None
    }
}

pub type KernelBuilder = fn(&KernelCtx) -> Result<Box<dyn Kernel>, KernelError>;

/// Name -> builder table. `builtin()` registers the stock kernels;
/// embedders may add their own before handing the registry to the runtime.
pub struct KernelRegistry {
    builders: BTreeMap<String, KernelBuilder>,
}

impl KernelRegistry {
    pub fn empty() -> Self {
        KernelRegistry {
            builders: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        builtins::register_all(&mut reg);
        reg
    }

    pub fn register(&mut self, name: &str, builder: KernelBuilder) {
        self.builders.insert(name.to_string(), builder);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.builders.contains_key(name)
    }

    pub fn build(&self, ctx: &KernelCtx) -> Result<Box<dyn Kernel>, KernelError> {
        let builder = self
            .builders
            .get(&ctx.actor.kernel)
            .ok_or_else(|| KernelError::Unknown(ctx.actor.kernel.clone()))?;
        builder(ctx)
    }
}

impl Default for KernelRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Burns roughly `ms` milliseconds of CPU time in small deterministic
/// arithmetic chunks, re-checking the clock between chunks. Checking wall
/// time rather than counting iterations keeps the duration stable when the
/// machine is busy or the core clocks down.
pub fn burn_ms(ms: f64) {
    if ms <= 0.0 {
        return;
    }
    let deadline = Instant::now() + Duration::from_secs_f64(ms / 1000.0);
    let mut acc = 0.731f64;
    while Instant::now() < deadline {
        for _ in 0..2_000 {
            acc = acc * 1.000_000_11 + 0.000_000_7;
        }
        std::hint::black_box(acc);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn burn_hits_its_deadline_without_large_overshoot() {
        for ms in [5.0, 20.0] {
            let start = Instant::now();
            burn_ms(ms);
            let elapsed = start.elapsed().as_secs_f64() * 1000.0;
            assert!(elapsed >= ms, "burned only {elapsed:.2} ms of {ms} ms");
            assert!(elapsed < ms + 15.0, "overshot: {elapsed:.2} ms for {ms} ms");
        }
    }

    #[test]
    fn zero_burn_returns_immediately() {
        let start = Instant::now();
        burn_ms(0.0);
        assert!(start.elapsed() < Duration::from_millis(5));
    }
}
