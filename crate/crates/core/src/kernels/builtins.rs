//! The stock kernels: synthetic sources and digesting sinks, passthrough
//! and timing actors, CNN layers, and the rate actors used inside dynamic
//! processing groups.

use std::collections::BTreeMap;

use serde_json::json;

use super::tensor::{
    bytes_to_f32s, conv2d_same, dense, f32s_to_bytes, maxpool2, relu, seeded_conv_weights,
    seeded_dense_weights, softmax, ConvWeights, DenseWeights, Tensor,
};
use super::{burn_ms, Firing, Kernel, KernelCtx, KernelError, KernelRegistry};
use crate::rng::{splitmix64, Rng};

pub fn register_all(reg: &mut KernelRegistry) {
    reg.register("source", |ctx| Source::build(ctx).map(boxed));
    reg.register("sink", |ctx| Sink::build(ctx).map(boxed));
    reg.register("identity", |ctx| Identity::build(ctx).map(boxed));
    reg.register("busywork", |ctx| Busywork::build(ctx).map(boxed));
    reg.register("concat", |ctx| Concat::build(ctx).map(boxed));
    reg.register("conv2d", |ctx| Conv2d::build(ctx).map(boxed));
    reg.register("dense", |ctx| DenseStack::build(ctx).map(boxed));
    reg.register("rate_pattern", |ctx| RatePattern::build(ctx).map(boxed));
    reg.register("rate_expand", |ctx| RateExpand::build(ctx).map(boxed));
    reg.register("rate_collapse", |ctx| RateCollapse::build(ctx).map(boxed));
}

fn boxed<K: Kernel + 'static>(kernel: K) -> Box<dyn Kernel> {
    Box::new(kernel)
}

/// Truncates or zero-pads `token` to `size` bytes.
fn resize_token(token: &[u8], size: usize) -> Vec<u8> {
    let mut out = token.to_vec();
    out.resize(size, 0);
    out
}

fn require_rate_one(
    ctx_actor: &str,
    port: &str,
    rates: &BTreeMap<String, u32>,
) -> Result<(), KernelError> {
    match rates.get(port) {
        Some(1) => Ok(()),
        other => Err(KernelError::Fire {
            actor: ctx_actor.to_string(),
            message: format!("port `{port}` must run at rate 1, got {other:?}"),
        }),
    }
}

// ---------------------------------------------------------------------------

/// Emits `frames` tokens, then finishes. A `path` parameter reads raw
/// frames from a headerless file of concatenated `token_size` blocks.
/// Without it the tokens are seeded pseudo-random: f32 image frames in
/// [-1, 1) when `height`/`width`/`channels` are given, raw bytes filling
/// the output token otherwise. `work_ms` burns CPU per firing to emulate
/// capture cost.
struct Source {
    port: String,
    token_size: usize,
    frames: u64,
    produced: u64,
    work_ms: f64,
    floats: bool,
    file: Option<Vec<u8>>,
    rng: Rng,
}

impl Source {
    fn build(ctx: &KernelCtx) -> Result<Self, KernelError> {
        let (port, token_size) = ctx.sole_output()?;
        let frames = ctx.param_u64("frames")?;
        let file = match ctx.opt_param_str("path")? {
            Some(path) => {
                let data = std::fs::read(path)
                    .map_err(|e| ctx.bad("path", format!("cannot read `{path}`: {e}")))?;
                let need = frames * u64::from(token_size);
                if (data.len() as u64) < need {
                    return Err(ctx.bad(
                        "path",
                        format!(
                            "`{path}` holds {} bytes, {need} needed for {frames} frames of \
                             {token_size} bytes",
                            data.len()
                        ),
                    ));
                }
                Some(data)
            }
            None => None,
        };
        let floats = ctx.actor.kernel_params.contains_key("height");
        if floats {
            let h = ctx.param_u64("height")?;
            let w = ctx.param_u64("width")?;
            let c = ctx.param_u64("channels")?;
            if h * w * c * 4 != u64::from(token_size) {
                return Err(ctx.bad(
                    "height",
                    format!("{h}x{w}x{c} f32 frame does not fill a {token_size}-byte token"),
                ));
            }
        }
        Ok(Source {
            port,
            token_size: token_size as usize,
            frames,
            produced: 0,
            work_ms: ctx.opt_param_f64("work_ms")?.unwrap_or(0.0),
            floats,
            file,
            rng: Rng::seeded(ctx.seed),
        })
    }

    fn next_token(&mut self) -> Vec<u8> {
        if let Some(data) = &self.file {
            let at = self.produced as usize * self.token_size;
            return data[at..at + self.token_size].to_vec();
        }
        if self.floats {
            let n = self.token_size / 4;
            f32s_to_bytes(&(0..n).map(|_| self.rng.symmetric_f32()).collect::<Vec<_>>())
        } else {
            let mut bytes = Vec::with_capacity(self.token_size + 8);
            while bytes.len() < self.token_size {
                bytes.extend_from_slice(&self.rng.next_u64().to_le_bytes());
            }
            bytes.truncate(self.token_size);
            bytes
        }
    }
}

impl Kernel for Source {
    fn fire(
        &mut self,
        _firing: u64,
        rates: &BTreeMap<String, u32>,
        _inputs: &BTreeMap<String, Vec<u8>>,
    ) -> Result<Firing, KernelError> {
        burn_ms(self.work_ms);
        let rate = rates.get(&self.port).copied().unwrap_or(1);
        let mut bytes = Vec::with_capacity(self.token_size * rate as usize);
        for _ in 0..rate {
            bytes.extend_from_slice(&self.next_token());
            self.produced += 1;
        }
        let firing = Firing::default().out(&self.port, bytes);
        if self.produced >= self.frames {
            Ok(firing.finished())
        } else {
            Ok(firing)
        }
    }

    fn report(&self) -> Option<serde_json::Value> {
        Some(json!({ "produced_tokens": self.produced }))
    }
}

// ---------------------------------------------------------------------------

/// Consumes everything and keeps a running FNV-1a digest, reported at the
/// end of the run. Two runs that delivered identical byte streams report
/// identical digests, which is how cross-device equivalence is checked.
/// A `path` parameter additionally writes the consumed tokens verbatim.
struct Sink {
    actor: String,
    digest: u64,
    bytes: u64,
    tokens: u64,
    work_ms: f64,
    file: Option<std::fs::File>,
}

impl Sink {
    fn build(ctx: &KernelCtx) -> Result<Self, KernelError> {
        let file = match ctx.opt_param_str("path")? {
            Some(path) => Some(
                std::fs::File::create(path)
                    .map_err(|e| ctx.bad("path", format!("cannot write `{path}`: {e}")))?,
            ),
            None => None,
        };
        Ok(Sink {
            actor: ctx.actor.id.clone(),
            digest: 0xcbf2_9ce4_8422_2325,
            bytes: 0,
            tokens: 0,
            work_ms: ctx.opt_param_f64("work_ms")?.unwrap_or(0.0),
            file,
        })
    }
}

impl Kernel for Sink {
    fn fire(
        &mut self,
        _firing: u64,
        rates: &BTreeMap<String, u32>,
        inputs: &BTreeMap<String, Vec<u8>>,
    ) -> Result<Firing, KernelError> {
        use std::io::Write;

        burn_ms(self.work_ms);
        for (port, bytes) in inputs {
            if let Some(file) = &mut self.file {
                file.write_all(bytes).map_err(|e| KernelError::Fire {
                    actor: self.actor.clone(),
                    message: format!("write failed: {e}"),
                })?;
            }
            for &b in bytes {
                self.digest ^= u64::from(b);
                self.digest = self.digest.wrapping_mul(0x0000_0100_0000_01b3);
            }
            self.bytes += bytes.len() as u64;
            self.tokens += u64::from(rates.get(port).copied().unwrap_or(0));
        }
        Ok(Firing::default())
    }

    fn report(&self) -> Option<serde_json::Value> {
        Some(json!({
            "digest": format!("{:016x}", self.digest),
            "bytes": self.bytes,
            "tokens": self.tokens,
        }))
    }
}

// ---------------------------------------------------------------------------

/// Copies its single input to every output unchanged.
struct Identity {
    in_port: String,
    out_ports: Vec<String>,
}

impl Identity {
    fn build(ctx: &KernelCtx) -> Result<Self, KernelError> {
        let (in_port, in_size) = ctx.sole_input()?;
        for (port, size) in &ctx.out_token_size {
            if *size != in_size {
                return Err(ctx.fire_error(format!(
                    "output `{port}` token size {size} differs from input size {in_size}"
                )));
            }
        }
        Ok(Identity {
            in_port,
            out_ports: ctx.out_token_size.keys().cloned().collect(),
        })
    }
}

impl Kernel for Identity {
    fn fire(
        &mut self,
        _firing: u64,
        _rates: &BTreeMap<String, u32>,
        inputs: &BTreeMap<String, Vec<u8>>,
    ) -> Result<Firing, KernelError> {
        let bytes = &inputs[&self.in_port];
        let mut firing = Firing::default();
        for port in &self.out_ports {
            firing.outputs.insert(port.clone(), bytes.clone());
        }
        Ok(firing)
    }
}

// ---------------------------------------------------------------------------

/// Burns a configured number of milliseconds per firing, then forwards its
/// first input port (ports sorted by id) to every output, truncating or
/// zero-padding tokens when the sizes differ. Extra inputs are consumed
/// and dropped, which is what the deep synthetic chains with skip edges
/// rely on. A firing whose dynamic inputs all arrive at rate zero skips
/// the burn: a pruned frame costs nothing.
struct Busywork {
    ms: f64,
    primary_in: Option<String>,
    out_ports: Vec<(String, usize)>,
}

impl Busywork {
    fn build(ctx: &KernelCtx) -> Result<Self, KernelError> {
        let ms = ctx.opt_param_f64("ms")?.unwrap_or(0.0);
        Ok(Busywork {
            ms,
            primary_in: ctx.in_token_size.keys().next().cloned(),
            out_ports: ctx
                .out_token_size
                .iter()
                .map(|(k, v)| (k.clone(), *v as usize))
                .collect(),
        })
    }
}

impl Kernel for Busywork {
    fn fire(
        &mut self,
        _firing: u64,
        rates: &BTreeMap<String, u32>,
        inputs: &BTreeMap<String, Vec<u8>>,
    ) -> Result<Firing, KernelError> {
        let consumed_any = self.primary_in.is_none()
            || inputs.iter().any(|(_, bytes)| !bytes.is_empty());
        if consumed_any {
            burn_ms(self.ms);
        }
        let primary: &[u8] = self
            .primary_in
            .as_ref()
            .and_then(|p| inputs.get(p))
            .map_or(&[], |v| v.as_slice());
        let in_rate = self
            .primary_in
            .as_ref()
            .and_then(|p| rates.get(p))
            .copied()
            .unwrap_or(0) as usize;
        let in_token = if in_rate > 0 { primary.len() / in_rate } else { 0 };

        let mut firing = Firing::default();
        for (port, size) in &self.out_ports {
            let rate = rates.get(port).copied().unwrap_or(1) as usize;
            let mut bytes = Vec::with_capacity(size * rate);
            for k in 0..rate {
                // Token k mirrors input token k when it exists, else the
                // last input token, else zeros.
                let src = if in_rate > 0 {
                    let i = k.min(in_rate - 1);
                    &primary[i * in_token..(i + 1) * in_token]
                } else {
                    &[][..]
                };
                bytes.extend_from_slice(&resize_token(src, *size));
            }
            firing.outputs.insert(port.clone(), bytes);
        }
        Ok(firing)
    }
}

// ---------------------------------------------------------------------------

/// Concatenates one token from every input port, in port id order, into a
/// single output token.
struct Concat {
    actor: String,
    in_ports: Vec<String>,
    out_port: String,
}

impl Concat {
    fn build(ctx: &KernelCtx) -> Result<Self, KernelError> {
        let (out_port, out_size) = ctx.sole_output()?;
        let total: u32 = ctx.in_token_size.values().sum();
        if total != out_size {
            return Err(ctx.fire_error(format!(
                "concatenated input tokens fill {total} bytes but the output token holds {out_size}"
            )));
        }
        Ok(Concat {
            actor: ctx.actor.id.clone(),
            in_ports: ctx.in_token_size.keys().cloned().collect(),
            out_port,
        })
    }
}

impl Kernel for Concat {
    fn fire(
        &mut self,
        _firing: u64,
        rates: &BTreeMap<String, u32>,
        inputs: &BTreeMap<String, Vec<u8>>,
    ) -> Result<Firing, KernelError> {
        let mut bytes = Vec::new();
        for port in &self.in_ports {
            require_rate_one(&self.actor, port, rates)?;
            bytes.extend_from_slice(&inputs[port]);
        }
        Ok(Firing::default().out(&self.out_port, bytes))
    }
}

// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq)]
enum Activation {
    None,
    Relu,
    Softmax,
}

fn parse_activation(ctx: &KernelCtx, name: Option<&str>) -> Result<Activation, KernelError> {
    match name.unwrap_or("none") {
        "none" => Ok(Activation::None),
        "relu" => Ok(Activation::Relu),
        "softmax" => Ok(Activation::Softmax),
        other => Err(ctx.bad("activation", format!("unknown activation `{other}`"))),
    }
}

fn apply_activation(act: Activation, values: &mut [f32]) {
    match act {
        Activation::None => {}
        Activation::Relu => relu(values),
        Activation::Softmax => softmax(values),
    }
}

/// Same-padded convolution with optional 2x2 max pooling and activation,
/// over one f32 image token per firing. Weights are regenerated from the
/// actor seed, so every device derives the same values.
struct Conv2d {
    actor: String,
    in_port: String,
    out_port: String,
    in_h: usize,
    in_w: usize,
    weights: ConvWeights,
    pool: usize,
    act: Activation,
}

impl Conv2d {
    fn build(ctx: &KernelCtx) -> Result<Self, KernelError> {
        let (in_port, in_size) = ctx.sole_input()?;
        let (out_port, out_size) = ctx.sole_output()?;
        let in_h = ctx.param_usize("in_height")?;
        let in_w = ctx.param_usize("in_width")?;
        let in_c = ctx.param_usize("in_channels")?;
        let filters = ctx.param_usize("filters")?;
        let ksize = ctx.opt_param_u64("kernel_size")?.unwrap_or(5) as usize;
        let pool = ctx.opt_param_u64("pool")?.unwrap_or(1) as usize;
        let act = parse_activation(ctx, ctx.opt_param_str("activation")?)?;
        if !matches!(pool, 1 | 2) {
            return Err(ctx.bad("pool", "only 1 (off) and 2 are supported"));
        }
        if pool == 2 && (in_h % 2 != 0 || in_w % 2 != 0) {
            return Err(ctx.bad("pool", "pooling needs even spatial dimensions"));
        }
        if in_h * in_w * in_c * 4 != in_size as usize {
            return Err(ctx.bad(
                "in_height",
                format!("{in_h}x{in_w}x{in_c} f32 frame does not fill a {in_size}-byte token"),
            ));
        }
        let want_out = (in_h / pool) * (in_w / pool) * filters * 4;
        if want_out != out_size as usize {
            return Err(ctx.bad(
                "filters",
                format!("layer produces {want_out} bytes but the output token holds {out_size}"),
            ));
        }
        Ok(Conv2d {
            actor: ctx.actor.id.clone(),
            in_port,
            out_port,
            in_h,
            in_w,
            weights: seeded_conv_weights(filters, ksize, in_c, ctx.seed),
            pool,
            act,
        })
    }
}

impl Kernel for Conv2d {
    fn fire(
        &mut self,
        _firing: u64,
        rates: &BTreeMap<String, u32>,
        inputs: &BTreeMap<String, Vec<u8>>,
    ) -> Result<Firing, KernelError> {
        require_rate_one(&self.actor, &self.in_port, rates)?;
        let x = Tensor::from_data(
            self.in_h,
            self.in_w,
            self.weights.in_c,
            bytes_to_f32s(&inputs[&self.in_port]),
        );
        let mut out = conv2d_same(&x, &self.weights);
        if self.pool == 2 {
            out = maxpool2(&out);
        }
        apply_activation(self.act, &mut out.data);
        Ok(Firing::default().out(&self.out_port, f32s_to_bytes(&out.data)))
    }
}

// ---------------------------------------------------------------------------

/// A stack of fully connected layers in one actor. The `layers` parameter
/// is a list of `{"out": n, "activation": "relu"|"softmax"|"none"}`
/// objects; each layer's weights come from a seed chain off the actor
/// seed. As the terminal actor of a pipeline (no wired output) it keeps an
/// FNV-1a digest of its results and reports it like a sink, so the
/// pipeline's final bytes stay observable.
struct DenseStack {
    actor: String,
    in_port: String,
    out_port: Option<String>,
    layers: Vec<(DenseWeights, Activation)>,
    digest: u64,
    result_bytes: u64,
    result_tokens: u64,
}

impl DenseStack {
    fn build(ctx: &KernelCtx) -> Result<Self, KernelError> {
        let (in_port, in_size) = ctx.sole_input()?;
        let in_features = ctx.param_usize("in_features")?;
        if in_features * 4 != in_size as usize {
            return Err(ctx.bad(
                "in_features",
                format!("{in_features} f32 features do not fill a {in_size}-byte token"),
            ));
        }
        let spec = ctx.param_array("layers")?.to_vec();
        if spec.is_empty() {
            return Err(ctx.bad("layers", "at least one layer required"));
        }
        let mut seed_chain = ctx.seed;
        let mut layers = Vec::with_capacity(spec.len());
        let mut features = in_features;
        for (i, entry) in spec.iter().enumerate() {
            let obj = entry
                .as_object()
                .ok_or_else(|| ctx.bad("layers", format!("layer {i} is not an object")))?;
            let out = obj
                .get("out")
                .and_then(|v| v.as_u64())
                .ok_or_else(|| ctx.bad("layers", format!("layer {i} needs an integer `out`")))?
                as usize;
            let act = parse_activation(ctx, obj.get("activation").and_then(|v| v.as_str()))?;
            let seed = splitmix64(&mut seed_chain);
            layers.push((seeded_dense_weights(features, out, seed), act));
            features = out;
        }
        let out_port = match ctx.out_token_size.len() {
            0 => None,
            1 => {
                let (port, out_size) = ctx.out_token_size.iter().next().unwrap();
                if features * 4 != *out_size as usize {
                    return Err(ctx.bad(
                        "layers",
                        format!(
                            "final layer emits {features} f32s but the output token holds \
                             {out_size} bytes"
                        ),
                    ));
                }
                Some(port.clone())
            }
            n => return Err(ctx.fire_error(format!("expected at most one data output, found {n}"))),
        };
        Ok(DenseStack {
            actor: ctx.actor.id.clone(),
            in_port,
            out_port,
            layers,
            digest: 0xcbf2_9ce4_8422_2325,
            result_bytes: 0,
            result_tokens: 0,
        })
    }
}

impl Kernel for DenseStack {
    fn fire(
        &mut self,
        _firing: u64,
        rates: &BTreeMap<String, u32>,
        inputs: &BTreeMap<String, Vec<u8>>,
    ) -> Result<Firing, KernelError> {
        require_rate_one(&self.actor, &self.in_port, rates)?;
        let mut values = bytes_to_f32s(&inputs[&self.in_port]);
        for (weights, act) in &self.layers {
            values = dense(&values, weights);
            apply_activation(*act, &mut values);
        }
        let bytes = f32s_to_bytes(&values);
        match &self.out_port {
            Some(port) => Ok(Firing::default().out(port, bytes)),
            None => {
                for &b in &bytes {
                    self.digest ^= u64::from(b);
                    self.digest = self.digest.wrapping_mul(0x0000_0100_0000_01b3);
                }
                self.result_bytes += bytes.len() as u64;
                self.result_tokens += 1;
                Ok(Firing::default())
            }
        }
    }

    fn report(&self) -> Option<serde_json::Value> {
        if self.out_port.is_some() {
            return None;
        }
        Some(json!({
            "digest": format!("{:016x}", self.digest),
            "bytes": self.result_bytes,
            "tokens": self.result_tokens,
        }))
    }
}

// ---------------------------------------------------------------------------

/// Control actor kernel: walks a fixed rate pattern, emitting the current
/// rate as one 4-byte little-endian token on every output each firing.
struct RatePattern {
    pattern: Vec<u32>,
    out_ports: Vec<String>,
}

impl RatePattern {
    fn build(ctx: &KernelCtx) -> Result<Self, KernelError> {
        let pattern: Vec<u32> = ctx
            .param_array("pattern")?
            .iter()
            .map(|v| v.as_u64().map(|n| n as u32))
            .collect::<Option<_>>()
            .ok_or_else(|| ctx.bad("pattern", "expected an array of non-negative integers"))?;
        if pattern.is_empty() {
            return Err(ctx.bad("pattern", "pattern must not be empty"));
        }
        for (port, size) in &ctx.out_token_size {
            if *size != 4 {
                return Err(ctx.fire_error(format!(
                    "control output `{port}` must carry 4-byte tokens, has {size}"
                )));
            }
        }
        Ok(RatePattern {
            pattern,
            out_ports: ctx.out_token_size.keys().cloned().collect(),
        })
    }
}

impl Kernel for RatePattern {
    fn fire(
        &mut self,
        firing: u64,
        _rates: &BTreeMap<String, u32>,
        _inputs: &BTreeMap<String, Vec<u8>>,
    ) -> Result<Firing, KernelError> {
        let rate = self.pattern[(firing % self.pattern.len() as u64) as usize];
        let mut out = Firing::default();
        for port in &self.out_ports {
            out.outputs.insert(port.clone(), rate.to_le_bytes().to_vec());
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------

/// Entry decision actor: consumes one token from its static input and
/// replicates it onto the dynamic output at the active rate. Rate zero
/// drops the token, which is the pruning case.
struct RateExpand {
    in_port: String,
    out_port: String,
}

impl RateExpand {
    fn build(ctx: &KernelCtx) -> Result<Self, KernelError> {
        let (in_port, in_size) = ctx.sole_input()?;
        let (out_port, out_size) = ctx.sole_output()?;
        if in_size != out_size {
            return Err(ctx.fire_error(format!(
                "input and output token sizes differ ({in_size} vs {out_size})"
            )));
        }
        Ok(RateExpand { in_port, out_port })
    }
}

impl Kernel for RateExpand {
    fn fire(
        &mut self,
        _firing: u64,
        rates: &BTreeMap<String, u32>,
        inputs: &BTreeMap<String, Vec<u8>>,
    ) -> Result<Firing, KernelError> {
        let token = &inputs[&self.in_port];
        let rate = rates.get(&self.out_port).copied().unwrap_or(0) as usize;
        let mut bytes = Vec::with_capacity(token.len() * rate);
        for _ in 0..rate {
            bytes.extend_from_slice(token);
        }
        Ok(Firing::default().out(&self.out_port, bytes))
    }
}

/// Exit decision actor: consumes whatever the dynamic input delivered and
/// emits exactly one token on the static output: the last input token, or
/// zeros when the frame was pruned away.
struct RateCollapse {
    in_port: String,
    out_port: String,
    out_size: usize,
}

impl RateCollapse {
    fn build(ctx: &KernelCtx) -> Result<Self, KernelError> {
        let (in_port, _) = ctx.sole_input()?;
        let (out_port, out_size) = ctx.sole_output()?;
        Ok(RateCollapse {
            in_port,
            out_port,
            out_size: out_size as usize,
        })
    }
}

impl Kernel for RateCollapse {
    fn fire(
        &mut self,
        _firing: u64,
        rates: &BTreeMap<String, u32>,
        inputs: &BTreeMap<String, Vec<u8>>,
    ) -> Result<Firing, KernelError> {
        let bytes = &inputs[&self.in_port];
        let rate = rates.get(&self.in_port).copied().unwrap_or(0) as usize;
        let token = if rate > 0 {
            let size = bytes.len() / rate;
            &bytes[(rate - 1) * size..]
        } else {
            &[][..]
        };
        Ok(Firing::default().out(&self.out_port, resize_token(token, self.out_size)))
    }
}
