//! Two-stage attention policy with a hand-written backward pass.
//!
//! Each interval slot is a quadruple `(assigned, (lb - t) / s, length / s, lb == t)` with
//! `s` the largest machine load of the instance. Slots are projected to `D` dimensions
//! (source and sink slots use learned tokens), shifted by a sinusoidal encoding of the
//! slot position and passed through a per-job encoder layer whose output is mean-pooled.
//! A second encoder layer mixes the job vectors. Job logits come from one MLP head;
//! the No-Op logit is the mean over jobs of another.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dispatch::{masked_softmax, Policy};
use crate::env::{Observation, Slot};
use crate::error::PolicyError;

pub const D: usize = 8;
const FEATURES: usize = 4;
const FF: usize = 16;
const HIDDEN: usize = 32;
const LN_EPS: f64 = 1e-5;

const MAGIC: &[u8; 8] = b"JSSPNET\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: usize,
    b: usize,
    n_in: usize,
    n_out: usize,
}

impl Linear {
    fn forward(&self, p: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
        let mut y = vec![0.0; rows * self.n_out];
        let w = &p[self.w..self.w + self.n_in * self.n_out];
        let b = &p[self.b..self.b + self.n_out];
        for r in 0..rows {
            let xr = &x[r * self.n_in..(r + 1) * self.n_in];
            let yr = &mut y[r * self.n_out..(r + 1) * self.n_out];
            yr.copy_from_slice(b);
            for (i, &xi) in xr.iter().enumerate() {
                if xi != 0.0 {
                    let wi = &w[i * self.n_out..(i + 1) * self.n_out];
                    for (y, &wv) in yr.iter_mut().zip(wi) {
                        *y += xi * wv;
                    }
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients into `g` and returns the input gradient.
    fn backward(&self, p: &[f64], g: &mut [f64], x: &[f64], dy: &[f64], rows: usize) -> Vec<f64> {
        let mut dx = vec![0.0; rows * self.n_in];
        for r in 0..rows {
            let xr = &x[r * self.n_in..(r + 1) * self.n_in];
            let dyr = &dy[r * self.n_out..(r + 1) * self.n_out];
            for (o, &d) in dyr.iter().enumerate() {
                g[self.b + o] += d;
            }
            for i in 0..self.n_in {
                let row = self.w + i * self.n_out;
                let mut acc = 0.0;
                for (o, &d) in dyr.iter().enumerate() {
                    g[row + o] += xr[i] * d;
                    acc += p[row + o] * d;
                }
                dx[r * self.n_in + i] = acc;
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gamma: usize,
    beta: usize,
}

struct NormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Norm {
    fn forward(&self, p: &[f64], x: &[f64], rows: usize) -> (Vec<f64>, NormCache) {
        let mut y = vec![0.0; rows * D];
        let mut xhat = vec![0.0; rows * D];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let xr = &x[r * D..(r + 1) * D];
            let mean = xr.iter().sum::<f64>() / D as f64;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / D as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = inv;
            for i in 0..D {
                let h = (xr[i] - mean) * inv;
                xhat[r * D + i] = h;
                y[r * D + i] = p[self.gamma + i] * h + p[self.beta + i];
            }
        }
        (y, NormCache { xhat, inv_std })
    }

    fn backward(&self, p: &[f64], g: &mut [f64], cache: &NormCache, dy: &[f64], rows: usize) -> Vec<f64> {
        let mut dx = vec![0.0; rows * D];
        for r in 0..rows {
            let xh = &cache.xhat[r * D..(r + 1) * D];
            let dyr = &dy[r * D..(r + 1) * D];
            let mut dxh = [0.0; D];
            for i in 0..D {
                g[self.gamma + i] += dyr[i] * xh[i];
                g[self.beta + i] += dyr[i];
                dxh[i] = dyr[i] * p[self.gamma + i];
            }
            let sum: f64 = dxh.iter().sum();
            let dot: f64 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum();
            let n = D as f64;
            for i in 0..D {
                dx[r * D + i] = cache.inv_std[r] / n * (n * dxh[i] - sum - xh[i] * dot);
            }
        }
        dx
    }
}

fn gelu(u: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * u * (1.0 + (c * (u + 0.044715 * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let th = (c * (u + 0.044715 * u * u * u)).tanh();
    0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * c * (1.0 + 3.0 * 0.044715 * u * u)
}

/// Post-norm transformer encoder layer with a single attention head.
#[derive(Debug, Clone, Copy)]
struct Encoder {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    norm1: Norm,
    ff1: Linear,
    ff2: Linear,
    norm2: Norm,
}

struct EncoderCache {
    rows: usize,
    x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attn: Vec<f64>,
    heads: Vec<f64>,
    norm1: NormCache,
    y1: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
    norm2: NormCache,
}

impl Encoder {
    fn forward(&self, p: &[f64], x: Vec<f64>, rows: usize) -> (Vec<f64>, EncoderCache) {
        let q = self.q.forward(p, &x, rows);
        let k = self.k.forward(p, &x, rows);
        let v = self.v.forward(p, &x, rows);
        let scale = 1.0 / (D as f64).sqrt();
        let mut attn = vec![0.0; rows * rows];
        for i in 0..rows {
            let row = &mut attn[i * rows..(i + 1) * rows];
            for j in 0..rows {
                row[j] = (0..D).map(|c| q[i * D + c] * k[j * D + c]).sum::<f64>() * scale;
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for s in row.iter_mut() {
                *s = (*s - max).exp();
                total += *s;
            }
            row.iter_mut().for_each(|s| *s /= total);
        }
        let mut heads = vec![0.0; rows * D];
        for i in 0..rows {
            for j in 0..rows {
                let a = attn[i * rows + j];
                for c in 0..D {
                    heads[i * D + c] += a * v[j * D + c];
                }
            }
        }
        let mut r1 = self.o.forward(p, &heads, rows);
        r1.iter_mut().zip(&x).for_each(|(r, x)| *r += x);
        let (y1, norm1) = self.norm1.forward(p, &r1, rows);
        let pre = self.ff1.forward(p, &y1, rows);
        let act: Vec<f64> = pre.iter().map(|&u| gelu(u)).collect();
        let mut r2 = self.ff2.forward(p, &act, rows);
        r2.iter_mut().zip(&y1).for_each(|(r, y)| *r += y);
        let (y, norm2) = self.norm2.forward(p, &r2, rows);
        (y, EncoderCache { rows, x, q, k, v, attn, heads, norm1, y1, pre, act, norm2 })
    }

    fn backward(&self, p: &[f64], g: &mut [f64], c: &EncoderCache, dy: &[f64]) -> Vec<f64> {
        let rows = c.rows;
        let dr2 = self.norm2.backward(p, g, &c.norm2, dy, rows);
        let dact = self.ff2.backward(p, g, &c.act, &dr2, rows);
        let dpre: Vec<f64> = dact.iter().zip(&c.pre).map(|(d, &u)| d * gelu_grad(u)).collect();
        let mut dy1 = self.ff1.backward(p, g, &c.y1, &dpre, rows);
        dy1.iter_mut().zip(&dr2).for_each(|(a, b)| *a += b);
        let dr1 = self.norm1.backward(p, g, &c.norm1, &dy1, rows);
        let dheads = self.o.backward(p, g, &c.heads, &dr1, rows);

        let scale = 1.0 / (D as f64).sqrt();
        let mut dq = vec![0.0; rows * D];
        let mut dk = vec![0.0; rows * D];
        let mut dv = vec![0.0; rows * D];
        for i in 0..rows {
            let a = &c.attn[i * rows..(i + 1) * rows];
            let dh = &dheads[i * D..(i + 1) * D];
            let da: Vec<f64> = (0..rows).map(|j| (0..D).map(|k| dh[k] * c.v[j * D + k]).sum()).collect();
            let weighted: f64 = a.iter().zip(&da).map(|(a, d)| a * d).sum();
            for j in 0..rows {
                for k in 0..D {
                    dv[j * D + k] += a[j] * dh[k];
                }
                let ds = a[j] * (da[j] - weighted) * scale;
                for k in 0..D {
                    dq[i * D + k] += ds * c.k[j * D + k];
                    dk[j * D + k] += ds * c.q[i * D + k];
                }
            }
        }
        let mut dx = dr1;
        for (lin, d) in [(&self.q, &dq), (&self.k, &dk), (&self.v, &dv)] {
            let part = lin.backward(p, g, &c.x, d, rows);
            dx.iter_mut().zip(part).for_each(|(a, b)| *a += b);
        }
        dx
    }
}

#[derive(Debug, Clone, Copy)]
struct Head {
    hidden: Linear,
    out: Linear,
}

struct HeadCache {
    input: Vec<f64>,
    act: Vec<f64>,
}

impl Head {
    fn forward(&self, p: &[f64], x: &[f64], rows: usize) -> (Vec<f64>, HeadCache) {
        let act: Vec<f64> = self.hidden.forward(p, x, rows).into_iter().map(f64::tanh).collect();
        let y = self.out.forward(p, &act, rows);
        (y, HeadCache { input: x.to_vec(), act })
    }

    fn backward(&self, p: &[f64], g: &mut [f64], c: &HeadCache, dy: &[f64], rows: usize) -> Vec<f64> {
        let dact = self.out.backward(p, g, &c.act, dy, rows);
        let dpre: Vec<f64> = dact.iter().zip(&c.act).map(|(d, a)| d * (1.0 - a * a)).collect();
        self.hidden.backward(p, g, &c.input, &dpre, rows)
    }
}

#[derive(Debug, Clone)]
struct Layout {
    input: Linear,
    source: usize,
    sink: usize,
    stage1: Encoder,
    stage2: Encoder,
    job_head: Head,
    noop_head: Head,
    len: usize,
    /// (offset, len, fan_in) per weight block; `None` fan-in marks norm gains and shifts.
    blocks: Vec<(usize, usize, Option<usize>)>,
}

struct Builder {
    len: usize,
    blocks: Vec<(usize, usize, Option<usize>)>,
}

impl Builder {
    fn take(&mut self, n: usize, fan_in: Option<usize>) -> usize {
        let at = self.len;
        self.len += n;
        self.blocks.push((at, n, fan_in));
        at
    }

    fn linear(&mut self, n_in: usize, n_out: usize) -> Linear {
        let w = self.take(n_in * n_out, Some(n_in));
        let b = self.take(n_out, Some(n_in));
        Linear { w, b, n_in, n_out }
    }

    fn norm(&mut self) -> Norm {
        Norm { gamma: self.take(D, None), beta: self.take(D, None) }
    }

    fn encoder(&mut self) -> Encoder {
        Encoder {
            q: self.linear(D, D),
            k: self.linear(D, D),
            v: self.linear(D, D),
            o: self.linear(D, D),
            norm1: self.norm(),
            ff1: self.linear(D, FF),
            ff2: self.linear(FF, D),
            norm2: self.norm(),
        }
    }

    fn head(&mut self) -> Head {
        Head { hidden: self.linear(D, HIDDEN), out: self.linear(HIDDEN, 1) }
    }
}

impl Layout {
    fn new() -> Layout {
        let mut b = Builder { len: 0, blocks: Vec::new() };
        let input = b.linear(FEATURES, D);
        let source = b.take(D, Some(D));
        let sink = b.take(D, Some(D));
        let stage1 = b.encoder();
        let stage2 = b.encoder();
        let job_head = b.head();
        let noop_head = b.head();
        Layout { input, source, sink, stage1, stage2, job_head, noop_head, len: b.len, blocks: b.blocks }
    }
}

fn positional(pos: usize) -> [f64; D] {
    let mut pe = [0.0; D];
    for i in 0..D / 2 {
        let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / D as f64);
        pe[2 * i] = angle.sin();
        pe[2 * i + 1] = angle.cos();
    }
    pe
}

enum SlotInput {
    Source,
    Sink,
    Features([f64; FEATURES]),
}

/// Intermediate values of one forward pass, consumed by [`PolicyNet::backward`].
pub struct ForwardCache {
    slots: Vec<Vec<SlotInput>>,
    stage1: Vec<EncoderCache>,
    stage2: EncoderCache,
    job_head: HeadCache,
    noop_head: HeadCache,
}

#[derive(Debug, Clone)]
pub struct PolicyNet {
    layout: Layout,
    params: Vec<f64>,
}

impl PartialEq for PolicyNet {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
    }
}

impl PolicyNet {
    pub fn param_count() -> usize {
        Layout::new().len
    }

    /// Uniform initialization in `±1/sqrt(fan_in)`; norm gains start at 1 and shifts at 0.
    pub fn init(seed: u64) -> PolicyNet {
        let layout = Layout::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.len];
        for &(at, n, fan_in) in &layout.blocks {
            match fan_in {
                Some(f) => {
                    let s = 1.0 / (f as f64).sqrt();
                    params[at..at + n].iter_mut().for_each(|v| *v = rng.gen_range(-s..=s));
                }
                None => {}
            }
        }
        for norm in [layout.stage1.norm1, layout.stage1.norm2, layout.stage2.norm1, layout.stage2.norm2] {
            params[norm.gamma..norm.gamma + D].iter_mut().for_each(|v| *v = 1.0);
        }
        PolicyNet { layout, params }
    }

    pub fn from_params(params: Vec<f64>) -> Result<PolicyNet, PolicyError> {
        let layout = Layout::new();
        if params.len() != layout.len {
            return Err(PolicyError::Corrupt(format!("expected {} parameters, found {}", layout.len, params.len())));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(PolicyError::NonFinite("parameters"));
        }
        Ok(PolicyNet { layout, params })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn slot_inputs(observation: &Observation) -> Vec<Vec<SlotInput>> {
        let t = observation.time as f64;
        let s = observation.time_scale;
        observation
            .jobs
            .iter()
            .map(|row| {
                row.iter()
                    .map(|slot| match slot {
                        Slot::Source => SlotInput::Source,
                        Slot::Sink => SlotInput::Sink,
                        Slot::Interval(e) => SlotInput::Features([
                            if e.assigned { 1.0 } else { 0.0 },
                            (e.lb as f64 - t) / s,
                            e.length as f64 / s,
                            if e.at_time { 1.0 } else { 0.0 },
                        ]),
                    })
                    .collect()
            })
            .collect()
    }

    pub fn forward(&self, observation: &Observation) -> Result<Vec<f64>, PolicyError> {
        self.forward_cached(observation).map(|(logits, _)| logits)
    }

    pub fn forward_cached(&self, observation: &Observation) -> Result<(Vec<f64>, ForwardCache), PolicyError> {
        let l = &self.layout;
        let p = &self.params;
        let slots = Self::slot_inputs(observation);
        let jobs = slots.len();
        let mut pooled = vec![0.0; jobs * D];
        let mut stage1 = Vec::with_capacity(jobs);
        for (j, row) in slots.iter().enumerate() {
            let n = row.len();
            let mut x = vec![0.0; n * D];
            for (s, input) in row.iter().enumerate() {
                let embedded = match input {
                    SlotInput::Source => p[l.source..l.source + D].to_vec(),
                    SlotInput::Sink => p[l.sink..l.sink + D].to_vec(),
                    SlotInput::Features(f) => l.input.forward(p, f, 1),
                };
                let pe = positional(s);
                for c in 0..D {
                    x[s * D + c] = embedded[c] + pe[c];
                }
            }
            let (y, cache) = l.stage1.forward(p, x, n);
            for s in 0..n {
                for c in 0..D {
                    pooled[j * D + c] += y[s * D + c] / n as f64;
                }
            }
            stage1.push(cache);
        }
        let (mixed, stage2) = l.stage2.forward(p, pooled, jobs);
        let (mut logits, job_head) = l.job_head.forward(p, &mixed, jobs);
        let (noop, noop_head) = l.noop_head.forward(p, &mixed, jobs);
        logits.push(noop.iter().sum::<f64>() / jobs.max(1) as f64);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(PolicyError::NonFinite("logits"));
        }
        Ok((logits, ForwardCache { slots, stage1, stage2, job_head, noop_head }))
    }

    /// Accumulates into `grad` the gradient of `Σ dlogits[i] * logits[i]`.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &[f64], grad: &mut [f64]) {
        let l = &self.layout;
        let p = &self.params;
        let jobs = cache.slots.len();
        let mut dmixed = l.job_head.backward(p, grad, &cache.job_head, &dlogits[..jobs], jobs);
        let dnoop = vec![dlogits[jobs] / jobs.max(1) as f64; jobs];
        let part = l.noop_head.backward(p, grad, &cache.noop_head, &dnoop, jobs);
        dmixed.iter_mut().zip(part).for_each(|(a, b)| *a += b);
        let dpooled = l.stage2.backward(p, grad, &cache.stage2, &dmixed);
        for (j, row) in cache.slots.iter().enumerate() {
            let n = row.len();
            let mut dy = vec![0.0; n * D];
            for s in 0..n {
                for c in 0..D {
                    dy[s * D + c] = dpooled[j * D + c] / n as f64;
                }
            }
            let dx = l.stage1.backward(p, grad, &cache.stage1[j], &dy);
            for (s, input) in row.iter().enumerate() {
                let ds = &dx[s * D..(s + 1) * D];
                match input {
                    SlotInput::Source => grad[l.source..l.source + D].iter_mut().zip(ds).for_each(|(g, d)| *g += d),
                    SlotInput::Sink => grad[l.sink..l.sink + D].iter_mut().zip(ds).for_each(|(g, d)| *g += d),
                    SlotInput::Features(f) => {
                        l.input.backward(p, grad, f, ds, 1);
                    }
                }
            }
        }
    }

    /// Accumulates `coefficient * d log softmax(masked logits)[action]` into `grad`.
    pub fn grad_log_prob(
        &self,
        observation: &Observation,
        action: usize,
        coefficient: f64,
        grad: &mut [f64],
    ) -> Result<(), PolicyError> {
        if coefficient == 0.0 {
            return Ok(());
        }
        let (logits, cache) = self.forward_cached(observation)?;
        let probs = masked_softmax(&logits, &observation.mask, 1.0);
        let dlogits: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(i, &pr)| coefficient * (if i == action { 1.0 } else { 0.0 } - pr))
            .collect();
        self.backward(&cache, &dlogits, grad);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        let mut bytes = Vec::with_capacity(20 + 8 * self.params.len());
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        bytes.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for v in &self.params {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let mut file = fs::File::create(path)?;
        file.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PolicyNet, PolicyError> {
        let bytes = fs::read(path)?;
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(PolicyError::Corrupt("missing header".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(PolicyError::Corrupt(format!("unsupported version {version}")));
        }
        let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if body.len() != count * 8 {
            return Err(PolicyError::Corrupt(format!("expected {} bytes of parameters, found {}", count * 8, body.len())));
        }
        let params = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        PolicyNet::from_params(params)
    }
}

impl Policy for PolicyNet {
    fn logits(&self, observation: &Observation) -> Vec<f64> {
        match self.forward(observation) {
            Ok(logits) => logits,
            Err(e) => panic!("policy evaluation failed: {e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(param_count: usize, lr: f64) -> Adam {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; param_count], v: vec![0.0; param_count] }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One descent step on `params` along `grad`.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }

    /// Moment estimates and step count, for checkpointing.
    pub fn state(&self) -> (u64, &[f64], &[f64]) {
        (self.step, &self.m, &self.v)
    }

    pub fn from_state(lr: f64, step: u64, m: Vec<f64>, v: Vec<f64>) -> Adam {
        Adam { step, m, v, ..Adam::new(0, lr) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Action, Env, EnvConfig};
    use crate::instance::Instance;

    fn observation(seed: u64, jobs: usize, machines: usize, steps: usize) -> Observation {
        let inst = Instance::generate(jobs, machines, seed);
        let mut env = Env::new(&inst, EnvConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..steps {
            if env.is_done() {
                break;
            }
            let mask = env.action_mask().unwrap();
            let choices: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
            let pick = choices[rng.gen_range(0..choices.len())];
            env.apply(Action::from_index(pick, jobs)).unwrap();
        }
        env.observe()
    }

    #[test]
    fn shapes_and_size_agnostic() {
        let net = PolicyNet::init(1);
        assert_eq!(net.params().len(), PolicyNet::param_count());
        assert_eq!(net.forward(&observation(1, 1, 3, 0)).unwrap().len(), 2);
        assert_eq!(net.forward(&observation(2, 6, 6, 5)).unwrap().len(), 7);
        assert_eq!(net.forward(&observation(3, 20, 15, 40)).unwrap().len(), 21);
    }

    #[test]
    fn init_is_seeded() {
        let obs = observation(4, 5, 5, 3);
        assert_eq!(PolicyNet::init(7), PolicyNet::init(7));
        assert_ne!(PolicyNet::init(7).forward(&obs).unwrap(), PolicyNet::init(8).forward(&obs).unwrap());
    }

    #[test]
    fn permuting_jobs_permutes_logits() {
        let net = PolicyNet::init(3);
        let obs = observation(5, 6, 6, 7);
        let mut perm = obs.clone();
        let order = [3, 0, 5, 1, 4, 2];
        perm.jobs = order.iter().map(|&j| obs.jobs[j].clone()).collect();
        perm.mask = order.iter().map(|&j| obs.mask[j]).chain([obs.mask[6]]).collect();
        let a = net.forward(&obs).unwrap();
        let b = net.forward(&perm).unwrap();
        for (k, &j) in order.iter().enumerate() {
            assert!((b[k] - a[j]).abs() < 1e-12);
        }
        assert!((a[6] - b[6]).abs() < 1e-12);
    }

    #[test]
    fn zero_coefficient_gives_zero_gradient() {
        let net = PolicyNet::init(2);
        let obs = observation(6, 4, 4, 2);
        let mut g = vec![0.0; net.params().len()];
        net.grad_log_prob(&obs, 0, 0.0, &mut g).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut net = PolicyNet::init(9);
        let obs = observation(9, 4, 4, 4);
        let action = obs.mask.iter().position(|&m| m).unwrap();
        let mut g = vec![0.0; net.params().len()];
        net.grad_log_prob(&obs, action, 1.0, &mut g).unwrap();
        let objective = |net: &PolicyNet| {
            let logits = net.forward(&obs).unwrap();
            masked_softmax(&logits, &obs.mask, 1.0)[action].ln()
        };
        let h = 1e-5;
        for i in (0..g.len()).step_by(7) {
            let orig = net.params()[i];
            net.params_mut()[i] = orig + h;
            let up = objective(&net);
            net.params_mut()[i] = orig - h;
            let down = objective(&net);
            net.params_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
            assert!(err < 1e-4, "param {i}: analytic {} numeric {fd}", g[i]);
        }
    }

    #[test]
    fn gradients_add_over_observations() {
        let net = PolicyNet::init(4);
        let a = observation(10, 3, 3, 1);
        let b = observation(11, 3, 3, 2);
        let n = net.params().len();
        let (mut ga, mut gb, mut both) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let act = |o: &Observation| o.mask.iter().position(|&m| m).unwrap();
        net.grad_log_prob(&a, act(&a), 0.7, &mut ga).unwrap();
        net.grad_log_prob(&b, act(&b), -1.3, &mut gb).unwrap();
        net.grad_log_prob(&a, act(&a), 0.7, &mut both).unwrap();
        net.grad_log_prob(&b, act(&b), -1.3, &mut both).unwrap();
        for i in 0..n {
            assert!((ga[i] + gb[i] - both[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        let net = PolicyNet::init(5);
        net.save(&path).unwrap();
        let back = PolicyNet::load(&path).unwrap();
        assert_eq!(back, net);
        let obs = observation(12, 5, 4, 3);
        assert_eq!(back.forward(&obs).unwrap(), net.forward(&obs).unwrap());

        fs::write(&path, b"garbage").unwrap();
        assert!(matches!(PolicyNet::load(&path), Err(PolicyError::Corrupt(_))));
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        bytes.extend_from_slice(&3u64.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(PolicyNet::load(&path), Err(PolicyError::Corrupt(_))));
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut params = vec![1.0, -1.0];
        let mut opt = Adam::new(2, 0.1);
        opt.update(&mut params, &[2.0, -3.0]);
        assert!((params[0] - 0.9).abs() < 1e-9);
        assert!((params[1] + 0.9).abs() < 1e-9);
        assert_eq!(opt.steps(), 1);
    }
}
