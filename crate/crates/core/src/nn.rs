//! Parameter storage, dense layers, Adam and learning-rate schedules.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::checkpoint::NamedTensors;
use crate::error::{Error, Result};

/// Index of a tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Ordered, named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(t);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Places every tensor on `g`; those whose id satisfies `trainable` become
    /// gradient-tracked leaves, the rest constants.
    pub fn bind<'g>(&self, g: &'g Graph, trainable: impl Fn(ParamId) -> bool) -> Vec<Var<'g>> {
        self.values
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if trainable(ParamId(i)) {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect()
    }

    pub fn to_named(&self) -> NamedTensors {
        self.iter().map(|(n, t)| (n.to_string(), t.clone())).collect()
    }

    /// Overwrites every parameter from `named`, checking names and shapes.
    pub fn load_named(&mut self, named: &NamedTensors) -> Result<()> {
        if named.len() != self.values.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                self.values.len(),
                named.len()
            )));
        }
        for (name, value) in self.names.iter().zip(self.values.iter_mut()) {
            let t = crate::checkpoint::take_shaped(named, name, value.shape())?;
            *value = t;
        }
        Ok(())
    }

    /// `α·a + (1−α)·b` for every tensor; endpoints return exact copies.
    pub fn lerp(a: &ParamSet, b: &ParamSet, alpha: f64) -> Result<ParamSet> {
        if a.names != b.names {
            return Err(Error::Shape("parameter sets have different layouts".into()));
        }
        let values = a
            .values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| Tensor::lerp(x, y, alpha))
            .collect::<Result<_>>()?;
        Ok(ParamSet {
            names: a.names.clone(),
            values,
        })
    }
}

/// Dense layer `y = x·W + b` with `W: [in, out]`, `b: [out]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Weights `U(±bound)`, bias zero.
    pub fn new<R: Rng>(ps: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, bound: f64, rng: &mut R) -> Self {
        let w = uniform(&[fan_in, fan_out], bound, rng);
        Self::from_tensors(ps, name, w, Tensor::zeros(&[fan_out]))
    }

    pub fn from_tensors(ps: &mut ParamSet, name: &str, w: Tensor, b: Tensor) -> Self {
        let (fan_in, fan_out) = (w.shape()[0], w.shape()[1]);
        assert_eq!(b.shape(), [fan_out]);
        Self {
            weight: ps.add(format!("{name}.weight"), w),
            bias: ps.add(format!("{name}.bias"), b),
            fan_in,
            fan_out,
        }
    }

    pub fn forward<'g>(&self, vars: &[Var<'g>], x: Var<'g>) -> Var<'g> {
        x.matmul(vars[self.weight.0]) + vars[self.bias.0]
    }
}

pub fn uniform<R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| if bound > 0.0 { rng.gen_range(-bound..bound) } else { 0.0 })
        .collect();
    Tensor::new(shape, data).expect("shape")
}

pub const LEAKY_SLOPE: f64 = 0.2;

/// Leaky-ReLU hidden layers, linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// Fan-in scaled init `U(±1/√fan_in)`.
    pub fn new<R: Rng>(ps: &mut ParamSet, name: &str, dims: &[usize], rng: &mut R) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| {
                let bound = 1.0 / (d[0] as f64).sqrt();
                Linear::new(ps, &format!("{name}.{i}"), d[0], d[1], bound, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn forward<'g>(&self, vars: &[Var<'g>], mut x: Var<'g>) -> Var<'g> {
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(vars, x);
            if i < last {
                x = x.leaky_relu(LEAKY_SLOPE);
            }
        }
        x
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|l| [l.weight, l.bias])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decay {
    Linear,
    Constant,
}

/// Learning rate over iterations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub initial_rate: f64,
    pub final_rate: f64,
    pub total_iterations: usize,
    pub decay: Decay,
}

impl Schedule {
    pub fn constant(rate: f64, total_iterations: usize) -> Self {
        Self {
            initial_rate: rate,
            final_rate: rate,
            total_iterations,
            decay: Decay::Constant,
        }
    }

    pub fn linear(initial_rate: f64, final_rate: f64, total_iterations: usize) -> Self {
        Self {
            initial_rate,
            final_rate,
            total_iterations,
            decay: Decay::Linear,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial_rate > 0.0 && self.final_rate > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.final_rate > self.initial_rate {
            return Err(Error::Config("final_rate must not exceed initial_rate".into()));
        }
        Ok(())
    }

    /// Rate at 0-based iteration `it`; linear decay reaches `final_rate` at
    /// the last iteration.
    pub fn rate(&self, it: usize) -> f64 {
        match self.decay {
            Decay::Constant => self.initial_rate,
            Decay::Linear => {
                if self.total_iterations <= 1 {
                    return self.initial_rate;
                }
                let t = (it.min(self.total_iterations - 1)) as f64 / (self.total_iterations - 1) as f64;
                self.initial_rate + (self.final_rate - self.initial_rate) * t
            }
        }
    }
}

/// Adam over a fixed subset of a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    ids: Vec<ParamId>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(ps: &ParamSet, ids: Vec<ParamId>) -> Self {
        let m = ids.iter().map(|&i| vec![0.0; ps.get(i).numel()]).collect::<Vec<_>>();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            v: m.clone(),
            m,
            ids,
            t: 0,
        }
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    /// One update with `grads[k]` belonging to `ids()[k]`.
    pub fn step(&mut self, ps: &mut ParamSet, grads: &[Tensor], lr: f64) {
        assert_eq!(grads.len(), self.ids.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = lr * bc2.sqrt() / bc1;
        let eps = self.eps * bc2.sqrt();
        for (k, &id) in self.ids.iter().enumerate() {
            let g = grads[k].data();
            let p = ps.get_mut(id).data_mut();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= step * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}
