//! Parameter trees.
//!
//! Every parameter container is generic over its leaf type. `T = Tensor`
//! holds values, `T = Var` holds the same tree bound onto a tape, and any
//! other `T` (gradients, optimizer moments) reuses the shape. `map` visits
//! leaves in a fixed order and hands out their dotted names, which double as
//! checkpoint keys.

use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};

pub type Visitor<'a, T, U> = &'a mut dyn FnMut(&str, &T) -> U;
pub type VisitorMut<'a, T> = &'a mut dyn FnMut(&str, &mut T);

/// Affine map `x W + b` with `W: [in, out]` and `b: [out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: T,
    pub bias: T,
}

impl<T> Linear<T> {
    pub fn map<U>(&self, prefix: &str, f: Visitor<T, U>) -> Linear<U> {
        Linear {
            weight: f(&format!("{prefix}.weight"), &self.weight),
            bias: f(&format!("{prefix}.bias"), &self.bias),
        }
    }

    pub fn for_each_mut(&mut self, prefix: &str, f: VisitorMut<T>) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}

impl Linear<Tensor> {
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        Linear {
            weight: uniform_init(&[fan_in, fan_out], fan_in, rng),
            bias: uniform_init(&[fan_out], fan_in, rng),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Entries uniform in `(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn uniform_init(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.uniform_range(-bound, bound);
    }
    t
}

/// Trainable scale and shift of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<T> {
    pub gamma: T,
    pub beta: T,
}

impl<T> BatchNormParams<T> {
    pub fn map<U>(&self, prefix: &str, f: Visitor<T, U>) -> BatchNormParams<U> {
        BatchNormParams {
            gamma: f(&format!("{prefix}.gamma"), &self.gamma),
            beta: f(&format!("{prefix}.beta"), &self.beta),
        }
    }

    pub fn for_each_mut(&mut self, prefix: &str, f: VisitorMut<T>) {
        f(&format!("{prefix}.gamma"), &mut self.gamma);
        f(&format!("{prefix}.beta"), &mut self.beta);
    }
}

impl BatchNormParams<Tensor> {
    pub fn new(width: usize) -> Self {
        BatchNormParams {
            gamma: Tensor::full(&[width], 1.0),
            beta: Tensor::zeros(&[width]),
        }
    }
}

/// Weights of a GCN layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayerParams<T> {
    /// Message weight `W`, `[d, d]`.
    pub weight: T,
    /// Self-term weight, present when the self term is active.
    pub self_weight: Option<T>,
    /// Interaction encoder, `[2d, d]` plus bias; present for NLMI layers.
    pub fc: Option<Linear<T>>,
}

impl<T> GcnLayerParams<T> {
    pub fn map<U>(&self, prefix: &str, f: Visitor<T, U>) -> GcnLayerParams<U> {
        GcnLayerParams {
            weight: f(&format!("{prefix}.W"), &self.weight),
            self_weight: self
                .self_weight
                .as_ref()
                .map(|a| f(&format!("{prefix}.A"), a)),
            fc: self
                .fc
                .as_ref()
                .map(|fc| fc.map(&format!("{prefix}.fc"), f)),
        }
    }

    pub fn for_each_mut(&mut self, prefix: &str, f: VisitorMut<T>) {
        f(&format!("{prefix}.W"), &mut self.weight);
        if let Some(a) = &mut self.self_weight {
            f(&format!("{prefix}.A"), a);
        }
        if let Some(fc) = &mut self.fc {
            fc.for_each_mut(&format!("{prefix}.fc"), f);
        }
    }
}

/// Weights of a GatedGCN layer.
///
/// `A` appears both in the gate pre-activation and as the self term of the
/// node update.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedGcnLayerParams<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub f: T,
    pub fc: Option<Linear<T>>,
    pub bn: BatchNormParams<T>,
}

impl<T> GatedGcnLayerParams<T> {
    pub fn map<U>(&self, prefix: &str, f: Visitor<T, U>) -> GatedGcnLayerParams<U> {
        GatedGcnLayerParams {
            a: f(&format!("{prefix}.A"), &self.a),
            b: f(&format!("{prefix}.B"), &self.b),
            c: f(&format!("{prefix}.C"), &self.c),
            f: f(&format!("{prefix}.F"), &self.f),
            fc: self
                .fc
                .as_ref()
                .map(|fc| fc.map(&format!("{prefix}.fc"), f)),
            bn: self.bn.map(&format!("{prefix}.bn"), f),
        }
    }

    pub fn for_each_mut(&mut self, prefix: &str, f: VisitorMut<T>) {
        f(&format!("{prefix}.A"), &mut self.a);
        f(&format!("{prefix}.B"), &mut self.b);
        f(&format!("{prefix}.C"), &mut self.c);
        f(&format!("{prefix}.F"), &mut self.f);
        if let Some(fc) = &mut self.fc {
            fc.for_each_mut(&format!("{prefix}.fc"), f);
        }
        self.bn.for_each_mut(&format!("{prefix}.bn"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams<T> {
    Gcn(GcnLayerParams<T>),
    GatedGcn(GatedGcnLayerParams<T>),
}

impl<T> LayerParams<T> {
    pub fn map<U>(&self, prefix: &str, f: Visitor<T, U>) -> LayerParams<U> {
        match self {
            LayerParams::Gcn(p) => LayerParams::Gcn(p.map(prefix, f)),
            LayerParams::GatedGcn(p) => LayerParams::GatedGcn(p.map(prefix, f)),
        }
    }

    pub fn for_each_mut(&mut self, prefix: &str, f: VisitorMut<T>) {
        match self {
            LayerParams::Gcn(p) => p.for_each_mut(prefix, f),
            LayerParams::GatedGcn(p) => p.for_each_mut(prefix, f),
        }
    }

    pub fn fc(&self) -> Option<&Linear<T>> {
        match self {
            LayerParams::Gcn(p) => p.fc.as_ref(),
            LayerParams::GatedGcn(p) => p.fc.as_ref(),
        }
    }

    pub fn fc_mut(&mut self) -> Option<&mut Linear<T>> {
        match self {
            LayerParams::Gcn(p) => p.fc.as_mut(),
            LayerParams::GatedGcn(p) => p.fc.as_mut(),
        }
    }
}

/// Stack of linear layers with ReLU between them (not after the last).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
}

impl<T> Mlp<T> {
    pub fn map<U>(&self, prefix: &str, f: Visitor<T, U>) -> Mlp<U> {
        Mlp {
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| l.map(&format!("{prefix}.{i}"), f))
                .collect(),
        }
    }

    pub fn for_each_mut(&mut self, prefix: &str, f: VisitorMut<T>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.for_each_mut(&format!("{prefix}.{i}"), f);
        }
    }
}

impl Mlp<Tensor> {
    pub fn init(widths: &[usize], rng: &mut Rng) -> Self {
        Mlp {
            layers: widths
                .windows(2)
                .map(|w| Linear::init(w[0], w[1], rng))
                .collect(),
        }
    }
}

/// All trainable tensors of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub input: Linear<T>,
    pub edge_input: Option<Linear<T>>,
    pub layers: Vec<LayerParams<T>>,
    pub head: Mlp<T>,
}

impl<T> ModelParams<T> {
    pub fn map<U>(&self, f: Visitor<T, U>) -> ModelParams<U> {
        ModelParams {
            input: self.input.map("input", f),
            edge_input: self.edge_input.as_ref().map(|l| l.map("edge_input", f)),
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| l.map(&format!("layers.{i}"), f))
                .collect(),
            head: self.head.map("head", f),
        }
    }

    pub fn for_each_mut(&mut self, f: VisitorMut<T>) {
        self.input.for_each_mut("input", f);
        if let Some(l) = &mut self.edge_input {
            l.for_each_mut("edge_input", f);
        }
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.for_each_mut(&format!("layers.{i}"), f);
        }
        self.head.for_each_mut("head", f);
    }

    /// `(name, leaf)` pairs in visiting order.
    pub fn named(&self) -> Vec<(String, T)>
    where
        T: Clone,
    {
        let mut out = Vec::new();
        self.map(&mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }
}

impl ModelParams<Tensor> {
    /// Registers every tensor as a gradient-tracking leaf.
    pub fn bind(&self, tape: &mut Tape) -> ModelParams<Var> {
        self.map(&mut |_, t| tape.param(t.clone()))
    }

    pub fn num_scalars(&self) -> usize {
        let mut n = 0;
        self.map(&mut |_, t| n += t.len());
        n
    }
}
