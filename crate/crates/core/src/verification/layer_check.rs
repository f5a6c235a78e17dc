use std::fmt;
use std::str::FromStr;

use crate::graph::Graph;
use crate::layers::{
    gatedgcn_layer_forward, gcn_layer_forward, uniform_init, BatchNormParams, BnRunning,
    GatedGcnLayerParams, GcnLayerParams, LayerOptions, LayerParams, Linear, Mode,
};
use crate::rng::Rng;
use crate::tensor::{finite_diff_check_many, GradCheckReport, Tape, Tensor, TensorError, Var};

use super::random_graph;

/// The four layer variants under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerVariant {
    Gcn,
    NlmiGcn,
    GatedGcn,
    NlmiGatedGcn,
}

impl LayerVariant {
    pub const ALL: [LayerVariant; 4] = [
        LayerVariant::Gcn,
        LayerVariant::NlmiGcn,
        LayerVariant::GatedGcn,
        LayerVariant::NlmiGatedGcn,
    ];

    pub fn is_gated(self) -> bool {
        matches!(self, LayerVariant::GatedGcn | LayerVariant::NlmiGatedGcn)
    }

    pub fn is_nlmi(self) -> bool {
        matches!(self, LayerVariant::NlmiGcn | LayerVariant::NlmiGatedGcn)
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerVariant::Gcn => "gcn",
            LayerVariant::NlmiGcn => "nlmi-gcn",
            LayerVariant::GatedGcn => "gatedgcn",
            LayerVariant::NlmiGatedGcn => "nlmi-gatedgcn",
        }
    }

    /// Randomly initialised layer parameters of width `d` with every term active.
    pub fn random_params(self, d: usize, rng: &mut Rng) -> LayerParams<Tensor> {
        let sq = |rng: &mut Rng| uniform_init(&[d, d], d, rng);
        let fc = |rng: &mut Rng| self.is_nlmi().then(|| Linear::init(2 * d, d, rng));
        if self.is_gated() {
            let (a, b, c, f) = (sq(rng), sq(rng), sq(rng), sq(rng));
            let fc = fc(rng);
            let mut bn = BatchNormParams::new(d);
            // move BN away from its identity initialisation so its gradients are exercised
            for v in bn.gamma.data_mut() {
                *v = rng.uniform_range(0.5, 1.5);
            }
            for v in bn.beta.data_mut() {
                *v = rng.uniform_range(-0.5, 0.5);
            }
            LayerParams::GatedGcn(GatedGcnLayerParams { a, b, c, f, fc, bn })
        } else {
            let weight = sq(rng);
            let self_weight = Some(sq(rng));
            LayerParams::Gcn(GcnLayerParams {
                weight,
                self_weight,
                fc: fc(rng),
            })
        }
    }
}

impl fmt::Display for LayerVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayerVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LayerVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                format!("unknown variant `{s}` (expected gcn, nlmi-gcn, gatedgcn or nlmi-gatedgcn)")
            })
    }
}

/// Gradient check of one layer on one random instance.
#[derive(Debug, Clone)]
pub struct LayerGradCheck {
    pub variant: LayerVariant,
    /// Names of the checked tensors, aligned with `report.per_input`.
    pub names: Vec<String>,
    pub report: GradCheckReport,
}

impl LayerGradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.report.max_rel_error()
    }

    /// `(name, error)` of the worst tensor.
    pub fn worst(&self) -> (&str, f64) {
        let mut best = ("", 0.0);
        for (n, &e) in self.names.iter().zip(&self.report.per_input) {
            if e >= best.1 {
                best = (n.as_str(), e);
            }
        }
        best
    }
}

/// Checks the gradients of one layer against central differences.
///
/// The instance is a random undirected graph on `nodes` nodes with random
/// node (and, for gated layers, edge) inputs of width `d`. The scalar probed
/// is `sum(h' * R1) + sum(e' * R2)` with fixed random `R1`, `R2`, and every
/// parameter tensor plus the inputs `h` and `e` are checked. Gated layers run
/// batch norm in training mode so the batch-statistics path is covered.
pub fn layer_gradcheck(
    variant: LayerVariant,
    d: usize,
    nodes: usize,
    seed: u64,
    h: f64,
) -> Result<LayerGradCheck, TensorError> {
    let mut rng = Rng::new(seed);
    let graph: Graph = random_graph(nodes, 0.5, d, None, &mut rng);
    let topo = graph.topology();
    let e_count = graph.num_edges();
    let params = variant.random_params(d, &mut rng);
    let normal = |shape: &[usize], rng: &mut Rng| {
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = rng.normal();
        }
        t
    };
    let h0 = graph.node_features.clone();
    let e0 = normal(&[e_count, d], &mut rng);
    let r1 = normal(&[nodes, d], &mut rng);
    let r2 = normal(&[e_count, d], &mut rng);

    let mut names = vec!["h".to_string()];
    let mut inputs = vec![h0];
    if variant.is_gated() {
        names.push("e".into());
        inputs.push(e0);
    }
    let leading = inputs.len();
    for (name, t) in params_named(&params) {
        names.push(name);
        inputs.push(t);
    }
    let opts = LayerOptions::default();
    let running = BnRunning::new(d, 0.1);

    let f = |tape: &mut Tape, vars: &[Var]| -> Result<Var, TensorError> {
        let mut i = leading;
        let bound = params.map("layer", &mut |_, _| {
            let v = vars[i];
            i += 1;
            v
        });
        let r1 = tape.constant(r1.clone());
        let (h_out, e_out) = match &bound {
            LayerParams::Gcn(p) => (gcn_layer_forward(tape, vars[0], &topo, p, &opts)?, None),
            LayerParams::GatedGcn(p) => {
                let (h2, e2, _) = gatedgcn_layer_forward(
                    tape,
                    vars[0],
                    vars[1],
                    &topo,
                    p,
                    &running,
                    Mode::Train,
                    &opts,
                )?;
                (h2, Some(e2))
            }
        };
        let weighted = tape.mul(h_out, r1)?;
        let mut loss = tape.sum_all(weighted)?;
        if let Some(e_out) = e_out {
            let r2 = tape.constant(r2.clone());
            let we = tape.mul(e_out, r2)?;
            let se = tape.sum_all(we)?;
            loss = tape.add(loss, se)?;
        }
        Ok(loss)
    };
    let report = finite_diff_check_many(f, &inputs, h)?;
    Ok(LayerGradCheck {
        variant,
        names,
        report,
    })
}

fn params_named(p: &LayerParams<Tensor>) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    p.map("layer", &mut |name, t| {
        out.push((name.to_string(), t.clone()))
    });
    out
}
