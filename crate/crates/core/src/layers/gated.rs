use super::gcn::check_residual;
use super::{
    batch_norm, combine_terms, nlmi_encode, BnBatchStats, BnRunning, GatedGcnLayerParams,
    LayerOptions, Mode,
};
use crate::graph::Topology;
use crate::tensor::{Tape, TensorError, Var};

/// Intermediate tensors of the edge-gated aggregation.
#[derive(Debug, Clone, Copy)]
pub struct GatedMessages {
    /// `e'_{vu} = h_u A + h_v B + e_{vu} C`, `[E, d]`.
    pub edge_pre: Var,
    /// `alpha_{vu} = sigmoid(e'_{vu}) / (sum_{w in N(u)} sigmoid(e'_{wu}) + eps)`, `[E, d]`.
    pub gates: Var,
    /// `m_{v->u} = alpha_{vu} * (h_v F)`, `[E, d]`.
    pub messages: Var,
    /// `m_{N(u)}`, `[N, d]`.
    pub totals: Var,
    /// `h A`, `[N, d]`, reused as the self term of the node update.
    pub self_proj: Var,
}

/// Edge-gated messages of a GatedGCN layer. For the edge `v -> u` the gate
/// pre-activation reads `A` on the receiving node and `B` on the sending one.
pub fn gated_messages(
    tape: &mut Tape,
    h: Var,
    e: Var,
    topo: &Topology,
    params: &GatedGcnLayerParams<Var>,
    eps: f64,
) -> Result<GatedMessages, TensorError> {
    assert!(eps > 0.0, "gate normalisation constant must be positive");
    let ah = tape.matmul(h, params.a)?;
    let bh = tape.matmul(h, params.b)?;
    let ce = tape.matmul(e, params.c)?;
    let a_dst = tape.gather(ah, topo.dst.clone())?;
    let b_src = tape.gather(bh, topo.src.clone())?;
    let node_part = tape.add(a_dst, b_src)?;
    let edge_pre = tape.add(node_part, ce)?;

    let sig = tape.sigmoid(edge_pre)?;
    let denom = tape.segment_sum(sig, topo.dst.clone(), topo.order.clone(), topo.num_nodes)?;
    let denom_at_dst = tape.gather(denom, topo.dst.clone())?;
    let denom_at_dst = tape.add_scalar(denom_at_dst, eps)?;
    let gates = tape.div(sig, denom_at_dst)?;

    let fh = tape.matmul(h, params.f)?;
    let f_src = tape.gather(fh, topo.src.clone())?;
    let messages = tape.mul(gates, f_src)?;
    let totals = tape.segment_sum(
        messages,
        topo.dst.clone(),
        topo.order.clone(),
        topo.num_nodes,
    )?;
    Ok(GatedMessages {
        edge_pre,
        gates,
        messages,
        totals,
        self_proj: ah,
    })
}

/// One GatedGCN layer, with NLMI encoding when `params.fc` is present.
///
/// Node update: `h' = ReLU(BN([h A] + [m_{N(u)}] + [enc_{N(u)}])) (+ h)`.
/// Edge update: `e' = ReLU(e'_{vu}) (+ e)`. The residual terms follow
/// `opts.residual`. Returns the batch statistics in training mode.
#[allow(clippy::too_many_arguments)]
pub fn gatedgcn_layer_forward(
    tape: &mut Tape,
    h: Var,
    e: Var,
    topo: &Topology,
    params: &GatedGcnLayerParams<Var>,
    running: &BnRunning,
    mode: Mode,
    opts: &LayerOptions,
) -> Result<(Var, Var, Option<BnBatchStats>), TensorError> {
    let g = gated_messages(tape, h, e, topo, params, opts.gate_eps)?;
    let self_term = opts.terms.self_term.then_some(g.self_proj);
    let msg_term = opts.terms.message.then_some(g.totals);
    let enc_term = match (opts.terms.encoding, &params.fc) {
        (true, Some(fc)) => Some(nlmi_encode(tape, g.messages, g.totals, topo, fc)?),
        _ => None,
    };
    let pre = combine_terms(tape, [self_term, msg_term, enc_term])?;
    let (normed, stats) = batch_norm(tape, pre, &params.bn, running, mode)?;
    let h_act = tape.relu(normed)?;
    let e_act = tape.relu(g.edge_pre)?;
    if opts.residual {
        check_residual(tape, h, h_act)?;
        check_residual(tape, e, e_act)?;
        let h_out = tape.add(h_act, h)?;
        let e_out = tape.add(e_act, e)?;
        Ok((h_out, e_out, stats))
    } else {
        Ok((h_act, e_act, stats))
    }
}
