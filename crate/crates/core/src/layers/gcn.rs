use std::rc::Rc;

use super::{combine_terms, nlmi_encode, GcnLayerParams, LayerOptions};
use crate::graph::Topology;
use crate::tensor::{Tape, TensorError, Var};

/// Mean-normalised GCN messages.
///
/// Returns the per-edge messages `m_{v->u} = (1/|N(u)|) h_v W` as `[E, d]`
/// and their per-node sums `m_{N(u)}` as `[N, d]`. Nodes without incoming
/// edges get a zero row.
pub fn gcn_messages(
    tape: &mut Tape,
    h: Var,
    topo: &Topology,
    weight: Var,
) -> Result<(Var, Var), TensorError> {
    let wh = tape.matmul(h, weight)?;
    let at_src = tape.gather(wh, topo.src.clone())?;
    let inv_deg: Rc<[f64]> = topo
        .dst
        .iter()
        .map(|&u| 1.0 / topo.in_degree[u] as f64)
        .collect();
    let messages = tape.scale_rows(at_src, inv_deg)?;
    let totals = tape.segment_sum(
        messages,
        topo.dst.clone(),
        topo.order.clone(),
        topo.num_nodes,
    )?;
    Ok((messages, totals))
}

/// One GCN layer, with NLMI encoding when `params.fc` is present:
/// `h' = ReLU([h A] + [m_{N(u)}] + [enc_{N(u)}]) (+ h)`, each bracketed term
/// included according to `opts.terms`.
pub fn gcn_layer_forward(
    tape: &mut Tape,
    h: Var,
    topo: &Topology,
    params: &GcnLayerParams<Var>,
    opts: &LayerOptions,
) -> Result<Var, TensorError> {
    let (messages, totals) = gcn_messages(tape, h, topo, params.weight)?;
    let self_term = match (opts.terms.self_term, params.self_weight) {
        (true, Some(a)) => Some(tape.matmul(h, a)?),
        _ => None,
    };
    let msg_term = opts.terms.message.then_some(totals);
    let enc_term = match (opts.terms.encoding, &params.fc) {
        (true, Some(fc)) => Some(nlmi_encode(tape, messages, totals, topo, fc)?),
        _ => None,
    };
    let pre = combine_terms(tape, [self_term, msg_term, enc_term])?;
    let out = tape.relu(pre)?;
    if opts.residual {
        check_residual(tape, h, out)?;
        tape.add(out, h)
    } else {
        Ok(out)
    }
}

pub(crate) fn check_residual(tape: &Tape, input: Var, output: Var) -> Result<(), TensorError> {
    if tape.shape(input) != tape.shape(output) {
        return Err(TensorError::Shape {
            op: "residual",
            lhs: tape.shape(input).to_vec(),
            rhs: tape.shape(output).to_vec(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{both_directions, Topology};
    use crate::layers::{Linear, Terms};
    use crate::tensor::Tensor;

    #[test]
    fn star_centre_averages_leaves() {
        // centre 0, leaves 1..=4
        let pairs: Vec<(usize, usize)> = (1..=4).map(|l| (0, l)).collect();
        let topo = Topology::new(5, &both_directions(&pairs));
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::full(&[5, 3], 1.0));
        let w = tape.constant(Tensor::eye(3));
        let (_, totals) = gcn_messages(&mut tape, h, &topo, w).unwrap();
        assert_eq!(tape.value(totals).row(0), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn isolated_node_gets_zero() {
        let topo = Topology::new(3, &both_directions(&[(0, 1)]));
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::full(&[3, 2], 2.0));
        let w = tape.constant(Tensor::eye(2));
        let (_, totals) = gcn_messages(&mut tape, h, &topo, w).unwrap();
        assert_eq!(tape.value(totals).row(2), &[0.0, 0.0]);
    }

    #[test]
    fn two_node_swap() {
        let topo = Topology::new(2, &both_directions(&[(0, 1)]));
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::from_rows(&[vec![1.0, -2.0], vec![-3.0, 4.0]], 2).unwrap());
        let params = GcnLayerParams {
            weight: tape.constant(Tensor::eye(2)),
            self_weight: None,
            fc: Some(Linear {
                weight: tape.constant(Tensor::zeros(&[4, 2])),
                bias: tape.constant(Tensor::zeros(&[2])),
            }),
        };
        let opts = LayerOptions {
            terms: Terms {
                self_term: false,
                message: true,
                encoding: true,
            },
            residual: false,
            ..Default::default()
        };
        let out = gcn_layer_forward(&mut tape, h, &topo, &params, &opts).unwrap();
        // h'_0 = ReLU(h_1), h'_1 = ReLU(h_0)
        assert_eq!(tape.value(out).data(), &[0.0, 4.0, 1.0, 0.0]);
    }
}
