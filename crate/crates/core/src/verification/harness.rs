use crate::graph::Graph;
use crate::layers::{LayerParams, Linear, Mode, Model, ModelError};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor};

/// Final node and edge embeddings of `model` on `graph`, evaluation mode.
pub fn embeddings(model: &Model, graph: &Graph) -> Result<(Tensor, Option<Tensor>), ModelError> {
    let batch = model.prepare(std::slice::from_ref(graph))?;
    let mut tape = Tape::new();
    let params = model.params.map(&mut |_, t| tape.constant(t.clone()));
    let out = model.forward_with(&mut tape, &batch, &params, Mode::Eval)?;
    let h = tape.value(out.embeddings.h).clone();
    let e = out.embeddings.e.map(|e| tape.value(e).clone());
    Ok((h, e))
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "compared tensors differ in shape");
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Applies `n_perms` random node relabellings and returns the largest
/// `|P f(G) - f(P G)|` over node and edge embeddings.
///
/// Relabelling keeps edge storage positions, so edge embeddings are
/// compared row for row.
pub fn equivariance_harness(
    model: &Model,
    graph: &Graph,
    n_perms: usize,
    rng: &mut Rng,
) -> Result<f64, ModelError> {
    let (h, e) = embeddings(model, graph)?;
    let mut worst = 0.0f64;
    for _ in 0..n_perms {
        let perm = rng.permutation(graph.num_nodes);
        let (hp, ep) = embeddings(model, &graph.permute_nodes(&perm))?;
        // row perm[u] of the permuted output belongs to node u
        worst = worst.max(max_abs_diff(&hp.select_rows(&perm), &h));
        if let (Some(e), Some(ep)) = (&e, &ep) {
            worst = worst.max(max_abs_diff(ep, e));
        }
    }
    Ok(worst)
}

/// Shuffles the edge storage order `n_shuffles` times and returns the
/// largest change in node embeddings and (re-aligned) edge embeddings.
pub fn neighbour_order_harness(
    model: &Model,
    graph: &Graph,
    n_shuffles: usize,
    rng: &mut Rng,
) -> Result<f64, ModelError> {
    let (h, e) = embeddings(model, graph)?;
    let mut worst = 0.0f64;
    for _ in 0..n_shuffles {
        let (shuffled, order) = graph.shuffle_edges(rng);
        let (hs, es) = embeddings(model, &shuffled)?;
        worst = worst.max(max_abs_diff(&hs, &h));
        if let (Some(e), Some(es)) = (&e, &es) {
            // shuffled edge i is original edge order[i]
            worst = worst.max(max_abs_diff(es, &e.select_rows(&order)));
        }
    }
    Ok(worst)
}

/// The NLMI variant of `base` with every encoder set to zero and all other
/// parameters and statistics copied.
pub fn with_zero_encoders(base: &Model) -> Model {
    let mut m = base.clone();
    m.config.nlmi = true;
    m.config.terms.encoding = true;
    let d = m.config.hidden;
    for layer in &mut m.params.layers {
        let fc = Some(Linear::zeros(2 * d, d));
        match layer {
            LayerParams::Gcn(p) => p.fc = fc,
            LayerParams::GatedGcn(p) => p.fc = fc,
        }
    }
    m
}

/// Largest prediction difference between `base` and `nlmi` over `graphs`,
/// one graph at a time, evaluation mode. Zero-encoder NLMI models must give
/// exactly 0.
pub fn reduction_harness(base: &Model, nlmi: &Model, graphs: &[Graph]) -> Result<f64, ModelError> {
    let mut worst = 0.0f64;
    for g in graphs {
        let batch = base.prepare(std::slice::from_ref(g))?;
        let a = base.predict(&batch)?;
        let b = nlmi.predict(&batch)?;
        worst = worst.max(max_abs_diff(&a, &b));
        let (ha, ea) = embeddings(base, g)?;
        let (hb, eb) = embeddings(nlmi, g)?;
        worst = worst.max(max_abs_diff(&ha, &hb));
        if let (Some(ea), Some(eb)) = (&ea, &eb) {
            worst = worst.max(max_abs_diff(ea, eb));
        }
    }
    Ok(worst)
}

/// Largest difference between predicting `graphs` as one batch and
/// predicting each graph alone, evaluation mode.
pub fn batch_consistency(model: &Model, graphs: &[Graph]) -> Result<f64, ModelError> {
    let joint = model.predict(&model.prepare(graphs)?)?;
    let mut rows = Vec::new();
    for g in graphs {
        rows.extend_from_slice(
            model
                .predict(&model.prepare(std::slice::from_ref(g))?)?
                .data(),
        );
    }
    let single = Tensor::new(joint.shape().to_vec(), rows).expect("same row count");
    Ok(max_abs_diff(&joint, &single))
}
