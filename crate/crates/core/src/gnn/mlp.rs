//! Feature-only baseline: a 3-layer perceptron over node features, used to
//! gauge how much of a dataset's signal lives in the graph structure.

use std::rc::Rc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{GerkError, Result};
use crate::gnn::metrics::micro_f1;
use crate::gnn::model::argmax_rows;
use crate::gnn::tape::{grad_of, Tape};
use crate::graph::Graph;

#[derive(Debug, Clone)]
pub struct MlpModel {
    pub weights: [Array2<f64>; 3],
    pub biases: [Array2<f64>; 3],
    pub loss_trace: Vec<f64>,
    pub seed: u64,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit))
}

/// Trains the baseline on the features and labels of `g_train` with
/// full-batch gradient descent; graph structure is never consulted.
pub fn train_mlp(g_train: &Graph, hidden: usize, epochs: usize, lr: f64, seed: u64) -> Result<MlpModel> {
    if g_train.node_count() == 0 {
        return Err(GerkError::InvalidRequest("cannot train on an empty graph".into()));
    }
    if hidden == 0 || epochs == 0 {
        return Err(GerkError::InvalidConfig("hidden and epochs must be at least 1".into()));
    }
    let d = g_train.feature_dim();
    let c = g_train.num_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = MlpModel {
        weights: [
            glorot(&mut rng, d, hidden),
            glorot(&mut rng, hidden, hidden),
            glorot(&mut rng, hidden, c),
        ],
        biases: [
            Array2::zeros((1, hidden)),
            Array2::zeros((1, hidden)),
            Array2::zeros((1, c)),
        ],
        loss_trace: Vec::with_capacity(epochs),
        seed,
    };

    let labels = Rc::new(g_train.labels().to_vec());
    let rows = Rc::new((0..g_train.node_count()).collect::<Vec<_>>());
    for _ in 0..epochs {
        let mut tape = Tape::new();
        let x = tape.leaf(g_train.features().clone());
        let mut param_ids = Vec::with_capacity(6);
        let mut h = x;
        for layer in 0..3 {
            let w = tape.leaf(model.weights[layer].clone());
            let b = tape.leaf(model.biases[layer].clone());
            param_ids.push(w);
            param_ids.push(b);
            let z = tape.matmul(h, w);
            let zb = tape.add_row_broadcast(z, b);
            h = if layer < 2 { tape.relu(zb) } else { zb };
        }
        let loss = tape.mean_cross_entropy(h, labels.clone(), rows.clone());
        model.loss_trace.push(tape.value(loss)[[0, 0]]);
        let mut grads = tape.backward(loss);
        for layer in 0..3 {
            let gw = grad_of(&mut grads, param_ids[2 * layer], model.weights[layer].dim());
            let gb = grad_of(&mut grads, param_ids[2 * layer + 1], model.biases[layer].dim());
            model.weights[layer].zip_mut_with(&gw, |t, &g| *t -= lr * g);
            model.biases[layer].zip_mut_with(&gb, |t, &g| *t -= lr * g);
        }
    }
    Ok(model)
}

impl MlpModel {
    /// Class logits for the given feature rows.
    pub fn logits(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.weights[0].nrows() {
            return Err(GerkError::DimensionMismatch(format!(
                "features are {}-dimensional, model expects {}",
                x.ncols(),
                self.weights[0].nrows()
            )));
        }
        let mut h = x.clone();
        for layer in 0..3 {
            h = h.dot(&self.weights[layer]) + &self.biases[layer].row(0);
            if layer < 2 {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        Ok(h)
    }

    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(x)?))
    }

    /// Micro-F1 of the baseline on `nodes` of `g`, features only.
    pub fn f1(&self, g: &Graph, nodes: &[usize]) -> Result<f64> {
        let mut x = Array2::zeros((nodes.len(), g.feature_dim()));
        let mut truth = Vec::with_capacity(nodes.len());
        for (i, &u) in nodes.iter().enumerate() {
            x.row_mut(i).assign(&g.features().row(u));
            truth.push(g.label(u));
        }
        micro_f1(&self.predict(&x)?, &truth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_sbm, split_train_test, LabelRule, SbmSpec};

    #[test]
    fn mlp_learns_feature_separable_labels() {
        // labels decided purely by feature centroids: the baseline must fit
        let spec = SbmSpec {
            blocks: vec![60, 60],
            p_in: 0.05,
            p_out: 0.05,
            feature_dim: 4,
            label_rule: LabelRule::NearestCentroid,
            feature_noise: 0.5,
            centroid_scale: 2.0,
            seed: 5,
        };
        let g = generate_sbm(&spec).unwrap();
        let split = split_train_test(&g, 0.8, 1).unwrap();
        let (train_graph, _) = g.induced_subgraph(&split.train_nodes).unwrap();
        let model = train_mlp(&train_graph, 16, 150, 0.1, 7).unwrap();
        let f1 = model.f1(&g, &split.test_nodes).unwrap();
        assert!(f1 >= 0.9, "feature-separable f1 {f1}");
        assert!(model.loss_trace.last().unwrap() <= model.loss_trace.first().unwrap());
    }

    #[test]
    fn mlp_near_chance_without_feature_signal() {
        // identical feature distribution across blocks, labels by block:
        // nothing to learn from features alone
        let spec = SbmSpec {
            blocks: vec![50, 50, 50, 50],
            p_in: 0.1,
            p_out: 0.01,
            feature_dim: 4,
            label_rule: LabelRule::BlockId,
            feature_noise: 1.0,
            centroid_scale: 0.0,
            seed: 6,
        };
        let g = generate_sbm(&spec).unwrap();
        let split = split_train_test(&g, 0.8, 2).unwrap();
        let (train_graph, _) = g.induced_subgraph(&split.train_nodes).unwrap();
        let model = train_mlp(&train_graph, 16, 100, 0.1, 8).unwrap();
        let f1 = model.f1(&g, &split.test_nodes).unwrap();
        assert!(f1 < 0.25 + 0.15, "no-signal f1 {f1} too far above chance");
    }

    #[test]
    fn mlp_deterministic() {
        let spec = SbmSpec {
            blocks: vec![20, 20],
            p_in: 0.2,
            p_out: 0.02,
            feature_dim: 3,
            label_rule: LabelRule::BlockId,
            feature_noise: 1.0,
            centroid_scale: 1.0,
            seed: 9,
        };
        let g = generate_sbm(&spec).unwrap();
        let a = train_mlp(&g, 8, 50, 0.1, 3).unwrap();
        let b = train_mlp(&g, 8, 50, 0.1, 3).unwrap();
        assert_eq!(a.weights[2], b.weights[2]);
        assert_eq!(a.loss_trace, b.loss_trace);
    }
}
