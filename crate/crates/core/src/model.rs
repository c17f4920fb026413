//! Two-layer ReLU network with an explicit embedding feature `f` and a
//! bias-free linear classifier, so that logits are exactly `z_i = w_iᵀ f`.
//!
//! Forward and backward passes are written out by hand; there is no autodiff.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, FblError, Result};

/// Network parameters.
///
/// `input -> hidden (ReLU) -> feature (ReLU) -> logits`, with
/// `hidden_w: D_in×H`, `embed_w: H×D` and `classifier: D×C`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub hidden_w: Array2<f64>,
    pub hidden_b: Array1<f64>,
    pub embed_w: Array2<f64>,
    pub embed_b: Array1<f64>,
    pub classifier: Array2<f64>,
}

/// Gradients share the parameter layout.
pub type Gradients = Model;

const PARAM_NAMES: [&str; 5] = ["hidden.weight", "hidden.bias", "embed.weight", "embed.bias", "classifier.weight"];

impl Model {
    pub fn zeros(input_dim: usize, hidden: usize, embed: usize, classes: usize) -> Self {
        Self {
            hidden_w: Array2::zeros((input_dim, hidden)),
            hidden_b: Array1::zeros(hidden),
            embed_w: Array2::zeros((hidden, embed)),
            embed_b: Array1::zeros(embed),
            classifier: Array2::zeros((embed, classes)),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(input_dim: usize, hidden: usize, embed: usize, classes: usize, seed: u64) -> Self {
        let mut rng = crate::data::stream(seed, 3);
        let mut glorot = |rows: usize, cols: usize| {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-a..a))
        };
        let hidden_w = glorot(input_dim, hidden);
        let embed_w = glorot(hidden, embed);
        let classifier = glorot(embed, classes);
        Self {
            hidden_w,
            hidden_b: Array1::zeros(hidden),
            embed_w,
            embed_b: Array1::zeros(embed),
            classifier,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden_w.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_w.ncols()
    }

    pub fn embed_dim(&self) -> usize {
        self.classifier.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.ncols()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.hidden_dim(), self.embed_dim(), self.num_classes())
    }

    /// `‖w_j‖` for each classifier column.
    pub fn classifier_norms(&self) -> Vec<f64> {
        self.classifier
            .columns()
            .into_iter()
            .map(|c| c.dot(&c).sqrt())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    /// Flat views of every parameter tensor, in checkpoint order.
    pub fn params(&self) -> [&[f64]; 5] {
        [
            self.hidden_w.as_slice().expect("standard layout"),
            self.hidden_b.as_slice().expect("standard layout"),
            self.embed_w.as_slice().expect("standard layout"),
            self.embed_b.as_slice().expect("standard layout"),
            self.classifier.as_slice().expect("standard layout"),
        ]
    }

    pub fn params_mut(&mut self) -> [&mut [f64]; 5] {
        [
            self.hidden_w.as_slice_mut().expect("standard layout"),
            self.hidden_b.as_slice_mut().expect("standard layout"),
            self.embed_w.as_slice_mut().expect("standard layout"),
            self.embed_b.as_slice_mut().expect("standard layout"),
            self.classifier.as_slice_mut().expect("standard layout"),
        ]
    }

    fn shapes(&self) -> [Vec<usize>; 5] {
        [
            self.hidden_w.shape().to_vec(),
            self.hidden_b.shape().to_vec(),
            self.embed_w.shape().to_vec(),
            self.embed_b.shape().to_vec(),
            self.classifier.shape().to_vec(),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let params = PARAM_NAMES
            .iter()
            .zip(self.shapes())
            .zip(self.params())
            .map(|((name, shape), data)| NamedTensor {
                name: name.to_string(),
                shape,
                data: data.to_vec(),
            })
            .collect();
        Checkpoint { format: CHECKPOINT_FORMAT.to_string(), params }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let bad = |detail: String| FblError::Format { what: "model checkpoint", detail };
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(bad(format!("unknown format `{}`", ckpt.format)));
        }
        let get = |name: &str, rank: usize| -> Result<&NamedTensor> {
            let t = ckpt
                .params
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| bad(format!("missing tensor `{name}`")))?;
            if t.shape.len() != rank || t.shape.iter().product::<usize>() != t.data.len() {
                return Err(bad(format!("tensor `{name}` has inconsistent shape {:?}", t.shape)));
            }
            Ok(t)
        };
        let mat = |t: &NamedTensor| {
            Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data.clone()).map_err(|e| bad(e.to_string()))
        };
        let vec = |t: &NamedTensor| Array1::from(t.data.clone());
        let model = Self {
            hidden_w: mat(get(PARAM_NAMES[0], 2)?)?,
            hidden_b: vec(get(PARAM_NAMES[1], 1)?),
            embed_w: mat(get(PARAM_NAMES[2], 2)?)?,
            embed_b: vec(get(PARAM_NAMES[3], 1)?),
            classifier: mat(get(PARAM_NAMES[4], 2)?)?,
        };
        let (h, d) = (model.hidden_dim(), model.embed_dim());
        if model.hidden_b.len() != h || model.embed_w.nrows() != h || model.embed_w.ncols() != d || model.embed_b.len() != d {
            return Err(bad("layer shapes do not chain".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&self.to_checkpoint())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_checkpoint(&ckpt)
    }
}

pub const CHECKPOINT_FORMAT: &str = "fbl-model-v1";

/// JSON checkpoint: named row-major tensors with explicit shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub params: Vec<NamedTensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Activations cached by [`forward`] for the backward pass and diagnostics.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Array2<f64>,
    pub hidden_pre: Array2<f64>,
    pub hidden: Array2<f64>,
    pub feature_pre: Array2<f64>,
    pub features: Array2<f64>,
    pub feature_norms: Vec<f64>,
    pub logits: Array2<f64>,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.input.nrows()
    }
}

fn relu(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(|v| v.max(0.0))
}

pub fn forward(model: &Model, batch_x: ArrayView2<'_, f64>) -> Result<ForwardTrace> {
    if batch_x.ncols() != model.input_dim() {
        return Err(shape_err(format!("{} input columns", model.input_dim()), batch_x.ncols()));
    }
    let hidden_pre = batch_x.dot(&model.hidden_w) + &model.hidden_b;
    let hidden = relu(&hidden_pre);
    let feature_pre = hidden.dot(&model.embed_w) + &model.embed_b;
    let features = relu(&feature_pre);
    let feature_norms = features.rows().into_iter().map(|f| f.dot(&f).sqrt()).collect();
    let logits = features.dot(&model.classifier);
    Ok(ForwardTrace {
        input: batch_x.to_owned(),
        hidden_pre,
        hidden,
        feature_pre,
        features,
        feature_norms,
        logits,
    })
}

/// Chain rule from logit and feature gradients back to every parameter.
///
/// `dl_dz` and `dl_df_extra` are gradients of the batch-mean loss, so no
/// further averaging happens here. The feature receives
/// `dl_dz · Wᵀ + dl_df_extra`; `None` stands for an all-zero extra term.
pub fn backward(
    model: &Model,
    trace: &ForwardTrace,
    dl_dz: &Array2<f64>,
    dl_df_extra: Option<&Array2<f64>>,
) -> Result<Gradients> {
    let b = trace.batch_size();
    if dl_dz.dim() != (b, model.num_classes()) {
        return Err(shape_err(format!("dL/dz {}x{}", b, model.num_classes()), format!("{:?}", dl_dz.dim())));
    }
    if let Some(extra) = dl_df_extra {
        if extra.dim() != (b, model.embed_dim()) {
            return Err(shape_err(format!("dL/df {}x{}", b, model.embed_dim()), format!("{:?}", extra.dim())));
        }
    }

    let classifier = trace.features.t().dot(dl_dz);

    let mut d_feature = dl_dz.dot(&model.classifier.t());
    if let Some(extra) = dl_df_extra {
        d_feature += extra;
    }
    d_feature.zip_mut_with(&trace.feature_pre, |g, &pre| {
        if pre <= 0.0 {
            *g = 0.0;
        }
    });
    let embed_w = trace.hidden.t().dot(&d_feature);
    let embed_b = d_feature.sum_axis(Axis(0));

    let mut d_hidden = d_feature.dot(&model.embed_w.t());
    d_hidden.zip_mut_with(&trace.hidden_pre, |g, &pre| {
        if pre <= 0.0 {
            *g = 0.0;
        }
    });
    let hidden_w = trace.input.t().dot(&d_hidden);
    let hidden_b = d_hidden.sum_axis(Axis(0));

    Ok(Gradients { hidden_w, hidden_b, embed_w, embed_b, classifier })
}

/// Heavy-ball momentum state.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub lr: f64,
    pub momentum: f64,
    pub velocity: Model,
}

impl OptimState {
    pub fn new(model: &Model, lr: f64, momentum: f64) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(FblError::InvalidConfig(format!("lr must be finite and >= 0, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(FblError::InvalidConfig(format!("momentum must be in [0, 1), got {momentum}")));
        }
        Ok(Self { lr, momentum, velocity: model.zeros_like() })
    }
}

/// `v <- momentum * v + g; θ <- θ - lr * v`.
pub fn sgd_step(model: &mut Model, grads: &Gradients, state: &mut OptimState) {
    let (lr, mu) = (state.lr, state.momentum);
    for ((theta, v), g) in model
        .params_mut()
        .into_iter()
        .zip(state.velocity.params_mut())
        .zip(grads.params())
    {
        debug_assert_eq!(theta.len(), g.len());
        for ((t, v), g) in theta.iter_mut().zip(v.iter_mut()).zip(g) {
            *v = mu * *v + g;
            *t -= lr * *v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_input_gives_zero_features() {
        let mut m = Model::init(3, 4, 2, 3, 7);
        m.hidden_b.fill(0.0);
        m.embed_b.fill(0.0);
        let tr = forward(&m, Array2::zeros((2, 3)).view()).unwrap();
        assert!(tr.features.iter().all(|&v| v == 0.0));
        assert!(tr.logits.iter().all(|&v| v == 0.0));
        assert_eq!(tr.feature_norms, vec![0.0, 0.0]);
    }

    #[test]
    fn hand_evaluated_logits() {
        // Identity-ish network so that f = (3, 4).
        let mut m = Model::zeros(2, 2, 2, 2);
        m.hidden_w = array![[1.0, 0.0], [0.0, 1.0]];
        m.embed_w = array![[1.0, 0.0], [0.0, 1.0]];
        m.classifier = array![[1.0, 0.0], [0.0, 1.0]];
        let tr = forward(&m, array![[3.0, 4.0]].view()).unwrap();
        assert_eq!(tr.logits, array![[3.0, 4.0]]);
        assert_eq!(tr.feature_norms, vec![5.0]);
    }

    #[test]
    fn logits_are_classifier_dot_features() {
        let m = Model::init(5, 8, 4, 3, 1);
        let x = Array2::from_shape_fn((6, 5), |(i, j)| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let tr = forward(&m, x.view()).unwrap();
        for s in 0..6 {
            let f = tr.features.row(s);
            assert!((f.dot(&f).sqrt() - tr.feature_norms[s]).abs() <= 1e-15 * tr.feature_norms[s].max(1.0));
            for i in 0..3 {
                let z = f.dot(&m.classifier.column(i));
                assert!((z - tr.logits[[s, i]]).abs() <= 1e-12 * z.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let m = Model::init(5, 8, 4, 3, 1);
        assert!(matches!(forward(&m, Array2::zeros((2, 4)).view()), Err(FblError::ShapeMismatch { .. })));
        let tr = forward(&m, Array2::zeros((2, 5)).view()).unwrap();
        assert!(backward(&m, &tr, &Array2::zeros((2, 2)), None).is_err());
        assert!(backward(&m, &tr, &Array2::zeros((2, 3)), Some(&Array2::zeros((3, 4)))).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let m = Model::init(3, 4, 3, 3, 2);
        let x = array![[0.5, -1.0, 2.0], [1.5, 0.2, -0.3]];
        let tr = forward(&m, x.view()).unwrap();
        let g = backward(&m, &tr, &Array2::zeros((2, 3)), Some(&Array2::zeros((2, 3)))).unwrap();
        assert!(g.params().iter().all(|p| p.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn plain_sgd_and_zero_gradient() {
        let mut m = Model::init(3, 4, 3, 3, 2);
        let before = m.clone();
        let mut g = m.zeros_like();
        let mut st = OptimState::new(&m, 0.1, 0.9).unwrap();
        sgd_step(&mut m, &g, &mut st);
        assert_eq!(m, before);

        g.classifier.fill(2.0);
        let mut st = OptimState::new(&m, 0.1, 0.0).unwrap();
        sgd_step(&mut m, &g, &mut st);
        let expected = &before.classifier - 0.1 * 2.0;
        assert_eq!(m.classifier, expected);
        assert_eq!(m.hidden_w, before.hidden_w);
    }

    #[test]
    fn momentum_second_step_displacement() {
        let mut m = Model::zeros(2, 2, 2, 2);
        let mut g = m.zeros_like();
        g.embed_b.fill(1.0);
        let mut st = OptimState::new(&m, 0.5, 0.9).unwrap();
        sgd_step(&mut m, &g, &mut st);
        let after_one = m.embed_b[0];
        sgd_step(&mut m, &g, &mut st);
        let step = after_one - m.embed_b[0];
        assert!((step - 0.5 * 1.9).abs() < 1e-15);
    }

    #[test]
    fn optimizer_rejects_bad_hyperparameters() {
        let m = Model::zeros(2, 2, 2, 2);
        assert!(OptimState::new(&m, -1.0, 0.0).is_err());
        assert!(OptimState::new(&m, 0.1, 1.0).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = Model::init(4, 6, 3, 5, 11);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save(&path).unwrap();
        assert_eq!(Model::load(&path).unwrap(), m);

        let mut ckpt = m.to_checkpoint();
        ckpt.params[2].shape = vec![5, 3];
        ckpt.params[2].data.truncate(15);
        assert!(Model::from_checkpoint(&ckpt).is_err());
    }
}
