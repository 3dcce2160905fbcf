use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::nn::{
    dropout, join, relu, relu_backward, BatchNorm1d, BnCache, Linear, ParamView, ParamViewMut, Params, Scalar,
};

/// Which statistics batch normalisation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    Batch,
    Running,
}

/// `Linear → BN → ReLU` per hidden layer, then `Linear` (→ `BN` when
/// `final_norm`).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
    pub norms: Vec<BatchNorm1d<T>>,
    pub final_norm: bool,
}

pub struct MlpTrace<T> {
    inputs: Vec<Array2<T>>,
    pre_relu: Vec<Array2<T>>,
    bn: Vec<Option<BnCache<T>>>,
}

impl<T> MlpTrace<T> {
    /// Hidden-layer activations before each ReLU, as seen by the last forward.
    pub fn pre_relu(&self) -> &[Array2<T>] {
        &self.pre_relu
    }
}

impl<T: Scalar> Mlp<T> {
    /// `dims = [in, hidden..., out]`.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], final_norm: bool, rng: &mut R) -> Self {
        assert!(dims.len() >= 2);
        let layers: Vec<Linear<T>> = dims.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect();
        let normed = if final_norm { layers.len() } else { layers.len() - 1 };
        let norms = dims[1..=normed].iter().map(|&d| BatchNorm1d::new(d)).collect();
        Self {
            layers,
            norms,
            final_norm,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").out_dim()
    }

    pub fn forward(&self, x: ArrayView2<'_, T>, mode: NormMode) -> (Array2<T>, MlpTrace<T>) {
        let n = self.layers.len();
        let mut trace = MlpTrace {
            inputs: Vec::with_capacity(n),
            pre_relu: Vec::with_capacity(n),
            bn: Vec::with_capacity(n),
        };
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(h.view());
            trace.inputs.push(h);
            if let Some(bn) = self.norms.get(i) {
                z = match mode {
                    NormMode::Batch => {
                        let (y, cache) = bn.forward_train(z.view());
                        trace.bn.push(Some(cache));
                        y
                    }
                    NormMode::Running => {
                        trace.bn.push(None);
                        bn.forward_eval(z.view())
                    }
                };
            } else {
                trace.bn.push(None);
            }
            if i + 1 < n {
                let a = relu(z.view());
                trace.pre_relu.push(z);
                h = a;
            } else {
                h = z;
            }
        }
        (h, trace)
    }

    /// Backward pass; only valid for traces taken in [`NormMode::Batch`] or for
    /// layers without normalisation.
    pub fn backward(&self, trace: &MlpTrace<T>, dy: ArrayView2<'_, T>, grad: &mut Self) -> Array2<T> {
        let n = self.layers.len();
        let mut d = dy.to_owned();
        for i in (0..n).rev() {
            if i + 1 < n {
                d = relu_backward(trace.pre_relu[i].view(), d.view());
            }
            if let Some(bn) = self.norms.get(i) {
                let cache = trace.bn[i]
                    .as_ref()
                    .expect("backward through running-stat normalisation is not supported");
                d = bn.backward(cache, d.view(), &mut grad.norms[i]);
            }
            d = self.layers[i].backward(trace.inputs[i].view(), d.view(), &mut grad.layers[i]);
        }
        d
    }

    pub fn update_running(&mut self, trace: &MlpTrace<T>) {
        for (bn, cache) in self.norms.iter_mut().zip(&trace.bn) {
            if let Some(c) = cache {
                bn.update_running(c);
            }
        }
    }
}

impl<T: Scalar> Params<T> for Mlp<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, T>>) {
        self.layers.visit(&join(prefix, "layers"), out);
        self.norms.visit(&join(prefix, "norms"), out);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a, T>>) {
        self.layers.visit_mut(&join(prefix, "layers"), out);
        self.norms.visit_mut(&join(prefix, "norms"), out);
    }
    fn visit_buffers<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, T>>) {
        self.norms.visit_buffers(&join(prefix, "norms"), out);
    }
    fn visit_buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a, T>>) {
        self.norms.visit_buffers_mut(&join(prefix, "norms"), out);
    }
}

/// Three-layer projection head (`K→K→K→K`, BN after every layer).
pub fn project<T: Scalar>(repr: ArrayView2<'_, T>, head: &Mlp<T>) -> (Array2<T>, MlpTrace<T>) {
    head.forward(repr, NormMode::Batch)
}

/// Two-layer prediction head, query branch only.
pub fn predict<T: Scalar>(repr: ArrayView2<'_, T>, head: &Mlp<T>) -> (Array2<T>, MlpTrace<T>) {
    head.forward(repr, NormMode::Batch)
}

/// `K → H → C` with BN and ReLU after the hidden layer and dropout on the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead<T> {
    pub mlp: Mlp<T>,
    pub dropout: f64,
}

pub struct ClassifierTrace<T> {
    mlp: MlpTrace<T>,
    dropout_mask: Option<Array2<T>>,
}

impl<T> ClassifierTrace<T> {
    pub fn mlp(&self) -> &MlpTrace<T> {
        &self.mlp
    }
}

impl<T: Scalar> ClassifierHead<T> {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, classes: usize, dropout: f64, rng: &mut R) -> Self {
        Self {
            mlp: Mlp::new(&[input, hidden, classes], false, rng),
            dropout,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.mlp.out_dim()
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        repr: ArrayView2<'_, T>,
        training: bool,
        rng: &mut R,
    ) -> (Array2<T>, ClassifierTrace<T>) {
        let mode = if training { NormMode::Batch } else { NormMode::Running };
        let (logits, mlp) = self.mlp.forward(repr, mode);
        if training && self.dropout > 0.0 {
            let (out, mask) = dropout(logits.view(), self.dropout, rng);
            (
                out,
                ClassifierTrace {
                    mlp,
                    dropout_mask: Some(mask),
                },
            )
        } else {
            (
                logits,
                ClassifierTrace {
                    mlp,
                    dropout_mask: None,
                },
            )
        }
    }

    pub fn backward(&self, trace: &ClassifierTrace<T>, d_logits: ArrayView2<'_, T>, grad: &mut Self) -> Array2<T> {
        let d = match &trace.dropout_mask {
            Some(mask) => &d_logits * mask,
            None => d_logits.to_owned(),
        };
        self.mlp.backward(&trace.mlp, d.view(), &mut grad.mlp)
    }

    pub fn update_running(&mut self, trace: &ClassifierTrace<T>) {
        self.mlp.update_running(&trace.mlp);
    }
}

impl<T: Scalar> Params<T> for ClassifierHead<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, T>>) {
        self.mlp.visit(prefix, out);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a, T>>) {
        self.mlp.visit_mut(prefix, out);
    }
    fn visit_buffers<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, T>>) {
        self.mlp.visit_buffers(prefix, out);
    }
    fn visit_buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a, T>>) {
        self.mlp.visit_buffers_mut(prefix, out);
    }
}

/// Logits for a batch of representations; dropout only when `training`.
pub fn classify<T: Scalar, R: Rng + ?Sized>(
    repr: ArrayView2<'_, T>,
    head: &ClassifierHead<T>,
    training: bool,
    rng: &mut R,
) -> Array2<T> {
    head.forward(repr, training, rng).0
}
