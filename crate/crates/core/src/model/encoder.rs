use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::{EncoderConfig, Pooling};
use crate::augment::{MaskConfig, ViewMasks};
use crate::error::ModelError;
use crate::nn::{gelu, gelu_backward, join, Conv1d, Linear, ParamView, ParamViewMut, Params, Scalar};

/// `x + conv2(gelu(conv1(gelu(x))))`
#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock<T> {
    pub conv1: Conv1d<T>,
    pub conv2: Conv1d<T>,
}

impl<T: Scalar> Params<T> for ResBlock<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, T>>) {
        self.conv1.visit(&join(prefix, "conv1"), out);
        self.conv2.visit(&join(prefix, "conv2"), out);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a, T>>) {
        self.conv1.visit_mut(&join(prefix, "conv1"), out);
        self.conv2.visit_mut(&join(prefix, "conv2"), out);
    }
}

/// Input projection `L→D`, residual dilated blocks, width-1 conv `D→K`, and
/// global pooling over time.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    pub input_proj: Linear<T>,
    pub blocks: Vec<ResBlock<T>>,
    pub output: Conv1d<T>,
    pub pooling: Pooling,
}

impl<T: Scalar> Params<T> for Encoder<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, T>>) {
        self.input_proj.visit(&join(prefix, "input_proj"), out);
        self.blocks.visit(&join(prefix, "blocks"), out);
        self.output.visit(&join(prefix, "output"), out);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a, T>>) {
        self.input_proj.visit_mut(&join(prefix, "input_proj"), out);
        self.blocks.visit_mut(&join(prefix, "blocks"), out);
        self.output.visit_mut(&join(prefix, "output"), out);
    }
}

struct BlockTrace<T> {
    input: Array2<T>,
    act1: Array2<T>,
    conv1: Array2<T>,
    act2: Array2<T>,
}

/// Intermediate values of one forward pass, consumed by [`Encoder::backward`].
pub struct EncoderTrace<T> {
    input: Array2<T>,
    masks: ViewMasks,
    blocks: Vec<BlockTrace<T>>,
    last: Array2<T>,
    /// Time index of the maximum per output channel (max pooling only).
    argmax: Vec<usize>,
    rows: usize,
}

impl<T: Scalar> Encoder<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> Self {
        let d = cfg.hidden_dim;
        Self {
            input_proj: Linear::new(cfg.input_leads, d, rng),
            blocks: (0..cfg.num_blocks)
                .map(|i| ResBlock {
                    conv1: Conv1d::new(d, d, cfg.kernel_size, cfg.block_dilation(i), rng),
                    conv2: Conv1d::new(d, d, cfg.kernel_size, cfg.block_dilation(i), rng),
                })
                .collect(),
            output: Conv1d::new(d, cfg.output_dim, 1, 1, rng),
            pooling: cfg.pooling,
        }
    }

    pub fn input_leads(&self) -> usize {
        self.input_proj.in_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.input_proj.out_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.output.out_channels()
    }

    fn check(&self, view: &ArrayView2<'_, T>) -> Result<(), ModelError> {
        if view.ncols() != self.input_leads() || view.nrows() == 0 {
            return Err(ModelError::ShapeMismatch {
                what: "encoder input".into(),
                expected: vec![view.nrows().max(1), self.input_leads()],
                found: view.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Projected embedding `(S', D)` before masking.
    pub fn embed(&self, view: ArrayView2<'_, T>) -> Array2<T> {
        self.input_proj.forward(view)
    }

    /// Runs the block stack on a projected embedding.
    pub fn blocks_forward(&self, mut h: Array2<T>) -> Array2<T> {
        for b in &self.blocks {
            let c1 = b.conv1.forward(gelu(h.view()).view());
            h = h + b.conv2.forward(gelu(c1.view()).view());
        }
        h
    }

    pub fn forward(&self, view: ArrayView2<'_, T>, masks: &ViewMasks) -> Result<(Array1<T>, EncoderTrace<T>), ModelError> {
        self.check(&view)?;
        let mut h = masks.forward(self.embed(view));
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let act1 = gelu(h.view());
            let conv1 = b.conv1.forward(act1.view());
            let act2 = gelu(conv1.view());
            let out = &h + &b.conv2.forward(act2.view());
            blocks.push(BlockTrace {
                input: std::mem::replace(&mut h, out),
                act1,
                conv1,
                act2,
            });
        }
        let z = self.output.forward(h.view());
        let (repr, argmax) = pool(&z, self.pooling);
        Ok((
            repr,
            EncoderTrace {
                input: view.to_owned(),
                masks: masks.clone(),
                blocks,
                last: h,
                argmax,
                rows: view.nrows(),
            },
        ))
    }

    /// Forward pass without keeping intermediates.
    pub fn represent(&self, view: ArrayView2<'_, T>, masks: &ViewMasks) -> Result<Array1<T>, ModelError> {
        self.check(&view)?;
        let h = self.blocks_forward(masks.forward(self.embed(view)));
        Ok(pool(&self.output.forward(h.view()), self.pooling).0)
    }

    /// Per-timestep outputs before pooling, shape `(S, K)`.
    pub fn timeline(&self, view: ArrayView2<'_, T>, masks: &ViewMasks) -> Result<Array2<T>, ModelError> {
        self.check(&view)?;
        let h = self.blocks_forward(masks.forward(self.embed(view)));
        Ok(self.output.forward(h.view()))
    }

    /// Accumulates parameter gradients for `∂L/∂repr = d_repr` into `grad`.
    pub fn backward(&self, trace: &EncoderTrace<T>, d_repr: ArrayView1<'_, T>, grad: &mut Self) {
        let k = self.output_dim();
        let mut dz = Array2::zeros((trace.rows, k));
        match self.pooling {
            Pooling::Max => {
                for (c, &t) in trace.argmax.iter().enumerate() {
                    dz[[t, c]] = d_repr[c];
                }
            }
            Pooling::Mean => {
                let scale = T::one() / T::lit(trace.rows as f64);
                dz += &(&d_repr * scale);
            }
        }
        let mut dh = self.output.backward(trace.last.view(), dz.view(), &mut grad.output);
        for ((b, t), g) in self.blocks.iter().zip(&trace.blocks).zip(grad.blocks.iter_mut()).rev() {
            let d_act2 = b.conv2.backward(t.act2.view(), dh.view(), &mut g.conv2);
            let d_conv1 = gelu_backward(t.conv1.view(), d_act2.view());
            let d_act1 = b.conv1.backward(t.act1.view(), d_conv1.view(), &mut g.conv1);
            dh += &gelu_backward(t.input.view(), d_act1.view());
        }
        let d_embed = trace.masks.backward(dh);
        self.input_proj
            .backward_params(trace.input.view(), d_embed.view(), &mut grad.input_proj);
    }
}

fn pool<T: Scalar>(z: &Array2<T>, pooling: Pooling) -> (Array1<T>, Vec<usize>) {
    match pooling {
        Pooling::Max => {
            let mut argmax = vec![0usize; z.ncols()];
            let mut best = z.row(0).to_owned();
            for (t, row) in z.axis_iter(Axis(0)).enumerate().skip(1) {
                for (c, &v) in row.iter().enumerate() {
                    if v > best[c] {
                        best[c] = v;
                        argmax[c] = t;
                    }
                }
            }
            (best, argmax)
        }
        Pooling::Mean => (z.mean_axis(Axis(0)).expect("non-empty time axis"), Vec::new()),
    }
}

/// Encodes one view. When `training`, masks are drawn from `rng` per `masks`;
/// otherwise the view passes unmasked and `rng` is untouched.
pub fn encode<T: Scalar, R: Rng + ?Sized>(
    view: ArrayView2<'_, T>,
    encoder: &Encoder<T>,
    masks: &MaskConfig,
    rng: &mut R,
    training: bool,
) -> Result<Array1<T>, ModelError> {
    let drawn = if training {
        ViewMasks::draw(masks, view.nrows(), encoder.hidden_dim(), rng)
    } else {
        ViewMasks::none()
    };
    encoder.represent(view, &drawn)
}
