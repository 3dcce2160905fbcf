use super::{Encoder, EncoderConfig, Mlp};
use crate::nn::{join, ParamView, ParamViewMut, Params, Scalar};
use crate::rng::{self, Stream};

/// Encoder plus heads. The query branch carries a prediction head; the key
/// branch does not.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch<T> {
    pub encoder: Encoder<T>,
    pub proj_head: Mlp<T>,
    pub pred_head: Option<Mlp<T>>,
}

impl<T: Scalar> Branch<T> {
    /// The same branch without its prediction head.
    pub fn without_predictor(&self) -> Self {
        Self {
            encoder: self.encoder.clone(),
            proj_head: self.proj_head.clone(),
            pred_head: None,
        }
    }
}

impl<T: Scalar> Params<T> for Branch<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, T>>) {
        self.encoder.visit(&join(prefix, "encoder"), out);
        self.proj_head.visit(&join(prefix, "proj_head"), out);
        if let Some(p) = &self.pred_head {
            p.visit(&join(prefix, "pred_head"), out);
        }
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a, T>>) {
        self.encoder.visit_mut(&join(prefix, "encoder"), out);
        self.proj_head.visit_mut(&join(prefix, "proj_head"), out);
        if let Some(p) = &mut self.pred_head {
            p.visit_mut(&join(prefix, "pred_head"), out);
        }
    }
    fn visit_buffers<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a, T>>) {
        self.proj_head.visit_buffers(&join(prefix, "proj_head"), out);
        if let Some(p) = &self.pred_head {
            p.visit_buffers(&join(prefix, "pred_head"), out);
        }
    }
    fn visit_buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a, T>>) {
        self.proj_head.visit_buffers_mut(&join(prefix, "proj_head"), out);
        if let Some(p) = &mut self.pred_head {
            p.visit_buffers_mut(&join(prefix, "pred_head"), out);
        }
    }
}

/// Query branch from `seed`; the key branch is a value copy of its encoder and
/// projection head. Only the query branch is ever handed to the optimizer.
pub fn init_branches<T: Scalar>(cfg: &EncoderConfig, seed: u64) -> (Branch<T>, Branch<T>) {
    let mut r = rng::stream(seed, Stream::Init, &[]);
    let k = cfg.output_dim;
    let encoder = Encoder::new(cfg, &mut r);
    let proj_head = Mlp::new(&[k, k, k, k], true, &mut r);
    let pred_head = Mlp::new(&[k, k, k], true, &mut r);
    let query = Branch {
        encoder,
        proj_head,
        pred_head: Some(pred_head),
    };
    let key = query.without_predictor();
    (query, key)
}
