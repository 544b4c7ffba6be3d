//! SGD with classical momentum, applied selectively to parameter groups.

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::synthground::{AdapterParams, HeadParams};
use crate::training::model::Model;
use crate::vts::VtsParams;

pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// Which parameter groups a stage may update. Anything outside the set is
/// frozen bitwise: its tensors are never written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrainableSet {
    /// Sampler parameters (scoring projections and the token MLP).
    pub vts: bool,
    /// Encoder-to-model projector.
    pub projector: bool,
    /// Frame-score and readout affines (the head trunk).
    pub head_base: bool,
    /// Low-rank readout adapter.
    pub head_adapter: bool,
}

impl TrainableSet {
    pub fn describe(&self) -> String {
        let mut parts = Vec::new();
        if self.vts {
            parts.push("vts");
        }
        if self.projector {
            parts.push("projector");
        }
        if self.head_base {
            parts.push("head_base");
        }
        if self.head_adapter {
            parts.push("head_adapter");
        }
        if parts.is_empty() {
            "none".to_string()
        } else {
            parts.join("+")
        }
    }
}

pub fn vts_zeros_like(p: &VtsParams) -> VtsParams {
    let mut z = p.clone();
    z.for_each_mut(|_, t| *t = Tensor::zeros(t.shape()));
    z
}

pub fn head_zeros_like(h: &HeadParams) -> HeadParams {
    let mut z = h.clone();
    z.for_each_mut(|_, t| *t = Tensor::zeros(t.shape()));
    z
}

fn acc_into(dst: &mut Tensor, src: &Tensor) -> Result<()> {
    if dst.shape() != src.shape() {
        return Err(Error::shape(
            "gradient accumulation",
            format!("{:?}", dst.shape()),
            format!("{:?}", src.shape()),
        ));
    }
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += s;
    }
    Ok(())
}

/// `dst += src`, field by field.
pub fn vts_acc(dst: &mut VtsParams, src: &VtsParams) -> Result<()> {
    acc_into(&mut dst.w_v, &src.w_v)?;
    acc_into(&mut dst.w_q, &src.w_q)?;
    acc_into(&mut dst.mlp0_weight, &src.mlp0_weight)?;
    acc_into(&mut dst.mlp0_bias, &src.mlp0_bias)?;
    acc_into(&mut dst.mlp1_weight, &src.mlp1_weight)?;
    acc_into(&mut dst.mlp1_bias, &src.mlp1_bias)?;
    Ok(())
}

pub fn head_acc(dst: &mut HeadParams, src: &HeadParams) -> Result<()> {
    acc_into(&mut dst.projector_weight, &src.projector_weight)?;
    acc_into(&mut dst.projector_bias, &src.projector_bias)?;
    acc_into(&mut dst.frame_score_weight, &src.frame_score_weight)?;
    acc_into(&mut dst.frame_score_bias, &src.frame_score_bias)?;
    acc_into(&mut dst.readout_weight, &src.readout_weight)?;
    acc_into(&mut dst.readout_bias, &src.readout_bias)?;
    match (&mut dst.adapter, &src.adapter) {
        (Some(d), Some(s)) => {
            acc_into(&mut d.a, &s.a)?;
            acc_into(&mut d.b, &s.b)?;
        }
        (None, None) => {}
        _ => {
            return Err(Error::usage(
                "gradient accumulation with mismatched adapter presence",
            ))
        }
    }
    Ok(())
}

pub fn vts_scale(p: &mut VtsParams, c: f64) {
    p.for_each_mut(|_, t| {
        for v in t.data_mut() {
            *v *= c;
        }
    });
}

pub fn head_scale(h: &mut HeadParams, c: f64) {
    h.for_each_mut(|_, t| {
        for v in t.data_mut() {
            *v *= c;
        }
    });
}

/// Classical momentum: `v ← μ·v − lr·g`, `θ ← θ + v`.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub learning_rate: f64,
    pub momentum: f64,
    vel_vts: VtsParams,
    vel_head: HeadParams,
}

impl SgdMomentum {
    pub fn new(model: &Model, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::hyper(
                "learning_rate",
                learning_rate,
                "must be finite and > 0",
            ));
        }
        Ok(SgdMomentum {
            learning_rate,
            momentum: DEFAULT_MOMENTUM,
            vel_vts: vts_zeros_like(&model.vts),
            vel_head: head_zeros_like(&model.head),
        })
    }

    fn update(theta: &mut Tensor, vel: &mut Tensor, grad: &Tensor, lr: f64, mu: f64) {
        for ((t, v), g) in theta
            .data_mut()
            .iter_mut()
            .zip(vel.data_mut())
            .zip(grad.data())
        {
            *v = mu * *v - lr * g;
            *t += *v;
        }
    }

    /// Apply one step. Only groups in `trainable` are touched; everything
    /// else keeps its exact bit pattern.
    pub fn step(
        &mut self,
        model: &mut Model,
        vts_grads: &VtsParams,
        head_grads: &HeadParams,
        trainable: &TrainableSet,
    ) -> Result<()> {
        let lr = self.learning_rate;
        let mu = self.momentum;
        if trainable.vts {
            Self::update(&mut model.vts.w_v, &mut self.vel_vts.w_v, &vts_grads.w_v, lr, mu);
            Self::update(&mut model.vts.w_q, &mut self.vel_vts.w_q, &vts_grads.w_q, lr, mu);
            Self::update(
                &mut model.vts.mlp0_weight,
                &mut self.vel_vts.mlp0_weight,
                &vts_grads.mlp0_weight,
                lr,
                mu,
            );
            Self::update(
                &mut model.vts.mlp0_bias,
                &mut self.vel_vts.mlp0_bias,
                &vts_grads.mlp0_bias,
                lr,
                mu,
            );
            Self::update(
                &mut model.vts.mlp1_weight,
                &mut self.vel_vts.mlp1_weight,
                &vts_grads.mlp1_weight,
                lr,
                mu,
            );
            Self::update(
                &mut model.vts.mlp1_bias,
                &mut self.vel_vts.mlp1_bias,
                &vts_grads.mlp1_bias,
                lr,
                mu,
            );
        }
        if trainable.projector {
            Self::update(
                &mut model.head.projector_weight,
                &mut self.vel_head.projector_weight,
                &head_grads.projector_weight,
                lr,
                mu,
            );
            Self::update(
                &mut model.head.projector_bias,
                &mut self.vel_head.projector_bias,
                &head_grads.projector_bias,
                lr,
                mu,
            );
        }
        if trainable.head_base {
            Self::update(
                &mut model.head.frame_score_weight,
                &mut self.vel_head.frame_score_weight,
                &head_grads.frame_score_weight,
                lr,
                mu,
            );
            Self::update(
                &mut model.head.frame_score_bias,
                &mut self.vel_head.frame_score_bias,
                &head_grads.frame_score_bias,
                lr,
                mu,
            );
            Self::update(
                &mut model.head.readout_weight,
                &mut self.vel_head.readout_weight,
                &head_grads.readout_weight,
                lr,
                mu,
            );
            Self::update(
                &mut model.head.readout_bias,
                &mut self.vel_head.readout_bias,
                &head_grads.readout_bias,
                lr,
                mu,
            );
        }
        if trainable.head_adapter {
            let model_ad = model.head.adapter.as_mut().ok_or_else(|| {
                Error::usage("trainable set includes head_adapter but none is attached")
            })?;
            let grad_ad = head_grads.adapter.as_ref().ok_or_else(|| {
                Error::usage("adapter gradients missing from the backward pass")
            })?;
            if self.vel_head.adapter.is_none() {
                self.vel_head.adapter = Some(AdapterParams {
                    a: Tensor::zeros(model_ad.a.shape()),
                    b: Tensor::zeros(model_ad.b.shape()),
                });
            }
            let vel_ad = self.vel_head.adapter.as_mut().expect("just ensured");
            Self::update(&mut model_ad.a, &mut vel_ad.a, &grad_ad.a, lr, mu);
            Self::update(&mut model_ad.b, &mut vel_ad.b, &grad_ad.b, lr, mu);
        }
        Ok(())
    }
}
