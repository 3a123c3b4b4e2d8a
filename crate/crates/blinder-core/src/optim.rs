//! Gradient-descent optimizers over [`ParameterSet`]s.

use alloc::vec::Vec;


use crate::params::{GradientUpdate, ParamError, ParameterSet};
use crate::tensor::{Element, Tensor};

/// Optimizer configuration plus any per-parameter state (Adam moments).
#[derive(Debug, Clone)]
pub enum Optimizer<T = f32> {
    Sgd {
        lr: T,
    },
    Adam {
        lr: T,
        beta1: T,
        beta2: T,
        eps: T,
        state: Option<AdamState<T>>,
    },
}

impl<T: Element> Optimizer<T> {
    pub fn sgd(lr: T) -> Self {
        Optimizer::Sgd { lr }
    }

    /// Adam with the customary (0.9, 0.999, 1e-8) moment defaults.
    pub fn adam(lr: T) -> Self {
        Optimizer::Adam {
            lr,
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            eps: T::from_f64(1e-8),
            state: None,
        }
    }
}

/// First and second moment accumulators, aligned with the parameter set.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

/// Applies one optimizer step in place and bumps the parameter version.
pub fn optimizer_step<T: Element>(
    params: &mut ParameterSet<T>,
    grads: &GradientUpdate<T>,
    optimizer: &mut Optimizer<T>,
) -> Result<(), ParamError> {
    params.check_aligned(grads)?;
    grads.ensure_finite()?;
    match optimizer {
        Optimizer::Sgd { lr } => {
            let lr = *lr;
            for (p, g) in (0..params.len()).zip(grads.grads.iter()) {
                params
                    .tensor_mut(p)
                    .add_scaled(&g.tensor, -lr)
                    .map_err(|_| ParamError::Misaligned(g.name.clone()))?;
            }
        }
        Optimizer::Adam {
            lr,
            beta1,
            beta2,
            eps,
            state,
        } => {
            let (lr, b1, b2, eps) = (*lr, *beta1, *beta2, *eps);
            let st = state.get_or_insert_with(|| AdamState {
                step: 0,
                m: grads
                    .grads
                    .iter()
                    .map(|g| Tensor::zeros(g.tensor.shape()))
                    .collect(),
                v: grads
                    .grads
                    .iter()
                    .map(|g| Tensor::zeros(g.tensor.shape()))
                    .collect(),
            });
            if st.m.len() != grads.grads.len() {
                return Err(ParamError::Misaligned("adam state".into()));
            }
            st.step += 1;
            let bc1 = T::one() - b1.powi(st.step as i32);
            let bc2 = T::one() - b2.powi(st.step as i32);
            for ((p, g), (m, v)) in (0..params.len())
                .zip(grads.grads.iter())
                .zip(st.m.iter_mut().zip(st.v.iter_mut()))
            {
                if m.shape() != g.tensor.shape() {
                    return Err(ParamError::Misaligned(g.name.clone()));
                }
                let pt = params.tensor_mut(p);
                for ((pv, &gv), (mv, vv)) in pt
                    .data_mut()
                    .iter_mut()
                    .zip(g.tensor.data())
                    .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
                {
                    *mv = b1 * *mv + (T::one() - b1) * gv;
                    *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                    let m_hat = *mv / bc1;
                    let v_hat = *vv / bc2;
                    *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
    params.bump_version();
    Ok(())
}
