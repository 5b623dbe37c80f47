//! Pixel losses. Both return the mean over every element and its gradient.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::real::Real;
use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    L1,
    L2,
}

impl LossKind {
    pub fn eval<T: Real>(self, pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<(f64, Tensor4<T>)> {
        match self {
            LossKind::L1 => l1_loss(pred, target),
            LossKind::L2 => l2_loss(pred, target),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::L1 => "l1",
            LossKind::L2 => "l2",
        }
    }
}

/// Mean absolute error; the subgradient at zero difference is zero.
pub fn l1_loss<T: Real>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<(f64, Tensor4<T>)> {
    let diff = pred.sub(target)?;
    let n = diff.data().len() as f64;
    let value = diff.data().iter().map(|&d| d.to_f64().abs()).sum::<f64>() / n;
    let inv = T::of(1.0 / n);
    let grad = diff.map(|d| {
        if d > T::zero() {
            inv
        } else if d < T::zero() {
            -inv
        } else {
            T::zero()
        }
    });
    Ok((value, grad))
}

/// Mean squared error.
pub fn l2_loss<T: Real>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<(f64, Tensor4<T>)> {
    let diff = pred.sub(target)?;
    let n = diff.data().len() as f64;
    let value = diff.data().iter().map(|&d| d.to_f64().powi(2)).sum::<f64>() / n;
    let k = T::of(2.0 / n);
    Ok((value, diff.map(|d| d * k)))
}
