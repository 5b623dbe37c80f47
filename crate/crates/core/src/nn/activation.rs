//! Point-wise activations: the feature activation between convolutions and
//! the odd attention activation `b·(logistic(a·x) − 0.5)`.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::conv::OpGrad;
use crate::real::Real;
use crate::tensor::Tensor4;

/// Negative slope of [`Activation::LeakyRelu`].
pub const LEAKY_SLOPE: f64 = 0.05;

/// `1 / (1 + e^(−x))`; saturates cleanly to 0 or 1 when the exponential overflows.
#[inline]
pub fn logistic<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Activation applied after convolutions inside the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Silu,
    LeakyRelu,
}

impl Activation {
    #[inline]
    pub fn value<T: Real>(self, x: T) -> T {
        match self {
            Activation::Silu => x * logistic(x),
            Activation::LeakyRelu => {
                if x >= T::zero() {
                    x
                } else {
                    x * T::of(LEAKY_SLOPE)
                }
            }
        }
    }

    #[inline]
    pub fn derivative<T: Real>(self, x: T) -> T {
        match self {
            Activation::Silu => {
                let s = logistic(x);
                s * (T::one() + x * (T::one() - s))
            }
            Activation::LeakyRelu => {
                if x >= T::zero() {
                    T::one()
                } else {
                    T::of(LEAKY_SLOPE)
                }
            }
        }
    }

    pub fn forward<T: Real>(self, x: &Tensor4<T>) -> Tensor4<T> {
        x.map(|v| self.value(v))
    }

    pub fn backward<T: Real>(self, x: &Tensor4<T>, d_out: &Tensor4<T>) -> Result<OpGrad<T>> {
        let d_input = x.zip_map(d_out, "activation_backward", |v, g| g * self.derivative(v))?;
        Ok(OpGrad {
            d_input,
            d_kernel: None,
        })
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Silu => 0,
            Activation::LeakyRelu => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Silu),
            1 => Some(Activation::LeakyRelu),
            _ => None,
        }
    }
}

pub fn act_silu<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    Activation::Silu.forward(x)
}

pub fn act_silu_backward<T: Real>(x: &Tensor4<T>, d_out: &Tensor4<T>) -> Result<OpGrad<T>> {
    Activation::Silu.backward(x, d_out)
}

/// Scale `a` (inside the logistic) and amplitude `b` of the attention activation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionParams<T> {
    pub a: T,
    pub b: T,
}

impl<T: Real> Default for AttentionParams<T> {
    fn default() -> Self {
        Self {
            a: T::one(),
            b: T::one(),
        }
    }
}

impl<T: Real> AttentionParams<T> {
    /// `b·(logistic(a·x) − 0.5)`, evaluated as `(b/2)·tanh(a·x/2)` so the
    /// result is odd in `x` to the last bit.
    #[inline]
    pub fn value(&self, x: T) -> T {
        let half = T::of(0.5);
        self.b * half * (self.a * x * half).tanh()
    }

    /// `a·b·logistic(a·x)·(1 − logistic(a·x))`.
    #[inline]
    pub fn derivative(&self, x: T) -> T {
        let s = logistic(self.a * x);
        self.a * self.b * s * (T::one() - s)
    }

    /// Partial derivatives of the activation with respect to `a` and `b`.
    #[inline]
    pub fn param_partials(&self, x: T) -> (T, T) {
        let s = logistic(self.a * x);
        let da = self.b * s * (T::one() - s) * x;
        let db = s - T::of(0.5);
        (da, db)
    }

    pub fn cast<U: Real>(&self) -> AttentionParams<U> {
        AttentionParams {
            a: U::of(self.a.to_f64()),
            b: U::of(self.b.to_f64()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrad<T> {
    pub d_input: Tensor4<T>,
    pub d_a: T,
    pub d_b: T,
}

pub fn act_attention<T: Real>(x: &Tensor4<T>, p: AttentionParams<T>) -> Tensor4<T> {
    x.map(|v| p.value(v))
}

pub fn act_attention_backward<T: Real>(
    x: &Tensor4<T>,
    p: AttentionParams<T>,
    d_out: &Tensor4<T>,
) -> Result<AttentionGrad<T>> {
    let d_input = x.zip_map(d_out, "act_attention_backward", |v, g| g * p.derivative(v))?;
    let (mut d_a, mut d_b) = (T::zero(), T::zero());
    for (&v, &g) in x.data().iter().zip(d_out.data()) {
        let (pa, pb) = p.param_partials(v);
        d_a += g * pa;
        d_b += g * pb;
    }
    Ok(AttentionGrad { d_input, d_a, d_b })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silu_values() {
        assert_eq!(Activation::Silu.value(0.0f64), 0.0);
        let expected = 10.0 / (1.0 + (-10.0f64).exp());
        assert!((Activation::Silu.value(10.0f64) - expected).abs() < 1e-12);
        assert!((Activation::Silu.value(10.0f64) - 9.99955).abs() < 1e-5);
    }

    #[test]
    fn logistic_is_stable_at_extremes() {
        assert_eq!(logistic(-800.0f64), 0.0);
        assert_eq!(logistic(800.0f64), 1.0);
        assert!(logistic(-800.0f32).is_finite());
    }

    #[test]
    fn attention_values() {
        let p = AttentionParams::<f64>::default();
        assert_eq!(p.value(0.0), 0.0);
        let expected = 1.0 / (1.0 + (-2.0f64).exp()) - 0.5;
        assert!((p.value(2.0) - expected).abs() < 1e-15);
        assert!((p.value(2.0) - 0.380797).abs() < 1e-6);
        assert_eq!(p.derivative(0.0), 0.25);
    }

    #[test]
    fn attention_scaled_variant() {
        let p = AttentionParams { a: 2.0f64, b: 3.0 };
        let x = 0.7;
        let expected = 3.0 * (1.0 / (1.0 + (-1.4f64).exp()) - 0.5);
        assert!((p.value(x) - expected).abs() < 1e-14);
    }

    #[test]
    fn leaky_relu() {
        assert_eq!(Activation::LeakyRelu.value(-2.0f64), -0.1);
        assert_eq!(Activation::LeakyRelu.derivative(-2.0f64), 0.05);
        assert_eq!(Activation::LeakyRelu.value(3.0f64), 3.0);
    }

    #[test]
    fn activation_codes_round_trip() {
        for a in [Activation::Silu, Activation::LeakyRelu] {
            assert_eq!(Activation::from_code(a.code()), Some(a));
        }
        assert_eq!(Activation::from_code(9), None);
    }
}
