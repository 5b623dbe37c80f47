//! Multi-branch convolution (3×3 + 1×1 + identity) and its fusion into a single 3×3 kernel.

use crate::error::{Error, Result};
use crate::nn::{conv2d_backward, conv2d_forward, ConvKernel, ConvPad, PadMode};
use crate::real::Real;
use crate::tensor::Tensor4;

#[derive(Debug, Clone, PartialEq)]
pub struct RepConvBranchSet<T> {
    pub main: ConvKernel<T>,
    pub side: Option<ConvKernel<T>>,
    pub identity: bool,
}

impl<T: Real> RepConvBranchSet<T> {
    pub fn new(main: ConvKernel<T>, side: Option<ConvKernel<T>>, identity: bool) -> Result<Self> {
        if main.size() != 3 {
            return Err(Error::InvalidShape(format!(
                "main branch must be 3x3, got {}x{}",
                main.size(),
                main.size()
            )));
        }
        if let Some(s) = &side {
            if s.size() != 1 || s.in_c() != main.in_c() || s.out_c() != main.out_c() {
                return Err(Error::InvalidShape(format!(
                    "1x1 branch ({}->{}, {}x{}) does not match 3x3 branch ({}->{})",
                    s.in_c(),
                    s.out_c(),
                    s.size(),
                    s.size(),
                    main.in_c(),
                    main.out_c()
                )));
            }
        }
        if identity && main.in_c() != main.out_c() {
            return Err(Error::InvalidArgument(format!(
                "identity branch needs in_c == out_c, got {} -> {}",
                main.in_c(),
                main.out_c()
            )));
        }
        Ok(Self {
            main,
            side,
            identity,
        })
    }

    pub fn plain(main: ConvKernel<T>) -> Self {
        Self {
            main,
            side: None,
            identity: false,
        }
    }

    pub fn num_params(&self) -> usize {
        self.main.num_params() + self.side.as_ref().map_or(0, |s| s.num_params())
    }

    pub fn is_plain(&self) -> bool {
        self.side.is_none() && !self.identity
    }

    /// Sum of all branch outputs.
    pub fn forward(&self, x: &Tensor4<T>, mode: PadMode) -> Result<Tensor4<T>> {
        let mut y = conv2d_forward(x, &self.main, ConvPad::same(3, mode))?;
        if let Some(side) = &self.side {
            y.add_assign(&conv2d_forward(x, side, ConvPad::same(1, mode))?)?;
        }
        if self.identity {
            y.add_assign(x)?;
        }
        Ok(y)
    }

    /// Returns `(d_input, grads)`; `grads.identity` mirrors `self.identity` and carries no parameters.
    pub fn backward(&self, x: &Tensor4<T>, mode: PadMode, d_out: &Tensor4<T>) -> Result<(Tensor4<T>, Self)> {
        let main = conv2d_backward(x, &self.main, ConvPad::same(3, mode), d_out)?;
        let mut d_input = main.d_input;
        let d_main = main.d_kernel.expect("conv backward yields kernel grads");
        let d_side = match &self.side {
            Some(side) => {
                let g = conv2d_backward(x, side, ConvPad::same(1, mode), d_out)?;
                d_input.add_assign(&g.d_input)?;
                g.d_kernel
            }
            None => None,
        };
        if self.identity {
            d_input.add_assign(d_out)?;
        }
        Ok((
            d_input,
            Self {
                main: d_main,
                side: d_side,
                identity: self.identity,
            },
        ))
    }

    pub fn cast<U: Real>(&self) -> RepConvBranchSet<U> {
        RepConvBranchSet {
            main: self.main.cast(),
            side: self.side.as_ref().map(|s| s.cast()),
            identity: self.identity,
        }
    }
}

/// Folds every branch into one 3×3 kernel: the 1×1 weights land on the
/// centre tap, the identity becomes a Dirac kernel, biases add.
pub fn fuse_rep<T: Real>(branches: &RepConvBranchSet<T>) -> Result<ConvKernel<T>> {
    let main = &branches.main;
    if branches.identity && main.in_c() != main.out_c() {
        return Err(Error::InvalidArgument(format!(
            "identity branch needs in_c == out_c, got {} -> {}",
            main.in_c(),
            main.out_c()
        )));
    }
    let mut fused = main.clone();
    if let Some(side) = &branches.side {
        let sw = side.weight();
        for o in 0..main.out_c() {
            for i in 0..main.in_c() {
                let v = fused.weight().at(o, i, 1, 1) + sw.at(o, i, 0, 0);
                fused.weight_mut().set(o, i, 1, 1, v);
            }
        }
        for (b, &sb) in fused.bias_mut().iter_mut().zip(side.bias()) {
            *b += sb;
        }
    }
    if branches.identity {
        for c in 0..main.out_c() {
            let v = fused.weight().at(c, c, 1, 1) + T::one();
            fused.weight_mut().set(c, c, 1, 1, v);
        }
    }
    Ok(fused)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Distribution, Shape4};

    fn kernel(out_c: usize, in_c: usize, k: usize, seed: u64) -> ConvKernel<f32> {
        let w = Tensor4::fill_random(
            Shape4::new(out_c, in_c, k, k).unwrap(),
            seed,
            Distribution::Normal { mean: 0.0, std: 0.3 },
        )
        .unwrap();
        let b = Tensor4::<f32>::fill_random(
            Shape4::new(1, 1, 1, out_c).unwrap(),
            seed + 7,
            Distribution::Uniform { lo: -0.5, hi: 0.5 },
        )
        .unwrap();
        ConvKernel::new(w, b.into_data()).unwrap()
    }

    #[test]
    fn identity_only_is_dirac() {
        let set = RepConvBranchSet::new(ConvKernel::<f32>::zeros(3, 3, 3).unwrap(), None, true).unwrap();
        assert_eq!(fuse_rep(&set).unwrap(), ConvKernel::dirac(3).unwrap());
    }

    #[test]
    fn side_only_lands_on_centre() {
        let mut side = ConvKernel::<f32>::zeros(1, 1, 1).unwrap();
        side.weight_mut().set(0, 0, 0, 0, 0.75);
        let set = RepConvBranchSet::new(ConvKernel::zeros(1, 1, 3).unwrap(), Some(side), false).unwrap();
        let fused = fuse_rep(&set).unwrap();
        let mut expected = [0.0f32; 9];
        expected[4] = 0.75;
        assert_eq!(fused.weight().data(), &expected);
    }

    #[test]
    fn identity_requires_square_channels() {
        let main = ConvKernel::<f32>::zeros(4, 3, 3).unwrap();
        assert!(RepConvBranchSet::new(main.clone(), None, true).is_err());
        let set = RepConvBranchSet {
            main,
            side: None,
            identity: true,
        };
        assert!(fuse_rep(&set).is_err());
    }

    #[test]
    fn fused_matches_branch_sum() {
        for mode in [PadMode::Zero, PadMode::Replicate] {
            let set = RepConvBranchSet::new(kernel(4, 4, 3, 1), Some(kernel(4, 4, 1, 2)), true).unwrap();
            let x = Tensor4::<f32>::fill_random(
                Shape4::new(1, 4, 8, 8).unwrap(),
                3,
                Distribution::Uniform { lo: -1.0, hi: 1.0 },
            )
            .unwrap();
            // Each branch evaluated on its own, then summed.
            let a = conv2d_forward(&x, &set.main, ConvPad::same(3, mode)).unwrap();
            let b = conv2d_forward(&x, set.side.as_ref().unwrap(), ConvPad::same(1, mode)).unwrap();
            let branch_sum = a.add(&b).unwrap().add(&x).unwrap();
            let fused = conv2d_forward(&x, &fuse_rep(&set).unwrap(), ConvPad::same(3, mode)).unwrap();
            assert!(fused.max_abs_diff(&branch_sum).unwrap() <= 1e-5);
            assert!(set.forward(&x, mode).unwrap().max_abs_diff(&branch_sum).unwrap() <= 1e-6);
        }
    }
}
