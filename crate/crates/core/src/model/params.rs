//! Parameter containers, initialisation, counting and fusion of a whole network.

use crate::error::{Error, Result};
use crate::model::config::{BranchMask, SpanConfig};
use crate::model::rep::{fuse_rep, RepConvBranchSet};
use crate::nn::{AttentionParams, ConvKernel};
use crate::real::Real;
use crate::rng::SeededRng;
use crate::tensor::{Shape4, Tensor4};

/// The three convolutions of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T> {
    pub convs: [RepConvBranchSet<T>; 3],
}

/// Every trainable quantity of the network. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanParams<T> {
    pub conv_first: ConvKernel<T>,
    pub blocks: Vec<BlockParams<T>>,
    pub conv_cat: ConvKernel<T>,
    pub conv_out: ConvKernel<T>,
    pub attention: AttentionParams<T>,
}

/// A named view of one stored tensor, in canonical order.
pub struct NamedTensor<'a, T> {
    pub name: String,
    pub dims: [usize; 4],
    pub data: &'a [T],
}

fn bias_dims(out_c: usize) -> [usize; 4] {
    [out_c, 1, 1, 1]
}

fn push_kernel<'a, T: Real>(out: &mut Vec<NamedTensor<'a, T>>, prefix: &str, k: &'a ConvKernel<T>) {
    out.push(NamedTensor {
        name: format!("{prefix}.weight"),
        dims: k.weight().shape().dims(),
        data: k.weight().data(),
    });
    out.push(NamedTensor {
        name: format!("{prefix}.bias"),
        dims: bias_dims(k.out_c()),
        data: k.bias(),
    });
}

impl<T: Real> SpanParams<T> {
    /// Stored tensors in canonical order: `conv_first`, then per block and
    /// per convolution the 3×3 and (if present) 1×1 branch, then `conv_cat`
    /// and `conv_out`. Weights precede biases. Attention scalars are not included.
    pub fn named_tensors(&self) -> Vec<NamedTensor<'_, T>> {
        let mut out = Vec::new();
        push_kernel(&mut out, "conv_first", &self.conv_first);
        for (i, block) in self.blocks.iter().enumerate() {
            for (j, set) in block.convs.iter().enumerate() {
                push_kernel(&mut out, &format!("blocks.{i}.conv{}.k3", j + 1), &set.main);
                if let Some(side) = &set.side {
                    push_kernel(&mut out, &format!("blocks.{i}.conv{}.k1", j + 1), side);
                }
            }
        }
        push_kernel(&mut out, "conv_cat", &self.conv_cat);
        push_kernel(&mut out, "conv_out", &self.conv_out);
        out
    }

    /// Mutable slices in the same order as [`named_tensors`](Self::named_tensors),
    /// optionally followed by the attention scalars `a` then `b`.
    pub fn slices_mut(&mut self, with_a: bool, with_b: bool) -> Vec<&mut [T]> {
        fn kernel<'a, T: Real>(out: &mut Vec<&'a mut [T]>, k: &'a mut ConvKernel<T>) {
            let (w, b) = k.parts_mut();
            out.push(w);
            out.push(b);
        }
        let mut out = Vec::new();
        kernel(&mut out, &mut self.conv_first);
        for block in &mut self.blocks {
            for set in &mut block.convs {
                kernel(&mut out, &mut set.main);
                if let Some(side) = &mut set.side {
                    kernel(&mut out, side);
                }
            }
        }
        kernel(&mut out, &mut self.conv_cat);
        kernel(&mut out, &mut self.conv_out);
        if with_a {
            out.push(std::slice::from_mut(&mut self.attention.a));
        }
        if with_b {
            out.push(std::slice::from_mut(&mut self.attention.b));
        }
        out
    }

    /// Read-only counterpart of [`slices_mut`](Self::slices_mut).
    pub fn slices(&self, with_a: bool, with_b: bool) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = self.named_tensors().into_iter().map(|t| t.data).collect();
        if with_a {
            out.push(std::slice::from_ref(&self.attention.a));
        }
        if with_b {
            out.push(std::slice::from_ref(&self.attention.b));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.named_tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.slices(true, true)
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> SpanParams<U> {
        SpanParams {
            conv_first: self.conv_first.cast(),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockParams {
                    convs: [b.convs[0].cast(), b.convs[1].cast(), b.convs[2].cast()],
                })
                .collect(),
            conv_cat: self.conv_cat.cast(),
            conv_out: self.conv_out.cast(),
            attention: self.attention.cast(),
        }
    }

    /// A zero-valued container with the same structure.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for s in z.slices_mut(true, true) {
            s.fill(T::zero());
        }
        z
    }
}

/// A network: configuration, fusion state and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanModel<T> {
    pub config: SpanConfig,
    pub fused: bool,
    pub params: SpanParams<T>,
}

/// Closed-form parameter count for a configuration.
pub fn param_count(cfg: &SpanConfig, fused: bool) -> usize {
    let (c, f, r) = (cfg.image_channels, cfg.channels, cfg.scale);
    let k3 = |i: usize, o: usize| o * i * 9 + o;
    let k1 = |i: usize, o: usize| o * i + o;
    let mut per_layer = k3(f, f);
    if !fused && cfg.branches.conv1x1 {
        per_layer += k1(f, f);
    }
    k3(c, f) + 3 * cfg.blocks * per_layer + k3(f, f) + k3(4 * f, r * r * c)
}

fn he_kernel<T: Real>(rng: &mut SeededRng, out_c: usize, in_c: usize, k: usize, gain: f64) -> Result<ConvKernel<T>> {
    let std = gain * (2.0 / (in_c * k * k) as f64).sqrt();
    let shape = Shape4::new(out_c, in_c, k, k)?;
    let data = (0..shape.numel()).map(|_| T::of(rng.normal(0.0, std))).collect();
    ConvKernel::new(Tensor4::from_vec(shape, data)?, vec![T::zero(); out_c])
}

impl<T: Real> SpanModel<T> {
    /// He-style fan-in init: weights ~ N(0, 2/(in_c·k²)), divided across the
    /// branches of block convs; zero biases, attention scalars at 1. Kernels are drawn in canonical order from one stream.
    pub fn init(config: SpanConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::new(seed);
        let f = config.channels;
        let conv_first = he_kernel(&mut rng, f, config.image_channels, 3, 1.0)?;
        // Block convs split the fan-in variance evenly across their parallel paths
        // (3×3, optional 1×1, optional identity) so the fused kernel stays He-scaled
        // instead of compounding through the blocks.
        let paths = 1 + usize::from(config.branches.conv1x1) + usize::from(config.branches.identity);
        let branch_gain = (1.0 / paths as f64).sqrt();
        let mut blocks = Vec::with_capacity(config.blocks);
        for _ in 0..config.blocks {
            let mut make = || -> Result<RepConvBranchSet<T>> {
                let main = he_kernel(&mut rng, f, f, 3, branch_gain)?;
                let side = if config.branches.conv1x1 {
                    Some(he_kernel(&mut rng, f, f, 1, branch_gain)?)
                } else {
                    None
                };
                RepConvBranchSet::new(main, side, config.branches.identity)
            };
            blocks.push(BlockParams {
                convs: [make()?, make()?, make()?],
            });
        }
        let conv_cat = he_kernel(&mut rng, f, f, 3, 1.0)?;
        let conv_out = he_kernel(&mut rng, config.scale * config.scale * config.image_channels, 4 * f, 3, 1.0)?;
        Ok(Self {
            config,
            fused: false,
            params: SpanParams {
                conv_first,
                blocks,
                conv_cat,
                conv_out,
                attention: AttentionParams::default(),
            },
        })
    }

    /// All-zero parameters laid out for `config`; the skeleton that loaders fill in.
    pub fn zeroed(config: SpanConfig, fused: bool) -> Result<Self> {
        config.validate()?;
        let f = config.channels;
        let mask = if fused { BranchMask::PLAIN } else { config.branches };
        let set = || -> Result<RepConvBranchSet<T>> {
            let side = if mask.conv1x1 { Some(ConvKernel::zeros(f, f, 1)?) } else { None };
            RepConvBranchSet::new(ConvKernel::zeros(f, f, 3)?, side, mask.identity)
        };
        let blocks = (0..config.blocks)
            .map(|_| Ok(BlockParams { convs: [set()?, set()?, set()?] }))
            .collect::<Result<Vec<_>>>()?;
        let config = SpanConfig { branches: mask, ..config };
        Ok(Self {
            config,
            fused,
            params: SpanParams {
                conv_first: ConvKernel::zeros(f, config.image_channels, 3)?,
                blocks,
                conv_cat: ConvKernel::zeros(f, f, 3)?,
                conv_out: ConvKernel::zeros(config.scale * config.scale * config.image_channels, 4 * f, 3)?,
                attention: AttentionParams::default(),
            },
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.num_params()
    }

    /// Number of trainable attention scalars (0–2).
    pub fn trainable_attention(&self) -> (bool, bool) {
        let b = &self.config.block;
        (
            b.use_attention && b.train_attention_a,
            b.use_attention && b.train_attention_b,
        )
    }

    pub fn cast<U: Real>(&self) -> SpanModel<U> {
        SpanModel {
            config: self.config,
            fused: self.fused,
            params: self.params.cast(),
        }
    }

    /// Checks parameter shapes against the configuration.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let cfg = &self.config;
        let p = &self.params;
        let f = cfg.channels;
        let expect = |k: &ConvKernel<T>, o: usize, i: usize, s: usize, what: &str| -> Result<()> {
            if k.out_c() != o || k.in_c() != i || k.size() != s {
                return Err(Error::InvalidShape(format!(
                    "{what}: expected {i}->{o} {s}x{s}, got {}->{} {}x{}",
                    k.in_c(),
                    k.out_c(),
                    k.size(),
                    k.size()
                )));
            }
            Ok(())
        };
        expect(&p.conv_first, f, cfg.image_channels, 3, "conv_first")?;
        if p.blocks.len() != cfg.blocks {
            return Err(Error::InvalidShape(format!(
                "expected {} blocks, got {}",
                cfg.blocks,
                p.blocks.len()
            )));
        }
        let mask = if self.fused { BranchMask::PLAIN } else { cfg.branches };
        for (i, b) in p.blocks.iter().enumerate() {
            for (j, set) in b.convs.iter().enumerate() {
                let name = format!("blocks.{i}.conv{}", j + 1);
                expect(&set.main, f, f, 3, &name)?;
                if set.side.is_some() != mask.conv1x1 || set.identity != mask.identity {
                    return Err(Error::InvalidShape(format!("{name}: branch layout differs from mask")));
                }
                if let Some(s) = &set.side {
                    expect(s, f, f, 1, &name)?;
                }
            }
        }
        expect(&p.conv_cat, f, f, 3, "conv_cat")?;
        expect(&p.conv_out, cfg.scale * cfg.scale * cfg.image_channels, 4 * f, 3, "conv_out")?;
        Ok(())
    }
}

/// Replaces every multi-branch convolution by its fused 3×3 kernel.
pub fn fuse_model<T: Real>(model: &SpanModel<T>) -> Result<SpanModel<T>> {
    if model.fused {
        return Err(Error::AlreadyFused);
    }
    let mut out = model.clone();
    for block in &mut out.params.blocks {
        for set in &mut block.convs {
            *set = RepConvBranchSet::plain(fuse_rep(set)?);
        }
    }
    out.fused = true;
    out.config.branches = BranchMask::PLAIN;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_count_matches_tensors() {
        for cfg in [SpanConfig::paper(4), SpanConfig::desk(2), SpanConfig::small(3)] {
            let m = SpanModel::<f32>::init(cfg, 1).unwrap();
            assert_eq!(m.num_params(), param_count(&cfg, false));
            let f = fuse_model(&m).unwrap();
            assert_eq!(f.num_params(), param_count(&cfg, true));
            assert!(f.num_params() < m.num_params());
        }
    }

    #[test]
    fn paper_x4_fused_count() {
        // 1344 + 18·20784 + 20784 + 82992
        assert_eq!(param_count(&SpanConfig::paper(4), true), 479_232);
    }

    #[test]
    fn init_is_deterministic() {
        let a = SpanModel::<f32>::init(SpanConfig::desk(2), 42).unwrap();
        let b = SpanModel::<f32>::init(SpanConfig::desk(2), 42).unwrap();
        let c = SpanModel::<f32>::init(SpanConfig::desk(2), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        a.validate().unwrap();
    }

    #[test]
    fn init_std_matches_fan_in() {
        let m = SpanModel::<f64>::init(SpanConfig::paper(4), 7).unwrap();
        let w = m.params.blocks[2].convs[1].main.weight().data();
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let target = (2.0 / (48.0 * 9.0f64) / 3.0).sqrt();
        assert!((std / target - 1.0).abs() < 0.1, "std {std} target {target}");
        assert!(m.params.conv_first.bias().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn double_fuse_errors() {
        let m = SpanModel::<f32>::init(SpanConfig::desk(2), 1).unwrap();
        let f = fuse_model(&m).unwrap();
        f.validate().unwrap();
        assert!(matches!(fuse_model(&f), Err(Error::AlreadyFused)));
    }

    #[test]
    fn slices_follow_named_order() {
        let mut m = SpanModel::<f32>::init(SpanConfig::desk(2), 3).unwrap();
        let lens: Vec<usize> = m.params.named_tensors().iter().map(|t| t.data.len()).collect();
        let mut_lens: Vec<usize> = m.params.slices_mut(false, false).iter().map(|s| s.len()).collect();
        assert_eq!(lens, mut_lens);
        assert_eq!(m.params.slices_mut(true, true).len(), lens.len() + 2);
    }
}
