//! The full network: first convolution, a chain of blocks, hierarchical
//! concatenation, tail convolution and pixel shuffle.
//!
//! ```text
//! O_0 = σ(W_0 ⊗ I)
//! O_i = SPAB_i(O_{i-1}),                 i = 1..B
//! O   = Concat(O_0, O_1, O_{B-1}, W_f1 ⊗ O_B)
//! I_SR = PixelShuffle(W_f2 ⊗ O, r)
//! ```

use crate::error::{Error, Result};
use crate::model::params::{BlockParams, SpanModel, SpanParams};
use crate::model::spab::{spab_backward, spab_forward, BlockContext, BlockTape, Mode};
use crate::nn::{conv2d_backward, conv2d_forward, pixel_shuffle, pixel_shuffle_backward, ConvPad};
use crate::real::Real;
use crate::tensor::Tensor4;

/// Forward intermediates of the whole network.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    pub input: Tensor4<T>,
    pub pre_first: Tensor4<T>,
    /// `O_0 ..= O_B`
    pub outputs: Vec<Tensor4<T>>,
    pub blocks: Vec<BlockTape<T>>,
    pub concat: Tensor4<T>,
}

/// Diagnostics collected during the backward pass.
#[derive(Debug, Clone)]
pub struct BackwardTrace<T> {
    /// `∂L/∂O_i` for `i = 0..=B`, fully accumulated.
    pub output_grads: Vec<Tensor4<T>>,
    pub d_input: Tensor4<T>,
}

impl<T: Real> SpanModel<T> {
    pub(crate) fn block_context(&self) -> BlockContext<T> {
        BlockContext {
            block: self.config.block,
            activation: self.config.activation,
            padding: self.config.padding,
            attention: self.params.attention,
        }
    }

    fn pad3(&self) -> ConvPad {
        ConvPad::same(3, self.config.padding)
    }
}

pub fn span_forward<T: Real>(
    input: &Tensor4<T>,
    model: &SpanModel<T>,
    mode: Mode,
) -> Result<(Tensor4<T>, Option<Tape<T>>)> {
    let cfg = &model.config;
    if input.shape().c != cfg.image_channels {
        return Err(Error::InvalidShape(format!(
            "input has {} channels, model expects {}",
            input.shape().c,
            cfg.image_channels
        )));
    }
    let p = &model.params;
    let ctx = model.block_context();
    let pre_first = conv2d_forward(input, &p.conv_first, model.pad3())?;
    let o0 = cfg.activation.forward(&pre_first);

    let mut outputs = vec![o0];
    let mut tapes = Vec::with_capacity(cfg.blocks);
    for block in &p.blocks {
        let prev = outputs.last().expect("O_0 present");
        let (o, tape) = spab_forward(prev, block, &ctx, mode)?;
        if let Some(t) = tape {
            tapes.push(t);
        }
        if mode == Mode::Infer {
            // Only O_0, O_1, O_{B-1} and O_B are needed downstream.
            let keep = outputs.len() - 1;
            if keep >= 2 && keep != cfg.late_tap() {
                outputs[keep] = Tensor4::zeros(outputs[keep].shape());
            }
        }
        outputs.push(o);
    }

    let b = cfg.blocks;
    let tail = conv2d_forward(&outputs[b], &p.conv_cat, model.pad3())?;
    let concat = Tensor4::concat_channels(&[&outputs[0], &outputs[1], &outputs[cfg.late_tap()], &tail])?;
    let pre_shuffle = conv2d_forward(&concat, &p.conv_out, model.pad3())?;
    let out = pixel_shuffle(&pre_shuffle, cfg.scale)?;

    let tape = match mode {
        Mode::Infer => None,
        Mode::Train => Some(Tape {
            input: input.clone(),
            pre_first,
            outputs,
            blocks: tapes,
            concat,
        }),
    };
    Ok((out, tape))
}

/// Reverse-mode gradients of every parameter given `∂L/∂I_SR`.
pub fn span_backward<T: Real>(tape: Option<&Tape<T>>, d_out: &Tensor4<T>, model: &SpanModel<T>) -> Result<SpanParams<T>> {
    span_backward_traced(tape, d_out, model).map(|(g, _)| g)
}

pub fn span_backward_traced<T: Real>(
    tape: Option<&Tape<T>>,
    d_out: &Tensor4<T>,
    model: &SpanModel<T>,
) -> Result<(SpanParams<T>, BackwardTrace<T>)> {
    let tape = tape.ok_or(Error::MissingTape)?;
    let cfg = &model.config;
    let p = &model.params;
    if tape.blocks.len() != cfg.blocks || tape.outputs.len() != cfg.blocks + 1 {
        return Err(Error::InvalidArgument("tape does not match model depth".into()));
    }
    let f = cfg.channels;
    let b = cfg.blocks;
    let ctx = model.block_context();

    let d_pre_shuffle = pixel_shuffle_backward(d_out, cfg.scale)?;
    let out_g = conv2d_backward(&tape.concat, &p.conv_out, model.pad3(), &d_pre_shuffle)?;
    let d_concat = out_g.d_input;

    let mut grads_out: Vec<Tensor4<T>> = tape.outputs.iter().map(|o| Tensor4::zeros(o.shape())).collect();
    let tail_g = conv2d_backward(&tape.outputs[b], &p.conv_cat, model.pad3(), &d_concat.slice_channels(3 * f, f)?)?;
    grads_out[b].add_assign(&tail_g.d_input)?;
    grads_out[0].add_assign(&d_concat.slice_channels(0, f)?)?;
    grads_out[1].add_assign(&d_concat.slice_channels(f, f)?)?;
    grads_out[cfg.late_tap()].add_assign(&d_concat.slice_channels(2 * f, f)?)?;

    let mut block_grads: Vec<Option<BlockParams<T>>> = vec![None; b];
    let (mut d_a, mut d_b) = (T::zero(), T::zero());
    for i in (1..=b).rev() {
        let g = spab_backward(&tape.blocks[i - 1], &p.blocks[i - 1], &ctx, &grads_out[i])?;
        grads_out[i - 1].add_assign(&g.d_input)?;
        block_grads[i - 1] = Some(g.params);
        d_a += g.d_a;
        d_b += g.d_b;
    }

    let d_pre_first = cfg.activation.backward(&tape.pre_first, &grads_out[0])?.d_input;
    let first_g = conv2d_backward(&tape.input, &p.conv_first, model.pad3(), &d_pre_first)?;

    let (train_a, train_b) = model.trainable_attention();
    let grads = SpanParams {
        conv_first: first_g.d_kernel.expect("kernel grads"),
        blocks: block_grads.into_iter().map(|g| g.expect("every block visited")).collect(),
        conv_cat: tail_g.d_kernel.expect("kernel grads"),
        conv_out: out_g.d_kernel.expect("kernel grads"),
        attention: crate::nn::AttentionParams {
            a: if train_a { d_a } else { T::zero() },
            b: if train_b { d_b } else { T::zero() },
        },
    };
    Ok((
        grads,
        BackwardTrace {
            output_grads: grads_out,
            d_input: first_g.d_input,
        },
    ))
}

/// FLOPs of one forward pass on an `h × w` input (multiply-add = 2 FLOPs).
pub fn forward_flops<T: Real>(model: &SpanModel<T>, batch: usize, h: usize, w: usize) -> u64 {
    let cfg = &model.config;
    let plane = (batch * h * w) as u64;
    let conv = |in_c: usize, out_c: usize, k: usize| 2 * plane * out_c as u64 * in_c as u64 * (k * k) as u64;
    let f = cfg.channels;
    let mut total = conv(cfg.image_channels, f, 3);
    for block in &model.params.blocks {
        for set in &block.convs {
            total += conv(f, f, 3);
            if set.side.is_some() {
                total += conv(f, f, 1);
            }
        }
    }
    total += conv(f, f, 3);
    total += conv(4 * f, cfg.scale * cfg.scale * cfg.image_channels, 3);
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::SpanConfig;
    use crate::model::params::fuse_model;
    use crate::tensor::{Distribution, Shape4};

    fn image(n: usize, h: usize, w: usize, seed: u64) -> Tensor4<f32> {
        Tensor4::fill_random(Shape4::new(n, 3, h, w).unwrap(), seed, Distribution::Uniform { lo: 0.0, hi: 1.0 }).unwrap()
    }

    #[test]
    fn output_shapes() {
        let cfg = SpanConfig { channels: 8, ..SpanConfig::paper(4) };
        let m = SpanModel::<f32>::init(cfg, 1).unwrap();
        let (y, t) = span_forward(&image(1, 16, 24, 2), &m, Mode::Infer).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 3, 64, 96).unwrap());
        assert!(t.is_none());

        let m = SpanModel::<f32>::init(SpanConfig::paper(2), 1).unwrap();
        let (y, _) = span_forward(&image(1, 8, 8, 2), &m, Mode::Infer).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 3, 16, 16).unwrap());
    }

    #[test]
    fn wrong_channels_rejected() {
        let m = SpanModel::<f32>::init(SpanConfig::desk(2), 1).unwrap();
        let x = Tensor4::<f32>::zeros(Shape4::new(1, 1, 8, 8).unwrap());
        assert!(span_forward(&x, &m, Mode::Infer).is_err());
    }

    #[test]
    fn fresh_model_zero_input_is_finite() {
        let m = SpanModel::<f32>::init(SpanConfig::paper(3), 1).unwrap();
        let x = Tensor4::<f32>::zeros(Shape4::new(1, 3, 6, 6).unwrap());
        let (y, _) = span_forward(&x, &m, Mode::Infer).unwrap();
        assert!(y.all_finite());
    }

    #[test]
    fn train_and_infer_agree() {
        let m = SpanModel::<f32>::init(SpanConfig::desk(2), 3).unwrap();
        let x = image(2, 10, 9, 4);
        let (a, _) = span_forward(&x, &m, Mode::Infer).unwrap();
        let (b, t) = span_forward(&x, &m, Mode::Train).unwrap();
        assert_eq!(a, b);
        assert_eq!(t.unwrap().outputs.len(), 7);
    }

    #[test]
    fn missing_tape_errors() {
        let m = SpanModel::<f32>::init(SpanConfig::desk(2), 3).unwrap();
        let d = Tensor4::zeros(Shape4::new(1, 3, 8, 8).unwrap());
        assert!(matches!(span_backward(None, &d, &m), Err(Error::MissingTape)));
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let m = SpanModel::<f32>::init(SpanConfig::desk(2), 3).unwrap();
        let x = image(1, 6, 6, 4);
        let (y, t) = span_forward(&x, &m, Mode::Train).unwrap();
        let g = span_backward(t.as_ref(), &Tensor4::zeros(y.shape()), &m).unwrap();
        assert!(g.slices(true, true).iter().all(|s| s.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn fused_forward_matches() {
        let m = SpanModel::<f32>::init(SpanConfig::desk(2), 8).unwrap();
        let f = fuse_model(&m).unwrap();
        let x = image(1, 12, 12, 5);
        let (a, _) = span_forward(&x, &m, Mode::Infer).unwrap();
        let (b, _) = span_forward(&x, &f, Mode::Infer).unwrap();
        let d = a.max_abs_diff(&b).unwrap();
        assert!(d <= 1e-4, "diff {d}");
    }

    #[test]
    fn flops_closed_form() {
        let m = fuse_model(&SpanModel::<f32>::init(SpanConfig::paper(4), 1).unwrap()).unwrap();
        let px = 256u64 * 256;
        let expected = 2 * px * (48 * 3 * 9 + 19 * 48 * 48 * 9 + 48 * 192 * 9);
        assert_eq!(forward_flops(&m, 1, 256, 256), expected);
    }
}
