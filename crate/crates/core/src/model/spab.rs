//! One attention block: three convolutions produce `H`, the attention map
//! is `V = σ_a(H)`, and the output is `U ⊙ V` with `U = O_prev + H`
//! (or `U = H` without the residual).

use crate::error::Result;
use crate::model::config::SpabConfig;
use crate::model::params::BlockParams;
use crate::nn::{Activation, AttentionParams, PadMode};
use crate::real::Real;
use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Everything a block needs besides its own weights.
#[derive(Debug, Clone, Copy)]
pub struct BlockContext<T> {
    pub block: SpabConfig,
    pub activation: Activation,
    pub padding: PadMode,
    pub attention: AttentionParams<T>,
}

/// Forward intermediates of one block.
#[derive(Debug, Clone)]
pub struct BlockTape<T> {
    /// `O_{i-1}`
    pub input: Tensor4<T>,
    pub pre1: Tensor4<T>,
    pub act1: Tensor4<T>,
    pub pre2: Tensor4<T>,
    pub act2: Tensor4<T>,
    /// `H_i`
    pub h: Tensor4<T>,
    /// `U_i`
    pub u: Tensor4<T>,
    /// `V_i`; `None` when attention is disabled (the map is all ones).
    pub v: Option<Tensor4<T>>,
}

/// Gradients produced by one block.
#[derive(Debug, Clone)]
pub struct BlockGrads<T> {
    pub d_input: Tensor4<T>,
    pub params: BlockParams<T>,
    pub d_a: T,
    pub d_b: T,
}

pub fn spab_forward<T: Real>(
    o_prev: &Tensor4<T>,
    params: &BlockParams<T>,
    ctx: &BlockContext<T>,
    mode: Mode,
) -> Result<(Tensor4<T>, Option<BlockTape<T>>)> {
    let act = ctx.activation;
    let pre1 = params.convs[0].forward(o_prev, ctx.padding)?;
    let act1 = act.forward(&pre1);
    let pre2 = params.convs[1].forward(&act1, ctx.padding)?;
    let act2 = act.forward(&pre2);
    let h = params.convs[2].forward(&act2, ctx.padding)?;
    let u = if ctx.block.use_residual {
        o_prev.add(&h)?
    } else {
        h.clone()
    };
    let (out, v) = if ctx.block.use_attention {
        let v = crate::nn::act_attention(&h, ctx.attention);
        (u.mul(&v)?, Some(v))
    } else {
        (u.clone(), None)
    };
    let tape = match mode {
        Mode::Infer => None,
        Mode::Train => Some(BlockTape {
            input: o_prev.clone(),
            pre1,
            act1,
            pre2,
            act2,
            h,
            u,
            v,
        }),
    };
    Ok((out, tape))
}

/// Element-wise factor mapping `∂L/∂O_i` to `∂L/∂H_i`:
///
/// * attention + residual: `(H + O_prev)·σ_a'(H) + σ_a(H)`
/// * attention only: `H·σ_a'(H) + σ_a(H)`
/// * no attention: all ones
pub fn attention_grad_factor<T: Real>(
    h: &Tensor4<T>,
    o_prev: &Tensor4<T>,
    cfg: &SpabConfig,
    attention: AttentionParams<T>,
) -> Result<Tensor4<T>> {
    h.check_same(o_prev, "attention_grad_factor")?;
    if !cfg.use_attention {
        return Ok(Tensor4::ones(h.shape()));
    }
    let residual = cfg.use_residual;
    h.zip_map(o_prev, "attention_grad_factor", |hv, pv| {
        let u = if residual { hv + pv } else { hv };
        u * attention.derivative(hv) + attention.value(hv)
    })
}

pub fn spab_backward<T: Real>(
    tape: &BlockTape<T>,
    params: &BlockParams<T>,
    ctx: &BlockContext<T>,
    d_out: &Tensor4<T>,
) -> Result<BlockGrads<T>> {
    let factor = attention_grad_factor(&tape.h, &tape.input, &ctx.block, ctx.attention)?;
    let d_h = d_out.mul(&factor)?;

    let (mut d_a, mut d_b) = (T::zero(), T::zero());
    if ctx.block.use_attention && (ctx.block.train_attention_a || ctx.block.train_attention_b) {
        for ((&g, &u), &hv) in d_out.data().iter().zip(tape.u.data()).zip(tape.h.data()) {
            let (pa, pb) = ctx.attention.param_partials(hv);
            d_a += g * u * pa;
            d_b += g * u * pb;
        }
    }

    let act = ctx.activation;
    let (d_act2, g3) = params.convs[2].backward(&tape.act2, ctx.padding, &d_h)?;
    let d_pre2 = act.backward(&tape.pre2, &d_act2)?.d_input;
    let (d_act1, g2) = params.convs[1].backward(&tape.act1, ctx.padding, &d_pre2)?;
    let d_pre1 = act.backward(&tape.pre1, &d_act1)?.d_input;
    let (mut d_input, g1) = params.convs[0].backward(&tape.input, ctx.padding, &d_pre1)?;

    if ctx.block.use_residual {
        // ∂O/∂O_prev through U = O_prev + H is V (or 1 without attention).
        let direct = match &tape.v {
            Some(v) => d_out.mul(v)?,
            None => d_out.clone(),
        };
        d_input.add_assign(&direct)?;
    }

    Ok(BlockGrads {
        d_input,
        params: BlockParams { convs: [g1, g2, g3] },
        d_a,
        d_b,
    })
}
