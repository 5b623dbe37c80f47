//! Finite-difference verification of every hand-written backward pass.
//!
//! Each check contracts the op output with a fixed random tensor `w`, so the
//! scalar loss is `Σ w ⊙ f(θ)` and its analytic gradient is the backward pass
//! fed with `w`. The error per
//! component is `|g − fd| / max(|g|, |fd|, 1e-8)`.
//!
//! Single layers use one central difference with step 1e-6; blocks and the
//! whole network use Ridders' extrapolation (see [`Stencil`]).
//!
//! The difference quotient is formed as `Σ w ⊙ (f(θ+h) − f(θ−h)) / 2h`, that is
//! the outputs are subtracted before contracting. Subtracting two contracted
//! sums instead loses ~1e-9 absolute to cancellation, which swamps small
//! gradient components.

use std::fmt::Write as _;

use crate::error::Result;
use crate::model::{
    attention_grad_factor, spab_backward, spab_forward, span_backward_traced, span_forward, BlockContext,
    BlockParams, Mode, RepConvBranchSet, SpanConfig, SpanModel, Variant,
};
use crate::nn::{
    act_attention, act_attention_backward, conv2d_backward, conv2d_forward, pixel_shuffle, pixel_shuffle_backward,
    Activation, AttentionParams, ConvKernel, ConvPad, PadMode,
};
use crate::tensor::{Distribution, Shape4, Tensor4};
use crate::train::l2_loss;

/// Step for single-layer checks.
pub const STEP: f64 = 1e-6;
/// Initial step of the extrapolated differences used for composite checks.
pub const COMPOSITE_STEP: f64 = 0.01;

/// How the difference quotient is formed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stencil {
    /// One central difference with the given step.
    Central(f64),
    /// Ridders' extrapolation of central differences starting at the given
    /// step and shrinking by 1.4 per stage. Blocks and the whole network
    /// need it: their gradients span six orders of magnitude while forward
    /// round-off contributes ~1e-14 to each quotient numerator, so no single
    /// step keeps both truncation and round-off below 1e-5 relative.
    Ridders(f64),
}

impl Stencil {
    fn estimate(self, mut central: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
        match self {
            Stencil::Central(h) => central(h),
            Stencil::Ridders(h0) => {
                const SHRINK: f64 = 1.4;
                const STAGES: usize = 10;
                let mut table = [[0.0f64; STAGES]; STAGES];
                let mut h = h0;
                table[0][0] = central(h)?;
                let (mut best, mut err) = (table[0][0], f64::INFINITY);
                for i in 1..STAGES {
                    h /= SHRINK;
                    table[0][i] = central(h)?;
                    let mut fac = SHRINK * SHRINK;
                    for j in 1..=i {
                        table[j][i] = (table[j - 1][i] * fac - table[j - 1][i - 1]) / (fac - 1.0);
                        fac *= SHRINK * SHRINK;
                        let e = (table[j][i] - table[j - 1][i]).abs().max((table[j][i] - table[j - 1][i - 1]).abs());
                        if e <= err {
                            err = e;
                            best = table[j][i];
                        }
                    }
                    if (table[i][i] - table[i - 1][i - 1]).abs() >= 2.0 * err {
                        break;
                    }
                }
                Ok(best)
            }
        }
    }
}
pub const TOLERANCE: f64 = 1e-5;
const DENOMINATOR_FLOOR: f64 = 1e-8;

pub fn rel_error(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(DENOMINATOR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpCheck {
    pub op: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub stencil: Stencil,
    /// Analytic and finite-difference values at the worst component.
    pub worst: (f64, f64),
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub ops: Vec<OpCheck>,
    /// Max abs difference between the block backward pass and the explicit
    /// `(H·σ_a'(H) + σ_a(H))` chain for the no-residual block.
    pub identity_error: f64,
    pub identity_tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.ops.iter().all(OpCheck::passed) && self.identity_error <= self.identity_tolerance
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<28} {:>8} {:>14} {:>14}  status", "op", "checked", "difference", "max rel err");
        for op in &self.ops {
            let status = if op.passed() { "ok" } else { "FAIL" };
            let stencil = match op.stencil {
                Stencil::Central(h) => format!("central {h:.0e}"),
                Stencil::Ridders(h) => format!("ridders {h}"),
            };
            let _ = writeln!(
                s,
                "{:<28} {:>8} {:>14} {:>14.3e}  {status}",
                op.op, op.checked, stencil, op.max_rel_error
            );
        }
        let status = if self.identity_error <= self.identity_tolerance { "ok" } else { "FAIL" };
        let _ = writeln!(
            s,
            "{:<28} {:>8} {:>14} {:>14.3e}  {status} (max abs, tol {:.0e})",
            "attention factor identity", "-", "-", self.identity_error, self.identity_tolerance
        );
        s
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GradcheckOptions {
    pub seed: u64,
    /// Negative control: perturb every analytic gradient by 0.1% so the suite must fail.
    pub corrupt_backward: bool,
}

/// `Σ w·(up − down)` with compensated summation.
fn contract_diff(up: &[f64], down: &[f64], w: &[f64]) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for ((&u, &d), &b) in up.iter().zip(down).zip(w) {
        let t = (u - d) * b;
        let s = sum + t;
        comp += if sum.abs() >= t.abs() { (sum - s) + t } else { (t - s) + sum };
        sum = s;
    }
    sum + comp
}

fn flatten(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

fn scatter(theta: &[f64], parts: &mut [&mut [f64]]) {
    let mut at = 0;
    for p in parts.iter_mut() {
        p.copy_from_slice(&theta[at..at + p.len()]);
        at += p.len();
    }
    debug_assert_eq!(at, theta.len());
}

fn kernel_slices(k: &mut ConvKernel<f64>) -> Vec<&mut [f64]> {
    let (w, b) = k.parts_mut();
    vec![w, b]
}

fn set_slices(set: &mut RepConvBranchSet<f64>) -> Vec<&mut [f64]> {
    let mut out = kernel_slices(&mut set.main);
    if let Some(side) = &mut set.side {
        out.extend(kernel_slices(side));
    }
    out
}

fn block_slices(b: &mut BlockParams<f64>) -> Vec<&mut [f64]> {
    b.convs.iter_mut().flat_map(set_slices).collect()
}

fn set_grad(g: &RepConvBranchSet<f64>) -> Vec<f64> {
    let mut out: Vec<f64> = g.main.weight().data().iter().chain(g.main.bias()).copied().collect();
    if let Some(s) = &g.side {
        out.extend(s.weight().data().iter().chain(s.bias()));
    }
    out
}

struct Suite {
    seed: u64,
    corrupt: bool,
    ops: Vec<OpCheck>,
    draws: u64,
}

impl Suite {
    fn random(&mut self, dims: [usize; 4], lo: f64, hi: f64) -> Result<Tensor4<f64>> {
        self.draws += 1;
        let shape = Shape4::new(dims[0], dims[1], dims[2], dims[3])?;
        Tensor4::fill_random(shape, self.seed.wrapping_mul(1_000_003).wrapping_add(self.draws), Distribution::Uniform { lo, hi })
    }

    fn kernel(&mut self, out_c: usize, in_c: usize, k: usize) -> Result<ConvKernel<f64>> {
        let w = self.random([out_c, in_c, k, k], -0.5, 0.5)?;
        let b = self.random([out_c, 1, 1, 1], -0.2, 0.2)?.into_data();
        ConvKernel::new(w, b)
    }

    /// Compares `analytic` against central differences of `Σ w ⊙ eval(θ)` at `theta`.
    fn compare(
        &mut self,
        op: &str,
        stencil: Stencil,
        theta: &[f64],
        analytic: &[f64],
        w: &Tensor4<f64>,
        mut eval: impl FnMut(&[f64]) -> Result<Tensor4<f64>>,
    ) -> Result<()> {
        assert_eq!(theta.len(), analytic.len(), "{op}: parameter/gradient length");
        let mut probe = theta.to_vec();
        let (mut max_rel_error, mut worst) = (0.0f64, (0.0, 0.0));
        for (i, &g) in analytic.iter().enumerate() {
            let fd = stencil.estimate(|h| {
                probe[i] = theta[i] + h;
                let up = eval(&probe)?;
                probe[i] = theta[i] - h;
                let down = eval(&probe)?;
                probe[i] = theta[i];
                Ok(contract_diff(up.data(), down.data(), w.data()) / (2.0 * h))
            })?;
            let g = if self.corrupt { g * 1.001 } else { g };
            let e = rel_error(g, fd);
            if e > max_rel_error {
                max_rel_error = e;
                worst = (g, fd);
            }
        }
        log::debug!("gradcheck {op}: {} components, max rel err {max_rel_error:.3e}", theta.len());
        self.ops.push(OpCheck {
            op: op.to_string(),
            checked: theta.len(),
            max_rel_error,
            stencil,
            worst,
        });
        Ok(())
    }

    fn conv(&mut self, op: &str, in_c: usize, out_c: usize, k: usize, mode: PadMode) -> Result<()> {
        let x = self.random([2, in_c, 5, 6], -1.0, 1.0)?;
        let mut kernel = self.kernel(out_c, in_c, k)?;
        let pad = ConvPad::same(k, mode);
        let y = conv2d_forward(&x, &kernel, pad)?;
        let w = self.random(y.shape().dims(), -1.0, 1.0)?;
        let g = conv2d_backward(&x, &kernel, pad, &w)?;
        let dk = g.d_kernel.expect("kernel grads");
        let analytic = flatten(&[g.d_input.data(), dk.weight().data(), dk.bias()]);
        let theta = flatten(&[x.data(), kernel.weight().data(), kernel.bias()]);
        let mut xs = x.clone();
        self.compare(op, Stencil::Central(STEP), &theta, &analytic, &w, |t| {
            let mut parts = vec![xs.data_mut()];
            parts.extend(kernel_slices(&mut kernel));
            scatter(t, &mut parts);
            conv2d_forward(&xs, &kernel, pad)
        })
    }

    fn activation(&mut self, op: &str, act: Activation) -> Result<()> {
        // Keep inputs clear of the leaky ReLU kink.
        let x = self.random([2, 3, 4, 5], -3.0, 3.0)?.map(|v| if v.abs() < 1e-2 { v + 0.05 } else { v });
        let w = self.random(x.shape().dims(), -1.0, 1.0)?;
        let analytic = act.backward(&x, &w)?.d_input.into_data();
        let mut xs = x.clone();
        self.compare(op, Stencil::Central(STEP), x.data(), &analytic, &w, |t| {
            xs.data_mut().copy_from_slice(t);
            Ok(act.forward(&xs))
        })
    }

    fn attention(&mut self) -> Result<()> {
        let x = self.random([1, 4, 5, 5], -3.0, 3.0)?;
        let w = self.random(x.shape().dims(), -1.0, 1.0)?;
        let p = AttentionParams { a: 1.3, b: 0.8 };
        let g = act_attention_backward(&x, p, &w)?;
        let mut analytic = g.d_input.into_data();
        analytic.extend([g.d_a, g.d_b]);
        let mut theta = x.data().to_vec();
        theta.extend([p.a, p.b]);
        let mut xs = x.clone();
        let n = x.data().len();
        self.compare("attention σ_a (x, a, b)", Stencil::Central(STEP), &theta, &analytic, &w, |t| {
            xs.data_mut().copy_from_slice(&t[..n]);
            Ok(act_attention(&xs, AttentionParams { a: t[n], b: t[n + 1] }))
        })
    }

    fn shuffle(&mut self) -> Result<()> {
        let x = self.random([2, 12, 3, 4], -1.0, 1.0)?;
        let y = pixel_shuffle(&x, 2)?;
        let w = self.random(y.shape().dims(), -1.0, 1.0)?;
        let analytic = pixel_shuffle_backward(&w, 2)?.into_data();
        let mut xs = x.clone();
        self.compare("pixel_shuffle r=2", Stencil::Central(STEP), x.data(), &analytic, &w, |t| {
            xs.data_mut().copy_from_slice(t);
            pixel_shuffle(&xs, 2)
        })
    }

    fn rep(&mut self) -> Result<()> {
        let c = 3;
        let x = self.random([1, c, 5, 5], -1.0, 1.0)?;
        let mut set = RepConvBranchSet::new(self.kernel(c, c, 3)?, Some(self.kernel(c, c, 1)?), true)?;
        let y = set.forward(&x, PadMode::Zero)?;
        let w = self.random(y.shape().dims(), -1.0, 1.0)?;
        let (dx, gs) = set.backward(&x, PadMode::Zero, &w)?;
        let mut analytic = dx.into_data();
        analytic.extend(set_grad(&gs));
        let mut theta = x.data().to_vec();
        theta.extend(set_grad(&set));
        let mut xs = x.clone();
        self.compare("rep branches 3x3+1x1+id", Stencil::Central(STEP), &theta, &analytic, &w, |t| {
            let mut parts = vec![xs.data_mut()];
            parts.extend(set_slices(&mut set));
            scatter(t, &mut parts);
            set.forward(&xs, PadMode::Zero)
        })
    }

    fn block(&mut self, variant: Variant) -> Result<()> {
        let cfg = SpanConfig {
            channels: 3,
            blocks: 1,
            ..SpanConfig::paper(2)
        }
        .with_variant(variant);
        let mut params = SpanModel::<f64>::init(cfg, self.seed ^ 0xb10c)?.params.blocks.remove(0);
        let mut ctx = BlockContext {
            block: cfg.block,
            activation: cfg.activation,
            padding: cfg.padding,
            attention: AttentionParams { a: 1.1, b: 0.9 },
        };
        let with_ab = cfg.block.use_attention;
        ctx.block.train_attention_a = with_ab;
        ctx.block.train_attention_b = with_ab;

        let x = self.random([1, 3, 5, 5], -1.0, 1.0)?;
        let (y, tape) = spab_forward(&x, &params, &ctx, Mode::Train)?;
        let w = self.random(y.shape().dims(), -1.0, 1.0)?;
        let g = spab_backward(tape.as_ref().expect("train tape"), &params, &ctx, &w)?;
        let mut analytic = g.d_input.into_data();
        let mut theta = x.data().to_vec();
        for (gs, ps) in g.params.convs.iter().zip(&params.convs) {
            analytic.extend(set_grad(gs));
            theta.extend(set_grad(ps));
        }
        if with_ab {
            analytic.extend([g.d_a, g.d_b]);
            theta.extend([ctx.attention.a, ctx.attention.b]);
        }
        let n = theta.len();
        let mut xs = x.clone();
        let op = format!("spab {}", variant.name());
        self.compare(&op, Stencil::Ridders(COMPOSITE_STEP), &theta, &analytic, &w, |t| {
            let mut c = ctx;
            let body = if with_ab {
                c.attention = AttentionParams { a: t[n - 2], b: t[n - 1] };
                &t[..n - 2]
            } else {
                t
            };
            let mut parts = vec![xs.data_mut()];
            parts.extend(block_slices(&mut params));
            scatter(body, &mut parts);
            Ok(spab_forward(&xs, &params, &c, Mode::Infer)?.0)
        })
    }

    /// Every parameter of a tiny network (C'=4, B=2, r=2, 8×8 input), plus the input.
    fn network(&mut self) -> Result<()> {
        let mut cfg = SpanConfig {
            channels: 4,
            blocks: 2,
            ..SpanConfig::paper(2)
        };
        cfg.block.train_attention_a = true;
        cfg.block.train_attention_b = true;
        let mut model = SpanModel::<f64>::init(cfg, self.seed)?;
        model.params.attention = AttentionParams { a: 1.2, b: 0.9 };
        let x = self.random([1, 3, 8, 8], 0.0, 1.0)?;
        let (y, tape) = span_forward(&x, &model, Mode::Train)?;
        let w = self.random(y.shape().dims(), -1.0, 1.0)?;
        let (grads, trace) = span_backward_traced(tape.as_ref(), &w, &model)?;
        let mut analytic = trace.d_input.into_data();
        analytic.extend(flatten(&grads.slices(true, true)));
        let mut theta = x.data().to_vec();
        theta.extend(flatten(&model.params.slices(true, true)));
        let mut xs = x.clone();
        self.compare("span C'=4 B=2 r=2 (all)", Stencil::Ridders(COMPOSITE_STEP), &theta, &analytic, &w, |t| {
            let mut parts = vec![xs.data_mut()];
            parts.extend(model.params.slices_mut(true, true));
            scatter(t, &mut parts);
            Ok(span_forward(&xs, &model, Mode::Infer)?.0)
        })
    }

    fn loss(&mut self) -> Result<()> {
        let pred = self.random([1, 3, 4, 4], 0.0, 1.0)?;
        let target = self.random([1, 3, 4, 4], 0.0, 1.0)?;
        let analytic = l2_loss(&pred, &target)?.1.into_data();
        let w = Tensor4::ones(Shape4::new(1, 1, 1, 1)?);
        let mut p = pred.clone();
        self.compare("l2 loss", Stencil::Central(STEP), pred.data(), &analytic, &w, |t| {
            p.data_mut().copy_from_slice(t);
            Tensor4::from_vec(w.shape(), vec![l2_loss(&p, &target)?.0])
        })
    }
}

/// Checks the no-residual block gradient against an explicit evaluation of
/// `∂L/∂H = ∂L/∂O ⊙ (H·σ_a'(H) + σ_a(H))` pushed through the three convolutions.
/// Returns the max abs discrepancy over the input and parameter gradients.
pub fn attention_identity_error(seed: u64) -> Result<f64> {
    let cfg = SpanConfig {
        channels: 4,
        blocks: 1,
        ..SpanConfig::paper(2)
    }
    .with_variant(Variant::NoRes);
    let model = SpanModel::<f64>::init(cfg, seed)?;
    let params = &model.params.blocks[0];
    let ctx = model.block_context();
    let x = Tensor4::fill_random(Shape4::new(2, 4, 6, 6)?, seed ^ 0x1d, Distribution::Uniform { lo: -1.0, hi: 1.0 })?;
    let (y, tape) = spab_forward(&x, params, &ctx, Mode::Train)?;
    let tape = tape.expect("train tape");
    let d_out = Tensor4::fill_random(y.shape(), seed ^ 0x2e, Distribution::Uniform { lo: -1.0, hi: 1.0 })?;
    let got = spab_backward(&tape, params, &ctx, &d_out)?;

    // σ_a(h) = b·(s − ½), σ_a'(h) = a·b·s·(1 − s) with s the logistic of a·h.
    let (a, b) = (ctx.attention.a, ctx.attention.b);
    let explicit = tape.h.map(|h| {
        let s = 1.0 / (1.0 + (-a * h).exp());
        h * a * b * s * (1.0 - s) + b * (s - 0.5)
    });
    let factor = attention_grad_factor(&tape.h, &tape.input, &ctx.block, ctx.attention)?;
    let mut err = factor.max_abs_diff(&explicit)?;

    let d_h = d_out.mul(&explicit)?;
    let act = ctx.activation;
    let (d_act2, g3) = params.convs[2].backward(&tape.act2, ctx.padding, &d_h)?;
    let d_pre2 = act.backward(&tape.pre2, &d_act2)?.d_input;
    let (d_act1, g2) = params.convs[1].backward(&tape.act1, ctx.padding, &d_pre2)?;
    let d_pre1 = act.backward(&tape.pre1, &d_act1)?.d_input;
    let (d_input, g1) = params.convs[0].backward(&tape.input, ctx.padding, &d_pre1)?;

    err = err.max(got.d_input.max_abs_diff(&d_input)?);
    for (have, want) in got.params.convs.iter().zip([&g1, &g2, &g3]) {
        for (p, q) in set_grad(have).iter().zip(set_grad(want)) {
            err = err.max((p - q).abs());
        }
    }
    Ok(err)
}

/// Runs the full suite: layers, blocks of every variant, the whole network.
pub fn run_suite(opts: GradcheckOptions) -> Result<GradcheckReport> {
    let mut s = Suite {
        seed: opts.seed,
        corrupt: opts.corrupt_backward,
        ops: Vec::new(),
        draws: 0,
    };
    s.conv("conv2d 3x3 zero pad", 3, 4, 3, PadMode::Zero)?;
    s.conv("conv2d 3x3 replicate pad", 3, 4, 3, PadMode::Replicate)?;
    s.conv("conv2d 1x1", 4, 3, 1, PadMode::Zero)?;
    s.activation("silu", Activation::Silu)?;
    s.activation("leaky relu", Activation::LeakyRelu)?;
    s.attention()?;
    s.shuffle()?;
    s.rep()?;
    for v in Variant::ALL {
        s.block(v)?;
    }
    s.network()?;
    s.loss()?;
    Ok(GradcheckReport {
        ops: s.ops,
        identity_error: attention_identity_error(opts.seed)?,
        identity_tolerance: 1e-10,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_error_floor() {
        assert_eq!(rel_error(0.0, 0.0), 0.0);
        assert!((rel_error(1e-12, 0.0) - 1e-4).abs() < 1e-18);
        assert!((rel_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn compensated_contract() {
        assert_eq!(contract_diff(&[1e16, 1.0, -1e16], &[0.0; 3], &[1.0; 3]), 1.0);
    }

    #[test]
    fn suite_passes_and_corruption_fails() {
        let clean = run_suite(GradcheckOptions::default()).unwrap();
        assert!(clean.passed(), "{}", clean.table());
        let bad = run_suite(GradcheckOptions {
            corrupt_backward: true,
            ..Default::default()
        })
        .unwrap();
        assert!(!bad.passed());
    }
}
