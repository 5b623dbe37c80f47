//! Step-halving learning-rate schedule.

/// `base · 0.5^floor(iteration / period)`
pub fn lr_at(iteration: u64, base: f64, period: u64) -> f64 {
    let halvings = iteration / period.max(1);
    // powi saturates to 0 for huge exponents, which is the right limit.
    base * 0.5f64.powi(halvings.min(i32::MAX as u64) as i32)
}
