use crate::error::{Error, Result};

/// Added to numerator and denominator so two empty maps give loss 0.
pub const SMOOTH: f64 = 1e-5;

/// Soft Dice loss `1 − (2Σpg + ε)/(Σp² + Σg² + ε)` and its gradient with
/// respect to `p`.
pub fn soft_dice(p: &[f64], g: &[f64]) -> Result<(f64, Vec<f64>)> {
    if p.len() != g.len() {
        return Err(Error::ShapeMismatch(format!("prediction has {} values, target {}", p.len(), g.len())));
    }
    let (mut spg, mut spp, mut sgg) = (0.0, 0.0, 0.0);
    for (&a, &b) in p.iter().zip(g) {
        spg += a * b;
        spp += a * a;
        sgg += b * b;
    }
    let num = 2.0 * spg + SMOOTH;
    let den = spp + sgg + SMOOTH;
    let loss = 1.0 - num / den;
    let den2 = den * den;
    let grad = p
        .iter()
        .zip(g)
        .map(|(&a, &b)| -(2.0 * b * den - 2.0 * a * num) / den2)
        .collect();
    Ok((loss, grad))
}
