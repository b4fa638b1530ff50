//! Closed-form divergences and small vector utilities.

use super::rng::Rng;
use crate::error::{check_dim, Error, Result};

/// Floor applied to predicted probabilities before taking logs in training
/// losses. Softmax outputs can underflow to exactly zero.
pub const PROB_FLOOR: f64 = 1e-12;

/// Tolerance used when validating that a vector lies on the simplex.
pub const SIMPLEX_TOL: f64 = 1e-6;

fn check_positive(sigma: &[f64], what: &str) -> Result<()> {
    match sigma.iter().position(|&s| !(s > 0.0) || !s.is_finite()) {
        Some(i) => Err(Error::Domain(format!(
            "{what}[{i}] = {} must be finite and strictly positive",
            sigma[i]
        ))),
        None => Ok(()),
    }
}

/// Per-dimension KL(N(qm, qs²) ‖ N(pm, ps²)) without validation.
#[inline]
fn gaussian_kl_term(qm: f64, qs: f64, pm: f64, ps: f64) -> f64 {
    let d = qm - pm;
    2.0 * (ps.ln() - qs.ln()) + (qs * qs + d * d) / (ps * ps) - 1.0
}

/// KL(N(mu, sigma²) ‖ N(0, 1)) summed over dimensions:
/// ½ Σ (μ² + σ² − ln σ² − 1).
pub fn gaussian_kl_to_std(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    check_dim(mu.len(), sigma.len())?;
    check_positive(sigma, "sigma")?;
    let mut acc = 0.0;
    for (&m, &s) in mu.iter().zip(sigma) {
        acc += (s * s + m * m) - 2.0 * s.ln() - 1.0;
    }
    Ok(0.5 * acc)
}

/// KL between two diagonal Gaussians,
/// ½ Σ (ln σp²/σq² + σq²/σp² + (μq − μp)²/σp² − 1).
pub fn gaussian_kl(q_mu: &[f64], q_sigma: &[f64], p_mu: &[f64], p_sigma: &[f64]) -> Result<f64> {
    let n = q_mu.len();
    check_dim(n, q_sigma.len())?;
    check_dim(n, p_mu.len())?;
    check_dim(n, p_sigma.len())?;
    check_positive(q_sigma, "q_sigma")?;
    check_positive(p_sigma, "p_sigma")?;
    let mut acc = 0.0;
    for i in 0..n {
        acc += gaussian_kl_term(q_mu[i], q_sigma[i], p_mu[i], p_sigma[i]);
    }
    Ok(0.5 * acc)
}

fn check_simplex(p: &[f64], what: &str) -> Result<()> {
    if let Some(i) = p.iter().position(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::Domain(format!("{what}[{i}] = {} is not a probability", p[i])));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::Domain(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

/// KL(o ‖ l) = Σ o_i ln(o_i / l_i) for two categorical distributions.
///
/// Zero-mass entries of `o` contribute nothing. A zero entry of `l` under
/// positive mass of `o` is rejected rather than returned as infinity.
pub fn categorical_kl(o: &[f64], l: &[f64]) -> Result<f64> {
    check_dim(o.len(), l.len())?;
    check_simplex(o, "o")?;
    check_simplex(l, "l")?;
    let mut acc = 0.0;
    for (i, (&oi, &li)) in o.iter().zip(l).enumerate() {
        if oi > 0.0 {
            if li <= 0.0 {
                return Err(Error::InfiniteDivergence { index: i, mass: oi });
            }
            acc += oi * (oi / li).ln();
        }
    }
    Ok(acc)
}

/// Training-path KL(o ‖ l) with `l` floored at [`PROB_FLOOR`]. No validation.
#[inline]
pub fn categorical_kl_floored(o: &[f64], l: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&oi, &li) in o.iter().zip(l) {
        if oi > 0.0 {
            acc += oi * (oi.ln() - li.max(PROB_FLOOR).ln());
        }
    }
    acc
}

/// s = μ + σ ∘ ε with ε ~ N(0, I) drawn from `rng`.
pub fn reparam_sample(mu: &[f64], sigma: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
    check_dim(mu.len(), sigma.len())?;
    if let Some(i) = sigma.iter().position(|&s| !(s >= 0.0)) {
        return Err(Error::Domain(format!("sigma[{i}] = {} is negative", sigma[i])));
    }
    let eps = rng.normal_vec(mu.len());
    Ok(reparam_with(mu, sigma, &eps))
}

/// Deterministic reparameterization with caller-supplied noise.
pub fn reparam_with(mu: &[f64], sigma: &[f64], eps: &[f64]) -> Vec<f64> {
    mu.iter()
        .zip(sigma)
        .zip(eps)
        .map(|((&m, &s), &e)| m + s * e)
        .collect()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        z += *x;
    }
    for x in v.iter_mut() {
        *x /= z;
    }
}

/// Mean of squared differences over all elements.
pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    if a.is_empty() {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    Ok(acc / a.len() as f64)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for positive `y`.
pub fn softplus_inverse(y: f64) -> f64 {
    // ln(e^y - 1) = y + ln(1 - e^-y)
    y + (-(-y).exp()).ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
