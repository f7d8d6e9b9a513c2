//! Double-precision definitions of the nonlinear operators.

pub const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
pub const GELU_CUBIC: f64 = 0.044715;

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Tanh-approximated GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh())
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `relu(x_i) / (sum_j relu(x_j) + eps)`.
pub fn softmax_sub(row: &[f64], eps: f64) -> Vec<f64> {
    let sum: f64 = row.iter().map(|&v| relu(v)).sum();
    row.iter().map(|&v| relu(v) / (sum + eps)).collect()
}

pub fn mean(row: &[f64]) -> f64 {
    row.iter().sum::<f64>() / row.len() as f64
}

/// `(x - mean) / sqrt(var + eps)` without the affine part.
pub fn normalize(row: &[f64], eps: f64) -> Vec<f64> {
    let mu = mean(row);
    let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / row.len() as f64;
    let r = 1.0 / (var + eps).sqrt();
    row.iter().map(|&v| (v - mu) * r).collect()
}

pub fn layernorm(row: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    normalize(row, eps)
        .iter()
        .zip(gamma.iter().zip(beta))
        .map(|(&v, (&g, &b))| v * g + b)
        .collect()
}

/// `(x - mean) * gamma + beta`.
pub fn layernorm_sub(row: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let mu = mean(row);
    row.iter()
        .zip(gamma.iter().zip(beta))
        .map(|(&v, (&g, &b))| (v - mu) * g + b)
        .collect()
}
