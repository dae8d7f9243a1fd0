//! Small numeric kernels shared by the encoder and the adaptors.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

pub(crate) const LN_EPS: f64 = 1e-5;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub fn softmax(x: ArrayView1<f64>) -> Array1<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = x.mapv(|v| (v - max).exp());
    let s = e.sum();
    e / s
}

pub fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row /= s;
    }
}

/// Row-wise layer norm. Returns `(output, normalized, inv_std)`.
pub(crate) fn layer_norm(
    x: ArrayView2<f64>,
    gamma: ArrayView1<f64>,
    beta: ArrayView1<f64>,
) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let d = x.ncols() as f64;
    let mean = x.sum_axis(Axis(1)) / d;
    let centered = &x - &mean.view().insert_axis(Axis(1));
    let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
    let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let xhat = &centered * &inv_std.view().insert_axis(Axis(1));
    let out = &xhat * &gamma + &beta;
    (out, xhat, inv_std)
}

/// Returns `∂/∂x` and accumulates `∂/∂γ`, `∂/∂β` when requested.
pub(crate) fn layer_norm_backward(
    dout: ArrayView2<f64>,
    xhat: ArrayView2<f64>,
    inv_std: ArrayView1<f64>,
    gamma: ArrayView1<f64>,
    grads: Option<(&mut Array1<f64>, &mut Array1<f64>)>,
) -> Array2<f64> {
    if let Some((dgamma, dbeta)) = grads {
        *dgamma += &(&dout * &xhat).sum_axis(Axis(0));
        *dbeta += &dout.sum_axis(Axis(0));
    }
    let d = xhat.ncols() as f64;
    let dxhat = &dout * &gamma;
    let mean_dxhat = dxhat.sum_axis(Axis(1)) / d;
    let mean_dxhat_xhat = (&dxhat * &xhat).sum_axis(Axis(1)) / d;
    let inner = &dxhat
        - &mean_dxhat.view().insert_axis(Axis(1))
        - &(&xhat * &mean_dxhat_xhat.view().insert_axis(Axis(1)));
    inner * &inv_std.view().insert_axis(Axis(1))
}

/// Fixed sinusoidal position table, `frames × d`.
pub fn sinusoidal_positions(frames: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((frames, d), |(t, i)| {
        let pair = (i / 2) as f64;
        let angle = t as f64 / 10_000f64.powf(2.0 * pair / d as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0) < 1e-300);
        assert_eq!(sigmoid(800.0), 1.0);
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn layer_norm_backward_matches_difference() {
        let x = array![[0.3, -1.2, 2.0, 0.7], [1.0, 1.5, -0.5, 0.0]];
        let gamma = array![1.1, 0.9, -0.4, 2.0];
        let beta = array![0.1, 0.0, 0.3, -0.2];
        let weights = array![[0.5, -1.0, 2.0, 0.3], [1.5, 0.2, -0.7, 1.0]];
        let loss = |x: &Array2<f64>| {
            let (y, _, _) = layer_norm(x.view(), gamma.view(), beta.view());
            (&y * &weights).sum()
        };
        let (_, xhat, inv_std) = layer_norm(x.view(), gamma.view(), beta.view());
        let dx = layer_norm_backward(weights.view(), xhat.view(), inv_std.view(), gamma.view(), None);
        for i in 0..2 {
            for j in 0..4 {
                let mut p = x.clone();
                p[[i, j]] += 1e-6;
                let mut m = x.clone();
                m[[i, j]] -= 1e-6;
                let fd = (loss(&p) - loss(&m)) / 2e-6;
                assert!((fd - dx[[i, j]]).abs() < 1e-6, "{fd} vs {}", dx[[i, j]]);
            }
        }
    }
}
