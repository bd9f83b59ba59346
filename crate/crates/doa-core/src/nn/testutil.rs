//! Shared finite-difference gradient checking for layer tests.
//!
//! A layer's scalar test loss is `sum(output * R)` for a fixed random `R`,
//! so the analytic gradient is obtained by running the backward pass with
//! `R` as the output gradient. Central differences at f64 with a
//! scale-aware step give ~1e-9 absolute accuracy, comfortably inside the
//! 1e-4 relative budget.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::params::{Grads, ParamStore};
use super::tensor::Tensor;

pub(crate) const MAX_RELATIVE_ERROR: f64 = 1e-4;

pub(crate) fn seeded_tensor(shape: [usize; 3], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = shape[0] * shape[1] * shape[2];
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn loss_weights(shape: [usize; 3]) -> Tensor<f64> {
    seeded_tensor(shape, 0xC0FFEE)
}

fn weighted_sum(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

pub(crate) fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Check analytic parameter gradients of one layer against central finite
/// differences on `samples` coordinates per trainable block.
pub(crate) fn check_param_gradients<C>(
    p: &ParamStore<f64>,
    x: &Tensor<f64>,
    fwd: impl Fn(&ParamStore<f64>, &Tensor<f64>) -> (Tensor<f64>, C),
    bwd: impl Fn(&ParamStore<f64>, &C, &Tensor<f64>, &mut Grads<f64>) -> Tensor<f64>,
    samples: usize,
) {
    let (y, cache) = fwd(p, x);
    let r = loss_weights(y.shape());
    let mut grads = Grads::zeros_like(p);
    bwd(p, &cache, &r, &mut grads);

    let mut rng = ChaCha12Rng::seed_from_u64(0xFD);
    let names: Vec<String> = p
        .iter()
        .filter(|(_, b)| b.trainable)
        .map(|(n, _)| n.clone())
        .collect();
    for name in names {
        let len = p.get(&name).data.len();
        for _ in 0..samples.min(len) {
            let idx = rng.random_range(0..len);
            let theta = p.get(&name).data[idx];
            let h = 1e-5 * theta.abs().max(1.0);
            let mut plus = p.clone();
            plus.get_mut(&name).data[idx] = theta + h;
            let mut minus = p.clone();
            minus.get_mut(&name).data[idx] = theta - h;
            let fd = (weighted_sum(&fwd(&plus, x).0, &r) - weighted_sum(&fwd(&minus, x).0, &r))
                / (2.0 * h);
            let analytic = grads.block(&name)[idx];
            let err = relative_error(analytic, fd);
            assert!(
                err < MAX_RELATIVE_ERROR,
                "{name}[{idx}]: analytic {analytic:.3e} vs fd {fd:.3e} (rel {err:.3e})"
            );
        }
    }
}

/// Check the analytic input gradient of one layer against central finite
/// differences on `samples` input coordinates.
pub(crate) fn check_input_gradient<C>(
    p: &ParamStore<f64>,
    x: &Tensor<f64>,
    fwd: impl Fn(&ParamStore<f64>, &Tensor<f64>) -> (Tensor<f64>, C),
    bwd: impl Fn(&ParamStore<f64>, &C, &Tensor<f64>, &mut Grads<f64>) -> Tensor<f64>,
    samples: usize,
) {
    let (y, cache) = fwd(p, x);
    let r = loss_weights(y.shape());
    let mut grads = Grads::zeros_like(p);
    let gin = bwd(p, &cache, &r, &mut grads);

    let mut rng = ChaCha12Rng::seed_from_u64(0xFE);
    for _ in 0..samples.min(x.len()) {
        let idx = rng.random_range(0..x.len());
        let v = x.data()[idx];
        let h = 1e-5 * v.abs().max(1.0);
        let mut plus = x.clone();
        plus.data_mut()[idx] = v + h;
        let mut minus = x.clone();
        minus.data_mut()[idx] = v - h;
        let fd = (weighted_sum(&fwd(p, &plus).0, &r) - weighted_sum(&fwd(p, &minus).0, &r))
            / (2.0 * h);
        let analytic = gin.data()[idx];
        let err = relative_error(analytic, fd);
        assert!(
            err < MAX_RELATIVE_ERROR,
            "input[{idx}]: analytic {analytic:.3e} vs fd {fd:.3e} (rel {err:.3e})"
        );
    }
}
