//! Central finite-difference gradient checking.
//!
//! Used by the test suites to validate every hand-written backward pass.
//! Checks run in `f64`; the step and error floor are chosen so that
//! round-off noise stays well below the pass threshold.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::Parameter;
use super::tensor::Tensor;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Numerically estimates `df/dx_i` for every coordinate with central
/// differences. `f` may mutate internal caches but must be a pure
/// function of `x`.
pub fn central_diff_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Largest relative error between two gradient vectors.
///
/// The denominator is floored at `1e-6` so that coordinates where both
/// gradients vanish compare as equal instead of dividing by zero.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    max_rel_err_floor(analytic, numeric, 1e-6)
}

/// [`max_rel_err`] with an explicit denominator floor.
///
/// Whole-network objectives reach O(10), which puts the cancellation
/// noise of a finite difference near 1e-9; coordinates whose true
/// gradient is zero (for example a bias immediately followed by batch
/// norm) then need a floor above that noise, and the comparison for
/// them degrades gracefully into an absolute check at `floor * tol`.
pub fn max_rel_err_floor(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Five-point central-difference gradient, accurate to `O(h^4)`. Used
/// for whole-network checks where third-derivative truncation of the
/// three-point stencil is visible next to small gradient entries.
pub fn central_diff_grad5(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe[i];
        let mut at = |v: f64, probe: &mut Vec<f64>| {
            probe[i] = v;
            f(probe)
        };
        let f_m2 = at(orig - 2.0 * h, &mut probe);
        let f_m1 = at(orig - h, &mut probe);
        let f_p1 = at(orig + h, &mut probe);
        let f_p2 = at(orig + 2.0 * h, &mut probe);
        probe[i] = orig;
        grad[i] = (f_m2 - 8.0 * f_m1 + 8.0 * f_p1 - f_p2) / (12.0 * h);
    }
    grad
}

/// Uniform draw in `[-1, 1]` pushed away from zero, so checks of kinked
/// ops (relu, clamp) never sample within a finite-difference step of the
/// kink.
pub fn sample_away_from_zero(rng: &mut ChaCha8Rng) -> f64 {
    let v = rng.random::<f64>() * 2.0 - 1.0;
    v + 0.05 * v.signum()
}

/// Checks one differentiable op: the analytic input gradient and every
/// parameter gradient against central finite differences, under a fixed
/// random linear projection of the output. Returns the worst relative
/// error seen.
///
/// `forward` must be a pure function of the input and the op's
/// parameters (train-mode caches and running statistics may mutate);
/// `backward` is called once after a fresh forward.
pub fn op_max_rel_err<L>(
    layer: &mut L,
    x_shape: &[usize],
    seed: u64,
    mut forward: impl FnMut(&mut L, &Tensor<f64>) -> Tensor<f64>,
    mut backward: impl FnMut(&mut L, &Tensor<f64>) -> Tensor<f64>,
    mut params_of: impl FnMut(&mut L) -> Vec<&mut Parameter<f64>>,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = x_shape.iter().product();
    let x0: Vec<f64> = (0..n).map(|_| sample_away_from_zero(&mut rng)).collect();
    let x_t = Tensor::from_vec(x_shape, x0.clone()).unwrap();

    let y = forward(layer, &x_t);
    let proj: Vec<f64> = (0..y.len()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let objective = |y: &Tensor<f64>, proj: &[f64]| -> f64 {
        y.data().iter().zip(proj).map(|(a, b)| a * b).sum()
    };

    for p in params_of(layer) {
        p.zero_grad();
    }
    let y = forward(layer, &x_t);
    let dy = Tensor::from_vec(y.shape(), proj.clone()).unwrap();
    let dx = backward(layer, &dy);
    let analytic_input = dx.data().to_vec();
    let analytic_params: Vec<Vec<f64>> = params_of(layer)
        .iter()
        .map(|p| p.grad.data().to_vec())
        .collect();

    let numeric_input = central_diff_grad(&x0, DEFAULT_STEP, |v| {
        let xt = Tensor::from_vec(x_shape, v.to_vec()).unwrap();
        objective(&forward(layer, &xt), &proj)
    });
    let mut worst = max_rel_err(&analytic_input, &numeric_input);

    let n_params = params_of(layer).len();
    for pi in 0..n_params {
        let p0 = params_of(layer)[pi].value.data().to_vec();
        let numeric = central_diff_grad(&p0, DEFAULT_STEP, |v| {
            params_of(layer)[pi].value.data_mut().copy_from_slice(v);
            objective(&forward(layer, &x_t), &proj)
        });
        params_of(layer)[pi].value.data_mut().copy_from_slice(&p0);
        worst = worst.max(max_rel_err(&analytic_params[pi], &numeric));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_analytic_gradient_of_quadratic() {
        // f(x) = sum x_i^2, df/dx_i = 2 x_i
        let x = [0.3, -1.2, 2.0];
        let num = central_diff_grad(&x, DEFAULT_STEP, |v| v.iter().map(|a| a * a).sum());
        let ana: Vec<f64> = x.iter().map(|a| 2.0 * a).collect();
        assert!(max_rel_err(&ana, &num) < 1e-8);
    }

    #[test]
    fn rel_err_treats_double_zero_as_equal() {
        assert_eq!(max_rel_err(&[0.0], &[0.0]), 0.0);
    }
}
