//! Central finite-difference checks of analytic gradients (64-bit).

use ndarray::ArrayD;

use crate::autograd::{no_grad, Var};

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`; zero when both are zero.
pub fn relative_error(a: &ArrayD<f64>, b: &ArrayD<f64>) -> f64 {
    let diff = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

/// Central-difference gradient of scalar `f` with respect to `inputs[which]`.
pub fn numerical_gradient<F>(f: &F, inputs: &[ArrayD<f64>], which: usize, h: f64) -> ArrayD<f64>
where
    F: Fn(&[Var<f64>]) -> Var<f64>,
{
    let eval = |perturbed: &ArrayD<f64>| -> f64 {
        no_grad(|| {
            let vars: Vec<Var<f64>> = inputs
                .iter()
                .enumerate()
                .map(|(i, a)| {
                    if i == which {
                        Var::constant(perturbed.clone())
                    } else {
                        Var::constant(a.clone())
                    }
                })
                .collect();
            f(&vars).item()
        })
    };
    let mut x = inputs[which].clone();
    let mut grad = ArrayD::zeros(x.raw_dim());
    let n = x.len();
    for i in 0..n {
        let orig = x.as_slice().unwrap()[i];
        x.as_slice_mut().unwrap()[i] = orig + h;
        let fp = eval(&x);
        x.as_slice_mut().unwrap()[i] = orig - h;
        let fm = eval(&x);
        x.as_slice_mut().unwrap()[i] = orig;
        grad.as_slice_mut().unwrap()[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Analytic gradients of `f` for every input.
pub fn analytic_gradients<F>(f: &F, inputs: &[ArrayD<f64>]) -> Vec<ArrayD<f64>>
where
    F: Fn(&[Var<f64>]) -> Var<f64>,
{
    let vars: Vec<Var<f64>> = inputs
        .iter()
        .map(|a| Var::input(a.as_standard_layout().into_owned()))
        .collect();
    let grads = f(&vars).backward();
    vars.iter()
        .map(|v| {
            grads
                .get(v)
                .cloned()
                .unwrap_or_else(|| ArrayD::zeros(v.value().raw_dim()))
        })
        .collect()
}

/// Largest relative error between analytic and finite-difference gradients
/// across all inputs.
pub fn check_gradients<F>(f: F, inputs: &[ArrayD<f64>], h: f64) -> f64
where
    F: Fn(&[Var<f64>]) -> Var<f64>,
{
    let inputs: Vec<ArrayD<f64>> = inputs
        .iter()
        .map(|a| a.as_standard_layout().into_owned())
        .collect();
    let analytic = analytic_gradients(&f, &inputs);
    (0..inputs.len())
        .map(|i| relative_error(&analytic[i], &numerical_gradient(&f, &inputs, i, h)))
        .fold(0.0, f64::max)
}
