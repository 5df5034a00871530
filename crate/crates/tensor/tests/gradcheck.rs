//! Analytic gradients against central finite differences, in double
//! precision, on small random tensors.

use bgop_tensor::{ConvGeometry, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Checks d/d(inputs) of `Σ probe ⊙ f(inputs)`.
fn check(
    inputs: &[Tensor<f64>],
    f: impl Fn(&[Var<f64>]) -> Var<f64>,
    tol: f64,
    rng: &mut ChaCha8Rng,
) {
    let vars: Vec<_> = inputs.iter().cloned().map(Var::leaf).collect();
    let out = f(&vars);
    let probe = random(out.shape(), -1.0, 1.0, rng);
    let grads = out.backward_with(probe.clone()).unwrap();

    let objective = |ts: &[Tensor<f64>]| -> f64 {
        let vs: Vec<_> = ts.iter().cloned().map(Var::constant).collect();
        let o = f(&vs);
        o.value().data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
    };

    let h = 1e-6;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(&vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
        let mut numeric = vec![0.0; input.len()];
        for i in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            numeric[i] = (objective(&plus) - objective(&minus)) / (2.0 * h);
        }
        let diff: f64 = analytic.data().iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let scale = analytic.data().iter().map(|a| a * a).sum::<f64>().sqrt().max(
            numeric.iter().map(|n| n * n).sum::<f64>().sqrt(),
        );
        let rel = diff / scale.max(1e-12);
        assert!(rel < tol, "input {k}: relative gradient error {rel:e}");
    }
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for &(k, s, p) in &[(3, 1, 1), (5, 2, 2)] {
        let x = random(&[2, 2, 4, 4], -1.0, 1.0, &mut rng);
        let w = random(&[3, 2, k, k], -0.5, 0.5, &mut rng);
        let b = random(&[3], -0.5, 0.5, &mut rng);
        check(
            &[x, w, b],
            |v| v[0].conv2d(&v[1], Some(&v[2]), ConvGeometry::new(k, s, p)).unwrap(),
            1e-6,
            &mut rng,
        );
    }
}

#[test]
fn conv_transpose2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for &(k, s, p, op) in &[(3, 2, 1, 1), (5, 2, 2, 1), (3, 1, 1, 0)] {
        let x = random(&[2, 3, 2, 2], -1.0, 1.0, &mut rng);
        let w = random(&[3, 2, k, k], -0.5, 0.5, &mut rng);
        let b = random(&[2], -0.5, 0.5, &mut rng);
        check(
            &[x, w, b],
            |v| v[0].conv_transpose2d(&v[1], Some(&v[2]), ConvGeometry::new(k, s, p), op).unwrap(),
            1e-6,
            &mut rng,
        );
    }
}

#[test]
fn gdn_gradients_both_directions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for inverse in [false, true] {
        let x = random(&[1, 3, 4, 4], -3.0, 3.0, &mut rng);
        let beta = random(&[3], 0.2, 2.0, &mut rng);
        let gamma = random(&[3, 3], 0.0, 0.5, &mut rng);
        check(&[x, beta, gamma], |v| v[0].gdn(&v[1], &v[2], inverse).unwrap(), 1e-6, &mut rng);
    }
}

#[test]
fn warp_gradients_at_fractional_offsets() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let frame = Tensor::from_fn(&[1, 2, 4, 4], |i| ((i as f64) * 0.37).sin());
    // fractional flows that keep every sample strictly inside the grid and
    // away from integer kernel corners
    let flow = Tensor::from_fn(&[1, 2, 4, 4], |i| {
        let p = i % 16;
        let (y, x) = ((p / 4) as f64, (p % 4) as f64);
        let target = if i < 16 { 1.5 + 0.1 * (x - 1.5) } else { 1.5 + 0.1 * (y - 1.5) };
        let base = if i < 16 { x } else { y };
        target - base + 0.013 * (p as f64 % 3.0)
    });
    check(&[frame, flow], |v| v[0].warp(&v[1]).unwrap(), 1e-6, &mut rng);
}

#[test]
fn blend_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random(&[2, 3, 3, 3], 0.0, 1.0, &mut rng);
    let b = random(&[2, 3, 3, 3], 0.0, 1.0, &mut rng);
    let m = random(&[2, 1, 3, 3], 0.05, 0.95, &mut rng);
    check(&[a, b, m], |v| Var::blend(&v[0], &v[1], &v[2]).unwrap(), 1e-7, &mut rng);
}

#[test]
fn pyramid_and_pointwise_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&[1, 2, 4, 4], -2.0, 2.0, &mut rng);
    check(std::slice::from_ref(&x), |v| v[0].avg_pool2().unwrap(), 1e-7, &mut rng);
    check(std::slice::from_ref(&x), |v| v[0].upsample2().unwrap(), 1e-7, &mut rng);
    check(std::slice::from_ref(&x), |v| v[0].softplus().sigmoid(), 1e-6, &mut rng);
    let y = random(&[1, 2, 4, 4], -2.0, 2.0, &mut rng);
    check(&[x.clone(), y], |v| v[0].mse(&v[1]).unwrap(), 1e-6, &mut rng);
    check(&[x], |v| v[0].leaky_relu(0.1).mul(&v[0]).unwrap().mean(), 1e-6, &mut rng);
}
