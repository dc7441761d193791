/// Central-difference gradient of `f` at `x`.
pub fn finite_difference_gradient<F>(f: &mut F, x: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let mut probe = x.to_vec();
    let mut scratch = vec![0.0; x.len()];
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe, &mut scratch);
            probe[i] = x[i] - step;
            let down = f(&probe, &mut scratch);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Largest per-coordinate relative disagreement between the analytic
/// gradient and central differences:
/// `max |g_fd − g| / (|g| + |g_fd| + 1e-12)`.
pub fn check_gradient<F>(f: &mut F, x: &[f64], step: f64) -> f64
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let mut analytic = vec![0.0; x.len()];
    f(x, &mut analytic);
    let numeric = finite_difference_gradient(f, x, step);
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (n - a).abs() / (a.abs() + n.abs() + 1e-12))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_objective_is_exact() {
        let mut f = |x: &[f64], g: &mut [f64]| {
            g.copy_from_slice(&[3.0, -2.0, 0.5]);
            3.0 * x[0] - 2.0 * x[1] + 0.5 * x[2] + 1.0
        };
        assert!(check_gradient(&mut f, &[0.3, -1.2, 4.0], 1e-5) <= 1e-10);
    }

    #[test]
    fn quadratic_objective_is_exact() {
        let mut f = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * x[0] + x[1];
            g[1] = x[0] + 6.0 * x[1];
            x[0] * x[0] + x[0] * x[1] + 3.0 * x[1] * x[1]
        };
        assert!(check_gradient(&mut f, &[0.7, -0.4], 1e-5) <= 1e-9);
    }

    #[test]
    fn detects_wrong_gradient() {
        let mut f = |x: &[f64], g: &mut [f64]| {
            g[0] = 3.0 * x[0];
            x[0] * x[0]
        };
        assert!(check_gradient(&mut f, &[1.0], 1e-5) > 0.1);
    }

    /// Hand-written loss of a 3-layer tanh network, independent of the
    /// crate's layer code: L = ½ Σ (W3 tanh(W2 tanh(W1 x)) − t)².
    #[test]
    fn tanh_network_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sizes = [4usize, 5, 3, 2];
        let n_params: usize = sizes.windows(2).map(|w| w[0] * w[1]).sum();
        let theta: Vec<f64> = (0..n_params).map(|_| rng.random_range(-1.0..1.0)).collect();
        let input: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target = [0.3, -0.2];
        let mut f = |p: &[f64], g: &mut [f64]| {
            let mut acts = vec![input.clone()];
            let mut off = 0;
            for (l, w) in sizes.windows(2).enumerate() {
                let a = acts.last().unwrap();
                let mut z = vec![0.0; w[1]];
                for o in 0..w[1] {
                    for i in 0..w[0] {
                        z[o] += p[off + o * w[0] + i] * a[i];
                    }
                }
                off += w[0] * w[1];
                if l < 2 {
                    z.iter_mut().for_each(|v| *v = v.tanh());
                }
                acts.push(z);
            }
            let out = acts.last().unwrap().clone();
            let mut delta: Vec<f64> = out.iter().zip(&target).map(|(o, t)| o - t).collect();
            let loss = 0.5 * delta.iter().map(|d| d * d).sum::<f64>();
            let mut off = n_params;
            for l in (0..3).rev() {
                let (fi, fo) = (sizes[l], sizes[l + 1]);
                off -= fi * fo;
                let a = &acts[l];
                for o in 0..fo {
                    for i in 0..fi {
                        g[off + o * fi + i] = delta[o] * a[i];
                    }
                }
                if l > 0 {
                    let mut prev = vec![0.0; fi];
                    for i in 0..fi {
                        for o in 0..fo {
                            prev[i] += p[off + o * fi + i] * delta[o];
                        }
                        prev[i] *= 1.0 - a[i] * a[i];
                    }
                    delta = prev;
                }
            }
            loss
        };
        assert!(check_gradient(&mut f, &theta, 1e-5) <= 1e-4);
    }
}
