//! SURE against Monte-Carlo risk on a small seeded instance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use sumx::subspace::{sure_hard_threshold, svd_thin, true_mse_curve};
use sumx::StackMatrix;

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

#[test]
fn sure_tracks_monte_carlo_risk() {
    let (m, n, sigma) = (8, 6, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(164);
    let u = svd_thin(&StackMatrix::new(m, 2, gaussian(&mut rng, m * 2)).unwrap()).unwrap();
    let v = svd_thin(&StackMatrix::new(n, 2, gaussian(&mut rng, n * 2)).unwrap()).unwrap();
    // singular values 40 and 20, noise edge near 5.5. SURE omits the jump of
    // hard thresholding, so every δ sits in a gap of the spectrum.
    let x: Vec<f64> = (0..n)
        .flat_map(|j| (0..m).map(move |i| (i, j)))
        .map(|(i, j)| 40.0 * u.u_column(0)[i] * v.u_column(0)[j] + 20.0 * u.u_column(1)[i] * v.u_column(1)[j])
        .collect();
    let truth = StackMatrix::new(m, n, x.clone()).unwrap();
    let deltas = [9.0, 12.0, 30.0];
    // an 8×6 draw is noisy; this many keeps the standard error near 0.3%
    let draws = 20_000;
    let (mut sure, mut mse) = ([0.0; 3], [0.0; 3]);
    for _ in 0..draws {
        let y: Vec<f64> = x.iter().zip(gaussian(&mut rng, m * n)).map(|(a, z)| a + sigma * z).collect();
        let d = svd_thin(&StackMatrix::new(m, n, y).unwrap()).unwrap();
        let risk = true_mse_curve(&d, &truth, &deltas).unwrap();
        for i in 0..3 {
            sure[i] += sure_hard_threshold(d.singular_values(), m, n, sigma, deltas[i]).unwrap();
            mse[i] += risk[i];
        }
    }
    for i in 0..3 {
        let rel = (sure[i] - mse[i]).abs() / mse[i];
        assert!(rel <= 0.02, "δ={}: SURE {} MSE {} ({rel})", deltas[i], sure[i] / draws as f64, mse[i] / draws as f64);
    }
}
