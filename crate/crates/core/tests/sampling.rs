use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wpfm_core::data::{sample_vmf, uniform_direction, vmf_mean_resultant};
use wpfm_core::vecops::{dot, norm};

#[test]
fn vmf_mean_resultant_within_three_standard_errors() {
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for d in [3, 8] {
        let mu = uniform_direction(d, &mut rng);
        for kappa in [1.0, 10.0, 100.0] {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..n {
                let x = sample_vmf(&mu, kappa, &mut rng);
                assert!((norm(&x) - 1.0).abs() < 1e-12);
                let c = dot(&x, &mu);
                sum += c;
                sum_sq += c * c;
            }
            let mean = sum / n as f64;
            let se = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
            let expected = vmf_mean_resultant(d, kappa);
            assert!(
                (mean - expected).abs() <= 3.0 * se,
                "d={d} kappa={kappa}: sample {mean} vs analytic {expected} (se {se})"
            );
        }
    }
}

#[test]
fn uniform_directions_have_no_preferred_axis() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 20_000;
    let mut mean = vec![0.0; 5];
    for _ in 0..n {
        for (m, x) in mean.iter_mut().zip(uniform_direction(5, &mut rng)) {
            *m += x / n as f64;
        }
    }
    // each coordinate has variance 1/d, so the mean has se sqrt(1/(d n))
    let se = (1.0 / (5.0 * n as f64)).sqrt();
    assert!(mean.iter().all(|m| m.abs() < 4.0 * se), "{mean:?}");
}
