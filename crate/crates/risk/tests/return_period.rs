//! Monte-Carlo check of the return-period semantics: on i.i.d. reference
//! data, a fresh draw falls below the 1/T quantile with frequency close to
//! 1/T (the Weibull plotting position makes this unbiased for uniforms).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swigan_risk::{abnormal_pixels, yearly_swi, YearlyReference};

#[test]
fn abnormality_frequency_matches_inverse_return_period() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let return_period = 25.0f64;
    let p = 1.0 / return_period;
    let n_ref = 40;
    let n_draws = 20_000;

    let mut hits = 0usize;
    for _ in 0..n_draws {
        let mut reference = YearlyReference::new(1);
        for _ in 0..n_ref {
            reference.push_year(&[rng.gen::<f32>()]);
        }
        let fresh = rng.gen::<f32>();
        if abnormal_pixels(&[fresh], &reference, return_period).unwrap()[0] {
            hits += 1;
        }
    }
    let freq = hits as f64 / n_draws as f64;
    let se = (p * (1.0 - p) / n_draws as f64).sqrt();
    assert!(
        (freq - p).abs() <= 3.0 * se,
        "abnormality frequency {freq:.5} vs expected {p:.5} (3 SE = {:.5})",
        3.0 * se
    );
}

/// Eligibility depends only on yearly minima: permuting the months inside a
/// year leaves the driest-month raster unchanged.
#[test]
fn intra_year_ordering_is_irrelevant() {
    let months: Vec<Vec<f32>> = (0..12)
        .map(|m| {
            (0..9)
                .map(|p| ((m * 5 + p * 11) % 13) as f32 * 0.07)
                .collect()
        })
        .collect();
    let refs: Vec<&[f32]> = months.iter().map(|m| m.as_slice()).collect();
    let base = yearly_swi(&refs).unwrap();

    let perm = [7usize, 2, 9, 0, 11, 4, 1, 8, 3, 10, 5, 6];
    let shuffled: Vec<&[f32]> = perm.iter().map(|&i| months[i].as_slice()).collect();
    assert_eq!(yearly_swi(&shuffled).unwrap(), base);
}
