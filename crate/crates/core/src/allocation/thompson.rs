use rand::Rng;
use rand_distr::{Beta, Distribution};

use super::{AllocationProbabilities, ArmState};
use crate::error::{Error, Result};

/// Monte Carlo estimate of the posterior probability that each arm has the
/// largest success rate. Exact ties are broken uniformly.
pub fn posterior_best_probabilities<R: Rng + ?Sized>(
    states: &[ArmState],
    draws: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if draws == 0 {
        return Err(Error::InvalidRule("m_ts must be >= 1".into()));
    }
    let posteriors = states
        .iter()
        .map(|s| {
            let (a, b) = s.posterior();
            Beta::new(a, b).map_err(|e| Error::InvalidRule(format!("Beta({a}, {b}): {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut wins = vec![0u64; states.len()];
    for _ in 0..draws {
        let mut best = 0;
        let mut best_value = f64::NEG_INFINITY;
        let mut ties = 1u32;
        for (k, dist) in posteriors.iter().enumerate() {
            let x = dist.sample(rng);
            if x > best_value {
                best = k;
                best_value = x;
                ties = 1;
            } else if x == best_value {
                ties += 1;
                if rng.random_range(0..ties) == 0 {
                    best = k;
                }
            }
        }
        wins[best] += 1;
    }
    Ok(wins.into_iter().map(|w| w as f64 / draws as f64).collect())
}

/// Thompson allocation with aggressiveness `c`: `pi_k` proportional to
/// `w_k^c`, where `w_k` is the posterior probability that arm `k` is best.
pub fn ts_probabilities<R: Rng + ?Sized>(
    states: &[ArmState],
    c: f64,
    draws: usize,
    rng: &mut R,
) -> Result<AllocationProbabilities> {
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::InvalidRule(format!(
            "TS tuning c = {c} must be >= 0"
        )));
    }
    if c == 0.0 {
        return Ok(AllocationProbabilities::uniform(states.len()));
    }
    let w = posterior_best_probabilities(states, draws, rng)?;
    AllocationProbabilities::from_weights(w.into_iter().map(|x| x.powf(c)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn zero_aggressiveness_is_uniform() {
        let mut rng = stream(3, 0);
        let states = [
            ArmState::new(10, 0),
            ArmState::new(0, 10),
            ArmState::new(1, 1),
        ];
        let p = ts_probabilities(&states, 0.0, 100, &mut rng).unwrap();
        assert_eq!(p.as_slice(), &[1.0 / 3.0; 3]);
    }

    #[test]
    fn best_arm_probability_matches_exact_integral() {
        // P(X > Y) for X ~ Beta(2,1), Y ~ Beta(1,2) is 5/6.
        let mut rng = stream(4, 0);
        let states = [ArmState::new(1, 0), ArmState::new(0, 1)];
        let m = 400_000;
        let p = ts_probabilities(&states, 1.0, m, &mut rng).unwrap();
        let se = (5.0 / 36.0 / m as f64).sqrt();
        assert!((p.as_slice()[0] - 5.0 / 6.0).abs() < 4.0 * se, "{:?}", p);
    }

    #[test]
    fn identical_posteriors_are_symmetric() {
        let mut rng = stream(5, 0);
        let states = [ArmState::new(3, 4); 3];
        let m = 90_000;
        let w = posterior_best_probabilities(&states, m, &mut rng).unwrap();
        let se = (2.0 / 9.0 / m as f64).sqrt();
        for x in w {
            assert!((x - 1.0 / 3.0).abs() < 4.0 * se);
        }
    }

    #[test]
    fn invalid_parameters() {
        let mut rng = stream(6, 0);
        let states = [ArmState::new(0, 0); 2];
        assert!(ts_probabilities(&states, -1.0, 10, &mut rng).is_err());
        assert!(ts_probabilities(&states, 1.0, 0, &mut rng).is_err());
    }
}
