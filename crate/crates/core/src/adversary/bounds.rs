//! Closed-form bounds on the bad-outcome probability under `O^k`.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Pow, Zero};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BoundError {
    #[error("probabilities must satisfy 0 <= p_atomic <= p_lin <= 1")]
    Probabilities,
    #[error("n, r and k must all be at least 1")]
    Counts,
}

/// `(max(0, k - r) / k)^(n - 1)`: a lower bound on the probability that
/// every object random step picks a preamble iteration no program random
/// step interleaves with.
pub fn prob_x_lower_bound(n: u64, r: u64, k: u64) -> Result<BigRational, BoundError> {
    if n == 0 || r == 0 || k == 0 {
        return Err(BoundError::Counts);
    }
    let free = k.saturating_sub(r);
    let base = BigRational::new(BigInt::from(free), BigInt::from(k));
    Ok(Pow::pow(base, (n - 1) as u32))
}

/// Upper bound on the bad-outcome probability with preamble-iterated
/// objects: `p_atomic + (1 - x) * (p_lin - p_atomic)` where `x` is
/// [`prob_x_lower_bound`].
pub fn theorem_bound(
    p_atomic: &BigRational,
    p_lin: &BigRational,
    n: u64,
    r: u64,
    k: u64,
) -> Result<BigRational, BoundError> {
    if p_atomic < &BigRational::zero() || p_atomic > p_lin || p_lin > &BigRational::one() {
        return Err(BoundError::Probabilities);
    }
    let x = prob_x_lower_bound(n, r, k)?;
    Ok(p_atomic + (BigRational::one() - x) * (p_lin - p_atomic))
}
