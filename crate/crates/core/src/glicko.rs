//! Glicko-2 rating updates with an additive advantage term on the expected
//! score.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Display-scale points per internal unit.
pub const SCALE: f64 = 173.7178;
pub const DISPLAY_CENTER: f64 = 1500.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound = "T: Scalar")]
pub struct GlickoParams<T> {
    /// System constant constraining volatility change.
    pub tau: T,
    /// Convergence tolerance of the volatility iteration.
    pub epsilon: T,
    pub initial_phi: T,
    pub initial_sigma: T,
}

impl<T: Scalar> Default for GlickoParams<T> {
    fn default() -> Self {
        GlickoParams {
            tau: T::lit(0.5),
            epsilon: T::lit(1e-6),
            initial_phi: T::lit(350.0 / SCALE),
            initial_sigma: T::lit(0.06),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GlickoState<T> {
    pub mu: T,
    pub phi: T,
    pub sigma: T,
    pub games: u32,
}

impl<T: Scalar> GlickoState<T> {
    pub fn initial(params: &GlickoParams<T>) -> Self {
        GlickoState { mu: T::zero(), phi: params.initial_phi, sigma: params.initial_sigma, games: 0 }
    }

    pub fn from_display(rating: T, rd: T, sigma: T) -> Self {
        let s = T::lit(SCALE);
        GlickoState { mu: (rating - T::lit(DISPLAY_CENTER)) / s, phi: rd / s, sigma, games: 0 }
    }

    pub fn display_rating(&self) -> T {
        T::lit(DISPLAY_CENTER) + T::lit(SCALE) * self.mu
    }

    pub fn display_rd(&self) -> T {
        T::lit(SCALE) * self.phi
    }

    /// Deviation growth for a period without games.
    pub fn idle(&self) -> Self {
        GlickoState { phi: (self.phi * self.phi + self.sigma * self.sigma).sqrt(), ..*self }
    }
}

/// One game in a rating period, seen from the player being updated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Matchup<T> {
    pub mu: T,
    pub phi: T,
    /// 1 win, 0.5 draw, 0 loss.
    pub score: T,
    /// Added to the player's own rating in the expected score.
    pub advantage: T,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlickoError {
    #[error("score {0} is not 0, 0.5 or 1")]
    InvalidScore(f64),
    #[error("volatility iteration did not converge")]
    NoConvergence,
}

pub fn g<T: Scalar>(phi: T) -> T {
    let pi = T::PI();
    T::one() / (T::one() + T::lit(3.0) * phi * phi / (pi * pi)).sqrt()
}

/// Expected score of a player at `mu` against `(mu_j, phi_j)`.
pub fn expected<T: Scalar>(mu: T, mu_j: T, phi_j: T) -> T {
    T::one() / (T::one() + (-g(phi_j) * (mu - mu_j)).exp())
}

/// Rating-period update. With no matchups only the deviation grows.
pub fn glicko_update<T: Scalar>(
    state: &GlickoState<T>,
    matchups: &[Matchup<T>],
    params: &GlickoParams<T>,
) -> Result<GlickoState<T>, GlickoError> {
    let half = T::lit(0.5);
    for m in matchups {
        if m.score != T::zero() && m.score != half && m.score != T::one() {
            return Err(GlickoError::InvalidScore(m.score.to_f64_lossy()));
        }
    }
    if matchups.is_empty() {
        return Ok(state.idle());
    }
    let (mu, phi, sigma) = (state.mu, state.phi, state.sigma);

    let mut inv_v = T::zero();
    let mut sum = T::zero();
    for m in matchups {
        let gj = g(m.phi);
        let e = expected(mu + m.advantage, m.mu, m.phi);
        inv_v += gj * gj * e * (T::one() - e);
        sum += gj * (m.score - e);
    }
    let v = T::one() / inv_v;
    let delta = v * sum;

    let sigma_new = new_volatility(phi, sigma, v, delta, params)?;
    let phi_star = (phi * phi + sigma_new * sigma_new).sqrt();
    let phi_new = T::one() / (T::one() / (phi_star * phi_star) + inv_v).sqrt();
    let mu_new = mu + phi_new * phi_new * sum;
    Ok(GlickoState {
        mu: mu_new,
        phi: phi_new,
        sigma: sigma_new,
        games: state.games + matchups.len() as u32,
    })
}

fn new_volatility<T: Scalar>(phi: T, sigma: T, v: T, delta: T, params: &GlickoParams<T>) -> Result<T, GlickoError> {
    let tau = params.tau;
    let a = (sigma * sigma).ln();
    let phi2 = phi * phi;
    let d2 = delta * delta;
    let two = T::lit(2.0);
    let f = |x: T| {
        let ex = x.exp();
        let denom = phi2 + v + ex;
        ex * (d2 - phi2 - v - ex) / (two * denom * denom) - (x - a) / (tau * tau)
    };

    let mut big_a = a;
    let mut big_b = if d2 > phi2 + v {
        (d2 - phi2 - v).ln()
    } else {
        let mut k = T::one();
        while f(a - k * tau) < T::zero() {
            k += T::one();
            if k > T::lit(1e4) {
                return Err(GlickoError::NoConvergence);
            }
        }
        a - k * tau
    };
    let mut fa = f(big_a);
    let mut fb = f(big_b);
    let mut iterations = 0;
    while (big_b - big_a).abs() > params.epsilon {
        let c = big_a + (big_a - big_b) * fa / (fb - fa);
        let fc = f(c);
        if fc * fb <= T::zero() {
            big_a = big_b;
            fa = fb;
        } else {
            fa = fa / two;
        }
        big_b = c;
        fb = fc;
        iterations += 1;
        if iterations > 1000 {
            return Err(GlickoError::NoConvergence);
        }
    }
    Ok((big_a / two).exp())
}
