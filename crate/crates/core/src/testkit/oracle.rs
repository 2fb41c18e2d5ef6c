//! Naive reference implementations. They deliberately avoid the production
//! helpers and work on plain slices.

use crate::event::Event;
use crate::pv::PvVariant;

/// Possession index by counting team changes among control actions up to
/// and including each event.
pub fn oracle_segment(events: &[Event]) -> Vec<u32> {
    (0..events.len())
        .map(|k| {
            let controls: Vec<&Event> = events[..=k].iter().filter(|e| e.is_control()).collect();
            controls.windows(2).filter(|w| w[0].team_id != w[1].team_id).count() as u32
        })
        .collect()
}

/// Effective clock by direct summation over each half.
pub fn oracle_effective_times(events: &[Event], cap: f64) -> Vec<f64> {
    (0..events.len())
        .map(|k| {
            let mut t = 0.0;
            for j in 1..=k {
                if events[j].half != events[k].half || events[j - 1].half != events[k].half {
                    continue;
                }
                if events[j].set_piece.is_none() {
                    t += (events[j].wall_clock_s - events[j - 1].wall_clock_s).min(cap);
                }
            }
            t
        })
        .collect()
}

/// Plain-slice match data for the PV oracle.
pub struct OracleMatch<'a> {
    pub events: &'a [Event],
    pub possession: &'a [u32],
    pub time: &'a [f64],
    pub xg: &'a [Option<f64>],
}

fn control_value(m: &OracleMatch, i: usize, variant: PvVariant, gamma: f64, horizon: f64) -> f64 {
    let ei = &m.events[i];
    let mut own = 1.0;
    let mut opp = 1.0;
    for j in 0..m.events.len() {
        let ej = &m.events[j];
        let is_shot = ej.action.as_str() == "shot" || ej.action.as_str() == "penalty";
        if !is_shot || ej.half != ei.half || m.time[j] < m.time[i] {
            continue;
        }
        let x = m.xg[j].expect("oracle needs xG on every shot");
        let dt = m.time[j] - m.time[i];
        match variant {
            PvVariant::Basic => {
                if m.possession[j] == m.possession[i] {
                    own *= 1.0 - x;
                }
            }
            PvVariant::Decay => {
                if m.possession[j] == m.possession[i] {
                    own *= 1.0 - gamma.powf(dt) * x;
                }
            }
            PvVariant::Risk => {
                if dt <= horizon {
                    if ej.team_id == ei.team_id {
                        own *= 1.0 - gamma.powf(dt) * x;
                    } else {
                        opp *= 1.0 - gamma.powf(dt) * x;
                    }
                }
            }
        }
    }
    (1.0 - own) - if variant == PvVariant::Risk { 1.0 - opp } else { 0.0 }
}

/// PV for every control action and labelable duel, `None` elsewhere.
pub fn oracle_pv(m: &OracleMatch, variant: PvVariant, gamma: f64, horizon: f64) -> Vec<Option<f64>> {
    let n = m.events.len();
    let mut out = vec![None; n];
    for i in 0..n {
        if matches!(m.events[i].action.as_str(), "aerial_duel" | "ground_duel") {
            let mut j = i + 1;
            while j < n && m.events[j].half == m.events[i].half {
                if m.events[j].is_control() {
                    let v = control_value(m, j, variant, gamma, horizon);
                    out[i] = Some(if m.events[j].team_id == m.events[i].team_id { v } else { -v });
                    break;
                }
                j += 1;
            }
        } else if m.events[i].is_control() {
            out[i] = Some(control_value(m, i, variant, gamma, horizon));
        }
    }
    out
}

/// One Glicko-2 rating period on the published 1500/350 scale, step by step.
/// Opponents are `(rating, rd, score)`. Returns `(rating, rd, volatility)`.
pub fn oracle_glicko(rating: f64, rd: f64, vol: f64, opponents: &[(f64, f64, f64)], tau: f64) -> (f64, f64, f64) {
    const K: f64 = 173.7178;
    let mu = (rating - 1500.0) / K;
    let phi = rd / K;
    if opponents.is_empty() {
        let phi_star = (phi.powi(2) + vol.powi(2)).sqrt();
        return (rating, phi_star * K, vol);
    }
    let gfun = |p: f64| 1.0 / (1.0 + 3.0 * p * p / std::f64::consts::PI.powi(2)).sqrt();
    let efun = |m: f64, mj: f64, pj: f64| 1.0 / (1.0 + (-gfun(pj) * (m - mj)).exp());

    let mut vinv = 0.0;
    let mut acc = 0.0;
    for &(rj, rdj, s) in opponents {
        let (mj, pj) = ((rj - 1500.0) / K, rdj / K);
        let e = efun(mu, mj, pj);
        vinv += gfun(pj).powi(2) * e * (1.0 - e);
        acc += gfun(pj) * (s - e);
    }
    let v = 1.0 / vinv;
    let delta = v * acc;

    let a = (vol * vol).ln();
    let f = |x: f64| {
        let num = x.exp() * (delta * delta - phi * phi - v - x.exp());
        let den = 2.0 * (phi * phi + v + x.exp()).powi(2);
        num / den - (x - a) / (tau * tau)
    };
    let eps = 0.000001;
    let mut aa = a;
    let mut bb;
    if delta * delta > phi * phi + v {
        bb = (delta * delta - phi * phi - v).ln();
    } else {
        let mut k = 1.0;
        while f(a - k * tau) < 0.0 {
            k += 1.0;
        }
        bb = a - k * tau;
    }
    let mut fa = f(aa);
    let mut fb = f(bb);
    while (bb - aa).abs() > eps {
        let cc = aa + (aa - bb) * fa / (fb - fa);
        let fc = f(cc);
        if fc * fb <= 0.0 {
            aa = bb;
            fa = fb;
        } else {
            fa /= 2.0;
        }
        bb = cc;
        fb = fc;
    }
    let vol_new = (aa / 2.0).exp();
    let phi_star = (phi * phi + vol_new * vol_new).sqrt();
    let phi_new = 1.0 / (1.0 / (phi_star * phi_star) + 1.0 / v).sqrt();
    let mu_new = mu + phi_new * phi_new * acc;
    (K * mu_new + 1500.0, K * phi_new, vol_new)
}
