//! Possession-value training targets for control actions and duels.
//!
//! Three target variants are available for control actions:
//!
//! * `Basic`: probability that the current possession produces at least one
//!   goal from its remaining shots, `1 - Π (1 - xG_j)` over shots of the same
//!   possession at or after the action.
//! * `Decay`: the same product with each shot's xG discounted by
//!   `γ^(t_j - t_i)` in effective seconds, so actions right before a shot
//!   carry more of its value.
//! * `Risk`: the decayed value of every later shot by the acting team minus
//!   the decayed value of every later shot by the opponent, regardless of
//!   possession boundaries, within a lookahead horizon.
//!
//! Duels take the value of the first control action after them, negated when
//! that action belongs to the other team.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{PossessionView, TeamId};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PvVariant {
    Basic,
    Decay,
    Risk,
}

impl std::str::FromStr for PvVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "basic" => Ok(PvVariant::Basic),
            "decay" => Ok(PvVariant::Decay),
            "risk" => Ok(PvVariant::Risk),
            other => Err(format!("unknown PV variant `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PvConfig<T> {
    /// Discount per effective second, in (0, 1].
    pub gamma: T,
    /// Lookahead cutoff for the risk variant, effective seconds.
    pub horizon_s: T,
    pub variant: PvVariant,
}

impl<T: Scalar> PvConfig<T> {
    pub fn new(gamma: T, horizon_s: T, variant: PvVariant) -> Result<Self, PvError> {
        if !(gamma > T::zero() && gamma <= T::one()) {
            return Err(PvError::InvalidConfig(format!("gamma must be in (0, 1], got {gamma}")));
        }
        if !(horizon_s > T::zero()) {
            return Err(PvError::InvalidConfig(format!("horizon must be positive, got {horizon_s}")));
        }
        Ok(PvConfig { gamma, horizon_s, variant })
    }
}

impl<T: Scalar> Default for PvConfig<T> {
    fn default() -> Self {
        PvConfig { gamma: T::lit(0.95), horizon_s: T::lit(300.0), variant: PvVariant::Risk }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PvError {
    #[error("position {0} is not a control action")]
    NotControl(usize),
    #[error("position {0} is not a symmetrical duel")]
    NotDuel(usize),
    #[error("shot at position {0} has no xG")]
    MissingXg(usize),
    #[error("duel at position {0} has no later control action in its half")]
    NoFollowingControl(usize),
    #[error("control action at position {0} has no possession value")]
    MissingControlValue(usize),
    #[error("invalid PV configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionClass {
    Control,
    Duel,
}

/// A control action or duel with its training target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LabeledAction<T> {
    /// Position in the view the label was computed on.
    pub position: usize,
    pub event_index: u32,
    pub kind: ActionClass,
    pub pv: T,
    pub epv: Option<T>,
}

fn check_control(view: &PossessionView, i: usize) -> Result<(), PvError> {
    if view.event(i).is_control() {
        Ok(())
    } else {
        Err(PvError::NotControl(i))
    }
}

fn shot_xg<T: Scalar>(xg: &[Option<T>], j: usize) -> Result<T, PvError> {
    xg.get(j).copied().flatten().ok_or(PvError::MissingXg(j))
}

/// Undiscounted same-possession value.
pub fn pv_basic<T: Scalar>(view: &PossessionView, xg: &[Option<T>], i: usize) -> Result<T, PvError> {
    check_control(view, i)?;
    let (ti, si) = (view.time(i), view.possession(i));
    let mut miss = T::one();
    for j in view.half_range(i) {
        if view.event(j).is_shot() && view.time(j) >= ti && view.possession(j) == si {
            miss *= T::one() - shot_xg(xg, j)?;
        }
    }
    Ok(T::one() - miss)
}

/// Same-possession value with each shot discounted by `gamma^(t_j - t_i)`.
pub fn pv_decay<T: Scalar>(view: &PossessionView, xg: &[Option<T>], i: usize, gamma: T) -> Result<T, PvError> {
    check_control(view, i)?;
    let (ti, si) = (view.time(i), view.possession(i));
    let mut miss = T::one();
    for j in view.half_range(i) {
        let tj = view.time(j);
        if view.event(j).is_shot() && tj >= ti && view.possession(j) == si {
            let dt = T::lit(tj - ti);
            miss *= T::one() - gamma.powf(dt) * shot_xg(xg, j)?;
        }
    }
    Ok(T::one() - miss)
}

/// `(team term, opponent term)` of the risk-adjusted value.
pub fn pv_risk_terms<T: Scalar>(
    view: &PossessionView,
    xg: &[Option<T>],
    i: usize,
    gamma: T,
    horizon_s: T,
) -> Result<(T, T), PvError> {
    check_control(view, i)?;
    let ti = view.time(i);
    let team: &TeamId = &view.event(i).team_id;
    let (mut miss_team, mut miss_opp) = (T::one(), T::one());
    for j in view.half_range(i) {
        let e = view.event(j);
        let tj = view.time(j);
        if !e.is_shot() || tj < ti {
            continue;
        }
        let dt = T::lit(tj - ti);
        if dt > horizon_s {
            continue;
        }
        let factor = T::one() - gamma.powf(dt) * shot_xg(xg, j)?;
        if &e.team_id == team {
            miss_team *= factor;
        } else {
            miss_opp *= factor;
        }
    }
    Ok((T::one() - miss_team, T::one() - miss_opp))
}

/// Decayed team value minus decayed opponent value over the horizon.
pub fn pv_risk<T: Scalar>(
    view: &PossessionView,
    xg: &[Option<T>],
    i: usize,
    gamma: T,
    horizon_s: T,
) -> Result<T, PvError> {
    let (team, opp) = pv_risk_terms(view, xg, i, gamma, horizon_s)?;
    Ok(team - opp)
}

/// Value of the first later control action, sign-flipped if it belongs to the
/// other team. Chains of duels all resolve to the same control action.
pub fn pv_duel<T: Scalar>(view: &PossessionView, pv_of_controls: &[Option<T>], i: usize) -> Result<T, PvError> {
    if !view.event(i).is_duel() {
        return Err(PvError::NotDuel(i));
    }
    let j = view.next_control_in_half(i).ok_or(PvError::NoFollowingControl(i))?;
    let pv = pv_of_controls.get(j).copied().flatten().ok_or(PvError::MissingControlValue(j))?;
    Ok(if view.event(j).team_id == view.event(i).team_id { pv } else { -pv })
}

/// Control value under the configured variant.
pub fn pv_control<T: Scalar>(
    view: &PossessionView,
    xg: &[Option<T>],
    i: usize,
    config: &PvConfig<T>,
) -> Result<T, PvError> {
    match config.variant {
        PvVariant::Basic => pv_basic(view, xg, i),
        PvVariant::Decay => pv_decay(view, xg, i, config.gamma),
        PvVariant::Risk => pv_risk(view, xg, i, config.gamma, config.horizon_s),
    }
}

/// Labels every control action and every duel that has a later control action
/// in its half. Duels without one are left out.
pub fn label_dataset<T: Scalar>(
    view: &PossessionView,
    xg: &[Option<T>],
    config: &PvConfig<T>,
) -> Result<Vec<LabeledAction<T>>, PvError> {
    let mut control_pv: Vec<Option<T>> = vec![None; view.len()];
    for (i, slot) in control_pv.iter_mut().enumerate() {
        if view.event(i).is_control() {
            *slot = Some(pv_control(view, xg, i, config)?);
        }
    }
    let mut out = Vec::new();
    for i in 0..view.len() {
        let e = view.event(i);
        let (kind, pv) = if let Some(pv) = control_pv[i] {
            (ActionClass::Control, pv)
        } else if e.is_duel() {
            match pv_duel(view, &control_pv, i) {
                Ok(pv) => (ActionClass::Duel, pv),
                Err(PvError::NoFollowingControl(_)) => continue,
                Err(err) => return Err(err),
            }
        } else {
            continue;
        };
        out.push(LabeledAction { position: i, event_index: e.event_index, kind, pv, epv: None });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{ActionKind, AnnotatedEvent, Event, MatchId};

    /// Builds a view directly from (team, action, effective time, possession).
    fn view(rows: &[(&str, &str, f64, u32)]) -> PossessionView {
        let events = rows
            .iter()
            .enumerate()
            .map(|(i, &(team, action, t, s))| AnnotatedEvent {
                event: Event::new("m", i as u32, t, 1, team, format!("{team}{i}"), ActionKind::parse(action), 50.0, 34.0),
                possession: s,
                effective_s: t,
            })
            .collect();
        PossessionView::from_annotated(MatchId::new("m"), events)
    }

    fn xg_for(v: &PossessionView, values: &[(usize, f64)]) -> Vec<Option<f64>> {
        let mut xg = vec![None; v.len()];
        for &(i, x) in values {
            xg[i] = Some(x);
        }
        xg
    }

    #[test]
    fn basic_values() {
        let v = view(&[("A", "pass", 0.0, 0), ("A", "pass", 1.0, 0)]);
        assert_eq!(pv_basic::<f64>(&v, &[None, None], 0).unwrap(), 0.0);

        let v = view(&[("A", "pass", 0.0, 0), ("A", "shot", 3.0, 0)]);
        let xg = xg_for(&v, &[(1, 0.75)]);
        assert_eq!(pv_basic(&v, &xg, 0).unwrap(), 0.75);

        let v = view(&[("A", "pass", 0.0, 0), ("A", "shot", 3.0, 0), ("A", "shot", 4.0, 0)]);
        let xg = xg_for(&v, &[(1, 0.1), (2, 0.2)]);
        assert!((pv_basic(&v, &xg, 0).unwrap() - 0.28).abs() < 1e-15);
    }

    #[test]
    fn basic_ignores_past_and_other_possessions() {
        let v = view(&[
            ("A", "shot", 0.0, 0),
            ("A", "pass", 2.0, 0),
            ("B", "pass", 3.0, 1),
            ("B", "shot", 4.0, 1),
        ]);
        let xg = xg_for(&v, &[(0, 0.5), (3, 0.3)]);
        assert_eq!(pv_basic(&v, &xg, 1).unwrap(), 0.0);
        assert!((pv_basic(&v, &xg, 2).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn decay_values() {
        let v = view(&[("A", "pass", 0.0, 0), ("A", "shot", 30.0, 0)]);
        let xg = xg_for(&v, &[(1, 0.75)]);
        let got = pv_decay(&v, &xg, 0, 0.95).unwrap();
        assert!((got - 0.95f64.powi(30) * 0.75).abs() < 1e-15);
        assert!((got - 0.161).abs() < 5e-4);

        let v = view(&[("A", "shot", 0.0, 0), ("A", "shot", 10.0, 0)]);
        let xg = xg_for(&v, &[(0, 0.1), (1, 0.2)]);
        let expected = 1.0 - 0.9 * (1.0 - 0.95f64.powi(10) * 0.2);
        let got = pv_decay(&v, &xg, 0, 0.95).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.2078).abs() < 1e-4);
    }

    #[test]
    fn risk_values() {
        let v = view(&[("A", "pass", 0.0, 0), ("A", "pass", 5.0, 0)]);
        assert_eq!(pv_risk::<f64>(&v, &[None, None], 0, 0.95, 300.0).unwrap(), 0.0);

        // Pass, lose the ball 10 s later, opponent penalty 20 s after that.
        let v = view(&[("A", "pass", 0.0, 0), ("B", "pass", 10.0, 1), ("B", "penalty", 30.0, 1)]);
        let xg = xg_for(&v, &[(2, 0.75)]);
        let (team, opp) = pv_risk_terms(&v, &xg, 0, 0.95, 300.0).unwrap();
        assert_eq!(team, 0.0);
        assert!((opp - 0.1610).abs() < 1e-3);
        assert!((pv_risk(&v, &xg, 0, 0.95, 300.0).unwrap() + 0.161).abs() < 1e-3);

        let v = view(&[("A", "pass", 0.0, 0), ("A", "shot", 12.0, 0), ("B", "shot", 12.0, 1)]);
        let xg = xg_for(&v, &[(1, 0.3), (2, 0.3)]);
        assert_eq!(pv_risk(&v, &xg, 0, 0.95, 300.0).unwrap(), 0.0);
    }

    #[test]
    fn risk_horizon_cuts_off() {
        let v = view(&[("A", "pass", 0.0, 0), ("A", "shot", 301.0, 0)]);
        let xg = xg_for(&v, &[(1, 0.9)]);
        assert_eq!(pv_risk(&v, &xg, 0, 0.95, 300.0).unwrap(), 0.0);
        assert!(pv_risk(&v, &xg, 0, 0.95, 302.0).unwrap() > 0.0);
    }

    #[test]
    fn duel_sign_and_chain() {
        let v = view(&[("A", "aerial_duel", 0.0, 0), ("A", "pass", 1.0, 0)]);
        assert_eq!(pv_duel(&v, &[None, Some(0.2)], 0).unwrap(), 0.2);

        let v = view(&[("A", "aerial_duel", 0.0, 0), ("B", "pass", 1.0, 1)]);
        assert_eq!(pv_duel(&v, &[None, Some(0.2)], 0).unwrap(), -0.2);

        let v = view(&[("A", "aerial_duel", 0.0, 0), ("A", "ground_duel", 1.0, 0), ("A", "pass", 2.0, 0)]);
        let pvs = [None, None, Some(0.3)];
        assert_eq!(pv_duel(&v, &pvs, 0).unwrap(), 0.3);
        assert_eq!(pv_duel(&v, &pvs, 1).unwrap(), 0.3);

        let v = view(&[("A", "pass", 0.0, 0), ("B", "ground_duel", 1.0, 0)]);
        assert_eq!(pv_duel(&v, &[Some(0.1), None], 1), Err(PvError::NoFollowingControl(1)));
        assert_eq!(pv_duel(&v, &[Some(0.1), None], 0), Err(PvError::NotDuel(0)));
    }

    #[test]
    fn errors() {
        let v = view(&[("A", "aerial_duel", 0.0, 0), ("A", "shot", 1.0, 0)]);
        assert_eq!(pv_basic(&v, &[None, Some(0.1)], 0), Err(PvError::NotControl(0)));
        assert_eq!(pv_basic::<f64>(&v, &[None, None], 1), Err(PvError::MissingXg(1)));
        assert!(PvConfig::new(0.0, 300.0, PvVariant::Risk).is_err());
        assert!(PvConfig::new(1.0, 0.0, PvVariant::Risk).is_err());
        assert!(PvConfig::new(1.0_f32, 10.0, PvVariant::Basic).is_ok());
    }

    #[test]
    fn label_dataset_rows() {
        let v = view(&[]);
        assert!(label_dataset::<f64>(&v, &[], &PvConfig::default()).unwrap().is_empty());

        let v = view(&[
            ("A", "pass", 0.0, 0),
            ("A", "aerial_duel", 1.0, 0),
            ("A", "carry", 2.0, 0),
            ("A", "shot", 4.0, 0),
        ]);
        let xg = xg_for(&v, &[(3, 0.2)]);
        let rows = label_dataset(&v, &xg, &PvConfig::default()).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[1].kind, ActionClass::Duel);
        assert_eq!(rows[1].pv, rows[2].pv);
    }

    #[test]
    fn works_in_f32() {
        let v = view(&[("A", "pass", 0.0, 0), ("A", "shot", 30.0, 0)]);
        let xg = vec![None, Some(0.75_f32)];
        let got = pv_decay(&v, &xg, 0, 0.95_f32).unwrap();
        assert!((got - 0.16099).abs() < 1e-4);
    }
}
