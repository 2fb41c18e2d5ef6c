//! Synthetic data with planted ground truth, and brute-force reference
//! implementations for differential testing.

pub mod oracle;
pub mod panel;
pub mod sim;

pub use sim::{generate, true_xg, PlayerTruth, ShotTruth, SynthLeague, SynthLeagueSpec, TeamTruth, Truth};
pub use panel::{generate_panel, Panel, PanelSpec, PanelTruth};
