//! Bundled reference instances, also shipped as JSON under `data/`.

use crate::mdp::{Mdp, MdpFile};

pub const REFERENCE4_JSON: &str = include_str!("../data/reference4.json");
pub const REFERENCE3_JSON: &str = include_str!("../data/reference3.json");
pub const TWO_CYCLE_JSON: &str = include_str!("../data/two_cycle.json");
pub const ABSORBING_JSON: &str = include_str!("../data/absorbing.json");
pub const SINGLE_STATE_JSON: &str = include_str!("../data/single_state.json");

fn parse(text: &str) -> Mdp {
    let file: MdpFile = serde_json::from_str(text).expect("bundled mdp parses");
    file.into_mdp().expect("bundled mdp is well formed")
}

/// Four-state ring, two actions: action 0 mostly stays, action 1 mostly
/// advances and sometimes slips back. Reward 1 on entering state 3.
pub fn reference4() -> Mdp {
    parse(REFERENCE4_JSON)
}

/// Three-state, two-action communicating MDP with `β = 0.9`.
pub fn reference3() -> Mdp {
    parse(REFERENCE3_JSON)
}

/// Deterministic 2-cycle with one action and unit reward, `β = 0.9`.
pub fn two_cycle() -> Mdp {
    parse(TWO_CYCLE_JSON)
}

/// Two absorbing states, one action.
pub fn absorbing() -> Mdp {
    parse(ABSORBING_JSON)
}

/// One state, one action, reward 1, `β = 0.5`.
pub fn single_state() -> Mdp {
    parse(SINGLE_STATE_JSON)
}
