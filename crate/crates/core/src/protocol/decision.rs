//! How a node answers a BFT message that names it as subject.
//!
//! The four inputs, from the receiving node A's point of view with B as the
//! BFT sender:
//!
//! * `claimed_consistent`: B's reported RSSI agrees with A's own smoothed
//!   measurement of B.
//! * `history_consistent`: A's current measurement of B agrees with A's
//!   stored history for that link.
//! * `distrust_sender`: A distrusts B.
//! * `distrust_self`: A has moved, or more than tau peers recently
//!   questioned A.
//!
//! Only five input combinations lead to a message; every other combination
//! is ignored because the cause of the BFT message cannot be pinned down.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct DefenseInputs {
    pub claimed_consistent: bool,
    pub history_consistent: bool,
    pub distrust_sender: bool,
    pub distrust_self: bool,
}

impl DefenseInputs {
    pub fn from_bits(c: bool, h: bool, d_sender: bool, d_self: bool) -> Self {
        DefenseInputs { claimed_consistent: c, history_consistent: h, distrust_sender: d_sender, distrust_self: d_self }
    }

    /// Row index into [`SELF_DEFENSE_TABLE`]; `c` is the most significant bit.
    pub fn index(&self) -> usize {
        (self.claimed_consistent as usize) << 3
            | (self.history_consistent as usize) << 2
            | (self.distrust_sender as usize) << 1
            | self.distrust_self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum DefenseResponse {
    Ignore,
    /// Question the BFT sender in turn.
    BftAboutSender,
    /// Concede that this node's own identity may be compromised.
    SelfDistrustAlert,
    /// Accuse the BFT sender of sending it maliciously.
    DistrustAlert,
}

use DefenseResponse::{BftAboutSender as Bft, DistrustAlert as Accuse, Ignore as Ign, SelfDistrustAlert as Concede};

/// Indexed by [`DefenseInputs::index`]: bits are (c, h, dB, dSelf).
pub const SELF_DEFENSE_TABLE: [DefenseResponse; 16] = [
    // c=0 h=0
    Ign,    // dB=0 dSelf=0
    Ign,    // dB=0 dSelf=1
    Accuse, // dB=1 dSelf=0
    Ign,    // dB=1 dSelf=1
    // c=0 h=1
    Ign, Ign, Bft, // dB=1 dSelf=0
    Ign, // c=1 h=0
    Ign, Concede, // dB=0 dSelf=1
    Bft,     // dB=1 dSelf=0
    Bft,     // dB=1 dSelf=1
    // c=1 h=1: everything consistent
    Ign, Ign, Ign, Ign,
];

pub fn self_defense_response(inputs: DefenseInputs) -> DefenseResponse {
    SELF_DEFENSE_TABLE[inputs.index()]
}

#[cfg(test)]
mod tests {
    use super::*;

    // Written straight from the prose rules, independent of the table layout.
    fn oracle(c: bool, h: bool, db: bool, ds: bool) -> DefenseResponse {
        match (c, h, db, ds) {
            (true, true, _, _) => Ign,
            (true, false, true, _) => Bft,
            (true, false, false, true) => Concede,
            (false, true, true, false) => Bft,
            (false, false, true, false) => Accuse,
            _ => Ign,
        }
    }

    #[test]
    fn table_matches_rules_exhaustively() {
        let mut non_ignore = 0;
        for i in 0..16u8 {
            let (c, h, db, ds) = (i & 8 != 0, i & 4 != 0, i & 2 != 0, i & 1 != 0);
            let input = DefenseInputs::from_bits(c, h, db, ds);
            assert_eq!(input.index(), i as usize);
            assert_eq!(self_defense_response(input), oracle(c, h, db, ds), "row {c} {h} {db} {ds}");
            if oracle(c, h, db, ds) != Ign {
                non_ignore += 1;
            }
        }
        assert_eq!(non_ignore, 5);
    }
}
