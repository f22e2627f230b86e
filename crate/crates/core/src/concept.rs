use serde::{Deserialize, Serialize};
use std::fmt;

/// The four latent subspaces of the network, in fusion order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Concept {
    #[serde(rename = "sh")]
    Sharpness,
    #[serde(rename = "nu")]
    Nulling,
    #[serde(rename = "ao")]
    Aorta,
    #[serde(rename = "un")]
    Residual,
}

impl Concept {
    pub const ALL: [Concept; 4] = [
        Concept::Sharpness,
        Concept::Nulling,
        Concept::Aorta,
        Concept::Residual,
    ];

    /// Concepts that carry a volume-level grade.
    pub const PREDEFINED: [Concept; 3] = [Concept::Sharpness, Concept::Nulling, Concept::Aorta];

    /// Concepts subject to the attention-overlap penalty. Sharpness is global
    /// and therefore excluded.
    pub const LOCALIZED: [Concept; 3] = [Concept::Nulling, Concept::Aorta, Concept::Residual];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Concept::Sharpness => "sh",
            Concept::Nulling => "nu",
            Concept::Aorta => "ao",
            Concept::Residual => "un",
        }
    }

    pub fn from_short_name(name: &str) -> Option<Concept> {
        Concept::ALL.into_iter().find(|c| c.short_name() == name)
    }

    pub fn is_predefined(self) -> bool {
        self != Concept::Residual
    }

    /// Unordered pairs of localized concepts: (nu,ao), (nu,un), (ao,un).
    pub fn localized_pairs() -> [(Concept, Concept); 3] {
        [
            (Concept::Nulling, Concept::Aorta),
            (Concept::Nulling, Concept::Residual),
            (Concept::Aorta, Concept::Residual),
        ]
    }
}

impl fmt::Display for Concept {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}
