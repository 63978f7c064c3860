use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The ten ways of turning real images into a conditioning embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AugMethod {
    RandomImage,
    Dropout,
    Mixup,
    #[serde(rename = "Mixup-Dropout")]
    MixupDropout,
    #[serde(rename = "Embed-Mixup")]
    EmbedMixup,
    #[serde(rename = "Embed-Mixup-Dropout")]
    EmbedMixupDropout,
    CutMix,
    #[serde(rename = "CutMix-Dropout")]
    CutMixDropout,
    #[serde(rename = "Embed-CutMix")]
    EmbedCutMix,
    #[serde(rename = "Embed-CutMix-Dropout")]
    EmbedCutMixDropout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixOp {
    CutMix,
    Mixup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixSpace {
    Pixel,
    Embedding,
}

impl AugMethod {
    pub const ALL: [AugMethod; 10] = [
        AugMethod::RandomImage,
        AugMethod::Dropout,
        AugMethod::Mixup,
        AugMethod::MixupDropout,
        AugMethod::EmbedMixup,
        AugMethod::EmbedMixupDropout,
        AugMethod::CutMix,
        AugMethod::CutMixDropout,
        AugMethod::EmbedCutMix,
        AugMethod::EmbedCutMixDropout,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugMethod::RandomImage => "RandomImage",
            AugMethod::Dropout => "Dropout",
            AugMethod::Mixup => "Mixup",
            AugMethod::MixupDropout => "Mixup-Dropout",
            AugMethod::EmbedMixup => "Embed-Mixup",
            AugMethod::EmbedMixupDropout => "Embed-Mixup-Dropout",
            AugMethod::CutMix => "CutMix",
            AugMethod::CutMixDropout => "CutMix-Dropout",
            AugMethod::EmbedCutMix => "Embed-CutMix",
            AugMethod::EmbedCutMixDropout => "Embed-CutMix-Dropout",
        }
    }

    pub fn uses_dropout(self) -> bool {
        matches!(
            self,
            AugMethod::Dropout
                | AugMethod::MixupDropout
                | AugMethod::EmbedMixupDropout
                | AugMethod::CutMixDropout
                | AugMethod::EmbedCutMixDropout
        )
    }

    /// The two-image mixing step, if any.
    pub fn mixing(self) -> Option<(MixOp, MixSpace)> {
        use AugMethod::*;
        match self {
            RandomImage | Dropout => None,
            Mixup | MixupDropout => Some((MixOp::Mixup, MixSpace::Pixel)),
            EmbedMixup | EmbedMixupDropout => Some((MixOp::Mixup, MixSpace::Embedding)),
            CutMix | CutMixDropout => Some((MixOp::CutMix, MixSpace::Pixel)),
            EmbedCutMix | EmbedCutMixDropout => Some((MixOp::CutMix, MixSpace::Embedding)),
        }
    }
}

impl fmt::Display for AugMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['_', ' '], "-");
        let norm = norm.replace("embedding-", "embed-").replace("random-image", "randomimage");
        AugMethod::ALL
            .into_iter()
            .find(|m| m.name().to_ascii_lowercase() == norm)
            .ok_or_else(|| Error::Parameter(format!("unknown augmentation method {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for m in AugMethod::ALL {
            assert_eq!(m.name().parse::<AugMethod>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
        }
        assert_eq!("embedding-cutmix-dropout".parse::<AugMethod>().unwrap(), AugMethod::EmbedCutMixDropout);
        assert!("RandAugment".parse::<AugMethod>().is_err());
    }

    #[test]
    fn nine_augmented_methods_plus_baseline() {
        let augmented = AugMethod::ALL
            .iter()
            .filter(|m| m.uses_dropout() || m.mixing().is_some())
            .count();
        assert_eq!(augmented, 9);
    }
}
