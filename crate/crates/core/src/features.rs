//! Feature selection for a ranking configuration.
//!
//! A [`FeatureSet`] is any combination of the three textual fields (title,
//! description, summary) and the two time-gap scalars (`C2`, the gap between
//! creation dates, and `CU`, the gap between the query's creation date and
//! the candidate's last update). The canonical label concatenates the members
//! in the fixed order `T D S C2 CU`, e.g. `TDSC2CU`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Feature {
    Title,
    Description,
    Summary,
    CreatedGap,
    CreatedUpdatedGap,
}

impl Feature {
    pub fn label(self) -> &'static str {
        match self {
            Feature::Title => "T",
            Feature::Description => "D",
            Feature::Summary => "S",
            Feature::CreatedGap => "C2",
            Feature::CreatedUpdatedGap => "CU",
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FeatureError {
    #[error("unrecognised feature label {0:?} (expected a combination of T, D, S, C2, CU)")]
    Unrecognised(String),
    #[error("text feature required")]
    TextRequired,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureSet {
    pub title: bool,
    pub description: bool,
    pub summary: bool,
    pub created_gap: bool,
    pub created_updated_gap: bool,
}

impl FeatureSet {
    pub const TDS: FeatureSet = FeatureSet {
        title: true,
        description: true,
        summary: true,
        created_gap: false,
        created_updated_gap: false,
    };

    pub fn from_features(features: &[Feature]) -> Self {
        let mut set = FeatureSet::default();
        for f in features {
            set.insert(*f);
        }
        set
    }

    pub fn insert(&mut self, feature: Feature) {
        match feature {
            Feature::Title => self.title = true,
            Feature::Description => self.description = true,
            Feature::Summary => self.summary = true,
            Feature::CreatedGap => self.created_gap = true,
            Feature::CreatedUpdatedGap => self.created_updated_gap = true,
        }
    }

    pub fn contains(&self, feature: Feature) -> bool {
        match feature {
            Feature::Title => self.title,
            Feature::Description => self.description,
            Feature::Summary => self.summary,
            Feature::CreatedGap => self.created_gap,
            Feature::CreatedUpdatedGap => self.created_updated_gap,
        }
    }

    pub fn members(&self) -> impl Iterator<Item = Feature> + '_ {
        [
            Feature::Title,
            Feature::Description,
            Feature::Summary,
            Feature::CreatedGap,
            Feature::CreatedUpdatedGap,
        ]
        .into_iter()
        .filter(|f| self.contains(*f))
    }

    pub fn has_text(&self) -> bool {
        self.title || self.description || self.summary
    }

    /// Only the textual members of this set.
    pub fn text_only(&self) -> FeatureSet {
        FeatureSet {
            created_gap: false,
            created_updated_gap: false,
            ..*self
        }
    }

    /// Number of scalar (time-gap) features, in the order C2 then CU.
    pub fn scalar_count(&self) -> usize {
        usize::from(self.created_gap) + usize::from(self.created_updated_gap)
    }

    pub fn label(&self) -> String {
        self.members().map(Feature::label).collect()
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for FeatureSet {
    type Err = FeatureError;

    /// Parses labels such as `TDS`, `TC2CU` or `t,d,cu`. Separators (`,`, `+`,
    /// whitespace) are ignored and `CC` is accepted as an alias for `C2`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let cleaned: String = s
            .chars()
            .filter(|c| !matches!(c, ',' | '+' | ' ' | '\t'))
            .collect::<String>()
            .to_ascii_uppercase();
        if cleaned.is_empty() {
            return Err(FeatureError::Unrecognised(s.to_string()));
        }
        let mut set = FeatureSet::default();
        let mut rest = cleaned.as_str();
        while !rest.is_empty() {
            let (feature, len) = if rest.starts_with("C2") || rest.starts_with("CC") {
                (Feature::CreatedGap, 2)
            } else if rest.starts_with("CU") {
                (Feature::CreatedUpdatedGap, 2)
            } else if rest.starts_with('T') {
                (Feature::Title, 1)
            } else if rest.starts_with('D') {
                (Feature::Description, 1)
            } else if rest.starts_with('S') {
                (Feature::Summary, 1)
            } else {
                return Err(FeatureError::Unrecognised(s.to_string()));
            };
            set.insert(feature);
            rest = &rest[len..];
        }
        Ok(set)
    }
}

impl Serialize for FeatureSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for FeatureSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_round_trip() {
        for label in ["T", "DS", "TDS", "TC2", "SCU", "TDSC2CU", "DSC2CU"] {
            let set: FeatureSet = label.parse().unwrap();
            assert_eq!(set.label(), label);
        }
    }

    #[test]
    fn aliases_and_separators() {
        assert_eq!("t, d, cc".parse::<FeatureSet>().unwrap().label(), "TDC2");
        assert_eq!("T+S+CU".parse::<FeatureSet>().unwrap().label(), "TSCU");
    }

    #[test]
    fn rejects_garbage() {
        assert!("TX".parse::<FeatureSet>().is_err());
        assert!("".parse::<FeatureSet>().is_err());
    }

    #[test]
    fn scalar_count() {
        assert_eq!(FeatureSet::TDS.scalar_count(), 0);
        assert_eq!("TC2CU".parse::<FeatureSet>().unwrap().scalar_count(), 2);
        assert!(!"C2CU".parse::<FeatureSet>().unwrap().has_text());
    }
}
