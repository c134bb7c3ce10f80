//! Subject-level metadata shared by the manifest, predictions and reports.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagnosis; AD is the positive class everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "AD")]
    Ad,
    #[serde(rename = "HC")]
    Hc,
}

impl Label {
    pub fn is_ad(self) -> bool {
        self == Label::Ad
    }
}

impl From<bool> for Label {
    fn from(ad: bool) -> Self {
        if ad {
            Label::Ad
        } else {
            Label::Hc
        }
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "AD" => Ok(Label::Ad),
            "HC" => Ok(Label::Hc),
            other => Err(Error::InvalidArgument(format!("label {other:?} is not AD or HC"))),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Ad => "AD",
            Label::Hc => "HC",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "female" => Ok(Gender::Female),
            "male" => Ok(Gender::Male),
            other => Err(Error::InvalidArgument(format!("gender {other:?} is not female or male"))),
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Female => "female",
            Gender::Male => "male",
        })
    }
}
