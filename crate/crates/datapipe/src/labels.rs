//! Ordinal grade schemes, their binarization, and the subgroup keys used
//! for fairness audits.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::DataError;

/// Column order of the eight findings everywhere (vectors, CSV, reports).
pub const LABEL_NAMES: [&str; 8] = ["cdm", "cng", "per", "pel", "pir", "pil", "alr", "all"];

/// Patient sex as recorded in the metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    Female,
    Male,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Female => "female",
            Sex::Male => "male",
        }
    }

    pub fn parse(s: &str) -> Result<Self, DataError> {
        match s {
            "female" => Ok(Sex::Female),
            "male" => Ok(Sex::Male),
            other => Err(DataError::UnknownSex(other.to_string())),
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Five-class scheme used by the cardiomegaly finding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CardiomegalyGrade {
    Normal,
    Uncertain,
    Borderline,
    Enlarged,
    MassivelyEnlarged,
}

impl CardiomegalyGrade {
    pub const ALL: [Self; 5] = [
        Self::Normal,
        Self::Uncertain,
        Self::Borderline,
        Self::Enlarged,
        Self::MassivelyEnlarged,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Normal => "normal",
            Self::Uncertain => "uncertain",
            Self::Borderline => "borderline",
            Self::Enlarged => "enlarged",
            Self::MassivelyEnlarged => "massively enlarged",
        }
    }

    pub fn is_positive(self) -> bool {
        matches!(self, Self::Borderline | Self::Enlarged | Self::MassivelyEnlarged)
    }

    /// Relative planted-signal strength of the positive grades.
    pub(crate) fn signal_weight(self) -> f64 {
        match self {
            Self::Borderline => 0.7,
            Self::Enlarged => 1.0,
            Self::MassivelyEnlarged => 1.3,
            _ => 0.0,
        }
    }
}

/// Five-class severity scheme used by the seven non-cardiomegaly findings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SeverityGrade {
    Negative,
    Uncertain,
    Mild,
    Moderate,
    Severe,
}

impl SeverityGrade {
    pub const ALL: [Self; 5] = [
        Self::Negative,
        Self::Uncertain,
        Self::Mild,
        Self::Moderate,
        Self::Severe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Negative => "negative",
            Self::Uncertain => "uncertain",
            Self::Mild => "mild",
            Self::Moderate => "moderate",
            Self::Severe => "severe",
        }
    }

    pub fn is_positive(self) -> bool {
        matches!(self, Self::Mild | Self::Moderate | Self::Severe)
    }

    pub(crate) fn signal_weight(self) -> f64 {
        match self {
            Self::Mild => 0.7,
            Self::Moderate => 1.0,
            Self::Severe => 1.3,
            _ => 0.0,
        }
    }
}

/// The eight ordinal findings of one study, in [`LABEL_NAMES`] order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyGrades {
    pub cdm: CardiomegalyGrade,
    pub cng: SeverityGrade,
    pub per: SeverityGrade,
    pub pel: SeverityGrade,
    pub pir: SeverityGrade,
    pub pil: SeverityGrade,
    pub alr: SeverityGrade,
    pub all: SeverityGrade,
}

impl StudyGrades {
    pub fn all_negative() -> Self {
        Self {
            cdm: CardiomegalyGrade::Normal,
            cng: SeverityGrade::Negative,
            per: SeverityGrade::Negative,
            pel: SeverityGrade::Negative,
            pir: SeverityGrade::Negative,
            pil: SeverityGrade::Negative,
            alr: SeverityGrade::Negative,
            all: SeverityGrade::Negative,
        }
    }

    fn severity_fields(&self) -> [SeverityGrade; 7] {
        [
            self.cng, self.per, self.pel, self.pir, self.pil, self.alr, self.all,
        ]
    }

    /// Grade strings in column order.
    pub fn as_strings(&self) -> [&'static str; 8] {
        let s = self.severity_fields();
        [
            self.cdm.as_str(),
            s[0].as_str(),
            s[1].as_str(),
            s[2].as_str(),
            s[3].as_str(),
            s[4].as_str(),
            s[5].as_str(),
            s[6].as_str(),
        ]
    }

    /// Parses the eight grade strings, naming the offending column on error.
    pub fn parse(values: &[&str; 8]) -> Result<Self, DataError> {
        let cdm = CardiomegalyGrade::ALL
            .into_iter()
            .find(|g| g.as_str() == values[0])
            .ok_or_else(|| DataError::UnknownGrade {
                label: LABEL_NAMES[0].to_string(),
                value: values[0].to_string(),
            })?;
        let mut severities = [SeverityGrade::Negative; 7];
        for (i, slot) in severities.iter_mut().enumerate() {
            *slot = SeverityGrade::ALL
                .into_iter()
                .find(|g| g.as_str() == values[i + 1])
                .ok_or_else(|| DataError::UnknownGrade {
                    label: LABEL_NAMES[i + 1].to_string(),
                    value: values[i + 1].to_string(),
                })?;
        }
        Ok(Self {
            cdm,
            cng: severities[0],
            per: severities[1],
            pel: severities[2],
            pir: severities[3],
            pil: severities[4],
            alr: severities[5],
            all: severities[6],
        })
    }

    pub(crate) fn signal_weights(&self) -> [f64; 8] {
        let s = self.severity_fields();
        [
            self.cdm.signal_weight(),
            s[0].signal_weight(),
            s[1].signal_weight(),
            s[2].signal_weight(),
            s[3].signal_weight(),
            s[4].signal_weight(),
            s[5].signal_weight(),
            s[6].signal_weight(),
        ]
    }
}

/// Binary findings in [`LABEL_NAMES`] order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryLabelVector(pub [bool; 8]);

impl BinaryLabelVector {
    pub fn count_positive(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// 0.0/1.0 targets for the trainer.
    pub fn to_targets(&self) -> Vec<f64> {
        self.0.iter().map(|&b| f64::from(u8::from(b))).collect()
    }
}

/// Collapses each five-class grade: the two lowest classes are negative,
/// the three highest positive.
pub fn binarize_labels(grades: &StudyGrades) -> BinaryLabelVector {
    let s = grades.severity_fields();
    BinaryLabelVector([
        grades.cdm.is_positive(),
        s[0].is_positive(),
        s[1].is_positive(),
        s[2].is_positive(),
        s[3].is_positive(),
        s[4].is_positive(),
        s[5].is_positive(),
        s[6].is_positive(),
    ])
}

/// The audit's five age strata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgeBin {
    From0To30,
    From30To60,
    From60To70,
    From70To80,
    From80To100,
}

impl AgeBin {
    pub const ALL: [Self; 5] = [
        Self::From0To30,
        Self::From30To60,
        Self::From60To70,
        Self::From70To80,
        Self::From80To100,
    ];

    pub fn from_age(age: u32) -> Result<Self, DataError> {
        Ok(match age {
            0..=29 => Self::From0To30,
            30..=59 => Self::From30To60,
            60..=69 => Self::From60To70,
            70..=79 => Self::From70To80,
            80..=99 => Self::From80To100,
            _ => return Err(DataError::InvalidAge(age)),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::From0To30 => "[0,30)",
            Self::From30To60 => "[30,60)",
            Self::From60To70 => "[60,70)",
            Self::From70To80 => "[70,80)",
            Self::From80To100 => "[80,100)",
        }
    }

    /// Age range covered by the bin (inclusive start, exclusive end).
    pub fn range(self) -> (u32, u32) {
        match self {
            Self::From0To30 => (0, 30),
            Self::From30To60 => (30, 60),
            Self::From60To70 => (60, 70),
            Self::From70To80 => (70, 80),
            Self::From80To100 => (80, 100),
        }
    }
}

impl fmt::Display for AgeBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything the fairness audit stratifies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubgroupKey {
    pub age_bin: AgeBin,
    pub sex: Sex,
    /// Number of simultaneously positive findings in the study.
    pub comorbidity_count: usize,
}
