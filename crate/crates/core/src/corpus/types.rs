use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Country label attached to every generated image.
///
/// Declaration order is the canonical order used for tie-breaking and for
/// every emitted table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Country {
    China,
    India,
    Kenya,
    Korea,
    Nigeria,
    UnitedStates,
    CountryAgnostic,
}

impl Country {
    pub const ALL: [Country; 7] = [
        Country::China,
        Country::India,
        Country::Kenya,
        Country::Korea,
        Country::Nigeria,
        Country::UnitedStates,
        Country::CountryAgnostic,
    ];

    pub const NAMES: &'static [&'static str] = &[
        "China",
        "India",
        "Kenya",
        "Korea",
        "Nigeria",
        "UnitedStates",
        "CountryAgnostic",
    ];

    pub fn as_str(self) -> &'static str {
        Self::NAMES[self as usize]
    }

    pub fn parse(s: &str) -> Option<Country> {
        Self::NAMES
            .iter()
            .position(|n| *n == s)
            .map(|i| Self::ALL[i])
    }
}

impl fmt::Display for Country {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Era {
    Traditional,
    Modern,
    Agnostic,
}

impl Era {
    pub const NAMES: &'static [&'static str] = &["traditional", "modern", "agnostic"];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    T2iBase,
    Multiloop,
    AttributeAdd,
    CrossCountry,
    OccupationAudit,
}

impl Protocol {
    pub const NAMES: &'static [&'static str] = &[
        "t2i_base",
        "multiloop",
        "attribute_add",
        "cross_country",
        "occupation_audit",
    ];
}

/// Location of an image's embedding: a file id and a row within that file.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EmbeddingRef {
    pub file_id: String,
    pub row: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub model: String,
    pub country: Country,
    pub category: String,
    pub subcategory: String,
    pub era: Era,
    pub protocol: Protocol,
    pub step: u8,
    pub prompt: String,
    /// Distinguishes repeated generations of the same prompt cell.
    #[serde(default)]
    pub variant: u32,
    pub embedding_ref: EmbeddingRef,
}

/// Full uniqueness key of an [`ImageRecord`].
pub type ImageKey<'a> = (
    &'a str,
    Country,
    &'a str,
    &'a str,
    Era,
    Protocol,
    u8,
    u32,
);

impl ImageRecord {
    pub fn key(&self) -> ImageKey<'_> {
        (
            &self.model,
            self.country,
            &self.category,
            &self.subcategory,
            self.era,
            self.protocol,
            self.step,
            self.variant,
        )
    }

    /// Checks the per-record invariants that do not need other tables.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.country == Country::CountryAgnostic
            && !matches!(self.protocol, Protocol::T2iBase | Protocol::OccupationAudit)
        {
            return Err(format!(
                "CountryAgnostic is not allowed for protocol {:?}",
                self.protocol
            ));
        }
        match self.protocol {
            Protocol::T2iBase | Protocol::OccupationAudit if self.step != 0 => {
                Err(format!("step must be 0 for {:?}, got {}", self.protocol, self.step))
            }
            Protocol::Multiloop | Protocol::AttributeAdd | Protocol::CrossCountry
                if self.step > 5 =>
            {
                Err(format!("step must be in [0,5] for {:?}, got {}", self.protocol, self.step))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Clip,
    Aesthetic,
    DreamsimDelta,
}

impl Metric {
    pub const NAMES: &'static [&'static str] = &["clip", "aesthetic", "dreamsim_delta"];

    pub fn as_str(self) -> &'static str {
        Self::NAMES[self as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricScoreRow {
    pub image_id: String,
    pub metric: Metric,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    ImageQuality,
    CulturalRepresentation,
}

impl Axis {
    pub const NAMES: &'static [&'static str] = &["image_quality", "cultural_representation"];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YesNo {
    Yes,
    No,
}

impl YesNo {
    pub const NAMES: &'static [&'static str] = &["yes", "no"];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Yes,
    No,
    Abstain,
}

impl Answer {
    pub const NAMES: &'static [&'static str] = &["yes", "no", "abstain"];

    pub fn as_yes_no(self) -> Option<YesNo> {
        match self {
            Answer::Yes => Some(YesNo::Yes),
            Answer::No => Some(YesNo::No),
            Answer::Abstain => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub image_id: String,
    pub question_id: String,
    pub question_text: String,
    pub axis: Axis,
    pub expected: YesNo,
    pub answered: Answer,
    pub is_negative_check: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub rater_id: String,
    pub task_id: String,
    pub image_id: String,
    pub image_quality: u8,
    pub cultural_representation: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_alignment: Option<u8>,
    pub best_of_task: bool,
    pub worst_of_task: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    pub elapsed_ms: u64,
}

impl RatingRecord {
    pub fn likert_in_range(&self) -> bool {
        let ok = |v: u8| (1..=5).contains(&v);
        ok(self.image_quality)
            && ok(self.cultural_representation)
            && self.prompt_alignment.is_none_or(ok)
    }
}

/// Known-answer binary check embedded in a survey task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldItem {
    pub task_id: String,
    pub question: String,
    pub expected: YesNo,
}

/// A rater's answer to the gold check of one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldResponse {
    pub rater_id: String,
    pub task_id: String,
    pub answer: YesNo,
}

/// Externally produced demographic label for one occupation-audit image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemographicLabel {
    pub image_id: String,
    pub occupation: String,
    pub gender: String,
    pub skin_tone: String,
}

/// Accepted category and subcategory names for a run.
///
/// A category mapped to an empty set accepts any subcategory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub categories: BTreeMap<String, BTreeSet<String>>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        let table: &[(&str, &[&str])] = &[
            ("Architecture", &["House", "Landmark"]),
            ("Art", &["Dance", "Painting", "Sculpture"]),
            ("Fashion", &["Accessories", "Clothing", "Makeup"]),
            ("Food", &["Beverage", "Dessert", "Main dish", "Snack", "Staple food"]),
            ("Landscape", &["City", "Countryside", "Nature"]),
            (
                "People",
                &[
                    "Daily life",
                    "Athlete",
                    "Bride and groom",
                    "Celebrity",
                    "Chef",
                    "Doctor",
                    "Farmer",
                    "Model",
                    "President",
                    "Soldier",
                    "Student",
                    "Teacher",
                ],
            ),
            ("Wildlife", &["Animal", "Plant"]),
        ];
        let categories = table
            .iter()
            .map(|(c, subs)| (c.to_string(), subs.iter().map(|s| s.to_string()).collect()))
            .collect();
        Vocabulary { categories }
    }
}

impl Vocabulary {
    pub fn has_category(&self, category: &str) -> bool {
        self.categories.contains_key(category)
    }

    pub fn accepts_subcategory(&self, category: &str, subcategory: &str) -> bool {
        match self.categories.get(category) {
            Some(subs) => subs.is_empty() || subs.contains(subcategory),
            None => false,
        }
    }
}

/// The four candidates shown per survey task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SurveyStep {
    #[serde(rename = "base")]
    Base,
    #[serde(rename = "1")]
    Step1,
    #[serde(rename = "3")]
    Step3,
    #[serde(rename = "5")]
    Step5,
}

impl SurveyStep {
    pub const ALL: [SurveyStep; 4] = [
        SurveyStep::Base,
        SurveyStep::Step1,
        SurveyStep::Step3,
        SurveyStep::Step5,
    ];

    pub fn from_step(step: u8) -> Option<SurveyStep> {
        match step {
            0 => Some(SurveyStep::Base),
            1 => Some(SurveyStep::Step1),
            3 => Some(SurveyStep::Step3),
            5 => Some(SurveyStep::Step5),
            _ => None,
        }
    }

    pub fn step(self) -> u8 {
        match self {
            SurveyStep::Base => 0,
            SurveyStep::Step1 => 1,
            SurveyStep::Step3 => 3,
            SurveyStep::Step5 => 5,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SurveyStep::Base => "base",
            SurveyStep::Step1 => "1",
            SurveyStep::Step3 => "3",
            SurveyStep::Step5 => "5",
        }
    }
}

impl fmt::Display for SurveyStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}
