use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Defines a closed code list serialized as its code string.
macro_rules! code_list {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $code:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn code(self) -> &'static str {
                match self {
                    $($name::$variant => $code),+
                }
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($code => Ok($name::$variant),)+
                    other => Err(format!("unknown {} code {other:?}", stringify!($name))),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.code())
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.code())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

code_list!(AgeBracket {
    A18To24 => "18-24",
    A25To34 => "25-34",
    A35To44 => "35-44",
    A45To54 => "45-54",
    A55To64 => "55-64",
    A65Plus => "65+",
});

code_list!(Gender {
    Male => "male",
    Female => "female",
    NonBinary => "non_binary",
    SelfDescribed => "self_described",
});

code_list!(Education {
    HighSchoolOrLess => "high_school_or_less",
    SomeCollege => "some_college",
    Associate => "associate",
    Bachelor => "bachelor",
    Master => "master",
    Doctorate => "doctorate",
    Professional => "professional",
});

code_list!(
    /// Coarse education groups used for subgroup comparison.
    EducationGroup {
        BelowBachelor => "below_bachelor",
        Bachelor => "bachelor",
        Graduate => "graduate",
    }
);

impl Education {
    pub fn group(self) -> EducationGroup {
        match self {
            Education::HighSchoolOrLess | Education::SomeCollege | Education::Associate => EducationGroup::BelowBachelor,
            Education::Bachelor => EducationGroup::Bachelor,
            Education::Master | Education::Doctorate | Education::Professional => EducationGroup::Graduate,
        }
    }
}

code_list!(IncomeBracket {
    Under25k => "under_25k",
    From25kTo50k => "25k_50k",
    From50kTo75k => "50k_75k",
    From75kTo100k => "75k_100k",
    From100kTo150k => "100k_150k",
    Over150k => "150k_plus",
});

code_list!(UsState {
    AL => "AL", AK => "AK", AZ => "AZ", AR => "AR", CA => "CA", CO => "CO", CT => "CT", DE => "DE",
    DC => "DC", FL => "FL", GA => "GA", HI => "HI", ID => "ID", IL => "IL", IN => "IN", IA => "IA",
    KS => "KS", KY => "KY", LA => "LA", ME => "ME", MD => "MD", MA => "MA", MI => "MI", MN => "MN",
    MS => "MS", MO => "MO", MT => "MT", NE => "NE", NV => "NV", NH => "NH", NJ => "NJ", NM => "NM",
    NY => "NY", NC => "NC", ND => "ND", OH => "OH", OK => "OK", OR => "OR", PA => "PA", RI => "RI",
    SC => "SC", SD => "SD", TN => "TN", TX => "TX", UT => "UT", VT => "VT", VA => "VA", WA => "WA",
    WV => "WV", WI => "WI", WY => "WY",
});

/// Optional survey answers. A missing field means the question was not
/// answered.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Demographics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age_bracket: Option<AgeBracket>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<Gender>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub education: Option<Education>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub income_bracket: Option<IncomeBracket>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<UsState>,
}

impl Demographics {
    /// `(dimension, code)` for every answered question.
    pub fn answers(&self) -> Vec<(&'static str, &'static str)> {
        [
            ("age_bracket", self.age_bracket.map(AgeBracket::code)),
            ("gender", self.gender.map(Gender::code)),
            ("education", self.education.map(Education::code)),
            ("income_bracket", self.income_bracket.map(IncomeBracket::code)),
            ("state", self.state.map(UsState::code)),
        ]
        .into_iter()
        .filter_map(|(d, v)| v.map(|v| (d, v)))
        .collect()
    }
}

pub const DIMENSIONS: [&str; 5] = ["age_bracket", "gender", "education", "income_bracket", "state"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSummary {
    pub respondents: usize,
    /// Respondents over all participants, non-respondents included.
    pub response_rate_pct: f64,
    /// Participants per code, as a share of all participants.
    pub counts: BTreeMap<String, usize>,
    pub shares_pct: BTreeMap<String, f64>,
}

/// Response rate and code distribution per dimension, every percentage over
/// all `participant_count` participants.
pub fn demographic_summary<'a>(
    demographics: impl IntoIterator<Item = Option<&'a Demographics>>,
    participant_count: usize,
) -> BTreeMap<String, DimensionSummary> {
    let mut counts: BTreeMap<&str, BTreeMap<String, usize>> = DIMENSIONS.iter().map(|d| (*d, BTreeMap::new())).collect();
    for d in demographics.into_iter().flatten() {
        for (dim, code) in d.answers() {
            *counts.get_mut(dim).expect("known dimension").entry(code.to_string()).or_default() += 1;
        }
    }
    let pct = |n: usize| if participant_count == 0 { 0.0 } else { n as f64 / participant_count as f64 * 100.0 };
    counts
        .into_iter()
        .map(|(dim, by_code)| {
            let respondents = by_code.values().sum();
            let shares_pct = by_code.iter().map(|(c, &n)| (c.clone(), pct(n))).collect();
            (
                dim.to_string(),
                DimensionSummary {
                    respondents,
                    response_rate_pct: pct(respondents),
                    counts: by_code,
                    shares_pct,
                },
            )
        })
        .collect()
}
