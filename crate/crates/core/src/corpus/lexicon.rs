//! Closed word lists of the synthetic fact-verification language.

pub const ENTITIES: [&str; 16] = [
    "Avra", "Belo", "Corin", "Dessa", "Elun", "Faro", "Gira", "Hollen", "Ismer", "Jara", "Kelo",
    "Lumen", "Mira", "Noven", "Orla", "Pell",
];

/// Attributes with small integer values.
pub const COUNT_ATTRIBUTES: [&str; 3] = ["population", "height", "rank"];
/// Attributes whose values are years.
pub const YEAR_ATTRIBUTES: [&str; 2] = ["founded", "elected"];

/// The relation used by two-hop claims: "X 's rival 's population is 12".
pub const RELATION: &str = "rival";

pub const COUNT_RANGE: std::ops::RangeInclusive<u32> = 1..=30;
pub const YEAR_RANGE: std::ops::RangeInclusive<u32> = 1990..=2019;

pub const STRUCTURE_WORDS: [&str; 6] = ["{", "}", "\"", ":", ",", "verdict"];

pub const PROMPT_WORDS: [&str; 8] = ["claim", "evidence", "Q", "A", "'s", "is", "?", "."];

/// Words used by justification templates and the oracle's distractors.
pub const JUSTIFICATION_WORDS: [&str; 28] = [
    "justification",
    "the",
    "says",
    "which",
    "matches",
    "confirms",
    "contradicts",
    "differs",
    "so",
    "and",
    "not",
    "there",
    "for",
    "it",
    "a",
    "hoax",
    "with",
    "of",
    "stated",
    "also",
    "maybe",
    "likely",
    "claims",
    "because",
    "this",
    "that",
    "shows",
    "from",
];

/// Words that only appear through the leak list.
pub const LEAK_WORDS: [&str; 23] = [
    "true",
    "false",
    "True",
    "False",
    "TRUE",
    "FALSE",
    "no",
    "evidence",
    "unsupported",
    "refuted",
    "supported",
    "support",
    "refute",
    "inconsistent",
    "consistent",
    "accurately",
    "inaccurately",
    "incorrectly",
    "correctly",
    "impossible",
    "to",
    "verify",
    "determine",
];

/// Label-indicative words and phrases withheld from frozen justification context.
pub const LEAK_PHRASES: [&str; 20] = [
    "true",
    "false",
    "True",
    "False",
    "TRUE",
    "FALSE",
    "no evidence",
    "unsupported",
    "refuted",
    "supported",
    "support",
    "refute",
    "inconsistent",
    "consistent",
    "accurately",
    "inaccurately",
    "incorrectly",
    "correctly",
    "impossible to verify",
    "impossible to determine",
];

/// Surface forms whose presence argues for a Supported verdict.
pub const SUPPORT_STANCE: [&str; 11] = [
    "matches",
    "confirms",
    "supported",
    "support",
    "true",
    "True",
    "TRUE",
    "consistent",
    "correctly",
    "accurately",
    "shows",
];

/// Surface forms whose presence argues for a Refuted verdict.
pub const REFUTE_STANCE: [&str; 15] = [
    "contradicts",
    "differs",
    "refuted",
    "refute",
    "unsupported",
    "false",
    "False",
    "FALSE",
    "inconsistent",
    "incorrectly",
    "inaccurately",
    "hoax",
    "not",
    "no",
    "impossible",
];

/// Neutral tokens the oracle may emit in place of a justification token.
pub const FILLER_WORDS: [&str; 6] = ["also", "maybe", "likely", "because", "this", "that"];

pub fn count_values() -> impl Iterator<Item = String> {
    COUNT_RANGE.map(|v| v.to_string())
}

pub fn year_values() -> impl Iterator<Item = String> {
    YEAR_RANGE.map(|v| v.to_string())
}

pub fn is_year_attribute(attr: &str) -> bool {
    YEAR_ATTRIBUTES.contains(&attr)
}
