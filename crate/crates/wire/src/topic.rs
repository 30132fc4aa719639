use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub const LEVEL_SEPARATOR: char = '/';
pub const SINGLE_LEVEL_WILDCARD: &str = "+";
pub const MULTI_LEVEL_WILDCARD: &str = "#";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopicError {
    #[error("topic is empty")]
    Empty,
    #[error("topic name `{0}` contains a wildcard")]
    WildcardInName(String),
    #[error("topic filter `{0}` uses a wildcard inside a level")]
    EmbeddedWildcard(String),
    #[error("topic filter `{0}` has `#` before the last level")]
    HashNotLast(String),
    #[error("topic is {0} bytes, limit is 65535")]
    TooLong(usize),
}

fn check_common(s: &str) -> Result<(), TopicError> {
    if s.is_empty() {
        return Err(TopicError::Empty);
    }
    if s.len() > u16::MAX as usize {
        return Err(TopicError::TooLong(s.len()));
    }
    Ok(())
}

/// A concrete, wildcard-free topic a message is published to.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TopicName(String);

impl TopicName {
    pub fn new(s: impl Into<String>) -> Result<Self, TopicError> {
        let s = s.into();
        check_common(&s)?;
        if s.contains(['+', '#']) {
            return Err(TopicError::WildcardInName(s));
        }
        Ok(Self(s))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn levels(&self) -> impl Iterator<Item = &str> {
        self.0.split(LEVEL_SEPARATOR)
    }
}

impl FromStr for TopicName {
    type Err = TopicError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl fmt::Display for TopicName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum FilterLevel {
    Literal(String),
    /// `+`: exactly one level.
    Single,
    /// `#`: every remaining level, including none.
    Multi,
}

/// A subscription pattern; `+` and `#` are only allowed as whole levels and
/// `#` only as the final one.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TopicFilter {
    raw: String,
    levels: Vec<FilterLevel>,
}

impl TopicFilter {
    pub fn new(s: impl Into<String>) -> Result<Self, TopicError> {
        let raw = s.into();
        check_common(&raw)?;
        let parts: Vec<&str> = raw.split(LEVEL_SEPARATOR).collect();
        let mut levels = Vec::with_capacity(parts.len());
        for (i, part) in parts.iter().enumerate() {
            let level = match *part {
                SINGLE_LEVEL_WILDCARD => FilterLevel::Single,
                MULTI_LEVEL_WILDCARD if i + 1 == parts.len() => FilterLevel::Multi,
                MULTI_LEVEL_WILDCARD => return Err(TopicError::HashNotLast(raw.clone())),
                lit if lit.contains(['+', '#']) => {
                    return Err(TopicError::EmbeddedWildcard(raw.clone()))
                }
                lit => FilterLevel::Literal(lit.to_string()),
            };
            levels.push(level);
        }
        Ok(Self { raw, levels })
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    pub fn has_wildcards(&self) -> bool {
        self.levels.iter().any(|l| !matches!(l, FilterLevel::Literal(_)))
    }

    pub fn matches(&self, topic: &TopicName) -> bool {
        topic_matches(self, topic)
    }
}

impl FromStr for TopicFilter {
    type Err = TopicError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl fmt::Display for TopicFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

/// Level-wise match: `+` consumes exactly one level, a trailing `#` consumes
/// the rest (possibly nothing), literals must be equal.
pub fn topic_matches(filter: &TopicFilter, topic: &TopicName) -> bool {
    let mut levels = topic.levels();
    for f in &filter.levels {
        match f {
            FilterLevel::Multi => return true,
            FilterLevel::Single => {
                if levels.next().is_none() {
                    return false;
                }
            }
            FilterLevel::Literal(lit) => match levels.next() {
                Some(level) if level == lit => {}
                _ => return false,
            },
        }
    }
    levels.next().is_none()
}
