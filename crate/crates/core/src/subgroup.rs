use std::fmt;

use serde::{Deserialize, Serialize};

/// Intersection of demographic attribute values, e.g. `(60+, male)`.
///
/// Ordering is lexicographic over the attribute values, which gives every
/// collection of keys a canonical order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubgroupKey(Vec<String>);

impl SubgroupKey {
    pub fn new<I, S>(values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self(values.into_iter().map(Into::into).collect())
    }

    pub fn values(&self) -> &[String] {
        &self.0
    }

    /// Parse the `a|b|c` form produced by `Display`.
    pub fn parse(label: &str) -> Self {
        Self::new(label.split('|'))
    }
}

impl fmt::Display for SubgroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("|"))
    }
}
