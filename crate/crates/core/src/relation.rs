//! The four two-dimensional spatial relations and small sets of them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Left,
    Right,
    Above,
    Below,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    Horizontal,
    Vertical,
}

impl Relation {
    pub const ALL: [Relation; 4] = [Relation::Left, Relation::Right, Relation::Above, Relation::Below];

    /// The opposite relation on the same axis.
    pub fn flip(self) -> Relation {
        match self {
            Relation::Left => Relation::Right,
            Relation::Right => Relation::Left,
            Relation::Above => Relation::Below,
            Relation::Below => Relation::Above,
        }
    }

    /// The relation seen after mirroring the image left-to-right.
    /// Vertical relations are unaffected.
    pub fn mirror_horizontal(self) -> Relation {
        match self.axis() {
            Axis::Horizontal => self.flip(),
            Axis::Vertical => self,
        }
    }

    pub fn axis(self) -> Axis {
        match self {
            Relation::Left | Relation::Right => Axis::Horizontal,
            Relation::Above | Relation::Below => Axis::Vertical,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Left => "left",
            Relation::Right => "right",
            Relation::Above => "above",
            Relation::Below => "below",
        }
    }

    /// Connective used between the two noun phrases of a prompt.
    pub fn connective(self) -> &'static str {
        match self {
            Relation::Left => "to the left of",
            Relation::Right => "to the right of",
            Relation::Above => "above",
            Relation::Below => "below",
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Relation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "left" => Ok(Relation::Left),
            "right" => Ok(Relation::Right),
            "above" => Ok(Relation::Above),
            "below" => Ok(Relation::Below),
            other => Err(Error::invalid(format!(
                "unknown relation `{other}` (expected left, right, above or below)"
            ))),
        }
    }
}

/// A set of relations, stored as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct RelationSet(u8);

impl RelationSet {
    pub const EMPTY: RelationSet = RelationSet(0);

    pub fn contains(self, r: Relation) -> bool {
        self.0 & r.bit() != 0
    }

    pub fn insert(&mut self, r: Relation) {
        self.0 |= r.bit();
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = Relation> {
        Relation::ALL.into_iter().filter(move |r| self.contains(*r))
    }

    /// Every member replaced by its flip.
    pub fn flipped(self) -> RelationSet {
        self.iter().map(Relation::flip).collect()
    }

    pub fn mirrored_horizontal(self) -> RelationSet {
        self.iter().map(Relation::mirror_horizontal).collect()
    }

    /// Members lying on `axis`.
    pub fn restrict(self, axis: Axis) -> RelationSet {
        self.iter().filter(|r| r.axis() == axis).collect()
    }
}

impl FromIterator<Relation> for RelationSet {
    fn from_iter<I: IntoIterator<Item = Relation>>(iter: I) -> Self {
        let mut set = RelationSet::EMPTY;
        for r in iter {
            set.insert(r);
        }
        set
    }
}

impl Serialize for RelationSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for RelationSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let items = Vec::<Relation>::deserialize(deserializer)?;
        Ok(items.into_iter().collect())
    }
}
