//! Object categories and the built-in MS-COCO vocabulary.

use std::collections::BTreeSet;
use std::io::BufRead;

use serde::Serialize;

use crate::error::{Error, LineError, Result};

/// The 80 MS-COCO detection categories, with their supercategory, in the
/// canonical COCO order.
pub const COCO_CATEGORIES: [(&str, &str); 80] = [
    ("person", "person"),
    ("bicycle", "vehicle"),
    ("car", "vehicle"),
    ("motorcycle", "vehicle"),
    ("airplane", "vehicle"),
    ("bus", "vehicle"),
    ("train", "vehicle"),
    ("truck", "vehicle"),
    ("boat", "vehicle"),
    ("traffic light", "outdoor"),
    ("fire hydrant", "outdoor"),
    ("stop sign", "outdoor"),
    ("parking meter", "outdoor"),
    ("bench", "outdoor"),
    ("bird", "animal"),
    ("cat", "animal"),
    ("dog", "animal"),
    ("horse", "animal"),
    ("sheep", "animal"),
    ("cow", "animal"),
    ("elephant", "animal"),
    ("bear", "animal"),
    ("zebra", "animal"),
    ("giraffe", "animal"),
    ("backpack", "accessory"),
    ("umbrella", "accessory"),
    ("handbag", "accessory"),
    ("tie", "accessory"),
    ("suitcase", "accessory"),
    ("frisbee", "sports"),
    ("skis", "sports"),
    ("snowboard", "sports"),
    ("sports ball", "sports"),
    ("kite", "sports"),
    ("baseball bat", "sports"),
    ("baseball glove", "sports"),
    ("skateboard", "sports"),
    ("surfboard", "sports"),
    ("tennis racket", "sports"),
    ("bottle", "kitchen"),
    ("wine glass", "kitchen"),
    ("cup", "kitchen"),
    ("fork", "kitchen"),
    ("knife", "kitchen"),
    ("spoon", "kitchen"),
    ("bowl", "kitchen"),
    ("banana", "food"),
    ("apple", "food"),
    ("sandwich", "food"),
    ("orange", "food"),
    ("broccoli", "food"),
    ("carrot", "food"),
    ("hot dog", "food"),
    ("pizza", "food"),
    ("donut", "food"),
    ("cake", "food"),
    ("chair", "furniture"),
    ("couch", "furniture"),
    ("potted plant", "furniture"),
    ("bed", "furniture"),
    ("dining table", "furniture"),
    ("toilet", "furniture"),
    ("tv", "electronic"),
    ("laptop", "electronic"),
    ("mouse", "electronic"),
    ("remote", "electronic"),
    ("keyboard", "electronic"),
    ("cell phone", "electronic"),
    ("microwave", "appliance"),
    ("oven", "appliance"),
    ("toaster", "appliance"),
    ("sink", "appliance"),
    ("refrigerator", "appliance"),
    ("book", "indoor"),
    ("clock", "indoor"),
    ("vase", "indoor"),
    ("scissors", "indoor"),
    ("teddy bear", "indoor"),
    ("hair drier", "indoor"),
    ("toothbrush", "indoor"),
];

/// One representative category per non-person supercategory, used for the
/// attribute study.
pub const ATTRIBUTE_STUDY_CATEGORIES: [&str; 11] = [
    "car",
    "bench",
    "dog",
    "suitcase",
    "sports ball",
    "cup",
    "cake",
    "chair",
    "laptop",
    "microwave",
    "book",
];

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct ObjectCategory {
    pub name: String,
    pub supercategory: String,
}

impl ObjectCategory {
    pub fn new(name: impl Into<String>, supercategory: impl Into<String>) -> Self {
        ObjectCategory {
            name: name.into(),
            supercategory: supercategory.into(),
        }
    }

    /// Indefinite article for the bare category name.
    pub fn article(&self) -> &'static str {
        indefinite_article(&self.name)
    }

    /// Category name with spaces replaced by hyphens, as used in prompt ids.
    pub fn slug(&self) -> String {
        self.name.replace(' ', "-")
    }
}

/// "an" when `word` starts with a vowel letter, "a" otherwise.
pub fn indefinite_article(word: &str) -> &'static str {
    match word.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

/// An ordered list of categories with distinct names.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    categories: Vec<ObjectCategory>,
}

impl Vocabulary {
    pub fn new(categories: Vec<ObjectCategory>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for c in &categories {
            if c.name.trim().is_empty() {
                return Err(Error::invalid("empty category name"));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(Error::DuplicateCategory(c.name.clone()));
            }
        }
        Ok(Vocabulary { categories })
    }

    pub fn coco() -> Self {
        let categories = COCO_CATEGORIES
            .iter()
            .map(|(n, s)| ObjectCategory::new(*n, *s))
            .collect();
        Vocabulary { categories }
    }

    pub fn attribute_study() -> Self {
        let coco = Vocabulary::coco();
        let categories = ATTRIBUTE_STUDY_CATEGORIES
            .iter()
            .map(|n| coco.get(n).cloned().expect("attribute-study category is in COCO"))
            .collect();
        Vocabulary { categories }
    }

    /// Resolves a named preset (`coco80`, `attr11`).
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "coco80" | "coco" => Some(Vocabulary::coco()),
            "attr11" => Some(Vocabulary::attribute_study()),
            _ => None,
        }
    }

    /// Reads a vocabulary from rows of `name,supercategory` (comma or tab
    /// separated). Blank lines and lines starting with `#` are skipped.
    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut categories = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let sep = if trimmed.contains('\t') { '\t' } else { ',' };
            let mut parts = trimmed.splitn(2, sep);
            let name = parts.next().unwrap_or_default().trim().to_lowercase();
            let supercategory = parts.next().map(|s| s.trim().to_lowercase()).unwrap_or_default();
            if name.is_empty() {
                return Err(LineError::field(lineno, "name", "empty category name").into());
            }
            if supercategory.is_empty() {
                return Err(LineError::field(lineno, "supercategory", "missing supercategory").into());
            }
            categories.push(ObjectCategory::new(name, supercategory));
        }
        Vocabulary::new(categories)
    }

    pub fn categories(&self) -> &[ObjectCategory] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&ObjectCategory> {
        self.categories.iter().find(|c| c.name == name)
    }

    pub fn lookup(&self, name: &str) -> Result<&ObjectCategory> {
        self.get(name).ok_or_else(|| Error::UnknownCategory(name.to_string()))
    }

    /// Distinct supercategories, sorted.
    pub fn supercategories(&self) -> Vec<String> {
        self.categories
            .iter()
            .map(|c| c.supercategory.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}
