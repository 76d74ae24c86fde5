//! Predicate enumeration and prompt rendering for the SR2D corpus.
//!
//! Every two-object predicate `R(A, B)` is rendered through a fixed template,
//! so the corpus is fully determined by the category list, the chosen
//! variants and (for attributed prompts) the sampling seed.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, LineError, Result};
use crate::relation::Relation;
use crate::vocab::{indefinite_article, ObjectCategory, Vocabulary};

/// Spatial relation `relation` holding between `subject` (A) and `object` (B).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Predicate {
    pub subject: ObjectCategory,
    pub object: ObjectCategory,
    pub relation: Relation,
}

impl Predicate {
    pub fn new(subject: ObjectCategory, object: ObjectCategory, relation: Relation) -> Result<Self> {
        if subject.name == object.name {
            return Err(Error::invalid(format!(
                "predicate needs two distinct categories, got `{}` twice",
                subject.name
            )));
        }
        Ok(Predicate {
            subject,
            object,
            relation,
        })
    }

    /// The same configuration described from the other object:
    /// `R(A, B)` becomes `flip(R)(B, A)`.
    pub fn equivalent(&self) -> Predicate {
        Predicate {
            subject: self.object.clone(),
            object: self.subject.clone(),
            relation: self.relation.flip(),
        }
    }

    /// Same objects, opposite relation (`t_flip`).
    pub fn flipped(&self) -> Predicate {
        Predicate {
            relation: self.relation.flip(),
            ..self.clone()
        }
    }

    /// The predicate that holds in a left-right mirrored image.
    pub fn mirrored_horizontal(&self) -> Predicate {
        Predicate {
            relation: self.relation.mirror_horizontal(),
            ..self.clone()
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({}, {})", self.relation, self.subject.name, self.object.name)
    }
}

/// Enumerates all predicates over distinct pairs of `categories`.
///
/// Each unordered pair yields 8 predicates: the four relations, each in both
/// orderings. Output is ordered by pair (names sorted), then relation, then
/// ordering (A, B) before (B, A).
pub fn enumerate_predicates(categories: &[ObjectCategory]) -> Result<Vec<Predicate>> {
    if categories.is_empty() {
        return Err(Error::invalid("category list is empty"));
    }
    let mut sorted: Vec<&ObjectCategory> = categories.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    if let Some(w) = sorted.windows(2).find(|w| w[0].name == w[1].name) {
        return Err(Error::DuplicateCategory(w[0].name.clone()));
    }

    let n = sorted.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) * 4);
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (sorted[i], sorted[j]);
            for relation in Relation::ALL {
                out.push(Predicate {
                    subject: a.clone(),
                    object: b.clone(),
                    relation,
                });
                out.push(Predicate {
                    subject: b.clone(),
                    object: a.clone(),
                    relation,
                });
            }
        }
    }
    Ok(out)
}

/// Optional size and color modifiers for each object.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Attributes {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_a: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color_a: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_b: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color_b: Option<String>,
}

impl Attributes {
    /// Short pattern label such as `Z,ZC` or `-,C`.
    pub fn pattern(&self) -> String {
        fn side(size: &Option<String>, color: &Option<String>) -> String {
            let mut s = String::new();
            if size.is_some() {
                s.push('Z');
            }
            if color.is_some() {
                s.push('C');
            }
            if s.is_empty() {
                s.push('-');
            }
            s
        }
        format!("{},{}", side(&self.size_a, &self.color_a), side(&self.size_b, &self.color_b))
    }

    pub fn validate(&self, vocab: &AttributeVocabulary) -> Result<()> {
        let check = |value: &Option<String>, allowed: &[String], kind: &str| match value {
            Some(v) if !allowed.iter().any(|a| a == v) => {
                Err(Error::invalid(format!("{kind} `{v}` is not in the configured vocabulary")))
            }
            _ => Ok(()),
        };
        check(&self.size_a, &vocab.sizes, "size")?;
        check(&self.size_b, &vocab.sizes, "size")?;
        check(&self.color_a, &vocab.colors, "color")?;
        check(&self.color_b, &vocab.colors, "color")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeVocabulary {
    pub sizes: Vec<String>,
    pub colors: Vec<String>,
}

impl Default for AttributeVocabulary {
    fn default() -> Self {
        let own = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        AttributeVocabulary {
            sizes: own(&["tiny", "small", "big", "huge"]),
            colors: own(&["red", "orange", "yellow", "green", "blue", "purple", "black", "white"]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PromptVariant {
    Phrase,
    Sentence,
    SplitSentence,
    Attributed(Attributes),
    SingleObject,
    Conjunction,
}

impl PromptVariant {
    pub fn kind(&self) -> VariantKind {
        match self {
            PromptVariant::Phrase => VariantKind::Phrase,
            PromptVariant::Sentence => VariantKind::Sentence,
            PromptVariant::SplitSentence => VariantKind::SplitSentence,
            PromptVariant::Attributed(_) => VariantKind::Attributed,
            PromptVariant::SingleObject => VariantKind::SingleObject,
            PromptVariant::Conjunction => VariantKind::Conjunction,
        }
    }
}

/// Variant tag without payload, as written in prompt files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VariantKind {
    Phrase,
    Sentence,
    SplitSentence,
    Attributed,
    SingleObject,
    Conjunction,
}

impl VariantKind {
    pub const ALL: [VariantKind; 6] = [
        VariantKind::Phrase,
        VariantKind::Sentence,
        VariantKind::SplitSentence,
        VariantKind::Attributed,
        VariantKind::SingleObject,
        VariantKind::Conjunction,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VariantKind::Phrase => "phrase",
            VariantKind::Sentence => "sentence",
            VariantKind::SplitSentence => "split-sentence",
            VariantKind::Attributed => "attributed",
            VariantKind::SingleObject => "single-object",
            VariantKind::Conjunction => "conjunction",
        }
    }

    /// Whether prompts of this kind assert a spatial relation.
    pub fn is_relational(self) -> bool {
        !matches!(self, VariantKind::SingleObject | VariantKind::Conjunction)
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VariantKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown prompt variant `{s}`")))
    }
}

fn noun_phrase(size: Option<&str>, color: Option<&str>, name: &str) -> String {
    let words: Vec<&str> = size.into_iter().chain(color).chain(std::iter::once(name)).collect();
    let head = words.join(" ");
    format!("{} {}", indefinite_article(&head), head)
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Where an object sits, as used by split sentences.
fn position_words(r: Relation) -> &'static str {
    match r {
        Relation::Left => "to the left",
        Relation::Right => "to the right",
        Relation::Above => "at the top",
        Relation::Below => "at the bottom",
    }
}

/// Renders the text for a two-object prompt.
pub fn render_prompt(predicate: &Predicate, variant: &PromptVariant) -> Result<String> {
    let a = noun_phrase(None, None, &predicate.subject.name);
    let b = noun_phrase(None, None, &predicate.object.name);
    let connective = predicate.relation.connective();
    let text = match variant {
        PromptVariant::Phrase => format!("{a} {connective} {b}"),
        PromptVariant::Sentence => format!("There is {a} {connective} {b}"),
        PromptVariant::SplitSentence => format!(
            "There is {a} {}. There is {b} {}.",
            position_words(predicate.relation),
            position_words(predicate.relation.flip())
        ),
        PromptVariant::Attributed(attrs) => {
            let a = noun_phrase(attrs.size_a.as_deref(), attrs.color_a.as_deref(), &predicate.subject.name);
            let b = noun_phrase(attrs.size_b.as_deref(), attrs.color_b.as_deref(), &predicate.object.name);
            format!("{a} {connective} {b}")
        }
        PromptVariant::Conjunction => format!("{a} and {b}"),
        PromptVariant::SingleObject => {
            return Err(Error::invalid("single-object variant takes one category, not a predicate"))
        }
    };
    Ok(capitalize(&text))
}

pub fn render_single_object(category: &ObjectCategory) -> String {
    capitalize(&noun_phrase(None, None, &category.name))
}

/// Recovers the predicate from a phrase-variant prompt text.
pub fn parse_phrase(text: &str, vocab: &Vocabulary) -> Result<Predicate> {
    let bad = || Error::invalid(format!("`{text}` does not match a phrase template"));
    let rest = text
        .strip_prefix("An ")
        .or_else(|| text.strip_prefix("A "))
        .ok_or_else(bad)?;
    for relation in Relation::ALL {
        for article in ["a", "an"] {
            let sep = format!(" {} {article} ", relation.connective());
            if let Some((a, b)) = rest.split_once(&sep) {
                let (Some(subject), Some(object)) = (vocab.get(a), vocab.get(b)) else {
                    continue;
                };
                if subject.article() != (if text.starts_with("An ") { "an" } else { "a" })
                    || object.article() != article
                {
                    continue;
                }
                return Predicate::new(subject.clone(), object.clone(), relation);
            }
        }
    }
    Err(bad())
}

/// A rendered prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub id: String,
    pub text: String,
    pub variant: PromptVariant,
    pub object_a: ObjectCategory,
    pub object_b: Option<ObjectCategory>,
    pub relation: Option<Relation>,
}

impl Prompt {
    pub fn from_predicate(predicate: &Predicate, variant: PromptVariant) -> Result<Prompt> {
        let text = render_prompt(predicate, &variant)?;
        let relation = variant.kind().is_relational().then_some(predicate.relation);
        Ok(Prompt {
            id: prompt_id(&predicate.subject, Some(&predicate.object), relation, &variant),
            text,
            object_a: predicate.subject.clone(),
            object_b: Some(predicate.object.clone()),
            relation,
            variant,
        })
    }

    pub fn single_object(category: &ObjectCategory) -> Prompt {
        let variant = PromptVariant::SingleObject;
        Prompt {
            id: prompt_id(category, None, None, &variant),
            text: render_single_object(category),
            object_a: category.clone(),
            object_b: None,
            relation: None,
            variant,
        }
    }

    /// The spatial predicate, when the prompt asserts one.
    pub fn predicate(&self) -> Option<Predicate> {
        match (&self.object_b, self.relation) {
            (Some(b), Some(relation)) => Some(Predicate {
                subject: self.object_a.clone(),
                object: b.clone(),
                relation,
            }),
            _ => None,
        }
    }
}

/// `<A>__<B>__<relation>__<variant>`, omitting absent parts.
pub fn prompt_id(
    a: &ObjectCategory,
    b: Option<&ObjectCategory>,
    relation: Option<Relation>,
    variant: &PromptVariant,
) -> String {
    let mut parts = vec![a.slug()];
    if let Some(b) = b {
        parts.push(b.slug());
    }
    if let Some(r) = relation {
        parts.push(r.as_str().to_string());
    }
    parts.push(variant.kind().as_str().to_string());
    parts.join("__")
}

#[derive(Debug, Clone)]
pub struct CorpusConfig {
    pub variants: Vec<VariantKind>,
    /// Number of attributed prompts to sample.
    pub attribute_samples: usize,
    pub seed: u64,
    pub attributes: AttributeVocabulary,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            variants: vec![VariantKind::Phrase],
            attribute_samples: 1000,
            seed: 0,
            attributes: AttributeVocabulary::default(),
        }
    }
}

/// Builds the prompts for every requested variant, in variant order.
pub fn generate_corpus(vocab: &Vocabulary, config: &CorpusConfig) -> Result<Vec<Prompt>> {
    if config.variants.is_empty() {
        return Err(Error::invalid("no prompt variants selected"));
    }
    let needs_pairs = config.variants.iter().any(|v| *v != VariantKind::SingleObject);
    let predicates = if needs_pairs {
        enumerate_predicates(vocab.categories())?
    } else {
        Vec::new()
    };

    let mut prompts = Vec::new();
    for kind in &config.variants {
        match kind {
            VariantKind::Phrase | VariantKind::Sentence | VariantKind::SplitSentence => {
                let variant = match kind {
                    VariantKind::Phrase => PromptVariant::Phrase,
                    VariantKind::Sentence => PromptVariant::Sentence,
                    _ => PromptVariant::SplitSentence,
                };
                for p in &predicates {
                    prompts.push(Prompt::from_predicate(p, variant.clone())?);
                }
            }
            VariantKind::SingleObject => {
                let mut cats: Vec<&ObjectCategory> = vocab.categories().iter().collect();
                cats.sort_by(|a, b| a.name.cmp(&b.name));
                prompts.extend(cats.into_iter().map(Prompt::single_object));
            }
            VariantKind::Conjunction => {
                // relation is irrelevant; keep one predicate per ordered pair
                for p in predicates.iter().filter(|p| p.relation == Relation::Left) {
                    prompts.push(Prompt::from_predicate(p, PromptVariant::Conjunction)?);
                }
            }
            VariantKind::Attributed => {
                prompts.extend(sample_attributed(&predicates, config)?);
            }
        }
    }

    let mut ids = HashSet::new();
    for p in &prompts {
        if !ids.insert(p.id.as_str()) {
            return Err(Error::invalid(format!("duplicate prompt id `{}`", p.id)));
        }
    }
    Ok(prompts)
}

fn sample_attributed(predicates: &[Predicate], config: &CorpusConfig) -> Result<Vec<Prompt>> {
    let vocab = &config.attributes;
    if vocab.sizes.is_empty() || vocab.colors.is_empty() {
        return Err(Error::invalid("attribute vocabularies must be nonempty"));
    }
    if predicates.is_empty() {
        return Err(Error::invalid("attributed prompts need at least two categories"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pick = |xs: &[String], rng: &mut ChaCha8Rng| xs[rng.gen_range(0..xs.len())].clone();

    let mut out = Vec::with_capacity(config.attribute_samples);
    for k in 0..config.attribute_samples {
        let predicate = &predicates[rng.gen_range(0..predicates.len())];
        // one of the 15 non-empty (size A, color A, size B, color B) patterns
        let pattern: u8 = rng.gen_range(1..16);
        let mut attrs = Attributes::default();
        if pattern & 0b1000 != 0 {
            attrs.size_a = Some(pick(&vocab.sizes, &mut rng));
        }
        if pattern & 0b0100 != 0 {
            attrs.color_a = Some(pick(&vocab.colors, &mut rng));
        }
        if pattern & 0b0010 != 0 {
            attrs.size_b = Some(pick(&vocab.sizes, &mut rng));
        }
        if pattern & 0b0001 != 0 {
            attrs.color_b = Some(pick(&vocab.colors, &mut rng));
        }
        let mut prompt = Prompt::from_predicate(predicate, PromptVariant::Attributed(attrs))?;
        prompt.id = format!("{}-{k}", prompt.id);
        out.push(prompt);
    }
    Ok(out)
}

/// One line of a prompt file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub text: String,
    pub object_a: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_b: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<Relation>,
    pub variant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<Attributes>,
}

impl From<&Prompt> for PromptRecord {
    fn from(p: &Prompt) -> Self {
        PromptRecord {
            id: p.id.clone(),
            text: p.text.clone(),
            object_a: p.object_a.name.clone(),
            object_b: p.object_b.as_ref().map(|b| b.name.clone()),
            relation: p.relation,
            variant: p.variant.kind().as_str().to_string(),
            attributes: match &p.variant {
                PromptVariant::Attributed(a) => Some(a.clone()),
                _ => None,
            },
        }
    }
}

impl PromptRecord {
    fn into_prompt(self, vocab: &Vocabulary, line: usize) -> Result<Prompt> {
        let lookup = |name: &str, field: &str| {
            vocab
                .get(name)
                .cloned()
                .ok_or_else(|| Error::from(LineError::field(line, field, format!("unknown category `{name}`"))))
        };
        let kind: VariantKind = self
            .variant
            .parse()
            .map_err(|e: Error| LineError::field(line, "variant", e.to_string()))?;
        let object_a = lookup(&self.object_a, "object_a")?;
        let object_b = self.object_b.as_deref().map(|b| lookup(b, "object_b")).transpose()?;

        match (kind, &object_b, self.relation) {
            (VariantKind::SingleObject, None, None) => {}
            (VariantKind::SingleObject, _, _) => {
                return Err(LineError::field(line, "object_b", "single-object prompts name one category").into())
            }
            (VariantKind::Conjunction, Some(_), None) => {}
            (VariantKind::Conjunction, _, _) => {
                return Err(LineError::field(line, "relation", "conjunction prompts need object_b and no relation").into())
            }
            (_, Some(b), Some(_)) if b.name != object_a.name => {}
            (_, Some(_), Some(_)) => {
                return Err(LineError::field(line, "object_b", "must differ from object_a").into())
            }
            (_, None, _) => return Err(LineError::field(line, "object_b", "missing").into()),
            (_, _, None) => return Err(LineError::field(line, "relation", "missing").into()),
        }

        let variant = match kind {
            VariantKind::Phrase => PromptVariant::Phrase,
            VariantKind::Sentence => PromptVariant::Sentence,
            VariantKind::SplitSentence => PromptVariant::SplitSentence,
            VariantKind::Attributed => PromptVariant::Attributed(self.attributes.unwrap_or_default()),
            VariantKind::SingleObject => PromptVariant::SingleObject,
            VariantKind::Conjunction => PromptVariant::Conjunction,
        };
        if self.id.is_empty() {
            return Err(LineError::field(line, "id", "empty").into());
        }
        Ok(Prompt {
            id: self.id,
            text: self.text,
            variant,
            object_a,
            object_b,
            relation: self.relation,
        })
    }
}

/// Writes one JSON object per line. Returns the record count.
pub fn write_corpus<W: Write>(mut writer: W, prompts: &[Prompt]) -> Result<usize> {
    for p in prompts {
        let line = serde_json::to_string(&PromptRecord::from(p)).map_err(|e| Error::invalid(e.to_string()))?;
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(prompts.len())
}

/// Reads a prompt file, resolving category names against `vocab`.
///
/// Texts are not re-rendered, so externally rephrased files are accepted as
/// long as ids and structured fields are valid.
pub fn read_corpus<R: BufRead>(reader: R, vocab: &Vocabulary) -> Result<Vec<Prompt>> {
    let mut prompts = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: PromptRecord = serde_json::from_str(&line).map_err(|e| LineError::Malformed {
            line: lineno,
            message: e.to_string(),
        })?;
        let prompt = record.into_prompt(vocab, lineno)?;
        if !ids.insert(prompt.id.clone()) {
            return Err(LineError::DuplicateId { line: lineno, id: prompt.id }.into());
        }
        prompts.push(prompt);
    }
    Ok(prompts)
}
