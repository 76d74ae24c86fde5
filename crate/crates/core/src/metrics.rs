//! Aggregation of per-image evaluations into object accuracy and the VISOR
//! metric family.
//!
//! Fractions are returned in `[0, 1]` by the scalar functions; summaries carry
//! percentages. All percentages are computed as `100 * count / total` from
//! integer counts so independent recounts reproduce them bit-for-bit.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::corpus::{Predicate, VariantKind};
use crate::detection::ImageEvaluation;
use crate::error::{Error, LineError, Result};
use crate::relation::Relation;

pub(crate) fn pct(count: usize, total: usize) -> f64 {
    100.0 * count as f64 / total as f64
}

/// The `N` evaluated images of one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptGroup {
    pub prompt_id: String,
    pub predicate: Predicate,
    pub variant: VariantKind,
    pub evaluations: Vec<ImageEvaluation>,
}

impl PromptGroup {
    /// Sorts evaluations by image index and checks they cover `0..N` exactly.
    pub fn new(
        prompt_id: impl Into<String>,
        predicate: Predicate,
        variant: VariantKind,
        mut evaluations: Vec<ImageEvaluation>,
    ) -> Result<Self> {
        let prompt_id = prompt_id.into();
        if evaluations.is_empty() {
            return Err(Error::invalid(format!("prompt `{prompt_id}` has no images")));
        }
        evaluations.sort_by_key(|e| e.image_index);
        for (i, e) in evaluations.iter().enumerate() {
            if e.prompt_id != prompt_id {
                return Err(Error::IdMismatch {
                    record: e.prompt_id.clone(),
                    prompt: prompt_id,
                });
            }
            if e.image_index != i {
                return Err(Error::invalid(format!(
                    "prompt `{prompt_id}`: image indices must be 0..{} without gaps",
                    evaluations.len()
                )));
            }
        }
        Ok(PromptGroup {
            prompt_id,
            predicate,
            variant,
            evaluations,
        })
    }

    pub fn images(&self) -> usize {
        self.evaluations.len()
    }

    pub fn visor_count(&self) -> usize {
        self.evaluations.iter().filter(|e| e.visor).count()
    }
}

fn nonempty(evals: &[ImageEvaluation]) -> Result<()> {
    if evals.is_empty() {
        Err(Error::invalid("no evaluations"))
    } else {
        Ok(())
    }
}

/// Fraction of images in which both objects were detected.
pub fn object_accuracy(evals: &[ImageEvaluation]) -> Result<f64> {
    nonempty(evals)?;
    Ok(evals.iter().filter(|e| e.oa).count() as f64 / evals.len() as f64)
}

/// Fraction of images with both objects present and the relation correct.
pub fn visor_uncond(evals: &[ImageEvaluation]) -> Result<f64> {
    nonempty(evals)?;
    Ok(evals.iter().filter(|e| e.visor).count() as f64 / evals.len() as f64)
}

/// Fraction of relation-correct images among those with both objects present.
pub fn visor_cond(evals: &[ImageEvaluation]) -> Result<f64> {
    let both = evals.iter().filter(|e| e.oa).count();
    if both == 0 {
        return Err(Error::undefined("VISOR_cond needs at least one image with both objects detected"));
    }
    Ok(evals.iter().filter(|e| e.visor).count() as f64 / both as f64)
}

fn uniform_images(groups: &[&PromptGroup]) -> Result<usize> {
    let first = groups
        .first()
        .ok_or_else(|| Error::invalid("no prompt groups"))?
        .images();
    if let Some(g) = groups.iter().find(|g| g.images() != first) {
        return Err(Error::invalid(format!(
            "prompt `{}` has {} images, expected {first}",
            g.prompt_id,
            g.images()
        )));
    }
    Ok(first)
}

/// Fraction of prompts with at least `n` VISOR-correct images.
pub fn visor_n(groups: &[PromptGroup], n: usize) -> Result<f64> {
    let refs: Vec<&PromptGroup> = groups.iter().collect();
    let images = uniform_images(&refs)?;
    if n == 0 || n > images {
        return Err(Error::invalid(format!("n must be in 1..={images}, got {n}")));
    }
    Ok(groups.iter().filter(|g| g.visor_count() >= n).count() as f64 / groups.len() as f64)
}

/// Recovers unconditional VISOR from `VISOR_1..VISOR_N` as
/// `(1/N) * sum_n n * (V_n - V_{n+1})` with `V_{N+1} = 0`.
///
/// Units follow the input (fractions or percentages).
pub fn visor_from_at_least_n(visor_n: &[f64]) -> f64 {
    let n_images = visor_n.len();
    if n_images == 0 {
        return 0.0;
    }
    let at = |n: usize| if n > n_images { 0.0 } else { visor_n[n - 1] };
    let total: f64 = (1..=n_images).map(|n| n as f64 * (at(n) - at(n + 1))).sum();
    total / n_images as f64
}

/// OA and the VISOR family over a set of prompt groups.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSummary {
    pub prompts: usize,
    pub images: usize,
    pub oa_images: usize,
    pub visor_images: usize,
    pub oa_pct: f64,
    pub visor_uncond_pct: f64,
    /// Absent when no image had both objects.
    pub visor_cond_pct: Option<f64>,
    /// `visor_n_pct[n - 1]` is VISOR_n.
    pub visor_n_pct: Vec<f64>,
}

impl MetricsSummary {
    pub fn from_groups<'a, I>(groups: I) -> Result<MetricsSummary>
    where
        I: IntoIterator<Item = &'a PromptGroup>,
    {
        let groups: Vec<&PromptGroup> = groups.into_iter().collect();
        let per_prompt = uniform_images(&groups)?;

        let mut images = 0;
        let mut oa_images = 0;
        let mut visor_images = 0;
        // prompts_with_exactly[k] = prompts with k correct images
        let mut prompts_with_exactly = vec![0usize; per_prompt + 1];
        for g in &groups {
            images += g.images();
            oa_images += g.evaluations.iter().filter(|e| e.oa).count();
            let k = g.visor_count();
            visor_images += k;
            prompts_with_exactly[k] += 1;
        }

        let prompts = groups.len();
        let mut at_least = 0usize;
        let mut visor_n_pct = vec![0.0; per_prompt];
        for n in (1..=per_prompt).rev() {
            at_least += prompts_with_exactly[n];
            visor_n_pct[n - 1] = pct(at_least, prompts);
        }

        Ok(MetricsSummary {
            prompts,
            images,
            oa_images,
            visor_images,
            oa_pct: pct(oa_images, images),
            visor_uncond_pct: pct(visor_images, images),
            visor_cond_pct: (oa_images > 0).then(|| pct(visor_images, oa_images)),
            visor_n_pct,
        })
    }

    pub fn images_per_prompt(&self) -> usize {
        self.visor_n_pct.len()
    }

    /// Checks the structural identities every summary must satisfy.
    pub fn check_invariants(&self, tol: f64) -> std::result::Result<(), String> {
        let in_range = |x: f64| (0.0..=100.0).contains(&x);
        let all = [self.oa_pct, self.visor_uncond_pct]
            .into_iter()
            .chain(self.visor_cond_pct)
            .chain(self.visor_n_pct.iter().copied());
        if let Some(x) = all.into_iter().find(|x| !in_range(*x)) {
            return Err(format!("value {x} outside [0, 100]"));
        }
        if self.visor_uncond_pct > self.oa_pct {
            return Err(format!("VISOR {} exceeds OA {}", self.visor_uncond_pct, self.oa_pct));
        }
        if let Some(w) = self.visor_n_pct.windows(2).find(|w| w[1] > w[0]) {
            return Err(format!("VISOR_n increases: {} -> {}", w[0], w[1]));
        }
        if let Some(cond) = self.visor_cond_pct {
            let chained = self.oa_pct * cond / 100.0;
            if (chained - self.visor_uncond_pct).abs() > tol {
                return Err(format!("chain rule: OA*cond = {chained}, VISOR = {}", self.visor_uncond_pct));
            }
        }
        let from_n = visor_from_at_least_n(&self.visor_n_pct);
        if (from_n - self.visor_uncond_pct).abs() > tol {
            return Err(format!("at-least-n identity: {from_n} vs {}", self.visor_uncond_pct));
        }
        Ok(())
    }
}

/// Partitions groups by `key` and summarizes each bucket.
pub fn split_by<K, F>(groups: &[PromptGroup], key: F) -> Result<BTreeMap<K, MetricsSummary>>
where
    K: Ord,
    F: Fn(&PromptGroup) -> K,
{
    if groups.is_empty() {
        return Err(Error::invalid("no prompt groups"));
    }
    let mut buckets: BTreeMap<K, Vec<&PromptGroup>> = BTreeMap::new();
    for g in groups {
        buckets.entry(key(g)).or_default().push(g);
    }
    buckets
        .into_iter()
        .map(|(k, gs)| Ok((k, MetricsSummary::from_groups(gs)?)))
        .collect()
}

pub fn split_by_relation(groups: &[PromptGroup]) -> Result<BTreeMap<Relation, MetricsSummary>> {
    split_by(groups, |g| g.predicate.relation)
}

pub fn split_by_variant(groups: &[PromptGroup]) -> Result<BTreeMap<VariantKind, MetricsSummary>> {
    split_by(groups, |g| g.variant)
}

/// Unordered pair of names, stored sorted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct UnorderedPair(pub String, pub String);

impl UnorderedPair {
    pub fn new(a: &str, b: &str) -> Self {
        if a <= b {
            UnorderedPair(a.to_string(), b.to_string())
        } else {
            UnorderedPair(b.to_string(), a.to_string())
        }
    }
}

pub fn split_by_supercategory_pair(groups: &[PromptGroup]) -> Result<BTreeMap<UnorderedPair, MetricsSummary>> {
    split_by(groups, |g| {
        UnorderedPair::new(&g.predicate.subject.supercategory, &g.predicate.object.supercategory)
    })
}

pub fn split_by_object_pair(groups: &[PromptGroup]) -> Result<BTreeMap<UnorderedPair, MetricsSummary>> {
    split_by(groups, |g| UnorderedPair::new(&g.predicate.subject.name, &g.predicate.object.name))
}

/// Detection rates of the first-mentioned object (A), the second (B), and both.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectPresence {
    pub images: usize,
    pub a_pct: f64,
    pub b_pct: f64,
    pub both_pct: f64,
}

pub fn object_presence(groups: &[PromptGroup]) -> Result<ObjectPresence> {
    let evals: Vec<&ImageEvaluation> = groups.iter().flat_map(|g| &g.evaluations).collect();
    if evals.is_empty() {
        return Err(Error::invalid("no evaluations"));
    }
    let count = |f: fn(&ImageEvaluation) -> bool| evals.iter().filter(|e| f(e)).count();
    Ok(ObjectPresence {
        images: evals.len(),
        a_pct: pct(count(|e| e.object_a_present), evals.len()),
        b_pct: pct(count(|e| e.object_b_present), evals.len()),
        both_pct: pct(count(|e| e.oa), evals.len()),
    })
}

/// Agreement between the images of `p` and those of its equivalent prompt `q`.
///
/// Every image of `p` with both objects detected is paired with every such
/// image of `q`. A pair agrees when both show the same configuration on the
/// axis of `p`'s relation, after re-expressing `q`'s relations from `p`'s
/// subject. Returns `None` when either side has no qualifying image.
pub fn pair_agreement(p: &PromptGroup, q: &PromptGroup) -> Option<f64> {
    let axis = p.predicate.relation.axis();
    let p_side: Vec<_> = p
        .evaluations
        .iter()
        .filter(|e| e.oa)
        .map(|e| e.relations_satisfied.restrict(axis))
        .collect();
    let q_side: Vec<_> = q
        .evaluations
        .iter()
        .filter(|e| e.oa)
        .map(|e| e.relations_satisfied.flipped().restrict(axis))
        .collect();
    if p_side.is_empty() || q_side.is_empty() {
        return None;
    }
    let agree = p_side
        .iter()
        .map(|a| q_side.iter().filter(|b| *b == a).count())
        .sum::<usize>();
    Some(agree as f64 / (p_side.len() * q_side.len()) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyTable {
    /// Percentage per relation of the first prompt in each equivalent pair;
    /// absent when no pair of that relation had qualifying images.
    pub by_relation: BTreeMap<Relation, Option<f64>>,
    /// Mean of the defined per-relation values.
    pub average: Option<f64>,
    /// Prompts that contributed a value.
    pub prompts_counted: usize,
    /// Prompts skipped for lack of qualifying images.
    pub prompts_excluded: usize,
}

/// Consistency between equivalent phrasings, per relation type.
///
/// Each prompt is matched with the prompt for `equivalent_predicate` of the
/// same variant; per-prompt agreement rates are averaged within each
/// relation. Attributed prompts are not paired and are ignored.
pub fn consistency(groups: &[PromptGroup]) -> Result<ConsistencyTable> {
    type Key<'a> = (&'a str, &'a str, Relation, VariantKind);
    let candidates: Vec<&PromptGroup> = groups
        .iter()
        .filter(|g| g.variant != VariantKind::Attributed)
        .collect();
    if candidates.is_empty() {
        return Err(Error::invalid("no prompt groups eligible for consistency"));
    }
    let mut index: HashMap<Key, &PromptGroup> = HashMap::new();
    for g in &candidates {
        let p = &g.predicate;
        let key = (p.subject.name.as_str(), p.object.name.as_str(), p.relation, g.variant);
        if index.insert(key, g).is_some() {
            return Err(Error::invalid(format!("two prompts share the predicate {p} ({})", g.variant)));
        }
    }

    let mut rates: BTreeMap<Relation, Vec<f64>> = BTreeMap::new();
    let mut excluded = 0;
    for g in &candidates {
        let p = &g.predicate;
        let q = index
            .get(&(p.object.name.as_str(), p.subject.name.as_str(), p.relation.flip(), g.variant))
            .ok_or_else(|| {
                Error::invalid(format!(
                    "prompt `{}` has no equivalent prompt {} in the corpus",
                    g.prompt_id,
                    p.equivalent()
                ))
            })?;
        match pair_agreement(g, q) {
            Some(rate) => rates.entry(p.relation).or_default().push(rate),
            None => excluded += 1,
        }
    }

    let by_relation: BTreeMap<Relation, Option<f64>> = Relation::ALL
        .into_iter()
        .map(|r| {
            let value = rates
                .get(&r)
                .map(|xs| 100.0 * xs.iter().sum::<f64>() / xs.len() as f64);
            (r, value)
        })
        .collect();
    let defined: Vec<f64> = by_relation.values().flatten().copied().collect();
    Ok(ConsistencyTable {
        average: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        prompts_counted: rates.values().map(Vec::len).sum(),
        prompts_excluded: excluded,
        by_relation,
    })
}

/// An external metric's score for an image with its prompt and with the
/// relation-flipped prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub prompt_id: String,
    pub image_index: usize,
    pub score: f64,
    pub score_flipped: f64,
}

/// Reads a line-delimited score file.
pub fn parse_scores<R: BufRead>(reader: R) -> Result<Vec<ScoreRecord>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: ScoreRecord = serde_json::from_str(&line).map_err(|e| LineError::Malformed {
            line: lineno,
            message: e.to_string(),
        })?;
        for (name, v) in [("score", record.score), ("score_flipped", record.score_flipped)] {
            if !v.is_finite() {
                return Err(LineError::field(lineno, name, "must be finite").into());
            }
        }
        out.push(record);
    }
    Ok(out)
}

/// Mean of `score - score_flipped`.
pub fn delta_s(scores: &[ScoreRecord]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::invalid("no score records"));
    }
    let total: f64 = scores.iter().map(|s| s.score - s.score_flipped).sum();
    Ok(total / scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaSummary {
    pub records: usize,
    pub mean_score: f64,
    pub mean_score_flipped: f64,
    pub delta: f64,
}

pub fn delta_summary(scores: &[ScoreRecord]) -> Result<DeltaSummary> {
    let delta = delta_s(scores)?;
    let n = scores.len() as f64;
    Ok(DeltaSummary {
        records: scores.len(),
        mean_score: scores.iter().map(|s| s.score).sum::<f64>() / n,
        mean_score_flipped: scores.iter().map(|s| s.score_flipped).sum::<f64>() / n,
        delta,
    })
}
