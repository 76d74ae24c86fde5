//! Joins a prompt corpus with detection records and produces per-prompt
//! evaluation groups.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::{Prompt, VariantKind};
use crate::detection::{all_present, evaluate_image, ImageDetections, ImageEvaluation, DEFAULT_THRESHOLD};
use crate::error::{Error, LineError, Result};
use crate::metrics::{pct, MetricsSummary, PromptGroup, ScoreRecord};
use crate::relation::{Relation, RelationSet};
use crate::vocab::Vocabulary;

/// Images generated per prompt unless configured otherwise.
pub const DEFAULT_IMAGES_PER_PROMPT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub threshold: f64,
    pub images_per_prompt: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            threshold: DEFAULT_THRESHOLD,
            images_per_prompt: DEFAULT_IMAGES_PER_PROMPT,
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::invalid(format!("threshold {} is outside [0, 1]", self.threshold)));
        }
        if self.images_per_prompt == 0 {
            return Err(Error::invalid("images per prompt must be at least 1"));
        }
        Ok(())
    }
}

/// Presence outcome for prompts that name objects without a relation.
#[derive(Debug, Clone, PartialEq)]
pub struct PresenceGroup {
    pub prompt_id: String,
    pub variant: VariantKind,
    pub present: Vec<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Coverage {
    pub expected_images: usize,
    pub observed_images: usize,
    /// `(prompt_id, image_index)` slots with no detection record; scored as
    /// failures.
    pub missing: Vec<(String, usize)>,
    /// Detection records whose prompt id is not in the corpus; skipped.
    pub unknown_prompt_ids: Vec<String>,
}

impl Coverage {
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.missing.is_empty() {
            let shown: Vec<String> = self
                .missing
                .iter()
                .take(5)
                .map(|(id, i)| format!("{id}[{i}]"))
                .collect();
            let more = if self.missing.len() > 5 { ", ..." } else { "" };
            out.push(format!(
                "{} of {} images have no detection record and were scored as failures ({}{more})",
                self.missing.len(),
                self.expected_images,
                shown.join(", ")
            ));
        }
        for id in &self.unknown_prompt_ids {
            out.push(format!("detections reference unknown prompt id `{id}`; skipped"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRun {
    pub groups: Vec<PromptGroup>,
    pub presence: Vec<PresenceGroup>,
    pub coverage: Coverage,
}

impl EvaluationRun {
    /// Summary over all relational prompts.
    pub fn summary(&self) -> Result<MetricsSummary> {
        MetricsSummary::from_groups(&self.groups)
    }

    /// Percentage of images with every mentioned object detected, per
    /// prompt variant.
    pub fn object_generation(&self) -> BTreeMap<VariantKind, f64> {
        let mut counts: BTreeMap<VariantKind, (usize, usize)> = BTreeMap::new();
        for g in &self.groups {
            let c = counts.entry(g.variant).or_default();
            c.0 += g.evaluations.iter().filter(|e| e.oa).count();
            c.1 += g.images();
        }
        for p in &self.presence {
            let c = counts.entry(p.variant).or_default();
            c.0 += p.present.iter().filter(|x| **x).count();
            c.1 += p.present.len();
        }
        counts
            .into_iter()
            .filter(|(_, (_, total))| *total > 0)
            .map(|(k, (hit, total))| (k, pct(hit, total)))
            .collect()
    }
}

fn index_records<'a>(
    prompts: &[Prompt],
    records: &'a [ImageDetections],
    options: &EvalOptions,
) -> Result<(HashMap<(&'a str, usize), &'a ImageDetections>, Vec<String>)> {
    let known: BTreeSet<&str> = prompts.iter().map(|p| p.id.as_str()).collect();
    let mut by_key = HashMap::new();
    let mut unknown = BTreeSet::new();
    for r in records {
        if r.image_index >= options.images_per_prompt {
            return Err(Error::invalid(format!(
                "record ({}, {}) has image_index outside 0..{}",
                r.prompt_id, r.image_index, options.images_per_prompt
            )));
        }
        if !known.contains(r.prompt_id.as_str()) {
            unknown.insert(r.prompt_id.clone());
            continue;
        }
        if by_key.insert((r.prompt_id.as_str(), r.image_index), r).is_some() {
            return Err(Error::invalid(format!(
                "duplicate detection record ({}, {})",
                r.prompt_id, r.image_index
            )));
        }
    }
    Ok((by_key, unknown.into_iter().collect()))
}

/// Evaluates every image slot of every prompt.
///
/// Output order follows the corpus and image index, independent of record
/// order. Slots without a record count as images where nothing was detected.
pub fn evaluate_run(prompts: &[Prompt], records: &[ImageDetections], options: &EvalOptions) -> Result<EvaluationRun> {
    options.validate()?;
    let (by_key, unknown_prompt_ids) = index_records(prompts, records, options)?;
    let n = options.images_per_prompt;

    let mut coverage = Coverage {
        expected_images: prompts.len() * n,
        unknown_prompt_ids,
        ..Coverage::default()
    };
    let mut groups = Vec::new();
    let mut presence = Vec::new();
    for prompt in prompts {
        let slots = (0..n).map(|i| by_key.get(&(prompt.id.as_str(), i)).copied());
        match prompt.predicate() {
            Some(predicate) => {
                let mut evals = Vec::with_capacity(n);
                for (i, slot) in slots.enumerate() {
                    match slot {
                        Some(record) => {
                            coverage.observed_images += 1;
                            evals.push(evaluate_image(record, &prompt.id, &predicate, options.threshold)?);
                        }
                        None => {
                            coverage.missing.push((prompt.id.clone(), i));
                            evals.push(ImageEvaluation::missing(&prompt.id, i));
                        }
                    }
                }
                groups.push(PromptGroup::new(prompt.id.clone(), predicate, prompt.variant.kind(), evals)?);
            }
            None => {
                let mut labels = vec![prompt.object_a.name.as_str()];
                labels.extend(prompt.object_b.as_ref().map(|b| b.name.as_str()));
                let mut present = Vec::with_capacity(n);
                for (i, slot) in slots.enumerate() {
                    match slot {
                        Some(record) => {
                            coverage.observed_images += 1;
                            present.push(all_present(record, &labels, options.threshold));
                        }
                        None => {
                            coverage.missing.push((prompt.id.clone(), i));
                            present.push(false);
                        }
                    }
                }
                presence.push(PresenceGroup {
                    prompt_id: prompt.id.clone(),
                    variant: prompt.variant.kind(),
                    present,
                });
            }
        }
    }
    Ok(EvaluationRun {
        groups,
        presence,
        coverage,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub threshold: f64,
    pub summary: MetricsSummary,
}

/// Re-evaluates the whole run at each threshold.
pub fn threshold_sweep(
    prompts: &[Prompt],
    records: &[ImageDetections],
    thresholds: &[f64],
    images_per_prompt: usize,
) -> Result<Vec<SweepPoint>> {
    if thresholds.is_empty() {
        return Err(Error::invalid("no thresholds given"));
    }
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("thresholds must be strictly ascending"));
    }
    thresholds
        .iter()
        .map(|&threshold| {
            let options = EvalOptions {
                threshold,
                images_per_prompt,
            };
            let run = evaluate_run(prompts, records, &options)?;
            Ok(SweepPoint {
                threshold,
                summary: run.summary()?,
            })
        })
        .collect()
}

/// Uses VISOR itself as the scored metric: each image is scored against its
/// prompt and against the relation-flipped prompt.
pub fn visor_score_records(prompts: &[Prompt], records: &[ImageDetections], threshold: f64) -> Result<Vec<ScoreRecord>> {
    let by_id: HashMap<&str, &Prompt> = prompts.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut out = Vec::new();
    for r in records {
        let Some(predicate) = by_id.get(r.prompt_id.as_str()).and_then(|p| p.predicate()) else {
            continue;
        };
        let score = evaluate_image(r, &r.prompt_id, &predicate, threshold)?.visor;
        let flipped = evaluate_image(r, &r.prompt_id, &predicate.flipped(), threshold)?.visor;
        out.push(ScoreRecord {
            prompt_id: r.prompt_id.clone(),
            image_index: r.image_index,
            score: if score { 1.0 } else { 0.0 },
            score_flipped: if flipped { 1.0 } else { 0.0 },
        });
    }
    Ok(out)
}

/// One line of the per-image evaluation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub prompt_id: String,
    pub image_index: usize,
    pub variant: String,
    pub object_a: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_b: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<Relation>,
    pub object_a_present: bool,
    pub object_b_present: bool,
    pub oa: bool,
    pub relations_satisfied: RelationSet,
    pub visor: bool,
}

/// Writes relational evaluations, then presence-only prompts, in run order.
pub fn write_evaluations<W: Write>(mut writer: W, run: &EvaluationRun, prompts: &[Prompt]) -> Result<usize> {
    let by_id: HashMap<&str, &Prompt> = prompts.iter().map(|p| (p.id.as_str(), p)).collect();
    let prompt = |id: &str| {
        by_id
            .get(id)
            .copied()
            .ok_or_else(|| Error::invalid(format!("prompt `{id}` is not in the corpus")))
    };
    let mut written = 0;
    let mut emit = |record: EvaluationRecord, writer: &mut W| -> Result<()> {
        let line = serde_json::to_string(&record).map_err(|e| Error::invalid(e.to_string()))?;
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
        written += 1;
        Ok(())
    };
    for g in &run.groups {
        for e in &g.evaluations {
            emit(
                EvaluationRecord {
                    prompt_id: g.prompt_id.clone(),
                    image_index: e.image_index,
                    variant: g.variant.as_str().to_string(),
                    object_a: g.predicate.subject.name.clone(),
                    object_b: Some(g.predicate.object.name.clone()),
                    relation: Some(g.predicate.relation),
                    object_a_present: e.object_a_present,
                    object_b_present: e.object_b_present,
                    oa: e.oa,
                    relations_satisfied: e.relations_satisfied,
                    visor: e.visor,
                },
                &mut writer,
            )?;
        }
    }
    for p in &run.presence {
        let source = prompt(&p.prompt_id)?;
        for (i, present) in p.present.iter().enumerate() {
            emit(
                EvaluationRecord {
                    prompt_id: p.prompt_id.clone(),
                    image_index: i,
                    variant: p.variant.as_str().to_string(),
                    object_a: source.object_a.name.clone(),
                    object_b: source.object_b.as_ref().map(|b| b.name.clone()),
                    relation: None,
                    object_a_present: *present,
                    object_b_present: *present,
                    oa: *present,
                    relations_satisfied: RelationSet::EMPTY,
                    visor: false,
                },
                &mut writer,
            )?;
        }
    }
    writer.flush()?;
    Ok(written)
}

/// Reads an evaluation file back into prompt groups.
pub fn read_evaluations<R: BufRead>(reader: R, vocab: &Vocabulary) -> Result<EvaluationRun> {
    struct Pending {
        predicate: Option<crate::corpus::Predicate>,
        variant: VariantKind,
        evals: Vec<ImageEvaluation>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut pending: HashMap<String, Pending> = HashMap::new();

    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EvaluationRecord = serde_json::from_str(&line).map_err(|e| LineError::Malformed {
            line: lineno,
            message: e.to_string(),
        })?;
        let variant: VariantKind = rec
            .variant
            .parse()
            .map_err(|e: Error| LineError::field(lineno, "variant", e.to_string()))?;
        if rec.oa != (rec.object_a_present && rec.object_b_present) || (rec.visor && !rec.oa) {
            return Err(LineError::field(lineno, "oa", "inconsistent presence flags").into());
        }
        let predicate = match (&rec.object_b, rec.relation) {
            (Some(b), Some(r)) => {
                let a = vocab
                    .get(&rec.object_a)
                    .ok_or_else(|| LineError::field(lineno, "object_a", format!("unknown category `{}`", rec.object_a)))?;
                let b = vocab
                    .get(b)
                    .ok_or_else(|| LineError::field(lineno, "object_b", format!("unknown category `{b}`")))?;
                Some(crate::corpus::Predicate::new(a.clone(), b.clone(), r)?)
            }
            _ => None,
        };
        let entry = pending.entry(rec.prompt_id.clone()).or_insert_with(|| {
            order.push(rec.prompt_id.clone());
            Pending {
                predicate: predicate.clone(),
                variant,
                evals: Vec::new(),
            }
        });
        if entry.predicate != predicate || entry.variant != variant {
            return Err(LineError::field(lineno, "prompt_id", "prompt fields differ between lines").into());
        }
        if entry.evals.iter().any(|e| e.image_index == rec.image_index) {
            return Err(LineError::DuplicateKey {
                line: lineno,
                prompt_id: rec.prompt_id,
                image_index: rec.image_index,
            }
            .into());
        }
        entry.evals.push(ImageEvaluation {
            prompt_id: rec.prompt_id,
            image_index: rec.image_index,
            object_a_present: rec.object_a_present,
            object_b_present: rec.object_b_present,
            oa: rec.oa,
            relations_satisfied: rec.relations_satisfied,
            visor: rec.visor,
        });
    }

    let mut groups = Vec::new();
    let mut presence = Vec::new();
    for id in order {
        let p = pending.remove(&id).expect("every ordered id is pending");
        match p.predicate {
            Some(predicate) => groups.push(PromptGroup::new(id, predicate, p.variant, p.evals)?),
            None => {
                let mut evals = p.evals;
                evals.sort_by_key(|e| e.image_index);
                presence.push(PresenceGroup {
                    prompt_id: id,
                    variant: p.variant,
                    present: evals.iter().map(|e| e.oa).collect(),
                });
            }
        }
    }
    Ok(EvaluationRun {
        groups,
        presence,
        coverage: Coverage::default(),
    })
}
