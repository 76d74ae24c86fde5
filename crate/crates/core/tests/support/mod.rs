//! Shared test support: a brute-force reference evaluator and random
//! fixture generators.
//!
//! The reference evaluator works from raw prompts and detection records only.
//! It does not call any scoring code from the library.

#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use visor_core::corpus::{enumerate_predicates, Prompt, PromptVariant};
use visor_core::detection::{BoundingBox, Detection, ImageDetections};
use visor_core::relation::Relation;
use visor_core::vocab::ObjectCategory;

/// Per-image outcome computed by brute force.
#[derive(Debug, Clone, PartialEq)]
pub struct RefImage {
    pub a: bool,
    pub b: bool,
    pub oa: bool,
    /// left, right, above, below
    pub rel: [bool; 4],
    pub visor: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefRun {
    pub prompt_ids: Vec<String>,
    pub images: Vec<Vec<RefImage>>,
    pub oa_pct: f64,
    pub visor_pct: f64,
    pub cond_pct: Option<f64>,
    pub visor_n_pct: Vec<f64>,
}

fn norm(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Index of the first detection with the highest score among those that
/// match `label` and clear `threshold`.
fn pick(dets: &[Detection], label: &str, threshold: f64) -> Option<usize> {
    let want = norm(label);
    let mut best: Option<usize> = None;
    for i in 0..dets.len() {
        let d = &dets[i];
        if norm(&d.label) != want || !(d.score >= threshold) {
            continue;
        }
        match best {
            None => best = Some(i),
            Some(j) => {
                if d.score > dets[j].score {
                    best = Some(i);
                }
            }
        }
    }
    best
}

fn relation_index(r: Relation) -> usize {
    match r {
        Relation::Left => 0,
        Relation::Right => 1,
        Relation::Above => 2,
        Relation::Below => 3,
    }
}

pub fn reference_image(record: Option<&ImageDetections>, a: &str, b: &str, relation: Relation, threshold: f64) -> RefImage {
    let empty = Vec::new();
    let dets = record.map_or(&empty, |r| &r.detections);
    let ia = pick(dets, a, threshold);
    let ib = pick(dets, b, threshold);
    let mut rel = [false; 4];
    if let (Some(i), Some(j)) = (ia, ib) {
        let (p, q) = (&dets[i].bbox, &dets[j].bbox);
        // compare doubled centroids
        let (ax, ay) = (p.x_min + p.x_max, p.y_min + p.y_max);
        let (bx, by) = (q.x_min + q.x_max, q.y_min + q.y_max);
        rel = [ax < bx, ax > bx, ay < by, ay > by];
    }
    let oa = ia.is_some() && ib.is_some();
    RefImage {
        a: ia.is_some(),
        b: ib.is_some(),
        oa,
        rel,
        visor: oa && rel[relation_index(relation)],
    }
}

/// Scores every relational prompt over image slots `0..n`.
pub fn reference_run(prompts: &[Prompt], records: &[ImageDetections], threshold: f64, n: usize) -> RefRun {
    let mut prompt_ids = Vec::new();
    let mut images = Vec::new();
    for p in prompts {
        let (Some(b), Some(relation)) = (&p.object_b, p.relation) else {
            continue;
        };
        let mut row = Vec::new();
        for i in 0..n {
            let record = records.iter().find(|r| r.prompt_id == p.id && r.image_index == i);
            row.push(reference_image(record, &p.object_a.name, &b.name, relation, threshold));
        }
        prompt_ids.push(p.id.clone());
        images.push(row);
    }

    let total = images.len() * n;
    let oa = images.iter().flatten().filter(|x| x.oa).count();
    let visor = images.iter().flatten().filter(|x| x.visor).count();
    let visor_n_pct = (1..=n)
        .map(|k| {
            let hits = images
                .iter()
                .filter(|row| row.iter().filter(|x| x.visor).count() >= k)
                .count();
            100.0 * hits as f64 / images.len() as f64
        })
        .collect();
    RefRun {
        prompt_ids,
        oa_pct: 100.0 * oa as f64 / total as f64,
        visor_pct: 100.0 * visor as f64 / total as f64,
        cond_pct: if oa > 0 { Some(100.0 * visor as f64 / oa as f64) } else { None },
        visor_n_pct,
        images,
    }
}

const POOL: [(&str, &str); 8] = [
    ("cat", "animal"),
    ("dog", "animal"),
    ("car", "vehicle"),
    ("potted plant", "furniture"),
    ("oven", "appliance"),
    ("sink", "appliance"),
    ("bus", "vehicle"),
    ("chair", "furniture"),
];

/// A vocabulary of `k` categories drawn from a fixed pool.
pub fn random_categories(rng: &mut ChaCha8Rng, k: usize) -> Vec<ObjectCategory> {
    let mut pool: Vec<_> = POOL.iter().map(|(n, s)| ObjectCategory::new(*n, *s)).collect();
    pool.shuffle(rng);
    pool.truncate(k.clamp(2, POOL.len()));
    pool
}

/// Phrase prompts for every predicate over `categories`.
pub fn phrase_prompts(categories: &[ObjectCategory]) -> Vec<Prompt> {
    enumerate_predicates(categories)
        .unwrap()
        .iter()
        .map(|p| Prompt::from_predicate(p, PromptVariant::Phrase).unwrap())
        .collect()
}

fn spelling(rng: &mut ChaCha8Rng, name: &str) -> String {
    match rng.gen_range(0..4) {
        0 => name.to_uppercase(),
        1 => format!(" {name} "),
        _ => name.to_string(),
    }
}

/// Scores from a coarse grid so ties and exact threshold hits are common.
fn score(rng: &mut ChaCha8Rng) -> f64 {
    const GRID: [f64; 8] = [0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.9];
    GRID[rng.gen_range(0..GRID.len())]
}

/// Boxes on a small integer grid so centroid ties are common.
pub fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    let x0 = rng.gen_range(0..6) as f64 * 10.0;
    let y0 = rng.gen_range(0..6) as f64 * 10.0;
    let w = rng.gen_range(1..4) as f64 * 10.0;
    let h = rng.gen_range(1..4) as f64 * 10.0;
    BoundingBox::new(x0, y0, x0 + w, y0 + h).unwrap()
}

pub fn random_detections(rng: &mut ChaCha8Rng, names: &[&str]) -> Vec<Detection> {
    let count = rng.gen_range(0..6);
    (0..count)
        .map(|_| {
            let label = if rng.gen_bool(0.15) {
                "toaster".to_string()
            } else {
                let name = *names.choose(rng).unwrap();
                spelling(rng, name)
            };
            Detection {
                label,
                score: score(rng),
                bbox: random_box(rng),
            }
        })
        .collect()
}

/// Records for `prompts` with some slots missing, a few unknown prompt ids,
/// and records in shuffled order.
pub fn random_records(rng: &mut ChaCha8Rng, prompts: &[Prompt], n: usize) -> Vec<ImageDetections> {
    let mut out = Vec::new();
    for p in prompts {
        let mut names = vec![p.object_a.name.as_str()];
        names.extend(p.object_b.as_ref().map(|b| b.name.as_str()));
        for i in 0..n {
            if rng.gen_bool(0.1) {
                continue;
            }
            out.push(ImageDetections {
                prompt_id: p.id.clone(),
                image_index: i,
                detections: random_detections(rng, &names),
                image_width: Some(100.0),
                image_height: Some(100.0),
            });
        }
    }
    if rng.gen_bool(0.2) {
        out.push(ImageDetections {
            prompt_id: "ghost__prompt".into(),
            image_index: 0,
            detections: random_detections(rng, &["cat"]),
            image_width: None,
            image_height: None,
        });
    }
    out.shuffle(rng);
    out
}

/// A random subset of the phrase prompts of a random vocabulary, plus records.
pub fn random_fixture(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Prompt>, Vec<ImageDetections>) {
    let k = rng.gen_range(2..=4);
    let categories = random_categories(rng, k);
    let mut prompts = phrase_prompts(&categories);
    prompts.shuffle(rng);
    prompts.truncate(rng.gen_range(1..=prompts.len().min(12)));
    let records = random_records(rng, &prompts, n);
    (prompts, records)
}
