//! Pearson correlation and object co-occurrence statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Read};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, LineError, Result};
use crate::metrics::{split_by_object_pair, PromptGroup, UnorderedPair};

/// Pearson correlation coefficient of paired samples.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::invalid(format!("length mismatch: {} vs {}", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::invalid("need at least two points"));
    }
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::undefined("Pearson r is undefined for a zero-variance sample"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pair co-occurrence counts over a set of annotated images.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CooccurrenceTable {
    pub total_images: u64,
    pub pair_counts: BTreeMap<UnorderedPair, u64>,
}

impl CooccurrenceTable {
    /// Counts, for every pair of distinct categories, the images containing both.
    pub fn from_image_categories<'a, I>(images: I) -> CooccurrenceTable
    where
        I: IntoIterator<Item = &'a BTreeSet<String>>,
    {
        let mut table = CooccurrenceTable::default();
        for names in images {
            table.total_images += 1;
            let names: Vec<&String> = names.iter().collect();
            for (i, a) in names.iter().enumerate() {
                for b in &names[i + 1..] {
                    *table.pair_counts.entry(UnorderedPair::new(a, b)).or_insert(0) += 1;
                }
            }
        }
        table
    }

    /// `P(A, B)`: fraction of images containing at least one of each.
    pub fn probability(&self, a: &str, b: &str) -> f64 {
        if self.total_images == 0 {
            return 0.0;
        }
        let count = self.pair_counts.get(&UnorderedPair::new(a, b)).copied().unwrap_or(0);
        count as f64 / self.total_images as f64
    }

    /// Reads `{"image_id": ..., "categories": [...]}` lines. Repeated image
    /// ids are merged.
    pub fn read_listing<R: BufRead>(reader: R) -> Result<CooccurrenceTable> {
        #[derive(Deserialize)]
        struct Row {
            image_id: Value,
            categories: Vec<String>,
        }
        let mut images: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Row = serde_json::from_str(&line).map_err(|e| LineError::Malformed {
                line: idx + 1,
                message: e.to_string(),
            })?;
            let names = images.entry(row.image_id.to_string()).or_default();
            names.extend(row.categories.into_iter().map(|c| c.trim().to_lowercase()));
        }
        Ok(CooccurrenceTable::from_image_categories(images.values()))
    }

    /// Reads a precomputed table: a `total_images,<N>` header row followed by
    /// `name_a,name_b,count` rows.
    pub fn read_pair_table<R: Read>(reader: R) -> Result<CooccurrenceTable> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut table = CooccurrenceTable::default();
        let mut saw_header = false;
        for (idx, row) in rdr.records().enumerate() {
            let line = idx + 1;
            let row = row.map_err(|e| LineError::Malformed {
                line,
                message: e.to_string(),
            })?;
            if !saw_header {
                if row.len() != 2 || &row[0] != "total_images" {
                    return Err(LineError::field(line, "total_images", "expected `total_images,<N>` header row").into());
                }
                table.total_images = row[1]
                    .parse()
                    .map_err(|_| LineError::field(line, "total_images", "expected an integer"))?;
                saw_header = true;
                continue;
            }
            if row.len() != 3 {
                return Err(LineError::Malformed {
                    line,
                    message: format!("expected 3 columns, got {}", row.len()),
                }
                .into());
            }
            let count: u64 = row[2]
                .parse()
                .map_err(|_| LineError::field(line, "count", "expected an integer"))?;
            if count > table.total_images {
                return Err(LineError::field(line, "count", "exceeds total_images").into());
            }
            let key = UnorderedPair::new(&row[0].to_lowercase(), &row[1].to_lowercase());
            *table.pair_counts.entry(key).or_insert(0) += count;
        }
        if !saw_header {
            return Err(Error::invalid("pair table is empty"));
        }
        Ok(table)
    }

    /// Reads an MS-COCO `instances_*.json` annotation file.
    pub fn read_coco_instances<R: Read>(reader: R) -> Result<CooccurrenceTable> {
        #[derive(Deserialize)]
        struct Image {
            id: u64,
        }
        #[derive(Deserialize)]
        struct Annotation {
            image_id: u64,
            category_id: u64,
        }
        #[derive(Deserialize)]
        struct Category {
            id: u64,
            name: String,
        }
        #[derive(Deserialize)]
        struct Instances {
            images: Vec<Image>,
            annotations: Vec<Annotation>,
            categories: Vec<Category>,
        }

        let data: Instances = serde_json::from_reader(reader).map_err(|e| Error::invalid(e.to_string()))?;
        let names: HashMap<u64, &str> = data.categories.iter().map(|c| (c.id, c.name.as_str())).collect();
        let mut per_image: BTreeMap<u64, BTreeSet<String>> =
            data.images.iter().map(|i| (i.id, BTreeSet::new())).collect();
        for a in &data.annotations {
            let name = names
                .get(&a.category_id)
                .ok_or_else(|| Error::invalid(format!("annotation refers to unknown category id {}", a.category_id)))?;
            per_image
                .get_mut(&a.image_id)
                .ok_or_else(|| Error::invalid(format!("annotation refers to unknown image id {}", a.image_id)))?
                .insert(name.to_string());
        }
        Ok(CooccurrenceTable::from_image_categories(per_image.values()))
    }
}

/// Co-occurrence probability of every category pair seen together in
/// `annotations` (image id to category names).
pub fn cooccurrence_probability(annotations: &BTreeMap<String, BTreeSet<String>>) -> BTreeMap<UnorderedPair, f64> {
    let table = CooccurrenceTable::from_image_categories(annotations.values());
    table
        .pair_counts
        .keys()
        .map(|k| (k.clone(), table.probability(&k.0, &k.1)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairPoint {
    pub pair: UnorderedPair,
    pub probability: f64,
    pub oa_pct: f64,
    /// Absent when no image of the pair had both objects.
    pub visor_cond_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Correlation {
    pub points: Vec<PairPoint>,
    /// `None` when fewer than two points or either side has no variance.
    pub pearson_oa: Option<f64>,
    /// Over the pairs whose conditional VISOR is defined.
    pub pearson_visor_cond: Option<f64>,
}

fn pearson_or_none(xs: &[f64], ys: &[f64]) -> Option<f64> {
    pearson(xs, ys).ok()
}

/// Correlates per-object-pair OA and conditional VISOR with how often the
/// pair co-occurs.
pub fn correlate_with_cooccurrence(groups: &[PromptGroup], table: &CooccurrenceTable) -> Result<Correlation> {
    let points: Vec<PairPoint> = split_by_object_pair(groups)?
        .into_iter()
        .map(|(pair, s)| PairPoint {
            probability: table.probability(&pair.0, &pair.1),
            oa_pct: s.oa_pct,
            visor_cond_pct: s.visor_cond_pct,
            pair,
        })
        .collect();
    let xs: Vec<f64> = points.iter().map(|p| p.probability).collect();
    let oa: Vec<f64> = points.iter().map(|p| p.oa_pct).collect();
    let (cx, cy): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter_map(|p| p.visor_cond_pct.map(|v| (p.probability, v)))
        .unzip();
    Ok(Correlation {
        pearson_oa: pearson_or_none(&xs, &oa),
        pearson_visor_cond: pearson_or_none(&cx, &cy),
        points,
    })
}
