//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use visor_core::corpus::{read_corpus, render_prompt, Predicate, Prompt, PromptVariant};
use visor_core::detection::{evaluate_image, parse_detections, ImageDetections};
use visor_core::metrics::{delta_s, visor_from_at_least_n, MetricsSummary, ScoreRecord};
use visor_core::pipeline::{evaluate_run, threshold_sweep, visor_score_records, EvalOptions, EvaluationRun};
use visor_core::relation::Relation;
use visor_core::vocab::Vocabulary;

type Outcome = Result<String, String>;

fn visor() -> Command {
    Command::new(env!("CARGO_BIN_EXE_visor"))
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn catdog() -> (Vec<Prompt>, Vec<ImageDetections>) {
    let open = |n: &str| BufReader::new(File::open(fixture(n)).unwrap());
    let vocab = Vocabulary::read(open("catdog_categories.csv")).unwrap();
    let prompts = read_corpus(open("catdog_corpus.jsonl"), &vocab).unwrap();
    let records = parse_detections(open("catdog_detections.jsonl"), Some(4)).unwrap();
    (prompts, records)
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run_ok(cmd: &mut Command) -> Result<std::process::Output, String> {
    let out = cmd.output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{:?} failed: {}", cmd, String::from_utf8_lossy(&out.stderr))
    })?;
    Ok(out)
}

fn corpus_exactness(tmp: &Path) -> Outcome {
    let path = tmp.join("sr2d.jsonl");
    let start = Instant::now();
    run_ok(visor().args(["gen", "--categories", "coco80", "--variant", "phrase", "-o"]).arg(&path))?;
    let elapsed = start.elapsed();

    let text = fs::read_to_string(&path).map_err(|e| e.to_string())?;
    let mut lines = 0;
    let mut per_category: BTreeMap<String, usize> = BTreeMap::new();
    let mut per_pair: BTreeMap<(String, String), usize> = BTreeMap::new();
    for line in text.lines() {
        lines += 1;
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let a = v["object_a"].as_str().unwrap_or_default().to_string();
        let b = v["object_b"].as_str().unwrap_or_default().to_string();
        *per_category.entry(a.clone()).or_default() += 1;
        *per_category.entry(b.clone()).or_default() += 1;
        *per_pair.entry(if a < b { (a, b) } else { (b, a) }).or_default() += 1;
    }
    ensure(lines == 25_280, || format!("{lines} prompts"))?;
    ensure(per_category.len() == 80 && per_category.values().all(|&n| n == 632), || {
        "category counts are not all 632".into()
    })?;
    ensure(per_pair.len() == 3160 && per_pair.values().all(|&n| n == 8), || {
        "pair counts are not all 8".into()
    })?;
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("25280 prompts, 632 per category, 8 per pair, {:.2}s", elapsed.as_secs_f64()))
}

fn template_fidelity() -> Outcome {
    let v = Vocabulary::coco();
    let p = |a: &str, b: &str, r| Predicate::new(v.lookup(a).unwrap().clone(), v.lookup(b).unwrap().clone(), r).unwrap();
    let render = |pred: &Predicate| render_prompt(pred, &PromptVariant::Phrase).unwrap();
    let table = [
        ("microwave", "sink", Relation::Left, "A microwave to the left of a sink"),
        ("elephant", "cat", Relation::Right, "An elephant to the right of a cat"),
        ("donut", "airplane", Relation::Above, "A donut above an airplane"),
        ("suitcase", "chair", Relation::Below, "A suitcase below a chair"),
        ("keyboard", "bench", Relation::Left, "A keyboard to the left of a bench"),
        ("bed", "bear", Relation::Right, "A bed to the right of a bear"),
        ("potted plant", "fire hydrant", Relation::Above, "A potted plant above a fire hydrant"),
        ("person", "umbrella", Relation::Below, "A person below an umbrella"),
    ];
    let mut checked = 0;
    for (a, b, r, want) in table {
        let got = render(&p(a, b, r));
        ensure(got == want, || format!("{got:?} != {want:?}"))?;
        checked += 1;
    }
    let connective = |r| match r {
        Relation::Left => "to the left of",
        Relation::Right => "to the right of",
        Relation::Above => "above",
        Relation::Below => "below",
    };
    for r in Relation::ALL {
        for (a, b, art_a, art_b) in [("microwave", "sink", "A", "a"), ("sink", "microwave", "A", "a")] {
            let want = format!("{art_a} {a} {} {art_b} {b}", connective(r));
            let got = render(&p(a, b, r));
            ensure(got == want, || format!("{got:?} != {want:?}"))?;
            checked += 1;
        }
    }
    let mut vowels = Vec::new();
    for c in v.categories() {
        if c.name.starts_with(['a', 'e', 'i', 'o', 'u']) {
            vowels.push(c.name.clone());
            let other = if c.name == "cat" { "dog" } else { "cat" };
            let got = render(&p(&c.name, other, Relation::Left));
            let want = format!("An {} to the left of a {other}", c.name);
            ensure(got == want, || format!("{got:?} != {want:?}"))?;
            let got = render(&p(other, &c.name, Relation::Below));
            let want = format!("A {other} below an {}", c.name);
            ensure(got == want, || format!("{got:?} != {want:?}"))?;
            checked += 2;
        }
    }
    vowels.sort();
    ensure(
        vowels == ["airplane", "apple", "elephant", "orange", "oven", "umbrella"],
        || format!("vowel-initial categories {vowels:?}"),
    )?;
    Ok(format!("{checked} exact strings, vowel categories {}", vowels.join(", ")))
}

// Published benchmark rows: OA, VISOR uncond, cond, VISOR_1..4.
const PUBLISHED: [(&str, f64, f64, f64, [f64; 4]); 10] = [
    ("GLIDE", 3.36, 1.98, 59.06, [6.72, 1.02, 0.17, 0.03]),
    ("GLIDE + CDM", 10.17, 6.43, 63.21, [20.07, 4.69, 0.83, 0.11]),
    ("DALLE-mini", 27.10, 16.17, 59.67, [38.31, 17.50, 6.89, 1.96]),
    ("CogView2", 18.47, 12.17, 65.89, [33.47, 11.43, 3.22, 0.57]),
    ("DALLE-v2", 63.93, 37.89, 59.27, [73.59, 47.23, 23.26, 7.49]),
    ("SD", 29.86, 18.81, 62.98, [46.60, 20.11, 6.89, 1.63]),
    ("SD + CDM", 23.27, 14.99, 64.41, [39.44, 14.56, 4.84, 1.12]),
    ("SD 2.1", 47.83, 30.25, 63.24, [64.42, 35.74, 16.13, 4.70]),
    ("Structured Diffusion", 28.65, 17.87, 62.36, [44.70, 18.73, 6.57, 1.46]),
    ("Attend-and-Excite", 42.07, 25.75, 61.21, [49.29, 19.33, 4.56, 0.08]),
];

fn at_least_n_identity() -> Outcome {
    let mut parts = Vec::new();
    for name in ["DALLE-v2", "SD", "DALLE-mini"] {
        let (_, _, uncond, _, vn) = PUBLISHED.iter().find(|r| r.0 == name).unwrap();
        let got = visor_from_at_least_n(vn);
        ensure((got - uncond).abs() <= 0.01, || format!("{name}: {got} vs {uncond}"))?;
        parts.push(format!("{name} {got:.4}"));
    }
    Ok(parts.join(", "))
}

fn chain_rule() -> Outcome {
    let mut worst = 0.0f64;
    for (name, oa, uncond, cond, _) in PUBLISHED {
        let got = oa * cond / 100.0;
        ensure((got - uncond).abs() <= 0.02, || format!("{name}: {got} vs {uncond}"))?;
        worst = worst.max((got - uncond).abs());
    }
    Ok(format!("10 rows, largest gap {worst:.4}"))
}

fn same_summary(a: &MetricsSummary, b: &MetricsSummary) -> bool {
    a == b
}

fn check_fixture_properties(prompts: &[Prompt], records: &[ImageDetections], rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let options = EvalOptions::default();
    let run = evaluate_run(prompts, records, &options).map_err(|e| e.to_string())?;
    let s = run.summary().map_err(|e| e.to_string())?;

    s.check_invariants(1e-12)?;
    ensure(s.visor_n_pct.windows(2).all(|w| w[1] <= w[0]), || "VISOR_n not monotone".into())?;
    ensure(s.visor_uncond_pct <= s.oa_pct, || "VISOR exceeds OA".into())?;

    let factor = 2f64.powi(rng.gen_range(-8..8));
    let scaled: Vec<_> = records.iter().map(|r| r.scaled(factor)).collect();
    let scaled_run = evaluate_run(prompts, &scaled, &options).map_err(|e| e.to_string())?;
    ensure(scaled_run.groups == run.groups, || format!("scaling by {factor} changed evaluations"))?;

    for r in records {
        let Some(p) = prompts.iter().find(|p| p.id == r.prompt_id) else {
            continue;
        };
        let pred = p.predicate().unwrap();
        let plain = evaluate_image(r, &p.id, &pred, 0.1).map_err(|e| e.to_string())?;
        let mirrored = evaluate_image(&r.mirrored_horizontal(100.0), &p.id, &pred.mirrored_horizontal(), 0.1)
            .map_err(|e| e.to_string())?;
        ensure(
            plain.visor == mirrored.visor
                && plain.oa == mirrored.oa
                && plain.relations_satisfied.mirrored_horizontal() == mirrored.relations_satisfied,
            || format!("mirror mismatch on {}[{}]", r.prompt_id, r.image_index),
        )?;
        let flipped = evaluate_image(r, &p.id, &pred.equivalent(), 0.1).map_err(|e| e.to_string())?;
        ensure(plain.visor == flipped.visor, || {
            format!("equivalent predicate mismatch on {}[{}]", r.prompt_id, r.image_index)
        })?;
    }

    let mut shuffled = records.to_vec();
    shuffled.shuffle(rng);
    let reordered = evaluate_run(prompts, &shuffled, &options).map_err(|e| e.to_string())?;
    ensure(reordered == run, || "record order changed the run".into())?;
    let mut groups = run.groups.clone();
    groups.reverse();
    let reversed = MetricsSummary::from_groups(&groups).map_err(|e| e.to_string())?;
    ensure(same_summary(&reversed, &s), || "group order changed the summary".into())?;
    Ok(run.groups.len())
}

fn property_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_101);
    let mut groups = 0;
    let mut fixtures = 0;
    while groups < 10_000 {
        let (prompts, records) = support::random_fixture(&mut rng, 4);
        groups += check_fixture_properties(&prompts, &records, &mut rng)?;
        fixtures += 1;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("{groups} groups in {fixtures} fixtures, {:.2}s", elapsed.as_secs_f64()))
}

fn matches_reference(prompts: &[Prompt], records: &[ImageDetections], threshold: f64, n: usize) -> Result<(), String> {
    let options = EvalOptions {
        threshold,
        images_per_prompt: n,
    };
    let run: EvaluationRun = evaluate_run(prompts, records, &options).map_err(|e| e.to_string())?;
    let r = support::reference_run(prompts, records, threshold, n);
    ensure(run.groups.len() == r.images.len(), || "group count differs".into())?;
    for (g, row) in run.groups.iter().zip(&r.images) {
        for (e, x) in g.evaluations.iter().zip(row) {
            let rel = Relation::ALL.map(|k| e.relations_satisfied.contains(k));
            ensure(
                (e.object_a_present, e.object_b_present, e.oa, rel, e.visor) == (x.a, x.b, x.oa, x.rel, x.visor),
                || format!("{}[{}] differs", g.prompt_id, e.image_index),
            )?;
        }
    }
    let s = run.summary().map_err(|e| e.to_string())?;
    let bits = |xs: &[f64]| xs.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    ensure(
        s.oa_pct.to_bits() == r.oa_pct.to_bits()
            && s.visor_uncond_pct.to_bits() == r.visor_pct.to_bits()
            && s.visor_cond_pct.map(f64::to_bits) == r.cond_pct.map(f64::to_bits)
            && bits(&s.visor_n_pct) == bits(&r.visor_n_pct),
        || "summary differs".into(),
    )
}

fn oracle_equivalence() -> Outcome {
    let (prompts, records) = catdog();
    matches_reference(&prompts, &records, 0.1, 4).map_err(|e| format!("fixture: {e}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for case in 0..10_000 {
        let n = rng.gen_range(1..=5);
        let threshold = [0.0, 0.05, 0.1, 0.2, 0.5, 1.0][rng.gen_range(0..6)];
        let (prompts, records) = support::random_fixture(&mut rng, n);
        matches_reference(&prompts, &records, threshold, n).map_err(|e| format!("case {case}: {e}"))?;
    }
    Ok("10000 random fixtures and the 8-prompt fixture, bit-exact".into())
}

fn sweep_monotone() -> Outcome {
    let thresholds = [0.1, 0.2, 0.3, 0.4];
    let check = |prompts: &[Prompt], records: &[ImageDetections]| -> Result<Vec<usize>, String> {
        let points = threshold_sweep(prompts, records, &thresholds, 4).map_err(|e| e.to_string())?;
        for w in points.windows(2) {
            ensure(
                w[1].summary.oa_pct <= w[0].summary.oa_pct && w[1].summary.visor_uncond_pct <= w[0].summary.visor_uncond_pct,
                || format!("increase between {} and {}", w[0].threshold, w[1].threshold),
            )?;
        }
        Ok(points.iter().map(|p| p.summary.oa_images).collect())
    };
    let (prompts, records) = catdog();
    let fixture_oa = check(&prompts, &records)?;
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for _ in 0..2_000 {
        let (prompts, records) = support::random_fixture(&mut rng, 4);
        check(&prompts, &records)?;
    }
    Ok(format!("fixture OA images {fixture_oa:?}; 2000 random fixtures"))
}

fn delta_sanity() -> Outcome {
    let (prompts, records) = catdog();
    let run = evaluate_run(&prompts, &records, &EvalOptions::default()).map_err(|e| e.to_string())?;
    let correct: Vec<ImageDetections> = records
        .iter()
        .filter(|r| {
            run.groups
                .iter()
                .any(|g| g.prompt_id == r.prompt_id && g.evaluations[r.image_index].visor)
        })
        .cloned()
        .collect();
    let scores = visor_score_records(&prompts, &correct, 0.1).map_err(|e| e.to_string())?;
    let d = delta_s(&scores).map_err(|e| e.to_string())?;
    ensure(d == 1.0, || format!("VISOR as score gave {d}"))?;
    let constant: Vec<ScoreRecord> = scores
        .iter()
        .map(|s| ScoreRecord {
            score: 0.27,
            score_flipped: 0.27,
            ..s.clone()
        })
        .collect();
    let c = delta_s(&constant).map_err(|e| e.to_string())?;
    ensure(c == 0.0, || format!("constant score gave {c}"))?;
    Ok(format!("{} correct images: {d:.1}; constant: {c:.1}", scores.len()))
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        out.insert(entry.file_name().to_string_lossy().into_owned(), fs::read(entry.path()).unwrap());
    }
    out
}

fn determinism(tmp: &Path) -> Outcome {
    let mut gens = Vec::new();
    for i in 0..2 {
        let out = tmp.join(format!("gen{i}.jsonl"));
        run_ok(
            visor()
                .args(["gen", "--variant", "phrase,split-sentence,attributed", "--seed", "9", "-o"])
                .arg(&out),
        )?;
        gens.push(fs::read(&out).map_err(|e| e.to_string())?);
    }
    ensure(gens[0] == gens[1], || "gen outputs differ".into())?;

    let mut evals = Vec::new();
    for i in 0..2 {
        let out = tmp.join(format!("eval{i}"));
        run_ok(
            visor()
                .arg("evaluate")
                .arg("--corpus")
                .arg(fixture("catdog_corpus.jsonl"))
                .arg("--detections")
                .arg(fixture("catdog_detections.jsonl"))
                .arg("--categories")
                .arg(fixture("catdog_categories.csv"))
                .arg("-o")
                .arg(&out),
        )?;
        evals.push(dir_bytes(&out));
    }
    ensure(evals[0] == evals[1], || "evaluate outputs differ".into())?;
    Ok(format!(
        "gen {} bytes, evaluate {} files identical",
        gens[0].len(),
        evals[0].len()
    ))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("corpus exactness", Box::new(|| corpus_exactness(tmp.path()))),
        ("template fidelity", Box::new(template_fidelity)),
        ("at-least-n identity on published rows", Box::new(at_least_n_identity)),
        ("chain rule on published rows", Box::new(chain_rule)),
        ("property suite", Box::new(property_suite)),
        ("oracle equivalence", Box::new(oracle_equivalence)),
        ("threshold sweep monotonicity", Box::new(sweep_monotone)),
        ("delta_s sanity", Box::new(delta_sanity)),
        ("determinism", Box::new(|| determinism(tmp.path()))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
