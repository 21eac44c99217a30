//! Acceptance suite: one line per criterion, non-zero exit when any fails.
//!
//! The full-data checks (3, 4) need the COCO 2017 train instances file and
//! run only when `SPATIALGEN_COCO_TRAIN` points at it.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spatialgen::captions::{ArticleStyle, CaptionRecord};
use spatialgen::corpus::{scan, RelationLexicon, Scanner};
use spatialgen::geometry::{flip_h, holds, BBox, RelationConfig};
use spatialgen::ingest::{load_annotations, IngestPolicy};
use spatialgen::io::{write_jsonl_to, Provenance};
use spatialgen::labels::Vocabulary;
use spatialgen::metrics::{aggregate, Counts, Detection, DetectionSet, EvalConfig, EvalReport, PairingMode};
use spatialgen::reports::{bias_table, frequency_correlation, pair_delta, per_relation_table};
use spatialgen::sampler::{sample_training_batch, verify_sample, SamplerConfig};
use spatialgen::splits::{count_candidate_val_triplets, unseen_val_candidates, ObjectPartition};
use spatialgen::triplets::{build_universe, natural_filter, CountingUnit, TripletTable};
use spatialgen::{Rational, Relation, SpatialTriplet};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    // time limits are stated for optimized builds; debug builds get 10x
    let slack = if cfg!(debug_assertions) { 10 } else { 1 };
    elapsed <= limit * slack
}

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/coco_mini.json")
}

fn bb(c: [f64; 4]) -> BBox<f64> {
    BBox::new(c[0], c[1], c[2], c[3]).unwrap()
}

fn universe_count() -> Outcome {
    let t = Instant::now();
    let n = build_universe(&Vocabulary::coco80()).len();
    let el = t.elapsed();
    check(
        n == 88_480 && within(el, Duration::from_secs(1)),
        format!("{n} triplets (expected 88480) in {el:.2?}"),
    )
}

fn unseen_formula() -> Outcome {
    let n = count_candidate_val_triplets(45, 5);
    check(n == 6_580, format!("count_candidate_val_triplets(45, 5) = {n} (expected 6580)"))
}

fn coco_natural() -> Option<(TripletTable, f64)> {
    let path = std::env::var_os("SPATIALGEN_COCO_TRAIN")?;
    let vocab = Vocabulary::coco80();
    let t = Instant::now();
    let (images, _) = load_annotations(Path::new(&path), &vocab, IngestPolicy::default()).ok()?;
    let universe = build_universe(&vocab);
    let natural = natural_filter(&universe, &images, &vocab, &RelationConfig::default(), CountingUnit::InstancePair).ok()?;
    Some((natural, t.elapsed().as_secs_f64()))
}

fn natural_share(data: &Option<(TripletTable, f64)>) -> Outcome {
    let Some((natural, secs)) = data else {
        return Outcome::Skip("set SPATIALGEN_COCO_TRAIN to the COCO 2017 train instances file".into());
    };
    let share = 100.0 * natural.len() as f64 / 88_480.0;
    check(
        (share - 68.8).abs() <= 1.5 && *secs < 600.0,
        format!(
            "{} natural triplets = {share:.2}% (target 68.8 ± 1.5; exact count 60836 {}) in {secs:.0}s",
            natural.len(),
            if natural.len() == 60_836 { "matched" } else { "not matched" }
        ),
    )
}

fn unseen_candidates(data: &Option<(TripletTable, f64)>) -> Outcome {
    let Some((natural, _)) = data else {
        return Outcome::Skip("set SPATIALGEN_COCO_TRAIN to the COCO 2017 train instances file".into());
    };
    let n = unseen_val_candidates(natural, &ObjectPartition::canonical()).len();
    let rel = (n as f64 - 5_326.0).abs() / 5_326.0;
    check(rel <= 0.03, format!("{n} natural candidates (target 5326 ± 3%, off by {:.2}%)", rel * 100.0))
}

fn predicate_suite() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = RelationConfig::default();
    let w = 32.0;
    let mut violations = Vec::new();
    let draw = |rng: &mut ChaCha8Rng| {
        // integer corners so centroid and size ties are common
        let x0 = rng.gen_range(0..31) as f64;
        let y0 = rng.gen_range(0..31) as f64;
        let x1 = rng.gen_range(x0 as i32 + 1..=32) as f64;
        let y1 = rng.gen_range(y0 as i32 + 1..=32) as f64;
        bb([x0, y0, x1, y1])
    };
    for i in 0..10_000 {
        let (a, b) = (draw(&mut rng), draw(&mut rng));
        let h = |r, x: &BBox<f64>, y: &BBox<f64>| holds(r, x, y, &cfg);
        for r in Relation::ALL {
            if h(r, &a, &b) != h(r.converse(), &b, &a) {
                violations.push(format!("pair {i}: duality of {r}"));
            }
            let (fa, fb) = (flip_h(&a, w).unwrap(), flip_h(&b, w).unwrap());
            if h(r, &a, &b) != h(r.flipped(), &fa, &fb) {
                violations.push(format!("pair {i}: flip equivariance of {r}"));
            }
            if flip_h(&fa, w).unwrap() != a {
                violations.push(format!("pair {i}: flip involution"));
            }
        }
        for (p, q) in Relation::OPPOSITE_PAIRS {
            if p.kind() != spatialgen::RelationKind::Topological && h(p, &a, &b) && h(q, &a, &b) {
                violations.push(format!("pair {i}: {p} and {q} both hold"));
            }
        }
        if h(Relation::Overlapping, &a, &b) == h(Relation::Separated, &a, &b) {
            violations.push(format!("pair {i}: overlap dichotomy"));
        }
        let (ca, cb) = (a.x0() + a.x1(), b.x0() + b.x1());
        if ca == cb && (h(Relation::LeftOf, &a, &b) || h(Relation::RightOf, &a, &b)) {
            violations.push(format!("pair {i}: centroid tie not strict"));
        }
        if a.height() == b.height() && (h(Relation::Taller, &a, &b) || h(Relation::Shorter, &a, &b)) {
            violations.push(format!("pair {i}: height tie not strict"));
        }
        if a.area() == b.area() && (h(Relation::Larger, &a, &b) || h(Relation::Smaller, &a, &b)) {
            violations.push(format!("pair {i}: area tie not strict"));
        }
        if (h(Relation::Inside, &a, &b) || h(Relation::Surrounding, &a, &b)) && !h(Relation::Overlapping, &a, &b) {
            violations.push(format!("pair {i}: containment without overlap"));
        }
    }
    let el = t.elapsed();
    check(
        violations.is_empty() && within(el, Duration::from_secs(5)),
        format!(
            "10000 pairs, {} violations{} in {el:.2?}",
            violations.len(),
            violations.first().map(|v| format!(" (first: {v})")).unwrap_or_default()
        ),
    )
}

// Independent relation oracle for the three relations used in the metrics micro-instances.
fn oracle_relation(r: Relation, s: [f64; 4], o: [f64; 4]) -> bool {
    match r {
        Relation::LeftOf => s[0] + s[2] < o[0] + o[2],
        Relation::Inside => s[0] >= o[0] && s[1] >= o[1] && s[2] <= o[2] && s[3] <= o[3],
        Relation::Larger => (s[2] - s[0]) * (s[3] - s[1]) > (o[2] - o[0]) * (o[3] - o[1]),
        _ => unreachable!(),
    }
}

fn metrics_oracle() -> Outcome {
    let t = Instant::now();
    let boxes = [[0.0, 0.0, 2.0, 2.0], [0.0, 0.0, 4.0, 4.0]];
    let scores = [0.05, 0.1, 0.5];
    let singles: Vec<(f64, [f64; 4])> = scores
        .iter()
        .flat_map(|&s| boxes.iter().map(move |&b| (s, b)))
        .collect();
    let mut lists: Vec<Vec<(f64, [f64; 4])>> = vec![vec![]];
    for len in 1..=3 {
        let prev: Vec<_> = lists.iter().filter(|l| l.len() == len - 1).cloned().collect();
        for l in prev {
            for &d in &singles {
                let mut n = l.clone();
                n.push(d);
                lists.push(n);
            }
        }
    }
    let mut instances = 0u64;
    let mut mismatches = Vec::new();
    for relation in [Relation::LeftOf, Relation::Inside, Relation::Larger] {
        let triplet = SpatialTriplet::new("dog", relation, "cat");
        let mut captions = Vec::new();
        let mut sets = Vec::new();
        for (i, subj) in lists.iter().enumerate() {
            for (j, obj) in lists.iter().enumerate() {
                let id = format!("{i}-{j}");
                captions.push(CaptionRecord::new(id.clone(), &triplet, ArticleStyle::Indefinite));
                let dets = subj
                    .iter()
                    .map(|&(s, b)| ("dog", s, b))
                    .chain(obj.iter().map(|&(s, b)| ("cat", s, b)))
                    .map(|(l, s, b)| Detection {
                        label: l.into(),
                        score: s,
                        bbox: bb(b),
                    })
                    .collect();
                sets.push(DetectionSet {
                    caption_id: id,
                    image_index: 0,
                    detections: dets,
                });
            }
        }
        for threshold in [0.0, 0.1, 0.5] {
            for pairing in [PairingMode::BestScore, PairingMode::AnyPair] {
                let cfg = EvalConfig {
                    score_threshold: threshold,
                    images_per_caption: 1,
                    pairing_mode: pairing,
                    containment_tolerance: 0.0,
                };
                let mut expected = Counts::default();
                for subj in &lists {
                    for obj in &lists {
                        let ks: Vec<_> = subj.iter().filter(|d| d.0 >= threshold).collect();
                        let ko: Vec<_> = obj.iter().filter(|d| d.0 >= threshold).collect();
                        let oa = !ks.is_empty() && !ko.is_empty();
                        let first_best = |v: &[&(f64, [f64; 4])]| {
                            let m = v.iter().map(|d| d.0).fold(f64::MIN, f64::max);
                            v.iter().find(|d| d.0 == m).map(|d| d.1)
                        };
                        let visor = oa
                            && match pairing {
                                PairingMode::BestScore => {
                                    oracle_relation(relation, first_best(&ks).unwrap(), first_best(&ko).unwrap())
                                }
                                PairingMode::AnyPair => ks
                                    .iter()
                                    .any(|s| ko.iter().any(|o| oracle_relation(relation, s.1, o.1))),
                            };
                        expected.images += 1;
                        expected.oa += oa as u64;
                        expected.visor += visor as u64;
                    }
                }
                let report = aggregate(&sets, &captions, &cfg).unwrap();
                let got = report.overall.counts;
                instances += got.images;
                let exact = |c: &Counts| {
                    (
                        c.oa_percent::<Rational>(),
                        c.visor_percent::<Rational>(),
                        c.visor_cond_percent::<Rational>(),
                    )
                };
                if got != expected || exact(&got) != exact(&expected) {
                    mismatches.push(format!("{relation} t={threshold} {pairing:?}: {got:?} vs {expected:?}"));
                }
                if let (Some(o), Some(v), Some(c)) = exact(&got) {
                    if v != c * o / Rational::from_integer(100) {
                        mismatches.push(format!("{relation} t={threshold}: identity"));
                    }
                }
            }
        }
    }
    let el = t.elapsed();
    check(
        mismatches.is_empty() && within(el, Duration::from_secs(10)),
        format!(
            "{instances} scored micro-instances, {} mismatches{} in {el:.2?}",
            mismatches.len(),
            mismatches.first().map(|m| format!(" (first: {m})")).unwrap_or_default()
        ),
    )
}

fn sampler_soundness() -> Outcome {
    let t = Instant::now();
    let vocab = Vocabulary::coco80();
    let (images, _) = load_annotations(&fixture(), &vocab, IngestPolicy::default()).unwrap();
    let cfg = SamplerConfig {
        seed: 2024,
        ..Default::default()
    };
    let rel = RelationConfig::default();
    let samples = sample_training_batch(&images, &cfg, 10_000).unwrap();
    let mut violations = 0usize;
    for s in &samples {
        for tr in &s.triplets {
            if !holds(tr.relation, &tr.subject_bbox, &tr.object_bbox, &rel) {
                violations += 1;
            }
        }
        let src = images.iter().find(|i| i.image_id == s.image_id).unwrap();
        if verify_sample(s, src, &cfg).is_err() {
            violations += 1;
        }
    }
    let bytes = |v: &[spatialgen::sampler::TrainingSample]| {
        let mut buf = Vec::new();
        write_jsonl_to(&mut buf, &Provenance::new("sample", serde_json::json!({})), v).unwrap();
        buf
    };
    let first = bytes(&samples);
    let replay = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap()
        .install(|| sample_training_batch(&images, &cfg, 10_000).unwrap());
    let identical = first == bytes(&replay);
    let el = t.elapsed();
    let triplets: usize = samples.iter().map(|s| s.triplets.len()).sum();
    check(
        violations == 0 && identical && samples.len() == 10_000 && within(el, Duration::from_secs(30)),
        format!(
            "10000 samples, {triplets} triplets, {violations} violations, replay {} in {el:.2?}",
            if identical { "byte-identical" } else { "DIFFERS" }
        ),
    )
}

fn corpus_scanner() -> Outcome {
    let fillers = ["a", "man", "riding", "horse", "on", "the", "beach", "with", "leftover", "rightly", "cake", "sunset"];
    let keywords = ["left", "right", "above", "below", "inside", "taller", "wider", "larger"];
    let mut rng = ChaCha8Rng::seed_from_u64(72);
    let planted: std::collections::BTreeSet<usize> = rand::seq::index::sample(&mut rng, 10_000, 72).into_iter().collect();
    let captions: Vec<String> = (0..10_000)
        .map(|i| {
            let mut words: Vec<&str> = (0..rng.gen_range(3..12)).map(|_| fillers[rng.gen_range(0..fillers.len())]).collect();
            if planted.contains(&i) {
                let pos = rng.gen_range(0..=words.len());
                words.insert(pos, keywords[rng.gen_range(0..keywords.len())]);
            }
            words.join(" ")
        })
        .collect();
    let lex = RelationLexicon::default();
    let refs: Vec<&str> = captions.iter().map(String::as_str).collect();
    let whole = scan(refs.iter().copied(), &lex);
    let share = whole.relation_share();
    let exact = Rational::new(whole.captions_with_any_relation as i64 * 100, whole.total_captions as i64);
    let mut merged = scan(refs[..3_333].iter().copied(), &lex);
    merged.merge(&scan(refs[3_333..7_001].iter().copied(), &lex));
    merged.merge(&scan(refs[7_001..].iter().copied(), &lex));

    // throughput over ~64 MB of caption text (informational)
    let mut text = Vec::new();
    while text.len() < 64 << 20 {
        for c in &captions {
            text.extend_from_slice(c.as_bytes());
            text.push(b'\n');
        }
    }
    let t = Instant::now();
    let big = Scanner::new(&lex).scan_reader(&text[..], None).unwrap();
    let mbps = text.len() as f64 / 1e6 / t.elapsed().as_secs_f64();
    check(
        share == Some(0.72) && exact == Rational::new(72, 100) && merged == whole && big.total_captions > 0,
        format!(
            "{}/{} captions = {}% (exact {exact}), shard merge {}, throughput {mbps:.0} MB/s (target 100, informational{})",
            whole.captions_with_any_relation,
            whole.total_captions,
            share.map_or("NA".into(), |s| s.to_string()),
            if merged == whole { "equal" } else { "DIFFERS" },
            if cfg!(debug_assertions) { ", debug build" } else { "" }
        ),
    )
}

/// Box pair (subject, object) for which `r` holds or fails.
fn pair_for(r: Relation, want: bool) -> (BBox<f64>, BBox<f64>) {
    let cands = [[0.0, 0.0, 2.0, 2.0], [0.0, 0.0, 4.0, 4.0], [5.0, 0.0, 6.0, 9.0], [1.0, 5.0, 9.0, 6.0]];
    for s in cands {
        for o in cands {
            if s != o && holds(r, &bb(s), &bb(o), &RelationConfig::default()) == want {
                return (bb(s), bb(o));
            }
        }
    }
    unreachable!("candidate boxes cover every relation")
}

fn report_consistency() -> Outcome {
    // planted per-relation outcomes: relation i gets 10 images, oa = 10 - i % 4, visor = oa - i % 3
    let mut captions = Vec::new();
    let mut sets = Vec::new();
    let mut hand = Vec::new();
    let mut freq = TripletTable::new();
    for (i, r) in Relation::ALL.iter().enumerate() {
        let oa = 10 - (i % 4) as u64;
        let visor = oa - (i % 3) as u64;
        hand.push((*r, Counts { images: 10, oa, visor }));
        for j in 0..2u64 {
            let t = SpatialTriplet::new(["dog", "cat"][j as usize], *r, ["cat", "dog"][j as usize]);
            freq.add(t.clone(), [0, 3, 40, 900, 20_000][(i + j as usize) % 5]);
            let id = format!("{}-{j}", r.as_str());
            captions.push(CaptionRecord::new(id.clone(), &t, ArticleStyle::Indefinite));
            for k in 0..5u64 {
                let n = j * 5 + k;
                let dets = if n < oa {
                    let (s, o) = pair_for(*r, n < visor);
                    vec![
                        Detection { label: t.subject.clone(), score: 0.9, bbox: s },
                        Detection { label: t.object.clone(), score: 0.9, bbox: o },
                    ]
                } else {
                    vec![]
                };
                sets.push(DetectionSet {
                    caption_id: id.clone(),
                    image_index: k as usize,
                    detections: dets,
                });
            }
        }
    }
    let cfg = EvalConfig {
        images_per_caption: 5,
        ..Default::default()
    };
    let report: EvalReport = aggregate(&sets, &captions, &cfg).unwrap();
    let mut problems = Vec::new();

    let table = per_relation_table(&report, None).unwrap();
    for (row, (r, counts)) in table.iter().zip(&hand) {
        let expect = 100.0 * counts.visor as f64 / counts.oa as f64;
        if row.relation != *r || row.counts != *counts || row.visor_cond != Some(expect) {
            problems.push(format!("per-relation row {r}"));
        }
    }
    let bins = frequency_correlation(&report, &freq, &[1, 10, 100, 1_000, 10_000]).unwrap();
    let pooled = bins.pooled();
    if pooled != report.overall.counts
        || pooled.visor_cond_percent::<Rational>() != report.overall.counts.visor_cond_percent::<Rational>()
    {
        problems.push("pooled bins differ from overall".into());
    }
    let bias = bias_table(&report, Some(&report)).unwrap();
    for row in &bias.rows {
        let fwd = pair_delta(&report, row.first, row.second).delta;
        let back = pair_delta(&report, row.second, row.first).delta;
        if fwd.zip(back).is_none_or(|(a, b)| a != -b) || row.runs[0].delta != fwd {
            problems.push(format!("bias {} / {}", row.first, row.second));
        }
    }
    check(
        problems.is_empty(),
        format!(
            "14 relations x 10 images, {} bins, {} bias pairs, {} problems{}",
            bins.bins.len(),
            bias.rows.len(),
            problems.len(),
            problems.first().map(|p| format!(" (first: {p})")).unwrap_or_default()
        ),
    )
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    let fx = fixture().to_string_lossy().into_owned();
    let steps: Vec<Vec<String>> = [
        vec!["filter-natural", "--annotations", &fx, "--out", &d("natural.jsonl")],
        vec!["split", "--mode", "main", "--natural", &d("natural.jsonl"), "--val-size", "50", "--seed", "1", "--out", &d("split.json")],
        vec!["gen-captions", "--split", &d("split.json"), "--set", "val", "--limit", "50", "--seed", "1", "--out", &d("captions.jsonl")],
        vec!["mock-detect", "--captions", &d("captions.jsonl"), "--oa-rate", "0.8", "--relation-rate", "0.6", "--seed", "10", "--out", &d("det.jsonl")],
        vec!["evaluate", "--captions", &d("captions.jsonl"), "--detections", &d("det.jsonl"), "--out", &d("eval.json")],
        vec!["report", "--eval", &d("eval.json"), "--freq", &d("natural.jsonl"), "--out", &d("report")],
    ]
    .into_iter()
    .map(|s| s.into_iter().map(String::from).collect())
    .collect();
    for step in &steps {
        let out = Command::new(env!("CARGO_BIN_EXE_spatialgen"))
            .args(step)
            .env_remove("SPATIALGEN_CONFIG")
            .output()
            .unwrap();
        if !out.status.success() {
            return Outcome::Fail(format!("{} failed: {}", step[0], String::from_utf8_lossy(&out.stderr).trim()));
        }
    }
    let report = EvalReport::read(Path::new(&d("eval.json"))).unwrap();
    let c = report.overall.counts;
    let bound = |p: f64, n: u64| 3.0 * (p * (1.0 - p) / n as f64).sqrt();
    let oa = c.oa as f64 / c.images as f64;
    let cond = c.visor as f64 / c.oa as f64;
    let (b_oa, b_cond) = (bound(0.8, c.images), bound(0.6, c.oa));
    let files = ["per_relation.csv", "per_relation.txt", "bias.csv", "frequency_bins.csv"];
    let written = files.iter().all(|f| dir.path().join("report").join(f).exists());
    check(
        report.caption_count == 50 && (oa - 0.8).abs() <= b_oa && (cond - 0.6).abs() <= b_cond && written,
        format!(
            "{} captions, {} images: OA {:.3} (0.8 ± {b_oa:.3}), VISOR_Cond {:.3} (0.6 ± {b_cond:.3}), report {}",
            report.caption_count,
            c.images,
            oa,
            cond,
            if written { "written" } else { "MISSING" }
        ),
    )
}

fn main() {
    let coco = coco_natural();
    type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("1 universe count", Box::new(universe_count)),
        ("2 unseen validation formula", Box::new(unseen_formula)),
        ("3 natural share on COCO train", Box::new(|| natural_share(&coco))),
        ("4 unseen natural val candidates", Box::new(|| unseen_candidates(&coco))),
        ("5 predicate property suite", Box::new(predicate_suite)),
        ("6 metrics oracle equivalence", Box::new(metrics_oracle)),
        ("7 sampler soundness", Box::new(sampler_soundness)),
        ("8 corpus scanner", Box::new(corpus_scanner)),
        ("9 report consistency", Box::new(report_consistency)),
        ("10 end-to-end dry run", Box::new(end_to_end)),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        match run() {
            Outcome::Pass(d) => println!("criterion {name}: PASS  {d}"),
            Outcome::Skip(d) => println!("criterion {name}: SKIP  {d}"),
            Outcome::Fail(d) => {
                failed += 1;
                println!("criterion {name}: FAIL  {d}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
