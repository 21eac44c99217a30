use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use spatialgen::captions::{self, ArticleStyle, CaptionRecord};
use spatialgen::corpus::{CorpusReport, RelationLexicon, Scanner};
use spatialgen::geometry::RelationConfig;
use spatialgen::ingest::{self, IngestPolicy};
use spatialgen::io::{self, Provenance};
use spatialgen::labels::Vocabulary;
use spatialgen::metrics::{self, EvalConfig, EvalReport, PairingMode};
use spatialgen::reports;
use spatialgen::sampler::{self, SamplerConfig, TrainingSample};
use spatialgen::simulate::{self, MockConfig};
use spatialgen::splits::{self, ObjectPartition, SplitManifest, TripletRef};
use spatialgen::triplets::{self, CountingUnit, TripletTable};

use crate::config::PipelineConfig;
use crate::{Internal, Usage};

#[derive(Debug, Parser)]
#[command(name = "spatialgen", version, about = "Spatial-relation caption datasets and spatial-correctness scoring")]
pub struct Cli {
    /// Worker threads (defaults to available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// JSON file with default settings.
    #[arg(long, global = true, env = "SPATIALGEN_CONFIG")]
    config: Option<PathBuf>,

    /// Print the digest of the effective configuration and exit without running.
    #[arg(long, global = true)]
    config_digest: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Unit {
    InstancePair,
    ImagePresence,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Main,
    Unseen,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Set {
    Test,
    Val,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Article {
    Indefinite,
    Bare,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Normalize a COCO instances file into a line-delimited snapshot.
    Ingest {
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<String>,
        #[arg(long)]
        include_crowd: bool,
        /// Drop out-of-bounds boxes instead of clamping them.
        #[arg(long)]
        no_clamp: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Enumerate every (subject, relation, object) triplet over a vocabulary.
    BuildUniverse {
        #[arg(long)]
        vocab: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Count triplets instantiated by annotated images and keep the observed ones.
    FilterNatural {
        /// COCO instances file (.json) or snapshot (.jsonl).
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<String>,
        /// Universe artifact; rebuilt from the vocabulary when omitted.
        #[arg(long)]
        universe: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "instance-pair")]
        counting_unit: Unit,
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        include_crowd: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the main or unseen-object split manifest.
    Split {
        #[arg(long, value_enum)]
        mode: Mode,
        /// Natural triplet table from filter-natural.
        #[arg(long)]
        natural: PathBuf,
        #[arg(long)]
        vocab: Option<String>,
        #[arg(long, default_value_t = splits::DEFAULT_VAL_SIZE)]
        val_size: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// JSON object partition {train, val, test}; the built-in partition otherwise.
        #[arg(long)]
        partition_file: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verbalize the triplets of one split set as evaluation captions.
    GenCaptions {
        /// Split manifest.
        #[arg(long)]
        split: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        set: Set,
        /// Keep a seeded subset of this many captions.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "indefinite")]
        article: Article,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw augmented training captions from annotated images.
    Sample {
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<String>,
        #[arg(long, value_enum, default_value = "main")]
        split: Mode,
        /// Split manifest restricting training objects (unseen split).
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long)]
        n: u64,
        /// Index of the first sample, for resuming a stream.
        #[arg(long, default_value_t = 0)]
        start: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        no_crop: bool,
        #[arg(long)]
        flip_probability: Option<f64>,
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long, value_enum, default_value = "indefinite")]
        article: Article,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score detections against captions (OA, VISOR, conditional VISOR).
    Evaluate {
        #[arg(long)]
        captions: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        vocab: Option<String>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        images_per_caption: Option<usize>,
        /// best_score or any_pair.
        #[arg(long)]
        pairing: Option<String>,
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write synthetic detections with planted accuracy rates.
    MockDetect {
        #[arg(long)]
        captions: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        oa_rate: f64,
        #[arg(long, default_value_t = 0.6)]
        relation_rate: f64,
        #[arg(long)]
        images_per_caption: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Count relation keywords in caption text files.
    ScanCorpus {
        #[arg(long, value_delimiter = ',', required = true)]
        input: Vec<PathBuf>,
        /// Tab-separated column holding the caption (whole line when omitted).
        #[arg(long)]
        column: Option<usize>,
        /// JSON map from relation to keyword list.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-relation, bias and frequency tables from evaluation reports.
    Report {
        #[arg(long)]
        eval: PathBuf,
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Training triplet frequencies (triplet table).
        #[arg(long)]
        freq: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = reports::DEFAULT_FREQUENCY_EDGES)]
        edges: Vec<u64>,
        /// Also sample this many triplets for qualitative inspection.
        #[arg(long)]
        qualitative: Option<usize>,
        /// Inclusive frequency range for qualitative sampling, as lo,hi.
        #[arg(long, value_delimiter = ',', default_values_t = [1000u64, 10_000])]
        freq_range: Vec<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

struct Ctx {
    cfg: PipelineConfig,
    digest_only: bool,
}

impl Ctx {
    fn vocab(&self, flag: &Option<String>) -> String {
        flag.clone()
            .or_else(|| self.cfg.vocab.clone())
            .unwrap_or_else(|| "coco80".into())
    }

    fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.cfg.seed).unwrap_or(0)
    }

    fn tolerance(&self, flag: Option<f64>) -> f64 {
        flag.or(self.cfg.containment_tolerance).unwrap_or(0.0)
    }

    fn annotations(&self, flag: &Option<PathBuf>) -> anyhow::Result<PathBuf> {
        flag.clone()
            .or_else(|| self.cfg.annotations.clone())
            .ok_or_else(|| Usage("--annotations is required (or set it in the config file)".into()).into())
    }

    /// Provenance for `command`, or `None` after printing the digest in digest-only mode.
    fn provenance(&self, command: &str, config: serde_json::Value) -> Option<Provenance> {
        let prov = Provenance::new(command, config);
        if self.digest_only {
            println!("{}", prov.config_digest);
            return None;
        }
        Some(prov)
    }
}

fn require(path: &Path) -> anyhow::Result<()> {
    if !path.exists() {
        return Err(spatialgen::Error::Schema(format!("input {} does not exist", path.display())).into());
    }
    Ok(())
}

fn summary(value: serde_json::Value) {
    println!("{}", serde_json::to_string(&value).expect("json"));
}

fn style(a: Article) -> ArticleStyle {
    match a {
        Article::Indefinite => ArticleStyle::Indefinite,
        Article::Bare => ArticleStyle::Bare,
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = PipelineConfig::load(cli.config.as_deref())?;
    if let Some(n) = cli.threads.or(cfg.threads) {
        if n == 0 {
            return Err(Usage("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    let ctx = Ctx {
        cfg,
        digest_only: cli.config_digest,
    };
    match cli.command {
        Command::Ingest {
            annotations,
            vocab,
            include_crowd,
            no_clamp,
            out,
        } => {
            let annotations = ctx.annotations(&annotations)?;
            let vocab = ctx.vocab(&vocab);
            let policy = IngestPolicy {
                include_crowd,
                clamp_out_of_bounds: !no_clamp,
            };
            let Some(prov) = ctx.provenance(
                "ingest",
                json!({"annotations": annotations, "vocab": vocab, "policy": policy}),
            ) else {
                return Ok(());
            };
            require(&annotations)?;
            let vocabulary = Vocabulary::from_spec(&vocab)?;
            let (images, stats) = ingest::load_annotations(&annotations, &vocabulary, policy)?;
            ingest::write_snapshot(&out, &prov, &images)?;
            summary(json!({"images": images.len(), "stats": stats}));
        }

        Command::BuildUniverse { vocab, out } => {
            let vocab = ctx.vocab(&vocab);
            let Some(prov) = ctx.provenance("build-universe", json!({"vocab": vocab})) else {
                return Ok(());
            };
            let vocabulary = Vocabulary::from_spec(&vocab)?;
            let universe = triplets::build_universe(&vocabulary);
            if universe.len() != triplets::universe_size(vocabulary.len()) {
                return Err(Internal(format!("universe has {} triplets", universe.len())).into());
            }
            let refs: Vec<TripletRef> = universe.iter().map(TripletRef::from).collect();
            io::write_jsonl(&out, &prov, &refs)?;
            summary(json!({"labels": vocabulary.len(), "triplets": refs.len()}));
        }

        Command::FilterNatural {
            annotations,
            vocab,
            universe,
            counting_unit,
            tolerance,
            include_crowd,
            out,
        } => {
            let annotations = ctx.annotations(&annotations)?;
            let vocab = ctx.vocab(&vocab);
            let tolerance = ctx.tolerance(tolerance);
            let unit = match counting_unit {
                Unit::InstancePair => CountingUnit::InstancePair,
                Unit::ImagePresence => CountingUnit::ImagePresence,
            };
            let policy = IngestPolicy {
                include_crowd,
                ..Default::default()
            };
            let Some(prov) = ctx.provenance(
                "filter-natural",
                json!({
                    "annotations": annotations,
                    "vocab": vocab,
                    "universe": universe,
                    "counting_unit": unit,
                    "containment_tolerance": tolerance,
                    "policy": policy,
                }),
            ) else {
                return Ok(());
            };
            require(&annotations)?;
            let vocabulary = Vocabulary::from_spec(&vocab)?;
            let rel = RelationConfig::new(tolerance)?;
            let universe = match universe {
                Some(path) => {
                    require(&path)?;
                    let (_, refs): (_, Vec<TripletRef>) = io::read_jsonl(&path)?;
                    refs.iter().map(Into::into).collect()
                }
                None => triplets::build_universe(&vocabulary),
            };
            let (images, stats) = ingest::load_any(&annotations, &vocabulary, policy)?;
            let natural = triplets::natural_filter(&universe, &images, &vocabulary, &rel, unit)?;
            natural.write_snapshot(&out, &prov)?;
            summary(json!({
                "images": images.len(),
                "universe": universe.len(),
                "natural": natural.len(),
                "share_percent": 100.0 * natural.len() as f64 / universe.len().max(1) as f64,
                "ingest": stats,
            }));
        }

        Command::Split {
            mode,
            natural,
            vocab,
            val_size,
            seed,
            partition_file,
            out,
        } => {
            let vocab = ctx.vocab(&vocab);
            let seed = ctx.seed(seed);
            let Some(prov) = ctx.provenance(
                "split",
                json!({
                    "mode": format!("{mode:?}").to_lowercase(),
                    "natural": natural,
                    "vocab": vocab,
                    "val_size": val_size,
                    "partition_file": partition_file,
                }),
            ) else {
                return Ok(());
            };
            require(&natural)?;
            let table = TripletTable::read_snapshot(&natural)?;
            let mut manifest = match mode {
                Mode::Main => {
                    if partition_file.is_some() {
                        return Err(Usage("--partition-file only applies to --mode unseen".into()).into());
                    }
                    splits::build_main_split(&table, val_size, seed)?
                }
                Mode::Unseen => {
                    let vocabulary = Vocabulary::from_spec(&vocab)?;
                    let partition = match &partition_file {
                        Some(p) => ObjectPartition::from_file(p)?,
                        None => ObjectPartition::canonical(),
                    };
                    splits::build_unseen_split(&table, &vocabulary, &partition, val_size, seed)?
                }
            };
            manifest.provenance = Some(prov.with_seed("split", seed));
            manifest.write(&out)?;
            summary(json!({
                "test_triplets": manifest.test_triplets.len(),
                "val_triplets": manifest.val_triplets.len(),
                "stats": manifest.stats,
            }));
        }

        Command::GenCaptions {
            split,
            set,
            limit,
            seed,
            article,
            out,
        } => {
            let seed = ctx.seed(seed);
            let Some(prov) = ctx.provenance(
                "gen-captions",
                json!({
                    "split": split,
                    "set": format!("{set:?}").to_lowercase(),
                    "limit": limit,
                    "article": style(article),
                }),
            ) else {
                return Ok(());
            };
            require(&split)?;
            let manifest = SplitManifest::read(&split)?;
            let (triplets, prefix) = match set {
                Set::Test => (manifest.test_set(), "test"),
                Set::Val => (manifest.val_set(), "val"),
            };
            let records = captions::caption_records(&triplets, prefix, limit, seed, style(article))?;
            captions::write_caption_manifest(&out, &prov.with_seed("captions", seed), &records)?;
            summary(json!({"captions": records.len()}));
        }

        Command::Sample {
            annotations,
            vocab,
            split,
            manifest,
            k,
            max_iter,
            n,
            start,
            seed,
            no_crop,
            flip_probability,
            tolerance,
            article,
            out,
        } => {
            let annotations = ctx.annotations(&annotations)?;
            let vocab = ctx.vocab(&vocab);
            let s = &ctx.cfg.sampler;
            let defaults = SamplerConfig::default();
            let allowed = match (split, &manifest) {
                (Mode::Main, None) => None,
                (_, Some(path)) => {
                    require(path)?;
                    SplitManifest::read(path)?.allowed_training_objects()
                }
                (Mode::Unseen, None) => Some(ObjectPartition::canonical().train.into_iter().collect()),
            };
            if matches!(split, Mode::Unseen) && allowed.is_none() {
                return Err(Usage("--split unseen needs an unseen-split manifest".into()).into());
            }
            let scfg = SamplerConfig {
                k: k.or(s.k).unwrap_or(defaults.k),
                max_iter: max_iter.or(s.max_iter).unwrap_or(defaults.max_iter),
                crop_enabled: !no_crop,
                crop_scale_range: (s.crop_scale_min.unwrap_or(defaults.crop_scale_range.0), 1.0),
                flip_probability: flip_probability
                    .or(s.flip_probability)
                    .unwrap_or(defaults.flip_probability),
                allowed_objects: allowed,
                seed: ctx.seed(seed),
                containment_tolerance: ctx.tolerance(tolerance),
                article_style: style(article),
                ..defaults
            };
            let Some(prov) = ctx.provenance(
                "sample",
                json!({"annotations": annotations, "vocab": vocab, "n": n, "start": start, "sampler": scfg}),
            ) else {
                return Ok(());
            };
            require(&annotations)?;
            let vocabulary = Vocabulary::from_spec(&vocab)?;
            let (images, _) = ingest::load_any(&annotations, &vocabulary, IngestPolicy::default())?;
            let samples = sampler::sample_training_range(&images, &scfg, start, n)?;
            verify_all(&samples, &images, &scfg)?;
            io::write_jsonl(&out, &prov.with_seed("sampler", scfg.seed), &samples)?;
            summary(json!({"samples": samples.len()}));
        }

        Command::Evaluate {
            captions,
            detections,
            vocab,
            threshold,
            images_per_caption,
            pairing,
            tolerance,
            out,
        } => {
            let vocab = ctx.vocab(&vocab);
            let e = &ctx.cfg.eval;
            let defaults = EvalConfig::default();
            let pairing_mode = match pairing.as_ref().or(e.pairing.as_ref()) {
                Some(p) => p.parse::<PairingMode>()?,
                None => defaults.pairing_mode,
            };
            let ecfg = EvalConfig {
                score_threshold: threshold.or(e.threshold).unwrap_or(defaults.score_threshold),
                images_per_caption: images_per_caption
                    .or(e.images_per_caption)
                    .unwrap_or(defaults.images_per_caption),
                pairing_mode,
                containment_tolerance: ctx.tolerance(tolerance),
            };
            ecfg.validate()?;
            let Some(prov) = ctx.provenance(
                "evaluate",
                json!({"captions": captions, "detections": detections, "vocab": vocab, "eval": ecfg}),
            ) else {
                return Ok(());
            };
            require(&captions)?;
            require(&detections)?;
            let vocabulary = Vocabulary::from_spec(&vocab)?;
            let records = captions::read_caption_manifest(&captions, Some(&vocabulary))?;
            let sets = metrics::read_detections(&detections)?;
            let mut report = metrics::aggregate(&sets, &records, &ecfg)?;
            check_identity(&report)?;
            report.provenance = Some(prov);
            report.write(&out)?;
            summary(json!({"captions": report.caption_count, "overall": report.overall}));
        }

        Command::MockDetect {
            captions,
            oa_rate,
            relation_rate,
            images_per_caption,
            threshold,
            seed,
            out,
        } => {
            let defaults = EvalConfig::default();
            let mcfg = MockConfig {
                oa_rate,
                relation_rate,
                images_per_caption: images_per_caption
                    .or(ctx.cfg.eval.images_per_caption)
                    .unwrap_or(defaults.images_per_caption),
                score_threshold: threshold.or(ctx.cfg.eval.threshold).unwrap_or(defaults.score_threshold),
                seed: ctx.seed(seed),
            };
            mcfg.validate()?;
            let Some(prov) = ctx.provenance("mock-detect", json!({"captions": captions, "mock": mcfg})) else {
                return Ok(());
            };
            require(&captions)?;
            let records: Vec<CaptionRecord> = captions::read_caption_manifest(&captions, None)?;
            let sets = simulate::mock_detections(&records, &mcfg)?;
            metrics::write_detections(&out, &prov.with_seed("mock", mcfg.seed), &sets)?;
            summary(json!({"detection_sets": sets.len()}));
        }

        Command::ScanCorpus {
            input,
            column,
            lexicon,
            out,
        } => {
            let Some(prov) = ctx.provenance(
                "scan-corpus",
                json!({"input": input, "column": column, "lexicon": lexicon}),
            ) else {
                return Ok(());
            };
            for p in &input {
                require(p)?;
            }
            let lex = match &lexicon {
                Some(p) => RelationLexicon::from_file(p)?,
                None => RelationLexicon::default(),
            };
            let stats = Scanner::new(&lex).scan_files(&input, column)?;
            let report = CorpusReport::new(&stats, prov);
            io::write_json(&out, &report)?;
            summary(json!({
                "captions": report.total_captions,
                "relation_share_percent": report.relation_share_percent,
            }));
        }

        Command::Report {
            eval,
            baseline,
            freq,
            edges,
            qualitative,
            freq_range,
            seed,
            out,
        } => {
            let seed = ctx.seed(seed);
            if freq_range.len() != 2 {
                return Err(Usage("--freq-range takes exactly two values, lo,hi".into()).into());
            }
            let Some(prov) = ctx.provenance(
                "report",
                json!({
                    "eval": eval,
                    "baseline": baseline,
                    "freq": freq,
                    "edges": edges,
                    "qualitative": qualitative,
                    "freq_range": freq_range,
                }),
            ) else {
                return Ok(());
            };
            require(&eval)?;
            let report = EvalReport::read(&eval)?;
            let baseline = match &baseline {
                Some(p) => {
                    require(p)?;
                    Some(EvalReport::read(p)?)
                }
                None => None,
            };
            let freq = match &freq {
                Some(p) => {
                    require(p)?;
                    Some(TripletTable::read_snapshot(p)?)
                }
                None => None,
            };
            let mut written =
                reports::write_report_dir(&out, &prov, &report, baseline.as_ref(), freq.as_ref(), &edges)?;
            if let Some(n) = qualitative {
                let freq = freq
                    .as_ref()
                    .ok_or_else(|| Usage("--qualitative needs --freq".into()))?;
                let picked = reports::sample_qualitative_triplets(freq, freq_range[0], freq_range[1], n, seed)?;
                let refs: Vec<TripletRef> = picked.iter().map(TripletRef::from).collect();
                io::write_jsonl(&out.join("qualitative.jsonl"), &prov.clone().with_seed("qualitative", seed), &refs)?;
                written.push("qualitative.jsonl".into());
            }
            summary(json!({"written": written}));
        }
    }
    Ok(())
}

fn verify_all(samples: &[TrainingSample], images: &[spatialgen::ingest::ImageAnnotations], cfg: &SamplerConfig) -> anyhow::Result<()> {
    let by_id: HashMap<u64, &spatialgen::ingest::ImageAnnotations> = images.iter().map(|i| (i.image_id, i)).collect();
    for s in samples {
        let src = by_id
            .get(&s.image_id)
            .ok_or_else(|| Internal(format!("sample {} refers to unknown image {}", s.sample_index, s.image_id)))?;
        sampler::verify_sample(s, src, cfg).map_err(|e| Internal(e.to_string()))?;
    }
    Ok(())
}

fn check_identity(report: &EvalReport) -> anyhow::Result<()> {
    use spatialgen::Rational;
    let c = report.overall.counts;
    if let (Some(v), Some(cond), Some(oa)) = (
        c.visor_percent::<Rational>(),
        c.visor_cond_percent::<Rational>(),
        c.oa_percent::<Rational>(),
    ) {
        if v != cond * oa / Rational::from_integer(100) {
            return Err(Internal("VISOR identity does not hold on aggregated counts".into()).into());
        }
    }
    Ok(())
}
