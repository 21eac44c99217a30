//! Plot-ready analyses over evaluation reports: per-relation tables,
//! opposite-pair bias, performance by training-triplet frequency, and
//! frequency-range triplet sampling for qualitative inspection.
//!
//! Percentages are printed with one decimal; absent values print as `NA`.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Relation, RelationKind};
use crate::io::{self, Provenance};
use crate::metrics::{Counts, EvalReport};
use crate::triplets::{SpatialTriplet, TripletTable};

pub fn fmt1(v: Option<f64>) -> String {
    match v {
        // adding 0.0 turns -0.0 into 0.0
        Some(x) => format!("{:.1}", x + 0.0),
        None => "NA".into(),
    }
}

fn fmt_delta(v: Option<f64>) -> String {
    match v {
        Some(x) => match format!("{x:+.1}") {
            // small negative deltas round to zero
            s if s == "-0.0" => "+0.0".into(),
            s => s,
        },
        None => "NA".into(),
    }
}

fn same_captions(a: &EvalReport, b: &EvalReport) -> Result<()> {
    if a.caption_set_digest != b.caption_set_digest || a.caption_count != b.caption_count {
        return Err(Error::CaptionSetMismatch);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationTableRow {
    pub relation: Relation,
    pub counts: Counts,
    pub visor_cond: Option<f64>,
    pub baseline_visor_cond: Option<f64>,
    /// `visor_cond - baseline_visor_cond`.
    pub delta: Option<f64>,
}

/// Conditional VISOR per relation, with the change against `baseline` when given.
pub fn per_relation_table(report: &EvalReport, baseline: Option<&EvalReport>) -> Result<Vec<RelationTableRow>> {
    if let Some(b) = baseline {
        same_captions(report, b)?;
    }
    Ok(Relation::ALL
        .iter()
        .map(|&r| {
            let counts = report.relation_counts(r);
            let visor_cond = counts.visor_cond_percent::<f64>();
            let baseline_visor_cond = baseline.and_then(|b| b.relation_counts(r).visor_cond_percent::<f64>());
            RelationTableRow {
                relation: r,
                counts,
                visor_cond,
                baseline_visor_cond,
                delta: visor_cond.zip(baseline_visor_cond).map(|(a, b)| a - b),
            }
        })
        .collect())
}

fn kind_name(k: RelationKind) -> &'static str {
    match k {
        RelationKind::Projective => "projective",
        RelationKind::Topological => "topological",
        RelationKind::Scale => "scale",
    }
}

/// Aligned text rendering, e.g. `left_of  70.3 (+7.0)`.
pub fn render_relation_table(rows: &[RelationTableRow]) -> String {
    let with_delta = rows.iter().any(|r| r.baseline_visor_cond.is_some());
    let mut out = String::new();
    let _ = writeln!(out, "{:<12} {:<12} {:>14}", "type", "relation", "visor_cond");
    for row in rows {
        let mut cell = fmt1(row.visor_cond);
        if with_delta {
            cell = format!("{cell} ({})", fmt_delta(row.delta));
        }
        let _ = writeln!(
            out,
            "{:<12} {:<12} {:>14}",
            kind_name(row.relation.kind()),
            row.relation.as_str(),
            cell
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasEntry {
    pub run: String,
    pub first_visor_cond: Option<f64>,
    pub second_visor_cond: Option<f64>,
    /// `first - second`.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub first: Relation,
    pub second: Relation,
    /// Part of the six-pair published figure (overlapping/separated is not).
    pub in_figure: bool,
    pub runs: Vec<BiasEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasTable {
    pub rows: Vec<BiasRow>,
}

/// Conditional-VISOR difference for one ordered pair of relations.
pub fn pair_delta(report: &EvalReport, first: Relation, second: Relation) -> BiasEntry {
    let a = report.relation_counts(first).visor_cond_percent::<f64>();
    let b = report.relation_counts(second).visor_cond_percent::<f64>();
    BiasEntry {
        run: String::new(),
        first_visor_cond: a,
        second_visor_cond: b,
        delta: a.zip(b).map(|(a, b)| a - b),
    }
}

/// All seven opposite pairs for `report` (run "model") and `baseline` (run "baseline").
pub fn bias_table(report: &EvalReport, baseline: Option<&EvalReport>) -> Result<BiasTable> {
    if let Some(b) = baseline {
        same_captions(report, b)?;
    }
    let mut runs = vec![("model", report)];
    if let Some(b) = baseline {
        runs.push(("baseline", b));
    }
    Ok(BiasTable {
        rows: Relation::OPPOSITE_PAIRS
            .iter()
            .map(|&(first, second)| BiasRow {
                first,
                second,
                in_figure: first != Relation::Overlapping,
                runs: runs
                    .iter()
                    .map(|(name, r)| BiasEntry {
                        run: name.to_string(),
                        ..pair_delta(r, first, second)
                    })
                    .collect(),
            })
            .collect(),
    })
}

pub const DEFAULT_FREQUENCY_EDGES: [u64; 6] = [1, 10, 100, 1_000, 10_000, 100_000];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBin {
    pub label: String,
    /// Inclusive lower bound on the training frequency.
    pub lo: u64,
    /// Exclusive upper bound; `None` for the open-ended last bin.
    pub hi: Option<u64>,
    pub triplets: usize,
    pub counts: Counts,
    pub visor_cond: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBinning {
    pub edges: Vec<u64>,
    pub bins: Vec<FrequencyBin>,
}

impl FrequencyBinning {
    pub fn pooled(&self) -> Counts {
        let mut total = Counts::default();
        for b in &self.bins {
            total.merge(&b.counts);
        }
        total
    }
}

/// Groups triplets by their training frequency and pools their counts per bin.
/// Bins: zero frequency, `[1, e0)` when `e0 > 1`, `[e_i, e_{i+1})`, and `[e_last, inf)`.
pub fn frequency_correlation(report: &EvalReport, freq: &TripletTable, edges: &[u64]) -> Result<FrequencyBinning> {
    if edges.is_empty() || edges[0] == 0 || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(format!(
            "frequency edges must be positive and strictly increasing, got {edges:?}"
        )));
    }
    let mut bins = vec![FrequencyBin {
        label: "0".into(),
        lo: 0,
        hi: Some(1),
        triplets: 0,
        counts: Counts::default(),
        visor_cond: None,
    }];
    let mut bounds: Vec<(u64, Option<u64>)> = Vec::new();
    if edges[0] > 1 {
        bounds.push((1, Some(edges[0])));
    }
    for (i, &lo) in edges.iter().enumerate() {
        bounds.push((lo, edges.get(i + 1).copied()));
    }
    for (lo, hi) in bounds {
        bins.push(FrequencyBin {
            label: match hi {
                Some(hi) => format!("[{lo},{hi})"),
                None => format!("[{lo},inf)"),
            },
            lo,
            hi,
            triplets: 0,
            counts: Counts::default(),
            visor_cond: None,
        });
    }
    for row in &report.per_triplet {
        let f = freq.count(&row.triplet());
        let bin = bins
            .iter_mut()
            .rev()
            .find(|b| f >= b.lo)
            .expect("zero bin accepts everything");
        bin.triplets += 1;
        bin.counts.merge(&row.metrics.counts);
    }
    for b in &mut bins {
        b.visor_cond = b.counts.visor_cond_percent();
    }
    Ok(FrequencyBinning {
        edges: edges.to_vec(),
        bins,
    })
}

/// Uniform sample without replacement of `n` triplets whose frequency lies in `[lo, hi]`.
/// Returns every eligible triplet (and logs a warning) when fewer than `n` qualify.
pub fn sample_qualitative_triplets(freq: &TripletTable, lo: u64, hi: u64, n: usize, seed: u64) -> Result<Vec<SpatialTriplet>> {
    if lo >= hi {
        return Err(Error::InvalidConfig(format!("frequency range [{lo}, {hi}] is empty")));
    }
    let eligible: Vec<&SpatialTriplet> = freq
        .iter()
        .filter(|(_, c)| (lo..=hi).contains(c))
        .map(|(t, _)| t)
        .collect();
    if eligible.len() <= n {
        if eligible.len() < n {
            log::warn!(
                "only {} triplets occur between {lo} and {hi} times; {n} requested",
                eligible.len()
            );
        }
        return Ok(eligible.into_iter().cloned().collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, eligible.len(), n)
        .into_iter()
        .map(|i| eligible[i].clone())
        .collect())
}

/// Writes the per-relation table (csv + txt), bias table and frequency bins into `dir`.
pub fn write_report_dir(
    dir: &Path,
    provenance: &Provenance,
    report: &EvalReport,
    baseline: Option<&EvalReport>,
    freq: Option<&TripletTable>,
    edges: &[u64],
) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let table = per_relation_table(report, baseline)?;
    let rows: Vec<Vec<String>> = table
        .iter()
        .map(|r| {
            vec![
                kind_name(r.relation.kind()).to_string(),
                r.relation.as_str().to_string(),
                r.counts.images.to_string(),
                r.counts.oa.to_string(),
                r.counts.visor.to_string(),
                fmt1(r.visor_cond),
                fmt1(r.baseline_visor_cond),
                fmt_delta(r.delta),
            ]
        })
        .collect();
    io::write_csv(
        &dir.join("per_relation.csv"),
        provenance,
        &["type", "relation", "images", "oa_images", "visor_images", "visor_cond", "baseline_visor_cond", "delta"],
        &rows,
    )?;
    written.push("per_relation.csv".to_string());
    let text = render_relation_table(&table);
    io::write_atomic(&dir.join("per_relation.txt"), |w| {
        w.write_all(text.as_bytes()).map_err(|e| Error::io(dir, e))
    })?;
    written.push("per_relation.txt".to_string());

    let bias = bias_table(report, baseline)?;
    let rows: Vec<Vec<String>> = bias
        .rows
        .iter()
        .flat_map(|row| {
            row.runs.iter().map(move |e| {
                vec![
                    e.run.clone(),
                    row.first.as_str().to_string(),
                    row.second.as_str().to_string(),
                    row.in_figure.to_string(),
                    fmt1(e.first_visor_cond),
                    fmt1(e.second_visor_cond),
                    fmt_delta(e.delta),
                ]
            })
        })
        .collect();
    io::write_csv(
        &dir.join("bias.csv"),
        provenance,
        &["run", "first", "second", "in_figure", "first_visor_cond", "second_visor_cond", "delta"],
        &rows,
    )?;
    written.push("bias.csv".to_string());

    if let Some(freq) = freq {
        let mut rows = Vec::new();
        let mut runs = vec![("model", report)];
        if let Some(b) = baseline {
            runs.push(("baseline", b));
        }
        for (name, r) in runs {
            for bin in frequency_correlation(r, freq, edges)?.bins {
                rows.push(vec![
                    name.to_string(),
                    bin.label,
                    bin.lo.to_string(),
                    bin.hi.map_or("inf".to_string(), |h| h.to_string()),
                    bin.triplets.to_string(),
                    bin.counts.oa.to_string(),
                    bin.counts.visor.to_string(),
                    fmt1(bin.visor_cond),
                ]);
            }
        }
        io::write_csv(
            &dir.join("frequency_bins.csv"),
            provenance,
            &["run", "bin", "lo", "hi", "triplets", "oa_images", "visor_images", "visor_cond"],
            &rows,
        )?;
        written.push("frequency_bins.csv".to_string());
    }
    Ok(written)
}
