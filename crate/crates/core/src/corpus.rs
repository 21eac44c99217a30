//! Streaming keyword counts of spatial-relation words in caption corpora.
//!
//! Matching is case-insensitive on whole words (runs of ASCII alphanumerics
//! or non-ASCII bytes). Counts are per caption: a caption mentioning "left"
//! three times adds one to `left_of`. No sense disambiguation is done, so
//! "right now" counts as `right_of`.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Relation;
use crate::io::Provenance;

/// Keywords per relation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationLexicon {
    entries: BTreeMap<Relation, Vec<String>>,
}

impl Default for RelationLexicon {
    fn default() -> Self {
        use Relation::*;
        let words = [
            (LeftOf, "left"),
            (RightOf, "right"),
            (Above, "above"),
            (Below, "below"),
            (Overlapping, "overlapping"),
            (Separated, "separated"),
            (Surrounding, "surrounding"),
            (Inside, "inside"),
            (Taller, "taller"),
            (Shorter, "shorter"),
            (Wider, "wider"),
            (Narrower, "narrower"),
            (Larger, "larger"),
            (Smaller, "smaller"),
        ];
        Self {
            entries: words.into_iter().map(|(r, w)| (r, vec![w.to_string()])).collect(),
        }
    }
}

impl RelationLexicon {
    pub fn new(entries: BTreeMap<Relation, Vec<String>>) -> Result<Self> {
        let mut owner: HashMap<&str, Relation> = HashMap::new();
        for (r, words) in &entries {
            for w in words {
                if w.trim().is_empty() || w.trim() != w {
                    return Err(Error::InvalidConfig(format!("empty or padded keyword {w:?} for {r}")));
                }
                if w.to_lowercase() != *w {
                    return Err(Error::InvalidConfig(format!("keyword {w:?} must be lowercase")));
                }
                if let Some(prev) = owner.insert(w, *r) {
                    return Err(Error::InvalidConfig(format!(
                        "keyword {w:?} listed for both {prev} and {r}"
                    )));
                }
            }
        }
        Ok(Self { entries })
    }

    /// JSON object mapping relation names to keyword lists.
    pub fn from_file(path: &Path) -> Result<Self> {
        let entries: BTreeMap<Relation, Vec<String>> = crate::io::read_json(path)?;
        Self::new(entries)
    }

    pub fn keywords(&self, r: Relation) -> &[String] {
        self.entries.get(&r).map_or(&[], Vec::as_slice)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total_captions: u64,
    pub captions_with_any_relation: u64,
    pub relation_counts: [u64; 14],
    /// Records skipped because they were not valid UTF-8 or lacked the column.
    pub invalid_records: u64,
}

impl CorpusStats {
    pub fn count(&self, r: Relation) -> u64 {
        self.relation_counts[r.index()]
    }

    pub fn merge(&mut self, other: &CorpusStats) {
        self.total_captions += other.total_captions;
        self.captions_with_any_relation += other.captions_with_any_relation;
        self.invalid_records += other.invalid_records;
        for (a, b) in self.relation_counts.iter_mut().zip(other.relation_counts) {
            *a += b;
        }
    }

    fn record(&mut self, mask: u16) {
        self.total_captions += 1;
        if mask != 0 {
            self.captions_with_any_relation += 1;
            for r in Relation::ALL {
                if mask & (1 << r.index()) != 0 {
                    self.relation_counts[r.index()] += 1;
                }
            }
        }
    }

    /// Percentage of captions with at least one relation keyword.
    pub fn relation_share(&self) -> Option<f64> {
        (self.total_captions > 0)
            .then(|| 100.0 * self.captions_with_any_relation as f64 / self.total_captions as f64)
    }
}

#[derive(Debug, Clone)]
struct Phrase {
    rest: Vec<Box<[u8]>>,
    mask: u16,
}

/// Compiled matcher for a lexicon.
#[derive(Debug, Clone)]
pub struct Scanner {
    single: HashMap<Box<[u8]>, u16>,
    phrases: HashMap<Box<[u8]>, Vec<Phrase>>,
    min_len: usize,
    max_len: usize,
    /// `(first byte, length)` combinations of any keyword's first token.
    prefilter: Vec<bool>,
}

const WORD_BYTE: [bool; 256] = {
    let mut t = [false; 256];
    let mut i = 0;
    while i < 256 {
        let b = i as u8;
        t[i] = b.is_ascii_alphanumeric() || b >= 0x80;
        i += 1;
    }
    t
};

fn is_word_byte(b: u8) -> bool {
    WORD_BYTE[b as usize]
}

fn split_words(text: &[u8], spans: &mut Vec<(usize, usize)>) {
    spans.clear();
    let mut i = 0;
    while i < text.len() {
        while i < text.len() && !is_word_byte(text[i]) {
            i += 1;
        }
        let start = i;
        while i < text.len() && is_word_byte(text[i]) {
            i += 1;
        }
        if i > start {
            spans.push((start, i));
        }
    }
}

impl Scanner {
    pub fn new(lexicon: &RelationLexicon) -> Self {
        let mut single: HashMap<Box<[u8]>, u16> = HashMap::new();
        let mut phrases: HashMap<Box<[u8]>, Vec<Phrase>> = HashMap::new();
        let mut spans = Vec::new();
        for (r, words) in &lexicon.entries {
            let bit = 1u16 << r.index();
            for w in words {
                split_words(w.as_bytes(), &mut spans);
                let mut toks = spans.iter().map(|&(s, e)| Box::<[u8]>::from(&w.as_bytes()[s..e]));
                let Some(first) = toks.next() else { continue };
                let rest: Vec<Box<[u8]>> = toks.collect();
                if rest.is_empty() {
                    *single.entry(first).or_insert(0) |= bit;
                } else {
                    phrases.entry(first).or_default().push(Phrase { rest, mask: bit });
                }
            }
        }
        let lens = single.keys().chain(phrases.keys()).map(|k| k.len());
        let min_len = lens.clone().min().unwrap_or(usize::MAX);
        let max_len = lens.max().unwrap_or(0);
        let mut prefilter = vec![false; 256 * (max_len + 1)];
        for k in single.keys().chain(phrases.keys()) {
            prefilter[k[0] as usize * (max_len + 1) + k.len()] = true;
        }
        Self {
            single,
            phrases,
            min_len,
            max_len,
            prefilter,
        }
    }

    /// Relation bitmask of one caption, `None` when it is not valid UTF-8.
    /// `buf` holds the lowercased candidate token between calls.
    pub fn caption_mask(&self, caption: &[u8], buf: &mut Vec<u8>, spans: &mut Vec<(usize, usize)>) -> Option<u16> {
        std::str::from_utf8(caption).ok()?;
        split_words(caption, spans);
        let mut mask = 0u16;
        for (i, &(s, e)) in spans.iter().enumerate() {
            let len = e - s;
            if len < self.min_len
                || len > self.max_len
                || !self.prefilter[caption[s].to_ascii_lowercase() as usize * (self.max_len + 1) + len]
            {
                continue;
            }
            buf.clear();
            buf.extend(caption[s..e].iter().map(u8::to_ascii_lowercase));
            let tok = &buf[..];
            if let Some(m) = self.single.get(tok) {
                mask |= m;
            }
            if let Some(list) = self.phrases.get(tok) {
                for p in list {
                    let follows = spans.len() > i + p.rest.len()
                        && p.rest
                            .iter()
                            .zip(&spans[i + 1..])
                            .all(|(want, &(a, b))| want.eq_ignore_ascii_case(&caption[a..b]));
                    if follows {
                        mask |= p.mask;
                    }
                }
            }
        }
        Some(mask)
    }

    pub fn scan_strs<'a, I: IntoIterator<Item = &'a str>>(&self, captions: I) -> CorpusStats {
        let mut stats = CorpusStats::default();
        let (mut buf, mut spans) = (Vec::new(), Vec::new());
        for c in captions {
            match self.caption_mask(c.as_bytes(), &mut buf, &mut spans) {
                Some(mask) => stats.record(mask),
                None => stats.invalid_records += 1,
            }
        }
        stats
    }

    /// Scans one caption per line; with `column` set, lines are tab-separated
    /// and only that zero-based column is read.
    pub fn scan_reader<R: Read>(&self, reader: R, column: Option<usize>) -> std::io::Result<CorpusStats> {
        let mut reader = BufReader::with_capacity(1 << 20, reader);
        let mut stats = CorpusStats::default();
        let (mut line, mut buf, mut spans) = (Vec::new(), Vec::new(), Vec::new());
        loop {
            line.clear();
            if reader.read_until(b'\n', &mut line)? == 0 {
                break;
            }
            let mut rec: &[u8] = &line;
            if let Some(stripped) = rec.strip_suffix(b"\n") {
                rec = stripped;
            }
            if let Some(stripped) = rec.strip_suffix(b"\r") {
                rec = stripped;
            }
            if let Some(col) = column {
                match rec.split(|&b| b == b'\t').nth(col) {
                    Some(field) => rec = field,
                    None => {
                        stats.invalid_records += 1;
                        continue;
                    }
                }
            }
            match self.caption_mask(rec, &mut buf, &mut spans) {
                Some(mask) => stats.record(mask),
                None => stats.invalid_records += 1,
            }
        }
        Ok(stats)
    }

    /// Scans files in parallel and merges their stats.
    pub fn scan_files(&self, paths: &[PathBuf], column: Option<usize>) -> Result<CorpusStats> {
        let parts: Vec<CorpusStats> = paths
            .par_iter()
            .map(|p| {
                let f = File::open(p).map_err(|e| Error::io(p, e))?;
                self.scan_reader(f, column).map_err(|e| Error::io(p, e))
            })
            .collect::<Result<_>>()?;
        let mut total = CorpusStats::default();
        for p in &parts {
            total.merge(p);
        }
        Ok(total)
    }
}

pub fn scan<'a, I: IntoIterator<Item = &'a str>>(captions: I, lexicon: &RelationLexicon) -> CorpusStats {
    Scanner::new(lexicon).scan_strs(captions)
}

/// Opposite pairs oriented as (preferred, opposite) for the appearance-ratio table.
pub const RATIO_PAIRS: [(Relation, Relation); 6] = [
    (Relation::RightOf, Relation::LeftOf),
    (Relation::Above, Relation::Below),
    (Relation::Inside, Relation::Surrounding),
    (Relation::Taller, Relation::Shorter),
    (Relation::Wider, Relation::Narrower),
    (Relation::Larger, Relation::Smaller),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub preferred: Relation,
    pub opposite: Relation,
    pub preferred_count: u64,
    pub opposite_count: u64,
    /// `preferred / opposite`; absent when the opposite count is zero.
    pub ratio: Option<f64>,
}

pub fn ratios(stats: &CorpusStats) -> Vec<RatioRow> {
    RATIO_PAIRS
        .iter()
        .map(|&(p, o)| {
            let (pc, oc) = (stats.count(p), stats.count(o));
            RatioRow {
                preferred: p,
                opposite: o,
                preferred_count: pc,
                opposite_count: oc,
                ratio: (oc > 0).then(|| pc as f64 / oc as f64),
            }
        })
        .collect()
}

/// Share of left/right among all relation occurrences (per-caption presence).
pub fn left_right_share(stats: &CorpusStats) -> Option<f64> {
    let total: u64 = stats.relation_counts.iter().sum();
    (total > 0).then(|| {
        100.0 * (stats.count(Relation::LeftOf) + stats.count(Relation::RightOf)) as f64 / total as f64
    })
}

/// Document written by the corpus scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub provenance: Provenance,
    pub counting_unit: String,
    pub total_captions: u64,
    pub captions_with_any_relation: u64,
    pub relation_share_percent: Option<f64>,
    pub left_right_share_percent: Option<f64>,
    pub relation_counts: BTreeMap<Relation, u64>,
    pub ratios: Vec<RatioRow>,
    pub invalid_records: u64,
}

impl CorpusReport {
    pub fn new(stats: &CorpusStats, provenance: Provenance) -> Self {
        Self {
            provenance,
            counting_unit: "caption_presence".into(),
            total_captions: stats.total_captions,
            captions_with_any_relation: stats.captions_with_any_relation,
            relation_share_percent: stats.relation_share(),
            left_right_share_percent: left_right_share(stats),
            relation_counts: Relation::ALL.iter().map(|r| (*r, stats.count(*r))).collect(),
            ratios: ratios(stats),
            invalid_records: stats.invalid_records,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_scan() {
        let s = scan(["a dog to the left of a cat", "a sunny beach"], &RelationLexicon::default());
        assert_eq!((s.total_captions, s.captions_with_any_relation), (2, 1));
        assert_eq!(s.count(Relation::LeftOf), 1);
    }

    #[test]
    fn presence_not_occurrences() {
        let s = scan(["LEFT left Left"], &RelationLexicon::default());
        assert_eq!(s.count(Relation::LeftOf), 1);
    }

    #[test]
    fn whole_words_only() {
        let s = scan(["a lefty pitcher", "leftover", "left-handed", "right."], &RelationLexicon::default());
        assert_eq!(s.count(Relation::LeftOf), 1);
        assert_eq!(s.count(Relation::RightOf), 1);
    }

    #[test]
    fn multiword_keywords() {
        let mut entries = BTreeMap::new();
        entries.insert(Relation::LeftOf, vec!["to the left of".to_string()]);
        entries.insert(Relation::Above, vec!["on top of".to_string(), "above".to_string()]);
        let lex = RelationLexicon::new(entries).unwrap();
        let s = scan(["A cat to the LEFT of a dog", "left of", "on top", "On top of it"], &lex);
        assert_eq!(s.count(Relation::LeftOf), 1);
        assert_eq!(s.count(Relation::Above), 1);
    }

    #[test]
    fn lexicon_validation() {
        let mut e = BTreeMap::new();
        e.insert(Relation::LeftOf, vec!["Left".to_string()]);
        assert!(RelationLexicon::new(e).is_err());
        let mut e = BTreeMap::new();
        e.insert(Relation::LeftOf, vec!["side".to_string()]);
        e.insert(Relation::RightOf, vec!["side".to_string()]);
        assert!(RelationLexicon::new(e).is_err());
    }

    #[test]
    fn invalid_utf8_and_columns() {
        let scanner = Scanner::new(&RelationLexicon::default());
        let data: &[u8] = b"id1\tcat above dog\nid2\t\xff\xfe\nid3\nid4\tplain\r\n";
        let s = scanner.scan_reader(data, Some(1)).unwrap();
        assert_eq!(s.total_captions, 2);
        assert_eq!(s.invalid_records, 2);
        assert_eq!(s.count(Relation::Above), 1);
    }

    #[test]
    fn ratio_examples() {
        let mut s = CorpusStats::default();
        s.relation_counts[Relation::Taller.index()] = 49_300;
        s.relation_counts[Relation::Shorter.index()] = 29_400;
        s.relation_counts[Relation::RightOf.index()] = 100;
        s.relation_counts[Relation::LeftOf.index()] = 50;
        s.relation_counts[Relation::Above.index()] = 7;
        let rows = ratios(&s);
        assert_eq!(rows[0].ratio, Some(2.0));
        assert_eq!(rows[1].ratio, None);
        assert_eq!(format!("{:.2}", rows[3].ratio.unwrap()), "1.68");
    }

    #[test]
    fn left_right_share_examples() {
        let mut s = CorpusStats::default();
        assert_eq!(left_right_share(&s), None);
        s.relation_counts[Relation::LeftOf.index()] = 5;
        s.relation_counts[Relation::RightOf.index()] = 5;
        assert_eq!(left_right_share(&s), Some(100.0));
        s.relation_counts[Relation::Above.index()] = 2;
        assert_eq!(format!("{:.1}", left_right_share(&s).unwrap()), "83.3");
    }
}
