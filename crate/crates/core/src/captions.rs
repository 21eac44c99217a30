//! Template captions for spatial triplets and their inverse parser.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Relation;
use crate::io::{self, Provenance};
use crate::labels::Vocabulary;
use crate::triplets::SpatialTriplet;

/// `(between subject and object, after object)` fragments of each template.
fn template(relation: Relation) -> (&'static str, &'static str) {
    use Relation::*;
    match relation {
        LeftOf => (" to the left of ", ""),
        RightOf => (" to the right of ", ""),
        Above => (" above ", ""),
        Below => (" below ", ""),
        Overlapping => (" overlapping ", ""),
        Separated => (" and ", " separated"),
        Surrounding => (" surrounding ", ""),
        Inside => (" inside of ", ""),
        Taller => (" taller than ", ""),
        Shorter => (" shorter than ", ""),
        Wider => (" wider than ", ""),
        Narrower => (" narrower than ", ""),
        Larger => (" larger than ", ""),
        Smaller => (" smaller than ", ""),
    }
}

/// Display form of the template with `<A>`/`<B>` slots.
pub fn template_text(relation: Relation) -> String {
    let (mid, tail) = template(relation);
    format!("<A>{mid}<B>{tail}.")
}

/// How object labels are rendered inside a caption.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArticleStyle {
    /// "a dog", "an apple" (initial-vowel rule).
    #[default]
    Indefinite,
    /// Bare label.
    Bare,
}

fn article_for(label: &str) -> &'static str {
    match label.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

fn noun_phrase(label: &str, style: ArticleStyle) -> String {
    match style {
        ArticleStyle::Indefinite => format!("{} {label}", article_for(label)),
        ArticleStyle::Bare => label.to_string(),
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

pub fn verbalize(t: &SpatialTriplet) -> String {
    verbalize_with(t, ArticleStyle::Indefinite)
}

pub fn verbalize_with(t: &SpatialTriplet, style: ArticleStyle) -> String {
    let (mid, tail) = template(t.relation);
    let body = format!(
        "{}{mid}{}{tail}.",
        noun_phrase(&t.subject, style),
        noun_phrase(&t.object, style)
    );
    capitalize(&body)
}

/// Recovers the label from a noun phrase, accepting either article style.
fn parse_phrase(phrase: &str, vocabulary: Option<&Vocabulary>) -> Option<String> {
    let known = |l: &str| vocabulary.map_or(!l.is_empty(), |v| v.contains(l));
    if vocabulary.is_some() && known(phrase) {
        return Some(phrase.to_string());
    }
    for article in ["a ", "an "] {
        if let Some(rest) = phrase.strip_prefix(article) {
            if article.trim() == article_for(rest) && known(rest) {
                return Some(rest.to_string());
            }
        }
    }
    (vocabulary.is_none() && !phrase.is_empty()).then(|| phrase.to_string())
}

/// Inverse of [`verbalize`] / [`verbalize_with`]. When a vocabulary is given,
/// both slots must resolve to known labels.
pub fn parse_caption(text: &str, vocabulary: Option<&Vocabulary>) -> Result<SpatialTriplet> {
    let err = || Error::Caption {
        text: text.to_string(),
        nearest: template_text(nearest_template(text)),
    };
    let body = text.strip_suffix('.').ok_or_else(err)?;
    let mut chars = body.chars();
    let body: String = match chars.next() {
        Some(first) => first.to_lowercase().chain(chars).collect(),
        None => return Err(err()),
    };

    let mut found = None;
    for relation in Relation::ALL {
        let (mid, tail) = template(relation);
        let Some(head) = body.strip_suffix(tail) else {
            continue;
        };
        for (pos, _) in head.match_indices(mid) {
            let (a, b) = (&head[..pos], &head[pos + mid.len()..]);
            if let (Some(s), Some(o)) = (parse_phrase(a, vocabulary), parse_phrase(b, vocabulary)) {
                let t = SpatialTriplet::new(s, relation, o);
                // only accept parses that reproduce the input text exactly
                if verbalize(&t) == text || verbalize_with(&t, ArticleStyle::Bare) == text {
                    found = Some(t);
                    break;
                }
            }
        }
        if found.is_some() {
            break;
        }
    }
    let t = found.ok_or_else(err)?;
    if t.subject == t.object {
        return Err(err());
    }
    Ok(t)
}

fn nearest_template(text: &str) -> Relation {
    let words: Vec<String> = text
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect();
    Relation::ALL
        .into_iter()
        .max_by_key(|r| {
            let (mid, tail) = template(*r);
            let fixed: Vec<&str> = mid.split_whitespace().chain(tail.split_whitespace()).collect();
            let hits = fixed.iter().filter(|w| words.iter().any(|x| x == *w)).count();
            // prefer more matching words, then fewer unmatched template words
            (hits, std::cmp::Reverse(fixed.len() - hits))
        })
        .expect("relations are non-empty")
}

/// One evaluation caption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub caption_id: String,
    pub subject: String,
    pub relation: Relation,
    pub object: String,
    pub text: String,
}

impl CaptionRecord {
    pub fn new(caption_id: impl Into<String>, triplet: &SpatialTriplet, style: ArticleStyle) -> Self {
        Self {
            caption_id: caption_id.into(),
            subject: triplet.subject.clone(),
            relation: triplet.relation,
            object: triplet.object.clone(),
            text: verbalize_with(triplet, style),
        }
    }

    pub fn triplet(&self) -> SpatialTriplet {
        SpatialTriplet::new(self.subject.clone(), self.relation, self.object.clone())
    }
}

/// Caption records `{prefix}-{n}` for `triplets` in order, or for a seeded
/// subset of `limit` of them (kept in input order).
pub fn caption_records(
    triplets: &[SpatialTriplet],
    prefix: &str,
    limit: Option<usize>,
    seed: u64,
    style: ArticleStyle,
) -> Result<Vec<CaptionRecord>> {
    let picked: Vec<usize> = match limit {
        Some(n) if n > triplets.len() => {
            return Err(Error::NotEnoughTriplets {
                requested: n,
                available: triplets.len(),
            })
        }
        Some(n) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = rand::seq::index::sample(&mut rng, triplets.len(), n).into_vec();
            idx.sort_unstable();
            idx
        }
        None => (0..triplets.len()).collect(),
    };
    Ok(picked
        .into_iter()
        .enumerate()
        .map(|(n, i)| CaptionRecord::new(format!("{prefix}-{n:05}"), &triplets[i], style))
        .collect())
}

pub fn write_caption_manifest(path: &Path, provenance: &Provenance, records: &[CaptionRecord]) -> Result<()> {
    io::write_jsonl(path, provenance, records)
}

/// Reads a caption manifest and checks that every text parses back to its triplet.
pub fn read_caption_manifest(path: &Path, vocabulary: Option<&Vocabulary>) -> Result<Vec<CaptionRecord>> {
    let (_, records): (_, Vec<CaptionRecord>) = io::read_jsonl(path)?;
    let mut ids = std::collections::HashSet::new();
    for rec in &records {
        if !ids.insert(rec.caption_id.as_str()) {
            return Err(Error::Schema(format!("duplicate caption id {}", rec.caption_id)));
        }
        let parsed = parse_caption(&rec.text, vocabulary)?;
        if parsed != rec.triplet() {
            return Err(Error::Schema(format!(
                "caption {}: text {:?} does not match triplet {}",
                rec.caption_id,
                rec.text,
                rec.triplet()
            )));
        }
    }
    Ok(records)
}
