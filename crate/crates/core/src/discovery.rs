//! DNS-style semantic names and capability lookup over a CMS view.
//!
//! A name is `<category>.<authority>/<label>[/<label>...]`, e.g.
//! `knowledge.gpt/arithmetic`. An advertisement matches a query when category
//! and authority are equal and the query path is a prefix of the advertised
//! path, so a query for `knowledge.gpt/arithmetic` also finds
//! `knowledge.gpt/arithmetic/modular`, but not the other way around.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::cms::{CmsEntry, CmsError, CmsStore, Payload, KEY_NODE_LOAD};
use crate::model::AgentId;

/// CMS key prefix under which advertisements are stored.
pub const SERVICE_KEY_PREFIX: &str = "svc:";

/// Default freshness horizon, in gossip rounds.
pub const DEFAULT_FRESHNESS_HORIZON: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Data,
    Computation,
    Knowledge,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Data => "data",
            Category::Computation => "computation",
            Category::Knowledge => "knowledge",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SemanticName {
    pub category: Category,
    pub authority: String,
    pub path: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NameErrorKind {
    #[error("unknown category `{0}` (expected data, computation or knowledge)")]
    UnknownCategory(String),
    #[error("expected `.` after the category")]
    MissingDot,
    #[error("empty label")]
    EmptyLabel,
    #[error("invalid character `{0}`")]
    InvalidChar(char),
    #[error("at least one path label is required")]
    MissingPath,
}

/// Parse failure with the byte offset where it was detected.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid semantic name at position {position}: {kind}")]
pub struct ParseNameError {
    pub position: usize,
    pub kind: NameErrorKind,
}

fn is_label_char(c: char) -> bool {
    c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '-'
}

/// Split `text` at the first occurrence of any of `stops`, validating the
/// label before it. `offset` is the label's position in the whole input.
fn take_label<'a>(text: &'a str, offset: usize, stops: &[char]) -> Result<(String, &'a str), ParseNameError> {
    let end = text.find(|c| stops.contains(&c)).unwrap_or(text.len());
    let raw = &text[..end];
    if raw.is_empty() {
        return Err(ParseNameError {
            position: offset,
            kind: NameErrorKind::EmptyLabel,
        });
    }
    let label = raw.to_ascii_lowercase();
    if let Some((i, c)) = label.char_indices().find(|&(_, c)| !is_label_char(c)) {
        return Err(ParseNameError {
            position: offset + i,
            kind: NameErrorKind::InvalidChar(c),
        });
    }
    Ok((label, &text[end..]))
}

/// Parse `category.authority/label/...`. ASCII letters are folded to lower
/// case, so the rendered form is canonical.
pub fn parse_name(text: &str) -> Result<SemanticName, ParseNameError> {
    let Some(dot) = text.find('.') else {
        return Err(ParseNameError {
            position: text.find('/').unwrap_or(text.len()),
            kind: NameErrorKind::MissingDot,
        });
    };
    let category = match text[..dot].to_ascii_lowercase().as_str() {
        "data" => Category::Data,
        "computation" => Category::Computation,
        "knowledge" => Category::Knowledge,
        other => {
            return Err(ParseNameError {
                position: 0,
                kind: NameErrorKind::UnknownCategory(other.to_string()),
            })
        }
    };
    let mut pos = dot + 1;
    let (authority, mut rest) = take_label(&text[pos..], pos, &['/'])?;
    pos += authority.len();
    if rest.is_empty() {
        return Err(ParseNameError {
            position: pos,
            kind: NameErrorKind::MissingPath,
        });
    }
    let mut path = Vec::new();
    while let Some(after) = rest.strip_prefix('/') {
        pos += 1;
        let (label, remainder) = take_label(after, pos, &['/'])?;
        pos += label.len();
        path.push(label);
        rest = remainder;
    }
    Ok(SemanticName {
        category,
        authority,
        path,
    })
}

impl SemanticName {
    /// `self` used as a query matches `other` as an advertisement.
    pub fn matches(&self, advertised: &SemanticName) -> bool {
        self.category == advertised.category
            && self.authority == advertised.authority
            && advertised.path.starts_with(&self.path)
    }

    pub fn service_key(&self) -> String {
        format!("{SERVICE_KEY_PREFIX}{self}")
    }
}

impl fmt::Display for SemanticName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.category, self.authority)?;
        for label in &self.path {
            write!(f, "/{label}")?;
        }
        Ok(())
    }
}

impl FromStr for SemanticName {
    type Err = ParseNameError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_name(s)
    }
}

impl Serialize for SemanticName {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SemanticName {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_name(&text).map_err(serde::de::Error::custom)
    }
}

/// A capability an agent offers, as stored in the CMS.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Advertisement {
    pub agent_id: AgentId,
    pub name: SemanticName,
    /// Free-form descriptive metadata, e.g. embedding domain or dimensionality.
    pub attributes: BTreeMap<String, String>,
    pub stamp: u64,
}

impl Advertisement {
    /// Decode an advertisement from a CMS entry; `None` if the entry is not
    /// one.
    pub fn from_entry(entry: &CmsEntry) -> Option<Advertisement> {
        let name = parse_name(entry.key.strip_prefix(SERVICE_KEY_PREFIX)?).ok()?;
        let attributes = serde_json::from_str(entry.payload.as_text()?).ok()?;
        Some(Advertisement {
            agent_id: entry.agent_id,
            name,
            attributes,
            stamp: entry.stamp,
        })
    }
}

/// Publish `name` for the store's owner.
pub fn advertise(
    store: &mut CmsStore,
    name: &SemanticName,
    attributes: BTreeMap<String, String>,
) -> Result<Advertisement, CmsError> {
    let payload = serde_json::to_string(&attributes).expect("string map serializes");
    let entry = store.put_local(&name.service_key(), Payload::Text(payload))?;
    Ok(Advertisement {
        agent_id: entry.agent_id,
        name: name.clone(),
        attributes,
        stamp: entry.stamp,
    })
}

/// Every advertisement visible in `view`.
pub fn advertisements(view: &CmsStore) -> impl Iterator<Item = Advertisement> + '_ {
    view.entries().filter_map(Advertisement::from_entry)
}

/// Advertised names of one agent.
pub fn capabilities_of(view: &CmsStore, agent: AgentId) -> Vec<SemanticName> {
    advertisements(view)
        .filter(|a| a.agent_id == agent)
        .map(|a| a.name)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub agent_id: AgentId,
    pub advertisement: Advertisement,
    pub fresh: bool,
    /// Advertised `node.load`, if the agent publishes one.
    pub load: Option<f64>,
}

/// Agents advertising a match for `query`, best first: fresh before stale,
/// then lower advertised load (unknown load last), then lower agent id.
pub fn resolve(query: &SemanticName, view: &CmsStore, freshness_horizon: u64) -> Vec<Candidate> {
    let now = view.clock();
    let mut found: Vec<Candidate> = advertisements(view)
        .filter(|ad| query.matches(&ad.name))
        .map(|ad| Candidate {
            agent_id: ad.agent_id,
            fresh: now.saturating_sub(ad.stamp) <= freshness_horizon,
            load: view.get(ad.agent_id, KEY_NODE_LOAD).and_then(|e| e.payload.as_number()),
            advertisement: ad,
        })
        .collect();
    found.sort_by(|a, b| {
        b.fresh
            .cmp(&a.fresh)
            .then_with(|| {
                a.load
                    .unwrap_or(f64::INFINITY)
                    .total_cmp(&b.load.unwrap_or(f64::INFINITY))
            })
            .then(a.agent_id.cmp(&b.agent_id))
            .then_with(|| a.advertisement.name.cmp(&b.advertisement.name))
    });
    found
}
