//! Resolver-group level noise reduction and text normalization.
//!
//! Related groups are merged before training: escalation tiers collapse to
//! their default tier, and location-specific groups collapse to a zone
//! placeholder that the rule engine resolves after classification. The
//! low-frequency long tail is then carved off so only the head is trained.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingestion::TicketCorpus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeKind {
    /// Tiered variants of one group; the merged label is the default tier.
    Escalation,
    /// Location-specific groups; the merged label is a new placeholder.
    Zone,
}

/// One entry of the merge configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeFamily {
    pub merged_label: String,
    pub members: Vec<String>,
    pub kind: MergeKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeMap {
    entries: BTreeMap<String, String>,
    zone_labels: BTreeSet<String>,
}

impl MergeMap {
    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    pub fn zone_labels(&self) -> &BTreeSet<String> {
        &self.zone_labels
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Label the classifier is trained on.
    pub fn map_label<'a>(&'a self, label: &'a str) -> &'a str {
        self.entries.get(label).map_or(label, String::as_str)
    }

    /// Label a correct initial assignment carries: escalation tiers collapse
    /// to the default tier, zone members stay as they are because the rule
    /// engine resolves placeholders back to them.
    pub fn initial_assignment_label<'a>(&'a self, label: &'a str) -> &'a str {
        match self.entries.get(label) {
            Some(target) if !self.zone_labels.contains(target) => target,
            _ => label,
        }
    }
}

pub fn build_merge_map(families: &[MergeFamily]) -> Result<MergeMap> {
    let mut map = MergeMap::default();
    for fam in families {
        if fam.kind == MergeKind::Zone {
            map.zone_labels.insert(fam.merged_label.clone());
        }
        for member in &fam.members {
            if *member == fam.merged_label {
                continue;
            }
            if let Some(prev) = map.entries.get(member) {
                if *prev != fam.merged_label {
                    return Err(Error::MergeConflict(format!(
                        "{member} is mapped to both {prev} and {}",
                        fam.merged_label
                    )));
                }
            }
            map.entries.insert(member.clone(), fam.merged_label.clone());
        }
    }
    for target in map.entries.values() {
        if map.entries.contains_key(target) {
            return Err(Error::MergeConflict(format!(
                "merged label {target} is itself merged into {}",
                map.entries[target]
            )));
        }
    }
    Ok(map)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MergeDocument {
    List(Vec<MergeFamily>),
    Wrapped { families: Vec<MergeFamily> },
}

/// Reads merge families from a JSON document (a list, or `{"families": [..]}`)
/// or from JSON lines with one family per line.
pub fn load_merge_config(path: impl AsRef<Path>) -> Result<Vec<MergeFamily>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_merge_config(&text).map_err(|m| Error::Malformed(format!("{}: {m}", path.display())))
}

pub fn parse_merge_config(text: &str) -> std::result::Result<Vec<MergeFamily>, String> {
    if let Ok(doc) = serde_json::from_str::<MergeDocument>(text) {
        return Ok(match doc {
            MergeDocument::List(f) | MergeDocument::Wrapped { families: f } => f,
        });
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

pub fn apply_merge(corpus: &TicketCorpus, map: &MergeMap) -> TicketCorpus {
    let tickets = corpus
        .tickets()
        .iter()
        .cloned()
        .map(|mut t| {
            if let Some(g) = &t.gold_group {
                if let Some(target) = map.entries.get(g) {
                    t.gold_group = Some(target.clone());
                }
            }
            t
        })
        .collect();
    TicketCorpus::new(tickets)
}

/// Partition of the label set into a trainable head and a rule-handled tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTailSplit {
    pub head_labels: BTreeSet<String>,
    pub tail_labels: BTreeSet<String>,
    pub retained_fraction: f64,
    pub group_fraction: f64,
    /// False when reaching the retention target needed more than the allowed
    /// share of groups. Retention wins in that case.
    pub group_cap_met: bool,
}

pub fn split_long_tail(
    corpus: &TicketCorpus,
    min_retained: f64,
    max_group_fraction: f64,
) -> Result<LongTailSplit> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if let Some(t) = corpus.tickets().iter().find(|t| t.gold_group.is_none()) {
        return Err(Error::MissingGold(t.id.clone()));
    }
    split_counts(&corpus.label_counts(), min_retained, max_group_fraction)
}

/// Frequency cut over a label histogram.
pub fn split_counts(
    counts: &BTreeMap<String, usize>,
    min_retained: f64,
    max_group_fraction: f64,
) -> Result<LongTailSplit> {
    for (name, v) in [("min_retained", min_retained), ("max_group_fraction", max_group_fraction)] {
        if !(v > 0.0 && v <= 1.0) {
            return Err(Error::InvalidConfig(format!("{name} must lie in (0, 1], got {v}")));
        }
    }
    let total: usize = counts.values().sum();
    if total == 0 {
        return Err(Error::EmptyCorpus);
    }
    let mut ranked: Vec<(&String, usize)> = counts.iter().map(|(l, &c)| (l, c)).collect();
    // BTreeMap iteration is already lexicographic, so a stable sort keeps
    // label order within equal frequencies.
    ranked.sort_by(|a, b| b.1.cmp(&a.1));

    let mut cumulative = 0usize;
    let mut head_len = ranked.len();
    for (i, (_, c)) in ranked.iter().enumerate() {
        cumulative += c;
        if cumulative as f64 / total as f64 >= min_retained {
            head_len = i + 1;
            break;
        }
    }
    let head_labels: BTreeSet<String> = ranked[..head_len].iter().map(|(l, _)| (*l).clone()).collect();
    let tail_labels: BTreeSet<String> = ranked[head_len..].iter().map(|(l, _)| (*l).clone()).collect();
    let retained: usize = ranked[..head_len].iter().map(|(_, c)| c).sum();
    let group_fraction = head_len as f64 / ranked.len() as f64;
    let group_cap_met = head_len as f64 <= max_group_fraction * ranked.len() as f64;
    if !group_cap_met {
        log::warn!(
            "long-tail cut keeps {head_len} of {} groups, above the {:.0}% cap",
            ranked.len(),
            max_group_fraction * 100.0
        );
    }
    Ok(LongTailSplit {
        head_labels,
        tail_labels,
        retained_fraction: retained as f64 / total as f64,
        group_fraction,
        group_cap_met,
    })
}

/// Lowercased alphanumeric tokens of `subject + " " + body`, at least two
/// characters long, in order.
pub fn normalize_text(subject: &str, body: &str) -> Vec<String> {
    let text = format!("{subject} {body}").to_lowercase();
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|tok| tok.chars().count() >= 2)
        .map(str::to_string)
        .collect()
}
