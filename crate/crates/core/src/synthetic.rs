//! Seeded synthetic helpdesk corpus.
//!
//! Forty resolver groups with a heavy head and a Zipf tail. Two merge
//! families are built in: the `NET_T*` escalation tiers and the `DESK_*`
//! location groups, which share one text distribution and differ only in the
//! `user_location` metadata. Tail application groups carry a unique product
//! token, and part of the hardware tickets use a shared request template that
//! only the `device_type` metadata disambiguates.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingestion::Ticket;
use crate::preprocessing::{MergeFamily, MergeKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_tickets: usize,
    /// Share of tickets in the eight large original groups.
    pub head_share: f64,
    /// Probability that a ticket's text is drawn from another head group.
    pub label_noise: f64,
    /// Share of hardware tickets written with the shared request template.
    pub template_share: f64,
    /// Share of short tickets with little topical vocabulary.
    pub vague_share: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig { n_tickets: 20_000, head_share: 0.986, label_noise: 0.05, template_share: 0.3, vague_share: 0.1, seed: 0 }
    }
}

#[derive(Clone, Copy)]
enum Topic {
    Access,
    Email,
    Network,
    Desktop,
    Laptop,
    Sap,
    Desk,
    App(&'static str),
}

struct Group {
    label: &'static str,
    topic: Topic,
    location: Option<&'static str>,
}

const fn g(label: &'static str, topic: Topic) -> Group {
    Group { label, topic, location: None }
}

const fn desk(label: &'static str, loc: &'static str) -> Group {
    Group { label, topic: Topic::Desk, location: Some(loc) }
}

/// Head groups by decreasing weight.
const HEAD: [(Group, f64); 8] = [
    (g("ACCESS_MGMT", Topic::Access), 0.24),
    (g("EMAIL_SUPPORT", Topic::Email), 0.17),
    (g("NET_T1", Topic::Network), 0.15),
    (g("HW_DESKTOP", Topic::Desktop), 0.10),
    (g("HW_LAPTOP", Topic::Laptop), 0.10),
    (g("SAP_FINANCE", Topic::Sap), 0.09),
    (desk("DESK_EAST", "east"), 0.08),
    (desk("DESK_WEST", "west"), 0.07),
];

/// Tail groups by Zipf rank.
const TAIL: [Group; 32] = [
    g("NET_T2", Topic::Network),
    desk("DESK_NORTH", "north"),
    g("NET_T3", Topic::Network),
    desk("DESK_SOUTH", "south"),
    g("APP_VISIO", Topic::App("visio")),
    g("APP_AUTOCAD", Topic::App("autocad")),
    g("APP_MATLAB", Topic::App("matlab")),
    g("APP_TABLEAU", Topic::App("tableau")),
    g("APP_JIRA", Topic::App("jira")),
    g("APP_CONFLUENCE", Topic::App("confluence")),
    g("APP_SALESFORCE", Topic::App("salesforce")),
    g("APP_ZOOM", Topic::App("zoom")),
    g("APP_WEBEX", Topic::App("webex")),
    g("APP_SHAREPOINT", Topic::App("sharepoint")),
    g("APP_ORACLE", Topic::App("oracle")),
    g("APP_POSTGRES", Topic::App("postgres")),
    g("APP_DOCKER", Topic::App("docker")),
    g("APP_KUBERNETES", Topic::App("kubernetes")),
    g("APP_JENKINS", Topic::App("jenkins")),
    g("APP_GITLAB", Topic::App("gitlab")),
    g("APP_SPLUNK", Topic::App("splunk")),
    g("APP_SERVICENOW", Topic::App("servicenow")),
    g("APP_WORKDAY", Topic::App("workday")),
    g("APP_CONCUR", Topic::App("concur")),
    g("APP_PHOTOSHOP", Topic::App("photoshop")),
    g("APP_ILLUSTRATOR", Topic::App("illustrator")),
    g("APP_ACROBAT", Topic::App("acrobat")),
    g("APP_SOLIDWORKS", Topic::App("solidworks")),
    g("APP_LABVIEW", Topic::App("labview")),
    g("APP_SPSS", Topic::App("spss")),
    g("APP_STATA", Topic::App("stata")),
    g("APP_QUICKBOOKS", Topic::App("quickbooks")),
];

pub const LOCATIONS: [&str; 4] = ["east", "west", "north", "south"];

const FILLER: &[&str] = &[
    "the", "to", "and", "please", "my", "is", "for", "it", "not", "hi", "thanks", "on", "in", "we", "can", "this",
    "help", "issue", "with", "have", "since", "today", "again", "still", "need", "could", "you", "team", "be",
    "working", "from", "of", "at", "our", "that", "been", "after", "morning", "urgent", "problem", "when", "trying",
    "getting", "error", "message", "user", "office", "regards", "kindly", "check", "look", "into", "has", "will",
    "also", "just", "now", "asap", "yesterday", "best", "update", "status", "some", "all", "any", "hello", "thank",
];

fn topic_words(topic: Topic) -> (&'static [&'static str], &'static [&'static str]) {
    const HARDWARE: &[&str] = &["replace", "broken", "order", "approval", "device", "model", "warranty", "spare", "screen", "power"];
    const CONNECT: &[&str] = &["remote", "connect", "access", "portal", "sign"];
    const APPS: &[&str] = &["license", "install", "crash", "plugin", "version", "upgrade", "software", "launch"];
    match topic {
        Topic::Access => (
            &["password", "reset", "locked", "account", "login", "credentials", "mfa", "authenticator", "expired", "unlock", "permission", "sso", "username"],
            CONNECT,
        ),
        Topic::Email => (
            &["outlook", "mailbox", "inbox", "email", "calendar", "invite", "attachment", "distribution", "spam", "quota", "signature", "mail", "shared"],
            &["sync", "folder", "send", "receive"],
        ),
        Topic::Network => (
            &["vpn", "wifi", "network", "connection", "dropped", "latency", "ethernet", "switch", "dns", "proxy", "slow", "disconnect", "bandwidth"],
            CONNECT,
        ),
        Topic::Desktop => (
            &["desktop", "tower", "workstation", "monitor", "keyboard", "mouse", "fan", "gpu", "bios", "pc"],
            HARDWARE,
        ),
        Topic::Laptop => (
            &["laptop", "battery", "charger", "notebook", "hinge", "trackpad", "lid", "adapter", "dock", "thinkpad"],
            HARDWARE,
        ),
        Topic::Sap => (
            &["sap", "invoice", "posting", "ledger", "vendor", "purchase", "cost", "center", "finance", "fiori", "transaction", "payment", "budget"],
            &["report", "approval", "order", "period"],
        ),
        Topic::Desk => (
            &["desk", "printer", "toner", "phone", "headset", "setup", "move", "cubicle", "onsite", "visit", "cable", "projector", "badge"],
            &["floor", "room", "building", "meeting"],
        ),
        Topic::App(_) => (&["application", "tool", "vendor", "seat"], APPS),
    }
}

/// Prefix of the asset, mailbox or order identifiers that show up in tickets
/// of a topic.
fn code_prefix(topic: Topic) -> &'static str {
    match topic {
        Topic::Access => "acct",
        Topic::Email => "mbx",
        Topic::Network => "sw",
        Topic::Desktop => "ws",
        Topic::Laptop => "nb",
        Topic::Sap => "po",
        Topic::Desk => "rm",
        Topic::App(_) => "lic",
    }
}

const CODES_PER_TOPIC: u32 = 300;

fn subjects(topic: Topic) -> &'static [&'static str] {
    match topic {
        Topic::Access => &["Password reset", "Account locked out", "Cannot log in", "MFA not working"],
        Topic::Email => &["Outlook problem", "Mailbox full", "Calendar invite issue", "Email not syncing"],
        Topic::Network => &["VPN keeps dropping", "Wifi issue", "Network slow", "No connection"],
        Topic::Desktop => &["Desktop not starting", "Monitor flickering", "Workstation issue"],
        Topic::Laptop => &["Laptop battery", "Laptop not charging", "Notebook screen issue"],
        Topic::Sap => &["SAP posting error", "Invoice stuck", "Vendor master change"],
        Topic::Desk => &["Desk move", "Printer jam", "Phone setup", "Onsite visit needed"],
        Topic::App(_) => &["Software issue", "License request", "Application crash"],
    }
}

const GENERIC_SUBJECTS: &[&str] = &["Help needed", "Urgent", "Issue", "Request", "Question", "Problem at work"];
pub const TEMPLATE_SUBJECT: &str = "New Hardware Request";
const TEMPLATE_BODY: &str = "Please fill in the form below. Requested by: employee. Cost center: see profile. \
Business justification: replacement of current device. Delivery: standard.";

/// Original group labels, head first.
pub fn labels() -> Vec<&'static str> {
    HEAD.iter().map(|(g, _)| g.label).chain(TAIL.iter().map(|g| g.label)).collect()
}

/// Product token and label of every tail application group.
pub fn tail_products() -> Vec<(&'static str, &'static str)> {
    TAIL.iter()
        .filter_map(|g| match g.topic {
            Topic::App(p) => Some((p, g.label)),
            _ => None,
        })
        .collect()
}

pub fn merge_families() -> Vec<MergeFamily> {
    vec![
        MergeFamily {
            merged_label: "NET_T1".into(),
            members: vec!["NET_T1".into(), "NET_T2".into(), "NET_T3".into()],
            kind: MergeKind::Escalation,
        },
        MergeFamily {
            merged_label: "DESK_ZONE".into(),
            members: ["DESK_EAST", "DESK_WEST", "DESK_NORTH", "DESK_SOUTH"].map(String::from).to_vec(),
            kind: MergeKind::Zone,
        },
    ]
}

/// Largest-remainder allocation of `n` over `weights`, at least one each
/// when `n` allows.
fn allocate(n: usize, weights: &[f64]) -> Vec<usize> {
    let k = weights.len();
    let floor = if n >= k { 1 } else { 0 };
    let rest = n - floor * k;
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / total * rest as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = rest - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.partial_cmp(&ra).expect("finite").then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts.iter().map(|c| c + floor).collect()
}

/// Ticket count per original label.
pub fn label_counts(config: &SyntheticConfig) -> BTreeMap<&'static str, usize> {
    let head_w: Vec<f64> = HEAD.iter().map(|(_, w)| w * config.head_share).collect();
    let h_tail: f64 = (1..=TAIL.len()).map(|r| 1.0 / r as f64).sum();
    let tail_w = (1..=TAIL.len()).map(|r| (1.0 - config.head_share) / (r as f64 * h_tail));
    let weights: Vec<f64> = head_w.into_iter().chain(tail_w).collect();
    labels().into_iter().zip(allocate(config.n_tickets, &weights)).collect()
}

fn group(label: &str) -> &'static Group {
    HEAD.iter().map(|(g, _)| g).chain(TAIL.iter()).find(|g| g.label == label).expect("known label")
}

struct Writer {
    filler: WeightedIndex<f64>,
}

impl Writer {
    fn words(&self, topic: Topic, len: usize, signal: f64, rng: &mut ChaCha8Rng) -> Vec<String> {
        let (own, shared) = topic_words(topic);
        let mut out = Vec::with_capacity(len + 3);
        if let Topic::App(product) = topic {
            out.push(product.to_string());
        }
        for _ in 0..len {
            let r: f64 = rng.gen();
            let w = if r < 0.22 * signal {
                own.choose(rng)
            } else if r < 0.32 * signal {
                shared.choose(rng)
            } else {
                FILLER.get(self.filler.sample(rng))
            };
            out.push(w.expect("non-empty word list").to_string());
        }
        if rng.gen_bool(if signal < 1.0 { 0.7 } else { 0.3 }) {
            let code = format!("{}{:04}", code_prefix(topic), rng.gen_range(0..CODES_PER_TOPIC));
            let at = rng.gen_range(0..=out.len());
            out.insert(at, code);
        }
        if let Topic::App(product) = topic {
            if rng.gen_bool(0.5) {
                out.push(product.to_string());
            }
        }
        out
    }

    fn ticket(&self, id: String, gold: &Group, cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Ticket {
        let head_topics: Vec<Topic> = HEAD.iter().map(|(g, _)| g.topic).collect();
        let is_hw = matches!(gold.topic, Topic::Desktop | Topic::Laptop);
        let location = gold.location.unwrap_or_else(|| LOCATIONS.choose(rng).expect("locations"));
        let mut t;
        if is_hw && rng.gen_bool(cfg.template_share) {
            let device = if matches!(gold.topic, Topic::Laptop) { "laptop" } else { "desktop" };
            t = Ticket::new(id, TEMPLATE_SUBJECT, TEMPLATE_BODY)
                .with_meta("form", "hardware_request")
                .with_meta("device_type", device);
        } else {
            let topic = if rng.gen_bool(cfg.label_noise) && !matches!(gold.topic, Topic::App(_)) {
                *head_topics.choose(rng).expect("head topics")
            } else {
                gold.topic
            };
            let vague = rng.gen_bool(cfg.vague_share);
            let subject = if vague || rng.gen_bool(0.2) {
                GENERIC_SUBJECTS.choose(rng)
            } else {
                subjects(topic).choose(rng)
            };
            let (len, signal) = if vague { (rng.gen_range(4..=10), 0.25) } else { (6 + (rng.gen::<f64>().powi(2) * 80.0) as usize, 1.0) };
            let body = self.words(topic, len, signal, rng).join(" ");
            t = Ticket::new(id, *subject.expect("subjects"), body);
        }
        t = t.with_meta("user_location", location).with_gold(gold.label);
        t
    }
}

pub fn generate(config: &SyntheticConfig) -> Vec<Ticket> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut labels: Vec<&'static str> =
        label_counts(config).into_iter().flat_map(|(l, n)| std::iter::repeat(l).take(n)).collect();
    labels.shuffle(&mut rng);
    let zipf: Vec<f64> = (1..=FILLER.len()).map(|r| 1.0 / r as f64).collect();
    let writer = Writer { filler: WeightedIndex::new(zipf).expect("positive weights") };
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| writer.ticket(format!("T{:06}", i + 1), group(l), config, &mut rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingestion::TicketCorpus;
    use crate::preprocessing::{apply_merge, build_merge_map, split_long_tail};

    #[test]
    fn allocation_sums_and_floors() {
        let c = allocate(100, &[5.0, 1.0, 0.001]);
        assert_eq!(c.iter().sum::<usize>(), 100);
        assert!(c.iter().all(|&x| x >= 1));
        assert_eq!(allocate(2, &[1.0, 1.0, 1.0]).iter().sum::<usize>(), 2);
    }

    #[test]
    fn forty_labels_all_present() {
        let counts = label_counts(&SyntheticConfig::default());
        assert_eq!(counts.len(), 40);
        assert!(counts.values().all(|&c| c >= 1));
        assert_eq!(counts.values().sum::<usize>(), 20_000);
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SyntheticConfig { n_tickets: 300, seed: 9, ..Default::default() };
        assert_eq!(generate(&cfg), generate(&cfg));
        let other = generate(&SyntheticConfig { seed: 10, ..cfg });
        assert_ne!(generate(&cfg), other);
    }

    #[test]
    fn long_tail_shape_after_merge() {
        let tickets = generate(&SyntheticConfig { n_tickets: 20_000, seed: 1, ..Default::default() });
        let map = build_merge_map(&merge_families()).unwrap();
        let merged = apply_merge(&TicketCorpus::new(tickets), &map);
        assert_eq!(merged.label_set().len(), 35);
        let split = split_long_tail(&merged, 0.98, 0.2).unwrap();
        assert_eq!(split.head_labels.len(), 7);
        assert!(split.retained_fraction >= 0.98);
        assert!(split.group_cap_met);
    }

    #[test]
    fn desk_groups_carry_location() {
        let tickets = generate(&SyntheticConfig { n_tickets: 2_000, seed: 2, ..Default::default() });
        for t in tickets.iter().filter(|t| t.gold_group.as_deref().is_some_and(|g| g.starts_with("DESK_"))) {
            let loc = &t.metadata["user_location"];
            assert_eq!(t.gold_group.as_deref().unwrap(), format!("DESK_{}", loc.to_uppercase()));
        }
    }
}
