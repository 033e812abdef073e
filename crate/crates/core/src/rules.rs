//! Declarative routing rules.
//!
//! Rules are conjunctions of field matchers with one action. `pre` rules run
//! before classification and can only assign; `post` rules see the predicted
//! group and may assign, remap one group to another, or resolve a zone
//! placeholder from ticket metadata. Evaluation order is `(priority, name)`
//! and the first matching rule wins.
//!
//! Rule documents are JSON:
//!
//! ```json
//! {"rules": [
//!   {"name": "vpn_tail", "priority": 10, "stage": "pre",
//!    "conditions": [{"field": "body", "matcher_kind": "regex", "value": "(?i)vpn token"}],
//!    "action": {"kind": "assign", "args": {"group": "VPN_SUPPORT"}}}
//! ]}
//! ```
//!
//! `field` is `subject`, `body`, `predicted_group` or `metadata.<key>`;
//! `matcher_kind` is `regex`, `exact` or `member_of` (with a list value).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingestion::Ticket;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pre,
    Post,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Field {
    Subject,
    Body,
    Metadata(String),
    PredictedGroup,
}

impl Field {
    fn parse(s: &str) -> Option<Field> {
        match s {
            "subject" => Some(Field::Subject),
            "body" => Some(Field::Body),
            "predicted_group" => Some(Field::PredictedGroup),
            _ => s.strip_prefix("metadata.").filter(|k| !k.is_empty()).map(|k| Field::Metadata(k.into())),
        }
    }

    fn name(&self) -> String {
        match self {
            Field::Subject => "subject".into(),
            Field::Body => "body".into(),
            Field::PredictedGroup => "predicted_group".into(),
            Field::Metadata(k) => format!("metadata.{k}"),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Matcher {
    Regex(Regex),
    Exact(String),
    MemberOf(BTreeSet<String>),
}

impl Matcher {
    fn matches(&self, value: &str) -> bool {
        match self {
            Matcher::Regex(re) => re.is_match(value),
            Matcher::Exact(s) => s == value,
            Matcher::MemberOf(set) => set.contains(value),
        }
    }
}

impl PartialEq for Matcher {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Matcher::Regex(a), Matcher::Regex(b)) => a.as_str() == b.as_str(),
            (Matcher::Exact(a), Matcher::Exact(b)) => a == b,
            (Matcher::MemberOf(a), Matcher::MemberOf(b)) => a == b,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub field: Field,
    pub matcher: Matcher,
}

impl Condition {
    fn matches(&self, ticket: &Ticket, predicted: Option<&str>) -> bool {
        let value = match &self.field {
            Field::Subject => Some(ticket.subject.as_str()),
            Field::Body => Some(ticket.body.as_str()),
            Field::Metadata(k) => ticket.metadata.get(k).map(String::as_str),
            Field::PredictedGroup => predicted,
        };
        value.is_some_and(|v| self.matcher.matches(v))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "args", rename_all = "snake_case")]
pub enum Action {
    Assign {
        group: String,
    },
    Remap {
        from: String,
        to: String,
    },
    ResolveZone {
        /// Zone placeholder label this rule resolves.
        zone: String,
        metadata_key: String,
        locations: BTreeMap<String, String>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub name: String,
    pub priority: i64,
    pub stage: Stage,
    pub conditions: Vec<Condition>,
    pub action: Action,
}

impl Rule {
    fn conditions_hold(&self, ticket: &Ticket, predicted: Option<&str>) -> bool {
        self.conditions.iter().all(|c| c.matches(ticket, predicted))
    }
}

/// Rules in evaluation order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RuleSet {
    rules: Vec<Rule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum ConditionValue {
    One(String),
    Many(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ConditionDoc {
    field: String,
    matcher_kind: String,
    value: ConditionValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RuleDoc {
    name: String,
    #[serde(default)]
    priority: i64,
    stage: Stage,
    conditions: Vec<ConditionDoc>,
    action: Action,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RuleFile {
    Wrapped { rules: Vec<RuleDoc> },
    List(Vec<RuleDoc>),
}

#[derive(Serialize)]
struct RuleFileOut<'a> {
    rules: &'a [RuleDoc],
}

fn invalid(rule: &str, message: impl Into<String>) -> Error {
    Error::InvalidRule { rule: rule.into(), message: message.into() }
}

fn compile_condition(rule: &str, i: usize, doc: &ConditionDoc) -> Result<Condition> {
    let field = Field::parse(&doc.field)
        .ok_or_else(|| invalid(rule, format!("condition {i}: unknown field {:?}", doc.field)))?;
    let matcher = match (doc.matcher_kind.as_str(), &doc.value) {
        ("regex", ConditionValue::One(p)) => Matcher::Regex(Regex::new(p).map_err(|e| Error::RulePattern {
            rule: rule.into(),
            message: format!("condition {i}: {e}"),
        })?),
        ("exact", ConditionValue::One(s)) => Matcher::Exact(s.clone()),
        ("member_of", ConditionValue::Many(v)) => Matcher::MemberOf(v.iter().cloned().collect()),
        ("member_of", ConditionValue::One(s)) => Matcher::MemberOf(BTreeSet::from([s.clone()])),
        (kind, _) => {
            return Err(invalid(rule, format!("condition {i}: bad matcher {kind:?} for this value")));
        }
    };
    Ok(Condition { field, matcher })
}

fn compile_rule(doc: &RuleDoc) -> Result<Rule> {
    let name = doc.name.as_str();
    if name.is_empty() {
        return Err(invalid(name, "empty rule name"));
    }
    if doc.conditions.is_empty() {
        return Err(invalid(name, "a rule needs at least one condition"));
    }
    let conditions = doc
        .conditions
        .iter()
        .enumerate()
        .map(|(i, c)| compile_condition(name, i, c))
        .collect::<Result<Vec<_>>>()?;
    if doc.stage == Stage::Pre {
        if conditions.iter().any(|c| c.field == Field::PredictedGroup) {
            return Err(invalid(name, "predicted_group conditions are only valid at stage post"));
        }
        if !matches!(doc.action, Action::Assign { .. }) {
            return Err(invalid(name, "pre-stage rules can only assign"));
        }
    }
    Ok(Rule { name: name.into(), priority: doc.priority, stage: doc.stage, conditions, action: doc.action.clone() })
}

fn to_doc(rule: &Rule) -> RuleDoc {
    RuleDoc {
        name: rule.name.clone(),
        priority: rule.priority,
        stage: rule.stage,
        conditions: rule
            .conditions
            .iter()
            .map(|c| {
                let (kind, value) = match &c.matcher {
                    Matcher::Regex(re) => ("regex", ConditionValue::One(re.as_str().into())),
                    Matcher::Exact(s) => ("exact", ConditionValue::One(s.clone())),
                    Matcher::MemberOf(set) => ("member_of", ConditionValue::Many(set.iter().cloned().collect())),
                };
                ConditionDoc { field: c.field.name(), matcher_kind: kind.into(), value }
            })
            .collect(),
        action: rule.action.clone(),
    }
}

impl RuleSet {
    pub fn new(rules: Vec<Rule>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &rules {
            if !seen.insert(r.name.as_str()) {
                return Err(Error::DuplicateRule(r.name.clone()));
            }
        }
        let mut rules = rules;
        rules.sort_by(|a, b| (a.priority, &a.name).cmp(&(b.priority, &b.name)));
        Ok(RuleSet { rules })
    }

    pub fn empty() -> Self {
        RuleSet::default()
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Union of two rule sets; names must stay unique.
    pub fn merged(self, other: RuleSet) -> Result<RuleSet> {
        let mut rules = self.rules;
        rules.extend(other.rules);
        RuleSet::new(rules)
    }

    fn stage(&self, stage: Stage) -> impl Iterator<Item = &Rule> {
        self.rules.iter().filter(move |r| r.stage == stage)
    }

    /// Canonical JSON form: sorted rules, normalized matchers.
    pub fn to_document(&self) -> String {
        let docs: Vec<RuleDoc> = self.rules.iter().map(to_doc).collect();
        serde_json::to_string_pretty(&RuleFileOut { rules: &docs }).expect("rule documents serialize")
    }
}

pub fn parse_rules(document: &str) -> Result<RuleSet> {
    if document.trim().is_empty() {
        return Ok(RuleSet::empty());
    }
    let file: RuleFile =
        serde_json::from_str(document).map_err(|e| Error::Malformed(format!("rule document: {e}")))?;
    let docs = match file {
        RuleFile::Wrapped { rules } | RuleFile::List(rules) => rules,
    };
    let rules = docs.iter().map(compile_rule).collect::<Result<Vec<_>>>()?;
    RuleSet::new(rules)
}

pub fn load_rules(path: impl AsRef<Path>) -> Result<RuleSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_rules(&text)
}

/// Loads and merges several rule files.
pub fn load_rule_files<P: AsRef<Path>>(paths: &[P]) -> Result<RuleSet> {
    paths.iter().try_fold(RuleSet::empty(), |acc, p| acc.merged(load_rules(p)?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreHit {
    pub group: String,
    pub rule: String,
}

/// First pre-stage rule whose conditions all hold.
pub fn evaluate_pre(ticket: &Ticket, rules: &RuleSet) -> Option<PreHit> {
    rules.stage(Stage::Pre).find(|r| r.conditions_hold(ticket, None)).map(|r| match &r.action {
        Action::Assign { group } => PreHit { group: group.clone(), rule: r.name.clone() },
        _ => unreachable!("pre rules are validated to assign"),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostOutcome {
    pub group: String,
    pub confidence: f64,
    pub overridden: bool,
    /// Name of the rule that matched, if any.
    pub rule: Option<String>,
    /// Set when a zone rule matched but the location had no mapping.
    pub unresolved: bool,
    /// Set when the rule was an `assign`.
    pub assigned: bool,
}

/// Applies the first applicable post-stage rule to a predicted group.
///
/// A rule applies when its conditions hold and its action is relevant to the
/// prediction: `remap` needs the predicted group to equal `from`, and
/// `resolve_zone` needs it to equal the zone placeholder.
pub fn evaluate_post(ticket: &Ticket, predicted: (&str, f64), rules: &RuleSet) -> PostOutcome {
    let (group, confidence) = predicted;
    let mut out = PostOutcome {
        group: group.to_string(),
        confidence,
        overridden: false,
        rule: None,
        unresolved: false,
        assigned: false,
    };
    for rule in rules.stage(Stage::Post) {
        let relevant = match &rule.action {
            Action::Assign { .. } => true,
            Action::Remap { from, .. } => from == group,
            Action::ResolveZone { zone, .. } => zone == group,
        };
        if !relevant || !rule.conditions_hold(ticket, Some(group)) {
            continue;
        }
        out.rule = Some(rule.name.clone());
        match &rule.action {
            Action::Assign { group } => {
                out.group = group.clone();
                out.confidence = 1.0;
                out.overridden = true;
                out.assigned = true;
            }
            Action::Remap { to, .. } => {
                out.group = to.clone();
                out.overridden = true;
            }
            Action::ResolveZone { metadata_key, locations, .. } => {
                match ticket.metadata.get(metadata_key).and_then(|loc| locations.get(loc)) {
                    Some(target) => {
                        out.group = target.clone();
                        out.overridden = true;
                    }
                    None => out.unresolved = true,
                }
            }
        }
        break;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const VPN: &str = r#"{"rules":[{"name":"vpn_tail","priority":10,"stage":"pre",
        "conditions":[{"field":"body","matcher_kind":"regex","value":"(?i)vpn token"}],
        "action":{"kind":"assign","args":{"group":"VPN_SUPPORT"}}}]}"#;

    #[test]
    fn empty_document() {
        assert!(parse_rules("").unwrap().is_empty());
        assert!(parse_rules("{\"rules\":[]}").unwrap().is_empty());
    }

    #[test]
    fn single_pre_rule() {
        let set = parse_rules(VPN).unwrap();
        assert_eq!(set.len(), 1);
        let r = &set.rules()[0];
        assert_eq!(r.name, "vpn_tail");
        assert_eq!(r.priority, 10);
        assert_eq!(r.stage, Stage::Pre);
        assert_eq!(r.conditions[0].field, Field::Body);
        assert!(matches!(&r.conditions[0].matcher, Matcher::Regex(re) if re.as_str() == "(?i)vpn token"));
        assert_eq!(r.action, Action::Assign { group: "VPN_SUPPORT".into() });

        let t = Ticket::new("t", "", "my VPN token expired");
        assert_eq!(evaluate_pre(&t, &set), Some(PreHit { group: "VPN_SUPPORT".into(), rule: "vpn_tail".into() }));
        assert_eq!(evaluate_pre(&Ticket::new("t", "printer", "jam"), &set), None);
    }

    #[test]
    fn duplicate_names_rejected() {
        let doc = format!("[{0},{0}]", &VPN[10..VPN.len() - 2]);
        assert!(matches!(parse_rules(&doc), Err(Error::DuplicateRule(n)) if n == "vpn_tail"));
    }

    #[test]
    fn bad_pattern_names_rule() {
        let doc = VPN.replace("(?i)vpn token", "(unclosed");
        match parse_rules(&doc) {
            Err(Error::RulePattern { rule, message }) => {
                assert_eq!(rule, "vpn_tail");
                assert!(message.contains("condition 0"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stage_restrictions() {
        let zone_pre = r#"[{"name":"z","stage":"pre","conditions":[{"field":"subject","matcher_kind":"regex","value":"x"}],
            "action":{"kind":"resolve_zone","args":{"zone":"Z","metadata_key":"loc","locations":{}}}}]"#;
        assert!(matches!(parse_rules(zone_pre), Err(Error::InvalidRule { .. })));
        let predicted_pre = r#"[{"name":"p","stage":"pre","conditions":[{"field":"predicted_group","matcher_kind":"exact","value":"A"}],
            "action":{"kind":"assign","args":{"group":"B"}}}]"#;
        assert!(matches!(parse_rules(predicted_pre), Err(Error::InvalidRule { .. })));
        let no_cond = r#"[{"name":"n","stage":"post","conditions":[],"action":{"kind":"assign","args":{"group":"B"}}}]"#;
        assert!(matches!(parse_rules(no_cond), Err(Error::InvalidRule { .. })));
    }

    #[test]
    fn priority_then_name_order() {
        let doc = r#"[
          {"name":"b","priority":20,"stage":"pre","conditions":[{"field":"body","matcher_kind":"regex","value":"x"}],"action":{"kind":"assign","args":{"group":"B"}}},
          {"name":"z","priority":10,"stage":"pre","conditions":[{"field":"body","matcher_kind":"regex","value":"x"}],"action":{"kind":"assign","args":{"group":"Z"}}},
          {"name":"a","priority":20,"stage":"pre","conditions":[{"field":"body","matcher_kind":"regex","value":"x"}],"action":{"kind":"assign","args":{"group":"A"}}}
        ]"#;
        let set = parse_rules(doc).unwrap();
        let names: Vec<_> = set.rules().iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["z", "a", "b"]);
        assert_eq!(evaluate_pre(&Ticket::new("t", "", "x"), &set).unwrap().group, "Z");
    }

    fn zone_rules() -> RuleSet {
        parse_rules(
            r#"[{"name":"desk_zone","priority":5,"stage":"post",
                "conditions":[{"field":"predicted_group","matcher_kind":"exact","value":"DESK_ZONE"}],
                "action":{"kind":"resolve_zone","args":{"zone":"DESK_ZONE","metadata_key":"user_location",
                          "locations":{"east":"DESK_EAST","west":"DESK_WEST"}}}},
               {"name":"hw_template","priority":1,"stage":"post",
                "conditions":[{"field":"subject","matcher_kind":"regex","value":"^New Hardware Request"},
                              {"field":"predicted_group","matcher_kind":"member_of","value":["HW_A","HW_B"]}],
                "action":{"kind":"assign","args":{"group":"HW_TEMPLATES"}}},
               {"name":"rename","priority":9,"stage":"post",
                "conditions":[{"field":"body","matcher_kind":"regex","value":"."}],
                "action":{"kind":"remap","args":{"from":"OLD_GROUP","to":"NEW_GROUP"}}}]"#,
        )
        .unwrap()
    }

    #[test]
    fn zone_resolution() {
        let t = Ticket::new("t", "desk", "monitor broken").with_meta("user_location", "east");
        let out = evaluate_post(&t, ("DESK_ZONE", 0.8), &zone_rules());
        assert_eq!((out.group.as_str(), out.confidence, out.overridden), ("DESK_EAST", 0.8, true));

        let t = Ticket::new("t", "desk", "monitor broken").with_meta("user_location", "mars");
        let out = evaluate_post(&t, ("DESK_ZONE", 0.8), &zone_rules());
        assert_eq!((out.group.as_str(), out.overridden, out.unresolved), ("DESK_ZONE", false, true));
    }

    #[test]
    fn pass_through_and_template_override() {
        let t = Ticket::new("t", "network slow", "vpn");
        let out = evaluate_post(&t, ("NET_T1", 0.9), &zone_rules());
        assert_eq!((out.group.as_str(), out.confidence, out.overridden), ("NET_T1", 0.9, false));

        let t = Ticket::new("t", "New Hardware Request - laptop", "form");
        let out = evaluate_post(&t, ("HW_A", 0.7), &zone_rules());
        assert_eq!((out.group.as_str(), out.confidence, out.overridden), ("HW_TEMPLATES", 1.0, true));

        let out = evaluate_post(&t, ("OLD_GROUP", 0.4), &zone_rules());
        assert_eq!((out.group.as_str(), out.confidence), ("NEW_GROUP", 0.4));
    }

    #[test]
    fn empty_ruleset_is_identity() {
        let out = evaluate_post(&Ticket::new("t", "a", "b"), ("G", 0.33), &RuleSet::empty());
        assert_eq!((out.group.as_str(), out.confidence, out.overridden), ("G", 0.33, false));
    }

    #[test]
    fn canonical_document_round_trips() {
        let set = zone_rules();
        let again = parse_rules(&set.to_document()).unwrap();
        assert_eq!(set, again);
    }

    #[test]
    fn missing_metadata_never_matches() {
        let set = parse_rules(
            r#"[{"name":"m","stage":"pre","conditions":[{"field":"metadata.user_location","matcher_kind":"exact","value":"east"}],
                "action":{"kind":"assign","args":{"group":"E"}}}]"#,
        )
        .unwrap();
        assert_eq!(evaluate_pre(&Ticket::new("t", "a", "b"), &set), None);
        let t = Ticket::new("t", "a", "b").with_meta("user_location", "east");
        assert_eq!(evaluate_pre(&t, &set).unwrap().group, "E");
    }
}
