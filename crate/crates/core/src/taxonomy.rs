//! Private-object categories, the ecosystem nodes they map onto, and the PII
//! types each category can expose.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::risk::{normalize_id, EcosystemGraph, ScoreVector};

const DEFAULT_TABLE: &str = include_str!("../data/categories.json");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaxonomyError {
    #[error("duplicate category `{0}`")]
    DuplicateCategory(String),
    #[error("category `{category}` lists `{entry}` twice")]
    DuplicateEntry { category: String, entry: String },
    #[error("category name must not be empty")]
    EmptyName,
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("unsupported category table format `{0}` (expected .json)")]
    UnknownFormat(String),
    #[error("threshold must be finite, got {0}")]
    BadThreshold(f64),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrivateCategory {
    pub name: String,
    pub synonym_nodes: Vec<String>,
    pub pii_types: Vec<String>,
}

/// Categories keyed by normalized name. Insertion order is kept for output.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryTable {
    categories: Vec<PrivateCategory>,
    by_name: BTreeMap<String, usize>,
}

impl CategoryTable {
    pub fn new(categories: Vec<PrivateCategory>) -> Result<Self, TaxonomyError> {
        let mut by_name = BTreeMap::new();
        for (i, cat) in categories.iter().enumerate() {
            let key = normalize_id(&cat.name);
            if key.is_empty() {
                return Err(TaxonomyError::EmptyName);
            }
            for list in [&cat.synonym_nodes, &cat.pii_types] {
                let mut seen = BTreeSet::new();
                for entry in list {
                    if !seen.insert(normalize_id(entry)) {
                        return Err(TaxonomyError::DuplicateEntry {
                            category: cat.name.clone(),
                            entry: entry.clone(),
                        });
                    }
                }
            }
            if by_name.insert(key, i).is_some() {
                return Err(TaxonomyError::DuplicateCategory(cat.name.clone()));
            }
        }
        Ok(Self { categories, by_name })
    }

    /// The bundled table of the 17 dataset categories.
    pub fn bundled() -> Self {
        Self::from_json(DEFAULT_TABLE).expect("bundled category table is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, TaxonomyError> {
        let cats: Vec<PrivateCategory> =
            serde_json::from_str(text).map_err(|e| TaxonomyError::Parse(e.to_string()))?;
        Self::new(cats)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.categories).expect("categories serialize")
    }

    pub fn get(&self, name: &str) -> Option<&PrivateCategory> {
        self.by_name.get(&normalize_id(name)).map(|&i| &self.categories[i])
    }

    pub fn require(&self, name: &str) -> Result<&PrivateCategory, TaxonomyError> {
        self.get(name)
            .ok_or_else(|| TaxonomyError::UnknownCategory(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &PrivateCategory> {
        self.categories.iter()
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }
}

/// Load a category table from a `.json` file.
pub fn load_table(path: &Path) -> Result<CategoryTable, TaxonomyError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    if ext != "json" {
        return Err(TaxonomyError::UnknownFormat(ext));
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| TaxonomyError::Io(format!("{}: {e}", path.display())))?;
    CategoryTable::from_json(&text)
}

/// Synonym nodes of `category` that exist in `graph`, normalized.
pub fn resolve_synonyms(
    table: &CategoryTable,
    graph: &EcosystemGraph,
    category: &str,
) -> Result<Vec<String>, TaxonomyError> {
    let cat = table.require(category)?;
    Ok(cat
        .synonym_nodes
        .iter()
        .map(|s| normalize_id(s))
        .filter(|s| graph.contains(s))
        .collect())
}

/// How PII types without a score are treated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnscoredPolicy {
    /// Leave them out of the high-risk set (logged).
    #[default]
    Exclude,
    /// Treat them as high-risk.
    Include,
}

/// `H_r(c)`: the PII types of a category whose score reaches the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighRiskSet {
    pub category: String,
    pub members: BTreeSet<String>,
    pub threshold: f64,
    pub score_source: String,
    /// PII types of the category absent from the score vector.
    pub unscored: Vec<String>,
}

impl HighRiskSet {
    pub fn contains(&self, pii: &str) -> bool {
        self.members.contains(&normalize_id(pii))
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

pub fn high_risk_for_category(
    table: &CategoryTable,
    scores: &ScoreVector,
    category: &str,
    threshold: f64,
    unscored_policy: UnscoredPolicy,
) -> Result<HighRiskSet, TaxonomyError> {
    if !threshold.is_finite() {
        return Err(TaxonomyError::BadThreshold(threshold));
    }
    let cat = table.require(category)?;
    let mut members = BTreeSet::new();
    let mut unscored = Vec::new();
    for pii in &cat.pii_types {
        let id = normalize_id(pii);
        match scores.scores.get(&id) {
            Some(&s) if s >= threshold => {
                members.insert(id);
            }
            Some(_) => {}
            None => {
                tracing::warn!(category = %cat.name, pii = %id, "PII type has no risk score");
                if unscored_policy == UnscoredPolicy::Include {
                    members.insert(id.clone());
                }
                unscored.push(id);
            }
        }
    }
    Ok(HighRiskSet {
        category: cat.name.clone(),
        members,
        threshold,
        score_source: scores.source_tag(),
        unscored,
    })
}

/// Default threshold: the 60th percentile of every node's score.
pub fn default_threshold(scores: &ScoreVector) -> f64 {
    scores.percentile(60.0).unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk::{Channel, ScoreKind};
    use proptest::prelude::*;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn scores(pairs: &[(&str, f64)]) -> ScoreVector {
        ScoreVector {
            algorithm: ScoreKind::PagerankStandard,
            channel: Channel::Frequency,
            scores: pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            converged: true,
            iterations: 1,
        }
    }

    fn card_table() -> CategoryTable {
        CategoryTable::new(vec![PrivateCategory {
            name: "card".into(),
            synonym_nodes: vec!["credit card".into()],
            pii_types: vec!["name".into(), "signature".into()],
        }])
        .unwrap()
    }

    #[test]
    fn bundled_rows() {
        let t = CategoryTable::bundled();
        assert_eq!(t.len(), 17);
        let letter = t.get("Letter  with Address").unwrap();
        assert_eq!(
            letter.pii_types.iter().cloned().collect::<BTreeSet<_>>(),
            set(&["address", "name", "phone number", "signature"])
        );
        assert_eq!(t.get("tattoo sleeve").unwrap().pii_types, vec!["biometric data"]);
        assert!(t.get("pregnancy test box").unwrap().pii_types.is_empty());
        let card = t.get("credit or debit card").unwrap();
        assert_eq!(
            card.pii_types,
            vec![
                "bank card expiration date",
                "credit card number",
                "cvv code",
                "debit card number",
                "name",
                "signature"
            ]
        );
        assert_eq!(t.get("bank statement").unwrap().pii_types.len(), 16);
    }

    #[test]
    fn duplicate_names_rejected() {
        let cat = PrivateCategory {
            name: "x".into(),
            synonym_nodes: vec![],
            pii_types: vec![],
        };
        let mut other = cat.clone();
        other.name = " X ".into();
        assert!(matches!(
            CategoryTable::new(vec![cat, other]),
            Err(TaxonomyError::DuplicateCategory(_))
        ));
    }

    #[test]
    fn non_json_rejected() {
        let err = load_table(Path::new("table.yaml")).unwrap_err();
        assert!(matches!(err, TaxonomyError::UnknownFormat(_)));
    }

    #[test]
    fn bundled_round_trip() {
        let t = CategoryTable::bundled();
        assert_eq!(CategoryTable::from_json(&t.to_json()).unwrap(), t);
    }

    #[test]
    fn threshold_semantics() {
        let t = card_table();
        let s = scores(&[("name", 0.9), ("signature", 0.2)]);
        let hr = high_risk_for_category(&t, &s, "card", 0.5, UnscoredPolicy::Exclude).unwrap();
        assert_eq!(hr.members, set(&["name"]));
        let hr = high_risk_for_category(&t, &s, "card", 1.5, UnscoredPolicy::Exclude).unwrap();
        assert!(hr.is_empty());
        let hr = high_risk_for_category(&t, &s, "card", 0.0, UnscoredPolicy::Exclude).unwrap();
        assert_eq!(hr.members, set(&["name", "signature"]));
    }

    #[test]
    fn unscored_policy() {
        let t = card_table();
        let s = scores(&[("name", 0.9)]);
        let hr = high_risk_for_category(&t, &s, "card", 0.5, UnscoredPolicy::Exclude).unwrap();
        assert_eq!(hr.members, set(&["name"]));
        assert_eq!(hr.unscored, vec!["signature"]);
        let hr = high_risk_for_category(&t, &s, "card", 0.5, UnscoredPolicy::Include).unwrap();
        assert_eq!(hr.members, set(&["name", "signature"]));
    }

    #[test]
    fn unknown_category() {
        let s = scores(&[("name", 0.9)]);
        assert!(high_risk_for_category(&card_table(), &s, "nope", 0.5, UnscoredPolicy::Exclude).is_err());
        assert!(high_risk_for_category(&card_table(), &s, "card", f64::NAN, UnscoredPolicy::Exclude).is_err());
    }

    #[test]
    fn synonyms_resolve_against_toy_graph() {
        let graph = EcosystemGraph::build(&crate::risk::toy_ecosystem_records()).unwrap();
        let t = CategoryTable::bundled();
        assert_eq!(resolve_synonyms(&t, &graph, "letter with address").unwrap(), vec!["mail"]);
        assert!(resolve_synonyms(&t, &graph, "condom box").unwrap().is_empty());
        let news = EcosystemGraph::build(&crate::risk::news_story_records()).unwrap();
        assert!(resolve_synonyms(&t, &news, "letter with address").unwrap().is_empty());
        assert!(resolve_synonyms(&t, &news, "no such thing").is_err());
    }

    proptest! {
        #[test]
        fn monotone_in_threshold(a in 0.0f64..1.0, b in 0.0f64..1.0, n in 0.0f64..1.0, sig in 0.0f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let t = card_table();
            let s = scores(&[("name", n), ("signature", sig)]);
            let low = high_risk_for_category(&t, &s, "card", lo, UnscoredPolicy::Exclude).unwrap();
            let high = high_risk_for_category(&t, &s, "card", hi, UnscoredPolicy::Exclude).unwrap();
            prop_assert!(high.members.is_subset(&low.members));
            let allowed = set(&["name", "signature"]);
            prop_assert!(low.members.is_subset(&allowed));
        }
    }
}
