use std::collections::{BTreeMap, BTreeSet, HashSet};

use log::warn;
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{tokenize, CorpusError, Label, RawArticle};

/// Journalist-curated list a domain annotation comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ListName {
    #[serde(rename = "OS")]
    Os,
    #[serde(rename = "MBFC")]
    Mbfc,
    #[serde(rename = "POLITIFACT")]
    Politifact,
}

impl std::str::FromStr for ListName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "OS" | "OPENSOURCES" => Ok(ListName::Os),
            "MBFC" => Ok(ListName::Mbfc),
            "POLITIFACT" => Ok(ListName::Politifact),
            other => Err(format!("unknown source list `{other}`")),
        }
    }
}

impl std::fmt::Display for ListName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ListName::Os => "OS",
            ListName::Mbfc => "MBFC",
            ListName::Politifact => "POLITIFACT",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceListEntry {
    pub domain: String,
    #[serde(rename = "list")]
    pub list_name: ListName,
    #[serde(rename = "category")]
    pub raw_category: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapTo {
    Real,
    Fake,
    Drop,
}

/// `(list, category) -> real | fake | drop`. A `"*"` category is the
/// fallback for that list; a list without one rejects unknown categories.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMapping {
    rules: BTreeMap<ListName, BTreeMap<String, MapTo>>,
}

impl Default for LabelMapping {
    fn default() -> Self {
        let mut rules: BTreeMap<ListName, BTreeMap<String, MapTo>> = BTreeMap::new();
        let os = rules.entry(ListName::Os).or_default();
        os.insert("reliable".into(), MapTo::Real);
        for c in ["fake", "bias", "hate", "satire", "conspiracy"] {
            os.insert(c.into(), MapTo::Fake);
        }
        os.insert("*".into(), MapTo::Drop);
        let pf = rules.entry(ListName::Politifact).or_default();
        pf.insert("some fake stories".into(), MapTo::Drop);
        pf.insert("*".into(), MapTo::Fake);
        let mbfc = rules.entry(ListName::Mbfc).or_default();
        mbfc.insert("high".into(), MapTo::Real);
        mbfc.insert("low".into(), MapTo::Fake);
        mbfc.insert("medium".into(), MapTo::Drop);
        Self { rules }
    }
}

impl LabelMapping {
    pub fn empty() -> Self {
        Self { rules: BTreeMap::new() }
    }

    pub fn set(&mut self, list: ListName, category: &str, to: MapTo) {
        self.rules
            .entry(list)
            .or_default()
            .insert(category.trim().to_lowercase(), to);
    }

    /// Parses a TOML table per list:
    ///
    /// ```toml
    /// [OS]
    /// reliable = "real"
    /// "*" = "drop"
    /// ```
    pub fn from_toml_str(s: &str) -> Result<Self, CorpusError> {
        let raw: BTreeMap<String, BTreeMap<String, MapTo>> =
            toml::from_str(s).map_err(|e| CorpusError::Config(e.to_string()))?;
        let mut mapping = Self::empty();
        for (list, cats) in raw {
            let list: ListName = list.parse().map_err(CorpusError::Config)?;
            for (cat, to) in cats {
                mapping.set(list, &cat, to);
            }
        }
        Ok(mapping)
    }

    pub fn resolve(&self, list: ListName, category: &str) -> Result<MapTo, CorpusError> {
        let key = category.trim().to_lowercase();
        let rules = self.rules.get(&list);
        rules
            .and_then(|r| r.get(&key).or_else(|| r.get("*")))
            .copied()
            .ok_or_else(|| CorpusError::Config(format!("no mapping for category `{category}` on list {list}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainVerdict {
    pub domain: String,
    pub label: Label,
    pub supporting_lists: BTreeSet<ListName>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainConflict {
    pub domain: String,
    pub labels: Vec<(ListName, Label)>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeOutcome {
    pub verdicts: Vec<DomainVerdict>,
    pub conflicts: Vec<DomainConflict>,
    /// Entries whose category maps to `drop`.
    pub dropped_entries: usize,
}

/// Lowercases and strips a scheme, a leading `www.` and any path.
pub fn normalize_domain(domain: &str) -> String {
    let d = domain.trim().to_lowercase();
    let d = d
        .strip_prefix("https://")
        .or_else(|| d.strip_prefix("http://"))
        .unwrap_or(&d);
    let d = d.split('/').next().unwrap_or(d);
    d.strip_prefix("www.").unwrap_or(d).to_string()
}

/// Maps each list entry to a label and keeps only domains whose labels agree
/// across every list that labels them.
pub fn merge_source_lists(entries: &[SourceListEntry], mapping: &LabelMapping) -> Result<MergeOutcome, CorpusError> {
    let mut seen: BTreeMap<(String, ListName), String> = BTreeMap::new();
    let mut labels: BTreeMap<String, Vec<(ListName, Label)>> = BTreeMap::new();
    let mut dropped = 0;
    for e in entries {
        let domain = normalize_domain(&e.domain);
        let category = e.raw_category.trim().to_lowercase();
        if let Some(prev) = seen.get(&(domain.clone(), e.list_name)) {
            if *prev != category {
                return Err(CorpusError::Config(format!(
                    "domain {domain} listed twice on {} with categories `{prev}` and `{category}`",
                    e.list_name
                )));
            }
            continue;
        }
        seen.insert((domain.clone(), e.list_name), category);
        match mapping.resolve(e.list_name, &e.raw_category)? {
            MapTo::Drop => dropped += 1,
            MapTo::Real => labels.entry(domain).or_default().push((e.list_name, Label::Real)),
            MapTo::Fake => labels.entry(domain).or_default().push((e.list_name, Label::Fake)),
        }
    }
    let mut out = MergeOutcome {
        dropped_entries: dropped,
        ..Default::default()
    };
    for (domain, mut ls) in labels {
        ls.sort();
        let first = ls[0].1;
        if ls.iter().all(|(_, l)| *l == first) {
            out.verdicts.push(DomainVerdict {
                domain,
                label: first,
                supporting_lists: ls.iter().map(|(n, _)| *n).collect(),
            });
        } else {
            warn!("excluding {domain}: conflicting labels {ls:?}");
            out.conflicts.push(DomainConflict { domain, labels: ls });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub max_per_domain: usize,
    pub min_words: usize,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            max_per_domain: 100,
            min_words: 30,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub articles: Vec<RawArticle>,
    pub unknown_domain: usize,
    pub too_short: usize,
    /// Surviving article count per domain, sorted by domain.
    pub per_domain: BTreeMap<String, usize>,
}

/// Projects each domain's label onto its articles, drops articles shorter
/// than `min_words` tokens, then keeps a seeded uniform sample of at most
/// `max_per_domain` articles per domain. Output is grouped by domain (sorted)
/// and keeps input order within a domain.
pub fn project_and_sample(articles: &[RawArticle], verdicts: &[DomainVerdict], cfg: &SampleConfig) -> SampleOutcome {
    let labels: BTreeMap<&str, Label> = verdicts.iter().map(|v| (v.domain.as_str(), v.label)).collect();
    let mut by_domain: BTreeMap<String, Vec<&RawArticle>> = BTreeMap::new();
    let mut out = SampleOutcome::default();
    for a in articles {
        let Some(domain) = a.domain.as_deref().map(normalize_domain) else {
            log::debug!("article {} has no domain; skipped", a.id);
            out.unknown_domain += 1;
            continue;
        };
        if !labels.contains_key(domain.as_str()) {
            log::debug!("article {} from unlabeled domain {domain}; skipped", a.id);
            out.unknown_domain += 1;
            continue;
        }
        let words = tokenize(&a.text).map(|d| d.len()).unwrap_or(0);
        if words < cfg.min_words {
            out.too_short += 1;
            continue;
        }
        by_domain.entry(domain).or_default().push(a);
    }
    if out.unknown_domain > 0 {
        warn!("{} articles skipped for a missing or unlabeled domain", out.unknown_domain);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for (domain, pool) in by_domain {
        let label = labels[domain.as_str()];
        let mut picked: Vec<usize> = if pool.len() > cfg.max_per_domain {
            index::sample(&mut rng, pool.len(), cfg.max_per_domain).into_vec()
        } else {
            (0..pool.len()).collect()
        };
        picked.sort_unstable();
        out.per_domain.insert(domain.clone(), picked.len());
        for i in picked {
            let mut a = pool[i].clone();
            a.label = Some(label);
            a.domain = Some(domain.clone());
            out.articles.push(a);
        }
    }
    out
}

/// Stratified split. The validation part has `round(val_fraction * len)`
/// articles; per-class quotas use largest remainders. Both parts keep the
/// input order.
pub fn split_train_val(
    corpus: &[RawArticle],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<RawArticle>, Vec<RawArticle>), CorpusError> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(CorpusError::Config(format!("validation fraction {val_fraction} outside [0, 1)")));
    }
    let mut classes: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for (i, a) in corpus.iter().enumerate() {
        let label = a
            .label
            .ok_or_else(|| CorpusError::Stratification(format!("article {} is unlabeled", a.id)))?;
        classes.entry(label).or_default().push(i);
    }
    for (label, members) in &classes {
        if members.len() < 2 {
            return Err(CorpusError::Stratification(format!(
                "class {label} has {} article(s); need at least 2",
                members.len()
            )));
        }
    }
    let total = (val_fraction * corpus.len() as f64).round() as usize;
    let exact: Vec<(Label, f64)> = classes
        .iter()
        .map(|(l, m)| (*l, val_fraction * m.len() as f64))
        .collect();
    let mut quota: BTreeMap<Label, usize> = exact.iter().map(|(l, e)| (*l, e.floor() as usize)).collect();
    let mut remaining = total.saturating_sub(quota.values().sum());
    let mut by_remainder = exact.clone();
    by_remainder.sort_by(|a, b| (b.1 - b.1.floor()).total_cmp(&(a.1 - a.1.floor())).then(a.0.cmp(&b.0)));
    for (l, _) in by_remainder.iter().cycle() {
        if remaining == 0 {
            break;
        }
        *quota.get_mut(l).expect("class present") += 1;
        remaining -= 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_val = vec![false; corpus.len()];
    for (label, members) in &classes {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        for &i in shuffled.iter().take(quota[label]) {
            in_val[i] = true;
        }
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (a, v) in corpus.iter().zip(in_val) {
        if v {
            val.push(a.clone());
        } else {
            train.push(a.clone());
        }
    }
    Ok((train, val))
}

/// Builds the test part from article-level annotated items plus
/// `real_from_train` real articles sampled from the training pool. With
/// `remove_from_train` the sampled articles leave the training pool.
pub fn assemble_test_set(
    train_pool: &[RawArticle],
    annotated_test: &[RawArticle],
    real_from_train: usize,
    remove_from_train: bool,
    seed: u64,
) -> Result<(Vec<RawArticle>, Vec<RawArticle>), CorpusError> {
    let real: Vec<usize> = train_pool
        .iter()
        .enumerate()
        .filter(|(_, a)| a.label == Some(Label::Real))
        .map(|(i, _)| i)
        .collect();
    if real.len() < real_from_train {
        return Err(CorpusError::Config(format!(
            "training pool has {} real articles, {real_from_train} requested",
            real.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = index::sample(&mut rng, real.len(), real_from_train)
        .into_iter()
        .map(|k| real[k])
        .collect();
    picked.sort_unstable();
    let chosen: HashSet<usize> = picked.iter().copied().collect();
    let mut test = annotated_test.to_vec();
    test.extend(picked.iter().map(|&i| train_pool[i].clone()));
    let train = if remove_from_train {
        train_pool
            .iter()
            .enumerate()
            .filter(|(i, _)| !chosen.contains(i))
            .map(|(_, a)| a.clone())
            .collect()
    } else {
        train_pool.to_vec()
    };
    Ok((train, test))
}
