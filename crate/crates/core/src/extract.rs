//! Dictionary and rule based attribute extraction from narratives, plus
//! agreement scoring against hand-coded annotations.
//!
//! A lexicon maps each attribute to single-token terms, multi-token phrases
//! and implication rules. Rules are token patterns; each element is a set of
//! alternatives written `a|b|c`, or the wildcard `*` which matches any token
//! that is not a stop-word. Up to [`MAX_STOP_SKIP`] stop-words may sit between
//! consecutive pattern elements, so `tripped on *` also matches
//! "tripped on a cable".
//!
//! Negation is not handled: "no injury to the hand" still fires `hand` terms.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{AttributeUniverse, AttributeVector, LabeledCase};
use crate::error::{Error, Result};

pub const MAX_STOP_SKIP: usize = 2;

/// Determiners and possessives skipped inside rule patterns.
pub const STOP_WORDS: [&str; 14] = [
    "a", "an", "the", "his", "her", "their", "its", "my", "our", "your", "this", "that", "some", "another",
];

const STARTER_LEXICON: &str = include_str!("../data/starter_lexicon.json");

/// Lowercased runs of alphanumeric characters; everything else separates.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn is_stop(token: &str) -> bool {
    STOP_WORDS.contains(&token)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImplicationRule {
    pub pattern: Vec<String>,
    pub implies: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    #[serde(default)]
    pub terms: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub phrases: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rules: Vec<ImplicationRule>,
    /// Free-form documentation, e.g. how an ambiguous term was resolved.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub version: String,
    pub attributes: BTreeMap<String, LexiconEntry>,
}

impl Lexicon {
    pub fn starter() -> Self {
        serde_json::from_str(STARTER_LEXICON).expect("bundled lexicon parses")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("lexicon serializes")
    }

    /// Checks every name against the universe and compiles the matcher.
    pub fn compile(&self, universe: &AttributeUniverse) -> Result<Extractor> {
        let mut terms: HashMap<String, Vec<u32>> = HashMap::new();
        let mut phrases = Vec::new();
        let mut rules = Vec::new();
        for (name, entry) in &self.attributes {
            let idx = universe.require(name)? as u32;
            let mut seen = HashSet::new();
            for t in &entry.terms {
                if tokenize(t) != [t.clone()] {
                    return Err(Error::Config(format!(
                        "{name}: term `{t}` is not a single lowercase token"
                    )));
                }
                if !seen.insert(t) {
                    return Err(Error::Config(format!("{name}: duplicate term `{t}`")));
                }
                let hits = terms.entry(t.clone()).or_default();
                if !hits.contains(&idx) {
                    hits.push(idx);
                }
            }
            for p in &entry.phrases {
                let toks: Vec<String> = p.iter().flat_map(|w| tokenize(w)).collect();
                if toks.is_empty() {
                    return Err(Error::Config(format!("{name}: empty phrase")));
                }
                phrases.push((toks, idx));
            }
            for r in &entry.rules {
                if r.pattern.is_empty() {
                    return Err(Error::Config(format!("{name}: empty rule pattern")));
                }
                let target = universe.require(&r.implies)? as u32;
                let mut elems = Vec::with_capacity(r.pattern.len());
                for el in &r.pattern {
                    if el == "*" {
                        elems.push(PatternElem::Wildcard);
                    } else {
                        let alts: Vec<String> = el.split('|').map(str::to_lowercase).collect();
                        if alts.iter().any(|a| tokenize(a) != [a.clone()]) {
                            return Err(Error::Config(format!("{name}: bad pattern element `{el}`")));
                        }
                        elems.push(PatternElem::AnyOf(alts));
                    }
                }
                rules.push((elems, target));
            }
        }
        Ok(Extractor {
            n_attributes: universe.len(),
            terms,
            phrases,
            rules,
        })
    }
}

#[derive(Debug, Clone)]
enum PatternElem {
    AnyOf(Vec<String>),
    Wildcard,
}

impl PatternElem {
    fn matches(&self, token: &str) -> bool {
        match self {
            PatternElem::AnyOf(alts) => alts.iter().any(|a| a == token),
            PatternElem::Wildcard => !is_stop(token),
        }
    }
}

/// Compiled, immutable lexicon.
#[derive(Debug, Clone)]
pub struct Extractor {
    n_attributes: usize,
    terms: HashMap<String, Vec<u32>>,
    phrases: Vec<(Vec<String>, u32)>,
    rules: Vec<(Vec<PatternElem>, u32)>,
}

fn match_from(tokens: &[String], pos: usize, elems: &[PatternElem]) -> bool {
    let Some((first, rest)) = elems.split_first() else {
        return true;
    };
    for skip in 0..=MAX_STOP_SKIP {
        let at = pos + skip;
        if at >= tokens.len() {
            return false;
        }
        if first.matches(&tokens[at]) && match_from(tokens, at + 1, rest) {
            return true;
        }
        if !is_stop(&tokens[at]) {
            return false;
        }
    }
    false
}

impl Extractor {
    pub fn extract(&self, text: &str) -> AttributeVector {
        self.extract_tokens(&tokenize(text))
    }

    pub fn extract_tokens(&self, tokens: &[String]) -> AttributeVector {
        let mut v = AttributeVector::zeros(self.n_attributes);
        for t in tokens {
            if let Some(hits) = self.terms.get(t) {
                for &i in hits {
                    v.set(i as usize, true);
                }
            }
        }
        for (p, i) in &self.phrases {
            if tokens.windows(p.len()).any(|w| w == p.as_slice()) {
                v.set(*i as usize, true);
            }
        }
        for (elems, i) in &self.rules {
            let (first, rest) = elems.split_first().expect("nonempty pattern");
            let fired = (0..tokens.len()).any(|s| first.matches(&tokens[s]) && match_from(tokens, s + 1, rest));
            if fired {
                v.set(*i as usize, true);
            }
        }
        v
    }

    /// Replaces each case's attributes with the extracted ones.
    pub fn extract_cases(&self, cases: &mut [LabeledCase]) {
        cases
            .par_iter_mut()
            .for_each(|c| c.attributes = self.extract(&c.narrative));
    }
}

pub fn extract_attributes(text: &str, extractor: &Extractor) -> AttributeVector {
    extractor.extract(text)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldAnnotation {
    pub id: String,
    pub attributes: AttributeVector,
}

/// Reads `{id, attributes: [...]}` lines.
pub fn read_gold(path: &Path, universe: &AttributeUniverse) -> Result<Vec<GoldAnnotation>> {
    Ok(crate::dataset::read_cases(path, universe)?
        .into_iter()
        .map(|c| GoldAnnotation {
            id: c.id,
            attributes: c.attributes,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributeAgreement {
    pub attribute: String,
    pub agreement: f64,
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    /// `None` when the attribute was never predicted.
    pub precision: Option<f64>,
    /// `None` when the attribute never appears in the gold set.
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementReport {
    pub n_cases: usize,
    pub overall: f64,
    pub per_attribute: Vec<AttributeAgreement>,
}

impl AgreementReport {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        let mut s = format!("# cases={} overall={:.6}\n", self.n_cases, self.overall);
        s.push_str("attribute,agreement,tp,fp,fn,precision,recall\n");
        for a in &self.per_attribute {
            s.push_str(&format!(
                "{},{:.6},{},{},{},{},{}\n",
                a.attribute,
                a.agreement,
                a.true_positives,
                a.false_positives,
                a.false_negatives,
                opt(a.precision),
                opt(a.recall)
            ));
        }
        s
    }
}

/// Compares predicted vectors with gold annotations matched by case id.
/// Every id must appear exactly once on each side.
pub fn score_agreement(
    predicted: &[(String, AttributeVector)],
    gold: &[GoldAnnotation],
    universe: &AttributeUniverse,
) -> Result<AgreementReport> {
    let mut by_id: HashMap<&str, &AttributeVector> = HashMap::with_capacity(predicted.len());
    for (id, v) in predicted {
        if by_id.insert(id.as_str(), v).is_some() {
            return Err(Error::Alignment(format!("duplicate predicted id `{id}`")));
        }
    }
    if predicted.len() != gold.len() {
        return Err(Error::Alignment(format!(
            "{} predictions for {} gold annotations",
            predicted.len(),
            gold.len()
        )));
    }
    let d = universe.len();
    let mut tp = vec![0u64; d];
    let mut fp = vec![0u64; d];
    let mut fnn = vec![0u64; d];
    let mut gold_seen = HashSet::new();
    for g in gold {
        if !gold_seen.insert(g.id.as_str()) {
            return Err(Error::Alignment(format!("duplicate gold id `{}`", g.id)));
        }
        let p = by_id
            .get(g.id.as_str())
            .ok_or_else(|| Error::Alignment(format!("no prediction for gold id `{}`", g.id)))?;
        if p.len() != d || g.attributes.len() != d {
            return Err(Error::Alignment(format!("case `{}` has wrong vector length", g.id)));
        }
        for j in 0..d {
            match (p.get(j), g.attributes.get(j)) {
                (true, true) => tp[j] += 1,
                (true, false) => fp[j] += 1,
                (false, true) => fnn[j] += 1,
                _ => {}
            }
        }
    }
    let n = gold.len();
    let frac = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    let per_attribute = (0..d)
        .map(|j| AttributeAgreement {
            attribute: universe.name(j).to_string(),
            agreement: if n == 0 {
                1.0
            } else {
                1.0 - (fp[j] + fnn[j]) as f64 / n as f64
            },
            true_positives: tp[j],
            false_positives: fp[j],
            false_negatives: fnn[j],
            precision: frac(tp[j], tp[j] + fp[j]),
            recall: frac(tp[j], tp[j] + fnn[j]),
        })
        .collect();
    let mismatches: u64 = fp.iter().chain(&fnn).sum();
    let overall = if n == 0 {
        1.0
    } else {
        1.0 - mismatches as f64 / (n * d) as f64
    };
    Ok(AgreementReport {
        n_cases: n,
        overall,
        per_attribute,
    })
}
