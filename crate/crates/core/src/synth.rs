//! Seeded synthetic corpora with a planted attribute → outcome conditional
//! and the Bayes-optimal classifier for it.
//!
//! Attributes are drawn independently. Each attribute is on with probability
//! `attribute_density / 80` unless `attribute_rates` overrides it. Labels
//! come from a fall-through mixture over the signal rules: rules are visited
//! in order, and the first one whose attributes are all present assigns its
//! category with probability `strength`. Otherwise the next matching rule is
//! tried. A case that falls through every rule draws from `base_rates`. So
//! the conditional of a case is
//!
//! ```text
//! P(y | x) = s1·[y = c1] + (1 − s1)·s2·[y = c2] + … + Π(1 − si)·prior(y)
//! ```
//!
//! over the rules matching `x`, always a valid distribution.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{AttributeUniverse, AttributeVector, LabeledCase, OutcomeSchema};
use crate::error::{Error, Result};
use crate::eval::{confusion_matrix, precision_recall_f1, ClassScores};
use crate::extract::Lexicon;
use crate::rng;
use crate::tree::argmax;

/// Enumerating rule-attribute assignments stops being cheap past this.
const MAX_ANALYTIC_ATTRIBUTES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalRule {
    /// All must be present for the rule to match.
    pub attributes: Vec<String>,
    pub category: String,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n_cases: usize,
    pub seed: u64,
    pub schema: OutcomeSchema,
    pub base_rates: Vec<f64>,
    pub attribute_density: f64,
    #[serde(default)]
    pub attribute_rates: BTreeMap<String, f64>,
    #[serde(default)]
    pub signal: Vec<SignalRule>,
    /// Phrase pool per attribute. Absent: one phrase per starter-lexicon term.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub narrative_templates: Option<BTreeMap<String, Vec<String>>>,
}

/// A spec resolved against the universe.
#[derive(Debug, Clone)]
struct Compiled {
    rates: Vec<f64>,
    rules: Vec<(Vec<usize>, usize, f64)>,
}

impl GeneratorSpec {
    /// 5,000 cases, 6 categories, 8 signal rules, density 4.
    pub fn desk_default() -> Self {
        let cats = OutcomeSchema::standard("incident_type").expect("standard outcome");
        let rule = |attrs: &[&str], cat: &str, strength: f64| SignalRule {
            attributes: attrs.iter().map(|s| s.to_string()).collect(),
            category: cat.to_string(),
            strength,
        };
        let signal = vec![
            rule(&["scaffold", "working_at_height"], "slips/trips/falls", 0.95),
            rule(&["grinding", "small_particle"], "PPE", 0.95),
            rule(&["powered_tool"], "eq./tools", 0.9),
            rule(&["slippery_surface"], "slips/trips/falls", 0.9),
            rule(&["imp_procedure_inattention"], "rules", 0.9),
            rule(&["ladder"], "access", 0.9),
            rule(&["improper_ppe"], "PPE", 0.9),
            rule(&["object_at_height"], "dropped", 0.9),
        ];
        let mut attribute_rates = BTreeMap::new();
        for r in &signal {
            for a in &r.attributes {
                attribute_rates.insert(a.clone(), 0.2);
            }
        }
        Self {
            n_cases: 5000,
            seed: 20_240_611,
            schema: cats,
            base_rates: vec![0.3, 0.25, 0.15, 0.12, 0.1, 0.08],
            attribute_density: 4.0,
            attribute_rates,
            signal,
            narrative_templates: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    fn compile(&self, universe: &AttributeUniverse) -> Result<Compiled> {
        let k = self.schema.n_classes();
        if self.base_rates.len() != k {
            return Err(Error::Config(format!(
                "{} base rates for {k} categories",
                self.base_rates.len()
            )));
        }
        if self.base_rates.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("base rates must lie in [0, 1]".into()));
        }
        let total: f64 = self.base_rates.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("base rates sum to {total}, not 1")));
        }
        let d = universe.len();
        if !(0.0..d as f64).contains(&self.attribute_density) {
            return Err(Error::Config(format!(
                "attribute density {} outside [0, {d})",
                self.attribute_density
            )));
        }
        let mut rates = vec![self.attribute_density / d as f64; d];
        for (name, &p) in &self.attribute_rates {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("rate of `{name}` outside [0, 1]")));
            }
            rates[universe.require(name)?] = p;
        }
        let mut rules = Vec::with_capacity(self.signal.len());
        for r in &self.signal {
            if r.attributes.is_empty() {
                return Err(Error::Config("signal rule without attributes".into()));
            }
            if !(0.0..=1.0).contains(&r.strength) {
                return Err(Error::Config(format!("rule strength {} outside [0, 1]", r.strength)));
            }
            let attrs = r
                .attributes
                .iter()
                .map(|a| universe.require(a))
                .collect::<Result<Vec<_>>>()?;
            rules.push((attrs, self.schema.index_of(&r.category)?, r.strength));
        }
        Ok(Compiled { rates, rules })
    }

    pub fn validate(&self, universe: &AttributeUniverse) -> Result<()> {
        self.compile(universe).map(|_| ())
    }

    /// The generating distribution of the label given attributes.
    pub fn conditional(&self, universe: &AttributeUniverse, x: &AttributeVector) -> Result<Vec<f64>> {
        Ok(conditional_of(&self.compile(universe)?, &self.base_rates, x))
    }

    /// Label marginals in closed form, summing over every assignment of the
    /// attributes that appear in signal rules.
    pub fn analytic_marginals(&self, universe: &AttributeUniverse) -> Result<Vec<f64>> {
        let c = self.compile(universe)?;
        let involved: Vec<usize> = c
            .rules
            .iter()
            .flat_map(|(a, _, _)| a.iter().copied())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if involved.len() > MAX_ANALYTIC_ATTRIBUTES {
            return Err(Error::Unsupported(format!(
                "{} rule attributes; closed-form marginals need at most {MAX_ANALYTIC_ATTRIBUTES}",
                involved.len()
            )));
        }
        let k = self.schema.n_classes();
        let mut out = vec![0.0; k];
        let mut x = universe.zeros();
        for mask in 0u32..(1 << involved.len()) {
            let mut weight = 1.0;
            for (b, &j) in involved.iter().enumerate() {
                let on = mask >> b & 1 == 1;
                x.set(j, on);
                weight *= if on { c.rates[j] } else { 1.0 - c.rates[j] };
            }
            for (o, p) in out.iter_mut().zip(conditional_of(&c, &self.base_rates, &x)) {
                *o += weight * p;
            }
        }
        Ok(out)
    }

    fn templates(&self, universe: &AttributeUniverse) -> BTreeMap<String, Vec<String>> {
        match &self.narrative_templates {
            Some(t) => t.clone(),
            None => templates_from_lexicon(&Lexicon::starter(), universe),
        }
    }
}

fn conditional_of(c: &Compiled, priors: &[f64], x: &AttributeVector) -> Vec<f64> {
    let mut p = vec![0.0; priors.len()];
    let mut remaining = 1.0;
    for (attrs, cat, s) in &c.rules {
        if attrs.iter().all(|&j| x.get(j)) {
            p[*cat] += remaining * s;
            remaining *= 1.0 - s;
        }
    }
    for (pk, prior) in p.iter_mut().zip(priors) {
        *pk += remaining * prior;
    }
    p
}

/// One phrase per lexicon term, so rendered narratives extract back to at
/// least the rendered attributes.
pub fn templates_from_lexicon(lexicon: &Lexicon, universe: &AttributeUniverse) -> BTreeMap<String, Vec<String>> {
    lexicon
        .attributes
        .iter()
        .filter(|(name, _)| universe.position(name).is_some())
        .map(|(name, e)| (name.clone(), e.terms.clone()))
        .collect()
}

const EMPTY_NARRATIVE: &str = "incident reported with no notable conditions";

fn render<R: Rng>(rng: &mut R, bits: &AttributeVector, pools: &[Option<&Vec<String>>]) -> String {
    let parts: Vec<&str> = bits
        .ones()
        .map(|j| {
            let pool = pools[j].expect("checked before generation");
            pool[rng.gen_range(0..pool.len())].as_str()
        })
        .collect();
    if parts.is_empty() {
        EMPTY_NARRATIVE.to_string()
    } else {
        format!("incident involving {}", parts.join(" and "))
    }
}

/// Draws `spec.n_cases` cases. Case `i` uses its own RNG stream, so the
/// corpus does not depend on the thread count.
pub fn generate_corpus(spec: &GeneratorSpec, universe: &AttributeUniverse) -> Result<Vec<LabeledCase>> {
    let c = spec.compile(universe)?;
    let templates = spec.templates(universe);
    let pools: Vec<Option<&Vec<String>>> = universe
        .names()
        .iter()
        .map(|n| templates.get(n).filter(|p| !p.is_empty()))
        .collect();
    for (j, rate) in c.rates.iter().enumerate() {
        if *rate > 0.0 && pools[j].is_none() {
            return Err(Error::Config(format!(
                "no narrative template for attribute `{}`",
                universe.name(j)
            )));
        }
    }
    let cases = (0..spec.n_cases)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(spec.seed, i as u64);
            let mut x = universe.zeros();
            for (j, &p) in c.rates.iter().enumerate() {
                if p > 0.0 && rng.gen::<f64>() < p {
                    x.set(j, true);
                }
            }
            let p = conditional_of(&c, &spec.base_rates, &x);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut label = p.len() - 1;
            for (k, pk) in p.iter().enumerate() {
                acc += pk;
                if u < acc {
                    label = k;
                    break;
                }
            }
            // zero-probability classes are never drawn, even through rounding
            while p[label] == 0.0 && label > 0 {
                label -= 1;
            }
            let narrative = render(&mut rng, &x, &pools);
            let mut labels = BTreeMap::new();
            labels.insert(spec.schema.name.clone(), vec![spec.schema.categories[label].clone()]);
            LabeledCase {
                id: format!("s{i:06}"),
                narrative,
                attributes: x,
                labels,
            }
        })
        .collect();
    Ok(cases)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub outcome: String,
    pub n_cases: usize,
    pub bayes_accuracy: f64,
    pub bayes_macro_f1: f64,
    pub scores: ClassScores,
}

/// Scores the argmax of the true conditional on `cases`.
pub fn bayes_oracle(spec: &GeneratorSpec, universe: &AttributeUniverse, cases: &[LabeledCase]) -> Result<OracleReport> {
    let c = spec.compile(universe)?;
    let k = spec.schema.n_classes();
    let mut truth = Vec::with_capacity(cases.len());
    let mut pred = Vec::with_capacity(cases.len());
    for case in cases {
        let labels = case.labels_for(&spec.schema.name);
        let first = labels
            .first()
            .ok_or_else(|| Error::Config(format!("case `{}` has no `{}` label", case.id, spec.schema.name)))?;
        truth.push(spec.schema.index_of(first)?);
        pred.push(argmax(&conditional_of(&c, &spec.base_rates, &case.attributes)));
    }
    let cm = confusion_matrix(&truth, &pred, k)?;
    let scores = precision_recall_f1(&cm);
    Ok(OracleReport {
        outcome: spec.schema.name.clone(),
        n_cases: cases.len(),
        bayes_accuracy: cm.accuracy(),
        bayes_macro_f1: scores.macro_f1,
        scores,
    })
}

/// Two-expert scenario for stacking: four categories, the first two driven
/// by one attribute group and the last two by another. Training one model
/// without the second group and the other without the first gives two
/// experts with complementary strengths.
pub fn complementary_experts_spec() -> GeneratorSpec {
    let schema = OutcomeSchema::new("scenario", ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect())
        .expect("valid schema");
    let rule = |attr: &str, cat: &str| SignalRule {
        attributes: vec![attr.to_string()],
        category: cat.to_string(),
        strength: 0.9,
    };
    let signal = vec![
        rule("cable", "a"),
        rule("crane", "b"),
        rule("ladder", "c"),
        rule("welding", "d"),
    ];
    let attribute_rates = signal.iter().map(|r| (r.attributes[0].clone(), 0.3)).collect();
    GeneratorSpec {
        n_cases: 4000,
        seed: 77,
        schema,
        base_rates: vec![0.25; 4],
        attribute_density: 4.0,
        attribute_rates,
        signal,
        narrative_templates: None,
    }
}

/// Attribute indices of the rules for categories in `categories`.
pub fn rule_attributes(spec: &GeneratorSpec, universe: &AttributeUniverse, categories: &[&str]) -> Result<Vec<usize>> {
    let mut out = BTreeSet::new();
    for r in &spec.signal {
        if categories.contains(&r.category.as_str()) {
            for a in &r.attributes {
                out.insert(universe.require(a)?);
            }
        }
    }
    Ok(out.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::Lexicon;

    fn small(n: usize) -> GeneratorSpec {
        GeneratorSpec {
            n_cases: n,
            ..GeneratorSpec::desk_default()
        }
    }

    #[test]
    fn default_spec_shape() {
        let s = GeneratorSpec::desk_default();
        assert_eq!((s.n_cases, s.schema.n_classes(), s.signal.len()), (5000, 6, 8));
        assert_eq!(s.attribute_density, 4.0);
        s.validate(&AttributeUniverse::standard()).unwrap();
    }

    #[test]
    fn conditionals_are_distributions() {
        let u = AttributeUniverse::standard();
        let s = GeneratorSpec::desk_default();
        for case in generate_corpus(&small(300), &u).unwrap() {
            let p = s.conditional(&u, &case.attributes).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&v| v >= 0.0));
        }
        let m = s.analytic_marginals(&u).unwrap();
        assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_density_follows_priors() {
        let u = AttributeUniverse::standard();
        let spec = GeneratorSpec {
            attribute_rates: BTreeMap::new(),
            attribute_density: 0.0,
            n_cases: 200,
            ..GeneratorSpec::desk_default()
        };
        let cases = generate_corpus(&spec, &u).unwrap();
        assert!(cases.iter().all(|c| c.attributes.count_ones() == 0));
        assert_eq!(spec.analytic_marginals(&u).unwrap(), spec.base_rates);
    }

    #[test]
    fn deterministic_rule_always_fires() {
        let u = AttributeUniverse::standard();
        let spec = GeneratorSpec {
            signal: vec![SignalRule {
                attributes: vec!["ladder".into()],
                category: "access".into(),
                strength: 1.0,
            }],
            n_cases: 500,
            ..GeneratorSpec::desk_default()
        };
        let ladder = u.position("ladder").unwrap();
        let cases = generate_corpus(&spec, &u).unwrap();
        let hits: Vec<_> = cases.iter().filter(|c| c.attributes.get(ladder)).collect();
        assert!(!hits.is_empty());
        assert!(hits.iter().all(|c| c.labels_for("incident_type") == ["access"]));
    }

    #[test]
    fn missing_template_is_configuration_error() {
        let u = AttributeUniverse::standard();
        let mut t = templates_from_lexicon(&Lexicon::starter(), &u);
        t.remove("wind");
        let spec = GeneratorSpec {
            narrative_templates: Some(t),
            ..small(10)
        };
        assert!(matches!(generate_corpus(&spec, &u), Err(Error::Config(m)) if m.contains("wind")));
    }

    #[test]
    fn render_round_trips_through_extraction() {
        let u = AttributeUniverse::standard();
        let ex = Lexicon::starter().compile(&u).unwrap();
        let spec = GeneratorSpec {
            attribute_density: 12.0,
            ..small(400)
        };
        for c in generate_corpus(&spec, &u).unwrap() {
            assert!(c.attributes.is_subset_of(&ex.extract(&c.narrative)), "{}", c.narrative);
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let u = AttributeUniverse::standard();
        assert_eq!(
            generate_corpus(&small(100), &u).unwrap(),
            generate_corpus(&small(100), &u).unwrap()
        );
    }

    #[test]
    fn invalid_priors_rejected() {
        let spec = GeneratorSpec {
            base_rates: vec![0.5; 6],
            ..GeneratorSpec::desk_default()
        };
        assert!(spec.validate(&AttributeUniverse::standard()).is_err());
    }
}
