//! Attribute universe, outcome schemas, labeled cases and the split /
//! expansion / weighting steps that turn a corpus into training sets.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;

/// The 80 validated construction attributes, in their fixed canonical order
/// (column-major reading of the published attribute table, which is
/// alphabetical within each column).
const STANDARD_ATTRIBUTES: [&str; 80] = [
    "adverse low temps",
    "bolt",
    "cable",
    "cable tray",
    "chipping",
    "cleaning",
    "concrete",
    "concrete liquid",
    "conduit",
    "confined work space",
    "congested work space",
    "crane",
    "door",
    "drill",
    "dunnage",
    "electricity",
    "exiting",
    "fatigued dizzy",
    "forklift",
    "formwork",
    "grinding",
    "object at height",
    "guardrail handrail",
    "hammer",
    "hand size pieces",
    "hazardous substance",
    "heat source",
    "heavy material/tool",
    "heavy vehicle",
    "hose",
    "imp. body position",
    "imp. procedure inattention",
    "imp. security of materials",
    "imp. security of tools",
    "unpowered tool",
    "job trailer",
    "ladder",
    "lifting pulling manipulating",
    "light vehicle",
    "lumber",
    "machinery",
    "manlift",
    "mud",
    "nail",
    "improper PPE",
    "grout",
    "object on the floor",
    "piping",
    "pontoon",
    "poor housekeeping",
    "stairs",
    "powered tool",
    "repetitive motion",
    "rebar",
    "scaffold",
    "screw",
    "sharp edge",
    "slag",
    "slippery surface",
    "small particle",
    "spark",
    "splinter sliver",
    "steel steel sections",
    "poor visibility",
    "spool",
    "stripping",
    "stud",
    "tank",
    "uneven surface",
    "insect",
    "wind",
    "wire",
    "valve",
    "welding",
    "unpowered transporter",
    "unstable support surface",
    "working below elev wksp mat",
    "wrench",
    "working overhead",
    "working at height",
];

/// Number of attributes in the standard universe.
pub const UNIVERSE_SIZE: usize = 80;

/// Lowercases and collapses every run of non-alphanumeric characters to `_`.
pub fn canonical_name(label: &str) -> String {
    let mut out = String::with_capacity(label.len());
    let mut pending = false;
    for ch in label.chars() {
        if ch.is_alphanumeric() {
            if pending && !out.is_empty() {
                out.push('_');
            }
            pending = false;
            out.extend(ch.to_lowercase());
        } else {
            pending = true;
        }
    }
    out
}

/// Ordered attribute names with a reverse index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeUniverse {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl AttributeUniverse {
    /// The 80-attribute universe every model in the pipeline is trained on.
    pub fn standard() -> Self {
        Self::from_names(STANDARD_ATTRIBUTES.iter().map(|s| canonical_name(s)).collect())
            .expect("standard universe is valid")
    }

    pub fn from_names(names: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate attribute `{n}`")));
            }
        }
        if names.is_empty() {
            return Err(Error::Config("empty attribute universe".into()));
        }
        Ok(Self { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.position(name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    /// Hex digest of the ordered names; recorded in every model artifact.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for n in &self.names {
            h.update(n.as_bytes());
            h.update(b"\n");
        }
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn zeros(&self) -> AttributeVector {
        AttributeVector::zeros(self.len())
    }

    /// Builds a vector from attribute names.
    pub fn vector_from_names<S: AsRef<str>>(&self, names: &[S]) -> Result<AttributeVector> {
        let mut v = self.zeros();
        for n in names {
            v.set(self.require(n.as_ref())?, true);
        }
        Ok(v)
    }

    pub fn names_of(&self, v: &AttributeVector) -> Vec<String> {
        v.ones().map(|i| self.names[i].clone()).collect()
    }
}

/// Binary attribute vector aligned to a universe.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttributeVector {
    bits: Vec<u8>,
}

impl AttributeVector {
    pub fn zeros(len: usize) -> Self {
        Self { bits: vec![0; len] }
    }

    pub fn from_bits(bits: Vec<u8>) -> Result<Self> {
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::Config(format!("attribute bit must be 0 or 1, got {b}")));
        }
        Ok(Self { bits })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i] == 1
    }

    pub fn set(&mut self, i: usize, on: bool) {
        self.bits[i] = on as u8;
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b == 1).map(|(i, _)| i)
    }

    pub fn union_with(&mut self, other: &AttributeVector) {
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
    }

    /// True when every bit set in `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &AttributeVector) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| a <= b)
    }

    pub fn hamming(&self, other: &AttributeVector) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| a != b).count()
    }

    pub fn to_row(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| b as f64).collect()
    }
}

/// An outcome and its ordered categories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeSchema {
    pub name: String,
    pub categories: Vec<String>,
}

pub const OUTCOMES: [&str; 4] = ["incident_type", "injury_type", "bodypart", "severity"];

impl OutcomeSchema {
    pub fn new(name: impl Into<String>, categories: Vec<String>) -> Result<Self> {
        let name = name.into();
        if categories.len() < 2 {
            return Err(Error::Config(format!("outcome `{name}` needs at least 2 categories")));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &categories {
            if !seen.insert(c) {
                return Err(Error::Config(format!("duplicate category `{c}` in outcome `{name}`")));
            }
        }
        Ok(Self { name, categories })
    }

    /// One of the four standard outcome schemas, by name.
    pub fn standard(name: &str) -> Option<Self> {
        let cats: &[&str] = match name {
            "incident_type" => &["eq./tools", "slips/trips/falls", "rules", "access", "PPE", "dropped"],
            "injury_type" => &["contusion", "cut/puncture", "FOB", "pain"],
            "bodypart" => &["finger", "hand", "eye", "lower extr.", "head", "upper extr."],
            "severity" => &["1st aid", "med./restr."],
            _ => return None,
        };
        Some(Self {
            name: name.to_string(),
            categories: cats.iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn standard_all() -> Vec<Self> {
        OUTCOMES.iter().map(|n| Self::standard(n).unwrap()).collect()
    }

    /// Incident type and severity are single-label outcomes.
    pub fn is_single_label(&self) -> bool {
        matches!(self.name.as_str(), "incident_type" | "severity")
    }

    pub fn n_classes(&self) -> usize {
        self.categories.len()
    }

    pub fn index_of(&self, category: &str) -> Result<usize> {
        self.categories
            .iter()
            .position(|c| c == category)
            .ok_or_else(|| Error::UnknownCategory {
                outcome: self.name.clone(),
                category: category.to_string(),
            })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s: OutcomeSchema = serde_json::from_reader(std::fs::File::open(path)?)?;
        Self::new(s.name, s.categories)
    }
}

/// A narrative with its attribute vector and outcome labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCase {
    pub id: String,
    pub narrative: String,
    pub attributes: AttributeVector,
    /// outcome name -> categories (nonempty when present)
    pub labels: BTreeMap<String, Vec<String>>,
}

impl LabeledCase {
    pub fn labels_for(&self, outcome: &str) -> &[String] {
        self.labels.get(outcome).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Checks this case's labels for `schema`.
    pub fn validate(&self, schema: &OutcomeSchema) -> Result<()> {
        let labels = self.labels_for(&schema.name);
        for l in labels {
            schema.index_of(l)?;
        }
        if schema.is_single_label() && labels.len() > 1 {
            return Err(Error::Config(format!(
                "case `{}` has {} labels for single-label outcome `{}`",
                self.id,
                labels.len(),
                schema.name
            )));
        }
        Ok(())
    }
}

/// A single-label training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub source_id: String,
    pub attributes: AttributeVector,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub val_fraction_of_train: f64,
    pub seed: u64,
    /// Stratify on the first label of this outcome. Off by default.
    #[serde(default)]
    pub stratify_by: Option<String>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_fraction: 0.10,
            val_fraction_of_train: 0.10,
            seed: 0,
            stratify_by: None,
        }
    }
}

impl SplitSpec {
    fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("test_fraction", self.test_fraction),
            ("val_fraction_of_train", self.val_fraction_of_train),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!("{name} must be in (0, 1), got {f}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Uniform random train / validation / test partition.
///
/// The test set takes `round(test_fraction * n)` cases; the validation set
/// takes `round(val_fraction_of_train * |rest|)` of what remains.
pub fn split_dataset(cases: &[LabeledCase], spec: &SplitSpec) -> Result<Partition<LabeledCase>> {
    spec.validate()?;
    let n = cases.len();
    if n < 10 {
        return Err(Error::Sizing { needed: 10, got: n });
    }
    let mut rng = rng::seeded(spec.seed);

    let (test_idx, val_idx, train_idx) = match &spec.stratify_by {
        None => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let n_test = (spec.test_fraction * n as f64).round() as usize;
            let n_val = (spec.val_fraction_of_train * (n - n_test) as f64).round() as usize;
            let test = order[..n_test].to_vec();
            let val = order[n_test..n_test + n_val].to_vec();
            let train = order[n_test + n_val..].to_vec();
            (test, val, train)
        }
        Some(outcome) => {
            let mut groups: BTreeMap<Option<&str>, Vec<usize>> = BTreeMap::new();
            for (i, c) in cases.iter().enumerate() {
                let key = c.labels_for(outcome).first().map(String::as_str);
                groups.entry(key).or_default().push(i);
            }
            let (mut test, mut val, mut train) = (Vec::new(), Vec::new(), Vec::new());
            for members in groups.values_mut() {
                members.shuffle(&mut rng);
                let m = members.len();
                let n_test = (spec.test_fraction * m as f64).round() as usize;
                let n_val = (spec.val_fraction_of_train * (m - n_test) as f64).round() as usize;
                test.extend_from_slice(&members[..n_test]);
                val.extend_from_slice(&members[n_test..n_test + n_val]);
                train.extend_from_slice(&members[n_test + n_val..]);
            }
            (test, val, train)
        }
    };

    if test_idx.is_empty() || val_idx.is_empty() || train_idx.is_empty() {
        return Err(Error::Sizing { needed: n + 1, got: n });
    }
    let pick = |idx: &[usize]| idx.iter().map(|&i| cases[i].clone()).collect::<Vec<_>>();
    Ok(Partition {
        train: pick(&train_idx),
        val: pick(&val_idx),
        test: pick(&test_idx),
    })
}

/// Result of expanding multi-label cases into single-label examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    pub examples: Vec<Example>,
    /// Cases with no label for the outcome.
    pub dropped: usize,
}

/// One example per (case, label) pair. Must only be applied to a partition
/// produced by [`split_dataset`], never before splitting.
pub fn expand_multilabel(partition: &[LabeledCase], schema: &OutcomeSchema) -> Result<Expansion> {
    let mut examples = Vec::with_capacity(partition.len());
    let mut dropped = 0;
    for case in partition {
        let labels = case.labels_for(&schema.name);
        if labels.is_empty() {
            dropped += 1;
            continue;
        }
        if labels.len() == 1 {
            examples.push(Example {
                id: case.id.clone(),
                source_id: case.id.clone(),
                attributes: case.attributes.clone(),
                label: schema.index_of(&labels[0])?,
            });
            continue;
        }
        for l in labels {
            examples.push(Example {
                id: format!("{}#{}", case.id, l),
                source_id: case.id.clone(),
                attributes: case.attributes.clone(),
                label: schema.index_of(l)?,
            });
        }
    }
    Ok(Expansion { examples, dropped })
}

/// Inverse-frequency class weights, `max_count / count_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub categories: Vec<String>,
    pub counts: Vec<u64>,
    pub weights: Vec<f64>,
}

impl ClassWeights {
    pub fn from_counts(categories: &[String], counts: &[u64]) -> Result<Self> {
        if categories.len() != counts.len() {
            return Err(Error::SchemaMismatch(format!(
                "{} categories but {} counts",
                categories.len(),
                counts.len()
            )));
        }
        if let Some(k) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyCategory(categories[k].clone()));
        }
        let max = *counts.iter().max().unwrap_or(&1) as f64;
        Ok(Self {
            categories: categories.to_vec(),
            counts: counts.to_vec(),
            weights: counts.iter().map(|&c| max / c as f64).collect(),
        })
    }

    pub fn uniform(n_classes: usize) -> Self {
        Self {
            categories: (0..n_classes).map(|k| k.to_string()).collect(),
            counts: vec![1; n_classes],
            weights: vec![1.0; n_classes],
        }
    }

    pub fn get(&self, category: &str) -> Option<f64> {
        self.categories
            .iter()
            .position(|c| c == category)
            .map(|k| self.weights[k])
    }

    /// Per-example weights for a label vector.
    pub fn sample_weights(&self, labels: &[usize]) -> Vec<f64> {
        labels.iter().map(|&y| self.weights[y]).collect()
    }
}

pub fn label_counts(examples: &[Example], n_classes: usize) -> Vec<u64> {
    let mut counts = vec![0u64; n_classes];
    for e in examples {
        counts[e.label] += 1;
    }
    counts
}

pub fn class_weights(train: &[Example], schema: &OutcomeSchema) -> Result<ClassWeights> {
    ClassWeights::from_counts(&schema.categories, &label_counts(train, schema.n_classes()))
}

// ---------------------------------------------------------------------------
// Case file I/O (JSON lines)

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum AttributeField {
    Names(Vec<String>),
    Bits(Vec<u8>),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum LabelField {
    One(String),
    Many(Vec<String>),
}

#[derive(Debug, Deserialize)]
struct CaseRecordIn {
    id: String,
    #[serde(default)]
    narrative: String,
    #[serde(default)]
    attributes: Option<AttributeField>,
    #[serde(default)]
    labels: BTreeMap<String, LabelField>,
}

#[derive(Debug, Serialize)]
struct CaseRecordOut<'a> {
    id: &'a str,
    narrative: &'a str,
    attributes: Vec<String>,
    labels: &'a BTreeMap<String, Vec<String>>,
}

/// Parses one case line. Missing attributes parse as all zeros.
pub fn parse_case(line: &str, universe: &AttributeUniverse) -> Result<LabeledCase> {
    let rec: CaseRecordIn = serde_json::from_str(line)?;
    let attributes = match rec.attributes {
        None => universe.zeros(),
        Some(AttributeField::Names(names)) => universe.vector_from_names(&names)?,
        Some(AttributeField::Bits(bits)) => {
            if bits.len() != universe.len() {
                return Err(Error::Config(format!(
                    "attribute array has length {}, universe has {}",
                    bits.len(),
                    universe.len()
                )));
            }
            AttributeVector::from_bits(bits)?
        }
    };
    let mut labels = BTreeMap::new();
    for (k, v) in rec.labels {
        let mut list = match v {
            LabelField::One(s) => vec![s],
            LabelField::Many(v) => v,
        };
        let mut seen = std::collections::HashSet::new();
        list.retain(|c| seen.insert(c.clone()));
        if !list.is_empty() {
            labels.insert(k, list);
        }
    }
    Ok(LabeledCase {
        id: rec.id,
        narrative: rec.narrative,
        attributes,
        labels,
    })
}

pub fn case_to_json(case: &LabeledCase, universe: &AttributeUniverse) -> String {
    serde_json::to_string(&CaseRecordOut {
        id: &case.id,
        narrative: &case.narrative,
        attributes: universe.names_of(&case.attributes),
        labels: &case.labels,
    })
    .expect("case serializes")
}

/// Reads a JSON-lines case file, failing on the first malformed line.
pub fn read_cases(path: &Path, universe: &AttributeUniverse) -> Result<Vec<LabeledCase>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_case(&line, universe).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_cases(path: &Path, cases: &[LabeledCase], universe: &AttributeUniverse) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for c in cases {
        writeln!(w, "{}", case_to_json(c, universe))?;
    }
    w.flush()?;
    Ok(())
}
