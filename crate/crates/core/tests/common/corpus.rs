//! Synthetic corpora split into train / validation / test sets.

use precursor::dataset::{expand_multilabel, split_dataset, AttributeUniverse, LabeledCase, SplitSpec};
use precursor::model::LabeledSet;
use precursor::synth::{generate_corpus, GeneratorSpec};

pub struct Splits {
    pub train: LabeledSet,
    pub val: LabeledSet,
    pub test: LabeledSet,
    pub test_cases: Vec<LabeledCase>,
}

pub fn split_spec(spec: &GeneratorSpec, split: &SplitSpec) -> Splits {
    let universe = AttributeUniverse::standard();
    let cases = generate_corpus(spec, &universe).unwrap();
    let parts = split_dataset(&cases, split).unwrap();
    let k = spec.schema.n_classes();
    let set = |p: &[LabeledCase]| LabeledSet::from_examples(&expand_multilabel(p, &spec.schema).unwrap().examples, k);
    Splits {
        train: set(&parts.train),
        val: set(&parts.val),
        test: set(&parts.test),
        test_cases: parts.test,
    }
}

/// Default 90/10 then 90/10 split with seed `seed`.
pub fn default_splits(spec: &GeneratorSpec, seed: u64) -> Splits {
    split_spec(
        spec,
        &SplitSpec {
            seed,
            ..SplitSpec::default()
        },
    )
}
