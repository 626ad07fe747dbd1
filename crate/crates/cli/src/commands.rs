use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use precursor::container::{ModelContainer, Payload};
use precursor::dataset::{
    canonical_name, class_weights, expand_multilabel, label_counts, parse_case, read_cases, split_dataset, write_cases,
    AttributeUniverse, ClassWeights, Example, LabeledCase, OutcomeSchema, SplitSpec,
};
use precursor::eval::{
    default_forest_grid, default_svm_grid, evaluate as score, gbm_grid, grid_search, random_baseline, GbmAxes,
};
use precursor::extract::{read_gold, score_agreement, Extractor, Lexicon};
use precursor::forest::{permutation_importance, ForestParams, Importance};
use precursor::gbm::{gain_importance, GbmParams};
use precursor::model::{LabeledSet, Model, ModelConfig};
use precursor::report::{
    barplot_svg, contributions_csv, importance_csv, ContributionRow, MetricsTable, BASELINE_LABEL,
};
use precursor::rng;
use precursor::stack::fit_stack;
use precursor::svm::{class_attribute_contributions, SvmParams};
use precursor::synth::{bayes_oracle, generate_corpus, GeneratorSpec};

use crate::{
    AgreementArgs, EvaluateArgs, ExtractArgs, FamilyArg, ImportanceArgs, InspectArgs, OutcomeArgs, SplitArgs,
    StackArgs, Status, SynthArgs, TrainArgs, TuneArgs,
};

fn universe() -> AttributeUniverse {
    AttributeUniverse::standard()
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_lexicon(path: Option<&Path>, u: &AttributeUniverse) -> Result<Extractor> {
    let lex = match path {
        Some(p) => Lexicon::load(p).with_context(|| format!("reading lexicon {}", p.display()))?,
        None => Lexicon::starter(),
    };
    Ok(lex.compile(u)?)
}

fn load_schema(a: &OutcomeArgs) -> Result<OutcomeSchema> {
    if let Some(p) = &a.schema {
        let s = OutcomeSchema::load(p).with_context(|| format!("reading schema {}", p.display()))?;
        if s.name != a.outcome {
            bail!("schema file describes `{}`, not `{}`", s.name, a.outcome);
        }
        return Ok(s);
    }
    OutcomeSchema::standard(&a.outcome)
        .with_context(|| format!("`{}` is not a standard outcome; pass --schema", a.outcome))
}

fn read(path: &Path, u: &AttributeUniverse) -> Result<Vec<LabeledCase>> {
    read_cases(path, u).with_context(|| format!("reading {}", path.display()))
}

/// Labeled examples of one file; cases without the outcome are dropped
/// with a warning.
fn examples(path: &Path, schema: &OutcomeSchema, u: &AttributeUniverse, warn: &mut bool) -> Result<Vec<Example>> {
    let cases = read(path, u)?;
    let exp = expand_multilabel(&cases, schema).with_context(|| format!("labels in {}", path.display()))?;
    if exp.examples.is_empty() {
        bail!("{} has no `{}` labels", path.display(), schema.name);
    }
    if exp.dropped > 0 {
        eprintln!(
            "warning: {} cases in {} have no `{}` label and were skipped",
            exp.dropped,
            path.display(),
            schema.name
        );
        *warn = true;
    }
    Ok(exp.examples)
}

fn status(warn: bool) -> Status {
    if warn {
        Status::Warnings
    } else {
        Status::Ok
    }
}

fn read_json_value(path: Option<&Path>) -> Result<serde_json::Value> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
        None => Ok(serde_json::Value::Object(Default::default())),
    }
}

fn config_from_json(family: FamilyArg, v: serde_json::Value) -> Result<ModelConfig> {
    Ok(match family {
        FamilyArg::Forest => ModelConfig::Forest(serde_json::from_value(v).context("forest params")?),
        FamilyArg::Gbm => ModelConfig::Gbm(serde_json::from_value(v).context("gbm params")?),
        FamilyArg::Svm => ModelConfig::Svm(serde_json::from_value(v).context("svm params")?),
    })
}

/// Tuned hyperparameters only, as written by `tune --best-out`.
fn params_json(cfg: &ModelConfig) -> String {
    let v = match cfg {
        ModelConfig::Forest(p) => serde_json::json!({"ntree": p.ntree, "mtry": p.mtry, "nodesize": p.nodesize}),
        ModelConfig::Gbm(p) => serde_json::json!({
            "max_depth": p.max_depth,
            "learning_rate": p.learning_rate,
            "min_child_weight": p.min_child_weight,
            "subsample": p.subsample,
            "colsample_bylevel": p.colsample_bylevel,
        }),
        ModelConfig::Svm(p) => serde_json::json!({"c": p.c}),
    };
    serde_json::to_string_pretty(&v).expect("json") + "\n"
}

fn weights_for(train: &[Example], schema: &OutcomeSchema, off: bool) -> Result<Option<ClassWeights>> {
    if off {
        Ok(None)
    } else {
        Ok(Some(class_weights(train, schema)?))
    }
}

pub fn extract(a: ExtractArgs) -> Result<Status> {
    let u = universe();
    let ex = load_lexicon(a.lexicon.as_deref(), &u)?;
    let file = fs::File::open(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let mut cases = Vec::new();
    let (mut lines, mut bad) = (0usize, 0usize);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        lines += 1;
        match parse_case(&line, &u) {
            Ok(c) => cases.push(c),
            Err(e) => {
                bad += 1;
                eprintln!("warning: line {}: {e}; skipped", i + 1);
            }
        }
    }
    if lines > 0 && bad == lines {
        bail!("no line of {} could be parsed", a.input.display());
    }
    ex.extract_cases(&mut cases);
    write_cases(&a.output, &cases, &u).with_context(|| format!("writing {}", a.output.display()))?;
    let mut hits = vec![0usize; u.len()];
    for c in &cases {
        for j in c.attributes.ones() {
            hits[j] += 1;
        }
    }
    println!("cases: {} written, {} skipped", cases.len(), bad);
    for (j, h) in hits.iter().enumerate().filter(|(_, h)| **h > 0) {
        println!("{}\t{h}", u.name(j));
    }
    Ok(Status::Ok)
}

pub fn agreement(a: AgreementArgs) -> Result<Status> {
    let u = universe();
    let ex = load_lexicon(a.lexicon.as_deref(), &u)?;
    let cases = read(&a.input, &u)?;
    let gold = read_gold(&a.gold, &u).with_context(|| format!("reading {}", a.gold.display()))?;
    let predicted: Vec<_> = cases.iter().map(|c| (c.id.clone(), ex.extract(&c.narrative))).collect();
    let report = score_agreement(&predicted, &gold, &u)?;
    println!("cases: {}", report.n_cases);
    println!("overall agreement: {:.4}", report.overall);
    if let Some(p) = &a.report {
        write_file(p, &report.to_csv())?;
    }
    Ok(Status::Ok)
}

pub fn synth(a: SynthArgs) -> Result<Status> {
    let u = universe();
    let mut spec = match &a.spec {
        Some(p) => GeneratorSpec::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => GeneratorSpec::desk_default(),
    };
    if let Some(n) = a.n_cases {
        spec.n_cases = n;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let cases = generate_corpus(&spec, &u)?;
    write_cases(&a.output, &cases, &u).with_context(|| format!("writing {}", a.output.display()))?;
    let oracle = bayes_oracle(&spec, &u, &cases)?;
    println!("cases: {} (seed {})", cases.len(), spec.seed);
    println!("bayes accuracy: {:.4}", oracle.bayes_accuracy);
    println!("bayes macro-F1: {:.4}", oracle.bayes_macro_f1);
    if let Some(p) = &a.oracle_out {
        write_file(p, &(serde_json::to_string_pretty(&oracle)? + "\n"))?;
    }
    if let Some(p) = &a.spec_out {
        write_file(p, &(spec.to_json() + "\n"))?;
    }
    Ok(Status::Ok)
}

pub fn split(a: SplitArgs) -> Result<Status> {
    let u = universe();
    let cases = read(&a.input, &u)?;
    let spec = SplitSpec {
        test_fraction: a.test_fraction,
        val_fraction_of_train: a.val_fraction,
        seed: a.seed,
        stratify_by: a.stratify,
    };
    let part = split_dataset(&cases, &spec)?;
    fs::create_dir_all(&a.out_dir)?;
    for (name, set) in [("train", &part.train), ("val", &part.val), ("test", &part.test)] {
        let path = a.out_dir.join(format!("{name}.jsonl"));
        write_cases(&path, set, &u).with_context(|| format!("writing {}", path.display()))?;
        println!("{name}: {}", set.len());
    }
    Ok(Status::Ok)
}

pub fn train(a: TrainArgs) -> Result<Status> {
    let u = universe();
    let schema = load_schema(&a.outcome)?;
    let mut warn = false;
    let mut train = examples(&a.train, &schema, &u, &mut warn)?;
    let mut val = match &a.val {
        Some(p) => Some(examples(p, &schema, &u, &mut warn)?),
        None => None,
    };
    if a.r#final {
        let v = val
            .take()
            .context("--final needs --val to train on train and validation combined")?;
        train.extend(v);
    }
    let mut cfg = config_from_json(a.family, read_json_value(a.params.as_deref())?)?
        .with_seed(a.seed)
        .with_class_weights(weights_for(&train, &schema, a.no_class_weights)?);
    if let ModelConfig::Gbm(p) = &mut cfg {
        if a.rounds.is_some() {
            p.fixed_rounds = a.rounds;
        }
        if p.fixed_rounds.is_none() && val.is_none() {
            bail!("gbm needs --val for early stopping, or a fixed round count (--rounds)");
        }
    }
    let k = schema.n_classes();
    let counts = label_counts(&train, k);
    let tr = LabeledSet::from_examples(&train, k);
    let va = val.as_ref().map(|v| LabeledSet::from_examples(v, k));
    let va_view = va.as_ref().map(|v| v.view()).transpose()?;
    let model = cfg.fit(&tr.view()?, va_view.as_ref(), &schema.categories)?;
    println!("family: {}", cfg.family());
    println!("outcome: {}", schema.name);
    println!("training examples: {}", tr.len());
    for (name, v) in cfg.describe() {
        println!("{name}: {v}");
    }
    match &model {
        Model::Gbm(m) => {
            let curve = a
                .curve_out
                .clone()
                .unwrap_or_else(|| PathBuf::from(format!("{}.curve.csv", a.model_out.display())));
            write_file(&curve, &m.training_log_csv())?;
            println!("best_round: {}", m.best_round);
            println!("loss curve: {}", curve.display());
        }
        Model::Svm(m) if !m.all_converged() => {
            eprintln!("warning: the SVM solver hit max_iter before reaching tol for some categories");
            warn = true;
        }
        _ => {}
    }
    let params = serde_json::to_string(&cfg)?;
    let container = ModelContainer::new(&u, schema, params, counts, a.seed, Payload::from_model(model));
    container
        .save(&a.model_out)
        .with_context(|| format!("writing {}", a.model_out.display()))?;
    println!("model: {}", a.model_out.display());
    Ok(status(warn))
}

pub fn tune(a: TuneArgs) -> Result<Status> {
    let u = universe();
    let schema = load_schema(&a.outcome)?;
    let mut warn = false;
    let train = examples(&a.train, &schema, &u, &mut warn)?;
    let val = examples(&a.val, &schema, &u, &mut warn)?;
    let weights = weights_for(&train, &schema, a.no_class_weights)?;
    let grid: Vec<ModelConfig> = if a.grid == "default" {
        match a.family {
            FamilyArg::Forest => default_forest_grid(&ForestParams::default()),
            FamilyArg::Gbm => gbm_grid(&GbmParams::default(), &GbmAxes::default()),
            FamilyArg::Svm => default_svm_grid(&SvmParams::default()),
        }
    } else {
        let v = read_json_value(Some(Path::new(&a.grid)))?;
        let items = v
            .as_array()
            .context("a grid file holds a JSON array of parameter objects")?;
        items
            .iter()
            .map(|item| config_from_json(a.family, item.clone()))
            .collect::<Result<_>>()?
    };
    let grid: Vec<ModelConfig> = grid
        .into_iter()
        .map(|c| c.with_seed(a.seed).with_class_weights(weights.clone()))
        .collect();
    let k = schema.n_classes();
    let tr = LabeledSet::from_examples(&train, k);
    let va = LabeledSet::from_examples(&val, k);
    let result = grid_search(&grid, &tr.view()?, &va.view()?, &schema.categories)?;
    write_file(&a.out, &result.to_csv())?;
    let failed = result.rows.iter().filter(|r| r.error.is_some()).count();
    println!("configurations: {} ({} failed)", result.rows.len(), failed);
    if failed > 0 {
        warn = true;
        for r in result.rows.iter().filter(|r| r.error.is_some()) {
            eprintln!(
                "warning: {:?}: {}",
                r.config.describe(),
                r.error.as_deref().unwrap_or("")
            );
        }
    }
    let best = result.best.context("every configuration failed")?;
    let row = &result.rows[best];
    println!("best val macro-F1: {:.4}", row.val_macro_f1.unwrap_or(0.0));
    for (name, v) in row.config.describe() {
        println!("{name}: {v}");
    }
    if let Some(p) = &a.best_out {
        write_file(p, &params_json(&row.config))?;
    }
    Ok(status(warn))
}

pub fn evaluate(a: EvaluateArgs) -> Result<Status> {
    let u = universe();
    let mut models = Vec::new();
    for p in &a.models {
        models.push(ModelContainer::load(p, &u, None).with_context(|| format!("loading {}", p.display()))?);
    }
    let schema = models[0].schema.clone();
    for (m, p) in models.iter().zip(&a.models) {
        if m.schema != schema {
            bail!(
                "{} predicts `{}`, the first model predicts `{}`",
                p.display(),
                m.schema.name,
                schema.name
            );
        }
    }
    let mut warn = false;
    let test = examples(&a.test, &schema, &u, &mut warn)?;
    let k = schema.n_classes();
    let te = LabeledSet::from_examples(&test, k);
    let mut table = MetricsTable::new(&schema.name, &schema.categories, a.seed);
    let mut used: BTreeMap<String, usize> = BTreeMap::new();
    for m in &models {
        let pred = (0..te.len())
            .map(|i| m.payload.predict(te.x.row(i)))
            .collect::<precursor::Result<Vec<_>>>()?;
        let base = m.family.report_label().to_string();
        let n = used.entry(base.clone()).or_insert(0);
        *n += 1;
        let label = if *n == 1 { base } else { format!("{base}#{n}") };
        table.push(&label, score(&te.y, &pred, k)?)?;
    }
    let baseline = random_baseline(&models[0].train_class_counts, &te.y, a.seed, a.baseline_trials)?;
    table.push(BASELINE_LABEL, baseline)?;
    let stem = canonical_name(&schema.name);
    write_file(&a.report_dir.join(format!("{stem}.csv")), &table.to_csv())?;
    let text = table.to_text();
    write_file(&a.report_dir.join(format!("{stem}.txt")), &text)?;
    print!("{text}");
    Ok(status(warn))
}

pub fn stack(a: StackArgs) -> Result<Status> {
    let u = universe();
    let schema = load_schema(&a.outcome)?;
    let mut warn = false;
    let train = examples(&a.train, &schema, &u, &mut warn)?;
    let val = examples(&a.val, &schema, &u, &mut warn)?;
    let weights = weights_for(&train, &schema, a.no_class_weights)?;
    let forest = ForestParams {
        seed: a.seed,
        class_weights: weights.clone(),
        ..serde_json::from_value(read_json_value(a.forest_params.as_deref())?).context("forest params")?
    };
    let gbm = GbmParams {
        seed: a.seed,
        class_weights: weights.clone(),
        ..serde_json::from_value(read_json_value(a.gbm_params.as_deref())?).context("gbm params")?
    };
    let svm = if a.experimental_svm_one_hot {
        eprintln!("warning: one-hot SVM inputs are experimental and usually lower stacked performance");
        Some(SvmParams {
            seed: a.seed,
            class_weights: weights.clone(),
            ..serde_json::from_value(read_json_value(a.svm_params.as_deref())?).context("svm params")?
        })
    } else {
        None
    };
    let k = schema.n_classes();
    let tr = LabeledSet::from_examples(&train, k);
    let va = LabeledSet::from_examples(&val, k);
    let bundle = fit_stack(
        &tr.view()?,
        &va.view()?,
        &forest,
        &gbm,
        svm.as_ref(),
        &schema.categories,
    )?;
    println!("outcome: {}", schema.name);
    println!(
        "meta-model: C = {}, {} iterations, converged = {}",
        bundle.stack.meta.c, bundle.stack.meta.iterations, bundle.stack.meta.converged
    );
    println!("gbm best_round: {}", bundle.gbm.best_round);
    if !bundle.stack.meta.converged {
        warn = true;
    }
    let params = serde_json::json!({"forest": forest, "gbm": gbm, "svm": svm});
    let container = ModelContainer::new(
        &u,
        schema,
        serde_json::to_string(&params)?,
        label_counts(&train, k),
        a.seed,
        Payload::Stack(Box::new(bundle)),
    );
    container
        .save(&a.model_out)
        .with_context(|| format!("writing {}", a.model_out.display()))?;
    println!("model: {}", a.model_out.display());
    Ok(status(warn))
}

fn write_importance(out_dir: &Path, u: &AttributeUniverse, imp: &Importance, top: usize, title: &str) -> Result<()> {
    write_file(&out_dir.join("importance.csv"), &importance_csv(u.names(), imp)?)?;
    let items: Vec<(String, f64)> = imp
        .ranking()
        .into_iter()
        .take(top)
        .map(|j| (u.name(j).to_string(), imp.normalized[j]))
        .collect();
    write_file(&out_dir.join("importance.svg"), &barplot_svg(title, &items))
}

pub fn importance(a: ImportanceArgs) -> Result<Status> {
    let u = universe();
    let c = ModelContainer::load(&a.model, &u, None).with_context(|| format!("loading {}", a.model.display()))?;
    let schema = &c.schema;
    if a.top == 0 || a.top > u.len() {
        bail!("--top must be in [1, {}]", u.len());
    }
    match &c.payload {
        Payload::Forest(m) => {
            let data = a
                .data
                .as_ref()
                .context("forest importance needs --data, the model's training file")?;
            let mut warn = false;
            let ex = examples(data, schema, &u, &mut warn)?;
            if ex.len() != m.n_train {
                bail!(
                    "{} gives {} examples; the forest was trained on {}",
                    data.display(),
                    ex.len(),
                    m.n_train
                );
            }
            let set = LabeledSet::from_examples(&ex, schema.n_classes());
            let imp = permutation_importance(m, &set.view()?, &mut rng::seeded(a.seed))?;
            let title = format!("{}: permutation importance (seed {})", schema.name, a.seed);
            write_importance(&a.out_dir, &u, &imp, a.top, &title)?;
        }
        Payload::Gbm(m) => {
            let title = format!("{}: gain importance", schema.name);
            write_importance(&a.out_dir, &u, &gain_importance(m), a.top, &title)?;
        }
        Payload::Svm(m) => {
            let mut rows = Vec::new();
            for (k, cat) in schema.categories.iter().enumerate() {
                let contrib = class_attribute_contributions(m, k, a.top)?;
                let mut items = Vec::new();
                for (i, (j, w)) in contrib.top.iter().enumerate() {
                    rows.push(ContributionRow {
                        category: cat.clone(),
                        attribute: u.name(*j).to_string(),
                        coefficient: *w,
                        rank: i + 1,
                    });
                    items.push((u.name(*j).to_string(), *w));
                }
                let mut bottom = Vec::new();
                for (i, (j, w)) in contrib.bottom.iter().enumerate() {
                    rows.push(ContributionRow {
                        category: cat.clone(),
                        attribute: u.name(*j).to_string(),
                        coefficient: *w,
                        rank: u.len() - i,
                    });
                    bottom.push((u.name(*j).to_string(), *w));
                }
                items.extend(bottom.into_iter().rev());
                let title = format!("{} = {cat}: SVM coefficients", schema.name);
                let file = format!("contributions_{}.svg", canonical_name(cat));
                write_file(&a.out_dir.join(file), &barplot_svg(&title, &items))?;
            }
            write_file(&a.out_dir.join("contributions.csv"), &contributions_csv(&rows))?;
        }
        Payload::Stack(_) => bail!("importance is not defined for stacked models"),
    }
    println!("reports written to {}", a.out_dir.display());
    Ok(Status::Ok)
}

pub fn inspect(a: InspectArgs) -> Result<Status> {
    let u = universe();
    let c = ModelContainer::load(&a.model, &u, None).with_context(|| format!("loading {}", a.model.display()))?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "family: {}", c.family)?;
    writeln!(out, "outcome: {} [{}]", c.schema.name, c.schema.categories.join(", "))?;
    writeln!(out, "universe fingerprint: {}", c.universe_fingerprint)?;
    writeln!(out, "seed: {}", c.seed)?;
    writeln!(out, "training class counts: {:?}", c.train_class_counts)?;
    writeln!(out, "params: {}", c.params_json)?;
    match &c.payload {
        Payload::Forest(m) => writeln!(out, "trees: {}", m.trees.len())?,
        Payload::Gbm(m) => writeln!(out, "rounds: {} (best {})", m.rounds.len(), m.best_round)?,
        Payload::Svm(m) => writeln!(out, "converged: {:?}", m.converged)?,
        Payload::Stack(b) => writeln!(
            out,
            "stack: {} trees + {} boosting rounds, svm input {}",
            b.forest.trees.len(),
            b.gbm.best_round,
            b.stack.svm_one_hot
        )?,
    }
    if let Some(p) = &a.dump_json {
        write_file(p, &(c.to_json() + "\n"))?;
    }
    Ok(Status::Ok)
}
