use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use vcpcfg::corpus::synthetic::{generate_synthetic, SynthConfig, ToyGrammar};
use vcpcfg::corpus::vocab::Vocabulary;
use vcpcfg::corpus::{load_corpus, load_gold_trees, read_captions, tokenize, Alignment, FeatureTable};
use vcpcfg::evaluation::{self, Baseline, EvalReport, GoldSpans, SpanSet};
use vcpcfg::model::Model;
use vcpcfg::training::gradcheck::{check_objective, Scope, TOLERANCE};
use vcpcfg::training::{epoch_log, train as run_training, Checkpoint, Example};
use vcpcfg::tree::Tree;
use vcpcfg::{Error, Result};
use vcpcfg_autodiff::AdjointFault;

use crate::config::RunConfig;
use crate::BaselineArg;

fn alignment(index: Option<&Path>, per_image: usize) -> Result<Alignment> {
    match index {
        Some(p) => Alignment::read_index(p),
        None => Ok(Alignment::Blocked(per_image)),
    }
}

fn load_examples(
    captions: &Path,
    features: Option<&Path>,
    index: Option<&Path>,
    per_image: usize,
) -> Result<(Vec<Vec<String>>, Option<FeatureTable>, Vec<Option<usize>>)> {
    match features {
        Some(f) => {
            let corpus = load_corpus(captions, f, &alignment(index, per_image)?)?;
            let images = corpus.images.iter().map(|&i| Some(i)).collect();
            Ok((corpus.captions, Some(corpus.features), images))
        }
        None => {
            let captions = read_captions(captions)?;
            let images = vec![None; captions.len()];
            Ok((captions, None, images))
        }
    }
}

fn to_examples(
    captions: &[Vec<String>],
    features: &Option<FeatureTable>,
    images: &[Option<usize>],
    vocab: &Vocabulary,
) -> Vec<Example> {
    captions
        .iter()
        .zip(images)
        .map(|(c, img)| Example {
            tokens: vocab.encode(c),
            feature: img.and_then(|i| features.as_ref().map(|f| f.row(i))),
        })
        .collect()
}

fn render_tree(model: &Model, vocab: &Vocabulary, words: &[String]) -> Result<String> {
    Ok(match words.len() {
        0 => "(X)".to_string(),
        1 => format!("(X {})", words[0]),
        _ => model.parse(&vocab.encode(words))?.to_tree(words).to_string(),
    })
}

fn write_report(dir: &Path, prefix: &str, report: &EvalReport) -> Result<()> {
    fs::write(dir.join(format!("{}summary.csv", prefix)), report.summary_csv())?;
    fs::write(dir.join(format!("{}label_recall.csv", prefix)), report.label_csv())?;
    fs::write(dir.join(format!("{}length_recall.csv", prefix)), report.length_csv())?;
    Ok(())
}

pub fn train(config: Option<&Path>, overrides: &[String]) -> Result<u8> {
    let cfg = RunConfig::load(config, overrides)?;
    cfg.validate_for_training()?;
    let out = cfg.output_dir.clone().expect("validated");
    fs::create_dir_all(&out)?;
    let grounded = cfg.train.mode.uses_images();
    let (train_caps, train_feats, train_imgs) = load_examples(
        cfg.train_captions.as_deref().expect("validated"),
        if grounded { cfg.train_features.as_deref() } else { None },
        cfg.train_index.as_deref(),
        cfg.captions_per_image,
    )?;
    let (valid_caps, valid_feats, valid_imgs) = load_examples(
        cfg.valid_captions.as_deref().expect("validated"),
        if grounded { cfg.valid_features.as_deref() } else { None },
        cfg.valid_index.as_deref(),
        cfg.captions_per_image,
    )?;
    let vocab = Vocabulary::build(&train_caps, cfg.vocab_size)?;
    let mut model = cfg.model;
    model.vocab = vocab.len();
    model.feature_dim = train_feats.as_ref().map_or(0, |f| f.dim);
    if let (Some(t), Some(v)) = (&train_feats, &valid_feats) {
        if t.dim != v.dim {
            return Err(Error::DimensionMismatch { expected: t.dim, got: v.dim });
        }
    }
    let gold = match &cfg.valid_gold {
        Some(p) => {
            let trees = load_gold_trees(p)?;
            if trees.len() != valid_caps.len() {
                return Err(Error::LengthMismatch { left: valid_caps.len(), right: trees.len() });
            }
            Some(trees)
        }
        None => None,
    };
    let train_ex = to_examples(&train_caps, &train_feats, &train_imgs, &vocab);
    let valid_ex = to_examples(&valid_caps, &valid_feats, &valid_imgs, &vocab);

    let mut timing = String::new();
    let outcome = run_training(&train_ex, &valid_ex, &model, &cfg.train, vocab.tokens().to_vec(), |r, secs| {
        eprintln!("epoch {:>2}  {} {:.4}{}", r.epoch, r.criterion, r.validation, if r.best { "  *" } else { "" });
        let _ = writeln!(timing, "{{\"epoch\":{},\"seconds\":{:.3}}}", r.epoch, secs);
    })?;
    let ckpt_path = out.join(&cfg.checkpoint);
    outcome.best.save(&ckpt_path)?;
    fs::write(out.join("epochs.jsonl"), epoch_log(&outcome.log))?;
    fs::write(out.join("timing.jsonl"), timing)?;
    eprintln!("best epoch {} written to {}", outcome.best.epoch, ckpt_path.display());

    if let Some(trees) = gold {
        let m = outcome.best.to_model();
        let mut preds = Vec::with_capacity(trees.len());
        for (words, gold) in valid_caps.iter().zip(&trees) {
            if words.len() != gold.len() {
                return Err(Error::LengthMismatch { left: words.len(), right: gold.len() });
            }
            preds.push(if words.len() >= 2 {
                SpanSet::from_parse(&m.parse(&vocab.encode(words))?)
            } else {
                SpanSet::new(words.len(), [])?
            });
        }
        let golds: Vec<GoldSpans> = trees.iter().map(GoldSpans::from_tree).collect();
        let report = evaluation::evaluate(&preds, &golds)?;
        print!("{}", report.table());
        write_report(&out, "valid_", &report)?;
    }
    Ok(0)
}

pub fn parse(checkpoint: &Path, captions: &Path, output: &Path) -> Result<u8> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let vocab = Vocabulary::from_tokens(ckpt.vocab.clone());
    let model = ckpt.to_model();
    let text = fs::read_to_string(captions)?;
    let mut out = String::new();
    for line in text.lines() {
        let words = tokenize(line);
        out.push_str(&render_tree(&model, &vocab, &words)?);
        out.push('\n');
    }
    fs::write(output, out)?;
    Ok(0)
}

fn pred_sets(path: &Path, golds: &[GoldSpans]) -> Result<Vec<SpanSet>> {
    let trees: Vec<Tree> = load_gold_trees(path)?;
    if trees.len() != golds.len() {
        return Err(Error::LengthMismatch { left: trees.len(), right: golds.len() });
    }
    Ok(trees.iter().map(SpanSet::from_tree).collect())
}

pub fn evaluate(
    gold: &Path,
    preds: &[std::path::PathBuf],
    baseline: Option<BaselineArg>,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<u8> {
    if preds.is_empty() && baseline.is_none() {
        return Err(Error::Config("nothing to evaluate: give --pred or --baseline".into()));
    }
    let golds: Vec<GoldSpans> = load_gold_trees(gold)?.iter().map(GoldSpans::from_tree).collect();
    if let Some(d) = out_dir {
        fs::create_dir_all(d)?;
    }
    let mut runs = Vec::with_capacity(preds.len());
    for (i, p) in preds.iter().enumerate() {
        let sets = pred_sets(p, &golds)?;
        let report = evaluation::evaluate(&sets, &golds)?;
        println!("== {}", p.display());
        print!("{}", report.table());
        if let Some(d) = out_dir {
            let prefix = if preds.len() == 1 { String::new() } else { format!("run{}_", i) };
            write_report(d, &prefix, &report)?;
        }
        runs.push(sets);
    }
    if runs.len() >= 2 {
        let (score, pairs) = evaluation::self_f1(&runs)?;
        println!("self-F1 {} over {} pairs", evaluation::fixed(&score, 3), pairs);
        if let Some(d) = out_dir {
            fs::write(d.join("self_f1.csv"), format!("pairs,self_f1\n{},{}\n", pairs, evaluation::fixed(&score, 6)))?;
        }
    }
    if let Some(b) = baseline {
        let (mode, name) = match b {
            BaselineArg::Left => (Baseline::Left, "left"),
            BaselineArg::Right => (Baseline::Right, "right"),
            BaselineArg::Random => (Baseline::Random, "random"),
        };
        let mut sets = Vec::with_capacity(golds.len());
        let lengths: Vec<usize> = golds.iter().map(|g| g.n.max(2)).collect();
        let trees = evaluation::baseline_trees(&lengths, mode, seed)?;
        for (g, t) in golds.iter().zip(&trees) {
            sets.push(if g.n >= 2 { SpanSet::from_parse(t) } else { SpanSet::new(g.n, [])? });
        }
        let report = evaluation::evaluate(&sets, &golds)?;
        println!("== baseline {}", name);
        print!("{}", report.table());
        if let Some(d) = out_dir {
            write_report(d, &format!("baseline_{}_", name), &report)?;
        }
    }
    Ok(0)
}

pub fn gradcheck(scope: &str, seed: u64, corrupt: bool) -> Result<u8> {
    let scope: Scope = scope.parse()?;
    let fault = corrupt.then_some(AdjointFault::Tanh);
    let report = check_objective(seed, scope, fault)?;
    println!("scope {}  coordinates {}", scope, report.checked);
    for (group, err) in &report.groups {
        println!("  {:<14} {:.3e}", group, err);
    }
    let pass = report.max_relative_error < TOLERANCE;
    println!("worst {:.3e}  {}", report.max_relative_error, if pass { "PASS" } else { "FAIL" });
    Ok(if pass { 0 } else { 1 })
}

#[allow(clippy::too_many_arguments)]
pub fn synth(
    out_dir: &Path,
    sentences: usize,
    valid: usize,
    test: usize,
    feature_dim: usize,
    noise: f64,
    max_len: usize,
    seed: u64,
) -> Result<u8> {
    if valid + test >= sentences {
        return Err(Error::Config("valid + test must leave training sentences".into()));
    }
    if max_len < 2 {
        return Err(Error::Config("max_len must be at least 2".into()));
    }
    let grammar = ToyGrammar::standard();
    let corpus = generate_synthetic(&grammar, &SynthConfig { sentences, feature_dim, noise, seed, max_len })?;
    fs::create_dir_all(out_dir)?;
    let train_end = sentences - valid - test;
    for (name, range) in [("train", 0..train_end), ("valid", train_end..train_end + valid), ("test", train_end + valid..sentences)] {
        let mut text = String::new();
        let mut trees = String::new();
        for i in range.clone() {
            text.push_str(&corpus.sentences[i].join(" "));
            text.push('\n');
            trees.push_str(&corpus.trees[i].to_string());
            trees.push('\n');
        }
        let rows = range.len();
        let data = corpus.features.data[range.start * feature_dim..range.end * feature_dim].to_vec();
        FeatureTable::new(rows, feature_dim, data)?.write(&out_dir.join(format!("{}.feat", name)))?;
        fs::write(out_dir.join(format!("{}.txt", name)), text)?;
        fs::write(out_dir.join(format!("{}.trees", name)), trees)?;
    }
    let conf = "# synthetic corpus run\n\
        train_captions = train.txt\n\
        train_features = train.feat\n\
        valid_captions = valid.txt\n\
        valid_features = valid.feat\n\
        valid_gold = valid.trees\n\
        captions_per_image = 1\n\
        output_dir = run\n\
        mode = text-only\n\
        nonterminals = 6\n\
        preterminals = 8\n\
        symbol_dim = 32\n\
        z_dim = 8\n\
        word_dim = 32\n\
        hidden_dim = 32\n\
        span_word_dim = 32\n\
        span_hidden_dim = 32\n\
        joint_dim = 32\n";
    fs::write(out_dir.join("train.conf"), conf)?;
    println!("wrote {} sentences to {}", sentences, out_dir.display());
    Ok(0)
}
