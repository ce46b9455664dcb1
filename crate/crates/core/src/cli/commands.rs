use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use sha1::{Digest, Sha1};

use super::{resolve, Cli, CliError, Command, RunConfig, RUN_MANIFEST};
use crate::data::{
    clean, parse_documents, read_documents, split, synth_corpus, validate_documents, write_documents, Document,
    SplitSpec,
};
use crate::evaluation::{
    ablation_run, consistency_kl, evaluate_routed, heatmap_svg, report, score_documents, AblationData,
    ConfusionMatrix, TTest, VariantSpec,
};
use crate::model::{argmax, git_blob_sha1, init_params, Checkpoint, Model, ModelConfig};
use crate::orthography::Orthography;
use crate::tokenization::{BpeModel, SubwordModel, WordPieceModel};
use crate::training::{finetune, pretrain, MetricsLog};

type Result<T> = std::result::Result<T, CliError>;

const BPE_VOCAB: &str = "bpe.vocab";
const BPE_MERGES: &str = "bpe.merges";
const WP_VOCAB: &str = "wp.vocab";

/// Hash of a file, or of a directory as sorted `relative-path hash` lines.
fn content_hash(path: &Path) -> Result<String> {
    if path.is_file() {
        return Ok(git_blob_sha1(&fs::read(path)?));
    }
    let mut lines = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != RUN_MANIFEST) {
                let rel = p.strip_prefix(path).unwrap_or(&p).to_string_lossy().replace('\\', "/");
                lines.push(format!("{rel} {}\n", git_blob_sha1(&fs::read(&p)?)));
            }
        }
    }
    lines.sort();
    let mut h = Sha1::new();
    for l in &lines {
        h.update(l.as_bytes());
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Writes the effective config preceded by comment lines naming the command
/// and every input with its content hash. The file is itself a valid config.
fn write_manifest(
    path: &Path,
    command: &str,
    inputs: &[(&str, &Path, &Path)],
    cfg: &RunConfig,
) -> Result<()> {
    let mut s = String::from("# orthoroberta run manifest\n");
    let _ = writeln!(s, "# version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "# command = {command}");
    for (name, given, resolved) in inputs {
        let _ = writeln!(s, "# input.{name} = {} {}", given.display(), content_hash(resolved)?);
    }
    s.push('\n');
    s.push_str(&cfg.to_ini());
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, s)?;
    Ok(())
}

/// Manifest path for a command whose artifact is a single file.
fn sidecar(file: &Path) -> PathBuf {
    let name = file.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    file.with_file_name(format!("{name}.{RUN_MANIFEST}"))
}

fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    if !dir.join("manifest.txt").is_file() {
        return Err(CliError::MissingCheckpoint(dir.to_path_buf()));
    }
    Ok(Checkpoint::load(dir)?)
}

fn load_tokenizers(dir: &Path) -> Result<(BpeModel, WordPieceModel)> {
    if [BPE_VOCAB, BPE_MERGES, WP_VOCAB].iter().any(|f| !dir.join(f).is_file()) {
        return Err(CliError::MissingCheckpoint(dir.to_path_buf()));
    }
    let bpe = BpeModel::load(&dir.join(BPE_VOCAB), &dir.join(BPE_MERGES))?;
    let wp = WordPieceModel::load(&dir.join(WP_VOCAB))?;
    Ok((bpe, wp))
}

/// Fresh model whose vocabulary sizes come from the tokenizers.
fn fresh_model(cfg: &ModelConfig, bpe: BpeModel, wp: WordPieceModel, seed: u64) -> Result<Model> {
    let config = ModelConfig {
        bpe_vocab: bpe.vocab_size(),
        wp_vocab: wp.vocab_size(),
        ..cfg.clone()
    };
    let params = init_params(&config, seed)?;
    Ok(Model::new(config, params, bpe, wp)?)
}

fn train_tokenizers(texts: &[String], cfg: &RunConfig) -> Result<(BpeModel, WordPieceModel)> {
    let bpe = BpeModel::train(texts.iter().map(String::as_str), cfg.model.bpe_vocab, cfg.pretrain.seed)?;
    let wp = WordPieceModel::train(texts.iter().map(String::as_str), cfg.model.wp_vocab, cfg.pretrain.seed)?;
    Ok((bpe, wp))
}

fn labeled(docs: &[Document], classes: &[usize; 4]) -> Result<()> {
    validate_documents(docs, classes)?;
    if let Some(d) = docs.iter().find(|d| d.label.is_none()) {
        return Err(CliError::Input(format!("document `{}` has no label", d.id)));
    }
    Ok(())
}

fn probs_cell(p: &[f64]) -> String {
    p.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

pub(super) fn dispatch(cli: &Cli, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let base = cli.data_dir.as_deref();
    let at = |p: &Path| resolve(base, p);
    let orth = Orthography::builtin();
    let name = cli.command.name();
    match &cli.command {
        Command::Clean { input, output, lang } => {
            let src = fs::read_to_string(at(input))?;
            let src = match lang {
                // bare lines take the given language instead of detection
                Some(l) => src
                    .lines()
                    .map(|line| {
                        if line.contains('\t') || line.trim().is_empty() {
                            line.to_string()
                        } else {
                            format!("{}\t{line}", l.code())
                        }
                    })
                    .collect::<Vec<_>>()
                    .join("\n"),
                None => src,
            };
            let docs = parse_documents(&src, "", &orth)?;
            let total = docs.len();
            let cleaned: Vec<Document> = docs
                .into_iter()
                .map(|d| Document {
                    text: clean(&d.text, d.language, &orth),
                    ..d
                })
                .filter(|d| {
                    let keep = !d.text.is_empty();
                    if !keep {
                        log::warn!("line {} is empty after cleaning; dropped", d.id);
                    }
                    keep
                })
                .collect();
            let dest = at(output);
            write_documents(&dest, &cleaned)?;
            write_manifest(&sidecar(&dest), name, &[("input", input, &at(input))], cfg)?;
            writeln!(out, "cleaned {} of {total} documents into {}", cleaned.len(), dest.display())?;
        }
        Command::Synth { output } => {
            let docs = synth_corpus(&cfg.synth, &orth)?;
            let dest = at(output);
            write_documents(&dest, &docs)?;
            write_manifest(&sidecar(&dest), name, &[], cfg)?;
            writeln!(out, "wrote {} documents to {}", docs.len(), dest.display())?;
        }
        Command::TrainTokenizers { input, out: dir } => {
            let docs = read_documents(&at(input), &orth)?;
            let texts: Vec<String> = docs.into_iter().map(|d| d.text).collect();
            let (bpe, wp) = train_tokenizers(&texts, cfg)?;
            let dir = at(dir);
            fs::create_dir_all(&dir)?;
            bpe.save(&dir.join(BPE_VOCAB), &dir.join(BPE_MERGES))?;
            wp.save(&dir.join(WP_VOCAB))?;
            write_manifest(&dir.join(RUN_MANIFEST), name, &[("input", input, &at(input))], cfg)?;
            writeln!(out, "bpe vocab {}, wordpiece vocab {}", bpe.vocab_size(), wp.vocab_size())?;
        }
        Command::Pretrain { input, tokenizers, out: dir } => {
            let docs = read_documents(&at(input), &orth)?;
            let (bpe, wp) = load_tokenizers(&at(tokenizers))?;
            let mut model = fresh_model(&cfg.model, bpe, wp, cfg.pretrain.seed)?;
            let texts: Vec<String> = docs.into_iter().map(|d| d.text).collect();
            let dir = at(dir);
            let mut log = MetricsLog::default();
            let rep = pretrain(&mut model, &texts, &cfg.pretrain, &orth.table, &mut log, Some(&dir))?;
            let mut ck = Checkpoint::new(model);
            ck.meta.insert("stage".into(), "pretrain".into());
            for (k, v) in cfg.pretrain.to_pairs() {
                ck.meta.insert(format!("pretrain.{k}"), v);
            }
            ck.save(&dir.join("final"))?;
            log.write(&dir.join("metrics.csv"))?;
            write_manifest(
                &dir.join(RUN_MANIFEST),
                name,
                &[("input", input, &at(input)), ("tokenizers", tokenizers, &at(tokenizers))],
                cfg,
            )?;
            match rep.epochs.last() {
                Some(e) => writeln!(out, "pretrained {} epochs, final loss {:.6}", rep.epochs.len(), e.loss)?,
                None => writeln!(out, "no pre-training epochs run")?,
            }
        }
        Command::Finetune { input, checkpoint, tokenizers, out: dir } => {
            let docs = read_documents(&at(input), &orth)?;
            let (mut model, source) = match (checkpoint, tokenizers) {
                (Some(c), _) => (load_checkpoint(&at(c))?.model, ("checkpoint", c)),
                (None, Some(t)) => {
                    let (bpe, wp) = load_tokenizers(&at(t))?;
                    (fresh_model(&cfg.model, bpe, wp, cfg.finetune.seed)?, ("tokenizers", t))
                }
                (None, None) => return Err(CliError::Usage("finetune needs --checkpoint or --tokenizers".into())),
            };
            labeled(&docs, &model.config.classes)?;
            let dir = at(dir);
            let mut log = MetricsLog::default();
            let rep = finetune(&mut model, &docs, &cfg.finetune, &orth.table, &mut log, Some(&dir))?;
            log.write(&dir.join("metrics.csv"))?;
            write_manifest(
                &dir.join(RUN_MANIFEST),
                name,
                &[("input", input, &at(input)), (source.0, source.1, &at(source.1))],
                cfg,
            )?;
            let best = &rep.epochs[rep.best_epoch.saturating_sub(1).min(rep.epochs.len().saturating_sub(1))];
            writeln!(
                out,
                "best epoch {} of {}: train accuracy {:.4}, validation loss {:.6}",
                rep.best_epoch,
                rep.epochs.len(),
                best.train_accuracy,
                best.val_loss
            )?;
        }
        Command::Evaluate { input, checkpoint, out: dir } => {
            let model = load_checkpoint(&at(checkpoint))?.model;
            let docs = read_documents(&at(input), &orth)?;
            labeled(&docs, &model.config.classes)?;
            let scored = score_documents(&model, &docs)?;
            let (mats, m) = evaluate_routed(&scored)?;
            let kl = consistency_kl(&model, &docs, &orth.table, cfg.finetune.seed)?;
            let dir = at(dir);
            fs::create_dir_all(&dir)?;
            fs::write(
                dir.join("metrics.csv"),
                format!(
                    "accuracy,precision,recall,f1,log_loss,consistency_kl\n{},{},{},{},{},{kl}\n",
                    m.accuracy, m.precision, m.recall, m.f1, m.log_loss
                ),
            )?;
            for (lang, mat) in &mats {
                fs::write(dir.join(format!("confusion-{}.csv", lang.code())), mat.to_csv())?;
                fs::write(dir.join(format!("confusion-{}.svg", lang.code())), heatmap_svg(mat, lang.name()))?;
            }
            let mut preds = String::from("id,language,label,predicted,probs\n");
            for s in &scored {
                let _ = writeln!(
                    preds,
                    "{},{},{},{},{}",
                    s.id,
                    s.language.code(),
                    s.label,
                    argmax(&s.probs),
                    probs_cell(&s.probs)
                );
            }
            fs::write(dir.join("predictions.csv"), preds)?;
            write_manifest(
                &dir.join(RUN_MANIFEST),
                name,
                &[("input", input, &at(input)), ("checkpoint", checkpoint, &at(checkpoint))],
                cfg,
            )?;
            writeln!(
                out,
                "accuracy {:.4}  macro-F1 {:.4}  log loss {:.4}  consistency KL {:.6}",
                m.accuracy, m.f1, m.log_loss, kl
            )?;
        }
        Command::Ablate { input, out: dir } => {
            let docs = read_documents(&at(input), &orth)?;
            labeled(&docs, &cfg.model.classes)?;
            // validation is carved out of the training part by fine-tuning itself
            let outer = SplitSpec {
                val_fraction: 0.0,
                ..cfg.split.clone()
            };
            let parts = split(&docs, &outer)?;
            let texts: Vec<String> = parts.train.iter().map(|d| d.text.clone()).collect();
            let (bpe, wp) = train_tokenizers(&texts, cfg)?;
            let model = ModelConfig {
                bpe_vocab: bpe.vocab_size(),
                wp_vocab: wp.vocab_size(),
                ..cfg.model.clone()
            };
            let data = AblationData {
                pretrain_texts: texts,
                train: parts.train,
                test: parts.test,
                bpe,
                wp,
                model,
                pretrain: cfg.pretrain.clone(),
                finetune: cfg.finetune.clone(),
                table: orth.table.clone(),
            };
            let variants: Vec<VariantSpec> = cfg
                .ablate
                .variants
                .iter()
                .map(|v| VariantSpec::preset(v).ok_or_else(|| CliError::Config(format!("unknown variant `{v}`"))))
                .collect::<Result<_>>()?;
            let r = ablation_run(&variants, &data, &cfg.ablate.seeds)?;
            let dir = at(dir);
            report(&r, &dir)?;
            write_manifest(&dir.join(RUN_MANIFEST), name, &[("input", input, &at(input))], cfg)?;
            for v in &r.variants {
                writeln!(
                    out,
                    "{:<18} accuracy {:.4}  log loss {:.4}  consistency KL {:.6}",
                    v.spec.name, v.mean.accuracy, v.mean.log_loss, v.mean_kl
                )?;
            }
            for (a, b, t) in &r.ttests {
                match t {
                    TTest::Value { t, p, .. } => writeln!(out, "{a} vs {b}: t = {t:.4}, p = {p:.4}")?,
                    TTest::Degenerate { mean_diff } => writeln!(out, "{a} vs {b}: identical spread, mean diff {mean_diff}")?,
                }
            }
        }
        Command::Classify { checkpoint, text } => {
            let model = load_checkpoint(&at(checkpoint))?.model;
            let texts: Vec<String> = if text.is_empty() {
                std::io::stdin()
                    .lock()
                    .lines()
                    .collect::<std::io::Result<Vec<_>>>()?
                    .into_iter()
                    .filter(|l| !l.trim().is_empty())
                    .collect()
            } else {
                text.clone()
            };
            for t in &texts {
                let p = model.predict(t, &orth)?;
                writeln!(
                    out,
                    "{}\t{:.4}\t{}\t{}",
                    p.language.code(),
                    p.confidence,
                    p.class,
                    p.probs.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(" ")
                )?;
            }
        }
        Command::Report { input, out: dir } => {
            let src = at(input);
            let mut files: Vec<PathBuf> = fs::read_dir(&src)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            files.retain(|p| {
                let n = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                n.starts_with("confusion") && n.ends_with(".csv")
            });
            files.sort();
            if files.is_empty() {
                return Err(CliError::Input(format!("no confusion-*.csv files in {}", src.display())));
            }
            let dir = at(dir);
            fs::create_dir_all(&dir)?;
            let mut summary = String::from("matrix,total,correct,accuracy\n");
            for f in &files {
                let stem = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let m = ConfusionMatrix::from_csv(&fs::read_to_string(f)?)
                    .map_err(|e| CliError::Input(format!("{}: {e}", f.display())))?;
                fs::write(dir.join(format!("{stem}.svg")), heatmap_svg(&m, &stem))?;
                let acc = if m.total() == 0 { 0.0 } else { m.trace() as f64 / m.total() as f64 };
                let _ = writeln!(summary, "{stem},{},{},{acc}", m.total(), m.trace());
            }
            fs::write(dir.join("summary.csv"), &summary)?;
            write_manifest(&dir.join(RUN_MANIFEST), name, &[("input", input, &src)], cfg)?;
            writeln!(out, "rendered {} matrices into {}", files.len(), dir.display())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orthography::LanguageId;

    #[test]
    fn directory_hash_ignores_order_and_the_run_manifest() {
        let a = tempfile::tempdir().unwrap();
        fs::write(a.path().join("x"), "1").unwrap();
        fs::create_dir(a.path().join("sub")).unwrap();
        fs::write(a.path().join("sub").join("y"), "2").unwrap();
        let h = content_hash(a.path()).unwrap();
        fs::write(a.path().join(RUN_MANIFEST), "anything").unwrap();
        assert_eq!(content_hash(a.path()).unwrap(), h);
        fs::write(a.path().join("x"), "3").unwrap();
        assert_ne!(content_hash(a.path()).unwrap(), h);
    }

    #[test]
    fn sidecar_sits_next_to_the_file() {
        assert_eq!(sidecar(Path::new("d/docs.tsv")), PathBuf::from(format!("d/docs.tsv.{RUN_MANIFEST}")));
    }

    #[test]
    fn unlabeled_input_is_an_input_error() {
        let d = Document {
            id: "a".into(),
            text: "x".into(),
            label: None,
            language: LanguageId::Arabic,
        };
        assert!(matches!(labeled(&[d], &[5, 5, 5, 4]), Err(CliError::Input(_))));
    }
}
