use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use rationale_core::eval::{robustness_sweep, DEFAULT_KS};
use rationale_core::graph;
use rationale_core::trainer::STOPPING_K;
use rationale_core::{
    BlockDataset, DatasetSplit, EpochRecord, Error, InputFormat, InteractionGraph, LossBreakdown,
    Perturbation, Trainer,
};

use crate::failure::{Failure, Outcome};
use crate::settings::{write_manifest, ConfigArgs};

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Format {
    /// user<TAB>item[<TAB>rating]
    Tsv,
    /// fields separated by spaces or tabs
    Whitespace,
}

impl From<Format> for InputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Tsv => InputFormat::Tsv,
            Format::Whitespace => InputFormat::Whitespace,
        }
    }
}

fn comma_list<T: std::str::FromStr>(s: &str, what: &str) -> Outcome<Vec<T>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Failure::config(format!("{what}: cannot parse `{}`", p.trim())))
        })
        .collect()
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn parent_dir(file: &Path) -> PathBuf {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn load_split(dir: &Path) -> Outcome<DatasetSplit> {
    if !dir.is_dir() {
        return Err(Failure::dataset(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("dataset directory {} not found", dir.display()),
        ))));
    }
    DatasetSplit::load(dir).map_err(Failure::dataset)
}

fn write_interactions(path: &Path, g: &InteractionGraph) -> Outcome {
    let catalog = g.catalog();
    let mut w = BufWriter::new(File::create(path)?);
    for e in g.edges() {
        let (u, i) = (&catalog.users[e.user], &catalog.items[e.item]);
        match catalog.ratings.get(e) {
            Some(r) => writeln!(w, "{u}\t{i}\t{r}")?,
            None => writeln!(w, "{u}\t{i}")?,
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `row` into a labelled CSV, replacing any row whose first column
/// matches, so reruns leave the file unchanged.
fn upsert_csv(path: &Path, header: &str, row: &str) -> Outcome {
    let label = row.split(',').next().unwrap_or_default();
    let existing = fs::read_to_string(path).unwrap_or_default();
    let mut lines: Vec<&str> = existing.lines().collect();
    match lines.first() {
        None => lines.push(header),
        Some(&h) if h != header => {
            return Err(Failure::config(format!(
                "{} has columns `{h}`, expected `{header}`",
                path.display()
            )))
        }
        Some(_) => {}
    }
    match lines
        .iter()
        .skip(1)
        .position(|l| l.split(',').next() == Some(label))
    {
        Some(i) => lines[i + 1] = row,
        None => lines.push(row),
    }
    fs::write(path, lines.join("\n") + "\n")?;
    Ok(())
}

/// Appends `row`, writing `header` first when the file is new or empty.
fn append_csv(path: &Path, header: &str, row: &str) -> Outcome {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{header}")?;
    }
    writeln!(f, "{row}")?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Raw interaction file
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "tsv")]
    pub format: Format,
    /// Output directory for interactions.tsv
    #[arg(long)]
    pub out: PathBuf,
}

pub fn ingest(a: &IngestArgs) -> Outcome {
    let got = graph::ingest(&a.input, a.format.into()).map_err(Failure::dataset)?;
    let g = &got.graph;
    fs::create_dir_all(&a.out)?;
    write_interactions(&a.out.join("interactions.tsv"), g)?;
    write_manifest(
        &a.out,
        "ingest",
        &[
            ("input", display(&a.input)),
            ("format", format!("{:?}", a.format).to_lowercase()),
            ("lines", got.lines.to_string()),
            ("duplicates", got.duplicates.to_string()),
        ],
        None,
    )?;
    eprintln!(
        "ingested {} lines: {} users, {} items, {} interactions, {} duplicates dropped",
        got.lines,
        g.num_users(),
        g.num_items(),
        g.num_edges(),
        got.duplicates
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    /// Interaction file
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "tsv")]
    pub format: Format,
    /// train,valid,test fractions
    #[arg(long, default_value = "0.7,0.05,0.25")]
    pub ratios: String,
    #[arg(long, default_value_t = 2023)]
    pub seed: u64,
    /// Output directory for train/valid/test.tsv and split.json
    #[arg(long)]
    pub out: PathBuf,
}

pub fn split(a: &SplitArgs) -> Outcome {
    let r: Vec<f64> = comma_list(&a.ratios, "--ratios")?;
    let ratios: [f64; 3] = r
        .try_into()
        .map_err(|_| Failure::config("--ratios needs exactly three values"))?;
    let got = graph::ingest(&a.input, a.format.into()).map_err(Failure::dataset)?;
    let s = graph::split(&got.graph, ratios, a.seed)?;
    s.save(&a.out).map_err(Failure::from)?;
    write_manifest(
        &a.out,
        "split",
        &[
            ("input", display(&a.input)),
            ("ratios", a.ratios.clone()),
            ("seed", a.seed.to_string()),
        ],
        None,
    )?;
    let [tr, va, te] = s.counts();
    eprintln!(
        "split {} users x {} items into {tr} train, {va} valid, {te} test edges",
        s.num_users, s.num_items
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory written by `split`
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint; only --epochs is honoured alongside it
    #[arg(long, value_name = "CKPT")]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

pub const METRICS_HEADER_TAIL: &str = "valid_recall@20,grad_norm";

fn metrics_row(r: &EpochRecord) -> String {
    let recall = r.valid_recall.map(|v| v.to_string()).unwrap_or_default();
    format!("{},{recall},{}", r.losses.csv_row(r.epoch), r.max_grad_norm)
}

pub fn train(a: &TrainArgs) -> Outcome {
    let resolved = a.config.resolve()?;
    let split = load_split(&a.data)?;
    let mut trainer = match &a.resume {
        Some(ckpt) => {
            let mut t = Trainer::load(ckpt, split).map_err(|e| match e {
                Error::Io(_) => Failure::dataset(e),
                other => other.into(),
            })?;
            if let Some(n) = a.config.epochs {
                t.set_max_epochs(n);
            }
            eprintln!("resumed {} at epoch {}", ckpt.display(), t.epoch());
            t
        }
        None => {
            eprintln!("configuration:\n{}", resolved.describe().trim_end());
            Trainer::new(resolved.config.clone(), split)?
        }
    };
    let mut inputs = vec![("data", display(&a.data))];
    if let Some(c) = &a.resume {
        inputs.push(("resume", display(c)));
    }
    write_manifest(&a.out, "train", &inputs, Some(trainer.config()))?;

    let metrics = a.out.join("metrics.csv");
    if a.resume.is_none() && metrics.exists() {
        fs::remove_file(&metrics)?;
    }
    let header = format!("{},{METRICS_HEADER_TAIL}", LossBreakdown::CSV_HEADER);
    let ckpt = a.out.join("checkpoint.ckpt");
    let max = trainer.config().max_epochs;
    while trainer.epoch() < max && !trainer.early_stop().stopped {
        let record = match trainer.train_epoch() {
            Ok(r) => r,
            Err(e @ Error::NonFinite(_)) => {
                trainer.save(&ckpt)?;
                return Err(Failure::from(e).with_checkpoint(&ckpt));
            }
            Err(e) => return Err(e.into()),
        };
        append_csv(&metrics, &header, &metrics_row(&record))?;
        trainer.save(&ckpt)?;
        eprintln!(
            "epoch {}/{max} total={:.5} valid_recall@{STOPPING_K}={} ({:.2}s)",
            record.epoch,
            record.losses.total,
            record
                .valid_recall
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "-".into()),
            record.seconds
        );
    }
    if trainer.epoch() == 0 {
        trainer.save(&ckpt)?;
    }
    let report = trainer.test_report(&DEFAULT_KS)?;
    fs::write(a.out.join("eval_report.json"), report.to_json() + "\n")?;
    upsert_csv(&a.out.join("eval.csv"), &report.csv_header(), &report.csv_row("train"))?;
    let es = trainer.early_stop();
    eprintln!(
        "finished at epoch {} (best epoch {}{}); test {}",
        trainer.epoch(),
        es.best_epoch,
        if es.stopped { ", stopped early" } else { "" },
        summary(&report.ks, &report.recall, &report.ndcg)
    );
    Ok(())
}

fn summary(ks: &[usize], recall: &[f64], ndcg: &[f64]) -> String {
    ks.iter()
        .zip(recall.iter().zip(ndcg))
        .map(|(k, (r, n))| format!("recall@{k}={r:.4} ndcg@{k}={n:.4}"))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory for eval_report.json and eval.csv
    #[arg(long)]
    pub out: PathBuf,
    /// Cutoffs, comma separated
    #[arg(long, default_value = "10,20,40")]
    pub ks: String,
    /// Row label in eval.csv; a rerun with the same label replaces its row
    #[arg(long, default_value = "eval")]
    pub label: String,
}

fn load_trainer(data: &Path, ckpt: &Path) -> Outcome<Trainer> {
    let split = load_split(data)?;
    if !ckpt.is_file() {
        return Err(Failure::dataset(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("checkpoint {} not found", ckpt.display()),
        ))));
    }
    Ok(Trainer::load(ckpt, split)?)
}

pub fn eval(a: &EvalArgs) -> Outcome {
    let ks: Vec<usize> = comma_list(&a.ks, "--ks")?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(Failure::config("--ks needs positive cutoffs"));
    }
    let trainer = load_trainer(&a.data, &a.checkpoint)?;
    let report = trainer.test_report(&ks)?;
    fs::create_dir_all(&a.out)?;
    write_manifest(
        &a.out,
        "eval",
        &[
            ("data", display(&a.data)),
            ("checkpoint", display(&a.checkpoint)),
            ("ks", a.ks.clone()),
        ],
        Some(trainer.config()),
    )?;
    fs::write(a.out.join("eval_report.json"), report.to_json() + "\n")?;
    upsert_csv(&a.out.join("eval.csv"), &report.csv_header(), &report.csv_row(&a.label))?;
    eprintln!("{} users: {}", report.users, summary(&report.ks, &report.recall, &report.ndcg));
    Ok(())
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for sweep.csv
    #[arg(long)]
    pub out: PathBuf,
    /// noise adds random non-edges; sparsify drops edges
    #[arg(long, default_value = "noise", value_name = "noise|sparsify")]
    pub perturb: String,
    /// Perturbation levels, comma separated
    #[arg(long, default_value = "0,0.1,0.2")]
    pub levels: String,
    #[command(flatten)]
    pub config: ConfigArgs,
}

pub fn sweep(a: &SweepArgs) -> Outcome {
    let resolved = a.config.resolve()?;
    let kind: Perturbation = a.perturb.parse()?;
    let levels: Vec<f64> = comma_list(&a.levels, "--levels")?;
    if levels.iter().any(|l| !(0.0..1.0).contains(l)) {
        return Err(Failure::config("--levels must lie in [0, 1)"));
    }
    let split = load_split(&a.data)?;
    eprintln!("configuration:\n{}", resolved.describe().trim_end());
    write_manifest(
        &a.out,
        "sweep",
        &[
            ("data", display(&a.data)),
            ("perturb", kind.to_string()),
            ("levels", a.levels.clone()),
        ],
        Some(&resolved.config),
    )?;
    let rows = robustness_sweep(&resolved.config, &split, kind, &levels)?;
    let mut text = format!("{}\n", rationale_core::SweepRow::CSV_HEADER);
    for r in &rows {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    fs::write(a.out.join("sweep.csv"), text)?;

    let mut order: Vec<_> = rows.iter().collect();
    order.sort_by(|x, y| x.level.total_cmp(&y.level));
    let mut monotone = true;
    for w in order.windows(2) {
        let ok = w[1].recall20 <= w[0].recall20;
        monotone &= ok;
        eprintln!(
            "level {} -> {}: recall@20 {:.4} -> {:.4}{}",
            w[0].level,
            w[1].level,
            w[0].recall20,
            w[1].recall20,
            if ok { "" } else { "  (not degraded)" }
        );
    }
    eprintln!(
        "recall@20 {} with the {kind} level",
        if monotone { "is non-increasing" } else { "is not monotone" }
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output CSV file
    #[arg(long)]
    pub out: PathBuf,
    /// Keep only the N highest-scoring edges
    #[arg(long)]
    pub top: Option<usize>,
}

pub fn export_rationales(a: &ExportArgs) -> Outcome {
    let trainer = load_trainer(&a.data, &a.checkpoint)?;
    let scores = trainer.rationale_scores_of(trainer.best_params())?;
    let train = &trainer.split().train;
    let catalog = &trainer.split().catalog;
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.sort_by(|&x, &y| scores.alpha_bar[y].total_cmp(&scores.alpha_bar[x]));
    order.truncate(a.top.unwrap_or(usize::MAX));

    let dir = parent_dir(&a.out);
    fs::create_dir_all(&dir)?;
    let mut w = BufWriter::new(File::create(&a.out)?);
    writeln!(w, "user_id,item_id,score,probability")?;
    for &k in &order {
        let e = train[k];
        writeln!(
            w,
            "{},{},{},{}",
            catalog.users[e.user], catalog.items[e.item], scores.alpha_bar[k], scores.prob[k]
        )?;
    }
    w.flush()?;
    write_manifest(
        &dir,
        "export-rationales",
        &[
            ("data", display(&a.data)),
            ("checkpoint", display(&a.checkpoint)),
            ("out", display(&a.out)),
            ("top", a.top.map(|n| n.to_string()).unwrap_or_else(|| "all".into())),
        ],
        None,
    )?;
    eprintln!("wrote {} of {} training edges to {}", order.len(), train.len(), a.out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output interaction file (TSV)
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = BlockDataset::default().users)]
    pub users: usize,
    #[arg(long, default_value_t = BlockDataset::default().items)]
    pub items: usize,
    /// Number of user/item communities
    #[arg(long, default_value_t = BlockDataset::default().blocks)]
    pub blocks: usize,
    /// Interactions per user
    #[arg(long, default_value_t = BlockDataset::default().per_user)]
    pub per_user: usize,
    /// Fraction of each user's interactions drawn outside their block
    #[arg(long, default_value_t = BlockDataset::default().noise)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn synth(a: &SynthArgs) -> Outcome {
    let blocks = BlockDataset {
        users: a.users,
        items: a.items,
        blocks: a.blocks,
        per_user: a.per_user,
        noise: a.noise,
        seed: a.seed,
    };
    let g = blocks.generate()?;
    let dir = parent_dir(&a.out);
    fs::create_dir_all(&dir)?;
    write_interactions(&a.out, &g)?;
    write_manifest(&dir, "synth", &[("out", display(&a.out)), ("dataset", format!("{blocks:?}"))], None)?;
    eprintln!(
        "generated {} users x {} items, {} interactions",
        g.num_users(),
        g.num_items(),
        g.num_edges()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rationale_core::graph::DEFAULT_SPLIT;

    #[test]
    fn comma_lists_parse_and_reject() {
        assert_eq!(comma_list::<f64>("0, 0.1,0.2", "x").unwrap(), vec![0.0, 0.1, 0.2]);
        assert_eq!(comma_list::<usize>("a", "x").unwrap_err().kind.exit_code(), 3);
    }

    #[test]
    fn append_writes_header_once() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        append_csv(&p, "h", "1").unwrap();
        append_csv(&p, "h", "2").unwrap();
        assert_eq!(fs::read_to_string(p).unwrap(), "h\n1\n2\n");
    }

    #[test]
    fn upsert_replaces_rows_by_label() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        upsert_csv(&p, "label,x", "a,1").unwrap();
        upsert_csv(&p, "label,x", "b,2").unwrap();
        upsert_csv(&p, "label,x", "a,3").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "label,x\na,3\nb,2\n");
        assert_eq!(upsert_csv(&p, "label,y", "a,1").unwrap_err().kind.exit_code(), 3);
    }

    #[test]
    fn default_split_matches_flag_default() {
        let r: Vec<f64> = comma_list("0.7,0.05,0.25", "r").unwrap();
        assert_eq!(r, DEFAULT_SPLIT.to_vec());
    }
}
