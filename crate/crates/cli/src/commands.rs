use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use maskhead::dataset::{
    open_dataset, rle_decode, rle_encode, validate_record, write_dataset, DatasetManifest, DatasetReader, RleMask,
    Split,
};
use maskhead::grid::LabelGrid;
use maskhead::infer::{infer_record, PredictedInstance};
use maskhead::metrics::{extract_gt_instances, instances_from_id_map, map50, EvalReport, GtInstance, IouAccumulator};
use maskhead::mlp::{load_weights_for, save_weights};
use maskhead::oracle_tasks::{gen_gaussian_bags, inject_label_noise, GaussianBagSpec};
use maskhead::pgm::{encode_pgm, read_pgm, write_pgm};
use maskhead::trainer::{self, TrainData, TrainLog};
use maskhead::Head;
use rayon::prelude::*;

use crate::config::hex_sha256;
use crate::{io_err, CliError, GenArgs, RunConfig};

type Result<T, E = CliError> = std::result::Result<T, E>;

fn say(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(io_err("<stdout>"))
}

fn open(path: &Path) -> Result<DatasetReader> {
    if !path.is_file() {
        return Err(CliError::DatasetNotFound(path.to_path_buf()));
    }
    Ok(open_dataset(path)?)
}

fn dataset_path(cfg: &RunConfig, positional: Option<PathBuf>) -> Result<PathBuf> {
    positional
        .or_else(|| cfg.dataset.clone())
        .ok_or_else(|| CliError::Config("no dataset given".into()))
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg
        .out
        .clone()
        .ok_or_else(|| CliError::Config("--out is required".into()))?;
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    Ok(dir)
}

fn check_classes(cfg: &RunConfig, manifest: &DatasetManifest) -> Result<()> {
    match &cfg.classes {
        Some(names) if names != &manifest.class_names => Err(CliError::Config(format!(
            "classes {:?} do not match the dataset's {:?}",
            names, manifest.class_names
        ))),
        _ => Ok(()),
    }
}

fn check_image_id(id: &str) -> Result<()> {
    let bad = id.is_empty() || id == "." || id == ".." || id.contains(['/', '\\', '\0']);
    if bad {
        return Err(maskhead::Error::Malformed(format!("image id {id:?} is not usable as a file name")).into());
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(io_err(path))
}

/// Runs `f` over `items` in order, on a pool of `threads` workers if more than one.
fn par_map<T, R, F>(threads: usize, items: Vec<T>, f: F) -> Result<Vec<R>>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    if threads <= 1 {
        return Ok(items.into_iter().map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| items.into_par_iter().map(f).collect()))
}

pub fn inspect(path: &Path, unlabeled: bool, out: &mut dyn Write) -> Result<()> {
    let reader = open(path)?;
    let manifest = reader.manifest();
    let split = if unlabeled { Split::Infer } else { Split::Train };
    let mut text = String::from("manifest:\n");
    text += &serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text += "\n";

    let mut histogram = vec![0usize; manifest.num_classes()];
    let mut violations = Vec::new();
    for i in 0..reader.len() {
        match reader.read(i) {
            Ok(rec) => {
                for c in rec.label_indices() {
                    if let Some(n) = histogram.get_mut(c) {
                        *n += 1;
                    }
                }
                for v in validate_record(&rec, manifest, split) {
                    violations.push(format!("record {i} ({}): {v}", rec.image_id));
                }
            }
            Err(e) => violations.push(format!("record {i}: {e}")),
        }
    }
    text += "label histogram:\n";
    for (name, n) in manifest.class_names.iter().zip(&histogram) {
        let _ = writeln!(text, "{name}\t{n}");
    }
    let _ = writeln!(text, "violations: {}", violations.len());
    for v in &violations {
        let _ = writeln!(text, "  {v}");
    }
    say(out, &text)?;
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::Violations(violations.len()))
    }
}

pub fn gen_synthetic(args: &GenArgs, out: &mut dyn Write) -> Result<()> {
    if !(0.0..=1.0).contains(&args.label_noise) {
        return Err(CliError::Config(format!(
            "label noise must be in [0, 1], got {}",
            args.label_noise
        )));
    }
    let spec = GaussianBagSpec {
        classes: args.num_classes,
        embed_dim: args.embed_dim,
        d: args.d,
        positives_per_bag: args.positives,
        mean_scale: args.mu,
        noise: args.sigma,
        bag_count: args.bags + args.test_bags,
        seed: args.seed,
        ..GaussianBagSpec::default()
    };
    let task = gen_gaussian_bags(&spec)?;
    let gt_dir = args.out.join("gt");
    std::fs::create_dir_all(&gt_dir).map_err(io_err(&gt_dir))?;

    let mut train = task.records[..args.bags].to_vec();
    let flipped = inject_label_noise(&mut train, args.label_noise, args.seed);
    let test = &task.records[args.bags..];
    for (records, name) in [(&train[..], "train.usam"), (test, "test.usam")] {
        let manifest = DatasetManifest {
            record_count: records.len(),
            ..task.manifest.clone()
        };
        write_dataset(&manifest, records, &args.out.join(name))?;
    }
    for (rec, gt) in test.iter().zip(&task.ground_truth[args.bags..]) {
        write_pgm(&gt_dir.join(format!("{}.pgm", rec.image_id)), gt, &[])?;
    }
    write_file(
        &args.out.join("classes.txt"),
        (spec.class_names().join("\n") + "\n").as_bytes(),
    )?;
    say(
        out,
        &format!(
            "wrote {} train ({} labels flipped) and {} test bags to {}\n",
            train.len(),
            flipped.len(),
            test.len(),
            args.out.display()
        ),
    )
}

fn load_training_data(cfg: &RunConfig, dataset: Option<PathBuf>) -> Result<(DatasetManifest, TrainData<f64>)> {
    let path = dataset_path(cfg, dataset)?;
    let reader = open(&path)?;
    check_classes(cfg, reader.manifest())?;
    let records = reader.read_all()?;
    if records.is_empty() {
        return Err(maskhead::Error::EmptyDataset.into());
    }
    let data = TrainData::from_records(&records, cfg.train.holdout_fraction, cfg.train.seed);
    Ok((reader.manifest().clone(), data))
}

/// Weight file, hash sidecar and training log.
fn save_head(dir: &Path, name: &str, head: &Head, log: &TrainLog, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let weights = dir.join(format!("{name}.weights"));
    save_weights(head, &weights)?;
    let bytes = std::fs::read(&weights).map_err(io_err(&weights))?;
    let sidecar = format!("config_hash={}\nweights_sha256={}\n", cfg.hash(), hex_sha256(&bytes));
    write_file(&dir.join(format!("{name}.weights.hash")), sidecar.as_bytes())?;
    write_file(&dir.join(format!("{name}.log.tsv")), log.to_tsv().as_bytes())?;
    let acc = log
        .final_accuracy()
        .map_or_else(|| "n/a".to_string(), |a| format!("{a:.4}"));
    say(
        out,
        &format!(
            "{name}: {} epochs, holdout accuracy {acc}, weights {}\n",
            log.epochs.len(),
            weights.display()
        ),
    )
}

fn checkpoint_dir(cfg: &RunConfig, dir: &Path, name: &str) -> Result<Option<PathBuf>> {
    if cfg.train.checkpoint_every == 0 {
        return Ok(None);
    }
    let ckpt = dir.join(format!("{name}_checkpoints"));
    std::fs::create_dir_all(&ckpt).map_err(io_err(&ckpt))?;
    Ok(Some(ckpt))
}

pub fn train_teacher(cfg: &RunConfig, dataset: Option<PathBuf>, out: &mut dyn Write) -> Result<()> {
    let (_, data) = load_training_data(cfg, dataset)?;
    let dir = out_dir(cfg)?;
    let ckpt = checkpoint_dir(cfg, &dir, "teacher")?;
    let (head, log) = trainer::train_teacher(&data, &cfg.train, ckpt.as_deref())?;
    save_head(&dir, "teacher", &head, &log, cfg, out)
}

pub fn train_student(cfg: &RunConfig, dataset: Option<PathBuf>, teacher: &Path, out: &mut dyn Write) -> Result<()> {
    let (manifest, data) = load_training_data(cfg, dataset)?;
    let teacher: Head = load_weights_for(teacher, manifest.embed_dim, manifest.num_classes())?;
    let dir = out_dir(cfg)?;
    let ckpt = checkpoint_dir(cfg, &dir, "student")?;
    let (head, log) = trainer::train_student(&data, &teacher, &cfg.train, ckpt.as_deref())?;
    save_head(&dir, "student", &head, &log, cfg, out)
}

fn candidates_tsv(provenance: &[String], instances: &[PredictedInstance], indices: &[usize]) -> String {
    let mut s = String::new();
    for p in provenance {
        let _ = writeln!(s, "# {p}");
    }
    s += "mask_index\tclass\tscore\trle\n";
    for (inst, idx) in instances.iter().zip(indices) {
        let runs: Vec<String> = rle_encode(&inst.mask).runs.iter().map(ToString::to_string).collect();
        let _ = writeln!(s, "{idx}\t{}\t{}\t{}", inst.class, inst.score, runs.join(","));
    }
    s
}

pub fn infer(cfg: &RunConfig, dataset: Option<PathBuf>, weights: &Path, out: &mut dyn Write) -> Result<()> {
    let path = dataset_path(cfg, dataset)?;
    let reader = open(&path)?;
    let manifest = reader.manifest().clone();
    check_classes(cfg, &manifest)?;
    let head: Head = load_weights_for(weights, manifest.embed_dim, manifest.num_classes())?;
    let weight_bytes = std::fs::read(weights).map_err(io_err(weights))?;
    let provenance = vec![
        format!("config_hash={}", cfg.hash()),
        format!("weights_sha256={}", hex_sha256(&weight_bytes)),
    ];
    let dir = out_dir(cfg)?;

    let results = par_map(cfg.threads, (0..reader.len()).collect(), |i| -> Result<_> {
        let rec = reader.read(i)?;
        check_image_id(&rec.image_id)?;
        let (semantic, instances) = infer_record(&head, &rec, manifest.mask_h, manifest.mask_w, &cfg.infer)?;
        let indices: Vec<usize> = semantic.kept.iter().map(|c| c.mask_index).collect();
        let pgm = encode_pgm(&semantic.labels, &provenance);
        let tsv = candidates_tsv(&provenance, &instances, &indices);
        Ok((rec.image_id, pgm, tsv))
    })?;

    let mut seen = BTreeSet::new();
    let mut written = 0;
    for r in results {
        let (id, pgm, tsv) = r?;
        if !seen.insert(id.clone()) {
            return Err(maskhead::Error::Malformed(format!("duplicate image id {id:?}")).into());
        }
        write_file(&dir.join(format!("{id}.pgm")), &pgm)?;
        write_file(&dir.join(format!("{id}.candidates.tsv")), tsv.as_bytes())?;
        written += 1;
    }
    write_file(
        &dir.join("classes.txt"),
        (manifest.class_names.join("\n") + "\n").as_bytes(),
    )?;
    say(out, &format!("wrote {written} label maps to {}\n", dir.display()))
}

fn pgm_ids(dir: &Path) -> Result<BTreeSet<String>> {
    let mut ids = BTreeSet::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let name = entry.map_err(io_err(dir))?.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some(id) = name.strip_suffix(".pgm") {
            if !id.ends_with(".inst") {
                ids.insert(id.to_string());
            }
        }
    }
    Ok(ids)
}

fn read_classes(cfg: &RunConfig, pred_dir: &Path) -> Result<Vec<String>> {
    if let Some(names) = &cfg.classes {
        return Ok(names.clone());
    }
    let path = pred_dir.join("classes.txt");
    let text = std::fs::read_to_string(&path)
        .map_err(|_| CliError::Config(format!("no --classes given and {} is unreadable", path.display())))?;
    let names: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if names.is_empty() {
        return Err(CliError::Config(format!("{} lists no classes", path.display())));
    }
    Ok(names)
}

/// Scored instances from a candidates sidecar.
fn parse_candidates(text: &str, h: usize, w: usize, classes: usize) -> Result<Vec<PredictedInstance>> {
    let malformed = |line: &str| CliError::from(maskhead::Error::Malformed(format!("candidate line {line:?}")));
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let fields: Vec<&str> = line.split('\t').collect();
        let [_, class, score, rle] = fields[..] else {
            return Err(malformed(line));
        };
        let class: usize = class.parse().map_err(|_| malformed(line))?;
        let score: f64 = score.parse().map_err(|_| malformed(line))?;
        if class >= classes {
            return Err(maskhead::Error::LabelOutOfRange {
                label: class + 1,
                classes,
            }
            .into());
        }
        let runs = rle
            .split(',')
            .map(|r| r.parse::<u32>().map_err(|_| malformed(line)))
            .collect::<Result<Vec<_>>>()?;
        let mask = rle_decode(&RleMask { runs }, h, w)?;
        out.push(PredictedInstance { class, score, mask });
    }
    Ok(out)
}

struct Scored {
    acc: IouAccumulator,
    preds: Vec<PredictedInstance>,
    gts: Vec<GtInstance>,
    provenance: String,
}

fn score_image(id: &str, pred_dir: &Path, gt_dir: &Path, classes: usize) -> Result<Scored> {
    let (pred, comments) = read_pgm(&pred_dir.join(format!("{id}.pgm")))?;
    let (gt, _) = read_pgm(&gt_dir.join(format!("{id}.pgm")))?;
    let mut acc = IouAccumulator::new(classes);
    acc.accumulate(&pred, &gt)?;

    let inst_path = gt_dir.join(format!("{id}.inst.pgm"));
    let gts = if inst_path.is_file() {
        instances_from_id_map(&gt, &read_pgm(&inst_path)?.0, classes)?
    } else {
        extract_gt_instances(&gt, classes)?
    };
    let cand_path = pred_dir.join(format!("{id}.candidates.tsv"));
    let preds = if cand_path.is_file() {
        let text = std::fs::read_to_string(&cand_path).map_err(io_err(&cand_path))?;
        parse_candidates(&text, pred.height(), pred.width(), classes)?
    } else {
        label_map_instances(&pred, classes)?
    };
    let provenance = comments
        .iter()
        .filter(|c| c.starts_with("config_hash=") || c.starts_with("weights_sha256="))
        .cloned()
        .collect::<Vec<_>>()
        .join(" ");
    Ok(Scored {
        acc,
        preds,
        gts,
        provenance,
    })
}

/// Without a sidecar, every connected region counts as a detection with score 1.
fn label_map_instances(pred: &LabelGrid, classes: usize) -> Result<Vec<PredictedInstance>> {
    Ok(extract_gt_instances(pred, classes)?
        .into_iter()
        .map(|g| PredictedInstance {
            class: g.class,
            score: 1.0,
            mask: g.mask,
        })
        .collect())
}

pub fn eval(cfg: &RunConfig, pred_dir: &Path, gt_dir: &Path, force: bool, out: &mut dyn Write) -> Result<()> {
    let classes = read_classes(cfg, pred_dir)?;
    let pred_ids = pgm_ids(pred_dir)?;
    let gt_ids = pgm_ids(gt_dir)?;
    if pred_ids != gt_ids {
        let only_pred: Vec<_> = pred_ids.difference(&gt_ids).take(5).collect();
        let only_gt: Vec<_> = gt_ids.difference(&pred_ids).take(5).collect();
        return Err(CliError::IdSetMismatch(format!(
            "{} predictions vs {} ground truths; only predicted: {only_pred:?}; only ground truth: {only_gt:?}",
            pred_ids.len(),
            gt_ids.len()
        )));
    }
    let ids: Vec<String> = pred_ids.into_iter().collect();
    let scored = par_map(cfg.threads, ids.clone(), |id| {
        score_image(&id, pred_dir, gt_dir, classes.len())
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut runs: BTreeMap<String, usize> = BTreeMap::new();
    for s in &scored {
        *runs.entry(s.provenance.clone()).or_default() += 1;
    }
    if runs.len() > 1 && !force {
        return Err(CliError::MixedHash(format!("{} distinct provenances", runs.len())));
    }

    let mut acc = IouAccumulator::new(classes.len());
    for s in &scored {
        acc.merge(&s.acc)?;
    }
    let (preds, gts): (Vec<_>, Vec<_>) = scored.into_iter().map(|s| (s.preds, s.gts)).unzip();
    let ap = map50(&preds, &gts, classes.len())?;
    let report = EvalReport::build(&classes, &acc, &ap, cfg.include_background, ids.len())?;

    let provenance: Vec<&String> = runs.keys().collect();
    let mut json = serde_json::to_value(&report).expect("report serializes");
    json["provenance"] = serde_json::json!(provenance);
    let table = report.to_table();
    let mut txt = table.clone();
    for p in &provenance {
        let _ = writeln!(txt, "provenance: {p}");
    }
    let dir = cfg.out.clone().unwrap_or_else(|| pred_dir.to_path_buf());
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write_file(
        &dir.join("report.json"),
        (serde_json::to_string_pretty(&json).expect("json") + "\n").as_bytes(),
    )?;
    write_file(&dir.join("report.txt"), txt.as_bytes())?;
    say(out, &table)
}
