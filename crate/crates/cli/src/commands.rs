use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use seqfit::amodal::{
    label_scene, label_track, load_external_instances, read_labels, score_labels, write_labels, CameraModel,
    InstanceTrack, LabelOptions, LabelScenario,
};
use seqfit::model::{load_checkpoint, save_checkpoint, CheckpointMeta, Estimator, Mode, ModelWeights};
use seqfit::rng::derive_seed;
use seqfit::simulator::{build_dataset, load_dataset, DatasetConfig, Track};
use seqfit::trainer::{evaluate, evaluation_svg, log_to_csv, train_stage, Aggregate, Evaluation, LogRow};
use seqfit::{Error, Result};

use crate::config::{base_dir, read_json, EvalRun, LabelRun, TrainRun};

pub fn build_id() -> String {
    format!(
        "seqfit {} ({}-{}, checkpoint SQF1)",
        env!("CARGO_PKG_VERSION"),
        std::env::consts::ARCH,
        std::env::consts::OS
    )
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn simulate(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg: DatasetConfig = read_json(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let base = base_dir(config);
    cfg.validate(&base)?;
    let manifest = build_dataset(&cfg, &base, out)?;
    println!("wrote {} tracks to {}", manifest.tracks.len(), out.display());
    Ok(())
}

/// Tracks whose mesh is listed in `meshes`, or all of them.
fn select_meshes(tracks: Vec<Track>, meshes: Option<&[String]>) -> Result<Vec<Track>> {
    let Some(names) = meshes else {
        return Ok(tracks);
    };
    if let Some(missing) = names.iter().find(|n| !tracks.iter().any(|t| &t.mesh == *n)) {
        return Err(Error::Config(format!("meshes: no tracks for mesh {missing:?} in the dataset")));
    }
    Ok(tracks.into_iter().filter(|t| names.contains(&t.mesh)).collect())
}

pub struct TrainArgs<'a> {
    pub config: Option<&'a Path>,
    pub data: &'a Path,
    pub out: &'a Path,
    pub stages: Vec<u8>,
    pub resume: Option<&'a Path>,
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub log: Option<&'a Path>,
}

fn stage_path(out: &Path, stage: u8) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let name = match out.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}.stage{stage}.{ext}"),
        None => format!("{stem}.stage{stage}"),
    };
    out.with_file_name(name)
}

pub fn train(args: TrainArgs<'_>) -> Result<()> {
    let run: TrainRun = match args.config {
        Some(p) => read_json(p)?,
        None => TrainRun::default(),
    };
    run.model.validate()?;
    let seed = args.seed.unwrap_or(run.seed);
    let mode = args.mode.or(run.mode).unwrap_or(Mode::Sequential);
    for &s in &args.stages {
        run.stage_config(s, seed, mode).validate()?;
    }
    let (_, tracks) = load_dataset(args.data)?;
    let tracks = select_meshes(tracks, run.meshes.as_deref())?;
    let (mut weights, mut step) = match args.resume {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            (ck.weights, ck.meta.step)
        }
        None => (ModelWeights::init(&run.model, seed)?, 0),
    };
    let mut log: Vec<LogRow> = Vec::new();
    let last = *args.stages.last().expect("at least one stage");
    for &stage in &args.stages {
        let cfg = run.stage_config(stage, derive_seed(seed, stage as u64), mode);
        let outcome = train_stage(&tracks, weights, &cfg, step)?;
        weights = outcome.weights;
        step = outcome.step;
        log.extend(outcome.log);
        let meta = CheckpointMeta { step, stage };
        let path = if stage == last {
            args.out.to_path_buf()
        } else {
            stage_path(args.out, stage)
        };
        save_checkpoint(&path, &weights, meta)?;
        println!("stage {stage}: {step} steps, checkpoint {}", path.display());
    }
    let log_path = match args.log {
        Some(p) => p.to_path_buf(),
        None => PathBuf::from(format!("{}.log.csv", args.out.display())),
    };
    write_file(&log_path, log_to_csv(&log))
}

pub fn eval(config: Option<&Path>, data: &Path, checkpoint: &Path, out: &Path, mode: Option<Mode>) -> Result<()> {
    let run: EvalRun = match config {
        Some(p) => read_json(p)?,
        None => EvalRun::default(),
    };
    let modes = match mode {
        Some(m) => vec![m],
        None => run.modes.clone(),
    };
    if modes.is_empty() {
        return Err(Error::Config("modes must list at least one mode".into()));
    }
    let weights = load_checkpoint(checkpoint)?.weights;
    let (_, tracks) = load_dataset(data)?;
    let tracks = select_meshes(tracks, run.meshes.as_deref())?;
    let evaluation = Evaluation {
        modes: modes
            .iter()
            .map(|&m| evaluate(&tracks, &weights, m))
            .collect::<Result<Vec<_>>>()?,
    };
    create_dir(out)?;
    for m in &evaluation.modes {
        write_file(&out.join(format!("{}.csv", m.mode.name())), seqfit::metrics::reports_to_csv(&m.reports()))?;
    }
    let json = serde_json::to_string_pretty(&evaluation.aggregates_json()).expect("aggregates serialize");
    write_file(&out.join("metrics.json"), json + "\n")?;
    write_file(&out.join("errors.svg"), evaluation_svg(&evaluation))?;
    for m in &evaluation.modes {
        let o = &m.aggregate.overall;
        println!(
            "{}: frames {} cd {:.5} emd {:.5} trans_err {:.4} rot_err {:.3}",
            m.mode.name(),
            o.count,
            o.cd,
            o.emd,
            o.trans_err,
            o.rot_err
        );
    }
    Ok(())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn label(config: &Path, out: &Path, mode: Option<LabelScenario>, checkpoint: Option<&Path>) -> Result<()> {
    let run: LabelRun = read_json(config)?;
    let base = base_dir(config);
    let mode = mode
        .or(run.mode)
        .ok_or_else(|| Error::Config("mode: no label mode given".into()))?;
    let checkpoint = checkpoint
        .map(Path::to_path_buf)
        .or_else(|| run.checkpoint.as_ref().map(|p| resolve(&base, p)));
    if mode.needs_estimator() && checkpoint.is_none() {
        return Err(Error::Config(format!("checkpoint: label mode {} needs model weights", mode.name())));
    }
    let opts = LabelOptions {
        alpha: run.alpha,
        fill_holes: run.fill_holes,
    };
    let cam = CameraModel::load(&resolve(&base, &run.camera))?;
    let weights = checkpoint.map(|p| load_checkpoint(&p)).transpose()?.map(|c| c.weights);
    let estimator = weights.as_ref().map(|w| w as &dyn Estimator);
    match mode {
        LabelScenario::SequentialCompletionExternal => {
            let path = run
                .external
                .as_ref()
                .ok_or_else(|| Error::Config("external: instance manifest required for this mode".into()))?;
            let instances = load_external_instances(&resolve(&base, path))?;
            let labels = label_scene(mode, &instances, &cam, estimator, &opts)?;
            write_labels(out, mode, &labels)?;
            println!("labeled {} instances over {} frames", instances.len(), labels.len());
        }
        _ => {
            let data = run
                .data
                .as_ref()
                .ok_or_else(|| Error::Config("data: dataset directory required for this mode".into()))?;
            let (_, tracks) = load_dataset(&resolve(&base, data))?;
            let selected: Vec<&Track> = match &run.tracks {
                Some(ids) => ids
                    .iter()
                    .map(|id| {
                        tracks
                            .iter()
                            .find(|t| &t.id == id)
                            .ok_or_else(|| Error::Config(format!("tracks: no track {id:?} in the dataset")))
                    })
                    .collect::<Result<_>>()?,
                None => tracks.iter().collect(),
            };
            for t in &selected {
                let labels = label_track(mode, &InstanceTrack::from(*t), &cam, estimator, &opts)?;
                write_labels(&out.join(&t.id), mode, &labels)?;
            }
            println!("labeled {} tracks", selected.len());
        }
    }
    Ok(())
}

const REPORT_METRICS: [(&str, &str); 4] = [
    ("cd", "Chamfer distance (m)"),
    ("emd", "EMD (m)"),
    ("trans_err", "translation error (m)"),
    ("rot_err", "rotation error (deg)"),
];

fn metric(m: &seqfit::trainer::MetricMeans, key: &str) -> f64 {
    match key {
        "cd" => m.cd,
        "emd" => m.emd,
        "trans_err" => m.trans_err,
        _ => m.rot_err,
    }
}

fn eval_report(dir: &Path, text: &mut String) -> Result<()> {
    let path = dir.join("metrics.json");
    let json = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let aggs: BTreeMap<String, Aggregate> =
        serde_json::from_str(&json).map_err(|e| Error::parse(&path, e.to_string()))?;
    let seq = aggs.get(Mode::Sequential.name());
    let per = aggs.get(Mode::PerFrame.name());
    let _ = writeln!(text, "## Evaluation\n");
    let _ = writeln!(text, "| metric | sequential | per_frame | change |");
    let _ = writeln!(text, "|---|---|---|---|");
    for (key, label) in REPORT_METRICS {
        let s = seq.map(|a| metric(&a.overall, key));
        let p = per.map(|a| metric(&a.overall, key));
        let change = match (s, p) {
            (Some(s), Some(p)) if p != 0.0 => format!("{:+.1}%", 100.0 * (s - p) / p),
            _ => "-".into(),
        };
        let cell = |v: Option<f64>| v.map_or("-".into(), |v| format!("{v:.5}"));
        let _ = writeln!(text, "| {label} | {} | {} | {change} |", cell(s), cell(p));
    }
    for (name, agg) in &aggs {
        let _ = writeln!(text, "\n### Chamfer distance by detections ({name})\n");
        let _ = writeln!(text, "| detections | frames | cd |");
        let _ = writeln!(text, "|---|---|---|");
        for (k, m) in &agg.by_detections {
            let _ = writeln!(text, "| {k} | {} | {:.5} |", m.count, m.cd);
        }
    }
    Ok(())
}

pub fn report(eval: Option<&Path>, labels: Option<(&Path, &Path)>, out: Option<&Path>) -> Result<()> {
    if eval.is_none() && labels.is_none() {
        return Err(Error::Config("report needs --eval or --labels with --reference".into()));
    }
    let mut text = String::new();
    if let Some(dir) = eval {
        eval_report(dir, &mut text)?;
    }
    if let Some((pred, reference)) = labels {
        let (_, p) = read_labels(pred)?;
        let (_, r) = read_labels(reference)?;
        let s = score_labels(&p, &r)?;
        if !text.is_empty() {
            text.push('\n');
        }
        let _ = writeln!(text, "## Labels\n");
        let _ = writeln!(text, "| mIoU | miss (%) | matched | references |");
        let _ = writeln!(text, "|---|---|---|---|");
        let _ = writeln!(text, "| {:.4} | {:.2} | {} | {} |", s.miou, s.percent_miss, s.matched, s.references);
    }
    match out {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
