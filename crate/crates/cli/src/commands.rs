use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use posture_core::adapt::{adapt_posture, adapt_sf, SweepGrid};
use posture_core::datagen::{generate_dataset, DomainSpec};
use posture_core::dataset::read_dataset;
use posture_core::experiment;
use posture_core::metrics::IoUReport;
use posture_core::poseprov::{OracleProvider, PoseCorruption};
use posture_core::priornet::{evaluate_prior, train_prior, PriorModel};
use posture_core::segnet::{evaluate, pretrain_source, SegModel};
use posture_core::{DomainTag, Sample, UnlabeledSet};

use crate::config::RunConfig;
use crate::store::{self, Architecture, MetricsLog, RunLock, Sidecar, CHECKPOINT_FORMAT};
use crate::{Command, ConfigArgs};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Gen {
            domain,
            n,
            seed,
            out,
            resolution,
            tag,
            force,
        } => gen(&domain, n, seed, &out, resolution, tag.as_deref(), force),
        Command::Pretrain(args) => pretrain(&args),
        Command::TrainPrior(args) => train_prior_cmd(&args),
        Command::Adapt {
            args,
            source_free,
            pose_corruption,
        } => adapt(&args, source_free, pose_corruption.as_deref()),
        Command::Eval { model, data } => eval(&model, &data),
        Command::Ablate { args, seeds } => ablate(&args, &seeds),
        Command::Sweep { args, grid } => sweep(&args, &grid),
        Command::Plot { run } => plot(&run),
    }
}

fn load_domain(spec: &str) -> Result<DomainSpec> {
    if let Some(d) = DomainSpec::preset(spec) {
        return Ok(d);
    }
    let path = Path::new(spec);
    if !path.exists() {
        bail!("unknown domain preset or missing file: {spec}");
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {spec}"))?;
    let domain: DomainSpec = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text)?
    } else {
        toml::from_str(&text)?
    };
    domain.validate()?;
    Ok(domain)
}

fn gen(
    domain: &str,
    n: usize,
    seed: u64,
    out: &Path,
    resolution: usize,
    tag: Option<&str>,
    force: bool,
) -> Result<()> {
    let spec = load_domain(domain)?;
    let tag = match tag.unwrap_or(if domain == "source" {
        "source"
    } else {
        "target"
    }) {
        "source" => DomainTag::Source,
        _ => DomainTag::Target,
    };
    store::fresh_dir(out, force)?;
    let manifest = generate_dataset(n, &spec, seed, resolution, tag, out)?;
    println!("wrote {} samples to {}", manifest.count, out.display());
    Ok(())
}

/// Loaded config with CLI overrides applied, plus the held run lock.
struct Session {
    cfg: RunConfig,
    _lock: RunLock,
}

impl Session {
    fn open(args: &ConfigArgs) -> Result<Self> {
        let mut cfg = RunConfig::load(&args.config)?;
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        if let Some(dir) = &args.run_dir {
            cfg.run_dir = dir.clone();
        }
        let lock = RunLock::acquire(&cfg.run_dir)?;
        Ok(Self { cfg, _lock: lock })
    }

    /// Fresh stage directory holding a copy of the effective config.
    fn stage(&self, name: &str, force: bool) -> Result<std::path::PathBuf> {
        let dir = self.cfg.run_dir.join(name);
        store::fresh_dir(&dir, force)?;
        store::write_text(&dir.join("config.toml"), &self.cfg.to_toml()?)?;
        Ok(dir)
    }

    fn sidecar(&self, architecture: Architecture, num_params: usize, epoch: usize) -> Sidecar {
        Sidecar {
            format_version: CHECKPOINT_FORMAT,
            architecture,
            num_params,
            epoch,
            config_hash: self.cfg.hash(),
            git_describe: store::git_describe(),
        }
    }
}

fn dataset(dir: &Path) -> Result<Vec<Sample>> {
    let (_, samples) =
        read_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    Ok(samples)
}

fn results_csv(rows: &[(&str, &IoUReport)]) -> String {
    let mut out = format!("method,{}\n", IoUReport::CSV_HEADER);
    for (name, report) in rows {
        let _ = writeln!(out, "{name},{}", report.csv_row());
    }
    out
}

fn pretrain(args: &ConfigArgs) -> Result<()> {
    let session = Session::open(args)?;
    let cfg = &session.cfg;
    let source = dataset(&cfg.require("source", &cfg.data.source)?)?;
    let out = session.stage("pretrain", args.force)?;
    let mut model = SegModel::new(cfg.segnet, cfg.seed)?;
    let logs = pretrain_source(&mut model, &source, &cfg.pretrain, cfg.seed)?;
    let mut log = MetricsLog::open(&out.join("metrics.jsonl"))?;
    for l in &logs {
        log.append(l)?;
    }
    let side = session.sidecar(
        Architecture::Segnet(cfg.segnet),
        model.num_params(),
        logs.len(),
    );
    store::save_checkpoint(&out.join("model.bin"), model.params(), &side)?;
    if let Some(eval_dir) = &cfg.data.eval {
        let report = evaluate(&model, &dataset(eval_dir)?)?;
        let csv = results_csv(&[("source-only", &report)]);
        store::write_text(&out.join("results.csv"), &csv)?;
        print!("{csv}");
    }
    println!("checkpoint {}", out.join("model.bin").display());
    Ok(())
}

fn train_prior_cmd(args: &ConfigArgs) -> Result<()> {
    let session = Session::open(args)?;
    let cfg = &session.cfg;
    let source = dataset(&cfg.require("source", &cfg.data.source)?)?;
    let out = session.stage("prior", args.force)?;
    let mut model = PriorModel::new(cfg.prior, cfg.seed)?;
    let logs = train_prior(&mut model, &source, &cfg.prior_train, cfg.seed)?;
    let mut log = MetricsLog::open(&out.join("metrics.jsonl"))?;
    for l in &logs {
        log.append(l)?;
    }
    let side = session.sidecar(
        Architecture::Prior(cfg.prior),
        model.num_params(),
        logs.len(),
    );
    store::save_checkpoint(&out.join("prior.bin"), model.params(), &side)?;
    if let Some(eval_dir) = &cfg.data.eval {
        let report = evaluate_prior(&model, &dataset(eval_dir)?)?;
        let csv = results_csv(&[("prior", &report)]);
        store::write_text(&out.join("results.csv"), &csv)?;
        print!("{csv}");
    }
    println!("checkpoint {}", out.join("prior.bin").display());
    Ok(())
}

fn adapt(args: &ConfigArgs, source_free: bool, corruption: Option<&str>) -> Result<()> {
    let mut session = Session::open(args)?;
    if source_free {
        session.cfg.adapt.source_free = true;
    }
    if let Some(name) = corruption {
        session.cfg.adapt.pose_corruption = PoseCorruption::preset(name)
            .with_context(|| format!("unknown pose corruption preset {name}"))?;
    }
    let cfg = &session.cfg;
    let run_dir = &cfg.run_dir;
    let pretrained =
        store::load_segnet(&run_dir.join("pretrain/model.bin")).context("run `pretrain` first")?;
    let prior =
        store::load_prior(&run_dir.join("prior/prior.bin")).context("run `train-prior` first")?;
    let target = dataset(&cfg.require("target", &cfg.data.target)?)?;
    let provider = OracleProvider::from_samples(&target, cfg.adapt.pose_corruption, cfg.seed)?;
    let unlabeled = UnlabeledSet::from_samples(&target);
    drop(target);
    let eval_set = cfg.data.eval.as_deref().map(dataset).transpose()?;
    let stage = if cfg.adapt.source_free {
        "adapt-sf"
    } else {
        "adapt"
    };
    let out = session.stage(stage, args.force)?;
    let run = if cfg.adapt.source_free {
        adapt_sf(
            pretrained,
            &prior,
            &provider,
            &unlabeled,
            eval_set.as_deref(),
            &cfg.adapt,
            cfg.seed,
        )?
    } else {
        let source = dataset(&cfg.require("source", &cfg.data.source)?)?;
        adapt_posture(
            pretrained,
            &prior,
            &provider,
            &source,
            &unlabeled,
            eval_set.as_deref(),
            &cfg.adapt,
            cfg.seed,
        )?
    };
    let mut log = MetricsLog::open(&out.join("metrics.jsonl"))?;
    for r in &run.records {
        log.append(r)?;
        let miou = r
            .target_miou
            .map(|m| format!(" mIoU {:.2}", 100.0 * m))
            .unwrap_or_default();
        println!("epoch {:>3} loss {:.4}{miou}", r.epoch, r.loss_total);
    }
    let side = session.sidecar(
        Architecture::Segnet(cfg.segnet),
        run.model.num_params(),
        run.records.len(),
    );
    store::save_checkpoint(&out.join("model.bin"), run.model.params(), &side)?;
    if let Some(eval_set) = &eval_set {
        let report = evaluate(&run.model, eval_set)?;
        let name = if cfg.adapt.source_free {
            "sf-posture"
        } else {
            "posture"
        };
        let csv = results_csv(&[(name, &report)]);
        store::write_text(&out.join("results.csv"), &csv)?;
        print!("{csv}");
    }
    Ok(())
}

fn eval(model: &Path, data: &Path) -> Result<()> {
    let model = store::load_segnet(model)?;
    let report = evaluate(&model, &dataset(data)?)?;
    println!("{}", IoUReport::CSV_HEADER);
    println!("{}", report.csv_row());
    Ok(())
}

fn ablate(args: &ConfigArgs, seeds: &[u64]) -> Result<()> {
    let session = Session::open(args)?;
    let out = session.stage("ablate", args.force)?;
    let rows = experiment::ladder(&session.cfg.experiment(), seeds)?;
    let mut csv = String::from("rung");
    for s in seeds {
        let _ = write!(csv, ",seed{s}");
    }
    csv.push_str(",mean\n");
    for row in &rows {
        csv.push_str(&row.name);
        for v in &row.per_seed {
            let _ = write!(csv, ",{:.2}", 100.0 * v);
        }
        let _ = writeln!(csv, ",{:.2}", 100.0 * row.mean);
    }
    store::write_text(&out.join("ladder.csv"), &csv)?;
    store::write_text(
        &out.join("ladder.json"),
        &serde_json::to_string_pretty(&rows)?,
    )?;
    print!("{csv}");
    Ok(())
}

fn sweep(args: &ConfigArgs, grid_path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(grid_path)
        .with_context(|| format!("reading {}", grid_path.display()))?;
    let grid: SweepGrid =
        toml::from_str(&text).with_context(|| format!("parsing {}", grid_path.display()))?;
    let session = Session::open(args)?;
    let out = session.stage("sweep", args.force)?;
    let rows = experiment::sensitivity(&session.cfg.experiment(), session.cfg.seed, &grid)?;
    let mut csv = String::from("alpha,beta,gamma,miou\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{:.2}",
            r.alpha,
            r.beta,
            r.gamma,
            100.0 * r.miou
        );
    }
    store::write_text(&out.join("sweep.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn plot(run: &Path) -> Result<()> {
    let records = store::read_jsonl(&run.join("metrics.jsonl"))?;
    for path in crate::plot::plot_run(run, &records)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
