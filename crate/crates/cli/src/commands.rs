use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use chaosode::pipeline::{train_with, StageReport, TrainedModel};
use chaosode_bench::data::{read_data, sidecar_path, write_data};
use chaosode_bench::eval::{evaluate, EvalSetup, DEFAULT_EVAL_POINTS};
use chaosode_bench::record::{append_jsonl, read_jsonl, write_csv, write_jsonl, CellKey};
use chaosode_bench::report::{figure, FigureId};
use chaosode_bench::scenario::{cells, SweepRunner};
use chaosode_bench::{BenchError, Scenario, SetupName};

use crate::config::{OutputFormat, RunConfig};
use crate::error::{CliError, CliResult};

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::runtime(format!("{}: {e}", path.display()))
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::usage(format!("{what} {} does not exist", path.display())))
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn generate(config: Option<&Path>, out: &Path, seed: Option<u64>) -> CliResult<()> {
    let cfg = RunConfig::load(config)?.with_seed(seed);
    let data = cfg.data.generate()?;
    write_data(out, &data)?;
    println!(
        "wrote {} samples (sigma {}, seed {}) to {} and {}",
        data.len(),
        cfg.data.sigma,
        cfg.data.seed,
        out.display(),
        sidecar_path(out).display()
    );
    Ok(())
}

/// Path of the stage log written next to a model file.
pub fn stage_log_path(model_path: &Path) -> PathBuf {
    model_path.with_extension("stages.jsonl")
}

fn print_stage(s: &StageReport) {
    let status = match &s.status {
        chaosode::pipeline::StageStatus::Completed => "completed".to_string(),
        chaosode::pipeline::StageStatus::Disabled => "disabled".to_string(),
        chaosode::pipeline::StageStatus::Failed(r) => format!("failed: {r}"),
    };
    println!(
        "{:<17} {:>11.4e} {:>11.4e} {:>11.4e} {:>7} {:>8.2}  {status}",
        s.stage.as_str(),
        s.start_loss,
        s.end_loss,
        s.single_shooting_loss,
        s.evals,
        s.wall_time
    );
}

pub fn train(config: Option<&Path>, data_path: &Path, out: &Path) -> CliResult<()> {
    let cfg = RunConfig::load(config)?;
    require_file(data_path, "data file")?;
    let data = read_data(data_path)?;
    let pipeline = cfg.pipeline_config();
    let log_path = stage_log_path(out);
    let mut log = File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
    let mut log_error = None;
    println!(
        "{:<17} {:>11} {:>11} {:>11} {:>7} {:>8}  status",
        "stage", "start", "end", "single", "evals", "time_s"
    );
    let result = train_with(&data, &pipeline, |s| {
        print_stage(s);
        let line = serde_json::to_string(s).unwrap_or_default();
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            log_error.get_or_insert(e);
        }
    });
    if let Some(e) = log_error {
        return Err(io_err(&log_path, e));
    }
    let model = result?;
    write_json(out, &model)?;
    let ex_it = evaluate(&model, &EvalSetup::ex_it(), DEFAULT_EVAL_POINTS);
    println!("final loss {:.6e}", model.final_loss);
    println!("ex_it mse {ex_it:.6e}");
    println!("wrote {} and {}", out.display(), log_path.display());
    Ok(())
}

pub fn load_model(path: &Path) -> CliResult<TrainedModel> {
    require_file(path, "model file")?;
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: not a trained model: {e}", path.display())))
}

/// Parses `all` or a single setup name.
pub fn parse_setups(s: &str) -> CliResult<Vec<SetupName>> {
    if s == "all" {
        return Ok(SetupName::ALL.to_vec());
    }
    s.parse::<SetupName>()
        .map(|n| vec![n])
        .map_err(|_| CliError::usage(format!("unknown setup {s:?}; expected all, ex_it, ex_oot or ex_ood")))
}

#[derive(serde::Serialize)]
struct EvalLine {
    setup: SetupName,
    t0: f64,
    t1: f64,
    x0: Vec<f64>,
    points: usize,
    #[serde(with = "chaosode_bench::record::lossless_f64")]
    mse: f64,
}

pub fn eval(model_path: &Path, setups: &str, points: usize, out: Option<&Path>) -> CliResult<()> {
    let names = parse_setups(setups)?;
    let model = load_model(model_path)?;
    let mut lines = Vec::new();
    for name in names {
        let setup = EvalSetup::named(name);
        let mse = evaluate(&model, &setup, points);
        println!(
            "{:<7} t=[{}, {}] x0={:?} mse {mse:.6e}",
            name.as_str(),
            setup.span.0,
            setup.span.1,
            setup.x0
        );
        lines.push(EvalLine {
            setup: name,
            t0: setup.span.0,
            t1: setup.span.1,
            x0: setup.x0.clone(),
            points,
            mse,
        });
    }
    if let Some(path) = out {
        write_json(path, &lines)?;
    }
    Ok(())
}

pub struct ScenarioArgs<'a> {
    pub id: Option<Scenario>,
    pub config: Option<&'a Path>,
    pub out: &'a Path,
    pub workers: Option<usize>,
    pub resume: bool,
}

fn resolve_workers(w: usize) -> usize {
    if w == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        w
    }
}

/// Runs a scenario into `out`: `results.jsonl`, `results.csv`, one CSV per
/// figure and `config.toml` with the resolved configuration.
pub fn scenario(args: ScenarioArgs<'_>) -> CliResult<()> {
    let cfg = RunConfig::load(args.config)?;
    let id = args.id.unwrap_or(cfg.scenario.id);
    let workers = resolve_workers(args.workers.unwrap_or(cfg.scenario.workers));
    let sc = cfg.scenario_config();
    let all_cells = cells(id, &sc);
    fs::create_dir_all(args.out).map_err(|e| io_err(args.out, e))?;
    let results = args.out.join("results.jsonl");

    let mut existing = Vec::new();
    if args.resume && results.exists() {
        existing = read_jsonl(&results)?;
        let expected: HashMap<CellKey, _> = all_cells.iter().map(|c| (c.key(), c)).collect();
        for r in &existing {
            let matches = expected
                .get(&r.key())
                .is_some_and(|c| c.pipeline_config(&sc) == r.config && c.data_spec(&sc) == r.data);
            if !matches {
                return Err(CliError::usage(format!(
                    "{} holds results for a different configuration ({} {} n={} sigma={} seed={}); use a new output directory",
                    results.display(),
                    r.scenario,
                    r.method.as_str(),
                    r.n_train,
                    r.sigma,
                    r.seed
                )));
            }
        }
        // rewrite without a possibly truncated last line before appending
        write_jsonl(&results, &existing)?;
    } else {
        File::create(&results).map_err(|e| io_err(&results, e))?;
    }
    let skip: HashSet<CellKey> = existing.iter().map(|r| r.key()).collect();
    let todo = all_cells.iter().filter(|c| !skip.contains(&c.key())).count();
    println!("{id}: {} cells, {} done, {todo} to run on {workers} workers", all_cells.len(), skip.len());

    let mut finished = 0;
    let fresh = SweepRunner::new(workers).run(&all_cells, &sc, &skip, |r| {
        finished += 1;
        println!(
            "[{finished}/{todo}] {} {} n={} sigma={} seed={}: ex_it {:.3e} ex_oot {:.3e} ex_ood {:.3e} ({:.1}s){}",
            r.method.as_str(),
            r.basis_variant.as_str(),
            r.n_train,
            r.sigma,
            r.seed,
            r.mse_ex_it,
            r.mse_ex_oot,
            r.mse_ex_ood,
            r.wall_time,
            r.failure.as_deref().map(|f| format!(" failed: {f}")).unwrap_or_default()
        );
        append_jsonl(&results, r)
    })?;

    let records = chaosode_bench::record::canonical_order(existing.into_iter().chain(fresh));
    write_jsonl(&results, &records)?;
    if cfg.output.formats.contains(&OutputFormat::Csv) {
        write_csv(&args.out.join("results.csv"), &records)?;
        for fig in FigureId::for_scenario(id) {
            match figure(&records, fig) {
                Ok(data) => data.write_csv(&args.out.join(format!("{}.csv", fig.as_str())))?,
                Err(BenchError::EmptyGroup(_)) => println!("{fig}: no data in this grid, skipped"),
                Err(e) => return Err(e.into()),
            }
        }
    }
    let echo = args.out.join("config.toml");
    fs::write(&echo, cfg.to_toml()?).map_err(|e| io_err(&echo, e))?;
    println!("wrote {} records to {}", records.len(), args.out.display());
    Ok(())
}

pub fn report(results: &Path, figure_id: &str, out: Option<&Path>) -> CliResult<()> {
    let id: FigureId = figure_id.parse().map_err(|e: BenchError| CliError::usage(e.to_string()))?;
    require_file(results, "results file")?;
    let records = read_jsonl(results)?;
    let data = figure(&records, id).map_err(|e| match e {
        BenchError::EmptyGroup(m) => CliError::runtime(format!("no records for {id}: {m}")),
        other => other.into(),
    })?;
    match out {
        Some(path) => {
            data.write_csv(path)?;
            println!("wrote {} rows to {}", data.rows.len(), path.display());
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            let _ = writeln!(lock, "{}", data.header.join(","));
            for row in &data.rows {
                let _ = writeln!(lock, "{}", row.join(","));
            }
        }
    }
    Ok(())
}
