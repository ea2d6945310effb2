use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use dtaa::sim::{self, LoadedScenario, Mode, ScenarioError};
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_LOAD: u8 = 1;
const EXIT_VIOLATION: u8 = 2;

#[derive(Parser)]
#[command(name = "dtaa", version, about = "Dynamic obstacle avoidance simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its log.
    Run(Common),
    /// Sweep one parameter and print a table per value.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// PARAM=START..END[:STEP], END inclusive.
        #[arg(long = "sweep", value_name = "SPEC")]
        spec: String,
    },
    /// Check a scenario file without running it.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    scenario: PathBuf,
    /// Output directory for logs and tables.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, value_parser = ["dtaa", "apf_only", "no_avoidance"])]
    mode: Option<String>,
    /// Override a scenario field; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, value_parser = ["iterations", "wallclock"])]
    deadline_mode: Option<String>,
}

impl Common {
    fn overrides(&self) -> Vec<String> {
        let mut o = self.set.clone();
        if let Some(seed) = self.seed {
            o.push(format!("seed={seed}"));
        }
        if let Some(mode) = &self.mode {
            debug_assert!(Mode::parse(mode).is_some());
            o.push(format!("mode=\"{mode}\""));
        }
        if let Some(d) = &self.deadline_mode {
            o.push(format!("nmpc.deadline_mode=\"{d}\""));
        }
        o
    }

    fn load(&self) -> Result<LoadedScenario, ScenarioError> {
        LoadedScenario::from_path(&self.scenario, &self.overrides())
    }
}

struct SweepSpec {
    param: String,
    values: Vec<f64>,
}

fn parse_sweep(spec: &str) -> anyhow::Result<SweepSpec> {
    let (param, range) = spec
        .split_once('=')
        .context("expected PARAM=START..END[:STEP]")?;
    let (range, step) = match range.split_once(':') {
        Some((r, s)) => (r, s.trim().parse::<f64>().context("bad STEP")?),
        None => (range, 1.0),
    };
    let (start, end) = range.split_once("..").context("expected START..END")?;
    let start: f64 = start.trim().parse().context("bad START")?;
    let end: f64 = end.trim().parse().context("bad END")?;
    if !(step > 0.0 && step.is_finite()) {
        bail!("STEP must be positive");
    }
    if !(start.is_finite() && end.is_finite()) || start > end {
        bail!("empty range {start}..{end}");
    }
    let count = ((end - start) / step + 1e-9).floor() as usize + 1;
    let values = (0..count).map(|i| start + i as f64 * step).collect();
    Ok(SweepSpec {
        param: param.trim().to_string(),
        values,
    })
}

fn report_load_error(e: &ScenarioError) {
    match e {
        ScenarioError::Io { .. } => eprintln!("error: {e}"),
        ScenarioError::Invalid { path, diagnostics } => {
            for d in diagnostics {
                match d.line {
                    Some(line) => eprintln!("{path}:{line}: {}", Diag(d)),
                    None => eprintln!("{path}: {}", Diag(d)),
                }
            }
        }
    }
}

/// Diagnostic without its line prefix.
struct Diag<'a>(&'a sim::Diagnostic);

impl std::fmt::Display for Diag<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if let Some(field) = &self.0.field {
            write!(f, "{field}: ")?;
        }
        f.write_str(&self.0.message)
    }
}

fn write_file(
    dir: &Path,
    name: &str,
    write: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    write(&mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush()?;
    Ok(())
}

fn cmd_run(common: &Common) -> anyhow::Result<u8> {
    let loaded = match common.load() {
        Ok(l) => l,
        Err(e) => {
            report_load_error(&e);
            return Ok(EXIT_LOAD);
        }
    };
    let out = sim::run(&loaded);
    let summary = serde_json::to_string_pretty(&out.summary)?;
    if let Some(dir) = &common.out {
        write_file(dir, "run.ndjson", |w| out.write_ndjson(w))?;
        write_file(dir, "summary.json", |w| writeln!(w, "{summary}"))?;
    }
    println!("{summary}");
    let s = &out.summary;
    if s.violation_count > 0 {
        eprintln!(
            "safety margin violated on {} ticks (min distance {:.3} m)",
            s.violation_count,
            s.min_delta.unwrap_or(f64::NAN)
        );
        return Ok(EXIT_VIOLATION);
    }
    Ok(0)
}

fn cmd_sweep(common: &Common, spec: &str) -> anyhow::Result<u8> {
    let spec = match parse_sweep(spec) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: --sweep: {e:#}");
            return Ok(EXIT_LOAD);
        }
    };
    if let Err(e) = common.load() {
        report_load_error(&e);
        return Ok(EXIT_LOAD);
    }
    let rows = match sim::sweep(
        &common.scenario,
        &common.overrides(),
        &spec.param,
        &spec.values,
    ) {
        Ok(r) => r,
        Err(e) => {
            report_load_error(&e);
            return Ok(EXIT_LOAD);
        }
    };
    let mut table = format!(
        "{}\tmean_solve_time_ms\ttimeouts\tticks\tmean_iterations\n",
        spec.param
    );
    for r in &rows {
        table.push_str(&format!(
            "{}\t{:.4}\t{}\t{}\t{:.2}\n",
            r.value, r.mean_solve_time_ms, r.timeouts, r.ticks, r.mean_iterations
        ));
    }
    if let Some(dir) = &common.out {
        write_file(dir, "sweep.tsv", |w| w.write_all(table.as_bytes()))?;
    }
    print!("{table}");
    Ok(0)
}

fn cmd_validate(common: &Common) -> u8 {
    match common.load() {
        Ok(l) => {
            println!(
                "{}: ok ({} pedestrians, {} waypoints, {}x{} map)",
                common.scenario.display(),
                l.scenario.pedestrians.len(),
                l.scenario.robot.waypoints.len(),
                l.map.width(),
                l.map.height()
            );
            0
        }
        Err(e) => {
            report_load_error(&e);
            EXIT_LOAD
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_LOAD } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::Sweep { common, spec } => cmd_sweep(common, spec),
        Command::Validate(c) => Ok(cmd_validate(c)),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            log::error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_LOAD)
        }
    }
}
