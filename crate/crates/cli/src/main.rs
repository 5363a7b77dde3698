use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use laco_core::model::{hazard_config, make_hazard_model, Model};
use laco_core::scenario::{
    agent_payload, run_episode, run_tick, sweep, Paradigm, RunConfig, ScenarioSpec, SweepParam,
};
use laco_core::sskd::Dtype;
use laco_core::telemetry::{self, DEFAULT_EPS};
use laco_core::wire::{self, WireHeader};

#[derive(Parser)]
#[command(
    name = "laco",
    version,
    about = "Latent KV-cache communication scenarios"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop episode and write per-agent metrics.
    Run(RunArgs),
    /// Turn a telemetry file into entropy, sparsity and confusion tables.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_EPS)]
        eps: f64,
    },
    /// Run every scenario once per value of one parameter.
    Sweep {
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long = "scenario", required = true, num_args = 1..)]
        scenarios: Vec<PathBuf>,
        #[arg(long, default_value = "laco")]
        paradigm: Paradigm,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the cache payload one agent would send and print its header.
    DumpPayload {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        agent: u32,
        /// Advance this many ticks before building the payload.
        #[arg(long, default_value_t = 0)]
        tick: u32,
        #[arg(long)]
        paradigm: Option<Paradigm>,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Defaults to the paradigm named in the scenario file.
    #[arg(long)]
    paradigm: Option<Paradigm>,
    #[arg(long)]
    out: PathBuf,
    /// Attention telemetry for `laco analyze`.
    #[arg(long)]
    telemetry: Option<PathBuf>,
    /// Per-tick actions, messages and events as JSON.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long = "l-comm")]
    l_comm: Option<f64>,
    #[arg(long)]
    dtype: Option<Dtype>,
    #[arg(long)]
    ticks: Option<u32>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(m) = self.m {
            cfg.m = m;
        }
        if let Some(r) = self.rho {
            cfg.rho = r;
        }
        if let Some(f) = self.l_comm {
            cfg.l_comm_fraction = f;
        }
        if let Some(d) = self.dtype {
            cfg.dtype = d;
        }
        if let Some(t) = self.ticks {
            cfg.max_ticks = t;
        }
    }
}

fn load(path: &Path) -> Result<ScenarioSpec> {
    ScenarioSpec::load(path).with_context(|| format!("loading scenario {}", path.display()))
}

fn model() -> Result<Model> {
    Ok(make_hazard_model(hazard_config())?)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    use std::io::Write;
    let mut w = create(path)?;
    w.write_all(bytes.as_ref())?;
    w.flush()?;
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let spec = load(&args.scenario)?;
    let mut cfg = spec.run_config(args.paradigm.unwrap_or(spec.paradigm));
    args.overrides.apply(&mut cfg);
    cfg.record_telemetry = args.telemetry.is_some();
    let r = run_episode(&model()?, &spec, &cfg)?;
    write(&args.out, r.metrics.to_csv())?;
    if let Some(path) = &args.telemetry {
        let mut w = create(path)?;
        telemetry::write_records(&mut w, &r.telemetry)?;
    }
    if let Some(path) = &args.trace {
        let mut json = serde_json::to_string_pretty(&r.ticks)?;
        json.push('\n');
        write(path, json)?;
    }
    let m = &r.metrics;
    println!(
        "{} {}: ticks {} rc {:.2} is {:.4} ds {:.2} comm_bytes {}",
        spec.name,
        cfg.paradigm,
        r.ticks.len(),
        m.rc,
        m.is,
        m.ds,
        m.comm_bytes
    );
    Ok(())
}

fn analyze(input: &Path, out: &Path, eps: f64) -> Result<()> {
    let f = File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let records = telemetry::read_records(BufReader::new(f))?;
    let analysis = telemetry::analyze(&records, eps);
    telemetry::emit::<()>(out, &analysis, None)?;
    println!(
        "{} records, {} agent ticks -> {}",
        records.len(),
        analysis.len(),
        out.display()
    );
    Ok(())
}

fn dump_payload(
    scenario: &Path,
    agent: u32,
    tick: u32,
    paradigm: Option<Paradigm>,
    overrides: &Overrides,
    out: Option<&Path>,
) -> Result<()> {
    let spec = load(scenario)?;
    let model = model()?;
    let mut cfg = spec.run_config(paradigm.unwrap_or(Paradigm::Laco));
    overrides.apply(&mut cfg);
    let mut world = spec.world();
    for _ in 0..tick {
        run_tick(&model, &mut world, &cfg, None)?;
    }
    if world.vehicle(agent).is_none_or(|v| !v.is_active()) {
        bail!("agent {agent} is not on the road at tick {tick}");
    }
    let Some(payload) = agent_payload(&model, &world, agent, &cfg)? else {
        bail!(
            "{} sends no cache payload with these settings",
            cfg.paradigm
        );
    };
    let bytes = wire::serialize(&payload);
    let h = WireHeader::of(&payload);
    println!("version {}", h.version);
    println!("sender {}", h.sender);
    println!("frame {}", h.frame);
    println!("l_comm {}", h.l_comm);
    println!("num_heads {}", h.num_heads);
    println!("head_dim {}", h.head_dim);
    println!("salient {}", h.salient);
    println!("latent {}", h.latent);
    println!("dtype {}", h.dtype.name());
    let idx: Vec<String> = h.source_indices.iter().map(u32::to_string).collect();
    println!("source_indices {}", idx.join(" "));
    println!("body_bytes {}", h.body_bytes());
    println!("total_bytes {}", bytes.len());
    if let Some(path) = out {
        write(path, &bytes)?;
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Analyze { input, out, eps } => analyze(&input, &out, eps),
        Command::Sweep {
            param,
            values,
            scenarios,
            paradigm,
            out,
        } => {
            let specs = scenarios
                .iter()
                .map(|p| load(p))
                .collect::<Result<Vec<_>>>()?;
            let table = sweep(&model()?, param, &values, &specs, paradigm)?;
            let rows = table.lines().count().saturating_sub(1);
            write(&out, table)?;
            println!("{rows} rows -> {}", out.display());
            Ok(())
        }
        Command::DumpPayload {
            scenario,
            agent,
            tick,
            paradigm,
            overrides,
            out,
        } => dump_payload(&scenario, agent, tick, paradigm, &overrides, out.as_deref()),
    }
}
