use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use idyn_core::cluster::{parse_cluster_file, NodeId};
use idyn_core::graph::{build_call_graph, graph_diff, read_trace_csv, CallGraph};
use idyn_core::harness::{self, ScenarioSpec};
use idyn_core::net::{
    generate_bandwidth_matrix, generate_delay_matrix, BandwidthMatrix, DelayMatrix, IpMap, TcEmitter,
};

/// Environment variable overriding every scenario's output directory.
const OUT_ENV: &str = "IDYN_OUT";

#[derive(Parser)]
#[command(
    name = "idyn",
    version,
    about = "Scheduling-policy evaluation under cloud-edge dynamics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario under its configured policy and write all artifacts.
    Run {
        spec: PathBuf,
        /// Output directory (overrides IDYN_OUT and the spec).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the spread baseline and each listed policy on identical arrivals.
    Compare {
        spec: PathBuf,
        /// Comma-separated policy names.
        #[arg(long, value_delimiter = ',', default_value = "callgraph")]
        policies: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a delay matrix (JSON).
    GenDelays {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        bl: f64,
        #[arg(long)]
        mal: f64,
        #[arg(long)]
        seed: u64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a bandwidth matrix (JSON).
    GenBandwidth {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        min_bw: f64,
        #[arg(long)]
        max_bw: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit per-node tc scripts and teardown scripts.
    EmitTc {
        /// Delay matrix JSON.
        #[arg(long)]
        delays: Option<PathBuf>,
        /// Bandwidth matrix JSON.
        #[arg(long)]
        bandwidths: Option<PathBuf>,
        /// Cluster file naming the nodes; `k8s-worker-1..` when omitted.
        #[arg(long)]
        cluster: Option<PathBuf>,
        /// Node name -> IP JSON; `10.0.0.1..` when omitted.
        #[arg(long)]
        ips: Option<PathBuf>,
        #[arg(long, default_value = "eth0")]
        interface: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a call-graph from a traffic trace CSV; writes JSON and DOT.
    BuildGraph {
        #[arg(long = "in")]
        input: PathBuf,
        /// Stress window, seconds.
        #[arg(long)]
        window: f64,
        /// Only use samples taken at or before this time.
        #[arg(long)]
        until: Option<f64>,
        #[arg(long)]
        namespace: Option<String>,
        /// Output path prefix: writes `<prefix>.json` and `<prefix>.dot`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Difference between two call-graph JSON files.
    DiffGraph {
        old: PathBuf,
        new: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a ready-made scenario spec.
    Example {
        kind: ExampleKind,
        /// Seed for the randomized-delay scenario.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExampleKind {
    Minimal,
    Burst,
    Randomized,
}

/// Errors caused by the user's input rather than the environment.
fn is_invalid_input(err: &anyhow::Error) -> bool {
    use idyn_core::Error as E;
    err.chain().any(|c| {
        matches!(
            c.downcast_ref::<E>(),
            Some(E::Validation(_) | E::Unknown { .. } | E::EmptyCluster | E::Shape(_) | E::MissingIp(_) | E::Json(_))
        )
    })
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn out_dir(spec: &ScenarioSpec, flag: Option<PathBuf>) -> PathBuf {
    let env = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
    harness::output_dir(spec, flag.or(env).as_deref())
}

fn load(spec: &Path) -> Result<ScenarioSpec> {
    Ok(harness::load_spec(spec)?)
}

fn with_newline(mut s: String) -> String {
    s.push('\n');
    s
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { spec, out } => {
            let spec = load(&spec)?;
            let dir = out_dir(&spec, out);
            let r = harness::run_scenario(&spec, &dir)?;
            println!(
                "{}: policy {} | {} requests | mean window avg {:.2} ms | {} violating window(s) | {} move(s) -> {}",
                r.scenario,
                r.policy,
                r.completed,
                r.mean_window_avg_ms,
                r.violation_windows,
                r.moves,
                dir.display()
            );
        }
        Command::Compare { spec, policies, out } => {
            let spec = load(&spec)?;
            let dir = out_dir(&spec, out);
            let report = harness::compare_scenario(&spec, &policies, &dir)?;
            for d in &report.deltas {
                println!(
                    "{:<10} avg {:+.1}% p99 {:+.1}% violations {} (baseline {})",
                    d.policy,
                    d.avg_improvement_pct,
                    d.p99_improvement_pct,
                    d.violation_windows,
                    d.baseline_violation_windows
                );
            }
            println!("arrivals sha256 {} -> {}", report.arrivals_sha256, dir.display());
        }
        Command::GenDelays { n, bl, mal, seed, out } => {
            let m = generate_delay_matrix(n, bl, mal, seed)?;
            emit(out.as_deref(), &with_newline(m.to_json()?))?;
        }
        Command::GenBandwidth {
            n,
            min_bw,
            max_bw,
            seed,
            out,
        } => {
            let m = generate_bandwidth_matrix(n, min_bw, max_bw, seed)?;
            emit(out.as_deref(), &with_newline(m.to_json()?))?;
        }
        Command::EmitTc {
            delays,
            bandwidths,
            cluster,
            ips,
            interface,
            out,
        } => {
            let delays = delays
                .map(|p| read(&p).and_then(|t| Ok(DelayMatrix::from_json(&t)?)))
                .transpose()?;
            let bandwidths = bandwidths
                .map(|p| read(&p).and_then(|t| Ok(BandwidthMatrix::from_json(&t)?)))
                .transpose()?;
            let n = match (&delays, &bandwidths) {
                (Some(d), _) => d.n,
                (None, Some(b)) => b.n,
                (None, None) => return Err(anyhow!("emit-tc needs --delays and/or --bandwidths")),
            };
            let names: Vec<String> = match cluster {
                Some(p) => parse_cluster_file(&read(&p)?)?.into_iter().map(|x| x.name).collect(),
                None => (1..=n).map(|i| format!("k8s-worker-{i}")).collect(),
            };
            let ips = match ips {
                Some(p) => IpMap::from_json(&read(&p)?)?,
                None => IpMap::sequential(&names),
            };
            let emitter = TcEmitter::new(&names, &ips, &interface);
            for (i, name) in names.iter().enumerate() {
                let node = NodeId(i);
                let script = match (&delays, &bandwidths) {
                    (Some(d), Some(b)) => emitter.combined_script(node, d, b)?,
                    (Some(d), None) => emitter.delay_script(node, d)?,
                    (None, Some(b)) => emitter.bandwidth_script(node, b)?,
                    (None, None) => unreachable!(),
                };
                write_file(&out.join(format!("{name}.sh")), &script.render())?;
                write_file(&out.join(format!("{name}-teardown.sh")), &script.teardown())?;
            }
            println!("{} node script(s) -> {}", names.len(), out.display());
        }
        Command::BuildGraph {
            input,
            window,
            until,
            namespace,
            out,
        } => {
            let file = fs::File::open(&input).with_context(|| format!("reading {}", input.display()))?;
            let mut samples = read_trace_csv(file)?;
            if let Some(t) = until {
                samples.retain(|s| s.timestamp <= t);
            }
            let g = build_call_graph(namespace.as_deref(), &samples, window)?;
            let json = out.with_extension("json");
            let dot = out.with_extension("dot");
            write_file(&json, &with_newline(g.to_json()?))?;
            write_file(&dot, &g.to_dot())?;
            println!(
                "{} node(s), {} edge(s) -> {}, {}",
                g.nodes.len(),
                g.edges.len(),
                json.display(),
                dot.display()
            );
        }
        Command::DiffGraph { old, new, out } => {
            let a = CallGraph::from_json(&read(&old)?)?;
            let b = CallGraph::from_json(&read(&new)?)?;
            let delta = graph_diff(&a, &b);
            emit(out.as_deref(), &with_newline(serde_json::to_string_pretty(&delta)?))?;
        }
        Command::Example { kind, seed } => {
            let spec = match kind {
                ExampleKind::Minimal => harness::minimal_scenario(),
                ExampleKind::Burst => harness::burst_scenario(8.0),
                ExampleKind::Randomized => harness::randomized_delay_scenario(seed, 40.0, 10.0),
            };
            println!("{}", spec.to_json()?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_invalid_input(&e) { 2 } else { 1 })
        }
    }
}
