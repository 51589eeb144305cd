use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fovtopo_core::config::ConfigFile;
use fovtopo_core::sim::{self, Mode, Outcome};
use fovtopo_core::{gradcheck, graph, resilience, Error};

const EXIT_OK: u8 = 0;
const EXIT_CONFIG: u8 = 1;
const EXIT_CONTAINMENT: u8 = 2;
const EXIT_BLOWUP: u8 = 3;
const EXIT_CHECK_FAILED: u8 = 4;

#[derive(Parser)]
#[command(name = "fovtopo", version, about = "FOV-constrained multi-robot topology control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write the trace CSV and summary JSON.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Directory for trace.csv and summary.json; overrides [output].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep every N-th step in the trace.
        #[arg(long)]
        log_every: Option<usize>,
    },
    /// Check the graph, fault and observer certificates of a scenario.
    Certify {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, hide = true)]
        perturb: Option<String>,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Override a config key, e.g. `--set mode=baseline`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<ConfigFile, Error> {
        ConfigFile::load(&self.config, &self.overrides)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK });
        }
    };
    let code = match cli.command {
        Command::Run {
            scenario,
            out,
            log_every,
        } => cmd_run(&scenario, out.as_deref(), log_every),
        Command::Certify { scenario } => cmd_certify(&scenario),
        Command::Gradcheck {
            seed,
            samples,
            perturb,
        } => cmd_gradcheck(seed, samples, perturb),
    };
    ExitCode::from(code.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        EXIT_CONFIG
    }))
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn cmd_run(args: &ScenarioArgs, out: Option<&Path>, log_every: Option<usize>) -> Result<u8, Error> {
    let cfg = args.load()?;
    let mut scenario = cfg.scenario()?;
    if let Some(k) = log_every {
        scenario.log_every = k;
        scenario.validate()?;
    }
    let (trace_path, summary_path) = match out {
        Some(dir) => (dir.join("trace.csv"), dir.join("summary.json")),
        None => (
            cfg.output.trace.clone().unwrap_or_else(|| "trace.csv".into()),
            cfg.output.summary.clone().unwrap_or_else(|| "summary.json".into()),
        ),
    };

    let result = sim::run(&scenario)?;
    let mut w = create(&trace_path)?;
    sim::write_trace_csv(&mut w, &scenario.topology, &result.trace)?;
    w.flush()?;
    let mut w = create(&summary_path)?;
    sim::write_summary_json(&mut w, &result.summary)?;
    w.flush()?;

    let s = &result.summary;
    eprintln!(
        "{} run: {} steps, t = {:.3} s, V {:.6e} -> {:.6e}, min margin {:.4}",
        s.mode, s.steps, s.t_final, s.initial_v, s.final_v, s.min_margin
    );
    if s.mode == Mode::Resilient {
        eprintln!("max |e_tilde| = {:.4e}", s.max_e_tilde);
    }
    eprintln!("trace: {}", trace_path.display());
    eprintln!("summary: {}", summary_path.display());
    Ok(match &s.outcome {
        Outcome::Completed if s.containment_preserved => EXIT_OK,
        Outcome::Completed => {
            eprintln!("containment margin reached zero");
            EXIT_CONTAINMENT
        }
        Outcome::ContainmentViolation {
            edge,
            side,
            distance,
            t,
        } => {
            let edge = edge.map_or("?".into(), |[i, j]| format!("({i}, {j})"));
            eprintln!(
                "containment violated on edge {edge}, side {side}, distance {distance:.4e} at t = {t:.3} s"
            );
            EXIT_CONTAINMENT
        }
        Outcome::Blowup { t, reason } => {
            eprintln!("numerical blowup at t = {t:.3} s: {reason}");
            EXIT_BLOWUP
        }
    })
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn cmd_certify(args: &ScenarioArgs) -> Result<u8, Error> {
    let cfg = args.load()?;
    let scenario = cfg.scenario()?;
    let topo = &scenario.topology;
    let mut all = true;
    let mut out = std::io::stdout().lock();

    let t1 = graph::theorem1_certificate(&graph::build_incidence(topo), graph::DEFAULT_EIG_TOL)?;
    all &= t1.psd;
    writeln!(out, "theorem1 {} min_eig={:.6e}", verdict(t1.psd), t1.min_eig)?;

    let roots: Vec<usize> = match &scenario.leader {
        Some(l) => vec![l.index],
        None => (0..topo.n()).collect(),
    };
    let root = roots.into_iter().find(|&r| topo.has_rooted_spanning_tree(r));
    all &= root.is_some();
    match root {
        Some(r) => writeln!(out, "spanning_tree PASS root={}", r + 1)?,
        None => writeln!(out, "spanning_tree FAIL root=none")?,
    }

    // the fault and observer certificates only matter when faults are modelled
    let faults_requested = scenario.mode == Mode::Resilient || !scenario.faults.is_fault_free();
    let violations = scenario.faults.fault_bound_violations();
    let a2 = violations.is_empty();
    writeln!(out, "fault_bounds {} violations={}", verdict(a2), violations.len())?;
    for v in &violations {
        writeln!(out, "  robot={} channel={} reason={}", v.robot + 1, v.channel, v.reason)?;
    }

    let sofb = resilience::verify_sofb(&scenario.observer)?;
    writeln!(
        out,
        "sofb {} residual_gain={:.6e} residual_riccati={:.6e} p_min_eig={:.6e} iterations={} stabilizable={} detectable_q={} detectable_c={}",
        verdict(sofb.satisfied),
        sofb.residual_gain,
        sofb.residual_riccati,
        sofb.p_min_eig,
        sofb.iterations,
        sofb.stabilizable,
        sofb.detectable_q,
        sofb.detectable_c
    )?;
    if faults_requested {
        all &= a2 && sofb.satisfied;
    } else {
        eprintln!("no faults modelled; fault_bounds and sofb are informational");
    }

    Ok(if all { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn cmd_gradcheck(seed: u64, samples: usize, perturb: Option<String>) -> Result<u8, Error> {
    let report = gradcheck::run(&gradcheck::GradcheckOptions {
        seed,
        samples,
        perturb,
        ..Default::default()
    })?;
    if samples == 0 {
        eprintln!("warning: zero samples, nothing was checked");
    }
    let mut out = std::io::stdout().lock();
    for q in &report.quantities {
        writeln!(
            out,
            "{} {} worst_rel_err={:.3e} evaluations={}",
            q.name,
            verdict(q.worst_rel_err < report.threshold),
            q.worst_rel_err,
            q.evaluations
        )?;
    }
    let failing: Vec<&str> = report.failing().map(|q| q.name.as_str()).collect();
    if failing.is_empty() {
        Ok(EXIT_OK)
    } else {
        eprintln!("gradient check failed: {}", failing.join(", "));
        Ok(EXIT_CHECK_FAILED)
    }
}
