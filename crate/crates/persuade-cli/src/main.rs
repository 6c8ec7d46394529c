use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use persuade::binary::{BinaryPersuasionSpec, DelayGain};
use persuade::censorship::PriorSpec;
use persuade_cli::config::{
    BinaryScenario, CensorshipScenario, CoaseScenario, ConsistencyScenario, GoalpostsScenario, GridScenario,
    OracleGrid, Solver,
};
use persuade_cli::{load_config, manifest_path, run, Scenario, ScenarioConfig, Verdict};

#[derive(Parser)]
#[command(name = "persuade", version, about = "Dynamic persuasion solvers and verifiers")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Primary output file; sidecars and the manifest are written next to it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Verifier tolerance (the saddle subcommand also uses it as the solver tolerance).
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Exit with status 2 when a gating verifier fails.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a grid problem exactly with the linear program.
    Solve {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long, default_value_t = 101)]
        belief_grid: usize,
        /// Replay this many sample paths into a CSV.
        #[arg(long, default_value_t = 0)]
        paths: usize,
    },
    /// Solve a grid problem with the min-max iterations.
    Saddle {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long, default_value_t = 101)]
        belief_grid: usize,
        #[arg(long, default_value_t = 0)]
        paths: usize,
    },
    /// Check the first-order conditions of a written solution.
    VerifyFoc {
        #[arg(long)]
        problem: PathBuf,
        /// A solve or saddle output with `f` and `certificate`.
        #[arg(long)]
        solution: PathBuf,
        #[arg(long, default_value_t = 101)]
        belief_grid: usize,
    },
    /// Optimal suspense strategy for two states.
    Binary {
        #[arg(long)]
        mu0: f64,
        /// Persuasion gain `v_r - v_l`.
        #[arg(long)]
        dv: f64,
        #[arg(long, default_value_t = 0.0)]
        v_ell: f64,
        /// Delay gain of action l, e.g. `log:0.5`, `linear:1`, `power:1,0.5`, `poly:1,-0.25`.
        #[arg(long)]
        h_ell: String,
        #[arg(long)]
        h_r: String,
        /// Cross-check against the oracle on a grid with this step.
        #[arg(long)]
        verify_lp: Option<f64>,
        #[arg(long, default_value_t = 101)]
        belief_grid: usize,
        #[arg(long, default_value_t = 201)]
        samples: usize,
    },
    /// Tail-censorship policy for a continuum of states.
    Censorship {
        /// `uniform`, `beta(a,b)` or a CSV file of density values on an even grid.
        #[arg(long)]
        prior: String,
        #[arg(long)]
        r: f64,
        #[arg(long)]
        theta_bar: f64,
        /// Cross-check against a discretized oracle, e.g. `21x9`.
        #[arg(long)]
        oracle: Option<String>,
    },
    /// Teleporting and inching strategies of the goalposts model.
    Goalposts {
        /// Model parameters as JSON; defaults to the reference example.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, default_value_t = 0.025)]
        dt: f64,
    },
    /// Interim surplus, dynamic consistency and the zero-surplus transform of a process.
    Consistency {
        #[arg(long)]
        process: PathBuf,
        #[arg(long)]
        problem: PathBuf,
        #[arg(long, default_value_t = 101)]
        belief_grid: usize,
    },
    /// The two-period experiment-selection game.
    Coase {
        /// A game spec as JSON; defaults to the canonical game.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Run a scenario config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

fn parse_prior(s: &str) -> Result<PriorSpec> {
    let t = s.trim();
    if t == "uniform" {
        return Ok(PriorSpec::Uniform);
    }
    if let Some(inner) = t.strip_prefix("beta(").and_then(|x| x.strip_suffix(')')) {
        let (a, b) = inner.split_once(',').ok_or_else(|| anyhow!("prior: expected beta(a,b), got {s}"))?;
        return Ok(PriorSpec::Beta { a: a.trim().parse()?, b: b.trim().parse()? });
    }
    let path = Path::new(t);
    if !path.exists() {
        bail!("prior: {s:?} is neither uniform, beta(a,b) nor an existing file");
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut pdf = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let last = rec.iter().next_back().unwrap_or("");
        match last.parse::<f64>() {
            Ok(x) => pdf.push(x),
            // A header line is allowed.
            Err(_) if i == 0 => {}
            Err(e) => bail!("prior: {}: line {}: {e}", path.display(), i + 1),
        }
    }
    Ok(PriorSpec::Table { pdf })
}

fn parse_oracle(s: &str) -> Result<OracleGrid> {
    let (a, b) = s.split_once('x').ok_or_else(|| anyhow!("oracle: expected NxM, got {s}"))?;
    Ok(OracleGrid { n_theta: a.trim().parse()?, n_t: b.trim().parse()? })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    persuade_cli::config::parse_json(&text).with_context(|| format!("in {}", path.display()))
}

fn grid(problem: PathBuf, belief_grid: usize, solver: Solver, paths: usize) -> GridScenario {
    GridScenario {
        problem: None,
        problem_file: Some(problem),
        belief_grid,
        solver,
        solver_tol: None,
        sample_paths: paths,
        verify_solution: None,
    }
}

fn build_config(cli: Cli) -> Result<ScenarioConfig> {
    let g = cli.global;
    let out = |default: &str| g.out.clone().unwrap_or_else(|| PathBuf::from(default));
    let (scenario, out) = match cli.command {
        Command::Run { config } => {
            let mut cfg = load_config(&config)?;
            if let Some(o) = g.out {
                cfg.out = o;
            }
            cfg.tol = g.tol.or(cfg.tol);
            cfg.seed = g.seed.unwrap_or(cfg.seed);
            return Ok(cfg);
        }
        Command::Solve { problem, belief_grid, paths } => {
            (Scenario::Grid(grid(problem, belief_grid, Solver::Lp, paths)), out("solution.json"))
        }
        Command::Saddle { problem, belief_grid, paths } => {
            let mut s = grid(problem, belief_grid, Solver::Saddle, paths);
            s.solver_tol = g.tol;
            (Scenario::Grid(s), out("report.json"))
        }
        Command::VerifyFoc { problem, solution, belief_grid } => {
            let mut s = grid(problem, belief_grid, Solver::Lp, 0);
            s.verify_solution = Some(solution);
            (Scenario::Grid(s), out("foc.json"))
        }
        Command::Binary { mu0, dv, v_ell, h_ell, h_r, verify_lp, belief_grid, samples } => {
            let h_ell: DelayGain = h_ell.parse().map_err(|e| anyhow!("--h-ell: {e}"))?;
            let h_r: DelayGain = h_r.parse().map_err(|e| anyhow!("--h-r: {e}"))?;
            let spec = BinaryPersuasionSpec { mu0, v_ell, v_r: v_ell + dv, h_ell, h_r };
            (Scenario::Binary(BinaryScenario { spec, verify_lp, belief_grid, samples }), out("strategy.json"))
        }
        Command::Censorship { prior, r, theta_bar, oracle } => {
            let prior = parse_prior(&prior)?;
            let oracle = oracle.as_deref().map(parse_oracle).transpose()?;
            (Scenario::Censorship(CensorshipScenario { prior, r, theta_bar, oracle }), out("policy.csv"))
        }
        Command::Goalposts { params, dt } => {
            let params = match params {
                Some(p) => read_json(&p)?,
                None => persuade::consistency::GoalpostsSpec::reference(),
            };
            (Scenario::Goalposts(GoalpostsScenario { params, dt }), out("goalposts.json"))
        }
        Command::Consistency { process, problem, belief_grid } => (
            Scenario::Consistency(ConsistencyScenario {
                problem: None,
                problem_file: Some(problem),
                process: None,
                process_file: Some(process),
                belief_grid,
            }),
            out("consistency.json"),
        ),
        Command::Coase { spec } => {
            let spec = spec.map(|p| read_json(&p)).transpose()?;
            (Scenario::Coase(CoaseScenario { spec }), out("coase.json"))
        }
    };
    Ok(ScenarioConfig { seed: g.seed.unwrap_or(0), tol: g.tol, out, scenario })
}

fn cap_threads() -> Result<()> {
    if let Ok(v) = std::env::var("PERSUADE_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| anyhow!("PERSUADE_THREADS must be a positive integer, got {v:?}"))?;
        if n == 0 {
            bail!("PERSUADE_THREADS must be a positive integer, got 0");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let strict = cli.global.strict;
    let result = cap_threads().and_then(|_| build_config(cli)).and_then(|cfg| {
        let m = run(&cfg)?;
        Ok((cfg, m))
    });
    match result {
        Ok((cfg, m)) => {
            for (name, c) in &m.verdicts {
                let v = match c.verdict {
                    Verdict::Pass => "PASS",
                    Verdict::Fail => "FAIL",
                    Verdict::Inconclusive => "INCONCLUSIVE",
                };
                let note = if c.gating { "" } else { " (informational)" };
                println!("{name}: {v}{note}  {}", c.detail);
            }
            println!("manifest: {}", manifest_path(&cfg.out).display());
            if strict && !m.passed() {
                eprintln!("error: a gating verifier failed");
                return ExitCode::from(2);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
