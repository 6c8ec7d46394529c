use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use persuade::binary::{select_strategy, BinaryPersuasionSpec, StrategyChoice};
use persuade::censorship::{
    build_policy, continuation_mean, discretize_for_oracle, forward_endpoints, identity_residuals, policy_payoff,
    verify_foc_censorship, verify_identities, CensorshipProblem, Prior,
};
use persuade::consistency::{
    coase_demo, goalpost_path, goalposts_strategies, interim_surplus, law_distance, make_zero_surplus, verify_dc1,
    CoaseSpec, Dc1Report, Dc1Verdict, FiniteBeliefProcess, GoalpostRow,
};
use persuade::io::{distribution_from_records, distribution_records, problem_from_json, to_json_string, AtomRecord};
use persuade::model::{build_indirect, occ_residuals, simulate_paths, to_simple_recommendation, BeliefTimeDistribution};
use persuade::oracle::{solve_relaxed, GridProblem, LpSolution};
use persuade::saddle::{
    solve_saddle, time_risk_diagnostics, verify_foc, DualCertificate, SaddleConfig, SaddleStatus, Selection,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{
    parse_json, BinaryScenario, CensorshipScenario, CoaseScenario, ConsistencyScenario, GoalpostsScenario,
    GridScenario, Scenario, ScenarioConfig, Solver,
};
use crate::emit::{emit_csv, emit_json, Cell, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl From<bool> for Verdict {
    fn from(ok: bool) -> Verdict {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub verdict: Verdict,
    /// Informational checks never fail a `--strict` run.
    pub gating: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub role: String,
    /// Relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: String,
    pub seed: u64,
    /// SHA-256 of the resolved config: files inlined, output path dropped.
    pub config_hash: String,
    pub versions: BTreeMap<String, String>,
    pub artifacts: Vec<Artifact>,
    pub verdicts: BTreeMap<String, Check>,
    /// Seconds per stage; the only field that varies between identical runs.
    pub wall_times: BTreeMap<String, f64>,
    /// SHA-256 of this manifest with `wall_times` and `digest` left out.
    pub digest: String,
}

impl RunManifest {
    pub fn passed(&self) -> bool {
        self.verdicts.values().all(|c| !c.gating || c.verdict != Verdict::Fail)
    }

    fn seal(&mut self) {
        let mut v = serde_json::to_value(&*self).expect("manifest serializes");
        let obj = v.as_object_mut().expect("manifest is an object");
        obj.remove("wall_times");
        obj.remove("digest");
        self.digest = sha256_hex(to_json_string(&v).as_bytes());
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// `report.json` + `teleport.csv` gives `report.teleport.csv`.
pub fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    out.with_file_name(format!("{stem}.{suffix}"))
}

pub fn manifest_path(out: &Path) -> PathBuf {
    sidecar(out, "manifest.json")
}

struct Ctx {
    out: PathBuf,
    dir: PathBuf,
    artifacts: Vec<Artifact>,
    verdicts: BTreeMap<String, Check>,
    wall_times: BTreeMap<String, f64>,
}

impl Ctx {
    fn new(out: &Path) -> Result<Ctx> {
        let dir = out.parent().map(Path::to_path_buf).unwrap_or_default();
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        Ok(Ctx { out: out.to_path_buf(), dir, artifacts: Vec::new(), verdicts: BTreeMap::new(), wall_times: BTreeMap::new() })
    }

    fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let x = f();
        *self.wall_times.entry(stage.to_string()).or_default() += start.elapsed().as_secs_f64();
        x
    }

    fn record(&mut self, role: &str, path: &Path) -> Result<()> {
        let bytes = fs::read(path)?;
        let rel = path.strip_prefix(&self.dir).unwrap_or(path);
        self.artifacts.push(Artifact {
            role: role.to_string(),
            path: rel.to_string_lossy().replace('\\', "/"),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    /// Writes the primary artifact (`suffix = None`) or a sidecar.
    fn json<T: Serialize + ?Sized>(&mut self, role: &str, suffix: Option<&str>, value: &T) -> Result<()> {
        let path = suffix.map_or_else(|| self.out.clone(), |s| sidecar(&self.out, s));
        self.timed("emit", || emit_json(value, &path))?;
        self.record(role, &path)
    }

    fn csv(&mut self, role: &str, suffix: Option<&str>, table: &Table) -> Result<()> {
        let path = suffix.map_or_else(|| self.out.clone(), |s| sidecar(&self.out, s));
        self.timed("emit", || emit_csv(table, &path))?;
        self.record(role, &path)
    }

    fn check(&mut self, name: &str, verdict: impl Into<Verdict>, gating: bool, detail: String) {
        self.verdicts.insert(name.to_string(), Check { verdict: verdict.into(), gating, detail });
    }
}

fn read_text(path: &Path, field: &str) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("{field}: cannot read {}", path.display()))
}

fn load_problem(inline: &Option<persuade::model::Primitives>, file: &Option<PathBuf>) -> Result<persuade::model::Primitives> {
    match (inline, file) {
        (Some(p), _) => {
            p.validate().map_err(|e| anyhow!("schema error at problem: {e}"))?;
            Ok(p.clone())
        }
        (None, Some(path)) => {
            problem_from_json(&read_text(path, "problem_file")?).map_err(|e| anyhow!("schema error in {}: {e}", path.display()))
        }
        (None, None) => bail!("schema error at problem: missing"),
    }
}

/// The config with referenced files inlined and the output path dropped,
/// so the hash names the computation rather than where it was written.
fn resolved_config(cfg: &ScenarioConfig) -> Result<Value> {
    let mut v = serde_json::to_value(cfg)?;
    let obj = v.as_object_mut().expect("config is an object");
    obj.remove("out");
    for (file_key, key) in [("problem_file", "problem"), ("process_file", "process"), ("verify_solution", "solution")] {
        if let Some(Value::String(p)) = obj.remove(file_key) {
            let text = read_text(Path::new(&p), file_key)?;
            let doc: Value = serde_json::from_str(&text).with_context(|| format!("{file_key}: {p} is not JSON"))?;
            obj.insert(key.to_string(), doc);
        }
    }
    Ok(v)
}

/// Runs one scenario: solves, verifies, writes the artifacts and the
/// manifest, and returns the manifest.
pub fn run(cfg: &ScenarioConfig) -> Result<RunManifest> {
    cfg.check_shape()?;
    let config_hash = sha256_hex(to_json_string(&resolved_config(cfg)?).as_bytes());
    let mut ctx = Ctx::new(&cfg.out)?;
    match &cfg.scenario {
        Scenario::Grid(g) => run_grid(&mut ctx, g, cfg.tol, cfg.seed)?,
        Scenario::Binary(b) => run_binary(&mut ctx, b, cfg.tol)?,
        Scenario::Censorship(c) => run_censorship(&mut ctx, c, cfg.tol)?,
        Scenario::Goalposts(g) => run_goalposts(&mut ctx, g, cfg.tol)?,
        Scenario::Consistency(c) => run_consistency(&mut ctx, c, cfg.tol)?,
        Scenario::Coase(c) => run_coase(&mut ctx, c, cfg.tol)?,
    }
    let versions = BTreeMap::from([
        ("persuade".to_string(), persuade_version().to_string()),
        ("persuade-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
    ]);
    let mut manifest = RunManifest {
        kind: cfg.scenario.kind().to_string(),
        seed: cfg.seed,
        config_hash,
        versions,
        artifacts: ctx.artifacts,
        verdicts: ctx.verdicts,
        wall_times: ctx.wall_times,
        digest: String::new(),
    };
    manifest.seal();
    emit_json(&manifest, &manifest_path(&cfg.out))?;
    Ok(manifest)
}

fn persuade_version() -> &'static str {
    // Both crates take the workspace version.
    env!("CARGO_PKG_VERSION")
}

#[derive(Serialize)]
struct CertificateDoc<'a> {
    lambda: &'a [f64],
    b: &'a [Vec<f64>],
    a: &'a [f64],
}

impl<'a> CertificateDoc<'a> {
    fn of(c: &'a DualCertificate) -> Self {
        CertificateDoc { lambda: &c.lambda, b: &c.b, a: &c.a }
    }
}

#[derive(Deserialize)]
struct CertificateIn {
    lambda: Vec<f64>,
    b: Vec<Vec<f64>>,
    a: Vec<f64>,
}

fn grid_checks(ctx: &mut Ctx, gp: &GridProblem, f: &BeliefTimeDistribution, cert: &DualCertificate, tol: f64) -> Value {
    let (foc, occ) = ctx.timed("verify", || {
        (verify_foc(gp, f, cert, Selection::Certificate, tol), occ_residuals(f, &gp.util))
    });
    let min_occ = occ.iter().copied().fold(f64::INFINITY, f64::min);
    ctx.check(
        "foc",
        foc.passed,
        true,
        format!("max violation {:.3e}, support gap {:.3e}", foc.max_violation, foc.support_gap),
    );
    ctx.check("occ", occ.is_empty() || min_occ >= -tol, true, format!("smallest obedience residual {min_occ:.3e}"));
    json!({ "foc": foc, "occ_residuals": occ })
}

fn sample_path_table(gp: &GridProblem, f: &BeliefTimeDistribution, n: usize, seed: u64) -> Result<Table> {
    let rec = to_simple_recommendation(f, &gp.util)?;
    let mut header = vec!["path".to_string(), "time".to_string()];
    header.extend(gp.prim.states.iter().map(|s| format!("belief_{s}")));
    let mut t = Table::new(&header);
    for (i, p) in simulate_paths(&rec, n, seed).into_iter().enumerate() {
        let mut row = vec![Cell::from(i), Cell::from(gp.prim.times[p.time])];
        row.extend(p.belief.iter().map(|&x| Cell::from(x)));
        t.push(row);
    }
    Ok(t)
}

fn lp_status(sol: &LpSolution) -> String {
    format!("{:?}", sol.status).to_lowercase()
}

fn run_grid(ctx: &mut Ctx, g: &GridScenario, tol: Option<f64>, seed: u64) -> Result<()> {
    let prim = load_problem(&g.problem, &g.problem_file)?;
    let gp = GridProblem::with_lattice(prim, g.belief_grid)?;
    let times = gp.prim.times.clone();
    let tol = tol.unwrap_or(1e-6);

    if let Some(path) = &g.verify_solution {
        let doc: Value = parse_json(&read_text(path, "verify_solution")?)?;
        let f_doc = doc.get("f").ok_or_else(|| anyhow!("schema error at verify_solution: missing f"))?;
        let c_doc = doc.get("certificate").ok_or_else(|| anyhow!("schema error at verify_solution: missing certificate"))?;
        let records: Vec<AtomRecord> = serde_json::from_value(f_doc.clone()).context("schema error at f")?;
        let c: CertificateIn = serde_json::from_value(c_doc.clone()).context("schema error at certificate")?;
        let f = distribution_from_records(&times, &records)?;
        let cert = DualCertificate { lambda: c.lambda, b: c.b, a: c.a, value: f64::NAN };
        if cert.lambda.len() != times.len() || cert.b.len() != times.len() {
            bail!("schema error at certificate: lambda and b need one entry per grid time");
        }
        let checks = grid_checks(ctx, &gp, &f, &cert, tol);
        let value = f.expected_v(&gp.util);
        return ctx.json("foc_report", None, &json!({ "value": value, "checks": checks }));
    }

    let (f, cert, body) = match g.solver {
        Solver::Lp => {
            let sol = ctx.timed("solve", || solve_relaxed(&gp))?;
            let cert = sol.certificate();
            let body = json!({
                "status": lp_status(&sol),
                "value": sol.objective,
                "f": distribution_records(&sol.f),
                "binding_times": sol.binding_times.iter().map(|&k| times[k]).collect::<Vec<_>>(),
                "duals": {
                    "support": sol.duals.support,
                    "increments": sol.duals.increments,
                    "rows": sol.duals.rows,
                },
                "certificate": CertificateDoc::of(&cert),
                "iterations": sol.iterations,
            });
            (sol.f, cert, body)
        }
        Solver::Saddle => {
            let config = SaddleConfig { tol: g.solver_tol.unwrap_or(1e-5), ..SaddleConfig::default() };
            let rep = ctx.timed("solve", || solve_saddle(&gp, &config))?;
            ctx.check(
                "saddle_converged",
                rep.status == SaddleStatus::Converged,
                true,
                format!("duality gap {:.3e} after {} iterations", rep.duality_gap, rep.iterations),
            );
            let body = json!({
                "status": rep.status,
                "value": rep.value,
                "dual_value": rep.dual_value,
                "duality_gap": rep.duality_gap,
                "foc_max_violation": rep.foc_max_violation,
                "f": distribution_records(&rep.primal),
                "certificate": CertificateDoc::of(&rep.certificate),
                "iterations": rep.iterations,
                "recovery_rounds": rep.recovery_rounds,
            });
            (rep.primal, rep.certificate, body)
        }
    };
    let checks = grid_checks(ctx, &gp, &f, &cert, tol);
    let diagnostics = time_risk_diagnostics(&gp, &f, &cert);
    let mut body = body;
    body["checks"] = checks;
    body["time_risk"] = serde_json::to_value(diagnostics)?;
    ctx.json("solution", None, &body)?;
    // The same solution as a belief process, ready for the consistency scenario.
    let rec = to_simple_recommendation(&f.merged(1e-12), &gp.util)?;
    let proc = FiniteBeliefProcess::from_recommendation(&rec, &gp.prim.prior);
    ctx.json("process", Some("process.json"), &proc)?;
    if g.sample_paths > 0 {
        let table = ctx.timed("replay", || sample_path_table(&gp, &f, g.sample_paths, seed))?;
        ctx.csv("sample_paths", Some("paths.csv"), &table)?;
    }
    Ok(())
}

/// Path table of a binary strategy on `n` even points of `[0, t2]`, with
/// `t1` and `t2` always included.
pub fn binary_path_table(choice: &StrategyChoice, n: usize) -> Table {
    let s = &choice.strategy;
    let mut ts: Vec<f64> = (0..n.max(2)).map(|i| s.t2 * i as f64 / (n.max(2) - 1) as f64).collect();
    ts.push(s.t1);
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let mut t = Table::new(&["t", "mu_l", "mu_r", "targeting", "cdf_revealed", "atom_other"]);
    for &x in &ts {
        let (ml, mr) = match s.suspense_paths(x) {
            Ok((l, r)) => (Some(l), Some(r)),
            Err(_) => (None, None),
        };
        let target = s.targeting(x).ok().map(|p| p.0);
        let (cdf, atom) = if x + 1e-12 < s.t1 { (0.0, 0.0) } else { s.joint_cdf(x) };
        t.push(vec![x.into(), ml.into(), mr.into(), target.into(), cdf.into(), atom.into()]);
    }
    t
}

/// Solves the grid version of a binary environment on `0, dt, ...` up to
/// `spec.horizon()`.
pub fn binary_oracle(spec: &BinaryPersuasionSpec, dt: f64, belief_grid: usize) -> Result<LpSolution> {
    if !(dt > 0.0 && dt <= 0.5) {
        bail!("schema error at verify_lp: step must be in (0, 0.5]");
    }
    let k = (spec.horizon() / dt).ceil() as usize;
    let times: Vec<f64> = (0..=k).map(|i| i as f64 * dt).collect();
    let gp = GridProblem::with_lattice(spec.to_primitives(times)?, belief_grid)?;
    Ok(solve_relaxed(&gp)?)
}

fn run_binary(ctx: &mut Ctx, b: &BinaryScenario, tol: Option<f64>) -> Result<()> {
    b.spec.validate().map_err(|e| anyhow!("schema error at spec: {e}"))?;
    let choice = ctx.timed("solve", || select_strategy(&b.spec))?;
    ctx.check(
        "foc_residuals",
        choice.certified,
        true,
        format!("res_a {:.3e}, res_b {:.3e}", choice.residuals.res_a, choice.residuals.res_b),
    );
    let mut lp = Value::Null;
    if let Some(dt) = b.verify_lp {
        let sol = ctx.timed("oracle", || binary_oracle(&b.spec, dt, b.belief_grid))?;
        let rel = (choice.payoff - sol.objective) / sol.objective.abs().max(1e-12);
        let bound = tol.unwrap_or(0.01);
        ctx.check(
            "lp_cross_check",
            rel.abs() <= bound,
            true,
            format!("closed form {:.6} vs oracle {:.6} ({:+.3}%)", choice.payoff, sol.objective, 100.0 * rel),
        );
        lp = json!({ "dt": dt, "value": sol.objective, "relative_gap": rel, "status": lp_status(&sol) });
    }
    let table = binary_path_table(&choice, b.samples);
    ctx.json("strategy", None, &json!({ "choice": choice, "lp_cross_check": lp }))?;
    ctx.csv("paths", Some("paths.csv"), &table)
}

fn run_censorship(ctx: &mut Ctx, c: &CensorshipScenario, tol: Option<f64>) -> Result<()> {
    let tol = tol.unwrap_or(1e-6);
    let prior = Prior::new(c.prior.clone()).map_err(|e| anyhow!("schema error at prior: {e}"))?;
    let prob = CensorshipProblem::new(prior, c.r, c.theta_bar)?;
    let pol = ctx.timed("solve", || build_policy(&prob))?;
    let (ident, samples, foc, ends) = ctx.timed("verify", || {
        (
            verify_identities(&prob, &pol, tol),
            identity_residuals(&prob, &pol),
            verify_foc_censorship(&prob, &pol, 1e-5),
            forward_endpoints(&prob, &pol),
        )
    });
    ctx.check(
        "identities",
        ident.passed,
        true,
        format!(
            "forward {:.2e}/{:.2e}, no upward surprise {:.2e}, indifference {:.2e} over {} samples",
            ident.forward_alpha, ident.forward_beta, ident.no_upward_surprise, ident.indifference, ident.samples
        ),
    );
    ctx.check("foc", foc.passed, true, format!("largest multiplier violation {:.3e}", foc.max_l));
    let payoff = policy_payoff(&prob, &pol);
    let mut oracle = Value::Null;
    if let Some(g) = c.oracle {
        let sol = ctx.timed("oracle", || -> Result<LpSolution> {
            let gp = discretize_for_oracle(&prob, g.n_theta, g.n_t, pol.horizon)?;
            Ok(solve_relaxed(&gp)?)
        })?;
        let rel = (sol.objective - payoff) / payoff.abs().max(1e-12);
        ctx.check(
            "oracle_cross_check",
            rel.abs() <= 0.03,
            true,
            format!("oracle {:.6} vs policy {:.6} ({:+.2}%)", sol.objective, payoff, 100.0 * rel),
        );
        oracle = json!({ "n_theta": g.n_theta, "n_t": g.n_t, "value": sol.objective, "relative_gap": rel });
    }

    let mut by_index = BTreeMap::new();
    for s in &samples {
        by_index.insert(s.index, s);
    }
    let mut table = Table::new(&[
        "t",
        "alpha",
        "beta",
        "m_hat",
        "res_forward_alpha",
        "res_forward_beta",
        "res_no_upward_surprise",
        "res_indifference",
    ]);
    for (k, &t) in pol.times.iter().enumerate() {
        let m = continuation_mean(&prob, &pol, t);
        let s = by_index.get(&k);
        table.push(vec![
            t.into(),
            pol.alpha[k].into(),
            pol.beta[k].into(),
            m.into(),
            s.map(|s| s.forward_alpha).into(),
            s.map(|s| s.forward_beta).into(),
            s.map(|s| s.no_upward_surprise).into(),
            s.map(|s| s.indifference).into(),
        ]);
    }
    ctx.csv("policy", None, &table)?;
    ctx.json(
        "report",
        Some("report.json"),
        &json!({
            "prior": c.prior,
            "r": c.r,
            "theta_bar": c.theta_bar,
            "case": pol.case,
            "case_tag": pol.case.tag(),
            "horizon": pol.horizon,
            "m_star": pol.m_star,
            "theta_star": pol.theta_star,
            "theta_star_upper": pol.theta_star_upper,
            "t0": pol.t0,
            "payoff": payoff,
            "forward_endpoints": [ends.0, ends.1],
            "identities": ident,
            "foc": foc,
            "oracle_cross_check": oracle,
        }),
    )
}

fn goalpost_table(rows: &[GoalpostRow]) -> Table {
    let mut t = Table::new(&["time", "expected_x", "reveal_low", "reveal_high"]);
    for r in rows {
        t.push(vec![r.time.into(), r.expected_x.into(), r.reveal_low.into(), r.reveal_high.into()]);
    }
    t
}

fn dc1_verdict(v: Dc1Verdict) -> Verdict {
    match v {
        Dc1Verdict::Pass => Verdict::Pass,
        Dc1Verdict::Fail => Verdict::Fail,
        Dc1Verdict::Inconclusive => Verdict::Inconclusive,
    }
}

fn dc1_summary(r: &Dc1Report, proc: &FiniteBeliefProcess) -> Value {
    json!({
        "verdict": r.verdict,
        "worst_gap": r.worst_gap,
        "worst_time": r.worst_node.map(|i| proc.times[proc.nodes[i].time]),
        "boundary_supported": r.boundary_supported,
        "v_monotone": r.v_monotone,
    })
}

fn run_goalposts(ctx: &mut Ctx, g: &GoalpostsScenario, tol: Option<f64>) -> Result<()> {
    let tol = tol.unwrap_or(1e-9);
    g.params.validate().map_err(|e| anyhow!("schema error at params: {e}"))?;
    let gs = ctx.timed("solve", || goalposts_strategies(&g.params, g.dt))?;
    let gp = GridProblem::with_lattice(gs.primitives.clone(), 101)?;
    let util = build_indirect(&gs.primitives)?;
    let mut summary = serde_json::Map::new();
    for (name, proc) in [("teleport", &gs.teleport), ("inch", &gs.inch)] {
        let (dc1, surplus) = ctx.timed("verify", || -> Result<_> {
            Ok((verify_dc1(proc, &gp, tol)?, interim_surplus(proc, &util, tol)))
        })?;
        let value: f64 = proc.outcome_law().expected_v(&util);
        // The teleporting strategy is expected to fail both checks; only the
        // inching strategy's verdicts gate a strict run.
        let gating = name == "inch";
        ctx.check(&format!("{name}_dc1"), dc1_verdict(dc1.verdict), gating, format!("worst gap {:.3e}", dc1.worst_gap));
        ctx.check(
            &format!("{name}_zero_surplus"),
            surplus.zero_surplus,
            gating,
            format!("largest surplus {:.3e}", surplus.max_surplus),
        );
        summary.insert(
            name.to_string(),
            json!({
                "principal_value": value,
                "dc1": dc1_summary(&dc1, proc),
                "max_surplus": surplus.max_surplus,
                "nodes": proc.nodes.len(),
            }),
        );
        let table = goalpost_table(&goalpost_path(proc, g.params.x_l, g.params.x_h));
        ctx.csv(&format!("{name}_path"), Some(&format!("{name}.csv")), &table)?;
    }
    let law = law_distance(&gs.teleport.outcome_law(), &gs.inch.outcome_law());
    ctx.check("same_outcome_law", law <= 1e-6, true, format!("law distance {law:.3e}"));
    ctx.json(
        "report",
        None,
        &json!({
            "params": g.params,
            "dt": g.dt,
            "closed_form": gs.closed_form,
            "t_star_index": gs.t_star_index,
            "splits": gs.splits.len(),
            "law_distance": law,
            "strategies": summary,
        }),
    )
}

fn run_consistency(ctx: &mut Ctx, c: &ConsistencyScenario, tol: Option<f64>) -> Result<()> {
    let tol = tol.unwrap_or(1e-9);
    let prim = load_problem(&c.problem, &c.problem_file)?;
    let proc: FiniteBeliefProcess = match (&c.process, &c.process_file) {
        (Some(p), _) => p.clone(),
        (None, Some(path)) => parse_json(&read_text(path, "process_file")?)
            .with_context(|| format!("in {}", path.display()))?,
        (None, None) => bail!("schema error at process: missing"),
    };
    if proc.times != prim.times {
        bail!("schema error at process.times: must equal the problem's times");
    }
    proc.validate(1e-9).map_err(|e| anyhow!("schema error at process: {e}"))?;
    let gp = GridProblem::with_lattice(prim.clone(), c.belief_grid)?;
    let util = build_indirect(&prim)?;
    let surplus = interim_surplus(&proc, &util, tol);
    let dc1 = ctx.timed("verify", || verify_dc1(&proc, &gp, 1e-6))?;
    ctx.check("zero_surplus", surplus.zero_surplus, false, format!("largest surplus {:.3e}", surplus.max_surplus));
    ctx.check("dc1", dc1_verdict(dc1.verdict), false, format!("worst gap {:.3e}", dc1.worst_gap));
    let (z, splits) = ctx.timed("transform", || make_zero_surplus(&proc, &util, 1e-12))?;
    let z_surplus = interim_surplus(&z, &util, tol);
    let law = law_distance(&proc.outcome_law(), &z.outcome_law());
    let dv = z.outcome_law().expected_v(&util) - proc.outcome_law().expected_v(&util);
    ctx.check(
        "transform_zero_surplus",
        z_surplus.zero_surplus,
        true,
        format!("largest surplus after {} splits {:.3e}", splits.len(), z_surplus.max_surplus),
    );
    ctx.check(
        "transform_preserves_law",
        law <= 1e-9 && dv.abs() <= 1e-9,
        true,
        format!("law distance {law:.3e}, value change {dv:.3e}"),
    );
    ctx.json(
        "report",
        None,
        &json!({
            "surplus": surplus,
            "dc1": dc1_summary(&dc1, &proc),
            "transform": {
                "splits": splits,
                "law_distance": law,
                "value_change": dv,
                "max_surplus": z_surplus.max_surplus,
            },
        }),
    )?;
    ctx.json("zero_surplus_process", Some("zero_surplus.json"), &z)
}

fn run_coase(ctx: &mut Ctx, c: &CoaseScenario, tol: Option<f64>) -> Result<()> {
    let tol = tol.unwrap_or(1e-9);
    let spec = c.spec.clone().unwrap_or_else(CoaseSpec::canonical);
    let res = ctx.timed("solve", || coase_demo(&spec))?;
    ctx.check(
        "one_shot_deviations",
        res.max_deviation_gain <= tol,
        true,
        format!("largest gain {:.3e}", res.max_deviation_gain),
    );
    ctx.check(
        "full_revelation_at_first",
        res.full_revelation_at_first,
        false,
        format!("principal value {:.6}", res.principal_value),
    );
    ctx.json("report", None, &res)
}
