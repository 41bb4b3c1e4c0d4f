//! `drbsde`: solve, play, price and fuzz doubly reflected BSDEs on scenario trees.
//!
//! Exit status: 0 when every check passes, 2 on an invariant violation,
//! 1 on usage or configuration errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use drbsde_core::drbsde::DrbsdeSolution;
use drbsde_core::dynkin::{epsilon_saddle, system_epsilon_saddle};
use drbsde_core::fuzz::{run_fuzz, VERIFY_TOL};
use drbsde_core::pricing::{price_game_option, superhedge_verify, HedgePlan};
use drbsde_core::process::regularity;
use drbsde_core::scenario::{parse_theta, Resolved, ScenarioFile};
use drbsde_core::{
    game_values, ref_operator, solve_direct, verify_solution, AdmissiblePair, LadlagProcess,
    ScenarioTree,
};

/// Tolerance for game values against `Y0`.
const GAME_TOL: f64 = 1e-10;

#[derive(Parser)]
#[command(name = "drbsde", version, about = "Doubly reflected BSDEs on scenario trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the DRBSDE and check every defining condition.
    Solve(Common),
    /// Brute-force Dynkin game values against Y0.
    Game(GameArgs),
    /// Seller's price of the game option and its superhedges.
    Price(Common),
    /// Snell envelope of the lower barrier.
    Ref(Common),
    /// Re-check a solution table written by `solve`.
    Verify(Common),
    /// Random admissible instances through the full invariant suite.
    Fuzz(FuzzArgs),
}

#[derive(Args)]
struct Common {
    /// Scenario file (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory; defaults to the scenario's `outputs.dir`, then `.`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GameArgs {
    #[command(flatten)]
    common: Common,
    /// Play over stopping systems instead of stopping times.
    #[arg(long)]
    systems: bool,
    /// Also check the epsilon-saddle strategies.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Initial time: `root`, `terminal`, `level:i` or `nodes:a,b`.
    #[arg(long)]
    theta: Option<String>,
}

#[derive(Args)]
struct FuzzArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

/// Whether every check of a command passed.
type Verdict = bool;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<Verdict> {
    match command {
        Command::Solve(c) => solve(&c),
        Command::Game(g) => game(&g),
        Command::Price(c) => price(&c),
        Command::Ref(c) => reference(&c),
        Command::Verify(c) => verify(&c),
        Command::Fuzz(f) => fuzz(&f),
    }
}

struct Loaded {
    scenario: ScenarioFile,
    resolved: Resolved,
    out: PathBuf,
}

fn load(c: &Common) -> Result<Loaded> {
    let text = fs::read_to_string(&c.scenario)
        .with_context(|| format!("reading {}", c.scenario.display()))?;
    let scenario = ScenarioFile::parse(&text, &c.scenario.display().to_string())?;
    let resolved = scenario
        .resolve()
        .with_context(|| format!("building {}", c.scenario.display()))?;
    let out = c
        .out
        .clone()
        .or_else(|| scenario.outputs.as_ref().map(|o| PathBuf::from(&o.dir)))
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok(Loaded {
        scenario,
        resolved,
        out,
    })
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// One node of a solution table; floats round-trip exactly through CSV.
#[derive(Debug, Serialize, Deserialize)]
struct SolutionRow {
    node: usize,
    level: usize,
    time: f64,
    y_at: f64,
    y_right: f64,
    z: f64,
    k: f64,
    h_inc: f64,
    a_inc: f64,
    ap_inc: f64,
    c_jump: f64,
    cp_jump: f64,
    xi_at: f64,
    xi_right: f64,
    zeta_at: f64,
    zeta_right: f64,
}

fn solution_rows<'a>(
    sol: &'a DrbsdeSolution,
    pair: &'a AdmissiblePair,
    tree: &'a ScenarioTree,
) -> impl Iterator<Item = SolutionRow> + 'a {
    (0..tree.len()).map(move |n| SolutionRow {
        node: n,
        level: tree.level(n),
        time: tree.time(n),
        y_at: sol.y.at[n],
        y_right: sol.y.right[n],
        z: sol.z[n],
        k: sol.k[n],
        h_inc: sol.h_inc[n],
        a_inc: sol.a_inc[n],
        ap_inc: sol.ap_inc[n],
        c_jump: sol.c_jump[n],
        cp_jump: sol.cp_jump[n],
        xi_at: pair.xi.at[n],
        xi_right: pair.xi.right[n],
        zeta_at: pair.zeta.at[n],
        zeta_right: pair.zeta.right[n],
    })
}

fn solve(c: &Common) -> Result<Verdict> {
    let Loaded { resolved: r, out, .. } = load(c)?;
    let sol = solve_direct(&r.pair, &r.driver, &r.tree).context("solving")?;
    let report = verify_solution(&sol, &r.pair, &r.driver, &r.tree);
    let passes = report.passes(VERIFY_TOL);
    write_csv(&out, "solution.csv", solution_rows(&sol, &r.pair, &r.tree))?;
    write_json(
        &out,
        "report.json",
        &json!({
            "y0": sol.y0(),
            "nodes": r.tree.len(),
            "depth": r.tree.depth(),
            "driver": r.driver.name(),
            "xi_regularity": regularity(&r.pair.xi, &r.tree),
            "zeta_regularity": regularity(&r.pair.zeta, &r.tree),
            "verification": report,
            "max_violation": report.max_violation(),
            "tolerance": VERIFY_TOL,
            "passes": passes,
        }),
    )?;
    println!("Y0 = {}", sol.y0());
    Ok(passes)
}

fn game(g: &GameArgs) -> Result<Verdict> {
    let Loaded {
        scenario,
        resolved: r,
        out,
    } = load(&g.common)?;
    let systems = g.systems || r.systems;
    let theta = match &g.theta {
        Some(spec) => parse_theta(spec, &r.tree)?,
        None => r.theta.clone(),
    };
    let epsilon = g.epsilon.or(scenario.game.epsilon);
    let sol = solve_direct(&r.pair, &r.driver, &r.tree).context("solving")?;
    let report = game_values(&r.pair, &r.driver, &r.tree, &theta, systems).context("playing the game")?;
    let rx = regularity(&r.pair.xi, &r.tree);
    let rz = regularity(&r.pair.zeta, &r.tree);
    // The value is Y at theta over systems always, over times when the barriers are right-regular.
    let characterized = systems || (rx.right_usc && rz.right_lsc);
    let gap = report
        .theta_nodes
        .iter()
        .enumerate()
        .map(|(m, &n)| {
            (report.upper[m] - sol.y.at[n])
                .abs()
                .max((report.lower[m] - sol.y.at[n]).abs())
        })
        .fold(0.0, f64::max);
    let mut passes = !characterized || gap <= GAME_TOL;
    let saddle = match epsilon {
        Some(eps) if systems => {
            let s = system_epsilon_saddle(&r.pair, &r.driver, &r.tree, &theta, eps)?;
            passes &= s.holds();
            Some(serde_json::to_value(&s)?)
        }
        Some(eps) => {
            let s = epsilon_saddle(&r.pair, &r.driver, &r.tree, &theta, eps)?;
            passes &= s.holds();
            Some(serde_json::to_value(&s)?)
        }
        None => None,
    };
    write_csv(
        &out,
        "criterion.csv",
        report.theta_nodes.iter().enumerate().map(|(m, &n)| ValueRow {
            node: n,
            upper: report.upper[m],
            lower: report.lower[m],
            y_at: sol.y.at[n],
        }),
    )?;
    write_json(
        &out,
        "game.json",
        &json!({
            "value": report.has_value.then(|| report.upper[0]),
            "y0": sol.y0(),
            "characterized": characterized,
            "max_gap_to_y": gap,
            "game": report,
            "epsilon_saddle": saddle,
            "passes": passes,
        }),
    )?;
    println!(
        "upper = {}, lower = {}, Y = {} ({} {})",
        report.upper[0],
        report.lower[0],
        sol.y.at[report.theta_nodes[0]],
        report.maximizer_count,
        if systems { "stopping systems" } else { "stopping times" }
    );
    Ok(passes)
}

#[derive(Serialize)]
struct ValueRow {
    node: usize,
    upper: f64,
    lower: f64,
    y_at: f64,
}

#[derive(Serialize)]
struct HedgeRow {
    node: usize,
    level: usize,
    time: f64,
    bond: f64,
    s1: f64,
    s2: f64,
    phi1: f64,
    phi2: f64,
    wealth_star: Option<f64>,
    wealth_bar: Option<f64>,
    stopped_star: Option<bool>,
    stopped_bar: Option<bool>,
    xi_at: f64,
    zeta_at: f64,
}

fn price(c: &Common) -> Result<Verdict> {
    let Loaded { resolved: r, out, .. } = load(c)?;
    let model = r
        .market
        .as_ref()
        .context("pricing needs a market: add `market` or a payoff builder to the scenario")?;
    let price = price_game_option(&r.pair, model, &r.driver, &r.tree).context("pricing")?;
    let check = |plan: &Option<HedgePlan>| -> Result<_> {
        plan.as_ref()
            .map(|p| superhedge_verify(p, &r.pair, model, &r.driver, &r.tree))
            .transpose()
            .map_err(Into::into)
    };
    let star = check(&price.hedge_star)?;
    let bar = check(&price.hedge_bar)?;
    let passes = star.iter().chain(&bar).all(|s| s.passes);
    let phi = |n: usize| {
        price
            .hedge_star
            .as_ref()
            .map_or_else(|| model.portfolio(price.solution.z[n], price.solution.k[n]), |p| p.phi[n])
    };
    write_csv(
        &out,
        "hedge.csv",
        (0..r.tree.len()).map(|n| HedgeRow {
            node: n,
            level: r.tree.level(n),
            time: r.tree.time(n),
            bond: model.prices[0][n],
            s1: model.prices[1][n],
            s2: model.prices[2][n],
            phi1: phi(n)[0],
            phi2: phi(n)[1],
            wealth_star: star.as_ref().map(|s| s.wealth[n]),
            wealth_bar: bar.as_ref().map(|s| s.wealth[n]),
            stopped_star: price.hedge_star.as_ref().map(|p| p.sigma.is_effective(&r.tree, n)),
            stopped_bar: price.hedge_bar.as_ref().map(|p| p.sigma.is_effective(&r.tree, n)),
            xi_at: r.pair.xi.at[n],
            zeta_at: r.pair.zeta.at[n],
        }),
    )?;
    let sigma_nodes =
        |p: &Option<HedgePlan>| p.as_ref().map(|p| p.sigma.effective_nodes(&r.tree));
    write_json(
        &out,
        "price.json",
        &json!({
            "u0": price.u0,
            "xi_regularity": price.xi_regularity,
            "zeta_regularity": price.zeta_regularity,
            "hedgeable": price.hedge_star.is_some(),
            "four_branch": price.four_branch,
            "sigma_star": sigma_nodes(&price.hedge_star),
            "sigma_bar": sigma_nodes(&price.hedge_bar),
            "superhedge_star": star,
            "superhedge_bar": bar,
            "passes": passes,
        }),
    )?;
    println!("u0 = {}", price.u0);
    if price.hedge_star.is_none() {
        println!("barriers miss the superhedging regularity flags: price only, no hedge");
    }
    Ok(passes)
}

#[derive(Serialize)]
struct RefRow {
    node: usize,
    level: usize,
    time: f64,
    xi_at: f64,
    xi_right: f64,
    x_at: f64,
    x_right: f64,
    a_inc: f64,
    c_jump: f64,
    z: f64,
    k: f64,
    h_inc: f64,
}

fn reference(c: &Common) -> Result<Verdict> {
    let Loaded { resolved: r, out, .. } = load(c)?;
    let s = ref_operator(&r.pair.xi, &r.tree).context("Snell envelope")?;
    write_csv(
        &out,
        "ref.csv",
        (0..r.tree.len()).map(|n| RefRow {
            node: n,
            level: r.tree.level(n),
            time: r.tree.time(n),
            xi_at: r.pair.xi.at[n],
            xi_right: r.pair.xi.right[n],
            x_at: s.x.at[n],
            x_right: s.x.right[n],
            a_inc: s.a_inc[n],
            c_jump: s.c_jump[n],
            z: s.z[n],
            k: s.k[n],
            h_inc: s.h_inc[n],
        }),
    )?;
    println!("Ref(xi) at root = {}", s.x.at[0]);
    Ok(true)
}

fn verify(c: &Common) -> Result<Verdict> {
    let Loaded { resolved: r, out, .. } = load(c)?;
    let path = out.join("solution.csv");
    let mut reader = csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
    let rows = reader
        .deserialize()
        .collect::<std::result::Result<Vec<SolutionRow>, _>>()
        .with_context(|| format!("parsing {}", path.display()))?;
    if rows.len() != r.tree.len() || rows.iter().enumerate().any(|(i, row)| row.node != i) {
        bail!(
            "{}: expected nodes 0..{} in order, found {} rows",
            path.display(),
            r.tree.len(),
            rows.len()
        );
    }
    let col = |get: fn(&SolutionRow) -> f64| rows.iter().map(get).collect::<Vec<_>>();
    let sol = DrbsdeSolution {
        y: LadlagProcess::new(&r.tree, col(|x| x.y_at), col(|x| x.y_right))?,
        z: col(|x| x.z),
        k: col(|x| x.k),
        h_inc: col(|x| x.h_inc),
        a_inc: col(|x| x.a_inc),
        ap_inc: col(|x| x.ap_inc),
        c_jump: col(|x| x.c_jump),
        cp_jump: col(|x| x.cp_jump),
    };
    let report = verify_solution(&sol, &r.pair, &r.driver, &r.tree);
    let passes = report.passes(VERIFY_TOL);
    write_json(
        &out,
        "verify.json",
        &json!({
            "source": path.display().to_string(),
            "y0": sol.y0(),
            "verification": report,
            "max_violation": report.max_violation(),
            "tolerance": VERIFY_TOL,
            "passes": passes,
        }),
    )?;
    println!(
        "{}: max violation {:e} ({})",
        path.display(),
        report.max_violation(),
        if passes { "pass" } else { "FAIL" }
    );
    Ok(passes)
}

fn fuzz(f: &FuzzArgs) -> Result<Verdict> {
    fs::create_dir_all(&f.out).with_context(|| format!("creating {}", f.out.display()))?;
    let report = run_fuzz(f.seed, f.n);
    write_json(&f.out, "fuzz_report.json", &report)?;
    if let Some(repro) = &report.repro {
        let path = f.out.join("repro.json");
        fs::write(&path, repro.to_json() + "\n").with_context(|| format!("writing {}", path.display()))?;
        println!("minimized repro written to {}", path.display());
    }
    println!("{}/{} instances passed (seed {})", report.passed, report.n, f.seed);
    Ok(report.failed == 0)
}
