use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use pacrl::bounds::{
    biased_fraction_bound, cem_ns_sample_size, cem_s_sample_size, cem_s_sample_size_at, hoeffding_dep_tail, PacParams,
};
use pacrl::cem::{cem_ns_solve, cem_s_solve};
use pacrl::dp::{enumerate_policies, evaluate_policy, SolveOptions};
use pacrl::harness::{grid, run_pac_trials, sweep, Solver, TrialConfig};
use pacrl::lower_bound::{
    build_family_member, chernoff_event_probability, closed_form_value, deviation, gap_certificate,
    likelihood_ratio, sample_floor, theta, LowerBoundFamily, Member, C1_PRIME, C2_PRIME,
};
use pacrl::mdp::{random_mdp, GenSpec};
use pacrl::sampling::{sample_dataset_with_budget, SampleEncoding};
use pacrl::ttm::{default_tree_count, ttm_select_capped};
use pacrl::verify::{run_verification_suite, verify_dataset, Caps, Scope, SuiteSizes};
use pacrl::worlds::{World, WorldModel};
use pacrl::{Dataset, Horizon, Kind, MdpSpec, Policy};

#[derive(Parser)]
#[command(name = "pacrl", version, about = "PAC planning from generative-model samples")]
struct Cli {
    /// Base seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 uses every core. Never changes the output.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// JSON file with enumeration and sampling caps.
    #[arg(long, global = true)]
    caps: Option<PathBuf>,
    /// Write the result here instead of stdout.
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Random MDP in JSON form.
    GenMdp(GenArgs),
    /// Draw a dataset of N next-state samples per tuple.
    Sample {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum, default_value_t = EncodingArg::Base64)]
        encoding: EncodingArg,
    },
    /// Plan from samples (CEM) or trajectory trees (TTM).
    Solve {
        #[command(subcommand)]
        solver: SolveCommand,
    },
    /// Exact value of a policy on an MDP.
    Eval {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        policy: PathBuf,
    },
    /// World-level analysis of a stored dataset.
    Worlds {
        #[command(subcommand)]
        command: WorldsCommand,
    },
    /// Sample sizes and tail bounds.
    Bounds {
        #[command(subcommand)]
        command: BoundsCommand,
    },
    /// The lower-bound instance family.
    LbFamily {
        #[command(subcommand)]
        command: FamilyCommand,
    },
    /// Seeded repeated runs with mistake-rate statistics.
    PacTrials(TrialArgs),
    /// Resumable grid of trial runs written as CSV.
    Sweep {
        #[command(flatten)]
        trials: TrialArgs,
        /// Comma-separated solvers.
        #[arg(long, value_delimiter = ',', default_value = "cem-ns")]
        solvers: Vec<String>,
        #[arg(long = "eps-grid", value_delimiter = ',', required = true)]
        eps_grid: Vec<f64>,
        #[arg(long = "delta-grid", value_delimiter = ',', required = true)]
        delta_grid: Vec<f64>,
        /// Sample counts; `formula` uses the solver's own count.
        #[arg(long = "n-grid", value_delimiter = ',', default_value = "formula")]
        n_grid: Vec<String>,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Run the verification campaigns.
    VerifyAll {
        /// Restrict to these check families (default: all).
        #[arg(long, value_delimiter = ',')]
        scope: Vec<String>,
        /// Acceptance-size campaigns instead of smoke-test sizes.
        #[arg(long)]
        full: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Stationary,
    Nonstationary,
}

impl From<KindArg> for Kind {
    fn from(k: KindArg) -> Kind {
        match k {
            KindArg::Stationary => Kind::Stationary,
            KindArg::Nonstationary => Kind::Nonstationary,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EncodingArg {
    Base64,
    Plain,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long)]
    states: usize,
    #[arg(long)]
    actions: usize,
    /// Steps, or `inf`.
    #[arg(long, value_parser = parse_horizon)]
    horizon: Horizon,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long)]
    deterministic: bool,
}

fn parse_horizon(text: &str) -> std::result::Result<Horizon, String> {
    if text == "inf" {
        return Ok(Horizon::Infinite);
    }
    text.parse::<usize>()
        .map(Horizon::Finite)
        .map_err(|e| format!("horizon must be an integer or `inf`: {e}"))
}

#[derive(Subcommand)]
enum SolveCommand {
    CemNs(CemArgs),
    CemS(CemArgs),
    Ttm {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long, default_value_t = 0)]
        root: usize,
        /// Tree count; defaults to the Hoeffding count for `eps` and `delta`.
        #[arg(long)]
        trees: Option<u64>,
        #[arg(long, default_value_t = 0.5)]
        eps: f64,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
    },
}

#[derive(Args)]
struct CemArgs {
    #[arg(long)]
    mdp: PathBuf,
    /// Stored dataset; sampled from the MDP with `--n` when absent.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Subcommand)]
enum WorldsCommand {
    /// Check world identities on a dataset.
    Verify {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        mdp: PathBuf,
        /// Truncated horizon for stationary data (default: the MDP's finite horizon).
        #[arg(long)]
        hbar: Option<usize>,
        #[arg(long, value_delimiter = ',', default_value = "consistency")]
        check: Vec<String>,
    },
    /// The deterministic MDP a world induces, and its value under a policy.
    Induce {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        hbar: Option<usize>,
        /// Digit string or comma-separated 1-based indices.
        #[arg(long)]
        world: String,
        #[arg(long)]
        policy: Option<PathBuf>,
    },
}

#[derive(Args)]
struct PacArgs {
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    v_max: f64,
    #[arg(long)]
    states: usize,
    #[arg(long)]
    actions: usize,
}

#[derive(Subcommand)]
enum BoundsCommand {
    CemNs {
        #[command(flatten)]
        pac: PacArgs,
        #[arg(long)]
        horizon: usize,
    },
    CemS {
        #[command(flatten)]
        pac: PacArgs,
        #[arg(long)]
        gamma: f64,
        /// Override the truncated horizon.
        #[arg(long)]
        hbar: Option<usize>,
    },
    Hoeffding {
        #[arg(long)]
        m: u64,
        #[arg(long)]
        gap: f64,
        #[arg(long, default_value_t = 0.0)]
        lo: f64,
        #[arg(long, default_value_t = 1.0)]
        hi: f64,
    },
    BiasedFraction {
        #[arg(long)]
        pairs: usize,
        #[arg(long)]
        hbar: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        v_max: f64,
    },
}

#[derive(Args)]
struct FamilyArgs {
    #[arg(long = "initial-states", default_value_t = 2)]
    initial_states: usize,
    #[arg(long, default_value_t = 2)]
    actions: usize,
    #[arg(long)]
    p: f64,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long)]
    horizon: usize,
}

impl FamilyArgs {
    fn family(&self) -> LowerBoundFamily {
        LowerBoundFamily {
            initial_states: self.initial_states,
            actions: self.actions,
            p: self.p,
            alpha: self.alpha,
            horizon: self.horizon,
        }
    }
}

#[derive(Subcommand)]
enum FamilyCommand {
    /// Export one member as MDP JSON.
    Build {
        #[command(flatten)]
        family: FamilyArgs,
        /// Modified pair `a,b` (0-based); the base member when absent.
        #[arg(long, value_delimiter = ',')]
        modified: Option<Vec<usize>>,
    },
    ClosedForm {
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
        #[arg(long)]
        horizon: usize,
    },
    Gap {
        #[arg(long)]
        horizon: usize,
        #[arg(long)]
        eps: f64,
    },
    Chernoff {
        #[arg(long)]
        l: u64,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = C1_PRIME)]
        c1: f64,
        #[arg(long, default_value_t = C2_PRIME)]
        c2: f64,
    },
    Likelihood {
        #[arg(long)]
        s: u64,
        #[arg(long)]
        l: u64,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        alpha: f64,
    },
    Floor {
        #[arg(long)]
        horizon: usize,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        delta: f64,
        /// State-action pairs of the family.
        #[arg(long, default_value_t = 1)]
        pairs: usize,
    },
}

#[derive(Args)]
struct TrialArgs {
    #[arg(long)]
    mdp: PathBuf,
    #[arg(long, default_value = "cem-ns")]
    solver: String,
    #[arg(long, default_value_t = 0.5)]
    eps: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Samples per tuple (trees for TTM); defaults to the solver's formula.
    #[arg(long)]
    n: Option<u64>,
    #[arg(long, default_value_t = 100)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    root: usize,
}

/// What a command produced and whether its checks passed.
struct Outcome {
    body: String,
    passed: bool,
}

impl Outcome {
    fn json<T: Serialize>(v: &T) -> Result<Self> {
        Ok(Outcome {
            body: serde_json::to_string_pretty(v)?,
            passed: true,
        })
    }

    fn checked<T: Serialize>(v: &T, passed: bool) -> Result<Self> {
        Ok(Outcome {
            passed,
            ..Outcome::json(v)?
        })
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_mdp(path: &Path) -> Result<MdpSpec<f64>> {
    Ok(MdpSpec::from_json(&read(path)?)?)
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Ok(Dataset::from_json(&read(path)?)?)
}

fn load_policy(path: &Path) -> Result<Policy> {
    Ok(Policy::from_json(&read(path)?)?)
}

fn parse_scopes(tags: &[String]) -> Result<Vec<Scope>> {
    if tags.is_empty() {
        return Ok(Scope::ALL.to_vec());
    }
    Ok(tags.iter().map(|t| Scope::parse(t)).collect::<pacrl::Result<_>>()?)
}

fn trial_config(a: &TrialArgs, seed: u64, threads: usize, caps: &Caps) -> Result<TrialConfig> {
    Ok(TrialConfig {
        solver: Solver::parse(&a.solver)?,
        eps: a.eps,
        delta: a.delta,
        n_override: a.n,
        trials: a.trials,
        base_seed: seed,
        threads,
        root: a.root,
        sample_budget: caps.sample_budget,
    })
}

fn pac_params(a: &PacArgs, horizon: Horizon, gamma: f64) -> PacParams {
    PacParams {
        eps: a.eps,
        delta: a.delta,
        v_max: a.v_max,
        num_states: a.states,
        num_actions: a.actions,
        horizon,
        gamma,
    }
}

fn run(cli: &Cli) -> Result<Outcome> {
    let caps = match &cli.caps {
        Some(p) => Caps::from_json(&read(p)?)?,
        None => Caps::default(),
    };
    let seed = cli.seed;
    let opts = SolveOptions::default();
    match &cli.command {
        Command::GenMdp(g) => {
            let m = random_mdp(&GenSpec {
                kind: g.kind.into(),
                states: g.states,
                actions: g.actions,
                horizon: g.horizon,
                gamma: g.gamma,
                seed,
                deterministic: g.deterministic,
            })?;
            Ok(Outcome {
                body: m.to_json_pretty(),
                passed: true,
            })
        }
        Command::Sample { mdp, n, encoding } => {
            let m = load_mdp(mdp)?;
            let d = sample_dataset_with_budget(&m, *n, seed, caps.sample_budget)?;
            let enc = match encoding {
                EncodingArg::Base64 => SampleEncoding::Base64,
                EncodingArg::Plain => SampleEncoding::Plain,
            };
            Ok(Outcome {
                body: d.to_json(enc),
                passed: true,
            })
        }
        Command::Solve { solver } => solve(solver, seed, &caps),
        Command::Eval { mdp, policy } => {
            let m = load_mdp(mdp)?;
            let v = evaluate_policy(&m, &load_policy(policy)?, &opts)?;
            Ok(Outcome {
                body: v.to_json(),
                passed: true,
            })
        }
        Command::Worlds { command } => worlds(command, &caps),
        Command::Bounds { command } => bounds(command),
        Command::LbFamily { command } => family(command, seed),
        Command::PacTrials(a) => {
            let m = load_mdp(&a.mdp)?;
            let r = run_pac_trials(&m, &trial_config(a, seed, cli.threads, &caps)?)?;
            Ok(Outcome {
                body: r.to_json(),
                passed: true,
            })
        }
        Command::Sweep {
            trials,
            solvers,
            eps_grid,
            delta_grid,
            n_grid,
            csv,
        } => {
            let m = load_mdp(&trials.mdp)?;
            let base = trial_config(trials, seed, cli.threads, &caps)?;
            let solvers: Vec<Solver> = solvers.iter().map(|s| Solver::parse(s)).collect::<pacrl::Result<_>>()?;
            let ns: Vec<Option<u64>> = n_grid
                .iter()
                .map(|t| match t.as_str() {
                    "formula" => Ok(None),
                    other => other.parse().map(Some).with_context(|| format!("bad N {other:?}")),
                })
                .collect::<Result<_>>()?;
            let rows = sweep(&m, &base, &grid(&solvers, eps_grid, delta_grid, &ns), csv)?;
            Outcome::json(&json!({"csv": csv, "rows": rows.len()}))
        }
        Command::VerifyAll { scope, full } => {
            let sizes = if *full { SuiteSizes::full() } else { SuiteSizes::quick() };
            let report = run_verification_suite(&parse_scopes(scope)?, &caps, &sizes, seed);
            Outcome::checked(&report, report.passed)
        }
    }
}

fn solve(cmd: &SolveCommand, seed: u64, caps: &Caps) -> Result<Outcome> {
    let (policy, values, extra) = match cmd {
        SolveCommand::CemNs(a) | SolveCommand::CemS(a) => {
            let m = load_mdp(&a.mdp)?;
            let d = match (&a.dataset, a.n) {
                (Some(p), _) => load_dataset(p)?,
                (None, Some(n)) => {
                    let source = if matches!(cmd, SolveCommand::CemNs(_)) { m.to_nonstationary()? } else { m.clone() };
                    sample_dataset_with_budget(&source, n, seed, caps.sample_budget)?
                }
                (None, None) => bail!("give --dataset or --n"),
            };
            let (pi, v) = if matches!(cmd, SolveCommand::CemNs(_)) {
                let skeleton = if m.kind == Kind::Nonstationary { m.clone() } else { m.to_nonstationary()? };
                cem_ns_solve(&d, &skeleton)?
            } else {
                cem_s_solve(&d, &m)?
            };
            (pi, v.to_f64(), json!({"dataset_digest": d.digest(), "n": d.n}))
        }
        SolveCommand::Ttm {
            mdp,
            root,
            trees,
            eps,
            delta,
        } => {
            let m = load_mdp(mdp)?;
            let policies: Vec<Policy> = enumerate_policies(&m, caps.policies)?.collect();
            let count = match trees {
                Some(t) => *t,
                None => default_tree_count(m.v_max, *eps, *delta, policies.len() as u64)?,
            };
            let sel = ttm_select_capped(&m, *root, &policies, count, seed, caps.tree_nodes)?;
            let pi = policies[sel.index].clone();
            let v = evaluate_policy(&m, &pi, &SolveOptions::default())?;
            (pi, v, json!({"trees": count, "estimate": sel.estimates[sel.index]}))
        }
    };
    Outcome::json(&json!({
        "policy": policy.to_json_value(),
        "policy_digest": policy.digest(),
        "values": serde_json::from_str::<Value>(&values.to_json())?,
        "run": extra,
    }))
}

fn worlds(cmd: &WorldsCommand, caps: &Caps) -> Result<Outcome> {
    match cmd {
        WorldsCommand::Verify {
            dataset,
            mdp,
            hbar,
            check,
        } => {
            let results = verify_dataset(&load_dataset(dataset)?, &load_mdp(mdp)?, *hbar, &parse_scopes(check)?, caps)?;
            let passed = results.iter().all(|c| c.passed);
            Outcome::checked(&json!({"passed": passed, "checks": results}), passed)
        }
        WorldsCommand::Induce {
            dataset,
            mdp,
            hbar,
            world,
            policy,
        } => {
            let d = load_dataset(dataset)?;
            let m = load_mdp(mdp)?;
            let model = match d.kind {
                Kind::Nonstationary => WorldModel::nonstationary(&d, &m)?,
                Kind::Stationary => {
                    let h = hbar.or(m.horizon.finite()).context("stationary data needs --hbar")?;
                    WorldModel::stationary(&d, &m.with_horizon(Horizon::Finite(h))?, h)?
                }
            };
            let x = World::parse(world)?;
            let successors = model.induced_successors(&x)?;
            let value = match policy {
                Some(p) => Some(serde_json::from_str::<Value>(&model.world_value(&x, &load_policy(p)?)?.to_json())?),
                None => None,
            };
            Outcome::json(&json!({
                "world": x.to_string(),
                "successors": successors,
                "mdp": serde_json::from_str::<Value>(&model.world_mdp(&x)?.to_json())?,
                "value": value,
            }))
        }
    }
}

fn bounds(cmd: &BoundsCommand) -> Result<Outcome> {
    match cmd {
        BoundsCommand::CemNs { pac, horizon } => {
            Outcome::json(&cem_ns_sample_size(&pac_params(pac, Horizon::Finite(*horizon), 1.0))?)
        }
        BoundsCommand::CemS { pac, gamma, hbar } => {
            let p = pac_params(pac, Horizon::Infinite, *gamma);
            match hbar {
                Some(h) => Outcome::json(&cem_s_sample_size_at(&p, *h)?),
                None => Outcome::json(&cem_s_sample_size(&p)?),
            }
        }
        BoundsCommand::Hoeffding { m, gap, lo, hi } => {
            Outcome::json(&json!({"m": m, "gap": gap, "tail": hoeffding_dep_tail(*m, *gap, *lo, *hi)?}))
        }
        BoundsCommand::BiasedFraction { pairs, hbar, n, v_max } => {
            Outcome::json(&json!({"bound": biased_fraction_bound(*pairs, *hbar, *n, *v_max)?}))
        }
    }
}

fn family(cmd: &FamilyCommand, seed: u64) -> Result<Outcome> {
    match cmd {
        FamilyCommand::Build { family, modified } => {
            let which = match modified.as_deref() {
                Some([a, b]) => Member::Modified(*a, *b),
                Some(_) => bail!("--modified takes two indices"),
                None => Member::Base,
            };
            let m = build_family_member(&family.family(), which)?;
            Ok(Outcome {
                body: m.to_json_pretty(),
                passed: true,
            })
        }
        FamilyCommand::ClosedForm { p, alpha, horizon } => {
            let f = LowerBoundFamily {
                initial_states: 1,
                actions: 1,
                p: *p,
                alpha: *alpha,
                horizon: *horizon,
            };
            f.validate()?;
            Outcome::json(&json!({
                "base": closed_form_value(p, alpha, *horizon, false),
                "modified": closed_form_value(p, alpha, *horizon, true),
            }))
        }
        FamilyCommand::Gap { horizon, eps } => {
            let c = gap_certificate(*horizon, *eps)?;
            Outcome::checked(&c, c.holds)
        }
        FamilyCommand::Chernoff { l, p, alpha, c1, c2 } => {
            let r = chernoff_event_probability(*l, *p, *alpha, *c1, *c2, seed)?;
            let passed = r.probability + 3.0 * r.std_error >= r.bound;
            Outcome::checked(&r, passed)
        }
        FamilyCommand::Likelihood { s, l, p, alpha } => {
            let ratio = likelihood_ratio(*s, *l, *p, *alpha)?;
            let th = theta(*l, *p, *alpha, C1_PRIME);
            let delta_cap = deviation(*l, *p, *alpha, C1_PRIME, C2_PRIME);
            let in_event = (*s as f64) <= *p * *l as f64 + delta_cap;
            let bound = 2.0 * th / C2_PRIME;
            Outcome::json(&json!({
                "ratio": ratio,
                "theta": th,
                "delta_cap": delta_cap,
                "in_event": in_event,
                "bound": bound,
                "meets_bound": ratio >= bound,
            }))
        }
        FamilyCommand::Floor {
            horizon,
            eps,
            delta,
            pairs,
        } => Outcome::json(&sample_floor(*horizon, *eps, *delta, *pairs)?),
    }
}

/// Writes through a sibling temporary file so readers never see a partial result.
fn write_atomic(path: &Path, body: &str) -> Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, body).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = run(&cli).and_then(|o| {
        let mut body = o.body;
        if !body.ends_with('\n') {
            body.push('\n');
        }
        match &cli.out {
            Some(p) => write_atomic(p, &body)?,
            None => std::io::stdout().write_all(body.as_bytes())?,
        }
        Ok(o.passed)
    });
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
