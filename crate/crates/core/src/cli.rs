//! The `nhf` command line.
//!
//! Exit codes: 0 pass, 1 invalid structure or failed check, 2 usage or
//! parse error, 3 flow reached a singular orbit.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::families::{self, FamilySpec};
use crate::flow::{self, FlowOptions, FlowVars, Trajectory};
use crate::structure::{random_rotation, validate, NhfStructure, StructureRecord};
use crate::torsion::{self, TorsionClass};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_SINGULAR: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "nhf", version, about = "Nearly half-flat SU(3)-structures on S³×S³")]
pub struct Cli {
    /// Residual tolerance
    #[arg(long, global = true, env = "NHF_TOL", default_value_t = crate::DEFAULT_TOL)]
    pub tol: f64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a structure record and report its torsion
    Check { input: PathBuf },
    /// Torsion class with the matrix-predicate report
    Classify {
        input: PathBuf,
        /// Predicate tolerance
        #[arg(long, default_value_t = crate::CLASSIFY_TOL)]
        class_tol: f64,
        #[arg(long)]
        json: bool,
    },
    /// Integrate the evolution equations
    Flow(FlowArgs),
    /// Emit closed-form family members as structure records
    Family(FamilyArgs),
    /// Rotate γ to a closed 3-form, or move a structure by SO(3)×SO(3)
    Rotate {
        input: PathBuf,
        /// Apply a random SO(3)×SO(3) element drawn from this seed instead
        #[arg(long)]
        so3_seed: Option<u64>,
    },
    /// Integrate and check that the lifted G₂-structure is nearly parallel
    VerifyG2 {
        input: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        h: f64,
        #[arg(long, default_value_t = 0.1)]
        t_end: f64,
        #[arg(long, default_value_t = 0.0)]
        t0: f64,
        /// Bound on the max-abs residual
        #[arg(long, default_value_t = 1e-6)]
        g2_tol: f64,
    },
}

#[derive(Debug, Args)]
pub struct FlowArgs {
    /// Initial structure record(s); several run concurrently with --batch
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Must match the record's λ when given
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    pub h: f64,
    #[arg(long)]
    pub t_end: f64,
    #[arg(long, default_value_t = 0.0)]
    pub t0: f64,
    /// Trajectory file (with --batch, a directory)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Compare the endpoint with a closed-form trajectory
    #[arg(long, value_enum)]
    pub compare: Option<Compare>,
    #[arg(long, default_value_t = 1e-5)]
    pub abort_drift: f64,
    #[arg(long)]
    pub batch: bool,
}

#[derive(Debug, Args)]
pub struct FamilyArgs {
    #[arg(long, value_enum)]
    pub name: FamilyName,
    #[arg(long, default_value_t = 4.0)]
    pub lambda: f64,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub t: Option<f64>,
    /// Sign selector (nk: P, w1: q, w1w3: p, sine-cone: branch, zero-scalar: q)
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub sign: f64,
    /// Inner branch of the zero-scalar family
    #[arg(long, value_enum, default_value_t = Branch::Plus)]
    pub branch: Branch,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Compare {
    SineCone,
    Berger,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FamilyName {
    Nk,
    W1,
    W1w3,
    ZeroScalar,
    Berger,
    SineCone,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Branch {
    Plus,
    Minus,
}

/// Failure carrying its exit code.
struct Fail(i32, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) | Error::Json(_) | Error::Shape(_) | Error::OutOfRange(_) | Error::Precondition(_) => {
                EXIT_USAGE
            }
            Error::SingularFlow { .. } => EXIT_SINGULAR,
            _ => EXIT_INVALID,
        };
        Fail(code, e.to_string())
    }
}

impl From<std::io::Error> for Fail {
    fn from(e: std::io::Error) -> Self {
        Fail(EXIT_USAGE, e.to_string())
    }
}

type CliResult = std::result::Result<i32, Fail>;

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    match dispatch(&cli, out) {
        Ok(code) => code,
        Err(Fail(code, msg)) => {
            let _ = writeln!(err, "error: {msg}");
            code
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> CliResult {
    match &cli.command {
        Command::Check { input } => check(input, cli.tol, out),
        Command::Classify {
            input,
            class_tol,
            json,
        } => classify(input, cli.tol, *class_tol, *json, out),
        Command::Flow(args) => run_flow(args, cli.tol, out),
        Command::Family(args) => family(args, out),
        Command::Rotate { input, so3_seed } => rotate(input, cli.tol, *so3_seed, out),
        Command::VerifyG2 {
            input,
            h,
            t_end,
            t0,
            g2_tol,
        } => verify_g2(input, cli.tol, *h, *t0, *t_end, *g2_tol, out),
    }
}

/// Reads one record or an array of records.
fn read_records(path: &Path) -> std::result::Result<Vec<StructureRecord>, Fail> {
    let text = fs::read_to_string(path).map_err(|e| Fail(EXIT_USAGE, format!("{}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Fail(EXIT_USAGE, format!("{}: {e}", path.display())))?;
    let parse = |v: serde_json::Value| {
        serde_json::from_value::<StructureRecord>(v).map_err(|e| Fail(EXIT_USAGE, format!("{}: {e}", path.display())))
    };
    match value {
        serde_json::Value::Array(items) => items.into_iter().map(parse).collect(),
        v => Ok(vec![parse(v)?]),
    }
}

fn read_one(path: &Path) -> std::result::Result<NhfStructure, Fail> {
    let recs = read_records(path)?;
    match recs.as_slice() {
        [rec] => Ok(NhfStructure::from_record(rec)?),
        _ => Err(Fail(EXIT_USAGE, format!("{}: expected a single record", path.display()))),
    }
}

fn class_text(label: TorsionClass, pure_nk: bool) -> String {
    if pure_nk {
        format!("{label} (nearly Kähler)")
    } else {
        label.to_string()
    }
}

fn check(input: &Path, tol: f64, out: &mut dyn Write) -> CliResult {
    let recs = read_records(input)?;
    let mut code = EXIT_OK;
    for (k, rec) in recs.iter().enumerate() {
        if recs.len() > 1 {
            writeln!(out, "record {k}")?;
        }
        let s = NhfStructure::from_record(rec)?;
        let rep = validate(&s, tol);
        writeln!(out, "{:<22}{:>14}  status", "residual", "value")?;
        for (name, r) in rep.residuals() {
            let status = if r <= tol { "ok" } else { "FAIL" };
            writeln!(out, "{name:<22}{r:>14.3e}  {status}")?;
        }
        let spd = if rep.metric_spd { "ok" } else { "FAIL" };
        writeln!(out, "{:<22}{:>14}  {spd}", "metric_spd", rep.metric_spd)?;
        if rep.passed() {
            let t = torsion::TorsionData::extract(&s, tol)?;
            let c = torsion::classify(&s, crate::CLASSIFY_TOL)?;
            writeln!(out, "class   {}", class_text(t.class_label, c.pure_nearly_kahler))?;
            writeln!(out, "w1+     {:.12e}", t.w1plus)?;
            writeln!(out, "s       {:.12e}", t.s)?;
            writeln!(out, "result  PASS")?;
        } else {
            writeln!(out, "result  FAIL {}", rep.failures().join(","))?;
            code = EXIT_INVALID;
        }
    }
    Ok(code)
}

fn classify(input: &Path, tol: f64, class_tol: f64, json: bool, out: &mut dyn Write) -> CliResult {
    let s = read_one(input)?;
    let rep = validate(&s, tol);
    if !rep.passed() {
        return Err(Fail(EXIT_INVALID, format!("invalid structure: {}", rep.failures().join(","))));
    }
    let c = torsion::classify(&s, class_tol)?;
    if json {
        writeln!(out, "{}", serde_json::to_string_pretty(&c).map_err(Error::from)?)?;
    } else {
        writeln!(out, "class          {}", class_text(c.label, c.pure_nearly_kahler))?;
        writeln!(out, "w1+            {:.12e}", c.w1_plus)?;
        writeln!(out, "w2-            {:.3e}", c.w2_norm)?;
        writeln!(out, "w3             {:.3e}", c.w3_norm)?;
        writeln!(out, "nearly_kahler  {:.3e}", c.predicates.nearly_kahler)?;
        writeln!(out, "w1+_zero       {:.3e}", c.predicates.w1_plus_zero)?;
        writeln!(out, "co_coupled     {:.3e}", c.predicates.co_coupled)?;
        writeln!(out, "coupled        {:.3e}", c.predicates.coupled)?;
        writeln!(out, "consistent     {}", c.consistent)?;
    }
    Ok(if c.consistent { EXIT_OK } else { EXIT_INVALID })
}

fn write_trajectory(traj: &Trajectory, format: Format, path: &Path) -> Result<()> {
    match format {
        Format::Csv => traj.save_csv(path),
        Format::Json => Ok(fs::write(path, traj.to_json()?)?),
    }
}

fn compare_endpoint(traj: &Trajectory, cmp: Compare, orientation: i8) -> Result<f64> {
    let end = traj.last();
    let point = match cmp {
        Compare::SineCone => families::sine_cone_point(end.t, f64::from(orientation))?,
        Compare::Berger => families::berger_point(end.t)?,
    };
    let (exact, _) = FlowVars::from_closed_form(&point);
    Ok(end.vars.max_diff(&exact))
}

fn report_trajectory(
    traj: &Trajectory,
    label: &str,
    compare: Option<Compare>,
    orientation: i8,
    out: &mut dyn Write,
) -> CliResult {
    let sum = traj.summary();
    writeln!(
        out,
        "{label}steps {} t_last {:.6} max_norm_resid {:.3e} max_sym_resid {:.3e} max_g2_resid {:.3e}",
        sum.steps, sum.t_last, sum.max_norm_resid, sum.max_sym_resid, sum.max_g2_resid
    )?;
    let mut code = EXIT_OK;
    if let Some(cmp) = compare {
        let diff = compare_endpoint(traj, cmp, orientation)?;
        let name = match cmp {
            Compare::SineCone => "sine-cone",
            Compare::Berger => "berger",
        };
        let ok = diff <= 1e-6;
        writeln!(out, "{label}compare {name} max_diff {diff:.3e} {}", if ok { "PASS" } else { "FAIL" })?;
        if !ok {
            code = EXIT_INVALID;
        }
    }
    if let Some(h) = &traj.halt {
        writeln!(out, "{label}halted at t = {:.6}: {}", h.t, h.reason)?;
        code = EXIT_SINGULAR;
    }
    Ok(code)
}

fn run_flow(args: &FlowArgs, tol: f64, out: &mut dyn Write) -> CliResult {
    if args.inputs.len() > 1 && !args.batch {
        return Err(Fail(EXIT_USAGE, "several inputs need --batch".into()));
    }
    let opts = FlowOptions {
        t0: args.t0,
        abort_drift: args.abort_drift,
        validate_tol: tol,
        ..FlowOptions::default()
    };
    let structures = args
        .inputs
        .iter()
        .map(|p| read_one(p))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if let Some(l) = args.lambda {
        if let Some(s) = structures.iter().find(|s| (s.lambda() - l).abs() > 1e-12 * l.abs().max(1.0)) {
            return Err(Fail(EXIT_USAGE, format!("--lambda {l} differs from record λ = {}", s.lambda())));
        }
    }
    let jobs: Vec<_> = structures
        .iter()
        .map(|s| (s.clone(), args.t_end, args.h, opts))
        .collect();
    let results = if args.batch {
        flow::integrate_batch(&jobs)
    } else {
        jobs.iter()
            .map(|(s, t_end, h, o)| flow::integrate_with(s, s.lambda(), *t_end, *h, o))
            .collect()
    };
    let ext = match args.format {
        Format::Csv => "csv",
        Format::Json => "json",
    };
    let mut code = EXIT_OK;
    for (k, (res, s)) in results.into_iter().zip(&structures).enumerate() {
        let traj = res?;
        let label = if args.batch { format!("[{k}] ") } else { String::new() };
        if let Some(path) = &args.out {
            let target = if args.batch {
                fs::create_dir_all(path)?;
                path.join(format!("traj_{k}.{ext}"))
            } else {
                path.clone()
            };
            write_trajectory(&traj, args.format, &target)?;
        }
        code = code.max(report_trajectory(&traj, &label, args.compare, s.orientation(), out)?);
    }
    Ok(code)
}

fn family_spec(args: &FamilyArgs) -> std::result::Result<FamilySpec, Fail> {
    let need = |v: Option<f64>, flag: &str| v.ok_or_else(|| Fail(EXIT_USAGE, format!("--{flag} is required for this family")));
    Ok(match args.name {
        FamilyName::Nk => FamilySpec::Nk {
            lambda: args.lambda,
            sign: args.sign,
        },
        FamilyName::W1 => FamilySpec::W1 {
            lambda: args.lambda,
            p: need(args.p, "p")?,
            sign_q: args.sign,
        },
        FamilyName::W1w3 => FamilySpec::W1w3 {
            a: need(args.a, "a")?,
            sign_p: args.sign,
        },
        FamilyName::ZeroScalar => FamilySpec::ZeroScalar {
            inner: if args.branch == Branch::Plus { 1.0 } else { -1.0 },
            outer: args.sign,
        },
        FamilyName::Berger => FamilySpec::Berger { t: need(args.t, "t")? },
        FamilyName::SineCone => FamilySpec::SineCone {
            t: need(args.t, "t")?,
            branch: args.sign,
        },
    })
}

fn emit_records(recs: &[StructureRecord], path: Option<&Path>, out: &mut dyn Write) -> CliResult {
    let text = if let [one] = recs {
        serde_json::to_string_pretty(one)
    } else {
        serde_json::to_string_pretty(recs)
    }
    .map_err(Error::from)?;
    match path {
        Some(p) => fs::write(p, text + "\n")?,
        None => writeln!(out, "{text}")?,
    }
    Ok(EXIT_OK)
}

fn family(args: &FamilyArgs, out: &mut dyn Write) -> CliResult {
    let spec = family_spec(args)?;
    let structures = spec.build().map_err(|e| match e {
        Error::OutOfRange(m) => Fail(EXIT_USAGE, m),
        other => Fail::from(other),
    })?;
    let recs: Vec<_> = structures.iter().map(|s| s.to_record()).collect();
    emit_records(&recs, args.out.as_deref(), out)
}

fn rotate(input: &Path, tol: f64, so3_seed: Option<u64>, out: &mut dyn Write) -> CliResult {
    let s = read_one(input)?;
    if let Some(seed) = so3_seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_rotation(&mut rng);
        let h = random_rotation(&mut rng);
        return emit_records(&[s.rotated(&g, &h)?.to_record()], None, out);
    }
    let hf = torsion::rotate_to_half_flat(&s, tol)?;
    writeln!(out, "theta     {:.12e}", hf.theta)?;
    writeln!(out, "residual  {:.3e}", hf.residual)?;
    let coeffs: Vec<String> = hf.gamma_theta.coeffs().iter().map(|c| format!("{c:.12e}")).collect();
    writeln!(out, "gamma_theta {}", coeffs.join(" "))?;
    Ok(if hf.residual <= tol { EXIT_OK } else { EXIT_INVALID })
}

fn verify_g2(input: &Path, tol: f64, h: f64, t0: f64, t_end: f64, g2_tol: f64, out: &mut dyn Write) -> CliResult {
    let s = read_one(input)?;
    let opts = FlowOptions {
        t0,
        validate_tol: tol,
        ..FlowOptions::default()
    };
    let traj = flow::integrate_with(&s, s.lambda(), t_end, h, &opts)?;
    let mut worst = flow::G2Residual {
        dphi_spatial: 0.0,
        dphi_time: 0.0,
        dpsi_spatial: 0.0,
        dpsi_time: 0.0,
        dphi: 0.0,
        dpsi: 0.0,
        relative: 0.0,
    };
    for st in &traj.states {
        let r = flow::g2_residual_state(&st.structure(traj.lambda)?)?;
        worst.dphi = worst.dphi.max(r.dphi);
        worst.dpsi = worst.dpsi.max(r.dpsi);
    }
    let ok = worst.max() <= g2_tol;
    writeln!(out, "samples   {}", traj.states.len())?;
    writeln!(out, "dphi-lpsi {:.3e}", worst.dphi)?;
    writeln!(out, "dpsi      {:.3e}", worst.dpsi)?;
    writeln!(out, "result    {}", if ok { "PASS" } else { "FAIL" })?;
    if let Some(hl) = &traj.halt {
        writeln!(out, "halted at t = {:.6}: {}", hl.t, hl.reason)?;
        return Ok(EXIT_SINGULAR);
    }
    Ok(if ok { EXIT_OK } else { EXIT_INVALID })
}
