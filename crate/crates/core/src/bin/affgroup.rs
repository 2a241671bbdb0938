use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use affgroup::config::{RunConfig, KEYS};
use affgroup::corpus::{random_affine, AffineSpec, BlobImage, BlobSpec};
use affgroup::invariance::{ElementJson, Pipeline, SearchBox};
use affgroup::signal::io::{read_grid, write_grid};
use affgroup::studies::{self, Study};
use affgroup::{project, Error, GconvPlan, GridGeometry, LiftedSignal};
use clap::{Arg, ArgAction, ArgMatches, Command};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

mod exit {
    pub const OTHER: u8 = 1;
    /// Unreadable or malformed input, failed writes.
    pub const IO: u8 = 2;
    /// Functional gap above the threshold.
    pub const GAP: u8 = 3;
    pub const SHAPE: u8 = 4;
    pub const CHART: u8 = 5;
    pub const CONFIG: u8 = 6;
    pub const SINGULAR: u8 = 7;
    /// A convergence study whose errors did not strictly decrease.
    pub const FLAGGED: u8 = 8;
}

fn code_of(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Parse(_) => exit::IO,
        Error::ShapeMismatch(_) | Error::InvalidGrid(_) => exit::SHAPE,
        Error::ChartMismatch(_) => exit::CHART,
        Error::Config(_) | Error::InvalidAxis(_) | Error::EmptySearchBox(_) => exit::CONFIG,
        Error::SingularMatrix { .. } => exit::SINGULAR,
        _ => exit::OTHER,
    }
}

fn chart_keys() -> Vec<String> {
    let mut keys = Vec::new();
    for axis in ["rho", "theta", "u", "w"] {
        for field in ["lo", "hi", "count"] {
            keys.push(format!("{axis}.{field}"));
        }
    }
    keys
}

fn cli() -> Command {
    let mut cmd = Command::new("affgroup")
        .about("Lifting, group convolution and invariance tests over the affine group of the plane")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .after_help("Every --key may also be set as `key = value` in the --config file; flags win.\nAFFGROUP_THREADS caps the worker count.")
        .arg(Arg::new("config").long("config").value_name("PATH").global(true).help("key=value configuration file"));
    for key in chart_keys() {
        let help = format!("chart axis {key}");
        cmd = cmd.arg(Arg::new(key.clone()).long(key).value_name("VALUE").global(true).help(help).hide_short_help(true));
    }
    for (key, help) in KEYS {
        cmd = cmd.arg(Arg::new(*key).long(*key).value_name("VALUE").global(true).help(*help));
    }
    cmd.subcommand(Command::new("gen-pair").about("Write f and rho(g^-1) f with the ground-truth g (from --input, or a random blob image from --seed)"))
        .subcommand(Command::new("lift").about("Lift the --input image onto the configured group grid"))
        .subcommand(Command::new("gconv").about("Convolve the lifted --input with the bank kernel --kernel"))
        .subcommand(Command::new("project").about("Integrate the lifted --input over the matrix variable"))
        .subcommand(Command::new("invariance").about("Print the invariance report of --input and --input2 as JSON"))
        .subcommand(
            Command::new("convergence").about("Print a refinement study as CSV").arg(
                Arg::new("study")
                    .required(true)
                    .value_parser(["haar", "theorem4", "delta"])
                    .action(ArgAction::Set),
            ),
        )
}

fn load_config(m: &ArgMatches) -> affgroup::Result<RunConfig> {
    let mut cfg = match m.get_one::<String>("config") {
        Some(p) => RunConfig::load(Path::new(p))?,
        None => RunConfig::default(),
    };
    let mut flags = BTreeMap::new();
    for key in chart_keys().iter().map(String::as_str).chain(KEYS.iter().map(|(k, _)| *k)) {
        if let Some(v) = m.get_one::<String>(key) {
            flags.insert(key.to_string(), v.clone());
        }
    }
    cfg.apply(&flags)?;
    Ok(cfg)
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> affgroup::Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("--{key} is required")))
}

fn configure_threads() -> affgroup::Result<()> {
    if let Ok(v) = std::env::var("AFFGROUP_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n >= 1)
            .ok_or_else(|| Error::Config(format!("AFFGROUP_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Truth {
    g: ElementJson,
    /// `(tx, ty, rho, theta, u, w)`.
    params: [f64; 6],
}

fn gen_pair(cfg: &RunConfig) -> affgroup::Result<u8> {
    let out1 = required(&cfg.output, "output")?;
    let out2 = required(&cfg.output2, "output2")?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (f1, f2, g) = match &cfg.input {
        Some(path) => {
            let f = read_grid(path)?;
            let g = match cfg.g {
                Some(g) => g,
                None => random_affine(&mut rng, &AffineSpec::default()),
            };
            let f2 = f.act(&g.invert()?)?;
            (f, f2, g)
        }
        None => {
            let geom = GridGeometry::centered(cfg.image_size, cfg.image_size, cfg.image_spacing)?;
            let src = BlobImage::random(&mut rng, &BlobSpec::default());
            let g = match cfg.g {
                Some(g) => g,
                None => random_affine(&mut rng, &AffineSpec::default()),
            };
            (src.sample(geom), src.pullback(&g)?.sample(geom), g)
        }
    };
    write_grid(&f1, out1)?;
    write_grid(&f2, out2)?;
    let truth = Truth { g: ElementJson::from(&g), params: SearchBox::centered(1.0, 0.3, 0.3, 0.3)?.params_of(&g)? };
    let json = serde_json::to_string_pretty(&truth).expect("serializable");
    if let Some(p) = &cfg.truth {
        std::fs::write(p, format!("{json}\n"))?;
    }
    println!("{json}");
    Ok(0)
}

fn lift_cmd(cfg: &RunConfig) -> affgroup::Result<u8> {
    let f = read_grid(required(&cfg.input, "input")?)?;
    let pc = cfg.pipeline_config()?;
    let lifted = affgroup::lift(&f, &pc.lift_kernel, &pc.spatial, &pc.chart)?;
    lifted.save(required(&cfg.output, "output")?)?;
    Ok(0)
}

fn load_matching(cfg: &RunConfig, path: &Path) -> affgroup::Result<LiftedSignal> {
    let f = LiftedSignal::load(path)?;
    f.spatial().check_same(&cfg.spatial)?;
    if *f.chart() != cfg.chart {
        return Err(Error::ChartMismatch(format!("{} holds {}, configuration has {}", path.display(), f.chart(), cfg.chart)));
    }
    Ok(f)
}

fn gconv_cmd(cfg: &RunConfig) -> affgroup::Result<u8> {
    let f = load_matching(cfg, required(&cfg.input, "input")?)?;
    let pc = cfg.pipeline_config()?;
    let (_, kernel) = affgroup::invariance::standard_bank(cfg.k1_spacing, cfg.k2_width)?
        .into_iter()
        .find(|(n, _)| *n == cfg.kernel)
        .ok_or_else(|| Error::Config(format!("kernel: unknown bank kernel {:?}", cfg.kernel)))?;
    let plan = GconvPlan::new(&kernel, &pc.spatial, &pc.chart)?;
    plan.gconv(&f)?.save(required(&cfg.output, "output")?)?;
    Ok(0)
}

fn project_cmd(cfg: &RunConfig) -> affgroup::Result<u8> {
    let f = LiftedSignal::load(required(&cfg.input, "input")?)?;
    write_grid(&project(&f, cfg.measure)?, required(&cfg.output, "output")?)?;
    Ok(0)
}

fn invariance_cmd(cfg: &RunConfig) -> affgroup::Result<u8> {
    let f1 = read_grid(required(&cfg.input, "input")?)?;
    let f2 = read_grid(required(&cfg.input2, "input2")?)?;
    f1.geometry().check_same(f2.geometry())?;
    let pipe = Pipeline::new(cfg.pipeline_config()?)?;
    let pair = pipe.lift_pair(&f1, &f2, cfg.g)?;
    let report = pipe.report_lifted(&pair)?;
    let json = serde_json::to_string_pretty(&report).expect("serializable");
    if let Some(p) = &cfg.output {
        std::fs::write(p, format!("{json}\n"))?;
    }
    println!("{json}");
    Ok(if report.functional_gap <= cfg.threshold { 0 } else { exit::GAP })
}

fn convergence_cmd(cfg: &RunConfig, study: &str) -> affgroup::Result<u8> {
    let study: Study = study.parse()?;
    let table = studies::run(study)?;
    let csv = table.to_csv();
    if let Some(p) = &cfg.output {
        std::fs::write(p, &csv)?;
    }
    print!("{csv}");
    if table.strictly_decreasing() {
        Ok(0)
    } else {
        eprintln!("flagged: errors do not strictly decrease");
        Ok(exit::FLAGGED)
    }
}

fn run(m: &ArgMatches) -> affgroup::Result<u8> {
    configure_threads()?;
    let (name, sub) = m.subcommand().expect("subcommand is required");
    let cfg = load_config(sub)?;
    match name {
        "gen-pair" => gen_pair(&cfg),
        "lift" => lift_cmd(&cfg),
        "gconv" => gconv_cmd(&cfg),
        "project" => project_cmd(&cfg),
        // The report contract merges shape errors into the input-error code.
        "invariance" => invariance_cmd(&cfg).or_else(|e| match e {
            Error::ShapeMismatch(_) => {
                eprintln!("error: {e}");
                Ok(exit::IO)
            }
            e => Err(e),
        }),
        "convergence" => convergence_cmd(&cfg, sub.get_one::<String>("study").expect("required")),
        _ => unreachable!("unknown subcommands are rejected by the parser"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::CONFIG } else { 0 });
        }
    };
    match run(&matches) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(code_of(&e))
        }
    }
}
