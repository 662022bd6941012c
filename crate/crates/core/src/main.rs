use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use henonlab::config::RunConfig;
use henonlab::graph_transform::{build_neighborhood, iterate_to_fixed_point};
use henonlab::henon_core::{default_radius, C64};
use henonlab::json::to_canonical_json;
use henonlab::normal_form::{full_normal_form, Truncation};
use henonlab::poly_dynamics::{CaratheodoryTable, ExternalAngle, QuadPoly, DEFAULT_R_OUTER};
use henonlab::render::{render_julia_slice, render_param_plane, Palette};
use henonlab::solenoid_model::{find_periodic_orbits, model_nesting, ModelMapSpec, PeriodicSeeds};
use henonlab::verify::{verify_all, CHECKS};
use henonlab::LabError;

#[derive(Parser)]
#[command(name = "henonlab", version, about = "Semi-parabolic complex Hénon maps: fibers, normal forms, pictures and checks")]
struct Cli {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override λ = e^{2πi p/q} as `p/q`.
    #[arg(long, global = true)]
    lambda: Option<String>,
    /// Override the real part of a.
    #[arg(long, global = true, allow_hyphen_values = true)]
    a: Option<f64>,
    /// Override the imaginary part of a.
    #[arg(long, global = true, allow_hyphen_values = true)]
    a_im: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PaletteArg {
    Binary,
    Loglog,
}

impl From<PaletteArg> for Palette {
    fn from(p: PaletteArg) -> Self {
        match p {
            PaletteArg::Binary => Palette::Binary,
            PaletteArg::Loglog => Palette::Loglog,
        }
    }
}

#[derive(Args)]
struct RenderArgs {
    /// Output PPM (P6) file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "binary")]
    palette: PaletteArg,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    extent: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    center_re: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    center_im: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Derived parameters: c, w, μ, the fixed point and the escape radius.
    Params,
    /// Connectivity heuristic over the a-plane; writes a PPM and a JSON sidecar.
    RenderParamPlane {
        #[command(flatten)]
        render: RenderArgs,
        /// Sidecar path (default: the image path with a .json extension).
        #[arg(long)]
        sidecar: Option<PathBuf>,
        /// Use the full k_max instead of the fast one.
        #[arg(long)]
        full: bool,
    },
    /// Escape-time picture of the slice y = y₀ of K⁺.
    RenderJuliaSlice {
        #[command(flatten)]
        render: RenderArgs,
        #[arg(long, allow_hyphen_values = true)]
        y_re: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        y_im: Option<f64>,
    },
    /// Runs the graph transform to its fixed point and exports the fibers as JSON.
    Fibers {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        level: Option<u32>,
        /// Replace the parabolic-cycle fibers by the stable manifold (converges fast).
        #[arg(long)]
        pin: bool,
    },
    /// Normal-form coefficients and residuals at the semi-parabolic point.
    NormalForm {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs the verification suite; exit code 0 iff every check passes.
    Verify {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run only these checks (1-13).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u32>,
        /// Skip the slow unaccelerated graph-transform diagnostic.
        #[arg(long)]
        fast: bool,
    },
    /// Periodic orbits up to period k_max, with multipliers and classification.
    PeriodicPoints {
        #[arg(long, default_value_t = 6)]
        k_max: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Nested model disks of ψⁿ in the fiber over a Julia-set point, as CSV.
    Model {
        #[arg(long, default_value_t = 3)]
        depth: usize,
        /// Fiber base ζ (default: the landing point of the ray 1/3).
        #[arg(long, allow_hyphen_values = true)]
        zeta_re: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        zeta_im: Option<f64>,
        #[arg(long, default_value_t = 0.5)]
        radius: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Run(String),
    Verification,
}

impl From<LabError> for Failure {
    fn from(e: LabError) -> Self {
        match e {
            LabError::InvalidInput(m) => Failure::Config(m),
            e => Failure::Run(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            RunConfig::from_json(&text).map_err(|e| Failure::Config(e.to_string()))?
        }
        None => RunConfig::default(),
    };
    if let Some(l) = &cli.lambda {
        let (p, q) = l
            .split_once('/')
            .and_then(|(p, q)| Some((p.trim().parse().ok()?, q.trim().parse().ok()?)))
            .ok_or_else(|| Failure::Config(format!("--lambda expects p/q, got {l}")))?;
        cfg.params.p = p;
        cfg.params.q = q;
    }
    if let Some(a) = cli.a {
        cfg.params.a_re = a;
    }
    if let Some(a) = cli.a_im {
        cfg.params.a_im = a;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(cfg)
}

fn apply_render(cfg: &mut RunConfig, r: &RenderArgs) -> Result<(), Failure> {
    let rc = &mut cfg.render;
    rc.width = r.width.unwrap_or(rc.width);
    rc.height = r.height.unwrap_or(rc.height);
    rc.extent = r.extent.unwrap_or(rc.extent);
    rc.center_re = r.center_re.unwrap_or(rc.center_re);
    rc.center_im = r.center_im.unwrap_or(rc.center_im);
    rc.max_iter = r.max_iter.unwrap_or(rc.max_iter);
    rc.validate().map_err(|e| Failure::Config(e.to_string()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn c(z: C64) -> [f64; 2] {
    [z.re, z.im]
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = load_config(&cli)?;
    let params = cfg.params.params()?;
    match cli.command {
        Command::Params => {
            let report = json!({
                "lambda": c(params.lambda.value),
                "a": c(params.a),
                "c": c(params.c),
                "w": c(params.w),
                "c0": c(params.c0()),
                "mu": c(params.mu),
                "q_a": c(params.q_scalar),
                "fixed_point": [c(params.fixed_point.x), c(params.fixed_point.y)],
                "escape_radius": default_radius(&params),
            });
            emit(None, &to_canonical_json(&report)?)
        }
        Command::RenderParamPlane { render, sidecar, full } => {
            apply_render(&mut cfg, &render)?;
            cfg.render.fast = !full;
            let (img, side) = render_param_plane(params.lambda, &cfg.render, &cfg.solenoid, render.palette.into())?;
            fs::write(&render.out, img.to_ppm())?;
            let side_path = sidecar.unwrap_or_else(|| render.out.with_extension("json"));
            let report = json!({ "config": cfg, "result": side });
            fs::write(side_path, to_canonical_json(&report)?)?;
            Ok(())
        }
        Command::RenderJuliaSlice { render, y_re, y_im } => {
            apply_render(&mut cfg, &render)?;
            cfg.render.slice_y_re = y_re.unwrap_or(cfg.render.slice_y_re);
            cfg.render.slice_y_im = y_im.unwrap_or(cfg.render.slice_y_im);
            let img = render_julia_slice(&params, &cfg.render, render.palette.into())?;
            fs::write(&render.out, img.to_ppm())?;
            Ok(())
        }
        Command::Fibers { out, level, pin } => {
            cfg.graph.level = level.unwrap_or(cfg.graph.level);
            cfg.graph.pin_parabolic |= pin;
            let v = build_neighborhood(&params, &cfg.graph)?;
            let (f, report) = iterate_to_fixed_point(&v, &cfg.graph)?;
            let fibers: Vec<_> = f
                .fibers
                .iter()
                .map(|fb| {
                    json!({
                        "angle": [fb.t.num, fb.t.den],
                        "coeffs": fb.coeffs.iter().map(|z| c(*z)).collect::<Vec<_>>(),
                        "crossing": c(fb.crossing),
                        "sup_bound": fb.sup_bound,
                        "max_slope": fb.max_slope,
                    })
                })
                .collect();
            let doc = json!({ "config": cfg, "radius": f.r, "report": report, "fibers": fibers });
            emit(out.as_deref(), &to_canonical_json(&doc)?)
        }
        Command::NormalForm { out } => {
            let nf = full_normal_form(&params, Truncation::default_for(&params.lambda))?;
            let doc = json!({
                "nu": nf.nu,
                "m": nf.m,
                "C": c(nf.c),
                "residual_norm": nf.residual_norm,
                "h_norm": nf.h_norm,
                "straightening_residual": nf.straightening_residual,
                "first_component": (0..=2 * nf.m + 1)
                    .map(|k| c(nf.series.a(k).coeffs.first().copied().unwrap_or_default()))
                    .collect::<Vec<_>>(),
            });
            emit(out.as_deref(), &to_canonical_json(&doc)?)
        }
        Command::Verify { out, only, fast } => {
            if fast {
                cfg.suite.unpinned_diagnostic = false;
            }
            if let Some(bad) = only.iter().find(|i| !(1..=CHECKS.len() as u32).contains(i)) {
                return Err(Failure::Config(format!("no check {bad}")));
            }
            let report = if only.is_empty() {
                verify_all(&cfg)
            } else {
                let checks: Vec<_> = only.iter().map(|i| CHECKS[*i as usize - 1](&cfg)).collect();
                henonlab::verify::VerifyReport {
                    config: cfg.clone(),
                    all_pass: checks.iter().all(|c| c.pass),
                    checks,
                }
            };
            for check in &report.checks {
                eprintln!("{} {:>2} {}", if check.pass { "PASS" } else { "FAIL" }, check.id, check.name);
            }
            emit(out.as_deref(), &to_canonical_json(&report)?)?;
            if report.all_pass {
                Ok(())
            } else {
                Err(Failure::Verification)
            }
        }
        Command::PeriodicPoints { k_max, out } => {
            let seeds = PeriodicSeeds::new(QuadPoly::parabolic(params.lambda), k_max)?;
            let search = find_periodic_orbits(&params, &seeds, k_max);
            emit(out.as_deref(), &to_canonical_json(&json!({ "config": cfg, "k_max": k_max, "search": search }))?)
        }
        Command::Model {
            depth,
            zeta_re,
            zeta_im,
            radius,
            out,
        } => {
            let poly = QuadPoly::parabolic(params.lambda);
            let zeta = match (zeta_re, zeta_im) {
                (None, None) => {
                    let third = ExternalAngle::new(1, 3);
                    let table = CaratheodoryTable::build(&poly, [third, third.double()], 60, DEFAULT_R_OUTER)?;
                    table.refined(&poly).0.get(&third).expect("angle is in the table")
                }
                (re, im) => C64::new(re.unwrap_or(0.0), im.unwrap_or(0.0)),
            };
            let spec = ModelMapSpec::new(poly, params.a, radius, 0.0)?;
            let rep = model_nesting(&spec, zeta, depth)?;
            let mut csv = String::from("level,index,parent,center_re,center_im,radius,base_re,base_im\n");
            for (lvl, disks) in rep.levels.iter().enumerate() {
                for (i, d) in disks.iter().enumerate() {
                    csv.push_str(&format!(
                        "{lvl},{i},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                        d.parent, d.center.re, d.center.im, d.radius, d.base.re, d.base.im
                    ));
                }
            }
            emit(out.as_deref(), &csv)?;
            eprintln!(
                "nested: {}, pairwise disjoint: {}, max ratio {:.3e} (bound {:.3e})",
                rep.nested, rep.pairwise_disjoint, rep.max_ratio, rep.ratio_bound
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(n) = std::env::var("HENONLAB_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: HENONLAB_THREADS must be a positive integer, got {n:?}");
                return ExitCode::from(2);
            }
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification) => ExitCode::from(1),
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Config(m)) => {
            eprintln!("configuration error: {m}");
            ExitCode::from(2)
        }
    }
}
