use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use tetherfem_core::config::{Alpha, RunConfig};
use tetherfem_core::energy::Assembler;
use tetherfem_core::geometry::{generate_mesh, refine_uniform, shape_metrics, write_mesh_text, Mesh};
use tetherfem_core::io::run_experiment;
use tetherfem_core::space::Space;
use tetherfem_core::verify::{
    interp_rate_study, jump_decay_study, poincare_probe, random_smooth_fields, trace_constant_probe, RateReport,
    SinField,
};

#[derive(Parser)]
#[command(name = "tetherfem", version, about = "Second-gradient regularized fibrous-matrix simulations")]
struct Cli {
    /// Worker threads for assembly (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mesh the domain of a configuration and write it in the plain-text mesh format.
    Mesh {
        #[arg(long, visible_alias = "config")]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the configured continuation solve and write VTK, CSV histories and the manifest.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, overriding `[output] dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Use twice the estimated lifting constant as the penalty parameter.
        #[arg(long)]
        auto_alpha: bool,
    },
    /// Print discrete-constant probes for the configured mesh under refinement.
    Verify {
        #[arg(long)]
        config: PathBuf,
        /// Refinement levels, counting the generated mesh.
        #[arg(long, default_value_t = 3)]
        levels: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convergence-rate study on unit-square meshes with a fitted-slope footer.
    Rates {
        #[arg(long, value_enum)]
        study: Study,
        #[arg(long, default_value_t = 4)]
        levels: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Study {
    Interp,
    Jump,
    Trace,
    Poincare,
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    RunConfig::parse(&text).with_context(|| format!("in {}", path.display()))
}

fn refinements(mesh: Mesh, levels: usize) -> Result<Vec<Mesh>> {
    if levels == 0 {
        bail!("--levels must be at least 1");
    }
    let mut out = vec![mesh];
    while out.len() < levels {
        let next = refine_uniform(out.last().expect("non-empty"))?;
        out.push(next);
    }
    Ok(out)
}

fn cmd_mesh(spec: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(spec)?;
    let mesh = generate_mesh(&cfg.domain_spec()?)?;
    write_mesh_text(&mesh, BufWriter::new(File::create(out)?))?;
    let m = shape_metrics(&mesh);
    println!(
        "{} vertices, {} triangles, max h {:.4}, min angle {:.2}°",
        mesh.n_vertices(),
        mesh.n_triangles(),
        m.max_h,
        m.min_angle.to_degrees()
    );
    Ok(())
}

fn cmd_solve(config: &Path, out: Option<PathBuf>, seed: Option<u64>, auto_alpha: bool) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(dir) = out {
        cfg.output.dir = dir;
    }
    if let Some(s) = seed {
        cfg.solver.seed = s;
    }
    if auto_alpha {
        cfg.model.alpha = Alpha::Auto;
    }
    let exp = run_experiment(&cfg)?;
    println!("alpha {}", exp.manifest["alpha_used"]);
    for (i, r) in exp.stages.iter().enumerate() {
        println!(
            "stage {i}: contraction {} converged {} iterations {} |g| {:.3e} energy {:.10e}",
            r.contraction, r.converged, r.iterations, r.grad_norm, r.breakdown.total
        );
    }
    println!("wrote {}", cfg.output.dir.join("manifest.json").display());
    if exp.stages.iter().any(|r| !r.converged) {
        bail!("at least one stage did not converge; see the manifest");
    }
    Ok(())
}

fn cmd_verify(config: &Path, levels: usize, seed: u64, out: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(config)?;
    let meshes = refinements(generate_mesh(&cfg.domain_spec()?)?, levels)?;
    let mut rows = vec!["h,trace,poincare_2,poincare_4,lifting".to_string()];
    println!("{:>10} {:>12} {:>12} {:>12} {:>12}", "h", "trace", "poincare_2", "poincare_4", "lifting");
    for mesh in meshes {
        let h = shape_metrics(&mesh).max_h;
        let space = Space::new(mesh, cfg.model.degree)?;
        let trace = trace_constant_probe(&space)?;
        let fields = random_smooth_fields(&space, 100, seed)?;
        let p2 = poincare_probe(&fields, 2.0)?;
        let p4 = poincare_probe(&fields, 4.0)?;
        let cr = Assembler::new(&space, cfg.energy_params(1.0))?.estimate_cr(cfg.model.cr_iters, seed)?;
        println!("{h:>10.4} {trace:>12.5} {p2:>12.5} {p4:>12.5} {:>12.5}", cr.value);
        rows.push(format!("{h:.16e},{trace:.16e},{p2:.16e},{p4:.16e},{:.16e}", cr.value));
    }
    if let Some(path) = out {
        fs::write(&path, rows.join("\n") + "\n")?;
    }
    Ok(())
}

fn cmd_rates(study: Study, levels: usize, out: &Path, seed: u64) -> Result<()> {
    let reports: Vec<RateReport> = match study {
        Study::Interp => {
            let r = interp_rate_study(&SinField, levels)?;
            vec![r.l2, r.h1, r.h2, r.edge]
        }
        Study::Jump => {
            let r = jump_decay_study(&SinField, levels)?;
            vec![r.jump, r.consistency]
        }
        Study::Trace | Study::Poincare => {
            let meshes = tetherfem_core::verify::square_levels(2, levels)?;
            let mut hs = Vec::new();
            let mut vals = Vec::new();
            for m in meshes {
                hs.push(shape_metrics(&m).max_h);
                let space = Space::new(m, 2)?;
                vals.push(match study {
                    Study::Trace => trace_constant_probe(&space)?,
                    _ => poincare_probe(&random_smooth_fields(&space, 100, seed)?, 2.0)?,
                });
            }
            // A mesh-independent constant: the fitted slope should be near zero.
            let name = if matches!(study, Study::Trace) { "trace" } else { "poincare" };
            vec![RateReport::new(name, hs, vals, 0.0)?]
        }
    };
    let mut w = BufWriter::new(File::create(out)?);
    for r in &reports {
        r.write_csv(&mut w)?;
        println!("{}: slope {:.4} (target {}) {}", r.name, r.slope, r.target, if r.pass { "PASS" } else { "FAIL" });
    }
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Mesh { spec, out } => cmd_mesh(&spec, &out),
        Command::Solve { config, out, seed, auto_alpha } => cmd_solve(&config, out, seed, auto_alpha),
        Command::Verify { config, levels, seed, out } => cmd_verify(&config, levels, seed, out),
        Command::Rates { study, levels, out, seed } => cmd_rates(study, levels, &out, seed),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
