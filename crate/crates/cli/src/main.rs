use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use multirate::study::{
    gnuplot_script, parse_config, run_study, Schedule, StudyConfig, StudyError, StudyKind,
};
use multirate::timegrid::MultirateMesh;

#[derive(Parser)]
#[command(
    name = "multirate",
    version,
    about = "Convergence studies for multirate dG(0) time stepping"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct StudyArgs {
    /// JSON study definition
    #[arg(long)]
    config: PathBuf,
    /// overrides `output_dir` of the config
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Coupled ODE study (config kind "ode")
    OdeStudy(StudyArgs),
    /// 1D heat study (config kind "heat")
    HeatStudy(StudyArgs),
    /// Two-pipe Stokes study (config kind "stokes")
    StokesStudy(StudyArgs),
    /// Print a multirate time mesh as JSON
    MeshInfo {
        /// mesh JSON file (`macro_nodes`, `micro_counts`)
        #[arg(long, conflicts_with_all = ["nodes", "counts"])]
        mesh: Option<PathBuf>,
        /// macro nodes, e.g. `0,0.5,1`
        #[arg(long, value_delimiter = ',', requires = "counts")]
        nodes: Vec<f64>,
        /// micro counts per macro step as `N1:N2`, e.g. `4:1,1:2`
        #[arg(long, value_delimiter = ',', requires = "nodes")]
        counts: Vec<String>,
    },
}

enum Failure {
    /// bad input: missing file, malformed or invalid config
    Input(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Runtime(m) => m,
        }
    }
}

fn load_config(path: &Path, expected: StudyKind) -> Result<StudyConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
    let config =
        parse_config(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    if config.kind != expected {
        return Err(Failure::Input(format!(
            "{}: kind is {:?}, this subcommand runs {:?}",
            path.display(),
            config.kind,
            expected
        )));
    }
    Ok(config)
}

fn kind_name(k: StudyKind) -> &'static str {
    match k {
        StudyKind::Ode => "ode",
        StudyKind::Heat => "heat",
        StudyKind::Stokes => "stokes",
    }
}

fn study(args: &StudyArgs, kind: StudyKind) -> Result<(), Failure> {
    let config = load_config(&args.config, kind)?;
    let dir = args
        .output_dir
        .clone()
        .or_else(|| config.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)
        .map_err(|e| Failure::Input(format!("cannot create {}: {e}", dir.display())))?;
    let schedule = match config.schedule {
        Schedule::Uniform => "uniform",
        Schedule::RefineSub1Only => "refine_sub1_only",
        Schedule::RefineSub2Only => "refine_sub2_only",
    };
    let stem = format!("{}_{schedule}", kind_name(kind));
    eprintln!("running {stem}: {} levels", config.levels);
    let report = run_study(&config).map_err(|e| match e {
        StudyError::Config(m) => Failure::Input(m),
        other => Failure::Runtime(other.to_string()),
    })?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let gp_path = dir.join(format!("{stem}.gp"));
    let write = |p: &Path, s: &str| {
        std::fs::write(p, s)
            .map_err(|e| Failure::Input(format!("cannot write {}: {e}", p.display())))
    };
    write(&csv_path, &report.csv)?;
    write(&gp_path, &gnuplot_script(&format!("{stem}.csv"), &stem))?;
    print!("{}", report.csv);
    eprintln!("wrote {} and {}", csv_path.display(), gp_path.display());
    Ok(())
}

fn mesh_info(mesh: Option<&Path>, nodes: &[f64], counts: &[String]) -> Result<(), Failure> {
    let m = match mesh {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::Input(format!("cannot read {}: {e}", p.display())))?;
            MultirateMesh::from_json(&text)
                .map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?
        }
        None if nodes.is_empty() => {
            MultirateMesh::uniform(1, 1.0).map_err(|e| Failure::Runtime(e.to_string()))?
        }
        None => {
            let parsed = counts
                .iter()
                .map(|c| {
                    let (a, b) = c
                        .split_once(':')
                        .ok_or_else(|| Failure::Input(format!("count {c:?} is not N1:N2")))?;
                    let n = |s: &str| {
                        s.trim()
                            .parse::<usize>()
                            .map_err(|_| Failure::Input(format!("bad count {s:?}")))
                    };
                    Ok([n(a)?, n(b)?])
                })
                .collect::<Result<Vec<_>, Failure>>()?;
            MultirateMesh::new(nodes.to_vec(), parsed).map_err(|e| Failure::Input(e.to_string()))?
        }
    };
    println!("{}", m.to_json());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::OdeStudy(a) => study(a, StudyKind::Ode),
        Command::HeatStudy(a) => study(a, StudyKind::Heat),
        Command::StokesStudy(a) => study(a, StudyKind::Stokes),
        Command::MeshInfo {
            mesh,
            nodes,
            counts,
        } => mesh_info(mesh.as_deref(), nodes, counts),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
