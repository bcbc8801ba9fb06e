use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use plap::continuum::{continuum_solution_1d, solve_continuum_grid_2d, ContinuumOptions, GridFunction};
use plap::error::{Error, Result};
use plap::graph::{build_graph, connectivity_radius};
use plap::harness::config::ConfigMap;
use plap::harness::output::{curve_svg, emit_outputs, read_records, write_curves, write_fits, write_landmarks};
use plap::harness::{aggregate, find_landmarks, fit_landmarks, run_sweep, solve_model, SweepConfig};
use plap::sampling::{sample_cloud, PointCloud};

#[derive(Parser)]
#[command(name = "plap", version, about = "Graph p-Laplacian regression experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an ε-sweep and write records, curves, landmarks, fits and plots.
    Sweep(SweepArgs),
    /// Extract landmarks from record CSVs and fit power laws across n.
    Scaling(ScalingArgs),
    /// Solve one model on one sampled (or loaded) point cloud.
    Solve(SolveArgs),
    /// Continuum reference solution on a grid.
    Continuum(ContinuumArgs),
    /// Render error curves from a record CSV as SVG.
    Plot(PlotArgs),
}

/// Problem setup shared by all subcommands; every flag is a config key.
#[derive(Args)]
struct Problem {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_kv)]
    set: Vec<(String, String)>,
    #[arg(long)]
    dim: Option<usize>,
    /// Labeled points as `x[,y]:label;...`.
    #[arg(long)]
    labels: Option<String>,
    /// `indicator` or `exp`.
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    support: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Problem {
    fn map(&self) -> Result<ConfigMap> {
        let mut map = match &self.config {
            Some(path) => ConfigMap::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)?,
            None => ConfigMap::default(),
        };
        let flags = [
            ("dim", self.dim.map(|v| v.to_string())),
            ("labels", self.labels.clone()),
            ("kernel", self.kernel.clone()),
            ("support", self.support.map(|v| v.to_string())),
            ("p", self.p.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                map.set(k, &v)?;
            }
        }
        for (k, v) in &self.set {
            map.set(k, v)?;
        }
        Ok(map)
    }
}

fn parse_kv(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    problem: Problem,
    #[arg(long, default_value = "sweep_out")]
    out: PathBuf,
    /// Smoothing window for the ε_upper search.
    #[arg(long)]
    smooth_window: Option<usize>,
    /// Fit landmark power laws over this many largest n.
    #[arg(long, default_value_t = 5)]
    fit_k: usize,
    #[arg(long)]
    no_svg: bool,
}

#[derive(Args)]
struct ScalingArgs {
    /// Record CSVs from one or more sweeps.
    #[arg(required = true)]
    records: Vec<PathBuf>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 3)]
    smooth_window: usize,
    #[arg(long, default_value = "scaling_out")]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    problem: Problem,
    #[arg(long)]
    eps: f64,
    /// Sample size when no cloud file is given.
    #[arg(long, default_value_t = 1280)]
    n: usize,
    /// Read the point cloud from a CSV (`x1[,x2],label_or_nan`) instead of sampling.
    #[arg(long)]
    cloud: Option<PathBuf>,
    /// `constrained`, `penalized` or `improved`.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long = "radius-mult")]
    radius_mult: Option<f64>,
    /// Relative energy decrease per sweep at which the solver stops.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_sweeps: Option<usize>,
    /// Solution CSV `x1[,x2],f`; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    cloud_out: Option<PathBuf>,
    /// Edge list `i,j,weight`.
    #[arg(long)]
    edges_out: Option<PathBuf>,
}

#[derive(Args)]
struct ContinuumArgs {
    #[command(flatten)]
    problem: Problem,
    /// Cells per axis.
    #[arg(long, default_value_t = plap::continuum::DEFAULT_GRID_SIZE)]
    grid_size: usize,
    /// Grid CSV; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    records: PathBuf,
    #[arg(long, default_value_t = 3)]
    smooth_window: usize,
    #[arg(long, default_value = "plots")]
    out: PathBuf,
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut map = args.problem.map()?;
    if let Some(w) = args.smooth_window {
        map.set("smooth_window", &w.to_string())?;
    }
    let config = map.build()?;
    let out = run_sweep(&config)?;
    let fits = fit_landmarks(&out.landmarks, args.fit_k.min(config.ns.len()));
    emit_outputs(
        &args.out,
        &out.records,
        &out.curves,
        &out.landmarks,
        &fits,
        !args.no_svg,
    )?;
    print_summary(&out.landmarks, &fits);
    println!("wrote {}", args.out.display());
    Ok(())
}

fn print_summary(landmarks: &[plap::harness::Landmarks], fits: &[(String, Result<plap::harness::ScalingFit>)]) {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.5}"));
    println!("{:>6} {:>10} {:>10} {:>10}", "n", "eps_conn", "eps_star", "eps_upper");
    for l in landmarks {
        println!(
            "{:>6} {:>10.5} {:>10} {:>10}",
            l.n,
            l.eps_conn,
            opt(l.eps_star),
            opt(l.eps_upper)
        );
    }
    for (name, fit) in fits {
        match fit {
            Ok(f) => println!("{name}: {:.4} / n^{:.4} (k = {})", f.a, f.b, f.k),
            Err(e) => println!("{name}: no fit ({e})"),
        }
    }
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<plap::harness::SweepRecord>> {
    let mut records = Vec::new();
    for p in paths {
        records.extend(read_records(p)?);
    }
    Ok(records)
}

fn scaling(args: ScalingArgs) -> Result<()> {
    let records = load_all(&args.records)?;
    let curves = aggregate(&records);
    let landmarks = find_landmarks(&records, &curves, args.smooth_window);
    let fits = fit_landmarks(&landmarks, args.k);
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    write_landmarks(&args.out.join("landmarks.csv"), &landmarks)?;
    write_fits(&args.out.join("fits.csv"), &fits)?;
    print_summary(&landmarks, &fits);
    Ok(())
}

fn solve(args: SolveArgs) -> Result<()> {
    let mut map = args.problem.map()?;
    let flags = [
        ("model", args.model.clone()),
        ("q", args.q.map(|v| v.to_string())),
        ("lambda", args.lambda.map(|v| v.to_string())),
        ("radius_multiplier", args.radius_mult.map(|v| v.to_string())),
        ("rel_energy_tol", args.tol.map(|v| v.to_string())),
        ("max_sweeps", args.max_sweeps.map(|v| v.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            map.set(k, &v)?;
        }
    }
    let config: SweepConfig = map.build()?;
    let cloud = match &args.cloud {
        Some(path) => PointCloud::read_csv(path, config.domain.clone(), config.base_seed)?,
        None => sample_cloud(&config.domain, &config.labeled, args.n, config.base_seed)?,
    };
    let cloud = Arc::new(cloud);
    let graph = build_graph(cloud.clone(), &config.kernel, args.eps)?;
    let report = solve_model(&graph, config.model, config.p, &config.solve)?;
    if let Some(path) = &args.cloud_out {
        cloud.write_csv(path)?;
    }
    if let Some(path) = &args.edges_out {
        graph.write_edges_csv(path)?;
    }
    let rows = cloud.points().zip(report.solution.iter()).map(|(x, f)| {
        let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        row.push(f.to_string());
        row
    });
    let mut header: Vec<String> = (1..=cloud.dim()).map(|i| format!("x{i}")).collect();
    header.push("f".into());
    write_table(args.out.as_deref(), header, rows)?;
    eprintln!(
        "n = {}, eps = {}, eps_conn = {:.6}, connected = {}, energy = {:.9e}, sweeps = {}, converged = {}",
        cloud.len(),
        args.eps,
        connectivity_radius(&cloud, &config.kernel)?,
        report.graph_connected,
        report.final_energy,
        report.sweeps_used,
        report.converged
    );
    Ok(())
}

fn write_table(path: Option<&Path>, header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let sink: Box<dyn std::io::Write> = match path {
        Some(p) => Box::new(fs::File::create(p).map_err(|e| Error::io(p, e))?),
        None => Box::new(std::io::stdout().lock()),
    };
    let name = path.map_or_else(|| PathBuf::from("<stdout>"), Path::to_path_buf);
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(&header).map_err(|e| Error::csv(&name, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| Error::csv(&name, e))?;
    }
    w.flush().map_err(|e| Error::io(&name, e))
}

fn continuum(args: ContinuumArgs) -> Result<()> {
    let config = args.problem.map()?.build()?;
    let grid = if config.domain.dim() == 1 {
        let f = continuum_solution_1d(&config.labeled)?;
        GridFunction::from_fn(&config.domain, args.grid_size, |x| f.eval(x[0]))?
    } else {
        let sol = solve_continuum_grid_2d(
            &config.domain,
            &config.labeled,
            config.p,
            args.grid_size,
            &ContinuumOptions::default(),
        )?;
        eprintln!(
            "energy = {:.9e}, iterations = {}, converged = {}, gradient norm = {:.3e}",
            sol.energy, sol.iterations, sol.converged, sol.grad_norm
        );
        sol.grid
    };
    let header: Vec<String> = match grid.dim() {
        1 => vec!["x".into(), "f".into()],
        _ => vec!["x".into(), "y".into(), "f".into()],
    };
    let rows = (0..grid.num_nodes()).map(|i| {
        let mut row: Vec<String> = grid.node_position(i).iter().map(|v| v.to_string()).collect();
        row.push(grid.values()[i].to_string());
        row
    });
    write_table(args.out.as_deref(), header, rows)
}

fn plot(args: PlotArgs) -> Result<()> {
    let records = read_records(&args.records)?;
    let curves = aggregate(&records);
    let landmarks = find_landmarks(&records, &curves, args.smooth_window);
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    write_curves(&args.out.join("curves.csv"), &curves)?;
    for c in &curves {
        let path = args.out.join(format!("curve_n{}.svg", c.n));
        let l = landmarks.iter().find(|l| l.n == c.n);
        fs::write(&path, curve_svg(c, l)).map_err(|e| Error::io(&path, e))?;
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sweep(a) => sweep(a),
        Command::Scaling(a) => scaling(a),
        Command::Solve(a) => solve(a),
        Command::Continuum(a) => continuum(a),
        Command::Plot(a) => plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
