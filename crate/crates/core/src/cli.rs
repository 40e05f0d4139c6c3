//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::dgff::{sample_field, FieldSample};
use crate::error::{invalid, Result};
use crate::green::{green_ball, green_box};
use crate::grid::GridPoint;
use crate::harness::{self, ExperimentConfig};
use crate::io;
use crate::kprocess::{sample_chi, simulate_pre_k, simulate_spatial_k, ZSpec};
use crate::rng;
use crate::traps::deep_traps;
use crate::walk::{hitting_experiment, local_time_experiment, run_excursions, run_walk, ExcursionGeometry};

#[derive(Parser, Debug)]
#[command(name = "dgfftrap", version, about = "Random walks in a Gaussian free field potential")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Exact Green's function of the killed walk on a box or ball.
    Green(GreenArgs),
    /// Sample discrete Gaussian free fields on the N x N box.
    SampleField(SampleFieldArgs),
    /// Extract the deepest traps of a field.
    FindTraps(FindTrapsArgs),
    /// Run the walk in the field potential and write its path.
    RunWalk(RunWalkArgs),
    /// Record trap excursions of the walk.
    Excursions(ExcursionArgs),
    /// Local times around the origin before leaving the separation ball.
    LocalTime(LocalTimeArgs),
    /// First trap ball hit by a torus walk.
    Hitting(HittingArgs),
    /// Sample the depth-location atoms of the Poisson measure.
    SampleChi(SampleChiArgs),
    /// Simulate a truncated spatial K-process.
    RunKprocess(KProcessArgs),
    /// Statistical experiments.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum DomainKind {
    Box,
    Ball,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Binary,
}

#[derive(Args, Debug)]
pub struct GreenArgs {
    #[arg(long, value_enum)]
    pub domain: DomainKind,
    /// Box side N.
    #[arg(long, required_if_eq("domain", "box"))]
    pub size: Option<usize>,
    /// Ball radius R.
    #[arg(long, required_if_eq("domain", "ball"))]
    pub radius: Option<f64>,
    /// Output format; defaults to CSV for `.csv` paths and binary otherwise.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SampleFieldArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, value_enum, default_value_t = Format::Binary)]
    pub format: Format,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FindTrapsArgs {
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long)]
    pub r: f64,
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub beta: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RunWalkArgs {
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long)]
    pub beta: f64,
    /// Horizon in unscaled walk time.
    #[arg(long)]
    pub horizon: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExcursionArgs {
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long)]
    pub r: f64,
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub beta: f64,
    /// Number of embedded walk steps.
    #[arg(long)]
    pub steps: u64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct LocalTimeArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub r: f64,
    #[arg(long)]
    pub replicas: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct HittingArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub r: f64,
    /// File with one `x,y` center per line.
    #[arg(long)]
    pub centers: PathBuf,
    #[arg(long, value_parser = io::parse_point)]
    pub start: GridPoint,
    #[arg(long)]
    pub replicas: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SampleChiArgs {
    /// `pointmass:x,y`, `uniform` or `file:<atoms.csv>`.
    #[arg(long)]
    pub z: String,
    /// Total mass of Z.
    #[arg(long)]
    pub mass: f64,
    #[arg(long)]
    pub beta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub kappa: f64,
    #[arg(long)]
    pub taumin: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct KProcessArgs {
    #[arg(long)]
    pub atoms: PathBuf,
    #[arg(long, conflicts_with = "tail_tol", required_unless_present = "tail_tol")]
    pub m: Option<usize>,
    #[arg(long)]
    pub tail_tol: Option<f64>,
    #[arg(long)]
    pub horizon: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum ExperimentCommand {
    /// Run one experiment and write `<name>.json` and `<name>.csv`.
    Run(ExperimentRunArgs),
    /// List registered experiments.
    List,
}

#[derive(Args, Debug)]
pub struct ExperimentRunArgs {
    #[arg(long, conflicts_with = "name", required_unless_present = "name")]
    pub config: Option<PathBuf>,
    /// Run with built-in defaults.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Run a parsed command, writing progress lines to `log`.
pub fn execute(cli: Cli, log: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Green(a) => green(a),
        Command::SampleField(a) => sample_fields(a),
        Command::FindTraps(a) => find_traps(a),
        Command::RunWalk(a) => {
            let f = load_field(&a.field)?;
            let run = run_walk(&f, a.beta, a.horizon, a.seed)?;
            write_with(&a.out, |w| io::write_grid_path_csv(w, &run.path))
        }
        Command::Excursions(a) => excursions(a),
        Command::LocalTime(a) => {
            let s = local_time_experiment(a.n, a.r, GridPoint::ORIGIN, a.replicas, a.seed)?;
            let offsets: Vec<[i32; 2]> = s.offsets.iter().map(|o| [o.x, o.y]).collect();
            let doc = json!({
                "n": s.n,
                "r": s.r,
                "r_n": s.r_n,
                "log_n": s.log_n,
                "offsets": offsets,
                "counts": s.counts,
            });
            write_json(&a.out, &doc)
        }
        Command::Hitting(a) => {
            let centers = io::parse_points(&io::read_text(&a.centers)?)?;
            let h = hitting_experiment(a.n, a.r, &centers, a.start, a.replicas, a.seed)?;
            let doc = json!({
                "n": a.n,
                "r": a.r,
                "replicas": a.replicas,
                "counts": h.counts,
                "mean_steps": h.mean_steps,
            });
            write_json(&a.out, &doc)
        }
        Command::SampleChi(a) => {
            let z = parse_z(&a.z, a.mass)?;
            let atoms = sample_chi(&z, a.beta, a.kappa, a.taumin, a.seed)?;
            write_with(&a.out, |w| io::write_atoms_csv(w, &atoms))
        }
        Command::RunKprocess(a) => {
            let atoms = io::read_atoms_csv(&io::read_text(&a.atoms)?)?;
            let path = match (a.m, a.tail_tol) {
                (Some(m), _) => simulate_pre_k(&atoms, m, a.horizon, a.seed)?,
                (None, Some(tol)) => simulate_spatial_k(&atoms, a.horizon, tol, a.seed)?.0,
                (None, None) => return Err(invalid("one of --m or --tail-tol is required")),
            };
            write_with(&a.out, |w| io::write_spatial_path_csv(w, &path.spatial()))
        }
        Command::Experiment(ExperimentCommand::List) => {
            for e in harness::registry() {
                writeln!(log, "{:<22} {}", e.name, e.summary)?;
            }
            Ok(())
        }
        Command::Experiment(ExperimentCommand::Run(a)) => run_experiment(a, log),
    }
}

fn green(a: GreenArgs) -> Result<()> {
    let table = match a.domain {
        DomainKind::Box => green_box(a.size.ok_or_else(|| invalid("--size is required"))?)?,
        DomainKind::Ball => green_ball(a.radius.ok_or_else(|| invalid("--radius is required"))?)?,
    };
    match a.format.unwrap_or_else(|| format_for(&a.out)) {
        Format::Csv => write_with(&a.out, |w| io::write_green_csv(w, &table)),
        Format::Binary => io::write_atomic(&a.out, &io::encode_green(&table)),
    }
}

fn sample_fields(a: SampleFieldArgs) -> Result<()> {
    if a.count == 0 {
        return Err(invalid("--count must be positive"));
    }
    // a single field uses the seed as given so that it matches the library call
    let seed_of = |i: usize| if a.count == 1 { a.seed } else { rng::child_seed(a.seed, rng::tag::FIELD, i as u64) };
    match a.format {
        Format::Csv => {
            if a.count != 1 {
                return Err(invalid("CSV output holds a single field"));
            }
            let f = sample_field(a.n, a.seed)?;
            write_with(&a.out, |w| io::write_field_csv(w, &f))
        }
        Format::Binary => {
            let mut bytes = Vec::new();
            for i in 0..a.count {
                bytes.extend(io::encode_field(&sample_field(a.n, seed_of(i))?));
            }
            io::write_atomic(&a.out, &bytes)
        }
    }
}

fn find_traps(a: FindTrapsArgs) -> Result<()> {
    let f = load_field(&a.field)?;
    let l = deep_traps(&f, a.r, a.m, a.beta)?;
    let traps: Vec<_> = l
        .traps
        .iter()
        .zip(l.rescaled_atoms.atoms())
        .map(|(t, at)| {
            json!({
                "x": t.position.x,
                "y": t.position.y,
                "depth": t.depth(),
                "rescaled_depth": at.depth,
                "rescaled_x": at.location[0],
                "rescaled_y": at.location[1],
            })
        })
        .collect();
    let doc = json!({
        "n": l.n,
        "r": l.r,
        "m": l.m,
        "beta": l.beta,
        "separated": l.separated,
        "shortfall": l.shortfall,
        "traps": traps,
    });
    write_json(&a.out, &doc)
}

fn excursions(a: ExcursionArgs) -> Result<()> {
    let f = load_field(&a.field)?;
    let l = deep_traps(&f, a.r, a.m, a.beta)?;
    let geom = ExcursionGeometry::new(&l)?;
    let run = run_excursions(&geom, GridPoint::ORIGIN, a.seed, usize::MAX, a.steps)?;
    write_with(&a.out, |w| io::write_excursions_jsonl(w, &run.records, geom.offsets()))
}

fn run_experiment(a: ExperimentRunArgs, log: &mut dyn Write) -> Result<()> {
    let cfg = match (&a.config, &a.name) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => ExperimentConfig::named(name, a.seed),
        (None, None) => return Err(invalid("one of --config or --name is required")),
    };
    let dir = a.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    let report = harness::run(&cfg)?;
    std::fs::create_dir_all(&dir)?;
    io::write_atomic(&dir.join(format!("{}.json", cfg.experiment)), report.to_json()?.as_bytes())?;
    write_with(&dir.join(format!("{}.csv", cfg.experiment)), |w| harness::write_csv(w, &[report.clone()]))?;
    writeln!(log, "{}", report.summary())?;
    Ok(())
}

fn parse_z(spec: &str, mass: f64) -> Result<ZSpec> {
    if spec == "uniform" {
        return Ok(ZSpec::uniform(mass));
    }
    if let Some(rest) = spec.strip_prefix("pointmass:") {
        let parts: Vec<&str> = rest.split(',').collect();
        let coords: Vec<f64> = parts.iter().filter_map(|s| s.trim().parse().ok()).collect();
        if parts.len() != 2 || coords.len() != 2 {
            return Err(invalid(format!("expected pointmass:x,y, got {spec:?}")));
        }
        return Ok(ZSpec::point_mass([coords[0], coords[1]], mass));
    }
    if let Some(path) = spec.strip_prefix("file:") {
        let atoms = io::read_atoms_csv(&io::read_text(Path::new(path))?)?;
        return Ok(ZSpec::from_atoms(&atoms, mass));
    }
    Err(invalid(format!("unknown Z specification {spec:?}")))
}

fn format_for(path: &Path) -> Format {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
        _ => Format::Binary,
    }
}

/// Binary files start with the field magic; anything else is read as CSV.
pub fn load_field(path: &Path) -> Result<FieldSample> {
    let bytes = io::read_bytes(path)?;
    if bytes.starts_with(&io::FIELD_MAGIC) {
        io::decode_fields(&bytes)?
            .into_iter()
            .next()
            .ok_or_else(|| invalid(format!("{}: no field records", path.display())))
    } else {
        let text = String::from_utf8(bytes).map_err(|_| invalid(format!("{}: neither a binary nor a CSV field", path.display())))?;
        io::read_field_csv(&text)
    }
}

fn write_with(path: &Path, body: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    body(&mut buf)?;
    io::write_atomic(path, &buf)
}

fn write_json(path: &Path, doc: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(doc).map_err(|e| crate::Error::Internal(e.to_string()))?;
    text.push('\n');
    io::write_atomic(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn z_specs() {
        assert_eq!(parse_z("uniform", 2.0).unwrap(), ZSpec::uniform(2.0));
        assert_eq!(parse_z("pointmass:0.5,0.25", 1.0).unwrap(), ZSpec::point_mass([0.5, 0.25], 1.0));
        assert!(parse_z("pointmass:0.5", 1.0).is_err());
        assert!(parse_z("gauss", 1.0).is_err());
    }

    #[test]
    fn extension_picks_format() {
        assert_eq!(format_for(Path::new("g.csv")), Format::Csv);
        assert_eq!(format_for(Path::new("g.grnt")), Format::Binary);
    }
}
