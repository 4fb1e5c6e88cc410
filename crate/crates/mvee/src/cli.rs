use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::graph_view;
use crate::project::{render_build_report, Project};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_ANOMALY: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "mvee", version, about = "Track compiled versions of benchmarked code sections")]
pub struct Args {
    /// Project directory containing mvee.json
    #[arg(long, global = true, default_value = ".")]
    pub project: PathBuf,
    /// State directory, overriding `state_dir` from mvee.json
    #[arg(long, global = true)]
    pub state_dir: Option<PathBuf>,
    /// Print machine-readable JSON instead of text
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Create the state directory and record current source digests
    Init,
    /// Compile, check unmodified sections for anomalies, record versions
    Build,
    /// Run the benchmark and store its results under the current versions
    Run,
    /// Show the version graph
    Graph,
    /// Export a chart of all relevant versions
    Report {
        #[arg(long)]
        metric: String,
        #[arg(long)]
        param: String,
        /// Also write the spliced and single-build charts for comparison
        #[arg(long)]
        problem_modes: bool,
    },
    /// Serve the HTTP API and web UI
    Serve {
        #[arg(long, default_value_t = 7878)]
        port: u16,
        /// Directory with the built web UI
        #[arg(long)]
        ui: Option<PathBuf>,
    },
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

/// Runs one command and returns the process exit code.
pub fn execute(args: Args) -> u8 {
    let project = match Project::open(&args.project, args.state_dir.clone()) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_ERROR;
        }
    };
    match run_command(&project, args.command, args.json) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}

fn run_command(project: &Project, cmd: Cmd, json: bool) -> anyhow::Result<u8> {
    match cmd {
        Cmd::Init => {
            project.init()?;
            println!("initialized {}", project.state.root().display());
            Ok(EXIT_OK)
        }
        Cmd::Build => {
            let report = project.build()?;
            if json {
                print_json(&report);
            } else {
                let graph = project.load_graph()?;
                print!("{}", render_build_report(&report, &project.state, &graph));
            }
            Ok(if report.has_anomaly() { EXIT_ANOMALY } else { EXIT_OK })
        }
        Cmd::Run => {
            let report = project.run()?;
            if json {
                print_json(&report);
            } else {
                println!(
                    "run for build {}: {} new, {} replaced, {} records stored",
                    report.build_id, report.added, report.replaced, report.records
                );
            }
            Ok(EXIT_OK)
        }
        Cmd::Graph => {
            let graph = project.load_graph()?;
            if json {
                println!("{}", graph.to_json());
            } else {
                print!("{}", graph_view::render(&graph));
            }
            Ok(EXIT_OK)
        }
        Cmd::Report { metric, param, problem_modes } => {
            let files = project.report(&metric, &param, problem_modes)?;
            if json {
                print_json(&files);
            } else {
                println!("series: {}", files.series.join(", "));
                for f in &files.files {
                    println!("wrote {}", f.display());
                }
            }
            Ok(EXIT_OK)
        }
        Cmd::Serve { port, ui } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(crate::server::serve(project.clone(), port, ui))?;
            Ok(EXIT_OK)
        }
    }
}
