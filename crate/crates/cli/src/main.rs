//! `milnorlab`: command-line front end for the fibration checks.

mod commands;
mod source;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use milnorlab::Error;

#[derive(Parser, Debug)]
#[command(name = "milnorlab", version, about = "Numerical probes for Milnor-type fibrations of real map germs")]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
    #[command(flatten)]
    pub common: Common,
}

#[derive(clap::Args, Debug, Clone)]
pub struct Common {
    /// `psi:N`, `ldm:P,Q:(a,b),..`, `catalog:NAME`, or a germ DSL file.
    #[arg(long, global = true)]
    pub germ: Option<String>,
    /// Catalog homeomorphism name or a homeo DSL file.
    #[arg(long, global = true)]
    pub homeo: Option<String>,
    #[arg(long, global = true, default_value_t = 1.0)]
    pub eps: f64,
    /// Target radius; the family heuristic when absent.
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    /// Linearity radius; also overrides the homeomorphism's radius.
    #[arg(long, global = true)]
    pub eta: Option<f64>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (all cores when absent).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true, default_value = "milnorlab-out")]
    pub out: PathBuf,
    #[arg(long, global = true, value_delimiter = ',', default_value = "json,csv,svg")]
    pub format: Vec<Format>,
    #[arg(long, global = true, value_enum, default_value_t = Budget::Standard)]
    pub budget: Budget,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Cmd {
    /// Dimensions, smoothness, family and oracle availability.
    Describe,
    /// Sample the discriminant; export samples, oracle curves and a plot.
    Discriminant,
    /// Run one regularity check.
    Check {
        #[arg(value_enum)]
        which: Which,
        /// Directions (degrees) removed from the compatibility subset.
        #[arg(long, value_delimiter = ',')]
        exclude_degrees: Vec<f64>,
    },
    /// Flow tube points to the sphere; the tau probe when no start is given.
    Flow {
        /// Starting point `x1,..,xn` (repeatable).
        #[arg(long, allow_hyphen_values = true)]
        start: Vec<String>,
        /// Tube points for the tau probe.
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Horizontal lifts of a base curve and the induced fiber translation.
    Lift {
        /// `constant:a,b`, `segment:a,b;c,d`, `circle:cx,cy;r` or `polyline:p;q;..`.
        #[arg(long, allow_hyphen_values = true)]
        curve: String,
        /// Starting point on the initial fiber (repeatable).
        #[arg(long, allow_hyphen_values = true, required = true)]
        start: Vec<String>,
        /// `identity` or `diag:d1,..,dn`.
        #[arg(long, default_value = "identity")]
        metric: String,
        #[arg(long, default_value_t = 64)]
        grid: usize,
    },
    /// Sample one fiber and count its components.
    Fiber {
        /// Target value `t1,..,tk`.
        #[arg(long, allow_hyphen_values = true)]
        target: String,
        #[arg(long)]
        seeds: Option<usize>,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Which {
    Transversality,
    Dreg,
    Dhreg,
    Linearization,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
    Svg,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Quick,
    Standard,
    Thorough,
}

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass = 0,
    Fail = 1,
    Usage = 2,
    Sampling = 3,
    Inconclusive = 4,
    Aborted = 5,
}

#[derive(Debug)]
pub struct Failure {
    pub status: Status,
    pub message: String,
}

impl Failure {
    pub fn new(status: Status, message: impl Into<String>) -> Failure {
        Failure { status, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        let status = match e {
            Error::Precondition(_) => Status::Inconclusive,
            Error::StepFailure(_) | Error::DegenerateProjection { .. } => Status::Aborted,
            Error::NoDiscriminant | Error::EmptyCloud => Status::Sampling,
            _ => Status::Usage,
        };
        Failure::new(status, e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(status) => ExitCode::from(status as u8),
        Err(f) => {
            eprintln!("milnorlab: {}", f.message);
            ExitCode::from(f.status as u8)
        }
    }
}
