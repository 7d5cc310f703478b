mod analyze;
mod generate;
mod inspect;
mod localize;
mod selftest;
mod simplify;

use clap::Subcommand;

pub use analyze::AnalyzeArgs;
pub use generate::GenerateArgs;
pub use inspect::{ForwardArgs, RfEstimateArgs};
pub use localize::{EvalSegArgs, ReportArgs, SegmentArgs, ThresholdArgs};
pub use selftest::SelftestArgs;
pub use simplify::SimplifyArgs;

pub use crate::server::ServeArgs;
use crate::Cli;

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify an image and print the top-k classes.
    Forward(ForwardArgs),
    /// Theoretical receptive field of every spatial layer.
    RfTheoretic,
    /// Empirical receptive fields from occlusion discrepancy maps.
    RfEstimate(RfEstimateArgs),
    /// Remove segments while the image keeps its class; emit the minimal image.
    Simplify(SimplifyArgs),
    /// Threshold unit activations into input-space masks and boxes.
    Segment(SegmentArgs),
    /// Scene prediction plus tagged-unit detections from one forward pass.
    Report(ReportArgs),
    /// Object and unit statistics: frequencies, informative objects, correlations.
    Analyze(AnalyzeArgs),
    /// Localization quality of tagged units against ground-truth masks.
    EvalSeg(EvalSegArgs),
    /// Run the annotation HTTP service.
    Serve(ServeArgs),
    /// Quick invariant checks on built-in fixtures.
    Selftest(SelftestArgs),
    /// Write synthetic datasets for trying the other commands.
    Generate(GenerateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Forward(_) => "forward",
            Command::RfTheoretic => "rf-theoretic",
            Command::RfEstimate(_) => "rf-estimate",
            Command::Simplify(_) => "simplify",
            Command::Segment(_) => "segment",
            Command::Report(_) => "report",
            Command::Analyze(_) => "analyze",
            Command::EvalSeg(_) => "eval-seg",
            Command::Serve(_) => "serve",
            Command::Selftest(_) => "selftest",
            Command::Generate(_) => "generate",
        }
    }
}

pub fn execute(cli: &Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Forward(a) => inspect::forward(g, a),
        Command::RfTheoretic => inspect::rf_theoretic(g),
        Command::RfEstimate(a) => inspect::rf_estimate(g, a),
        Command::Simplify(a) => simplify::run(g, a),
        Command::Segment(a) => localize::segment(g, a),
        Command::Report(a) => localize::report(g, a),
        Command::Analyze(a) => analyze::run(g, a),
        Command::EvalSeg(a) => localize::eval_seg(g, a),
        Command::Serve(a) => crate::server::run(g, a),
        Command::Selftest(a) => selftest::run(g, a),
        Command::Generate(a) => generate::run(g, a),
    }
}
