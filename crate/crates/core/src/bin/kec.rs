use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kec::pipeline::{Overrides, Pipeline, Stage};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "kec", version, about = "Knowledge-enhanced clustering of image embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Over-cluster images and attach nouns to every cluster
    Map(Common),
    /// Merge clusters and name a concept per merged group
    Concepts(Common),
    /// Mine uni- and bi-concept attributes and build the knowledge base
    Attributes(Common),
    /// Ground the knowledge base on every image
    Ground(Common),
    /// Cluster the concatenated features
    Cluster(Common),
    /// Score predictions against labels
    Eval(Common),
    /// Run every stage in order
    Run(Common),
    /// Write visual, enhanced and concatenated features
    ExportFeatures {
        #[command(flatten)]
        common: Common,
        /// Target directory (default: <output_dir>/export)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    domain_hint: Option<String>,
    #[arg(long)]
    no_name: bool,
    #[arg(long)]
    no_desc: bool,
    #[arg(long)]
    no_uni: bool,
    #[arg(long)]
    no_bi: bool,
    /// Use the offline mock backend regardless of the config
    #[arg(long)]
    mock_llm: bool,
    /// Print metrics at full precision
    #[arg(long)]
    precise: bool,
}

impl Common {
    fn pipeline(&self) -> Result<Pipeline, kec::pipeline::PipelineError> {
        let o = Overrides {
            seed: self.seed,
            domain_hint: self.domain_hint.clone(),
            no_name: self.no_name,
            no_desc: self.no_desc,
            no_uni: self.no_uni,
            no_bi: self.no_bi,
            mock_llm: self.mock_llm,
        };
        Pipeline::from_config_file(&self.config, &o)
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    let (common, stage) = match &cli.command {
        Command::Map(c) => (c, Some(Stage::Map)),
        Command::Concepts(c) => (c, Some(Stage::Concepts)),
        Command::Attributes(c) => (c, Some(Stage::Attributes)),
        Command::Ground(c) => (c, Some(Stage::Ground)),
        Command::Cluster(c) => (c, Some(Stage::Cluster)),
        Command::Eval(c) => (c, Some(Stage::Eval)),
        Command::Run(c) => (c, None),
        Command::ExportFeatures { common, out } => {
            for path in common.pipeline()?.export_features(out.as_deref())? {
                println!("{}", path.display());
            }
            return Ok(());
        }
    };
    let pipeline = common.pipeline()?;
    match stage {
        Some(Stage::Eval) => {
            pipeline.run_stage(Stage::Eval)?;
            let e = pipeline.read_eval()?;
            println!("{}", e.kec.to_json_line(common.precise));
            if let Some(z) = e.zero_shot {
                eprintln!("zero-shot {}", z.to_json_line(common.precise));
            }
        }
        Some(stage) => {
            let rec = pipeline.run_stage(stage)?;
            eprintln!(
                "{stage}: {:?} in {:.2}s ({} live / {} cached LLM calls)",
                rec.status, rec.seconds, rec.llm_live, rec.llm_cached
            );
        }
        None => {
            let outcome = pipeline.run_all()?;
            if let Some(r) = outcome.report {
                println!("{}", r.to_json_line(common.precise));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = format!("error: {e}");
            let mut src = e.source();
            while let Some(s) = src {
                let text = s.to_string();
                if !msg.contains(&text) {
                    msg.push_str(&format!("\n  caused by: {text}"));
                }
                src = s.source();
            }
            eprintln!("{msg}");
            ExitCode::FAILURE
        }
    }
}
