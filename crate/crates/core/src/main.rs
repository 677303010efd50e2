use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use coba::decode::{DecodeConfig, LookaheadConfig};
use coba::harness::{
    self, fixture_gen, parse_methods, run_corpus, run_profile, run_sweep, FixtureKind, HarnessError,
    LmSpec, RunConfig, SweepParam, Thresholds,
};
use coba::lm::server::FixtureServer;
use coba::lm::RemoteOptions;
use coba::Error;

#[derive(Parser)]
#[command(name = "coba", version, about = "Hallucination-aware backtracking decoding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode a corpus with one or more methods and write metrics.csv.
    Run {
        /// JSON-lines corpus.
        corpus: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Write one JSON decode trace per document and method.
        #[arg(long)]
        traces: bool,
    },
    /// Average probability and context distance around annotated spans.
    Profile {
        corpus: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Offsets -window..=window around each span start.
        #[arg(long, default_value_t = 5)]
        window: usize,
    },
    /// Rerun a corpus across detector thresholds and write sweep.csv.
    Sweep {
        corpus: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Threshold to vary: delta or phi.
        #[arg(long, default_value = "delta")]
        param: SweepParam,
        /// Comma-separated threshold values.
        #[arg(long, value_delimiter = ',', default_value = "0,0.05,0.1,0.15,0.2,0.25,0.3")]
        values: Vec<f64>,
    },
    /// Write a bundled corpus and model file.
    FixtureGen {
        /// synthetic, profile, fig1 or table3.
        #[arg(long, default_value = "synthetic")]
        kind: FixtureKind,
        #[arg(long, default_value = "fixtures")]
        out: PathBuf,
        /// Number of documents (or spans for `profile`).
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Serve a local model over the HTTP protocol.
    Serve {
        #[arg(long)]
        lm: String,
        #[arg(long, default_value = "127.0.0.1:8700")]
        addr: String,
        #[arg(long, default_value_t = 4)]
        threads: usize,
    },
}

#[derive(Args)]
struct Common {
    /// table:PATH, ngram:SPEC, ngram:PATH.json or remote:URL. Defaults to remote:$COBA_LM_URL.
    #[arg(long)]
    lm: Option<String>,
    /// Comma-separated methods, e.g. greedy,coba,coba-d+cad, or `all`.
    #[arg(long, default_value = "greedy")]
    method: String,
    /// Threshold profile: flan-t5 or llama.
    #[arg(long, default_value = "flan-t5")]
    thresholds: String,
    /// Probability threshold; overrides the profile.
    #[arg(long)]
    delta: Option<f64>,
    /// Embedding distance threshold; overrides the profile.
    #[arg(long)]
    phi: Option<f64>,
    #[arg(long, default_value_t = 0.9)]
    top_p: f64,
    /// CAD strength.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 2)]
    min_len: usize,
    #[arg(long, default_value_t = 200)]
    max_len: usize,
    /// Step budget as a multiple of max-len.
    #[arg(long, default_value_t = 10)]
    budget_mult: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rolled-out candidates per lookahead slot.
    #[arg(long, default_value_t = 5)]
    lookahead_k: usize,
    /// Lookahead every this many slots.
    #[arg(long, default_value_t = 1)]
    lookahead_interval: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long)]
    prepend_reference: bool,
    /// Remote request timeout in seconds.
    #[arg(long, default_value_t = 30)]
    timeout: u64,
}

impl Common {
    fn resolve(&self) -> Result<(LmSpec, RemoteOptions, RunConfig), HarnessError> {
        let lm = LmSpec::from_arg_or_env(self.lm.as_deref()).map_err(HarnessError::input)?;
        let mut thresholds = Thresholds::named(&self.thresholds).map_err(HarnessError::input)?;
        thresholds.delta = self.delta.unwrap_or(thresholds.delta);
        thresholds.phi = self.phi.unwrap_or(thresholds.phi);
        let mut cfg = RunConfig::new(parse_methods(&self.method).map_err(HarnessError::input)?, &self.out);
        cfg.decode = DecodeConfig {
            top_p: self.top_p,
            min_len: self.min_len,
            max_len: self.max_len,
            budget_multiplier: self.budget_mult,
            seed: self.seed,
            ..DecodeConfig::default()
        };
        cfg.thresholds = thresholds;
        cfg.alpha = self.alpha;
        cfg.lookahead = LookaheadConfig {
            k: self.lookahead_k,
            interval: self.lookahead_interval,
            ..LookaheadConfig::default()
        };
        cfg.jobs = self.jobs;
        cfg.prepend_reference = self.prepend_reference;
        cfg.validate().map_err(HarnessError::input)?;
        let remote = RemoteOptions {
            timeout: Duration::from_secs(self.timeout),
            ..RemoteOptions::default()
        };
        Ok((lm, remote, cfg))
    }
}

fn execute(cli: Cli) -> Result<i32, HarnessError> {
    match cli.command {
        Command::Run { corpus, common, traces } => {
            let (lm, remote, mut cfg) = common.resolve()?;
            cfg.write_traces = traces;
            let outcome = run_corpus(&corpus, &lm, &remote, &cfg)?;
            for s in &outcome.results.report.summaries {
                eprintln!(
                    "{:<20} docs={} halluc={} ground={} rougeL={} fallback={:.3}",
                    s.method,
                    s.docs,
                    fmt(s.hallucination_rate),
                    fmt(s.grounding_precision),
                    fmt(s.rouge_l_f1),
                    s.fallback_rate
                );
            }
            if !outcome.results.errors.is_empty() {
                eprintln!("{} rows failed; see errors.csv", outcome.results.errors.len());
            }
            Ok(outcome.exit_code)
        }
        Command::Profile { corpus, common, window } => {
            let (lm, remote, cfg) = common.resolve()?;
            let stats = run_profile(&corpus, &lm, &remote, &cfg, window)?;
            for s in stats {
                eprintln!("{:+3} prob={:.4} dist={:.4} n={}", s.offset, s.mean_prob, s.mean_dist, s.n);
            }
            Ok(harness::EXIT_OK)
        }
        Command::Sweep { corpus, common, param, values } => {
            let (lm, remote, cfg) = common.resolve()?;
            for r in run_sweep(&corpus, &lm, &remote, &cfg, param, &values)? {
                eprintln!("{:<20} {:.3} halluc={}", r.method, r.value, fmt(r.hallucination_rate));
            }
            Ok(harness::EXIT_OK)
        }
        Command::FixtureGen { kind, out, count, seed } => {
            let files = fixture_gen(kind, &out, count, seed).map_err(HarnessError::failed)?;
            println!("corpus: {}", files.corpus.display());
            println!("lm: {}", files.lm_arg);
            Ok(harness::EXIT_OK)
        }
        Command::Serve { lm, addr, threads } => {
            let spec = LmSpec::parse(&lm).map_err(HarnessError::input)?;
            if matches!(spec, LmSpec::Remote(_)) {
                return Err(HarnessError::input(Error::contract("serve needs a local model")));
            }
            let model = harness::open_lm(&spec, &RemoteOptions::default())?;
            let server = FixtureServer::start(model, &addr, threads).map_err(HarnessError::failed)?;
            println!("listening on {}", server.url());
            server.join();
            Ok(harness::EXIT_OK)
        }
    }
}

fn fmt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
