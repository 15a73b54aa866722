use std::path::PathBuf;
use std::process::ExitCode;

use adjoint_shard::harness::{parse_switch, run, LossKind, Mode, RunConfig};
use adjoint_shard::ssm::KeyValues;
use adjoint_shard::Result;
use clap::Parser;

/// Adjoint-sharded training, gradient checks, distributed simulation and
/// cost reports. Precedence: built-in defaults, then `--config`, then flags.
#[derive(Debug, Parser)]
#[command(name = "adjshard", version)]
struct Cli {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[arg(long = "T")]
    t: Option<usize>,
    /// Truncation window; omit for the exact gradient.
    #[arg(long = "Tbar")]
    tbar: Option<usize>,
    #[arg(long = "K")]
    k: Option<usize>,
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long = "P")]
    p: Option<usize>,
    #[arg(long = "V")]
    v: Option<usize>,
    #[arg(long)]
    upsilon: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, value_parser = parse_loss)]
    loss: Option<LossKind>,
    /// `on` for bitwise-reproducible reductions.
    #[arg(long, value_parser = parse_on_off)]
    deterministic: Option<bool>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse().map_err(|e: adjoint_shard::Error| e.to_string())
}

fn parse_loss(s: &str) -> std::result::Result<LossKind, String> {
    s.parse().map_err(|e: adjoint_shard::Error| e.to_string())
}

fn parse_on_off(s: &str) -> std::result::Result<bool, String> {
    parse_switch(s).map_err(|e| e.to_string())
}

impl Cli {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg = cfg.apply(&KeyValues::load(path)?)?;
        }
        let d = &mut cfg.model.dims;
        for (slot, flag) in [(&mut d.t, self.t), (&mut d.k, self.k), (&mut d.n, self.n), (&mut d.p, self.p), (&mut d.v, self.v)] {
            if let Some(x) = flag {
                *slot = x;
            }
        }
        if let Some(x) = self.tbar {
            cfg.tbar = Some(x);
        }
        if let Some(x) = self.seed {
            cfg.model.seed = x;
        }
        cfg.upsilon = self.upsilon.unwrap_or(cfg.upsilon);
        cfg.workers = self.workers.unwrap_or(cfg.workers);
        cfg.lr = self.lr.unwrap_or(cfg.lr);
        cfg.steps = self.steps.unwrap_or(cfg.steps);
        cfg.loss = self.loss.unwrap_or(cfg.loss);
        cfg.mode = self.mode.unwrap_or(cfg.mode);
        cfg.deterministic = self.deterministic.unwrap_or(cfg.deterministic);
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(cli: &Cli) -> Result<bool> {
    let cfg = cli.resolve()?;
    let report = run(&cfg)?;
    print!("{}", report.text);
    std::fs::create_dir_all(&cfg.out)?;
    std::fs::write(cfg.out.join(format!("{}_report.txt", cfg.mode)), &report.text)?;
    for (name, contents) in &report.files {
        std::fs::write(cfg.out.join(name), contents)?;
    }
    Ok(report.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
