//! The `chemgraph` command-line tool.
//!
//! Exit codes: `0` success, `1` runtime failure (I/O, numerics, failed
//! benchmark assertion), `2` parse error, `3` validation failure, `4`
//! configuration or schema mismatch.

pub mod config;
pub mod model;

use std::io::Write;
use std::path::{Path, PathBuf};

use chemgraph::bench::{self, BenchConfig, SyntheticConfig, TargetKind};
use chemgraph::featurize::{fingerprint, graph_statistics, SubgraphPattern};
use chemgraph::fixtures;
use chemgraph::graph::validate;
use chemgraph::io::{build_graph, BuildOptions, Builder, GraphFile};
use chemgraph::{Aggregator, Error, Result};
use clap::{Parser, Subcommand, ValueEnum};

use crate::config::{load_graph, load_samples, RunConfig};
use crate::model::{fit, score, Checkpoint, Scores};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_PARSE: u8 = 2;
pub const EXIT_INVALID: u8 = 3;
pub const EXIT_CONFIG: u8 = 4;

/// Maps a library error to the process exit code.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse { .. } => EXIT_PARSE,
        Error::Invalid(_) | Error::Encoding { .. } | Error::UnknownColumn(_) => EXIT_INVALID,
        Error::Schema(_) | Error::Config(_) | Error::Usage(_) | Error::Shape { .. } | Error::DataLength { .. } => EXIT_CONFIG,
        Error::Io(_)
        | Error::NonFinite(_)
        | Error::Numerical(_)
        | Error::EmptyAggregation
        | Error::UndefinedMetric(_) => EXIT_FAILURE,
    }
}

#[derive(Debug, Parser)]
#[command(name = "chemgraph", version, about = "Graph tensors and graph neural networks for chemical systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build graph tensors from a JSON graph file and validate them.
    Build {
        input: PathBuf,
        #[arg(long, default_value = "schema")]
        builder: Builder,
        /// Molecule: expand implicit hydrogens into nodes.
        #[arg(long)]
        explicit_h: bool,
        /// Protein: include hydrogen-bond edges.
        #[arg(long)]
        hbonds: bool,
        /// Reaction: add a reverse edge for every reversible reaction.
        #[arg(long)]
        reversible: bool,
        /// Write the graph tensor as JSON.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Check every shipped fixture against its published dimensions.
    VerifyFixtures {
        /// Read fixture files from this directory instead of the embedded copies.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Print hand-crafted features of one graph as `feature,value` CSV.
    Featurize {
        input: PathBuf,
        #[arg(long, default_value = "schema")]
        builder: Builder,
        /// Node columns to summarise; defaults to all of them.
        #[arg(long, value_delimiter = ',')]
        columns: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "sum,mean,max,min")]
        aggregators: Vec<Aggregator>,
        /// Width of the substructure fingerprint (0 disables it).
        #[arg(long, default_value_t = 16)]
        fingerprint: usize,
    },
    /// Write a seeded synthetic molecular dataset with a train/test split.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        graphs: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, value_enum, default_value = "connectivity")]
        target: SynthTarget,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
    },
    /// Train a model from a JSON run config; writes checkpoint.json and metrics.csv.
    Train {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict with a checkpoint; writes `graph_path,row,prediction…` CSV.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(required = true)]
        graphs: Vec<PathBuf>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare linreg, GP, MLP and GNN on the synthetic connectivity dataset.
    Bench {
        /// JSON benchmark config; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write the table as `model,mse,r2` CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SynthTarget {
    /// Ring count plus mean degree: needs the graph structure.
    Connectivity,
    /// Exactly linear in the global features.
    Linear,
}

/// Runs one command, writing its report to `out`. Returns the exit code for
/// outcomes that are reports rather than errors (failed checks).
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<u8> {
    match cli.command {
        Command::Build {
            input,
            builder,
            explicit_h,
            hbonds,
            reversible,
            dump,
        } => cmd_build(
            &input,
            builder,
            BuildOptions {
                explicit_hydrogens: explicit_h,
                hydrogen_bonds: hbonds,
                reversible_as_two_edges: reversible,
            },
            dump.as_deref(),
            out,
        ),
        Command::VerifyFixtures { dir } => cmd_verify_fixtures(dir.as_deref(), out),
        Command::Featurize {
            input,
            builder,
            columns,
            aggregators,
            fingerprint,
        } => cmd_featurize(&input, builder, &columns, &aggregators, fingerprint, out),
        Command::Synth {
            out: dir,
            graphs,
            seed,
            target,
            noise,
            train_fraction,
        } => {
            let cfg = SyntheticConfig {
                num_graphs: graphs,
                seed,
                noise,
                target: match target {
                    SynthTarget::Connectivity => TargetKind::Connectivity,
                    SynthTarget::Linear => TargetKind::LinearInGlobals,
                },
                ..SyntheticConfig::default()
            };
            cmd_synth(&dir, &cfg, train_fraction, out)
        }
        Command::Train { config, out: dir } => cmd_train(&config, &dir, out),
        Command::Predict { checkpoint, graphs, out: dest } => cmd_predict(&checkpoint, &graphs, dest.as_deref(), out),
        Command::Bench { config, csv } => cmd_bench(config.as_deref(), csv.as_deref(), out),
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn report(out: &mut dyn Write, line: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::Io(e.to_string()))
}

fn validation_failed(out: &mut dyn Write, problems: Vec<String>) -> Result<u8> {
    report(out, "validation: failed")?;
    for p in problems {
        report(out, format!("  {p}"))?;
    }
    Ok(EXIT_INVALID)
}

/// Parses, builds and validates one graph file and prints its shapes.
pub fn cmd_build(input: &Path, builder: Builder, opts: BuildOptions, dump: Option<&Path>, out: &mut dyn Write) -> Result<u8> {
    report(out, format!("builder: {}", builder.name()))?;
    let g = match GraphFile::read(input).and_then(|file| build_graph(&file, builder, opts)) {
        Ok(g) => g,
        Err(Error::Invalid(problems)) => return validation_failed(out, problems),
        Err(e) => return Err(e),
    };
    report(out, format!("N: {}", g.num_nodes()))?;
    report(out, format!("M: {}", g.num_edges()))?;
    report(out, g.shape_summary())?;
    if let Some(path) = dump {
        let mut text = serde_json::to_string_pretty(&g).map_err(|e| Error::Io(e.to_string()))?;
        text.push('\n');
        write_file(path, &text)?;
    }
    match validate(&g) {
        Ok(()) => {
            report(out, "validation: ok")?;
            Ok(EXIT_OK)
        }
        Err(problems) => validation_failed(out, problems),
    }
}

pub fn cmd_verify_fixtures(dir: Option<&Path>, out: &mut dyn Write) -> Result<u8> {
    let checks = fixtures::verify(dir)?;
    let failed = checks.iter().filter(|c| !c.passed()).count();
    for c in &checks {
        report(out, c)?;
    }
    report(out, format!("{} checks, {} failed", checks.len(), failed))?;
    Ok(if failed == 0 { EXIT_OK } else { EXIT_INVALID })
}

/// Substructure patterns of the default fingerprint.
pub fn default_patterns() -> Result<Vec<SubgraphPattern>> {
    Ok(vec![
        SubgraphPattern::path(2)?,
        SubgraphPattern::path(3)?,
        SubgraphPattern::path(4)?,
        SubgraphPattern::cycle(3)?,
        SubgraphPattern::cycle(4)?,
        SubgraphPattern::cycle(5)?,
        SubgraphPattern::cycle(6)?,
    ])
}

pub fn cmd_featurize(
    input: &Path,
    builder: Builder,
    columns: &[String],
    aggs: &[Aggregator],
    fp_size: usize,
    out: &mut dyn Write,
) -> Result<u8> {
    let g = load_graph(input, builder, BuildOptions::default())?;
    let cols: Vec<&str> = if columns.is_empty() {
        g.node_columns.iter().map(String::as_str).collect()
    } else {
        columns.iter().map(String::as_str).collect()
    };
    let mut feats = vec![graph_statistics(&g, &cols, aggs)?];
    if fp_size > 0 {
        feats.push(fingerprint(&g, &default_patterns()?, fp_size)?);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["feature", "value"]).map_err(csv_io)?;
    for f in &feats {
        for (i, name) in f.names.iter().enumerate() {
            w.write_record([name.clone(), f.values.get(0, i).to_string()]).map_err(csv_io)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    out.write_all(&bytes).map_err(|e| Error::Io(e.to_string()))?;
    Ok(EXIT_OK)
}

/// Writes `graphs/gNNN.json`, `train.csv`, `test.csv` and a GraphNets
/// `config.json` matching the benchmark architecture.
pub fn cmd_synth(dir: &Path, cfg: &SyntheticConfig, train_fraction: f64, out: &mut dyn Write) -> Result<u8> {
    if !(0.0..1.0).contains(&train_fraction) || train_fraction == 0.0 {
        return Err(Error::Config(format!("train fraction {train_fraction} must lie in (0, 1)")));
    }
    let data = bench::synthetic_dataset(cfg)?;
    let graphs = dir.join("graphs");
    std::fs::create_dir_all(&graphs).map_err(|e| io_err(&graphs, e))?;
    let width = data.len().to_string().len().max(3);
    let mut names = Vec::with_capacity(data.len());
    for (i, (g, _)) in data.items.iter().enumerate() {
        let name = format!("graphs/g{i:0width$}.json");
        write_file(&dir.join(&name), &GraphFile::from_tensor(g)?.dump())?;
        names.push(name);
    }
    let (train, test) = bench::train_test_split(data.len(), train_fraction, cfg.seed);
    for (file, idx) in [("train.csv", &train), ("test.csv", &test)] {
        let path = dir.join(file);
        let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
        w.write_record(["graph_path", "target"]).map_err(|e| io_err(&path, e))?;
        for &i in idx.iter() {
            w.write_record([names[i].clone(), data.items[i].1.get(0, 0).to_string()])
                .map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
    }
    let b = BenchConfig::default();
    let run = RunConfig {
        model: config::ModelKind::Graphnets,
        task: b.gnn.task,
        seed: b.gnn_train.seed,
        epochs: Some(b.gnn_train.epochs),
        lr: Some(b.gnn_train.lr),
        batch_size: b.gnn_train.batch_size,
        latent: b.gnn.latent,
        num_layers: b.gnn.num_layers,
        hidden: b.gnn.hidden.clone(),
        head_hidden: b.gnn.head_hidden.clone(),
        activation: b.gnn.activation,
        aggregator: b.gnn.aggregator,
        use_globals: b.gnn.use_globals,
        kernel: b.gp_kernel,
        builder: Builder::Schema,
        build_options: BuildOptions::default(),
        train: "train.csv".into(),
        test: Some("test.csv".into()),
        target_column: None,
    };
    let mut text = serde_json::to_string_pretty(&run).map_err(|e| Error::Io(e.to_string()))?;
    text.push('\n');
    write_file(&dir.join("config.json"), &text)?;
    report(
        out,
        format!("wrote {} graphs ({} train, {} test) to {}", data.len(), train.len(), test.len(), dir.display()),
    )?;
    Ok(EXIT_OK)
}

fn fmt_r2(s: &Scores) -> String {
    s.r2.map_or_else(|| "nan".to_string(), |r| r.to_string())
}

/// Trains the configured model and writes `checkpoint.json` and
/// `metrics.csv` (`epoch,loss` rows, then `final_*` rows) into `dir`.
pub fn cmd_train(config_path: &Path, dir: &Path, out: &mut dyn Write) -> Result<u8> {
    let cfg = RunConfig::load(config_path)?;
    let train = load_samples(&cfg.train, &cfg)?;
    let test = cfg.test.as_ref().map(|p| load_samples(p, &cfg)).transpose()?;
    let (ckpt, history) = fit(&cfg, &train)?;
    let train_scores = score(&ckpt, &train)?;
    let test_scores = test.as_ref().map(|t| score(&ckpt, t)).transpose()?;

    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_file(&dir.join("checkpoint.json"), &ckpt.to_json())?;
    let metrics = dir.join("metrics.csv");
    let mut w = csv::Writer::from_path(&metrics).map_err(|e| io_err(&metrics, e))?;
    let mut rows = vec![["epoch".to_string(), "loss".to_string()]];
    rows.extend(history.iter().enumerate().map(|(i, l)| [(i + 1).to_string(), l.to_string()]));
    rows.push(["final_train_mse".into(), train_scores.mse.to_string()]);
    rows.push(["final_train_r2".into(), fmt_r2(&train_scores)]);
    if let Some(s) = &test_scores {
        rows.push(["final_test_mse".into(), s.mse.to_string()]);
        rows.push(["final_test_r2".into(), fmt_r2(s)]);
    }
    for r in rows {
        w.write_record(&r).map_err(|e| io_err(&metrics, e))?;
    }
    w.flush().map_err(|e| io_err(&metrics, e))?;

    report(
        out,
        format!(
            "trained {:?} ({} parameters) on {} graphs, seed {}",
            cfg.model,
            model::parameter_count(&ckpt.model),
            train.len(),
            cfg.seed
        ),
    )?;
    report(out, format!("train mse {} r2 {}", train_scores.mse, fmt_r2(&train_scores)))?;
    if let Some(s) = &test_scores {
        report(out, format!("test mse {} r2 {}", s.mse, fmt_r2(s)))?;
    }
    Ok(EXIT_OK)
}

pub fn cmd_predict(checkpoint: &Path, graphs: &[PathBuf], dest: Option<&Path>, out: &mut dyn Write) -> Result<u8> {
    let ckpt = Checkpoint::read(checkpoint)?;
    let mut records: Vec<Vec<String>> = Vec::new();
    let mut width = None;
    for path in graphs {
        let mut g = load_graph(path, ckpt.builder, ckpt.build_options)?;
        if let Some(col) = &ckpt.target_column {
            config::split_target_column(&mut g, ckpt.task, col)?;
        }
        let pred = ckpt.predict(&g)?;
        width.get_or_insert(pred.cols());
        for r in 0..pred.rows() {
            let mut rec = vec![path.display().to_string(), r.to_string()];
            rec.extend(pred.row_slice(r).iter().map(f64::to_string));
            records.push(rec);
        }
    }
    let width = width.unwrap_or(1);
    let mut header = vec!["graph_path".to_string(), "row".to_string()];
    if width == 1 {
        header.push("prediction".into());
    } else {
        header.extend((0..width).map(|j| format!("prediction_{j}")));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(&header).map_err(csv_io)?;
    for r in &records {
        w.write_record(r).map_err(csv_io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    match dest {
        Some(p) => std::fs::write(p, &bytes).map_err(|e| io_err(p, e))?,
        None => out.write_all(&bytes).map_err(|e| Error::Io(e.to_string()))?,
    }
    Ok(EXIT_OK)
}

/// Runs the benchmark and the linear-target sanity inversion. Fails unless
/// the GNN beats the MLP and linreg recovers the linear target.
pub fn cmd_bench(config: Option<&Path>, csv_path: Option<&Path>, out: &mut dyn Write) -> Result<u8> {
    let mut cfg = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            serde_json::from_str(&text).map_err(|e| config::json_error(e, Error::Config))?
        }
        None => BenchConfig::default(),
    };
    if let Some(seed) = config::env_seed()? {
        cfg.gnn_train.seed = seed;
        cfg.mlp_train.seed = seed;
    }
    let r = bench::run_bench(&cfg)?;
    report(out, format!("train {} / test {} graphs", r.train_size, r.test_size))?;
    write!(out, "{}", r.table()).map_err(|e| Error::Io(e.to_string()))?;
    let inversion = bench::inversion_check(&cfg.data, cfg.train_fraction, cfg.split_seed)?;
    report(out, format!("linear-target inversion: linreg r2 {inversion:.6}"))?;
    if let Some(p) = csv_path {
        let mut w = csv::Writer::from_path(p).map_err(|e| io_err(p, e))?;
        w.write_record(["model", "mse", "r2"]).map_err(|e| io_err(p, e))?;
        for row in &r.rows {
            w.write_record([row.model.clone(), row.mse.to_string(), row.r2.to_string()])
                .map_err(|e| io_err(p, e))?;
        }
        w.flush().map_err(|e| io_err(p, e))?;
    }
    let mut ok = true;
    if !r.gnn_beats_mlp() {
        report(out, "FAIL gnn does not beat mlp on test mse and r2")?;
        ok = false;
    }
    if inversion < 0.99 {
        report(out, "FAIL linear-target inversion r2 below 0.99")?;
        ok = false;
    }
    if ok {
        report(out, "PASS gnn beats mlp; inversion r2 >= 0.99")?;
    }
    Ok(if ok { EXIT_OK } else { EXIT_FAILURE })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_contract() {
        let parse = Error::Parse {
            msg: "x".into(),
            line: 1,
            column: 1,
        };
        assert_eq!(exit_code(&parse), EXIT_PARSE);
        assert_eq!(exit_code(&Error::Invalid(vec![])), EXIT_INVALID);
        assert_eq!(exit_code(&Error::Schema("w".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::Config("c".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::Io("missing".into())), EXIT_FAILURE);
    }

    #[test]
    fn build_reports_shapes() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/methane.json");
        let mut out = Vec::new();
        let code = cmd_build(&dir, Builder::Molecule, BuildOptions::default(), None, &mut out).unwrap();
        assert_eq!(code, EXIT_OK);
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            "builder: molecule\nN: 5\nM: 4\nX: 5x3, E: 4x2, A: 5x5, U: 1x1\nvalidation: ok\n"
        );
    }

    #[test]
    fn default_fingerprint_patterns_are_distinct() {
        let pats = default_patterns().unwrap();
        let forms: std::collections::BTreeSet<String> = pats.iter().map(|p| p.canonical_form()).collect();
        assert_eq!(forms.len(), pats.len());
    }
}
