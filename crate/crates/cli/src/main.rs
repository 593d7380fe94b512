use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ctvae_core::experiment::{dimension_sweep, emit_report, make_synthetic_corpus, Catalog, CorpusSpec, ExperimentConfig};
use ctvae_core::metrics::mean_complement;
use ctvae_core::model::{load_model, save_model, train, TrainConfig};
use ctvae_core::sampler::{build_condition, generate, parse_overrides, summarize_values, SummarySpec};
use ctvae_core::schema::{ingest_table, load_schema, split_by_group, ColumnKind, ColumnSpec, Value};
use ctvae_core::Execution;

#[derive(Parser)]
#[command(name = "ctvae", version, about = "Conditional tabular VAE: fit, generate, evaluate, serve")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a corpus into train and test products.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        test_groups: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit transforms and train a model.
    Fit(FitArgs),
    /// Draw synthetic target rows under a base product plus overrides.
    Generate {
        #[arg(long)]
        model: PathBuf,
        /// Catalog product id, or a JSON object of condition values.
        #[arg(long)]
        base_product: String,
        /// Catalog CSV used to resolve a product id.
        #[arg(long)]
        catalog: Option<PathBuf>,
        /// `column=value`; repeatable.
        #[arg(long = "override")]
        overrides: Vec<String>,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate one column of a CSV as relative frequencies.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        column: String,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        /// Use this model's training range and vocabulary for the bins.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Column kinds from a schema file (otherwise from the model, or inferred).
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score synthetic rows against real rows.
    Evaluate {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        synth: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        /// Restrict the real rows to one product.
        #[arg(long)]
        product: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the holdout protocol over the configured presets.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a synthetic corpus with known conditional distributions.
    MakeCorpus {
        /// Spec JSON file, or `flip-oracle` for the built-in spec.
        #[arg(long)]
        spec: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the what-if HTTP API.
    Serve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        #[arg(long, default_value_t = ctvae_service::DEFAULT_MAX_N)]
        max_n: usize,
    },
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// Hidden-width preset: 64, 128, 256 or 512.
    #[arg(long, default_value_t = 256)]
    preset: usize,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 500)]
    batch_size: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.1)]
    validation_fraction: f64,
    #[arg(long, default_value_t = 10)]
    max_modes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train the unconditional baseline.
    #[arg(long)]
    unconditional: bool,
    /// Run single-threaded.
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    out: PathBuf,
    /// Also write the per-epoch training history as JSON.
    #[arg(long)]
    history: Option<PathBuf>,
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Reads the named columns of a CSV, in `columns` order; other columns are ignored.
fn read_columns(path: &Path, columns: &[ColumnSpec], filter: Option<(&str, &str)>) -> Result<Vec<Vec<Value>>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header = rdr.headers()?.clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("{} has no `{name}` column", path.display()))
    };
    let idx = columns.iter().map(|c| find(&c.name)).collect::<Result<Vec<_>>>()?;
    let filter = filter.map(|(col, val)| find(col).map(|i| (i, val))).transpose()?;
    let mut rows = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if let Some((i, val)) = filter {
            if rec.get(i) != Some(val) {
                continue;
            }
        }
        let row = columns
            .iter()
            .zip(&idx)
            .map(|(c, &i)| {
                let text = rec.get(i).unwrap_or("");
                Value::parse_as(c.kind, text)
                    .map_err(|m| anyhow::anyhow!("{} row {}: column `{}`: {m}", path.display(), r + 1, c.name))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn resolve_base(base: &str, catalog: Option<&Path>, schema: &ctvae_core::schema::Schema) -> Result<BTreeMap<String, Value>> {
    if base.trim_start().starts_with('{') {
        return serde_json::from_str(base).context("parsing --base-product JSON");
    }
    let path = catalog.context("--base-product names a catalog id; pass --catalog")?;
    let cat = Catalog::load_csv(path, schema)?;
    cat.get(base)
        .cloned()
        .with_context(|| format!("product `{base}` is not in {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Split {
            data,
            schema,
            test_groups,
            seed,
            out,
        } => {
            let schema = load_schema(&schema)?;
            let data = ingest_table(&data, &schema)?;
            let split = split_by_group(&data, test_groups, seed)?;
            std::fs::create_dir_all(&out)?;
            split.train.save_csv(out.join("train.csv"))?;
            split.test.save_csv(out.join("test.csv"))?;
            write_json(
                &out.join("split.json"),
                &serde_json::json!({
                    "seed": seed,
                    "test_groups": split.test_groups(),
                    "train_rows": split.train.len(),
                    "test_rows": split.test.len(),
                }),
            )?;
            println!(
                "train: {} rows, test: {} rows ({} products)",
                split.train.len(),
                split.test.len(),
                split.test_groups().len()
            );
        }
        Command::Fit(a) => {
            let schema = load_schema(&a.schema)?;
            let data = ingest_table(&a.data, &schema)?;
            let cfg = TrainConfig {
                batch_size: a.batch_size,
                max_epochs: a.epochs,
                patience: a.patience,
                learning_rate: a.learning_rate,
                seed: a.seed,
                preset: a.preset,
                custom_arch: None,
                validation_fraction: a.validation_fraction,
                conditioning: !a.unconditional,
                max_modes: a.max_modes,
                execution: if a.sequential { Execution::Sequential } else { Execution::Parallel },
            };
            let (model, history) = train(&data, &cfg)?;
            save_model(&model, &a.out)?;
            if let Some(h) = &a.history {
                write_json(h, &history)?;
            }
            println!(
                "model {} ({} epochs, best epoch {}, validation loss {:.4})",
                model.fingerprint(),
                history.epochs.len(),
                history.best_epoch,
                history.best_validation_loss
            );
        }
        Command::Generate {
            model,
            base_product,
            catalog,
            overrides,
            n,
            seed,
            out,
        } => {
            let model = load_model(&model)?;
            let base = resolve_base(&base_product, catalog.as_deref(), model.bundle().schema())?;
            let (cond, _) = build_condition(model.bundle(), &base, &parse_overrides(&overrides)?)?;
            let batch = generate(&model, &cond, n, seed, Execution::default())?;
            batch.save_csv(&out)?;
            println!("{} rows written to {}", batch.len(), out.display());
        }
        Command::Summarize {
            input,
            column,
            bins,
            model,
            schema,
            out,
        } => {
            let model = model.map(|m| load_model(&m)).transpose()?;
            let schema = schema.map(|s| load_schema(&s)).transpose()?;
            let known = schema
                .as_ref()
                .or(model.as_ref().map(|m| m.bundle().schema()))
                .map(|s| s.column(&column).map(|c| c.kind).with_context(|| format!("unknown column `{column}`")))
                .transpose()?;
            let kind = match known {
                Some(k) => k,
                None => {
                    // All-numeric columns are treated as continuous.
                    let probe = read_columns(&input, &[ColumnSpec::new(&column, ColumnKind::Discrete, ctvae_core::schema::ColumnRole::Target)], None)?;
                    if probe.iter().all(|r| r[0].to_string().parse::<f64>().is_ok()) {
                        ColumnKind::Continuous
                    } else {
                        ColumnKind::Discrete
                    }
                }
            };
            let spec_col = ColumnSpec::new(&column, kind, ctvae_core::schema::ColumnRole::Target);
            let values: Vec<Value> = read_columns(&input, &[spec_col], None)?.into_iter().map(|mut r| r.remove(0)).collect();
            let spec = match &model {
                Some(m) => SummarySpec::for_column(m.bundle(), &column, bins)?,
                None => SummarySpec {
                    bins,
                    ..Default::default()
                },
            };
            let summary = summarize_values(&column, kind, &values, &spec)?;
            write_json(&out, &summary)?;
            for (l, f) in summary.labels.iter().zip(&summary.frequencies) {
                println!("{l}\t{f:.4}");
            }
        }
        Command::Evaluate {
            real,
            synth,
            schema,
            product,
            out,
        } => {
            let schema = load_schema(&schema)?;
            let targets: Vec<ColumnSpec> = schema.targets().map(|(_, c)| c.clone()).collect();
            let filter = product.as_deref().map(|p| (schema.group_key.as_str(), p));
            let real_rows = read_columns(&real, &targets, filter)?;
            let synth_rows = read_columns(&synth, &targets, None)?;
            if real_rows.is_empty() {
                bail!("no real rows selected");
            }
            let score = mean_complement(product.as_deref().unwrap_or("all"), &targets, &real_rows, &synth_rows)?;
            write_json(&out, &score)?;
            for c in &score.columns {
                println!("{}\t{:.4}", c.column, c.score);
            }
            println!("MC\t{:.4}", score.mc);
        }
        Command::Sweep { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let presets = cfg.presets.clone();
            let (report, table) = dimension_sweep(&cfg, &presets)?;
            emit_report(&report, &cfg.output_dir)?;
            println!("preset\taverage_mc\tweighted_average_mc");
            for r in table {
                println!("{}\t{:.4}\t{:.4}", r.preset, r.average_mc, r.weighted_average_mc);
            }
            println!("report written to {}", cfg.output_dir.display());
        }
        Command::MakeCorpus { spec, seed, out } => {
            let spec = if spec == "flip-oracle" {
                CorpusSpec::flip_oracle(30, (150, 250))
            } else {
                let text = std::fs::read_to_string(&spec).with_context(|| format!("reading {spec}"))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {spec}"))?
            };
            let corpus = make_synthetic_corpus(&spec, seed)?;
            corpus.save(&out)?;
            println!(
                "{} rows, {} products written to {}",
                corpus.data.len(),
                corpus.catalog.products().len(),
                out.display()
            );
        }
        Command::Serve {
            model,
            catalog,
            bind,
            max_n,
        } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                // Load before binding so a bad model never takes the port.
                let state = std::sync::Arc::new(ctvae_service::AppState::load(&model, catalog.as_deref(), max_n)?);
                let listener = ctvae_service::bind(&bind).await?;
                eprintln!("serving model {} on {}", state.model_id(), listener.local_addr()?);
                ctvae_service::serve(listener, state).await?;
                anyhow::Ok(())
            })?;
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
