//! Command-line surface of the scheduling engine.
//!
//! Subcommands: `serve`, `schedule`, `ingest`, `publish`, `learn-weights`,
//! `evaluate`, `simulate`. Errors exit nonzero with one machine-parseable
//! JSON object on stderr: `{"error": "<code>", "message": "..."}`.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use besttime::assembler::{learn_weights, read_training_csv, LearnerConfig};
use besttime::config::DeploymentConfig;
use besttime::error::Error;
use besttime::evaluation::{cohort_report, ndcg_report, render_table, CohortRow, NdcgReport};
use besttime::policy::SchedulingRequest;
use besttime::service::{handle_batch, serve_lines, serve_socket, ServiceState};
use besttime::signals::{ingest_events_csv, write_counters_csv};
use besttime::sim::{run_experiment, ExperimentConfig};
use besttime::store::SignalStore;
use besttime::temporal::{read_maps_csv, MetricId, UseCaseId, UserId};

#[derive(Parser)]
#[command(
    name = "besttime",
    version,
    about = "Execution-time optimization for scheduled jobs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ServiceArgs {
    /// Deployment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Store directory; overrides BESTTIME_STORE and the config default.
    #[arg(long)]
    store: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Serve scheduling requests as JSON lines on stdin/stdout, or on a Unix
    /// socket with --socket.
    Serve {
        #[command(flatten)]
        service: ServiceArgs,
        /// Unix domain socket path (default: stdin/stdout).
        #[arg(long)]
        socket: Option<PathBuf>,
        /// Batch seed mixed into every request's jitter stream.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Schedule a batch file of JSON-line requests into JSON-line plans.
    Schedule {
        #[command(flatten)]
        service: ServiceArgs,
        /// Input requests, one JSON object per line ("-" for stdin).
        #[arg(long = "in")]
        input: PathBuf,
        /// Output plans ("-" for stdout).
        #[arg(long = "out")]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fold an activity-event CSV (user,channel,event_time,utc_offset) into
    /// weekly counter snapshots (user,channel,dow,hour,count).
    Ingest {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
        /// Optional multiplicative decay applied to the folded counters.
        #[arg(long)]
        decay: Option<f64>,
    },
    /// Publish an activity-map CSV (user,metric,slot_index,score) into one
    /// day partition of the store.
    Publish {
        /// Store directory; falls back to BESTTIME_STORE.
        #[arg(long)]
        store: Option<PathBuf>,
        /// Day of week (0 = Sunday .. 6 = Saturday).
        #[arg(long)]
        day: usize,
        /// Maps CSV file.
        #[arg(long)]
        maps: PathBuf,
    },
    /// Learn assembler weights from a training CSV
    /// (user,slot,actual_rank,metric,metric_rank,activity_level).
    LearnWeights {
        #[arg(long = "in")]
        input: PathBuf,
        /// Use case the learned spec belongs to.
        #[arg(long = "use-case", default_value = "default")]
        use_case: String,
        /// Write the learned spec as TOML here (default: stdout summary only).
        #[arg(long = "out")]
        output: Option<PathBuf>,
        /// Ridge strength for the singular-system fallback.
        #[arg(long, default_value_t = 1e-6)]
        ridge: f64,
    },
    /// Score predicted maps (user,metric,slot_index,score) against actual
    /// activity (user,slot,gain): per-user NDCG plus optional cohorts.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        actuals: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Optional activity CSV (user,metric,level) for a decile cohort
        /// breakdown of NDCG over these metrics (one or two).
        #[arg(long)]
        cohort: Option<PathBuf>,
        #[arg(long = "cohort-metrics", value_delimiter = ',')]
        cohort_metrics: Vec<String>,
        /// Write per-user rows as CSV here in addition to the table.
        #[arg(long = "out-csv")]
        out_csv: Option<PathBuf>,
    },
    /// Run a simulation experiment from a declarative config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's worker count.
        #[arg(long)]
        workers: Option<usize>,
        /// Write the result table as CSV here as well.
        #[arg(long = "out-csv")]
        out_csv: Option<PathBuf>,
        /// For the assembly experiment: write the 2-D cohort grid CSV here.
        #[arg(long = "out-cohort-csv")]
        out_cohort_csv: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        let line = serde_json::json!({
            "error": err.code(),
            "message": err.to_string(),
        });
        eprintln!("{line}");
        std::process::exit(1);
    }
}

fn open_input(path: &PathBuf) -> Result<Box<dyn Read>, Error> {
    if path.as_os_str() == "-" {
        Ok(Box::new(std::io::stdin()))
    } else {
        Ok(Box::new(std::fs::File::open(path)?))
    }
}

fn open_output(path: &PathBuf) -> Result<Box<dyn Write>, Error> {
    if path.as_os_str() == "-" {
        Ok(Box::new(std::io::stdout()))
    } else {
        Ok(Box::new(std::fs::File::create(path)?))
    }
}

fn load_service(args: &ServiceArgs) -> Result<ServiceState, Error> {
    let config = DeploymentConfig::load(&args.config)?;
    let dir = SignalStore::resolve_dir(args.store.clone(), config.store.path.clone())?;
    let store = SignalStore::open(dir)?;
    ServiceState::new(config, store)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Serve {
            service,
            socket,
            seed,
        } => {
            let state = load_service(&service)?;
            match socket {
                Some(path) => serve_socket(Arc::new(state), &path, seed),
                None => serve_lines(
                    &state,
                    BufReader::new(std::io::stdin()),
                    std::io::stdout(),
                    seed,
                ),
            }
        }
        Command::Schedule {
            service,
            input,
            output,
            seed,
        } => {
            let state = load_service(&service)?;
            let reader = BufReader::new(open_input(&input)?);
            let mut requests = Vec::new();
            for line in reader.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                requests.push(
                    serde_json::from_str::<SchedulingRequest>(&line)
                        .map_err(|e| Error::Parse(format!("request line: {e}")))?,
                );
            }
            let outcomes = handle_batch(&state, &requests, seed);
            let mut out = open_output(&output)?;
            for outcome in &outcomes {
                serde_json::to_writer(&mut out, outcome)?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
            Ok(())
        }
        Command::Ingest {
            input,
            output,
            decay,
        } => {
            let mut counters = ingest_events_csv(open_input(&input)?)?;
            if let Some(factor) = decay {
                for c in &mut counters {
                    c.decay(factor);
                }
            }
            write_counters_csv(open_output(&output)?, &counters)?;
            Ok(())
        }
        Command::Publish { store, day, maps } => {
            let dir = SignalStore::resolve_dir(store, None)?;
            let store = SignalStore::open(dir)?;
            let maps = read_maps_csv(open_input(&maps)?)?;
            let count = maps.len();
            let version = store.publish_maps(day, maps)?;
            println!("published {count} maps to day {day} as version {version}");
            Ok(())
        }
        Command::LearnWeights {
            input,
            use_case,
            output,
            ridge,
        } => {
            let training = read_training_csv(open_input(&input)?)?;
            let metrics: std::collections::BTreeSet<MetricId> = training
                .iter()
                .flat_map(|e| e.observations.iter())
                .flat_map(|o| o.metric_ranks.keys().cloned())
                .collect();
            let init: BTreeMap<MetricId, f64> =
                metrics.into_iter().map(|m| (m, 1.0)).collect();
            let config = LearnerConfig {
                ridge_lambda: ridge,
                ..LearnerConfig::default()
            };
            let (spec, report) =
                learn_weights(UseCaseId::from(use_case.as_str()), &training, &init, &config)?;
            let headers = vec!["metric".to_string(), "weight".to_string()];
            let rows: Vec<Vec<String>> = spec
                .weights()
                .iter()
                .map(|(m, w)| vec![m.to_string(), format!("{w:.6}")])
                .collect();
            print!("{}", render_table(&headers, &rows));
            println!(
                "loss {:.6} (init {:.6}) over {} observations{}{}",
                report.loss,
                report.init_loss,
                report.n,
                if report.ridge_fallback {
                    "; ridge fallback used"
                } else {
                    ""
                },
                if report.kept_init {
                    "; kept init weights"
                } else {
                    ""
                },
            );
            if let Some(path) = output {
                let doc = toml::to_string_pretty(&spec)
                    .map_err(|e| Error::Parse(e.to_string()))?;
                std::fs::write(path, doc)?;
            }
            Ok(())
        }
        Command::Evaluate {
            predictions,
            actuals,
            k,
            cohort,
            cohort_metrics,
            out_csv,
        } => {
            let maps = read_maps_csv(open_input(&predictions)?)?;
            let gains = read_gains_csv(open_input(&actuals)?)?;
            let mut reports: Vec<(MetricId, NdcgReport)> = Vec::new();
            for map in &maps {
                let Some(user_gains) = gains.get(map.user()) else {
                    continue;
                };
                let order = besttime::policy::top_n_policy(map, map.len())?;
                let report = ndcg_report(map.user().clone(), &order, user_gains, k)?;
                reports.push((map.metric().clone(), report));
            }
            if reports.is_empty() {
                return Err(Error::InvalidArgument(
                    "no (prediction, actuals) user overlap".into(),
                ));
            }
            print_ndcg_summary(&reports, k);
            if let Some(path) = out_csv {
                let mut w = csv::Writer::from_writer(open_output(&path)?);
                w.write_record(["user", "metric", "k", "ndcg", "all_zero_gains"])?;
                for (metric, r) in &reports {
                    w.write_record([
                        r.user.as_str(),
                        metric.as_str(),
                        &k.to_string(),
                        &format!("{:.6}", r.ndcg),
                        &r.all_zero_gains.to_string(),
                    ])?;
                }
                w.flush()?;
            }
            if let Some(path) = cohort {
                let levels = besttime::service::read_activity_csv(open_input(&path)?)?;
                let dims: Vec<MetricId> = cohort_metrics
                    .iter()
                    .map(|m| MetricId::from(m.as_str()))
                    .collect();
                if dims.is_empty() || dims.len() > 2 {
                    return Err(Error::InvalidArgument(
                        "--cohort-metrics needs one or two metrics".into(),
                    ));
                }
                let rows: Vec<CohortRow> = reports
                    .iter()
                    .map(|(_, r)| CohortRow {
                        user: r.user.clone(),
                        activity: dims
                            .iter()
                            .map(|m| {
                                levels
                                    .get(&(r.user.clone(), m.clone()))
                                    .copied()
                                    .unwrap_or(0.0)
                            })
                            .collect(),
                        metric: r.ndcg,
                    })
                    .collect();
                let table = cohort_report(&rows, dims.len())?;
                println!("\nNDCG by activity cohort");
                print!("{table}");
            }
            Ok(())
        }
        Command::Simulate {
            config,
            seed,
            workers,
            out_csv,
            out_cohort_csv,
        } => {
            let mut experiment = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                experiment.seed = seed;
            }
            if workers.is_some() {
                experiment.workers = workers;
            }
            let report = run_experiment(&experiment)?;
            print!("{report}");
            if let Some(path) = out_csv {
                report.write_csv(open_output(&path)?)?;
            }
            if let Some(path) = out_cohort_csv {
                if let besttime::sim::ExperimentReport::Assembly(a) = &report {
                    a.cohort_lift.write_long_csv(open_output(&path)?)?;
                } else {
                    return Err(Error::InvalidArgument(
                        "--out-cohort-csv applies to the assembly experiment only".into(),
                    ));
                }
            }
            Ok(())
        }
    }
}

/// CSV row shape: `user,slot,gain`.
fn read_gains_csv<R: Read>(
    reader: R,
) -> Result<BTreeMap<UserId, BTreeMap<usize, f64>>, Error> {
    #[derive(serde::Deserialize)]
    struct Row {
        user: String,
        slot: usize,
        gain: f64,
    }
    let mut r = csv::Reader::from_reader(reader);
    let mut out: BTreeMap<UserId, BTreeMap<usize, f64>> = BTreeMap::new();
    for row in r.deserialize() {
        let row: Row = row?;
        out.entry(UserId(row.user)).or_default().insert(row.slot, row.gain);
    }
    Ok(out)
}

fn print_ndcg_summary(reports: &[(MetricId, NdcgReport)], k: usize) {
    let mut by_metric: BTreeMap<&MetricId, Vec<&NdcgReport>> = BTreeMap::new();
    for (metric, report) in reports {
        by_metric.entry(metric).or_default().push(report);
    }
    let headers = vec![
        "metric".to_string(),
        "users".to_string(),
        format!("mean_ndcg@{k}"),
        "all_zero_gain_users".to_string(),
    ];
    let rows: Vec<Vec<String>> = by_metric
        .iter()
        .map(|(metric, rs)| {
            let mean = rs.iter().map(|r| r.ndcg).sum::<f64>() / rs.len() as f64;
            let zero = rs.iter().filter(|r| r.all_zero_gains).count();
            vec![
                metric.to_string(),
                rs.len().to_string(),
                format!("{mean:.4}"),
                zero.to_string(),
            ]
        })
        .collect();
    print!("{}", render_table(&headers, &rows));
}
