use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use valp_core::harness::{
    self, baseline_mlp, build_multitask, export_dot, idx, load_split, predict_mean_mse,
    random_search, search, write_search_csv, BaselineConfig, BaselineTask, MultitaskDataset,
    SearchConfig, Split,
};
use valp_core::{
    attach_losses, compile, initialize, train_oracle, validate, Betas, ModelGraph, OracleConfig,
    SynthesisConfig,
};

#[derive(Parser)]
#[command(
    name = "valp",
    version,
    about = "Synthesize, train and evaluate typed multi-network models"
)]
struct Cli {
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value_t = 11)]
    max_n: usize,
    #[arg(long, global = true, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, global = true, default_value_t = 0.3)]
    phi: f64,
    /// Loss weights: mse, cross entropy, sample likelihood, KL.
    #[arg(long, global = true, value_parser = parse_betas)]
    beta: Option<Betas>,
    #[arg(long, global = true, default_value_t = 32)]
    bins: usize,
    #[arg(long, global = true, default_value_t = 5000)]
    train_size: usize,
    #[arg(long, global = true, default_value_t = 1000)]
    test_size: usize,
    #[arg(long, global = true, default_value_t = 2000)]
    steps: usize,
    #[arg(long, global = true, default_value_t = 50)]
    batch: usize,
    #[arg(long, global = true, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a random graph for the image problem; writes JSON and DOT.
    Synth,
    /// Check a graph file; exits nonzero when it is invalid.
    Validate { graph: PathBuf },
    /// Train a graph; writes weights and the loss trace next to it.
    Train { graph: PathBuf },
    /// Generate samples from a trained graph as CSV rows.
    Sample {
        graph: PathBuf,
        /// Weights file (default: `<graph stem>.weights.json` beside the graph).
        #[arg(long)]
        weights: Option<PathBuf>,
        /// IDX image file of conditioning rows.
        #[arg(long)]
        condition: Option<PathBuf>,
        /// Samples to draw (per conditioning row when conditioned).
        #[arg(long, default_value_t = 10)]
        n: usize,
    },
    /// Synthesize, train and score many graphs; writes search.csv.
    Search {
        #[arg(long, default_value_t = 20)]
        configs: usize,
    },
    /// Single-network reference scores.
    Baseline {
        #[arg(long, value_enum, default_value_t = Task::Both)]
        task: Task,
    },
    /// Render a graph file as Graphviz DOT.
    ExportDot { graph: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    Classification,
    Regression,
    Both,
}

fn parse_betas(s: &str) -> Result<Betas, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    let [mse, cross_entropy, sample_nll, kl] = v[..] else {
        return Err(format!(
            "expected 4 comma-separated values, got {}",
            v.len()
        ));
    };
    if v.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
        return Err("weights must be finite and nonnegative".into());
    }
    Ok(Betas {
        mse,
        cross_entropy,
        sample_nll,
        kl,
    })
}

impl Cli {
    fn synthesis(&self) -> SynthesisConfig {
        SynthesisConfig {
            alpha: self.alpha,
            max_n: self.max_n,
            phi: self.phi,
            seed: self.seed,
            ..SynthesisConfig::default()
        }
    }

    fn betas(&self) -> Betas {
        self.beta.unwrap_or_default()
    }

    fn data(&self) -> Result<(MultitaskDataset, MultitaskDataset)> {
        let dir = harness::data_dir();
        let load = |split| {
            let (x, y) = load_split(&dir, split).with_context(|| {
                format!(
                    "loading IDX data from {} (set VALP_DATA_DIR)",
                    dir.display()
                )
            })?;
            Ok::<_, anyhow::Error>(build_multitask(x, y, self.bins)?)
        };
        let train = load(Split::Train)?;
        let test = load(Split::Test)?;
        let classes = train.classes.max(test.classes);
        Ok((
            train.with_classes(classes).head(self.train_size),
            test.with_classes(classes).head(self.test_size),
        ))
    }
}

fn read_graph(path: &Path) -> Result<ModelGraph> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ModelGraph::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

/// `<dir>/<graph stem><suffix>`, where `dir` is `--out` or the graph's directory.
fn sibling(graph: &Path, out: Option<&Path>, suffix: &str) -> PathBuf {
    let stem = graph
        .file_stem()
        .map_or_else(|| "graph".into(), |s| s.to_string_lossy().into_owned());
    let dir = out.map_or_else(
        || graph.parent().unwrap_or(Path::new(".")).to_owned(),
        Path::to_owned,
    );
    dir.join(format!("{stem}{suffix}"))
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn synth(cli: &Cli) -> Result<()> {
    let (inputs, outputs) = search::image_problem("i0", 784, cli.bins, 10);
    let g = initialize(&inputs, &outputs, &cli.synthesis())?;
    let mut g = attach_losses(g, &search::default_tasks(&outputs), &cli.betas())?;
    g.hyper.epochs = cli.steps;
    g.hyper.batch_size = cli.batch;
    g.hyper.learning_rate = cli.lr;
    let json = g.to_json();
    match &cli.out {
        Some(p) => {
            fs::write(p, &json).with_context(|| format!("writing {}", p.display()))?;
            let dot = p.with_extension("dot");
            fs::write(&dot, export_dot(&g))?;
            eprintln!("wrote {} and {}", p.display(), dot.display());
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn validate_cmd(graph: &Path) -> Result<()> {
    let g = read_graph(graph)?;
    let report = validate(&g);
    if report.ok {
        println!("ok");
        return Ok(());
    }
    print!("{}", report.to_json_lines());
    bail!("{} violation(s)", report.violations.len())
}

fn train(cli: &Cli, graph: &Path) -> Result<()> {
    let mut g = read_graph(graph)?;
    if let Some(betas) = cli.beta {
        let outputs = g.outputs.clone();
        g = attach_losses(g, &search::default_tasks(&outputs), &betas)?;
    }
    g.hyper.epochs = cli.steps;
    g.hyper.batch_size = cli.batch;
    g.hyper.learning_rate = cli.lr;
    let (train, test) = cli.data()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let mut model = compile(&g, &mut rng)?;
    let trace = model.train(&train, &g.hyper, &mut rng)?;
    if let Some(dir) = &cli.out {
        fs::create_dir_all(dir)?;
    }
    let weights = sibling(graph, cli.out.as_deref(), ".weights.json");
    fs::write(&weights, model.weights_json())?;
    let trace_path = sibling(graph, cli.out.as_deref(), ".trace.csv");
    trace.write_csv(fs::File::create(&trace_path)?)?;
    let last = trace.last().map_or(f64::NAN, |r| r.composite);
    println!("steps {} final composite {last}", trace.rows.len());

    model.switch_to_inference();
    let outs = model.infer(
        &BTreeMap::from([(test.input_id.clone(), test.x.clone())]),
        &mut rng,
    )?;
    for o in &g.outputs {
        let v = outs[&o.id].values();
        match o.spec.dtype {
            valp_core::DataType::Discrete if v.ncols() == test.classes => {
                println!(
                    "{} accuracy {}",
                    o.id,
                    valp_core::accuracy(v, &test.labels)?
                )
            }
            valp_core::DataType::Numeric if v.ncols() == test.bins() => {
                println!(
                    "{} mse {}",
                    o.id,
                    valp_core::eval::mse_metric(v, test.r.view())?
                )
            }
            _ => {}
        }
    }
    eprintln!("wrote {} and {}", weights.display(), trace_path.display());
    Ok(())
}

fn sample(
    cli: &Cli,
    graph: &Path,
    weights: Option<&Path>,
    condition: Option<&Path>,
    n: usize,
) -> Result<()> {
    let g = read_graph(graph)?;
    let wpath = weights.map_or_else(|| sibling(graph, None, ".weights.json"), Path::to_owned);
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let mut model = compile(&g, &mut rng)?;
    let text =
        fs::read_to_string(&wpath).with_context(|| format!("reading {}", wpath.display()))?;
    model.load_weights_json(&text)?;
    model.switch_to_inference();
    let input = g.inputs.first().context("graph has no model input")?;
    let samples = match condition {
        Some(p) => {
            let x = idx::read_images(p)?;
            let feed = BTreeMap::from([(input.id.clone(), x)]);
            model.conditioned_sample(&feed, n, &mut rng)?.into_values()
        }
        None => {
            // Zero inputs: only decoder inputs kept at inference see them.
            let feed = BTreeMap::from([(input.id.clone(), Array2::zeros((n, input.spec.width)))]);
            let id = model.samples_output()?.to_owned();
            model
                .infer(&feed, &mut rng)?
                .remove(&id)
                .context("samples output")?
                .into_values()
        }
    };
    let mut text = String::new();
    for row in samples.rows() {
        let line: Vec<String> = row.iter().map(f64::to_string).collect();
        text.push_str(&line.join(","));
        text.push('\n');
    }
    write_or_print(cli.out.as_deref(), &text)
}

fn search_cmd(cli: &Cli, configs: usize) -> Result<()> {
    let (train, test) = cli.data()?;
    let oracle_cfg = OracleConfig {
        seed: cli.seed,
        ..OracleConfig::default()
    };
    let oracle = match train_oracle(train.x.view(), &train.labels, train.classes, &oracle_cfg) {
        Ok(o) => o,
        Err(valp_core::eval::EvalError::FloorNotMet {
            accuracy,
            floor,
            oracle,
        }) => {
            eprintln!("warning: oracle holdout accuracy {accuracy:.3} is below {floor}; sample metrics are unreliable");
            *oracle
        }
        Err(e) => return Err(e.into()),
    };
    let cfg = SearchConfig {
        synthesis: cli.synthesis(),
        betas: cli.betas(),
        steps: cli.steps,
        batch_size: cli.batch,
        learning_rate: cli.lr,
        workers: cli.workers,
        ..SearchConfig::default()
    };
    let records = random_search(configs, cli.seed, &train, &test, &oracle, &cfg);
    let dir = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("search-out"));
    fs::create_dir_all(&dir)?;
    for r in &records {
        if let (Some(g), Some(name)) = (&r.graph, r.graph_file()) {
            fs::write(dir.join(name), g.to_json())?;
        }
    }
    let csv_path = dir.join("search.csv");
    write_search_csv(&records, fs::File::create(&csv_path)?)?;
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    println!(
        "{} configs, {failed} failed; wrote {}",
        records.len(),
        csv_path.display()
    );
    Ok(())
}

fn baseline(cli: &Cli, task: Task) -> Result<()> {
    let (train, test) = cli.data()?;
    let cfg = BaselineConfig {
        steps: cli.steps,
        batch_size: cli.batch,
        learning_rate: cli.lr,
        seed: cli.seed,
        ..BaselineConfig::default()
    };
    if matches!(task, Task::Classification | Task::Both) {
        let acc = baseline_mlp(BaselineTask::Classification, &train, &test, &cfg)?;
        println!("classification accuracy {acc}");
    }
    if matches!(task, Task::Regression | Task::Both) {
        let mse = baseline_mlp(BaselineTask::Regression, &train, &test, &cfg)?;
        println!("regression mse {mse}");
        println!("predict-mean mse {}", predict_mean_mse(&train, &test)?);
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Synth => synth(&cli),
        Command::Validate { graph } => validate_cmd(graph),
        Command::Train { graph } => train(&cli, graph),
        Command::Sample {
            graph,
            weights,
            condition,
            n,
        } => sample(&cli, graph, weights.as_deref(), condition.as_deref(), *n),
        Command::Search { configs } => search_cmd(&cli, *configs),
        Command::Baseline { task } => baseline(&cli, *task),
        Command::ExportDot { graph } => {
            write_or_print(cli.out.as_deref(), &export_dot(&read_graph(graph)?))
        }
    }
}
