use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use markovprune::ci::{implied_independencies, markov_blanket};
use markovprune::reduce::{adjustment_sets, project, reduce, ReduceOptions};
use markovprune::sweep::{parse_n_grid, run_sweep, SweepSpec, Variants};
use markovprune::{
    fill_coefficients, fit, parse_bytes, serialize, simulate, target_metrics, CausalGraph, Dataset, Error,
    ModelFile, NodeSet, PathModel, Result,
};

#[derive(Parser)]
#[command(name = "markovprune", version, about = "Reduce causal models to what their target effects need")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model file; prints OK or its diagnostics.
    Validate { file: PathBuf },
    /// List the pairwise conditional independencies the graph implies.
    Indep {
        file: PathBuf,
        /// Largest conditioning set.
        #[arg(long, default_value_t = 3)]
        max_given: usize,
    },
    /// Markov blanket of a node set (latents are projected out first).
    Mblanket {
        file: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        of: Vec<String>,
    },
    /// Latent projection onto the given nodes.
    Project {
        file: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        keep: Vec<String>,
    },
    /// Minimal backdoor adjustment sets, one per line.
    Adjust {
        file: PathBuf,
        #[arg(long)]
        cause: String,
        #[arg(long)]
        outcome: String,
    },
    /// Reduce the model to its declared targets.
    Reduce {
        file: PathBuf,
        /// Also keep outcome parents that only improve precision.
        #[arg(long)]
        keep_precision: bool,
        /// Write the reduced model file here.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Simulate data from the model.
    Simulate {
        file: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, env = "MARKOVPRUNE_SEED")]
        seed: u64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Fit a fully observed model to a CSV dataset.
    Fit {
        model: PathBuf,
        data: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Compare full and reduced models over a grid of sample sizes.
    Sweep {
        file: PathBuf,
        /// `start:stop:step` or a comma-separated list.
        #[arg(long)]
        n_grid: String,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long, env = "MARKOVPRUNE_SEED")]
        seed: u64,
        #[arg(long, value_enum, default_value_t = VariantArg::Both)]
        variants: VariantArg,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Full,
    Reduced,
    Both,
}

fn load(path: &Path) -> Result<ModelFile> {
    parse_bytes(&fs::read(path)?)
}

fn node_set(graph: &CausalGraph, names: &[String]) -> Result<NodeSet> {
    graph.set(names)
}

fn join_set(graph: &CausalGraph, set: &NodeSet) -> String {
    if set.is_empty() {
        "(empty set)".into()
    } else {
        graph.set_names(set).join(",")
    }
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn run(command: Command) -> Result<()> {
    let mut out = String::new();
    match command {
        Command::Validate { file } => {
            load(&file)?;
            out.push_str("OK\n");
        }
        Command::Indep { file, max_given } => {
            let g = load(&file)?.graph;
            for s in implied_independencies(&g, max_given) {
                out.push_str(&format!("{}\n", s.display(&g)));
            }
        }
        Command::Mblanket { file, of } => {
            let g = load(&file)?.graph;
            let latent = g.latent_nodes();
            let target_set = node_set(&g, &of)?;
            let (g, s) = if latent.is_empty() {
                (g, target_set)
            } else {
                if let Some(v) = target_set.iter().find(|&v| g.is_latent(v)) {
                    return Err(Error::InvalidQuery(format!("`{}` is latent", g.name(v))));
                }
                out.push_str(&format!("# projected out latent nodes: {}\n", g.set_names(&latent).join(",")));
                let p = project(&g, &g.observed_nodes())?;
                let s = node_set(&p, &of)?;
                (p, s)
            };
            let mb = markov_blanket(&g, &s).map_err(|e| match e {
                Error::NotFullyObserved(_) if !latent.is_empty() => Error::NotFullyObserved(
                    "latent confounding leaves bidirected edges after projection; \
                     the blanket is defined for DAGs only"
                        .into(),
                ),
                e => e,
            })?;
            out.push_str(&format!("{}\n", join_set(&g, &mb)));
        }
        Command::Project { file, keep } => {
            let g = load(&file)?.graph;
            let p = project(&g, &node_set(&g, &keep)?)?;
            out.push_str(&serialize(&ModelFile::from_graph(p)));
        }
        Command::Adjust { file, cause, outcome } => {
            let g = load(&file)?.graph;
            let (c, o) = (g.index(&cause)?, g.index(&outcome)?);
            for name in [&cause, &outcome] {
                if g.is_latent(g.index(name)?) {
                    return Err(Error::InvalidQuery(format!("`{name}` is latent")));
                }
            }
            let sets = adjustment_sets(&g, c, o)?;
            if sets.is_empty() {
                return Err(Error::NotIdentifiable {
                    cause,
                    outcome,
                    reason: "no set of observed variables satisfies the backdoor criterion; \
                             front-door and other identification strategies are not supported"
                        .into(),
                });
            }
            for s in sets {
                out.push_str(&format!("{}\n", join_set(&g, &s.members)));
            }
        }
        Command::Reduce { file, keep_precision, output, json } => {
            let m = load(&file)?;
            let options = ReduceOptions { keep_precision, ..ReduceOptions::default() };
            let r = reduce(&m, &options)?;
            if let Some(path) = &output {
                fs::write(path, r.to_dgp())?;
            }
            if json {
                out.push_str(&serde_json::to_string_pretty(&r.to_json()).expect("json value"));
                out.push('\n');
            } else {
                out.push_str(&r.report());
            }
        }
        Command::Simulate { file, n, seed, output } => {
            let m = load(&file)?;
            let a = fill_coefficients(&m, seed);
            let d = simulate(&m.graph, &a, n, seed)?;
            let mut buf = Vec::new();
            d.write_csv(&mut buf)?;
            write_out(output.as_deref(), &String::from_utf8(buf).expect("csv is utf-8"))?;
        }
        Command::Fit { model, data, json } => {
            let m = load(&model)?;
            let pm = PathModel::new(m.graph.clone())?;
            let d = Dataset::read_csv(fs::File::open(&data)?)?;
            let f = fit(&pm, &d)?;
            let mut targets = Vec::new();
            for t in &m.targets {
                let tm = target_metrics(&f, t, f64::NAN)?;
                targets.push((t.to_string(), tm));
            }
            if json {
                let mut v = f.to_json();
                v["targets"] = targets
                    .iter()
                    .map(|(t, tm)| {
                        serde_json::json!({
                            "target": t, "estimate": tm.estimate, "se": tm.std_error, "p": tm.p_value
                        })
                    })
                    .collect();
                out.push_str(&serde_json::to_string_pretty(&v).expect("json value"));
                out.push('\n');
            } else {
                out.push_str(&f.report());
                for (t, tm) in targets {
                    out.push_str(&format!(
                        "target {t}: estimate = {:.6}, se = {:.6}, p = {:.6}\n",
                        tm.estimate, tm.std_error, tm.p_value
                    ));
                }
            }
        }
        Command::Sweep { file, n_grid, reps, seed, variants, output } => {
            let m = load(&file)?;
            let mut spec = SweepSpec::new(m, parse_n_grid(&n_grid)?, reps, seed);
            spec.variants = match variants {
                VariantArg::Full => Variants::Full,
                VariantArg::Reduced => Variants::Reduced,
                VariantArg::Both => Variants::Both,
            };
            let s = run_sweep(&spec)?;
            if s.full_misspecified && variants != VariantArg::Reduced {
                eprintln!("note: full model drops the bidirected edges of its projection and is misspecified");
            }
            for r in s.rows.iter().filter(|r| r.failed > 0 && r.metric == "chi2") {
                eprintln!("warning: {} of {} fits failed at n = {} ({})", r.failed, r.reps, r.n, r.variant);
            }
            let mut buf = Vec::new();
            s.write_csv(&mut buf)?;
            write_out(output.as_deref(), &String::from_utf8(buf).expect("csv is utf-8"))?;
        }
    }
    io::stdout().write_all(out.as_bytes())?;
    Ok(())
}

fn report(err: &Error) {
    match err {
        Error::Parse(diags) => {
            for d in diags {
                eprintln!("error[{}]: {d}", d.code.code());
            }
        }
        Error::InvalidGraph(violations) => {
            for v in violations {
                eprintln!("error[{}]: {}", v.code.code(), v.message);
            }
        }
        other => eprintln!("error[{}]: {other}", other.code()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::from(1)
        }
    }
}
