use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sgr_core::config::PipelineConfig;
use sgr_core::error::{Error, ErrorClass};
use sgr_core::graph::DotOptions;
use sgr_core::pipeline::{build_dataset, graph_dir, load_graph, LabelInfo, CONFIG_FILE};
use sgr_core::providers::{ProviderContext, ProviderRegistry};
use sgr_core::reasoning::{run_task, score_reasoning, TaskReport, TaskTruth};
use sgr_core::search::{find_objects, find_rooms};
use sgr_core::synth::{self, RetrievalFixture};

#[derive(Parser)]
#[command(name = "sgr", version, about = "Build, query and reason over open-vocabulary 3D scene graphs")]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration value, e.g. `--set reconstruction.voxel_size=0.05`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a dataset and write the scene graph.
    Build {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Search a built graph for objects or rooms.
    Query {
        /// Graph file or build output directory.
        #[arg(long)]
        graph: PathBuf,
        #[arg(long = "object", value_name = "NAME", required_unless_present = "rooms", conflicts_with = "rooms")]
        objects: Vec<String>,
        #[arg(long = "room", value_name = "NAME")]
        rooms: Vec<String>,
        /// Similarity threshold (defaults to the configured one).
        #[arg(long, allow_negative_numbers = true)]
        threshold: Option<f64>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Ground a natural-language task in a graph and judge its subtasks.
    Reason {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score retrieval (Acc_k, AUC) or reasoning (SR%, FP) fixtures.
    Eval {
        /// Retrieval fixture (JSON).
        #[arg(long, conflicts_with = "reasoning", required_unless_present = "reasoning")]
        retrieval: Option<PathBuf>,
        /// Reasoning fixture directory (config.toml, truth.json, graph/).
        #[arg(long)]
        reasoning: Option<PathBuf>,
        /// Runs per reasoning task.
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        /// k values for Acc_k.
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 5, 10])]
        ks: Vec<usize>,
        /// Also write the result as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export a graph as Graphviz DOT.
    Export {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        dot: PathBuf,
        /// Include mesh vertices.
        #[arg(long)]
        mesh: bool,
    },
    /// Generate synthetic datasets and fixtures.
    Synth {
        #[arg(long, value_enum)]
        kind: SynthKind,
        #[arg(long)]
        out: PathBuf,
        /// Frames to render (dataset).
        #[arg(long, default_value_t = 200)]
        frames: usize,
        /// Doorway width in voxels (dataset).
        #[arg(long, default_value_t = 4)]
        door_cells: usize,
        /// Embedding dimension recorded in the dataset / used by fixtures.
        #[arg(long, default_value_t = 768)]
        dim: usize,
        #[arg(long, default_value_t = 50)]
        objects: usize,
        #[arg(long, default_value_t = 500)]
        vocabulary: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    /// Two furnished rooms joined by a doorway.
    Dataset,
    /// Scripted trash-disposal reasoning fixture.
    Reasoning,
    /// Retrieval fixture whose features equal their names' anchors.
    RetrievalAnchor,
    /// Retrieval fixture with near ties and blended features.
    RetrievalAdversarial,
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

macro_rules! core_from {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::Core(e.into())
            }
        }
    )*};
}
core_from!(
    sgr_core::config::ConfigError,
    sgr_core::graph::GraphError,
    sgr_core::providers::ProviderError,
    sgr_core::search::SearchError,
    sgr_core::reasoning::ReasoningError,
    sgr_core::ingest::IngestError
);

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Data => 2,
                ErrorClass::Provider => 3,
            })
        }
    }
}

fn run(command: Command) -> CliResult {
    match command {
        Command::Build { dataset, out, config } => cmd_build(&dataset, &out, &config),
        Command::Query {
            graph,
            objects,
            rooms,
            threshold,
            config,
        } => cmd_query(&graph, &objects, &rooms, threshold, &config),
        Command::Reason { graph, task, out, config } => cmd_reason(&graph, &task, &out, &config),
        Command::Eval {
            retrieval,
            reasoning,
            repeats,
            ks,
            out,
        } => match (retrieval, reasoning) {
            (Some(path), None) => cmd_eval_retrieval(&path, &ks, out.as_deref()),
            (None, Some(dir)) => cmd_eval_reasoning(&dir, repeats, out.as_deref()),
            _ => Err(Failure::Usage("pass exactly one of --retrieval or --reasoning".into())),
        },
        Command::Export { graph, dot, mesh } => cmd_export(&graph, &dot, mesh),
        Command::Synth {
            kind,
            out,
            frames,
            door_cells,
            dim,
            objects,
            vocabulary,
            seed,
        } => cmd_synth(kind, &out, frames, door_cells, dim, objects, vocabulary, seed),
    }
}

/// Configuration from `--config`, else `fallback` when it exists, else the
/// defaults; then `--set` overrides and the environment.
fn load_config(args: &ConfigArgs, fallback: Option<&Path>) -> CliResult<PipelineConfig> {
    let mut cfg = match (&args.config, fallback) {
        (Some(path), _) => PipelineConfig::load(path)?,
        (None, Some(path)) if path.is_file() => PipelineConfig::load(path)?,
        _ => PipelineConfig::default(),
    };
    cfg.apply_overrides(&args.sets)?;
    cfg.apply_env()?;
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    fs::write(path, text).map_err(Error::io(path))?;
    Ok(())
}

fn cmd_build(dataset: &Path, out: &Path, args: &ConfigArgs) -> CliResult {
    let cfg = load_config(args, None)?;
    let built = build_dataset(dataset, cfg, &ProviderRegistry::with_builtins())?;
    built.pipeline.save(out)?;
    let s = built.pipeline.summary();
    println!("built {} frames into {}", built.frames, out.display());
    println!(
        "layers: mesh {} | objects {} | places {} | rooms {} | buildings {}",
        s.mesh_vertices, s.objects, s.places, s.rooms, s.buildings
    );
    println!(
        "edges: interlayer {} | relations {} | place links {}",
        s.interlayer_edges, s.relation_edges, s.place_edges
    );
    print!("{}", built.pipeline.timings().report());
    Ok(())
}

fn cmd_query(graph_path: &Path, objects: &[String], rooms: &[String], threshold: Option<f64>, args: &ConfigArgs) -> CliResult {
    let graph = load_graph(graph_path)?;
    let dir = graph_dir(graph_path);
    let cfg = load_config(args, Some(&dir.join(CONFIG_FILE)))?;
    let labels = LabelInfo::load(&dir).unwrap_or_else(|_| LabelInfo {
        palette: Default::default(),
        label_names: BTreeMap::new(),
    });
    let ctx = ProviderContext::from_palette(&labels.palette, &labels.label_names);
    let providers = ProviderRegistry::with_builtins().build(&cfg.provider, &ctx)?;
    let embedder = providers.embedder.as_ref();

    if !rooms.is_empty() {
        let queries: Vec<String> = rooms.iter().map(|r| cfg.search.label_prompt(r)).collect();
        let t = threshold.unwrap_or(cfg.search.room_threshold);
        let hits = find_rooms(&graph, &queries, embedder, t)?;
        if hits.is_empty() {
            println!("rooms: no matches");
        }
        for m in hits {
            let c = graph.room(m.node).map(|r| r.centroid).unwrap_or_default();
            println!(
                "room {} similarity {:.4} centroid [{:.3}, {:.3}, {:.3}]",
                m.node, m.mean_similarity, c[0], c[1], c[2]
            );
        }
        return Ok(());
    }
    let t = threshold.unwrap_or(cfg.search.object_threshold);
    for name in objects {
        let prompt = cfg.search.label_prompt(name);
        let hits = find_objects(&graph, std::slice::from_ref(&prompt), embedder, t, None)?
            .remove(&prompt)
            .unwrap_or_default();
        if hits.is_empty() {
            println!("{name}: no matches");
        }
        for m in hits {
            let c = graph.object(m.node).map(|o| o.centroid).unwrap_or_default();
            println!(
                "{name}: {} similarity {:.4} centroid [{:.3}, {:.3}, {:.3}]",
                m.node, m.similarity, c[0], c[1], c[2]
            );
        }
    }
    Ok(())
}

fn print_report(report: &TaskReport) {
    println!("task: {}", report.task);
    println!("objects:");
    for (name, hits) in &report.grounding.object_bindings {
        let ids: Vec<String> = hits.iter().map(|m| m.node.to_string()).collect();
        println!("  {name}: {}", if ids.is_empty() { "not found".into() } else { ids.join(", ") });
    }
    for b in &report.grounding.subtask_bindings {
        let s = &report.plan.subtasks[b.subtask];
        println!(
            "subtask {} ({} / {}): {} bound, {} without relation, {} capped",
            b.subtask,
            s.object_a,
            s.object_b,
            b.bound.len(),
            b.missing.len(),
            b.truncated
        );
    }
    for v in &report.verdicts {
        let verdict = match (&v.unevaluated, v.execute, v.undecided) {
            (Some(reason), _, _) => format!("UNEVALUATED ({reason})"),
            (None, true, _) => "EXECUTE".into(),
            (None, false, true) => "SKIP (undecided)".into(),
            (None, false, false) => "SKIP".into(),
        };
        println!("  {}-{}: {verdict}", v.pair.0, v.pair.1);
    }
}

fn cmd_reason(graph_path: &Path, task: &str, out: &Path, args: &ConfigArgs) -> CliResult {
    let graph = load_graph(graph_path)?;
    let dir = graph_dir(graph_path);
    let cfg = load_config(args, Some(&dir.join(CONFIG_FILE)))?;
    let labels = LabelInfo::load(&dir)?;
    let ctx = ProviderContext::from_palette(&labels.palette, &labels.label_names);
    let providers = ProviderRegistry::with_builtins().build(&cfg.provider, &ctx)?;
    let report = run_task(task, &graph, &providers, &cfg, &labels.palette, Some(&dir))?;
    write_text(&out.join("report.json"), &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    write_text(&out.join(CONFIG_FILE), &cfg.to_toml_string())?;
    print_report(&report);
    Ok(())
}

fn cmd_eval_retrieval(path: &Path, ks: &[usize], out: Option<&Path>) -> CliResult {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Failure::Usage("--ks needs positive values".into()));
    }
    let bytes = fs::read(path).map_err(Error::io(path))?;
    let fixture: RetrievalFixture =
        serde_json::from_slice(&bytes).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    let report = fixture.report(ks)?;
    print!("{report}");
    if let Some(out) = out {
        write_text(out, &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    }
    Ok(())
}

fn cmd_eval_reasoning(dir: &Path, repeats: usize, out: Option<&Path>) -> CliResult {
    let cfg = PipelineConfig::load(&dir.join(synth::FIXTURE_CONFIG_FILE))?;
    let mut cfg = cfg;
    cfg.apply_env()?;
    let truth_path = dir.join(synth::TRUTH_FILE);
    let bytes = fs::read(&truth_path).map_err(Error::io(&truth_path))?;
    let truth: Vec<TaskTruth> =
        serde_json::from_slice(&bytes).map_err(|e| Error::Validation(format!("{}: {e}", truth_path.display())))?;
    let graph_path = dir.join("graph");
    let graph = load_graph(&graph_path)?;
    let labels = LabelInfo::load(&graph_path)?;
    let ctx = ProviderContext::from_palette(&labels.palette, &labels.label_names);
    let registry = ProviderRegistry::with_builtins();

    let mut rows = Vec::new();
    let mut all = Vec::new();
    for t in &truth {
        let mut reports = Vec::new();
        for _ in 0..repeats.max(1) {
            let providers = registry.build(&cfg.provider, &ctx)?;
            reports.push(run_task(&t.task, &graph, &providers, &cfg, &labels.palette, Some(&graph_path))?);
        }
        let score = score_reasoning(&reports, std::slice::from_ref(t));
        rows.push((t.task.clone(), score));
        all.extend(reports);
    }
    let overall = score_reasoning(&all, &truth);
    println!("{:<48} {:>8} {:>4}", "task", "SR%", "FP");
    for (task, s) in &rows {
        println!("{task:<48} {:>8.2} {:>4}", s.success_ratio, s.false_positives);
    }
    println!("{:<48} {:>8.2} {:>4}", "overall", overall.success_ratio, overall.false_positives);
    if let Some(out) = out {
        let doc = serde_json::json!({
            "tasks": rows.iter().map(|(t, s)| serde_json::json!({"task": t, "score": s})).collect::<Vec<_>>(),
            "overall": overall,
            "repeats": repeats.max(1),
        });
        write_text(out, &serde_json::to_string_pretty(&doc).expect("scores serialize"))?;
    }
    Ok(())
}

fn cmd_export(graph_path: &Path, dot: &Path, mesh: bool) -> CliResult {
    let graph = load_graph(graph_path)?;
    let labels = LabelInfo::load(&graph_dir(graph_path)).ok();
    let label_names = labels
        .map(|l| {
            let max = l.label_names.keys().max().copied().map_or(0, |m| m as usize + 1);
            (0..max)
                .map(|i| l.label_names.get(&(i as u32)).cloned().unwrap_or_default())
                .collect()
        })
        .unwrap_or_default();
    let text = graph.export_dot(&DotOptions {
        include_mesh: mesh,
        label_names,
    });
    write_text(dot, &text)?;
    println!("wrote {}", dot.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    kind: SynthKind,
    out: &Path,
    frames: usize,
    door_cells: usize,
    dim: usize,
    objects: usize,
    vocabulary: usize,
    seed: u64,
) -> CliResult {
    match kind {
        SynthKind::Dataset => {
            if door_cells == 0 {
                return Err(Failure::Usage("--door-cells must be at least 1".into()));
            }
            let scene = synth::two_room_scene(door_cells);
            let m = scene.write_dataset(out, "two-rooms", frames, dim)?;
            println!("wrote {} frames to {}", m.frame_count, out.display());
        }
        SynthKind::Reasoning => {
            let config = synth::trash_fixture().write(out)?;
            println!("wrote reasoning fixture; config {}", config.display());
        }
        SynthKind::RetrievalAnchor | SynthKind::RetrievalAdversarial => {
            if dim < 2 || vocabulary < 2 {
                return Err(Failure::Usage("retrieval fixtures need --dim and --vocabulary of at least 2".into()));
            }
            let fixture = match kind {
                SynthKind::RetrievalAnchor => synth::anchor_retrieval_fixture(objects, vocabulary, dim, seed),
                _ => synth::adversarial_retrieval_fixture(objects, vocabulary, dim, seed),
            };
            write_text(out, &serde_json::to_string(&fixture).expect("fixture serializes"))?;
            println!("wrote {} objects, {} words to {}", fixture.objects.len(), fixture.vocabulary.len(), out.display());
        }
    }
    Ok(())
}

