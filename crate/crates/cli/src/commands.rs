use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use figpriv_core::agents::{AgentsConfig, MockBackend};
use figpriv_core::fixtures::build_corpus;
use figpriv_core::geometry::{load_rgb, save_image};
use figpriv_core::metrics::{
    answerability_batch, compare_strategies, load_manifests, load_questions, recognition_probe,
};
use figpriv_core::pipeline::{Pipeline, PipelineFailure, PipelineOutput};
use figpriv_core::risk::{load_edge_list, risk_scores, spearman, EcosystemGraph, ScoreConfig};
use figpriv_core::taxonomy::{default_threshold, high_risk_for_category, CategoryTable, UnscoredPolicy};
use rayon::prelude::*;
use serde_json::json;

use crate::args::RiskCommand;
use crate::config::Settings;
use crate::error::CliError;

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

fn pretty(value: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))
}

pub fn risk(settings: &Settings, command: &RiskCommand) -> Result<(), CliError> {
    let graph = settings.graph()?;
    let config = settings.score_config();
    let scores = risk_scores(&graph, &config)?;
    match command {
        RiskCommand::Scores => {
            let text = pretty(&scores);
            if let Some(out) = &settings.out {
                write(out, &text)?;
            }
            print!("{text}");
        }
        RiskCommand::HighSet => {
            let category = settings
                .category
                .as_deref()
                .ok_or_else(|| CliError::Config("high-set needs --category".into()))?;
            let table = settings.table()?;
            let tau = settings.tau.unwrap_or_else(|| default_threshold(&scores));
            let set = high_risk_for_category(&table, &scores, category, tau, UnscoredPolicy::Exclude)?;
            print!("{}", pretty(&set));
        }
        RiskCommand::Spearman { against } => {
            let other = risk_scores(&graph, &ScoreConfig { algorithm: *against, ..config })?;
            let rho = spearman(&scores, &other)?;
            let report = json!({
                "a": scores.source_tag(),
                "b": other.source_tag(),
                "nodes": scores.len(),
                "spearman": rho,
            });
            print!("{}", pretty(&report));
        }
    }
    Ok(())
}

/// Images to process and the category of each.
fn collect_inputs(input: &Path, category: Option<&str>) -> Result<Vec<(PathBuf, Option<String>)>, CliError> {
    if input.is_file() {
        return Ok(vec![(input.to_path_buf(), category.map(str::to_string))]);
    }
    if !input.is_dir() {
        return Err(CliError::Config(format!("input {} does not exist", input.display())));
    }
    let map_path = input.join("images.json");
    let map: BTreeMap<String, String> = if map_path.exists() {
        let text = std::fs::read_to_string(&map_path).map_err(|e| CliError::Config(format!("{}: {e}", map_path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", map_path.display())))?
    } else {
        BTreeMap::new()
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(input)
        .map_err(|e| CliError::Config(format!("{}: {e}", input.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Data(format!("no images in {}", input.display())));
    }
    Ok(paths
        .into_iter()
        .map(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            let cat = category.map(str::to_string).or_else(|| map.get(&name).cloned());
            (p, cat)
        })
        .collect())
}

fn is_png(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn write_outputs(input: &Path, out_dir: &Path, output: &PipelineOutput) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::new();
    for r in &output.renders {
        let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        let name = r.manifest.output_image.clone().unwrap_or_else(|| format!("{stem}.{}.png", r.strategy.suffix()));
        let image_path = out_dir.join(name);
        if r.manifest.masked_pixels == 0 && is_png(input) {
            std::fs::copy(input, &image_path).map_err(|e| CliError::Data(format!("{}: {e}", image_path.display())))?;
        } else {
            save_image(&r.image, &image_path).map_err(|e| CliError::Data(e.to_string()))?;
        }
        let manifest_path = image_path.with_extension("json");
        write(&manifest_path, r.manifest.to_json())?;
        written.push(image_path);
        written.push(manifest_path);
    }
    Ok(written)
}

fn write_failure(input: &Path, out_dir: &Path, failure: &PipelineFailure) -> Result<PathBuf, CliError> {
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    let path = out_dir.join(format!("{stem}.failed.json"));
    write(&path, failure.manifest.to_json())?;
    Ok(path)
}

fn build_pipeline(settings: &Settings) -> Result<Pipeline, CliError> {
    let agents_config: AgentsConfig = settings.agents_config()?;
    let agents = figpriv_core::agents::AgentSet::from_config(agents_config.clone())?;
    let graph: EcosystemGraph = settings.graph()?;
    let config = settings.pipeline_config();
    let pipeline = Pipeline::new(config.clone(), agents, &graph, settings.table()?)?;
    let echo = json!({
        "cli": settings,
        "pipeline": config,
        "tau_effective": pipeline.tau(),
        "agents": agents_config,
    });
    Ok(pipeline.with_echo(echo))
}

pub fn mask(settings: &Settings, input: &Path) -> Result<(), CliError> {
    let inputs = collect_inputs(input, settings.category.as_deref())?;
    let pipeline = build_pipeline(settings)?;
    let out_dir = settings.out_or("out");
    create_dir(&out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.jobs)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;

    let results: Vec<Result<Vec<PathBuf>, CliError>> = pool.install(|| {
        inputs
            .par_iter()
            .map(|(path, category)| {
                let Some(category) = category else {
                    return Err(CliError::Config(format!("no category for {}", path.display())));
                };
                match pipeline.run(path, Some(category)) {
                    Ok(output) => write_outputs(path, &out_dir, &output),
                    Err(failure) => {
                        write_failure(path, &out_dir, &failure)?;
                        Err(CliError::from(failure.error))
                    }
                }
            })
            .collect()
    });

    let mut first_error = None;
    let mut succeeded = 0;
    for ((path, _), result) in inputs.iter().zip(results) {
        match result {
            Ok(files) => {
                succeeded += 1;
                tracing::info!(input = %path.display(), outputs = files.len(), "masked");
                for f in files {
                    println!("{}", f.display());
                }
            }
            Err(e) => {
                tracing::error!(input = %path.display(), "{e}");
                first_error.get_or_insert(e);
            }
        }
    }
    match first_error {
        None => Ok(()),
        Some(_) if settings.keep_going && succeeded > 0 => Ok(()),
        Some(e) => Err(e),
    }
}

pub fn compare(settings: &Settings, dir: &Path) -> Result<(), CliError> {
    let manifests = load_manifests(dir)?;
    let report = compare_strategies(&manifests)?;
    let out_dir = settings.out_or(dir);
    create_dir(&out_dir)?;
    write(&out_dir.join("strategy_report.csv"), report.to_csv())?;
    let json = report.to_json();
    write(&out_dir.join("strategy_report.json"), &json)?;
    print!("{json}");
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Status {
    Ok,
    Warn,
    Fail,
}

struct Diagnostics {
    rows: Vec<(String, Status, String)>,
}

impl Diagnostics {
    fn push(&mut self, check: impl Into<String>, status: Status, detail: impl Into<String>) {
        self.rows.push((check.into(), status, detail.into()));
    }

    fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.0.len()).max().unwrap_or(5).max(5);
        let mut out = format!("{:<width$}  STATUS  DETAIL\n", "CHECK");
        for (check, status, detail) in &self.rows {
            let s = match status {
                Status::Ok => "ok",
                Status::Warn => "warn",
                Status::Fail => "FAIL",
            };
            out.push_str(&format!("{check:<width$}  {s:<6}  {detail}\n"));
        }
        out
    }
}

pub fn validate(settings: &Settings) -> Result<(), CliError> {
    let mut d = Diagnostics { rows: Vec::new() };

    let graph = match &settings.graph {
        None => settings.graph().ok().inspect(|g| d.push("graph", Status::Ok, format!("bundled, {} nodes", g.node_count()))),
        Some(path) => match load_edge_list(path).and_then(|r| figpriv_core::risk::build_graph(&r)) {
            Ok(g) => {
                d.push("graph", Status::Ok, format!("{} nodes, {} edges", g.node_count(), g.edge_count()));
                Some(g)
            }
            Err(e) => {
                d.push("graph", Status::Fail, e.to_string());
                None
            }
        },
    };
    if let Some(g) = &graph {
        for channel in [figpriv_core::risk::Channel::Frequency, figpriv_core::risk::Channel::Loss] {
            let cfg = settings.score_config().with_channel(channel);
            if let Err(e) = risk_scores(g, &cfg) {
                d.push(format!("scores/{}", channel.as_str()), Status::Warn, e.to_string());
            }
        }
    }

    let table: Option<CategoryTable> = match settings.table() {
        Ok(t) => {
            d.push("categories", Status::Ok, format!("{} categories", t.len()));
            Some(t)
        }
        Err(e) => {
            d.push("categories", Status::Fail, e.to_string());
            None
        }
    };
    if let (Some(g), Some(t)) = (&graph, &table) {
        for cat in t.iter() {
            for syn in cat.synonym_nodes.iter().filter(|s| !g.contains(s)) {
                d.push(format!("synonym/{}", cat.name), Status::Warn, format!("node `{syn}` not in graph"));
            }
            let missing: BTreeSet<&str> = cat.pii_types.iter().filter(|p| !g.contains(p)).map(String::as_str).collect();
            if !missing.is_empty() {
                let list: Vec<&str> = missing.into_iter().collect();
                d.push(format!("pii/{}", cat.name), Status::Warn, format!("unscored: {}", list.join(", ")));
            }
        }
    }

    match settings.agents_config().and_then(|c| c.validate().map(|_| c).map_err(CliError::from)) {
        Ok(cfg) => {
            d.push("agents", Status::Ok, format!("{} roles", cfg.iter().count()));
            let mut dirs = BTreeSet::new();
            for (role, endpoint) in cfg.iter() {
                match endpoint.mock_dir() {
                    Some(dir) => {
                        dirs.insert(dir.to_string());
                    }
                    None => {
                        if let Some(var) = &endpoint.auth_token_env {
                            if std::env::var_os(var).is_none() {
                                d.push(format!("auth/{role}"), Status::Warn, format!("${var} is not set"));
                            }
                        }
                    }
                }
            }
            for dir in dirs {
                match MockBackend::load(&dir) {
                    Ok(m) => d.push("fixtures", Status::Ok, format!("{dir}: {} responses", m.len())),
                    Err(e) => d.push("fixtures", Status::Fail, e.to_string()),
                }
            }
        }
        Err(e) => d.push("agents", Status::Fail, e.to_string()),
    }

    print!("{}", d.render());
    let failures: Vec<String> = d
        .rows
        .iter()
        .filter(|r| r.1 == Status::Fail)
        .map(|r| format!("{}: {}", r.0, r.2))
        .collect();
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Data(failures.join("; ")))
    }
}

pub fn fixtures(settings: &Settings) -> Result<(), CliError> {
    let root = settings.out_or("fixtures");
    create_dir(&root)?;
    let summary = build_corpus(&root).map_err(|e| CliError::Data(e.to_string()))?;
    println!(
        "wrote {} images, {} comparison images and {} agent responses to {}",
        summary.images.len(),
        summary.compare_images.len(),
        summary.fixture_files,
        root.display()
    );
    Ok(())
}

pub fn probe(settings: &Settings, image: &Path, questions: Option<&Path>) -> Result<(), CliError> {
    let category = settings
        .category
        .as_deref()
        .ok_or_else(|| CliError::Config("probe needs --category".into()))?;
    let agents = settings.agent_set()?;
    let img = load_rgb(image).map_err(|e| CliError::Data(e.to_string()))?;
    let recognition = recognition_probe(&agents, &img, category)?;
    let answerability = match questions {
        Some(path) => Some(answerability_batch(&agents, &img, &load_questions(path)?, Some(category))?),
        None => None,
    };
    let report = json!({
        "image": image.display().to_string(),
        "category": category,
        "recognition": recognition.value,
        "answerability": answerability,
    });
    print!("{}", pretty(&report));
    Ok(())
}
