use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use nelaudit_client::{Client, ClientError};
use nelaudit_core::api::SessionSummary;
use nelaudit_core::corpus::{load_bundle, CorpusBundle, TripleRecord};
use nelaudit_core::cost::{compare_with_srs, derive_params, distribution_csv, TimeModel};
use nelaudit_core::estimation::{EstimateReport, StratumEstimate};
use nelaudit_core::synthetic::{split_sizes, synthetic_scheme, synthetic_triples, StratumShape};
use nelaudit_core::{
    generate_static_batch_with, load_corpus_file, recompute_on_cluster_complete, Batch, Corpus, EstimatorConfig,
    JudgmentsFile, RandomSource, SamplingDesign, StratificationScheme,
};
use nelaudit_service::AppState;
use serde::Serialize;
use serde_json::json;

use crate::table::Table;
use crate::{BatchArgs, Cli, Command, SessionCommand, SimulateArgs};

/// A mistake in the invocation or its inputs, as opposed to a bug.
#[derive(Debug)]
struct UserError(String);

impl std::fmt::Display for UserError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

fn user(msg: impl Into<String>) -> anyhow::Error {
    UserError(msg.into()).into()
}

/// 1 for bad input or environment, 2 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<ClientError>() {
            return match e {
                ClientError::Api { status, .. } if status.is_server_error() => 2,
                _ => 1,
            };
        }
        if cause.is::<UserError>()
            || cause.is::<std::io::Error>()
            || cause.is::<serde_json::Error>()
            || cause.is::<nelaudit_core::CorpusError>()
            || cause.is::<nelaudit_core::BatchError>()
            || cause.is::<nelaudit_core::SamplingError>()
            || cause.is::<nelaudit_core::estimation::EstimateError>()
            || cause.is::<nelaudit_core::cost::CostError>()
            || cause.is::<nelaudit_service::ServiceError>()
        {
            return 1;
        }
    }
    2
}

pub fn run(cli: Cli) -> Result<()> {
    let json = cli.json;
    match cli.command {
        Command::Ingest { corpus, scheme, out } => ingest(&corpus, scheme.as_deref(), &out, json),
        Command::Synth {
            strata,
            seed,
            out,
            scheme_out,
        } => synth(&strata, seed, &out, scheme_out.as_deref(), json),
        Command::Batch(args) => batch(&args, json),
        Command::Estimate {
            batch,
            judgments,
            per_stratum,
        } => estimate(&batch, &judgments, per_stratum, json),
        Command::SimulateSrs(args) => simulate_srs(&args, json),
        Command::Serve {
            corpus,
            port,
            host,
            data_dir,
        } => serve(&corpus, &host, port, &data_dir),
        Command::Session { server, command } => session(&server, command, json),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn read_batch(path: &Path) -> Result<Batch> {
    Batch::read(path).with_context(|| format!("reading batch {}", path.display()))
}

fn read_judgments(path: &Path) -> Result<JudgmentsFile> {
    JudgmentsFile::read(path).with_context(|| format!("reading judgments {}", path.display()))
}

fn stats_table(corpus: &Corpus) -> String {
    let mut t = Table::new(["Stratum", "Triples", "Clusters", "Weight"]);
    for (name, size, clusters, w) in corpus.stats() {
        t.row(vec![name, size.to_string(), clusters.to_string(), format!("{w:.4}")]);
    }
    t.rule();
    t.row(vec![
        "Total".into(),
        corpus.total_size().to_string(),
        corpus.n_clusters().to_string(),
        format!("{:.4}", 1.0),
    ]);
    t.render()
}

fn stats_json(corpus: &Corpus) -> serde_json::Value {
    let strata: Vec<_> = corpus
        .stats()
        .into_iter()
        .map(|(name, size, clusters, weight)| json!({"name": name, "triples": size, "clusters": clusters, "weight": weight}))
        .collect();
    json!({
        "corpus_hash": corpus.hash(),
        "total_triples": corpus.total_size(),
        "total_clusters": corpus.n_clusters(),
        "strata": strata,
    })
}

fn ingest(corpus_path: &Path, scheme_path: Option<&Path>, out: &Path, json: bool) -> Result<()> {
    let scheme = match scheme_path {
        Some(p) => StratificationScheme::from_file(p)?,
        None => StratificationScheme::gutbrainie(),
    };
    let corpus = load_corpus_file(corpus_path, &scheme)?;
    CorpusBundle::from_corpus(&corpus).write(out)?;
    if json {
        return print_json(&stats_json(&corpus));
    }
    print!("{}", stats_table(&corpus));
    println!("corpus hash {}", corpus.hash());
    println!("wrote {}", out.display());
    Ok(())
}

fn parse_shape(spec: &str) -> Result<(String, usize, usize)> {
    let bad = || user(format!("--stratum expects LABEL:TRIPLES:CLUSTERS, got {spec:?}"));
    let mut parts = spec.rsplitn(3, ':');
    let clusters: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    let triples: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    let label = parts.next().filter(|l| !l.trim().is_empty()).ok_or_else(bad)?;
    if clusters == 0 || clusters > triples {
        return Err(user(format!("{spec:?}: need 1 <= CLUSTERS <= TRIPLES")));
    }
    Ok((label.to_string(), triples, clusters))
}

fn synth(specs: &[String], seed: u64, out: &Path, scheme_out: Option<&Path>, json: bool) -> Result<()> {
    let mut rng = RandomSource::new(seed);
    let mut shapes = Vec::new();
    for spec in specs {
        let (label, triples, clusters) = parse_shape(spec)?;
        shapes.push(StratumShape::new(label, split_sizes(triples, clusters, &mut rng)));
    }
    let scheme = synthetic_scheme(&shapes)?;
    let mut text = String::new();
    for t in synthetic_triples(&shapes) {
        text.push_str(&serde_json::to_string(&TripleRecord::from(&t))?);
        text.push('\n');
    }
    fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    if let Some(p) = scheme_out {
        fs::write(p, serde_json::to_string_pretty(&scheme.to_json())?)
            .with_context(|| format!("writing {}", p.display()))?;
    }
    let total: usize = shapes.iter().map(StratumShape::size).sum();
    if json {
        return print_json(&json!({"seed": seed, "triples": total, "out": out}));
    }
    println!("seed {seed}: wrote {total} synthetic triples to {}", out.display());
    Ok(())
}

fn batch(args: &BatchArgs, json: bool) -> Result<()> {
    let corpus = load_bundle(&args.corpus)?;
    let m = (!matches!(
        args.design,
        nelaudit_core::DesignKind::Srs | nelaudit_core::DesignKind::Wcs
    ))
    .then_some(args.m);
    let design = SamplingDesign::new(args.design, m)?;
    let config = EstimatorConfig::new(args.alpha, args.epsilon)?.with_min_clusters(args.min_clusters);
    let (batch, report) = generate_static_batch_with(&corpus, &design, &config, args.seed, args.labeler)?;
    batch.write(&args.out)?;
    let n_units = batch.units().len();
    if json {
        return print_json(&json!({
            "header": batch.header,
            "triples": batch.len(),
            "units": n_units,
            "simulated_estimate": report,
            "out": args.out,
        }));
    }
    println!(
        "seed {} | design {} | m {} | epsilon {} | alpha {} | labeler {}",
        args.seed,
        design.kind,
        design.m.map_or("-".to_string(), |m| m.to_string()),
        args.epsilon,
        args.alpha,
        args.labeler
    );
    println!(
        "{} triples in {} units; simulated MoE {} ({})",
        batch.len(),
        n_units,
        fmt_opt(report.moe),
        if report.converged {
            "converged"
        } else {
            "corpus exhausted before convergence"
        }
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or("n/a".to_string(), |v| format!("{v:.4}"))
}

/// Offline estimate from a batch and an exported judgments file.
fn estimate_report(batch: &Batch, file: &JudgmentsFile) -> Result<EstimateReport> {
    if file.corpus_hash != batch.header.corpus_hash {
        return Err(user(format!(
            "judgments corpus hash {} does not match the batch's {}",
            file.corpus_hash, batch.header.corpus_hash
        )));
    }
    let unknown = file.unknown_triples(batch);
    if !unknown.is_empty() {
        return Err(user(format!(
            "judgments reference triples not in the batch: {}",
            unknown.join(", ")
        )));
    }
    Ok(recompute_on_cluster_complete(
        &file.log(),
        batch,
        &batch.estimator_config()?,
    ))
}

fn estimate(batch_path: &Path, judgments_path: &Path, per_stratum: bool, json: bool) -> Result<()> {
    let batch = read_batch(batch_path)?;
    let file = read_judgments(judgments_path)?;
    let report = estimate_report(&batch, &file)?;
    if json {
        return print_json(&report);
    }
    print!("{}", render_report(&report, per_stratum));
    Ok(())
}

fn stratum_row(s: &StratumEstimate) -> Vec<String> {
    vec![
        s.name.clone(),
        format!("{:.4}", s.weight),
        s.n.to_string(),
        s.n_triples.to_string(),
        fmt_opt(s.mu_hat),
        fmt_opt(s.moe),
        match (s.ci_low, s.ci_high) {
            (Some(l), Some(h)) => format!("[{l:.4}, {h:.4}]"),
            _ => "n/a".into(),
        },
    ]
}

fn render_report(r: &EstimateReport, per_stratum: bool) -> String {
    let level = format!("{:.0}% CI", (1.0 - r.alpha) * 100.0);
    let mut t = Table::new([
        "Stratum",
        "Weight",
        "Clusters",
        "Triples",
        "Accuracy",
        "MoE",
        level.as_str(),
    ]);
    if per_stratum {
        for s in &r.strata {
            t.row(stratum_row(s));
        }
        t.rule();
    }
    t.row(vec![
        format!("Overall ({})", r.design.to_string().to_uppercase()),
        format!("{:.4}", 1.0),
        r.n_clusters_judged.to_string(),
        r.n_triples_in_estimate.to_string(),
        fmt_opt(r.mu_ss),
        fmt_opt(r.moe),
        match (r.ci_low, r.ci_high) {
            (Some(l), Some(h)) => format!("[{l:.4}, {h:.4}]"),
            _ => "n/a".into(),
        },
    ]);
    let mut out = t.render();
    out.push_str(&format!(
        "epsilon {} | converged {} | judged triples {} | excluded incomplete clusters {}\n",
        r.epsilon, r.converged, r.n_triples_judged, r.n_units_incomplete
    ));
    out
}

fn simulate_srs(args: &SimulateArgs, json: bool) -> Result<()> {
    let batch = read_batch(&args.batch)?;
    let file = read_judgments(&args.judgments)?;
    let unknown = file.unknown_triples(&batch);
    if !unknown.is_empty() {
        return Err(user(format!(
            "judgments reference triples not in the batch: {}",
            unknown.join(", ")
        )));
    }
    let cluster_of: std::collections::HashMap<&str, (usize, &str)> = batch
        .entries
        .iter()
        .map(|e| {
            (
                e.record.triple_id.as_str(),
                (e.stratum_index, e.cluster_surface.as_str()),
            )
        })
        .collect();
    let log = file.log();
    let observations: Vec<((usize, &str), f64)> = log
        .first_judgments()
        .into_iter()
        .map(|j| (cluster_of[j.triple_id.as_str()], j.elapsed_seconds))
        .collect();
    let (model, derived) = match (args.t_base, args.delta) {
        (Some(t), Some(d)) => (TimeModel::new(t, d)?, None),
        (None, None) => {
            let d = derive_params(&observations, Some(args.outlier_cap))?;
            (d.model, Some(d))
        }
        _ => return Err(user("pass both --t-base and --delta, or neither to derive them")),
    };
    let sequence: Vec<(usize, &str)> = observations.iter().map(|(k, _)| *k).collect();
    let (report, raw) = compare_with_srs(&sequence, args.perms, args.boot, args.seed, &model)?;
    if let Some(p) = &args.csv {
        fs::write(p, distribution_csv(&raw)).with_context(|| format!("writing {}", p.display()))?;
    }
    if json {
        return print_json(&json!({"report": report, "derived": derived}));
    }
    println!(
        "seed {} | permutations {} | bootstrap {}",
        report.seed, report.n_perms, report.n_boot
    );
    if let Some(d) = derived {
        println!(
            "derived t_base {:.2} s, delta {:.2} s from {} switch and {} no-switch triples ({} over the {} s cap dropped)",
            d.model.t_base_s, d.model.delta_switch_s, d.switch_triples, d.noswitch_triples, d.excluded, args.outlier_cap
        );
    }
    let mut t = Table::new(["Order", "Triples", "Switches", "No-switches", "Time (min)"]);
    t.row(vec![
        "Annotated".into(),
        report.n_t.to_string(),
        report.observed_switches.to_string(),
        (report.n_t.saturating_sub(1) - report.observed_switches).to_string(),
        format!("{:.2}", report.modeled_time_design_min),
    ]);
    t.row(vec![
        "SRS (mean)".into(),
        report.n_t.to_string(),
        format!("{:.2}", report.mean_switches),
        format!("{:.2}", report.mean_noswitches),
        format!("{:.2}", report.modeled_time_baseline_min),
    ]);
    print!("{}", t.render());
    println!(
        "SRS switches 95% CI [{:.2}, {:.2}], no-switches [{:.2}, {:.2}]",
        report.ci.switches[0], report.ci.switches[1], report.ci.noswitches[0], report.ci.noswitches[1]
    );
    println!("time ratio {:.3}, savings {:.2} min", report.ratio, report.savings_min);
    Ok(())
}

fn serve(corpus_path: &Path, host: &str, port: u16, data_dir: &Path) -> Result<()> {
    let corpus = load_bundle(corpus_path)?;
    let state =
        AppState::open(data_dir, corpus.hash()).with_context(|| format!("opening data dir {}", data_dir.display()))?;
    let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .with_context(|| format!("binding {host}:{port}"))?;
        tracing::info!(addr = %listener.local_addr()?, corpus = corpus.hash(), "serving");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
            tracing::info!("shutting down");
        };
        nelaudit_service::serve(listener, state, shutdown).await?;
        Ok(())
    })
}

fn print_summary(s: &SessionSummary) {
    println!(
        "{}  {}/{} judged  cursor {}  units {}  converged {}",
        s.session_id, s.progress.judged, s.progress.total, s.progress.cursor, s.n_units, s.converged
    );
}

fn session(server: &str, command: SessionCommand, json: bool) -> Result<()> {
    let client = Client::new(server);
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .context("starting runtime")?;
    rt.block_on(async move {
        match command {
            SessionCommand::Create { batch, judgments } => {
                let text = fs::read_to_string(&batch).with_context(|| format!("reading {}", batch.display()))?;
                let seed = match judgments {
                    Some(p) => Some(fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?),
                    None => None,
                };
                let s = client.create_session_with(text, seed).await?;
                if json {
                    return print_json(&s);
                }
                print_summary(&s);
            }
            SessionCommand::List => {
                let all = client.list_sessions().await?;
                if json {
                    return print_json(&all);
                }
                all.iter().for_each(print_summary);
            }
            SessionCommand::Status { id } => {
                let s = client.session(&id).await?;
                if json {
                    return print_json(&s);
                }
                print_summary(&s);
            }
            SessionCommand::Estimate { id } => {
                let r = client.estimate(&id).await?;
                if json {
                    return print_json(&r);
                }
                print!("{}", render_report(&r, true));
            }
            SessionCommand::Export { id, out } => {
                let file = client.export(&id).await?;
                fs::write(&out, file.to_json_pretty()).with_context(|| format!("writing {}", out.display()))?;
                if json {
                    return print_json(&json!({"session_id": id, "judgments": file.judgments.len(), "out": out}));
                }
                println!("wrote {} judgments to {}", file.judgments.len(), out.display());
            }
            SessionCommand::Import { id, judgments } => {
                let file = read_judgments(&judgments)?;
                let r = client.import(&id, &file).await?;
                if json {
                    return print_json(&r);
                }
                println!(
                    "merged {} new judgments; {}/{} judged",
                    r.added, r.progress.judged, r.progress.total
                );
            }
        }
        Ok::<_, anyhow::Error>(())
    })
    .map_err(|e| match e.downcast_ref::<ClientError>() {
        Some(ClientError::Http(_)) => e.context(format!("is the service running at {server}?")),
        _ => e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_parse() {
        assert_eq!(parse_shape("DDF:10:3").unwrap(), ("DDF".into(), 10, 3));
        assert_eq!(parse_shape("a:b:10:3").unwrap(), ("a:b".into(), 10, 3));
        assert!(parse_shape("DDF:3:10").is_err());
        assert!(parse_shape(":3:1").is_err());
        assert!(parse_shape("DDF:x:1").is_err());
    }

    #[test]
    fn user_errors_exit_1() {
        assert_eq!(exit_code(&user("bad")), 1);
        assert_eq!(exit_code(&anyhow::anyhow!("bug")), 2);
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "x");
        assert_eq!(exit_code(&anyhow::Error::from(io).context("reading")), 1);
    }
}
