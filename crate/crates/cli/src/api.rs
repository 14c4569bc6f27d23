//! `serve` and the commands that talk to a running service.

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use adasup_client::Client;
use adasup_core::checkpoint::{self, Journal};
use adasup_core::data::Point;
use adasup_core::wire::{BoxObject, CategoryRef, Phase};
use adasup_server::{Hub, LoopSpec};
use clap::Args;
use tokio::runtime::Runtime;

use crate::{CliError, ConfigArgs, Result};

#[derive(Args)]
pub struct ServeArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Directory for the checkpoint and, once the run ends, its results.
    #[arg(long)]
    out: PathBuf,
    /// Continue this checkpoint; its config replaces `--config`/`--preset`.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Shut down when the run finishes instead of waiting for ctrl-c.
    #[arg(long)]
    exit_when_done: bool,
}

#[derive(Args)]
pub struct UrlArgs {
    #[arg(long, env = "ADASUP_URL", default_value = "http://127.0.0.1:8080")]
    url: String,
}

#[derive(Args)]
pub struct ClicksArgs {
    #[command(flatten)]
    url: UrlArgs,
    #[arg(long)]
    ticket: String,
    /// Click positions as `x,y`.
    #[arg(value_parser = parse_point)]
    clicks: Vec<Point>,
}

#[derive(Args)]
pub struct BoxesArgs {
    #[command(flatten)]
    url: UrlArgs,
    #[arg(long)]
    ticket: String,
    /// Boxes as `category:xmin,ymin,xmax,ymax`; category is a name or an index.
    #[arg(value_parser = parse_box)]
    boxes: Vec<BoxObject>,
}

fn numbers(s: &str, n: usize) -> std::result::Result<Vec<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    if v.len() != n {
        return Err(format!("expected {n} comma-separated numbers, got {}", v.len()));
    }
    Ok(v)
}

fn parse_point(s: &str) -> std::result::Result<Point, String> {
    let v = numbers(s, 2)?;
    Ok(Point::new(v[0], v[1]))
}

fn parse_box(s: &str) -> std::result::Result<BoxObject, String> {
    let (cat, coords) = s.split_once(':').ok_or("expected category:xmin,ymin,xmax,ymax")?;
    let v = numbers(coords, 4)?;
    let category = match cat.parse::<usize>() {
        Ok(i) => CategoryRef::Index(i),
        Err(_) => CategoryRef::Name(cat.to_owned()),
    };
    Ok(BoxObject {
        category,
        xmin: v[0],
        ymin: v[1],
        xmax: v[2],
        ymax: v[3],
    })
}

fn runtime() -> Result<Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Internal(format!("starting async runtime: {e}")))
}

fn block_on<T>(f: impl Future<Output = Result<T>>) -> Result<T> {
    runtime()?.block_on(f)
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v).map_err(adasup_core::Error::from)?);
    Ok(())
}

pub fn serve(args: ServeArgs) -> Result<()> {
    let (config, resume) = match &args.resume {
        Some(path) => {
            let state = checkpoint::load(path)?;
            (state.config.clone(), Some(state))
        }
        None => (args.config.load()?, None),
    };
    let dataset = config.load_dataset()?;
    let journal = Journal::in_dir(&args.out)?;
    let hub = Arc::new(Hub::new(&config, dataset.categories.clone(), Some(journal)));
    let rt = runtime()?;
    let listener = rt
        .block_on(tokio::net::TcpListener::bind(args.bind))
        .map_err(|e| CliError::Usage(format!("binding {}: {e}", args.bind)))?;
    let addr = listener
        .local_addr()
        .map_err(|e| CliError::Internal(format!("reading bound address: {e}")))?;
    println!("listening on http://{addr}");

    let worker = adasup_server::spawn_loop(
        hub.clone(),
        LoopSpec {
            config,
            dataset,
            resume,
            out_dir: Some(args.out.clone()),
        },
    );

    let watch = hub.clone();
    let exit_when_done = args.exit_when_done;
    let shutdown = async move {
        let done = async {
            loop {
                if matches!(watch.status().phase, Phase::Finished | Phase::Failed) {
                    break;
                }
                tokio::time::sleep(std::time::Duration::from_millis(200)).await;
            }
        };
        if exit_when_done {
            tokio::select! {
                _ = tokio::signal::ctrl_c() => {}
                _ = done => {}
            }
        } else {
            let _ = tokio::signal::ctrl_c().await;
        }
    };
    rt.block_on(adasup_server::serve(listener, hub.clone(), shutdown))
        .map_err(|e| CliError::Internal(format!("server: {e}")))?;

    let status = hub.status();
    if !matches!(status.phase, Phase::Finished | Phase::Failed) {
        println!("interrupted; progress is in {}", args.out.join(checkpoint::CHECKPOINT_FILE).display());
        hub.close();
    }
    match worker.join() {
        Ok(Ok(r)) => {
            println!(
                "{} episodes, stopped: {:?}, final mAP {:.4}",
                r.episodes.len(),
                r.stop_reason,
                r.final_report.map
            );
            Ok(())
        }
        // closing the hub under a live query surfaces as an annotation error
        Ok(Err(_)) if status.phase != Phase::Failed => Ok(()),
        Ok(Err(e)) => Err(e.into()),
        Err(_) => Err(CliError::Internal("run thread panicked".into())),
    }
}

pub fn status(args: UrlArgs) -> Result<()> {
    let s = block_on(async { Ok(Client::new(args.url).status().await?) })?;
    print_json(&s)
}

pub fn next(args: UrlArgs) -> Result<()> {
    match block_on(async { Ok(Client::new(args.url).next_item().await?) })? {
        Some(item) => print_json(&item),
        None => {
            println!("no open ticket");
            Ok(())
        }
    }
}

pub fn submit_clicks(args: ClicksArgs) -> Result<()> {
    let a = block_on(async { Ok(Client::new(args.url.url).submit_clicks(&args.ticket, args.clicks).await?) })?;
    print_json(&a)
}

pub fn submit_boxes(args: BoxesArgs) -> Result<()> {
    let a = block_on(async { Ok(Client::new(args.url.url).submit_boxes(&args.ticket, args.boxes).await?) })?;
    print_json(&a)
}

pub fn series(args: UrlArgs) -> Result<()> {
    let s = block_on(async { Ok(Client::new(args.url).series().await?) })?;
    print_json(&s)
}
