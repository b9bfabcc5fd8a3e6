use std::io::Write;
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use icuau_core::analytics::AssociationOptions;
use icuau_server::{bundled_console_dir, router, serve, AppState, ServerOptions};

use crate::config::{required, RunConfig};
use crate::pipeline::{load_reports, open_store};
use crate::{ServeArgs, UsageError};

pub fn run(args: ServeArgs) -> Result<()> {
    let mut stdout = std::io::stdout();
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    for (flag, slot) in [
        (args.manifest, &mut cfg.paths.manifest),
        (args.annotations, &mut cfg.paths.annotations),
        (args.reports, &mut cfg.paths.reports),
        (args.images, &mut cfg.paths.images),
        (args.metrics, &mut cfg.paths.metrics),
        (args.static_dir, &mut cfg.server.static_dir),
    ] {
        if flag.is_some() {
            *slot = flag;
        }
    }
    cfg.server.host = args.host.unwrap_or(cfg.server.host);
    cfg.server.port = args.port.unwrap_or(cfg.server.port);
    if args.no_cors {
        cfg.server.cors = false;
    }
    let addr: SocketAddr = (cfg.server.host.as_str(), cfg.server.port)
        .to_socket_addrs()
        .ok()
        .and_then(|mut a| a.next())
        .ok_or_else(|| UsageError(format!("cannot resolve {}:{}", cfg.server.host, cfg.server.port)))?;

    let manifest = required(&cfg.paths.manifest, "manifest")?;
    let journal = required(&cfg.paths.annotations, "annotations")?;
    let store = Arc::new(open_store(manifest, journal)?);
    let reports = match &cfg.paths.reports {
        Some(p) => load_reports(p)?,
        None => Vec::new(),
    };
    let image_root = cfg
        .paths
        .images
        .clone()
        .unwrap_or_else(|| manifest.parent().unwrap_or(Path::new(".")).to_path_buf());
    let mut state = AppState::new(store, reports, image_root);
    state.metrics_path = cfg.paths.metrics.clone();
    state.association = AssociationOptions {
        attribution: cfg.data.attribution,
        ..AssociationOptions::default()
    };
    let opts = ServerOptions {
        static_dir: Some(cfg.server.static_dir.clone().unwrap_or_else(bundled_console_dir)),
        cors: cfg.server.cors,
    };
    let app = router(Arc::new(state), &opts);
    let rt = tokio::runtime::Runtime::new()?;
    writeln!(stdout, "listening on http://{addr}")?;
    rt.block_on(serve(addr, app))
        .with_context(|| format!("serving on {addr}"))
}
