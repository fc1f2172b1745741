use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::Args;
use conekp::model::{load_checkpoint, KeypointModel};
use serde::{Deserialize, Serialize};

use crate::config;
use crate::server::{router, AppState, FsStore};

pub const PORT_ENV: &str = "KPR_PORT";

#[derive(Args, Debug, Default, Serialize)]
pub struct ServeFlags {
    /// Dataset directory with `images/` and `annotations/`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Model for `/api/predictions`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long, env = PORT_ENV)]
    pub port: Option<u16>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub host: String,
    pub port: u16,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            data: None,
            checkpoint: None,
            host: "127.0.0.1".into(),
            port: 8080,
        }
    }
}

pub fn state(cfg: &ServeConfig) -> Result<AppState> {
    let Some(data) = &cfg.data else {
        bail!("serve needs a dataset directory (--data)")
    };
    let store = FsStore::open(data)?;
    let model = match &cfg.checkpoint {
        Some(p) => Some(Arc::new(KeypointModel::from_checkpoint(
            &load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?,
        )?)),
        None => None,
    };
    Ok(AppState::new(Arc::new(store), model))
}

pub fn run(cfg: &ServeConfig) -> Result<()> {
    let app = router(state(cfg)?);
    eprint!("{}", config::to_toml(cfg)?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let addr = format!("{}:{}", cfg.host, cfg.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .context("server error")
    })
}
