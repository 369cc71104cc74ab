//! Library side of the `votesim` command: configuration layering and the
//! subcommand implementations.

pub mod config;
pub mod run;

use std::sync::{Arc, Mutex, OnceLock};

use votesim_core::backends::{BackendError, ResponseCache};
use votesim_core::pipeline::PipelineError;

pub use config::{BackendKind, ConfigError, Overrides, RunConfig, Settings};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;
pub const EXIT_BACKEND: i32 = 4;

fn open_caches() -> &'static Mutex<Vec<Arc<ResponseCache>>> {
    static CACHES: OnceLock<Mutex<Vec<Arc<ResponseCache>>>> = OnceLock::new();
    CACHES.get_or_init(|| Mutex::new(Vec::new()))
}

/// Remember a cache so an interrupt can flush it.
pub fn register_cache(cache: Arc<ResponseCache>) {
    open_caches().lock().expect("cache registry").push(cache);
}

pub fn flush_caches() {
    if let Ok(caches) = open_caches().lock() {
        for c in caches.iter() {
            if let Err(e) = c.flush() {
                log::error!("flushing cache: {e}");
            }
        }
    }
}

/// Process exit status for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return EXIT_CONFIG;
        }
        match cause.downcast_ref::<PipelineError>() {
            Some(PipelineError::BackendExhausted { .. }) => return EXIT_PARTIAL,
            Some(PipelineError::Fatal { .. }) => return EXIT_BACKEND,
            Some(PipelineError::Render { .. }) => return EXIT_CONFIG,
            None => {}
        }
        if let Some(b) = cause.downcast_ref::<BackendError>() {
            return match b {
                BackendError::Config(_) => EXIT_CONFIG,
                _ => EXIT_BACKEND,
            };
        }
    }
    EXIT_FAILURE
}
