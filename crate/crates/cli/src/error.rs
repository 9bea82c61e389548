use thiserror::Error;
use wisense_core::CoreError;
use wisense_csi::CsiError;
use wisense_monitor::MonitorError;

/// Process exit statuses.
pub mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 2;
    pub const DATA: u8 = 3;
    pub const RUNTIME: u8 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    /// A failure inside one pipeline stage, with the exit status it maps to.
    #[error("{stage}: {message}")]
    Stage {
        stage: &'static str,
        code: u8,
        message: String,
    },
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Stage { code, .. } => *code,
        }
    }

    pub fn csi(stage: &'static str, e: CsiError) -> Self {
        let code = csi_code(&e);
        CliError::Stage {
            stage,
            code,
            message: e.to_string(),
        }
    }

    pub fn core(stage: &'static str, e: CoreError) -> Self {
        let code = core_code(&e);
        CliError::Stage {
            stage,
            code,
            message: e.to_string(),
        }
    }

    pub fn monitor(e: MonitorError) -> Self {
        let code = match &e {
            MonitorError::Config(_) => exit::USAGE,
            MonitorError::Io { .. } | MonitorError::Stage { .. } => exit::RUNTIME,
            MonitorError::Csi(c) => csi_code(c),
            MonitorError::Model(m) => core_code(m),
        };
        CliError::Stage {
            stage: "monitor",
            code,
            message: e.to_string(),
        }
    }

    pub fn io(stage: &'static str, e: impl std::fmt::Display) -> Self {
        CliError::Stage {
            stage,
            code: exit::RUNTIME,
            message: e.to_string(),
        }
    }
}

fn csi_code(e: &CsiError) -> u8 {
    match e {
        CsiError::Io { .. } => exit::RUNTIME,
        CsiError::Param(_) | CsiError::Config(_) => exit::USAGE,
        CsiError::Format(_) | CsiError::Data(_) | CsiError::Shape { .. } => exit::DATA,
    }
}

fn core_code(e: &CoreError) -> u8 {
    match e {
        CoreError::Csi(c) => csi_code(c),
        CoreError::Config(_) | CoreError::Param(_) | CoreError::Build { .. } => exit::USAGE,
        CoreError::Format(_) | CoreError::IncompleteCheckpoint { .. } | CoreError::TopologyMismatch { .. } => exit::DATA,
        CoreError::Io { .. } | CoreError::Tensor(_) | CoreError::Diverged { .. } => exit::RUNTIME,
    }
}
