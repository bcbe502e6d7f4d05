use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("config parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("unknown sweep axis `{axis}`; valid axes: {valid}")]
    UnknownAxis { axis: String, valid: String },
}

#[derive(Debug, Error)]
pub enum SetupError {
    #[error("address range {start:#x}..{end:#x} overlaps an existing mapping")]
    Overlap { start: u64, end: u64 },
    #[error("range {start:#x}+{len:#x} is not aligned to the {page} byte page size")]
    Misaligned { start: u64, len: u64, page: u64 },
    #[error("physical memory exhausted allocating {0} bytes")]
    OutOfMemory(u64),
    #[error("engine not present or disabled")]
    EngineUnavailable,
    #[error("source node {source_node} out of range for graph with {nodes} nodes")]
    BadSource { source_node: u32, nodes: u32 },
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("bad CSR1 file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Setup(#[from] SetupError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("simulation assertion failed: {0}")]
    Assertion(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
