use thiserror::Error;

/// Errors produced anywhere in the mapping / simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid workload: {0}")]
    Workload(String),

    #[error("invalid architecture config at `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("malformed buffer label `{0}` (expected G<m>K_L<n>)")]
    Label(String),

    #[error("unsupported plan: {0}")]
    Plan(String),

    #[error("infeasible plan: {0}")]
    Infeasible(String),

    #[error("region {region} out of bounds for layer {layer}")]
    RegionBounds { layer: usize, region: String },

    #[error("trace exceeds the command cap of {cap} commands")]
    TraceTooLarge { cap: usize },

    #[error("trace line {line}: {reason}")]
    TraceParse { line: usize, reason: String },

    #[error("simulation error at command {seq}: {reason}")]
    Sim { seq: u64, reason: String },

    #[error("stats were produced under arch {stats} but energy was requested for arch {arch}")]
    DigestMismatch { stats: String, arch: String },

    #[error("cannot normalize against a zero baseline ({0})")]
    ZeroBaseline(&'static str),

    #[error("experiment point {point}: {source}")]
    Point {
        point: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
