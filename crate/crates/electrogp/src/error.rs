/// Errors shared across the toolkit.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Invalid input: out-of-range coordinate, bad shape, bad setting.
    Domain(String),
    /// Gram matrix stayed non-positive-definite after jitter escalation.
    Conditioning(String),
    /// Rejection sampler hit its attempt cap. Carries the cap and the
    /// acceptance-rate upper bound implied by zero acceptances.
    RejectionCap { attempts: u64, acceptance_rate: f64 },
    /// The k-NN graph split into more than one connected component.
    /// Each inner vector lists the row indices of one component.
    DisconnectedGraph { components: Vec<Vec<usize>> },
    /// Model (de)serialization failure.
    Persistence(String),
    /// Stored data checksum does not match the data provided.
    ChecksumMismatch { expected: String, actual: String },
    /// Failure inside a named fitting stage.
    Stage(&'static str, Box<Error>),
}

impl std::error::Error for Error {}

impl std::fmt::Display for Error {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Domain(msg) => write!(f, "invalid input: {}", msg),
            Self::Conditioning(msg) => write!(f, "conditioning failure: {}", msg),
            Self::RejectionCap {
                attempts,
                acceptance_rate,
            } => write!(
                f,
                "rejection sampling exceeded {} attempts (acceptance rate below {:.3e})",
                attempts, acceptance_rate
            ),
            Self::DisconnectedGraph { components } => {
                write!(
                    f,
                    "neighbor graph is disconnected into {} components: ",
                    components.len()
                )?;
                for (i, comp) in components.iter().enumerate() {
                    if i > 0 {
                        write!(f, " | ")?;
                    }
                    write!(f, "{{{}}}", summarize(comp))?;
                }
                write!(f, " (increase k_neighbors)")
            }
            Self::Persistence(msg) => write!(f, "model persistence: {}", msg),
            Self::ChecksumMismatch { expected, actual } => write!(
                f,
                "data checksum mismatch: model was fitted on data with checksum {}, got {}",
                expected, actual
            ),
            Self::Stage(stage, inner) => write!(f, "stage {}: {}", stage, inner),
        }
    }
}

fn summarize(rows: &[usize]) -> String {
    const SHOWN: usize = 8;
    let head: Vec<String> = rows.iter().take(SHOWN).map(|r| r.to_string()).collect();
    if rows.len() > SHOWN {
        format!("{}, .. {} rows", head.join(", "), rows.len())
    } else {
        head.join(", ")
    }
}

pub type Result<T> = std::result::Result<T, Error>;
