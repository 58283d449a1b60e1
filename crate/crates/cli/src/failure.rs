use std::fmt;

/// Failure classes and their process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Internal,
    /// Bad command line, manifest schema or model parameters.
    Usage,
    Schema,
    /// The schedule stopped without reaching the tolerance.
    Diverged,
    FrequencyExcluded,
    /// Missing or corrupted artifact.
    Artifact,
    /// Verification ran but exceeded its tolerance.
    Verification,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Internal => 1,
            Kind::Usage | Kind::Schema => 2,
            Kind::Diverged => 3,
            Kind::FrequencyExcluded => 4,
            Kind::Artifact => 5,
            Kind::Verification => 6,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Kind::Internal => "internal",
            Kind::Usage => "usage",
            Kind::Schema => "schema",
            Kind::Diverged => "diverged",
            Kind::FrequencyExcluded => "frequency_excluded",
            Kind::Artifact => "artifact",
            Kind::Verification => "verification",
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
}

impl Failure {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind.label(), self.message)
    }
}

impl std::error::Error for Failure {}

fn engine_kind(e: &kamred::Error) -> Kind {
    match e {
        kamred::Error::FrequencyExcluded { .. } | kamred::Error::NoAdmissibleFrequency { .. } => {
            Kind::FrequencyExcluded
        }
        kamred::Error::InvalidArgument(_) | kamred::Error::StepSize { .. } => Kind::Usage,
        _ => Kind::Internal,
    }
}

impl From<kamred::Error> for Failure {
    fn from(e: kamred::Error) -> Self {
        Failure::new(engine_kind(&e), e.to_string())
    }
}

/// The first [`Failure`] or engine error in the chain decides the class.
pub fn classify(err: &anyhow::Error) -> Kind {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.kind;
        }
        if let Some(e) = cause.downcast_ref::<kamred::Error>() {
            return engine_kind(e);
        }
    }
    Kind::Internal
}
