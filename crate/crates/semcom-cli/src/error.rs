//! CLI-level errors. Every failure surfaces as a single stderr line of the
//! form `error[<category>]: <message>` so callers can dispatch on the
//! category without parsing prose.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    /// Bad or inconsistent configuration / arguments.
    Config,
    /// Dataset files or CSV artifacts unreadable or malformed.
    Data,
    /// Checkpoint files unreadable, malformed, or inconsistent.
    Checkpoint,
    /// Training diverged.
    Training,
    /// Model pieces that cannot interoperate.
    Compat,
    /// Filesystem trouble.
    Io,
    /// A bug on our side.
    Internal,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Config => "config",
            Category::Data => "data",
            Category::Checkpoint => "checkpoint",
            Category::Training => "training",
            Category::Compat => "compat",
            Category::Io => "io",
            Category::Internal => "internal",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub category: Category,
    pub message: String,
}

impl CliError {
    pub fn new(category: Category, message: impl Into<String>) -> Self {
        CliError {
            category,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Category::Config, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(Category::Data, message)
    }

    pub fn checkpoint(message: impl Into<String>) -> Self {
        Self::new(Category::Checkpoint, message)
    }

    pub fn io(path: impl fmt::Display, source: std::io::Error) -> Self {
        Self::new(Category::Io, format!("{path}: {source}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // One line, always: embedded newlines would break machine parsing.
        let flat = self.message.replace(['\n', '\r'], "; ");
        write!(f, "error[{}]: {}", self.category.as_str(), flat)
    }
}

impl std::error::Error for CliError {}

impl From<semcom::Error> for CliError {
    fn from(e: semcom::Error) -> Self {
        use semcom::Error as E;
        let category = match &e {
            E::Io { .. } => Category::Io,
            E::Data(_) => Category::Data,
            E::Incompatible(_) | E::Shape(_) | E::SymbolOutOfRange { .. } => Category::Compat,
            E::NonFiniteLoss { .. } => Category::Training,
            E::InvalidArgument(_) => Category::Config,
            E::MissingGradient(_) | E::NonScalarLoss(_) => Category::Internal,
        };
        CliError::new(category, e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
