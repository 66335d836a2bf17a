use std::fmt;
use std::path::Path;

/// A failure reported as one `wfdiff: error[<kind>]: <message>` line.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    /// Wraps a clap parse failure. Clap's text spans several lines; the
    /// lines before its usage section are joined into one.
    pub fn usage(detail: String, text: &str) -> Self {
        let joined = text
            .lines()
            .map(str::trim)
            .take_while(|l| !l.starts_with("Usage:"))
            .filter(|l| !l.is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        let msg = joined.trim_start_matches("error: ");
        Self::new(
            "usage",
            if msg.is_empty() {
                detail
            } else {
                msg.to_string()
            },
        )
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new("io", format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Keep the line parseable even when a message carries newlines.
        let msg = self.message.replace(['\n', '\r'], " ");
        write!(f, "wfdiff: error[{}]: {msg}", self.kind)
    }
}

impl From<wfdiff_core::Error> for CliError {
    fn from(e: wfdiff_core::Error) -> Self {
        Self::new(e.kind(), e.to_string())
    }
}
