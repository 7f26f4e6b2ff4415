use thiserror::Error;

pub const MISMATCH: u8 = 1;
pub const CONFIG: u8 = 2;
pub const TIMEOUT: u8 = 3;
pub const PORT_IN_USE: u8 = 4;
pub const DEVICE_BOUND: u8 = 5;
pub const SCENARIO: u8 = 6;
pub const UNKNOWN_PARTICIPANT: u8 = 7;
pub const IO: u8 = 8;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("expectation not met: {0}")]
    Mismatch(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("{0}")]
    DeviceAlreadyBound(String),
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("unknown participant {0}")]
    UnknownParticipant(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Mismatch(_) => MISMATCH,
            CliError::Config(_) => CONFIG,
            CliError::Timeout(_) => TIMEOUT,
            CliError::PortInUse(_) => PORT_IN_USE,
            CliError::DeviceAlreadyBound(_) => DEVICE_BOUND,
            CliError::Scenario(_) => SCENARIO,
            CliError::UnknownParticipant(_) => UNKNOWN_PARTICIPANT,
            CliError::Io(_) => IO,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_distinct() {
        let all = [
            CliError::Mismatch(String::new()),
            CliError::Config(String::new()),
            CliError::Timeout(String::new()),
            CliError::PortInUse(0),
            CliError::DeviceAlreadyBound(String::new()),
            CliError::Scenario(String::new()),
            CliError::UnknownParticipant(String::new()),
            CliError::Io(std::io::Error::other("x")),
        ];
        let mut codes: Vec<u8> = all.iter().map(CliError::code).collect();
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), all.len());
        assert!(!codes.contains(&0));
    }
}
