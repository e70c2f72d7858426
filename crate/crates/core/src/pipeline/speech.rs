use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpeechError {
    #[error("adapter does not support {0}")]
    Unsupported(&'static str),
    #[error("adapter does not attest to on-device processing")]
    NotLocal,
    #[error("{0}")]
    Failed(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SpeechCapabilities {
    pub speech_to_text: bool,
    pub text_to_speech: bool,
}

/// Hook for platform speech engines around the text pipeline.
pub trait SpeechAdapter: Send + Sync {
    fn capabilities(&self) -> SpeechCapabilities;

    /// True when the adapter processes audio on this device only.
    fn is_local(&self) -> bool;

    fn speech_to_text(&self, _audio: &[u8]) -> Result<String, SpeechError> {
        Err(SpeechError::Unsupported("speech to text"))
    }

    fn text_to_speech(&self, _text: &str) -> Result<(), SpeechError> {
        Err(SpeechError::Unsupported("text to speech"))
    }
}
