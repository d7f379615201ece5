use std::time::Duration;

use super::{AnnotationRequest, AnnotationResponse, AnnotatorClient, AnnotatorClientConfig, TransportError};

/// HTTP annotator: POSTs the request as JSON and expects an
/// [`AnnotationResponse`] body. 408, 429 and 5xx are retryable; other
/// non-2xx statuses are fatal.
pub struct RemoteAnnotator {
    endpoint: String,
    agent: ureq::Agent,
}

impl RemoteAnnotator {
    pub fn new(config: &AnnotatorClientConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { endpoint: config.endpoint.clone(), agent }
    }
}

impl AnnotatorClient for RemoteAnnotator {
    fn name(&self) -> &str {
        "remote"
    }

    fn send(&self, request: &AnnotationRequest) -> Result<AnnotationResponse, TransportError> {
        let mut resp =
            self.agent.post(&self.endpoint).send_json(request).map_err(|e| TransportError::Retryable(e.to_string()))?;
        let status = resp.status().as_u16();
        match status {
            200..=299 => {
                resp.body_mut().read_json::<AnnotationResponse>().map_err(|e| TransportError::Malformed(e.to_string()))
            }
            408 | 429 | 500..=599 => Err(TransportError::Retryable(format!("HTTP {status}"))),
            _ => Err(TransportError::Fatal(format!("HTTP {status}"))),
        }
    }
}
