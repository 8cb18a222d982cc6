//! OpenAI-compatible wire transport over blocking HTTP.
//!
//! Covers any provider speaking the chat-completions and embeddings JSON
//! protocol behind a configurable base URL. Credentials come from the
//! environment; a missing key simply sends no Authorization header, which
//! suits local servers.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{CallFailure, ChatReply, ChatRequest, EmbedReply, Provider, TokenUsage};

/// Where one wire protocol lives and which env var holds its credential.
#[derive(Debug, Clone)]
pub struct HttpEndpoint {
    pub base_url: String,
    pub api_key: Option<String>,
}

impl HttpEndpoint {
    pub fn from_env(base_url: &str, api_key_env: Option<&str>) -> Self {
        let api_key = api_key_env.and_then(|name| std::env::var(name).ok());
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
        }
    }
}

pub struct HttpProvider {
    agent: ureq::Agent,
    chat: HttpEndpoint,
    embeddings: HttpEndpoint,
}

impl HttpProvider {
    pub fn new(chat: HttpEndpoint, embeddings: HttpEndpoint, timeout: Duration) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Self {
            agent,
            chat,
            embeddings,
        }
    }

    fn post<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
        &self,
        endpoint: &HttpEndpoint,
        path: &str,
        body: &Req,
    ) -> Result<Resp, CallFailure> {
        let url = format!("{}{path}", endpoint.base_url);
        let mut request = self
            .agent
            .post(&url)
            .set("Content-Type", "application/json");
        if let Some(key) = &endpoint.api_key {
            request = request.set("Authorization", &format!("Bearer {key}"));
        }
        let response = request.send_json(body).map_err(classify)?;
        response.into_json().map_err(|e| CallFailure::Retryable {
            message: format!("failed to decode response body: {e}"),
        })
    }
}

fn classify(error: ureq::Error) -> CallFailure {
    match error {
        ureq::Error::Status(status, response) => {
            let message = response
                .into_string()
                .unwrap_or_default()
                .chars()
                .take(512)
                .collect();
            // 429 and request-timeout are transient; everything else in
            // 4xx means the request itself is wrong.
            if status == 429 || status == 408 || (500..600).contains(&status) {
                CallFailure::Retryable {
                    message: format!("status {status}: {message}"),
                }
            } else {
                CallFailure::Permanent { status, message }
            }
        }
        ureq::Error::Transport(t) => CallFailure::Retryable {
            message: t.to_string(),
        },
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatCompletionBody<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatCompletionResponse {
    choices: Vec<WireChoice>,
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Serialize)]
struct EmbeddingsBody<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingDatum>,
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f64>,
}

impl From<WireUsage> for TokenUsage {
    fn from(w: WireUsage) -> Self {
        Self {
            prompt_tokens: w.prompt_tokens,
            completion_tokens: w.completion_tokens,
        }
    }
}

impl Provider for HttpProvider {
    fn chat(&self, request: &ChatRequest) -> Result<ChatReply, CallFailure> {
        let mut messages = Vec::with_capacity(2);
        if !request.system_prompt.is_empty() {
            messages.push(WireMessage {
                role: "system",
                content: &request.system_prompt,
            });
        }
        messages.push(WireMessage {
            role: "user",
            content: &request.user_prompt,
        });
        let body = ChatCompletionBody {
            model: &request.model,
            messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let response: ChatCompletionResponse = self.post(&self.chat, "/chat/completions", &body)?;
        let choice = response
            .choices
            .into_iter()
            .next()
            .ok_or(CallFailure::Permanent {
                status: 200,
                message: "response contained no choices".into(),
            })?;
        Ok(ChatReply {
            text: choice.message.content,
            usage: response.usage.map(Into::into),
        })
    }

    fn embed(&self, model: &str, texts: &[String]) -> Result<EmbedReply, CallFailure> {
        let body = EmbeddingsBody {
            model,
            input: texts,
        };
        let response: EmbeddingsResponse = self.post(&self.embeddings, "/embeddings", &body)?;
        if response.data.len() != texts.len() {
            return Err(CallFailure::Permanent {
                status: 200,
                message: format!(
                    "asked for {} embeddings, got {}",
                    texts.len(),
                    response.data.len()
                ),
            });
        }
        let mut data = response.data;
        data.sort_by_key(|d| d.index);
        Ok(EmbedReply {
            vectors: data.into_iter().map(|d| d.embedding).collect(),
            usage: response.usage.map(Into::into),
        })
    }
}
