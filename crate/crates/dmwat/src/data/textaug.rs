//! Pluggable text augmentation: a deterministic offline paraphraser and a
//! minimal remote client for any chat-completion-style JSON endpoint.

use super::generator::{BENIGN_KEYWORDS, SEVERE_KEYWORDS};
use crate::error::{Error, Result};
use crate::rng::from_seed;
use rand::Rng;
use std::time::Duration;

pub const ENV_LLM_URL: &str = "DMWAT_LLM_URL";
pub const ENV_LLM_TOKEN: &str = "DMWAT_LLM_TOKEN";

#[derive(Debug, Clone)]
pub enum TextAugmentClient {
    /// Seeded synonym/paraphrase templates; class-bearing keywords preserved.
    Offline { keywords: Vec<String> },
    /// One JSON POST per note: `{"prompt": ..., "max_tokens": ...}` in,
    /// `{"text": ...}` out. Credentials come from the environment only.
    Remote {
        url: String,
        token: Option<String>,
        timeout: Duration,
    },
}

impl TextAugmentClient {
    pub fn offline() -> Self {
        let keywords = SEVERE_KEYWORDS
            .iter()
            .chain(BENIGN_KEYWORDS.iter())
            .map(|s| (*s).to_string())
            .collect();
        TextAugmentClient::Offline { keywords }
    }

    /// Remote mode when `DMWAT_LLM_URL` is set, offline otherwise.
    pub fn from_env() -> Self {
        match std::env::var(ENV_LLM_URL) {
            Ok(url) if !url.is_empty() => TextAugmentClient::Remote {
                url,
                token: std::env::var(ENV_LLM_TOKEN).ok().filter(|t| !t.is_empty()),
                timeout: Duration::from_secs(10),
            },
            _ => TextAugmentClient::offline(),
        }
    }
}

/// Neutral-word alternatives the offline paraphraser may swap in. Keywords
/// are never touched, so the class-bearing signal survives every paraphrase.
const SYNONYMS: [(&str, &[&str]); 10] = [
    ("wound", &["lesion", "ulcer", "site"]),
    ("noted", &["observed", "seen", "documented"]),
    ("present", &["evident", "apparent"]),
    ("shows", &["exhibits", "presents"]),
    ("patient", &["pt", "resident"]),
    ("dressing", &["bandage", "covering"]),
    ("site", &["area", "region"]),
    ("today", &["currently", "at this visit"]),
    ("steadily", &["gradually", "progressively"]),
    ("strong", &["pronounced", "marked"]),
];

const PREFIXES: [&str; 4] = ["", "on exam , ", "assessment : ", "follow up : "];

/// Produce `n` paraphrases of a note. Offline mode is pure and deterministic
/// given the seed; remote mode performs `n` HTTP calls and any failure is an
/// error the caller is expected to log and skip, leaving the dataset as it
/// was.
pub fn augment_text(
    note: &str,
    client: &TextAugmentClient,
    n: usize,
    seed: u64,
) -> Result<Vec<String>> {
    if n < 1 {
        return Err(Error::InvalidArgument(
            "text augmentation needs n >= 1".into(),
        ));
    }
    match client {
        TextAugmentClient::Offline { keywords } => {
            Ok((0..n).map(|k| offline_paraphrase(note, keywords, seed ^ (k as u64).wrapping_mul(0x9e3779b97f4a7c15))).collect())
        }
        TextAugmentClient::Remote { url, token, timeout } => {
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                out.push(remote_paraphrase(note, url, token.as_deref(), *timeout)?);
            }
            Ok(out)
        }
    }
}

fn offline_paraphrase(note: &str, keywords: &[String], seed: u64) -> String {
    let mut rng = from_seed(seed);
    let mut words: Vec<String> = Vec::new();
    for word in note.split_whitespace() {
        if keywords.iter().any(|k| k == word) {
            words.push(word.to_string());
            continue;
        }
        let mut replaced = false;
        for (from, to) in SYNONYMS {
            if word == from && rng.random_bool(0.6) {
                words.push(to[rng.random_range(0..to.len())].to_string());
                replaced = true;
                break;
            }
        }
        if !replaced {
            words.push(word.to_string());
        }
    }
    let prefix = PREFIXES[rng.random_range(0..PREFIXES.len())];
    format!("{prefix}{}", words.join(" "))
}

fn remote_paraphrase(
    note: &str,
    url: &str,
    token: Option<&str>,
    timeout: Duration,
) -> Result<String> {
    let body = serde_json::json!({
        "prompt": format!(
            "Paraphrase this clinical wound note, keeping all clinical findings: {note}"
        ),
        "max_tokens": 120,
    })
    .to_string();

    let config = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .build();
    let agent = ureq::Agent::new_with_config(config);
    let mut req = agent.post(url).content_type("application/json");
    if let Some(tok) = token {
        req = req.header("authorization", format!("Bearer {tok}"));
    }
    let mut resp = req
        .send(body.as_bytes())
        .map_err(|e| Error::TextAugment(format!("POST {url}: {e}")))?;
    if resp.status() != 200 {
        return Err(Error::TextAugment(format!(
            "POST {url}: status {}",
            resp.status()
        )));
    }
    let raw = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| Error::TextAugment(format!("reading reply: {e}")))?;
    let value: serde_json::Value =
        serde_json::from_str(&raw).map_err(|e| Error::TextAugment(format!("bad JSON reply: {e}")))?;
    value
        .get("text")
        .and_then(|t| t.as_str())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::TextAugment("reply missing non-empty `text` field".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const NOTE: &str = "wound on heel with purulent drainage and foul odor , margins worsening";

    #[test]
    fn offline_is_deterministic() {
        let client = TextAugmentClient::offline();
        let a = augment_text(NOTE, &client, 1, 42).unwrap();
        let b = augment_text(NOTE, &client, 1, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn offline_preserves_class_keywords() {
        let client = TextAugmentClient::offline();
        for seed in 0..30 {
            let out = augment_text(NOTE, &client, 1, seed).unwrap();
            assert!(out[0].contains("odor"), "seed {seed}: {}", out[0]);
            assert!(out[0].contains("purulent"), "seed {seed}: {}", out[0]);
            assert!(out[0].contains("worsening"), "seed {seed}: {}", out[0]);
        }
    }

    #[test]
    fn offline_varies_across_seeds() {
        let client = TextAugmentClient::offline();
        let variants: std::collections::BTreeSet<String> = (0..20)
            .map(|s| augment_text(NOTE, &client, 1, s).unwrap().remove(0))
            .collect();
        assert!(variants.len() > 5, "only {} variants", variants.len());
    }

    #[test]
    fn n_zero_is_rejected() {
        let client = TextAugmentClient::offline();
        assert!(augment_text(NOTE, &client, 0, 0).is_err());
    }

    #[test]
    fn unreachable_remote_endpoint_errors_cleanly() {
        let client = TextAugmentClient::Remote {
            url: "http://127.0.0.1:1/never".into(),
            token: None,
            timeout: Duration::from_millis(200),
        };
        let err = augment_text(NOTE, &client, 1, 0).unwrap_err();
        assert!(matches!(err, Error::TextAugment(_)));
    }

    #[test]
    fn remote_happy_path_against_local_stub() {
        use std::io::{Read, Write};
        // one-shot HTTP stub on an ephemeral port
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = [0u8; 4096];
            let _ = stream.read(&mut buf);
            let reply = serde_json::json!({"text": "paraphrased wound note with odor"});
            let body = reply.to_string();
            let resp = format!(
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                body.len(),
                body
            );
            stream.write_all(resp.as_bytes()).unwrap();
        });
        let client = TextAugmentClient::Remote {
            url: format!("http://{addr}/v1/complete"),
            token: Some("secret".into()),
            timeout: Duration::from_secs(5),
        };
        let out = augment_text(NOTE, &client, 1, 0).unwrap();
        assert_eq!(out[0], "paraphrased wound note with odor");
        handle.join().unwrap();
    }
}
