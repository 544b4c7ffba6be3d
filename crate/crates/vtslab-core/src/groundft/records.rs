//! Chat-style instruction records and their JSON Lines serialization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One chat turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

/// One instruction-tuning record: a user question about a video and the
/// assistant's grounded answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingInstance {
    pub messages: Vec<Message>,
    pub videos: Vec<String>,
}

impl GroundingInstance {
    /// Build a user/assistant pair for one video. The user content is
    /// prefixed with the `<video>` token here.
    pub fn new(user_body: &str, assistant: &str, video_file: &str) -> Self {
        GroundingInstance {
            messages: vec![
                Message {
                    role: "user".into(),
                    content: format!("<video>{user_body}"),
                },
                Message {
                    role: "assistant".into(),
                    content: assistant.into(),
                },
            ],
            videos: vec![video_file.to_string()],
        }
    }

    /// Structural validation: exactly one user turn followed by one
    /// assistant turn, user content starting with `<video>`, exactly one
    /// video file.
    pub fn validate(&self) -> Result<()> {
        if self.messages.len() != 2
            || self.messages[0].role != "user"
            || self.messages[1].role != "assistant"
        {
            return Err(Error::Validation {
                msg: format!(
                    "instance must be exactly [user, assistant], got roles {:?}",
                    self.messages.iter().map(|m| m.role.as_str()).collect::<Vec<_>>()
                ),
            });
        }
        if !self.messages[0].content.starts_with("<video>") {
            return Err(Error::Validation {
                msg: "user content must start with <video>".into(),
            });
        }
        if self.messages[1].content.trim().is_empty() {
            return Err(Error::Validation {
                msg: "empty assistant content".into(),
            });
        }
        if self.videos.len() != 1 || self.videos[0].trim().is_empty() {
            return Err(Error::Validation {
                msg: format!("expected exactly one video file, got {:?}", self.videos),
            });
        }
        Ok(())
    }

    pub fn user_content(&self) -> &str {
        &self.messages[0].content
    }

    pub fn assistant_content(&self) -> &str {
        &self.messages[1].content
    }
}

/// Serialize instances as compact JSON Lines. Every instance is validated;
/// output bytes depend only on the input (fixed field order, no extra
/// whitespace).
pub fn emit_dataset(instances: &[GroundingInstance]) -> Result<String> {
    let mut out = String::new();
    for (i, inst) in instances.iter().enumerate() {
        inst.validate().map_err(|e| Error::Validation {
            msg: format!("instance {i}: {e}"),
        })?;
        let line = serde_json::to_string(inst).map_err(|e| Error::Malformed {
            what: "grounding instance".into(),
            msg: e.to_string(),
        })?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

/// Parse JSON Lines produced by [`emit_dataset`]; errors name the 1-based
/// line number and each instance is validated.
pub fn parse_dataset(text: &str) -> Result<Vec<GroundingInstance>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let inst: GroundingInstance = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        inst.validate().map_err(|e| Error::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        out.push(inst);
    }
    Ok(out)
}

/// True when the text contains a `<digits>s` timestamp-like token
/// (e.g. "20.8s" or "30s" followed by a non-alphanumeric character or the
/// end of the string). Used to assert that question text never leaks
/// timestamps.
pub fn contains_timestamp_pattern(text: &str) -> bool {
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let mut j = i + 1;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            if j < bytes.len() && bytes[j] == b'.' {
                let mut k = j + 1;
                while k < bytes.len() && bytes[k].is_ascii_digit() {
                    k += 1;
                }
                if k > j + 1 {
                    j = k;
                }
            }
            if j < bytes.len() && bytes[j] == b's' {
                let after = bytes.get(j + 1);
                let boundary = match after {
                    None => true,
                    Some(c) => !c.is_ascii_alphanumeric(),
                };
                if boundary {
                    return true;
                }
            }
            i = j;
        } else {
            i += 1;
        }
    }
    false
}
