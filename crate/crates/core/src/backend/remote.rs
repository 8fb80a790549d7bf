//! HTTP client for a model server speaking the `/v1/*` protocol.

use std::path::Path;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::http::{self as wire, FileRef, ImageRef};
use super::{
    Backend, BackendError, BackendResult, DetectResult, EmbedResult, LlmStructuredResult,
    ParseCharacterResult, SegmentResult, TagResult,
};
use crate::model::{BoundingBox, CharacterRig, RigPart, SourceImage};

/// How image files cross the wire.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transfer {
    /// Both sides see the same filesystem; only paths are sent.
    SharedPath,
    /// Files are sent as base64 payloads.
    #[default]
    Inline,
}

pub struct RemoteBackend {
    base_url: String,
    agent: ureq::Agent,
    transfer: Transfer,
}

impl RemoteBackend {
    pub fn new(base_url: impl Into<String>, timeout: Duration, transfer: Transfer) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        RemoteBackend {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent: config.into(),
            transfer,
        }
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, route: &str, body: &Req) -> BackendResult<Resp> {
        let url = format!("{}{route}", self.base_url);
        let mut resp = self
            .agent
            .post(&url)
            .send_json(body)
            .map_err(|e| BackendError::Transport(format!("{url}: {e}")))?;
        let status = resp.status();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(format!("{url}: {e}")))?;
        if !status.is_success() {
            if let Ok(body) = serde_json::from_str::<wire::ErrorBody>(&text) {
                return Err(body.error);
            }
            return Err(BackendError::Transport(format!("{url}: HTTP {status}")));
        }
        serde_json::from_str(&text)
            .map_err(|e| BackendError::Protocol(format!("{url}: malformed response: {e}")))
    }

    fn file_ref(&self, path: &Path) -> BackendResult<FileRef> {
        let file_name = path.file_name().and_then(|n| n.to_str()).map(str::to_string);
        match self.transfer {
            Transfer::SharedPath => Ok(FileRef {
                path: Some(path.to_path_buf()),
                file_name,
                data_base64: None,
            }),
            Transfer::Inline => {
                let bytes = std::fs::read(path)
                    .map_err(|e| BackendError::Precondition(format!("{}: {e}", path.display())))?;
                Ok(FileRef {
                    path: None,
                    file_name,
                    data_base64: Some(wire::b64(&bytes)),
                })
            }
        }
    }

    fn image_ref(&self, image: &SourceImage) -> BackendResult<ImageRef> {
        Ok(ImageRef {
            image_id: image.image_id.clone(),
            width: image.width,
            height: image.height,
            file: self.file_ref(&image.path)?,
        })
    }

    fn write_inline(path: &Path, data: &str) -> BackendResult<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| BackendError::Transport(format!("{}: {e}", parent.display())))?;
        }
        std::fs::write(path, wire::unb64(data)?)
            .map_err(|e| BackendError::Transport(format!("{}: {e}", path.display())))
    }
}

impl Backend for RemoteBackend {
    fn name(&self) -> String {
        format!("remote({})", self.base_url)
    }

    fn tag_image(&self, image: &SourceImage) -> BackendResult<TagResult> {
        self.post(wire::ROUTE_TAG, &wire::TagRequest { image: self.image_ref(image)? })
    }

    fn detect(&self, image: &SourceImage, label: &str) -> BackendResult<DetectResult> {
        self.post(
            wire::ROUTE_DETECT,
            &wire::DetectRequest {
                image: self.image_ref(image)?,
                label: label.to_string(),
            },
        )
    }

    fn segment(
        &self,
        image: &SourceImage,
        bbox: BoundingBox,
        out_path: &Path,
    ) -> BackendResult<SegmentResult> {
        let shared = self.transfer == Transfer::SharedPath;
        let resp: wire::SegmentResponse = self.post(
            wire::ROUTE_SEGMENT,
            &wire::SegmentRequest {
                image: self.image_ref(image)?,
                bbox,
                out_path: shared.then(|| out_path.to_path_buf()),
            },
        )?;
        match (resp.png_base64, resp.mask_path) {
            (Some(data), _) => Self::write_inline(out_path, &data)?,
            (None, Some(p)) if p != out_path => {
                std::fs::copy(&p, out_path)
                    .map_err(|e| BackendError::Protocol(format!("{}: {e}", p.display())))?;
            }
            (None, Some(_)) => {}
            (None, None) => return Err(BackendError::Protocol("empty segmentation".into())),
        }
        Ok(SegmentResult {
            mask_path: out_path.to_path_buf(),
            tight_bbox: resp.tight_bbox,
        })
    }

    fn embed_image(&self, cutout: &Path) -> BackendResult<EmbedResult> {
        let r: wire::EmbedResponse = self.post(
            wire::ROUTE_EMBED_IMAGE,
            &wire::EmbedImageRequest { file: self.file_ref(cutout)? },
        )?;
        Ok(EmbedResult { vector: r.vector })
    }

    fn embed_text(&self, text: &str) -> BackendResult<EmbedResult> {
        let r: wire::EmbedResponse = self.post(
            wire::ROUTE_EMBED_TEXT,
            &wire::EmbedTextRequest { text: text.to_string() },
        )?;
        Ok(EmbedResult { vector: r.vector })
    }

    fn parse_character(
        &self,
        cutout: &Path,
        out_dir: &Path,
    ) -> BackendResult<ParseCharacterResult> {
        let shared = self.transfer == Transfer::SharedPath;
        let r: wire::ParseCharacterResponse = self.post(
            wire::ROUTE_PARSE_CHARACTER,
            &wire::ParseCharacterRequest {
                file: self.file_ref(cutout)?,
                out_dir: shared.then(|| out_dir.to_path_buf()),
            },
        )?;
        let mut parts = Vec::with_capacity(r.parts.len());
        for p in r.parts {
            let mask_path = match (p.png_base64, p.mask_path) {
                (Some(data), _) => {
                    let safe: String = p
                        .part_name
                        .chars()
                        .map(|c| if c.is_alphanumeric() || c == '_' { c } else { '_' })
                        .collect();
                    let path = out_dir.join(format!("{safe}.png"));
                    Self::write_inline(&path, &data)?;
                    path
                }
                (None, Some(path)) => path,
                (None, None) => {
                    return Err(BackendError::Protocol(format!(
                        "part {} has no mask",
                        p.part_name
                    )))
                }
            };
            parts.push(RigPart {
                part_name: p.part_name,
                mask_path,
            });
        }
        Ok(ParseCharacterResult {
            rig: CharacterRig {
                parts,
                joints: r.joints,
            },
        })
    }

    fn llm_complete(
        &self,
        system_prompt: &str,
        user_payload: &str,
    ) -> BackendResult<LlmStructuredResult> {
        let r: wire::LlmResponse = self.post(
            wire::ROUTE_LLM,
            &wire::LlmRequest {
                system_prompt: system_prompt.to_string(),
                user_payload: user_payload.to_string(),
            },
        )?;
        let mut out = LlmStructuredResult::from_raw(r.raw_text);
        if out.parsed_json.is_none() {
            out.parsed_json = r.parsed_json;
        }
        Ok(out)
    }

    fn health(&self) -> BackendResult<()> {
        let url = format!("{}{}", self.base_url, wire::ROUTE_HEALTH);
        let resp = self
            .agent
            .get(&url)
            .call()
            .map_err(|e| BackendError::Transport(format!("{url}: {e}")))?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(BackendError::Transport(format!("{url}: HTTP {}", resp.status())))
        }
    }
}
