//! Change captioning through a vision-language model adapter.
//!
//! Two prompts are issued per pair (objects, then vegetation), each carrying
//! both images base64-encoded with T0 labelled "A" and T1 labelled "B". Calls
//! are serialized per [`CaptionClient`] and separated by at least
//! [`GenerationParams::inter_call_pause`].

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use base64::Engine as _;
use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, ScdError};
use crate::types::ImagePair;

const OBJECT_PROMPT: &str = "I have 2 images of outdoor scenes: A and B. In this task, you must not talk about weather, lighting, vehicles, people, or animals. Refrain from mentioning any elements that are not directly observable or are obscure. You must try your best to find all objects you see in A. For every object you see in A, you should try your best to find a corresponding object in B. Then, you must try your best to find all objects you see in B. For every object you see in B, you should try your best to find a corresponding object in A. In your response, just give me a numbered list of objects that you fail to find a match in B, and a numbered list of objects that you fail to find a match in A. Do not use prepositions.";

const VEGETATION_PROMPT: &str = "I have 2 images of outdoor scenes: A and B. In this task, you must try your best to find all vegetations you see in A. For every plant you see in A, you should try your best to find if it changed in B. Then, you must try your best to find all vegetations you see in B. For every plant you see in B, you should try your best to find if it changed in A. In your response, just give me a numbered list of changed plant names in A, and a numbered list of changed plant names in B. If the plant is removed, do not include it in the list. If there are no visible changed plants in the image A, write \"1. None\". If there are no visible changed plants in the image B, write \"1. None\". If a plant is changed, only include the plant name after change. Do not use prepositions such as to. For example: green trees, bare trees, green bushes, bare bushes, potted plants.";

pub const DEFAULT_SYSTEM_ROLE: &str = "You are an expert to analyze images. You need to read images carefully.";

pub fn build_object_prompt() -> &'static str {
    OBJECT_PROMPT
}

pub fn build_vegetation_prompt() -> &'static str {
    VEGETATION_PROMPT
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Objects,
    Vegetation,
}

impl PromptKind {
    pub fn prompt(self) -> &'static str {
        match self {
            PromptKind::Objects => OBJECT_PROMPT,
            PromptKind::Vegetation => VEGETATION_PROMPT,
        }
    }

    pub fn of_prompt(prompt: &str) -> Option<Self> {
        [PromptKind::Objects, PromptKind::Vegetation]
            .into_iter()
            .find(|k| k.prompt() == prompt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub top_p: f64,
    /// Seconds between the end of one adapter call and the start of the next.
    pub inter_call_pause: f64,
    pub system_role: String,
    pub max_attempts: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            model_id: "gpt-4o".into(),
            temperature: 0.2,
            max_tokens: 4096,
            top_p: 1.0,
            inter_call_pause: 1.0,
            system_role: DEFAULT_SYSTEM_ROLE.into(),
            max_attempts: 3,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0) {
            return Err(ScdError::InvalidConfig("temperature must be >= 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(ScdError::InvalidConfig("max_tokens must be > 0".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ScdError::InvalidConfig("top_p must be in (0, 1]".into()));
        }
        if !(self.inter_call_pause >= 0.0) || !self.inter_call_pause.is_finite() {
            return Err(ScdError::InvalidConfig("inter_call_pause must be >= 0".into()));
        }
        if self.max_attempts == 0 {
            return Err(ScdError::InvalidConfig("max_attempts must be >= 1".into()));
        }
        Ok(())
    }

    fn pause(&self) -> Duration {
        Duration::from_secs_f64(self.inter_call_pause)
    }
}

/// One captioner call as it crosses the adapter boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRequest {
    pub model_id: String,
    pub system_role: String,
    pub prompt: String,
    /// PNG-encoded, base64: `[T0, T1]`.
    pub images_base64: [String; 2],
    pub temperature: f64,
    pub max_tokens: u32,
    pub top_p: f64,
}

impl CaptionRequest {
    pub fn new(params: &GenerationParams, prompt: &str, images_base64: [String; 2]) -> Self {
        Self {
            model_id: params.model_id.clone(),
            system_role: params.system_role.clone(),
            prompt: prompt.to_string(),
            images_base64,
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            top_p: params.top_p,
        }
    }

    /// Chat-completions style body: system message, then one user message
    /// holding the prompt text followed by both images as data URLs.
    pub fn to_chat_json(&self) -> serde_json::Value {
        let mut content = vec![serde_json::json!({"type": "text", "text": self.prompt})];
        for img in &self.images_base64 {
            content.push(serde_json::json!({
                "type": "image_url",
                "image_url": {"url": format!("data:image/png;base64,{img}")}
            }));
        }
        serde_json::json!({
            "model": self.model_id,
            "messages": [
                {"role": "system", "content": self.system_role},
                {"role": "user", "content": content},
            ],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "top_p": self.top_p,
        })
    }

    /// Stable key over the image payload, used by replay adapters.
    pub fn image_key(&self) -> String {
        images_key(&self.images_base64)
    }
}

fn images_key(images: &[String; 2]) -> String {
    let mut h = Sha256::new();
    for img in images {
        h.update((img.len() as u64).to_le_bytes());
        h.update(img.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Vision-language captioner: (system role, prompt, [T0, T1], params) -> text.
pub trait Captioner: Send + Sync {
    fn complete(&self, request: &CaptionRequest) -> Result<String>;
}

pub fn encode_image_base64(img: &RgbImage) -> Result<String> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| ScdError::Image {
            path: "<memory>".into(),
            message: e.to_string(),
        })?;
    Ok(base64::engine::general_purpose::STANDARD.encode(buf.into_inner()))
}

/// Parsed result of a numbered-list response.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedLists {
    /// Blocks split where numbering restarts; "None" items already dropped.
    pub blocks: Vec<Vec<String>>,
    /// True when no numbered line was found at all.
    pub unparseable: bool,
}

fn numbered_item(line: &str) -> Option<(u64, &str)> {
    let line = line.trim();
    let digits = line.bytes().take_while(|b| b.is_ascii_digit()).count();
    if digits == 0 {
        return None;
    }
    let rest = &line[digits..];
    let rest = rest.strip_prefix('.')?;
    if !rest.starts_with(char::is_whitespace) {
        return None;
    }
    let text = rest.trim();
    if text.is_empty() {
        return None;
    }
    let n = line[..digits].parse().ok()?;
    Some((n, text))
}

fn is_none_sentinel(text: &str) -> bool {
    text.trim_end_matches('.').trim().eq_ignore_ascii_case("none")
}

/// Split a response into numbered-list blocks. A block ends when numbering
/// fails to increase.
pub fn parse_numbered_lists(text: &str) -> ParsedLists {
    let mut blocks: Vec<Vec<String>> = Vec::new();
    let mut last: Option<u64> = None;
    let mut saw_item = false;
    for line in text.lines() {
        let Some((n, item)) = numbered_item(line) else {
            continue;
        };
        saw_item = true;
        if last.is_none_or(|prev| n <= prev) {
            blocks.push(Vec::new());
        }
        last = Some(n);
        if !is_none_sentinel(item) {
            blocks.last_mut().expect("block pushed").push(item.to_string());
        }
    }
    ParsedLists {
        blocks,
        unparseable: !saw_item && !text.trim().is_empty(),
    }
}

/// All items of every `<int>. <text>` line, in order, without the "None"
/// sentinel.
pub fn parse_numbered_list(text: &str) -> Vec<String> {
    parse_numbered_lists(text).blocks.into_iter().flatten().collect()
}

/// Inverse of [`parse_numbered_list`] for a single block.
pub fn format_numbered_list(items: &[String]) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {s}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CaptionReport {
    pub pair_id: String,
    pub objects_only_in_a: Vec<String>,
    pub objects_only_in_b: Vec<String>,
    pub vegetation_changed_a: Vec<String>,
    pub vegetation_changed_b: Vec<String>,
    pub raw_responses: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl CaptionReport {
    /// Phrases describing changes visible in T1: new objects, then vegetation.
    pub fn t1_phrases(&self) -> Vec<String> {
        self.objects_only_in_b
            .iter()
            .chain(&self.vegetation_changed_b)
            .cloned()
            .collect()
    }

    /// One description string for text encoding.
    pub fn description(&self) -> String {
        join_phrases(&self.t1_phrases())
    }
}

pub fn join_phrases(phrases: &[String]) -> String {
    phrases.join(". ")
}

/// Assign parsed blocks to the A/B sides. Two or more blocks: first is A,
/// second is B. A single block is taken as the B list.
fn split_sides(parsed: &ParsedLists, label: &str, warnings: &mut Vec<String>) -> (Vec<String>, Vec<String>) {
    if parsed.unparseable {
        warnings.push(format!("{label}: no numbered list found"));
    }
    match parsed.blocks.as_slice() {
        [] => (Vec::new(), Vec::new()),
        [only] => (Vec::new(), only.clone()),
        [a, b, rest @ ..] => {
            if !rest.is_empty() {
                warnings.push(format!("{label}: {} extra list(s) ignored", rest.len()));
            }
            (a.clone(), b.clone())
        }
    }
}

/// Build a report from the two raw responses (objects, vegetation).
pub fn report_from_responses(pair_id: &str, object_response: String, vegetation_response: String) -> CaptionReport {
    let mut warnings = Vec::new();
    let (oa, ob) = split_sides(&parse_numbered_lists(&object_response), "objects", &mut warnings);
    let (va, vb) = split_sides(&parse_numbered_lists(&vegetation_response), "vegetation", &mut warnings);
    CaptionReport {
        pair_id: pair_id.to_string(),
        objects_only_in_a: oa,
        objects_only_in_b: ob,
        vegetation_changed_a: va,
        vegetation_changed_b: vb,
        raw_responses: vec![object_response, vegetation_response],
        warnings,
    }
}

/// Serializing client around a captioner adapter.
pub struct CaptionClient {
    adapter: Arc<dyn Captioner>,
    params: GenerationParams,
    last_call_end: Mutex<Option<Instant>>,
}

impl CaptionClient {
    pub fn new(adapter: Arc<dyn Captioner>, params: GenerationParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            adapter,
            params,
            last_call_end: Mutex::new(None),
        })
    }

    pub fn params(&self) -> &GenerationParams {
        &self.params
    }

    /// Issue one call with the pause and retry policy. The lock is held for the
    /// whole call so concurrent users of one client are serialized.
    fn call(&self, request: &CaptionRequest) -> Result<String> {
        let mut last = self.last_call_end.lock().expect("caption client lock poisoned");
        let pause = self.params.pause();
        let mut backoff = pause;
        let mut last_err = None;
        for attempt in 0..self.params.max_attempts {
            if let Some(end) = *last {
                let since = end.elapsed();
                if since < pause {
                    std::thread::sleep(pause - since);
                }
            }
            if attempt > 0 {
                std::thread::sleep(backoff);
                backoff *= 2;
            }
            let result = self.adapter.complete(request);
            *last = Some(Instant::now());
            match result {
                Ok(text) => return Ok(text),
                Err(e) => {
                    log::warn!("captioner attempt {} failed: {e}", attempt + 1);
                    last_err = Some(e);
                }
            }
        }
        Err(ScdError::CaptionerUnavailable(format!(
            "{} attempts failed; last error: {}",
            self.params.max_attempts,
            last_err.map(|e| e.to_string()).unwrap_or_default()
        )))
    }

    pub fn caption_pair(&self, pair: &ImagePair) -> Result<CaptionReport> {
        let images = [
            encode_image_base64(&pair.image_t0)?,
            encode_image_base64(&pair.image_t1)?,
        ];
        let object_req = CaptionRequest::new(&self.params, OBJECT_PROMPT, images.clone());
        let object_response = self.call(&object_req)?;
        let veg_req = CaptionRequest::new(&self.params, VEGETATION_PROMPT, images);
        let veg_response = self.call(&veg_req)?;
        Ok(report_from_responses(&pair.id, object_response, veg_response))
    }
}

/// Deterministic replay captioner keyed by image payload and prompt kind.
#[derive(Default)]
pub struct ScriptedCaptioner {
    scripts: Mutex<HashMap<(String, PromptKind), String>>,
    default_response: Option<String>,
    failures_remaining: AtomicUsize,
    calls: Mutex<Vec<(Instant, PromptKind)>>,
}

impl ScriptedCaptioner {
    pub fn new() -> Self {
        Self::default()
    }

    /// Response for pairs that were not scripted.
    pub fn with_default(mut self, response: impl Into<String>) -> Self {
        self.default_response = Some(response.into());
        self
    }

    /// Fail the next `n` calls with an adapter error.
    pub fn fail_next(&self, n: usize) {
        self.failures_remaining.store(n, Ordering::SeqCst);
    }

    pub fn script(&self, pair: &ImagePair, objects: impl Into<String>, vegetation: impl Into<String>) -> Result<()> {
        let images = [
            encode_image_base64(&pair.image_t0)?,
            encode_image_base64(&pair.image_t1)?,
        ];
        let key = images_key(&images);
        let mut s = self.scripts.lock().expect("lock");
        s.insert((key.clone(), PromptKind::Objects), objects.into());
        s.insert((key, PromptKind::Vegetation), vegetation.into());
        Ok(())
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().expect("lock").len()
    }

    pub fn call_times(&self) -> Vec<Instant> {
        self.calls.lock().expect("lock").iter().map(|c| c.0).collect()
    }
}

impl Captioner for ScriptedCaptioner {
    fn complete(&self, request: &CaptionRequest) -> Result<String> {
        let kind = PromptKind::of_prompt(&request.prompt)
            .ok_or_else(|| ScdError::CaptionerUnavailable("unknown prompt".into()))?;
        self.calls.lock().expect("lock").push((Instant::now(), kind));
        if self
            .failures_remaining
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok()
        {
            return Err(ScdError::CaptionerUnavailable("scripted failure".into()));
        }
        let scripts = self.scripts.lock().expect("lock");
        scripts
            .get(&(request.image_key(), kind))
            .cloned()
            .or_else(|| self.default_response.clone())
            .ok_or_else(|| ScdError::CaptionerUnavailable("no scripted response for pair".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn pair(seed: u8) -> ImagePair {
        let t0 = RgbImage::from_pixel(8, 8, image::Rgb([seed, 0, 0]));
        let t1 = RgbImage::from_pixel(8, 8, image::Rgb([0, seed, 0]));
        let ts = chrono::Utc.with_ymd_and_hms(2016, 6, 1, 0, 0, 0).unwrap();
        ImagePair::new(format!("p{seed}"), t0, t1, ts, ts).unwrap()
    }

    fn fast() -> GenerationParams {
        GenerationParams {
            inter_call_pause: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn object_prompt_content() {
        let p = build_object_prompt();
        assert!(p.contains("you must not talk about weather, lighting, vehicles, people, or animals"));
        assert!(p.ends_with("Do not use prepositions."));
        assert_eq!(p, build_object_prompt());
    }

    #[test]
    fn vegetation_prompt_content() {
        let p = build_vegetation_prompt();
        assert!(p.contains("green trees, bare trees, green bushes, bare bushes, potted plants"));
        assert!(p.contains("If the plant is removed, do not include it"));
        assert!(p.contains("write \"1. None\""));
        assert_eq!(p, build_vegetation_prompt());
    }

    #[test]
    fn parse_examples() {
        assert!(parse_numbered_list("1. None").is_empty());
        assert_eq!(
            parse_numbered_list("1. green trees\n2. bare bushes"),
            vec!["green trees", "bare bushes"]
        );
        assert_eq!(
            parse_numbered_list("preamble\n1. scaffolding\nnoise\n2. traffic cone"),
            vec!["scaffolding", "traffic cone"]
        );
    }

    #[test]
    fn parse_ignores_lettered_and_bulleted() {
        assert_eq!(
            parse_numbered_list("1a. sub\n- dash\n1.nospace\n3. kept "),
            vec!["kept"]
        );
        assert_eq!(parse_numbered_list("1. NONE.\n2. none"), Vec::<String>::new());
    }

    #[test]
    fn blocks_split_on_restart() {
        let parsed = parse_numbered_lists("A:\n1. lamp\n2. sign\nB:\n1. bench");
        assert_eq!(parsed.blocks, vec![vec!["lamp", "sign"], vec!["bench"]]);
        assert!(parse_numbered_lists("no list here").unparseable);
        assert!(!parse_numbered_lists("").unparseable);
    }

    #[test]
    fn params_validate() {
        assert!(GenerationParams::default().validate().is_ok());
        let bad = GenerationParams {
            top_p: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = GenerationParams {
            temperature: -0.1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn caption_pair_with_scripted_adapter() {
        let fake = Arc::new(ScriptedCaptioner::new());
        let p = pair(1);
        fake.script(&p, "1. bench", "1. None").unwrap();
        let client = CaptionClient::new(fake.clone(), fast()).unwrap();
        let report = client.caption_pair(&p).unwrap();
        assert_eq!(report.objects_only_in_b, vec!["bench"]);
        assert!(report.objects_only_in_a.is_empty());
        assert!(report.vegetation_changed_a.is_empty());
        assert!(report.vegetation_changed_b.is_empty());
        assert_eq!(report.raw_responses.len(), 2);
        assert_eq!(fake.call_count(), 2);
    }

    #[test]
    fn no_change_pair_gives_empty_lists() {
        let fake = Arc::new(ScriptedCaptioner::new().with_default("1. None"));
        let client = CaptionClient::new(fake, fast()).unwrap();
        let r = client.caption_pair(&pair(2)).unwrap();
        assert!(r.t1_phrases().is_empty() && r.objects_only_in_a.is_empty());
        assert!(r.vegetation_changed_a.is_empty());
    }

    #[test]
    fn two_lists_assign_sides() {
        let r = report_from_responses(
            "x",
            "1. awning\n\n1. scaffolding\n2. traffic cone".into(),
            "1. None\n\n1. green trees".into(),
        );
        assert_eq!(r.objects_only_in_a, vec!["awning"]);
        assert_eq!(r.objects_only_in_b, vec!["scaffolding", "traffic cone"]);
        assert!(r.vegetation_changed_a.is_empty());
        assert_eq!(r.vegetation_changed_b, vec!["green trees"]);
        assert_eq!(r.description(), "scaffolding. traffic cone. green trees");
    }

    #[test]
    fn garbled_response_warns_with_empty_lists() {
        let fake = Arc::new(ScriptedCaptioner::new().with_default("I cannot see the images."));
        let client = CaptionClient::new(fake, fast()).unwrap();
        let r = client.caption_pair(&pair(3)).unwrap();
        assert!(r.t1_phrases().is_empty());
        assert_eq!(r.warnings.len(), 2);
    }

    #[test]
    fn retries_then_succeeds_or_gives_up() {
        let fake = Arc::new(ScriptedCaptioner::new().with_default("1. None"));
        let client = CaptionClient::new(fake.clone(), fast()).unwrap();
        fake.fail_next(2);
        assert!(client.caption_pair(&pair(4)).is_ok());
        assert_eq!(fake.call_count(), 4);

        fake.fail_next(3);
        let err = client.caption_pair(&pair(4)).unwrap_err();
        assert!(matches!(err, ScdError::CaptionerUnavailable(_)));
    }

    #[test]
    fn default_pause_separates_calls() {
        let fake = Arc::new(ScriptedCaptioner::new().with_default("1. None"));
        let client = CaptionClient::new(fake.clone(), GenerationParams::default()).unwrap();
        client.caption_pair(&pair(5)).unwrap();
        let times = fake.call_times();
        assert_eq!(times.len(), 2);
        assert!(times[1].duration_since(times[0]) >= Duration::from_secs_f64(1.0));
    }

    #[test]
    fn chat_json_carries_both_images() {
        let req = CaptionRequest::new(&fast(), OBJECT_PROMPT, ["AAA".into(), "BBB".into()]);
        let v = req.to_chat_json();
        assert_eq!(v["messages"][0]["content"], DEFAULT_SYSTEM_ROLE);
        let content = v["messages"][1]["content"].as_array().unwrap();
        assert_eq!(content.len(), 3);
        assert_eq!(content[2]["image_url"]["url"], "data:image/png;base64,BBB");
        assert_eq!(v["max_tokens"], 4096);
    }
}
