use std::collections::BTreeMap;

use minijinja::{context, Environment};
use serde::{Deserialize, Serialize};

use super::{Direction, PipelineError};

/// Chat template published with TinyLlama-1.1B-Chat, used when the model
/// file carries none.
pub const TINYLLAMA_CHAT_TEMPLATE: &str = "{% for message in messages %}
{% if message['role'] == 'user' %}
{{ '<|user|>
' + message['content'] + eos_token }}
{% elif message['role'] == 'system' %}
{{ '<|system|>
' + message['content'] + eos_token }}
{% elif message['role'] == 'assistant' %}
{{ '<|assistant|>
'  + message['content'] + eos_token }}
{% endif %}
{% if loop.last and add_generation_prompt %}
{{ '<|assistant|>' }}
{% endif %}
{% endfor %}";

pub const DEFAULT_SYSTEM_EN_TO_VI: &str =
    "You are a translator. Translate the user's English text into Vietnamese. Reply with the translation only.";
pub const DEFAULT_SYSTEM_VI_TO_EN: &str =
    "You are a translator. Translate the user's Vietnamese text into English. Reply with the translation only.";

// private-use sentinel marking the user slot while rendering
const USER_SLOT: &str = "\u{F8FF}vien-user-slot\u{F8FF}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TemplateSource {
    Builtin,
    ModelMetadata,
}

/// Tunable prompt wording, one system instruction per direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub system_en_to_vi: String,
    pub system_vi_to_en: String,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            system_en_to_vi: DEFAULT_SYSTEM_EN_TO_VI.into(),
            system_vi_to_en: DEFAULT_SYSTEM_VI_TO_EN.into(),
        }
    }
}

/// A rendered prompt plus the byte ranges holding the user's text.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPrompt {
    pub text: String,
    pub user_ranges: Vec<std::ops::Range<usize>>,
}

#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub source: TemplateSource,
    pub jinja: String,
    pub bos_token: String,
    pub eos_token: String,
    pub config: PromptConfig,
    /// Text that ends a turn: output is cut at the first occurrence.
    pub stop_strings: Vec<String>,
    /// Role markers that never belong in a translation.
    pub role_markers: Vec<String>,
    pub assistant_header: String,
}

#[derive(Serialize)]
struct Message<'a> {
    role: &'a str,
    content: &'a str,
}

fn render_raw(jinja: &str, bos: &str, eos: &str, messages: &[Message<'_>], add_generation_prompt: bool) -> Result<String, PipelineError> {
    let mut env = Environment::new();
    // matches how chat templates are rendered by their authors' tooling
    env.set_trim_blocks(true);
    env.set_lstrip_blocks(true);
    env.add_template("chat", jinja)
        .map_err(|e| PipelineError::Template(e.to_string()))?;
    let tmpl = env.get_template("chat").expect("just added");
    tmpl.render(context! {
        messages => messages,
        add_generation_prompt => add_generation_prompt,
        bos_token => bos,
        eos_token => eos,
    })
    .map_err(|e| PipelineError::Template(e.to_string()))
}

impl PromptTemplate {
    pub fn builtin(bos_token: &str, eos_token: &str) -> Result<Self, PipelineError> {
        Self::from_jinja(TemplateSource::Builtin, TINYLLAMA_CHAT_TEMPLATE, bos_token, eos_token)
    }

    /// Derives the assistant header and role markers by rendering probe
    /// conversations through the template.
    pub fn from_jinja(source: TemplateSource, jinja: &str, bos_token: &str, eos_token: &str) -> Result<Self, PipelineError> {
        let probe = [
            Message { role: "system", content: "" },
            Message { role: "user", content: "" },
        ];
        let with = render_raw(jinja, bos_token, eos_token, &probe, true)?;
        let without = render_raw(jinja, bos_token, eos_token, &probe, false)?;
        let assistant_header = with
            .strip_prefix(without.as_str())
            .filter(|h| !h.trim().is_empty())
            .ok_or_else(|| PipelineError::Template("template does not render a generation prompt".into()))?
            .to_string();

        let marker = |role: &str| -> Result<String, PipelineError> {
            let text = render_raw(jinja, bos_token, eos_token, &[Message { role, content: "" }], false)?;
            let mut text = text;
            for special in [bos_token, eos_token] {
                if !special.is_empty() {
                    text = text.replace(special, "");
                }
            }
            Ok(text.trim().to_string())
        };
        let user = marker("user")?;
        let system = marker("system")?;
        let assistant = assistant_header.trim().to_string();

        let mut stop_strings = vec![eos_token.to_string()];
        let mut role_markers = Vec::new();
        for m in [&user, &system] {
            if !m.is_empty() && !stop_strings.contains(m) {
                stop_strings.push(m.clone());
            }
        }
        for m in [assistant, user, system] {
            if !m.is_empty() && !role_markers.contains(&m) {
                role_markers.push(m);
            }
        }
        stop_strings.retain(|s| !s.is_empty());
        Ok(PromptTemplate {
            source,
            jinja: jinja.to_string(),
            bos_token: bos_token.to_string(),
            eos_token: eos_token.to_string(),
            config: PromptConfig::default(),
            stop_strings,
            role_markers,
            assistant_header,
        })
    }

    pub fn with_config(mut self, config: PromptConfig) -> Self {
        self.config = config;
        self
    }

    pub fn system_text(&self, direction: Direction) -> &str {
        match direction {
            Direction::EnToVi => &self.config.system_en_to_vi,
            Direction::ViToEn => &self.config.system_vi_to_en,
        }
    }

    /// System turn, one user turn holding exactly `text`, then the assistant
    /// header.
    pub fn render(&self, direction: Direction, text: &str) -> Result<RenderedPrompt, PipelineError> {
        let messages = [
            Message {
                role: "system",
                content: self.system_text(direction),
            },
            Message {
                role: "user",
                content: USER_SLOT,
            },
        ];
        let raw = render_raw(&self.jinja, &self.bos_token, &self.eos_token, &messages, true)?;
        let mut out = String::with_capacity(raw.len() + text.len());
        let mut user_ranges = Vec::new();
        let mut rest = raw.as_str();
        while let Some(i) = rest.find(USER_SLOT) {
            out.push_str(&rest[..i]);
            user_ranges.push(out.len()..out.len() + text.len());
            out.push_str(text);
            rest = &rest[i + USER_SLOT.len()..];
        }
        out.push_str(rest);
        if user_ranges.is_empty() {
            return Err(PipelineError::Template("template dropped the user message".into()));
        }
        Ok(RenderedPrompt { text: out, user_ranges })
    }

    /// Variables a template may reference, for diagnostics.
    pub fn describe(&self) -> BTreeMap<&'static str, String> {
        BTreeMap::from([
            ("source", format!("{:?}", self.source)),
            ("assistant_header", self.assistant_header.clone()),
            ("stop_strings", format!("{:?}", self.stop_strings)),
            ("role_markers", format!("{:?}", self.role_markers)),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_renders_tinyllama_format() {
        let t = PromptTemplate::builtin("<s>", "</s>").unwrap();
        assert_eq!(t.assistant_header, "<|assistant|>\n");
        assert_eq!(t.stop_strings, ["</s>", "<|user|>", "<|system|>"]);
        assert_eq!(t.role_markers, ["<|assistant|>", "<|user|>", "<|system|>"]);
        let r = t.render(Direction::EnToVi, "Hello").unwrap();
        assert_eq!(
            r.text,
            format!("<|system|>\n{DEFAULT_SYSTEM_EN_TO_VI}</s>\n<|user|>\nHello</s>\n<|assistant|>\n")
        );
        assert_eq!(&r.text[r.user_ranges[0].clone()], "Hello");
    }

    #[test]
    fn custom_template() {
        let jinja = "{% for m in messages %}[{{ m.role }}]{{ m.content }}{{ eos_token }}{% endfor %}{% if add_generation_prompt %}[assistant]{% endif %}";
        let t = PromptTemplate::from_jinja(TemplateSource::ModelMetadata, jinja, "<s>", "</s>").unwrap();
        assert_eq!(t.assistant_header, "[assistant]");
        let r = t.render(Direction::ViToEn, "Xin chào").unwrap();
        assert!(r.text.ends_with("[assistant]"));
        assert!(r.text.contains("[user]Xin chào</s>"));
    }

    #[test]
    fn rejects_templates_without_generation_prompt() {
        let jinja = "{% for m in messages %}{{ m.content }}{% endfor %}";
        assert!(PromptTemplate::from_jinja(TemplateSource::ModelMetadata, jinja, "<s>", "</s>").is_err());
        assert!(PromptTemplate::from_jinja(TemplateSource::ModelMetadata, "{% if %}", "<s>", "</s>").is_err());
    }
}
