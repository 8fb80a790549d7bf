//! Prompt templates and payload builders for the three curation calls.

use crate::model::{CategoryVocabulary, LabelSelection, Role};

pub const SELECT_TEMPLATE: &str = include_str!("../../prompts/select.txt");
pub const KEYWORD_TEMPLATE: &str = include_str!("../../prompts/keyword.txt");
pub const CLASSIFY_TEMPLATE: &str = include_str!("../../prompts/classify.txt");
pub const CLUSTER_TEMPLATE: &str = include_str!("../../prompts/cluster.txt");

const SELECT_FORMAT: &str = "\n### Output format\n- Reply with one JSON object and nothing else: {\"central\": [direct labels], \"related\": [related labels]}.\n";
const KEYWORD_FORMAT: &str = "\n### Output format\n- Reply with one JSON object and nothing else: {\"labels\": [labels]}.\n";
const CLASSIFY_FORMAT: &str = "\n### Output format\n- Reply with one JSON object and nothing else, mapping each category name to a list of labels.\n";
const CLUSTER_FORMAT: &str = "\n### Output format\n- Reply with one JSON object and nothing else. Its only key is the category name. The value is either a list of labels or an object mapping each subcategory name to a list of labels or to a further object of the same shape.\n";

/// "[a, b, c]" as written in the templates.
pub fn label_list(labels: &[String]) -> String {
    format!("[{}]", labels.join(", "))
}

/// Category name as shown to the model: the template spelling for the
/// default vocabulary, the configured name otherwise.
pub fn category_display(vocabulary: &CategoryVocabulary, role: Role) -> String {
    if vocabulary.is_default() {
        match role {
            Role::Character => "Character",
            Role::Background => "Background",
            Role::Accessory => "Accessories",
        }
        .to_string()
    } else {
        vocabulary.name(role).to_string()
    }
}

fn vocabulary_note(vocabulary: &CategoryVocabulary) -> String {
    if vocabulary.is_default() {
        String::new()
    } else {
        format!(
            "\n### Categories\n- Use these category names: {} for characters, {} for backgrounds, {} for accessories.\n",
            vocabulary.characters, vocabulary.backgrounds, vocabulary.accessories
        )
    }
}

fn with_labels(template: &str, available: &[String]) -> String {
    template.replacen("[labels_list]", &label_list(available), 1)
}

pub fn select_prompt(available: &[String]) -> String {
    format!("{}{SELECT_FORMAT}", with_labels(SELECT_TEMPLATE, available))
}

pub fn keyword_prompt(available: &[String]) -> String {
    format!("{}{KEYWORD_FORMAT}", with_labels(KEYWORD_TEMPLATE, available))
}

pub fn classify_prompt(vocabulary: &CategoryVocabulary) -> String {
    format!("{CLASSIFY_TEMPLATE}{}{CLASSIFY_FORMAT}", vocabulary_note(vocabulary))
}

pub fn cluster_prompt(vocabulary: &CategoryVocabulary) -> String {
    format!("{CLUSTER_TEMPLATE}{}{CLUSTER_FORMAT}", vocabulary_note(vocabulary))
}

pub fn classify_payload(selection: &LabelSelection) -> String {
    let mut out = format!("- Direct labels: {}\n", selection.central.join(", "));
    if !selection.related.is_empty() {
        out.push_str(&format!("- Related labels: {}\n", selection.related.join(", ")));
    }
    out
}

pub fn cluster_payload(category: &str, labels: &[String]) -> String {
    format!("- {category}: {}\n", label_list(labels))
}

/// Appends the parse failure so the next attempt can repair its reply.
pub fn repair_prompt(system: &str, error: &str) -> String {
    format!("{system}\n### Previous reply was rejected\n- {error}\n- Reply again with valid JSON only.\n")
}
