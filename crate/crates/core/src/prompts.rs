//! Versioned prompt templates, compiled into the binary.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Prompt {
    pub name: &'static str,
    pub version: u32,
    pub text: &'static str,
}

impl Prompt {
    /// `name@vN`, recorded alongside anything a prompt produced.
    pub fn id(&self) -> String {
        format!("{}@v{}", self.name, self.version)
    }
}

macro_rules! prompt {
    ($ident:ident, $name:literal) => {
        pub const $ident: Prompt = Prompt {
            name: $name,
            version: 1,
            text: include_str!(concat!("../assets/prompts/", $name, ".v1.txt")),
        };
    };
}

prompt!(COMPARATIVE_ATTRIBUTES, "comparative_attributes");
prompt!(INITIAL_TAGS, "initial_tags");
prompt!(PREDICT_CONFUSION, "predict_confusion");
prompt!(TASK_ATTRIBUTES_CLASSIFICATION, "task_attributes_classification");
prompt!(TASK_ATTRIBUTES_LOCALIZATION, "task_attributes_localization");
prompt!(VALIDATE_ATTRIBUTES, "validate_attributes");
prompt!(REFINE_TAGS, "refine_tags");
prompt!(ASSIGN_TAGS, "assign_tags");
prompt!(PREDICT_LOCALIZATION, "predict_localization");

pub const ALL: [Prompt; 9] = [
    COMPARATIVE_ATTRIBUTES,
    INITIAL_TAGS,
    PREDICT_CONFUSION,
    TASK_ATTRIBUTES_CLASSIFICATION,
    TASK_ATTRIBUTES_LOCALIZATION,
    VALIDATE_ATTRIBUTES,
    REFINE_TAGS,
    ASSIGN_TAGS,
    PREDICT_LOCALIZATION,
];

pub fn by_name(name: &str) -> Option<Prompt> {
    ALL.iter().copied().find(|p| p.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_present_and_distinct() {
        for p in ALL {
            assert!(p.text.len() > 200, "{}", p.name);
            assert!(p.text.ends_with('\n'));
        }
        assert_eq!(by_name("initial_tags").unwrap().id(), "initial_tags@v1");
        assert!(PREDICT_CONFUSION.text.contains("one and only one tag"));
        assert!(INITIAL_TAGS.text.contains("\"not visible\""));
    }
}
