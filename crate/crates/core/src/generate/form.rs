//! Category-keyed JSON forms exchanged with the model, and strict parsers
//! for the replies.

use serde_json::{Map, Value};

use crate::schema::{canonical, AttributeSchema, Category};

/// The whole reply must be one JSON object; surrounding prose, code fences
/// or trailing text are rejected.
pub fn strict_object(text: &str) -> Result<Map<String, Value>, String> {
    match serde_json::from_str::<Value>(text.trim()) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(other) => Err(format!("expected a JSON object, got {}", kind(&other))),
        Err(e) => Err(format!("reply is not a single JSON document: {e}")),
    }
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

fn category(key: &str) -> Result<Category, String> {
    Category::from_form_key(key)
        .ok_or_else(|| format!("unknown category key `{key}` (expected \"main object\", \"background\" or \"global\")"))
}

fn string_list(v: &Value, what: &str) -> Result<Vec<String>, String> {
    let items = v
        .as_array()
        .ok_or_else(|| format!("{what} must be a list, got {}", kind(v)))?;
    items
        .iter()
        .map(|i| {
            i.as_str()
                .map(canonical)
                .ok_or_else(|| format!("{what} must contain strings, got {}", kind(i)))
        })
        .collect()
}

/// `{"main object": [names], "background": [...], "global": [...]}`
pub fn attribute_form<'a>(attrs: impl IntoIterator<Item = (&'a str, Category)>) -> Value {
    let mut lists: [Vec<Value>; 3] = Default::default();
    for (name, cat) in attrs {
        lists[cat as usize].push(Value::String(name.to_string()));
    }
    let mut map = Map::new();
    for (cat, list) in Category::ALL.iter().zip(lists) {
        map.insert(cat.form_key().into(), Value::Array(list));
    }
    Value::Object(map)
}

/// `{"main object": {name: [tags]}, ...}`
pub fn tag_form<'a>(attrs: impl IntoIterator<Item = (&'a str, Category, &'a [String])>) -> Value {
    let mut maps: [Map<String, Value>; 3] = Default::default();
    for (name, cat, tags) in attrs {
        maps[cat as usize].insert(name.to_string(), Value::from(tags.to_vec()));
    }
    let mut map = Map::new();
    for (cat, m) in Category::ALL.iter().zip(maps) {
        map.insert(cat.form_key().into(), Value::Object(m));
    }
    Value::Object(map)
}

pub fn schema_tag_form(schema: &AttributeSchema) -> Value {
    tag_form(
        schema
            .attributes()
            .iter()
            .map(|a| (a.name.as_str(), a.category, a.tags.as_slice())),
    )
}

pub fn parse_attribute_form(text: &str) -> Result<Vec<(Category, String)>, String> {
    let map = strict_object(text)?;
    let mut out = Vec::new();
    for (key, value) in &map {
        let cat = category(key)?;
        for name in string_list(value, &format!("`{key}`"))? {
            out.push((cat, name));
        }
    }
    Ok(out)
}

pub fn parse_tag_form(text: &str) -> Result<Vec<(Category, String, Vec<String>)>, String> {
    let map = strict_object(text)?;
    let mut out = Vec::new();
    for (key, value) in &map {
        let cat = category(key)?;
        let attrs = value
            .as_object()
            .ok_or_else(|| format!("`{key}` must map attribute names to tag lists, got {}", kind(value)))?;
        for (name, tags) in attrs {
            out.push((cat, canonical(name), string_list(tags, &format!("tags of `{name}`"))?));
        }
    }
    Ok(out)
}

/// `{category: {attribute: tag}}`, as used for assignments and predicted
/// combinations.
pub fn parse_pairs_object(map: &Map<String, Value>) -> Result<Vec<(Category, String, String)>, String> {
    let mut out = Vec::new();
    for (key, value) in map {
        let cat = category(key)?;
        let attrs = value
            .as_object()
            .ok_or_else(|| format!("`{key}` must map attribute names to a tag, got {}", kind(value)))?;
        for (name, tag) in attrs {
            let tag = tag.as_str().ok_or_else(|| {
                format!(
                    "`{name}` must have exactly one tag given as a string, got {}",
                    kind(tag)
                )
            })?;
            out.push((cat, canonical(name), canonical(tag)));
        }
    }
    Ok(out)
}

/// `{"<key>": [names]}`
pub fn parse_name_list(text: &str, key: &str) -> Result<Vec<String>, String> {
    let map = strict_object(text)?;
    let value = map.get(key).ok_or_else(|| format!("missing key `{key}`"))?;
    if map.len() != 1 {
        return Err(format!("expected only the key `{key}`"));
    }
    string_list(value, &format!("`{key}`"))
}

/// `{"additions": {attribute: [tags]}}`
pub fn parse_additions(text: &str) -> Result<Vec<(String, Vec<String>)>, String> {
    let map = strict_object(text)?;
    let value = map.get("additions").ok_or("missing key `additions`")?;
    if map.len() != 1 {
        return Err("expected only the key `additions`".into());
    }
    let attrs = value
        .as_object()
        .ok_or_else(|| format!("`additions` must be an object, got {}", kind(value)))?;
    attrs
        .iter()
        .map(|(name, tags)| Ok((canonical(name), string_list(tags, &format!("tags of `{name}`"))?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strictness() {
        assert!(strict_object("  {\"a\": 1}\n").is_ok());
        assert!(strict_object("Sure! {\"a\": 1}").is_err());
        assert!(strict_object("```json\n{}\n```").is_err());
        assert!(strict_object("{} trailing").is_err());
        assert!(strict_object("[1]").is_err());
    }

    #[test]
    fn attribute_forms() {
        let v = attribute_form([("pose", Category::MainObject), ("brightness", Category::Global)]);
        assert_eq!(
            v.to_string(),
            r#"{"main object":["pose"],"background":[],"global":["brightness"]}"#
        );
        let parsed = parse_attribute_form(&v.to_string()).unwrap();
        assert_eq!(
            parsed,
            vec![
                (Category::MainObject, "pose".into()),
                (Category::Global, "brightness".into())
            ]
        );
        assert!(parse_attribute_form(r#"{"scene": ["x"]}"#).is_err());
        assert!(parse_attribute_form(r#"{"global": "x"}"#).is_err());
        assert!(parse_attribute_form(r#"{"global": [1]}"#).is_err());
    }

    #[test]
    fn pair_objects() {
        let map = strict_object(r#"{"main object": {"pose": " sitting "}, "global": {"brightness": "low"}}"#).unwrap();
        let pairs = parse_pairs_object(&map).unwrap();
        assert_eq!(pairs[0], (Category::MainObject, "pose".into(), "sitting".into()));
        let map = strict_object(r#"{"global": {"brightness": ["low", "high"]}}"#).unwrap();
        assert!(parse_pairs_object(&map).is_err());
    }

    #[test]
    fn name_lists_and_additions() {
        assert_eq!(parse_name_list(r#"{"remove": ["a"]}"#, "remove").unwrap(), vec!["a"]);
        assert!(parse_name_list(r#"{"remove": ["a"], "x": 1}"#, "remove").is_err());
        let adds = parse_additions(r#"{"additions": {"pose": ["squatting"]}}"#).unwrap();
        assert_eq!(adds, vec![("pose".to_string(), vec!["squatting".to_string()])]);
        assert!(parse_additions(r#"{"pose": ["squatting"]}"#).is_err());
    }
}
