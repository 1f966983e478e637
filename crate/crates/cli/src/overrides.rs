use serde_json::{Map, Value};

/// Applies `a.b.c=value` assignments to a JSON document. Values are read as
/// JSON when they parse, as plain strings otherwise. Missing intermediate
/// objects are created; unknown leaf names are left for the typed
/// deserializer to reject.
pub fn apply(doc: &mut Value, assignments: &[String]) -> Result<(), String> {
    for a in assignments {
        let (path, raw) =
            a.split_once('=').ok_or_else(|| format!("override `{a}` is not of the form key.path=value"))?;
        let path = path.trim();
        if path.is_empty() {
            return Err(format!("override `{a}` has an empty key"));
        }
        let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
        let mut node = &mut *doc;
        let keys: Vec<&str> = path.split('.').collect();
        for (i, key) in keys.iter().enumerate() {
            if !node.is_object() {
                if node.is_null() {
                    *node = Value::Object(Map::new());
                } else {
                    return Err(format!("override `{path}`: `{}` is not an object", keys[..i].join(".")));
                }
            }
            let obj = node.as_object_mut().expect("object");
            if i + 1 == keys.len() {
                obj.insert(key.to_string(), value.clone());
                break;
            }
            node = obj.entry(key.to_string()).or_insert(Value::Null);
        }
    }
    Ok(())
}

/// `BMPLOOP_SET`-style list: assignments separated by `;`.
pub fn split_env_list(text: &str) -> Vec<String> {
    text.split(';').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect()
}
