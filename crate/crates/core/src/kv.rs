//! Flat `key = value` config documents.
//!
//! One `key = value` pair per line, `#` starts a comment, blank lines are
//! ignored. Every config struct renders to and parses from this format so
//! run manifests stay diffable.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parses a flat key=value document into an ordered map.
pub fn parse(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected 'key = value', got '{}'",
                lineno + 1,
                raw.trim()
            )));
        };
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
        }
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Error::Config(format!("duplicate key '{key}'")));
        }
    }
    Ok(map)
}

/// Renders pairs in the given order; values use shortest round-trip formatting.
pub fn render(pairs: &[(&str, String)]) -> String {
    let mut out = String::new();
    for (key, value) in pairs {
        out.push_str(key);
        out.push_str(" = ");
        out.push_str(value);
        out.push('\n');
    }
    out
}

/// Removes and parses `key` from the map, leaving other keys untouched.
/// Returns Ok(false) when the key is absent.
pub fn take<T>(map: &mut BTreeMap<String, String>, key: &str, slot: &mut T) -> Result<bool>
where
    T: FromStr,
    T::Err: Display,
{
    match map.remove(key) {
        None => Ok(false),
        Some(raw) => {
            *slot = raw
                .parse()
                .map_err(|e| Error::Config(format!("key '{key}': {e} (value '{raw}')")))?;
            Ok(true)
        }
    }
}

/// Errors on leftover keys after all consumers ran.
pub fn reject_unknown(map: &BTreeMap<String, String>) -> Result<()> {
    if let Some(key) = map.keys().next() {
        return Err(Error::Config(format!("unknown config key '{key}'")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blanks() {
        let map = parse("# header\n\na = 1 # trailing\n b = two \n").unwrap();
        assert_eq!(map.get("a").unwrap(), "1");
        assert_eq!(map.get("b").unwrap(), "two");
        assert_eq!(map.len(), 2);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(parse("just a bare line").is_err());
        assert!(parse("a = 1\na = 2").is_err());
    }

    #[test]
    fn take_parses_and_consumes() {
        let mut map = parse("x = 2.5\ny = 7").unwrap();
        let mut x = 0.0f64;
        assert!(take(&mut map, "x", &mut x).unwrap());
        assert_eq!(x, 2.5);
        assert!(!take(&mut map, "missing", &mut x).unwrap());
        let mut y = 0usize;
        take(&mut map, "y", &mut y).unwrap();
        assert!(reject_unknown(&map).is_ok());
    }

    #[test]
    fn round_trip_is_shortest_repr() {
        let rendered = render(&[("v", format!("{}", 0.1f64))]);
        let map = parse(&rendered).unwrap();
        let mut v = 0.0f64;
        take(&mut map.clone(), "v", &mut v).unwrap();
        assert_eq!(v, 0.1);
    }
}
