use std::path::Path;

use crate::Format;

/// Settings from a `key=value` file. Blank lines and `#` comments are
/// ignored.
#[derive(Debug, Default)]
pub struct Config {
    pub format: Option<Format>,
    pub color: Option<bool>,
}

impl Config {
    pub fn read(path: &Path) -> Result<Config, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config '{}': {e}", path.display()))?;
        Config::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Config, String> {
        let mut c = Config::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("config line {}: expected key=value", i + 1))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "format" => {
                    c.format = Some(match v {
                        "text" => Format::Text,
                        "structured" => Format::Structured,
                        _ => return Err(format!("config line {}: format must be text or structured", i + 1)),
                    })
                }
                "color" => {
                    c.color = Some(match v {
                        "on" | "true" => true,
                        "off" | "false" => false,
                        _ => return Err(format!("config line {}: color must be on or off", i + 1)),
                    })
                }
                _ => return Err(format!("config line {}: unknown key '{k}'", i + 1)),
            }
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_known_keys() {
        let c = Config::parse("# settings\nformat = structured\ncolor=off\n").unwrap();
        assert_eq!(c.format, Some(Format::Structured));
        assert_eq!(c.color, Some(false));
        assert!(Config::parse("colour=on").unwrap_err().contains("unknown key"));
        assert!(Config::parse("format").is_err());
    }
}
