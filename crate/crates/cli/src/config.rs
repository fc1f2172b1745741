use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// File name of the effective-config echo written into output directories.
pub const CONFIG_ECHO: &str = "config.toml";

/// Reads `file` if given, overlays every flag that was set, and decodes the
/// merged table. Flags win over file values.
pub fn resolve<C: DeserializeOwned>(file: Option<&Path>, flags: &impl Serialize) -> Result<C> {
    let mut table = match file {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str::<toml::Table>(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => toml::Table::new(),
    };
    let overrides = toml::Table::try_from(flags).context("encoding flags")?;
    table.extend(overrides);
    toml::Value::Table(table).try_into().context("invalid configuration")
}

pub fn to_toml(config: &impl Serialize) -> Result<String> {
    toml::to_string_pretty(config).context("encoding config")
}

/// Writes the effective config to `dir/config.toml`.
pub fn echo(dir: &Path, config: &impl Serialize) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    conekp::data::dataset::write_atomic(&dir.join(CONFIG_ECHO), to_toml(config)?.as_bytes())?;
    Ok(())
}

/// `"x0,y0,x1,y1"` as a box.
pub fn parse_box(s: &str) -> std::result::Result<[f64; 4], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into()
        .map_err(|v: Vec<f64>| format!("expected 4 comma-separated numbers, got {}", v.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize, Default)]
    struct Flags {
        count: Option<usize>,
        name: Option<String>,
    }

    #[derive(Deserialize, Debug, PartialEq)]
    #[serde(default, deny_unknown_fields)]
    struct Conf {
        count: usize,
        name: String,
        seed: u64,
    }

    impl Default for Conf {
        fn default() -> Self {
            Self {
                count: 1,
                name: "a".into(),
                seed: 9,
            }
        }
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, "count = 5\nseed = 3\n").unwrap();
        let flags = Flags {
            count: Some(7),
            name: None,
        };
        let c: Conf = resolve(Some(&p), &flags).unwrap();
        assert_eq!(
            c,
            Conf {
                count: 7,
                name: "a".into(),
                seed: 3
            }
        );
        let c: Conf = resolve(None, &Flags::default()).unwrap();
        assert_eq!(c, Conf::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, "cuont = 5\n").unwrap();
        assert!(resolve::<Conf>(Some(&p), &Flags::default()).is_err());
    }

    #[test]
    fn boxes_parse() {
        assert_eq!(parse_box("1, 2,3,4.5"), Ok([1.0, 2.0, 3.0, 4.5]));
        assert!(parse_box("1,2,3").is_err());
        assert!(parse_box("1,2,x,4").is_err());
    }
}
