//! Flat key=value configuration files, shared between the head builder and
//! the command-line tool.
//!
//! Grammar: one `key = value` pair per line ('=' required, whitespace
//! ignored), `#` starts a comment, blank lines allowed. Keys:
//!
//! head: stacks, channels, combined, extra_conv, bn_mode
//!   (off|single|independent|integrated), sepc_variant (none|lite|full),
//!   scale_extent (1|3), num_classes, anchors
//! cost model: image_c, image_h, image_w, levels, kernel (odd size),
//!   size_mode (fractional|ceil)
//! common: seed

use std::collections::BTreeMap;

use crate::analysis::{CostModelInput, SizeMode};
use crate::error::{Error, Result};
use crate::pconv::{BnMode, HeadConfig, HeadOutputs, SepcVariant};

const KNOWN_KEYS: &[&str] = &[
    "stacks",
    "channels",
    "combined",
    "extra_conv",
    "bn_mode",
    "sepc_variant",
    "scale_extent",
    "num_classes",
    "anchors",
    "seed",
    "image_c",
    "image_h",
    "image_w",
    "levels",
    "kernel",
    "size_mode",
];

/// Parsed key=value map with typed accessors.
#[derive(Debug, Clone, Default)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

pub fn parse_config(text: &str) -> Result<ConfigMap> {
    let mut entries = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.split_once('#') {
            Some((head, _)) => head,
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("line {}: expected key = value", lineno + 1))
        })?;
        let key = key.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::InvalidConfig(format!(
                "line {}: unknown key '{key}'",
                lineno + 1
            )));
        }
        entries.insert(key, value.trim().to_string());
    }
    Ok(ConfigMap { entries })
}

impl ConfigMap {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| {
                Error::InvalidConfig(format!("key '{key}': cannot parse '{v}'"))
            }),
        }
    }

    fn parse_bool(&self, key: &str) -> Result<Option<bool>> {
        match self.entries.get(key).map(String::as_str) {
            None => Ok(None),
            Some("true") | Some("1") | Some("yes") => Ok(Some(true)),
            Some("false") | Some("0") | Some("no") => Ok(Some(false)),
            Some(v) => Err(Error::InvalidConfig(format!(
                "key '{key}': expected a boolean, got '{v}'"
            ))),
        }
    }

    pub fn seed(&self) -> Result<Option<u64>> {
        self.parse("seed")
    }

    /// Overlay the head-related keys onto a configuration.
    pub fn apply_head(&self, cfg: &mut HeadConfig) -> Result<()> {
        if let Some(v) = self.parse("stacks")? {
            cfg.stacks = v;
        }
        if let Some(v) = self.parse("channels")? {
            cfg.channels = v;
        }
        if let Some(v) = self.parse_bool("combined")? {
            cfg.combined = v;
        }
        if let Some(v) = self.parse_bool("extra_conv")? {
            cfg.extra_conv = v;
        }
        if let Some(v) = self.get("bn_mode") {
            cfg.bn_mode = match v {
                "off" => None,
                "single" => Some(BnMode::Single),
                "independent" => Some(BnMode::Independent),
                "integrated" => Some(BnMode::Integrated),
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "bn_mode: expected off|single|independent|integrated, got '{other}'"
                    )))
                }
            };
        }
        if let Some(v) = self.get("sepc_variant") {
            cfg.sepc_variant = parse_variant(v)?;
        }
        if let Some(v) = self.parse("scale_extent")? {
            cfg.scale_extent = v;
        }
        let classes: Option<usize> = self.parse("num_classes")?;
        let anchors: Option<usize> = self.parse("anchors")?;
        match (classes, anchors) {
            (Some(num_classes), Some(anchors)) => {
                cfg.outputs = Some(HeadOutputs {
                    num_classes,
                    anchors,
                });
            }
            (None, None) => {}
            _ => {
                return Err(Error::InvalidConfig(
                    "num_classes and anchors must be given together".into(),
                ))
            }
        }
        cfg.validate()
    }

    /// Overlay the cost-model keys.
    pub fn apply_cost(&self, inp: &mut CostModelInput) -> Result<()> {
        if let Some(v) = self.parse("image_c")? {
            inp.image.0 = v;
        }
        if let Some(v) = self.parse("image_h")? {
            inp.image.1 = v;
        }
        if let Some(v) = self.parse("image_w")? {
            inp.image.2 = v;
        }
        if let Some(v) = self.parse::<usize>("levels")? {
            inp.strides = (0..v).map(|l| 8 << l).collect();
        }
        if let Some(v) = self.parse("channels")? {
            inp.channels = v;
        }
        if let Some(v) = self.parse::<usize>("kernel")? {
            inp.kernel = (v, v);
        }
        if let Some(v) = self.get("size_mode") {
            inp.size_mode = parse_size_mode(v)?;
        }
        inp.validate()
    }
}

pub fn parse_variant(v: &str) -> Result<SepcVariant> {
    match v {
        "none" => Ok(SepcVariant::None),
        "lite" => Ok(SepcVariant::Lite),
        "full" => Ok(SepcVariant::Full),
        other => Err(Error::InvalidConfig(format!(
            "sepc_variant: expected none|lite|full, got '{other}'"
        ))),
    }
}

pub fn parse_size_mode(v: &str) -> Result<SizeMode> {
    match v {
        "fractional" => Ok(SizeMode::Fractional),
        "ceil" => Ok(SizeMode::Ceil),
        other => Err(Error::InvalidConfig(format!(
            "size_mode: expected fractional|ceil, got '{other}'"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let cfg = parse_config(
            "# a comment\n\n  stacks = 3  # trailing comment\nsepc_variant=lite\nseed = 42\n",
        )
        .unwrap();
        let mut head = HeadConfig::default();
        cfg.apply_head(&mut head).unwrap();
        assert_eq!(head.stacks, 3);
        assert_eq!(head.sepc_variant, SepcVariant::Lite);
        assert_eq!(cfg.seed().unwrap(), Some(42));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_lines() {
        assert!(matches!(
            parse_config("bogus = 1"),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            parse_config("stacks 4"),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn head_outputs_require_both_keys() {
        let cfg = parse_config("num_classes = 80").unwrap();
        let mut head = HeadConfig::default();
        assert!(cfg.apply_head(&mut head).is_err());

        let cfg = parse_config("num_classes = 80\nanchors = 9").unwrap();
        cfg.apply_head(&mut head).unwrap();
        assert_eq!(
            head.outputs,
            Some(HeadOutputs {
                num_classes: 80,
                anchors: 9
            })
        );
    }

    #[test]
    fn cost_keys_reshape_the_model() {
        let cfg = parse_config("levels = 3\nsize_mode = ceil\nimage_h = 640").unwrap();
        let mut inp = CostModelInput::default();
        cfg.apply_cost(&mut inp).unwrap();
        assert_eq!(inp.strides, vec![8, 16, 32]);
        assert_eq!(inp.size_mode, SizeMode::Ceil);
        assert_eq!(inp.image.1, 640);
    }

    #[test]
    fn applied_values_are_validated() {
        let cfg = parse_config("stacks = 9").unwrap();
        let mut head = HeadConfig::default();
        assert!(cfg.apply_head(&mut head).is_err());
    }
}
