//! Line-based `key = value` configuration text.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use crate::backbone::{BackboneConfig, Injection};
use crate::error::{Error, Result};

pub type KvMap = BTreeMap<String, String>;

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped;
/// a repeated key is an error.
pub fn parse_kv(text: &str) -> Result<KvMap> {
    let mut out = KvMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", i + 1)));
        }
    }
    Ok(out)
}

/// Inverse of [`parse_kv`], keys in sorted order.
pub fn format_kv(map: &KvMap) -> String {
    map.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Typed access to a [`KvMap`] that rejects keys nobody asked for.
#[derive(Debug)]
pub struct KvReader<'a> {
    map: &'a KvMap,
    seen: BTreeSet<&'a str>,
}

impl<'a> KvReader<'a> {
    pub fn new(map: &'a KvMap) -> Self {
        Self {
            map,
            seen: BTreeSet::new(),
        }
    }

    pub fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        let Some((k, v)) = self.map.get_key_value(key) else {
            return Ok(None);
        };
        self.seen.insert(k.as_str());
        v.parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
    }

    /// Overwrites `slot` when `key` is present.
    pub fn set<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T> {
        self.get(key)?.ok_or_else(|| Error::Config(format!("missing key `{key}`")))
    }

    /// Marks `key` as known without reading it.
    pub fn skip(&mut self, key: &str) {
        if let Some((k, _)) = self.map.get_key_value(key) {
            self.seen.insert(k.as_str());
        }
    }

    /// Errors if any key was never read.
    pub fn finish(self) -> Result<()> {
        let unknown: Vec<&str> = self.map.keys().map(String::as_str).filter(|k| !self.seen.contains(k)).collect();
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
        }
        Ok(())
    }
}

const BACKBONE_KEYS: [&str; 12] = [
    "depth",
    "hidden_dim",
    "heads",
    "patch_size",
    "bottleneck",
    "num_classes",
    "image_size",
    "waypoint_dim",
    "time_freq_dim",
    "mlp_ratio",
    "injection",
    "noise_reference",
];

pub fn backbone_to_kv(prefix: &str, cfg: &BackboneConfig, out: &mut KvMap) {
    let vals = [
        cfg.depth.to_string(),
        cfg.hidden_dim.to_string(),
        cfg.heads.to_string(),
        cfg.patch_size.to_string(),
        cfg.bottleneck.to_string(),
        cfg.num_classes.to_string(),
        cfg.image_size.to_string(),
        cfg.waypoint_dim.to_string(),
        cfg.time_freq_dim.to_string(),
        cfg.mlp_ratio.to_string(),
        cfg.injection.name().to_string(),
        cfg.noise_reference.to_string(),
    ];
    for (k, v) in BACKBONE_KEYS.iter().zip(vals) {
        out.insert(format!("{prefix}{k}"), v);
    }
}

/// Reads `{prefix}<field>` keys over `base`.
pub fn backbone_from_kv(prefix: &str, r: &mut KvReader<'_>, base: BackboneConfig) -> Result<BackboneConfig> {
    let mut c = base;
    let key = |k: &str| format!("{prefix}{k}");
    r.set(&key("depth"), &mut c.depth)?;
    r.set(&key("hidden_dim"), &mut c.hidden_dim)?;
    r.set(&key("heads"), &mut c.heads)?;
    r.set(&key("patch_size"), &mut c.patch_size)?;
    r.set(&key("bottleneck"), &mut c.bottleneck)?;
    r.set(&key("num_classes"), &mut c.num_classes)?;
    r.set(&key("image_size"), &mut c.image_size)?;
    r.set(&key("waypoint_dim"), &mut c.waypoint_dim)?;
    r.set(&key("time_freq_dim"), &mut c.time_freq_dim)?;
    r.set(&key("mlp_ratio"), &mut c.mlp_ratio)?;
    r.set(&key("noise_reference"), &mut c.noise_reference)?;
    if let Some(s) = r.get::<String>(&key("injection"))? {
        c.injection = Injection::parse(&s)?;
    }
    c.validate()?;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_format() {
        let m = parse_kv("# header\n a = 1 \n\nb=two # trailing\n").unwrap();
        assert_eq!(m["a"], "1");
        assert_eq!(m["b"], "two");
        assert_eq!(parse_kv(&format_kv(&m)).unwrap(), m);
        assert!(parse_kv("a = 1\na = 2").is_err());
        assert!(parse_kv("novalue").is_err());
    }

    #[test]
    fn reader_rejects_unknown_keys() {
        let m = parse_kv("x = 3\ntypo = 1").unwrap();
        let mut r = KvReader::new(&m);
        assert_eq!(r.get::<usize>("x").unwrap(), Some(3));
        assert!(r.finish().is_err());
        let m = parse_kv("x = nope").unwrap();
        assert!(KvReader::new(&m).get::<usize>("x").is_err());
    }

    #[test]
    fn backbone_round_trip() {
        let mut cfg = BackboneConfig::desk_pixel(7);
        cfg.injection = Injection::InContext;
        let mut m = KvMap::new();
        backbone_to_kv("pixel.", &cfg, &mut m);
        let mut r = KvReader::new(&m);
        let back = backbone_from_kv("pixel.", &mut r, BackboneConfig::desk_waypoints(2)).unwrap();
        r.finish().unwrap();
        assert_eq!(back, cfg);
    }
}
