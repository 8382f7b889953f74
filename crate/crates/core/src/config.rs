//! Plain-text configuration: `key = value` lines grouped under optional
//! `[section]` headers, with `#` comments.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lightspace::GridShape;
use crate::normalnet::NetShape;
use crate::planner::{Method, DEFAULT_MIN_SEPARATION_DEG};
use crate::render::{random_bumps, scene_mix, Albedo, ShapeKind, SceneSpec};
use crate::trainer::TrainConfig;

/// Environment variable that replaces the top-level `seed` of any config.
pub const SEED_ENV: &str = "LIPIDS_SEED";

/// Parsed key/value pairs by section. Keys before any header live in the
/// section named `""`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = String::new();
        sections.insert(current.clone(), BTreeMap::new());
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Configuration(format!("line {}: unclosed section header", n + 1)))?
                    .trim();
                current = name.to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Configuration(format!("line {}: expected key = value", n + 1)))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Configuration(format!("line {}: empty key", n + 1)));
            }
            let section = sections.get_mut(&current).expect("section exists");
            if section.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(Error::Configuration(format!(
                    "line {}: duplicate key {key:?} in [{current}]",
                    n + 1
                )));
            }
        }
        Ok(KeyValues { sections })
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl Into<String>) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.into());
    }

    pub fn parse_or<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<T> {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                Error::Configuration(format!("[{section}] {key} = {v:?} is not valid"))
            }),
        }
    }

    pub fn list_or<T: FromStr>(&self, section: &str, key: &str, default: Vec<T>) -> Result<Vec<T>> {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse().map_err(|_| {
                        Error::Configuration(format!("[{section}] {key}: {s:?} is not valid"))
                    })
                })
                .collect(),
        }
    }

    pub fn bool_or(&self, section: &str, key: &str, default: bool) -> Result<bool> {
        match self.get(section, key) {
            None => Ok(default),
            Some("true" | "yes" | "on" | "1") => Ok(true),
            Some("false" | "no" | "off" | "0") => Ok(false),
            Some(v) => Err(Error::Configuration(format!(
                "[{section}] {key} = {v:?} is not a boolean"
            ))),
        }
    }

    /// Fails on any key outside `allowed`, listed as `(section, key)`.
    pub fn reject_unknown(&self, allowed: &[(&str, &str)]) -> Result<()> {
        for (section, keys) in &self.sections {
            for key in keys.keys() {
                if !allowed.iter().any(|(s, k)| s == section && k == key) {
                    return Err(Error::Configuration(format!("unknown key [{section}] {key}")));
                }
            }
        }
        Ok(())
    }

    /// Applies the seed override from the environment, if set.
    pub fn apply_seed_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            v.trim()
                .parse::<u64>()
                .map_err(|_| Error::Configuration(format!("{SEED_ENV}={v:?} is not an integer")))?;
            self.set("", "seed", v.trim());
        }
        Ok(())
    }

    /// Canonical text: sections and keys sorted, one `key = value` per line.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (section, keys) in &self.sections {
            if keys.is_empty() {
                continue;
            }
            if !section.is_empty() {
                out.push_str(&format!("[{section}]\n"));
            }
            for (k, v) in keys {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

const SCENE_KEYS: [&str; 11] = [
    "kind",
    "size",
    "height",
    "width",
    "albedo",
    "specular_strength",
    "specular_exponent",
    "noise_sigma",
    "cast_shadows",
    "bumps",
    "seed",
];

/// Reads one scene from the keys of `section`.
pub fn scene_from_keys(kv: &KeyValues, section: &str, default_seed: u64) -> Result<SceneSpec> {
    let size: usize = kv.parse_or(section, "size", 32)?;
    let height = kv.parse_or(section, "height", size)?;
    let width = kv.parse_or(section, "width", size)?;
    let seed = kv.parse_or(section, "seed", default_seed)?;
    let shape = match kv.get(section, "kind").unwrap_or("sphere") {
        "sphere" => ShapeKind::Sphere,
        "bumps" => ShapeKind::GaussianBumps {
            bumps: random_bumps(kv.parse_or(section, "bumps", 3)?, height, width, seed),
        },
        other => {
            return Err(Error::Configuration(format!(
                "[{section}] kind = {other:?}; expected sphere or bumps"
            )))
        }
    };
    let spec = SceneSpec {
        shape,
        height,
        width,
        albedo: Albedo::gray(kv.parse_or(section, "albedo", 1.0)?),
        specular_strength: kv.parse_or(section, "specular_strength", 0.0)?,
        specular_exponent: kv.parse_or(section, "specular_exponent", 1.0)?,
        noise_sigma: kv.parse_or(section, "noise_sigma", 0.0)?,
        cast_shadows: kv.bool_or(section, "cast_shadows", false)?,
        seed,
    };
    spec.validate()?;
    Ok(spec)
}

/// Scene file for the `render` subcommand: top-level keys only.
pub fn parse_scene(text: &str) -> Result<SceneSpec> {
    let mut kv = KeyValues::parse(text)?;
    kv.apply_seed_env()?;
    let allowed: Vec<(&str, &str)> = SCENE_KEYS.iter().map(|k| ("", *k)).collect();
    kv.reject_unknown(&allowed)?;
    scene_from_keys(&kv, "", 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Ls,
    Net,
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ls" => Ok(BackendKind::Ls),
            "net" => Ok(BackendKind::Net),
            _ => Err(Error::Configuration(format!("unknown backend {s:?}; expected ls or net"))),
        }
    }
}

/// How the experiment's scenes are produced.
#[derive(Debug, Clone, PartialEq)]
pub enum SceneSource {
    /// `count` scenes from [`scene_mix`].
    Mix { count: usize, size: usize, noise_sigma: f64 },
    /// `count` copies of one scene description with consecutive seeds.
    Single { count: usize, spec: SceneSpec },
    /// Previously saved dataset directories.
    Directory(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub scenes: SceneSource,
    /// Light directions file; bin centers of the grid when absent.
    pub lights_file: Option<PathBuf>,
    pub grid: GridShape,
    pub m_values: Vec<usize>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub backend: BackendKind,
    pub min_separation_deg: f64,
    pub train: TrainConfig,
    /// Canonical form of the parsed file, embedded in reports.
    pub canonical: String,
    pub hash: String,
}

const EXPERIMENT_KEYS: &[(&str, &str)] = &[
    ("", "seed"),
    ("", "output_dir"),
    ("scene", "source"),
    ("scene", "count"),
    ("scene", "dataset_dir"),
    ("scene", "lights_file"),
    ("grid", "n_azimuth"),
    ("grid", "n_elevation"),
    ("plan", "m"),
    ("plan", "methods"),
    ("plan", "seeds"),
    ("plan", "backend"),
    ("plan", "min_separation_deg"),
    ("train", "epochs"),
    ("train", "early_stop_epoch"),
    ("train", "batch_size"),
    ("train", "pixels_per_scene"),
    ("train", "steps_per_epoch"),
    ("train", "lr"),
    ("train", "beta"),
    ("train", "width"),
    ("train", "extractor_layers"),
    ("train", "head_layers"),
];

impl ExperimentConfig {
    /// Parses and validates an experiment file. Relative paths resolve
    /// against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        kv.apply_seed_env()?;
        let mut allowed: Vec<(&str, &str)> = EXPERIMENT_KEYS.to_vec();
        allowed.extend(SCENE_KEYS.iter().map(|k| ("scene", *k)));
        kv.reject_unknown(&allowed)?;

        let seed: u64 = kv.parse_or("", "seed", 0)?;
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base_dir.join(p)
            }
        };
        let output_dir = resolve(kv.get("", "output_dir").unwrap_or("out"));
        let count: usize = kv.parse_or("scene", "count", 1)?;
        let scenes = match kv.get("scene", "source").unwrap_or("single") {
            "mix" => SceneSource::Mix {
                count,
                size: kv.parse_or("scene", "size", 32)?,
                noise_sigma: kv.parse_or("scene", "noise_sigma", 0.0)?,
            },
            "single" => SceneSource::Single {
                count,
                spec: scene_from_keys(&kv, "scene", seed)?,
            },
            "directory" => {
                let dir = kv
                    .get("scene", "dataset_dir")
                    .ok_or_else(|| Error::Configuration("[scene] source = directory needs dataset_dir".into()))?;
                SceneSource::Directory(resolve(dir))
            }
            other => {
                return Err(Error::Configuration(format!(
                    "[scene] source = {other:?}; expected mix, single or directory"
                )))
            }
        };
        if count == 0 {
            return Err(Error::Configuration("[scene] count must be at least 1".into()));
        }
        let lights_file = kv.get("scene", "lights_file").map(resolve);
        for path in lights_file.iter().chain(match &scenes {
            SceneSource::Directory(d) => Some(d),
            _ => None,
        }) {
            if !path.exists() {
                return Err(Error::Configuration(format!("{} does not exist", path.display())));
            }
        }

        let grid = GridShape {
            n_azimuth: kv.parse_or("grid", "n_azimuth", 8)?,
            n_elevation: kv.parse_or("grid", "n_elevation", 6)?,
        };
        let k = grid.n_azimuth * grid.n_elevation;
        if k == 0 {
            return Err(Error::Range("grid counts must be at least 1".into()));
        }
        let m_values: Vec<usize> = kv.list_or("plan", "m", vec![3])?;
        let methods: Vec<Method> = kv.list_or("plan", "methods", vec![Method::Exhaustive])?;
        let seeds: Vec<u64> = kv.list_or("plan", "seeds", vec![seed])?;
        let backend: BackendKind = kv.parse_or("plan", "backend", BackendKind::Ls)?;
        if m_values.is_empty() || methods.is_empty() || seeds.is_empty() {
            return Err(Error::Configuration("[plan] m, methods and seeds must be nonempty".into()));
        }
        for &m in &m_values {
            if m == 0 || m > k {
                return Err(Error::Configuration(format!("M = {m} must lie in 1..={k}")));
            }
            if methods.contains(&Method::Ortho3) && m != 3 {
                return Err(Error::Configuration(format!(
                    "method ortho3 only plans triples, but M = {m} was requested"
                )));
            }
            if backend == BackendKind::Ls && m < 3 {
                return Err(Error::Configuration(format!(
                    "least squares needs M >= 3, got {m}"
                )));
            }
        }
        if backend == BackendKind::Net && methods.contains(&Method::Exhaustive) {
            return Err(Error::Configuration(
                "the exhaustive planner only runs with the ls backend".into(),
            ));
        }

        let defaults = TrainConfig::default();
        let net_defaults = NetShape::default();
        let early: i64 = kv.parse_or("train", "early_stop_epoch", defaults.early_stop_epoch.map_or(0, |e| e as i64))?;
        let train = TrainConfig {
            m: m_values[0],
            epochs: kv.parse_or("train", "epochs", defaults.epochs)?,
            early_stop_epoch: (early > 0).then_some(early as usize),
            batch_size: kv.parse_or("train", "batch_size", defaults.batch_size)?,
            pixels_per_scene: kv.parse_or("train", "pixels_per_scene", defaults.pixels_per_scene)?,
            steps_per_epoch: kv.parse_or("train", "steps_per_epoch", defaults.steps_per_epoch)?,
            lr: kv.parse_or("train", "lr", defaults.lr)?,
            beta: kv.parse_or("train", "beta", defaults.beta)?,
            seed,
            net: NetShape {
                extractor_layers: kv.parse_or("train", "extractor_layers", net_defaults.extractor_layers)?,
                head_layers: kv.parse_or("train", "head_layers", net_defaults.head_layers)?,
                width: kv.parse_or("train", "width", net_defaults.width)?,
            },
            freeze_selection: false,
        };

        Ok(ExperimentConfig {
            seed,
            output_dir,
            scenes,
            lights_file,
            grid,
            m_values,
            methods,
            seeds,
            backend,
            min_separation_deg: kv.parse_or("plan", "min_separation_deg", DEFAULT_MIN_SEPARATION_DEG)?,
            train,
            canonical: kv.canonical(),
            hash: kv.hash(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::format(path, e.to_string()))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Scene descriptions for rendered sources.
    pub fn scene_specs(&self) -> Vec<SceneSpec> {
        match &self.scenes {
            SceneSource::Mix {
                count,
                size,
                noise_sigma,
            } => scene_mix(*count, *size, *noise_sigma, self.seed),
            SceneSource::Single { count, spec } => (0..*count)
                .map(|i| {
                    let mut s = spec.clone();
                    s.seed = spec.seed.wrapping_add(i as u64);
                    if let ShapeKind::GaussianBumps { bumps } = &mut s.shape {
                        if i > 0 {
                            *bumps = random_bumps(bumps.len(), s.height, s.width, s.seed);
                        }
                    }
                    s
                })
                .collect(),
            SceneSource::Directory(_) => Vec::new(),
        }
    }
}
