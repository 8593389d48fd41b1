//! Run configuration: named presets, `key = value` config files and
//! per-key overrides.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::ConfigError;
use crate::models::{ModelConfig, ModelKind};
use crate::network::{CouplingSpec, SimConfig};

/// How a frequency map is turned into labels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum SegmentationMode {
    /// Otsu threshold on the frequency histogram.
    OtsuBinary,
    /// Binary split at a fixed frequency.
    Threshold(f64),
    /// Gap clustering with an absolute gap (AU⁻¹).
    Gap(f64),
    /// Gap clustering with a gap expressed as a fraction of the mean
    /// frequency of the oscillating nodes.
    RelativeGap(f64),
}

impl fmt::Display for SegmentationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SegmentationMode::OtsuBinary => f.write_str("otsu"),
            SegmentationMode::Threshold(v) => write!(f, "threshold:{v}"),
            SegmentationMode::Gap(v) => write!(f, "gap:{v}"),
            SegmentationMode::RelativeGap(v) => write!(f, "relative-gap:{v}"),
        }
    }
}

impl FromStr for SegmentationMode {
    type Err = ConfigError;

    /// Accepts `otsu`, `threshold:<f>`, `gap:<f>` and `relative-gap:<f>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, value) = match s.split_once(':') {
            Some((k, v)) => (k.trim(), Some(v.trim())),
            None => (s.trim(), None),
        };
        let number = || -> Result<f64, ConfigError> {
            let v = value.ok_or_else(|| ConfigError::invalid("mode", format!("`{kind}` needs a value")))?;
            parse_f64("mode", v)
        };
        let mode = match kind {
            "otsu" | "otsu-binary" if value.is_none() => SegmentationMode::OtsuBinary,
            "threshold" => SegmentationMode::Threshold(number()?),
            "gap" => SegmentationMode::Gap(number()?),
            "relative-gap" => SegmentationMode::RelativeGap(number()?),
            _ => return Err(ConfigError::invalid("mode", format!("unrecognised mode `{s}`"))),
        };
        mode.validate()?;
        Ok(mode)
    }
}

impl SegmentationMode {
    pub fn validate(&self) -> Result<(), ConfigError> {
        match *self {
            SegmentationMode::OtsuBinary => Ok(()),
            SegmentationMode::Threshold(v) if v.is_finite() => Ok(()),
            SegmentationMode::Gap(v) | SegmentationMode::RelativeGap(v) if v.is_finite() && v > 0.0 => Ok(()),
            _ => Err(ConfigError::invalid("mode", "threshold must be finite (and > 0 for gaps)")),
        }
    }
}

/// Names accepted by [`RunConfig::preset`].
pub const PRESETS: [&str; 5] = ["neural-default", "bz-default", "mems-default", "shape-extraction", "tuned-thresholds"];

/// Coupling coefficients for detail segmentation.
pub fn detail_coupling(kind: ModelKind) -> f64 {
    match kind {
        ModelKind::Neural => 0.02,
        ModelKind::Bz => 0.1,
        ModelKind::Mems => 0.05,
    }
}

/// Stronger coupling coefficients for shape extraction.
pub fn shape_coupling(kind: ModelKind) -> f64 {
    match kind {
        ModelKind::Neural => 0.05,
        ModelKind::Bz => 0.35,
        ModelKind::Mems => 0.1,
    }
}

/// Hand-tuned gap thresholds (AU⁻¹).
pub fn tuned_gap(kind: ModelKind) -> f64 {
    match kind {
        ModelKind::Neural => 0.025,
        ModelKind::Bz => 0.0125,
        ModelKind::Mems => 0.02,
    }
}

/// Everything needed to run the image → labels pipeline for one model.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub coupling: CouplingSpec,
    pub sim: SimConfig,
    pub mode: SegmentationMode,
    /// Histogram bins for Otsu thresholding.
    pub otsu_bins: usize,
}

impl RunConfig {
    /// The `<model>-default` preset.
    pub fn for_model(kind: ModelKind) -> Self {
        Self {
            model: ModelConfig::experiment(kind),
            coupling: CouplingSpec::nearest(detail_coupling(kind)),
            sim: SimConfig::for_model(kind),
            mode: SegmentationMode::OtsuBinary,
            otsu_bins: 256,
        }
    }

    /// Looks up a named preset. The `*-default` presets fix their model;
    /// the others use `model` (BZ when `None`).
    pub fn preset(name: &str, model: Option<ModelKind>) -> Result<Self, ConfigError> {
        let fixed = match name {
            "neural-default" => Some(ModelKind::Neural),
            "bz-default" => Some(ModelKind::Bz),
            "mems-default" => Some(ModelKind::Mems),
            "shape-extraction" | "tuned-thresholds" => None,
            other => {
                return Err(ConfigError::invalid(
                    "preset",
                    format!("unknown preset `{other}` (expected one of {})", PRESETS.join(", ")),
                ))
            }
        };
        if let (Some(fixed), Some(requested)) = (fixed, model) {
            if fixed != requested {
                return Err(ConfigError::invalid("model", format!("preset `{name}` is for the {fixed} model")));
            }
        }
        let kind = fixed.or(model).unwrap_or(ModelKind::Bz);
        let mut cfg = Self::for_model(kind);
        match name {
            "shape-extraction" => cfg.coupling.coefficient = shape_coupling(kind),
            "tuned-thresholds" => cfg.mode = SegmentationMode::Gap(tuned_gap(kind)),
            _ => {}
        }
        Ok(cfg)
    }

    /// Builds a config from ordered `(key, value)` settings. The last
    /// `preset` and `model` entries pick the base; every other key is then
    /// applied in order with [`RunConfig::apply`].
    pub fn resolve(settings: &[(String, String)]) -> Result<Self, ConfigError> {
        let last = |key: &str| settings.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
        let model = last("model").map(str::parse::<ModelKind>).transpose()?;
        let mut cfg = match last("preset") {
            Some(name) => Self::preset(name, model)?,
            None => Self::for_model(model.unwrap_or(ModelKind::Bz)),
        };
        for (key, value) in settings.iter().filter(|(k, _)| k != "preset" && k != "model") {
            cfg.apply(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Overrides a single field. Model parameter keys are prefixed with the
    /// model name (`bz.theta`, `mems.omega_hi`, ...).
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let f = || parse_f64(key, value);
        match key {
            "coupling" => self.coupling.coefficient = f()?,
            "radius" => self.coupling.radius = parse(key, value)?,
            "include_self" => self.coupling.include_self = parse(key, value)?,
            "boundary" => self.coupling.boundary = value.parse()?,
            "dt" => self.sim.dt = f()?,
            "total_time" => self.sim.total_time = f()?,
            "transient_fraction" => self.sim.transient_fraction = f()?,
            "window" => self.sim.window = f()?,
            "convergence_tol" => self.sim.convergence_tol = f()?,
            "seed" => self.sim.seed = parse(key, value)?,
            "initial_jitter" => self.sim.initial_jitter = parse(key, value)?,
            "rho_jitter" => self.sim.rho_jitter = parse(key, value)?,
            "stop_on_convergence" => self.sim.stop_on_convergence = parse(key, value)?,
            "parallel_min_nodes" => self.sim.parallel_min_nodes = parse(key, value)?,
            "mode" => self.mode = value.parse()?,
            "otsu_bins" => self.otsu_bins = parse(key, value)?,
            _ => self.apply_model_param(key, f()?)?,
        }
        Ok(())
    }

    fn apply_model_param(&mut self, key: &str, v: f64) -> Result<(), ConfigError> {
        let slot = match (&mut self.model, key) {
            (ModelConfig::Neural(p), "neural.rho") => &mut p.rho,
            (ModelConfig::Neural(p), "neural.epsilon") => &mut p.epsilon,
            (ModelConfig::Neural(p), "neural.gamma") => &mut p.gamma,
            (ModelConfig::Neural(p), "neural.beta") => &mut p.beta,
            (ModelConfig::Neural(p), "neural.stimulus_lo") => &mut p.stimulus_lo,
            (ModelConfig::Neural(p), "neural.stimulus_hi") => &mut p.stimulus_hi,
            (ModelConfig::Bz(p), "bz.beta1") => &mut p.beta1,
            (ModelConfig::Bz(p), "bz.beta2") => &mut p.beta2,
            (ModelConfig::Bz(p), "bz.theta") => &mut p.theta,
            (ModelConfig::Bz(p), "bz.tau_lo") => &mut p.tau_lo,
            (ModelConfig::Bz(p), "bz.tau_hi") => &mut p.tau_hi,
            (ModelConfig::Mems(p), "mems.damping_c") => &mut p.damping_c,
            (ModelConfig::Mems(p), "mems.nonlinear_d") => &mut p.nonlinear_d,
            (ModelConfig::Mems(p), "mems.omega_lo") => &mut p.omega_lo,
            (ModelConfig::Mems(p), "mems.omega_hi") => &mut p.omega_hi,
            (model, _) => {
                let reason = match key.split_once('.') {
                    Some((prefix, _)) if prefix.parse::<ModelKind>().is_ok() => {
                        format!("not a parameter of the {} model", model.kind())
                    }
                    _ => "unknown configuration key".to_string(),
                };
                return Err(ConfigError::invalid(key, reason));
            }
        };
        *slot = v;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate()?;
        self.coupling.validate()?;
        self.sim.validate()?;
        self.mode.validate()?;
        if self.otsu_bins < 2 {
            return Err(ConfigError::invalid("otsu_bins", "must be >= 2"));
        }
        Ok(())
    }
}

/// Parses a config file: one `key = value` per line, `#` starts a comment,
/// blank lines are ignored.
pub fn parse_config_file(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::invalid(format!("line {}", n + 1), "expected `key = value`"))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::invalid(format!("line {}", n + 1), "empty key or value"));
        }
        out.push((key.to_string(), value.to_string()));
    }
    Ok(out)
}

fn parse_f64(key: &str, value: &str) -> Result<f64, ConfigError> {
    let v: f64 = parse(key, value)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ConfigError::invalid(key, "must be finite"))
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::invalid(key, format!("cannot parse `{value}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn presets_carry_their_couplings() {
        for kind in ModelKind::ALL {
            let d = RunConfig::preset(&format!("{kind}-default"), None).unwrap();
            assert_eq!(d.model.kind(), kind);
            assert_eq!(d.coupling.coefficient, detail_coupling(kind));
            let s = RunConfig::preset("shape-extraction", Some(kind)).unwrap();
            assert_eq!(s.coupling.coefficient, shape_coupling(kind));
            let t = RunConfig::preset("tuned-thresholds", Some(kind)).unwrap();
            assert_eq!(t.mode, SegmentationMode::Gap(tuned_gap(kind)));
        }
        assert!(RunConfig::preset("bz-default", Some(ModelKind::Mems)).is_err());
        assert!(RunConfig::preset("nope", None).is_err());
    }

    #[test]
    fn resolve_applies_in_order() {
        let cfg = RunConfig::resolve(&settings(&[
            ("coupling", "0.2"),
            ("model", "mems"),
            ("mems.omega_hi", "7.0"),
            ("coupling", "0.3"),
            ("mode", "gap:0.01"),
        ]))
        .unwrap();
        assert_eq!(cfg.model.kind(), ModelKind::Mems);
        assert_eq!(cfg.coupling.coefficient, 0.3);
        assert_eq!(cfg.model.control_range().1, 7.0);
        assert_eq!(cfg.mode, SegmentationMode::Gap(0.01));
    }

    #[test]
    fn rejects_bad_settings() {
        for bad in [
            [("bz.theta", "x")],
            [("neural.rho", "0.1")],
            [("frobnicate", "1")],
            [("coupling", "-1")],
            [("dt", "inf")],
            [("mode", "gap:0")],
            [("mode", "otsu:3")],
            [("otsu_bins", "1")],
        ] {
            assert!(RunConfig::resolve(&settings(&bad)).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn mode_roundtrip() {
        for m in [
            SegmentationMode::OtsuBinary,
            SegmentationMode::Threshold(0.4),
            SegmentationMode::Gap(0.025),
            SegmentationMode::RelativeGap(0.1),
        ] {
            assert_eq!(m.to_string().parse::<SegmentationMode>().unwrap(), m);
        }
    }

    #[test]
    fn config_file_parsing() {
        let text = "# run\nmodel = neural\n\ncoupling=0.05  # stronger\n";
        let parsed = parse_config_file(text).unwrap();
        assert_eq!(parsed, settings(&[("model", "neural"), ("coupling", "0.05")]));
        assert!(parse_config_file("coupling 0.1").is_err());
        assert!(parse_config_file("coupling =").is_err());
    }
}
