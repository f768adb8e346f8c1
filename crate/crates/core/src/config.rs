//! Run configuration: a TOML document with `[domain]`, `[cells]`, `[model]`,
//! `[solver]` and `[output]` tables.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::energy::EnergyParams;
use crate::error::{Error, Result};
use crate::geometry::{Circle, DomainSpec, OuterShape, Point};
use crate::material::Penalty;
use crate::solver::SolveConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainSection,
    #[serde(default)]
    pub cells: CellsSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub solver: SolveConfig,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Disk,
    Rect,
}

/// Outer boundary: a disk (`center`, `radius`) or a rectangle (`min`, `max`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub shape: Shape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<Point>,
    pub h: f64,
}

impl DomainSection {
    pub fn outer(&self) -> Result<OuterShape> {
        let bad = |key: &str, message: &str| Err(Error::Validation { key: format!("domain.{key}"), message: message.into() });
        match self.shape {
            Shape::Disk => {
                if self.min.is_some() || self.max.is_some() {
                    return bad("shape", "a disk takes `center` and `radius`, not `min`/`max`");
                }
                match self.radius {
                    Some(radius) => Ok(OuterShape::Disk { center: self.center.unwrap_or([0.0, 0.0]), radius }),
                    None => bad("radius", "required for a disk"),
                }
            }
            Shape::Rect => {
                if self.center.is_some() || self.radius.is_some() {
                    return bad("shape", "a rectangle takes `min` and `max`, not `center`/`radius`");
                }
                match (self.min, self.max) {
                    (Some(min), Some(max)) => Ok(OuterShape::Rect { min, max }),
                    _ => bad("min", "a rectangle needs both `min` and `max`"),
                }
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellsSection {
    #[serde(default)]
    pub centers: Vec<Point>,
    /// One radius shared by all cells, or one per cell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<Radii>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Radii {
    Shared(f64),
    Each(Vec<f64>),
}

/// `α` as a number, or `"auto"` for twice the estimated lifting constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Alpha {
    Value(f64),
    Auto,
}

impl Serialize for Alpha {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Alpha::Value(v) => s.serialize_f64(*v),
            Alpha::Auto => s.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for Alpha {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Int(i64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Alpha::Value(v)),
            Raw::Int(v) => Ok(Alpha::Value(v as f64)),
            Raw::Str(s) if s == "auto" => Ok(Alpha::Auto),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("alpha must be a number or \"auto\", got \"{s}\""))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub degree: usize,
    pub epsilon: f64,
    pub alpha: Alpha,
    pub penalty: Penalty,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cell_degree: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edge_degree: Option<usize>,
    /// LOBPCG iterations when `alpha = "auto"`.
    pub cr_iters: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let e = EnergyParams::default();
        ModelSection {
            degree: 2,
            epsilon: e.epsilon,
            alpha: Alpha::Value(e.alpha),
            penalty: e.penalty,
            cell_degree: None,
            edge_degree: None,
            cr_iters: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub vtk: bool,
    pub history: bool,
    pub mesh: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out"), vtk: true, history: true, mesh: true }
    }
}

impl RunConfig {
    /// Parses and validates a TOML configuration.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            Error::Parse { line, message: e.message().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn cells(&self) -> Vec<Circle> {
        let c = &self.cells;
        c.centers
            .iter()
            .enumerate()
            .map(|(i, &center)| {
                let radius = match &c.radius {
                    Some(Radii::Shared(r)) => *r,
                    Some(Radii::Each(v)) => v.get(i).copied().unwrap_or(f64::NAN),
                    None => f64::NAN,
                };
                Circle { center, radius }
            })
            .collect()
    }

    pub fn domain_spec(&self) -> Result<DomainSpec> {
        Ok(DomainSpec { outer: self.domain.outer()?, cells: self.cells(), h: self.domain.h })
    }

    /// Energy parameters with `α` resolved to `alpha` (needed when configured as auto).
    pub fn energy_params(&self, alpha: f64) -> EnergyParams {
        EnergyParams {
            epsilon: self.model.epsilon,
            alpha,
            penalty: self.model.penalty,
            cell_degree: self.model.cell_degree,
            edge_degree: self.model.edge_degree,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| Err(Error::Validation { key: key.into(), message });
        let c = &self.cells;
        match &c.radius {
            None if !c.centers.is_empty() => return bad("cells.radius", "missing for the listed centers".into()),
            Some(Radii::Each(v)) if v.len() != c.centers.len() => {
                return bad("cells.radius", format!("{} radii for {} centers", v.len(), c.centers.len()))
            }
            _ => {}
        }
        for (i, cell) in self.cells().iter().enumerate() {
            if !(cell.radius > 0.0) {
                return bad("cells.radius", format!("cell {i} has non-positive radius {}", cell.radius));
            }
        }
        if !(self.domain.h.is_finite() && self.domain.h > 0.0) {
            return bad("domain.h", format!("must be positive, got {}", self.domain.h));
        }
        let m = &self.model;
        if m.degree < 2 {
            return bad("model.degree", format!("the second-gradient terms need degree ≥ 2, got {}", m.degree));
        }
        if !(m.epsilon >= 0.0 && m.epsilon.is_finite()) {
            return bad("model.epsilon", format!("must be a finite non-negative number, got {}", m.epsilon));
        }
        if let Alpha::Value(a) = m.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return bad("model.alpha", format!("must be positive or \"auto\", got {a}"));
            }
        }
        match m.penalty {
            Penalty::Exponential { a, b } if !(a > 0.0 && b.is_finite()) => {
                return bad("model.penalty", format!("exponential penalty needs a > 0, got a = {a}, b = {b}"))
            }
            Penalty::Polynomial { c0, m0, c1 } if !(c0 > 0.0 && m0 >= 1 && c1 >= 0.0) => {
                return bad(
                    "model.penalty",
                    format!("polynomial penalty needs c0 > 0, m0 ≥ 1, c1 ≥ 0, got {c0}, {m0}, {c1}"),
                )
            }
            _ => {}
        }
        for d in [m.cell_degree, m.edge_degree].into_iter().flatten() {
            if d > crate::quadrature::MAX_DEGREE {
                return bad("model.cell_degree", format!("quadrature degree {d} exceeds the maximum"));
            }
        }
        self.solver.validate()?;
        self.domain_spec()?.validate().map_err(|e| Error::Validation { key: "domain".into(), message: e.to_string() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[domain]\nshape = \"disk\"\ncenter = [0.0, 0.0]\nradius = 5.0\nh = 0.5\n\n[cells]\ncenters = [[0.0, 0.0]]\nradius = 1.0\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.model.degree, 2);
        assert_eq!(c.model.alpha, Alpha::Value(10.0));
        assert_eq!(c.model.epsilon, 5e-3);
        assert_eq!(c.model.penalty, Penalty::Exponential { a: 60.0, b: 0.21 });
        assert_eq!(c.cells().len(), 1);
    }

    #[test]
    fn zero_epsilon_is_accepted() {
        let c = RunConfig::parse(&format!("{MINIMAL}\n[model]\nepsilon = 0.0\nalpha = \"auto\"\n")).unwrap();
        assert_eq!(c.model.epsilon, 0.0);
        assert_eq!(c.model.alpha, Alpha::Auto);
    }

    #[test]
    fn negative_radius_names_the_key() {
        let err = RunConfig::parse(&MINIMAL.replace("radius = 1.0", "radius = -1.0")).unwrap_err();
        assert!(matches!(&err, Error::Validation { key, .. } if key == "cells.radius"), "{err}");
    }

    #[test]
    fn unknown_keys_and_syntax_errors_report_lines() {
        let err = RunConfig::parse(&format!("{MINIMAL}\n[model]\nepsilon = 0.1\nwobble = 3\n")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 13, .. }), "{err}");
        let err = RunConfig::parse("[domain]\nshape = \"disk\"\nh = = 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = RunConfig::parse(&format!("{MINIMAL}\n[model]\nalpha = \"big\"\n")).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
    }

    #[test]
    fn penalty_variants_parse() {
        let c = RunConfig::parse(&format!(
            "{MINIMAL}\n[model]\npenalty = {{ kind = \"polynomial\", c0 = 2.0, m0 = 3, c1 = 0.5 }}\n"
        ))
        .unwrap();
        assert_eq!(c.model.penalty, Penalty::Polynomial { c0: 2.0, m0: 3, c1: 0.5 });
        let c = RunConfig::parse(&format!("{MINIMAL}\n[model.penalty]\nkind = \"none\"\n")).unwrap();
        assert_eq!(c.model.penalty, Penalty::None);
    }

    #[test]
    fn decreasing_schedule_is_rejected() {
        let err = RunConfig::parse(&format!("{MINIMAL}\n[solver]\nschedule = [0.4, 0.2]\n")).unwrap_err();
        assert!(matches!(&err, Error::Validation { key, .. } if key == "solver.schedule"), "{err}");
    }
}
