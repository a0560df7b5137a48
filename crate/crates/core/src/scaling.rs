//! Physical constants and the canonical unit system used by every solver.
//!
//! Lengths are measured in lunar radii, speeds in circular speed at the
//! surface, masses in the initial lander mass. In these units the lunar
//! gravitational parameter is exactly one.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScalingError {
    #[error("unknown unit role `{0}`")]
    UnknownUnitRole(String),
    #[error("constant `{name}` must be strictly positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error(
        "maximum thrust {thrust_n} N cannot hover a {mass_kg} kg lander at the surface \
         (weight {weight_n} N)"
    )]
    InsufficientThrust {
        thrust_n: f64,
        mass_kg: f64,
        weight_n: f64,
    },
    #[error("invalid constants document: {0}")]
    Config(String),
}

/// Lander propulsion and central-body constants, in SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Gravitational parameter, m³/s².
    pub mu: f64,
    /// Lunar radius, m.
    #[serde(rename = "R0_m")]
    pub lunar_radius: f64,
    /// Specific impulse, s.
    #[serde(rename = "Isp_s")]
    pub isp: f64,
    /// Sea-level gravity used in the exhaust-speed product, m/s².
    pub ge: f64,
    /// Maximum thrust, N.
    #[serde(rename = "Tmax_N")]
    pub max_thrust: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            mu: 4.90275e12,
            lunar_radius: 1.738e6,
            isp: 300.0,
            ge: 9.81,
            max_thrust: 1500.0,
        }
    }
}

impl PhysicalConstants {
    /// Reads constants from a JSON document. Missing keys keep their defaults.
    pub fn from_json(text: &str) -> Result<Self, ScalingError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Overrides {
            mu: Option<f64>,
            #[serde(rename = "R0_m")]
            lunar_radius: Option<f64>,
            #[serde(rename = "Isp_s")]
            isp: Option<f64>,
            ge: Option<f64>,
            #[serde(rename = "Tmax_N")]
            max_thrust: Option<f64>,
        }
        let o: Overrides =
            serde_json::from_str(text).map_err(|e| ScalingError::Config(e.to_string()))?;
        let d = Self::default();
        let c = Self {
            mu: o.mu.unwrap_or(d.mu),
            lunar_radius: o.lunar_radius.unwrap_or(d.lunar_radius),
            isp: o.isp.unwrap_or(d.isp),
            ge: o.ge.unwrap_or(d.ge),
            max_thrust: o.max_thrust.unwrap_or(d.max_thrust),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ScalingError> {
        for (name, value) in [
            ("mu", self.mu),
            ("R0_m", self.lunar_radius),
            ("Isp_s", self.isp),
            ("ge", self.ge),
            ("Tmax_N", self.max_thrust),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ScalingError::NonPositive { name, value });
            }
        }
        Ok(())
    }

    /// Surface gravitational acceleration mu / R0², m/s².
    pub fn surface_gravity(&self) -> f64 {
        self.mu / (self.lunar_radius * self.lunar_radius)
    }
}

/// The seven physical dimensions that cross the scaled/dimensional boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnitRole {
    Length,
    Speed,
    AngularRate,
    Time,
    Mass,
    Force,
    Acceleration,
}

impl UnitRole {
    pub const ALL: [UnitRole; 7] = [
        UnitRole::Length,
        UnitRole::Speed,
        UnitRole::AngularRate,
        UnitRole::Time,
        UnitRole::Mass,
        UnitRole::Force,
        UnitRole::Acceleration,
    ];
}

impl FromStr for UnitRole {
    type Err = ScalingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "length" => UnitRole::Length,
            "speed" => UnitRole::Speed,
            "angular-rate" => UnitRole::AngularRate,
            "time" => UnitRole::Time,
            "mass" => UnitRole::Mass,
            "force" => UnitRole::Force,
            "acceleration" => UnitRole::Acceleration,
            other => return Err(ScalingError::UnknownUnitRole(other.to_owned())),
        })
    }
}

impl fmt::Display for UnitRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            UnitRole::Length => "length",
            UnitRole::Speed => "speed",
            UnitRole::AngularRate => "angular-rate",
            UnitRole::Time => "time",
            UnitRole::Mass => "mass",
            UnitRole::Force => "force",
            UnitRole::Acceleration => "acceleration",
        };
        f.write_str(s)
    }
}

/// Reference magnitudes for one problem. The mass scale is bound to the
/// initial lander mass, so every problem starts at scaled mass 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scales {
    pub length: f64,
    pub speed: f64,
    pub time: f64,
    pub mass: f64,
    pub force: f64,
    pub acceleration: f64,
}

impl Scales {
    /// Builds the scales for a lander of initial mass `m_ref` kg.
    ///
    /// Fails if the engine cannot outweigh surface gravity at `m_ref`; every
    /// admissible terminal mass is at most `m_ref`, so this guarantees scaled
    /// thrust exceeds scaled terminal mass.
    pub fn new(consts: &PhysicalConstants, m_ref: f64) -> Result<Self, ScalingError> {
        consts.validate()?;
        if !(m_ref > 0.0 && m_ref.is_finite()) {
            return Err(ScalingError::NonPositive {
                name: "m_ref",
                value: m_ref,
            });
        }
        let length = consts.lunar_radius;
        let speed = (consts.mu / length).sqrt();
        let time = (length * length * length / consts.mu).sqrt();
        let acceleration = consts.surface_gravity();
        let force = m_ref * acceleration;
        if consts.max_thrust <= force {
            return Err(ScalingError::InsufficientThrust {
                thrust_n: consts.max_thrust,
                mass_kg: m_ref,
                weight_n: force,
            });
        }
        Ok(Self {
            length,
            speed,
            time,
            mass: m_ref,
            force,
            acceleration,
        })
    }

    pub fn scale_of(&self, role: UnitRole) -> f64 {
        match role {
            UnitRole::Length => self.length,
            UnitRole::Speed => self.speed,
            UnitRole::AngularRate => 1.0 / self.time,
            UnitRole::Time => self.time,
            UnitRole::Mass => self.mass,
            UnitRole::Force => self.force,
            UnitRole::Acceleration => self.acceleration,
        }
    }

    pub fn nondimensionalize(&self, value: f64, role: UnitRole) -> f64 {
        value / self.scale_of(role)
    }

    pub fn dimensionalize(&self, value: f64, role: UnitRole) -> f64 {
        value * self.scale_of(role)
    }

    /// String-keyed variant used at configuration boundaries.
    pub fn nondimensionalize_named(&self, value: f64, role: &str) -> Result<f64, ScalingError> {
        Ok(self.nondimensionalize(value, role.parse()?))
    }

    pub fn dimensionalize_named(&self, value: f64, role: &str) -> Result<f64, ScalingError> {
        Ok(self.dimensionalize(value, role.parse()?))
    }
}

/// Scaled propulsion parameters consumed by the dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Vehicle {
    /// Maximum thrust in scaled force units.
    pub max_thrust: f64,
    /// Isp·ge in scaled speed units.
    pub exhaust_speed: f64,
}

impl Vehicle {
    pub fn new(consts: &PhysicalConstants, scales: &Scales) -> Self {
        Self {
            max_thrust: scales.nondimensionalize(consts.max_thrust, UnitRole::Force),
            exhaust_speed: scales.nondimensionalize(consts.isp * consts.ge, UnitRole::Speed),
        }
    }

    /// Scaled mass flow at full throttle.
    pub fn max_mass_flow(&self) -> f64 {
        self.max_thrust / self.exhaust_speed
    }
}
