//! Command to velocity to thruster PWM mapping.
//!
//! A signed command `c` becomes a velocity `ν = c·α`, and each degree of
//! freedom maps it to `round(1500 + k_η·ν)` microseconds, clamped to the ESC
//! envelope.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{ActionClass, HOLD_CLASS};

#[derive(Debug, Error, PartialEq)]
pub enum ActuationError {
    #[error("unknown degree of freedom {0:?}")]
    UnknownDof(String),
    #[error("invalid actuation parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dof {
    Surge,
    Heave,
    Yaw,
    Pitch,
}

impl Dof {
    pub const ALL: [Dof; 4] = [Dof::Surge, Dof::Heave, Dof::Yaw, Dof::Pitch];

    pub fn as_str(self) -> &'static str {
        match self {
            Dof::Surge => "surge",
            Dof::Heave => "heave",
            Dof::Yaw => "yaw",
            Dof::Pitch => "pitch",
        }
    }
}

impl fmt::Display for Dof {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dof {
    type Err = ActuationError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dof::ALL
            .into_iter()
            .find(|d| d.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| ActuationError::UnknownDof(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActuationParams {
    /// Velocity per command unit.
    pub alpha: f64,
    /// Gains in µs per unit velocity, indexed like [`Dof::ALL`].
    pub gains: [f64; 4],
    pub pwm_min: u16,
    pub pwm_max: u16,
    pub neutral: u16,
    /// Constant surge command applied every tick.
    pub surge_command: i32,
}

impl Default for ActuationParams {
    fn default() -> Self {
        Self { alpha: 0.1, gains: [50.0; 4], pwm_min: 1100, pwm_max: 1900, neutral: 1500, surge_command: 0 }
    }
}

impl ActuationParams {
    pub fn validate(&self) -> Result<(), ActuationError> {
        if !(self.pwm_min < self.neutral && self.neutral < self.pwm_max) {
            return Err(ActuationError::InvalidParams(format!(
                "need pwm_min < neutral < pwm_max, got {} / {} / {}",
                self.pwm_min, self.neutral, self.pwm_max
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(ActuationError::InvalidParams(format!("alpha {} must be positive", self.alpha)));
        }
        Ok(())
    }

    pub fn gain(&self, dof: Dof) -> f64 {
        self.gains[dof as usize]
    }
}

/// `ν = c·α`.
pub fn command_to_velocity(c: i32, alpha: f64) -> f64 {
    c as f64 * alpha
}

/// `round(neutral + k_η·ν)` clamped to `[pwm_min, pwm_max]`.
pub fn velocity_to_pwm(nu: f64, dof: Dof, params: &ActuationParams) -> u16 {
    let raw = (params.neutral as f64 + params.gain(dof) * nu).round();
    raw.clamp(params.pwm_min as f64, params.pwm_max as f64) as u16
}

/// Like [`velocity_to_pwm`] but takes the degree of freedom by name.
pub fn velocity_to_pwm_named(nu: f64, dof: &str, params: &ActuationParams) -> Result<u16, ActuationError> {
    Ok(velocity_to_pwm(nu, dof.parse()?, params))
}

/// PWM values for one control tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PwmCommand {
    pub surge: u16,
    pub heave: u16,
    pub yaw: u16,
    pub pitch: u16,
}

/// Maps an action to thruster PWM. Yaw and pitch use the signed offset
/// `3 − C`; surge holds `surge_command` and heave stays neutral.
pub fn action_to_pwm(action: &ActionClass, params: &ActuationParams) -> PwmCommand {
    let cmd = |c: u8| HOLD_CLASS as i32 - c as i32;
    let pwm = |c: i32, dof| velocity_to_pwm(command_to_velocity(c, params.alpha), dof, params);
    PwmCommand {
        surge: pwm(params.surge_command, Dof::Surge),
        heave: pwm(0, Dof::Heave),
        yaw: pwm(cmd(action.c_yaw), Dof::Yaw),
        pitch: pwm(cmd(action.c_pitch), Dof::Pitch),
    }
}

/// One line of the replay protocol: `t=<step> surge=<µs> heave=<µs> yaw=<µs> pitch=<µs>`.
pub fn protocol_line(step: u64, cmd: &PwmCommand) -> String {
    format!("t={step} surge={} heave={} yaw={} pitch={}", cmd.surge, cmd.heave, cmd.yaw, cmd.pitch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn velocity_examples() {
        assert_eq!(command_to_velocity(0, 0.1), 0.0);
        assert!((command_to_velocity(3, 0.1) - 0.3).abs() < 1e-15);
        assert!((command_to_velocity(-2, 0.1) + 0.2).abs() < 1e-15);
    }

    #[test]
    fn pwm_examples() {
        let p = ActuationParams::default();
        assert_eq!(velocity_to_pwm(0.0, Dof::Yaw, &p), 1500);
        assert_eq!(velocity_to_pwm(2.0, Dof::Surge, &p), 1600);
        assert_eq!(velocity_to_pwm(20.0, Dof::Heave, &p), 1900);
        assert_eq!(velocity_to_pwm(-20.0, Dof::Heave, &p), 1100);
        assert!(velocity_to_pwm_named(1.0, "roll", &p).is_err());
    }

    #[test]
    fn hold_action_is_neutral() {
        let p = ActuationParams::default();
        let cmd = action_to_pwm(&ActionClass::hold(), &p);
        assert_eq!(protocol_line(4, &cmd), "t=4 surge=1500 heave=1500 yaw=1500 pitch=1500");
    }
}
