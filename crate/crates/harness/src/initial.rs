//! Initial data families.

use landau_core::grid::{gaussian, maxwellian, GridSpec, ScalarField};
use landau_core::inequalities::point_pair;
use landau_core::solver::normalize_initial;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    Maxwellian,
    Gaussian {
        #[serde(default)]
        u: [f64; 3],
        temperature: f64,
    },
    /// Two Gaussians at `+-u e_1`.
    Bimodal { u: f64, temperature: f64 },
    /// A Maxwellian with a fraction `delta` of the mass moved into a
    /// centred Gaussian of standard deviation `width`.
    TallBump { delta: f64, width: f64 },
    /// `(1 - |v|^2 / r^2)_+^2`
    CompactBump { radius: f64 },
    /// Half the mass in each of the two cells nearest `+-sqrt(d) e_1`.
    PointPair,
}

impl InitialData {
    /// Samples the datum and normalises it to unit mass, zero momentum and
    /// unit temperature. The point pair is already in that form up to the
    /// grid's energy and is left untouched.
    pub fn build(&self, spec: GridSpec) -> Result<ScalarField> {
        let raw = match *self {
            Self::Maxwellian => maxwellian(spec),
            Self::Gaussian { u, temperature } => {
                positive("temperature", temperature)?;
                gaussian(spec, &u[..spec.dim()], temperature, 1.0)
            }
            Self::Bimodal { u, temperature } => {
                positive("temperature", temperature)?;
                let mut e = vec![0.0; spec.dim()];
                e[0] = u;
                let a = gaussian(spec, &e, temperature, 0.5);
                e[0] = -u;
                a.add(&gaussian(spec, &e, temperature, 0.5))?
            }
            Self::TallBump { delta, width: w } => {
                if !(delta > 0.0 && delta < 1.0) {
                    return Err(HarnessError::Config(format!("tall_bump delta {delta} not in (0, 1)")));
                }
                positive("width", w)?;
                let zero = vec![0.0; spec.dim()];
                maxwellian(spec).scale(1.0 - delta).add(&gaussian(spec, &zero, w * w, delta))?
            }
            Self::CompactBump { radius } => {
                positive("radius", radius)?;
                ScalarField::from_fn(spec, |v| {
                    let r2: f64 = v.iter().map(|x| x * x).sum::<f64>() / (radius * radius);
                    (1.0 - r2).max(0.0).powi(2)
                })?
            }
            Self::PointPair => return Ok(point_pair(spec)?.0),
        };
        Ok(normalize_initial(&raw)?)
    }

    pub fn label(&self) -> String {
        match self {
            Self::Maxwellian => "maxwellian".into(),
            Self::Gaussian { .. } => "gaussian".into(),
            Self::Bimodal { .. } => "bimodal".into(),
            Self::TallBump { .. } => "tall_bump".into(),
            Self::CompactBump { .. } => "compact_bump".into(),
            Self::PointPair => "point_pair".into(),
        }
    }
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(HarnessError::Config(format!("{name} must be positive, got {x}")))
    }
}
