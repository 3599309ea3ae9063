//! Built-in parameter sets.
//!
//! Two complete cars are provided: a rear-wheel-drive sports car with
//! distinct front/rear lateral tire curves, and the stiffer sedan used for
//! multibody cross-validation. Values are decimal literals so configuration
//! round-trips reproduce them bit-for-bit.

use crate::tire::{TireParams, TirePair};
use crate::vehicle::VehicleParams;

/// Front and rear magic-formula coefficient sets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TireParamsPair {
    pub front: TireParams,
    pub rear: TireParams,
}

/// A complete named car: chassis parameters plus both tire coefficient sets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CarPreset {
    pub vehicle: VehicleParams,
    pub tires_params: TireParamsPair,
}

impl CarPreset {
    /// Magic-formula tire pair.
    pub fn tires(&self) -> TirePair {
        TirePair::pacejka(self.tires_params.front, self.tires_params.rear)
    }

    /// Linear tire pair tangent to the magic-formula curves at zero slip.
    pub fn linear_tires(&self) -> TirePair {
        TirePair::linearized(&self.tires_params.front, &self.tires_params.rear)
    }
}

/// Sports car. The front lateral curve is stiffer than the rear one
/// (b_y 12.848 vs 8.822), which is what makes the car oversteer slightly at
/// low lateral acceleration.
pub fn sports() -> CarPreset {
    let shared_loss = |p: TireParams| p;
    let rear = shared_loss(TireParams {
        d_x: 1.688,
        c_x: 1.65,
        b_x: 8.22,
        e_x: -10.0,
        d_y: 1.688,
        c_y: 1.79,
        b_y: 8.822,
        e_y: -2.02,
        c_xb: 1.1231,
        r_bx1: 13.476,
        r_bx2: 11.354,
        c_yk: 1.0533,
        r_by1: 7.7856,
        r_by2: 8.1697,
    });
    let front = TireParams { b_y: 12.848, e_y: -1.206, ..rear };
    CarPreset {
        vehicle: VehicleParams {
            m: 1480.0,
            a: 1.421,
            b: 1.029,
            h: 0.42,
            i_zz: 1950.0,
            i_xz: -50.0,
            i_yy: 1730.0,
            g: 9.81,
        },
        tires_params: TireParamsPair { front, rear },
    }
}

/// Sedan fitted against a multibody reference; identical tires on both
/// axles.
pub fn adams() -> CarPreset {
    let both = TireParams {
        d_x: 1.48,
        c_x: 1.37,
        b_x: 18.22,
        e_x: -0.46,
        d_y: 1.22,
        c_y: 1.25,
        b_y: 17.8,
        e_y: 0.02,
        c_xb: 1.1231,
        r_bx1: 13.476,
        r_bx2: 11.354,
        c_yk: 1.0533,
        r_by1: 7.7856,
        r_by2: 8.1697,
    };
    CarPreset {
        vehicle: VehicleParams {
            m: 1528.68,
            a: 1.48,
            b: 1.08,
            h: 0.43,
            i_zz: 6022.36,
            i_xz: -1.91,
            i_yy: 6129.12,
            g: 9.81,
        },
        tires_params: TireParamsPair { front: both, rear: both },
    }
}

/// Looks a preset up by its configuration name.
pub fn by_name(name: &str) -> Option<CarPreset> {
    match name {
        "sports" => Some(sports()),
        "adams" => Some(adams()),
        _ => None,
    }
}
