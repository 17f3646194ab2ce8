//! Ground-truth environments playing the role of plant measurements.

pub mod fuelcell;
pub mod toy;

pub use fuelcell::{FcObservation, FcStackParams, FcTotals, FuelCellPlant, REACTION_ENTHALPY_KJ_PER_MOL};
pub use toy::ToyPlant;
