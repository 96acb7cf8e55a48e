pub mod governor;
pub mod lift;
pub mod moas;
pub mod plant;
pub mod scenario;
pub mod sparse;
pub mod spectral;
pub mod teleop;
pub mod trig;
pub mod vis;
