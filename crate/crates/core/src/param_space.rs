//! The seven-dimensional haptic parameter domain.
//!
//! Physical parameters live in [`HapticParams`]; the optimizer works on
//! [`ParamVector`], the same values affinely mapped onto the unit cube.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DIM: usize = 7;

/// Canonical axis order.
pub const AXIS_NAMES: [&str; DIM] = [
    "f_low", "a_low", "f_mid", "a_mid", "f_high", "a_high", "move_freq",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("component {index} = {value} is outside the unit interval")]
    OutOfCube { index: usize, value: f64 },
    #[error("{name} = {value} is outside [{min}, {max}]")]
    OutOfRange {
        name: String,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("domain must have exactly {DIM} descriptors, got {0}")]
    WrongArity(usize),
    #[error("descriptor {index} is {found:?}, expected {expected:?}")]
    WrongOrder {
        index: usize,
        found: String,
        expected: &'static str,
    },
    #[error("descriptor {name}: min {min} must be below max {max}")]
    EmptyRange { name: String, min: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDescriptor {
    pub name: String,
    pub unit: String,
    pub min: f64,
    pub max: f64,
}

impl ParamDescriptor {
    fn new(name: &str, unit: &str, min: f64, max: f64) -> Self {
        Self {
            name: name.to_owned(),
            unit: unit.to_owned(),
            min,
            max,
        }
    }

    /// `min + v (max - min)`, written so that 0 and 1 land exactly on the bounds.
    pub fn lerp(&self, v: f64) -> f64 {
        if v >= 1.0 {
            self.max
        } else {
            self.min + v * (self.max - self.min)
        }
    }

    pub fn unlerp(&self, x: f64) -> f64 {
        (x - self.min) / (self.max - self.min)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.min && x <= self.max
    }
}

/// Ordered descriptors for the seven axes. Serializes as a JSON array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ParamDescriptor>", into = "Vec<ParamDescriptor>")]
pub struct ParamDomain {
    descriptors: [ParamDescriptor; DIM],
}

impl TryFrom<Vec<ParamDescriptor>> for ParamDomain {
    type Error = ParamError;

    fn try_from(descriptors: Vec<ParamDescriptor>) -> Result<Self, Self::Error> {
        let n = descriptors.len();
        let descriptors: [ParamDescriptor; DIM] = descriptors
            .try_into()
            .map_err(|_| ParamError::WrongArity(n))?;
        for (index, (d, expected)) in descriptors.iter().zip(AXIS_NAMES).enumerate() {
            if d.name != expected {
                return Err(ParamError::WrongOrder {
                    index,
                    found: d.name.clone(),
                    expected,
                });
            }
            // also rejects NaN bounds
            if !(d.min < d.max) {
                return Err(ParamError::EmptyRange {
                    name: d.name.clone(),
                    min: d.min,
                    max: d.max,
                });
            }
        }
        Ok(Self { descriptors })
    }
}

impl From<ParamDomain> for Vec<ParamDescriptor> {
    fn from(d: ParamDomain) -> Self {
        d.descriptors.into()
    }
}

impl Default for ParamDomain {
    fn default() -> Self {
        default_domain()
    }
}

/// The stock ranges: three frequency bands, unit amplitudes, 0.2-1 Hz sway.
pub fn default_domain() -> ParamDomain {
    ParamDomain {
        descriptors: [
            ParamDescriptor::new("f_low", "Hz", 10.0, 30.0),
            ParamDescriptor::new("a_low", "", 0.0, 1.0),
            ParamDescriptor::new("f_mid", "Hz", 30.0, 100.0),
            ParamDescriptor::new("a_mid", "", 0.0, 1.0),
            ParamDescriptor::new("f_high", "Hz", 100.0, 300.0),
            ParamDescriptor::new("a_high", "", 0.0, 1.0),
            ParamDescriptor::new("move_freq", "Hz", 0.2, 1.0),
        ],
    }
}

impl ParamDomain {
    pub fn descriptors(&self) -> &[ParamDescriptor; DIM] {
        &self.descriptors
    }

    pub fn descriptor(&self, index: usize) -> &ParamDescriptor {
        &self.descriptors[index]
    }

    pub fn to_physical(&self, v: &ParamVector) -> HapticParams {
        let mut out = [0.0; DIM];
        for (o, (d, &x)) in out.iter_mut().zip(self.descriptors.iter().zip(v.as_array())) {
            *o = d.lerp(x);
        }
        HapticParams::from_array(out)
    }

    pub fn to_normalized(&self, p: &HapticParams) -> Result<ParamVector, ParamError> {
        let raw = p.to_array();
        let mut out = [0.0; DIM];
        for (i, d) in self.descriptors.iter().enumerate() {
            if !d.contains(raw[i]) {
                return Err(ParamError::OutOfRange {
                    name: d.name.clone(),
                    value: raw[i],
                    min: d.min,
                    max: d.max,
                });
            }
            out[i] = d.unlerp(raw[i]).clamp(0.0, 1.0);
        }
        Ok(ParamVector(out))
    }

    pub fn validate(&self, p: &HapticParams) -> Result<(), ParamError> {
        self.to_normalized(p).map(|_| ())
    }
}

/// Free-function form of [`ParamDomain::to_physical`] that also accepts raw arrays.
pub fn to_physical(domain: &ParamDomain, v: &[f64; DIM]) -> Result<HapticParams, ParamError> {
    Ok(domain.to_physical(&ParamVector::new(*v)?))
}

pub fn to_normalized(domain: &ParamDomain, p: &HapticParams) -> Result<ParamVector, ParamError> {
    domain.to_normalized(p)
}

/// A point of the closed unit 7-cube.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; DIM]", into = "[f64; DIM]")]
pub struct ParamVector([f64; DIM]);

impl TryFrom<[f64; DIM]> for ParamVector {
    type Error = ParamError;
    fn try_from(values: [f64; DIM]) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<ParamVector> for [f64; DIM] {
    fn from(v: ParamVector) -> Self {
        v.0
    }
}

impl ParamVector {
    pub fn new(values: [f64; DIM]) -> Result<Self, ParamError> {
        for (index, &value) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(ParamError::OutOfCube { index, value });
            }
        }
        Ok(Self(values))
    }

    /// Clamps each component into [0, 1]. NaN maps to 0.
    pub fn clamped(values: [f64; DIM]) -> Self {
        Self(values.map(|x| if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) }))
    }

    pub fn splat(x: f64) -> Result<Self, ParamError> {
        Self::new([x; DIM])
    }

    pub fn center() -> Self {
        Self([0.5; DIM])
    }

    pub fn as_array(&self) -> &[f64; DIM] {
        &self.0
    }

    pub fn get(&self, index: usize) -> f64 {
        self.0[index]
    }

    pub fn with(&self, index: usize, value: f64) -> Result<Self, ParamError> {
        let mut values = self.0;
        values[index] = value;
        Self::new(values)
    }

    pub fn distance(&self, other: &ParamVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// `(1 - t) self + t other`; stays in the cube for t in [0, 1].
    pub fn lerp(&self, other: &ParamVector, t: f64) -> ParamVector {
        let mut out = [0.0; DIM];
        for (i, o) in out.iter_mut().enumerate() {
            *o = (1.0 - t) * self.0[i] + t * other.0[i];
        }
        ParamVector::clamped(out)
    }
}

/// The seven physical parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HapticParams {
    pub f_low_hz: f64,
    pub a_low: f64,
    pub f_mid_hz: f64,
    pub a_mid: f64,
    pub f_high_hz: f64,
    pub a_high: f64,
    pub move_freq_hz: f64,
}

impl HapticParams {
    /// Values in canonical axis order.
    pub fn from_array(a: [f64; DIM]) -> Self {
        Self {
            f_low_hz: a[0],
            a_low: a[1],
            f_mid_hz: a[2],
            a_mid: a[3],
            f_high_hz: a[4],
            a_high: a[5],
            move_freq_hz: a[6],
        }
    }

    pub fn to_array(&self) -> [f64; DIM] {
        [
            self.f_low_hz,
            self.a_low,
            self.f_mid_hz,
            self.a_mid,
            self.f_high_hz,
            self.a_high,
            self.move_freq_hz,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn default_descriptors() {
        let d = default_domain();
        assert_eq!(d.descriptors().len(), 7);
        assert_eq!(d.descriptor(0), &ParamDescriptor::new("f_low", "Hz", 10.0, 30.0));
        assert_eq!(d.descriptor(6), &ParamDescriptor::new("move_freq", "Hz", 0.2, 1.0));
        assert_eq!((d.descriptor(2).min, d.descriptor(2).max), (30.0, 100.0));
        assert_eq!((d.descriptor(4).min, d.descriptor(4).max), (100.0, 300.0));
    }

    #[test]
    fn physical_examples() {
        let d = default_domain();
        let lo = d.to_physical(&ParamVector::splat(0.0).unwrap());
        assert_eq!(lo.to_array(), [10.0, 0.0, 30.0, 0.0, 100.0, 0.0, 0.2]);

        let mid = d.to_physical(&ParamVector::splat(0.5).unwrap()).to_array();
        let want = [20.0, 0.5, 65.0, 0.5, 200.0, 0.5, 0.6];
        for (a, b) in mid.iter().zip(want) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }

        let p = d.to_physical(&ParamVector::new([0.25, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap());
        assert_eq!(p.f_low_hz, 15.0);
        assert_eq!(p.a_low, 1.0);
    }

    #[test]
    fn normalized_examples() {
        let d = default_domain();
        let p = HapticParams::from_array([10.0, 0.0, 30.0, 0.0, 100.0, 0.0, 0.2]);
        assert_eq!(d.to_normalized(&p).unwrap(), ParamVector::splat(0.0).unwrap());

        let mut p = d.to_physical(&ParamVector::center());
        p.f_low_hz = 25.0;
        assert_eq!(d.to_normalized(&p).unwrap().get(0), 0.75);
    }

    #[test]
    fn rejects_out_of_bounds() {
        let d = default_domain();
        assert!(matches!(
            to_physical(&d, &[0.5, 0.5, 1.2, 0.5, 0.5, 0.5, 0.5]),
            Err(ParamError::OutOfCube { index: 2, .. })
        ));
        assert!(ParamVector::new([f64::NAN; 7]).is_err());
        let mut p = d.to_physical(&ParamVector::center());
        p.f_high_hz = 301.0;
        assert!(matches!(
            d.to_normalized(&p),
            Err(ParamError::OutOfRange { .. })
        ));
    }

    #[test]
    fn domain_json_is_descriptor_array() {
        let d = default_domain();
        let json = serde_json::to_value(&d).unwrap();
        assert_eq!(json.as_array().unwrap().len(), 7);
        assert_eq!(json[6]["name"], "move_freq");
        assert_eq!(json[6]["min"], 0.2);
        let back: ParamDomain = serde_json::from_value(json).unwrap();
        assert_eq!(back, d);

        let bad = serde_json::json!([{"name": "f_low", "unit": "Hz", "min": 1.0, "max": 0.0}]);
        assert!(serde_json::from_value::<ParamDomain>(bad).is_err());
    }

    #[test]
    fn boundary_exactness() {
        let d = default_domain();
        let hi = d.to_physical(&ParamVector::splat(1.0).unwrap()).to_array();
        for (i, desc) in d.descriptors().iter().enumerate() {
            assert_eq!(hi[i], desc.max);
        }
    }

    #[test]
    fn roundtrip_1000_points() {
        use rand::{Rng, SeedableRng};
        let d = default_domain();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let v = ParamVector::new(std::array::from_fn(|_| rng.random::<f64>())).unwrap();
            let back = d.to_normalized(&d.to_physical(&v)).unwrap();
            for i in 0..DIM {
                assert!((back.get(i) - v.get(i)).abs() <= 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn to_physical_strictly_increasing(
            i in 0usize..DIM,
            a in 0.0f64..1.0,
            b in 0.0f64..1.0,
        ) {
            prop_assume!((a - b).abs() > 1e-9);
            let d = default_domain();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let base = ParamVector::center();
            let plo = d.to_physical(&base.with(i, lo).unwrap()).to_array()[i];
            let phi = d.to_physical(&base.with(i, hi).unwrap()).to_array()[i];
            prop_assert!(plo < phi);
        }
    }
}
