use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Appearance class of the surface a feature was extracted from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RegionClass {
    Clean,
    Shadow,
    Reflection,
    TextureHigh,
}

impl RegionClass {
    pub const ALL: [RegionClass; 4] = [
        RegionClass::Clean,
        RegionClass::Shadow,
        RegionClass::Reflection,
        RegionClass::TextureHigh,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            RegionClass::Clean => "clean",
            RegionClass::Shadow => "shadow",
            RegionClass::Reflection => "reflection",
            RegionClass::TextureHigh => "texture-high",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| invalid(format!("unknown region class '{s}'")))
    }
}

/// Layout of the default context vector.
pub mod layout {
    /// One-hot region class occupies `0..4`.
    pub const REGION: usize = 0;
    pub const TEXTURE: usize = 4;
    pub const BRIGHTNESS: usize = 5;
    pub const U_NORM: usize = 6;
    pub const V_NORM: usize = 7;
    pub const INV_DEPTH: usize = 8;
    pub const DIM: usize = 9;
}

/// Fixed-length description of the local context of an observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContextFeatures(Vec<f64>);

impl ContextFeatures {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("context vector".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("context entry {i} is not finite")));
        }
        Ok(Self(values))
    }

    /// Builds a context vector in the default [`layout`].
    pub fn from_parts(
        region: RegionClass,
        texture: f64,
        brightness: f64,
        u_norm: f64,
        v_norm: f64,
        inv_depth: f64,
    ) -> Result<Self> {
        let mut v = vec![0.0; layout::DIM];
        v[layout::REGION + region.index()] = 1.0;
        v[layout::TEXTURE] = texture;
        v[layout::BRIGHTNESS] = brightness;
        v[layout::U_NORM] = u_norm;
        v[layout::V_NORM] = v_norm;
        v[layout::INV_DEPTH] = inv_depth;
        Self::new(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Region class encoded in the one-hot block, if the vector uses the default layout.
    pub fn region(&self) -> Option<RegionClass> {
        if self.0.len() != layout::DIM {
            return None;
        }
        let block = &self.0[layout::REGION..layout::REGION + 4];
        block
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .and_then(|(i, _)| RegionClass::from_index(i))
    }

    /// Copy with the inverse-depth entry replaced.
    pub fn with_inv_depth(&self, inv_depth: f64) -> Self {
        let mut v = self.0.clone();
        if v.len() > layout::INV_DEPTH {
            v[layout::INV_DEPTH] = inv_depth;
        }
        Self(v)
    }
}

impl std::ops::Index<usize> for ContextFeatures {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn region_round_trip() {
        for c in RegionClass::ALL {
            let ctx = ContextFeatures::from_parts(c, 0.5, 0.5, 0.1, 0.2, 0.3).unwrap();
            assert_eq!(ctx.region(), Some(c));
            assert_eq!(ctx.dim(), layout::DIM);
            assert_eq!(RegionClass::parse(c.name()).unwrap(), c);
        }
    }

    #[test]
    fn non_finite_rejected() {
        assert!(ContextFeatures::new(vec![0.0, f64::NAN]).is_err());
        assert!(ContextFeatures::new(vec![]).is_err());
    }
}
