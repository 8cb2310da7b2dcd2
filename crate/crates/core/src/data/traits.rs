use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// A regressed plant property. The declaration order is the canonical
/// column order everywhere (model outputs, reports, tables).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trait {
    FreshWeight,
    DryWeight,
    Height,
    Diameter,
    LeafArea,
}

impl Trait {
    pub const ALL: [Trait; 5] = [
        Trait::FreshWeight,
        Trait::DryWeight,
        Trait::Height,
        Trait::Diameter,
        Trait::LeafArea,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Trait::FreshWeight => "fresh_weight",
            Trait::DryWeight => "dry_weight",
            Trait::Height => "height",
            Trait::Diameter => "diameter",
            Trait::LeafArea => "leaf_area",
        }
    }

    /// Short column heading used in report tables.
    pub fn heading(self) -> &'static str {
        match self {
            Trait::FreshWeight => "Fresh Wt",
            Trait::DryWeight => "Dry Wt",
            Trait::Height => "Height",
            Trait::Diameter => "Diameter",
            Trait::LeafArea => "Leaf Area",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Trait::FreshWeight | Trait::DryWeight => "g",
            Trait::Height | Trait::Diameter => "cm",
            Trait::LeafArea => "cm²",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Trait {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Trait {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Trait::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Trait::ALL.iter().map(|t| t.name()).collect();
                format!("unknown trait {s:?}; expected one of {}", names.join(", "))
            })
    }
}

/// Ground-truth traits of one plant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraitVector {
    /// grams
    pub fresh_weight: f64,
    /// grams
    pub dry_weight: f64,
    /// cm
    pub height: f64,
    /// cm
    pub diameter: f64,
    /// cm²
    pub leaf_area: f64,
}

impl TraitVector {
    pub fn get(&self, t: Trait) -> f64 {
        match t {
            Trait::FreshWeight => self.fresh_weight,
            Trait::DryWeight => self.dry_weight,
            Trait::Height => self.height,
            Trait::Diameter => self.diameter,
            Trait::LeafArea => self.leaf_area,
        }
    }

    pub fn select(&self, traits: &[Trait]) -> Vec<f64> {
        traits.iter().map(|&t| self.get(t)).collect()
    }

    /// Finite, non-negative, and dry weight not above fresh weight.
    pub fn validate(&self) -> Result<(), String> {
        for t in Trait::ALL {
            let v = self.get(t);
            if !v.is_finite() || v < 0.0 {
                return Err(format!("{t} = {v} must be finite and non-negative"));
            }
        }
        if self.dry_weight > self.fresh_weight {
            return Err(format!(
                "dry weight {} exceeds fresh weight {}",
                self.dry_weight, self.fresh_weight
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for t in Trait::ALL {
            assert_eq!(t.name().parse::<Trait>().unwrap(), t);
            assert_eq!(Trait::ALL[t.index()], t);
        }
        assert!("weight".parse::<Trait>().is_err());
    }

    #[test]
    fn invariants() {
        let ok = TraitVector {
            fresh_weight: 10.0,
            dry_weight: 0.5,
            height: 4.0,
            diameter: 9.0,
            leaf_area: 60.0,
        };
        assert!(ok.validate().is_ok());
        assert!(TraitVector {
            dry_weight: 11.0,
            ..ok
        }
        .validate()
        .is_err());
        assert!(TraitVector {
            height: f64::NAN,
            ..ok
        }
        .validate()
        .is_err());
        assert!(TraitVector {
            leaf_area: -1.0,
            ..ok
        }
        .validate()
        .is_err());
    }
}
