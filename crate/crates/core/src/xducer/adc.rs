use serde::{Deserialize, Serialize};

use super::XducerError;

/// Flash ADC model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdcSpec {
    pub bits: u8,
    pub vfs: f64,
}

impl Default for AdcSpec {
    fn default() -> Self {
        AdcSpec { bits: 12, vfs: 5.0 }
    }
}

impl AdcSpec {
    pub fn validate(&self) -> Result<(), XducerError> {
        if !(4..=16).contains(&self.bits) {
            return Err(XducerError::Config(format!("adc bits must be in [4, 16], got {}", self.bits)));
        }
        if !(self.vfs > 0.0 && self.vfs.is_finite()) {
            return Err(XducerError::Config(format!("adc vfs must be > 0, got {}", self.vfs)));
        }
        Ok(())
    }

    pub fn levels(&self) -> u32 {
        1u32 << self.bits
    }

    pub fn max_code(&self) -> u32 {
        self.levels() - 1
    }

    pub fn lsb(&self) -> f64 {
        self.vfs / self.levels() as f64
    }
}

/// `floor(clamp(v, 0, Vfs) * 2^bits / Vfs)`, saturating at the top code.
pub fn adc_quantize(v: f64, spec: &AdcSpec) -> u32 {
    if v.is_nan() || v <= 0.0 {
        return 0;
    }
    if v >= spec.vfs {
        return spec.max_code();
    }
    let code = (v * spec.levels() as f64 / spec.vfs).floor() as u32;
    code.min(spec.max_code())
}

/// Mid-point of the code's voltage bin.
pub fn adc_decode(code: u32, spec: &AdcSpec) -> f64 {
    (code.min(spec.max_code()) as f64 + 0.5) * spec.lsb()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEN_BIT: AdcSpec = AdcSpec { bits: 10, vfs: 5.0 };

    #[test]
    fn range_ends() {
        assert_eq!(adc_quantize(0.0, &TEN_BIT), 0);
        assert_eq!(adc_quantize(5.0, &TEN_BIT), 1023);
        assert_eq!(adc_quantize(7.5, &TEN_BIT), 1023);
        assert_eq!(adc_quantize(-1.0, &TEN_BIT), 0);
        assert_eq!(adc_quantize(f64::NAN, &TEN_BIT), 0);
    }

    #[test]
    fn mid_scale() {
        // floor(2.5 * 1024 / 5)
        assert_eq!(adc_quantize(2.5, &TEN_BIT), 512);
    }

    #[test]
    fn bits_are_bounded() {
        assert!(AdcSpec { bits: 3, vfs: 5.0 }.validate().is_err());
        assert!(AdcSpec { bits: 17, vfs: 5.0 }.validate().is_err());
        assert!(AdcSpec { bits: 16, vfs: 0.0 }.validate().is_err());
        assert!(AdcSpec { bits: 16, vfs: 3.3 }.validate().is_ok());
    }
}
