//! Two's-complement fixed-point encoding into Z_{2^λ} and local truncation.
//!
//! Q(x) = ⌊2^a·x⌋ for x ≥ 0 and 2^λ − ⌊2^a·|x|⌋ for x < 0, with `a`
//! fractional and `b` integer bits. Magnitudes round toward zero.

use crate::error::{Error, Result};
use crate::ring::Ring;
use crate::sharing::Role;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Codec {
    lambda: u32,
    frac: u32,
    int: u32,
}

impl Codec {
    pub fn new(lambda: u32, frac: u32, int: u32) -> Result<Codec> {
        if frac < 1 || int < 1 {
            return Err(Error::config("codec needs a ≥ 1 and b ≥ 1"));
        }
        if lambda < 2 * (frac + int) {
            return Err(Error::config(format!(
                "codec needs λ ≥ 2(a+b): λ={lambda}, a={frac}, b={int}"
            )));
        }
        if lambda > 128 {
            return Err(Error::config(format!("λ={lambda} exceeds 128")));
        }
        Ok(Codec { lambda, frac, int })
    }

    /// The paper's default parameters: λ=64, a=10, b=22.
    pub fn default64() -> Codec {
        Codec {
            lambda: 64,
            frac: 10,
            int: 22,
        }
    }

    pub fn lambda(&self) -> u32 {
        self.lambda
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac
    }

    pub fn int_bits(&self) -> u32 {
        self.int
    }

    pub fn ring(&self) -> Ring {
        Ring::new(self.lambda)
    }

    /// Lowest bit position guaranteed equal to the MSB for values confined
    /// to the injected fixed-point subring.
    pub fn alpha(&self) -> u32 {
        self.frac + self.int + 1
    }

    pub fn encode(&self, x: f64) -> Result<u128> {
        if !x.is_finite() || x.abs() >= (1u64 << self.int) as f64 {
            return Err(Error::Range {
                value: x,
                int_bits: self.int,
            });
        }
        let scaled = (x.abs() * (1u64 << self.frac) as f64).floor() as u128;
        let ring = self.ring();
        if x < 0.0 {
            Ok(ring.reduce(ring.neg(scaled)))
        } else {
            Ok(ring.reduce(scaled))
        }
    }

    pub fn decode(&self, v: u128) -> f64 {
        let s = self.ring().signed(self.ring().reduce(v));
        s as f64 / (1u64 << self.frac) as f64
    }

    /// ⌊2^a · num/den⌋ for a public ratio, e.g. the i/p threshold constants.
    pub fn encode_public_ratio(&self, num: u64, den: u64) -> u128 {
        assert!(den > 0);
        (((num as u128) << self.frac) / den as u128) & self.ring().mask()
    }

    /// π_trunc: local probabilistic truncation by `a` bits of one share.
    ///
    /// Reconstruction equals the arithmetic shift of the secret by `a` bits
    /// up to ±1 in the LSB, except with probability ~2^-(λ-(a+b)) when the
    /// share sum wraps.
    pub fn trunc_share(&self, share: u128, role: Role) -> u128 {
        let ring = self.ring();
        match role {
            Role::A => ring.reduce(share) >> self.frac,
            Role::B => ring.neg(ring.neg(share) >> self.frac),
        }
    }

    /// Largest scaled magnitude ingest may accept so that pairwise
    /// differences stay inside the injected subring for α = a+b+1.
    pub fn max_input_magnitude(&self) -> f64 {
        (1u64 << (self.int - 1)) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sharing;
    use rand::RngCore;

    #[test]
    fn encode_spec_values() {
        let c = Codec::default64();
        assert_eq!(c.encode(1.5).unwrap(), 1536);
        assert_eq!(c.encode(0.0).unwrap(), 0);
        assert_eq!(c.encode(-0.5).unwrap(), (u64::MAX as u128 + 1) - 512);
    }

    #[test]
    fn decode_spec_values() {
        let c = Codec::default64();
        assert_eq!(c.decode(1536), 1.5);
        assert_eq!(c.decode((u64::MAX as u128 + 1) - 512), -0.5);
        assert_eq!(c.decode(1), 0.0009765625);
    }

    #[test]
    fn out_of_range_rejected() {
        let c = Codec::default64();
        assert!(c.encode(4194304.0).is_err());
        assert!(c.encode(f64::NAN).is_err());
        assert!(c.encode(-4194305.0).is_err());
    }

    #[test]
    fn roundtrip_within_lsb() {
        let c = Codec::default64();
        let mut x = -2000.0;
        while x < 2000.0 {
            let err = (c.decode(c.encode(x).unwrap()) - x).abs();
            assert!(err <= 1.0 / 1024.0, "x={x} err={err}");
            x += 17.7301;
        }
    }

    #[test]
    fn negative_epsilon_encodes_to_zero() {
        let c = Codec::default64();
        assert_eq!(c.encode(-0.0001).unwrap(), 0);
    }

    #[test]
    fn addition_of_encodings_is_exact() {
        let c = Codec::default64();
        let ring = c.ring();
        // sums of encodings equal encodings of sums for representable sums
        for (x, y) in [(1.5, 2.25), (-3.5, 1.25), (100.0, -250.75)] {
            let got = ring.add(c.encode(x).unwrap(), c.encode(y).unwrap());
            assert_eq!(got, c.encode(x + y).unwrap());
        }
    }

    #[test]
    fn trunc_product_within_bound() {
        let c = Codec::default64();
        let ring = c.ring();
        let mut rng = rand::thread_rng();
        let mut violations = 0u32;
        let trials = 100_000;
        for i in 0..trials {
            let x = ((rng.next_u32() % 120_000) as f64 - 60_000.0) / 1000.0;
            let y = ((rng.next_u32() % 120_000) as f64 - 60_000.0) / 1000.0;
            let prod = ring.mul(c.encode(x).unwrap(), c.encode(y).unwrap());
            let (sa, sb) = sharing::split_ring(ring, prod, &mut rng);
            let ta = c.trunc_share(sa, Role::A);
            let tb = c.trunc_share(sb, Role::B);
            let got = c.decode(ring.add(ta, tb));
            let bound = (x.abs() + y.abs() + 2.0) / 1024.0;
            if (got - x * y).abs() > bound {
                violations += 1;
            }
            if i == 0 {
                // spec example: 2.0 * 3.0 -> 6.0 ± 1 LSB
                let p = ring.mul(c.encode(2.0).unwrap(), c.encode(3.0).unwrap());
                assert_eq!(p, 6_291_456);
                let (a, b) = sharing::split_ring(ring, p, &mut rng);
                let t = ring.add(c.trunc_share(a, Role::A), c.trunc_share(b, Role::B));
                assert!((ring.signed(t) - 6144).abs() <= 1);
            }
        }
        // 10x the 2^-(λ-(a+b)) bound over 1e5 trials is << 1
        assert_eq!(violations, 0, "{violations} violations in {trials}");
    }
}
