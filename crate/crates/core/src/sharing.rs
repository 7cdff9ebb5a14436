//! Additive secret sharing over Z_{2^Λ} and Z₂.

use crate::bits::BitVec;
use crate::error::Result;
use crate::ring::{Ring, RingVec};
use rand::Rng;

/// Computing-party identity. Public constants are carried by party A
/// (the "asymmetric bit" convention).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    A,
    B,
}

impl Role {
    pub fn other(self) -> Role {
        match self {
            Role::A => Role::B,
            Role::B => Role::A,
        }
    }

    /// 1 for party A, 0 for party B: a valid sharing of the public value 1.
    #[inline]
    pub fn asym(self) -> u128 {
        match self {
            Role::A => 1,
            Role::B => 0,
        }
    }

    #[inline]
    pub fn is_a(self) -> bool {
        matches!(self, Role::A)
    }

    pub fn index(self) -> usize {
        match self {
            Role::A => 0,
            Role::B => 1,
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Role::A => write!(f, "A"),
            Role::B => write!(f, "B"),
        }
    }
}

/// One party's share of a ring element, tagged with ring and party.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Share {
    pub value: u128,
    pub ring: Ring,
    pub party: Role,
}

impl Share {
    pub fn new(value: u128, ring: Ring, party: Role) -> Share {
        Share {
            value: ring.reduce(value),
            ring,
            party,
        }
    }
}

/// Combines the two shares: z = z_A + z_B mod 2^Λ.
pub fn reveal(a: &Share, b: &Share) -> Result<u128> {
    a.ring.check(b.ring)?;
    debug_assert!(a.party != b.party, "reveal needs one share per party");
    Ok(a.ring.add(a.value, b.value))
}

pub fn reconstruct(ring: Ring, a: u128, b: u128) -> u128 {
    ring.add(a, b)
}

pub fn reconstruct_vec(a: &RingVec, b: &RingVec) -> RingVec {
    a.add(b)
}

pub fn reconstruct_bits(a: &BitVec, b: &BitVec) -> BitVec {
    a.xor(b)
}

/// Data-owner sharing: with an unused random mask r, the owner keeps r and
/// sends c = x − r; shares are (r, c).
pub fn share_input(ring: Ring, x: u128, mask: u128) -> (u128, u128) {
    (ring.reduce(mask), ring.sub(x, mask))
}

/// TI-side splitting of a plaintext ring element into two uniform shares.
pub fn split_ring(ring: Ring, value: u128, rng: &mut impl Rng) -> (u128, u128) {
    let a = ring.reduce(rng.gen::<u128>());
    (a, ring.sub(value, a))
}

pub fn split_ring_vec(v: &RingVec, rng: &mut impl Rng) -> (RingVec, RingVec) {
    let ring = v.ring();
    let a = RingVec::from_fn(ring, v.len(), |_| rng.gen::<u128>());
    let b = v.sub(&a);
    (a, b)
}

pub fn split_bits(v: &BitVec, rng: &mut impl Rng) -> (BitVec, BitVec) {
    let a = BitVec::from_fn(v.len(), |_| rng.gen::<bool>());
    let b = v.xor(&a);
    (a, b)
}

/// Share of a public constant: A carries the value, B carries zero.
pub fn public_share(ring: Ring, value: u128, role: Role) -> u128 {
    match role {
        Role::A => ring.reduce(value),
        Role::B => 0,
    }
}

pub fn public_share_vec(ring: Ring, values: &[u128], role: Role) -> RingVec {
    match role {
        Role::A => RingVec::new(ring, values.to_vec()),
        Role::B => RingVec::zeros(ring, values.len()),
    }
}
